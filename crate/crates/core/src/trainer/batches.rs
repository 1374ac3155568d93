//! Sample selection per training setup and epoch batch plans.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{Setup, TrainConfig};
use crate::augment::{mask_batch, mask_feature, MaskMode, MaskSpec};
use crate::corpus::{read_wav, Cluster, Label, Manifest, ManifestEntry, Source};
use crate::error::{KwsError, Result};
use crate::frontend::{cut_segment, FeatureMatrix, FeatureSegment, Featurizer, N_MELS, SEGMENT_FRAMES};
use crate::nn::Tensor;
use crate::seed;

/// Features kept for one manifest entry.
#[derive(Debug, Clone)]
enum Stored {
    /// Cut at the entry's onset.
    Segment(FeatureSegment),
    /// No onset: a 121-frame crop is drawn every epoch.
    Full(FeatureMatrix),
}

/// Which entry an epoch slot refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SampleRef {
    Entry(usize),
    /// Masked variant `variant` of positive entry `entry`; always negative.
    Masked { entry: usize, variant: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannedSample {
    pub sample: SampleRef,
    pub label: Label,
    pub cluster: Cluster,
}

/// A materialized training batch.
#[derive(Debug, Clone)]
pub struct ClusterBatch {
    /// batch × 1 × 121 × 80
    pub segments: Tensor,
    pub labels: Vec<usize>,
    pub clusters: Vec<Cluster>,
    pub samples: Vec<SampleRef>,
}

impl ClusterBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, cluster: Cluster) -> usize {
        self.clusters.iter().filter(|&&c| c == cluster).count()
    }
}

/// The featurized entries a setup trains on.
pub struct TrainingSet {
    setup: Setup,
    entries: Vec<ManifestEntry>,
    paths: Vec<PathBuf>,
    stored: Vec<Stored>,
    sample_rate: u32,
}

fn eligible(setup: Setup, e: &ManifestEntry) -> bool {
    match (e.cluster, e.source) {
        (Cluster::RealPos, _) => true,
        (Cluster::RealNeg, Source::Masked) | (Cluster::SyntNeg, Source::Masked) => false,
        (Cluster::RealNeg, _) => true,
        (Cluster::SyntNeg, Source::Confusion) => setup.uses_confusion(),
        (Cluster::SyntNeg, _) => setup.uses_synthetic_negatives(),
    }
}

impl TrainingSet {
    /// Selects the setup's entries and featurizes them in parallel.
    pub fn load(manifest: &Manifest, setup: Setup) -> Result<Self> {
        let entries: Vec<ManifestEntry> = manifest
            .entries
            .iter()
            .filter(|e| eligible(setup, e))
            .cloned()
            .collect();
        let has = |f: &dyn Fn(&ManifestEntry) -> bool| entries.iter().any(f);
        let mut missing = Vec::new();
        if !has(&|e| e.cluster == Cluster::RealPos) {
            missing.push("real-pos");
        }
        if !has(&|e| e.cluster == Cluster::RealNeg) {
            missing.push("real-neg");
        }
        if setup.uses_confusion() && !has(&|e| e.source == Source::Confusion) {
            missing.push("synt-neg confusion words");
        }
        if setup.uses_synthetic_negatives()
            && !has(&|e| e.cluster == Cluster::SyntNeg && e.source != Source::Confusion)
        {
            missing.push("synt-neg fillers");
        }
        if !missing.is_empty() {
            return Err(KwsError::invalid(format!(
                "setup {setup} needs {} but the manifest has none",
                missing.join(", ")
            )));
        }
        let paths: Vec<PathBuf> = entries.iter().map(|e| manifest.resolve(e)).collect();
        let first = read_wav(&paths[0])?;
        let featurizer = Featurizer::new(first.sample_rate())?;
        let stored = entries
            .par_iter()
            .zip(&paths)
            .map(|(e, p)| {
                let buf = read_wav(p)?;
                if buf.sample_rate() != first.sample_rate() {
                    return Err(KwsError::invalid(format!(
                        "{}: sample rate {} differs from {}",
                        e.utterance_id,
                        buf.sample_rate(),
                        first.sample_rate()
                    )));
                }
                let feat = featurizer.featurize(&buf)?;
                match e.onset_frame {
                    Some(onset) => cut_segment(&feat, onset)
                        .map(Stored::Segment)
                        .map_err(|err| KwsError::invalid(format!("{}: {err}", e.utterance_id))),
                    None => Ok(Stored::Full(feat)),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            setup,
            entries,
            paths,
            stored,
            sample_rate: first.sample_rate(),
        })
    }

    pub fn setup(&self) -> Setup {
        self.setup
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.entries.len()).filter(|&i| self.entries[i].label.is_positive())
    }

    /// Every sample one epoch must visit, in manifest order.
    pub fn epoch_samples(&self, mask: &MaskSpec) -> Vec<PlannedSample> {
        let mut out: Vec<PlannedSample> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| PlannedSample {
                sample: SampleRef::Entry(i),
                label: e.label,
                cluster: e.cluster,
            })
            .collect();
        if self.setup == Setup::Mask {
            for entry in self.positives() {
                for variant in 0..mask.n_variants {
                    out.push(PlannedSample {
                        sample: SampleRef::Masked { entry, variant },
                        label: Label::Negative,
                        cluster: Cluster::RealNeg,
                    });
                }
            }
        }
        out
    }

    /// Batches for one epoch. Without CORAL: a shuffled pass over every
    /// sample, topped up with positives drawn with replacement until they
    /// make up `min_pos_fraction`. With CORAL: stratified batches with a
    /// fixed per-cluster quota; smaller clusters are cycled so that every
    /// sample of the largest cluster (relative to its quota) is seen once.
    pub fn plan_epoch(&self, config: &TrainConfig, epoch: usize) -> Result<Vec<Vec<PlannedSample>>> {
        let mut rng = seed::rng(config.seed, "epoch-plan", &[epoch as u64]);
        let mut samples = self.epoch_samples(&config.mask);
        if self.setup.uses_coral() {
            let quota = config.cluster_quota();
            let mut pools: Vec<Vec<PlannedSample>> = Cluster::ALL
                .iter()
                .map(|&c| samples.iter().filter(|s| s.cluster == c).copied().collect())
                .collect();
            for (pool, c) in pools.iter().zip(Cluster::ALL) {
                if pool.len() < 2 {
                    return Err(KwsError::invalid(format!(
                        "CORAL needs at least 2 samples of cluster {c}, found {}",
                        pool.len()
                    )));
                }
            }
            let n_batches = pools
                .iter()
                .zip(quota)
                .map(|(p, q)| p.len().div_ceil(q))
                .max()
                .unwrap_or(0);
            let mut cursors = [0usize; 3];
            for pool in &mut pools {
                pool.shuffle(&mut rng);
            }
            let mut batches = Vec::with_capacity(n_batches);
            for _ in 0..n_batches {
                let mut batch = Vec::with_capacity(quota.iter().sum());
                for k in 0..3 {
                    for _ in 0..quota[k] {
                        if cursors[k] == pools[k].len() {
                            pools[k].shuffle(&mut rng);
                            cursors[k] = 0;
                        }
                        batch.push(pools[k][cursors[k]]);
                        cursors[k] += 1;
                    }
                }
                batches.push(batch);
            }
            return Ok(batches);
        }

        let n_pos = samples.iter().filter(|s| s.label.is_positive()).count();
        let f = config.min_pos_fraction;
        if n_pos > 0 && f > 0.0 && (n_pos as f64) < f * samples.len() as f64 {
            let extra = ((f * samples.len() as f64 - n_pos as f64) / (1.0 - f)).ceil() as usize;
            let pos: Vec<PlannedSample> = samples.iter().filter(|s| s.label.is_positive()).copied().collect();
            for _ in 0..extra {
                samples.push(pos[rng.random_range(0..pos.len())]);
            }
        }
        samples.shuffle(&mut rng);
        Ok(samples.chunks(config.batch_size).map(<[_]>::to_vec).collect())
    }

    /// Masked segments for every positive in this epoch, indexed by
    /// (position among positives, variant).
    pub fn masked_segments(&self, config: &TrainConfig, epoch: usize) -> Result<Vec<Vec<FeatureSegment>>> {
        if self.setup != Setup::Mask {
            return Ok(Vec::new());
        }
        let featurizer = Featurizer::new(self.sample_rate)?;
        let positives: Vec<usize> = self.positives().collect();
        positives
            .par_iter()
            .map(|&i| {
                let e = &self.entries[i];
                let onset = e.onset_frame.expect("positives carry onsets");
                let spec = MaskSpec {
                    seed: seed::derive(config.seed, "mask-epoch", &[epoch as u64]),
                    ..config.mask.clone()
                };
                match spec.mode {
                    MaskMode::Waveform => {
                        let buf = read_wav(&self.paths[i])?;
                        mask_batch(&buf, &spec, &e.utterance_id)?
                            .into_iter()
                            .map(|m| cut_segment(&featurizer.featurize(&m.value)?, onset))
                            .collect()
                    }
                    MaskMode::Feature => {
                        let Stored::Segment(seg) = &self.stored[i] else {
                            unreachable!("positives are stored as segments")
                        };
                        (0..spec.n_variants)
                            .map(|v| {
                                let mut rng = seed::rng(spec.seed, &e.utterance_id, &[v as u64]);
                                Ok(mask_feature(seg, &spec, &mut rng)?.value)
                            })
                            .collect()
                    }
                }
            })
            .collect()
    }

    /// Builds the input tensor for a planned batch.
    pub fn materialize(
        &self,
        plan: &[PlannedSample],
        masked: &[Vec<FeatureSegment>],
        config: &TrainConfig,
        epoch: usize,
    ) -> Result<ClusterBatch> {
        let seg_len = SEGMENT_FRAMES * N_MELS;
        let mut data = Vec::with_capacity(plan.len() * seg_len);
        let pos_rank: Vec<usize> = if masked.is_empty() {
            Vec::new()
        } else {
            let mut rank = vec![usize::MAX; self.entries.len()];
            for (k, i) in self.positives().enumerate() {
                rank[i] = k;
            }
            rank
        };
        for s in plan {
            match s.sample {
                SampleRef::Entry(i) => match &self.stored[i] {
                    Stored::Segment(seg) => data.extend_from_slice(seg.values()),
                    Stored::Full(feat) => {
                        let span = feat.frames().saturating_sub(SEGMENT_FRAMES);
                        let mut rng = seed::rng(config.seed, "crop", &[epoch as u64, i as u64]);
                        let start = rng.random_range(0..=span);
                        data.extend(feat.window_padded(start, SEGMENT_FRAMES));
                    }
                },
                SampleRef::Masked { entry, variant } => {
                    let seg = masked
                        .get(pos_rank.get(entry).copied().unwrap_or(usize::MAX))
                        .and_then(|v| v.get(variant))
                        .ok_or_else(|| KwsError::invalid("masked sample requested without masked cache"))?;
                    data.extend_from_slice(seg.values());
                }
            }
        }
        Ok(ClusterBatch {
            segments: Tensor::from_vec(&[plan.len(), 1, SEGMENT_FRAMES, N_MELS], data)?,
            labels: plan.iter().map(|s| usize::from(s.label.is_positive())).collect(),
            clusters: plan.iter().map(|s| s.cluster).collect(),
            samples: plan.iter().map(|s| s.sample).collect(),
        })
    }
}

/// All batches of one epoch, materialized in order.
pub fn make_batches<'a>(
    set: &'a TrainingSet,
    config: &TrainConfig,
    epoch: usize,
) -> Result<impl Iterator<Item = Result<ClusterBatch>> + 'a> {
    let plan = set.plan_epoch(config, epoch)?;
    let masked = set.masked_segments(config, epoch)?;
    let config = config.clone();
    Ok(plan
        .into_iter()
        .map(move |p| set.materialize(&p, &masked, &config, epoch)))
}
