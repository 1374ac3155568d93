//! Training under the six data setups with Nesterov SGD, a plateau
//! learning-rate schedule and, for the CORAL setups, the three-cluster
//! joint loss injected at the embedding.

mod batches;
mod optim;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

pub use batches::{make_batches, ClusterBatch, PlannedSample, SampleRef, TrainingSet};
pub use optim::{lookahead, nesterov_step, nesterov_update, PlateauSchedule};

use crate::augment::MaskSpec;
use crate::coral::{joint_loss, EmbeddingCluster, DEFAULT_EPS};
use crate::corpus::{Cluster, Manifest};
use crate::error::{KwsError, Result};
use crate::nn::{backward, forward_logits, layers::softmax_cross_entropy, save_checkpoint, Architecture, ModelParams, Tensor};
use crate::seed;

/// Training data setups. All train on real positives and real negatives;
/// `mask` adds masked positives as negatives, the `synt-cw*` setups add
/// synthetic confusion words, `-neg` adds synthetic fillers and the CORAL
/// setups add the covariance-ratio term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setup {
    Baseline,
    Mask,
    SyntCw,
    SyntCwNeg,
    SyntCwCoral,
    FullCoral,
}

impl Setup {
    pub const ALL: [Setup; 6] = [
        Setup::Baseline,
        Setup::Mask,
        Setup::SyntCw,
        Setup::SyntCwNeg,
        Setup::SyntCwCoral,
        Setup::FullCoral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setup::Baseline => "baseline",
            Setup::Mask => "mask",
            Setup::SyntCw => "synt-cw",
            Setup::SyntCwNeg => "synt-cw-neg",
            Setup::SyntCwCoral => "synt-cw-coral",
            Setup::FullCoral => "full-coral",
        }
    }

    /// Row label used in report tables.
    pub fn table_label(self) -> &'static str {
        match self {
            Setup::Baseline => "real(baseline)",
            Setup::Mask => "real + masked-pos",
            Setup::SyntCw => "real + synt-wake",
            Setup::SyntCwNeg => "real + synt-wake + synt-neg",
            Setup::SyntCwCoral => "real + synt-wake + CORAL",
            Setup::FullCoral => "real + synt-wake + synt-neg + CORAL",
        }
    }

    pub fn uses_coral(self) -> bool {
        matches!(self, Setup::SyntCwCoral | Setup::FullCoral)
    }

    pub fn uses_confusion(self) -> bool {
        !matches!(self, Setup::Baseline | Setup::Mask)
    }

    pub fn uses_synthetic_negatives(self) -> bool {
        matches!(self, Setup::SyntCwNeg | Setup::FullCoral)
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setup {
    type Err = KwsError;

    fn from_str(s: &str) -> Result<Self> {
        Setup::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Setup::ALL.iter().map(|x| x.name()).collect();
            KwsError::invalid(format!("unknown setup '{s}'; valid setups: {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub setup: Setup,
    pub epochs: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub plateau_patience: usize,
    pub lr_decay: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    /// Samples per batch from (real-pos, real-neg, synt-neg) when CORAL is on.
    pub quota: Option<[usize; 3]>,
    /// Minimum share of positives per epoch in non-CORAL setups.
    pub min_pos_fraction: f64,
    pub coral_eps: f64,
    pub arch: Architecture,
    pub mask: MaskSpec,
    pub seed: u64,
    /// Write a checkpoint every N epochs (0 = only the final one).
    pub checkpoint_every: usize,
    /// Fill the wall_ms log column; off by default so logs are reproducible.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            setup: Setup::Baseline,
            epochs: 100,
            lr0: 0.01,
            momentum: 0.9,
            plateau_patience: 3,
            lr_decay: 0.5,
            lr_min: 1e-5,
            batch_size: 32,
            quota: None,
            min_pos_fraction: 0.25,
            coral_eps: DEFAULT_EPS,
            arch: Architecture::default(),
            mask: MaskSpec::default(),
            seed: 0,
            checkpoint_every: 0,
            record_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn cluster_quota(&self) -> [usize; 3] {
        self.quota.unwrap_or_else(|| {
            let third = self.batch_size / 3;
            [third, third, self.batch_size - 2 * third]
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(KwsError::invalid(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(KwsError::invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_min < 0.0 {
            return Err(KwsError::invalid("lr_decay must be in (0, 1] and lr_min nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(KwsError::invalid("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.min_pos_fraction) {
            return Err(KwsError::invalid("min_pos_fraction must be in [0, 1)"));
        }
        if self.setup.uses_coral() {
            let q = self.cluster_quota();
            if q.iter().any(|&n| n < 2) {
                return Err(KwsError::invalid(format!(
                    "CORAL needs at least 2 samples per cluster per batch, quota is {q:?} (batch_size >= 6)"
                )));
            }
        }
        self.arch.validate()?;
        self.mask.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub ce: f64,
    /// A / (A + B + ε); zero when CORAL is off.
    pub coral_ratio: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps completed at the end of the epoch.
    pub step: usize,
    pub ce: f64,
    pub coral_ratio: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

pub const LOG_HEADER: &str = "epoch,step,ce,coral_ratio,lr,wall_ms";

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in log {
        s.push_str(&format!(
            "{},{},{:e},{:e},{:e},{}\n",
            r.epoch, r.step, r.ce, r.coral_ratio, r.lr, r.wall_ms
        ));
    }
    s
}

/// Optimizer state for one run.
pub struct Trainer {
    pub config: TrainConfig,
    params: ModelParams,
    velocity: ModelParams,
    steps: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(config.seed, "init", &[]);
        let params = ModelParams::init_zero_head(config.arch, &mut rng)?;
        Self::with_params(config, params)
    }

    pub fn with_params(config: TrainConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        if params.arch != config.arch {
            return Err(KwsError::shape("initial parameters do not match the configured architecture"));
        }
        let velocity = params.zeros_like();
        Ok(Self {
            config,
            params,
            velocity,
            steps: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// θ + μ·v, where the next gradient is evaluated.
    pub fn lookahead(&self) -> Result<ModelParams> {
        lookahead(&self.params, &self.velocity, self.config.momentum)
    }

    /// Loss and gradients of a batch at the given parameters.
    pub fn loss_and_grad(&self, at: &ModelParams, batch: &ClusterBatch) -> Result<(StepStats, ModelParams)> {
        let trace = forward_logits(at, &batch.segments)?;
        let (ce, dlogits) = softmax_cross_entropy(&trace.logits, &batch.labels)?;
        let mut stats = StepStats {
            ce,
            coral_ratio: 0.0,
            total: ce,
        };
        let mut emb_grad = None;
        if self.config.setup.uses_coral() {
            let emb = trace.embedding();
            let (n, d) = emb.dims2()?;
            let rows_of = |c: Cluster| -> Vec<usize> { (0..n).filter(|&i| batch.clusters[i] == c).collect() };
            let idx: Vec<Vec<usize>> = Cluster::ALL.iter().map(|&c| rows_of(c)).collect();
            let gather = |rows: &[usize], c: Cluster| -> Result<EmbeddingCluster> {
                let mut v = Vec::with_capacity(rows.len() * d);
                for &r in rows {
                    v.extend_from_slice(&emb.data()[r * d..(r + 1) * d]);
                }
                EmbeddingCluster::new(Tensor::from_vec(&[rows.len(), d], v)?, c)
            };
            let j = joint_loss(
                ce,
                &gather(&idx[0], Cluster::RealPos)?,
                &gather(&idx[1], Cluster::RealNeg)?,
                &gather(&idx[2], Cluster::SyntNeg)?,
                self.config.coral_eps,
            )?;
            let mut g = Tensor::zeros(&[n, d]);
            for (rows, grad) in idx.iter().zip([&j.grad_real_pos, &j.grad_real_neg, &j.grad_synt_neg]) {
                for (k, &r) in rows.iter().enumerate() {
                    g.data_mut()[r * d..(r + 1) * d].copy_from_slice(&grad.data()[k * d..(k + 1) * d]);
                }
            }
            stats.coral_ratio = j.ratio;
            stats.total = j.total;
            emb_grad = Some(g);
        }
        let grads = backward(&trace, at, &dlogits, emb_grad.as_ref())?;
        Ok((stats, grads))
    }

    /// One Nesterov step on `batch` at learning rate `lr`.
    pub fn step(&mut self, batch: &ClusterBatch, lr: f64) -> Result<StepStats> {
        let at = self.lookahead()?;
        let (stats, grads) = self.loss_and_grad(&at, batch)?;
        if !stats.total.is_finite() {
            return Err(KwsError::NonFinite(format!("loss at step {}", self.steps)));
        }
        nesterov_step(&mut self.params, &grads, &mut self.velocity, lr, self.config.momentum)
            .map_err(|e| KwsError::NonFinite(format!("step {}: {e}", self.steps)))?;
        self.steps += 1;
        Ok(stats)
    }
}

/// Final parameters and per-epoch log of a run.
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Trains for `config.epochs` epochs. When `out_dir` is given, writes
/// `train_log.csv`, periodic `epoch_NNN.kwsm` checkpoints and `final.kwsm`.
pub fn train(config: &TrainConfig, manifest: &Manifest, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let set = TrainingSet::load(manifest, config.setup)?;
    train_on(config, &set, out_dir)
}

pub fn train_on(config: &TrainConfig, set: &TrainingSet, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    if set.setup() != config.setup {
        return Err(KwsError::invalid("training set was loaded for a different setup"));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| KwsError::io(dir, e))?;
    }
    let mut trainer = Trainer::new(config.clone())?;
    let mut schedule = PlateauSchedule::new(
        config.lr0,
        config.plateau_patience,
        config.lr_decay,
        config.lr_min,
    );
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = schedule.lr();
        let (mut ce, mut ratio, mut total, mut n) = (0.0, 0.0, 0.0, 0usize);
        for (b, batch) in make_batches(set, config, epoch)?.enumerate() {
            let batch = batch?;
            let s = trainer.step(&batch, lr).map_err(|e| match e {
                KwsError::NonFinite(m) => KwsError::NonFinite(format!("epoch {epoch} batch {b}: {m}")),
                other => other,
            })?;
            ce += s.ce;
            ratio += s.coral_ratio;
            total += s.total;
            n += 1;
        }
        let n = n.max(1) as f64;
        schedule.end_epoch(total / n);
        log.push(EpochLog {
            epoch,
            step: trainer.steps(),
            ce: ce / n,
            coral_ratio: ratio / n,
            lr,
            wall_ms: if config.record_timing {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        });
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                save_checkpoint(trainer.params(), dir.join(format!("epoch_{:03}.kwsm", epoch + 1)))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(trainer.params(), dir.join("final.kwsm"))?;
        let path = dir.join("train_log.csv");
        let mut f = fs::File::create(&path).map_err(|e| KwsError::io(&path, e))?;
        f.write_all(log_csv(&log).as_bytes()).map_err(|e| KwsError::io(&path, e))?;
    }
    Ok(TrainOutcome {
        params: trainer.into_params(),
        log,
    })
}
