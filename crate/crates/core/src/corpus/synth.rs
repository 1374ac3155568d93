//! Procedural speech-like corpus.
//!
//! A "word" is a sequence of syllables; each syllable is three harmonics of a
//! gliding base frequency under a raised-cosine envelope. The keyword is a
//! fixed four-syllable word. Confusion words detune exactly one keyword
//! syllable. Fillers draw 4..=8 syllables from a disjoint inventory.
//! Utterances come in two acoustic domains: "real" recordings and
//! "synthetic" voices, which differ in noise floor and harmonic balance.

use std::f64::consts::PI;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::manifest::{write_manifest, Cluster, Manifest, ManifestEntry, Source};
use super::wav::write_wav;
use super::WaveformBuffer;
use crate::error::{KwsError, Result};
use crate::frontend::{FRAME_LEN_S, FRAME_SHIFT_S, SEGMENT_FRAMES};
use crate::seed;

#[derive(Debug, Clone, Copy)]
struct Syllable {
    base_hz: f64,
    /// Relative frequency change from syllable start to end.
    glide: f64,
}

const fn syl(base_hz: f64, glide: f64) -> Syllable {
    Syllable { base_hz, glide }
}

const KEYWORD: [Syllable; 4] = [
    syl(210.0, -0.10),
    syl(265.0, 0.15),
    syl(185.0, 0.0),
    syl(320.0, -0.20),
];

const FILLER_INVENTORY: [Syllable; 12] = [
    syl(150.0, 0.05),
    syl(168.0, -0.15),
    syl(197.0, 0.20),
    syl(228.0, 0.0),
    syl(243.0, -0.08),
    syl(282.0, 0.10),
    syl(298.0, -0.02),
    syl(338.0, 0.18),
    syl(355.0, -0.12),
    syl(375.0, 0.0),
    syl(402.0, 0.08),
    syl(430.0, -0.05),
];

pub const KEYWORD_SYLLABLES: usize = KEYWORD.len();
const SYLLABLE_S: Range<f64> = 0.150..0.250;
const GAP_S: Range<f64> = 0.030..0.090;
const LEAD_S: Range<f64> = 0.10..0.50;
const TAIL_S: f64 = 0.25;
const PITCH_SCALE: Range<f64> = 0.85..1.2;
const DETUNE: Range<f64> = 0.08..0.15;

/// Acoustic domain of an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Real,
    Synthetic,
}

impl Domain {
    fn noise_std(self) -> f64 {
        match self {
            Domain::Real => 0.006,
            Domain::Synthetic => 0.002,
        }
    }

    fn harmonics(self) -> [f64; 3] {
        match self {
            Domain::Real => [1.0, 0.55, 0.30],
            Domain::Synthetic => [1.0, 0.40, 0.35],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UtteranceKind {
    /// Real-domain keyword (real-pos).
    Keyword,
    /// Real-domain filler speech (real-neg).
    RealFiller,
    /// Synthetic-domain keyword with one detuned syllable (synt-neg).
    Confusion,
    /// Synthetic-domain filler speech (synt-neg).
    SyntheticFiller,
}

impl UtteranceKind {
    fn code(self) -> u64 {
        match self {
            UtteranceKind::Keyword => 0,
            UtteranceKind::RealFiller => 1,
            UtteranceKind::Confusion => 2,
            UtteranceKind::SyntheticFiller => 3,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            UtteranceKind::Keyword => "kw",
            UtteranceKind::RealFiller => "neg",
            UtteranceKind::Confusion => "cw",
            UtteranceKind::SyntheticFiller => "sneg",
        }
    }

    fn domain(self) -> Domain {
        match self {
            UtteranceKind::Keyword | UtteranceKind::RealFiller => Domain::Real,
            UtteranceKind::Confusion | UtteranceKind::SyntheticFiller => Domain::Synthetic,
        }
    }

    pub fn cluster(self) -> Cluster {
        match self {
            UtteranceKind::Keyword => Cluster::RealPos,
            UtteranceKind::RealFiller => Cluster::RealNeg,
            UtteranceKind::Confusion | UtteranceKind::SyntheticFiller => Cluster::SyntNeg,
        }
    }

    pub fn source(self) -> Source {
        match self {
            UtteranceKind::Keyword => Source::Keyword,
            UtteranceKind::Confusion => Source::Confusion,
            UtteranceKind::RealFiller | UtteranceKind::SyntheticFiller => Source::Filler,
        }
    }

    fn has_keyword_grid(self) -> bool {
        matches!(self, UtteranceKind::Keyword | UtteranceKind::Confusion)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub n_speakers: usize,
    /// Keyword utterances per speaker.
    pub n_pos: usize,
    /// Real-domain filler utterances per speaker.
    pub n_neg: usize,
    /// Synthetic confusion-word utterances per speaker.
    pub n_confusion: usize,
    /// Synthetic filler utterances per speaker.
    pub n_synt_neg: usize,
    pub seed: u64,
    pub sample_rate: u32,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_speakers: 4,
            n_pos: 10,
            n_neg: 10,
            n_confusion: 10,
            n_synt_neg: 0,
            seed: 0,
            sample_rate: 16000,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate < 8000 {
            return Err(KwsError::invalid(format!(
                "sample rate {} too low, need at least 8000 Hz",
                self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn utterances_per_speaker(&self) -> usize {
        self.n_pos + self.n_neg + self.n_confusion + self.n_synt_neg
    }

    fn hop(&self) -> usize {
        (FRAME_SHIFT_S * f64::from(self.sample_rate)).round() as usize
    }

    fn window(&self) -> usize {
        (FRAME_LEN_S * f64::from(self.sample_rate)).round() as usize
    }

    fn secs(&self, s: f64) -> usize {
        (s * f64::from(self.sample_rate)).round() as usize
    }
}

/// Per-speaker voice: a global pitch factor and the keyword timing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerVoice {
    pub pitch_scale: f64,
    /// Keyword syllable lengths in samples.
    pub syllable_len: [usize; KEYWORD_SYLLABLES],
    /// Gaps between consecutive keyword syllables in samples.
    pub gap_len: [usize; KEYWORD_SYLLABLES - 1],
}

impl SpeakerVoice {
    pub fn for_speaker(spec: &CorpusSpec, speaker: usize) -> Self {
        let mut rng = seed::rng(spec.seed, "speaker", &[speaker as u64]);
        let pitch_scale = rng.random_range(PITCH_SCALE);
        let syllable_len = std::array::from_fn(|_| spec.secs(rng.random_range(SYLLABLE_S)));
        let gap_len = std::array::from_fn(|_| spec.secs(rng.random_range(GAP_S)));
        Self {
            pitch_scale,
            syllable_len,
            gap_len,
        }
    }
}

/// One rendered utterance plus the bookkeeping the manifest needs.
#[derive(Debug, Clone)]
pub struct SyntheticUtterance {
    pub buffer: WaveformBuffer,
    /// Sample ranges occupied by each syllable, in order.
    pub syllables: Vec<Range<usize>>,
    /// First sample of the keyword (or confusion word).
    pub onset_sample: Option<usize>,
    pub onset_frame: Option<usize>,
    /// Index of the detuned syllable for confusion words.
    pub detuned_syllable: Option<usize>,
}

struct Placed {
    syllable: Syllable,
    start: usize,
    len: usize,
}

fn render_syllable(out: &mut [f64], p: &Placed, pitch: f64, amp: f64, domain: Domain, sr: f64) {
    let harmonics = domain.harmonics();
    let mut phase = 0.0f64;
    for i in 0..p.len {
        let x = i as f64 / p.len as f64;
        let f0 = p.syllable.base_hz * pitch * (1.0 + p.syllable.glide * (x - 0.5));
        phase += 2.0 * PI * f0 / sr;
        let env = 0.5 * (1.0 - (2.0 * PI * x).cos());
        let tone: f64 = harmonics
            .iter()
            .enumerate()
            .map(|(k, a)| a * ((k + 1) as f64 * phase).sin())
            .sum();
        out[p.start + i] += amp * env * tone / 1.85;
    }
}

/// Renders one utterance.
///
/// All random draws happen in the same order whether or not `perturb` is
/// set, so a confusion word rendered with `perturb = false` is sample-for-
/// sample the synthetic-domain keyword it was derived from.
pub fn synthesize_utterance(
    spec: &CorpusSpec,
    speaker: usize,
    kind: UtteranceKind,
    index: usize,
    perturb: bool,
) -> Result<SyntheticUtterance> {
    spec.validate()?;
    let voice = SpeakerVoice::for_speaker(spec, speaker);
    let mut rng = seed::rng(
        spec.seed,
        "utterance",
        &[speaker as u64, kind.code(), index as u64],
    );
    let sr = f64::from(spec.sample_rate);
    let lead = spec.secs(rng.random_range(LEAD_S));
    let amp = rng.random_range(0.3..0.6);

    // perturbation parameters are always drawn to keep the stream aligned
    let detune_idx = rng.random_range(0..KEYWORD_SYLLABLES);
    let detune_mag = rng.random_range(DETUNE);
    let detune_sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };

    let mut placed = Vec::new();
    let mut cursor = lead;
    let mut detuned_syllable = None;
    if kind.has_keyword_grid() {
        for (i, base) in KEYWORD.iter().enumerate() {
            let mut s = *base;
            if kind == UtteranceKind::Confusion && perturb && i == detune_idx {
                s.base_hz *= 1.0 + detune_sign * detune_mag;
                detuned_syllable = Some(i);
            }
            placed.push(Placed {
                syllable: s,
                start: cursor,
                len: voice.syllable_len[i],
            });
            cursor += voice.syllable_len[i];
            if i + 1 < KEYWORD_SYLLABLES {
                cursor += voice.gap_len[i];
            }
        }
    } else {
        let n = rng.random_range(4..=8);
        for i in 0..n {
            let s = FILLER_INVENTORY[rng.random_range(0..FILLER_INVENTORY.len())];
            let len = spec.secs(rng.random_range(SYLLABLE_S));
            placed.push(Placed {
                syllable: s,
                start: cursor,
                len,
            });
            cursor += len;
            if i + 1 < n {
                cursor += spec.secs(rng.random_range(GAP_S));
            }
        }
    }

    let (hop, win) = (spec.hop(), spec.window());
    let onset_sample = kind.has_keyword_grid().then_some(lead);
    let onset_frame = onset_sample.map(|s| s / hop);
    // every utterance is long enough for one full segment after its onset
    let min_len = (onset_frame.unwrap_or(0) + SEGMENT_FRAMES - 1) * hop + win;
    let len = (cursor + spec.secs(TAIL_S)).max(min_len);

    let domain = kind.domain();
    let noise = Normal::new(0.0, domain.noise_std()).expect("finite noise std");
    let mut samples: Vec<f64> = (0..len).map(|_| noise.sample(&mut rng)).collect();
    for p in &placed {
        render_syllable(&mut samples, p, voice.pitch_scale, amp, domain, sr);
    }
    let syllables = placed.iter().map(|p| p.start..p.start + p.len).collect();
    Ok(SyntheticUtterance {
        buffer: WaveformBuffer::clipped(samples, spec.sample_rate)?,
        syllables,
        onset_sample,
        onset_frame,
        detuned_syllable,
    })
}

fn utterance_id(speaker: usize, kind: UtteranceKind, index: usize) -> String {
    format!("s{speaker:03}-{}-{index:03}", kind.tag())
}

/// Writes every utterance as `wav/<id>.wav` under `out_dir` plus
/// `manifest.txt`, and returns the manifest.
pub fn generate_corpus(spec: &CorpusSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| KwsError::io(&wav_dir, e))?;

    let mut jobs = Vec::with_capacity(spec.n_speakers * spec.utterances_per_speaker());
    for speaker in 0..spec.n_speakers {
        for (kind, count) in [
            (UtteranceKind::Keyword, spec.n_pos),
            (UtteranceKind::RealFiller, spec.n_neg),
            (UtteranceKind::Confusion, spec.n_confusion),
            (UtteranceKind::SyntheticFiller, spec.n_synt_neg),
        ] {
            jobs.extend((0..count).map(|i| (speaker, kind, i)));
        }
    }

    let entries = jobs
        .par_iter()
        .map(|&(speaker, kind, index)| {
            let utt = synthesize_utterance(spec, speaker, kind, index, true)?;
            let id = utterance_id(speaker, kind, index);
            let rel = PathBuf::from("wav").join(format!("{id}.wav"));
            write_wav(&utt.buffer, out_dir.join(&rel))?;
            let cluster = kind.cluster();
            Ok(ManifestEntry {
                utterance_id: id,
                path: rel,
                label: cluster.label(),
                cluster,
                onset_frame: utt.onset_frame,
                duration_s: utt.buffer.duration_s(),
                source: kind.source(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        base_dir: out_dir.to_path_buf(),
        entries,
    };
    write_manifest(&manifest, out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// Train and test corpora generated side by side with independent seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub train: CorpusSpec,
    pub test: CorpusSpec,
}

impl DatasetSpec {
    /// Desk-scale layout: 32 training and 8 test speakers, about 4k utterances.
    pub fn desk_scale(seed: u64) -> Self {
        let base = CorpusSpec::default();
        Self {
            train: CorpusSpec {
                n_speakers: 32,
                n_pos: 30,
                n_neg: 40,
                n_confusion: 20,
                n_synt_neg: 20,
                ..base.clone()
            },
            test: CorpusSpec {
                n_speakers: 8,
                n_pos: 20,
                n_neg: 40,
                n_confusion: 20,
                n_synt_neg: 0,
                ..base
            },
        }
        .with_seed(seed)
    }

    /// Sets both seeds from one master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = crate::seed::derive(seed, "corpus-train", &[]);
        self.test.seed = crate::seed::derive(seed, "corpus-test", &[]);
        self
    }

    /// Writes `out_dir/train` and `out_dir/test`.
    pub fn generate(&self, out_dir: impl AsRef<Path>) -> Result<(Manifest, Manifest)> {
        let out_dir = out_dir.as_ref();
        Ok((
            generate_corpus(&self.train, out_dir.join("train"))?,
            generate_corpus(&self.test, out_dir.join("test"))?,
        ))
    }
}
