//! Masked-keyword negatives: a positive utterance with 40-60% of its signal
//! replaced by Gaussian white noise is no longer a complete keyword and is
//! used as a negative training sample.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::WaveformBuffer;
use crate::error::{KwsError, Result};
use crate::frontend::{FeatureSegment, N_MELS, SEGMENT_FRAMES};
use crate::seed;

pub const MIN_MASK_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Waveform,
    Feature,
}

impl std::str::FromStr for MaskMode {
    type Err = KwsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "waveform" => Ok(MaskMode::Waveform),
            "feature" => Ok(MaskMode::Feature),
            _ => Err(KwsError::invalid(format!(
                "unknown mask mode '{s}' (expected waveform or feature)"
            ))),
        }
    }
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskMode::Waveform => "waveform",
            MaskMode::Feature => "feature",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Standard deviation of the replacement noise, in full-scale units.
    pub noise_rms: f64,
    pub n_variants: usize,
    pub mode: MaskMode,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            ratio_min: 0.40,
            ratio_max: 0.60,
            noise_rms: 0.05,
            n_variants: 5,
            mode: MaskMode::Waveform,
            seed: 0,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.ratio_min && self.ratio_min <= self.ratio_max && self.ratio_max < 1.0) {
            return Err(KwsError::invalid(format!(
                "mask ratios must satisfy 0 < min <= max < 1, got [{}, {}]",
                self.ratio_min, self.ratio_max
            )));
        }
        if self.n_variants == 0 {
            return Err(KwsError::invalid("n_variants must be at least 1"));
        }
        if !(self.noise_rms.is_finite() && self.noise_rms >= 0.0) {
            return Err(KwsError::invalid(format!("bad noise_rms {}", self.noise_rms)));
        }
        Ok(())
    }

    /// Masked length for total length `len` at drawn ratio `r`: round(r * len),
    /// pulled into [ceil(min * len), floor(max * len)] whenever that range
    /// holds an integer.
    pub fn span_len(&self, len: usize, r: f64) -> Result<usize> {
        let n = (r * len as f64).round() as usize;
        let lo = (self.ratio_min * len as f64).ceil() as usize;
        let hi = (self.ratio_max * len as f64).floor() as usize;
        let n = if lo <= hi { n.clamp(lo, hi) } else { n };
        if n == 0 || n > len {
            return Err(KwsError::invalid(format!(
                "cannot mask {len} units at ratio {r}"
            )));
        }
        Ok(n)
    }

    fn draw_ratio<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.ratio_min == self.ratio_max {
            self.ratio_min
        } else {
            rng.random_range(self.ratio_min..=self.ratio_max)
        }
    }
}

/// A masked copy together with the replaced range.
#[derive(Debug, Clone, PartialEq)]
pub struct Masked<T> {
    pub value: T,
    pub span: Range<usize>,
}

/// Replaces one contiguous span of the waveform with clipped Gaussian noise.
pub fn mask_waveform<R: Rng + ?Sized>(
    buf: &WaveformBuffer,
    spec: &MaskSpec,
    rng: &mut R,
) -> Result<Masked<WaveformBuffer>> {
    spec.validate()?;
    let len = buf.len();
    if len < MIN_MASK_SAMPLES {
        return Err(KwsError::invalid(format!(
            "buffer of {len} samples is too short to mask (need {MIN_MASK_SAMPLES})"
        )));
    }
    let r = spec.draw_ratio(rng);
    let n = spec.span_len(len, r)?;
    let start = rng.random_range(0..=len - n);
    let noise = Normal::new(0.0, spec.noise_rms).map_err(|e| KwsError::invalid(e.to_string()))?;
    let mut samples = buf.samples().to_vec();
    for s in &mut samples[start..start + n] {
        *s = noise.sample(rng).clamp(-1.0, 1.0);
    }
    Ok(Masked {
        value: WaveformBuffer::new(samples, buf.sample_rate())?,
        span: start..start + n,
    })
}

/// `n_variants` independent masks, seeded from `(spec.seed, utterance_id)`.
pub fn mask_batch(
    buf: &WaveformBuffer,
    spec: &MaskSpec,
    utterance_id: &str,
) -> Result<Vec<Masked<WaveformBuffer>>> {
    spec.validate()?;
    (0..spec.n_variants)
        .map(|v| {
            let mut rng = seed::rng(spec.seed, &format!("mask/{utterance_id}"), &[v as u64]);
            mask_waveform(buf, spec, &mut rng)
        })
        .collect()
}

/// Feature-domain variant: replaces a block of whole frames with Gaussian
/// values matching the segment's own mean and standard deviation.
pub fn mask_feature<R: Rng + ?Sized>(
    seg: &FeatureSegment,
    spec: &MaskSpec,
    rng: &mut R,
) -> Result<Masked<FeatureSegment>> {
    spec.validate()?;
    let values = seg.values();
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    let r = spec.draw_ratio(rng);
    let n = spec.span_len(SEGMENT_FRAMES, r)?;
    let start = rng.random_range(0..=SEGMENT_FRAMES - n);
    let noise = Normal::new(mean, var.sqrt()).map_err(|e| KwsError::invalid(e.to_string()))?;
    let mut out = values.to_vec();
    for v in &mut out[start * N_MELS..(start + n) * N_MELS] {
        *v = noise.sample(rng);
    }
    Ok(Masked {
        value: FeatureSegment::new(out)?,
        span: start..start + n,
    })
}
