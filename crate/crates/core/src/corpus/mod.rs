//! Audio buffers, WAV I/O, dataset manifests and the procedural corpus
//! generator that stands in for recorded and TTS-synthesized speech.

mod manifest;
mod synth;
mod wav;

pub use manifest::{parse_manifest, write_manifest, Cluster, Label, Manifest, ManifestEntry, Source};
pub use synth::{
    generate_corpus, synthesize_utterance, CorpusSpec, DatasetSpec, Domain, SpeakerVoice, SyntheticUtterance,
    UtteranceKind,
};
pub use wav::{read_wav, write_wav};

use crate::error::{KwsError, Result};

/// Mono audio samples in [-1, 1] at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl WaveformBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(KwsError::invalid("waveform must contain at least one sample"));
        }
        if sample_rate == 0 {
            return Err(KwsError::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(KwsError::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Builds a buffer, clamping every sample into [-1, 1].
    pub fn clipped(mut samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        for s in &mut samples {
            *s = s.clamp(-1.0, 1.0);
        }
        Self::new(samples, sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Copy of `range` as a new buffer.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.samples.len() || range.start >= range.end {
            return Err(KwsError::invalid(format!(
                "slice {range:?} out of bounds for {} samples",
                self.samples.len()
            )));
        }
        Self::new(self.samples[range].to_vec(), self.sample_rate)
    }
}
