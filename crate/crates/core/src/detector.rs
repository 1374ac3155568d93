//! Sliding-window keyword confidence: the maximum keyword posterior over
//! every 121-frame window of an utterance, compared against a threshold.

use rayon::prelude::*;

use crate::corpus::WaveformBuffer;
use crate::error::{KwsError, Result};
use crate::frontend::{FeatureMatrix, Featurizer, N_MELS, SEGMENT_FRAMES};
use crate::nn::{forward, ModelParams, Tensor, KEYWORD_CLASS};

/// Windows scored per forward pass.
const WINDOW_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Window length in frames.
    pub window: usize,
    pub stride: usize,
    pub threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: SEGMENT_FRAMES,
            stride: 1,
            threshold: 0.5,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.window == 0 || self.stride == 0 {
            return Err(KwsError::invalid("window and stride must be at least 1 frame"));
        }
        if !self.threshold.is_finite() {
            return Err(KwsError::invalid("threshold must be finite"));
        }
        if params.arch.in_height != self.window || params.arch.in_width != N_MELS {
            return Err(KwsError::shape(format!(
                "model expects {}x{} inputs, detector window is {}x{N_MELS}",
                params.arch.in_height, params.arch.in_width, self.window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub utterance_id: String,
    pub confidence: f64,
    pub best_window_start: usize,
    pub triggered: bool,
    pub threshold_used: f64,
}

impl DetectionResult {
    pub const CSV_HEADER: &'static str = "id,confidence,best_start_frame,triggered";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.17e},{},{}",
            self.utterance_id,
            self.confidence,
            self.best_window_start,
            u8::from(self.triggered)
        )
    }
}

/// Keyword posteriors of the windows starting at `starts`.
pub fn window_posteriors(params: &ModelParams, feat: &FeatureMatrix, window: usize, starts: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(starts.len());
    for chunk in starts.chunks(WINDOW_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * window * N_MELS);
        for &s in chunk {
            data.extend(feat.window_padded(s, window));
        }
        let batch = Tensor::from_vec(&[chunk.len(), 1, window, N_MELS], data)?;
        let (probs, _) = forward(params, &batch)?;
        out.extend(probs.data().chunks_exact(probs.shape()[1]).map(|p| p[KEYWORD_CLASS]));
    }
    Ok(out)
}

/// Window starts 0, stride, 2·stride, … ≤ N − window; a single start when
/// the input is shorter than one window.
pub fn window_starts(frames: usize, window: usize, stride: usize) -> Vec<usize> {
    if frames <= window {
        return vec![0];
    }
    (0..=frames - window).step_by(stride).collect()
}

/// Scores one utterance. Ties keep the earliest window.
pub fn score_utterance(
    params: &ModelParams,
    utterance_id: &str,
    feat: &FeatureMatrix,
    config: &DetectorConfig,
) -> Result<DetectionResult> {
    config.validate(params)?;
    if feat.frames() == 0 {
        return Err(KwsError::invalid(format!("{utterance_id}: empty feature matrix")));
    }
    let starts = window_starts(feat.frames(), config.window, config.stride);
    let post = window_posteriors(params, feat, config.window, &starts)?;
    let (mut best, mut conf) = (0, f64::NEG_INFINITY);
    for (k, &p) in post.iter().enumerate() {
        if p > conf {
            conf = p;
            best = k;
        }
    }
    if !conf.is_finite() {
        return Err(KwsError::NonFinite(format!("{utterance_id}: keyword posterior")));
    }
    Ok(DetectionResult {
        utterance_id: utterance_id.to_string(),
        confidence: conf,
        best_window_start: starts[best],
        triggered: conf >= config.threshold,
        threshold_used: config.threshold,
    })
}

/// Scores many utterances in parallel; output order follows the input.
pub fn score_many(
    params: &ModelParams,
    items: &[(String, FeatureMatrix)],
    config: &DetectorConfig,
) -> Result<Vec<DetectionResult>> {
    items
        .par_iter()
        .map(|(id, f)| score_utterance(params, id, f, config))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamConfig {
    pub chunk_s: f64,
    pub hop_s: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            chunk_s: 3.0,
            hop_s: 1.0,
        }
    }
}

/// Number of chunks covering `len` units: floor((len − chunk) / hop) + 1, or
/// 1 when the input is no longer than one chunk.
pub fn chunk_count(len: usize, chunk: usize, hop: usize) -> usize {
    if len <= chunk {
        1
    } else {
        (len - chunk) / hop + 1
    }
}

/// Featurizes once and scores overlapping fixed-length chunks. Chunk `k`
/// covers frames starting at `k·hop`; `best_window_start` is relative to the
/// chunk and ids are `{id}@{k}`.
pub fn detect_stream(
    params: &ModelParams,
    id: &str,
    buf: &WaveformBuffer,
    config: &DetectorConfig,
    stream: &StreamConfig,
) -> Result<Vec<DetectionResult>> {
    if !(stream.chunk_s > 0.0 && stream.hop_s > 0.0) {
        return Err(KwsError::invalid("chunk and hop durations must be positive"));
    }
    let fz = Featurizer::new(buf.sample_rate())?;
    let feat = fz.featurize(buf)?;
    let chunk_samples = (stream.chunk_s * buf.sample_rate() as f64).round() as usize;
    let hop_samples = (stream.hop_s * buf.sample_rate() as f64).round() as usize;
    let chunk_frames = fz.frame_count(chunk_samples).max(1);
    let hop_frames = (hop_samples / fz.hop_len()).max(1);
    let n = chunk_count(buf.len(), chunk_samples, hop_samples);
    (0..n)
        .into_par_iter()
        .map(|k| {
            let start = (k * hop_frames).min(feat.frames() - 1);
            let end = (start + chunk_frames).min(feat.frames());
            score_utterance(params, &format!("{id}@{k}"), &feat.rows(start..end)?, config)
        })
        .collect()
}

/// Collapses per-chunk triggers into events at least `refractory_s` apart.
/// Returns (chunk index, result) of each retained trigger.
pub fn trigger_events<'a>(
    results: &'a [DetectionResult],
    stream: &StreamConfig,
    refractory_s: f64,
) -> Vec<(usize, &'a DetectionResult)> {
    let mut out: Vec<(usize, &DetectionResult)> = Vec::new();
    let mut last: Option<f64> = None;
    for (k, r) in results.iter().enumerate() {
        if !r.triggered {
            continue;
        }
        let t = k as f64 * stream.hop_s + r.best_window_start as f64 * crate::frontend::FRAME_SHIFT_S;
        if last.is_none_or(|l| t - l >= refractory_s) {
            out.push((k, r));
            last = Some(t);
        }
    }
    out
}
