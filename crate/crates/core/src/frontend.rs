//! Log-mel filterbank features: 50 ms Hann windows every 25 ms, 80 mel bands,
//! natural log with a 1e-10 floor. Training and scoring operate on fixed
//! 121-frame segments.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::corpus::WaveformBuffer;
use crate::error::{KwsError, Result};

pub const N_MELS: usize = 80;
pub const SEGMENT_FRAMES: usize = 121;
pub const FRAME_LEN_S: f64 = 0.050;
pub const FRAME_SHIFT_S: f64 = 0.025;
pub const LOG_FLOOR: f64 = 1e-10;
pub const DEFAULT_F_MIN: f64 = 20.0;

/// Feature value of a frame with zero energy in every band.
pub fn silence_value() -> f64 {
    LOG_FLOOR.ln()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters, `n_mels` rows over `n_fft / 2 + 1` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    weights: Vec<f64>,
    center_hz: Vec<f64>,
    pub f_min: f64,
    pub f_max: f64,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    pub fn center_hz(&self) -> &[f64] {
        &self.center_hz
    }

    fn project(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = self.row(m).iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

/// Builds `n_mels` triangles with centers evenly spaced in mel between
/// `f_min` and `f_max`. Each triangle reaches exactly 1 at the FFT bin
/// nearest its center frequency and falls linearly to zero at the
/// neighbouring centers.
pub fn build_filterbank(
    sample_rate: u32,
    n_fft: usize,
    n_mels: usize,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    let nyquist = f64::from(sample_rate) / 2.0;
    if !(0.0 <= f_min && f_min < f_max && f_max <= nyquist) {
        return Err(KwsError::invalid(format!(
            "need 0 <= f_min < f_max <= {nyquist} Hz, got f_min={f_min}, f_max={f_max}"
        )));
    }
    if !n_fft.is_power_of_two() || n_fft < 2 {
        return Err(KwsError::invalid(format!("n_fft {n_fft} is not a power of two")));
    }
    if n_mels == 0 {
        return Err(KwsError::invalid("n_mels must be positive"));
    }
    let n_bins = n_fft / 2 + 1;
    let (mel_lo, mel_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let step = (mel_hi - mel_lo) / (n_mels + 1) as f64;
    let bin_of = |hz: f64| hz * n_fft as f64 / f64::from(sample_rate);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| bin_of(mel_to_hz(mel_lo + step * i as f64)))
        .collect();

    let mut weights = vec![0.0; n_mels * n_bins];
    let mut center_hz = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        center_hz.push(mel_to_hz(mel_lo + step * (m + 1) as f64));
        let peak = (c.round() as usize).min(n_bins - 1);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        row[peak] = 1.0;
        for (k, w) in row.iter_mut().enumerate() {
            let kf = k as f64;
            if k < peak && kf > lo {
                *w = (kf - lo) / (c - lo);
            } else if k > peak && kf < hi {
                *w = (hi - kf) / (hi - c);
            }
        }
    }
    Ok(MelFilterbank {
        n_mels,
        n_bins,
        weights,
        center_hz,
        f_min,
        f_max,
    })
}

/// Frames × 80 log-mel energies, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * N_MELS {
            return Err(KwsError::shape(format!(
                "{} values for {frames} x {N_MELS} features",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KwsError::NonFinite("feature matrix".into()));
        }
        Ok(Self { frames, values })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * N_MELS..(t + 1) * N_MELS]
    }

    /// Rows `[start, start + len)`, extended with silence rows past the end.
    pub fn window_padded(&self, start: usize, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(len * N_MELS);
        let have = self.frames.saturating_sub(start).min(len);
        out.extend_from_slice(&self.values[start * N_MELS..(start + have) * N_MELS]);
        out.resize(len * N_MELS, silence_value());
        out
    }

    /// Rows `range` as a new matrix.
    pub fn rows(&self, range: std::ops::Range<usize>) -> Result<FeatureMatrix> {
        if range.end > self.frames || range.start > range.end {
            return Err(KwsError::invalid(format!(
                "rows {range:?} out of range for {} frames",
                self.frames
            )));
        }
        Ok(FeatureMatrix {
            frames: range.len(),
            values: self.values[range.start * N_MELS..range.end * N_MELS].to_vec(),
        })
    }
}

/// Exactly 121 × 80 features, the model input unit.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSegment {
    values: Vec<f64>,
}

impl FeatureSegment {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != SEGMENT_FRAMES * N_MELS {
            return Err(KwsError::shape(format!(
                "segment needs {} values, got {}",
                SEGMENT_FRAMES * N_MELS,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KwsError::NonFinite("feature segment".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * N_MELS..(t + 1) * N_MELS]
    }
}

/// Reusable feature extractor for one sample rate.
pub struct Featurizer {
    sample_rate: u32,
    win: usize,
    hop: usize,
    n_fft: usize,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl Featurizer {
    pub fn new(sample_rate: u32) -> Result<Self> {
        let sr = f64::from(sample_rate);
        let win = (FRAME_LEN_S * sr).round() as usize;
        let hop = (FRAME_SHIFT_S * sr).round() as usize;
        if win == 0 || hop == 0 {
            return Err(KwsError::invalid(format!("sample rate {sample_rate} too low")));
        }
        let n_fft = win.next_power_of_two();
        let filterbank = build_filterbank(sample_rate, n_fft, N_MELS, DEFAULT_F_MIN, sr / 2.0)?;
        // periodic Hann
        let window = (0..win)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self {
            sample_rate,
            win,
            hop,
            n_fft,
            window,
            filterbank,
            fft,
        })
    }

    pub fn window_len(&self) -> usize {
        self.win
    }

    pub fn hop_len(&self) -> usize {
        self.hop
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// N = floor((L - W) / S) + 1 for L >= W, else 0.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        if n_samples < self.win {
            0
        } else {
            (n_samples - self.win) / self.hop + 1
        }
    }

    pub fn featurize(&self, buf: &WaveformBuffer) -> Result<FeatureMatrix> {
        if buf.sample_rate() != self.sample_rate {
            return Err(KwsError::invalid(format!(
                "featurizer built for {} Hz, buffer is {} Hz",
                self.sample_rate,
                buf.sample_rate()
            )));
        }
        let frames = self.frame_count(buf.len());
        if frames == 0 {
            return Err(KwsError::invalid(format!(
                "buffer of {} samples is shorter than one {}-sample window",
                buf.len(),
                self.win
            )));
        }
        let samples = buf.samples();
        let n_bins = self.n_fft / 2 + 1;
        let mut spectrum = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        let mut values = vec![0.0; frames * N_MELS];
        for (t, out) in values.chunks_exact_mut(N_MELS).enumerate() {
            let frame = &samples[t * self.hop..t * self.hop + self.win];
            let mean = frame.iter().sum::<f64>() / self.win as f64;
            for (i, c) in spectrum.iter_mut().enumerate() {
                *c = if i < self.win {
                    Complex::new((frame[i] - mean) * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut spectrum, &mut scratch);
            for (p, c) in power.iter_mut().zip(&spectrum) {
                *p = c.norm_sqr();
            }
            self.filterbank.project(&power, out);
            for v in out.iter_mut() {
                *v = (*v + LOG_FLOOR).ln();
            }
        }
        FeatureMatrix::new(frames, values)
    }
}

/// Featurizes with the default frontend for the buffer's sample rate.
pub fn featurize(buf: &WaveformBuffer) -> Result<FeatureMatrix> {
    Featurizer::new(buf.sample_rate())?.featurize(buf)
}

/// Copies rows `[onset, onset + 121)`.
pub fn cut_segment(feat: &FeatureMatrix, onset_frame: usize) -> Result<FeatureSegment> {
    if onset_frame + SEGMENT_FRAMES > feat.frames() {
        return Err(KwsError::invalid(format!(
            "onset frame {onset_frame} leaves fewer than {SEGMENT_FRAMES} of {} frames",
            feat.frames()
        )));
    }
    FeatureSegment::new(
        feat.values[onset_frame * N_MELS..(onset_frame + SEGMENT_FRAMES) * N_MELS].to_vec(),
    )
}

const DUMP_MAGIC: &[u8; 4] = b"KWSF";

/// Binary dump: "KWSF", u32 rows, u32 cols, u32 reserved (zero), then
/// row-major little-endian f64 values.
pub fn encode_features(rows: usize, cols: usize, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + values.len() * 8);
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < 16 || &bytes[..4] != DUMP_MAGIC {
        return Err(KwsError::format("missing KWSF feature header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(4), word(8));
    let body = &bytes[16..];
    if body.len() != rows * cols * 8 {
        return Err(KwsError::format(format!(
            "feature dump body has {} bytes, header says {rows} x {cols}",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, values))
}

pub fn write_features(feat: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(feat.frames(), N_MELS, feat.values()))
        .map_err(|e| KwsError::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| KwsError::io(path, e))?;
    let (rows, cols, values) = decode_features(&bytes)?;
    if cols != N_MELS {
        return Err(KwsError::shape(format!("feature dump has {cols} columns, expected {N_MELS}")));
    }
    FeatureMatrix::new(rows, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(n: usize, sr: u32, hz: f64, amp: f64) -> WaveformBuffer {
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * hz * i as f64 / f64::from(sr)).sin())
            .collect();
        WaveformBuffer::new(s, sr).unwrap()
    }

    #[test]
    fn mel_scale_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-9);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn filterbank_rows_are_contiguous_triangles() {
        let fb = build_filterbank(16000, 1024, 80, 20.0, 8000.0).unwrap();
        assert_eq!(fb.n_mels(), 80);
        assert_eq!(fb.n_bins(), 513);
        for m in 0..80 {
            let row = fb.row(m);
            let nz: Vec<usize> = (0..row.len()).filter(|&k| row[k] != 0.0).collect();
            assert!(!nz.is_empty());
            assert_eq!(nz.last().unwrap() - nz[0] + 1, nz.len(), "row {m} not contiguous");
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            assert_eq!(row.iter().cloned().fold(0.0, f64::max), 1.0);
            assert!(row.iter().sum::<f64>() > 0.0);
        }
        assert!(fb.center_hz().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn filterbank_rejects_bad_ranges() {
        assert!(build_filterbank(16000, 1024, 80, 100.0, 50.0).is_err());
        assert!(build_filterbank(16000, 1024, 80, 0.0, 9000.0).is_err());
        assert!(build_filterbank(16000, 1000, 80, 0.0, 8000.0).is_err());
    }

    #[test]
    fn frame_counts() {
        let f = Featurizer::new(16000).unwrap();
        assert_eq!((f.window_len(), f.hop_len(), f.n_fft()), (800, 400, 1024));
        assert_eq!(featurize(&tone(16000, 16000, 440.0, 0.5)).unwrap().frames(), 39);
        assert_eq!(featurize(&tone(800, 16000, 440.0, 0.5)).unwrap().frames(), 1);
        assert!(featurize(&tone(799, 16000, 440.0, 0.5)).is_err());
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let feat = featurize(&WaveformBuffer::new(vec![0.0; 4000], 16000).unwrap()).unwrap();
        assert!(feat.values().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn scaling_shifts_log_energy() {
        let a = tone(8000, 16000, 523.0, 0.2);
        let b = tone(8000, 16000, 523.0, 0.6);
        let (fa, fb) = (featurize(&a).unwrap(), featurize(&b).unwrap());
        let shift = 2.0 * 3f64.ln();
        for (x, y) in fa.values().iter().zip(fb.values()) {
            // bands far from the tone sit near the floor
            if *x > -5.0 {
                assert!((y - x - shift).abs() < 1e-6, "{x} {y}");
            }
        }
    }

    #[test]
    fn cut_segment_bounds() {
        let feat = FeatureMatrix::new(200, (0..200 * N_MELS).map(|i| i as f64).collect()).unwrap();
        let seg = cut_segment(&feat, 0).unwrap();
        assert_eq!(seg.values(), &feat.values()[..SEGMENT_FRAMES * N_MELS]);
        let seg = cut_segment(&feat, 79).unwrap();
        assert_eq!(seg.row(0), feat.row(79));
        assert!(cut_segment(&feat, 80).is_err());

        let exact = feat.rows(0..121).unwrap();
        assert_eq!(cut_segment(&exact, 0).unwrap().values(), exact.values());
        assert!(cut_segment(&exact, 1).is_err());
    }

    #[test]
    fn feature_dump_round_trip() {
        let feat = featurize(&tone(3000, 16000, 300.0, 0.3)).unwrap();
        let bytes = encode_features(feat.frames(), N_MELS, feat.values());
        assert_eq!(&bytes[..4], b"KWSF");
        assert_eq!(bytes.len(), 16 + feat.values().len() * 8);
        let (r, c, v) = decode_features(&bytes).unwrap();
        assert_eq!((r, c), (feat.frames(), N_MELS));
        assert_eq!(v, feat.values());
        assert!(decode_features(&bytes[..20]).is_err());
    }

    proptest! {
        #[test]
        fn frame_count_matches_enumeration(len in 800usize..20000) {
            let f = Featurizer::new(16000).unwrap();
            let placements = (0..).map(|t| t * 400).take_while(|s| s + 800 <= len).count();
            prop_assert_eq!(f.frame_count(len), placements);
        }
    }

    #[test]
    fn featurize_is_deterministic() {
        let b = tone(5000, 16000, 700.0, 0.4);
        assert_eq!(featurize(&b).unwrap(), featurize(&b).unwrap());
    }
}
