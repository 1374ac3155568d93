//! RIFF/WAVE reader and writer, 16-bit PCM mono only.

use std::fs;
use std::path::Path;

use super::WaveformBuffer;
use crate::error::{KwsError, Result};

const PCM_FORMAT: u16 = 1;
const FULL_SCALE: f64 = 32768.0;

fn quantize(x: f64) -> i16 {
    (x * FULL_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

/// Encodes the buffer as a complete WAV byte stream.
pub fn encode_wav(buf: &WaveformBuffer) -> Vec<u8> {
    let data_len = (buf.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buf.sample_rate().to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in buf.samples() {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

pub fn write_wav(buf: &WaveformBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(buf)).map_err(|e| KwsError::io(path, e))
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a WAV byte stream. Unknown chunks are skipped.
pub fn decode_wav(bytes: &[u8]) -> Result<WaveformBuffer> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(KwsError::format("missing RIFF/WAVE header"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| KwsError::format("chunk extends past end of file"))?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(KwsError::format("fmt chunk too short"));
                }
                fmt = Some((
                    u16_at(bytes, body),
                    u16_at(bytes, body + 2),
                    u32_at(bytes, body + 4),
                    u16_at(bytes, body + 14),
                ));
            }
            b"data" => {
                let (format, channels, rate, bits) =
                    fmt.ok_or_else(|| KwsError::format("data chunk before fmt chunk"))?;
                if channels != 1 {
                    return Err(KwsError::Unsupported(format!(
                        "expected mono audio, file has {channels} channels"
                    )));
                }
                if format != PCM_FORMAT {
                    return Err(KwsError::Unsupported(format!(
                        "audio format tag {format}, only PCM (1) is supported"
                    )));
                }
                if bits != 16 {
                    return Err(KwsError::Unsupported(format!(
                        "{bits}-bit samples, only 16-bit PCM is supported"
                    )));
                }
                if !size.is_multiple_of(2) {
                    return Err(KwsError::format("data chunk has odd byte length"));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / FULL_SCALE)
                    .collect();
                return WaveformBuffer::new(samples, rate);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = end + (size & 1);
    }
    Err(KwsError::format("no data chunk"))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<WaveformBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| KwsError::io(path, e))?;
    decode_wav(&bytes)
}
