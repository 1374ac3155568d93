//! `key = value` configuration files with `[corpus]`, `[train]`, `[detect]`
//! and `[eval]` sections. Keys before the first section header are global.
//! Unknown sections and keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{KwsError, Result};

const GLOBAL_KEYS: &[&str] = &["seed", "jobs"];
const CORPUS_KEYS: &[&str] = &[
    "sample_rate",
    "train_speakers",
    "train_pos",
    "train_neg",
    "train_confusion",
    "train_synt_neg",
    "test_speakers",
    "test_pos",
    "test_neg",
    "test_confusion",
    "test_synt_neg",
];
const TRAIN_KEYS: &[&str] = &[
    "setup",
    "epochs",
    "lr0",
    "momentum",
    "patience",
    "lr_decay",
    "lr_min",
    "batch_size",
    "quota",
    "min_pos_fraction",
    "coral_eps",
    "channels",
    "d_emb",
    "tap",
    "checkpoint_every",
    "record_timing",
    "mask_mode",
    "mask_ratio_min",
    "mask_ratio_max",
    "mask_noise_rms",
    "mask_variants",
];
const DETECT_KEYS: &[&str] = &["threshold", "stride", "chunk_s", "hop_s"];
const EVAL_KEYS: &[&str] = &["test", "stride", "target_fa_per_hour"];

fn known_keys(section: &str) -> Option<&'static [&'static str]> {
    match section {
        "" => Some(GLOBAL_KEYS),
        "corpus" => Some(CORPUS_KEYS),
        "train" => Some(TRAIN_KEYS),
        "detect" => Some(DETECT_KEYS),
        "eval" => Some(EVAL_KEYS),
        _ => None,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<(String, String), String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| KwsError::invalid(format!("config line {}: {msg}", n + 1));
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| at(format!("malformed section header '{line}'")))?
                    .trim();
                if name.is_empty() || known_keys(name).is_none() {
                    return Err(at(format!(
                        "unknown section [{name}]; expected [corpus], [train], [detect] or [eval]"
                    )));
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected 'key = value', got '{line}'")))?;
            let (k, v) = (k.trim(), v.trim());
            let keys = known_keys(&section).unwrap_or_default();
            if !keys.contains(&k) {
                let place = if section.is_empty() { "top level".to_string() } else { format!("[{section}]") };
                return Err(at(format!("unknown key '{k}' in {place}; known keys: {}", keys.join(", "))));
            }
            if values.insert((section.clone(), k.to_string()), v.to_string()).is_some() {
                return Err(at(format!("duplicate key '{k}'")));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| KwsError::io(path, e))?;
        Self::parse(&text).map_err(|e| KwsError::invalid(format!("{}: {e}", path.display())))
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.values.get(&(section.to_string(), key.to_string())).map(String::as_str)
    }

    /// Typed lookup; a present but unparsable value is an error.
    pub fn get<T>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(section, key)
            .map(|v| {
                v.parse::<T>().map_err(|e| {
                    let name = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
                    KwsError::invalid(format!("config {name} = '{v}': {e}"))
                })
            })
            .transpose()
    }

    /// Comma-separated list of exactly `N` values.
    pub fn get_array<T, const N: usize>(&self, section: &str, key: &str) -> Result<Option<[T; N]>>
    where
        T: FromStr + Copy + Default,
        T::Err: Display,
    {
        let Some(v) = self.raw(section, key) else {
            return Ok(None);
        };
        parse_array(v).map(Some).map_err(|e| KwsError::invalid(format!("config {section}.{key}: {e}")))
    }
}

/// Parses `a,b,c` into a fixed-size array.
pub fn parse_array<T, const N: usize>(v: &str) -> Result<[T; N]>
where
    T: FromStr + Copy + Default,
    T::Err: Display,
{
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(KwsError::invalid(format!("expected {N} comma-separated values, got '{v}'")));
    }
    let mut out = [T::default(); N];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = p.parse().map_err(|e| KwsError::invalid(format!("'{p}': {e}")))?;
    }
    Ok(out)
}
