//! Pipe-separated dataset manifests.
//!
//! One record per line: `id|relative_path|label|cluster|onset_frame|duration_s`
//! with an optional seventh `source` field. `#` starts a comment line. The
//! onset column is empty for utterances without an aligned keyword.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{KwsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

/// Training sub-population used by the three-cluster CORAL term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cluster {
    RealPos,
    RealNeg,
    SyntNeg,
}

impl Cluster {
    pub const ALL: [Cluster; 3] = [Cluster::RealPos, Cluster::RealNeg, Cluster::SyntNeg];

    pub fn label(self) -> Label {
        match self {
            Cluster::RealPos => Label::Positive,
            Cluster::RealNeg | Cluster::SyntNeg => Label::Negative,
        }
    }
}

/// What produced an utterance. Lets one manifest hold synthetic confusion
/// words and plain synthetic negatives side by side even though both belong
/// to the synt-neg cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Keyword,
    Filler,
    Confusion,
    Masked,
}

impl Source {
    fn default_for(cluster: Cluster) -> Source {
        match cluster {
            Cluster::RealPos => Source::Keyword,
            Cluster::RealNeg | Cluster::SyntNeg => Source::Filler,
        }
    }
}

macro_rules! text_enum {
    ($ty:ty { $($variant:path => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = KwsError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(KwsError::invalid(format!(
                        concat!("unknown ", stringify!($ty), " '{}' (expected one of: {})"),
                        other,
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

text_enum!(Label { Label::Positive => "positive", Label::Negative => "negative" });
text_enum!(Cluster {
    Cluster::RealPos => "real-pos",
    Cluster::RealNeg => "real-neg",
    Cluster::SyntNeg => "synt-neg",
});
text_enum!(Source {
    Source::Keyword => "keyword",
    Source::Filler => "filler",
    Source::Confusion => "confusion",
    Source::Masked => "masked",
});

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    /// Path as written in the manifest, relative to the manifest directory
    /// unless absolute.
    pub path: PathBuf,
    pub label: Label,
    pub cluster: Cluster,
    pub onset_frame: Option<usize>,
    pub duration_s: f64,
    pub source: Source,
}

impl ManifestEntry {
    pub fn validate(&self) -> Result<()> {
        let id = &self.utterance_id;
        if id.is_empty() || id.contains('|') {
            return Err(KwsError::invalid(format!("bad utterance id '{id}'")));
        }
        if self.label.is_positive() && self.onset_frame.is_none() {
            return Err(KwsError::invalid(format!(
                "{id}: positive utterance without onset frame"
            )));
        }
        if self.cluster.label() != self.label {
            return Err(KwsError::invalid(format!(
                "{id}: cluster {} requires label {}, found {}",
                self.cluster,
                self.cluster.label(),
                self.label
            )));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(KwsError::invalid(format!(
                "{id}: duration must be positive, found {}",
                self.duration_s
            )));
        }
        Ok(())
    }

    /// Serialized record, without trailing newline.
    pub fn to_line(&self) -> String {
        let onset = self.onset_frame.map(|o| o.to_string()).unwrap_or_default();
        format!(
            "{}|{}|{}|{}|{}|{:.4}|{}",
            self.utterance_id,
            self.path.display(),
            self.label,
            self.cluster,
            onset,
            self.duration_s,
            self.source
        )
    }

    fn parse_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() != 6 && fields.len() != 7 {
            return Err(KwsError::invalid(format!(
                "expected 6 or 7 '|'-separated fields, found {}",
                fields.len()
            )));
        }
        let label: Label = fields[2].parse()?;
        let cluster: Cluster = fields[3].parse()?;
        let onset_frame = match fields[4] {
            "" => None,
            s => Some(
                s.parse::<usize>()
                    .map_err(|_| KwsError::invalid(format!("bad onset frame '{s}'")))?,
            ),
        };
        let duration_s = fields[5]
            .parse::<f64>()
            .map_err(|_| KwsError::invalid(format!("bad duration '{}'", fields[5])))?;
        let source = match fields.get(6) {
            Some(s) if !s.is_empty() => s.parse()?,
            _ => Source::default_for(cluster),
        };
        let entry = ManifestEntry {
            utterance_id: fields[0].to_string(),
            path: PathBuf::from(fields[1]),
            label,
            cluster,
            onset_frame,
            duration_s,
            source,
        };
        entry.validate()?;
        Ok(entry)
    }
}

/// Parsed manifest plus the directory relative paths resolve against.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn parse_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let entry = ManifestEntry::parse_line(line).map_err(|e| match e {
                KwsError::Invalid(msg) => KwsError::invalid(format!("line {}: {msg}", lineno + 1)),
                other => other,
            })?;
            entries.push(entry);
        }
        Ok(Manifest {
            base_dir: base_dir.into(),
            entries,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# id|path|label|cluster|onset_frame|duration_s|source\n");
        for e in &self.entries {
            s.push_str(&e.to_line());
            s.push('\n');
        }
        s
    }
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| KwsError::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Manifest::parse_str(&text, base)
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_text()).map_err(|e| KwsError::io(path, e))
}
