//! False rejection rate, false alarms per hour of negative audio, DET
//! curves and the FR-at-1-FA/hour operating point.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::corpus::{read_wav, Cluster, Label, Manifest, ManifestEntry, Source};
use crate::detector::{score_utterance, DetectorConfig};
use crate::error::{KwsError, Result};
use crate::frontend::Featurizer;
use crate::nn::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetCurvePoint {
    pub threshold: f64,
    pub fr_rate: f64,
    pub fa_per_hour: f64,
}

pub const DET_HEADER: &str = "threshold,fr_rate,fa_per_hour";

/// One negative utterance: its confidence and duration in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegativeScore {
    pub confidence: f64,
    pub duration_s: f64,
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// FR and FA/hour at every distinct confidence, plus one threshold just
/// below the minimum and one just above the maximum. Points are in
/// increasing threshold order.
pub fn sweep(positives: &[f64], negatives: &[NegativeScore]) -> Result<Vec<DetCurvePoint>> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(KwsError::invalid("sweep needs at least one positive and one negative score"));
    }
    if positives.iter().chain(negatives.iter().map(|n| &n.confidence)).any(|c| !c.is_finite()) {
        return Err(KwsError::NonFinite("confidence in sweep input".into()));
    }
    if negatives.iter().any(|n| n.duration_s.is_nan() || n.duration_s <= 0.0) {
        return Err(KwsError::invalid("negative durations must be positive"));
    }
    let hours = negatives.iter().map(|n| n.duration_s).sum::<f64>() / 3600.0;
    let pos = sorted(positives.to_vec());
    let neg = sorted(negatives.iter().map(|n| n.confidence).collect());
    let mut thresholds: Vec<f64> = sorted(pos.iter().chain(&neg).copied().collect());
    thresholds.dedup();
    let lo = thresholds[0].next_down();
    let hi = thresholds[thresholds.len() - 1].next_up();
    thresholds.insert(0, lo);
    thresholds.push(hi);
    Ok(thresholds
        .into_iter()
        .map(|th| {
            let rejected = pos.partition_point(|&c| c < th);
            let accepted = neg.len() - neg.partition_point(|&c| c < th);
            DetCurvePoint {
                threshold: th,
                fr_rate: rejected as f64 / pos.len() as f64,
                fa_per_hour: accepted as f64 / hours,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatingKind {
    /// A curve point sits exactly at the target.
    Exact,
    /// Linear in (FA, FR) between the two bracketing points.
    Interpolated,
    /// Every point is below the target; the maximal-FA point is reported.
    BelowTarget,
    /// Every point is above the target; the minimal-FA point is reported.
    AboveTarget,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub fr_rate: f64,
    pub threshold: f64,
    pub kind: OperatingKind,
}

/// FR at `target` false alarms per hour. For an interpolated point the
/// returned threshold is the lower of the two bracketing thresholds.
pub fn fr_at_fa(points: &[DetCurvePoint], target: f64) -> Result<OperatingPoint> {
    if points.is_empty() {
        return Err(KwsError::invalid("empty DET curve"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
    if let Some(p) = pts.iter().find(|p| p.fa_per_hour == target) {
        return Ok(OperatingPoint {
            fr_rate: p.fr_rate,
            threshold: p.threshold,
            kind: OperatingKind::Exact,
        });
    }
    if pts.iter().all(|p| p.fa_per_hour < target) {
        let p = pts[0];
        return Ok(OperatingPoint {
            fr_rate: p.fr_rate,
            threshold: p.threshold,
            kind: OperatingKind::BelowTarget,
        });
    }
    match pts.iter().rposition(|p| p.fa_per_hour > target) {
        Some(i) if i + 1 < pts.len() => {
            let (a, b) = (pts[i], pts[i + 1]);
            let fr = b.fr_rate + (a.fr_rate - b.fr_rate) * (target - b.fa_per_hour) / (a.fa_per_hour - b.fa_per_hour);
            Ok(OperatingPoint {
                fr_rate: fr,
                threshold: a.threshold,
                kind: OperatingKind::Interpolated,
            })
        }
        _ => {
            let p = pts[pts.len() - 1];
            Ok(OperatingPoint {
                fr_rate: p.fr_rate,
                threshold: p.threshold,
                kind: OperatingKind::AboveTarget,
            })
        }
    }
}

pub fn det_csv(points: &[DetCurvePoint]) -> String {
    let mut s = format!("{DET_HEADER}\n");
    for p in points {
        s.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", p.threshold, p.fr_rate, p.fa_per_hour));
    }
    s
}

/// The two evaluation sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestSet {
    /// Keyword utterances and real-domain fillers.
    Real,
    /// The real set plus synthetic confusion words as negatives.
    RealSyntCw,
}

impl TestSet {
    pub const ALL: [TestSet; 2] = [TestSet::Real, TestSet::RealSyntCw];

    pub fn name(self) -> &'static str {
        match self {
            TestSet::Real => "real",
            TestSet::RealSyntCw => "real+synt-cw",
        }
    }

    pub fn column_label(self) -> &'static str {
        match self {
            TestSet::Real => "real",
            TestSet::RealSyntCw => "real + synt-CW",
        }
    }

    /// File-name friendly form.
    pub fn slug(self) -> &'static str {
        match self {
            TestSet::Real => "real",
            TestSet::RealSyntCw => "real_synt-cw",
        }
    }

    pub fn includes(self, e: &ManifestEntry) -> bool {
        match (e.cluster, e.source) {
            (_, Source::Masked) => false,
            (Cluster::RealPos, _) | (Cluster::RealNeg, _) => true,
            (Cluster::SyntNeg, Source::Confusion) => self == TestSet::RealSyntCw,
            (Cluster::SyntNeg, _) => false,
        }
    }
}

impl fmt::Display for TestSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestSet {
    type Err = KwsError;

    fn from_str(s: &str) -> Result<Self> {
        TestSet::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| KwsError::invalid(format!("unknown test set '{s}'; valid: real, real+synt-cw")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredUtterance {
    pub utterance_id: String,
    pub label: Label,
    pub confidence: f64,
    pub best_window_start: usize,
    pub duration_s: f64,
}

pub const SCORES_HEADER: &str = "id,label,confidence,best_start_frame,duration_s";

pub fn scores_csv(scores: &[ScoredUtterance]) -> String {
    let mut s = format!("{SCORES_HEADER}\n");
    for u in scores {
        s.push_str(&format!(
            "{},{},{:.17e},{},{}\n",
            u.utterance_id, u.label, u.confidence, u.best_window_start, u.duration_s
        ));
    }
    s
}

pub fn parse_scores_csv(text: &str) -> Result<Vec<ScoredUtterance>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(SCORES_HEADER) {
        return Err(KwsError::format(format!("scores file must start with '{SCORES_HEADER}'")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = |what: &str| KwsError::format(format!("scores line {}: {what}", i + 2));
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            Ok(ScoredUtterance {
                utterance_id: f[0].to_string(),
                label: f[1].parse().map_err(|_| bad("bad label"))?,
                confidence: f[2].parse().map_err(|_| bad("bad confidence"))?,
                best_window_start: f[3].parse().map_err(|_| bad("bad start frame"))?,
                duration_s: f[4].parse().map_err(|_| bad("bad duration"))?,
            })
        })
        .collect()
}

/// DET curve of a scored set.
pub fn curve_of(scores: &[ScoredUtterance]) -> Result<Vec<DetCurvePoint>> {
    let pos: Vec<f64> = scores.iter().filter(|s| s.label.is_positive()).map(|s| s.confidence).collect();
    let neg: Vec<NegativeScore> = scores
        .iter()
        .filter(|s| !s.label.is_positive())
        .map(|s| NegativeScore {
            confidence: s.confidence,
            duration_s: s.duration_s,
        })
        .collect();
    sweep(&pos, &neg)
}

/// Scores every manifest entry, in manifest order, with whole-utterance
/// sliding windows.
pub fn score_manifest(
    params: &ModelParams,
    manifest: &Manifest,
    entries: &[&ManifestEntry],
    config: &DetectorConfig,
) -> Result<Vec<ScoredUtterance>> {
    entries
        .par_iter()
        .map(|e| {
            let buf = read_wav(manifest.resolve(e))?;
            let feat = Featurizer::new(buf.sample_rate())?.featurize(&buf)?;
            let r = score_utterance(params, &e.utterance_id, &feat, config)?;
            Ok(ScoredUtterance {
                utterance_id: e.utterance_id.clone(),
                label: e.label,
                confidence: r.confidence,
                best_window_start: r.best_window_start,
                duration_s: e.duration_s,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetEvaluation {
    pub test_set: TestSet,
    pub scores: Vec<ScoredUtterance>,
    pub curve: Vec<DetCurvePoint>,
    pub operating: OperatingPoint,
    pub negative_hours: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub detector: DetectorConfig,
    pub target_fa_per_hour: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            target_fa_per_hour: 1.0,
        }
    }
}

/// Scores the union of the requested test sets once, then builds each
/// set's curve and operating point.
pub fn evaluate(params: &ModelParams, manifest: &Manifest, sets: &[TestSet], config: &EvalConfig) -> Result<Vec<SetEvaluation>> {
    let wanted: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| sets.iter().any(|t| t.includes(e)))
        .collect();
    let scored = score_manifest(params, manifest, &wanted, &config.detector)?;
    sets.iter()
        .map(|&t| {
            let scores: Vec<ScoredUtterance> = wanted
                .iter()
                .zip(&scored)
                .filter(|(e, _)| t.includes(e))
                .map(|(_, s)| s.clone())
                .collect();
            let curve = curve_of(&scores).map_err(|e| KwsError::invalid(format!("test set {t}: {e}")))?;
            let operating = fr_at_fa(&curve, config.target_fa_per_hour)?;
            let negative_hours = scores.iter().filter(|s| !s.label.is_positive()).map(|s| s.duration_s).sum::<f64>() / 3600.0;
            Ok(SetEvaluation {
                test_set: t,
                scores,
                curve,
                operating,
                negative_hours,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub setup: String,
    pub test_set: TestSet,
    pub fr_at_1fa_percent: f64,
    pub operating_threshold: f64,
    pub kind: OperatingKind,
}

pub const REPORT_CSV_HEADER: &str = "setup,test_set,fr_at_1fa_percent,operating_threshold";

pub fn report_rows(setup: &str, evals: &[SetEvaluation]) -> Vec<ReportRow> {
    evals
        .iter()
        .map(|e| ReportRow {
            setup: setup.to_string(),
            test_set: e.test_set,
            fr_at_1fa_percent: 100.0 * e.operating.fr_rate,
            operating_threshold: e.operating.threshold,
            kind: e.operating.kind,
        })
        .collect()
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = format!("{REPORT_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.3},{:.16e}\n",
            r.setup, r.test_set, r.fr_at_1fa_percent, r.operating_threshold
        ));
    }
    s
}

/// Plain-text table: one line per setup, one FR column per test set.
pub fn report_text(rows: &[ReportRow], evals: &[SetEvaluation]) -> String {
    let mut s = String::from("# FR (%) at 1 false alarm per hour\n");
    s.push_str("# FA/hour denominator: total duration of negative test audio (confusion-word utterances count as negatives)\n");
    for e in evals {
        s.push_str(&format!(
            "# {}: {} positives, {} negatives, {:.4} negative hours\n",
            e.test_set,
            e.scores.iter().filter(|x| x.label.is_positive()).count(),
            e.scores.iter().filter(|x| !x.label.is_positive()).count(),
            e.negative_hours
        ));
    }
    let sets: Vec<TestSet> = TestSet::ALL.into_iter().filter(|t| rows.iter().any(|r| r.test_set == *t)).collect();
    let mut setups: Vec<&str> = Vec::new();
    for r in rows {
        if !setups.contains(&r.setup.as_str()) {
            setups.push(&r.setup);
        }
    }
    let width = setups.iter().map(|x| x.len()).max().unwrap_or(0).max("Training set".len());
    s.push_str(&format!("{:<width$}", "Training set"));
    for t in &sets {
        s.push_str(&format!("  {:>16}", t.column_label()));
    }
    s.push('\n');
    for setup in setups {
        s.push_str(&format!("{setup:<width$}"));
        for t in &sets {
            let cell = rows
                .iter()
                .find(|r| r.setup == setup && r.test_set == *t)
                .map(|r| {
                    let mark = if matches!(r.kind, OperatingKind::BelowTarget | OperatingKind::AboveTarget) { "*" } else { "" };
                    format!("{:.3}{mark}", r.fr_at_1fa_percent)
                })
                .unwrap_or_else(|| "-".into());
            s.push_str(&format!("  {cell:>16}"));
        }
        s.push('\n');
    }
    if rows.iter().any(|r| matches!(r.kind, OperatingKind::BelowTarget | OperatingKind::AboveTarget)) {
        s.push_str("* the curve does not reach 1 FA/hour; the nearest point is reported\n");
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| KwsError::io(path, e))
}

/// Writes `det_{set}.csv`, `scores_{set}.csv`, `report.txt` and `report.csv`.
pub fn write_evaluation(out_dir: &Path, setup: &str, evals: &[SetEvaluation]) -> Result<Vec<ReportRow>> {
    fs::create_dir_all(out_dir).map_err(|e| KwsError::io(out_dir, e))?;
    for e in evals {
        write(&out_dir.join(format!("det_{}.csv", e.test_set.slug())), &det_csv(&e.curve))?;
        write(&out_dir.join(format!("scores_{}.csv", e.test_set.slug())), &scores_csv(&e.scores))?;
    }
    let rows = report_rows(setup, evals);
    write(&out_dir.join("report.txt"), &report_text(&rows, evals))?;
    write(&out_dir.join("report.csv"), &report_csv(&rows))?;
    Ok(rows)
}
