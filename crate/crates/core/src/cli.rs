//! Command-line front end. Every value resolves as flag, then config file,
//! then built-in default; the resolved settings and seed go to stderr.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::augment::{mask_batch, MaskSpec};
use crate::config::{parse_array, ConfigFile};
use crate::corpus::{
    read_wav, write_manifest, write_wav, Cluster, DatasetSpec, Label, Manifest, ManifestEntry, Source,
};
use crate::detector::{detect_stream, score_utterance, DetectionResult, DetectorConfig, StreamConfig};
use crate::error::{KwsError, Result};
use crate::eval::{curve_of, det_csv, evaluate, fr_at_fa, parse_scores_csv, write_evaluation, EvalConfig, TestSet};
use crate::frontend::{write_features, Featurizer};
use crate::nn::{load_checkpoint, Architecture, ModelParams};
use crate::trainer::{train, Setup, TrainConfig};

const AFTER_HELP: &str = "Training setups:
  baseline       real(baseline): real positives + real negatives
  mask           real + masked-pos: adds 5 masked copies of each positive as negatives
  synt-cw        real + synt-wake: adds synthetic confusion words as negatives
  synt-cw-neg    real + synt-wake + synt-neg: also adds synthetic filler negatives
  synt-cw-coral  real + synt-wake + CORAL
  full-coral     real + synt-wake + synt-neg + CORAL

Exit codes: 0 success, 1 invalid input, 2 runtime failure.";

#[derive(Parser, Debug)]
#[command(name = "kws", version, about = "Keyword spotting with synthetic confusion words and CORAL", after_help = AFTER_HELP)]
pub struct Cli {
    /// Master seed for every random draw (default: 0)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for featurization and scoring (default: available parallelism)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Config file with [corpus], [train], [detect] and [eval] sections
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate train and test corpora under OUT/train and OUT/test
    GenCorpus(GenCorpusArgs),
    /// Write log-mel feature dumps (.kwsf) for a manifest or a single WAV
    Featurize(FeaturizeArgs),
    /// Write masked copies of every positive utterance plus a manifest
    Augment(AugmentArgs),
    /// Train a model under one of the six setups
    Train(TrainArgs),
    /// Score a test manifest and write DET curves and the FR report
    Eval(EvalArgs),
    /// Score utterances or a long recording against a threshold
    Detect(DetectArgs),
    /// Build a DET curve from a scores CSV written by `eval`
    DetCurve(DetCurveArgs),
}

#[derive(Args, Debug)]
pub struct GenCorpusArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Training speakers (default: 32)
    #[arg(long)]
    pub train_speakers: Option<usize>,
    /// Test speakers (default: 8)
    #[arg(long)]
    pub test_speakers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FeaturizeArgs {
    /// Manifest whose entries are featurized into OUT/<id>.kwsf
    #[arg(long, conflicts_with = "wav", required_unless_present = "wav")]
    pub manifest: Option<PathBuf>,
    /// Single WAV file; OUT is then the output file
    #[arg(long)]
    pub wav: Option<PathBuf>,
    /// Output directory (or file with --wav)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Manifest with positive utterances
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for wav/ and manifest.txt
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// baseline, mask, synt-cw, synt-cw-neg, synt-cw-coral or full-coral (default: baseline)
    #[arg(long)]
    pub setup: Option<String>,
    /// Training manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for checkpoints and train_log.csv
    #[arg(long)]
    pub out: PathBuf,
    /// Number of epochs (default: 100)
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial learning rate (default: 0.01)
    #[arg(long)]
    pub lr0: Option<f64>,
    /// Batch size (default: 32)
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Conv channels as c1,c2,c3 (default: 32,32,64)
    #[arg(long)]
    pub channels: Option<String>,
    /// Embedding width (default: 128)
    #[arg(long)]
    pub d_emb: Option<usize>,
    /// Checkpoint every N epochs, 0 for final only (default: 0)
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint file, a path without the .kwsm extension, or a training output directory
    #[arg(long)]
    pub model: PathBuf,
    /// Test manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// real, real+synt-cw or all (default: all)
    #[arg(long)]
    pub test: Option<String>,
    /// Output directory for DET curves, scores and report
    #[arg(long)]
    pub out: PathBuf,
    /// Window stride in frames (default: 1)
    #[arg(long)]
    pub stride: Option<usize>,
    /// Setup name shown in the report (default: model)
    #[arg(long)]
    pub setup: Option<String>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Checkpoint file, a path without the .kwsm extension, or a training output directory
    #[arg(long)]
    pub model: PathBuf,
    /// Manifest of utterances to score one by one
    #[arg(long, conflicts_with = "wav", required_unless_present = "wav")]
    pub manifest: Option<PathBuf>,
    /// Long recording scored in overlapping chunks
    #[arg(long)]
    pub wav: Option<PathBuf>,
    /// Trigger threshold on the keyword confidence (default: 0.5)
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Window stride in frames (default: 1)
    #[arg(long)]
    pub stride: Option<usize>,
    /// Output CSV (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DetCurveArgs {
    /// Scores CSV written by `eval`
    #[arg(long)]
    pub scores: PathBuf,
    /// Output DET CSV
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` (including the program name) and runs it. Returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

struct Ctx {
    seed: u64,
    file: ConfigFile,
}

impl Ctx {
    /// Flag, else config value, else default.
    fn pick<T>(&self, flag: Option<T>, section: &str, key: &str, default: T) -> Result<T>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.file.get(section, key)?.unwrap_or(default)),
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let seed = match cli.seed {
        Some(s) => s,
        None => file.get("", "seed")?.unwrap_or(0),
    };
    let jobs = match cli.jobs {
        Some(j) => Some(j),
        None => file.get("", "jobs")?,
    };
    if jobs == Some(0) {
        return Err(KwsError::invalid("--jobs must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| KwsError::Invalid(format!("cannot start worker pool: {e}")))?;
    let ctx = Ctx { seed, file };
    pool.install(|| match cli.command {
        Command::GenCorpus(a) => gen_corpus(&ctx, a),
        Command::Featurize(a) => featurize(&ctx, a),
        Command::Augment(a) => augment(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Detect(a) => detect_cmd(&ctx, a),
        Command::DetCurve(a) => det_curve(&ctx, a),
    })
}

fn announce<K: AsRef<str>>(seed: u64, sections: &[(&str, Vec<(K, String)>)]) {
    let mut s = format!("# resolved configuration\nseed = {seed}\n");
    for (name, kv) in sections {
        let _ = writeln!(s, "[{name}]");
        for (k, v) in kv {
            let _ = writeln!(s, "{} = {v}", k.as_ref());
        }
    }
    eprint!("{s}");
}

fn gen_corpus(ctx: &Ctx, a: GenCorpusArgs) -> Result<()> {
    let mut ds = DatasetSpec::desk_scale(ctx.seed);
    let sr = ctx.pick(None, "corpus", "sample_rate", ds.train.sample_rate)?;
    ds.train.sample_rate = sr;
    ds.test.sample_rate = sr;
    ds.train.n_speakers = ctx.pick(a.train_speakers, "corpus", "train_speakers", ds.train.n_speakers)?;
    ds.test.n_speakers = ctx.pick(a.test_speakers, "corpus", "test_speakers", ds.test.n_speakers)?;
    for (prefix, spec) in [("train", &mut ds.train), ("test", &mut ds.test)] {
        spec.n_pos = ctx.pick(None, "corpus", &format!("{prefix}_pos"), spec.n_pos)?;
        spec.n_neg = ctx.pick(None, "corpus", &format!("{prefix}_neg"), spec.n_neg)?;
        spec.n_confusion = ctx.pick(None, "corpus", &format!("{prefix}_confusion"), spec.n_confusion)?;
        spec.n_synt_neg = ctx.pick(None, "corpus", &format!("{prefix}_synt_neg"), spec.n_synt_neg)?;
    }
    let row = |p: &str, s: &crate::corpus::CorpusSpec| {
        vec![
            (format!("{p}_speakers"), s.n_speakers.to_string()),
            (format!("{p}_pos"), s.n_pos.to_string()),
            (format!("{p}_neg"), s.n_neg.to_string()),
            (format!("{p}_confusion"), s.n_confusion.to_string()),
            (format!("{p}_synt_neg"), s.n_synt_neg.to_string()),
        ]
    };
    let mut kv = vec![("sample_rate".to_string(), sr.to_string())];
    kv.extend(row("train", &ds.train));
    kv.extend(row("test", &ds.test));
    announce(ctx.seed, &[("corpus", kv)]);
    let (tr, te) = ds.generate(&a.out)?;
    eprintln!(
        "wrote {} training and {} test utterances under {}",
        tr.entries.len(),
        te.entries.len(),
        a.out.display()
    );
    Ok(())
}

fn featurize(ctx: &Ctx, a: FeaturizeArgs) -> Result<()> {
    announce::<&str>(ctx.seed, &[]);
    if let Some(wav) = a.wav {
        let buf = read_wav(&wav)?;
        let feat = Featurizer::new(buf.sample_rate())?.featurize(&buf)?;
        if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| KwsError::io(dir, e))?;
        }
        return write_features(&feat, &a.out);
    }
    let manifest = crate::corpus::parse_manifest(a.manifest.as_ref().expect("clap enforces one input"))?;
    fs::create_dir_all(&a.out).map_err(|e| KwsError::io(&a.out, e))?;
    use rayon::prelude::*;
    manifest.entries.par_iter().try_for_each(|e| {
        let buf = read_wav(manifest.resolve(e))?;
        let feat = Featurizer::new(buf.sample_rate())?.featurize(&buf)?;
        write_features(&feat, a.out.join(format!("{}.kwsf", e.utterance_id)))
    })?;
    eprintln!("wrote {} feature files to {}", manifest.entries.len(), a.out.display());
    Ok(())
}

fn mask_spec(ctx: &Ctx) -> Result<MaskSpec> {
    let d = MaskSpec::default();
    let spec = MaskSpec {
        ratio_min: ctx.pick(None, "train", "mask_ratio_min", d.ratio_min)?,
        ratio_max: ctx.pick(None, "train", "mask_ratio_max", d.ratio_max)?,
        noise_rms: ctx.pick(None, "train", "mask_noise_rms", d.noise_rms)?,
        n_variants: ctx.pick(None, "train", "mask_variants", d.n_variants)?,
        mode: ctx.pick(None, "train", "mask_mode", d.mode)?,
        seed: ctx.seed,
    };
    spec.validate()?;
    Ok(spec)
}

fn mask_kv(m: &MaskSpec) -> Vec<(&'static str, String)> {
    vec![
        ("mask_mode", m.mode.to_string()),
        ("mask_ratio_min", m.ratio_min.to_string()),
        ("mask_ratio_max", m.ratio_max.to_string()),
        ("mask_noise_rms", m.noise_rms.to_string()),
        ("mask_variants", m.n_variants.to_string()),
    ]
}

fn augment(ctx: &Ctx, a: AugmentArgs) -> Result<()> {
    let spec = mask_spec(ctx)?;
    announce(ctx.seed, &[("train", mask_kv(&spec))]);
    let manifest = crate::corpus::parse_manifest(&a.manifest)?;
    let wav_dir = a.out.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| KwsError::io(&wav_dir, e))?;
    use rayon::prelude::*;
    let groups = manifest
        .entries
        .par_iter()
        .filter(|e| e.label == Label::Positive)
        .map(|e| {
            let buf = read_wav(manifest.resolve(e))?;
            mask_batch(&buf, &spec, &e.utterance_id)?
                .into_iter()
                .enumerate()
                .map(|(v, m)| {
                    let id = format!("{}-mask{v}", e.utterance_id);
                    let rel = PathBuf::from("wav").join(format!("{id}.wav"));
                    write_wav(&m.value, a.out.join(&rel))?;
                    Ok(ManifestEntry {
                        utterance_id: id,
                        path: rel,
                        label: Label::Negative,
                        cluster: Cluster::RealNeg,
                        onset_frame: e.onset_frame,
                        duration_s: m.value.duration_s(),
                        source: Source::Masked,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let out = Manifest {
        base_dir: a.out.clone(),
        entries: groups.into_iter().flatten().collect(),
    };
    write_manifest(&out, a.out.join("manifest.txt"))?;
    eprintln!("wrote {} masked utterances to {}", out.entries.len(), a.out.display());
    Ok(())
}

fn train_config(ctx: &Ctx, a: &TrainArgs) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let setup: Setup = match &a.setup {
        Some(s) => s.parse()?,
        None => ctx.pick(None, "train", "setup", d.setup)?,
    };
    let channels = match &a.channels {
        Some(c) => parse_array(c)?,
        None => ctx.file.get_array("train", "channels")?.unwrap_or(d.arch.channels),
    };
    let arch = Architecture {
        channels,
        d_emb: ctx.pick(a.d_emb, "train", "d_emb", d.arch.d_emb)?,
        tap: ctx.pick(None, "train", "tap", d.arch.tap)?,
        ..d.arch
    };
    let quota = ctx.file.get_array::<usize, 3>("train", "quota")?;
    let cfg = TrainConfig {
        setup,
        epochs: ctx.pick(a.epochs, "train", "epochs", d.epochs)?,
        lr0: ctx.pick(a.lr0, "train", "lr0", d.lr0)?,
        momentum: ctx.pick(None, "train", "momentum", d.momentum)?,
        plateau_patience: ctx.pick(None, "train", "patience", d.plateau_patience)?,
        lr_decay: ctx.pick(None, "train", "lr_decay", d.lr_decay)?,
        lr_min: ctx.pick(None, "train", "lr_min", d.lr_min)?,
        batch_size: ctx.pick(a.batch_size, "train", "batch_size", d.batch_size)?,
        quota: quota.or(d.quota),
        min_pos_fraction: ctx.pick(None, "train", "min_pos_fraction", d.min_pos_fraction)?,
        coral_eps: ctx.pick(None, "train", "coral_eps", d.coral_eps)?,
        arch,
        mask: mask_spec(ctx)?,
        seed: ctx.seed,
        checkpoint_every: ctx.pick(a.checkpoint_every, "train", "checkpoint_every", d.checkpoint_every)?,
        record_timing: ctx.pick(None, "train", "record_timing", d.record_timing)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train_kv(c: &TrainConfig) -> Vec<(&'static str, String)> {
    let q = c.cluster_quota();
    let mut kv = vec![
        ("setup", c.setup.to_string()),
        ("epochs", c.epochs.to_string()),
        ("lr0", c.lr0.to_string()),
        ("momentum", c.momentum.to_string()),
        ("patience", c.plateau_patience.to_string()),
        ("lr_decay", c.lr_decay.to_string()),
        ("lr_min", c.lr_min.to_string()),
        ("batch_size", c.batch_size.to_string()),
        ("quota", format!("{},{},{}", q[0], q[1], q[2])),
        ("min_pos_fraction", c.min_pos_fraction.to_string()),
        ("coral_eps", c.coral_eps.to_string()),
        (
            "channels",
            format!("{},{},{}", c.arch.channels[0], c.arch.channels[1], c.arch.channels[2]),
        ),
        ("d_emb", c.arch.d_emb.to_string()),
        ("tap", c.arch.tap.to_string()),
        ("checkpoint_every", c.checkpoint_every.to_string()),
        ("record_timing", c.record_timing.to_string()),
    ];
    kv.extend(mask_kv(&c.mask));
    kv
}

fn train_cmd(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let cfg = train_config(ctx, &a)?;
    announce(ctx.seed, &[("train", train_kv(&cfg))]);
    let manifest = crate::corpus::parse_manifest(&a.manifest)?;
    let out = train(&cfg, &manifest, Some(&a.out))?;
    if let Some(last) = out.log.last() {
        eprintln!(
            "trained {} epochs ({} steps): ce {:.6}, coral ratio {:.6}; wrote {}",
            out.log.len(),
            last.step,
            last.ce,
            last.coral_ratio,
            a.out.join("final.kwsm").display()
        );
    }
    Ok(())
}

/// Accepts a checkpoint file, the same path without `.kwsm`, or a training
/// output directory holding `final.kwsm`.
pub fn resolve_model(path: &Path) -> Result<ModelParams> {
    let candidates = [
        path.to_path_buf(),
        path.join("final.kwsm"),
        path.with_extension("kwsm"),
    ];
    for c in &candidates {
        if c.is_file() {
            return load_checkpoint(c);
        }
    }
    Err(KwsError::invalid(format!(
        "no checkpoint at {} (tried the path, DIR/final.kwsm and PATH.kwsm)",
        path.display()
    )))
}

fn detector_config(ctx: &Ctx, threshold: Option<f64>, stride: Option<usize>, section: &str) -> Result<DetectorConfig> {
    let d = DetectorConfig::default();
    Ok(DetectorConfig {
        threshold: ctx.pick(threshold, "detect", "threshold", d.threshold)?,
        stride: ctx.pick(stride, section, "stride", d.stride)?,
        ..d
    })
}

fn eval_cmd(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let detector = detector_config(ctx, None, a.stride, "eval")?;
    let config = EvalConfig {
        detector,
        target_fa_per_hour: ctx.pick(None, "eval", "target_fa_per_hour", 1.0)?,
    };
    let test: String = ctx.pick(a.test.clone(), "eval", "test", "all".to_string())?;
    let sets: Vec<TestSet> = if test == "all" {
        TestSet::ALL.to_vec()
    } else {
        vec![test.parse()?]
    };
    let label = a.setup.clone().unwrap_or_else(|| "model".to_string());
    announce(
        ctx.seed,
        &[(
            "eval",
            vec![
                ("test", test.clone()),
                ("stride", detector.stride.to_string()),
                ("target_fa_per_hour", config.target_fa_per_hour.to_string()),
            ],
        )],
    );
    let params = resolve_model(&a.model)?;
    let manifest = crate::corpus::parse_manifest(&a.manifest)?;
    let evals = evaluate(&params, &manifest, &sets, &config)?;
    let rows = write_evaluation(&a.out, &label, &evals)?;
    for r in rows {
        eprintln!(
            "{} on {}: FR {:.3}% at {} FA/hour (threshold {:.6})",
            r.setup, r.test_set, r.fr_at_1fa_percent, config.target_fa_per_hour, r.operating_threshold
        );
    }
    Ok(())
}

fn detect_cmd(ctx: &Ctx, a: DetectArgs) -> Result<()> {
    let config = detector_config(ctx, a.threshold, a.stride, "detect")?;
    let d = StreamConfig::default();
    let stream = StreamConfig {
        chunk_s: ctx.pick(None, "detect", "chunk_s", d.chunk_s)?,
        hop_s: ctx.pick(None, "detect", "hop_s", d.hop_s)?,
    };
    announce(
        ctx.seed,
        &[(
            "detect",
            vec![
                ("threshold", config.threshold.to_string()),
                ("stride", config.stride.to_string()),
                ("chunk_s", stream.chunk_s.to_string()),
                ("hop_s", stream.hop_s.to_string()),
            ],
        )],
    );
    let params = resolve_model(&a.model)?;
    let results: Vec<DetectionResult> = if let Some(wav) = &a.wav {
        let buf = read_wav(wav)?;
        let id = wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        detect_stream(&params, &id, &buf, &config, &stream)?
    } else {
        let manifest = crate::corpus::parse_manifest(a.manifest.as_ref().expect("clap enforces one input"))?;
        use rayon::prelude::*;
        manifest
            .entries
            .par_iter()
            .map(|e| {
                let buf = read_wav(manifest.resolve(e))?;
                let feat = Featurizer::new(buf.sample_rate())?.featurize(&buf)?;
                score_utterance(&params, &e.utterance_id, &feat, &config)
            })
            .collect::<Result<_>>()?
    };
    let mut csv = format!("{}\n", DetectionResult::CSV_HEADER);
    for r in &results {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    match &a.out {
        Some(p) => fs::write(p, csv).map_err(|e| KwsError::io(p, e))?,
        None => print!("{csv}"),
    }
    eprintln!(
        "{} of {} triggered at threshold {}",
        results.iter().filter(|r| r.triggered).count(),
        results.len(),
        config.threshold
    );
    Ok(())
}

fn det_curve(ctx: &Ctx, a: DetCurveArgs) -> Result<()> {
    let target: f64 = ctx.pick(None, "eval", "target_fa_per_hour", 1.0)?;
    announce(ctx.seed, &[("eval", vec![("target_fa_per_hour", target.to_string())])]);
    let text = fs::read_to_string(&a.scores).map_err(|e| KwsError::io(&a.scores, e))?;
    let scores = parse_scores_csv(&text)?;
    let curve = curve_of(&scores)?;
    fs::write(&a.out, det_csv(&curve)).map_err(|e| KwsError::io(&a.out, e))?;
    let op = fr_at_fa(&curve, target)?;
    eprintln!(
        "FR {:.3}% at {target} FA/hour (threshold {:.6}, {:?})",
        100.0 * op.fr_rate,
        op.threshold,
        op.kind
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn bad_setup_and_unknown_flag_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.txt");
        fs::write(&m, "").unwrap();
        let out = dir.path().join("o");
        let argv = |extra: &[&str]| -> Vec<String> {
            let mut v = vec!["kws", "train", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()];
            v.extend_from_slice(extra);
            v.into_iter().map(String::from).collect()
        };
        assert_eq!(run(argv(&["--setup", "bogus"])), 1);
        assert_eq!(run(argv(&["--bogus-flag"])), 1);
        assert_eq!(run(["kws", "eval"]), 1);
    }

    #[test]
    fn every_subcommand_documents_its_flags() {
        let mut cmd = Cli::command();
        for sub in cmd.get_subcommands_mut() {
            let help = sub.render_long_help().to_string();
            for arg in sub.get_arguments() {
                if let Some(long) = arg.get_long() {
                    assert!(help.contains(&format!("--{long}")), "{} --{long}", sub.get_name());
                }
            }
        }
    }

    #[test]
    fn flag_beats_config_beats_default() {
        let file = ConfigFile::parse("[train]\nepochs = 7\nlr0 = 0.5\n").unwrap();
        let ctx = Ctx { seed: 3, file };
        let a = TrainArgs {
            setup: None,
            manifest: PathBuf::new(),
            out: PathBuf::new(),
            epochs: Some(2),
            lr0: None,
            batch_size: None,
            channels: Some("2,2,4".into()),
            d_emb: None,
            checkpoint_every: None,
        };
        let c = train_config(&ctx, &a).unwrap();
        assert_eq!(c.epochs, 2);
        assert_eq!(c.lr0, 0.5);
        assert_eq!(c.momentum, 0.9);
        assert_eq!(c.arch.channels, [2, 2, 4]);
        assert_eq!(c.seed, 3);
        assert_eq!(c.mask.seed, 3);
    }
}
