//! Command-line front end. Every subcommand reads and writes the file
//! formats of the library modules; all randomness derives from `--seed`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand_distr::{Distribution, StandardNormal};

use aenet::augment::{augment_dataset, materialize, Manifest};
use aenet::dsp::load_wav;
use aenet::features::{extract_features, features_to_text, window_average, FEATURE_FRAMES};
use aenet::highlight::{
    mean_average_precision, read_moments, score_moments, scores_to_text, train_ranker, write_moments, LossKind, LossSpec,
    MomentRecord, RankerConfig,
};
use aenet::mil::{bag_batch_loss, Aggregation};
use aenet::nnet::{grad_check, grad_check_head, load_checkpoint, save_checkpoint, GradCheckConfig, Network, Tensor};
use aenet::rng::{rng_for, stage};
use aenet::synth::{default_classes, read_moment_labels, synth_corpus, synth_highlight_set, write_moment_labels, VIDEO_DIR};
use aenet::training::{
    evaluate, load_features, split_dataset, train_with, with_augmented, write_metrics, EvalReport, RunConfig,
};
use aenet::zoo::{network_from_checkpoint, ArchId, ArchSpec};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const MODEL_FILE: &str = "model.aen";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SPLIT_FILE: &str = "split.tsv";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Parser)]
#[command(name = "aenet", version, about = "Audio event CNN toolkit")]
pub struct Cli {
    /// Global random seed; overrides `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Config file of `key=value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic event corpus or highlight set.
    Synth(SynthArgs),
    /// Append EMDA and VTLP entries to a manifest.
    Augment(AugmentArgs),
    /// Train a classifier.
    Train(TrainArgs),
    /// Evaluate a checkpoint with patch voting.
    Eval(EvalArgs),
    /// Extract AENet features.
    Extract(ExtractArgs),
    /// Train the highlight ranker and score held-out videos.
    Rank(RankArgs),
    /// Mean average precision of a scores file.
    Map(MapArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub clips_per_class: usize,
    /// Write a highlight set instead of a classification corpus.
    #[arg(long)]
    pub highlight: bool,
    #[arg(long, default_value_t = 20)]
    pub videos: usize,
    #[arg(long, default_value_t = 8)]
    pub moments: usize,
    #[arg(long, default_value_t = 0.25)]
    pub positive_rate: f64,
    /// Event class marking highlight moments.
    #[arg(long, default_value = "surf")]
    pub event: String,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output manifest; must sit next to the input.
    #[arg(long)]
    pub out: PathBuf,
    /// `augment.*` overrides such as `augment.n_total=96`.
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Skip the per-epoch held-out evaluation.
    #[arg(long)]
    pub no_eval: bool,
    /// `key=value` config overrides.
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split file from `train`; without it every raw clip is evaluated.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub subset: String,
    /// Report file; printed to standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// WAV file or directory of WAV files.
    #[arg(long, conflicts_with = "labels", required_unless_present = "labels")]
    pub input: Option<PathBuf>,
    /// Highlight-set labels; writes a moments file instead of patch features.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub moments: PathBuf,
    /// Videos (in id order) used for training; the rest are scored.
    #[arg(long)]
    pub train_videos: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "ranking")]
    pub loss: LossKind,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 2)]
    pub instances: usize,
    /// Use the literal loss forms without the hinge clamp.
    #[arg(long)]
    pub printed_losses: bool,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub moments: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "A-mini")]
    pub arch: String,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// `none`, `max` or `noisy_or`.
    #[arg(long, default_value = "none")]
    pub aggregation: String,
    #[arg(long, default_value_t = 2)]
    pub bag_size: usize,
    /// Scale analytic gradients by this factor to exercise the detector.
    #[arg(long)]
    pub corrupt: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

/// Parse `argv` and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            exit_code(&e)
        }
    }
}

/// Context chain down to the first library error, whose message already
/// includes its own source.
fn describe(e: &anyhow::Error) -> String {
    let mut parts = Vec::new();
    for c in e.chain() {
        parts.push(c.to_string());
        if c.is::<aenet::Error>() {
            break;
        }
    }
    parts.join(": ")
}

fn exit_code(e: &anyhow::Error) -> i32 {
    match e.chain().find_map(|c| c.downcast_ref::<aenet::Error>()) {
        Some(aenet::Error::Numerical(_)) => EXIT_NUMERICAL,
        Some(aenet::Error::Config(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let file_cfg = match &cli.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    let jobs = cli.jobs.unwrap_or(file_cfg.jobs);
    if jobs == 0 {
        return Err(aenet::Error::Config("--jobs must be at least 1".into()).into());
    }
    // The global pool can only be built once per process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    let seed = cli.seed.unwrap_or(file_cfg.seed);
    let config = |overrides: &[String]| -> Result<RunConfig> {
        let mut cfg = file_cfg.clone();
        cfg.apply(overrides.iter().map(String::as_str))?;
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        cfg.jobs = jobs;
        cfg.validate()?;
        eprint!("{}", cfg.to_text());
        Ok(cfg)
    };
    match &cli.command {
        Command::Synth(a) => synth(a, seed),
        Command::Augment(a) => augment(a, &config(&a.overrides)?),
        Command::Train(a) => train(a, &config(&a.overrides)?),
        Command::Eval(a) => eval(a, &config(&a.overrides)?),
        Command::Extract(a) => extract(a),
        Command::Rank(a) => rank(a, seed),
        Command::Map(a) => map(a),
        Command::Gradcheck(a) => gradcheck(a, seed),
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    eprintln!("seed={seed}\n{a:?}");
    mkdir(&a.out)?;
    let classes = default_classes();
    if a.highlight {
        let event = classes
            .iter()
            .find(|c| c.name == a.event)
            .ok_or_else(|| aenet::Error::Config(format!("unknown event class {:?}", a.event)))?;
        let labels = synth_highlight_set(event, a.videos, a.moments, a.positive_rate, seed, &a.out)?;
        write_moment_labels(&a.out.join(LABELS_FILE), &labels)?;
        eprintln!("wrote {} videos, {} moments", a.videos, labels.len());
    } else {
        let manifest = synth_corpus(&classes, a.clips_per_class, seed, &a.out)?;
        manifest.write(&a.out.join(MANIFEST_FILE))?;
        eprintln!("wrote {} clips", manifest.len());
    }
    Ok(())
}

fn augment(a: &AugmentArgs, cfg: &RunConfig) -> Result<()> {
    let base = base_dir(&a.manifest);
    if base_dir(&a.out) != base {
        bail!(aenet::Error::Config("augmented manifest must be written next to its source".into()));
    }
    let manifest = Manifest::read(&a.manifest)?;
    let out = augment_dataset(
        &manifest,
        cfg.augment_n_total,
        cfg.augment_emda_fraction,
        cfg.seed,
        cfg.augment_max_delay,
    )?;
    let rendered = materialize(&out, &base)?;
    out.write(&a.out)?;
    eprintln!("{} entries, {rendered} rendered", out.len());
    Ok(())
}

/// Split file body: `clip_id<TAB>train|test`.
fn split_text(train: &Manifest, test: &Manifest) -> String {
    let mut s = String::new();
    for (m, tag) in [(train, "train"), (test, "test")] {
        for e in &m.entries {
            s.push_str(&format!("{}\t{tag}\n", e.clip_id));
        }
    }
    s
}

fn read_split(path: &Path, manifest: &Manifest, subset: &str) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Manifest::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (id, tag) = line
            .split_once('\t')
            .ok_or_else(|| aenet::Error::Parse(format!("bad split line {line:?}")))?;
        if tag == subset {
            let entry = manifest
                .find(id)
                .ok_or_else(|| aenet::Error::Parse(format!("clip {id} not in manifest")))?;
            out.entries.push(entry.clone());
        }
    }
    Ok(out)
}

fn n_classes(manifest: &Manifest) -> usize {
    manifest.classes().iter().max().map_or(0, |&c| c as usize + 1)
}

fn train(a: &TrainArgs, cfg: &RunConfig) -> Result<()> {
    let base = base_dir(&a.manifest);
    let full = Manifest::read(&a.manifest)?;
    let (train_raw, test) = split_dataset(&full, cfg.train_fraction, cfg.seed)?;
    let mut pool = with_augmented(&full, &train_raw);
    if cfg.augment_n_total > 0 {
        let extra = augment_dataset(&train_raw, cfg.augment_n_total, cfg.augment_emda_fraction, cfg.seed, cfg.augment_max_delay)?;
        pool.entries.extend(extra.entries.into_iter().skip(train_raw.len()).map(|mut e| {
            e.clip_id = format!("train-{}", e.clip_id);
            e
        }));
    }
    // Augmented sources resolve against the raw corpus plus the new entries.
    let mut lookup = full.clone();
    lookup.entries.extend(pool.entries.iter().filter(|e| full.find(&e.clip_id).is_none()).cloned());
    let n_classes = n_classes(&full);
    let train_clips = load_features(&lookup, &pool, &base)?;
    let test_clips = if a.no_eval { Vec::new() } else { load_features(&full, &test, &base)? };
    eprintln!("training on {} clips ({} raw), {} held out", train_clips.len(), train_raw.len(), test.len());
    let held_out = (!a.no_eval).then_some(test_clips.as_slice());
    let outcome = train_with(cfg, n_classes, &train_clips, held_out, &mut |r| {
        eprintln!("epoch {:>3} {:<5} loss={:.5} accuracy={:.4}", r.epoch, r.split, r.loss, r.accuracy)
    })?;
    mkdir(&a.out_dir)?;
    save_checkpoint(&a.out_dir.join(MODEL_FILE), &outcome.checkpoint)?;
    write_metrics(&a.out_dir.join(METRICS_FILE), &outcome.metrics)?;
    std::fs::write(a.out_dir.join(SPLIT_FILE), split_text(&train_raw, &test))?;
    std::fs::write(a.out_dir.join(CONFIG_FILE), cfg.to_text())?;
    if outcome.bags_with_replacement {
        eprintln!("note: some MIL bags were drawn with replacement");
    }
    Ok(())
}

fn eval(a: &EvalArgs, cfg: &RunConfig) -> Result<()> {
    let base = base_dir(&a.manifest);
    let full = Manifest::read(&a.manifest)?;
    let subset = match &a.split {
        Some(p) => read_split(p, &full, &a.subset)?,
        None => Manifest {
            entries: full.entries.iter().filter(|e| e.origin == aenet::augment::Origin::Raw).cloned().collect(),
        },
    };
    let ck = load_checkpoint(&a.checkpoint)?;
    let net = network_from_checkpoint(&ck)?;
    let clips = load_features(&full, &subset, &base)?;
    let report = evaluate(&net, &clips, ck.n_classes, ck.input_frames, cfg.eval_overlap, cfg.voting)?;
    match &a.out {
        Some(p) => std::fs::write(p, report.to_text()).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{}", report.to_text()),
    }
    eprintln!("accuracy {:.4} on {} clips", report.accuracy, clips.len());
    Ok(())
}

fn wav_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(input)
            .with_context(|| format!("listing {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "wav"))
            .collect();
        files.sort();
        Ok(files)
    } else {
        Ok(vec![input.to_path_buf()])
    }
}

fn extract(a: &ExtractArgs) -> Result<()> {
    eprintln!("{a:?}");
    let ck = load_checkpoint(&a.checkpoint)?;
    let net = network_from_checkpoint(&ck)?;
    let frames = ck.input_frames;
    if frames != FEATURE_FRAMES {
        eprintln!("note: checkpoint uses {frames}-frame patches");
    }
    if let Some(labels_path) = &a.labels {
        let labels = read_moment_labels(labels_path)?;
        let root = base_dir(labels_path).join(VIDEO_DIR);
        let mut by_video: BTreeMap<&str, Vec<_>> = BTreeMap::new();
        for l in &labels {
            by_video.entry(&l.video_id).or_default().push(l);
        }
        let mut records = Vec::new();
        for (video, moments) in by_video {
            let w = load_wav(&root.join(format!("{video}.wav")))?;
            let feats = extract_features(&net, &w, frames, a.overlap)?;
            for m in moments {
                let feature = window_average(&feats, m.t_start, m.t_end)
                    .ok_or_else(|| aenet::Error::Domain(format!("no patch covers moment {} of {video}", m.moment_id)))?;
                records.push(MomentRecord {
                    video_id: video.to_string(),
                    moment_id: m.moment_id as u32,
                    label: m.label,
                    feature,
                });
            }
        }
        write_moments(&a.out, &records)?;
        eprintln!("wrote {} moments", records.len());
    } else {
        let input = a.input.as_ref().expect("clap enforces input or labels");
        let mut text = String::new();
        for path in wav_inputs(input)? {
            let feats = extract_features(&net, &load_wav(&path)?, frames, a.overlap)?;
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            text.push_str(&features_to_text(&id, &feats));
        }
        std::fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))?;
    }
    Ok(())
}

/// Split moments by video id: the first `n` videos train, the rest are scored.
pub fn split_videos(moments: &[MomentRecord], n: Option<usize>) -> (Vec<MomentRecord>, Vec<MomentRecord>) {
    let ids: Vec<&str> = {
        let mut v: Vec<&str> = moments.iter().map(|m| m.video_id.as_str()).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let n = n.unwrap_or(ids.len() / 2).min(ids.len());
    let train_ids: std::collections::HashSet<&str> = ids[..n].iter().copied().collect();
    moments.iter().cloned().partition(|m| train_ids.contains(m.video_id.as_str()))
}

fn rank(a: &RankArgs, seed: u64) -> Result<()> {
    eprintln!("seed={seed}\n{a:?}");
    let moments = read_moments(&a.moments)?;
    let (train, test) = split_videos(&moments, a.train_videos);
    if test.is_empty() {
        bail!(aenet::Error::Config("no held-out videos to score".into()));
    }
    let cfg = RankerConfig {
        runs: a.runs,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        loss: LossSpec {
            kind: a.loss,
            delta: a.delta,
            instances: a.instances,
            printed: a.printed_losses,
        },
        seed,
        ..RankerConfig::default()
    };
    let model = train_ranker(&train, &cfg)?;
    for v in &model.excluded_videos {
        eprintln!("note: video {v} excluded from pairing");
    }
    let scores = score_moments(&model, &test)?;
    if scores.iter().any(|s| !s.is_finite()) {
        bail!(aenet::Error::Numerical("non-finite H-factor".into()));
    }
    std::fs::write(&a.out, scores_to_text(&test, &scores)).with_context(|| format!("writing {}", a.out.display()))?;
    if let Ok(r) = mean_average_precision(&test, &scores) {
        eprintln!("held-out mAP {:.4} over {} videos", r.map, r.per_video.len());
    }
    Ok(())
}

fn map(a: &MapArgs) -> Result<()> {
    let moments = read_moments(&a.moments)?;
    let text = std::fs::read_to_string(&a.scores).with_context(|| format!("reading {}", a.scores.display()))?;
    let mut scores: BTreeMap<(String, u32), f64> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let parsed = (f.len() == 3)
            .then(|| Some(((f[0].to_string(), f[1].parse().ok()?), f[2].parse().ok()?)))
            .flatten();
        let (key, s) = parsed.ok_or_else(|| aenet::Error::Parse(format!("bad score line {line:?}")))?;
        scores.insert(key, s);
    }
    let scored: Vec<MomentRecord> = moments
        .into_iter()
        .filter(|m| scores.contains_key(&(m.video_id.clone(), m.moment_id)))
        .collect();
    let values: Vec<f64> = scored.iter().map(|m| scores[&(m.video_id.clone(), m.moment_id)]).collect();
    if scored.len() != scores.len() {
        bail!(aenet::Error::Parse("scores file names moments missing from the moments file".into()));
    }
    let report = mean_average_precision(&scored, &values)?;
    for (video, ap) in &report.per_video {
        eprintln!("{video}\t{ap:.4}");
    }
    for video in &report.excluded {
        eprintln!("note: {video} has no highlight moment, excluded");
    }
    println!("mAP {:.6}", report.map);
    Ok(())
}

fn gradcheck(a: &GradcheckArgs, seed: u64) -> Result<()> {
    eprintln!("seed={seed}\n{a:?}");
    let spec = ArchSpec::new(ArchId::parse(&a.arch)?, a.classes, a.frames);
    let mut net: Network<f64> = spec.build()?;
    net.init_he(&mut rng_for(seed, stage::INIT, 0));
    let mut rng = rng_for(seed, stage::GRADCHECK, u64::MAX);
    let mut shape = vec![a.batch];
    shape.extend_from_slice(net.input_shape());
    let len: usize = shape.iter().product();
    let x = Tensor::from_vec(&shape, (0..len).map(|_| StandardNormal.sample(&mut rng)).collect());
    let cfg = GradCheckConfig {
        samples: a.samples,
        seed,
        dropout_seed: Some(seed),
        corrupt: a.corrupt,
        tolerance: a.tolerance,
        ..GradCheckConfig::default()
    };
    let report = match a.aggregation.as_str() {
        "none" => {
            let labels: Vec<usize> = (0..a.batch).map(|i| i % a.classes).collect();
            grad_check(&net, &x, &labels, &cfg)?
        }
        other => {
            let agg: Aggregation = other.parse()?;
            if !a.batch.is_multiple_of(a.bag_size) {
                bail!(aenet::Error::Config("batch must be a multiple of bag_size".into()));
            }
            let logits = Network::new(net.input_shape(), net.layers()[..net.logits_end()].to_vec())?;
            let labels: Vec<usize> = (0..a.batch / a.bag_size).map(|i| i % a.classes).collect();
            let head = |out: &Tensor<f64>| bag_batch_loss(out, &labels, a.bag_size, agg);
            grad_check_head(&logits, &x, head, &cfg)?
        }
    };
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(anyhow!(aenet::Error::Numerical(format!(
            "gradient check failed: max relative error {:.3e}",
            report.max_rel_err()
        ))))
    }
}

/// Parse an evaluation report file.
pub fn read_report(path: &Path) -> Result<EvalReport> {
    Ok(EvalReport::from_text(&std::fs::read_to_string(path)?)?)
}
