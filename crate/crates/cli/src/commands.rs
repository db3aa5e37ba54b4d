//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use organichar::annotate;
use organichar::config::PipelineConfig;
use organichar::featurize::featurize_session;
use organichar::har::{EvalReport, ZoneModel};
use organichar::incremental::{run_incremental, IncrementalTrace};
use organichar::keymoments;
use organichar::labels::LabelHierarchy;
use organichar::pipeline::{self, Alignment, Corpus, DiscoveryStats, WindowLabels};
use organichar::sensor::{demo_corpus, generate_synthetic_session, load_session, write_session, ActivityScript, Session};
use organichar::FORMAT_VERSION;
use serde::{Deserialize, Serialize};

use crate::services::{backends, LoggingDescriber, SCRIPT_FILE};

/// Lists the files a command wrote, so plain CSV outputs are versioned too.
#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    command: String,
    seed: u64,
    files: Vec<String>,
}

struct Output {
    dir: PathBuf,
    command: &'static str,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path, command: &'static str) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, serde_json::to_string_pretty(value)? + "\n")
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        let path = self.path(name);
        Ok(BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    }

    fn finish(mut self, seed: u64) -> Result<()> {
        self.files.sort();
        let m = Manifest {
            format_version: FORMAT_VERSION,
            command: self.command.to_string(),
            seed,
            files: self.files.clone(),
        };
        self.write("manifest.json", serde_json::to_string_pretty(&m)? + "\n")
    }
}

fn versioned<T: Serialize>(value: &T) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(value)?;
    if let Some(obj) = v.as_object_mut() {
        obj.insert("format_version".into(), FORMAT_VERSION.into());
    }
    Ok(v)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match v.get("format_version").and_then(|f| f.as_u64()) {
        Some(f) if f == u64::from(FORMAT_VERSION) => {}
        Some(f) => bail!("{}: unsupported format version {f} (expected {FORMAT_VERSION})", path.display()),
        None => bail!("{}: missing format_version", path.display()),
    }
    serde_json::from_value(v).with_context(|| format!("parsing {}", path.display()))
}

fn load_sessions(dirs: &[PathBuf]) -> Result<Vec<Session>> {
    if dirs.is_empty() {
        bail!("no session directories given");
    }
    let sessions: Vec<Session> = dirs
        .iter()
        .map(|d| load_session(d).with_context(|| format!("loading session {}", d.display())))
        .collect::<Result<_>>()?;
    let mut ids: Vec<&str> = sessions.iter().map(|s| s.session_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        bail!("session id `{}` appears more than once", w[0]);
    }
    Ok(sessions)
}

fn featurize(sessions: &[Session], cfg: &PipelineConfig) -> Result<Corpus> {
    sessions
        .iter()
        .map(|s| {
            featurize_session(s, &cfg.features)
                .map(|t| (s.session_id.clone(), t))
                .with_context(|| format!("featurize: session {}", s.session_id))
        })
        .collect()
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Activity script (JSON).
    #[arg(long, conflicts_with = "demo", required_unless_present = "demo")]
    script: Option<PathBuf>,
    /// Generate the bundled demo corpus with this many sessions instead.
    #[arg(long)]
    demo: Option<usize>,
    /// Output directory: the session itself, or the parent of demo sessions.
    #[arg(long)]
    out: PathBuf,
}

fn write_simulated(script: &ActivityScript, seed: u64, dir: &Path) -> Result<()> {
    let session = generate_synthetic_session(script, seed).with_context(|| format!("simulating {}", script.session_id))?;
    write_session(&session, dir).with_context(|| format!("writing {}", dir.display()))?;
    fs::write(dir.join(SCRIPT_FILE), serde_json::to_string_pretty(script)? + "\n")?;
    Ok(())
}

pub fn simulate(args: &SimulateArgs, cfg: &PipelineConfig) -> Result<()> {
    match (&args.script, args.demo) {
        (Some(path), _) => {
            let script = ActivityScript::load(path)?;
            write_simulated(&script, cfg.seed, &args.out)?;
            println!("wrote session {} to {}", script.session_id, args.out.display());
        }
        (None, Some(n)) => {
            if n == 0 {
                bail!("--demo needs at least one session");
            }
            for script in demo_corpus(n, cfg.seed) {
                write_simulated(&script, cfg.seed, &args.out.join(&script.session_id))?;
            }
            println!("wrote {n} demo sessions to {}", args.out.display());
        }
        (None, None) => bail!("give --script or --demo"),
    }
    Ok(())
}

#[derive(Args)]
pub struct DiscoverArgs {
    /// Session directories.
    #[arg(required = true)]
    sessions: Vec<PathBuf>,
    /// Output directory for key moments, descriptions and labels.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct WindowLabelsDoc {
    format_version: u32,
    #[serde(flatten)]
    labels: WindowLabels,
}

pub fn discover(args: &DiscoverArgs, cfg: &PipelineConfig) -> Result<()> {
    let sessions = load_sessions(&args.sessions)?;
    let corpus = featurize(&sessions, cfg)?;
    let pairs: Vec<(&PathBuf, &Session)> = args.sessions.iter().zip(&sessions).collect();
    let b = backends(cfg, &pairs)?;
    let d = pipeline::discover(&sessions, &corpus, cfg, &b.services())?;

    let mut out = Output::new(&args.out, "discover")?;
    keymoments::write_jsonl(&d.moments, out.create("keymoments.jsonl")?)?;
    annotate::write_jsonl(&d.descriptions, out.create("descriptions.jsonl")?)?;
    annotate::write_jsonl(&d.confident, out.create("confident.jsonl")?)?;
    out.write("hierarchy.json", d.labels.hierarchy.to_json()?)?;
    out.json("consolidation.json", &versioned(&d.labels.consolidation)?)?;
    out.json(
        "window_labels.json",
        &WindowLabelsDoc {
            format_version: FORMAT_VERSION,
            labels: d.window_labels.clone(),
        },
    )?;
    if let Some(a) = &d.stats.alignment {
        out.write("alignment.json", a.to_json())?;
    }
    out.json("summary.json", &d.stats)?;
    out.finish(cfg.seed)?;
    print!("{}", discovery_text(&d.stats, &d.labels.hierarchy));
    Ok(())
}

fn discovery_text(s: &DiscoveryStats, h: &LabelHierarchy) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "sessions: {}  windows: {}", s.sessions, s.windows);
    let _ = writeln!(t, "key moments: {}  annotated fraction: {:.4}", s.key_moments, s.annotated_fraction);
    let _ = writeln!(t, "detection rate: {:.4}  confident descriptions: {}", s.detection_rate, s.confident_descriptions);
    let _ = writeln!(t, "zones: {}  base labels: {}  labeled windows: {}", s.zones, s.base_labels, s.labeled_windows);
    for l in &h.levels {
        let _ = writeln!(t, "lambda {:.2}: {} labels", l.lambda, l.groups.len());
    }
    if let Some(a) = &s.alignment {
        let _ = writeln!(t, "agreement with ground truth: {:.4} ({}/{} windows)", a.agreement, a.matched, a.total);
    }
    t
}

#[derive(Clone, Copy, ValueEnum)]
pub enum LabelSource {
    /// Ground-truth windows mapped through the discovered alignment.
    Truth,
    /// Windows labeled by propagated descriptions.
    Propagated,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Session directories.
    #[arg(required = true)]
    sessions: Vec<PathBuf>,
    /// Directory written by `discover`.
    #[arg(long)]
    discovery: PathBuf,
    /// Label granularity; must be one of the hierarchy's levels. Defaults to the configured value.
    #[arg(long)]
    lambda: Option<f64>,
    /// Where training labels come from.
    #[arg(long, value_enum, default_value = "truth")]
    labels: LabelSource,
    /// Output directory for the model bundle and evaluation report.
    #[arg(long)]
    out: PathBuf,
}

pub fn train(args: &TrainArgs, cfg: &PipelineConfig) -> Result<()> {
    let sessions = load_sessions(&args.sessions)?;
    if sessions.len() < 2 {
        bail!("training needs at least 2 sessions for leave-one-session-out evaluation");
    }
    let text = fs::read_to_string(args.discovery.join("hierarchy.json")).context("reading hierarchy.json")?;
    let hierarchy = LabelHierarchy::from_json(&text)?;
    let lambda = args.lambda.unwrap_or(cfg.har.lambda);
    let Some(level) = hierarchy.level(lambda) else {
        let available: Vec<String> = hierarchy.levels.iter().map(|l| format!("{}", l.lambda)).collect();
        bail!("lambda {lambda} is not in the hierarchy; available: {}", available.join(", "));
    };
    let corpus = featurize(&sessions, cfg)?;
    let dataset = match args.labels {
        LabelSource::Truth => {
            let text = fs::read_to_string(args.discovery.join("alignment.json")).context("reading alignment.json")?;
            let alignment = Alignment::from_json(&text)?;
            pipeline::ground_truth_dataset(&corpus, &sessions, level, &alignment, &cfg.features.window)?
        }
        LabelSource::Propagated => {
            let doc: WindowLabelsDoc = read_json(&args.discovery.join("window_labels.json"))?;
            pipeline::propagated_dataset(&corpus, &doc.labels, level)?
        }
    };
    let (model, report) = pipeline::train_and_evaluate(&dataset, lambda, cfg)?;

    let mut out = Output::new(&args.out, "train")?;
    let bundle = args.out.join("model");
    model.save(&bundle)?;
    out.files.push("model/".into());
    out.json("report.json", &report)?;
    report.write_confusion_csv(out.create("confusion.csv")?)?;
    report.write_predictions_csv(out.create("predictions.csv")?)?;
    out.finish(cfg.seed)?;
    print!("{}", har_text(&report));
    Ok(())
}

fn har_text(r: &EvalReport) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "labels: {}", r.labels.len());
    let _ = writeln!(t, "loso accuracy: {:.4}  balanced accuracy: {:.4}  macro F1: {:.4}", r.accuracy, r.balanced_accuracy, r.f1_macro);
    for (s, m) in &r.per_session {
        let _ = writeln!(t, "  {s}: rows {}  accuracy {:.4}  balanced {:.4}", m.rows, m.accuracy, m.balanced_accuracy);
    }
    t
}

#[derive(Args)]
pub struct InferArgs {
    /// Session directory.
    session: PathBuf,
    /// Model bundle directory (the `model/` directory written by `train`).
    #[arg(long)]
    model: PathBuf,
    /// Segment CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write per-window predictions to this CSV.
    #[arg(long)]
    windows: Option<PathBuf>,
}

pub fn infer(args: &InferArgs, cfg: &PipelineConfig) -> Result<()> {
    let model = ZoneModel::load(&args.model).with_context(|| format!("loading model bundle {}", args.model.display()))?;
    let session = load_session(&args.session).with_context(|| format!("loading session {}", args.session.display()))?;
    let tables = featurize_session(&session, &cfg.features).with_context(|| format!("featurize: session {}", session.session_id))?;
    let preds = pipeline::infer_windows(&model, &tables)?;
    let segments = pipeline::segment_predictions(&preds, &cfg.features.window, cfg.har.min_segment_s)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    w.write_record(["format_version", "start_s", "end_s", "zone", "activity", "confidence"])?;
    for s in &segments {
        w.write_record([
            FORMAT_VERSION.to_string(),
            format!("{:.3}", s.start_s),
            format!("{:.3}", s.end_s),
            s.zone.clone(),
            s.activity.clone(),
            format!("{:.6}", s.confidence),
        ])?;
    }
    w.flush()?;
    if let Some(path) = &args.windows {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["format_version", "t_s", "zone", "activity", "confidence"])?;
        for p in &preds {
            w.write_record([
                FORMAT_VERSION.to_string(),
                format!("{:.3}", p.t_s),
                p.zone.clone(),
                p.activity.clone(),
                format!("{:.6}", p.confidence),
            ])?;
        }
        w.flush()?;
    }
    println!("{}: {} segments over {} windows", session.session_id, segments.len(), preds.len());
    Ok(())
}

#[derive(Args)]
pub struct IncrementalArgs {
    /// Session directories in chronological order.
    #[arg(required = true, num_args = 2..)]
    sessions: Vec<PathBuf>,
    /// Output directory for the trace.
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint directory; an existing checkpoint is resumed. Defaults to `<out>/checkpoint`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Also replay with each of these confidence floors and report query
    /// counts and final forward accuracy.
    #[arg(long, value_delimiter = ',')]
    sensitivity: Vec<f64>,
}

pub fn incremental(args: &IncrementalArgs, cfg: &PipelineConfig) -> Result<()> {
    let sessions = load_sessions(&args.sessions)?;
    if sessions.len() < 2 {
        bail!("incremental replay needs at least 2 sessions");
    }
    let corpus = featurize(&sessions, cfg)?;
    let pairs: Vec<(&PathBuf, &Session)> = args.sessions.iter().zip(&sessions).collect();
    let b = backends(cfg, &pairs)?;
    let checkpoint = args.checkpoint.clone().unwrap_or_else(|| args.out.join("checkpoint"));

    let logger = LoggingDescriber::new(b.describer.as_ref());
    let services = pipeline::Services {
        describer: &logger,
        reasoner: b.reasoner.as_ref(),
        embedder: b.embedder.as_ref(),
    };
    let trace = run_incremental(&sessions, &corpus, cfg, &services, Some(&checkpoint))?;
    let log = logger.into_log();

    let mut out = Output::new(&args.out, "incremental")?;
    trace.write_csv(out.create("trace.csv")?)?;
    out.write("trace.json", trace.to_json())?;
    let mut queries = String::new();
    for r in &log {
        queries.push_str(&serde_json::to_string(r)?);
        queries.push('\n');
    }
    out.write("queries.jsonl", queries)?;

    if !args.sensitivity.is_empty() {
        let mut w = csv::Writer::from_writer(out.create("sensitivity.csv")?);
        w.write_record(["confidence_floor", "total_queries", "final_forward_accuracy"])?;
        for &floor in &args.sensitivity {
            let mut c = cfg.clone();
            c.incremental.confidence_floor = floor;
            c.incremental.validate().map_err(anyhow::Error::msg)?;
            let t = run_incremental(&sessions, &corpus, &c, &b.services(), None)?;
            let last = t.steps.iter().rev().find_map(|s| s.forward_accuracy);
            w.write_record([
                format!("{floor}"),
                t.steps.last().map_or(0, |s| s.cumulative_queries).to_string(),
                last.map(|a| format!("{a:.6}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
    }
    out.finish(cfg.seed)?;
    print!("{}", trace_text(&trace));
    Ok(())
}

fn trace_text(t: &IncrementalTrace) -> String {
    let mut s = String::new();
    for r in &t.steps {
        let acc = r.forward_accuracy.map_or("n/a (no future sessions)".to_string(), |a| format!("{a:.4}"));
        let _ = writeln!(
            s,
            "session {} ({}): queries {}  cumulative {}  labels {}  forward accuracy {acc}",
            r.session,
            r.session_id,
            r.query_count,
            r.cumulative_queries,
            r.snapshot.labels.len()
        );
    }
    s
}

#[derive(Args)]
pub struct ReportArgs {
    /// Output directories of `discover`, `train` or `incremental`.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Also write the summary to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn report(args: &ReportArgs) -> Result<()> {
    if args.dirs.is_empty() {
        bail!("no artifact directories given");
    }
    let mut text = String::new();
    for dir in &args.dirs {
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        let _ = writeln!(text, "== {} ({}, seed {})", dir.display(), manifest.command, manifest.seed);
        match manifest.command.as_str() {
            "discover" => {
                let stats: DiscoveryStats = read_json(&dir.join("summary.json"))?;
                let h = LabelHierarchy::from_json(&fs::read_to_string(dir.join("hierarchy.json"))?)?;
                text.push_str(&discovery_text(&stats, &h));
                for l in &h.levels {
                    let names: BTreeMap<&str, usize> = l.groups.iter().map(|g| (g.name.as_str(), g.members.len())).collect();
                    let _ = writeln!(text, "  lambda {:.2}: {:?}", l.lambda, names);
                }
            }
            "train" => {
                let r: EvalReport = read_json(&dir.join("report.json"))?;
                text.push_str(&har_text(&r));
            }
            "incremental" => {
                let t: IncrementalTrace = read_json(&dir.join("trace.json"))?;
                text.push_str(&trace_text(&t));
            }
            other => bail!("{}: unknown command `{other}` in manifest", dir.display()),
        }
    }
    print!("{text}");
    if let Some(path) = &args.out {
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

