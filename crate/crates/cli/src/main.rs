use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use tscov::dsl::{Library, ParseError};
use tscov::ingest::{self, IngestError, Run, RunStats, SegmentError, SegmentOptions, Strategy};
use tscov::logic::{evaluate_all, LogicError, Valuation};
use tscov::metrics::{missing_classes, ratio_to_f64, scc, CoverageReport, MetricsError, ReportOptions};
use tscov::scene::{time_to_secs, Segment, Violation};
use tscov::simgen::{self, GenConfig, GenError};
use tscov::tsc::{Classification, Classifier, Tsc, TscError};
use tscov::urban;

/// Scenario-class coverage of recorded driving runs.
#[derive(Parser)]
#[command(name = "tscov", version)]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "TSCOV_JOBS", default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded synthetic runs.
    Gen(GenArgs),
    /// Check runs for data-sanity violations.
    Validate(ValidateArgs),
    /// Classify every segment and write one row per segment.
    Classify(ClassifyArgs),
    /// Write coverage reports (JSON) and plot data (CSV).
    Coverage(CoverageArgs),
    /// List missing classes and never co-observed feature pairs.
    Missing(MissingArgs),
    /// Evaluate one named formula at every scene of a run or segment.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Generator configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named overrides applied after the config, in order.
    #[arg(long = "template")]
    templates: Vec<String>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    runs: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Run files or directories of run files.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
}

#[derive(Args)]
struct Model {
    /// Classifier file (TOML), or `builtin:urban` / `builtin:motivation`.
    #[arg(long, default_value = "builtin:urban")]
    tsc: String,
    /// Formula library, or `builtin:urban`.
    #[arg(long, default_value = "builtin:urban")]
    formulas: String,
}

#[derive(Args)]
struct Segmenting {
    /// Segment from every vehicle's point of view, not only the flagged ego.
    #[arg(long)]
    all_vehicles: bool,
    /// Fixed windows of this many scenes instead of one segment per road.
    #[arg(long)]
    window: Option<usize>,
    /// Shorter segments are dropped.
    #[arg(long, default_value_t = ingest::DEFAULT_MIN_SCENES)]
    min_scenes: usize,
    /// Cut at scenes without the ego instead of rejecting the run.
    #[arg(long)]
    skip_absent: bool,
    /// Keep only segments on junction roads.
    #[arg(long)]
    junctions_only: bool,
}

impl Segmenting {
    fn options(&self) -> SegmentOptions {
        SegmentOptions {
            strategy: self.window.map_or(Strategy::ByRoad, Strategy::Window),
            min_scenes: self.min_scenes,
            skip_absent: self.skip_absent,
        }
    }
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    model: Model,
    #[command(flatten)]
    segmenting: Segmenting,
    #[arg(long, default_value = "full")]
    projection: String,
    /// Per-segment table (CSV); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    runs: Vec<PathBuf>,
}

#[derive(Args)]
struct CoverageArgs {
    #[command(flatten)]
    model: Model,
    #[command(flatten)]
    segmenting: Segmenting,
    /// Projections to report; repeatable.
    #[arg(long = "projection", default_value = "full")]
    projections: Vec<String>,
    /// Every projection defined by the classifier, plus `full`.
    #[arg(long, conflicts_with = "projections")]
    all_projections: bool,
    /// Nodes whose child combinations are broken down; repeatable.
    #[arg(long = "breakdown")]
    breakdowns: Vec<String>,
    /// Most missing classes listed per report.
    #[arg(long, default_value_t = 1000)]
    cap: usize,
    /// Skip the feature-pair analysis.
    #[arg(long)]
    no_pairs: bool,
    #[arg(long)]
    out: PathBuf,
    runs: Vec<PathBuf>,
}

#[derive(Args)]
struct MissingArgs {
    #[command(flatten)]
    model: Model,
    #[command(flatten)]
    segmenting: Segmenting,
    #[arg(long, default_value = "full")]
    projection: String,
    /// Also list feature pairs that were never observed together.
    #[arg(long)]
    pairs: bool,
    /// Most missing classes listed.
    #[arg(long)]
    cap: Option<usize>,
    /// Output file (JSON); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    runs: Vec<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value = "builtin:urban")]
    formulas: String,
    /// A definition without parameters.
    #[arg(long)]
    name: String,
    /// Evaluate on this segment of the run instead of the whole run.
    #[arg(long)]
    segment: Option<usize>,
    #[command(flatten)]
    segmenting: Segmenting,
    run: PathBuf,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Ingest { path: PathBuf, source: IngestError },
    #[error("{path}: {source}")]
    Formulas { path: String, source: ParseError },
    #[error("{path}: {source}")]
    Classifier { path: String, source: TscError },
    #[error("run `{run}`: {source}")]
    Segment { run: String, source: SegmentError },
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Ingest { .. } => "schema",
            CliError::Formulas { .. } | CliError::Logic(_) => "formula",
            CliError::Classifier { .. } => "classifier",
            CliError::Segment { .. } => "segmentation",
            CliError::Gen(_) => "config",
            CliError::Metrics(_) => "metrics",
            CliError::Input(_) => "input",
        }
    }
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    error: &'a str,
    message: String,
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

// ---- Inputs ------------------------------------------------------------------

fn library(source: &str) -> Result<Library> {
    if source == "builtin:urban" {
        return Ok(urban::library());
    }
    Library::parse(&read(Path::new(source))?).map_err(|e| CliError::Formulas {
        path: source.to_owned(),
        source: e,
    })
}

fn load_model(model: &Model) -> Result<Tsc> {
    let lib = library(&model.formulas)?;
    let text = match model.tsc.as_str() {
        "builtin:urban" => urban::CLASSIFIER.to_owned(),
        "builtin:motivation" => urban::MOTIVATION.to_owned(),
        path => read(Path::new(path))?,
    };
    Tsc::from_toml(&text, &lib).map_err(|e| CliError::Classifier {
        path: model.tsc.clone(),
        source: e,
    })
}

fn projection(tsc: &Tsc, name: &str) -> Result<Tsc> {
    tsc.project_named(name).map_err(|e| CliError::Classifier {
        path: tsc.name.clone(),
        source: e,
    })
}

/// Run files named on the command line; directories contribute their
/// `.ndjson` and `.jsonl` files in name order.
fn run_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(io_err(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && matches!(f.extension().and_then(|x| x.to_str()), Some("ndjson" | "jsonl")))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn load_runs(paths: &[PathBuf]) -> Result<Vec<(PathBuf, Run)>> {
    let files = run_files(paths)?;
    let loaded: Vec<Result<Run>> = files
        .par_iter()
        .map(|f| {
            ingest::load_path(f).map_err(|e| CliError::Ingest {
                path: f.clone(),
                source: e,
            })
        })
        .collect();
    let runs: Vec<(PathBuf, Run)> = files
        .into_iter()
        .zip(loaded)
        .map(|(f, r)| r.map(|r| (f, r)))
        .collect::<Result<_>>()?;
    for (path, run) in &runs {
        if !run.violations.is_empty() {
            eprintln!(
                "warning: {}: {} data-sanity violations",
                path.display(),
                run.violations.len()
            );
        }
    }
    Ok(runs)
}

fn on_junction(s: &Segment) -> bool {
    s.map.road_id(&s.road).is_some_and(|r| s.map.road(r).is_junction)
}

/// Segments of all runs in input order, with per-run statistics.
fn segment_runs(runs: &[(PathBuf, Run)], s: &Segmenting) -> Result<(Vec<Segment>, Vec<RunStats>)> {
    let options = s.options();
    let per_run: Vec<Result<(Vec<Segment>, RunStats)>> = runs
        .par_iter()
        .map(|(_, run)| {
            let mut segments = ingest::segment_run(run, s.all_vehicles, &options).map_err(|e| CliError::Segment {
                run: run.id.clone(),
                source: e,
            })?;
            if s.junctions_only {
                segments.retain(on_junction);
            }
            let stats = ingest::run_stats(run, &segments);
            Ok((segments, stats))
        })
        .collect();
    let mut segments = Vec::new();
    let mut stats = Vec::new();
    for r in per_run {
        let (seg, st) = r?;
        segments.extend(seg);
        stats.push(st);
    }
    Ok((segments, stats))
}

/// Classification under a projection: classes of the full classifier cut
/// down to the projection, with segments the full classifier rejects
/// classified by the projected classifier directly.
fn classify_projected(full: &Classification, tsc: &Tsc, part: &Tsc, segments: &[Segment]) -> Result<Classification> {
    let mut projected = full.project(tsc, part);
    let classifier = Classifier::new(part).map_err(|e| CliError::Classifier {
        path: part.name.clone(),
        source: e,
    })?;
    let redo: Vec<usize> = (0..segments.len()).filter(|k| full.results[*k].is_err()).collect();
    let again: Vec<_> = redo
        .par_iter()
        .map(|k| classifier.classify(&segments[*k].trace, &segments[*k].map))
        .collect();
    for (k, r) in redo.into_iter().zip(again) {
        projected.results[k] = r;
    }
    Ok(Classification::from_results(projected.results))
}

fn classify(tsc: &Tsc, segments: &[Segment]) -> Result<Classification> {
    let c = Classifier::new(tsc).map_err(|e| CliError::Classifier {
        path: tsc.name.clone(),
        source: e,
    })?;
    Ok(c.classify_all(segments))
}

/// Classification of every segment under each named projection.
fn classify_under(tsc: &Tsc, names: &[String], segments: &[Segment]) -> Result<Vec<(String, Tsc, Classification)>> {
    let full = classify(tsc, segments)?;
    names
        .iter()
        .map(|name| {
            let part = projection(tsc, name)?;
            let result = if name == "full" && tsc.projection("full").is_none() {
                full.clone()
            } else {
                classify_projected(&full, tsc, &part, segments)?
            };
            Ok((name.clone(), part, result))
        })
        .collect()
}

// ---- Commands ----------------------------------------------------------------

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => GenConfig::from_toml(&read(p)?)?,
        None => GenConfig::default(),
    };
    for t in &a.templates {
        simgen::apply_template(&mut cfg, t)?;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    write(&a.out.join("gen-config.toml"), &cfg.to_toml())?;
    (0..a.runs).into_par_iter().try_for_each(|k| -> Result<()> {
        let run = simgen::generate_run(&cfg, k)?;
        let path = a.out.join(format!("{}.ndjson", run.id));
        let text = ingest::save_string(&run.id, &run.trace, &run.map);
        write(&path, &text)
    })?;
    eprintln!("wrote {} runs to {}", a.runs, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct RunViolations<'a> {
    path: String,
    run_id: &'a str,
    violations: &'a [Violation],
}

#[derive(Serialize)]
struct ValidationReport<'a> {
    clean: bool,
    runs: Vec<RunViolations<'a>>,
}

fn cmd_validate(a: &ValidateArgs) -> Result<bool> {
    let runs = load_runs(&a.runs)?;
    let report = ValidationReport {
        clean: runs.iter().all(|(_, r)| r.violations.is_empty()),
        runs: runs
            .iter()
            .map(|(p, r)| RunViolations {
                path: p.display().to_string(),
                run_id: &r.id,
                violations: &r.violations,
            })
            .collect(),
    };
    emit(None, &json(&report))?;
    Ok(report.clean)
}

fn cmd_classify(a: &ClassifyArgs) -> Result<()> {
    let tsc = load_model(&a.model)?;
    let runs = load_runs(&a.runs)?;
    let (segments, _) = segment_runs(&runs, &a.segmenting)?;
    let [(_, part, result)]: [_; 1] = classify_under(&tsc, std::slice::from_ref(&a.projection), &segments)?
        .try_into()
        .unwrap_or_else(|_| unreachable!("one projection requested"));
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Metrics(MetricsError::Output(e.to_string()));
    w.write_record(["run_id", "ego", "road", "start", "scenes", "class", "error"])
        .map_err(io)?;
    for (s, r) in segments.iter().zip(&result.results) {
        let (class, error) = match r {
            Ok(c) => (part.class_ids(c).join(";"), String::new()),
            Err(e) => (String::new(), e.to_string()),
        };
        w.write_record([
            s.run_id.clone(),
            s.ego.clone(),
            s.road.clone(),
            s.start.to_string(),
            s.trace.len().to_string(),
            class,
            error,
        ])
        .map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Metrics(MetricsError::Output(e.to_string())))?;
    emit(
        a.out.as_deref(),
        &String::from_utf8(bytes).expect("csv output is UTF-8"),
    )?;
    eprintln!(
        "{} segments, {} classified, {} failed",
        segments.len(),
        segments.len() - result.error_count(),
        result.error_count()
    );
    Ok(())
}

fn cmd_coverage(a: &CoverageArgs) -> Result<()> {
    let tsc = load_model(&a.model)?;
    let names: Vec<String> = if a.all_projections {
        let mut n = vec!["full".to_owned()];
        n.extend(tsc.projections().iter().map(|p| p.name.clone()).filter(|p| p != "full"));
        n
    } else {
        a.projections.clone()
    };
    let runs = load_runs(&a.runs)?;
    let (segments, stats) = segment_runs(&runs, &a.segmenting)?;
    let results = classify_under(&tsc, &names, &segments)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let out_err = |e: csv::Error| CliError::Metrics(MetricsError::Output(e.to_string()));
    for s in &stats {
        w.serialize(s).map_err(out_err)?;
    }
    if stats.is_empty() {
        w.write_record([
            "run_id",
            "scenes",
            "duration_secs",
            "vehicles",
            "pedestrians",
            "segments",
            "mean_segment_scenes",
        ])
        .map_err(out_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Metrics(MetricsError::Output(e.to_string())))?;
    write(
        &a.out.join("runs.csv"),
        &String::from_utf8(bytes).expect("csv output is UTF-8"),
    )?;

    let mut summary = String::from("projection\tpossible\tobserved\tscc\n");
    for (name, part, result) in &results {
        let breakdowns = a
            .breakdowns
            .iter()
            .filter(|b| part.index_of(b).is_some())
            .cloned()
            .collect();
        let options = ReportOptions {
            missing_cap: Some(a.cap),
            pairs: !a.no_pairs,
            breakdowns,
        };
        let report = CoverageReport::build(part, name, result, &options)?;
        let file = |ext: &str| a.out.join(format!("{name}.{ext}"));
        write(&file("coverage.json"), &(report.to_json() + "\n"))?;
        write(&file("curve.csv"), &report.curve_csv()?)?;
        write(&file("classes.csv"), &report.class_csv()?)?;
        write(&file("occurrence.csv"), &report.occurrence_csv()?)?;
        if !options.breakdowns.is_empty() {
            write(&file("breakdown.csv"), &report.breakdown_csv()?)?;
        }
        summary.push_str(&format!(
            "{name}\t{}\t{}\t{:.2}%\n",
            report.possible_classes,
            report.observed_classes,
            100.0 * report.scc.value
        ));
    }
    emit(None, &summary)?;
    eprintln!(
        "{} runs, {} segments, reports in {}",
        runs.len(),
        segments.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct MissingOutput {
    projection: String,
    possible: String,
    observed: usize,
    scc: f64,
    missing_count: String,
    truncated: bool,
    missing: Vec<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pairs: Option<Vec<[String; 2]>>,
}

fn cmd_missing(a: &MissingArgs) -> Result<()> {
    let tsc = load_model(&a.model)?;
    let runs = load_runs(&a.runs)?;
    let (segments, _) = segment_runs(&runs, &a.segmenting)?;
    let [(name, part, result)]: [_; 1] = classify_under(&tsc, std::slice::from_ref(&a.projection), &segments)?
        .try_into()
        .unwrap_or_else(|_| unreachable!("one projection requested"));
    let ids = |c: &tscov::tsc::ScenarioClass| part.class_ids(c).into_iter().map(str::to_owned).collect::<Vec<_>>();
    let missing = missing_classes(&result.observed, &part, a.cap);
    let pairs = a.pairs.then(|| {
        tscov::metrics::feature_pair_misses(&result.observed, &part)
            .into_iter()
            .map(|(x, y)| [part.node(x).id.clone(), part.node(y).id.clone()])
            .collect()
    });
    let out = MissingOutput {
        projection: name,
        possible: part.size().to_string(),
        observed: result.observed.len(),
        scc: ratio_to_f64(&scc(&result.observed, &part)),
        missing_count: missing.count.to_string(),
        truncated: missing.truncated,
        missing: missing.classes.iter().map(ids).collect(),
        pairs,
    };
    emit(a.out.as_deref(), &json(&out))
}

#[derive(Serialize)]
struct SegmentInfo {
    index: usize,
    ego: String,
    road: String,
    start: usize,
    scenes: usize,
}

#[derive(Serialize)]
struct Witness {
    index: usize,
    run_index: usize,
    time: f64,
    holds: bool,
}

#[derive(Serialize)]
struct EvalOutput {
    run_id: String,
    formula: String,
    definition: String,
    segment: Option<SegmentInfo>,
    holds: bool,
    trace: Vec<Witness>,
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let lib = library(&a.formulas)?;
    let def = lib
        .get(&a.name)
        .ok_or_else(|| CliError::Input(format!("no formula named `{}`", a.name)))?;
    if !def.params.is_empty() {
        return Err(CliError::Input(format!(
            "`{}` takes {} parameters; only closed formulas can be evaluated",
            a.name,
            def.params.len()
        )));
    }
    let run = ingest::load_path(&a.run).map_err(|e| CliError::Ingest {
        path: a.run.clone(),
        source: e,
    })?;
    let (trace, map, start, segment) =
        match a.segment {
            None => (run.trace.clone(), run.map.clone(), 0, None),
            Some(k) => {
                let mut segments = ingest::segment_run(&run, a.segmenting.all_vehicles, &a.segmenting.options())
                    .map_err(|e| CliError::Segment {
                        run: run.id.clone(),
                        source: e,
                    })?;
                if a.segmenting.junctions_only {
                    segments.retain(on_junction);
                }
                let s = segments.get(k).ok_or_else(|| {
                    CliError::Input(format!(
                        "segment {k} out of range: run `{}` has {} segments",
                        run.id,
                        segments.len()
                    ))
                })?;
                let info = SegmentInfo {
                    index: k,
                    ego: s.ego.clone(),
                    road: s.road.clone(),
                    start: s.start,
                    scenes: s.trace.len(),
                };
                (s.trace.clone(), s.map.clone(), s.start, Some(info))
            }
        };
    let values = evaluate_all(&def.body, &trace, &map, &Valuation::new())?;
    let out = EvalOutput {
        run_id: run.id.clone(),
        formula: def.name.clone(),
        definition: def.text.clone(),
        segment,
        holds: values[0],
        trace: values
            .iter()
            .enumerate()
            .map(|(i, v)| Witness {
                index: i,
                run_index: start + i,
                time: time_to_secs(trace.time(i)),
                holds: *v,
            })
            .collect(),
    };
    emit(None, &json(&out))
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| true),
        Command::Validate(a) => cmd_validate(a),
        Command::Classify(a) => cmd_classify(a).map(|_| true),
        Command::Coverage(a) => cmd_coverage(a).map(|_| true),
        Command::Missing(a) => cmd_missing(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
        eprintln!("warning: thread pool: {e}");
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let d = Diagnostic {
                error: e.kind(),
                message: e.to_string(),
            };
            eprintln!("{}", serde_json::to_string(&d).expect("diagnostic serializes"));
            ExitCode::from(1)
        }
    }
}
