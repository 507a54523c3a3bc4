//! Command-line front-end.
//!
//! Subcommands communicate through files: `analyze` writes the unstable set,
//! `synthesize` writes a formula document (optionally reusing a stored
//! unstable set), and `evaluate` / `rank` read both back.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::evaluation::{
    accuracy, coverage_curve, gen_random_instances, score_d, score_dtilde, top_k_greedy, InstanceSet, Provenance,
};
use crate::model::{Ensemble, SensitiveSet};
use crate::render::render_formulas;
use crate::stability::{analyze, AnalysisConfig, UnstableSet, DEFAULT_MAX_CLASSES};
use crate::synthesis::{synthesize_from_unstable, FormulaSet, SynthesisConfig, DEFAULT_MAX_CANDIDATES};

#[derive(Debug, Parser)]
#[command(name = "treefair", version, about = "Synthesize sufficient fairness conditions for tree ensembles")]
pub struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the unstable region of a model and write it as rectangles.
    Analyze(AnalyzeArgs),
    /// Synthesize fair itemsets and write them with their rendering.
    Synthesize(SynthesizeArgs),
    /// Score a formula set on datasets: accuracy, d, d-tilde and coverage.
    Evaluate(EvaluateArgs),
    /// Rank formulas by greedy coverage of a dataset.
    Rank(RankArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model JSON file.
    #[arg(long)]
    pub model: PathBuf,

    /// Sensitive features: names, one-hot group names or numeric ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sensitive: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AnalysisArgs {
    /// Bound on enumerated equivalence classes (class pairs).
    #[arg(long, default_value_t = DEFAULT_MAX_CLASSES)]
    pub max_classes: usize,

    /// Report coarser unstable regions once a conflict is certain.
    #[arg(long)]
    pub coarse: bool,
}

impl AnalysisArgs {
    pub fn config(&self) -> AnalysisConfig {
        AnalysisConfig {
            max_classes: self.max_classes,
            coarse: self.coarse,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub analysis: AnalysisArgs,

    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Iteration bound, or `inf` to run until convergence.
    #[arg(long, default_value = "6", value_parser = parse_max_iters)]
    pub max_iters: MaxIters,

    #[command(flatten)]
    pub analysis: AnalysisArgs,

    /// Bound on the candidates of one iteration; exceeding it keeps the
    /// completed iterations and exits with status 3
    #[arg(long, default_value_t = DEFAULT_MAX_CANDIDATES)]
    pub max_candidates: usize,

    /// Reuse an unstable set written by `analyze` instead of recomputing it.
    #[arg(long)]
    pub unstable: Option<PathBuf>,

    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Formula document written by `synthesize`.
    #[arg(long)]
    pub formulas: PathBuf,

    /// Unstable set written by `analyze` (default: recompute).
    #[arg(long)]
    pub unstable: Option<PathBuf>,

    /// Dataset CSV files; may be repeated.
    #[arg(long)]
    pub dataset: Vec<PathBuf>,

    /// Also evaluate on this many uniformly random instances.
    #[arg(long)]
    pub random: Option<usize>,

    /// Seed of the random instances
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[command(flatten)]
    pub analysis: AnalysisArgs,

    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Model JSON file.
    #[arg(long)]
    pub model: PathBuf,

    /// Formula document written by `synthesize`.
    #[arg(long)]
    pub formulas: PathBuf,

    /// Dataset whose instances measure formula importance.
    #[arg(long, required = true)]
    pub dataset: PathBuf,

    /// Number of formulas to report
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,

    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxIters(pub Option<usize>);

fn parse_max_iters(s: &str) -> std::result::Result<MaxIters, String> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(MaxIters(None));
    }
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(MaxIters(Some(n))),
        _ => Err(format!("expected a positive integer or `inf`, got `{s}`")),
    }
}

/// Result of a command: the JSON document to write, plus a warning when a
/// resource limit truncated it.
pub struct Report {
    pub document: Document,
    pub warning: Option<String>,
}

pub enum Document {
    Json(Value),
    /// Written directly; unstable sets can be too large to build as a tree.
    Unstable(UnstableSet),
}

impl Document {
    fn write_to(&self, w: &mut impl Write) -> serde_json::Result<()> {
        match self {
            Document::Json(v) => serde_json::to_writer_pretty(&mut *w, v),
            Document::Unstable(u) => serde_json::to_writer_pretty(&mut *w, u),
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(warning) => match warning {
            Some(w) => {
                eprintln!("warning: {w}");
                3
            }
            None => 0,
        },
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<Option<String>> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidInput("--threads must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start thread pool: {e}")))?;
    pool.install(|| {
        let (report, out) = match &cli.command {
            Command::Analyze(a) => (cmd_analyze(a)?, &a.out),
            Command::Synthesize(a) => (cmd_synthesize(a)?, &a.out),
            Command::Evaluate(a) => (cmd_evaluate(a)?, &a.out),
            Command::Rank(a) => (cmd_rank(a)?, &a.out),
        };
        write_output(out.as_deref(), &report.document)?;
        Ok(report.warning)
    })
}

fn write_output(path: Option<&Path>, document: &Document) -> Result<()> {
    let (mut out, name): (Box<dyn Write>, &Path) = match path {
        Some(p) => (Box::new(fs::File::create(p).map_err(|e| Error::io(p, e))?), p),
        None => (Box::new(std::io::stdout().lock()), Path::new("<stdout>")),
    };
    let mut out = BufWriter::new(&mut out);
    document.write_to(&mut out)?;
    out.write_all(b"\n")
        .and_then(|()| out.flush())
        .map_err(|e| Error::io(name, e))
}

fn load_model(args: &ModelArgs) -> Result<(Ensemble, SensitiveSet)> {
    let ensemble = Ensemble::from_path(&args.model)?;
    let sensitive = ensemble.metadata().resolve_sensitive(&args.sensitive)?;
    Ok((ensemble, sensitive))
}

fn load_unstable(path: &Path, ensemble: &Ensemble) -> Result<UnstableSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    UnstableSet::from_json_str(&text, ensemble.num_features()).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

fn load_formulas(path: &Path, ensemble: &Ensemble) -> Result<FormulaSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text)?;
    FormulaSet::from_json_value(&value, ensemble.metadata())
}

fn elapsed_ms(start: Instant) -> f64 {
    (start.elapsed().as_secs_f64() * 1e3 * 1e3).round() / 1e3
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<Report> {
    let (ensemble, sensitive) = load_model(&args.model)?;
    let start = Instant::now();
    let unstable = analyze(&ensemble, &sensitive, args.analysis.config())?;
    eprintln!(
        "analyze: {} unstable rectangles in {:.1} ms",
        unstable.len(),
        elapsed_ms(start)
    );
    Ok(Report {
        document: Document::Unstable(unstable),
        warning: None,
    })
}

pub fn cmd_synthesize(args: &SynthesizeArgs) -> Result<Report> {
    let (ensemble, sensitive) = load_model(&args.model)?;
    let start = Instant::now();
    let unstable = match &args.unstable {
        Some(path) => load_unstable(path, &ensemble)?,
        None => analyze(&ensemble, &sensitive, args.analysis.config())?,
    };
    let analyze_ms = elapsed_ms(start);
    let start = Instant::now();
    let config = SynthesisConfig {
        max_iters: args.max_iters.0,
        max_candidates: args.max_candidates,
        use_id_cache: true,
    };
    let formulas = synthesize_from_unstable(&unstable, ensemble.metadata(), config)?;
    let synth_ms = elapsed_ms(start);

    eprintln!("analyze: {} unstable rectangles in {analyze_ms:.1} ms", unstable.len());
    for (k, (n, open)) in formulas.per_iteration.iter().zip(&formulas.open_per_iteration).enumerate() {
        eprintln!("iteration {k}: {n} fair itemsets, {open} open candidates");
    }
    eprintln!(
        "synthesize: {} itemsets in {} iterations ({}) in {synth_ms:.1} ms",
        formulas.len(),
        formulas.iterations,
        if formulas.converged { "converged" } else { "stopped" },
    );

    let mut doc = formula_document(&formulas, &ensemble);
    doc.insert(
        "elapsed_ms".into(),
        json!({ "analyze": analyze_ms, "synthesize": synth_ms }),
    );
    Ok(Report {
        document: Document::Json(Value::Object(doc)),
        warning: formulas.limit_hit.clone(),
    })
}

/// The formula document without timing information.
pub fn formula_document(formulas: &FormulaSet, ensemble: &Ensemble) -> Map<String, Value> {
    let rendered: Vec<String> = render_formulas(&formulas.itemsets, ensemble.metadata())
        .iter()
        .map(ToString::to_string)
        .collect();
    let mut doc = Map::new();
    doc.insert("converged".into(), json!(formulas.converged));
    doc.insert("iterations".into(), json!(formulas.iterations));
    doc.insert(
        "formulas".into(),
        Value::Array(formulas.itemsets.iter().map(|i| i.to_json()).collect()),
    );
    doc.insert("rendered".into(), json!(rendered));
    doc.insert("per_iteration_counts".into(), json!(formulas.per_iteration));
    if let Some(limit) = &formulas.limit_hit {
        doc.insert("limit_hit".into(), json!(limit));
    }
    doc
}

fn fraction_json(f: crate::evaluation::Fraction) -> Value {
    json!({ "count": f.count, "total": f.total, "value": f.value() })
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Report> {
    let (ensemble, sensitive) = load_model(&args.model)?;
    let formulas = load_formulas(&args.formulas, &ensemble)?;
    let start = Instant::now();
    let unstable = match &args.unstable {
        Some(path) => load_unstable(path, &ensemble)?,
        None => analyze(&ensemble, &sensitive, args.analysis.config())?,
    };

    let mut sets: Vec<(String, InstanceSet)> = Vec::new();
    for path in &args.dataset {
        let set = InstanceSet::from_csv_path(path, &ensemble, Provenance::Test)?;
        sets.push((path.display().to_string(), set));
    }
    if let Some(n) = args.random {
        let set = gen_random_instances(ensemble.metadata(), n, args.seed);
        sets.push((format!("random:{n}:{}", args.seed), set));
    }
    if sets.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate: pass --dataset or --random".into()));
    }

    let mut reports = Vec::new();
    for (name, set) in &sets {
        let mut entry = Map::new();
        entry.insert("name".into(), json!(name));
        entry.insert("provenance".into(), json!(set.provenance));
        entry.insert("size".into(), json!(set.len()));
        if let Some(a) = accuracy(&ensemble, set) {
            entry.insert("accuracy".into(), fraction_json(a));
        }
        entry.insert("d".into(), fraction_json(score_d(&unstable, set)?));
        entry.insert("dtilde".into(), fraction_json(score_dtilde(&formulas.itemsets, set)?));
        let curve = coverage_curve(&ensemble, &sensitive, &formulas, set, formulas.iterations)?;
        entry.insert(
            "coverage".into(),
            Value::Array(
                curve
                    .iter()
                    .map(|p| json!({ "iteration": p.iteration, "covered": fraction_json(p.covered) }))
                    .collect(),
            ),
        );
        reports.push(Value::Object(entry));
    }
    eprintln!("evaluate: {} datasets in {:.1} ms", sets.len(), elapsed_ms(start));
    Ok(Report {
        document: Document::Json(json!({ "datasets": reports })),
        warning: None,
    })
}

pub fn cmd_rank(args: &RankArgs) -> Result<Report> {
    let ensemble = Ensemble::from_path(&args.model)?;
    let formulas = load_formulas(&args.formulas, &ensemble)?;
    let data = InstanceSet::from_csv_path(&args.dataset, &ensemble, Provenance::Train)?;
    let ranked = top_k_greedy(&formulas.itemsets, &data, args.top_k)?;
    let rendered = render_formulas(&formulas.itemsets, ensemble.metadata());
    // a merged rendering stands for several itemsets; show each on its own
    let text_of = |index: usize| {
        rendered
            .iter()
            .find(|r| r.sources == [index])
            .map(ToString::to_string)
            .unwrap_or_else(|| render_formulas(&formulas.itemsets[index..=index], ensemble.metadata())[0].to_string())
    };
    let mut cumulative = 0;
    let rows: Vec<Value> = ranked
        .iter()
        .enumerate()
        .map(|(rank, r)| {
            cumulative += r.marginal;
            eprintln!("{:>3}  {:>8}  {}", rank + 1, r.marginal, text_of(r.index));
            json!({
                "rank": rank + 1,
                "index": r.index,
                "formula": formulas.itemsets[r.index].to_json(),
                "rendered": text_of(r.index),
                "marginal": r.marginal,
                "covered": r.covered,
                "cumulative": cumulative,
            })
        })
        .collect();
    Ok(Report {
        document: Document::Json(json!({ "total": data.len(), "ranked": rows })),
        warning: None,
    })
}
