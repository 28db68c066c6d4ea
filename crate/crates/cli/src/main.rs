//! `stitch`: validate specs, run campaigns, and inspect testcases.
//!
//! Exit codes: 0 success, 1 user or input error, 2 internal or backend error.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use stitch_core::codegen::{self, CodegenError, NativeBackend, NativeConfig};
use stitch_core::engine::{crash::minimize, CampaignError, CampaignStats};
use stitch_core::{
    load_spec, run_campaign, wire, Backend, BackendError, Budget, CampaignConfig, DedupKey,
    OutcomeKind, Specification, Testcase, VirtualBackend,
};

// Stdout writes ignore errors so a closed pipe ends output quietly.
macro_rules! say {
    ($($a:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($a)*);
    }};
}

macro_rules! say_raw {
    ($($a:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($a)*);
    }};
}

#[derive(Parser, Debug)]
#[command(name = "stitch", version, about = "Coverage-guided API fuzzing with typed code blocks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Specification document.
    #[arg(long, env = "STITCH_SPEC", global = true)]
    spec: Option<PathBuf>,
    #[arg(long, env = "STITCH_BACKEND", value_enum, default_value_t = BackendKind::Virtual, global = true)]
    backend: BackendKind,
    /// Compiled harness binary, for the native backend.
    #[arg(long, env = "STITCH_HARNESS", global = true)]
    harness: Option<PathBuf>,
    #[arg(long, env = "STITCH_SEED", default_value_t = 0, global = true)]
    seed: u64,
    #[arg(long, env = "STITCH_BUDGET_EXECS", global = true, conflicts_with = "budget_secs")]
    budget_execs: Option<u64>,
    #[arg(long, env = "STITCH_BUDGET_SECS", global = true)]
    budget_secs: Option<f64>,
    /// Corpus directory; entries, crashes and stats.json are written here.
    #[arg(long, env = "STITCH_CORPUS", global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, env = "STITCH_WORKERS", default_value_t = 1, global = true)]
    workers: usize,
    /// Probability of drawing a parameter from the block's hint class.
    #[arg(long, env = "STITCH_P_HINT", global = true)]
    p_hint: Option<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Virtual,
    Native,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a spec and report its blocks and constructable types.
    Validate {
        /// Also write the native harness source and runtime header here.
        #[arg(long)]
        emit_harness: Option<PathBuf>,
    },
    /// Run a fuzzing campaign.
    Fuzz,
    /// Execute one wire-format testcase and print its outcome.
    Exec { testcase: PathBuf },
    /// Shrink a crashing testcase to the instances the crash needs.
    Minimize {
        testcase: PathBuf,
        /// Output file; defaults to <testcase>.min.stc beside the input.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        max_execs: u64,
    },
    /// Write a standalone C++ reproducer for a testcase.
    Repro {
        testcase: PathBuf,
        /// Output directory; defaults to the current directory.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Pretty-print a stats.json file.
    Stats {
        /// Defaults to stats.json in the corpus directory.
        path: Option<PathBuf>,
    },
}

/// Error with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn user(e: impl Into<anyhow::Error>) -> Self {
        Failure { code: 1, error: e.into() }
    }

    fn internal(e: impl Into<anyhow::Error>) -> Self {
        Failure { code: 2, error: e.into() }
    }
}

impl fmt::Debug for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<BackendError> for Failure {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::IllFormed(_) => Failure::user(e),
            _ => Failure::internal(e),
        }
    }
}

impl From<CampaignError> for Failure {
    fn from(e: CampaignError) -> Self {
        match e {
            CampaignError::Backend(b) => b.into(),
            CampaignError::Persist(_) | CampaignError::Config(_) => Failure::user(e),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STITCH_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Validate { emit_harness } => validate(g, emit_harness.as_deref()),
        Command::Fuzz => fuzz(g),
        Command::Exec { testcase } => exec(g, testcase),
        Command::Minimize {
            testcase,
            out,
            max_execs,
        } => minimize_cmd(g, testcase, out.as_deref(), *max_execs),
        Command::Repro { testcase, out } => repro(g, testcase, out.as_deref()),
        Command::Stats { path } => stats(g, path.as_deref()),
    }
}

fn spec(g: &Global) -> Result<Specification> {
    let path = g
        .spec
        .as_ref()
        .ok_or_else(|| Failure::user(anyhow!("no spec given (--spec or STITCH_SPEC)")))?;
    load_spec(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(Failure::user)
}

fn backend(g: &Global, spec: &Specification) -> Result<Box<dyn Backend>> {
    match g.backend {
        BackendKind::Virtual => VirtualBackend::new(spec)
            .map(|b| Box::new(b) as Box<dyn Backend>)
            .map_err(Failure::user),
        BackendKind::Native => {
            let harness = g
                .harness
                .clone()
                .ok_or_else(|| Failure::user(anyhow!("the native backend needs --harness")))?;
            if !harness.is_file() {
                return Err(Failure::user(anyhow!("harness {} does not exist", harness.display())));
            }
            Ok(Box::new(NativeBackend::new(NativeConfig::new(harness))?))
        }
    }
}

fn read_testcase(path: &Path, spec: &Specification) -> Result<Testcase> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::user)?;
    let t = wire::deserialize_unchecked(&bytes)
        .with_context(|| format!("decoding {}", path.display()))
        .map_err(Failure::user)?;
    if let Err(e) = t.validate(spec) {
        let mut report = format!("{} is not well formed: {e}", path.display());
        for v in e.violations() {
            report.push_str(&format!("\n  {v}"));
        }
        return Err(Failure::user(anyhow!(report)));
    }
    Ok(t)
}

fn validate(g: &Global, emit_harness: Option<&Path>) -> Result<()> {
    let spec = spec(g)?;
    say!("revision {}", spec.revision);
    say!("{} types:", spec.types.len());
    let report = spec.constructability_report();
    for t in &spec.types {
        let tag = if report[&t.name] { "" } else { "  (unconstructable)" };
        say!("  {}{tag}", t.name);
    }
    say!("{} blocks:", spec.blocks.len());
    for b in &spec.blocks {
        let ports = |ps: &[stitch_core::spec::Port]| {
            ps.iter()
                .map(|p| spec.types[p.ty.index()].name.clone())
                .collect::<Vec<_>>()
                .join(", ")
        };
        say!("  {}({}) -> ({})", b.name, ports(&b.inputs), ports(&b.outputs));
    }
    for (name, ok) in &report {
        if !ok {
            eprintln!("warning: type {name} cannot be constructed by any block sequence");
        }
    }
    if let Some(dir) = emit_harness {
        let h = codegen::emit_harness(&spec).map_err(codegen_failure)?;
        std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(dir.join(codegen::HARNESS_FILE_NAME), &h.text))
            .and_then(|_| std::fs::write(dir.join(codegen::RUNTIME_HEADER_NAME), codegen::RUNTIME_HEADER))
            .with_context(|| format!("writing to {}", dir.display()))
            .map_err(Failure::user)?;
        say!("harness written to {}", dir.display());
    }
    Ok(())
}

fn codegen_failure(e: CodegenError) -> Failure {
    Failure::user(e)
}

fn campaign_config(g: &Global) -> Result<CampaignConfig> {
    let budget = match (g.budget_execs, g.budget_secs) {
        (Some(n), _) => Budget::Executions(n),
        (None, Some(s)) if s > 0.0 && s.is_finite() => Budget::Duration(Duration::from_secs_f64(s)),
        (None, Some(s)) => return Err(Failure::user(anyhow!("--budget-secs must be positive, got {s}"))),
        (None, None) => Budget::Executions(100_000),
    };
    if matches!(budget, Budget::Executions(0)) {
        return Err(Failure::user(anyhow!("--budget-execs must be positive")));
    }
    let mut c = CampaignConfig::new(g.seed, budget);
    c.workers = g.workers;
    c.corpus_dir = g.corpus.clone();
    if let Some(p) = g.p_hint {
        if !(0.0..=1.0).contains(&p) {
            return Err(Failure::user(anyhow!("--p-hint must be within [0, 1], got {p}")));
        }
        c.engine.mutation.p_hint = p;
    }
    Ok(c)
}

fn fuzz(g: &Global) -> Result<()> {
    let spec = Arc::new(spec(g)?);
    let config = campaign_config(g)?;
    let backend = backend(g, &spec)?;
    let r = run_campaign(spec.clone(), backend.as_ref(), &config)?;
    if let Some(m) = &r.migration {
        say!(
            "migrated corpus: {} changed blocks, {} entries dropped",
            m.changed_blocks.len(),
            m.dropped_changed.len() + m.dropped_invalid.len()
        );
    }
    say_raw!("{}", r.stats.render());
    for c in &r.crashes {
        say!("crash {} ({} -> {} instances)", c.key, c.original.len(), c.minimized.len());
    }
    Ok(())
}

fn describe(kind: &OutcomeKind) -> String {
    match kind {
        OutcomeKind::Completed => "Completed".to_string(),
        OutcomeKind::Bail { index } => format!("Bail@{index}"),
        OutcomeKind::Crash { index, crash_id } => format!("Crash@{index} ({crash_id})"),
        OutcomeKind::Hang => "Hang".to_string(),
    }
}

fn exec(g: &Global, path: &Path) -> Result<()> {
    let spec = spec(g)?;
    let t = read_testcase(path, &spec)?;
    let backend = backend(g, &spec)?;
    let out = backend.execute(&t)?;
    say!("{}, {} edges", describe(&out.kind), out.coverage.len());
    Ok(())
}

fn minimize_cmd(g: &Global, path: &Path, out: Option<&Path>, max_execs: u64) -> Result<()> {
    let spec = spec(g)?;
    let t = read_testcase(path, &spec)?;
    let backend = backend(g, &spec)?;
    let first = backend.execute(&t)?;
    let key = DedupKey::of(&spec, &t, &first.kind).ok_or_else(|| {
        Failure::user(anyhow!("{} does not crash ({})", path.display(), describe(&first.kind)))
    })?;
    let m = minimize(&spec, backend.as_ref(), &t, &key, max_execs)?;
    let dest = out.map(Path::to_path_buf).unwrap_or_else(|| path.with_extension("min.stc"));
    let names: Vec<&str> = m
        .testcase
        .instances
        .iter()
        .map(|i| spec.block(i.block).name.as_str())
        .collect();
    let report = serde_json::json!({
        "crash": key.to_string(),
        "original_instances": t.len(),
        "minimized_instances": m.testcase.len(),
        "minimized_blocks": names,
        "index": m.index,
        "partial": m.partial,
        "executions": m.execs,
    });
    let report_path = dest.with_extension("json");
    std::fs::write(&dest, wire::serialize(&m.testcase))
        .and_then(|_| std::fs::write(&report_path, serde_json::to_string_pretty(&report).expect("plain data")))
        .with_context(|| format!("writing {}", dest.display()))
        .map_err(Failure::user)?;
    say!(
        "{key}: {} -> {} instances in {} executions{}",
        t.len(),
        m.testcase.len(),
        m.execs,
        if m.partial { " (budget exhausted)" } else { "" }
    );
    say!("wrote {} and {}", dest.display(), report_path.display());
    Ok(())
}

fn repro(g: &Global, path: &Path, out: Option<&Path>) -> Result<()> {
    let spec = spec(g)?;
    let t = read_testcase(path, &spec)?;
    let key = match g.backend {
        BackendKind::Native => {
            let b = backend(g, &spec)?;
            DedupKey::of(&spec, &t, &b.execute(&t)?.kind)
        }
        BackendKind::Virtual => None,
    };
    let r = codegen::emit_reproducer(&spec, &t, key.as_ref()).map_err(codegen_failure)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let dest = dir.join(&r.file_name);
    std::fs::create_dir_all(&dir)
        .and_then(|_| std::fs::write(&dest, &r.text))
        .with_context(|| format!("writing {}", dest.display()))
        .map_err(Failure::user)?;
    say!("wrote {}", dest.display());
    Ok(())
}

fn stats(g: &Global, path: Option<&Path>) -> Result<()> {
    let path = match (path, &g.corpus) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(c)) => c.join("stats.json"),
        (None, None) => return Err(Failure::user(anyhow!("give a stats.json path or --corpus"))),
    };
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::user)?;
    let s = CampaignStats::from_json(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::user)?;
    say_raw!("{}", s.render());
    Ok(())
}
