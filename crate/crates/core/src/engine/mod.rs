//! The fuzzing loop: schedule, mutate, execute, admit, record crashes.

pub mod corpus;
pub mod crash;
pub mod migrate;
pub mod persist;
pub mod stats;

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mutation::{MutationConfig, MutationContext, Mutator, Operator};
use crate::outcome::{apply_reshapes, Backend, BackendError, DedupKey, Outcome, OutcomeKind};
use crate::spec::Specification;
use crate::testcase::Testcase;

pub use corpus::{Admission, Corpus, CorpusEntry, ScheduleConfig, Summary};
pub use crash::{minimize, CrashLedger, CrashReport, Minimized};
pub use migrate::{migrate_corpus, MigrationError, MigrationReport};
pub use persist::{corpus_digest, CorpusDir, PersistError};
pub use stats::{CampaignStats, OperatorStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Executions(u64),
    Duration(Duration),
}

/// How new testcases are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    Guided,
    /// Uniformly sampled block sequences of fixed length with no feedback.
    /// Samples that cannot be wired are discarded but still count as
    /// executions.
    UniformBaseline { len: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Share of structural operators; the rest are parameter mutations.
    pub p_structural: f64,
    /// Relative weights of regenerate, crossover, frontier extend and
    /// frontier trim.
    pub structural_weights: [f64; 4],
    pub schedule: ScheduleConfig,
    pub mutation: MutationConfig,
    pub minimize: bool,
    pub minimize_budget: u64,
    pub stop_after_unique_crashes: Option<usize>,
    pub stats_interval: Duration,
    pub mode: SearchMode,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            p_structural: 0.3,
            structural_weights: [1.0; 4],
            schedule: ScheduleConfig::default(),
            mutation: MutationConfig::default(),
            minimize: true,
            minimize_budget: 10_000,
            stop_after_unique_crashes: None,
            stats_interval: Duration::from_secs(5),
            mode: SearchMode::Guided,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub seed: u64,
    pub budget: Budget,
    pub workers: usize,
    pub corpus_dir: Option<PathBuf>,
    pub engine: EngineConfig,
}

impl CampaignConfig {
    pub fn new(seed: u64, budget: Budget) -> Self {
        CampaignConfig {
            seed,
            budget,
            workers: 1,
            corpus_dir: None,
            engine: EngineConfig::default(),
        }
    }

    /// Single worker with an execution budget: the run is reproducible and
    /// its stats carry no timing.
    pub fn is_deterministic(&self) -> bool {
        self.workers <= 1 && matches!(self.budget, Budget::Executions(_))
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("invalid campaign configuration: {0}")]
    Config(String),
}

#[derive(Debug)]
pub struct CampaignResult {
    pub corpus: Vec<CorpusEntry>,
    pub crashes: Vec<CrashReport>,
    pub stats: CampaignStats,
    pub migration: Option<MigrationReport>,
}

struct Shared {
    corpus: Corpus,
    ledger: CrashLedger,
    stats: CampaignStats,
    dir: Option<CorpusDir>,
    stop: bool,
    error: Option<CampaignError>,
    last_stats: Instant,
}

struct Env<'a> {
    spec: &'a Specification,
    backend: &'a dyn Backend,
    config: &'a CampaignConfig,
    started: Instant,
}

impl Env<'_> {
    fn out_of_budget(&self, executions: u64) -> bool {
        match self.config.budget {
            Budget::Executions(n) => executions >= n,
            Budget::Duration(d) => self.started.elapsed() >= d,
        }
    }

    fn snapshot_stats(&self, s: &mut Shared) -> CampaignStats {
        s.stats.corpus_size = s.corpus.len();
        s.stats.edges = s.corpus.edge_count();
        s.stats.unique_crashes = s.ledger.len();
        s.stats.refresh_rates();
        let mut st = s.stats.clone();
        if !self.config.is_deterministic() {
            st.set_timing(self.started.elapsed().as_secs_f64());
        }
        st
    }

    fn maybe_write_stats(&self, s: &mut Shared) -> Result<(), CampaignError> {
        if s.dir.is_none() || s.last_stats.elapsed() < self.config.engine.stats_interval {
            return Ok(());
        }
        s.last_stats = Instant::now();
        let st = self.snapshot_stats(s);
        s.dir.as_ref().expect("checked").write_stats(&st)?;
        Ok(())
    }

    /// Books one execution's outcome: counters, admission, crashes.
    fn record(
        &self,
        s: &mut Shared,
        t: &Testcase,
        out: &Outcome,
        op: Option<Operator>,
    ) -> Result<(), CampaignError> {
        match &out.kind {
            OutcomeKind::Bail { .. } => s.stats.bails += 1,
            OutcomeKind::Hang => s.stats.hangs += 1,
            OutcomeKind::Crash { .. } => s.stats.crashes += 1,
            OutcomeKind::Completed => {}
        }
        if let OutcomeKind::Crash { index, .. } = &out.kind {
            let key = DedupKey::of(self.spec, t, &out.kind).expect("crash outcome");
            if !s.ledger.is_duplicate(&key) {
                let at = s.stats.executions;
                let secs = self.started.elapsed().as_secs_f64();
                let mut report = CrashReport::unminimized(key, t.clone(), *index, secs, at);
                if self.config.engine.minimize {
                    let m = minimize(
                        self.spec,
                        self.backend,
                        t,
                        &report.key,
                        self.config.engine.minimize_budget,
                    )?;
                    s.stats.minimize_executions += m.execs;
                    report.minimized = m.testcase;
                    report.index = m.index;
                    report.partial = m.partial;
                    report.minimize_execs = m.execs;
                }
                log::info!(
                    "new crash {} at exec {} ({} -> {} instances)",
                    report.key,
                    at,
                    report.original.len(),
                    report.minimized.len()
                );
                if let Some(d) = &s.dir {
                    d.write_crash(self.spec, &report)?;
                }
                s.ledger.record(report);
                if let Some(n) = self.config.engine.stop_after_unique_crashes {
                    if s.ledger.len() >= n {
                        s.stop = true;
                    }
                }
            }
            return Ok(());
        }
        if let Some(i) = s
            .corpus
            .consider(t, out, self.spec.revision, s.stats.executions)
        {
            if let Some(op) = op {
                s.stats.operator(op.name()).admitted += 1;
            }
            let e = s.corpus.entry(i);
            let (fp, tc) = (e.fingerprint, e.testcase.clone());
            if let Some(d) = &mut s.dir {
                d.write_entry(fp, &tc)?;
            }
        }
        Ok(())
    }
}

fn execute(
    backend: &dyn Backend,
    mutator: &mut Mutator,
    mut t: Testcase,
) -> Result<(Testcase, Outcome), BackendError> {
    let out = backend.execute(&t)?;
    if !out.reshaped.is_empty() {
        for r in &out.reshaped {
            mutator.shapes.learn(t.instances[r.instance].block, &r.requested);
        }
        apply_reshapes(&mut t, &out.reshaped);
    }
    Ok((t, out))
}

fn pick_operator<R: Rng>(rng: &mut R, e: &EngineConfig) -> Operator {
    if !rng.gen_bool(e.p_structural.clamp(0.0, 1.0)) {
        return Operator::Params;
    }
    let total: f64 = e.structural_weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (op, w) in Operator::STRUCTURAL.iter().zip(e.structural_weights) {
        if x < w {
            return *op;
        }
        x -= w;
    }
    Operator::STRUCTURAL[3]
}

/// Produces the next testcase to run in guided mode. Falls back through
/// the other operators when the chosen one cannot apply.
fn next_guided<R: Rng>(
    rng: &mut R,
    mutator: &Mutator,
    engine: &EngineConfig,
    parent: Option<(Testcase, Option<OutcomeKind>)>,
    donor: Option<Testcase>,
) -> Option<(Testcase, Operator)> {
    let donors: Vec<Testcase> = donor.into_iter().collect();
    let Some((t, kind)) = parent else {
        let mut ctx = MutationContext::new(rng, &donors, None);
        return mutator
            .regenerate(&mut ctx)
            .ok()
            .map(|m| (m.testcase, Operator::Regenerate));
    };
    let first = pick_operator(rng, engine);
    let mut order = vec![first];
    let mut rest: Vec<Operator> = std::iter::once(Operator::Params)
        .chain(Operator::STRUCTURAL)
        .filter(|&o| o != first)
        .collect();
    rest.shuffle(rng);
    order.extend(rest);
    for op in order {
        let mut ctx = MutationContext::new(rng, &donors, kind.as_ref());
        if let Ok(m) = mutator.apply(op, &mut ctx, &t) {
            return Some((m.testcase, op));
        }
    }
    None
}

fn worker(env: &Env, shared: &Mutex<Shared>, mut rng: ChaCha8Rng, mut mutator: Mutator) {
    let lock = || shared.lock().expect("campaign state poisoned");
    loop {
        let (parent, donor) = {
            let mut s = lock();
            if s.stop || env.out_of_budget(s.stats.executions) {
                s.stop = true;
                return;
            }
            s.stats.executions += 1;
            match env.config.engine.mode {
                SearchMode::UniformBaseline { .. } => (None, None),
                SearchMode::Guided => {
                    let parent = s.corpus.schedule(&mut rng).map(|i| {
                        let e = s.corpus.entry(i);
                        (e.testcase.clone(), e.summary.as_outcome_kind())
                    });
                    let donor = if s.corpus.is_empty() {
                        None
                    } else {
                        let i = rng.gen_range(0..s.corpus.len());
                        Some(s.corpus.entry(i).testcase.clone())
                    };
                    (parent, donor)
                }
            }
        };

        let (t, op) = match env.config.engine.mode {
            SearchMode::UniformBaseline { len } => match mutator.uniform_sequence(&mut rng, len) {
                Some(t) => (t, None),
                None => continue,
            },
            SearchMode::Guided => match next_guided(&mut rng, &mutator, &env.config.engine, parent, donor) {
                Some((t, op)) => (t, Some(op)),
                None => continue,
            },
        };

        let result = execute(env.backend, &mut mutator, t);
        let mut s = lock();
        if let Some(op) = op {
            s.stats.operator(op.name()).applied += 1;
        }
        let step = result
            .map_err(CampaignError::from)
            .and_then(|(t, out)| env.record(&mut s, &t, &out, op))
            .and_then(|_| env.maybe_write_stats(&mut s));
        if let Err(e) = step {
            s.stop = true;
            s.error.get_or_insert(e);
            return;
        }
    }
}

/// Runs a campaign to budget exhaustion (or the configured crash limit).
///
/// With a corpus directory, existing entries are loaded (and migrated if
/// the spec changed), re-executed, and the directory is rewritten to hold
/// exactly the resulting corpus.
pub fn run_campaign(
    spec: Arc<Specification>,
    backend: &dyn Backend,
    config: &CampaignConfig,
) -> Result<CampaignResult, CampaignError> {
    if config.workers == 0 {
        return Err(CampaignError::Config("worker count must be at least 1".into()));
    }
    if let Budget::Duration(d) = config.budget {
        if d.is_zero() {
            return Err(CampaignError::Config("time budget must be positive".into()));
        }
    }
    let started = Instant::now();
    let env = Env {
        spec: &spec,
        backend,
        config,
        started,
    };

    let mut mutator = Mutator::new(spec.clone(), config.engine.mutation.clone());
    if let Some(shapes) = backend.param_shapes() {
        for (b, shape) in spec.block_ids().zip(shapes) {
            mutator.shapes.learn(b, &shape);
        }
    }

    let mut dir = None;
    let mut migration = None;
    let mut resumed = Vec::new();
    if let Some(path) = &config.corpus_dir {
        let mut d = CorpusDir::open(path)?;
        let loaded = d.load(&spec)?;
        migration = loaded.migration;
        resumed = loaded.testcases;
        d.clear_entries()?;
        d.write_snapshot(&spec)?;
        dir = Some(d);
    }

    let shared = Mutex::new(Shared {
        corpus: Corpus::new(config.engine.schedule.clone()),
        ledger: CrashLedger::default(),
        stats: CampaignStats::new(config.seed, backend.name(), config.workers),
        dir,
        stop: false,
        error: None,
        last_stats: started,
    });

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    if config.engine.mode == SearchMode::Guided {
        let mut s = shared.lock().expect("fresh mutex");
        let mut seeds = resumed;
        for &b in mutator.usable_blocks().to_vec().iter() {
            let empty: Vec<Testcase> = Vec::new();
            let mut ctx = MutationContext::new(&mut rng, &empty, None);
            if let Ok(m) = mutator.regenerate_from(&mut ctx, b) {
                seeds.push(m.testcase);
            }
        }
        for t in seeds {
            s.stats.executions += 1;
            let (t, out) = execute(backend, &mut mutator, t)?;
            env.record(&mut s, &t, &out, None)?;
        }
    }

    if config.workers == 1 {
        worker(&env, &shared, rng, mutator);
    } else {
        std::thread::scope(|scope| {
            for w in 0..config.workers {
                let mut r = ChaCha8Rng::seed_from_u64(config.seed);
                r.set_stream(w as u64 + 1);
                let m = mutator.clone();
                let env = &env;
                let shared = &shared;
                scope.spawn(move || worker(env, shared, r, m));
            }
        });
    }

    let mut s = shared.into_inner().expect("campaign state poisoned");
    if let Some(e) = s.error.take() {
        return Err(e);
    }
    let stats = env.snapshot_stats(&mut s);
    if let Some(d) = &s.dir {
        d.write_stats(&stats)?;
    }
    Ok(CampaignResult {
        corpus: s.corpus.into_entries(),
        crashes: s.ledger.into_reports(),
        stats,
        migration,
    })
}
