//! Experiment harness: config parsing, seeded run fan-out, log sinks,
//! summaries and the verification suite used by the CLI.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::algorithms::{run, AlgoConfig, Algorithm, ErrorWindow, FinalPolicyRule, RunLog, RunOutput};
use crate::environments::{build_grid, build_scenario, GridSpec, ScenarioName};
use crate::error::{Error, Result};
use crate::mapping::MapClass;
use crate::mdp::{exact_q, random_mdp, random_policy, value_iteration, Policy, QTable, TabularMdp};
use crate::theory::{
    check_importance_ratio, check_occupancy_identity, check_performance_difference, check_regret_lemma,
    prop_bound_with_oracle, BoundInputs, BoundKind, BoundReport,
};

pub const DEFAULT_THRESHOLD: f64 = 0.9;
pub const CSV_HEADER: &str = "t,alpha,eps_td_emp,eps_cd_emp,eps_td_exact,eps_cd_exact,suboptimality,wall_ms";
pub const THREADS_ENV: &str = "QAVATAR_THREADS";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapSearch {
    Identity,
    Greedy,
    Exhaustive,
}

/// Per-algorithm settings; unset fields fall back to the shared `[algo]`
/// table and then to library defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoSettings {
    pub iterations: Option<usize>,
    pub samples_per_iter: Option<usize>,
    pub learning_rate: Option<f64>,
    pub final_policy: Option<FinalPolicyRule>,
    pub error_window: Option<ErrorWindow>,
    pub restart_prob: Option<f64>,
    pub map_search: Option<MapSearch>,
    pub map_restarts: Option<usize>,
    pub map_bound: Option<u64>,
    pub alpha_override: Option<f64>,
    pub record_wall_time: Option<bool>,
}

impl AlgoSettings {
    fn or(&self, base: &AlgoSettings) -> AlgoSettings {
        AlgoSettings {
            iterations: self.iterations.or(base.iterations),
            samples_per_iter: self.samples_per_iter.or(base.samples_per_iter),
            learning_rate: self.learning_rate.or(base.learning_rate),
            final_policy: self.final_policy.or(base.final_policy),
            error_window: self.error_window.or(base.error_window),
            restart_prob: self.restart_prob.or(base.restart_prob),
            map_search: self.map_search.or(base.map_search),
            map_restarts: self.map_restarts.or(base.map_restarts),
            map_bound: self.map_bound.or(base.map_bound),
            alpha_override: self.alpha_override.or(base.alpha_override),
            record_wall_time: self.record_wall_time.or(base.record_wall_time),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSection {
    name: Option<String>,
    seed: Option<u64>,
    target: Option<GridSpec>,
    sources: Option<Vec<GridSpec>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seeds: Spanned<Vec<u64>>,
    algorithms: Spanned<Vec<String>>,
    output: Spanned<String>,
    #[serde(default)]
    exact_logging: bool,
    #[serde(default)]
    verify_bounds: bool,
    threshold: Option<Spanned<f64>>,
    format: Option<OutputFormat>,
    scenario: Spanned<ScenarioSection>,
    #[serde(default)]
    algo: AlgoSettings,
    #[serde(default)]
    overrides: BTreeMap<String, Spanned<AlgoSettings>>,
}

/// Where the target and source critics come from.
#[derive(Clone, Debug, PartialEq)]
pub enum ProblemSource {
    Named { name: ScenarioName, seed: u64 },
    /// Explicit grids; each source critic is that grid's optimal action-value table.
    Grids { target: GridSpec, sources: Vec<GridSpec> },
}

/// Target MDP, source critics and the scenario's preferred map class.
#[derive(Clone, Debug)]
pub struct Problem {
    pub target: TabularMdp,
    pub sources: Vec<QTable>,
    pub map_class: MapClass,
}

impl ProblemSource {
    pub fn build(&self) -> Result<Problem> {
        match self {
            ProblemSource::Named { name, seed } => {
                let sc = build_scenario(*name, *seed)?;
                Ok(Problem {
                    target: sc.target,
                    sources: sc.source_critics,
                    map_class: sc.map_class,
                })
            }
            ProblemSource::Grids { target, sources } => {
                let tar = build_grid(target)?;
                let mut critics = Vec::new();
                let mut same_shape = true;
                for spec in sources {
                    let src = build_grid(spec)?;
                    same_shape &= src.mdp.n_states() == tar.mdp.n_states() && src.mdp.n_actions() == tar.mdp.n_actions();
                    critics.push(value_iteration(&src.mdp, 1e-10).0);
                }
                let map_class = if same_shape { MapClass::fixed_identity() } else { MapClass::greedy(2) };
                Ok(Problem {
                    target: tar.mdp,
                    sources: critics,
                    map_class,
                })
            }
        }
    }
}

/// A validated experiment description.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSource,
    pub algorithms: Vec<Algorithm>,
    pub settings: BTreeMap<Algorithm, AlgoSettings>,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub exact_logging: bool,
    pub verify_bounds: bool,
    pub threshold: f64,
    pub format: OutputFormat,
}

fn line_col(text: &str, span: Range<usize>) -> (usize, usize) {
    let start = span.start.min(text.len());
    let before = &text[..start];
    let line = before.matches('\n').count() + 1;
    let col = start - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::from_text(&text, &path.display().to_string())
    }

    /// Parses a TOML config; `origin` prefixes error messages.
    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let loc = e.span().map(|s| line_col(text, s));
            let msg = e.message().trim().to_string();
            match loc {
                Some((l, c)) => Error::Config(format!("{origin}:{l}:{c}: {msg}")),
                None => Error::Config(format!("{origin}: {msg}")),
            }
        })?;
        let fail = |span: Range<usize>, msg: String| {
            let (l, c) = line_col(text, span);
            Error::Config(format!("{origin}:{l}:{c}: {msg}"))
        };

        if raw.seeds.get_ref().is_empty() {
            return Err(fail(raw.seeds.span(), "at least one seed is required".into()));
        }
        if raw.algorithms.get_ref().is_empty() {
            return Err(fail(raw.algorithms.span(), "algorithm list is empty".into()));
        }
        let mut algorithms = Vec::new();
        for name in raw.algorithms.get_ref() {
            let a = Algorithm::parse(name).ok_or_else(|| {
                fail(
                    raw.algorithms.span(),
                    format!("unknown algorithm '{name}' (expected q-npg, dqt, qavatar or qavatar-multi)"),
                )
            })?;
            if algorithms.contains(&a) {
                return Err(fail(raw.algorithms.span(), format!("algorithm '{name}' listed twice")));
            }
            algorithms.push(a);
        }
        if raw.output.get_ref().trim().is_empty() {
            return Err(fail(raw.output.span(), "output path is empty".into()));
        }
        let threshold = match &raw.threshold {
            Some(t) => {
                let v = *t.get_ref();
                if !(v > 0.0 && v <= 1.0) {
                    return Err(fail(t.span(), format!("threshold {v} outside (0, 1]")));
                }
                v
            }
            None => DEFAULT_THRESHOLD,
        };

        let sc = raw.scenario.get_ref();
        let problem = match (&sc.name, &sc.target) {
            (Some(name), None) => {
                if sc.sources.is_some() {
                    return Err(fail(raw.scenario.span(), "named scenarios take no source grids".into()));
                }
                let name = name
                    .parse::<ScenarioName>()
                    .map_err(|e| fail(raw.scenario.span(), e.to_string()))?;
                ProblemSource::Named {
                    name,
                    seed: sc.seed.unwrap_or(0),
                }
            }
            (None, Some(target)) => {
                let sources = sc.sources.clone().unwrap_or_default();
                for spec in std::iter::once(target).chain(&sources) {
                    spec.validate().map_err(|e| fail(raw.scenario.span(), e.to_string()))?;
                }
                ProblemSource::Grids {
                    target: target.clone(),
                    sources,
                }
            }
            _ => {
                return Err(fail(
                    raw.scenario.span(),
                    "scenario needs exactly one of `name` or `target`".into(),
                ))
            }
        };

        let mut settings = BTreeMap::new();
        for (name, ov) in &raw.overrides {
            let a = Algorithm::parse(name)
                .ok_or_else(|| fail(ov.span(), format!("override for unknown algorithm '{name}'")))?;
            settings.insert(a, ov.get_ref().or(&raw.algo));
        }
        for a in &algorithms {
            settings.entry(*a).or_insert_with(|| raw.algo.clone());
        }
        let config = ExperimentConfig {
            problem,
            algorithms,
            settings,
            seeds: raw.seeds.into_inner(),
            output: PathBuf::from(raw.output.into_inner()),
            exact_logging: raw.exact_logging,
            verify_bounds: raw.verify_bounds,
            threshold,
            format: raw.format.unwrap_or_default(),
        };
        for a in &config.algorithms {
            config
                .algo_config(*a, config.seeds[0], &MapClass::fixed_identity())
                .validate()
                .map_err(|e| Error::Config(format!("{origin}: invalid settings for {}: {e}", a.name())))?;
        }
        Ok(config)
    }

    /// Library configuration for one run.
    pub fn algo_config(&self, algorithm: Algorithm, seed: u64, default_class: &MapClass) -> AlgoConfig {
        let s = self.settings.get(&algorithm).cloned().unwrap_or_default();
        let mut c = AlgoConfig::new(s.iterations.unwrap_or(100), s.samples_per_iter.unwrap_or(8), seed);
        c.learning_rate = s.learning_rate;
        c.final_policy = s.final_policy.unwrap_or_default();
        c.error_window = s.error_window.unwrap_or_default();
        c.restart_prob = s.restart_prob;
        c.alpha_override = s.alpha_override;
        c.record_wall_time = s.record_wall_time.unwrap_or(false);
        c.exact_logging = self.exact_logging;
        c.keep_trace = self.verify_bounds;
        c.map_class = match s.map_search {
            None => default_class.clone(),
            Some(MapSearch::Identity) => MapClass::fixed_identity(),
            Some(MapSearch::Greedy) => MapClass::greedy(s.map_restarts.unwrap_or(2)),
            Some(MapSearch::Exhaustive) => MapClass::exhaustive(s.map_bound.unwrap_or(1 << 20)),
        };
        c
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v:.11e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

/// Renders a run log as CSV. Multi-source runs report the total source
/// weight and the smallest cross-domain error.
pub fn log_to_csv(log: &RunLog) -> String {
    let mut out = String::with_capacity(64 * (log.records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &log.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.t,
            fmt_num(r.alpha),
            fmt_opt(r.eps_td_emp),
            fmt_opt(r.eps_cd_emp.iter().copied().reduce(f64::min)),
            fmt_opt(r.eps_td_exact),
            fmt_opt(r.eps_cd_exact.iter().copied().reduce(f64::min)),
            fmt_num(r.suboptimality),
            fmt_opt(r.wall_ms),
        );
    }
    out
}

pub fn log_to_json(log: &RunLog) -> Result<String> {
    let mut s = serde_json::to_string_pretty(log).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn log_file_name(log: &RunLog, format: OutputFormat) -> String {
    format!("{}_seed{}.{}", log.algorithm.name(), log.seed, format.extension())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgoSummary {
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub final_value_mean: f64,
    pub final_value_std: f64,
    pub final_suboptimality_mean: f64,
    pub final_suboptimality_std: f64,
    /// First iteration at or above the threshold, per seed.
    pub time_to_threshold: Vec<Option<usize>>,
    /// Mean over seeds, counting a run that never reaches the threshold as `T + 1`.
    pub time_to_threshold_mean: f64,
    pub reached: usize,
    /// Per-iteration mean over seeds of the total source weight.
    pub alpha_trace_mean: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub report: BoundReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub optimal_value: f64,
    pub threshold: f64,
    pub algorithms: Vec<AlgoSummary>,
    pub bounds: Vec<BoundRecord>,
}

impl Summary {
    pub fn bounds_ok(&self) -> bool {
        self.bounds.iter().all(|b| b.report.passed())
    }

    pub fn get(&self, algorithm: Algorithm) -> Option<&AlgoSummary> {
        self.algorithms.iter().find(|a| a.algorithm == algorithm)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "optimal value {:.6}, threshold {:.2} of optimal", self.optimal_value, self.threshold);
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>22} {:>22} {:>10} {:>8} {:>10}",
            "algorithm", "seeds", "final value", "suboptimality", "ttt mean", "reached", "mean alpha"
        );
        for a in &self.algorithms {
            let (alpha, _) = mean_std(&a.alpha_trace_mean);
            let _ = writeln!(
                out,
                "{:<14} {:>6} {:>10.6} +- {:<8.6} {:>10.6} +- {:<8.6} {:>10.2} {:>8} {:>10.4}",
                a.algorithm.name(),
                a.seeds.len(),
                a.final_value_mean,
                a.final_value_std,
                a.final_suboptimality_mean,
                a.final_suboptimality_std,
                a.time_to_threshold_mean,
                format!("{}/{}", a.reached, a.seeds.len()),
                alpha,
            );
        }
        for b in &self.bounds {
            let r = &b.report;
            let _ = writeln!(
                out,
                "bound {:<10} seed {:<4} lhs {:.6} <= {:.6}  satisfied={} b<=c={} consistent={}",
                b.algorithm.name(),
                b.seed,
                r.lhs_avg_suboptimality,
                r.term_a + r.term_b,
                r.satisfied,
                r.b_le_c,
                r.consistent,
            );
        }
        out
    }
}

/// Options that do not belong in the config file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; `None` reads `QAVATAR_THREADS` and falls back to one.
    pub threads: Option<usize>,
    /// Replaces the seed list.
    pub seed_override: Option<u64>,
    pub output_override: Option<PathBuf>,
    pub format_override: Option<OutputFormat>,
}

pub fn resolve_threads(explicit: Option<usize>) -> Result<usize> {
    if let Some(n) = explicit {
        return if n == 0 {
            Err(Error::Config("thread count must be at least 1".into()))
        } else {
            Ok(n)
        };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV}='{v}' is not a positive integer"))),
        Err(_) => Ok(1),
    }
}

fn bound_kind(algorithm: Algorithm) -> Option<BoundKind> {
    match algorithm {
        Algorithm::QNpg => Some(BoundKind::Npg),
        Algorithm::Dqt => Some(BoundKind::Dqt),
        Algorithm::QAvatar => Some(BoundKind::Qavatar),
        Algorithm::QAvatarMulti => None,
    }
}

/// Sources an algorithm consumes; single-source algorithms take the first.
fn sources_for(algorithm: Algorithm, sources: &[QTable]) -> &[QTable] {
    match algorithm {
        Algorithm::QNpg => &[],
        Algorithm::Dqt | Algorithm::QAvatar => &sources[..sources.len().min(1)],
        Algorithm::QAvatarMulti => sources,
    }
}

/// Result of one (algorithm, seed) job.
#[derive(Clone, Debug)]
pub struct JobResult {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub output: RunOutput,
    pub bound: Option<BoundReport>,
}

/// Runs every (algorithm, seed) pair and returns results sorted by
/// algorithm then seed, independent of the thread count.
pub fn run_jobs(config: &ExperimentConfig, problem: &Problem, threads: usize, oracle: &(dyn Fn(&TabularMdp, &Policy) -> QTable + Sync)) -> Result<Vec<JobResult>> {
    let mut algorithms = config.algorithms.clone();
    algorithms.sort();
    let jobs: Vec<(Algorithm, u64)> = algorithms
        .iter()
        .flat_map(|a| config.seeds.iter().map(move |s| (*a, *s)))
        .collect();
    let work = |&(algorithm, seed): &(Algorithm, u64)| -> Result<JobResult> {
        let cfg = config.algo_config(algorithm, seed, &problem.map_class);
        let mut output = run(algorithm, &problem.target, sources_for(algorithm, &problem.sources), &cfg)?;
        let bound = match (output.trace.take(), bound_kind(algorithm)) {
            (Some(trace), Some(kind)) => Some(prop_bound_with_oracle(
                kind,
                &problem.target,
                &BoundInputs::from_trace(&trace),
                oracle,
            )?),
            _ => None,
        };
        Ok(JobResult {
            algorithm,
            seed,
            output,
            bound,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(work).collect())
}

pub fn summarize(config: &ExperimentConfig, results: &[JobResult]) -> Summary {
    let optimal_value = results.first().map_or(f64::NAN, |r| r.output.log.optimal_value);
    let mut algorithms = Vec::new();
    let mut seen: Vec<Algorithm> = results.iter().map(|r| r.algorithm).collect();
    seen.dedup();
    for a in seen {
        let runs: Vec<&JobResult> = results.iter().filter(|r| r.algorithm == a).collect();
        let values: Vec<f64> = runs.iter().map(|r| r.output.final_value).collect();
        let subopts: Vec<f64> = runs.iter().map(|r| r.output.final_suboptimality).collect();
        let ttt: Vec<Option<usize>> = runs.iter().map(|r| r.output.log.time_to_threshold(config.threshold)).collect();
        let censored: Vec<f64> = runs
            .iter()
            .zip(&ttt)
            .map(|(r, t)| t.unwrap_or(r.output.log.records.len() + 1) as f64)
            .collect();
        let len = runs.iter().map(|r| r.output.log.records.len()).min().unwrap_or(0);
        let alpha_trace_mean = (0..len)
            .map(|t| runs.iter().map(|r| r.output.log.records[t].alpha).sum::<f64>() / runs.len() as f64)
            .collect();
        let (vm, vs) = mean_std(&values);
        let (sm, ss) = mean_std(&subopts);
        algorithms.push(AlgoSummary {
            algorithm: a,
            seeds: runs.iter().map(|r| r.seed).collect(),
            final_value_mean: vm,
            final_value_std: vs,
            final_suboptimality_mean: sm,
            final_suboptimality_std: ss,
            reached: ttt.iter().filter(|t| t.is_some()).count(),
            time_to_threshold: ttt,
            time_to_threshold_mean: mean_std(&censored).0,
            alpha_trace_mean,
        });
    }
    let bounds = results
        .iter()
        .filter_map(|r| {
            r.bound.clone().map(|report| BoundRecord {
                algorithm: r.algorithm,
                seed: r.seed,
                report,
            })
        })
        .collect();
    Summary {
        optimal_value,
        threshold: config.threshold,
        algorithms,
        bounds,
    }
}

fn prepare_output(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("output path {} is not writable: {e}", dir.display())))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"")
        .and_then(|_| fs::remove_file(&probe))
        .map_err(|e| Error::Config(format!("output path {} is not writable: {e}", dir.display())))
}

/// Applies command-line overrides to a parsed config.
pub fn apply_options(config: &mut ExperimentConfig, opts: &RunOptions) {
    if let Some(seed) = opts.seed_override {
        config.seeds = vec![seed];
    }
    if let Some(out) = &opts.output_override {
        config.output = out.clone();
    }
    if let Some(f) = opts.format_override {
        config.format = f;
    }
}

/// Runs the experiment and writes per-run logs, `summary.json` and, when
/// bounds are verified, `bounds.json` into the output directory.
pub fn run_experiment(config: &ExperimentConfig, threads: usize) -> Result<Summary> {
    prepare_output(&config.output)?;
    let problem = config.problem.build()?;
    let results = run_jobs(config, &problem, threads, &exact_q)?;
    for r in &results {
        let log = &r.output.log;
        let body = match config.format {
            OutputFormat::Csv => log_to_csv(log),
            OutputFormat::Json => log_to_json(log)?,
        };
        fs::write(config.output.join(log_file_name(log, config.format)), body)?;
    }
    let summary = summarize(config, &results);
    let mut json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Parse(e.to_string()))?;
    json.push('\n');
    fs::write(config.output.join("summary.json"), json)?;
    if config.verify_bounds {
        let mut b = serde_json::to_string_pretty(&summary.bounds).map_err(|e| Error::Parse(e.to_string()))?;
        b.push('\n');
        fs::write(config.output.join("bounds.json"), b)?;
    }
    Ok(summary)
}

/// Outcome of one verification case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub suite: String,
    pub case: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub cases: Vec<CaseResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    fn push(&mut self, suite: &str, case: String, passed: bool, detail: String) {
        self.cases.push(CaseResult {
            suite: suite.to_string(),
            case,
            passed,
            detail,
        });
    }

    /// One line per suite with its pass count, then every failing case.
    pub fn table(&self) -> String {
        let mut suites: Vec<&str> = Vec::new();
        for c in &self.cases {
            if !suites.contains(&c.suite.as_str()) {
                suites.push(&c.suite);
            }
        }
        let mut out = String::new();
        for s in suites {
            let cases: Vec<&CaseResult> = self.cases.iter().filter(|c| c.suite == s).collect();
            let ok = cases.iter().filter(|c| c.passed).count();
            let tag = if ok == cases.len() { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{tag} {s}: {ok}/{} cases", cases.len());
            for c in cases.iter().filter(|c| !c.passed) {
                let _ = writeln!(out, "  failed {}: {}", c.case, c.detail);
            }
        }
        out
    }
}

/// Size used for the random MDPs of the lemma suites.
fn lemma_mdp(i: u64) -> TabularMdp {
    let ns = 2 + (i % 5) as usize;
    let na = 2 + (i % 2) as usize;
    random_mdp(ns, na, 0.9, 1000 + i)
}

/// Lemma suites on random MDPs, then bound reports for each configured
/// algorithm on the configured problem with the first seed.  `oracle`
/// computes action values for the bound reports.
pub fn run_verification(
    config: &ExperimentConfig,
    threads: usize,
    oracle: &(dyn Fn(&TabularMdp, &Policy) -> QTable + Sync),
) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    for i in 0..20 {
        let mdp = lemma_mdp(i);
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let c = check_performance_difference(&mdp, &random_policy(ns, na, 2.0, 2 * i), &random_policy(ns, na, 2.0, 2 * i + 1))?;
        report.push("performance-difference", format!("mdp {i}"), c.holds, format!("{:.3e} vs {:.3e}", c.lhs, c.rhs));
    }
    for i in 0..10 {
        let mdp = lemma_mdp(100 + i);
        let pi = random_policy(mdp.n_states(), mdp.n_actions(), 2.0, 100 + i);
        for k in [1, 2, 5] {
            let c = check_importance_ratio(&mdp, &pi, k)?;
            report.push("importance-ratio", format!("mdp {i} k {k}"), c.holds, format!("{:.6e} <= {:.6e}", c.lhs, c.rhs));
        }
    }
    for i in 0..5 {
        let mdp = lemma_mdp(200 + i);
        let pi = random_policy(mdp.n_states(), mdp.n_actions(), 1.0, 200 + i);
        let c = check_occupancy_identity(&mdp, &pi, mdp.rewards(), 4000, 200, 200 + i)?;
        report.push(
            "occupancy-identity",
            format!("mdp {i}"),
            c.holds,
            format!("estimate {:.5} +- {:.5}, exact {:.5}", c.estimate, c.std_error, c.exact),
        );
    }
    for i in 0..10 {
        let mdp = lemma_mdp(300 + i);
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let hi = mdp.max_value();
        let t_total = 10 + i as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(300 + i);
        let critics: Vec<QTable> = (0..t_total)
            .map(|_| QTable::from_values(ns, na, (0..ns * na).map(|_| rng.gen_range(0.0..=hi)).collect()).expect("shape"))
            .collect();
        let eta = (1.0 - mdp.gamma()) * (1.0 / t_total as f64).sqrt();
        let c = check_regret_lemma(&mdp, &critics, eta)?;
        report.push("regret", format!("sequence {i}"), c.holds, format!("{:.4} <= {:.4}", c.lhs, c.rhs));
    }

    let problem = config.problem.build()?;
    let mut bound_config = config.clone();
    bound_config.seeds.truncate(1);
    bound_config.verify_bounds = true;
    bound_config.algorithms.retain(|a| bound_kind(*a).is_some());
    for r in run_jobs(&bound_config, &problem, threads, oracle)? {
        if let Some(b) = r.bound {
            report.push(
                "bounds",
                format!("{} seed {}", r.algorithm.name(), r.seed),
                b.passed(),
                format!(
                    "lhs {:.6}, rhs {:.6}, b<=c {}, oracle residual {:.3e}",
                    b.lhs_avg_suboptimality,
                    b.term_a + b.term_b,
                    b.b_le_c,
                    b.max_oracle_residual
                ),
            );
        }
    }
    Ok(report)
}

/// Action-value oracle with every entry shifted by `shift`; used to check
/// that the verification suite notices a broken evaluator.
pub fn shifted_oracle(shift: f64) -> impl Fn(&TabularMdp, &Policy) -> QTable + Sync {
    move |mdp, policy| exact_q(mdp, policy).map_values(|v| v + shift)
}
