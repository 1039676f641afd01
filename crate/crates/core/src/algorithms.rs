//! Softmax NPG learners: Q-NPG on a fitted target critic, direct transfer of
//! a mapped source critic, and the hybrid learner that mixes the two with an
//! error-driven weight (optionally over several sources).

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{batch_residuals, cross_domain_error, fit_q_td, td_error};
use crate::mapping::{search_maps, DomainMap, MapClass};
use crate::mdp::{sample_batch, start_value, value_iteration, Policy, QTable, TabularMdp, Transition, TransitionBatch, LOGIT_FLOOR};

/// Both errors below this are treated as zero by [`alpha_weight`].
pub const DEGENERATE_ERROR: f64 = 1e-15;
/// Errors are floored here before inversion in [`multi_source_alpha`].
pub const ERROR_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "q-npg")]
    QNpg,
    #[serde(rename = "dqt")]
    Dqt,
    #[serde(rename = "qavatar")]
    QAvatar,
    #[serde(rename = "qavatar-multi")]
    QAvatarMulti,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::QNpg, Algorithm::Dqt, Algorithm::QAvatar, Algorithm::QAvatarMulti];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::QNpg => "q-npg",
            Algorithm::Dqt => "dqt",
            Algorithm::QAvatar => "qavatar",
            Algorithm::QAvatarMulti => "qavatar-multi",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }

    fn uses_target_critic(self) -> bool {
        !matches!(self, Algorithm::Dqt)
    }

    fn uses_sources(self) -> bool {
        !matches!(self, Algorithm::QNpg)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalPolicyRule {
    /// The policy after the last update.
    #[default]
    LastIterate,
    /// A policy drawn uniformly (with the run seed) from the `T` iterates
    /// that were used to collect data.
    UniformMixture,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    #[default]
    OnPolicy,
    /// Data collected by a fixed behavior policy.
    Behavior(Policy),
}

/// Which transitions feed the empirical errors that set the mixing weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorWindow {
    /// The batch of the current iteration.
    #[default]
    CurrentBatch,
    /// Every transition collected so far.
    History,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub iterations: usize,
    pub samples_per_iter: usize,
    /// `None` selects `(1 - gamma) * sqrt(1 / T)`.
    pub learning_rate: Option<f64>,
    pub final_policy: FinalPolicyRule,
    pub sampling: Sampling,
    pub map_class: MapClass,
    /// Starting maps, one per source; defaults to identity when shapes agree
    /// and to the all-zeros map otherwise.
    pub initial_maps: Vec<DomainMap>,
    pub error_window: ErrorWindow,
    /// `None` selects `1 - gamma`.
    pub restart_prob: Option<f64>,
    /// Log exact `d^pi`-weighted errors next to the empirical ones.
    pub exact_logging: bool,
    /// Retain per-iteration policies and critics for bound verification.
    pub keep_trace: bool,
    /// Replaces the computed mixing weight (single-source only).
    pub alpha_override: Option<f64>,
    pub record_wall_time: bool,
    pub seed: u64,
}

impl AlgoConfig {
    pub fn new(iterations: usize, samples_per_iter: usize, seed: u64) -> Self {
        Self {
            iterations,
            samples_per_iter,
            learning_rate: None,
            final_policy: FinalPolicyRule::LastIterate,
            sampling: Sampling::OnPolicy,
            map_class: MapClass::fixed_identity(),
            initial_maps: Vec::new(),
            error_window: ErrorWindow::CurrentBatch,
            restart_prob: None,
            exact_logging: false,
            keep_trace: false,
            alpha_override: None,
            record_wall_time: false,
            seed,
        }
    }

    pub fn eta(&self, gamma: f64) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| default_learning_rate(gamma, self.iterations))
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if self.samples_per_iter == 0 {
            return Err(Error::InvalidArgument("samples per iteration must be at least 1".into()));
        }
        if let Some(eta) = self.learning_rate {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::InvalidArgument(format!("learning rate must be positive, got {eta}")));
            }
        }
        if let Some(p) = self.restart_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("restart probability {p} outside [0, 1]")));
            }
        }
        if let Some(a) = self.alpha_override {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InvalidArgument(format!("alpha override {a} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

pub fn default_learning_rate(gamma: f64, iterations: usize) -> f64 {
    (1.0 - gamma) * (1.0 / iterations as f64).sqrt()
}

/// Softmax NPG step: `logits += eta * critic`, then a per-row max-shift.
pub fn npg_step(policy: &Policy, critic: &QTable, eta: f64) -> Result<Policy> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be nonnegative, got {eta}")));
    }
    if (critic.n_states(), critic.n_actions()) != (policy.n_states(), policy.n_actions()) {
        return Err(Error::Dimension("critic shape does not match the policy".into()));
    }
    if critic.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("critic values must be finite".into()));
    }
    let na = policy.n_actions();
    let mut next = policy.clone();
    for (row, q) in next.logits_mut().chunks_mut(na).zip(critic.values().chunks(na)) {
        for (l, v) in row.iter_mut().zip(q) {
            *l += eta * v;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for l in row.iter_mut() {
            *l = (*l - max).max(LOGIT_FLOOR);
        }
    }
    Ok(next)
}

/// Source-critic weight `eps_td / (eps_cd + eps_td)`; 0.5 when both errors
/// are numerically zero.
pub fn alpha_weight(eps_td: f64, eps_cd: f64) -> Result<f64> {
    if !(eps_td >= 0.0 && eps_cd >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "errors must be nonnegative, got td {eps_td}, cd {eps_cd}"
        )));
    }
    if eps_td < DEGENERATE_ERROR && eps_cd < DEGENERATE_ERROR {
        return Ok(0.5);
    }
    Ok(eps_td / (eps_cd + eps_td))
}

/// Inverse-error weights for a target critic and several source critics.
/// Returns `(target_weight, source_weights)`, which sum to one.
pub fn multi_source_alpha(eps_td: f64, eps_cd: &[f64]) -> Result<(f64, Vec<f64>)> {
    if eps_cd.is_empty() {
        return Err(Error::InvalidArgument("at least one source error is required".into()));
    }
    if eps_td < 0.0 || eps_td.is_nan() || eps_cd.iter().any(|e| *e < 0.0 || e.is_nan()) {
        return Err(Error::InvalidArgument("errors must be nonnegative".into()));
    }
    let inv_td = 1.0 / eps_td.max(ERROR_FLOOR);
    let inv_cd: Vec<f64> = eps_cd.iter().map(|e| 1.0 / e.max(ERROR_FLOOR)).collect();
    let denom = inv_td + inv_cd.iter().sum::<f64>();
    Ok((inv_td / denom, inv_cd.iter().map(|x| x / denom).collect()))
}

/// Convex combination `(1 - alpha) * q_tar + alpha * q_src_mapped`.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridCritic {
    pub alpha: f64,
    pub q_tar: QTable,
    pub q_src_mapped: QTable,
}

impl HybridCritic {
    pub fn values(&self) -> QTable {
        combine(1.0 - self.alpha, &self.q_tar, &[(self.alpha, &self.q_src_mapped)])
    }
}

fn combine(target_weight: f64, q_tar: &QTable, sources: &[(f64, &QTable)]) -> QTable {
    let mut values: Vec<f64> = q_tar.values().iter().map(|v| target_weight * v).collect();
    for (w, q) in sources {
        for (acc, v) in values.iter_mut().zip(q.values()) {
            *acc += w * v;
        }
    }
    QTable::from_values(q_tar.n_states(), q_tar.n_actions(), values).expect("shapes agree")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    /// Total weight on source critics (0 for Q-NPG, 1 for direct transfer).
    pub alpha: f64,
    /// Per-source weights; a single entry for single-source runs.
    pub source_weights: Vec<f64>,
    pub eps_td_emp: Option<f64>,
    pub eps_cd_emp: Vec<f64>,
    pub eps_td_exact: Option<f64>,
    pub eps_cd_exact: Vec<f64>,
    /// `V^{pi^(t)}(mu)` of the policy that collected this iteration's data.
    pub value: f64,
    pub suboptimality: f64,
    pub maps: Vec<DomainMap>,
    pub wall_ms: Option<f64>,
}

impl IterationRecord {
    /// Smallest cross-domain error over sources, if any.
    pub fn min_eps_cd(values: &[f64]) -> Option<f64> {
        values.iter().copied().reduce(f64::min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub optimal_value: f64,
    pub records: Vec<IterationRecord>,
}

impl RunLog {
    pub fn alphas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.alpha).collect()
    }

    /// First iteration whose value reaches `fraction * V*`.
    pub fn time_to_threshold(&self, fraction: f64) -> Option<usize> {
        let target = fraction * self.optimal_value;
        self.records.iter().find(|r| r.value >= target).map(|r| r.t)
    }
}

/// Everything bound verification needs from a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    /// `pi^(1), ..., pi^(T)`.
    pub policies: Vec<Policy>,
    /// Critic used for each update.
    pub critics: Vec<QTable>,
    pub q_tar: Vec<Option<QTable>>,
    pub q_src_mapped: Vec<Vec<QTable>>,
    pub alphas: Vec<f64>,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub policy: Policy,
    pub final_value: f64,
    pub final_suboptimality: f64,
    pub log: RunLog,
    pub trace: Option<RunTrace>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for stream `stream` of iteration `t`, shared by every algorithm so
/// that paired runs see identical batches while policies agree.
pub fn derive_seed(seed: u64, t: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(t)) ^ stream)
}

const BATCH_STREAM: u64 = 1;
const MAP_STREAM: u64 = 2;
const MIXTURE_STREAM: u64 = 3;

/// Multiset of transitions kept in a fixed order.
#[derive(Default)]
struct History {
    counts: BTreeMap<(usize, usize, u64, usize), f64>,
}

impl History {
    fn extend(&mut self, batch: &TransitionBatch) {
        for t in batch.iter() {
            *self.counts.entry((t.s, t.a, t.r.to_bits(), t.s_next)).or_insert(0.0) += 1.0;
        }
    }

    fn mean_abs_residual(&self, q: &QTable, policy: &Policy, gamma: f64) -> Result<f64> {
        let transitions: Vec<Transition> = self
            .counts
            .keys()
            .map(|k| Transition { s: k.0, a: k.1, r: f64::from_bits(k.2), s_next: k.3 })
            .collect();
        let res = batch_residuals(&TransitionBatch::from_transitions(transitions), q, policy, gamma)?;
        let total: f64 = self.counts.values().sum();
        Ok(res.iter().zip(self.counts.values()).map(|(r, c)| c * r.abs()).sum::<f64>() / total)
    }
}

fn mean_abs(values: &[f64]) -> f64 {
    values.iter().map(|x| x.abs()).sum::<f64>() / values.len() as f64
}

fn default_map(tar: &TabularMdp, q_src: &QTable) -> DomainMap {
    if (tar.n_states(), tar.n_actions()) == (q_src.n_states(), q_src.n_actions()) {
        DomainMap::identity(tar.n_states(), tar.n_actions())
    } else {
        DomainMap::new(vec![0; tar.n_states()], vec![0; tar.n_actions()], q_src.n_states(), q_src.n_actions())
            .expect("zero map is valid")
    }
}

/// Runs `algorithm` on `tar` for `config.iterations` iterations.
///
/// Per iteration: sample a batch with the current (or behavior) policy, fit
/// the target critic by least-squares TD, search maps for each source,
/// set the mixing weight from the empirical errors, and take one NPG step on
/// the mixed critic.
pub fn run(algorithm: Algorithm, tar: &TabularMdp, sources: &[QTable], config: &AlgoConfig) -> Result<RunOutput> {
    config.validate()?;
    let (ns, na, gamma) = (tar.n_states(), tar.n_actions(), tar.gamma());
    match algorithm {
        Algorithm::QNpg => {}
        Algorithm::Dqt | Algorithm::QAvatar if sources.len() != 1 => {
            return Err(Error::InvalidArgument(format!(
                "{} needs exactly one source critic, got {}",
                algorithm.name(),
                sources.len()
            )))
        }
        Algorithm::QAvatarMulti if sources.is_empty() => {
            return Err(Error::InvalidArgument("qavatar-multi needs at least one source critic".into()))
        }
        _ => {}
    }
    if config.alpha_override.is_some() && algorithm == Algorithm::QAvatarMulti {
        return Err(Error::InvalidArgument("alpha override applies to single-source runs only".into()));
    }
    let sources: &[QTable] = if algorithm.uses_sources() { sources } else { &[] };
    let hi = tar.max_value();
    let clipped_sources: Vec<QTable> = sources.iter().map(|q| q.clipped(0.0, hi)).collect();
    let mut maps: Vec<DomainMap> = if config.initial_maps.is_empty() {
        clipped_sources.iter().map(|q| default_map(tar, q)).collect()
    } else {
        if config.initial_maps.len() != sources.len() {
            return Err(Error::InvalidArgument(format!(
                "{} initial maps for {} sources",
                config.initial_maps.len(),
                sources.len()
            )));
        }
        config.initial_maps.clone()
    };
    for (m, q) in maps.iter().zip(&clipped_sources) {
        m.check_domains(ns, na, q.n_states(), q.n_actions())?;
    }
    if let Sampling::Behavior(b) = &config.sampling {
        if (b.n_states(), b.n_actions()) != (ns, na) {
            return Err(Error::Dimension("behavior policy shape does not match the target".into()));
        }
    }

    let eta = config.eta(gamma);
    let restart = config.restart_prob.unwrap_or(1.0 - gamma);
    let (_, optimal_policy) = value_iteration(tar, 1e-10);
    let optimal_value = start_value(tar, &optimal_policy);

    let mut policy = Policy::uniform(ns, na);
    let mut history = History::default();
    let mut records = Vec::with_capacity(config.iterations);
    let mut trace = config.keep_trace.then(|| RunTrace {
        policies: Vec::new(),
        critics: Vec::new(),
        q_tar: Vec::new(),
        q_src_mapped: Vec::new(),
        alphas: Vec::new(),
        eta,
    });
    let mut iterates = Vec::new();

    for t in 1..=config.iterations {
        let started = Instant::now();
        let collector = match &config.sampling {
            Sampling::OnPolicy => &policy,
            Sampling::Behavior(b) => b,
        };
        let batch = sample_batch(
            tar,
            collector,
            config.samples_per_iter,
            derive_seed(config.seed, t as u64, BATCH_STREAM),
            restart,
        )?;
        if config.error_window == ErrorWindow::History {
            history.extend(&batch);
        }
        let window_error = |q: &QTable| -> Result<f64> {
            match config.error_window {
                ErrorWindow::CurrentBatch => Ok(mean_abs(&batch_residuals(&batch, q, &policy, gamma)?)),
                ErrorWindow::History => history.mean_abs_residual(q, &policy, gamma),
            }
        };

        let q_tar = if algorithm.uses_target_critic() {
            Some(fit_q_td(&batch, &policy, gamma)?.q)
        } else {
            None
        };
        let mut pulled = Vec::with_capacity(clipped_sources.len());
        for (i, q_src) in clipped_sources.iter().enumerate() {
            let map_seed = derive_seed(config.seed, t as u64, MAP_STREAM + 16 * i as u64);
            let (m, _) = search_maps(&batch, q_src, &policy, gamma, &config.map_class, &maps[i], map_seed)?;
            pulled.push(m.pull_back(q_src)?);
            maps[i] = m;
        }

        let eps_td_emp = q_tar.as_ref().map(&window_error).transpose()?;
        let eps_cd_emp = pulled.iter().map(&window_error).collect::<Result<Vec<f64>>>()?;

        let (target_weight, source_weights) = match algorithm {
            Algorithm::QNpg => (1.0, Vec::new()),
            Algorithm::Dqt => (0.0, vec![1.0]),
            Algorithm::QAvatar => {
                let a = match config.alpha_override {
                    Some(a) => a,
                    None => alpha_weight(eps_td_emp.expect("target critic"), eps_cd_emp[0])?,
                };
                (1.0 - a, vec![a])
            }
            Algorithm::QAvatarMulti => multi_source_alpha(eps_td_emp.expect("target critic"), &eps_cd_emp)?,
        };
        let critic = match (&q_tar, algorithm) {
            (_, Algorithm::Dqt) => pulled[0].clone(),
            (Some(q), Algorithm::QAvatar) => HybridCritic {
                alpha: source_weights[0],
                q_tar: q.clone(),
                q_src_mapped: pulled[0].clone(),
            }
            .values(),
            (Some(q), _) => {
                let parts: Vec<(f64, &QTable)> = source_weights.iter().copied().zip(pulled.iter()).collect();
                combine(target_weight, q, &parts)
            }
            (None, _) => unreachable!("target critic is fitted for every algorithm but dqt"),
        };

        let (eps_td_exact, eps_cd_exact) = if config.exact_logging {
            let td = q_tar.as_ref().map(|q| td_error(tar, q, &policy).map(|r| r.weighted_norm)).transpose()?;
            let cd = clipped_sources
                .iter()
                .zip(&maps)
                .map(|(q, m)| cross_domain_error(tar, q, m, &policy).map(|r| r.weighted_norm))
                .collect::<Result<Vec<f64>>>()?;
            (td, cd)
        } else {
            (None, Vec::new())
        };

        let value = start_value(tar, &policy);
        let next = npg_step(&policy, &critic, eta)?;
        let wall_ms = config.record_wall_time.then(|| started.elapsed().as_secs_f64() * 1e3);
        records.push(IterationRecord {
            t,
            alpha: source_weights.iter().fold(0.0, |acc, w| acc + w),
            source_weights: source_weights.clone(),
            eps_td_emp,
            eps_cd_emp,
            eps_td_exact,
            eps_cd_exact,
            value,
            suboptimality: optimal_value - value,
            maps: maps.clone(),
            wall_ms,
        });
        if let Some(tr) = trace.as_mut() {
            tr.policies.push(policy.clone());
            tr.critics.push(critic);
            tr.q_tar.push(q_tar);
            tr.q_src_mapped.push(pulled);
            tr.alphas.push(source_weights.iter().fold(0.0, |acc, w| acc + w));
        }
        if config.final_policy == FinalPolicyRule::UniformMixture {
            iterates.push(policy);
        }
        policy = next;
    }

    let policy = match config.final_policy {
        FinalPolicyRule::LastIterate => policy,
        FinalPolicyRule::UniformMixture => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0, MIXTURE_STREAM));
            iterates.swap_remove(rng.gen_range(0..iterates.len()))
        }
    };
    let final_value = start_value(tar, &policy);
    Ok(RunOutput {
        policy,
        final_value,
        final_suboptimality: optimal_value - final_value,
        log: RunLog {
            algorithm,
            seed: config.seed,
            optimal_value,
            records,
        },
        trace,
    })
}

pub fn run_q_npg(tar: &TabularMdp, config: &AlgoConfig) -> Result<RunOutput> {
    run(Algorithm::QNpg, tar, &[], config)
}

pub fn run_dqt(tar: &TabularMdp, q_src: &QTable, config: &AlgoConfig) -> Result<RunOutput> {
    run(Algorithm::Dqt, tar, std::slice::from_ref(q_src), config)
}

pub fn run_qavatar(tar: &TabularMdp, q_src: &QTable, config: &AlgoConfig) -> Result<RunOutput> {
    run(Algorithm::QAvatar, tar, std::slice::from_ref(q_src), config)
}

pub fn run_qavatar_multi(tar: &TabularMdp, sources: &[QTable], config: &AlgoConfig) -> Result<RunOutput> {
    run(Algorithm::QAvatarMulti, tar, sources, config)
}
