//! Evaluation of the average sub-optimality bounds, the sample-complexity
//! expressions, and executable checks of the supporting lemmas.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{npg_step, RunTrace};
use crate::error::{Error, Result};
use crate::estimators::td_error;
use crate::mdp::{
    bellman_residual, coverage_bound, exact_q, exact_v, occupancy, occupancy_from, push_forward, sample_index,
    start_value, value_iteration, Policy, QTable, TabularMdp,
};

/// Which critic the bound is stated for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    /// Fitted target critic.
    Npg,
    /// Mapped source critic.
    Dqt,
    /// Mixture of the two.
    Qavatar,
}

/// Slack allowed in every inequality check.
pub const BOUND_SLACK: f64 = 1e-9;
/// Largest Bellman residual accepted from an exact-Q oracle.
pub const ORACLE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub iterations: usize,
    pub term_a: f64,
    pub term_b: f64,
    pub term_c: f64,
    pub c0: f64,
    pub c1: f64,
    pub coverage_bound: f64,
    pub mu_min: f64,
    pub lhs_avg_suboptimality: f64,
    /// `lhs <= a + b` and `lhs <= a + c`.
    pub satisfied: bool,
    /// `b <= c`.
    pub b_le_c: bool,
    /// Every oracle action-value table was a Bellman fixed point.
    pub consistent: bool,
    pub max_oracle_residual: f64,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.satisfied && self.b_le_c && self.consistent
    }
}

/// Per-iteration data a bound is evaluated on.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundInputs {
    pub policies: Vec<Policy>,
    pub q_tar: Vec<Option<QTable>>,
    /// Mapped source critic of each iteration (first source).
    pub q_src_mapped: Vec<Option<QTable>>,
    pub alphas: Vec<f64>,
}

impl BoundInputs {
    pub fn from_trace(trace: &RunTrace) -> Self {
        Self {
            policies: trace.policies.clone(),
            q_tar: trace.q_tar.clone(),
            q_src_mapped: trace.q_src_mapped.iter().map(|v| v.first().cloned()).collect(),
            alphas: trace.alphas.clone(),
        }
    }
}

/// Action-value oracle used for the `Q^{pi^(t)}` terms; normally [`exact_q`].
pub type QOracle<'a> = &'a dyn Fn(&TabularMdp, &Policy) -> QTable;

/// Evaluates the bound of `kind` on the iterates in `inputs`, using
/// [`exact_q`] as the oracle.
pub fn prop_bound(kind: BoundKind, tar: &TabularMdp, inputs: &BoundInputs) -> Result<BoundReport> {
    prop_bound_with_oracle(kind, tar, inputs, &exact_q)
}

pub fn prop_bound_with_oracle(
    kind: BoundKind,
    tar: &TabularMdp,
    inputs: &BoundInputs,
    oracle: QOracle,
) -> Result<BoundReport> {
    tar.require_exploratory()?;
    let t_total = inputs.policies.len();
    if t_total == 0 {
        return Err(Error::InvalidArgument("no iterations to evaluate".into()));
    }
    if inputs.q_tar.len() != t_total || inputs.q_src_mapped.len() != t_total || inputs.alphas.len() != t_total {
        return Err(Error::Dimension("per-iteration inputs have different lengths".into()));
    }
    let g = tar.gamma();
    let (_, optimal) = value_iteration(tar, 1e-10);
    let v_star = start_value(tar, &optimal);
    let coverage = coverage_bound(tar, &optimal)?;
    let mu_min = tar.mu_min();
    let c0 = 2.0 * coverage / (1.0 - g);
    let c1 = 2.0 * coverage / ((1.0 - g).powi(3) * mu_min);
    let t = t_total as f64;
    let term_a = ((tar.n_actions() as f64).ln() + 1.0) / (t.sqrt() * (1.0 - g));

    let missing = |what: &str, i: usize| Error::InvalidArgument(format!("iteration {} has no {what}", i + 1));
    let mut sum_b = 0.0;
    let mut sum_c = 0.0;
    let mut sum_lhs = 0.0;
    let mut max_residual: f64 = 0.0;
    for (i, policy) in inputs.policies.iter().enumerate() {
        let q_pi = oracle(tar, policy);
        max_residual = max_residual.max(bellman_residual(tar, policy, &q_pi));
        let d = occupancy(tar, policy);
        let eps_of = |q: &QTable| td_error(tar, q, policy).map(|r| r.weighted_norm);
        let alpha = inputs.alphas[i];
        let (critic, c_t) = match kind {
            BoundKind::Npg => {
                let q = inputs.q_tar[i].as_ref().ok_or_else(|| missing("target critic", i))?;
                (q.clone(), eps_of(q)?)
            }
            BoundKind::Dqt => {
                let q = inputs.q_src_mapped[i].as_ref().ok_or_else(|| missing("source critic", i))?;
                (q.clone(), eps_of(q)?)
            }
            BoundKind::Qavatar => {
                let q_tar = inputs.q_tar[i].as_ref().ok_or_else(|| missing("target critic", i))?;
                let q_src = inputs.q_src_mapped[i].as_ref().ok_or_else(|| missing("source critic", i))?;
                let mixed: Vec<f64> = q_tar
                    .values()
                    .iter()
                    .zip(q_src.values())
                    .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
                    .collect();
                let critic = QTable::from_values(q_tar.n_states(), q_tar.n_actions(), mixed)?;
                (critic, alpha * eps_of(q_src)? + (1.0 - alpha) * eps_of(q_tar)?)
            }
        };
        let gap: Vec<f64> = critic
            .values()
            .iter()
            .zip(q_pi.values())
            .map(|(f, q)| (f - q).abs())
            .collect();
        sum_b += d.expectation(&gap);
        sum_c += c_t;
        sum_lhs += v_star - start_value(tar, policy);
    }
    let term_b = c0 / t * sum_b;
    let term_c = c1 / t * sum_c;
    let lhs = sum_lhs / t;
    Ok(BoundReport {
        kind,
        iterations: t_total,
        term_a,
        term_b,
        term_c,
        c0,
        c1,
        coverage_bound: coverage,
        mu_min,
        lhs_avg_suboptimality: lhs,
        satisfied: lhs <= term_a + term_b + BOUND_SLACK && lhs <= term_a + term_c + BOUND_SLACK,
        b_le_c: term_b <= term_c + BOUND_SLACK,
        consistent: max_residual <= ORACLE_TOL,
        max_oracle_residual: max_residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleComplexity {
    pub t_required: f64,
    pub n_qavatar: f64,
    pub n_qnpg: f64,
    pub c_tar: f64,
    pub c_cd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityParams {
    pub epsilon: f64,
    pub beta: f64,
    pub n_actions: usize,
    pub gamma: f64,
    pub c1: f64,
    pub kappa_max: f64,
    pub q_class_size: f64,
    pub map_class_size: f64,
    pub delta: f64,
}

/// Iteration and per-iteration sample requirements for reaching average
/// sub-optimality `epsilon`.
///
/// `x / [y]+` is reported as infinity when `y <= 0`.
pub fn sample_complexity(p: &ComplexityParams) -> Result<SampleComplexity> {
    let open_unit = |x: f64| x > 0.0 && x < 1.0;
    if !open_unit(p.epsilon) || !open_unit(p.beta) || !open_unit(p.delta) {
        return Err(Error::InvalidArgument("epsilon, beta and delta must lie in (0, 1)".into()));
    }
    if p.kappa_max < 0.0 || p.n_actions == 0 || !(0.0..1.0).contains(&p.gamma) || p.c1 <= 0.0 {
        return Err(Error::InvalidArgument("invalid kappa, action count, gamma or C1".into()));
    }
    if p.q_class_size < 1.0 || p.map_class_size < 1.0 {
        return Err(Error::InvalidArgument("class sizes must be at least 1".into()));
    }
    let scale = 1.0 - p.gamma;
    let base = ((p.n_actions as f64).ln() + 1.0) / (scale * p.beta);
    let t_required = base * base / (p.epsilon * p.epsilon);
    let c_tar = 1024.0 / (scale * scale) * (4.0 * p.q_class_size / p.delta).ln();
    let c_cd = 1024.0 / (scale * scale) * (4.0 * p.map_class_size / p.delta).ln();
    let margin = (1.0 - p.beta).powi(2) * p.epsilon * p.epsilon;
    let transfer_branch = p.c1 * p.c1 * c_cd / margin;
    let positive = (margin / (p.c1 * p.c1) - 3.0 * p.kappa_max).max(0.0);
    let n_qnpg = if positive > 0.0 { c_tar / positive } else { f64::INFINITY };
    Ok(SampleComplexity {
        t_required,
        n_qavatar: transfer_branch.min(n_qnpg),
        n_qnpg,
        c_tar,
        c_cd,
    })
}

/// Two sides of an identity or inequality and whether it held.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Performance difference: `V^b(rho) - V^a(rho) = E_{d^b}[A^a] / (1 - gamma)`
/// where `rho` is the state marginal of the initial distribution and the
/// first action is drawn from `policy_b`, so that `d^b` is the occupancy of
/// the same episodes whose value is on the left.
pub fn check_performance_difference(mdp: &TabularMdp, policy_a: &Policy, policy_b: &Policy) -> Result<Check> {
    let q_a = exact_q(mdp, policy_a);
    let v_a = exact_v(mdp, policy_a);
    let na = mdp.n_actions();
    let rho = mdp.start_state_dist();
    let mut start = Vec::with_capacity(mdp.n_pairs());
    for (s, mass) in rho.iter().enumerate() {
        start.extend(policy_b.probs(s).into_iter().map(|p| p * mass));
    }
    let d_b = occupancy_from(mdp, policy_b, &start);
    let advantage: Vec<f64> = (0..mdp.n_pairs()).map(|p| q_a.values()[p] - v_a[p / na]).collect();
    let rhs = d_b.expectation(&advantage) / (1.0 - mdp.gamma());
    let lhs = start_value(mdp, policy_b) - start_value(mdp, policy_a);
    Ok(Check {
        lhs,
        rhs,
        holds: (lhs - rhs).abs() <= 1e-8,
    })
}

/// Importance ratio: the `k`-step push-forward `p_k` of `d^pi` satisfies
/// `p_k / d^pi <= 1 / ((1 - gamma) mu)` everywhere.  `lhs` is the largest
/// value of `p_k (1 - gamma) mu / d^pi`, to be compared with 1.
pub fn check_importance_ratio(mdp: &TabularMdp, policy: &Policy, k: usize) -> Result<Check> {
    mdp.require_exploratory()?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let d = occupancy(mdp, policy);
    let mut p = d.dist().to_vec();
    for _ in 0..k {
        p = push_forward(mdp, policy, &p);
    }
    let scale = 1.0 - mdp.gamma();
    let mut worst: f64 = 0.0;
    let mut holds = true;
    for ((pk, dk), mu) in p.iter().zip(d.dist()).zip(mdp.initial_dist()) {
        if *dk <= 0.0 {
            holds &= *pk <= 0.0;
            continue;
        }
        let normalized = pk * scale * mu / dk;
        worst = worst.max(normalized);
        holds &= pk / dk <= 1.0 / (scale * mu) * (1.0 + 1e-12);
    }
    Ok(Check { lhs: worst, rhs: 1.0, holds })
}

/// Mirror-descent regret: replays NPG steps on `critics` from the uniform
/// policy and checks `sum_t E_{d*}[nu_t - E_{pi_t} nu_t] <= sqrt(T)(ln|A| + 1)/(1 - gamma)`.
pub fn check_regret_lemma(mdp: &TabularMdp, critics: &[QTable], eta: f64) -> Result<Check> {
    let t_total = critics.len();
    if t_total == 0 {
        return Err(Error::InvalidArgument("critic sequence is empty".into()));
    }
    let g = mdp.gamma();
    let hi = mdp.max_value();
    if critics.iter().any(|c| c.values().iter().any(|v| v.abs() > hi + 1e-12)) {
        return Err(Error::InvalidArgument(format!("critic sup-norm exceeds 1/(1-gamma) = {hi}")));
    }
    let expected_eta = (1.0 - g) * (1.0 / t_total as f64).sqrt();
    if (eta - expected_eta).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "step size {eta} differs from (1-gamma)/sqrt(T) = {expected_eta}"
        )));
    }
    let (_, optimal) = value_iteration(mdp, 1e-10);
    let d_star = occupancy(mdp, &optimal);
    let na = mdp.n_actions();
    let mut policy = Policy::uniform(mdp.n_states(), na);
    let mut lhs = 0.0;
    for critic in critics {
        for s in 0..mdp.n_states() {
            let baseline = critic.expected(s, &policy.probs(s));
            for a in 0..na {
                lhs += d_star.get(s, a) * (critic.get(s, a) - baseline);
            }
        }
        policy = npg_step(&policy, critic, eta)?;
    }
    let rhs = (t_total as f64).sqrt() * ((na as f64).ln() + 1.0) / (1.0 - g);
    Ok(Check {
        lhs,
        rhs,
        holds: lhs <= rhs + BOUND_SLACK,
    })
}

/// Monte-Carlo estimate with its standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloCheck {
    pub estimate: f64,
    pub std_error: f64,
    pub exact: f64,
    pub holds: bool,
}

/// Occupancy identity: `E[sum_t gamma^t f(s_t, a_t)] = E_{d^pi}[f] / (1 - gamma)`,
/// with the left side estimated from `episodes` rollouts truncated at `horizon`.
pub fn check_occupancy_identity(
    mdp: &TabularMdp,
    policy: &Policy,
    f: &[f64],
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<MonteCarloCheck> {
    if f.len() != mdp.n_pairs() {
        return Err(Error::Dimension("f must have one entry per (s, a)".into()));
    }
    if episodes < 2 {
        return Err(Error::InvalidArgument("need at least two episodes".into()));
    }
    let returns = rollout_returns(mdp, policy, f, episodes, horizon, seed);
    let n = episodes as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std_error = (var / n).sqrt();
    let exact = occupancy(mdp, policy).expectation(f) / (1.0 - mdp.gamma());
    Ok(MonteCarloCheck {
        estimate: mean,
        std_error,
        exact,
        holds: (mean - exact).abs() <= 3.0 * std_error.max(1e-12),
    })
}

/// Discounted sums of `f` along `episodes` rollouts from `(s, a) ~ mu`.
pub fn rollout_returns(mdp: &TabularMdp, policy: &Policy, f: &[f64], episodes: usize, horizon: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let na = mdp.n_actions();
    let probs = policy.prob_table();
    (0..episodes)
        .map(|_| {
            let pair = sample_index(&mut rng, mdp.initial_dist());
            let (mut s, mut a) = (pair / na, pair % na);
            let mut total = 0.0;
            let mut discount = 1.0;
            for _ in 0..horizon {
                total += discount * f[s * na + a];
                discount *= mdp.gamma();
                s = sample_index(&mut rng, mdp.next_dist(s, a));
                a = sample_index(&mut rng, &probs[s * na..(s + 1) * na]);
            }
            total
        })
        .collect()
}
