//! Finite MDPs, tabular policies and value tables, exact solvers and
//! trajectory sampling.
//!
//! Every table is stored row-major over `(state, action)` pairs, so pair
//! `(s, a)` lives at index `s * n_actions + a`.  The transition tensor is
//! indexed `[s][a][s']` in the same flattened fashion.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logit gap used when a deterministic choice is encoded as a softmax policy.
/// Off-argmax probabilities are below `e^-50 < 2e-22`.
pub const DETERMINISTIC_LOGIT_GAP: f64 = 50.0;

/// Logits are floored here after every shift so that probabilities stay
/// strictly positive in `f64`.
pub const LOGIT_FLOOR: f64 = -700.0;

const PROB_TOL: f64 = 1e-12;

/// A finite discounted MDP `(S, A, P, r, gamma, mu)` where `mu` is a joint
/// distribution over initial state-action pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    initial_dist: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let mdp = Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            initial_dist,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(Error::InvalidMdp("state and action counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidMdp(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.transition.len() != ns * na * ns {
            return Err(Error::InvalidMdp(format!(
                "transition tensor has {} entries, expected {}",
                self.transition.len(),
                ns * na * ns
            )));
        }
        if self.reward.len() != ns * na || self.initial_dist.len() != ns * na {
            return Err(Error::InvalidMdp("reward and initial distribution must have one entry per (s, a)".into()));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = self.next_dist(s, a);
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::InvalidMdp(format!("negative or non-finite probability at ({s}, {a})")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidMdp(format!(
                        "transition row ({s}, {a}) sums to {total}"
                    )));
                }
            }
        }
        if let Some(r) = self.reward.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidMdp(format!("reward {r} outside [0, 1]")));
        }
        if self.initial_dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidMdp("initial distribution has a negative entry".into()));
        }
        let mass: f64 = self.initial_dist.iter().sum();
        if (mass - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidMdp(format!("initial distribution sums to {mass}")));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Upper bound `1 / (1 - gamma)` on any value with rewards in `[0, 1]`.
    pub fn max_value(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    #[inline]
    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = self.pair(s, a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[self.pair(s, a) * self.n_states + s_next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[self.pair(s, a)]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn mu(&self, s: usize, a: usize) -> f64 {
        self.initial_dist[self.pair(s, a)]
    }

    pub fn mu_min(&self) -> f64 {
        self.initial_dist.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// State marginal of the initial distribution.
    pub fn start_state_dist(&self) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.mu(s, a)).sum())
            .collect()
    }

    /// Fails unless every initial `(s, a)` has positive mass.
    pub fn require_exploratory(&self) -> Result<()> {
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                if self.mu(s, a) <= 0.0 {
                    return Err(Error::NotExploratory { state: s, action: a });
                }
            }
        }
        Ok(())
    }

    /// Copy of this MDP with a different initial distribution.
    pub fn with_initial_dist(&self, initial_dist: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.reward.clone(),
            self.gamma,
            initial_dist,
        )
    }

    /// Copy of this MDP with a different reward table.
    pub fn with_rewards(&self, reward: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            reward,
            self.gamma,
            self.initial_dist.clone(),
        )
    }

    /// Serializes to a TOML document.  Every real is written with 17
    /// significant digits so the document round-trips exactly.
    pub fn to_text(&self) -> String {
        fn list(values: &[f64]) -> String {
            let body: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
            format!("[{}]", body.join(", "))
        }
        format!(
            "n_states = {}\nn_actions = {}\ngamma = {:.16e}\ntransition = {}\nreward = {}\ninitial_dist = {}\n",
            self.n_states,
            self.n_actions,
            self.gamma,
            list(&self.transition),
            list(&self.reward),
            list(&self.initial_dist),
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let raw: TabularMdp = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        raw.validate()?;
        Ok(raw)
    }
}

/// Tabular softmax policy stored as logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    logits: Vec<f64>,
}

impl Policy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            logits: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_logits(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "expected {} logits, got {}",
                n_states * n_actions,
                logits.len()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("logits must be finite".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            logits,
        })
    }

    /// Deterministic policy encoded with a logit gap of [`DETERMINISTIC_LOGIT_GAP`].
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let mut logits = vec![-DETERMINISTIC_LOGIT_GAP; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            logits[s * n_actions + a] = 0.0;
        }
        Self {
            n_states: actions.len(),
            n_actions,
            logits,
        }
    }

    /// Greedy policy with respect to `q`; ties go to the lowest action index.
    pub fn greedy(q: &QTable) -> Self {
        let actions: Vec<usize> = (0..q.n_states()).map(|s| q.argmax(s)).collect();
        Self::deterministic(&actions, q.n_actions())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub(crate) fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Action distribution at `s` via a max-shifted softmax.
    pub fn probs(&self, s: usize) -> Vec<f64> {
        let row = &self.logits[s * self.n_actions..(s + 1) * self.n_actions];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs(s)[a]
    }

    /// All action probabilities, row-major over `(s, a)`.
    pub fn prob_table(&self) -> Vec<f64> {
        (0..self.n_states).flat_map(|s| self.probs(s)).collect()
    }

    /// Stable 64-bit fingerprint of the logits (FNV-1a over the bit patterns).
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for l in &self.logits {
            for byte in l.to_bits().to_le_bytes() {
                hash ^= u64::from(byte);
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        }
        hash
    }
}

/// Real-valued table over `(state, action)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn constant(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![value; n_states * n_actions],
        }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "expected {} values, got {}",
                n_states * n_actions,
                values.len()
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Lowest index among the maximizing actions at `s`.
    pub fn argmax(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, v) in row.iter().enumerate().skip(1) {
            if *v > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `E_{a ~ pi(.|s)} Q(s, a)`.
    pub fn expected(&self, s: usize, probs: &[f64]) -> f64 {
        self.row(s).iter().zip(probs).map(|(q, p)| q * p).sum()
    }

    pub fn clipped(&self, lo: f64, hi: f64) -> Self {
        Self {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self.values.iter().map(|v| v.clamp(lo, hi)).collect(),
        }
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Discounted state-action visitation distribution `d^pi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    n_states: usize,
    n_actions: usize,
    dist: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn dist(&self) -> &[f64] {
        &self.dist
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.dist[s * self.n_actions + a]
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `E_{(s,a) ~ d}[f(s, a)]` for `f` laid out row-major.
    pub fn expectation(&self, f: &[f64]) -> f64 {
        self.dist.iter().zip(f).map(|(d, v)| d * v).sum()
    }

    /// State marginal.
    pub fn state_marginal(&self) -> Vec<f64> {
        self.dist
            .chunks(self.n_actions)
            .map(|row| row.iter().sum())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// Where a batch came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub policy_id: u64,
    pub seed: u64,
    pub restart_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionBatch {
    pub transitions: Vec<Transition>,
    pub provenance: Provenance,
}

impl TransitionBatch {
    /// A batch assembled by hand, e.g. from a known trajectory.
    pub fn from_transitions(transitions: Vec<Transition>) -> Self {
        Self {
            transitions,
            provenance: Provenance {
                policy_id: 0,
                seed: 0,
                restart_prob: 0.0,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Transition> {
        self.transitions.iter()
    }
}

fn check_policy(mdp: &TabularMdp, policy: &Policy) {
    assert_eq!(
        (policy.n_states(), policy.n_actions()),
        (mdp.n_states(), mdp.n_actions()),
        "policy shape does not match the MDP"
    );
}

fn solve(matrix: DMatrix<f64>, rhs: DVector<f64>) -> DVector<f64> {
    matrix
        .lu()
        .solve(&rhs)
        .expect("I - gamma * P is nonsingular for gamma < 1")
}

/// `Q^pi` for an explicit action-probability table (row-major over `(s, a)`).
pub fn q_for_probs(mdp: &TabularMdp, probs: &[f64]) -> QTable {
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    // V = r_pi + gamma * P_pi V, then Q = r + gamma * P V.
    let mut m = DMatrix::<f64>::identity(ns, ns);
    let mut r_pi = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        for a in 0..na {
            let p_a = probs[s * na + a];
            if p_a == 0.0 {
                continue;
            }
            r_pi[s] += p_a * mdp.reward(s, a);
            for (s2, p) in mdp.next_dist(s, a).iter().enumerate() {
                m[(s, s2)] -= g * p_a * p;
            }
        }
    }
    let v = solve(m, r_pi);
    let mut values = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let next: f64 = mdp.next_dist(s, a).iter().zip(v.iter()).map(|(p, v)| p * v).sum();
            values.push(mdp.reward(s, a) + g * next);
        }
    }
    QTable {
        n_states: ns,
        n_actions: na,
        values,
    }
}

/// Exact action-value function of `policy`.
pub fn exact_q(mdp: &TabularMdp, policy: &Policy) -> QTable {
    check_policy(mdp, policy);
    q_for_probs(mdp, &policy.prob_table())
}

/// Exact state-value function of `policy`.
pub fn exact_v(mdp: &TabularMdp, policy: &Policy) -> Vec<f64> {
    let q = exact_q(mdp, policy);
    (0..mdp.n_states())
        .map(|s| q.expected(s, &policy.probs(s)))
        .collect()
}

/// `V^pi(mu) = E_{s ~ mu}[V^pi(s)]` with `s` drawn from the state marginal of `mu`.
pub fn start_value(mdp: &TabularMdp, policy: &Policy) -> f64 {
    exact_v(mdp, policy)
        .iter()
        .zip(mdp.start_state_dist())
        .map(|(v, p)| v * p)
        .sum()
}

/// Bellman residual `max |Q - r - gamma P^pi Q|`.
pub fn bellman_residual(mdp: &TabularMdp, policy: &Policy, q: &QTable) -> f64 {
    let probs = policy.prob_table();
    let na = mdp.n_actions();
    let next_v: Vec<f64> = (0..mdp.n_states())
        .map(|s| q.expected(s, &probs[s * na..(s + 1) * na]))
        .collect();
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..na {
            let ev: f64 = mdp.next_dist(s, a).iter().zip(&next_v).map(|(p, v)| p * v).sum();
            worst = worst.max((q.get(s, a) - mdp.reward(s, a) - mdp.gamma() * ev).abs());
        }
    }
    worst
}

/// Discounted occupancy from an arbitrary initial pair distribution `start`.
pub fn occupancy_from(mdp: &TabularMdp, policy: &Policy, start: &[f64]) -> OccupancyMeasure {
    check_policy(mdp, policy);
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let n = ns * na;
    let probs = policy.prob_table();
    // d = (1 - g) start + g * P_pi^T d
    let mut m = DMatrix::<f64>::identity(n, n);
    for s in 0..ns {
        for a in 0..na {
            let from = s * na + a;
            for (s2, p) in mdp.next_dist(s, a).iter().enumerate() {
                if *p == 0.0 {
                    continue;
                }
                for a2 in 0..na {
                    m[(s2 * na + a2, from)] -= g * p * probs[s2 * na + a2];
                }
            }
        }
    }
    let rhs = DVector::from_iterator(n, start.iter().map(|x| (1.0 - g) * x));
    let d = solve(m, rhs);
    OccupancyMeasure {
        n_states: ns,
        n_actions: na,
        dist: d.iter().map(|x| x.max(0.0)).collect(),
    }
}

/// `d^pi` under the MDP's joint initial distribution.
pub fn occupancy(mdp: &TabularMdp, policy: &Policy) -> OccupancyMeasure {
    occupancy_from(mdp, policy, mdp.initial_dist())
}

/// One step of the state-action chain: `p'(s', a') = sum P(s'|s,a) p(s,a) pi(a'|s')`.
pub fn push_forward(mdp: &TabularMdp, policy: &Policy, dist: &[f64]) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut state_mass = vec![0.0; ns];
    for s in 0..ns {
        for a in 0..na {
            let w = dist[s * na + a];
            if w == 0.0 {
                continue;
            }
            for (s2, p) in mdp.next_dist(s, a).iter().enumerate() {
                state_mass[s2] += w * p;
            }
        }
    }
    let mut out = Vec::with_capacity(ns * na);
    for (s, m) in state_mass.iter().enumerate() {
        out.extend(policy.probs(s).into_iter().map(|p| m * p));
    }
    out
}

/// Optimal action values within `tol` (sup norm) and the greedy policy.
///
/// Value iteration runs until the contraction bound certifies `tol`; the
/// greedy policy is then polished by exact policy iteration, and the
/// returned table is the exact value of the final deterministic policy.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> (QTable, Policy) {
    assert!(tol > 0.0, "tolerance must be positive");
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let mut q = QTable::zeros(ns, na);
    let stop = if g > 0.0 { tol * (1.0 - g) / g } else { f64::INFINITY };
    loop {
        let v: Vec<f64> = (0..ns).map(|s| q.max(s)).collect();
        let mut next = QTable::zeros(ns, na);
        for s in 0..ns {
            for a in 0..na {
                let ev: f64 = mdp.next_dist(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
                next.set(s, a, mdp.reward(s, a) + g * ev);
            }
        }
        let delta = next.sup_distance(&q);
        q = next;
        if delta <= stop {
            break;
        }
    }

    let mut actions: Vec<usize> = (0..ns).map(|s| q.argmax(s)).collect();
    for _ in 0..100 {
        let q_pi = q_for_probs(mdp, &deterministic_probs(&actions, na));
        let improved: Vec<usize> = (0..ns)
            .map(|s| {
                // keep the incumbent unless another action is clearly better
                let best = q_pi.argmax(s);
                if q_pi.get(s, best) > q_pi.get(s, actions[s]) + 1e-12 {
                    best
                } else {
                    lowest_near_max(q_pi.row(s), 1e-12)
                }
            })
            .collect();
        if improved == actions {
            return (q_pi, Policy::deterministic(&actions, na));
        }
        actions = improved;
    }
    let q_pi = q_for_probs(mdp, &deterministic_probs(&actions, na));
    (q_pi, Policy::deterministic(&actions, na))
}

fn lowest_near_max(row: &[f64], tol: f64) -> usize {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.iter().position(|v| *v >= max - tol).unwrap_or(0)
}

fn deterministic_probs(actions: &[usize], n_actions: usize) -> Vec<f64> {
    let mut probs = vec![0.0; actions.len() * n_actions];
    for (s, &a) in actions.iter().enumerate() {
        probs[s * n_actions + a] = 1.0;
    }
    probs
}

/// Draws an index from a discrete distribution.
pub(crate) fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Samples `n` consecutive transitions of `policy` starting from `mu`.
///
/// After every step the chain restarts from `(s, a) ~ mu` with probability
/// `restart_prob`; with `restart_prob = 1 - gamma` the visited pairs are
/// distributed (asymptotically) as `d^pi`.
pub fn sample_batch(
    mdp: &TabularMdp,
    policy: &Policy,
    n: usize,
    seed: u64,
    restart_prob: f64,
) -> Result<TransitionBatch> {
    check_policy(mdp, policy);
    if n == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&restart_prob) {
        return Err(Error::InvalidArgument(format!(
            "restart probability {restart_prob} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs = policy.prob_table();
    let na = mdp.n_actions();
    let draw_start = |rng: &mut ChaCha8Rng| {
        let pair = sample_index(rng, mdp.initial_dist());
        (pair / na, pair % na)
    };
    let (mut s, mut a) = draw_start(&mut rng);
    let mut transitions = Vec::with_capacity(n);
    for _ in 0..n {
        let s_next = sample_index(&mut rng, mdp.next_dist(s, a));
        transitions.push(Transition {
            s,
            a,
            r: mdp.reward(s, a),
            s_next,
        });
        if restart_prob > 0.0 && rng.gen::<f64>() < restart_prob {
            (s, a) = draw_start(&mut rng);
        } else {
            s = s_next;
            a = sample_index(&mut rng, &probs[s * na..(s + 1) * na]);
        }
    }
    Ok(TransitionBatch {
        transitions,
        provenance: Provenance {
            policy_id: policy.fingerprint(),
            seed,
            restart_prob,
        },
    })
}

/// `max_{s,a} d^ref(s,a) / ((1 - gamma) mu(s,a))`, an upper bound on the
/// coverage constant of `ref_policy` over all policies.
pub fn coverage_bound(mdp: &TabularMdp, ref_policy: &Policy) -> Result<f64> {
    mdp.require_exploratory()?;
    let d = occupancy(mdp, ref_policy);
    let scale = 1.0 - mdp.gamma();
    Ok(d
        .dist()
        .iter()
        .zip(mdp.initial_dist())
        .map(|(d, mu)| d / (scale * mu))
        .fold(0.0, f64::max))
}

/// Random MDP with Dirichlet-like transition rows, uniform rewards in
/// `[0, 1]`, and a strictly positive initial distribution.
pub fn random_mdp(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> TabularMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let row: Vec<f64> = (0..n_states).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
        let z: f64 = row.iter().sum();
        transition.extend(row.into_iter().map(|x| x / z));
    }
    let reward: Vec<f64> = (0..n_states * n_actions).map(|_| rng.gen::<f64>()).collect();
    let raw: Vec<f64> = (0..n_states * n_actions).map(|_| 0.05 + rng.gen::<f64>()).collect();
    let z: f64 = raw.iter().sum();
    let initial_dist = raw.into_iter().map(|x| x / z).collect();
    TabularMdp::new(n_states, n_actions, transition, reward, gamma, initial_dist)
        .expect("random MDP is valid by construction")
}

/// Random MDP whose transitions are deterministic: each pair moves to one
/// uniformly drawn successor.
pub fn random_deterministic_mdp(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> TabularMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    for pair in 0..n_states * n_actions {
        transition[pair * n_states + rng.gen_range(0..n_states)] = 1.0;
    }
    let reward: Vec<f64> = (0..n_states * n_actions).map(|_| rng.gen::<f64>()).collect();
    let initial_dist = vec![1.0 / (n_states * n_actions) as f64; n_states * n_actions];
    TabularMdp::new(n_states, n_actions, transition, reward, gamma, initial_dist)
        .expect("random MDP is valid by construction")
}

/// Random policy with logits drawn uniformly from `[-scale, scale]`.
pub fn random_policy(n_states: usize, n_actions: usize, scale: f64, seed: u64) -> Policy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = (0..n_states * n_actions)
        .map(|_| rng.gen_range(-scale..=scale))
        .collect();
    Policy::from_logits(n_states, n_actions, logits).expect("finite logits")
}
