//! Tabular inter-domain maps and search over map classes.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::cd_loss;
use crate::mdp::{Policy, QTable, TransitionBatch};

/// Total functions from target states to source states and target actions
/// to source actions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DomainMap {
    state_map: Vec<usize>,
    action_map: Vec<usize>,
    #[serde(default)]
    n_src_states: usize,
    #[serde(default)]
    n_src_actions: usize,
}

impl DomainMap {
    pub fn new(state_map: Vec<usize>, action_map: Vec<usize>, n_src_states: usize, n_src_actions: usize) -> Result<Self> {
        if let Some(bad) = state_map.iter().find(|s| **s >= n_src_states) {
            return Err(Error::Dimension(format!("state image {bad} outside {n_src_states} source states")));
        }
        if let Some(bad) = action_map.iter().find(|a| **a >= n_src_actions) {
            return Err(Error::Dimension(format!("action image {bad} outside {n_src_actions} source actions")));
        }
        if state_map.is_empty() || action_map.is_empty() {
            return Err(Error::Dimension("maps must cover at least one state and action".into()));
        }
        Ok(Self {
            state_map,
            action_map,
            n_src_states,
            n_src_actions,
        })
    }

    pub fn identity(n_states: usize, n_actions: usize) -> Self {
        Self {
            state_map: (0..n_states).collect(),
            action_map: (0..n_actions).collect(),
            n_src_states: n_states,
            n_src_actions: n_actions,
        }
    }

    #[inline]
    pub fn state(&self, s: usize) -> usize {
        self.state_map[s]
    }

    #[inline]
    pub fn action(&self, a: usize) -> usize {
        self.action_map[a]
    }

    pub fn state_map(&self) -> &[usize] {
        &self.state_map
    }

    pub fn action_map(&self) -> &[usize] {
        &self.action_map
    }

    pub fn n_tar_states(&self) -> usize {
        self.state_map.len()
    }

    pub fn n_tar_actions(&self) -> usize {
        self.action_map.len()
    }

    pub fn n_src_states(&self) -> usize {
        self.n_src_states
    }

    pub fn n_src_actions(&self) -> usize {
        self.n_src_actions
    }

    pub fn check_domains(&self, tar_states: usize, tar_actions: usize, src_states: usize, src_actions: usize) -> Result<()> {
        if self.n_tar_states() != tar_states
            || self.n_tar_actions() != tar_actions
            || self.n_src_states != src_states
            || self.n_src_actions != src_actions
        {
            return Err(Error::Dimension(format!(
                "map is {}x{} -> {}x{}, expected {tar_states}x{tar_actions} -> {src_states}x{src_actions}",
                self.n_tar_states(),
                self.n_tar_actions(),
                self.n_src_states,
                self.n_src_actions
            )));
        }
        Ok(())
    }

    /// Target-shaped table `Q_src(phi(s), psi(a))`.
    pub fn pull_back(&self, q_src: &QTable) -> Result<QTable> {
        if (q_src.n_states(), q_src.n_actions()) != (self.n_src_states, self.n_src_actions) {
            return Err(Error::Dimension(format!(
                "source critic is {}x{} but the map targets {}x{}",
                q_src.n_states(),
                q_src.n_actions(),
                self.n_src_states,
                self.n_src_actions
            )));
        }
        let mut values = Vec::with_capacity(self.state_map.len() * self.action_map.len());
        for &u in &self.state_map {
            for &b in &self.action_map {
                values.push(q_src.get(u, b));
            }
        }
        QTable::from_values(self.state_map.len(), self.action_map.len(), values)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// Every total map; requires the class size to be within the bound.
    Exhaustive,
    /// Coordinate descent from the initial map plus seeded random restarts.
    GreedyCoordinate,
    /// The identity map only.
    FixedIdentity,
    /// An explicit finite list of maps.
    Candidates(Vec<DomainMap>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapClass {
    pub mode: SearchMode,
    /// Upper limit on the number of maps exhaustive search may enumerate.
    pub candidate_bound: u64,
    /// Random restarts for greedy-coordinate search, in addition to the initial map.
    pub restarts: usize,
}

impl MapClass {
    pub fn fixed_identity() -> Self {
        Self {
            mode: SearchMode::FixedIdentity,
            candidate_bound: 1,
            restarts: 0,
        }
    }

    pub fn exhaustive(candidate_bound: u64) -> Self {
        Self {
            mode: SearchMode::Exhaustive,
            candidate_bound,
            restarts: 0,
        }
    }

    pub fn greedy(restarts: usize) -> Self {
        Self {
            mode: SearchMode::GreedyCoordinate,
            candidate_bound: u64::MAX,
            restarts,
        }
    }

    pub fn candidates(maps: Vec<DomainMap>) -> Self {
        let n = maps.len() as u64;
        Self {
            mode: SearchMode::Candidates(maps),
            candidate_bound: n,
            restarts: 0,
        }
    }

    /// Number of maps in the class, saturating at `u128::MAX`.
    pub fn size(&self, tar_states: usize, tar_actions: usize, src_states: usize, src_actions: usize) -> u128 {
        match &self.mode {
            SearchMode::FixedIdentity => 1,
            SearchMode::Candidates(maps) => maps.len() as u128,
            SearchMode::Exhaustive | SearchMode::GreedyCoordinate => {
                let states = checked_power(src_states, tar_states);
                let actions = checked_power(src_actions, tar_actions);
                match (states, actions) {
                    (Some(x), Some(y)) => x.saturating_mul(y),
                    _ => u128::MAX,
                }
            }
        }
    }
}

fn checked_power(base: usize, exp: usize) -> Option<u128> {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base as u128)?;
    }
    Some(acc)
}

/// The batch collapsed to distinct `(s, a, r, s')` tuples with counts, plus
/// the policy table, so that map losses are cheap to evaluate repeatedly.
struct LossModel<'a> {
    tuples: Vec<(usize, usize, f64, usize, f64)>,
    by_state: Vec<Vec<usize>>,
    probs: Vec<f64>,
    q_src: &'a QTable,
    n_actions: usize,
    gamma: f64,
    total: f64,
}

impl<'a> LossModel<'a> {
    fn new(batch: &TransitionBatch, q_src: &'a QTable, policy: &Policy, gamma: f64) -> Result<Self> {
        let (ns, na) = (policy.n_states(), policy.n_actions());
        let mut counts: HashMap<(usize, usize, u64, usize), f64> = HashMap::new();
        let mut order = Vec::new();
        for t in batch.iter() {
            if t.s >= ns || t.s_next >= ns || t.a >= na {
                return Err(Error::Dimension(format!("transition {t:?} out of bounds")));
            }
            let key = (t.s, t.a, t.r.to_bits(), t.s_next);
            let entry = counts.entry(key).or_insert_with(|| {
                order.push(key);
                0.0
            });
            *entry += 1.0;
        }
        let tuples: Vec<_> = order
            .iter()
            .map(|k| (k.0, k.1, f64::from_bits(k.2), k.3, counts[k]))
            .collect();
        let mut by_state = vec![Vec::new(); ns];
        for (i, t) in tuples.iter().enumerate() {
            by_state[t.0].push(i);
            if t.3 != t.0 {
                by_state[t.3].push(i);
            }
        }
        Ok(Self {
            tuples,
            by_state,
            probs: policy.prob_table(),
            q_src,
            n_actions: na,
            gamma,
            total: batch.len() as f64,
        })
    }

    fn residual(&self, i: usize, states: &[usize], actions: &[usize]) -> f64 {
        let (s, a, r, s2, _) = self.tuples[i];
        let na = self.n_actions;
        let u2 = states[s2];
        let next: f64 = (0..na)
            .map(|a2| self.probs[s2 * na + a2] * self.q_src.get(u2, actions[a2]))
            .sum();
        self.q_src.get(states[s], actions[a]) - r - self.gamma * next
    }

    fn weighted_sq(&self, i: usize, states: &[usize], actions: &[usize]) -> f64 {
        let r = self.residual(i, states, actions);
        self.tuples[i].4 * r * r
    }

    fn loss(&self, states: &[usize], actions: &[usize]) -> f64 {
        (0..self.tuples.len())
            .map(|i| self.weighted_sq(i, states, actions))
            .sum::<f64>()
            / self.total
    }

    /// Loss contribution of the tuples touching target state `x`.
    fn local(&self, x: usize, states: &[usize], actions: &[usize]) -> f64 {
        self.by_state[x]
            .iter()
            .map(|&i| self.weighted_sq(i, states, actions))
            .sum::<f64>()
            / self.total
    }
}

const MAX_SWEEPS: usize = 50;
const IMPROVEMENT_TOL: f64 = 1e-14;

fn greedy_descent(model: &LossModel, mut states: Vec<usize>, mut actions: Vec<usize>, n_src_states: usize, n_src_actions: usize) -> (Vec<usize>, Vec<usize>, f64) {
    let mut current = model.loss(&states, &actions);
    for _ in 0..MAX_SWEEPS {
        let mut changed = false;
        for x in 0..states.len() {
            let keep = states[x];
            let base = model.local(x, &states, &actions);
            let mut best = (0.0, keep);
            for u in 0..n_src_states {
                if u == keep {
                    continue;
                }
                states[x] = u;
                let delta = model.local(x, &states, &actions) - base;
                if delta < best.0 - IMPROVEMENT_TOL {
                    best = (delta, u);
                }
            }
            states[x] = best.1;
            if best.1 != keep {
                current += best.0;
                changed = true;
            }
        }
        for y in 0..actions.len() {
            let keep = actions[y];
            let mut best = (current, keep);
            for b in 0..n_src_actions {
                if b == keep {
                    continue;
                }
                actions[y] = b;
                let l = model.loss(&states, &actions);
                if l < best.0 - IMPROVEMENT_TOL {
                    best = (l, b);
                }
            }
            actions[y] = best.1;
            if best.1 != keep {
                current = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let exact = model.loss(&states, &actions);
    (states, actions, exact)
}

/// Finds a map minimizing [`cd_loss`] over `class`, returning the map and
/// its loss.
///
/// Exhaustive search returns the lexicographically smallest global
/// minimizer.  Greedy-coordinate search sweeps target states in ascending
/// order, then target actions, moving a coordinate only on strict
/// improvement, for at most 50 sweeps; random restarts are seeded by
/// `seed` and a restart replaces the incumbent only if strictly better.
pub fn search_maps(
    batch: &TransitionBatch,
    q_src: &QTable,
    policy: &Policy,
    gamma: f64,
    class: &MapClass,
    init: &DomainMap,
    seed: u64,
) -> Result<(DomainMap, f64)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("batch must be nonempty".into()));
    }
    let (nt_s, nt_a) = (policy.n_states(), policy.n_actions());
    let (ns_s, ns_a) = (q_src.n_states(), q_src.n_actions());
    init.check_domains(nt_s, nt_a, ns_s, ns_a)?;

    let chosen = match &class.mode {
        SearchMode::FixedIdentity => {
            if (nt_s, nt_a) != (ns_s, ns_a) {
                return Err(Error::Dimension(format!(
                    "identity map needs equal spaces, got {nt_s}x{nt_a} target and {ns_s}x{ns_a} source"
                )));
            }
            DomainMap::identity(nt_s, nt_a)
        }
        SearchMode::Candidates(maps) => {
            if maps.is_empty() {
                return Err(Error::InvalidArgument("candidate list is empty".into()));
            }
            let mut best: Option<(f64, &DomainMap)> = None;
            for m in maps {
                m.check_domains(nt_s, nt_a, ns_s, ns_a)?;
                let l = cd_loss(batch, q_src, m, policy, gamma)?;
                if best.is_none_or(|(bl, _)| l < bl) {
                    best = Some((l, m));
                }
            }
            best.map(|(_, m)| m.clone()).expect("nonempty candidates")
        }
        SearchMode::Exhaustive => {
            let size = class.size(nt_s, nt_a, ns_s, ns_a);
            if size > class.candidate_bound as u128 {
                return Err(Error::InvalidArgument(format!(
                    "exhaustive search over {size} maps exceeds the bound {}",
                    class.candidate_bound
                )));
            }
            let model = LossModel::new(batch, q_src, policy, gamma)?;
            let mut states = vec![0usize; nt_s];
            let mut actions = vec![0usize; nt_a];
            let mut best = (f64::INFINITY, states.clone(), actions.clone());
            loop {
                let l = model.loss(&states, &actions);
                if l < best.0 {
                    best = (l, states.clone(), actions.clone());
                }
                // odometer with the last action digit fastest, so maps are
                // visited in lexicographic order of (state_map, action_map)
                if !advance(&mut actions, ns_a) && !advance(&mut states, ns_s) {
                    break;
                }
            }
            DomainMap::new(best.1, best.2, ns_s, ns_a)?
        }
        SearchMode::GreedyCoordinate => {
            let model = LossModel::new(batch, q_src, policy, gamma)?;
            let (mut states, mut actions, mut loss) =
                greedy_descent(&model, init.state_map.clone(), init.action_map.clone(), ns_s, ns_a);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..class.restarts {
                let s0: Vec<usize> = (0..nt_s).map(|_| rng.gen_range(0..ns_s)).collect();
                let a0: Vec<usize> = (0..nt_a).map(|_| rng.gen_range(0..ns_a)).collect();
                let (s1, a1, l1) = greedy_descent(&model, s0, a0, ns_s, ns_a);
                if l1 < loss {
                    (states, actions, loss) = (s1, a1, l1);
                }
            }
            DomainMap::new(states, actions, ns_s, ns_a)?
        }
    };
    let loss = cd_loss(batch, q_src, &chosen, policy, gamma)?;
    Ok((chosen, loss))
}

/// Increments `digits` as a base-`base` counter with the last digit fastest.
/// Returns `false` (and resets to zeros) on wrap-around.
fn advance(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_q, random_deterministic_mdp, random_mdp, random_policy, sample_batch};

    fn all_maps(nt_s: usize, nt_a: usize, ns_s: usize, ns_a: usize) -> Vec<DomainMap> {
        let mut out = Vec::new();
        let mut states = vec![0; nt_s];
        loop {
            let mut actions = vec![0; nt_a];
            loop {
                out.push(DomainMap::new(states.clone(), actions.clone(), ns_s, ns_a).unwrap());
                if !advance(&mut actions, ns_a) {
                    break;
                }
            }
            if !advance(&mut states, ns_s) {
                break;
            }
        }
        out
    }

    #[test]
    fn domain_map_validation() {
        assert!(DomainMap::new(vec![0, 3], vec![0], 3, 1).is_err());
        assert!(DomainMap::new(vec![0, 1], vec![2], 3, 2).is_err());
        let m = DomainMap::new(vec![2, 0], vec![1, 1, 0], 3, 2).unwrap();
        let q = QTable::from_values(3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let pulled = m.pull_back(&q).unwrap();
        assert_eq!(pulled.values(), &[5.0, 5.0, 4.0, 1.0, 1.0, 0.0]);
        assert!(m.pull_back(&QTable::zeros(2, 2)).is_err());
    }

    #[test]
    fn identity_transfer_reaches_zero_loss() {
        let mdp = random_deterministic_mdp(3, 2, 0.9, 1);
        let pi = random_policy(3, 2, 1.0, 1);
        let q = exact_q(&mdp, &pi);
        let batch = sample_batch(&mdp, &pi, 300, 2, 0.1).unwrap();
        let init = DomainMap::new(vec![0, 0, 0], vec![0, 0], 3, 2).unwrap();
        for class in [MapClass::exhaustive(1000), MapClass::greedy(3), MapClass::fixed_identity()] {
            let (m, loss) = search_maps(&batch, &q, &pi, 0.9, &class, &init, 5).unwrap();
            assert!(loss < 1e-18, "{:?} gave {loss} with {:?}", class.mode, m);
        }
    }

    #[test]
    fn exhaustive_matches_enumeration() {
        for seed in 0..5 {
            let src = random_mdp(3, 2, 0.9, seed);
            let tar = random_mdp(3, 2, 0.9, seed + 50);
            let q_src = exact_q(&src, &random_policy(3, 2, 1.0, seed));
            let pi = random_policy(3, 2, 1.0, seed + 7);
            let batch = sample_batch(&tar, &pi, 200, seed, 0.1).unwrap();
            let init = DomainMap::identity(3, 2);
            let (best, loss) = search_maps(&batch, &q_src, &pi, 0.9, &MapClass::exhaustive(1000), &init, 0).unwrap();
            let mut oracle: Option<(f64, DomainMap)> = None;
            for m in all_maps(3, 2, 3, 2) {
                let l = cd_loss(&batch, &q_src, &m, &pi, 0.9).unwrap();
                if oracle.as_ref().is_none_or(|(bl, _)| l < *bl) {
                    oracle = Some((l, m));
                }
            }
            let (ol, om) = oracle.unwrap();
            assert!((loss - ol).abs() < 1e-12);
            assert_eq!(best, om);

            let (_, greedy_loss) = search_maps(&batch, &q_src, &pi, 0.9, &MapClass::greedy(0), &init, 0).unwrap();
            let init_loss = cd_loss(&batch, &q_src, &init, &pi, 0.9).unwrap();
            assert!(greedy_loss <= init_loss + 1e-12);
            assert!(greedy_loss >= loss - 1e-12);
        }
    }

    #[test]
    fn exhaustive_respects_the_candidate_bound() {
        let mdp = random_mdp(4, 2, 0.9, 1);
        let pi = Policy::uniform(4, 2);
        let batch = sample_batch(&mdp, &pi, 10, 0, 0.1).unwrap();
        let q = QTable::zeros(4, 2);
        let init = DomainMap::identity(4, 2);
        // 4^4 * 2^2 = 1024
        assert!(search_maps(&batch, &q, &pi, 0.9, &MapClass::exhaustive(1023), &init, 0).is_err());
        assert!(search_maps(&batch, &q, &pi, 0.9, &MapClass::exhaustive(1024), &init, 0).is_ok());
        assert_eq!(MapClass::exhaustive(0).size(4, 2, 4, 2), 1024);
    }

    #[test]
    fn exhaustive_ties_pick_lexicographic_first() {
        let mdp = random_mdp(2, 1, 0.9, 1);
        let pi = Policy::uniform(2, 1);
        let batch = sample_batch(&mdp, &pi, 10, 0, 0.1).unwrap();
        // constant source critic: every map has the same loss
        let q = QTable::constant(3, 1, 1.0);
        let init = DomainMap::new(vec![2, 2], vec![0], 3, 1).unwrap();
        let (m, _) = search_maps(&batch, &q, &pi, 0.9, &MapClass::exhaustive(100), &init, 0).unwrap();
        assert_eq!(m.state_map(), &[0, 0]);
        let (g, _) = search_maps(&batch, &q, &pi, 0.9, &MapClass::greedy(2), &init, 0).unwrap();
        assert_eq!(g, init, "greedy keeps the incumbent on ties");
    }

    #[test]
    fn fixed_identity_rejects_mismatched_spaces() {
        let mdp = random_mdp(3, 2, 0.9, 1);
        let pi = Policy::uniform(3, 2);
        let batch = sample_batch(&mdp, &pi, 5, 0, 0.1).unwrap();
        let q = QTable::zeros(2, 2);
        let init = DomainMap::new(vec![0, 1, 1], vec![0, 1], 2, 2).unwrap();
        let err = search_maps(&batch, &q, &pi, 0.9, &MapClass::fixed_identity(), &init, 0);
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn candidates_pick_the_lower_loss() {
        let mdp = random_deterministic_mdp(3, 2, 0.9, 4);
        let pi = random_policy(3, 2, 1.0, 4);
        let q = exact_q(&mdp, &pi);
        let batch = sample_batch(&mdp, &pi, 100, 0, 0.1).unwrap();
        let other = DomainMap::new(vec![1, 2, 0], vec![1, 0], 3, 2).unwrap();
        let class = MapClass::candidates(vec![other.clone(), DomainMap::identity(3, 2)]);
        let (m, loss) = search_maps(&batch, &q, &pi, 0.9, &class, &other, 0).unwrap();
        assert_eq!(m, DomainMap::identity(3, 2));
        assert!(loss < 1e-18);
    }

    #[test]
    fn greedy_is_deterministic_and_restarts_help_or_tie() {
        let src = random_mdp(4, 2, 0.9, 10);
        let tar = random_mdp(5, 2, 0.9, 11);
        let q_src = exact_q(&src, &random_policy(4, 2, 1.0, 1));
        let pi = random_policy(5, 2, 1.0, 2);
        let batch = sample_batch(&tar, &pi, 300, 3, 0.1).unwrap();
        let init = DomainMap::new(vec![0; 5], vec![0, 0], 4, 2).unwrap();
        let a = search_maps(&batch, &q_src, &pi, 0.9, &MapClass::greedy(4), &init, 9).unwrap();
        let b = search_maps(&batch, &q_src, &pi, 0.9, &MapClass::greedy(4), &init, 9).unwrap();
        assert_eq!(a, b);
        let none = search_maps(&batch, &q_src, &pi, 0.9, &MapClass::greedy(0), &init, 9).unwrap();
        assert!(a.1 <= none.1 + 1e-15);
    }
}
