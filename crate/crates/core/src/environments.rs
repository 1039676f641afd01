//! Gridworld and corridor constructors, the two-trajectory toy pair, and
//! named transfer scenarios.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{cross_domain_error, cycle_consistency_loss};
use crate::mapping::{search_maps, DomainMap, MapClass};
use crate::mdp::{exact_q, start_value, value_iteration, Policy, QTable, TabularMdp, Transition, TransitionBatch};

/// `(x, y)` with `x` growing to the right and `y` growing upward.
pub type Cell = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Move {
    Up,
    Right,
    Down,
    Left,
}

impl Move {
    fn apply(self, (x, y): Cell) -> Option<Cell> {
        match self {
            Move::Up => Some((x, y + 1)),
            Move::Right => Some((x + 1, y)),
            Move::Down => y.checked_sub(1).map(|y| (x, y)),
            Move::Left => x.checked_sub(1).map(|x| (x, y)),
        }
    }
}

/// How grid cells are numbered as MDP states.  All encodings describe the
/// same MDP up to a relabeling of states.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    /// Row-major cell order, `y` outer and `x` inner.
    #[default]
    DecimalIndex,
    /// Each coordinate written as a right-aligned run of ones (`x` bits
    /// then `y` bits); states ordered by the binary value of the label.
    BinaryExpanded,
    /// Seeded random permutation of the row-major order.
    Permuted(u64),
}

fn default_treasure_reward() -> f64 {
    0.5
}
fn default_terminal_reward() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    0.9
}
fn default_concentration() -> f64 {
    0.9
}
fn default_actions() -> Vec<Move> {
    vec![Move::Up, Move::Right, Move::Down, Move::Left]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub obstacles: Vec<Cell>,
    pub start: Cell,
    pub terminal: Cell,
    #[serde(default)]
    pub treasure: Option<Cell>,
    #[serde(default = "default_treasure_reward")]
    pub treasure_reward: f64,
    #[serde(default = "default_terminal_reward")]
    pub terminal_reward: f64,
    #[serde(default = "default_actions")]
    pub actions: Vec<Move>,
    #[serde(default)]
    pub encoding: Encoding,
    /// Probability that the chosen action is replaced by a uniformly random one.
    #[serde(default)]
    pub slip_prob: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Initial mass on the start cell; the rest is spread over all pairs.
    #[serde(default = "default_concentration")]
    pub start_concentration: f64,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, start: Cell, terminal: Cell) -> Self {
        Self {
            width,
            height,
            obstacles: Vec::new(),
            start,
            terminal,
            treasure: None,
            treasure_reward: default_treasure_reward(),
            terminal_reward: default_terminal_reward(),
            actions: default_actions(),
            encoding: Encoding::DecimalIndex,
            slip_prob: 0.0,
            gamma: default_gamma(),
            start_concentration: default_concentration(),
        }
    }

    fn in_bounds(&self, (x, y): Cell) -> bool {
        x < self.width && y < self.height
    }

    fn free(&self, cell: Cell) -> bool {
        self.in_bounds(cell) && !self.obstacles.contains(&cell)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("grid must have positive width and height".into()));
        }
        for (name, cell) in [("start", Some(self.start)), ("terminal", Some(self.terminal)), ("treasure", self.treasure)] {
            if let Some(c) = cell {
                if !self.free(c) {
                    return Err(Error::InvalidArgument(format!("{name} cell {c:?} is out of bounds or an obstacle")));
                }
            }
        }
        if self.start == self.terminal || self.treasure == Some(self.terminal) {
            return Err(Error::InvalidArgument("terminal must differ from start and treasure".into()));
        }
        let distinct: BTreeSet<_> = self.actions.iter().collect();
        if self.actions.is_empty() || distinct.len() != self.actions.len() {
            return Err(Error::InvalidArgument("actions must be a nonempty set".into()));
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(Error::InvalidArgument(format!("slip probability {} outside [0, 1)", self.slip_prob)));
        }
        if self.treasure_reward < 0.0 || self.terminal_reward < 0.0 {
            return Err(Error::InvalidArgument("rewards must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.start_concentration) || self.start_concentration == 1.0 && self.width * self.height > 1 {
            return Err(Error::InvalidArgument("start concentration must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// A built grid with its state labels.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMdp {
    pub spec: GridSpec,
    pub mdp: TabularMdp,
    /// Raw rewards were divided by this to land in `[0, 1]`.
    pub reward_scale: f64,
    /// Human-readable label of each state index.
    pub labels: Vec<String>,
    /// `(cell, treasure_collected)` of each state index.
    pub cells: Vec<(Cell, bool)>,
    pub warnings: Vec<String>,
}

impl GridMdp {
    pub fn state_of(&self, cell: Cell, collected: bool) -> Option<usize> {
        self.cells.iter().position(|c| *c == (cell, collected))
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.cells[s].0 == self.spec.terminal
    }

    pub fn action_index(&self, m: Move) -> Option<usize> {
        self.spec.actions.iter().position(|a| *a == m)
    }
}

fn binary_label(cell: Cell, width: usize, height: usize) -> Vec<u8> {
    let run = |v: usize, len: usize| (0..len).map(move |i| u8::from(len - i <= v));
    run(cell.0, width - 1).chain(run(cell.1, height - 1)).collect()
}

pub fn build_grid(spec: &GridSpec) -> Result<GridMdp> {
    spec.validate()?;
    let flags: &[bool] = if spec.treasure.is_some() { &[false, true] } else { &[false] };
    let mut canonical = Vec::new();
    for &flag in flags {
        for y in 0..spec.height {
            for x in 0..spec.width {
                if spec.free((x, y)) {
                    canonical.push(((x, y), flag));
                }
            }
        }
    }
    let n = canonical.len();
    let order: Vec<usize> = match spec.encoding {
        Encoding::DecimalIndex => (0..n).collect(),
        Encoding::BinaryExpanded => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by_key(|&i| {
                let (cell, flag) = canonical[i];
                let value = binary_label(cell, spec.width, spec.height)
                    .iter()
                    .fold(0u64, |acc, b| (acc << 1) | u64::from(*b));
                (flag, value)
            });
            idx
        }
        Encoding::Permuted(seed) => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            idx
        }
    };
    // order[k] = canonical index of state k
    let cells: Vec<(Cell, bool)> = order.iter().map(|&i| canonical[i]).collect();
    let index_of = |cell: Cell, flag: bool| cells.iter().position(|c| *c == (cell, flag)).expect("free cell");

    let na = spec.actions.len();
    let raw_max = match spec.treasure {
        Some(_) => spec.terminal_reward.max(spec.treasure_reward),
        None => spec.terminal_reward,
    };
    let reward_scale = raw_max.max(1.0);
    let mut transition = vec![0.0; n * na * n];
    let mut reward = vec![0.0; n * na];
    for (s, &(cell, flag)) in cells.iter().enumerate() {
        for a in 0..spec.actions.len() {
            let row = (s * na + a) * n;
            if cell == spec.terminal {
                transition[row + s] = 1.0;
                continue;
            }
            for (b, &m) in spec.actions.iter().enumerate() {
                let p = if b == a { 1.0 - spec.slip_prob } else { 0.0 } + spec.slip_prob / na as f64;
                if p == 0.0 {
                    continue;
                }
                let next = m.apply(cell).filter(|c| spec.free(*c)).unwrap_or(cell);
                let mut r = 0.0;
                let mut next_flag = flag;
                if Some(next) == spec.treasure && !flag {
                    r += spec.treasure_reward;
                    next_flag = true;
                }
                if next == spec.terminal {
                    r += spec.terminal_reward;
                }
                transition[row + index_of(next, next_flag)] += p;
                reward[s * na + a] += p * r / reward_scale;
            }
        }
    }
    let start = index_of(spec.start, false);
    let uniform = (1.0 - spec.start_concentration) / (n * na) as f64;
    let mut initial = vec![uniform; n * na];
    for a in 0..na {
        initial[start * na + a] += spec.start_concentration / na as f64;
    }
    for r in reward.iter_mut() {
        *r = r.clamp(0.0, 1.0);
    }
    let mdp = TabularMdp::new(n, na, transition, reward, spec.gamma, initial)?;

    let labels = cells
        .iter()
        .map(|&(cell, flag)| {
            let base = match spec.encoding {
                Encoding::BinaryExpanded => {
                    let bits: Vec<String> = binary_label(cell, spec.width, spec.height).iter().map(|b| b.to_string()).collect();
                    format!("({})", bits.join(","))
                }
                _ => format!("({},{})", cell.0, cell.1),
            };
            if flag {
                format!("{base}+t")
            } else {
                base
            }
        })
        .collect();

    let mut warnings = Vec::new();
    if !reachable(spec, spec.start).contains(&spec.terminal) {
        warnings.push(format!("terminal {:?} is unreachable from start {:?}", spec.terminal, spec.start));
    }
    Ok(GridMdp {
        spec: spec.clone(),
        mdp,
        reward_scale,
        labels,
        cells,
        warnings,
    })
}

fn reachable(spec: &GridSpec, from: Cell) -> BTreeSet<Cell> {
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(c) = queue.pop_front() {
        if c == spec.terminal {
            continue;
        }
        for m in &spec.actions {
            if let Some(next) = m.apply(c).filter(|n| spec.free(*n)) {
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
    }
    seen
}

/// Follows the most likely transition of the greedy action from the start
/// cell until the terminal cell or `max_steps`.
pub fn greedy_path(grid: &GridMdp, policy: &Policy, max_steps: usize) -> Vec<Transition> {
    let mdp = &grid.mdp;
    let mut s = grid.state_of(grid.spec.start, false).expect("start state");
    let mut path = Vec::new();
    for _ in 0..max_steps {
        if grid.is_terminal(s) {
            break;
        }
        let probs = policy.probs(s);
        let a = (0..probs.len()).fold(0, |best, a| if probs[a] > probs[best] { a } else { best });
        let row = mdp.next_dist(s, a);
        let s_next = (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best });
        path.push(Transition { s, a, r: mdp.reward(s, a), s_next });
        s = s_next;
    }
    path
}

/// Walks a fixed action sequence from the start cell.
fn scripted_path(grid: &GridMdp, moves: &[Move]) -> Result<Vec<Transition>> {
    let mut s = grid.state_of(grid.spec.start, false).expect("start state");
    let mut path = Vec::new();
    for &m in moves {
        let a = grid
            .action_index(m)
            .ok_or_else(|| Error::InvalidArgument(format!("{m:?} is not an action of this grid")))?;
        let row = grid.mdp.next_dist(s, a);
        let s_next = (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best });
        path.push(Transition { s, a, r: grid.mdp.reward(s, a), s_next });
        s = s_next;
    }
    Ok(path)
}

/// Two 3x3 grids with actions up and right, one numbered by cell index and
/// one by binary-expanded coordinates, plus two candidate maps that align
/// the target's optimal path with two different source paths.
#[derive(Clone, Debug)]
pub struct ToyPair {
    pub source: GridMdp,
    pub target: GridMdp,
    /// Aligns the target's optimal path with the source's optimal path.
    pub traj_a_map: DomainMap,
    /// Aligns the target's optimal path with the source path that skips the treasure.
    pub traj_b_map: DomainMap,
    pub target_path: Vec<Transition>,
    pub traj_a: Vec<Transition>,
    pub traj_b: Vec<Transition>,
    pub source_q: QTable,
    pub target_policy: Policy,
}

pub fn toy_spec(encoding: Encoding) -> GridSpec {
    GridSpec {
        width: 3,
        height: 3,
        obstacles: vec![(1, 0), (2, 0), (2, 1)],
        start: (0, 0),
        terminal: (2, 2),
        treasure: Some((0, 2)),
        treasure_reward: 0.5,
        terminal_reward: 1.0,
        actions: vec![Move::Up, Move::Right],
        encoding,
        slip_prob: 0.0,
        gamma: 0.99,
        start_concentration: 0.9,
    }
}

pub fn build_toy_pair() -> Result<ToyPair> {
    let source = build_grid(&toy_spec(Encoding::DecimalIndex))?;
    let target = build_grid(&toy_spec(Encoding::BinaryExpanded))?;
    let (source_q, source_policy) = value_iteration(&source.mdp, 1e-12);
    let (_, target_policy) = value_iteration(&target.mdp, 1e-12);

    let traj_a = greedy_path(&source, &source_policy, 16);
    let traj_b = scripted_path(&source, &[Move::Up, Move::Right, Move::Up, Move::Right])?;
    let target_path = greedy_path(&target, &target_policy, 16);

    // A: same underlying cell and treasure flag.
    let same_cell: Vec<usize> = target
        .cells
        .iter()
        .map(|&(cell, flag)| source.state_of(cell, flag).expect("same layout"))
        .collect();
    let actions: Vec<usize> = (0..target.mdp.n_actions()).collect();
    let n_src = source.mdp.n_states();
    let n_act = source.mdp.n_actions();
    let traj_a_map = DomainMap::new(same_cell.clone(), actions.clone(), n_src, n_act)?;

    // B: the k-th state of the target path goes to the k-th state of the
    // treasure-skipping source path.
    let mut b_states = same_cell;
    let visit = |path: &[Transition]| -> Vec<usize> {
        let mut v: Vec<usize> = path.iter().map(|t| t.s).collect();
        if let Some(last) = path.last() {
            v.push(last.s_next);
        }
        v
    };
    let tar_states = visit(&target_path);
    let b_path_states = visit(&traj_b);
    if tar_states.len() != b_path_states.len() {
        return Err(Error::InvalidMdp("target path and source path lengths differ".into()));
    }
    for (t, u) in tar_states.iter().zip(&b_path_states) {
        b_states[*t] = *u;
    }
    let traj_b_map = DomainMap::new(b_states, actions, n_src, n_act)?;

    Ok(ToyPair {
        source,
        target,
        traj_a_map,
        traj_b_map,
        target_path,
        traj_a,
        traj_b,
        source_q,
        target_policy,
    })
}

/// One row of the toy comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRow {
    pub map: String,
    /// Sum over the target's optimal path of the absolute cross-domain
    /// Bellman residual under the map.
    pub cd_loss: f64,
    /// Path transitions with a residual above `1e-9`.
    pub cd_nonzero: usize,
    pub cd_residuals: Vec<f64>,
    /// Residual sum when each target transition is scored against the
    /// paired source transition (source action and successor) instead of
    /// the mapped target ones.
    pub cd_loss_paired: f64,
    pub cycle_loss: f64,
}

/// Scores the two candidate maps of the toy pair.
pub fn toy_report(pair: &ToyPair) -> Result<Vec<ToyRow>> {
    let rows = [
        ("A", &pair.traj_a_map, &pair.traj_a),
        ("B", &pair.traj_b_map, &pair.traj_b),
    ];
    let mut out = Vec::new();
    for (name, map, src_path) in rows {
        let report = cross_domain_error(&pair.target.mdp, &pair.source_q, map, &pair.target_policy)?;
        let residuals: Vec<f64> = pair.target_path.iter().map(|t| report.get(t.s, t.a)).collect();
        let pairing: Vec<(Transition, Transition)> = pair.target_path.iter().copied().zip(src_path.iter().copied()).collect();
        let cycle_loss = cycle_consistency_loss(&pair.target.mdp, &pair.source.mdp, map, &pairing)?;
        let g = pair.target.mdp.gamma();
        let mut paired = 0.0;
        for (k, (t, u)) in pairing.iter().enumerate() {
            let next = match src_path.get(k + 1) {
                Some(v) => pair.source_q.get(v.s, v.a),
                None => 0.0,
            };
            paired += (pair.source_q.get(u.s, u.a) - t.r - g * next).abs();
        }
        out.push(ToyRow {
            map: name.to_string(),
            cd_loss: residuals.iter().sum(),
            cd_nonzero: residuals.iter().filter(|r| **r > 1e-9).count(),
            cd_residuals: residuals,
            cd_loss_paired: paired,
            cycle_loss,
        });
    }
    Ok(out)
}

/// Map search restricted to the two toy candidates on the target's optimal path.
pub fn toy_select_map(pair: &ToyPair) -> Result<(DomainMap, f64)> {
    let batch = TransitionBatch::from_transitions(pair.target_path.clone());
    let class = MapClass::candidates(vec![pair.traj_a_map.clone(), pair.traj_b_map.clone()]);
    search_maps(
        &batch,
        &pair.source_q,
        &pair.target_policy,
        pair.target.mdp.gamma(),
        &class,
        &pair.traj_b_map,
        0,
    )
}

/// A 1-D corridor with actions left (0) and right (1).  `left_reward` and
/// `right_reward`, when given, make the corresponding end cell terminal and
/// pay that reward on entry.
pub fn corridor(len: usize, start: usize, left_reward: Option<f64>, right_reward: Option<f64>, gamma: f64) -> Result<TabularMdp> {
    if len < 2 || start >= len {
        return Err(Error::InvalidArgument("corridor needs at least two cells and a valid start".into()));
    }
    let terminal = |c: usize| (c == 0 && left_reward.is_some()) || (c == len - 1 && right_reward.is_some());
    if terminal(start) {
        return Err(Error::InvalidArgument("corridor start must not be terminal".into()));
    }
    let scale = left_reward.unwrap_or(0.0).max(right_reward.unwrap_or(0.0)).max(1.0);
    let na = 2;
    let mut transition = vec![0.0; len * na * len];
    let mut reward = vec![0.0; len * na];
    for c in 0..len {
        for a in 0..na {
            let next = if terminal(c) {
                c
            } else if a == 0 {
                c.saturating_sub(1)
            } else {
                (c + 1).min(len - 1)
            };
            transition[(c * na + a) * len + next] = 1.0;
            if !terminal(c) && next != c {
                if next == 0 {
                    reward[c * na + a] = left_reward.unwrap_or(0.0) / scale;
                }
                if next == len - 1 {
                    reward[c * na + a] = right_reward.unwrap_or(0.0) / scale;
                }
            }
        }
    }
    let uniform = 0.1 / (len * na) as f64;
    let mut initial = vec![uniform; len * na];
    for a in 0..na {
        initial[start * na + a] += 0.9 / na as f64;
    }
    TabularMdp::new(len, na, transition, reward, gamma, initial)
}

/// Random grid: about a fifth of the cells blocked, start and terminal
/// distinct and connected.
pub fn random_grid_spec(width: usize, height: usize, seed: u64) -> GridSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<Cell> = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).collect();
    loop {
        let mut cells = all.clone();
        cells.shuffle(&mut rng);
        let start = cells[0];
        let terminal = cells[1];
        let obstacles: Vec<Cell> = cells[2..].iter().copied().filter(|_| rng.gen_bool(0.2)).collect();
        let mut spec = GridSpec::new(width, height, start, terminal);
        spec.obstacles = obstacles;
        if reachable(&spec, start).contains(&terminal) {
            return spec;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioName {
    PerfectTransfer,
    PermutedEncoding,
    ReversedGoal,
    Unrelated,
    LowQualitySource,
    TwoSourceComplementary,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 6] = [
        ScenarioName::PerfectTransfer,
        ScenarioName::PermutedEncoding,
        ScenarioName::ReversedGoal,
        ScenarioName::Unrelated,
        ScenarioName::LowQualitySource,
        ScenarioName::TwoSourceComplementary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioName::PerfectTransfer => "perfect-transfer",
            ScenarioName::PermutedEncoding => "permuted-encoding",
            ScenarioName::ReversedGoal => "reversed-goal",
            ScenarioName::Unrelated => "unrelated",
            ScenarioName::LowQualitySource => "low-quality-source",
            ScenarioName::TwoSourceComplementary => "two-source-complementary",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ScenarioName::PerfectTransfer => "source and target are the same grid; the source critic is optimal",
            ScenarioName::PermutedEncoding => "target is the source grid with shuffled state numbering",
            ScenarioName::ReversedGoal => "source swaps start and goal of the target grid",
            ScenarioName::Unrelated => "source is an independently drawn random grid",
            ScenarioName::LowQualitySource => "source critic comes from truncated value iteration",
            ScenarioName::TwoSourceComplementary => "two corridor sources, each matching one end of the target corridor",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario '{s}'")))
    }
}

/// A fully specified transfer experiment.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: ScenarioName,
    pub target: TabularMdp,
    pub sources: Vec<TabularMdp>,
    pub source_critics: Vec<QTable>,
    /// Map class suited to the scenario.
    pub map_class: MapClass,
    pub notes: Vec<String>,
}

/// The target grid shared by the grid scenarios.
pub fn base_grid_spec() -> GridSpec {
    let mut spec = GridSpec::new(4, 4, (0, 0), (3, 3));
    spec.obstacles = vec![(1, 1), (2, 1), (1, 2)];
    spec
}

/// Truncated value iteration: `k` Bellman optimality updates from zero.
pub fn truncated_value_iteration(mdp: &TabularMdp, k: usize) -> QTable {
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let mut q = QTable::zeros(ns, na);
    for _ in 0..k {
        let v: Vec<f64> = (0..ns).map(|s| q.max(s)).collect();
        let mut next = QTable::zeros(ns, na);
        for s in 0..ns {
            for a in 0..na {
                let ev: f64 = mdp.next_dist(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
                next.set(s, a, mdp.reward(s, a) + g * ev);
            }
        }
        q = next;
    }
    q
}

/// Smallest `k` whose truncated critic has a greedy policy reaching at
/// least `fraction` of the optimal start value, with that value ratio.
pub fn low_quality_depth(mdp: &TabularMdp, fraction: f64, max_k: usize) -> (usize, f64) {
    let (_, optimal) = value_iteration(mdp, 1e-10);
    let v_star = start_value(mdp, &optimal);
    let mut last = (max_k, 1.0);
    for k in 0..=max_k {
        let greedy = Policy::greedy(&truncated_value_iteration(mdp, k));
        let ratio = if v_star > 0.0 { start_value(mdp, &greedy) / v_star } else { 1.0 };
        if ratio >= fraction {
            return (k, ratio);
        }
        last = (k, ratio);
    }
    last
}

pub fn build_scenario(name: ScenarioName, seed: u64) -> Result<Scenario> {
    let base = base_grid_spec();
    let target = build_grid(&base)?;
    let optimal = |m: &TabularMdp| value_iteration(m, 1e-10).0;
    let mut notes = Vec::new();
    let scenario = match name {
        ScenarioName::PerfectTransfer => Scenario {
            name,
            source_critics: vec![optimal(&target.mdp)],
            sources: vec![target.mdp.clone()],
            target: target.mdp,
            map_class: MapClass::fixed_identity(),
            notes,
        },
        ScenarioName::PermutedEncoding => {
            let mut spec = base.clone();
            spec.encoding = Encoding::Permuted(seed);
            let permuted = build_grid(&spec)?;
            notes.push("target states are a seeded permutation of the source states".into());
            Scenario {
                name,
                source_critics: vec![optimal(&target.mdp)],
                sources: vec![target.mdp],
                target: permuted.mdp,
                map_class: MapClass::greedy(4),
                notes,
            }
        }
        ScenarioName::ReversedGoal => {
            let mut spec = base.clone();
            std::mem::swap(&mut spec.start, &mut spec.terminal);
            let source = build_grid(&spec)?;
            notes.push("source goal is the target start; identity map over the shared layout".into());
            Scenario {
                name,
                source_critics: vec![optimal(&source.mdp)],
                sources: vec![source.mdp],
                target: target.mdp,
                map_class: MapClass::fixed_identity(),
                notes,
            }
        }
        ScenarioName::Unrelated => {
            let spec = random_grid_spec(4, 4, seed);
            let source = build_grid(&spec)?;
            notes.push(format!("source grid drawn from seed {seed}"));
            Scenario {
                name,
                source_critics: vec![optimal(&source.mdp)],
                sources: vec![source.mdp],
                target: target.mdp,
                map_class: MapClass::greedy(2),
                notes,
            }
        }
        ScenarioName::LowQualitySource => {
            let (k, ratio) = low_quality_depth(&target.mdp, 0.3, 200);
            notes.push(format!("truncated value iteration depth {k}, greedy value ratio {ratio:.3}"));
            Scenario {
                name,
                source_critics: vec![truncated_value_iteration(&target.mdp, k)],
                sources: vec![target.mdp.clone()],
                target: target.mdp,
                map_class: MapClass::fixed_identity(),
                notes,
            }
        }
        ScenarioName::TwoSourceComplementary => {
            let tar = corridor(6, 2, Some(1.0), Some(0.5), 0.9)?;
            let left = corridor(4, 2, Some(1.0), None, 0.9)?;
            let right = corridor(4, 1, None, Some(0.5), 0.9)?;
            notes.push("target corridor has goals at both ends; each source knows one of them".into());
            Scenario {
                name,
                source_critics: vec![optimal(&left), optimal(&right)],
                sources: vec![left, right],
                target: tar,
                map_class: MapClass::exhaustive(1 << 16),
                notes,
            }
        }
    };
    Ok(scenario)
}

/// Action values of `policy` in the source domain, for scenarios that want
/// an on-policy source critic.
pub fn source_policy_critic(source: &TabularMdp, policy: &Policy) -> QTable {
    exact_q(source, policy)
}
