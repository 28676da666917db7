//! The four-room gridworld as a contextual MDP family.
//!
//! Cells are `(x, y)` with `(0, 0)` the bottom-left start cell; state index is
//! `y * width + x`. Actions `0..4` move up/down/left/right, action
//! [`REWARD_ACTION`] collects the goal-shaped reward, and the remaining
//! [`N_DUMMY_ACTIONS`] actions do nothing at all.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{ContextualMdp, Dynamics, StateDistribution};

pub const N_MOVE_ACTIONS: usize = 4;
pub const REWARD_ACTION: usize = 4;
pub const N_DUMMY_ACTIONS: usize = 100;
pub const N_ACTIONS: usize = N_MOVE_ACTIONS + 1 + N_DUMMY_ACTIONS;

const DEFAULT_LAYOUT: &str = include_str!("../data/fourroom_layout.json");

pub type Cell = (usize, usize);

/// On-disk layout: grid size, blocked edges and the curriculum path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutFile {
    pub width: usize,
    pub height: usize,
    pub walls: Vec<[[i64; 2]; 2]>,
    pub curriculum: Vec<[i64; 2]>,
}

/// Validated grid geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout {
    width: usize,
    height: usize,
    /// Blocked edges, each stored with the smaller state index first.
    walls: BTreeSet<(usize, usize)>,
    start: Cell,
    curriculum: Vec<Cell>,
}

impl GridLayout {
    pub fn from_file(file: &LayoutFile) -> Result<Self> {
        let (w, h) = (file.width, file.height);
        if w == 0 || h == 0 {
            return Err(Error::InvalidLayout("grid must be nonempty".into()));
        }
        let cell = |p: [i64; 2]| -> Result<Cell> {
            if p[0] < 0 || p[1] < 0 || p[0] as usize >= w || p[1] as usize >= h {
                return Err(Error::InvalidLayout(format!("cell {p:?} outside {w}x{h} grid")));
            }
            Ok((p[0] as usize, p[1] as usize))
        };
        let mut walls = BTreeSet::new();
        for [a, b] in &file.walls {
            let (ca, cb) = (cell(*a)?, cell(*b)?);
            if ca.0.abs_diff(cb.0) + ca.1.abs_diff(cb.1) != 1 {
                return Err(Error::InvalidLayout(format!(
                    "wall {a:?}-{b:?} does not separate adjacent cells"
                )));
            }
            let (i, j) = (ca.1 * w + ca.0, cb.1 * w + cb.0);
            walls.insert((i.min(j), i.max(j)));
        }
        let curriculum = file
            .curriculum
            .iter()
            .map(|&p| cell(p))
            .collect::<Result<Vec<_>>>()?;
        let layout = Self {
            width: w,
            height: h,
            walls,
            start: (0, 0),
            curriculum,
        };
        layout.check()?;
        Ok(layout)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(text)?)
    }

    pub fn to_file(&self) -> LayoutFile {
        let w = self.width;
        let xy = |i: usize| [(i % w) as i64, (i / w) as i64];
        LayoutFile {
            width: self.width,
            height: self.height,
            walls: self.walls.iter().map(|&(i, j)| [xy(i), xy(j)]).collect(),
            curriculum: self
                .curriculum
                .iter()
                .map(|&(x, y)| [x as i64, y as i64])
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    /// Replaces the curriculum path, re-running the path checks.
    pub fn with_curriculum(&self, curriculum: Vec<Cell>) -> Result<Self> {
        let layout = Self {
            curriculum,
            ..self.clone()
        };
        layout.check()?;
        Ok(layout)
    }

    fn check(&self) -> Result<()> {
        let reached = self.reachable_from(self.start);
        if reached.len() != self.n_states() {
            return Err(Error::InvalidLayout(format!(
                "only {} of {} cells reachable from the start",
                reached.len(),
                self.n_states()
            )));
        }
        if self.curriculum.is_empty() {
            return Err(Error::InvalidLayout("curriculum is empty".into()));
        }
        for pair in self.curriculum.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let adjacent = a.0.abs_diff(b.0) + a.1.abs_diff(b.1) == 1;
            if !adjacent || self.blocked(self.state(a), self.state(b)) {
                return Err(Error::InvalidLayout(format!(
                    "curriculum step {a:?} -> {b:?} is not a single walkable move"
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn curriculum(&self) -> &[Cell] {
        &self.curriculum
    }

    pub fn n_walls(&self) -> usize {
        self.walls.len()
    }

    #[inline]
    pub fn state(&self, (x, y): Cell) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn cell(&self, s: usize) -> Cell {
        (s % self.width, s / self.width)
    }

    fn blocked(&self, i: usize, j: usize) -> bool {
        self.walls.contains(&(i.min(j), i.max(j)))
    }

    /// Result of a move action; borders and walls turn the move into a self-loop.
    pub fn move_target(&self, s: usize, a: usize) -> usize {
        let (x, y) = self.cell(s);
        let target = match a {
            0 if y + 1 < self.height => Some((x, y + 1)),
            1 if y > 0 => Some((x, y - 1)),
            2 if x > 0 => Some((x - 1, y)),
            3 if x + 1 < self.width => Some((x + 1, y)),
            _ => None,
        };
        match target.map(|c| self.state(c)) {
            Some(t) if !self.blocked(s, t) => t,
            _ => s,
        }
    }

    /// Cells reachable from `from` by move actions (breadth-first).
    pub fn reachable_from(&self, from: Cell) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        let s0 = self.state(from);
        seen.insert(s0);
        queue.push_back(s0);
        while let Some(s) = queue.pop_front() {
            for a in 0..N_MOVE_ACTIONS {
                let t = self.move_target(s, a);
                if seen.insert(t) {
                    queue.push_back(t);
                }
            }
        }
        seen
    }
}

/// Bundled twelve-by-twelve four-room layout with its 17-goal path.
pub fn default_layout() -> GridLayout {
    GridLayout::from_json(DEFAULT_LAYOUT).expect("bundled layout is valid")
}

/// Raw text of the bundled layout file.
pub fn default_layout_json() -> &'static str {
    DEFAULT_LAYOUT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardVariant {
    Easy,
    Hard,
}

impl RewardVariant {
    /// Per-step decay of the reward with distance to the goal.
    pub fn decay(self) -> f64 {
        match self {
            RewardVariant::Easy => 0.9,
            RewardVariant::Hard => 0.5,
        }
    }

    /// Largest Manhattan distance that still pays a nonzero reward.
    pub fn threshold(self) -> usize {
        match self {
            RewardVariant::Easy => 5,
            RewardVariant::Hard => 4,
        }
    }
}

impl std::str::FromStr for RewardVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Self::Easy),
            "hard" => Ok(Self::Hard),
            other => Err(Error::InvalidArgument(format!("unknown reward variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalContext {
    pub goal: Cell,
    pub variant: RewardVariant,
}

/// Manhattan distance, ignoring walls.
pub fn manhattan(a: Cell, b: Cell) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

/// Reward for taking `a` in `cell`: `decay^D` for the reward action within the
/// distance threshold, zero otherwise.
pub fn reward_value(ctx: &GoalContext, cell: Cell, a: usize) -> f64 {
    if a != REWARD_ACTION {
        return 0.0;
    }
    let d = manhattan(cell, ctx.goal);
    if d <= ctx.variant.threshold() {
        ctx.variant.decay().powi(d as i32)
    } else {
        0.0
    }
}

pub fn reward_table(layout: &GridLayout, ctx: &GoalContext) -> Arc<[f64]> {
    let mut table = vec![0.0; layout.n_states() * N_ACTIONS];
    for s in 0..layout.n_states() {
        table[s * N_ACTIONS + REWARD_ACTION] = reward_value(ctx, layout.cell(s), REWARD_ACTION);
    }
    table.into()
}

/// Deterministic `S x 105` kernel: moves respect walls and borders, the reward
/// action and all dummy actions are self-loops.
pub fn build_dynamics(layout: &GridLayout) -> Dynamics {
    Dynamics::deterministic(layout.n_states(), N_ACTIONS, |s, a| {
        if a < N_MOVE_ACTIONS {
            layout.move_target(s, a)
        } else {
            s
        }
    })
    .expect("move targets stay inside the grid")
}

/// Ordered goals of the layout's curriculum path.
pub fn curriculum_goals(layout: &GridLayout, variant: RewardVariant) -> Vec<GoalContext> {
    layout
        .curriculum()
        .iter()
        .map(|&goal| GoalContext { goal, variant })
        .collect()
}

/// Curriculum of the bundled layout: 17 goals from `(0, 0)` to `(8, 8)`.
pub fn default_curriculum(variant: RewardVariant) -> Vec<GoalContext> {
    curriculum_goals(&default_layout(), variant)
}

/// Initial distribution convention for [`build_contextual`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Point mass at the start cell.
    Training,
    /// Uniform over all cells.
    Theory,
}

/// Contextual MDP over every goal cell: context `c` is the goal with state index `c`.
pub fn build_contextual(
    layout: &GridLayout,
    variant: RewardVariant,
    mode: InitMode,
    discount: f64,
) -> Result<ContextualMdp> {
    let dynamics = Arc::new(build_dynamics(layout));
    let rewards = (0..layout.n_states())
        .map(|g| {
            reward_table(
                layout,
                &GoalContext {
                    goal: layout.cell(g),
                    variant,
                },
            )
        })
        .collect();
    let init = match mode {
        InitMode::Training => StateDistribution::point_mass(layout.n_states(), layout.state(layout.start()))?,
        InitMode::Theory => StateDistribution::uniform(layout.n_states()),
    };
    ContextualMdp::new(dynamics, rewards, discount, init)
}

/// Dynamics plus the curriculum reward tables, ready for training.
#[derive(Debug, Clone)]
pub struct FourRoomEnv {
    layout: GridLayout,
    variant: RewardVariant,
    dynamics: Arc<Dynamics>,
    goals: Vec<usize>,
    rewards: Vec<Arc<[f64]>>,
}

impl FourRoomEnv {
    pub fn new(layout: GridLayout, variant: RewardVariant) -> Self {
        let dynamics = Arc::new(build_dynamics(&layout));
        let contexts = curriculum_goals(&layout, variant);
        let goals = contexts.iter().map(|c| layout.state(c.goal)).collect();
        let rewards = contexts.iter().map(|c| reward_table(&layout, c)).collect();
        Self {
            layout,
            variant,
            dynamics,
            goals,
            rewards,
        }
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn variant(&self) -> RewardVariant {
        self.variant
    }

    pub fn dynamics(&self) -> &Arc<Dynamics> {
        &self.dynamics
    }

    pub fn n_contexts(&self) -> usize {
        self.goals.len()
    }

    /// State index of the goal of context `k`.
    pub fn goal_state(&self, k: usize) -> usize {
        self.goals[k]
    }

    pub fn reward_table(&self, k: usize) -> &Arc<[f64]> {
        &self.rewards[k]
    }

    pub fn start_state(&self) -> usize {
        self.layout.state(self.layout.start())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_layout_shape() {
        let layout = default_layout();
        assert_eq!((layout.width(), layout.height()), (12, 12));
        assert_eq!(layout.reachable_from((0, 0)).len(), 144);
        let goals = default_curriculum(RewardVariant::Hard);
        assert_eq!(goals.len(), 17);
        assert_eq!(goals[0].goal, (0, 0));
        assert_eq!(goals[16].goal, (8, 8));
        for pair in goals.windows(2) {
            assert_eq!(manhattan(pair[0].goal, pair[1].goal), 1);
        }
    }

    #[test]
    fn dynamics_semantics() {
        let layout = default_layout();
        let dyns = build_dynamics(&layout);
        assert_eq!(dyns.n_actions(), 105);
        assert!(dyns.is_deterministic());
        let origin = layout.state((0, 0));
        // down and left leave the grid
        assert_eq!(dyns.sample_next(origin, 1, 0.5), origin);
        assert_eq!(dyns.sample_next(origin, 2, 0.5), origin);
        assert_eq!(dyns.sample_next(origin, 0, 0.5), layout.state((0, 1)));
        assert_eq!(dyns.sample_next(origin, 3, 0.5), layout.state((1, 0)));
        // wall between (5,0) and (6,0)
        let s = layout.state((5, 0));
        assert_eq!(dyns.sample_next(s, 3, 0.5), s);
        // doorway at y = 2
        assert_eq!(dyns.sample_next(layout.state((5, 2)), 3, 0.5), layout.state((6, 2)));
        for s in 0..144 {
            for a in REWARD_ACTION..N_ACTIONS {
                assert_eq!(dyns.sample_next(s, a, 0.5), s);
            }
        }
    }

    #[test]
    fn reward_formula_values() {
        let easy = GoalContext { goal: (6, 6), variant: RewardVariant::Easy };
        let hard = GoalContext { goal: (6, 6), variant: RewardVariant::Hard };
        assert_eq!(reward_value(&easy, (6, 6), REWARD_ACTION), 1.0);
        assert_eq!(reward_value(&hard, (6, 9), REWARD_ACTION), 0.125);
        assert_eq!(reward_value(&easy, (6, 0), REWARD_ACTION), 0.0);
        assert!((reward_value(&easy, (6, 1), REWARD_ACTION) - 0.9f64.powi(5)).abs() < 1e-15);
        assert_eq!(reward_value(&hard, (6, 2), REWARD_ACTION), 0.0625);
        assert_eq!(reward_value(&hard, (6, 1), REWARD_ACTION), 0.0);
        for a in (0..N_ACTIONS).filter(|&a| a != REWARD_ACTION) {
            assert_eq!(reward_value(&easy, (6, 6), a), 0.0);
        }
    }

    #[test]
    fn reward_support_matches_threshold() {
        let layout = default_layout();
        for variant in [RewardVariant::Easy, RewardVariant::Hard] {
            let ctx = GoalContext { goal: (8, 8), variant };
            let table = reward_table(&layout, &ctx);
            for s in 0..144 {
                let near = manhattan(layout.cell(s), ctx.goal) <= variant.threshold();
                assert_eq!(table[s * N_ACTIONS + REWARD_ACTION] > 0.0, near);
                assert!(table[s * N_ACTIONS..(s + 1) * N_ACTIONS]
                    .iter()
                    .enumerate()
                    .all(|(a, &r)| a == REWARD_ACTION || r == 0.0));
            }
        }
    }

    #[test]
    fn rejects_broken_layouts() {
        let mut file = default_layout().to_file();
        file.curriculum[3] = [5, 5];
        assert!(GridLayout::from_file(&file).is_err());

        let mut file = default_layout().to_file();
        file.walls.push([[0, 0], [2, 0]]);
        assert!(GridLayout::from_file(&file).is_err());

        // seal the bottom-left room
        let mut file = default_layout().to_file();
        file.walls.push([[5, 2], [6, 2]]);
        file.walls.push([[2, 5], [2, 6]]);
        assert!(matches!(GridLayout::from_file(&file), Err(Error::InvalidLayout(_))));
    }

    #[test]
    fn layout_json_round_trip() {
        let layout = default_layout();
        let back = GridLayout::from_json(&layout.to_json().unwrap()).unwrap();
        assert_eq!(back, layout);
        assert_eq!(layout.n_walls(), 20);
    }
}
