//! The 4x4 locked-door gridworld.
//!
//! Cells are indexed `y * 4 + x` with `x` to the right and `y` downwards. The
//! agent must pick up a key in the spawn region, pass the door and reach the
//! goal. The key token tracks the agent once it has been picked up.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::traj::{ActionToken, Dataset, EnvKind, Split, StateToken, Trajectory};

pub const GRID_SIZE: usize = 4;
pub const NUM_CELLS: usize = GRID_SIZE * GRID_SIZE;
pub const NUM_ACTIONS: usize = 4;
pub const GRID_HORIZON: usize = 10;

const UNREACHABLE: u8 = u8::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Up = 0,
    Right = 1,
    Down = 2,
    Left = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Right, Action::Down, Action::Left];

    pub fn from_index(i: u8) -> Result<Self> {
        Self::ALL
            .get(i as usize)
            .copied()
            .ok_or_else(|| Error::InvalidAction(format!("gridworld action index {i}")))
    }

    fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, -1),
            Action::Right => (1, 0),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridState {
    pub agent: u8,
    pub key: u8,
}

impl GridState {
    pub const fn new(agent: u8, key: u8) -> Self {
        Self { agent, key }
    }

    pub fn has_key(&self) -> bool {
        self.agent == self.key
    }
}

pub fn cell(x: usize, y: usize) -> u8 {
    (y * GRID_SIZE + x) as u8
}

pub fn coords(c: u8) -> (usize, usize) {
    (c as usize % GRID_SIZE, c as usize / GRID_SIZE)
}

/// Wall/door/goal placement as written in experiment configs, `[x, y]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    pub walls: Vec<[usize; 2]>,
    pub door: [usize; 2],
    pub goal: [usize; 2],
}

impl Default for LayoutSpec {
    fn default() -> Self {
        Self {
            walls: vec![[2, 0], [2, 2], [2, 3]],
            door: [2, 1],
            goal: [3, 1],
        }
    }
}

#[derive(Clone, Debug)]
pub struct GridLayout {
    walls: [bool; NUM_CELLS],
    door: u8,
    goal: u8,
    spawn: Vec<u8>,
    // [door_open][target][cell]
    dist: Box<[[[u8; NUM_CELLS]; NUM_CELLS]; 2]>,
}

impl Default for GridLayout {
    fn default() -> Self {
        Self::canonical()
    }
}

impl GridLayout {
    pub fn canonical() -> Self {
        Self::from_spec(&LayoutSpec::default()).expect("canonical layout is valid")
    }

    pub fn from_spec(spec: &LayoutSpec) -> Result<Self> {
        let in_grid = |p: &[usize; 2]| p[0] < GRID_SIZE && p[1] < GRID_SIZE;
        if !spec.walls.iter().all(in_grid) || !in_grid(&spec.door) || !in_grid(&spec.goal) {
            return Err(Error::Config("layout cell outside the 4x4 grid".into()));
        }
        let mut walls = [false; NUM_CELLS];
        for w in &spec.walls {
            walls[cell(w[0], w[1]) as usize] = true;
        }
        let door = cell(spec.door[0], spec.door[1]);
        let goal = cell(spec.goal[0], spec.goal[1]);
        if walls[door as usize] || walls[goal as usize] || door == goal {
            return Err(Error::Config("door and goal must be distinct free cells".into()));
        }
        let mut dist = Box::new([[[UNREACHABLE; NUM_CELLS]; NUM_CELLS]; 2]);
        for open in [false, true] {
            for target in 0..NUM_CELLS as u8 {
                dist[open as usize][target as usize] = bfs(&walls, door, open, target);
            }
        }
        let closed_from_goal = &dist[0][goal as usize];
        let spawn: Vec<u8> = (0..NUM_CELLS as u8)
            .filter(|&c| {
                !walls[c as usize]
                    && c != door
                    && c != goal
                    && closed_from_goal[c as usize] == UNREACHABLE
            })
            .collect();
        if spawn.len() < 2 {
            return Err(Error::Config(
                "layout needs at least two spawn cells separated from the goal by the door".into(),
            ));
        }
        let open_from_goal = &dist[1][goal as usize];
        if spawn.iter().any(|&c| open_from_goal[c as usize] == UNREACHABLE) {
            return Err(Error::Config("goal unreachable from the spawn region with the door open".into()));
        }
        Ok(Self {
            walls,
            door,
            goal,
            spawn,
            dist,
        })
    }

    pub fn door(&self) -> u8 {
        self.door
    }

    pub fn goal(&self) -> u8 {
        self.goal
    }

    pub fn is_wall(&self, c: u8) -> bool {
        self.walls[c as usize]
    }

    /// Cells agent and key spawn in: the region cut off from the goal by the door.
    pub fn spawn_cells(&self) -> &[u8] {
        &self.spawn
    }

    pub fn in_spawn(&self, c: u8) -> bool {
        self.spawn.contains(&c)
    }

    /// BFS distance between cells; the door is passable only when `door_open`.
    pub fn distance(&self, from: u8, to: u8, door_open: bool) -> Option<u32> {
        let d = self.dist[door_open as usize][to as usize][from as usize];
        (d != UNREACHABLE).then_some(d as u32)
    }

    /// States the dynamics can produce from a valid spawn: either the key is
    /// held, or agent and key are distinct spawn cells.
    pub fn is_reachable(&self, s: GridState) -> bool {
        if (s.agent as usize) >= NUM_CELLS || (s.key as usize) >= NUM_CELLS {
            return false;
        }
        if self.is_wall(s.agent) {
            return false;
        }
        if s.has_key() {
            true
        } else {
            self.in_spawn(s.agent) && self.in_spawn(s.key)
        }
    }

    pub fn reachable_states(&self) -> Vec<GridState> {
        (0..NUM_CELLS as u8)
            .flat_map(|a| (0..NUM_CELLS as u8).map(move |k| GridState::new(a, k)))
            .filter(|s| self.is_reachable(*s))
            .collect()
    }

    pub fn step(&self, s: GridState, action: Action) -> GridState {
        let (x, y) = coords(s.agent);
        let (dx, dy) = action.delta();
        let (nx, ny) = (x as i32 + dx, y as i32 + dy);
        if nx < 0 || ny < 0 || nx >= GRID_SIZE as i32 || ny >= GRID_SIZE as i32 {
            return s;
        }
        let target = cell(nx as usize, ny as usize);
        if self.is_wall(target) || (target == self.door && !s.has_key()) {
            return s;
        }
        let holding = s.has_key() || target == s.key;
        GridState {
            agent: target,
            key: if holding { target } else { s.key },
        }
    }

    /// Remaining path length to the goal, routed through the key when it is
    /// not yet held.
    pub fn task_distance(&self, s: GridState) -> Option<u32> {
        if s.has_key() {
            self.distance(s.agent, self.goal, true)
        } else {
            let to_key = self.distance(s.agent, s.key, false)?;
            let key_to_goal = self.distance(s.key, self.goal, true)?;
            Some(to_key + key_to_goal)
        }
    }

    /// +1 when a transition shortens the task distance, -1 when it lengthens
    /// it, 0 otherwise.
    pub fn reward(&self, prev: GridState, next: GridState) -> Result<i32> {
        let d = |s: GridState| {
            self.task_distance(s)
                .ok_or_else(|| Error::InvalidState(format!("{s:?} has no path to the goal")))
        };
        let (dp, dn) = (d(prev)?, d(next)?);
        Ok((dp as i64 - dn as i64).signum() as i32)
    }

    /// Distance to the expert's current subgoal (the key, then the goal).
    pub fn subgoal_distance(&self, s: GridState) -> Option<u32> {
        if s.has_key() {
            self.distance(s.agent, self.goal, true)
        } else {
            self.distance(s.agent, s.key, false)
        }
    }

    /// The noisy-rational expert's action distribution, `p(a) ∝ exp(C(a))`.
    pub fn expert_probs(&self, s: GridState) -> [f64; NUM_ACTIONS] {
        let here = self.subgoal_distance(s);
        let mut w = [0.0f64; NUM_ACTIONS];
        for (i, a) in Action::ALL.iter().enumerate() {
            let next = self.step(s, *a);
            let score = if next.has_key() && !s.has_key() {
                // picking up the key completes the subgoal
                1.0
            } else {
                match (here, self.subgoal_distance(next)) {
                    (Some(d0), Some(d1)) => (d0 as i64 - d1 as i64).signum() as f64,
                    _ => 0.0,
                }
            };
            w[i] = score.exp();
        }
        let z: f64 = w.iter().sum();
        w.map(|x| x / z)
    }

    pub fn expert_action(&self, s: GridState, rng: &mut impl Rng) -> Action {
        let p = self.expert_probs(s);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return Action::ALL[i];
            }
        }
        Action::ALL[NUM_ACTIONS - 1]
    }

    pub fn random_start(&self, rng: &mut impl Rng) -> GridState {
        let agent = self.spawn[rng.random_range(0..self.spawn.len())];
        let key = loop {
            let k = self.spawn[rng.random_range(0..self.spawn.len())];
            if k != agent {
                break k;
            }
        };
        GridState::new(agent, key)
    }
}

fn bfs(walls: &[bool; NUM_CELLS], door: u8, door_open: bool, target: u8) -> [u8; NUM_CELLS] {
    let mut dist = [UNREACHABLE; NUM_CELLS];
    let passable = |c: u8| !walls[c as usize] && (door_open || c != door);
    if walls[target as usize] {
        return dist;
    }
    dist[target as usize] = 0;
    let mut queue = VecDeque::from([target]);
    while let Some(c) = queue.pop_front() {
        let (x, y) = coords(c);
        let here = dist[c as usize];
        // the target itself is always enterable, other door crossings need the door open
        if c != target && !passable(c) {
            continue;
        }
        for (dx, dy) in [(0i32, -1i32), (1, 0), (0, 1), (-1, 0)] {
            let (nx, ny) = (x as i32 + dx, y as i32 + dy);
            if nx < 0 || ny < 0 || nx >= GRID_SIZE as i32 || ny >= GRID_SIZE as i32 {
                continue;
            }
            let n = cell(nx as usize, ny as usize);
            if walls[n as usize] || dist[n as usize] != UNREACHABLE {
                continue;
            }
            dist[n as usize] = here + 1;
            if passable(n) {
                queue.push_back(n);
            }
        }
    }
    dist
}

#[derive(Clone, Debug, Default)]
pub struct GridEnv {
    pub layout: GridLayout,
    pub horizon: usize,
}

impl GridEnv {
    pub fn new(layout: GridLayout) -> Self {
        Self {
            layout,
            horizon: GRID_HORIZON,
        }
    }

    pub fn canonical() -> Self {
        Self::new(GridLayout::canonical())
    }
}

impl Environment for GridEnv {
    type State = GridState;

    fn kind(&self) -> EnvKind {
        EnvKind::Gridworld
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&self, rng: &mut rng::Rng) -> GridState {
        self.layout.random_start(rng)
    }

    fn observe(&self, s: &GridState) -> StateToken {
        StateToken::Grid(*s)
    }

    fn step(&self, s: &GridState, action: &ActionToken) -> Result<(GridState, f32)> {
        let a = action
            .grid()
            .ok_or_else(|| Error::InvalidAction("continuous action in the gridworld".into()))?;
        let next = self.layout.step(*s, Action::from_index(a)?);
        let r = self.layout.reward(*s, next)?;
        Ok((next, r as f32))
    }
}

/// Rolls out the noisy-rational expert from `start` for `horizon` steps.
pub fn expert_trajectory(
    layout: &GridLayout,
    start: GridState,
    horizon: usize,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut s = start;
    for _ in 0..horizon {
        let a = layout.expert_action(s, rng);
        let next = layout.step(s, a);
        states.push(StateToken::Grid(s));
        actions.push(ActionToken::Grid(a as u8));
        rewards.push(layout.reward(s, next)? as f32);
        s = next;
    }
    Trajectory::new(states, actions, rewards)
}

/// `n_train` training and `n_validation` held-out expert trajectories.
///
/// Every trajectory has its own random stream; validation streams are
/// disjoint from training streams.
pub fn generate_grid_dataset(
    layout: &GridLayout,
    n_train: usize,
    n_validation: usize,
    horizon: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_train == 0 || horizon == 0 {
        return Err(Error::Config("need at least one trajectory of positive length".into()));
    }
    let mut trajectories = Vec::with_capacity(n_train + n_validation);
    let mut splits = Vec::with_capacity(n_train + n_validation);
    let streams = (0..n_train as u64)
        .map(|i| (i, Split::Train))
        .chain((0..n_validation as u64).map(|i| (streams::VALIDATION_BASE + i, Split::Validation)));
    for (stream, split) in streams {
        let mut r = rng::stream(seed, stream);
        let start = layout.random_start(&mut r);
        trajectories.push(expert_trajectory(layout, start, horizon, &mut r)?);
        splits.push(split);
    }
    Dataset::new(EnvKind::Gridworld, trajectories, splits, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_layout_shape() {
        let l = GridLayout::canonical();
        assert_eq!(l.door(), cell(2, 1));
        assert_eq!(l.goal(), cell(3, 1));
        let mut spawn = l.spawn_cells().to_vec();
        spawn.sort();
        let expected: Vec<u8> = (0..4).flat_map(|y| [cell(0, y), cell(1, y)]).collect::<Vec<_>>();
        let mut expected = expected;
        expected.sort();
        assert_eq!(spawn, expected);
    }

    #[test]
    fn blocked_by_wall_and_edge() {
        let l = GridLayout::canonical();
        // (1,0) moving right hits the wall at (2,0)
        let s = GridState::new(cell(1, 0), cell(0, 3));
        assert_eq!(l.step(s, Action::Right), s);
        // top edge
        assert_eq!(l.step(s, Action::Up), s);
    }

    #[test]
    fn door_needs_key() {
        let l = GridLayout::canonical();
        let s = GridState::new(cell(1, 1), cell(0, 0));
        assert_eq!(l.step(s, Action::Right), s);
        let held = GridState::new(cell(1, 1), cell(1, 1));
        assert_eq!(l.step(held, Action::Right), GridState::new(cell(2, 1), cell(2, 1)));
    }

    #[test]
    fn pickup_rule() {
        let l = GridLayout::canonical();
        let s = GridState::new(cell(0, 2), cell(1, 2));
        let n = l.step(s, Action::Right);
        assert_eq!(n.agent, cell(1, 2));
        assert!(n.has_key());
        // key keeps following the agent
        let n2 = l.step(n, Action::Up);
        assert_eq!(n2, GridState::new(cell(1, 1), cell(1, 1)));
    }

    #[test]
    fn reward_examples() {
        let l = GridLayout::canonical();
        let s = GridState::new(cell(1, 0), cell(0, 3));
        assert_eq!(l.reward(s, l.step(s, Action::Right)).unwrap(), 0);
        let before_goal = GridState::new(cell(2, 1), cell(2, 1));
        let at_goal = l.step(before_goal, Action::Right);
        assert_eq!(at_goal.agent, l.goal());
        assert_eq!(l.reward(before_goal, at_goal).unwrap(), 1);
        let below_goal = GridState::new(cell(3, 2), cell(3, 2));
        assert_eq!(l.reward(below_goal, l.step(below_goal, Action::Up)).unwrap(), 1);
    }

    #[test]
    fn expert_probabilities() {
        let l = GridLayout::canonical();
        let e = std::f64::consts::E;
        // key held at the door: right improves, left worsens, up/down are walls (neutral)
        let p = l.expert_probs(GridState::new(cell(2, 1), cell(2, 1)));
        let z = e + 2.0 + 1.0 / e;
        assert!((p[Action::Right as usize] - e / z).abs() < 1e-12);
        assert!((p[Action::Up as usize] - 1.0 / z).abs() < 1e-12);
        assert!((p[Action::Left as usize] - (1.0 / e) / z).abs() < 1e-12);

        // (3,0) with key: down improves, up is edge (neutral), left is wall (neutral), right edge
        let p = l.expert_probs(GridState::new(cell(3, 0), cell(3, 0)));
        let best = p.iter().cloned().fold(0.0, f64::max);
        assert_eq!(best, p[Action::Down as usize]);
    }

    #[test]
    fn improving_actions_have_highest_probability() {
        let l = GridLayout::canonical();
        for s in l.reachable_states() {
            let p = l.expert_probs(s);
            let d0 = l.subgoal_distance(s).unwrap();
            for a in Action::ALL {
                let n = l.step(s, a);
                let improves = (n.has_key() && !s.has_key())
                    || l.subgoal_distance(n).is_some_and(|d1| d1 < d0);
                if improves {
                    assert!(p.iter().all(|q| *q <= p[a as usize] + 1e-15));
                }
            }
        }
    }

    #[test]
    fn dataset_determinism_and_replay() {
        let l = GridLayout::canonical();
        let a = generate_grid_dataset(&l, 40, 10, 10, 0).unwrap();
        let b = generate_grid_dataset(&l, 40, 10, 10, 0).unwrap();
        assert_eq!(a, b);
        for traj in a.trajectories() {
            assert_eq!(traj.len(), 10);
            let s0 = traj.states()[0].grid().unwrap();
            assert!(l.in_spawn(s0.agent) && l.in_spawn(s0.key) && s0.agent != s0.key);
            for t in 0..traj.len() - 1 {
                let s = traj.states()[t].grid().unwrap();
                let act = Action::from_index(traj.actions()[t].grid().unwrap()).unwrap();
                let n = l.step(s, act);
                assert_eq!(n, traj.states()[t + 1].grid().unwrap());
                assert_eq!(l.reward(s, n).unwrap() as f32, traj.rewards()[t]);
            }
            assert!(traj.total_return().abs() <= 10.0);
        }
    }

    #[test]
    fn bad_layouts_rejected() {
        let spec = LayoutSpec {
            walls: vec![[2, 0], [2, 2], [2, 3], [3, 0], [3, 2]],
            door: [2, 1],
            goal: [2, 1],
        };
        assert!(GridLayout::from_spec(&spec).is_err());
        let no_door_wall = LayoutSpec {
            walls: vec![],
            door: [2, 1],
            goal: [3, 1],
        };
        // without walls the spawn region is not separated from the goal
        assert!(GridLayout::from_spec(&no_door_wall).is_err());
    }
}
