//! Point-mass maze with a waypoint-following PD expert.
//!
//! The maze is an occupancy grid of unit cells; cell `(cx, cy)` covers
//! `[cx, cx + 1) x [cy, cy + 1)`. Observations are position and goal only, the
//! velocity stays hidden from the model.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::traj::{ActionToken, Dataset, EnvKind, RtgToken, Split, StateToken, Trajectory};

pub const MAZE_HORIZON: usize = 200;
pub const EVAL_RTG_SCALE: f32 = 1.1;

pub const CANONICAL_MAZE: [&str; 5] = ["#######", "#.....#", "#####.#", "#.....#", "#######"];

/// Physics and expert constants, all overridable from config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MazeParams {
    pub rows: Vec<String>,
    pub dt: f64,
    pub damping: f64,
    pub v_max: f64,
    pub kp: f64,
    pub kd: f64,
    pub noise_variance: f64,
    /// Half-width of the uniform start offset around a cell centre.
    pub start_jitter: f64,
    /// Closest distance the point may get to a wall face.
    pub wall_margin: f64,
}

impl Default for MazeParams {
    fn default() -> Self {
        Self {
            rows: CANONICAL_MAZE.iter().map(|r| r.to_string()).collect(),
            dt: 0.1,
            damping: 0.9,
            v_max: 2.0,
            kp: 4.0,
            kd: 1.0,
            noise_variance: 0.5,
            start_jitter: 0.3,
            wall_margin: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MazeState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub goal: [f64; 2],
}

impl MazeState {
    pub fn observation(&self) -> [f32; 4] {
        [
            self.pos[0] as f32,
            self.pos[1] as f32,
            self.goal[0] as f32,
            self.goal[1] as f32,
        ]
    }

    pub fn goal_distance(&self) -> f64 {
        dist(self.pos, self.goal)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub type Cell = (usize, usize);

#[derive(Clone, Debug)]
pub struct Maze {
    width: usize,
    height: usize,
    free: Vec<bool>,
    pub params: MazeParams,
}

impl Default for Maze {
    fn default() -> Self {
        Self::canonical()
    }
}

impl Maze {
    pub fn canonical() -> Self {
        Self::new(MazeParams::default()).expect("canonical maze is valid")
    }

    pub fn new(params: MazeParams) -> Result<Self> {
        let height = params.rows.len();
        let width = params.rows.first().map_or(0, |r| r.chars().count());
        if height == 0 || width == 0 {
            return Err(Error::Config("maze has no rows".into()));
        }
        let mut free = Vec::with_capacity(width * height);
        for row in &params.rows {
            if row.chars().count() != width {
                return Err(Error::Config("maze rows have different widths".into()));
            }
            for ch in row.chars() {
                match ch {
                    '#' => free.push(false),
                    '.' => free.push(true),
                    other => return Err(Error::Config(format!("unexpected maze character `{other}`"))),
                }
            }
        }
        let maze = Self {
            width,
            height,
            free,
            params,
        };
        let p = &maze.params;
        if !(p.dt > 0.0 && p.v_max > 0.0 && (0.0..=1.0).contains(&p.damping)) {
            return Err(Error::Config("maze physics constants out of range".into()));
        }
        if !(0.0..0.5).contains(&p.wall_margin) || p.start_jitter + p.wall_margin > 0.5 {
            return Err(Error::Config("start jitter and wall margin must fit inside a cell".into()));
        }
        if p.v_max * p.dt >= 1.0 - 2.0 * p.wall_margin {
            return Err(Error::Config("a single step may tunnel through a cell".into()));
        }
        let cells = maze.free_cells();
        if cells.len() < 2 {
            return Err(Error::Config("maze needs at least two free cells".into()));
        }
        // every free cell must reach every other one
        let reach = maze.bfs_from(cells[0]);
        if cells.iter().any(|c| reach[c.1 * width + c.0].is_none()) {
            return Err(Error::Config("maze free space is disconnected".into()));
        }
        Ok(maze)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_free(&self, cx: i64, cy: i64) -> bool {
        cx >= 0
            && cy >= 0
            && (cx as usize) < self.width
            && (cy as usize) < self.height
            && self.free[cy as usize * self.width + cx as usize]
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.free[y * self.width + x])
            .collect()
    }

    pub fn cell_of(&self, pos: [f64; 2]) -> Cell {
        (pos[0].floor().max(0.0) as usize, pos[1].floor().max(0.0) as usize)
    }

    pub fn centre(c: Cell) -> [f64; 2] {
        [c.0 as f64 + 0.5, c.1 as f64 + 0.5]
    }

    pub fn contains_free(&self, pos: [f64; 2]) -> bool {
        pos.iter().all(|v| v.is_finite()) && self.is_free(pos[0].floor() as i64, pos[1].floor() as i64)
    }

    /// Predecessor pointers of a BFS rooted at `from`.
    fn bfs_from(&self, from: Cell) -> Vec<Option<Cell>> {
        let mut parent = vec![None; self.width * self.height];
        parent[from.1 * self.width + from.0] = Some(from);
        let mut queue = VecDeque::from([from]);
        while let Some((x, y)) = queue.pop_front() {
            for (dx, dy) in [(0i64, -1i64), (1, 0), (0, 1), (-1, 0)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if !self.is_free(nx, ny) {
                    continue;
                }
                let idx = ny as usize * self.width + nx as usize;
                if parent[idx].is_none() {
                    parent[idx] = Some((x, y));
                    queue.push_back((nx as usize, ny as usize));
                }
            }
        }
        parent
    }

    /// Shortest cell path from `from` to `to`, both ends included.
    pub fn plan(&self, from: Cell, to: Cell) -> Option<Vec<Cell>> {
        let parent = self.bfs_from(to);
        parent[from.1 * self.width + from.0]?;
        let mut path = vec![from];
        let mut c = from;
        while c != to {
            c = parent[c.1 * self.width + c.0]?;
            path.push(c);
        }
        Some(path)
    }

    /// One integration step. Velocity is damped, accelerated and speed
    /// clamped; each axis is then moved separately and stopped at wall faces.
    pub fn step(&self, s: &MazeState, action: [f64; 2]) -> Result<MazeState> {
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidAction(format!("non-finite maze action {action:?}")));
        }
        let p = &self.params;
        let a = action.map(|v| v.clamp(-1.0, 1.0));
        let mut vel = [
            p.damping * s.vel[0] + p.dt * a[0],
            p.damping * s.vel[1] + p.dt * a[1],
        ];
        let speed = (vel[0] * vel[0] + vel[1] * vel[1]).sqrt();
        if speed > p.v_max {
            vel = vel.map(|v| v * p.v_max / speed);
        }
        let mut pos = s.pos;
        for axis in 0..2 {
            let moved = pos[axis] + p.dt * vel[axis];
            let other = pos[1 - axis].floor() as i64;
            let probe = |v: f64| -> bool {
                let c = v.floor() as i64;
                if axis == 0 {
                    self.is_free(c, other)
                } else {
                    self.is_free(other, c)
                }
            };
            let mut next = moved;
            if vel[axis] > 0.0 && !probe(moved + p.wall_margin) {
                next = (moved + p.wall_margin).floor() - p.wall_margin;
                vel[axis] = 0.0;
            } else if vel[axis] < 0.0 && !probe(moved - p.wall_margin) {
                next = (moved - p.wall_margin).floor() + 1.0 + p.wall_margin;
                vel[axis] = 0.0;
            }
            pos[axis] = next;
        }
        Ok(MazeState {
            pos,
            vel,
            goal: s.goal,
        })
    }

    /// Progress towards the goal: straight-line distance before minus after.
    pub fn reward(prev: &MazeState, next: &MazeState) -> f64 {
        prev.goal_distance() - next.goal_distance()
    }

    pub fn random_start(&self, rng: &mut impl Rng) -> MazeState {
        let cells = self.free_cells();
        let start = cells[rng.random_range(0..cells.len())];
        let goal = loop {
            let g = cells[rng.random_range(0..cells.len())];
            if g != start {
                break g;
            }
        };
        let j = self.params.start_jitter;
        let c = Self::centre(start);
        let jitter = |rng: &mut dyn rand::RngCore| {
            if j > 0.0 {
                rng.random_range(-j..j)
            } else {
                0.0
            }
        };
        let pos = [c[0] + jitter(rng), c[1] + jitter(rng)];
        MazeState {
            pos,
            vel: [0.0, 0.0],
            goal: Self::centre(goal),
        }
    }
}

/// PD controller tracking the next cell of a cached BFS plan. The plan is
/// advanced when the waypoint cell is entered and rebuilt when the agent
/// leaves it, so actions depend on history and not only on the current state.
#[derive(Clone, Debug, Default)]
pub struct PdExpert {
    plan: Vec<Cell>,
    next: usize,
    noise: bool,
}

impl PdExpert {
    pub fn new(noise: bool) -> Self {
        Self {
            plan: Vec::new(),
            next: 0,
            noise,
        }
    }

    pub fn waypoint(&mut self, maze: &Maze, s: &MazeState) -> [f64; 2] {
        let here = maze.cell_of(s.pos);
        let goal_cell = maze.cell_of(s.goal);
        if here == goal_cell {
            return s.goal;
        }
        let on_plan = self.plan.get(self.next.wrapping_sub(1)) == Some(&here)
            || self.plan.get(self.next) == Some(&here);
        if !on_plan || self.plan.last() != Some(&goal_cell) {
            self.plan = maze.plan(here, goal_cell).unwrap_or_else(|| vec![here]);
            self.next = 1;
        }
        if self.plan.get(self.next) == Some(&here) {
            self.next += 1;
        }
        match self.plan.get(self.next) {
            Some(&c) if c == goal_cell => s.goal,
            Some(&c) => Maze::centre(c),
            None => s.goal,
        }
    }

    pub fn act(&mut self, maze: &Maze, s: &MazeState, rng: &mut impl Rng) -> [f64; 2] {
        let w = self.waypoint(maze, s);
        let p = &maze.params;
        let mut a = [
            p.kp * (w[0] - s.pos[0]) - p.kd * s.vel[0],
            p.kp * (w[1] - s.pos[1]) - p.kd * s.vel[1],
        ];
        if self.noise && p.noise_variance > 0.0 {
            let n = Normal::new(0.0, p.noise_variance.sqrt()).expect("positive variance");
            for v in &mut a {
                *v += n.sample(rng);
            }
        }
        a.map(|v| v.clamp(-1.0, 1.0))
    }
}

#[derive(Clone, Debug, Default)]
pub struct MazeEnv {
    pub maze: Maze,
    pub horizon: usize,
}

impl MazeEnv {
    pub fn new(maze: Maze) -> Self {
        Self {
            maze,
            horizon: MAZE_HORIZON,
        }
    }

    pub fn canonical() -> Self {
        Self::new(Maze::canonical())
    }
}

impl Environment for MazeEnv {
    type State = MazeState;

    fn kind(&self) -> EnvKind {
        EnvKind::Maze
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&self, rng: &mut rng::Rng) -> MazeState {
        self.maze.random_start(rng)
    }

    fn observe(&self, s: &MazeState) -> StateToken {
        StateToken::Vector(s.observation())
    }

    fn step(&self, s: &MazeState, action: &ActionToken) -> Result<(MazeState, f32)> {
        let a = action
            .vector()
            .ok_or_else(|| Error::InvalidAction("discrete action in the maze".into()))?;
        let next = self.maze.step(s, [a[0] as f64, a[1] as f64])?;
        Ok((next, Maze::reward(s, &next) as f32))
    }
}

pub fn expert_trajectory(
    maze: &Maze,
    start: MazeState,
    horizon: usize,
    noise: bool,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let mut expert = PdExpert::new(noise);
    let mut states = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut s = start;
    for _ in 0..horizon {
        let a = expert.act(maze, &s, rng);
        let next = maze.step(&s, a)?;
        states.push(StateToken::Vector(s.observation()));
        actions.push(ActionToken::Vector([a[0] as f32, a[1] as f32]));
        rewards.push(Maze::reward(&s, &next) as f32);
        s = next;
    }
    Trajectory::new(states, actions, rewards)
}

/// Noisy expert rollouts; the first `n_train` are the training split, the
/// remaining `n_validation` are held out.
pub fn generate_maze_dataset(
    maze: &Maze,
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
        let start = maze.random_start(&mut r);
        trajectories.push(expert_trajectory(maze, start, horizon, true, &mut r)?);
        splits.push(split);
    }
    Dataset::new(EnvKind::Maze, trajectories, splits, seed)
}

/// Return-to-go used for reward-conditioned evaluation: the return of the
/// training trajectory whose first observation is closest, scaled by 1.1.
/// Ties go to the lowest index.
pub fn select_eval_rtg(initial_obs: &[f32; 4], dataset: &Dataset) -> Result<RtgToken> {
    let mut best: Option<(f64, &Trajectory)> = None;
    for traj in dataset.split(Split::Train) {
        let obs = traj.states()[0]
            .vector()
            .ok_or_else(|| Error::EnvMismatch {
                expected: "maze".into(),
                found: dataset.env.to_string(),
            })?;
        let d: f64 = obs
            .iter()
            .zip(initial_obs)
            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
            .sum();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, traj));
        }
    }
    let (_, traj) = best.ok_or(Error::EmptyDataset)?;
    Ok(RtgToken {
        rtg: EVAL_RTG_SCALE * traj.total_return(),
        remaining: traj.len() as u32,
    })
}
