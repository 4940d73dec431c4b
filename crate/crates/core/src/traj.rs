//! Trajectories, return-to-go, windows and the `.traj` dataset format.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::doorkey::{GridState, NUM_ACTIONS, NUM_CELLS};
use crate::error::{Error, Result};

pub const MAZE_OBS_DIM: usize = 4;
pub const MAZE_ACTION_DIM: usize = 2;

const DATASET_MAGIC: &str = "trajmask-dataset";
const DATASET_VERSION: u32 = 1;
const HEADER_END: &str = "---";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Gridworld,
    Maze,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Gridworld => "gridworld",
            EnvKind::Maze => "maze",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gridworld" => Ok(EnvKind::Gridworld),
            "maze" => Ok(EnvKind::Maze),
            other => Err(Error::Format(format!("unknown environment `{other}`"))),
        }
    }

    fn tag(self) -> u32 {
        match self {
            EnvKind::Gridworld => 0,
            EnvKind::Maze => 1,
        }
    }

    /// Width of the continuous state vector (0 for discrete states).
    pub fn continuous_state_dim(self) -> usize {
        match self {
            EnvKind::Gridworld => 0,
            EnvKind::Maze => MAZE_OBS_DIM,
        }
    }

    pub fn continuous_action_dim(self) -> usize {
        match self {
            EnvKind::Gridworld => 0,
            EnvKind::Maze => MAZE_ACTION_DIM,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StateToken {
    Grid(GridState),
    /// Maze observation: agent position followed by goal position.
    Vector([f32; MAZE_OBS_DIM]),
}

impl StateToken {
    pub fn env(&self) -> EnvKind {
        match self {
            StateToken::Grid(_) => EnvKind::Gridworld,
            StateToken::Vector(_) => EnvKind::Maze,
        }
    }

    pub fn grid(&self) -> Option<GridState> {
        match self {
            StateToken::Grid(g) => Some(*g),
            StateToken::Vector(_) => None,
        }
    }

    pub fn vector(&self) -> Option<&[f32; MAZE_OBS_DIM]> {
        match self {
            StateToken::Vector(v) => Some(v),
            StateToken::Grid(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActionToken {
    Grid(u8),
    Vector([f32; MAZE_ACTION_DIM]),
}

impl ActionToken {
    pub fn env(&self) -> EnvKind {
        match self {
            ActionToken::Grid(_) => EnvKind::Gridworld,
            ActionToken::Vector(_) => EnvKind::Maze,
        }
    }

    pub fn grid(&self) -> Option<u8> {
        match self {
            ActionToken::Grid(a) => Some(*a),
            ActionToken::Vector(_) => None,
        }
    }

    pub fn vector(&self) -> Option<&[f32; MAZE_ACTION_DIM]> {
        match self {
            ActionToken::Vector(v) => Some(v),
            ActionToken::Grid(_) => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ActionToken::Grid(a) if (*a as usize) < NUM_ACTIONS => Ok(()),
            ActionToken::Grid(a) => Err(Error::InvalidTrajectory(format!(
                "gridworld action index {a} outside 0..{NUM_ACTIONS}"
            ))),
            ActionToken::Vector(v) => {
                if v.iter().all(|c| c.is_finite() && (-1.0..=1.0).contains(c)) {
                    Ok(())
                } else {
                    Err(Error::InvalidTrajectory(format!(
                        "maze action {v:?} outside [-1, 1]^2"
                    )))
                }
            }
        }
    }
}

/// The return-to-go property token fed at the first position of a window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RtgToken {
    pub rtg: f32,
    /// Timesteps left in the episode, counted from the window start.
    pub remaining: u32,
}

/// Suffix sums of `rewards`, computed through the recurrence
/// `rtg[t] = rewards[t] + rtg[t + 1]` so the recurrence holds exactly.
pub fn compute_rtg(rewards: &[f32]) -> Result<Vec<f32>> {
    if rewards.is_empty() {
        return Err(Error::InvalidTrajectory("empty reward sequence".into()));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::InvalidTrajectory(format!("non-finite reward {r}")));
    }
    let mut out = vec![0.0f32; rewards.len()];
    let mut acc = 0.0f32;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = if t + 1 == rewards.len() { *r } else { r + acc };
        out[t] = acc;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    states: Vec<StateToken>,
    actions: Vec<ActionToken>,
    rewards: Vec<f32>,
    rtg: Vec<f32>,
}

impl Trajectory {
    pub fn new(
        states: Vec<StateToken>,
        actions: Vec<ActionToken>,
        rewards: Vec<f32>,
    ) -> Result<Self> {
        let t = states.len();
        if t == 0 {
            return Err(Error::InvalidTrajectory("zero-length trajectory".into()));
        }
        if actions.len() != t || rewards.len() != t {
            return Err(Error::InvalidTrajectory(format!(
                "length mismatch: {} states, {} actions, {} rewards",
                t,
                actions.len(),
                rewards.len()
            )));
        }
        let env = states[0].env();
        if states.iter().any(|s| s.env() != env) || actions.iter().any(|a| a.env() != env) {
            return Err(Error::InvalidTrajectory("mixed state/action modalities".into()));
        }
        for s in &states {
            match s {
                StateToken::Grid(g) if (g.agent as usize) >= NUM_CELLS || (g.key as usize) >= NUM_CELLS => {
                    return Err(Error::InvalidTrajectory(format!("grid state {g:?} off the grid")))
                }
                StateToken::Vector(v) if v.iter().any(|x| !x.is_finite()) => {
                    return Err(Error::InvalidTrajectory("non-finite observation".into()))
                }
                _ => {}
            }
        }
        for a in &actions {
            a.validate()?;
        }
        let rtg = compute_rtg(&rewards)?;
        Ok(Self {
            states,
            actions,
            rewards,
            rtg,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn env(&self) -> EnvKind {
        self.states[0].env()
    }

    pub fn states(&self) -> &[StateToken] {
        &self.states
    }

    pub fn actions(&self) -> &[ActionToken] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f32] {
        &self.rewards
    }

    pub fn returns_to_go(&self) -> &[f32] {
        &self.rtg
    }

    /// Undiscounted episode return.
    pub fn total_return(&self) -> f32 {
        self.rtg[0]
    }

    pub fn slice_window(&self, start: usize, k: usize) -> Result<Window<'_>> {
        if k == 0 || start + k > self.len() {
            return Err(Error::WindowOutOfRange {
                start,
                len: k,
                horizon: self.len(),
            });
        }
        Ok(Window {
            start,
            states: &self.states[start..start + k],
            actions: &self.actions[start..start + k],
            rewards: &self.rewards[start..start + k],
            rtg: RtgToken {
                rtg: self.rtg[start],
                remaining: (self.len() - start) as u32,
            },
        })
    }
}

/// A borrowed snippet of `k` consecutive timesteps.
#[derive(Clone, Copy, Debug)]
pub struct Window<'a> {
    pub start: usize,
    pub states: &'a [StateToken],
    pub actions: &'a [ActionToken],
    pub rewards: &'a [f32],
    pub rtg: RtgToken,
}

impl Window<'_> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

/// Per-dimension standardization constants computed from the train split.
///
/// Discrete modalities carry empty vectors (identity). The return-to-go is
/// standardized for both environments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub state_mean: Vec<f32>,
    pub state_std: Vec<f32>,
    pub action_mean: Vec<f32>,
    pub action_std: Vec<f32>,
    pub rtg_mean: f32,
    pub rtg_std: f32,
}

impl Normalization {
    pub fn identity(env: EnvKind) -> Self {
        let s = env.continuous_state_dim();
        let a = env.continuous_action_dim();
        Self {
            state_mean: vec![0.0; s],
            state_std: vec![1.0; s],
            action_mean: vec![0.0; a],
            action_std: vec![1.0; a],
            rtg_mean: 0.0,
            rtg_std: 1.0,
        }
    }

    pub fn fit<'a>(env: EnvKind, trajectories: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let s_dim = env.continuous_state_dim();
        let a_dim = env.continuous_action_dim();
        let mut s_acc = vec![Moments::default(); s_dim];
        let mut a_acc = vec![Moments::default(); a_dim];
        let mut r_acc = Moments::default();
        let mut any = false;
        for traj in trajectories {
            any = true;
            for s in traj.states() {
                if let StateToken::Vector(v) = s {
                    for (m, x) in s_acc.iter_mut().zip(v) {
                        m.push(*x as f64);
                    }
                }
            }
            for a in traj.actions() {
                if let ActionToken::Vector(v) = a {
                    for (m, x) in a_acc.iter_mut().zip(v) {
                        m.push(*x as f64);
                    }
                }
            }
            for r in traj.returns_to_go() {
                r_acc.push(*r as f64);
            }
        }
        if !any {
            return Self::identity(env);
        }
        let (rtg_mean, rtg_std) = r_acc.finish();
        Self {
            state_mean: s_acc.iter().map(|m| m.finish().0).collect(),
            state_std: s_acc.iter().map(|m| m.finish().1).collect(),
            action_mean: a_acc.iter().map(|m| m.finish().0).collect(),
            action_std: a_acc.iter().map(|m| m.finish().1).collect(),
            rtg_mean,
            rtg_std,
        }
    }

    pub fn normalize_rtg(&self, rtg: f32) -> f32 {
        (rtg - self.rtg_mean) / self.rtg_std
    }

    pub fn normalize_state(&self, v: &[f32], out: &mut [f32]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (v[i] - self.state_mean[i]) / self.state_std[i];
        }
    }

    pub fn normalize_action(&self, v: &[f32], out: &mut [f32]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (v[i] - self.action_mean[i]) / self.action_std[i];
        }
    }

    pub fn denormalize_action(&self, v: &[f32], out: &mut [f32]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = v[i] * self.action_std[i] + self.action_mean[i];
        }
    }

    pub fn denormalize_state(&self, v: &[f32], out: &mut [f32]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = v[i] * self.state_std[i] + self.state_mean[i];
        }
    }
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn finish(&self) -> (f32, f32) {
        if self.n == 0.0 {
            return (0.0, 1.0);
        }
        let mean = self.sum / self.n;
        let var = (self.sum_sq / self.n - mean * mean).max(0.0);
        let std = var.sqrt();
        (mean as f32, if std < 1e-6 { 1.0 } else { std as f32 })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub env: EnvKind,
    pub seed: u64,
    trajectories: Vec<Trajectory>,
    splits: Vec<Split>,
    normalization: Normalization,
}

impl Dataset {
    /// Builds a dataset and fits normalization on its train split.
    pub fn new(
        env: EnvKind,
        trajectories: Vec<Trajectory>,
        splits: Vec<Split>,
        seed: u64,
    ) -> Result<Self> {
        Self::check(env, &trajectories, &splits)?;
        let normalization = Normalization::fit(
            env,
            trajectories
                .iter()
                .zip(&splits)
                .filter(|(_, s)| **s == Split::Train)
                .map(|(t, _)| t),
        );
        Ok(Self {
            env,
            seed,
            trajectories,
            splits,
            normalization,
        })
    }

    fn check(env: EnvKind, trajectories: &[Trajectory], splits: &[Split]) -> Result<()> {
        if trajectories.len() != splits.len() {
            return Err(Error::InvalidTrajectory(format!(
                "{} trajectories but {} split labels",
                trajectories.len(),
                splits.len()
            )));
        }
        if let Some(first) = trajectories.first() {
            let horizon = first.len();
            for t in trajectories {
                if t.env() != env {
                    return Err(Error::EnvMismatch {
                        expected: env.to_string(),
                        found: t.env().to_string(),
                    });
                }
                if t.len() != horizon {
                    return Err(Error::InvalidTrajectory(format!(
                        "variable episode lengths ({} vs {horizon})",
                        t.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn horizon(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::len)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn split(&self, which: Split) -> impl Iterator<Item = &Trajectory> + '_ {
        self.trajectories
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == which)
            .map(|(t, _)| t)
    }

    pub fn train(&self) -> Vec<&Trajectory> {
        self.split(Split::Train).collect()
    }

    pub fn validation(&self) -> Vec<&Trajectory> {
        self.split(Split::Validation).collect()
    }

    /// A copy keeping only the first `n` train trajectories (validation kept).
    pub fn subsample_train(&self, n: usize) -> Result<Self> {
        let mut kept = 0;
        let mut trajectories = Vec::new();
        let mut splits = Vec::new();
        for (t, s) in self.trajectories.iter().zip(&self.splits) {
            if *s == Split::Train {
                if kept == n {
                    continue;
                }
                kept += 1;
            }
            trajectories.push(t.clone());
            splits.push(*s);
        }
        Dataset::new(self.env, trajectories, splits, self.seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let n = &self.normalization;
        let n_train = self.splits.iter().filter(|s| **s == Split::Train).count();
        writeln!(w, "{DATASET_MAGIC} {DATASET_VERSION}")?;
        writeln!(w, "env = {}", self.env)?;
        writeln!(w, "seed = {}", self.seed)?;
        writeln!(w, "trajectories = {}", self.trajectories.len())?;
        writeln!(w, "horizon = {}", self.horizon())?;
        writeln!(w, "train = {n_train}")?;
        writeln!(w, "validation = {}", self.trajectories.len() - n_train)?;
        writeln!(w, "state_mean = {}", join_floats(&n.state_mean))?;
        writeln!(w, "state_std = {}", join_floats(&n.state_std))?;
        writeln!(w, "action_mean = {}", join_floats(&n.action_mean))?;
        writeln!(w, "action_std = {}", join_floats(&n.action_std))?;
        writeln!(w, "rtg_mean = {:?}", n.rtg_mean)?;
        writeln!(w, "rtg_std = {:?}", n.rtg_std)?;
        writeln!(w, "{HEADER_END}")?;
        for (traj, split) in self.trajectories.iter().zip(&self.splits) {
            write_record(w, traj, *split)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }

    /// Loads a dataset and rejects it unless it belongs to `env`.
    pub fn load_for(path: impl AsRef<Path>, env: EnvKind) -> Result<Self> {
        let ds = Self::load(path)?;
        if ds.env != env {
            return Err(Error::EnvMismatch {
                expected: env.to_string(),
                found: ds.env.to_string(),
            });
        }
        Ok(ds)
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<Self> {
        let header = read_header(r)?;
        let env = EnvKind::parse(header.get("env")?)?;
        let seed: u64 = header.parse("seed")?;
        let count: usize = header.parse("trajectories")?;
        let horizon: usize = header.parse("horizon")?;
        let n_train: usize = header.parse("train")?;
        let normalization = Normalization {
            state_mean: header.floats("state_mean")?,
            state_std: header.floats("state_std")?,
            action_mean: header.floats("action_mean")?,
            action_std: header.floats("action_std")?,
            rtg_mean: header.parse("rtg_mean")?,
            rtg_std: header.parse("rtg_std")?,
        };
        if normalization.state_mean.len() != env.continuous_state_dim()
            || normalization.action_mean.len() != env.continuous_action_dim()
        {
            return Err(Error::Format("normalization width does not match environment".into()));
        }
        let mut trajectories = Vec::with_capacity(count);
        let mut splits = Vec::with_capacity(count);
        for i in 0..count {
            let (traj, split) = read_record(r, env, i)?;
            if traj.len() != horizon {
                return Err(Error::CorruptDataset(format!(
                    "record {i} has length {} but header horizon is {horizon}",
                    traj.len()
                )));
            }
            trajectories.push(traj);
            splits.push(split);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)
            .map_err(|e| Error::CorruptDataset(e.to_string()))?;
        if !rest.is_empty() {
            return Err(Error::CorruptDataset(format!("{} trailing bytes", rest.len())));
        }
        if splits.iter().filter(|s| **s == Split::Train).count() != n_train {
            return Err(Error::CorruptDataset("split counts disagree with header".into()));
        }
        Self::check(env, &trajectories, &splits)?;
        Ok(Self {
            env,
            seed,
            trajectories,
            splits,
            normalization,
        })
    }
}

fn join_floats(xs: &[f32]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

struct Header(Vec<(String, String)>);

impl Header {
    fn get(&self, key: &str) -> Result<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("missing header key `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::Format(format!("bad value `{v}` for `{key}`")))
    }

    fn floats(&self, key: &str) -> Result<Vec<f32>> {
        self.get(key)?
            .split_whitespace()
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Format(format!("bad float `{s}` in `{key}`")))
            })
            .collect()
    }
}

fn read_header(r: &mut impl BufRead) -> Result<Header> {
    let mut line = String::new();
    let mut read_line = |line: &mut String| -> Result<bool> {
        line.clear();
        let n = r
            .read_line(line)
            .map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
        Ok(n > 0)
    };
    if !read_line(&mut line)? {
        return Err(Error::Format("empty file".into()));
    }
    let mut magic = line.split_whitespace();
    if magic.next() != Some(DATASET_MAGIC) {
        return Err(Error::Format("not a trajmask dataset".into()));
    }
    let version = magic.next().unwrap_or("");
    if version != DATASET_VERSION.to_string() {
        return Err(Error::Format(format!(
            "unsupported dataset version `{version}` (expected {DATASET_VERSION})"
        )));
    }
    let mut entries = Vec::new();
    loop {
        if !read_line(&mut line)? {
            return Err(Error::Format("header not terminated".into()));
        }
        let l = line.trim_end_matches(['\n', '\r']);
        if l == HEADER_END {
            break;
        }
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("malformed header line `{l}`")))?;
        entries.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(Header(entries))
}

fn write_record(w: &mut impl Write, traj: &Trajectory, split: Split) -> std::io::Result<()> {
    w.write_all(&traj.env().tag().to_le_bytes())?;
    w.write_all(&(traj.len() as u32).to_le_bytes())?;
    let split_tag: u32 = match split {
        Split::Train => 0,
        Split::Validation => 1,
    };
    w.write_all(&split_tag.to_le_bytes())?;
    for t in 0..traj.len() {
        match (&traj.states[t], &traj.actions[t]) {
            (StateToken::Grid(g), ActionToken::Grid(a)) => {
                w.write_all(&(g.agent as i32).to_le_bytes())?;
                w.write_all(&(g.key as i32).to_le_bytes())?;
                w.write_all(&(*a as i32).to_le_bytes())?;
            }
            (StateToken::Vector(s), ActionToken::Vector(a)) => {
                for x in s.iter().chain(a) {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            _ => unreachable!("trajectory modalities are validated on construction"),
        }
        w.write_all(&traj.rewards[t].to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::CorruptDataset(format!("truncated record while reading {what}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_i32(r: &mut impl Read, what: &str) -> Result<i32> {
    read_u32(r, what).map(|v| v as i32)
}

fn read_f32(r: &mut impl Read, what: &str) -> Result<f32> {
    read_u32(r, what).map(f32::from_bits)
}

fn read_record(r: &mut impl Read, env: EnvKind, index: usize) -> Result<(Trajectory, Split)> {
    let tag = read_u32(r, "record tag")?;
    if tag != env.tag() {
        return Err(Error::CorruptDataset(format!(
            "record {index} has modality tag {tag}, dataset is {env}"
        )));
    }
    let len = read_u32(r, "record length")? as usize;
    if len == 0 || len > 1 << 20 {
        return Err(Error::CorruptDataset(format!("record {index} has length {len}")));
    }
    let split = match read_u32(r, "split")? {
        0 => Split::Train,
        1 => Split::Validation,
        other => {
            return Err(Error::CorruptDataset(format!("record {index} has split tag {other}")))
        }
    };
    let mut states = Vec::with_capacity(len);
    let mut actions = Vec::with_capacity(len);
    let mut rewards = Vec::with_capacity(len);
    for _ in 0..len {
        match env {
            EnvKind::Gridworld => {
                let agent = read_i32(r, "agent")?;
                let key = read_i32(r, "key")?;
                let action = read_i32(r, "action")?;
                let in_grid = |v: i32| (0..NUM_CELLS as i32).contains(&v);
                if !in_grid(agent) || !in_grid(key) || !(0..NUM_ACTIONS as i32).contains(&action) {
                    return Err(Error::CorruptDataset(format!(
                        "record {index} has out-of-range gridworld values"
                    )));
                }
                states.push(StateToken::Grid(GridState::new(agent as u8, key as u8)));
                actions.push(ActionToken::Grid(action as u8));
            }
            EnvKind::Maze => {
                let mut s = [0.0f32; MAZE_OBS_DIM];
                for x in &mut s {
                    *x = read_f32(r, "observation")?;
                }
                let mut a = [0.0f32; MAZE_ACTION_DIM];
                for x in &mut a {
                    *x = read_f32(r, "action")?;
                }
                states.push(StateToken::Vector(s));
                actions.push(ActionToken::Vector(a));
            }
        }
        rewards.push(read_f32(r, "reward")?);
    }
    let traj = Trajectory::new(states, actions, rewards)
        .map_err(|e| Error::CorruptDataset(format!("record {index}: {e}")))?;
    Ok((traj, split))
}
