//! Experiment configuration files.
//!
//! One TOML file describes the environment, dataset, model, training regime
//! and evaluation settings. Unknown keys are rejected with their line, and
//! `--set section.key=value` overrides any field before validation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::doorkey::{GridEnv, GridLayout, GridState, LayoutSpec, GRID_HORIZON, NUM_CELLS};
use crate::error::{Error, Result};
use crate::eval::{RewardMode, EVAL_MASK_DRAWS};
use crate::infer::{Conditioning, Decode};
use crate::masking::SchemeId;
use crate::maze::{Maze, MazeEnv, MazeParams, MAZE_HORIZON};
use crate::model::ModelConfig;
use crate::train::RegimeSpec;
use crate::traj::{EnvKind, StateToken};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<RegimeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune: Option<FinetuneConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub query: QueryConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Episode length; 10 for the gridworld and 200 for the maze when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<LayoutSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maze: Option<MazeParams>,
}

impl EnvConfig {
    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(match self.kind {
            EnvKind::Gridworld => GRID_HORIZON,
            EnvKind::Maze => MAZE_HORIZON,
        })
    }

    pub fn grid_env(&self) -> Result<GridEnv> {
        self.expect(EnvKind::Gridworld)?;
        let layout = GridLayout::from_spec(&self.layout.clone().unwrap_or_default())?;
        Ok(GridEnv {
            layout,
            horizon: self.horizon(),
        })
    }

    pub fn maze_env(&self) -> Result<MazeEnv> {
        self.expect(EnvKind::Maze)?;
        let maze = Maze::new(self.maze.clone().unwrap_or_default())?;
        Ok(MazeEnv {
            maze,
            horizon: self.horizon(),
        })
    }

    fn expect(&self, kind: EnvKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::EnvMismatch {
                expected: kind.to_string(),
                found: self.kind.to_string(),
            })
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset file read by training and evaluation commands.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Trajectories generated by `gen-data`; 500/100 (gridworld) and 900/100 (maze) when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_validation: Option<usize>,
}

impl DataConfig {
    pub fn sizes(&self, kind: EnvKind) -> (usize, usize) {
        let (t, v) = match kind {
            EnvKind::Gridworld => (500, 100),
            EnvKind::Maze => (900, 100),
        };
        (self.n_train.unwrap_or(t), self.n_validation.unwrap_or(v))
    }

    pub fn require_path(&self) -> Result<&Path> {
        self.path
            .as_deref()
            .ok_or_else(|| Error::Config("data.path is required for this command".into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Random-mask or multi-task checkpoint to continue from.
    pub base: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointRef {
    pub path: PathBuf,
    /// Row label; checkpoints sharing a label are averaged over their seeds.
    /// Defaults to the checkpoint's regime (and context length for reward tables).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub checkpoints: Vec<CheckpointRef>,
    pub tasks: Vec<SchemeId>,
    /// Mask draws per validation trajectory and task.
    pub draws: usize,
    pub eval_seed: u64,
    /// Rollouts per checkpoint for reward tables.
    pub rollouts: usize,
    pub modes: Vec<RewardMode>,
    /// Model samples per validation start for `compare-dist`.
    pub per_start: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            checkpoints: Vec::new(),
            tasks: SchemeId::CONCRETE.to_vec(),
            draws: EVAL_MASK_DRAWS,
            eval_seed: 0,
            rollouts: 200,
            modes: vec![RewardMode::Bc, RewardMode::Rc],
            per_start: 4,
        }
    }
}

/// A state written as `[agent, key]` cells (gridworld) or four numbers (maze).
pub type StateSpec = Vec<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinSpec {
    pub t: usize,
    pub state: StateSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConditioningSpec {
    Bc,
    Goal { state: StateSpec },
    Rc { target: f32 },
    Waypoints { pins: Vec<PinSpec> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeSpec {
    Argmax,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueryConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub conditioning: ConditioningSpec,
    pub decode: DecodeSpec,
    pub episodes: usize,
    /// Final state for backwards inference, `[agent, key]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_state: Option<StateSpec>,
    pub steps: usize,
    pub queries: usize,
    pub max_attempts: usize,
    /// Pinned states for `marginals`.
    pub pins: Vec<PinSpec>,
    pub query_t: usize,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            conditioning: ConditioningSpec::Bc,
            decode: DecodeSpec::Argmax,
            episodes: 10,
            final_state: None,
            steps: 5,
            queries: 100,
            max_attempts: 256,
            pins: Vec::new(),
            query_t: 0,
        }
    }
}

impl QueryConfig {
    pub fn require_checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| Error::Config("query.checkpoint is required for this command".into()))
    }

    pub fn decode(&self) -> Decode {
        match self.decode {
            DecodeSpec::Argmax => Decode::Argmax,
            DecodeSpec::Sample => Decode::Sample,
        }
    }

    pub fn conditioning(&self, kind: EnvKind) -> Result<Conditioning> {
        Ok(match &self.conditioning {
            ConditioningSpec::Bc => Conditioning::Bc,
            ConditioningSpec::Goal { state } => Conditioning::Goal(state_token(kind, state)?),
            ConditioningSpec::Rc { target } => Conditioning::Rc(*target),
            ConditioningSpec::Waypoints { pins } => Conditioning::Waypoints(
                pins.iter()
                    .map(|p| Ok((p.t, state_token(kind, &p.state)?)))
                    .collect::<Result<_>>()?,
            ),
        })
    }
}

pub fn grid_state(spec: &[f64]) -> Result<GridState> {
    let ok = |v: f64| v >= 0.0 && v.fract() == 0.0 && v < NUM_CELLS as f64;
    match spec {
        [a, k] if ok(*a) && ok(*k) => Ok(GridState::new(*a as u8, *k as u8)),
        _ => Err(Error::InvalidState(format!(
            "gridworld states are written [agent, key] with cells in 0..{NUM_CELLS}, got {spec:?}"
        ))),
    }
}

pub fn state_token(kind: EnvKind, spec: &[f64]) -> Result<StateToken> {
    match kind {
        EnvKind::Gridworld => Ok(StateToken::Grid(grid_state(spec)?)),
        EnvKind::Maze => match spec {
            [a, b, c, d] => Ok(StateToken::Vector([*a as f32, *b as f32, *c as f32, *d as f32])),
            _ => Err(Error::InvalidState(format!("maze states have four numbers, got {spec:?}"))),
        },
    }
}

impl ExperimentConfig {
    /// Reads a config file, applies `overrides` and resolves relative paths
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut config = Self::parse(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        config.resolve_paths(&base);
        Ok(config)
    }

    /// Parses TOML text, then applies dotted `key=value` overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
        if overrides.is_empty() {
            config.validate()?;
            return Ok(config);
        }
        let mut value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: Self = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("after overrides: {}", one_line(&e.to_string()))))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let horizon = self.env.horizon();
        if let Some(m) = &self.model {
            if m.env != self.env.kind {
                return Err(Error::EnvMismatch {
                    expected: self.env.kind.to_string(),
                    found: format!("{} model", m.env),
                });
            }
            m.validate()?;
            if m.horizon != horizon {
                return Err(Error::Config(format!(
                    "model.horizon = {} but the environment horizon is {horizon}",
                    m.horizon
                )));
            }
            if let Some(t) = &self.train {
                t.validate(m.k)?;
            }
        }
        match self.env.kind {
            EnvKind::Gridworld => {
                if self.env.maze.is_some() {
                    return Err(Error::Config("env.maze given for a gridworld experiment".into()));
                }
                self.env.grid_env()?;
            }
            EnvKind::Maze => {
                if self.env.layout.is_some() {
                    return Err(Error::Config("env.layout given for a maze experiment".into()));
                }
                self.env.maze_env()?;
            }
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut self.data.path {
            fix(p);
        }
        if let Some(f) = &mut self.finetune {
            fix(&mut f.base);
        }
        for c in &mut self.eval.checkpoints {
            fix(&mut c.path);
        }
        if let Some(p) = &mut self.query.checkpoint {
            fix(p);
        }
    }

    pub fn model(&self) -> Result<&ModelConfig> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config("a [model] section is required for this command".into()))
    }

    pub fn train_spec(&self) -> Result<&RegimeSpec> {
        self.train
            .as_ref()
            .ok_or_else(|| Error::Config("a [train] section is required for this command".into()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Sets `a.b.c = value`; the value is read as TOML, falling back to a string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
