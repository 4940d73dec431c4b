//! Cross-task loss reports, normalized heatmaps, reward tables and
//! model-versus-data visitation comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::doorkey::{GridEnv, GridState, NUM_ACTIONS, NUM_CELLS};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::infer::{conditioned_rollout, sample_full_trajectories, Conditioning, Decode, Predictor};
use crate::masking::SchemeId;
use crate::maze::select_eval_rtg;
use crate::model::checkpoint::Checkpoint;
use crate::model::encode_window;
use crate::rng::{self, streams, Rng};
use crate::train::masked_loss;
use crate::traj::{ActionToken, Dataset, StateToken, Trajectory};
use crate::masking::sample_mask;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub const EVAL_MASK_DRAWS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub model_id: String,
    pub regime: String,
    pub eval_task: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Rows of `(model, regime, task, seed, metric, value)`; each
/// `(model, task, seed, metric)` appears at most once.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }

    pub fn push(&mut self, row: ReportRow) -> Result<()> {
        let clash = self.rows.iter().any(|r| {
            r.model_id == row.model_id && r.eval_task == row.eval_task && r.seed == row.seed && r.metric == row.metric
        });
        if clash {
            return Err(Error::Config(format!(
                "duplicate report row for model {} task {} seed {}",
                row.model_id, row.eval_task, row.seed
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn extend(&mut self, other: EvalReport) -> Result<()> {
        other.rows.into_iter().try_for_each(|r| self.push(r))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model_id,regime,eval_task,seed,metric,value\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.model_id, r.regime, r.eval_task, r.seed, r.metric, r.value);
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Averages `metric` over seeds into a `regime x task` grid.
    pub fn grid(&self, metric: &str, row_order: &[String], tasks: &[String]) -> Grid {
        let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.metric == metric) {
            cells
                .entry((r.regime.clone(), r.eval_task.clone()))
                .or_default()
                .push(r.value);
        }
        let stat = |f: fn(&[f64]) -> f64| -> Vec<Vec<Option<f64>>> {
            row_order
                .iter()
                .map(|row| {
                    tasks
                        .iter()
                        .map(|t| cells.get(&(row.clone(), t.clone())).map(|v| f(v)))
                        .collect()
                })
                .collect()
        };
        Grid {
            rows: row_order.to_vec(),
            columns: tasks.to_vec(),
            mean: stat(mean),
            std: stat(std_dev),
        }
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (zero for fewer than two values).
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Seed-averaged values with missing cells as `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub mean: Vec<Vec<Option<f64>>>,
    pub std: Vec<Vec<Option<f64>>>,
}

impl Grid {
    pub fn value(&self, row: &str, column: &str) -> Option<f64> {
        let r = self.rows.iter().position(|x| x == row)?;
        let c = self.columns.iter().position(|x| x == column)?;
        self.mean[r][c]
    }

    /// Long format `row,column,raw,normalized`.
    pub fn to_long_csv(&self) -> Result<String> {
        let norm = normalize_heatmap(self)?;
        let mut s = String::from("row,column,raw,normalized\n");
        for (r, row) in self.rows.iter().enumerate() {
            for (c, col) in self.columns.iter().enumerate() {
                let raw = self.mean[r][c].expect("checked by normalize_heatmap");
                let _ = writeln!(s, "{row},{col},{raw},{}", norm[r][c]);
            }
        }
        Ok(s)
    }

    /// Wide format with one line per row label.
    pub fn to_wide_csv(&self) -> String {
        let mut s = format!("model,{}\n", self.columns.join(","));
        for (r, row) in self.rows.iter().enumerate() {
            let cells: Vec<String> = self.mean[r]
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
                .collect();
            let _ = writeln!(s, "{row},{}", cells.join(","));
        }
        s
    }
}

/// Divides every column by its smallest entry.
pub fn normalize_heatmap(grid: &Grid) -> Result<Vec<Vec<f64>>> {
    let mut raw = vec![vec![0.0; grid.columns.len()]; grid.rows.len()];
    for (r, row) in grid.mean.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            raw[r][c] = v.ok_or_else(|| Error::IncompleteGrid {
                row: grid.rows[r].clone(),
                column: grid.columns[c].clone(),
            })?;
        }
    }
    for c in 0..grid.columns.len() {
        let min = raw.iter().map(|row| row[c]).fold(f64::INFINITY, f64::min);
        for row in raw.iter_mut() {
            row[c] /= min;
        }
    }
    Ok(raw)
}

/// Mean masked loss of one model on one task over the validation windows.
/// Windows and masks come from `eval_seed` and the task alone, so every
/// model is scored on identical inputs.
pub fn task_loss(
    ck: &Checkpoint,
    validation: &[&Trajectory],
    task: SchemeId,
    draws: usize,
    eval_seed: u64,
) -> Result<f64> {
    let model = &ck.model;
    let k = model.config.k;
    if k < task.min_k() {
        return Err(Error::SchemeInapplicable {
            scheme: task.name().into(),
            k,
        });
    }
    let task_idx = SchemeId::EVERY.iter().position(|s| *s == task).unwrap() as u64;
    let mut r = rng::stream(eval_seed, streams::EVAL_MASKS + task_idx);
    let mut sum = 0.0;
    let mut n = 0usize;
    for traj in validation {
        for _ in 0..draws {
            let start = r.random_range(0..=traj.len() - k);
            let window = traj.slice_window(start, k)?;
            let mask = sample_mask(task, k, &mut r, crate::masking::DEFAULT_WAYPOINT_PROB)?;
            if mask.num_targets() == 0 {
                continue;
            }
            let x = encode_window::<f32>(&model.config, &ck.normalization, &mask.apply(&window))?;
            let out = model.forward(&x)?;
            let loss = masked_loss(&model.config, &ck.normalization, &out, window.states, window.actions, &mask)?;
            sum += loss.total as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyTarget);
    }
    Ok(sum / n as f64)
}

/// Validation loss of every checkpoint on every task.
pub fn cross_task_eval(
    checkpoints: &[(String, &Checkpoint)],
    tasks: &[SchemeId],
    validation: &Dataset,
    draws: usize,
    eval_seed: u64,
) -> Result<EvalReport> {
    let val = validation.validation();
    if val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut report = EvalReport::new();
    for (id, ck) in checkpoints {
        for &task in tasks {
            let value = task_loss(ck, &val, task, draws, eval_seed)?;
            report.push(ReportRow {
                model_id: id.clone(),
                regime: ck.regime.clone(),
                eval_task: task.name().into(),
                seed: ck.seed,
                metric: "val_loss".into(),
                value,
            })?;
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RewardMode {
    Bc,
    /// Conditioned on 1.1x the return of the nearest training trajectory.
    Rc,
}

impl RewardMode {
    pub fn name(self) -> &'static str {
        match self {
            RewardMode::Bc => "BC",
            RewardMode::Rc => "RC",
        }
    }
}

/// Return of one argmax rollout from a fresh reset.
pub fn episode_return<E: Environment>(
    pred: Predictor<'_>,
    env: &E,
    mode: RewardMode,
    dataset: Option<&Dataset>,
    rng: &mut Rng,
) -> Result<f64> {
    let start = env.reset(rng);
    let cond = match mode {
        RewardMode::Bc => Conditioning::Bc,
        RewardMode::Rc => {
            let obs = env.observe(&start);
            let obs = obs
                .vector()
                .ok_or_else(|| Error::Config("return-conditioned reward evaluation needs the maze".into()))?;
            let dataset = dataset.ok_or(Error::EmptyDataset)?;
            Conditioning::Rc(select_eval_rtg(obs, dataset)?.rtg)
        }
    };
    let r = conditioned_rollout(pred, env, start, &cond, env.horizon(), Decode::Argmax, rng)?;
    Ok(r.total_return() as f64)
}

/// Mean return over `n` rollouts; rollout `i` uses its own stream of `seed`.
pub fn mean_episode_return<E: Environment>(
    pred: Predictor<'_>,
    env: &E,
    mode: RewardMode,
    dataset: Option<&Dataset>,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let mut sum = 0.0;
    for i in 0..n {
        let mut r = rng::stream(seed, streams::ROLLOUT_BASE + i as u64);
        sum += episode_return(pred, env, mode, dataset, &mut r)?;
    }
    Ok(sum / n.max(1) as f64)
}

/// Mean and standard error across per-seed means.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardSummary {
    pub seed_means: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

impl RewardSummary {
    pub fn from_seed_means(seed_means: Vec<f64>) -> Self {
        let m = mean(&seed_means);
        let se = std_dev(&seed_means) / (seed_means.len() as f64).sqrt();
        Self {
            seed_means,
            mean: m,
            stderr: se,
        }
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.mean - self.stderr, self.mean + self.stderr)
    }
}

/// Runs `n_rollouts` episodes per seed and summarizes across seeds.
/// `episode(seed_index, rng)` returns one episode's return.
pub fn reward_eval(
    seeds: &[u64],
    n_rollouts: usize,
    mut episode: impl FnMut(usize, &mut Rng) -> Result<f64>,
) -> Result<RewardSummary> {
    if seeds.is_empty() || n_rollouts == 0 {
        return Err(Error::Config("reward evaluation needs seeds and rollouts".into()));
    }
    let mut means = Vec::with_capacity(seeds.len());
    for (si, &seed) in seeds.iter().enumerate() {
        let mut sum = 0.0;
        for i in 0..n_rollouts {
            let mut r = rng::stream(seed, streams::ROLLOUT_BASE + i as u64);
            sum += episode(si, &mut r)?;
        }
        means.push(sum / n_rollouts as f64);
    }
    Ok(RewardSummary::from_seed_means(means))
}

/// Which of two reward summaries is ahead.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ordering {
    /// The expected side is ahead with non-overlapping standard errors.
    Holds,
    /// Standard-error intervals overlap.
    Inconclusive,
    /// The other side is ahead with non-overlapping standard errors.
    Reversed,
}

/// Compares `better` against `worse` using one-standard-error intervals.
pub fn compare_summaries(better: &RewardSummary, worse: &RewardSummary) -> Ordering {
    let (bl, bh) = better.interval();
    let (wl, wh) = worse.interval();
    if bl > wh {
        Ordering::Holds
    } else if wl > bh {
        Ordering::Reversed
    } else {
        Ordering::Inconclusive
    }
}

/// Per-timestep frequencies over `(agent cell, action)` pairs.
pub type Visitation = Vec<[f64; NUM_CELLS * NUM_ACTIONS]>;

pub fn visitation<'a>(
    horizon: usize,
    episodes: impl IntoIterator<Item = (&'a [StateToken], &'a [ActionToken])>,
) -> Visitation {
    let mut counts = vec![[0.0f64; NUM_CELLS * NUM_ACTIONS]; horizon];
    let mut totals = vec![0.0f64; horizon];
    for (states, actions) in episodes {
        for t in 0..horizon.min(actions.len()) {
            if let (StateToken::Grid(s), ActionToken::Grid(a)) = (&states[t], &actions[t]) {
                counts[t][s.agent as usize * NUM_ACTIONS + *a as usize] += 1.0;
                totals[t] += 1.0;
            }
        }
    }
    for (row, total) in counts.iter_mut().zip(&totals) {
        if *total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    counts
}

/// Half the L1 distance between two distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionComparison {
    pub data: Visitation,
    pub model: Visitation,
    pub tv_per_step: Vec<f64>,
    /// Mean of the per-step distances.
    pub tv: f64,
}

impl DistributionComparison {
    pub fn from_tables(data: Visitation, model: Visitation) -> Self {
        let tv_per_step: Vec<f64> = data.iter().zip(&model).map(|(p, q)| total_variation(p, q)).collect();
        let tv = mean(&tv_per_step);
        Self {
            data,
            model,
            tv_per_step,
            tv,
        }
    }

    /// `source,t,cell,action,frequency` rows for both tables.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("source,t,cell,action,frequency\n");
        for (name, table) in [("data", &self.data), ("model", &self.model)] {
            for (t, row) in table.iter().enumerate() {
                for (i, f) in row.iter().enumerate() {
                    let _ = writeln!(s, "{name},{t},{},{},{f}", i / NUM_ACTIONS, i % NUM_ACTIONS);
                }
            }
        }
        s
    }
}

/// Samples `per_start` model trajectories from each validation start state
/// and compares visitation frequencies with the validation data.
pub fn distribution_compare(
    pred: Predictor<'_>,
    env: &GridEnv,
    validation: &[&Trajectory],
    per_start: usize,
    rng: &mut Rng,
) -> Result<DistributionComparison> {
    let horizon = env.horizon();
    let starts: Vec<GridState> = validation
        .iter()
        .map(|t| t.states()[0].grid().ok_or_else(|| Error::Config("gridworld trajectories expected".into())))
        .collect::<Result<_>>()?;
    let data = visitation(horizon, validation.iter().map(|t| (t.states(), t.actions())));
    let sampled = sample_full_trajectories(pred, env, &starts, per_start, rng)?;
    let model = visitation(horizon, sampled.iter().map(|r| (&r.states[..], &r.actions[..])));
    Ok(DistributionComparison::from_tables(data, model))
}
