//! Command-line entry points. Every run writes its outputs and a
//! `manifest.toml` into a fresh directory `<out>/<command>-<run hash>`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{grid_state, ExperimentConfig};
use crate::doorkey::{generate_grid_dataset, GridEnv};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::eval::{cross_task_eval, distribution_compare, episode_return, reward_eval, EvalReport};
use crate::infer::{backwards_infer, conditioned_rollout, future_marginals, Predictor, Rollout};
use crate::maze::generate_maze_dataset;
use crate::model::checkpoint::Checkpoint;
use crate::rng::{self, streams};
use crate::train::{write_curve, Trainer};
use crate::traj::{ActionToken, Dataset, EnvKind, Split, StateToken};

#[derive(Parser, Debug)]
#[command(name = "trajmask", version, about = "Masked trajectory models: data, training and evaluation")]
pub struct Cli {
    /// Re-run the command recorded in a manifest and check its artifacts.
    #[arg(long, global = true)]
    pub from_manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Generate an expert dataset.
    GenData(RunArgs),
    /// Train a fresh model.
    Train(RunArgs),
    /// Continue a pretrained checkpoint on one scheme.
    Finetune(RunArgs),
    /// Validation loss of each checkpoint on each task.
    EvalLoss(RunArgs),
    /// Reward tables (mean and standard error across seeds).
    EvalReward(RunArgs),
    /// Cross-task loss grid, raw and column-normalized.
    Heatmap(RunArgs),
    /// Conditioned rollouts of one checkpoint.
    Rollout(RunArgs),
    /// Backwards inference from a final gridworld state.
    Backwards(RunArgs),
    /// State distribution at one timestep given pinned states.
    Marginals(RunArgs),
    /// Visitation frequencies of model samples against the validation data.
    CompareDist(RunArgs),
    /// Summarize a dataset or checkpoint file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `section.key=value`, repeatable.
    #[arg(long = "set")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Root directory for run directories.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct InspectArgs {
    pub path: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Finetune(_) => "finetune",
            Command::EvalLoss(_) => "eval-loss",
            Command::EvalReward(_) => "eval-reward",
            Command::Heatmap(_) => "heatmap",
            Command::Rollout(_) => "rollout",
            Command::Backwards(_) => "backwards",
            Command::Marginals(_) => "marginals",
            Command::CompareDist(_) => "compare-dist",
            Command::Inspect(_) => "inspect",
        }
    }

    fn needs_seed(&self) -> bool {
        matches!(
            self,
            Command::GenData(_)
                | Command::Train(_)
                | Command::Finetune(_)
                | Command::Rollout(_)
                | Command::Backwards(_)
                | Command::CompareDist(_)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to repeat a run: command, seed, resolved config, input
/// hashes and the hashes of what it wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub run_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub crate_version: String,
    pub inputs: Vec<FileHash>,
    pub artifacts: Vec<FileHash>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Files a command has written, hashed as they are added.
struct Outputs {
    dir: PathBuf,
    files: Vec<FileHash>,
}

impl Outputs {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let sha256 = sha256_file(&self.path(name))?;
        self.files.push(FileHash {
            path: name.to_string(),
            sha256,
        });
        Ok(())
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.record(name)
    }
}

/// Outcome of a command: the directory it wrote and its manifest.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub dir: PathBuf,
    pub manifest: Manifest,
    /// Human summary printed to stdout.
    pub summary: String,
}

fn input_paths(command: &str, c: &ExperimentConfig) -> Vec<PathBuf> {
    let mut v = Vec::new();
    let data = c.data.path.clone();
    let query = c.query.checkpoint.clone();
    match command {
        "train" => v.extend(data),
        "finetune" => {
            v.extend(data);
            v.extend(c.finetune.as_ref().map(|f| f.base.clone()));
        }
        "eval-loss" | "heatmap" => {
            v.extend(data);
            v.extend(c.eval.checkpoints.iter().map(|r| r.path.clone()));
        }
        "eval-reward" => {
            v.extend(data);
            v.extend(c.eval.checkpoints.iter().map(|r| r.path.clone()));
        }
        "rollout" => {
            v.extend(query);
            if matches!(c.query.conditioning, crate::config::ConditioningSpec::Rc { .. }) {
                v.extend(data);
            }
        }
        "backwards" | "marginals" => v.extend(query),
        "compare-dist" => {
            v.extend(query);
            v.extend(data);
        }
        _ => {}
    }
    v
}

/// Runs one command with a resolved config and writes its run directory.
pub fn execute(command: &str, config: &ExperimentConfig, seed: Option<u64>, out_root: &Path) -> Result<RunResult> {
    let mut inputs = Vec::new();
    for p in input_paths(command, config) {
        if !p.exists() {
            return Err(Error::io(
                &p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "input file does not exist"),
            ));
        }
        inputs.push(FileHash {
            path: p.display().to_string(),
            sha256: sha256_file(&p)?,
        });
    }
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(format!("{seed:?}").as_bytes());
    h.update(config.to_toml().as_bytes());
    for i in &inputs {
        h.update(i.sha256.as_bytes());
    }
    let run_id = hex::encode(h.finalize())[..12].to_string();
    let dir = fresh_dir(out_root, &format!("{command}-{run_id}"))?;
    let mut out = Outputs {
        dir: dir.clone(),
        files: Vec::new(),
    };
    let seed_v = seed.unwrap_or(0);
    let summary = match command {
        "gen-data" => gen_data(config, seed_v, &mut out)?,
        "train" => train_cmd(config, seed_v, &mut out)?,
        "finetune" => finetune_cmd(config, seed_v, &mut out)?,
        "eval-loss" => eval_loss(config, &mut out, false)?,
        "heatmap" => eval_loss(config, &mut out, true)?,
        "eval-reward" => eval_reward(config, &mut out)?,
        "rollout" => rollout_cmd(config, seed_v, &mut out)?,
        "backwards" => backwards_cmd(config, seed_v, &mut out)?,
        "marginals" => marginals_cmd(config, &mut out)?,
        "compare-dist" => compare_cmd(config, seed_v, &mut out)?,
        other => return Err(Error::Config(format!("unknown command `{other}`"))),
    };
    let manifest = Manifest {
        command: command.to_string(),
        run_id,
        seed,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs,
        artifacts: out.files,
        config: config.clone(),
    };
    let path = dir.join("manifest.toml");
    fs::write(&path, toml::to_string(&manifest).expect("manifest serializes")).map_err(|e| Error::io(&path, e))?;
    Ok(RunResult { dir, manifest, summary })
}

/// `root/name`, or `root/name-2`, `-3`, ... if taken.
fn fresh_dir(root: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut n = 1;
    loop {
        let candidate = if n == 1 {
            root.join(name)
        } else {
            root.join(format!("{name}-{n}"))
        };
        match fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(Error::io(&candidate, e)),
        }
    }
}

/// Repeats a manifest's run and checks that every artifact hash matches.
pub fn reproduce(manifest_path: &Path, out_root: &Path) -> Result<RunResult> {
    let m = Manifest::load(manifest_path)?;
    for i in &m.inputs {
        let now = sha256_file(Path::new(&i.path))?;
        if now != i.sha256 {
            return Err(Error::Config(format!("input {} changed since the recorded run", i.path)));
        }
    }
    let run = execute(&m.command, &m.config, m.seed, out_root)?;
    let old: BTreeMap<_, _> = m.artifacts.iter().map(|f| (&f.path, &f.sha256)).collect();
    let new: BTreeMap<_, _> = run.manifest.artifacts.iter().map(|f| (&f.path, &f.sha256)).collect();
    if old != new {
        let differing: std::collections::BTreeSet<&str> = old
            .keys()
            .chain(new.keys())
            .filter(|k| old.get(*k) != new.get(*k))
            .map(|k| k.as_str())
            .collect();
        let differing: Vec<&str> = differing.into_iter().collect();
        return Err(Error::Config(format!("artifacts differ from the manifest: {}", differing.join(", "))));
    }
    Ok(run)
}

fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    Dataset::load_for(config.data.require_path()?, config.env.kind)
}

fn load_checkpoint(path: &Path, config: &ExperimentConfig) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if ck.config().env != config.env.kind {
        return Err(Error::EnvMismatch {
            expected: config.env.kind.to_string(),
            found: format!("{} checkpoint {}", ck.config().env, path.display()),
        });
    }
    Ok(ck)
}

fn gen_data(c: &ExperimentConfig, seed: u64, out: &mut Outputs) -> Result<String> {
    let (n_train, n_val) = c.data.sizes(c.env.kind);
    let data = match c.env.kind {
        EnvKind::Gridworld => {
            let env = c.env.grid_env()?;
            generate_grid_dataset(&env.layout, n_train, n_val, env.horizon, seed)?
        }
        EnvKind::Maze => {
            let env = c.env.maze_env()?;
            generate_maze_dataset(&env.maze, n_train, n_val, env.horizon, seed)?
        }
    };
    data.save(out.path("data.traj"))?;
    out.record("data.traj")?;
    let mean: f32 = data.train().iter().map(|t| t.total_return()).sum::<f32>() / n_train as f32;
    Ok(format!(
        "{} dataset: {n_train} train / {n_val} validation trajectories, mean train return {mean:.3}",
        c.env.kind
    ))
}

fn trainer<'a>(c: &ExperimentConfig, data: &'a Dataset) -> Result<Trainer<'a>> {
    Ok(match c.env.kind {
        EnvKind::Maze => Trainer::new(data).with_maze(c.env.maze_env()?.maze),
        EnvKind::Gridworld => Trainer::new(data),
    })
}

fn save_outcome(o: &crate::train::TrainOutcome, out: &mut Outputs) -> Result<String> {
    o.checkpoint.save(out.path("model.ckpt"))?;
    out.record("model.ckpt")?;
    write_curve(out.path("curve.csv"), &o.curve)?;
    out.record("curve.csv")?;
    Ok(format!(
        "{} trained {} epochs in {:.1}s, best epoch {} metric {}",
        o.checkpoint.regime,
        o.curve.len(),
        o.curve.last().map(|p| p.wall_time).unwrap_or(0.0),
        o.best_epoch,
        o.best_metric.map(|m| format!("{m:.5}")).unwrap_or_else(|| "n/a".into())
    ))
}

fn train_cmd(c: &ExperimentConfig, seed: u64, out: &mut Outputs) -> Result<String> {
    let data = load_dataset(c)?;
    let o = trainer(c, &data)?.train(c.model()?, c.train_spec()?, seed)?;
    save_outcome(&o, out)
}

fn finetune_cmd(c: &ExperimentConfig, seed: u64, out: &mut Outputs) -> Result<String> {
    let data = load_dataset(c)?;
    let base_path = &c
        .finetune
        .as_ref()
        .ok_or_else(|| Error::Config("a [finetune] section with `base` is required".into()))?
        .base;
    let base = load_checkpoint(base_path, c)?;
    if let Some(m) = &c.model {
        if crate::model::checkpoint::config_hash(m) != crate::model::checkpoint::config_hash(base.config()) {
            return Err(Error::Checkpoint("the [model] section differs from the base checkpoint".into()));
        }
    }
    let o = trainer(c, &data)?.finetune(&base, c.train_spec()?, seed)?;
    save_outcome(&o, out)
}

fn checkpoints(c: &ExperimentConfig) -> Result<Vec<(String, String, Checkpoint)>> {
    if c.eval.checkpoints.is_empty() {
        return Err(Error::Config("eval.checkpoints is empty".into()));
    }
    let mut v = Vec::new();
    for r in &c.eval.checkpoints {
        let ck = load_checkpoint(&r.path, c)?;
        let id = r.path.display().to_string();
        let group = r.group.clone().unwrap_or_else(|| ck.regime.clone());
        v.push((id, group, ck));
    }
    let k = v[0].2.config().k;
    if v.iter().any(|(_, _, ck)| ck.config().k != k) {
        return Err(Error::Config("all checkpoints must share one context length".into()));
    }
    Ok(v)
}

fn eval_loss(c: &ExperimentConfig, out: &mut Outputs, grid: bool) -> Result<String> {
    let data = load_dataset(c)?;
    let cks = checkpoints(c)?;
    let refs: Vec<(String, &Checkpoint)> = cks.iter().map(|(id, _, ck)| (id.clone(), ck)).collect();
    let mut report = cross_task_eval(&refs, &c.eval.tasks, &data, c.eval.draws, c.eval.eval_seed)?;
    // the regime column carries the row label used for grouping
    let mut relabeled = EvalReport::new();
    for (row, (_, group, _)) in report.rows().iter().zip(cks.iter().flat_map(|x| std::iter::repeat(x).take(c.eval.tasks.len()))) {
        let mut row = row.clone();
        row.regime = group.clone();
        relabeled.push(row)?;
    }
    report = relabeled;
    out.write("report.csv", &report.to_csv())?;
    if !grid {
        return Ok(format!("{} rows written", report.rows().len()));
    }
    let mut rows: Vec<String> = Vec::new();
    for (_, g, _) in &cks {
        if !rows.contains(g) {
            rows.push(g.clone());
        }
    }
    let tasks: Vec<String> = c.eval.tasks.iter().map(|t| t.name().to_string()).collect();
    let g = report.grid("val_loss", &rows, &tasks);
    out.write("heatmap.csv", &g.to_wide_csv())?;
    out.write("heatmap_long.csv", &g.to_long_csv()?)?;
    let std = crate::eval::Grid {
        mean: g.std.clone(),
        ..g.clone()
    };
    out.write("heatmap_std.csv", &std.to_wide_csv())?;
    Ok(format!("{} x {} grid written", rows.len(), tasks.len()))
}

fn eval_reward(c: &ExperimentConfig, out: &mut Outputs) -> Result<String> {
    let data = c.data.path.as_ref().map(|_| load_dataset(c)).transpose()?;
    let mut groups: Vec<(String, Vec<Checkpoint>)> = Vec::new();
    for r in &c.eval.checkpoints {
        let ck = load_checkpoint(&r.path, c)?;
        let label = r
            .group
            .clone()
            .unwrap_or_else(|| format!("{} {} k={}", ck.config().arch, ck.regime, ck.config().k));
        match groups.iter_mut().find(|(g, _)| *g == label) {
            Some((_, v)) => v.push(ck),
            None => groups.push((label, vec![ck])),
        }
    }
    if groups.is_empty() {
        return Err(Error::Config("eval.checkpoints is empty".into()));
    }
    let mut csv = String::from("model,mode,k,seeds,rollouts,mean,stderr,seed_means\n");
    let mut summary = String::new();
    for (label, cks) in &groups {
        for &mode in &c.eval.modes {
            let seeds: Vec<u64> = cks.iter().map(|ck| ck.seed).collect();
            let s = match c.env.kind {
                EnvKind::Maze => {
                    let env = c.env.maze_env()?;
                    reward_eval(&seeds, c.eval.rollouts, |i, r| {
                        let p = Predictor::new(&cks[i].model, &cks[i].normalization);
                        episode_return(p, &env, mode, data.as_ref(), r)
                    })?
                }
                EnvKind::Gridworld => {
                    let env = c.env.grid_env()?;
                    reward_eval(&seeds, c.eval.rollouts, |i, r| {
                        let p = Predictor::new(&cks[i].model, &cks[i].normalization);
                        episode_return(p, &env, mode, data.as_ref(), r)
                    })?
                }
            };
            let means: Vec<String> = s.seed_means.iter().map(|m| format!("{m:.6}")).collect();
            let _ = writeln!(
                csv,
                "{label},{},{},{},{},{:.6},{:.6},{}",
                mode.name(),
                cks[0].config().k,
                seeds.len(),
                c.eval.rollouts,
                s.mean,
                s.stderr,
                means.join(";")
            );
            let _ = writeln!(summary, "{label:<40} {:<3} {:>9.3} ± {:.3}", mode.name(), s.mean, s.stderr);
        }
    }
    out.write("rewards.csv", &csv)?;
    Ok(summary.trim_end().to_string())
}

fn token_text(s: &StateToken) -> String {
    match s {
        StateToken::Grid(g) => format!("{} {}", g.agent, g.key),
        StateToken::Vector(v) => format!("{} {} {} {}", v[0], v[1], v[2], v[3]),
    }
}

fn action_text(a: &ActionToken) -> String {
    match a {
        ActionToken::Grid(i) => i.to_string(),
        ActionToken::Vector(v) => format!("{} {}", v[0], v[1]),
    }
}

fn rollout_cmd(c: &ExperimentConfig, seed: u64, out: &mut Outputs) -> Result<String> {
    let ck = load_checkpoint(c.query.require_checkpoint()?, c)?;
    let pred = Predictor::new(&ck.model, &ck.normalization);
    let cond = c.query.conditioning(c.env.kind)?;
    let n = c.query.episodes;
    let mut rollouts: Vec<Rollout> = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::stream(seed, streams::ROLLOUT_BASE + i as u64);
        let roll = match c.env.kind {
            EnvKind::Gridworld => {
                let env = c.env.grid_env()?;
                let start = env.reset(&mut r);
                conditioned_rollout(pred, &env, start, &cond, env.horizon, c.query.decode(), &mut r)?
            }
            EnvKind::Maze => {
                let env = c.env.maze_env()?;
                let start = env.reset(&mut r);
                conditioned_rollout(pred, &env, start, &cond, env.horizon, c.query.decode(), &mut r)?
            }
        };
        rollouts.push(roll);
    }
    let mut csv = String::from("episode,t,state,action,reward,rtg,remaining\n");
    for (e, roll) in rollouts.iter().enumerate() {
        for t in 0..roll.len() {
            let (rtg, rem) = roll.rtg_fed[t]
                .map(|x| (x.rtg.to_string(), x.remaining.to_string()))
                .unwrap_or_default();
            let _ = writeln!(
                csv,
                "{e},{t},{},{},{},{rtg},{rem}",
                token_text(&roll.states[t]),
                action_text(&roll.actions[t]),
                roll.rewards[t]
            );
        }
    }
    out.write("rollouts.csv", &csv)?;
    if rollouts.iter().all(|r| !r.is_empty()) && !rollouts.is_empty() {
        let trajs = rollouts.iter().map(|r| r.to_trajectory()).collect::<Result<Vec<_>>>()?;
        let splits = vec![Split::Train; trajs.len()];
        Dataset::new(c.env.kind, trajs, splits, seed)?.save(out.path("rollouts.traj"))?;
        out.record("rollouts.traj")?;
    }
    let mean = rollouts.iter().map(|r| r.total_return() as f64).sum::<f64>() / n.max(1) as f64;
    Ok(format!("{n} rollouts, mean return {mean:.3}"))
}

fn backwards_cmd(c: &ExperimentConfig, seed: u64, out: &mut Outputs) -> Result<String> {
    let ck = load_checkpoint(c.query.require_checkpoint()?, c)?;
    let env: GridEnv = c.env.grid_env()?;
    let pred = Predictor::new(&ck.model, &ck.normalization);
    let final_state = grid_state(
        c.query
            .final_state
            .as_deref()
            .ok_or_else(|| Error::Config("query.final_state is required for backwards".into()))?,
    )?;
    let mut r = rng::stream(seed, streams::ROLLOUT_BASE);
    let mut csv = String::from("query,t,agent,key,action,attempts\n");
    let mut exhausted = 0;
    for q in 0..c.query.queries {
        match backwards_infer(pred, &env.layout, final_state, c.query.steps, &mut r, c.query.max_attempts) {
            Ok(trace) => {
                let n = trace.actions.len();
                for (t, s) in trace.states.iter().enumerate() {
                    let action = trace.actions.get(t).map(|a| (*a as u8).to_string()).unwrap_or_default();
                    let attempts = if t < n { trace.attempts[n - 1 - t].to_string() } else { String::new() };
                    let _ = writeln!(csv, "{q},{t},{},{},{action},{attempts}", s.agent, s.key);
                }
            }
            Err(Error::RejectionExhausted { .. }) => exhausted += 1,
            Err(e) => return Err(e),
        }
    }
    out.write("backwards.csv", &csv)?;
    Ok(format!("{} queries, {exhausted} exhausted their attempts", c.query.queries))
}

fn marginals_cmd(c: &ExperimentConfig, out: &mut Outputs) -> Result<String> {
    let ck = load_checkpoint(c.query.require_checkpoint()?, c)?;
    let pred = Predictor::new(&ck.model, &ck.normalization);
    let pins = c
        .query
        .pins
        .iter()
        .map(|p| Ok((p.t, grid_state(&p.state)?)))
        .collect::<Result<Vec<_>>>()?;
    let m = future_marginals(pred, &pins, c.query.query_t)?;
    let mut csv = String::from("factor,cell,probability\n");
    for (name, dist) in [("agent", &m.agent), ("key", &m.key)] {
        for (cell, p) in dist.iter().enumerate() {
            let _ = writeln!(csv, "{name},{cell},{p}");
        }
    }
    out.write("marginals.csv", &csv)?;
    let best = crate::model::ops::argmax(&m.agent);
    Ok(format!("t={}: most likely agent cell {best} (p={:.3})", c.query.query_t, m.agent[best]))
}

fn compare_cmd(c: &ExperimentConfig, seed: u64, out: &mut Outputs) -> Result<String> {
    let ck = load_checkpoint(c.query.require_checkpoint()?, c)?;
    let env = c.env.grid_env()?;
    let data = load_dataset(c)?;
    let pred = Predictor::new(&ck.model, &ck.normalization);
    let mut r = rng::stream(seed, streams::ROLLOUT_BASE);
    let cmp = distribution_compare(pred, &env, &data.validation(), c.eval.per_start, &mut r)?;
    out.write("distribution.csv", &cmp.to_csv())?;
    let mut tv = String::from("t,tv\n");
    for (t, v) in cmp.tv_per_step.iter().enumerate() {
        let _ = writeln!(tv, "{t},{v}");
    }
    out.write("tv.csv", &tv)?;
    Ok(format!("mean total variation distance {:.4}", cmp.tv))
}

/// One-paragraph description of a dataset or checkpoint file.
pub fn inspect(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if let Ok(ck) = Checkpoint::from_bytes(&bytes) {
        let c = ck.config();
        return Ok(format!(
            "checkpoint {}\n  regime {}  seed {}\n  {} {} k={} embed={} layers={} heads={} ffn={}\n  {} parameters, optimizer step {}",
            path.display(),
            ck.regime,
            ck.seed,
            c.arch,
            c.env,
            c.k,
            c.embed_dim,
            c.num_layers,
            c.num_heads,
            c.ffn_dim,
            ck.model.num_params(),
            ck.optimizer.as_ref().map(|o| o.step.to_string()).unwrap_or_else(|| "-".into())
        ));
    }
    let data = Dataset::read_from(&mut std::io::Cursor::new(&bytes))?;
    let train = data.train();
    let mean = train.iter().map(|t| t.total_return() as f64).sum::<f64>() / train.len().max(1) as f64;
    Ok(format!(
        "dataset {}\n  env {}  seed {}  horizon {}\n  {} train / {} validation trajectories, mean train return {mean:.3}",
        path.display(),
        data.env,
        data.seed,
        data.horizon(),
        train.len(),
        data.validation().len()
    ))
}

/// Parses `args`, runs the command and returns the text to print.
pub fn run(cli: Cli) -> Result<String> {
    if let Some(m) = &cli.from_manifest {
        let out = match &cli.command {
            Some(Command::Inspect(_)) | None => PathBuf::from("runs"),
            Some(c) => run_args(c).map(|a| a.out.clone()).unwrap_or_else(|| PathBuf::from("runs")),
        };
        let run = reproduce(m, &out)?;
        return Ok(format!("{}\nreproduced into {}", run.summary, run.dir.display()));
    }
    let command = cli
        .command
        .ok_or_else(|| Error::Config("no command given (try --help)".into()))?;
    if let Command::Inspect(a) = &command {
        return inspect(&a.path);
    }
    let args = run_args(&command).expect("run command");
    if command.needs_seed() && args.seed.is_none() {
        return Err(Error::Config(format!("`{}` needs --seed", command.name())));
    }
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| Error::Config(format!("`{}` needs --config", command.name())))?;
    let config = ExperimentConfig::load(path, &args.overrides)?;
    let run = execute(command.name(), &config, args.seed, &args.out)?;
    Ok(format!("{}\nwrote {}", run.summary, run.dir.display()))
}

fn run_args(c: &Command) -> Option<&RunArgs> {
    match c {
        Command::GenData(a)
        | Command::Train(a)
        | Command::Finetune(a)
        | Command::EvalLoss(a)
        | Command::EvalReward(a)
        | Command::Heatmap(a)
        | Command::Rollout(a)
        | Command::Backwards(a)
        | Command::Marginals(a)
        | Command::CompareDist(a) => Some(a),
        Command::Inspect(_) => None,
    }
}

/// Process entry point: prints results, or `error code=E_...: message` and exits 2.
pub fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => println!("{text}"),
        Err(e) => {
            eprintln!("error code={}: {e}", e.code());
            std::process::exit(2);
        }
    }
}
