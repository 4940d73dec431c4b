//! Training regimes, the optimization loop and early stopping.

pub mod adam;
pub mod loss;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{mean_episode_return, RewardMode};
use crate::masking::{multi_mask, random_mask, sample_mask, MaskPattern, SchemeId, DEFAULT_WAYPOINT_PROB};
use crate::maze::{Maze, MazeEnv};
use crate::model::checkpoint::Checkpoint;
use crate::model::{encode_window, Model, ModelConfig};
use crate::rng::{self, streams, Rng};
use crate::traj::{Dataset, EnvKind, Split, Trajectory};

pub use adam::{Adam, AdamConfig};
pub use loss::{masked_loss, Loss};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Regime {
    SingleTask { scheme: SchemeId },
    /// A uniform draw among `schemes` per sample; `ALL` expands to the eight tasks.
    MultiTask { schemes: Vec<SchemeId> },
    RandomMask,
    /// Continues a pretrained checkpoint on one scheme.
    Finetune { scheme: SchemeId },
}

impl Regime {
    pub fn tag(&self) -> String {
        match self {
            Regime::SingleTask { scheme } => format!("single-task:{scheme}"),
            Regime::MultiTask { schemes } => format!(
                "multi-task:{}",
                schemes.iter().map(|s| s.name()).collect::<Vec<_>>().join("+")
            ),
            Regime::RandomMask => "random-mask".into(),
            Regime::Finetune { scheme } => format!("finetune:{scheme}"),
        }
    }

    fn expanded_schemes(schemes: &[SchemeId]) -> Vec<SchemeId> {
        if schemes == [SchemeId::All] {
            SchemeId::CONCRETE.to_vec()
        } else {
            schemes.to_vec()
        }
    }

    /// Whether reward-based early stopping should roll out in RC mode.
    fn conditions_on_return(&self) -> bool {
        match self {
            Regime::SingleTask { scheme } | Regime::Finetune { scheme } => *scheme == SchemeId::Rc,
            _ => false,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EarlyStop {
    ValidationLoss,
    EvaluationReward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSpec {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub early_stop: EarlyStop,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    /// Epochs between reward evaluations.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_eval_rollouts")]
    pub eval_rollouts: usize,
    #[serde(default = "default_waypoint_prob")]
    pub waypoint_prob: f64,
    /// Mask draws per validation trajectory for the validation loss.
    #[serde(default = "default_val_draws")]
    pub val_draws: usize,
    #[serde(default)]
    pub adam: AdamConfig,
}

fn default_eval_every() -> usize {
    10
}

fn default_eval_rollouts() -> usize {
    50
}

fn default_val_draws() -> usize {
    8
}

fn default_waypoint_prob() -> f64 {
    DEFAULT_WAYPOINT_PROB
}

impl RegimeSpec {
    pub fn gridworld(regime: Regime) -> Self {
        Self {
            regime,
            epochs: 6000,
            batch_size: 100,
            learning_rate: 1e-4,
            early_stop: EarlyStop::ValidationLoss,
            patience: 50,
            eval_every: default_eval_every(),
            eval_rollouts: default_eval_rollouts(),
            waypoint_prob: DEFAULT_WAYPOINT_PROB,
            val_draws: default_val_draws(),
            adam: AdamConfig::default(),
        }
    }

    pub fn maze(regime: Regime) -> Self {
        Self {
            epochs: 1000,
            early_stop: EarlyStop::EvaluationReward,
            ..Self::gridworld(regime)
        }
    }

    pub fn gridworld_finetune(scheme: SchemeId) -> Self {
        Self {
            learning_rate: 1e-5,
            ..Self::gridworld(Regime::Finetune { scheme })
        }
    }

    pub fn maze_finetune(scheme: SchemeId) -> Self {
        Self {
            learning_rate: 8e-5,
            epochs: 600,
            ..Self::maze(Regime::Finetune { scheme })
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.val_draws == 0 {
            return Err(Error::Config("val_draws must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        let check = |s: SchemeId| {
            if k < s.min_k() {
                Err(Error::SchemeInapplicable {
                    scheme: s.name().into(),
                    k,
                })
            } else {
                Ok(())
            }
        };
        match &self.regime {
            Regime::SingleTask { scheme } | Regime::Finetune { scheme } => check(*scheme),
            Regime::MultiTask { schemes } => {
                if schemes.is_empty() {
                    return Err(Error::Config("multi-task regime needs at least one scheme".into()));
                }
                schemes.iter().try_for_each(|s| check(*s))
            }
            Regime::RandomMask => check(SchemeId::Rnd),
        }
    }
}

/// Source of per-sample training masks.
pub trait MaskSampler {
    fn sample(&mut self, k: usize, rng: &mut Rng) -> Result<MaskPattern>;
}

/// The mask distribution a regime trains under.
pub struct RegimeSampler {
    regime: Regime,
    waypoint_prob: f64,
}

impl RegimeSampler {
    pub fn new(regime: &Regime, waypoint_prob: f64) -> Self {
        Self {
            regime: regime.clone(),
            waypoint_prob,
        }
    }
}

impl MaskSampler for RegimeSampler {
    fn sample(&mut self, k: usize, rng: &mut Rng) -> Result<MaskPattern> {
        match &self.regime {
            Regime::SingleTask { scheme } | Regime::Finetune { scheme } => {
                sample_mask(*scheme, k, rng, self.waypoint_prob)
            }
            Regime::MultiTask { schemes } => {
                multi_mask(&Regime::expanded_schemes(schemes), k, rng, self.waypoint_prob).map(|(_, m)| m)
            }
            Regime::RandomMask => random_mask(k, rng),
        }
    }
}

/// Always returns the same mask.
pub struct FixedMask(pub MaskPattern);

impl MaskSampler for FixedMask {
    fn sample(&mut self, _k: usize, _rng: &mut Rng) -> Result<MaskPattern> {
        Ok(self.0.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation loss, or evaluation reward when that drives early stopping.
    pub val_metric: Option<f64>,
    pub wall_time: f64,
}

/// Writes `epoch,train_loss,val_metric` rows; wall time is left out so the
/// file is reproducible.
pub fn write_curve(path: impl AsRef<Path>, curve: &[CurvePoint]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("epoch,train_loss,val_metric\n");
    for p in curve {
        let metric = p.val_metric.map(|v| v.to_string()).unwrap_or_default();
        text.push_str(&format!("{},{},{}\n", p.epoch, p.train_loss, metric));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<CurvePoint>,
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
}

/// Training windows: one per trajectory, with a random start when the
/// trajectory is longer than the context.
fn draw_window<'a>(traj: &'a Trajectory, k: usize, rng: &mut Rng) -> Result<crate::traj::Window<'a>> {
    if traj.len() < k {
        return Err(Error::Config(format!(
            "trajectory of length {} is shorter than the context {k}",
            traj.len()
        )));
    }
    let start = rng.random_range(0..=traj.len() - k);
    traj.slice_window(start, k)
}

/// Mean masked loss over `trajectories`, skipping windows without targets.
/// Windows and masks are drawn from `seed`, so repeated calls agree.
pub fn mean_masked_loss(
    model: &Model<f32>,
    dataset_norm: &crate::traj::Normalization,
    trajectories: &[&Trajectory],
    sampler: &mut dyn MaskSampler,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let k = model.config.k;
    let mut r = rng::stream(seed, streams::VALIDATION_BASE);
    let mut sum = 0.0;
    let mut n = 0usize;
    for traj in trajectories {
        for _ in 0..draws {
            let window = draw_window(traj, k, &mut r)?;
            let mask = sampler.sample(k, &mut r)?;
            if mask.num_targets() == 0 {
                continue;
            }
            let x = encode_window::<f32>(&model.config, dataset_norm, &mask.apply(&window))?;
            let out = model.forward(&x)?;
            let loss = masked_loss(&model.config, dataset_norm, &out, window.states, window.actions, &mask)?;
            sum += loss.total as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyTarget);
    }
    Ok(sum / n as f64)
}

/// One optimization step over `batch`; returns the mean loss of the samples
/// that had targets.
pub fn train_step(
    model: &mut Model<f32>,
    opt: &mut Adam,
    norm: &crate::traj::Normalization,
    batch: &[&Trajectory],
    sampler: &mut dyn MaskSampler,
    lr: f64,
    rng: &mut Rng,
) -> Result<Option<f64>> {
    let k = model.config.k;
    let mut grads = model.zero_grads();
    let mut loss_sum = 0.0;
    let mut count = 0usize;
    for traj in batch {
        let window = draw_window(traj, k, rng)?;
        let mask = sampler.sample(k, rng)?;
        if mask.num_targets() == 0 {
            continue;
        }
        let x = encode_window::<f32>(&model.config, norm, &mask.apply(&window))?;
        let (out, cache) = model.forward_cached(&x, Some(rng))?;
        let loss = masked_loss(&model.config, norm, &out, window.states, window.actions, &mask)?;
        model.backward(&cache, &loss.d_action, &loss.d_state, &mut grads);
        loss_sum += loss.total as f64;
        count += 1;
    }
    if count == 0 {
        return Ok(None);
    }
    let inv = 1.0 / count as f32;
    grads.iter_mut().for_each(|g| *g *= inv);
    opt.update(&mut model.params, &grads, lr)?;
    Ok(Some(loss_sum / count as f64))
}

/// Trains a fresh model under `spec.regime` on the canonical maze or gridworld.
pub fn train(dataset: &Dataset, config: &ModelConfig, spec: &RegimeSpec, seed: u64) -> Result<TrainOutcome> {
    Trainer::new(dataset).train(config, spec, seed)
}

/// Continues `base` on a single scheme with fresh optimizer moments.
pub fn finetune(base: &Checkpoint, dataset: &Dataset, spec: &RegimeSpec, seed: u64) -> Result<TrainOutcome> {
    Trainer::new(dataset).finetune(base, spec, seed)
}

/// Training entry points bound to a dataset and, for reward-based early
/// stopping, the maze the rollouts run in.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    maze: Maze,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        Self {
            dataset,
            maze: Maze::canonical(),
        }
    }

    pub fn with_maze(mut self, maze: Maze) -> Self {
        self.maze = maze;
        self
    }

    pub fn train(&self, config: &ModelConfig, spec: &RegimeSpec, seed: u64) -> Result<TrainOutcome> {
        if matches!(spec.regime, Regime::Finetune { .. }) {
            return Err(Error::Config("finetuning starts from a checkpoint, use `finetune`".into()));
        }
        let mut sampler = RegimeSampler::new(&spec.regime, spec.waypoint_prob);
        self.train_with_sampler(config, spec, seed, &mut sampler)
    }

    /// Same loop as [`Trainer::train`] with the mask source supplied by the caller.
    pub fn train_with_sampler(
        &self,
        config: &ModelConfig,
        spec: &RegimeSpec,
        seed: u64,
        sampler: &mut dyn MaskSampler,
    ) -> Result<TrainOutcome> {
        let model = Model::<f32>::init(config.clone(), seed)?;
        let opt = Adam::new(model.num_params(), spec.adam);
        self.run(model, opt, spec, seed, sampler)
    }

    pub fn finetune(&self, base: &Checkpoint, spec: &RegimeSpec, seed: u64) -> Result<TrainOutcome> {
        let Regime::Finetune { .. } = spec.regime else {
            return Err(Error::Config("finetune needs a finetune regime".into()));
        };
        let base_regime = base.regime.as_str();
        if !(base_regime == "random-mask" || base_regime.starts_with("multi-task")) {
            return Err(Error::Checkpoint(format!(
                "finetuning expects a random-mask or multi-task checkpoint, got `{base_regime}`"
            )));
        }
        if spec.epochs == 0 {
            return Ok(TrainOutcome {
                checkpoint: base.clone(),
                curve: Vec::new(),
                best_epoch: 0,
                best_metric: None,
            });
        }
        let model = base.model.clone();
        let opt = Adam::new(model.num_params(), spec.adam);
        let mut sampler = RegimeSampler::new(&spec.regime, spec.waypoint_prob);
        self.run(model, opt, spec, seed, &mut sampler)
    }

fn run(
    &self,
    mut model: Model<f32>,
    mut opt: Adam,
    spec: &RegimeSpec,
    seed: u64,
    sampler: &mut dyn MaskSampler,
) -> Result<TrainOutcome> {
    let dataset = self.dataset;
    let config = model.config.clone();
    if dataset.env != config.env_kind() {
        return Err(Error::EnvMismatch {
            expected: config.env_kind().to_string(),
            found: dataset.env.to_string(),
        });
    }
    spec.validate(config.k)?;
    let train_set: Vec<&Trajectory> = dataset.split(Split::Train).collect();
    let val_set: Vec<&Trajectory> = dataset.split(Split::Validation).collect();
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let norm = dataset.normalization().clone();
    let maximize = spec.early_stop == EarlyStop::EvaluationReward;
    if !maximize && val_set.is_empty() {
        return Err(Error::Config("validation-loss early stopping needs a validation split".into()));
    }
    let env = match (spec.early_stop, config.env_kind()) {
        (EarlyStop::EvaluationReward, EnvKind::Maze) => Some(MazeEnv::new(self.maze.clone())),
        (EarlyStop::EvaluationReward, EnvKind::Gridworld) => {
            return Err(Error::Config("reward early stopping is implemented for the maze only".into()))
        }
        _ => None,
    };
    let reward_mode = if spec.regime.conditions_on_return() {
        RewardMode::Rc
    } else {
        RewardMode::Bc
    };

    let mut r = rng::stream(seed, streams::TRAIN_SHUFFLE);
    let started = Instant::now();
    let mut curve = Vec::with_capacity(spec.epochs);
    let mut best: Option<(f64, usize, Vec<f32>, Adam)> = None;
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=spec.epochs {
        order.shuffle(&mut r);
        let mut epoch_sum = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in order.chunks(spec.batch_size) {
            let batch: Vec<&Trajectory> = chunk.iter().map(|&i| train_set[i]).collect();
            if let Some(l) = train_step(&mut model, &mut opt, &norm, &batch, sampler, spec.learning_rate, &mut r)? {
                epoch_sum += l;
                epoch_batches += 1;
            }
        }
        let train_loss = if epoch_batches > 0 {
            epoch_sum / epoch_batches as f64
        } else {
            f64::NAN
        };
        let metric = match &env {
            None => Some(mean_masked_loss(&model, &norm, &val_set, sampler, spec.val_draws, seed)?),
            Some(env) if epoch % spec.eval_every == 0 || epoch == spec.epochs => Some(mean_episode_return(
                crate::infer::Predictor::new(&model, &norm),
                env,
                reward_mode,
                Some(dataset),
                spec.eval_rollouts,
                seed,
            )?),
            Some(_) => None,
        };
        curve.push(CurvePoint {
            epoch,
            train_loss,
            val_metric: metric,
            wall_time: started.elapsed().as_secs_f64(),
        });
        if let Some(m) = metric {
            let improved = match &best {
                None => true,
                Some((b, ..)) => {
                    if maximize {
                        m > *b
                    } else {
                        m < *b
                    }
                }
            };
            if improved {
                best = Some((m, epoch, model.params.clone(), opt.clone()));
                since_best = 0;
            } else {
                since_best += if env.is_some() { spec.eval_every } else { 1 };
                if since_best >= spec.patience {
                    break;
                }
            }
        }
    }
    let (best_metric, best_epoch) = match best {
        Some((m, e, params, o)) => {
            model.params = params;
            opt = o;
            (Some(m), e)
        }
        None => (None, curve.len()),
    };
    let mut checkpoint = Checkpoint::new(model, norm, spec.regime.tag(), seed);
    checkpoint.optimizer = Some(opt);
    Ok(TrainOutcome {
        checkpoint,
        curve,
        best_epoch,
        best_metric,
    })
}
}
