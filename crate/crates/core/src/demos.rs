//! Gridworld queries answered by one model: BC, goal, return and waypoint
//! conditioned rollouts plus backwards inference.

use rand::Rng as _;

use crate::doorkey::{GridEnv, GridState};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::infer::{backwards_infer, conditioned_rollout, Conditioning, Decode, Predictor, Rollout};
use crate::rng::{self, streams, Rng};
use crate::traj::{Dataset, StateToken};

fn grid(s: &StateToken) -> GridState {
    s.grid().expect("gridworld rollout")
}

/// Whether the agent held the key and later stood on the goal.
pub fn reached_key_then_goal(env: &GridEnv, rollout: &Rollout) -> bool {
    let goal = env.layout.goal();
    rollout
        .states
        .iter()
        .map(grid)
        .any(|s| s.has_key() && s.agent == goal)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcDemo {
    pub trials: usize,
    pub successes: usize,
}

impl BcDemo {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.trials.max(1) as f64
    }
}

/// Argmax BC rollouts from `trials` random starts.
pub fn bc_demo(pred: Predictor<'_>, env: &GridEnv, trials: usize, seed: u64) -> Result<BcDemo> {
    let mut successes = 0;
    for i in 0..trials {
        let mut r = rng::stream(seed, streams::ROLLOUT_BASE + i as u64);
        let start = env.reset(&mut r);
        let roll = conditioned_rollout(pred, env, start, &Conditioning::Bc, env.horizon, Decode::Argmax, &mut r)?;
        successes += reached_key_then_goal(env, &roll) as usize;
    }
    Ok(BcDemo { trials, successes })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PinDemo {
    pub trials: usize,
    pub hits: usize,
}

impl PinDemo {
    pub fn rate(&self) -> f64 {
        self.hits as f64 / self.trials.max(1) as f64
    }
}

/// Goal conditioning on validation end states that are not the layout's
/// goal cell. A trial succeeds when the rollout is in the pinned state at
/// the pinned timestep.
pub fn goal_demo(pred: Predictor<'_>, env: &GridEnv, data: &Dataset, seed: u64) -> Result<PinDemo> {
    let k = pred.k();
    let goal = env.layout.goal();
    let mut r = rng::stream(seed, streams::ROLLOUT_BASE);
    let (mut trials, mut hits) = (0, 0);
    for traj in data.validation() {
        if traj.len() < k {
            continue;
        }
        let target = grid(&traj.states()[k - 1]);
        if target.agent == goal {
            continue;
        }
        let start = grid(&traj.states()[0]);
        let cond = Conditioning::Goal(StateToken::Grid(target));
        let roll = conditioned_rollout(pred, env, start, &cond, k - 1, Decode::Argmax, &mut r)?;
        trials += 1;
        hits += (grid(roll.final_state()) == target) as usize;
    }
    if trials == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(PinDemo { trials, hits })
}

/// Waypoint conditioning on one state taken from each validation
/// trajectory at a random timestep in `1..k-1`.
pub fn waypoint_demo(pred: Predictor<'_>, env: &GridEnv, data: &Dataset, seed: u64) -> Result<PinDemo> {
    let k = pred.k();
    let mut r = rng::stream(seed, streams::ROLLOUT_BASE);
    let (mut trials, mut hits) = (0, 0);
    for traj in data.validation() {
        if traj.len() < k || k < 3 {
            continue;
        }
        let tau = r.random_range(1..k - 1);
        let pin = traj.states()[tau];
        let start = grid(&traj.states()[0]);
        let cond = Conditioning::Waypoints(vec![(tau, pin)]);
        let roll = conditioned_rollout(pred, env, start, &cond, env.horizon, Decode::Argmax, &mut r)?;
        trials += 1;
        hits += (roll.states[tau] == pin) as usize;
    }
    if trials == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(PinDemo { trials, hits })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RcDemo {
    pub targets: Vec<f32>,
    pub mean_returns: Vec<f64>,
}

impl RcDemo {
    pub fn strictly_increasing(&self) -> bool {
        self.mean_returns.windows(2).all(|w| w[0] < w[1])
    }
}

/// Training-set return quantile (nearest rank).
pub fn return_quantile(data: &Dataset, q: f64) -> Result<f32> {
    let mut returns: Vec<f32> = data.train().iter().map(|t| t.total_return()).collect();
    if returns.is_empty() {
        return Err(Error::EmptyDataset);
    }
    returns.sort_by(f32::total_cmp);
    let idx = ((returns.len() - 1) as f64 * q).round() as usize;
    Ok(returns[idx])
}

/// Mean achieved return when conditioning on each target from the same
/// `trials` random starts.
pub fn rc_demo(
    pred: Predictor<'_>,
    env: &GridEnv,
    targets: &[f32],
    trials: usize,
    decode: Decode,
    seed: u64,
) -> Result<RcDemo> {
    let mut mean_returns = Vec::with_capacity(targets.len());
    for &target in targets {
        let mut sum = 0.0;
        for i in 0..trials {
            let mut r = rng::stream(seed, streams::ROLLOUT_BASE + i as u64);
            let start = env.reset(&mut r);
            let cond = Conditioning::Rc(target);
            let roll = conditioned_rollout(pred, env, start, &cond, env.horizon, decode, &mut r)?;
            sum += roll.total_return() as f64;
        }
        mean_returns.push(sum / trials.max(1) as f64);
    }
    Ok(RcDemo {
        targets: targets.to_vec(),
        mean_returns,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackwardsDemo {
    pub queries: usize,
    pub exhausted: usize,
    /// Transitions in accepted histories that break the dynamics (always zero).
    pub inconsistent: usize,
    pub mean_attempts: f64,
}

/// Backwards inference from the end states of validation trajectories,
/// cycled until `queries` histories have been requested.
pub fn backwards_demo(
    pred: Predictor<'_>,
    env: &GridEnv,
    data: &Dataset,
    queries: usize,
    steps: usize,
    max_attempts: usize,
    seed: u64,
) -> Result<BackwardsDemo> {
    let finals: Vec<GridState> = data
        .validation()
        .iter()
        .map(|t| grid(&t.states()[t.len() - 1]))
        .collect();
    if finals.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut r: Rng = rng::stream(seed, streams::ROLLOUT_BASE);
    let (mut exhausted, mut inconsistent, mut attempts, mut accepted) = (0, 0, 0usize, 0usize);
    for q in 0..queries {
        match backwards_infer(pred, &env.layout, finals[q % finals.len()], steps, &mut r, max_attempts) {
            Ok(trace) => {
                for (i, a) in trace.actions.iter().enumerate() {
                    inconsistent += (env.layout.step(trace.states[i], *a) != trace.states[i + 1]) as usize;
                }
                attempts += trace.attempts.iter().sum::<usize>();
                accepted += trace.attempts.len();
            }
            Err(Error::RejectionExhausted { .. }) => exhausted += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(BackwardsDemo {
        queries,
        exhausted,
        inconsistent,
        mean_attempts: attempts as f64 / accepted.max(1) as f64,
    })
}
