//! Querying trained models: conditioned rollouts, backwards inference with
//! rejection sampling, and state marginals.
//!
//! Windows are anchored at timestep 0 until the episode is longer than the
//! context, after which they slide so the current step sits in the last
//! slot. Slots after the current step stay hidden.

use rand::Rng as _;

use crate::doorkey::{Action, GridLayout, GridState, NUM_CELLS};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::masking::{bc_family_at, MaskPattern, MaskedWindow, SchemeId};
use crate::model::ops::{argmax, softmax_row};
use crate::model::{encode_window, Model, Output};
use crate::rng::Rng;
use crate::traj::{ActionToken, Normalization, RtgToken, StateToken, Trajectory};

/// What a rollout is conditioned on besides its own history.
#[derive(Clone, Debug, PartialEq)]
pub enum Conditioning {
    Bc,
    /// State pinned into the last slot of the window.
    Goal(StateToken),
    /// Target return for the whole episode.
    Rc(f32),
    /// `(timestep, state)` pins, revealed while they fall ahead in the window.
    Waypoints(Vec<(usize, StateToken)>),
}

impl Conditioning {
    fn scheme(&self) -> SchemeId {
        match self {
            Conditioning::Bc => SchemeId::Bc,
            Conditioning::Goal(_) => SchemeId::Goal,
            Conditioning::Rc(_) => SchemeId::Rc,
            Conditioning::Waypoints(_) => SchemeId::Waypoint,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decode {
    Argmax,
    Sample,
}

/// A model bundled with the normalization it was trained under.
#[derive(Clone, Copy)]
pub struct Predictor<'a> {
    pub model: &'a Model<f32>,
    pub norm: &'a Normalization,
}

impl<'a> Predictor<'a> {
    pub fn new(model: &'a Model<f32>, norm: &'a Normalization) -> Self {
        Self { model, norm }
    }

    pub fn k(&self) -> usize {
        self.model.config.k
    }

    pub fn predict(&self, window: &MaskedWindow) -> Result<Output<f32>> {
        let x = encode_window::<f32>(&self.model.config, self.norm, window)?;
        self.model.forward(&x)
    }

    fn decode_action(&self, out: &Output<f32>, slot: usize, decode: Decode, rng: &mut Rng) -> ActionToken {
        let row = out.action_row(slot);
        if self.model.config.is_discrete() {
            let a = match decode {
                Decode::Argmax => argmax(row),
                Decode::Sample => sample_categorical(row, rng),
            };
            ActionToken::Grid(a as u8)
        } else {
            let mut v = [0.0f32; 2];
            self.norm.denormalize_action(row, &mut v);
            ActionToken::Vector(v.map(|x| x.clamp(-1.0, 1.0)))
        }
    }
}

pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let mut p: Vec<f64> = logits.iter().map(|v| *v as f64).collect();
    softmax_row(&mut p);
    p
}

pub fn sample_categorical(logits: &[f32], rng: &mut Rng) -> usize {
    let p = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Where timestep `t` falls in a window of length `k`: `(window start, slot)`.
pub fn window_position(t: usize, k: usize) -> (usize, usize) {
    if t < k {
        (0, t)
    } else {
        (t + 1 - k, k - 1)
    }
}

/// One rollout: `states` has one more entry than `actions` (the state
/// reached after the last action).
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub states: Vec<StateToken>,
    pub actions: Vec<ActionToken>,
    pub rewards: Vec<f32>,
    /// Return-to-go token fed at each step, if any.
    pub rtg_fed: Vec<Option<RtgToken>>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_return(&self) -> f32 {
        self.rewards.iter().sum()
    }

    pub fn final_state(&self) -> &StateToken {
        self.states.last().expect("rollout holds its start state")
    }

    /// The visited states paired with the actions taken in them.
    pub fn to_trajectory(&self) -> Result<Trajectory> {
        Trajectory::new(
            self.states[..self.actions.len()].to_vec(),
            self.actions.clone(),
            self.rewards.clone(),
        )
    }
}

/// Builds the conditioned mask and masked window for step `t` of a rollout.
fn rollout_window(
    k: usize,
    t: usize,
    states: &[StateToken],
    actions: &[ActionToken],
    cond: &Conditioning,
    rtg: Option<RtgToken>,
) -> Result<(MaskPattern, MaskedWindow)> {
    let (ws, i) = window_position(t, k);
    let mut pins: Vec<(usize, StateToken)> = Vec::new();
    let mut interior = Vec::new();
    match cond {
        Conditioning::Goal(g) if i < k - 1 => pins.push((k - 1, *g)),
        Conditioning::Waypoints(w) => {
            for (tau, s) in w {
                if *tau >= ws + k || *tau <= t {
                    continue;
                }
                let slot = tau - ws;
                if slot + 1 < k {
                    interior.push(slot);
                }
                pins.push((slot, *s));
            }
        }
        _ => {}
    }
    let mut mask = bc_family_at(cond.scheme(), k, i, &interior)?;
    let mut window = MaskedWindow {
        states: vec![None; k],
        actions: vec![None; k],
        rtg: None,
    };
    for slot in 0..=i {
        window.states[slot] = Some(states[ws + slot]);
    }
    for slot in 0..i {
        window.actions[slot] = Some(actions[ws + slot]);
    }
    for (slot, s) in pins {
        mask.state_in[slot] = true;
        window.states[slot] = Some(s);
    }
    if mask.rtg_in {
        window.rtg = rtg;
    }
    Ok((mask, window))
}

/// Runs a model as a policy in `env` from `start` for `horizon` steps.
///
/// In RC mode the token fed at each step is the target minus the reward
/// collected before the window start, with the steps left from there.
#[allow(clippy::too_many_arguments)]
pub fn conditioned_rollout<E: Environment>(
    pred: Predictor<'_>,
    env: &E,
    start: E::State,
    cond: &Conditioning,
    horizon: usize,
    decode: Decode,
    rng: &mut Rng,
) -> Result<Rollout> {
    let k = pred.k();
    if let Conditioning::Waypoints(w) = cond {
        if let Some((tau, _)) = w.iter().find(|(tau, _)| *tau >= horizon) {
            return Err(Error::InvalidWaypoint {
                position: *tau,
                lo: 0,
                hi: horizon.saturating_sub(1),
            });
        }
    }
    let mut state = start;
    let mut states = vec![env.observe(&state)];
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards: Vec<f32> = Vec::with_capacity(horizon);
    let mut rtg_fed = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let (ws, i) = window_position(t, k);
        let rtg = match cond {
            Conditioning::Rc(target) => Some(RtgToken {
                rtg: target - rewards[..ws].iter().sum::<f32>(),
                remaining: (horizon - ws) as u32,
            }),
            _ => None,
        };
        let (_, window) = rollout_window(k, t, &states, &actions, cond, rtg)?;
        let out = pred.predict(&window)?;
        let action = pred.decode_action(&out, i, decode, rng);
        let (next, r) = env.step(&state, &action)?;
        actions.push(action);
        rewards.push(r);
        rtg_fed.push(rtg);
        state = next;
        states.push(env.observe(&state));
    }
    Ok(Rollout {
        states,
        actions,
        rewards,
        rtg_fed,
    })
}

/// A history inferred backwards from a final state.
#[derive(Clone, Debug, PartialEq)]
pub struct BackwardsTrace {
    /// Chronological states ending at the conditioned final state.
    pub states: Vec<GridState>,
    pub actions: Vec<Action>,
    /// Samples drawn for each inferred step, latest step first.
    pub attempts: Vec<usize>,
}

/// Samples `steps` predecessors of `final_state` from the model's past
/// predictions, resampling any `(state, action)` whose forward step does not
/// land on the known successor.
#[allow(clippy::too_many_arguments)]
pub fn backwards_infer(
    pred: Predictor<'_>,
    layout: &GridLayout,
    final_state: GridState,
    steps: usize,
    rng: &mut Rng,
    max_attempts: usize,
) -> Result<BackwardsTrace> {
    let k = pred.k();
    if !pred.model.config.is_discrete() {
        return Err(Error::Config("backwards inference needs the discrete gridworld model".into()));
    }
    if steps >= k {
        return Err(Error::Config(format!("at most {} backwards steps fit a window of {k}", k - 1)));
    }
    if !layout.is_reachable(final_state) {
        return Err(Error::InvalidState(format!("{final_state:?} is not reachable")));
    }
    // slots k-1-steps ..= k-1, filled from the right
    let mut states: Vec<Option<StateToken>> = vec![None; k];
    let mut actions: Vec<Option<ActionToken>> = vec![None; k];
    states[k - 1] = Some(StateToken::Grid(final_state));
    let mut attempts = Vec::with_capacity(steps);
    let mut current = final_state;
    for step in 0..steps {
        let slot = k - 2 - step;
        let window = MaskedWindow {
            states: states.clone(),
            actions: actions.clone(),
            rtg: None,
        };
        let out = pred.predict(&window)?;
        let agent_logits = &out.state_row(slot)[..NUM_CELLS];
        let key_logits = &out.state_row(slot)[NUM_CELLS..];
        let action_logits = out.action_row(slot);
        let mut accepted = None;
        for n in 1..=max_attempts {
            let prev = GridState::new(
                sample_categorical(agent_logits, rng) as u8,
                sample_categorical(key_logits, rng) as u8,
            );
            let a = Action::from_index(sample_categorical(action_logits, rng) as u8)?;
            if layout.is_reachable(prev) && layout.step(prev, a) == current {
                accepted = Some((prev, a, n));
                break;
            }
        }
        let (prev, a, n) = accepted.ok_or(Error::RejectionExhausted {
            step,
            attempts: max_attempts,
        })?;
        states[slot] = Some(StateToken::Grid(prev));
        actions[slot] = Some(ActionToken::Grid(a as u8));
        attempts.push(n);
        current = prev;
    }
    let first = k - 1 - steps;
    Ok(BackwardsTrace {
        states: states[first..]
            .iter()
            .map(|s| s.and_then(|s| s.grid()).expect("filled slot"))
            .collect(),
        actions: actions[first..k - 1]
            .iter()
            .map(|a| Action::from_index(a.and_then(|a| a.grid()).expect("filled slot")).expect("valid action"))
            .collect(),
        attempts,
    })
}

/// Factorized state distribution at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct StateMarginal {
    pub agent: Vec<f64>,
    pub key: Vec<f64>,
}

/// Predicted state distribution at `query_t` given only the pinned states.
pub fn future_marginals(
    pred: Predictor<'_>,
    pins: &[(usize, GridState)],
    query_t: usize,
) -> Result<StateMarginal> {
    let k = pred.k();
    if !pred.model.config.is_discrete() {
        return Err(Error::Config("state marginals need the discrete gridworld model".into()));
    }
    if query_t >= k {
        return Err(Error::WindowOutOfRange {
            start: query_t,
            len: 1,
            horizon: k,
        });
    }
    if let Some((_, s)) = pins.iter().find(|(t, _)| *t == query_t) {
        let mut agent = vec![0.0; NUM_CELLS];
        let mut key = vec![0.0; NUM_CELLS];
        agent[s.agent as usize] = 1.0;
        key[s.key as usize] = 1.0;
        return Ok(StateMarginal { agent, key });
    }
    let mut window = MaskedWindow {
        states: vec![None; k],
        actions: vec![None; k],
        rtg: None,
    };
    for (t, s) in pins {
        if *t >= k {
            return Err(Error::WindowOutOfRange {
                start: *t,
                len: 1,
                horizon: k,
            });
        }
        window.states[*t] = Some(StateToken::Grid(*s));
    }
    let out = pred.predict(&window)?;
    let row = out.state_row(query_t);
    Ok(StateMarginal {
        agent: softmax(&row[..NUM_CELLS]),
        key: softmax(&row[NUM_CELLS..]),
    })
}

/// Samples `n` BC rollouts per start state, drawing actions from the policy
/// head instead of taking the argmax.
pub fn sample_full_trajectories<E: Environment>(
    pred: Predictor<'_>,
    env: &E,
    starts: &[E::State],
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<Rollout>> {
    let mut out = Vec::with_capacity(n * starts.len());
    for start in starts {
        for _ in 0..n {
            out.push(conditioned_rollout(
                pred,
                env,
                start.clone(),
                &Conditioning::Bc,
                env.horizon(),
                Decode::Sample,
                rng,
            )?);
        }
    }
    Ok(out)
}

/// Every legal `(state, action)` whose step lands on `target`.
pub fn brute_force_predecessors(layout: &GridLayout, target: GridState) -> Vec<(GridState, Action)> {
    let mut out = Vec::new();
    for s in layout.reachable_states() {
        for a in Action::ALL {
            if layout.step(s, a) == target {
                out.push((s, a));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doorkey::{cell, GridEnv};
    use crate::model::{Arch, ModelConfig};
    use crate::rng;
    use crate::traj::EnvKind;

    fn tiny_grid() -> (Model<f32>, Normalization) {
        let c = ModelConfig {
            arch: Arch::Bidirectional,
            env: EnvKind::Gridworld,
            k: 10,
            horizon: 10,
            embed_dim: 16,
            num_layers: 1,
            num_heads: 2,
            ffn_dim: 32,
            dropout: 0.0,
            state_loss_weight: 1.0,
        };
        (Model::init(c, 1).unwrap(), Normalization::identity(EnvKind::Gridworld))
    }

    #[test]
    fn window_positions() {
        assert_eq!(window_position(0, 5), (0, 0));
        assert_eq!(window_position(4, 5), (0, 4));
        assert_eq!(window_position(5, 5), (1, 4));
        assert_eq!(window_position(12, 5), (8, 4));
    }

    #[test]
    fn zero_horizon_keeps_start() {
        let (m, n) = tiny_grid();
        let env = GridEnv::canonical();
        let start = GridState::new(cell(0, 0), cell(1, 3));
        let r = conditioned_rollout(Predictor::new(&m, &n), &env, start, &Conditioning::Bc, 0, Decode::Argmax, &mut rng::seeded(0))
            .unwrap();
        assert!(r.is_empty());
        assert_eq!(r.states, vec![StateToken::Grid(start)]);
    }

    #[test]
    fn rc_bookkeeping() {
        let (m, n) = tiny_grid();
        let env = GridEnv::canonical();
        let start = GridState::new(cell(0, 0), cell(1, 3));
        let r = conditioned_rollout(Predictor::new(&m, &n), &env, start, &Conditioning::Rc(5.0), 10, Decode::Sample, &mut rng::seeded(2))
            .unwrap();
        for (t, tok) in r.rtg_fed.iter().enumerate() {
            let (ws, _) = window_position(t, 10);
            let tok = tok.unwrap();
            assert_eq!(tok.rtg, 5.0 - r.rewards[..ws].iter().sum::<f32>());
            assert_eq!(tok.remaining as usize, 10 - ws);
        }
    }

    #[test]
    fn waypoint_outside_horizon_rejected() {
        let (m, n) = tiny_grid();
        let env = GridEnv::canonical();
        let start = GridState::new(cell(0, 0), cell(1, 3));
        let cond = Conditioning::Waypoints(vec![(12, StateToken::Grid(start))]);
        let err = conditioned_rollout(Predictor::new(&m, &n), &env, start, &cond, 10, Decode::Argmax, &mut rng::seeded(0));
        assert!(matches!(err, Err(Error::InvalidWaypoint { .. })));
    }

    #[test]
    fn backwards_transitions_are_consistent() {
        let (m, n) = tiny_grid();
        let layout = GridLayout::canonical();
        let goal = GridState::new(layout.goal(), layout.goal());
        let mut r = rng::seeded(4);
        for _ in 0..20 {
            let tr = backwards_infer(Predictor::new(&m, &n), &layout, goal, 4, &mut r, 100_000).unwrap();
            assert_eq!(*tr.states.last().unwrap(), goal);
            for (w, a) in tr.states.windows(2).zip(&tr.actions) {
                assert_eq!(layout.step(w[0], *a), w[1]);
            }
        }
    }

    #[test]
    fn pinned_marginal_is_point_mass() {
        let (m, n) = tiny_grid();
        let s = GridState::new(cell(1, 1), cell(0, 2));
        let d = future_marginals(Predictor::new(&m, &n), &[(3, s)], 3).unwrap();
        assert_eq!(d.agent[s.agent as usize], 1.0);
        let d = future_marginals(Predictor::new(&m, &n), &[(0, s)], 5).unwrap();
        assert!((d.agent.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!((d.key.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
