use crate::doorkey::NUM_CELLS;
use crate::error::{Error, Result};
use crate::masking::MaskPattern;
use crate::model::ops::log_softmax_row;
use crate::model::{ModelConfig, Output, Real};
use crate::traj::{ActionToken, Normalization, StateToken};

/// Masked loss of one window together with its gradient w.r.t. the head outputs.
#[derive(Clone, Debug)]
pub struct Loss<T> {
    pub total: T,
    pub action: T,
    pub state: T,
    pub n_action: usize,
    pub n_state: usize,
    pub d_action: Vec<T>,
    pub d_state: Vec<T>,
}

/// Cross-entropy (gridworld) or squared error (maze) averaged over the
/// scored action tokens, plus `state_loss_weight` times the same over the
/// scored state tokens. A gridworld state is two categorical factors whose
/// cross-entropies are summed.
pub fn masked_loss<T: Real>(
    config: &ModelConfig,
    norm: &Normalization,
    out: &Output<T>,
    states: &[StateToken],
    actions: &[ActionToken],
    mask: &MaskPattern,
) -> Result<Loss<T>> {
    let n_action = mask.action_out.iter().filter(|b| **b).count();
    let n_state = mask.state_out.iter().filter(|b| **b).count();
    if n_action + n_state == 0 {
        return Err(Error::EmptyTarget);
    }
    let (ad, sd) = (config.action_dim(), config.state_dim());
    let mut d_action = vec![T::zero(); out.action.len()];
    let mut d_state = vec![T::zero(); out.state.len()];
    let mut action_sum = T::zero();
    let mut state_sum = T::zero();
    let w = T::from_f32(config.state_loss_weight).unwrap();
    let mut scratch = [0.0f32; 4];

    if n_action > 0 {
        let scale = T::one() / T::from_usize(n_action).unwrap();
        for t in (0..config.k).filter(|&t| mask.action_out[t]) {
            let row = out.action_row(t);
            let grad = &mut d_action[t * ad..(t + 1) * ad];
            action_sum += match &actions[t] {
                ActionToken::Grid(a) => cross_entropy(row, *a as usize, grad, scale),
                ActionToken::Vector(v) => {
                    norm.normalize_action(v, &mut scratch[..ad]);
                    squared_error(row, &scratch[..ad], grad, scale)
                }
            };
        }
    }
    if n_state > 0 {
        let scale = w / T::from_usize(n_state).unwrap();
        for t in (0..config.k).filter(|&t| mask.state_out[t]) {
            let row = out.state_row(t);
            let grad = &mut d_state[t * sd..(t + 1) * sd];
            state_sum += match &states[t] {
                StateToken::Grid(g) => {
                    let (ga, gk) = grad.split_at_mut(NUM_CELLS);
                    cross_entropy(&row[..NUM_CELLS], g.agent as usize, ga, scale)
                        + cross_entropy(&row[NUM_CELLS..], g.key as usize, gk, scale)
                }
                StateToken::Vector(v) => {
                    norm.normalize_state(v, &mut scratch[..sd]);
                    squared_error(row, &scratch[..sd], grad, scale)
                }
            };
        }
    }
    let action = if n_action > 0 {
        action_sum / T::from_usize(n_action).unwrap()
    } else {
        T::zero()
    };
    let state = if n_state > 0 {
        state_sum / T::from_usize(n_state).unwrap()
    } else {
        T::zero()
    };
    Ok(Loss {
        total: action + w * state,
        action,
        state,
        n_action,
        n_state,
        d_action,
        d_state,
    })
}

/// Returns `-log softmax(logits)[target]` and writes `scale * (p - onehot)`.
fn cross_entropy<T: Real>(logits: &[T], target: usize, grad: &mut [T], scale: T) -> T {
    let mut lp = vec![T::zero(); logits.len()];
    log_softmax_row(logits, &mut lp);
    for (i, (g, l)) in grad.iter_mut().zip(&lp).enumerate() {
        let onehot = if i == target { T::one() } else { T::zero() };
        *g = scale * (l.exp() - onehot);
    }
    -lp[target]
}

/// Mean squared error over the dimensions of one token.
fn squared_error<T: Real>(pred: &[T], target: &[f32], grad: &mut [T], scale: T) -> T {
    let n = T::from_usize(pred.len()).unwrap();
    let two = T::from_f64(2.0).unwrap();
    let mut sum = T::zero();
    for ((g, p), t) in grad.iter_mut().zip(pred).zip(target) {
        let diff = *p - T::from_f32(*t).unwrap();
        sum += diff * diff;
        *g = scale * two * diff / n;
    }
    sum / n
}
