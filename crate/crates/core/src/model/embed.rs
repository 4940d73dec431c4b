use super::{ModelConfig, Real};
use crate::error::{Error, Result};
use crate::masking::MaskedWindow;
use crate::traj::{ActionToken, Normalization, StateToken};

/// Stacks one row per timestep: `[state | flag | action | flag | rtg pair | flag]`.
/// Hidden tokens are zero-filled with their flag cleared; the return-to-go
/// pair only appears on row 0.
pub fn encode_window<T: Real>(
    config: &ModelConfig,
    norm: &Normalization,
    window: &MaskedWindow,
) -> Result<Vec<T>> {
    let k = config.k;
    if window.states.len() != k || window.actions.len() != k {
        return Err(Error::Config(format!(
            "window has {} states and {} actions, model context is {k}",
            window.states.len(),
            window.actions.len()
        )));
    }
    let (sd, ad, width) = (config.state_dim(), config.action_dim(), config.input_dim());
    let mut out = vec![T::zero(); k * width];
    let f = |v: f32| T::from_f32(v).unwrap();
    let mut scratch = [0.0f32; 4];
    for t in 0..k {
        let row = &mut out[t * width..(t + 1) * width];
        if let Some(s) = &window.states[t] {
            match (s, config.is_discrete()) {
                (StateToken::Grid(g), true) if (g.agent.max(g.key) as usize) < sd / 2 => {
                    row[g.agent as usize] = T::one();
                    row[sd / 2 + g.key as usize] = T::one();
                }
                (StateToken::Vector(v), false) => {
                    norm.normalize_state(v, &mut scratch[..sd]);
                    for i in 0..sd {
                        row[i] = f(scratch[i]);
                    }
                }
                _ => return Err(mismatch(config)),
            }
            row[sd] = T::one();
        }
        let a0 = sd + 1;
        if let Some(a) = &window.actions[t] {
            match (a, config.is_discrete()) {
                (ActionToken::Grid(i), true) if (*i as usize) < ad => row[a0 + *i as usize] = T::one(),
                (ActionToken::Vector(v), false) => {
                    norm.normalize_action(v, &mut scratch[..ad]);
                    for i in 0..ad {
                        row[a0 + i] = f(scratch[i]);
                    }
                }
                _ => return Err(mismatch(config)),
            }
            row[a0 + ad] = T::one();
        }
    }
    if let Some(r) = window.rtg {
        let r0 = sd + 1 + ad + 1;
        out[r0] = f(norm.normalize_rtg(r.rtg));
        out[r0 + 1] = f(r.remaining as f32 / config.horizon as f32);
        out[r0 + 2] = T::one();
    }
    Ok(out)
}

fn mismatch(config: &ModelConfig) -> Error {
    Error::Config(format!("token does not fit the {} model", config.env))
}
