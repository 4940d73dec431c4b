//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use trajmask::doorkey::{generate_grid_dataset, GridLayout, GRID_HORIZON};
use trajmask::masking::MaskPattern;
use trajmask::maze::{generate_maze_dataset, Maze};
use trajmask::model::{encode_window, Arch, Model, ModelConfig};
use trajmask::rng;
use trajmask::train::masked_loss;
use trajmask::traj::{Dataset, EnvKind};

pub fn tiny(arch: Arch, env: EnvKind, dropout: f32) -> ModelConfig {
    ModelConfig {
        arch,
        env,
        k: 3,
        horizon: if env == EnvKind::Maze { 200 } else { GRID_HORIZON },
        embed_dim: 8,
        num_layers: 1,
        num_heads: 2,
        ffn_dim: 12,
        dropout,
        state_loss_weight: 0.7,
    }
}

pub fn dataset(env: EnvKind) -> Dataset {
    match env {
        EnvKind::Gridworld => generate_grid_dataset(&GridLayout::canonical(), 6, 2, GRID_HORIZON, 5).unwrap(),
        EnvKind::Maze => generate_maze_dataset(&Maze::canonical(), 3, 1, 200, 5).unwrap(),
    }
}

/// A mask that scores every state and action while keeping some inputs.
pub fn dense_mask(k: usize) -> MaskPattern {
    let mut m = MaskPattern::hidden(k);
    m.state_in[0] = true;
    m.action_in[1] = true;
    m.rtg_in = true;
    for t in 0..k {
        m.state_out[t] = t != 0;
        m.action_out[t] = t != 1;
    }
    m
}

pub fn loss_and_grad(model: &Model<f64>, env: EnvKind, dropout_seed: Option<u64>) -> (f64, Vec<f64>, Box<dyn Fn(&Model<f64>) -> f64>) {
    let data = dataset(env);
    let traj = data.train()[0].clone();
    let norm = data.normalization().clone();
    let config = model.config.clone();
    let mask = dense_mask(config.k);
    let x: Vec<f64> = {
        let w = traj.slice_window(1, config.k).unwrap();
        encode_window(&config, &norm, &mask.apply(&w)).unwrap()
    };
    let eval = move |m: &Model<f64>| -> (f64, Option<(Vec<f64>, Vec<f64>, trajmask::model::Cache<f64>)>) {
        let w = traj.slice_window(1, config.k).unwrap();
        let mut r = dropout_seed.map(|s| rng::seeded(s));
        let (out, cache) = m.forward_cached(&x, r.as_mut()).unwrap();
        let l = masked_loss(&config, &norm, &out, w.states, w.actions, &mask).unwrap();
        (l.total, Some((l.d_action, l.d_state, cache)))
    };
    let (total, extra) = eval(model);
    let (da, ds, cache) = extra.unwrap();
    let mut grads = model.zero_grads();
    model.backward(&cache, &da, &ds, &mut grads);
    (total, grads, Box::new(move |m| eval(m).0))
}

/// Worst relative error between backprop and central differences over all
/// parameters of a tiny model.
pub fn gradcheck_error(arch: Arch, env: EnvKind, dropout: f32) -> f64 {
    let model: Model<f64> = Model::<f32>::init(tiny(arch, env, dropout), 11).unwrap().cast();
    let (_, grads, f) = loss_and_grad(&model, env, (dropout > 0.0).then_some(99));
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..model.num_params() {
        let mut plus = model.clone();
        plus.params[i] += h;
        let mut minus = model.clone();
        minus.params[i] -= h;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
        let analytic = grads[i];
        let denom = (numeric.abs() + analytic.abs()).max(1e-6);
        let rel = (numeric - analytic).abs() / denom;
        if numeric.abs() + analytic.abs() > 1e-9 {
            checked += 1;
        }
        worst = worst.max(rel);
    }
    assert!(checked > model.num_params() / 4, "too few live parameters: {checked}");
    worst
}

pub fn gradcheck(arch: Arch, env: EnvKind, dropout: f32) {
    let worst = gradcheck_error(arch, env, dropout);
    assert!(worst < 1e-4, "{arch} {env} dropout={dropout}: relative error {worst:e}");
}

