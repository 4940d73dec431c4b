//! Trains a random-mask bidirectional model on the gridworld and saves the
//! checkpoint for the other examples.
//!
//! cargo run --release --example train_gridworld [epochs] [out.ckpt]
//!
//! 300 epochs take about a minute on one core; the acceptance suite uses 1500.

use std::time::Instant;

use trajmask::doorkey::{generate_grid_dataset, GridLayout, GRID_HORIZON};
use trajmask::model::ModelConfig;
use trajmask::train::{train, write_curve, Regime, RegimeSpec};

fn main() {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(300, |s| s.parse().expect("epochs"));
    let out = args
        .next()
        .unwrap_or_else(|| std::env::temp_dir().join("trajmask-gridworld.ckpt").display().to_string());

    let data = generate_grid_dataset(&GridLayout::canonical(), 500, 100, GRID_HORIZON, 0).unwrap();
    let config = ModelConfig {
        embed_dim: 32,
        num_layers: 2,
        num_heads: 4,
        ffn_dim: 64,
        ..ModelConfig::gridworld_default()
    };
    let spec = RegimeSpec {
        epochs,
        batch_size: 16,
        learning_rate: 1e-3,
        patience: 200,
        ..RegimeSpec::gridworld(Regime::RandomMask)
    };
    println!("{} parameters, {epochs} epochs", config.param_count());

    let started = Instant::now();
    let outcome = train(&data, &config, &spec, 0).unwrap();
    for p in outcome.curve.iter().step_by((outcome.curve.len() / 10).max(1)) {
        println!("epoch {:>5}  train {:.4}  validation {:.4}", p.epoch, p.train_loss, p.val_metric.unwrap());
    }
    println!(
        "best epoch {} (validation {:.4}) after {:.1}s",
        outcome.best_epoch,
        outcome.best_metric.unwrap(),
        started.elapsed().as_secs_f64()
    );
    outcome.checkpoint.save(&out).unwrap();
    write_curve(format!("{out}.curve.csv"), &outcome.curve).unwrap();
    println!("wrote {out}");
}
