//! Drives the CLI pipeline from a config file in-process: generate data,
//! train, evaluate, then replay the training run from its manifest.
//!
//! cargo run --release --example run_config [config.toml]
//!
//! Defaults to `examples/configs/gridworld.toml`, shrunk with overrides so
//! the whole pipeline runs in seconds.

use std::path::PathBuf;

use trajmask::cli::{execute, reproduce};
use trajmask::config::ExperimentConfig;

fn main() {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/gridworld.toml"));
    let out = std::env::temp_dir().join("trajmask-runs");
    let data = out.join("data.traj");
    let small = [
        format!("data.path=\"{}\"", data.display()),
        "data.n_train=60".to_string(),
        "data.n_validation=20".to_string(),
        "train.epochs=5".to_string(),
    ];
    let config = ExperimentConfig::load(&path, &small).unwrap();

    let gen = execute("gen-data", &config, Some(0), &out).unwrap();
    println!("{}", gen.summary);
    std::fs::create_dir_all(&out).unwrap();
    std::fs::copy(gen.dir.join("data.traj"), &data).unwrap();

    let trained = execute("train", &config, Some(0), &out).unwrap();
    println!("{}", trained.summary);
    let ckpt = trained.dir.join("model.ckpt");

    let mut with_ckpt = small.to_vec();
    with_ckpt.push(format!("eval.checkpoints=[{{path=\"{}\"}}]", ckpt.display()));
    with_ckpt.push(format!("query.checkpoint=\"{}\"", ckpt.display()));
    let config = ExperimentConfig::load(&path, &with_ckpt).unwrap();
    for (cmd, seed) in [("eval-loss", None), ("rollout", Some(1)), ("marginals", None)] {
        let run = execute(cmd, &config, seed, &out).unwrap();
        println!("{}", run.summary);
    }

    let again = reproduce(&trained.dir.join("manifest.toml"), &out).unwrap();
    println!("replayed into {}: {}", again.dir.display(), again.summary);
}
