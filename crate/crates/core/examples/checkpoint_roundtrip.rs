//! Checkpoint and dataset files: write, read back, compare, and show the
//! human-readable headers.
//!
//! cargo run --release --example checkpoint_roundtrip

use trajmask::cli::inspect;
use trajmask::doorkey::{generate_grid_dataset, GridLayout, GRID_HORIZON};
use trajmask::model::checkpoint::Checkpoint;
use trajmask::model::{Arch, ModelConfig};
use trajmask::train::{train, Regime, RegimeSpec};
use trajmask::traj::{Dataset, EnvKind};

fn main() {
    let dir = std::env::temp_dir().join("trajmask-examples");
    std::fs::create_dir_all(&dir).unwrap();
    let data = generate_grid_dataset(&GridLayout::canonical(), 50, 10, GRID_HORIZON, 0).unwrap();
    let config = ModelConfig {
        arch: Arch::Causal,
        embed_dim: 16,
        num_layers: 1,
        num_heads: 2,
        ffn_dim: 32,
        ..ModelConfig::gridworld_default()
    };
    let spec = RegimeSpec {
        epochs: 2,
        learning_rate: 1e-3,
        ..RegimeSpec::gridworld(Regime::RandomMask)
    };
    let ck = train(&data, &config, &spec, 0).unwrap().checkpoint;

    let ck_path = dir.join("roundtrip.ckpt");
    ck.save(&ck_path).unwrap();
    let back = Checkpoint::load_expecting(&ck_path, &config).unwrap();
    println!("checkpoint identical after reload: {}", back.to_bytes() == ck.to_bytes());
    println!("{}", inspect(&ck_path).unwrap());

    let wrong = ModelConfig { k: 5, ..config };
    match Checkpoint::load_expecting(&ck_path, &wrong) {
        Err(e) => println!("loading with k=5 refused: {e}"),
        Ok(_) => println!("unexpected: mismatched config accepted"),
    }

    let data_path = dir.join("roundtrip.traj");
    data.save(&data_path).unwrap();
    println!("\ndataset identical after reload: {}", Dataset::load(&data_path).unwrap() == data);
    println!("{}", inspect(&data_path).unwrap());
    if let Err(e) = Dataset::load_for(&data_path, EnvKind::Maze) {
        println!("loading as a maze dataset refused: {e}");
    }
}
