//! Trains small gridworld models under each regime and scores every one of
//! them on all eight tasks, printing the raw and column-normalized heatmap.
//!
//! cargo run --release --example cross_task_heatmap [epochs]
//!
//! With the default 60 epochs the seven models train in a few minutes.

use trajmask::doorkey::{generate_grid_dataset, GridLayout, GRID_HORIZON};
use trajmask::eval::{cross_task_eval, normalize_heatmap};
use trajmask::masking::SchemeId;
use trajmask::model::checkpoint::Checkpoint;
use trajmask::model::ModelConfig;
use trajmask::train::{finetune, train, Regime, RegimeSpec};

fn main() {
    let epochs: usize = std::env::args().nth(1).map_or(60, |s| s.parse().expect("epochs"));
    let data = generate_grid_dataset(&GridLayout::canonical(), 500, 100, GRID_HORIZON, 0).unwrap();
    let config = ModelConfig {
        embed_dim: 32,
        num_layers: 2,
        num_heads: 4,
        ffn_dim: 64,
        ..ModelConfig::gridworld_default()
    };
    let spec = |regime: Regime| RegimeSpec {
        epochs,
        batch_size: 16,
        learning_rate: 1e-3,
        ..RegimeSpec::gridworld(regime)
    };

    let mut models: Vec<(String, Checkpoint)> = Vec::new();
    let mut add = |name: &str, ck: Checkpoint| {
        println!("trained {name}");
        models.push((name.to_string(), ck));
    };
    let rnd = train(&data, &config, &spec(Regime::RandomMask), 0).unwrap().checkpoint;
    add("random-mask", rnd.clone());
    let all = Regime::MultiTask {
        schemes: vec![SchemeId::All],
    };
    add("multi-task ALL", train(&data, &config, &spec(all), 0).unwrap().checkpoint);
    for scheme in [SchemeId::Goal, SchemeId::Past] {
        let single = train(&data, &config, &spec(Regime::SingleTask { scheme }), 0).unwrap();
        add(&format!("single {scheme}"), single.checkpoint);
        let ft_spec = RegimeSpec {
            learning_rate: 1e-4,
            ..spec(Regime::Finetune { scheme })
        };
        add(&format!("finetune {scheme}"), finetune(&rnd, &data, &ft_spec, 0).unwrap().checkpoint);
    }

    let refs: Vec<(String, &Checkpoint)> = models.iter().map(|(n, c)| (n.clone(), c)).collect();
    let report = cross_task_eval(&refs, &SchemeId::CONCRETE, &data, 16, 0).unwrap();
    let rows: Vec<String> = models.iter().map(|(_, c)| c.regime.clone()).collect();
    let tasks: Vec<String> = SchemeId::CONCRETE.iter().map(|s| s.name().to_string()).collect();
    let grid = report.grid("val_loss", &rows, &tasks);
    let norm = normalize_heatmap(&grid).unwrap();

    print!("\n{:<22}", "");
    for t in &tasks {
        print!("{t:>9}");
    }
    println!();
    for (i, row) in rows.iter().enumerate() {
        print!("{row:<22}");
        for v in &norm[i] {
            print!("{v:>9.3}");
        }
        println!();
    }
    println!("\n(1.000 marks the best model for each task)");
    let out = std::env::temp_dir().join("trajmask-heatmap.csv");
    std::fs::write(&out, grid.to_long_csv().unwrap()).unwrap();
    println!("wrote {}", out.display());
}
