//! Maze reward table: feedforward, Decision-GPT and bidirectional models at
//! one context length, each scored by BC and return-conditioned rollouts.
//!
//! cargo run --release --example maze_rewards [k] [epochs] [seeds]
//!
//! Defaults (k=5, 60 epochs, 2 seeds) run in several minutes.

use trajmask::eval::{mean_episode_return, RewardMode, RewardSummary};
use trajmask::infer::Predictor;
use trajmask::masking::SchemeId;
use trajmask::maze::{generate_maze_dataset, Maze, MazeEnv, MAZE_HORIZON};
use trajmask::model::{Arch, ModelConfig};
use trajmask::train::{finetune, train, Regime, RegimeSpec};

fn main() {
    let mut args = std::env::args().skip(1);
    let k: usize = args.next().map_or(5, |s| s.parse().expect("k"));
    let epochs: usize = args.next().map_or(60, |s| s.parse().expect("epochs"));
    let seeds: u64 = args.next().map_or(2, |s| s.parse().expect("seeds"));
    let data = generate_maze_dataset(&Maze::canonical(), 900, 100, MAZE_HORIZON, 0).unwrap();
    let env = MazeEnv::canonical();
    let config = |arch: Arch| ModelConfig {
        arch,
        k,
        embed_dim: 32,
        num_layers: 2,
        num_heads: 4,
        ffn_dim: if arch == Arch::Feedforward { 128 } else { 64 },
        ..ModelConfig::maze_default()
    };
    let spec = |regime: Regime| RegimeSpec {
        epochs,
        batch_size: 32,
        learning_rate: 1e-3,
        eval_rollouts: 20,
        ..RegimeSpec::maze(regime)
    };
    let bc_rc = Regime::MultiTask {
        schemes: vec![SchemeId::Bc, SchemeId::Rc],
    };

    let labels = ["feedforward", "decision-gpt", "random-mask", "finetuned"];
    let mut table = vec![[Vec::new(), Vec::new()]; labels.len()];
    for seed in 0..seeds {
        let ff = train(&data, &config(Arch::Feedforward), &spec(bc_rc.clone()), seed).unwrap().checkpoint;
        let gpt = train(&data, &config(Arch::Causal), &spec(bc_rc.clone()), seed).unwrap().checkpoint;
        let rnd = train(&data, &config(Arch::Bidirectional), &spec(Regime::RandomMask), seed).unwrap().checkpoint;
        for (m, mode) in [RewardMode::Bc, RewardMode::Rc].into_iter().enumerate() {
            let scheme = if mode == RewardMode::Bc { SchemeId::Bc } else { SchemeId::Rc };
            let ft_spec = RegimeSpec {
                learning_rate: 1e-4,
                epochs: epochs / 2,
                ..spec(Regime::Finetune { scheme })
            };
            let ft = finetune(&rnd, &data, &ft_spec, seed).unwrap().checkpoint;
            for (row, ck) in [&ff, &gpt, &rnd, &ft].into_iter().enumerate() {
                let pred = Predictor::new(&ck.model, &ck.normalization);
                let r = mean_episode_return(pred, &env, mode, Some(&data), 100, 1000 + seed).unwrap();
                table[row][m].push(r);
            }
        }
        println!("seed {seed} done");
    }

    println!("\ncontext {k}, 100 rollouts x {seeds} seeds, mean +- standard error");
    println!("{:<14}{:>16}{:>16}", "", "BC", "RC");
    for (label, cells) in labels.iter().zip(&table) {
        let fmt = |v: &Vec<f64>| {
            let s = RewardSummary::from_seed_means(v.clone());
            format!("{:.3} +- {:.3}", s.mean, s.stderr)
        };
        println!("{label:<14}{:>16}{:>16}", fmt(&cells[0]), fmt(&cells[1]));
    }
}
