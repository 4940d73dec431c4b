//! Generates the noisy-expert gridworld dataset, prints its statistics and
//! one episode, and round-trips it through a `.traj` file.
//!
//! cargo run --release --example doorkey_dataset [n_train] [seed]

use trajmask::demos::return_quantile;
use trajmask::doorkey::{coords, generate_grid_dataset, GridLayout, GRID_HORIZON};
use trajmask::traj::Dataset;

fn draw(layout: &GridLayout, agent: u8, key: u8) -> String {
    let mut rows = Vec::new();
    for y in 0..4 {
        let row: String = (0..4)
            .map(|x| {
                let c = trajmask::doorkey::cell(x, y);
                match c {
                    _ if c == agent && c == key => 'A',
                    _ if c == agent => 'a',
                    _ if c == key => 'k',
                    _ if layout.is_wall(c) => '#',
                    _ if c == layout.door() => 'D',
                    _ if c == layout.goal() => 'G',
                    _ => '.',
                }
            })
            .collect();
        rows.push(row);
    }
    rows.join(" ")
}

fn main() {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(500, |s| s.parse().expect("n_train"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let layout = GridLayout::canonical();
    let data = generate_grid_dataset(&layout, n, 100, GRID_HORIZON, seed).unwrap();

    let train = data.train();
    let solved = train
        .iter()
        .filter(|t| {
            t.states()
                .iter()
                .any(|s| s.grid().is_some_and(|g| g.has_key() && g.agent == layout.goal()))
        })
        .count();
    println!("{} train / {} validation episodes of {GRID_HORIZON} steps", train.len(), data.validation().len());
    println!("expert reached key then goal in {solved} of {}", train.len());
    for q in [0.1, 0.5, 0.9] {
        println!("return quantile {q}: {}", return_quantile(&data, q).unwrap());
    }

    println!("\nfirst episode (a agent, k key, A agent holding key):");
    let t = train[0];
    for (i, s) in t.states().iter().enumerate() {
        let g = s.grid().unwrap();
        println!(
            "t={i} {}  at {:?} action {:?} reward {:+} rtg {:+}",
            draw(&layout, g.agent, g.key),
            coords(g.agent),
            t.actions()[i].grid().unwrap(),
            t.rewards()[i],
            t.returns_to_go()[i]
        );
    }

    let dir = tempfile_dir();
    let path = dir.join("doorkey.traj");
    data.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    println!("\nsaved {} bytes to {}; reload identical: {}", std::fs::metadata(&path).unwrap().len(), path.display(), back == data);
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join("trajmask-examples");
    std::fs::create_dir_all(&d).unwrap();
    d
}
