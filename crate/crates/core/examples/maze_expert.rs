//! Rolls the waypoint PD expert through the point-mass maze and shows how
//! evaluation picks a return target for a new start.
//!
//! cargo run --release --example maze_expert [seed]

use trajmask::env::Environment;
use trajmask::maze::{expert_trajectory, generate_maze_dataset, select_eval_rtg, Maze, MazeEnv, MAZE_HORIZON};
use trajmask::rng;

fn main() {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let maze = Maze::canonical();
    for row in &maze.params.rows {
        println!("{row}");
    }
    let mut r = rng::seeded(seed);
    let start = maze.random_start(&mut r);
    println!("\nstart {:?} goal {:?} (distance {:.2})", start.pos, start.goal, start.goal_distance());

    for noise in [false, true] {
        let mut r = rng::seeded(seed);
        let traj = expert_trajectory(&maze, start, MAZE_HORIZON, noise, &mut r).unwrap();
        let last = traj.states().last().unwrap().vector().unwrap();
        println!(
            "{} expert: return {:.3}, final position ({:.2}, {:.2})",
            if noise { "noisy" } else { "clean" },
            traj.total_return(),
            last[0],
            last[1]
        );
        for t in (0..MAZE_HORIZON).step_by(25) {
            let s = traj.states()[t].vector().unwrap();
            let a = traj.actions()[t].vector().unwrap();
            println!("  t={t:>3} pos ({:>5.2}, {:>5.2}) action ({:>5.2}, {:>5.2})", s[0], s[1], a[0], a[1]);
        }
    }

    let data = generate_maze_dataset(&maze, 300, 20, MAZE_HORIZON, seed).unwrap();
    let mean: f32 = data.train().iter().map(|t| t.total_return()).sum::<f32>() / data.train().len() as f32;
    println!("\n300 noisy episodes: mean return {mean:.3}");
    let env = MazeEnv::canonical();
    let fresh = env.reset(&mut rng::seeded(seed + 1));
    let token = select_eval_rtg(&fresh.observation(), &data).unwrap();
    println!("return target for start {:?}: {:.3} over {} steps", fresh.pos, token.rtg, token.remaining);
}
