//! One random-mask model answering every gridworld query: behavior cloning,
//! goal, return and waypoint conditioning, backwards inference and
//! future-state marginals, plus how far its own rollouts drift from the
//! data's state-action distribution.
//!
//! cargo run --release --example gridworld_demos [model.ckpt]
//!
//! Defaults to the checkpoint written by `train_gridworld`.

use trajmask::demos::{backwards_demo, bc_demo, goal_demo, rc_demo, return_quantile, waypoint_demo};
use trajmask::doorkey::{cell, generate_grid_dataset, GridEnv, GridLayout, GridState, GRID_HORIZON};
use trajmask::eval::distribution_compare;
use trajmask::infer::{future_marginals, Decode, Predictor};
use trajmask::rng;
use trajmask::model::checkpoint::Checkpoint;

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("trajmask-gridworld.ckpt").display().to_string());
    let ck = Checkpoint::load(&path).unwrap_or_else(|e| panic!("{e}; run the train_gridworld example first"));
    let pred = Predictor::new(&ck.model, &ck.normalization);
    let env = GridEnv::canonical();
    let data = generate_grid_dataset(&GridLayout::canonical(), 500, 100, GRID_HORIZON, 0).unwrap();

    let bc = bc_demo(pred, &env, 200, 0).unwrap();
    println!("BC: key then goal in {}/{} random starts", bc.successes, bc.trials);

    let goal = goal_demo(pred, &env, &data, 0).unwrap();
    println!("goal: ended on the pinned state in {}/{}", goal.hits, goal.trials);

    let targets: Vec<f32> = [0.1, 0.5, 0.9].iter().map(|q| return_quantile(&data, *q).unwrap()).collect();
    let rc = rc_demo(pred, &env, &targets, 400, Decode::Sample, 0).unwrap();
    for (t, m) in rc.targets.iter().zip(&rc.mean_returns) {
        println!("RC: target {t:+} -> mean return {m:.3}");
    }

    let wp = waypoint_demo(pred, &env, &data, 0).unwrap();
    println!("waypoint: visited in {}/{}", wp.hits, wp.trials);

    let back = backwards_demo(pred, &env, &data, 200, 5, 256, 0).unwrap();
    println!(
        "backwards: {} queries, {} exhausted, {} broken transitions, {:.1} samples per step",
        back.queries, back.exhausted, back.inconsistent, back.mean_attempts
    );

    // where does the agent stand at t=4 when it starts top-left with the key below it?
    let start = GridState::new(cell(0, 0), cell(0, 2));
    let m = future_marginals(pred, &[(0, start)], 4).unwrap();
    println!("\nagent marginal at t=4 from {start:?}:");
    for y in 0..4 {
        let row: Vec<String> = (0..4).map(|x| format!("{:.2}", m.agent[cell(x, y) as usize])).collect();
        println!("  {}", row.join(" "));
    }

    let cmp = distribution_compare(pred, &env, &data.validation(), 4, &mut rng::seeded(0)).unwrap();
    println!("\nstate-action visitation, total variation from the data: {:.3}", cmp.tv);
}
