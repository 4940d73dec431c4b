//! Acceptance suite. Prints one `[PASS]` / `[FAIL]` line per criterion.
//!
//! Criteria backed by exact checks fail the process. Criteria that rest on
//! trained models print their verdict and evidence but leave the exit status
//! alone. Trained checkpoints are cached under the cargo test tmp dir, keyed
//! by the library sources and every training input, so repeat runs only
//! re-evaluate.
//!
//! `TRAJMASK_ACCEPTANCE=1,2,5` restricts the run to the listed criteria.

mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng as _;
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use trajmask::demos::{backwards_demo, bc_demo, goal_demo, rc_demo, return_quantile, waypoint_demo};
use trajmask::doorkey::{cell, generate_grid_dataset, Action, GridEnv, GridLayout, GridState, GRID_HORIZON};
use trajmask::eval::{
    compare_summaries, cross_task_eval, mean_episode_return, normalize_heatmap, EvalReport, Grid, Ordering,
    RewardMode, RewardSummary,
};
use trajmask::infer::{backwards_infer, brute_force_predecessors, Decode, Predictor};
use trajmask::masking::{random_mask, sample_mask, SchemeId, DEFAULT_WAYPOINT_PROB};
use trajmask::maze::{generate_maze_dataset, Maze, MazeEnv, MAZE_HORIZON};
use trajmask::model::checkpoint::Checkpoint;
use trajmask::model::{encode_window, Arch, Model, ModelConfig};
use trajmask::rng;
use trajmask::train::{finetune, train, Regime, RegimeSpec};
use trajmask::traj::{ActionToken, Dataset, EnvKind, RtgToken, StateToken, Window};

const SEEDS: [u64; 3] = [0, 1, 2];
const GRID_TASKS: [SchemeId; 4] = [SchemeId::Goal, SchemeId::Rc, SchemeId::Past, SchemeId::Future];
const LOSS_DRAWS: usize = 32;
const MAZE_ROLLOUTS: usize = 200;

fn grid_model() -> ModelConfig {
    ModelConfig {
        embed_dim: 32,
        num_layers: 2,
        num_heads: 4,
        ffn_dim: 64,
        dropout: 0.1,
        ..ModelConfig::gridworld_default()
    }
}

fn grid_spec(regime: Regime) -> RegimeSpec {
    RegimeSpec {
        epochs: 1500,
        batch_size: 16,
        learning_rate: 1e-3,
        patience: 200,
        ..RegimeSpec::gridworld(regime)
    }
}

fn grid_finetune_spec(scheme: SchemeId) -> RegimeSpec {
    RegimeSpec {
        epochs: 500,
        learning_rate: 1e-4,
        patience: 100,
        ..grid_spec(Regime::Finetune { scheme })
    }
}

fn maze_model(arch: Arch, k: usize) -> ModelConfig {
    ModelConfig {
        arch,
        k,
        embed_dim: 32,
        num_layers: 2,
        num_heads: 4,
        ffn_dim: if arch == Arch::Feedforward { 128 } else { 64 },
        dropout: 0.1,
        ..ModelConfig::maze_default()
    }
}

fn maze_spec(regime: Regime) -> RegimeSpec {
    RegimeSpec {
        epochs: 400,
        batch_size: 32,
        learning_rate: 1e-3,
        patience: 100,
        eval_every: 10,
        eval_rollouts: 30,
        ..RegimeSpec::maze(regime)
    }
}

fn maze_finetune_spec(scheme: SchemeId) -> RegimeSpec {
    RegimeSpec {
        epochs: 200,
        learning_rate: 1e-4,
        ..maze_spec(Regime::Finetune { scheme })
    }
}

fn bc_rc() -> Regime {
    Regime::MultiTask {
        schemes: vec![SchemeId::Bc, SchemeId::Rc],
    }
}

struct Verdict {
    pass: bool,
    summary: String,
    evidence: Vec<String>,
}

impl Verdict {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Self {
            pass,
            summary: summary.into(),
            evidence: Vec::new(),
        }
    }

    fn with(mut self, evidence: Vec<String>) -> Self {
        self.evidence = evidence;
        self
    }
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Datasets, the checkpoint cache and the evaluation grid shared across criteria.
struct Lab {
    cache: PathBuf,
    source_hash: String,
    grid_data: Dataset,
    maze_data: Dataset,
    models: BTreeMap<String, Checkpoint>,
    heatmap: Option<(Grid, EvalReport)>,
}

impl Lab {
    fn new() -> Self {
        let cache = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        fs::create_dir_all(&cache).unwrap();
        let mut files = Vec::new();
        collect_sources(&Path::new(env!("CARGO_MANIFEST_DIR")).join("src"), &mut files);
        files.sort();
        let mut h = Sha256::new();
        for f in &files {
            h.update(f.to_string_lossy().as_bytes());
            h.update(fs::read(f).unwrap());
        }
        Self {
            cache,
            source_hash: hex::encode(h.finalize()),
            grid_data: generate_grid_dataset(&GridLayout::canonical(), 500, 100, GRID_HORIZON, 0).unwrap(),
            maze_data: generate_maze_dataset(&Maze::canonical(), 900, 100, MAZE_HORIZON, 0).unwrap(),
            models: BTreeMap::new(),
            heatmap: None,
        }
    }

    fn data(&self, env: EnvKind) -> &Dataset {
        match env {
            EnvKind::Gridworld => &self.grid_data,
            EnvKind::Maze => &self.maze_data,
        }
    }

    /// Trains (or loads) the model `name`, optionally finetuned from `base`.
    fn model(&mut self, name: &str, config: &ModelConfig, spec: &RegimeSpec, seed: u64, base: Option<&str>) -> Checkpoint {
        if let Some(ck) = self.models.get(name) {
            return ck.clone();
        }
        let base_ck = base.map(|b| self.models.get(b).unwrap_or_else(|| panic!("{b} trained first")).clone());
        let data = self.data(config.env);
        let mut bytes = Vec::new();
        data.write_to(&mut bytes).unwrap();
        let key = sha(
            format!(
                "{}|{name}|{config:?}|{spec:?}|{seed}|{}|{}",
                self.source_hash,
                sha(&bytes),
                base_ck.as_ref().map(|c| sha(&c.to_bytes())).unwrap_or_default()
            )
            .as_bytes(),
        );
        let path = self.cache.join(format!("{name}-{}.ckpt", &key[..16]));
        let ck = match Checkpoint::load(&path) {
            Ok(ck) => ck,
            Err(_) => {
                let started = Instant::now();
                let outcome = match &base_ck {
                    Some(b) => finetune(b, data, spec, seed),
                    None => train(data, config, spec, seed),
                }
                .unwrap();
                println!(
                    "      trained {name}: best epoch {} of {}, {:.0}s",
                    outcome.best_epoch,
                    outcome.curve.len(),
                    started.elapsed().as_secs_f64()
                );
                outcome.checkpoint.save(&path).unwrap();
                outcome.checkpoint
            }
        };
        self.models.insert(name.into(), ck.clone());
        ck
    }

    fn grid_rnd(&mut self, seed: u64) -> Checkpoint {
        self.model(&format!("grid-rnd-s{seed}"), &grid_model(), &grid_spec(Regime::RandomMask), seed, None)
    }

    /// Random-mask, ALL, single-task and finetuned models per seed, scored
    /// on all eight tasks.
    fn loss_grid(&mut self) -> (Grid, EvalReport) {
        if let Some(g) = &self.heatmap {
            return g.clone();
        }
        let mut names = Vec::new();
        for seed in SEEDS {
            let rnd = format!("grid-rnd-s{seed}");
            self.grid_rnd(seed);
            names.push(rnd.clone());
            let all = format!("grid-all-s{seed}");
            let regime = Regime::MultiTask {
                schemes: vec![SchemeId::All],
            };
            self.model(&all, &grid_model(), &grid_spec(regime), seed, None);
            names.push(all);
            for task in GRID_TASKS {
                let single = format!("grid-single-{task}-s{seed}");
                self.model(&single, &grid_model(), &grid_spec(Regime::SingleTask { scheme: task }), seed, None);
                names.push(single);
                let ft = format!("grid-ft-{task}-s{seed}");
                self.model(&ft, &grid_model(), &grid_finetune_spec(task), seed, Some(&rnd));
                names.push(ft);
            }
        }
        let cks: Vec<(String, &Checkpoint)> = names.iter().map(|n| (n.clone(), &self.models[n])).collect();
        let report = cross_task_eval(&cks, &SchemeId::CONCRETE, &self.grid_data, LOSS_DRAWS, 0).unwrap();
        let mut rows = vec!["random-mask".to_string(), "multi-task:ALL".to_string()];
        for task in GRID_TASKS {
            rows.push(format!("single-task:{task}"));
            rows.push(format!("finetune:{task}"));
        }
        let tasks: Vec<String> = SchemeId::CONCRETE.iter().map(|s| s.name().to_string()).collect();
        let grid = report.grid("val_loss", &rows, &tasks);
        self.heatmap = Some((grid.clone(), report.clone()));
        (grid, report)
    }
}

fn collect_sources(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            collect_sources(&p, out);
        } else if p.extension().is_some_and(|e| e == "rs") {
            out.push(p);
        }
    }
}

fn masking_distribution(_: &mut Lab) -> Verdict {
    const DRAWS: usize = 100_000;
    let k = 10;
    let mut counts = [0usize; 21];
    let mut r = rng::seeded(2024);
    for _ in 0..DRAWS {
        counts[random_mask(k, &mut r).unwrap().num_hidden()] += 1;
    }
    let expected = DRAWS as f64 / 21.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new(20.0).unwrap().inverse_cdf(0.999);
    Verdict::new(
        stat < critical,
        format!("chi-square {stat:.2} vs critical {critical:.2} (20 dof, alpha 0.001)"),
    )
    .with(vec![format!("hidden-count histogram {counts:?}")])
}

fn gradients(_: &mut Lab) -> Verdict {
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for env in [EnvKind::Gridworld, EnvKind::Maze] {
        for arch in [Arch::Bidirectional, Arch::Causal, Arch::Feedforward] {
            let e = support::gradcheck_error(arch, env, 0.0);
            lines.push(format!("{arch} {env}: worst relative error {e:.2e}"));
            worst = worst.max(e);
        }
    }
    Verdict::new(worst < 1e-4, format!("worst relative error {worst:.2e} < 1e-4 over 6 models")).with(lines)
}

/// Rules restated from the layout description alone.
fn oracle_step(agent: u8, key: u8, action: u8) -> (u8, u8) {
    const WALLS: [(i32, i32); 3] = [(2, 0), (2, 2), (2, 3)];
    const DOOR: (i32, i32) = (2, 1);
    let (x, y) = ((agent % 4) as i32, (agent / 4) as i32);
    let (nx, ny) = match action {
        0 => (x, y - 1),
        1 => (x + 1, y),
        2 => (x, y + 1),
        _ => (x - 1, y),
    };
    let holding = agent == key;
    let blocked = !(0..4).contains(&nx)
        || !(0..4).contains(&ny)
        || WALLS.contains(&(nx, ny))
        || ((nx, ny) == DOOR && !holding);
    if blocked {
        return (agent, key);
    }
    let to = (ny * 4 + nx) as u8;
    let picks_up = holding || to == key;
    (to, if picks_up { to } else { key })
}

fn dynamics_oracle(_: &mut Lab) -> Verdict {
    let layout = GridLayout::canonical();
    let mut mismatches = Vec::new();
    let mut pairs = 0;
    for agent in 0..16u8 {
        for key in 0..16u8 {
            for a in 0..4u8 {
                pairs += 1;
                let got = layout.step(GridState::new(agent, key), Action::from_index(a).unwrap());
                let want = oracle_step(agent, key, a);
                if (got.agent, got.key) != want {
                    mismatches.push(format!("agent {agent} key {key} action {a}: {got:?} vs {want:?}"));
                }
            }
        }
    }
    let mut reversible = 0;
    let mut broken = Vec::new();
    for s in layout.reachable_states() {
        if layout.task_distance(s).is_none() {
            continue;
        }
        for a in Action::ALL {
            let n = layout.step(s, a);
            if n == s || n.has_key() != s.has_key() {
                continue;
            }
            if Action::ALL.iter().any(|b| layout.step(n, *b) == s) {
                reversible += 1;
                let there = layout.reward(s, n).unwrap();
                let back = layout.reward(n, s).unwrap();
                if there + back != 0 {
                    broken.push(format!("{s:?} -> {n:?}: {there} and {back}"));
                }
            }
        }
    }
    let mut evidence: Vec<String> = mismatches.iter().take(5).cloned().collect();
    evidence.extend(broken.iter().take(5).cloned());
    Verdict::new(
        pairs == 1024 && mismatches.is_empty() && broken.is_empty() && reversible > 0,
        format!(
            "{} of {pairs} (state, action) pairs match the rule oracle; {} antisymmetry violations over {reversible} reversible moves",
            pairs - mismatches.len(),
            broken.len()
        ),
    )
    .with(evidence)
}

fn random_token(env: EnvKind, r: &mut rng::Rng) -> (StateToken, ActionToken) {
    match env {
        EnvKind::Gridworld => (
            StateToken::Grid(GridState::new(r.random_range(0..16), r.random_range(0..16))),
            ActionToken::Grid(r.random_range(0..4)),
        ),
        EnvKind::Maze => (
            StateToken::Vector(std::array::from_fn(|_| r.random_range(-5.0..5.0))),
            ActionToken::Vector(std::array::from_fn(|_| r.random_range(-1.0..1.0))),
        ),
    }
}

fn no_leakage(lab: &mut Lab) -> Verdict {
    let mut changed = Vec::new();
    let mut checked = 0;
    for env in [EnvKind::Gridworld, EnvKind::Maze] {
        let config = match env {
            EnvKind::Gridworld => grid_model(),
            EnvKind::Maze => maze_model(Arch::Bidirectional, 10),
        };
        let model = Model::<f32>::init(config.clone(), 5).unwrap();
        let data = lab.data(env);
        let norm = data.normalization();
        let traj = data.train()[0];
        let truth = traj.slice_window(0, config.k).unwrap();
        let mut r = rng::seeded(17);
        for scheme in SchemeId::EVERY {
            for _ in 0..100 {
                let mask = sample_mask(scheme, config.k, &mut r, DEFAULT_WAYPOINT_PROB).unwrap();
                let mut states = truth.states.to_vec();
                let mut actions = truth.actions.to_vec();
                for t in 0..config.k {
                    let (s, a) = random_token(env, &mut r);
                    if !mask.state_in[t] {
                        states[t] = s;
                    }
                    if !mask.action_in[t] {
                        actions[t] = a;
                    }
                }
                let rtg = if mask.rtg_in {
                    truth.rtg
                } else {
                    RtgToken {
                        rtg: r.random_range(-20.0..20.0),
                        ..truth.rtg
                    }
                };
                let altered = Window {
                    states: &states,
                    actions: &actions,
                    rtg,
                    ..truth
                };
                let x0 = encode_window::<f32>(&config, norm, &mask.apply(&truth)).unwrap();
                let x1 = encode_window::<f32>(&config, norm, &mask.apply(&altered)).unwrap();
                let (o0, o1) = (model.forward(&x0).unwrap(), model.forward(&x1).unwrap());
                checked += 1;
                if o0 != o1 {
                    changed.push(format!("{env} {scheme}"));
                }
            }
        }
    }
    let distinct: BTreeSet<&String> = changed.iter().collect();
    Verdict::new(
        changed.is_empty(),
        format!("{} of {checked} perturbations of hidden tokens changed an output (10 schemes x 100, both envs)", changed.len()),
    )
    .with(distinct.into_iter().map(|s| format!("leak under {s}")).collect())
}

fn backwards_soundness(lab: &mut Lab) -> Verdict {
    let layout = GridLayout::canonical();
    let env = GridEnv::canonical();
    let mut lines = Vec::new();

    // 1-step predecessor sets from an untrained model, whose full-support
    // proposals must recover every legal predecessor and nothing else
    let fresh = Model::<f32>::init(grid_model(), 3).unwrap();
    let norm = lab.grid_data.normalization().clone();
    let pred = Predictor::new(&fresh, &norm);
    let mut r = rng::seeded(31);
    let mut set_mismatch = Vec::new();
    let targets = layout.reachable_states();
    for &target in &targets {
        let truth: BTreeSet<(GridState, u8)> = brute_force_predecessors(&layout, target)
            .into_iter()
            .map(|(s, a)| (s, a as u8))
            .collect();
        let mut seen = BTreeSet::new();
        let queries = if truth.is_empty() { 2 } else { 40 * truth.len() };
        for _ in 0..queries {
            match backwards_infer(pred, &layout, target, 1, &mut r, 50_000) {
                Ok(trace) => {
                    seen.insert((trace.states[0], trace.actions[0] as u8));
                }
                Err(trajmask::Error::RejectionExhausted { .. }) => {}
                Err(e) => panic!("{e}"),
            }
        }
        if seen != truth {
            set_mismatch.push(format!("{target:?}: sampled {} vs {} legal", seen.len(), truth.len()));
        }
    }
    lines.push(format!(
        "1-step predecessor sets match brute force for {} of {} reachable targets",
        targets.len() - set_mismatch.len(),
        targets.len()
    ));
    lines.extend(set_mismatch.iter().take(5).cloned());

    let goal_with_key = GridState::new(layout.goal(), layout.goal());
    let expected: BTreeSet<(GridState, u8)> = [
        (GridState::new(cell(3, 0), cell(3, 0)), Action::Down as u8),
        (GridState::new(cell(3, 2), cell(3, 2)), Action::Up as u8),
        (GridState::new(cell(2, 1), cell(2, 1)), Action::Right as u8),
        (GridState::new(cell(3, 1), cell(3, 1)), Action::Right as u8),
    ]
    .into_iter()
    .collect();
    let brute: BTreeSet<(GridState, u8)> = brute_force_predecessors(&layout, goal_with_key)
        .into_iter()
        .map(|(s, a)| (s, a as u8))
        .collect();
    lines.push(format!("goal-with-key predecessors by hand match brute force: {}", brute == expected));

    // 1000 multi-step queries against the trained random-mask model
    let ck = lab.grid_rnd(0);
    let trained = Predictor::new(&ck.model, &ck.normalization);
    let demo = backwards_demo(trained, &env, &lab.grid_data, 1000, 5, 256, 0).unwrap();
    lines.push(format!(
        "trained model: {} queries, {} inconsistent transitions, {} exhausted, {:.2} samples per step",
        demo.queries, demo.inconsistent, demo.exhausted, demo.mean_attempts
    ));
    Verdict::new(
        set_mismatch.is_empty() && brute == expected && demo.inconsistent == 0,
        format!(
            "{} inconsistent transitions in 1000 queries; predecessor sets exact on {} targets",
            demo.inconsistent,
            targets.len() - set_mismatch.len()
        ),
    )
    .with(lines)
}

fn gridworld_demos(lab: &mut Lab) -> Verdict {
    let ck = lab.grid_rnd(0);
    let pred = Predictor::new(&ck.model, &ck.normalization);
    let env = GridEnv::canonical();
    let data = &lab.grid_data;
    let bc = bc_demo(pred, &env, 200, 0).unwrap();
    let goal = goal_demo(pred, &env, data, 0).unwrap();
    let wp = waypoint_demo(pred, &env, data, 0).unwrap();
    let targets: Vec<f32> = [0.1, 0.5, 0.9].iter().map(|q| return_quantile(data, *q).unwrap()).collect();
    let rc = rc_demo(pred, &env, &targets, 400, Decode::Sample, 0).unwrap();
    let back = backwards_demo(pred, &env, data, 200, 5, 256, 0).unwrap();
    let checks = [
        ("BC", bc.rate() >= 0.8),
        ("goal", goal.rate() >= 0.5),
        ("RC", rc.strictly_increasing()),
        ("waypoint", wp.rate() >= 0.7),
        ("backwards", back.inconsistent == 0 && back.exhausted * 20 <= back.queries),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Verdict::new(
        failed.is_empty(),
        if failed.is_empty() {
            "all five demos met their thresholds".to_string()
        } else {
            format!("below threshold: {}", failed.join(", "))
        },
    )
    .with(vec![
        format!("BC reached key then goal in {} of {} starts (>= 80%)", bc.successes, bc.trials),
        format!("goal-conditioned rollouts ended on the alternative goal in {} of {} (>= 50%)", goal.hits, goal.trials),
        format!("RC targets {:?} gave mean returns {:?} (strictly increasing)", rc.targets, rc.mean_returns),
        format!("waypoints visited in {} of {} trials (>= 70%)", wp.hits, wp.trials),
        format!(
            "backwards: {} exhausted and {} inconsistent of {} queries",
            back.exhausted, back.inconsistent, back.queries
        ),
    ])
}

fn grid_rows(grid: &Grid) -> Vec<String> {
    let mut lines = vec![format!("{:<20} {}", "", grid.columns.iter().map(|c| format!("{c:>9}")).collect::<String>())];
    for (i, row) in grid.rows.iter().enumerate() {
        let cells: String = grid.mean[i]
            .iter()
            .map(|v| v.map_or(format!("{:>9}", "-"), |v| format!("{v:>9.4}")))
            .collect();
        lines.push(format!("{row:<20} {cells}"));
    }
    lines
}

fn random_mask_ordering(lab: &mut Lab) -> Verdict {
    let (grid, _) = lab.loss_grid();
    let wins = SchemeId::CONCRETE
        .iter()
        .filter(|t| {
            let rnd = grid.value("random-mask", t.name()).unwrap();
            let all = grid.value("multi-task:ALL", t.name()).unwrap();
            rnd < all
        })
        .count();
    Verdict::new(
        wins >= 6,
        format!("random-mask beats multi-task ALL on {wins} of 8 tasks (3 seeds, need >= 6)"),
    )
    .with(grid_rows(&grid))
}

fn finetune_ordering(lab: &mut Lab) -> Verdict {
    let (grid, _) = lab.loss_grid();
    let mut lines = Vec::new();
    let mut wins = 0;
    for task in GRID_TASKS {
        let ft = grid.value(&format!("finetune:{task}"), task.name()).unwrap();
        let single = grid.value(&format!("single-task:{task}"), task.name()).unwrap();
        wins += (ft < single) as usize;
        lines.push(format!("{task}: finetuned {ft:.4} vs single-task {single:.4}"));
    }
    Verdict::new(wins == GRID_TASKS.len(), format!("finetuned beats single-task on {wins} of 4 tasks")).with(lines)
}

fn heatmap_normalization(lab: &mut Lab) -> Verdict {
    let (grid, _) = lab.loss_grid();
    let normalized = normalize_heatmap(&grid).unwrap();
    let minima: Vec<f64> = (0..grid.columns.len())
        .map(|j| normalized.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
        .collect();
    let exact = minima.iter().all(|m| *m == 1.0);
    Verdict::new(
        exact,
        format!("column minima {minima:?} over a {}x{} grid", grid.rows.len(), grid.columns.len()),
    )
}

fn maze_orderings(lab: &mut Lab) -> Verdict {
    let env = MazeEnv::canonical();
    let mut means: BTreeMap<(String, &'static str), Vec<f64>> = BTreeMap::new();
    for seed in SEEDS {
        let mut evaluated: Vec<(String, Checkpoint, Vec<RewardMode>)> = Vec::new();
        let both = vec![RewardMode::Bc, RewardMode::Rc];
        for (label, arch, k) in [("FF5", Arch::Feedforward, 5), ("GPT5", Arch::Causal, 5), ("GPT10", Arch::Causal, 10)] {
            let ck = lab.model(&format!("maze-{label}-s{seed}"), &maze_model(arch, k), &maze_spec(bc_rc()), seed, None);
            evaluated.push((label.into(), ck, both.clone()));
        }
        for k in [5, 10] {
            let rnd = format!("maze-RND{k}-s{seed}");
            let ck = lab.model(&rnd, &maze_model(Arch::Bidirectional, k), &maze_spec(Regime::RandomMask), seed, None);
            evaluated.push((format!("RND{k}"), ck, both.clone()));
            for (scheme, mode) in [(SchemeId::Bc, RewardMode::Bc), (SchemeId::Rc, RewardMode::Rc)] {
                let name = format!("maze-FT{k}-{scheme}-s{seed}");
                let ck = lab.model(&name, &maze_model(Arch::Bidirectional, k), &maze_finetune_spec(scheme), seed, Some(&rnd));
                evaluated.push((format!("FT{k}"), ck, vec![mode]));
            }
        }
        // every model sees the same held-out starts for a given seed
        let eval_seed = 1000 + seed;
        for (label, ck, modes) in &evaluated {
            let pred = Predictor::new(&ck.model, &ck.normalization);
            for &mode in modes {
                let m = mean_episode_return(pred, &env, mode, Some(&lab.maze_data), MAZE_ROLLOUTS, eval_seed).unwrap();
                means.entry((label.clone(), mode.name())).or_default().push(m);
            }
        }
    }
    let summary = |label: &str, mode: RewardMode| RewardSummary::from_seed_means(means[&(label.to_string(), mode.name())].clone());
    let mut lines = Vec::new();
    for ((label, mode), seed_means) in &means {
        let s = RewardSummary::from_seed_means(seed_means.clone());
        lines.push(format!("{label:<6} {mode:<3} {:.3} +- {:.3}", s.mean, s.stderr));
    }
    let mut comparisons = Vec::new();
    let mut compare = |claim: &str, better: (&str, RewardMode), worse: (&str, RewardMode)| {
        let o = compare_summaries(&summary(better.0, better.1), &summary(worse.0, worse.1));
        comparisons.push((claim.to_string(), o));
    };
    compare("(a) GPT10 > GPT5 on BC", ("GPT10", RewardMode::Bc), ("GPT5", RewardMode::Bc));
    for k in ["5", "10"] {
        for mode in [RewardMode::Bc, RewardMode::Rc] {
            let claim = format!("(b) FT{k} >= RND{k} on {}", mode.name());
            compare(&claim, (&format!("FT{k}"), mode), (&format!("RND{k}"), mode));
        }
    }
    for family in ["GPT5", "FT5"] {
        for mode in [RewardMode::Bc, RewardMode::Rc] {
            let claim = format!("(c) {family} > FF5 on {}", mode.name());
            compare(&claim, (family, mode), ("FF5", mode));
        }
    }
    let count = |o: Ordering| comparisons.iter().filter(|c| c.1 == o).count();
    for (claim, o) in &comparisons {
        lines.push(format!("{claim}: {o:?}"));
    }
    for mode in [RewardMode::Bc, RewardMode::Rc] {
        let o = compare_summaries(&summary("RND5", mode), &summary("FF5", mode));
        lines.push(format!("(not scored) RND5 > FF5 on {}: {o:?}", mode.name()));
    }
    Verdict::new(
        count(Ordering::Reversed) == 0,
        format!(
            "{} hold, {} inconclusive, {} reversed at one standard error ({MAZE_ROLLOUTS} rollouts x {} seeds)",
            count(Ordering::Holds),
            count(Ordering::Inconclusive),
            count(Ordering::Reversed),
            SEEDS.len()
        ),
    )
    .with(lines)
}

fn determinism(lab: &mut Lab) -> Verdict {
    let mut lines = Vec::new();
    let small = ModelConfig {
        embed_dim: 16,
        ffn_dim: 32,
        num_heads: 2,
        ..grid_model()
    };
    let spec = RegimeSpec {
        epochs: 3,
        batch_size: 32,
        learning_rate: 1e-3,
        ..RegimeSpec::gridworld(Regime::RandomMask)
    };
    let a = train(&lab.grid_data, &small, &spec, 9).unwrap().checkpoint.to_bytes();
    let b = train(&lab.grid_data, &small, &spec, 9).unwrap().checkpoint.to_bytes();
    let same_training = a == b;
    lines.push(format!("same-seed training bitwise identical: {same_training}"));

    let tmp = tempfile::tempdir().unwrap();
    let mut data_ok = true;
    for env in [EnvKind::Gridworld, EnvKind::Maze] {
        let data = lab.data(env);
        let path = tmp.path().join(format!("{env}.traj"));
        data.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        let ok = back == *data;
        lines.push(format!("{env} dataset round trip is identity: {ok}"));
        data_ok &= ok;
    }
    let ck = Checkpoint::from_bytes(&a).unwrap();
    let path = tmp.path().join("model.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let ck_ok = back.to_bytes() == a;
    lines.push(format!("checkpoint round trip is identity: {ck_ok}"));

    let manifest_ok = manifest_replay(tmp.path(), &mut lines);
    Verdict::new(
        same_training && data_ok && ck_ok && manifest_ok,
        "training, dataset and checkpoint persistence, and manifest replay are exact",
    )
    .with(lines)
}

fn manifest_replay(dir: &Path, lines: &mut Vec<String>) -> bool {
    const CONFIG: &str = r#"
[env]
kind = "gridworld"

[data]
path = "data.traj"
n_train = 30
n_validation = 10

[model]
arch = "bidirectional"
env = "gridworld"
k = 10
horizon = 10
embed_dim = 8
num_layers = 1
num_heads = 2
ffn_dim = 16
dropout = 0.1
state_loss_weight = 1.0

[train]
epochs = 2
batch_size = 8
learning_rate = 1e-3
early_stop = "validation-loss"
patience = 10
val_draws = 2
regime = { kind = "random-mask" }
"#;
    let bin = env!("CARGO_BIN_EXE_trajmask");
    let run = |args: &[&str]| Command::new(bin).current_dir(dir).args(args).output().unwrap();
    let config = dir.join("exp.toml");
    fs::write(&config, CONFIG).unwrap();
    let mut ok = true;
    for cmd in ["gen-data", "train"] {
        let out = run(&[cmd, "--config", "exp.toml", "--seed", "4"]);
        let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
        let Some(run_dir) = stdout.lines().find_map(|l| l.strip_prefix("wrote ")) else {
            lines.push(format!("{cmd} failed: {}", String::from_utf8_lossy(&out.stderr).trim()));
            return false;
        };
        let run_dir = dir.join(run_dir);
        if cmd == "gen-data" {
            fs::copy(run_dir.join("data.traj"), dir.join("data.traj")).unwrap();
            continue;
        }
        fs::remove_file(&config).unwrap();
        let manifest = run_dir.join("manifest.toml");
        let replay = run(&["--from-manifest", manifest.to_str().unwrap()]);
        let replayed = replay.status.success() && String::from_utf8_lossy(&replay.stdout).contains("reproduced");
        lines.push(format!("train run replayed from its manifest alone: {replayed}"));
        ok &= replayed;
    }
    ok
}

type Criterion = (u32, &'static str, bool, fn(&mut Lab) -> Verdict);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "masking distribution", true, masking_distribution),
        (2, "gradient correctness", true, gradients),
        (3, "dynamics oracle", true, dynamics_oracle),
        (4, "no leakage", true, no_leakage),
        (5, "backwards-inference soundness", true, backwards_soundness),
        (6, "gridworld demos", false, gridworld_demos),
        (7, "random-mask vs multi-task", false, random_mask_ordering),
        (8, "finetune vs single-task", false, finetune_ordering),
        (9, "heatmap normalization", true, heatmap_normalization),
        (10, "maze orderings", false, maze_orderings),
        (11, "determinism and persistence", true, determinism),
    ];
    let only: Option<BTreeSet<u32>> = std::env::var("TRAJMASK_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut lab = Lab::new();
    let mut hard_failures = 0;
    let (mut passed, mut failed) = (0, 0);
    for (id, name, hard, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let started = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(|| check(&mut lab)))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Verdict::new(false, format!("panicked: {msg}"))
            });
        let tag = if verdict.pass { "[PASS]" } else { "[FAIL]" };
        let kind = if hard { "" } else { " (empirical)" };
        println!(
            "{tag} {id:>2} {name}{kind}: {} [{:.1}s]",
            verdict.summary,
            started.elapsed().as_secs_f64()
        );
        for line in &verdict.evidence {
            println!("       {line}");
        }
        if verdict.pass {
            passed += 1;
        } else {
            failed += 1;
            hard_failures += hard as usize;
        }
    }
    println!("acceptance: {passed} passed, {failed} failed, {hard_failures} exact-check failures");
    if hard_failures > 0 {
        std::process::exit(1);
    }
}
