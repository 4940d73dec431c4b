use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_trajmask");

const CONFIG: &str = r#"
[env]
kind = "gridworld"

[data]
path = "data.traj"
n_train = 40
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
epochs = 3
batch_size = 8
learning_rate = 1e-3
early_stop = "validation-loss"
patience = 50
val_draws = 2
regime = { kind = "random-mask" }

[eval]
draws = 2
rollouts = 4
modes = ["BC"]

[query]
episodes = 3
final_state = [7, 7]
steps = 3
queries = 5
query_t = 5
pins = [{ t = 0, state = [0, 5] }, { t = 3, state = [5, 5] }]
"#;

fn run(dir: &Path, args: &[&str]) -> (bool, String, String) {
    let out = Command::new(BIN).current_dir(dir).args(args).output().unwrap();
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ok(dir: &Path, args: &[&str]) -> PathBuf {
    let (success, stdout, stderr) = run(dir, args);
    assert!(success, "{args:?} failed: {stderr}");
    let line = stdout.lines().rev().find(|l| l.starts_with("wrote ")).expect("run directory reported");
    PathBuf::from(line.trim_start_matches("wrote "))
}

fn abs(dir: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        dir.join(p)
    }
}

#[test]
fn pipeline_and_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("exp.toml"), CONFIG).unwrap();

    let a = abs(d, ok(d, &["gen-data", "--config", "exp.toml", "--seed", "0"]));
    let b = abs(d, ok(d, &["gen-data", "--config", "exp.toml", "--seed", "0"]));
    assert_ne!(a, b, "runs never overwrite each other");
    let bytes = fs::read(a.join("data.traj")).unwrap();
    assert_eq!(bytes, fs::read(b.join("data.traj")).unwrap());
    fs::write(d.join("data.traj"), &bytes).unwrap();

    let train = abs(d, ok(d, &["train", "--config", "exp.toml", "--seed", "1"]));
    let ckpt = train.join("model.ckpt");
    assert!(ckpt.exists() && train.join("curve.csv").exists());

    let base = ckpt.display().to_string();
    let ft = abs(
        d,
        ok(
            d,
            &[
                "finetune", "--config", "exp.toml", "--seed", "1",
                "--set", &format!("finetune.base=\"{base}\""),
                "--set", "train.regime.kind=finetune",
                "--set", "train.regime.scheme=RC",
                "--set", "train.learning_rate=1e-5",
            ],
        ),
    );
    let ft_ckpt = ft.join("model.ckpt").display().to_string();

    let heat = abs(
        d,
        ok(
            d,
            &[
                "heatmap", "--config", "exp.toml",
                "--set", &format!("eval.checkpoints=[{{path=\"{base}\"}},{{path=\"{ft_ckpt}\"}}]"),
            ],
        ),
    );
    let wide = fs::read_to_string(heat.join("heatmap.csv")).unwrap();
    assert_eq!(wide.lines().count(), 3, "{wide}");
    assert_eq!(wide.lines().next().unwrap().split(',').count(), 9);
    let long = fs::read_to_string(heat.join("heatmap_long.csv")).unwrap();
    for task in ["BC", "GOAL", "RC", "WAYPOINT", "FUTURE", "PAST", "FWD_DYN", "INV_DYN"] {
        let col: Vec<f64> = long
            .lines()
            .filter(|l| l.split(',').nth(1) == Some(task))
            .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
            .collect();
        assert_eq!(col.iter().cloned().fold(f64::INFINITY, f64::min), 1.0);
    }

    let q = format!("query.checkpoint=\"{base}\"");
    for cmd in ["rollout", "backwards", "compare-dist"] {
        ok(d, &[cmd, "--config", "exp.toml", "--seed", "2", "--set", &q]);
    }
    ok(d, &["marginals", "--config", "exp.toml", "--set", &q]);
    ok(
        d,
        &["eval-reward", "--config", "exp.toml", "--set", &format!("eval.checkpoints=[{{path=\"{base}\"}}]")],
    );

    // the training run repeats from its manifest alone
    fs::remove_file(d.join("exp.toml")).unwrap();
    let manifest = train.join("manifest.toml").display().to_string();
    let (success, stdout, stderr) = run(d, &["--from-manifest", &manifest]);
    assert!(success, "{stderr}");
    assert!(stdout.contains("reproduced"));

    let (_, stdout, _) = run(d, &["inspect", &base]);
    assert!(stdout.contains("random-mask"));
    let (_, stdout, _) = run(d, &["inspect", "data.traj"]);
    assert!(stdout.contains("40 train / 10 validation"));
}

#[test]
fn errors_are_single_coded_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("exp.toml"), CONFIG).unwrap();
    let cases: [(&[&str], &str); 5] = [
        (&["train", "--config", "exp.toml", "--seed", "0"], "code=E_IO"),
        (&["gen-data", "--config", "exp.toml"], "code=E_CONFIG"),
        (&["gen-data", "--config", "missing.toml", "--seed", "0"], "code=E_IO"),
        (&["gen-data", "--config", "exp.toml", "--seed", "0", "--set", "model.colour=3"], "code=E_CONFIG"),
        (&["gen-data", "--config", "exp.toml", "--seed", "0", "--set", "model.env=\"maze\""], "code=E_ENV_MISMATCH"),
    ];
    for (args, code) in cases {
        let (success, _, stderr) = run(d, args);
        assert!(!success, "{args:?}");
        let line = stderr.trim();
        assert_eq!(line.lines().count(), 1, "{line}");
        assert!(line.starts_with("error ") && line.contains(code), "{args:?}: {line}");
    }
}
