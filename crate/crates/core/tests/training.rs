mod support;

use proptest::prelude::*;
use trajmask::doorkey::{generate_grid_dataset, GridLayout, GRID_HORIZON};
use trajmask::masking::{sample_mask, MaskPattern, SchemeId, DEFAULT_WAYPOINT_PROB};
use trajmask::model::checkpoint::Checkpoint;
use trajmask::model::{encode_window, Model, ModelConfig};
use trajmask::rng::Rng;
use trajmask::train::{
    finetune, masked_loss, mean_masked_loss, FixedMask, MaskSampler, Regime, RegimeSampler, RegimeSpec, Trainer,
};
use trajmask::traj::Dataset;
use trajmask::Error;

fn small() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        num_layers: 1,
        num_heads: 2,
        ffn_dim: 16,
        dropout: 0.0,
        ..ModelConfig::gridworld_default()
    }
}

fn data(n: usize) -> Dataset {
    generate_grid_dataset(&GridLayout::canonical(), n, 4, GRID_HORIZON, 3).unwrap()
}

fn spec(regime: Regime, epochs: usize) -> RegimeSpec {
    RegimeSpec {
        epochs,
        batch_size: 8,
        learning_rate: 1e-2,
        patience: 1000,
        val_draws: 2,
        ..RegimeSpec::gridworld(regime)
    }
}

/// One full-batch epoch under a fixed mask is one Adam step from the
/// initial weights along the mean gradient, which on the first step moves
/// every parameter by `lr * g / (|g| + eps)`.
#[test]
fn one_epoch_matches_a_hand_computed_adam_step() {
    let d = data(4);
    let config = small();
    let mask = support::dense_mask(config.k);
    let lr = 1e-2;
    let s = RegimeSpec {
        batch_size: 4,
        learning_rate: lr,
        ..spec(Regime::RandomMask, 1)
    };
    let out = Trainer::new(&d)
        .train_with_sampler(&config, &s, 7, &mut FixedMask(mask.clone()))
        .unwrap();

    let init = Model::<f32>::init(config.clone(), 7).unwrap();
    let mut grads = vec![0.0f64; init.num_params()];
    let norm = d.normalization();
    for traj in d.train() {
        let w = traj.slice_window(0, config.k).unwrap();
        let x = encode_window::<f32>(&config, norm, &mask.apply(&w)).unwrap();
        let (o, cache) = init.forward_cached(&x, None).unwrap();
        let l = masked_loss(&config, norm, &o, w.states, w.actions, &mask).unwrap();
        let mut g = init.zero_grads();
        init.backward(&cache, &l.d_action, &l.d_state, &mut g);
        for (acc, gi) in grads.iter_mut().zip(&g) {
            *acc += *gi as f64 / 4.0;
        }
    }
    let trained = &out.checkpoint.model.params;
    let mut worst = 0.0f64;
    let mut compared = 0;
    for i in 0..init.num_params() {
        let g = grads[i];
        let moved = trained[i] as f64 - init.params[i] as f64;
        assert!(moved.abs() <= lr * 1.001, "param {i} moved {moved}");
        // gradients that vanish analytically come out as rounding noise
        if g.abs() > 1e-6 {
            let expected = -lr * g / (g.abs() + 1e-8);
            worst = worst.max((moved - expected).abs());
            compared += 1;
        }
    }
    assert!(compared > init.num_params() / 2);
    assert!(worst < 1e-3 * lr, "worst deviation {worst}");
}

/// A caller-supplied sampler that draws exactly like the single-task regime
/// yields the same weights bit for bit.
#[test]
fn single_task_regime_equals_its_sampler() {
    struct Forward(SchemeId);
    impl MaskSampler for Forward {
        fn sample(&mut self, k: usize, rng: &mut Rng) -> trajmask::Result<MaskPattern> {
            sample_mask(self.0, k, rng, DEFAULT_WAYPOINT_PROB)
        }
    }
    let d = data(12);
    let config = small();
    for scheme in [SchemeId::Goal, SchemeId::Past] {
        let s = spec(Regime::SingleTask { scheme }, 3);
        let t = Trainer::new(&d);
        let a = t.train(&config, &s, 1).unwrap();
        let b = t.train_with_sampler(&config, &s, 1, &mut Forward(scheme)).unwrap();
        assert_eq!(a.checkpoint.model.params, b.checkpoint.model.params, "{scheme}");
        assert_eq!(a.curve.len(), b.curve.len());
    }
}

#[test]
fn same_seed_runs_are_bitwise_identical() {
    let d = data(12);
    let s = spec(Regime::RandomMask, 3);
    let a = Trainer::new(&d).train(&small(), &s, 5).unwrap();
    let b = Trainer::new(&d).train(&small(), &s, 5).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    let c = Trainer::new(&d).train(&small(), &s, 6).unwrap();
    assert_ne!(a.checkpoint.model.params, c.checkpoint.model.params);
}

#[test]
fn finetune_guards_and_zero_epochs() {
    let d = data(8);
    let base = Trainer::new(&d).train(&small(), &spec(Regime::RandomMask, 1), 0).unwrap().checkpoint;
    let zero = RegimeSpec {
        epochs: 0,
        ..spec(Regime::Finetune { scheme: SchemeId::Rc }, 0)
    };
    let same = finetune(&base, &d, &zero, 0).unwrap();
    assert_eq!(same.checkpoint.to_bytes(), base.to_bytes());

    let single = Trainer::new(&d)
        .train(&small(), &spec(Regime::SingleTask { scheme: SchemeId::Bc }, 1), 0)
        .unwrap()
        .checkpoint;
    let ft = spec(Regime::Finetune { scheme: SchemeId::Rc }, 1);
    assert!(matches!(finetune(&single, &d, &ft, 0), Err(Error::Checkpoint(_))));
    assert!(matches!(
        Trainer::new(&d).train(&small(), &ft, 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn finetune_changes_only_through_the_new_scheme() {
    let d = data(8);
    let base = Trainer::new(&d).train(&small(), &spec(Regime::RandomMask, 2), 0).unwrap().checkpoint;
    let ft = finetune(&base, &d, &spec(Regime::Finetune { scheme: SchemeId::Bc }, 2), 0).unwrap();
    assert_eq!(ft.checkpoint.regime, "finetune:BC");
    assert_ne!(ft.checkpoint.model.params, base.model.params);
    assert_eq!(ft.checkpoint.model.config, base.model.config);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// The run stops within `patience` epochs of its best epoch and returns
    /// the weights that scored the best validation loss.
    #[test]
    fn early_stopping_keeps_the_best_epoch(patience in 1usize..4, seed in 0u64..50) {
        let d = data(10);
        let s = RegimeSpec {
            patience,
            learning_rate: 3e-2,
            ..spec(Regime::RandomMask, 12)
        };
        let out = Trainer::new(&d).train(&small(), &s, seed).unwrap();
        let metrics: Vec<f64> = out.curve.iter().map(|p| p.val_metric.unwrap()).collect();
        let best = metrics.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(out.best_metric, Some(best));
        prop_assert_eq!(metrics[out.best_epoch - 1], best);
        prop_assert!(out.curve.len() == s.epochs || out.curve.len() - out.best_epoch == patience);

        let mut sampler = RegimeSampler::new(&s.regime, s.waypoint_prob);
        let val = d.validation();
        let again = mean_masked_loss(&out.checkpoint.model, d.normalization(), &val, &mut sampler, s.val_draws, seed).unwrap();
        prop_assert_eq!(again, best);
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in 0u64..1000) {
        let model = Model::<f32>::init(small(), seed).unwrap();
        let d = data(2);
        let ck = Checkpoint::new(model, d.normalization().clone(), "random-mask", seed);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(&back.model.params, &ck.model.params);
    }
}
