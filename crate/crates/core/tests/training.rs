//! End-to-end training behaviour on small Genz datasets.

use hotrnn::cells::CellKind;
use hotrnn::data::{self, Split, WindowedDataset};
use hotrnn::dynamics::{self, GenzKind, GenzSpec};
use hotrnn::par::Exec;
use hotrnn::seq2seq::{ModelConfig, Seq2SeqModel};
use hotrnn::train::{self, GridSpec, TrainConfig};

fn small_genz(seed: u64) -> WindowedDataset {
    let spec = GenzSpec {
        n_samples: 300,
        seq_len: 30,
        ..GenzSpec::standard(GenzKind::ProductPeak)
    };
    let seqs = dynamics::gen_genz_dataset(&spec, seed, Exec::Sequential).unwrap();
    data::window_and_split(&seqs, 5, 10, 15, seed).unwrap()
}

fn quick(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        max_steps: steps,
        learning_rate: 3e-3,
        eval_every: 20,
        batch_size: 16,
        seed,
        exec: Exec::Sequential,
        ..TrainConfig::default()
    }
}

fn hot_lstm() -> ModelConfig {
    let mut cfg = ModelConfig::new(CellKind::HotLstm, 1, 8);
    cfg.lag = 2;
    cfg.order = 2;
    cfg.rank = 2;
    cfg
}

#[test]
fn validation_loss_falls() {
    let ds = small_genz(1);
    let (tr, va) = (ds.normalized(Split::Train), ds.normalized(Split::Val));
    for kind in [CellKind::Lstm, CellKind::HotLstm] {
        let cfg = ModelConfig { cell: kind, ..hot_lstm() };
        let model = Seq2SeqModel::init(cfg, 1).unwrap();
        let out = train::train(model, &tr, &va, &quick(120, 1)).unwrap();
        let first = out.log[0].val_loss;
        assert!(out.best_val < 0.5 * first, "{kind}: {first} -> {}", out.best_val);
        assert!(!out.diverged);
        assert!(out.log.iter().all(|r| r.train_loss.is_finite() || r.step == 0));
    }
}

#[test]
fn training_is_reproducible_across_exec_modes() {
    let ds = small_genz(2);
    let (tr, va) = (ds.normalized(Split::Train), ds.normalized(Split::Val));
    let run = |exec| {
        let model = Seq2SeqModel::init(hot_lstm(), 5).unwrap();
        train::train(model, &tr, &va, &TrainConfig { exec, ..quick(40, 5) }).unwrap()
    };
    let a = run(Exec::Sequential);
    let b = run(Exec::Sequential);
    let c = run(Exec::Parallel);
    assert_eq!(a.model, b.model);
    assert_eq!(a.log, b.log);
    assert_eq!(a.model, c.model);
    assert_eq!(a.log, c.log);
}

#[test]
fn absurd_learning_rate_loses_to_a_sane_one() {
    let ds = small_genz(3);
    let (tr, va) = (ds.normalized(Split::Train), ds.normalized(Split::Val));
    let sane = train::train(Seq2SeqModel::init(hot_lstm(), 1).unwrap(), &tr, &va, &quick(60, 1)).unwrap();
    let wild = train::train(
        Seq2SeqModel::init(hot_lstm(), 1).unwrap(),
        &tr,
        &va,
        &TrainConfig { learning_rate: 1e10, ..quick(60, 1) },
    )
    .unwrap();
    assert!(wild.diverged || wild.best_val > sane.best_val, "{} vs {}", wild.best_val, sane.best_val);
}

#[test]
fn grid_of_one_is_plain_training() {
    let ds = small_genz(4);
    let (tr, va) = (ds.normalized(Split::Train), ds.normalized(Split::Val));
    let base = quick(40, 9);
    let cands = GridSpec::default().candidates(&hot_lstm(), &base);
    assert_eq!(cands.len(), 1);
    let result = train::grid_search(&tr, &va, &cands, None, 9, Exec::Sequential).unwrap();
    let run = result.best_run();
    let seed = train::derive_seed(9, 0);
    let direct = train::train(
        Seq2SeqModel::init(hot_lstm(), seed).unwrap(),
        &tr,
        &va,
        &TrainConfig { seed, ..base },
    )
    .unwrap();
    assert_eq!(run.outcome.as_ref().unwrap().model, direct.model);
}

#[test]
fn grid_budget_picks_a_seeded_subset() {
    let ds = small_genz(5);
    let (tr, va) = (ds.normalized(Split::Train), ds.normalized(Split::Val));
    let grid = GridSpec {
        rank: vec![1, 2, 4],
        lag: vec![1, 2],
        ..GridSpec::default()
    };
    let cands = grid.candidates(&hot_lstm(), &quick(10, 2));
    assert_eq!(cands.len(), 6);
    let picked = |seed| {
        let r = train::grid_search(&tr, &va, &cands, Some(2), seed, Exec::Sequential).unwrap();
        r.runs.iter().map(|r| r.index).collect::<Vec<_>>()
    };
    let a = picked(7);
    assert_eq!(a.len(), 2);
    assert!(a.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(a, picked(7));
}

#[test]
fn grid_survives_failing_candidates() {
    let ds = small_genz(6);
    let (tr, va) = (ds.normalized(Split::Train), ds.normalized(Split::Val));
    let grid = GridSpec {
        learning_rate: vec![1e-3, 1e12],
        ..GridSpec::default()
    };
    let cands = grid.candidates(&hot_lstm(), &quick(30, 1));
    let result = train::grid_search(&tr, &va, &cands, None, 1, Exec::Sequential).unwrap();
    assert_eq!(result.best_run().train_config.learning_rate, 1e-3);
}
