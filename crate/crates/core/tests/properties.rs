//! Property tests for the invariants of each layer.

use hotrnn::autodiff::{Tape, Var};
use hotrnn::cells::{self, CellKind, CellParams, CellSpec, CellState, Transition};
use hotrnn::data::{self, Normalizer, Sequence, SeriesTable, Window};
use hotrnn::dynamics::{self, GenzKind, LorenzSpec};
use hotrnn::eval;
use hotrnn::par::Exec;
use hotrnn::seq2seq::{self, ModelConfig, Seq2SeqModel};
use hotrnn::tensor::Tensor;
use hotrnn::train::{self, LogRow, LrSchedule, RmsProp};
use hotrnn::tt::{self, TTWeight};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// A composite graph over every basic op; returns the scalar output.
fn composite(tape: &mut Tape, a: Var, b: Var, w: Var, bias: Var) -> Var {
    let lin = tape.linear(a, w).unwrap();
    let lin = tape.add_bias(lin, bias).unwrap();
    let t = tape.tanh(lin).unwrap();
    let s = tape.sigmoid(b).unwrap();
    let prod = tape.hadamard(t, s).unwrap();
    let both = tape.concat(&[prod, t]).unwrap();
    let part = tape.slice(both, 1, 4).unwrap();
    let scaled = tape.scale(part, -0.7).unwrap();
    let diff = tape.sub(scaled, s).unwrap();
    let sq = tape.mul(diff, diff).unwrap();
    tape.sum(sq)
}

fn composite_inputs(seed: u64) -> Vec<Tensor> {
    let mut r = rng(seed);
    vec![
        Tensor::randn(&[2, 3], 1.0, &mut r),
        Tensor::randn(&[2, 4], 1.0, &mut r),
        Tensor::randn(&[4, 3], 0.8, &mut r),
        Tensor::randn(&[4], 0.5, &mut r),
    ]
}

fn eval_composite(inputs: &[Tensor]) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let v: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = composite(&mut tape, v[0], v[1], v[2], v[3]);
    let g = tape.backward(out).unwrap();
    (tape.value(out).item(), v.iter().map(|&x| g.wrt(x)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn composite_gradients_match_finite_differences(seed in any::<u64>()) {
        let inputs = composite_inputs(seed);
        let (_, grads) = eval_composite(&inputs);
        let h = 1e-5;
        for (k, g) in grads.iter().enumerate() {
            for i in 0..g.len() {
                let mut up = inputs.clone();
                up[k].data_mut()[i] += h;
                let mut down = inputs.clone();
                down[k].data_mut()[i] -= h;
                let numeric = (eval_composite(&up).0 - eval_composite(&down).0) / (2.0 * h);
                prop_assert!(rel_err(g.data()[i], numeric) < 1e-4, "input {k}[{i}]: {} vs {numeric}", g.data()[i]);
            }
        }
    }

    #[test]
    fn backward_is_linear(seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let inputs = composite_inputs(seed);
        let mut tape = Tape::new();
        let v: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
        let f = composite(&mut tape, v[0], v[1], v[2], v[3]);
        let g = {
            let t = tape.tanh(v[0]).unwrap();
            let p = tape.hadamard(t, v[0]).unwrap();
            tape.sum(p)
        };
        let fa = tape.scale(f, a).unwrap();
        let gb = tape.scale(g, b).unwrap();
        let combo = tape.add(fa, gb).unwrap();
        let gc = tape.backward(combo).unwrap();
        let gf = tape.backward(f).unwrap();
        let gg = tape.backward(g).unwrap();
        for &x in &v {
            let lhs = gc.wrt(x);
            let (fx, gx) = (gf.wrt(x), gg.wrt(x));
            for i in 0..lhs.len() {
                let rhs = a * fx.data()[i] + b * gx.data()[i];
                prop_assert!((lhs.data()[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }

    #[test]
    fn identical_graphs_are_bit_identical(seed in any::<u64>()) {
        let inputs = composite_inputs(seed);
        let (v1, g1) = eval_composite(&inputs);
        let (v2, g2) = eval_composite(&inputs);
        prop_assert_eq!(v1.to_bits(), v2.to_bits());
        prop_assert_eq!(g1, g2);
    }
}

fn random_state(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    let mut s: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    s[0] = 1.0;
    s
}

fn random_train(h: usize, l: usize, p: usize, rank: usize, seed: u64) -> TTWeight {
    tt::init_tt(h, l, p, &tt::uniform_ranks(p, rank), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tt_matches_dense_oracle(h in 1usize..=4, l in 1usize..=2, p in 1usize..=3, rank in 1usize..=4, seed in any::<u64>()) {
        let w = random_train(h, l, p, rank, seed);
        let dense = tt::to_dense(&w, tt::DEFAULT_DENSE_CAP).unwrap();
        let mut r = rng(seed ^ 1);
        let s = random_state(w.state_len(), &mut r);
        let a = tt::tt_contract(&w, &s).unwrap();
        let b = tt::dense_contract(&dense, &s).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn tt_is_linear_in_each_core(h in 1usize..=3, l in 1usize..=2, p in 1usize..=3, rank in 1usize..=3, seed in any::<u64>(), k in 0usize..4, alpha in -2.0..2.0f64, beta in -2.0..2.0f64) {
        let w = random_train(h, l, p, rank, seed);
        let core = k % (p + 1);
        let mut r = rng(seed ^ 2);
        let d1 = Tensor::randn(w.cores()[core].shape(), 1.0, &mut r);
        let d2 = Tensor::randn(w.cores()[core].shape(), 1.0, &mut r);
        let s = random_state(w.state_len(), &mut r);
        let with = |d: &Tensor| {
            let mut v = w.clone();
            v.cores_mut()[core] = d.clone();
            tt::tt_contract(&v, &s).unwrap()
        };
        let mix: Vec<f64> = d1.data().iter().zip(d2.data()).map(|(a, b)| alpha * a + beta * b).collect();
        let mixed = with(&Tensor::new(d1.shape().to_vec(), mix).unwrap());
        let (y1, y2) = (with(&d1), with(&d2));
        for i in 0..mixed.len() {
            let rhs = alpha * y1[i] + beta * y2[i];
            prop_assert!((mixed[i] - rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn tt_core_gradients_match_finite_differences(h in 1usize..=3, l in 1usize..=2, p in 1usize..=3, rank in 1usize..=3, seed in any::<u64>()) {
        let w = random_train(h, l, p, rank, seed);
        let mut r = rng(seed ^ 3);
        let s = Tensor::new(vec![2, w.state_len()], [random_state(w.state_len(), &mut r), random_state(w.state_len(), &mut r)].concat()).unwrap();
        let weights = Tensor::randn(&[2, h], 1.0, &mut r);
        let value = |cores: &[Tensor], s: &Tensor| -> (f64, Vec<Tensor>) {
            let mut tape = Tape::new();
            let cv: Vec<Var> = cores.iter().map(|c| tape.var(c.clone())).collect();
            let sv = tape.var(s.clone());
            let wv = tape.var(weights.clone());
            let out = tt::tt_contract_var(&mut tape, &cv, sv).unwrap();
            let y = tape.hadamard(out, wv).unwrap();
            let y = tape.tanh(y).unwrap();
            let loss = tape.sum(y);
            let g = tape.backward(loss).unwrap();
            let mut grads: Vec<Tensor> = cv.iter().map(|&c| g.wrt(c)).collect();
            grads.push(g.wrt(sv));
            (tape.value(loss).item(), grads)
        };
        let cores: Vec<Tensor> = w.cores().to_vec();
        let (_, grads) = value(&cores, &s);
        let eps = 1e-5;
        for (k, g) in grads.iter().enumerate() {
            for i in 0..g.len() {
                let (mut up, mut down) = (cores.clone(), cores.clone());
                let (mut su, mut sd) = (s.clone(), s.clone());
                if k < cores.len() {
                    up[k].data_mut()[i] += eps;
                    down[k].data_mut()[i] -= eps;
                } else {
                    su.data_mut()[i] += eps;
                    sd.data_mut()[i] -= eps;
                }
                let numeric = (value(&up, &su).0 - value(&down, &sd).0) / (2.0 * eps);
                prop_assert!(rel_err(g.data()[i], numeric) < 1e-4, "block {k}[{i}]: {} vs {numeric}", g.data()[i]);
            }
        }
    }

    #[test]
    fn tt_is_smaller_than_dense_when_the_bound_says_so(h in 1usize..=16, l in 1usize..=6, p in 1usize..=3, rank in 1usize..=16) {
        let n = h * l + 1;
        let ranks = tt::uniform_ranks(p, rank);
        let tt_count = tt::param_count(h, l, p, &ranks).unwrap();
        prop_assert!(tt_count <= h * rank * rank + n * rank * rank * p);
        if n.pow(p as u32 - 1) > rank * rank * p {
            prop_assert!(tt_count < tt::dense_param_count(h, l, p));
        }
    }
}

/// MRNN/MLSTM weights re-expressed as a first-order, full-rank train cell.
fn matched_tensor_train(mrnn: &CellParams, kind: CellKind) -> CellParams {
    let spec = mrnn.spec();
    let (h, l) = (spec.hidden, spec.lag);
    let n = h * l + 1;
    let Transition::Matrix(w_hh) = &mrnn.transition else {
        panic!("expected a matrix transition")
    };
    let bias = mrnn.bias.as_ref().unwrap();
    let trains = (0..kind.gates())
        .map(|g| {
            let mut core0 = Tensor::zeros(&[1, h, h]);
            for a in 0..h {
                core0.data_mut()[a * h + a] = 1.0;
            }
            let mut core1 = Tensor::zeros(&[h, n, 1]);
            for r in 0..h {
                let row = g * h + r;
                core1.data_mut()[r * n] = bias.data()[row];
                for i in 0..h * l {
                    core1.data_mut()[r * n + 1 + i] = w_hh.data()[row * h * l + i];
                }
            }
            TTWeight::from_cores(h, l, vec![core0, core1]).unwrap()
        })
        .collect();
    let hot_spec = CellSpec::new(kind, spec.input_dim, h).with_lag(l).with_order(1).with_rank(h);
    CellParams::from_parts(hot_spec, mrnn.w_hx.clone(), None, Transition::Train(trains)).unwrap()
}

fn rollout(params: &CellParams, xs: &[Tensor], history: &[Tensor], memory: Option<&Tensor>) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let hist: Vec<Var> = history.iter().map(|t| tape.var(t.clone())).collect();
    let mem = memory.map(|m| tape.var(m.clone()));
    let mut state = CellState::from_parts(hist, mem);
    let mut out = Vec::new();
    for x in xs {
        let x = tape.var(x.clone());
        let (h, next) = cells::step(&mut tape, &bound, &state, x).unwrap();
        out.push(tape.value(h).data().to_vec());
        state = next;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn first_order_full_rank_train_equals_multi_lag_cell(h in 1usize..=4, l in 1usize..=3, d in 1usize..=2, lstm in any::<bool>(), seed in any::<u64>()) {
        let (base, hot) = if lstm { (CellKind::Mlstm, CellKind::HotLstm) } else { (CellKind::Mrnn, CellKind::HotRnn) };
        let mut r = rng(seed);
        let mrnn = CellParams::init(CellSpec::new(base, d, h).with_lag(l), &mut r, 1 << 20).unwrap();
        let hot = matched_tensor_train(&mrnn, hot);
        let xs: Vec<Tensor> = (0..5).map(|_| Tensor::randn(&[d], 1.0, &mut r)).collect();
        let hist: Vec<Tensor> = (0..l).map(|_| Tensor::randn(&[h], 0.5, &mut r)).collect();
        let mem = lstm.then(|| Tensor::randn(&[h], 0.5, &mut r));
        let a = rollout(&mrnn, &xs, &hist, mem.as_ref());
        let b = rollout(&hot, &xs, &hist, mem.as_ref());
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn single_lag_multi_lag_cell_is_the_first_order_cell(h in 1usize..=4, d in 1usize..=3, lstm in any::<bool>(), seed in any::<u64>()) {
        let (multi, plain) = if lstm { (CellKind::Mlstm, CellKind::Lstm) } else { (CellKind::Mrnn, CellKind::Rnn) };
        let mut r = rng(seed);
        let m = CellParams::init(CellSpec::new(multi, d, h).with_lag(1), &mut r, 1 << 20).unwrap();
        let p = CellParams::from_parts(CellSpec::new(plain, d, h), m.w_hx.clone(), m.bias.clone(), m.transition.clone()).unwrap();
        let xs: Vec<Tensor> = (0..5).map(|_| Tensor::randn(&[d], 1.0, &mut r)).collect();
        let hist = vec![Tensor::randn(&[h], 0.5, &mut r)];
        let mem = lstm.then(|| Tensor::randn(&[h], 0.5, &mut r));
        prop_assert_eq!(rollout(&m, &xs, &hist, mem.as_ref()), rollout(&p, &xs, &hist, mem.as_ref()));
    }

    #[test]
    fn tensor_train_cell_matches_its_dense_expansion(h in 1usize..=3, l in 1usize..=2, p in 1usize..=3, rank in 1usize..=3, seed in any::<u64>()) {
        let mut r = rng(seed);
        let hot = CellParams::init(CellSpec::new(CellKind::HotRnn, 2, h).with_lag(l).with_order(p).with_rank(rank), &mut r, 1 << 20).unwrap();
        let Transition::Train(trains) = &hot.transition else { panic!("expected trains") };
        let dense = tt::to_dense(&trains[0], tt::DEFAULT_DENSE_CAP).unwrap();
        let hornn = CellParams::from_parts(
            CellSpec::new(CellKind::Hornn, 2, h).with_lag(l).with_order(p),
            hot.w_hx.clone(),
            None,
            Transition::Dense(dense),
        ).unwrap();
        let xs: Vec<Tensor> = (0..4).map(|_| Tensor::randn(&[2], 1.0, &mut r)).collect();
        let hist: Vec<Tensor> = (0..l).map(|_| Tensor::randn(&[h], 0.5, &mut r)).collect();
        let a = rollout(&hot, &xs, &hist, None);
        let b = rollout(&hornn, &xs, &hist, None);
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn history_holds_the_last_lag_outputs(l in 1usize..=4, k in 0usize..8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let spec = CellSpec::new(CellKind::Mrnn, 1, 2).with_lag(l);
        let params = CellParams::init(spec, &mut r, 1 << 20).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let mut state = CellState::zeros(&mut tape, &spec, None);
        let mut outputs = Vec::new();
        for _ in 0..k {
            let x = tape.var(Tensor::randn(&[1], 1.0, &mut r));
            let (h, next) = cells::step(&mut tape, &bound, &state, x).unwrap();
            outputs.push(tape.value(h).clone());
            state = next;
        }
        let hist: Vec<Tensor> = state.history().map(|v| tape.value(v).clone()).collect();
        prop_assert_eq!(hist.len(), l);
        for (j, t) in hist.iter().enumerate() {
            let expected = if j < k { outputs[k - 1 - j].clone() } else { Tensor::zeros(&[2]) };
            prop_assert_eq!(t, &expected);
        }
    }
}

fn small_model(kind: CellKind, layers: usize, seed: u64) -> Seq2SeqModel {
    let mut cfg = ModelConfig::new(kind, 2, 3);
    cfg.layers = layers;
    cfg.lag = 2;
    cfg.order = 2;
    cfg.rank = 2;
    Seq2SeqModel::init(cfg, seed).unwrap()
}

fn kind_strategy() -> impl Strategy<Value = CellKind> {
    prop::sample::select(CellKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn longer_horizons_extend_shorter_ones(kind in kind_strategy(), layers in 1usize..=2, t1 in 1usize..6, t2 in 1usize..6, seed in any::<u64>()) {
        let model = small_model(kind, layers, seed);
        let mut r = rng(seed);
        let window: Vec<Vec<f64>> = (0..4).map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
        let short = seq2seq::predict(&model, &[&window], t1).unwrap();
        let long = seq2seq::predict(&model, &[&window], t1 + t2).unwrap();
        prop_assert_eq!(&long[0][..t1], &short[0][..]);
    }

    #[test]
    fn decoder_continues_the_encoder_on_matched_weights(kind in kind_strategy(), layers in 1usize..=2, seed in any::<u64>()) {
        let mut model = small_model(kind, layers, seed);
        model.decoder = model.encoder.clone();
        let mut r = rng(seed);
        let window: Vec<Tensor> = (0..4).map(|_| Tensor::randn(&[2], 1.0, &mut r)).collect();

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let xs: Vec<Var> = window.iter().map(|t| tape.var(t.clone())).collect();
        let preds = seq2seq::forecast(&mut tape, &bound, &xs, 3).unwrap();
        let got: Vec<Tensor> = preds.iter().map(|&p| tape.value(p).clone()).collect();

        // Keep stepping the encoder stack: the last observation, then each prediction.
        let mut tape2 = Tape::new();
        let bound2 = model.bind(&mut tape2);
        let xs2: Vec<Var> = window.iter().map(|t| tape2.var(t.clone())).collect();
        let mut states = seq2seq::encode(&mut tape2, &bound2, &xs2).unwrap();
        let mut input = *xs2.last().unwrap();
        for g in &got {
            let h = seq2seq::stack_step(&mut tape2, &bound2.encoder, &mut states, input).unwrap();
            let y = seq2seq::head(&mut tape2, &bound2, h).unwrap();
            prop_assert_eq!(tape2.value(y), g);
            input = y;
        }
    }

    #[test]
    fn forecasts_ignore_targets(seed in any::<u64>()) {
        let model = small_model(CellKind::HotLstm, 1, seed);
        let mut r = rng(seed);
        let input: Sequence = (0..4).map(|_| vec![r.random_range(-1.0..1.0), 0.5]).collect();
        let w = |target: Sequence| Window { input: input.clone(), target, source: 0, offset: 0 };
        let a = w(vec![vec![0.0, 0.0]; 3]);
        let b = w(vec![vec![9.0, -9.0]; 3]);
        let n = Normalizer::identity(2);
        let fa = eval::forecast_windows(&model, &[a], &n, 3, 4, Exec::Sequential).unwrap();
        let fb = eval::forecast_windows(&model, &[b], &n, 3, 4, Exec::Sequential).unwrap();
        prop_assert_eq!(fa, fb);
    }

    #[test]
    fn evaluation_is_a_pure_function(seed in any::<u64>()) {
        let model = small_model(CellKind::Mlstm, 1, seed);
        let mut r = rng(seed);
        let windows: Vec<Window> = (0..5).map(|i| Window {
            input: (0..4).map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect(),
            target: (0..6).map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect(),
            source: i,
            offset: 0,
        }).collect();
        let n = Normalizer { mean: vec![0.5, -1.0], std: vec![2.0, 0.5] };
        let a = eval::rmse_by_horizon(&model, &windows, &n, &[1, 3, 6], Exec::Parallel).unwrap();
        let b = eval::rmse_by_horizon(&model, &windows, &n, &[1, 3, 6], Exec::Sequential).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.iter().all(|&(_, e)| e >= 0.0));
    }
}

fn table_strategy() -> impl Strategy<Value = SeriesTable> {
    (1usize..5, 1usize..40).prop_flat_map(|(d, n)| {
        prop::collection::vec(prop::collection::vec(prop::option::weighted(0.7, -100.0..100.0f64), d), n).prop_map(move |rows| {
            let t0 = data::parse_timestamp("2021-06-01T00:00:00").unwrap();
            let stamps = (0..rows.len()).map(|i| t0 + chrono::Duration::minutes(5 * i as i64)).collect();
            let names = (0..d).map(|c| format!("c{c}")).collect();
            SeriesTable::new(stamps, names, rows, "prop").unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn imputation_leaves_nothing_missing(t in table_strategy()) {
        let (out, dropped) = data::impute_cross_sectional(&t);
        prop_assert_eq!(out.missing_count(), 0);
        prop_assert_eq!(out.len() + dropped, t.len());
        prop_assert_eq!(dropped, t.rows().iter().filter(|r| r.iter().all(Option::is_none)).count());
    }

    #[test]
    fn splits_partition_the_sequences(n in 1usize..400, seed in any::<u64>()) {
        let a = data::SplitAssignment::by_seed(n, seed);
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let (tr, va, te) = data::split_counts(n);
        prop_assert_eq!((a.train.len(), a.val.len(), a.test.len()), (tr, va, te));
    }

    #[test]
    fn windows_never_cross_splits(n in 3usize..60, len in 6usize..30, stride in 1usize..5, seed in any::<u64>()) {
        let seqs: Vec<Sequence> = (0..n).map(|s| (0..len).map(|t| vec![(s * 1000 + t) as f64]).collect()).collect();
        let ds = data::window_and_split(&seqs, 3, 2, stride, seed).unwrap();
        for w in &ds.train { prop_assert!(ds.assignment.train.contains(&w.source)); }
        for w in &ds.val { prop_assert!(ds.assignment.val.contains(&w.source)); }
        for w in &ds.test { prop_assert!(ds.assignment.test.contains(&w.source)); }
        for w in ds.train.iter().chain(&ds.val).chain(&ds.test) {
            prop_assert_eq!(w.input.last().unwrap()[0] + 1.0, w.target[0][0]);
        }
    }

    #[test]
    fn stride_w_windows_tile_the_sequence(len in 2usize..80, w_in in 1usize..10, seed in any::<u64>()) {
        prop_assume!(w_in < len);
        let mut r = rng(seed);
        let seq: Sequence = (0..len).map(|_| vec![r.random::<f64>()]).collect();
        let windows = data::window_sequence(&seq, w_in, 1, w_in, 0).unwrap();
        let joined: Sequence = windows.iter().flat_map(|w| w.input.clone()).collect();
        prop_assert_eq!(&joined[..], &seq[..joined.len()]);
        prop_assert!(joined.len() + w_in + 1 > len);
    }

    #[test]
    fn rotation_is_cyclic(len in 1usize..60, period in 1usize..20) {
        let seq: Sequence = (0..len).map(|t| vec![t as f64]).collect();
        let rot = data::rotate_augment(std::slice::from_ref(&seq), period).unwrap();
        prop_assert_eq!(rot.len(), len / period);
        for (k, r) in rot.iter().enumerate() {
            for t in 0..len {
                prop_assert_eq!(r[t][0], ((t + k * period) % len) as f64);
            }
        }
    }

    #[test]
    fn sequence_csv_round_trips(seqs in prop::collection::vec(prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 2), 1..6), 0..5)) {
        let mut buf = Vec::new();
        data::write_sequences(&mut buf, &seqs).unwrap();
        prop_assert_eq!(data::read_sequences(buf.as_slice()).unwrap(), seqs);
    }

    #[test]
    fn rmse_and_log_csv_round_trip(vals in prop::collection::vec((1usize..100, any::<u64>(), 0.0..1e6f64, any::<f64>().prop_filter("finite", |v| v.is_finite())), 0..10)) {
        let rows: Vec<eval::RmseRow> = vals.iter().map(|&(h, s, e, _)| eval::RmseRow { horizon: h, model: "hot_lstm".into(), seed: s, rmse: e }).collect();
        let mut buf = Vec::new();
        eval::write_rmse_csv(&mut buf, &rows).unwrap();
        prop_assert_eq!(eval::read_rmse_csv(buf.as_slice()).unwrap(), rows);
        let log: Vec<LogRow> = vals.iter().map(|&(h, _, e, x)| LogRow { step: h, train_loss: x, val_loss: e, lr: e * 1e-9 }).collect();
        let mut buf = Vec::new();
        train::write_log(&mut buf, &log).unwrap();
        prop_assert_eq!(train::read_log(buf.as_slice()).unwrap(), log);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn genz_maps_stay_bounded(seed in any::<u64>()) {
        let mut r = rng(seed);
        for kind in GenzKind::ALL {
            let mut x: f64 = r.random_range(-0.1..=0.1);
            for _ in 0..10_000 {
                x = dynamics::genz_step(kind, 0.5, 1.0, x).unwrap();
                prop_assert!(x.abs() <= 10.0, "{kind} left the band: {x}");
            }
        }
    }

    #[test]
    fn resampled_points_are_spaced_by_arc_length(x0 in prop::array::uniform3(-0.1..0.1f64)) {
        let spec = LorenzSpec { n_points: 30, ..LorenzSpec::default() };
        let traj = dynamics::lorenz_integrate(&spec, x0).unwrap();
        let raw = spec.integrate_raw(x0, *traj.step_index.last().unwrap()).unwrap();
        let seg = |k: usize| {
            let (a, b) = (raw[k], raw[k + 1]);
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
        };
        let mut prev = 0;
        for &idx in &traj.step_index {
            let arc: f64 = (prev..idx).map(seg).sum();
            prop_assert!(arc >= spec.resample_distance - 1e-9);
            prop_assert!(arc <= spec.resample_distance + traj.max_segment + 1e-9);
            prev = idx;
        }
    }

    #[test]
    fn rmsprop_accumulators_stay_non_negative(grads in prop::collection::vec(prop::collection::vec(-1e3..1e3f64, 3), 1..40), lr in 1e-5..1e-1f64) {
        let mut theta = Tensor::zeros(&[3]);
        let mut opt = RmsProp::new(lr, &[&theta]);
        for g in grads {
            opt.step(&mut [&mut theta], &[Tensor::vector(g)]).unwrap();
            prop_assert!(opt.v[0].data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn learning_rate_never_increases(initial in 1e-5..1e-1f64, interval in 1usize..2000, a in 0usize..20_000, b in 0usize..20_000) {
        let s = LrSchedule { initial, decay: 0.8, interval };
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(s.lr_at(hi) <= s.lr_at(lo));
    }
}
