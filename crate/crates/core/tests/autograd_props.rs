use mlcvae::autograd::{grad_check, AdamConfig, Mlp, ParamStore, Tape, Var};
use mlcvae::Result;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Entries bounded away from zero so kinks stay outside the difference
/// stencil.
fn away_from_zero(rng: &mut impl Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || {
        let m = rng.gen_range(0.1..1.5);
        if rng.gen() {
            m
        } else {
            -m
        }
    })
}

type Op = fn(&mut Tape, Var, Var) -> Result<Var>;

fn primitives() -> Vec<(&'static str, Op)> {
    vec![
        ("add", |t, a, b| t.add(a, b)),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
        ("scale", |t, a, _| Ok(t.scale(a, -1.7))),
        ("add_scalar", |t, a, _| Ok(t.add_scalar(a, 0.3))),
        ("relu", |t, a, _| Ok(t.relu(a))),
        ("sigmoid", |t, a, _| Ok(t.sigmoid(a))),
        ("tanh", |t, a, _| Ok(t.tanh(a))),
        ("exp", |t, a, _| Ok(t.exp(a))),
        ("log", |t, a, _| {
            let sq = t.square(a);
            Ok(t.log(sq))
        }),
        ("square", |t, a, _| Ok(t.square(a))),
        ("clamp", |t, a, _| Ok(t.clamp(a, -0.55, 0.65))),
        ("softmax", |t, a, _| Ok(t.softmax(a))),
        ("log_softmax", |t, a, _| Ok(t.log_softmax(a))),
        ("sum_rows", |t, a, _| Ok(t.sum_rows(a))),
        ("mean", |t, a, _| Ok(t.mean(a))),
        ("concat", |t, a, b| t.concat(&[a, b, a])),
        ("slice_cols", |t, a, _| t.slice_cols(a, 1, 2)),
        ("row_kron", |t, a, b| t.row_kron(a, b)),
        ("bce_with_logits", |t, a, b| {
            let target = t.sigmoid(b);
            t.bce_with_logits(a, target)
        }),
        ("matmul_bt", |t, a, b| t.matmul_bt(a, b)),
    ]
}

/// Scalar `Σ W ⊙ op(a, b)` with a fixed random weighting `W`.
fn weighted(tape: &mut Tape, op: Op, seed: u64) -> Result<Var> {
    let a = tape.param("a")?;
    let b = tape.param("b")?;
    let out = op(tape, a, b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(Array2::from_shape_simple_fn(tape.shape(out), || rng.gen_range(-1.0..1.0)));
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_primitive_matches_central_differences(seed in any::<u64>(), rows in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, op) in primitives() {
            let mut store = ParamStore::new();
            store.insert("a", away_from_zero(&mut rng, (rows, 4))).unwrap();
            store.insert("b", away_from_zero(&mut rng, (rows, 4))).unwrap();
            let report = grad_check(&mut store, 1e-5, None, |t| weighted(t, op, seed)).unwrap();
            prop_assert!(report.max_rel_error <= 1e-6, "{}: {:?}", name, report);
        }
    }

    #[test]
    fn matrix_products_match_central_differences(seed in any::<u64>(), m in 1usize..4, k in 1usize..4, n in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.insert("x", away_from_zero(&mut rng, (m, k))).unwrap();
        store.insert("w", away_from_zero(&mut rng, (k, n))).unwrap();
        store.insert("v", away_from_zero(&mut rng, (n, k))).unwrap();
        store.insert("b", away_from_zero(&mut rng, (1, n))).unwrap();
        let report = grad_check(&mut store, 1e-5, None, |t| {
            let x = t.param("x")?;
            let w = t.param("w")?;
            let v = t.param("v")?;
            let b = t.param("b")?;
            let mm = t.matmul(x, w)?;
            let shifted = t.add_row(mm, b)?;
            let af = t.affine(x, v, b)?;
            let bt = t.matmul_bt(x, v)?;
            let both = t.mul(shifted, af)?;
            let all = t.mul(both, bt)?;
            Ok(t.sum(all))
        }).unwrap();
        prop_assert!(report.max_rel_error <= 1e-6, "{:?}", report);
    }

    #[test]
    fn reverse_sweep_is_linear_in_the_output(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = away_from_zero(&mut rng, (3, 4));
        let grad = |ca: f64, cb: f64| {
            let mut t = Tape::new();
            let v = t.input("x", x.clone());
            let s = t.sigmoid(v);
            let f = t.sum(s);
            let e = t.exp(v);
            let g = t.mean(e);
            let fa = t.scale(f, ca);
            let gb = t.scale(g, cb);
            let out = t.add(fa, gb).unwrap();
            t.backward(out).unwrap().wrt(v)
        };
        let combined = grad(alpha, beta);
        let separate = grad(1.0, 0.0) * alpha + grad(0.0, 1.0) * beta;
        prop_assert!((&combined - &separate).iter().all(|d| d.abs() <= 1e-12));
    }
}

#[test]
fn mlp_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mlp = Mlp::new("net", &[5, 7, 3]);
    let mut store = ParamStore::new();
    mlp.init(&mut store, &mut rng).unwrap();
    let x = away_from_zero(&mut rng, (4, 5));
    let report = grad_check(&mut store, 1e-5, None, |t| {
        let xv = t.constant(x.clone());
        let y = mlp.forward(t, xv)?;
        let sq = t.square(y);
        Ok(t.sum(sq))
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-6, "{report:?}");
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut store = ParamStore::new();
    store.insert("p", Array2::from_elem((2, 2), 3.0)).unwrap();
    let target = Array2::from_shape_vec((2, 2), vec![1.0, -2.0, 0.5, 0.0]).unwrap();
    let cfg = AdamConfig {
        lr: 0.05,
        ..AdamConfig::default()
    };
    for _ in 0..2000 {
        store.zero_grads();
        let grads = {
            let mut t = Tape::with_params(&store);
            let p = t.param("p").unwrap();
            let c = t.constant(target.clone());
            let d = t.sub(p, c).unwrap();
            let sq = t.square(d);
            let s = t.sum(sq);
            t.backward(s).unwrap()
        };
        grads.accumulate_into(&mut store);
        store.adam_step(&cfg);
    }
    let p = store.get("p").unwrap();
    assert!((p - &target).iter().all(|d| d.abs() < 1e-3), "{p}");
}
