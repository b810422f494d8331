//! Naive reference implementations shared by the integration tests.
#![allow(dead_code)]

use mlcvae::tensor::{khatri_rao, kronecker, CpFactors, DenseTensor, TuckerFactors};
use ndarray::Array2;
use rand::Rng;

/// Every multi-index of `shape`, first mode fastest.
pub fn indices(shape: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![];
    let mut idx = vec![0; shape.len()];
    let total: usize = shape.iter().product();
    for _ in 0..total {
        out.push(idx.clone());
        for (i, &e) in idx.iter_mut().zip(shape) {
            *i += 1;
            if *i < e {
                break;
            }
            *i = 0;
        }
    }
    out
}

pub fn naive_cp(factors: &[Array2<f64>]) -> DenseTensor {
    let shape: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
    let rank = factors[0].ncols();
    DenseTensor::from_fn(shape, |idx| {
        (0..rank)
            .map(|r| idx.iter().zip(factors).map(|(&i, f)| f[[i, r]]).product::<f64>())
            .sum()
    })
    .unwrap()
}

pub fn naive_tucker(core: &DenseTensor, factors: &[Array2<f64>]) -> DenseTensor {
    let shape: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
    let core_idx = indices(core.shape());
    DenseTensor::from_fn(shape, |idx| {
        core_idx
            .iter()
            .map(|r| core.get(r) * idx.iter().zip(r).zip(factors).map(|((&i, &j), f)| f[[i, j]]).product::<f64>())
            .sum()
    })
    .unwrap()
}

/// Khatri-Rao of every factor except `k`, highest mode leftmost.
pub fn kr_except(factors: &[Array2<f64>], k: usize) -> Array2<f64> {
    let mut acc: Option<Array2<f64>> = None;
    for (t, f) in factors.iter().enumerate().rev() {
        if t == k {
            continue;
        }
        acc = Some(match acc {
            None => f.clone(),
            Some(a) => khatri_rao(a.view(), f.view()).unwrap(),
        });
    }
    acc.unwrap()
}

pub fn kron_except(factors: &[Array2<f64>], k: usize) -> Array2<f64> {
    let mut acc: Option<Array2<f64>> = None;
    for (t, f) in factors.iter().enumerate().rev() {
        if t == k {
            continue;
        }
        acc = Some(match acc {
            None => f.clone(),
            Some(a) => kronecker(a.view(), f.view()),
        });
    }
    acc.unwrap()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

pub fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    diff / b.mapv(|v| v * v).sum().sqrt().max(1e-300)
}

pub fn tensor_rel_err(a: &DenseTensor, b: &DenseTensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum();
    diff.sqrt() / b.norm().max(1e-300)
}

/// Worst relative error over one random CP and one random Tucker instance:
/// reconstructions against the naive loops, then the matrix-form identity
/// on every mode.
pub fn algebra_instance(rng: &mut impl Rng) -> f64 {
    let order = rng.gen_range(2..=4);
    let shape: Vec<usize> = (0..order).map(|_| rng.gen_range(1..=4)).collect();
    let rank = rng.gen_range(1..=3);
    let cp_factors: Vec<_> = shape.iter().map(|&e| random_matrix(rng, e, rank)).collect();
    let cp = CpFactors::new(cp_factors.clone()).unwrap();
    let x = cp.reconstruct();
    let mut worst = tensor_rel_err(&x, &naive_cp(&cp_factors));
    for k in 0..order {
        let form = cp_factors[k].dot(&kr_except(&cp_factors, k).t());
        worst = worst.max(rel_err(&x.unfold(k).unwrap(), &form));
    }

    let ranks: Vec<usize> = (0..order).map(|_| rng.gen_range(1..=3)).collect();
    let core = DenseTensor::from_fn(ranks.clone(), |_| rng.gen_range(-1.0..1.0)).unwrap();
    let factors: Vec<_> = shape.iter().zip(&ranks).map(|(&e, &r)| random_matrix(rng, e, r)).collect();
    let tucker = TuckerFactors::new(core.clone(), factors.clone()).unwrap();
    let y = tucker.reconstruct();
    worst = worst.max(tensor_rel_err(&y, &naive_tucker(&core, &factors)));
    for k in 0..order {
        let form = factors[k].dot(&core.unfold(k).unwrap()).dot(&kron_except(&factors, k).t());
        worst = worst.max(rel_err(&y.unfold(k).unwrap(), &form));
    }
    worst
}

pub mod fixtures {
    use mlcvae::conditioning::{Attribute, AttributeSpec, LabelCombo, Variant};
    use mlcvae::data::LabeledDataset;
    use mlcvae::model::{Batch, ImageShape, MlcVaeModel, ModeTag, ModelConfig, UnlabeledConfig};
    use mlcvae::rng;
    use mlcvae::model::standard_normal;

    pub const TINTS: [[u8; 3]; 3] = [[255, 0, 0], [0, 200, 0], [30, 60, 255]];

    pub fn shape_color_spec() -> AttributeSpec {
        AttributeSpec::new(vec![
            Attribute::new("shape", &["bar", "cross", "box", "dot"]),
            Attribute::new("color", &["red", "green", "blue"]),
        ])
        .unwrap()
    }

    /// 6×6 glyphs with per-image jitter, tinted by color class.
    pub fn synthetic(n: usize, seed: u64) -> LabeledDataset {
        use rand::Rng;
        let mut r = rng::stream(seed, rng::streams::DATA);
        let mut gray = Vec::with_capacity(n * 36);
        let (mut shapes, mut colors, mut tints) = (vec![], vec![], vec![]);
        for i in 0..n {
            let s = i % 4;
            let c = (i / 4 + i) % 3;
            for y in 0..6 {
                for x in 0..6 {
                    let on = match s {
                        0 => x == 2 || x == 3,
                        1 => x == y || x + y == 5,
                        2 => x == 0 || y == 0 || x == 5 || y == 5,
                        _ => (2..4).contains(&x) && (2..4).contains(&y),
                    };
                    let base: u8 = if on { 230 } else { 10 };
                    gray.push(base.saturating_add(r.gen_range(0..20)));
                }
            }
            shapes.push(s);
            colors.push(c);
            tints.push(TINTS[c]);
        }
        LabeledDataset::new(shape_color_spec(), 6, 6, gray, tints, vec![shapes, colors]).unwrap()
    }

    pub fn image() -> ImageShape {
        ImageShape { height: 6, width: 6, channels: 3 }
    }

    pub fn config(mode: ModeTag, unlabeled: bool) -> ModelConfig {
        ModelConfig {
            mode,
            variant: match mode {
                ModeTag::Lc => Variant::Linear,
                _ => Variant::Tucker { ranks: [3, 4, 3] },
            },
            latent_dim: 3,
            beta: 1.0,
            hidden: vec![12, 8],
            unlabeled: unlabeled.then(|| UnlabeledConfig {
                attribute: "color".into(),
                tau: 0.5,
                entropy_weight: 0.1,
                hidden: 10,
            }),
        }
    }

    /// Every model shape: MLC with Tucker and CP, LC, cVAE, and MLC with an
    /// unlabeled color.
    pub fn all_modes() -> Vec<(&'static str, ModelConfig)> {
        vec![
            ("mlc", config(ModeTag::Mlc, false)),
            ("mlc-cp", ModelConfig { variant: Variant::Cp { rank: 3 }, ..config(ModeTag::Mlc, false) }),
            ("lc", config(ModeTag::Lc, false)),
            ("cvae", config(ModeTag::CvaeBaseline, false)),
            ("mlc-unlabeled", config(ModeTag::Mlc, true)),
        ]
    }

    pub fn model(cfg: ModelConfig, seed: u64) -> MlcVaeModel {
        MlcVaeModel::new(shape_color_spec(), image(), cfg, seed).unwrap()
    }

    pub fn batch(model: &MlcVaeModel, rows: usize, seed: u64) -> Batch {
        let spec = model.spec();
        let mut r = rng::stream(seed, rng::streams::CHECK);
        let combos: Vec<LabelCombo> = spec.combos().into_iter().cycle().take(rows).collect();
        let squash = |v: f64| 1.0 / (1.0 + (-v).exp());
        Batch {
            x: standard_normal(&mut r, (rows, image().len())).mapv(squash),
            ys: spec.one_hot_batch(&combos).unwrap(),
            eps: standard_normal(&mut r, (rows, model.latent_dim())),
            gumbel_u: model
                .unlabeled_attribute()
                .map(|u| standard_normal(&mut r, (rows, spec.cardinalities()[u])).mapv(squash)),
        }
    }
}

pub mod cond {
    use super::*;
    use mlcvae::autograd::ParamStore;
    use mlcvae::conditioning::{one_hot, Attribute, AttributeSpec, ConditioningParams, LabelCombo, Variant};
    use mlcvae::tensor::{CpFactors, DenseTensor};
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn spec(cards: &[usize]) -> AttributeSpec {
        let attrs = cards
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let classes: Vec<String> = (0..d).map(|c| format!("c{c}")).collect();
                let refs: Vec<&str> = classes.iter().map(String::as_str).collect();
                Attribute::new(&format!("a{i}"), &refs)
            })
            .collect();
        AttributeSpec::new(attrs).unwrap()
    }

    /// Registers the parameters, then overwrites them with unit-scale draws so
    /// the interaction terms are not negligible next to the linear ones.
    pub fn random_store(p: &ConditioningParams, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        p.init(&mut store, &mut rng).unwrap();
        for name in p.param_names() {
            store.get_mut(&name).unwrap().mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        }
        store
    }

    pub fn get(store: &ParamStore, name: &str) -> Array2<f64> {
        store.get(name).unwrap_or_else(|| panic!("missing {name}")).clone()
    }

    /// Mean from first principles: linear columns plus, for every interaction
    /// subset, the fiber of a tensor rebuilt by naive loops from the raw factors.
    pub fn oracle_mean(p: &ConditioningParams, store: &ParamStore, cards: &[usize], combo: &[usize]) -> Array1<f64> {
        let d = p.latent_dim();
        let mut m = Array1::zeros(d);
        for (i, &j) in combo.iter().enumerate() {
            m += &get(store, &ConditioningParams::linear_name(i)).column(j);
        }
        for term in p.terms() {
            let attrs = term.attrs();
            let prefix = match p.variant() {
                Variant::FullTable => "cond.table".to_string(),
                Variant::Cp { .. } => "cond.cp".to_string(),
                Variant::Tucker { .. } => "cond.tucker".to_string(),
                _ => format!("cond.w{}", attrs.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("_")),
            };
            let tensor = if store.contains(&prefix) {
                let mut shape = vec![d];
                shape.extend(attrs.iter().map(|&a| cards[a]));
                DenseTensor::fold(get(store, &prefix).view(), 0, &shape).unwrap()
            } else {
                let mut factors = vec![get(store, &format!("{prefix}.out"))];
                factors.extend(attrs.iter().map(|&a| get(store, &format!("{prefix}.u{a}"))));
                let core_name = format!("{prefix}.core");
                if store.contains(&core_name) {
                    let core_shape: Vec<usize> = factors.iter().map(|f| f.ncols()).collect();
                    let core = DenseTensor::fold(get(store, &core_name).view(), 0, &core_shape).unwrap();
                    naive_tucker(&core, &factors)
                } else {
                    naive_cp(&factors)
                }
            };
            for k in 0..d {
                let mut idx = vec![k];
                idx.extend(attrs.iter().map(|&a| combo[a]));
                m[k] += tensor.get(&idx);
            }
        }
        m
    }

    pub fn all_combos(cards: &[usize]) -> Vec<Vec<usize>> {
        indices(cards)
    }

    pub fn check_equivalence(variant: Variant, cards: &[usize], d: usize, seed: u64) -> f64 {
        let s = spec(cards);
        let p = ConditioningParams::new(variant, &s, d).unwrap();
        let store = random_store(&p, seed);
        let mut worst = 0.0f64;
        let combos = all_combos(cards);
        let batch = p
            .mean_batch(&store, &combos.iter().map(|c| LabelCombo::new(c.clone())).collect::<Vec<_>>())
            .unwrap();
        for (row, c) in combos.iter().enumerate() {
            let ys: Vec<Array1<f64>> = c.iter().zip(cards).map(|(&j, &dc)| one_hot(j, dc).unwrap()).collect();
            let got = match p.variant() {
                Variant::Linear => p.mean_linear(&store, &ys[0], &ys[1]).unwrap(),
                Variant::FullTable => p.mean_full(&store, &ys[0], &ys[1]).unwrap(),
                Variant::Cp { .. } => p.mean_cp(&store, &ys[0], &ys[1]).unwrap(),
                Variant::Tucker { .. } => p.mean_tucker(&store, &ys[0], &ys[1]).unwrap(),
                Variant::General { .. } => p.mean_general(&store, &ys).unwrap(),
            };
            let want = oracle_mean(&p, &store, cards, c);
            let scale = want.mapv(|v| v * v).sum().sqrt().max(1e-12);
            worst = worst.max((&got - &want).mapv(|v| v * v).sum().sqrt() / scale);
            worst = worst.max((&batch.row(row) - &want).mapv(|v| v * v).sum().sqrt() / scale);
        }
        worst
    }

    /// Largest deviation between a CP mean and the Tucker mean with the same
    /// factors and a unit superdiagonal core, plus the tensor check.
    pub fn tucker_superdiagonal_vs_cp() -> f64 {
        let mut worst = 0.0f64;
        let s = spec(&[10, 3]);
        let rank = 3;
        let cp = ConditioningParams::new(Variant::Cp { rank }, &s, 6).unwrap();
        let cp_store = random_store(&cp, 5);
        let tucker = ConditioningParams::new(Variant::Tucker { ranks: [rank; 3] }, &s, 6).unwrap();
        let mut store = random_store(&tucker, 6);
        for (from, to) in [
            ("cond.w0", "cond.w0"),
            ("cond.w1", "cond.w1"),
            ("cond.cp.out", "cond.tucker.out"),
            ("cond.cp.u0", "cond.tucker.u0"),
            ("cond.cp.u1", "cond.tucker.u1"),
        ] {
            *store.get_mut(to).unwrap() = get(&cp_store, from);
        }
        let core = DenseTensor::superdiagonal(3, rank).unwrap();
        *store.get_mut("cond.tucker.core").unwrap() = core.unfold(0).unwrap();
        for c in s.combos() {
            let (a, b) = (cp.mean(&cp_store, &c).unwrap(), tucker.mean(&store, &c).unwrap());
            worst = worst.max((&a - &b).mapv(f64::abs).fold(0.0, |m: f64, &x| m.max(x)) / a.mapv(f64::abs).sum().max(1e-12));
        }
        // and the materialized tensors agree with the CP reconstruction
        let t = tucker.interaction_tensor(&store, &tucker.terms()[0]).unwrap();
        let factors = vec![get(&cp_store, "cond.cp.out"), get(&cp_store, "cond.cp.u0"), get(&cp_store, "cond.cp.u1")];
        worst.max(tensor_rel_err(&t, &CpFactors::new(factors).unwrap().reconstruct()))
    }
}
