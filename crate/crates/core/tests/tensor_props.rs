mod common;

use common::*;
use mlcvae::conditioning::one_hot;
use mlcvae::tensor::{hadamard, khatri_rao, kron_vec, kronecker, CpFactors, DenseTensor};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=4, 1..=4)
}

fn tensor_strategy() -> impl Strategy<Value = DenseTensor> {
    shape_strategy().prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(-5.0f64..5.0, n).prop_map(move |v| DenseTensor::new(shape.clone(), v).unwrap())
    })
}

fn matrix(rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Array2<f64>> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

proptest! {
    #[test]
    fn decompositions_match_naive_loops(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(algebra_instance(&mut rng) <= 1e-12);
    }

    #[test]
    fn fold_inverts_unfold(t in tensor_strategy(), k in 0usize..4) {
        let k = k % t.order();
        let back = DenseTensor::fold(t.unfold(k).unwrap().view(), k, t.shape()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn unfold_entries_follow_the_column_rule(t in tensor_strategy(), k in 0usize..4) {
        let k = k % t.order();
        let m = t.unfold(k).unwrap();
        for idx in indices(t.shape()) {
            let mut col = 0;
            let mut stride = 1;
            for (n, (&i, &e)) in idx.iter().zip(t.shape()).enumerate() {
                if n != k {
                    col += i * stride;
                    stride *= e;
                }
            }
            prop_assert_eq!(m[[idx[k], col]], t.get(&idx));
        }
    }

    #[test]
    fn one_hot_vector_product_selects_a_slice(t in tensor_strategy(), k in 0usize..4, j in 0usize..4) {
        prop_assume!(t.order() >= 2);
        let k = k % t.order();
        let j = j % t.shape()[k];
        let e = one_hot(j, t.shape()[k]).unwrap();
        prop_assert_eq!(t.mode_vprod(k, e.view()).unwrap(), t.slice(k, j).unwrap());
    }

    #[test]
    fn khatri_rao_of_one_hots_is_one_hot(i in 0usize..5, j in 0usize..4, di in 5usize..7, dj in 4usize..6) {
        let a = one_hot(i, di).unwrap().insert_axis(ndarray::Axis(1));
        let b = one_hot(j, dj).unwrap().insert_axis(ndarray::Axis(1));
        let kr = khatri_rao(a.view(), b.view()).unwrap();
        let expected = one_hot(i * dj + j, di * dj).unwrap();
        prop_assert_eq!(kr.column(0).to_owned(), expected);
    }

    #[test]
    fn khatri_rao_columns_are_kronecker_products(a in matrix(1..=4, 1..=3), b in matrix(1..=4, 1..=3)) {
        prop_assume!(a.ncols() == b.ncols());
        let kr = khatri_rao(a.view(), b.view()).unwrap();
        for r in 0..a.ncols() {
            prop_assert_eq!(kr.column(r).to_owned(), kron_vec(a.column(r), b.column(r)));
        }
    }

    #[test]
    fn kronecker_mixed_product(a in matrix(1..=3, 2..=2), b in matrix(1..=3, 2..=2), c in matrix(2..=2, 1..=3), d in matrix(2..=2, 1..=3)) {
        let lhs = kronecker(a.view(), b.view()).dot(&kronecker(c.view(), d.view()));
        let rhs = kronecker(a.dot(&c).view(), b.dot(&d).view());
        prop_assert!(rel_err(&lhs, &rhs) <= 1e-12 || (&lhs - &rhs).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn hadamard_commutes(a in matrix(1..=4, 1..=4)) {
        let b = a.mapv(|v| v * 0.5 - 1.0);
        prop_assert_eq!(hadamard(a.view(), b.view()).unwrap(), hadamard(b.view(), a.view()).unwrap());
    }

    #[test]
    fn cp_equals_tucker_with_superdiagonal_core(seed in any::<u64>(), order in 2usize..=4, rank in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors: Vec<_> = (0..order).map(|k| random_matrix(&mut rng, 1 + (k + seed as usize) % 4, rank)).collect();
        let cp = CpFactors::new(factors).unwrap();
        prop_assert!(tensor_rel_err(&cp.to_tucker().reconstruct(), &cp.reconstruct()) <= 1e-12);
    }
}
