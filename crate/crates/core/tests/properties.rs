//! Property tests over the numeric kernels.

use proptest::prelude::*;

use ovvis_core::tensor::Tensor;

fn finite_f32() -> impl Strategy<Value = f32> {
    (-1e6f32..1e6).prop_filter("finite", |v| v.is_finite())
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f32>> {
    proptest::collection::vec(finite_f32(), rows * cols)
        .prop_map(move |data| Tensor::new(vec![rows, cols], data).unwrap())
}

proptest! {
    #[test]
    fn cosine_entries_stay_in_unit_interval(a in matrix(3, 5), b in matrix(4, 5)) {
        let c = a.cosine_rows(&b).unwrap();
        for &v in c.data() {
            prop_assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn cosine_is_invariant_to_positive_scaling(
        a in matrix(2, 4),
        b in matrix(3, 4),
        alpha in 1e-3f32..1e3,
        beta in 1e-3f32..1e3,
    ) {
        let base = a.cosine_rows(&b).unwrap();
        let scaled = a.map(|x| x * alpha).cosine_rows(&b.map(|x| x * beta)).unwrap();
        for (x, y) in base.data().iter().zip(scaled.data()) {
            prop_assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        logits in proptest::collection::vec(-30.0f32..30.0, 12),
        shift in -10.0f32..10.0,
    ) {
        let x = Tensor::new(vec![3, 4], logits).unwrap();
        let s = x.softmax_rows().unwrap();
        for i in 0..3 {
            let sum: f32 = s.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
        }
        let shifted = x.map(|v| v + shift).softmax_rows().unwrap();
        for (a, b) in s.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn matmul_is_associative_within_tolerance(
        a in proptest::collection::vec(-2.0f32..2.0, 6),
        b in proptest::collection::vec(-2.0f32..2.0, 12),
        c in proptest::collection::vec(-2.0f32..2.0, 8),
    ) {
        let a32 = Tensor::new(vec![2, 3], a.clone()).unwrap();
        let b32 = Tensor::new(vec![3, 4], b.clone()).unwrap();
        let c32 = Tensor::new(vec![4, 2], c.clone()).unwrap();
        let left = a32.matmul(&b32).unwrap().matmul(&c32).unwrap();
        let right = a32.matmul(&b32.matmul(&c32).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() < 1e-4, "f32: {x} vs {y}");
        }

        let a64 = Tensor::new(vec![2, 3], a.iter().map(|&v| v as f64).collect()).unwrap();
        let b64 = Tensor::new(vec![3, 4], b.iter().map(|&v| v as f64).collect()).unwrap();
        let c64 = Tensor::new(vec![4, 2], c.iter().map(|&v| v as f64).collect()).unwrap();
        let left = a64.matmul(&b64).unwrap().matmul(&c64).unwrap();
        let right = a64.matmul(&b64.matmul(&c64).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() < 1e-10, "f64: {x} vs {y}");
        }
    }

    #[test]
    fn cost_maps_stay_in_zero_two(a in matrix(4, 6), b in matrix(4, 6)) {
        let c = ovvis_core::matcher::cost_map(&a, &b).unwrap();
        for &v in c.data() {
            prop_assert!((0.0..=2.0).contains(&v));
        }
    }
}
