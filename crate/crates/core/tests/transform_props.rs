use std::f64::consts::PI;

use cad_core::prelude::*;
use cad_core::transform::top_k_indices;
use proptest::prelude::*;

/// Textbook DCT-II analysis: `c_k = s_k Σ_n x_n cos(π (2n + 1) k / 2N)`.
fn naive_dct(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            s * x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos())
                .sum::<f64>()
        })
        .collect()
}

fn vec_strategy(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
    (1..=max_n).prop_flat_map(|n| prop::collection::vec(-10.0f64..10.0, n))
}

#[test]
fn gram_matrix_is_identity() {
    for n in [1, 2, 3, 8, 17, 64] {
        let op = SensingOperator::dct(n).unwrap();
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|r| op.entry(r, i) * op.entry(r, j)).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12, "n={n} ({i},{j}) -> {dot}");
            }
        }
    }
}

#[test]
fn partial_operator_rows_are_orthonormal() {
    let op = SensingOperator::dct_rows(32, vec![0, 3, 7, 19, 31]).unwrap();
    for a in 0..op.m() {
        for b in 0..op.m() {
            let dot: f64 = (0..op.n()).map(|j| op.entry(a, j) * op.entry(b, j)).sum();
            assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn analyze_matches_textbook_formula(x in vec_strategy(40)) {
        let op = SensingOperator::dct(x.len()).unwrap();
        let c = op.analyze(&Signal::new(x.clone()).unwrap()).unwrap();
        for (a, b) in c.as_slice().iter().zip(naive_dct(&x)) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn synthesis_inverts_analysis(x in vec_strategy(48)) {
        let op = SensingOperator::dct(x.len()).unwrap();
        let s = Signal::new(x).unwrap();
        let back = op.synthesize(&op.analyze(&s).unwrap()).unwrap();
        prop_assert!(back.sub(&s).unwrap().l2() <= 1e-12 * (1.0 + s.l2()));
    }

    #[test]
    fn parseval(x in vec_strategy(48)) {
        let op = SensingOperator::dct(x.len()).unwrap();
        let s = Signal::new(x).unwrap();
        let c = op.analyze(&s).unwrap();
        prop_assert!((c.l2() - s.l2()).abs() <= 1e-12 * (1.0 + s.l2()));
    }

    #[test]
    fn sparse_and_dense_synthesis_agree(x in vec_strategy(40), keep in 0usize..6) {
        let op = SensingOperator::dct(x.len()).unwrap();
        let c = top_k(&SpectralVector::new(x).unwrap(), keep);
        let fast = op.synthesize(&c).unwrap();
        let n = c.len();
        for i in 0..n {
            let slow: f64 = (0..n).map(|j| op.entry(i, j) * c[j]).sum();
            prop_assert!((fast[i] - slow).abs() < 1e-12);
        }
    }

    #[test]
    fn top_k_keeps_k_entries_and_is_optimal(x in prop::collection::vec(-5i32..5, 1..11), k in 0usize..12) {
        let v: Vec<f64> = x.iter().map(|&a| a as f64).collect();
        let c = SpectralVector::new(v.clone()).unwrap();
        let head = top_k(&c, k);
        let kk = k.min(v.len());
        prop_assert_eq!(top_k_indices(&v, k).len(), kk);
        prop_assert!(head.nnz() <= kk);
        // exhaustive search over supports of size kk
        let n = v.len();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != kk {
                continue;
            }
            let err: f64 = (0..n).filter(|i| mask & (1 << i) == 0).map(|i| v[i] * v[i]).sum();
            best = best.min(err);
        }
        let err = c.sub(&head).unwrap().l2().powi(2);
        prop_assert!((err - best).abs() < 1e-12);
        prop_assert!((best_k_term_error(&c, k) - c.sub(&head).unwrap().l1()).abs() < 1e-12);
    }

    #[test]
    fn top_k_is_idempotent(x in vec_strategy(30), k in 0usize..10) {
        let c = SpectralVector::new(x).unwrap();
        let once = top_k(&c, k);
        prop_assert_eq!(top_k(&once, k), once);
    }

    #[test]
    fn sigma_k_of_k_sparse_is_zero(n in 4usize..64, seed in any::<u64>()) {
        let k = 1 + (seed as usize % n.min(8));
        let c = make_clean_sparse(n, k, (0.5, 3.0), seed).unwrap();
        prop_assert_eq!(c.nnz(), k);
        prop_assert_eq!(best_k_term_error(&c, k), 0.0);
    }
}
