mod common;

use std::collections::BTreeSet;

use lobsad::eval::{pca_fit, pca_project, rank_test, ratio_test, ModelKind, ScoreSet, Split};
use proptest::prelude::*;

fn set(scores: Vec<f64>, labeled: BTreeSet<usize>) -> ScoreSet {
    ScoreSet::new(scores, labeled, Split::Train, ModelKind::Svdd).unwrap()
}

#[test]
fn ratio_and_rank_match_brute_force() {
    assert_eq!(common::metric_oracle_mismatches(1000, 11), 0);
}

#[test]
fn pca_matches_jacobi() {
    let check = common::pca_oracle(5, 5);
    assert!(check.orthonormality < 1e-10, "{}", check.orthonormality);
    assert!(check.variance < 1e-8, "{}", check.variance);
}

#[test]
fn pca_projection_recovers_planted_axes() {
    let mut rng = common::rng(2);
    let z = common::normal_matrix(&mut rng, 500, 3);
    let mut x = ndarray::Array2::zeros((500, 3));
    x.column_mut(0).assign(&(&z.column(0) * 10.0));
    x.column_mut(1).assign(&(&z.column(1) * 3.0));
    x.column_mut(2).assign(&(&z.column(2) * 0.1));
    let basis = pca_fit(x.view(), 2).unwrap();
    assert!(basis.components[[0, 0]].abs() > 0.99);
    assert!(basis.components[[1, 1]].abs() > 0.99);
    let p = pca_project(&basis, x.view()).unwrap();
    assert_eq!(p.dim(), (500, 2));
}

proptest! {
    #[test]
    fn rank_invariant_under_monotone_transform(
        scores in prop::collection::vec(0.0f64..100.0, 2..80),
        pick in prop::collection::vec(any::<bool>(), 80),
    ) {
        let labeled: BTreeSet<usize> = (0..scores.len()).filter(|&i| pick[i]).collect();
        prop_assume!(!labeled.is_empty() && labeled.len() < scores.len());
        let a = rank_test(&set(scores.clone(), labeled.clone())).unwrap().mean_rank;
        let warped: Vec<f64> = scores.iter().map(|s| (s * 0.5).exp() + 3.0).collect();
        let b = rank_test(&set(warped, labeled)).unwrap().mean_rank;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ratio_invariant_under_scaling(
        scores in prop::collection::vec(0.01f64..100.0, 2..80),
        pick in prop::collection::vec(any::<bool>(), 80),
        k in 1e-3f64..1e3,
    ) {
        let labeled: BTreeSet<usize> = (0..scores.len()).filter(|&i| pick[i]).collect();
        prop_assume!(!labeled.is_empty() && labeled.len() < scores.len());
        let a = ratio_test(&set(scores.clone(), labeled.clone())).unwrap();
        let scaled: Vec<f64> = scores.iter().map(|s| s * k).collect();
        let b = ratio_test(&set(scaled, labeled)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn rank_bounds(
        scores in prop::collection::vec(0.0f64..10.0, 2..60),
        pick in prop::collection::vec(any::<bool>(), 60),
    ) {
        let labeled: BTreeSet<usize> = (0..scores.len()).filter(|&i| pick[i]).collect();
        prop_assume!(!labeled.is_empty() && labeled.len() < scores.len());
        let m = labeled.len() as f64;
        let n = scores.len() as f64;
        let r = rank_test(&set(scores, labeled)).unwrap().mean_rank;
        prop_assert!(r >= (m + 1.0) / 2.0 - 1e-12);
        prop_assert!(r <= n - (m - 1.0) / 2.0 + 1e-12);
    }
}

#[test]
fn not_applicable_cases() {
    assert!(ratio_test(&set(vec![1.0, 2.0], BTreeSet::new())).is_none());
    assert!(rank_test(&set(vec![1.0, 2.0], [0, 1].into())).is_none());
    assert!(ratio_test(&set(vec![1.0, 0.0], [0].into())).is_none());
}
