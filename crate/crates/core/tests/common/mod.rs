//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use lobsad::nnet::MlpModel;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Model with every parameter (biases included) drawn from N(0, scale^2).
pub fn random_model(rng: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> MlpModel {
    let mut model = MlpModel::init(rng.random(), dims, true).unwrap();
    let params: Vec<f64> = (0..model.n_params())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect();
    model.set_params_flat(&params).unwrap();
    model
}

/// Central-difference gradient of `loss` with respect to the flat
/// parameter vector, restricted to `coords`.
pub fn numeric_gradient(model: &MlpModel, coords: &[usize], h: f64, loss: impl Fn(&MlpModel) -> f64) -> Vec<f64> {
    let base = model.params_flat();
    let mut probe = model.clone();
    coords
        .iter()
        .map(|&i| {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_params_flat(&p).unwrap();
            let up = loss(&probe);
            p[i] = base[i] - h;
            probe.set_params_flat(&p).unwrap();
            let down = loss(&probe);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a|| + ||b||, tiny)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-300)
}

/// Mean labeled rank by pairwise counting: each row's rank is one plus the
/// number of strictly higher scores plus half the number of other rows
/// with an equal score.
pub fn brute_rank(scores: &[f64], labeled: &BTreeSet<usize>) -> f64 {
    let ranks: Vec<f64> = labeled
        .iter()
        .map(|&i| {
            let higher = scores.iter().filter(|&&s| s > scores[i]).count() as f64;
            let ties = scores.iter().filter(|&&s| s == scores[i]).count() as f64 - 1.0;
            1.0 + higher + 0.5 * ties
        })
        .collect();
    ranks.iter().sum::<f64>() / ranks.len() as f64
}

pub fn brute_ratio(scores: &[f64], labeled: &BTreeSet<usize>) -> f64 {
    let (mut a, mut na, mut b, mut nb) = (0.0, 0.0, 0.0, 0.0);
    for (i, &s) in scores.iter().enumerate() {
        if labeled.contains(&i) {
            a += s;
            na += 1.0;
        } else {
            b += s;
            nb += 1.0;
        }
    }
    (a / na) / (b / nb)
}

/// Sample covariance with the N-1 denominator, two-pass.
pub fn covariance(x: &Array2<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    Array2::from_shape_fn((d, d), |(a, b)| {
        (0..n).map(|i| (x[[i, a]] - mean[a]) * (x[[i, b]] - mean[b])).sum::<f64>() / (n - 1) as f64
    })
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted in
/// descending order.
pub fn jacobi_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|p| (0..d).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[[p, q]].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..d).map(|i| a[[i, i]]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

/// Which objective a gradient trial exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Autoencoder,
    Svdd,
    SadNormal,
    SadAnomalous,
    SadMixed,
}

pub struct GradientTrial {
    pub objective: Objective,
    pub dims: Vec<usize>,
    pub rel_error: f64,
}

/// Compares analytic and central-difference gradients on `n` random
/// (model, batch, objective) triples.
pub fn gradient_trials(n: usize, seed: u64) -> Vec<GradientTrial> {
    use lobsad::objectives::{ae_loss, sad_loss, svdd_loss, Hypersphere, LabeledBatch, SadHyper};
    use lobsad::nnet::DEFAULT_LAYER_DIMS;

    let objectives = [
        Objective::Autoencoder,
        Objective::Svdd,
        Objective::SadNormal,
        Objective::SadAnomalous,
        Objective::SadMixed,
    ];
    let mut rng = rng(seed);
    (0..n)
        .map(|t| {
            let objective = objectives[t % objectives.len()];
            let full = t % 10 == 9;
            let dims: Vec<usize> = if full {
                DEFAULT_LAYER_DIMS.to_vec()
            } else {
                let d_in = rng.random_range(2..6);
                let hidden = rng.random_range(1..4);
                let mut dims = vec![d_in];
                dims.extend((0..hidden).map(|_| rng.random_range(3..9)));
                let d_out = if objective == Objective::Autoencoder { d_in } else { rng.random_range(2..6) };
                dims.push(d_out);
                dims
            };
            let scale = if full { 0.15 } else { 0.7 };
            let model = random_model(&mut rng, &dims, scale);
            let d_in = dims[0];
            let d_out = *dims.last().unwrap();
            let rows = rng.random_range(1..9);
            let batch = normal_matrix(&mut rng, rows, d_in);
            let center = normal_matrix(&mut rng, 1, d_out).row(0).to_owned() + 0.5;
            let sphere = Hypersphere::new(center).unwrap();
            let m = rng.random_range(1..5);
            let labels: Vec<i8> = (0..m)
                .map(|j| match objective {
                    Objective::SadNormal => 1,
                    Objective::SadAnomalous => -1,
                    _ => if j % 2 == 0 { -1 } else { 1 },
                })
                .collect();
            let labeled = LabeledBatch::new(normal_matrix(&mut rng, m, d_in), labels).unwrap();
            let hyper = SadHyper {
                eta: rng.random_range(0.5..2.0),
                eps: 1e-6,
                weight_decay: 0.0,
            };
            let eval = |mdl: &MlpModel| -> (f64, Vec<f64>) {
                let (loss, g) = match objective {
                    Objective::Autoencoder => ae_loss(mdl, batch.view()).unwrap(),
                    Objective::Svdd => svdd_loss(mdl, batch.view(), &sphere).unwrap(),
                    _ => sad_loss(mdl, batch.view(), &labeled, &sphere, &hyper).unwrap(),
                };
                (loss, g.flat())
            };
            let analytic = eval(&model).1;
            let coords: Vec<usize> = if full {
                (0..60).map(|_| rng.random_range(0..model.n_params())).collect()
            } else {
                (0..model.n_params()).collect()
            };
            let numeric = numeric_gradient(&model, &coords, 1e-6, |mdl| eval(mdl).0);
            let picked: Vec<f64> = coords.iter().map(|&i| analytic[i]).collect();
            GradientTrial {
                objective,
                dims,
                rel_error: relative_error(&picked, &numeric),
            }
        })
        .collect()
}

/// Random score set: sometimes drawn from a small grid so ties are common.
pub fn random_score_set(rng: &mut ChaCha8Rng) -> (Vec<f64>, BTreeSet<usize>) {
    let n = rng.random_range(2..300);
    let tied = rng.random_bool(0.5);
    let scores: Vec<f64> = (0..n)
        .map(|_| {
            if tied {
                rng.random_range(0..6) as f64 * 0.5 + 0.25
            } else {
                rng.random_range(0.0..10.0)
            }
        })
        .collect();
    let m = rng.random_range(1..n);
    let labeled = rand::seq::index::sample(rng, n, m).into_iter().collect();
    (scores, labeled)
}

/// Number of random score sets on which the library ratio or rank differs
/// (bitwise) from the brute-force oracle.
pub fn metric_oracle_mismatches(n_sets: usize, seed: u64) -> usize {
    use lobsad::eval::{ratio_test, rank_test, ModelKind, ScoreSet, Split};
    let mut rng = rng(seed);
    (0..n_sets)
        .filter(|_| {
            let (scores, labeled) = random_score_set(&mut rng);
            let set = ScoreSet::new(scores.clone(), labeled.clone(), Split::Test, ModelKind::Sad).unwrap();
            let rank = rank_test(&set).unwrap().mean_rank;
            let ratio = ratio_test(&set).unwrap();
            rank != brute_rank(&scores, &labeled) || ratio != brute_ratio(&scores, &labeled)
        })
        .count()
}

pub struct PcaCheck {
    pub orthonormality: f64,
    pub variance: f64,
}

/// Worst orthonormality defect and worst explained-variance discrepancy
/// against Jacobi over `n` random 200 x 20 matrices.
pub fn pca_oracle(n: usize, seed: u64) -> PcaCheck {
    use lobsad::eval::pca_fit;
    let mut rng = rng(seed);
    let mut worst = PcaCheck {
        orthonormality: 0.0,
        variance: 0.0,
    };
    for _ in 0..n {
        // correlated columns with distinct scales
        let z = normal_matrix(&mut rng, 200, 20);
        let mix = normal_matrix(&mut rng, 20, 20);
        let x = z.dot(&mix);
        let basis = pca_fit(x.view(), 20).unwrap();
        let gram = basis.components.dot(&basis.components.t());
        for i in 0..20 {
            for j in 0..20 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst.orthonormality = worst.orthonormality.max((gram[[i, j]] - target).abs());
            }
        }
        let oracle = jacobi_eigenvalues(&covariance(&x));
        for (a, b) in basis.explained_variance.iter().zip(&oracle) {
            worst.variance = worst.variance.max((a - b).abs());
        }
    }
    worst
}
