//! Hypersphere objectives: autoencoder pretraining loss, one-class (SVDD)
//! loss, semi-supervised (SAD) loss and the distance-based anomaly score.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{Gradients, MlpModel};

/// Coordinates of the center closer than this to zero are pushed out to it.
pub const CENTER_MIN_ABS: f64 = 1e-3;

const SCORE_CHUNK: usize = 4096;

/// Fixed center `c` in the network's output space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypersphere {
    pub center: Array1<f64>,
}

impl Hypersphere {
    /// Uses `center` as is. Rejects non-finite values.
    pub fn new(center: Array1<f64>) -> Result<Self> {
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("hypersphere center must be finite".into()));
        }
        Ok(Self { center })
    }

    /// Builds a center from a mean output, moving coordinates that are
    /// within [`CENTER_MIN_ABS`] of zero to `±CENTER_MIN_ABS`.
    pub fn from_mean(mean: Array1<f64>) -> Result<Self> {
        let center = mean.mapv(|v| {
            if v.abs() < CENTER_MIN_ABS {
                if v < 0.0 {
                    -CENTER_MIN_ABS
                } else {
                    CENTER_MIN_ABS
                }
            } else {
                v
            }
        });
        Self::new(center)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SadHyper {
    /// Weight of the labeled term.
    pub eta: f64,
    /// Added to squared distances inside the labeled term.
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for SadHyper {
    fn default() -> Self {
        Self {
            eta: 1.0,
            eps: 1e-6,
            weight_decay: 1e-6,
        }
    }
}

impl SadHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.eps > 0.0 && self.eps <= 1e-3) {
            return Err(Error::Config(format!("eps must lie in (0, 1e-3], got {}", self.eps)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Labeled samples with targets in {-1, +1}; -1 marks a known anomaly.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    features: Array2<f64>,
    labels: Vec<i8>,
}

impl LabeledBatch {
    pub fn new(features: Array2<f64>, labels: Vec<i8>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::shape("label count", features.nrows(), labels.len()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1 && y != -1) {
            return Err(Error::Data(format!("labels must be -1 or +1, got {bad}")));
        }
        Ok(Self { features, labels })
    }

    /// All rows labeled as anomalies.
    pub fn anomalies(features: Array2<f64>) -> Self {
        let labels = vec![-1; features.nrows()];
        Self { features, labels }
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            features: Array2::zeros((0, dim)),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    /// Rows `idx` (with repetition allowed) as a new batch.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

fn check_dims(model: &MlpModel, batch: &ArrayView2<f64>, sphere: &Hypersphere) -> Result<()> {
    if batch.ncols() != model.input_dim() {
        return Err(Error::shape("batch feature count", model.input_dim(), batch.ncols()));
    }
    if sphere.dim() != model.output_dim() {
        return Err(Error::shape("center dimension", model.output_dim(), sphere.dim()));
    }
    Ok(())
}

/// Mean squared reconstruction error `mean_i ||phi(x_i) - x_i||^2` and its gradient.
pub fn ae_loss(model: &MlpModel, batch: ArrayView2<f64>) -> Result<(f64, Gradients)> {
    if model.input_dim() != model.output_dim() {
        return Err(Error::Config(format!(
            "autoencoder loss needs input dim == output dim, got {} and {}",
            model.input_dim(),
            model.output_dim()
        )));
    }
    if batch.nrows() == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    let (outputs, tape) = model.forward(batch)?;
    let n = batch.nrows() as f64;
    let diff = outputs - batch;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad_out = diff * (2.0 / n);
    let grads = model.backward(&tape, grad_out.view())?;
    Ok((loss, grads))
}

/// Mean network output over `data`, accumulated chunk by chunk, as the
/// hypersphere center.
pub fn init_center(model: &MlpModel, data: ArrayView2<f64>) -> Result<Hypersphere> {
    if data.nrows() == 0 {
        return Err(Error::Data("cannot initialize center from an empty dataset".into()));
    }
    let mut sum = Array1::<f64>::zeros(model.output_dim());
    for chunk in data.axis_chunks_iter(Axis(0), SCORE_CHUNK) {
        let out = model.predict(chunk)?;
        for row in out.rows() {
            sum += &row;
        }
    }
    Hypersphere::from_mean(sum / data.nrows() as f64)
}

/// One-class objective on a batch: `(1/n) sum_i ||phi(x_i) - c||^2`.
pub fn svdd_loss(
    model: &MlpModel,
    batch: ArrayView2<f64>,
    sphere: &Hypersphere,
) -> Result<(f64, Gradients)> {
    hypersphere_objective(model, batch, None, sphere, 1.0, 0.0)
}

/// Semi-supervised objective on a batch of `n` unlabeled and `m` labeled rows:
///
/// `(1/(n+m)) sum_i ||phi(x_i) - c||^2 + (eta/(n+m)) sum_j (||phi(x~_j) - c||^2 + eps)^y~_j`
///
/// With `m = 0` this is exactly [`svdd_loss`].
pub fn sad_loss(
    model: &MlpModel,
    unlabeled: ArrayView2<f64>,
    labeled: &LabeledBatch,
    sphere: &Hypersphere,
    hyper: &SadHyper,
) -> Result<(f64, Gradients)> {
    if !(hyper.eta > 0.0) {
        return Err(Error::Config(format!("eta must be > 0, got {}", hyper.eta)));
    }
    let labeled = if labeled.is_empty() { None } else { Some(labeled) };
    hypersphere_objective(model, unlabeled, labeled, sphere, hyper.eta, hyper.eps)
}

fn hypersphere_objective(
    model: &MlpModel,
    unlabeled: ArrayView2<f64>,
    labeled: Option<&LabeledBatch>,
    sphere: &Hypersphere,
    eta: f64,
    eps: f64,
) -> Result<(f64, Gradients)> {
    check_dims(model, &unlabeled, sphere)?;
    let n = unlabeled.nrows();
    let m = labeled.map_or(0, LabeledBatch::len);
    if n + m == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    let (outputs, tape) = match labeled {
        None => model.forward(unlabeled)?,
        Some(lb) => {
            check_dims(model, &lb.features.view(), sphere)?;
            let stacked = concatenate(Axis(0), &[unlabeled, lb.features.view()])
                .map_err(|e| Error::Shape(e.to_string()))?;
            model.forward(stacked.view())?
        }
    };
    let total = (n + m) as f64;
    let mut diff = outputs;
    diff -= &sphere.center;

    let mut unlabeled_sum = 0.0;
    let mut grad_out = Array2::<f64>::zeros(diff.raw_dim());
    for (d, mut g) in diff
        .slice(s![..n, ..])
        .rows()
        .into_iter()
        .zip(grad_out.slice_mut(s![..n, ..]).rows_mut())
    {
        unlabeled_sum += d.dot(&d);
        g.assign(&(&d * (2.0 / total)));
    }
    let mut loss = unlabeled_sum / total;

    if let Some(lb) = labeled {
        let mut labeled_sum = 0.0;
        for ((d, mut g), &y) in diff
            .slice(s![n.., ..])
            .rows()
            .into_iter()
            .zip(grad_out.slice_mut(s![n.., ..]).rows_mut())
            .zip(&lb.labels)
        {
            let dist2 = d.dot(&d) + eps;
            let (term, dterm) = if y > 0 {
                (dist2, 1.0)
            } else {
                (1.0 / dist2, -1.0 / (dist2 * dist2))
            };
            labeled_sum += term;
            g.assign(&(&d * (2.0 * eta * dterm / total)));
        }
        loss += eta * labeled_sum / total;
    }

    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite loss {loss}")));
    }
    let grads = model.backward(&tape, grad_out.view())?;
    Ok((loss, grads))
}

/// `s(x) = ||phi(x) - c||` for every row of `points`.
pub fn anomaly_score(
    model: &MlpModel,
    points: ArrayView2<f64>,
    sphere: &Hypersphere,
) -> Result<Array1<f64>> {
    check_dims(model, &points, sphere)?;
    let mut scores = Vec::with_capacity(points.nrows());
    for chunk in points.axis_chunks_iter(Axis(0), SCORE_CHUNK) {
        let mut out = model.predict(chunk)?;
        out -= &sphere.center;
        scores.extend(out.rows().into_iter().map(|d| d.dot(&d).sqrt()));
    }
    Ok(Array1::from(scores))
}

/// Network outputs for every row, in chunks.
pub fn embed(model: &MlpModel, points: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut parts = Vec::new();
    for chunk in points.axis_chunks_iter(Axis(0), SCORE_CHUNK) {
        parts.push(model.predict(chunk)?);
    }
    if parts.is_empty() {
        return Ok(Array2::zeros((0, model.output_dim())));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{Activation, LayerParams};
    use ndarray::array;

    fn linear_model(weights: Array2<f64>, bias: Array1<f64>) -> MlpModel {
        MlpModel::from_layers(
            vec![LayerParams {
                weights,
                bias,
                activation: Activation::Linear,
            }],
            true,
            0,
        )
        .unwrap()
    }

    /// Model with phi(x) = x.
    fn identity(d: usize) -> MlpModel {
        linear_model(Array2::eye(d), Array1::zeros(d))
    }

    fn no_eps(eta: f64) -> SadHyper {
        SadHyper {
            eta,
            eps: 0.0,
            weight_decay: 0.0,
        }
    }

    #[test]
    fn ae_loss_zero_for_identity() {
        let model = identity(3);
        let x = array![[1.0, 2.0, 3.0], [-1.0, 0.0, 4.0]];
        let (loss, grads) = ae_loss(&model, x.view()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ae_loss_of_zero_model_is_input_norm() {
        let model = linear_model(Array2::zeros((4, 4)), Array1::zeros(4));
        let (loss, _) = ae_loss(&model, array![[1.0, 0.0, 0.0, 0.0]].view()).unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn ae_loss_needs_square_model() {
        let model = MlpModel::init(0, &[4, 3], true).unwrap();
        assert!(matches!(
            ae_loss(&model, Array2::zeros((1, 4)).view()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn center_is_mean_output() {
        // phi(x) = x: outputs (1,1,1) and (3,3,3)
        let model = identity(3);
        let x = array![[1.0, 1.0, 1.0], [3.0, 3.0, 3.0]];
        let sphere = init_center(&model, x.view()).unwrap();
        assert_eq!(sphere.center, array![2.0, 2.0, 2.0]);
    }

    #[test]
    fn center_of_identity_model_is_feature_mean() {
        let model = identity(2);
        let x = array![[1.0, -4.0], [2.0, -5.0], [6.0, -9.0]];
        let sphere = init_center(&model, x.view()).unwrap();
        assert_eq!(sphere.center, array![3.0, -6.0]);
    }

    #[test]
    fn center_near_zero_is_nudged() {
        let sphere = Hypersphere::from_mean(array![0.0, 5e-4, -2e-4, 0.5, -0.002]).unwrap();
        assert_eq!(sphere.center, array![1e-3, 1e-3, -1e-3, 0.5, -0.002]);
    }

    #[test]
    fn center_from_empty_data_fails() {
        let model = identity(2);
        assert!(matches!(
            init_center(&model, Array2::zeros((0, 2)).view()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn svdd_loss_zero_at_center() {
        let model = identity(2);
        let sphere = Hypersphere::new(array![1.5, -2.0]).unwrap();
        let x = array![[1.5, -2.0], [1.5, -2.0]];
        let (loss, _) = svdd_loss(&model, x.view(), &sphere).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn svdd_loss_unit_offset() {
        let model = identity(3);
        let sphere = Hypersphere::new(array![0.0, 1.0, 1.0]).unwrap();
        let (loss, _) = svdd_loss(&model, array![[1.0, 1.0, 1.0]].view(), &sphere).unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn svdd_loss_shape_errors() {
        let model = identity(3);
        let sphere = Hypersphere::new(array![0.0, 0.0]).unwrap();
        assert!(matches!(
            svdd_loss(&model, Array2::zeros((1, 3)).view(), &sphere),
            Err(Error::Shape(_))
        ));
        let sphere = Hypersphere::new(array![0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            svdd_loss(&model, Array2::zeros((1, 2)).view(), &sphere),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn sad_loss_with_labeled_anomaly() {
        // dist^2 = 4 for both points: 1/2 * 4 + 1/2 * 4^-1
        let model = identity(2);
        let sphere = Hypersphere::new(array![0.0, 0.0]).unwrap();
        let labeled = LabeledBatch::new(array![[0.0, 2.0]], vec![-1]).unwrap();
        let (loss, _) = sad_loss(&model, array![[2.0, 0.0]].view(), &labeled, &sphere, &no_eps(1.0)).unwrap();
        assert_eq!(loss, 2.125);
    }

    #[test]
    fn sad_loss_with_labeled_normal() {
        let model = identity(2);
        let sphere = Hypersphere::new(array![0.0, 0.0]).unwrap();
        let labeled = LabeledBatch::new(array![[0.0, 2.0]], vec![1]).unwrap();
        let (loss, _) = sad_loss(&model, array![[2.0, 0.0]].view(), &labeled, &sphere, &no_eps(1.0)).unwrap();
        assert_eq!(loss, 4.0);
    }

    #[test]
    fn sad_loss_without_labels_is_svdd_loss() {
        let model = MlpModel::init(3, &[5, 8, 5], true).unwrap();
        let sphere = Hypersphere::new(Array1::from_elem(5, 0.2)).unwrap();
        let x = Array2::from_shape_fn((7, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin());
        let (l1, g1) = svdd_loss(&model, x.view(), &sphere).unwrap();
        let (l2, g2) = sad_loss(&model, x.view(), &LabeledBatch::empty(5), &sphere, &SadHyper::default()).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }

    #[test]
    fn sad_loss_only_labeled_rows() {
        let model = identity(1);
        let sphere = Hypersphere::new(array![0.0]).unwrap();
        let labeled = LabeledBatch::new(array![[2.0]], vec![-1]).unwrap();
        let (loss, _) = sad_loss(&model, Array2::zeros((0, 1)).view(), &labeled, &sphere, &no_eps(2.0)).unwrap();
        assert_eq!(loss, 0.5);
    }

    #[test]
    fn labeled_batch_rejects_bad_labels() {
        assert!(matches!(
            LabeledBatch::new(array![[1.0], [2.0]], vec![-1, 0]),
            Err(Error::Data(_))
        ));
        assert!(LabeledBatch::new(array![[1.0]], vec![-1, 1]).is_err());
    }

    #[test]
    fn sad_hyper_validation() {
        assert!(SadHyper::default().validate().is_ok());
        assert!(SadHyper { eta: 0.0, ..Default::default() }.validate().is_err());
        assert!(SadHyper { eps: 0.0, ..Default::default() }.validate().is_err());
        assert!(SadHyper { eps: 0.01, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn score_is_euclidean_distance() {
        let model = identity(4);
        let sphere = Hypersphere::new(array![1.0, 1.0, 1.0, 1.0]).unwrap();
        let x = array![[4.0, 5.0, 1.0, 1.0], [1.0, 1.0, 1.0, 1.0]];
        let scores = anomaly_score(&model, x.view(), &sphere).unwrap();
        assert_eq!(scores, array![5.0, 0.0]);
    }

    #[test]
    fn batch_scores_match_single_scores() {
        let model = MlpModel::init(4, &[6, 10, 6], true).unwrap();
        let sphere = Hypersphere::new(Array1::from_elem(6, -0.3)).unwrap();
        let x = Array2::from_shape_fn((9, 6), |(i, j)| ((i * 6 + j) as f64 * 0.71).cos());
        let all = anomaly_score(&model, x.view(), &sphere).unwrap();
        for i in 0..x.nrows() {
            let one = anomaly_score(&model, x.slice(s![i..i + 1, ..]), &sphere).unwrap();
            assert!((one[0] - all[i]).abs() <= 1e-12 * all[i].max(1.0));
        }
    }

    #[test]
    fn scoring_dimension_mismatch() {
        let model = identity(3);
        let sphere = Hypersphere::new(array![0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            anomaly_score(&model, Array2::zeros((2, 4)).view(), &sphere),
            Err(Error::Shape(_))
        ));
    }
}
