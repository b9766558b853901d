//! Ratio and rank tests, PCA of network outputs, and report export.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Svdd,
    Sad,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Svdd => "svdd",
            ModelKind::Sad => "sad",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Anomaly scores of one split under one model, with the labeled rows
/// (indices into `scores`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub labeled: BTreeSet<usize>,
    pub split: Split,
    pub model: ModelKind,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labeled: BTreeSet<usize>, split: Split, model: ModelKind) -> Result<Self> {
        if let Some(&bad) = labeled.range(scores.len()..).next() {
            return Err(Error::Data(format!(
                "labeled index {bad} out of range for {} scores",
                scores.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Data(format!("scores must be finite and >= 0, got {bad}")));
        }
        Ok(Self {
            scores,
            labeled,
            split,
            model,
        })
    }

    fn applicable(&self) -> bool {
        !self.labeled.is_empty() && self.labeled.len() < self.scores.len()
    }
}

/// Mean labeled score divided by mean unlabeled score. `None` when either
/// group is empty or the unlabeled mean is zero.
pub fn ratio_test(set: &ScoreSet) -> Option<f64> {
    if !set.applicable() {
        return None;
    }
    let (mut lab_sum, mut unl_sum) = (0.0, 0.0);
    for (i, &s) in set.scores.iter().enumerate() {
        if set.labeled.contains(&i) {
            lab_sum += s;
        } else {
            unl_sum += s;
        }
    }
    let m = set.labeled.len() as f64;
    let n = (set.scores.len() - set.labeled.len()) as f64;
    let unl_mean = unl_sum / n;
    (unl_mean > 0.0).then(|| (lab_sum / m) / unl_mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    /// Mean 1-based rank of the labeled rows; rank 1 is the highest score.
    pub mean_rank: f64,
    /// `mean_rank / N`.
    pub normalized: f64,
}

/// 1-based ranks by descending score; tied scores share the average of the
/// positions they occupy.
pub fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Mean rank of the labeled rows. `None` when not applicable.
pub fn rank_test(set: &ScoreSet) -> Option<RankResult> {
    if !set.applicable() {
        return None;
    }
    let ranks = average_ranks(&set.scores);
    let sum: f64 = set.labeled.iter().map(|&i| ranks[i]).sum();
    let mean_rank = sum / set.labeled.len() as f64;
    Some(RankResult {
        mean_rank,
        normalized: mean_rank / set.scores.len() as f64,
    })
}

/// Principal axes of a set of network outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Array1<f64>,
    /// `k x d`, orthonormal rows.
    pub components: Array2<f64>,
    /// Sample variance along each component, nonincreasing.
    pub explained_variance: Array1<f64>,
    /// Set when fewer than `k` directions carry variance; the missing
    /// variances are reported as 0.
    pub rank_deficient: bool,
}

/// Fits a `k`-component PCA from the eigen-decomposition of the sample
/// covariance of `outputs`.
pub fn pca_fit(outputs: ArrayView2<f64>, k: usize) -> Result<PcaBasis> {
    let (n, d) = outputs.dim();
    if k == 0 || k > d {
        return Err(Error::Config(format!("PCA needs 1 <= k <= {d}, got k = {k}")));
    }
    if n <= k {
        return Err(Error::Data(format!("PCA with k = {k} needs more than {k} rows, got {n}")));
    }
    let mean = outputs.mean_axis(Axis(0)).unwrap();
    let centered = &outputs - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * d as f64 * f64::EPSILON * 16.0;

    let mut components = Array2::zeros((k, d));
    let mut explained = Array1::zeros(k);
    let mut rank_deficient = false;
    for (r, &c) in order.iter().take(k).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        // sign convention: largest-magnitude entry positive
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.row_mut(r).assign(&Array1::from(v));
        let lambda = eig.eigenvalues[c];
        if lambda <= tol {
            rank_deficient = true;
            explained[r] = 0.0;
        } else {
            explained[r] = lambda;
        }
    }
    if rank_deficient {
        log::warn!("PCA covariance has fewer than {k} informative directions");
    }
    Ok(PcaBasis {
        mean,
        components,
        explained_variance: explained,
        rank_deficient,
    })
}

pub fn pca_project(basis: &PcaBasis, outputs: ArrayView2<f64>) -> Result<Array2<f64>> {
    if outputs.ncols() != basis.mean.len() {
        return Err(Error::shape("PCA input dimension", basis.mean.len(), outputs.ncols()));
    }
    let centered = &outputs - &basis.mean;
    Ok(centered.dot(&basis.components.t()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: ModelKind,
    pub ratio_train: Option<f64>,
    pub ratio_test: Option<f64>,
    pub rank_train: Option<f64>,
    pub rank_test: Option<f64>,
    pub normalized_rank_train: Option<f64>,
    pub normalized_rank_test: Option<f64>,
}

impl ModelMetrics {
    pub fn from_scores(model: ModelKind, train: &ScoreSet, test: &ScoreSet) -> Self {
        let rank_train = rank_test(train);
        let rank_te = rank_test(test);
        Self {
            model,
            ratio_train: ratio_test(train),
            ratio_test: ratio_test(test),
            rank_train: rank_train.map(|r| r.mean_rank),
            rank_test: rank_te.map(|r| r.mean_rank),
            normalized_rank_train: rank_train.map(|r| r.normalized),
            normalized_rank_test: rank_te.map(|r| r.normalized),
        }
    }

    pub fn ratio(&self, split: Split) -> Option<f64> {
        match split {
            Split::Train => self.ratio_train,
            Split::Test => self.ratio_test,
        }
    }

    pub fn rank(&self, split: Split) -> Option<f64> {
        match split {
            Split::Train => self.rank_train,
            Split::Test => self.rank_test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    /// 1-based trial number.
    pub trial: usize,
    pub repeat: usize,
    pub fold: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub labeled_train: usize,
    pub labeled_test: usize,
    pub models: Vec<ModelMetrics>,
    pub runtime_secs: f64,
    pub config: serde_json::Value,
}

impl TrialReport {
    pub fn metrics(&self, model: ModelKind) -> Option<&ModelMetrics> {
        self.models.iter().find(|m| m.model == model)
    }
}

/// PCA projection of one split, for the scatter export.
#[derive(Debug, Clone, PartialEq)]
pub struct Scatter {
    pub trial: usize,
    pub model: ModelKind,
    pub split: Split,
    /// `N x 2` (or `N x k`; only the first two columns are exported).
    pub points: Array2<f64>,
    pub is_labeled: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct ResultsFile {
    trials: Vec<TrialReport>,
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Writes `results.csv`, `results.json` and one scatter CSV plus SVG per
/// entry of `scatter`. Returns the paths written.
pub fn export_report(reports: &[TrialReport], scatter: &[Scatter], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = vec![write_results_csv(reports, out_dir.join("results.csv"))?];

    let json_path = out_dir.join("results.json");
    let text = serde_json::to_string_pretty(&ResultsFile {
        trials: reports.to_vec(),
    })
    .map_err(|e| Error::json(&json_path, e))?;
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    written.push(json_path);

    for s in scatter {
        let dir = out_dir.join(format!("trial{}", s.trial));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let stem = format!("scatter_{}_{}", s.model, s.split);
        let csv_path = dir.join(format!("{stem}.csv"));
        write_scatter_csv(s, &csv_path)?;
        written.push(csv_path);
        let svg_path = dir.join(format!("{stem}.svg"));
        write_scatter_svg(s, &svg_path)?;
        written.push(svg_path);
    }
    Ok(written)
}

/// `trial,fold,model,split,metric,value` with metrics `ratio` and `rank`.
/// Not-applicable values are written as `NA`.
pub fn write_results_csv(reports: &[TrialReport], path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["trial", "fold", "model", "split", "metric", "value"])
        .map_err(|e| Error::csv(path, e))?;
    for report in reports {
        for m in &report.models {
            for split in [Split::Train, Split::Test] {
                for (metric, value) in [("ratio", m.ratio(split)), ("rank", m.rank(split))] {
                    w.write_record([
                        report.trial.to_string(),
                        report.fold.to_string(),
                        m.model.to_string(),
                        split.to_string(),
                        metric.to_string(),
                        fmt_value(value),
                    ])
                    .map_err(|e| Error::csv(path, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn read_results_json(path: impl AsRef<Path>) -> Result<Vec<TrialReport>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ResultsFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    Ok(file.trials)
}

fn write_scatter_csv(s: &Scatter, path: &Path) -> Result<()> {
    if s.points.nrows() != s.is_labeled.len() || s.points.ncols() < 2 {
        return Err(Error::Shape(format!(
            "scatter needs N x >=2 points with N labels, got {:?} and {}",
            s.points.dim(),
            s.is_labeled.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["pc1", "pc2", "is_labeled"]).map_err(|e| Error::csv(path, e))?;
    for (row, &lab) in s.points.rows().into_iter().zip(&s.is_labeled) {
        w.write_record([row[0].to_string(), row[1].to_string(), u8::from(lab).to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const SVG_SIZE: f64 = 480.0;
const SVG_MAX_UNLABELED: usize = 4000;

fn write_scatter_svg(s: &Scatter, path: &Path) -> Result<()> {
    let pts: Vec<(f64, f64, bool)> = s
        .points
        .rows()
        .into_iter()
        .zip(&s.is_labeled)
        .map(|(r, &l)| (r[0], r[1], l))
        .collect();
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y, _) in &pts {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let pad = 20.0;
    let sx = |x: f64| pad + (x - xmin) / (xmax - xmin).max(1e-12) * (SVG_SIZE - 2.0 * pad);
    let sy = |y: f64| SVG_SIZE - pad - (y - ymin) / (ymax - ymin).max(1e-12) * (SVG_SIZE - 2.0 * pad);

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">"#
    )
    .map_err(io)?;
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).map_err(io)?;
    writeln!(
        w,
        r#"<text x="{pad}" y="14" font-family="sans-serif" font-size="12">trial {} {} {}</text>"#,
        s.trial, s.model, s.split
    )
    .map_err(io)?;
    let n_unlabeled = pts.iter().filter(|p| !p.2).count();
    let stride = n_unlabeled.div_ceil(SVG_MAX_UNLABELED).max(1);
    for &(x, y, _) in pts.iter().filter(|p| !p.2).step_by(stride) {
        writeln!(w, r##"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="#1f77b4" fill-opacity="0.5"/>"##, sx(x), sy(y))
            .map_err(io)?;
    }
    for &(x, y, _) in pts.iter().filter(|p| p.2) {
        writeln!(w, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#ff7f0e"/>"##, sx(x), sy(y)).map_err(io)?;
    }
    writeln!(w, "</svg>").map_err(io)?;
    w.flush().map_err(io)
}

/// Per-model means over trials and head-to-head counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub split: Split,
    pub trials: usize,
    /// Trials where SAD's ratio >= SVDD's.
    pub ratio_wins: usize,
    /// Trials where SAD's mean rank <= SVDD's.
    pub rank_wins: usize,
    /// Trials where both of the above hold.
    pub joint_wins: usize,
    pub mean_ratio_svdd: f64,
    pub mean_ratio_sad: f64,
    pub mean_rank_svdd: f64,
    pub mean_rank_sad: f64,
}

/// Compares SAD against SVDD over the trials where both metrics exist.
pub fn compare_models(reports: &[TrialReport], split: Split) -> Comparison {
    let mut c = Comparison {
        split,
        trials: 0,
        ratio_wins: 0,
        rank_wins: 0,
        joint_wins: 0,
        mean_ratio_svdd: 0.0,
        mean_ratio_sad: 0.0,
        mean_rank_svdd: 0.0,
        mean_rank_sad: 0.0,
    };
    for r in reports {
        let (Some(svdd), Some(sad)) = (r.metrics(ModelKind::Svdd), r.metrics(ModelKind::Sad)) else {
            continue;
        };
        let (Some(ra), Some(rb), Some(ka), Some(kb)) =
            (svdd.ratio(split), sad.ratio(split), svdd.rank(split), sad.rank(split))
        else {
            continue;
        };
        c.trials += 1;
        c.ratio_wins += usize::from(rb >= ra);
        c.rank_wins += usize::from(kb <= ka);
        c.joint_wins += usize::from(rb >= ra && kb <= ka);
        c.mean_ratio_svdd += ra;
        c.mean_ratio_sad += rb;
        c.mean_rank_svdd += ka;
        c.mean_rank_sad += kb;
    }
    if c.trials > 0 {
        let t = c.trials as f64;
        c.mean_ratio_svdd /= t;
        c.mean_ratio_sad /= t;
        c.mean_rank_svdd /= t;
        c.mean_rank_sad /= t;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn set(scores: &[f64], labeled: &[usize]) -> ScoreSet {
        ScoreSet::new(
            scores.to_vec(),
            labeled.iter().copied().collect(),
            Split::Test,
            ModelKind::Sad,
        )
        .unwrap()
    }

    #[test]
    fn ratio_direct_arithmetic() {
        // labeled {2, 4}, unlabeled {1, 2, 3}
        let s = set(&[1.0, 2.0, 2.0, 3.0, 4.0], &[2, 4]);
        assert_eq!(ratio_test(&s), Some(1.5));
    }

    #[test]
    fn ratio_identical_distributions() {
        let s = set(&[1.0, 2.0, 3.0, 1.0, 2.0, 3.0], &[0, 1, 2]);
        assert_eq!(ratio_test(&s), Some(1.0));
    }

    #[test]
    fn metrics_not_applicable_without_labels() {
        let s = set(&[1.0, 2.0], &[]);
        assert_eq!(ratio_test(&s), None);
        assert_eq!(rank_test(&s), None);
        let all = set(&[1.0, 2.0], &[0, 1]);
        assert_eq!(ratio_test(&all), None);
    }

    #[test]
    fn rank_of_top_score() {
        let s = set(&[0.9, 0.5, 0.7, 0.1], &[0]);
        let r = rank_test(&s).unwrap();
        assert_eq!(r.mean_rank, 1.0);
        assert_eq!(r.normalized, 0.25);
    }

    #[test]
    fn tied_top_rank_is_fractional() {
        let s = set(&[0.9, 0.5, 0.9, 0.1], &[0]);
        assert_eq!(rank_test(&s).unwrap().mean_rank, 1.5);
        assert_eq!(average_ranks(&[0.9, 0.5, 0.9, 0.1]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn score_set_validation() {
        assert!(ScoreSet::new(vec![1.0], [1].into(), Split::Train, ModelKind::Svdd).is_err());
        assert!(ScoreSet::new(vec![-1.0], BTreeSet::new(), Split::Train, ModelKind::Svdd).is_err());
        assert!(ScoreSet::new(vec![f64::NAN], BTreeSet::new(), Split::Train, ModelKind::Svdd).is_err());
    }

    #[test]
    fn pca_line_in_plane() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| i as f64 * if j == 0 { 3.0 } else { 4.0 });
        let basis = pca_fit(x.view(), 2).unwrap();
        let c = basis.components.row(0);
        assert!((c[0] - 0.6).abs() < 1e-12 && (c[1] - 0.8).abs() < 1e-12, "{c}");
        assert_eq!(basis.explained_variance[1], 0.0);
        assert!(basis.rank_deficient);
    }

    #[test]
    fn pca_isotropic_cloud_has_equal_variances() {
        // +-1 on each axis: the covariance is a multiple of the identity
        let x = array![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]];
        let basis = pca_fit(x.view(), 3).unwrap();
        let v = &basis.explained_variance;
        assert!((v[0] - v[2]).abs() < 1e-12 && (v[0] - 0.4).abs() < 1e-12, "{v}");
        assert!(!basis.rank_deficient);
    }

    #[test]
    fn pca_argument_checks() {
        let x = Array2::<f64>::zeros((3, 2));
        assert!(pca_fit(x.view(), 0).is_err());
        assert!(pca_fit(x.view(), 3).is_err());
        assert!(pca_fit(x.view(), 2).is_ok());
        assert!(pca_fit(Array2::<f64>::zeros((2, 2)).view(), 2).is_err());
        let basis = pca_fit(Array2::from_shape_fn((5, 2), |(i, j)| (i * (j + 1)) as f64).view(), 1).unwrap();
        assert!(pca_project(&basis, Array2::zeros((1, 3)).view()).is_err());
    }

    #[test]
    fn compare_models_counts_wins() {
        let mk = |trial, svdd: (f64, f64), sad: (f64, f64)| TrialReport {
            trial,
            repeat: 0,
            fold: trial - 1,
            seed: 0,
            n_train: 10,
            n_test: 5,
            labeled_train: 1,
            labeled_test: 1,
            models: vec![
                ModelMetrics {
                    model: ModelKind::Svdd,
                    ratio_train: None,
                    ratio_test: Some(svdd.0),
                    rank_train: None,
                    rank_test: Some(svdd.1),
                    normalized_rank_train: None,
                    normalized_rank_test: None,
                },
                ModelMetrics {
                    model: ModelKind::Sad,
                    ratio_train: None,
                    ratio_test: Some(sad.0),
                    rank_train: None,
                    rank_test: Some(sad.1),
                    normalized_rank_train: None,
                    normalized_rank_test: None,
                },
            ],
            runtime_secs: 0.0,
            config: serde_json::Value::Null,
        };
        let reports = vec![mk(1, (1.5, 10.0), (2.0, 5.0)), mk(2, (2.0, 4.0), (1.0, 8.0))];
        let c = compare_models(&reports, Split::Test);
        assert_eq!((c.trials, c.ratio_wins, c.rank_wins), (2, 1, 1));
        assert_eq!(c.mean_ratio_sad, 1.5);
        assert_eq!(c.mean_rank_svdd, 7.0);
        assert_eq!(compare_models(&reports, Split::Train).trials, 0);
    }
}
