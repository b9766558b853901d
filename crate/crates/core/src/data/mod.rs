//! Limit order book snapshots, the feature dataset built from them, label
//! files and per-feature z-scoring.

mod io;
mod normalize;
mod synth;

use std::collections::BTreeSet;
use std::ops::Range;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_labels, load_lob_csv, read_ground_truth, write_ground_truth, write_labels, write_lob_csv, LabelKey};
pub use normalize::{apply_normalizer, fit_normalizer, Normalizer};
pub use synth::{generate_synthetic, Archetype, ArchetypeMix, GroundTruthRow, SynthConfig, SyntheticData};

/// Book depth per side.
pub const LEVELS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    /// Price in currency units, a multiple of the tick size.
    pub price: f64,
    pub size: u64,
}

/// One order book update: the top [`LEVELS`] levels of each side, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct LobSnapshot {
    /// Nanoseconds since the Unix epoch.
    pub timestamp: i64,
    pub bids: [Level; LEVELS],
    pub asks: [Level; LEVELS],
}

impl LobSnapshot {
    /// Checks price ordering, finiteness and positive sizes.
    pub fn validate(&self) -> Result<()> {
        for (side, levels) in [("bid", &self.bids), ("ask", &self.asks)] {
            for (k, level) in levels.iter().enumerate() {
                if !level.price.is_finite() {
                    return Err(Error::Data(format!("{side} level {} price is not finite", k + 1)));
                }
                if level.size == 0 {
                    return Err(Error::Data(format!("{side} level {} size is zero", k + 1)));
                }
            }
        }
        if self.asks[0].price <= self.bids[0].price {
            return Err(Error::Data(format!(
                "crossed book: best bid {} >= best ask {}",
                self.bids[0].price, self.asks[0].price
            )));
        }
        for k in 1..LEVELS {
            if self.bids[k].price >= self.bids[k - 1].price {
                return Err(Error::Data(format!("bid prices not decreasing at level {}", k + 1)));
            }
            if self.asks[k].price <= self.asks[k - 1].price {
                return Err(Error::Data(format!("ask prices not increasing at level {}", k + 1)));
            }
        }
        Ok(())
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.bids[0].price + self.asks[0].price)
    }

    /// Value of a named book column such as `bid_px_3` or `ask_sz_10`.
    pub fn column(&self, col: BookColumn) -> f64 {
        let levels = match col.side {
            Side::Bid => &self.bids,
            Side::Ask => &self.asks,
        };
        let level = &levels[col.level - 1];
        match col.field {
            Field::Price => level.price,
            Field::Size => level.size as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bid,
    Ask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Price,
    Size,
}

/// A parsed book column name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BookColumn {
    pub side: Side,
    pub field: Field,
    /// 1-based.
    pub level: usize,
}

impl BookColumn {
    pub fn parse(name: &str) -> Option<Self> {
        let mut parts = name.trim().splitn(3, '_');
        let side = match parts.next()? {
            "bid" => Side::Bid,
            "ask" => Side::Ask,
            _ => return None,
        };
        let field = match parts.next()? {
            "px" => Field::Price,
            "sz" => Field::Size,
            _ => return None,
        };
        let level: usize = parts.next()?.parse().ok()?;
        (1..=LEVELS).contains(&level).then_some(Self { side, field, level })
    }

    pub fn name(&self) -> String {
        let side = match self.side {
            Side::Bid => "bid",
            Side::Ask => "ask",
        };
        let field = match self.field {
            Field::Price => "px",
            Field::Size => "sz",
        };
        format!("{side}_{field}_{}", self.level)
    }
}

/// Column order of the full CSV layout: `ts`, then bid prices, bid sizes,
/// ask prices, ask sizes, each for levels 1..=10.
pub fn full_csv_columns() -> Vec<String> {
    let mut cols = vec!["ts".to_string()];
    for (side, field) in [
        (Side::Bid, Field::Price),
        (Side::Bid, Field::Size),
        (Side::Ask, Field::Price),
        (Side::Ask, Field::Size),
    ] {
        for level in 1..=LEVELS {
            cols.push(BookColumn { side, field, level }.name());
        }
    }
    cols
}

/// Which 20 book fields feed the network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureView {
    /// Top 5 levels of both sides, the 10 best price levels of the book:
    /// `bid_px_k, bid_sz_k, ask_px_k, ask_sz_k` for k = 1..=5.
    #[default]
    Combined,
    /// All 10 bid levels: `bid_px_k, bid_sz_k`.
    Bid,
    /// All 10 ask levels: `ask_px_k, ask_sz_k`.
    Ask,
}

impl FeatureView {
    pub fn columns(self) -> Vec<String> {
        let mut out = Vec::with_capacity(20);
        let pair = |out: &mut Vec<String>, side, level| {
            out.push(BookColumn { side, field: Field::Price, level }.name());
            out.push(BookColumn { side, field: Field::Size, level }.name());
        };
        match self {
            FeatureView::Combined => {
                for level in 1..=LEVELS / 2 {
                    pair(&mut out, Side::Bid, level);
                    pair(&mut out, Side::Ask, level);
                }
            }
            FeatureView::Bid => (1..=LEVELS).for_each(|l| pair(&mut out, Side::Bid, l)),
            FeatureView::Ask => (1..=LEVELS).for_each(|l| pair(&mut out, Side::Ask, l)),
        }
        out
    }
}

/// Column selection for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub ts_column: String,
    pub feature_columns: Vec<String>,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self::from_view(FeatureView::default())
    }
}

impl SchemaConfig {
    pub fn from_view(view: FeatureView) -> Self {
        Self {
            ts_column: "ts".into(),
            feature_columns: view.columns(),
        }
    }

    pub fn validate(&self) -> Result<Vec<BookColumn>> {
        if self.feature_columns.is_empty() {
            return Err(Error::Schema("no feature columns selected".into()));
        }
        let mut seen = BTreeSet::new();
        self.feature_columns
            .iter()
            .map(|name| {
                let col = BookColumn::parse(name)
                    .ok_or_else(|| Error::Schema(format!("unknown feature column {name:?}")))?;
                if !seen.insert(name) {
                    return Err(Error::Schema(format!("duplicate feature column {name:?}")));
                }
                Ok(col)
            })
            .collect()
    }

    /// Feature vector of one snapshot.
    pub fn project(&self, snap: &LobSnapshot) -> Result<Vec<f64>> {
        Ok(self.validate()?.iter().map(|&c| snap.column(c)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    RealCsv,
    Synthetic,
}

/// Feature matrix with timestamps and the sparse set of rows labeled as
/// anomalies (label -1).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    timestamps: Vec<i64>,
    labels: BTreeSet<usize>,
    feature_names: Vec<String>,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        timestamps: Vec<i64>,
        feature_names: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        if timestamps.len() != features.nrows() {
            return Err(Error::shape("timestamp count", features.nrows(), timestamps.len()));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::shape("feature name count", features.ncols(), feature_names.len()));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::Data(format!("timestamps decrease at row {}", i + 1)));
        }
        Ok(Self {
            features,
            timestamps,
            labels: BTreeSet::new(),
            feature_names,
            provenance,
        })
    }

    /// Replaces the label set. Every index must be `< n_rows`.
    pub fn with_labels(mut self, labels: impl IntoIterator<Item = usize>) -> Result<Self> {
        let labels: BTreeSet<usize> = labels.into_iter().collect();
        if let Some(&bad) = labels.range(self.n_rows()..).next() {
            return Err(Error::Data(format!(
                "label index {bad} out of range for {} rows",
                self.n_rows()
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn labels(&self) -> &BTreeSet<usize> {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// `m`: number of labeled rows.
    pub fn n_labeled(&self) -> usize {
        self.labels.len()
    }

    /// `n`: number of unlabeled rows.
    pub fn n_unlabeled(&self) -> usize {
        self.n_rows() - self.n_labeled()
    }

    pub fn is_labeled(&self, row: usize) -> bool {
        self.labels.contains(&row)
    }

    /// Feature rows of the given ranges, concatenated in order.
    pub fn rows(&self, ranges: &[Range<usize>]) -> Result<Array2<f64>> {
        let idx = expand_ranges(ranges, self.n_rows())?;
        Ok(self.features.select(Axis(0), &idx))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub(crate) fn with_features(&self, features: Array2<f64>) -> Self {
        Self {
            features,
            timestamps: self.timestamps.clone(),
            labels: self.labels.clone(),
            feature_names: self.feature_names.clone(),
            provenance: self.provenance,
        }
    }
}

/// Flattens row ranges into indices, checking bounds.
pub fn expand_ranges(ranges: &[Range<usize>], n_rows: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(ranges.iter().map(|r| r.len()).sum());
    for r in ranges {
        if r.end > n_rows || r.start > r.end {
            return Err(Error::Data(format!("row range {r:?} outside 0..{n_rows}")));
        }
        out.extend(r.clone());
    }
    Ok(out)
}
