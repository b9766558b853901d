//! Synthetic order book stream with injected manipulation episodes.
//!
//! Normal rows: the best bid follows a tick-rounded random walk with a weak
//! pull back toward the start price, the spread is 1-3 ticks, deeper levels
//! sit 1-2 ticks apart and level sizes are log-normal, growing slowly with
//! depth.
//!
//! Anomalies are contiguous episodes of three archetypes:
//!
//! * spoof: a 10-50x size spike on a block of levels 3..=10 of one side;
//! * layering: a monotone size ladder on levels 2..=k of one side that
//!   exists only for the episode;
//! * flash: the book jumps more than 8 ticks for a few rows, the spread
//!   widens and the top of the book thins out, then the book returns.
//!
//! The number of anomalous rows is drawn from `Binomial(n_rows, anomaly_rate)`.
//! Exactly `n_labeled` of them carry a label; the full list is returned
//! separately as ground truth.

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Level, LobSnapshot, Provenance, SchemaConfig, LEVELS};
use crate::error::{Error, Result};

/// Rows kept normal before every episode.
const EPISODE_GAP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    Spoof,
    Layering,
    Flash,
}

impl Archetype {
    pub fn as_str(self) -> &'static str {
        match self {
            Archetype::Spoof => "spoof",
            Archetype::Layering => "layering",
            Archetype::Flash => "flash",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "spoof" => Some(Archetype::Spoof),
            "layering" => Some(Archetype::Layering),
            "flash" => Some(Archetype::Flash),
            _ => None,
        }
    }

    fn length_range(self) -> (usize, usize) {
        match self {
            Archetype::Spoof => (2, 6),
            Archetype::Layering => (3, 8),
            Archetype::Flash => (1, 3),
        }
    }
}

/// Relative frequencies of the anomaly archetypes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeMix {
    pub spoof: f64,
    pub layering: f64,
    pub flash: f64,
}

impl Default for ArchetypeMix {
    fn default() -> Self {
        Self {
            spoof: 0.4,
            layering: 0.3,
            flash: 0.3,
        }
    }
}

impl ArchetypeMix {
    fn sample(&self, rng: &mut impl Rng) -> Archetype {
        let total = self.spoof + self.layering + self.flash;
        let u = rng.random::<f64>() * total;
        if u < self.spoof {
            Archetype::Spoof
        } else if u < self.spoof + self.layering {
            Archetype::Layering
        } else {
            Archetype::Flash
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_rows: usize,
    /// Expected fraction of rows that are injected anomalies.
    pub anomaly_rate: f64,
    pub n_labeled: usize,
    pub seed: u64,
    pub tick_size: f64,
    pub start_price: f64,
    /// Per-row probability that the best bid moves by one tick.
    pub volatility: f64,
    /// Strength of the pull toward the start price, per tick of displacement.
    pub mean_reversion: f64,
    /// Median size at the best level.
    pub size_median: f64,
    /// Log-normal shape of level sizes.
    pub size_sigma: f64,
    /// Log growth of the median size per level of depth.
    pub size_level_growth: f64,
    pub archetype_mix: ArchetypeMix,
    pub start_ts: i64,
    pub cadence_ns: i64,
    pub jitter_ns: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_rows: 60_000,
            anomaly_rate: 0.002,
            n_labeled: 30,
            seed: 1,
            tick_size: 0.01,
            start_price: 136.0,
            volatility: 0.05,
            mean_reversion: 0.002,
            size_median: 20.0,
            size_sigma: 0.5,
            size_level_growth: 0.08,
            archetype_mix: ArchetypeMix::default(),
            // 2017-10-02 13:30:00 UTC
            start_ts: 1_506_951_000_000_000_000,
            cadence_ns: 10_000_000,
            jitter_ns: 2_000_000,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_rows == 0 {
            return fail("n_rows must be positive".into());
        }
        if !(0.0..1.0).contains(&self.anomaly_rate) {
            return fail(format!("anomaly_rate must be in [0, 1), got {}", self.anomaly_rate));
        }
        if !(self.tick_size > 0.0 && self.tick_size.is_finite()) {
            return fail(format!("tick_size must be positive, got {}", self.tick_size));
        }
        if !(self.start_price > 0.0 && self.start_price.is_finite()) {
            return fail(format!("start_price must be positive, got {}", self.start_price));
        }
        if !(0.0..=1.0).contains(&self.volatility) {
            return fail(format!("volatility must be in [0, 1], got {}", self.volatility));
        }
        if !(self.mean_reversion >= 0.0 && self.mean_reversion.is_finite()) {
            return fail(format!("mean_reversion must be >= 0, got {}", self.mean_reversion));
        }
        if !(self.size_median >= 1.0 && self.size_sigma >= 0.0 && self.size_level_growth.is_finite()) {
            return fail("size parameters must satisfy size_median >= 1 and size_sigma >= 0".into());
        }
        let mix = self.archetype_mix;
        if [mix.spoof, mix.layering, mix.flash].iter().any(|&w| !(w >= 0.0 && w.is_finite()))
            || mix.spoof + mix.layering + mix.flash <= 0.0
        {
            return fail("archetype_mix weights must be >= 0 with a positive sum".into());
        }
        if self.cadence_ns <= 0 || self.jitter_ns < 0 || self.jitter_ns >= self.cadence_ns {
            return fail("timestamps need cadence_ns > jitter_ns >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub row: usize,
    pub archetype: Archetype,
    pub labeled: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub snapshots: Vec<LobSnapshot>,
    /// Default-view features with the labeled rows attached.
    pub dataset: Dataset,
    /// Every injected anomaly row, sorted by row.
    pub ground_truth: Vec<GroundTruthRow>,
}

impl SyntheticData {
    pub fn labeled_rows(&self) -> Vec<usize> {
        self.ground_truth.iter().filter(|g| g.labeled).map(|g| g.row).collect()
    }

    /// Features for another column selection, carrying the same labels.
    pub fn features_for(&self, schema: &SchemaConfig) -> Result<Dataset> {
        let cols = schema.validate()?;
        let n = self.snapshots.len();
        let features = Array2::from_shape_fn((n, cols.len()), |(i, j)| self.snapshots[i].column(cols[j]));
        Dataset::new(
            features,
            self.dataset.timestamps().to_vec(),
            schema.feature_columns.clone(),
            Provenance::Synthetic,
        )?
        .with_labels(self.dataset.labels().iter().copied())
    }
}

#[derive(Debug, Clone, Copy)]
struct Episode {
    archetype: Archetype,
    start: usize,
    len: usize,
}

/// Base book state for one row, before anomaly edits.
struct BookState {
    best_bid: i64,
    anchor: i64,
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_rows;

    let n_anomalous = if cfg.anomaly_rate > 0.0 {
        Binomial::new(n as u64, cfg.anomaly_rate)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    if cfg.n_labeled > n_anomalous {
        return Err(Error::Config(format!(
            "n_labeled = {} exceeds the {n_anomalous} injected anomaly rows",
            cfg.n_labeled
        )));
    }
    let episodes = place_episodes(cfg, n_anomalous, &mut rng)?;

    let mut snapshots = Vec::with_capacity(n);
    let anchor = (cfg.start_price / cfg.tick_size).round() as i64;
    let mut state = BookState { best_bid: anchor, anchor };
    let mut ts = cfg.start_ts;
    for i in 0..n {
        if i > 0 {
            state.step(cfg, &mut rng);
            let jitter = if cfg.jitter_ns > 0 {
                rng.random_range(-cfg.jitter_ns..=cfg.jitter_ns)
            } else {
                0
            };
            ts += cfg.cadence_ns + jitter;
        }
        snapshots.push(normal_book(cfg, &state, ts, &mut rng));
    }

    let mut ground_truth = Vec::with_capacity(n_anomalous);
    for ep in &episodes {
        apply_episode(cfg, ep, &mut snapshots, &mut rng);
        ground_truth.extend((ep.start..ep.start + ep.len).map(|row| GroundTruthRow {
            row,
            archetype: ep.archetype,
            labeled: false,
        }));
    }
    ground_truth.sort();
    for k in index::sample(&mut rng, ground_truth.len(), cfg.n_labeled) {
        ground_truth[k].labeled = true;
    }

    for (i, snap) in snapshots.iter().enumerate() {
        snap.validate()
            .map_err(|e| Error::Data(format!("generated row {i} violates book invariants: {e}")))?;
    }

    let schema = SchemaConfig::default();
    let cols = schema.validate()?;
    let features = Array2::from_shape_fn((n, cols.len()), |(i, j)| snapshots[i].column(cols[j]));
    let dataset = Dataset::new(
        features,
        snapshots.iter().map(|s| s.timestamp).collect(),
        schema.feature_columns.clone(),
        Provenance::Synthetic,
    )?
    .with_labels(ground_truth.iter().filter(|g| g.labeled).map(|g| g.row))?;

    Ok(SyntheticData {
        snapshots,
        dataset,
        ground_truth,
    })
}

/// Splits `n_anomalous` rows into episodes and spreads them over the stream
/// without overlap, each preceded by at least [`EPISODE_GAP`] normal rows.
fn place_episodes(cfg: &SynthConfig, n_anomalous: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Episode>> {
    let mut episodes = Vec::new();
    let mut remaining = n_anomalous;
    while remaining > 0 {
        let archetype = cfg.archetype_mix.sample(rng);
        let (lo, hi) = archetype.length_range();
        let len = rng.random_range(lo..=hi).min(remaining);
        episodes.push(Episode { archetype, start: 0, len });
        remaining -= len;
    }
    episodes.shuffle(rng);

    let needed = n_anomalous + EPISODE_GAP * episodes.len();
    if needed > cfg.n_rows {
        return Err(Error::Config(format!(
            "{n_anomalous} anomaly rows in {} episodes do not fit in {} rows",
            episodes.len(),
            cfg.n_rows
        )));
    }
    let slack = cfg.n_rows - needed;
    let mut offsets: Vec<usize> = (0..episodes.len()).map(|_| rng.random_range(0..=slack)).collect();
    offsets.sort_unstable();
    let mut used = 0;
    for (ep, off) in episodes.iter_mut().zip(offsets) {
        used += EPISODE_GAP;
        ep.start = off + used;
        used += ep.len;
    }
    Ok(episodes)
}

impl BookState {
    fn step(&mut self, cfg: &SynthConfig, rng: &mut ChaCha8Rng) {
        if rng.random::<f64>() < cfg.volatility {
            let displacement = (self.best_bid - self.anchor) as f64;
            let p_up = (0.5 - cfg.mean_reversion * displacement).clamp(0.05, 0.95);
            self.best_bid += if rng.random::<f64>() < p_up { 1 } else { -1 };
        }
    }
}

fn level_size(cfg: &SynthConfig, depth: usize, rng: &mut ChaCha8Rng) -> u64 {
    let z: f64 = StandardNormal.sample(rng);
    let median = cfg.size_median * (cfg.size_level_growth * depth as f64).exp();
    (median * (cfg.size_sigma * z).exp()).round().max(1.0) as u64
}

fn normal_book(cfg: &SynthConfig, state: &BookState, ts: i64, rng: &mut ChaCha8Rng) -> LobSnapshot {
    let spread: i64 = match rng.random::<f64>() {
        u if u < 0.85 => 1,
        u if u < 0.97 => 2,
        _ => 3,
    };
    let mut bid_ticks = [0i64; LEVELS];
    let mut ask_ticks = [0i64; LEVELS];
    bid_ticks[0] = state.best_bid;
    ask_ticks[0] = state.best_bid + spread;
    for k in 1..LEVELS {
        let gap_b = if rng.random::<f64>() < 0.1 { 2 } else { 1 };
        let gap_a = if rng.random::<f64>() < 0.1 { 2 } else { 1 };
        bid_ticks[k] = bid_ticks[k - 1] - gap_b;
        ask_ticks[k] = ask_ticks[k - 1] + gap_a;
    }
    let bids = std::array::from_fn(|k| Level {
        price: bid_ticks[k] as f64 * cfg.tick_size,
        size: 0,
    });
    let asks = std::array::from_fn(|k| Level {
        price: ask_ticks[k] as f64 * cfg.tick_size,
        size: 0,
    });
    let mut snap = LobSnapshot {
        timestamp: ts,
        bids,
        asks,
    };
    for k in 0..LEVELS {
        snap.bids[k].size = level_size(cfg, k, rng);
        snap.asks[k].size = level_size(cfg, k, rng);
    }
    snap
}

fn side_mut(snap: &mut LobSnapshot, bid: bool) -> &mut [Level; LEVELS] {
    if bid {
        &mut snap.bids
    } else {
        &mut snap.asks
    }
}

fn apply_episode(cfg: &SynthConfig, ep: &Episode, snapshots: &mut [LobSnapshot], rng: &mut ChaCha8Rng) {
    let rows = ep.start..ep.start + ep.len;
    let bid_side = rng.random_bool(0.5);
    match ep.archetype {
        Archetype::Spoof => {
            let first = rng.random_range(3..=5usize);
            let width = rng.random_range(2..=4usize);
            let last = (first + width - 1).min(LEVELS);
            let multiplier = rng.random_range(10.0..=50.0);
            for snap in &mut snapshots[rows] {
                for level in &mut side_mut(snap, bid_side)[first - 1..last] {
                    level.size = (level.size as f64 * multiplier).round() as u64;
                }
            }
        }
        Archetype::Layering => {
            let deepest = rng.random_range(5..=LEVELS);
            let base = rng.random_range(4.0..=8.0) * cfg.size_median;
            for snap in &mut snapshots[rows] {
                for (k, level) in side_mut(snap, bid_side)[1..deepest].iter_mut().enumerate() {
                    level.size = (base * (1.0 + 0.6 * k as f64)).round() as u64;
                }
            }
        }
        Archetype::Flash => {
            // `bid_side` picks the direction: a sweep of the bid side moves the book down.
            let jump = rng.random_range(12..=18i64);
            let lag = rng.random_range(2..=4i64);
            let (bid_shift, ask_shift) = if bid_side {
                (-jump, -(jump - lag))
            } else {
                (jump - lag, jump)
            };
            let thin: f64 = rng.random_range(0.05..=0.2);
            for snap in &mut snapshots[rows] {
                for (k, level) in snap.bids.iter_mut().enumerate() {
                    level.price = ((level.price / cfg.tick_size).round() as i64 + bid_shift) as f64 * cfg.tick_size;
                    if k < 3 {
                        level.size = ((level.size as f64) * thin).round().max(1.0) as u64;
                    }
                }
                for (k, level) in snap.asks.iter_mut().enumerate() {
                    level.price = ((level.price / cfg.tick_size).round() as i64 + ask_shift) as f64 * cfg.tick_size;
                    if k < 3 {
                        level.size = ((level.size as f64) * thin).round().max(1.0) as u64;
                    }
                }
            }
        }
    }
}
