use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::synth::{Archetype, GroundTruthRow};
use super::{full_csv_columns, BookColumn, Dataset, Field, LobSnapshot, Provenance, SchemaConfig, Side, LEVELS};
use crate::error::{Error, Result};

/// How a label file identifies rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKey {
    /// 0-based row index into the dataset.
    #[default]
    RowIndex,
    /// Timestamp in nanoseconds; every row with that timestamp is labeled.
    Timestamp,
}

/// Reads an order book CSV, keeping the columns selected by `schema` as
/// features. Every book column present in the file is checked: values must
/// be finite, sizes positive, bid prices decreasing, ask prices increasing
/// and the best ask above the best bid.
pub fn load_lob_csv(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<Dataset> {
    let path = path.as_ref();
    let selected = schema.validate()?;
    let names: Vec<String> = selected.iter().map(BookColumn::name).collect();

    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    if text.iter().all(|b| b.is_ascii_whitespace()) {
        return Dataset::new(
            Array2::zeros((0, selected.len())),
            Vec::new(),
            names,
            Provenance::RealCsv,
        );
    }

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_slice());
    let header = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let position: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();

    let ts_col = *position
        .get(schema.ts_column.as_str())
        .ok_or_else(|| Error::Schema(format!("{}: missing column {:?}", path.display(), schema.ts_column)))?;
    let missing: Vec<&str> = schema
        .feature_columns
        .iter()
        .filter(|c| !position.contains_key(c.as_str()))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "{}: missing columns {}",
            path.display(),
            missing.join(", ")
        )));
    }
    let book_cols: Vec<(BookColumn, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| BookColumn::parse(h).map(|c| (c, i)))
        .collect();

    let mut values = Vec::new();
    let mut timestamps = Vec::new();
    let mut book: HashMap<BookColumn, f64> = HashMap::with_capacity(book_cols.len());
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::csv(path, e))?;
        let cell = |i: usize| -> Result<&str> {
            record.get(i).ok_or_else(|| {
                Error::Data(format!("{}: row {row}: missing cell in column {:?}", path.display(), &header[i]))
            })
        };
        let ts: i64 = cell(ts_col)?.parse().map_err(|_| {
            Error::Data(format!(
                "{}: row {row}, column {:?}: cannot parse {:?} as integer nanoseconds",
                path.display(),
                schema.ts_column,
                cell(ts_col).unwrap_or("")
            ))
        })?;

        book.clear();
        for &(col, i) in &book_cols {
            let raw = cell(i)?;
            let v: f64 = raw.parse().map_err(|_| {
                Error::Data(format!(
                    "{}: row {row}, column {:?}: cannot parse {raw:?} as a number",
                    path.display(),
                    &header[i]
                ))
            })?;
            book.insert(col, v);
        }
        check_book(&book).map_err(|msg| Error::Data(format!("{}: row {row}: {msg}", path.display())))?;

        timestamps.push(ts);
        values.extend(selected.iter().map(|col| book[col]));
    }

    let n = timestamps.len();
    let features = Array2::from_shape_vec((n, selected.len()), values).map_err(|e| Error::Shape(e.to_string()))?;
    Dataset::new(features, timestamps, names, Provenance::RealCsv)
}

fn check_book(book: &HashMap<BookColumn, f64>) -> std::result::Result<(), String> {
    for (col, &v) in book {
        if !v.is_finite() {
            return Err(format!("{} is not finite", col.name()));
        }
        if col.field == Field::Size && v <= 0.0 {
            return Err(format!("{} must be positive, got {v}", col.name()));
        }
    }
    let px = |side, level| book.get(&BookColumn { side, field: Field::Price, level }).copied();
    if let (Some(bid), Some(ask)) = (px(Side::Bid, 1), px(Side::Ask, 1)) {
        if bid >= ask {
            return Err(format!("crossed book: bid_px_1 {bid} >= ask_px_1 {ask}"));
        }
    }
    for level in 2..=LEVELS {
        if let (Some(prev), Some(cur)) = (px(Side::Bid, level - 1), px(Side::Bid, level)) {
            if cur >= prev {
                return Err(format!("bid prices not decreasing at level {level}"));
            }
        }
        if let (Some(prev), Some(cur)) = (px(Side::Ask, level - 1), px(Side::Ask, level)) {
            if cur <= prev {
                return Err(format!("ask prices not increasing at level {level}"));
            }
        }
    }
    Ok(())
}

/// Writes snapshots in the full 41-column layout.
pub fn write_lob_csv(path: impl AsRef<Path>, snapshots: &[LobSnapshot]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(full_csv_columns()).map_err(|e| Error::csv(path, e))?;
    let mut record = Vec::with_capacity(1 + 4 * LEVELS);
    for snap in snapshots {
        record.clear();
        record.push(snap.timestamp.to_string());
        record.extend(snap.bids.iter().map(|l| l.price.to_string()));
        record.extend(snap.bids.iter().map(|l| l.size.to_string()));
        record.extend(snap.asks.iter().map(|l| l.price.to_string()));
        record.extend(snap.asks.iter().map(|l| l.size.to_string()));
        w.write_record(&record).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a label file (one row index or timestamp per line, `#` comments
/// and blank lines ignored) and attaches the labels to `dataset`.
/// Duplicates are dropped with a warning.
pub fn load_labels(path: impl AsRef<Path>, dataset: Dataset, key: LabelKey) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = BTreeSet::new();
    let mut duplicates = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Data(format!("{}: line {}: cannot parse {line:?}", path.display(), lineno + 1));
        let matched: Vec<usize> = match key {
            LabelKey::RowIndex => {
                let idx: usize = line.parse().map_err(|_| bad())?;
                if idx >= dataset.n_rows() {
                    return Err(Error::Data(format!(
                        "{}: line {}: label index {idx} out of range for {} rows",
                        path.display(),
                        lineno + 1,
                        dataset.n_rows()
                    )));
                }
                vec![idx]
            }
            LabelKey::Timestamp => {
                let ts: i64 = line.parse().map_err(|_| bad())?;
                let ts_all = dataset.timestamps();
                let lo = ts_all.partition_point(|&t| t < ts);
                let hi = ts_all.partition_point(|&t| t <= ts);
                if lo == hi {
                    return Err(Error::Data(format!(
                        "{}: line {}: no row with timestamp {ts}",
                        path.display(),
                        lineno + 1
                    )));
                }
                (lo..hi).collect()
            }
        };
        for idx in matched {
            if !rows.insert(idx) {
                duplicates += 1;
            }
        }
    }
    if duplicates > 0 {
        log::warn!("{}: dropped {duplicates} duplicate label(s)", path.display());
    }
    dataset.with_labels(rows)
}

pub fn write_labels(path: impl AsRef<Path>, rows: impl IntoIterator<Item = usize>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        writeln!(w, "{r}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the `row_index,archetype,labeled` sidecar.
pub fn write_ground_truth(path: impl AsRef<Path>, rows: &[GroundTruthRow]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["row_index", "archetype", "labeled"]).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.write_record([
            r.row.to_string(),
            r.archetype.as_str().to_string(),
            u8::from(r.labeled).to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let bad = || Error::Data(format!("{}: row {}: malformed ground-truth record", path.display(), r + 1));
        let row = record.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let archetype = record.get(1).and_then(Archetype::parse).ok_or_else(bad)?;
        let labeled = match record.get(2) {
            Some("1") => true,
            Some("0") => false,
            _ => return Err(bad()),
        };
        out.push(GroundTruthRow { row, archetype, labeled });
    }
    Ok(out)
}
