//! Long-format trajectory data: typed columns, factor encodings, and
//! time-series boundary marking.
//!
//! A [`Dataset`] holds named columns, each either numeric or a factor
//! (explicit level list, optional ordered flag, reference level 0 unless
//! re-pointed). Row order is preserved exactly as read; the AR1 machinery
//! depends on it. [`mark_series_starts`] validates that each series forms
//! one contiguous, strictly increasing block and records where it begins.

use std::collections::HashMap;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("duplicate header `{0}`")]
    DuplicateHeader(String),
    #[error("column `{column}`, row {row}: cannot parse `{value}` as a number")]
    BadNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error("column `{column}`, row {row}: missing value (use drop-rows handling to discard such rows)")]
    MissingValue { column: String, row: usize },
    #[error("column `{0}` is not numeric")]
    NotNumeric(String),
    #[error("column `{0}` is not a factor")]
    NotFactor(String),
    #[error("factor `{column}` has no level `{level}`")]
    UnknownLevel { column: String, level: String },
    #[error("series `{level}` is not contiguous: it reappears after another series")]
    NonContiguousSeries { level: String },
    #[error("ordering column not strictly increasing within a series at row {row} (ties are not allowed)")]
    NonMonotoneOrder { row: usize },
    #[error("column name `{0}` already exists")]
    NameCollision(String),
    #[error("dataset has no rows")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnType {
    Numeric,
    Factor,
}

/// How to treat missing cells (empty or `NA`) during ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingPolicy {
    /// Any missing cell is an error (default).
    Reject,
    /// Rows containing a missing cell in any schema column are dropped.
    DropRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Column {
    Numeric {
        values: Vec<f64>,
        /// Unit label carried as metadata (e.g. "Hz", "s"); never interpreted.
        unit: Option<String>,
    },
    Factor {
        /// Per-row level index into `levels`.
        codes: Vec<u32>,
        levels: Vec<String>,
        ordered: bool,
        /// Index of the reference level.
        reference: usize,
    },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric { values, .. } => values.len(),
            Column::Factor { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column_type(&self) -> ColumnType {
        match self {
            Column::Numeric { .. } => ColumnType::Numeric,
            Column::Factor { .. } => ColumnType::Factor,
        }
    }
}

/// Read-only view of a factor column.
#[derive(Debug, Clone, Copy)]
pub struct FactorView<'a> {
    pub codes: &'a [u32],
    pub levels: &'a [String],
    pub ordered: bool,
    pub reference: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Column>,
    n: usize,
}

impl Dataset {
    pub fn new() -> Self {
        Dataset::default()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.position(name).map(|i| &self.columns[i])
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64], DataError> {
        match self.column(name) {
            None => Err(DataError::MissingColumn(name.to_string())),
            Some(Column::Numeric { values, .. }) => Ok(values),
            Some(_) => Err(DataError::NotNumeric(name.to_string())),
        }
    }

    pub fn factor(&self, name: &str) -> Result<FactorView<'_>, DataError> {
        match self.column(name) {
            None => Err(DataError::MissingColumn(name.to_string())),
            Some(Column::Factor {
                codes,
                levels,
                ordered,
                reference,
            }) => Ok(FactorView {
                codes,
                levels,
                ordered: *ordered,
                reference: *reference,
            }),
            Some(_) => Err(DataError::NotFactor(name.to_string())),
        }
    }

    /// Append a column; the first column fixes the row count.
    pub fn add_column(&mut self, name: &str, column: Column) -> Result<(), DataError> {
        if self.position(name).is_some() {
            return Err(DataError::NameCollision(name.to_string()));
        }
        if self.names.is_empty() {
            self.n = column.len();
        }
        assert_eq!(column.len(), self.n, "column length mismatch");
        self.names.push(name.to_string());
        self.columns.push(column);
        Ok(())
    }

    pub fn add_numeric(&mut self, name: &str, values: Vec<f64>, unit: Option<&str>) -> Result<(), DataError> {
        self.add_column(
            name,
            Column::Numeric {
                values,
                unit: unit.map(str::to_string),
            },
        )
    }

    /// Build a factor from row labels; levels in first-appearance order.
    pub fn add_factor_from_strings(&mut self, name: &str, labels: &[String]) -> Result<(), DataError> {
        let (codes, levels) = encode_labels(labels);
        self.add_column(
            name,
            Column::Factor {
                codes,
                levels,
                ordered: false,
                reference: 0,
            },
        )
    }

    /// Materialize the `row`-th value of a column as display text.
    fn cell_text(&self, col: usize, row: usize) -> String {
        match &self.columns[col] {
            Column::Numeric { values, .. } => format!("{}", values[row]),
            Column::Factor { codes, levels, .. } => levels[codes[row] as usize].clone(),
        }
    }
}

fn encode_labels(labels: &[String]) -> (Vec<u32>, Vec<String>) {
    let mut levels: Vec<String> = Vec::new();
    let mut index: HashMap<String, u32> = HashMap::new();
    let mut codes = Vec::with_capacity(labels.len());
    for label in labels {
        let code = *index.entry(label.clone()).or_insert_with(|| {
            levels.push(label.clone());
            (levels.len() - 1) as u32
        });
        codes.push(code);
    }
    (codes, levels)
}

/// Load a long-format CSV. Only the schema's columns are ingested; extra
/// CSV columns are ignored. Missing cells are the empty string or `NA`.
pub fn load_long_csv(
    path: impl AsRef<Path>,
    schema: &[(String, ColumnType)],
    missing: MissingPolicy,
) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        if seen.insert(h, i).is_some() {
            return Err(DataError::DuplicateHeader(h.to_string()));
        }
    }
    let mut positions = Vec::with_capacity(schema.len());
    for (name, _) in schema {
        match seen.get(name.as_str()) {
            Some(&i) => positions.push(i),
            None => return Err(DataError::MissingColumn(name.clone())),
        }
    }

    // Collect raw cells first so DropRows can discard whole rows.
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); schema.len()];
    'rows: for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let mut staged = Vec::with_capacity(schema.len());
        for (slot, &pos) in positions.iter().enumerate() {
            let cell = record.get(pos).unwrap_or("").trim();
            if cell.is_empty() || cell == "NA" {
                match missing {
                    MissingPolicy::Reject => {
                        return Err(DataError::MissingValue {
                            column: schema[slot].0.clone(),
                            row: row_idx + 2, // 1-based, counting the header
                        });
                    }
                    MissingPolicy::DropRows => continue 'rows,
                }
            }
            staged.push(cell.to_string());
        }
        for (slot, cell) in staged.into_iter().enumerate() {
            raw[slot].push(cell);
        }
    }

    let mut data = Dataset::new();
    for ((name, ty), cells) in schema.iter().zip(raw) {
        match ty {
            ColumnType::Numeric => {
                let mut values = Vec::with_capacity(cells.len());
                for (i, cell) in cells.iter().enumerate() {
                    let v: f64 = cell.parse().map_err(|_| DataError::BadNumeric {
                        column: name.clone(),
                        row: i + 2,
                        value: cell.clone(),
                    })?;
                    if !v.is_finite() {
                        return Err(DataError::BadNumeric {
                            column: name.clone(),
                            row: i + 2,
                            value: cell.clone(),
                        });
                    }
                    values.push(v);
                }
                data.add_numeric(name, values, None)?;
            }
            ColumnType::Factor => {
                data.add_factor_from_strings(name, &cells)?;
            }
        }
    }
    if data.names.is_empty() {
        // No schema columns: still a valid (empty) dataset.
        data.n = 0;
    }
    Ok(data)
}

/// Write the dataset as CSV in column order. Numerics use shortest
/// round-trip formatting, so reloading reproduces them exactly.
pub fn write_csv(d: &Dataset, mut w: impl Write) -> Result<(), DataError> {
    let header = d.names.join(",");
    writeln!(w, "{header}")?;
    for row in 0..d.n {
        let mut line = String::new();
        for col in 0..d.columns.len() {
            if col > 0 {
                line.push(',');
            }
            line.push_str(&d.cell_text(col, row));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn write_csv_path(d: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    write_csv(d, std::io::BufWriter::new(file))
}

/// Time-series boundaries: one contiguous block per series level, with
/// the block's first row flagged as its start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesIndex {
    pub series_column: String,
    pub start_flags: Vec<bool>,
    pub ranges: Vec<Range<usize>>,
}

impl SeriesIndex {
    pub fn n_rows(&self) -> usize {
        self.start_flags.len()
    }

    pub fn shortest(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).min().unwrap_or(0)
    }

    pub fn mean_length(&self) -> f64 {
        if self.ranges.is_empty() {
            return 0.0;
        }
        self.start_flags.len() as f64 / self.ranges.len() as f64
    }
}

/// Validate contiguity and strict within-series ordering, and flag the
/// first row of each series block.
pub fn mark_series_starts(
    d: &Dataset,
    series_col: &str,
    order_col: &str,
) -> Result<SeriesIndex, DataError> {
    let fac = d.factor(series_col)?;
    let order = d.numeric(order_col)?;
    let mut start_flags = vec![false; d.n];
    let mut ranges = Vec::new();
    let mut seen = vec![false; fac.levels.len()];
    let mut row = 0usize;
    while row < d.n {
        let level = fac.codes[row] as usize;
        if seen[level] {
            return Err(DataError::NonContiguousSeries {
                level: fac.levels[level].clone(),
            });
        }
        seen[level] = true;
        start_flags[row] = true;
        let start = row;
        row += 1;
        while row < d.n && fac.codes[row] as usize == level {
            if order[row] <= order[row - 1] {
                return Err(DataError::NonMonotoneOrder { row });
            }
            row += 1;
        }
        ranges.push(start..row);
    }
    Ok(SeriesIndex {
        series_column: series_col.to_string(),
        start_flags,
        ranges,
    })
}

/// Mark a factor as ordered with the named reference level. In parametric
/// terms an ordered factor expands to one treatment dummy per
/// non-reference level; in smooth `by=` position it yields one difference
/// smooth per non-reference level.
pub fn to_ordered_treatment(d: &Dataset, col: &str, reference: &str) -> Result<Dataset, DataError> {
    let mut out = d.clone();
    let pos = out
        .position(col)
        .ok_or_else(|| DataError::MissingColumn(col.to_string()))?;
    match &mut out.columns[pos] {
        Column::Factor {
            levels,
            ordered,
            reference: r,
            ..
        } => {
            let idx = levels
                .iter()
                .position(|l| l == reference)
                .ok_or_else(|| DataError::UnknownLevel {
                    column: col.to_string(),
                    level: reference.to_string(),
                })?;
            *ordered = true;
            *r = idx;
            Ok(out)
        }
        _ => Err(DataError::NotFactor(col.to_string())),
    }
}

/// New factor with one level per observed `a`/`b` pair, labeled "a.b",
/// in first-appearance order. Unobserved pairs get no level.
pub fn combine_factors(d: &Dataset, a: &str, b: &str, new_name: &str) -> Result<Dataset, DataError> {
    if d.position(new_name).is_some() {
        return Err(DataError::NameCollision(new_name.to_string()));
    }
    let fa = d.factor(a)?;
    let fb = d.factor(b)?;
    let labels: Vec<String> = (0..d.n)
        .map(|i| {
            format!(
                "{}.{}",
                fa.levels[fa.codes[i] as usize], fb.levels[fb.codes[i] as usize]
            )
        })
        .collect();
    let mut out = d.clone();
    out.add_factor_from_strings(new_name, &labels)?;
    Ok(out)
}

/// Copy a factor column under a new name (used to keep both plain and
/// ordered encodings of the same grouping in one dataset).
pub fn copy_factor(d: &Dataset, col: &str, new_name: &str) -> Result<Dataset, DataError> {
    if d.position(new_name).is_some() {
        return Err(DataError::NameCollision(new_name.to_string()));
    }
    let pos = d
        .position(col)
        .ok_or_else(|| DataError::MissingColumn(col.to_string()))?;
    if !matches!(d.columns[pos], Column::Factor { .. }) {
        return Err(DataError::NotFactor(col.to_string()));
    }
    let mut out = d.clone();
    let copied = out.columns[pos].clone();
    out.add_column(new_name, copied)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(pairs: &[(&str, ColumnType)]) -> Vec<(String, ColumnType)> {
        pairs.iter().map(|(n, t)| (n.to_string(), *t)).collect()
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_words_style_rows() {
        let f = write_temp(
            "traj,word,measurement.no,f2,duration\n\
             traj.1,A,0,1642.761,0.1378182\n\
             traj.1,A,1,1650.2,0.1378182\n",
        );
        let s = schema(&[
            ("traj", ColumnType::Factor),
            ("word", ColumnType::Factor),
            ("measurement.no", ColumnType::Numeric),
            ("f2", ColumnType::Numeric),
            ("duration", ColumnType::Numeric),
        ]);
        let d = load_long_csv(f.path(), &s, MissingPolicy::Reject).unwrap();
        assert_eq!(d.n(), 2);
        let fac = d.factor("traj").unwrap();
        assert_eq!(fac.levels, &["traj.1".to_string()]);
        assert_eq!(d.factor("word").unwrap().levels[0], "A");
        assert_eq!(d.numeric("measurement.no").unwrap()[0], 0.0);
        assert_eq!(d.numeric("f2").unwrap()[0], 1642.761);
        assert_eq!(d.numeric("duration").unwrap()[0], 0.1378182);
    }

    #[test]
    fn empty_file_header_only() {
        let f = write_temp("x,g\n");
        let s = schema(&[("x", ColumnType::Numeric), ("g", ColumnType::Factor)]);
        let d = load_long_csv(f.path(), &s, MissingPolicy::Reject).unwrap();
        assert_eq!(d.n(), 0);
    }

    #[test]
    fn numeric_factor_typing_follows_schema() {
        let f = write_temp("m,decade,stress\n1,1970,full\n2,1980,schwa\n");
        let s = schema(&[
            ("m", ColumnType::Numeric),
            ("decade", ColumnType::Numeric),
            ("stress", ColumnType::Factor),
        ]);
        let d = load_long_csv(f.path(), &s, MissingPolicy::Reject).unwrap();
        assert_eq!(d.numeric("decade").unwrap(), &[1970.0, 1980.0]);
        assert_eq!(d.factor("stress").unwrap().levels.len(), 2);
    }

    #[test]
    fn bad_numeric_reports_location() {
        let f = write_temp("x\n1.5\noops\n");
        let s = schema(&[("x", ColumnType::Numeric)]);
        let err = load_long_csv(f.path(), &s, MissingPolicy::Reject).unwrap_err();
        match err {
            DataError::BadNumeric { column, row, value } => {
                assert_eq!(column, "x");
                assert_eq!(row, 3);
                assert_eq!(value, "oops");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn missing_values_rejected_or_dropped() {
        let f = write_temp("x,g\n1,a\nNA,b\n3,c\n");
        let s = schema(&[("x", ColumnType::Numeric), ("g", ColumnType::Factor)]);
        assert!(matches!(
            load_long_csv(f.path(), &s, MissingPolicy::Reject),
            Err(DataError::MissingValue { .. })
        ));
        let d = load_long_csv(f.path(), &s, MissingPolicy::DropRows).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.numeric("x").unwrap(), &[1.0, 3.0]);
    }

    #[test]
    fn duplicate_header_rejected() {
        let f = write_temp("x,x\n1,2\n");
        let s = schema(&[("x", ColumnType::Numeric)]);
        assert!(matches!(
            load_long_csv(f.path(), &s, MissingPolicy::Reject),
            Err(DataError::DuplicateHeader(_))
        ));
    }

    #[test]
    fn series_starts_flag_block_heads() {
        let mut d = Dataset::new();
        let labels: Vec<String> = ["a", "a", "a", "b", "b"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        d.add_factor_from_strings("traj", &labels).unwrap();
        d.add_numeric("m", vec![0.0, 1.0, 2.0, 0.0, 1.0], None).unwrap();
        let idx = mark_series_starts(&d, "traj", "m").unwrap();
        assert_eq!(idx.start_flags, vec![true, false, false, true, false]);
        assert_eq!(idx.ranges, vec![0..3, 3..5]);
        // idempotent and name-independent: same flags as from a renamed copy
        let again = mark_series_starts(&d, "traj", "m").unwrap();
        assert_eq!(idx, again);
    }

    #[test]
    fn series_singleton_row() {
        let mut d = Dataset::new();
        d.add_factor_from_strings("traj", &["only".to_string()]).unwrap();
        d.add_numeric("m", vec![0.0], None).unwrap();
        let idx = mark_series_starts(&d, "traj", "m").unwrap();
        assert_eq!(idx.start_flags, vec![true]);
    }

    #[test]
    fn series_ties_and_reappearance_are_errors() {
        let mut d = Dataset::new();
        let labels: Vec<String> = ["a", "a", "a", "a"].iter().map(|s| s.to_string()).collect();
        d.add_factor_from_strings("traj", &labels).unwrap();
        d.add_numeric("m", vec![0.0, 1.0, 1.0, 2.0], None).unwrap();
        assert!(matches!(
            mark_series_starts(&d, "traj", "m"),
            Err(DataError::NonMonotoneOrder { row: 2 })
        ));

        let mut d2 = Dataset::new();
        let labels: Vec<String> = ["a", "b", "a"].iter().map(|s| s.to_string()).collect();
        d2.add_factor_from_strings("traj", &labels).unwrap();
        d2.add_numeric("m", vec![0.0, 0.0, 1.0], None).unwrap();
        match mark_series_starts(&d2, "traj", "m") {
            Err(DataError::NonContiguousSeries { level }) => assert_eq!(level, "a"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn ordered_treatment_sets_reference() {
        let mut d = Dataset::new();
        let labels: Vec<String> = ["B", "A", "B"].iter().map(|s| s.to_string()).collect();
        d.add_factor_from_strings("word", &labels).unwrap();
        let d2 = to_ordered_treatment(&d, "word", "A").unwrap();
        let f = d2.factor("word").unwrap();
        assert!(f.ordered);
        assert_eq!(f.levels[f.reference], "A");
        assert!(matches!(
            to_ordered_treatment(&d, "word", "Z"),
            Err(DataError::UnknownLevel { .. })
        ));
    }

    #[test]
    fn combine_factors_observed_pairs_only() {
        let mut d = Dataset::new();
        let sp: Vec<String> = ["s1", "s1", "s2", "s2"].iter().map(|s| s.to_string()).collect();
        let st: Vec<String> = ["full", "full", "schwa", "schwa"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        d.add_factor_from_strings("speaker", &sp).unwrap();
        d.add_factor_from_strings("stress", &st).unwrap();
        let d2 = combine_factors(&d, "speaker", "stress", "speakerStress").unwrap();
        let f = d2.factor("speakerStress").unwrap();
        // s1.schwa and s2.full never co-occur
        assert_eq!(f.levels, &["s1.full".to_string(), "s2.schwa".to_string()]);
        // brute-force: distinct observed pairs == level count
        let mut pairs: Vec<(u32, u32)> = d
            .factor("speaker")
            .unwrap()
            .codes
            .iter()
            .zip(d.factor("stress").unwrap().codes)
            .map(|(&a, &b)| (a, b))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        assert_eq!(pairs.len(), f.levels.len());
    }

    #[test]
    fn combine_with_single_level_factor_is_isomorphic() {
        let mut d = Dataset::new();
        let a: Vec<String> = ["x", "y", "x"].iter().map(|s| s.to_string()).collect();
        let b: Vec<String> = ["only", "only", "only"].iter().map(|s| s.to_string()).collect();
        d.add_factor_from_strings("a", &a).unwrap();
        d.add_factor_from_strings("b", &b).unwrap();
        let d2 = combine_factors(&d, "a", "b", "ab").unwrap();
        assert_eq!(d2.factor("ab").unwrap().levels.len(), 2);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut d = Dataset::new();
        let labels: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        d.add_factor_from_strings("g", &labels).unwrap();
        d.add_numeric("x", vec![0.1378182, 1642.761], None).unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let f = write_temp(std::str::from_utf8(&buf).unwrap());
        let s = schema(&[("g", ColumnType::Factor), ("x", ColumnType::Numeric)]);
        let d2 = load_long_csv(f.path(), &s, MissingPolicy::Reject).unwrap();
        assert_eq!(d2.numeric("x").unwrap(), d.numeric("x").unwrap());
        assert_eq!(d2.factor("g").unwrap().levels, d.factor("g").unwrap().levels);
    }
}
