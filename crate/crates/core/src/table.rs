//! Per-modality feature tables: CSV ingestion, validation, pairing, export.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UpmiError};

/// Column roles of a modality CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub id_column: String,
    pub label_column: String,
    /// Explicit feature columns; `None` means every other column, in file order.
    #[serde(default)]
    pub feature_columns: Option<Vec<String>>,
}

impl Default for TableSchema {
    fn default() -> Self {
        TableSchema {
            id_column: "subject_id".to_string(),
            label_column: "label".to_string(),
            feature_columns: None,
        }
    }
}

/// Subjects × named continuous features for one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    subject_ids: Vec<String>,
    feature_names: Vec<String>,
    /// Row-major, one row per subject.
    values: Vec<Vec<f64>>,
    labels: Vec<u8>,
}

impl FeatureTable {
    /// Builds a table after checking every invariant.
    pub fn new(
        subject_ids: Vec<String>,
        feature_names: Vec<String>,
        values: Vec<Vec<f64>>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if values.len() != subject_ids.len() || labels.len() != subject_ids.len() {
            return Err(UpmiError::Shape(format!(
                "{} ids, {} rows, {} labels",
                subject_ids.len(),
                values.len(),
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(UpmiError::Schema(format!("duplicate feature name `{name}`")));
            }
        }
        let mut seen = HashSet::new();
        for (row, id) in subject_ids.iter().enumerate() {
            if id.is_empty() {
                return Err(UpmiError::MissingId { row: row + 1 });
            }
            if !seen.insert(id.as_str()) {
                return Err(UpmiError::DuplicateId {
                    row: row + 1,
                    id: id.clone(),
                });
            }
        }
        for (row, (vals, &label)) in values.iter().zip(&labels).enumerate() {
            if vals.len() != feature_names.len() {
                return Err(UpmiError::Shape(format!(
                    "row {} has {} values for {} features",
                    row + 1,
                    vals.len(),
                    feature_names.len()
                )));
            }
            if label > 1 {
                return Err(UpmiError::InvalidLabel {
                    row: row + 1,
                    value: label.to_string(),
                });
            }
            if let Some(j) = vals.iter().position(|v| !v.is_finite()) {
                return Err(UpmiError::NonFinite {
                    row: row + 1,
                    column: feature_names[j].clone(),
                    value: vals[j].to_string(),
                });
            }
        }
        Ok(FeatureTable {
            subject_ids,
            feature_names,
            values,
            labels,
        })
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[j]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.n_features()).map(|j| self.column(j)).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// `(n_class0, n_class1)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let ones = self.labels.iter().filter(|&&y| y == 1).count();
        (self.labels.len() - ones, ones)
    }

    /// Restriction to the given row positions, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureTable {
        FeatureTable {
            subject_ids: rows.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            values: rows.iter().map(|&i| self.values[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Restriction to the named features, in the given order.
    pub fn select_features<S: AsRef<str>>(&self, names: &[S]) -> Result<FeatureTable> {
        let idx = names
            .iter()
            .map(|n| {
                self.feature_index(n.as_ref()).ok_or_else(|| UpmiError::ColumnMismatch {
                    expected: names.iter().map(|s| s.as_ref().to_string()).collect(),
                    found: self.feature_names.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureTable {
            subject_ids: self.subject_ids.clone(),
            feature_names: idx.iter().map(|&j| self.feature_names[j].clone()).collect(),
            values: self
                .values
                .iter()
                .map(|row| idx.iter().map(|&j| row[j]).collect())
                .collect(),
            labels: self.labels.clone(),
        })
    }
}

/// T1/T2 tables over the same subjects in the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDataset {
    t1: FeatureTable,
    t2: FeatureTable,
}

impl PairedDataset {
    pub fn t1(&self) -> &FeatureTable {
        &self.t1
    }

    pub fn t2(&self) -> &FeatureTable {
        &self.t2
    }

    pub fn modality(&self, m: Modality) -> &FeatureTable {
        match m {
            Modality::T1 => &self.t1,
            Modality::T2 => &self.t2,
        }
    }

    pub fn subject_ids(&self) -> &[String] {
        self.t1.subject_ids()
    }

    pub fn labels(&self) -> &[u8] {
        self.t1.labels()
    }

    pub fn len(&self) -> usize {
        self.t1.n_subjects()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_tables(self) -> (FeatureTable, FeatureTable) {
        (self.t1, self.t2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    T1,
    T2,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::T1, Modality::T2];

    pub fn index(self) -> u64 {
        match self {
            Modality::T1 => 0,
            Modality::T2 => 1,
        }
    }
}

/// Subjects dropped while pairing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingReport {
    pub dropped_from_t1: usize,
    pub dropped_from_t2: usize,
}

/// Aligns two modality tables on their shared subject ids, ordered as in `t1`.
pub fn pair_datasets(t1: FeatureTable, t2: FeatureTable) -> Result<PairedDataset> {
    let (paired, report) = pair_datasets_with_report(t1, t2)?;
    if report.dropped_from_t1 + report.dropped_from_t2 > 0 {
        log::warn!(
            "pairing dropped {} T1-only and {} T2-only subjects",
            report.dropped_from_t1,
            report.dropped_from_t2
        );
    }
    Ok(paired)
}

pub fn pair_datasets_with_report(
    t1: FeatureTable,
    t2: FeatureTable,
) -> Result<(PairedDataset, PairingReport)> {
    let t2_pos: HashMap<&str, usize> = t2
        .subject_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut rows1 = Vec::new();
    let mut rows2 = Vec::new();
    for (i, id) in t1.subject_ids.iter().enumerate() {
        if let Some(&j) = t2_pos.get(id.as_str()) {
            if t1.labels[i] != t2.labels[j] {
                return Err(UpmiError::LabelConflict {
                    id: id.clone(),
                    t1: t1.labels[i],
                    t2: t2.labels[j],
                });
            }
            rows1.push(i);
            rows2.push(j);
        }
    }
    if rows1.is_empty() {
        return Err(UpmiError::EmptyIntersection);
    }
    let report = PairingReport {
        dropped_from_t1: t1.n_subjects() - rows1.len(),
        dropped_from_t2: t2.n_subjects() - rows2.len(),
    };
    let t1 = if rows1.len() == t1.n_subjects() {
        t1
    } else {
        t1.select_rows(&rows1)
    };
    let t2 = t2.select_rows(&rows2);
    Ok((PairedDataset { t1, t2 }, report))
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> UpmiError + '_ {
    move |source| UpmiError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads and validates one modality CSV (header row required).
pub fn load_feature_table(path: &Path, schema: &TableSchema) -> Result<FeatureTable> {
    let file = File::open(path).map_err(|source| UpmiError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_feature_table(file, schema).map_err(|e| match e {
        UpmiError::Csv { source, .. } => UpmiError::Csv {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Same as [`load_feature_table`] over any reader.
pub fn read_feature_table<R: std::io::Read>(reader: R, schema: &TableSchema) -> Result<FeatureTable> {
    let nowhere = Path::new("<reader>");
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(csv_err(nowhere))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(UpmiError::Schema(format!("duplicate header `{h}`")));
        }
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| UpmiError::Schema(format!("column `{name}` not found in header")))
    };
    let id_col = find(&schema.id_column)?;
    let label_col = find(&schema.label_column)?;
    if id_col == label_col {
        return Err(UpmiError::Schema("id and label columns coincide".into()));
    }
    let feature_cols: Vec<usize> = match &schema.feature_columns {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&c| c != id_col && c != label_col)
            .collect(),
    };
    if feature_cols.is_empty() {
        return Err(UpmiError::Schema("no feature columns".into()));
    }
    if let Some(&c) = feature_cols.iter().find(|&&c| c == id_col || c == label_col) {
        return Err(UpmiError::Schema(format!(
            "column `{}` cannot be both a feature and an id/label",
            headers[c]
        )));
    }
    let feature_names: Vec<String> = feature_cols.iter().map(|&c| headers[c].clone()).collect();

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut seen_ids = HashSet::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(csv_err(nowhere))?;
        if record.len() != headers.len() {
            return Err(UpmiError::Schema(format!(
                "row {row} has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        let id = record[id_col].trim();
        if id.is_empty() {
            return Err(UpmiError::MissingId { row });
        }
        if !seen_ids.insert(id.to_string()) {
            return Err(UpmiError::DuplicateId {
                row,
                id: id.to_string(),
            });
        }
        let raw_label = record[label_col].trim();
        let label = match raw_label.parse::<f64>() {
            Ok(v) if v == 0.0 => 0,
            Ok(v) if v == 1.0 => 1,
            _ => {
                return Err(UpmiError::InvalidLabel {
                    row,
                    value: raw_label.to_string(),
                })
            }
        };
        let mut row_vals = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let cell = record[c].trim();
            let v: f64 = cell.parse().map_err(|_| UpmiError::NonNumeric {
                row,
                column: headers[c].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(UpmiError::NonFinite {
                    row,
                    column: headers[c].clone(),
                    value: cell.to_string(),
                });
            }
            row_vals.push(v);
        }
        ids.push(id.to_string());
        labels.push(label);
        values.push(row_vals);
    }
    FeatureTable::new(ids, feature_names, values, labels)
}

/// Writes `table` as CSV (`subject_id,label,<features>`); floats use the
/// shortest representation that parses back to the same bits.
pub fn save_feature_table(table: &FeatureTable, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| UpmiError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_feature_table(table, file).map_err(|e| match e {
        UpmiError::Csv { source, .. } => UpmiError::Csv {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn write_feature_table<W: Write>(table: &FeatureTable, writer: W) -> Result<()> {
    let nowhere = Path::new("<writer>");
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["subject_id".to_string(), "label".to_string()];
    header.extend(table.feature_names.iter().cloned());
    wtr.write_record(&header).map_err(csv_err(nowhere))?;
    for ((id, label), row) in table.subject_ids.iter().zip(&table.labels).zip(&table.values) {
        let mut rec = Vec::with_capacity(row.len() + 2);
        rec.push(id.clone());
        rec.push(label.to_string());
        rec.extend(row.iter().map(|v| v.to_string()));
        wtr.write_record(&rec).map_err(csv_err(nowhere))?;
    }
    wtr.flush().map_err(|source| UpmiError::Io {
        path: nowhere.to_path_buf(),
        source,
    })?;
    Ok(())
}
