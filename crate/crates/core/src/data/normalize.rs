use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::field::{Field, FieldTable};

/// Per-column scales applied to a dataset plus the characteristic length of
/// its domain. Dividing a column by its scale gives network units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub columns: BTreeMap<Field, f64>,
    pub length: f64,
}

impl Default for NormalizationRecord {
    fn default() -> Self {
        Self::identity()
    }
}

impl NormalizationRecord {
    pub fn identity() -> Self {
        Self {
            columns: BTreeMap::new(),
            length: 1.0,
        }
    }

    /// Scale of one column; 1 for columns that were never scaled.
    pub fn scale(&self, f: Field) -> f64 {
        self.columns.get(&f).copied().unwrap_or(1.0)
    }

    pub fn table(&self) -> FieldTable<f64> {
        let mut t = FieldTable::splat(1.0);
        for f in Field::ALL {
            t[f] = self.scale(f);
        }
        t
    }

    /// Reference stress: the largest recorded stress-column scale.
    pub fn stress_scale(&self) -> f64 {
        self.max_recorded(Field::is_stress)
    }

    /// Reference displacement: the larger recorded displacement scale.
    pub fn displacement_scale(&self) -> f64 {
        self.max_recorded(Field::is_displacement)
    }

    fn max_recorded(&self, keep: fn(Field) -> bool) -> f64 {
        self.columns
            .iter()
            .filter(|(f, _)| keep(**f))
            .map(|(_, &s)| s)
            .reduce(f64::max)
            .unwrap_or(1.0)
    }

    /// Scales for `dataset` as it stands: max |v| per present column (1 for
    /// all-zero columns), and the extent of the bounding box.
    pub fn fit(dataset: &Dataset) -> Result<Self, DataError> {
        if dataset.is_empty() {
            return Err(DataError::Empty);
        }
        let mut columns = BTreeMap::new();
        for f in Field::ALL {
            if let Some(col) = dataset.column(f) {
                let m = col.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
                columns.insert(f, if m > 0.0 { m } else { 1.0 });
            }
        }
        let length = dataset.bounds().map(|b| b.extent()).unwrap_or(1.0);
        Ok(Self { columns, length })
    }
}

/// Divides every field column by its max absolute value and attaches the
/// record. Inputs stay in physical units.
pub fn normalize(dataset: &Dataset) -> Result<(Dataset, NormalizationRecord), DataError> {
    let record = NormalizationRecord::fit(dataset)?;
    let out = normalize_with(dataset, &record)?;
    Ok((out, record))
}

/// Applies an existing record (e.g. one stored in a checkpoint).
pub fn normalize_with(dataset: &Dataset, record: &NormalizationRecord) -> Result<Dataset, DataError> {
    if dataset.normalization.is_some() {
        return Err(DataError::AlreadyNormalized);
    }
    let mut out = dataset.clone();
    for f in Field::ALL {
        let s = record.scale(f);
        if let Some(col) = out.columns[f].as_mut() {
            col.iter_mut().for_each(|v| *v /= s);
        }
    }
    out.normalization = Some(record.clone());
    Ok(out)
}

/// Inverse of [`normalize`]; a no-op on physical datasets.
pub fn denormalize(dataset: &Dataset) -> Dataset {
    let mut out = dataset.clone();
    if let Some(record) = out.normalization.take() {
        for f in Field::ALL {
            let s = record.scale(f);
            if let Some(col) = out.columns[f].as_mut() {
                col.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    out
}
