//! CSV datasets with a `.meta.json` sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, DataMode, Dataset, GridSpec, MaterialRecord, NormalizationRecord, Provenance};
use crate::field::{Field, Problem};

/// Contents of the sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub mode: DataMode,
    pub problem: Problem,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub sigma_y: Option<f64>,
    pub normalization: Option<BTreeMap<Field, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// `data/d.csv` → `data/d.meta.json`.
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    dataset.validate()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut header = vec!["x".to_string(), "y".to_string()];
    if dataset.mu.is_some() {
        header.push("mu".into());
    }
    let fields: Vec<Field> = Field::ALL
        .into_iter()
        .filter(|&f| dataset.column(f).is_some())
        .collect();
    header.extend(fields.iter().map(|f| f.name().to_string()));

    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for r in 0..dataset.len() {
        record.clear();
        record.push(dataset.x[r]);
        record.push(dataset.y[r]);
        if let Some(mu) = &dataset.mu {
            record.push(mu[r]);
        }
        for &f in &fields {
            record.push(dataset.column(f).expect("present")[r]);
        }
        w.write_record(record.iter().map(|v| format!("{v:.16e}")))?;
    }
    w.flush()?;

    let meta = DatasetMeta {
        mode: dataset.mode,
        problem: dataset.problem,
        lambda: dataset.material.lambda,
        mu: dataset.material.mu,
        sigma_y: dataset.material.sigma_y,
        normalization: dataset.normalization.as_ref().map(|n| n.columns.clone()),
        length: dataset.normalization.as_ref().map(|n| n.length),
        provenance: Some(dataset.provenance),
    };
    fs::write(meta_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

/// Reads a dataset. Without a sidecar, the problem is inferred from the
/// presence of `szz` and the mode from the presence of `fx`/`fy`.
pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let meta = match fs::read_to_string(meta_path(path)) {
        Ok(text) => Some(serde_json::from_str::<DatasetMeta>(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };

    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != header.len() {
            return Err(DataError::RowLength {
                row,
                expected: header.len(),
                got: rec.len(),
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                row,
                column: header[c].clone(),
                value: cell.to_string(),
            })?;
            columns[c].push(v);
        }
    }
    let take = |name: &str, columns: &mut Vec<Vec<f64>>| {
        header
            .iter()
            .position(|h| h == name)
            .map(|i| std::mem::take(&mut columns[i]))
    };
    let x = take("x", &mut columns).ok_or_else(|| DataError::MissingColumn("x".into()))?;
    let y = take("y", &mut columns).ok_or_else(|| DataError::MissingColumn("y".into()))?;
    if x.is_empty() {
        return Err(DataError::Empty);
    }
    let mu = take("mu", &mut columns);
    let mut fields = Vec::new();
    for f in Field::ALL {
        if let Some(c) = take(f.name(), &mut columns) {
            fields.push((f, c));
        }
    }
    let has = |f: Field| fields.iter().any(|(g, _)| *g == f);
    let (problem, mode) = match &meta {
        Some(m) => (m.problem, m.mode),
        None => (
            if has(Field::Szz) { Problem::Plastic } else { Problem::Elastic },
            if has(Field::Fx) && has(Field::Fy) { DataMode::Force } else { DataMode::Stress },
        ),
    };

    let mut d = Dataset::new(problem, mode, x, y);
    d.mu = mu;
    for (f, c) in fields {
        d.set_column(f, c);
    }
    d.provenance = Provenance::ExternalFile;
    if let Some(m) = meta {
        d.material = MaterialRecord {
            lambda: m.lambda,
            mu: m.mu,
            sigma_y: m.sigma_y,
        };
        if let Some(p) = m.provenance {
            d.provenance = p;
        }
        if let Some(columns) = m.normalization {
            d.normalization = Some(NormalizationRecord {
                columns,
                length: m.length.unwrap_or(1.0),
            });
        }
    }
    d.grid = GridSpec::detect(&d.x, &d.y);
    d.validate()?;
    Ok(d)
}
