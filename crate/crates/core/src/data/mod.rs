//! Collocation datasets: manufactured-solution generation, grids, force
//! recovery by finite differences, interpolation, CSV I/O and normalization.

mod finite_diff;
mod grid;
mod interp;
mod io;
mod normalize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elasticity::{exact_body_force, exact_displacement, exact_stress};
use crate::field::{Field, FieldTable, Problem};
use crate::loss::PointObs;

pub use finite_diff::{central_difference_forces, d_dx, d_dy};
pub use grid::{sample_grid, Bounds, GridSpec};
pub use interp::interpolate_grid;
pub use io::{load_dataset, meta_path, save_dataset, DatasetMeta};
pub use normalize::{denormalize, normalize, normalize_with, NormalizationRecord};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("target grid lies outside the source bounding box")]
    OutOfBounds,
    #[error("empty dataset")]
    Empty,
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: `{value}` is not a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row} has {got} cells, header has {expected}")]
    RowLength { row: usize, expected: usize, got: usize },
    #[error("dataset is not laid out on a full uniform grid")]
    NotAGrid,
    #[error("dataset is already normalized")]
    AlreadyNormalized,
    #[error("datasets cannot be combined: {0}")]
    Incompatible(String),
    #[error("invalid metadata: {0}")]
    Meta(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

/// Whether body forces are observed directly or must be recovered from
/// the stresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    Stress,
    Force,
}

impl DataMode {
    pub fn name(self) -> &'static str {
        match self {
            DataMode::Stress => "stress",
            DataMode::Force => "force",
        }
    }
}

impl FromStr for DataMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stress" => Ok(DataMode::Stress),
            "force" => Ok(DataMode::Force),
            _ => Err(format!("unknown data mode `{s}` (expected stress|force)")),
        }
    }
}

impl fmt::Display for DataMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytical,
    ExternalFile,
}

/// Material parameters the data were generated with, when known.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MaterialRecord {
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub sigma_y: Option<f64>,
}

/// Collocation points with observed field columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub problem: Problem,
    pub mode: DataMode,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Per-row shear modulus, used as a network input by surrogate models.
    pub mu: Option<Vec<f64>>,
    pub columns: FieldTable<Option<Vec<f64>>>,
    pub material: MaterialRecord,
    pub normalization: Option<NormalizationRecord>,
    pub provenance: Provenance,
    pub grid: Option<GridSpec>,
}

impl Dataset {
    pub fn new(problem: Problem, mode: DataMode, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            problem,
            mode,
            x,
            y,
            mu: None,
            columns: FieldTable([None, None, None, None, None, None, None, None]),
            material: MaterialRecord::default(),
            normalization: None,
            provenance: Provenance::Analytical,
            grid: None,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn column(&self, f: Field) -> Option<&[f64]> {
        self.columns[f].as_deref()
    }

    pub fn set_column(&mut self, f: Field, values: Vec<f64>) {
        self.columns[f] = Some(values);
    }

    pub fn bounds(&self) -> Option<Bounds> {
        Bounds::enclosing(&self.x, &self.y)
    }

    /// Columns a dataset of this problem and mode must carry.
    pub fn required_fields(problem: Problem, mode: DataMode) -> Vec<Field> {
        let mut f = problem.network_fields().to_vec();
        if mode == DataMode::Force {
            f.extend([Field::Fx, Field::Fy]);
        }
        f
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.is_empty() {
            return Err(DataError::Empty);
        }
        let n = self.len();
        let check = |got: usize| {
            if got == n {
                Ok(())
            } else {
                Err(DataError::Length { expected: n, got })
            }
        };
        check(self.y.len())?;
        if let Some(mu) = &self.mu {
            check(mu.len())?;
        }
        for f in Self::required_fields(self.problem, self.mode) {
            if self.columns[f].is_none() {
                return Err(DataError::MissingColumn(f.name().into()));
            }
        }
        for col in self.columns.0.iter().flatten() {
            check(col.len())?;
        }
        Ok(())
    }

    /// Observations at one row in stored units.
    pub fn observations(&self, row: usize) -> PointObs {
        let mut obs = FieldTable::splat(None);
        for f in Field::ALL {
            obs[f] = self.columns[f].as_ref().map(|c| c[row]);
        }
        obs
    }

    /// Network inputs of one row: `(x, y)` or `(x, y, mu)`.
    pub fn inputs(&self, row: usize) -> Vec<f64> {
        match &self.mu {
            Some(mu) => vec![self.x[row], self.y[row], mu[row]],
            None => vec![self.x[row], self.y[row]],
        }
    }

    pub fn input_names(&self) -> Vec<&'static str> {
        if self.mu.is_some() {
            vec!["x", "y", "mu"]
        } else {
            vec!["x", "y"]
        }
    }

    /// Rows `rows`, in that order. Grid layout is dropped.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let pick = |v: &Vec<f64>| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        let mut out = self.clone();
        out.x = pick(&self.x);
        out.y = pick(&self.y);
        out.mu = self.mu.as_ref().map(pick);
        for f in Field::ALL {
            out.columns[f] = self.columns[f].as_ref().map(pick);
        }
        out.grid = None;
        out
    }

    /// Fills missing body-force columns. Elastic stress-complete grids get
    /// `-div(sigma)` by central differences; plastic data get zero forces.
    pub fn with_recovered_forces(&self) -> Result<Self, DataError> {
        if self.column(Field::Fx).is_some() && self.column(Field::Fy).is_some() {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        match self.problem {
            Problem::Plastic => {
                out.set_column(Field::Fx, vec![0.0; self.len()]);
                out.set_column(Field::Fy, vec![0.0; self.len()]);
            }
            Problem::Elastic => {
                let grid = self.grid.ok_or(DataError::NotAGrid)?;
                let col = |f: Field| {
                    self.column(f)
                        .ok_or_else(|| DataError::MissingColumn(f.name().into()))
                };
                let (fx, fy) =
                    central_difference_forces(&grid, col(Field::Sxx)?, col(Field::Syy)?, col(Field::Sxy)?)?;
                out.set_column(Field::Fx, fx);
                out.set_column(Field::Fy, fy);
            }
        }
        Ok(out)
    }

    /// Stacks datasets of the same problem, keeping per-row `mu` inputs.
    /// Each part must either carry a `mu` column or record its shear modulus.
    pub fn concat_with_mu(parts: &[Dataset]) -> Result<Self, DataError> {
        let first = parts.first().ok_or(DataError::Empty)?;
        let mut out = Dataset::new(first.problem, first.mode, Vec::new(), Vec::new());
        out.provenance = first.provenance;
        out.material.lambda = first.material.lambda;
        out.material.sigma_y = first.material.sigma_y;
        let mut mu_col = Vec::new();
        let mut cols: FieldTable<Option<Vec<f64>>> =
            FieldTable([None, None, None, None, None, None, None, None]);
        for f in Field::ALL {
            if first.column(f).is_some() {
                cols[f] = Some(Vec::new());
            }
        }
        for p in parts {
            if p.problem != first.problem {
                return Err(DataError::Incompatible("mixed problems".into()));
            }
            if p.normalization.is_some() {
                return Err(DataError::AlreadyNormalized);
            }
            match (&p.mu, p.material.mu) {
                (Some(m), _) => mu_col.extend_from_slice(m),
                (None, Some(m)) => mu_col.extend(std::iter::repeat(m).take(p.len())),
                (None, None) => {
                    return Err(DataError::Incompatible(
                        "a part records no shear modulus".into(),
                    ))
                }
            }
            out.x.extend_from_slice(&p.x);
            out.y.extend_from_slice(&p.y);
            for f in Field::ALL {
                match (cols[f].as_mut(), p.column(f)) {
                    (Some(dst), Some(src)) => dst.extend_from_slice(src),
                    (None, None) => {}
                    _ => {
                        return Err(DataError::Incompatible(format!(
                            "column `{f}` present in some parts only"
                        )))
                    }
                }
            }
        }
        out.columns = cols;
        out.mu = Some(mu_col);
        Ok(out)
    }

    /// Distinct values of the `mu` input column, sorted.
    pub fn distinct_mu(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.mu.clone().unwrap_or_default();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

/// Manufactured plane-strain elastic data on a grid. Force-complete data
/// carry the closed-form body forces; stress-complete data leave them out.
pub fn generate_elastic_dataset(
    spec: &GridSpec,
    lambda: f64,
    mu: f64,
    q: f64,
    mode: DataMode,
) -> Result<Dataset, DataError> {
    let pts = sample_grid(spec)?;
    let mut d = elastic_dataset_at(&pts, lambda, mu, q, mode)?;
    d.grid = Some(*spec);
    Ok(d)
}

/// Manufactured elastic data at arbitrary points.
pub fn elastic_dataset_at(
    points: &[(f64, f64)],
    lambda: f64,
    mu: f64,
    q: f64,
    mode: DataMode,
) -> Result<Dataset, DataError> {
    if points.is_empty() {
        return Err(DataError::Empty);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let mut d = Dataset::new(Problem::Elastic, mode, x, y);
    let n = points.len();
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); 7];
    for &(x, y) in points {
        let (ux, uy) = exact_displacement(x, y, q);
        let (sxx, syy, sxy) = exact_stress(x, y, lambda, mu, q);
        let (fx, fy) = exact_body_force(x, y, lambda, mu, q);
        for (c, v) in cols.iter_mut().zip([ux, uy, sxx, syy, sxy, fx, fy]) {
            c.push(v);
        }
    }
    let fields = [
        Field::Ux,
        Field::Uy,
        Field::Sxx,
        Field::Syy,
        Field::Sxy,
        Field::Fx,
        Field::Fy,
    ];
    for (f, c) in fields.into_iter().zip(cols) {
        if mode == DataMode::Force || !f.is_force() {
            d.set_column(f, c);
        }
    }
    d.material = MaterialRecord {
        lambda: Some(lambda),
        mu: Some(mu),
        sigma_y: None,
    };
    Ok(d)
}

/// Resamples every column of a gridded dataset onto `target`.
pub fn interpolate_to_grid(source: &Dataset, target: &GridSpec) -> Result<Dataset, DataError> {
    let grid = source.grid.ok_or(DataError::NotAGrid)?;
    let pts = sample_grid(target)?;
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let mut out = Dataset::new(source.problem, source.mode, x, y);
    out.material = source.material;
    out.normalization = source.normalization.clone();
    out.provenance = source.provenance;
    out.grid = Some(*target);
    if let Some(mu) = &source.mu {
        out.mu = Some(interpolate_grid(&grid, mu, target)?);
    }
    for f in Field::ALL {
        if let Some(col) = source.column(f) {
            out.set_column(f, interpolate_grid(&grid, col, target)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elasticity::ManufacturedSolution;

    #[test]
    fn force_complete_columns_balance_the_stress() {
        let spec = GridSpec::new(12, 9);
        let d = generate_elastic_dataset(&spec, 1.0, 0.5, 4.0, DataMode::Force).unwrap();
        d.validate().unwrap();
        let sol = ManufacturedSolution::new(1.0, 0.5, 4.0);
        let fx = d.column(Field::Fx).unwrap();
        let fy = d.column(Field::Fy).unwrap();
        for r in 0..d.len() {
            let g = sol.stress_gradient(d.x[r], d.y[r]);
            assert!((fx[r] + g[0][0] + g[2][1]).abs() < 1e-10);
            assert!((fy[r] + g[2][0] + g[1][1]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_moduli_give_zero_stress_and_force() {
        let d = generate_elastic_dataset(&GridSpec::new(5, 5), 0.0, 0.0, 4.0, DataMode::Force).unwrap();
        for f in [Field::Sxx, Field::Syy, Field::Sxy, Field::Fx, Field::Fy] {
            assert!(d.column(f).unwrap().iter().all(|v| *v == 0.0));
        }
        assert!(d.column(Field::Ux).unwrap().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn stress_mode_leaves_forces_for_recovery() {
        let spec = GridSpec::new(30, 30);
        let d = generate_elastic_dataset(&spec, 1.0, 0.5, 4.0, DataMode::Stress).unwrap();
        assert!(d.column(Field::Fx).is_none());
        d.validate().unwrap();
        let r = d.with_recovered_forces().unwrap();
        let exact = generate_elastic_dataset(&spec, 1.0, 0.5, 4.0, DataMode::Force).unwrap();
        let err = r
            .column(Field::Fx)
            .unwrap()
            .iter()
            .zip(exact.column(Field::Fx).unwrap())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 5.0, "{err}");
    }

    #[test]
    fn missing_force_column_fails_validation() {
        let mut d = generate_elastic_dataset(&GridSpec::new(3, 3), 1.0, 0.5, 4.0, DataMode::Force).unwrap();
        d.columns[Field::Fy] = None;
        assert!(matches!(d.validate(), Err(DataError::MissingColumn(c)) if c == "fy"));
    }

    #[test]
    fn interpolation_keeps_every_column() {
        let src = generate_elastic_dataset(&GridSpec::new(40, 40), 1.0, 0.5, 4.0, DataMode::Force).unwrap();
        let out = interpolate_to_grid(&src, &GridSpec::new(25, 25)).unwrap();
        out.validate().unwrap();
        let exact = generate_elastic_dataset(&GridSpec::new(25, 25), 1.0, 0.5, 4.0, DataMode::Force).unwrap();
        let err = out
            .column(Field::Ux)
            .unwrap()
            .iter()
            .zip(exact.column(Field::Ux).unwrap())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4);
    }

    #[test]
    fn concat_tags_rows_with_mu() {
        let a = generate_elastic_dataset(&GridSpec::new(3, 3), 1.0, 0.25, 4.0, DataMode::Force).unwrap();
        let b = generate_elastic_dataset(&GridSpec::new(3, 3), 1.0, 4.0, 4.0, DataMode::Force).unwrap();
        let c = Dataset::concat_with_mu(&[a, b]).unwrap();
        assert_eq!(c.len(), 18);
        assert_eq!(c.distinct_mu(), vec![0.25, 4.0]);
        assert_eq!(c.inputs(10), vec![c.x[10], c.y[10], 4.0]);
        c.validate().unwrap();
    }

    #[test]
    fn subset_is_a_row_selection() {
        let d = generate_elastic_dataset(&GridSpec::new(4, 4), 1.0, 0.5, 4.0, DataMode::Force).unwrap();
        let s = d.subset(&[5, 0, 5]);
        assert_eq!(s.len(), 3);
        assert_eq!(s.observations(0), d.observations(5));
        assert_eq!(s.observations(2), d.observations(5));
        assert!(s.grid.is_none());
    }
}
