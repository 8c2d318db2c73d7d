use serde::{Deserialize, Serialize};

use super::DataError;

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self::unit()
    }
}

impl Bounds {
    pub fn unit() -> Self {
        Self {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
        }
    }

    /// Smallest rectangle holding every point.
    pub fn enclosing(x: &[f64], y: &[f64]) -> Option<Self> {
        if x.is_empty() {
            return None;
        }
        let fold = |v: &[f64]| {
            v.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)))
        };
        let (x_min, x_max) = fold(x);
        let (y_min, y_max) = fold(y);
        Some(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// Characteristic length: the larger side, or 1 for a degenerate box.
    pub fn extent(&self) -> f64 {
        let e = self.width().max(self.height());
        if e > 0.0 {
            e
        } else {
            1.0
        }
    }

    pub fn contains(&self, x: f64, y: f64, tol: f64) -> bool {
        x >= self.x_min - tol && x <= self.x_max + tol && y >= self.y_min - tol && y <= self.y_max + tol
    }

    pub fn contains_box(&self, other: &Bounds) -> bool {
        let tol = 1e-12 * self.extent();
        self.contains(other.x_min, other.y_min, tol) && self.contains(other.x_max, other.y_max, tol)
    }
}

/// Uniform `nx × ny` grid including the corners. Points are ordered with x
/// running fastest: row `j * nx + i` sits at `(x_i, y_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub bounds: Bounds,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            bounds: Bounds::unit(),
        }
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Self {
        self.bounds = bounds;
        self
    }

    /// Parses `"100x100"`.
    pub fn parse(s: &str) -> Result<Self, DataError> {
        let bad = || DataError::InvalidGrid(format!("expected NXxNY, got `{s}`"));
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let nx = a.trim().parse().map_err(|_| bad())?;
        let ny = b.trim().parse().map_err(|_| bad())?;
        let g = Self::new(nx, ny);
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.nx < 2 || self.ny < 2 {
            return Err(DataError::InvalidGrid(format!(
                "grid needs at least 2 points per axis, got {}x{}",
                self.nx, self.ny
            )));
        }
        let b = self.bounds;
        if !(b.width() > 0.0 && b.height() > 0.0) {
            return Err(DataError::InvalidGrid("grid bounds are empty".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hx(&self) -> f64 {
        self.bounds.width() / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        self.bounds.height() / (self.ny - 1) as f64
    }

    pub fn x_at(&self, i: usize) -> f64 {
        if i == self.nx - 1 {
            self.bounds.x_max
        } else {
            self.bounds.x_min + i as f64 * self.hx()
        }
    }

    pub fn y_at(&self, j: usize) -> f64 {
        if j == self.ny - 1 {
            self.bounds.y_max
        } else {
            self.bounds.y_min + j as f64 * self.hy()
        }
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Recognizes points laid out as a full uniform grid in row order.
    pub fn detect(x: &[f64], y: &[f64]) -> Option<Self> {
        let n = x.len();
        if n < 4 || y.len() != n {
            return None;
        }
        let nx = y.iter().take_while(|&&v| v == y[0]).count();
        if nx < 2 || n % nx != 0 {
            return None;
        }
        let ny = n / nx;
        if ny < 2 {
            return None;
        }
        let bounds = Bounds {
            x_min: x[0],
            x_max: x[nx - 1],
            y_min: y[0],
            y_max: y[n - 1],
        };
        let g = Self { nx, ny, bounds };
        if g.validate().is_err() {
            return None;
        }
        let (tx, ty) = (1e-9 * g.hx(), 1e-9 * g.hy());
        for j in 0..ny {
            for i in 0..nx {
                let r = g.index(i, j);
                if (x[r] - g.x_at(i)).abs() > tx || (y[r] - g.y_at(j)).abs() > ty {
                    return None;
                }
            }
        }
        Some(g)
    }
}

/// Grid points in row order.
pub fn sample_grid(spec: &GridSpec) -> Result<Vec<(f64, f64)>, DataError> {
    spec.validate()?;
    let mut pts = Vec::with_capacity(spec.len());
    for j in 0..spec.ny {
        for i in 0..spec.nx {
            pts.push((spec.x_at(i), spec.y_at(j)));
        }
    }
    Ok(pts)
}
