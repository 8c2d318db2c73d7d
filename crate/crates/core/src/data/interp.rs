//! Piecewise-cubic Hermite interpolation on uniform grids, applied one axis
//! at a time. Node slopes come from fourth-order difference formulas, so the
//! interpolant is C¹ and reproduces cubics along each axis exactly.

use super::grid::GridSpec;
use super::DataError;

/// Slopes (per unit index) at every node of a uniformly sampled line.
fn node_slopes(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut m = vec![0.0; n];
    match n {
        0 | 1 => {}
        2 => {
            m[0] = v[1] - v[0];
            m[1] = m[0];
        }
        3 => {
            m[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / 2.0;
            m[1] = (v[2] - v[0]) / 2.0;
            m[2] = (v[0] - 4.0 * v[1] + 3.0 * v[2]) / 2.0;
        }
        _ => {
            // derivative of the cubic through the first / last four nodes
            let head = |a: &[f64]| {
                [
                    (-11.0 * a[0] + 18.0 * a[1] - 9.0 * a[2] + 2.0 * a[3]) / 6.0,
                    (-2.0 * a[0] - 3.0 * a[1] + 6.0 * a[2] - a[3]) / 6.0,
                    (a[0] - 6.0 * a[1] + 3.0 * a[2] + 2.0 * a[3]) / 6.0,
                    (-2.0 * a[0] + 9.0 * a[1] - 18.0 * a[2] + 11.0 * a[3]) / 6.0,
                ]
            };
            let h = head(&v[..4]);
            let t = head(&v[n - 4..]);
            m[0] = h[0];
            m[1] = h[1];
            m[n - 2] = t[2];
            m[n - 1] = t[3];
            for i in 2..n.saturating_sub(2) {
                m[i] = (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) / 12.0;
            }
        }
    }
    m
}

/// Cubic Hermite interpolant of a line sampled at `x0 + i h`, evaluated at
/// each of `targets`.
fn interpolate_line(v: &[f64], slopes: &[f64], x0: f64, h: f64, targets: &[f64], out: &mut [f64]) {
    let n = v.len();
    for (dst, &x) in out.iter_mut().zip(targets) {
        let s = ((x - x0) / h).clamp(0.0, (n - 1) as f64);
        let k = (s.floor() as usize).min(n - 2);
        let t = s - k as f64;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        *dst = h00 * v[k] + h10 * slopes[k] + h01 * v[k + 1] + h11 * slopes[k + 1];
    }
}

/// Resamples one grid column from `source` onto `target`.
pub fn interpolate_grid(source: &GridSpec, values: &[f64], target: &GridSpec) -> Result<Vec<f64>, DataError> {
    source.validate()?;
    target.validate()?;
    if values.len() != source.len() {
        return Err(DataError::Length {
            expected: source.len(),
            got: values.len(),
        });
    }
    if !source.bounds.contains_box(&target.bounds) {
        return Err(DataError::OutOfBounds);
    }
    let tx: Vec<f64> = (0..target.nx).map(|i| target.x_at(i)).collect();
    let ty: Vec<f64> = (0..target.ny).map(|j| target.y_at(j)).collect();
    let (sx, sy) = (source.bounds.x_min, source.bounds.y_min);

    // along x: one row per source y
    let mut rows = vec![0.0; source.ny * target.nx];
    for j in 0..source.ny {
        let line = &values[j * source.nx..(j + 1) * source.nx];
        let m = node_slopes(line);
        interpolate_line(line, &m, sx, source.hx(), &tx, &mut rows[j * target.nx..(j + 1) * target.nx]);
    }
    // along y: one column per target x
    let mut out = vec![0.0; target.len()];
    let mut col = vec![0.0; source.ny];
    let mut res = vec![0.0; target.ny];
    for i in 0..target.nx {
        for j in 0..source.ny {
            col[j] = rows[j * target.nx + i];
        }
        let m = node_slopes(&col);
        interpolate_line(&col, &m, sy, source.hy(), &ty, &mut res);
        for (j, v) in res.iter().enumerate() {
            out[j * target.nx + i] = *v;
        }
    }
    Ok(out)
}
