//! Second-order finite differences on uniform grids.

use super::grid::GridSpec;
use super::DataError;

fn check(grid: &GridSpec, values: &[f64]) -> Result<(), DataError> {
    grid.validate()?;
    if grid.nx < 3 || grid.ny < 3 {
        return Err(DataError::InvalidGrid(format!(
            "finite differences need at least a 3x3 grid, got {}x{}",
            grid.nx, grid.ny
        )));
    }
    if values.len() != grid.len() {
        return Err(DataError::Length {
            expected: grid.len(),
            got: values.len(),
        });
    }
    Ok(())
}

/// Derivative along a strided line of `n` samples with spacing `h`: central
/// inside, one-sided second order at both ends.
fn line_derivative(get: impl Fn(usize) -> f64, n: usize, h: f64, out: &mut impl FnMut(usize, f64)) {
    out(0, (-3.0 * get(0) + 4.0 * get(1) - get(2)) / (2.0 * h));
    for i in 1..n - 1 {
        out(i, (get(i + 1) - get(i - 1)) / (2.0 * h));
    }
    out(
        n - 1,
        (3.0 * get(n - 1) - 4.0 * get(n - 2) + get(n - 3)) / (2.0 * h),
    );
}

pub fn d_dx(grid: &GridSpec, values: &[f64]) -> Result<Vec<f64>, DataError> {
    check(grid, values)?;
    let mut out = vec![0.0; values.len()];
    let h = grid.hx();
    for j in 0..grid.ny {
        let row = j * grid.nx;
        line_derivative(|i| values[row + i], grid.nx, h, &mut |i, d| out[row + i] = d);
    }
    Ok(out)
}

pub fn d_dy(grid: &GridSpec, values: &[f64]) -> Result<Vec<f64>, DataError> {
    check(grid, values)?;
    let mut out = vec![0.0; values.len()];
    let (h, nx) = (grid.hy(), grid.nx);
    for i in 0..nx {
        line_derivative(|j| values[j * nx + i], grid.ny, h, &mut |j, d| out[j * nx + i] = d);
    }
    Ok(out)
}

/// Body forces balancing the given stresses, `f_i = -sigma_ij,j`.
pub fn central_difference_forces(
    grid: &GridSpec,
    sxx: &[f64],
    syy: &[f64],
    sxy: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), DataError> {
    let sxx_x = d_dx(grid, sxx)?;
    let sxy_y = d_dy(grid, sxy)?;
    let sxy_x = d_dx(grid, sxy)?;
    let syy_y = d_dy(grid, syy)?;
    let fx = sxx_x.iter().zip(&sxy_y).map(|(a, b)| -(a + b)).collect();
    let fy = sxy_x.iter().zip(&syy_y).map(|(a, b)| -(a + b)).collect();
    Ok((fx, fy))
}
