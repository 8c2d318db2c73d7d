//! Central finite-difference checks of graph derivatives.

use crate::autodiff::{NodeId, Tape};
use crate::elasticity::MaterialParams;
use crate::loss::{graph_loss, LossError};
use crate::networks::{FieldModel, NetworkError};

use super::engine::{residual_values, LossContext};

/// Values below this magnitude are compared in absolute terms.
const FLOOR: f64 = 1e-3;

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(FLOOR)
}

/// Central difference of `sum_t mean_p r^2`, taken residual by residual so
/// the rounding noise scales with the change rather than the loss itself.
fn difference(up: &[Vec<f64>], down: &[Vec<f64>], h: f64) -> f64 {
    let mut total = 0.0;
    for (u, d) in up.iter().zip(down) {
        let s: f64 = u.iter().zip(d).map(|(a, b)| (a - b) * (a + b)).sum();
        total += s / u.len() as f64;
    }
    total / (2.0 * h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a - fd| / max(|fd|, 1e-3)` over all checked entries.
    pub max_rel_error: f64,
    /// Index of the worst entry.
    pub worst: usize,
    pub checked: usize,
    /// Largest disagreement between the scalar graph and the batched path.
    pub max_path_error: f64,
}

/// Gradient of the loss over `rows` from the scalar graph, compared against
/// central differences of the loss with step `h` in every network parameter
/// and trainable (scaled) material parameter.
pub fn gradient_check(
    model: &FieldModel,
    material: &MaterialParams,
    ctx: &LossContext,
    rows: &[usize],
    h: f64,
) -> Result<GradCheckReport, LossError> {
    let mut tape = Tape::new();
    let g = graph_loss(&mut tape, model, material, ctx.dataset, rows, ctx.scales, ctx.physics)?;
    let analytic = tape.parameter_gradient(g.nodes.total, &g.all_params())?;

    let mut fast = vec![0.0; analytic.len()];
    super::engine::batch_loss_and_gradient(&mut tape, model, material, ctx, rows, &mut fast)?;
    let max_path_error = analytic
        .iter()
        .zip(&fast)
        .map(|(a, b)| rel_error(*b, *a))
        .fold(0.0, f64::max);

    let mut params = model.flatten();
    let n_net = params.len();
    let order = material.trainable_params();
    let mut probe = model.clone();
    let mut loss_at = |params: &[f64], mat: &MaterialParams| -> Result<Vec<Vec<f64>>, LossError> {
        probe.set_params(params)?;
        residual_values(&mut tape, &probe, mat, ctx, rows)
    };

    let mut worst = (0.0, 0);
    for i in 0..analytic.len() {
        let numeric = if i < n_net {
            let v = params[i];
            params[i] = v + h;
            let up = loss_at(&params, material)?;
            params[i] = v - h;
            let down = loss_at(&params, material)?;
            params[i] = v;
            difference(&up, &down, h)
        } else {
            let p = order[i - n_net];
            let s = p.scale(ctx.scales);
            let theta = material.get(p) / s;
            let mut m = *material;
            m.set(p, (theta + h) * s);
            let up = loss_at(&params, &m)?;
            m.set(p, (theta - h) * s);
            let down = loss_at(&params, &m)?;
            difference(&up, &down, h)
        };
        let e = rel_error(analytic[i], numeric);
        if e > worst.0 || i == 0 {
            worst = (e, i);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst: worst.1,
        checked: analytic.len(),
        max_path_error,
    })
}

/// Largest error of graph input derivatives `d out / d x_k` of every network
/// output against central differences, over `points`.
pub fn input_derivative_check(model: &FieldModel, points: &[Vec<f64>], h: f64) -> Result<f64, NetworkError> {
    let mut worst: f64 = 0.0;
    for x in points {
        for net in model.networks() {
            let mut tape = Tape::new();
            let params = net.register_params(&mut tape);
            let inputs: Vec<NodeId> = x.iter().map(|&v| tape.var(v)).collect();
            let outs = net.forward_on_tape(&mut tape, &params, &inputs)?;
            for (o, &out) in outs.iter().enumerate() {
                let d = tape
                    .input_gradient(out, &inputs)
                    .expect("nodes belong to the tape");
                for (k, &dk) in d.iter().enumerate() {
                    let mut xp = x.clone();
                    xp[k] += h;
                    let up = net.predict(&xp)?[o];
                    xp[k] = x[k] - h;
                    let down = net.predict(&xp)?[o];
                    let numeric = (up - down) / (2.0 * h);
                    worst = worst.max(rel_error(tape.value(dk), numeric));
                }
            }
        }
    }
    Ok(worst)
}
