//! Batched loss evaluation. Networks run as dense jet passes (value plus
//! first input derivatives for a whole batch at once); only the per-point
//! loss head is recorded on a scalar tape, with the jets as its leaves.
//! Adjoints of those leaves seed the dense backward pass.

use ndarray::Array2;

use crate::autodiff::{NodeId, Tape};
use crate::data::Dataset;
use crate::elasticity::{MaterialParam, MaterialParams};
use crate::field::FieldTable;
use crate::loss::{FieldJet, LossError, LossReport, LossScales, Physics, PointJets, ResidualSet, Term};
use crate::networks::{FieldModel, JetTrace};

/// Rows per chunk when evaluating a whole dataset.
const EVAL_CHUNK: usize = 1024;

/// Everything a loss evaluation needs besides the parameters.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a> {
    pub dataset: &'a Dataset,
    pub scales: &'a LossScales,
    pub physics: &'a Physics,
}

fn input_matrix(dataset: &Dataset, rows: &[usize]) -> Array2<f64> {
    let d = if dataset.mu.is_some() { 3 } else { 2 };
    let mut m = Array2::zeros((d, rows.len()));
    for (p, &r) in rows.iter().enumerate() {
        m[[0, p]] = dataset.x[r];
        m[[1, p]] = dataset.y[r];
        if let Some(mu) = &dataset.mu {
            m[[2, p]] = mu[r];
        }
    }
    m
}

struct Head {
    /// Per network: leaf ids laid out `(out * batch + point) * 3 + component`.
    leaves: Vec<Vec<NodeId>>,
    material: Vec<(MaterialParam, NodeId)>,
    residuals: ResidualSet,
}

fn build_head(
    tape: &mut Tape,
    model: &FieldModel,
    traces: &[JetTrace],
    material: &MaterialParams,
    ctx: &LossContext,
    rows: &[usize],
) -> Result<Head, LossError> {
    let batch = rows.len();
    let leaves: Vec<Vec<NodeId>> = traces
        .iter()
        .map(|t| {
            let d_y = t.output().nrows();
            let mut ids = Vec::with_capacity(d_y * batch * 3);
            for o in 0..d_y {
                for p in 0..batch {
                    ids.push(tape.var(t.value(o, p)));
                    ids.push(tape.var(t.tangent(o, 0, p)));
                    ids.push(tape.var(t.tangent(o, 1, p)));
                }
            }
            ids
        })
        .collect();
    let (mat, material_vars) = material.nodes(tape, ctx.scales);
    let mut residuals = ResidualSet::new(ctx.physics.problem());
    for (p, &row) in rows.iter().enumerate() {
        let mut jets: PointJets = FieldTable::splat(None);
        for &f in model.fields() {
            let (n, o) = model.slot(f).expect("model field");
            let base = (o * batch + p) * 3;
            let ids = &leaves[n];
            jets[f] = Some(FieldJet {
                value: ids[base],
                dx: ids[base + 1],
                dy: ids[base + 2],
            });
        }
        let mut point_mat = mat;
        if let Some(mu) = ctx.dataset.mu.as_ref().map(|m| m[row]) {
            point_mat.mu = tape.constant(mu);
        }
        let obs = ctx.dataset.observations(row);
        residuals.push_point(ctx.physics.point_residuals(tape, &jets, &obs, &point_mat, ctx.scales)?);
    }
    Ok(Head {
        leaves,
        material: material_vars,
        residuals,
    })
}

fn forward(model: &FieldModel, inputs: &Array2<f64>) -> Result<Vec<JetTrace>, LossError> {
    Ok(model
        .networks()
        .iter()
        .map(|n| n.forward_jets(inputs.view(), &[0, 1]))
        .collect::<Result<Vec<_>, _>>()?)
}

/// Mean-of-squares loss over `rows` and its gradient. `grad` receives the
/// network gradient (flatten order) followed by one entry per trainable
/// material parameter (scaled units); it is overwritten.
pub fn batch_loss_and_gradient(
    tape: &mut Tape,
    model: &FieldModel,
    material: &MaterialParams,
    ctx: &LossContext,
    rows: &[usize],
    grad: &mut [f64],
) -> Result<LossReport, LossError> {
    if rows.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    tape.clear();
    let inputs = input_matrix(ctx.dataset, rows);
    let traces = forward(model, &inputs)?;
    let head = build_head(tape, model, &traces, material, ctx, rows)?;
    let nodes = head.residuals.assemble(tape)?;
    let report = nodes.report(tape);
    tape.backward(nodes.total)?;

    grad.iter_mut().for_each(|g| *g = 0.0);
    let batch = rows.len();
    let offsets = model.param_offsets();
    for (n, net) in model.networks().iter().enumerate() {
        let d_y = net.output_dim();
        let mut seed = Array2::zeros((d_y, 3 * batch));
        let ids = &head.leaves[n];
        for o in 0..d_y {
            for p in 0..batch {
                let base = (o * batch + p) * 3;
                seed[[o, p]] = tape.adjoint(ids[base]);
                seed[[o, batch + p]] = tape.adjoint(ids[base + 1]);
                seed[[o, 2 * batch + p]] = tape.adjoint(ids[base + 2]);
            }
        }
        let lo = offsets[n];
        net.backward_jets(&traces[n], seed, &mut grad[lo..lo + net.param_count()])?;
    }
    let base = model.param_count();
    for (k, &(_, id)) in head.material.iter().enumerate() {
        grad[base + k] = tape.adjoint(id);
    }
    Ok(report)
}

/// Loss over the whole dataset, evaluated in fixed-order chunks.
pub fn evaluate_loss(
    tape: &mut Tape,
    model: &FieldModel,
    material: &MaterialParams,
    ctx: &LossContext,
) -> Result<LossReport, LossError> {
    let rows: Vec<usize> = (0..ctx.dataset.len()).collect();
    evaluate_rows(tape, model, material, ctx, &rows)
}

/// Residual values over `rows`, per term in loss order.
pub fn residual_values(
    tape: &mut Tape,
    model: &FieldModel,
    material: &MaterialParams,
    ctx: &LossContext,
    rows: &[usize],
) -> Result<Vec<Vec<f64>>, LossError> {
    if rows.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut out = vec![Vec::with_capacity(rows.len()); Term::all(ctx.physics.problem()).len()];
    for chunk in rows.chunks(EVAL_CHUNK) {
        tape.clear();
        let inputs = input_matrix(ctx.dataset, chunk);
        let traces = forward(model, &inputs)?;
        let head = build_head(tape, model, &traces, material, ctx, chunk)?;
        for (o, v) in out.iter_mut().zip(head.residuals.values(tape)) {
            o.extend(v);
        }
    }
    Ok(out)
}

pub fn evaluate_rows(
    tape: &mut Tape,
    model: &FieldModel,
    material: &MaterialParams,
    ctx: &LossContext,
    rows: &[usize],
) -> Result<LossReport, LossError> {
    if rows.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let terms = Term::all(ctx.physics.problem());
    let mut sums = vec![0.0; terms.len()];
    for chunk in rows.chunks(EVAL_CHUNK) {
        tape.clear();
        let inputs = input_matrix(ctx.dataset, chunk);
        let traces = forward(model, &inputs)?;
        let head = build_head(tape, model, &traces, material, ctx, chunk)?;
        for (s, v) in sums.iter_mut().zip(head.residuals.sum_squares(tape)) {
            *s += v;
        }
    }
    let n = rows.len() as f64;
    let terms: Vec<(Term, f64)> = terms.into_iter().zip(sums).map(|(t, s)| (t, s / n)).collect();
    let total = terms.iter().map(|t| t.1).sum();
    Ok(LossReport { terms, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_elastic_dataset, normalize, DataMode, GridSpec};
    use crate::field::Problem;
    use crate::loss::graph_loss;
    use crate::networks::{Activation, NetworkArch};
    use crate::plasticity::PlasticityOptions;

    fn setup() -> (FieldModel, MaterialParams, Dataset, LossScales) {
        let d = generate_elastic_dataset(&GridSpec::new(5, 4), 1.0, 0.5, 4.0, DataMode::Force).unwrap();
        let (d, rec) = normalize(&d).unwrap();
        let arch = NetworkArch::new(2, 6, Activation::Tanh);
        let model = FieldModel::build(Problem::Elastic.network_fields(), &arch, &["x", "y"], 3).unwrap();
        let material = MaterialParams::fixed(1.7, 0.9).identify();
        (model, material, d, LossScales::from_record(&rec))
    }

    #[test]
    fn batched_path_matches_the_scalar_graph() {
        let (model, material, d, scales) = setup();
        let physics = Physics::Elastic;
        let ctx = LossContext {
            dataset: &d,
            scales: &scales,
            physics: &physics,
        };
        let rows = [3, 7, 0, 19, 11];
        let mut tape = Tape::new();
        let mut grad = vec![0.0; model.param_count() + 2];
        let fast = batch_loss_and_gradient(&mut tape, &model, &material, &ctx, &rows, &mut grad).unwrap();

        let mut t2 = Tape::new();
        let g = graph_loss(&mut t2, &model, &material, &d, &rows, &scales, &physics).unwrap();
        let slow = g.nodes.report(&t2);
        assert!((fast.total - slow.total).abs() < 1e-12 * slow.total);
        let want = t2.parameter_gradient(g.nodes.total, &g.all_params()).unwrap();
        for (a, b) in grad.iter().zip(&want) {
            assert!((a - b).abs() < 1e-11 * (1.0 + b.abs()), "{a} vs {b}");
        }
        let eval = evaluate_rows(&mut tape, &model, &material, &ctx, &rows).unwrap();
        assert!((eval.total - fast.total).abs() < 1e-13 * fast.total);
    }

    #[test]
    fn identity_scales_give_the_raw_loss() {
        let (model, material, d, _) = setup();
        let raw = crate::data::denormalize(&d);
        let physics = Physics::Elastic;
        let id = LossScales::identity();
        let rows: Vec<usize> = (0..raw.len()).collect();
        let mut t = Tape::new();
        let g = graph_loss(&mut t, &model, &material, &raw, &rows, &id, &physics).unwrap();
        let ctx = LossContext {
            dataset: &raw,
            scales: &id,
            physics: &physics,
        };
        let e = evaluate_loss(&mut Tape::new(), &model, &material, &ctx).unwrap();
        assert!((t.value(g.nodes.total) - e.total).abs() < 1e-12 * e.total);
    }

    #[test]
    fn plastic_batches_also_match() {
        let (_, _, d, _) = setup();
        let mut d = crate::data::denormalize(&d);
        d.problem = Problem::Plastic;
        let n = d.len();
        d.set_column(crate::field::Field::Szz, (0..n).map(|i| 0.1 * i as f64).collect());
        let arch = NetworkArch::new(2, 5, Activation::Tanh);
        let model = FieldModel::build(Problem::Plastic.network_fields(), &arch, &["x", "y"], 9).unwrap();
        let material = MaterialParams::fixed(1.0, 0.5).with_yield(0.3).identify();
        let physics = Physics::Plastic(PlasticityOptions::default());
        let (d, rec) = normalize(&d).unwrap();
        let scales = LossScales::from_record(&rec);
        let ctx = LossContext {
            dataset: &d,
            scales: &scales,
            physics: &physics,
        };
        let rows = [1, 2, 5, 8];
        let mut grad = vec![0.0; model.param_count() + 3];
        let fast =
            batch_loss_and_gradient(&mut Tape::new(), &model, &material, &ctx, &rows, &mut grad).unwrap();
        let mut t = Tape::new();
        let g = graph_loss(&mut t, &model, &material, &d, &rows, &scales, &physics).unwrap();
        assert!((fast.total - t.value(g.nodes.total)).abs() < 1e-12 * fast.total);
        let want = t.parameter_gradient(g.nodes.total, &g.all_params()).unwrap();
        for (a, b) in grad.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}
