//! Shared helpers for the integration tests. Everything here is written
//! against plain `f64` arithmetic so it can serve as an oracle for the
//! library's graph-based code.

#![allow(dead_code)]

use elastinet::autodiff::Tape;
use elastinet::data::{DataMode, Dataset, MaterialRecord};
use elastinet::elasticity::{MaterialParam, MaterialParams};
use elastinet::field::{Field, Problem};
use elastinet::loss::{graph_loss, LossReport, Physics};
use elastinet::networks::{Activation, DenseNetwork, FieldModel, Layer, NetworkArch};
use elastinet::plasticity::PlasticityOptions;
use elastinet::training::prepare_dataset;
use ndarray::{arr1, arr2};

/// Symmetric tensor `(xx, yy, zz, xy)`.
pub type Sym = [f64; 4];

/// Affine field `a + bx x + by y`.
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub a: f64,
    pub bx: f64,
    pub by: f64,
}

impl Affine {
    pub fn constant(a: f64) -> Self {
        Self { a, bx: 0.0, by: 0.0 }
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        self.a + self.bx * x + self.by * y
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            a: self.a / s,
            bx: self.bx / s,
            by: self.by / s,
        }
    }
}

/// A model whose networks reproduce affine fields exactly: one linear
/// hidden layer passing `(x, y)` through, then the affine read-out.
pub fn affine_model(fields: &[(Field, Affine)]) -> FieldModel {
    let networks = fields
        .iter()
        .map(|(_, f)| {
            DenseNetwork::from_layers(vec![
                Layer {
                    weights: arr2(&[[1.0, 0.0], [0.0, 1.0]]),
                    bias: arr1(&[0.0, 0.0]),
                    activation: Activation::Linear,
                },
                Layer {
                    weights: arr2(&[[f.bx, f.by]]),
                    bias: arr1(&[f.a]),
                    activation: Activation::Linear,
                },
            ])
            .unwrap()
        })
        .collect();
    FieldModel::from_networks(
        NetworkArch::new(1, 2, Activation::Linear),
        vec!["x".into(), "y".into()],
        fields.iter().map(|(f, _)| *f).collect(),
        networks,
    )
    .unwrap()
}

pub fn grid_points(n: usize) -> Vec<(f64, f64)> {
    let h = 1.0 / (n - 1) as f64;
    (0..n * n).map(|r| ((r % n) as f64 * h, (r / n) as f64 * h)).collect()
}

// ---------------------------------------------------------------------------
// Plane-strain von Mises return mapping from a virgin state.

#[derive(Debug, Clone, Copy)]
pub struct OracleState {
    /// Total strain `(xx, yy, zz = 0, xy)`.
    pub strain: Sym,
    pub stress: Sym,
    pub plastic_strain: Sym,
    /// Equivalent plastic strain (the plastic multiplier).
    pub eps_p: f64,
    pub q: f64,
    pub plastic: bool,
}

/// Strain-driven return mapping for perfect von Mises plasticity, starting
/// from zero plastic strain.
pub fn return_mapping(exx: f64, eyy: f64, exy: f64, lambda: f64, mu: f64, sigma_y: f64) -> OracleState {
    let vol = exx + eyy;
    let e = [exx - vol / 3.0, eyy - vol / 3.0, -vol / 3.0, exy];
    let norm2 = e[0] * e[0] + e[1] * e[1] + e[2] * e[2] + 2.0 * e[3] * e[3];
    let eps_bar = (2.0 / 3.0 * norm2).sqrt();
    let s_trial = e.map(|v| 2.0 * mu * v);
    let q_trial = 3.0 * mu * eps_bar;
    let bulk = lambda + 2.0 * mu / 3.0;
    let (s, ep, eps_p, q, plastic) = if q_trial <= sigma_y {
        (s_trial, [0.0; 4], 0.0, q_trial, false)
    } else {
        let dgamma = eps_bar - sigma_y / (3.0 * mu);
        let ratio = sigma_y / q_trial;
        let s = s_trial.map(|v| v * ratio);
        let ep = s.map(|v| dgamma * 1.5 * v / sigma_y);
        (s, ep, dgamma, sigma_y, true)
    };
    let p = bulk * vol;
    OracleState {
        strain: [exx, eyy, 0.0, exy],
        stress: [p + s[0], p + s[1], p + s[2], s[3]],
        plastic_strain: ep,
        eps_p,
        q,
        plastic,
    }
}

/// Uniform strain scaled so that the trial equivalent stress equals
/// `factor * sigma_y`.
pub fn strain_at_level(direction: [f64; 3], factor: f64, mu: f64, sigma_y: f64) -> [f64; 3] {
    let [exx, eyy, exy] = direction;
    let vol = exx + eyy;
    let e = [exx - vol / 3.0, eyy - vol / 3.0, -vol / 3.0, exy];
    let norm2 = e[0] * e[0] + e[1] * e[1] + e[2] * e[2] + 2.0 * e[3] * e[3];
    let q = 3.0 * mu * (2.0 / 3.0 * norm2).sqrt();
    let k = factor * sigma_y / q;
    [exx * k, eyy * k, exy * k]
}

/// Displacement fields `ux = exx x + exy y`, `uy = exy x + eyy y` and
/// constant stresses for a homogeneous oracle state.
pub fn homogeneous_fields(state: &OracleState) -> Vec<(Field, Affine)> {
    let [exx, eyy, _, exy] = state.strain;
    let [sxx, syy, szz, sxy] = state.stress;
    vec![
        (Field::Ux, Affine { a: 0.0, bx: exx, by: exy }),
        (Field::Uy, Affine { a: 0.0, bx: exy, by: eyy }),
        (Field::Sxx, Affine::constant(sxx)),
        (Field::Syy, Affine::constant(syy)),
        (Field::Szz, Affine::constant(szz)),
        (Field::Sxy, Affine::constant(sxy)),
    ]
}

/// Plastic dataset sampling `fields` at `points`, with zero body forces.
pub fn plastic_dataset(
    fields: &[(Field, Affine)],
    points: &[(f64, f64)],
    lambda: f64,
    mu: f64,
    sigma_y: f64,
) -> Dataset {
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let mut d = Dataset::new(Problem::Plastic, DataMode::Force, x, y);
    for (f, a) in fields {
        d.set_column(*f, points.iter().map(|&(x, y)| a.at(x, y)).collect());
    }
    d.set_column(Field::Fx, vec![0.0; points.len()]);
    d.set_column(Field::Fy, vec![0.0; points.len()]);
    d.material = MaterialRecord {
        lambda: Some(lambda),
        mu: Some(mu),
        sigma_y: Some(sigma_y),
    };
    d
}

pub struct Evaluated {
    pub report: LossReport,
    /// d total / d sigma_y in normalized units, when sigma_y is trainable.
    pub dsigma: Option<f64>,
}

/// Plasticity loss of a model frozen at a homogeneous `state`, on
/// normalized data sampled from it on a 4x4 grid. The dataset records the
/// material `truth`; `material` is what the loss is evaluated with.
pub fn homogeneous_loss(
    state: &OracleState,
    truth: (f64, f64, f64),
    material: MaterialParams,
    options: PlasticityOptions,
) -> Evaluated {
    let fields = homogeneous_fields(state);
    let raw = plastic_dataset(&fields, &grid_points(4), truth.0, truth.1, truth.2);
    let (data, scales) = prepare_dataset(&raw, None, true).unwrap();
    let record = data.normalization.clone().unwrap();
    let scaled: Vec<(Field, Affine)> = fields.iter().map(|(f, a)| (*f, a.scaled(record.scale(*f)))).collect();
    let model = affine_model(&scaled);
    let physics = Physics::Plastic(options);
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut tape = Tape::new();
    let g = graph_loss(&mut tape, &model, &material, &data, &rows, &scales, &physics).unwrap();
    let report = g.nodes.report(&tape);
    let dsigma = g
        .material_params
        .iter()
        .find(|(p, _)| *p == MaterialParam::SigmaY)
        .map(|&(_, node)| tape.parameter_gradient(g.nodes.total, &[node]).unwrap()[0]);
    Evaluated { report, dsigma }
}

// ---------------------------------------------------------------------------
// Straightforward elastic loss in physical units.

/// Value and gradient of one single-output network, by explicit forward
/// propagation of `(v, dv/dx, dv/dy)` through the layers.
pub fn reference_network(net: &DenseNetwork, x: f64, y: f64) -> [f64; 3] {
    let mut h = vec![[x, 1.0, 0.0], [y, 0.0, 1.0]];
    for layer in net.layers() {
        let (rows, cols) = layer.weights.dim();
        let mut next = Vec::with_capacity(rows);
        for i in 0..rows {
            let mut z = [layer.bias[i], 0.0, 0.0];
            for j in 0..cols {
                let w = layer.weights[(i, j)];
                for c in 0..3 {
                    z[c] += w * h[j][c];
                }
            }
            next.push(match layer.activation {
                Activation::Tanh => {
                    let t = z[0].tanh();
                    let d = 1.0 - t * t;
                    [t, d * z[1], d * z[2]]
                }
                Activation::Relu => {
                    if z[0] > 0.0 {
                        z
                    } else {
                        [0.0; 3]
                    }
                }
                Activation::Linear => z,
            });
        }
        h = next;
    }
    h[0]
}

/// Mean-squared elastic loss (ten terms) of an independent-network model on
/// physical observations, summed over terms.
pub fn reference_elastic_loss(model: &FieldModel, data: &Dataset, lambda: f64, mu: f64) -> f64 {
    let net = |f: Field| {
        let i = model.fields().iter().position(|&g| g == f).unwrap();
        &model.networks()[i]
    };
    let n = data.len() as f64;
    let mut total = 0.0;
    for r in 0..data.len() {
        let (x, y) = (data.x[r], data.y[r]);
        let ux = reference_network(net(Field::Ux), x, y);
        let uy = reference_network(net(Field::Uy), x, y);
        let sxx = reference_network(net(Field::Sxx), x, y);
        let syy = reference_network(net(Field::Syy), x, y);
        let sxy = reference_network(net(Field::Sxy), x, y);
        let obs = |f: Field| data.column(f).unwrap()[r];
        let exx = ux[1];
        let eyy = uy[2];
        let gxy = ux[2] + uy[1];
        let residuals = [
            ux[0] - obs(Field::Ux),
            uy[0] - obs(Field::Uy),
            sxx[0] - obs(Field::Sxx),
            syy[0] - obs(Field::Syy),
            sxy[0] - obs(Field::Sxy),
            sxx[1] + sxy[2] + obs(Field::Fx),
            sxy[1] + syy[2] + obs(Field::Fy),
            (lambda + 2.0 * mu) * exx + lambda * eyy - sxx[0],
            (lambda + 2.0 * mu) * eyy + lambda * exx - syy[0],
            mu * gxy - sxy[0],
        ];
        total += residuals.iter().map(|v| v * v).sum::<f64>() / n;
    }
    total
}
