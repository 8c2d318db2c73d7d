//! Plane-strain linear elasticity: the manufactured solution used for
//! verification and the residuals of the composite data + physics loss.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{NodeId, Tape};
use crate::data::Dataset;
use crate::field::{Field, Problem};
use crate::loss::{
    data_residuals, observed, scaled, unscaled, LossError, LossScales, MaterialNodes,
    PhysicalJets, PointJets, PointObs, Term,
};
use crate::networks::FieldModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("shear modulus must be positive, got {0}")]
    NonPositiveShear(f64),
    #[error("bulk modulus lambda + 2 mu / 3 must be positive, got {0}")]
    NonPositiveBulk(f64),
    #[error("material parameter `{0}` is not finite")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trainable {
    pub lambda: bool,
    pub mu: bool,
    pub sigma_y: bool,
}

/// Lamé parameters and (for plasticity) the yield stress, in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub lambda: f64,
    pub mu: f64,
    pub sigma_y: Option<f64>,
    pub trainable: Trainable,
}

/// Which material parameter a trainable slot refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialParam {
    Lambda,
    Mu,
    SigmaY,
}

impl MaterialParam {
    pub fn name(self) -> &'static str {
        match self {
            MaterialParam::Lambda => "lambda",
            MaterialParam::Mu => "mu",
            MaterialParam::SigmaY => "sigma_y",
        }
    }

    /// Reference magnitude used to non-dimensionalize the trainable value.
    pub fn scale(self, scales: &LossScales) -> f64 {
        match self {
            MaterialParam::Lambda | MaterialParam::Mu => scales.modulus(),
            MaterialParam::SigmaY => scales.stress,
        }
    }
}

impl MaterialParams {
    pub fn fixed(lambda: f64, mu: f64) -> Self {
        Self {
            lambda,
            mu,
            sigma_y: None,
            trainable: Trainable::default(),
        }
    }

    pub fn with_yield(mut self, sigma_y: f64) -> Self {
        self.sigma_y = Some(sigma_y);
        self
    }

    pub fn identify(mut self) -> Self {
        self.trainable = Trainable {
            lambda: true,
            mu: true,
            sigma_y: self.sigma_y.is_some(),
        };
        self
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu)] {
            if !v.is_finite() {
                return Err(MaterialError::NonFinite(name));
            }
        }
        if self.sigma_y.is_some_and(|s| !s.is_finite()) {
            return Err(MaterialError::NonFinite("sigma_y"));
        }
        if self.mu <= 0.0 {
            return Err(MaterialError::NonPositiveShear(self.mu));
        }
        let bulk = self.lambda + 2.0 * self.mu / 3.0;
        if !self.trainable.lambda && !self.trainable.mu && bulk <= 0.0 {
            return Err(MaterialError::NonPositiveBulk(bulk));
        }
        Ok(())
    }

    /// Trainable parameters in canonical order.
    pub fn trainable_params(&self) -> Vec<MaterialParam> {
        let mut out = Vec::new();
        if self.trainable.lambda {
            out.push(MaterialParam::Lambda);
        }
        if self.trainable.mu {
            out.push(MaterialParam::Mu);
        }
        if self.trainable.sigma_y && self.sigma_y.is_some() {
            out.push(MaterialParam::SigmaY);
        }
        out
    }

    pub fn get(&self, p: MaterialParam) -> f64 {
        match p {
            MaterialParam::Lambda => self.lambda,
            MaterialParam::Mu => self.mu,
            MaterialParam::SigmaY => self.sigma_y.unwrap_or(f64::NAN),
        }
    }

    pub fn set(&mut self, p: MaterialParam, v: f64) {
        match p {
            MaterialParam::Lambda => self.lambda = v,
            MaterialParam::Mu => self.mu = v,
            MaterialParam::SigmaY => self.sigma_y = Some(v),
        }
    }

    /// Places the parameters on `tape`. Trainable ones become variables
    /// holding the scaled value `p / scale`; the returned list pairs each
    /// with its variable node.
    pub fn nodes(
        &self,
        tape: &mut Tape,
        scales: &LossScales,
    ) -> (MaterialNodes, Vec<(MaterialParam, NodeId)>) {
        let mut vars = Vec::new();
        let mut place = |tape: &mut Tape, p: MaterialParam, trainable: bool, v: f64| {
            if trainable {
                let s = p.scale(scales);
                let theta = tape.var(v / s);
                vars.push((p, theta));
                scaled(tape, theta, s)
            } else {
                tape.constant(v)
            }
        };
        let lambda = place(tape, MaterialParam::Lambda, self.trainable.lambda, self.lambda);
        let mu = place(tape, MaterialParam::Mu, self.trainable.mu, self.mu);
        let sigma_y = self
            .sigma_y
            .map(|s| place(tape, MaterialParam::SigmaY, self.trainable.sigma_y, s));
        (MaterialNodes { lambda, mu, sigma_y }, vars)
    }
}

/// Closed-form plane-strain field on the unit square with body forces that
/// balance it exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedSolution {
    pub lambda: f64,
    pub mu: f64,
    pub q: f64,
}

/// Displacement and its input derivatives, stresses and their derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactJets {
    /// `(value, d/dx, d/dy)` per field.
    pub ux: [f64; 3],
    pub uy: [f64; 3],
    pub sxx: [f64; 3],
    pub syy: [f64; 3],
    pub sxy: [f64; 3],
}

impl ManufacturedSolution {
    pub fn new(lambda: f64, mu: f64, q: f64) -> Self {
        Self { lambda, mu, q }
    }

    pub fn displacement(&self, x: f64, y: f64) -> (f64, f64) {
        exact_displacement(x, y, self.q)
    }

    /// `[[ux_x, ux_y], [uy_x, uy_y]]`.
    pub fn displacement_gradient(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        let q = self.q;
        [
            [
                -2.0 * PI * (2.0 * PI * x).sin() * (PI * y).sin(),
                PI * (2.0 * PI * x).cos() * (PI * y).cos(),
            ],
            [
                PI * (PI * x).cos() * q * y.powi(4) / 4.0,
                (PI * x).sin() * q * y.powi(3),
            ],
        ]
    }

    /// `(exx, eyy, exy)`.
    pub fn strain(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let g = self.displacement_gradient(x, y);
        (g[0][0], g[1][1], 0.5 * (g[0][1] + g[1][0]))
    }

    pub fn stress(&self, x: f64, y: f64) -> (f64, f64, f64) {
        exact_stress(x, y, self.lambda, self.mu, self.q)
    }

    /// `[[sxx_x, sxx_y], [syy_x, syy_y], [sxy_x, sxy_y]]`.
    pub fn stress_gradient(&self, x: f64, y: f64) -> [[f64; 2]; 3] {
        let (l, m, q) = (self.lambda, self.mu, self.q);
        let (s2x, c2x) = ((2.0 * PI * x).sin(), (2.0 * PI * x).cos());
        let (sx, cx) = ((PI * x).sin(), (PI * x).cos());
        let (sy, cy) = ((PI * y).sin(), (PI * y).cos());
        // second derivatives of the displacement
        let uxx_x = -4.0 * PI * PI * c2x * sy;
        let uxx_y = -2.0 * PI * PI * s2x * cy;
        let uxy_y = -PI * PI * c2x * sy; // d/dy of ux_y
        let uyy_x = PI * cx * q * y.powi(3);
        let uyy_y = 3.0 * sx * q * y * y;
        let uyx_x = -PI * PI * sx * q * y.powi(4) / 4.0; // d/dx of uy_x
        let uyx_y = PI * cx * q * y.powi(3);
        let exy_x = 0.5 * (uxx_y + uyx_x);
        let exy_y = 0.5 * (uxy_y + uyx_y);
        [
            [
                (l + 2.0 * m) * uxx_x + l * uyy_x,
                (l + 2.0 * m) * uxx_y + l * uyy_y,
            ],
            [
                (l + 2.0 * m) * uyy_x + l * uxx_x,
                (l + 2.0 * m) * uyy_y + l * uxx_y,
            ],
            [2.0 * m * exy_x, 2.0 * m * exy_y],
        ]
    }

    pub fn body_force(&self, x: f64, y: f64) -> (f64, f64) {
        exact_body_force(x, y, self.lambda, self.mu, self.q)
    }

    pub fn jets(&self, x: f64, y: f64) -> ExactJets {
        let (ux, uy) = self.displacement(x, y);
        let g = self.displacement_gradient(x, y);
        let (sxx, syy, sxy) = self.stress(x, y);
        let sg = self.stress_gradient(x, y);
        ExactJets {
            ux: [ux, g[0][0], g[0][1]],
            uy: [uy, g[1][0], g[1][1]],
            sxx: [sxx, sg[0][0], sg[0][1]],
            syy: [syy, sg[1][0], sg[1][1]],
            sxy: [sxy, sg[2][0], sg[2][1]],
        }
    }
}

pub fn exact_displacement(x: f64, y: f64, q: f64) -> (f64, f64) {
    (
        (2.0 * PI * x).cos() * (PI * y).sin(),
        (PI * x).sin() * q * y.powi(4) / 4.0,
    )
}

pub fn exact_body_force(x: f64, y: f64, lambda: f64, mu: f64, q: f64) -> (f64, f64) {
    let pi2 = PI * PI;
    let c2x_sy = (2.0 * PI * x).cos() * (PI * y).sin();
    let s2x_cy = (2.0 * PI * x).sin() * (PI * y).cos();
    let cx = (PI * x).cos();
    let sx = (PI * x).sin();
    let fx = lambda * (4.0 * pi2 * c2x_sy - PI * cx * q * y.powi(3))
        + mu * (9.0 * pi2 * c2x_sy - PI * cx * q * y.powi(3));
    let fy = lambda * (-3.0 * sx * q * y * y + 2.0 * pi2 * s2x_cy)
        + mu * (-6.0 * sx * q * y * y + 2.0 * pi2 * s2x_cy + pi2 * sx * q * y.powi(4) / 4.0);
    (fx, fy)
}

/// Plane-strain stresses of the manufactured displacement.
pub fn exact_stress(x: f64, y: f64, lambda: f64, mu: f64, q: f64) -> (f64, f64, f64) {
    let (exx, eyy, exy) = ManufacturedSolution::new(lambda, mu, q).strain(x, y);
    (
        (lambda + 2.0 * mu) * exx + lambda * eyy,
        (lambda + 2.0 * mu) * eyy + lambda * exx,
        2.0 * mu * exy,
    )
}

/// Residuals of one point: five data misfits, two momentum balances
/// `div(sigma) + f*` and three constitutive mismatches.
pub fn point_residuals(
    tape: &mut Tape,
    jets: &PointJets,
    obs: &PointObs,
    material: &MaterialNodes,
    scales: &LossScales,
) -> Result<Vec<(Term, NodeId)>, LossError> {
    let mut out = Vec::with_capacity(10);
    data_residuals(tape, jets, obs, Problem::Elastic.network_fields(), &mut out)?;
    let p = PhysicalJets { jets, scales };

    let sxx_x = p.dx(tape, Field::Sxx)?;
    let sxy_y = p.dy(tape, Field::Sxy)?;
    let sxy_x = p.dx(tape, Field::Sxy)?;
    let syy_y = p.dy(tape, Field::Syy)?;
    let fx = observed(obs, scales, Field::Fx)?;
    let fy = observed(obs, scales, Field::Fy)?;
    let mx = tape.add(sxx_x, sxy_y);
    let mx = tape.add_const(mx, fx);
    let my = tape.add(sxy_x, syy_y);
    let my = tape.add_const(my, fy);
    out.push((Term::MomentumX, unscaled(tape, mx, scales.momentum())));
    out.push((Term::MomentumY, unscaled(tape, my, scales.momentum())));

    let exx = p.dx(tape, Field::Ux)?;
    let eyy = p.dy(tape, Field::Uy)?;
    let ux_y = p.dy(tape, Field::Ux)?;
    let uy_x = p.dx(tape, Field::Uy)?;
    let shear = tape.add(ux_y, uy_x); // 2 exy
    let sxx = p.value(tape, Field::Sxx)?;
    let syy = p.value(tape, Field::Syy)?;
    let sxy = p.value(tape, Field::Sxy)?;

    let (lam, mu) = (material.lambda, material.mu);
    let two_mu = tape.scale(mu, 2.0);
    let l2m = tape.add(lam, two_mu);
    let normal = |tape: &mut Tape, e_main: NodeId, e_other: NodeId, s: NodeId| {
        let a = tape.mul(l2m, e_main);
        let b = tape.mul(lam, e_other);
        let ab = tape.add(a, b);
        tape.sub(ab, s)
    };
    let cxx = normal(tape, exx, eyy, sxx);
    let cyy = normal(tape, eyy, exx, syy);
    // 2 mu exy = mu (ux_y + uy_x)
    let m_shear = tape.mul(mu, shear);
    let cxy = tape.sub(m_shear, sxy);
    for (term, r) in [
        (Term::ConstitutiveXx, cxx),
        (Term::ConstitutiveYy, cyy),
        (Term::ConstitutiveXy, cxy),
    ] {
        out.push((term, unscaled(tape, r, scales.stress)));
    }
    Ok(out)
}

/// Builds the full elastic loss over `rows` of `batch` on `tape`, with the
/// networks expanded into scalar graph nodes. Returns the loss nodes, the
/// network parameter variables (per network, flatten order) and the trainable
/// material variables.
pub fn elastic_loss(
    tape: &mut Tape,
    model: &FieldModel,
    material: &MaterialParams,
    batch: &Dataset,
    rows: &[usize],
    scales: &LossScales,
) -> Result<GraphLoss, LossError> {
    crate::loss::graph_loss(
        tape,
        model,
        material,
        batch,
        rows,
        scales,
        &crate::loss::Physics::Elastic,
    )
}

pub use crate::loss::GraphLoss;

#[cfg(test)]
mod tests {
    use super::*;

    // Frozen values from sympy: f = -div(sigma) of the manufactured field,
    // lambda = 1, mu = 1/2, Q = 4.
    const SYMPY_POINTS: [((f64, f64), [f64; 7]); 3] = [
        (
            (0.5, 0.5),
            [-83.891637409259548260, -5.6915748624659575432, 0.5, 1.0, 0.0, -1.0, 0.0625],
        ),
        (
            (0.25, 0.25),
            [
                -0.20826013772617341783,
                19.889563021276737002,
                -8.8415717024925732738,
                -4.3544945905100478065,
                0.0043387528692952795381,
                0.0,
                0.0027621358640099512672,
            ],
        ),
        (
            (0.3, 0.7),
            [
                -24.773174759464247071,
                -25.107309061276460819,
                -8.5588566741815975374,
                -2.6144713626671569699,
                0.50699473231315413049,
                -0.25,
                0.19424498034942487653,
            ],
        ),
    ];

    #[test]
    fn displacement_examples() {
        for x in [0.0, 0.3, 0.77] {
            assert_eq!(exact_displacement(x, 0.0, 4.0), (0.0, 0.0));
        }
        let (ux, uy) = exact_displacement(0.5, 0.5, 4.0);
        assert!((ux + 1.0).abs() < 1e-15 && (uy - 0.0625).abs() < 1e-15);
        let (ux, uy) = exact_displacement(0.25, 1.0, 4.0);
        assert!(ux.abs() < 1e-15);
        assert!((uy - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn body_force_matches_symbolic_oracle() {
        assert_eq!(exact_body_force(0.0, 0.0, 1.3, 0.2, 4.0), (0.0, 0.0));
        for ((x, y), want) in SYMPY_POINTS {
            let (fx, fy) = exact_body_force(x, y, 1.0, 0.5, 4.0);
            assert!((fx - want[0]).abs() < 1e-10, "fx at {x},{y}");
            assert!((fy - want[1]).abs() < 1e-10, "fy at {x},{y}");
            let (sxx, syy, sxy) = exact_stress(x, y, 1.0, 0.5, 4.0);
            assert!((sxx - want[2]).abs() < 1e-12);
            assert!((syy - want[3]).abs() < 1e-12);
            assert!((sxy - want[4]).abs() < 1e-12);
        }
    }

    #[test]
    fn stress_examples() {
        let mu = 0.7;
        let (a, b, c) = exact_stress(0.0, 0.0, 1.1, mu, 4.0);
        assert_eq!((a, b), (0.0, 0.0));
        assert!((c - mu * PI).abs() < 1e-15);
        assert_eq!(exact_stress(0.4, 0.6, 0.0, 0.0, 4.0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn stress_divergence_balances_body_force_on_grid() {
        let sol = ManufacturedSolution::new(1.0, 0.5, 4.0);
        for j in 0..21 {
            for i in 0..21 {
                let (x, y) = (i as f64 / 20.0, j as f64 / 20.0);
                let g = sol.stress_gradient(x, y);
                let (fx, fy) = sol.body_force(x, y);
                assert!((g[0][0] + g[2][1] + fx).abs() < 1e-9);
                assert!((g[2][0] + g[1][1] + fy).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn material_validation() {
        assert!(MaterialParams::fixed(1.0, 0.5).validate().is_ok());
        assert_eq!(
            MaterialParams::fixed(1.0, 0.0).validate(),
            Err(MaterialError::NonPositiveShear(0.0))
        );
        assert!(matches!(
            MaterialParams::fixed(-2.0, 0.5).validate(),
            Err(MaterialError::NonPositiveBulk(_))
        ));
        // bulk check only applies to fixed parameters
        assert!(MaterialParams::fixed(-2.0, 0.5).identify().validate().is_ok());
    }

    #[test]
    fn trainable_material_nodes_are_scaled_variables() {
        let mut scales = LossScales::identity();
        scales.stress = 8.0;
        let m = MaterialParams::fixed(2.0, 0.5).with_yield(3.0).identify();
        let mut tape = Tape::new();
        let (nodes, vars) = m.nodes(&mut tape, &scales);
        assert_eq!(vars.len(), 3);
        assert_eq!(tape.value(vars[0].1), 0.25);
        assert_eq!(tape.value(nodes.lambda), 2.0);
        assert_eq!(tape.value(nodes.sigma_y.unwrap()), 3.0);
        let fixed = MaterialParams::fixed(2.0, 0.5);
        let (_, vars) = fixed.nodes(&mut tape, &scales);
        assert!(vars.is_empty());
    }

    use crate::field::FieldTable;
    use crate::loss::{FieldJet, ResidualSet};

    fn jets_from(tape: &mut Tape, vals: &[(Field, [f64; 3])]) -> PointJets {
        let mut jets = FieldTable::splat(None);
        for &(f, [v, dx, dy]) in vals {
            jets[f] = Some(FieldJet {
                value: tape.var(v),
                dx: tape.var(dx),
                dy: tape.var(dy),
            });
        }
        jets
    }

    fn exact_point(sol: &ManufacturedSolution, x: f64, y: f64) -> (Vec<(Field, [f64; 3])>, PointObs) {
        let j = sol.jets(x, y);
        let vals = vec![
            (Field::Ux, j.ux),
            (Field::Uy, j.uy),
            (Field::Sxx, j.sxx),
            (Field::Syy, j.syy),
            (Field::Sxy, j.sxy),
        ];
        let mut obs: PointObs = FieldTable::splat(None);
        for (f, v) in &vals {
            obs[*f] = Some(v[0]);
        }
        let (fx, fy) = sol.body_force(x, y);
        obs[Field::Fx] = Some(fx);
        obs[Field::Fy] = Some(fy);
        (vals, obs)
    }

    fn grid_loss(material: MaterialParams, perturb: impl Fn(&mut Vec<(Field, [f64; 3])>)) -> (Tape, crate::loss::LossNodes, Vec<(MaterialParam, NodeId)>) {
        let sol = ManufacturedSolution::new(1.0, 0.5, 4.0);
        let scales = LossScales::identity();
        let mut tape = Tape::new();
        let (mat, vars) = material.nodes(&mut tape, &scales);
        let mut set = ResidualSet::new(Problem::Elastic);
        for j in 0..21 {
            for i in 0..21 {
                let (mut vals, obs) = exact_point(&sol, i as f64 / 20.0, j as f64 / 20.0);
                perturb(&mut vals);
                let jets = jets_from(&mut tape, &vals);
                set.push_point(point_residuals(&mut tape, &jets, &obs, &mat, &scales).unwrap());
            }
        }
        let nodes = set.assemble(&mut tape).unwrap();
        (tape, nodes, vars)
    }

    #[test]
    fn exact_fields_annihilate_every_term() {
        let (tape, nodes, _) = grid_loss(MaterialParams::fixed(1.0, 0.5), |_| {});
        let report = nodes.report(&tape);
        assert_eq!(report.terms.len(), 10);
        for (t, v) in &report.terms {
            assert!(*v >= 0.0 && *v < 1e-12, "{t}: {v}");
        }
        assert!(report.total < 1e-12);
    }

    #[test]
    fn true_parameters_are_stationary() {
        let (mut tape, nodes, vars) = grid_loss(MaterialParams::fixed(1.0, 0.5).identify(), |_| {});
        let ids: Vec<NodeId> = vars.iter().map(|v| v.1).collect();
        let g = tape.parameter_gradient(nodes.total, &ids).unwrap();
        assert_eq!(g.len(), 2);
        assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
        // and not stationary elsewhere
        let (mut tape, nodes, vars) = grid_loss(MaterialParams::fixed(1.2, 0.5).identify(), |_| {});
        let ids: Vec<NodeId> = vars.iter().map(|v| v.1).collect();
        let g = tape.parameter_gradient(nodes.total, &ids).unwrap();
        assert!(g[0].abs() > 1e-3);
    }

    #[test]
    fn zero_networks_see_raw_observations() {
        let sol = ManufacturedSolution::new(1.0, 0.5, 4.0);
        let scales = LossScales::identity();
        let mut tape = Tape::new();
        let (mat, _) = MaterialParams::fixed(1.0, 0.5).nodes(&mut tape, &scales);
        let mut set = ResidualSet::new(Problem::Elastic);
        let pts = [(0.1, 0.2), (0.5, 0.5), (0.9, 0.3)];
        let mut want = FieldTable::splat(0.0);
        for &(x, y) in &pts {
            let (vals, obs) = exact_point(&sol, x, y);
            let zeros: Vec<_> = vals.iter().map(|(f, _)| (*f, [0.0; 3])).collect();
            let jets = jets_from(&mut tape, &zeros);
            set.push_point(point_residuals(&mut tape, &jets, &obs, &mat, &scales).unwrap());
            for f in Field::ALL {
                if let Some(v) = obs[f] {
                    want[f] += v * v / pts.len() as f64;
                }
            }
        }
        let report = set.assemble(&mut tape).unwrap().report(&tape);
        for f in Problem::Elastic.network_fields() {
            let got = report.term(Term::Data(*f)).unwrap();
            assert!((got - want[*f]).abs() < 1e-12 * want[*f].max(1.0));
        }
        assert!((report.term(Term::MomentumX).unwrap() - want[Field::Fx]).abs() < 1e-10);
        assert!((report.term(Term::MomentumY).unwrap() - want[Field::Fy]).abs() < 1e-10);
        assert_eq!(report.term(Term::ConstitutiveXy), Some(0.0));
        let sum: f64 = report.terms.iter().map(|t| t.1).sum();
        assert_eq!(sum, report.total);
    }

    fn single_point(material: MaterialParams, vals: &[(Field, [f64; 3])]) -> Vec<(Term, f64)> {
        let scales = LossScales::identity();
        let mut tape = Tape::new();
        let (mat, _) = material.nodes(&mut tape, &scales);
        let jets = jets_from(&mut tape, vals);
        let mut obs: PointObs = FieldTable::splat(Some(0.25));
        obs[Field::Fx] = Some(-1.5);
        point_residuals(&mut tape, &jets, &obs, &mat, &scales)
            .unwrap()
            .into_iter()
            .map(|(t, n)| (t, tape.value(n)))
            .collect()
    }

    #[test]
    fn momentum_ignores_displacement_offsets() {
        let mut vals = vec![
            (Field::Ux, [0.3, 0.1, -0.2]),
            (Field::Uy, [-0.4, 0.05, 0.7]),
            (Field::Sxx, [1.0, 2.0, 3.0]),
            (Field::Syy, [-1.0, 0.5, 0.25]),
            (Field::Sxy, [0.2, -0.6, 1.1]),
        ];
        let base = single_point(MaterialParams::fixed(1.0, 0.5), &vals);
        vals[0].1[0] += 17.0;
        vals[1].1[0] -= 3.0;
        let moved = single_point(MaterialParams::fixed(1.0, 0.5), &vals);
        for t in [Term::MomentumX, Term::MomentumY] {
            let a = base.iter().find(|r| r.0 == t).unwrap().1;
            let b = moved.iter().find(|r| r.0 == t).unwrap().1;
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn constitutive_residuals_scale_with_moduli() {
        let vals = vec![
            (Field::Ux, [0.3, 0.1, -0.2]),
            (Field::Uy, [-0.4, 0.05, 0.7]),
            (Field::Sxx, [0.0, 2.0, 3.0]),
            (Field::Syy, [0.0, 0.5, 0.25]),
            (Field::Sxy, [0.0, -0.6, 1.1]),
        ];
        let a = single_point(MaterialParams::fixed(1.3, 0.4), &vals);
        let b = single_point(MaterialParams::fixed(2.6, 0.8), &vals);
        for t in [Term::ConstitutiveXx, Term::ConstitutiveYy, Term::ConstitutiveXy] {
            let ra = a.iter().find(|r| r.0 == t).unwrap().1;
            let rb = b.iter().find(|r| r.0 == t).unwrap().1;
            assert!(ra != 0.0);
            assert!((rb - 2.0 * ra).abs() < 1e-15, "{t}");
        }
    }

    #[test]
    fn total_is_zero_only_with_every_term() {
        let (tape, nodes, _) = grid_loss(MaterialParams::fixed(1.0, 0.5), |v| v[4].1[0] += 1e-3);
        let r = nodes.report(&tape);
        assert!(r.total > 0.0);
        assert!(r.term(Term::Data(Field::Sxy)).unwrap() > 0.0);
        assert!(r.term(Term::MomentumX).unwrap() < 1e-12);
    }
}
