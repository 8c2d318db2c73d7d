//! Plane-strain von Mises plasticity without hardening: tensor helpers and
//! the KKT-penalized residuals of the elastoplastic loss.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{NodeId, Tape};
use crate::field::{Field, Problem};
use crate::loss::{
    data_residuals, observed, unscaled, LossError, LossScales, MaterialNodes, PhysicalJets,
    PointJets, PointObs, Term,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlasticityError {
    #[error("shear modulus must be positive, got {0}")]
    NonPositiveShear(f64),
}

/// Symmetric tensor as `(xx, yy, zz, xy)`.
pub type Sym = [f64; 4];

/// Coefficient `c` of the flow rule `e^p = eps_p * c * s / q`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowCoefficient {
    /// 3/2, consistent with the equivalent plastic strain definition.
    #[default]
    ThreeHalves,
    /// 2/3, as the flow rule is sometimes printed.
    TwoThirds,
}

impl FlowCoefficient {
    pub fn value(self) -> f64 {
        match self {
            FlowCoefficient::ThreeHalves => 1.5,
            FlowCoefficient::TwoThirds => 2.0 / 3.0,
        }
    }
}

/// Form of the consistency residual `(eps_bar - sigma_y / 3 mu) - eps_p`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyMode {
    /// Evaluated everywhere, including elastic points where it is negative.
    #[default]
    Literal,
    /// Uses `max(eps_bar - sigma_y / 3 mu, 0)`, so elastic points are not
    /// penalized for having no plastic strain.
    Clipped,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlasticityOptions {
    pub flow: FlowCoefficient,
    pub consistency: ConsistencyMode,
}

/// Flow directions are dropped where `q < Q_GUARD * sigma_y`.
pub const Q_GUARD: f64 = 1e-8;

pub fn deviatoric(t: Sym) -> Sym {
    let p = (t[0] + t[1] + t[2]) / 3.0;
    [t[0] - p, t[1] - p, t[2] - p, t[3]]
}

/// `s : s` with the shear component counted twice.
fn contract(s: Sym) -> f64 {
    s[0] * s[0] + s[1] * s[1] + s[2] * s[2] + 2.0 * s[3] * s[3]
}

pub fn equivalent_stress(s: Sym) -> f64 {
    (1.5 * contract(s)).sqrt()
}

pub fn equivalent_strain(e: Sym) -> f64 {
    (2.0 / 3.0 * contract(e)).sqrt()
}

/// Signed `eps_bar - sigma_y / (3 mu)`.
pub fn plastic_multiplier_formula(eps_bar: f64, sigma_y: f64, mu: f64) -> Result<f64, PlasticityError> {
    if mu <= 0.0 || mu.is_nan() {
        return Err(PlasticityError::NonPositiveShear(mu));
    }
    Ok(eps_bar - sigma_y / (3.0 * mu))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `((1 - sign p) |p|, (1 + sign F) |F|, |p F|)`.
pub fn kkt_penalties(eps_p: f64, f: f64) -> (f64, f64, f64) {
    (
        (1.0 - sign(eps_p)) * eps_p.abs(),
        (1.0 + sign(f)) * f.abs(),
        (eps_p * f).abs(),
    )
}

fn sym_deviatoric(tape: &mut Tape, t: [NodeId; 4]) -> [NodeId; 4] {
    let tr = tape.add(t[0], t[1]);
    let tr = tape.add(tr, t[2]);
    let p = tape.scale(tr, 1.0 / 3.0);
    [tape.sub(t[0], p), tape.sub(t[1], p), tape.sub(t[2], p), t[3]]
}

fn sym_contract(tape: &mut Tape, s: [NodeId; 4]) -> NodeId {
    let sq: Vec<NodeId> = s.iter().map(|&v| tape.square(v)).collect();
    let shear = tape.scale(sq[3], 2.0);
    tape.sum(&[sq[0], sq[1], sq[2], shear]).expect("nonempty")
}

/// Residuals of one point: six data misfits, two momentum balances, four
/// constitutive mismatches, the consistency condition and three KKT terms.
pub fn point_residuals(
    tape: &mut Tape,
    jets: &PointJets,
    obs: &PointObs,
    material: &MaterialNodes,
    scales: &LossScales,
    options: &PlasticityOptions,
) -> Result<Vec<(Term, NodeId)>, LossError> {
    let sigma_y = material.sigma_y.ok_or(LossError::MissingYieldStress)?;
    let mut out = Vec::with_capacity(16);
    data_residuals(tape, jets, obs, Problem::Plastic.network_fields(), &mut out)?;
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

    // strains, with eps_zz = 0
    let exx = p.dx(tape, Field::Ux)?;
    let eyy = p.dy(tape, Field::Uy)?;
    let ux_y = p.dy(tape, Field::Ux)?;
    let uy_x = p.dx(tape, Field::Uy)?;
    let sum = tape.add(ux_y, uy_x);
    let exy = tape.scale(sum, 0.5);
    let ezz = tape.constant(0.0);
    let ekk = tape.add(exx, eyy);
    let e = sym_deviatoric(tape, [exx, eyy, ezz, exy]);

    let sig = [
        p.value(tape, Field::Sxx)?,
        p.value(tape, Field::Syy)?,
        p.value(tape, Field::Szz)?,
        p.value(tape, Field::Sxy)?,
    ];
    let s = sym_deviatoric(tape, sig);

    let ss = sym_contract(tape, s);
    let qq = tape.scale(ss, 1.5);
    let q = tape.sqrt(qq);
    let ee = sym_contract(tape, e);
    let ee = tape.scale(ee, 2.0 / 3.0);
    let eps_bar = tape.sqrt(ee);

    let mu = material.mu;
    let inv_mu = tape.power(mu, -1.0);
    let half_inv_mu = tape.scale(inv_mu, 0.5);
    let mut ep_net = [e[0]; 4];
    for k in 0..4 {
        let t = tape.mul(s[k], half_inv_mu);
        ep_net[k] = tape.sub(e[k], t);
    }
    let pp = sym_contract(tape, ep_net);
    let pp = tape.scale(pp, 2.0 / 3.0);
    let eps_p = tape.sqrt(pp);

    // plastic strain along the flow direction
    let ep = if tape.value(q) < Q_GUARD * tape.value(sigma_y) {
        [tape.constant(0.0); 4]
    } else {
        let inv_q = tape.power(q, -1.0);
        let amp = tape.mul(eps_p, inv_q);
        let amp = tape.scale(amp, options.flow.value());
        [0, 1, 2, 3].map(|k| tape.mul(amp, s[k]))
    };

    let two_mu = tape.scale(mu, 2.0);
    let k_bulk = tape.scale(mu, 2.0 / 3.0);
    let k_bulk = tape.add(material.lambda, k_bulk);
    let vol = tape.mul(k_bulk, ekk);
    let terms = [
        Term::ConstitutiveXx,
        Term::ConstitutiveYy,
        Term::ConstitutiveZz,
        Term::ConstitutiveXy,
    ];
    for (k, term) in terms.into_iter().enumerate() {
        let el = tape.sub(e[k], ep[k]);
        let dev = tape.mul(two_mu, el);
        let r = if k < 3 { tape.add(vol, dev) } else { dev };
        let r = tape.sub(r, sig[k]);
        out.push((term, unscaled(tape, r, scales.stress)));
    }

    let strain = scales.strain();
    let three_mu = tape.scale(mu, 3.0);
    let inv_three_mu = tape.power(three_mu, -1.0);
    let onset = tape.mul(sigma_y, inv_three_mu);
    let mut predicted = tape.sub(eps_bar, onset);
    if options.consistency == ConsistencyMode::Clipped {
        let zero = tape.constant(0.0);
        predicted = tape.max(predicted, zero);
    }
    let gap = tape.sub(predicted, eps_p);
    let gap = tape.abs(gap);
    out.push((Term::Consistency, unscaled(tape, gap, strain)));

    let f = tape.sub(q, sigma_y);
    let sp = tape.sign(eps_p);
    let one_minus = tape.neg(sp);
    let one_minus = tape.add_const(one_minus, 1.0);
    let abs_p = tape.abs(eps_p);
    let pos = tape.mul(one_minus, abs_p);
    out.push((Term::KktPositivity, unscaled(tape, pos, strain)));

    let sf = tape.sign(f);
    let one_plus = tape.add_const(sf, 1.0);
    let abs_f = tape.abs(f);
    let neg = tape.mul(one_plus, abs_f);
    out.push((Term::KktNegativity, unscaled(tape, neg, scales.stress)));

    let pf = tape.mul(eps_p, f);
    let comp = tape.abs(pf);
    out.push((Term::KktComplementarity, unscaled(tape, comp, strain * scales.stress)));
    Ok(out)
}
