//! Plasticity loss on homogeneous states from a 0-D return-mapping oracle.

mod support;

use elastinet::autodiff::Tape;
use elastinet::elasticity::MaterialParams;
use elastinet::field::{Field, Problem};
use elastinet::loss::{graph_loss, LossReport, Physics, Term};
use elastinet::plasticity::{ConsistencyMode, FlowCoefficient, PlasticityOptions};
use elastinet::training::prepare_dataset;
use proptest::prelude::*;
use support::*;

// Steel-like constants in Pa.
const LAMBDA: f64 = 19.44e9;
const MU: f64 = 29.17e9;
const SIGMA_Y: f64 = 243.0e6;
const DIRECTION: [f64; 3] = [3.0, -1.0, 0.5];

fn evaluate(state: &OracleState, material: MaterialParams, options: PlasticityOptions) -> Evaluated {
    homogeneous_loss(state, (LAMBDA, MU, SIGMA_Y), material, options)
}

fn fixed() -> MaterialParams {
    MaterialParams::fixed(LAMBDA, MU).with_yield(SIGMA_Y)
}

fn rms(r: &LossReport, t: Term) -> f64 {
    r.term(t).unwrap().sqrt()
}

const CONSTITUTIVE: [Term; 4] = [
    Term::ConstitutiveXx,
    Term::ConstitutiveYy,
    Term::ConstitutiveZz,
    Term::ConstitutiveXy,
];

fn state(factor: f64) -> OracleState {
    let [exx, eyy, exy] = strain_at_level(DIRECTION, factor, MU, SIGMA_Y);
    return_mapping(exx, eyy, exy, LAMBDA, MU, SIGMA_Y)
}

#[test]
fn elastic_state_below_yield() {
    let s = state(0.6);
    assert!(!s.plastic && s.q < SIGMA_Y);
    let e = evaluate(&s, fixed(), PlasticityOptions::default());
    let r = &e.report;
    for t in CONSTITUTIVE.into_iter().chain([Term::MomentumX, Term::MomentumY]) {
        assert!(rms(r, t) < 1e-10, "{t}: {}", rms(r, t));
    }
    for f in Problem::Plastic.network_fields() {
        assert!(rms(r, Term::Data(*f)) < 1e-14);
    }
    assert_eq!(r.term(Term::KktNegativity), Some(0.0));
    assert!(rms(r, Term::KktPositivity) < 1e-12);
    assert!(rms(r, Term::KktComplementarity) < 1e-10);
    // The literal consistency term sees the negative multiplier of an
    // elastic point; the clipped variant does not.
    assert!(r.term(Term::Consistency).unwrap() > 1e-3);
    let clipped = PlasticityOptions {
        consistency: ConsistencyMode::Clipped,
        ..Default::default()
    };
    let c = evaluate(&s, fixed(), clipped);
    assert!(rms(&c.report, Term::Consistency) < 1e-10);
}

#[test]
fn state_at_yield() {
    let s = state(1.0);
    assert!((s.q - SIGMA_Y).abs() < 1e-6 * SIGMA_Y);
    assert!(s.eps_p.abs() < 1e-12);
    let e = evaluate(&s, fixed(), PlasticityOptions::default());
    let r = &e.report;
    for t in CONSTITUTIVE {
        assert!(rms(r, t) < 1e-10, "{t}: {}", rms(r, t));
    }
    for t in [Term::KktNegativity, Term::KktPositivity, Term::KktComplementarity] {
        assert!(rms(r, t) < 1e-9, "{t}: {}", rms(r, t));
    }
}

#[test]
fn plastic_state_beyond_yield() {
    let s = state(2.5);
    assert!(s.plastic && s.eps_p > 0.0);
    let e = evaluate(&s, fixed(), PlasticityOptions::default());
    let r = &e.report;
    for t in CONSTITUTIVE {
        assert!(rms(r, t) < 1e-8, "{t}: {}", rms(r, t));
    }
    assert!(rms(r, Term::KktNegativity) < 1e-8);
    assert!(rms(r, Term::KktComplementarity) < 1e-10);
    assert!(rms(r, Term::Consistency) < 1e-8);
    assert_eq!(r.term(Term::KktPositivity), Some(0.0));
    assert!(r.total < 1e-16);
}

#[test]
fn printed_flow_coefficient_is_inconsistent_with_the_oracle() {
    let s = state(2.5);
    let options = PlasticityOptions {
        flow: FlowCoefficient::TwoThirds,
        ..Default::default()
    };
    let e = evaluate(&s, fixed(), options);
    let worst = CONSTITUTIVE.into_iter().map(|t| rms(&e.report, t)).fold(0.0, f64::max);
    assert!(worst > 1e-3, "{worst}");
}

#[test]
fn yield_stress_is_stationary_at_the_truth() {
    let s = state(2.5);
    let mut m = fixed();
    m.trainable.sigma_y = true;
    let at = evaluate(&s, m, PlasticityOptions::default()).dsigma.unwrap();
    assert!(at.abs() < 1e-6, "{at}");
    for f in [0.9, 1.1] {
        let mut off = m;
        off.sigma_y = Some(SIGMA_Y * f);
        let g = evaluate(&s, off, PlasticityOptions::default()).dsigma.unwrap();
        assert!(g.abs() > 1e-3, "factor {f}: {g}");
    }
}

#[test]
fn zero_networks_see_raw_observations() {
    let s = state(2.5);
    let fields = homogeneous_fields(&s);
    let raw = plastic_dataset(&fields, &grid_points(3), LAMBDA, MU, SIGMA_Y);
    let (data, scales) = prepare_dataset(&raw, None, true).unwrap();
    let zeros: Vec<(Field, Affine)> = fields.iter().map(|(f, _)| (*f, Affine::constant(0.0))).collect();
    let model = affine_model(&zeros);
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut tape = Tape::new();
    let physics = Physics::Plastic(PlasticityOptions::default());
    let g = graph_loss(&mut tape, &model, &fixed(), &data, &rows, &scales, &physics).unwrap();
    let r = g.nodes.report(&tape);
    for f in Problem::Plastic.network_fields() {
        let col = data.column(*f).unwrap();
        let want = col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64;
        let got = r.term(Term::Data(*f)).unwrap();
        assert!((got - want).abs() <= 1e-15 * want.max(1.0), "{f}: {got} vs {want}");
    }
}

proptest! {
    #[test]
    fn oracle_invariants(
        exx in -0.02f64..0.02,
        eyy in -0.02f64..0.02,
        exy in -0.02f64..0.02,
    ) {
        let s = return_mapping(exx, eyy, exy, LAMBDA, MU, SIGMA_Y);
        let ep = s.plastic_strain;
        prop_assert!((ep[0] + ep[1] + ep[2]).abs() < 1e-12);
        let vol = exx + eyy;
        let e = [exx - vol / 3.0, eyy - vol / 3.0, -vol / 3.0, exy];
        let eps_bar = (2.0 / 3.0 * (e[0] * e[0] + e[1] * e[1] + e[2] * e[2] + 2.0 * e[3] * e[3])).sqrt();
        if s.plastic {
            prop_assert!((s.eps_p - (eps_bar - SIGMA_Y / (3.0 * MU))).abs() < 1e-10);
            let norm = (2.0 / 3.0 * (ep[0] * ep[0] + ep[1] * ep[1] + ep[2] * ep[2] + 2.0 * ep[3] * ep[3])).sqrt();
            prop_assert!((norm - s.eps_p).abs() < 1e-12);
        } else {
            prop_assert!(s.eps_p == 0.0 && s.q <= SIGMA_Y);
        }
    }
}
