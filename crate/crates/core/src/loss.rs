//! Shared plumbing for composite losses: term names, per-point field jets,
//! residual scaling and mean-of-squares assembly.

use std::fmt;

use thiserror::Error;

use crate::autodiff::{NodeId, Tape};
use crate::data::{Dataset, NormalizationRecord};
use crate::elasticity::{MaterialParam, MaterialParams};
use crate::field::{Field, FieldTable, Problem};
use crate::networks::FieldModel;
use crate::plasticity::PlasticityOptions;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("missing observed column `{0}`")]
    MissingObservation(Field),
    #[error("model has no network for field `{0}`")]
    MissingField(Field),
    #[error("yield stress is required for the plasticity loss")]
    MissingYieldStress,
    #[error("{0}")]
    Network(#[from] crate::networks::NetworkError),
    #[error("{0}")]
    Autodiff(#[from] crate::autodiff::AutodiffError),
}

/// One term of a composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Data(Field),
    MomentumX,
    MomentumY,
    ConstitutiveXx,
    ConstitutiveYy,
    ConstitutiveZz,
    ConstitutiveXy,
    Consistency,
    KktPositivity,
    KktNegativity,
    KktComplementarity,
}

impl Term {
    pub fn name(self) -> String {
        match self {
            Term::Data(f) => format!("data_{}", f.name()),
            Term::MomentumX => "momentum_x".into(),
            Term::MomentumY => "momentum_y".into(),
            Term::ConstitutiveXx => "constitutive_xx".into(),
            Term::ConstitutiveYy => "constitutive_yy".into(),
            Term::ConstitutiveZz => "constitutive_zz".into(),
            Term::ConstitutiveXy => "constitutive_xy".into(),
            Term::Consistency => "consistency".into(),
            Term::KktPositivity => "kkt_positivity".into(),
            Term::KktNegativity => "kkt_negativity".into(),
            Term::KktComplementarity => "kkt_complementarity".into(),
        }
    }

    /// Terms of each problem's loss, in reporting order.
    pub fn all(problem: Problem) -> Vec<Term> {
        let mut terms: Vec<Term> = problem.network_fields().iter().map(|&f| Term::Data(f)).collect();
        terms.extend([Term::MomentumX, Term::MomentumY]);
        match problem {
            Problem::Elastic => {
                terms.extend([Term::ConstitutiveXx, Term::ConstitutiveYy, Term::ConstitutiveXy])
            }
            Problem::Plastic => terms.extend([
                Term::ConstitutiveXx,
                Term::ConstitutiveYy,
                Term::ConstitutiveZz,
                Term::ConstitutiveXy,
                Term::Consistency,
                Term::KktPositivity,
                Term::KktNegativity,
                Term::KktComplementarity,
            ]),
        }
        terms
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Value and first input derivatives of one network output at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldJet {
    pub value: NodeId,
    pub dx: NodeId,
    pub dy: NodeId,
}

/// Network jets at one point, by field.
pub type PointJets = FieldTable<Option<FieldJet>>;

/// Observations at one point, by field (normalized units).
pub type PointObs = FieldTable<Option<f64>>;

/// Physical material parameters as graph nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialNodes {
    pub lambda: NodeId,
    pub mu: NodeId,
    pub sigma_y: Option<NodeId>,
}

/// Conversion between network/observation units and physical units, plus
/// the reference magnitudes every residual is divided by. The identity
/// scaling reproduces the raw, unweighted loss exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossScales {
    pub field: FieldTable<f64>,
    pub stress: f64,
    pub displacement: f64,
    pub length: f64,
}

impl Default for LossScales {
    fn default() -> Self {
        Self::identity()
    }
}

impl LossScales {
    pub fn identity() -> Self {
        Self {
            field: FieldTable::splat(1.0),
            stress: 1.0,
            displacement: 1.0,
            length: 1.0,
        }
    }

    pub fn from_record(record: &NormalizationRecord) -> Self {
        let mut field = FieldTable::splat(1.0);
        for f in Field::ALL {
            field[f] = record.scale(f);
        }
        Self {
            field,
            stress: record.stress_scale(),
            displacement: record.displacement_scale(),
            length: record.length,
        }
    }

    pub fn momentum(&self) -> f64 {
        self.stress / self.length
    }

    pub fn strain(&self) -> f64 {
        self.displacement / self.length
    }

    /// Reference magnitude of λ and μ.
    pub fn modulus(&self) -> f64 {
        self.stress / self.strain()
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }
}

/// Multiplies by a constant, skipping the node when the constant is 1.
pub(crate) fn scaled(tape: &mut Tape, node: NodeId, c: f64) -> NodeId {
    if c == 1.0 {
        node
    } else {
        tape.scale(node, c)
    }
}

/// Divides by a constant, skipping the node when the constant is 1.
pub(crate) fn unscaled(tape: &mut Tape, node: NodeId, c: f64) -> NodeId {
    if c == 1.0 {
        node
    } else {
        tape.scale(node, 1.0 / c)
    }
}

/// Physical-unit view of one point's jets.
pub(crate) struct PhysicalJets<'a> {
    pub jets: &'a PointJets,
    pub scales: &'a LossScales,
}

impl PhysicalJets<'_> {
    pub fn jet(&self, f: Field) -> Result<FieldJet, LossError> {
        self.jets[f].ok_or(LossError::MissingField(f))
    }

    pub fn value(&self, tape: &mut Tape, f: Field) -> Result<NodeId, LossError> {
        let j = self.jet(f)?;
        Ok(scaled(tape, j.value, self.scales.field[f]))
    }

    pub fn dx(&self, tape: &mut Tape, f: Field) -> Result<NodeId, LossError> {
        let j = self.jet(f)?;
        Ok(scaled(tape, j.dx, self.scales.field[f]))
    }

    pub fn dy(&self, tape: &mut Tape, f: Field) -> Result<NodeId, LossError> {
        let j = self.jet(f)?;
        Ok(scaled(tape, j.dy, self.scales.field[f]))
    }
}

/// Observed value in physical units.
pub(crate) fn observed(obs: &PointObs, scales: &LossScales, f: Field) -> Result<f64, LossError> {
    obs[f]
        .map(|v| v * scales.field[f])
        .ok_or(LossError::MissingObservation(f))
}

/// Data misfit residuals `n_f - d_f` for `fields`, in normalized units.
pub(crate) fn data_residuals(
    tape: &mut Tape,
    jets: &PointJets,
    obs: &PointObs,
    fields: &[Field],
    out: &mut Vec<(Term, NodeId)>,
) -> Result<(), LossError> {
    for &f in fields {
        let jet = jets[f].ok_or(LossError::MissingField(f))?;
        let d = obs[f].ok_or(LossError::MissingObservation(f))?;
        let r = tape.add_const(jet.value, -d);
        out.push((Term::Data(f), r));
    }
    Ok(())
}

/// Loss terms as graph nodes.
#[derive(Debug, Clone)]
pub struct LossNodes {
    pub terms: Vec<(Term, NodeId)>,
    pub total: NodeId,
}

impl LossNodes {
    pub fn report(&self, tape: &Tape) -> LossReport {
        LossReport {
            terms: self.terms.iter().map(|&(t, n)| (t, tape.value(n))).collect(),
            total: tape.value(self.total),
        }
    }
}

/// Numeric loss breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub terms: Vec<(Term, f64)>,
    pub total: f64,
}

impl LossReport {
    pub fn term(&self, t: Term) -> Option<f64> {
        self.terms.iter().find(|(k, _)| *k == t).map(|(_, v)| *v)
    }
}

/// Collects per-point residuals and reduces them to mean-of-squares terms.
#[derive(Debug, Clone)]
pub struct ResidualSet {
    order: Vec<Term>,
    residuals: Vec<Vec<NodeId>>,
}

impl ResidualSet {
    pub fn new(problem: Problem) -> Self {
        let order = Term::all(problem);
        let residuals = vec![Vec::new(); order.len()];
        Self { order, residuals }
    }

    pub fn terms(&self) -> &[Term] {
        &self.order
    }

    pub fn push_point(&mut self, point: Vec<(Term, NodeId)>) {
        for (term, node) in point {
            let i = self
                .order
                .iter()
                .position(|&t| t == term)
                .expect("residual term belongs to the problem");
            self.residuals[i].push(node);
        }
    }

    pub fn residuals(&self, t: Term) -> &[NodeId] {
        let i = self.order.iter().position(|&k| k == t).expect("known term");
        &self.residuals[i]
    }

    /// `(1/N) sum r^2` per term and their unweighted sum, as graph nodes.
    pub fn assemble(&self, tape: &mut Tape) -> Result<LossNodes, LossError> {
        let mut terms = Vec::with_capacity(self.order.len());
        for (t, rs) in self.order.iter().zip(&self.residuals) {
            if rs.is_empty() {
                return Err(LossError::EmptyBatch);
            }
            let squares: Vec<NodeId> = rs.iter().map(|&r| tape.square(r)).collect();
            let sum = tape.sum(&squares).expect("nonempty");
            let mean = tape.scale(sum, 1.0 / rs.len() as f64);
            terms.push((*t, mean));
        }
        let nodes: Vec<NodeId> = terms.iter().map(|&(_, n)| n).collect();
        let total = tape.sum(&nodes).expect("every loss has terms");
        Ok(LossNodes { terms, total })
    }

    /// Residual values per term.
    pub fn values(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.residuals.iter().map(|rs| rs.iter().map(|&r| tape.value(r)).collect()).collect()
    }

    /// Per-term sums of squared residual values, without building nodes.
    pub fn sum_squares(&self, tape: &Tape) -> Vec<f64> {
        self.residuals
            .iter()
            .map(|rs| rs.iter().map(|&r| tape.value(r) * tape.value(r)).sum())
            .collect()
    }
}

/// Governing equations of a loss, with their options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Physics {
    Elastic,
    Plastic(PlasticityOptions),
}

impl Physics {
    pub fn problem(&self) -> Problem {
        match self {
            Physics::Elastic => Problem::Elastic,
            Physics::Plastic(_) => Problem::Plastic,
        }
    }

    /// Default physics of a problem.
    pub fn for_problem(problem: Problem, options: PlasticityOptions) -> Self {
        match problem {
            Problem::Elastic => Physics::Elastic,
            Problem::Plastic => Physics::Plastic(options),
        }
    }

    pub fn point_residuals(
        &self,
        tape: &mut Tape,
        jets: &PointJets,
        obs: &PointObs,
        material: &MaterialNodes,
        scales: &LossScales,
    ) -> Result<Vec<(Term, NodeId)>, LossError> {
        match self {
            Physics::Elastic => crate::elasticity::point_residuals(tape, jets, obs, material, scales),
            Physics::Plastic(o) => {
                crate::plasticity::point_residuals(tape, jets, obs, material, scales, o)
            }
        }
    }
}

/// A loss built entirely from scalar graph nodes, networks included.
#[derive(Debug, Clone)]
pub struct GraphLoss {
    pub nodes: LossNodes,
    /// Parameter variables per network, in flatten order.
    pub network_params: Vec<Vec<NodeId>>,
    /// Trainable material variables (scaled units).
    pub material_params: Vec<(MaterialParam, NodeId)>,
}

impl GraphLoss {
    /// Every trainable variable: network parameters, then material ones.
    pub fn all_params(&self) -> Vec<NodeId> {
        self.network_params
            .iter()
            .flatten()
            .copied()
            .chain(self.material_params.iter().map(|&(_, n)| n))
            .collect()
    }
}

/// Expands the networks on `tape` at every row in `rows` and assembles the
/// loss of `physics`. Rows with a `mu` input use it as the shear modulus.
pub fn graph_loss(
    tape: &mut Tape,
    model: &FieldModel,
    material: &MaterialParams,
    batch: &Dataset,
    rows: &[usize],
    scales: &LossScales,
    physics: &Physics,
) -> Result<GraphLoss, LossError> {
    if rows.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let network_params: Vec<Vec<NodeId>> =
        model.networks().iter().map(|n| n.register_params(tape)).collect();
    let (mat, material_params) = material.nodes(tape, scales);
    let mut set = ResidualSet::new(physics.problem());
    for &row in rows {
        let inputs: Vec<NodeId> = batch.inputs(row).into_iter().map(|v| tape.var(v)).collect();
        let outputs = model
            .networks()
            .iter()
            .zip(&network_params)
            .map(|(n, p)| n.forward_on_tape(tape, p, &inputs))
            .collect::<Result<Vec<_>, _>>()?;
        let mut jets: PointJets = FieldTable::splat(None);
        for &f in model.fields() {
            let (n, o) = model.slot(f).expect("model field");
            let value = outputs[n][o];
            let d = tape.input_gradient(value, &inputs[..2])?;
            jets[f] = Some(FieldJet {
                value,
                dx: d[0],
                dy: d[1],
            });
        }
        let mut point_mat = mat;
        if let Some(mu) = batch.mu.as_ref().map(|m| m[row]) {
            point_mat.mu = tape.constant(mu);
        }
        let obs = batch.observations(row);
        set.push_point(physics.point_residuals(tape, &jets, &obs, &point_mat, scales)?);
    }
    Ok(GraphLoss {
        nodes: set.assemble(tape)?,
        network_params,
        material_params,
    })
}
