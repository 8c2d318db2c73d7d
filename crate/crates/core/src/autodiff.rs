//! Scalar expression-graph engine with nested reverse-mode differentiation.
//!
//! Nodes are appended to a [`Tape`] in creation order, which is always a
//! topological order. Every node caches its value, computed eagerly when the
//! node is created and refreshed by [`Tape::evaluate`].
//!
//! [`Tape::input_gradient`] differentiates an output symbolically: the
//! derivative nodes are appended to the same tape, so the result can itself be
//! differentiated by a numeric reverse sweep ([`Tape::backward`]). Losses
//! built from input derivatives of a network therefore get exact parameter
//! gradients from a single backward pass.
//!
//! Subgradient conventions at non-smooth points:
//! `sign(0) = 0`, `d|x|/dx (0) = 0`, `relu'(0) = 0`, `sqrt'(0) = 0`, and
//! `max(a, b)` differentiates through `b` on ties.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("variable `{0}` is not bound")]
    UnboundVariable(String),
    #[error("non-finite value {value} at node {node}")]
    NonFinite { node: usize, value: f64 },
    #[error("node {0} is not a variable")]
    NotAVariable(usize),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("node {node} does not belong to this tape (len {len})")]
    ForeignNode { node: usize, len: usize },
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Constant,
    Variable,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    /// Constant real exponent.
    Power(NodeId, f64),
    Sqrt(NodeId),
    Sign(NodeId),
    Abs(NodeId),
    Max(NodeId, NodeId),
}

impl Op {
    fn operands(&self) -> (Option<NodeId>, Option<NodeId>) {
        match *self {
            Op::Constant | Op::Variable => (None, None),
            Op::Add(a, b) | Op::Mul(a, b) | Op::Max(a, b) => (Some(a), Some(b)),
            Op::Tanh(a) | Op::Relu(a) | Op::Power(a, _) | Op::Sqrt(a) | Op::Sign(a) | Op::Abs(a) => {
                (Some(a), None)
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    value: f64,
}

/// Variable bindings by name.
pub type Bindings = HashMap<String, f64>;

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn apply(op: Op, nodes: &[Node]) -> f64 {
    let v = |id: NodeId| nodes[id.index()].value;
    match op {
        Op::Constant | Op::Variable => unreachable!("leaf values are stored, not computed"),
        Op::Add(a, b) => v(a) + v(b),
        Op::Mul(a, b) => v(a) * v(b),
        Op::Tanh(a) => v(a).tanh(),
        Op::Relu(a) => {
            let x = v(a);
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Op::Power(a, p) => powf(v(a), p),
        Op::Sqrt(a) => v(a).sqrt(),
        Op::Sign(a) => sign(v(a)),
        Op::Abs(a) => v(a).abs(),
        Op::Max(a, b) => {
            let (x, y) = (v(a), v(b));
            if x > y {
                x
            } else {
                y
            }
        }
    }
}

fn powf(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else if p == 1.0 {
        x
    } else if p == -1.0 {
        1.0 / x
    } else if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

/// Append-only expression graph.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    names: HashMap<String, NodeId>,
    var_names: HashMap<NodeId, String>,
    adjoints: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(n),
            ..Self::default()
        }
    }

    /// Drops every node but keeps the allocations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.names.clear();
        self.var_names.clear();
        self.adjoints.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> f64 {
        self.nodes[id.index()].value
    }

    pub fn op(&self, id: NodeId) -> Op {
        self.nodes[id.index()].op
    }

    fn push(&mut self, op: Op, value: f64) -> NodeId {
        let id = NodeId(u32::try_from(self.nodes.len()).expect("tape exceeds u32 nodes"));
        self.nodes.push(Node { op, value });
        id
    }

    fn push_op(&mut self, op: Op) -> NodeId {
        let value = apply(op, &self.nodes);
        self.push(op, value)
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.push(Op::Constant, value)
    }

    /// Anonymous variable; it can be rebound with [`Tape::set_value`].
    pub fn var(&mut self, value: f64) -> NodeId {
        self.push(Op::Variable, value)
    }

    /// Named variable, addressable through [`Bindings`]. Re-registering a
    /// name returns the existing node with its value updated.
    pub fn named_var(&mut self, name: &str, value: f64) -> NodeId {
        if let Some(&id) = self.names.get(name) {
            self.nodes[id.index()].value = value;
            return id;
        }
        let id = self.var(value);
        self.names.insert(name.to_string(), id);
        self.var_names.insert(id, name.to_string());
        id
    }

    pub fn lookup(&self, name: &str) -> Result<NodeId, AutodiffError> {
        self.names
            .get(name)
            .copied()
            .ok_or_else(|| AutodiffError::UnknownVariable(name.to_string()))
    }

    pub fn is_variable(&self, id: NodeId) -> bool {
        matches!(self.op(id), Op::Variable)
    }

    /// Overwrites the value of a variable without re-evaluating dependents.
    pub fn set_value(&mut self, id: NodeId, value: f64) -> Result<(), AutodiffError> {
        if !self.is_variable(id) {
            return Err(AutodiffError::NotAVariable(id.index()));
        }
        self.nodes[id.index()].value = value;
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push_op(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push_op(Op::Mul(a, b))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push_op(Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push_op(Op::Relu(a))
    }

    pub fn power(&mut self, a: NodeId, p: f64) -> NodeId {
        self.push_op(Op::Power(a, p))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.push_op(Op::Sqrt(a))
    }

    pub fn sign(&mut self, a: NodeId) -> NodeId {
        self.push_op(Op::Sign(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.push_op(Op::Abs(a))
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push_op(Op::Max(a, b))
    }

    // Composites expressed through the primitive op kinds.

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let k = self.constant(c);
        self.mul(k, a)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let k = self.constant(c);
        self.add(a, k)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.power(a, 2.0)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let inv = self.power(b, -1.0);
        self.mul(a, inv)
    }

    /// Left-to-right sum; `None` for an empty slice.
    pub fn sum(&mut self, items: &[NodeId]) -> Option<NodeId> {
        let (&first, rest) = items.split_first()?;
        Some(rest.iter().fold(first, |acc, &x| self.add(acc, x)))
    }

    fn check(&self, id: NodeId) -> Result<(), AutodiffError> {
        if id.index() >= self.nodes.len() {
            return Err(AutodiffError::ForeignNode {
                node: id.index(),
                len: self.nodes.len(),
            });
        }
        Ok(())
    }

    fn reachable(&self, roots: &[NodeId]) -> Vec<bool> {
        let top = roots.iter().map(|r| r.index() + 1).max().unwrap_or(0);
        let mut mark = vec![false; top];
        for r in roots {
            mark[r.index()] = true;
        }
        for i in (0..top).rev() {
            if !mark[i] {
                continue;
            }
            let (a, b) = self.nodes[i].op.operands();
            for o in [a, b].into_iter().flatten() {
                mark[o.index()] = true;
            }
        }
        mark
    }

    /// Rebinds the named variables and recomputes every node feeding `outputs`.
    /// Every named variable reachable from `outputs` must be bound; anonymous
    /// variables keep their current values.
    ///
    /// Branches taken at construction time (derivative indicators evaluated
    /// from values, e.g. at `sqrt(0)`) are structural and are not revisited.
    pub fn evaluate(
        &mut self,
        bindings: &Bindings,
        outputs: &[NodeId],
    ) -> Result<Vec<f64>, AutodiffError> {
        for &o in outputs {
            self.check(o)?;
        }
        let mark = self.reachable(outputs);
        for (i, &needed) in mark.iter().enumerate() {
            if !needed {
                continue;
            }
            let op = self.nodes[i].op;
            let value = match op {
                Op::Constant => self.nodes[i].value,
                Op::Variable => match self.var_names.get(&NodeId(i as u32)) {
                    Some(name) => *bindings
                        .get(name)
                        .ok_or_else(|| AutodiffError::UnboundVariable(name.clone()))?,
                    None => self.nodes[i].value,
                },
                _ => apply(op, &self.nodes),
            };
            if !value.is_finite() {
                return Err(AutodiffError::NonFinite { node: i, value });
            }
            self.nodes[i].value = value;
        }
        Ok(outputs.iter().map(|&o| self.value(o)).collect())
    }

    /// Symbolic derivatives of `output` with respect to each of `wrt`,
    /// appended to the tape as new nodes. A `wrt` entry that `output` does not
    /// depend on yields a constant zero node.
    pub fn input_gradient(
        &mut self,
        output: NodeId,
        wrt: &[NodeId],
    ) -> Result<Vec<NodeId>, AutodiffError> {
        self.check(output)?;
        for &w in wrt {
            self.check(w)?;
            if !self.is_variable(w) {
                return Err(AutodiffError::NotAVariable(w.index()));
            }
        }
        let top = output.index() + 1;
        // Only nodes that depend on a `wrt` variable need adjoints.
        let mut depends = vec![false; top];
        for &w in wrt {
            if w.index() < top {
                depends[w.index()] = true;
            }
        }
        for i in 0..top {
            if depends[i] {
                continue;
            }
            let (a, b) = self.nodes[i].op.operands();
            depends[i] = a.is_some_and(|a| depends[a.index()])
                || b.is_some_and(|b| depends[b.index()]);
        }

        let mut adj: Vec<Option<NodeId>> = vec![None; top];
        if depends[output.index()] {
            adj[output.index()] = Some(self.constant(1.0));
        }
        for i in (0..top).rev() {
            let Some(g) = adj[i] else { continue };
            let id = NodeId(i as u32);
            match self.nodes[i].op {
                Op::Constant | Op::Variable => {}
                Op::Add(a, b) => {
                    self.accumulate(&mut adj, &depends, a, g);
                    self.accumulate(&mut adj, &depends, b, g);
                }
                Op::Mul(a, b) => {
                    if depends[a.index()] {
                        let t = self.mul(g, b);
                        self.accumulate(&mut adj, &depends, a, t);
                    }
                    if depends[b.index()] {
                        let t = self.mul(g, a);
                        self.accumulate(&mut adj, &depends, b, t);
                    }
                }
                Op::Tanh(a) => {
                    // 1 - tanh^2, reusing this node's value
                    let t2 = self.mul(id, id);
                    let nt2 = self.neg(t2);
                    let d = self.add_const(nt2, 1.0);
                    let t = self.mul(g, d);
                    self.accumulate(&mut adj, &depends, a, t);
                }
                Op::Relu(a) => {
                    let s = self.sign(a);
                    let step = self.relu(s);
                    let t = self.mul(g, step);
                    self.accumulate(&mut adj, &depends, a, t);
                }
                Op::Power(a, p) => {
                    let t = if p == 1.0 {
                        g
                    } else {
                        let pm1 = if p == 2.0 { a } else { self.power(a, p - 1.0) };
                        let d = self.scale(pm1, p);
                        self.mul(g, d)
                    };
                    self.accumulate(&mut adj, &depends, a, t);
                }
                Op::Sqrt(a) => {
                    if self.nodes[i].value != 0.0 {
                        let inv = self.power(id, -1.0);
                        let d = self.scale(inv, 0.5);
                        let t = self.mul(g, d);
                        self.accumulate(&mut adj, &depends, a, t);
                    }
                }
                Op::Sign(_) => {}
                Op::Abs(a) => {
                    let s = self.sign(a);
                    let t = self.mul(g, s);
                    self.accumulate(&mut adj, &depends, a, t);
                }
                Op::Max(a, b) => {
                    // indicator(a > b) = relu(sign(a - b))
                    let diff = self.sub(a, b);
                    let s = self.sign(diff);
                    let ia = self.relu(s);
                    if depends[a.index()] {
                        let t = self.mul(g, ia);
                        self.accumulate(&mut adj, &depends, a, t);
                    }
                    if depends[b.index()] {
                        let nia = self.neg(ia);
                        let ib = self.add_const(nia, 1.0);
                        let t = self.mul(g, ib);
                        self.accumulate(&mut adj, &depends, b, t);
                    }
                }
            }
        }
        Ok(wrt
            .iter()
            .map(|&w| match adj.get(w.index()).copied().flatten() {
                Some(n) => n,
                None => self.constant(0.0),
            })
            .collect())
    }

    /// Single-variable form of [`Tape::input_gradient`].
    pub fn input_derivative(
        &mut self,
        output: NodeId,
        wrt: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        Ok(self.input_gradient(output, &[wrt])?[0])
    }

    fn accumulate(&mut self, adj: &mut [Option<NodeId>], depends: &[bool], target: NodeId, g: NodeId) {
        let t = target.index();
        if !depends[t] {
            return;
        }
        adj[t] = Some(match adj[t] {
            Some(prev) => self.add(prev, g),
            None => g,
        });
    }

    /// Numeric reverse sweep seeded at `output`. Afterwards
    /// [`Tape::adjoint`] reports d(output)/d(node) for every node.
    pub fn backward(&mut self, output: NodeId) -> Result<(), AutodiffError> {
        self.check(output)?;
        let top = output.index() + 1;
        self.adjoints.clear();
        self.adjoints.resize(self.nodes.len(), 0.0);
        self.adjoints[output.index()] = 1.0;
        for i in (0..top).rev() {
            let g = self.adjoints[i];
            if g == 0.0 {
                continue;
            }
            if !g.is_finite() {
                return Err(AutodiffError::NonFinite { node: i, value: g });
            }
            let node = self.nodes[i];
            let val = |id: NodeId| self.nodes[id.index()].value;
            match node.op {
                Op::Constant | Op::Variable => {}
                Op::Add(a, b) => {
                    self.adjoints[a.index()] += g;
                    self.adjoints[b.index()] += g;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(a), val(b));
                    self.adjoints[a.index()] += g * vb;
                    self.adjoints[b.index()] += g * va;
                }
                Op::Tanh(a) => {
                    let t = node.value;
                    self.adjoints[a.index()] += g * (1.0 - t * t);
                }
                Op::Relu(a) => {
                    if val(a) > 0.0 {
                        self.adjoints[a.index()] += g;
                    }
                }
                Op::Power(a, p) => {
                    let d = if p == 1.0 {
                        1.0
                    } else if p == 2.0 {
                        2.0 * val(a)
                    } else {
                        p * powf(val(a), p - 1.0)
                    };
                    self.adjoints[a.index()] += g * d;
                }
                Op::Sqrt(a) => {
                    if node.value != 0.0 {
                        self.adjoints[a.index()] += g * 0.5 / node.value;
                    }
                }
                Op::Sign(_) => {}
                Op::Abs(a) => {
                    self.adjoints[a.index()] += g * sign(val(a));
                }
                Op::Max(a, b) => {
                    if val(a) > val(b) {
                        self.adjoints[a.index()] += g;
                    } else {
                        self.adjoints[b.index()] += g;
                    }
                }
            }
        }
        Ok(())
    }

    /// Adjoint from the most recent [`Tape::backward`]; zero for nodes the
    /// seed does not depend on.
    pub fn adjoint(&self, id: NodeId) -> f64 {
        self.adjoints.get(id.index()).copied().unwrap_or(0.0)
    }

    /// Gradient of a scalar `loss` with respect to each of `params`.
    pub fn parameter_gradient(
        &mut self,
        loss: NodeId,
        params: &[NodeId],
    ) -> Result<Vec<f64>, AutodiffError> {
        for &p in params {
            self.check(p)?;
            if !self.is_variable(p) {
                return Err(AutodiffError::NotAVariable(p.index()));
            }
        }
        self.backward(loss)?;
        Ok(params.iter().map(|&p| self.adjoint(p)).collect())
    }

    /// Gradient keyed by variable name, for every named variable.
    pub fn named_gradient(&mut self, loss: NodeId) -> Result<HashMap<String, f64>, AutodiffError> {
        self.backward(loss)?;
        Ok(self
            .names
            .iter()
            .map(|(name, &id)| (name.clone(), self.adjoint(id)))
            .collect())
    }
}
