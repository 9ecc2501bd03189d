//! Recovery of the deformation components from the local Hölder constants
//! and variance, by integrating log-derivatives from an anchor point.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{interior_margin, linspace, Domain, FieldSpec, Point, SurfaceDataset};
use crate::par::Exec;
use crate::regularity::{estimate_batch, RegParams, RegularityEstimate};

pub const DEFAULT_NODES: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformationAnchor {
    pub t0: f64,
    pub s0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl DeformationAnchor {
    pub fn validate(&self, domain: &Domain) -> Result<()> {
        if !domain.contains([self.t0, self.s0]) {
            return Err(Error::Config("anchor must lie inside the domain".into()));
        }
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return Err(Error::Config("anchor lambdas must be positive".into()));
        }
        Ok(())
    }

    /// Anchor taken from a known deformation.
    pub fn from_truth(spec: &FieldSpec, at: Point) -> Self {
        let a = spec.deformation.apply(at);
        DeformationAnchor { t0: at[0], s0: at[1], lambda1: a[0], lambda2: a[1] }
    }
}

/// What the integrands need at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeQuantities {
    /// Exponent of the first component (the smaller one).
    pub h_first: f64,
    pub h_second: f64,
    /// Constants attached to `h_first`, per axis.
    pub l_first: [f64; 2],
    pub l_second: [f64; 2],
    pub v: f64,
}

impl From<&RegularityEstimate> for NodeQuantities {
    fn from(e: &RegularityEstimate) -> Self {
        NodeQuantities { h_first: e.h_low, h_second: e.h_high, l_first: e.l1, l_second: e.l2, v: e.v_hat }
    }
}

/// Source of node quantities: estimates, tabulated estimates or a known truth.
pub trait NodeField: Sync {
    /// Where the node is actually evaluated.
    fn project(&self, t: Point) -> Result<Point> {
        Ok(t)
    }
    fn at(&self, t: Point) -> Result<NodeQuantities>;
}

/// Exact quantities of a simulated field.
pub struct TruthField<'a>(pub &'a FieldSpec);

impl NodeField for TruthField<'_> {
    fn at(&self, t: Point) -> Result<NodeQuantities> {
        let r = self.0.true_regularity(t);
        Ok(NodeQuantities { h_first: r.h[0], h_second: r.h[1], l_first: r.l1, l_second: r.l2, v: r.v })
    }
}

/// Quantities given by a closure.
pub struct FnField<F>(pub F);

impl<F: Fn(Point) -> NodeQuantities + Sync> NodeField for FnField<F> {
    fn at(&self, t: Point) -> Result<NodeQuantities> {
        Ok((self.0)(t))
    }
}

/// Nodes are moved inward onto the region where the estimator stencil fits.
pub fn project_inward(domain: &Domain, delta: f64, t: Point) -> Result<Point> {
    let mut p = t;
    for (k, v) in p.iter_mut().enumerate() {
        let lo = domain.lower(k) + 2.0 * delta;
        let hi = domain.upper(k) - 2.0 * delta;
        if lo > hi {
            return Err(Error::BoundaryViolation { t1: t[0], t2: t[1], margin: 2.0 * delta });
        }
        *v = v.clamp(lo, hi);
    }
    Ok(p)
}

fn key(p: Point) -> (i64, i64) {
    ((p[0] * 1e10).round() as i64, (p[1] * 1e10).round() as i64)
}

/// Regularity estimates computed once at a fixed node set.
pub struct TabulatedField {
    domain: Domain,
    delta: f64,
    table: HashMap<(i64, i64), NodeQuantities>,
}

impl TabulatedField {
    pub fn build(dataset: &SurfaceDataset, nodes: &[Point], params: &RegParams, exec: Exec) -> Result<Self> {
        let mut uniq: Vec<Point> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for &n in nodes {
            let p = project_inward(&dataset.domain, params.delta, n)?;
            if seen.insert(key(p)) {
                uniq.push(p);
            }
        }
        let est = estimate_batch(dataset, &uniq, params, exec)?;
        let table = uniq.iter().zip(&est).map(|(p, e)| (key(*p), NodeQuantities::from(e))).collect();
        Ok(TabulatedField { domain: dataset.domain, delta: params.delta, table })
    }
}

impl NodeField for TabulatedField {
    fn project(&self, t: Point) -> Result<Point> {
        project_inward(&self.domain, self.delta, t)
    }

    fn at(&self, t: Point) -> Result<NodeQuantities> {
        self.table
            .get(&key(t))
            .copied()
            .ok_or_else(|| Error::Config(format!("node ({}, {}) was not tabulated", t[0], t[1])))
    }
}

/// Estimates computed on demand from a dataset.
pub struct DataField<'a> {
    pub dataset: &'a SurfaceDataset,
    pub params: RegParams,
}

impl NodeField for DataField<'_> {
    fn project(&self, t: Point) -> Result<Point> {
        project_inward(&self.dataset.domain, self.params.delta, t)
    }

    fn at(&self, t: Point) -> Result<NodeQuantities> {
        let e = estimate_batch(self.dataset, &[t], &self.params, Exec::Sequential)?;
        Ok(NodeQuantities::from(&e[0]))
    }
}

/// `(l/v)^{1/(2h)}`, zero when `l = 0`.
pub fn f_ratio(l_hat: f64, v_hat: f64, h_hat: f64) -> Result<f64> {
    if !(v_hat > 0.0) {
        return Err(Error::Domain("f_ratio needs v > 0".into()));
    }
    if !(h_hat > 0.0) {
        return Err(Error::Domain("f_ratio needs h > 0".into()));
    }
    if l_hat == 0.0 {
        return Ok(0.0);
    }
    Ok((l_hat / v_hat).powf(1.0 / (2.0 * h_hat)))
}

/// Composite trapezoid rule on equispaced values.
pub fn trapezoid_integral(values: &[f64], step: f64) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::TooFewNodes(values.len()));
    }
    if !(step > 0.0) {
        return Err(Error::Domain("trapezoid step must be positive".into()));
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    Ok(step * (0.5 * (values[0] + values[values.len() - 1]) + inner))
}

/// Oriented integral from `a` to `b` of equispaced samples.
fn signed_integral(values: &[f64], a: f64, b: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let step = (b - a).abs() / (values.len() - 1) as f64;
    let i = trapezoid_integral(values, step)?;
    Ok(if b > a { i } else { -i })
}

/// How many quadrature nodes each integral gets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeRule {
    Fixed(usize),
    /// Enough nodes that consecutive nodes are `step` apart (for paths whose
    /// length is a multiple of `step`, nodes fall on a shared lattice).
    Step(f64),
}

impl NodeRule {
    fn count(&self, len: f64) -> Result<usize> {
        let n = match *self {
            NodeRule::Fixed(n) => n,
            NodeRule::Step(h) => ((len.abs() / h).round() as usize + 1).max(2),
        };
        if n < 2 {
            return Err(Error::TooFewNodes(n));
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentEstimate {
    pub t: Point,
    /// 1 or 2.
    pub component: u8,
    pub value: f64,
    pub quadrature_nodes: usize,
    /// Integrand along `[t₀, t₁] × {t₂}`.
    pub f_values: Vec<f64>,
    /// Integrand along `{t₀} × [s₀, t₂]`.
    pub g_values: Vec<f64>,
    /// Nodes that were moved inward to satisfy the margin rule.
    pub projected_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationEstimate {
    pub t: Point,
    pub a1_hat: f64,
    pub a2_hat: f64,
    pub quadrature_nodes: usize,
    pub projected_nodes: usize,
}

struct Paths {
    f_nodes: Vec<Point>,
    g_nodes: Vec<Point>,
}

fn paths(t: Point, anchor: &DeformationAnchor, rule: NodeRule) -> Result<Paths> {
    let nf = rule.count(t[0] - anchor.t0)?;
    let ng = rule.count(t[1] - anchor.s0)?;
    Ok(Paths {
        f_nodes: linspace(anchor.t0, t[0], nf).into_iter().map(|s| [s, t[1]]).collect(),
        g_nodes: linspace(anchor.s0, t[1], ng).into_iter().map(|s| [anchor.t0, s]).collect(),
    })
}

/// Every node a target would touch, for tabulation.
pub fn quadrature_nodes(targets: &[Point], anchor: &DeformationAnchor, rule: NodeRule) -> Result<Vec<Point>> {
    let mut out = Vec::new();
    for &t in targets {
        let p = paths(t, anchor, rule)?;
        out.extend(p.f_nodes);
        out.extend(p.g_nodes);
    }
    Ok(out)
}

/// `Â_k(t)` for `component ∈ {1, 2}` from any node source.
pub fn component_with(
    field: &dyn NodeField,
    t: Point,
    anchor: &DeformationAnchor,
    component: u8,
    rule: NodeRule,
) -> Result<ComponentEstimate> {
    let p = paths(t, anchor, rule)?;
    let lambda = if component == 1 { anchor.lambda1 } else { anchor.lambda2 };
    let mut projected = 0;
    let mut integrand = |nodes: &[Point], axis: usize| -> Result<Vec<f64>> {
        nodes
            .iter()
            .map(|&n| {
                let q = field.project(n)?;
                if q != n {
                    projected += 1;
                }
                let v = field.at(q)?;
                let (l, h) = if component == 1 { (v.l_first[axis], v.h_first) } else { (v.l_second[axis], v.h_second) };
                f_ratio(l, v.v, h)
            })
            .collect()
    };
    let f_values = integrand(&p.f_nodes, 0)?;
    let g_values = integrand(&p.g_nodes, 1)?;
    let total = signed_integral(&f_values, anchor.t0, t[0])? + signed_integral(&g_values, anchor.s0, t[1])?;
    Ok(ComponentEstimate {
        t,
        component,
        value: lambda * total.exp(),
        quadrature_nodes: f_values.len() + g_values.len(),
        f_values,
        g_values,
        projected_nodes: projected,
    })
}

pub fn a1_hat(
    dataset: &SurfaceDataset,
    t: Point,
    anchor: &DeformationAnchor,
    params: &RegParams,
    n_nodes: usize,
) -> Result<ComponentEstimate> {
    anchor.validate(&dataset.domain)?;
    component_with(&DataField { dataset, params: *params }, t, anchor, 1, NodeRule::Fixed(n_nodes))
}

pub fn a2_hat(
    dataset: &SurfaceDataset,
    t: Point,
    anchor: &DeformationAnchor,
    params: &RegParams,
    n_nodes: usize,
) -> Result<ComponentEstimate> {
    anchor.validate(&dataset.domain)?;
    component_with(&DataField { dataset, params: *params }, t, anchor, 2, NodeRule::Fixed(n_nodes))
}

/// Both components at many targets, estimating each distinct node once.
pub fn estimate_deformation_batch(
    dataset: &SurfaceDataset,
    targets: &[Point],
    anchor: &DeformationAnchor,
    params: &RegParams,
    rule: NodeRule,
    exec: Exec,
) -> Result<Vec<DeformationEstimate>> {
    anchor.validate(&dataset.domain)?;
    let nodes = quadrature_nodes(targets, anchor, rule)?;
    let table = TabulatedField::build(dataset, &nodes, params, exec)?;
    deformation_with(&table, targets, anchor, rule)
}

/// Both components at many targets from any node source.
pub fn deformation_with(
    field: &dyn NodeField,
    targets: &[Point],
    anchor: &DeformationAnchor,
    rule: NodeRule,
) -> Result<Vec<DeformationEstimate>> {
    targets
        .iter()
        .map(|&t| {
            let c1 = component_with(field, t, anchor, 1, rule)?;
            let c2 = component_with(field, t, anchor, 2, rule)?;
            Ok(DeformationEstimate {
                t,
                a1_hat: c1.value,
                a2_hat: c2.value,
                quadrature_nodes: c1.quadrature_nodes,
                projected_nodes: c1.projected_nodes,
            })
        })
        .collect()
}

/// True when every node lies where the estimator stencil fits.
pub fn nodes_admissible(domain: &Domain, delta: f64, nodes: &[Point]) -> bool {
    nodes.iter().all(|&n| interior_margin(domain, n, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{DesignLaw, ScalarField};

    #[test]
    fn f_ratio_examples() {
        assert_eq!(f_ratio(2.5, 2.5, 0.3).unwrap(), 1.0);
        assert_eq!(f_ratio(0.0, 2.5, 0.3).unwrap(), 0.0);
        assert_eq!(f_ratio(4.0, 1.0, 0.5).unwrap(), 4.0);
        assert!(f_ratio(1.0, 0.0, 0.5).is_err());
        assert!(f_ratio(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn trapezoid_examples() {
        assert!((trapezoid_integral(&[1.0; 11], 0.1).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(trapezoid_integral(&[0.0, 0.5, 1.0], 0.5).unwrap(), 0.5);
        let v: Vec<f64> = linspace(1.0, 2.0, 201).into_iter().map(|s| 1.0 / s).collect();
        assert!((trapezoid_integral(&v, 1.0 / 200.0).unwrap() - 2f64.ln()).abs() < 1e-5);
        assert_eq!(trapezoid_integral(&[1.0], 0.1), Err(Error::TooFewNodes(1)));
    }

    fn identity_oracle() -> FnField<impl Fn(Point) -> NodeQuantities + Sync> {
        let h = [0.3, 0.7];
        FnField(move |t: Point| NodeQuantities {
            h_first: h[0],
            h_second: h[1],
            l_first: [t[1].powf(2.0 * h[1]), 0.0],
            l_second: [0.0, t[0].powf(2.0 * h[0])],
            v: t[0].powf(2.0 * h[0]) * t[1].powf(2.0 * h[1]),
        })
    }

    #[test]
    fn identity_oracle_recovers_coordinates() {
        let anchor = DeformationAnchor { t0: 1.0, s0: 1.0, lambda1: 1.0, lambda2: 1.0 };
        let f = identity_oracle();
        for t in Domain::unit_square_at_one().interior_lattice(5, 0.0) {
            let a1 = component_with(&f, t, &anchor, 1, NodeRule::Fixed(201)).unwrap();
            let a2 = component_with(&f, t, &anchor, 2, NodeRule::Fixed(201)).unwrap();
            assert!((a1.value - t[0]).abs() < 1e-5, "{t:?} {}", a1.value);
            assert!((a2.value - t[1]).abs() < 1e-5);
        }
    }

    #[test]
    fn anchor_is_exact_and_quadrature_converges() {
        let spec = FieldSpec {
            eta1: ScalarField::constant(0.4),
            eta2: ScalarField::constant(0.8),
            deformation: crate::field::Deformation::Power { scale: [1.0, 1.0], power: [2.0, 1.0] },
            ..FieldSpec::isotropic(0.5, DesignLaw::grid(2, 2))
        };
        let truth = TruthField(&spec);
        let anchor = DeformationAnchor::from_truth(&spec, [1.5, 1.5]);
        let at_anchor = component_with(&truth, [1.5, 1.5], &anchor, 1, NodeRule::Fixed(11)).unwrap();
        assert_eq!(at_anchor.value, anchor.lambda1);
        let t = [1.9, 1.2];
        let exact = 1.9f64 * 1.9;
        let e1 = (component_with(&truth, t, &anchor, 1, NodeRule::Fixed(21)).unwrap().value - exact).abs();
        let e2 = (component_with(&truth, t, &anchor, 1, NodeRule::Fixed(41)).unwrap().value - exact).abs();
        assert!(e2 < e1 / 3.0 && e2 > 0.0, "{e1} {e2}");
        // oracle truth is positive and monotone in t₁
        let mut prev = 0.0;
        for s in linspace(1.1, 1.9, 9) {
            let v = component_with(&truth, [s, 1.3], &anchor, 1, NodeRule::Fixed(101)).unwrap().value;
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn projection_moves_nodes_inward() {
        let d = Domain::unit_square_at_one();
        assert_eq!(project_inward(&d, 0.05, [1.0, 1.5]).unwrap(), [1.1, 1.5]);
        assert!(project_inward(&d, 0.3, [1.5, 1.5]).is_err());
    }
}
