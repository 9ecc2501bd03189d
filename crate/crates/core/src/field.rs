//! Domain, dataset and generative-truth types shared across the crate.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Largest shared design the simulator will factorize.
pub const MAX_COMMON_POINTS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub t1_min: f64,
    pub t1_max: f64,
    pub t2_min: f64,
    pub t2_max: f64,
}

impl Domain {
    pub fn new(t1_min: f64, t1_max: f64, t2_min: f64, t2_max: f64) -> Result<Self> {
        let d = Domain { t1_min, t1_max, t2_min, t2_max };
        d.validate()?;
        Ok(d)
    }

    pub fn unit_square_at_one() -> Self {
        Domain { t1_min: 1.0, t1_max: 2.0, t2_min: 1.0, t2_max: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.t1_min, self.t1_max, self.t2_min, self.t2_max];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("domain bounds must be finite".into()));
        }
        if !(self.t1_min < self.t1_max && self.t2_min < self.t2_max) {
            return Err(Error::Domain("domain requires t1_min < t1_max and t2_min < t2_max".into()));
        }
        if !(self.t1_min > 0.0 && self.t2_min > 0.0) {
            return Err(Error::Domain("domain must lie in the open positive quadrant".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.t1_min && p[0] <= self.t1_max && p[1] >= self.t2_min && p[1] <= self.t2_max
    }

    pub fn sides(&self) -> [f64; 2] {
        [self.t1_max - self.t1_min, self.t2_max - self.t2_min]
    }

    pub fn min_side(&self) -> f64 {
        let s = self.sides();
        s[0].min(s[1])
    }

    pub fn max_side(&self) -> f64 {
        let s = self.sides();
        s[0].max(s[1])
    }

    pub fn area(&self) -> f64 {
        let s = self.sides();
        s[0] * s[1]
    }

    pub fn center(&self) -> Point {
        [0.5 * (self.t1_min + self.t1_max), 0.5 * (self.t2_min + self.t2_max)]
    }

    pub fn lower(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.t1_min
        } else {
            self.t2_min
        }
    }

    pub fn upper(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.t1_max
        } else {
            self.t2_max
        }
    }

    /// `n × n` lattice (row-major in t2, then t1) over the domain shrunk by `margin`.
    pub fn interior_lattice(&self, n: usize, margin: f64) -> Vec<Point> {
        let a1 = linspace(self.t1_min + margin, self.t1_max - margin, n);
        let a2 = linspace(self.t2_min + margin, self.t2_max - margin, n);
        let mut out = Vec::with_capacity(n * n);
        for &y in &a2 {
            for &x in &a1 {
                out.push([x, y]);
            }
        }
        out
    }
}

/// `n` equispaced values from `a` to `b` inclusive; the midpoint when `n == 1`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (a + b)],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// True iff `t ± 2Δ·eᵢ` stays inside the closed domain for both axes.
pub fn interior_margin(domain: &Domain, t: Point, delta: f64) -> bool {
    if !(delta > 0.0) {
        return false;
    }
    let reach = 2.0 * delta;
    (0..2).all(|i| {
        let tol = 1e-12 * domain.upper(i).abs().max(1.0);
        t[i] - reach >= domain.lower(i) - tol && t[i] + reach <= domain.upper(i) + tol
    })
}

pub(crate) fn check_margin(domain: &Domain, t: Point, delta: f64) -> Result<()> {
    if interior_margin(domain, t, delta) {
        Ok(())
    } else {
        Err(Error::BoundaryViolation { t1: t[0], t2: t[1], margin: 2.0 * delta })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sheet {
    pub id: u64,
    /// Shared between sheets of a common design.
    pub points: Arc<[Point]>,
    pub values: Vec<f64>,
}

impl Sheet {
    pub fn new(id: u64, points: Vec<Point>, values: Vec<f64>) -> Self {
        Sheet { id, points: points.into(), values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceDataset {
    pub sheets: Vec<Sheet>,
    pub domain: Domain,
    pub noise_known_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    OutOfDomain { sheet: u64, index: usize },
    EmptySheet { sheet: u64 },
    DuplicateId(u64),
    LengthMismatch { sheet: u64 },
    NonFinite { sheet: u64, index: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfDomain { sheet, index } => write!(f, "out_of_domain: sheet {sheet} point {index}"),
            Violation::EmptySheet { sheet } => write!(f, "empty_sheet: {sheet}"),
            Violation::DuplicateId(id) => write!(f, "duplicate_id: {id}"),
            Violation::LengthMismatch { sheet } => write!(f, "length_mismatch: sheet {sheet}"),
            Violation::NonFinite { sheet, index } => write!(f, "non_finite: sheet {sheet} point {index}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(|v| v.to_string()).collect()
    }
}

pub fn validate_dataset(dataset: &SurfaceDataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    let mut dup_reported = HashSet::new();
    for sheet in &dataset.sheets {
        if !seen.insert(sheet.id) && dup_reported.insert(sheet.id) {
            report.violations.push(Violation::DuplicateId(sheet.id));
        }
        if sheet.points.len() != sheet.values.len() {
            report.violations.push(Violation::LengthMismatch { sheet: sheet.id });
        }
        if sheet.values.is_empty() {
            report.violations.push(Violation::EmptySheet { sheet: sheet.id });
        }
        for (index, p) in sheet.points.iter().enumerate() {
            if !dataset.domain.contains(*p) {
                report.violations.push(Violation::OutOfDomain { sheet: sheet.id, index });
            }
        }
        for (index, y) in sheet.values.iter().enumerate() {
            if !y.is_finite() {
                report.violations.push(Violation::NonFinite { sheet: sheet.id, index });
            }
        }
    }
    report
}

/// Real function of a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarField {
    Constant {
        value: f64,
    },
    /// `c0 + c1·u1 + c2·u2`
    Linear {
        c0: f64,
        c1: f64,
        c2: f64,
    },
}

impl ScalarField {
    pub fn constant(value: f64) -> Self {
        ScalarField::Constant { value }
    }

    pub fn eval(&self, u: Point) -> f64 {
        match *self {
            ScalarField::Constant { value } => value,
            ScalarField::Linear { c0, c1, c2 } => c0 + c1 * u[0] + c2 * u[1],
        }
    }

    /// Exact range over an axis-aligned box (the field is affine).
    pub fn range_on(&self, lo: Point, hi: Point) -> (f64, f64) {
        let corners = [lo, [hi[0], lo[1]], [lo[0], hi[1]], hi];
        corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| {
            let v = self.eval(*c);
            (a.min(v), b.max(v))
        })
    }
}

/// Domain deformation `A`, with analytic Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Deformation {
    Identity,
    /// `A_k(t) = scale_k · t_k^{power_k}`
    Power {
        scale: [f64; 2],
        power: [f64; 2],
    },
    /// `A(t) = offset + matrix · t`
    Affine {
        offset: [f64; 2],
        matrix: [[f64; 2]; 2],
    },
}

impl Deformation {
    pub fn apply(&self, t: Point) -> Point {
        match *self {
            Deformation::Identity => t,
            Deformation::Power { scale, power } => [scale[0] * t[0].powf(power[0]), scale[1] * t[1].powf(power[1])],
            Deformation::Affine { offset, matrix } => [
                offset[0] + matrix[0][0] * t[0] + matrix[0][1] * t[1],
                offset[1] + matrix[1][0] * t[0] + matrix[1][1] * t[1],
            ],
        }
    }

    /// `jac[k][i] = ∂A_k/∂t_i`.
    pub fn jacobian(&self, t: Point) -> [[f64; 2]; 2] {
        match *self {
            Deformation::Identity => [[1.0, 0.0], [0.0, 1.0]],
            Deformation::Power { scale, power } => [
                [scale[0] * power[0] * t[0].powf(power[0] - 1.0), 0.0],
                [0.0, scale[1] * power[1] * t[1].powf(power[1] - 1.0)],
            ],
            Deformation::Affine { matrix, .. } => matrix,
        }
    }

    /// Positivity of `A` and the sign condition on its partials, checked on a
    /// lattice that includes the corners.
    pub fn validate_on(&self, domain: &Domain) -> Result<()> {
        for t in domain.interior_lattice(9, 0.0) {
            let a = self.apply(t);
            if !(a[0] > 0.0 && a[1] > 0.0) || !a[0].is_finite() || !a[1].is_finite() {
                return Err(Error::Domain(format!(
                    "deformation must be positive on the domain; A({}, {}) = ({}, {})",
                    t[0], t[1], a[0], a[1]
                )));
            }
            let j = self.jacobian(t);
            for (k, row) in j.iter().enumerate() {
                if row[0] < 0.0 || row[1] < 0.0 || !(row[0] + row[1] > 0.0) {
                    return Err(Error::Domain(format!(
                        "deformation component {} needs nonnegative partials with positive sum",
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Noise standard deviation `σ(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseLaw {
    None,
    Constant {
        sigma: f64,
    },
    /// `c0 + c1·t1 + c2·t2`, floored at zero.
    Affine {
        c0: f64,
        c1: f64,
        c2: f64,
    },
    /// `base + amp · x²/(1+x²)`: bounded, depends on the signal level.
    SignalDependent {
        base: f64,
        amp: f64,
    },
}

impl NoiseLaw {
    pub fn sigma(&self, t: Point, x: f64) -> f64 {
        match *self {
            NoiseLaw::None => 0.0,
            NoiseLaw::Constant { sigma } => sigma,
            NoiseLaw::Affine { c0, c1, c2 } => (c0 + c1 * t[0] + c2 * t[1]).max(0.0),
            NoiseLaw::SignalDependent { base, amp } => base + amp * x * x / (1.0 + x * x),
        }
    }

    /// The constant standard deviation, when there is one.
    pub fn known_sigma(&self) -> Option<f64> {
        match *self {
            NoiseLaw::None => Some(0.0),
            NoiseLaw::Constant { sigma } => Some(sigma),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseLaw::None => true,
            NoiseLaw::Constant { sigma } => sigma >= 0.0 && sigma.is_finite(),
            NoiseLaw::Affine { c0, c1, c2 } => [c0, c1, c2].iter().all(|v| v.is_finite()),
            NoiseLaw::SignalDependent { base, amp } => base >= 0.0 && amp >= 0.0 && base.is_finite() && amp.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain("noise parameters must be finite and nonnegative".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    CommonGrid,
    /// Every sheet observed at the same explicit point list.
    CommonPoints,
    IndependentUniform,
    IndependentPoisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignLaw {
    pub kind: DesignKind,
    #[serde(default)]
    pub grid_shape: Option<[usize; 2]>,
    #[serde(default)]
    pub points: Option<Vec<Point>>,
    /// Lower bound `c` of the design density; defaults to `1/area`.
    #[serde(default)]
    pub density_lower_bound_c: Option<f64>,
}

impl DesignLaw {
    pub fn grid(n1: usize, n2: usize) -> Self {
        DesignLaw {
            kind: DesignKind::CommonGrid,
            grid_shape: Some([n1, n2]),
            points: None,
            density_lower_bound_c: None,
        }
    }

    pub fn points(points: Vec<Point>) -> Self {
        DesignLaw {
            kind: DesignKind::CommonPoints,
            grid_shape: None,
            points: Some(points),
            density_lower_bound_c: None,
        }
    }

    pub fn independent(kind: DesignKind) -> Self {
        DesignLaw { kind, grid_shape: None, points: None, density_lower_bound_c: None }
    }

    pub fn density_c(&self, domain: &Domain) -> f64 {
        self.density_lower_bound_c.unwrap_or(1.0 / domain.area())
    }

    /// The shared point set of a common design.
    pub fn common_points(&self, domain: &Domain) -> Result<Option<Vec<Point>>> {
        match self.kind {
            DesignKind::CommonGrid => {
                let [n1, n2] =
                    self.grid_shape.ok_or_else(|| Error::Config("common_grid design requires grid_shape".into()))?;
                let a1 = linspace(domain.t1_min, domain.t1_max, n1);
                let a2 = linspace(domain.t2_min, domain.t2_max, n2);
                Ok(Some(a2.iter().flat_map(|&y| a1.iter().map(move |&x| [x, y])).collect()))
            }
            DesignKind::CommonPoints => self
                .points
                .clone()
                .map(Some)
                .ok_or_else(|| Error::Config("common_points design requires points".into())),
            _ => Ok(None),
        }
    }

    fn validate(&self, domain: &Domain, mean_points_m: f64) -> Result<()> {
        if let Some(c) = self.density_lower_bound_c {
            if !(c > 0.0) {
                return Err(Error::Domain("density_lower_bound_c must be positive".into()));
            }
        }
        match self.kind {
            DesignKind::CommonGrid => {
                let [n1, n2] =
                    self.grid_shape.ok_or_else(|| Error::Config("common_grid design requires grid_shape".into()))?;
                if n1 == 0 || n2 == 0 {
                    return Err(Error::Config("grid_shape entries must be positive".into()));
                }
                if n1 * n2 > MAX_COMMON_POINTS {
                    return Err(Error::Config(format!(
                        "common design has {} points, limit is {MAX_COMMON_POINTS}",
                        n1 * n2
                    )));
                }
            }
            DesignKind::CommonPoints => {
                let pts =
                    self.points.as_ref().ok_or_else(|| Error::Config("common_points design requires points".into()))?;
                if pts.is_empty() {
                    return Err(Error::Config("common_points design has no points".into()));
                }
                if pts.len() > MAX_COMMON_POINTS {
                    return Err(Error::Config(format!(
                        "common design has {} points, limit is {MAX_COMMON_POINTS}",
                        pts.len()
                    )));
                }
                if let Some(p) = pts.iter().find(|p| !domain.contains(**p)) {
                    return Err(Error::Config(format!("design point ({}, {}) outside domain", p[0], p[1])));
                }
            }
            DesignKind::IndependentUniform | DesignKind::IndependentPoisson => {
                if !(mean_points_m >= 1.0) || !mean_points_m.is_finite() {
                    return Err(Error::Config("mean_points_m must be at least 1 for independent designs".into()));
                }
            }
        }
        Ok(())
    }
}

/// The generative truth of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub eta1: ScalarField,
    pub eta2: ScalarField,
    #[serde(default = "default_deformation")]
    pub deformation: Deformation,
    #[serde(default = "default_noise")]
    pub noise: NoiseLaw,
    pub design: DesignLaw,
    #[serde(default = "default_mean_points")]
    pub mean_points_m: f64,
}

fn default_deformation() -> Deformation {
    Deformation::Identity
}

fn default_noise() -> NoiseLaw {
    NoiseLaw::None
}

fn default_mean_points() -> f64 {
    100.0
}

/// Pointwise regularity implied by a field specification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueRegularity {
    /// `[H₁(t), H₂(t)] = [η₁(A(t)), η₂(A(t))]`
    pub h: [f64; 2],
    /// `[L₁⁽¹⁾, L₁⁽²⁾]`: constants attached to `H₁`, per axis.
    pub l1: [f64; 2],
    /// `[L₂⁽¹⁾, L₂⁽²⁾]`: constants attached to `H₂`, per axis.
    pub l2: [f64; 2],
    /// `E[X(t)²]`
    pub v: f64,
}

impl FieldSpec {
    pub fn isotropic(h: f64, design: DesignLaw) -> Self {
        FieldSpec {
            eta1: ScalarField::constant(h),
            eta2: ScalarField::constant(h),
            deformation: Deformation::Identity,
            noise: NoiseLaw::None,
            design,
            mean_points_m: default_mean_points(),
        }
    }

    pub fn eta_at(&self, u: Point) -> [f64; 2] {
        [self.eta1.eval(u), self.eta2.eval(u)]
    }

    pub fn true_regularity(&self, t: Point) -> TrueRegularity {
        let a = self.deformation.apply(t);
        let j = self.deformation.jacobian(t);
        let h = self.eta_at(a);
        let p1 = a[0].abs().powf(2.0 * h[0]);
        let p2 = a[1].abs().powf(2.0 * h[1]);
        let l1 = [p2 * j[0][0].abs().powf(2.0 * h[0]), p2 * j[0][1].abs().powf(2.0 * h[0])];
        let l2 = [p1 * j[1][0].abs().powf(2.0 * h[1]), p1 * j[1][1].abs().powf(2.0 * h[1])];
        TrueRegularity { h, l1, l2, v: p1 * p2 }
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        domain.validate()?;
        self.deformation.validate_on(domain)?;
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for t in domain.interior_lattice(9, 0.0) {
            let a = self.deformation.apply(t);
            for k in 0..2 {
                lo[k] = lo[k].min(a[k]);
                hi[k] = hi[k].max(a[k]);
            }
        }
        for (name, eta) in [("eta1", &self.eta1), ("eta2", &self.eta2)] {
            let (min, max) = eta.range_on(lo, hi);
            if !(min > 0.0 && max < 1.0) {
                return Err(Error::Domain(format!("{name} must lie in (0,1) on the deformed domain")));
            }
        }
        self.noise.validate()?;
        self.design.validate(domain, self.mean_points_m)
    }
}
