//! Increment-moment estimators of local regularity: `θ̂`, `γ̂`, `Ĥ_low`,
//! `α̂`, `D̂`, the anisotropy decision, Hölder constants and `v̂`.
//!
//! The exponent gap is read off each axis separately. Along axis `i`,
//! `θ⁽ⁱ⁾(s) ≈ L₁⁽ⁱ⁾ s^{2H₁} + L₂⁽ⁱ⁾ s^{2H₂}`, so after rescaling by
//! `s^{2Ĥ_low}` the difference between consecutive dyadic scales behaves like
//! `s^{2D}`. Pooling both axes into `γ̂` before differencing is useless
//! because `Ĥ_low` is itself fitted on the same pair of scales, which makes
//! the pooled difference vanish identically. A difference only counts as a
//! signal when it clears a leave-one-out jackknife significance test; an
//! axis along which one exponent is absent produces pure noise there.

use serde::{Deserialize, Serialize};

use crate::approx::{approx_matrix, ApproxPolicy};
use crate::error::{Error, Result};
use crate::field::{check_margin, Domain, Point, SurfaceDataset};
use crate::par::Exec;

const LN4: f64 = 2.0 * std::f64::consts::LN_2;
const ALPHA_TIE_RTOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "RegParamsDoc")]
pub struct RegParams {
    pub delta: f64,
    pub tau: f64,
    pub beta_low: f64,
    pub beta_high_l: f64,
    pub v_floor: f64,
    pub policy: ApproxPolicy,
    /// Jackknife z-threshold a scale difference must clear to count as signal.
    pub significance_z: f64,
}

/// Serialized form: everything but `delta` may be omitted, `tau` then
/// following `delta`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegParamsDoc {
    delta: f64,
    #[serde(default)]
    tau: Option<f64>,
    #[serde(default = "default_beta_low")]
    beta_low: f64,
    #[serde(default = "default_beta_high_l")]
    beta_high_l: f64,
    #[serde(default = "default_v_floor")]
    v_floor: f64,
    #[serde(default)]
    policy: ApproxPolicy,
    #[serde(default = "default_significance_z")]
    significance_z: f64,
}

impl From<RegParamsDoc> for RegParams {
    fn from(d: RegParamsDoc) -> Self {
        RegParams {
            delta: d.delta,
            tau: d.tau.unwrap_or_else(|| default_tau(d.delta)),
            beta_low: d.beta_low,
            beta_high_l: d.beta_high_l,
            v_floor: d.v_floor,
            policy: d.policy,
            significance_z: d.significance_z,
        }
    }
}

fn default_beta_low() -> f64 {
    0.05
}
fn default_beta_high_l() -> f64 {
    100.0
}
fn default_v_floor() -> f64 {
    1e-6
}
fn default_significance_z() -> f64 {
    2.0
}

/// `max(0.05, √Δ)`.
pub fn default_tau(delta: f64) -> f64 {
    delta.sqrt().max(0.05)
}

/// Twice the median nearest-neighbour spacing of the observation points,
/// floored at a fiftieth of the shorter domain side.
pub fn default_delta(dataset: &SurfaceDataset) -> f64 {
    let floor = dataset.domain.min_side() / 50.0;
    let mut spacings = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for sheet in dataset.sheets.iter().take(64) {
        if sheet.len() < 2 || !seen.insert(sheet.points.as_ptr()) {
            continue;
        }
        let pts = &sheet.points;
        for (i, p) in pts.iter().enumerate() {
            let mut best = f64::INFINITY;
            for (k, q) in pts.iter().enumerate() {
                if k != i {
                    best = best.min(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
                }
            }
            spacings.push(best);
        }
    }
    if spacings.is_empty() {
        return floor;
    }
    spacings.sort_by(f64::total_cmp);
    let n = spacings.len();
    let median = if n % 2 == 1 { spacings[n / 2] } else { 0.5 * (spacings[n / 2 - 1] + spacings[n / 2]) };
    (2.0 * median).max(floor)
}

impl RegParams {
    pub fn new(delta: f64) -> Self {
        RegParams {
            delta,
            tau: default_tau(delta),
            beta_low: default_beta_low(),
            beta_high_l: default_beta_high_l(),
            v_floor: default_v_floor(),
            policy: ApproxPolicy::default(),
            significance_z: default_significance_z(),
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta must be positive");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0,1)");
        }
        if !(self.beta_low > 0.0 && self.beta_low < 1.0) {
            return bad("beta_low must lie in (0,1)");
        }
        if !(self.beta_high_l > 0.0) {
            return bad("beta_high_l must be positive");
        }
        if !(self.v_floor > 0.0) {
            return bad("v_floor must be positive");
        }
        if !(self.significance_z >= 0.0 && self.significance_z.is_finite()) {
            return bad("significance_z must be nonnegative");
        }
        self.policy.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateFlag {
    GammaNonpositive,
    AlphaDegenerate,
    DhatZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityDiagnostics {
    /// `θ̂⁽ⁱ⁾(4Δ)`, the coarsest scale of the per-axis difference ladder.
    pub theta_4delta: [f64; 2],
    /// `[axis][α̂(Δ), α̂(2Δ)]`
    pub alpha: [[f64; 2]; 2],
    /// Jackknife z-scores of the signed differences behind `alpha`.
    pub alpha_z: [[f64; 2]; 2],
    /// Axis (0-based) whose differences produced `D̂`.
    pub detection_axis: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityEstimate {
    pub t: Point,
    pub h_low: f64,
    /// Raw gap estimate before the `τ` gate.
    pub d_hat: f64,
    pub anisotropic: bool,
    pub h_high: f64,
    /// Axis-labelled exponents: the axis with the larger rescaled `θ̂(Δ)`
    /// carries `Ĥ_low`. A labelling convention, not an identified quantity.
    pub h1_hat: f64,
    pub h2_hat: f64,
    /// `[L̂₁⁽¹⁾, L̂₁⁽²⁾]`
    pub l1: [f64; 2],
    /// `[L̂₂⁽¹⁾, L̂₂⁽²⁾]`
    pub l2: [f64; 2],
    pub v_hat: f64,
    /// `[γ̂(Δ), γ̂(2Δ)]`
    pub gamma_values: [f64; 2],
    /// `[axis][θ̂(Δ), θ̂(2Δ)]`
    pub theta_values: [[f64; 2]; 2],
    pub degenerate_flags: Vec<DegenerateFlag>,
    pub diagnostics: RegularityDiagnostics,
}

/// `[log γ̂(2Δ) − log γ̂(Δ)] / (2 log 2)` clamped to `[beta_low, 1]`;
/// `(1, true)` when either input is not positive.
pub fn h_low_hat(gamma_d: f64, gamma_2d: f64, beta_low: f64) -> (f64, bool) {
    if !(gamma_d > 0.0 && gamma_2d > 0.0) {
        return (1.0, true);
    }
    let h = (gamma_2d.ln() - gamma_d.ln()) / LN4;
    (h.clamp(beta_low, 1.0), false)
}

fn rescaled_difference(m_d: f64, m_2d: f64, h: f64, delta: f64) -> (f64, f64, f64) {
    let lo = m_d / delta.powf(2.0 * h);
    let hi = m_2d / (2.0 * delta).powf(2.0 * h);
    (hi - lo, lo, hi)
}

/// `|m(2Δ)/(2Δ)^{2Ĥ} − m(Δ)/Δ^{2Ĥ}|`; `(1, true)` on a tie.
pub fn alpha_hat(m_d: f64, m_2d: f64, h_low: f64, delta: f64) -> (f64, bool) {
    let (diff, lo, hi) = rescaled_difference(m_d, m_2d, h_low, delta);
    if diff.abs() <= ALPHA_TIE_RTOL * lo.abs().max(hi.abs()) || !diff.is_finite() {
        return (1.0, true);
    }
    (diff.abs(), false)
}

/// `D̂ = [log α̂(2Δ) − log α̂(Δ)] / (2 log 2)` and the decision `D̂ ≥ τ`.
/// Degenerate inputs or a nonpositive log-ratio give `(0, false)`.
pub fn d_hat_and_detect(alpha_d: (f64, bool), alpha_2d: (f64, bool), tau: f64) -> (f64, bool) {
    if alpha_d.1 || alpha_2d.1 || !(alpha_d.0 > 0.0 && alpha_2d.0 > 0.0) {
        return (0.0, false);
    }
    let d = (alpha_2d.0.ln() - alpha_d.0.ln()) / LN4;
    if !(d > 0.0) || !d.is_finite() {
        return (0.0, false);
    }
    (d, d >= tau)
}

/// `min(θ̂(Δ)/Δ^{2Ĥ}, β̄)`.
pub fn l1_hat(theta_d: f64, h_low: f64, delta: f64, beta_high_l: f64) -> f64 {
    (theta_d / delta.powf(2.0 * h_low)).min(beta_high_l).max(0.0)
}

/// `|θ̂(2Δ)/(2Δ)^{2Ĥ} − θ̂(Δ)/Δ^{2Ĥ}| / ((2^{2D̂}−1) Δ^{2D̂})`, zero when `D̂ = 0`.
pub fn l2_hat(theta_d: f64, theta_2d: f64, h_low: f64, d: f64, delta: f64) -> f64 {
    if !(d > 0.0) {
        return 0.0;
    }
    let (diff, _, _) = rescaled_difference(theta_d, theta_2d, h_low, delta);
    diff.abs() / ((4f64.powf(d) - 1.0) * delta.powf(2.0 * d))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn axis_pair(t: Point, s: f64, axis: usize) -> [Point; 2] {
    let mut a = t;
    let mut b = t;
    a[axis] -= 0.5 * s;
    b[axis] += 0.5 * s;
    [a, b]
}

fn mean_sq_increment(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

fn nonempty(dataset: &SurfaceDataset) -> Result<()> {
    if dataset.sheets.is_empty() {
        Err(Error::EmptyDataset)
    } else {
        Ok(())
    }
}

/// Mean squared increment along `axis` (0 or 1) over the scale `Δ`.
pub fn theta_hat(dataset: &SurfaceDataset, t: Point, delta: f64, axis: usize, policy: &ApproxPolicy) -> Result<f64> {
    nonempty(dataset)?;
    check_margin(&dataset.domain, t, delta)?;
    let m = approx_matrix(dataset, &axis_pair(t, delta, axis), policy, Exec::Sequential)?;
    Ok(mean_sq_increment(&m[0], &m[1]))
}

pub fn gamma_hat(dataset: &SurfaceDataset, t: Point, delta: f64, policy: &ApproxPolicy) -> Result<f64> {
    Ok(theta_hat(dataset, t, delta, 0, policy)? + theta_hat(dataset, t, delta, 1, policy)?)
}

/// `max(v_floor, mean X̃(t)²)`.
pub fn v_hat(dataset: &SurfaceDataset, t: Point, policy: &ApproxPolicy, v_floor: f64) -> Result<f64> {
    nonempty(dataset)?;
    let m = approx_matrix(dataset, &[t], policy, Exec::Sequential)?;
    Ok(v_from_values(&m[0], v_floor))
}

fn v_from_values(x: &[f64], v_floor: f64) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).max(v_floor)
}

/// Scales used per axis, as multiples of `Δ`.
const SCALES: [f64; 3] = [1.0, 2.0, 4.0];
/// Points per evaluation location: `t` plus two per scale per axis.
pub const STENCIL_LEN: usize = 1 + 2 * 2 * SCALES.len();

/// The observation locations the estimator reads at `t`.
pub fn stencil(t: Point, delta: f64) -> [Point; STENCIL_LEN] {
    let mut out = [t; STENCIL_LEN];
    let mut k = 1;
    for axis in 0..2 {
        for s in SCALES {
            let [a, b] = axis_pair(t, s * delta, axis);
            out[k] = a;
            out[k + 1] = b;
            k += 2;
        }
    }
    out
}

/// Stencils for a batch of locations, deduplicated, for building exact
/// observation designs.
pub fn stencil_points(targets: &[Point], delta: f64) -> Vec<Point> {
    let mut pts: Vec<Point> = Vec::with_capacity(targets.len() * STENCIL_LEN);
    for &t in targets {
        pts.extend(stencil(t, delta));
    }
    let mut seen = std::collections::HashSet::new();
    pts.retain(|p| seen.insert(((p[0] * 1e10).round() as i64, (p[1] * 1e10).round() as i64)));
    pts
}

/// Squared increments per sheet for one location: `[axis][scale][sheet]`.
struct Increments {
    q: [[Vec<f64>; 3]; 2],
    x_t: Vec<f64>,
}

impl Increments {
    fn from_values(rows: &[&[f64]]) -> Self {
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).collect::<Vec<_>>();
        let mut q: [[Vec<f64>; 3]; 2] = Default::default();
        let mut k = 1;
        for qa in q.iter_mut() {
            for qs in qa.iter_mut() {
                *qs = sq(rows[k], rows[k + 1]);
                k += 2;
            }
        }
        Increments { q, x_t: rows[0].to_vec() }
    }
}

/// Signed rescaled differences `[axis][Δ-pair, 2Δ-pair]` from scale means.
fn signed_alphas(theta: &[[f64; 3]; 2], delta: f64, beta_low: f64) -> [[f64; 2]; 2] {
    let (h, _) = h_low_hat(theta[0][0] + theta[1][0], theta[0][1] + theta[1][1], beta_low);
    let mut out = [[0.0; 2]; 2];
    for axis in 0..2 {
        for k in 0..2 {
            let s = delta * SCALES[k];
            out[axis][k] = rescaled_difference(theta[axis][k], theta[axis][k + 1], h, s).0;
        }
    }
    out
}

/// Leave-one-out jackknife standard errors of the signed differences.
fn jackknife_se(inc: &Increments, theta: &[[f64; 3]; 2], delta: f64, beta_low: f64) -> [[f64; 2]; 2] {
    let n = inc.x_t.len();
    if n < 2 {
        return [[0.0; 2]; 2];
    }
    let nf = n as f64;
    let mut reps: Vec<[[f64; 2]; 2]> = Vec::with_capacity(n);
    for j in 0..n {
        let mut th = [[0.0; 3]; 2];
        for a in 0..2 {
            for s in 0..3 {
                th[a][s] = (nf * theta[a][s] - inc.q[a][s][j]) / (nf - 1.0);
            }
        }
        reps.push(signed_alphas(&th, delta, beta_low));
    }
    let mut se = [[0.0; 2]; 2];
    for a in 0..2 {
        for k in 0..2 {
            let m = reps.iter().map(|r| r[a][k]).sum::<f64>() / nf;
            let ss = reps.iter().map(|r| (r[a][k] - m).powi(2)).sum::<f64>();
            se[a][k] = ((nf - 1.0) / nf * ss).sqrt();
        }
    }
    se
}

fn estimate_from_increments(t: Point, inc: &Increments, params: &RegParams) -> RegularityEstimate {
    let delta = params.delta;
    let theta: [[f64; 3]; 2] = std::array::from_fn(|a| std::array::from_fn(|s| mean(&inc.q[a][s])));
    let gamma = [theta[0][0] + theta[1][0], theta[0][1] + theta[1][1]];
    let mut flags = Vec::new();
    let (h_low, gamma_deg) = h_low_hat(gamma[0], gamma[1], params.beta_low);
    if gamma_deg {
        flags.push(DegenerateFlag::GammaNonpositive);
    }

    let signed = signed_alphas(&theta, delta, params.beta_low);
    let se = jackknife_se(inc, &theta, delta, params.beta_low);
    let mut alpha = [[0.0; 2]; 2];
    let mut alpha_z = [[0.0; 2]; 2];
    let mut best: Option<(f64, usize, f64)> = None;
    let mut any_alpha_degenerate = false;
    for axis in 0..2 {
        let mut pair = [(0.0, true); 2];
        for k in 0..2 {
            let s = delta * SCALES[k];
            let (a, tie) = alpha_hat(theta[axis][k], theta[axis][k + 1], h_low, s);
            let z = if se[axis][k] > 0.0 {
                signed[axis][k].abs() / se[axis][k]
            } else if tie {
                0.0
            } else {
                f64::INFINITY
            };
            alpha[axis][k] = a;
            alpha_z[axis][k] = z;
            pair[k] = (a, tie || z < params.significance_z);
        }
        if pair[0].1 || pair[1].1 {
            any_alpha_degenerate = true;
        }
        let (d, _) = d_hat_and_detect(pair[0], pair[1], params.tau);
        if d > 0.0 {
            let zmin = alpha_z[axis][0].min(alpha_z[axis][1]);
            if best.map_or(true, |(bz, _, _)| zmin > bz) {
                best = Some((zmin, axis, d));
            }
        }
    }
    let (detection_axis, d_raw) = match best {
        Some((_, axis, d)) => (Some(axis), d),
        None => (None, 0.0),
    };
    if detection_axis.is_none() && any_alpha_degenerate {
        flags.push(DegenerateFlag::AlphaDegenerate);
    }
    if d_raw == 0.0 {
        flags.push(DegenerateFlag::DhatZero);
    }
    let anisotropic = d_raw > 0.0 && d_raw >= params.tau;
    let d_used = if anisotropic { d_raw } else { 0.0 };
    let h_high = (h_low + d_used).min(1.0);

    let l1 = [0, 1].map(|a| l1_hat(theta[a][0], h_low, delta, params.beta_high_l));
    let l2 = [0, 1].map(|a| l2_hat(theta[a][0], theta[a][1], h_low, d_used, delta));
    let rescaled = [0, 1].map(|a| theta[a][0] / delta.powf(2.0 * h_low));
    let (h1_hat, h2_hat) = if rescaled[0] >= rescaled[1] { (h_low, h_high) } else { (h_high, h_low) };

    RegularityEstimate {
        t,
        h_low,
        d_hat: d_raw,
        anisotropic,
        h_high,
        h1_hat,
        h2_hat,
        l1,
        l2,
        v_hat: v_from_values(&inc.x_t, params.v_floor),
        gamma_values: gamma,
        theta_values: [[theta[0][0], theta[0][1]], [theta[1][0], theta[1][1]]],
        degenerate_flags: flags,
        diagnostics: RegularityDiagnostics { theta_4delta: [theta[0][2], theta[1][2]], alpha, alpha_z, detection_axis },
    }
}

/// Full estimate at one location.
pub fn estimate_regularity(dataset: &SurfaceDataset, t: Point, params: &RegParams) -> Result<RegularityEstimate> {
    Ok(estimate_batch(dataset, &[t], params, Exec::Sequential)?.remove(0))
}

/// Estimates at many locations. Fails on the first location (in input order)
/// too close to the boundary.
pub fn estimate_batch(
    dataset: &SurfaceDataset,
    targets: &[Point],
    params: &RegParams,
    exec: Exec,
) -> Result<Vec<RegularityEstimate>> {
    params.validate()?;
    nonempty(dataset)?;
    for &t in targets {
        check_margin(&dataset.domain, t, params.delta)?;
    }
    let queries: Vec<Point> = targets.iter().flat_map(|&t| stencil(t, params.delta)).collect();
    let values = approx_matrix(dataset, &queries, &params.policy, exec)?;
    Ok(exec.map_range(targets.len(), |i| {
        let rows: Vec<&[f64]> = values[i * STENCIL_LEN..(i + 1) * STENCIL_LEN].iter().map(|v| v.as_slice()).collect();
        estimate_from_increments(targets[i], &Increments::from_values(&rows), params)
    }))
}

/// Evaluation lattice of side `n` excluding a `3Δ` margin.
pub fn evaluation_grid(domain: &Domain, n: usize, delta: f64) -> Vec<Point> {
    domain.interior_lattice(n, 3.0 * delta)
}
