//! Nadaraya-Watson reconstruction with regularity-adaptive bandwidths.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Domain, Point, Sheet, SurfaceDataset};
use crate::regularity::{estimate_regularity, RegParams, RegularityEstimate};
use crate::spatial::SpatialIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Boxcar,
    BiweightProduct,
}

/// A product kernel supported on `[-1,1]²` with `κ⁻¹·1{|u| ≤ r} ≤ K ≤ κ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub kappa: f64,
    pub inner_radius_r: f64,
}

/// `(15/16)²`
const BIWEIGHT_PEAK: f64 = 0.87890625;

impl KernelSpec {
    pub fn boxcar() -> Self {
        KernelSpec { kind: KernelKind::Boxcar, kappa: 4.0, inner_radius_r: 1.0 }
    }

    /// On the disc of radius 1/2 the kernel is at least `0.5625·(15/16)² ≈ 0.494`.
    pub fn biweight() -> Self {
        KernelSpec { kind: KernelKind::BiweightProduct, kappa: 2.03, inner_radius_r: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 1.0 && self.inner_radius_r > 0.0 && self.inner_radius_r <= 1.0) {
            return Err(Error::Config("kernel needs kappa ≥ 1 and inner_radius_r in (0,1]".into()));
        }
        Ok(())
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::boxcar()
    }
}

pub fn kernel_eval(spec: &KernelSpec, u: [f64; 2]) -> f64 {
    if u[0].abs() > 1.0 || u[1].abs() > 1.0 {
        return 0.0;
    }
    match spec.kind {
        KernelKind::Boxcar => 0.25,
        KernelKind::BiweightProduct => BIWEIGHT_PEAK * (1.0 - u[0] * u[0]).powi(2) * (1.0 - u[1] * u[1]).powi(2),
    }
}

/// Kernel-weighted average with bandwidths `(h₁, h₂)`; `(0, 0)` when no
/// observation gets positive weight.
pub fn nw_predict(obs: &Sheet, t: Point, h1: f64, h2: f64, kernel: &KernelSpec) -> (f64, usize) {
    let (mut num, mut den, mut n) = (0.0, 0.0, 0usize);
    for (p, y) in obs.points.iter().zip(&obs.values) {
        let w = kernel_eval(kernel, [(p[0] - t[0]) / h1, (p[1] - t[1]) / h2]);
        if w > 0.0 {
            num += w * y;
            den += w;
            n += 1;
        }
    }
    if n == 0 {
        (0.0, 0)
    } else {
        (num / den, n)
    }
}

/// `ω = H₁H₂/(H₁+H₂)`.
pub fn effective_smoothness(h1_exp: f64, h2_exp: f64) -> f64 {
    h1_exp * h2_exp / (h1_exp + h2_exp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPlan {
    pub t: Point,
    pub h1: f64,
    pub h2: f64,
    pub omega: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub sigma2: f64,
    pub c_density: f64,
    pub m0: usize,
    /// Exponents and constants the plan was built from.
    pub h_exps: [f64; 2],
    pub l_consts: [f64; 2],
}

/// Risk-optimal bandwidths
/// `h₁* = M₀^{−α₁}[Λ₁^{2H₂+1}/Λ₂]^{1/(2𝓗)}`, `h₂*` symmetric, with
/// `Λᵢ = κ²σ²/(4cπHᵢLᵢ)`, `𝓗 = 2H₁H₂+H₁+H₂`, `αᵢ = ω/((2ω+1)Hᵢ)`,
/// clipped to `max_h`.
#[allow(clippy::too_many_arguments)]
pub fn optimal_bandwidths(
    t: Point,
    h_exps: [f64; 2],
    l_consts: [f64; 2],
    sigma2: f64,
    c_density: f64,
    kappa: f64,
    m0: usize,
    max_h: [f64; 2],
) -> Result<BandwidthPlan> {
    let [h1, h2] = h_exps;
    if !(h1 > 0.0 && h1 <= 1.0 && h2 > 0.0 && h2 <= 1.0) {
        return Err(Error::Domain("bandwidth exponents must lie in (0,1]".into()));
    }
    if !(l_consts[0] > 0.0 && l_consts[1] > 0.0) {
        return Err(Error::Domain(format!(
            "Hölder constants must be positive for a bandwidth plan, got {l_consts:?} (a delta below the design spacing makes increments vanish)"
        )));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::Domain("noise variance must be positive for a bandwidth plan".into()));
    }
    if !(c_density > 0.0 && kappa > 0.0) {
        return Err(Error::Domain("density bound and kappa must be positive".into()));
    }
    if m0 == 0 {
        return Err(Error::Domain("m0 must be at least 1".into()));
    }
    let omega = effective_smoothness(h1, h2);
    let big_h = 2.0 * h1 * h2 + h1 + h2;
    let lam = |h: f64, l: f64| kappa * kappa * sigma2 / (4.0 * c_density * PI * h * l);
    let (lam1, lam2) = (lam(h1, l_consts[0]), lam(h2, l_consts[1]));
    let alpha = |h: f64| omega / ((2.0 * omega + 1.0) * h);
    let m = m0 as f64;
    let b1 = m.powf(-alpha(h1)) * (lam1.powf(2.0 * h2 + 1.0) / lam2).powf(1.0 / (2.0 * big_h));
    let b2 = m.powf(-alpha(h2)) * (lam2.powf(2.0 * h1 + 1.0) / lam1).powf(1.0 / (2.0 * big_h));
    Ok(BandwidthPlan {
        t,
        h1: b1.min(max_h[0]),
        h2: b2.min(max_h[1]),
        omega,
        lambda1: lam1,
        lambda2: lam2,
        sigma2,
        c_density,
        m0,
        h_exps,
        l_consts,
    })
}

/// Half the mean squared difference between each observation and its
/// nearest other observation in the same sheet, pooled over sheets.
pub fn rice_sigma_hat(dataset: &SurfaceDataset) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    let mut cache: Option<(*const Point, Arc<Vec<usize>>)> = None;
    for sheet in &dataset.sheets {
        if sheet.len() < 2 {
            continue;
        }
        let key = sheet.points.as_ptr();
        let neighbours = match &cache {
            Some((k, nb)) if *k == key => Arc::clone(nb),
            _ => {
                let index = SpatialIndex::new(Arc::clone(&sheet.points));
                let nb: Vec<usize> = sheet
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| index.nearest_where(*p, |j| j != i).expect("at least two points"))
                    .collect();
                let nb = Arc::new(nb);
                cache = Some((key, Arc::clone(&nb)));
                nb
            }
        };
        for (i, &j) in neighbours.iter().enumerate() {
            sum += (sheet.values[i] - sheet.values[j]).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::TooFewObservations("no sheet has two observations".into()));
    }
    Ok((0.5 * sum / count as f64).max(0.0))
}

/// Noise variance for a learning set: the declared value when present,
/// otherwise the difference-based estimate.
pub fn sigma2_for(learn: &SurfaceDataset) -> Result<f64> {
    match learn.noise_known_sigma {
        Some(s) => Ok(s * s),
        None => rice_sigma_hat(learn),
    }
}

/// Exponents and constants fed to the bandwidth formula. An isotropic
/// decision uses `Ĥ_low` on both axes with the per-axis constant sums.
pub fn plug_in(est: &RegularityEstimate) -> ([f64; 2], [f64; 2]) {
    let sums = [est.l1[0] + est.l2[0], est.l1[1] + est.l2[1]];
    if !est.anisotropic {
        return ([est.h_low; 2], sums);
    }
    let h = [est.h1_hat, est.h2_hat];
    let mut l = [0.0; 2];
    for a in 0..2 {
        let own = if h[a] == est.h_low { est.l1[a] } else { est.l2[a] };
        l[a] = if own > 0.0 { own } else { sums[a] };
    }
    (h, l)
}

fn side_caps(domain: &Domain) -> [f64; 2] {
    domain.sides()
}

pub fn plan_from_estimate(
    est: &RegularityEstimate,
    sigma2: f64,
    c_density: f64,
    kernel: &KernelSpec,
    m0: usize,
    domain: &Domain,
) -> Result<BandwidthPlan> {
    let (h, l) = plug_in(est);
    optimal_bandwidths(est.t, h, l, sigma2, c_density, kernel.kappa, m0, side_caps(domain))
}

/// Estimate regularity on `learn`, plan bandwidths for `new_sheet`'s size,
/// and predict at `t`.
pub fn adaptive_predict(
    learn: &SurfaceDataset,
    new_sheet: &Sheet,
    t: Point,
    params: &RegParams,
    kernel: &KernelSpec,
    c_density: f64,
) -> Result<(f64, BandwidthPlan)> {
    kernel.validate()?;
    let est = estimate_regularity(learn, t, params)?;
    let sigma2 = sigma2_for(learn)?;
    let plan = plan_from_estimate(&est, sigma2, c_density, kernel, new_sheet.len(), &learn.domain)?;
    let (value, _) = nw_predict(new_sheet, t, plan.h1, plan.h2, kernel);
    Ok((value, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn kernel_examples() {
        let b = KernelSpec::boxcar();
        assert_eq!(kernel_eval(&b, [0.0, 0.0]), 0.25);
        assert_eq!(kernel_eval(&b, [1.5, 0.0]), 0.0);
        assert_eq!(kernel_eval(&KernelSpec::biweight(), [0.0, 0.0]), 0.87890625);
    }

    #[test]
    fn kernels_integrate_to_one_and_respect_bounds() {
        for k in [KernelSpec::boxcar(), KernelSpec::biweight()] {
            let n = 400;
            let h = 2.0 / n as f64;
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let u = [-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h];
                    let v = kernel_eval(&k, u);
                    total += v * h * h;
                    assert!(v <= k.kappa);
                    if u[0].hypot(u[1]) <= k.inner_radius_r {
                        assert!(v >= 1.0 / k.kappa, "{u:?}");
                    }
                }
            }
            assert!((total - 1.0).abs() < 1e-4, "{total}");
        }
    }

    fn sheet(points: Vec<Point>, values: Vec<f64>) -> Sheet {
        Sheet::new(0, points, values)
    }

    #[test]
    fn nw_examples() {
        let k = KernelSpec::boxcar();
        let s = sheet(vec![[1.5, 1.5], [1.9, 1.9]], vec![7.0, 1.0]);
        assert_eq!(nw_predict(&s, [1.5, 1.5], 0.1, 0.1, &k), (7.0, 1));
        let s = sheet(vec![[1.5, 1.5], [1.52, 1.49], [1.9, 1.9]], vec![3.0, 3.0, 9.0]);
        assert_eq!(nw_predict(&s, [1.5, 1.5], 0.1, 0.1, &k), (3.0, 2));
        assert_eq!(nw_predict(&s, [1.2, 1.2], 0.05, 0.05, &k), (0.0, 0));
    }

    #[test]
    fn omega_examples() {
        assert_relative_eq!(effective_smoothness(0.4, 0.4), 0.2, max_relative = 1e-15);
        assert_relative_eq!(effective_smoothness(0.3, 0.6), 0.2, max_relative = 1e-15);
        assert_eq!(effective_smoothness(0.2, 0.7), effective_smoothness(0.7, 0.2));
    }

    /// `Λ = 1` for H = 1/2, L = 1 needs `κ²σ²/(4cπ·0.5) = 1`.
    fn unit_lambda_sigma2(kappa: f64) -> f64 {
        2.0 * PI / (kappa * kappa)
    }

    #[test]
    fn symmetric_plan() {
        let s2 = unit_lambda_sigma2(4.0);
        let p = optimal_bandwidths([1.5, 1.5], [0.5, 0.5], [1.0, 1.0], s2, 1.0, 4.0, 1000, [1.0, 1.0]).unwrap();
        assert_relative_eq!(p.lambda1, 1.0, max_relative = 1e-14);
        assert_relative_eq!(p.h1, 0.1, max_relative = 1e-12);
        assert_relative_eq!(p.h2, 0.1, max_relative = 1e-12);
        let q = optimal_bandwidths([1.5, 1.5], [0.5, 0.5], [1.0, 1.0], s2, 1.0, 4.0, 4000, [1.0, 1.0]).unwrap();
        assert_relative_eq!(q.h1 / p.h1, 4f64.powf(-1.0 / 3.0), max_relative = 1e-12);
        // general H: (Λ/M₀)^{1/(2(H+1))}
        let r = optimal_bandwidths([1.5, 1.5], [0.3, 0.3], [2.0, 2.0], 0.7, 0.5, 4.0, 300, [9.0, 9.0]).unwrap();
        assert_relative_eq!(r.h1, (r.lambda1 / 300.0).powf(1.0 / 2.6), max_relative = 1e-12);
        assert_eq!(r.h1, r.h2);
    }

    #[test]
    fn plan_errors_and_clipping() {
        assert!(optimal_bandwidths([1.0, 1.0], [0.5, 0.5], [0.0, 1.0], 1.0, 1.0, 4.0, 10, [1.0, 1.0]).is_err());
        assert!(optimal_bandwidths([1.0, 1.0], [0.5, 0.5], [1.0, 1.0], 0.0, 1.0, 4.0, 10, [1.0, 1.0]).is_err());
        let p = optimal_bandwidths([1.0, 1.0], [0.5, 0.5], [1.0, 1.0], 100.0, 1.0, 4.0, 1, [1.0, 1.0]).unwrap();
        assert_eq!((p.h1, p.h2), (1.0, 1.0));
    }

    #[test]
    fn rice_examples() {
        let d = Domain::unit_square_at_one();
        let ds = SurfaceDataset {
            sheets: vec![sheet(vec![[1.5, 1.5], [1.5, 1.5], [1.2, 1.2]], vec![2.0, 2.0, 2.0])],
            domain: d,
            noise_known_sigma: None,
        };
        assert_eq!(rice_sigma_hat(&ds).unwrap(), 0.0);
        let one =
            SurfaceDataset { sheets: vec![sheet(vec![[1.5, 1.5]], vec![1.0])], domain: d, noise_known_sigma: None };
        assert!(matches!(rice_sigma_hat(&one), Err(Error::TooFewObservations(_))));
    }

    #[test]
    fn rice_pure_noise() {
        use rand::{Rng, SeedableRng};
        use rand_distr::StandardNormal;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let sheets: Vec<Sheet> = (0..50)
            .map(|j| {
                let pts: Vec<Point> =
                    (0..200).map(|_| [rng.random_range(1.0..2.0), rng.random_range(1.0..2.0)]).collect();
                let vals: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
                Sheet::new(j, pts, vals)
            })
            .collect();
        let ds = SurfaceDataset { sheets, domain: Domain::unit_square_at_one(), noise_known_sigma: None };
        let s2 = rice_sigma_hat(&ds).unwrap();
        assert!((s2 - 1.0).abs() < 0.1, "{s2}");
    }

    proptest! {
        #[test]
        fn nw_is_convex_and_permutation_invariant(
            obs in prop::collection::vec((1.0f64..2.0, 1.0f64..2.0, -5.0f64..5.0), 1..60),
            h in 0.05f64..0.6,
        ) {
            let k = KernelSpec::biweight();
            let pts: Vec<Point> = obs.iter().map(|o| [o.0, o.1]).collect();
            let vals: Vec<f64> = obs.iter().map(|o| o.2).collect();
            let t = [1.5, 1.5];
            let (v, n) = nw_predict(&sheet(pts.clone(), vals.clone()), t, h, h, &k);
            if n > 0 {
                let inw: Vec<f64> = pts.iter().zip(&vals)
                    .filter(|(p, _)| kernel_eval(&k, [(p[0] - t[0]) / h, (p[1] - t[1]) / h]) > 0.0)
                    .map(|(_, y)| *y).collect();
                let lo = inw.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = inw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
            let mut rp = pts.clone(); rp.reverse();
            let mut rv = vals.clone(); rv.reverse();
            rp.push([1.5 + 2.0 * h, 1.5]); rv.push(1e6);
            let (w, m) = nw_predict(&sheet(rp, rv), t, h, h, &k);
            prop_assert_eq!(n, m);
            prop_assert!((v - w).abs() <= 1e-12 * v.abs().max(1.0));
        }

        #[test]
        fn plan_scaling_laws(h1 in 0.1f64..1.0, h2 in 0.1f64..1.0, l1 in 0.1f64..5.0, l2 in 0.1f64..5.0, m0 in 1usize..100000) {
            let big = [1e9, 1e9];
            let p = optimal_bandwidths([1.0, 1.0], [h1, h2], [l1, l2], 0.3, 1.0, 4.0, m0, big).unwrap();
            let q = optimal_bandwidths([1.0, 1.0], [h1, h2], [l1, l2], 0.3, 1.0, 4.0, 2 * m0, big).unwrap();
            let w = effective_smoothness(h1, h2);
            prop_assert!(w <= h1.min(h2) && w >= h1.min(h2) / 2.0);
            let a1 = w / ((2.0 * w + 1.0) * h1);
            prop_assert!(((m0 as f64).powf(a1) * p.h1 / ((2 * m0) as f64).powf(a1) / q.h1 - 1.0).abs() < 1e-10);
            prop_assert!(q.h1 * q.h2 * (2 * m0) as f64 > p.h1 * p.h2 * m0 as f64);
        }
    }
}
