//! Exact Gaussian simulation of deformed multifractional Brownian sheets.

use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use libm::tgamma as gamma;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DesignKind, Domain, FieldSpec, NoiseLaw, Point, ScalarField, Sheet, SurfaceDataset};
use crate::par::Exec;
use crate::rng::sheet_rng;

/// Sheets sampled per matrix product. Fixed so that results never depend on
/// the execution policy.
const CHUNK: usize = 64;
const JITTER_DOUBLINGS: u32 = 8;

fn check_unit(x: f64, what: &str) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must lie in (0,1), got {x}")))
    }
}

/// `C(x) = sqrt(2π / (Γ(2x+1) sin(πx)))`.
pub fn c_norm(x: f64) -> Result<f64> {
    check_unit(x, "c_norm argument")?;
    Ok(c_raw(x))
}

fn c_raw(x: f64) -> f64 {
    (2.0 * PI / (gamma(2.0 * x + 1.0) * (PI * x).sin())).sqrt()
}

/// `D(x, y) = C²((x+y)/2) / (2 C(x) C(y))`; exactly 1/2 on the diagonal.
pub fn d_factor(x: f64, y: f64) -> Result<f64> {
    check_unit(x, "d_factor argument")?;
    check_unit(y, "d_factor argument")?;
    Ok(d_with(x, y, c_raw(x), c_raw(y)))
}

/// Summary of `D` over the lattice `{k/(n+1)}²`, `k = 1..=n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DFactorScan {
    pub max_off_diagonal: f64,
    pub diagonal_exactly_half: bool,
}

pub fn d_factor_scan(n: usize) -> Result<DFactorScan> {
    let xs: Vec<f64> = (1..=n).map(|k| k as f64 / (n + 1) as f64).collect();
    let mut scan = DFactorScan { max_off_diagonal: f64::NEG_INFINITY, diagonal_exactly_half: true };
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in xs.iter().enumerate() {
            let d = d_factor(x, y)?;
            if i == j {
                scan.diagonal_exactly_half &= d == 0.5;
            } else {
                scan.max_off_diagonal = scan.max_off_diagonal.max(d);
            }
        }
    }
    Ok(scan)
}

#[inline]
fn d_with(x: f64, y: f64, cx: f64, cy: f64) -> f64 {
    if x == y {
        return 0.5;
    }
    let cm = c_raw(0.5 * (x + y));
    cm * cm / (2.0 * cx * cy)
}

#[inline]
fn bracket(a: f64, b: f64, s: f64) -> f64 {
    a.powf(s) + b.powf(s) - (a - b).abs().powf(s)
}

/// `E[W(u) W(v)]` for the undeformed sheet `W`.
pub fn mfbs_covariance(u: Point, v: Point, eta1: &ScalarField, eta2: &ScalarField) -> Result<f64> {
    if !(u[0] > 0.0 && u[1] > 0.0 && v[0] > 0.0 && v[1] > 0.0) {
        return Err(Error::Domain("covariance needs strictly positive coordinates".into()));
    }
    let eu = [eta1.eval(u), eta2.eval(u)];
    let ev = [eta1.eval(v), eta2.eval(v)];
    for e in eu.iter().chain(ev.iter()) {
        check_unit(*e, "eta value")?;
    }
    let pu = PointEta::new(u, eu);
    let pv = PointEta::new(v, ev);
    Ok(pu.cov(&pv))
}

/// A point with its Hurst values and their normalizing constants.
#[derive(Clone, Copy)]
struct PointEta {
    u: Point,
    eta: [f64; 2],
    c: [f64; 2],
}

impl PointEta {
    fn new(u: Point, eta: [f64; 2]) -> Self {
        PointEta { u, eta, c: [c_raw(eta[0]), c_raw(eta[1])] }
    }

    fn cov(&self, o: &PointEta) -> f64 {
        let mut out = 1.0;
        for k in 0..2 {
            let d = d_with(self.eta[k], o.eta[k], self.c[k], o.c[k]);
            out *= d * bracket(self.u[k], o.u[k], self.eta[k] + o.eta[k]);
        }
        out
    }
}

fn covariance_matrix(points: &[Point], eta1: &ScalarField, eta2: &ScalarField) -> Result<DMatrix<f64>> {
    let mut pe = Vec::with_capacity(points.len());
    for &u in points {
        if !(u[0] > 0.0 && u[1] > 0.0) {
            return Err(Error::Domain(format!("covariance point ({}, {}) not positive", u[0], u[1])));
        }
        let eta = [eta1.eval(u), eta2.eval(u)];
        check_unit(eta[0], "eta1")?;
        check_unit(eta[1], "eta2")?;
        pe.push(PointEta::new(u, eta));
    }
    let n = points.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let c = pe[i].cov(&pe[j]);
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
    }
    Ok(m)
}

/// Assembled covariance of `W` at `points` (exposed for diagnostics).
pub fn assemble_covariance(points: &[Point], eta1: &ScalarField, eta2: &ScalarField) -> Result<DMatrix<f64>> {
    covariance_matrix(points, eta1, eta2)
}

#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    /// Points in the deformed domain.
    pub points: Vec<Point>,
    pub lower_factor: DMatrix<f64>,
    pub jitter_used: f64,
}

/// Cholesky factor of the covariance at `points`, retrying with a doubling
/// diagonal jitter (`jitter·2^k`, `k = 0..=8`) when the plain matrix fails.
pub fn build_covariance_factor(
    points: &[Point],
    eta1: &ScalarField,
    eta2: &ScalarField,
    jitter: f64,
) -> Result<CovarianceFactor> {
    if points.is_empty() {
        return Err(Error::Config("covariance factor needs at least one point".into()));
    }
    if !(jitter >= 0.0) {
        return Err(Error::Config("jitter must be nonnegative".into()));
    }
    let sigma = covariance_matrix(points, eta1, eta2)?;
    let attempt = |j: f64| {
        let mut m = sigma.clone();
        if j > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += j;
            }
        }
        m.cholesky().map(|c| c.unpack())
    };
    if let Some(l) = attempt(0.0) {
        return Ok(CovarianceFactor { points: points.to_vec(), lower_factor: l, jitter_used: 0.0 });
    }
    let mut last = 0.0;
    if jitter > 0.0 {
        for k in 0..=JITTER_DOUBLINGS {
            let j = jitter * f64::from(1u32 << k);
            last = j;
            if let Some(l) = attempt(j) {
                return Ok(CovarianceFactor { points: points.to_vec(), lower_factor: l, jitter_used: j });
            }
        }
    }
    Err(Error::FactorizationFailed { points: points.len(), jitter: last })
}

fn normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Columns of `L · Z` for column-stacked standard normal vectors `z`.
fn correlate(lower: &DMatrix<f64>, z: Vec<f64>, cols: usize) -> DMatrix<f64> {
    let p = lower.nrows();
    let zm = DMatrix::from_vec(p, cols, z);
    lower * zm
}

/// `n` independent draws `L·z`, one per row.
pub fn sample_sheets<R: Rng>(factor: &CovarianceFactor, n: usize, rng: &mut R) -> DMatrix<f64> {
    let p = factor.points.len();
    let z = normals(rng, p * n);
    correlate(&factor.lower_factor, z, n).transpose()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub field: FieldSpec,
    pub domain: Domain,
    pub n_sheets: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

pub fn default_jitter() -> f64 {
    1e-10
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sheets == 0 {
            return Err(Error::Config("n_sheets must be at least 1".into()));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::Config("jitter must be nonnegative".into()));
        }
        self.field.validate(&self.domain)
    }
}

/// A shared design with its covariance factor, ready to emit sheets.
#[derive(Debug, Clone)]
pub struct CommonSampler {
    points: Arc<[Point]>,
    factor: CovarianceFactor,
    noise: NoiseLaw,
}

impl CommonSampler {
    /// `points` are observation locations; the factor is built at `A(points)`.
    pub fn new(field: &FieldSpec, points: Vec<Point>, jitter: f64) -> Result<Self> {
        let deformed: Vec<Point> = points.iter().map(|&t| field.deformation.apply(t)).collect();
        let factor = build_covariance_factor(&deformed, &field.eta1, &field.eta2, jitter)?;
        Ok(CommonSampler { points: points.into(), factor, noise: field.noise })
    }

    pub fn points(&self) -> &Arc<[Point]> {
        &self.points
    }

    pub fn factor(&self) -> &CovarianceFactor {
        &self.factor
    }

    /// Sheets with the given ids. Sheet `j` depends only on `(seed, j)`, so
    /// any id range is a consistent slice of a larger sample.
    pub fn sheets(&self, seed: u64, ids: Range<u64>, exec: Exec) -> Vec<Sheet> {
        let ids: Vec<u64> = ids.collect();
        let p = self.points.len();
        let chunks: Vec<&[u64]> = ids.chunks(CHUNK).collect();
        let out = exec.map_slice(&chunks, |chunk| {
            let mut rngs: Vec<_> = chunk.iter().map(|&id| sheet_rng(seed, id)).collect();
            let mut z = Vec::with_capacity(p * chunk.len());
            for rng in rngs.iter_mut() {
                z.extend(normals(rng, p));
            }
            let x = correlate(&self.factor.lower_factor, z, chunk.len());
            chunk
                .iter()
                .zip(rngs.iter_mut())
                .enumerate()
                .map(|(c, (&id, rng))| {
                    let signal = x.column(c);
                    let values = add_noise(&self.noise, &self.points, signal.iter().copied(), rng);
                    Sheet { id, points: Arc::clone(&self.points), values }
                })
                .collect::<Vec<_>>()
        });
        out.into_iter().flatten().collect()
    }
}

fn add_noise<R: Rng>(noise: &NoiseLaw, points: &[Point], signal: impl Iterator<Item = f64>, rng: &mut R) -> Vec<f64> {
    if matches!(noise, NoiseLaw::None) {
        return signal.collect();
    }
    signal
        .zip(points.iter())
        .map(|(x, &t)| {
            let e: f64 = rng.sample(StandardNormal);
            x + noise.sigma(t, x) * e
        })
        .collect()
}

/// One draw of the noiseless field `X = W∘A` at arbitrary points.
pub fn sample_field_at<R: Rng>(field: &FieldSpec, points: &[Point], jitter: f64, rng: &mut R) -> Result<Vec<f64>> {
    let deformed: Vec<Point> = points.iter().map(|&t| field.deformation.apply(t)).collect();
    let factor = build_covariance_factor(&deformed, &field.eta1, &field.eta2, jitter)?;
    let z = normals(rng, points.len());
    Ok(correlate(&factor.lower_factor, z, 1).column(0).iter().copied().collect())
}

fn independent_sheet(config: &SimConfig, id: u64) -> Result<Sheet> {
    let mut rng = sheet_rng(config.seed, id);
    let field = &config.field;
    let m = match field.design.kind {
        DesignKind::IndependentUniform => field.mean_points_m.round().max(1.0) as usize,
        _ => {
            let law = Poisson::new(field.mean_points_m).map_err(|e| Error::Config(format!("poisson design: {e}")))?;
            // An empty sheet carries no information; redraw until nonempty.
            loop {
                let m: f64 = law.sample(&mut rng);
                if m >= 1.0 {
                    break m as usize;
                }
            }
        }
    };
    let d = &config.domain;
    let points: Vec<Point> =
        (0..m).map(|_| [rng.random_range(d.t1_min..=d.t1_max), rng.random_range(d.t2_min..=d.t2_max)]).collect();
    let signal = sample_field_at(field, &points, config.jitter, &mut rng)?;
    let values = add_noise(&field.noise, &points, signal.into_iter(), &mut rng);
    Ok(Sheet::new(id, points, values))
}

pub fn generate_dataset(config: &SimConfig) -> Result<SurfaceDataset> {
    generate_dataset_with(config, Exec::default())
}

pub fn generate_dataset_with(config: &SimConfig, exec: Exec) -> Result<SurfaceDataset> {
    config.validate()?;
    let n = config.n_sheets as u64;
    let sheets = match config.field.design.common_points(&config.domain)? {
        Some(points) => CommonSampler::new(&config.field, points, config.jitter)?.sheets(config.seed, 0..n, exec),
        None => exec.try_map_range(config.n_sheets, |j| independent_sheet(config, j as u64))?,
    };
    Ok(SurfaceDataset { sheets, domain: config.domain, noise_known_sigma: config.field.noise.known_sigma() })
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use crate::field::DesignLaw;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const H5: ScalarField = ScalarField::Constant { value: 0.5 };

    #[test]
    fn c_norm_oracles() {
        assert_relative_eq!(c_norm(0.5).unwrap(), 2.506628274631000502415765284811045253007, max_relative = 1e-14);
        // 40-digit reference from an arbitrary-precision evaluation
        assert_relative_eq!(c_norm(0.25).unwrap(), 3.166466974172319077159806068909116911323, max_relative = 1e-13);
        assert!(c_norm(0.0).is_err());
        assert!(c_norm(1.0).is_err());
        for i in 1..100 {
            let c = c_norm(i as f64 / 100.0).unwrap();
            assert!(c.is_finite() && c > 0.0);
        }
    }

    #[test]
    fn d_factor_oracles() {
        assert_eq!(d_factor(0.3, 0.3).unwrap(), 0.5);
        assert_relative_eq!(
            d_factor(0.3, 0.7).unwrap(),
            0.4261564452817933071963052979870803239133,
            max_relative = 1e-13
        );
        assert_eq!(d_factor(0.2, 0.8).unwrap(), d_factor(0.8, 0.2).unwrap());
        assert!(d_factor(0.3, 1.2).is_err());
    }

    #[test]
    fn covariance_examples() {
        assert_eq!(
            mfbs_covariance([1.0, 1.0], [1.0, 1.0], &ScalarField::constant(0.3), &ScalarField::constant(0.8)).unwrap(),
            1.0
        );
        assert_relative_eq!(mfbs_covariance([2.0, 1.0], [2.0, 1.0], &H5, &H5).unwrap(), 2.0, max_relative = 1e-15);
        assert_relative_eq!(mfbs_covariance([1.0, 1.0], [2.0, 1.0], &H5, &H5).unwrap(), 1.0, max_relative = 1e-15);
        assert!(mfbs_covariance([0.0, 1.0], [1.0, 1.0], &H5, &H5).is_err());
    }

    #[test]
    fn increment_moment_closed_form() {
        let h = 0.35;
        let e = ScalarField::constant(h);
        let (t, d) = ([1.4, 1.6], 0.08);
        let a = [t[0] - d / 2.0, t[1]];
        let b = [t[0] + d / 2.0, t[1]];
        let cov = |u, v| mfbs_covariance(u, v, &e, &e).unwrap();
        let m2 = cov(a, a) + cov(b, b) - 2.0 * cov(a, b);
        assert_relative_eq!(m2, t[1].powf(2.0 * h) * d.powf(2.0 * h), max_relative = 1e-10);
    }

    #[test]
    fn single_point_factor() {
        let f = build_covariance_factor(&[[1.0, 1.0]], &H5, &H5, 1e-10).unwrap();
        assert_eq!(f.lower_factor[(0, 0)], 1.0);
        assert_eq!(f.jitter_used, 0.0);
    }

    #[test]
    fn duplicated_points_need_jitter() {
        let f = build_covariance_factor(&[[1.0, 1.0], [1.0, 1.0]], &H5, &H5, 1e-10).unwrap();
        assert!(f.jitter_used > 0.0);
        assert!(matches!(
            build_covariance_factor(&[[1.0, 1.0], [1.0, 1.0]], &H5, &H5, 0.0),
            Err(Error::FactorizationFailed { .. })
        ));
    }

    #[test]
    fn factor_reproduces_covariance() {
        let pts: Vec<Point> = Domain::unit_square_at_one().interior_lattice(6, 0.0);
        let e1 = ScalarField::Linear { c0: 0.3, c1: 0.1, c2: 0.0 };
        let e2 = ScalarField::constant(0.6);
        let f = build_covariance_factor(&pts, &e1, &e2, 1e-10).unwrap();
        let s = assemble_covariance(&pts, &e1, &e2).unwrap();
        let r = &f.lower_factor * f.lower_factor.transpose();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let tol = 1e-8 + if i == j { f.jitter_used } else { 0.0 };
                assert!((r[(i, j)] - s[(i, j)]).abs() <= tol);
            }
        }
    }

    #[test]
    fn sample_moments_match_covariance() {
        let pts = vec![[1.0, 1.0], [1.2, 1.5], [1.9, 1.1], [1.5, 1.5], [2.0, 2.0]];
        let f = build_covariance_factor(&pts, &H5, &H5, 1e-10).unwrap();
        let s = assemble_covariance(&pts, &H5, &H5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 5000;
        let x = sample_sheets(&f, n, &mut rng);
        for i in 0..pts.len() {
            let mean = x.column(i).mean();
            assert!(mean.abs() <= 4.0 * (s[(i, i)] / n as f64).sqrt());
            for j in 0..pts.len() {
                let c = x.column(i).dot(&x.column(j)) / n as f64;
                let err = (c - s[(i, j)]).abs();
                assert!(err <= 0.1 * s[(i, j)].abs() || err <= 0.02, "{i},{j}: {c} vs {}", s[(i, j)]);
            }
        }
    }

    fn grid_config(n: usize, seed: u64) -> SimConfig {
        SimConfig {
            field: FieldSpec::isotropic(0.5, DesignLaw::grid(5, 5)),
            domain: Domain::unit_square_at_one(),
            n_sheets: n,
            seed,
            jitter: 1e-10,
        }
    }

    #[test]
    fn dataset_is_reproducible_and_prefix_consistent() {
        let a = generate_dataset(&grid_config(70, 3)).unwrap();
        let b = generate_dataset(&grid_config(70, 3)).unwrap();
        assert_eq!(a, b);
        let small = generate_dataset(&grid_config(2, 3)).unwrap();
        assert_eq!(small.sheets[..], a.sheets[..2]);
        let seq = generate_dataset_with(&grid_config(70, 3), Exec::Sequential).unwrap();
        assert_eq!(seq, a);
        let other = generate_dataset(&grid_config(2, 4)).unwrap();
        assert_ne!(other.sheets[0].values, a.sheets[0].values);
    }

    #[test]
    fn poisson_design_mean_size() {
        let mut cfg = grid_config(1000, 5);
        cfg.field.design = DesignLaw::independent(DesignKind::IndependentPoisson);
        cfg.field.mean_points_m = 50.0;
        let ds = generate_dataset(&cfg).unwrap();
        let mean = ds.sheets.iter().map(|s| s.len()).sum::<usize>() as f64 / 1000.0;
        assert!((mean - 50.0).abs() < 5.0, "{mean}");
        assert!(ds.sheets.iter().all(|s| s.points.iter().all(|p| ds.domain.contains(*p))));
    }

    #[test]
    fn noise_is_added() {
        let mut cfg = grid_config(3, 5);
        let clean = generate_dataset(&cfg).unwrap();
        cfg.field.noise = NoiseLaw::Constant { sigma: 0.5 };
        let noisy = generate_dataset(&cfg).unwrap();
        assert_eq!(noisy.noise_known_sigma, Some(0.5));
        assert_ne!(clean.sheets[0].values, noisy.sheets[0].values);
    }
}
