use rand::Rng;
use rand_distr::StandardNormal;

use super::{mean, ols_slope, Cell, ExperimentConfig, ResultTable};
use crate::error::{Error, Result};
use crate::field::{check_margin, DesignLaw, FieldSpec, NoiseLaw, Point, Sheet, SurfaceDataset};
use crate::mfbs::{sample_field_at, CommonSampler};
use crate::par::Exec;
use crate::regularity::{estimate_regularity, stencil};
use crate::rng::{derive_seed, sheet_rng};
use crate::smoothing::{nw_predict, optimal_bandwidths, plan_from_estimate, rice_sigma_hat, BandwidthPlan, KernelSpec};

/// Exponents and constants from the truth: per axis, the constant of the
/// component that varies along it; isotropic fields sum both components.
fn oracle_inputs(field: &FieldSpec, t: Point) -> ([f64; 2], [f64; 2]) {
    let tr = field.true_regularity(t);
    if tr.h[0] == tr.h[1] {
        return ([tr.h[0]; 2], [tr.l1[0] + tr.l2[0], tr.l1[1] + tr.l2[1]]);
    }
    let mut h = [0.0; 2];
    let mut l = [0.0; 2];
    for a in 0..2 {
        (h[a], l[a]) = if tr.l1[a] > 0.0 { (tr.h[0], tr.l1[a]) } else { (tr.h[1], tr.l2[a]) };
    }
    (h, l)
}

fn in_window(p: Point, t: Point, plan: &BandwidthPlan) -> bool {
    (p[0] - t[0]).abs() <= plan.h1 && (p[1] - t[1]).abs() <= plan.h2
}

struct Draw {
    oracle_se: f64,
    plugin_se: f64,
    plugin_h: [f64; 2],
}

/// Pointwise prediction risk of the adaptive smoother versus the number of
/// points per new sheet, with oracle and plug-in bandwidths on paired draws.
pub fn run_risk_scaling(config: &ExperimentConfig, exec: Exec) -> Result<ResultTable> {
    let field = &config.sim.field;
    let domain = config.sim.domain;
    let t = config.options.target.unwrap_or_else(|| domain.center());
    check_margin(&domain, t, config.reg.delta)?;
    let kernel = config.options.kernel.unwrap_or_default();
    kernel.validate()?;
    let sigma = match field.noise {
        NoiseLaw::Constant { sigma } if sigma > 0.0 => sigma,
        _ => return Err(Error::Config("risk-scaling needs constant noise with sigma > 0".into())),
    };
    let m0s = config.sweep_counts("m0", 1000)?;
    let c = field.design.density_c(&domain);
    let (oh, ol) = oracle_inputs(field, t);
    let oracle_plans: Vec<BandwidthPlan> = m0s
        .iter()
        .map(|&m| optimal_bandwidths(t, oh, ol, sigma * sigma, c, kernel.kappa, m, domain.sides()))
        .collect::<Result<_>>()?;

    // Regularity is learned from exact sheets on the stencil at `t`; the
    // noise level from a small noisy common grid.
    let noiseless = FieldSpec { noise: NoiseLaw::None, ..field.clone() };
    let learner = CommonSampler::new(&noiseless, stencil(t, config.reg.delta).to_vec(), config.sim.jitter)?;
    let g = config.options.noise_grid.unwrap_or(30);
    let grid = DesignLaw::grid(g, g).common_points(&domain)?.expect("grid design is common");
    let noisy = CommonSampler::new(field, grid, config.sim.jitter)?;
    let n_learn = config.options.learning_sheets.unwrap_or(500) as u64;
    let n_noise = config.options.noise_sheets.unwrap_or(10) as u64;

    let draws: Vec<Vec<Draw>> = exec.try_map_range(config.replicates(), |r| {
        let seed = config.replicate_seed(r);
        let learn = SurfaceDataset {
            sheets: learner.sheets(derive_seed(seed, 0), 0..n_learn, Exec::Sequential),
            domain,
            noise_known_sigma: None,
        };
        let est = estimate_regularity(&learn, t, &config.reg)?;
        let noise_ds = SurfaceDataset {
            sheets: noisy.sheets(derive_seed(seed, 1), 0..n_noise, Exec::Sequential),
            domain,
            noise_known_sigma: None,
        };
        let sigma2_hat = rice_sigma_hat(&noise_ds)?;
        m0s.iter()
            .zip(&oracle_plans)
            .enumerate()
            .map(|(mi, (&m, oracle))| {
                let plugin = plan_from_estimate(&est, sigma2_hat, c, &kernel, m, &domain)?;
                predict_once(config, t, m, oracle, &plugin, &kernel, derive_seed(seed, 2 + mi as u64))
            })
            .collect()
    })?;

    let mut table = ResultTable::new(&[
        "M0",
        "empirical_mse",
        "plan_h1",
        "plan_h2",
        "plugin_mse",
        "plugin_h1",
        "plugin_h2",
        "mse_ratio",
    ]);
    let (mut oracle_mse, mut plugin_mse) = (Vec::new(), Vec::new());
    for (mi, &m) in m0s.iter().enumerate() {
        let avg = |f: &dyn Fn(&Draw) -> f64| mean(&draws.iter().map(|d| f(&d[mi])).collect::<Vec<_>>());
        let (o, p) = (avg(&|d| d.oracle_se), avg(&|d| d.plugin_se));
        // plug-in bandwidths vary by replicate: report their mean
        let (ph1, ph2) = (avg(&|d| d.plugin_h[0]), avg(&|d| d.plugin_h[1]));
        oracle_mse.push(o);
        plugin_mse.push(p);
        let plan = &oracle_plans[mi];
        table.push(vec![
            m.into(),
            o.into(),
            plan.h1.into(),
            plan.h2.into(),
            p.into(),
            ph1.into(),
            ph2.into(),
            (p / o).into(),
        ]);
    }
    if m0s.len() >= 3 && config.replicates() >= 2 {
        let x: Vec<f64> = m0s.iter().map(|&m| (m as f64).ln()).collect();
        let ly = |v: &[f64]| v.iter().map(|y| y.ln()).collect::<Vec<_>>();
        table.push(vec![
            "slope".into(),
            ols_slope(&x, &ly(&oracle_mse)).into(),
            Cell::Num(f64::NAN),
            Cell::Num(f64::NAN),
            ols_slope(&x, &ly(&plugin_mse)).into(),
            Cell::Num(f64::NAN),
            Cell::Num(f64::NAN),
            Cell::Num(f64::NAN),
        ]);
    }
    super::stamp(&mut table, config);
    Ok(table)
}

/// One new sheet of `m` uniform points plus the target; both predictors see
/// the same noisy observations.
fn predict_once(
    config: &ExperimentConfig,
    t: Point,
    m: usize,
    oracle: &BandwidthPlan,
    plugin: &BandwidthPlan,
    kernel: &KernelSpec,
    seed: u64,
) -> Result<Draw> {
    let d = &config.sim.domain;
    let mut rng = sheet_rng(seed, 0);
    // Only points inside a kernel window matter, so only those are simulated.
    let mut pts = vec![t];
    for _ in 0..m {
        let p = [rng.random_range(d.t1_min..=d.t1_max), rng.random_range(d.t2_min..=d.t2_max)];
        if in_window(p, t, oracle) || in_window(p, t, plugin) {
            pts.push(p);
        }
    }
    let x = sample_field_at(&config.sim.field, &pts, config.sim.jitter, &mut rng)?;
    let truth = x[0];
    let values: Vec<f64> = pts[1..]
        .iter()
        .zip(&x[1..])
        .map(|(&p, &v)| {
            let e: f64 = rng.sample(StandardNormal);
            v + config.sim.field.noise.sigma(p, v) * e
        })
        .collect();
    let sheet = Sheet::new(0, pts[1..].to_vec(), values);
    let (yo, _) = nw_predict(&sheet, t, oracle.h1, oracle.h2, kernel);
    let (yp, _) = nw_predict(&sheet, t, plugin.h1, plugin.h2, kernel);
    Ok(Draw { oracle_se: (yo - truth).powi(2), plugin_se: (yp - truth).powi(2), plugin_h: [plugin.h1, plugin.h2] })
}
