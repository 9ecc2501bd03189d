use super::{mean, prefix, DataSource, ExperimentConfig, ResultTable};
use crate::error::Result;
use crate::field::TrueRegularity;
use crate::par::Exec;
use crate::regularity::{estimate_batch, evaluation_grid, RegularityEstimate};

struct Truth {
    anisotropic: bool,
    /// Per-axis constant attached to the smaller exponent.
    l_small: [f64; 2],
}

fn truth_of(tr: &TrueRegularity) -> Truth {
    let [h1, h2] = tr.h;
    let l_small = if h1 == h2 {
        [tr.l1[0] + tr.l2[0], tr.l1[1] + tr.l2[1]]
    } else if h1 < h2 {
        tr.l1
    } else {
        tr.l2
    };
    Truth { anisotropic: h1 != h2, l_small }
}

/// Detection rate of the anisotropy test, plus the accuracy of the constant
/// attached to the smaller exponent (`L̂₁` in estimator terms).
pub fn run_anisotropy(config: &ExperimentConfig, exec: Exec) -> Result<ResultTable> {
    let ns = config.sweep_counts("n_sheets", config.sim.n_sheets)?;
    let taus = config.sweep_or("tau", vec![config.reg.tau]);
    let targets = evaluation_grid(&config.sim.domain, config.grid(7), config.reg.delta);
    let truth: Vec<Truth> = targets.iter().map(|&t| truth_of(&config.sim.field.true_regularity(t))).collect();
    let source = DataSource::new(config, &targets)?;
    let n_max = *ns.iter().max().expect("nonempty sweep");
    let reps = config.replicates();
    let params: Vec<_> = taus.iter().map(|&tau| config.reg.with_tau(tau)).collect();
    for p in &params {
        p.validate()?;
    }

    // [replicate][N][tau][point]
    let est: Vec<Vec<Vec<Vec<RegularityEstimate>>>> = exec.try_map_range(reps, |r| {
        let ds = source.dataset(config.replicate_seed(r), n_max, Exec::Sequential)?;
        ns.iter()
            .map(|&n| {
                let sub = prefix(&ds, n);
                params.iter().map(|p| estimate_batch(&sub, &targets, p, Exec::Sequential)).collect()
            })
            .collect()
    })?;

    let mut table = ResultTable::new(&[
        "N",
        "tau",
        "truth_anisotropic",
        "detection_rate",
        "error_rate",
        "mean_h_low",
        "mean_h_high",
        "l_rel_err",
        "l_rel_bias",
    ]);
    let events = (reps * targets.len()) as f64;
    let truth_rate = truth.iter().filter(|t| t.anisotropic).count() as f64 / targets.len() as f64;
    for (ni, &n) in ns.iter().enumerate() {
        for (ti, &tau) in taus.iter().enumerate() {
            let cell = |r: usize| &est[r][ni][ti];
            let mut detected = 0usize;
            let mut wrong = 0usize;
            let (mut lo, mut hi) = (Vec::new(), Vec::new());
            for r in 0..reps {
                for (e, tr) in cell(r).iter().zip(&truth) {
                    detected += e.anisotropic as usize;
                    wrong += (e.anisotropic != tr.anisotropic) as usize;
                    lo.push(e.h_low);
                    hi.push(e.h_high);
                }
            }
            // relative error per (replicate, point, axis) and relative bias of
            // the across-replicate mean per (point, axis)
            let (mut err, mut bias) = (Vec::new(), Vec::new());
            for (p, tr) in truth.iter().enumerate() {
                for axis in 0..2 {
                    let l = tr.l_small[axis];
                    if !(l > 0.0) {
                        continue;
                    }
                    let vals: Vec<f64> = (0..reps).map(|r| cell(r)[p].l1[axis]).collect();
                    err.extend(vals.iter().map(|v| (v - l).abs() / l));
                    bias.push((mean(&vals) - l).abs() / l);
                }
            }
            table.push(vec![
                n.into(),
                tau.into(),
                truth_rate.into(),
                (detected as f64 / events).into(),
                (wrong as f64 / events).into(),
                mean(&lo).into(),
                mean(&hi).into(),
                mean(&err).into(),
                mean(&bias).into(),
            ]);
        }
    }
    super::stamp(&mut table, config);
    Ok(table)
}
