use super::{mean, prefix, sd, DataSource, ExperimentConfig, ResultTable};
use crate::error::Result;
use crate::par::Exec;
use crate::regularity::{estimate_batch, evaluation_grid};

/// Empirical tail probabilities `P̂(|Ĥ − H| ≥ ε)` for both exponents; a
/// probability is the fraction of (replicate, point) events.
pub fn run_concentration(config: &ExperimentConfig, exec: Exec) -> Result<ResultTable> {
    let ns = config.sweep_counts("n_sheets", config.sim.n_sheets)?;
    let eps = config.sweep_or("epsilon", vec![0.05]);
    let targets = evaluation_grid(&config.sim.domain, config.grid(7), config.reg.delta);
    let truth: Vec<[f64; 2]> = targets
        .iter()
        .map(|&t| {
            let h = config.sim.field.true_regularity(t).h;
            [h[0].min(h[1]), h[0].max(h[1])]
        })
        .collect();
    let source = DataSource::new(config, &targets)?;
    let n_max = *ns.iter().max().expect("nonempty sweep");
    let reps = config.replicates();

    // per replicate, per N: (h_low, h_high) at each target
    let est: Vec<Vec<Vec<[f64; 2]>>> = exec.try_map_range(reps, |r| {
        let ds = source.dataset(config.replicate_seed(r), n_max, Exec::Sequential)?;
        ns.iter()
            .map(|&n| {
                let e = estimate_batch(&prefix(&ds, n), &targets, &config.reg, Exec::Sequential)?;
                Ok(e.iter().map(|e| [e.h_low, e.h_high]).collect())
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut table = ResultTable::new(&[
        "N",
        "epsilon",
        "phat_low",
        "phat_high",
        "mean_h_low",
        "sd_h_low",
        "mean_h_high",
        "sd_h_high",
    ]);
    for (ni, &n) in ns.iter().enumerate() {
        let all = |k: usize| -> Vec<f64> { est.iter().flat_map(|rep| rep[ni].iter().map(move |v| v[k])).collect() };
        // across-replicate sd at each point, averaged over points
        let point_sd = |k: usize| -> f64 {
            let per: Vec<f64> =
                (0..targets.len()).map(|p| sd(&est.iter().map(|rep| rep[ni][p][k]).collect::<Vec<_>>())).collect();
            mean(&per)
        };
        let (sd_low, sd_high) = (point_sd(0), point_sd(1));
        for &e in &eps {
            let tail = |k: usize| -> f64 {
                let hits = est
                    .iter()
                    .flat_map(|rep| rep[ni].iter().zip(&truth).map(move |(v, h)| (v[k] - h[k]).abs() >= e))
                    .filter(|&b| b)
                    .count();
                hits as f64 / (reps * targets.len()) as f64
            };
            table.push(vec![
                n.into(),
                e.into(),
                tail(0).into(),
                tail(1).into(),
                mean(&all(0)).into(),
                sd_low.into(),
                mean(&all(1)).into(),
                sd_high.into(),
            ]);
        }
    }
    super::stamp(&mut table, config);
    Ok(table)
}
