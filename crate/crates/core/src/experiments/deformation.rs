use super::{mean, median, prefix, DataSource, ExperimentConfig, ResultTable};
use crate::deformation::{
    deformation_with, estimate_deformation_batch, project_inward, quadrature_nodes, DeformationAnchor,
    DeformationEstimate, NodeRule, TruthField, DEFAULT_NODES,
};
use crate::error::Result;
use crate::field::Point;
use crate::par::Exec;
use crate::regularity::evaluation_grid;

/// Half the evaluation-lattice spacing, so every path node lands on a lattice
/// shared by all targets and is estimated once.
fn node_rule(config: &ExperimentConfig, n: usize) -> NodeRule {
    if n < 2 {
        return NodeRule::Fixed(DEFAULT_NODES);
    }
    let margin = 6.0 * config.reg.delta;
    let [a, b] = config.sim.domain.sides();
    NodeRule::Step((a - margin).min(b - margin) / (n - 1) as f64 / 2.0)
}

fn rel_errors(config: &ExperimentConfig, est: &[DeformationEstimate]) -> (Vec<f64>, Vec<f64>) {
    est.iter()
        .map(|e| {
            let a = config.sim.field.deformation.apply(e.t);
            ((e.a1_hat - a[0]).abs() / a[0].abs(), (e.a2_hat - a[1]).abs() / a[1].abs())
        })
        .unzip()
}

/// Relative `L¹` error of both recovered deformation components over an
/// interior lattice, per sheet count. With `options.oracle` the integrands
/// come from the true field, isolating quadrature error.
pub fn run_deformation(config: &ExperimentConfig, exec: Exec) -> Result<ResultTable> {
    let ns = config.sweep_counts("n_sheets", config.sim.n_sheets)?;
    let domain = config.sim.domain;
    let grid = config.grid(5);
    let targets = evaluation_grid(&domain, grid, config.reg.delta);
    let anchor =
        config.options.anchor.unwrap_or_else(|| DeformationAnchor::from_truth(&config.sim.field, domain.center()));
    anchor.validate(&domain)?;

    let mut table =
        ResultTable::new(&["N", "mean_rel_err_a1", "mean_rel_err_a2", "median_rel_err_a1", "median_rel_err_a2"]);
    let mut push = |n: usize, e1: &[f64], e2: &[f64]| {
        table.push(vec![n.into(), mean(e1).into(), mean(e2).into(), median(e1).into(), median(e2).into()]);
    };

    if config.options.oracle {
        let rule = NodeRule::Fixed(config.options.n_nodes.unwrap_or(201));
        let est = deformation_with(&TruthField(&config.sim.field), &targets, &anchor, rule)?;
        let (e1, e2) = rel_errors(config, &est);
        for &n in &ns {
            push(n, &e1, &e2);
        }
    } else {
        let rule = node_rule(config, grid);
        let nodes: Vec<Point> = quadrature_nodes(&targets, &anchor, rule)?
            .into_iter()
            .map(|p| project_inward(&domain, config.reg.delta, p))
            .collect::<Result<_>>()?;
        let source = DataSource::new(config, &nodes)?;
        let n_max = *ns.iter().max().expect("nonempty sweep");
        let errs: Vec<Vec<(Vec<f64>, Vec<f64>)>> = exec.try_map_range(config.replicates(), |r| {
            let ds = source.dataset(config.replicate_seed(r), n_max, Exec::Sequential)?;
            ns.iter()
                .map(|&n| {
                    let est = estimate_deformation_batch(
                        &prefix(&ds, n),
                        &targets,
                        &anchor,
                        &config.reg,
                        rule,
                        Exec::Sequential,
                    )?;
                    Ok(rel_errors(config, &est))
                })
                .collect()
        })?;
        for (ni, &n) in ns.iter().enumerate() {
            let e1: Vec<f64> = errs.iter().flat_map(|rep| rep[ni].0.iter().copied()).collect();
            let e2: Vec<f64> = errs.iter().flat_map(|rep| rep[ni].1.iter().copied()).collect();
            push(n, &e1, &e2);
        }
    }
    super::stamp(&mut table, config);
    Ok(table)
}
