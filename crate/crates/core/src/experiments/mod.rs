//! Monte Carlo harness: every scenario is a deterministic function of its
//! configuration, with replicate `r` drawing from substream `(base_seed, r)`.

mod anisotropy;
mod concentration;
mod deformation;
mod expansion;
mod risk;
mod table;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::deformation::DeformationAnchor;
use crate::error::{Error, Result};
use crate::field::{Point, SurfaceDataset};
use crate::mfbs::{generate_dataset_with, CommonSampler, SimConfig};
use crate::par::Exec;
use crate::regularity::{stencil_points, RegParams};
use crate::rng::derive_seed;
use crate::smoothing::KernelSpec;

pub use anisotropy::run_anisotropy;
pub use concentration::run_concentration;
pub use deformation::run_deformation;
pub use expansion::{expansion_sequences, run_expansion_checks, sequence_bounded, ExpansionSequences};
pub use risk::run_risk_scaling;
pub use table::{Cell, ResultTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Concentration,
    Anisotropy,
    Deformation,
    RiskScaling,
    ExpansionChecks,
}

impl Scenario {
    pub fn default_replicates(self) -> usize {
        match self {
            Scenario::Deformation => 50,
            Scenario::ExpansionChecks => 1,
            _ => 200,
        }
    }

    fn sweep_keys(self) -> &'static [&'static str] {
        match self {
            Scenario::Concentration => &["n_sheets", "epsilon"],
            Scenario::Anisotropy => &["n_sheets", "tau"],
            Scenario::Deformation => &["n_sheets"],
            Scenario::RiskScaling => &["m0"],
            Scenario::ExpansionChecks => &[],
        }
    }
}

/// How the sheets are observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    /// Sheets are observed exactly at every point an estimator reads.
    #[default]
    Exact,
    /// Sheets follow `sim.field.design`; estimators use `reg.policy`.
    Design,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionOptions {
    #[serde(default)]
    pub t: Option<Point>,
    #[serde(default = "default_direction")]
    pub direction: [f64; 2],
    #[serde(default = "default_k_min")]
    pub k_min: u32,
    #[serde(default = "default_k_max")]
    pub k_max: u32,
}

fn default_direction() -> [f64; 2] {
    [1.0, 1.0]
}
fn default_k_min() -> u32 {
    2
}
fn default_k_max() -> u32 {
    10
}

impl Default for ExpansionOptions {
    fn default() -> Self {
        ExpansionOptions { t: None, direction: default_direction(), k_min: default_k_min(), k_max: default_k_max() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOptions {
    /// Side of the evaluation lattice (7 by default, 5 for deformation).
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default)]
    pub observation: Observation,
    /// Deformation: integrate the true quantities instead of estimates.
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub anchor: Option<DeformationAnchor>,
    /// Deformation oracle mode: nodes per integral.
    #[serde(default)]
    pub n_nodes: Option<usize>,
    /// Risk: learning sheets used for the plug-in plan.
    #[serde(default)]
    pub learning_sheets: Option<usize>,
    /// Risk: prediction location (domain centre by default).
    #[serde(default)]
    pub target: Option<Point>,
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    /// Risk: side of the noisy common grid used to estimate the noise level.
    #[serde(default)]
    pub noise_grid: Option<usize>,
    /// Risk: number of sheets in that noisy sample.
    #[serde(default)]
    pub noise_sheets: Option<usize>,
    #[serde(default)]
    pub expansion: ExpansionOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub replicates: Option<usize>,
    pub sim: SimConfig,
    pub reg: RegParams,
    #[serde(default)]
    pub sweep: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub output_path: Option<String>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub options: ScenarioOptions,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, sim: SimConfig, reg: RegParams) -> Self {
        ExperimentConfig {
            scenario,
            replicates: None,
            sim,
            reg,
            sweep: BTreeMap::new(),
            output_path: None,
            base_seed: 0,
            options: ScenarioOptions::default(),
        }
    }

    pub fn replicates(&self) -> usize {
        self.replicates.unwrap_or_else(|| self.scenario.default_replicates())
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == Some(0) {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        self.sim.validate()?;
        self.reg.validate()?;
        let allowed = self.scenario.sweep_keys();
        for (k, vals) in &self.sweep {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!(
                    "sweep key \"{k}\" is not used by this scenario (expected one of {allowed:?})"
                )));
            }
            if vals.is_empty() || vals.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::Config(format!("sweep \"{k}\" needs positive values")));
            }
        }
        if let Some(g) = self.options.grid {
            if g == 0 {
                return Err(Error::Config("options.grid must be positive".into()));
            }
        }
        Ok(())
    }

    /// Sweep values for `key`, falling back to `default`.
    fn sweep_or(&self, key: &str, default: Vec<f64>) -> Vec<f64> {
        self.sweep.get(key).cloned().unwrap_or(default)
    }

    fn sweep_counts(&self, key: &str, default: usize) -> Result<Vec<usize>> {
        self.sweep_or(key, vec![default as f64])
            .into_iter()
            .map(|v| {
                if v.fract() == 0.0 && v >= 1.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::Config(format!("sweep \"{key}\" needs whole numbers, got {v}")))
                }
            })
            .collect()
    }

    fn grid(&self, default: usize) -> usize {
        self.options.grid.unwrap_or(default)
    }

    fn replicate_seed(&self, r: usize) -> u64 {
        derive_seed(self.base_seed, r as u64)
    }

    fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Produces datasets whose first `n` sheets do not depend on how many more
/// are requested, so sweeps over `N` are paired.
enum DataSource {
    Common(Box<CommonSampler>, crate::field::Domain, Option<f64>),
    Independent(Box<SimConfig>),
}

impl DataSource {
    fn new(config: &ExperimentConfig, targets: &[Point]) -> Result<Self> {
        let sim = &config.sim;
        let known_sigma = sim.field.noise.known_sigma();
        let points = match config.options.observation {
            Observation::Exact => Some(stencil_points(targets, config.reg.delta)),
            Observation::Design => sim.field.design.common_points(&sim.domain)?,
        };
        Ok(match points {
            Some(p) => {
                DataSource::Common(Box::new(CommonSampler::new(&sim.field, p, sim.jitter)?), sim.domain, known_sigma)
            }
            None => DataSource::Independent(Box::new(sim.clone())),
        })
    }

    fn dataset(&self, seed: u64, n: usize, exec: Exec) -> Result<SurfaceDataset> {
        match self {
            DataSource::Common(s, domain, sigma) => Ok(SurfaceDataset {
                sheets: s.sheets(seed, 0..n as u64, exec),
                domain: *domain,
                noise_known_sigma: *sigma,
            }),
            DataSource::Independent(sim) => {
                let cfg = SimConfig { seed, n_sheets: n, ..(**sim).clone() };
                generate_dataset_with(&cfg, exec)
            }
        }
    }
}

/// A dataset restricted to its first `n` sheets.
fn prefix(ds: &SurfaceDataset, n: usize) -> SurfaceDataset {
    SurfaceDataset {
        sheets: ds.sheets[..n.min(ds.sheets.len())].to_vec(),
        domain: ds.domain,
        noise_known_sigma: ds.noise_known_sigma,
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    run_experiment_with(config, Exec::default())
}

pub fn run_experiment_with(config: &ExperimentConfig, exec: Exec) -> Result<ResultTable> {
    config.validate()?;
    match config.scenario {
        Scenario::Concentration => run_concentration(config, exec),
        Scenario::Anisotropy => run_anisotropy(config, exec),
        Scenario::Deformation => run_deformation(config, exec),
        Scenario::RiskScaling => run_risk_scaling(config, exec),
        Scenario::ExpansionChecks => run_expansion_checks(config),
    }
}

/// Config echo and version metadata sufficient to rerun the table.
fn stamp(table: &mut ResultTable, config: &ExperimentConfig) {
    table.meta("version", concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")));
    table.meta("scenario", serde_json::to_string(&config.scenario).expect("serializes").trim_matches('"'));
    table.meta("replicates", config.replicates().to_string());
    table.meta("config", config.echo());
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        assert!((ols_slope(&x, &y) + 0.5).abs() < 1e-14);
    }

    #[test]
    fn summaries() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(sd(&[1.0]), 0.0);
        assert!((sd(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}
