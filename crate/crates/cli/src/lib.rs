//! Command-line front end: strict configs, dataset files and one subcommand
//! per library stage.

pub mod io;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use aniso_surf::deformation::{estimate_deformation_batch, NodeRule, DEFAULT_NODES};
use aniso_surf::experiments::{run_experiment, ExperimentConfig};
use aniso_surf::regularity::{default_delta, evaluation_grid};
use aniso_surf::smoothing::{nw_predict, plan_from_estimate, sigma2_for};
use aniso_surf::{
    estimate_batch, generate_dataset, DeformationAnchor, KernelSpec, Point, RegParams, RegularityEstimate, SimConfig,
    SurfaceDataset,
};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::io::{invalid, parse_config, read_dataset, resolve, unix_time, write_dataset, write_output, Invalid};

#[derive(Debug, Parser)]
#[command(name = "aniso-surf", version, about = "Simulate and analyse deformed multifractional Brownian sheets")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Omit the timestamp metadata so reruns are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "ANISO_SURF_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Io {
    /// JSON configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output file (standard output when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimateFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate sheets and write a dataset file.
    Simulate(Io),
    /// Estimate local regularity at a set of points.
    Estimate {
        #[command(flatten)]
        io: Io,
        /// Dataset file, overriding the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: EstimateFormat,
    },
    /// Recover the deformation components at a set of points.
    Deform {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Predict new sheets with regularity-adaptive bandwidths.
    Smooth {
        #[command(flatten)]
        io: Io,
        /// Learning dataset, overriding the config.
        #[arg(long)]
        learning: Option<PathBuf>,
        /// Sheets to reconstruct, overriding the config.
        #[arg(long = "new")]
        new_sheets: Option<PathBuf>,
    },
    /// Run a Monte Carlo experiment and write its result table.
    Experiment(Io),
}

/// Explicit points followed by an optional interior lattice of side `grid`
/// keeping a `3Δ` margin.
fn targets(points: &[Point], grid: Option<usize>, ds: &SurfaceDataset, delta: f64) -> Result<Vec<Point>> {
    let mut out = points.to_vec();
    if let Some(n) = grid {
        out.extend(evaluation_grid(&ds.domain, n, delta));
    }
    if out.is_empty() {
        return Err(invalid("ValidationError: no target points (set `points` or `grid`)"));
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub points: Vec<Point>,
    #[serde(default)]
    pub grid: Option<usize>,
    /// Defaults follow the dataset's point spacing.
    #[serde(default)]
    pub reg: Option<RegParams>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformConfig {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    pub anchor: DeformationAnchor,
    #[serde(default)]
    pub points: Vec<Point>,
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default)]
    pub reg: Option<RegParams>,
    #[serde(default)]
    pub n_nodes: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothConfig {
    #[serde(default)]
    pub learning: Option<PathBuf>,
    #[serde(default)]
    pub new_sheets: Option<PathBuf>,
    pub targets: Vec<Point>,
    #[serde(default)]
    pub reg: Option<RegParams>,
    #[serde(default)]
    pub kernel: KernelSpec,
    /// Design density lower bound; `1/area` when omitted.
    #[serde(default)]
    pub c_density: Option<f64>,
}

/// Exit status for an error: 1 for bad input, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<Invalid>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<aniso_surf::Error>() {
            return if e.is_validation() { 1 } else { 2 };
        }
    }
    2
}

/// Parses `args`, runs the command and returns the process exit code,
/// printing a one-line diagnostic on failure.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Simulate(io) => simulate(io, &cli.global),
        Command::Estimate { io, dataset, format } => estimate(io, dataset.as_deref(), *format),
        Command::Deform { io, dataset } => deform(io, dataset.as_deref()),
        Command::Smooth { io, learning, new_sheets } => smooth(io, learning.as_deref(), new_sheets.as_deref()),
        Command::Experiment(io) => experiment(io, &cli.global),
    }
}

fn check(r: aniso_surf::Result<()>) -> Result<()> {
    r.map_err(|e| invalid(format!("ValidationError: {e}")))
}

fn provenance(global: &Global) -> Vec<(String, String)> {
    let mut meta = vec![("generator".to_string(), format!("aniso-surf {}", env!("CARGO_PKG_VERSION")))];
    if !global.deterministic {
        meta.push(("created_unix".to_string(), unix_time().to_string()));
    }
    meta
}

fn simulate(io: &Io, global: &Global) -> Result<()> {
    let mut cfg: SimConfig = parse_config(&io.config)?;
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    check(cfg.validate())?;
    let ds = generate_dataset(&cfg)?;
    let mut meta = provenance(global);
    meta.push(("seed".to_string(), cfg.seed.to_string()));
    write_output(io.out.as_deref(), |w| write_dataset(w, &ds, &meta))
}

fn dataset_path(config: &Path, flag: Option<&Path>, field: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    match (flag, field) {
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(p)) => Ok(resolve(config, p)),
        (None, None) => Err(invalid(format!("ValidationError: no {what} file given (config key or flag)"))),
    }
}

fn reg_for(reg: Option<RegParams>, ds: &SurfaceDataset) -> Result<RegParams> {
    let p = reg.unwrap_or_else(|| RegParams::new(default_delta(ds)));
    check(p.validate())?;
    Ok(p)
}

fn estimate(io: &Io, dataset: Option<&Path>, format: EstimateFormat) -> Result<()> {
    let cfg: EstimateConfig = parse_config(&io.config)?;
    let ds = read_dataset(&dataset_path(&io.config, dataset, cfg.dataset.as_ref(), "dataset")?)?;
    let reg = reg_for(cfg.reg, &ds)?;
    let targets = targets(&cfg.points, cfg.grid, &ds, reg.delta)?;
    let est = estimate_batch(&ds, &targets, &reg, Default::default())?;
    write_output(io.out.as_deref(), |w| match format {
        EstimateFormat::Jsonl => write_jsonl(w, &est),
        EstimateFormat::Csv => write_estimates_csv(w, &est),
    })
}

fn write_jsonl(w: &mut dyn Write, est: &[RegularityEstimate]) -> Result<()> {
    for e in est {
        serde_json::to_writer(&mut *w, e)?;
        writeln!(w)?;
    }
    Ok(())
}

fn write_estimates_csv(w: &mut dyn Write, est: &[RegularityEstimate]) -> Result<()> {
    let mut c = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    c.write_record([
        "t1",
        "t2",
        "h_low",
        "d_hat",
        "anisotropic",
        "h_high",
        "h1_hat",
        "h2_hat",
        "l1_axis1",
        "l1_axis2",
        "l2_axis1",
        "l2_axis2",
        "v_hat",
        "gamma_delta",
        "gamma_2delta",
        "degenerate_flags",
    ])?;
    for e in est {
        let flags: Vec<String> = e
            .degenerate_flags
            .iter()
            .map(|f| serde_json::to_string(f).map(|s| s.trim_matches('"').to_string()))
            .collect::<std::result::Result<_, _>>()?;
        let nums = [
            e.t[0],
            e.t[1],
            e.h_low,
            e.d_hat,
            e.anisotropic as u8 as f64,
            e.h_high,
            e.h1_hat,
            e.h2_hat,
            e.l1[0],
            e.l1[1],
            e.l2[0],
            e.l2[1],
            e.v_hat,
            e.gamma_values[0],
            e.gamma_values[1],
        ];
        let mut rec: Vec<String> = nums.iter().map(|v| v.to_string()).collect();
        rec.push(flags.join(";"));
        c.write_record(&rec)?;
    }
    c.flush()?;
    Ok(())
}

fn deform(io: &Io, dataset: Option<&Path>) -> Result<()> {
    let cfg: DeformConfig = parse_config(&io.config)?;
    let ds = read_dataset(&dataset_path(&io.config, dataset, cfg.dataset.as_ref(), "dataset")?)?;
    let reg = reg_for(cfg.reg, &ds)?;
    check(cfg.anchor.validate(&ds.domain))?;
    let targets = targets(&cfg.points, cfg.grid, &ds, reg.delta)?;
    let rule = NodeRule::Fixed(cfg.n_nodes.unwrap_or(DEFAULT_NODES));
    let est = estimate_deformation_batch(&ds, &targets, &cfg.anchor, &reg, rule, Default::default())?;
    write_output(io.out.as_deref(), |w| {
        writeln!(w, "t1,t2,a1_hat,a2_hat,quadrature_nodes,projected_nodes")?;
        for e in &est {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.t[0], e.t[1], e.a1_hat, e.a2_hat, e.quadrature_nodes, e.projected_nodes
            )?;
        }
        Ok(())
    })
}

fn smooth(io: &Io, learning: Option<&Path>, new_sheets: Option<&Path>) -> Result<()> {
    let cfg: SmoothConfig = parse_config(&io.config)?;
    check(cfg.kernel.validate())?;
    let learn = read_dataset(&dataset_path(&io.config, learning, cfg.learning.as_ref(), "learning")?)?;
    let new = read_dataset(&dataset_path(&io.config, new_sheets, cfg.new_sheets.as_ref(), "new-sheet")?)?;
    let reg = reg_for(cfg.reg, &learn)?;
    if cfg.targets.is_empty() {
        return Err(invalid("ValidationError: `targets` must not be empty"));
    }
    let c = cfg.c_density.unwrap_or(1.0 / learn.domain.area());
    if c.is_nan() || c <= 0.0 {
        return Err(invalid("ValidationError: c_density must be positive"));
    }
    let est = estimate_batch(&learn, &cfg.targets, &reg, Default::default())?;
    let sigma2 = sigma2_for(&learn).context("noise level for the bandwidth plan")?;
    let mut out = Vec::new();
    for sheet in &new.sheets {
        for e in &est {
            let plan = plan_from_estimate(e, sigma2, c, &cfg.kernel, sheet.len(), &learn.domain)?;
            let (y, n_eff) = nw_predict(sheet, e.t, plan.h1, plan.h2, &cfg.kernel);
            out.push((sheet.id, e.t, y, n_eff, plan));
        }
    }
    write_output(io.out.as_deref(), |w| {
        writeln!(w, "sheet_id,t1,t2,prediction,effective_n,h1,h2,omega,sigma2")?;
        for (id, t, y, n, p) in &out {
            writeln!(w, "{id},{},{},{y},{n},{},{},{},{}", t[0], t[1], p.h1, p.h2, p.omega, p.sigma2)?;
        }
        Ok(())
    })
}

fn experiment(io: &Io, global: &Global) -> Result<()> {
    let mut cfg: ExperimentConfig = parse_config(&io.config)?;
    if let Some(s) = global.seed {
        cfg.base_seed = s;
    }
    check(cfg.validate())?;
    let mut table = run_experiment(&cfg)?;
    if !global.deterministic {
        table.meta("created_unix", unix_time().to_string());
    }
    let out = io.out.clone().or_else(|| cfg.output_path.as_ref().map(|p| resolve(&io.config, Path::new(p))));
    write_output(out.as_deref(), |w| Ok(table.write_csv(w)?))
}
