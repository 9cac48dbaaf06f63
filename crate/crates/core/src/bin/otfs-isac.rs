use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use otfs_isac::config::RunConfig;
use otfs_isac::experiments::output::{af_rows, Manifest, OutputDir, VERSION};
use otfs_isac::experiments::region::{normalized, run_starts};
use otfs_isac::experiments::throughput::{perfect_csi_throughput, throughput_designs};
use otfs_isac::experiments::{
    export_power_pattern, run_af_slices, run_capacity_bound, run_capacity_vs_velocity, run_region, run_throughput,
    with_eta, Setup,
};
use otfs_isac::optimizer::{canonicalize, peak_energy_fraction};
use otfs_isac::parallel::with_workers;

#[derive(Parser)]
#[command(
    name = "otfs-isac",
    version,
    about = "OTFS dual-function radar/communication experiments"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; each command has a built-in default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Channel realizations.
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand, Clone)]
enum Command {
    /// OTFS and OFDM capacity lower bounds versus SNR and speed.
    CapacityBound,
    /// One optimized design per start with its convergence trace.
    Optimize,
    /// ISL-SINR region of the optimized, flat and cluster designs.
    Region,
    /// Empirical ambiguity-function slices of optimized designs.
    Af {
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1")]
        eta: Vec<f64>,
    },
    /// Frame throughput versus SNR.
    Throughput,
    /// Per-cell DD power layout of optimized designs.
    PowerPattern {
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1")]
        eta: Vec<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::CapacityBound => "capacity-bound",
            Command::Optimize => "optimize",
            Command::Region => "region",
            Command::Af { .. } => "af",
            Command::Throughput => "throughput",
            Command::PowerPattern { .. } => "power-pattern",
        }
    }
}

fn load_config(common: &Common, command: &Command) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None if matches!(command, Command::CapacityBound) => RunConfig::table2(),
        None => RunConfig::table3(),
    };
    if let Some(s) = common.seed {
        cfg.experiment.seed = s;
    }
    if let Some(t) = common.trials {
        cfg.experiment.trials = t;
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

#[derive(Serialize)]
struct TraceCsvRow {
    p0: f64,
    best: bool,
    iteration: usize,
    objective: f64,
    sinr: f64,
    isl: f64,
    power_violation: f64,
    mainlobe_violation: f64,
    admm_iterations: usize,
    pilot_accepted: bool,
}

#[derive(Serialize)]
struct PilotCsvRow {
    delay: usize,
    doppler: usize,
    re: f64,
    im: f64,
    power: f64,
}

fn capacity(cfg: &RunConfig, out: &mut OutputDir) -> Result<serde_json::Value> {
    let exp = &cfg.experiment;
    exp.require("snr_db", &exp.snr_db)?;
    let setup = Setup::new(cfg)?;
    let rep = run_capacity_bound(&setup, &exp.snr_db, exp.trials, exp.seed, exp.ofdm_pilot_ratio)?;
    out.write_csv("capacity_vs_snr_bits_per_sample.csv", &rep.points)?;
    let mut summary = json!({
        "units": "bits per transmitted sample",
        "snr": rep.points,
    });
    if !exp.velocity_kmh.is_empty() {
        let vel = run_capacity_vs_velocity(
            &setup,
            &exp.velocity_kmh,
            cfg.channel.snr_db,
            exp.trials,
            exp.seed,
            exp.ofdm_pilot_ratio,
        )?;
        out.write_csv("capacity_vs_velocity_bits_per_sample.csv", &vel)?;
        summary["velocity_snr_db"] = json!(cfg.channel.snr_db);
    }
    Ok(summary)
}

fn optimize(cfg: &RunConfig, out: &mut OutputDir) -> Result<serde_json::Value> {
    let setup = Setup::new(cfg)?;
    let consts = setup.sensing(cfg)?;
    let problem = setup.problem(&consts);
    let p0 = &cfg.experiment.p0_grid;
    let opt = normalized(&problem, &cfg.optimizer, p0)?;
    let runs = run_starts(&problem, &opt, p0)?;
    let mut rows = Vec::new();
    for (i, (start, r)) in runs.runs.iter().enumerate() {
        for t in &r.trace {
            rows.push(TraceCsvRow {
                p0: *start,
                best: i == runs.best,
                iteration: t.iteration,
                objective: t.objective,
                sinr: t.sinr,
                isl: t.isl,
                power_violation: t.power_violation,
                mainlobe_violation: t.mainlobe_violation,
                admm_iterations: t.admm_iterations,
                pilot_accepted: t.pilot_accepted,
            });
        }
    }
    out.write_csv("ao_trace.csv", &rows)?;
    let best = runs.best();
    let canon = canonicalize(&best.design.x_p, &setup.arr, &setup.frame)?;
    let mut pilot = Vec::new();
    for k in 0..setup.frame.n {
        for l in 0..setup.frame.m {
            let z = canon.grid[(l, k)];
            if z.norm() > 0.0 {
                pilot.push(PilotCsvRow {
                    delay: l,
                    doppler: k,
                    re: z.re,
                    im: z.im,
                    power: z.norm_sqr(),
                });
            }
        }
    }
    out.write_csv("pilot_canonical.csv", &pilot)?;
    Ok(json!({
        "eta": opt.eta,
        "sinr_ref": opt.sinr_ref,
        "isl_ref": opt.isl_ref,
        "best_p0": runs.best_p0(),
        "objective": best.eval.objective,
        "sinr": best.eval.sinr,
        "isl": best.eval.isl,
        "p_d": best.design.p_d,
        "peak_fraction": canon.peak_fraction,
        "iterations": best.iterations(),
        "converged": best.converged,
    }))
}

fn region(cfg: &RunConfig, out: &mut OutputDir) -> Result<serde_json::Value> {
    let exp = &cfg.experiment;
    exp.require("eta", &exp.eta)?;
    exp.require("splits", &exp.splits)?;
    let setup = Setup::new(cfg)?;
    let consts = setup.sensing(cfg)?;
    let problem = setup.problem(&consts);
    let opt = normalized(&problem, &cfg.optimizer, &exp.p0_grid)?;
    let rep = run_region(&problem, &opt, &exp.eta, &exp.splits, &exp.p0_grid)?;
    out.write_csv("region.csv", &rep.points)?;
    Ok(json!({
        "isl_db_reference": "isl_db = 10 log10(ISL / isl_ref), isl_ref = ISL of the eta = 1 design",
        "sinr_ref": rep.sinr_ref,
        "isl_ref": rep.isl_ref,
        "undominated_baseline_points": rep.undominated.len(),
        "gaps_db": rep.gaps,
    }))
}

fn af(cfg: &RunConfig, etas: &[f64], out: &mut OutputDir) -> Result<serde_json::Value> {
    let exp = &cfg.experiment;
    let setup = Setup::new(cfg)?;
    let consts = setup.sensing(cfg)?;
    let problem = setup.problem(&consts);
    let opt = normalized(&problem, &cfg.optimizer, &exp.p0_grid)?;
    let slices = run_af_slices(&problem, &opt, etas, &exp.p0_grid, exp.seed, exp.af_trials)?;
    out.write_csv("af_slices.csv", &af_rows(&slices))?;
    let peaks: Vec<_> = slices
        .iter()
        .map(|s| {
            json!({
                "eta": s.eta,
                "max_zero_doppler_sidelobe": s.max_zero_doppler_sidelobe,
                "max_zero_delay_sidelobe": s.max_zero_delay_sidelobe,
            })
        })
        .collect();
    Ok(json!({ "normalization": "relative to the mainlobe", "sidelobes": peaks }))
}

fn throughput(cfg: &RunConfig, out: &mut OutputDir) -> Result<serde_json::Value> {
    let exp = &cfg.experiment;
    exp.require("snr_db", &exp.snr_db)?;
    if exp.modulations.is_empty() {
        bail!("experiment.modulations must list at least one constellation");
    }
    let setup = Setup::new(cfg)?;
    let consts = setup.sensing(cfg)?;
    let problem = setup.problem(&consts);
    let opt = normalized(&problem, &cfg.optimizer, &exp.p0_grid)?;
    let designs = throughput_designs(&problem, &opt, &exp.p0_grid)?;
    let rep = run_throughput(
        &setup,
        &designs,
        &exp.modulations,
        &exp.snr_db,
        cfg.optimizer.p_max,
        exp.trials,
        exp.noise_trials,
        exp.seed,
    )?;
    out.write_csv("throughput_bit_per_s.csv", &rep.points)?;
    let ceiling = perfect_csi_throughput(
        &setup,
        &designs[0].point,
        &exp.modulations,
        exp.trials.min(10),
        exp.seed,
    )?;
    Ok(json!({
        "units": "bit/s",
        "designs": rep.designs,
        "perfect_csi_noiseless": ceiling,
    }))
}

fn power_pattern(cfg: &RunConfig, etas: &[f64], out: &mut OutputDir) -> Result<serde_json::Value> {
    let exp = &cfg.experiment;
    let setup = Setup::new(cfg)?;
    let consts = setup.sensing(cfg)?;
    let problem = setup.problem(&consts);
    let opt = normalized(&problem, &cfg.optimizer, &exp.p0_grid)?;
    let mut summary = Vec::new();
    for &eta in etas {
        let runs = run_starts(&problem, &with_eta(&opt, eta), &exp.p0_grid)?;
        let d = &runs.best().design;
        let pat = export_power_pattern(d, &setup.arr, &setup.frame, &consts)?;
        out.write_csv(&format!("power_pattern_eta_{eta:.2}.csv"), &pat.cells)?;
        summary.push(json!({
            "eta": eta,
            "peak_fraction": peak_energy_fraction(&d.x_p),
            "data_power": pat.data_power,
            "transmit_power": pat.transmit_power,
            "consistency": pat.consistency,
        }));
    }
    Ok(json!({ "patterns": summary }))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = load_config(&cli.common, &cli.command)?;
    let mut out = OutputDir::create(&cli.common.out)?;
    let start = Instant::now();
    let command = cli.command.clone();
    let summary = with_workers(cli.common.workers, || -> Result<serde_json::Value> {
        match &command {
            Command::CapacityBound => capacity(&cfg, &mut out),
            Command::Optimize => optimize(&cfg, &mut out),
            Command::Region => region(&cfg, &mut out),
            Command::Af { eta } => af(&cfg, eta, &mut out),
            Command::Throughput => throughput(&cfg, &mut out),
            Command::PowerPattern { eta } => power_pattern(&cfg, eta, &mut out),
        }
    })?;
    let manifest = Manifest {
        command: command.name(),
        version: VERSION,
        seed: cfg.experiment.seed,
        workers: cli.common.workers,
        wall_time_s: start.elapsed().as_secs_f64(),
        files: out.files().to_vec(),
        summary,
        config: &cfg,
    };
    out.write_json("manifest.json", &manifest)?;
    log::info!("wrote {} in {:.1} s", out.root().display(), manifest.wall_time_s);
    Ok(())
}
