//! `fedawe-sim`: run experiments, presets, sweeps and invariant checks.
//!
//! Exit codes: 0 success, 1 configuration or usage error (including a failed
//! `verify`), 2 numerical divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use fedawe_core::harness::output::{write_rows, write_table, Format, Manifest};
use fedawe_core::harness::presets::{self, BiasParams, NonstationaryParams, SpeedupParams};
use fedawe_core::harness::{self, verify, ExperimentConfig, ExperimentOutput, SweepAxis};
use fedawe_core::{par, SimError};

#[derive(Parser, Debug)]
#[command(name = "fedawe-sim", version, about = "Federated learning under heterogeneous, time-varying client availability")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Seeds, comma separated. Overrides the config's seed list.
    #[arg(long, global = true, value_delimiter = ',', env = "FEDAWE_SIM_SEED")]
    seed: Vec<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,

    /// Record per-round wallclock seconds (breaks byte-for-byte reproducibility).
    #[arg(long, global = true)]
    timing: bool,

    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run every algorithm and seed of one experiment.
    Run {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// Run the experiment behind a config-style preset (`ordering`, `speedup`).
        #[arg(long)]
        preset: Option<String>,
    },
    /// Run a named preset study.
    Preset {
        #[arg(long = "preset", value_name = "NAME", required_unless_present = "name")]
        flag: Option<String>,
        name: Option<String>,
    },
    /// Run the invariant suites.
    Verify,
    /// Run a config over a parameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Grid axis, e.g. `gamma=0,0.3,0.5`; repeat for a Cartesian product.
        /// Axes: gamma, p, eta, local_steps, clients.
        #[arg(long = "grid", required = true)]
        grid: Vec<String>,
    },
}

/// Revision of the source tree the binary was built from.
fn git_describe() -> Option<String> {
    Some(env!("FEDAWE_GIT_DESCRIBE").to_string()).filter(|s| !s.is_empty())
}

fn seeds_or(cli: &Cli, fallback: &[u64]) -> Vec<u64> {
    if cli.seed.is_empty() {
        fallback.to_vec()
    } else {
        cli.seed.clone()
    }
}

fn file_name(stem: &str, format: Format) -> String {
    format!("{stem}.{}", format.extension())
}

fn write_experiment(cli: &Cli, out: &ExperimentOutput, manifest: &mut Manifest, stem: &str) -> Result<(), SimError> {
    let format: Format = cli.format.into();
    let rows_file = file_name(stem, format);
    write_rows(&out.rows(cli.timing), &cli.out.join(&rows_file), format)?;
    let summary_file = file_name(&format!("{stem}_summary"), format);
    write_table(&out.summaries, &cli.out.join(&summary_file), format)?;
    manifest.files.extend([rows_file, summary_file]);
    for s in &out.summaries {
        println!(
            "{:<15} final loss {:.5} ± {:.5}  avg |grad|^2 {:.5}",
            s.algorithm, s.final_loss_mean, s.final_loss_sd, s.avg_grad_norm_sq_mean
        );
    }
    Ok(())
}

fn config_preset(name: &str, seeds: Vec<u64>) -> Result<ExperimentConfig, SimError> {
    match name {
        "ordering" => Ok(presets::ordering_config(seeds)),
        "speedup" => {
            let mut cfg = presets::speedup_config(&SpeedupParams::default(), 32);
            cfg.seeds = seeds;
            Ok(cfg)
        }
        other => Err(SimError::Config {
            field: "--preset".into(),
            message: format!("`{other}` has no single-experiment form; use `preset {other}` (known: ordering, speedup)"),
        }),
    }
}

fn cmd_run(cli: &Cli, config: &Option<PathBuf>, preset: &Option<String>, manifest: &mut Manifest) -> Result<(), SimError> {
    let mut cfg = match (config, preset) {
        (Some(path), _) => ExperimentConfig::from_path(path)?,
        (None, Some(name)) => config_preset(name, vec![0, 1, 2])?,
        (None, None) => unreachable!("clap requires one of --config/--preset"),
    };
    if !cli.seed.is_empty() {
        cfg.seeds = cli.seed.clone();
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cli.out)?;
    info!("running `{}`: {} algorithms x {} seeds", cfg.name, cfg.algorithms.len(), cfg.seeds.len());
    let out = harness::run_experiment(&cfg)?;
    manifest.seeds = cfg.seeds.clone();
    manifest.config = Some(cfg);
    write_experiment(cli, &out, manifest, "results")
}

fn cmd_preset(cli: &Cli, name: &str, manifest: &mut Manifest) -> Result<(), SimError> {
    if !presets::NAMES.contains(&name) {
        return Err(SimError::Config {
            field: "--preset".into(),
            message: format!("unknown preset `{name}` (known: {})", presets::NAMES.join(", ")),
        });
    }
    std::fs::create_dir_all(&cli.out)?;
    let format: Format = cli.format.into();
    match name {
        "example1_bias" => {
            let params = BiasParams {
                seed: seeds_or(cli, &[0])[0],
                ..Default::default()
            };
            let pts = presets::example1_bias(&params)?;
            let f = file_name("bias", format);
            write_table(&pts, &cli.out.join(&f), format)?;
            let worst = pts
                .iter()
                .filter(|p| p.p1 != p.p2)
                .map(|p| (p.fedavg - p.closed_form).abs())
                .fold(0.0, f64::max);
            println!("{} grid points; largest FedAvg deviation from the fixed point {worst:.3}", pts.len());
            manifest.seeds = vec![params.seed];
            manifest.set_parameters(&params)?;
            manifest.files.push(f);
        }
        "example2_nonstationary" => {
            let params = NonstationaryParams {
                seeds: seeds_or(cli, &[0, 1, 2]),
                ..Default::default()
            };
            let rows = presets::example2_nonstationary(&params)?;
            let f = file_name("nonstationary", format);
            write_table(&rows, &cli.out.join(&f), format)?;
            for r in &rows {
                println!("gamma {:.2} p {:.2} {:<15} loss {:.5}", r.gamma, r.p, r.algorithm, r.loss_mean);
            }
            manifest.seeds = params.seeds.clone();
            manifest.set_parameters(&params)?;
            manifest.files.push(f);
        }
        "speedup" => {
            let params = SpeedupParams {
                seeds: seeds_or(cli, &[0, 1, 2]),
                ..Default::default()
            };
            let rows = presets::speedup(&params)?;
            let f = file_name("speedup", format);
            write_table(&rows, &cli.out.join(&f), format)?;
            for r in &rows {
                println!("m {:>3}  avg |grad F(xbar)|^2 {:.5}", r.clients, r.avg_grad_norm_sq_mean);
            }
            println!("non-increasing in m: {}", presets::is_non_increasing(&rows));
            manifest.seeds = params.seeds.clone();
            manifest.set_parameters(&params)?;
            manifest.files.push(f);
        }
        _ => {
            let cfg = config_preset(name, seeds_or(cli, &[0, 1, 2]))?;
            let out = harness::run_experiment(&cfg)?;
            manifest.seeds = cfg.seeds.clone();
            manifest.config = Some(cfg);
            write_experiment(cli, &out, manifest, "results")?;
        }
    }
    Ok(())
}

fn parse_axis(spec: &str) -> Result<(SweepAxis, Vec<f64>), SimError> {
    let bad = |msg: String| SimError::Config {
        field: "--grid".into(),
        message: msg,
    };
    let (name, values) = spec.split_once('=').ok_or_else(|| bad(format!("`{spec}` is not NAME=V1,V2,...")))?;
    let axis = match name.trim() {
        "gamma" => SweepAxis::Gamma,
        "p" => SweepAxis::P,
        "eta" => SweepAxis::Eta,
        "local_steps" => SweepAxis::LocalSteps,
        "clients" => SweepAxis::Clients,
        other => return Err(bad(format!("unknown axis `{other}`"))),
    };
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| bad(format!("`{v}` in {name}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((axis, values))
}

fn cmd_sweep(cli: &Cli, config: &Path, grid: &[String], manifest: &mut Manifest) -> Result<(), SimError> {
    let mut cfg = ExperimentConfig::from_path(config)?;
    if !cli.seed.is_empty() {
        cfg.seeds = cli.seed.clone();
    }
    cfg.validate()?;
    let axes = grid.iter().map(|g| parse_axis(g)).collect::<Result<Vec<_>, _>>()?;
    std::fs::create_dir_all(&cli.out)?;
    let points = harness::run_sweep(&cfg, &axes)?;
    let format: Format = cli.format.into();
    for (k, point) in points.iter().enumerate() {
        let stem = format!("point_{k:03}");
        write_rows(&point.output.rows(cli.timing), &cli.out.join(file_name(&stem, format)), format)?;
        manifest.files.push(file_name(&stem, format));
    }
    let table = harness::sweep_table(&points);
    let f = file_name("sweep", format);
    write_table(&table, &cli.out.join(&f), format)?;
    manifest.files.push(f);
    manifest.set_parameters(&grid)?;
    manifest.seeds = cfg.seeds.clone();
    manifest.config = Some(cfg);
    println!("{} grid points", points.len());
    Ok(())
}

fn cmd_verify(cli: &Cli, manifest: &mut Manifest) -> Result<bool, SimError> {
    let seed = seeds_or(cli, &[0])[0];
    let results = verify::run_suite(seed)?;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    std::fs::create_dir_all(&cli.out)?;
    let format: Format = cli.format.into();
    let f = file_name("verify", format);
    write_table(&results, &cli.out.join(&f), format)?;
    manifest.files.push(f);
    manifest.seeds = vec![seed];
    Ok(results.iter().all(|r| r.passed))
}

fn execute(cli: &Cli) -> Result<bool, SimError> {
    let start = Instant::now();
    let name = match &cli.command {
        Cmd::Run { .. } => "run",
        Cmd::Preset { .. } => "preset",
        Cmd::Verify => "verify",
        Cmd::Sweep { .. } => "sweep",
    };
    let mut manifest = Manifest::new(name, Vec::new(), git_describe());
    let ok = match &cli.command {
        Cmd::Run { config, preset } => cmd_run(cli, config, preset, &mut manifest).map(|_| true)?,
        Cmd::Preset { flag, name } => {
            let n = flag.as_deref().or(name.as_deref()).unwrap_or_default();
            cmd_preset(cli, n, &mut manifest).map(|_| true)?
        }
        Cmd::Verify => cmd_verify(cli, &mut manifest)?,
        Cmd::Sweep { config, grid } => cmd_sweep(cli, config, grid, &mut manifest).map(|_| true)?,
    };
    manifest.elapsed_secs = start.elapsed().as_secs_f64();
    manifest.write(&cli.out.join("manifest.json"))?;
    info!("wrote {} files to {}", manifest.files.len() + 1, cli.out.display());
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.workers == Some(0) {
        eprintln!("error: config field `--workers`: must be >= 1");
        return ExitCode::from(1);
    }
    match par::with_workers(cli.workers, || execute(&cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: invariant checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_divergence() { 2 } else { 1 })
        }
    }
}
