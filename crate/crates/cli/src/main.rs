use std::path::PathBuf;
use std::process::ExitCode;

use biot_th::{
    dump_matrix, dump_mesh, execute, parse_real, resolve, to_markdown, write_reports, Real, RunError, Settings,
    PRESETS,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "biot-th", version, about = "Taylor-Hood Biot consolidation solver and convergence studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single solve or a convergence study.
    Run(RunArgs),
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with flat keys; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One of table1 .. table10.
    #[arg(long)]
    preset: Option<String>,
    /// example1 or example2.
    #[arg(long)]
    case: Option<String>,
    /// Poisson ratio (example2).
    #[arg(long, value_parser = parse_real)]
    nu: Option<f64>,
    /// Hydraulic conductivity (example2).
    #[arg(long = "K", value_parser = parse_real)]
    conductivity: Option<f64>,
    /// 1 (backward Euler) or 2 (Crank-Nicolson flow row).
    #[arg(long)]
    method: Option<u8>,
    /// Mesh subdivisions per side.
    #[arg(long)]
    n: Option<usize>,
    /// Displacement degree.
    #[arg(long)]
    k: Option<usize>,
    /// Pressure degree.
    #[arg(long)]
    l: Option<usize>,
    /// Time step, e.g. 0.03125 or 1/32.
    #[arg(long, value_parser = parse_real)]
    dt: Option<f64>,
    /// none, temporal or spatial.
    #[arg(long)]
    study: Option<String>,
    /// Comma-separated time steps of a temporal study.
    #[arg(long, value_delimiter = ',', value_parser = parse_real)]
    dts: Option<Vec<f64>>,
    /// Comma-separated `n:dt` rows of a spatial study, e.g. 2:1/4,4:1/16.
    #[arg(long, value_delimiter = ',', value_parser = parse_pair)]
    pairs: Option<Vec<(usize, f64)>>,
    /// Output directory for the CSV and markdown reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for study rows.
    #[arg(long)]
    workers: Option<usize>,
    /// Write the mesh of the first run as plain text.
    #[arg(long)]
    dump_mesh: Option<PathBuf>,
    /// Write the time-stepping matrix of the first run in Matrix Market format.
    #[arg(long)]
    dump_matrix: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(usize, f64), String> {
    let (n, dt) = s.split_once(':').ok_or_else(|| format!("`{s}` is not of the form n:dt"))?;
    let n = n.trim().parse().map_err(|_| format!("`{n}` is not a mesh size"))?;
    Ok((n, parse_real(dt)?))
}

impl RunArgs {
    fn settings(&self) -> Settings {
        let real = |v: Option<f64>| v.map(Real::Number);
        Settings {
            preset: self.preset.clone(),
            case: self.case.clone(),
            nu: real(self.nu),
            conductivity: real(self.conductivity),
            method: self.method,
            n: self.n,
            k: self.k,
            l: self.l,
            dt: real(self.dt),
            study: self.study.clone(),
            dts: self.dts.as_ref().map(|d| d.iter().map(|&v| Real::Number(v)).collect()),
            pairs: self.pairs.as_ref().map(|p| p.iter().map(|&(n, v)| (n, Real::Number(v))).collect()),
            out: self.out.clone(),
            workers: self.workers,
        }
    }
}

fn run(args: RunArgs) -> Result<(), RunError> {
    let file = match &args.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    let config = resolve(file.merged(args.settings()))?;
    for w in &config.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = &args.dump_mesh {
        dump_mesh(&config, path)?;
    }
    if let Some(path) = &args.dump_matrix {
        dump_matrix(&config, path)?;
    }
    let report = execute(&config)?;
    let [csv, md] = write_reports(&config, &report)?;
    print!("{}", to_markdown(&report));
    eprintln!("wrote {} and {}", csv.display(), md.display());
    Ok(())
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
            ExitCode::SUCCESS
        }
        Command::Run(args) => match run(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
