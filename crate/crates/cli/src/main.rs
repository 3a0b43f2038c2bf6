//! wlocate: build radio maps, simulate scans, locate clients, serve
//! estimates, and run localization-error experiments.

use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wlocate_core::eval::{k_sweep, sweep_csv};
use wlocate_core::formats::{load_radio_map, load_scan, radio_map_to_string, serialize_scan};
use wlocate_core::locator::{build_index, locate};
use wlocate_core::net::Server;
use wlocate_core::sim::{build_radio_map, load_site, simulate_scan, uq_centre_preset};
use wlocate_core::{PathLossModel, ScanMode, Site};

#[derive(Parser)]
#[command(
    name = "wlocate",
    version,
    about = "Wi-Fi RSSI fingerprint localization toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a radio map over a site on a regular grid
    BuildMap {
        #[command(flatten)]
        site: SiteSpec,
        /// Grid spacing in metres
        #[arg(long)]
        spacing: f64,
        /// Output file (stdout when omitted)
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Simulate one 802.11 scan at a client position
    SimulateScan {
        #[command(flatten)]
        site: SiteSpec,
        /// Client x coordinate in metres
        #[arg(long)]
        x: f64,
        /// Client y coordinate in metres
        #[arg(long)]
        y: f64,
        /// Acquisition mode
        #[arg(long, value_enum, default_value_t = ModeArg::Passive)]
        mode: ModeArg,
        /// Shadowing standard deviation in dB
        #[arg(long, default_value_t = 4.0)]
        sigma: f64,
        /// RNG seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (stdout when omitted)
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Locate a recorded scan against a radio map
    Locate {
        /// Radio map file
        #[arg(long, value_name = "FILE")]
        map: PathBuf,
        /// Scan text file
        #[arg(long, value_name = "FILE")]
        scan: PathBuf,
        /// Number of nearest neighbors to average
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Approximation factor for the nearest-neighbor search
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
    },
    /// Serve location estimates over TCP
    Serve {
        /// Radio map file
        #[arg(long, value_name = "FILE")]
        map: PathBuf,
        /// Listen address
        #[arg(long, default_value = "127.0.0.1:7117")]
        bind: String,
        /// Approximation factor applied to every query
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
    },
    /// Run randomized localization-error trials and emit CSV
    Eval {
        /// Radio map file
        #[arg(long, value_name = "FILE")]
        map: PathBuf,
        #[command(flatten)]
        site: SiteSpec,
        /// k values to sweep, comma separated
        #[arg(long, value_delimiter = ',', default_value = "3")]
        k: Vec<usize>,
        /// Approximation factor for the nearest-neighbor search
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        /// Shadowing standard deviation in dB
        #[arg(long, default_value_t = 4.0)]
        sigma: f64,
        /// Number of random test positions
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// RNG seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (stdout when omitted)
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

/// Where the site model comes from: a built-in preset or a site file.
#[derive(Args)]
#[group(required = true, multiple = false)]
struct SiteSpec {
    /// Built-in site preset
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Site description file
    #[arg(long, value_name = "FILE")]
    site: Option<PathBuf>,
}

impl SiteSpec {
    fn resolve(&self) -> Result<Site, Box<dyn Error>> {
        match (&self.preset, &self.site) {
            (Some(Preset::Uq), _) => Ok(uq_centre_preset()),
            (None, Some(path)) => {
                Ok(load_site(path).map_err(|e| format!("{}: {e}", path.display()))?)
            }
            (None, None) => unreachable!("clap enforces the site group"),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// UQ Centre hall: 30.5 x 52 m, six APs at 10.75 m
    Uq,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Passive,
    Active,
}

impl From<ModeArg> for ScanMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Passive => ScanMode::Passive,
            ModeArg::Active => ScanMode::Active,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version are successes; anything else is a usage error.
            return if e.exit_code() == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Box<dyn Error>> {
    match command {
        Command::BuildMap { site, spacing, out } => {
            let site = site.resolve()?;
            let map = build_radio_map(&site, spacing, &PathLossModel::default())?;
            write_output(out.as_deref(), &radio_map_to_string(&map)?)?;
        }
        Command::SimulateScan {
            site,
            x,
            y,
            mode,
            sigma,
            seed,
            out,
        } => {
            let site = site.resolve()?;
            let model = PathLossModel::default().with_sigma(sigma)?;
            let obs = simulate_scan(&site, (x, y), mode.into(), &model, seed)?;
            write_output(out.as_deref(), &serialize_scan(&obs))?;
        }
        Command::Locate {
            map,
            scan,
            k,
            epsilon,
        } => {
            let map = load_radio_map(&map).map_err(|e| format!("{}: {e}", map.display()))?;
            let obs = load_scan(&scan).map_err(|e| format!("{}: {e}", scan.display()))?;
            let index = build_index(&map);
            let est = locate(&map, &index, &obs, k, epsilon)?;
            println!("x={:.2} y={:.2} k={}", est.pos.0, est.pos.1, est.k_used);
        }
        Command::Serve { map, bind, epsilon } => {
            let map = load_radio_map(&map).map_err(|e| format!("{}: {e}", map.display()))?;
            let server = Server::bind(map, &bind, epsilon)?;
            eprintln!("wlocate: serving on {}", server.local_addr());
            server.join();
        }
        Command::Eval {
            map,
            site,
            k,
            epsilon,
            sigma,
            trials,
            seed,
            out,
        } => {
            let map = load_radio_map(&map).map_err(|e| format!("{}: {e}", map.display()))?;
            let site = site.resolve()?;
            let model = PathLossModel::default().with_sigma(sigma)?;
            let rows = k_sweep(&map, &site, &model, &k, epsilon, trials, seed)?;
            write_output(out.as_deref(), &sweep_csv(&rows))?;
        }
    }
    Ok(())
}

fn write_output(out: Option<&Path>, content: &str) -> std::io::Result<()> {
    match out {
        Some(path) => fs::write(path, content),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}
