use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bluetrack_core::config::{load_scenario, LoadError, PositioningMode};
use bluetrack_core::positioning::{
    build_location_map, fingerprint_locate, LocationMap, SampleVector,
};
use bluetrack_core::runner::{run_scenario, MapFormat, RunError, RunOptions, DEFAULT_SNAPSHOT_EVERY_S};
use bluetrack_core::sim::build_world;
use clap::{Parser, Subcommand};

const EXIT_CONFIG: u8 = 1;
const EXIT_IO: u8 = 2;

#[derive(Parser)]
#[command(name = "bluetrack", version, about = "Bluetooth sensor network simulator and positioning engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write logs, metrics and maps to a directory.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory; must be empty or absent.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<PositioningMode>,
        /// Seconds between map snapshots, 0 to disable.
        #[arg(long, default_value_t = DEFAULT_SNAPSHOT_EVERY_S)]
        snapshot_every: f64,
        #[arg(long, default_value = "text")]
        map_format: MapFormat,
    },
    /// Build a location map from a scenario's sensor layout.
    Calibrate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        cell_size: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Locate one RSSI vector against a location map.
    Locate {
        #[arg(long)]
        map: PathBuf,
        /// Comma separated `sensor:rssi` pairs.
        #[arg(long)]
        vector: String,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Self { code: EXIT_CONFIG, message: message.to_string() }
    }

    fn io(message: impl ToString) -> Self {
        Self { code: EXIT_IO, message: message.to_string() }
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Io { .. } => Failure::io(e),
            LoadError::Config { .. } => Failure::config(e),
        }
    }
}

fn run(
    scenario: &Path,
    out: &Path,
    seed: Option<u64>,
    mode: Option<PositioningMode>,
    snapshot_every: f64,
    map_format: MapFormat,
) -> Result<(), Failure> {
    if !(snapshot_every.is_finite() && snapshot_every >= 0.0) {
        return Err(Failure::config("--snapshot-every must be a non-negative number"));
    }
    let config = load_scenario(scenario)?;
    let opts = RunOptions { seed, mode, snapshot_every_s: snapshot_every, map_format };
    let outputs = run_scenario(&config, &opts, out).map_err(|e| match e {
        RunError::Io { .. } | RunError::Store(_) | RunError::OutputNotEmpty(_) => Failure::io(e),
        _ => Failure::config(e),
    })?;
    let m = &outputs.metrics.overall;
    println!(
        "reports={} detections={} estimates={} pushes={} mean_error_m={:.3} zone_accuracy={:.3}",
        outputs.reports.len(),
        outputs.rows_committed,
        outputs.estimates.len(),
        outputs.pushes.len(),
        m.mean_error_m,
        m.zone_accuracy
    );
    Ok(())
}

fn calibrate(scenario: &Path, cell_size: f64, out: &Path) -> Result<(), Failure> {
    let config = load_scenario(scenario)?;
    let world = build_world(&config.world).map_err(Failure::config)?;
    let map = build_location_map(&world, cell_size).map_err(Failure::config)?;
    std::fs::write(out, map.to_text())
        .map_err(|e| Failure::io(format!("cannot write {}: {e}", out.display())))?;
    Ok(())
}

fn locate(map_path: &Path, vector: &str) -> Result<(), Failure> {
    let text = std::fs::read_to_string(map_path)
        .map_err(|e| Failure::io(format!("cannot read {}: {e}", map_path.display())))?;
    let map = LocationMap::parse(&text).map_err(Failure::config)?;
    let v = SampleVector::parse(vector, 0).map_err(Failure::config)?;
    let m = fingerprint_locate(&map, &v).map_err(Failure::config)?;
    println!(
        "cell={} x={:.3} y={:.3} accuracy_m={:.3} signal_distance_db={:.3}",
        m.cell_index, m.estimate.pos.x, m.estimate.pos.y, m.estimate.accuracy_m, m.signal_distance_db
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, out, seed, mode, snapshot_every, map_format } => {
            run(&scenario, &out, seed, mode, snapshot_every, map_format)
        }
        Command::Calibrate { scenario, cell_size, out } => calibrate(&scenario, cell_size, &out),
        Command::Locate { map, vector } => locate(&map, &vector),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
