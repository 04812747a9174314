use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use orbitcal_core::geometry::MatrixFile;
use orbitcal_core::io::{read_json, read_tracks_file, write_histogram_file, write_json, write_tracks_file};
use orbitcal_core::{
    extract_all, matrix_to_geometry, run_montecarlo, run_pipeline, trial_inputs, AmbiguityMode, MarkerParams,
    MonteCarloConfig, PipelineOptions, ProjectionMatrix, RealSpaceGeometry, Result, ResultFile, ScenarioDistribution,
    TruthFile,
};

/// Geometry self-calibration of circular cone-beam CT scans from marker tracks.
#[derive(Parser)]
#[command(name = "orbitcal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a random scan and write its noisy marker tracks.
    Simulate(SimulateArgs),
    /// Fit sinusoid parameters to every track.
    Extract(ExtractArgs),
    /// Solve for the projection matrix and marker orbits.
    Calibrate(CalibrateArgs),
    /// Convert between matrix and geometry JSON.
    Convert(ConvertArgs),
    /// Run a Monte-Carlo campaign and report error statistics.
    Montecarlo(MontecarloArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    markers: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Scenario distribution JSON; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lambda_w: Option<f64>,
    /// Keep the detector parallel to the rotational axis.
    #[arg(long)]
    zero_tilt: bool,
    /// Pixel aspect ratio (pixel width over height).
    #[arg(long)]
    aspect_ratio: Option<f64>,
    /// `full` or `aspect-only`.
    #[arg(long)]
    ambiguity_mode: Option<AmbiguityMode>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Pipeline options JSON; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Matrix JSON to turn into geometry JSON.
    #[arg(long, conflicts_with = "geometry", required_unless_present = "geometry")]
    matrix: Option<PathBuf>,
    /// Geometry JSON to turn into matrix JSON.
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MontecarloArgs {
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    markers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Histogram CSV.
    #[arg(long)]
    hist: Option<PathBuf>,
    /// Campaign configuration JSON; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut dist: ScenarioDistribution = load_or_default(a.config.as_deref())?;
    if let Some(k) = a.markers {
        dist.n_markers = k;
    }
    if let Some(s) = a.noise {
        dist.noise_sigma = s;
    }
    if let Some(n) = a.views {
        dist.n_views = n;
    }
    dist.validate()?;
    let (scenario, tracks) = trial_inputs(&dist, a.seed, 0)?;
    let matrix = scenario.geometry.to_matrix()?;
    write_tracks_file(&a.out, &tracks)?;
    write_json(&a.truth, &TruthFile { scenario, matrix, noise_sigma: dist.noise_sigma, n_views: dist.n_views })
}

fn extract(a: ExtractArgs) -> Result<()> {
    let tracks = read_tracks_file(&a.tracks)?;
    let params = extract_all(&tracks)?;
    let out: Vec<MarkerParams> =
        tracks.iter().zip(params).map(|(t, params)| MarkerParams { marker: t.marker, params }).collect();
    write_json(&a.out, &out)
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let mut opts: PipelineOptions = load_or_default(a.config.as_deref())?;
    if let Some(l) = a.lambda {
        opts.solver.lambda = l;
    }
    if let Some(l) = a.lambda_w {
        opts.solver.lambda_w = l;
    }
    if let Some(n) = a.max_iter {
        opts.solver.max_iter = n;
    }
    if a.zero_tilt {
        opts.solver = opts.solver.zero_tilt();
    }
    if let Some(e) = a.aspect_ratio {
        opts.aspect_ratio = e;
    }
    if let Some(m) = a.ambiguity_mode {
        opts.mode = m;
    }
    let tracks = read_tracks_file(&a.tracks)?;
    let out = run_pipeline(&tracks, &opts)?;
    for w in &out.result.warnings {
        eprintln!("warning: {w}");
    }
    write_json(
        &a.out,
        &ResultFile {
            tilt_degenerate: out.resolution.tilt_degenerate,
            result: out.result,
            ambiguity: out.resolution,
            geometry: out.geometry,
        },
    )
}

fn convert(a: ConvertArgs) -> Result<()> {
    if let Some(path) = a.matrix {
        let m: MatrixFile = read_json(&path)?;
        write_json(&a.out, &matrix_to_geometry(&ProjectionMatrix::try_from(&m)?)?)
    } else {
        let g: RealSpaceGeometry = read_json(a.geometry.as_deref().expect("clap enforces one input"))?;
        write_json(&a.out, &MatrixFile::from(&g.to_matrix()?))
    }
}

fn montecarlo(a: MontecarloArgs) -> Result<()> {
    let mut cfg: MonteCarloConfig = load_or_default(a.config.as_deref())?;
    if let Some(n) = a.trials {
        cfg.n_trials = n;
    }
    if let Some(k) = a.markers {
        cfg.distribution.n_markers = k;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.noise {
        cfg.distribution.noise_sigma = s;
    }
    if a.threads.is_some() {
        cfg.threads = a.threads;
    }
    let report = run_montecarlo(&cfg)?;
    write_json(&a.out, &report)?;
    if let Some(path) = a.hist {
        write_histogram_file(&path, &report)?;
    }
    println!(
        "{} trials, {} markers: {} failed, {} degenerate, {} unconverged",
        report.n_trials, report.n_markers, report.n_failed, report.n_degenerate, report.n_unconverged
    );
    for i in &report.intervals {
        println!("{:<12} 98% [{:+.4e}, {:+.4e}]", i.quantity, i.p01, i.p99);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Extract(a) => extract(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Convert(a) => convert(a),
        Command::Montecarlo(a) => montecarlo(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
