use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use uwloc::analysis::efficiency_check;
use uwloc::config::{ExperimentFile, MeasurementFile, MeasurementNoise, ReportFile, Scenario};
use uwloc::estimator::{estimate, DdotVariant, EstimatorOptions, WeightingMode};
use uwloc::harness::{
    preset, run_bounds, run_experiment, write_bounds_csv, Experiment, ExperimentKind, Sweep,
};
use uwloc::model::{true_measurements, MeasurementSet};
use uwloc::noise::{db_to_sigma, perturb_array, stream, GaussianSampler, Purpose};
use uwloc::Error;

#[derive(Parser)]
#[command(
    name = "uwloc",
    version,
    about = "TDOA/FDOA source localization with unknown sound speed"
)]
struct Cli {
    /// Scenario file, or `default` for the built-in ten-sensor deployment.
    #[arg(long, global = true, default_value = "default")]
    scenario: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo MSE sweep against the bound.
    Simulate(SimulateArgs),
    /// Known- and unknown-speed bounds along a noise sweep.
    Crlb(CrlbArgs),
    /// Localize from one measurement file.
    Estimate(EstimateArgs),
    /// Small-noise efficiency diagnostics of the estimator.
    Validate(ValidateArgs),
    /// Write a measurement file drawn from the scenario.
    Synth(SynthArgs),
    /// Print the scenario in file form.
    Scenario(OutArg),
}

#[derive(Args)]
struct OutArg {
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// fig3, fig4, fig5 or fig6.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// Experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CrlbArgs {
    #[arg(long, default_value = "fig2")]
    preset: String,
    /// Override the swept variable (sigma_d_db or sigma_s_db).
    #[arg(long)]
    sweep: Option<Sweep>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// full_covariance, structured_identity or plain_identity. Defaults to
    /// full_covariance when the file has a noise block.
    #[arg(long)]
    mode: Option<WeightingMode>,
    #[arg(long, default_value_t = 2)]
    n_iter: usize,
    /// Use the alternative form of the reference-direction derivative.
    #[arg(long)]
    delay_ddot: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 0.05)]
    tol: f64,
    /// Sound speed, m/s. Midpoint of the scenario's range by default.
    #[arg(long)]
    speed: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    sigma_d_db: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    sigma_s_db: Option<f64>,
    #[arg(long)]
    delay_ddot: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    speed: Option<f64>,
    /// Write the exact measurements and sensor parameters.
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Lib(Error),
    Io(io::Error, String),
    Tolerance(f64, f64),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Io(e, p.display().to_string()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit(
    out: Option<&Path>,
    f: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), Failure> {
    let name = out.map_or("standard output".to_string(), |p| p.display().to_string());
    let mut w = open_out(out)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Failure::Io(e, name))
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    Ok(Scenario::load(path)?)
}

fn ddot(delay: bool) -> DdotVariant {
    if delay {
        DdotVariant::Delay
    } else {
        DdotVariant::Rate
    }
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<(), Failure> {
    let mut exp = match (&a.preset, &a.config) {
        (Some(name), _) => {
            let mut exp = preset(name)
                .filter(|e| e.kind == ExperimentKind::MonteCarlo)
                .ok_or_else(|| Error::Config(format!("unknown simulation preset `{name}`")))?;
            exp.scenario = load_scenario(&cli.scenario)?;
            exp
        }
        (None, Some(path)) => {
            let (file, scenario) = ExperimentFile::load(path)?;
            Experiment::from_file(&file, scenario)?
        }
        (None, None) => {
            return Err(Error::Config("one of --preset or --config is required".into()).into())
        }
    };
    if let Some(t) = a.trials {
        exp.trials = t;
    }
    let result = run_experiment(&exp, a.seed)?;
    emit(a.out.as_deref(), |w| result.write_csv(w))
}

fn crlb(cli: &Cli, a: &CrlbArgs) -> Result<(), Failure> {
    let mut exp =
        preset(&a.preset).ok_or_else(|| Error::Config(format!("unknown preset `{}`", a.preset)))?;
    exp.scenario = load_scenario(&cli.scenario)?;
    exp.kind = ExperimentKind::BoundsOnly;
    if let Some(s) = a.sweep {
        exp.sweep = s;
    }
    let points = run_bounds(&exp)?;
    emit(a.out.as_deref(), |w| write_bounds_csv(&points, w))
}

fn run_estimate(a: &EstimateArgs) -> Result<(), Failure> {
    let file = MeasurementFile::load(&a.input)?;
    let meas = file.measurements()?;
    let nominal = file.nominal()?;
    let noise = file.noise_model()?;
    let mode = a.mode.unwrap_or(if noise.is_some() {
        WeightingMode::FullCovariance
    } else {
        WeightingMode::StructuredIdentity
    });
    let opts = EstimatorOptions {
        n_iter: a.n_iter,
        mode,
        ddot: ddot(a.delay_ddot),
    };
    let report = estimate(&meas, &nominal, noise.as_ref(), &opts)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let text = ReportFile::from_report(&report).to_toml_string()?;
    emit(a.out.as_deref(), |w| w.write_all(text.as_bytes()))
}

fn validate(cli: &Cli, a: &ValidateArgs) -> Result<(), Failure> {
    let sc = load_scenario(&cli.scenario)?;
    let c = a.speed.unwrap_or_else(|| sc.source.speed.nominal());
    let source = sc.source_at_speed(c)?;
    let array = sc.sensor_array()?;
    let noise = sc.noise_model(
        db_to_sigma(a.sigma_d_db.unwrap_or(sc.noise.sigma_d_db)),
        db_to_sigma(a.sigma_s_db.unwrap_or(sc.noise.sigma_s_db)),
        c,
    )?;
    let chk = efficiency_check(&source, &array, &noise, None, ddot(a.delay_ddot))?;

    let mut out = io::stdout().lock();
    let line = |out: &mut dyn Write, name: &str, value: String| writeln!(out, "{name:<28} {value}");
    let res: io::Result<()> = (|| {
        writeln!(out, "{:<28} max relative deviation", "block")?;
        for b in chk.g3_blocks.iter().chain(&chk.g4_blocks) {
            line(&mut out, b.name, format!("{:.4e}", b.deviation))?;
        }
        let f = chk.condition_flags;
        line(
            &mut out,
            "flag near_reference",
            f.near_reference.to_string(),
        )?;
        line(&mut out, "flag slow_motion", f.slow_motion.to_string())?;
        line(&mut out, "flag small_tdoa", f.small_tdoa.to_string())?;
        line(&mut out, "max_rel_gap", format!("{:.4e}", chk.max_rel_gap))?;
        line(&mut out, "tolerance", format!("{:.4e}", a.tol))
    })();
    res.map_err(|e| Failure::Io(e, "standard output".into()))?;
    if chk.max_rel_gap.is_nan() || chk.max_rel_gap > a.tol {
        return Err(Failure::Tolerance(chk.max_rel_gap, a.tol));
    }
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<(), Failure> {
    let sc = load_scenario(&cli.scenario)?;
    sc.require_estimator_size()?;
    let c = a.speed.unwrap_or_else(|| sc.source.speed.nominal());
    let source = sc.source_at_speed(c)?;
    let mut array = sc.sensor_array()?;
    let noise = sc.configured_noise(c)?;
    let mut meas = true_measurements(&source, &array)?;
    if !a.noiseless {
        let n = GaussianSampler::zero_mean(&noise.q_alpha)?.sample(&mut stream(
            a.seed,
            0,
            Purpose::Measurement,
        ));
        meas = MeasurementSet::from_alpha(&(meas.alpha() + n))?;
        array = perturb_array(
            &array,
            &noise.q_beta,
            &mut stream(a.seed, 0, Purpose::Sensors),
        )?;
    }
    let file = MeasurementFile::new(
        &meas,
        array.nominal(),
        Some(MeasurementNoise {
            sigma_d_db: sc.noise.sigma_d_db,
            sigma_s_db: sc.noise.sigma_s_db,
            b: sc.noise.b.clone(),
            speed_hint: c,
        }),
    );
    let text = file.to_toml_string()?;
    emit(a.out.as_deref(), |w| w.write_all(text.as_bytes()))
}

fn print_scenario(cli: &Cli, a: &OutArg) -> Result<(), Failure> {
    let text = load_scenario(&cli.scenario)?.to_toml_string()?;
    emit(a.out.as_deref(), |w| w.write_all(text.as_bytes()))
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Crlb(a) => crlb(cli, a),
        Command::Estimate(a) => run_estimate(a),
        Command::Validate(a) => validate(cli, a),
        Command::Synth(a) => synth(cli, a),
        Command::Scenario(a) => print_scenario(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) if e.is_config() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            match e.stage() {
                Some(stage) => eprintln!("numerical failure in {stage}: {}", e.root()),
                None => eprintln!("numerical failure: {e}"),
            }
            ExitCode::from(2)
        }
        Err(Failure::Io(e, what)) => {
            eprintln!("error: {what}: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Tolerance(gap, tol)) => {
            eprintln!("max_rel_gap {gap:.4e} exceeds tolerance {tol:.4e}");
            ExitCode::from(3)
        }
    }
}
