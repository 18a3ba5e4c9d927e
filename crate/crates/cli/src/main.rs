use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gppf::bench::{
    emit_plot_data, parse_models, run_case, run_generalization, write_case, write_generalization, BenchError,
    CaseConfig, GeneralizationConfig, PlotKind, PlotOptions,
};
use gppf::feeder::{emit_feeder, generate_synthetic_feeder, ieee123_style, load_feeder, PhaseMix, SyntheticSpec};
use gppf::scenario::{generate_dataset, save_dataset, MultiplierMode, ScenarioConfig};
use gppf::Feeder64;

/// Value of `--feeder` that selects the bundled 123-bus feeder.
const BUILTIN_123: &str = "builtin:ieee123";

#[derive(Parser)]
#[command(name = "gppf", version, about = "GP surrogates for unbalanced distribution power flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic radial feeder, or the bundled 123-bus feeder.
    GenFeeder(GenFeederArgs),
    /// Generate an hourly dataset of net loads and oracle voltages.
    GenData(GenDataArgs),
    /// Train and score models on one chronological case.
    RunCase(RunCaseArgs),
    /// Train the GP on a short window and score it on the following hours.
    RunGeneralization(GeneralizationArgs),
    /// Write plot tables for a finished case directory.
    EmitPlots(EmitPlotsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MixArg {
    Single,
    Three,
    Mixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum MultiplierArg {
    Global,
    PerLoad,
}

#[derive(Args)]
struct GenFeederArgs {
    /// Bus count including the source.
    #[arg(long, default_value_t = 25)]
    buses: usize,
    #[arg(long, value_enum, default_value_t = MixArg::Mixed)]
    phase_mix: MixArg,
    #[arg(long, default_value_t = 0)]
    ders: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the bundled 123-bus feeder instead of a synthetic one.
    #[arg(long)]
    ieee123: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Feeder file, or `builtin:ieee123`.
    #[arg(long)]
    feeder: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Log-space standard deviation of the load multiplier.
    #[arg(long, default_value_t = 0.15)]
    variability: f64,
    #[arg(long, default_value_t = 1.0)]
    load_scale: f64,
    #[arg(long, value_enum, default_value_t = MultiplierArg::Global)]
    multiplier: MultiplierArg,
}

impl ScenarioArgs {
    fn config(&self, hours: usize) -> ScenarioConfig {
        ScenarioConfig {
            variability: self.variability,
            load_scale: self.load_scale,
            multiplier_mode: match self.multiplier {
                MultiplierArg::Global => MultiplierMode::Global,
                MultiplierArg::PerLoad => MultiplierMode::PerLoad,
            },
            ..ScenarioConfig::new(hours, self.seed)
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    hours: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunCaseArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Standard case 1-4 (24, 168, 720 or 2160 training hours).
    #[arg(long, conflicts_with = "train_hours", required_unless_present = "train_hours")]
    case: Option<usize>,
    #[arg(long)]
    train_hours: Option<usize>,
    #[arg(long, default_value_t = 144)]
    test_hours: usize,
    /// Comma-separated subset of LDF, DNN, GP.
    #[arg(long, default_value = "LDF,DNN,GP")]
    models: String,
    /// Override the DNN epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GeneralizationArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 24)]
    train_hours: usize,
    #[arg(long, default_value_t = 144)]
    test_hours: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmitPlotsArgs {
    /// Case directory written by run-case or run-generalization.
    #[arg(long)]
    dir: PathBuf,
    /// voltage-profile-snapshot, per-bus-mae or time-series-3phase.
    #[arg(long)]
    kind: String,
    /// Absolute hour for the snapshot.
    #[arg(long)]
    hour: Option<usize>,
    /// Bus for the time series.
    #[arg(long)]
    bus: Option<String>,
}

fn read_feeder(source: &str) -> Result<Feeder64, BenchError> {
    if source == BUILTIN_123 {
        return Ok(ieee123_style());
    }
    let text = fs::read_to_string(source).map_err(|e| BenchError::Artifact {
        path: source.to_string(),
        message: format!("cannot read feeder: {e}"),
    })?;
    Ok(load_feeder(&text)?)
}

fn report(out: &Path, what: &str) {
    println!("{what} written to {}", out.display());
}

fn gen_feeder(a: GenFeederArgs) -> Result<(), BenchError> {
    let feeder: Feeder64 = if a.ieee123 {
        ieee123_style()
    } else {
        let mix = match a.phase_mix {
            MixArg::Single => PhaseMix::Single,
            MixArg::Three => PhaseMix::Three,
            MixArg::Mixed => PhaseMix::Mixed,
        };
        generate_synthetic_feeder(&SyntheticSpec::new(a.buses, mix, a.ders, a.seed))?
    };
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, emit_feeder(&feeder))?;
    println!("{} buses, {} phase-nodes, hash {}", feeder.buses().len(), feeder.dim(), feeder.content_hash());
    report(&a.out, "feeder");
    Ok(())
}

fn gen_data(a: GenDataArgs) -> Result<(), BenchError> {
    let feeder = read_feeder(&a.scenario.feeder)?;
    let ds = generate_dataset(&feeder, &a.scenario.config(a.hours))?;
    save_dataset(&ds, &a.out)?;
    println!("{} rows, data hash {}", ds.len(), ds.content_hash());
    report(&a.out, "dataset");
    Ok(())
}

fn run_case_cmd(a: RunCaseArgs) -> Result<(), BenchError> {
    let models = parse_models(&a.models)?;
    let seed = a.scenario.seed;
    let mut cfg = match (a.case, a.train_hours) {
        (Some(c), _) => CaseConfig::standard(c, seed)?,
        (None, Some(n)) => CaseConfig::custom(n, seed),
        (None, None) => return Err(BenchError::Config("give --case or --train-hours".into())),
    };
    cfg.test_hours = a.test_hours;
    cfg.models = models;
    cfg.scenario = a.scenario.config(0);
    if let Some(e) = a.epochs {
        cfg.mlp.epochs = e;
    }
    let feeder = read_feeder(&a.scenario.feeder)?;
    let outcome = run_case(&feeder, &cfg)?;
    write_case(&a.out, &feeder, &outcome)?;
    for r in outcome.reports() {
        println!(
            "{:<4} mae {:.3e}  mse {:.3e}  max {:.3e}  train {:.2}s  predict {:.3}s",
            r.model.to_string(),
            r.errors.mae,
            r.errors.mse,
            r.errors.max_abs_error,
            r.train_seconds,
            r.predict_seconds
        );
    }
    report(&a.out, "case");
    Ok(())
}

fn run_generalization_cmd(a: GeneralizationArgs) -> Result<(), BenchError> {
    let feeder = read_feeder(&a.scenario.feeder)?;
    let mut cfg = GeneralizationConfig::new(a.scenario.seed);
    cfg.train_hours = a.train_hours;
    cfg.test_hours = a.test_hours;
    cfg.scenario = a.scenario.config(0);
    let outcome = run_generalization(&feeder, &cfg)?;
    write_generalization(&a.out, &feeder, &outcome)?;
    let s = &outcome.summary;
    println!(
        "avg mae {:.3e}  avg mse {:.3e}  max {:.3e}  min {:.3e}",
        s.avg_mae, s.avg_mse, s.max_error, s.min_error
    );
    report(&a.out, "generalization");
    Ok(())
}

fn emit_plots(a: EmitPlotsArgs) -> Result<(), BenchError> {
    let kind: PlotKind = a.kind.parse()?;
    let opts = PlotOptions {
        hour: a.hour,
        bus: a.bus,
    };
    let path = emit_plot_data(&a.dir, kind, &opts)?;
    report(&path, "plot data");
    Ok(())
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    let body = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("invalid-argument", e.to_string().trim().to_string(), 2),
    };
    let result = match cli.command {
        Command::GenFeeder(a) => gen_feeder(a),
        Command::GenData(a) => gen_data(a),
        Command::RunCase(a) => run_case_cmd(a),
        Command::RunGeneralization(a) => run_generalization_cmd(a),
        Command::EmitPlots(a) => emit_plots(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.kind() == "invalid-argument" { 2 } else { 1 };
            fail(e.kind(), e.to_string(), code)
        }
    }
}
