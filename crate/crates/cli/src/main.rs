//! `bridge-rdd`: fit bridge-function estimators on CSV data and rerun the
//! simulation studies.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bridge_rdd::dataset::{load_aux_csv, load_main_csv, positivity_diagnostic, DEFAULT_BINS};
use bridge_rdd::inference::{bootstrap, BootstrapOptions};
use bridge_rdd::minimax::{fit_bridges, FitConfig};
use bridge_rdd::simstudy::{run_coverage_study, run_misspecification_study, run_mse_study, Misspecification, Setting};
use bridge_rdd::{estimate_all, Error};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bridge-rdd", version, about = "Global treatment effects in sharp RDDs via bridge functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit both bridges and print the three point estimates.
    Fit(FitArgs),
    /// Percentile bootstrap intervals for every estimator and target.
    Bootstrap(BootstrapArgs),
    /// Monte Carlo MSE table.
    Simulate(SimulateArgs),
    /// Monte Carlo coverage and length of bootstrap intervals.
    Coverage(CoverageArgs),
    /// Bias and MSE with one bridge forced to the constant class.
    Misspec(MisspecArgs),
    /// Latent positivity check on the auxiliary sample.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Csv,
    Text,
}

#[derive(Args)]
struct Output {
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct DataArgs {
    /// CSV with header `x,w,y`.
    #[arg(long = "main")]
    main_csv: PathBuf,
    /// CSV with header `u,x`.
    #[arg(long = "aux")]
    aux_csv: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    threshold: f64,
    /// Shift the running variable so the threshold sits at 0.
    #[arg(long)]
    center: bool,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` file overriding the default hyperparameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "BRIDGE_RDD_SEED")]
    seed: Option<u64>,
    /// Worker threads; 0 means all cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: Output,
    /// Print the fitted parameters to stderr.
    #[arg(long)]
    dump_models: bool,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: Output,
    /// Bootstrap replicates.
    #[arg(short = 'B', long = "replicates", default_value_t = 1000)]
    replicates: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

#[derive(Args)]
struct StudyArgs {
    /// setting1 or setting2.
    #[arg(long, default_value = "setting1")]
    setting: String,
    #[arg(long, value_delimiter = ',', default_values_t = [100usize, 200, 500, 1000])]
    sizes: Vec<usize>,
    /// Monte Carlo replicates per size.
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Args)]
struct CoverageArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(short = 'B', long = "replicates", default_value_t = 1000)]
    replicates: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

#[derive(Args)]
struct MisspecArgs {
    #[arg(long, default_value = "setting1")]
    setting: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// h_constant or f_constant.
    #[arg(long)]
    which: String,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: Output,
    /// Also write per-replicate estimates in long format.
    #[arg(long)]
    long_out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long = "aux")]
    aux_csv: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    threshold: f64,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[command(flatten)]
    output: Output,
}

fn exit_code(err: &Error) -> u8 {
    if err.is_io() {
        4
    } else if err.is_numerical() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Coverage(a) => cmd_coverage(a),
        Command::Misspec(a) => cmd_misspec(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    }
}

/// Defaults, then the config file, then flags.
fn resolve_config(base: FitConfig, args: &ConfigArgs) -> Result<FitConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => base.load(path)?,
        None => base,
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set_jobs(jobs: Option<usize>, default: usize) {
    let n = jobs.unwrap_or(default);
    // a second call in the same process is harmless; the first pool wins
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

fn emit(output: &Output, csv: String, text: String) -> Result<(), Error> {
    let body = match output.format {
        Format::Csv => csv,
        Format::Text => text,
    };
    write_or_print(output.out.as_deref(), &body)
}

fn write_or_print(path: Option<&Path>, body: &str) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, body)?,
        None => print!("{body}"),
    }
    Ok(())
}

fn load(data: &DataArgs) -> Result<(bridge_rdd::MainSample, bridge_rdd::AuxSample), Error> {
    let main = load_main_csv(&data.main_csv, data.threshold)?;
    let aux = load_aux_csv(&data.aux_csv, data.threshold)?;
    Ok(if data.center { (main.centered(), aux.centered()) } else { (main, aux) })
}

fn cmd_fit(a: FitArgs) -> Result<(), Error> {
    set_jobs(a.config.jobs, 1);
    let (main, aux) = load(&a.data)?;
    let cfg = resolve_config(FitConfig::default(), &a.config)?;
    let fit = fit_bridges(&main, &aux, &cfg)?;
    if a.dump_models {
        eprint!("# outcome bridge\n{}# treatment bridge\n{}", fit.h.model.dump(), fit.f.model.dump());
    }
    let est = estimate_all(&fit.h.model, &fit.f.model, &main, &aux)?;
    let csv = format!("{}\n{}\n", bridge_rdd::PointEstimates::CSV_HEADER, est.csv_row());
    emit(&a.output, csv, est.to_text())
}

fn cmd_bootstrap(a: BootstrapArgs) -> Result<(), Error> {
    set_jobs(a.config.jobs, 0);
    let (main, aux) = load(&a.data)?;
    let cfg = resolve_config(FitConfig::default(), &a.config)?;
    let opts = BootstrapOptions { replicates: a.replicates, level: a.level, seed: cfg.seed, keep_draws: false };
    let report = bootstrap(&main, &aux, &cfg, &opts)?;
    emit(&a.output, report.to_csv(), report.to_text())
}

fn study_setup(s: &StudyArgs) -> Result<(Setting, FitConfig), Error> {
    set_jobs(s.config.jobs, 0);
    let setting: Setting = s.setting.parse()?;
    let cfg = resolve_config(setting.default_config(), &s.config)?;
    Ok((setting, cfg))
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), Error> {
    let (setting, cfg) = study_setup(&a.study)?;
    let report = run_mse_study(&setting, &a.study.sizes, a.study.reps, &cfg, cfg.seed)?;
    emit(&a.study.output, report.to_csv(), report.to_text())
}

fn cmd_coverage(a: CoverageArgs) -> Result<(), Error> {
    let (setting, cfg) = study_setup(&a.study)?;
    let report = run_coverage_study(&setting, &a.study.sizes, a.study.reps, a.replicates, a.level, &cfg, cfg.seed)?;
    emit(&a.study.output, report.to_csv(), report.to_text())
}

fn cmd_misspec(a: MisspecArgs) -> Result<(), Error> {
    set_jobs(a.config.jobs, 0);
    let setting: Setting = a.setting.parse()?;
    let which: Misspecification = a.which.parse()?;
    let cfg = resolve_config(setting.default_config(), &a.config)?;
    let report = run_misspecification_study(&setting, a.n, a.reps, &cfg, Some(which), cfg.seed)?;
    if let Some(path) = &a.long_out {
        write_or_print(Some(path), &report.to_long_csv())?;
    }
    emit(&a.output, report.mc.to_csv(), report.to_text())
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<(), Error> {
    let aux = load_aux_csv(&a.aux_csv, a.threshold)?;
    let d = positivity_diagnostic(&aux, a.bins)?;
    if d.warning {
        eprintln!("warning: some u bins have auxiliary rows on only one side of the threshold; latent positivity is doubtful");
    }
    let mut text = format!("{:>4} {:>12} {:>12} {:>8} {:>8}\n", "bin", "lower", "upper", "below", "above");
    for (i, b) in d.bins.iter().enumerate() {
        text.push_str(&format!("{i:>4} {:>12.4} {:>12.4} {:>8} {:>8}\n", b.lower, b.upper, b.below, b.above));
    }
    text.push_str(&format!("min side share: {:.4}\n", d.min_side_share));
    emit(&a.output, d.to_csv(), text)
}
