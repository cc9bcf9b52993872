use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use corrdyn::corrwin::MeanCorrelationSeries;
use corrdyn::export;
use corrdyn::kramers::{estimate_drift_diffusion, integrate_potential, KmConfig};
use corrdyn::sde_sim::{one_factor_market, preset_model, simulate};
use corrdyn_cli::{run_pipeline, CliError, PipelineFailure, RunConfig, Session, Stage};
use log::info;

#[derive(Parser)]
#[command(name = "corrdyn", version, about = "Dynamics of mean market correlation")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an SDE preset and write `date,value` (or a price panel).
    Simulate(SimulateArgs),
    /// Load prices and write locally normalized returns.
    Ingest(Overrides),
    /// Rolling correlation matrices, mean correlation and top eigenvalue.
    Correlate(Overrides),
    /// Principal components of the correlation vectors.
    Pca(Overrides),
    /// Bisecting k-means states, dendrogram and step statistics.
    Cluster(Overrides),
    /// Drift, diffusion and potentials. With `--series` works on a single
    /// series file outside the pipeline.
    Estimate(EstimateArgs),
    /// Fit the bounded diffusion model to pooled diffusion points.
    Fitdiff(Overrides),
    /// Summarize a finished run into report.json.
    Report(Overrides),
    /// Every stage in order.
    Run(Overrides),
    /// Print the effective configuration as TOML.
    Config(Overrides),
}

#[derive(Args, Default)]
struct Overrides {
    /// Price file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// long, wide or auto.
    #[arg(long)]
    format: Option<String>,
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    normalization_window: Option<usize>,
    /// Correlation window length T.
    #[arg(long)]
    window: Option<usize>,
    /// Correlation window step.
    #[arg(long)]
    step: Option<usize>,
    #[arg(long)]
    write_matrices: bool,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    uncentered: bool,
    /// Cluster radius threshold.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed bin count for drift and diffusion.
    #[arg(long)]
    bins: Option<usize>,
    /// Comma separated lags, e.g. 1,2,3,4,5.
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<usize>>,
    #[arg(long)]
    sliding_window: Option<usize>,
    #[arg(long)]
    sliding_step: Option<usize>,
    /// State groups, e.g. `2+3,5+6`.
    #[arg(long, value_delimiter = ',')]
    merge: Option<Vec<String>>,
    #[arg(long)]
    min_state_days: Option<usize>,
    #[arg(long)]
    histogram_bins: Option<usize>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// `date,value` series to estimate on directly.
    #[arg(long, requires = "out")]
    series: Option<PathBuf>,
    /// Output for `--series` mode: `c,f,g2,count`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sampling interval of the series.
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// ou, bounded_corr or double_well.
    #[arg(long)]
    preset: String,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    params: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    /// Euler steps per recorded sample.
    #[arg(long, default_value_t = 1)]
    substeps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Write a long-format price panel of this many instruments whose
    /// pairwise correlation follows the simulated path.
    #[arg(long)]
    prices: Option<usize>,
    /// Daily volatility of the simulated prices.
    #[arg(long, default_value_t = 0.01)]
    vol: f64,
}

fn parse_merge(groups: &[String]) -> anyhow::Result<Vec<Vec<usize>>> {
    groups
        .iter()
        .map(|g| {
            g.split('+')
                .map(|l| l.trim().parse::<usize>().with_context(|| format!("bad state label in `{g}`")))
                .collect()
        })
        .collect()
}

fn config(path: Option<&PathBuf>, o: &Overrides) -> anyhow::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($field:ident, $val:expr) => {
            if let Some(v) = $val {
                cfg.$field = v;
            }
        };
    }
    if o.input.is_some() {
        cfg.input = o.input.clone();
    }
    set!(format, o.format.clone());
    set!(output_dir, o.out_dir.clone());
    set!(normalization_window, o.normalization_window);
    set!(correlation_window, o.window);
    set!(correlation_step, o.step);
    set!(pca_components, o.components);
    set!(threshold, o.threshold);
    set!(seed, o.seed);
    set!(taus, o.taus.clone());
    set!(sliding_window, o.sliding_window);
    set!(sliding_step, o.sliding_step);
    set!(min_state_days, o.min_state_days);
    set!(histogram_bins, o.histogram_bins);
    if let Some(m) = &o.merge {
        cfg.merge = parse_merge(m).map_err(|e| CliError::Config(format!("{e:#}")))?;
    }
    if o.bins.is_some() {
        cfg.km_bins = o.bins;
    }
    cfg.write_matrices |= o.write_matrices;
    cfg.pca_centered &= !o.uncentered;
    cfg.validate()?;
    Ok(cfg)
}

fn run_stage(cfg: RunConfig, stage: Stage) -> anyhow::Result<()> {
    let mut session = Session::open(cfg)?;
    session.run(stage)?;
    println!("{stage}: wrote into {}", session.dir().display());
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> anyhow::Result<()> {
    let model = preset_model(&a.preset, &a.params).map_err(|e| CliError::Config(e.to_string()))?;
    let x0 = match (a.x0, model.bounds()) {
        (Some(x), _) => x,
        (None, Some((lo, hi))) => 0.5 * (lo + hi),
        (None, None) => 0.0,
    };
    let path = simulate(&model, x0, a.dt, a.steps, a.substeps, a.seed)?;
    match a.prices {
        Some(k) => {
            let panel = one_factor_market(k, &path.values, a.vol, a.seed.wrapping_add(1))?;
            export::write_prices_long(&a.out, &panel)?;
        }
        None => export::write_series(&a.out, &path.to_series())?,
    }
    info!("{} samples of {}", path.values.len(), model.name());
    Ok(())
}

fn cmd_estimate(cfg_path: Option<&PathBuf>, a: &EstimateArgs) -> anyhow::Result<()> {
    let cfg = config(cfg_path, &a.overrides)?;
    let Some(series) = &a.series else {
        return run_stage(cfg, Stage::Estimate);
    };
    let out = a.out.as_ref().expect("clap enforces --out");
    if !(a.dt > 0.0) {
        bail!(CliError::Config("dt must be positive".into()));
    }
    let s: MeanCorrelationSeries = export::read_series(series).with_context(|| format!("reading {}", series.display()))?;
    let km = KmConfig { dt: a.dt, ..cfg.km() };
    let est = estimate_drift_diffusion(&s.values, &km, None)?;
    export::write_km(out, &est)?;
    let pot = integrate_potential(&est)?;
    println!("{} bins, potential minimum at c = {}", est.len(), pot.c[pot.argmin()]);
    Ok(())
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let path = cli.config.as_ref();
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Ingest(o) => run_stage(config(path, o)?, Stage::Ingest),
        Command::Correlate(o) => run_stage(config(path, o)?, Stage::Correlate),
        Command::Pca(o) => run_stage(config(path, o)?, Stage::Pca),
        Command::Cluster(o) => run_stage(config(path, o)?, Stage::Cluster),
        Command::Estimate(a) => cmd_estimate(path, a),
        Command::Fitdiff(o) => run_stage(config(path, o)?, Stage::Fitdiff),
        Command::Report(o) => run_stage(config(path, o)?, Stage::Report),
        Command::Run(o) => {
            let cfg = config(path, o)?;
            let m = run_pipeline(&cfg)?;
            println!("{} artifacts in {}", m.artifacts.len(), cfg.output_dir.display());
            Ok(())
        }
        Command::Config(o) => {
            print!("{}", config(path, o)?.to_toml());
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(f) = err.downcast_ref::<PipelineFailure>() {
        return f.error.exit_code();
    }
    if let Some(e) = err.downcast_ref::<CliError>() {
        return e.exit_code();
    }
    match err.downcast_ref::<corrdyn::Error>() {
        Some(e) => match e.kind() {
            corrdyn::error::ErrorKind::Data => 3,
            corrdyn::error::ErrorKind::Numerical => 4,
        },
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
