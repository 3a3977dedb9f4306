//! `outshare`: identified sets, confidence sets and equilibrium-object bounds
//! for random-coefficients logit demand when the outside share is not
//! observed.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

use outshare::data::{load_dataset, write_dataset, CsvSchema};
use outshare::grid::GridResult;
use outshare::identified::{CellGrouping, Identification};
use outshare::inference::{build_instruments, project_confidence_set, Inference, MomentSystem};
use outshare::model::Dataset;
use outshare::shares::EquilibriumObject;
use outshare::simulation::{median_observation, simulate_dataset, Counterexample};

use config::{Config, ConfigError, MarketSelector};

const EXIT_EMPTY: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "outshare", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset and its hidden truths.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Identified set over the configured grid.
    Identify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Confidence set over the configured grid.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Equilibrium-object intervals at one market over a parameter set.
    Bounds {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Grid CSV from `identify` or `infer`; the identified set is
        /// computed when absent.
        #[arg(long)]
        members: Option<PathBuf>,
    },
    /// Curve of the constant-outside-share criterion `F(s_0)`.
    Counterexample {
        #[command(flatten)]
        common: Common,
    },
}

/// Written next to every output as `<name>.json`.
#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a Config,
    result: T,
}

fn write_report<T: Serialize>(dir: &Path, name: &str, command: &str, config: &Config, result: T) -> Result<()> {
    let report = Report {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        result,
    };
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n").with_context(|| path.display().to_string())?;
    Ok(())
}

fn setup(common: &Common) -> Result<Config> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool")?;
    }
    let config = Config::load(&common.config)?;
    fs::create_dir_all(&common.out).with_context(|| common.out.display().to_string())?;
    Ok(config)
}

fn load(path: &Path) -> Result<Dataset> {
    Ok(load_dataset(path, &CsvSchema::default())?)
}

fn identification(config: &Config, dataset: &Dataset) -> Result<Identification> {
    let grouping = if config.identify.condition_on_instruments {
        CellGrouping::from_instruments(dataset)
    } else {
        CellGrouping::single(dataset.len())
    };
    Ok(Identification::new(dataset, config.model.mixing()?, config.model.s0set()?)
        .with_directions(config.identify.directions.directions(dataset.n_products()))
        .with_grouping(grouping)
        .with_slack(config.identify.slack)
        .with_support(config.model.support))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn simulate(common: &Common) -> Result<u8> {
    let config = setup(common)?;
    let spec = config.dgp(common.seed)?;
    let spec_hash = sha256_hex(serde_json::to_string(&spec)?.as_bytes());
    let sim = simulate_dataset(&spec)?;
    write_dataset(&sim.dataset, common.out.join("data.csv"), &CsvSchema::default())?;
    #[derive(Serialize)]
    struct Sidecar<'a> {
        spec: &'a outshare::simulation::DgpSpec,
        spec_sha256: &'a str,
        truths: &'a [outshare::simulation::MarketTruth],
    }
    write_report(
        &common.out,
        "truth",
        "simulate",
        &config,
        Sidecar {
            spec: &spec,
            spec_sha256: &spec_hash,
            truths: &sim.truths,
        },
    )?;
    println!("spec sha256 {spec_hash}");
    println!("{} markets written to {}", spec.n_markets, common.out.join("data.csv").display());
    Ok(0)
}

fn grid_outcome(result: &GridResult) -> u8 {
    if result.is_empty_set() {
        EXIT_EMPTY
    } else {
        0
    }
}

fn identify(common: &Common, data: &Path) -> Result<u8> {
    let config = setup(common)?;
    let dataset = load(data)?;
    let grid = config.theta_grid()?;
    let result = identification(&config, &dataset)?.compute(&dataset, &grid)?;
    result.write_csv_file(common.out.join("identified_set.csv"))?;
    let summary = result.summary();
    write_report(&common.out, "identified_set", "identify", &config, &summary)?;
    print_projections(&result);
    Ok(grid_outcome(&result))
}

fn print_projections(result: &GridResult) {
    println!("{} of {} grid points are members", result.n_members(), result.points.len());
    for p in result.projections() {
        println!("{:>10}  [{}, {}]", p.name, p.lo, p.hi);
    }
}

fn inference(config: &Config, dataset: &Dataset, seed: Option<u64>) -> Result<Inference> {
    let instruments = build_instruments(dataset, &config.infer.instruments)?;
    let directions = config.infer.directions.directions(dataset.n_products());
    let system = MomentSystem::new(directions, instruments)?;
    info!("{} moment inequalities", system.len());
    Ok(
        Inference::new(config.model.mixing()?, config.model.s0set()?, system)
            .with_pi(config.infer.pi)
            .with_method(config.infer.method(seed))
            .with_sign(config.infer.sign)
            .with_infinite(config.infer.infinite())
            .with_support(config.model.support),
    )
}

fn infer(common: &Common, data: &Path) -> Result<u8> {
    let config = setup(common)?;
    let dataset = load(data)?;
    let grid = config.theta_grid()?;
    let result = inference(&config, &dataset, common.seed)?.confidence_set(&dataset, &grid)?;
    result.write_csv_file(common.out.join("confidence_set.csv"))?;
    write_report(&common.out, "confidence_set", "infer", &config, result.summary())?;
    print_projections(&result);
    Ok(grid_outcome(&result))
}

fn parse_objects(labels: Option<&[String]>, n_products: usize) -> Result<Vec<EquilibriumObject>> {
    let all = EquilibriumObject::all(n_products);
    match labels {
        None => Ok(all),
        Some(labels) => labels
            .iter()
            .map(|l| {
                all.iter()
                    .find(|o| o.label() == *l)
                    .copied()
                    .ok_or_else(|| ConfigError(format!("[bounds] objects: unknown object {l:?}")).into())
            })
            .collect(),
    }
}

fn bounds(common: &Common, data: &Path, members: Option<&Path>) -> Result<u8> {
    let config = setup(common)?;
    let dataset = load(data)?;
    let market = match &config.bounds.market {
        MarketSelector::Named(name) if name == "median" => median_observation(&dataset)?,
        MarketSelector::Named(id) => dataset
            .markets()
            .iter()
            .find(|m| &m.market_id == id)
            .cloned()
            .ok_or_else(|| ConfigError(format!("[bounds] market: no market {id:?}")))?,
        MarketSelector::Index(i) => dataset
            .markets()
            .get(*i)
            .cloned()
            .ok_or_else(|| ConfigError(format!("[bounds] market: index {i} out of range")))?,
    };
    let set = match members {
        Some(path) => GridResult::read_csv_file(path)?,
        None => identification(&config, &dataset)?.compute(&dataset, &config.theta_grid()?)?,
    };
    if set.is_empty_set() {
        println!("parameter set is empty");
        return Ok(EXIT_EMPTY);
    }
    let objects = parse_objects(config.bounds.objects.as_deref(), dataset.n_products())?;
    let intervals = project_confidence_set(
        &market,
        &set,
        &config.model.s0set()?,
        &config.model.mixing()?,
        config.bounds.s0_points,
        &objects,
        &config.model.support.inversion,
    )?;
    let path = common.out.join("bounds.csv");
    let mut wtr = csv::Writer::from_path(&path).with_context(|| path.display().to_string())?;
    wtr.write_record(["object", "lo", "hi", "evaluated", "skipped"])?;
    for iv in &intervals {
        wtr.write_record([
            iv.label.clone(),
            iv.lo.to_string(),
            iv.hi.to_string(),
            iv.evaluated.to_string(),
            iv.skipped.to_string(),
        ])?;
        println!("{:>6}  [{}, {}]", iv.label, iv.lo, iv.hi);
    }
    wtr.flush()?;
    #[derive(Serialize)]
    struct BoundsResult<'a> {
        market: &'a outshare::model::MarketObservation,
        members: usize,
        intervals: &'a [outshare::identified::ObjectInterval],
    }
    write_report(
        &common.out,
        "bounds",
        "bounds",
        &config,
        BoundsResult {
            market: &market,
            members: set.n_members(),
            intervals: &intervals,
        },
    )?;
    Ok(0)
}

fn counterexample(common: &Common) -> Result<u8> {
    let config = setup(common)?;
    let c = &config.counterexample;
    if !(c.lo > 0.0 && c.hi < 1.0 && c.lo < c.hi) || c.points < 2 {
        return Err(ConfigError("[counterexample] needs 0 < lo < hi < 1 and points >= 2".into()).into());
    }
    let cx = Counterexample::new(c.draws, common.seed.unwrap_or(c.seed))?.with_method(c.method);
    let curve = cx.curve(c.lo, c.hi, c.points)?;
    let best = curve
        .iter()
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .ok_or_else(|| anyhow!("empty curve"))?;
    let step = (c.hi - c.lo) / (c.points - 1) as f64;
    let minimum = cx.minimize((best.s0 - step).max(c.lo), (best.s0 + step).min(c.hi), 1e-5)?;
    let path = common.out.join("counterexample.csv");
    let mut wtr = csv::Writer::from_path(&path).with_context(|| path.display().to_string())?;
    wtr.write_record(["s0", "f", "component_1", "component_2"])?;
    for v in &curve {
        wtr.write_record([v.s0, v.f, v.components[0], v.components[1]].map(|x| x.to_string()))?;
    }
    wtr.flush()?;
    println!("minimum F = {} at s0 = {}", minimum.f, minimum.s0);
    write_report(&common.out, "counterexample", "counterexample", &config, minimum)?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match &cli.command {
        Command::Simulate { common } => simulate(common),
        Command::Identify { common, data } => identify(common, data),
        Command::Infer { common, data } => infer(common, data),
        Command::Bounds { common, data, members } => bounds(common, data, members.as_deref()),
        Command::Counterexample { common } => counterexample(common),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    match err.downcast_ref::<outshare::Error>() {
        Some(outshare::Error::Config(_)) | Some(outshare::Error::Invalid { .. }) => EXIT_CONFIG,
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
