//! Command-line front end: synthetic markets, calibration runs, pricing
//! tables, and hedge backtests, all driven by one TOML config.
//!
//! Exit codes: 0 success, 2 configuration/validation error, 3 runtime error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{instrument_spec, RunConfig};
use mcpotential::calibration::{run_calibration, report};
use mcpotential::error::Error;
use mcpotential::hedging::{hedge_backtest, write_backtest_file, BacktestValuation};
use mcpotential::instruments::price_states;
use mcpotential::market::{generate_synthetic, load_csv, write_csv, weekday_sequence};

#[derive(Parser)]
#[command(name = "mcpotential", version, about = "Chain-based pricing, calibration and hedging")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "run.toml")]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for particle and path parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic quote panel and its hidden chain path.
    Simulate,
    /// Run the particle filter over a quote file and write posterior reports.
    Calibrate,
    /// Price the configured instruments in every chain state.
    Price,
    /// Run the hedge backtest over a quote file.
    Hedge,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot configure {} threads: {e}", cli.threads);
            return ExitCode::from(2);
        }
    }
    let mut cfg = match RunConfig::load(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!("error: cannot create output directory {}: {e}", cli.out.display());
        return ExitCode::from(2);
    }

    let result = match cli.command {
        Command::Simulate => cmd_simulate(&cfg, &cli.out),
        Command::Calibrate => cmd_calibrate(&cfg, &cli.config, &cli.out),
        Command::Price => cmd_price(&cfg, &cli.out),
        Command::Hedge => cmd_hedge(&cfg, &cli.config, &cli.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Configuration and validation problems exit 2; runtime failures exit 3.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::LayoutMismatch(_)
        | Error::ScheduleError(_)
        | Error::SchemaError(_)
        | Error::ParseError { .. }
        | Error::CrossedQuote { .. }
        | Error::UnknownCurrency(_)
        | Error::MissingSpot(_)
        | Error::RowSumViolation { .. }
        | Error::NegativeRate { .. } => 2,
        _ => 3,
    }
}

/// Resolves a config-relative path.
fn relative_to_config(config_path: &Path, target: &Path) -> PathBuf {
    if target.is_absolute() {
        target.to_path_buf()
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(target)
    }
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> mcpotential::Result<()> {
    let synth = cfg.synthetic_config()?;
    let (snapshots, path) = generate_synthetic(&synth)?;
    let quotes_path = out.join("quotes.csv");
    write_csv(&quotes_path, &snapshots)?;

    // per-date hidden state, plus model time in years
    let dates = weekday_sequence(synth.start_date, synth.n_dates);
    let mut w = csv::Writer::from_path(out.join("hidden_path.csv"))?;
    w.write_record(["date", "t_years", "state"])?;
    for (k, date) in dates.iter().enumerate() {
        let t = synth.dt * k as f64;
        let state = path.state_at(t.min(path.horizon));
        w.write_record([date.to_string(), t.to_string(), state.to_string()])?;
    }
    w.flush()?;
    println!(
        "wrote {} snapshots ({} quotes each) to {}",
        snapshots.len(),
        snapshots.first().map(|s| s.records.len()).unwrap_or(0),
        quotes_path.display()
    );
    Ok(())
}

fn cmd_calibrate(cfg: &RunConfig, config_path: &Path, out: &Path) -> mcpotential::Result<()> {
    let section = cfg
        .calibrate
        .as_ref()
        .ok_or_else(|| Error::Config("missing [calibrate] section".into()))?;
    let snapshots = load_csv(relative_to_config(config_path, &section.quotes))?;
    if snapshots.is_empty() {
        return Err(Error::Config("quote file contains no snapshots".into()));
    }
    let filter_cfg = cfg.filter_config()?;
    let run = run_calibration(
        &snapshots,
        cfg.layout()?,
        &cfg.spots(),
        &cfg.theta()?,
        &filter_cfg,
    )?;
    report::write_posterior_file(out.join("posterior.csv"), &run)?;
    report::write_spread_file(out.join("spread_errors.csv"), &run)?;
    println!("calibrated {} dates (burn-in {})", run.summaries.len(), run.burn_in);
    for class in mcpotential::instruments::InstrumentClass::ALL {
        if let Some(avg) = run.average_spread_error(class) {
            println!("  {class}: average error {avg:.3} spreads after burn-in");
        }
    }
    Ok(())
}

fn cmd_price(cfg: &RunConfig, out: &Path) -> mcpotential::Result<()> {
    let specs = cfg.instrument_specs()?;
    if specs.is_empty() {
        return Err(Error::Config("no instruments configured".into()));
    }
    let models = cfg.models()?;
    let spots = cfg.spots();
    let mut w = csv::Writer::from_path(out.join("prices.csv"))?;
    w.write_record(["instrument", "state", "value"])?;
    for spec in &specs {
        let per_state = price_states(&models, spec, &spots)?;
        for (state, value) in per_state.iter().enumerate() {
            w.write_record([spec.to_string(), state.to_string(), value.to_string()])?;
        }
    }
    w.flush()?;
    println!("priced {} instruments in {} states", specs.len(), models.n());
    Ok(())
}

fn cmd_hedge(cfg: &RunConfig, config_path: &Path, out: &Path) -> mcpotential::Result<()> {
    let section = cfg
        .hedge
        .as_ref()
        .ok_or_else(|| Error::Config("missing [hedge] section".into()))?;
    let snapshots = load_csv(relative_to_config(config_path, &section.quotes))?;
    let target = instrument_spec(&section.target)?;
    let hedges: Vec<_> = section
        .hedges
        .iter()
        .map(instrument_spec)
        .collect::<mcpotential::Result<_>>()?;
    let report = hedge_backtest(
        &snapshots,
        &target,
        &hedges,
        cfg.layout()?,
        &cfg.spots(),
        &cfg.theta()?,
        &cfg.filter_config()?,
        cfg.hedge_mode()?,
        BacktestValuation::PosteriorMean,
    )?;
    write_backtest_file(out.join("hedge_report.csv"), &report)?;
    let mut w = csv::Writer::from_path(out.join("hedge_summary.csv"))?;
    w.write_record(["metric", "value"])?;
    w.write_record([
        "increment_correlation".to_string(),
        report
            .increment_correlation
            .map(|c| c.to_string())
            .unwrap_or_default(),
    ])?;
    w.flush()?;
    match report.increment_correlation {
        Some(c) => println!(
            "backtested {} dates; corr(target increments, -hedge increments) = {c:.4}",
            report.rows.len()
        ),
        None => println!(
            "backtested {} dates; not enough increments for a correlation",
            report.rows.len()
        ),
    }
    Ok(())
}
