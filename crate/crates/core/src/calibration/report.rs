//! Drives the filter over a snapshot sequence and summarises the posterior.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;

use crate::calibration::filter::{
    effective_sample_size, model_price, pf_step, resample_seed, systematic_resample,
    ParticleCloud,
};
use crate::calibration::optimizer::OptimizerConfig;
use crate::calibration::{CalibrationTarget, ObservationNoise, ShakeConfig};
use crate::error::{Error, Result};
use crate::instruments::{InstrumentClass, PriceVector, SpotMap};
use crate::market::{spread_error, MarketSnapshot, SpreadError};
use crate::model::{ThetaLayout, ThetaVector};

/// Everything a calibration run needs besides the data.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    pub n_particles: usize,
    pub shake: ShakeConfig,
    pub noise: ObservationNoise,
    pub optimizer: OptimizerConfig,
    /// Resample when ESS < `ess_threshold * N`.
    pub ess_threshold: f64,
    /// Years of chain time between consecutive snapshots.
    pub dt: f64,
    /// Dates to discard before scoring fit quality.
    pub burn_in: usize,
    pub seed: u64,
}

/// Per-instrument posterior row of one date.
#[derive(Debug, Clone)]
pub struct PosteriorRow {
    pub instrument: String,
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
    pub bid: f64,
    pub ask: f64,
}

/// One date's filter output.
#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    pub date: NaiveDate,
    pub rows: Vec<PosteriorRow>,
    pub spread: SpreadError,
    pub ess: f64,
    pub resampled: bool,
}

/// A completed calibration run.
#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub summaries: Vec<PosteriorSummary>,
    pub burn_in: usize,
}

impl CalibrationRun {
    /// Mean of the per-date per-class average spread errors, over dates
    /// after the burn-in window that quote the class.
    pub fn average_spread_error(&self, class: InstrumentClass) -> Option<f64> {
        let vals: Vec<f64> = self
            .summaries
            .iter()
            .skip(self.burn_in)
            .filter_map(|s| s.spread.average_for(class))
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Sequential assimilation of `snapshots`, resampling on low ESS.
/// Fails on an empty panel; deterministic given the config seed.
pub fn run_calibration(
    snapshots: &[MarketSnapshot],
    layout: Arc<ThetaLayout>,
    spots: &SpotMap,
    theta_init: &ThetaVector,
    cfg: &FilterConfig,
) -> Result<CalibrationRun> {
    let mut driver = FilterDriver::new(layout, spots.clone(), theta_init, cfg.clone())?;
    let mut summaries = Vec::with_capacity(snapshots.len());
    for snap in snapshots {
        summaries.push(driver.assimilate(snap)?);
    }
    Ok(CalibrationRun {
        summaries,
        burn_in: cfg.burn_in,
    })
}

/// Stepwise calibration driver; [`run_calibration`] wraps it, and the hedge
/// backtest interleaves with it.
pub struct FilterDriver {
    layout: Arc<ThetaLayout>,
    spots: SpotMap,
    cfg: FilterConfig,
    cloud: ParticleCloud,
    last_mle: Option<(ThetaVector, usize)>,
}

impl FilterDriver {
    pub fn new(
        layout: Arc<ThetaLayout>,
        spots: SpotMap,
        theta_init: &ThetaVector,
        cfg: FilterConfig,
    ) -> Result<Self> {
        if !(cfg.dt > 0.0) {
            return Err(Error::Config("filter dt must be positive".into()));
        }
        if !(0.0..=1.0).contains(&cfg.ess_threshold) {
            return Err(Error::Config("ESS threshold must lie in [0, 1]".into()));
        }
        let cloud = ParticleCloud::init(theta_init, cfg.n_particles, cfg.seed)?;
        Ok(Self {
            layout,
            spots,
            cfg,
            cloud,
            last_mle: None,
        })
    }

    pub fn cloud(&self) -> &ParticleCloud {
        &self.cloud
    }

    pub fn spots(&self) -> &SpotMap {
        &self.spots
    }

    /// The most recent per-date optimum and the state it was pinned to.
    pub fn last_mle(&self) -> Option<(&ThetaVector, usize)> {
        self.last_mle.as_ref().map(|(t, s)| (t, *s))
    }

    /// One date: assimilate, summarise, resample if impoverished.
    pub fn assimilate(&mut self, snapshot: &MarketSnapshot) -> Result<PosteriorSummary> {
        if snapshot.records.is_empty() {
            return Err(Error::Config(format!("snapshot {} has no quotes", snapshot.date)));
        }
        let target = CalibrationTarget::compile(
            snapshot,
            &self.cfg.noise,
            self.layout.clone(),
            self.spots.clone(),
        )?;
        let pinned_state = self.cloud.best_particle().xi;
        let (next, theta_star) = pf_step(
            &self.cloud,
            &target,
            self.cfg.dt,
            &self.cfg.shake,
            &self.cfg.optimizer,
        )?;
        self.cloud = next;
        self.last_mle = Some((theta_star, pinned_state));

        let mut rows = Vec::with_capacity(snapshot.records.len());
        let mut means = Vec::with_capacity(snapshot.records.len());
        for record in &snapshot.records {
            let post = model_price(&self.cloud, &record.spec, &self.spots)?;
            means.push(post.mean);
            rows.push(PosteriorRow {
                instrument: record.spec.to_string(),
                mean: post.mean,
                q05: post.q05,
                q95: post.q95,
                bid: record.bid,
                ask: record.ask,
            });
        }
        let prices = PriceVector {
            specs: snapshot.records.iter().map(|r| r.spec.clone()).collect(),
            values: means,
        };
        let spread = spread_error(&prices, snapshot)?;

        let ess = effective_sample_size(&self.cloud);
        let resampled = ess < self.cfg.ess_threshold * self.cloud.len() as f64;
        if resampled {
            let seed = resample_seed(&self.cloud);
            self.cloud = systematic_resample(&self.cloud, seed);
        }
        Ok(PosteriorSummary {
            date: snapshot.date,
            rows,
            spread,
            ess,
            resampled,
        })
    }
}

/// `date,instrument,mean,q05,q95,bid,ask` — one row per instrument per date.
pub fn write_posterior_csv<W: Write>(writer: W, run: &CalibrationRun) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "instrument", "mean", "q05", "q95", "bid", "ask"])?;
    for s in &run.summaries {
        for r in &s.rows {
            w.write_record([
                s.date.to_string(),
                r.instrument.clone(),
                r.mean.to_string(),
                r.q05.to_string(),
                r.q95.to_string(),
                r.bid.to_string(),
                r.ask.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_posterior_file(path: impl AsRef<Path>, run: &CalibrationRun) -> Result<()> {
    write_posterior_csv(std::fs::File::create(path)?, run)
}

/// `date,kind,avg_error_spreads,n_spreads,avg_error_bp,n_bp` — the per-kind
/// fit-quality series. The basis-point columns are empty unless a quote had
/// zero width.
pub fn write_spread_csv<W: Write>(writer: W, run: &CalibrationRun) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "kind", "avg_error_spreads", "n_spreads", "avg_error_bp", "n_bp"])?;
    for s in &run.summaries {
        for class in InstrumentClass::ALL {
            let in_spreads = s.spread.in_spreads.get(&class);
            let in_bp = s.spread.in_basis_points.get(&class);
            if in_spreads.is_none() && in_bp.is_none() {
                continue;
            }
            let (se, sn) = in_spreads
                .map(|&(a, n)| (a.to_string(), n.to_string()))
                .unwrap_or_default();
            let (be, bn) = in_bp
                .map(|&(a, n)| (a.to_string(), n.to_string()))
                .unwrap_or_default();
            w.write_record([
                s.date.to_string(),
                class.to_string(),
                se,
                sn,
                be,
                bn,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_spread_file(path: impl AsRef<Path>, run: &CalibrationRun) -> Result<()> {
    write_spread_csv(std::fs::File::create(path)?, run)
}
