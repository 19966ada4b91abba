//! Jump-immunisation hedging.
//!
//! On a chain there is nothing to differentiate: a hedge neutralises the
//! discrete value changes caused by state jumps. If instrument `Z` jumps
//! from `Z_i` to `Z_j` when the chain moves `i -> j`, holding `w_r` units
//! of hedge `z^(r)` aims at
//!
//! ```text
//! dZ_ij + sum_r w_r dz^(r)_ij = 0
//! ```
//!
//! either for all `j` from a known current state `i` (n-1 constraints) or
//! over every ordered pair `(i, j)` when the state is unknown (n(n-1)
//! constraints). Both solves are least squares; rank-deficient systems get
//! the minimum-norm solution with the residual reported rather than an
//! error. Under the particle filter, each particle solves the known-state
//! problem at its own state and the portfolio is the weight-averaged one.

use std::io::Write as IoWrite;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::calibration::{model_price, FilterConfig, FilterDriver, ParticleCloud};
use crate::error::{Error, Result};
use crate::instruments::{price_states, InstrumentSpec, SpotMap};
use crate::market::MarketSnapshot;
use crate::model::{MultiCurrencyModel, ThetaLayout, ThetaVector};

/// Matrix of per-jump value changes: entry `(i, j)` is the instrument's
/// price in state `j` minus its price in state `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpDeltaMatrix {
    deltas: DMatrix<f64>,
}

impl JumpDeltaMatrix {
    pub fn from_state_prices(prices: &DVector<f64>) -> Self {
        let n = prices.len();
        let deltas = DMatrix::from_fn(n, n, |i, j| prices[j] - prices[i]);
        Self { deltas }
    }

    pub fn n(&self) -> usize {
        self.deltas.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.deltas
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.deltas[(i, j)]
    }
}

/// Per-jump value changes of `spec` under `models`.
pub fn jump_deltas(
    models: &MultiCurrencyModel,
    spec: &InstrumentSpec,
    spots: &SpotMap,
) -> Result<JumpDeltaMatrix> {
    Ok(JumpDeltaMatrix::from_state_prices(&price_states(
        models, spec, spots,
    )?))
}

/// Hedge weights (units held per hedge instrument) and the worst-case
/// post-hedge jump P&L over the constraint set.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgePortfolio {
    pub weights: Vec<f64>,
    /// Max |dZ + sum w dz| over the constraints solved.
    pub residual: f64,
    /// `residual` divided by the largest |dZ| constrained (0 when the
    /// target does not jump at all).
    pub relative_residual: f64,
}

/// Minimum-norm least squares of `A w = -b`, with singular values below
/// `max_dim * eps * s_max` treated as zero.
fn solve_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = a.nrows().max(a.ncols()) as f64 * f64::EPSILON * s_max.max(1e-300);
    svd.solve(&(-b), eps).map_err(|_| Error::SingularSystem)
}

fn portfolio_from(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    weights: DVector<f64>,
) -> HedgePortfolio {
    let resid_vec = a * &weights + b;
    let residual = resid_vec.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let relative_residual = if scale > 0.0 { residual / scale } else { 0.0 };
    HedgePortfolio {
        weights: weights.iter().copied().collect(),
        residual,
        relative_residual,
    }
}

/// Hedge against all jumps out of the known state `i`.
pub fn solve_hedge_known_state(
    state: usize,
    target: &JumpDeltaMatrix,
    hedges: &[JumpDeltaMatrix],
) -> Result<HedgePortfolio> {
    let n = target.n();
    if hedges.is_empty() {
        return Err(Error::Config("at least one hedge instrument required".into()));
    }
    if hedges.iter().any(|h| h.n() != n) {
        return Err(Error::ModelMismatch("hedge jump deltas have a different state count".into()));
    }
    assert!(state < n, "state out of range");
    let rows: Vec<usize> = (0..n).filter(|&j| j != state).collect();
    let a = DMatrix::from_fn(rows.len(), hedges.len(), |r, c| hedges[c].get(state, rows[r]));
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|&j| target.get(state, j)));
    let w = solve_least_squares(&a, &b)?;
    Ok(portfolio_from(&a, &b, w))
}

/// Hedge against every ordered jump `(i, j)`, `i != j`, for when the
/// current state is unknown.
pub fn solve_hedge_all_states(
    target: &JumpDeltaMatrix,
    hedges: &[JumpDeltaMatrix],
) -> Result<HedgePortfolio> {
    let n = target.n();
    if hedges.is_empty() {
        return Err(Error::Config("at least one hedge instrument required".into()));
    }
    if hedges.iter().any(|h| h.n() != n) {
        return Err(Error::ModelMismatch("hedge jump deltas have a different state count".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let a = DMatrix::from_fn(pairs.len(), hedges.len(), |r, c| {
        hedges[c].get(pairs[r].0, pairs[r].1)
    });
    let b = DVector::from_iterator(pairs.len(), pairs.iter().map(|&(i, j)| target.get(i, j)));
    let w = solve_least_squares(&a, &b)?;
    Ok(portfolio_from(&a, &b, w))
}

/// How per-particle hedges are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HedgeMode {
    /// Each particle knows its state: solve the known-state problem there.
    KnownStatePerParticle,
    /// Hedge all jumps regardless of the particle's state.
    AllStates,
}

/// Weight-averaged hedge across the cloud: each particle solves its own
/// problem under its own model, and the portfolios are averaged by
/// particle weight. Residuals are averaged the same way.
pub fn particle_hedge(
    cloud: &ParticleCloud,
    target_spec: &InstrumentSpec,
    hedge_specs: &[InstrumentSpec],
    spots: &SpotMap,
    mode: HedgeMode,
) -> Result<HedgePortfolio> {
    let mut weights = vec![0.0; hedge_specs.len()];
    let mut residual = 0.0;
    let mut relative = 0.0;
    let mut total_w = 0.0;
    for p in cloud.particles() {
        let w = p.log_weight.exp();
        if w == 0.0 {
            continue;
        }
        let models = p.models.as_ref().ok_or(Error::Degenerate)?;
        let target = jump_deltas(models, target_spec, spots)?;
        let hedges: Vec<JumpDeltaMatrix> = hedge_specs
            .iter()
            .map(|s| jump_deltas(models, s, spots))
            .collect::<Result<_>>()?;
        let solved = match mode {
            HedgeMode::KnownStatePerParticle => {
                solve_hedge_known_state(p.xi, &target, &hedges)?
            }
            HedgeMode::AllStates => solve_hedge_all_states(&target, &hedges)?,
        };
        for (acc, wi) in weights.iter_mut().zip(&solved.weights) {
            *acc += w * wi;
        }
        residual += w * solved.residual;
        relative += w * solved.relative_residual;
        total_w += w;
    }
    if total_w == 0.0 {
        return Err(Error::Degenerate);
    }
    Ok(HedgePortfolio {
        weights: weights.iter().map(|x| x / total_w).collect(),
        residual: residual / total_w,
        relative_residual: relative / total_w,
    })
}

/// Per-date marks supplied by the caller (market closes of the target and
/// each hedge instrument), for backtests of books that are marked outside
/// the model.
#[derive(Debug, Clone)]
pub struct ExternalMarks {
    /// Target value per date.
    pub target: Vec<f64>,
    /// One value series per hedge instrument, aligned with the dates.
    pub hedges: Vec<Vec<f64>>,
}

/// Where the backtest's value series come from.
#[derive(Debug, Clone, Copy)]
pub enum BacktestValuation<'a> {
    /// Posterior-mean model prices.
    PosteriorMean,
    /// Prices under each date's maximum-likelihood fit at its pinned state
    /// (the fitted-value series a calibration report plots).
    MlePath,
    /// Caller-supplied marks.
    External(&'a ExternalMarks),
}

/// One backtest date: values of the target and of the hedge portfolio, and
/// the increments realised since the previous date (the hedge increment
/// uses the weights held over the interval).
#[derive(Debug, Clone)]
pub struct BacktestRow {
    pub date: chrono::NaiveDate,
    pub target_value: f64,
    pub hedge_value: f64,
    pub target_increment: Option<f64>,
    pub hedge_increment: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BacktestReport {
    pub rows: Vec<BacktestRow>,
    /// Pearson correlation between target increments and the negated hedge
    /// increments after the burn-in window.
    pub increment_correlation: Option<f64>,
    pub burn_in: usize,
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Calibrate date by date, re-solve the hedge, and track how well the
/// hedge increments mirror the target's. Hedge weights always come from
/// the calibrated cloud; the value series come from `marks` when given and
/// from posterior means otherwise.
pub fn hedge_backtest(
    snapshots: &[MarketSnapshot],
    target_spec: &InstrumentSpec,
    hedge_specs: &[InstrumentSpec],
    layout: Arc<ThetaLayout>,
    spots: &SpotMap,
    theta_init: &ThetaVector,
    cfg: &FilterConfig,
    mode: HedgeMode,
    valuation: BacktestValuation<'_>,
) -> Result<BacktestReport> {
    if snapshots.len() < 2 {
        return Err(Error::Config("backtest needs at least two snapshots".into()));
    }
    if hedge_specs.is_empty() {
        return Err(Error::Config("backtest needs at least one hedge instrument".into()));
    }
    if let BacktestValuation::External(m) = valuation {
        if m.target.len() != snapshots.len()
            || m.hedges.len() != hedge_specs.len()
            || m.hedges.iter().any(|h| h.len() != snapshots.len())
        {
            return Err(Error::Config(
                "external marks must cover every date and hedge instrument".into(),
            ));
        }
    }
    let mut driver = FilterDriver::new(layout, spots.clone(), theta_init, cfg.clone())?;
    let mut rows: Vec<BacktestRow> = Vec::with_capacity(snapshots.len());
    let mut prev_weights: Option<Vec<f64>> = None;
    let mut prev_values: Option<(f64, Vec<f64>)> = None;
    for (k, snap) in snapshots.iter().enumerate() {
        driver.assimilate(snap)?;
        let cloud = driver.cloud();
        let (target_value, hedge_values) = match valuation {
            BacktestValuation::External(m) => (
                m.target[k],
                m.hedges.iter().map(|h| h[k]).collect::<Vec<f64>>(),
            ),
            BacktestValuation::PosteriorMean => (
                model_price(cloud, target_spec, spots)?.mean,
                hedge_specs
                    .iter()
                    .map(|s| model_price(cloud, s, spots).map(|p| p.mean))
                    .collect::<Result<Vec<f64>>>()?,
            ),
            BacktestValuation::MlePath => {
                let (theta_star, pinned) =
                    driver.last_mle().expect("assimilate sets the MLE");
                let models = theta_star.unpack_models()?;
                (
                    crate::instruments::price_at_state(&models, target_spec, pinned, spots)?,
                    hedge_specs
                        .iter()
                        .map(|s| crate::instruments::price_at_state(&models, s, pinned, spots))
                        .collect::<Result<Vec<f64>>>()?,
                )
            }
        };
        let portfolio = particle_hedge(cloud, target_spec, hedge_specs, spots, mode)?;
        let hedge_value: f64 = portfolio
            .weights
            .iter()
            .zip(&hedge_values)
            .map(|(w, v)| w * v)
            .sum();

        let (target_increment, hedge_increment) = match (&prev_weights, &prev_values) {
            (Some(w_prev), Some((z_prev, v_prev))) => {
                let dz = target_value - z_prev;
                let dh: f64 = w_prev
                    .iter()
                    .zip(hedge_values.iter().zip(v_prev))
                    .map(|(w, (v, vp))| w * (v - vp))
                    .sum();
                (Some(dz), Some(dh))
            }
            _ => (None, None),
        };
        rows.push(BacktestRow {
            date: snap.date,
            target_value,
            hedge_value,
            target_increment,
            hedge_increment,
        });
        prev_weights = Some(portfolio.weights.clone());
        prev_values = Some((target_value, hedge_values));
    }

    let mut dz = Vec::new();
    let mut neg_dh = Vec::new();
    for row in rows.iter().skip(cfg.burn_in.max(1)) {
        if let (Some(z), Some(h)) = (row.target_increment, row.hedge_increment) {
            dz.push(z);
            neg_dh.push(-h);
        }
    }
    Ok(BacktestReport {
        rows,
        increment_correlation: pearson(&dz, &neg_dh),
        burn_in: cfg.burn_in,
    })
}

/// `date,target_value,hedge_value,target_increment,hedge_increment` —
/// increments empty on the first date.
pub fn write_backtest_csv<W: IoWrite>(writer: W, report: &BacktestReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "date",
        "target_value",
        "hedge_value",
        "target_increment",
        "hedge_increment",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.date.to_string(),
            r.target_value.to_string(),
            r.hedge_value.to_string(),
            r.target_increment.map(|x| x.to_string()).unwrap_or_default(),
            r.hedge_increment.map(|x| x.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_backtest_file(path: impl AsRef<Path>, report: &BacktestReport) -> Result<()> {
    write_backtest_csv(std::fs::File::create(path)?, report)
}
