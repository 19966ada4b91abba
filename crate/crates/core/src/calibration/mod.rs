//! Calibration to daily quote panels.
//!
//! The hidden state is `x = (xi, theta)`: the chain state and the
//! log-parameter vector. Quotes are observed in logs with independent
//! zero-mean gaussian noise per instrument class,
//! `log y_k = log eta_k(x) + eps_k`, so the observation log-likelihood is a
//! sum of gaussian log-densities of the log residuals. Invalid parameter
//! vectors (non-positive kernel, overflow) score `-inf` and die in the
//! reweighting step.
//!
//! Submodules: [`optimizer`] finds the per-date maximum-likelihood
//! parameters with the chain state pinned to the first state; [`filter`]
//! runs the particle filter that proposes around that optimum; [`report`]
//! drives the filter over a snapshot sequence and writes the posterior CSVs.

pub mod filter;
pub mod optimizer;
pub mod report;

pub use filter::{
    bootstrap_step, effective_sample_size, model_price, pf_step, pf_step_with_center,
    systematic_resample, Particle, ParticleCloud, PricePosterior,
};
pub use optimizer::{mle_search, OptimizerConfig};
pub use report::{
    run_calibration, CalibrationRun, FilterConfig, FilterDriver, PosteriorRow, PosteriorSummary,
};

use std::f64::consts::PI;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal, StudentT};

use crate::error::{Error, Result};
use crate::instruments::{price_at_state, InstrumentClass, InstrumentSpec, SpotMap};
use crate::market::MarketSnapshot;
use crate::model::{ThetaLayout, ThetaVector};

/// Observation noise: std of the log-price residual, per instrument class.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationNoise {
    sigma_by_class: IndexMap<InstrumentClass, f64>,
}

impl ObservationNoise {
    pub fn new(sigma_by_class: IndexMap<InstrumentClass, f64>) -> Result<Self> {
        for (c, &s) in &sigma_by_class {
            if !(s > 0.0) {
                return Err(Error::Config(format!("sigma for {c} must be positive, got {s}")));
            }
        }
        Ok(Self { sigma_by_class })
    }

    /// Same std for every class.
    pub fn uniform(sigma: f64) -> Result<Self> {
        Self::new(InstrumentClass::ALL.iter().map(|&c| (c, sigma)).collect())
    }

    pub fn sigma(&self, class: InstrumentClass) -> Result<f64> {
        self.sigma_by_class
            .get(&class)
            .copied()
            .ok_or_else(|| Error::Config(format!("no observation sigma for kind {class}")))
    }
}

/// Distribution family for the parameter shake and the proposal kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShakeFamily {
    Gaussian,
    StudentT { dof: f64 },
    Laplace,
}

/// The shake kernel: independent per-coordinate perturbations in
/// log-parameter space with the given standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShakeConfig {
    pub family: ShakeFamily,
    pub scale: f64,
}

impl ShakeConfig {
    pub fn new(family: ShakeFamily, scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::Config(format!("shake scale must be positive, got {scale}")));
        }
        if let ShakeFamily::StudentT { dof } = family {
            if !(dof > 2.0) {
                return Err(Error::Config(
                    "student-t shake needs dof > 2 for a finite standard deviation".into(),
                ));
            }
        }
        Ok(Self { family, scale })
    }

    /// Gaussian with the conventional 0.05 log-space std.
    pub fn default_gaussian() -> Self {
        Self {
            family: ShakeFamily::Gaussian,
            scale: 0.05,
        }
    }

    /// Scale factor turning a standard draw into one with std `scale`.
    fn scaled_width(&self) -> f64 {
        match self.family {
            ShakeFamily::Gaussian => self.scale,
            // std of a standard t is sqrt(dof / (dof - 2))
            ShakeFamily::StudentT { dof } => self.scale / (dof / (dof - 2.0)).sqrt(),
            // std of Laplace(b) is sqrt(2) b
            ShakeFamily::Laplace => self.scale / std::f64::consts::SQRT_2,
        }
    }

    /// One coordinate draw with standard deviation `scale`.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let c = self.scaled_width();
        match self.family {
            ShakeFamily::Gaussian => Normal::new(0.0, c).expect("valid sigma").sample(rng),
            ShakeFamily::StudentT { dof } => {
                c * StudentT::new(dof).expect("valid dof").sample(rng)
            }
            ShakeFamily::Laplace => {
                let u: f64 = rng.gen::<f64>() - 0.5;
                -c * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }

    /// Log-density of one coordinate displacement.
    pub fn log_density(&self, dx: f64) -> f64 {
        let c = self.scaled_width();
        match self.family {
            ShakeFamily::Gaussian => {
                -0.5 * (dx / c).powi(2) - c.ln() - 0.5 * (2.0 * PI).ln()
            }
            ShakeFamily::StudentT { dof } => {
                let z = dx / c;
                ln_gamma(0.5 * (dof + 1.0))
                    - ln_gamma(0.5 * dof)
                    - 0.5 * (dof * PI).ln()
                    - c.ln()
                    - 0.5 * (dof + 1.0) * (1.0 + z * z / dof).ln()
            }
            ShakeFamily::Laplace => -dx.abs() / c - (2.0 * c).ln(),
        }
    }

    /// Sum of per-coordinate log-densities of `to - from`.
    pub fn log_density_vec(&self, from: &ThetaVector, to: &ThetaVector) -> f64 {
        debug_assert_eq!(from.len(), to.len());
        to.values()
            .iter()
            .zip(from.values().iter())
            .map(|(&t, &f)| self.log_density(t - f))
            .sum()
    }
}

/// Lanczos approximation (g = 7, n = 9), accurate to ~1e-13 for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(x > 0.0);
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// A snapshot compiled for repeated likelihood evaluation: specs with their
/// log-mids and noise stds, plus the parameter layout and FX spots needed
/// to price them.
#[derive(Debug, Clone)]
pub struct CalibrationTarget {
    pub layout: Arc<ThetaLayout>,
    pub spots: SpotMap,
    pub specs: Vec<InstrumentSpec>,
    pub log_mids: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl CalibrationTarget {
    pub fn compile(
        snapshot: &MarketSnapshot,
        noise: &ObservationNoise,
        layout: Arc<ThetaLayout>,
        spots: SpotMap,
    ) -> Result<Self> {
        let mut specs = Vec::with_capacity(snapshot.records.len());
        let mut log_mids = Vec::with_capacity(snapshot.records.len());
        let mut sigmas = Vec::with_capacity(snapshot.records.len());
        for r in &snapshot.records {
            let mid = r.mid();
            if mid <= 0.0 {
                return Err(Error::NonPositiveQuote(r.spec.to_string()));
            }
            specs.push(r.spec.clone());
            log_mids.push(mid.ln());
            sigmas.push(noise.sigma(r.spec.class())?);
        }
        Ok(Self {
            layout,
            spots,
            specs,
            log_mids,
            sigmas,
        })
    }

    /// Log-likelihood of the snapshot at `(xi, theta)`; `-inf` when theta
    /// does not unpack to a valid model or a model price is non-positive.
    pub fn log_likelihood(&self, xi: usize, theta: &ThetaVector) -> f64 {
        let models = match theta.unpack_models() {
            Ok(m) => m,
            Err(_) => return f64::NEG_INFINITY,
        };
        self.log_likelihood_with_models(xi, &models)
    }

    /// As [`log_likelihood`](Self::log_likelihood) with the models already built.
    pub fn log_likelihood_with_models(
        &self,
        xi: usize,
        models: &crate::model::MultiCurrencyModel,
    ) -> f64 {
        let mut acc = 0.0;
        for ((spec, &log_mid), &sigma) in
            self.specs.iter().zip(&self.log_mids).zip(&self.sigmas)
        {
            let eta = match price_at_state(models, spec, xi, &self.spots) {
                Ok(v) => v,
                Err(_) => return f64::NEG_INFINITY,
            };
            if !(eta > 0.0) || !eta.is_finite() {
                return f64::NEG_INFINITY;
            }
            let r = log_mid - eta.ln();
            acc += -0.5 * (r / sigma).powi(2) - sigma.ln() - 0.5 * (2.0 * PI).ln();
        }
        acc
    }

    /// The maximum attainable log-likelihood (zero residuals everywhere).
    pub fn max_log_likelihood(&self) -> f64 {
        self.sigmas
            .iter()
            .map(|s| -s.ln() - 0.5 * (2.0 * PI).ln())
            .sum()
    }
}

/// Observation log-likelihood of a snapshot at `(xi, theta)`.
///
/// Errors on non-positive quote mids; invalid models return `-inf` rather
/// than an error, matching how the optimizer and filter treat them.
pub fn log_likelihood(
    snapshot: &MarketSnapshot,
    xi: usize,
    theta: &ThetaVector,
    noise: &ObservationNoise,
    spots: &SpotMap,
) -> Result<f64> {
    let target = CalibrationTarget::compile(
        snapshot,
        noise,
        theta.layout().clone(),
        spots.clone(),
    )?;
    Ok(target.log_likelihood(xi, theta))
}
