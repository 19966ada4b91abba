//! The particle filter over `(xi, theta)`.
//!
//! One assimilation step, given the new snapshot `y`:
//!
//! 1. find the per-date MLE `theta*` (warm-started from the highest-weight
//!    particle — warm starts change speed, not the optimum);
//! 2. propose each particle's new `theta` from the shake family centred at
//!    `theta*`;
//! 3. move each particle's chain state by one draw from the transition
//!    matrix of its *new* generator over the observation gap `dt`;
//! 4. reweight: `log w += log kappa(theta_old, theta_new)
//!    + log f(y | x_new) - log phi(theta_new - theta*)` — the chain factor
//!    cancels because states are proposed from the dynamics, and `kappa`
//!    and `phi` are the same shake family, so when the proposal centre
//!    coincides with a particle's own theta the correction vanishes and the
//!    update reduces to bootstrap reweighting;
//! 5. normalise. Resampling is the caller's decision (conventionally when
//!    the effective sample size drops below half the population).
//!
//! Every random draw comes from a stream addressed by (master seed, step,
//! particle), so results are identical in sequential and parallel runs.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::calibration::optimizer::{mle_search, OptimizerConfig};
use crate::calibration::{CalibrationTarget, ShakeConfig};
use crate::error::{Error, Result};
use crate::instruments::{price_at_state, InstrumentSpec, SpotMap};
use crate::model::{MultiCurrencyModel, ThetaVector};
use crate::rng::SeedSequence;

/// Reserved stream indices within a step's domain.
const STREAM_MLE: u64 = u32::MAX as u64;
const STREAM_RESAMPLE: u64 = u32::MAX as u64 - 1;

/// One weighted hypothesis about the hidden state.
#[derive(Debug, Clone)]
pub struct Particle {
    pub xi: usize,
    pub theta: ThetaVector,
    pub log_weight: f64,
    /// Pricing models for `theta`; `None` when `theta` is invalid (such
    /// particles carry `-inf` weight).
    pub models: Option<Arc<MultiCurrencyModel>>,
}

/// A normalised particle population plus the seed machinery that drives it.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    particles: Vec<Particle>,
    master_seed: u64,
    /// Assimilation steps taken so far (also the RNG stream domain).
    step: u64,
}

impl ParticleCloud {
    /// Initial population: every particle at `theta_init`, chain states
    /// drawn uniformly, uniform weights.
    pub fn init(theta_init: &ThetaVector, n_particles: usize, master_seed: u64) -> Result<Self> {
        if n_particles < 2 {
            return Err(Error::Config("need at least two particles".into()));
        }
        let models = Arc::new(theta_init.unpack_models()?);
        let n_states = models.n();
        let seq = SeedSequence::new(master_seed);
        let lw = -(n_particles as f64).ln();
        let particles = (0..n_particles)
            .map(|i| {
                let mut rng = seq.stream(0, i as u64);
                Particle {
                    xi: rng.gen_range(0..n_states),
                    theta: theta_init.clone(),
                    log_weight: lw,
                    models: Some(models.clone()),
                }
            })
            .collect();
        Ok(Self {
            particles,
            master_seed,
            step: 0,
        })
    }

    /// Builds a cloud from explicit particles, normalising their weights.
    pub fn from_particles(particles: Vec<Particle>, master_seed: u64) -> Result<Self> {
        if particles.len() < 2 {
            return Err(Error::Config("need at least two particles".into()));
        }
        Self::normalised(particles, master_seed, 0)
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Normalised weights (they sum to one by construction).
    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight.exp()).collect()
    }

    /// The finite-weight particle with the largest weight.
    pub fn best_particle(&self) -> &Particle {
        self.particles
            .iter()
            .max_by(|a, b| a.log_weight.total_cmp(&b.log_weight))
            .expect("cloud is never empty")
    }

    fn normalised(mut particles: Vec<Particle>, master_seed: u64, step: u64) -> Result<Self> {
        let max = particles
            .iter()
            .map(|p| p.log_weight)
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Degenerate);
        }
        let log_sum = max
            + particles
                .iter()
                .map(|p| (p.log_weight - max).exp())
                .sum::<f64>()
                .ln();
        for p in &mut particles {
            p.log_weight -= log_sum;
        }
        Ok(Self {
            particles,
            master_seed,
            step,
        })
    }
}

/// `1 / sum w_i^2` of the normalised weights: `N` when uniform, 1 when a
/// single particle carries everything.
pub fn effective_sample_size(cloud: &ParticleCloud) -> f64 {
    1.0 / cloud
        .particles
        .iter()
        .map(|p| (2.0 * p.log_weight).exp())
        .sum::<f64>()
}

/// Systematic resampling with a single uniform offset: ancestor counts stay
/// within one of `N w_i`. Post-resample weights are uniform.
pub fn systematic_resample(cloud: &ParticleCloud, seed: u64) -> ParticleCloud {
    let n = cloud.len();
    let mut rng = crate::rng::seeded_rng(seed);
    let offset: f64 = rng.gen::<f64>() / n as f64;
    let weights = cloud.weights();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..n {
        let u = offset + i as f64 / n as f64;
        while u > cum && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        let mut p = cloud.particles[j].clone();
        p.log_weight = -(n as f64).ln();
        out.push(p);
    }
    ParticleCloud {
        particles: out,
        master_seed: cloud.master_seed,
        step: cloud.step,
    }
}

/// Where proposals are centred.
enum ProposalCentre<'a> {
    /// Importance proposal around a fixed point (the per-date MLE), with
    /// the kappa / phi weight correction.
    Fixed(&'a ThetaVector),
    /// Each particle's own theta: the plain bootstrap filter.
    OwnTheta,
}

fn propagate(
    cloud: &ParticleCloud,
    target: &CalibrationTarget,
    dt: f64,
    shake: &ShakeConfig,
    centre: ProposalCentre<'_>,
) -> Result<ParticleCloud> {
    assert!(dt > 0.0, "observation gap must be positive");
    let step = cloud.step + 1;
    let seq = SeedSequence::new(cloud.master_seed);
    let dim = cloud.particles[0].theta.len();
    let centre_theta = match centre {
        ProposalCentre::Fixed(t) => Some(t),
        ProposalCentre::OwnTheta => None,
    };

    let particles: Vec<Particle> = cloud
        .particles
        .par_iter()
        .enumerate()
        .map(|(i, prev)| {
            let mut rng = seq.stream(step, i as u64);
            let around = centre_theta.unwrap_or(&prev.theta);
            let mut values = around.values().clone();
            for k in 0..dim {
                values[k] += shake.sample(&mut rng);
            }
            let theta = prev.theta.with_values(values);
            let u: f64 = rng.gen();

            let (models, xi, log_lik) = match theta.unpack_models() {
                Ok(models) => {
                    let xi = match models.q().transition_matrix(dt) {
                        Ok(p) => {
                            let row = p.row(prev.xi);
                            let mut acc = 0.0;
                            let mut dest = models.n() - 1;
                            for (j, &pj) in row.iter().enumerate() {
                                acc += pj;
                                if u < acc {
                                    dest = j;
                                    break;
                                }
                            }
                            dest
                        }
                        Err(_) => prev.xi,
                    };
                    let models = Arc::new(models);
                    let ll = target.log_likelihood_with_models(xi, &models);
                    (Some(models), xi, ll)
                }
                Err(_) => (None, prev.xi, f64::NEG_INFINITY),
            };

            let log_weight = match centre_theta {
                Some(centre) => {
                    // kappa and phi share the family, so this is exactly zero
                    // when the centre coincides with the particle's own theta
                    let correction = shake.log_density_vec(&prev.theta, &theta)
                        - shake.log_density_vec(centre, &theta);
                    prev.log_weight + correction + log_lik
                }
                None => prev.log_weight + log_lik,
            };
            Particle {
                xi,
                theta,
                log_weight,
                models,
            }
        })
        .collect();

    ParticleCloud::normalised(particles, cloud.master_seed, step)
}

/// Full assimilation step: per-date MLE (pinned to the highest-weight
/// particle's state), proposal around it, reweight, normalise. Returns the
/// new cloud and the MLE.
pub fn pf_step(
    cloud: &ParticleCloud,
    target: &CalibrationTarget,
    dt: f64,
    shake: &ShakeConfig,
    opt: &OptimizerConfig,
) -> Result<(ParticleCloud, ThetaVector)> {
    let warm = cloud.best_particle();
    let warm_theta = warm.theta.clone();
    // pin the search to the warm-start particle's state: any state works
    // by label permutation, and keeping the filter's own labelling avoids
    // re-breaking the symmetry differently every date
    let pinned_state = warm.xi;
    let mut mle_rng = SeedSequence::new(cloud.master_seed).stream(cloud.step + 1, STREAM_MLE);
    let (theta_star, _) = mle_search(target, &warm_theta, pinned_state, opt, &mut mle_rng);
    let next = propagate(cloud, target, dt, shake, ProposalCentre::Fixed(&theta_star))?;
    Ok((next, theta_star))
}

/// Assimilation step with an externally supplied proposal centre (no MLE).
pub fn pf_step_with_center(
    cloud: &ParticleCloud,
    target: &CalibrationTarget,
    dt: f64,
    shake: &ShakeConfig,
    centre: &ThetaVector,
) -> Result<ParticleCloud> {
    propagate(cloud, target, dt, shake, ProposalCentre::Fixed(centre))
}

/// Plain bootstrap step: shake around each particle's own theta and
/// reweight by the likelihood alone.
pub fn bootstrap_step(
    cloud: &ParticleCloud,
    target: &CalibrationTarget,
    dt: f64,
    shake: &ShakeConfig,
) -> Result<ParticleCloud> {
    propagate(cloud, target, dt, shake, ProposalCentre::OwnTheta)
}

/// Posterior summary of one instrument's price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PricePosterior {
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
}

/// Posterior mean and weighted 5%/95% quantiles of `spec`'s price across
/// the cloud. Particles with invalid models are skipped (they carry zero
/// weight); remaining weights are renormalised over the priced subset.
pub fn model_price(
    cloud: &ParticleCloud,
    spec: &InstrumentSpec,
    spots: &SpotMap,
) -> Result<PricePosterior> {
    let mut priced: Vec<(f64, f64)> = Vec::with_capacity(cloud.len());
    for p in cloud.particles() {
        let w = p.log_weight.exp();
        if w == 0.0 {
            continue;
        }
        let models = p.models.as_ref().ok_or(Error::Degenerate)?;
        priced.push((price_at_state(models, spec, p.xi, spots)?, w));
    }
    if priced.is_empty() {
        return Err(Error::Degenerate);
    }
    let total: f64 = priced.iter().map(|&(_, w)| w).sum();
    let mean = priced.iter().map(|&(v, w)| v * w).sum::<f64>() / total;
    priced.sort_by(|a, b| a.0.total_cmp(&b.0));
    let quantile = |q: f64| {
        let mut cum = 0.0;
        for &(v, w) in &priced {
            cum += w / total;
            if cum >= q {
                return v;
            }
        }
        priced.last().expect("nonempty").0
    };
    Ok(PricePosterior {
        mean,
        q05: quantile(0.05),
        q95: quantile(0.95),
    })
}

/// Stream index reserved for resampling decisions in a step's domain.
pub(crate) fn resample_seed(cloud: &ParticleCloud) -> u64 {
    SeedSequence::new(cloud.master_seed)
        .stream(cloud.step, STREAM_RESAMPLE)
        .gen()
}
