//! Continuous-time Markov chains on a finite state space: validated
//! intensity matrices, transition matrices, and seeded path simulation.

mod expm;

pub use expm::matrix_exp;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Row-sum tolerance for generator validation.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Transition-matrix entries with magnitude below this are round-off and get
/// clamped to zero before row renormalisation.
const CLAMP_TOL: f64 = 1e-13;

/// Generator `Q` of a continuous-time chain. Off-diagonal entries are jump
/// rates (per year), rows sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMatrix {
    n: usize,
    q: DMatrix<f64>,
}

impl IntensityMatrix {
    /// Validates a square matrix as a chain generator.
    pub fn validate(q: DMatrix<f64>) -> Result<Self> {
        let n = q.nrows();
        assert_eq!(n, q.ncols(), "intensity matrix must be square");
        assert!(n >= 1, "intensity matrix must have at least one state");
        if q.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && q[(i, j)] < 0.0 {
                    return Err(Error::NegativeRate {
                        row: i,
                        col: j,
                        value: q[(i, j)],
                    });
                }
            }
            let sum: f64 = q.row(i).iter().sum();
            if sum.abs() > ROW_SUM_TOL {
                return Err(Error::RowSumViolation { row: i, sum });
            }
        }
        Ok(Self { n, q })
    }

    /// Builds a generator from nonnegative off-diagonal rates, setting each
    /// diagonal so rows sum to zero exactly.
    pub fn from_rates(rates: DMatrix<f64>) -> Result<Self> {
        let n = rates.nrows();
        assert_eq!(n, rates.ncols(), "rate matrix must be square");
        if rates.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut q = rates;
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                if q[(i, j)] < 0.0 {
                    return Err(Error::NegativeRate {
                        row: i,
                        col: j,
                        value: q[(i, j)],
                    });
                }
                sum += q[(i, j)];
            }
            q[(i, i)] = -sum;
        }
        Ok(Self { n, q })
    }

    /// Nearest-neighbour generator on a circular state space: state `i` jumps
    /// clockwise to `i+1 (mod n)` at rate `clockwise[i]` and counter-clockwise
    /// to `i-1 (mod n)` at rate `counter[i]`.
    ///
    /// For `n = 2` the two neighbours coincide, so the single off-diagonal
    /// rate is `clockwise[i] + counter[i]`.
    pub fn circular_nearest_neighbour(clockwise: &[f64], counter: &[f64]) -> Result<Self> {
        let n = clockwise.len();
        assert_eq!(n, counter.len(), "rate vectors must have equal length");
        assert!(n >= 2, "a ring needs at least two states");
        let mut rates = DMatrix::zeros(n, n);
        for i in 0..n {
            rates[(i, (i + 1) % n)] += clockwise[i];
            rates[(i, (i + n - 1) % n)] += counter[i];
        }
        Self::from_rates(rates)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Exit rate of state `i`, i.e. `-q[i][i]`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.q[(i, i)]
    }

    /// Transition matrix `exp(q * dt)`. Round-off negatives are clamped and
    /// rows renormalised so each row is a probability vector.
    pub fn transition_matrix(&self, dt: f64) -> Result<DMatrix<f64>> {
        assert!(dt >= 0.0, "dt must be nonnegative");
        let mut p = matrix_exp(&self.q, dt)?;
        for i in 0..self.n {
            let mut dirty = false;
            for j in 0..self.n {
                let x = p[(i, j)];
                if x < 0.0 && x > -CLAMP_TOL {
                    p[(i, j)] = 0.0;
                    dirty = true;
                }
            }
            if dirty {
                let sum: f64 = p.row(i).iter().sum();
                if sum > 0.0 {
                    for j in 0..self.n {
                        p[(i, j)] /= sum;
                    }
                }
            }
        }
        Ok(p)
    }

    /// Simulates one chain path on `[0, horizon]`, deterministic in `seed`.
    pub fn simulate_path(&self, initial_state: usize, horizon: f64, seed: u64) -> ChainPath {
        let mut rng = seeded_rng(seed);
        self.simulate_path_with(initial_state, horizon, &mut rng)
    }

    /// As [`simulate_path`](Self::simulate_path) but drawing from a caller-owned RNG.
    pub fn simulate_path_with(&self, initial_state: usize, horizon: f64, rng: &mut impl Rng) -> ChainPath {
        assert!(initial_state < self.n, "initial state out of range");
        assert!(horizon >= 0.0, "horizon must be nonnegative");
        let mut jump_times = Vec::new();
        let mut jump_states = Vec::new();
        let mut t = 0.0;
        let mut state = initial_state;
        loop {
            let rate = self.exit_rate(state);
            if rate <= 0.0 {
                break;
            }
            t += Exp::new(rate).expect("positive rate").sample(rng);
            if t >= horizon {
                break;
            }
            // destination j != state with probability q[state][j] / rate
            let u: f64 = rng.gen::<f64>() * rate;
            let mut acc = 0.0;
            let mut dest = state;
            for j in 0..self.n {
                if j == state {
                    continue;
                }
                acc += self.q[(state, j)];
                if u < acc {
                    dest = j;
                    break;
                }
            }
            if dest == state {
                // u landed in the trailing round-off sliver; take the last
                // positive-rate neighbour
                dest = (0..self.n)
                    .rev()
                    .find(|&j| j != state && self.q[(state, j)] > 0.0)
                    .unwrap_or(state);
                if dest == state {
                    break;
                }
            }
            jump_times.push(t);
            jump_states.push(dest);
            state = dest;
        }
        ChainPath {
            initial_state,
            jump_times,
            jump_states,
            horizon,
        }
    }
}

/// A realised chain trajectory: holding intervals are implicit between the
/// recorded jump times.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    pub initial_state: usize,
    pub jump_times: Vec<f64>,
    pub jump_states: Vec<usize>,
    pub horizon: f64,
}

impl ChainPath {
    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    /// State occupied at time `t` (jumps take effect at their jump time).
    pub fn state_at(&self, t: f64) -> usize {
        assert!(t >= 0.0 && t <= self.horizon, "time outside path horizon");
        match self.jump_times.partition_point(|&s| s <= t) {
            0 => self.initial_state,
            k => self.jump_states[k - 1],
        }
    }

    pub fn terminal_state(&self) -> usize {
        self.jump_states.last().copied().unwrap_or(self.initial_state)
    }

    /// Exact integral of a per-state function along the path:
    /// sum of `values[state] * holding time` over the piecewise-constant
    /// segments up to `t`.
    pub fn integrate(&self, values: &[f64], t: f64) -> f64 {
        assert!(t >= 0.0 && t <= self.horizon, "time outside path horizon");
        let mut acc = 0.0;
        let mut seg_start = 0.0;
        let mut state = self.initial_state;
        for (&jt, &js) in self.jump_times.iter().zip(&self.jump_states) {
            if jt >= t {
                break;
            }
            acc += values[state] * (jt - seg_start);
            seg_start = jt;
            state = js;
        }
        acc + values[state] * (t - seg_start)
    }

    /// Total time spent in each state up to the horizon.
    pub fn occupation_times(&self, n: usize) -> Vec<f64> {
        let mut occ = vec![0.0; n];
        let mut seg_start = 0.0;
        let mut state = self.initial_state;
        for (&jt, &js) in self.jump_times.iter().zip(&self.jump_states) {
            occ[state] += jt - seg_start;
            seg_start = jt;
            state = js;
        }
        occ[state] += self.horizon - seg_start;
        occ
    }
}
