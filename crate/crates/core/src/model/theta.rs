//! Log-parameter vector for optimisation and filtering.
//!
//! The search space is the flat vector
//! `theta = ((log q_ij)_structure, per currency: log alpha, (log g_i)_{i>0})`
//! with `g[0]` pinned to 1 (rescaling `g` does not change prices). The `Q`
//! block depends on the chosen structure:
//!
//! - `Full`: all `n(n-1)` off-diagonal rates, row-major
//! - `Circular`: `2n` ring rates (clockwise block, then counter-clockwise)
//! - `OneWayRing`: `n` clockwise rates only
//!
//! Single-currency lengths are `n(n-1) + 2n - 1` (full) and `3n + n - 1`
//! (circular); e.g. 109 for a 10-state full generator and 19 for a 5-state
//! ring.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::chain::IntensityMatrix;
use crate::error::{Error, Result};
use crate::model::{CurrencyParams, MultiCurrencyModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QStructure {
    Full,
    Circular,
    OneWayRing,
}

impl fmt::Display for QStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QStructure::Full => write!(f, "full"),
            QStructure::Circular => write!(f, "circular"),
            QStructure::OneWayRing => write!(f, "one_way"),
        }
    }
}

/// Shape of the parameter vector: state count, generator structure, and the
/// ordered currency codes (the first is the base currency).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThetaLayout {
    n: usize,
    structure: QStructure,
    currencies: Vec<String>,
}

impl ThetaLayout {
    pub fn new(n: usize, structure: QStructure, currencies: Vec<String>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("state count must be positive".into()));
        }
        if currencies.is_empty() {
            return Err(Error::Config("at least one currency required".into()));
        }
        if matches!(structure, QStructure::Circular | QStructure::OneWayRing) && n < 2 {
            return Err(Error::Config("ring structures need at least two states".into()));
        }
        Ok(Self { n, structure, currencies })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn structure(&self) -> QStructure {
        self.structure
    }

    pub fn currencies(&self) -> &[String] {
        &self.currencies
    }

    pub fn q_len(&self) -> usize {
        match self.structure {
            QStructure::Full => self.n * (self.n - 1),
            QStructure::Circular => 2 * self.n,
            QStructure::OneWayRing => self.n,
        }
    }

    /// Total vector length: Q block plus `2n - 1` per currency.
    pub fn len(&self) -> usize {
        self.q_len() + self.currencies.len() * (2 * self.n - 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exponentiates `theta` into a generator and per-currency parameters,
    /// with `g[0] = 1`.
    pub fn unpack(&self, theta: &ThetaVector) -> Result<(IntensityMatrix, Vec<CurrencyParams>)> {
        if !std::ptr::eq(self, &*theta.layout) && *self != *theta.layout {
            return Err(Error::LayoutMismatch("theta built for a different layout".into()));
        }
        let v = &theta.values;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let n = self.n;
        let mut rates = DMatrix::zeros(n, n);
        match self.structure {
            QStructure::Full => {
                let mut k = 0;
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        rates[(i, j)] = v[k].exp();
                        k += 1;
                    }
                }
            }
            QStructure::Circular => {
                for i in 0..n {
                    rates[(i, (i + 1) % n)] += v[i].exp();
                }
                for i in 0..n {
                    rates[(i, (i + n - 1) % n)] += v[n + i].exp();
                }
            }
            QStructure::OneWayRing => {
                for i in 0..n {
                    rates[(i, (i + 1) % n)] += v[i].exp();
                }
            }
        }
        let q = IntensityMatrix::from_rates(rates)?;
        let mut params = Vec::with_capacity(self.currencies.len());
        let mut k = self.q_len();
        for _ in &self.currencies {
            let alpha = DVector::from_iterator(n, (0..n).map(|i| v[k + i].exp()));
            k += n;
            let mut g = DVector::from_element(n, 1.0);
            for i in 1..n {
                g[i] = v[k + i - 1].exp();
            }
            k += n - 1;
            params.push(CurrencyParams::new(alpha, g)?);
        }
        Ok((q, params))
    }

    /// Unpacks and builds the multi-currency pricing model (solving for each
    /// currency's kernel vector).
    pub fn unpack_models(&self, theta: &ThetaVector) -> Result<MultiCurrencyModel> {
        let (q, params) = self.unpack(theta)?;
        MultiCurrencyModel::new(
            q,
            self.currencies.iter().cloned().zip(params).collect(),
        )
    }

    /// Takes logs of a generator and currency parameters. `g` is normalised
    /// by `g[0]` first, so models differing only by the scale of `g` pack to
    /// the same vector. All structurally free rates (and `alpha`, `g`) must
    /// be strictly positive, and the generator must fit the declared
    /// structure exactly.
    pub fn pack(&self, q: &IntensityMatrix, params: &[CurrencyParams]) -> Result<ThetaVector> {
        if q.n() != self.n {
            return Err(Error::LayoutMismatch(format!(
                "generator has {} states, layout expects {}",
                q.n(),
                self.n
            )));
        }
        if params.len() != self.currencies.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} currency blocks supplied, layout expects {}",
                params.len(),
                self.currencies.len()
            )));
        }
        let n = self.n;
        let m = q.matrix();
        let mut values = Vec::with_capacity(self.len());
        let log_rate = |i: usize, j: usize| -> Result<f64> {
            let r = m[(i, j)];
            if r <= 0.0 {
                return Err(Error::LayoutMismatch(format!(
                    "rate q[{i}][{j}] = {r} must be positive to take logs"
                )));
            }
            Ok(r.ln())
        };
        match self.structure {
            QStructure::Full => {
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            values.push(log_rate(i, j)?);
                        }
                    }
                }
            }
            QStructure::Circular => {
                self.check_ring(m, true)?;
                for i in 0..n {
                    values.push(log_rate(i, (i + 1) % n)?);
                }
                for i in 0..n {
                    values.push(log_rate(i, (i + n - 1) % n)?);
                }
            }
            QStructure::OneWayRing => {
                self.check_ring(m, false)?;
                for i in 0..n {
                    values.push(log_rate(i, (i + 1) % n)?);
                }
            }
        }
        for p in params {
            if p.n() != n {
                return Err(Error::LayoutMismatch("currency block has wrong state count".into()));
            }
            for i in 0..n {
                values.push(p.alpha()[i].ln());
            }
            let g0 = p.g()[0];
            if g0 <= 0.0 {
                return Err(Error::LayoutMismatch(
                    "g[0] must be positive to normalise".into(),
                ));
            }
            for i in 1..n {
                let gi = p.g()[i] / g0;
                if gi <= 0.0 {
                    return Err(Error::LayoutMismatch(format!(
                        "g[{i}] must be positive to take logs"
                    )));
                }
                values.push(gi.ln());
            }
        }
        Ok(ThetaVector {
            layout: Arc::new(self.clone()),
            values: DVector::from_vec(values),
        })
    }

    /// For ring structures (`n > 2`), entries off the ring must be zero.
    fn check_ring(&self, m: &DMatrix<f64>, two_way: bool) -> Result<()> {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                if i == j || j == (i + 1) % n || (two_way && j == (i + n - 1) % n) {
                    continue;
                }
                if m[(i, j)] != 0.0 {
                    return Err(Error::LayoutMismatch(format!(
                        "q[{i}][{j}] = {} is off the ring",
                        m[(i, j)]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A point in log-parameter space, tagged with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector {
    layout: Arc<ThetaLayout>,
    values: DVector<f64>,
}

impl ThetaVector {
    pub fn new(layout: Arc<ThetaLayout>, values: DVector<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LayoutMismatch(format!(
                "vector has length {}, layout expects {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &Arc<ThetaLayout> {
        &self.layout
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }

    /// Same layout, new coordinates.
    pub fn with_values(&self, values: DVector<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            layout: self.layout.clone(),
            values,
        }
    }

    pub fn unpack(&self) -> Result<(IntensityMatrix, Vec<CurrencyParams>)> {
        self.layout.unpack(self)
    }

    pub fn unpack_models(&self) -> Result<MultiCurrencyModel> {
        self.layout.unpack_models(self)
    }
}
