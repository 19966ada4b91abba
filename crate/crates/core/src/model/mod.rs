//! The pricing kernel.
//!
//! A currency block is `(alpha, g)` on top of a shared chain generator `Q`.
//! Solving `(diag(alpha) - Q) f = g` for a strictly positive `f` yields the
//! state-price density `f(X_t) exp(-int_0^t alpha(X_s) ds)`, and every
//! time-`tau` claim prices through the propagator
//! `M(tau) = exp((Q - diag(alpha)) tau)`:
//!
//! ```text
//! price_i(h, tau) = [M(tau) (f . h)]_i / f_i          (. = elementwise)
//! B_i(tau)        = [M(tau) f]_i / f_i
//! r_i             = g_i / f_i = alpha_i - (Q f)_i / f_i
//! ```
//!
//! Rescaling `g` by a positive constant rescales `f` and cancels everywhere,
//! so prices depend on `g` only up to scale; the packed parameter vector
//! pins `g[0] = 1` to remove that redundancy.

mod theta;

pub use theta::{QStructure, ThetaLayout, ThetaVector};

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};

use crate::chain::{matrix_exp, IntensityMatrix};
use crate::error::{Error, Result};

/// Per-currency parameters: killing rates `alpha > 0` and supermartingale
/// seed `g >= 0`. The canonical normalisation has `g[0] = 1`; unnormalised
/// vectors are accepted and produce the same prices.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrencyParams {
    alpha: DVector<f64>,
    g: DVector<f64>,
}

impl CurrencyParams {
    pub fn new(alpha: DVector<f64>, g: DVector<f64>) -> Result<Self> {
        assert_eq!(alpha.len(), g.len(), "alpha and g must have equal length");
        if alpha.iter().any(|x| !x.is_finite()) || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        if let Some((i, &a)) = alpha.iter().enumerate().find(|(_, &a)| a <= 0.0) {
            return Err(Error::Config(format!("alpha[{i}] = {a} must be positive")));
        }
        if let Some((i, &gi)) = g.iter().enumerate().find(|(_, &gi)| gi < 0.0) {
            return Err(Error::Config(format!("g[{i}] = {gi} must be nonnegative")));
        }
        Ok(Self { alpha, g })
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn g(&self) -> &DVector<f64> {
        &self.g
    }
}

type PropagatorCache = Arc<RwLock<HashMap<u64, Arc<DMatrix<f64>>>>>;

/// A single-currency pricing model: shared generator, currency parameters,
/// and the derived kernel vector `f`.
///
/// Immutable after construction; the propagator cache fills idempotently
/// under concurrent use, keyed on the exact bit pattern of `tau`.
#[derive(Debug, Clone)]
pub struct PotentialModel {
    q: IntensityMatrix,
    params: CurrencyParams,
    f: DVector<f64>,
    /// Q - diag(alpha), the generator of the discounted semigroup.
    generator: DMatrix<f64>,
    cache: PropagatorCache,
}

impl PotentialModel {
    /// Solves `(diag(alpha) - Q) f = g` and rejects models whose kernel is
    /// not strictly positive.
    pub fn build(q: IntensityMatrix, params: CurrencyParams) -> Result<Self> {
        assert_eq!(q.n(), params.n(), "generator and parameters disagree on state count");
        let n = q.n();
        let mut a = -q.matrix().clone();
        for i in 0..n {
            a[(i, i)] += params.alpha[i];
        }
        let f = a.lu().solve(&params.g).ok_or(Error::SingularSystem)?;
        if f.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        if let Some((i, &fi)) = f.iter().enumerate().find(|(_, &fi)| fi <= 0.0) {
            return Err(Error::NonPositiveF { state: i, value: fi });
        }
        let mut generator = q.matrix().clone();
        for i in 0..n {
            generator[(i, i)] -= params.alpha[i];
        }
        Ok(Self {
            q,
            params,
            f,
            generator,
            cache: Arc::new(RwLock::new(HashMap::new())),
        })
    }

    pub fn n(&self) -> usize {
        self.q.n()
    }

    pub fn q(&self) -> &IntensityMatrix {
        &self.q
    }

    pub fn params(&self) -> &CurrencyParams {
        &self.params
    }

    pub fn f(&self) -> &DVector<f64> {
        &self.f
    }

    /// Per-state short rate `r_i = g_i / f_i`.
    pub fn short_rate(&self) -> DVector<f64> {
        self.params.g.component_div(&self.f)
    }

    /// Propagator `M(tau) = exp((Q - diag(alpha)) tau)`, cached per exact `tau`.
    pub fn propagator(&self, tau: f64) -> Result<Arc<DMatrix<f64>>> {
        assert!(tau >= 0.0, "tau must be nonnegative");
        let key = tau.to_bits();
        if let Some(m) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(m.clone());
        }
        let m = Arc::new(matrix_exp(&self.generator, tau)?);
        let mut w = self.cache.write().expect("cache lock");
        Ok(w.entry(key).or_insert(m).clone())
    }

    /// Time-0 per-state price of the claim paying `payoff[X_tau]` at `tau`.
    pub fn price_terminal(&self, tau: f64, payoff: &DVector<f64>) -> Result<DVector<f64>> {
        assert_eq!(payoff.len(), self.n(), "payoff length mismatch");
        let m = self.propagator(tau)?;
        let weighted = self.f.component_mul(payoff);
        Ok((&*m * weighted).component_div(&self.f))
    }

    /// Discount bond `B_i(tau) = [M(tau) f]_i / f_i`.
    pub fn zcb(&self, tau: f64) -> Result<DVector<f64>> {
        let m = self.propagator(tau)?;
        Ok((&*m * &self.f).component_div(&self.f))
    }
}

/// Several currencies on one shared chain. The first inserted currency is
/// the base against which FX forwards are quoted.
#[derive(Debug, Clone)]
pub struct MultiCurrencyModel {
    q: IntensityMatrix,
    currencies: IndexMap<String, PotentialModel>,
    base: String,
}

impl MultiCurrencyModel {
    pub fn new(q: IntensityMatrix, params: Vec<(String, CurrencyParams)>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Config("at least one currency required".into()));
        }
        let base = params[0].0.clone();
        let mut currencies = IndexMap::new();
        for (code, p) in params {
            let model = PotentialModel::build(q.clone(), p)?;
            if currencies.insert(code.clone(), model).is_some() {
                return Err(Error::Config(format!("duplicate currency {code}")));
            }
        }
        Ok(Self { q, currencies, base })
    }

    pub fn n(&self) -> usize {
        self.q.n()
    }

    pub fn q(&self) -> &IntensityMatrix {
        &self.q
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn currency(&self, code: &str) -> Result<&PotentialModel> {
        self.currencies
            .get(code)
            .ok_or_else(|| Error::UnknownCurrency(code.to_string()))
    }

    pub fn currencies(&self) -> impl Iterator<Item = (&str, &PotentialModel)> {
        self.currencies.iter().map(|(k, v)| (k.as_str(), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_state_reference() -> PotentialModel {
        let q = IntensityMatrix::validate(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]))
            .unwrap();
        let params = CurrencyParams::new(
            DVector::from_vec(vec![0.02, 0.06]),
            DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        PotentialModel::build(q, params).unwrap()
    }

    /// Independent 2x2 solve of (diag(alpha) - Q) f = g by Cramer's rule.
    fn cramer_f(q: &DMatrix<f64>, alpha: &[f64], g: &[f64]) -> (f64, f64) {
        let a11 = alpha[0] - q[(0, 0)];
        let a12 = -q[(0, 1)];
        let a21 = -q[(1, 0)];
        let a22 = alpha[1] - q[(1, 1)];
        let det = a11 * a22 - a12 * a21;
        (
            (g[0] * a22 - a12 * g[1]) / det,
            (a11 * g[1] - g[0] * a21) / det,
        )
    }

    fn random_model(n: usize, seed: u64) -> PotentialModel {
        use rand::Rng;
        let mut rng = crate::rng::seeded_rng(seed);
        let mut rates = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    rates[(i, j)] = rng.gen_range(0.05..2.5);
                }
            }
        }
        let q = IntensityMatrix::from_rates(rates).unwrap();
        let alpha = DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(0.005..0.1)));
        let g = DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(0.5..1.5)));
        PotentialModel::build(q, CurrencyParams::new(alpha, g).unwrap()).unwrap()
    }

    #[test]
    fn scalar_model_solves_directly() {
        let q = IntensityMatrix::validate(DMatrix::from_row_slice(1, 1, &[0.0])).unwrap();
        let params = CurrencyParams::new(
            DVector::from_vec(vec![0.05]),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let m = PotentialModel::build(q, params).unwrap();
        assert_relative_eq!(m.f()[0], 20.0, max_relative = 1e-14);
        assert_relative_eq!(m.short_rate()[0], 0.05, max_relative = 1e-14);
    }

    #[test]
    fn two_state_kernel_matches_cramer_oracle() {
        let m = two_state_reference();
        let (f0, f1) = cramer_f(m.q().matrix(), &[0.02, 0.06], &[1.0, 1.0]);
        assert_relative_eq!(m.f()[0], f0, max_relative = 1e-12);
        assert_relative_eq!(m.f()[1], f1, max_relative = 1e-12);
        // det(diag(alpha) - Q) = 1.02 * 1.06 - 1 = 0.0812
        assert_relative_eq!(m.f()[0], 25.3695, epsilon = 1e-4);
        assert_relative_eq!(m.f()[1], 24.8768, epsilon = 1e-4);
    }

    #[test]
    fn zero_g_is_rejected() {
        let q = IntensityMatrix::validate(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]))
            .unwrap();
        let params = CurrencyParams::new(
            DVector::from_vec(vec![0.02, 0.06]),
            DVector::from_vec(vec![0.0, 0.0]),
        )
        .unwrap();
        assert!(matches!(
            PotentialModel::build(q, params),
            Err(Error::NonPositiveF { .. })
        ));
    }

    #[test]
    fn short_rate_reference_values() {
        let m = two_state_reference();
        let r = m.short_rate();
        assert_relative_eq!(r[0], 0.039417, epsilon = 1e-6);
        assert_relative_eq!(r[1], 0.040198, epsilon = 1e-6);
    }

    #[test]
    fn kernel_solves_the_defining_system() {
        // (diag(alpha) - Q) f = g to 1e-10 relative
        for seed in 300..320u64 {
            let m = random_model(5, seed);
            let mut a = -m.q().matrix().clone();
            for i in 0..5 {
                a[(i, i)] += m.params().alpha()[i];
            }
            let resid = &a * m.f() - m.params().g();
            let scale = m.params().g().amax();
            assert!(
                resid.amax() <= 1e-10 * scale,
                "residual {:e}",
                resid.amax()
            );
        }
    }

    #[test]
    fn short_rate_identity_on_random_models() {
        // g/f = alpha - (Qf)/f elementwise
        for seed in 0..20u64 {
            let m = random_model(4, seed);
            let lhs = m.short_rate();
            let qf = m.q().matrix() * m.f();
            for i in 0..4 {
                let rhs = m.params().alpha()[i] - qf[i] / m.f()[i];
                assert_relative_eq!(lhs[i], rhs, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn propagator_identity_at_zero_and_scalar_decay() {
        let m = two_state_reference();
        assert_eq!(&*m.propagator(0.0).unwrap(), &DMatrix::identity(2, 2));

        let q1 = IntensityMatrix::validate(DMatrix::from_row_slice(1, 1, &[0.0])).unwrap();
        let p1 = CurrencyParams::new(
            DVector::from_vec(vec![0.07]),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let m1 = PotentialModel::build(q1, p1).unwrap();
        let prop = m1.propagator(2.0).unwrap();
        assert_relative_eq!(prop[(0, 0)], (-0.14f64).exp(), max_relative = 1e-13);
    }

    #[test]
    fn propagator_cache_returns_same_instance() {
        let m = two_state_reference();
        let a = m.propagator(1.25).unwrap();
        let b = m.propagator(1.25).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }

    #[test]
    fn propagator_cache_is_safe_under_concurrent_first_fill() {
        use rayon::prelude::*;
        let m = two_state_reference();
        let results: Vec<_> = (0..64)
            .into_par_iter()
            .map(|k| m.propagator(0.5 + (k % 4) as f64).unwrap())
            .collect();
        for (k, r) in results.iter().enumerate() {
            assert!(Arc::ptr_eq(r, &results[k % 4]));
        }
    }

    #[test]
    fn zcb_basics() {
        let q = IntensityMatrix::validate(DMatrix::from_row_slice(1, 1, &[0.0])).unwrap();
        let p = CurrencyParams::new(
            DVector::from_vec(vec![0.05]),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let m = PotentialModel::build(q, p).unwrap();
        assert_relative_eq!(m.zcb(1.0).unwrap()[0], 0.951229, epsilon = 1e-6);
        assert_relative_eq!(m.zcb(0.0).unwrap()[0], 1.0, max_relative = 1e-15);

        let m2 = two_state_reference();
        let b = m2.zcb(0.0).unwrap();
        assert_relative_eq!(b[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(b[1], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn price_terminal_zero_payoff_and_unit_bond() {
        let m = two_state_reference();
        let zero = m.price_terminal(1.0, &DVector::zeros(2)).unwrap();
        assert_eq!(zero, DVector::zeros(2));
        let unit = m
            .price_terminal(0.75, &DVector::from_element(2, 1.0))
            .unwrap();
        let bond = m.zcb(0.75).unwrap();
        assert_relative_eq!(unit[0], bond[0], max_relative = 1e-14);
        assert_relative_eq!(unit[1], bond[1], max_relative = 1e-14);
    }

    #[test]
    fn supermartingale_decay_and_positivity() {
        for seed in 100..120u64 {
            let m = random_model(5, seed);
            assert!(m.f().iter().all(|&x| x > 0.0));
            let mut prev: Option<DVector<f64>> = None;
            for k in 0..=20 {
                let tau = 0.5 * k as f64;
                let mf = &*m.propagator(tau).unwrap() * m.f();
                if let Some(p) = prev {
                    for i in 0..5 {
                        assert!(
                            mf[i] <= p[i] * (1.0 + 1e-12),
                            "supermartingale violated at tau={tau}, state {i}"
                        );
                    }
                }
                prev = Some(mf);
            }
        }
    }

    #[test]
    fn g_scaling_leaves_prices_unchanged() {
        for seed in 200..210u64 {
            let m = random_model(4, seed);
            let scaled = CurrencyParams::new(m.params().alpha().clone(), m.params().g() * 7.5)
                .unwrap();
            let ms = PotentialModel::build(m.q().clone(), scaled).unwrap();
            for &tau in &[0.25, 1.0, 5.0] {
                let a = m.zcb(tau).unwrap();
                let b = ms.zcb(tau).unwrap();
                for i in 0..4 {
                    assert_relative_eq!(a[i], b[i], epsilon = 1e-10);
                }
            }
            let ra = m.short_rate();
            let rb = ms.short_rate();
            for i in 0..4 {
                assert_relative_eq!(ra[i], rb[i], epsilon = 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn price_terminal_is_linear(seed in 0u64..50, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let m = random_model(3, seed);
            let h1 = DVector::from_vec(vec![1.0, 0.2, -0.5]);
            let h2 = DVector::from_vec(vec![0.0, 1.5, 2.0]);
            let combo = m.price_terminal(1.0, &(&h1 * a + &h2 * b)).unwrap();
            let parts = m.price_terminal(1.0, &h1).unwrap() * a + m.price_terminal(1.0, &h2).unwrap() * b;
            for i in 0..3 {
                prop_assert!((combo[i] - parts[i]).abs() <= 1e-12 * (1.0 + parts[i].abs()));
            }
        }
    }
}
