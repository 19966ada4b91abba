//! Closed-form pricing of the quoted instrument universe.
//!
//! Everything reduces to discount bonds and terminal claims on the chain:
//!
//! - Libor: `L_i(tau) = (1/B_i(tau) - 1) / tau`
//! - annuity over quarterly dates: `A_i = delta * sum_k B_i(t_k)`
//! - swap rate: `S_i = (B_i(start) - B_i(end)) / A_i`
//! - caplet resetting at `T`: terminal claim paying
//!   `delta * B_j(delta) * (L_j(delta) - K)^+` at `T` (the payment one period
//!   later is discounted into the payoff, saving a propagator step); the
//!   period-0 caplet is excluded, as quoted caps exclude the known fixing
//! - swaption: terminal claim at expiry paying `A_j * (+/-(S_j - K))^+`
//!   with the swap schedule measured from expiry
//! - FX forward: covered parity `F_i = spot * B^f_i / B^d_i`
//!
//! Rates are decimals, option premia are per unit notional, all tenors are
//! exact year fractions with quarterly accrual `delta = 0.25` by default;
//! there is no calendar logic.

use std::fmt;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{MultiCurrencyModel, PotentialModel};

/// Default accrual fraction (quarterly payments).
pub const DEFAULT_DELTA: f64 = 0.25;

/// Option strike: explicit, or resolved to the model's at-the-money forward
/// level at pricing time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strike {
    Atm,
    Fixed(f64),
}

impl fmt::Display for Strike {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strike::Atm => write!(f, "ATM"),
            Strike::Fixed(k) => write!(f, "{k}"),
        }
    }
}

/// Instrument payoff family. Broad class used to key spreads and
/// observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InstrumentClass {
    Libor,
    Swap,
    Cap,
    Swaption,
    FxForward,
}

impl InstrumentClass {
    pub const ALL: [InstrumentClass; 5] = [
        InstrumentClass::Libor,
        InstrumentClass::Swap,
        InstrumentClass::Cap,
        InstrumentClass::Swaption,
        InstrumentClass::FxForward,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            InstrumentClass::Libor => "libor",
            InstrumentClass::Swap => "swap",
            InstrumentClass::Cap => "cap",
            InstrumentClass::Swaption => "swaption",
            InstrumentClass::FxForward => "fx_forward",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == s)
    }
}

impl fmt::Display for InstrumentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InstrumentKind {
    Libor { tenor: f64 },
    SwapRate { tenor: f64 },
    Cap { maturity: f64, strike: Strike },
    Swaption { expiry: f64, swap_tenor: f64, strike: Strike, payer: bool },
    /// Forward on the spec's currency against the model set's base currency;
    /// the spec's `currency` is the foreign leg.
    FxForward { tenor: f64 },
}

/// One quoted instrument: payoff, currency, accrual.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentSpec {
    pub kind: InstrumentKind,
    pub currency: String,
    pub delta: f64,
}

impl InstrumentSpec {
    pub fn new(kind: InstrumentKind, currency: impl Into<String>) -> Self {
        Self {
            kind,
            currency: currency.into(),
            delta: DEFAULT_DELTA,
        }
    }

    pub fn class(&self) -> InstrumentClass {
        match self.kind {
            InstrumentKind::Libor { .. } => InstrumentClass::Libor,
            InstrumentKind::SwapRate { .. } => InstrumentClass::Swap,
            InstrumentKind::Cap { .. } => InstrumentClass::Cap,
            InstrumentKind::Swaption { .. } => InstrumentClass::Swaption,
            InstrumentKind::FxForward { .. } => InstrumentClass::FxForward,
        }
    }

    /// Validates tenors against the accrual grid.
    pub fn validate(&self) -> Result<()> {
        if self.delta <= 0.0 {
            return Err(Error::ScheduleError("accrual delta must be positive".into()));
        }
        match &self.kind {
            InstrumentKind::Libor { tenor } | InstrumentKind::FxForward { tenor, .. } => {
                if *tenor <= 0.0 {
                    return Err(Error::ScheduleError("tenor must be positive".into()));
                }
            }
            InstrumentKind::SwapRate { tenor } => {
                check_on_grid(*tenor, self.delta, "swap tenor")?;
            }
            InstrumentKind::Cap { maturity, .. } => {
                check_on_grid(*maturity, self.delta, "cap maturity")?;
                if *maturity < 2.0 * self.delta {
                    return Err(Error::ScheduleError(
                        "cap maturity must cover at least one reset after time 0".into(),
                    ));
                }
            }
            InstrumentKind::Swaption { expiry, swap_tenor, .. } => {
                if *expiry <= 0.0 {
                    return Err(Error::ScheduleError("swaption expiry must be positive".into()));
                }
                check_on_grid(*swap_tenor, self.delta, "swaption swap tenor")?;
            }
        }
        Ok(())
    }
}

fn check_on_grid(tenor: f64, delta: f64, what: &str) -> Result<()> {
    if tenor <= 0.0 {
        return Err(Error::ScheduleError(format!("{what} must be positive")));
    }
    let periods = tenor / delta;
    if (periods - periods.round()).abs() > 1e-9 || periods.round() < 1.0 {
        return Err(Error::ScheduleError(format!(
            "{what} {tenor} is not a positive multiple of the accrual {delta}"
        )));
    }
    Ok(())
}

/// Canonical label used in report files, e.g. `USD:swaption:1x2y:payer:ATM`.
impl fmt::Display for InstrumentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            InstrumentKind::Libor { tenor } => write!(f, "{}:libor:{tenor}y", self.currency),
            InstrumentKind::SwapRate { tenor } => write!(f, "{}:swap:{tenor}y", self.currency),
            InstrumentKind::Cap { maturity, strike } => {
                write!(f, "{}:cap:{maturity}y:{strike}", self.currency)
            }
            InstrumentKind::Swaption { expiry, swap_tenor, strike, payer } => write!(
                f,
                "{}:swaption:{expiry}x{swap_tenor}y:{}:{strike}",
                self.currency,
                if *payer { "payer" } else { "receiver" }
            ),
            InstrumentKind::FxForward { tenor } => {
                write!(f, "{}:fx_forward:{tenor}y", self.currency)
            }
        }
    }
}

/// Model prices for an ordered list of specs.
#[derive(Debug, Clone)]
pub struct PriceVector {
    pub specs: Vec<InstrumentSpec>,
    pub values: Vec<f64>,
}

/// Simple-compounded Libor per state.
pub fn libor(model: &PotentialModel, tau: f64) -> Result<DVector<f64>> {
    assert!(tau > 0.0, "libor tenor must be positive");
    let b = model.zcb(tau)?;
    Ok(b.map(|bi| (1.0 / bi - 1.0) / tau))
}

/// Fixed-leg annuity `delta * sum B(t_k)` over `t_k = start + delta, ..., end`.
pub fn annuity(model: &PotentialModel, start: f64, end: f64, delta: f64) -> Result<DVector<f64>> {
    schedule_guard(start, end, delta)?;
    let periods = ((end - start) / delta).round() as usize;
    let mut a = DVector::zeros(model.n());
    for k in 1..=periods {
        let t = start + delta * k as f64;
        a += model.zcb(t)?;
    }
    Ok(a * delta)
}

/// Forward-starting par swap rate per state.
pub fn swap_rate(model: &PotentialModel, start: f64, end: f64, delta: f64) -> Result<DVector<f64>> {
    let a = annuity(model, start, end, delta)?;
    let b_start = if start == 0.0 {
        DVector::from_element(model.n(), 1.0)
    } else {
        model.zcb(start)?
    };
    let b_end = model.zcb(end)?;
    Ok((b_start - b_end).component_div(&a))
}

fn schedule_guard(start: f64, end: f64, delta: f64) -> Result<()> {
    if start < 0.0 || end <= start || delta <= 0.0 {
        return Err(Error::ScheduleError(format!(
            "invalid schedule start={start}, end={end}, delta={delta}"
        )));
    }
    let periods = (end - start) / delta;
    if (periods - periods.round()).abs() > 1e-9 || periods.round() < 1.0 {
        return Err(Error::ScheduleError(format!(
            "schedule length {} is not a positive multiple of delta {delta}",
            end - start
        )));
    }
    Ok(())
}

/// Cap as a strip of caplets resetting at `delta, 2 delta, ..., maturity - delta`.
pub fn cap_price(model: &PotentialModel, maturity: f64, strike: f64, delta: f64) -> Result<DVector<f64>> {
    if maturity < 2.0 * delta {
        return Err(Error::ScheduleError(
            "cap maturity must cover at least one reset after time 0".into(),
        ));
    }
    schedule_guard(0.0, maturity, delta)?;
    let resets = (maturity / delta).round() as usize - 1;
    let b_delta = model.zcb(delta)?;
    let l_delta = libor(model, delta)?;
    let caplet_payoff = DVector::from_iterator(
        model.n(),
        (0..model.n()).map(|j| delta * b_delta[j] * (l_delta[j] - strike).max(0.0)),
    );
    let mut total = DVector::zeros(model.n());
    for k in 1..=resets {
        total += model.price_terminal(delta * k as f64, &caplet_payoff)?;
    }
    Ok(total)
}

/// Swaption on a swap running from `expiry` to `expiry + swap_tenor`.
pub fn swaption_price(
    model: &PotentialModel,
    expiry: f64,
    swap_tenor: f64,
    strike: f64,
    payer: bool,
    delta: f64,
) -> Result<DVector<f64>> {
    if expiry <= 0.0 {
        return Err(Error::ScheduleError("swaption expiry must be positive".into()));
    }
    // time homogeneity: the state-j annuity and swap rate seen at expiry
    // equal the spot-starting ones of the same tenor
    let a = annuity(model, 0.0, swap_tenor, delta)?;
    let s = swap_rate(model, 0.0, swap_tenor, delta)?;
    let sign = if payer { 1.0 } else { -1.0 };
    let payoff = DVector::from_iterator(
        model.n(),
        (0..model.n()).map(|j| a[j] * (sign * (s[j] - strike)).max(0.0)),
    );
    model.price_terminal(expiry, &payoff)
}

/// Covered-parity FX forward `F_i = spot * B^f_i / B^d_i`. Both models must
/// share the chain.
pub fn fx_forward(
    domestic: &PotentialModel,
    foreign: &PotentialModel,
    spot: f64,
    tau: f64,
) -> Result<DVector<f64>> {
    if domestic.n() != foreign.n() || domestic.q() != foreign.q() {
        return Err(Error::ModelMismatch(
            "FX forward requires both currencies on the same chain".into(),
        ));
    }
    if spot <= 0.0 {
        return Err(Error::Config(format!("spot {spot} must be positive")));
    }
    let bd = domestic.zcb(tau)?;
    let bf = foreign.zcb(tau)?;
    Ok(DVector::from_iterator(
        domestic.n(),
        (0..domestic.n()).map(|i| spot * bf[i] / bd[i]),
    ))
}

/// ATM strike at state `i`: the model's forward swap rate over the
/// instrument's own period.
fn atm_strike(model: &PotentialModel, spec: &InstrumentSpec, state: usize) -> Result<f64> {
    match &spec.kind {
        InstrumentKind::Cap { maturity, .. } => {
            Ok(swap_rate(model, 0.0, *maturity, spec.delta)?[state])
        }
        InstrumentKind::Swaption { expiry, swap_tenor, .. } => {
            Ok(swap_rate(model, *expiry, expiry + swap_tenor, spec.delta)?[state])
        }
        _ => Err(Error::ScheduleError(
            "ATM strike only defined for caps and swaptions".into(),
        )),
    }
}

/// Resolves the spec's strike at `state`, if it has one.
pub fn resolve_strike(
    models: &MultiCurrencyModel,
    spec: &InstrumentSpec,
    state: usize,
) -> Result<Option<f64>> {
    let strike = match &spec.kind {
        InstrumentKind::Cap { strike, .. } | InstrumentKind::Swaption { strike, .. } => *strike,
        _ => return Ok(None),
    };
    match strike {
        Strike::Fixed(k) => Ok(Some(k)),
        Strike::Atm => {
            let model = models.currency(&spec.currency)?;
            Ok(Some(atm_strike(model, spec, state)?))
        }
    }
}

/// Spot FX levels, one per non-base currency, in base units per foreign unit.
pub type SpotMap = indexmap::IndexMap<String, f64>;

/// Prices `spec` in every chain state. ATM strikes resolve per pricing
/// state, so entry `i` is the premium of the state-`i` ATM instrument.
pub fn price_states(
    models: &MultiCurrencyModel,
    spec: &InstrumentSpec,
    spots: &SpotMap,
) -> Result<DVector<f64>> {
    spec.validate()?;
    let model = models.currency(&spec.currency)?;
    match &spec.kind {
        InstrumentKind::Libor { tenor } => libor(model, *tenor),
        InstrumentKind::SwapRate { tenor } => swap_rate(model, 0.0, *tenor, spec.delta),
        InstrumentKind::Cap { maturity, strike } => match strike {
            Strike::Fixed(k) => cap_price(model, *maturity, *k, spec.delta),
            Strike::Atm => {
                let n = model.n();
                let mut out = DVector::zeros(n);
                for i in 0..n {
                    let k = atm_strike(model, spec, i)?;
                    out[i] = cap_price(model, *maturity, k, spec.delta)?[i];
                }
                Ok(out)
            }
        },
        InstrumentKind::Swaption { expiry, swap_tenor, strike, payer } => match strike {
            Strike::Fixed(k) => swaption_price(model, *expiry, *swap_tenor, *k, *payer, spec.delta),
            Strike::Atm => {
                let n = model.n();
                let mut out = DVector::zeros(n);
                for i in 0..n {
                    let k = atm_strike(model, spec, i)?;
                    out[i] = swaption_price(model, *expiry, *swap_tenor, k, *payer, spec.delta)?[i];
                }
                Ok(out)
            }
        },
        InstrumentKind::FxForward { tenor } => {
            if spec.currency == models.base() {
                return Err(Error::ModelMismatch(format!(
                    "FX forward currency must differ from the base {}",
                    models.base()
                )));
            }
            let domestic = models.currency(models.base())?;
            let spot = *spots
                .get(&spec.currency)
                .ok_or_else(|| Error::MissingSpot(spec.currency.clone()))?;
            fx_forward(domestic, model, spot, *tenor)
        }
    }
}

/// Price of `spec` at a single chain state, with ATM strikes resolved at
/// that state. Cheaper than [`price_states`] for per-state work since ATM
/// options are priced at one strike only.
pub fn price_at_state(
    models: &MultiCurrencyModel,
    spec: &InstrumentSpec,
    state: usize,
    spots: &SpotMap,
) -> Result<f64> {
    spec.validate()?;
    match &spec.kind {
        InstrumentKind::Cap { maturity, strike } => {
            let model = models.currency(&spec.currency)?;
            let k = match strike {
                Strike::Fixed(k) => *k,
                Strike::Atm => atm_strike(model, spec, state)?,
            };
            Ok(cap_price(model, *maturity, k, spec.delta)?[state])
        }
        InstrumentKind::Swaption { expiry, swap_tenor, strike, payer } => {
            let model = models.currency(&spec.currency)?;
            let k = match strike {
                Strike::Fixed(k) => *k,
                Strike::Atm => atm_strike(model, spec, state)?,
            };
            Ok(swaption_price(model, *expiry, *swap_tenor, k, *payer, spec.delta)?[state])
        }
        _ => Ok(price_states(models, spec, spots)?[state]),
    }
}

/// Evaluates the model-price vector at one chain state.
pub fn price_instruments(
    models: &MultiCurrencyModel,
    specs: &[InstrumentSpec],
    state: usize,
    spots: &SpotMap,
) -> Result<PriceVector> {
    assert!(state < models.n(), "state out of range");
    let mut values = Vec::with_capacity(specs.len());
    for spec in specs {
        values.push(price_at_state(models, spec, state, spots)?);
    }
    Ok(PriceVector {
        specs: specs.to_vec(),
        values,
    })
}
