//! TOML run configuration.
//!
//! One file drives all subcommands; each command reads the sections it
//! needs. See the repository README for a complete example.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use mcpotential::calibration::{
    FilterConfig, ObservationNoise, OptimizerConfig, ShakeConfig, ShakeFamily,
};
use mcpotential::chain::IntensityMatrix;
use mcpotential::error::{Error, Result};
use mcpotential::hedging::HedgeMode;
use mcpotential::instruments::{
    InstrumentClass, InstrumentKind, InstrumentSpec, SpotMap, Strike, DEFAULT_DELTA,
};
use mcpotential::market::SyntheticConfig;
use mcpotential::model::{
    CurrencyParams, MultiCurrencyModel, QStructure, ThetaLayout, ThetaVector,
};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    /// Explicit parameters: the truth for `simulate`/`price`, the filter
    /// initialisation for `calibrate`/`hedge`.
    pub params: ParamsSection,
    #[serde(default)]
    pub fx: FxSection,
    #[serde(default)]
    pub instruments: Vec<InstrumentEntry>,
    pub synthetic: Option<SyntheticSection>,
    pub filter: Option<FilterSection>,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    pub calibrate: Option<CalibrateSection>,
    pub hedge: Option<HedgeSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub states: usize,
    /// `full`, `circular`, or `one_way`.
    pub structure: String,
    pub base_currency: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub q: QSection,
    /// Currency code -> (alpha, g); the base currency must be present.
    pub currency: BTreeMap<String, CurrencyEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QSection {
    /// Ring rates for `circular` / `one_way` structures.
    pub clockwise: Option<Vec<f64>>,
    pub counter: Option<Vec<f64>>,
    /// Full matrix rows for the `full` structure (diagonal ignored and
    /// rebuilt from row sums).
    pub rows: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrencyEntry {
    pub alpha: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FxSection {
    #[serde(default)]
    pub spots: BTreeMap<String, f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentEntry {
    pub kind: String,
    pub currency: String,
    pub tenor: Option<f64>,
    pub expiry: Option<f64>,
    /// Decimal strike or the string `"ATM"`.
    pub strike: Option<toml::Value>,
    #[serde(default = "default_true")]
    pub payer: bool,
    pub delta: Option<f64>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub dates: usize,
    pub start_date: NaiveDate,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub initial_state: usize,
    pub noise_fraction: f64,
    /// Relative bid-ask width per instrument kind.
    pub spread: BTreeMap<String, f64>,
}

fn default_dt() -> f64 {
    1.0 / 252.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub particles: usize,
    #[serde(default = "default_shake_family")]
    pub shake_family: String,
    #[serde(default = "default_shake_scale")]
    pub shake_scale: f64,
    pub shake_dof: Option<f64>,
    #[serde(default = "default_ess")]
    pub ess_threshold: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub burn_in: usize,
    /// Observation noise (log-price std) per instrument kind.
    pub sigma: BTreeMap<String, f64>,
}

fn default_shake_family() -> String {
    "gaussian".into()
}

fn default_shake_scale() -> f64 {
    0.05
}

fn default_ess() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub max_gradient_steps: usize,
    pub initial_step: f64,
    pub fd_bump: f64,
    pub tolerance: f64,
    pub restarts: usize,
    pub anneal_t0: f64,
    pub anneal_ratio: f64,
    pub anneal_rungs: usize,
    pub anneal_kick: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        Self {
            max_gradient_steps: d.max_gradient_steps,
            initial_step: d.initial_step,
            fd_bump: d.fd_bump,
            tolerance: d.tolerance,
            restarts: d.restarts,
            anneal_t0: d.anneal_t0,
            anneal_ratio: d.anneal_ratio,
            anneal_rungs: d.anneal_rungs,
            anneal_kick: d.anneal_kick,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    /// Quote CSV path, relative to the config file.
    pub quotes: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HedgeSection {
    pub quotes: PathBuf,
    pub target: InstrumentEntry,
    pub hedges: Vec<InstrumentEntry>,
    #[serde(default = "default_hedge_mode")]
    pub mode: String,
}

fn default_hedge_mode() -> String {
    "known_state".into()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn structure(&self) -> Result<QStructure> {
        match self.model.structure.as_str() {
            "full" => Ok(QStructure::Full),
            "circular" => Ok(QStructure::Circular),
            "one_way" => Ok(QStructure::OneWayRing),
            other => Err(Error::Config(format!("unknown Q structure {other:?}"))),
        }
    }

    /// Currency codes in layout order: base first, then the rest sorted.
    pub fn currency_order(&self) -> Result<Vec<String>> {
        let base = &self.model.base_currency;
        if !self.params.currency.contains_key(base) {
            return Err(Error::Config(format!("base currency {base} has no parameter block")));
        }
        let mut order = vec![base.clone()];
        order.extend(self.params.currency.keys().filter(|c| *c != base).cloned());
        Ok(order)
    }

    pub fn layout(&self) -> Result<Arc<ThetaLayout>> {
        Ok(Arc::new(ThetaLayout::new(
            self.model.states,
            self.structure()?,
            self.currency_order()?,
        )?))
    }

    pub fn intensity_matrix(&self) -> Result<IntensityMatrix> {
        let n = self.model.states;
        let q = &self.params.q;
        match self.structure()? {
            QStructure::Full => {
                let rows = q.rows.as_ref().ok_or_else(|| {
                    Error::Config("full structure requires params.q.rows".into())
                })?;
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Config(format!("params.q.rows must be {n}x{n}")));
                }
                let mut rates = DMatrix::zeros(n, n);
                for (i, row) in rows.iter().enumerate() {
                    for (j, &x) in row.iter().enumerate() {
                        if i != j {
                            rates[(i, j)] = x;
                        }
                    }
                }
                IntensityMatrix::from_rates(rates)
            }
            QStructure::Circular => {
                let cw = q.clockwise.as_ref().ok_or_else(|| {
                    Error::Config("circular structure requires params.q.clockwise".into())
                })?;
                let ccw = q.counter.as_ref().ok_or_else(|| {
                    Error::Config("circular structure requires params.q.counter".into())
                })?;
                if cw.len() != n || ccw.len() != n {
                    return Err(Error::Config(format!("ring rates must have length {n}")));
                }
                IntensityMatrix::circular_nearest_neighbour(cw, ccw)
            }
            QStructure::OneWayRing => {
                let cw = q.clockwise.as_ref().ok_or_else(|| {
                    Error::Config("one_way structure requires params.q.clockwise".into())
                })?;
                if cw.len() != n {
                    return Err(Error::Config(format!("ring rates must have length {n}")));
                }
                IntensityMatrix::circular_nearest_neighbour(cw, &vec![0.0; n])
            }
        }
    }

    pub fn currency_params(&self) -> Result<Vec<(String, CurrencyParams)>> {
        let n = self.model.states;
        let mut out = Vec::new();
        for code in self.currency_order()? {
            let entry = &self.params.currency[&code];
            if entry.alpha.len() != n || entry.g.len() != n {
                return Err(Error::Config(format!(
                    "currency {code}: alpha and g must have length {n}"
                )));
            }
            out.push((
                code,
                CurrencyParams::new(
                    DVector::from_vec(entry.alpha.clone()),
                    DVector::from_vec(entry.g.clone()),
                )?,
            ));
        }
        Ok(out)
    }

    pub fn models(&self) -> Result<MultiCurrencyModel> {
        MultiCurrencyModel::new(self.intensity_matrix()?, self.currency_params()?)
    }

    pub fn theta(&self) -> Result<ThetaVector> {
        let params: Vec<CurrencyParams> =
            self.currency_params()?.into_iter().map(|(_, p)| p).collect();
        self.layout()?.pack(&self.intensity_matrix()?, &params)
    }

    pub fn spots(&self) -> SpotMap {
        self.fx
            .spots
            .iter()
            .map(|(k, &v)| (k.clone(), v))
            .collect()
    }

    pub fn instrument_specs(&self) -> Result<Vec<InstrumentSpec>> {
        self.instruments.iter().map(instrument_spec).collect()
    }

    pub fn synthetic_config(&self) -> Result<SyntheticConfig> {
        let synth = self
            .synthetic
            .as_ref()
            .ok_or_else(|| Error::Config("missing [synthetic] section".into()))?;
        let specs = self.instrument_specs()?;
        if specs.is_empty() {
            return Err(Error::Config("no instruments configured".into()));
        }
        Ok(SyntheticConfig {
            models: self.models()?,
            spots: self.spots(),
            initial_state: synth.initial_state,
            specs,
            start_date: synth.start_date,
            n_dates: synth.dates,
            dt: synth.dt,
            noise_fraction: synth.noise_fraction,
            spread_by_class: class_map(&synth.spread)?,
            seed: self.seed,
        })
    }

    pub fn filter_config(&self) -> Result<FilterConfig> {
        let f = self
            .filter
            .as_ref()
            .ok_or_else(|| Error::Config("missing [filter] section".into()))?;
        let family = match f.shake_family.as_str() {
            "gaussian" => ShakeFamily::Gaussian,
            "laplace" => ShakeFamily::Laplace,
            "student_t" => ShakeFamily::StudentT {
                dof: f.shake_dof.ok_or_else(|| {
                    Error::Config("student_t shake requires filter.shake_dof".into())
                })?,
            },
            other => return Err(Error::Config(format!("unknown shake family {other:?}"))),
        };
        let o = &self.optimizer;
        Ok(FilterConfig {
            n_particles: f.particles,
            shake: ShakeConfig::new(family, f.shake_scale)?,
            noise: ObservationNoise::new(class_map(&f.sigma)?)?,
            optimizer: OptimizerConfig {
                max_gradient_steps: o.max_gradient_steps,
                initial_step: o.initial_step,
                fd_bump: o.fd_bump,
                tolerance: o.tolerance,
                restarts: o.restarts,
                anneal_t0: o.anneal_t0,
                anneal_ratio: o.anneal_ratio,
                anneal_rungs: o.anneal_rungs,
                anneal_kick: o.anneal_kick,
            },
            ess_threshold: f.ess_threshold,
            dt: f.dt,
            burn_in: f.burn_in,
            seed: self.seed,
        })
    }

    pub fn hedge_mode(&self) -> Result<HedgeMode> {
        let h = self
            .hedge
            .as_ref()
            .ok_or_else(|| Error::Config("missing [hedge] section".into()))?;
        match h.mode.as_str() {
            "known_state" => Ok(HedgeMode::KnownStatePerParticle),
            "all_states" => Ok(HedgeMode::AllStates),
            other => Err(Error::Config(format!("unknown hedge mode {other:?}"))),
        }
    }
}

fn class_map(by_name: &BTreeMap<String, f64>) -> Result<IndexMap<InstrumentClass, f64>> {
    let mut out = IndexMap::new();
    for (name, &v) in by_name {
        let class = InstrumentClass::parse(name)
            .ok_or_else(|| Error::Config(format!("unknown instrument kind {name:?}")))?;
        out.insert(class, v);
    }
    Ok(out)
}

pub fn instrument_spec(entry: &InstrumentEntry) -> Result<InstrumentSpec> {
    let need = |x: Option<f64>, what: &str| {
        x.ok_or_else(|| Error::Config(format!("instrument {}: missing {what}", entry.kind)))
    };
    let strike = match &entry.strike {
        None => None,
        Some(toml::Value::String(s)) if s == "ATM" => Some(Strike::Atm),
        Some(toml::Value::Float(k)) => Some(Strike::Fixed(*k)),
        Some(toml::Value::Integer(k)) => Some(Strike::Fixed(*k as f64)),
        Some(other) => {
            return Err(Error::Config(format!(
                "instrument {}: strike must be a number or \"ATM\", got {other}",
                entry.kind
            )))
        }
    };
    let kind = match entry.kind.as_str() {
        "libor" => InstrumentKind::Libor { tenor: need(entry.tenor, "tenor")? },
        "swap" => InstrumentKind::SwapRate { tenor: need(entry.tenor, "tenor")? },
        "cap" => InstrumentKind::Cap {
            maturity: need(entry.tenor, "tenor")?,
            strike: strike.ok_or_else(|| Error::Config("cap requires a strike".into()))?,
        },
        "swaption" => InstrumentKind::Swaption {
            expiry: need(entry.expiry, "expiry")?,
            swap_tenor: need(entry.tenor, "tenor")?,
            strike: strike.ok_or_else(|| Error::Config("swaption requires a strike".into()))?,
            payer: entry.payer,
        },
        "fx_forward" => InstrumentKind::FxForward { tenor: need(entry.tenor, "tenor")? },
        other => return Err(Error::Config(format!("unknown instrument kind {other:?}"))),
    };
    let mut spec = InstrumentSpec::new(kind, entry.currency.clone());
    spec.delta = entry.delta.unwrap_or(DEFAULT_DELTA);
    spec.validate()?;
    Ok(spec)
}
