//! Quote ingestion, synthetic market generation, and the spread-error
//! metric.
//!
//! # Quote CSV schema
//!
//! ```text
//! date,currency,kind,tenor_y,expiry_y,strike,bid,ask
//! ```
//!
//! ISO dates, year-fraction tenors. `kind` is one of `libor`, `swap`, `cap`,
//! `swaption`, `fx_forward`. `tenor_y` carries the Libor/swap/FX tenor, the
//! cap maturity, or the swaption's underlying swap tenor; `expiry_y` is the
//! swaption option expiry and empty otherwise. `strike` is empty for linear
//! instruments and either a decimal or the `ATM` sentinel for options. For
//! `fx_forward` rows, `currency` is the foreign currency quoted against the
//! calibration's base currency.
//!
//! Errors are measured in spread units: one spread is the full quoted
//! bid-ask width, and a model error is `|model - mid| / (ask - bid)`.
//! Quotes with zero width fall back to basis points and are reported
//! separately.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::chain::ChainPath;
use crate::error::{Error, Result};
use crate::instruments::{
    price_instruments, InstrumentClass, InstrumentKind, InstrumentSpec, PriceVector, SpotMap,
    Strike,
};
use crate::model::MultiCurrencyModel;
use crate::rng::SeedSequence;

pub const QUOTE_HEADER: [&str; 8] = [
    "date", "currency", "kind", "tenor_y", "expiry_y", "strike", "bid", "ask",
];

/// One quoted instrument on one date.
#[derive(Debug, Clone, PartialEq)]
pub struct QuoteRecord {
    pub spec: InstrumentSpec,
    pub bid: f64,
    pub ask: f64,
}

impl QuoteRecord {
    pub fn mid(&self) -> f64 {
        0.5 * (self.bid + self.ask)
    }

    pub fn spread(&self) -> f64 {
        self.ask - self.bid
    }
}

/// All quotes of one date.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSnapshot {
    pub date: NaiveDate,
    pub records: Vec<QuoteRecord>,
}

impl MarketSnapshot {
    /// The record quoting `spec`, if present.
    pub fn record_for(&self, spec: &InstrumentSpec) -> Option<&QuoteRecord> {
        self.records.iter().find(|r| r.spec == *spec)
    }
}

fn parse_f64(field: &str, line: u64, what: &str) -> Result<f64> {
    field.trim().parse().map_err(|_| Error::ParseError {
        line,
        msg: format!("cannot parse {what} from {field:?}"),
    })
}

fn parse_optional_f64(field: &str, line: u64, what: &str) -> Result<Option<f64>> {
    let t = field.trim();
    if t.is_empty() {
        Ok(None)
    } else {
        parse_f64(t, line, what).map(Some)
    }
}

fn record_from_fields(fields: &csv::StringRecord, line: u64) -> Result<(NaiveDate, QuoteRecord)> {
    let date = NaiveDate::parse_from_str(fields[0].trim(), "%Y-%m-%d").map_err(|e| {
        Error::ParseError {
            line,
            msg: format!("bad date {:?}: {e}", &fields[0]),
        }
    })?;
    let currency = fields[1].trim().to_string();
    if currency.is_empty() {
        return Err(Error::ParseError {
            line,
            msg: "empty currency".into(),
        });
    }
    let class = InstrumentClass::parse(fields[2].trim()).ok_or_else(|| Error::ParseError {
        line,
        msg: format!("unknown instrument kind {:?}", &fields[2]),
    })?;
    let tenor = parse_optional_f64(&fields[3], line, "tenor_y")?;
    let expiry = parse_optional_f64(&fields[4], line, "expiry_y")?;
    let strike_field = fields[5].trim();
    let strike = if strike_field.is_empty() {
        None
    } else if strike_field == "ATM" {
        Some(Strike::Atm)
    } else {
        Some(Strike::Fixed(parse_f64(strike_field, line, "strike")?))
    };
    let need = |x: Option<f64>, what: &str| {
        x.ok_or_else(|| Error::ParseError {
            line,
            msg: format!("{what} required for kind {class}"),
        })
    };
    let kind = match class {
        InstrumentClass::Libor => InstrumentKind::Libor { tenor: need(tenor, "tenor_y")? },
        InstrumentClass::Swap => InstrumentKind::SwapRate { tenor: need(tenor, "tenor_y")? },
        InstrumentClass::Cap => InstrumentKind::Cap {
            maturity: need(tenor, "tenor_y")?,
            strike: strike.ok_or_else(|| Error::ParseError {
                line,
                msg: "cap requires a strike or ATM".into(),
            })?,
        },
        InstrumentClass::Swaption => InstrumentKind::Swaption {
            expiry: need(expiry, "expiry_y")?,
            swap_tenor: need(tenor, "tenor_y")?,
            strike: strike.ok_or_else(|| Error::ParseError {
                line,
                msg: "swaption requires a strike or ATM".into(),
            })?,
            payer: true,
        },
        InstrumentClass::FxForward => InstrumentKind::FxForward { tenor: need(tenor, "tenor_y")? },
    };
    let bid = parse_f64(&fields[6], line, "bid")?;
    let ask = parse_f64(&fields[7], line, "ask")?;
    if bid > ask {
        return Err(Error::CrossedQuote { line, bid, ask });
    }
    if bid <= 0.0 {
        return Err(Error::SchemaError(format!(
            "line {line}: quotes must be positive (bid = {bid})"
        )));
    }
    let spec = InstrumentSpec::new(kind, currency);
    spec.validate()
        .map_err(|e| Error::SchemaError(format!("line {line}: {e}")))?;
    Ok((date, QuoteRecord { spec, bid, ask }))
}

/// Parses quote CSVs from any reader; see [`load_csv`].
pub fn read_quotes<R: Read>(reader: R) -> Result<Vec<MarketSnapshot>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = rdr.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        if got != QUOTE_HEADER {
            return Err(Error::SchemaError(format!(
                "unexpected header {got:?}, expected {QUOTE_HEADER:?}"
            )));
        }
    }
    let mut by_date: BTreeMap<NaiveDate, Vec<QuoteRecord>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != QUOTE_HEADER.len() {
            return Err(Error::ParseError {
                line,
                msg: format!("expected {} fields, got {}", QUOTE_HEADER.len(), row.len()),
            });
        }
        let (date, record) = record_from_fields(&row, line)?;
        let day = by_date.entry(date).or_default();
        if day.iter().any(|r| r.spec == record.spec) {
            return Err(Error::SchemaError(format!(
                "line {line}: duplicate quote for {} on {date}",
                record.spec
            )));
        }
        day.push(record);
    }
    Ok(by_date
        .into_iter()
        .map(|(date, records)| MarketSnapshot { date, records })
        .collect())
}

/// Loads, validates and groups a quote file by date (ascending).
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<MarketSnapshot>> {
    read_quotes(std::fs::File::open(path)?)
}

fn spec_fields(spec: &InstrumentSpec) -> (String, String, String, String) {
    // (kind, tenor_y, expiry_y, strike)
    match &spec.kind {
        InstrumentKind::Libor { tenor } => ("libor".into(), tenor.to_string(), String::new(), String::new()),
        InstrumentKind::SwapRate { tenor } => ("swap".into(), tenor.to_string(), String::new(), String::new()),
        InstrumentKind::Cap { maturity, strike } => (
            "cap".into(),
            maturity.to_string(),
            String::new(),
            strike.to_string(),
        ),
        InstrumentKind::Swaption { expiry, swap_tenor, strike, .. } => (
            "swaption".into(),
            swap_tenor.to_string(),
            expiry.to_string(),
            strike.to_string(),
        ),
        InstrumentKind::FxForward { tenor } => {
            ("fx_forward".into(), tenor.to_string(), String::new(), String::new())
        }
    }
}

/// Writes snapshots in the quote CSV schema; `load_csv` round-trips the
/// output exactly.
pub fn write_quotes<W: Write>(writer: W, snapshots: &[MarketSnapshot]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(QUOTE_HEADER)?;
    for snap in snapshots {
        for r in &snap.records {
            let (kind, tenor, expiry, strike) = spec_fields(&r.spec);
            w.write_record([
                snap.date.to_string(),
                r.spec.currency.clone(),
                kind,
                tenor,
                expiry,
                strike,
                r.bid.to_string(),
                r.ask.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(path: impl AsRef<Path>, snapshots: &[MarketSnapshot]) -> Result<()> {
    write_quotes(std::fs::File::create(path)?, snapshots)
}

/// Synthetic-market recipe: a known true model observed with lognormal
/// noise on mids and symmetric bid/ask around the noisy mid.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub models: MultiCurrencyModel,
    pub spots: SpotMap,
    pub initial_state: usize,
    pub specs: Vec<InstrumentSpec>,
    pub start_date: NaiveDate,
    pub n_dates: usize,
    /// Years between consecutive observation dates.
    pub dt: f64,
    /// Mid noise as a fraction of the relative spread: the log-mid
    /// perturbation is N(0, (noise_fraction * spread)^2).
    pub noise_fraction: f64,
    /// Relative bid-ask width per instrument class, e.g. 0.01 = 1% of mid.
    pub spread_by_class: IndexMap<InstrumentClass, f64>,
    pub seed: u64,
}

impl SyntheticConfig {
    fn spread_for(&self, class: InstrumentClass) -> Result<f64> {
        let s = *self
            .spread_by_class
            .get(&class)
            .ok_or_else(|| Error::Config(format!("no spread configured for kind {class}")))?;
        if s <= 0.0 {
            return Err(Error::Config(format!("spread for {class} must be positive")));
        }
        Ok(s)
    }
}

/// Consecutive weekdays starting at `start` (date labels only; model time
/// advances by `dt` per observation regardless of calendar gaps).
pub fn weekday_sequence(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut dates = Vec::with_capacity(n);
    let mut d = start;
    while dates.len() < n {
        if matches!(d.weekday(), chrono::Weekday::Sat | chrono::Weekday::Sun) {
            d = d.succ_opt().expect("date overflow");
            continue;
        }
        dates.push(d);
        d = d.succ_opt().expect("date overflow");
    }
    dates
}

/// Simulates the hidden chain and emits a daily quote panel priced at the
/// realised state. Returns the hidden path for evaluation. Deterministic
/// per seed.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(Vec<MarketSnapshot>, ChainPath)> {
    if cfg.n_dates == 0 {
        return Err(Error::Config("need at least one observation date".into()));
    }
    if cfg.noise_fraction < 0.0 {
        return Err(Error::Config("noise fraction must be nonnegative".into()));
    }
    for spec in &cfg.specs {
        spec.validate()?;
    }
    let seq = SeedSequence::new(cfg.seed);
    let horizon = cfg.dt * (cfg.n_dates - 1) as f64;
    let mut path_rng = seq.stream(1, 0);
    let path = cfg
        .models
        .q()
        .simulate_path_with(cfg.initial_state, horizon.max(0.0), &mut path_rng);
    let dates = weekday_sequence(cfg.start_date, cfg.n_dates);

    let mut snapshots = Vec::with_capacity(cfg.n_dates);
    for (k, date) in dates.iter().enumerate() {
        let t = cfg.dt * k as f64;
        let state = path.state_at(t.min(horizon));
        let prices = price_instruments(&cfg.models, &cfg.specs, state, &cfg.spots)?;
        let mut noise_rng = seq.stream(2, k as u64);
        let mut records = Vec::with_capacity(cfg.specs.len());
        for (spec, &price) in cfg.specs.iter().zip(&prices.values) {
            if price <= 0.0 {
                return Err(Error::NonPositiveQuote(spec.to_string()));
            }
            let spread = cfg.spread_for(spec.class())?;
            let sigma = cfg.noise_fraction * spread;
            let eps = if sigma > 0.0 {
                Normal::new(0.0, sigma).expect("valid sigma").sample(&mut noise_rng)
            } else {
                // keep the draw count independent of sigma
                let _: f64 = noise_rng.gen();
                0.0
            };
            let mid = price * eps.exp();
            records.push(QuoteRecord {
                spec: spec.clone(),
                bid: mid * (1.0 - 0.5 * spread),
                ask: mid * (1.0 + 0.5 * spread),
            });
        }
        snapshots.push(MarketSnapshot { date: *date, records });
    }
    Ok((snapshots, path))
}

/// Per-class average absolute error.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpreadError {
    /// Average |model - mid| / (ask - bid) and the number of quotes behind it.
    pub in_spreads: BTreeMap<InstrumentClass, (f64, usize)>,
    /// Fallback for zero-width quotes: average |model - mid| in basis points.
    pub in_basis_points: BTreeMap<InstrumentClass, (f64, usize)>,
}

impl SpreadError {
    pub fn average_for(&self, class: InstrumentClass) -> Option<f64> {
        self.in_spreads.get(&class).map(|&(avg, _)| avg)
    }
}

/// Scores model prices against one snapshot. Every priced spec must have
/// exactly one quote; extra quotes in the snapshot are ignored.
pub fn spread_error(prices: &PriceVector, snapshot: &MarketSnapshot) -> Result<SpreadError> {
    if prices.specs.len() != prices.values.len() {
        return Err(Error::Misaligned("price vector length mismatch".into()));
    }
    let mut sums: BTreeMap<InstrumentClass, (f64, usize)> = BTreeMap::new();
    let mut bp_sums: BTreeMap<InstrumentClass, (f64, usize)> = BTreeMap::new();
    for (spec, &model) in prices.specs.iter().zip(&prices.values) {
        let record = snapshot
            .record_for(spec)
            .ok_or_else(|| Error::Misaligned(format!("no quote for {spec} on {}", snapshot.date)))?;
        let err = (model - record.mid()).abs();
        let class = spec.class();
        if record.spread() > 0.0 {
            let e = sums.entry(class).or_insert((0.0, 0));
            e.0 += err / record.spread();
            e.1 += 1;
        } else {
            let e = bp_sums.entry(class).or_insert((0.0, 0));
            e.0 += err * 1e4;
            e.1 += 1;
        }
    }
    let avg = |m: BTreeMap<InstrumentClass, (f64, usize)>| {
        m.into_iter()
            .map(|(k, (s, n))| (k, (s / n as f64, n)))
            .collect()
    };
    Ok(SpreadError {
        in_spreads: avg(sums),
        in_basis_points: avg(bp_sums),
    })
}
