//! Scheme comparison tables: implied-volatility (or price) error of the SLV
//! Monte Carlo against the market at the horizon, amplified by 100.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::black_scholes::{bs_vega, implied_vol};
use crate::error::{Error, Result};
use crate::heston::{CosConfig, CosPricer};
use crate::slv::{price_call, simulate_hslv, PriceEstimate, SlvConfig};
use crate::surface::CallSurface;
use crate::variance::SchemeKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorMetric {
    /// `100 |IV_mc - IV_market|`, stderr propagated through the market vega.
    ImpliedVol,
    /// `100 |C_mc - C_market|`.
    Price,
}

impl FromStr for ErrorMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "iv" => Ok(ErrorMetric::ImpliedVol),
            "price" => Ok(ErrorMetric::Price),
            other => Err(Error::Config(format!(
                "error metric must be 'iv' or 'price', got '{other}'"
            ))),
        }
    }
}

impl fmt::Display for ErrorMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorMetric::ImpliedVol => "iv",
            ErrorMetric::Price => "price",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CellOutcome {
    Value {
        err_pct: f64,
        stderr_pct: f64,
    },
    /// The Monte Carlo price has no implied volatility.
    BandViolation {
        price: f64,
    },
}

impl CellOutcome {
    pub fn err_pct(&self) -> Option<f64> {
        match *self {
            CellOutcome::Value { err_pct, .. } => Some(err_pct),
            CellOutcome::BandViolation { .. } => None,
        }
    }

    pub fn stderr_pct(&self) -> Option<f64> {
        match *self {
            CellOutcome::Value { stderr_pct, .. } => Some(stderr_pct),
            CellOutcome::BandViolation { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TableCell {
    pub scheme: SchemeKind,
    pub steps: usize,
    pub strike: f64,
    pub mc: PriceEstimate,
    pub market_price: f64,
    pub outcome: CellOutcome,
}

/// Error of one Monte Carlo price against the market price.
pub fn cell_error(
    mc: &PriceEstimate,
    market_price: f64,
    s0: f64,
    strike: f64,
    horizon: f64,
    r: f64,
    metric: ErrorMetric,
) -> Result<CellOutcome> {
    let stderr = mc.stderr.unwrap_or(0.0);
    match metric {
        ErrorMetric::Price => Ok(CellOutcome::Value {
            err_pct: 100.0 * (mc.mean - market_price).abs(),
            stderr_pct: 100.0 * stderr,
        }),
        ErrorMetric::ImpliedVol => {
            let iv_market = implied_vol(market_price, s0, strike, horizon, r)?;
            match implied_vol(mc.mean, s0, strike, horizon, r) {
                Ok(iv) => Ok(CellOutcome::Value {
                    err_pct: 100.0 * (iv - iv_market).abs(),
                    stderr_pct: 100.0 * stderr / bs_vega(s0, strike, horizon, r, iv_market),
                }),
                Err(Error::BandViolation { price, .. }) => Ok(CellOutcome::BandViolation { price }),
                Err(e) => Err(e),
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ErrorTable {
    pub metric: ErrorMetric,
    pub cells: Vec<TableCell>,
    /// Wall-clock seconds of each `(scheme, steps)` simulation.
    pub timings: Vec<(SchemeKind, usize, f64)>,
}

/// Market call prices at the horizon for every configured strike.
pub fn market_prices(cfg: &SlvConfig, cos: &CosConfig) -> Result<Vec<f64>> {
    let pricer = CosPricer::new(&cfg.market, cfg.horizon, cos)?;
    Ok(cfg.strikes.iter().map(|&k| pricer.call(k)).collect())
}

/// Runs every `(scheme, steps)` pair with the base configuration's seed and
/// tabulates the error at each strike.
pub fn table_error(
    base: &SlvConfig,
    surface: &CallSurface,
    schemes: &[SchemeKind],
    steps: &[usize],
    metric: ErrorMetric,
    cos: &CosConfig,
) -> Result<ErrorTable> {
    let market = market_prices(base, cos)?;
    let mut cells = Vec::new();
    let mut timings = Vec::new();
    for &scheme in schemes {
        for &n in steps {
            let cfg = SlvConfig {
                scheme,
                steps: n,
                ..base.clone()
            };
            let start = Instant::now();
            let out = simulate_hslv(&cfg, surface)?;
            timings.push((scheme, n, start.elapsed().as_secs_f64()));
            let spots = out.ensemble.spots();
            for (j, &k) in cfg.strikes.iter().enumerate() {
                let mc = price_call(&spots, k, cfg.market.r, cfg.horizon)?;
                let outcome = cell_error(
                    &mc,
                    market[j],
                    cfg.market.s0,
                    k,
                    cfg.horizon,
                    cfg.market.r,
                    metric,
                )?;
                cells.push(TableCell {
                    scheme,
                    steps: n,
                    strike: k,
                    mc,
                    market_price: market[j],
                    outcome,
                });
            }
        }
    }
    Ok(ErrorTable {
        metric,
        cells,
        timings,
    })
}

impl ErrorTable {
    pub fn cell(&self, scheme: SchemeKind, steps: usize, strike: f64) -> Option<&TableCell> {
        self.cells
            .iter()
            .find(|c| c.scheme == scheme && c.steps == steps && c.strike == strike)
    }

    pub fn strikes(&self) -> Vec<f64> {
        let mut ks: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !ks.contains(&c.strike) {
                ks.push(c.strike);
            }
        }
        ks
    }

    /// `scheme,N,K,err_pct,stderr_pct` rows for one strike, ordered by step
    /// count then scheme.
    pub fn write_strike<W: Write>(&self, strike: f64, mut out: W) -> Result<()> {
        writeln!(out, "scheme,N,K,err_pct,stderr_pct")?;
        let mut rows: Vec<&TableCell> = self.cells.iter().filter(|c| c.strike == strike).collect();
        rows.sort_by_key(|c| (c.steps, c.scheme));
        for c in rows {
            match c.outcome {
                CellOutcome::Value {
                    err_pct,
                    stderr_pct,
                } => writeln!(
                    out,
                    "{},{},{:.4},{:.4},{:.4}",
                    c.scheme, c.steps, c.strike, err_pct, stderr_pct
                )?,
                CellOutcome::BandViolation { .. } => writeln!(
                    out,
                    "{},{},{:.4},band_violation,band_violation",
                    c.scheme, c.steps, c.strike
                )?,
            }
        }
        Ok(())
    }

    /// `(scheme, strike, err at fewest steps, err at most steps)` wherever the
    /// error failed to decrease from the coarsest to the finest step count.
    pub fn trend_violations(&self) -> Vec<(SchemeKind, f64, f64, f64)> {
        let mut out = Vec::new();
        let (Some(n_min), Some(n_max)) = (
            self.cells.iter().map(|c| c.steps).min(),
            self.cells.iter().map(|c| c.steps).max(),
        ) else {
            return out;
        };
        if n_min == n_max {
            return out;
        }
        let mut schemes: Vec<SchemeKind> = self.cells.iter().map(|c| c.scheme).collect();
        schemes.sort();
        schemes.dedup();
        for scheme in schemes {
            for k in self.strikes() {
                let coarse = self
                    .cell(scheme, n_min, k)
                    .and_then(|c| c.outcome.err_pct());
                let fine = self
                    .cell(scheme, n_max, k)
                    .and_then(|c| c.outcome.err_pct());
                match (coarse, fine) {
                    (Some(a), Some(b)) if b < a => {}
                    (a, b) => out.push((scheme, k, a.unwrap_or(f64::NAN), b.unwrap_or(f64::NAN))),
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::black_scholes::bs_call_price;

    #[test]
    fn metric_parsing() {
        assert_eq!(
            "iv".parse::<ErrorMetric>().unwrap(),
            ErrorMetric::ImpliedVol
        );
        assert_eq!("price".parse::<ErrorMetric>().unwrap(), ErrorMetric::Price);
        assert!("abs".parse::<ErrorMetric>().is_err());
    }

    #[test]
    fn implied_vol_cell() {
        let market = bs_call_price(1.0, 1.0, 5.0, 0.0, 0.3);
        let mc = PriceEstimate {
            mean: bs_call_price(1.0, 1.0, 5.0, 0.0, 0.32),
            stderr: Some(0.001),
            samples: 100,
        };
        let out = cell_error(&mc, market, 1.0, 1.0, 5.0, 0.0, ErrorMetric::ImpliedVol).unwrap();
        let vega = bs_vega(1.0, 1.0, 5.0, 0.0, 0.3);
        match out {
            CellOutcome::Value {
                err_pct,
                stderr_pct,
            } => {
                assert!((err_pct - 2.0).abs() < 1e-8);
                assert!((stderr_pct - 0.1 / vega).abs() < 1e-12);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn band_violation_is_reported() {
        let market = bs_call_price(1.0, 0.7, 5.0, 0.0, 0.3);
        let mc = PriceEstimate {
            mean: 0.29,
            stderr: Some(0.001),
            samples: 100,
        };
        let out = cell_error(&mc, market, 1.0, 0.7, 5.0, 0.0, ErrorMetric::ImpliedVol).unwrap();
        assert!(matches!(out, CellOutcome::BandViolation { .. }));
    }

    #[test]
    fn price_cell() {
        let mc = PriceEstimate {
            mean: 0.21,
            stderr: Some(0.002),
            samples: 10,
        };
        let out = cell_error(&mc, 0.2, 1.0, 1.0, 1.0, 0.0, ErrorMetric::Price).unwrap();
        assert_eq!(out.err_pct().unwrap(), 100.0 * (0.21f64 - 0.2).abs());
        assert!((out.stderr_pct().unwrap() - 0.2).abs() < 1e-15);
    }
}
