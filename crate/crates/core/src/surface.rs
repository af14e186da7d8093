//! European call surface on a (maturity, strike) grid.
//!
//! Off-grid queries interpolate total implied variance `w = sigma_imp^2 t`:
//! a natural cubic spline in log-strike at each maturity, then a monotone
//! (Fritsch–Carlson) cubic in time through `(0, 0)` and the maturity nodes.
//! Outside the strike span the implied volatility is held flat in strike;
//! beyond the last maturity it is held flat in time.

use rayon::prelude::*;
use std::io::{BufRead, Write};

use crate::black_scholes::{bs_call_price, implied_vol};
use crate::error::{domain, Error, Result};
use crate::heston::{CosConfig, CosPricer, HestonParams};

/// Slack for the static-arbitrage checks on stored prices.
pub const ARBITRAGE_SLACK: f64 = 1e-8;

/// Time value below which a node's implied volatility is not resolvable and
/// is filled from the nearest resolvable strike.
const MIN_TIME_VALUE: f64 = 1e-9;

pub fn default_maturities() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0]
}

/// `n` log-spaced strikes between `lo` and `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|j| {
            if j == n - 1 {
                hi
            } else {
                (a + (b - a) * j as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

pub fn default_strikes(s0: f64) -> Vec<f64> {
    log_spaced(0.3 * s0, 3.0 * s0, 60)
}

#[derive(Clone, Debug)]
pub struct CallSurface {
    s0: f64,
    r: f64,
    maturities: Vec<f64>,
    strikes: Vec<f64>,
    /// `prices[i][j]` for maturity `i`, strike `j`.
    prices: Vec<Vec<f64>>,
    log_strikes: Vec<f64>,
    /// `0` followed by the maturities.
    time_nodes: Vec<f64>,
    total_var: Vec<Vec<f64>>,
    /// Second derivatives of the per-maturity strike splines.
    curvature: Vec<Vec<f64>>,
}

impl CallSurface {
    /// Builds a surface from stored prices, checking the static-arbitrage
    /// invariants and preparing the interpolant.
    pub fn from_prices(
        s0: f64,
        r: f64,
        maturities: Vec<f64>,
        strikes: Vec<f64>,
        prices: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if !(s0 > 0.0) {
            return Err(domain(format!("s0 must be > 0, got {s0}")));
        }
        check_increasing("maturities", &maturities)?;
        check_increasing("strikes", &strikes)?;
        if maturities[0] <= 0.0 || strikes[0] <= 0.0 {
            return Err(domain("maturities and strikes must be positive"));
        }
        if prices.len() != maturities.len() || prices.iter().any(|row| row.len() != strikes.len()) {
            return Err(domain("price matrix does not match the grid"));
        }
        check_static_arbitrage(s0, r, &maturities, &strikes, &prices)?;

        let log_strikes: Vec<f64> = strikes.iter().map(|k| k.ln()).collect();
        let mut total_var = Vec::with_capacity(maturities.len());
        for (i, &t) in maturities.iter().enumerate() {
            total_var.push(row_total_variance(s0, r, t, &strikes, &prices[i])?);
        }
        let curvature = total_var
            .iter()
            .map(|w| natural_spline_curvature(&log_strikes, w))
            .collect();
        let time_nodes = std::iter::once(0.0)
            .chain(maturities.iter().copied())
            .collect();
        Ok(Self {
            s0,
            r,
            maturities,
            strikes,
            prices,
            log_strikes,
            time_nodes,
            total_var,
            curvature,
        })
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    pub fn rate(&self) -> f64 {
        self.r
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn strikes(&self) -> &[f64] {
        &self.strikes
    }

    pub fn prices(&self) -> &[Vec<f64>] {
        &self.prices
    }

    pub fn strike_span(&self) -> (f64, f64) {
        (self.strikes[0], *self.strikes.last().unwrap())
    }

    pub fn last_maturity(&self) -> f64 {
        *self.maturities.last().unwrap()
    }

    /// Total implied variance at every time node (`0` first) for one strike.
    pub(crate) fn strike_slice(&self, strike: f64) -> Vec<f64> {
        let k = strike
            .ln()
            .clamp(self.log_strikes[0], *self.log_strikes.last().unwrap());
        let mut ws = Vec::with_capacity(self.maturities.len() + 1);
        ws.push(0.0);
        for i in 0..self.maturities.len() {
            ws.push(spline_eval(
                &self.log_strikes,
                &self.total_var[i],
                &self.curvature[i],
                k,
            ));
        }
        ws
    }

    pub(crate) fn slice_total_variance(&self, ws: &[f64], t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let t_last = self.last_maturity();
        if t >= t_last {
            return ws[ws.len() - 1] * t / t_last;
        }
        pchip_eval(&self.time_nodes, ws, t)
    }

    pub(crate) fn slice_price(&self, ws: &[f64], t: f64, strike: f64) -> f64 {
        if t <= 0.0 {
            return (self.s0 - strike).max(0.0);
        }
        let w = self.slice_total_variance(ws, t).max(0.0);
        bs_call_price(self.s0, strike, t, self.r, (w / t).sqrt())
    }

    /// Interpolated total implied variance at `(t, strike)`.
    pub fn total_variance(&self, t: f64, strike: f64) -> f64 {
        self.slice_total_variance(&self.strike_slice(strike), t)
    }

    pub fn implied_vol(&self, t: f64, strike: f64) -> f64 {
        if t <= 0.0 {
            return (self.total_variance(self.maturities[0], strike) / self.maturities[0]).sqrt();
        }
        (self.total_variance(t, strike).max(0.0) / t).sqrt()
    }

    /// Call price at an arbitrary `(t, strike)`, `t >= 0`.
    pub fn price(&self, t: f64, strike: f64) -> f64 {
        self.slice_price(&self.strike_slice(strike), t, strike)
    }

    /// Writes `t,K,price` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,K,price")?;
        for (i, &t) in self.maturities.iter().enumerate() {
            for (j, &k) in self.strikes.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{}",
                    fmt17(t),
                    fmt17(k),
                    fmt17(self.prices[i][j])
                )?;
            }
        }
        Ok(())
    }

    /// Reads a table written by [`CallSurface::write_csv`]. The file does not
    /// carry spot or rate, so they are supplied by the caller.
    pub fn read_csv<R: BufRead>(input: R, s0: f64, r: f64) -> Result<Self> {
        let mut rows: Vec<(f64, f64, f64)> = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if n == 0 {
                if line != "t,K,price" {
                    return Err(Error::Parse {
                        line: 1,
                        msg: format!("expected header 't,K,price', got '{line}'"),
                    });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: "expected 3 fields".into(),
                });
            }
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: n + 1,
                    msg: e.to_string(),
                })
            };
            rows.push((parse(fields[0])?, parse(fields[1])?, parse(fields[2])?));
        }
        let mut maturities: Vec<f64> = Vec::new();
        let mut strikes: Vec<f64> = Vec::new();
        for &(t, k, _) in &rows {
            if maturities.last() != Some(&t) && !maturities.contains(&t) {
                maturities.push(t);
            }
            if !strikes.contains(&k) {
                strikes.push(k);
            }
        }
        if maturities.is_empty() || maturities.len() * strikes.len() != rows.len() {
            return Err(Error::Parse {
                line: 0,
                msg: "rows do not form a full (t, K) grid".into(),
            });
        }
        let mut prices = vec![vec![f64::NAN; strikes.len()]; maturities.len()];
        for &(t, k, p) in &rows {
            let i = maturities.iter().position(|&x| x == t).unwrap();
            let j = strikes.iter().position(|&x| x == k).unwrap();
            prices[i][j] = p;
        }
        Self::from_prices(s0, r, maturities, strikes, prices)
    }
}

/// Heston "market" surface priced by COS on the given grid.
pub fn build_market_surface(
    params: &HestonParams,
    maturities: &[f64],
    strikes: &[f64],
    cfg: &CosConfig,
) -> Result<CallSurface> {
    check_increasing("maturities", maturities)?;
    check_increasing("strikes", strikes)?;
    let (lo, hi) = (strikes[0], *strikes.last().unwrap());
    if lo > 0.3 * params.s0 * (1.0 + 1e-12) || hi < 3.0 * params.s0 * (1.0 - 1e-12) {
        log::debug!("strike grid [{lo}, {hi}] is narrower than [0.3 s0, 3 s0]");
    }
    let prices: Vec<Vec<f64>> = maturities
        .par_iter()
        .map(|&t| {
            let pricer = CosPricer::new(params, t, cfg)?;
            Ok(strikes.iter().map(|&k| pricer.call(k)).collect())
        })
        .collect::<Result<_>>()?;
    CallSurface::from_prices(
        params.s0,
        params.r,
        maturities.to_vec(),
        strikes.to_vec(),
        prices,
    )
}

/// Flat Black–Scholes surface, used as a known-answer input.
pub fn flat_bs_surface(
    s0: f64,
    r: f64,
    sigma: f64,
    maturities: &[f64],
    strikes: &[f64],
) -> Result<CallSurface> {
    let prices = maturities
        .iter()
        .map(|&t| {
            strikes
                .iter()
                .map(|&k| bs_call_price(s0, k, t, r, sigma))
                .collect()
        })
        .collect();
    CallSurface::from_prices(s0, r, maturities.to_vec(), strikes.to_vec(), prices)
}

pub(crate) fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn check_increasing(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(domain(format!("{name} grid is empty")));
    }
    if xs.iter().any(|x| !x.is_finite()) || xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(domain(format!("{name} grid must be strictly increasing")));
    }
    Ok(())
}

fn check_static_arbitrage(
    s0: f64,
    r: f64,
    maturities: &[f64],
    strikes: &[f64],
    prices: &[Vec<f64>],
) -> Result<()> {
    let fail = |i: usize, j: usize, reason: &str| Error::Surface {
        t: maturities[i],
        strike: strikes[j],
        reason: reason.to_string(),
    };
    for (i, row) in prices.iter().enumerate() {
        let t = maturities[i];
        for (j, &c) in row.iter().enumerate() {
            if !c.is_finite() {
                return Err(fail(i, j, "non-finite price"));
            }
            let lower = (s0 - strikes[j] * (-r * t).exp()).max(0.0);
            if c < lower - ARBITRAGE_SLACK || c > s0 + ARBITRAGE_SLACK {
                return Err(fail(i, j, "price outside no-arbitrage bounds"));
            }
            if j > 0 && c > row[j - 1] + ARBITRAGE_SLACK {
                return Err(fail(i, j, "price increases in strike"));
            }
            if j > 0 && j + 1 < row.len() {
                let left = (c - row[j - 1]) / (strikes[j] - strikes[j - 1]);
                let right = (row[j + 1] - c) / (strikes[j + 1] - strikes[j]);
                let scale = (strikes[j + 1] - strikes[j - 1]).recip();
                if right < left - ARBITRAGE_SLACK * scale {
                    return Err(fail(i, j, "price not convex in strike"));
                }
            }
            if r == 0.0 && i > 0 && c < prices[i - 1][j] - ARBITRAGE_SLACK {
                return Err(fail(i, j, "price decreases in maturity"));
            }
        }
    }
    Ok(())
}

fn row_total_variance(s0: f64, r: f64, t: f64, strikes: &[f64], row: &[f64]) -> Result<Vec<f64>> {
    let ivs: Vec<Option<f64>> = strikes
        .iter()
        .zip(row)
        .map(|(&k, &c)| {
            let intrinsic = (s0 - k * (-r * t).exp()).max(0.0);
            let time_value = (c - intrinsic).min(s0 - c);
            if time_value < MIN_TIME_VALUE {
                return None;
            }
            implied_vol(c, s0, k, t, r).ok()
        })
        .collect();
    let resolved: Vec<usize> = (0..ivs.len()).filter(|&j| ivs[j].is_some()).collect();
    if resolved.is_empty() {
        return Err(Error::Surface {
            t,
            strike: strikes[0],
            reason: "no strike at this maturity has a resolvable implied volatility".into(),
        });
    }
    Ok((0..ivs.len())
        .map(|j| {
            let iv = ivs[j].unwrap_or_else(|| {
                let nearest = *resolved
                    .iter()
                    .min_by_key(|&&m| (m as i64 - j as i64).abs())
                    .unwrap();
                ivs[nearest].unwrap()
            });
            iv * iv * t
        })
        .collect())
}

/// Second derivatives of the natural cubic spline through `(xs, ys)`.
fn natural_spline_curvature(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior equations.
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = xs[i] - xs[i - 1];
        let h1 = xs[i + 1] - xs[i];
        let a = h0 / 6.0;
        let b = (h0 + h1) / 3.0;
        let c = h1 / 6.0;
        let d = (ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0;
        let denom = b - a * c_prime[i - 1];
        c_prime[i] = c / denom;
        d_prime[i] = (d - a * d_prime[i - 1]) / denom;
    }
    for i in (1..n - 1).rev() {
        m[i] = d_prime[i] - c_prime[i] * m[i + 1];
    }
    m
}

fn spline_eval(xs: &[f64], ys: &[f64], m: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if n == 1 {
        return ys[0];
    }
    let i = match xs.partition_point(|&v| v <= x) {
        0 => 0,
        p if p >= n => n - 2,
        p => p - 1,
    };
    let h = xs[i + 1] - xs[i];
    let a = (xs[i + 1] - x) / h;
    let b = (x - xs[i]) / h;
    a * ys[i] + b * ys[i + 1] + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
}

/// Monotone piecewise-cubic Hermite interpolation (Fritsch–Carlson slopes
/// with the usual three-point end conditions).
pub(crate) fn pchip_eval(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if n == 1 {
        return ys[0];
    }
    let i = match xs.partition_point(|&v| v <= x) {
        0 => 0,
        p if p >= n => n - 2,
        p => p - 1,
    };
    let h = xs[i + 1] - xs[i];
    let t = (x - xs[i]) / h;
    let d0 = pchip_slope(xs, ys, i);
    let d1 = pchip_slope(xs, ys, i + 1);
    let (t2, t3) = (t * t, t * t * t);
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * ys[i] + h10 * h * d0 + h01 * ys[i + 1] + h11 * h * d1
}

fn pchip_slope(xs: &[f64], ys: &[f64], i: usize) -> f64 {
    let n = xs.len();
    let secant = |j: usize| (ys[j + 1] - ys[j]) / (xs[j + 1] - xs[j]);
    if n == 2 {
        return secant(0);
    }
    let end = |h0: f64, h1: f64, m0: f64, m1: f64| {
        let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
        if d.signum() != m0.signum() {
            0.0
        } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
            3.0 * m0
        } else {
            d
        }
    };
    if i == 0 {
        return end(xs[1] - xs[0], xs[2] - xs[1], secant(0), secant(1));
    }
    if i == n - 1 {
        return end(
            xs[n - 1] - xs[n - 2],
            xs[n - 2] - xs[n - 3],
            secant(n - 2),
            secant(n - 3),
        );
    }
    let (m0, m1) = (secant(i - 1), secant(i));
    if m0 * m1 <= 0.0 {
        return 0.0;
    }
    let h0 = xs[i] - xs[i - 1];
    let h1 = xs[i + 1] - xs[i];
    let w1 = 2.0 * h1 + h0;
    let w2 = h1 + 2.0 * h0;
    (w1 + w2) / (w1 / m0 + w2 / m1)
}
