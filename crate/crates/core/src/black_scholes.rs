//! Black–Scholes prices and implied-volatility inversion.

use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// European call on a non-dividend asset. Degenerate `sigma sqrt(T) = 0`
/// returns the discounted forward intrinsic value.
pub fn bs_call_price(s: f64, k: f64, t: f64, r: f64, sigma: f64) -> f64 {
    let df = (-r * t).exp();
    let sd = sigma * t.max(0.0).sqrt();
    if !(sd > 0.0) {
        return (s - k * df).max(0.0);
    }
    let d1 = ((s / k).ln() + r * t) / sd + 0.5 * sd;
    let d2 = d1 - sd;
    s * norm_cdf(d1) - k * df * norm_cdf(d2)
}

pub fn bs_put_price(s: f64, k: f64, t: f64, r: f64, sigma: f64) -> f64 {
    let df = (-r * t).exp();
    let sd = sigma * t.max(0.0).sqrt();
    if !(sd > 0.0) {
        return (k * df - s).max(0.0);
    }
    let d1 = ((s / k).ln() + r * t) / sd + 0.5 * sd;
    let d2 = d1 - sd;
    k * df * norm_cdf(-d2) - s * norm_cdf(-d1)
}

/// dC / dsigma.
pub fn bs_vega(s: f64, k: f64, t: f64, r: f64, sigma: f64) -> f64 {
    let sd = sigma * t.sqrt();
    if !(sd > 0.0) {
        return 0.0;
    }
    let d1 = ((s / k).ln() + r * t) / sd + 0.5 * sd;
    s * norm_pdf(d1) * t.sqrt()
}

/// No-arbitrage band `((s - K e^{-rT})^+, s)` for a call price.
pub fn call_band(s: f64, k: f64, t: f64, r: f64) -> (f64, f64) {
    ((s - k * (-r * t).exp()).max(0.0), s)
}

/// Volatility reproducing `price` under [`bs_call_price`].
///
/// Bracketing plus Newton, falling back to bisection whenever the Newton
/// iterate leaves the bracket. Prices outside the open no-arbitrage band are
/// rejected with [`Error::BandViolation`].
pub fn implied_vol(price: f64, s: f64, k: f64, t: f64, r: f64) -> Result<f64> {
    let (lower, upper) = call_band(s, k, t, r);
    if !(price > lower && price < upper) {
        return Err(Error::BandViolation {
            price,
            lower,
            upper,
        });
    }
    let f = |sig: f64| bs_call_price(s, k, t, r, sig) - price;

    let mut lo = 0.0;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::BandViolation {
                price,
                lower,
                upper,
            });
        }
    }

    let mut x = 0.5 * (lo + hi);
    for _ in 0..400 {
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let vega = bs_vega(s, k, t, r, x);
        let newton = x - fx / vega;
        x = if vega > 0.0 && newton > lo && newton < hi {
            newton
        } else if lo > 0.0 && hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(x)
}
