//! Heston characteristic function and Fourier-cosine (COS) pricing.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{domain, Error, Result};
use crate::variance::CirParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HestonParams {
    pub cir: CirParams,
    pub rho: f64,
    pub r: f64,
    pub s0: f64,
}

impl HestonParams {
    pub fn new(cir: CirParams, rho: f64, r: f64, s0: f64) -> Result<Self> {
        let p = Self { cir, rho, r, s0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.cir.validate()?;
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(domain(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        if !(self.s0 > 0.0) || !self.s0.is_finite() {
            return Err(domain(format!("s0 must be > 0, got {}", self.s0)));
        }
        if !self.r.is_finite() {
            return Err(domain("r must be finite"));
        }
        Ok(())
    }

    /// First two cumulants of `log(S_T / s0)`.
    pub fn log_return_cumulants(&self, t: f64) -> (f64, f64) {
        let CirParams {
            kappa: k,
            theta: th,
            gamma: g,
            v0,
        } = self.cir;
        let rho = self.rho;
        let e = (-k * t).exp();
        let c1 = self.r * t + (1.0 - e) * (th - v0) / (2.0 * k) - 0.5 * th * t;
        let c2 = (g * t * k * e * (v0 - th) * (8.0 * k * rho - 4.0 * g)
            + k * rho * g * (1.0 - e) * (16.0 * th - 8.0 * v0)
            + 2.0 * th * k * t * (-4.0 * k * rho * g + g * g + 4.0 * k * k)
            + g * g * ((th - 2.0 * v0) * e * e + th * (4.0 * e - 5.0) + 2.0 * v0)
            + 8.0 * k * k * (v0 - th) * (1.0 - e))
            / (8.0 * k * k * k);
        (c1, c2)
    }
}

/// `log(1 + z) / z`, accurate for small `|z|`.
fn log1p_over(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        Complex64::new(1.0, 0.0) - z / 2.0 + z * z / 3.0 - z * z * z / 4.0
    } else {
        (Complex64::new(1.0, 0.0) + z).ln() / z
    }
}

/// `1 - exp(-z)`, accurate for small `|z|`.
fn one_minus_exp_neg(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        z - z * z / 2.0 + z * z * z / 6.0 - z * z * z * z / 24.0
    } else {
        Complex64::new(1.0, 0.0) - (-z).exp()
    }
}

/// `E[exp(i u log(S_t / s0))]` under the risk-neutral Heston law.
///
/// Uses the formulation whose complex logarithm never crosses the principal
/// branch cut, with the `beta - d` differences rewritten so that the
/// vol-of-vol never appears as a small denominator.
pub fn log_return_char_fn(u: Complex64, t: f64, params: &HestonParams) -> Complex64 {
    let CirParams {
        kappa,
        theta,
        gamma,
        v0,
    } = params.cir;
    let i = Complex64::i();
    let iu = i * u;
    let beta = kappa - params.rho * gamma * iu;
    let s = iu + u * u;
    let d = (beta * beta + gamma * gamma * s).sqrt();
    let bd = beta + d;
    // (beta - d) / gamma^2
    let q = -s / bd;
    let em1 = one_minus_exp_neg(d * t);
    let g = gamma * gamma * q / bd;
    let e = Complex64::new(1.0, 0.0) - em1;
    let w_over_g2 = q * em1 / (bd * (1.0 - g));
    let w = gamma * gamma * w_over_g2;
    let c = iu * params.r * t + kappa * theta * (q * t - 2.0 * w_over_g2 * log1p_over(w));
    let dd = q * em1 / (1.0 - g * e);
    (c + dd * v0).exp()
}

/// `E[exp(i u log S_t)]`.
pub fn heston_char_fn(u: Complex64, t: f64, params: &HestonParams) -> Complex64 {
    let cf = log_return_char_fn(u, t, params);
    cf * (Complex64::i() * u * params.s0.ln()).exp()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosConfig {
    pub n_terms: usize,
    /// Half-width of the truncation interval in units of `sqrt(c2)`.
    pub domain_width: f64,
}

impl Default for CosConfig {
    fn default() -> Self {
        Self {
            n_terms: 1024,
            domain_width: 12.0,
        }
    }
}

impl CosConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_terms < 32 {
            return Err(domain(format!(
                "COS needs >= 32 terms, got {}",
                self.n_terms
            )));
        }
        if !(self.domain_width >= 10.0) {
            return Err(domain(format!(
                "COS domain must cover >= 10 standard deviations, got {}",
                self.domain_width
            )));
        }
        Ok(())
    }
}

/// COS expansion of the `log(S_T / s0)` density at one maturity, reusable
/// across strikes.
#[derive(Clone, Debug)]
pub struct CosPricer {
    s0: f64,
    discount: f64,
    a: f64,
    b: f64,
    /// `Re`-ready coefficients `phi(u_k) e^{-i u_k a}`, with the k = 0 term halved.
    coeffs: Vec<Complex64>,
}

impl CosPricer {
    pub fn new(params: &HestonParams, t: f64, cfg: &CosConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        if !(t > 0.0) {
            return Err(domain(format!("maturity must be > 0, got {t}")));
        }
        let (c1, c2) = params.log_return_cumulants(t);
        let c2 = if c2 > 0.0 { c2 } else { params.cir.v0 * t };
        let half = cfg.domain_width * c2.sqrt();
        let (a, b) = (c1 - half, c1 + half);
        let width = b - a;
        let mut coeffs = Vec::with_capacity(cfg.n_terms);
        for k in 0..cfg.n_terms {
            let u = k as f64 * PI / width;
            let cf = log_return_char_fn(Complex64::new(u, 0.0), t, params);
            if !cf.re.is_finite() || !cf.im.is_finite() {
                return Err(Error::NonFinite(format!(
                    "characteristic function at u={u}, t={t}"
                )));
            }
            let mut c = cf * Complex64::new(0.0, -u * a).exp();
            if k == 0 {
                c *= 0.5;
            }
            coeffs.push(c);
        }
        let pricer = Self {
            s0: params.s0,
            discount: (-params.r * t).exp(),
            a,
            b,
            coeffs,
        };
        let edge = pricer.density(a).abs().max(pricer.density(b).abs());
        log::debug!("COS interval [{a:.4}, {b:.4}] at t={t}, edge density {edge:.2e}");
        Ok(pricer)
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// Density of `log(S_T / s0)` at `x`.
    pub fn density(&self, x: f64) -> f64 {
        let width = self.b - self.a;
        let acc: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c.re * (k as f64 * PI / width * (x - self.a)).cos())
            .sum();
        2.0 / width * acc
    }

    pub fn put(&self, strike: f64) -> f64 {
        let width = self.b - self.a;
        let m = (strike / self.s0).ln();
        if m <= self.a {
            return 0.0;
        }
        let m = m.min(self.b);
        let mut acc = 0.0;
        for (k, c) in self.coeffs.iter().enumerate() {
            let u = k as f64 * PI / width;
            let psi = if k == 0 {
                m - self.a
            } else {
                (u * (m - self.a)).sin() / u
            };
            let chi = ((u * (m - self.a)).cos() * m.exp() - self.a.exp()
                + u * (u * (m - self.a)).sin() * m.exp())
                / (1.0 + u * u);
            acc += c.re * (strike * psi - self.s0 * chi);
        }
        (self.discount * 2.0 / width * acc).max(0.0)
    }

    pub fn call(&self, strike: f64) -> f64 {
        let c = self.put(strike) + self.s0 - strike * self.discount;
        c.max((self.s0 - strike * self.discount).max(0.0))
    }
}

/// European call by the COS method.
pub fn cos_call_price(params: &HestonParams, strike: f64, t: f64, cfg: &CosConfig) -> Result<f64> {
    if !(strike > 0.0) {
        return Err(domain(format!("strike must be > 0, got {strike}")));
    }
    Ok(CosPricer::new(params, t, cfg)?.call(strike))
}

pub fn cos_put_price(params: &HestonParams, strike: f64, t: f64, cfg: &CosConfig) -> Result<f64> {
    if !(strike > 0.0) {
        return Err(domain(format!("strike must be > 0, got {strike}")));
    }
    Ok(CosPricer::new(params, t, cfg)?.put(strike))
}
