//! Heston stochastic-local-volatility Monte Carlo.
//!
//! Paths evolve step-synchronously. At every time level the leverage function
//! is calibrated on the whole cross-section (a barrier), then each path
//! advances its variance with the chosen scheme and its log-price with the
//! variance-substituted Euler step in [`advance_asset`].

use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::heston::HestonParams;
use crate::local_vol::{
    dupire_local_variance, leverage_squared, ConditionalExpectationEstimate, LeverageConfig,
    LeverageEvaluation,
};
use crate::rng::RandomStream;
use crate::surface::CallSurface;
use crate::variance::{CirParams, SchemeKind, TruncationSpec, VarianceStepResult};

/// Model parameters obtained from the market by the misspecification map
/// `gamma (1 - p), kappa (1 + p), rho (1 + p), theta (1 - p), v0 (1 + p)`.
pub fn derive_model_params(market: &HestonParams, p: f64) -> Result<HestonParams> {
    let rho = (1.0 + p) * market.rho;
    if !(rho.abs() < 1.0) {
        return Err(domain(format!(
            "p = {p} maps rho {} to {rho}, outside (-1, 1)",
            market.rho
        )));
    }
    let c = market.cir;
    let cir = CirParams::new(
        (1.0 + p) * c.kappa,
        (1.0 - p) * c.theta,
        (1.0 - p) * c.gamma,
        (1.0 + p) * c.v0,
    )?;
    HestonParams::new(cir, rho, market.r, market.s0)
}

/// Long-run variance used in the mixing term of [`advance_asset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssetDrift {
    /// The model's `theta` as written.
    Nominal,
    /// The mean of the variance process the scheme really simulates (see
    /// [`SchemeKind::simulated_mean`]); keeps Lamperti paths martingales.
    SchemeImplied,
}

impl std::str::FromStr for AssetDrift {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nominal" => Ok(AssetDrift::Nominal),
            "scheme" | "scheme_implied" => Ok(AssetDrift::SchemeImplied),
            other => Err(Error::Config(format!(
                "asset drift must be 'nominal' or 'scheme', got '{other}'"
            ))),
        }
    }
}

/// How the leverage multiplier is obtained at each step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LeverageMode {
    /// Calibrated to the market surface every step.
    Calibrated,
    /// Held at a constant `sigma_hat` (1 reduces the model to plain Heston).
    Fixed(f64),
}

#[derive(Clone, Debug)]
pub struct SlvConfig {
    pub market: HestonParams,
    pub model: HestonParams,
    /// Misspecification parameter the model was derived with, if any.
    pub p: Option<f64>,
    pub scheme: SchemeKind,
    pub paths: usize,
    pub steps: usize,
    pub horizon: f64,
    pub strikes: Vec<f64>,
    pub seed: u64,
    pub leverage: LeverageConfig,
    /// Truncation base; `None` selects `sqrt(v0)` of the model.
    pub truncation_b: Option<f64>,
    pub leverage_mode: LeverageMode,
    pub asset_drift: AssetDrift,
    /// Keep per-step conditional-expectation and leverage diagnostics.
    pub trace: bool,
}

impl SlvConfig {
    /// Configuration with the model derived from `market` by `p`.
    pub fn with_p(market: HestonParams, p: f64, scheme: SchemeKind) -> Result<Self> {
        let model = derive_model_params(&market, p)?;
        Ok(Self {
            market,
            model,
            p: Some(p),
            scheme,
            paths: 10_000,
            steps: 40,
            horizon: 5.0,
            strikes: vec![0.7, 1.0, 1.5],
            seed: 1,
            leverage: LeverageConfig::default(),
            truncation_b: None,
            leverage_mode: LeverageMode::Calibrated,
            asset_drift: AssetDrift::SchemeImplied,
            trace: false,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.model.validate()?;
        self.leverage.validate()?;
        if self.paths < 100 {
            return Err(domain(format!(
                "need at least 100 paths, got {}",
                self.paths
            )));
        }
        if self.steps == 0 {
            return Err(domain("need at least one step"));
        }
        if !(self.horizon > 0.0) {
            return Err(domain("horizon must be > 0"));
        }
        if self.strikes.iter().any(|&k| !(k > 0.0)) {
            return Err(domain("strikes must be > 0"));
        }
        if let LeverageMode::Fixed(x) = self.leverage_mode {
            if !(x >= 0.0) {
                return Err(domain("fixed leverage must be >= 0"));
            }
        }
        self.truncation()?;
        Ok(())
    }

    pub fn truncation(&self) -> Result<TruncationSpec> {
        match self.truncation_b {
            Some(b) => TruncationSpec::new(b, &self.model.cir),
            None => Ok(TruncationSpec::for_params(&self.model.cir)),
        }
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Model parameters handed to [`advance_asset`].
    pub fn asset_params(&self) -> HestonParams {
        let mut p = self.model;
        if self.asset_drift == AssetDrift::SchemeImplied {
            p.cir.theta = self.scheme.simulated_mean(&self.model.cir);
        }
        p
    }
}

/// Log-price update over one step:
///
/// `R' = R + r tau - tau sigma^2 V / 2
///       + (rho / gamma) sigma (V' - V - kappa theta tau + kappa tau V)
///       + sqrt((1 - rho^2) tau sigma^2 V) Z`
///
/// with `kappa, theta, gamma, rho` taken from `params` (the model).
#[inline]
pub fn advance_asset(
    r_i: f64,
    v_i: f64,
    v_next: f64,
    sigma_hat: f64,
    tau: f64,
    z: f64,
    params: &HestonParams,
) -> f64 {
    let CirParams {
        kappa,
        theta,
        gamma,
        ..
    } = params.cir;
    let rho = params.rho;
    let s2v = sigma_hat * sigma_hat * v_i;
    r_i + params.r * tau - 0.5 * tau * s2v
        + rho / gamma * sigma_hat * (v_next - v_i - kappa * theta * tau + kappa * tau * v_i)
        + ((1.0 - rho * rho) * tau * s2v).sqrt() * z
}

/// Per-path state at the current time level.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    pub step: usize,
    pub t: f64,
    pub log_s: Vec<f64>,
    pub variance: Vec<VarianceStepResult>,
}

impl PathEnsemble {
    pub fn initial(paths: usize, model: &HestonParams) -> Self {
        Self {
            step: 0,
            t: 0.0,
            log_s: vec![model.s0.ln(); paths],
            variance: vec![VarianceStepResult::initial(&model.cir); paths],
        }
    }

    pub fn len(&self) -> usize {
        self.log_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_s.is_empty()
    }

    pub fn spots(&self) -> Vec<f64> {
        self.log_s.iter().map(|r| r.exp()).collect()
    }

    pub fn effective_variances(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.effective).collect()
    }
}

/// Diagnostics of one time level, recorded when tracing is on.
#[derive(Clone, Debug)]
pub struct StepTrace {
    pub step: usize,
    pub t: f64,
    pub estimate: Option<ConditionalExpectationEstimate>,
    /// `(s, dupire, condexp, sigma2)` at the bin midpoints.
    pub leverage_profile: Vec<(f64, f64, f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct SimulationOutcome {
    pub ensemble: PathEnsemble,
    pub trace: Vec<StepTrace>,
}

/// Runs the full HSLV simulation to `cfg.horizon`.
pub fn simulate_hslv(cfg: &SlvConfig, surface: &CallSurface) -> Result<SimulationOutcome> {
    cfg.validate()?;
    let model = cfg.model;
    let asset = cfg.asset_params();
    let trunc = cfg.truncation()?;
    let tau = cfg.step_size();
    let sqrt_tau = tau.sqrt();
    let mut ens = PathEnsemble::initial(cfg.paths, &model);
    let mut streams: Vec<RandomStream> = (0..cfg.paths)
        .map(|j| RandomStream::new(cfg.seed, j as u64))
        .collect();
    let mut trace = Vec::new();

    for i in 0..cfg.steps {
        let t = i as f64 * tau;
        let sigma2: Vec<f64> = match cfg.leverage_mode {
            LeverageMode::Fixed(x) => vec![x * x; cfg.paths],
            LeverageMode::Calibrated => {
                let spots = ens.spots();
                let vars = ens.effective_variances();
                let ev = leverage_squared(surface, t, &spots, &vars, &cfg.leverage)?;
                if cfg.trace {
                    trace.push(step_trace(i, t, &ev, surface, &cfg.leverage));
                }
                ev.sigma2
            }
        };

        let scheme = cfg.scheme;
        let results: Vec<Result<()>> = ens
            .log_s
            .par_iter_mut()
            .zip(ens.variance.par_iter_mut())
            .zip(streams.par_iter_mut())
            .zip(sigma2.par_iter())
            .map(|(((r, v), stream), &s2)| {
                let dw = sqrt_tau * stream.standard_normal();
                let z = stream.standard_normal();
                let next = scheme.step(v, dw, tau, &model.cir, &trunc, stream)?;
                *r = advance_asset(*r, v.effective, next.effective, s2.sqrt(), tau, z, &asset);
                *v = next;
                Ok(())
            })
            .collect();
        for res in results {
            res?;
        }
        if let Some(j) = ens.log_s.iter().position(|r| !r.is_finite()) {
            return Err(Error::NonFinite(format!(
                "path {j} at step {} (t={:.6}): log S = {}, V = {:?}",
                i + 1,
                (i + 1) as f64 * tau,
                ens.log_s[j],
                ens.variance[j]
            )));
        }
        ens.step = i + 1;
        ens.t = (i + 1) as f64 * tau;
    }
    Ok(SimulationOutcome {
        ensemble: ens,
        trace,
    })
}

fn step_trace(
    step: usize,
    t: f64,
    ev: &LeverageEvaluation,
    surface: &CallSurface,
    cfg: &LeverageConfig,
) -> StepTrace {
    let (lo, hi) = surface.strike_span();
    let profile = ev
        .estimate
        .as_ref()
        .map(|est| {
            (0..est.n_bins())
                .map(|b| {
                    let mid = 0.5 * (est.edges[b] + est.edges[b + 1]);
                    let lv = dupire_local_variance(surface, t, mid.clamp(lo, hi), &cfg.dupire)
                        .unwrap_or(f64::NAN);
                    let ce = est.means[b];
                    let s2 = (lv / ce.max(cfg.eps_v)).clamp(cfg.sigma2_floor, cfg.sigma2_cap);
                    (mid, lv, ce, s2)
                })
                .collect()
        })
        .unwrap_or_default();
    StepTrace {
        step,
        t,
        estimate: ev.estimate.clone(),
        leverage_profile: profile,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriceEstimate {
    pub mean: f64,
    /// `None` with fewer than two samples.
    pub stderr: Option<f64>,
    pub samples: usize,
}

/// Discounted call payoff average over terminal spots.
pub fn price_call(spots: &[f64], strike: f64, r: f64, horizon: f64) -> Result<PriceEstimate> {
    if spots.is_empty() {
        return Err(domain("no terminal spots to price"));
    }
    let df = (-r * horizon).exp();
    let m = spots.len() as f64;
    let payoffs: Vec<f64> = spots.iter().map(|&s| (s - strike).max(0.0)).collect();
    let mean = payoffs.iter().sum::<f64>() / m;
    let stderr = (spots.len() >= 2).then(|| {
        let var = payoffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        df * (var / m).sqrt()
    });
    Ok(PriceEstimate {
        mean: df * mean,
        stderr,
        samples: spots.len(),
    })
}
