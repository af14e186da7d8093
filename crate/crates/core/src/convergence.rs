//! Strong-convergence studies on dyadically coupled Brownian paths, and
//! parameter sweeps of the scheme-comparison error.

use rayon::prelude::*;
use std::io::Write;

use crate::brownian::BrownianGrid;
use crate::error::{domain, Result};
use crate::heston::{CosConfig, HestonParams};
use crate::rng::RandomStream;
use crate::slv::{derive_model_params, SlvConfig};
use crate::surface::build_market_surface;
use crate::table::{table_error, ErrorMetric, TableCell};
use crate::variance::{terminal_state, CirParams, SchemeKind, TruncationSpec, VarianceStepResult};

#[derive(Clone, Debug)]
pub struct ConvergenceSetup {
    pub scheme: SchemeKind,
    pub params: CirParams,
    /// Truncation base; the floor shrinks with each level's step size.
    pub trunc: TruncationSpec,
    pub horizon: f64,
    /// Step counts under test, strictly increasing.
    pub levels: Vec<usize>,
    pub reference_level: usize,
    pub paths: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelError {
    pub steps: usize,
    pub tau: f64,
    /// L2 error of the output process (`pi_tau(L)` for the truncated scheme).
    pub l2_output: f64,
    /// L2 error of the raw recursion iterate `L`.
    pub l2_raw: f64,
    /// L1 error of the variance `(output)^2`.
    pub l1_variance: f64,
}

#[derive(Clone, Debug)]
pub struct ConvergenceStudy {
    pub setup: ConvergenceSetup,
    pub errors: Vec<LevelError>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_raw: f64,
    pub slope_variance: f64,
}

impl ConvergenceSetup {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.scheme == SchemeKind::ExactNcx2 {
            return Err(domain(
                "the exact transition is not driven by a Brownian path and cannot be coupled",
            ));
        }
        if self.levels.is_empty() || self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(domain("levels must be strictly increasing"));
        }
        let finest = *self.levels.last().unwrap();
        if self.reference_level < 4 * finest {
            return Err(domain(format!(
                "reference level {} must be at least 4x the finest level {finest}",
                self.reference_level
            )));
        }
        for &n in &self.levels {
            let ratio = self.reference_level / n;
            if n == 0 || !self.reference_level.is_multiple_of(n) || !ratio.is_power_of_two() {
                return Err(domain(format!(
                    "level {n} is not a dyadic coarsening of {}",
                    self.reference_level
                )));
            }
        }
        if self.paths == 0 || !(self.horizon > 0.0) {
            return Err(domain("need paths > 0 and horizon > 0"));
        }
        Ok(())
    }
}

fn output_value(state: &VarianceStepResult) -> f64 {
    state.effective.sqrt()
}

/// Squared output, squared raw and absolute variance differences of one
/// path at each level against its own reference-level solution.
fn path_differences(setup: &ConvergenceSetup, path: usize) -> Result<Vec<(f64, f64, f64)>> {
    let grid = BrownianGrid::generate(
        setup.seed,
        setup.horizon,
        setup.reference_level,
        path..path + 1,
    )?;
    // unused by the coupled schemes, which only read dW
    let mut stream = RandomStream::new(setup.seed, u64::MAX - path as u64);
    let reference = terminal_state(
        setup.scheme,
        &setup.params,
        &setup.trunc,
        grid.dw(0),
        grid.step_size(),
        &mut stream,
    )?;
    let mut out = vec![(0.0, 0.0, 0.0); setup.levels.len()];
    let mut current = grid;
    loop {
        let n = current.steps();
        if let Some(idx) = setup.levels.iter().position(|&l| l == n) {
            let st = terminal_state(
                setup.scheme,
                &setup.params,
                &setup.trunc,
                current.dw(0),
                current.step_size(),
                &mut stream,
            )?;
            let d_out = output_value(&st) - output_value(&reference);
            let d_raw = st.lamperti - reference.lamperti;
            let d_var = (st.effective - reference.effective).abs();
            out[idx] = (d_out * d_out, d_raw * d_raw, d_var);
        }
        if n <= setup.levels[0] || n % 2 != 0 {
            break;
        }
        current = current.coarsen()?;
    }
    Ok(out)
}

/// Per-level strong errors at the horizon against the same scheme on the
/// coupled reference grid.
pub fn strong_errors(setup: &ConvergenceSetup) -> Result<Vec<LevelError>> {
    setup.validate()?;
    let per_path: Vec<Vec<(f64, f64, f64)>> = (0..setup.paths)
        .into_par_iter()
        .map(|p| path_differences(setup, p))
        .collect::<Result<_>>()?;
    let m = setup.paths as f64;
    Ok(setup
        .levels
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for row in &per_path {
                a += row[i].0;
                b += row[i].1;
                c += row[i].2;
            }
            LevelError {
                steps: n,
                tau: setup.horizon / n as f64,
                l2_output: (a / m).sqrt(),
                l2_raw: (b / m).sqrt(),
                l1_variance: c / m,
            }
        })
        .collect())
}

/// Least-squares `(slope, intercept)` of `log(error)` against `log(tau)`.
/// Zero errors are left out of the fit.
pub fn estimate_order(taus: &[f64], errors: &[f64]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = taus
        .iter()
        .zip(errors)
        .filter_map(|(&t, &e)| {
            if e > 0.0 && e.is_finite() {
                Some((t.ln(), e.ln()))
            } else {
                log::warn!("excluding tau={t} with error {e} from the order fit");
                None
            }
        })
        .collect();
    if pts.len() < 2 {
        return Err(domain("need at least two non-zero errors to fit an order"));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

pub fn run_study(setup: ConvergenceSetup) -> Result<ConvergenceStudy> {
    if setup.levels.len() < 4 {
        return Err(domain("an order estimate needs at least 4 levels"));
    }
    let errors = strong_errors(&setup)?;
    let taus: Vec<f64> = errors.iter().map(|e| e.tau).collect();
    let pick = |f: fn(&LevelError) -> f64| errors.iter().map(f).collect::<Vec<f64>>();
    let (slope, intercept) = estimate_order(&taus, &pick(|e| e.l2_output))?;
    let (slope_raw, _) = estimate_order(&taus, &pick(|e| e.l2_raw))?;
    let (slope_variance, _) = estimate_order(&taus, &pick(|e| e.l1_variance))?;
    Ok(ConvergenceStudy {
        setup,
        errors,
        slope,
        intercept,
        slope_raw,
        slope_variance,
    })
}

impl ConvergenceStudy {
    /// `scheme,N,tau,l2_error,l1_error_V` rows followed by `slope=` lines.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "scheme,N,tau,l2_error,l1_error_V")?;
        for e in &self.errors {
            writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e}",
                self.setup.scheme, e.steps, e.tau, e.l2_output, e.l1_variance
            )?;
        }
        writeln!(out, "slope={:.16e}", self.slope)?;
        writeln!(out, "slope_raw={:.16e}", self.slope_raw)?;
        writeln!(out, "slope_V={:.16e}", self.slope_variance)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    /// Long-run variance of the market (the model follows through the p-map).
    VBar,
    /// Misspecification parameter.
    P,
}

impl std::str::FromStr for SweepParam {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vbar" | "theta" => Ok(SweepParam::VBar),
            "p" => Ok(SweepParam::P),
            other => Err(crate::Error::Config(format!(
                "sweep parameter must be 'vbar' or 'p', got '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepParam::VBar => "vbar",
            SweepParam::P => "p",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub grid: Vec<f64>,
    pub schemes: Vec<SchemeKind>,
    pub steps: usize,
    pub metric: ErrorMetric,
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub cells: Vec<TableCell>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub param: SweepParam,
    pub points: Vec<SweepPoint>,
}

/// Evaluates the table error for every grid value and scheme. Each grid
/// value reuses the base seed, so every cell gets the same random budget.
/// `base_p` is the misspecification applied when sweeping `vbar`.
pub fn sweep(
    spec: &SweepSpec,
    base: &SlvConfig,
    base_p: f64,
    maturities: &[f64],
    strikes: &[f64],
    cos: &CosConfig,
) -> Result<SweepResult> {
    if spec.grid.is_empty() || spec.grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(domain("sweep grid must be non-empty and increasing"));
    }
    let mut points = Vec::with_capacity(spec.grid.len());
    let base_surface = match spec.param {
        SweepParam::P => Some(build_market_surface(
            &base.market,
            maturities,
            strikes,
            cos,
        )?),
        SweepParam::VBar => None,
    };
    for &value in &spec.grid {
        let (market, p) = match spec.param {
            SweepParam::VBar => {
                let cir = CirParams {
                    theta: value,
                    ..base.market.cir
                };
                (
                    HestonParams::new(cir, base.market.rho, base.market.r, base.market.s0)?,
                    base_p,
                )
            }
            SweepParam::P => (base.market, value),
        };
        let model = derive_model_params(&market, p)?;
        let cfg = SlvConfig {
            market,
            model,
            p: Some(p),
            ..base.clone()
        };
        let owned;
        let surface = match &base_surface {
            Some(s) => s,
            None => {
                owned = build_market_surface(&market, maturities, strikes, cos)?;
                &owned
            }
        };
        let table = table_error(
            &cfg,
            surface,
            &spec.schemes,
            &[spec.steps],
            spec.metric,
            cos,
        )?;
        points.push(SweepPoint {
            value,
            cells: table.cells,
        });
    }
    Ok(SweepResult {
        param: spec.param,
        points,
    })
}

impl SweepResult {
    /// Strike-averaged error of `scheme` at grid point `idx`; `None` if any
    /// strike hit a band violation.
    pub fn mean_error(&self, scheme: SchemeKind, idx: usize) -> Option<f64> {
        let errs: Vec<Option<f64>> = self.points[idx]
            .cells
            .iter()
            .filter(|c| c.scheme == scheme)
            .map(|c| c.outcome.err_pct())
            .collect();
        if errs.is_empty() || errs.iter().any(Option::is_none) {
            return None;
        }
        Some(errs.iter().flatten().sum::<f64>() / errs.len() as f64)
    }

    /// `param,value,scheme,K,err_pct,stderr_pct` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "param,value,scheme,K,err_pct,stderr_pct")?;
        for pt in &self.points {
            for c in &pt.cells {
                match (c.outcome.err_pct(), c.outcome.stderr_pct()) {
                    (Some(e), Some(s)) => writeln!(
                        out,
                        "{},{:.4},{},{:.4},{:.4},{:.4}",
                        self.param, pt.value, c.scheme, c.strike, e, s
                    )?,
                    _ => writeln!(
                        out,
                        "{},{:.4},{},{:.4},band_violation,band_violation",
                        self.param, pt.value, c.scheme, c.strike
                    )?,
                }
            }
        }
        Ok(())
    }
}
