//! Discretizations of the CIR variance process
//! `dV = kappa (theta - V) dt + gamma sqrt(V) dW`.
//!
//! Two schemes work on the Lamperti variable `L = sqrt(V)`, whose dynamics are
//! taken as `dL = phi(L) dt + (gamma / 2) dW` with
//! `phi(x) = (kappa / 2) (theta / x - x)`:
//!
//! * [`step_backward`]: drift-implicit Euler, solved by its closed-form
//!   positive root;
//! * [`step_truncated`]: explicit Euler with the drift evaluated at the
//!   floored value `pi_tau(L) = max(b tau^(1/4), L)`.
//!
//! The two baselines act on `V` directly: full-truncation Euler and the exact
//! noncentral chi-square transition.

use std::fmt;
use std::str::FromStr;

use crate::brownian::BrownianGrid;
use crate::error::{domain, Error, Result};
use crate::rng::RandomStream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CirParams {
    pub kappa: f64,
    pub theta: f64,
    pub gamma: f64,
    pub v0: f64,
}

impl CirParams {
    pub fn new(kappa: f64, theta: f64, gamma: f64, v0: f64) -> Result<Self> {
        let p = Self {
            kappa,
            theta,
            gamma,
            v0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("kappa", self.kappa),
            ("theta", self.theta),
            ("gamma", self.gamma),
            ("v0", self.v0),
        ] {
            if !(x > 0.0) || !x.is_finite() {
                return Err(domain(format!(
                    "CIR {name} must be finite and > 0, got {x}"
                )));
            }
        }
        Ok(())
    }

    /// `2 kappa theta >= gamma^2`. Diagnostic only; nothing here requires it.
    pub fn feller_satisfied(&self) -> bool {
        2.0 * self.kappa * self.theta >= self.gamma * self.gamma
    }

    /// Dimension `4 kappa theta / gamma^2` of the exact transition law.
    pub fn transition_dof(&self) -> f64 {
        4.0 * self.kappa * self.theta / (self.gamma * self.gamma)
    }

    /// `E[V_{t+tau} | V_t = v]`.
    pub fn conditional_mean(&self, v: f64, tau: f64) -> f64 {
        self.theta + (v - self.theta) * (-self.kappa * tau).exp()
    }

    /// `Var[V_{t+tau} | V_t = v]`.
    pub fn conditional_variance(&self, v: f64, tau: f64) -> f64 {
        let e = (-self.kappa * tau).exp();
        let g2k = self.gamma * self.gamma / self.kappa;
        v * g2k * e * (1.0 - e) + self.theta * g2k * 0.5 * (1.0 - e).powi(2)
    }
}

/// Lower clamp `b tau^(1/4)` used by the truncated scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationSpec {
    pub b: f64,
}

impl TruncationSpec {
    /// Requires `0 < b <= sqrt(v0)`.
    pub fn new(b: f64, params: &CirParams) -> Result<Self> {
        if !(b > 0.0) || b > params.v0.sqrt() {
            return Err(domain(format!(
                "truncation base must lie in (0, sqrt(v0)] = (0, {}], got {b}",
                params.v0.sqrt()
            )));
        }
        Ok(Self { b })
    }

    /// The largest admissible base, `sqrt(v0)`.
    pub fn for_params(params: &CirParams) -> Self {
        Self {
            b: params.v0.sqrt(),
        }
    }

    #[inline]
    pub fn floor(&self, tau: f64) -> f64 {
        self.b * tau.sqrt().sqrt()
    }

    /// `pi_tau(x) = max(b tau^(1/4), x)`.
    #[inline]
    pub fn project(&self, x: f64, tau: f64) -> f64 {
        self.floor(tau).max(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeKind {
    FullTruncationEuler,
    ExactNcx2,
    TruncatedLamperti,
    BackwardLamperti,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [
        SchemeKind::FullTruncationEuler,
        SchemeKind::ExactNcx2,
        SchemeKind::TruncatedLamperti,
        SchemeKind::BackwardLamperti,
    ];

    /// Column label used in tables.
    pub fn label(self) -> &'static str {
        match self {
            SchemeKind::FullTruncationEuler => "Euler",
            SchemeKind::ExactNcx2 => "AES",
            SchemeKind::TruncatedLamperti => "Truncated",
            SchemeKind::BackwardLamperti => "Backward",
        }
    }

    pub fn is_lamperti(self) -> bool {
        matches!(
            self,
            SchemeKind::TruncatedLamperti | SchemeKind::BackwardLamperti
        )
    }

    /// Long-run mean of the variance the scheme actually simulates. The
    /// Lamperti drift `(kappa / 2)(theta / L - L)` carries no Ito correction,
    /// so `L^2` mean-reverts to `theta + gamma^2 / (4 kappa)`.
    pub fn simulated_mean(self, params: &CirParams) -> f64 {
        if self.is_lamperti() {
            params.theta + params.gamma * params.gamma / (4.0 * params.kappa)
        } else {
            params.theta
        }
    }

    /// Advances one step from `prev`. `dw` is the variance-driving Brownian
    /// increment over the step; `stream` is consumed only by
    /// [`SchemeKind::ExactNcx2`].
    #[inline]
    pub fn step(
        self,
        prev: &VarianceStepResult,
        dw: f64,
        tau: f64,
        params: &CirParams,
        trunc: &TruncationSpec,
        stream: &mut RandomStream,
    ) -> Result<VarianceStepResult> {
        match self {
            SchemeKind::FullTruncationEuler => {
                Ok(step_full_truncation_euler(prev.variance, dw, tau, params))
            }
            SchemeKind::ExactNcx2 => step_exact(prev.variance, tau, params, stream),
            SchemeKind::TruncatedLamperti => {
                Ok(step_truncated(prev.lamperti, dw, tau, params, trunc))
            }
            SchemeKind::BackwardLamperti => step_backward(prev.lamperti, dw, tau, params),
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euler" | "fulltruncationeuler" | "full_truncation_euler" => {
                Ok(SchemeKind::FullTruncationEuler)
            }
            "aes" | "exact" | "exactncx2" | "exact_ncx2" => Ok(SchemeKind::ExactNcx2),
            "truncated" | "truncatedlamperti" | "truncated_lamperti" => {
                Ok(SchemeKind::TruncatedLamperti)
            }
            "backward" | "backwardlamperti" | "backward_lamperti" => {
                Ok(SchemeKind::BackwardLamperti)
            }
            other => Err(Error::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

/// State after one variance step.
///
/// `lamperti` is the scheme's `L` iterate (for the non-Lamperti schemes,
/// `sqrt(effective)`); `variance` is the raw iterate the scheme continues
/// from; `effective` is the non-negative variance handed to the asset step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceStepResult {
    pub lamperti: f64,
    pub variance: f64,
    pub effective: f64,
}

impl VarianceStepResult {
    pub fn initial(params: &CirParams) -> Self {
        Self {
            lamperti: params.v0.sqrt(),
            variance: params.v0,
            effective: params.v0,
        }
    }
}

/// `phi(x) = (kappa / 2) (theta / x - x)`, the drift of the Lamperti variable.
pub fn phi(x: f64, params: &CirParams) -> Result<f64> {
    if !(x > 0.0) {
        return Err(domain(format!("phi needs x > 0, got {x}")));
    }
    Ok(drift(x, params))
}

#[inline]
fn drift(x: f64, params: &CirParams) -> f64 {
    0.5 * params.kappa * (params.theta / x - x)
}

/// Drift-implicit Euler step for `L`:
/// `L' = L + (kappa tau / 2)(theta / L' - L') + (gamma / 2) dW`,
/// solved by its unique positive root.
#[inline]
pub fn step_backward(l: f64, dw: f64, tau: f64, params: &CirParams) -> Result<VarianceStepResult> {
    let kt = params.kappa * tau;
    let a = l + 0.5 * params.gamma * dw;
    let c = kt * params.theta * (2.0 + kt);
    let root = (a * a + c).sqrt();
    // For a < 0 the textbook numerator a + root cancels; use the conjugate form.
    let next = if a >= 0.0 {
        (a + root) / (2.0 + kt)
    } else {
        kt * params.theta / (root - a)
    };
    if !next.is_finite() {
        return Err(Error::NonFinite(format!(
            "backward step from L={l}, dW={dw}, tau={tau}"
        )));
    }
    let v = next * next;
    Ok(VarianceStepResult {
        lamperti: next,
        variance: v,
        effective: v,
    })
}

/// Drift-implicit step solved by Newton iteration instead of the closed form.
/// Only kept to compare cost against [`step_backward`].
pub fn step_backward_newton(
    l: f64,
    dw: f64,
    tau: f64,
    params: &CirParams,
    tol: f64,
    max_iter: usize,
) -> Result<VarianceStepResult> {
    let h = 0.5 * params.kappa * tau;
    let rhs = l + 0.5 * params.gamma * dw;
    // f(x) = x - h (theta / x - x) - rhs, increasing and convex on x > 0.
    let mut x = rhs.max((h * params.theta).sqrt()).max(1e-8);
    for _ in 0..max_iter {
        let f = x - h * (params.theta / x - x) - rhs;
        let df = 1.0 + h * (params.theta / (x * x) + 1.0);
        let mut nx = x - f / df;
        if nx <= 0.0 {
            nx = 0.5 * x;
        }
        if (nx - x).abs() <= tol * nx.max(1e-300) {
            x = nx;
            let v = x * x;
            return Ok(VarianceStepResult {
                lamperti: x,
                variance: v,
                effective: v,
            });
        }
        x = nx;
    }
    Err(Error::NonFinite(format!(
        "newton did not converge from L={l}, dW={dw}"
    )))
}

/// Relative residual of a candidate `next` in the implicit backward relation,
/// scaled by the magnitude of its terms.
pub fn backward_residual(l: f64, dw: f64, tau: f64, params: &CirParams, next: f64) -> f64 {
    let drift_term = 0.5 * params.kappa * tau * (params.theta / next - next);
    let noise = 0.5 * params.gamma * dw;
    let r = next - l - drift_term - noise;
    let scale = next.abs() + l.abs() + drift_term.abs() + noise.abs();
    r.abs() / scale
}

/// Truncated explicit Euler step for `L`. The raw iterate may fall below the
/// floor (or below zero); the variance fed onward is `pi_tau(L')^2`.
#[inline]
pub fn step_truncated(
    l: f64,
    dw: f64,
    tau: f64,
    params: &CirParams,
    trunc: &TruncationSpec,
) -> VarianceStepResult {
    let lp = trunc.project(l, tau);
    let next = l + tau * drift(lp, params) + 0.5 * params.gamma * dw;
    let bar = trunc.project(next, tau);
    let v = bar * bar;
    VarianceStepResult {
        lamperti: next,
        variance: v,
        effective: v,
    }
}

/// Full-truncation Euler on `V`: the raw iterate keeps its sign, drift and
/// diffusion see `max(V, 0)`.
#[inline]
pub fn step_full_truncation_euler(
    v: f64,
    dw: f64,
    tau: f64,
    params: &CirParams,
) -> VarianceStepResult {
    let vp = v.max(0.0);
    let next = v + params.kappa * (params.theta - vp) * tau + params.gamma * vp.sqrt() * dw;
    let eff = next.max(0.0);
    VarianceStepResult {
        lamperti: eff.sqrt(),
        variance: next,
        effective: eff,
    }
}

/// Exact CIR transition: `V' = c chi2'(d, lambda)` with
/// `c = gamma^2 (1 - e^{-kappa tau}) / (4 kappa)`, `d = 4 kappa theta / gamma^2`,
/// `lambda = V e^{-kappa tau} / c`.
#[inline]
pub fn step_exact(
    v: f64,
    tau: f64,
    params: &CirParams,
    stream: &mut RandomStream,
) -> Result<VarianceStepResult> {
    if !(v >= 0.0) {
        return Err(domain(format!("exact CIR step needs V >= 0, got {v}")));
    }
    let decay = (-params.kappa * tau).exp();
    let c = params.gamma * params.gamma * (-(-params.kappa * tau).exp_m1()) / (4.0 * params.kappa);
    let lambda = v * decay / c;
    let next = c * stream.noncentral_chisq(params.transition_dof(), lambda)?;
    Ok(VarianceStepResult {
        lamperti: next.sqrt(),
        variance: next,
        effective: next,
    })
}

/// Runs `scheme` along the `local`-th path of `grid`, returning one result
/// per step (the initial state `L0 = sqrt(v0)`, `V0 = v0` is not included).
pub fn simulate_variance_path(
    scheme: SchemeKind,
    params: &CirParams,
    trunc: &TruncationSpec,
    grid: &BrownianGrid,
    local: usize,
    stream: &mut RandomStream,
) -> Result<Vec<VarianceStepResult>> {
    let tau = grid.step_size();
    let mut state = VarianceStepResult::initial(params);
    let mut out = Vec::with_capacity(grid.steps());
    for &dw in grid.dw(local) {
        state = scheme.step(&state, dw, tau, params, trunc, stream)?;
        out.push(state);
    }
    Ok(out)
}

/// Final state only, without allocating the whole path.
pub fn terminal_state(
    scheme: SchemeKind,
    params: &CirParams,
    trunc: &TruncationSpec,
    dw: &[f64],
    tau: f64,
    stream: &mut RandomStream,
) -> Result<VarianceStepResult> {
    let mut state = VarianceStepResult::initial(params);
    for &w in dw {
        state = scheme.step(&state, w, tau, params, trunc, stream)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feller_params() -> CirParams {
        CirParams::new(2.0, 0.09, 0.3, 0.09).unwrap()
    }

    /// Bisection on the implicit relation, independent of the closed form.
    fn backward_by_bisection(l: f64, dw: f64, tau: f64, p: &CirParams) -> f64 {
        let f = |x: f64| x - l - 0.5 * p.kappa * tau * (p.theta / x - x) - 0.5 * p.gamma * dw;
        let (mut lo, mut hi) = (1e-300, 10.0);
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-17 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn phi_values() {
        let p = CirParams::new(2.0, 4.0, 1.0, 1.0).unwrap();
        assert_eq!(phi(1.0, &p).unwrap(), 3.0);
        assert!(phi(2.0, &p).unwrap().abs() < 1e-15);
        let m = CirParams::new(1.05, 0.0855, 0.95, 0.0945).unwrap();
        assert!((phi(0.1, &m).unwrap() - 0.396375).abs() < 1e-14);
        assert!(phi(0.0, &m).is_err());
        assert!(phi(-1.0, &m).is_err());
    }

    #[test]
    fn backward_matches_root_finder() {
        let p = feller_params();
        let r = step_backward(0.2, 0.05, 0.01, &p).unwrap();
        let oracle = backward_by_bisection(0.2, 0.05, 0.01, &p);
        assert!(
            (r.lamperti - oracle).abs() < 1e-14,
            "{} vs {oracle}",
            r.lamperti
        );
        assert!((r.lamperti - 0.20969).abs() < 5e-6);
        assert!(backward_residual(0.2, 0.05, 0.01, &p, r.lamperti) < 1e-12);
        assert_eq!(r.effective, r.lamperti * r.lamperti);
    }

    #[test]
    fn backward_fixed_point_and_degenerate_step() {
        let p = feller_params();
        for tau in [1e-4, 0.01, 0.5, 3.0] {
            let r = step_backward(p.theta.sqrt(), 0.0, tau, &p).unwrap();
            assert!((r.lamperti - p.theta.sqrt()).abs() < 1e-15);
        }
        let r = step_backward(0.17, 0.0, 0.0, &p).unwrap();
        assert!((r.lamperti - 0.17).abs() < 1e-16);
    }

    #[test]
    fn backward_stays_positive_under_large_negative_shocks() {
        let p = CirParams::new(1.3125, 0.064125, 0.7125, 0.118125).unwrap();
        for dw in [-1.0, -10.0, -1e3] {
            let r = step_backward(0.01, dw, 0.001, &p).unwrap();
            assert!(r.lamperti > 0.0);
            assert!(backward_residual(0.01, dw, 0.001, &p, r.lamperti) < 1e-12);
        }
    }

    #[test]
    fn newton_agrees_with_closed_form() {
        let p = feller_params();
        let a = step_backward(0.2, -0.3, 0.05, &p).unwrap();
        let b = step_backward_newton(0.2, -0.3, 0.05, &p, 1e-15, 100).unwrap();
        assert!((a.lamperti - b.lamperti).abs() < 1e-13);
    }

    #[test]
    fn truncated_hand_example() {
        let p = feller_params();
        let t = TruncationSpec { b: 0.3 };
        let r = step_truncated(0.05, 0.0, 0.01, &p, &t);
        let floor = 0.3 * 0.01f64.powf(0.25);
        assert!((floor - 0.094868).abs() < 1e-6);
        let expect = 0.05 + 0.01 * (p.theta / floor - floor);
        assert!((r.lamperti - expect).abs() < 1e-15);
        assert!((r.lamperti - 0.0585382).abs() < 1e-6);
        // next iterate is still below the floor, so the effective variance is floor^2
        assert!((r.effective - floor * floor).abs() < 1e-16);
        assert!((r.effective - 0.0090).abs() < 1e-4);
    }

    #[test]
    fn truncated_is_plain_euler_above_floor() {
        let p = feller_params();
        let t = TruncationSpec::for_params(&p);
        let (l, dw, tau) = (0.31, 0.02, 0.001);
        let r = step_truncated(l, dw, tau, &p, &t);
        let euler = l + tau * 0.5 * p.kappa * (p.theta / l - l) + 0.5 * p.gamma * dw;
        assert_eq!(r.lamperti, euler);
        assert_eq!(r.effective, euler * euler);
        let fixed = step_truncated(p.theta.sqrt(), 0.0, 0.01, &p, &t);
        assert!((fixed.lamperti - p.theta.sqrt()).abs() < 1e-16);
    }

    #[test]
    fn truncation_spec_bounds() {
        let p = feller_params();
        assert!(TruncationSpec::new(0.3, &p).is_ok());
        assert!(TruncationSpec::new(0.31, &p).is_err());
        assert!(TruncationSpec::new(0.0, &p).is_err());
    }

    #[test]
    fn full_truncation_examples() {
        let p = CirParams::new(1.0, 0.09, 0.3, 0.04).unwrap();
        let r = step_full_truncation_euler(0.09, 0.0, 0.1, &p);
        assert!((r.variance - 0.09).abs() < 1e-16);
        let r = step_full_truncation_euler(-0.01, 0.0, 0.1, &p);
        assert!((r.variance - (-0.001)).abs() < 1e-15);
        assert_eq!(r.effective, 0.0);
        let r = step_full_truncation_euler(0.04, 0.2, 0.1, &p);
        assert!((r.variance - 0.057).abs() < 1e-15);
    }

    #[test]
    fn exact_conditional_moments() {
        let p = CirParams::new(1.0, 0.09, 0.3, 0.04).unwrap();
        let mut s = RandomStream::new(17, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| step_exact(0.04, 1.0, &p, &mut s).unwrap().variance)
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let target = 0.09 - 0.05 * (-1.0f64).exp();
        assert!((target - 0.071606).abs() < 1e-6);
        let se = (p.conditional_variance(0.04, 1.0) / n as f64).sqrt();
        assert!((mean - target).abs() < 3.0 * se, "{mean} vs {target}");
        assert!((var / p.conditional_variance(0.04, 1.0) - 1.0).abs() < 0.05);
    }

    #[test]
    fn exact_is_stationary_at_long_horizon() {
        let p = CirParams::new(1.0, 0.09, 0.3, 0.09).unwrap();
        let mut s = RandomStream::new(18, 0);
        let n = 50_000;
        let mean = (0..n)
            .map(|_| step_exact(0.09, 50.0, &p, &mut s).unwrap().variance)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.09).abs() < 3e-3);
    }

    #[test]
    fn exact_rejects_negative_variance() {
        let p = feller_params();
        let mut s = RandomStream::new(0, 0);
        assert!(step_exact(-1e-9, 0.1, &p, &mut s).is_err());
    }

    #[test]
    fn path_of_one_step_is_the_step() {
        let p = feller_params();
        let t = TruncationSpec::for_params(&p);
        let g = BrownianGrid::generate(1, 0.5, 1, 0..1).unwrap();
        let mut s = RandomStream::new(0, 0);
        let path =
            simulate_variance_path(SchemeKind::BackwardLamperti, &p, &t, &g, 0, &mut s).unwrap();
        let direct = step_backward(p.v0.sqrt(), g.dw(0)[0], 0.5, &p).unwrap();
        assert_eq!(path, vec![direct]);
    }

    #[test]
    fn zero_noise_backward_path_is_constant_at_fixed_point() {
        let p = feller_params();
        let t = TruncationSpec::for_params(&p);
        let g = BrownianGrid::from_increments(1.0, 16, 0, vec![0.0; 16], vec![0.0; 16]).unwrap();
        let mut s = RandomStream::new(0, 0);
        let path =
            simulate_variance_path(SchemeKind::BackwardLamperti, &p, &t, &g, 0, &mut s).unwrap();
        assert!(path.iter().all(|r| (r.lamperti - 0.3).abs() < 1e-15));
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in SchemeKind::ALL {
            assert_eq!(s.label().parse::<SchemeKind>().unwrap(), s);
        }
        assert!("milstein".parse::<SchemeKind>().is_err());
    }

    #[test]
    fn feller_flag() {
        assert!(feller_params().feller_satisfied());
        let m = CirParams::new(1.05, 0.0855, 0.95, 0.0945).unwrap();
        assert!(!m.feller_satisfied());
    }
}
