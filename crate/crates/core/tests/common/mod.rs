//! Reference implementations shared by the integration tests. Nothing here
//! calls into the library's pricing code.
#![allow(dead_code)]

use num_complex::Complex64;
use std::f64::consts::PI;

use hslv::exact::sample_joint;
use hslv::heston::HestonParams;
use hslv::local_vol::{estimate_conditional_expectation, BinSpec};
use hslv::variance::CirParams;

pub fn market() -> HestonParams {
    HestonParams::new(
        CirParams::new(1.05, 0.0855, 0.95, 0.0945).unwrap(),
        -0.315,
        0.0,
        1.0,
    )
    .unwrap()
}

/// Nodes and weights of `n`-point Gauss-Legendre on [-1, 1].
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Integral of `f` over `[0, upper]` with 16-point Gauss-Legendre on unit panels.
pub fn integrate(f: impl Fn(f64) -> f64, upper: f64) -> f64 {
    let gl = gauss_legendre(16);
    let panels = upper.ceil() as usize;
    let mut sum = 0.0;
    for p in 0..panels {
        let (a, b) = (p as f64, (p + 1) as f64);
        let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
        for &(x, w) in &gl {
            sum += w * h * f(m + h * x);
        }
    }
    sum
}

/// Heston's original two-probability formulation: the characteristic function
/// of `ln S_T` under measure `j` (1: share measure, 2: risk-neutral).
fn heston_fj(j: usize, phi: f64, t: f64, p: &HestonParams) -> Complex64 {
    let CirParams {
        kappa,
        theta,
        gamma: sigma,
        v0,
    } = p.cir;
    let rho = p.rho;
    let i = Complex64::i();
    let (u, b) = if j == 1 {
        (0.5, kappa - rho * sigma)
    } else {
        (-0.5, kappa)
    };
    let a = kappa * theta;
    let rsi = rho * sigma * phi * i;
    let d = ((rsi - b).powi(2) - sigma * sigma * (2.0 * u * phi * i - phi * phi)).sqrt();
    // "little trap" orientation: g = (b - rsi - d) / (b - rsi + d)
    let g = (b - rsi - d) / (b - rsi + d);
    let e = (-d * t).exp();
    let c = p.r * phi * i * t
        + a / (sigma * sigma) * ((b - rsi - d) * t - 2.0 * ((1.0 - g * e) / (1.0 - g)).ln());
    let dd = (b - rsi - d) / (sigma * sigma) * (1.0 - e) / (1.0 - g * e);
    (c + dd * v0 + i * phi * p.s0.ln()).exp()
}

fn probability(j: usize, strike: f64, t: f64, p: &HestonParams) -> f64 {
    let lk = strike.ln();
    let f = |phi: f64| {
        if phi == 0.0 {
            return 0.0;
        }
        let z =
            (-Complex64::i() * phi * lk).exp() * heston_fj(j, phi, t, p) / (Complex64::i() * phi);
        z.re
    };
    0.5 + integrate(f, 3000.0) / PI
}

/// Call price by direct quadrature of the Heston probabilities.
pub fn quad_call(p: &HestonParams, strike: f64, t: f64) -> f64 {
    p.s0 * probability(1, strike, t, p) - strike * (-p.r * t).exp() * probability(2, strike, t, p)
}

pub fn quad_put(p: &HestonParams, strike: f64, t: f64) -> f64 {
    strike * (-p.r * t).exp() * (1.0 - probability(2, strike, t, p))
        - p.s0 * (1.0 - probability(1, strike, t, p))
}

/// Risk-neutral density of `S_T` at `s` by Fourier inversion.
pub fn quad_spot_density(p: &HestonParams, s: f64, t: f64) -> f64 {
    let x = s.ln();
    let f = |phi: f64| ((-Complex64::i() * phi * x).exp() * heston_fj(2, phi, t, p)).re;
    integrate(f, 3000.0) / PI / s
}

pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Nadaraya-Watson regression of `v` on `ln s` with a Gaussian kernel,
/// evaluated on `grid`.
pub fn kernel_regression(s: &[f64], v: &[f64], grid: &[f64], bandwidth: f64) -> Vec<f64> {
    let xs: Vec<f64> = s.iter().map(|x| x.ln()).collect();
    grid.iter()
        .map(|&g| {
            let x0 = g.ln();
            let (mut num, mut den) = (0.0, 0.0);
            for (&x, &vv) in xs.iter().zip(v) {
                let u = (x - x0) / bandwidth;
                if u.abs() < 6.0 {
                    let w = (-0.5 * u * u).exp();
                    num += w * vv;
                    den += w;
                }
            }
            num / den
        })
        .collect()
}

pub fn interpolate(grid: &[f64], values: &[f64], x: f64) -> f64 {
    let i = grid.partition_point(|&g| g <= x).clamp(1, grid.len() - 1);
    let w = (x - grid[i - 1]) / (grid[i] - grid[i - 1]);
    values[i - 1] + w * (values[i] - values[i - 1])
}

pub struct BinComparison {
    pub binned: f64,
    pub kernel: f64,
    pub stderr: f64,
}

/// Bins 10^5 exact samples at t = 1 and compares each central bin with the
/// kernel-regression curve of 10^6 independent samples, averaged over the
/// bin's own members.
pub fn compare_central_bins(n_bins: usize) -> Vec<BinComparison> {
    let p = market();
    let t = 1.0;
    let reference = sample_joint(&p, &[t], 0.02, 1_000_000, 71).unwrap();
    let sample = sample_joint(&p, &[t], 0.02, 100_000, 72).unwrap();
    let (s_ref, v_ref) = (&reference.spots[0], &reference.variances[0]);
    let (s, v) = (&sample.spots[0], &sample.variances[0]);

    let est = estimate_conditional_expectation(s, v, &BinSpec { n_bins }).unwrap();
    let skip = n_bins / 10;
    let grid = hslv::surface::log_spaced(est.edges[skip], est.edges[n_bins - skip], 400);
    let n = s_ref.len() as f64;
    let mean_log = s_ref.iter().map(|x| x.ln()).sum::<f64>() / n;
    let sd_log = (s_ref
        .iter()
        .map(|x| (x.ln() - mean_log).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let nw = kernel_regression(s_ref, v_ref, &grid, 0.05 * sd_log);

    (skip..n_bins - skip)
        .map(|b| {
            let members: Vec<usize> = (0..s.len()).filter(|&j| est.bin_index(s[j]) == b).collect();
            let m = members.len() as f64;
            let kernel = members
                .iter()
                .map(|&j| interpolate(&grid, &nw, s[j]))
                .sum::<f64>()
                / m;
            let var = members
                .iter()
                .map(|&j| (v[j] - est.means[b]).powi(2))
                .sum::<f64>()
                / (m - 1.0);
            BinComparison {
                binned: est.means[b],
                kernel,
                stderr: (var / m).sqrt(),
            }
        })
        .collect()
}
