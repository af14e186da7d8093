//! Dupire local variance, binned conditional expectations and the leverage
//! function `sigma^2(t, s) = sigma_Dup^2(t, s) / E[V_t | S_t = s]`.

use rayon::prelude::*;
use std::io::Write;

use crate::error::{domain, Error, Result};
use crate::surface::{fmt17, CallSurface};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DupireConfig {
    pub dt_bump: f64,
    pub dk_bump_rel: f64,
    /// Lower bound on `S^2 / 2 * d2C/dK2`.
    pub denom_floor: f64,
    pub lv_floor: f64,
    pub lv_cap: f64,
}

impl Default for DupireConfig {
    fn default() -> Self {
        Self {
            dt_bump: 0.01,
            dk_bump_rel: 0.01,
            denom_floor: 1e-6,
            lv_floor: 1e-4,
            lv_cap: 4.0,
        }
    }
}

impl DupireConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("dt_bump", self.dt_bump),
            ("dk_bump_rel", self.dk_bump_rel),
            ("denom_floor", self.denom_floor),
            ("lv_floor", self.lv_floor),
            ("lv_cap", self.lv_cap),
        ] {
            if !(x > 0.0) || !x.is_finite() {
                return Err(domain(format!("{name} must be > 0, got {x}")));
            }
        }
        if self.lv_floor >= self.lv_cap {
            return Err(domain("lv_floor must be below lv_cap"));
        }
        Ok(())
    }
}

/// Dupire local variance at `(t, s)` by finite differences of the surface.
///
/// Strike derivatives are central with bump `dk_bump_rel * s`. The time
/// derivative is central, except past the last maturity minus one bump where
/// it is backward. Queries at `t < dt_bump` are evaluated at `t = dt_bump`,
/// which stands in for the `t -> 0+` limit. Within one bump of either end of
/// the strike span the stencil is moved inward so it never leaves the grid.
pub fn dupire_local_variance(
    surface: &CallSurface,
    t: f64,
    s: f64,
    cfg: &DupireConfig,
) -> Result<f64> {
    let (lo, hi) = surface.strike_span();
    if !(s >= lo && s <= hi) {
        return Err(Error::Extrapolation { value: s, lo, hi });
    }
    Ok(dupire_unchecked(surface, t, s, cfg))
}

fn dupire_unchecked(surface: &CallSurface, t: f64, s: f64, cfg: &DupireConfig) -> f64 {
    let dt = cfg.dt_bump;
    let t = t.max(dt);
    let (lo, hi) = surface.strike_span();
    let s = s.clamp(lo * (1.0 + cfg.dk_bump_rel), hi / (1.0 + cfg.dk_bump_rel));
    let dk = cfg.dk_bump_rel * s;
    let mid = surface.strike_slice(s);
    let c = surface.slice_price(&mid, t, s);
    let c_up = surface.slice_price(&surface.strike_slice(s + dk), t, s + dk);
    let c_dn = surface.slice_price(&surface.strike_slice(s - dk), t, s - dk);
    let c_t = if t + dt <= surface.last_maturity() {
        (surface.slice_price(&mid, t + dt, s) - surface.slice_price(&mid, t - dt, s)) / (2.0 * dt)
    } else {
        (c - surface.slice_price(&mid, t - dt, s)) / dt
    };
    let c_k = (c_up - c_dn) / (2.0 * dk);
    let c_kk = (c_up - 2.0 * c + c_dn) / (dk * dk);
    let num = c_t + surface.rate() * s * c_k;
    let den = (0.5 * s * s * c_kk).max(cfg.denom_floor);
    let lv = num / den;
    if lv.is_nan() {
        cfg.lv_floor
    } else {
        lv.clamp(cfg.lv_floor, cfg.lv_cap)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BinSpec {
    pub n_bins: usize,
}

impl Default for BinSpec {
    fn default() -> Self {
        Self { n_bins: 20 }
    }
}

/// Piecewise-constant estimate of `E[V | S]` on equal-count bins.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalExpectationEstimate {
    /// `n + 1` strictly increasing edges; the outer two are the sample range.
    pub edges: Vec<f64>,
    pub means: Vec<f64>,
    pub counts: Vec<usize>,
}

impl ConditionalExpectationEstimate {
    pub fn n_bins(&self) -> usize {
        self.means.len()
    }

    /// Index of the bin containing `s`; values outside the sample range map
    /// to the nearest end bin.
    #[inline]
    pub fn bin_index(&self, s: f64) -> usize {
        let n = self.means.len();
        self.edges[1..n].partition_point(|&e| e <= s)
    }

    #[inline]
    pub fn evaluate(&self, s: f64) -> f64 {
        self.means[self.bin_index(s)]
    }

    /// `bin_lo,bin_hi,mean_v` rows.
    pub fn write_csv<W: Write>(&self, mut out: W, with_header: bool) -> Result<()> {
        if with_header {
            writeln!(out, "bin_lo,bin_hi,mean_v")?;
        }
        for i in 0..self.n_bins() {
            writeln!(
                out,
                "{},{},{}",
                fmt17(self.edges[i]),
                fmt17(self.edges[i + 1]),
                fmt17(self.means[i])
            )?;
        }
        Ok(())
    }
}

/// Quantile (equal-count) binning of `v` against `s`. Bin sizes differ by at
/// most one; interior edges sit midway between neighbouring samples.
pub fn estimate_conditional_expectation(
    s: &[f64],
    v: &[f64],
    spec: &BinSpec,
) -> Result<ConditionalExpectationEstimate> {
    if s.len() != v.len() {
        return Err(domain(format!(
            "sample lengths differ: {} vs {}",
            s.len(),
            v.len()
        )));
    }
    if spec.n_bins < 2 {
        return Err(domain("need at least 2 bins"));
    }
    if s.len() < spec.n_bins {
        return Err(Error::InsufficientSamples {
            got: s.len(),
            needed: spec.n_bins,
        });
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_unstable_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)));

    let n = s.len();
    let base = n / spec.n_bins;
    let extra = n % spec.n_bins;
    let mut edges = vec![s[order[0]]];
    let mut means = Vec::with_capacity(spec.n_bins);
    let mut counts = Vec::with_capacity(spec.n_bins);
    let mut start = 0;
    let mut sum = 0.0;
    let mut count = 0;
    for b in 0..spec.n_bins {
        let len = base + usize::from(b < extra);
        let end = start + len;
        sum += order[start..end].iter().map(|&i| v[i]).sum::<f64>();
        count += len;
        let last = b + 1 == spec.n_bins;
        // Ties across a boundary would give a zero-width bin; merge instead.
        if !last && s[order[end - 1]] == s[order[end]] {
            start = end;
            continue;
        }
        edges.push(if last {
            s[order[n - 1]]
        } else {
            0.5 * (s[order[end - 1]] + s[order[end]])
        });
        means.push(sum / count as f64);
        counts.push(count);
        sum = 0.0;
        count = 0;
        start = end;
    }
    Ok(ConditionalExpectationEstimate {
        edges,
        means,
        counts,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeverageConfig {
    pub dupire: DupireConfig,
    pub bins: BinSpec,
    /// Floor on the conditional expectation in the denominator.
    pub eps_v: f64,
    pub sigma2_floor: f64,
    pub sigma2_cap: f64,
}

impl Default for LeverageConfig {
    fn default() -> Self {
        Self {
            dupire: DupireConfig::default(),
            bins: BinSpec::default(),
            eps_v: 1e-4,
            sigma2_floor: 1e-4,
            sigma2_cap: 100.0,
        }
    }
}

impl LeverageConfig {
    pub fn validate(&self) -> Result<()> {
        self.dupire.validate()?;
        if self.bins.n_bins < 2 {
            return Err(domain("need at least 2 bins"));
        }
        if !(self.eps_v > 0.0) {
            return Err(domain("eps_v must be > 0"));
        }
        if !(self.sigma2_floor > 0.0 && self.sigma2_floor < self.sigma2_cap) {
            return Err(domain("need 0 < sigma2_floor < sigma2_cap"));
        }
        Ok(())
    }
}

/// Squared leverage for every path of a cross-section at time `t`.
#[derive(Clone, Debug)]
pub struct LeverageEvaluation {
    pub t: f64,
    pub sigma2: Vec<f64>,
    pub dupire: Vec<f64>,
    pub condexp: Vec<f64>,
    /// `None` when the cross-section was degenerate and the overall mean was used.
    pub estimate: Option<ConditionalExpectationEstimate>,
}

/// `sigma^2 = sigma_Dup^2(t, S_j) / max(E[V | S = S_j], eps_v)`, clamped to
/// `[sigma2_floor, sigma2_cap]`. Levels outside the surface's strike span use
/// the local variance at the nearest span edge.
pub fn leverage_squared(
    surface: &CallSurface,
    t: f64,
    s_paths: &[f64],
    v_paths: &[f64],
    cfg: &LeverageConfig,
) -> Result<LeverageEvaluation> {
    if s_paths.len() != v_paths.len() || s_paths.is_empty() {
        return Err(domain(
            "leverage needs equal-length, non-empty cross-sections",
        ));
    }
    let (lo, hi) = surface.strike_span();
    let (smin, smax) = s_paths
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });

    let (condexp, estimate) = if smin == smax {
        let mean = v_paths.iter().sum::<f64>() / v_paths.len() as f64;
        (vec![mean; s_paths.len()], None)
    } else {
        let est = estimate_conditional_expectation(s_paths, v_paths, &cfg.bins)?;
        (
            s_paths.iter().map(|&s| est.evaluate(s)).collect(),
            Some(est),
        )
    };

    let dupire: Vec<f64> = if smin == smax {
        vec![dupire_unchecked(surface, t, smin.clamp(lo, hi), &cfg.dupire); s_paths.len()]
    } else {
        s_paths
            .par_iter()
            .map(|&s| dupire_unchecked(surface, t, s.clamp(lo, hi), &cfg.dupire))
            .collect()
    };

    let sigma2 = dupire
        .iter()
        .zip(&condexp)
        .map(|(&lv, &ce)| (lv / ce.max(cfg.eps_v)).clamp(cfg.sigma2_floor, cfg.sigma2_cap))
        .collect();
    Ok(LeverageEvaluation {
        t,
        sigma2,
        dupire,
        condexp,
        estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{default_maturities, default_strikes, flat_bs_surface};

    fn flat(sigma: f64) -> CallSurface {
        flat_bs_surface(
            1.0,
            0.0,
            sigma,
            &default_maturities(),
            &default_strikes(1.0),
        )
        .unwrap()
    }

    #[test]
    fn flat_surface_gives_flat_local_variance() {
        for sigma in [0.1, 0.2, 0.4] {
            let s = flat(sigma);
            for &t in &[0.5f64, 1.3, 2.5, 4.5] {
                for &x in &[0.7f64, 1.0, 1.5] {
                    // far tails have vanishing gamma and hit the denominator floor
                    if x.ln().abs() > 3.0 * sigma * t.sqrt() {
                        continue;
                    }
                    let lv = dupire_local_variance(&s, t, x, &DupireConfig::default()).unwrap();
                    assert!(
                        (lv - sigma * sigma).abs() < 1e-3,
                        "sigma={sigma} t={t} S={x}: {lv}"
                    );
                }
            }
        }
    }

    #[test]
    fn outside_span_is_an_error() {
        let s = flat(0.2);
        assert!(matches!(
            dupire_local_variance(&s, 1.0, 3.5, &DupireConfig::default()),
            Err(Error::Extrapolation { .. })
        ));
    }

    #[test]
    fn denominator_floor_activates_in_the_wing() {
        let s = flat(0.2);
        let cfg = DupireConfig {
            denom_floor: 1e-3,
            ..DupireConfig::default()
        };
        let lv = dupire_local_variance(&s, 0.25, 2.9, &cfg).unwrap();
        assert!(lv.is_finite() && lv <= cfg.lv_cap && lv < 0.04);
    }

    #[test]
    fn raising_denominator_floor_never_raises_local_variance() {
        let s = flat(0.3);
        for &x in &[0.31, 0.5, 1.0, 2.0, 2.9] {
            let mut prev = f64::INFINITY;
            for floor in [1e-8, 1e-6, 1e-4, 1e-3, 1e-2] {
                let cfg = DupireConfig {
                    denom_floor: floor,
                    ..DupireConfig::default()
                };
                let lv = dupire_local_variance(&s, 1.0, x, &cfg).unwrap();
                assert!(lv <= prev + 1e-15);
                prev = lv;
            }
        }
    }

    #[test]
    fn constant_field_gives_constant_means() {
        let s: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() + 2.0).collect();
        let v = vec![0.09; 1000];
        let est = estimate_conditional_expectation(&s, &v, &BinSpec::default()).unwrap();
        assert_eq!(est.n_bins(), 20);
        assert!(est.means.iter().all(|&m| (m - 0.09).abs() < 1e-15));
    }

    #[test]
    fn two_bin_hand_example() {
        let est = estimate_conditional_expectation(
            &[3.0, 1.0, 4.0, 2.0],
            &[0.3, 0.1, 0.4, 0.2],
            &BinSpec { n_bins: 2 },
        )
        .unwrap();
        assert!((est.means[0] - 0.15).abs() < 1e-15);
        assert!((est.means[1] - 0.35).abs() < 1e-15);
        assert_eq!(est.edges, vec![1.0, 2.5, 4.0]);
        assert_eq!(est.evaluate(0.0), est.means[0]);
        assert_eq!(est.evaluate(9.0), est.means[1]);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            estimate_conditional_expectation(&[1.0, 2.0], &[1.0, 2.0], &BinSpec { n_bins: 3 }),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn degenerate_cross_section_uses_overall_mean() {
        let surface = flat(0.2);
        let s = vec![1.0; 50];
        let v: Vec<f64> = (0..50).map(|i| 0.1 + 0.001 * i as f64).collect();
        let ev = leverage_squared(&surface, 0.0, &s, &v, &LeverageConfig::default()).unwrap();
        let mean = v.iter().sum::<f64>() / 50.0;
        let lv0 = dupire_local_variance(&surface, 0.0, 1.0, &DupireConfig::default()).unwrap();
        assert!(ev.estimate.is_none());
        for &x in &ev.sigma2 {
            assert!((x - lv0 / mean).abs() < 1e-15);
        }
    }

    #[test]
    fn tiny_condexp_is_floored() {
        let surface = flat(0.2);
        let s: Vec<f64> = (0..100).map(|i| 0.8 + 0.004 * i as f64).collect();
        let v = vec![1e-9; 100];
        let cfg = LeverageConfig::default();
        let ev = leverage_squared(&surface, 1.0, &s, &v, &cfg).unwrap();
        for &x in &ev.sigma2 {
            assert!(x <= cfg.sigma2_cap);
            assert!((x - (0.04f64 / cfg.eps_v).min(cfg.sigma2_cap)).abs() < 1.0);
        }
    }
}
