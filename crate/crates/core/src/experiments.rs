//! Subcommand orchestration: builds inputs from an [`ExperimentConfig`],
//! runs the experiment and writes its files under the output directory.
//!
//! Every command returns a [`Report`] listing the files written and any
//! failed invariant checks; the binary turns failures into a nonzero exit.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::convergence::{run_study, sweep, SweepParam, SweepSpec};
use crate::error::{Error, Result};
use crate::exact::sample_joint;
use crate::local_vol::{estimate_conditional_expectation, BinSpec};
use crate::slv::{price_call, simulate_hslv, LeverageMode, SlvConfig, StepTrace};
use crate::surface::{build_market_surface, flat_bs_surface, CallSurface};
use crate::table::{cell_error, market_prices, table_error, CellOutcome};
use crate::variance::SchemeKind;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Failure {
    pub check: String,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub written: Vec<PathBuf>,
    pub failures: Vec<Failure>,
}

impl Report {
    fn fail(&mut self, check: &str, detail: impl Into<String>) {
        self.failures.push(Failure {
            check: check.to_string(),
            detail: detail.into(),
        });
    }

    fn create(&mut self, path: PathBuf) -> Result<BufWriter<File>> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let f = File::create(&path)?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    /// `check,detail` lines.
    pub fn write_failures<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "check,detail")?;
        for f in &self.failures {
            writeln!(out, "{},{}", f.check, f.detail.replace(['\n', ','], ";"))?;
        }
        Ok(())
    }
}

fn lower(scheme: SchemeKind) -> String {
    scheme.label().to_ascii_lowercase()
}

/// File name of the table for one strike, e.g. `table_K070.csv` for 70%.
pub fn table_file_name(strike: f64, s0: f64) -> String {
    format!("table_K{:03}.csv", (100.0 * strike / s0).round() as i64)
}

pub fn market_surface(cfg: &ExperimentConfig) -> Result<CallSurface> {
    cfg.validate()?;
    build_market_surface(
        &cfg.market()?,
        &cfg.maturities,
        &cfg.surface_strikes()?,
        &cfg.cos,
    )
}

/// Writes `surface.csv`.
pub fn cmd_market(cfg: &ExperimentConfig) -> Result<Report> {
    let surface = market_surface(cfg)?;
    let mut report = Report::default();
    let mut out = report.create(cfg.out.join("surface.csv"))?;
    surface.write_csv(&mut out)?;
    out.flush()?;
    Ok(report)
}

fn write_trace(report: &mut Report, dir: &Path, trace: &[StepTrace]) -> Result<()> {
    for st in trace {
        if let Some(est) = &st.estimate {
            let mut out = report.create(dir.join(format!("condexp_step_{:04}.csv", st.step)))?;
            est.write_csv(&mut out, true)?;
            out.flush()?;
        }
        let mut out = report.create(dir.join(format!("leverage_step_{:04}.csv", st.step)))?;
        writeln!(out, "s,dupire,condexp,sigma2")?;
        for (s, lv, ce, s2) in &st.leverage_profile {
            writeln!(out, "{s:.16e},{lv:.16e},{ce:.16e},{s2:.16e}")?;
        }
        out.flush()?;
    }
    Ok(())
}

/// One SLV run per scheme at `sim_steps`: `simulate.csv` with prices and
/// errors, `martingale.csv` with the forward check, and per-step trace files
/// under `trace/<scheme>/` when tracing is on.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Report> {
    let surface = market_surface(cfg)?;
    let mut report = Report::default();
    let mut rows = Vec::new();
    let mut mart = Vec::new();
    for &scheme in &cfg.schemes {
        let slv = cfg.slv(scheme, cfg.sim_steps)?;
        let market = market_prices(&slv, &cfg.cos)?;
        let outcome = simulate_hslv(&slv, &surface)?;
        let spots = outcome.ensemble.spots();
        let fwd = price_call(&spots, 0.0, 0.0, slv.horizon)?;
        let target = slv.market.s0 * (slv.market.r * slv.horizon).exp();
        mart.push((scheme, fwd.mean, fwd.stderr.unwrap_or(0.0), target));
        for (j, &k) in slv.strikes.iter().enumerate() {
            let mc = price_call(&spots, k, slv.market.r, slv.horizon)?;
            if !(mc.mean >= 0.0 && mc.mean <= slv.market.s0) {
                report.fail(
                    "price_bounds",
                    format!("{scheme} K={k}: price {} outside [0, s0]", mc.mean),
                );
            }
            let cell = cell_error(
                &mc,
                market[j],
                slv.market.s0,
                k,
                slv.horizon,
                slv.market.r,
                cfg.error_metric,
            )?;
            rows.push((scheme, k, mc, market[j], cell));
        }
        if cfg.trace {
            write_trace(
                &mut report,
                &cfg.out.join("trace").join(lower(scheme)),
                &outcome.trace,
            )?;
        }
    }

    let mut out = report.create(cfg.out.join("simulate.csv"))?;
    writeln!(
        out,
        "scheme,N,K,mc_price,stderr,market_price,err_pct,stderr_pct"
    )?;
    for (scheme, k, mc, market, cell) in &rows {
        let (e, s) = match cell {
            CellOutcome::Value {
                err_pct,
                stderr_pct,
            } => (format!("{err_pct:.16e}"), format!("{stderr_pct:.16e}")),
            CellOutcome::BandViolation { .. } => ("band_violation".into(), "band_violation".into()),
        };
        writeln!(
            out,
            "{scheme},{},{k:.16e},{:.16e},{:.16e},{market:.16e},{e},{s}",
            cfg.sim_steps,
            mc.mean,
            mc.stderr.unwrap_or(f64::NAN)
        )?;
    }
    out.flush()?;

    let mut out = report.create(cfg.out.join("martingale.csv"))?;
    writeln!(out, "scheme,N,mean_s,stderr,forward,z")?;
    for (scheme, mean, se, target) in mart {
        writeln!(
            out,
            "{scheme},{},{mean:.16e},{se:.16e},{target:.16e},{:.16e}",
            cfg.sim_steps,
            (mean - target) / se
        )?;
    }
    out.flush()?;
    Ok(report)
}

/// Error tables: one `table_K###.csv` per strike, `trend_flags.csv`, and the
/// wall-clock timings either in `timings.txt` or, with `inline_timings`, as
/// trailing comment lines of each table (which makes the tables
/// run-dependent).
pub fn cmd_tables(cfg: &ExperimentConfig) -> Result<Report> {
    let surface = market_surface(cfg)?;
    let first = *cfg
        .schemes
        .first()
        .ok_or_else(|| Error::Config("no schemes configured".into()))?;
    let base = cfg.slv(first, cfg.steps[0])?;
    let table = table_error(
        &base,
        &surface,
        &cfg.schemes,
        &cfg.steps,
        cfg.error_metric,
        &cfg.cos,
    )?;
    let mut report = Report::default();

    let mut timing_lines = Vec::new();
    for &scheme in &cfg.schemes {
        for &(s, n, secs) in &table.timings {
            if s == scheme {
                timing_lines.push(format!("N={n} {scheme}: {secs:.4} seconds"));
            }
        }
    }

    for k in table.strikes() {
        let path = cfg.out.join(table_file_name(k, base.market.s0));
        let mut out = report.create(path)?;
        table.write_strike(k, &mut out)?;
        if cfg.inline_timings {
            for line in &timing_lines {
                writeln!(out, "# {line}")?;
            }
        }
        out.flush()?;
        for &scheme in &cfg.schemes {
            for &n in &cfg.steps {
                match table.cell(scheme, n, k) {
                    None => report.fail("grid_complete", format!("{scheme} N={n} K={k} missing")),
                    Some(c) => {
                        if let Some(e) = c.outcome.err_pct() {
                            if !(e >= 0.0 && e.is_finite()) {
                                report
                                    .fail("err_nonnegative", format!("{scheme} N={n} K={k}: {e}"));
                            }
                        }
                    }
                }
            }
        }
    }

    let violations = table.trend_violations();
    let mut out = report.create(cfg.out.join("trend_flags.csv"))?;
    writeln!(out, "scheme,K,err_first,err_last,flag")?;
    for &scheme in &cfg.schemes {
        for k in table.strikes() {
            let first_n = cfg.steps.iter().min().copied().unwrap_or(0);
            let last_n = cfg.steps.iter().max().copied().unwrap_or(0);
            let err = |n| {
                table
                    .cell(scheme, n, k)
                    .and_then(|c| c.outcome.err_pct())
                    .map_or("band_violation".to_string(), |e| format!("{e:.4}"))
            };
            let flag = violations.iter().any(|v| v.0 == scheme && v.1 == k);
            writeln!(
                out,
                "{scheme},{k:.4},{},{},{}",
                err(first_n),
                err(last_n),
                u8::from(flag)
            )?;
        }
    }
    out.flush()?;

    if !cfg.inline_timings {
        let mut out = report.create(cfg.out.join("timings.txt"))?;
        for line in &timing_lines {
            writeln!(out, "{line}")?;
        }
        out.flush()?;
    }
    Ok(report)
}

/// One `converge_<scheme>.csv` per configured scheme.
pub fn cmd_converge(cfg: &ExperimentConfig) -> Result<Report> {
    let mut report = Report::default();
    for &scheme in &cfg.conv_schemes {
        let study = run_study(cfg.convergence(scheme)?)?;
        for e in &study.errors {
            if !(e.l2_output >= 0.0 && e.l2_output.is_finite()) {
                report.fail(
                    "error_finite",
                    format!("{scheme} N={}: {}", e.steps, e.l2_output),
                );
            }
        }
        if !study.slope.is_finite() {
            report.fail("slope_finite", format!("{scheme}: {}", study.slope));
        }
        let mut out = report.create(cfg.out.join(format!("converge_{}.csv", lower(scheme))))?;
        study.write_csv(&mut out)?;
        out.flush()?;
    }
    Ok(report)
}

/// Binned `E[V | S]` of each configured scheme under plain Heston (leverage
/// held at 1, model equal to the market) against a near-exact reference
/// sample binned on the same edges. Writes `condexp_<scheme>.csv` with
/// `t,bin_lo,bin_hi,mean_v,oracle_mean_v,oracle_count`.
pub fn cmd_condexp(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let market = cfg.market()?;
    let times = &cfg.condexp_times;
    let bins = BinSpec { n_bins: cfg.n_bins };
    // keeps the reference sample independent of the scheme runs, which use
    // streams (seed, j) for the same j
    let oracle_seed = cfg.seed ^ 0x5DEE_CE66_D1CE_4E5B;
    let oracle = sample_joint(
        &market,
        times,
        cfg.condexp_oracle_tau,
        cfg.condexp_oracle_paths,
        oracle_seed,
    )?;
    // unused with fixed leverage
    let surface = flat_bs_surface(
        market.s0,
        market.r,
        0.2,
        &cfg.maturities,
        &cfg.surface_strikes()?,
    )?;
    let mut report = Report::default();

    for &scheme in &cfg.condexp_schemes {
        let mut out = report.create(cfg.out.join(format!("condexp_{}.csv", lower(scheme))))?;
        writeln!(out, "t,bin_lo,bin_hi,mean_v,oracle_mean_v,oracle_count")?;
        for (k, &t) in times.iter().enumerate() {
            let steps = (t / cfg.condexp_tau).round().max(1.0) as usize;
            let slv = SlvConfig {
                model: market,
                p: None,
                scheme,
                paths: cfg.condexp_paths,
                steps,
                horizon: t,
                leverage_mode: LeverageMode::Fixed(1.0),
                trace: false,
                ..cfg.slv(scheme, steps)?
            };
            let outcome = simulate_hslv(&slv, &surface)?;
            let est = estimate_conditional_expectation(
                &outcome.ensemble.spots(),
                &outcome.ensemble.effective_variances(),
                &bins,
            )?;
            let mut sums = vec![0.0; est.n_bins()];
            let mut counts = vec![0usize; est.n_bins()];
            for (&s, &v) in oracle.spots[k].iter().zip(&oracle.variances[k]) {
                let b = est.bin_index(s);
                sums[b] += v;
                counts[b] += 1;
            }
            for b in 0..est.n_bins() {
                if counts[b] == 0 {
                    report.fail(
                        "oracle_coverage",
                        format!("{scheme} t={t} bin {b} has no reference samples"),
                    );
                }
                let oracle_mean = sums[b] / counts[b].max(1) as f64;
                writeln!(
                    out,
                    "{t:.16e},{:.16e},{:.16e},{:.16e},{oracle_mean:.16e},{}",
                    est.edges[b],
                    est.edges[b + 1],
                    est.means[b],
                    counts[b]
                )?;
            }
        }
        out.flush()?;
    }
    Ok(report)
}

/// Writes `sweep_<param>.csv` (per strike) and `sweep_<param>_mean.csv`
/// (strike-averaged error per grid value and scheme).
pub fn cmd_sweep(cfg: &ExperimentConfig, param: Option<SweepParam>) -> Result<Report> {
    cfg.validate()?;
    let param = param.unwrap_or(cfg.sweep_param);
    let first = *cfg
        .schemes
        .first()
        .ok_or_else(|| Error::Config("no schemes configured".into()))?;
    let base = cfg.slv(first, cfg.sweep_steps)?;
    let spec = SweepSpec {
        param,
        grid: cfg.sweep_grid.clone(),
        schemes: cfg.schemes.clone(),
        steps: cfg.sweep_steps,
        metric: cfg.error_metric,
    };
    let result = sweep(
        &spec,
        &base,
        cfg.p.unwrap_or(0.0),
        &cfg.maturities,
        &cfg.surface_strikes()?,
        &cfg.cos,
    )?;
    let mut report = Report::default();
    let mut out = report.create(cfg.out.join(format!("sweep_{param}.csv")))?;
    result.write_csv(&mut out)?;
    out.flush()?;

    let mut out = report.create(cfg.out.join(format!("sweep_{param}_mean.csv")))?;
    writeln!(out, "param,value,scheme,mean_err_pct")?;
    for (i, pt) in result.points.iter().enumerate() {
        for &scheme in &cfg.schemes {
            let m = result
                .mean_error(scheme, i)
                .map_or("band_violation".to_string(), |e| format!("{e:.4}"));
            writeln!(out, "{param},{:.4},{scheme},{m}", pt.value)?;
        }
    }
    out.flush()?;
    for pt in &result.points {
        for c in &pt.cells {
            if let Some(e) = c.outcome.err_pct() {
                if !(e >= 0.0 && e.is_finite()) {
                    report.fail(
                        "err_nonnegative",
                        format!("{} {param}={}: {e}", c.scheme, pt.value),
                    );
                }
            }
        }
    }
    Ok(report)
}
