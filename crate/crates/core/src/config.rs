//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [market]
//! kappa = 1.05
//! [model]
//! p = "none"
//! [simulation]
//! schemes = ["euler", "aes", "truncated", "backward"]
//! steps = [5, 10, 25, 40]
//! ```
//!
//! Every key lives in exactly one section and is unique across sections, so
//! it can also be overridden from the command line by name. Unknown keys,
//! keys under the wrong section and repeated keys are errors.

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use crate::convergence::{ConvergenceSetup, SweepParam};
use crate::error::{Error, Result};
use crate::heston::{CosConfig, HestonParams};
use crate::local_vol::{BinSpec, DupireConfig, LeverageConfig};
use crate::slv::{derive_model_params, AssetDrift, LeverageMode, SlvConfig};
use crate::surface::log_spaced;
use crate::table::ErrorMetric;
use crate::variance::{CirParams, SchemeKind, TruncationSpec};

/// `(key, section)` for every recognised key.
const KEYS: &[(&str, &str)] = &[
    ("kappa", "market"),
    ("theta", "market"),
    ("gamma", "market"),
    ("v0", "market"),
    ("rho", "market"),
    ("r", "market"),
    ("s0", "market"),
    ("horizon", "market"),
    ("p", "model"),
    ("schemes", "simulation"),
    ("paths", "simulation"),
    ("steps", "simulation"),
    ("sim_steps", "simulation"),
    ("strikes", "simulation"),
    ("seed", "simulation"),
    ("truncation_b", "simulation"),
    ("asset_drift", "simulation"),
    ("error_metric", "simulation"),
    ("trace", "simulation"),
    ("inline_timings", "simulation"),
    ("dt_bump", "guards"),
    ("dk_bump_rel", "guards"),
    ("denom_floor", "guards"),
    ("lv_floor", "guards"),
    ("lv_cap", "guards"),
    ("eps_v", "guards"),
    ("sigma2_floor", "guards"),
    ("sigma2_cap", "guards"),
    ("n_bins", "guards"),
    ("maturities", "surface"),
    ("surface_strike_min", "surface"),
    ("surface_strike_max", "surface"),
    ("surface_strike_count", "surface"),
    ("cos_terms", "surface"),
    ("cos_width", "surface"),
    ("conv_schemes", "converge"),
    ("conv_kappa", "converge"),
    ("conv_theta", "converge"),
    ("conv_gamma", "converge"),
    ("conv_v0", "converge"),
    ("conv_horizon", "converge"),
    ("conv_levels", "converge"),
    ("conv_reference", "converge"),
    ("conv_paths", "converge"),
    ("condexp_schemes", "condexp"),
    ("condexp_tau", "condexp"),
    ("condexp_paths", "condexp"),
    ("condexp_times", "condexp"),
    ("condexp_oracle_paths", "condexp"),
    ("condexp_oracle_tau", "condexp"),
    ("sweep_param", "sweep"),
    ("sweep_grid", "sweep"),
    ("sweep_steps", "sweep"),
    ("out", "output"),
];

pub fn is_known_key(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

fn section_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, s)| *s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kappa: f64,
    pub theta: f64,
    pub gamma: f64,
    pub v0: f64,
    pub rho: f64,
    pub r: f64,
    pub s0: f64,
    pub horizon: f64,
    /// Absent: the model equals the market.
    pub p: Option<f64>,
    pub schemes: Vec<SchemeKind>,
    pub paths: usize,
    pub steps: Vec<usize>,
    pub sim_steps: usize,
    pub strikes: Vec<f64>,
    pub seed: u64,
    pub truncation_b: Option<f64>,
    pub asset_drift: AssetDrift,
    pub error_metric: ErrorMetric,
    pub trace: bool,
    pub inline_timings: bool,
    pub dupire: DupireConfig,
    pub eps_v: f64,
    pub sigma2_floor: f64,
    pub sigma2_cap: f64,
    pub n_bins: usize,
    pub maturities: Vec<f64>,
    pub surface_strike_min: f64,
    pub surface_strike_max: f64,
    pub surface_strike_count: usize,
    pub cos: CosConfig,
    pub conv_schemes: Vec<SchemeKind>,
    pub conv_kappa: f64,
    pub conv_theta: f64,
    pub conv_gamma: f64,
    pub conv_v0: f64,
    pub conv_horizon: f64,
    pub conv_levels: Vec<usize>,
    pub conv_reference: usize,
    pub conv_paths: usize,
    pub condexp_schemes: Vec<SchemeKind>,
    pub condexp_tau: f64,
    pub condexp_paths: usize,
    pub condexp_times: Vec<f64>,
    pub condexp_oracle_paths: usize,
    pub condexp_oracle_tau: f64,
    pub sweep_param: SweepParam,
    pub sweep_grid: Vec<f64>,
    pub sweep_steps: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let lev = LeverageConfig::default();
        Self {
            kappa: 1.05,
            theta: 0.0855,
            gamma: 0.95,
            v0: 0.0945,
            rho: -0.315,
            r: 0.0,
            s0: 1.0,
            horizon: 5.0,
            p: Some(0.25),
            schemes: SchemeKind::ALL.to_vec(),
            paths: 10_000,
            steps: vec![5, 10, 25, 40],
            sim_steps: 40,
            strikes: vec![0.7, 1.0, 1.5],
            seed: 1,
            truncation_b: None,
            asset_drift: AssetDrift::SchemeImplied,
            error_metric: ErrorMetric::ImpliedVol,
            trace: false,
            inline_timings: false,
            dupire: lev.dupire,
            eps_v: lev.eps_v,
            sigma2_floor: lev.sigma2_floor,
            sigma2_cap: lev.sigma2_cap,
            n_bins: lev.bins.n_bins,
            maturities: vec![0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
            surface_strike_min: 0.3,
            surface_strike_max: 3.0,
            surface_strike_count: 60,
            cos: CosConfig::default(),
            conv_schemes: vec![SchemeKind::TruncatedLamperti, SchemeKind::BackwardLamperti],
            conv_kappa: 2.0,
            conv_theta: 0.09,
            conv_gamma: 0.3,
            conv_v0: 0.09,
            conv_horizon: 1.0,
            conv_levels: vec![8, 16, 32, 64, 128, 256, 512],
            conv_reference: 4096,
            conv_paths: 10_000,
            condexp_schemes: vec![SchemeKind::TruncatedLamperti, SchemeKind::BackwardLamperti],
            condexp_tau: 0.001,
            condexp_paths: 10_000,
            condexp_times: vec![0.5, 1.0, 2.0],
            condexp_oracle_paths: 200_000,
            condexp_oracle_tau: 0.01,
            sweep_param: SweepParam::P,
            sweep_grid: vec![0.1, 0.25, 0.4],
            sweep_steps: 25,
            out: PathBuf::from("out"),
        }
    }
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse '{value}': {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    let items: Vec<T> = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_one(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    Ok(items)
}

/// Renders a TOML value in the command-line override syntax accepted by
/// [`ExperimentConfig::set`]; arrays become comma-separated lists.
fn scalar_text(key: &str, value: &toml::Value) -> Result<String> {
    use toml::Value;
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(x) => Ok(format!("{x:?}")),
        Value::Boolean(b) => Ok(b.to_string()),
        Value::Array(items) => Ok(items
            .iter()
            .map(|v| match v {
                Value::Array(_) | Value::Table(_) => Err(Error::Config(format!(
                    "{key}: nested values are not allowed"
                ))),
                v => scalar_text(key, v),
            })
            .collect::<Result<Vec<_>>>()?
            .join(",")),
        other => Err(Error::Config(format!("{key}: unsupported value {other}"))),
    }
}

fn parse_optional(key: &str, value: &str) -> Result<Option<f64>> {
    match value.trim() {
        "" | "none" => Ok(None),
        v => parse_one(key, v).map(Some),
    }
}

impl ExperimentConfig {
    /// Assigns one key. Shared by the file parser and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "kappa" => self.kappa = parse_one(key, v)?,
            "theta" => self.theta = parse_one(key, v)?,
            "gamma" => self.gamma = parse_one(key, v)?,
            "v0" => self.v0 = parse_one(key, v)?,
            "rho" => self.rho = parse_one(key, v)?,
            "r" => self.r = parse_one(key, v)?,
            "s0" => self.s0 = parse_one(key, v)?,
            "horizon" => self.horizon = parse_one(key, v)?,
            "p" => self.p = parse_optional(key, v)?,
            "schemes" => self.schemes = parse_list(key, v)?,
            "paths" => self.paths = parse_one(key, v)?,
            "steps" => self.steps = parse_list(key, v)?,
            "sim_steps" => self.sim_steps = parse_one(key, v)?,
            "strikes" => self.strikes = parse_list(key, v)?,
            "seed" => self.seed = parse_one(key, v)?,
            "truncation_b" => self.truncation_b = parse_optional(key, v)?,
            "asset_drift" => self.asset_drift = parse_one(key, v)?,
            "error_metric" => self.error_metric = parse_one(key, v)?,
            "trace" => self.trace = parse_one(key, v)?,
            "inline_timings" => self.inline_timings = parse_one(key, v)?,
            "dt_bump" => self.dupire.dt_bump = parse_one(key, v)?,
            "dk_bump_rel" => self.dupire.dk_bump_rel = parse_one(key, v)?,
            "denom_floor" => self.dupire.denom_floor = parse_one(key, v)?,
            "lv_floor" => self.dupire.lv_floor = parse_one(key, v)?,
            "lv_cap" => self.dupire.lv_cap = parse_one(key, v)?,
            "eps_v" => self.eps_v = parse_one(key, v)?,
            "sigma2_floor" => self.sigma2_floor = parse_one(key, v)?,
            "sigma2_cap" => self.sigma2_cap = parse_one(key, v)?,
            "n_bins" => self.n_bins = parse_one(key, v)?,
            "maturities" => self.maturities = parse_list(key, v)?,
            "surface_strike_min" => self.surface_strike_min = parse_one(key, v)?,
            "surface_strike_max" => self.surface_strike_max = parse_one(key, v)?,
            "surface_strike_count" => self.surface_strike_count = parse_one(key, v)?,
            "cos_terms" => self.cos.n_terms = parse_one(key, v)?,
            "cos_width" => self.cos.domain_width = parse_one(key, v)?,
            "conv_schemes" => self.conv_schemes = parse_list(key, v)?,
            "conv_kappa" => self.conv_kappa = parse_one(key, v)?,
            "conv_theta" => self.conv_theta = parse_one(key, v)?,
            "conv_gamma" => self.conv_gamma = parse_one(key, v)?,
            "conv_v0" => self.conv_v0 = parse_one(key, v)?,
            "conv_horizon" => self.conv_horizon = parse_one(key, v)?,
            "conv_levels" => self.conv_levels = parse_list(key, v)?,
            "conv_reference" => self.conv_reference = parse_one(key, v)?,
            "conv_paths" => self.conv_paths = parse_one(key, v)?,
            "condexp_schemes" => self.condexp_schemes = parse_list(key, v)?,
            "condexp_tau" => self.condexp_tau = parse_one(key, v)?,
            "condexp_paths" => self.condexp_paths = parse_one(key, v)?,
            "condexp_times" => self.condexp_times = parse_list(key, v)?,
            "condexp_oracle_paths" => self.condexp_oracle_paths = parse_one(key, v)?,
            "condexp_oracle_tau" => self.condexp_oracle_tau = parse_one(key, v)?,
            "sweep_param" => self.sweep_param = parse_one(key, v)?,
            "sweep_grid" => self.sweep_grid = parse_list(key, v)?,
            "sweep_steps" => self.sweep_steps = parse_one(key, v)?,
            "out" => self.out = PathBuf::from(v.trim()),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses a TOML configuration on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
            line: e
                .span()
                .map_or(0, |s| text[..s.start].lines().count().max(1)),
            msg: e.message().to_string(),
        })?;
        let mut cfg = Self::default();
        for (section, body) in &table {
            let toml::Value::Table(body) = body else {
                return Err(Error::Config(format!(
                    "top-level key '{section}' must sit inside a [section]"
                )));
            };
            for (key, value) in body {
                let home = section_of(key)
                    .ok_or_else(|| Error::Config(format!("[{section}] unknown key '{key}'")))?;
                if home != section {
                    return Err(Error::Config(format!(
                        "key '{key}' belongs in [{home}], found in [{section}]"
                    )));
                }
                cfg.set(key, &scalar_text(key, value)?)
                    .map_err(|e| Error::Config(format!("[{section}] {e}")))?;
            }
        }
        Ok(cfg)
    }

    pub fn market(&self) -> Result<HestonParams> {
        HestonParams::new(
            CirParams::new(self.kappa, self.theta, self.gamma, self.v0)?,
            self.rho,
            self.r,
            self.s0,
        )
    }

    pub fn surface_strikes(&self) -> Result<Vec<f64>> {
        if !(self.surface_strike_min > 0.0 && self.surface_strike_max > self.surface_strike_min) {
            return Err(Error::Config(
                "surface strike range must satisfy 0 < min < max".into(),
            ));
        }
        if self.surface_strike_count < 4 {
            return Err(Error::Config("need at least 4 surface strikes".into()));
        }
        Ok(log_spaced(
            self.surface_strike_min * self.s0,
            self.surface_strike_max * self.s0,
            self.surface_strike_count,
        ))
    }

    pub fn leverage(&self) -> LeverageConfig {
        LeverageConfig {
            dupire: self.dupire,
            bins: BinSpec {
                n_bins: self.n_bins,
            },
            eps_v: self.eps_v,
            sigma2_floor: self.sigma2_floor,
            sigma2_cap: self.sigma2_cap,
        }
    }

    /// SLV configuration for `scheme` with `steps` steps.
    pub fn slv(&self, scheme: SchemeKind, steps: usize) -> Result<SlvConfig> {
        let market = self.market()?;
        let model = match self.p {
            Some(p) => derive_model_params(&market, p)?,
            None => market,
        };
        let cfg = SlvConfig {
            market,
            model,
            p: self.p,
            scheme,
            paths: self.paths,
            steps,
            horizon: self.horizon,
            strikes: self.strikes.clone(),
            seed: self.seed,
            leverage: self.leverage(),
            truncation_b: self.truncation_b,
            leverage_mode: LeverageMode::Calibrated,
            asset_drift: self.asset_drift,
            trace: self.trace,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn convergence(&self, scheme: SchemeKind) -> Result<ConvergenceSetup> {
        let params = CirParams::new(
            self.conv_kappa,
            self.conv_theta,
            self.conv_gamma,
            self.conv_v0,
        )?;
        let trunc = match self.truncation_b {
            Some(b) => TruncationSpec::new(b, &params)?,
            None => TruncationSpec::for_params(&params),
        };
        let setup = ConvergenceSetup {
            scheme,
            params,
            trunc,
            horizon: self.conv_horizon,
            levels: self.conv_levels.clone(),
            reference_level: self.conv_reference,
            paths: self.conv_paths,
            seed: self.seed,
        };
        setup.validate()?;
        Ok(setup)
    }

    /// Checks everything that does not depend on the subcommand.
    pub fn validate(&self) -> Result<()> {
        self.market()?;
        self.cos.validate()?;
        self.leverage().validate()?;
        self.surface_strikes()?;
        if self.maturities.is_empty() || self.maturities.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("maturities must be increasing".into()));
        }
        if self.maturities[0] <= 0.0 {
            return Err(Error::Config("maturities must be > 0".into()));
        }
        if self.steps.contains(&0) || self.sim_steps == 0 || self.sweep_steps == 0 {
            return Err(Error::Config("step counts must be > 0".into()));
        }
        Ok(())
    }
}
