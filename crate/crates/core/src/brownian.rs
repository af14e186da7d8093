//! Brownian increment grids with dyadic coupling.
//!
//! Path `j` of a grid built from `seed` draws from the stream `(seed, j)`, in
//! the order `(dW_0, dW~_0), (dW_1, dW~_1), ...`. A coarser grid is obtained
//! by summing adjacent increments, never by re-sampling.

use std::ops::Range;

use crate::error::{domain, Error, Result};
use crate::rng::RandomStream;

/// Default cap on stored increments (both components counted), 256 MiB of f64.
pub const DEFAULT_GRID_BUDGET: usize = 1 << 25;

#[derive(Clone, Debug, PartialEq)]
pub struct BrownianGrid {
    horizon: f64,
    steps: usize,
    first_path: usize,
    paths: usize,
    /// Row-major `paths x steps`.
    dw: Vec<f64>,
    dw_perp: Vec<f64>,
}

impl BrownianGrid {
    /// Builds `paths` independent increment sequences over `[0, horizon]`
    /// with `steps` equal steps.
    pub fn generate(seed: u64, horizon: f64, steps: usize, paths: Range<usize>) -> Result<Self> {
        Self::generate_with_budget(seed, horizon, steps, paths, DEFAULT_GRID_BUDGET)
    }

    pub fn generate_with_budget(
        seed: u64,
        horizon: f64,
        steps: usize,
        paths: Range<usize>,
        budget: usize,
    ) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(domain(format!("horizon must be > 0, got {horizon}")));
        }
        if steps == 0 || paths.is_empty() {
            return Err(domain("grid needs at least one step and one path"));
        }
        let count = paths.len();
        let entries = count
            .checked_mul(steps)
            .and_then(|n| n.checked_mul(2))
            .unwrap_or(usize::MAX);
        if entries > budget {
            return Err(Error::Resource(format!(
                "{count} paths x {steps} steps needs {entries} entries, budget is {budget}"
            )));
        }
        let sd = (horizon / steps as f64).sqrt();
        let mut dw = Vec::with_capacity(count * steps);
        let mut dw_perp = Vec::with_capacity(count * steps);
        for j in paths.clone() {
            let mut stream = RandomStream::new(seed, j as u64);
            for _ in 0..steps {
                dw.push(sd * stream.standard_normal());
                dw_perp.push(sd * stream.standard_normal());
            }
        }
        Ok(Self {
            horizon,
            steps,
            first_path: paths.start,
            paths: count,
            dw,
            dw_perp,
        })
    }

    /// Builds a grid directly from increments, for callers that already
    /// hold coupled sequences.
    pub fn from_increments(
        horizon: f64,
        steps: usize,
        first_path: usize,
        dw: Vec<f64>,
        dw_perp: Vec<f64>,
    ) -> Result<Self> {
        if steps == 0
            || !dw.len().is_multiple_of(steps)
            || dw.len() != dw_perp.len()
            || dw.is_empty()
        {
            return Err(domain("increment arrays do not form a paths x steps grid"));
        }
        Ok(Self {
            horizon,
            steps,
            first_path,
            paths: dw.len() / steps,
            dw,
            dw_perp,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    /// Global index of the first stored path.
    pub fn first_path(&self) -> usize {
        self.first_path
    }

    /// Variance-driving increments of the `local`-th stored path.
    pub fn dw(&self, local: usize) -> &[f64] {
        &self.dw[local * self.steps..(local + 1) * self.steps]
    }

    /// Independent increments of the `local`-th stored path.
    pub fn dw_perp(&self, local: usize) -> &[f64] {
        &self.dw_perp[local * self.steps..(local + 1) * self.steps]
    }

    /// Halves the step count: increment `m` of the result is the sum of
    /// increments `2m` and `2m + 1`.
    pub fn coarsen(&self) -> Result<Self> {
        if !self.steps.is_multiple_of(2) {
            return Err(domain(format!(
                "cannot coarsen a grid with an odd step count ({})",
                self.steps
            )));
        }
        Ok(Self {
            horizon: self.horizon,
            steps: self.steps / 2,
            first_path: self.first_path,
            paths: self.paths,
            dw: pair_sums(&self.dw),
            dw_perp: pair_sums(&self.dw_perp),
        })
    }
}

/// Sums adjacent pairs; rows stay aligned because every row has an even length.
pub(crate) fn pair_sums(xs: &[f64]) -> Vec<f64> {
    xs.chunks_exact(2).map(|p| p[0] + p[1]).collect()
}
