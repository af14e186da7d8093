//! Counter-based random streams.
//!
//! Each Monte Carlo path owns one stream keyed by `(seed, stream_id)`. The
//! underlying generator is ChaCha8 with the stream id mapped onto the ChaCha
//! stream word, so a path's sequence never depends on how many other paths
//! exist or on the order in which workers consume them.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use std::f64::consts::PI;

use crate::error::{domain, Result};

/// 32-bit words consumed by one call to [`RandomStream::standard_normal`].
pub const WORDS_PER_NORMAL: u128 = 4;

#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Consumption position in 32-bit words.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn seek(&mut self, counter: u128) {
        self.rng.set_word_pos(counter);
    }

    /// Uniform on (0, 1], 53 bits.
    #[inline]
    fn open_unit(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// One N(0, 1) variate by Box–Muller (cosine branch only), so every call
    /// advances the counter by exactly [`WORDS_PER_NORMAL`].
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.open_unit();
        let u2 = self.open_unit();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    /// One noncentral chi-square variate with `dof` degrees of freedom and
    /// noncentrality `noncentrality`. Non-integer `dof` is supported.
    pub fn noncentral_chisq(&mut self, dof: f64, noncentrality: f64) -> Result<f64> {
        if !(dof > 0.0) || !dof.is_finite() {
            return Err(domain(format!("chi-square dof must be > 0, got {dof}")));
        }
        if !(noncentrality >= 0.0) || !noncentrality.is_finite() {
            return Err(domain(format!(
                "chi-square noncentrality must be >= 0, got {noncentrality}"
            )));
        }
        if dof > 1.0 {
            // chi2'(d, l) = chi2(d - 1) + (Z + sqrt(l))^2
            let z = self.standard_normal() + noncentrality.sqrt();
            Ok(self.central_chisq(dof - 1.0) + z * z)
        } else {
            // Poisson mixture of central chi-squares.
            let extra = if noncentrality > 0.0 {
                let poisson = Poisson::new(0.5 * noncentrality)
                    .map_err(|e| domain(format!("poisson mean: {e}")))?;
                poisson.sample(self)
            } else {
                0.0
            };
            Ok(self.central_chisq(dof + 2.0 * extra))
        }
    }

    fn central_chisq(&mut self, dof: f64) -> f64 {
        // dof > 0 is guaranteed by the callers.
        let gamma = Gamma::new(0.5 * dof, 2.0).expect("positive chi-square dof");
        gamma.sample(self)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
