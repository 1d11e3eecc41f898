use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Domain, RingElement, RingParams};
use crate::error::{Error, Result};
use std::sync::Arc;

/// Error and key distribution settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub gaussian_sigma: f64,
    /// Largest absolute value the error sampler emits.
    pub tail_bound: u32,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::with_sigma(3.2)
    }
}

impl SamplerConfig {
    /// Tail bound set to `ceil(6 * sigma)`.
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            gaussian_sigma: sigma,
            tail_bound: (6.0 * sigma).ceil() as u32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "gaussian sigma must be positive, got {}",
                self.gaussian_sigma
            )));
        }
        if (self.tail_bound as f64) < 6.0 * self.gaussian_sigma {
            return Err(Error::InvalidParams(format!(
                "tail bound {} below 6 sigma",
                self.tail_bound
            )));
        }
        Ok(())
    }
}

/// Cumulative-distribution-table sampler for the centered discrete Gaussian
/// truncated to `[-tail_bound, tail_bound]`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    config: SamplerConfig,
    // cdt[i] = floor(2^64 * P(X <= i - bound)), last entry saturated
    cdt: Vec<u64>,
}

impl GaussianSampler {
    pub fn new(config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let bound = config.tail_bound as i64;
        let two_var = 2.0 * config.gaussian_sigma * config.gaussian_sigma;
        let weights: Vec<f64> = (-bound..=bound)
            .map(|x| (-((x * x) as f64) / two_var).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let mut cdt: Vec<u64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                (acc * 18446744073709551616.0).min(u64::MAX as f64) as u64
            })
            .collect();
        *cdt.last_mut().unwrap() = u64::MAX;
        Ok(Self { config, cdt })
    }

    pub fn config(&self) -> SamplerConfig {
        self.config
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        self.lookup(rng.gen())
    }

    fn lookup(&self, r: u64) -> i64 {
        let idx = self.cdt.partition_point(|&c| c < r);
        idx as i64 - self.config.tail_bound as i64
    }

    /// `count` samples drawn from one bulk read of the generator.
    pub fn sample_many<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<i64> {
        let mut raw = vec![0u64; count];
        rng.fill(&mut raw[..]);
        raw.into_iter().map(|r| self.lookup(r)).collect()
    }
}

impl Default for GaussianSampler {
    fn default() -> Self {
        Self::new(SamplerConfig::default()).expect("default sampler config is valid")
    }
}

/// Coefficients i.i.d. uniform in `[0, q)`.
pub fn sample_uniform<R: Rng + ?Sized>(params: &Arc<RingParams>, rng: &mut R) -> RingElement {
    let q = params.modulus();
    let coeffs: Vec<u128> = (0..params.degree()).map(|_| rng.gen_range(0..q)).collect();
    RingElement::from_u128(params, &coeffs)
}

/// Coefficients i.i.d. uniform in `{-1, 0, 1}`.
pub fn sample_ternary<R: Rng + ?Sized>(params: &Arc<RingParams>, rng: &mut R) -> RingElement {
    // a byte below 3^5 = 243 yields five uniform trits
    let n = params.degree();
    let mut coeffs: Vec<i64> = Vec::with_capacity(n + 4);
    let mut buf = [0u8; 256];
    while coeffs.len() < n {
        rng.fill_bytes(&mut buf);
        for &b in buf.iter().filter(|&&b| b < 243) {
            let mut v = b;
            for _ in 0..5 {
                coeffs.push((v % 3) as i64 - 1);
                v /= 3;
            }
            if coeffs.len() >= n {
                break;
            }
        }
    }
    coeffs.truncate(n);
    RingElement::from_signed(params, &coeffs)
}

pub fn sample_gaussian<R: Rng + ?Sized>(
    params: &Arc<RingParams>,
    sampler: &GaussianSampler,
    rng: &mut R,
) -> RingElement {
    let coeffs = sampler.sample_many(params.degree(), rng);
    let e = RingElement::from_signed(params, &coeffs);
    debug_assert_eq!(e.domain(), Domain::Coefficient);
    e
}
