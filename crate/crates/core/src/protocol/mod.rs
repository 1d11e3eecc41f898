//! Party state machines for seed agreement (MSA) and masked aggregation
//! (HMA), the message schema they exchange, and the epoch schedule.

mod client;
mod message;
mod schedule;
mod server;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bfv::Bfv;
use crate::codec::{self, QuantParams};
use crate::error::{Error, Result};
use crate::ring::{sample_uniform, RingElement, RingParams, SamplerConfig};
use crate::shprg::{Setting, Shprg, ShprgParams};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub use client::{ClientPhase, ClientState, ClientView, EpochOutput, ViewEntry};
pub use message::{Destination, Envelope, Message, MessageKind, Outgoing, Payload, PartyRef};
pub use schedule::{schedule, PlanStep, RunPlan};
pub use server::{ServerPhase, ServerState};

/// Public session parameters shared by every party.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub n_clients: usize,
    pub model_size: usize,
    pub w: u32,
    pub m_min: f64,
    pub m_max: f64,
    pub setting: Setting,
    /// Overrides the setting's rounding modulus when present.
    pub log_p: Option<u32>,
    /// Seed pairs provisioned per MSA run.
    pub tau: usize,
    pub max_epochs: usize,
    pub ring_crs: [u8; 32],
    pub shprg_crs: [u8; 32],
    pub leader: u32,
    pub sampler: SamplerConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            n_clients: 10,
            model_size: 10_000,
            w: 16,
            m_min: -1.0,
            m_max: 1.0,
            setting: Setting::A,
            log_p: None,
            tau: 100,
            max_epochs: 10,
            ring_crs: *b"dhsa/ring-crs/default...........",
            shprg_crs: *b"dhsa/shprg-crs/default..........",
            leader: 0,
            sampler: SamplerConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn shprg_params(&self) -> Result<ShprgParams> {
        let base = ShprgParams::preset(self.setting, self.shprg_crs);
        match self.log_p {
            Some(lp) => base.with_log_p(lp),
            None => Ok(base),
        }
    }

    pub fn quant_params(&self) -> Result<QuantParams> {
        Ok(QuantParams {
            w: self.w,
            m_min: self.m_min,
            m_max: self.m_max,
            n_parties: self.n_clients,
            log_p: self.shprg_params()?.log_p,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::InvalidParams("need at least one client".into()));
        }
        if self.model_size == 0 {
            return Err(Error::InvalidParams("model size must be positive".into()));
        }
        if self.tau == 0 {
            return Err(Error::InvalidParams("tau must be positive".into()));
        }
        if self.leader as usize >= self.n_clients {
            return Err(Error::InvalidParams(format!(
                "leader {} is not one of {} clients",
                self.leader, self.n_clients
            )));
        }
        let shprg = self.shprg_params()?;
        shprg.validate()?;
        self.quant_params()?.validate()?;
        codec::check_seed_modulus(&shprg, RingParams::default_params().plaintext_modulus())?;
        self.sampler.validate()
    }

    /// `ceil(mu * tau / n)`: ciphertexts each client uploads per MSA run.
    pub fn ciphertexts_per_run(&self) -> Result<usize> {
        Ok((self.shprg_params()?.mu * self.tau).div_ceil(crate::ring::DEFAULT_DEGREE))
    }
}

/// Public material derived once from a [`SessionConfig`].
#[derive(Debug)]
pub struct SessionContext {
    pub config: SessionConfig,
    pub bfv: Bfv,
    pub crs_a: RingElement,
    pub shprg: Shprg,
    pub quant: QuantParams,
}

/// Models up to this many columns share one materialized copy of `A`.
pub const MATRIX_CACHE_COLUMNS: usize = 16_384;

impl SessionContext {
    pub fn new(config: SessionConfig) -> Result<Arc<Self>> {
        Self::with_matrix_cache(config, MATRIX_CACHE_COLUMNS)
    }

    pub fn with_matrix_cache(config: SessionConfig, cache_columns: usize) -> Result<Arc<Self>> {
        config.validate()?;
        let bfv = Bfv::new(RingParams::default_params(), config.sampler)?;
        let crs_a = sample_uniform(bfv.params(), &mut ChaCha20Rng::from_seed(config.ring_crs));
        let mut shprg = Shprg::new(config.shprg_params()?)?;
        if config.model_size <= cache_columns {
            shprg = shprg.with_cached_prefix(config.model_size);
        }
        let quant = config.quant_params()?;
        Ok(Arc::new(Self {
            config,
            bfv,
            crs_a,
            shprg,
            quant,
        }))
    }

    pub fn shprg_params(&self) -> &ShprgParams {
        self.shprg.params()
    }

    pub fn n_clients(&self) -> usize {
        self.config.n_clients
    }

    pub fn client_ids(&self) -> Vec<u32> {
        (0..self.config.n_clients as u32).collect()
    }
}
