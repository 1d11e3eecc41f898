//! Flat `key = value` session files. Blank lines and `#` comments are
//! ignored; later keys override earlier ones.

use std::path::Path;

use dhsa::protocol::SessionConfig;
use dhsa::ring::SamplerConfig;
use dhsa::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FileConfig {
    pub session: SessionConfig,
    pub seed: u64,
    pub reps: usize,
    pub collude: String,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            seed: 0,
            reps: 100,
            collude: "server".into(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidParams(format!("bad value for {key}: {value:?}")))
}

fn parse_crs(key: &str, value: &str) -> Result<[u8; 32]> {
    let bytes = hex::decode(value).map_err(|e| Error::InvalidParams(format!("{key}: {e}")))?;
    bytes
        .try_into()
        .map_err(|_| Error::InvalidParams(format!("{key} must be 32 bytes of hex")))
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidParams(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParams(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.session;
        match key {
            "setting" => s.setting = value.parse()?,
            "n_clients" => s.n_clients = parse(key, value)?,
            "model_size" => s.model_size = parse(key, value)?,
            "epochs" => s.max_epochs = parse(key, value)?,
            "tau" => s.tau = parse(key, value)?,
            "w" => s.w = parse(key, value)?,
            "log_p" => s.log_p = Some(parse(key, value)?),
            "m_min" => s.m_min = parse(key, value)?,
            "m_max" => s.m_max = parse(key, value)?,
            "leader" => s.leader = parse(key, value)?,
            "sigma" => s.sampler = SamplerConfig::with_sigma(parse(key, value)?),
            "ring_crs" => s.ring_crs = parse_crs(key, value)?,
            "shprg_crs" => s.shprg_crs = parse_crs(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "reps" => self.reps = parse(key, value)?,
            "collude" => self.collude = value.to_string(),
            other => return Err(Error::InvalidParams(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }
}
