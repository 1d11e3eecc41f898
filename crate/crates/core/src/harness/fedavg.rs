use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{run_session, SessionOptions, UpdateSource};
use crate::error::{Error, Result};
use crate::protocol::SessionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FedAvgMode {
    Plain,
    Dhsa,
}

/// Logistic regression on two Gaussian blobs sharded across the clients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainerConfig {
    pub dim: usize,
    pub samples_per_client: usize,
    pub test_samples: usize,
    /// Distance between the two class means.
    pub separation: f64,
    pub local_steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            dim: 20,
            samples_per_client: 200,
            test_samples: 2000,
            separation: 4.0,
            local_steps: 5,
            learning_rate: 0.5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyCurve {
    pub mode: FedAvgMode,
    /// Held-out accuracy after each epoch.
    pub accuracy: Vec<f64>,
}

impl AccuracyCurve {
    pub fn final_accuracy(&self) -> f64 {
        self.accuracy.last().copied().unwrap_or(0.0)
    }
}

struct Dataset {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

fn blobs(rng: &mut ChaCha20Rng, center: &[f64], count: usize) -> Dataset {
    let mut x = Vec::with_capacity(count);
    let mut y = Vec::with_capacity(count);
    for _ in 0..count {
        let label = rng.gen_bool(0.5);
        let sign = if label { 1.0 } else { -1.0 };
        x.push(
            center
                .iter()
                .map(|&c| sign * c + {
                    let z: f64 = StandardNormal.sample(rng);
                    z
                })
                .collect::<Vec<f64>>(),
        );
        y.push(label as u8 as f64);
    }
    Dataset { x, y }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Weights followed by the bias.
fn predict(model: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    sigmoid(model[..d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + model[d])
}

struct Trainer {
    cfg: TrainerConfig,
    shards: Vec<Dataset>,
    test: Dataset,
    model: Vec<f64>,
    n_clients: usize,
    accuracy: Vec<f64>,
}

impl Trainer {
    fn new(cfg: &TrainerConfig, n_clients: usize) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let dir: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let center: Vec<f64> = dir.iter().map(|v| v / norm * cfg.separation / 2.0).collect();
        let shards = (0..n_clients)
            .map(|_| blobs(&mut rng, &center, cfg.samples_per_client))
            .collect();
        let test = blobs(&mut rng, &center, cfg.test_samples);
        Self {
            cfg: cfg.clone(),
            shards,
            test,
            model: vec![0.0; cfg.dim + 1],
            n_clients,
            accuracy: Vec::new(),
        }
    }

    fn local_update(&self, shard: &Dataset) -> Vec<f64> {
        let d = self.cfg.dim;
        let mut w = self.model.clone();
        let scale = self.cfg.learning_rate / shard.x.len() as f64;
        for _ in 0..self.cfg.local_steps {
            let mut grad = vec![0.0; d + 1];
            for (x, &y) in shard.x.iter().zip(&shard.y) {
                let err = predict(&w, x) - y;
                for (g, v) in grad.iter_mut().zip(x) {
                    *g += err * v;
                }
                grad[d] += err;
            }
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= scale * g;
            }
        }
        w.iter().zip(&self.model).map(|(a, b)| a - b).collect()
    }

    fn test_accuracy(&self) -> f64 {
        let correct = self
            .test
            .x
            .iter()
            .zip(&self.test.y)
            .filter(|(x, &y)| (predict(&self.model, x) >= 0.5) == (y == 1.0))
            .count();
        correct as f64 / self.test.x.len() as f64
    }
}

impl UpdateSource for Trainer {
    fn updates(&mut self, _epoch: u32, _n: usize, _m: usize) -> Vec<Vec<f64>> {
        self.shards.iter().map(|s| self.local_update(s)).collect()
    }

    fn aggregate(&mut self, _epoch: u32, sum: &[f64]) {
        for (w, s) in self.model.iter_mut().zip(sum) {
            *w += s / self.n_clients as f64;
        }
        let acc = self.test_accuracy();
        self.accuracy.push(acc);
    }
}

/// FedAvg for `session.max_epochs` epochs. In `Dhsa` mode every aggregate
/// goes through masked aggregation with agreed seeds; `session.model_size`
/// is set to `dim + 1`.
pub fn toy_fedavg(
    session: &SessionConfig,
    trainer: &TrainerConfig,
    mode: FedAvgMode,
    master_seed: u64,
) -> Result<AccuracyCurve> {
    if trainer.dim == 0 || trainer.samples_per_client == 0 || trainer.test_samples == 0 {
        return Err(Error::InvalidParams("empty training task".into()));
    }
    let mut config = session.clone();
    config.model_size = trainer.dim + 1;
    let mut t = Trainer::new(trainer, config.n_clients);
    match mode {
        FedAvgMode::Plain => {
            for epoch in 1..=config.max_epochs as u32 {
                let updates = t.updates(epoch, config.n_clients, config.model_size);
                let mut sum = vec![0.0; config.model_size];
                for u in &updates {
                    for (s, v) in sum.iter_mut().zip(u) {
                        *s += v;
                    }
                }
                t.aggregate(epoch, &sum);
            }
        }
        FedAvgMode::Dhsa => {
            let opts = SessionOptions {
                master_seed,
                ..Default::default()
            };
            run_session(config, &mut t, &opts)?;
        }
    }
    Ok(AccuracyCurve {
        mode,
        accuracy: t.accuracy,
    })
}
