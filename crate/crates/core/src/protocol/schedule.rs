use serde::{Deserialize, Serialize};

/// Seed-agreement rounds per MSA run.
pub const MSA_ROUNDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanStep {
    /// Agree on seed sums for epochs `first_epoch .. first_epoch + tau`.
    Msa { run: u32, first_epoch: u32 },
    Hma { run: u32, epoch: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPlan {
    pub epochs: usize,
    pub tau: usize,
    pub steps: Vec<PlanStep>,
}

impl RunPlan {
    pub fn msa_runs(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, PlanStep::Msa { .. }))
            .count()
    }

    pub fn total_rounds(&self) -> usize {
        self.steps
            .iter()
            .map(|s| match s {
                PlanStep::Msa { .. } => MSA_ROUNDS,
                PlanStep::Hma { .. } => 1,
            })
            .sum()
    }
}

/// An MSA run precedes epochs 1, tau+1, 2tau+1, ...; epochs are 1-based.
pub fn schedule(tau: usize, epochs: usize) -> RunPlan {
    let tau = tau.max(1);
    let mut steps = Vec::with_capacity(epochs + epochs.div_ceil(tau));
    for e in 0..epochs {
        let run = (e / tau) as u32;
        if e % tau == 0 {
            steps.push(PlanStep::Msa {
                run,
                first_epoch: e as u32 + 1,
            });
        }
        steps.push(PlanStep::Hma {
            run,
            epoch: e as u32 + 1,
        });
    }
    RunPlan { epochs, tau, steps }
}
