use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::rlcore::{Estimator, NStep, Normalization, RolloutReuse};

/// Piecewise-constant chunk size over RL epochs: entry `(n, end)` is active for epochs before
/// `end` and at or after the previous entry's end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NSchedule {
    pub entries: Vec<(NStep, usize)>,
}

impl NSchedule {
    pub fn constant(n: NStep, epochs: usize) -> Self {
        NSchedule {
            entries: vec![(n, epochs)],
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.entries.last().map_or(0, |e| e.1)
    }

    /// Chunk size for a (0-based) epoch. `n` at or above the longest possible trajectory means
    /// the sequence-level case.
    pub fn active(&self, epoch: usize, max_len: usize) -> NStep {
        let n = self
            .entries
            .iter()
            .find(|(_, end)| epoch < *end)
            .or(self.entries.last())
            .map_or(NStep::Full, |e| e.0);
        match n {
            NStep::Fixed(k) if k >= max_len => NStep::Full,
            other => other,
        }
    }
}

impl fmt::Display for NSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .entries
            .iter()
            .map(|(n, e)| format!("{n}:{e}"))
            .collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for NSchedule {
    type Err = Error;

    /// `n:end` pairs separated by commas, e.g. `1:5,2:10,2:15`; `n` may be `T`.
    fn from_str(s: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut last_end = 0;
        for tok in s.split(',') {
            let bad = || Error::Usage(format!("invalid n-schedule entry `{}`", tok.trim()));
            let (n, end) = tok.split_once(':').ok_or_else(bad)?;
            let n: NStep = n.parse().map_err(|_| bad())?;
            let end: usize = end.trim().parse().map_err(|_| bad())?;
            if end <= last_end {
                return Err(Error::Usage(format!(
                    "n-schedule entry `{}` must end after epoch {last_end}",
                    tok.trim()
                )));
            }
            last_end = end;
            entries.push((n, end));
        }
        Ok(NSchedule { entries })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Usage(format!(
                "unknown preset `{other}` (desk or paper)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub init_scale: f64,
    pub dropout: f64,

    pub xent_lr: f64,
    pub xent_batch: usize,
    pub xent_epochs: usize,

    pub rl_lr: f64,
    pub rl_batch: usize,
    pub estimator: Estimator,
    pub n_schedule: NSchedule,
    pub rollout_reuse: RolloutReuse,
    pub normalization: Normalization,
    /// Stop RL after this many updates even if the schedule has epochs left; 0 means no cap.
    pub rl_max_steps: usize,

    /// RL steps between validation passes (XENT evaluates once per epoch).
    pub rl_eval_every: usize,
    /// Cap on validation examples per evaluation; 0 means the whole split.
    pub val_limit: usize,
    /// Batch items per gradient tape.
    pub grad_chunk: usize,
    pub exec: Exec,
}

impl TrainConfig {
    /// Hyperparameters from the original large-scale setup.
    pub fn paper() -> Self {
        TrainConfig {
            seed: 0,
            embed_dim: 512,
            hidden_dim: 512,
            init_scale: 0.1,
            dropout: 0.5,
            xent_lr: 4e-4,
            xent_batch: 80,
            xent_epochs: 30,
            rl_lr: 5e-5,
            rl_batch: 32,
            estimator: Estimator::MaxPro,
            n_schedule: NSchedule::constant(NStep::Fixed(1), 30),
            rollout_reuse: RolloutReuse::Shared,
            normalization: Normalization::PerToken,
            rl_max_steps: 0,
            rl_eval_every: 500,
            val_limit: 0,
            grad_chunk: 8,
            exec: Exec::Parallel,
        }
    }

    /// Small dimensions and budgets for a single CPU. Learning rates are raised to compensate
    /// for the far smaller number of updates.
    pub fn desk() -> Self {
        TrainConfig {
            seed: 0,
            embed_dim: 32,
            hidden_dim: 64,
            init_scale: 0.1,
            dropout: 0.2,
            xent_lr: 3e-3,
            xent_batch: 40,
            xent_epochs: 20,
            rl_lr: 5e-4,
            rl_batch: 32,
            estimator: Estimator::MaxPro,
            n_schedule: NSchedule::constant(NStep::Fixed(1), 8),
            rollout_reuse: RolloutReuse::Shared,
            normalization: Normalization::PerToken,
            rl_max_steps: 0,
            rl_eval_every: 50,
            val_limit: 0,
            grad_chunk: 8,
            exec: Exec::Parallel,
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("xent_lr", self.xent_lr), ("rl_lr", self.rl_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        for (name, v) in [
            ("xent_batch", self.xent_batch),
            ("rl_batch", self.rl_batch),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("grad_chunk", self.grad_chunk),
            ("rl_eval_every", self.rl_eval_every),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.n_schedule.entries.is_empty() {
            return Err(Error::Config("n-schedule is empty".into()));
        }
        if let Estimator::KRollout(0) = self.estimator {
            return Err(Error::Config("K must be at least 1".into()));
        }
        Ok(())
    }

    /// Short stable digest of every setting (execution mode excluded: it never changes results).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.exec = Exec::Parallel;
        config_hash(&serde_json::to_string(&c).expect("config serialises"))
    }
}

/// First 16 hex digits of SHA-256.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_grammar() {
        let s: NSchedule = "1:5,2:10,2:15".parse().unwrap();
        assert_eq!(s.total_epochs(), 15);
        assert_eq!(s.active(0, 16), NStep::Fixed(1));
        assert_eq!(s.active(5, 16), NStep::Fixed(2));
        assert_eq!(s.active(14, 16), NStep::Fixed(2));
        assert_eq!(s.to_string(), "1:5,2:10,2:15");
        let t: NSchedule = "16:30".parse().unwrap();
        assert_eq!(t.active(3, 16), NStep::Full);
        assert_eq!(
            "T:4".parse::<NSchedule>().unwrap().active(0, 16),
            NStep::Full
        );
        for bad in ["1:5,x:10", "1-5", "2:5,1:5", "0:3", ""] {
            let err = bad.parse::<NSchedule>().unwrap_err().to_string();
            assert!(err.contains("n-schedule"), "{bad}: {err}");
        }
        let err = "1:5,x:10".parse::<NSchedule>().unwrap_err().to_string();
        assert!(err.contains("x:10"));
    }

    #[test]
    fn presets_validate_and_hash_stably() {
        TrainConfig::desk().validate().unwrap();
        TrainConfig::paper().validate().unwrap();
        assert_eq!(TrainConfig::desk().hash(), TrainConfig::desk().hash());
        assert_ne!(TrainConfig::desk().hash(), TrainConfig::paper().hash());
        let mut seq = TrainConfig::desk();
        seq.exec = Exec::Sequential;
        assert_eq!(seq.hash(), TrainConfig::desk().hash());
        let mut bad = TrainConfig::desk();
        bad.rl_lr = 0.0;
        assert!(bad.validate().is_err());
    }
}
