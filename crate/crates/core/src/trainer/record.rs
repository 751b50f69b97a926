use serde::{Deserialize, Serialize};

use crate::rlcore::{Estimator, NStep};
use crate::table::{fmt_f64, CsvTable};

pub const RUN_COLUMNS: [&str; 8] = [
    "step",
    "phase",
    "n",
    "estimator",
    "loss",
    "val_cider",
    "val_bleu4",
    "wallclock_s",
];

pub const STEP_COLUMNS: [&str; 8] = [
    "step",
    "phase",
    "n",
    "estimator",
    "rollouts",
    "reference_tokens",
    "loss",
    "mean_reward",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Xent,
    Rl,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Xent => "xent",
            Phase::Rl => "rl",
        }
    }
}

/// One evaluation point. `loss` is the mean training loss since the previous point (NaN before
/// any update).
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub step: usize,
    pub phase: Phase,
    pub n: Option<NStep>,
    pub estimator: Option<Estimator>,
    pub loss: f64,
    pub val_cider: f64,
    pub val_bleu4: f64,
    pub wallclock_s: f64,
}

/// What a single update did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub phase: Phase,
    pub n: Option<NStep>,
    pub estimator: Option<Estimator>,
    /// Policy rollouts spent on value estimates (excluding the sampled trajectories).
    pub rollouts: usize,
    /// Whether the update used reference captions as decoder inputs.
    pub reference_tokens: bool,
    pub loss: f64,
    /// Mean sampled-sequence reward (RL only; NaN for XENT).
    pub mean_reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
    pub steps: Vec<StepLog>,
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

impl RunRecord {
    pub fn extend(&mut self, other: RunRecord) {
        self.rows.extend(other.rows);
        self.steps.extend(other.steps);
    }

    pub fn last_row(&self, phase: Phase) -> Option<&RunRow> {
        self.rows.iter().rev().find(|r| r.phase == phase)
    }

    pub fn table(&self, config_hash: &str) -> CsvTable {
        let mut t = CsvTable::new(config_hash, &RUN_COLUMNS);
        for r in &self.rows {
            t.push(vec![
                r.step.to_string(),
                r.phase.name().into(),
                opt(&r.n),
                opt(&r.estimator),
                fmt_f64(r.loss),
                fmt_f64(r.val_cider),
                fmt_f64(r.val_bleu4),
                format!("{:.3}", r.wallclock_s),
            ]);
        }
        t
    }

    pub fn steps_table(&self, config_hash: &str) -> CsvTable {
        let mut t = CsvTable::new(config_hash, &STEP_COLUMNS);
        for s in &self.steps {
            t.push(vec![
                s.step.to_string(),
                s.phase.name().into(),
                opt(&s.n),
                opt(&s.estimator),
                s.rollouts.to_string(),
                s.reference_tokens.to_string(),
                fmt_f64(s.loss),
                fmt_f64(s.mean_reward),
            ]);
        }
        t
    }
}

/// Copy of `table` with the wallclock column blanked, for comparing runs.
pub fn mask_wallclock(table: &CsvTable) -> CsvTable {
    let mut t = table.clone();
    if let Some(c) = t.column("wallclock_s") {
        for r in &mut t.rows {
            r[c].clear();
        }
    }
    t
}
