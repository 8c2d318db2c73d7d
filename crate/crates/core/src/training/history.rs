use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    /// Per-term losses, only on logging epochs.
    pub terms: Option<Vec<f64>>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub sigma_y: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub epoch: usize,
    pub batch: usize,
    pub message: String,
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub term_names: Vec<String>,
    /// Full-dataset loss before the first update.
    pub initial_loss: f64,
    pub initial_terms: Option<Vec<f64>>,
    pub records: Vec<EpochRecord>,
    /// Epoch of the best full-dataset loss; 0 means the initial state.
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stop: Option<StopReason>,
    pub wall_seconds: f64,
    /// Initial loss of a freshly initialized model on the same data (retraining only).
    pub scratch_initial_loss: Option<f64>,
    pub initial_loss_ratio: Option<f64>,
    pub failure: Option<Failure>,
}

impl TrainingHistory {
    pub fn new(term_names: Vec<String>, initial_loss: f64) -> Self {
        Self {
            term_names,
            initial_loss,
            initial_terms: None,
            records: Vec::new(),
            best_epoch: 0,
            best_loss: initial_loss,
            stop: None,
            wall_seconds: 0.0,
            scratch_initial_loss: None,
            initial_loss_ratio: None,
            failure: None,
        }
    }

    pub fn push(&mut self, record: EpochRecord) {
        self.records.push(record);
    }

    pub fn epochs(&self) -> usize {
        self.records.len()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total).collect()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// First epoch whose loss is at or below `target` (0 if the initial
    /// loss already is).
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        if self.initial_loss <= target {
            return Some(0);
        }
        self.records.iter().find(|r| r.total <= target).map(|r| r.epoch)
    }

    /// CSV: `epoch,total_loss,term_*,lambda,mu,sigma_y,seconds`. Term cells
    /// are empty on epochs without a breakdown, parameter cells when the
    /// parameter is not trained.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,total_loss");
        for n in &self.term_names {
            out.push_str(",term_");
            out.push_str(n);
        }
        out.push_str(",lambda,mu,sigma_y,seconds\n");
        let cell = |v: Option<f64>| v.map(|v| format!("{v:.16e}")).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!("{},{:.16e}", r.epoch, r.total));
            for i in 0..self.term_names.len() {
                out.push(',');
                out.push_str(&cell(r.terms.as_ref().map(|t| t[i])));
            }
            out.push_str(&format!(
                ",{},{},{},{:.6e}\n",
                cell(r.lambda),
                cell(r.mu),
                cell(r.sigma_y),
                r.seconds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())
    }
}
