use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// Per-epoch mean losses; `distill` is zero for the teacher and without KD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub label: f64,
    pub distill: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Filled in by callers that own a clock.
    pub wall_time_secs: f64,
    /// `(epoch, held-out SRCC)` pairs recorded by an epoch observer.
    pub snapshots: Vec<(usize, f64)>,
}

impl TrainReport {
    pub fn label_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.label).collect()
    }

    pub fn distill_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.distill).collect()
    }

    pub fn total_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total).collect()
    }

    /// `epoch,label_loss,distill_loss,total_loss`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,label_loss,distill_loss,total_loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{:.6},{:.6},{:.6}\n", e.epoch, e.label, e.distill, e.total));
        }
        out
    }
}
