//! Per-sample label batches: primary energy, angle, total deposited energy.

use calo_data::ShowerEvent;

use crate::{Result, TrainError};

#[derive(Clone, Debug, PartialEq)]
pub struct LabelBatch {
    pub ep: Vec<f64>,
    pub theta: Vec<f64>,
    pub ecal: Vec<f64>,
}

impl LabelBatch {
    pub fn new(ep: Vec<f64>, theta: Vec<f64>, ecal: Vec<f64>) -> Result<Self> {
        if ep.len() != theta.len() || ep.len() != ecal.len() {
            return Err(TrainError::BatchMismatch(format!(
                "label lengths differ: ep {}, theta {}, ecal {}",
                ep.len(),
                theta.len(),
                ecal.len()
            )));
        }
        if let Some(v) = ep.iter().find(|v| !(**v > 0.0)) {
            return Err(TrainError::BatchMismatch(format!("non-positive Ep {v}")));
        }
        if let Some(v) = ecal.iter().find(|v| !(**v >= 0.0)) {
            return Err(TrainError::BatchMismatch(format!("negative Ecal {v}")));
        }
        Ok(Self { ep, theta, ecal })
    }

    pub fn from_events(events: &[ShowerEvent]) -> Self {
        Self {
            ep: events.iter().map(|e| e.ep).collect(),
            theta: events.iter().map(|e| e.theta).collect(),
            ecal: events.iter().map(|e| e.ecal()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ep.is_empty()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            ep: self.ep[range.clone()].to_vec(),
            theta: self.theta[range.clone()].to_vec(),
            ecal: self.ecal[range].to_vec(),
        }
    }

    /// Gathers labels at the given indices (used for shuffled label reuse).
    pub fn gather(&self, indices: &[usize]) -> Self {
        Self {
            ep: indices.iter().map(|&i| self.ep[i]).collect(),
            theta: indices.iter().map(|&i| self.theta[i]).collect(),
            ecal: indices.iter().map(|&i| self.ecal[i]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(LabelBatch::new(vec![1.0], vec![1.5, 1.6], vec![0.1]).is_err());
        assert!(LabelBatch::new(vec![-1.0], vec![1.5], vec![0.1]).is_err());
        assert!(LabelBatch::new(vec![1.0], vec![1.5], vec![0.1]).is_ok());
    }

    #[test]
    fn gather_reorders() {
        let l = LabelBatch::new(vec![1.0, 2.0, 3.0], vec![0.1, 0.2, 0.3], vec![1.0, 2.0, 3.0])
            .unwrap();
        let g = l.gather(&[2, 0]);
        assert_eq!(g.ep, vec![3.0, 1.0]);
        assert_eq!(g.theta, vec![0.3, 0.1]);
    }
}
