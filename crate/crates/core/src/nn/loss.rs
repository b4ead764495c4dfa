//! Per-sample loss terms. Batch losses are means of these.

use serde::{Deserialize, Serialize};

/// Reconstructions are clamped into `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

/// Weights of the L1 and squared prediction terms and of the autoencoder term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub l2: f64,
    pub ae: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.0,
            l2: 0.0,
            ae: 1.0,
        }
    }
}

/// `l1 * |pred - target| + l2 * (pred - target)^2`.
pub fn loss_pred(pred: f64, target: f64, l1: f64, l2: f64) -> f64 {
    let r = pred - target;
    l1 * r.abs() + l2 * r * r
}

/// d loss_pred / d pred. The L1 subgradient at zero residual is 0.
pub fn loss_pred_grad(pred: f64, target: f64, l1: f64, l2: f64) -> f64 {
    let r = pred - target;
    let sign = if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    };
    l1 * sign + 2.0 * l2 * r
}

/// Binary cross-entropy between a reconstruction and the many-hot segment it encodes.
pub fn loss_ae(reconstruction: &[f64], bits: &[f64]) -> f64 {
    debug_assert_eq!(reconstruction.len(), bits.len());
    reconstruction.iter().zip(bits).map(|(&rec, &r)| bce(rec, r)).sum()
}

pub(crate) fn bce(rec: f64, r: f64) -> f64 {
    let c = rec.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(r * c.ln() + (1.0 - r) * (1.0 - c).ln())
}

/// `L_pred + ae_weight * L_ae`.
pub fn loss_total(l_pred: f64, l_ae: f64, ae_weight: f64) -> f64 {
    l_pred + ae_weight * l_ae
}

/// Mean batch loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    /// Weighted prediction loss (already includes the L1 and L2 weights).
    pub pred: f64,
    /// Unweighted autoencoder loss summed over attributes.
    pub ae: f64,
    pub total: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_loss() {
        assert_eq!(loss_pred(3.0, 3.0, 1.0, 1.0), 0.0);
        assert_eq!(loss_pred(5.0, 3.0, 1.0, 0.5), 4.0);
        assert!((loss_pred(13.0, 3.0, 20.0, 0.001) - 200.1).abs() < 1e-12);
    }

    #[test]
    fn prediction_grad_is_linear_in_l1() {
        let g1 = loss_pred_grad(5.0, 3.0, 1.0, 0.0);
        let g2 = loss_pred_grad(5.0, 3.0, 2.0, 0.0);
        assert_eq!(g2, 2.0 * g1);
        assert_eq!(loss_pred_grad(3.0, 3.0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn bce_values() {
        let l = loss_ae(&[0.5; 6], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!((l - 6.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let l = loss_ae(&[0.9, 0.1], &[1.0, 0.0]);
        assert!((l - 0.210_721_031_315_652_5).abs() < 1e-12);
        let perfect = loss_ae(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]);
        assert!(perfect <= 3.0 * 1.1e-7, "{perfect}");
    }

    #[test]
    fn total_loss() {
        assert_eq!(loss_total(4.0, 2.0, 1.0), 6.0);
        assert_eq!(loss_total(4.0, 2.0, 0.0), 4.0);
    }
}
