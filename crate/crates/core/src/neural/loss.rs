use ndarray::Array2;

use super::config::FocalLossConfig;
use crate::scalar::Scalar;

/// Lower clamp applied to the true-class probability.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FocalLoss<F> {
    pub loss: F,
    /// Gradient of `loss` with respect to the logits, same shape as `probs`.
    pub dlogits: Array2<F>,
    /// Number of labeled rows the mean was taken over.
    pub count: usize,
}

/// `-alpha * (1 - p)^gamma * ln p` for a single true-class probability.
pub fn focal_term(p: f64, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0);
    -alpha * (1.0 - p).powf(gamma) * p.ln()
}

/// Mean focal loss over rows with a label; unlabeled rows (SEP, padding)
/// contribute nothing and receive zero gradient.
///
/// `probs` must be the softmax of the logits the gradient is taken against.
pub fn focal_loss<F: Scalar>(probs: &Array2<F>, labels: &[Option<u8>], cfg: &FocalLossConfig) -> FocalLoss<F> {
    assert_eq!(probs.nrows(), labels.len(), "one label slot per row");
    let count = labels.iter().filter(|l| l.is_some()).count();
    let mut dlogits = Array2::<F>::zeros(probs.dim());
    if count == 0 {
        return FocalLoss { loss: F::zero(), dlogits, count };
    }
    let inv = F::one() / F::of(count as f64);
    let gamma = F::of(cfg.gamma);
    let floor = F::of(PROB_FLOOR);
    let mut total = F::zero();
    for (row, label) in labels.iter().enumerate() {
        let Some(y) = *label else { continue };
        let y = y as usize;
        let alpha = F::of(cfg.alpha[y]);
        let p = probs[(row, y)].max(floor).min(F::one());
        let q = F::one() - p;
        let lnp = p.ln();
        total += -alpha * q.powf(gamma) * lnp;
        // d/dz_k = -alpha * c * (delta_yk - p_k)
        let mut c = q.powf(gamma);
        if cfg.gamma > 0.0 && p < F::one() {
            c -= gamma * p * lnp * q.powf(gamma - F::one());
        }
        let scale = -alpha * c * inv;
        for k in 0..probs.ncols() {
            let delta = if k == y { F::one() } else { F::zero() };
            dlogits[(row, k)] = scale * (delta - probs[(row, k)]);
        }
    }
    FocalLoss { loss: total * inv, dlogits, count }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        let cfg = FocalLossConfig::default();
        assert_eq!(focal_term(1.0, 0.8, 3.0), 0.0);
        assert!((focal_term(0.5, 0.8, 3.0) - 0.8 * 0.125 * 2f64.ln()).abs() < 1e-12);
        let probs = array![[0.5, 0.5, 0.0], [0.0, 0.0, 0.0], [0.0, 0.5, 0.5]];
        let out = focal_loss(&probs, &[Some(0), None, Some(2)], &cfg);
        assert_eq!(out.count, 2);
        let expected = (focal_term(0.5, 0.5, 3.0) + focal_term(0.5, 0.8, 3.0)) / 2.0;
        assert!((out.loss - expected).abs() < 1e-12);
        assert!(out.dlogits.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_probability_is_clamped() {
        let probs = array![[0.0, 1.0, 0.0]];
        let out = focal_loss(&probs, &[Some(0)], &FocalLossConfig::cross_entropy());
        assert!((out.loss + PROB_FLOOR.ln()).abs() < 1e-9);
        assert!(out.dlogits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gamma_zero_gradient_is_softmax_cross_entropy() {
        let probs = array![[0.2, 0.3, 0.5], [0.6, 0.4, 0.0]];
        let out = focal_loss(&probs, &[Some(2), Some(1)], &FocalLossConfig::cross_entropy());
        // Closed form: (p - onehot) / n
        let expected: Array2<f64> = array![[0.2, 0.3, -0.5], [0.6, -0.6, 0.0]] / 2.0;
        for (a, b) in out.dlogits.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn non_negative_and_decreasing(alpha in 0.01f64..2.0, gamma in 0.0f64..5.0, a in 0.001f64..0.998) {
            let b = a + 0.001;
            let la = focal_term(a, alpha, gamma);
            let lb = focal_term(b, alpha, gamma);
            prop_assert!(la >= 0.0 && lb >= 0.0);
            prop_assert!(lb < la);
        }
    }
}
