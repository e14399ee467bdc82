//! Leaky-ReLU activation and the sigmoid / binary-cross-entropy pair.

/// Elementwise `max(x, rate * x)`.
///
/// `rate` must lie in `[0, 1)`; `rate = 0` degenerates to plain ReLU.
pub fn leaky_relu(x: &[f64], rate: f64) -> Vec<f64> {
    debug_assert!((0.0..1.0).contains(&rate));
    x.iter()
        .map(|&v| if v >= 0.0 { v } else { rate * v })
        .collect()
}

/// Subgradient of [`leaky_relu`]: `rate` for `x < 0`, `1` for `x >= 0`.
///
/// The tie at exactly 0 resolves to slope 1. The same convention is used by
/// every forward-derivative and second-derivative code path in this crate, so
/// results stay consistent on the (measure-zero) kink.
pub fn leaky_relu_slope(x: f64, rate: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        rate
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(logit: f64) -> f64 {
    if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without intermediate overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Sigmoid score and binary cross-entropy loss for one logit.
///
/// `loss = -[label ln(score) + (1 - label) ln(1 - score)]`, evaluated in
/// log-sum-exp form so no intermediate overflows for `|logit| <= 700`.
pub fn sigmoid_bce(logit: f64, label: u8) -> (f64, f64) {
    debug_assert!(label <= 1);
    let score = sigmoid(logit);
    let loss = if label == 1 {
        softplus(-logit)
    } else {
        softplus(logit)
    };
    (score, loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN_2: f64 = core::f64::consts::LN_2;

    #[test]
    fn leaky_relu_paper_rate() {
        assert_eq!(leaky_relu(&[2.0, -2.0], 0.01), vec![2.0, -0.02]);
    }

    #[test]
    fn leaky_relu_zero_input() {
        assert_eq!(leaky_relu(&[0.0, 0.0], 0.01), vec![0.0, 0.0]);
    }

    #[test]
    fn leaky_relu_degenerates_to_relu() {
        assert_eq!(leaky_relu(&[-1.0], 0.0), vec![0.0]);
    }

    #[test]
    fn slope_convention_at_zero() {
        assert_eq!(leaky_relu_slope(0.0, 0.01), 1.0);
        assert_eq!(leaky_relu_slope(-1e-300, 0.01), 0.01);
    }

    #[test]
    fn bce_symmetry_point() {
        let (score, loss) = sigmoid_bce(0.0, 1);
        assert_eq!(score, 0.5);
        assert_eq!(loss, LN_2);
        let (_, loss0) = sigmoid_bce(0.0, 0);
        assert_eq!(loss0, LN_2);
    }

    #[test]
    fn bce_saturation() {
        let (score, loss) = sigmoid_bce(50.0, 1);
        assert!(1.0 - score < 1e-15);
        // 128-bit reference: 1.928749847963917761788912e-22
        assert!((loss - 1.9287498479639178e-22).abs() < 1e-30);
        // Far saturation must not overflow.
        let (_, big) = sigmoid_bce(-700.0, 1);
        assert!(big.is_finite() && (big - 700.0).abs() < 1e-9);
    }

    #[test]
    fn bce_reference_values() {
        // 128-bit reference evaluation at logit -3, label 0:
        //   score = 0.04742587317756678087884815
        //   loss  = 0.04858735157374205875892592
        let (score, loss) = sigmoid_bce(-3.0, 0);
        assert!((score - 0.047425873177566781).abs() < 1e-15);
        assert!((loss - 0.048587351573742059).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn bce_nonnegative(logit in -700.0f64..700.0, label in 0u8..2) {
            let (_, loss) = sigmoid_bce(logit, label);
            prop_assert!(loss >= 0.0);
        }

        // The stable form matches the textbook form wherever the latter
        // does not overflow or lose the score to rounding. Beyond |logit|
        // of about 14 the naive form degrades: `1 - score` inherits the
        // half-ulp rounding of `score` and the comparison stops measuring
        // the stable implementation.
        #[test]
        fn bce_matches_naive(logit in -13.0f64..13.0, label in 0u8..2) {
            let (score, loss) = sigmoid_bce(logit, label);
            let naive = -(f64::from(label) * score.ln()
                + (1.0 - f64::from(label)) * (1.0 - score).ln());
            let scale = loss.abs().max(naive.abs()).max(1e-300);
            prop_assert!((loss - naive).abs() / scale <= 1e-10);
        }
    }
}
