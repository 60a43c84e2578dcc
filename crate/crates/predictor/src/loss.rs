//! Log-Cosh regression loss.

/// `log(cosh(d))` evaluated without overflow as `|d| + log(1 + e^(-2|d|)) - log 2`.
/// Below 1 that form cancels, so `log1p(cosh d - 1)` with `cosh d - 1 = 2 sinh^2(d/2)` is used.
pub fn log_cosh(d: f64) -> f64 {
    let a = d.abs();
    if a < 1.0 {
        (2.0 * (a / 2.0).sinh().powi(2)).ln_1p()
    } else {
        a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
    }
}

/// Sum of `log cosh` over the residuals `y_true - y_pred`.
pub fn log_cosh_loss(y_true: &[f64], y_pred: &[f64]) -> f64 {
    assert_eq!(y_true.len(), y_pred.len(), "loss operands differ in length");
    y_true.iter().zip(y_pred).map(|(t, p)| log_cosh(t - p)).sum()
}

/// Derivative of [`log_cosh_loss`] with respect to each prediction.
pub fn loss_gradient(y_true: &[f64], y_pred: &[f64]) -> Vec<f64> {
    assert_eq!(y_true.len(), y_pred.len(), "loss operands differ in length");
    y_true.iter().zip(y_pred).map(|(t, p)| -(t - p).tanh()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_values() {
        assert_eq!(log_cosh_loss(&[1.0, -2.0], &[1.0, -2.0]), 0.0);
        assert!((log_cosh(1.0) - 0.433_780_830_483_027).abs() < 1e-12);
        assert!((log_cosh(10.0) - (10.0 - std::f64::consts::LN_2)).abs() < 1e-8);
        assert!(log_cosh(1e6).is_finite());
        assert_eq!(loss_gradient(&[3.0], &[3.0]), vec![0.0]);
        assert_eq!(loss_gradient(&[1e9], &[0.0]), vec![-1.0]);
    }

    #[test]
    fn bracketing_on_grid() {
        for i in -2000..=2000 {
            let d = i as f64 / 100.0;
            let l = log_cosh(d);
            assert!(l <= d * d / 2.0 + 1e-15, "{d}");
            assert!(l >= d * d / 2.0 - d.powi(4) / 12.0 - 1e-12, "{d}");
            assert!(l <= d.abs());
        }
    }

    proptest! {
        #[test]
        fn gradient_matches_central_differences(pairs in prop::collection::vec((-30.0f64..30.0, -30.0f64..30.0), 1..9)) {
            let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let g = loss_gradient(&t, &p);
            let h = 1e-5;
            for k in 0..p.len() {
                let (mut hi, mut lo) = (p.clone(), p.clone());
                hi[k] += h;
                lo[k] -= h;
                let fd = (log_cosh_loss(&t, &hi) - log_cosh_loss(&t, &lo)) / (2.0 * h);
                let scale = g[k].abs().max(fd.abs());
                // near d = 0 both sides vanish; compare absolutely there
                let err = if scale > 1e-4 { (g[k] - fd).abs() / scale } else { (g[k] - fd).abs() };
                prop_assert!(err < 1e-6, "k={k} analytic={} fd={fd}", g[k]);
            }
        }

        #[test]
        fn nonnegative_and_zero_only_at_match(d in -1e3f64..1e3) {
            let l = log_cosh(d);
            prop_assert!(l >= 0.0);
            if d.abs() > 1e-6 { prop_assert!(l > 0.0); }
        }
    }
}
