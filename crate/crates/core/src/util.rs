//! Small numeric helpers shared across modules.

/// Clamp floor for log arguments in losses and score adjustments.
pub const LOG_EPS: f64 = 1e-12;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// True when entries are non-negative and sum to one within `tol`.
pub fn is_normalized(probs: &[f64], tol: f64) -> bool {
    probs.iter().all(|&p| p >= 0.0) && (probs.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// Format a float with enough digits to round-trip exactly through `parse`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&[3.0, 3.0, 3.0, 3.0]);
        for &x in &p {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_stable_for_large_logits() {
        let p = softmax(&[1000.0, 1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7, 0.2]), 1);
    }

    #[test]
    fn fmt_round_trips_bit_exactly() {
        for &x in &[0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            let y: f64 = s.parse().unwrap();
            assert_eq!(x.to_bits(), y.to_bits(), "{s}");
        }
    }
}
