//! Probability vectors, confidence and MC-dropout uncertainty.
//!
//! Confidence is the largest softmax probability of the deterministic
//! (dropout off) logits. Uncertainty is the entropy of the mean of the `N`
//! dropout-pass softmaxes, normalized by `log K` so that it lies in `[0, 1]`.
//! A temperature `tau` divides the logits before every softmax; it changes
//! sharpness but never the argmax.
//!
//! Start and end labels are scored separately and then combined: the
//! geometric mean for confidence (the joint span likelihood under
//! independence) and the arithmetic mean for uncertainty.

use crate::error::{domain, Result};
use crate::model::{LogitRecord, Span, TurnScore};

const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

/// Temperature-scaled softmax, stable for logits of any magnitude.
pub fn softmax(z: &[f64], tau: f64) -> Result<Vec<f64>> {
    if z.is_empty() {
        return domain("softmax of an empty vector");
    }
    check_tau(tau)?;
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return domain("softmax needs finite logits");
    }
    let mut out: Vec<f64> = z.iter().map(|x| ((x - max) / tau).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return domain(format!(
            "temperature must be positive and finite, got {tau}"
        ));
    }
    Ok(())
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.len() < 2 {
        return domain(format!(
            "probability vector needs at least 2 entries, got {}",
            p.len()
        ));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return domain("probability vector has negative or non-finite entries");
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return domain(format!("probability vector sums to {total}, not 1"));
    }
    Ok(())
}

/// Maximum probability.
pub fn confidence(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(p.iter().copied().fold(0.0, f64::max))
}

/// Mean of the per-pass softmax outputs.
pub fn mc_aggregate(passes: &[Vec<f64>], tau: f64) -> Result<Vec<f64>> {
    let Some(first) = passes.first() else {
        return domain("MC aggregation needs at least one pass");
    };
    let k = first.len();
    if passes.iter().any(|p| p.len() != k) {
        return domain("MC passes have ragged lengths");
    }
    let mut acc = vec![0.0; k];
    for pass in passes {
        for (a, p) in acc.iter_mut().zip(softmax(pass, tau)?) {
            *a += p;
        }
    }
    let n = passes.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(acc)
}

/// Entropy normalized by `log K`, with `0 log 0 = 0`.
pub fn uncertainty(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    let entropy: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    Ok((entropy / (p.len() as f64).ln()).clamp(0.0, 1.0))
}

/// Scores one turn with separate temperatures for confidence and
/// uncertainty.
pub fn score_turn(r: &LogitRecord, tau_conf: f64, tau_uncer: f64) -> Result<TurnScore> {
    check_tau(tau_conf)?;
    check_tau(tau_uncer)?;
    let start = argmax(r.det_start_logits()).expect("records have K >= 2");
    let end = argmax(r.det_end_logits())
        .expect("records have K >= 2")
        .max(start);
    let pred = Span { start, end };

    let conf_start = confidence(&softmax(r.det_start_logits(), tau_conf)?)?;
    let conf_end = confidence(&softmax(r.det_end_logits(), tau_conf)?)?;

    let p_start = mc_aggregate(r.mc_start_logits(), tau_uncer)?;
    let p_end = mc_aggregate(r.mc_end_logits(), tau_uncer)?;
    let s_uncer = 0.5 * (uncertainty(&p_start)? + uncertainty(&p_end)?);

    Ok(TurnScore {
        pred,
        s_conf: (conf_start * conf_end).sqrt(),
        s_uncer,
        p_start,
        p_end,
        correct: pred == r.gold(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax(&[0.0; 4], 1.0).unwrap();
        for x in p {
            assert_abs_diff_eq!(x, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_hand_case() {
        // e^2 / (e^2 + e + 1)
        let p = softmax(&[2.0, 1.0, 0.0], 1.0).unwrap();
        assert_abs_diff_eq!(p[0], 0.665_240_955_774_821_2, epsilon = 1e-12);
    }

    #[test]
    fn softmax_high_temperature_flattens() {
        let p = softmax(&[2.0, 1.0, 0.0], 1e6).unwrap();
        for x in p {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-5);
        }
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax(&[], 1.0).is_err());
        assert!(softmax(&[1.0], 0.0).is_err());
        assert!(softmax(&[1.0], -1.0).is_err());
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&[1e4, -1e4, 0.0], 1.0).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn confidence_cases() {
        assert_eq!(confidence(&[0.0, 1.0, 0.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(confidence(&[0.1; 10]).unwrap(), 0.1, epsilon = 1e-15);
        assert_eq!(confidence(&[0.5, 0.3, 0.2]).unwrap(), 0.5);
        assert!(confidence(&[0.5, 0.3]).is_err());
    }

    #[test]
    fn mc_aggregate_cases() {
        let p = mc_aggregate(&[vec![0.0, 0.0], vec![3f64.ln(), 0.0]], 1.0).unwrap();
        assert_abs_diff_eq!(p[0], 0.625, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.375, epsilon = 1e-12);

        let z = vec![0.3, -1.2, 2.0];
        let same = mc_aggregate(&[z.clone(), z.clone(), z.clone()], 0.7).unwrap();
        let single = softmax(&z, 0.7).unwrap();
        for (a, b) in same.iter().zip(&single) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }

        assert!(mc_aggregate(&[vec![0.0, 1.0], vec![0.0]], 1.0).is_err());
        assert!(mc_aggregate(&[], 1.0).is_err());
    }

    #[test]
    fn uncertainty_cases() {
        assert_abs_diff_eq!(uncertainty(&[0.2; 5]).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(uncertainty(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            uncertainty(&[0.5, 0.5, 0.0, 0.0]).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert!(uncertainty(&[1.0]).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    fn arb_logits() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 2..40)
    }

    proptest! {
        #[test]
        fn temperature_keeps_argmax(z in arb_logits(), tau in 0.01f64..2.0) {
            let p = softmax(&z, tau).unwrap();
            prop_assert_eq!(argmax(&p), argmax(&z));
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn confidence_falls_with_temperature(z in arb_logits(), t1 in 1.0f64..4.0, dt in 0.0f64..4.0) {
            let c1 = confidence(&softmax(&z, t1).unwrap()).unwrap();
            let c2 = confidence(&softmax(&z, t1 + dt).unwrap()).unwrap();
            prop_assert!(c2 <= c1 + 1e-12);
        }

        #[test]
        fn mc_aggregate_is_mean_of_softmaxes(passes in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 6), 1..8), tau in 0.1f64..2.0) {
            let agg = mc_aggregate(&passes, tau).unwrap();
            for (k, a) in agg.iter().enumerate() {
                let mean = passes.iter().map(|z| softmax(z, tau).unwrap()[k]).sum::<f64>() / passes.len() as f64;
                prop_assert!((a - mean).abs() < 1e-12);
            }
            let mut reversed = passes.clone();
            reversed.reverse();
            let agg_rev = mc_aggregate(&reversed, tau).unwrap();
            for (a, b) in agg.iter().zip(&agg_rev) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }

        #[test]
        fn uncertainty_in_unit_interval(z in arb_logits()) {
            let u = uncertainty(&softmax(&z, 1.0).unwrap()).unwrap();
            prop_assert!((0.0..=1.0).contains(&u));
        }
    }
}
