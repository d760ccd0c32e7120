//! Threshold selection from a proxy ROC: segments the model finds unfamiliar
//! act as negatives, traversed segments as positives.

/// Smallest threshold whose false-positive rate over `negatives` is at most
/// `target_fpr`, where a negative is a false positive if its prediction is
/// `>= t`.
///
/// Candidates are every observed prediction and the next representable value
/// above it, so the sweep is exact. Returns `None` for degenerate proxy sets.
pub fn select_threshold(negatives: &[f64], positives: &[f64], target_fpr: f64) -> Option<f64> {
    if negatives.is_empty() || positives.is_empty() {
        return None;
    }
    let mut neg: Vec<f64> = negatives.to_vec();
    neg.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = negatives
        .iter()
        .chain(positives)
        .flat_map(|&p| [p, p.next_up()])
        .collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let n = neg.len() as f64;
    candidates.into_iter().find(|&t| {
        let above = neg.len() - neg.partition_point(|&v| v < t);
        above as f64 / n <= target_fpr
    })
}

/// Fraction of `negatives` predicted at or above `t`.
pub fn false_positive_rate(negatives: &[f64], t: f64) -> f64 {
    if negatives.is_empty() {
        return 0.0;
    }
    negatives.iter().filter(|&&v| v >= t).count() as f64 / negatives.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn separable_picks_just_above_zero() {
        let t = select_threshold(&[0.0; 5], &[1.0; 5], 0.15).unwrap();
        assert!(t > 0.0 && t <= 1e-300);
        assert_eq!(false_positive_rate(&[0.0; 5], t), 0.0);
    }

    #[test]
    fn ten_point_enumeration() {
        let neg: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let t = select_threshold(&neg, &[1.0], 0.15).unwrap();
        // Only the 1.0 prediction may remain at or above the threshold.
        assert_eq!(false_positive_rate(&neg, t), 0.1);
        assert!(t > 0.9 && t <= 1.0);
        assert_eq!(t, 0.9f64.next_up());
    }

    #[test]
    fn target_one_gives_min_prediction() {
        let t = select_threshold(&[0.3, 0.6, 0.9], &[0.45], 1.0).unwrap();
        assert_eq!(t, 0.3);
    }

    #[test]
    fn degenerate_sets() {
        assert_eq!(select_threshold(&[], &[1.0], 0.15), None);
        assert_eq!(select_threshold(&[0.2], &[], 0.15), None);
    }

    proptest! {
        #[test]
        fn guarantee_and_minimality(
            neg in proptest::collection::vec(0.0f64..=1.0, 1..60),
            pos in proptest::collection::vec(0.0f64..=1.0, 1..20),
            target in 0.01f64..0.99,
        ) {
            let t = select_threshold(&neg, &pos, target).unwrap();
            prop_assert!(false_positive_rate(&neg, t) <= target);
            // No observed prediction below t would also qualify.
            for &p in neg.iter().chain(&pos) {
                if p < t {
                    prop_assert!(false_positive_rate(&neg, p) > target);
                }
            }
        }
    }
}
