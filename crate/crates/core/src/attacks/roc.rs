use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// FPRs at which TPR is reported by default.
pub const DEFAULT_FPR_GRID: [f64; 4] = [1e-3, 1e-2, 1e-1, 0.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` points from `(0, 0)` to `(1, 1)`, one per distinct threshold.
    pub points: Vec<(f64, f64)>,
    /// `(fpr, tpr)` at each requested FPR.
    pub tpr_at: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    /// TPR at false-positive rate `t`: the last point with `fpr ≤ t`,
    /// linearly interpolated toward the next point.
    pub fn tpr_at(&self, t: f64) -> f64 {
        interpolate(&self.points, t)
    }
}

fn interpolate(points: &[(f64, f64)], t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    let k = points.iter().rposition(|&(f, _)| f <= t).unwrap_or(0);
    let (f0, r0) = points[k];
    match points.get(k + 1) {
        Some(&(f1, r1)) if f1 > f0 => r0 + (t - f0) / (f1 - f0) * (r1 - r0),
        _ => r0,
    }
}

/// Threshold sweep over `scores` (higher means "positive").
pub fn roc_and_tpr(scores: &[f64], labels: &[bool], fpr_grid: &[f64]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("attack score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass("roc needs both positives and negatives".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    let tpr_at = fpr_grid.iter().map(|&t| (t, interpolate(&points, t))).collect();
    Ok(RocCurve { points, tpr_at, auc })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_scores() {
        let r = roc_and_tpr(&[0.9, 0.8, 0.4, 0.2], &[true, true, false, false], &[0.0, 0.01]).unwrap();
        assert_eq!(r.tpr_at(0.0), 1.0);
        assert_eq!(r.tpr_at[1].1, 1.0);
        assert_eq!(r.auc, 1.0);
        assert_eq!(*r.points.first().unwrap(), (0.0, 0.0));
        assert_eq!(*r.points.last().unwrap(), (1.0, 1.0));
    }

    #[test]
    fn constant_scores_are_diagonal() {
        let r = roc_and_tpr(&[0.5; 6], &[true, false, true, false, true, false], &[0.3]).unwrap();
        assert_eq!(r.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert!((r.tpr_at(0.3) - 0.3).abs() < 1e-12);
        assert!((r.auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn anti_correlated_scores_fall_below_diagonal() {
        let r = roc_and_tpr(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false], &[0.5]).unwrap();
        assert_eq!(r.tpr_at(0.5), 0.0);
        assert_eq!(r.auc, 0.0);
        assert!(r.points.iter().all(|&(f, t)| t <= f));
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(
            roc_and_tpr(&[0.1, 0.2], &[true, true], &[]),
            Err(Error::SingleClass(_))
        ));
    }
}
