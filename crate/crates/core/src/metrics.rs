//! Localization and detection metrics: permutation-invariant pixel mAP,
//! class-balanced IoU at the per-image best threshold, and image-level
//! detection mAP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch::{DenseMap, Mask};

/// Per-pixel scores paired with a ground-truth mask of the same size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredMap {
    pub scores: Vec<f64>,
    pub truth: Vec<bool>,
}

impl ScoredMap {
    pub fn new(scores: Vec<f64>, truth: Vec<bool>) -> Result<Self> {
        if scores.len() != truth.len() {
            return Err(Error::invalid(format!(
                "{} scores for {} ground-truth pixels",
                scores.len(),
                truth.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("score map"));
        }
        Ok(ScoredMap { scores, truth })
    }

    pub fn from_maps(response: &DenseMap, mask: &Mask) -> Result<Self> {
        if (response.width, response.height) != (mask.width, mask.height) {
            return Err(Error::invalid(format!(
                "response {}x{} vs mask {}x{}",
                response.width, response.height, mask.width, mask.height
            )));
        }
        Self::new(response.data.clone(), mask.data.clone())
    }

    /// Errors unless the ground truth contains both classes.
    fn check_two_classes(&self) -> Result<()> {
        let pos = self.truth.iter().filter(|&&t| t).count();
        if pos == 0 || pos == self.truth.len() {
            return Err(Error::data("ground truth has a single class"));
        }
        Ok(())
    }
}

/// Average precision with `truth` as the positive class, ranking by
/// descending score.
///
/// Tied scores are handled by averaging over every ordering of each tied
/// group, which has a closed form per group; without ties this is the usual
/// mean of precision at each positive's rank.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let total_pos = truth.iter().filter(|&&t| t).count();
    if total_pos == 0 {
        return Err(Error::data("no positives"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut sum = 0.0;
    let mut seen = 0usize;
    let mut tp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let m = j - i;
        let p = order[i..j].iter().filter(|&&k| truth[k]).count();
        if p > 0 {
            let (tp0, n0, mf, pf) = (tp as f64, seen as f64, m as f64, p as f64);
            let extra_per_slot = if m > 1 { (pf - 1.0) / (mf - 1.0) } else { 0.0 };
            for k in 1..=m {
                let kf = k as f64;
                sum += (pf / mf) * (tp0 + 1.0 + (kf - 1.0) * extra_per_slot) / (n0 + kf);
            }
        }
        seen += m;
        tp += p;
        i = j;
    }
    Ok(sum / total_pos as f64)
}

/// Pixel AP maximized over the two label assignments.
pub fn p_map(map: &ScoredMap) -> Result<f64> {
    map.check_two_classes()?;
    let neg: Vec<f64> = map.scores.iter().map(|s| -s).collect();
    let a = average_precision(&map.scores, &map.truth)?;
    let b = average_precision(&neg, &map.truth)?;
    Ok(a.max(b))
}

/// Class-balanced IoU at the best threshold, maximized over label
/// assignment. Thresholds sweep every distinct score (`score >= t` is the
/// predicted splice).
pub fn c_iou(map: &ScoredMap) -> Result<f64> {
    map.check_two_classes()?;
    let n = map.truth.len();
    let pos = map.truth.iter().filter(|&&t| t).count();
    let neg = n - pos;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| map.scores[b].total_cmp(&map.scores[a]));

    // Balanced IoU when `pred` pixels are called splice, `tp` of which are.
    let balanced = |pred: usize, tp: usize| -> f64 {
        let fp = pred - tp;
        let tn = neg - fp;
        let iou_pos = tp as f64 / (pos + fp) as f64;
        let iou_neg = tn as f64 / (neg + (pos - tp)) as f64;
        0.5 * (iou_pos + iou_neg)
    };
    let mut best = 0.0f64;
    let mut tp = 0usize;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && map.scores[order[j]] == map.scores[order[i]] {
            if map.truth[order[j]] {
                tp += 1;
            }
            j += 1;
        }
        // Prediction {score >= t} and its complement under swapped labels.
        best = best.max(balanced(j, tp)).max(balanced(n - j, pos - tp));
        i = j;
    }
    Ok(best)
}

/// Detection AP over images: spliced is positive and the score is the
/// negated consistency, so less consistent images rank first.
pub fn detection_map(items: &[(f64, bool)]) -> Result<f64> {
    let pos = items.iter().filter(|(_, s)| *s).count();
    if pos == 0 || pos == items.len() {
        return Err(Error::data(
            "detection needs both spliced and authentic images",
        ));
    }
    if items.iter().any(|(v, _)| !v.is_finite()) {
        return Err(Error::NonFinite("consistency score"));
    }
    let scores: Vec<f64> = items.iter().map(|(v, _)| -v).collect();
    let truth: Vec<bool> = items.iter().map(|(_, s)| *s).collect();
    average_precision(&scores, &truth)
}

/// Mean of per-image values, skipping images whose metric is undefined.
/// Returns the mean and the number of skipped images.
pub fn mean_skipping(values: &[Result<f64>]) -> (Option<f64>, usize) {
    let ok: Vec<f64> = values
        .iter()
        .filter_map(|v| v.as_ref().ok().copied())
        .collect();
    let skipped = values.len() - ok.len();
    if ok.is_empty() {
        (None, skipped)
    } else {
        (Some(ok.iter().sum::<f64>() / ok.len() as f64), skipped)
    }
}
