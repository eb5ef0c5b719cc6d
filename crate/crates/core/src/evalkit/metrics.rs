use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose_features::{SkeletonPose, NUM_KEYPOINTS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub accuracy: f64,
    /// `None` when there are no positives.
    pub tpr: Option<f64>,
    /// `None` when there are no negatives.
    pub fpr: Option<f64>,
}

/// Accuracy, TPR and FPR of ±1 decisions against ±1 labels.
pub fn detection_metrics(decisions: &[i8], labels: &[i8]) -> Result<DetectionMetrics> {
    if decisions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} decisions for {} labels",
            decisions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Undefined("accuracy of an empty set".into()));
    }
    if let Some(v) = labels
        .iter()
        .chain(decisions)
        .find(|v| !matches!(v, -1 | 1))
    {
        return Err(Error::invalid(format!("labels must be ±1, found {v}")));
    }
    let (mut tp, mut fp, mut pos, mut neg, mut correct) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for (&d, &z) in decisions.iter().zip(labels) {
        correct += usize::from(d == z);
        if z == 1 {
            pos += 1;
            tp += usize::from(d == 1);
        } else {
            neg += 1;
            fp += usize::from(d == 1);
        }
    }
    Ok(DetectionMetrics {
        accuracy: correct as f64 / labels.len() as f64,
        tpr: (pos > 0).then(|| tp as f64 / pos as f64),
        fpr: (neg > 0).then(|| fp as f64 / neg as f64),
    })
}

/// Area under the ROC curve by the rank-sum method; ties count one half.
pub fn auroc(scores: &[f64], labels: &[i8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let pos = labels.iter().filter(|&&z| z == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// ROC points `(fpr, tpr)` sweeping the threshold from +∞ down, one point per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[i8]) -> Result<Vec<(f64, f64)>> {
    let pos = labels.iter().filter(|&&z| z == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::Undefined("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        pts.push((fp / neg, tp / pos));
    }
    Ok(pts)
}

/// Per-keypoint PCK with its mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PckReport {
    pub rho: f64,
    /// `None` for keypoint types with no ground truth.
    pub per_keypoint: Vec<Option<f64>>,
    pub mpck: f64,
}

/// Greedy one-to-one matching of predictions to ground truth by ascending mean keypoint distance.
///
/// Returns `matches[g] = Some(p)`.
pub fn match_people(pred: &[SkeletonPose], gt: &[SkeletonPose]) -> Vec<Option<usize>> {
    let mut pairs = Vec::new();
    for (gi, g) in gt.iter().enumerate() {
        for (pi, p) in pred.iter().enumerate() {
            let d: Vec<f64> = (0..NUM_KEYPOINTS)
                .filter(|&j| g.keypoints[j].visible && p.keypoints[j].visible)
                .map(|j| keypoint_distance(p, g, j))
                .collect();
            if !d.is_empty() {
                pairs.push((d.iter().sum::<f64>() / d.len() as f64, gi, pi));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut matches = vec![None; gt.len()];
    let mut used = vec![false; pred.len()];
    for (_, gi, pi) in pairs {
        if matches[gi].is_none() && !used[pi] {
            matches[gi] = Some(pi);
            used[pi] = true;
        }
    }
    matches
}

fn keypoint_distance(a: &SkeletonPose, b: &SkeletonPose, j: usize) -> f64 {
    let (ka, kb) = (a.keypoints[j], b.keypoints[j]);
    (((ka.x - kb.x) as f64).powi(2) + ((ka.y - kb.y) as f64).powi(2)).sqrt()
}

fn bbox_diagonal(p: &SkeletonPose) -> f64 {
    p.bbox().map_or(0.0, |[x0, y0, x1, y1]| {
        (((x1 - x0) as f64).powi(2) + ((y1 - y0) as f64).powi(2)).sqrt()
    })
}

/// Accumulates PCK hit counts across frames. Each visible ground-truth
/// keypoint is one trial; unmatched people and invisible predictions count as misses.
#[derive(Clone, Debug, PartialEq)]
pub struct PckAccumulator {
    pub rho: f64,
    hits: [u64; NUM_KEYPOINTS],
    totals: [u64; NUM_KEYPOINTS],
}

impl PckAccumulator {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::invalid(format!(
                "PCK threshold must be in (0,1), got {rho}"
            )));
        }
        Ok(PckAccumulator {
            rho,
            hits: [0; NUM_KEYPOINTS],
            totals: [0; NUM_KEYPOINTS],
        })
    }

    pub fn add_frame(&mut self, pred: &[SkeletonPose], gt: &[SkeletonPose]) {
        let matches = match_people(pred, gt);
        for (g, m) in gt.iter().zip(matches) {
            let b = bbox_diagonal(g);
            for j in 0..NUM_KEYPOINTS {
                if !g.keypoints[j].visible {
                    continue;
                }
                self.totals[j] += 1;
                let hit = m.is_some_and(|pi| {
                    let p = &pred[pi];
                    p.keypoints[j].visible && keypoint_distance(p, g, j) <= self.rho * b
                });
                self.hits[j] += u64::from(hit);
            }
        }
    }

    pub fn people_seen(&self) -> u64 {
        self.totals.iter().copied().max().unwrap_or(0)
    }

    pub fn report(&self) -> Result<PckReport> {
        let per: Vec<Option<f64>> = self
            .hits
            .iter()
            .zip(&self.totals)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect();
        let defined: Vec<f64> = per.iter().flatten().copied().collect();
        if defined.is_empty() {
            return Err(Error::Undefined("PCK with no ground-truth people".into()));
        }
        Ok(PckReport {
            rho: self.rho,
            mpck: defined.iter().sum::<f64>() / defined.len() as f64,
            per_keypoint: per,
        })
    }
}

/// PCK@ρ of one frame's predictions.
pub fn pck(pred: &[SkeletonPose], gt: &[SkeletonPose], rho: f64) -> Result<PckReport> {
    let mut acc = PckAccumulator::new(rho)?;
    acc.add_frame(pred, gt);
    acc.report()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub auroc: Option<f64>,
    /// PCK of abnormal people over all forged GOPs, one report per threshold.
    pub pck: Vec<PckReport>,
    pub pck_by_attack: BTreeMap<String, Vec<PckReport>>,
    pub runtime_ms: BTreeMap<String, f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_features::Keypoint;

    #[test]
    fn counts_on_a_small_example() {
        let m = detection_metrics(&[1, -1, 1, -1], &[1, 1, -1, -1]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.tpr, Some(0.5));
        assert_eq!(m.fpr, Some(0.5));
        let all = detection_metrics(&[1, -1], &[1, -1]).unwrap();
        assert_eq!((all.accuracy, all.fpr), (1.0, Some(0.0)));
    }

    #[test]
    fn tpr_absent_without_positives() {
        let m = detection_metrics(&[-1, 1], &[-1, -1]).unwrap();
        assert_eq!(m.tpr, None);
        assert_eq!(m.fpr, Some(0.5));
    }

    #[test]
    fn auroc_edge_cases() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[-1, -1, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 6], &[1, -1, 1, -1, 1, -1]).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    fn person(points: [(f32, f32); NUM_KEYPOINTS]) -> SkeletonPose {
        SkeletonPose {
            person_id: 0,
            keypoints: points.map(|(x, y)| Keypoint {
                x,
                y,
                visible: true,
            }),
        }
    }

    #[test]
    fn pck_boundary_is_inclusive() {
        let mut pts = [(0.5f32, 0.5f32); NUM_KEYPOINTS];
        pts[0] = (0.0, 0.0);
        pts[1] = (0.3, 0.4); // bbox diagonal 0.5
        let gt = person(pts);
        let mut shifted = gt.clone();
        shifted.keypoints[2].x += 0.125; // 0.25 · b
        let r = pck(&[shifted], &[gt.clone()], 0.25).unwrap();
        assert_eq!(r.per_keypoint[2], Some(1.0));
        assert_eq!(r.mpck, 1.0);
        let perfect = pck(&[gt.clone()], &[gt], 0.1).unwrap();
        assert_eq!(perfect.mpck, 1.0);
    }

    #[test]
    fn unmatched_ground_truth_counts_as_misses() {
        let gt = person([(0.5, 0.5); NUM_KEYPOINTS]);
        assert_eq!(pck(&[], &[gt], 0.5).unwrap().mpck, 0.0);
        assert!(pck(&[], &[], 0.5).is_err());
        assert!(PckAccumulator::new(1.0).is_err());
    }
}
