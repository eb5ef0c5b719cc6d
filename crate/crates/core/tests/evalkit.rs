mod common;

use proptest::prelude::*;
use rand::Rng;
use securepose::evalkit::*;
use securepose::numcore::Tensor;
use securepose::pose_features::{Keypoint, SkeletonPose, NUM_KEYPOINTS};

/// Pairwise AUROC: P(score_pos > score_neg) + ½·P(tie).
pub fn pairwise_auroc(scores: &[f64], labels: &[i8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 1) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| l == -1) {
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn random_scores(n: usize, seed: u64, levels: Option<u32>) -> (Vec<f64>, Vec<i8>) {
    let mut r = common::rng(seed);
    let labels: Vec<i8> = (0..n).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
    let scores = labels
        .iter()
        .map(|&l| {
            let s = r.random_range(-1.0..1.0) + 0.4 * l as f64;
            levels.map_or(s, |k| (s * k as f64).round() / k as f64)
        })
        .collect();
    (scores, labels)
}

#[test]
fn auroc_matches_the_pairwise_oracle() {
    for seed in 0..50 {
        let levels = if seed % 2 == 0 { Some(4) } else { None };
        let (s, l) = random_scores(20 + seed as usize * 3, seed, levels);
        let fast = auroc(&s, &l).unwrap();
        assert!((fast - pairwise_auroc(&s, &l)).abs() < 1e-9, "seed {seed}");
    }
}

#[test]
fn auroc_equals_the_trapezoidal_roc_integral() {
    for seed in 0..50 {
        let (s, l) = random_scores(40, 100 + seed, (seed % 2 == 0).then_some(3));
        let roc = roc_curve(&s, &l).unwrap();
        let area: f64 = roc
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum();
        assert!((area - auroc(&s, &l).unwrap()).abs() < 1e-9, "seed {seed}");
    }
}

#[test]
fn roc_curve_spans_the_unit_square() {
    let (s, l) = random_scores(30, 7, None);
    let roc = roc_curve(&s, &l).unwrap();
    assert_eq!(roc[0], (0.0, 0.0));
    assert_eq!(*roc.last().unwrap(), (1.0, 1.0));
    assert!(roc.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
}

#[test]
fn confusion_counts_match_a_loop_oracle() {
    let mut r = common::rng(3);
    for _ in 0..30 {
        let labels: Vec<i8> = (0..50)
            .map(|_| if r.random_bool(0.5) { 1 } else { -1 })
            .collect();
        let decisions: Vec<i8> = (0..50)
            .map(|_| if r.random_bool(0.5) { 1 } else { -1 })
            .collect();
        let m = detection_metrics(&decisions, &labels).unwrap();
        let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
        for (d, l) in decisions.iter().zip(&labels) {
            match (d, l) {
                (1, 1) => tp += 1.0,
                (1, _) => fp += 1.0,
                (_, 1) => fn_ += 1.0,
                _ => tn += 1.0,
            }
        }
        assert_eq!(m.accuracy, (tp + tn) / 50.0);
        assert_eq!(m.tpr, Some(tp / (tp + fn_)));
        assert_eq!(m.fpr, Some(fp / (fp + tn)));
    }
}

#[test]
fn published_rates_reproduce_the_reported_accuracy() {
    let labels: Vec<i8> = (0..2000).map(|i| if i < 1000 { 1 } else { -1 }).collect();
    let decisions: Vec<i8> = (0..2000)
        .map(|i| match i {
            0..992 => 1,
            1000..1018 => 1,
            _ => -1,
        })
        .collect();
    let m = detection_metrics(&decisions, &labels).unwrap();
    assert!((m.tpr.unwrap() - 0.992).abs() < 1e-12);
    assert!((m.fpr.unwrap() - 0.018).abs() < 1e-12);
    assert!((m.accuracy - 0.987).abs() < 1e-12);
}

fn random_pose(r: &mut impl Rng, id: u32, cx: f32) -> SkeletonPose {
    let mut keypoints = [Keypoint {
        x: 0.0,
        y: 0.0,
        visible: false,
    }; NUM_KEYPOINTS];
    for k in keypoints.iter_mut() {
        *k = Keypoint {
            x: cx + r.random_range(-0.08..0.08),
            y: r.random_range(0.2..0.8),
            visible: r.random_bool(0.85),
        };
    }
    SkeletonPose {
        person_id: id,
        keypoints,
    }
}

fn jitter(p: &SkeletonPose, r: &mut impl Rng, scale: f32) -> SkeletonPose {
    let mut q = p.clone();
    for k in q.keypoints.iter_mut() {
        k.x += r.random_range(-scale..scale);
        k.y += r.random_range(-scale..scale);
        k.visible = k.visible || r.random_bool(0.1);
        if r.random_bool(0.05) {
            k.visible = false;
        }
    }
    q
}

fn diag(p: &SkeletonPose) -> f64 {
    let [x0, y0, x1, y1] = p.bbox().unwrap();
    (((x1 - x0) as f64).powi(2) + ((y1 - y0) as f64).powi(2)).sqrt()
}

#[test]
fn pck_matches_a_loop_oracle() {
    let mut r = common::rng(4);
    for _ in 0..40 {
        // Well-separated people, so the matching is the identity.
        let gt: Vec<SkeletonPose> = (0..3)
            .map(|i| random_pose(&mut r, i, 0.15 + 0.35 * i as f32))
            .collect();
        let pred: Vec<SkeletonPose> = gt.iter().map(|g| jitter(g, &mut r, 0.05)).collect();
        for rho in [0.05, 0.1, 0.25, 0.5] {
            let report = pck(&pred, &gt, rho).unwrap();
            let mut hits = [0u32; NUM_KEYPOINTS];
            let mut totals = [0u32; NUM_KEYPOINTS];
            for (g, p) in gt.iter().zip(&pred) {
                for j in 0..NUM_KEYPOINTS {
                    if !g.keypoints[j].visible {
                        continue;
                    }
                    totals[j] += 1;
                    let dx = (p.keypoints[j].x - g.keypoints[j].x) as f64;
                    let dy = (p.keypoints[j].y - g.keypoints[j].y) as f64;
                    if p.keypoints[j].visible && (dx * dx + dy * dy).sqrt() <= rho * diag(g) {
                        hits[j] += 1;
                    }
                }
            }
            for j in 0..NUM_KEYPOINTS {
                let expect = (totals[j] > 0).then(|| hits[j] as f64 / totals[j] as f64);
                assert_eq!(report.per_keypoint[j], expect);
            }
        }
    }
}

#[test]
fn people_are_matched_by_mean_distance() {
    let mut r = common::rng(5);
    let gt: Vec<SkeletonPose> = (0..3)
        .map(|i| random_pose(&mut r, i, 0.15 + 0.35 * i as f32))
        .collect();
    let pred = vec![jitter(&gt[2], &mut r, 0.01), jitter(&gt[0], &mut r, 0.01)];
    assert_eq!(match_people(&pred, &gt), vec![Some(1), None, Some(0)]);
}

#[test]
fn perfect_predictions_score_one() {
    let mut r = common::rng(6);
    let gt: Vec<SkeletonPose> = (0..2)
        .map(|i| random_pose(&mut r, i, 0.3 + 0.4 * i as f32))
        .collect();
    assert_eq!(pck(&gt, &gt, 0.1).unwrap().mpck, 1.0);
    assert_eq!(pck(&[], &gt, 0.1).unwrap().mpck, 0.0);
}

#[test]
fn pck_thresholds_outside_the_unit_interval_are_rejected() {
    assert!(PckAccumulator::new(0.0).is_err());
    assert!(PckAccumulator::new(1.0).is_err());
    assert!(pck(&[], &[], 0.5).is_err());
}

proptest! {
    #[test]
    fn mpck_is_monotone_in_rho(seed in 0u64..1000) {
        let mut r = common::rng(seed);
        let gt: Vec<SkeletonPose> = (0..3).map(|i| random_pose(&mut r, i, 0.2 + 0.3 * i as f32)).collect();
        let pred: Vec<SkeletonPose> = gt.iter().take(2).map(|g| jitter(g, &mut r, 0.2)).collect();
        let mut last = 0.0;
        for k in 1..20 {
            let m = pck(&pred, &gt, k as f64 * 0.05).unwrap().mpck;
            prop_assert!(m >= last);
            last = m;
        }
    }

    #[test]
    fn tensors_round_trip_bit_identically(seed in 0u64..1000, rank in 0usize..4) {
        let mut r = common::rng(seed);
        let shape: Vec<usize> = (0..rank).map(|_| r.random_range(1..5)).collect();
        let mut t = common::uniform(&shape, &mut r);
        if let Some(v) = t.data_mut().first_mut() {
            *v = f32::from_bits(r.random());
        }
        let items = vec![("w".to_string(), t.clone()), ("s".to_string(), Tensor::scalar(2.5))];
        let bytes = encode_tensors(&items).unwrap();
        let back = decode_tensors(&bytes).unwrap();
        prop_assert_eq!(back.len(), 2);
        prop_assert_eq!(&back[0].0, "w");
        prop_assert_eq!(back[0].1.shape(), t.shape());
        let same = back[0].1.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
        prop_assert_eq!(encode_tensors(&back).unwrap(), bytes);
    }
}

#[test]
fn tensor_files_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.spt");
    let t = common::uniform(&[3, 4, 2], &mut common::rng(8));
    save_tensor(&path, "x", &t).unwrap();
    assert_eq!(load_tensor(&path).unwrap(), t);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert!(load_tensor(&path).is_err());
}

#[test]
fn decisions_round_trip() {
    let rows = vec![
        DecisionRow {
            gop_id: 0,
            score: 0.25,
            label: 1,
        },
        DecisionRow {
            gop_id: 7,
            score: -0.875,
            label: -1,
        },
        DecisionRow {
            gop_id: 3,
            score: 1.0e-7,
            label: 1,
        },
    ];
    let text = format_decisions(&rows);
    assert!(text.starts_with("gop_id,score,label\n"));
    assert_eq!(parse_decisions(&text, "d.csv".as_ref()).unwrap(), rows);
}

#[test]
fn malformed_decisions_are_rejected() {
    for text in [
        "",
        "id,score\n",
        "gop_id,score,label\n1,0.5\n",
        "gop_id,score,label\nx,0.5,1\n",
    ] {
        assert!(parse_decisions(text, "d.csv".as_ref()).is_err(), "{text:?}");
    }
}

#[test]
fn json_writes_are_atomic_and_readable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("m.json");
    let report = MetricsReport {
        accuracy: Some(0.5),
        ..MetricsReport::default()
    };
    write_json(&path, &report).unwrap();
    let back: MetricsReport = read_json(&path).unwrap();
    assert_eq!(back, report);
    let names: Vec<_> = std::fs::read_dir(path.parent().unwrap()).unwrap().collect();
    assert_eq!(names.len(), 1);
}
