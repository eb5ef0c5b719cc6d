mod common;

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use securepose::numcore::Tensor;
use securepose::pose_features::{SkeletonPose, NUM_KEYPOINTS};
use securepose::scene_sim::*;

fn quiet_channel() -> ChannelModel {
    let mut ch = ChannelModel::indoor(0);
    ch.noise = NoiseConfig::none();
    ch
}

/// Strict 3×3 local maxima above `floor` in channel `j` of an `[H,W,J]` map.
fn peaks(jhm: &Tensor, j: usize, floor: f32) -> usize {
    let (h, w, c) = (jhm.shape()[0], jhm.shape()[1], jhm.shape()[2]);
    let at = |r: usize, q: usize| jhm.data()[(r * w + q) * c + j];
    let mut n = 0;
    for r in 0..h {
        for q in 0..w {
            let v = at(r, q);
            if v < floor {
                continue;
            }
            let mut is_max = true;
            for dr in -1i64..=1 {
                for dq in -1i64..=1 {
                    let (rr, qq) = (r as i64 + dr, q as i64 + dq);
                    if (dr, dq) != (0, 0) && rr >= 0 && qq >= 0 && rr < h as i64 && qq < w as i64 {
                        is_max &= at(rr as usize, qq as usize) < v;
                    }
                }
            }
            n += usize::from(is_max);
        }
    }
    n
}

fn min_lateral_gap(poses: &[SkeletonPose]) -> f32 {
    let mut gap = f32::INFINITY;
    for (i, a) in poses.iter().enumerate() {
        for b in &poses[i + 1..] {
            for j in 0..NUM_KEYPOINTS {
                let (ka, kb) = (a.keypoints[j], b.keypoints[j]);
                gap = gap.min((ka.x - kb.x).hypot(ka.y - kb.y));
            }
        }
    }
    gap
}

#[test]
fn empty_scene_has_no_people() {
    let tl = simulate_timeline(0, 2.0, 7.5, 1).unwrap();
    assert_eq!(tl.num_frames(), 16);
    assert!(tl.frames.iter().all(Vec::is_empty));
}

#[test]
fn timelines_are_deterministic() {
    assert_eq!(
        simulate_timeline(3, 2.0, 7.5, 9).unwrap(),
        simulate_timeline(3, 2.0, 7.5, 9).unwrap()
    );
    assert_ne!(
        simulate_timeline(3, 2.0, 7.5, 9).unwrap(),
        simulate_timeline(3, 2.0, 7.5, 10).unwrap()
    );
}

#[test]
fn walkers_cover_half_to_one_and_a_half_meters_per_second() {
    let mut walkers = 0;
    for seed in 0..40 {
        let tl = simulate_timeline(4, 3.0, 7.5, seed).unwrap();
        for p in tl.people.iter().filter(|p| p.behavior == Behavior::Walk) {
            walkers += 1;
            // path length over one second, robust to bouncing off the floor edge
            let steps = 1000;
            let mut len = 0.0;
            let mut prev = p.anchor_at(0.5);
            for s in 1..=steps {
                let cur = p.anchor_at(0.5 + s as f64 / steps as f64);
                len += (cur[0] - prev[0]).hypot(cur[1] - prev[1]);
                prev = cur;
            }
            assert!((0.5..=1.5).contains(&len), "walked {len} m in 1 s");
        }
    }
    assert!(walkers > 10);
}

#[test]
fn trajectories_are_continuous_and_visible() {
    for seed in 0..20 {
        let tl = simulate_timeline(4, 3.0, 7.5, seed).unwrap();
        for w in tl.anchors.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                assert!((a[0] - b[0]).hypot(a[1] - b[1]) < 0.5);
            }
        }
        for frame in &tl.frames {
            assert_eq!(frame.len(), 4);
            for p in frame {
                p.validate().unwrap();
            }
        }
    }
}

#[test]
fn empty_room_power_is_static_plus_noise() {
    let mut ch = ChannelModel::indoor(0);
    ch.noise = NoiseConfig {
        impulse_prob: 0.0,
        ..NoiseConfig::default()
    };
    let tl = simulate_timeline(0, 2.0, 7.5, 0).unwrap();
    let tr = synthesize_csi(&tl, &ch, 100.0, 5).unwrap();
    let sigma = 0.02 * ch.mean_static_power();
    for s in &tr.samples {
        for (p, &(re, im)) in s.power.iter().zip(ch.static_cfr.iter().flatten()) {
            assert!((p - (re * re + im * im)).abs() < 6.0 * sigma);
        }
    }
}

#[test]
fn power_is_invariant_to_phase_offsets() {
    for seed in 0..5 {
        let tl = simulate_timeline(3, 2.0, 7.5, seed).unwrap();
        let mut a = ChannelModel::indoor(seed);
        a.phase = PhaseOffsets::Random;
        let mut b = a.clone();
        b.phase = PhaseOffsets::Zero;
        let ta = synthesize_csi(&tl, &a, 100.0, 77).unwrap();
        let tb = synthesize_csi(&tl, &b, 100.0, 77).unwrap();
        assert_eq!(ta.len(), tb.len());
        for (x, y) in ta.samples.iter().zip(&tb.samples) {
            assert_eq!(x.t, y.t);
            for (p, q) in x.power.iter().zip(&y.power) {
                assert!((p - q).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn radial_reflector_matches_single_path_closed_form() {
    // co-located transmitter and receiver; one reflector receding at v
    let mut ch = quiet_channel();
    ch.tx = vec![[0.0, 0.0, 1.0]];
    ch.rx = vec![[0.0, 0.0, 1.0]];
    let hs = Complex64::new(0.6, -0.3);
    ch.static_cfr = vec![vec![(hs.re, hs.im); ch.subcarrier_hz.len()]];
    let (r0, v, amp, rate) = (2.0, 0.8, 0.5, 400.0);
    let n = 4096;
    let k = 7;
    let fk = ch.subcarrier_hz[k];
    let mut series = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate;
        let r = r0 + v * t;
        let h = ch.cfr(&[([r, 0.0, 1.0], amp)]);
        let p = h[0][k].norm_sqr();
        let d = 2.0 * r;
        let want = (hs
            + Complex64::from_polar(2.0 * amp / (r * r), -2.0 * PI * d * fk / SPEED_OF_LIGHT))
        .norm_sqr();
        assert!((p - want).abs() < 1e-9);
        series.push(p);
    }
    // dominant oscillation at 2v/λ
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = series
        .iter()
        .map(|p| Complex64::new(p - mean, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let peak = (1..n / 2)
        .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
        .unwrap();
    let got = peak as f64 * rate / n as f64;
    let want = 2.0 * v * fk / SPEED_OF_LIGHT;
    assert!(
        (got - want).abs() <= 2.0 * rate / n as f64,
        "{got} Hz vs {want} Hz"
    );
}

fn series_variances(tl: &SceneTimeline, ch: &ChannelModel) -> Vec<f64> {
    let tr = synthesize_csi(tl, ch, 100.0, 3).unwrap();
    let n = tr.len() as f64;
    (0..tr.meta.row_len())
        .map(|e| {
            let m = tr.samples.iter().map(|s| s.power[e]).sum::<f64>() / n;
            tr.samples
                .iter()
                .map(|s| (s.power[e] - m).powi(2))
                .sum::<f64>()
                / n
        })
        .collect()
}

#[test]
fn adding_a_person_increases_some_variance() {
    let ch = quiet_channel();
    for seed in 0..10 {
        let base = simulate_timeline(seed as usize % 4, 2.0, 7.5, seed).unwrap();
        let extra = simulate_timeline(1, 2.0, 7.5, 100 + seed).unwrap();
        let mut more = base.clone();
        let mut p = extra.people[0].clone();
        p.person_id = 99;
        more.people.push(p);
        let (a, b) = (series_variances(&base, &ch), series_variances(&more, &ch));
        assert!(b.iter().zip(&a).any(|(x, y)| x > y), "seed {seed}");
    }
}

#[test]
fn oracle_render_of_empty_and_single_person() {
    let cfg = VisualConfig::default();
    let (j, p) = render_visual_oracle(&[], &cfg).unwrap();
    assert!(j.data().iter().all(|&v| v == 0.0));
    assert!(p.data().iter().all(|&v| v == 0.0));
    assert_eq!(p.shape(), &[64, 64, 2, 13]);

    let tl = simulate_timeline(1, 1.0, 7.5, 4).unwrap();
    let (j, _) = render_visual_oracle(&tl.frames[3], &cfg).unwrap();
    for ch in 0..NUM_KEYPOINTS {
        assert_eq!(peaks(&j, ch, 0.5), 1, "channel {ch}");
    }
}

fn small_dataset(gops: usize, seed: u64) -> Dataset {
    let cfg = DatasetConfig {
        gops,
        ..Default::default()
    };
    generate_dataset(&cfg, seed).unwrap()
}

fn three_person_gop() -> GopSample {
    let cfg = DatasetConfig::default();
    let ch = cfg.channel();
    (0..200)
        .map(|s| simulate_gop(&cfg, &ch, 0, 3, s).unwrap())
        .find(|g| g.truth.iter().all(|f| min_lateral_gap(f) > 0.15))
        .expect("a well-separated 3-person scene")
}

#[test]
fn playback_of_an_empty_scene_blanks_the_video() {
    let cfg = DatasetConfig::default();
    let ch = cfg.channel();
    let target = three_person_gop();
    let mut source = simulate_gop(&cfg, &ch, 1, 0, 5).unwrap();
    source.id = 1;
    let ds = vec![target.clone(), source];
    let forged = inject_playback(
        &ds,
        &AttackSpec {
            kind: AttackKind::Playback,
            target: 0,
            source: Some(1),
            person_ids: vec![],
        },
    )
    .unwrap();
    assert_eq!(forged.label, GopLabel::Playback);
    assert_eq!(forged.rf, target.rf);
    assert!(forged.abnormal.iter().all(|f| f.len() == 3));
    let (jhm, _) = render_visual_sequence(&forged.visual, &cfg.visual).unwrap();
    assert!(jhm.iter().all(|j| j.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn playback_swap_round_trips() {
    let ds = small_dataset(6, 2);
    let auth: Vec<GopSample> = ds
        .samples
        .iter()
        .map(|s| GopSample::authentic(s.id, s.rf.clone(), s.truth.clone(), s.low_quality))
        .collect();
    let spec = |t, s| AttackSpec {
        kind: AttackKind::Playback,
        target: t,
        source: Some(s),
        person_ids: vec![],
    };
    let a_forged = inject_playback(&auth, &spec(0, 1)).unwrap();
    let b_forged = inject_playback(&auth, &spec(1, 0)).unwrap();
    assert_eq!(a_forged.visual, auth[1].visual);
    let swapped = vec![a_forged, b_forged];
    let a_back = inject_playback(&swapped, &spec(0, 1)).unwrap();
    assert_eq!(a_back.visual, auth[0].visual);
    assert_eq!(a_back.rf, auth[0].rf);
    assert!(inject_playback(&auth, &spec(0, 0)).is_err());
    assert!(inject_playback(&auth, &spec(0, 99)).is_err());
}

#[test]
fn removing_two_of_three_drops_two_peaks() {
    let cfg = VisualConfig::default();
    let g = three_person_gop();
    let ids: Vec<u32> = g.truth[0].iter().map(|p| p.person_id).take(2).collect();
    let forged = inject_tampering(&g, &TamperEdit::Remove(ids)).unwrap();
    assert_eq!(forged.label, GopLabel::Tampering);
    assert_eq!(forged.rf, g.rf);
    for (before, after) in g.visual.iter().zip(&forged.visual) {
        let (jb, _) = render_visual_oracle(before, &cfg).unwrap();
        let (ja, _) = render_visual_oracle(after, &cfg).unwrap();
        for ch in 0..NUM_KEYPOINTS {
            assert_eq!(peaks(&jb, ch, 0.5) - peaks(&ja, ch, 0.5), 2, "channel {ch}");
        }
    }
    assert!(forged.abnormal.iter().all(|f| f.len() == 2));
}

#[test]
fn remove_all_matches_playback_of_empty() {
    let g = three_person_gop();
    let ids = g.truth[0].iter().map(|p| p.person_id).collect();
    let forged = inject_tampering(&g, &TamperEdit::Remove(ids)).unwrap();
    assert!(forged.visual.iter().all(Vec::is_empty));
    assert!(inject_tampering(&g, &TamperEdit::Remove(vec![42])).is_err());
}

#[test]
fn insert_then_remove_restores_the_sample() {
    let g = three_person_gop();
    let donor_src = simulate_timeline(1, 3.0, 7.5, 8).unwrap();
    let donor: Vec<Vec<SkeletonPose>> = donor_src.frames[3..15]
        .iter()
        .map(|f| {
            f.iter()
                .map(|p| SkeletonPose {
                    person_id: 50,
                    keypoints: p.keypoints,
                })
                .collect()
        })
        .collect();
    let inserted = inject_tampering(&g, &TamperEdit::Insert(donor.clone())).unwrap();
    assert_eq!(inserted.label, GopLabel::Tampering);
    assert!(inserted
        .abnormal
        .iter()
        .all(|f| f.len() == 1 && f[0].person_id == 50));
    let restored = inject_tampering(&inserted, &TamperEdit::Remove(vec![50])).unwrap();
    assert_eq!(restored, g);
    // donor ids may not clash with people already shown
    let mut clash = donor;
    clash
        .iter_mut()
        .flatten()
        .for_each(|p| p.person_id = g.truth[0][0].person_id);
    assert!(inject_tampering(&g, &TamperEdit::Insert(clash)).is_err());
}

#[test]
fn dataset_is_balanced_and_never_changes_rf() {
    let ds = small_dataset(60, 4);
    assert_eq!(ds.indices(Split::Train).len(), 42);
    for split in [Split::Train, Split::Test] {
        let idx = ds.indices(split);
        let forged = idx
            .iter()
            .filter(|&&i| ds.samples[i].label.is_forged())
            .count();
        let playback = idx
            .iter()
            .filter(|&&i| ds.samples[i].label == GopLabel::Playback)
            .count();
        assert_eq!(forged, (idx.len() as f64 / 2.0).round() as usize);
        assert!(playback.abs_diff(forged - playback) <= 1);
    }
    let cfg = ds.config.clone();
    for s in &ds.samples {
        assert_eq!(s.rf.shape(), &[12, 9, 30, 9]);
        assert!(s.rf.is_finite());
        if s.label == GopLabel::Playback {
            let src = s.attack.as_ref().unwrap().source.unwrap();
            assert_ne!(src, s.id);
            assert!(
                s.people() > 0 || ds.samples[src].people() > 0,
                "degenerate playback"
            );
        }
        if s.label.is_forged() {
            assert!(s.abnormal.iter().any(|f| !f.is_empty()));
        } else {
            assert_eq!(s.visual, s.truth);
        }
    }
    assert_eq!(generate_dataset(&cfg, 4).unwrap(), ds);
}

#[test]
fn written_datasets_are_reproducible() {
    let cfg = DatasetConfig {
        gops: 8,
        ..Default::default()
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m1 = write_dataset(&generate_dataset(&cfg, 7).unwrap(), d1.path(), true).unwrap();
    write_dataset(&generate_dataset(&cfg, 7).unwrap(), d2.path(), true).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(d1.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 1 + 8 * 5);
    for n in &names {
        assert_eq!(
            std::fs::read(d1.path().join(n)).unwrap(),
            std::fs::read(d2.path().join(n)).unwrap()
        );
    }
    let back = read_dataset(&m1).unwrap();
    assert_eq!(back, generate_dataset(&cfg, 7).unwrap());
}
