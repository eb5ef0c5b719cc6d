mod common;

use securepose::csi2pose::*;
use securepose::csi_ingest::RfFrame;
use securepose::numcore::Tensor;
use securepose::scene_sim::{generate_dataset, DatasetConfig, GopSample};

fn small_config(gop_size: usize) -> PoseNetConfig {
    PoseNetConfig {
        base_width: 8,
        head_width: 8,
        up_width: 4,
        gop_size,
        epochs: 1,
        ..PoseNetConfig::default()
    }
}

fn random_frames(m: usize, cfg: &PoseNetConfig, seed: u64) -> Vec<RfFrame> {
    let mut r = common::rng(seed);
    (0..m)
        .map(|_| {
            RfFrame(common::uniform(
                &[cfg.links, cfg.subcarriers, cfg.samples_per_frame],
                &mut r,
            ))
        })
        .collect()
}

fn perturbed(model: &PoseModel, prefix: &str) -> PoseModel {
    let mut out = model.clone();
    for name in model.submodule_params(prefix) {
        let t = out.params.get(&name).unwrap().map(|v| v + 0.05);
        out.params.insert(name, t);
    }
    out
}

#[test]
fn default_output_shapes() {
    let cfg = PoseNetConfig::default();
    let model = PoseModel::init(cfg.clone(), 1).unwrap();
    let frames = random_frames(2, &cfg, 2);
    let feats = model.project(&frames).unwrap();
    assert_eq!(feats.len(), 2);
    assert_eq!(feats[0].shape(), &[16, 16, 32]);
    let out = model.forward(&frames).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out[0].0.shape(), &[64, 64, 14]);
    assert_eq!(out[0].1.shape(), &[64, 64, 2, 13]);
}

#[test]
fn full_gop_gives_one_pair_per_frame() {
    let cfg = small_config(12);
    let model = PoseModel::init(cfg.clone(), 3).unwrap();
    let out = model.forward(&random_frames(12, &cfg, 4)).unwrap();
    assert_eq!(out.len(), 12);
    assert!(out
        .iter()
        .all(|(j, p)| j.data().iter().chain(p.data()).all(|v| v.is_finite())));
}

#[test]
fn zero_input_is_deterministic_and_finite() {
    let cfg = small_config(3);
    let model = PoseModel::init(cfg.clone(), 5).unwrap();
    let zero = vec![
        RfFrame(Tensor::zeros([
            cfg.links,
            cfg.subcarriers,
            cfg.samples_per_frame
        ]));
        3
    ];
    let a = model.project(&zero).unwrap();
    assert_eq!(a, model.project(&zero).unwrap());
    assert!(a.iter().all(|t| t.data().iter().all(|v| v.is_finite())));
}

#[test]
fn identical_frames_give_identical_features() {
    let cfg = small_config(4);
    let model = PoseModel::init(cfg.clone(), 6).unwrap();
    let f = random_frames(1, &cfg, 7).remove(0);
    let other = random_frames(1, &cfg, 8).remove(0);
    let feats = model.project(&[f.clone(), other, f]).unwrap();
    assert_eq!(feats[0], feats[2]);
}

#[test]
fn refiner_preserves_time_constancy() {
    let cfg = small_config(5);
    let model = PoseModel::init(cfg.clone(), 9).unwrap();
    let mut r = common::rng(10);
    let f = common::uniform(&[16, 16, 8], &mut r);
    let out = model.refine(&vec![f; 5]).unwrap();
    assert_eq!(out.len(), 5);
    for t in &out[1..] {
        for (a, b) in t.data().iter().zip(out[0].data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

#[test]
fn single_frame_gop_is_supported() {
    let cfg = small_config(1);
    let model = PoseModel::init(cfg.clone(), 11).unwrap();
    let out = model.forward(&random_frames(1, &cfg, 12)).unwrap();
    assert_eq!(out.len(), 1);
}

#[test]
fn refiner_uses_time() {
    let cfg = small_config(4);
    let model = PoseModel::init(cfg.clone(), 13).unwrap();
    let mut r = common::rng(14);
    let feats: Vec<Tensor> = (0..4)
        .map(|_| common::uniform(&[16, 16, 8], &mut r))
        .collect();
    let a = model.refine(&feats).unwrap();
    let mut swapped = feats.clone();
    swapped.swap(0, 2);
    let b = model.refine(&swapped).unwrap();
    assert_ne!(a[1], b[1]);
}

#[test]
fn heads_share_no_parameters() {
    let cfg = small_config(2);
    let model = PoseModel::init(cfg.clone(), 15).unwrap();
    let frames = random_frames(2, &cfg, 16);
    let base = model.forward(&frames).unwrap();
    let moved = perturbed(&model, "jhm.").forward(&frames).unwrap();
    for (a, b) in base.iter().zip(&moved) {
        assert_ne!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}

fn tiny_samples(n: usize, gop_size: usize) -> Vec<GopSample> {
    let cfg = DatasetConfig {
        gops: 8,
        min_people: 1,
        max_people: 2,
        gop_size,
        ..DatasetConfig::default()
    };
    generate_dataset(&cfg, 3)
        .unwrap()
        .samples
        .iter()
        .take(n)
        .map(|s| GopSample::authentic(s.id, s.rf.clone(), s.truth.clone(), s.low_quality))
        .collect()
}

#[test]
fn one_step_moves_every_submodule() {
    let cfg = PoseNetConfig {
        zero_init_outputs: false,
        ..small_config(3)
    };
    let samples = tiny_samples(1, 3);
    let mut model = PoseModel::init(cfg.clone(), 17).unwrap();
    let before = model.clone();
    let (j, p) = visual_targets(&samples[0], &cfg.visual).unwrap();
    model
        .train_step(&samples[0].rf_frames(), &j, &p, &cfg.optim)
        .unwrap();
    for prefix in ["proj.", "res.", "refine.", "jhm.", "paf."] {
        let changed = model
            .submodule_params(prefix)
            .iter()
            .any(|n| model.params.get(n) != before.params.get(n));
        assert!(changed, "{prefix} did not move");
    }
}

#[test]
fn training_rejects_forged_or_empty_sets() {
    let cfg = small_config(3);
    assert!(train_pose(&[], &cfg, 0, |_| {}).is_err());
    let ds = generate_dataset(
        &DatasetConfig {
            gops: 8,
            min_people: 1,
            gop_size: 3,
            ..DatasetConfig::default()
        },
        4,
    )
    .unwrap();
    let forged: Vec<&GopSample> = ds.samples.iter().filter(|s| s.label.is_forged()).collect();
    assert!(train_pose(&forged, &cfg, 0, |_| {}).is_err());
}

#[test]
fn training_is_deterministic_and_loss_falls() {
    let cfg = PoseNetConfig {
        epochs: 3,
        ..small_config(3)
    };
    let samples = tiny_samples(2, 3);
    let refs: Vec<&GopSample> = samples.iter().collect();
    let (a, log) = train_pose(&refs, &cfg, 18, |_| {}).unwrap();
    let (b, _) = train_pose(&refs, &cfg, 18, |_| {}).unwrap();
    assert_eq!(a, b);
    assert_eq!(log.len(), 3);
    assert!(log[2].mean_loss < log[0].mean_loss, "{log:?}");
}

#[test]
fn zero_epochs_returns_the_initial_weights() {
    let cfg = PoseNetConfig {
        epochs: 0,
        ..small_config(3)
    };
    let samples = tiny_samples(1, 3);
    let (model, log) = train_pose(&[&samples[0]], &cfg, 19, |_| {}).unwrap();
    assert!(log.is_empty());
    let init = PoseModel::init(cfg, 19).unwrap();
    for name in init.params.names() {
        assert_eq!(model.params.get(name), init.params.get(name), "{name}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pose.spt");
    let model = PoseModel::init(small_config(2), 20).unwrap();
    model.save(&path).unwrap();
    assert!(config_path(&path).exists());
    assert_eq!(PoseModel::load(&path).unwrap(), model);
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        PoseNetConfig {
            height: 48,
            ..PoseNetConfig::default()
        },
        PoseNetConfig {
            residual_blocks: 5,
            ..PoseNetConfig::default()
        },
        PoseNetConfig {
            temporal_kernel: 2,
            ..PoseNetConfig::default()
        },
    ] {
        assert!(PoseModel::init(cfg, 0).is_err());
    }
}
