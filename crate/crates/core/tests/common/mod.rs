#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use securepose::numcore::{Graph, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0f32..1.0))
}

/// Builds `f(inputs)` on a fresh graph and reduces it to a scalar by a fixed
/// random linear projection, so every output element influences the loss.
fn projected_loss(
    f: &dyn Fn(&mut Graph, &[Var]) -> Var,
    inputs: &[Tensor],
    projection_seed: u64,
) -> (Graph, Vec<Var>, Var) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let y = f(&mut g, &vars);
    let n = g.value(y).len();
    let flat = g.reshape(y, &[1, n]).unwrap();
    let mut r = rng(projection_seed);
    let proj = g.input(uniform(&[n, 1], &mut r));
    let zero = g.input(Tensor::zeros([1]));
    let loss = g.dense(flat, proj, zero).unwrap();
    (g, vars, loss)
}

/// Largest guarded relative error `|a − n| / max(|a|, |n|, 1)` between the
/// analytic gradient and central differences with step `h`, over all inputs.
pub fn max_grad_error(
    f: impl Fn(&mut Graph, &[Var]) -> Var,
    inputs: &[Tensor],
    h: f32,
    projection_seed: u64,
) -> f32 {
    let (g, vars, loss) = projected_loss(&f, inputs, projection_seed);
    let grads = g.backward(loss).unwrap();
    let mut worst = 0.0f32;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape().to_vec()));
        for i in 0..inputs[k].len() {
            let eval = |delta: f32| {
                let mut perturbed = inputs.to_vec();
                perturbed[k].data_mut()[i] += delta;
                let (g, _, l) = projected_loss(&f, &perturbed, projection_seed);
                g.value(l).item() as f64
            };
            let numeric = ((eval(h) - eval(-h)) / (2.0 * h as f64)) as f32;
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

/// Exhaustive maximum-total-score matching of `(a, b, score)` pairs, each endpoint
/// used at most once. Ties go to the lexicographically smallest pair list.
pub fn brute_force_match(pairs: &[(usize, usize, f32)]) -> (f64, Vec<(usize, usize)>) {
    fn go(
        pairs: &[(usize, usize, f32)],
        i: usize,
        chosen: &mut Vec<usize>,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        if i == pairs.len() {
            let total: f64 = chosen.iter().map(|&k| pairs[k].2 as f64).sum();
            let mut set: Vec<(usize, usize)> =
                chosen.iter().map(|&k| (pairs[k].0, pairs[k].1)).collect();
            set.sort_unstable();
            if total > best.0 + 1e-9 || ((total - best.0).abs() <= 1e-9 && set < best.1) {
                *best = (total, set);
            }
            return;
        }
        go(pairs, i + 1, chosen, best);
        let (a, b, _) = pairs[i];
        if chosen.iter().all(|&k| pairs[k].0 != a && pairs[k].1 != b) {
            chosen.push(i);
            go(pairs, i + 1, chosen, best);
            chosen.pop();
        }
    }
    let mut best = (0.0, Vec::new());
    go(pairs, 0, &mut Vec::new(), &mut best);
    best
}

/// Uniform magnitudes in `[0.2, 1]` with random signs, away from ReLU and hinge kinks.
pub fn away_from_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.2f32..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Values whose per-pixel channel entries differ by at least 0.1.
fn separated_channels(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let c = *shape.last().unwrap();
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n / c {
        let mut levels: Vec<f32> = (0..c).map(|i| i as f32 * 0.3).collect();
        for i in (1..c).rev() {
            levels.swap(i, rng.random_range(0..=i));
        }
        data.extend(levels.iter().map(|v| v + rng.random_range(0.0f32..0.1)));
    }
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Finite-difference check of every differentiable graph op and both pose
/// losses for one seed; returns `(name, max relative error)` per check.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, f32)> {
    use securepose::numcore::BnMode;
    use securepose::pose_features::{jhm_loss_node, paf_loss_node, LossWeights};

    let mut r = rng(seed);
    let h = 1e-2;
    let mut out = Vec::new();
    let mut check =
        |name: &'static str, f: &dyn Fn(&mut Graph, &[Var]) -> Var, inputs: Vec<Tensor>| {
            out.push((name, max_grad_error(f, &inputs, h, seed ^ 0xabc)));
        };

    check(
        "conv2d stride 1 pad 1",
        &|g, v| g.conv2d(v[0], v[1], 1, 1).unwrap(),
        vec![uniform(&[5, 5, 2], &mut r), uniform(&[3, 3, 2, 3], &mut r)],
    );
    check(
        "conv2d stride 2",
        &|g, v| g.conv2d(v[0], v[1], 2, 0).unwrap(),
        vec![uniform(&[7, 7, 2], &mut r), uniform(&[3, 3, 2, 2], &mut r)],
    );
    check(
        "conv2d batched",
        &|g, v| g.conv2d(v[0], v[1], 1, 1).unwrap(),
        vec![
            uniform(&[2, 4, 4, 2], &mut r),
            uniform(&[3, 3, 2, 2], &mut r),
        ],
    );
    check(
        "conv3d",
        &|g, v| g.conv3d(v[0], v[1], 1, 1).unwrap(),
        vec![
            uniform(&[3, 4, 4, 2], &mut r),
            uniform(&[3, 3, 3, 2, 2], &mut r),
        ],
    );
    check(
        "conv3d edge-padded time",
        &|g, v| {
            let p = g.edge_pad(v[0], 1).unwrap();
            g.conv3d_padded(p, v[1], 1, [0, 1, 1]).unwrap()
        },
        vec![
            uniform(&[2, 3, 3, 2], &mut r),
            uniform(&[3, 3, 3, 2, 2], &mut r),
        ],
    );
    check(
        "edge pad",
        &|g, v| g.edge_pad(v[0], 2).unwrap(),
        vec![uniform(&[2, 3, 3, 2], &mut r)],
    );
    check(
        "add bias",
        &|g, v| g.add_bias(v[0], v[1]).unwrap(),
        vec![uniform(&[3, 3, 4], &mut r), uniform(&[4], &mut r)],
    );
    check(
        "add",
        &|g, v| g.add(v[0], v[1]).unwrap(),
        vec![uniform(&[3, 4], &mut r), uniform(&[3, 4], &mut r)],
    );
    check(
        "bilinear resize",
        &|g, v| g.resize_bilinear(v[0], 5, 7).unwrap(),
        vec![uniform(&[3, 4, 2], &mut r)],
    );
    check(
        "upsample 2x",
        &|g, v| g.upsample2x(v[0]).unwrap(),
        vec![uniform(&[2, 3, 3, 2], &mut r)],
    );
    check(
        "batch norm train",
        &|g, v| {
            g.batch_norm(v[0], v[1], v[2], BnMode::Train, 1e-5, None)
                .unwrap()
        },
        vec![
            uniform(&[3, 3, 3, 4], &mut r),
            uniform(&[4], &mut r),
            uniform(&[4], &mut r),
        ],
    );
    let (mean, var) = (
        uniform(&[4], &mut r),
        uniform(&[4], &mut r).map(|v| v.abs() + 0.5),
    );
    check(
        "batch norm infer",
        &|g, v| {
            g.batch_norm(v[0], v[1], v[2], BnMode::Infer, 1e-5, Some((&mean, &var)))
                .unwrap()
        },
        vec![
            uniform(&[2, 3, 3, 4], &mut r),
            uniform(&[4], &mut r),
            uniform(&[4], &mut r),
        ],
    );
    check(
        "relu",
        &|g, v| g.relu(v[0]),
        vec![away_from_zero(&[4, 5], &mut r)],
    );
    check("tanh", &|g, v| g.tanh(v[0]), vec![uniform(&[4, 5], &mut r)]);
    check(
        "channel max",
        &|g, v| g.channel_max(v[0]),
        vec![separated_channels(&[3, 3, 4], &mut r)],
    );
    check(
        "dense",
        &|g, v| g.dense(v[0], v[1], v[2]).unwrap(),
        vec![
            uniform(&[3, 5], &mut r),
            uniform(&[5, 4], &mut r),
            uniform(&[4], &mut r),
        ],
    );
    check(
        "reshape",
        &|g, v| g.reshape(v[0], &[6, 2]).unwrap(),
        vec![uniform(&[3, 4], &mut r)],
    );
    check("sum", &|g, v| g.sum(v[0]), vec![uniform(&[3, 4], &mut r)]);
    check(
        "scale",
        &|g, v| g.scale(v[0], -1.7),
        vec![uniform(&[3, 4], &mut r)],
    );
    let (target, weights) = (
        uniform(&[3, 4], &mut r),
        uniform(&[3, 4], &mut r).map(f32::abs),
    );
    check(
        "weighted squared error",
        &|g, v| {
            g.weighted_sq_err(v[0], target.clone(), weights.clone())
                .unwrap()
        },
        vec![uniform(&[3, 4], &mut r)],
    );
    let labels: Vec<f32> = (0..6)
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    check(
        "mean hinge",
        &|g, v| g.mean_hinge(v[0], &labels).unwrap(),
        vec![uniform(&[6, 1], &mut r).map(|v| 0.8 * v)],
    );
    check(
        "global norm",
        &|g, v| g.global_norm(&[v[0], v[1]]),
        vec![away_from_zero(&[3, 2], &mut r), uniform(&[4], &mut r)],
    );
    let w = LossWeights::default();
    let s_gt = uniform(&[4, 4, 3], &mut r).map(f32::abs);
    check(
        "jhm loss",
        &|g, v| jhm_loss_node(g, v[0], &s_gt, &w).unwrap(),
        vec![uniform(&[4, 4, 3], &mut r)],
    );
    let l_gt = uniform(&[4, 4, 2, 3], &mut r);
    check(
        "paf loss",
        &|g, v| paf_loss_node(g, v[0], &l_gt, &w).unwrap(),
        vec![uniform(&[4, 4, 2, 3], &mut r)],
    );
    let l_seq = uniform(&[2, 3, 3, 2, 3], &mut r);
    check(
        "paf loss over a sequence",
        &|g, v| paf_loss_node(g, v[0], &l_seq, &w).unwrap(),
        vec![uniform(&[2, 3, 3, 6], &mut r)],
    );
    out
}

/// A pipeline small enough to run every stage in seconds.
pub fn tiny_pipeline(out: &std::path::Path, seed: u64) -> securepose::evalkit::PipelineConfig {
    let mut cfg = securepose::evalkit::PipelineConfig {
        seed,
        out_dir: out.to_path_buf(),
        bench_gops: 3,
        ..Default::default()
    };
    cfg.dataset.gops = 24;
    cfg.dataset.gop_size = 3;
    cfg.dataset.min_people = 1;
    cfg.dataset.max_people = 2;
    cfg.dataset.visual.height = 32;
    cfg.dataset.visual.width = 32;
    cfg.pose.base_width = 8;
    cfg.pose.head_width = 8;
    cfg.pose.up_width = 4;
    cfg.pose.epochs = 1;
    cfg.detector.epochs = 2;
    cfg.detector.batch_size = 8;
    cfg.harmonize();
    cfg
}
