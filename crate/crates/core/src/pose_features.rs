//! Joint heat maps (JHM), part affinity fields (PAF) and the element-wise
//! weighted cross-modal losses used to train the CSI pose network.
//!
//! Layouts are channel-last: a JHM is `[H, W, J]` and a PAF is `[H, W, 2, C]`
//! with the vector component (x then y) before the limb index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Graph, Tensor, Var};

/// Number of body keypoints in the Body-14 model.
pub const NUM_KEYPOINTS: usize = 14;
/// Number of limbs connecting the Body-14 keypoints.
pub const NUM_LIMBS: usize = 13;

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose",
    "neck",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
    "l_ankle",
    "r_ankle",
];

/// Limbs as (from, to) keypoint indices. Together they form a spanning tree rooted at the neck.
pub const LIMBS: [(usize, usize); NUM_LIMBS] = [
    (1, 0),
    (1, 2),
    (1, 3),
    (2, 4),
    (4, 6),
    (3, 5),
    (5, 7),
    (1, 8),
    (1, 9),
    (8, 10),
    (10, 12),
    (9, 11),
    (11, 13),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    /// Normalized image coordinates in `[0, 1]`.
    pub x: f32,
    pub y: f32,
    pub visible: bool,
}

/// One person's Body-14 skeleton in normalized image coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonPose {
    pub person_id: u32,
    pub keypoints: [Keypoint; NUM_KEYPOINTS],
}

impl SkeletonPose {
    pub fn visible_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.visible).count()
    }

    /// Axis-aligned bounding box `(min_x, min_y, max_x, max_y)` over visible keypoints.
    pub fn bbox(&self) -> Option<[f32; 4]> {
        let vis = self.keypoints.iter().filter(|k| k.visible);
        vis.fold(None, |acc: Option<[f32; 4]>, k| {
            Some(match acc {
                None => [k.x, k.y, k.x, k.y],
                Some([a, b, c, d]) => [a.min(k.x), b.min(k.y), c.max(k.x), d.max(k.y)],
            })
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (j, k) in self.keypoints.iter().enumerate() {
            let inside = (0.0..=1.0).contains(&k.x) && (0.0..=1.0).contains(&k.y);
            if k.visible && !inside {
                return Err(Error::invalid(format!(
                    "person {} keypoint {} visible outside the image",
                    self.person_id, KEYPOINT_NAMES[j]
                )));
            }
        }
        Ok(())
    }
}

/// Map normalized coordinates onto pixel coordinates `(col, row)`; `[0,1]` spans the pixel centers.
pub fn to_pixel(x: f32, y: f32, h: usize, w: usize) -> (f32, f32) {
    (x * (w - 1) as f32, y * (h - 1) as f32)
}

pub fn to_normalized(col: f32, row: f32, h: usize, w: usize) -> (f32, f32) {
    (col / (w - 1) as f32, row / (h - 1) as f32)
}

/// Ground-truth JHM: channel `j` is the max over people of a Gaussian centered
/// on each visible keypoint `j`.
pub fn render_jhm(poses: &[SkeletonPose], h: usize, w: usize, sigma: f32) -> Result<Tensor> {
    if sigma <= 0.0 {
        return Err(Error::invalid("sigma must be positive"));
    }
    let mut out = Tensor::zeros([h, w, NUM_KEYPOINTS]);
    let radius = (4.0 * sigma).ceil() as isize;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let data = out.data_mut();
    for pose in poses {
        for (j, k) in pose.keypoints.iter().enumerate() {
            if !k.visible {
                continue;
            }
            let (cx, cy) = to_pixel(k.x, k.y, h, w);
            let (c0, r0) = (cx.round() as isize, cy.round() as isize);
            for row in (r0 - radius).max(0)..=(r0 + radius).min(h as isize - 1) {
                for col in (c0 - radius).max(0)..=(c0 + radius).min(w as isize - 1) {
                    let d2 = (col as f32 - cx).powi(2) + (row as f32 - cy).powi(2);
                    let v = (-d2 * inv).exp();
                    let idx = (row as usize * w + col as usize) * NUM_KEYPOINTS + j;
                    data[idx] = data[idx].max(v);
                }
            }
        }
    }
    Ok(out)
}

/// Ground-truth PAF: pixels within `limb_width` of a limb segment hold the
/// limb's unit direction; overlapping people are averaged.
pub fn render_paf(poses: &[SkeletonPose], h: usize, w: usize, limb_width: f32) -> Result<Tensor> {
    if limb_width <= 0.0 {
        return Err(Error::invalid("limb width must be positive"));
    }
    let mut sum = vec![0.0f32; h * w * 2 * NUM_LIMBS];
    let mut count = vec![0u32; h * w * NUM_LIMBS];
    for pose in poses {
        for (c, &(a, b)) in LIMBS.iter().enumerate() {
            let (ka, kb) = (pose.keypoints[a], pose.keypoints[b]);
            if !ka.visible || !kb.visible {
                continue;
            }
            let (ax, ay) = to_pixel(ka.x, ka.y, h, w);
            let (bx, by) = to_pixel(kb.x, kb.y, h, w);
            let (dx, dy) = (bx - ax, by - ay);
            let len = (dx * dx + dy * dy).sqrt();
            if len < 1e-6 {
                continue;
            }
            let (ux, uy) = (dx / len, dy / len);
            let pad = limb_width.ceil() as isize + 1;
            let rmin = (ay.min(by).floor() as isize - pad).max(0);
            let rmax = (ay.max(by).ceil() as isize + pad).min(h as isize - 1);
            let cmin = (ax.min(bx).floor() as isize - pad).max(0);
            let cmax = (ax.max(bx).ceil() as isize + pad).min(w as isize - 1);
            for row in rmin..=rmax {
                for col in cmin..=cmax {
                    let (px, py) = (col as f32 - ax, row as f32 - ay);
                    let along = px * ux + py * uy;
                    let across = (px * uy - py * ux).abs();
                    if along < 0.0 || along > len || across > limb_width {
                        continue;
                    }
                    let loc = row as usize * w + col as usize;
                    sum[(loc * 2) * NUM_LIMBS + c] += ux;
                    sum[(loc * 2 + 1) * NUM_LIMBS + c] += uy;
                    count[loc * NUM_LIMBS + c] += 1;
                }
            }
        }
    }
    for loc in 0..h * w {
        for c in 0..NUM_LIMBS {
            let n = count[loc * NUM_LIMBS + c];
            if n > 1 {
                sum[(loc * 2) * NUM_LIMBS + c] /= n as f32;
                sum[(loc * 2 + 1) * NUM_LIMBS + c] /= n as f32;
            }
        }
    }
    Tensor::new([h, w, 2, NUM_LIMBS], sum)
}

/// Element-wise loss weight coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f32,
    pub beta1: f32,
    pub lambda2: f32,
    pub beta2: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            beta1: 1.0,
            lambda2: 0.3,
            beta2: 0.7,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.beta1, self.lambda2, self.beta2]
            .iter()
            .any(|v| *v < 0.0 || !v.is_finite())
        {
            return Err(Error::Config(format!("loss weights must be ≥ 0: {self:?}")));
        }
        Ok(())
    }
}

/// `λ1·|s| + β1` per JHM element of the ground truth.
pub fn jhm_weight_map(s_gt: &Tensor, w: &LossWeights) -> Tensor {
    s_gt.map(|v| w.lambda1 * v.abs() + w.beta1)
}

/// `λ2·‖l‖₂ + β2` per PAF vector of the ground truth, repeated on both
/// components so the result is element-aligned with the PAF tensor.
pub fn paf_weight_map(l_gt: &Tensor, w: &LossWeights) -> Result<Tensor> {
    let (h, wd, c) = paf_dims(l_gt)?;
    let d = l_gt.data();
    let mut out = vec![0.0f32; d.len()];
    for loc in 0..h * wd {
        for ch in 0..c {
            let ix = (loc * 2) * c + ch;
            let iy = (loc * 2 + 1) * c + ch;
            let a = w.lambda2 * (d[ix] * d[ix] + d[iy] * d[iy]).sqrt() + w.beta2;
            out[ix] = a;
            out[iy] = a;
        }
    }
    Tensor::new(l_gt.shape().to_vec(), out)
}

fn paf_dims(l: &Tensor) -> Result<(usize, usize, usize)> {
    match *l.shape() {
        [h, w, 2, c] => Ok((h, w, c)),
        _ => Err(Error::invalid(format!(
            "PAF tensor must be [H,W,2,C], got {:?}",
            l.shape()
        ))),
    }
}

fn weighted_sum(a: &Tensor, b: &Tensor, weights: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .zip(weights.data())
        .map(|((&x, &y), &w)| {
            let d = (x - y) as f64;
            w as f64 * d * d
        })
        .sum()
}

/// `Σ_j Σ_hw α·(s_I − s_R)²`, weights taken from the visual (ground-truth) side.
pub fn jhm_loss(s_i: &Tensor, s_r: &Tensor, w: &LossWeights) -> Result<f64> {
    s_r.expect_shape(s_i.shape())?;
    Ok(weighted_sum(s_i, s_r, &jhm_weight_map(s_i, w)))
}

/// `Σ_c Σ_hw α·‖l_I − l_R‖²`, weights taken from the visual (ground-truth) side.
pub fn paf_loss(l_i: &Tensor, l_r: &Tensor, w: &LossWeights) -> Result<f64> {
    l_r.expect_shape(l_i.shape())?;
    Ok(weighted_sum(l_i, l_r, &paf_weight_map(l_i, w)?))
}

/// Visual and wireless features of one frame.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePair<'a> {
    pub s_i: &'a Tensor,
    pub s_r: &'a Tensor,
    pub l_i: &'a Tensor,
    pub l_r: &'a Tensor,
}

/// `(1/Y) Σ_{y,m} [L_JHM + L_PAF]` over `Y` sequences of frames.
pub fn total_cross_modal_loss(sequences: &[Vec<FeaturePair<'_>>], w: &LossWeights) -> Result<f64> {
    if sequences.is_empty() {
        return Err(Error::invalid("cross-modal loss over an empty batch"));
    }
    let mut total = 0.0;
    for seq in sequences {
        for p in seq {
            total += jhm_loss(p.s_i, p.s_r, w)? + paf_loss(p.l_i, p.l_r, w)?;
        }
    }
    Ok(total / sequences.len() as f64)
}

/// Differentiable JHM loss of a predicted node against a fixed target.
pub fn jhm_loss_node(g: &mut Graph, pred: Var, target: &Tensor, w: &LossWeights) -> Result<Var> {
    g.weighted_sq_err(pred, target.clone(), jhm_weight_map(target, w))
}

/// Differentiable PAF loss; `pred` may be stored as `[.., 2C]` as long as its
/// element order matches `target`'s `[.., 2, C]` layout.
pub fn paf_loss_node(g: &mut Graph, pred: Var, target: &Tensor, w: &LossWeights) -> Result<Var> {
    let weights = if target.rank() == 5 {
        let parts: Result<Vec<Tensor>> = target
            .unstack()
            .iter()
            .map(|t| paf_weight_map(t, w))
            .collect();
        Tensor::stack(&parts?)?
    } else {
        paf_weight_map(target, w)?
    };
    g.weighted_sq_err(pred, target.clone(), weights)
}
