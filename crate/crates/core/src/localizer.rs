//! Abnormal-person localization inside forged frames: JHM residuals, peak
//! extraction, combined PAFs and limb-wise keypoint association.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::pose_features::{
    to_normalized, Keypoint, SkeletonPose, LIMBS, NUM_KEYPOINTS, NUM_LIMBS,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizerConfig {
    /// Minimum residual of a keypoint candidate.
    pub tau: f32,
    /// Side of the square NMS window, odd.
    pub window: usize,
    /// Points sampled along a candidate limb.
    pub samples: usize,
    /// Minimum mean PAF alignment of an admissible limb.
    pub min_score: f32,
    /// Fraction of samples that must align positively.
    pub positive_fraction: f32,
    /// Skeletons with fewer keypoints are dropped.
    pub min_keypoints: usize,
    /// Box padding as a fraction of the keypoint hull's extent, per side.
    pub box_pad: f32,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        LocalizerConfig {
            tau: 0.1,
            window: 5,
            samples: 10,
            min_score: 0.05,
            positive_fraction: 0.8,
            min_keypoints: 3,
            box_pad: 0.1,
        }
    }
}

impl LocalizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::Config(format!(
                "NMS window must be odd and ≥ 3, got {}",
                self.window
            )));
        }
        if !(self.tau > 0.0) || self.samples < 2 || !(0.0..=1.0).contains(&self.positive_fraction) {
            return Err(Error::Config("invalid localizer thresholds".into()));
        }
        if !(self.box_pad >= 0.0) {
            return Err(Error::Config("box padding must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// `|S_I − S_R|` elementwise.
pub fn residual(visual: &Tensor, wireless: &Tensor) -> Result<Tensor> {
    wireless.expect_shape(visual.shape())?;
    let data = visual
        .data()
        .iter()
        .zip(wireless.data())
        .map(|(a, b)| (a - b).abs())
        .collect::<Vec<_>>();
    Tensor::new(visual.shape().to_vec(), data)
}

/// `L_I + L_R` elementwise.
pub fn combine_paf(visual: &Tensor, wireless: &Tensor) -> Result<Tensor> {
    wireless.expect_shape(visual.shape())?;
    let data = visual
        .data()
        .iter()
        .zip(wireless.data())
        .map(|(a, b)| a + b)
        .collect::<Vec<_>>();
    Tensor::new(visual.shape().to_vec(), data)
}

/// A keypoint candidate in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub col: f32,
    pub row: f32,
    pub score: f32,
}

/// Candidate lists per keypoint type.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuspiciousKeypoints {
    pub height: usize,
    pub width: usize,
    pub per_type: Vec<Vec<Candidate>>,
}

impl SuspiciousKeypoints {
    pub fn counts(&self) -> Vec<usize> {
        self.per_type.iter().map(Vec::len).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.per_type.iter().all(Vec::is_empty)
    }
}

/// Vertex offset of a parabola through `(−1, l)`, `(0, c)`, `(1, r)`.
fn quadratic_offset(l: f32, c: f32, r: f32) -> f32 {
    let denom = l - 2.0 * c + r;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
}

/// Per channel, pixels that are the strict maximum of their window and at least `tau`.
pub fn nms(map: &Tensor, window: usize, tau: f32) -> Result<SuspiciousKeypoints> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::invalid(format!(
            "NMS window must be odd and ≥ 3, got {window}"
        )));
    }
    let [h, w, j] = *map.shape() else {
        return Err(Error::invalid(format!(
            "residual map must be [H,W,J], got {:?}",
            map.shape()
        )));
    };
    let d = map.data();
    let at = |r: usize, c: usize, ch: usize| d[(r * w + c) * j + ch];
    let half = window / 2;
    let mut per_type = vec![Vec::new(); j];
    for (ch, out) in per_type.iter_mut().enumerate() {
        for r in 0..h {
            for c in 0..w {
                let v = at(r, c, ch);
                if v < tau {
                    continue;
                }
                let rows = r.saturating_sub(half)..=(r + half).min(h - 1);
                let is_max = rows.into_iter().all(|rr| {
                    (c.saturating_sub(half)..=(c + half).min(w - 1))
                        .all(|cc| (rr == r && cc == c) || at(rr, cc, ch) < v)
                });
                if !is_max {
                    continue;
                }
                let dc = if c > 0 && c + 1 < w {
                    quadratic_offset(at(r, c - 1, ch), v, at(r, c + 1, ch))
                } else {
                    0.0
                };
                let dr = if r > 0 && r + 1 < h {
                    quadratic_offset(at(r - 1, c, ch), v, at(r + 1, c, ch))
                } else {
                    0.0
                };
                out.push(Candidate {
                    col: c as f32 + dc,
                    row: r as f32 + dr,
                    score: v,
                });
            }
        }
    }
    Ok(SuspiciousKeypoints {
        height: h,
        width: w,
        per_type,
    })
}

/// Bilinear lookup of PAF limb `c` at a pixel position; `paf` is `[H,W,2,C]`.
fn paf_at(paf: &Tensor, c: usize, col: f32, row: f32) -> (f32, f32) {
    let s = paf.shape();
    let (h, w) = (s[0], s[1]);
    let col = col.clamp(0.0, (w - 1) as f32);
    let row = row.clamp(0.0, (h - 1) as f32);
    let (c0, r0) = (col.floor() as usize, row.floor() as usize);
    let (c1, r1) = ((c0 + 1).min(w - 1), (r0 + 1).min(h - 1));
    let (fc, fr) = (col - c0 as f32, row - r0 as f32);
    let d = paf.data();
    let get = |r: usize, cc: usize, dim: usize| d[((r * w + cc) * 2 + dim) * NUM_LIMBS + c];
    let lerp = |dim: usize| {
        let top = get(r0, c0, dim) * (1.0 - fc) + get(r0, c1, dim) * fc;
        let bottom = get(r1, c0, dim) * (1.0 - fc) + get(r1, c1, dim) * fc;
        top * (1.0 - fr) + bottom * fr
    };
    (lerp(0), lerp(1))
}

/// Line-integral score of limb `c` from `a` to `b`, or `None` when inadmissible.
pub fn limb_score(
    paf: &Tensor,
    c: usize,
    a: &Candidate,
    b: &Candidate,
    cfg: &LocalizerConfig,
) -> Option<f32> {
    let (dx, dy) = (b.col - a.col, b.row - a.row);
    let len = (dx * dx + dy * dy).sqrt();
    if len < 1e-6 {
        return None;
    }
    let (ux, uy) = (dx / len, dy / len);
    let t = cfg.samples;
    let mut total = 0.0;
    let mut positive = 0usize;
    for i in 0..t {
        let u = i as f32 / (t - 1) as f32;
        let (vx, vy) = paf_at(paf, c, a.col + u * dx, a.row + u * dy);
        let dot = vx * ux + vy * uy;
        total += dot;
        if dot > 0.0 {
            positive += 1;
        }
    }
    let score = total / t as f32;
    let enough = positive as f32 >= cfg.positive_fraction * t as f32;
    (enough && score >= cfg.min_score).then_some(score)
}

/// Admissible `(from, to, score)` pairs per limb.
pub fn limb_candidates(
    k: &SuspiciousKeypoints,
    paf: &Tensor,
    cfg: &LocalizerConfig,
) -> Result<Vec<Vec<(usize, usize, f32)>>> {
    if k.per_type.is_empty() {
        return Ok(vec![Vec::new(); NUM_LIMBS]);
    }
    if k.per_type.len() != NUM_KEYPOINTS {
        return Err(Error::invalid(format!(
            "expected {NUM_KEYPOINTS} keypoint types, got {}",
            k.per_type.len()
        )));
    }
    paf.expect_shape(&[k.height, k.width, 2, NUM_LIMBS])?;
    Ok(LIMBS
        .iter()
        .enumerate()
        .map(|(c, &(ja, jb))| {
            let mut pairs = Vec::new();
            for (ia, a) in k.per_type[ja].iter().enumerate() {
                for (ib, b) in k.per_type[jb].iter().enumerate() {
                    if let Some(s) = limb_score(paf, c, a, b, cfg) {
                        pairs.push((ia, ib, s));
                    }
                }
            }
            pairs
        })
        .collect())
}

/// Greedy matching by descending score, each endpoint used once; ties go to the
/// lexicographically smaller pair.
pub fn greedy_match(pairs: &[(usize, usize, f32)]) -> Vec<(usize, usize, f32)> {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|x, y| y.2.total_cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
    let mut used_a = Vec::new();
    let mut used_b = Vec::new();
    let mut out = Vec::new();
    for (a, b, s) in sorted {
        if !used_a.contains(&a) && !used_b.contains(&b) {
            used_a.push(a);
            used_b.push(b);
            out.push((a, b, s));
        }
    }
    out.sort_by_key(|&(a, b, _)| (a, b));
    out
}

/// A localized abnormal skeleton.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbnormalPose {
    /// Normalized `(x, y)` per keypoint type, if detected.
    pub keypoints: Vec<Option<[f32; 2]>>,
    /// Limb indices with a connection.
    pub connections: Vec<usize>,
    /// Sum of connected limb scores.
    pub score: f32,
    /// Padded box `(min_x, min_y, max_x, max_y)` in normalized coordinates.
    pub bbox: [f32; 4],
}

impl AbnormalPose {
    pub fn keypoint_count(&self) -> usize {
        self.keypoints.iter().flatten().count()
    }

    pub fn to_skeleton(&self, person_id: u32) -> SkeletonPose {
        let mut keypoints = [Keypoint {
            x: 0.0,
            y: 0.0,
            visible: false,
        }; NUM_KEYPOINTS];
        for (k, p) in keypoints.iter_mut().zip(&self.keypoints) {
            if let Some([x, y]) = *p {
                *k = Keypoint {
                    x,
                    y,
                    visible: true,
                };
            }
        }
        SkeletonPose {
            person_id,
            keypoints,
        }
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn padded_box(points: &[[f32; 2]], pad: f32) -> [f32; 4] {
    let mut b = [
        f32::INFINITY,
        f32::INFINITY,
        f32::NEG_INFINITY,
        f32::NEG_INFINITY,
    ];
    for p in points {
        b = [
            b[0].min(p[0]),
            b[1].min(p[1]),
            b[2].max(p[0]),
            b[3].max(p[1]),
        ];
    }
    let (px, py) = (pad * (b[2] - b[0]), pad * (b[3] - b[1]));
    [
        (b[0] - px).max(0.0),
        (b[1] - py).max(0.0),
        (b[2] + px).min(1.0),
        (b[3] + py).min(1.0),
    ]
}

/// Group candidates into skeletons by per-limb greedy matching and union of
/// limbs sharing a candidate.
pub fn associate(
    k: &SuspiciousKeypoints,
    paf: &Tensor,
    cfg: &LocalizerConfig,
) -> Result<Vec<AbnormalPose>> {
    let limbs = limb_candidates(k, paf, cfg)?;
    if k.is_empty() {
        return Ok(Vec::new());
    }
    let mut offset = vec![0usize; NUM_KEYPOINTS + 1];
    for j in 0..NUM_KEYPOINTS {
        offset[j + 1] = offset[j] + k.per_type[j].len();
    }
    let total = offset[NUM_KEYPOINTS];
    let mut parent: Vec<usize> = (0..total).collect();
    let mut edges = Vec::new();
    for (c, pairs) in limbs.iter().enumerate() {
        let (ja, jb) = LIMBS[c];
        for (a, b, s) in greedy_match(pairs) {
            let (na, nb) = (offset[ja] + a, offset[jb] + b);
            edges.push((c, na, s));
            let (ra, rb) = (find(&mut parent, na), find(&mut parent, nb));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: Vec<(usize, AbnormalPose)> = Vec::new();
    for j in 0..NUM_KEYPOINTS {
        for (n, cand) in k.per_type[j].iter().enumerate() {
            let root = find(&mut parent, offset[j] + n);
            let ix = match groups.iter().position(|(r, _)| *r == root) {
                Some(ix) => ix,
                None => {
                    groups.push((
                        root,
                        AbnormalPose {
                            keypoints: vec![None; NUM_KEYPOINTS],
                            connections: Vec::new(),
                            score: 0.0,
                            bbox: [0.0; 4],
                        },
                    ));
                    groups.len() - 1
                }
            };
            let (x, y) = to_normalized(cand.col, cand.row, k.height, k.width);
            groups[ix].1.keypoints[j] = Some([x, y]);
        }
    }
    for (c, node, s) in edges {
        let root = find(&mut parent, node);
        if let Some((_, g)) = groups.iter_mut().find(|(r, _)| *r == root) {
            g.connections.push(c);
            g.score += s;
        }
    }
    let mut out: Vec<AbnormalPose> = groups
        .into_iter()
        .map(|(_, mut g)| {
            g.connections.sort_unstable();
            let pts: Vec<[f32; 2]> = g.keypoints.iter().flatten().copied().collect();
            g.bbox = padded_box(&pts, cfg.box_pad);
            g
        })
        .filter(|g| g.keypoint_count() >= cfg.min_keypoints)
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

/// Visual and wireless features of one GOP.
#[derive(Clone, Debug, PartialEq)]
pub struct GopFeatures {
    pub visual_jhm: Vec<Tensor>,
    pub wireless_jhm: Vec<Tensor>,
    pub visual_paf: Vec<Tensor>,
    pub wireless_paf: Vec<Tensor>,
}

/// Abnormal skeletons of one frame.
pub fn localize_frame(
    visual_jhm: &Tensor,
    wireless_jhm: &Tensor,
    visual_paf: &Tensor,
    wireless_paf: &Tensor,
    cfg: &LocalizerConfig,
) -> Result<Vec<AbnormalPose>> {
    let d = residual(visual_jhm, wireless_jhm)?;
    let k = nms(&d, cfg.window, cfg.tau)?;
    let paf = combine_paf(visual_paf, wireless_paf)?;
    associate(&k, &paf, cfg)
}

/// Abnormal skeletons per frame of a forged GOP.
pub fn localize_gop(
    features: &GopFeatures,
    cfg: &LocalizerConfig,
) -> Result<Vec<Vec<AbnormalPose>>> {
    cfg.validate()?;
    let m = features.visual_jhm.len();
    if [
        features.wireless_jhm.len(),
        features.visual_paf.len(),
        features.wireless_paf.len(),
    ]
    .iter()
    .any(|&n| n != m)
    {
        return Err(Error::invalid("GOP feature sequences differ in length"));
    }
    (0..m)
        .map(|i| {
            localize_frame(
                &features.visual_jhm[i],
                &features.wireless_jhm[i],
                &features.visual_paf[i],
                &features.wireless_paf[i],
                cfg,
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub gop_id: usize,
    pub score: f32,
    pub frames: Vec<Vec<AbnormalPose>>,
}
