use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose_features::{Keypoint, SkeletonPose, LIMBS, NUM_KEYPOINTS, NUM_LIMBS};

/// Walkable floor: depth `x` away from the camera and lateral offset `y`, meters.
pub const FLOOR_X: (f64, f64) = (0.8, 5.5);
pub const FLOOR_Y: (f64, f64) = (-1.8, 1.8);

/// Standard deviation of per-frame keypoint jitter, normalized image units.
pub const KEYPOINT_JITTER: f64 = 0.002;

pub const MAX_PEOPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    Sit,
    Stand,
    Walk,
    Wave,
}

impl Behavior {
    pub const ALL: [Behavior; 4] = [
        Behavior::Sit,
        Behavior::Stand,
        Behavior::Walk,
        Behavior::Wave,
    ];

    pub fn is_static(self) -> bool {
        matches!(self, Behavior::Sit | Behavior::Stand)
    }
}

/// Motion parameters of one person; positions are closed-form functions of time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonTrack {
    pub person_id: u32,
    pub behavior: Behavior,
    /// Anchor (floor point under the pelvis) at `t = 0`.
    pub origin: [f64; 2],
    /// Floor velocity in m/s; zero unless walking.
    pub velocity: [f64; 2],
    /// Small postural sway: amplitude (m), frequency (Hz), phase, direction angle.
    pub sway: [f64; 4],
    /// Gait or waving frequency in Hz.
    pub cycle_hz: f64,
    pub cycle_phase: f64,
}

// (lateral, height) in meters, Body-14 order; the person faces the camera so
// their left side has larger lateral offset.
const STAND: [[f64; 2]; NUM_KEYPOINTS] = [
    [0.0, 1.62],
    [0.0, 1.45],
    [0.20, 1.42],
    [-0.20, 1.42],
    [0.25, 1.15],
    [-0.25, 1.15],
    [0.27, 0.90],
    [-0.27, 0.90],
    [0.12, 0.95],
    [-0.12, 0.95],
    [0.13, 0.50],
    [-0.13, 0.50],
    [0.13, 0.08],
    [-0.13, 0.08],
];

const SIT: [[f64; 2]; NUM_KEYPOINTS] = [
    [0.0, 1.17],
    [0.0, 1.00],
    [0.20, 0.97],
    [-0.20, 0.97],
    [0.24, 0.72],
    [-0.24, 0.72],
    [0.16, 0.58],
    [-0.16, 0.58],
    [0.12, 0.52],
    [-0.12, 0.52],
    [0.18, 0.42],
    [-0.18, 0.42],
    [0.17, 0.06],
    [-0.17, 0.06],
];

/// Depth offset of the knees while seated, toward the camera.
const SIT_KNEE_FORWARD: f64 = 0.35;

/// Reflect `v` into `[lo, hi]` as if bouncing off both ends.
fn fold(v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    let r = (v - lo).rem_euclid(2.0 * span);
    lo + if r > span { 2.0 * span - r } else { r }
}

impl PersonTrack {
    pub fn anchor_at(&self, t: f64) -> [f64; 2] {
        let [amp, hz, phase, dir] = self.sway;
        let s = amp * (2.0 * PI * hz * t + phase).sin();
        [
            fold(self.origin[0] + self.velocity[0] * t, FLOOR_X.0, FLOOR_X.1) + s * dir.cos(),
            fold(self.origin[1] + self.velocity[1] * t, FLOOR_Y.0, FLOOR_Y.1) + s * dir.sin(),
        ]
    }

    /// 3D keypoints `(x depth, y lateral, z height)` at time `t`.
    pub fn body_at(&self, t: f64) -> [[f64; 3]; NUM_KEYPOINTS] {
        let [ax, ay] = self.anchor_at(t);
        let template = if self.behavior == Behavior::Sit {
            &SIT
        } else {
            &STAND
        };
        let mut pts = [[0.0; 3]; NUM_KEYPOINTS];
        for (p, &[dy, z]) in pts.iter_mut().zip(template) {
            *p = [ax, ay + dy, z];
        }
        let phase = 2.0 * PI * self.cycle_hz * t + self.cycle_phase;
        match self.behavior {
            Behavior::Sit => {
                pts[10][0] -= SIT_KNEE_FORWARD;
                pts[11][0] -= SIT_KNEE_FORWARD;
            }
            Behavior::Stand => {}
            Behavior::Walk => {
                let speed = self.velocity[0].hypot(self.velocity[1]).max(1e-9);
                let dir = [self.velocity[0] / speed, self.velocity[1] / speed];
                let swing = phase.sin();
                // legs and opposite arms swing along the direction of travel
                for (j, s) in [
                    (12, 0.25),
                    (10, 0.12),
                    (13, -0.25),
                    (11, -0.12),
                    (7, 0.12),
                    (6, -0.12),
                ] {
                    pts[j][0] += s * swing * dir[0];
                    pts[j][1] += s * swing * dir[1];
                }
                pts[12][2] += 0.05 * swing.max(0.0);
                pts[13][2] += 0.05 * (-swing).max(0.0);
            }
            Behavior::Wave => {
                pts[5] = [ax, ay - 0.32, 1.45];
                pts[7] = [ax, ay - 0.32 + 0.15 * phase.sin(), 1.75];
            }
        }
        pts
    }

    /// 2D skeleton without jitter.
    pub fn pose_at(&self, t: f64) -> SkeletonPose {
        let body = self.body_at(t);
        let anchor = self.anchor_at(t);
        let keypoints = body.map(|p| {
            let (x, y) = project(anchor, p);
            Keypoint {
                x: x as f32,
                y: y as f32,
                visible: (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y),
            }
        });
        SkeletonPose {
            person_id: self.person_id,
            keypoints,
        }
    }
}

/// Image scale (normalized units per meter) of a body at depth `x`.
pub fn image_scale(depth: f64) -> f64 {
    (0.55 - 0.04 * depth) / 1.7
}

/// Perspective-free projection of a 3D point of a body anchored at `anchor`:
/// the anchor's lateral position maps linearly onto image columns, the body
/// around it shrinks and rises with depth.
pub fn project(anchor: [f64; 2], point: [f64; 3]) -> (f64, f64) {
    let s = image_scale(anchor[0]);
    let u = 0.5 + 0.2 * anchor[1] + (point[1] - anchor[1]) * s;
    let floor_v = 0.92 - 0.04 * anchor[0];
    (u, floor_v - point[2] * s)
}

/// Limb reflectors: 3D midpoint and limb length for each of the 13 limbs.
pub fn limb_reflectors(body: &[[f64; 3]; NUM_KEYPOINTS]) -> [([f64; 3], f64); NUM_LIMBS] {
    LIMBS.map(|(a, b)| {
        let (p, q) = (body[a], body[b]);
        let mid = [
            (p[0] + q[0]) / 2.0,
            (p[1] + q[1]) / 2.0,
            (p[2] + q[2]) / 2.0,
        ];
        let len = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
        (mid, len)
    })
}

/// Multi-person scene: continuous tracks plus the frames a camera would see.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneTimeline {
    pub fps: f64,
    pub duration: f64,
    pub people: Vec<PersonTrack>,
    /// `frames[m]` are the skeletons at `m / fps`.
    pub frames: Vec<Vec<SkeletonPose>>,
    /// `anchors[m][p]` is person `p`'s floor anchor `(x, y, 0)` at frame `m`.
    pub anchors: Vec<Vec<[f64; 3]>>,
}

impl SceneTimeline {
    pub fn frame_time(&self, m: usize) -> f64 {
        m as f64 / self.fps
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

fn random_track(
    person_id: u32,
    behavior: Behavior,
    origin: [f64; 2],
    rng: &mut ChaCha8Rng,
) -> PersonTrack {
    let (velocity, cycle_hz) = match behavior {
        Behavior::Walk => {
            let speed = rng.random_range(0.5..1.5);
            let dir = rng.random_range(0.0..2.0 * PI);
            ([speed * dir.cos(), speed * dir.sin()], 1.2 * speed + 0.6)
        }
        Behavior::Wave => ([0.0; 2], rng.random_range(0.8..1.2)),
        _ => ([0.0; 2], 0.0),
    };
    PersonTrack {
        person_id,
        behavior,
        origin,
        velocity,
        sway: [
            if behavior == Behavior::Walk {
                0.0
            } else {
                rng.random_range(0.005..0.02)
            },
            rng.random_range(0.2..0.5),
            rng.random_range(0.0..2.0 * PI),
            rng.random_range(0.0..2.0 * PI),
        ],
        cycle_hz,
        cycle_phase: rng.random_range(0.0..2.0 * PI),
    }
}

/// Random scene of `num_people` people over `[0, duration]` sampled at `fps`.
pub fn simulate_timeline(
    num_people: usize,
    duration: f64,
    fps: f64,
    seed: u64,
) -> Result<SceneTimeline> {
    if !(duration > 0.0) || !(fps > 0.0) {
        return Err(Error::invalid("duration and fps must be positive"));
    }
    if num_people > MAX_PEOPLE {
        return Err(Error::invalid(format!(
            "at most {MAX_PEOPLE} people, got {num_people}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut people: Vec<PersonTrack> = Vec::with_capacity(num_people);
    for id in 0..num_people {
        let behavior = Behavior::ALL[rng.random_range(0..Behavior::ALL.len())];
        // spread people out laterally; retry a few times, then accept overlap
        let mut origin = [0.0; 2];
        for _ in 0..20 {
            origin = [
                rng.random_range(FLOOR_X.0..FLOOR_X.1),
                rng.random_range(FLOOR_Y.0..FLOOR_Y.1),
            ];
            if people.iter().all(|p| (p.origin[1] - origin[1]).abs() > 0.7) {
                break;
            }
        }
        people.push(random_track(id as u32, behavior, origin, &mut rng));
    }
    let jitter = Normal::new(0.0, KEYPOINT_JITTER).unwrap();
    let n = (duration * fps).floor() as usize + 1;
    let mut frames = Vec::with_capacity(n);
    let mut anchors = Vec::with_capacity(n);
    for m in 0..n {
        let t = m as f64 / fps;
        let mut poses = Vec::with_capacity(people.len());
        let mut anc = Vec::with_capacity(people.len());
        for p in &people {
            let mut pose = p.pose_at(t);
            for k in pose.keypoints.iter_mut() {
                k.x += jitter.sample(&mut rng) as f32;
                k.y += jitter.sample(&mut rng) as f32;
                k.visible = (0.0..=1.0).contains(&k.x) && (0.0..=1.0).contains(&k.y);
            }
            poses.push(pose);
            let [x, y] = p.anchor_at(t);
            anc.push([x, y, 0.0]);
        }
        frames.push(poses);
        anchors.push(anc);
    }
    Ok(SceneTimeline {
        fps,
        duration,
        people,
        frames,
        anchors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_reflects() {
        assert_eq!(fold(0.5, 0.0, 1.0), 0.5);
        assert!((fold(1.25, 0.0, 1.0) - 0.75).abs() < 1e-12);
        assert!((fold(-0.25, 0.0, 1.0) - 0.25).abs() < 1e-12);
        assert!((fold(2.25, 0.0, 1.0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn templates_stay_in_frame() {
        for behavior in Behavior::ALL {
            for x in [FLOOR_X.0, FLOOR_X.1] {
                for y in [FLOOR_Y.0 + 0.2, FLOOR_Y.1 - 0.2] {
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let mut tr = random_track(0, behavior, [x, y], &mut rng);
                    tr.velocity = [0.0; 2];
                    let pose = tr.pose_at(0.3);
                    assert!(
                        pose.visible_count() == NUM_KEYPOINTS,
                        "{behavior:?} at ({x},{y})"
                    );
                }
            }
        }
    }

    #[test]
    fn nearer_people_look_bigger() {
        let diag = |d: f64| {
            let (_, top) = project([d, 0.0], [d, 0.0, 1.62]);
            let (_, bottom) = project([d, 0.0], [d, 0.0, 0.08]);
            bottom - top
        };
        assert!(diag(1.0) > diag(5.0));
    }
}
