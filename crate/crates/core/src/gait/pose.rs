use nalgebra::Matrix3;

use super::rotation::{geodesic_angle, rot_decode, GramSchmidt, Rot6};
use crate::{Error, Result};

/// Frames per gait pattern, sampled uniformly over two gait cycles.
pub const FRAMES: usize = 60;

/// Phase of frame `k`: `4πk / FRAMES`.
pub fn frame_phase(k: usize) -> f64 {
    4.0 * std::f64::consts::PI * k as f64 / FRAMES as f64
}

/// Flat pose vector layout: `[h, vx, vz, q_0 (6), …, q_{J-1} (6)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoseLayout {
    pub joints: usize,
}

impl PoseLayout {
    pub const ROOT: usize = 3;

    pub fn new(joints: usize) -> Self {
        Self { joints }
    }

    pub fn dim(&self) -> usize {
        Self::ROOT + 6 * self.joints
    }

    pub fn pattern_dim(&self) -> usize {
        FRAMES * self.dim()
    }

    #[inline]
    pub fn joint_offset(&self, j: usize) -> usize {
        Self::ROOT + 6 * j
    }

    fn check(&self, what: &'static str, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Dimension {
                what,
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    /// Root height in metres.
    pub height: f64,
    /// Root velocity in the ground plane (m/s).
    pub velocity: [f64; 2],
    pub joints: Vec<Rot6>,
}

impl Pose {
    pub fn layout(&self) -> PoseLayout {
        PoseLayout::new(self.joints.len())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout().dim());
        v.push(self.height);
        v.extend_from_slice(&self.velocity);
        for q in &self.joints {
            v.extend_from_slice(q);
        }
        v
    }

    pub fn from_slice(layout: PoseLayout, data: &[f64]) -> Result<Self> {
        layout.check("pose vector", data.len())?;
        Ok(Self {
            height: data[0],
            velocity: [data[1], data[2]],
            joints: data[PoseLayout::ROOT..]
                .chunks_exact(6)
                .map(|c| c.try_into().unwrap())
                .collect(),
        })
    }
}

/// Relative weights of the root terms in the pose distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseWeights {
    pub height: f64,
    pub velocity: f64,
}

impl Default for PoseWeights {
    fn default() -> Self {
        Self {
            height: 1.0,
            velocity: 1.0,
        }
    }
}

/// `FRAMES` poses over two gait cycles, stored as one flat row-major buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitPattern {
    layout: PoseLayout,
    data: Vec<f64>,
}

impl GaitPattern {
    pub fn from_flat(layout: PoseLayout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.pattern_dim() {
            return Err(Error::Dimension {
                what: "gait pattern",
                expected: layout.pattern_dim(),
                got: data.len(),
            });
        }
        Ok(Self { layout, data })
    }

    pub fn from_poses(poses: &[Pose]) -> Result<Self> {
        if poses.len() != FRAMES {
            return Err(Error::Dimension {
                what: "gait pattern frames",
                expected: FRAMES,
                got: poses.len(),
            });
        }
        let layout = poses[0].layout();
        let mut data = Vec::with_capacity(layout.pattern_dim());
        for p in poses {
            if p.layout() != layout {
                return Err(Error::Dimension {
                    what: "pose joints",
                    expected: layout.joints,
                    got: p.joints.len(),
                });
            }
            data.extend(p.to_vec());
        }
        Ok(Self { layout, data })
    }

    pub fn layout(&self) -> PoseLayout {
        self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        let d = self.layout.dim();
        &self.data[k * d..(k + 1) * d]
    }

    pub fn pose(&self, k: usize) -> Pose {
        Pose::from_slice(self.layout, self.frame(k)).unwrap()
    }

    pub fn poses(&self) -> Vec<Pose> {
        (0..FRAMES).map(|k| self.pose(k)).collect()
    }

    fn check_same_layout(&self, other: &Self) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Dimension {
                what: "gait pattern joints",
                expected: self.layout.joints,
                got: other.layout.joints,
            });
        }
        Ok(())
    }
}

/// `w_h (h − h')² + w_v |v − v'|² + Σ_j |R_j − R'_j|_F²`.
pub fn d_pose(a: &Pose, b: &Pose, w: PoseWeights) -> Result<f64> {
    if a.layout() != b.layout() {
        return Err(Error::Dimension {
            what: "pose joints",
            expected: a.joints.len(),
            got: b.joints.len(),
        });
    }
    d_pose_flat(&a.to_vec(), &b.to_vec(), a.layout(), w)
}

/// [`d_pose`] on flat pose vectors.
pub fn d_pose_flat(a: &[f64], b: &[f64], layout: PoseLayout, w: PoseWeights) -> Result<f64> {
    layout.check("pose vector", a.len())?;
    layout.check("pose vector", b.len())?;
    let dh = a[0] - b[0];
    let dv = [a[1] - b[1], a[2] - b[2]];
    let mut total = w.height * dh * dh + w.velocity * (dv[0] * dv[0] + dv[1] * dv[1]);
    for j in 0..layout.joints {
        let o = layout.joint_offset(j);
        let diff = rot_decode(&a[o..o + 6])? - rot_decode(&b[o..o + 6])?;
        total += diff.norm_squared();
    }
    Ok(total)
}

/// Decoded target rotations of one pose, reused across many predictions.
pub(crate) fn decode_joints(pose: &[f64], layout: PoseLayout) -> Result<Vec<Matrix3<f64>>> {
    (0..layout.joints)
        .map(|j| {
            let o = layout.joint_offset(j);
            rot_decode(&pose[o..o + 6])
        })
        .collect()
}

/// `scale · d_pose(pred, target)`; writes `scale · ∂d_pose/∂pred` into `grad`.
pub(crate) fn d_pose_grad(
    pred: &[f64],
    target: &[f64],
    target_rots: &[Matrix3<f64>],
    layout: PoseLayout,
    w: PoseWeights,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let dh = pred[0] - target[0];
    let dv = [pred[1] - target[1], pred[2] - target[2]];
    let mut total = w.height * dh * dh + w.velocity * (dv[0] * dv[0] + dv[1] * dv[1]);
    grad[0] = scale * 2.0 * w.height * dh;
    grad[1] = scale * 2.0 * w.velocity * dv[0];
    grad[2] = scale * 2.0 * w.velocity * dv[1];
    for (j, rt) in target_rots.iter().enumerate() {
        let o = layout.joint_offset(j);
        let gs = GramSchmidt::new(&pred[o..o + 6])?;
        let diff = gs.matrix() - rt;
        total += diff.norm_squared();
        let g = gs.backward(&(diff * (2.0 * scale)));
        grad[o..o + 6].copy_from_slice(&g);
    }
    Ok(scale * total)
}

/// Mean of [`d_pose`] over the aligned frames.
pub fn d_gait(a: &GaitPattern, b: &GaitPattern, w: PoseWeights) -> Result<f64> {
    a.check_same_layout(b)?;
    let mut total = 0.0;
    for k in 0..FRAMES {
        total += d_pose_flat(a.frame(k), b.frame(k), a.layout, w)?;
    }
    Ok(total / FRAMES as f64)
}

/// Mean and variance of one joint's angle error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AngleStats {
    pub mean: f64,
    pub variance: f64,
}

impl AngleStats {
    /// Population mean and variance.
    pub fn from_samples(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let variance = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean, variance }
    }
}

/// Per-joint, per-frame geodesic angle between the two patterns' rotations, in degrees.
/// Indexed `[joint][frame]`.
pub fn joint_angle_errors_deg(a: &GaitPattern, b: &GaitPattern) -> Result<Vec<Vec<f64>>> {
    a.check_same_layout(b)?;
    let layout = a.layout;
    let mut out = vec![Vec::with_capacity(FRAMES); layout.joints];
    for k in 0..FRAMES {
        let ra = decode_joints(a.frame(k), layout)?;
        let rb = decode_joints(b.frame(k), layout)?;
        for (j, (x, y)) in ra.iter().zip(&rb).enumerate() {
            out[j].push(geodesic_angle(x, y).to_degrees());
        }
    }
    Ok(out)
}

/// Per-joint mean and variance over the frames of [`joint_angle_errors_deg`].
pub fn joint_angle_error_deg(a: &GaitPattern, b: &GaitPattern) -> Result<Vec<AngleStats>> {
    Ok(joint_angle_errors_deg(a, b)?
        .iter()
        .map(|e| AngleStats::from_samples(e))
        .collect())
}
