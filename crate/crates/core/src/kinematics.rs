//! Serial revolute chains, forward kinematics and pose errors.
//!
//! Each joint carries Denavit-Hartenberg parameters `(a, alpha, d, theta0)`.
//! The transform contributed by joint `i` at angle `q_i` is
//!
//! ```text
//! T_i = RotZ(q_i + theta0) * TransZ(d) * TransX(a) * RotX(alpha)
//! ```
//!
//! so joint `i` rotates about the z-axis of frame `i - 1`, and frame `n` is
//! the end-effector frame. Planar chains (`dim == 2`) use the same machinery
//! with `alpha == d == 0`; their poses live in the xy-plane.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const ORTHO_TOL: f64 = 1e-9;
const ROLL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("expected {expected} joint angles, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("malformed robot spec JSON: {0}")]
    Json(String),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> KinematicsError {
    KinematicsError::Invalid { path: path.into(), message: message.into() }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DhParams {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointSpec {
    pub dh: DhParams,
    pub lo: f64,
    pub hi: f64,
}

impl JointSpec {
    pub fn new(a: f64, alpha: f64, d: f64, theta0: f64, lo: f64, hi: f64) -> Self {
        JointSpec { dh: DhParams { a, alpha, d, theta0 }, lo, hi }
    }

    /// Transform contributed by this joint at angle `q`.
    pub fn transform(&self, q: f64) -> Pose3 {
        let (st, ct) = (q + self.dh.theta0).sin_cos();
        let (sa, ca) = self.dh.alpha.sin_cos();
        let rotation = Matrix3::new(
            ct, -st * ca, st * sa, //
            st, ct * ca, -ct * sa, //
            0.0, sa, ca,
        );
        let translation = Vector3::new(self.dh.a * ct, self.dh.a * st, self.dh.d);
        Pose3 { rotation, translation }
    }

    /// The joint's transform with the rotation about its own axis removed.
    /// `transform(q) == RotZ(q + theta0) * link()`.
    pub fn link(&self) -> Pose3 {
        let (sa, ca) = self.dh.alpha.sin_cos();
        Pose3 {
            rotation: Matrix3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca),
            translation: Vector3::new(self.dh.a, 0.0, self.dh.d),
        }
    }
}

/// Rigid transform in 3-D. Planar quantities use the xy-plane with
/// rotations about z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose3 {
    pub fn identity() -> Self {
        Pose3 { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose3 {
        let rt = self.rotation.transpose();
        Pose3 { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// End-effector (or frame) pose of a chain in its workspace dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    dim: usize,
    inner: Pose3,
}

impl Pose {
    pub fn identity(dim: usize) -> Self {
        Pose { dim, inner: Pose3::identity() }
    }

    /// Builds a pose from a row-major `dim x dim` rotation and a `dim` translation,
    /// checking orthonormality and orientation.
    pub fn from_parts(dim: usize, rotation: &[f64], translation: &[f64]) -> Result<Self, KinematicsError> {
        if dim != 2 && dim != 3 {
            return Err(invalid("dim", "must be 2 or 3"));
        }
        if rotation.len() != dim * dim {
            return Err(invalid("rotation", format!("expected {} entries", dim * dim)));
        }
        if translation.len() != dim {
            return Err(invalid("translation", format!("expected {dim} entries")));
        }
        if rotation.iter().chain(translation).any(|v| !v.is_finite()) {
            return Err(KinematicsError::NonFinite("pose"));
        }
        let mut r = Matrix3::identity();
        let mut t = Vector3::zeros();
        for i in 0..dim {
            t[i] = translation[i];
            for j in 0..dim {
                r[(i, j)] = rotation[i * dim + j];
            }
        }
        let pose = Pose { dim, inner: Pose3 { rotation: r, translation: t } };
        pose.check()?;
        Ok(pose)
    }

    pub(crate) fn from_pose3(dim: usize, inner: Pose3) -> Self {
        Pose { dim, inner }
    }

    /// Planar pose from an angle and a translation.
    pub fn planar(angle: f64, x: f64, y: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Pose {
            dim: 2,
            inner: Pose3 {
                rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
                translation: Vector3::new(x, y, 0.0),
            },
        }
    }

    pub fn spatial(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose { dim: 3, inner: Pose3 { rotation, translation } }
    }

    fn check(&self) -> Result<(), KinematicsError> {
        let r = self.inner.rotation;
        let e = (r.transpose() * r - Matrix3::identity()).abs().max();
        if e >= ORTHO_TOL {
            return Err(invalid("rotation", format!("not orthonormal (deviation {e:.3e})")));
        }
        if (r.determinant() - 1.0).abs() >= ORTHO_TOL {
            return Err(invalid("rotation", "determinant must be +1"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_pose3(&self) -> &Pose3 {
        &self.inner
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.inner.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.inner.translation
    }

    /// Row-major `dim x dim` rotation entries.
    pub fn rotation_rows(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim * self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.push(self.inner.rotation[(i, j)]);
            }
        }
        out
    }

    pub fn translation_vec(&self) -> Vec<f64> {
        self.inner.translation.iter().take(self.dim).copied().collect()
    }

    /// Planar heading angle (only meaningful for `dim == 2`).
    pub fn heading(&self) -> f64 {
        self.inner.rotation[(1, 0)].atan2(self.inner.rotation[(0, 0)])
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose { dim: self.dim, inner: self.inner.compose(&other.inner) }
    }

    pub fn inverse(&self) -> Pose {
        Pose { dim: self.dim, inner: self.inner.inverse() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    name: String,
    dim: usize,
    joints: Vec<JointSpec>,
}

impl KinematicChain {
    pub fn new(name: impl Into<String>, dim: usize, joints: Vec<JointSpec>) -> Result<Self, KinematicsError> {
        let chain = KinematicChain { name: name.into(), dim, joints };
        chain.validate()?;
        Ok(chain)
    }

    /// Planar chain with the given link lengths, zero offsets and full-turn limits.
    pub fn planar(name: impl Into<String>, links: &[f64]) -> Result<Self, KinematicsError> {
        let joints = links.iter().map(|&a| JointSpec::new(a, 0.0, 0.0, 0.0, -PI, PI)).collect();
        KinematicChain::new(name, 2, joints)
    }

    fn validate(&self) -> Result<(), KinematicsError> {
        if self.dim != 2 && self.dim != 3 {
            return Err(invalid("dim", format!("must be 2 or 3, got {}", self.dim)));
        }
        if self.joints.len() < 2 {
            return Err(invalid("joints", format!("need at least 2 joints, got {}", self.joints.len())));
        }
        let mut reach = 0.0;
        for (i, j) in self.joints.iter().enumerate() {
            let p = |f: &str| format!("joints[{i}].{f}");
            let DhParams { a, alpha, d, theta0 } = j.dh;
            if ![a, alpha, d, theta0].iter().all(|v| v.is_finite()) {
                return Err(invalid(p("dh"), "all entries must be finite"));
            }
            if a < 0.0 {
                return Err(invalid(p("dh"), format!("link length a must be >= 0, got {a}")));
            }
            if !j.lo.is_finite() || !j.hi.is_finite() {
                return Err(invalid(p("limits"), "bounds must be finite"));
            }
            if j.lo >= j.hi {
                return Err(invalid(p("limits"), format!("lo ({}) must be < hi ({})", j.lo, j.hi)));
            }
            if j.hi - j.lo > 2.0 * PI + 1e-12 {
                return Err(invalid(p("limits"), "interval wider than 2*pi"));
            }
            if self.dim == 2 && (alpha != 0.0 || d != 0.0) {
                return Err(invalid(p("dh"), "planar chains need alpha = 0 and d = 0"));
            }
            reach += a.abs() + d.abs();
        }
        if reach <= 0.0 {
            return Err(invalid("joints", "total reach must be positive"));
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    /// Sum of link lengths and offsets.
    pub fn reach(&self) -> f64 {
        self.joints.iter().map(|j| j.dh.a.abs() + j.dh.d.abs()).sum()
    }

    /// Whether the last joint only spins the end-effector about its own
    /// axis, so its angle cannot be seen from end-effector point positions.
    pub fn has_roll_joint(&self) -> bool {
        let last = self.joints.last().expect("validated chain has joints");
        last.dh.a.abs() < ROLL_EPS && (self.dim == 2 || last.dh.alpha.sin().abs() < ROLL_EPS)
    }

    fn check_config(&self, q: &JointConfig) -> Result<(), KinematicsError> {
        if q.0.len() != self.joints.len() {
            return Err(KinematicsError::DimensionMismatch { expected: self.joints.len(), actual: q.0.len() });
        }
        if q.0.iter().any(|v| !v.is_finite()) {
            return Err(KinematicsError::NonFinite("joint angles"));
        }
        Ok(())
    }

    pub fn forward_kinematics(&self, q: &JointConfig) -> Result<Pose, KinematicsError> {
        self.check_config(q)?;
        let mut acc = Pose3::identity();
        for (j, &qi) in self.joints.iter().zip(&q.0) {
            acc = acc.compose(&j.transform(qi));
        }
        Ok(Pose::from_pose3(self.dim, acc))
    }

    /// Frames `0..=n`; frame 0 is the base, frame `k` is the product of the
    /// first `k` joint transforms and frame `n` is the end-effector.
    /// Joint `k + 1` rotates about the z-axis of frame `k`.
    pub fn joint_frames(&self, q: &JointConfig) -> Result<Vec<Pose>, KinematicsError> {
        self.joint_frames_from(&Pose::identity(self.dim), q)
    }

    /// As [`joint_frames`](Self::joint_frames) with the chain mounted on `base`.
    pub fn joint_frames_from(&self, base: &Pose, q: &JointConfig) -> Result<Vec<Pose>, KinematicsError> {
        self.check_config(q)?;
        let mut frames = Vec::with_capacity(self.joints.len() + 1);
        let mut acc = base.inner;
        frames.push(Pose::from_pose3(self.dim, acc));
        for (j, &qi) in self.joints.iter().zip(&q.0) {
            acc = acc.compose(&j.transform(qi));
            frames.push(Pose::from_pose3(self.dim, acc));
        }
        Ok(frames)
    }

    /// Uniform draw inside the joint limits, deterministic in `seed`.
    pub fn random_config(&self, seed: u64) -> JointConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.random_config_with(&mut rng)
    }

    pub fn random_config_with<R: Rng>(&self, rng: &mut R) -> JointConfig {
        JointConfig(self.joints.iter().map(|j| j.lo + (j.hi - j.lo) * rng.random::<f64>()).collect())
    }

    /// Clamps wrapped angles into the joint limits; returns how many joints
    /// needed clamping.
    pub fn clamp_to_limits(&self, q: &mut JointConfig) -> usize {
        let mut clamped = 0;
        for (j, v) in self.joints.iter().zip(q.0.iter_mut()) {
            let w = wrap_angle(*v);
            // try the representative closest to the interval
            let cands = [w, w - 2.0 * PI, w + 2.0 * PI];
            let inside = cands.iter().copied().find(|c| *c >= j.lo && *c <= j.hi);
            *v = match inside {
                Some(c) => c,
                None => {
                    clamped += 1;
                    w.clamp(j.lo, j.hi)
                }
            };
        }
        clamped
    }

    pub fn to_spec(&self) -> RobotSpec {
        RobotSpec {
            name: self.name.clone(),
            dim: self.dim,
            joints: self
                .joints
                .iter()
                .map(|j| JointSpecJson { dh: [j.dh.a, j.dh.alpha, j.dh.d, j.dh.theta0], limits: [j.lo, j.hi] })
                .collect(),
        }
    }

    pub fn from_spec(spec: &RobotSpec) -> Result<Self, KinematicsError> {
        let joints = spec
            .joints
            .iter()
            .map(|j| JointSpec::new(j.dh[0], j.dh[1], j.dh[2], j.dh[3], j.limits[0], j.limits[1]))
            .collect();
        KinematicChain::new(spec.name.clone(), spec.dim, joints)
    }

    pub fn from_json(text: &str) -> Result<Self, KinematicsError> {
        let spec: RobotSpec = serde_json::from_str(text).map_err(|e| KinematicsError::Json(e.to_string()))?;
        KinematicChain::from_spec(&spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_spec()).expect("robot spec serializes")
    }
}

/// Joint angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub Vec<f64>);

impl JointConfig {
    pub fn zeros(n: usize) -> Self {
        JointConfig(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Largest wrapped angular difference to `other`.
    pub fn max_angle_diff(&self, other: &JointConfig) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| wrap_angle(a - b).abs()).fold(0.0, f64::max)
    }
}

/// Robot description file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub name: String,
    pub dim: usize,
    pub joints: Vec<JointSpecJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpecJson {
    pub dh: [f64; 4],
    pub limits: [f64; 2],
}

/// Pose file: row-major rotation and a translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseJson {
    pub rotation: Vec<f64>,
    pub translation: Vec<f64>,
}

impl PoseJson {
    pub fn from_pose(p: &Pose) -> Self {
        PoseJson { rotation: p.rotation_rows(), translation: p.translation_vec() }
    }

    pub fn to_pose(&self) -> Result<Pose, KinematicsError> {
        let dim = match self.translation.len() {
            2 => 2,
            3 => 3,
            n => return Err(invalid("translation", format!("expected 2 or 3 entries, got {n}"))),
        };
        Pose::from_parts(dim, &self.rotation, &self.translation)
    }
}

/// Position error (length units) and rotation error (radians).
pub fn pose_error(target: &Pose, actual: &Pose) -> (f64, f64) {
    let pos = (target.inner.translation - actual.inner.translation).norm();
    let rot = if target.dim == 2 {
        wrap_angle(actual.heading() - target.heading()).abs()
    } else {
        // Same angle as acos((tr - 1) / 2), without its loss of precision near 0.
        let r = target.inner.rotation.transpose() * actual.inner.rotation;
        let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
        s.atan2((r.trace() - 1.0) / 2.0)
    };
    (pos, rot)
}

/// Angle that best aligns the roll of `actual` with `target` when the last
/// joint spins about its own axis; see [`KinematicChain::has_roll_joint`].
pub(crate) fn roll_correction(chain: &KinematicChain, q: &JointConfig, target: &Pose) -> f64 {
    let n = chain.dof();
    let frames = chain.joint_frames(q).expect("config checked by caller");
    let last = &chain.joints()[n - 1];
    // actual(delta) = A * RotZ(delta) * B
    let a = frames[n - 1].inner.compose(&Pose3 {
        rotation: nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), q.0[n - 1] + last.dh.theta0).into_inner(),
        translation: Vector3::zeros(),
    });
    let b = last.link().rotation;
    let m = b * target.inner.rotation.transpose() * a.rotation;
    (m[(0, 1)] - m[(1, 0)]).atan2(m[(0, 0)] + m[(1, 1)])
}
