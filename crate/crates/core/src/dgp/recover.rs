use nalgebra::Vector3;

use super::procrustes::procrustes_align;
use super::DgpError;
use crate::graph::{structural_edges, NodeLayout};
use crate::kinematics::{roll_correction, wrap_angle, JointConfig, KinematicChain, Pose, Pose3};

/// Allowed deviation of a within-pair distance from 1, and relative
/// deviation (times `max(1, d)`) of any structural distance, before a point
/// set is rejected as malformed.
pub const MALFORMED_TOL: f64 = 0.1;

/// Below this, a joint's successor points sit on the joint axis and its
/// angle cannot be read from them.
const OBSERVABLE_EPS: f64 = 1e-12;

/// Checks the structural geometry of an (aligned or not) point set.
pub fn check_point_set(chain: &KinematicChain, points: &[Vector3<f64>]) -> Result<(), DgpError> {
    let layout = NodeLayout::of(chain);
    if points.len() != layout.num_nodes() {
        return Err(DgpError::Invalid(format!("expected {} points, got {}", layout.num_nodes(), points.len())));
    }
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(DgpError::MalformedPointSet("non-finite coordinates".into()));
    }
    if layout.dim == 3 {
        for i in 0..=chain.dof() {
            let r = layout.joint_nodes(i);
            let sep = (points[r.start] - points[r.start + 1]).norm();
            if (sep - 1.0).abs() > MALFORMED_TOL {
                return Err(DgpError::MalformedPointSet(format!("axis pair {i} separated by {sep:.4}")));
            }
        }
    }
    for e in structural_edges(chain) {
        let d = (points[e.u] - points[e.v]).norm();
        if (d - e.weight).abs() > MALFORMED_TOL * e.weight.max(1.0) {
            return Err(DgpError::MalformedPointSet(format!(
                "structural distance ({}, {}) is {d:.4}, expected {:.4}",
                e.u, e.v, e.weight
            )));
        }
    }
    Ok(())
}

fn frame_points(p: &Pose3, dim: usize) -> Vec<Vector3<f64>> {
    if dim == 3 {
        vec![p.translation, p.translation + p.rotation.column(2)]
    } else {
        vec![p.translation]
    }
}

/// Recovers joint angles from a point set laid out as in [`crate::graph`].
///
/// The points are first aligned onto the canonical base anchors. Each angle is
/// then the planar rotation about the joint axis that best carries the
/// successor points predicted at angle zero onto the observed ones. Angles
/// that the points cannot determine (a final joint spinning the end-effector
/// about its own axis) come back as 0; see
/// [`config_from_points_with_goal`].
pub fn config_from_points(chain: &KinematicChain, points: &[Vector3<f64>]) -> Result<JointConfig, DgpError> {
    check_point_set(chain, points)?;
    recover_angles(chain, points)
}

/// The angle extraction of [`config_from_points`] without the geometry
/// check, for point sets that only need a best-effort reading.
pub fn recover_angles(chain: &KinematicChain, points: &[Vector3<f64>]) -> Result<JointConfig, DgpError> {
    let layout = NodeLayout::of(chain);
    if points.len() != layout.num_nodes() || points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(DgpError::Invalid(format!("expected {} finite points", layout.num_nodes())));
    }
    let base: Vec<usize> = layout.base_nodes().collect();
    let (aligned, _) = procrustes_align(layout.dim, points, &base, &layout.base_anchors())?;

    let mut frame = Pose3::identity();
    let mut q = Vec::with_capacity(chain.dof());
    for (i, joint) in chain.joints().iter().enumerate() {
        let inv = frame.inverse();
        let predicted = frame_points(&joint.link(), layout.dim);
        let observed = layout.joint_nodes(i + 1).map(|k| inv.apply(&aligned[k]));
        let (mut cross, mut dot, mut weight) = (0.0, 0.0, 0.0);
        for (c, o) in predicted.iter().zip(observed) {
            cross += c.x * o.y - c.y * o.x;
            dot += c.x * o.x + c.y * o.y;
            weight += c.x * c.x + c.y * c.y;
        }
        let qi = if weight > OBSERVABLE_EPS { wrap_angle(cross.atan2(dot) - joint.dh.theta0) } else { 0.0 };
        frame = frame.compose(&joint.transform(qi));
        q.push(qi);
    }
    Ok(JointConfig(q))
}

/// As [`config_from_points`], then sets a final roll joint so the
/// end-effector orientation matches `goal` about the final axis.
pub fn config_from_points_with_goal(
    chain: &KinematicChain,
    points: &[Vector3<f64>],
    goal: &Pose,
) -> Result<JointConfig, DgpError> {
    let mut q = config_from_points(chain, points)?;
    if chain.has_roll_joint() {
        let n = chain.dof();
        q.0[n - 1] = wrap_angle(q.0[n - 1] + roll_correction(chain, &q, goal));
    }
    Ok(q)
}
