//! Classical machinery around the distance geometry problem: completing a
//! partial graph by nonlinear least squares, rigid alignment, recovery of
//! joint angles from point sets and a brute-force IK oracle for small chains.

mod brute;
mod complete;
mod linalg;
mod pin;
mod procrustes;
mod recover;

pub use brute::{brute_force_ik, IkSolutionSet};
pub use complete::{complete_partial, complete_partial_all, complete_partial_from, DgpSolution, DgpSolveOptions, SolveReport};
pub use pin::determined_points;
pub use procrustes::{procrustes_align, RigidFit};
pub use recover::{check_point_set, config_from_points, config_from_points_with_goal, recover_angles, MALFORMED_TOL};

use crate::kinematics::KinematicsError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DgpError {
    #[error("no restart reached residual tolerance (best residual {best_residual:.3e})")]
    NonConvergence { best_residual: f64, best: Box<DgpSolution> },
    #[error("anchor configuration is rank deficient")]
    DegenerateAnchors,
    #[error("point set is far from any valid configuration: {0}")]
    MalformedPointSet(String),
    #[error("brute-force enumeration over {dof} joints is too large (max 4)")]
    ProblemTooLarge { dof: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}
