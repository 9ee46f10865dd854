use nalgebra::{DMatrix, Matrix3, Vector3};

use super::linalg::thin_svd;
use super::DgpError;

/// Rigid (possibly reflecting) map `p -> rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidFit {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub reflected: bool,
}

impl RigidFit {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

const RANK_TOL: f64 = 1e-9;

/// Least-squares rigid map taking `sources` onto `targets` in `dim`
/// dimensions. A reflection is used only when it fits strictly better than
/// every proper rotation.
pub fn fit_rigid(dim: usize, sources: &[Vector3<f64>], targets: &[Vector3<f64>]) -> Result<RigidFit, DgpError> {
    if sources.len() != targets.len() || sources.len() < dim {
        return Err(DgpError::DegenerateAnchors);
    }
    let m = sources.len() as f64;
    let cs = sources.iter().fold(Vector3::zeros(), |a, p| a + p) / m;
    let ct = targets.iter().fold(Vector3::zeros(), |a, p| a + p) / m;

    let centered = DMatrix::from_fn(sources.len(), dim, |i, a| sources[i][a] - cs[a]);
    let sv = thin_svd(&centered).1;
    let smax = sv.max();
    let rank = sv.iter().filter(|s| **s > RANK_TOL * smax.max(1.0)).count();
    if rank + 1 < dim || smax == 0.0 {
        return Err(DgpError::DegenerateAnchors);
    }

    let tgt = DMatrix::from_fn(targets.len(), dim, |i, a| targets[i][a] - ct[a]);
    let h = centered.transpose() * &tgt;
    let (u, s, v) = thin_svd(&h);
    let smallest = s.argmin().0;
    let best = &v * u.transpose();
    let det = best.determinant();

    let mut reflected = false;
    let r = if det > 0.0 {
        best
    } else {
        // flip the axis of the smallest singular value to get the best proper rotation
        let mut flip = DMatrix::identity(dim, dim);
        flip[(smallest, smallest)] = -1.0;
        let rot = &v * flip * u.transpose();
        let misfit = |r: &DMatrix<f64>| (&centered * r.transpose() - &tgt).norm_squared();
        if rank == dim && misfit(&best) < misfit(&rot) - 1e-12 * (1.0 + tgt.norm_squared()) {
            reflected = true;
            best
        } else {
            rot
        }
    };

    let mut rotation = Matrix3::identity();
    for i in 0..dim {
        for j in 0..dim {
            rotation[(i, j)] = r[(i, j)];
        }
    }
    let translation = ct - rotation * cs;
    Ok(RigidFit { rotation, translation, reflected })
}

/// Applies the rigid map that best sends `points[anchor_ids]` onto
/// `anchor_targets` to every point.
pub fn procrustes_align(
    dim: usize,
    points: &[Vector3<f64>],
    anchor_ids: &[usize],
    anchor_targets: &[Vector3<f64>],
) -> Result<(Vec<Vector3<f64>>, RigidFit), DgpError> {
    if anchor_ids.len() < dim + 1 || anchor_ids.len() != anchor_targets.len() {
        return Err(DgpError::Invalid(format!("need at least {} matched anchors", dim + 1)));
    }
    if anchor_ids.iter().any(|&i| i >= points.len()) {
        return Err(DgpError::Invalid("anchor id out of range".into()));
    }
    let src: Vec<Vector3<f64>> = anchor_ids.iter().map(|&i| points[i]).collect();
    let fit = fit_rigid(dim, &src, anchor_targets)?;
    Ok((points.iter().map(|p| fit.apply(p)).collect(), fit))
}
