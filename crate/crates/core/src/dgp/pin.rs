use nalgebra::Vector3;

use crate::graph::PointGraph;

/// Nodes whose position follows from known nodes and known distances,
/// with those positions. A node is placed when it sits at distance zero from
/// a placed node, lies on the line through two placed nodes (the two
/// distances add up), or has distances to `dim + 1` affinely independent
/// placed nodes. Repeats until nothing changes. Every rule is built from
/// point differences, so the result moves rigidly with the known points.
pub fn determined_points(g: &PointGraph) -> (Vec<Vector3<f64>>, Vec<bool>) {
    const TOL: f64 = 1e-9;
    let n = g.num_nodes();
    let mut pts = g.points().to_vec();
    let mut fixed = g.known_mask().to_vec();
    loop {
        let mut changed = false;
        for i in 0..n {
            if fixed[i] {
                continue;
            }
            let nb: Vec<(Vector3<f64>, f64)> =
                (0..n).filter(|&j| fixed[j]).filter_map(|j| g.weight(i, j).map(|d| (pts[j], d))).collect();
            if let Some(p) = place(&nb, g.dim(), TOL) {
                pts[i] = p;
                fixed[i] = true;
                changed = true;
            }
        }
        if !changed {
            return (pts, fixed);
        }
    }
}

fn place(nb: &[(Vector3<f64>, f64)], dim: usize, tol: f64) -> Option<Vector3<f64>> {
    if let Some((a, _)) = nb.iter().find(|(_, d)| *d <= tol) {
        return Some(*a);
    }
    for (x, &(a, da)) in nb.iter().enumerate() {
        for &(b, db) in &nb[x + 1..] {
            let l = (b - a).norm();
            if l <= tol {
                continue;
            }
            let u = (b - a) / l;
            if (da + db - l).abs() <= tol {
                return Some(a + u * da);
            }
            if (da - db - l).abs() <= tol {
                return Some(a + u * da);
            }
            if (db - da - l).abs() <= tol {
                return Some(a - u * da);
            }
        }
    }
    if nb.len() < dim + 1 {
        return None;
    }
    // |p - a_k|^2 = d_k^2, differenced against the first neighbour
    let (a0, d0) = nb[0];
    let m = nb.len() - 1;
    let mut lhs = nalgebra::DMatrix::zeros(m, dim);
    let mut rhs = nalgebra::DVector::zeros(m);
    for (r, &(a, d)) in nb[1..].iter().enumerate() {
        for c in 0..dim {
            lhs[(r, c)] = 2.0 * (a[c] - a0[c]);
        }
        rhs[r] = a.norm_squared() - a0.norm_squared() - d * d + d0 * d0;
    }
    let (u, s, v) = super::linalg::thin_svd(&lhs);
    if s.min() <= 1e-6 * s.max().max(1.0) {
        return None;
    }
    let sol = v * (u.transpose() * rhs).component_div(&s);
    let mut p = Vector3::zeros();
    for c in 0..dim {
        p[c] = sol[c];
    }
    nb.iter().all(|(a, d)| ((p - a).norm() - d).abs() <= 1e-6).then_some(p)
}
