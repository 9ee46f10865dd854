use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::DgpError;
use crate::graph::{ee_points, points_from_config, NodeLayout};
use crate::kinematics::{pose_error, roll_correction, wrap_angle, JointConfig, KinematicChain, Pose};

/// Configurations with their `(position, rotation)` errors against a goal.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IkSolutionSet {
    pub configs: Vec<JointConfig>,
    pub pose_errors: Vec<(f64, f64)>,
}

impl IkSolutionSet {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }
}

const DEDUP_RAD: f64 = 1e-3;
const MAX_DOF: usize = 4;

/// What the partial graph pins down: squared distance between the
/// end-effector points of `q` and those implied by the goal.
struct GoalMismatch<'a> {
    chain: &'a KinematicChain,
    layout: NodeLayout,
    target: Vec<Vector3<f64>>,
}

impl GoalMismatch<'_> {
    fn eval(&self, q: &[f64]) -> f64 {
        let (pts, _) = points_from_config(self.chain, &JointConfig(q.to_vec())).expect("grid config is valid");
        self.layout.ee_nodes().zip(&self.target).map(|(i, t)| (pts[i] - t).norm_squared()).sum()
    }
}

impl GoalMismatch<'_> {
    fn residuals(&self, q: &[f64]) -> DVector<f64> {
        let (pts, _) = points_from_config(self.chain, &JointConfig(q.to_vec())).expect("grid config is valid");
        let d = self.layout.dim;
        let mut r = DVector::zeros(self.target.len() * d);
        for (k, (i, t)) in self.layout.ee_nodes().zip(&self.target).enumerate() {
            for a in 0..d {
                r[k * d + a] = pts[i][a] - t[a];
            }
        }
        r
    }
}

/// Levenberg-Marquardt polish of the free joints with a central-difference
/// Jacobian; pattern search alone crawls along ill-conditioned valleys near
/// workspace boundaries.
fn polish(f: &GoalMismatch, chain: &KinematicChain, free: usize, q: &mut [f64]) {
    const H: f64 = 1e-7;
    let mut r = f.residuals(q);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-6;
    for _ in 0..200 {
        if cost < 1e-30 {
            break;
        }
        let mut j = DMatrix::zeros(r.len(), free);
        for c in 0..free {
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[c] += H;
            qm[c] -= H;
            j.set_column(c, &((f.residuals(&qp) - f.residuals(&qm)) / (2.0 * H)));
        }
        let g = j.transpose() * &r;
        let mut h = j.transpose() * &j;
        for d in 0..free {
            h[(d, d)] += lambda * (1.0 + h[(d, d)]);
        }
        let Some(step) = h.cholesky().map(|c| -c.solve(&g)) else {
            lambda *= 10.0;
            continue;
        };
        let cand: Vec<f64> =
            (0..q.len()).map(|k| if k < free { (q[k] + step[k]).clamp(chain.joints()[k].lo, chain.joints()[k].hi) } else { q[k] }).collect();
        let rc = f.residuals(&cand);
        let cc = rc.norm_squared();
        if cc < cost {
            q.copy_from_slice(&cand);
            r = rc;
            cost = cc;
            lambda = (lambda * 0.1).max(1e-15);
            if step.norm() < 1e-15 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
}

/// Pattern search over the free joints, one coordinate at a time, with step
/// halving down to `1e-13` rad.
fn coordinate_descent(f: &GoalMismatch, chain: &KinematicChain, free: usize, q: &mut [f64], step0: f64) -> f64 {
    let mut best = f.eval(q);
    let mut step = step0;
    let mut evals = 0usize;
    while step > 1e-13 && evals < 200_000 {
        let mut improved = false;
        for j in 0..free {
            let (lo, hi) = (chain.joints()[j].lo, chain.joints()[j].hi);
            for dir in [1.0, -1.0] {
                loop {
                    let old = q[j];
                    q[j] = (old + dir * step).clamp(lo, hi);
                    let v = f.eval(q);
                    evals += 1;
                    if v < best {
                        best = v;
                        improved = true;
                    } else {
                        q[j] = old;
                        break;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

/// Enumerates IK solutions of a small chain by scanning a joint grid and
/// refining promising cells.
///
/// A solution must place the end-effector points of the partial graph
/// (position, plus the final axis in 3-D) within `tol = (length, radians)`.
/// A final roll joint is not scanned; it is set from the goal orientation and
/// the full rotation error must then also be within `tol.1`. Solutions closer
/// than 1e-3 rad in joint space are merged.
pub fn brute_force_ik(
    chain: &KinematicChain,
    goal: &Pose,
    grid_per_joint: usize,
    tol: (f64, f64),
) -> Result<IkSolutionSet, DgpError> {
    let n = chain.dof();
    if n > MAX_DOF {
        return Err(DgpError::ProblemTooLarge { dof: n });
    }
    if grid_per_joint < 8 {
        return Err(DgpError::Invalid("grid_per_joint must be at least 8".into()));
    }
    if goal.dim() != chain.dim() {
        return Err(DgpError::Invalid("goal dimension differs from chain".into()));
    }
    let free = if chain.has_roll_joint() { n - 1 } else { n };
    let f = GoalMismatch { chain, layout: NodeLayout::of(chain), target: ee_points(goal) };
    let g = grid_per_joint;
    let width: Vec<f64> = chain.joints().iter().map(|j| (j.hi - j.lo) / g as f64).collect();
    let cell = |idx: &[usize]| -> Vec<f64> {
        let mut q = vec![0.0; n];
        for j in 0..free {
            q[j] = chain.joints()[j].lo + (idx[j] as f64 + 0.5) * width[j];
        }
        q
    };

    // evaluate the whole grid
    let total = g.pow(free as u32);
    let mut values = Vec::with_capacity(total);
    let mut idx = vec![0usize; free];
    for flat in 0..total {
        let mut r = flat;
        for v in idx.iter_mut() {
            *v = r % g;
            r /= g;
        }
        values.push(f.eval(&cell(&idx)));
    }

    // coarse threshold: a cell's centre is within half a cell of every point
    // inside it, and each joint moves the end-effector by at most reach * angle
    let max_w = width.iter().take(free).fold(0.0f64, |a, &b| a.max(b));
    let thresh = chain.reach() * max_w * free as f64;
    let full_turn = |j: usize| (chain.joints()[j].hi - chain.joints()[j].lo) > 2.0 * std::f64::consts::PI - 1e-9;
    let mut seeds = Vec::new();
    for flat in 0..total {
        let v = values[flat];
        if v.sqrt() > thresh {
            continue;
        }
        // keep local minima over the 3^free neighbourhood
        let mut r = flat;
        for x in idx.iter_mut() {
            *x = r % g;
            r /= g;
        }
        let mut is_min = true;
        for code in 0..3usize.pow(free as u32) {
            let mut c = code;
            let mut nflat = 0;
            let mut mul = 1;
            let mut valid = true;
            for j in 0..free {
                let off = (c % 3) as isize - 1;
                c /= 3;
                let mut k = idx[j] as isize + off;
                if k < 0 || k >= g as isize {
                    if full_turn(j) {
                        k = k.rem_euclid(g as isize);
                    } else {
                        valid = false;
                        break;
                    }
                }
                nflat += k as usize * mul;
                mul *= g;
            }
            if valid && nflat != flat && values[nflat] < v {
                is_min = false;
                break;
            }
        }
        if is_min {
            seeds.push(cell(&idx));
        }
    }

    let mut found: Vec<(f64, JointConfig, (f64, f64))> = Vec::new();
    for mut q in seeds {
        coordinate_descent(&f, chain, free, &mut q, max_w);
        polish(&f, chain, free, &mut q);
        let mut cfg = JointConfig(q.iter().map(|&v| wrap_angle(v)).collect());
        if free < n {
            cfg.0[n - 1] = wrap_angle(cfg.0[n - 1] + roll_correction(chain, &cfg, goal));
        }
        let fk = chain.forward_kinematics(&cfg)?;
        let (pos, rot) = pose_error(goal, &fk);
        let axis_err = if chain.dim() == 3 {
            fk.rotation().column(2).dot(&goal.rotation().column(2)).clamp(-1.0, 1.0).acos()
        } else {
            0.0
        };
        let rot_ok = if free < n { rot <= tol.1 } else { axis_err <= tol.1 };
        if pos <= tol.0 && rot_ok {
            found.push((pos + rot, cfg, (pos, rot)));
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = IkSolutionSet::default();
    for (_, cfg, err) in found {
        if out.configs.iter().all(|c| c.max_angle_diff(&cfg) > DEDUP_RAD) {
            out.configs.push(cfg);
            out.pose_errors.push(err);
        }
    }
    Ok(out)
}
