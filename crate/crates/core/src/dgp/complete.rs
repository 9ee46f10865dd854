use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{determined_points, DgpError};
use crate::graph::PointGraph;
use crate::kinematics::KinematicChain;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSolveOptions {
    pub max_iters: usize,
    pub residual_tol: f64,
    pub step_tol: f64,
    pub damping_init: f64,
    pub seed: u64,
    pub num_restarts: usize,
    /// Standard deviation of the random initialisation around the known
    /// centroid. `None` uses the largest known distance from the base origin
    /// divided by the number of unknown nodes.
    pub init_scale: Option<f64>,
}

impl Default for DgpSolveOptions {
    fn default() -> Self {
        DgpSolveOptions {
            max_iters: 2000,
            residual_tol: 1e-10,
            step_tol: 1e-13,
            damping_init: 1e-3,
            seed: 0,
            num_restarts: 8,
            init_scale: None,
        }
    }
}

impl DgpSolveOptions {
    /// Defaults with the initialisation scale set to `reach / n`.
    pub fn for_chain(chain: &KinematicChain) -> Self {
        DgpSolveOptions { init_scale: Some(chain.reach() / chain.dof() as f64), ..Default::default() }
    }

    fn validate(&self) -> Result<(), DgpError> {
        let ok = self.max_iters > 0
            && self.residual_tol >= 1e-12
            && self.step_tol > 0.0
            && self.damping_init > 0.0
            && self.num_restarts > 0
            && self.init_scale.is_none_or(|s| s > 0.0 && s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(DgpError::Invalid(format!("bad solver options {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpSolution {
    pub points: Vec<Vector3<f64>>,
    /// Sum over present edges of `(|p_u - p_v|^2 - d^2)^2`.
    pub residual: f64,
    pub iters: usize,
    pub restart_used: usize,
    pub success: bool,
}

impl DgpSolution {
    pub fn report(&self) -> SolveReport {
        SolveReport { residual: self.residual, iters: self.iters, restart_used: self.restart_used, success: self.success }
    }
}

/// JSON summary of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub residual: f64,
    pub iters: usize,
    pub restart_used: usize,
    pub success: bool,
}

struct Problem<'a> {
    g: &'a PointGraph,
    dim: usize,
    /// Variable slot of each node, `None` for known and determined nodes.
    slot: Vec<Option<usize>>,
    /// Known nodes, plus nodes placed exactly by [`determined_points`].
    fixed: Vec<Vector3<f64>>,
    nvar: usize,
}

impl<'a> Problem<'a> {
    fn new(g: &'a PointGraph) -> Self {
        let (fixed, pinned) = determined_points(g);
        let mut slot = Vec::with_capacity(g.num_nodes());
        let mut k = 0;
        for &known in &pinned {
            if known {
                slot.push(None);
            } else {
                slot.push(Some(k));
                k += 1;
            }
        }
        Problem { g, dim: g.dim(), slot, fixed, nvar: k * g.dim() }
    }

    fn point(&self, x: &DVector<f64>, i: usize) -> Vector3<f64> {
        match self.slot[i] {
            None => self.fixed[i],
            Some(s) => {
                let mut p = Vector3::zeros();
                for a in 0..self.dim {
                    p[a] = x[s * self.dim + a];
                }
                p
            }
        }
    }

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.g.edges().len(),
            self.g.edges().iter().map(|e| (self.point(x, e.u) - self.point(x, e.v)).norm_squared() - e.weight * e.weight),
        )
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.g.edges().len(), self.nvar);
        for (row, e) in self.g.edges().iter().enumerate() {
            let diff = self.point(x, e.u) - self.point(x, e.v);
            for (node, sign) in [(e.u, 2.0), (e.v, -2.0)] {
                if let Some(s) = self.slot[node] {
                    for a in 0..self.dim {
                        j[(row, s * self.dim + a)] = sign * diff[a];
                    }
                }
            }
        }
        j
    }

    fn points(&self, x: &DVector<f64>) -> Vec<Vector3<f64>> {
        (0..self.g.num_nodes()).map(|i| self.point(x, i)).collect()
    }

    fn pack(&self, pts: &[Vector3<f64>]) -> DVector<f64> {
        let mut x = DVector::zeros(self.nvar);
        for (i, s) in self.slot.iter().enumerate() {
            if let Some(s) = s {
                for a in 0..self.dim {
                    x[s * self.dim + a] = pts[i][a];
                }
            }
        }
        x
    }

    /// Levenberg-Marquardt from `x`; returns final point, objective and iterations.
    fn solve(&self, mut x: DVector<f64>, opts: &DgpSolveOptions) -> (DVector<f64>, f64, usize) {
        let mut r = self.residuals(&x);
        let mut f = r.norm_squared();
        let mut lambda = opts.damping_init;
        let mut iters = 0;
        while iters < opts.max_iters && self.nvar > 0 {
            iters += 1;
            let j = self.jacobian(&x);
            let grad = j.transpose() * &r;
            if f == 0.0 || grad.amax() == 0.0 {
                break;
            }
            let mut h = j.transpose() * &j;
            for d in 0..self.nvar {
                h[(d, d)] += lambda;
            }
            let Some(chol) = h.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = -chol.solve(&grad);
            let x_new = &x + &step;
            let r_new = self.residuals(&x_new);
            let f_new = r_new.norm_squared();
            if f_new < f {
                x = x_new;
                r = r_new;
                f = f_new;
                lambda = (lambda / 10.0).max(1e-15);
                if step.norm() < opts.step_tol * (1.0 + x.norm()) {
                    break;
                }
            } else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    break;
                }
            }
        }
        (x, f, iters)
    }
}

fn initial_guess(g: &PointGraph, scale: Option<f64>, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let known: Vec<&Vector3<f64>> =
        g.points().iter().zip(g.known_mask()).filter(|(_, &k)| k).map(|(p, _)| p).collect();
    let centroid = known.iter().fold(Vector3::zeros(), |acc, p| acc + **p) / known.len().max(1) as f64;
    let unknown = g.known_mask().iter().filter(|k| !**k).count().max(1);
    let scale = scale.unwrap_or_else(|| {
        let far = known.iter().map(|p| (*p - g.points()[0]).norm()).fold(0.0, f64::max);
        (far / unknown as f64).max(1e-3)
    });
    let normal = Normal::new(0.0, scale).expect("positive scale");
    g.points()
        .iter()
        .zip(g.known_mask())
        .map(|(p, &k)| {
            if k {
                *p
            } else {
                let mut v = centroid;
                for a in 0..g.dim() {
                    v[a] += normal.sample(rng);
                }
                v
            }
        })
        .collect()
}

fn check_partial(g: &PointGraph) -> Result<(), DgpError> {
    if !g.is_partial() {
        return Err(DgpError::Invalid("graph is not partial".into()));
    }
    if !g.known_mask().iter().any(|k| *k) {
        return Err(DgpError::Invalid("graph has no known nodes".into()));
    }
    Ok(())
}

fn run(problem: &Problem, init: &[Vector3<f64>], restart: usize, opts: &DgpSolveOptions) -> DgpSolution {
    let (x, residual, iters) = problem.solve(problem.pack(init), opts);
    DgpSolution { points: problem.points(&x), residual, iters, restart_used: restart, success: residual < opts.residual_tol }
}

/// Every restart's result, in restart order.
pub fn complete_partial_all(g: &PointGraph, opts: &DgpSolveOptions) -> Result<Vec<DgpSolution>, DgpError> {
    opts.validate()?;
    check_partial(g)?;
    let problem = Problem::new(g);
    Ok((0..opts.num_restarts)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(k as u64);
            let init = initial_guess(g, opts.init_scale, &mut rng);
            run(&problem, &init, k, opts)
        })
        .collect())
}

fn best(mut sols: Vec<DgpSolution>) -> Result<DgpSolution, DgpError> {
    // stable on ties: earliest restart wins
    let mut best = 0;
    for (i, s) in sols.iter().enumerate() {
        if s.residual < sols[best].residual {
            best = i;
        }
    }
    let sol = sols.swap_remove(best);
    if sol.success {
        Ok(sol)
    } else {
        Err(DgpError::NonConvergence { best_residual: sol.residual, best: Box::new(sol) })
    }
}

/// Completes a partial graph, keeping known nodes fixed. Returns the best
/// restart, or `NonConvergence` carrying it when no restart reached tolerance.
pub fn complete_partial(g: &PointGraph, opts: &DgpSolveOptions) -> Result<DgpSolution, DgpError> {
    best(complete_partial_all(g, opts)?)
}

/// Single run from the given initial points (known entries are ignored).
pub fn complete_partial_from(
    g: &PointGraph,
    init: &[Vector3<f64>],
    opts: &DgpSolveOptions,
) -> Result<DgpSolution, DgpError> {
    opts.validate()?;
    check_partial(g)?;
    if init.len() != g.num_nodes() {
        return Err(DgpError::Invalid(format!("expected {} initial points", g.num_nodes())));
    }
    best(vec![run(&Problem::new(g), init, 0, opts)])
}
