use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Batch, CvaeError, GgikModel, Result};
use crate::dgp::{config_from_points_with_goal, DgpError, IkSolutionSet};
use crate::graph::{partial_graph, PointGraph};
use crate::kinematics::{pose_error, JointConfig, KinematicChain, Pose};
use crate::tensor::{Tape, Tensor};

/// Result of [`sample_solutions`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    /// Best `K` recovered configurations, best first.
    pub solutions: IkSolutionSet,
    /// Samples drawn.
    pub drawn: usize,
    /// Samples whose points were too far from any configuration.
    pub malformed: usize,
    /// Joint values moved onto their limits during recovery.
    pub clamped: usize,
}

/// Decodes `l` latent draws from the prior of `partial`, returning each
/// sample's node positions in world units.
pub fn sample_points(model: &GgikModel, partial: &PointGraph, l: usize, seed: u64) -> Result<Vec<Vec<Vector3<f64>>>> {
    if l == 0 {
        return Err(CvaeError::Invalid("need at least one sample".into()));
    }
    let prior = model.prior(partial)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Tensor> = (0..l).map(|_| prior.sample(&mut rng)).collect();
    let (n, z) = draws[0].shape();
    let stacked = Tensor::from_fn(l * n, z, |i, j| draws[i / n].get(i % n, j));

    let items: Vec<_> = (0..l).map(|_| (partial, None)).collect();
    let b = Batch::new(&items, model.cfg.length_scale)?;
    let t = Tape::new();
    let p = model.decode_var(&t, &b, t.constant(stacked))?;
    let p = t.value(p);
    Ok((0..l).map(|g| b.points_of(&p, g)).collect())
}

/// Draws `l` solutions for `goal`, recovers configurations and keeps the best `k`.
pub fn sample_solutions(
    model: &GgikModel,
    chain: &KinematicChain,
    goal: &Pose,
    k: usize,
    l: usize,
    seed: u64,
) -> Result<SampleOutcome> {
    if k == 0 || k > l {
        return Err(CvaeError::Invalid(format!("need 1 <= K <= L, got K={k}, L={l}")));
    }
    let partial = partial_graph(chain, goal).map_err(|e| CvaeError::Invalid(e.to_string()))?;
    let mut configs = Vec::with_capacity(l);
    let (mut malformed, mut clamped) = (0, 0);
    for pts in sample_points(model, &partial, l, seed)? {
        match config_from_points_with_goal(chain, &pts, goal) {
            Ok(mut q) => {
                clamped += chain.clamp_to_limits(&mut q);
                configs.push(q);
            }
            Err(DgpError::MalformedPointSet(_) | DgpError::DegenerateAnchors) => malformed += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if configs.is_empty() {
        return Err(CvaeError::AllSamplesMalformed { tried: l });
    }
    let solutions = select_solution(chain, goal, &configs, k)?;
    Ok(SampleOutcome { solutions, drawn: l, malformed, clamped })
}

/// Candidate indices ordered by `pos / reach + rot / pi`, ties by index.
pub fn rank_by_error(errors: &[(f64, f64)], reach: f64) -> Vec<usize> {
    let score = |e: &(f64, f64)| e.0 / reach + e.1 / std::f64::consts::PI;
    let mut idx: Vec<usize> = (0..errors.len()).collect();
    idx.sort_by(|&a, &b| score(&errors[a]).total_cmp(&score(&errors[b])));
    idx
}

/// The `k` candidates with the lowest scalarised pose error against `goal`.
pub fn select_solution(chain: &KinematicChain, goal: &Pose, configs: &[JointConfig], k: usize) -> Result<IkSolutionSet> {
    if configs.is_empty() {
        return Err(CvaeError::EmptyCandidates);
    }
    let mut errors = Vec::with_capacity(configs.len());
    for q in configs {
        let fk = chain.forward_kinematics(q).map_err(|e| CvaeError::Invalid(e.to_string()))?;
        errors.push(pose_error(goal, &fk));
    }
    let order = rank_by_error(&errors, chain.reach());
    let mut out = IkSolutionSet::default();
    for &i in order.iter().take(k) {
        out.configs.push(configs[i].clone());
        out.pose_errors.push(errors[i]);
    }
    Ok(out)
}
