use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::density::normal_draws;
use super::{kl_gauss_vs_gmm_vars, log_likelihood_var, Batch, CvaeError, GgikModel, Result};
use crate::graph::PointGraph;
use crate::tensor::{Adam, AdamState, Tape, Tensor, Var};

/// Indexed `(partial, complete)` training problems.
pub trait TrainingPairs {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn pair(&self, i: usize) -> (PointGraph, PointGraph);
}

impl TrainingPairs for [(PointGraph, PointGraph)] {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }

    fn pair(&self, i: usize) -> (PointGraph, PointGraph) {
        self[i].clone()
    }
}

impl TrainingPairs for Vec<(PointGraph, PointGraph)> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn pair(&self, i: usize) -> (PointGraph, PointGraph) {
        self[i].clone()
    }
}

/// Recorded pieces of the bound for one batch, summed over its graphs.
#[derive(Debug, Clone, Copy)]
pub struct ElboTerms {
    pub recon: Var,
    pub kl: Var,
    pub elbo: Var,
}

/// `E_q[log p(G | G~, z)] - KL(q || prior)` summed over the batch, with one
/// reparameterised draw per element of `eps` (each `N x Z`).
pub fn elbo_terms(model: &GgikModel, t: &Tape, b: &Batch, eps: &[Tensor]) -> Result<ElboTerms> {
    if eps.is_empty() {
        return Err(CvaeError::Invalid("need at least one draw".into()));
    }
    let target = t.constant(b.target.clone().ok_or_else(|| CvaeError::Invalid("batch has no complete graphs".into()))?);
    let (qm, qs) = model.encode_vars(t, b)?;
    let (pm, ps, log_pi) = model.prior_vars(t, b)?;
    let kl = kl_gauss_vs_gmm_vars(t, qm, qs, pm, ps, log_pi, model.cfg.latent, eps)?;
    let mut recon = None;
    for e in eps {
        let z = t.add(qm, t.mul(qs, t.constant(e.clone()))?)?;
        let mu = model.decode_var(t, b, z)?;
        let ll = log_likelihood_var(t, target, mu, &b.mask)?;
        recon = Some(match recon {
            None => ll,
            Some(acc) => t.add(acc, ll)?,
        });
    }
    let recon = t.scale(recon.expect("nonempty"), 1.0 / eps.len() as f64)?;
    let elbo = t.sub(recon, kl)?;
    Ok(ElboTerms { recon, kl, elbo })
}

/// ELBO of a single problem with `num_mc` draws seeded by `seed`.
pub fn elbo(model: &GgikModel, complete: &PointGraph, partial: &PointGraph, num_mc: usize, seed: u64) -> Result<f64> {
    let b = Batch::new(&[(partial, Some(complete))], model.cfg.length_scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = normal_draws(&mut rng, num_mc, b.num_nodes(), model.cfg.latent);
    let t = Tape::new();
    let terms = elbo_terms(model, &t, &b, &eps)?;
    Ok(t.value(terms.elbo).item())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Problems per optimiser step.
    pub batch_size: usize,
    pub lr: f64,
    /// The learning rate decays geometrically to `lr * lr_final` by the last step.
    pub lr_final: f64,
    pub seed: u64,
    pub num_mc: usize,
    /// Stop after this many steps, if set.
    pub max_steps: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { epochs: 8, batch_size: 32, lr: 1e-2, lr_final: 0.1, seed: 0, num_mc: 1, max_steps: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-problem ELBO of every step's batch.
    pub step_elbo: Vec<f64>,
    /// Mean per-problem ELBO over each epoch.
    pub epoch_elbo: Vec<f64>,
}

/// Maximises the ELBO with Adam. `progress` sees `(step, batch ELBO)`.
pub fn train<P: TrainingPairs + ?Sized>(
    model: &mut GgikModel,
    data: &P,
    opts: &TrainOptions,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if data.is_empty() || opts.batch_size == 0 || opts.num_mc == 0 || !(opts.lr >= 0.0) || !(opts.lr_final > 0.0) {
        return Err(CvaeError::Invalid("empty data or bad training options".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut state = AdamState::default();
    let mut report = TrainReport::default();
    let steps_per_epoch = data.len().div_ceil(opts.batch_size);
    let total = opts.max_steps.unwrap_or(usize::MAX).min(steps_per_epoch * opts.epochs).max(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for _ in 0..opts.epochs {
        if step >= total {
            break;
        }
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(opts.batch_size) {
            if step >= total {
                break;
            }
            let pairs: Vec<(PointGraph, PointGraph)> = chunk.iter().map(|&i| data.pair(i)).collect();
            let items: Vec<_> = pairs.iter().map(|(p, c)| (p, Some(c))).collect();
            let b = Batch::new(&items, model.cfg.length_scale)?;
            let eps = normal_draws(&mut rng, opts.num_mc, b.num_nodes(), model.cfg.latent);
            let t = Tape::new();
            let terms = elbo_terms(model, &t, &b, &eps).map_err(|e| non_finite(e, step))?;
            let value = t.value(terms.elbo).item();
            let loss = t.scale(terms.elbo, -1.0 / chunk.len() as f64)?;
            let grads = t.backward(loss).map_err(|e| non_finite(e.into(), step))?.for_params(&model.params);
            let lr = opts.lr * opts.lr_final.powf(step as f64 / total as f64);
            Adam::with_lr(lr).step(&mut model.params, &grads, &mut state)?;

            let per = value / chunk.len() as f64;
            report.step_elbo.push(per);
            sum += value;
            count += chunk.len();
            progress(step, per);
            step += 1;
        }
        if count > 0 {
            report.epoch_elbo.push(sum / count as f64);
        }
    }
    Ok(report)
}

fn non_finite(e: CvaeError, step: usize) -> CvaeError {
    match e {
        CvaeError::Tensor(crate::tensor::TensorError::NonFiniteValue { op }) => {
            CvaeError::NonFiniteLoss { step, detail: format!("{op} produced a non-finite value") }
        }
        other => other,
    }
}
