use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{CvaeError, Result};
use crate::graph::PointGraph;
use crate::tensor::{Tape, Tensor, Var};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Per-node diagonal Gaussians over latents.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNodeDistribution {
    /// `N x Z`.
    pub mu: Tensor,
    /// `N x Z`, positive.
    pub sigma: Tensor,
}

/// Per-node Gaussian mixtures over latents.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmNodeDistribution {
    /// `K` tensors of shape `N x Z`.
    pub mu: Vec<Tensor>,
    pub sigma: Vec<Tensor>,
    /// `N x K`, rows sum to 1.
    pub pi: Tensor,
}

fn split_components(t: &Tensor, z: usize) -> Vec<Tensor> {
    (0..t.cols() / z).map(|k| Tensor::from_fn(t.rows(), z, |i, j| t.get(i, k * z + j))).collect()
}

impl GmmNodeDistribution {
    /// From stacked heads (`N x (K*Z)`) and mixing weights (`N x K`).
    pub fn from_heads(mu: &Tensor, sigma: &Tensor, pi: &Tensor, z: usize) -> GmmNodeDistribution {
        GmmNodeDistribution { mu: split_components(mu, z), sigma: split_components(sigma, z), pi: pi.clone() }
    }

    /// A single standard normal component per node.
    pub fn standard(n: usize, z: usize) -> GmmNodeDistribution {
        GmmNodeDistribution { mu: vec![Tensor::zeros(n, z)], sigma: vec![Tensor::full(n, z, 1.0)], pi: Tensor::full(n, 1, 1.0) }
    }

    pub fn components(&self) -> usize {
        self.mu.len()
    }

    fn stacked(&self) -> (Tensor, Tensor) {
        let (n, z) = self.mu[0].shape();
        let k = self.components();
        let stack = |ts: &[Tensor]| Tensor::from_fn(n, k * z, |i, c| ts[c / z].get(i, c % z));
        (stack(&self.mu), stack(&self.sigma))
    }

    /// Log density of `z` (`N x Z`) under each node's mixture.
    pub fn log_density(&self, z: &Tensor) -> Result<Vec<f64>> {
        let t = Tape::new();
        let (mu, sigma) = self.stacked();
        let log_pi = t.log(t.constant(self.pi.clone()))?;
        let lp = gmm_log_density(&t, t.constant(z.clone()), t.constant(mu), t.constant(sigma), log_pi, z.cols())?;
        Ok(t.value(lp).data().to_vec())
    }

    /// Draws one latent per node: a component by its weight, then a Gaussian.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Tensor {
        let (n, z) = self.mu[0].shape();
        let mut out = Tensor::zeros(n, z);
        for i in 0..n {
            let u: f64 = rand::Rng::random(rng);
            let mut acc = 0.0;
            let mut k = self.components() - 1;
            for c in 0..self.components() {
                acc += self.pi.get(i, c);
                if u < acc {
                    k = c;
                    break;
                }
            }
            for j in 0..z {
                let e: f64 = StandardNormal.sample(rng);
                out.set(i, j, self.mu[k].get(i, j) + self.sigma[k].get(i, j) * e);
            }
        }
        out
    }
}

/// Row-wise diagonal Gaussian log density, `N x 1`.
pub fn gauss_log_density(t: &Tape, z: Var, mu: Var, sigma: Var) -> crate::tensor::Result<Var> {
    let d = t.div(t.sub(z, mu)?, sigma)?;
    let e = t.add(t.scale(t.square(d)?, -0.5)?, t.neg(t.log(sigma)?)?)?;
    let cols = t.shape(z).1 as f64;
    t.add_scalar(t.sum_rows(e)?, -cols * HALF_LN_2PI)
}

/// Row-wise mixture log density, `N x 1`. Component `k` of `mu` / `sigma`
/// occupies columns `k*zdim..(k+1)*zdim`; `log_pi` is `N x K`.
pub fn gmm_log_density(t: &Tape, z: Var, mu: Var, sigma: Var, log_pi: Var, zdim: usize) -> crate::tensor::Result<Var> {
    let k = t.shape(log_pi).1;
    let mut comps = Vec::with_capacity(k);
    for c in 0..k {
        let m = t.slice_cols(mu, c * zdim, (c + 1) * zdim)?;
        let s = t.slice_cols(sigma, c * zdim, (c + 1) * zdim)?;
        comps.push(gauss_log_density(t, z, m, s)?);
    }
    let lp = t.add(t.concat(&comps)?, log_pi)?;
    t.logsumexp(lp)
}

/// Monte Carlo `KL(q || p)` summed over nodes and averaged over the draws
/// `eps` (each `N x Z`), reparameterised as `z = mu + sigma * eps`.
#[allow(clippy::too_many_arguments)]
pub fn kl_gauss_vs_gmm_vars(
    t: &Tape,
    q_mu: Var,
    q_sigma: Var,
    p_mu: Var,
    p_sigma: Var,
    p_log_pi: Var,
    zdim: usize,
    eps: &[Tensor],
) -> crate::tensor::Result<Var> {
    let mut total = None;
    for e in eps {
        let z = t.add(q_mu, t.mul(q_sigma, t.constant(e.clone()))?)?;
        let lq = gauss_log_density(t, z, q_mu, q_sigma)?;
        let lp = gmm_log_density(t, z, p_mu, p_sigma, p_log_pi, zdim)?;
        let d = t.sum(t.sub(lq, lp)?)?;
        total = Some(match total {
            None => d,
            Some(acc) => t.add(acc, d)?,
        });
    }
    t.scale(total.expect("at least one draw"), 1.0 / eps.len() as f64)
}

/// KL estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub value: f64,
    pub std_err: f64,
}

/// Standard normal draws, `count` tensors of `n x z`.
pub(crate) fn normal_draws(rng: &mut ChaCha8Rng, count: usize, n: usize, z: usize) -> Vec<Tensor> {
    (0..count).map(|_| Tensor::from_fn(n, z, |_, _| StandardNormal.sample(rng))).collect()
}

/// `KL(q || p)` by `num_mc` reparameterised draws seeded with `seed`.
pub fn kl_gauss_vs_gmm(q: &GaussianNodeDistribution, p: &GmmNodeDistribution, num_mc: usize, seed: u64) -> Result<KlEstimate> {
    let (n, z) = q.mu.shape();
    if num_mc == 0 || p.mu.iter().any(|m| m.shape() != (n, z)) || p.pi.shape() != (n, p.components()) {
        return Err(CvaeError::Invalid("mismatched distributions or zero draws".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = normal_draws(&mut rng, num_mc, n, z);
    let (pm, ps) = p.stacked();
    let mut vals = Vec::with_capacity(num_mc);
    for e in &draws {
        let t = Tape::new();
        let log_pi = t.log(t.constant(p.pi.clone()))?;
        let v = kl_gauss_vs_gmm_vars(
            &t,
            t.constant(q.mu.clone()),
            t.constant(q.sigma.clone()),
            t.constant(pm.clone()),
            t.constant(ps.clone()),
            log_pi,
            z,
            std::slice::from_ref(e),
        )?;
        vals.push(t.value(v).item());
    }
    let m = vals.iter().sum::<f64>() / num_mc as f64;
    let var = if num_mc > 1 { vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (num_mc - 1) as f64 } else { 0.0 };
    Ok(KlEstimate { value: m, std_err: (var / num_mc as f64).sqrt() })
}

/// `sum_i log N(p_i | mu_i, I)` over the coordinates selected by `mask`.
pub fn log_likelihood_var(t: &Tape, target: Var, mu: Var, mask: &Tensor) -> crate::tensor::Result<Var> {
    let r = t.mul(t.square(t.sub(target, mu)?)?, t.constant(mask.clone()))?;
    let used: f64 = mask.data().iter().sum();
    t.add_scalar(t.scale(t.sum(r)?, -0.5)?, -used * HALF_LN_2PI)
}

/// Log likelihood of a complete graph's points under unit-variance Gaussians
/// centred at `mu`, in the graph's own dimension.
pub fn log_likelihood(g: &PointGraph, mu: &[Vector3<f64>]) -> Result<f64> {
    if mu.len() != g.num_nodes() {
        return Err(CvaeError::Invalid("mean count differs from node count".into()));
    }
    let d = g.dim();
    let sq: f64 = g.points().iter().zip(mu).map(|(p, m)| (0..d).map(|k| (p[k] - m[k]).powi(2)).sum::<f64>()).sum();
    Ok(-0.5 * sq - (g.num_nodes() * d) as f64 * HALF_LN_2PI)
}
