//! Graph CVAE for inverse kinematics.
//!
//! Three stacks share the node layout of [`crate::graph`]:
//! the encoder reads a complete graph and gives per-node Gaussians over
//! latents, the prior reads the partial graph and gives per-node Gaussian
//! mixtures, and the decoder maps the partial graph plus latents to node
//! positions. Latents enter and leave through the invariant (hidden) channel,
//! positions through the equivariant one.
//!
//! Internally every graph lives in 3-D model units: planar graphs are lifted
//! to `z = 0` and all lengths are multiplied by
//! [`CvaeConfig::length_scale`].

mod batch;
mod density;
mod sample;
mod train;

pub use batch::{initial_points, node_features, Batch, NODE_FEATURES};
pub use density::{
    gauss_log_density, gmm_log_density, kl_gauss_vs_gmm, kl_gauss_vs_gmm_vars, log_likelihood, log_likelihood_var,
    GaussianNodeDistribution, GmmNodeDistribution, KlEstimate,
};
pub(crate) use density::normal_draws;
pub use sample::{rank_by_error, sample_points, sample_solutions, select_solution, SampleOutcome};
pub use train::{elbo, elbo_terms, train, ElboTerms, TrainOptions, TrainReport, TrainingPairs};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dgp::DgpError;
use crate::egnn::{init_linear, linear, Arch, LayerConfig, Stack};
use crate::kinematics::KinematicChain;
use crate::tensor::{load_checkpoint, save_checkpoint, ModelParams, Tape, TensorError, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CvaeError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("all {tried} samples failed configuration recovery")]
    AllSamplesMalformed { tried: usize },
    #[error("no candidates to select from")]
    EmptyCandidates,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dgp(#[from] DgpError),
}

pub type Result<T> = std::result::Result<T, CvaeError>;

/// Smallest standard deviation any head can emit.
pub const SIGMA_MIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeConfig {
    /// Latent width `Z` per node.
    pub latent: usize,
    /// Mixture components `K` of the prior.
    pub mixtures: usize,
    /// Hidden node width `F`.
    pub hidden: usize,
    /// Message and MLP width `f_m`.
    pub message: usize,
    /// Layers per stack.
    pub layers: usize,
    pub arch: Arch,
    /// World length to model length factor.
    pub length_scale: f64,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        CvaeConfig { latent: 16, mixtures: 8, hidden: 32, message: 32, layers: 2, arch: Arch::Egnn, length_scale: 50.0 }
    }
}

impl CvaeConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.latent > 0
            && self.mixtures > 0
            && self.hidden > 0
            && self.message > 0
            && self.length_scale > 0.0
            && self.length_scale.is_finite();
        if ok {
            Ok(())
        } else {
            Err(CvaeError::Invalid(format!("bad model config {self:?}")))
        }
    }

    fn layer_config(&self) -> LayerConfig {
        LayerConfig { arch: self.arch, hidden: self.hidden, message: self.message, dim: 3, dist_norm: self.length_scale }
    }

    fn stack(&self, prefix: &str, in_features: usize) -> Stack {
        Stack { prefix: prefix.to_string(), in_features, layers: self.layers, cfg: self.layer_config() }
    }
}

/// Sidecar metadata stored with a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: CvaeConfig,
    /// SHA-256 of each training chain's normalized JSON spec.
    pub chain_hashes: Vec<String>,
    pub seed: u64,
}

/// Hex SHA-256 of a chain's normalized spec.
pub fn chain_hash(chain: &KinematicChain) -> String {
    let digest = Sha256::digest(chain.to_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parameters plus their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GgikModel {
    pub cfg: CvaeConfig,
    pub params: ModelParams,
}

/// Number of one-hot node-kind features.
const KINDS: usize = NODE_FEATURES;

impl GgikModel {
    /// Freshly initialised model.
    pub fn new(cfg: CvaeConfig, seed: u64) -> Result<GgikModel> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new(1);
        let (z, k, f) = (cfg.latent, cfg.mixtures, cfg.hidden);
        params.extend_prefixed("", cfg.stack("enc.", KINDS).init(&mut rng));
        init_linear(&mut params, "enc.mu", f, z, 1.0, &mut rng);
        init_linear(&mut params, "enc.sigma", f, z, 1.0, &mut rng);
        params.extend_prefixed("", cfg.stack("prior.", KINDS).init(&mut rng));
        init_linear(&mut params, "prior.mu", f, k * z, 1.0, &mut rng);
        init_linear(&mut params, "prior.sigma", f, k * z, 1.0, &mut rng);
        init_linear(&mut params, "prior.logits", f, k, 1.0, &mut rng);
        params.extend_prefixed("", cfg.stack("dec.", KINDS + z).init(&mut rng));
        Ok(GgikModel { cfg, params })
    }

    pub fn from_parts(cfg: CvaeConfig, params: ModelParams) -> Result<GgikModel> {
        cfg.validate()?;
        let fresh = GgikModel::new(cfg.clone(), 0)?;
        for (name, t) in fresh.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(CvaeError::Invalid(format!("parameter {name} has shape {:?}, expected {:?}", p.shape(), t.shape())))
                }
                None => return Err(CvaeError::Invalid(format!("missing parameter {name}"))),
            }
        }
        if params.len() != fresh.params.len() {
            return Err(CvaeError::Invalid("unexpected extra parameters".into()));
        }
        Ok(GgikModel { cfg, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.count()
    }

    /// Writes the parameters to `path` and `meta` to `path.json`.
    pub fn save(&self, path: &std::path::Path, meta: &ModelMeta) -> Result<()> {
        if meta.config != self.cfg {
            return Err(CvaeError::Invalid("metadata config differs from the model's".into()));
        }
        Ok(save_checkpoint(path, &self.params, meta)?)
    }

    pub fn load(path: &std::path::Path) -> Result<(GgikModel, ModelMeta)> {
        let (params, meta): (ModelParams, ModelMeta) = load_checkpoint(path)?;
        Ok((GgikModel::from_parts(meta.config.clone(), params)?, meta))
    }

    /// Encoder heads on a batch of complete graphs: `(mu, sigma)`, each `N x Z`.
    pub fn encode_vars(&self, t: &Tape, b: &Batch) -> Result<(Var, Var)> {
        let complete = b.complete.as_ref().ok_or_else(|| CvaeError::Invalid("encoder needs complete graphs".into()))?;
        let target = t.constant(b.target.clone().expect("complete batch has targets"));
        let stack = self.cfg.stack("enc.", KINDS);
        let s = stack.forward(t, &self.params, complete, t.constant(b.features.clone()), target)?;
        let mu = linear(t, &self.params, "enc.mu", s.hidden)?;
        let sigma = positive(t, linear(t, &self.params, "enc.sigma", s.hidden)?)?;
        Ok((mu, sigma))
    }

    /// Prior heads on a batch of partial graphs: `(mu, sigma)` as
    /// `N x (K*Z)` with component `k` in columns `k*Z..(k+1)*Z`, and log
    /// mixing weights `N x K`.
    pub fn prior_vars(&self, t: &Tape, b: &Batch) -> Result<(Var, Var, Var)> {
        let stack = self.cfg.stack("prior.", KINDS);
        let s = stack.forward(t, &self.params, &b.partial, t.constant(b.features.clone()), t.constant(b.init.clone()))?;
        let mu = linear(t, &self.params, "prior.mu", s.hidden)?;
        let sigma = positive(t, linear(t, &self.params, "prior.sigma", s.hidden)?)?;
        let logits = linear(t, &self.params, "prior.logits", s.hidden)?;
        let log_pi = t.sub(logits, t.logsumexp(logits)?)?;
        Ok((mu, sigma, log_pi))
    }

    /// Decoded node positions (`N x 3`, model units) for latents `z` (`N x Z`).
    pub fn decode_var(&self, t: &Tape, b: &Batch, z: Var) -> Result<Var> {
        let stack = self.cfg.stack("dec.", KINDS + self.cfg.latent);
        let x = t.concat(&[t.constant(b.features.clone()), z])?;
        let s = stack.forward(t, &self.params, &b.partial, x, t.constant(b.init.clone()))?;
        Ok(s.positions)
    }

    /// Encoder output for one complete graph.
    pub fn encode(&self, complete: &crate::graph::PointGraph) -> Result<GaussianNodeDistribution> {
        if complete.is_partial() {
            return Err(CvaeError::Invalid("encoder needs a complete graph".into()));
        }
        let b = Batch::new(&[(complete, Some(complete))], self.cfg.length_scale)?;
        let t = Tape::new();
        let (mu, sigma) = self.encode_vars(&t, &b)?;
        Ok(GaussianNodeDistribution { mu: (*t.value(mu)).clone(), sigma: (*t.value(sigma)).clone() })
    }

    /// Prior mixture for one partial graph.
    pub fn prior(&self, partial: &crate::graph::PointGraph) -> Result<GmmNodeDistribution> {
        let b = Batch::new(&[(partial, None)], self.cfg.length_scale)?;
        let t = Tape::new();
        let (mu, sigma, log_pi) = self.prior_vars(&t, &b)?;
        let pi = t.value(log_pi).map(f64::exp);
        Ok(GmmNodeDistribution::from_heads(&t.value(mu), &t.value(sigma), &pi, self.cfg.latent))
    }

    /// Decoded positions (world units, `D` coordinates used) of one partial
    /// graph for latents `z` (`N x Z`).
    pub fn decode(
        &self,
        partial: &crate::graph::PointGraph,
        z: &crate::tensor::Tensor,
    ) -> Result<Vec<nalgebra::Vector3<f64>>> {
        let b = Batch::new(&[(partial, None)], self.cfg.length_scale)?;
        if z.shape() != (b.num_nodes(), self.cfg.latent) {
            return Err(CvaeError::Invalid(format!("latents must be {}x{}", b.num_nodes(), self.cfg.latent)));
        }
        let t = Tape::new();
        let p = self.decode_var(&t, &b, t.constant(z.clone()))?;
        Ok(b.points_of(&t.value(p), 0))
    }
}

/// `softplus(x) + SIGMA_MIN`.
fn positive(t: &Tape, x: Var) -> crate::tensor::Result<Var> {
    t.add_scalar(t.softplus(x)?, SIGMA_MIN)
}
