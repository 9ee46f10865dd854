use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, CvaeSampler, DataError, ErrorStats, EvalOptions, IkDataset};
use crate::cvae::{elbo_terms, normal_draws, train, Batch, CvaeConfig, GgikModel, TrainOptions, TrainReport};
use crate::egnn::Arch;
use crate::graph::PointGraph;
use crate::tensor::Tape;

/// Mean per-problem ELBO over `data`, `num_mc` draws each, evaluated in
/// batches of `batch`. Deterministic in `seed`.
pub fn mean_elbo(model: &GgikModel, data: &IkDataset, num_mc: usize, batch: usize, seed: u64) -> Result<f64, DataError> {
    if data.is_empty() || num_mc == 0 || batch == 0 {
        return Err(DataError::Format("mean_elbo needs data, draws and a batch size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for start in (0..data.len()).step_by(batch) {
        let pairs: Vec<(PointGraph, PointGraph)> = (start..(start + batch).min(data.len())).map(|i| data.graphs(i)).collect();
        let items: Vec<_> = pairs.iter().map(|(p, c)| (p, Some(c))).collect();
        let b = Batch::new(&items, model.cfg.length_scale)?;
        let eps = normal_draws(&mut rng, num_mc, b.num_nodes(), model.cfg.latent);
        let t = Tape::new();
        let terms = elbo_terms(model, &t, &b, &eps)?;
        total += t.value(terms.elbo).item();
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOptions {
    /// Shared model shape; the arch field is overridden per arm.
    pub model: CvaeConfig,
    pub train: TrainOptions,
    /// Seed for parameter initialisation, identical for both arms.
    pub init_seed: u64,
    pub eval: EvalOptions,
    /// Monte Carlo draws per problem for the held-out ELBO.
    pub elbo_mc: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub arch: Arch,
    pub num_params: usize,
    pub test_elbo: f64,
    pub stats: ErrorStats,
    /// Share of drawn samples that failed configuration recovery.
    pub malformed_rate: f64,
    pub train: TrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub arms: Vec<AblationArm>,
    /// Larger over smaller parameter count.
    pub param_ratio: f64,
}

impl AblationReport {
    pub fn arm(&self, arch: Arch) -> Option<&AblationArm> {
        self.arms.iter().find(|a| a.arch == arch)
    }

    pub fn params_matched(&self) -> bool {
        self.param_ratio <= 1.1
    }
}

/// Trains the equivariant and baseline variants on `train_set` with the same
/// schedule and seeds, then scores both on `test_set`.
pub fn ablate(
    train_set: &IkDataset,
    test_set: &IkDataset,
    opts: &AblationOptions,
    mut progress: impl FnMut(Arch, usize, f64),
) -> Result<AblationReport, DataError> {
    let mut arms = Vec::new();
    for arch in [Arch::Egnn, Arch::Baseline] {
        let cfg = CvaeConfig { arch, ..opts.model.clone() };
        let mut model = GgikModel::new(cfg, opts.init_seed)?;
        let report = train(&mut model, train_set, &opts.train, |s, e| progress(arch, s, e))?;
        let test_elbo = mean_elbo(&model, test_set, opts.elbo_mc, 64, opts.eval.seed)?;
        let summary = evaluate(&CvaeSampler(&model), test_set, &opts.eval)?;
        arms.push(AblationArm {
            arch,
            num_params: model.num_params(),
            test_elbo,
            malformed_rate: summary.malformed_rate(),
            stats: summary.stats,
            train: report,
        });
    }
    let (a, b) = (arms[0].num_params as f64, arms[1].num_params as f64);
    Ok(AblationReport { param_ratio: a.max(b) / a.min(b), arms })
}
