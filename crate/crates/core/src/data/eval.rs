use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataError, IkDataset};
use crate::cvae::{sample_solutions, CvaeError, GgikModel};
use crate::dgp::brute_force_ik;
use crate::kinematics::{pose_error, JointConfig, KinematicChain, Pose};

/// One IK query handed to a sampler.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    /// Record index in the dataset.
    pub id: usize,
    pub chain: &'a KinematicChain,
    /// Configuration the goal was generated from. Only oracles may look.
    pub q_true: &'a JointConfig,
    pub goal: Pose,
}

/// Why a sampler produced nothing for a problem.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplerFailure {
    /// Counted as a failed problem.
    #[error("all {0} samples failed configuration recovery")]
    AllMalformed(usize),
    /// Aborts the evaluation.
    #[error("{0}")]
    Fatal(String),
}

/// Configurations drawn for one problem.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Draws {
    pub configs: Vec<JointConfig>,
    /// Samples that were discarded as malformed.
    pub malformed: usize,
}

/// Anything that proposes `count` configurations for a goal.
pub trait IkSampler: Sync {
    fn draw(&self, problem: &Problem<'_>, count: usize, seed: u64) -> Result<Draws, SamplerFailure>;
}

/// The trained model, drawing `count` samples and keeping all of them.
pub struct CvaeSampler<'m>(pub &'m GgikModel);

impl IkSampler for CvaeSampler<'_> {
    fn draw(&self, p: &Problem<'_>, count: usize, seed: u64) -> Result<Draws, SamplerFailure> {
        match sample_solutions(self.0, p.chain, &p.goal, count, count, seed) {
            Ok(out) => Ok(Draws { configs: out.solutions.configs, malformed: out.malformed }),
            Err(CvaeError::AllSamplesMalformed { tried }) => Err(SamplerFailure::AllMalformed(tried)),
            Err(e) => Err(SamplerFailure::Fatal(e.to_string())),
        }
    }
}

/// Returns the ground-truth configuration every time.
pub struct PerfectOracle;

impl IkSampler for PerfectOracle {
    fn draw(&self, p: &Problem<'_>, count: usize, _seed: u64) -> Result<Draws, SamplerFailure> {
        Ok(Draws { configs: vec![p.q_true.clone(); count], malformed: 0 })
    }
}

/// Cycles through the grid-search solution set of each goal.
pub struct BruteForceOracle {
    pub grid_per_joint: usize,
}

impl IkSampler for BruteForceOracle {
    fn draw(&self, p: &Problem<'_>, count: usize, _seed: u64) -> Result<Draws, SamplerFailure> {
        let set = brute_force_ik(p.chain, &p.goal, self.grid_per_joint, (1e-9, 1e-9))
            .map_err(|e| SamplerFailure::Fatal(e.to_string()))?;
        if set.is_empty() {
            return Err(SamplerFailure::AllMalformed(count));
        }
        Ok(Draws { configs: set.configs.iter().cycle().take(count).cloned().collect(), malformed: 0 })
    }
}

/// `p`-th percentile (0..=1) of `values` by linear interpolation between
/// order statistics. `NaN` for an empty slice.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let x = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (x - lo as f64)
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Statistics of one error type on one robot. Position errors are in
/// thousandths of the chain's reach, rotation errors in degrees.
///
/// `min`/`max` are per-problem extremes averaged over problems; `q1`/`q3`
/// are per-problem quartiles averaged the same way, so
/// `min <= q1 <= q3 <= max` and `min <= mean <= max` always hold. Quartiles
/// of all samples pooled together are kept alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub robot: String,
    pub err_type: String,
    #[serde(with = "nan_as_null")]
    pub mean: f64,
    #[serde(with = "nan_as_null")]
    pub min: f64,
    #[serde(with = "nan_as_null")]
    pub max: f64,
    #[serde(with = "nan_as_null")]
    pub q1: f64,
    #[serde(with = "nan_as_null")]
    pub q3: f64,
    /// Fraction of problems where every sample was malformed.
    pub failure_rate: f64,
    #[serde(with = "nan_as_null")]
    pub pooled_q1: f64,
    #[serde(with = "nan_as_null")]
    pub pooled_q3: f64,
    pub problems: usize,
}

impl ErrorRow {
    fn from_problems(robot: &str, err_type: &str, per_problem: &[&[f64]], failed: usize) -> ErrorRow {
        let n = per_problem.len();
        let avg = |f: &dyn Fn(&[f64]) -> f64| {
            if n == 0 {
                f64::NAN
            } else {
                per_problem.iter().map(|e| f(e)).sum::<f64>() / n as f64
            }
        };
        let pooled: Vec<f64> = per_problem.iter().flat_map(|e| e.iter().copied()).collect();
        ErrorRow {
            robot: robot.to_string(),
            err_type: err_type.to_string(),
            mean: avg(&|e| e.iter().sum::<f64>() / e.len() as f64),
            min: avg(&|e| e.iter().copied().fold(f64::INFINITY, f64::min)),
            max: avg(&|e| e.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            q1: avg(&|e| percentile(e, 0.25)),
            q3: avg(&|e| percentile(e, 0.75)),
            failure_rate: if n + failed == 0 { 0.0 } else { failed as f64 / (n + failed) as f64 },
            pooled_q1: percentile(&pooled, 0.25),
            pooled_q3: percentile(&pooled, 0.75),
            problems: n + failed,
        }
    }

    /// `min <= q1 <= q3 <= max` and `min <= mean <= max`, up to rounding.
    pub fn is_ordered(&self) -> bool {
        if self.mean.is_nan() {
            return true;
        }
        let tol = 1e-9 * (1.0 + self.max.abs());
        self.min <= self.q1 + tol
            && self.q1 <= self.q3 + tol
            && self.q3 <= self.max + tol
            && self.min <= self.mean + tol
            && self.mean <= self.max + tol
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    pub rows: Vec<ErrorRow>,
}

impl ErrorStats {
    pub const CSV_HEADER: &'static str = "robot,err_type,mean,min,max,q1,q3,failure_rate";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            s += &format!(
                "{},{},{},{},{},{},{},{}\n",
                r.robot, r.err_type, r.mean, r.min, r.max, r.q1, r.q3, r.failure_rate
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn row(&self, robot: &str, err_type: &str) -> Option<&ErrorRow> {
        self.rows.iter().find(|r| r.robot == robot && r.err_type == err_type)
    }
}

/// Errors of every sample drawn for one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemErrors {
    pub id: usize,
    pub robot: String,
    /// Position errors in thousandths of reach.
    pub pos: Vec<f64>,
    /// Rotation errors in degrees.
    pub rot: Vec<f64>,
    pub malformed: usize,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub stats: ErrorStats,
    pub problems: Vec<ProblemErrors>,
    pub drawn: usize,
    pub malformed: usize,
}

impl EvalSummary {
    /// Share of all drawn samples discarded as malformed.
    pub fn malformed_rate(&self) -> f64 {
        if self.drawn == 0 {
            0.0
        } else {
            self.malformed as f64 / self.drawn as f64
        }
    }

    /// Tidy per-sample table for plotting.
    pub fn plot_csv(&self) -> String {
        let mut s = String::from("problem,robot,sample,pos_err,rot_err_deg\n");
        for p in &self.problems {
            for (k, (a, b)) in p.pos.iter().zip(&p.rot).enumerate() {
                s += &format!("{},{},{},{},{}\n", p.id, p.robot, k, a, b);
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub samples_per_problem: usize,
    pub seed: u64,
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { samples_per_problem: 32, seed: 0, threads: None }
    }
}

fn problem_seed(seed: u64, id: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng.next_u64()
}

/// Draws samples for every problem of `data` and summarises the pose errors
/// per robot. Problems run in parallel but results are reduced in record order.
pub fn evaluate<S: IkSampler>(sampler: &S, data: &IkDataset, opts: &EvalOptions) -> Result<EvalSummary, DataError> {
    if opts.samples_per_problem == 0 {
        return Err(DataError::Format("need at least one sample per problem".into()));
    }
    let run = |i: usize| -> Result<ProblemErrors, DataError> {
        let p = data.problem(i);
        let robot = p.chain.name().to_string();
        let reach = p.chain.reach();
        match sampler.draw(&p, opts.samples_per_problem, problem_seed(opts.seed, i)) {
            Ok(d) => {
                let mut pos = Vec::with_capacity(d.configs.len());
                let mut rot = Vec::with_capacity(d.configs.len());
                for q in &d.configs {
                    let (e_p, e_r) = pose_error(&p.goal, &p.chain.forward_kinematics(q)?);
                    pos.push(e_p / reach * 1e3);
                    rot.push(e_r.to_degrees());
                }
                let failed = pos.is_empty();
                Ok(ProblemErrors { id: i, robot, pos, rot, malformed: d.malformed, failed })
            }
            Err(SamplerFailure::AllMalformed(n)) => {
                Ok(ProblemErrors { id: i, robot, pos: vec![], rot: vec![], malformed: n, failed: true })
            }
            Err(SamplerFailure::Fatal(msg)) => Err(DataError::Format(format!("problem {i}: {msg}"))),
        }
    };
    let results: Vec<Result<ProblemErrors, DataError>> = match opts.threads {
        Some(1) => (0..data.len()).map(run).collect(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| DataError::Io(e.to_string()))?
            .install(|| (0..data.len()).into_par_iter().map(run).collect()),
        None => (0..data.len()).into_par_iter().map(run).collect(),
    };
    let problems = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    for chain in &data.chains {
        let name = chain.name();
        let mine: Vec<&ProblemErrors> = problems.iter().filter(|p| p.robot == name).collect();
        if mine.is_empty() {
            continue;
        }
        let failed = mine.iter().filter(|p| p.failed).count();
        let ok: Vec<&&ProblemErrors> = mine.iter().filter(|p| !p.failed).collect();
        let pos: Vec<&[f64]> = ok.iter().map(|p| p.pos.as_slice()).collect();
        let rot: Vec<&[f64]> = ok.iter().map(|p| p.rot.as_slice()).collect();
        rows.push(ErrorRow::from_problems(name, "position", &pos, failed));
        rows.push(ErrorRow::from_problems(name, "rotation", &rot, failed));
    }
    let drawn = problems.len() * opts.samples_per_problem;
    let malformed = problems.iter().map(|p| p.malformed).sum();
    Ok(EvalSummary { stats: ErrorStats { rows }, problems, drawn, malformed })
}
