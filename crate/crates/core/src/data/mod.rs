//! Synthetic chains, datasets of IK problems, and the evaluation protocols.

mod ablate;
mod eval;
mod suite;

pub use ablate::{ablate, mean_elbo, AblationArm, AblationOptions, AblationReport};
pub use eval::{
    evaluate, percentile, BruteForceOracle, CvaeSampler, Draws, ErrorRow, ErrorStats, EvalOptions, EvalSummary,
    IkSampler, PerfectOracle, Problem, ProblemErrors, SamplerFailure,
};
pub use suite::{chain_suite, suite_chain, SUITE_NAMES};

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cvae::TrainingPairs;
use crate::graph::{complete_graph, partial_graph, GraphError, GraphJson, PointGraph};
use crate::kinematics::{JointConfig, KinematicChain, KinematicsError, Pose, RobotSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(String),
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Cvae(#[from] crate::cvae::CvaeError),
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

/// How a dataset was made; enough to regenerate it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub chains: Vec<RobotSpec>,
    pub per_chain: usize,
    pub seed: u64,
    /// Whether the file carries serialized graphs with every record.
    pub with_graphs: bool,
}

pub const DATASET_FORMAT: &str = "ggik-dataset/1";

/// One IK problem: a chain and the configuration the goal came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub chain: usize,
    pub q: JointConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordJson {
    chain: usize,
    q: JointConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    partial: Option<GraphJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    complete: Option<GraphJson>,
}

/// Problems over a fixed list of chains. Graphs are rebuilt from
/// `(chain, q)` on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct IkDataset {
    pub manifest: DatasetManifest,
    pub chains: Vec<KinematicChain>,
    pub records: Vec<Record>,
}

/// `per_chain` uniform configurations for each chain. Chain `i` draws from
/// stream `i` of a generator seeded with `seed`.
pub fn generate_dataset(chains: &[KinematicChain], per_chain: usize, seed: u64) -> IkDataset {
    let mut records = Vec::with_capacity(chains.len() * per_chain);
    for (ci, chain) in chains.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ci as u64);
        for _ in 0..per_chain {
            records.push(Record { chain: ci, q: chain.random_config_with(&mut rng) });
        }
    }
    IkDataset {
        manifest: DatasetManifest {
            format: DATASET_FORMAT.into(),
            chains: chains.iter().map(KinematicChain::to_spec).collect(),
            per_chain,
            seed,
            with_graphs: false,
        },
        chains: chains.to_vec(),
        records,
    }
}

impl IkDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Regenerates the dataset from its manifest alone.
    pub fn regenerate(manifest: &DatasetManifest) -> Result<IkDataset, DataError> {
        let chains = manifest.chains.iter().map(KinematicChain::from_spec).collect::<Result<Vec<_>, _>>()?;
        let mut d = generate_dataset(&chains, manifest.per_chain, manifest.seed);
        d.manifest.with_graphs = manifest.with_graphs;
        Ok(d)
    }

    pub fn goal(&self, i: usize) -> Pose {
        let r = &self.records[i];
        self.chains[r.chain].forward_kinematics(&r.q).expect("records hold valid configurations")
    }

    /// `(partial, complete)` graphs of record `i`.
    pub fn graphs(&self, i: usize) -> (PointGraph, PointGraph) {
        let r = &self.records[i];
        let chain = &self.chains[r.chain];
        let partial = partial_graph(chain, &self.goal(i)).expect("valid goal");
        let complete = complete_graph(chain, &r.q).expect("valid configuration");
        (partial, complete)
    }

    pub fn problem(&self, i: usize) -> Problem<'_> {
        let r = &self.records[i];
        Problem { id: i, chain: &self.chains[r.chain], q_true: &r.q, goal: self.goal(i) }
    }

    /// The records whose indices are in `range`, sharing chains and manifest.
    pub fn slice(&self, range: std::ops::Range<usize>) -> IkDataset {
        IkDataset { manifest: self.manifest.clone(), chains: self.chains.clone(), records: self.records[range].to_vec() }
    }

    /// Hash of a record's chain and exact angle bits.
    pub fn record_hash(&self, i: usize) -> [u8; 32] {
        let r = &self.records[i];
        let mut h = Sha256::new();
        h.update(self.chains[r.chain].to_json().as_bytes());
        for v in &r.q.0 {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().into()
    }

    /// Writes a JSON manifest header then one record per entry, each as a
    /// little-endian `u32` length followed by that many bytes of JSON.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), DataError> {
        let header = serde_json::to_vec(&self.manifest).map_err(|e| DataError::Format(e.to_string()))?;
        frame(&mut w, &header)?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for (i, r) in self.records.iter().enumerate() {
            let (partial, complete) = if self.manifest.with_graphs {
                let (p, c) = self.graphs(i);
                (Some(p.to_json_value()), Some(c.to_json_value()))
            } else {
                (None, None)
            };
            let rec = RecordJson { chain: r.chain, q: r.q.clone(), partial, complete };
            frame(&mut w, &serde_json::to_vec(&rec).map_err(|e| DataError::Format(e.to_string()))?)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<IkDataset, DataError> {
        let manifest: DatasetManifest =
            serde_json::from_slice(&unframe(&mut r)?).map_err(|e| DataError::Format(format!("manifest: {e}")))?;
        if manifest.format != DATASET_FORMAT {
            return Err(DataError::Format(format!("unsupported format {:?}", manifest.format)));
        }
        let chains = manifest.chains.iter().map(KinematicChain::from_spec).collect::<Result<Vec<_>, _>>()?;
        let mut count = [0u8; 8];
        r.read_exact(&mut count)?;
        let count = u64::from_le_bytes(count) as usize;
        let mut records = Vec::with_capacity(count.min(1 << 24));
        for k in 0..count {
            let rec: RecordJson =
                serde_json::from_slice(&unframe(&mut r)?).map_err(|e| DataError::Format(format!("record {k}: {e}")))?;
            let chain = chains.get(rec.chain).ok_or_else(|| DataError::Format(format!("record {k}: bad chain id")))?;
            if rec.q.len() != chain.dof() {
                return Err(DataError::Format(format!("record {k}: wrong joint count")));
            }
            records.push(Record { chain: rec.chain, q: rec.q });
            if let (Some(p), Some(c)) = (rec.partial, rec.complete) {
                let d = IkDataset { manifest: manifest.clone(), chains: chains.clone(), records: vec![records[k].clone()] };
                let (ep, ec) = d.graphs(0);
                if PointGraph::from_json_value(&p)? != ep || PointGraph::from_json_value(&c)? != ec {
                    return Err(DataError::Format(format!("record {k}: stored graphs disagree with its configuration")));
                }
            }
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(DataError::Format("trailing bytes after records".into()));
        }
        Ok(IkDataset { manifest, chains, records })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), DataError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<IkDataset, DataError> {
        IkDataset::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn frame<W: Write>(w: &mut W, bytes: &[u8]) -> Result<(), DataError> {
    let n = u32::try_from(bytes.len()).map_err(|_| DataError::Format("record too large".into()))?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn unframe<R: Read>(r: &mut R) -> Result<Vec<u8>, DataError> {
    let mut n = [0u8; 4];
    r.read_exact(&mut n).map_err(|_| DataError::Format("truncated file".into()))?;
    let mut buf = vec![0u8; u32::from_le_bytes(n) as usize];
    r.read_exact(&mut buf).map_err(|_| DataError::Format("truncated record".into()))?;
    Ok(buf)
}

impl TrainingPairs for IkDataset {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn pair(&self, i: usize) -> (PointGraph, PointGraph) {
        self.graphs(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> IkDataset {
        let chains: Vec<_> = ["planar-2r", "planar-3r", "spatial-6r"].iter().map(|n| suite_chain(n).unwrap()).collect();
        generate_dataset(&chains, 100, 11)
    }

    #[test]
    fn sizes_and_consistency() {
        let d = small();
        assert_eq!(d.len(), 300);
        for i in (0..300).step_by(7) {
            let (p, c) = d.graphs(i);
            for e in p.edges() {
                assert!((c.weight(e.u, e.v).unwrap() - e.weight).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn regeneration_is_identical() {
        let d = small();
        assert_eq!(IkDataset::regenerate(&d.manifest).unwrap(), d);
    }

    #[test]
    fn file_round_trip_is_byte_identical() {
        let mut d = small().slice(0..40);
        for with_graphs in [false, true] {
            d.manifest.with_graphs = with_graphs;
            let mut a = Vec::new();
            d.write_to(&mut a).unwrap();
            let back = IkDataset::read_from(a.as_slice()).unwrap();
            assert_eq!(back, d);
            let mut b = Vec::new();
            back.write_to(&mut b).unwrap();
            assert_eq!(a, b);
            assert!(IkDataset::read_from(&a[..a.len() - 3]).is_err());
        }
    }

    #[test]
    fn seeds_give_disjoint_sets() {
        let chains = vec![suite_chain("planar-3r").unwrap()];
        let a = generate_dataset(&chains, 500, 1);
        let b = generate_dataset(&chains, 500, 2);
        let ha: std::collections::HashSet<_> = (0..a.len()).map(|i| a.record_hash(i)).collect();
        assert!((0..b.len()).all(|i| !ha.contains(&b.record_hash(i))));
    }
}
