//! E(n)-equivariant message passing over complete graphs, and a plain
//! message-passing baseline that sees absolute coordinates.
//!
//! Layer `l` maps `(p, h)` to
//!
//! ```text
//! m_ij = phi_e(h_i, h_j, |p_i - p_j|^2, w_ij, present_ij)
//! p_i <- p_i + C * sum_{j != i} (p_i - p_j) * phi_x(m_ij),   C = 1 / (N - 1)
//!        (only for nodes whose position is not given)
//! h_i <- phi_h(h_i, C * sum_{j != i} m_ij)
//! ```
//!
//! where `w_ij` is the known edge weight of the source graph (0 when absent).
//! Several graphs are processed at once as a disjoint union; every graph is
//! complete within itself.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::PointGraph;
use crate::tensor::{ModelParams, Result, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Equivariant layers.
    Egnn,
    /// Non-equivariant message passing on absolute coordinates.
    Baseline,
}

impl std::str::FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "egnn" | "equivariant" => Ok(Arch::Egnn),
            "baseline" | "mpnn" => Ok(Arch::Baseline),
            _ => Err(format!("unknown architecture {s:?} (expected egnn or baseline)")),
        }
    }
}

/// Widths shared by the layers of a stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub arch: Arch,
    /// Hidden node width `F`.
    pub hidden: usize,
    /// Message width `f_m`; also the inner width of every MLP.
    pub message: usize,
    pub dim: usize,
    /// Length used to make distance features dimensionless.
    pub dist_norm: f64,
}

/// Number of per-edge scalar features besides the node states.
const EDGE_FEATURES: usize = 3;

/// Connectivity of a batch of disjoint complete graphs.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub dim: usize,
    /// First node of each graph, plus the total node count at the end.
    pub offsets: Vec<usize>,
    /// Receiving node `i` of each directed edge.
    pub recv: Rc<[usize]>,
    /// Sending node `j` of each directed edge.
    pub send: Rc<[usize]>,
    /// `E x 1`, the factor `1 / (N_g - 1)` of the edge's graph.
    pub coef: Tensor,
    /// `E x 2`, known weight over `dist_norm` and presence flag.
    pub edge_attr: Tensor,
    /// `N x 1`, 1 for nodes whose position is unknown. Known nodes never move.
    pub free: Tensor,
}

impl GraphBatch {
    /// Complete-graph batch for `graphs`, taking known weights from their edges.
    pub fn new(graphs: &[&PointGraph], dist_norm: f64) -> GraphBatch {
        let dim = graphs.first().map_or(3, |g| g.dim());
        let mut offsets = vec![0];
        let (mut recv, mut send, mut coef, mut attr) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut free = Vec::new();
        for g in graphs {
            let base = *offsets.last().expect("nonempty");
            let n = g.num_nodes();
            let (w, present) = g.dense_edges();
            free.extend(g.known_mask().iter().map(|&k| if k { 0.0 } else { 1.0 }));
            let c = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        recv.push(base + i);
                        send.push(base + j);
                        coef.push(c);
                        attr.push(w[i * n + j] / dist_norm);
                        attr.push(if present[i * n + j] { 1.0 } else { 0.0 });
                    }
                }
            }
            offsets.push(base + n);
        }
        let e = recv.len();
        GraphBatch {
            dim,
            offsets,
            recv: recv.into(),
            send: send.into(),
            coef: Tensor::new(e, 1, coef).expect("sized"),
            edge_attr: Tensor::new(e, 2, attr).expect("sized"),
            free: Tensor::new(free.len(), 1, free).expect("sized"),
        }
    }

    pub fn num_nodes(&self) -> usize {
        *self.offsets.last().expect("nonempty")
    }

    pub fn num_graphs(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.recv.len()
    }
}

/// Positions (equivariant channel) and hidden features (invariant channel).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphState {
    /// `N x D`.
    pub positions: Var,
    /// `N x F`.
    pub hidden: Var,
}

fn xavier<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, gain: f64) -> Tensor {
    xavier_block(rng, fan_in, fan_in, fan_out, gain)
}

/// `rows` rows of a Xavier-uniform matrix whose full input width is `fan_in`.
fn xavier_block<R: Rng>(rng: &mut R, rows: usize, fan_in: usize, fan_out: usize, gain: f64) -> Tensor {
    let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(rows, fan_out, |_, _| rng.random_range(-a..a))
}

/// Fresh linear map `name.w` (`fan_in x fan_out`) and bias `name.b`.
pub fn init_linear<R: Rng>(p: &mut ModelParams, name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) {
    p.insert(format!("{name}.w"), xavier(rng, fan_in, fan_out, gain));
    p.insert(format!("{name}.b"), Tensor::zeros(1, fan_out));
}

/// `x W + b` with parameters `name.w`, `name.b`.
pub fn linear(t: &Tape, p: &ModelParams, name: &str, x: Var) -> Result<Var> {
    let y = t.matmul(x, t.param(p, &format!("{name}.w"))?)?;
    t.add(y, t.param(p, &format!("{name}.b"))?)
}

/// Parameters of one layer, named under `prefix` (e.g. `"dec.layer0."`).
pub fn init_layer<R: Rng>(cfg: &LayerConfig, prefix: &str, rng: &mut R) -> ModelParams {
    let (f, m, d) = (cfg.hidden, cfg.message, cfg.dim);
    let mut p = ModelParams::new(1);
    let edge_in = match cfg.arch {
        Arch::Egnn => EDGE_FEATURES,
        Arch::Baseline => EDGE_FEATURES + 2 * d,
    };
    // first phi_e layer acting on [h_i, h_j, edge features], split by input block
    let fan_in = 2 * f + edge_in;
    p.insert(format!("{prefix}phi_e.wa"), xavier_block(rng, f, fan_in, m, 1.0));
    p.insert(format!("{prefix}phi_e.wb"), xavier_block(rng, f, fan_in, m, 1.0));
    p.insert(format!("{prefix}phi_e.we"), xavier_block(rng, edge_in, fan_in, m, 1.0));
    p.insert(format!("{prefix}phi_e.b1"), Tensor::zeros(1, m));
    init_linear(&mut p, &format!("{prefix}phi_e.l2"), m, m, 1.0, rng);

    match cfg.arch {
        Arch::Egnn => {
            init_linear(&mut p, &format!("{prefix}phi_x.l1"), m, m, 1.0, rng);
            // small last layer keeps early position updates gentle
            p.insert(format!("{prefix}phi_x.w2"), xavier(rng, m, 1, 0.1));
        }
        Arch::Baseline => {
            init_linear(&mut p, &format!("{prefix}phi_p.l1"), f + d, m, 1.0, rng);
            init_linear(&mut p, &format!("{prefix}phi_p.l2"), m, d, 0.1, rng);
        }
    }

    let fan_in = f + m;
    p.insert(format!("{prefix}phi_h.wh"), xavier_block(rng, f, fan_in, m, 1.0));
    p.insert(format!("{prefix}phi_h.wm"), xavier_block(rng, m, fan_in, m, 1.0));
    p.insert(format!("{prefix}phi_h.b1"), Tensor::zeros(1, m));
    init_linear(&mut p, &format!("{prefix}phi_h.l2"), m, f, 1.0, rng);
    p
}

/// Messages `m_ij` for every directed edge, `E x f_m`, plus the relative
/// position vectors `p_i - p_j` (`E x D`).
fn messages(
    t: &Tape,
    p: &ModelParams,
    prefix: &str,
    cfg: &LayerConfig,
    batch: &GraphBatch,
    s: GraphState,
) -> Result<(Var, Var)> {
    let pi = t.gather_rows(s.positions, &batch.recv)?;
    let pj = t.gather_rows(s.positions, &batch.send)?;
    let rel = t.sub(pi, pj)?;
    let d2 = t.scale(t.sum_rows(t.square(rel)?)?, 1.0 / (cfg.dist_norm * cfg.dist_norm))?;
    let mut edge = vec![d2, t.constant(batch.edge_attr.clone())];
    if cfg.arch == Arch::Baseline {
        edge.push(t.scale(pi, 1.0 / cfg.dist_norm)?);
        edge.push(t.scale(pj, 1.0 / cfg.dist_norm)?);
    }
    let edge = t.concat(&edge)?;

    let ha = t.matmul(s.hidden, t.param(p, &format!("{prefix}phi_e.wa"))?)?;
    let hb = t.matmul(s.hidden, t.param(p, &format!("{prefix}phi_e.wb"))?)?;
    let pre = t.add(t.gather_rows(ha, &batch.recv)?, t.gather_rows(hb, &batch.send)?)?;
    let pre = t.add(pre, t.matmul(edge, t.param(p, &format!("{prefix}phi_e.we"))?)?)?;
    let pre = t.add(pre, t.param(p, &format!("{prefix}phi_e.b1"))?)?;
    let m = t.silu(linear(t, p, &format!("{prefix}phi_e.l2"), t.silu(pre)?)?)?;
    Ok((m, rel))
}

fn update_hidden(t: &Tape, p: &ModelParams, prefix: &str, batch: &GraphBatch, h: Var, m: Var) -> Result<Var> {
    let agg = t.scatter_add_rows(t.mul(m, t.constant(batch.coef.clone()))?, &batch.recv, batch.num_nodes())?;
    let pre = t.add(
        t.matmul(h, t.param(p, &format!("{prefix}phi_h.wh"))?)?,
        t.matmul(agg, t.param(p, &format!("{prefix}phi_h.wm"))?)?,
    )?;
    let pre = t.add(pre, t.param(p, &format!("{prefix}phi_h.b1"))?)?;
    t.add(h, linear(t, p, &format!("{prefix}phi_h.l2"), t.silu(pre)?)?)
}

/// One equivariant layer.
pub fn egnn_layer(
    t: &Tape,
    p: &ModelParams,
    prefix: &str,
    cfg: &LayerConfig,
    batch: &GraphBatch,
    s: GraphState,
) -> Result<GraphState> {
    let (m, rel) = messages(t, p, prefix, cfg, batch, s)?;
    let wx = t.matmul(t.silu(linear(t, p, &format!("{prefix}phi_x.l1"), m)?)?, t.param(p, &format!("{prefix}phi_x.w2"))?)?;
    let wx = t.mul(wx, t.constant(batch.coef.clone()))?;
    let shift = t.scatter_add_rows(t.mul(rel, wx)?, &batch.recv, batch.num_nodes())?;
    let positions = t.add(s.positions, t.mul(shift, t.constant(batch.free.clone()))?)?;
    let hidden = update_hidden(t, p, prefix, batch, s.hidden, m)?;
    Ok(GraphState { positions, hidden })
}

/// One baseline layer: messages see absolute coordinates and positions are
/// re-predicted per node, so rigid motions are not respected.
pub fn baseline_mpnn_layer(
    t: &Tape,
    p: &ModelParams,
    prefix: &str,
    cfg: &LayerConfig,
    batch: &GraphBatch,
    s: GraphState,
) -> Result<GraphState> {
    let (m, _) = messages(t, p, prefix, cfg, batch, s)?;
    let hidden = update_hidden(t, p, prefix, batch, s.hidden, m)?;
    let inp = t.concat(&[hidden, t.scale(s.positions, 1.0 / cfg.dist_norm)?])?;
    let step = linear(t, p, &format!("{prefix}phi_p.l2"), t.silu(linear(t, p, &format!("{prefix}phi_p.l1"), inp)?)?)?;
    let step = t.mul(t.scale(step, cfg.dist_norm)?, t.constant(batch.free.clone()))?;
    let positions = t.add(s.positions, step)?;
    Ok(GraphState { positions, hidden })
}

/// Applies the layers named by `prefixes` in order.
pub fn egnn_stack(
    t: &Tape,
    p: &ModelParams,
    prefixes: &[String],
    cfg: &LayerConfig,
    batch: &GraphBatch,
    mut s: GraphState,
) -> Result<GraphState> {
    for prefix in prefixes {
        s = match cfg.arch {
            Arch::Egnn => egnn_layer(t, p, prefix, cfg, batch, s)?,
            Arch::Baseline => baseline_mpnn_layer(t, p, prefix, cfg, batch, s)?,
        };
    }
    Ok(s)
}

/// A projection `in_features -> F` followed by `layers` layers, all named
/// under `prefix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stack {
    pub prefix: String,
    pub in_features: usize,
    pub layers: usize,
    pub cfg: LayerConfig,
}

impl Stack {
    pub fn layer_prefixes(&self) -> Vec<String> {
        (0..self.layers).map(|l| format!("{}layer{l}.", self.prefix)).collect()
    }

    pub fn init<R: Rng>(&self, rng: &mut R) -> ModelParams {
        let mut p = ModelParams::new(1);
        init_linear(&mut p, &format!("{}input", self.prefix), self.in_features, self.cfg.hidden, 1.0, rng);
        for prefix in self.layer_prefixes() {
            p.extend_prefixed("", init_layer(&self.cfg, &prefix, rng));
        }
        p
    }

    /// Runs the stack on node inputs `x` (`N x in_features`) and positions.
    pub fn forward(&self, t: &Tape, p: &ModelParams, batch: &GraphBatch, x: Var, positions: Var) -> Result<GraphState> {
        let hidden = linear(t, p, &format!("{}input", self.prefix), x)?;
        egnn_stack(t, p, &self.layer_prefixes(), &self.cfg, batch, GraphState { positions, hidden })
    }
}
