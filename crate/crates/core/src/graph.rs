//! Distance-geometric description of a chain.
//!
//! Node layout (stable, used by every downstream consumer):
//!
//! * `D + 1` base anchors: the base origin and unit points on each base axis;
//! * joint points in chain order. In 3-D each joint contributes two points on
//!   its rotation axis (offsets 0 and +1); in 2-D one point at the joint;
//! * end-effector points: 3-D two points on the final axis (offsets 0 and +1),
//!   2-D one point.
//!
//! The partial graph keeps only distances that are identical for every
//! configuration reaching the goal: structural edges between consecutive
//! point groups (base anchors, joints, end-effector) and the goal edges among
//! base anchors and end-effector points.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::kinematics::{JointConfig, KinematicChain, KinematicsError, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Base,
    General,
    EndEffector,
}

impl NodeKind {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            NodeKind::Base => [1.0, 0.0, 0.0],
            NodeKind::General => [0.0, 1.0, 0.0],
            NodeKind::EndEffector => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("graph JSON: {0}")]
    Json(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Node index bookkeeping for one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLayout {
    pub dim: usize,
    pub dof: usize,
}

impl NodeLayout {
    pub fn of(chain: &KinematicChain) -> Self {
        NodeLayout { dim: chain.dim(), dof: chain.dof() }
    }

    /// Points placed per joint and per end-effector.
    pub fn per_joint(&self) -> usize {
        if self.dim == 3 {
            2
        } else {
            1
        }
    }

    pub fn num_base(&self) -> usize {
        self.dim + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.num_base() + self.per_joint() * (self.dof + 1)
    }

    pub fn base_nodes(&self) -> std::ops::Range<usize> {
        0..self.num_base()
    }

    /// Nodes of joint `i` (0-based).
    pub fn joint_nodes(&self, i: usize) -> std::ops::Range<usize> {
        let s = self.num_base() + self.per_joint() * i;
        s..s + self.per_joint()
    }

    pub fn ee_nodes(&self) -> std::ops::Range<usize> {
        self.joint_nodes(self.dof)
    }

    pub fn kinds(&self) -> Vec<NodeKind> {
        let mut k = vec![NodeKind::Base; self.num_base()];
        k.extend(std::iter::repeat_n(NodeKind::General, self.per_joint() * self.dof));
        k.extend(std::iter::repeat_n(NodeKind::EndEffector, self.per_joint()));
        k
    }

    /// Consecutive point groups: base anchors, each joint, end-effector.
    fn groups(&self) -> Vec<std::ops::Range<usize>> {
        let mut g = vec![self.base_nodes()];
        g.extend((0..=self.dof).map(|i| self.joint_nodes(i)));
        g
    }

    /// Structural node pairs (independent of configuration), sorted.
    pub fn structural_pairs(&self) -> Vec<(usize, usize)> {
        let groups = self.groups();
        let mut pairs = Vec::new();
        // within joint pairs (the end-effector pair is a goal edge)
        for i in 0..self.dof {
            let r = self.joint_nodes(i);
            for u in r.clone() {
                for v in u + 1..r.end {
                    pairs.push((u, v));
                }
            }
        }
        for w in groups.windows(2) {
            for u in w[0].clone() {
                for v in w[1].clone() {
                    pairs.push((u, v));
                }
            }
        }
        pairs.sort_unstable();
        pairs
    }

    /// Pairs among base anchors and end-effector points, sorted.
    pub fn goal_pairs(&self) -> Vec<(usize, usize)> {
        let nodes: Vec<usize> = self.base_nodes().chain(self.ee_nodes()).collect();
        let mut pairs = Vec::new();
        for (a, &u) in nodes.iter().enumerate() {
            for &v in &nodes[a + 1..] {
                pairs.push((u, v));
            }
        }
        pairs
    }

    /// Canonical base anchor positions.
    pub fn base_anchors(&self) -> Vec<Vector3<f64>> {
        let mut out = vec![Vector3::zeros()];
        for axis in 0..self.dim {
            let mut e = Vector3::zeros();
            e[axis] = 1.0;
            out.push(e);
        }
        out
    }
}

/// Points of a frame's group: its origin, plus the unit point on its z-axis in 3-D.
fn frame_points(pose: &Pose, dim: usize) -> Vec<Vector3<f64>> {
    let o = *pose.translation();
    if dim == 3 {
        vec![o, o + pose.rotation().column(2)]
    } else {
        vec![o]
    }
}

/// Places the graph nodes for configuration `q`.
pub fn points_from_config(
    chain: &KinematicChain,
    q: &JointConfig,
) -> Result<(Vec<Vector3<f64>>, Vec<NodeKind>), KinematicsError> {
    let layout = NodeLayout::of(chain);
    let frames = chain.joint_frames(q)?;
    let mut pts = layout.base_anchors();
    for f in &frames {
        pts.extend(frame_points(f, layout.dim));
    }
    debug_assert_eq!(pts.len(), layout.num_nodes());
    Ok((pts, layout.kinds()))
}

/// End-effector points implied by a goal pose.
pub fn ee_points(goal: &Pose) -> Vec<Vector3<f64>> {
    frame_points(goal, goal.dim())
}

/// Complete or partial distance graph with node features.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGraph {
    dim: usize,
    points: Vec<Vector3<f64>>,
    known: Vec<bool>,
    kinds: Vec<NodeKind>,
    edges: Vec<Edge>,
    partial: bool,
}

fn dist(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a - b).norm()
}

impl PointGraph {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.points.len()
    }

    /// Node positions; unknown nodes of a partial graph are zero.
    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn known_mask(&self) -> &[bool] {
        &self.known
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    /// Present edges, sorted by `(u, v)` with `u < v`.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_partial(&self) -> bool {
        self.partial
    }

    /// One-hot node features, `N x 3` row-major.
    pub fn features(&self) -> Vec<[f64; 3]> {
        self.kinds.iter().map(|k| k.one_hot()).collect()
    }

    /// Dense symmetric weights and presence flags over all node pairs, row-major `N x N`.
    /// Absent edges carry weight 0.
    pub fn dense_edges(&self) -> (Vec<f64>, Vec<bool>) {
        let n = self.num_nodes();
        let mut w = vec![0.0; n * n];
        let mut present = vec![false; n * n];
        for e in &self.edges {
            for (a, b) in [(e.u, e.v), (e.v, e.u)] {
                w[a * n + b] = e.weight;
                present[a * n + b] = true;
            }
        }
        (w, present)
    }

    /// Weight of edge `(u, v)` if present.
    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        let key = (u.min(v), u.max(v));
        self.edges.binary_search_by(|e| (e.u, e.v).cmp(&key)).ok().map(|i| self.edges[i].weight)
    }

    /// Applies `p -> r p + t` to every known position.
    /// `r` may be any orthogonal matrix; unknown nodes stay at zero.
    pub fn transformed(&self, r: &nalgebra::Matrix3<f64>, t: &Vector3<f64>) -> PointGraph {
        let mut g = self.clone();
        for (p, &k) in g.points.iter_mut().zip(&self.known) {
            if k {
                *p = r * *p + t;
            }
        }
        g
    }

    pub fn to_json_value(&self) -> GraphJson {
        GraphJson {
            dim: self.dim,
            nodes: self
                .points
                .iter()
                .zip(&self.known)
                .zip(&self.kinds)
                .map(|((p, &k), &kind)| NodeJson {
                    kind,
                    pos: k.then(|| p.iter().take(self.dim).copied().collect()),
                })
                .collect(),
            edges: self.edges.iter().map(|e| (e.u, e.v, e.weight)).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("graph serializes")
    }

    pub fn from_json_value(g: &GraphJson) -> Result<PointGraph, GraphError> {
        if g.dim != 2 && g.dim != 3 {
            return Err(GraphError::Invalid(format!("dim must be 2 or 3, got {}", g.dim)));
        }
        let n = g.nodes.len();
        let mut points = Vec::with_capacity(n);
        let mut known = Vec::with_capacity(n);
        for (i, node) in g.nodes.iter().enumerate() {
            match &node.pos {
                Some(p) if p.len() == g.dim => {
                    let mut v = Vector3::zeros();
                    v.as_mut_slice()[..g.dim].copy_from_slice(p);
                    points.push(v);
                    known.push(true);
                }
                Some(_) => return Err(GraphError::Invalid(format!("nodes[{i}].pos has wrong length"))),
                None => {
                    points.push(Vector3::zeros());
                    known.push(false);
                }
            }
        }
        let mut edges = Vec::with_capacity(g.edges.len());
        for &(u, v, w) in &g.edges {
            if u >= v || v >= n || !(w >= 0.0) {
                return Err(GraphError::Invalid(format!("bad edge ({u}, {v}, {w})")));
            }
            edges.push(Edge { u, v, weight: w });
        }
        if !edges.windows(2).all(|w| (w[0].u, w[0].v) < (w[1].u, w[1].v)) {
            return Err(GraphError::Invalid("edges must be sorted and unique".into()));
        }
        let partial = known.iter().any(|k| !k) || edges.len() != n * (n - 1) / 2;
        Ok(PointGraph { dim: g.dim, points, known, kinds: g.nodes.iter().map(|n| n.kind).collect(), edges, partial })
    }

    pub fn from_json(text: &str) -> Result<PointGraph, GraphError> {
        let g: GraphJson = serde_json::from_str(text).map_err(|e| GraphError::Json(e.to_string()))?;
        PointGraph::from_json_value(&g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub dim: usize,
    pub nodes: Vec<NodeJson>,
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeJson {
    pub kind: NodeKind,
    pub pos: Option<Vec<f64>>,
}

/// Complete graph of configuration `q`.
pub fn complete_graph(chain: &KinematicChain, q: &JointConfig) -> Result<PointGraph, KinematicsError> {
    let (points, kinds) = points_from_config(chain, q)?;
    let n = points.len();
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for u in 0..n {
        for v in u + 1..n {
            edges.push(Edge { u, v, weight: dist(&points[u], &points[v]) });
        }
    }
    Ok(PointGraph { dim: chain.dim(), known: vec![true; n], points, kinds, edges, partial: false })
}

/// Configuration-independent structural edge weights of a chain.
pub fn structural_edges(chain: &KinematicChain) -> Vec<Edge> {
    let layout = NodeLayout::of(chain);
    // any configuration gives the same weights; use the zero one
    let (pts, _) = points_from_config(chain, &JointConfig::zeros(chain.dof())).expect("zero config is valid");
    layout
        .structural_pairs()
        .into_iter()
        .map(|(u, v)| Edge { u, v, weight: dist(&pts[u], &pts[v]) })
        .collect()
}

/// Partial graph for reaching `goal` (expressed in the base frame).
/// Reachability is not checked.
pub fn partial_graph(chain: &KinematicChain, goal: &Pose) -> Result<PointGraph, GraphError> {
    if goal.dim() != chain.dim() {
        return Err(GraphError::Invalid(format!("goal is {}-D but chain is {}-D", goal.dim(), chain.dim())));
    }
    let layout = NodeLayout::of(chain);
    let n = layout.num_nodes();
    let mut points = vec![Vector3::zeros(); n];
    let mut known = vec![false; n];
    for (i, p) in layout.base_nodes().zip(layout.base_anchors()) {
        points[i] = p;
        known[i] = true;
    }
    for (i, p) in layout.ee_nodes().zip(ee_points(goal)) {
        points[i] = p;
        known[i] = true;
    }
    let mut edges = structural_edges(chain);
    edges.extend(layout.goal_pairs().into_iter().map(|(u, v)| Edge { u, v, weight: dist(&points[u], &points[v]) }));
    edges.sort_by_key(|e| (e.u, e.v));
    Ok(PointGraph { dim: chain.dim(), points, known, kinds: layout.kinds(), edges, partial: true })
}

/// Dense arrays consumed by the learned models.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphArrays {
    pub dim: usize,
    /// `N x 3` one-hot node features, row-major.
    pub features: Vec<f64>,
    /// `N x D` positions, zero where unknown.
    pub positions: Vec<f64>,
    pub known: Vec<bool>,
    /// Present edges as `(u, v)`.
    pub edge_index: Vec<(usize, usize)>,
    /// Edge weights matching `edge_index`.
    pub edge_attr: Vec<f64>,
}

impl GraphArrays {
    pub fn num_nodes(&self) -> usize {
        self.known.len()
    }
}

pub fn graph_to_arrays(g: &PointGraph) -> GraphArrays {
    let d = g.dim;
    GraphArrays {
        dim: d,
        features: g.kinds.iter().flat_map(|k| k.one_hot()).collect(),
        positions: g.points.iter().flat_map(|p| p.iter().take(d).copied().collect::<Vec<_>>()).collect(),
        known: g.known.clone(),
        edge_index: g.edges.iter().map(|e| (e.u, e.v)).collect(),
        edge_attr: g.edges.iter().map(|e| e.weight).collect(),
    }
}

pub fn arrays_to_graph(a: &GraphArrays) -> Result<PointGraph, GraphError> {
    let n = a.num_nodes();
    let d = a.dim;
    if a.features.len() != 3 * n || a.positions.len() != d * n || a.edge_index.len() != a.edge_attr.len() {
        return Err(GraphError::Invalid("array lengths disagree".into()));
    }
    let kinds = a
        .features
        .chunks(3)
        .map(|r| match r {
            [1.0, 0.0, 0.0] => Ok(NodeKind::Base),
            [0.0, 1.0, 0.0] => Ok(NodeKind::General),
            [0.0, 0.0, 1.0] => Ok(NodeKind::EndEffector),
            _ => Err(GraphError::Invalid("feature row is not one-hot".into())),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let points = a
        .positions
        .chunks(d)
        .map(|c| {
            let mut v = Vector3::zeros();
            v.as_mut_slice()[..d].copy_from_slice(c);
            v
        })
        .collect();
    let edges: Vec<Edge> =
        a.edge_index.iter().zip(&a.edge_attr).map(|(&(u, v), &weight)| Edge { u, v, weight }).collect();
    let partial = a.known.iter().any(|k| !k) || edges.len() != n * (n - 1) / 2;
    Ok(PointGraph { dim: d, points, known: a.known.clone(), kinds, edges, partial })
}
