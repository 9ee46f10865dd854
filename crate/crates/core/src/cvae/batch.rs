use std::rc::Rc;

use nalgebra::Vector3;

use super::{CvaeError, Result};
use crate::dgp::determined_points;
use crate::egnn::GraphBatch;
use crate::graph::PointGraph;
use crate::tensor::Tensor;

/// Model-ready arrays for a set of problems: partial graphs and, for
/// training, the matching complete graphs.
#[derive(Debug, Clone)]
pub struct Batch {
    pub partial: GraphBatch,
    pub complete: Option<GraphBatch>,
    /// `N x NODE_FEATURES` invariant node descriptors, see [`node_features`].
    pub features: Tensor,
    /// `N x 3` starting positions: known nodes where they are, unknown nodes
    /// from [`initial_points`].
    pub init: Tensor,
    /// `N x 3` complete-graph positions, when available.
    pub target: Option<Tensor>,
    /// `N x 3`, 1 on the coordinates a graph actually uses.
    pub mask: Tensor,
    /// Graph index of every node.
    pub node_graph: Rc<[usize]>,
    pub dims: Vec<usize>,
    pub length_scale: f64,
}

fn lift(p: &Vector3<f64>, scale: f64) -> [f64; 3] {
    [p.x * scale, p.y * scale, p.z * scale]
}

/// Equivariant starting guess for a partial graph. Known and determined
/// nodes (see [`determined_points`]) are placed exactly; any other joint `k`
/// of `n` is placed a fraction `k / n` of the way from the base origin to
/// the end-effector, and in 3-D its axis point one unit along the same blend
/// of the base and end-effector axis directions.
pub fn initial_points(g: &PointGraph) -> std::result::Result<Vec<Vector3<f64>>, String> {
    let (dim, n_nodes) = (g.dim(), g.num_nodes());
    let (base, per) = (dim + 1, dim - 1);
    if n_nodes < base + 2 * per || (n_nodes - base) % per != 0 {
        return Err(format!("{n_nodes} nodes do not form a {dim}-D chain layout"));
    }
    let dof = (n_nodes - base) / per - 1;
    let ee = base + per * dof;
    let known = g.known_mask();
    if !known[0] || !known[ee] || (dim == 3 && (!known[3] || !known[ee + 1])) {
        return Err("base anchors and end-effector points must be known".into());
    }
    let pts = g.points();
    let (o0, on) = (pts[0], pts[ee]);
    let (mut out, fixed) = determined_points(g);
    for k in 0..dof {
        let s = k as f64 / dof as f64;
        let node = base + per * k;
        if !fixed[node] {
            out[node] = o0 + (on - o0) * s;
        }
        if dim == 3 && !fixed[node + 1] {
            let (a0, an) = (pts[3] - o0, pts[ee + 1] - on);
            let blend = a0 + (an - a0) * s;
            let dir = if blend.norm() > 1e-6 { blend.normalize() } else { a0.normalize() };
            out[node + 1] = out[node] + dir;
        }
    }
    Ok(out)
}

/// Width of [`node_features`].
pub const NODE_FEATURES: usize = 7;

/// Invariant description of node `i` of a chain graph: kind one-hot, the
/// frame's position `k / n` along the chain, an axis-point flag and flags
/// for the `x` and `y` base anchors. Without them the anchors and the joints
/// are told apart only through distances, which the layers learn slowly.
pub fn node_features(g: &PointGraph, i: usize) -> [f64; NODE_FEATURES] {
    let dim = g.dim();
    let (base, per) = (dim + 1, dim - 1);
    let dof = (g.num_nodes() - base) / per - 1;
    let k = g.kinds()[i].one_hot();
    let mut f = [k[0], k[1], k[2], 0.0, 0.0, 0.0, 0.0];
    if i < base {
        match i {
            1 => f[5] = 1.0,
            2 => f[6] = 1.0,
            3 => f[4] = 1.0,
            _ => {}
        }
    } else {
        let (frame, slot) = ((i - base) / per, (i - base) % per);
        f[3] = frame as f64 / dof.max(1) as f64;
        f[4] = slot as f64;
    }
    f
}

impl Batch {
    /// `items` pairs a partial graph with its complete graph (or `None`).
    /// Either all items carry a complete graph or none does.
    pub fn new(items: &[(&PointGraph, Option<&PointGraph>)], length_scale: f64) -> Result<Batch> {
        if items.is_empty() {
            return Err(CvaeError::Invalid("empty batch".into()));
        }
        let with_complete = items[0].1.is_some();
        let (mut features, mut init, mut target, mut mask) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut node_graph = Vec::new();
        let mut free = Vec::new();
        let mut dims = Vec::new();
        for (gi, (partial, complete)) in items.iter().enumerate() {
            if complete.is_some() != with_complete {
                return Err(CvaeError::Invalid("mixed batch of labelled and unlabelled problems".into()));
            }
            let n = partial.num_nodes();
            if let Some(c) = complete {
                if c.num_nodes() != n || c.dim() != partial.dim() || c.is_partial() {
                    return Err(CvaeError::Invalid(format!("problem {gi}: complete graph does not match")));
                }
                for p in c.points() {
                    target.extend(lift(p, length_scale));
                }
            }
            free.extend(determined_points(partial).1.iter().map(|&f| if f { 0.0 } else { 1.0 }));
            let start = initial_points(partial).map_err(|m| CvaeError::Invalid(format!("problem {gi}: {m}")))?;
            for (i, p) in start.iter().enumerate() {
                features.extend(node_features(partial, i));
                init.extend(lift(p, length_scale));
                let d = partial.dim();
                mask.extend([1.0, 1.0, if d == 3 { 1.0 } else { 0.0 }]);
                node_graph.push(gi);
            }
            dims.push(partial.dim());
        }
        let n = node_graph.len();
        let partials: Vec<&PointGraph> = items.iter().map(|(p, _)| *p).collect();
        // edge weights stay in world units, matching distance features
        // divided by the length scale inside the layers
        let mut partial = GraphBatch::new(&partials, 1.0);
        partial.free = Tensor::new(n, 1, free)?;
        let complete = if with_complete {
            let cs: Vec<&PointGraph> = items.iter().map(|(_, c)| c.expect("checked")).collect();
            Some(GraphBatch::new(&cs, 1.0))
        } else {
            None
        };
        Ok(Batch {
            partial,
            complete,
            features: Tensor::new(n, NODE_FEATURES, features)?,
            init: Tensor::new(n, 3, init)?,
            target: if with_complete { Some(Tensor::new(n, 3, target)?) } else { None },
            mask: Tensor::new(n, 3, mask)?,
            node_graph: node_graph.into(),
            dims,
            length_scale,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_graph.len()
    }

    pub fn num_graphs(&self) -> usize {
        self.dims.len()
    }

    /// Node range of graph `g`.
    pub fn nodes_of(&self, g: usize) -> std::ops::Range<usize> {
        self.partial.offsets[g]..self.partial.offsets[g + 1]
    }

    /// Rows of `positions` (model units) belonging to graph `g`, in world
    /// units with unused coordinates zeroed.
    pub fn points_of(&self, positions: &Tensor, g: usize) -> Vec<Vector3<f64>> {
        let d = self.dims[g];
        self.nodes_of(g)
            .map(|i| {
                let mut v = Vector3::new(positions.get(i, 0), positions.get(i, 1), positions.get(i, 2)) / self.length_scale;
                if d == 2 {
                    v.z = 0.0;
                }
                v
            })
            .collect()
    }
}
