//! Operation graph shared by the workload builders, the partitioner and the
//! simulator.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::types::{MatrixId, NodeId, Region};
use crate::workloads::conv::ConvSpec;

/// What a matrix holds. Drives placement and reserved PMI entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatrixRole {
    Weight,
    Input,
    Output,
    State,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixInfo {
    pub id: MatrixId,
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub role: MatrixRole,
}

/// A column window of a stored matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatRef {
    pub id: MatrixId,
    pub cols: Range<usize>,
}

impl MatRef {
    pub fn width(&self) -> usize {
        self.cols.len()
    }
}

/// Matmul operand: column-wise concatenation of windows, optionally
/// transposed as a whole.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Operand {
    pub parts: Vec<MatRef>,
    pub transpose: bool,
}

impl Operand {
    /// Rows and columns of the logical (possibly transposed) operand.
    pub fn shape(&self, g: &OpGraph) -> (usize, usize) {
        let rows = g.matrix(self.parts[0].id).rows;
        let cols: usize = self.parts.iter().map(MatRef::width).sum();
        if self.transpose {
            (cols, rows)
        } else {
            (rows, cols)
        }
    }

    /// Split a region of the logical operand into regions of stored matrices.
    pub fn source_regions(&self, region: Region) -> Vec<(MatrixId, Region)> {
        let u = if self.transpose { region.transpose() } else { region };
        let mut out = Vec::new();
        let mut off = 0;
        for p in &self.parts {
            let w = p.width();
            let c0 = u.col0.max(off);
            let c1 = u.col1.min(off + w);
            if c0 < c1 {
                let base = p.cols.start;
                out.push((p.id, Region::new(u.row0..u.row1, base + c0 - off..base + c1 - off)));
            }
            off += w;
        }
        out
    }

    /// Stored matrix and index of logical element `(i, j)`.
    pub fn locate(&self, i: usize, j: usize) -> (MatrixId, usize, usize) {
        let (r, c) = if self.transpose { (j, i) } else { (i, j) };
        let mut off = 0;
        for p in &self.parts {
            if c < off + p.width() {
                return (p.id, r, p.cols.start + c - off);
            }
            off += p.width();
        }
        panic!("operand column {c} out of range");
    }
}

/// Activation applied when an output element finalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PostOp {
    None,
    Sigmoid,
    Tanh,
}

impl PostOp {
    pub fn apply(self, v: f32) -> f32 {
        match self {
            PostOp::None => v,
            PostOp::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            PostOp::Tanh => v.tanh(),
        }
    }

    pub fn flops(self) -> u64 {
        match self {
            PostOp::None => 0,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Matmul,
    ErrorMatmul,
    GradMatmul,
    AggregateActivate,
    WeightUpdate,
    Lowering,
}

impl NodeKind {
    pub fn is_matmul(self) -> bool {
        matches!(self, NodeKind::Matmul | NodeKind::ErrorMatmul | NodeKind::GradMatmul)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeOp {
    Matmul {
        a: Operand,
        b: Operand,
        out: MatrixId,
        post: PostOp,
        /// Output columns `c` and `c + period` share an owner slice.
        period: Option<usize>,
    },
    /// Gate nonlinearities and cell update.
    LstmForward {
        z: MatrixId,
        c_prev: MatrixId,
        h: MatrixId,
        c: MatrixId,
        hidden: usize,
    },
    /// Gradient through the gates: `dh` windows are summed.
    LstmBackward {
        z: MatrixId,
        c_prev: MatrixId,
        c: MatrixId,
        dh: Vec<MatRef>,
        dc: Option<MatrixId>,
        dz: MatrixId,
        dc_prev: MatrixId,
        hidden: usize,
    },
    Tanh {
        input: MatrixId,
        output: MatrixId,
    },
    /// `d_input = (1 - y^2) * sum(grads)` for `y = tanh(x)`.
    TanhBackward {
        output: MatrixId,
        grads: Vec<MatRef>,
        d_input: MatrixId,
    },
    /// `y - target`: gradient of half squared error.
    LossGrad {
        y: MatrixId,
        target: MatrixId,
        out: MatrixId,
    },
    SgdUpdate {
        weight: MatrixId,
        grad: MatrixId,
        out: MatrixId,
        eta: f64,
    },
    Im2col {
        input: MatrixId,
        conv: ConvSpec,
        out: MatrixId,
    },
}

impl NodeOp {
    pub fn reads(&self) -> Vec<MatrixId> {
        let mut v = match self {
            NodeOp::Matmul { a, b, .. } => a.parts.iter().chain(&b.parts).map(|p| p.id).collect(),
            NodeOp::LstmForward { z, c_prev, .. } => vec![*z, *c_prev],
            NodeOp::LstmBackward {
                z, c_prev, c, dh, dc, ..
            } => {
                let mut v = vec![*z, *c_prev, *c];
                v.extend(dh.iter().map(|d| d.id));
                v.extend(dc.iter().copied());
                v
            }
            NodeOp::Tanh { input, .. } => vec![*input],
            NodeOp::TanhBackward { output, grads, .. } => {
                let mut v = vec![*output];
                v.extend(grads.iter().map(|g| g.id));
                v
            }
            NodeOp::LossGrad { y, target, .. } => vec![*y, *target],
            NodeOp::SgdUpdate { weight, grad, .. } => vec![*weight, *grad],
            NodeOp::Im2col { input, .. } => vec![*input],
        };
        v.sort();
        v.dedup();
        v
    }

    pub fn writes(&self) -> Vec<MatrixId> {
        match self {
            NodeOp::Matmul { out, .. } => vec![*out],
            NodeOp::LstmForward { h, c, .. } => vec![*h, *c],
            NodeOp::LstmBackward { dz, dc_prev, .. } => vec![*dz, *dc_prev],
            NodeOp::Tanh { output, .. } => vec![*output],
            NodeOp::TanhBackward { d_input, .. } => vec![*d_input],
            NodeOp::LossGrad { out, .. } => vec![*out],
            NodeOp::SgdUpdate { out, .. } => vec![*out],
            NodeOp::Im2col { out, .. } => vec![*out],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub op: NodeOp,
    pub layer: usize,
    pub time_step: usize,
    pub micro_step: usize,
    pub deps: Vec<NodeId>,
}

impl Node {
    /// Floating-point operations the node performs: `2mnk` per product plus
    /// one per activation, `9` per LSTM cell unit forward, `14 + inputs` per
    /// unit backward and `2` per SGD element.
    pub fn flops(&self, g: &OpGraph) -> u64 {
        let elems = |m: MatrixId| (g.matrix(m).rows * g.matrix(m).cols) as u64;
        match &self.op {
            NodeOp::Matmul { a, b, out, post, .. } => {
                let (m, k) = a.shape(g);
                let n = b.shape(g).1;
                2 * (m * n * k) as u64 + post.flops() * elems(*out)
            }
            NodeOp::LstmForward { h, .. } => 9 * elems(*h),
            NodeOp::LstmBackward { dc_prev, dh, .. } => (14 + dh.len() as u64) * elems(*dc_prev),
            NodeOp::Tanh { output, .. } => elems(*output),
            NodeOp::TanhBackward { d_input, grads, .. } => (2 + grads.len() as u64) * elems(*d_input),
            NodeOp::LossGrad { out, .. } => elems(*out),
            NodeOp::SgdUpdate { out, .. } => 2 * elems(*out),
            NodeOp::Im2col { .. } => 0,
        }
    }
}

/// Dependency DAG of matmul, activation and update tasks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OpGraph {
    pub matrices: Vec<MatrixInfo>,
    pub nodes: Vec<Node>,
    pub layers: usize,
}

impl OpGraph {
    pub fn matrix(&self, id: MatrixId) -> &MatrixInfo {
        &self.matrices[id.0 as usize]
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0 as usize]
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node that writes each matrix.
    pub fn producers(&self) -> BTreeMap<MatrixId, NodeId> {
        let mut map = BTreeMap::new();
        for n in &self.nodes {
            for m in n.op.writes() {
                map.insert(m, n.id);
            }
        }
        map
    }

    /// Nodes that read each matrix, in node order.
    pub fn consumers(&self) -> BTreeMap<MatrixId, Vec<NodeId>> {
        let mut map: BTreeMap<MatrixId, Vec<NodeId>> = BTreeMap::new();
        for n in &self.nodes {
            for m in n.op.reads() {
                map.entry(m).or_default().push(n.id);
            }
        }
        map
    }

    /// Matrices no node produces: they must be supplied as data.
    pub fn sources(&self) -> Vec<MatrixId> {
        let produced = self.producers();
        self.matrices
            .iter()
            .map(|m| m.id)
            .filter(|id| !produced.contains_key(id))
            .collect()
    }

    /// Kahn topological order; fails on a cycle.
    pub fn topo_order(&self) -> Result<Vec<NodeId>> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for node in &self.nodes {
            for d in &node.deps {
                let d = d.0 as usize;
                if d >= n {
                    return Err(Error::Plan(format!("{} depends on unknown node {d}", node.id)));
                }
                succ[d].push(node.id.0 as usize);
                indeg[node.id.0 as usize] += 1;
            }
        }
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(NodeId(i as u32));
            for &s in &succ[i] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Plan(format!(
                "graph has a cycle through {} nodes",
                n - order.len()
            )));
        }
        Ok(order)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, m) in self.matrices.iter().enumerate() {
            if m.id.0 as usize != i || m.rows == 0 || m.cols == 0 {
                return Err(Error::Plan(format!("bad matrix descriptor {}", m.name)));
            }
        }
        let produced = self.producers();
        for n in &self.nodes {
            for m in n.op.reads() {
                if let Some(p) = produced.get(&m) {
                    if !n.deps.contains(p) && *p != n.id {
                        return Err(Error::Plan(format!(
                            "{} reads {} without depending on its producer {}",
                            n.id,
                            self.matrix(m).name,
                            p
                        )));
                    }
                }
            }
        }
        self.topo_order().map(|_| ())
    }

    pub fn flops(&self) -> u64 {
        self.nodes.iter().map(|n| n.flops(self)).sum()
    }

    pub fn find(&self, name: &str) -> Option<MatrixId> {
        self.matrices.iter().find(|m| m.name == name).map(|m| m.id)
    }

    /// Distinct micro-step labels within one time-step.
    pub fn micro_steps(&self, time_step: usize) -> usize {
        let mut steps: Vec<usize> = self
            .nodes
            .iter()
            .filter(|n| n.time_step == time_step)
            .map(|n| n.micro_step)
            .collect();
        steps.sort();
        steps.dedup();
        steps.len()
    }
}

/// Incremental graph construction; dependencies come from data flow.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    graph: OpGraph,
    producer: BTreeMap<MatrixId, NodeId>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn matrix(&mut self, name: impl Into<String>, rows: usize, cols: usize, role: MatrixRole) -> MatrixId {
        let id = MatrixId(self.graph.matrices.len() as u32);
        self.graph.matrices.push(MatrixInfo {
            id,
            name: name.into(),
            rows,
            cols,
            role,
        });
        id
    }

    pub fn info(&self, id: MatrixId) -> &MatrixInfo {
        self.graph.matrix(id)
    }

    pub fn full(&self, id: MatrixId) -> MatRef {
        MatRef {
            id,
            cols: 0..self.graph.matrix(id).cols,
        }
    }

    pub fn add(&mut self, kind: NodeKind, op: NodeOp, layer: usize, time_step: usize, micro_step: usize) -> NodeId {
        let id = NodeId(self.graph.nodes.len() as u32);
        let mut deps: Vec<NodeId> = op
            .reads()
            .iter()
            .filter_map(|m| self.producer.get(m).copied())
            .collect();
        deps.sort();
        deps.dedup();
        for m in op.writes() {
            self.producer.insert(m, id);
        }
        self.graph.layers = self.graph.layers.max(layer + 1);
        self.graph.nodes.push(Node {
            id,
            kind,
            op,
            layer,
            time_step,
            micro_step,
            deps,
        });
        id
    }

    pub fn finish(self) -> OpGraph {
        self.graph
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operand_regions_split_across_parts() {
        let x = MatrixId(0);
        let h = MatrixId(1);
        let op = Operand {
            parts: vec![MatRef { id: x, cols: 0..3 }, MatRef { id: h, cols: 0..3 }],
            transpose: false,
        };
        let r = op.source_regions(Region::new(0..2, 2..5));
        assert_eq!(r, vec![(x, Region::new(0..2, 2..3)), (h, Region::new(0..2, 0..2))]);
        assert_eq!(op.locate(1, 4), (h, 1, 1));
        let t = Operand { transpose: true, ..op };
        assert_eq!(t.locate(4, 1), (h, 1, 1));
        assert_eq!(
            t.source_regions(Region::new(3..6, 0..1)),
            vec![(h, Region::new(0..1, 0..3))]
        );
    }

    #[test]
    fn builder_tracks_dependencies() {
        let mut b = GraphBuilder::new();
        let a = b.matrix("a", 2, 2, MatrixRole::Input);
        let w = b.matrix("w", 2, 2, MatrixRole::Weight);
        let c = b.matrix("c", 2, 2, MatrixRole::Output);
        let d = b.matrix("d", 2, 2, MatrixRole::Output);
        let mm = |a: MatRef, w: MatRef, out| NodeOp::Matmul {
            a: Operand {
                parts: vec![a],
                transpose: false,
            },
            b: Operand {
                parts: vec![w],
                transpose: false,
            },
            out,
            post: PostOp::None,
            period: None,
        };
        let n0 = b.add(NodeKind::Matmul, mm(b.full(a), b.full(w), c), 0, 0, 0);
        let n1 = b.add(NodeKind::Matmul, mm(b.full(c), b.full(w), d), 0, 0, 1);
        let g = b.finish();
        assert_eq!(g.node(n1).deps, vec![n0]);
        assert!(g.validate().is_ok());
        assert_eq!(g.sources(), vec![a, w]);
    }

    #[test]
    fn cycle_detected() {
        let mut g = OpGraph::default();
        for i in 0..2u32 {
            g.nodes.push(Node {
                id: NodeId(i),
                kind: NodeKind::AggregateActivate,
                op: NodeOp::Tanh {
                    input: MatrixId(0),
                    output: MatrixId(0),
                },
                layer: 0,
                time_step: 0,
                micro_step: 0,
                deps: vec![NodeId(1 - i)],
            });
        }
        assert!(matches!(g.topo_order(), Err(Error::Plan(_))));
    }
}
