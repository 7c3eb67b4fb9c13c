//! Whole-graph planning: one partition plan per product, a home for every
//! matrix, and the resulting PMI tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::{dump_plan, layer_groups, plan_dims, split_slabs, PartitionPlan, PmiTable};
use crate::config::SliceConfig;
use crate::error::{Error, Result};
use crate::types::{MatrixId, NodeId, Orientation, Region, SliceId};
use crate::workloads::{MatrixRole, Node, NodeOp, OpGraph};

type Placement = Vec<(SliceId, Region)>;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphPlan {
    pub slices: usize,
    pub groups: Vec<Vec<SliceId>>,
    pub plans: BTreeMap<NodeId, PartitionPlan>,
    /// Where each stored copy of a matrix lives. Transposed copies use
    /// transposed coordinates.
    pub placement: BTreeMap<(MatrixId, Orientation), Placement>,
    pub pmi: PmiTable,
    pub dual_mapping: bool,
}

impl GraphPlan {
    pub fn regions(&self, matrix: MatrixId, orientation: Orientation) -> &[(SliceId, Region)] {
        self.placement
            .get(&(matrix, orientation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Pieces of `region` and the slices holding them.
    pub fn locate(&self, matrix: MatrixId, orientation: Orientation, region: Region) -> Placement {
        self.regions(matrix, orientation)
            .iter()
            .filter_map(|(s, r)| r.intersect(&region).map(|x| (*s, x)))
            .collect()
    }

    /// Register B loads per slice, summed over all plans.
    pub fn slice_load_iterations(&self) -> Vec<u64> {
        let mut v = vec![0; self.slices];
        for plan in self.plans.values() {
            for p in &plan.b {
                v[p.slice] += p.load_iterations;
            }
        }
        v
    }

    pub fn total_load_iterations(&self) -> u64 {
        self.slice_load_iterations().iter().sum()
    }

    pub fn max_slice_load_iterations(&self) -> u64 {
        self.slice_load_iterations().into_iter().max().unwrap_or(0)
    }

    /// Plans followed by PMI entries, one per line.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for plan in self.plans.values() {
            s.push_str(&dump_plan(plan));
        }
        for slice in 0..self.pmi.slices() {
            for e in self.pmi.entries(slice) {
                let r = e.region;
                let _ = writeln!(
                    s,
                    "pmi slice {slice} {} {:?} rows {}..{} cols {}..{} base {} stride {}{}",
                    e.matrix,
                    e.orientation,
                    r.row0,
                    r.row1,
                    r.col0,
                    r.col1,
                    e.base,
                    e.stride,
                    if e.reserved { " reserved" } else { "" }
                );
            }
        }
        s
    }
}

fn clip_cols(p: &Placement, cols: std::ops::Range<usize>) -> Placement {
    let window = Region::new(0..usize::MAX, cols);
    p.iter()
        .filter_map(|(s, r)| r.intersect(&window).map(|x| (*s, x)))
        .collect()
}

fn covers(p: &Placement, rows: usize, cols: usize) -> bool {
    let total: usize = p.iter().map(|(_, r)| r.len()).sum();
    let inside = p.iter().all(|(_, r)| r.row1 <= rows && r.col1 <= cols);
    inside && total == rows * cols
}

/// Output whose placement a pointwise node follows; it also runs there.
pub fn primary_output(node: &Node) -> Option<MatrixId> {
    match &node.op {
        NodeOp::Matmul { .. } => None,
        NodeOp::LstmForward { h, .. } => Some(*h),
        NodeOp::LstmBackward { dc_prev, .. } => Some(*dc_prev),
        NodeOp::Tanh { output, .. } => Some(*output),
        NodeOp::TanhBackward { d_input, .. } => Some(*d_input),
        NodeOp::LossGrad { out, .. } => Some(*out),
        NodeOp::SgdUpdate { out, .. } => Some(*out),
        NodeOp::Im2col { out, .. } => Some(*out),
    }
}

/// Plan every product of the graph and place every matrix.
///
/// Layers get contiguous slice groups, products are split along their
/// common dimension within the group, activations run where their inputs
/// are aggregated, and source matrices are stored where they are first
/// consumed. With `dual_mapping`, each weight also gets a transposed copy
/// split the way the backward products read it.
pub fn plan_graph(graph: &OpGraph, slices: usize, cfg: &SliceConfig, dual_mapping: bool) -> Result<GraphPlan> {
    if slices == 0 {
        return Err(Error::Plan("slices must be >= 1".into()));
    }
    graph.validate()?;
    let order = graph.topo_order()?;
    let groups = layer_groups(graph.layers.max(1), slices);
    let group_of = |node: &Node| -> &[SliceId] { &groups[node.layer % groups.len()] };

    let mut plans = BTreeMap::new();
    for &id in &order {
        let node = graph.node(id);
        if let NodeOp::Matmul { a, b, period, .. } = &node.op {
            let (m, k) = a.shape(graph);
            let (k2, n) = b.shape(graph);
            if k != k2 {
                return Err(Error::Shape(format!(
                    "{}: inner dimensions {k} and {k2} differ",
                    node.id
                )));
            }
            let plan = plan_dims(
                id,
                a.parts[0].id,
                b.parts[0].id,
                (m, k, n),
                group_of(node),
                cfg,
                *period,
            )?;
            plans.insert(id, plan);
        }
    }

    let mut placement: BTreeMap<(MatrixId, Orientation), Placement> = BTreeMap::new();
    let is_full = |r: &crate::workloads::MatRef| r.cols.start == 0 && r.cols.end == graph.matrix(r.id).cols;

    // Weights live where the products preload them.
    for &id in &order {
        let node = graph.node(id);
        if let NodeOp::Matmul { b, .. } = &node.op {
            let w = &b.parts[0];
            if b.parts.len() != 1 || graph.matrix(w.id).role != MatrixRole::Weight || !is_full(w) {
                continue;
            }
            let orientation = if b.transpose {
                if !dual_mapping {
                    continue;
                }
                Orientation::Transposed
            } else {
                Orientation::Forward
            };
            let plan = &plans[&id];
            let slabs = plan.slabs().map(|(s, k)| (s, Region::new(k, 0..plan.n))).collect();
            placement.entry((w.id, orientation)).or_insert(slabs);
        }
    }

    // Produced matrices, in execution order.
    let consumers = graph.consumers();
    for &id in &order {
        let node = graph.node(id);
        let fwd = |p: &BTreeMap<(MatrixId, Orientation), Placement>, m: MatrixId| -> Placement {
            p.get(&(m, Orientation::Forward)).cloned().unwrap_or_else(|| {
                let info = graph.matrix(m);
                vec![(group_of(node)[0], Region::full(info.rows, info.cols))]
            })
        };
        let new: Vec<(MatrixId, Placement)> = match &node.op {
            NodeOp::Matmul { out, .. } => {
                let plan = &plans[&id];
                let runs = plan
                    .owner_runs()
                    .into_iter()
                    .map(|(s, cols)| (s, Region::new(0..plan.m, cols)))
                    .collect();
                vec![(*out, runs)]
            }
            NodeOp::LstmForward { z, h, c, hidden, .. } => {
                let p = clip_cols(&fwd(&placement, *z), 0..*hidden);
                vec![(*h, p.clone()), (*c, p)]
            }
            NodeOp::LstmBackward {
                z, dz, dc_prev, hidden, ..
            } => {
                let pz = fwd(&placement, *z);
                vec![(*dz, pz.clone()), (*dc_prev, clip_cols(&pz, 0..*hidden))]
            }
            NodeOp::Tanh { input, output } => vec![(*output, fwd(&placement, *input))],
            NodeOp::TanhBackward { output, d_input, .. } => vec![(*d_input, fwd(&placement, *output))],
            NodeOp::LossGrad { y, out, .. } => vec![(*out, fwd(&placement, *y))],
            NodeOp::SgdUpdate { weight, out, .. } => vec![(*out, fwd(&placement, *weight))],
            NodeOp::Im2col { out, .. } => {
                let user = consumers.get(out).and_then(|c| {
                    c.iter().find(|n| matches!(&graph.node(**n).op, NodeOp::Matmul { a, .. } if a.parts.iter().any(|p| p.id == *out)))
                });
                let p = match user {
                    Some(u) => {
                        let plan = &plans[u];
                        plan.a
                            .iter()
                            .map(|p| (p.slice, Region::new(p.rows.clone(), p.cols.clone())))
                            .collect()
                    }
                    None => fwd(&placement, *out),
                };
                vec![(*out, p)]
            }
        };
        for (m, p) in new {
            placement.entry((m, Orientation::Forward)).or_insert(p);
        }
    }

    // Remaining sources: next to their first consumer.
    for m in &graph.matrices {
        if placement.contains_key(&(m.id, Orientation::Forward)) {
            continue;
        }
        let first = consumers.get(&m.id).and_then(|c| c.first()).map(|n| graph.node(*n));
        let mut p: Placement = Vec::new();
        let mut home = 0;
        if let Some(node) = first {
            home = group_of(node)[0];
            match &node.op {
                NodeOp::Matmul { a, b, .. } => {
                    let plan = &plans[&node.id];
                    for part in &plan.a {
                        let r = Region::new(part.rows.clone(), part.cols.clone());
                        for (id, sr) in a.source_regions(r) {
                            if id == m.id {
                                p.push((part.slice, sr));
                            }
                        }
                    }
                    for part in &plan.b {
                        let r = Region::new(part.rows.clone(), part.cols.clone());
                        for (id, sr) in b.source_regions(r) {
                            if id == m.id {
                                p.push((part.slice, sr));
                            }
                        }
                    }
                }
                _ => {
                    if let Some(out) = primary_output(node) {
                        let o = graph.matrix(out);
                        if (o.rows, o.cols) == (m.rows, m.cols) {
                            p = placement.get(&(out, Orientation::Forward)).cloned().unwrap_or_default();
                        }
                    }
                }
            }
        }
        if !covers(&p, m.rows, m.cols) {
            p = vec![(home, Region::full(m.rows, m.cols))];
        }
        placement.insert((m.id, Orientation::Forward), p);
    }

    if dual_mapping {
        for m in graph.matrices.iter().filter(|m| m.role == MatrixRole::Weight) {
            if placement.contains_key(&(m.id, Orientation::Transposed)) {
                continue;
            }
            let layer = consumers
                .get(&m.id)
                .and_then(|c| c.first())
                .map_or(0, |n| graph.node(*n).layer);
            let group = &groups[layer % groups.len()];
            let p = split_slabs(m.cols, group.len(), cfg.array_cols)
                .into_iter()
                .zip(group)
                .filter(|(r, _)| !r.is_empty())
                .map(|(r, &s)| (s, Region::new(r, 0..m.rows)))
                .collect();
            placement.insert((m.id, Orientation::Transposed), p);
        }
    }

    let produced: BTreeSet<MatrixId> = graph.producers().into_keys().collect();
    let element_bytes = (cfg.element_width as u64).div_ceil(8);
    let mut pmi = PmiTable::new(slices, element_bytes, cfg.capacity_bytes);
    for ((m, o), regions) in &placement {
        for (s, r) in regions {
            pmi.insert(*s, *m, *o, *r, produced.contains(m))?;
        }
    }
    pmi.finalize()?;

    Ok(GraphPlan {
        slices,
        groups,
        plans,
        placement,
        pmi,
        dual_mapping,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partitioner::pmi_lookup;
    use crate::workloads::{
        build_translator_training, GraphBuilder, MatmulSpec, NodeKind, Operand, PostOp, TranslatorSpec, WorkloadSpec,
    };

    fn two_layer() -> OpGraph {
        let mut g = GraphBuilder::new();
        let x = g.matrix("x", 4, 8, MatrixRole::Input);
        let w1 = g.matrix("w1", 8, 8, MatrixRole::Weight);
        let y1 = g.matrix("y1", 4, 8, MatrixRole::Output);
        let w2 = g.matrix("w2", 8, 8, MatrixRole::Weight);
        let y2 = g.matrix("y2", 4, 8, MatrixRole::Output);
        for (l, (a, w, y)) in [(x, w1, y1), (y1, w2, y2)].into_iter().enumerate() {
            let op = NodeOp::Matmul {
                a: Operand {
                    parts: vec![g.full(a)],
                    transpose: false,
                },
                b: Operand {
                    parts: vec![g.full(w)],
                    transpose: false,
                },
                out: y,
                post: PostOp::Sigmoid,
                period: None,
            };
            g.add(NodeKind::Matmul, op, l, 0, l);
        }
        g.finish()
    }

    #[test]
    fn layers_get_disjoint_groups() {
        let plan = plan_graph(&two_layer(), 4, &SliceConfig::default(), false).unwrap();
        let slices: Vec<Vec<SliceId>> = plan.plans.values().map(|p| p.slabs().map(|s| s.0).collect()).collect();
        assert_eq!(slices, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn single_matmul_single_slice_is_disjoint() {
        let g = WorkloadSpec::Matmul(MatmulSpec { m: 3, k: 4, n: 5 }).graph().unwrap();
        let plan = plan_graph(&g, 1, &SliceConfig::default(), false).unwrap();
        assert_eq!(plan.plans.len(), 1);
        let e = plan.pmi.entries(0);
        assert_eq!(e.len(), 3);
        let mut spans: Vec<(u64, u64)> = e.iter().map(|e| (e.base, e.base + e.bytes(2))).collect();
        spans.sort();
        assert!(spans.windows(2).all(|w| w[0].1 <= w[1].0));
        for m in 0..3 {
            assert!(pmi_lookup(&plan.pmi, MatrixId(m), (0, 0)).is_ok());
        }
    }

    #[test]
    fn dual_mapping_gives_two_entry_sets() {
        let spec = TranslatorSpec::new(2, 2, (2, 2));
        let g = build_translator_training(&spec).unwrap();
        for dual in [false, true] {
            let plan = plan_graph(&g, 4, &SliceConfig::default(), dual).unwrap();
            for m in g.matrices.iter().filter(|m| m.role == MatrixRole::Weight) {
                let n = plan.pmi.orientations(m.id).len();
                assert_eq!(n, if dual { 2 } else { 1 }, "{}", m.name);
            }
        }
    }

    #[test]
    fn every_matrix_fully_mapped() {
        let spec = TranslatorSpec {
            time_steps: 2,
            ..TranslatorSpec::new(3, 2, (2, 3))
        };
        let g = build_translator_training(&spec).unwrap();
        let plan = plan_graph(&g, 8, &SliceConfig::default(), true).unwrap();
        for m in &g.matrices {
            for r in 0..m.rows {
                for c in 0..m.cols {
                    pmi_lookup(&plan.pmi, m.id, (r, c)).unwrap();
                }
            }
        }
    }

    #[test]
    fn capacity_exceeded() {
        let g = WorkloadSpec::Matmul(MatmulSpec { m: 64, k: 64, n: 64 })
            .graph()
            .unwrap();
        let cfg = SliceConfig {
            capacity_bytes: Some(1024),
            ..SliceConfig::default()
        };
        assert!(matches!(plan_graph(&g, 2, &cfg, false), Err(Error::Plan(_))));
    }
}
