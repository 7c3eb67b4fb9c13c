//! Common-dimension partitioning of matrix products across slices and the
//! placement of every workload matrix in slice memory.

mod placement;
mod pmi;

pub use placement::{plan_graph, primary_output, GraphPlan};
pub use pmi::{pmi_lookup, PmiEntry, PmiTable};

use std::fmt::Write as _;
use std::ops::Range;

use crate::config::SliceConfig;
use crate::error::{Error, Result};
use crate::types::{MatrixId, NodeId, SliceId};
use crate::workloads::MatrixRole;

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixDescriptor {
    pub id: MatrixId,
    pub rows: usize,
    pub cols: usize,
    pub role: MatrixRole,
    pub element_width: u32,
    /// Set for a transposed view of another matrix's storage.
    pub view_of: Option<MatrixId>,
}

impl MatrixDescriptor {
    pub fn new(id: MatrixId, rows: usize, cols: usize, role: MatrixRole, element_width: u32) -> Self {
        MatrixDescriptor {
            id,
            rows,
            cols,
            role,
            element_width,
            view_of: None,
        }
    }

    pub fn transpose_view(&self, id: MatrixId) -> Self {
        MatrixDescriptor {
            id,
            rows: self.cols,
            cols: self.rows,
            role: self.role,
            element_width: self.element_width,
            view_of: Some(self.id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub matrix: MatrixId,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    pub slice: SliceId,
    /// Sequential Register B loads; zero for streamed operands.
    pub load_iterations: u64,
}

/// Split of one product `C (m x n) = A (m x k) B (k x n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub node: NodeId,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// Column slabs of A, aligned with `b`; empty slabs are omitted.
    pub a: Vec<Partition>,
    /// Row slabs of B.
    pub b: Vec<Partition>,
    /// Slices owning output column blocks, in round-robin order.
    pub owners: Vec<SliceId>,
    pub block: usize,
    pub period: Option<usize>,
}

impl PartitionPlan {
    /// Partial sums expected per output element.
    pub fn fan_in(&self) -> usize {
        self.b.len()
    }

    /// (slice, k range) per slab.
    pub fn slabs(&self) -> impl Iterator<Item = (SliceId, Range<usize>)> + '_ {
        self.b.iter().map(|p| (p.slice, p.rows.clone()))
    }

    /// Slice aggregating output column `col`.
    pub fn owner(&self, col: usize) -> SliceId {
        let c = match self.period {
            Some(p) if p > 0 => col % p,
            _ => col,
        };
        self.owners[(c / self.block) % self.owners.len()]
    }

    /// Maximal runs of output columns sharing an owner.
    pub fn owner_runs(&self) -> Vec<(SliceId, Range<usize>)> {
        let mut runs: Vec<(SliceId, Range<usize>)> = Vec::new();
        for c in 0..self.n {
            let o = self.owner(c);
            match runs.last_mut() {
                Some((s, r)) if *s == o && r.end == c => r.end = c + 1,
                _ => runs.push((o, c..c + 1)),
            }
        }
        runs
    }

    pub fn total_load_iterations(&self) -> u64 {
        self.b.iter().map(|p| p.load_iterations).sum()
    }

    pub fn max_load_iterations(&self) -> u64 {
        self.b.iter().map(|p| p.load_iterations).max().unwrap_or(0)
    }
}

/// Register B loads for a `k_span x n` slab.
pub fn load_iterations(k_span: usize, n: usize, cfg: &SliceConfig) -> u64 {
    if k_span == 0 || n == 0 {
        return 0;
    }
    (k_span.div_ceil(cfg.array_cols) * n.div_ceil(cfg.effective_rows())) as u64
}

/// k-slabs of a product: whole `cols`-wide chunks split evenly when every
/// part gets at least one, so the Register B load count does not depend on
/// `parts`; an element-level even split for smaller `k`.
pub fn split_slabs(k: usize, parts: usize, cols: usize) -> Vec<Range<usize>> {
    let cols = cols.max(1);
    if k < parts * cols {
        return split_even(k, parts);
    }
    split_even(k.div_ceil(cols), parts)
        .into_iter()
        .map(|r| r.start * cols..(r.end * cols).min(k))
        .collect()
}

/// Contiguous split of `0..k` into `parts` ranges whose sizes differ by at
/// most one; the low-index ranges take the remainder.
pub fn split_even(k: usize, parts: usize) -> Vec<Range<usize>> {
    let base = k / parts;
    let extra = k % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for i in 0..parts {
        let len = base + usize::from(i < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Plan a product of logical shapes over an explicit slice group.
#[allow(clippy::too_many_arguments)]
pub fn plan_dims(
    node: NodeId,
    a: MatrixId,
    b: MatrixId,
    (m, k, n): (usize, usize, usize),
    group: &[SliceId],
    cfg: &SliceConfig,
    period: Option<usize>,
) -> Result<PartitionPlan> {
    if m == 0 || k == 0 || n == 0 {
        return Err(Error::Plan(format!("zero-dimension product {m}x{k}x{n}")));
    }
    if group.is_empty() {
        return Err(Error::Plan("plan needs at least one slice".into()));
    }
    let mut pa = Vec::new();
    let mut pb = Vec::new();
    for (range, &slice) in split_slabs(k, group.len(), cfg.array_cols).into_iter().zip(group) {
        if range.is_empty() {
            continue;
        }
        pa.push(Partition {
            matrix: a,
            rows: 0..m,
            cols: range.clone(),
            slice,
            load_iterations: 0,
        });
        pb.push(Partition {
            matrix: b,
            rows: range.clone(),
            cols: 0..n,
            slice,
            load_iterations: load_iterations(range.len(), n, cfg),
        });
    }
    Ok(PartitionPlan {
        node,
        m,
        k,
        n,
        a: pa,
        b: pb,
        owners: group.to_vec(),
        block: cfg.array_cols,
        period,
    })
}

/// Plan `a * b` over slices `0..slices`.
pub fn plan_matmul(
    a: &MatrixDescriptor,
    b: &MatrixDescriptor,
    out: &MatrixDescriptor,
    slices: usize,
    cfg: &SliceConfig,
) -> Result<PartitionPlan> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "inner dimensions differ: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    if out.rows != a.rows || out.cols != b.cols {
        return Err(Error::Shape(format!(
            "output is {}x{}, product is {}x{}",
            out.rows, out.cols, a.rows, b.cols
        )));
    }
    if slices == 0 {
        return Err(Error::Plan("slices must be >= 1".into()));
    }
    let group: Vec<SliceId> = (0..slices).collect();
    plan_dims(NodeId(0), a.id, b.id, (a.rows, a.cols, b.cols), &group, cfg, None)
}

/// Slice groups per layer: contiguous and as even as possible when there
/// are enough slices, otherwise layers wrap around single slices.
pub fn layer_groups(layers: usize, slices: usize) -> Vec<Vec<SliceId>> {
    if slices >= layers {
        split_even(slices, layers.max(1))
            .into_iter()
            .map(|r| r.collect())
            .collect()
    } else {
        (0..layers).map(|l| vec![l % slices]).collect()
    }
}

/// One line per partition: kind, node, matrix, ranges, slice, iterations.
pub fn dump_plan(plan: &PartitionPlan) -> String {
    let mut s = String::new();
    for (kind, parts) in [("A", &plan.a), ("B", &plan.b)] {
        for p in parts {
            let _ = writeln!(
                s,
                "{} {} {} rows {}..{} cols {}..{} slice {} iters {}",
                plan.node,
                kind,
                p.matrix,
                p.rows.start,
                p.rows.end,
                p.cols.start,
                p.cols.end,
                p.slice,
                p.load_iterations
            );
        }
    }
    for (slice, cols) in plan.owner_runs() {
        let _ = writeln!(s, "{} C cols {}..{} owner {}", plan.node, cols.start, cols.end, slice);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slabs_align_to_array_width() {
        assert_eq!(split_slabs(52, 3, 8), vec![0..24, 24..40, 40..52]);
        assert_eq!(
            split_slabs(52, 6, 8),
            vec![0..16, 16..24, 24..32, 32..40, 40..48, 48..52]
        );
        assert_eq!(split_slabs(20, 3, 8), split_even(20, 3));
        assert_eq!(split_slabs(5, 2, 8), vec![0..3, 3..5]);
        assert_eq!(split_slabs(256, 4, 8), vec![0..64, 64..128, 128..192, 192..256]);
    }

    fn desc(id: u32, rows: usize, cols: usize) -> MatrixDescriptor {
        MatrixDescriptor::new(MatrixId(id), rows, cols, MatrixRole::Input, 16)
    }

    fn plan(k: usize, slices: usize) -> PartitionPlan {
        plan_matmul(
            &desc(0, 3, k),
            &desc(1, k, 3),
            &desc(2, 3, 3),
            slices,
            &SliceConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn two_slices_split_k() {
        let p = plan(4, 2);
        assert_eq!(p.slabs().collect::<Vec<_>>(), vec![(0, 0..2), (1, 2..4)]);
        assert_eq!(p.fan_in(), 2);
        assert_eq!(p.a[1].cols, 2..4);
    }

    #[test]
    fn uneven_split() {
        let p = plan(5, 2);
        assert_eq!(p.slabs().map(|s| s.1.len()).collect::<Vec<_>>(), vec![3, 2]);
    }

    #[test]
    fn single_slice() {
        let p = plan(7, 1);
        assert_eq!(p.fan_in(), 1);
        assert_eq!(p.b[0].rows, 0..7);
    }

    #[test]
    fn fewer_k_than_slices() {
        let p = plan(2, 4);
        assert_eq!(p.fan_in(), 2);
    }

    #[test]
    fn shape_errors() {
        let cfg = SliceConfig::default();
        assert!(plan_matmul(&desc(0, 3, 4), &desc(1, 5, 3), &desc(2, 3, 3), 2, &cfg).is_err());
        assert!(plan_matmul(&desc(0, 0, 4), &desc(1, 4, 3), &desc(2, 0, 3), 2, &cfg).is_err());
    }

    #[test]
    fn iterations_follow_array_dims() {
        let cfg = SliceConfig {
            array_rows: 4,
            array_cols: 2,
            ..SliceConfig::default()
        };
        // 5 rows of k need 3 column loads; 9 outputs need 3 row loads.
        assert_eq!(load_iterations(5, 9, &cfg), 9);
        assert_eq!(load_iterations(2, 4, &cfg), 1);
    }

    #[test]
    fn owners_round_robin_with_period() {
        let cfg = SliceConfig {
            array_cols: 2,
            ..SliceConfig::default()
        };
        let p = plan_dims(NodeId(0), MatrixId(0), MatrixId(1), (1, 4, 16), &[3, 5], &cfg, Some(4)).unwrap();
        let owners: Vec<_> = (0..16).map(|c| p.owner(c)).collect();
        assert_eq!(owners[..4], [3, 3, 5, 5]);
        assert_eq!(owners[4..8], owners[..4]);
    }

    #[test]
    fn groups() {
        assert_eq!(layer_groups(2, 4), vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(layer_groups(3, 4), vec![vec![0, 1], vec![2], vec![3]]);
        assert_eq!(layer_groups(5, 4), vec![vec![0], vec![1], vec![2], vec![3], vec![0]]);
    }

    #[test]
    fn dump_is_line_per_partition() {
        let text = dump_plan(&plan(4, 2));
        assert_eq!(text.lines().filter(|l| l.contains(" iters ")).count(), 4);
        assert!(text.contains("t0 B m1 rows 2..4 cols 0..3 slice 1 iters 1"));
    }
}
