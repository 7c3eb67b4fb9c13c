//! Element-wise tasks run by a slice on the region of the output it holds.

use std::collections::BTreeSet;

use super::store::Store;
use crate::types::{MatrixId, Region};
use crate::workloads::NodeOp;

/// Input a task needs before it can start.
#[derive(Debug, Clone, PartialEq)]
pub enum Footprint {
    Region(MatrixId, Region),
    Elements(MatrixId, Vec<(usize, usize)>),
}

impl Footprint {
    pub fn matrix(&self) -> MatrixId {
        match self {
            Footprint::Region(m, _) | Footprint::Elements(m, _) => *m,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Footprint::Region(_, r) => r.len(),
            Footprint::Elements(_, e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Columns `off + r.cols` of the same rows.
fn shifted(r: Region, off: usize) -> Region {
    Region::new(r.row0..r.row1, r.col0 + off..r.col1 + off)
}

/// Inputs of pointwise `op` restricted to output region `r`.
pub fn footprint(op: &NodeOp, r: Region) -> Vec<Footprint> {
    let reg = |m: MatrixId, x: Region| Footprint::Region(m, x);
    match op {
        NodeOp::Matmul { .. } => Vec::new(),
        NodeOp::LstmForward { z, c_prev, hidden, .. } => {
            let mut v: Vec<_> = (0..4).map(|g| reg(*z, shifted(r, g * hidden))).collect();
            v.push(reg(*c_prev, r));
            v
        }
        NodeOp::LstmBackward {
            z,
            c_prev,
            c,
            dh,
            dc,
            hidden,
            ..
        } => {
            let mut v: Vec<_> = (0..4).map(|g| reg(*z, shifted(r, g * hidden))).collect();
            v.push(reg(*c_prev, r));
            v.push(reg(*c, r));
            v.extend(dh.iter().map(|d| reg(d.id, shifted(r, d.cols.start))));
            v.extend(dc.iter().map(|d| reg(*d, r)));
            v
        }
        NodeOp::Tanh { input, .. } => vec![reg(*input, r)],
        NodeOp::TanhBackward { output, grads, .. } => {
            let mut v = vec![reg(*output, r)];
            v.extend(grads.iter().map(|d| reg(d.id, shifted(r, d.cols.start))));
            v
        }
        NodeOp::LossGrad { y, target, .. } => vec![reg(*y, r), reg(*target, r)],
        NodeOp::SgdUpdate { weight, grad, .. } => vec![reg(*weight, r), reg(*grad, r)],
        NodeOp::Im2col { input, conv, .. } => {
            let mut set = BTreeSet::new();
            for row in r.row0..r.row1 {
                for col in r.col0..r.col1 {
                    if let Some(idx) = conv.source(row, col) {
                        set.insert((idx[0], conv.input_col(idx)));
                    }
                }
            }
            vec![Footprint::Elements(*input, set.into_iter().collect())]
        }
    }
}

/// Work done by one pointwise job.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PointWork {
    pub flops: u64,
    /// Elements written to slice memory.
    pub writes: u64,
    /// Of `writes`, lowered copies of input elements.
    pub lowered: u64,
}

fn sig(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Compute `op` on output region `r`, reading and writing `store`.
pub fn execute(op: &NodeOp, r: Region, store: &mut Store) -> PointWork {
    let n = r.len() as u64;
    let cells = || (r.row0..r.row1).flat_map(move |i| (r.col0..r.col1).map(move |j| (i, j)));
    match op {
        NodeOp::Matmul { .. } => PointWork::default(),
        NodeOp::LstmForward {
            z,
            c_prev,
            h,
            c,
            hidden,
        } => {
            for (i, j) in cells() {
                let zg = |g: usize| store.get(*z, i, g * hidden + j);
                let (ig, fg, gg, og) = (sig(zg(0)), sig(zg(1)), zg(2).tanh(), sig(zg(3)));
                let cn = fg * store.get(*c_prev, i, j) + ig * gg;
                store.set(*c, i, j, cn);
                store.set(*h, i, j, og * cn.tanh());
            }
            PointWork {
                flops: 9 * n,
                writes: 2 * n,
                lowered: 0,
            }
        }
        NodeOp::LstmBackward {
            z,
            c_prev,
            c,
            dh,
            dc,
            dz,
            dc_prev,
            hidden,
        } => {
            let h = *hidden;
            for (i, j) in cells() {
                let zg = |g: usize| store.get(*z, i, g * h + j);
                let (iv, fv, gv, ov) = (sig(zg(0)), sig(zg(1)), zg(2).tanh(), sig(zg(3)));
                let dhv: f32 = dh.iter().map(|d| store.get(d.id, i, d.cols.start + j)).sum();
                let dcv = dc.map_or(0.0, |d| store.get(d, i, j));
                let tc = store.get(*c, i, j).tanh();
                let dct = dcv + dhv * ov * (1.0 - tc * tc);
                store.set(*dz, i, j, dct * gv * iv * (1.0 - iv));
                store.set(*dz, i, h + j, dct * store.get(*c_prev, i, j) * fv * (1.0 - fv));
                store.set(*dz, i, 2 * h + j, dct * iv * (1.0 - gv * gv));
                store.set(*dz, i, 3 * h + j, dhv * tc * ov * (1.0 - ov));
                store.set(*dc_prev, i, j, dct * fv);
            }
            PointWork {
                flops: (14 + dh.len() as u64) * n,
                writes: 5 * n,
                lowered: 0,
            }
        }
        NodeOp::Tanh { input, output } => {
            for (i, j) in cells() {
                let v = store.get(*input, i, j).tanh();
                store.set(*output, i, j, v);
            }
            PointWork {
                flops: n,
                writes: n,
                lowered: 0,
            }
        }
        NodeOp::TanhBackward { output, grads, d_input } => {
            for (i, j) in cells() {
                let y = store.get(*output, i, j);
                let s: f32 = grads.iter().map(|d| store.get(d.id, i, d.cols.start + j)).sum();
                store.set(*d_input, i, j, (1.0 - y * y) * s);
            }
            PointWork {
                flops: (2 + grads.len() as u64) * n,
                writes: n,
                lowered: 0,
            }
        }
        NodeOp::LossGrad { y, target, out } => {
            for (i, j) in cells() {
                let v = store.get(*y, i, j) - store.get(*target, i, j);
                store.set(*out, i, j, v);
            }
            PointWork {
                flops: n,
                writes: n,
                lowered: 0,
            }
        }
        NodeOp::SgdUpdate { weight, grad, out, eta } => {
            let eta = *eta as f32;
            for (i, j) in cells() {
                let v = store.get(*weight, i, j) - eta * store.get(*grad, i, j);
                store.set(*out, i, j, v);
            }
            PointWork {
                flops: 2 * n,
                writes: n,
                lowered: 0,
            }
        }
        NodeOp::Im2col { input, conv, out } => {
            let mut lowered = 0;
            for (i, j) in cells() {
                let v = match conv.source(i, j) {
                    Some(idx) => {
                        lowered += 1;
                        store.get(*input, idx[0], conv.input_col(idx))
                    }
                    None => 0.0,
                };
                store.set(*out, i, j, v);
            }
            PointWork {
                flops: 0,
                writes: lowered,
                lowered,
            }
        }
    }
}
