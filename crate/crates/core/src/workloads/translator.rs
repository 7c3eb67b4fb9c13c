//! Encoder / attention / decoder translator unrolled into micro-steps, with
//! optional truncated backpropagation through time.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::graph::{GraphBuilder, MatRef, MatrixRole, NodeKind, NodeOp, OpGraph, Operand, PostOp};
use crate::error::{Error, Result};
use crate::oracle::translator::{cell_name, final_weight_name, step_name, weight_name};
use crate::types::MatrixId;

fn default_layers() -> usize {
    5
}

fn default_time_steps() -> usize {
    1
}

fn default_eta() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslatorSpec {
    pub hidden: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    pub batch: usize,
    /// (source length, destination length)
    pub bucket: (usize, usize),
    #[serde(default = "default_time_steps")]
    pub time_steps: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub training: bool,
}

/// Where an LSTM layer takes its input `x` from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageInput {
    /// Embedded words supplied as data.
    External,
    /// `h` of the given layer at the same position.
    Layer(usize),
    /// The attention context of the time-step.
    Context,
    /// `h` of the given layer at the last source position.
    Last(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stage {
    Lstm {
        positions: Range<usize>,
        input: StageInput,
    },
    /// Reads every source position of the given encoder layer.
    Attention {
        encoder: usize,
    },
}

impl TranslatorSpec {
    pub fn new(hidden: usize, batch: usize, bucket: (usize, usize)) -> Self {
        TranslatorSpec {
            hidden,
            layers: default_layers(),
            batch,
            bucket,
            time_steps: default_time_steps(),
            eta: default_eta(),
            training: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden < 1 || self.batch < 1 || self.layers < 1 || self.time_steps < 1 {
            return Err(Error::Workload(
                "translator hidden, batch, layers and time_steps must be >= 1".into(),
            ));
        }
        if self.bucket.0 < 1 || self.bucket.1 < 1 {
            return Err(Error::Workload("bucket lengths must be >= 1".into()));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Workload("eta must be >= 0".into()));
        }
        Ok(())
    }

    pub fn micro_steps(&self) -> usize {
        self.bucket.0 + self.bucket.1
    }

    /// Layer layout. One layer is a single LSTM over all positions; two are
    /// an encoder and a decoder; three or more put the attention layer
    /// between `(layers - 1) / 2` encoders and the remaining decoders.
    pub fn stages(&self) -> Vec<Stage> {
        let (s, d) = self.bucket;
        match self.layers {
            1 => vec![Stage::Lstm {
                positions: 0..s + d,
                input: StageInput::External,
            }],
            2 => vec![
                Stage::Lstm {
                    positions: 0..s,
                    input: StageInput::External,
                },
                Stage::Lstm {
                    positions: s..s + d,
                    input: StageInput::Last(0),
                },
            ],
            l => {
                let enc = (l - 1) / 2;
                let mut v = Vec::with_capacity(l);
                for i in 0..enc {
                    v.push(Stage::Lstm {
                        positions: 0..s,
                        input: if i == 0 {
                            StageInput::External
                        } else {
                            StageInput::Layer(i - 1)
                        },
                    });
                }
                v.push(Stage::Attention { encoder: enc - 1 });
                for i in enc + 1..l {
                    v.push(Stage::Lstm {
                        positions: s..s + d,
                        input: if i == enc + 1 {
                            StageInput::Context
                        } else {
                            StageInput::Layer(i - 1)
                        },
                    });
                }
                v
            }
        }
    }
}

/// Matrices of one built translator that callers need by role.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TranslatorMatrices {
    pub weights: Vec<MatrixId>,
    pub inputs: BTreeMap<(usize, usize), MatrixId>,
    pub targets: BTreeMap<(usize, usize), MatrixId>,
    /// Zero initial `(h, c)` per LSTM layer.
    pub initial: BTreeMap<usize, (MatrixId, MatrixId)>,
    /// Last accumulated weight per layer, named like the reference.
    pub final_weights: BTreeMap<String, MatrixId>,
}

struct Cell {
    x: MatRef,
    h_prev: MatrixId,
    c_prev: MatrixId,
    z: MatrixId,
    h: MatrixId,
    c: MatrixId,
}

pub(crate) fn build(spec: &TranslatorSpec) -> Result<(OpGraph, TranslatorMatrices)> {
    spec.validate()?;
    let hd = spec.hidden;
    let b = spec.batch;
    let src = spec.bucket.0;
    let stages = spec.stages();
    let top = stages.len() - 1;
    let mut g = GraphBuilder::new();
    let mut mats = TranslatorMatrices::default();

    for (l, stage) in stages.iter().enumerate() {
        let (rows, cols) = match stage {
            Stage::Lstm { .. } => (2 * hd, 4 * hd),
            Stage::Attention { .. } => (src * hd, hd),
        };
        mats.weights
            .push(g.matrix(weight_name(l), rows, cols, MatrixRole::Weight));
        if let Stage::Lstm { .. } = stage {
            let h0 = g.matrix(format!("h{l}_init"), b, hd, MatrixRole::State);
            let c0 = g.matrix(format!("c{l}_init"), b, hd, MatrixRole::State);
            mats.initial.insert(l, (h0, c0));
        }
    }

    let mut cells: BTreeMap<(usize, usize, usize), Cell> = BTreeMap::new();
    let mut ctx: BTreeMap<usize, (MatrixId, Operand)> = BTreeMap::new();
    let mut state: BTreeMap<usize, (MatrixId, MatrixId)> = mats.initial.clone();

    for t in 0..spec.time_steps {
        for (l, stage) in stages.iter().enumerate() {
            match stage {
                Stage::Lstm { positions, input } => {
                    for p in positions.clone() {
                        let x = match input {
                            StageInput::External => {
                                let id = g.matrix(cell_name("x", l, t, p), b, hd, MatrixRole::Input);
                                mats.inputs.insert((t, p), id);
                                g.full(id)
                            }
                            StageInput::Layer(k) => g.full(cells[&(*k, t, p)].h),
                            StageInput::Context => g.full(ctx[&t].0),
                            StageInput::Last(k) => g.full(cells[&(*k, t, src - 1)].h),
                        };
                        let (h_prev, c_prev) = state[&l];
                        let z = g.matrix(cell_name("z", l, t, p), b, 4 * hd, MatrixRole::Output);
                        let a = Operand {
                            parts: vec![x.clone(), g.full(h_prev)],
                            transpose: false,
                        };
                        let w = Operand {
                            parts: vec![g.full(mats.weights[l])],
                            transpose: false,
                        };
                        g.add(
                            NodeKind::Matmul,
                            NodeOp::Matmul {
                                a,
                                b: w,
                                out: z,
                                post: PostOp::None,
                                period: Some(hd),
                            },
                            l,
                            t,
                            p,
                        );
                        let h = g.matrix(cell_name("h", l, t, p), b, hd, MatrixRole::Output);
                        let c = g.matrix(cell_name("c", l, t, p), b, hd, MatrixRole::State);
                        g.add(
                            NodeKind::AggregateActivate,
                            NodeOp::LstmForward {
                                z,
                                c_prev,
                                h,
                                c,
                                hidden: hd,
                            },
                            l,
                            t,
                            p,
                        );
                        state.insert(l, (h, c));
                        cells.insert(
                            (l, t, p),
                            Cell {
                                x,
                                h_prev,
                                c_prev,
                                z,
                                h,
                                c,
                            },
                        );
                    }
                }
                Stage::Attention { encoder } => {
                    let a = Operand {
                        parts: (0..src).map(|p| g.full(cells[&(*encoder, t, p)].h)).collect(),
                        transpose: false,
                    };
                    let out = g.matrix(step_name("ctx", t), b, hd, MatrixRole::Output);
                    g.add(
                        NodeKind::Matmul,
                        NodeOp::Matmul {
                            a: a.clone(),
                            b: Operand {
                                parts: vec![g.full(mats.weights[l])],
                                transpose: false,
                            },
                            out,
                            post: PostOp::Tanh,
                            period: None,
                        },
                        l,
                        t,
                        src - 1,
                    );
                    ctx.insert(t, (out, a));
                }
            }
        }
    }

    if !spec.training {
        return Ok((g.finish(), mats));
    }

    if let Stage::Lstm { positions, .. } = &stages[top] {
        for t in 0..spec.time_steps {
            for p in positions.clone() {
                let id = g.matrix(cell_name("target", top, t, p), b, hd, MatrixRole::Input);
                mats.targets.insert((t, p), id);
            }
        }
    }

    let mut wacc: Vec<MatrixId> = mats.weights.clone();
    let mut dh_parts: BTreeMap<(usize, usize, usize), Vec<MatRef>> = BTreeMap::new();
    let mut dctx_parts: BTreeMap<usize, Vec<MatRef>> = BTreeMap::new();
    let mut dh_next: BTreeMap<usize, MatRef> = BTreeMap::new();
    let mut dc_next: BTreeMap<usize, MatrixId> = BTreeMap::new();

    for t in (0..spec.time_steps).rev() {
        for (l, stage) in stages.iter().enumerate().rev() {
            match stage {
                Stage::Lstm { positions, input } => {
                    for p in positions.clone().rev() {
                        let cell = &cells[&(l, t, p)];
                        let mut dh = Vec::new();
                        if l == top {
                            let dy = g.matrix(cell_name("dy", l, t, p), b, hd, MatrixRole::Error);
                            g.add(
                                NodeKind::AggregateActivate,
                                NodeOp::LossGrad {
                                    y: cell.h,
                                    target: mats.targets[&(t, p)],
                                    out: dy,
                                },
                                l,
                                t,
                                p,
                            );
                            dh.push(g.full(dy));
                        }
                        dh.extend(dh_parts.remove(&(l, t, p)).unwrap_or_default());
                        dh.extend(dh_next.remove(&l));
                        let dz = g.matrix(cell_name("dz", l, t, p), b, 4 * hd, MatrixRole::Error);
                        let dcp = g.matrix(cell_name("dc", l, t, p), b, hd, MatrixRole::Error);
                        g.add(
                            NodeKind::AggregateActivate,
                            NodeOp::LstmBackward {
                                z: cell.z,
                                c_prev: cell.c_prev,
                                c: cell.c,
                                dh,
                                dc: dc_next.remove(&l),
                                dz,
                                dc_prev: dcp,
                                hidden: hd,
                            },
                            l,
                            t,
                            p,
                        );
                        let dxh = g.matrix(cell_name("dxh", l, t, p), b, 2 * hd, MatrixRole::Error);
                        g.add(
                            NodeKind::ErrorMatmul,
                            NodeOp::Matmul {
                                a: Operand {
                                    parts: vec![g.full(dz)],
                                    transpose: false,
                                },
                                b: Operand {
                                    parts: vec![g.full(mats.weights[l])],
                                    transpose: true,
                                },
                                out: dxh,
                                post: PostOp::None,
                                period: Some(hd),
                            },
                            l,
                            t,
                            p,
                        );
                        let dw = g.matrix(cell_name("dW", l, t, p), 2 * hd, 4 * hd, MatrixRole::Error);
                        g.add(
                            NodeKind::GradMatmul,
                            NodeOp::Matmul {
                                a: Operand {
                                    parts: vec![cell.x.clone(), g.full(cell.h_prev)],
                                    transpose: true,
                                },
                                b: Operand {
                                    parts: vec![g.full(dz)],
                                    transpose: false,
                                },
                                out: dw,
                                post: PostOp::None,
                                period: None,
                            },
                            l,
                            t,
                            p,
                        );
                        let next = g.matrix(cell_name("Wacc", l, t, p), 2 * hd, 4 * hd, MatrixRole::State);
                        g.add(
                            NodeKind::WeightUpdate,
                            NodeOp::SgdUpdate {
                                weight: wacc[l],
                                grad: dw,
                                out: next,
                                eta: spec.eta,
                            },
                            l,
                            t,
                            p,
                        );
                        wacc[l] = next;
                        dh_next.insert(
                            l,
                            MatRef {
                                id: dxh,
                                cols: hd..2 * hd,
                            },
                        );
                        dc_next.insert(l, dcp);
                        let dx = MatRef { id: dxh, cols: 0..hd };
                        match input {
                            StageInput::External => {}
                            StageInput::Layer(k) => dh_parts.entry((*k, t, p)).or_default().push(dx),
                            StageInput::Last(k) => dh_parts.entry((*k, t, src - 1)).or_default().push(dx),
                            StageInput::Context => dctx_parts.entry(t).or_default().push(dx),
                        }
                    }
                }
                Stage::Attention { encoder } => {
                    let micro = src - 1;
                    let (ctx_id, a) = ctx[&t].clone();
                    let datt = g.matrix(step_name("datt", t), b, hd, MatrixRole::Error);
                    g.add(
                        NodeKind::AggregateActivate,
                        NodeOp::TanhBackward {
                            output: ctx_id,
                            grads: dctx_parts.remove(&t).unwrap_or_default(),
                            d_input: datt,
                        },
                        l,
                        t,
                        micro,
                    );
                    let da = g.matrix(step_name("dA", t), b, src * hd, MatrixRole::Error);
                    g.add(
                        NodeKind::ErrorMatmul,
                        NodeOp::Matmul {
                            a: Operand {
                                parts: vec![g.full(datt)],
                                transpose: false,
                            },
                            b: Operand {
                                parts: vec![g.full(mats.weights[l])],
                                transpose: true,
                            },
                            out: da,
                            post: PostOp::None,
                            period: None,
                        },
                        l,
                        t,
                        micro,
                    );
                    let dw = g.matrix(step_name("dWatt", t), src * hd, hd, MatrixRole::Error);
                    g.add(
                        NodeKind::GradMatmul,
                        NodeOp::Matmul {
                            a: Operand { transpose: true, ..a },
                            b: Operand {
                                parts: vec![g.full(datt)],
                                transpose: false,
                            },
                            out: dw,
                            post: PostOp::None,
                            period: None,
                        },
                        l,
                        t,
                        micro,
                    );
                    let next = g.matrix(step_name("Watt_acc", t), src * hd, hd, MatrixRole::State);
                    g.add(
                        NodeKind::WeightUpdate,
                        NodeOp::SgdUpdate {
                            weight: wacc[l],
                            grad: dw,
                            out: next,
                            eta: spec.eta,
                        },
                        l,
                        t,
                        micro,
                    );
                    wacc[l] = next;
                    for p in 0..src {
                        dh_parts.entry((*encoder, t, p)).or_default().push(MatRef {
                            id: da,
                            cols: p * hd..(p + 1) * hd,
                        });
                    }
                }
            }
        }
    }
    for (l, id) in wacc.iter().enumerate() {
        mats.final_weights.insert(final_weight_name(l), *id);
    }
    Ok((g.finish(), mats))
}

pub fn build_translator_forward(spec: &TranslatorSpec) -> Result<OpGraph> {
    let spec = TranslatorSpec {
        training: false,
        ..spec.clone()
    };
    Ok(build(&spec)?.0)
}

pub fn build_translator_training(spec: &TranslatorSpec) -> Result<OpGraph> {
    let spec = TranslatorSpec {
        training: true,
        ..spec.clone()
    };
    Ok(build(&spec)?.0)
}
