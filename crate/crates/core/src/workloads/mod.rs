//! Workload graphs: the attention translator, plain matrix products and
//! convolutions lowered with im2col. Input data comes from a seeded generator.

pub mod conv;
pub mod graph;
pub mod translator;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use conv::{im2col, ConvSpec, DuplicationMap, Im2colLayout};
pub use graph::{GraphBuilder, MatRef, MatrixInfo, MatrixRole, Node, NodeKind, NodeOp, OpGraph, Operand, PostOp};
pub use translator::{build_translator_forward, build_translator_training, TranslatorSpec};

use crate::error::{Error, Result};
use crate::oracle::conv::{conv2d, Tensor4};
use crate::oracle::translator::{reference as translator_reference, TranslatorData};
use crate::oracle::{matmul, Matrix};
use crate::types::MatrixId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatmulSpec {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

/// Workload block of an experiment file, selected by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WorkloadSpec {
    Translator(TranslatorSpec),
    Matmul(MatmulSpec),
    Conv(ConvSpec),
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            WorkloadSpec::Translator(t) => t.validate(),
            WorkloadSpec::Matmul(m) => {
                if m.m == 0 || m.k == 0 || m.n == 0 {
                    Err(Error::Workload("matmul dimensions must be >= 1".into()))
                } else {
                    Ok(())
                }
            }
            WorkloadSpec::Conv(c) => c.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WorkloadSpec::Translator(_) => "translator",
            WorkloadSpec::Matmul(_) => "matmul",
            WorkloadSpec::Conv(_) => "conv",
        }
    }

    pub fn graph(&self) -> Result<OpGraph> {
        Ok(self.build(0)?.graph)
    }

    /// Graph plus seeded values for every source matrix.
    pub fn build(&self, seed: u64) -> Result<Workload> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = BTreeMap::new();
        match self {
            WorkloadSpec::Translator(spec) => {
                let (graph, mats) = translator::build(spec)?;
                let values = TranslatorData::random(spec, &mut rng);
                for (l, id) in mats.weights.iter().enumerate() {
                    data.insert(*id, values.weights[l].clone());
                }
                for (key, id) in &mats.inputs {
                    data.insert(*id, values.inputs[key].clone());
                }
                for (key, id) in &mats.targets {
                    data.insert(*id, values.targets[key].clone());
                }
                for (h0, c0) in mats.initial.values() {
                    for id in [h0, c0] {
                        let m = graph.matrix(*id);
                        data.insert(*id, Matrix::zeros(m.rows, m.cols));
                    }
                }
                let mut outputs = mats.final_weights.clone();
                for m in &graph.matrices {
                    if m.role != MatrixRole::Input && m.role != MatrixRole::Weight {
                        outputs.insert(m.name.clone(), m.id);
                    }
                }
                Ok(Workload {
                    spec: self.clone(),
                    graph,
                    data,
                    outputs,
                    translator: Some(values),
                })
            }
            WorkloadSpec::Matmul(s) => {
                let mut g = GraphBuilder::new();
                let a = g.matrix("A", s.m, s.k, MatrixRole::Input);
                let b = g.matrix("B", s.k, s.n, MatrixRole::Weight);
                let c = g.matrix("C", s.m, s.n, MatrixRole::Output);
                let op = NodeOp::Matmul {
                    a: Operand {
                        parts: vec![g.full(a)],
                        transpose: false,
                    },
                    b: Operand {
                        parts: vec![g.full(b)],
                        transpose: false,
                    },
                    out: c,
                    post: PostOp::None,
                    period: None,
                };
                g.add(NodeKind::Matmul, op, 0, 0, 0);
                data.insert(a, Matrix::random(s.m, s.k, 1.0, &mut rng));
                data.insert(b, Matrix::random(s.k, s.n, 1.0, &mut rng));
                Ok(Workload {
                    spec: self.clone(),
                    graph: g.finish(),
                    data,
                    outputs: BTreeMap::from([("C".to_string(), c)]),
                    translator: None,
                })
            }
            WorkloadSpec::Conv(spec) => {
                let graph = conv_graph(spec)?;
                let input = graph.find("input").expect("conv input");
                let kernels = graph.find("B").expect("conv kernels");
                let tin = Tensor4::random(spec.input_dims(), &mut rng);
                let tk = Tensor4::random([spec.kernels, spec.channels, spec.kh, spec.kw], &mut rng);
                data.insert(input, conv::input_matrix(spec, &tin));
                data.insert(kernels, conv::kernel_matrix(spec, &tk));
                let mut outputs = BTreeMap::new();
                for name in ["A", "C"] {
                    outputs.insert(name.to_string(), graph.find(name).expect("conv matrix"));
                }
                Ok(Workload {
                    spec: self.clone(),
                    graph,
                    data,
                    outputs,
                    translator: None,
                })
            }
        }
    }
}

fn conv_graph(spec: &ConvSpec) -> Result<OpGraph> {
    let layout = im2col(spec)?;
    let mut g = GraphBuilder::new();
    let (ir, ic) = spec.input_shape();
    let input = g.matrix("input", ir, ic, MatrixRole::Input);
    let a = g.matrix("A", layout.a_shape.0, layout.a_shape.1, MatrixRole::Input);
    let b = g.matrix("B", layout.b_shape.0, layout.b_shape.1, MatrixRole::Weight);
    let c = g.matrix("C", layout.a_shape.0, layout.b_shape.1, MatrixRole::Output);
    g.add(
        NodeKind::Lowering,
        NodeOp::Im2col {
            input,
            conv: *spec,
            out: a,
        },
        0,
        0,
        0,
    );
    g.add(
        NodeKind::Matmul,
        NodeOp::Matmul {
            a: Operand {
                parts: vec![g.full(a)],
                transpose: false,
            },
            b: Operand {
                parts: vec![g.full(b)],
                transpose: false,
            },
            out: c,
            post: PostOp::None,
            period: None,
        },
        0,
        0,
        0,
    );
    Ok(g.finish())
}

/// A built workload: graph, source values and the named results worth
/// checking against the reference.
#[derive(Debug, Clone)]
pub struct Workload {
    pub spec: WorkloadSpec,
    pub graph: OpGraph,
    pub data: BTreeMap<MatrixId, Matrix>,
    pub outputs: BTreeMap<String, MatrixId>,
    translator: Option<TranslatorData>,
}

impl Workload {
    /// Reference values for the entries of `outputs` that the oracle covers.
    pub fn reference(&self) -> Result<BTreeMap<String, Matrix>> {
        match &self.spec {
            WorkloadSpec::Translator(spec) => {
                translator_reference(spec, self.translator.as_ref().expect("translator data"))
            }
            WorkloadSpec::Matmul(_) => {
                let a = &self.data[&self.graph.find("A").expect("A")];
                let b = &self.data[&self.graph.find("B").expect("B")];
                Ok(BTreeMap::from([("C".to_string(), matmul(a, b)?)]))
            }
            WorkloadSpec::Conv(spec) => {
                let input = &self.data[&self.graph.find("input").expect("input")];
                let b = &self.data[&self.graph.find("B").expect("B")];
                let tin = Tensor4 {
                    dims: spec.input_dims(),
                    data: input.data().to_vec(),
                };
                let mut tk = Tensor4::zeros([spec.kernels, spec.channels, spec.kh, spec.kw]);
                for k in 0..spec.kernels {
                    for c in 0..spec.channels {
                        for dy in 0..spec.kh {
                            for dx in 0..spec.kw {
                                tk.set([k, c, dy, dx], b[((c * spec.kh + dy) * spec.kw + dx, k)]);
                            }
                        }
                    }
                }
                let direct = conv2d(&tin, &tk, spec.stride, spec.padding)?;
                let (rows, cols) = (spec.a_shape().0, spec.kernels);
                let (oh, ow) = (spec.out_h(), spec.out_w());
                let c = Matrix::from_fn(rows, cols, |r, k| direct.get([r / (oh * ow), k, (r / ow) % oh, r % ow]));
                Ok(BTreeMap::from([
                    ("A".to_string(), conv::lower_input(spec, &tin)),
                    ("C".to_string(), c),
                ]))
            }
        }
    }
}

/// Named workload presets. The LSTM sizes are this crate's own choices.
pub const PRESETS: &[&str] = &["lstm0", "lstm1", "lstm2", "lstm3", "reload", "compute-bound"];

pub fn preset(name: &str) -> Option<WorkloadSpec> {
    let t = |hidden, layers, batch, bucket, time_steps| TranslatorSpec {
        hidden,
        layers,
        batch,
        bucket,
        time_steps,
        eta: 0.01,
        training: true,
    };
    let spec = match name {
        "lstm0" => t(1024, 8, 128, (40, 50), 4),
        "lstm1" => t(512, 5, 64, (20, 20), 4),
        "lstm2" => t(256, 5, 32, (10, 10), 2),
        "lstm3" => t(4, 5, 4, (2, 2), 2),
        // Weights span several register loads; small batch keeps each
        // tile short so reloads dominate.
        "reload" => TranslatorSpec {
            training: false,
            ..t(128, 1, 2, (4, 4), 1)
        },
        // Large batch amortizes each weight tile over many waves.
        "compute-bound" => TranslatorSpec {
            training: false,
            ..t(16, 1, 256, (2, 2), 1)
        },
        _ => return None,
    };
    Some(WorkloadSpec::Translator(spec))
}

/// FLOPs of the graph over the bytes of every distinct matrix it touches.
pub fn intensity(graph: &OpGraph, element_bytes: f64) -> Result<f64> {
    let elems: usize = graph.matrices.iter().map(|m| m.rows * m.cols).sum();
    let bytes = elems as f64 * element_bytes;
    if graph.is_empty() || bytes <= 0.0 {
        return Err(Error::Workload("intensity of an empty graph".into()));
    }
    Ok(graph.flops() as f64 / bytes)
}
