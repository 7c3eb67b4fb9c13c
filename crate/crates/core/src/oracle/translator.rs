//! Reference encoder/attention/decoder translator: forward over the unrolled
//! time-steps and backpropagation through all of them, in 64-bit floats.
//!
//! Results are keyed by the same names the workload builder gives its
//! matrices, so simulated outputs can be matched one to one.

use std::collections::BTreeMap;

use rand::Rng;

use super::{lstm_backward, lstm_forward, matmul, LstmCache, LstmParams, Matrix};
use crate::error::{Error, Result};
use crate::workloads::translator::{Stage, StageInput, TranslatorSpec};

pub fn cell_name(kind: &str, layer: usize, t: usize, pos: usize) -> String {
    format!("{kind}{layer}_t{t}_p{pos}")
}

pub fn step_name(kind: &str, t: usize) -> String {
    format!("{kind}_t{t}")
}

pub fn weight_name(layer: usize) -> String {
    format!("W{layer}")
}

pub fn final_weight_name(layer: usize) -> String {
    format!("W{layer}_final")
}

/// Weights, embedded inputs and loss targets of one translator instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslatorData {
    /// Per layer: `2H x 4H` for LSTM layers, `src*H x H` for attention.
    pub weights: Vec<Matrix>,
    /// `[t][pos]`, batch x H, for positions fed by external input.
    pub inputs: BTreeMap<(usize, usize), Matrix>,
    /// `[t][pos]`, batch x H, for positions of the top layer.
    pub targets: BTreeMap<(usize, usize), Matrix>,
}

impl TranslatorData {
    pub fn random<R: Rng + ?Sized>(spec: &TranslatorSpec, rng: &mut R) -> Self {
        let h = spec.hidden;
        let b = spec.batch;
        let stages = spec.stages();
        let mut weights = Vec::new();
        for stage in &stages {
            let (rows, cols) = match stage {
                Stage::Lstm { .. } => (2 * h, 4 * h),
                Stage::Attention { .. } => (spec.bucket.0 * h, h),
            };
            let scale = 1.0 / (rows as f64).sqrt();
            weights.push(Matrix::random(rows, cols, scale, rng));
        }
        let mut inputs = BTreeMap::new();
        let mut targets = BTreeMap::new();
        let top = stages.len() - 1;
        for t in 0..spec.time_steps {
            for (l, stage) in stages.iter().enumerate() {
                if let Stage::Lstm { positions, input } = stage {
                    for p in positions.clone() {
                        if *input == StageInput::External {
                            inputs.insert((t, p), Matrix::random(b, h, 1.0, rng));
                        }
                        if l == top {
                            targets.insert((t, p), Matrix::random(b, h, 0.5, rng));
                        }
                    }
                }
            }
        }
        TranslatorData {
            weights,
            inputs,
            targets,
        }
    }
}

fn add_into(acc: &mut BTreeMap<(usize, usize, usize), Matrix>, key: (usize, usize, usize), m: Matrix) -> Result<()> {
    match acc.remove(&key) {
        Some(prev) => {
            acc.insert(key, prev.add(&m)?);
        }
        None => {
            acc.insert(key, m);
        }
    }
    Ok(())
}

/// Forward values (`z`, `h`, `c`, `ctx`) and, when `spec.training`, the
/// per-cell weight gradients `dW`, per-step attention gradients `dWatt` and
/// the SGD-updated weights after the whole truncated window.
pub fn reference(spec: &TranslatorSpec, data: &TranslatorData) -> Result<BTreeMap<String, Matrix>> {
    spec.validate()?;
    let h = spec.hidden;
    let b = spec.batch;
    let src = spec.bucket.0;
    let stages = spec.stages();
    if data.weights.len() != stages.len() {
        return Err(Error::Shape("one weight per translator layer".into()));
    }
    let mut out = BTreeMap::new();
    let mut state: Vec<(Matrix, Matrix)> = vec![(Matrix::zeros(b, h), Matrix::zeros(b, h)); stages.len()];
    let mut caches: BTreeMap<(usize, usize, usize), LstmCache> = BTreeMap::new();
    let mut att_inputs: BTreeMap<usize, Matrix> = BTreeMap::new();
    let get = |out: &BTreeMap<String, Matrix>, name: String| -> Result<Matrix> {
        out.get(&name)
            .cloned()
            .ok_or_else(|| Error::Workload(format!("reference value {name} missing")))
    };

    for t in 0..spec.time_steps {
        for (l, stage) in stages.iter().enumerate() {
            match stage {
                Stage::Lstm { positions, input } => {
                    let params = LstmParams::new(h, data.weights[l].clone())?;
                    for p in positions.clone() {
                        let x = match input {
                            StageInput::External => data.inputs[&(t, p)].clone(),
                            StageInput::Layer(k) => get(&out, cell_name("h", *k, t, p))?,
                            StageInput::Context => get(&out, step_name("ctx", t))?,
                            StageInput::Last(k) => get(&out, cell_name("h", *k, t, src - 1))?,
                        };
                        let cache = lstm_forward(&params, &x, &state[l].0, &state[l].1)?;
                        out.insert(cell_name("z", l, t, p), cache.z.clone());
                        out.insert(cell_name("h", l, t, p), cache.h.clone());
                        out.insert(cell_name("c", l, t, p), cache.c.clone());
                        state[l] = (cache.h.clone(), cache.c.clone());
                        caches.insert((l, t, p), cache);
                    }
                }
                Stage::Attention { encoder } => {
                    let mut a = get(&out, cell_name("h", *encoder, t, 0))?;
                    for p in 1..src {
                        a = a.hconcat(&get(&out, cell_name("h", *encoder, t, p))?)?;
                    }
                    let ctx = matmul(&a, &data.weights[l])?.map(f64::tanh);
                    out.insert(step_name("ctx", t), ctx);
                    att_inputs.insert(t, a);
                }
            }
        }
    }
    if !spec.training {
        return Ok(out);
    }

    let top = stages.len() - 1;
    let mut dh_acc: BTreeMap<(usize, usize, usize), Matrix> = BTreeMap::new();
    let mut dctx_acc: BTreeMap<usize, Matrix> = BTreeMap::new();
    let mut dh_next: Vec<Option<Matrix>> = vec![None; stages.len()];
    let mut dc_next: Vec<Option<Matrix>> = vec![None; stages.len()];
    let mut dw_sum: Vec<Matrix> = data.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();

    for t in (0..spec.time_steps).rev() {
        for (l, stage) in stages.iter().enumerate().rev() {
            match stage {
                Stage::Lstm { positions, input } => {
                    let params = LstmParams::new(h, data.weights[l].clone())?;
                    for p in positions.clone().rev() {
                        let cache = &caches[&(l, t, p)];
                        let mut dh = Matrix::zeros(b, h);
                        if l == top {
                            dh = dh.add(&cache.h.sub(&data.targets[&(t, p)])?)?;
                        }
                        if let Some(g) = dh_acc.remove(&(l, t, p)) {
                            dh = dh.add(&g)?;
                        }
                        if let Some(g) = dh_next[l].take() {
                            dh = dh.add(&g)?;
                        }
                        let dc = dc_next[l].take().unwrap_or_else(|| Matrix::zeros(b, h));
                        let grads = lstm_backward(&params, cache, &dh, &dc)?;
                        dw_sum[l] = dw_sum[l].add(&grads.dw)?;
                        out.insert(cell_name("dW", l, t, p), grads.dw);
                        dh_next[l] = Some(grads.dh_prev);
                        dc_next[l] = Some(grads.dc_prev);
                        match input {
                            StageInput::External => {}
                            StageInput::Layer(k) => add_into(&mut dh_acc, (*k, t, p), grads.dx)?,
                            StageInput::Last(k) => add_into(&mut dh_acc, (*k, t, src - 1), grads.dx)?,
                            StageInput::Context => {
                                let prev = dctx_acc.remove(&t).unwrap_or_else(|| Matrix::zeros(b, h));
                                dctx_acc.insert(t, prev.add(&grads.dx)?);
                            }
                        }
                    }
                }
                Stage::Attention { encoder } => {
                    let ctx = get(&out, step_name("ctx", t))?;
                    let dctx = dctx_acc.remove(&t).unwrap_or_else(|| Matrix::zeros(b, h));
                    let dpre = dctx.hadamard(&ctx.map(|y| 1.0 - y * y))?;
                    let a = &att_inputs[&t];
                    let dw = matmul(&a.transpose(), &dpre)?;
                    dw_sum[l] = dw_sum[l].add(&dw)?;
                    out.insert(step_name("dWatt", t), dw);
                    let da = matmul(&dpre, &data.weights[l].transpose())?;
                    for p in 0..src {
                        add_into(&mut dh_acc, (*encoder, t, p), da.col_slice(p * h, (p + 1) * h))?;
                    }
                }
            }
        }
    }
    for (l, w) in data.weights.iter().enumerate() {
        out.insert(final_weight_name(l), w.sub(&dw_sum[l].scale(spec.eta))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(layers: usize, training: bool) -> TranslatorSpec {
        TranslatorSpec {
            hidden: 3,
            layers,
            batch: 2,
            bucket: (2, 2),
            time_steps: 2,
            eta: 0.1,
            training,
        }
    }

    #[test]
    fn forward_produces_every_cell() {
        for layers in 1..=5 {
            let s = spec(layers, false);
            let data = TranslatorData::random(&s, &mut ChaCha8Rng::seed_from_u64(1));
            let out = reference(&s, &data).unwrap();
            let top = layers - 1;
            for t in 0..2 {
                for p in 2..4 {
                    assert!(out.contains_key(&cell_name("h", top, t, p)), "L={layers}");
                }
            }
        }
    }

    #[test]
    fn zero_eta_keeps_weights() {
        let mut s = spec(5, true);
        s.eta = 0.0;
        let data = TranslatorData::random(&s, &mut ChaCha8Rng::seed_from_u64(2));
        let out = reference(&s, &data).unwrap();
        for l in 0..5 {
            assert_eq!(out[&final_weight_name(l)], data.weights[l]);
        }
    }
}
