//! Reference math checked against central finite differences.

use memslice::oracle::translator::{cell_name, final_weight_name, reference, TranslatorData};
use memslice::oracle::{lstm_backward, lstm_forward, LstmParams, Matrix};
use memslice::workloads::TranslatorSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn rel(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic.sub(numeric).unwrap().max_abs() / analytic.max_abs().max(numeric.max_abs()).max(1e-8)
}

/// Central difference of `f` with respect to every entry of `x`.
fn numeric_grad(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |r, c| {
        let mut up = x.clone();
        up[(r, c)] += EPS;
        let mut down = x.clone();
        down[(r, c)] -= EPS;
        (f(&up) - f(&down)) / (2.0 * EPS)
    })
}

fn dot(a: &Matrix, b: &Matrix) -> f64 {
    a.hadamard(b).unwrap().data().iter().sum()
}

#[test]
fn lstm_cell_backward_matches_finite_differences() {
    for hidden in 1..=4 {
        let mut rng = ChaCha8Rng::seed_from_u64(hidden as u64);
        let batch = 3;
        let w = Matrix::random(2 * hidden, 4 * hidden, 0.7, &mut rng);
        let x = Matrix::random(batch, hidden, 1.0, &mut rng);
        let h0 = Matrix::random(batch, hidden, 1.0, &mut rng);
        let c0 = Matrix::random(batch, hidden, 1.0, &mut rng);
        // Loss = <h, rh> + <c, rc> so the upstream gradients are rh and rc.
        let rh = Matrix::random(batch, hidden, 1.0, &mut rng);
        let rc = Matrix::random(batch, hidden, 1.0, &mut rng);
        let loss = |w: &Matrix, x: &Matrix, h0: &Matrix, c0: &Matrix| {
            let p = LstmParams::new(hidden, w.clone()).unwrap();
            let cache = lstm_forward(&p, x, h0, c0).unwrap();
            dot(&cache.h, &rh) + dot(&cache.c, &rc)
        };
        let params = LstmParams::new(hidden, w.clone()).unwrap();
        let cache = lstm_forward(&params, &x, &h0, &c0).unwrap();
        let g = lstm_backward(&params, &cache, &rh, &rc).unwrap();

        let checks = [
            ("dW", &g.dw, numeric_grad(&w, |w| loss(w, &x, &h0, &c0))),
            ("dx", &g.dx, numeric_grad(&x, |x| loss(&w, x, &h0, &c0))),
            ("dh_prev", &g.dh_prev, numeric_grad(&h0, |h| loss(&w, &x, h, &c0))),
            ("dc_prev", &g.dc_prev, numeric_grad(&c0, |c| loss(&w, &x, &h0, c))),
        ];
        for (name, analytic, numeric) in checks {
            let e = rel(analytic, &numeric);
            assert!(e < TOL, "H={hidden} {name}: relative error {e:e}");
        }
    }
}

fn translator_loss(spec: &TranslatorSpec, data: &TranslatorData) -> f64 {
    let out = reference(spec, data).unwrap();
    let top = spec.stages().len() - 1;
    data.targets
        .iter()
        .map(|(&(t, p), target)| {
            let d = out[&cell_name("h", top, t, p)].sub(target).unwrap();
            0.5 * d.data().iter().map(|v| v * v).sum::<f64>()
        })
        .sum()
}

#[test]
fn translator_weight_gradients_match_finite_differences() {
    // One layer, encoder/decoder, and the attention layout.
    for layers in [1, 2, 3] {
        let spec = TranslatorSpec {
            hidden: 3,
            layers,
            batch: 3,
            bucket: (2, 2),
            time_steps: 2,
            eta: 1.0,
            training: true,
        };
        let data = TranslatorData::random(&spec, &mut ChaCha8Rng::seed_from_u64(40 + layers as u64));
        let out = reference(&spec, &data).unwrap();
        for (l, w) in data.weights.iter().enumerate() {
            // With eta = 1 the update is exactly the summed gradient.
            let analytic = w.sub(&out[&final_weight_name(l)]).unwrap();
            let numeric = numeric_grad(w, |w2| {
                let mut d = data.clone();
                d.weights[l] = w2.clone();
                translator_loss(&spec, &d)
            });
            let e = rel(&analytic, &numeric);
            assert!(e < TOL, "layers={layers} W{l}: relative error {e:e}");
        }
    }
}
