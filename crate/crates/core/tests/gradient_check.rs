//! Central finite differences against the analytic reverse pass.

use pedgnn::gconv::{gru_backward, gru_sequence, GConvGruParams, GruDims, GruTape, SpectralBasis};
use pedgnn::model::{DropoutMasks, PedGnn, PedGnnConfig, PedGnnParams};
use pedgnn::rng;
use pedgnn::skeleton::{build_topology, Joint, NormalizedSkeletonFrame, SkeletonWindow, NUM_JOINTS};
use pedgnn::Label;
use rand::Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn frames(n: usize, seed: u64) -> Vec<NormalizedSkeletonFrame> {
    let mut r = rng::stream(seed, "gradcheck-frames", 0);
    (0..n)
        .map(|f| {
            let mut joints = [Joint::default(); NUM_JOINTS];
            for j in joints.iter_mut() {
                *j = Joint::new(r.random(), r.random(), r.random());
            }
            NormalizedSkeletonFrame { frame_index: f as u64, pedestrian_id: 3, joints }
        })
        .collect()
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Loss for the cell alone: a fixed random projection of the final state.
fn cell_loss(dims: GruDims, values: &[f64], basis: &SpectralBasis, xs: &[Vec<f64>], proj: &[f64]) -> f64 {
    let p = GConvGruParams { dims, values: values.to_vec() };
    let h = gru_sequence(xs.iter().map(|v| v.as_slice()), &p.view(), basis, None).unwrap();
    h.values.iter().zip(proj).map(|(a, b)| a * b).sum()
}

#[test]
fn cell_gradients_match_central_differences() {
    for &(k, hidden, steps) in &[(1usize, 1usize, 1usize), (2, 2, 3), (3, 3, 4), (2, 8, 5)] {
        for seed in 0..10u64 {
            let dims = GruDims::new(k, hidden);
            let basis = SpectralBasis::new(&build_topology(), k).unwrap();
            let mut r = rng::stream(seed, "gradcheck", (k * 100 + hidden) as u64);
            let values: Vec<f64> = (0..dims.len()).map(|_| r.random_range(-0.6..0.6)).collect();
            let xs: Vec<Vec<f64>> = (0..steps).map(|_| (0..NUM_JOINTS * 3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            let proj: Vec<f64> = (0..NUM_JOINTS * hidden).map(|_| r.random_range(-1.0..1.0)).collect();

            let p = GConvGruParams { dims, values: values.clone() };
            let mut tape = GruTape::default();
            gru_sequence(xs.iter().map(|v| v.as_slice()), &p.view(), &basis, Some(&mut tape)).unwrap();
            let mut grads = vec![0.0; dims.len()];
            let g = gru_backward(&tape, &p.view(), &basis, &proj, &mut grads, true).unwrap();

            for i in 0..dims.len() {
                let mut plus = values.clone();
                plus[i] += STEP;
                let mut minus = values.clone();
                minus[i] -= STEP;
                let numeric = (cell_loss(dims, &plus, &basis, &xs, &proj) - cell_loss(dims, &minus, &basis, &xs, &proj)) / (2.0 * STEP);
                let e = rel_err(grads[i], numeric);
                assert!(e < TOL, "K={k} H={hidden} seed={seed} param {i}: analytic {} numeric {numeric} err {e}", grads[i]);
            }
            for t in 0..steps {
                for i in 0..NUM_JOINTS * 3 {
                    let mut xp = xs.clone();
                    xp[t][i] += STEP;
                    let mut xm = xs.clone();
                    xm[t][i] -= STEP;
                    let numeric = (cell_loss(dims, &values, &basis, &xp, &proj) - cell_loss(dims, &values, &basis, &xm, &proj)) / (2.0 * STEP);
                    let e = rel_err(g.inputs[t][i], numeric);
                    assert!(e < TOL, "input grad t={t} i={i}: err {e}");
                }
            }
        }
    }
}

/// Loss at `values` plus the ReLU activation pattern, so probes that
/// straddle a kink (where the loss is not differentiable) can be detected.
fn model_loss(model: &PedGnn, values: &[f64], window: &SkeletonWindow<'_>, masks: &DropoutMasks, label: Label) -> (f64, Vec<bool>) {
    let mut m = model.clone();
    m.params.values.copy_from_slice(values);
    let tape = m.forward_train(window, masks.clone()).unwrap();
    let pattern = tape.relu_inputs().iter().flatten().map(|&v| v > 0.0).collect();
    (pedgnn::model::loss(&tape.prediction, label), pattern)
}

#[test]
fn end_to_end_gradients_match_central_differences() {
    let configs = [
        PedGnnConfig { n_f: 2, hidden: 1, cheb_k: 1, fc_dims: [3, 3, 2], dropout_rate: 0.5 },
        PedGnnConfig { n_f: 4, hidden: 3, cheb_k: 3, fc_dims: [6, 5, 2], dropout_rate: 0.5 },
        PedGnnConfig { n_f: 6, ..PedGnnConfig::default() },
    ];
    for config in configs {
        for seed in 0..10u64 {
            let params = PedGnnParams::init(config, &mut rng::stream(seed, "init", 0)).unwrap();
            let model = PedGnn::new(params).unwrap();
            let fr = frames(config.n_f, seed);
            let window = SkeletonWindow::new(&fr).unwrap();
            let label = if seed % 2 == 0 { Label::Cross } else { Label::NoCross };
            // Dropout disabled: identity masks make the head deterministic.
            let masks = DropoutMasks::identity(&config);
            let tape = model.forward_train(&window, masks.clone()).unwrap();
            let mut grads = vec![0.0; model.params.values.len()];
            model.backward(&tape, label, 1.0, &mut grads).unwrap();

            let base = model.params.values.clone();
            let pattern: Vec<bool> = tape.relu_inputs().iter().flatten().map(|&v| v > 0.0).collect();
            let mut checked = 0;
            let mut kinks = 0;
            for i in 0..base.len() {
                let mut plus = base.clone();
                plus[i] += STEP;
                let mut minus = base.clone();
                minus[i] -= STEP;
                let (lp, pp) = model_loss(&model, &plus, &window, &masks, label);
                let (lm, pm) = model_loss(&model, &minus, &window, &masks, label);
                if pp != pattern || pm != pattern {
                    kinks += 1;
                    continue;
                }
                let numeric = (lp - lm) / (2.0 * STEP);
                let e = rel_err(grads[i], numeric);
                assert!(e < TOL, "{config:?} seed={seed} param {i}: analytic {} numeric {numeric} err {e}", grads[i]);
                checked += 1;
            }
            assert_eq!(checked + kinks, base.len());
            assert!(kinks * 100 <= base.len(), "too many kink-straddling probes: {kinks}");
        }
    }
}
