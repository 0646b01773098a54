//! The full network: GConvGRU over the window, flatten of the final hidden
//! state, three (ReLU + linear) blocks and a two-way softmax.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clip::Label;
use crate::error::{Error, Result};
use crate::gconv::{gru_backward, gru_sequence, init_gru_values, GruDims, GruTape, GruWeights, SpectralBasis};
use crate::linalg::{matmul_acc, matmul_tn_acc};
use crate::skeleton::{build_topology, SkeletonWindow, NUM_CHANNELS, NUM_JOINTS};

/// Footprint ceiling for the parameters stored as 32-bit floats.
pub const PARAM_BUDGET_BYTES: usize = 27 * 1024;

const FRAME_FEATURES: usize = NUM_JOINTS * NUM_CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PedGnnConfig {
    /// Window length in frames.
    pub n_f: usize,
    /// Hidden channels per skeleton node.
    pub hidden: usize,
    /// Chebyshev filter order.
    pub cheb_k: usize,
    /// Output widths of the three head blocks; the last must be 2.
    pub fc_dims: [usize; 3],
    pub dropout_rate: f64,
}

impl Default for PedGnnConfig {
    fn default() -> Self {
        PedGnnConfig { n_f: 16, hidden: 8, cheb_k: 2, fc_dims: [32, 16, 2], dropout_rate: 0.5 }
    }
}

impl PedGnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_f == 0 {
            return Err(Error::Config("n_f must be at least 1".into()));
        }
        if self.hidden == 0 || self.cheb_k == 0 {
            return Err(Error::Config("hidden and cheb_k must be at least 1".into()));
        }
        if self.fc_dims[2] != 2 {
            return Err(Error::Config(format!("fc_dims must end in 2, got {:?}", self.fc_dims)));
        }
        if self.fc_dims[0] == 0 || self.fc_dims[1] == 0 {
            return Err(Error::Config("fc_dims must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn gru_dims(&self) -> GruDims {
        GruDims::new(self.cheb_k, self.hidden)
    }

    pub fn flat_len(&self) -> usize {
        NUM_JOINTS * self.hidden
    }

    /// (in, out) widths of the three linear layers.
    pub fn fc_shapes(&self) -> [(usize, usize); 3] {
        [
            (self.flat_len(), self.fc_dims[0]),
            (self.fc_dims[0], self.fc_dims[1]),
            (self.fc_dims[1], self.fc_dims[2]),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.gru_dims().len() + self.fc_shapes().iter().map(|(i, o)| i * o + o).sum::<usize>()
    }

    /// (weight range, bias range) of linear layer `layer` in the flat vector.
    fn fc_ranges(&self, layer: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let mut start = self.gru_dims().len();
        let shapes = self.fc_shapes();
        for (i, o) in shapes.iter().take(layer) {
            start += i * o + o;
        }
        let (i, o) = shapes[layer];
        (start..start + i * o, start + i * o..start + i * o + o)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub count: usize,
    pub bytes_f32: usize,
}

/// All learnable weights in one flat vector; gradients and optimizer
/// moments use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PedGnnParams {
    pub config: PedGnnConfig,
    pub values: Vec<f64>,
}

impl PedGnnParams {
    pub fn zeros(config: PedGnnConfig) -> Result<Self> {
        config.validate()?;
        Ok(PedGnnParams { config, values: vec![0.0; config.param_count()] })
    }

    /// Fan-in uniform init for the cell; linear layers draw weights and
    /// biases from `+-1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(config: PedGnnConfig, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let dims = config.gru_dims();
        init_gru_values(dims, &mut p.values[..dims.len()], rng);
        for layer in 0..3 {
            let (w, b) = config.fc_ranges(layer);
            let bound = 1.0 / (config.fc_shapes()[layer].0 as f64).sqrt();
            // weight and bias ranges are adjacent
            for v in p.values[w.start..b.end].iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    pub fn gru(&self) -> GruWeights<'_> {
        let dims = self.config.gru_dims();
        GruWeights { dims, values: &self.values[..dims.len()] }
    }

    /// Canonical (name, shape, range) of every tensor in layout order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, std::ops::Range<usize>)> {
        let mut out = self.config.gru_dims().tensors("gru.");
        for (layer, (i, o)) in self.config.fc_shapes().into_iter().enumerate() {
            let (w, b) = self.config.fc_ranges(layer);
            out.push((format!("fc{}.weight", layer + 1), vec![o, i], w));
            out.push((format!("fc{}.bias", layer + 1), vec![o], b));
        }
        out
    }
}

pub fn count_params(params: &PedGnnParams) -> ParamCount {
    let count = params.values.len();
    ParamCount { count, bytes_f32: 4 * count }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub p_cross: f64,
    pub p_nocross: f64,
    pub logits: [f64; 2],
}

impl Prediction {
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let m = logits[0].max(logits[1]);
        let e0 = (logits[0] - m).exp();
        let e1 = (logits[1] - m).exp();
        let s = e0 + e1;
        Prediction { p_cross: e0 / s, p_nocross: e1 / s, logits }
    }

    /// Crossing iff its probability is strictly above one half.
    pub fn label(&self) -> Label {
        if self.p_cross > 0.5 {
            Label::Cross
        } else {
            Label::NoCross
        }
    }
}

/// Two-class cross-entropy computed from the logits in log-sum-exp form.
pub fn loss(pred: &Prediction, label: Label) -> f64 {
    let l = pred.logits;
    let m = l[0].max(l[1]);
    let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
    lse - l[label.class_index()]
}

/// Inverted-dropout multipliers (0 or `1/(1-p)`) for the flattened state
/// and the inputs of the second and third blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    masks: [Vec<f64>; 3],
}

impl DropoutMasks {
    pub fn identity(config: &PedGnnConfig) -> Self {
        let shapes = config.fc_shapes();
        DropoutMasks { masks: [vec![1.0; shapes[0].0], vec![1.0; shapes[1].0], vec![1.0; shapes[2].0]] }
    }

    pub fn sample<R: Rng + ?Sized>(config: &PedGnnConfig, rng: &mut R) -> Self {
        let p = config.dropout_rate;
        let keep = 1.0 / (1.0 - p);
        let mut m = Self::identity(config);
        if p > 0.0 {
            for v in m.masks.iter_mut().flatten() {
                *v = if rng.random::<f64>() < p { 0.0 } else { keep };
            }
        }
        m
    }
}

/// Everything the backward pass needs from one training forward.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    gru: GruTape,
    masks: DropoutMasks,
    /// Block inputs after dropout, before ReLU.
    dropped: [Vec<f64>; 3],
    /// ReLU outputs feeding each linear layer.
    acts: [Vec<f64>; 3],
    pub prediction: Prediction,
}

impl ForwardTape {
    /// Block inputs seen by each ReLU (after dropout).
    pub fn relu_inputs(&self) -> &[Vec<f64>; 3] {
        &self.dropped
    }
}

pub enum Mode<'r, R: Rng + ?Sized> {
    Infer,
    Train(&'r mut R),
}

/// The network with its precomputed spectral basis.
#[derive(Debug, Clone)]
pub struct PedGnn {
    pub params: PedGnnParams,
    basis: SpectralBasis,
}

fn window_features(window: &SkeletonWindow<'_>) -> Vec<f64> {
    let mut feats = vec![0.0; window.len() * FRAME_FEATURES];
    for (frame, out) in window.frames().iter().zip(feats.chunks_exact_mut(FRAME_FEATURES)) {
        frame.write_features(out);
    }
    feats
}

impl PedGnn {
    pub fn new(params: PedGnnParams) -> Result<Self> {
        params.config.validate()?;
        if params.values.len() != params.config.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, config needs {}",
                params.values.len(),
                params.config.param_count()
            )));
        }
        let basis = SpectralBasis::new(&build_topology(), params.config.cheb_k)?;
        Ok(PedGnn { params, basis })
    }

    pub fn config(&self) -> &PedGnnConfig {
        &self.params.config
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    fn check_window(&self, window: &SkeletonWindow<'_>) -> Result<()> {
        if window.len() != self.params.config.n_f {
            return Err(Error::Shape(format!("window has {} frames, model expects {}", window.len(), self.params.config.n_f)));
        }
        Ok(())
    }

    /// Single entry point for both modes: infer is deterministic, train draws
    /// dropout masks from `rng` and returns the tape.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        window: &SkeletonWindow<'_>,
        mode: Mode<'_, R>,
    ) -> Result<(Prediction, Option<ForwardTape>)> {
        match mode {
            Mode::Infer => Ok((self.predict(window)?, None)),
            Mode::Train(rng) => {
                let masks = DropoutMasks::sample(&self.params.config, rng);
                let tape = self.forward_train(window, masks)?;
                Ok((tape.prediction, Some(tape)))
            }
        }
    }

    pub fn predict(&self, window: &SkeletonWindow<'_>) -> Result<Prediction> {
        self.check_window(window)?;
        self.predict_unchecked_len(window)
    }

    /// Inference on a window of any length; the recurrent cell does not
    /// depend on N_F.
    pub fn predict_unchecked_len(&self, window: &SkeletonWindow<'_>) -> Result<Prediction> {
        let feats = window_features(window);
        let h = gru_sequence(feats.chunks_exact(FRAME_FEATURES), &self.params.gru(), &self.basis, None)?;
        let mut s = h.values;
        for layer in 0..3 {
            s.iter_mut().for_each(|v| *v = v.max(0.0));
            s = self.linear(layer, &s);
        }
        finite_logits(&s)
    }

    pub fn forward_train(&self, window: &SkeletonWindow<'_>, masks: DropoutMasks) -> Result<ForwardTape> {
        self.check_window(window)?;
        let feats = window_features(window);
        let mut gru = GruTape::default();
        let h = gru_sequence(feats.chunks_exact(FRAME_FEATURES), &self.params.gru(), &self.basis, Some(&mut gru))?;
        let mut s = h.values;
        let mut dropped: [Vec<f64>; 3] = Default::default();
        let mut acts: [Vec<f64>; 3] = Default::default();
        for layer in 0..3 {
            let d: Vec<f64> = s.iter().zip(&masks.masks[layer]).map(|(a, m)| a * m).collect();
            let u: Vec<f64> = d.iter().map(|v| v.max(0.0)).collect();
            s = self.linear(layer, &u);
            dropped[layer] = d;
            acts[layer] = u;
        }
        let prediction = finite_logits(&s)?;
        Ok(ForwardTape { gru, masks, dropped, acts, prediction })
    }

    fn linear(&self, layer: usize, input: &[f64]) -> Vec<f64> {
        let (w, b) = self.params.config.fc_ranges(layer);
        let (n_in, _) = self.params.config.fc_shapes()[layer];
        let w = &self.params.values[w];
        self.params.values[b]
            .iter()
            .zip(w.chunks_exact(n_in))
            .map(|(bias, row)| bias + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>())
            .collect()
    }

    /// Accumulates `scale * dL/dtheta` for the cross-entropy loss into
    /// `grads` and returns the loss.
    pub fn backward(&self, tape: &ForwardTape, label: Label, scale: f64, grads: &mut [f64]) -> Result<f64> {
        let p = tape.prediction;
        let mut d_logits = [p.p_cross, p.p_nocross];
        d_logits[label.class_index()] -= 1.0;
        for v in d_logits.iter_mut() {
            *v *= scale;
        }
        self.backward_logits(tape, &d_logits, grads, false)?;
        Ok(loss(&p, label))
    }

    /// Backpropagates an arbitrary logit gradient. Returns per-frame input
    /// gradients when requested.
    pub fn backward_logits(
        &self,
        tape: &ForwardTape,
        d_logits: &[f64; 2],
        grads: &mut [f64],
        want_input_grads: bool,
    ) -> Result<Vec<Vec<f64>>> {
        let config = &self.params.config;
        if grads.len() != self.params.values.len() {
            return Err(Error::Shape("gradient buffer does not match parameters".into()));
        }
        let shapes = config.fc_shapes();
        let mut d_out = d_logits.to_vec();
        for layer in (0..3).rev() {
            let (n_in, n_out) = shapes[layer];
            let (w_r, b_r) = config.fc_ranges(layer);
            for (g, d) in grads[b_r].iter_mut().zip(&d_out) {
                *g += d;
            }
            // dW[o, i] += d_out[o] * act[i]
            matmul_tn_acc(&d_out, &tape.acts[layer], &mut grads[w_r.clone()], 1, n_out, n_in);
            let mut d_act = vec![0.0; n_in];
            matmul_acc(&d_out, &self.params.values[w_r], &mut d_act, 1, n_out, n_in);
            d_out = d_act
                .iter()
                .zip(&tape.dropped[layer])
                .zip(&tape.masks.masks[layer])
                .map(|((g, d), m)| if *d > 0.0 { g * m } else { 0.0 })
                .collect();
        }
        let dims = config.gru_dims();
        let gru_grads = gru_backward(
            &tape.gru,
            &self.params.gru(),
            &self.basis,
            &d_out,
            &mut grads[..dims.len()],
            want_input_grads,
        )?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        Ok(gru_grads.inputs)
    }
}

fn finite_logits(s: &[f64]) -> Result<Prediction> {
    if s.len() != 2 || !s.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logits {s:?}")));
    }
    Ok(Prediction::from_logits([s[0], s[1]]))
}
