//! Chebyshev spectral filtering on the skeleton graph and the
//! graph-convolutional GRU cell, with an explicit tape for reverse mode.
//!
//! Node features are row-major `19 x C` matrices. A filter bank `W` is a
//! `K x C x F` tensor and `cheb_conv` evaluates `sum_k T_k X W[k]`, where
//! `T_k` are Chebyshev polynomials of the scaled Laplacian `L - I`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul_acc, matmul_nt_acc, matmul_tn_acc, sigmoid};
use crate::skeleton::{SkeletonTopology, NUM_CHANNELS, NUM_JOINTS};

const N: usize = NUM_JOINTS;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    order: usize,
    laplacian: Vec<f64>,
    cheb: Vec<Vec<f64>>,
}

impl SpectralBasis {
    pub fn new(topology: &SkeletonTopology, order: usize) -> Result<Self> {
        Self::from_adjacency(&topology.adjacency, order)
    }

    /// Builds the basis for an arbitrary 19-node adjacency matrix.
    /// Isolated nodes get a zero Laplacian row.
    pub fn from_adjacency(adjacency: &[f64], order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("Chebyshev order must be at least 1".into()));
        }
        if adjacency.len() != N * N {
            return Err(Error::Shape(format!("adjacency has {} entries, expected {}", adjacency.len(), N * N)));
        }
        let inv_sqrt_deg: Vec<f64> = (0..N)
            .map(|i| {
                let d: f64 = adjacency[i * N..(i + 1) * N].iter().sum();
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();

        // L = I - D^-1/2 A D^-1/2 ; with lambda_max = 2 the scaled operator
        // is L - I = -D^-1/2 A D^-1/2.
        let mut laplacian = vec![0.0; N * N];
        let mut scaled = vec![0.0; N * N];
        for i in 0..N {
            for j in 0..N {
                let a_hat = inv_sqrt_deg[i] * adjacency[i * N + j] * inv_sqrt_deg[j];
                let ident = if i == j && inv_sqrt_deg[i] > 0.0 { 1.0 } else { 0.0 };
                laplacian[i * N + j] = ident - a_hat;
                scaled[i * N + j] = laplacian[i * N + j] - if i == j { 1.0 } else { 0.0 };
            }
        }

        let mut cheb: Vec<Vec<f64>> = Vec::with_capacity(order);
        let mut identity = vec![0.0; N * N];
        for i in 0..N {
            identity[i * N + i] = 1.0;
        }
        cheb.push(identity);
        if order > 1 {
            cheb.push(scaled.clone());
        }
        // The recurrence is evaluated on the upper triangle and mirrored so
        // every T_k is exactly symmetric.
        for k in 2..order {
            let mut prod = vec![0.0; N * N];
            matmul_acc(&scaled, &cheb[k - 1], &mut prod, N, N, N);
            let mut next = vec![0.0; N * N];
            for i in 0..N {
                for j in i..N {
                    let v = 2.0 * prod[i * N + j] - cheb[k - 2][i * N + j];
                    next[i * N + j] = v;
                    next[j * N + i] = v;
                }
            }
            cheb.push(next);
        }
        Ok(SpectralBasis { order, laplacian, cheb })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn laplacian(&self) -> &[f64] {
        &self.laplacian
    }

    pub fn cheb(&self, k: usize) -> &[f64] {
        &self.cheb[k]
    }

    /// out (19 x c) = T_k x. T_0 is the identity and is copied directly.
    fn apply(&self, k: usize, x: &[f64], c: usize, out: &mut [f64]) {
        if k == 0 {
            out.copy_from_slice(x);
        } else {
            out.iter_mut().for_each(|v| *v = 0.0);
            matmul_acc(&self.cheb[k], x, out, N, N, c);
        }
    }

    /// out += T_k x
    fn apply_acc(&self, k: usize, x: &[f64], c: usize, out: &mut [f64]) {
        if k == 0 {
            out.iter_mut().zip(x).for_each(|(o, v)| *o += v);
        } else {
            matmul_acc(&self.cheb[k], x, out, N, N, c);
        }
    }
}

/// `sum_k T_k x W[k]` for `x: 19 x c_in`, `weights: K x c_in x c_out`.
pub fn cheb_conv(x: &[f64], c_in: usize, weights: &[f64], c_out: usize, basis: &SpectralBasis) -> Result<Vec<f64>> {
    let k = basis.order();
    if x.len() != N * c_in || weights.len() != k * c_in * c_out {
        return Err(Error::Shape(format!(
            "cheb_conv: x has {} entries (expected {}), weights {} (expected {})",
            x.len(),
            N * c_in,
            weights.len(),
            k * c_in * c_out
        )));
    }
    let mut out = vec![0.0; N * c_out];
    let mut tx = vec![0.0; N * c_in];
    for i in 0..k {
        basis.apply(i, x, c_in, &mut tx);
        matmul_acc(&tx, &weights[i * c_in * c_out..(i + 1) * c_in * c_out], &mut out, N, c_in, c_out);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Update,
    Reset,
    Candidate,
}

impl Gate {
    pub const ALL: [Gate; 3] = [Gate::Update, Gate::Reset, Gate::Candidate];

    pub fn name(self) -> &'static str {
        match self {
            Gate::Update => "update",
            Gate::Reset => "reset",
            Gate::Candidate => "candidate",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Shape of a GConvGRU cell and the layout of its flat parameter vector:
/// per gate (update, reset, candidate) the input filters `Wx[0..K]`, the
/// hidden filters `Wh[0..K]`, then the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruDims {
    pub cheb_k: usize,
    pub in_channels: usize,
    pub hidden: usize,
}

impl GruDims {
    pub fn new(cheb_k: usize, hidden: usize) -> Self {
        GruDims { cheb_k, in_channels: NUM_CHANNELS, hidden }
    }

    fn wx_len(&self) -> usize {
        self.in_channels * self.hidden
    }

    fn wh_len(&self) -> usize {
        self.hidden * self.hidden
    }

    fn gate_len(&self) -> usize {
        self.cheb_k * (self.wx_len() + self.wh_len()) + self.hidden
    }

    pub fn len(&self) -> usize {
        3 * self.gate_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn wx_range(&self, gate: Gate) -> std::ops::Range<usize> {
        let start = gate.slot() * self.gate_len();
        start..start + self.cheb_k * self.wx_len()
    }

    pub fn wh_range(&self, gate: Gate) -> std::ops::Range<usize> {
        let start = gate.slot() * self.gate_len() + self.cheb_k * self.wx_len();
        start..start + self.cheb_k * self.wh_len()
    }

    pub fn bias_range(&self, gate: Gate) -> std::ops::Range<usize> {
        let start = gate.slot() * self.gate_len() + self.cheb_k * (self.wx_len() + self.wh_len());
        start..start + self.hidden
    }

    /// Canonical (name, shape, range) for every tensor, in layout order.
    pub fn tensors(&self, prefix: &str) -> Vec<(String, Vec<usize>, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        for gate in Gate::ALL {
            let wx = self.wx_range(gate);
            for k in 0..self.cheb_k {
                let s = wx.start + k * self.wx_len();
                out.push((
                    format!("{prefix}{}.wx.k{k}", gate.name()),
                    vec![self.in_channels, self.hidden],
                    s..s + self.wx_len(),
                ));
            }
            let wh = self.wh_range(gate);
            for k in 0..self.cheb_k {
                let s = wh.start + k * self.wh_len();
                out.push((format!("{prefix}{}.wh.k{k}", gate.name()), vec![self.hidden, self.hidden], s..s + self.wh_len()));
            }
            out.push((format!("{prefix}{}.bias", gate.name()), vec![self.hidden], self.bias_range(gate)));
        }
        out
    }
}

/// Owned GConvGRU parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GConvGruParams {
    pub dims: GruDims,
    pub values: Vec<f64>,
}

impl GConvGruParams {
    pub fn zeros(dims: GruDims) -> Self {
        GConvGruParams { dims, values: vec![0.0; dims.len()] }
    }

    /// Uniform fan-in initialization: every filter tensor of shape
    /// `K x A x B` draws from `+-1/sqrt(K*A*B)`; biases start at zero.
    pub fn init<R: Rng + ?Sized>(dims: GruDims, rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        init_gru_values(dims, &mut p.values, rng);
        p
    }

    pub fn view(&self) -> GruWeights<'_> {
        GruWeights { dims: self.dims, values: &self.values }
    }
}

pub(crate) fn init_gru_values<R: Rng + ?Sized>(dims: GruDims, values: &mut [f64], rng: &mut R) {
    for gate in Gate::ALL {
        let bound = 1.0 / ((dims.cheb_k * dims.in_channels * dims.hidden) as f64).sqrt();
        for v in values[dims.wx_range(gate)].iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
        let bound = 1.0 / ((dims.cheb_k * dims.hidden * dims.hidden) as f64).sqrt();
        for v in values[dims.wh_range(gate)].iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
    }
}

/// Borrowed view over a flat GConvGRU parameter slice.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights<'a> {
    pub dims: GruDims,
    pub values: &'a [f64],
}

impl<'a> GruWeights<'a> {
    pub fn new(dims: GruDims, values: &'a [f64]) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::Shape(format!("GConvGRU expects {} parameters, got {}", dims.len(), values.len())));
        }
        Ok(GruWeights { dims, values })
    }

    fn wx(&self, gate: Gate, k: usize) -> &'a [f64] {
        let r = self.dims.wx_range(gate);
        let len = self.dims.wx_len();
        &self.values[r.start + k * len..r.start + (k + 1) * len]
    }

    fn wh(&self, gate: Gate, k: usize) -> &'a [f64] {
        let r = self.dims.wh_range(gate);
        let len = self.dims.wh_len();
        &self.values[r.start + k * len..r.start + (k + 1) * len]
    }

    fn bias(&self, gate: Gate) -> &'a [f64] {
        &self.values[self.dims.bias_range(gate)]
    }
}

/// Per-node hidden vectors, row-major `19 x H`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub hidden: usize,
    pub values: Vec<f64>,
}

impl HiddenState {
    pub fn zeros(hidden: usize) -> Self {
        HiddenState { hidden, values: vec![0.0; N * hidden] }
    }
}

/// Activations of one cell step needed by the backward pass.
#[derive(Debug, Clone)]
struct StepCache {
    /// T_k x_t for k in 0..K, each 19 x C.
    tx: Vec<f64>,
    h_prev: Vec<f64>,
    /// T_k h_prev, each 19 x H.
    th: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    /// T_k (r * h_prev).
    trh: Vec<f64>,
    cand: Vec<f64>,
}

/// Forward record of an unrolled sequence.
#[derive(Debug, Clone, Default)]
pub struct GruTape {
    steps: Vec<StepCache>,
}

impl GruTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite value in {what}")))
    }
}

fn step_impl(
    x_t: &[f64],
    h_prev: &[f64],
    w: &GruWeights<'_>,
    basis: &SpectralBasis,
) -> Result<(Vec<f64>, StepCache)> {
    let GruDims { cheb_k, in_channels: c, hidden: h } = w.dims;
    if basis.order() != cheb_k {
        return Err(Error::Shape(format!("basis order {} != cell order {}", basis.order(), cheb_k)));
    }
    if x_t.len() != N * c || h_prev.len() != N * h {
        return Err(Error::Shape(format!(
            "gru_step: x has {} entries (expected {}), h has {} (expected {})",
            x_t.len(),
            N * c,
            h_prev.len(),
            N * h
        )));
    }
    let nc = N * c;
    let nh = N * h;

    let mut tx = vec![0.0; cheb_k * nc];
    let mut th = vec![0.0; cheb_k * nh];
    for k in 0..cheb_k {
        basis.apply(k, x_t, c, &mut tx[k * nc..(k + 1) * nc]);
        basis.apply(k, h_prev, h, &mut th[k * nh..(k + 1) * nh]);
    }

    let gate_pre = |gate: Gate, th: &[f64]| {
        let mut a = vec![0.0; nh];
        let b = w.bias(gate);
        for row in a.chunks_mut(h) {
            row.copy_from_slice(b);
        }
        for k in 0..cheb_k {
            matmul_acc(&tx[k * nc..(k + 1) * nc], w.wx(gate, k), &mut a, N, c, h);
            matmul_acc(&th[k * nh..(k + 1) * nh], w.wh(gate, k), &mut a, N, h, h);
        }
        a
    };

    let mut z = gate_pre(Gate::Update, &th);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut r = gate_pre(Gate::Reset, &th);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));

    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut trh = vec![0.0; cheb_k * nh];
    for k in 0..cheb_k {
        basis.apply(k, &rh, h, &mut trh[k * nh..(k + 1) * nh]);
    }
    let mut cand = gate_pre(Gate::Candidate, &trh);
    cand.iter_mut().for_each(|v| *v = v.tanh());

    let h_new: Vec<f64> = (0..nh).map(|i| z[i] * h_prev[i] + (1.0 - z[i]) * cand[i]).collect();
    check_finite(&h_new, "GConvGRU hidden state")?;

    Ok((
        h_new,
        StepCache { tx, h_prev: h_prev.to_vec(), th, z, r, trh, cand },
    ))
}

/// One GConvGRU step:
/// `z = sigma(Cx_z + Ch_z + b_z)`, `r = sigma(Cx_r + Ch_r + b_r)`,
/// `c = tanh(Cx_c + C(r*h)_c + b_c)`, `h' = z*h + (1-z)*c`.
pub fn gru_step(x_t: &[f64], h_prev: &HiddenState, weights: &GruWeights<'_>, basis: &SpectralBasis) -> Result<HiddenState> {
    let (values, _) = step_impl(x_t, &h_prev.values, weights, basis)?;
    Ok(HiddenState { hidden: weights.dims.hidden, values })
}

/// Runs the cell over a sequence from `h_0 = 0`. When `tape` is given the
/// activations of every step are recorded for [`gru_backward`].
pub fn gru_sequence<'x>(
    inputs: impl IntoIterator<Item = &'x [f64]>,
    weights: &GruWeights<'_>,
    basis: &SpectralBasis,
    mut tape: Option<&mut GruTape>,
) -> Result<HiddenState> {
    let mut h = vec![0.0; N * weights.dims.hidden];
    if let Some(t) = tape.as_deref_mut() {
        t.steps.clear();
    }
    for x in inputs {
        let (next, cache) = step_impl(x, &h, weights, basis)?;
        if let Some(t) = tape.as_deref_mut() {
            t.steps.push(cache);
        }
        h = next;
    }
    Ok(HiddenState { hidden: weights.dims.hidden, values: h })
}

/// Gradients produced by [`gru_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct GruGradients {
    /// Per-timestep input gradients, each 19 x C; empty unless requested.
    pub inputs: Vec<Vec<f64>>,
    /// Gradient with respect to the initial hidden state.
    pub h0: Vec<f64>,
}

/// Reverse-mode pass through a recorded sequence. Parameter gradients are
/// accumulated into `param_grads` (same layout as the weights).
pub fn gru_backward(
    tape: &GruTape,
    weights: &GruWeights<'_>,
    basis: &SpectralBasis,
    d_h_last: &[f64],
    param_grads: &mut [f64],
    want_input_grads: bool,
) -> Result<GruGradients> {
    let GruDims { in_channels: c, hidden: h, .. } = weights.dims;
    let nc = N * c;
    let nh = N * h;
    if tape.steps.is_empty() {
        return Err(Error::Shape("gru_backward called with an empty tape".into()));
    }
    if d_h_last.len() != nh || param_grads.len() != weights.dims.len() {
        return Err(Error::Shape("gru_backward: gradient buffer shape mismatch".into()));
    }
    let dims = weights.dims;

    let mut dh = d_h_last.to_vec();
    let mut input_grads = Vec::new();
    let mut tmp_h = vec![0.0; nh];
    let mut tmp_c = vec![0.0; nc];

    for step in tape.steps.iter().rev() {
        let mut dh_prev = vec![0.0; nh];
        let mut da_z = vec![0.0; nh];
        let mut da_c = vec![0.0; nh];
        for i in 0..nh {
            let z = step.z[i];
            let cand = step.cand[i];
            dh_prev[i] = dh[i] * z;
            da_z[i] = dh[i] * (step.h_prev[i] - cand) * z * (1.0 - z);
            da_c[i] = dh[i] * (1.0 - z) * (1.0 - cand * cand);
        }

        let mut dx = if want_input_grads { vec![0.0; nc] } else { Vec::new() };

        // candidate gate: input path, then hidden path through r * h_prev
        let mut d_rh = vec![0.0; nh];
        accumulate_gate(
            Gate::Candidate, &dims, weights, basis, &step.tx, &step.trh, &da_c, param_grads,
            &mut dx, &mut d_rh, &mut tmp_c, &mut tmp_h,
        );
        let mut da_r = vec![0.0; nh];
        for i in 0..nh {
            let r = step.r[i];
            da_r[i] = d_rh[i] * step.h_prev[i] * r * (1.0 - r);
            dh_prev[i] += d_rh[i] * r;
        }
        accumulate_gate(
            Gate::Reset, &dims, weights, basis, &step.tx, &step.th, &da_r, param_grads,
            &mut dx, &mut dh_prev, &mut tmp_c, &mut tmp_h,
        );
        accumulate_gate(
            Gate::Update, &dims, weights, basis, &step.tx, &step.th, &da_z, param_grads,
            &mut dx, &mut dh_prev, &mut tmp_c, &mut tmp_h,
        );

        if want_input_grads {
            input_grads.push(dx);
        }
        dh = dh_prev;
    }
    check_finite(param_grads, "GConvGRU parameter gradients")?;
    input_grads.reverse();
    Ok(GruGradients { inputs: input_grads, h0: dh })
}

/// Backpropagates a gate pre-activation gradient `da` into the gate's
/// filters and bias, the input gradient `dx` (if non-empty) and the
/// gradient of whatever hidden-side operand the gate convolved (`d_hside`).
#[allow(clippy::too_many_arguments)]
fn accumulate_gate(
    gate: Gate,
    dims: &GruDims,
    w: &GruWeights<'_>,
    basis: &SpectralBasis,
    tx: &[f64],
    t_hside: &[f64],
    da: &[f64],
    grads: &mut [f64],
    dx: &mut [f64],
    d_hside: &mut [f64],
    tmp_c: &mut [f64],
    tmp_h: &mut [f64],
) {
    let (c, h) = (dims.in_channels, dims.hidden);
    let nc = N * c;
    let nh = N * h;
    let wx_len = c * h;
    let wh_len = h * h;

    let wx_r = dims.wx_range(gate);
    let wh_r = dims.wh_range(gate);
    let b_r = dims.bias_range(gate);
    for row in da.chunks(h) {
        for (g, v) in grads[b_r.clone()].iter_mut().zip(row) {
            *g += v;
        }
    }
    for k in 0..dims.cheb_k {
        let gx = wx_r.start + k * wx_len;
        matmul_tn_acc(&tx[k * nc..(k + 1) * nc], da, &mut grads[gx..gx + wx_len], N, c, h);
        let gh = wh_r.start + k * wh_len;
        matmul_tn_acc(&t_hside[k * nh..(k + 1) * nh], da, &mut grads[gh..gh + wh_len], N, h, h);

        // d(T_k s) = da W^T ; ds += T_k^T (da W^T) = T_k (da W^T), T_k symmetric
        tmp_h.iter_mut().for_each(|v| *v = 0.0);
        matmul_nt_acc(da, w.wh(gate, k), tmp_h, N, h, h);
        basis.apply_acc(k, tmp_h, h, d_hside);
        if !dx.is_empty() {
            tmp_c.iter_mut().for_each(|v| *v = 0.0);
            matmul_nt_acc(da, w.wx(gate, k), tmp_c, N, h, c);
            basis.apply_acc(k, tmp_c, c, dx);
        }
    }
}
