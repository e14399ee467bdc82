//! The classifier: a two-hidden-layer leaky-ReLU MLP with a single sigmoid
//! output, trained with binary cross-entropy.
//!
//! Besides the usual forward/backward passes this module provides input
//! gradients and the second-order machinery needed to differentiate *any*
//! penalty built from input gradients with respect to the parameters. The
//! architecture is fixed (three affine layers, leaky-ReLU, sigmoid), so all
//! second derivatives are closed-form Hessian-vector products rather than a
//! general autodiff graph:
//!
//! For a scalar `psi(phi) = grad_h g(h) . v` with `v` held constant, the
//! network's piecewise linearity makes the logit's input gradient multilinear
//! in the weight matrices, and the only curvature comes from the output
//! sigmoid. `grad_phi psi` is therefore one forward pass, one backward chain,
//! and one forward tangent pass along `v`.
//!
//! Leaky-ReLU slope masks are treated as locally constant when differentiating
//! (their derivative is zero almost everywhere); the slope at exactly zero is
//! 1, consistently with [`crate::activations::leaky_relu_slope`].

use crate::activations::{leaky_relu_slope, sigmoid, sigmoid_bce};
use crate::error::{Error, Result};
use crate::matrix::{affine, axpy, dot, Matrix, Vector};
use crate::rng::RngStream;

/// Layer sizes. The output layer is always a single logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpDims {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl MlpDims {
    pub fn new(input: usize, hidden1: usize, hidden2: usize) -> MlpDims {
        MlpDims {
            input,
            hidden1,
            hidden2,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.hidden1 * self.input
            + self.hidden1
            + self.hidden2 * self.hidden1
            + self.hidden2
            + self.hidden2
            + 1
    }
}

/// Weights and biases of one classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub b2: Vector,
    /// Output row, length `hidden2`.
    pub w3: Vector,
    pub b3: f64,
    pub leak_rate: f64,
}

impl MlpParams {
    pub fn dims(&self) -> MlpDims {
        MlpDims {
            input: self.w1.cols(),
            hidden1: self.w1.rows(),
            hidden2: self.w2.rows(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.is_finite()
            && self.b2.iter().all(|v| v.is_finite())
            && self.w3.iter().all(|v| v.is_finite())
            && self.b3.is_finite()
    }
}

/// Parameter-shaped gradient (or moment) container.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub b2: Vector,
    pub w3: Vector,
    pub b3: f64,
}

impl MlpGrads {
    pub fn zeros(dims: MlpDims) -> MlpGrads {
        MlpGrads {
            w1: Matrix::zeros(dims.hidden1, dims.input),
            b1: vec![0.0; dims.hidden1],
            w2: Matrix::zeros(dims.hidden2, dims.hidden1),
            b2: vec![0.0; dims.hidden2],
            w3: vec![0.0; dims.hidden2],
            b3: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        axpy(1.0, other.w1.data(), self.w1.data_mut());
        axpy(1.0, &other.b1, &mut self.b1);
        axpy(1.0, other.w2.data(), self.w2.data_mut());
        axpy(1.0, &other.b2, &mut self.b2);
        axpy(1.0, &other.w3, &mut self.w3);
        self.b3 += other.b3;
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.w1.data_mut() {
            *v *= s;
        }
        for v in &mut self.b1 {
            *v *= s;
        }
        for v in self.w2.data_mut() {
            *v *= s;
        }
        for v in &mut self.b2 {
            *v *= s;
        }
        for v in &mut self.w3 {
            *v *= s;
        }
        self.b3 *= s;
    }

    /// Flattens in serialization order (w1, b1, w2, b2, w3, b3).
    pub fn flatten(&self) -> Vector {
        let mut out = Vec::with_capacity(
            self.w1.data().len() + self.b1.len() + self.w2.data().len() + self.b2.len()
                + self.w3.len()
                + 1,
        );
        out.extend_from_slice(self.w1.data());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.data());
        out.extend_from_slice(&self.b2);
        out.extend_from_slice(&self.w3);
        out.push(self.b3);
        out
    }

    fn tensors(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("W1", self.w1.data()),
            ("b1", &self.b1),
            ("W2", self.w2.data()),
            ("b2", &self.b2),
            ("W3", &self.w3),
        ]
    }
}

/// Which output the input gradient differentiates.
///
/// For this binary classifier the "top predicted score" is the lone sigmoid
/// output, so `Score` is the default. A multi-class extension would take the
/// gradient of the max-score component with the argmax held fixed (not
/// differentiated through). `Logit` differentiates the pre-sigmoid output
/// instead; the two behave equivalently as diversity signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientTarget {
    #[default]
    Score,
    Logit,
}

/// Every intermediate value of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub input: Vector,
    pub z1: Vector,
    pub a1: Vector,
    pub z2: Vector,
    pub a2: Vector,
    pub logit: f64,
    pub score: f64,
}

/// Initializes weights uniform in `[-s, s]` with `s = sqrt(6 / fan_in)` per
/// layer; biases start at zero. Draw order: W1, W2, W3, each row-major.
pub fn init_params(dims: MlpDims, leak_rate: f64, rng: &mut RngStream) -> Result<MlpParams> {
    if dims.input == 0 || dims.hidden1 == 0 || dims.hidden2 == 0 {
        return Err(Error::InvalidArgument {
            op: "init_params",
            what: format!(
                "all layer sizes must be nonzero, got ({}, {}, {}, 1)",
                dims.input, dims.hidden1, dims.hidden2
            ),
        });
    }
    let draw_matrix = |rows: usize, cols: usize, rng: &mut RngStream| {
        let s = (6.0 / cols as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform(-s, s)).collect();
        Matrix::from_vec(rows, cols, data).expect("sized by construction")
    };
    let w1 = draw_matrix(dims.hidden1, dims.input, rng);
    let w2 = draw_matrix(dims.hidden2, dims.hidden1, rng);
    let w3 = draw_matrix(1, dims.hidden2, rng).data().to_vec();
    Ok(MlpParams {
        w1,
        b1: vec![0.0; dims.hidden1],
        w2,
        b2: vec![0.0; dims.hidden2],
        w3,
        b3: 0.0,
        leak_rate,
    })
}

fn leaky(v: &[f64], rate: f64) -> Vector {
    v.iter()
        .map(|&x| if x >= 0.0 { x } else { rate * x })
        .collect()
}

/// Forward pass caching every intermediate value.
pub fn forward(p: &MlpParams, h: &[f64]) -> Result<ForwardCache> {
    let z1 = affine(&p.w1, h, &p.b1)?;
    let a1 = leaky(&z1, p.leak_rate);
    let z2 = affine(&p.w2, &a1, &p.b2)?;
    let a2 = leaky(&z2, p.leak_rate);
    let logit = dot(&p.w3, &a2) + p.b3;
    let score = sigmoid(logit);
    Ok(ForwardCache {
        input: h.to_vec(),
        z1,
        a1,
        z2,
        a2,
        logit,
        score,
    })
}

/// Exact reverse-mode gradient of the BCE loss at one example.
///
/// `dLoss/dlogit = score - label`.
pub fn backward(p: &MlpParams, cache: &ForwardCache, label: u8) -> MlpGrads {
    let dims = p.dims();
    let mut g = MlpGrads::zeros(dims);
    let dlogit = cache.score - f64::from(label);
    backward_logit_weighted(p, cache, dlogit, &mut g);
    g
}

/// Accumulates `weight * dlogit-gradient` into `g`; shared by the loss and
/// logit-penalty paths.
fn backward_logit_weighted(p: &MlpParams, cache: &ForwardCache, weight: f64, g: &mut MlpGrads) {
    axpy(weight, &cache.a2, &mut g.w3);
    g.b3 += weight;
    // dz2 = weight * slope(z2) .* w3
    let dz2: Vector = cache
        .z2
        .iter()
        .zip(&p.w3)
        .map(|(&z, &w)| weight * leaky_relu_slope(z, p.leak_rate) * w)
        .collect();
    for (j, &d) in dz2.iter().enumerate() {
        axpy(d, &cache.a1, g.w2.row_mut(j));
        g.b2[j] += d;
    }
    // da1 = W2^T dz2 ; dz1 = slope(z1) .* da1
    let mut da1 = vec![0.0; cache.a1.len()];
    for (j, &d) in dz2.iter().enumerate() {
        axpy(d, p.w2.row(j), &mut da1);
    }
    for (m, (&z, &d)) in cache.z1.iter().zip(&da1).enumerate() {
        let dz1 = leaky_relu_slope(z, p.leak_rate) * d;
        axpy(dz1, &cache.input, g.w1.row_mut(m));
        g.b1[m] += dz1;
    }
}

/// Backward chain of the logit through the pre-activations:
/// `q2 = dlogit/dz2`, `q1 = dlogit/dz1`.
fn logit_chain(p: &MlpParams, cache: &ForwardCache) -> (Vector, Vector) {
    let q2: Vector = cache
        .z2
        .iter()
        .zip(&p.w3)
        .map(|(&z, &w)| leaky_relu_slope(z, p.leak_rate) * w)
        .collect();
    let mut p1 = vec![0.0; cache.a1.len()];
    for (j, &q) in q2.iter().enumerate() {
        axpy(q, p.w2.row(j), &mut p1);
    }
    let q1: Vector = cache
        .z1
        .iter()
        .zip(&p1)
        .map(|(&z, &v)| leaky_relu_slope(z, p.leak_rate) * v)
        .collect();
    (q1, q2)
}

/// Sigmoid chain factors for the chosen target: the input gradient is
/// `r * dlogit/dh` and the curvature term uses `r' = dr/dlogit`.
fn target_factors(score: f64, target: GradientTarget) -> (f64, f64) {
    match target {
        GradientTarget::Logit => (1.0, 0.0),
        GradientTarget::Score => {
            let sp = score * (1.0 - score);
            (sp, sp * (1.0 - 2.0 * score))
        }
    }
}

/// Gradient of the model output (score by default) with respect to the input.
pub fn input_gradient(p: &MlpParams, h: &[f64], target: GradientTarget) -> Result<Vector> {
    let cache = forward(p, h)?;
    Ok(input_gradient_cached(p, &cache, target))
}

pub fn input_gradient_cached(p: &MlpParams, cache: &ForwardCache, target: GradientTarget) -> Vector {
    let (q1, _) = logit_chain(p, cache);
    let (r, _) = target_factors(cache.score, target);
    let mut u = vec![0.0; cache.input.len()];
    for (m, &q) in q1.iter().enumerate() {
        axpy(r * q, p.w1.row(m), &mut u);
    }
    u
}

/// Gradient, with respect to the parameters, of `grad_h g(h) . v` for a
/// constant vector `v`.
///
/// This is the double-backprop primitive behind every input-gradient penalty:
/// the diversity dot product, its feature-product variant, and the L1/L2
/// gradient-norm baselines all reduce to it with different choices of `v`.
pub fn grad_dot_param_grads(
    p: &MlpParams,
    h: &[f64],
    v: &[f64],
    target: GradientTarget,
) -> Result<MlpGrads> {
    if v.len() != h.len() {
        return Err(Error::ShapeMismatch {
            op: "grad_dot_param_grads",
            left: format!("input length {}", h.len()),
            right: format!("v length {}", v.len()),
        });
    }
    let cache = forward(p, h)?;
    let (q1, q2) = logit_chain(p, &cache);
    // Forward tangent pass along v.
    let tz1 = affine(&p.w1, v, &vec![0.0; q1.len()])?;
    let ta1: Vector = cache
        .z1
        .iter()
        .zip(&tz1)
        .map(|(&z, &t)| leaky_relu_slope(z, p.leak_rate) * t)
        .collect();
    let tz2 = affine(&p.w2, &ta1, &vec![0.0; q2.len()])?;
    let ta2: Vector = cache
        .z2
        .iter()
        .zip(&tz2)
        .map(|(&z, &t)| leaky_relu_slope(z, p.leak_rate) * t)
        .collect();
    let a = dot(&p.w3, &ta2);

    let (r, r_prime) = target_factors(cache.score, target);
    let c = r_prime * a;

    let dims = p.dims();
    let mut g = MlpGrads::zeros(dims);
    for (m, &q) in q1.iter().enumerate() {
        let row = g.w1.row_mut(m);
        axpy(q * r, v, row);
        axpy(q * c, &cache.input, row);
        g.b1[m] = c * q;
    }
    for (j, &q) in q2.iter().enumerate() {
        let row = g.w2.row_mut(j);
        axpy(q * r, &ta1, row);
        axpy(q * c, &cache.a1, row);
        g.b2[j] = c * q;
    }
    axpy(r, &ta2, &mut g.w3);
    axpy(c, &cache.a2, &mut g.w3);
    g.b3 = c;
    Ok(g)
}

/// Gradients of the pairwise alignment `delta(h) = grad_h g_i(h) . grad_h
/// g_j(h)` with respect to both models' parameters.
///
/// `delta` is bilinear in the two input gradients, so each side is computed
/// with the other model's gradient held constant — exactly the derivative of
/// the symmetric `delta` itself.
pub fn penalty_param_grads(
    p_i: &MlpParams,
    p_j: &MlpParams,
    h: &[f64],
    target: GradientTarget,
) -> Result<(MlpGrads, MlpGrads)> {
    if p_i.dims().input != p_j.dims().input {
        return Err(Error::ShapeMismatch {
            op: "penalty_param_grads",
            left: format!("model i input {}", p_i.dims().input),
            right: format!("model j input {}", p_j.dims().input),
        });
    }
    let u_i = input_gradient(p_i, h, target)?;
    let u_j = input_gradient(p_j, h, target)?;
    let g_i = grad_dot_param_grads(p_i, h, &u_j, target)?;
    let g_j = grad_dot_param_grads(p_j, h, &u_i, target)?;
    Ok((g_i, g_j))
}

/// First-order prediction of the score at `h` from the expansion point
/// `h_tr`. Diagnostic only.
pub fn taylor_extrapolate(p: &MlpParams, h_tr: &[f64], h: &[f64]) -> Result<f64> {
    if h.len() != h_tr.len() {
        return Err(Error::ShapeMismatch {
            op: "taylor_extrapolate",
            left: format!("h_tr length {}", h_tr.len()),
            right: format!("h length {}", h.len()),
        });
    }
    let cache = forward(p, h_tr)?;
    let u = input_gradient_cached(p, &cache, GradientTarget::Score);
    let mut out = cache.score;
    for ((&a, &b), &g) in h.iter().zip(h_tr).zip(&u) {
        out += (a - b) * g;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: MlpGrads,
    pub v: MlpGrads,
    pub t: u64,
}

impl AdamState {
    pub fn new(dims: MlpDims) -> AdamState {
        AdamState {
            m: MlpGrads::zeros(dims),
            v: MlpGrads::zeros(dims),
            t: 0,
        }
    }
}

fn adam_update_tensor(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..p.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
}

/// One Adam update with bias-corrected moments
/// (`beta1 = 0.9`, `beta2 = 0.999`, `epsilon = 1e-8`).
///
/// Non-finite gradient entries abort with the offending tensor's name.
pub fn adam_step(p: &mut MlpParams, g: &MlpGrads, s: &mut AdamState, lr: f64) -> Result<()> {
    for (name, data) in g.tensors() {
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient {name}"),
                context: "adam_step".into(),
            });
        }
    }
    if !g.b3.is_finite() {
        return Err(Error::NonFinite {
            what: "gradient b3".into(),
            context: "adam_step".into(),
        });
    }
    s.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(s.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(s.t as i32);
    adam_update_tensor(
        p.w1.data_mut(),
        g.w1.data(),
        s.m.w1.data_mut(),
        s.v.w1.data_mut(),
        lr,
        bc1,
        bc2,
    );
    adam_update_tensor(&mut p.b1, &g.b1, &mut s.m.b1, &mut s.v.b1, lr, bc1, bc2);
    adam_update_tensor(
        p.w2.data_mut(),
        g.w2.data(),
        s.m.w2.data_mut(),
        s.v.w2.data_mut(),
        lr,
        bc1,
        bc2,
    );
    adam_update_tensor(&mut p.b2, &g.b2, &mut s.m.b2, &mut s.v.b2, lr, bc1, bc2);
    adam_update_tensor(&mut p.w3, &g.w3, &mut s.m.w3, &mut s.v.w3, lr, bc1, bc2);
    let mut b3 = [p.b3];
    let gb3 = [g.b3];
    let mut mb3 = [s.m.b3];
    let mut vb3 = [s.v.b3];
    adam_update_tensor(&mut b3, &gb3, &mut mb3, &mut vb3, lr, bc1, bc2);
    p.b3 = b3[0];
    s.m.b3 = mb3[0];
    s.v.b3 = vb3[0];
    Ok(())
}

// ---------------------------------------------------------------------------
// Batched passes (used by the trainer and the collection penalty)
// ---------------------------------------------------------------------------

/// Forward intermediates for a whole minibatch, one example per row.
#[derive(Debug, Clone)]
pub struct BatchCache {
    pub x: Matrix,
    pub z1: Matrix,
    pub a1: Matrix,
    pub z2: Matrix,
    pub a2: Matrix,
    pub logits: Vector,
    pub scores: Vector,
}

fn leaky_matrix(m: &Matrix, rate: f64) -> Matrix {
    let data = m
        .data()
        .iter()
        .map(|&x| if x >= 0.0 { x } else { rate * x })
        .collect();
    Matrix::from_vec(m.rows(), m.cols(), data).expect("same shape")
}

/// Applies the slope mask of `z` to `t`, elementwise.
fn mask_by_slope(z: &Matrix, t: &Matrix, rate: f64) -> Matrix {
    debug_assert_eq!(z.shape(), t.shape());
    let data = z
        .data()
        .iter()
        .zip(t.data())
        .map(|(&z, &t)| leaky_relu_slope(z, rate) * t)
        .collect();
    Matrix::from_vec(z.rows(), z.cols(), data).expect("same shape")
}

pub fn forward_batch(p: &MlpParams, x: &Matrix) -> Result<BatchCache> {
    if x.cols() != p.dims().input {
        return Err(Error::ShapeMismatch {
            op: "forward_batch",
            left: format!("batch {}x{}", x.rows(), x.cols()),
            right: format!("model input {}", p.dims().input),
        });
    }
    let mut z1 = x.matmul_nt(&p.w1)?;
    z1.add_row_vector(&p.b1);
    let a1 = leaky_matrix(&z1, p.leak_rate);
    let mut z2 = a1.matmul_nt(&p.w2)?;
    z2.add_row_vector(&p.b2);
    let a2 = leaky_matrix(&z2, p.leak_rate);
    let logits: Vector = (0..x.rows())
        .map(|b| dot(a2.row(b), &p.w3) + p.b3)
        .collect();
    let scores: Vector = logits.iter().map(|&l| sigmoid(l)).collect();
    Ok(BatchCache {
        x: x.clone(),
        z1,
        a1,
        z2,
        a2,
        logits,
        scores,
    })
}

/// Mean BCE loss over the batch and its exact parameter gradient.
pub fn backward_batch(p: &MlpParams, c: &BatchCache, labels: &[u8]) -> (f64, MlpGrads) {
    debug_assert_eq!(c.x.rows(), labels.len());
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let dlogits: Vector = c
        .logits
        .iter()
        .zip(labels)
        .map(|(&logit, &y)| {
            let (score, l) = sigmoid_bce(logit, y);
            loss += l;
            (score - f64::from(y)) / n
        })
        .collect();
    let g = logit_weighted_grads(p, c, &dlogits);
    (loss / n, g)
}

/// Parameter gradient of `sum_b weights[b] * logit_b`. Shared by the BCE
/// backward pass and the logit-norm penalty.
pub fn logit_weighted_grads(p: &MlpParams, c: &BatchCache, weights: &[f64]) -> MlpGrads {
    let dims = p.dims();
    let mut g = MlpGrads::zeros(dims);
    g.w3 = c.a2.tdot(weights).expect("batch-sized");
    g.b3 = weights.iter().sum();
    // dZ2[b] = weights[b] * slope(z2[b]) .* w3
    let mut dz2 = Matrix::zeros(c.z2.rows(), c.z2.cols());
    for b in 0..c.z2.rows() {
        let w = weights[b];
        let src = c.z2.row(b);
        for (j, d) in dz2.row_mut(b).iter_mut().enumerate() {
            *d = w * leaky_relu_slope(src[j], p.leak_rate) * p.w3[j];
        }
    }
    g.w2 = dz2.matmul_tn(&c.a1).expect("shapes fixed");
    g.b2 = column_sums(&dz2);
    let da1 = dz2.matmul_nn(&p.w2).expect("shapes fixed");
    let dz1 = mask_by_slope(&c.z1, &da1, p.leak_rate);
    g.w1 = dz1.matmul_tn(&c.x).expect("shapes fixed");
    g.b1 = column_sums(&dz1);
    g
}

fn column_sums(m: &Matrix) -> Vector {
    let mut out = vec![0.0; m.cols()];
    for b in 0..m.rows() {
        axpy(1.0, m.row(b), &mut out);
    }
    out
}

/// Backward chain of the logit for every row: `(Q1, Q2)`.
pub fn logit_chain_batch(p: &MlpParams, c: &BatchCache) -> (Matrix, Matrix) {
    let mut q2 = Matrix::zeros(c.z2.rows(), c.z2.cols());
    for b in 0..c.z2.rows() {
        let src = c.z2.row(b);
        for (j, d) in q2.row_mut(b).iter_mut().enumerate() {
            *d = leaky_relu_slope(src[j], p.leak_rate) * p.w3[j];
        }
    }
    let p1 = q2.matmul_nn(&p.w2).expect("shapes fixed");
    let q1 = mask_by_slope(&c.z1, &p1, p.leak_rate);
    (q1, q2)
}

/// Per-example input gradients, one per row.
pub fn input_gradient_batch(
    p: &MlpParams,
    c: &BatchCache,
    chain: &(Matrix, Matrix),
    target: GradientTarget,
) -> Matrix {
    let mut u = chain.0.matmul_nn(&p.w1).expect("shapes fixed");
    if target == GradientTarget::Score {
        for b in 0..u.rows() {
            let (r, _) = target_factors(c.scores[b], target);
            for x in u.row_mut(b) {
                *x *= r;
            }
        }
    }
    u
}

/// Batched form of [`grad_dot_param_grads`]: the gradient of
/// `sum_b grad_h g(x_b) . v_b` with every `v_b` held constant.
///
/// Scale factors (penalty weight, batch averaging) should be baked into the
/// rows of `v` by the caller; the result is linear in `v`.
pub fn grad_dot_param_grads_batch(
    p: &MlpParams,
    c: &BatchCache,
    chain: &(Matrix, Matrix),
    v: &Matrix,
    target: GradientTarget,
) -> Result<MlpGrads> {
    if v.shape() != c.x.shape() {
        return Err(Error::ShapeMismatch {
            op: "grad_dot_param_grads_batch",
            left: format!("batch {}x{}", c.x.rows(), c.x.cols()),
            right: format!("v {}x{}", v.rows(), v.cols()),
        });
    }
    let (q1, q2) = chain;
    let batch = c.x.rows();
    // Forward tangent pass along each row of v.
    let tz1 = v.matmul_nt(&p.w1)?;
    let ta1 = mask_by_slope(&c.z1, &tz1, p.leak_rate);
    let tz2 = ta1.matmul_nt(&p.w2)?;
    let ta2 = mask_by_slope(&c.z2, &tz2, p.leak_rate);

    let dims = p.dims();
    let mut g = MlpGrads::zeros(dims);
    let mut r_vec = vec![0.0; batch];
    let mut c_vec = vec![0.0; batch];
    for b in 0..batch {
        let (r, r_prime) = target_factors(c.scores[b], target);
        let a = dot(ta2.row(b), &p.w3);
        r_vec[b] = r;
        c_vec[b] = r_prime * a;
    }

    // dW1 = Q1^T N with N[b] = r_b v[b] + c_b x[b]; db1 = Q1^T c.
    let mut n = Matrix::zeros(batch, dims.input);
    for b in 0..batch {
        let dst = n.row_mut(b);
        axpy(r_vec[b], v.row(b), dst);
        axpy(c_vec[b], c.x.row(b), dst);
    }
    g.w1 = q1.matmul_tn(&n)?;
    g.b1 = q1.tdot(&c_vec)?;

    // dW2 = Q2^T M with M[b] = r_b ta1[b] + c_b a1[b]; db2 = Q2^T c.
    let mut m = Matrix::zeros(batch, dims.hidden1);
    for b in 0..batch {
        let dst = m.row_mut(b);
        axpy(r_vec[b], ta1.row(b), dst);
        axpy(c_vec[b], c.a1.row(b), dst);
    }
    g.w2 = q2.matmul_tn(&m)?;
    g.b2 = q2.tdot(&c_vec)?;

    for b in 0..batch {
        axpy(r_vec[b], ta2.row(b), &mut g.w3);
        axpy(c_vec[b], c.a2.row(b), &mut g.w3);
    }
    g.b3 = c_vec.iter().sum();
    Ok(g)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

const MODEL_MAGIC: [u8; 4] = *b"DVGM";
const MODEL_VERSION: u8 = 1;

/// Serializes to the versioned little-endian layout:
/// magic `DVGM`, version byte, dims (input, hidden1, hidden2 as u32), leak
/// rate, then W1, b1, W2, b2, W3, b3 as f64. Round-trips bit-exactly.
pub fn write_params(p: &MlpParams) -> Vec<u8> {
    let dims = p.dims();
    let mut out = Vec::with_capacity(25 + 8 * dims.parameter_count());
    out.extend_from_slice(&MODEL_MAGIC);
    out.push(MODEL_VERSION);
    out.extend_from_slice(&(dims.input as u32).to_le_bytes());
    out.extend_from_slice(&(dims.hidden1 as u32).to_le_bytes());
    out.extend_from_slice(&(dims.hidden2 as u32).to_le_bytes());
    out.extend_from_slice(&p.leak_rate.to_le_bytes());
    let mut push_all = |vals: &[f64]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    push_all(p.w1.data());
    push_all(&p.b1);
    push_all(p.w2.data());
    push_all(&p.b2);
    push_all(&p.w3);
    push_all(&[p.b3]);
    out
}

pub fn read_params(bytes: &[u8]) -> Result<MlpParams> {
    if bytes.len() < 25 {
        return Err(Error::Truncated {
            what: "model",
            needed: 25,
            have: bytes.len(),
        });
    }
    if bytes[0..4] != MODEL_MAGIC {
        return Err(Error::BadMagic {
            found: u32::from_be_bytes(bytes[0..4].try_into().unwrap()),
            expected: u32::from_be_bytes(MODEL_MAGIC),
        });
    }
    if bytes[4] != MODEL_VERSION {
        return Err(Error::Version {
            what: "model",
            found: bytes[4],
            supported: MODEL_VERSION,
        });
    }
    let input = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let h1 = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let h2 = u32::from_le_bytes(bytes[13..17].try_into().unwrap()) as usize;
    let leak_rate = f64::from_le_bytes(bytes[17..25].try_into().unwrap());
    let dims = MlpDims::new(input, h1, h2);
    let needed = 25 + 8 * dims.parameter_count();
    if bytes.len() != needed {
        return Err(Error::Truncated {
            what: "model",
            needed,
            have: bytes.len(),
        });
    }
    let mut off = 25;
    let mut take = |count: usize| -> Vector {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            off += 8;
        }
        out
    };
    let w1 = Matrix::from_vec(h1, input, take(h1 * input))?;
    let b1 = take(h1);
    let w2 = Matrix::from_vec(h2, h1, take(h2 * h1))?;
    let b2 = take(h2);
    let w3 = take(h2);
    let b3 = take(1)[0];
    Ok(MlpParams {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
        leak_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;

    fn stream(seed: u64, id: u64) -> RngStream {
        RngStream::new(seed, id)
    }

    fn zero_params(dims: MlpDims) -> MlpParams {
        MlpParams {
            w1: Matrix::zeros(dims.hidden1, dims.input),
            b1: vec![0.0; dims.hidden1],
            w2: Matrix::zeros(dims.hidden2, dims.hidden1),
            b2: vec![0.0; dims.hidden2],
            w3: vec![0.0; dims.hidden2],
            b3: 0.0,
            leak_rate: 0.01,
        }
    }

    /// Independent straight-line re-evaluation of the logit with bare loops.
    fn naive_logit(p: &MlpParams, h: &[f64]) -> f64 {
        let act = |v: f64| if v >= 0.0 { v } else { p.leak_rate * v };
        let mut a1 = vec![0.0; p.b1.len()];
        for m in 0..a1.len() {
            let mut z = p.b1[m];
            for (d, &x) in h.iter().enumerate() {
                z += p.w1.get(m, d) * x;
            }
            a1[m] = act(z);
        }
        let mut a2 = vec![0.0; p.b2.len()];
        for j in 0..a2.len() {
            let mut z = p.b2[j];
            for (m, &x) in a1.iter().enumerate() {
                z += p.w2.get(j, m) * x;
            }
            a2[j] = act(z);
        }
        let mut logit = p.b3;
        for (j, &x) in a2.iter().enumerate() {
            logit += p.w3[j] * x;
        }
        logit
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let dims = MlpDims::new(256, 16, 16);
        let a = init_params(dims, 0.01, &mut stream(7, 0)).unwrap();
        let b = init_params(dims, 0.01, &mut stream(7, 0)).unwrap();
        assert_eq!(write_params(&a), write_params(&b));
        let small = init_params(MlpDims::new(2, 16, 16), 0.01, &mut stream(7, 0)).unwrap();
        assert_eq!(small.w1.shape(), (16, 2));
        assert!(small.b1.iter().all(|&v| v == 0.0));
        // fan-in bound
        let s = (6.0f64 / 2.0).sqrt();
        assert!(small.w1.data().iter().all(|&v| v.abs() <= s));
    }

    #[test]
    fn init_rejects_zero_dims() {
        assert!(init_params(MlpDims::new(0, 16, 16), 0.01, &mut stream(1, 0)).is_err());
        assert!(init_params(MlpDims::new(4, 0, 16), 0.01, &mut stream(1, 0)).is_err());
    }

    #[test]
    fn distinct_streams_give_distinct_params() {
        let dims = MlpDims::new(256, 16, 16);
        let a = init_params(dims, 0.01, &mut stream(7, 0)).unwrap();
        let b = init_params(dims, 0.01, &mut stream(7, 1)).unwrap();
        let (mut differ, mut total) = (0usize, 0usize);
        for (x, y) in a.w1.data().iter().zip(b.w1.data()) {
            total += 1;
            differ += usize::from(x != y);
        }
        for (x, y) in a.w2.data().iter().zip(b.w2.data()) {
            total += 1;
            differ += usize::from(x != y);
        }
        assert!(differ as f64 >= 0.99 * total as f64, "{differ}/{total}");
    }

    #[test]
    fn forward_zero_network() {
        let p = zero_params(MlpDims::new(4, 3, 2));
        let c = forward(&p, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(c.logit, 0.0);
        assert_eq!(c.score, 0.5);
    }

    #[test]
    fn forward_bias_only_network() {
        let mut p = zero_params(MlpDims::new(4, 3, 2));
        p.b3 = 3.0;
        let c = forward(&p, &[0.2, 0.4, 0.6, 0.8]).unwrap();
        // 128-bit reference: sigmoid(3) = 0.9525741268224332191
        assert!((c.score - 0.952574126822433219).abs() < 1e-15);
    }

    #[test]
    fn forward_matches_straight_line_reimplementation() {
        let dims = MlpDims::new(7, 5, 4);
        let mut rng = stream(3, 0);
        for _ in 0..20 {
            let p = init_params(dims, 0.01, &mut rng).unwrap();
            let h: Vec<f64> = (0..7).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let c = forward(&p, &h).unwrap();
            let reference = naive_logit(&p, &h);
            assert!((c.logit - reference).abs() <= 1e-12 * reference.abs().max(1.0));
        }
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let dims = MlpDims::new(6, 4, 3);
        let p = init_params(dims, 0.01, &mut stream(11, 0)).unwrap();
        let h: Vec<f64> = (0..6).map(|i| (i as f64 - 3.0) / 2.0).collect();
        let a = forward(&p, &h).unwrap();
        let b = forward(&p, &h).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_rejects_dim_mismatch() {
        let p = zero_params(MlpDims::new(4, 3, 2));
        assert!(forward(&p, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn backward_dlogit_identity() {
        let p = zero_params(MlpDims::new(3, 2, 2));
        let c = forward(&p, &[0.1, 0.2, 0.3]).unwrap();
        let g = backward(&p, &c, 1);
        // dLoss/dlogit = score - label = -0.5, surfaced directly in b3.
        assert_eq!(g.b3, -0.5);
    }

    #[test]
    fn backward_zero_input_structure() {
        let dims = MlpDims::new(4, 3, 2);
        let p = init_params(dims, 0.01, &mut stream(5, 0)).unwrap();
        let c = forward(&p, &[0.0; 4]).unwrap();
        let g = backward(&p, &c, 0);
        assert!(g.w1.data().iter().all(|&v| v == 0.0));
        assert!(g.b1.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn bce_gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = stream(seed, 0);
            let dims = MlpDims::new(6, 5, 4);
            let (p, h) = gradcheck::draw_well_conditioned(dims, 0.01, &mut rng).unwrap();
            let err = gradcheck::check_bce(&p, &h, (seed % 2) as u8).unwrap();
            assert!(err <= 1e-6, "seed {seed}: max rel err {err}");
        }
    }

    #[test]
    fn input_gradient_linear_network_closed_form() {
        // Identity-equivalent hidden layers on positive activations:
        // logit = w3 . h + b3, so grad_h score = score(1-score) w3.
        let dims = MlpDims::new(3, 3, 3);
        let mut p = zero_params(dims);
        for i in 0..3 {
            p.w1.set(i, i, 1.0);
            p.w2.set(i, i, 1.0);
        }
        p.w3 = vec![0.7, -0.3, 0.2];
        p.b3 = 0.4;
        let h = [0.5, 0.8, 0.1]; // positive pre-activations except w3 sign
        // keep hidden pre-activations positive: h >= 0 does it for z1, and
        // z2 = a1 = h >= 0.
        let c = forward(&p, &h).unwrap();
        let u = input_gradient(&p, &h, GradientTarget::Score).unwrap();
        let sp = c.score * (1.0 - c.score);
        for (ui, wi) in u.iter().zip(&p.w3) {
            assert!((ui - sp * wi).abs() < 1e-14);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        for seed in 0..10 {
            let mut rng = stream(100 + seed, 0);
            let dims = MlpDims::new(6, 5, 4);
            let (p, h) = gradcheck::draw_well_conditioned(dims, 0.01, &mut rng).unwrap();
            for target in [GradientTarget::Score, GradientTarget::Logit] {
                let err = gradcheck::check_input_gradient(&p, &h, target).unwrap();
                assert!(err <= 1e-6, "seed {seed}: max rel err {err}");
            }
        }
    }

    #[test]
    fn input_gradient_zero_first_layer() {
        let dims = MlpDims::new(4, 3, 2);
        let mut p = init_params(dims, 0.01, &mut stream(9, 0)).unwrap();
        p.w1 = Matrix::zeros(3, 4);
        let u = input_gradient(&p, &[0.3, -0.4, 0.5, 0.9], GradientTarget::Score).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn penalty_grads_identical_models_halve_norm_gradient() {
        let dims = MlpDims::new(5, 4, 3);
        let mut rng = stream(21, 0);
        let p = init_params(dims, 0.01, &mut rng).unwrap();
        let h: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (gi, gj) = penalty_param_grads(&p, &p, &h, GradientTarget::Score).unwrap();
        assert_eq!(gi, gj);
        // grad of ||grad_h g||^2 via the same primitive with v = 2u.
        let u = input_gradient(&p, &h, GradientTarget::Score).unwrap();
        let v2: Vec<f64> = u.iter().map(|&x| 2.0 * x).collect();
        let gnorm = grad_dot_param_grads(&p, &h, &v2, GradientTarget::Score).unwrap();
        for (a, b) in gi.flatten().iter().zip(gnorm.flatten()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-9), "{a} vs {b}");
        }
    }

    #[test]
    fn penalty_grads_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = stream(200 + seed, 0);
            let dims = MlpDims::new(5, 4, 3);
            let (p_i, h) = gradcheck::draw_well_conditioned(dims, 0.01, &mut rng).unwrap();
            let p_j = init_params(dims, 0.01, &mut rng).unwrap();
            for target in [GradientTarget::Score, GradientTarget::Logit] {
                let err = gradcheck::check_penalty_pair(&p_i, &p_j, &h, target).unwrap();
                assert!(err <= 1e-4, "seed {seed}: max rel err {err}");
            }
        }
    }

    #[test]
    fn penalty_grads_zero_partner_gives_zero() {
        let dims = MlpDims::new(4, 3, 2);
        let mut rng = stream(33, 0);
        let p_i = init_params(dims, 0.01, &mut rng).unwrap();
        let mut p_j = init_params(dims, 0.01, &mut rng).unwrap();
        p_j.w1 = Matrix::zeros(3, 4);
        let h = [0.2, -0.6, 0.9, 0.4];
        let (gi, _) = penalty_param_grads(&p_i, &p_j, &h, GradientTarget::Score).unwrap();
        assert!(gi.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let dims = MlpDims::new(3, 2, 2);
        let mut p = init_params(dims, 0.01, &mut stream(1, 0)).unwrap();
        let before = write_params(&p);
        let mut s = AdamState::new(dims);
        adam_step(&mut p, &MlpGrads::zeros(dims), &mut s, 0.001).unwrap();
        assert_eq!(write_params(&p), before);
    }

    #[test]
    fn adam_first_step_has_lr_magnitude() {
        let dims = MlpDims::new(2, 2, 2);
        let mut p = zero_params(dims);
        let mut g = MlpGrads::zeros(dims);
        g.w1.set(0, 0, 0.5);
        g.w1.set(1, 1, -3.0);
        let mut s = AdamState::new(dims);
        let lr = 0.01;
        adam_step(&mut p, &g, &mut s, lr).unwrap();
        // First step: m_hat = g, v_hat = g^2 -> step = -lr g / (|g| + eps).
        assert!((p.w1.get(0, 0) + lr).abs() < 1e-6 * lr);
        assert!((p.w1.get(1, 1) - lr).abs() < 1e-6 * lr);
        assert_eq!(p.w1.get(0, 1), 0.0);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let dims = MlpDims::new(2, 2, 2);
        let mut p = zero_params(dims);
        let mut g = MlpGrads::zeros(dims);
        g.w2.set(1, 0, f64::NAN);
        let mut s = AdamState::new(dims);
        let err = adam_step(&mut p, &g, &mut s, 0.01).unwrap_err();
        assert!(err.to_string().contains("W2"), "{err}");
    }

    #[test]
    fn adam_descends_a_convex_quadratic() {
        // loss = (w - 3)^2 + (b + 2)^2 on two embedded scalars.
        let dims = MlpDims::new(1, 1, 1);
        let mut p = zero_params(dims);
        let mut s = AdamState::new(dims);
        let loss_of = |p: &MlpParams| {
            let w = p.w1.get(0, 0);
            let b = p.b1[0];
            (w - 3.0).powi(2) + (b + 2.0).powi(2)
        };
        let mut losses = Vec::new();
        for _ in 0..100 {
            losses.push(loss_of(&p));
            let mut g = MlpGrads::zeros(dims);
            g.w1.set(0, 0, 2.0 * (p.w1.get(0, 0) - 3.0));
            g.b1[0] = 2.0 * (p.b1[0] + 2.0);
            adam_step(&mut p, &g, &mut s, 0.01).unwrap();
        }
        losses.push(loss_of(&p));
        for w in losses.windows(2).skip(5) {
            assert!(w[1] < w[0], "loss must fall monotonically after step 5");
        }
        assert!(losses.last().unwrap() < &losses[5]);
    }

    /// Weights scaled small with positive bias offsets keep every
    /// pre-activation well inside one activation region.
    fn margin_network(seed: u64) -> (MlpParams, Vec<f64>) {
        let dims = MlpDims::new(3, 4, 4);
        let mut rng = stream(seed, 0);
        let mut p = init_params(dims, 0.01, &mut rng).unwrap();
        for v in p.w1.data_mut() {
            *v *= 0.2;
        }
        for v in p.w2.data_mut() {
            *v *= 0.2;
        }
        for v in &mut p.b1 {
            *v = 1.0;
        }
        for v in &mut p.b2 {
            *v = 1.0;
        }
        let h: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        (p, h)
    }

    #[test]
    fn logit_is_affine_within_activation_region() {
        let (p, h) = margin_network(17);
        let c0 = forward(&p, &h).unwrap();
        let u_logit = input_gradient(&p, &h, GradientTarget::Logit).unwrap();
        let mut rng = stream(18, 0);
        for _ in 0..10 {
            let delta: Vec<f64> = (0..3).map(|_| rng.uniform(-0.05, 0.05)).collect();
            let h2: Vec<f64> = h.iter().zip(&delta).map(|(a, d)| a + d).collect();
            let c2 = forward(&p, &h2).unwrap();
            assert_eq!(
                c0.z1.iter().map(|z| *z >= 0.0).collect::<Vec<_>>(),
                c2.z1.iter().map(|z| *z >= 0.0).collect::<Vec<_>>(),
                "activation region changed; test construction broken"
            );
            let predicted: f64 = c0.logit + dot(&delta, &u_logit);
            assert!((c2.logit - predicted).abs() <= 1e-12 * c2.logit.abs().max(1.0));
        }
    }

    #[test]
    fn taylor_zero_displacement_is_exact() {
        let (p, h) = margin_network(19);
        let t = taylor_extrapolate(&p, &h, &h).unwrap();
        assert_eq!(t, forward(&p, &h).unwrap().score);
    }

    #[test]
    fn taylor_error_shrinks_quadratically() {
        let (mut p, h) = margin_network(23);
        // Pin the logit at 1.0 so the sigmoid curvature term dominates.
        let c = forward(&p, &h).unwrap();
        p.b3 = 1.0 - c.logit;
        let u = input_gradient(&p, &h, GradientTarget::Logit).unwrap();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 1e-3, "degenerate direction");
        let dir: Vec<f64> = u.iter().map(|v| v / norm).collect();
        let err_at = |d: f64| {
            let h2: Vec<f64> = h.iter().zip(&dir).map(|(a, v)| a + d * v).collect();
            let exact = forward(&p, &h2).unwrap().score;
            let taylor = taylor_extrapolate(&p, &h, &h2).unwrap();
            (exact - taylor).abs()
        };
        let e1 = err_at(0.04);
        let e2 = err_at(0.02);
        let ratio = e1 / e2;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}, e1 {e1}, e2 {e2}");
    }

    #[test]
    fn taylor_zero_network_is_half_everywhere() {
        let p = zero_params(MlpDims::new(3, 2, 2));
        let t = taylor_extrapolate(&p, &[0.1, 0.2, 0.3], &[5.0, -7.0, 2.0]).unwrap();
        assert_eq!(t, 0.5);
    }

    #[test]
    fn serialization_roundtrip_is_bit_exact() {
        let dims = MlpDims::new(9, 5, 4);
        let p = init_params(dims, 0.01, &mut stream(77, 3)).unwrap();
        let bytes = write_params(&p);
        let q = read_params(&bytes).unwrap();
        assert_eq!(write_params(&q), bytes);
        assert_eq!(p, q);
    }

    #[test]
    fn serialization_rejects_corruption() {
        let p = init_params(MlpDims::new(3, 2, 2), 0.01, &mut stream(1, 0)).unwrap();
        let bytes = write_params(&p);
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_params(&bad_magic), Err(Error::BadMagic { .. })));
        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(read_params(&bad_version), Err(Error::Version { .. })));
        assert!(matches!(
            read_params(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn batch_passes_match_single_example_passes() {
        let dims = MlpDims::new(6, 5, 4);
        let mut rng = stream(55, 0);
        let p = init_params(dims, 0.01, &mut rng).unwrap();
        let rows = 5;
        let mut x = Matrix::zeros(rows, 6);
        let mut labels = Vec::new();
        for r in 0..rows {
            for d in 0..6 {
                x.set(r, d, rng.uniform(-1.0, 1.0));
            }
            labels.push((r % 2) as u8);
        }
        let cache = forward_batch(&p, &x).unwrap();
        let chain = logit_chain_batch(&p, &cache);
        let u = input_gradient_batch(&p, &cache, &chain, GradientTarget::Score);
        let (loss, grads) = backward_batch(&p, &cache, &labels);

        let mut want_loss = 0.0;
        let mut want_grads = MlpGrads::zeros(dims);
        for r in 0..rows {
            let c = forward(&p, x.row(r)).unwrap();
            assert_eq!(c.logit, cache.logits[r]);
            let ur = input_gradient_cached(&p, &c, GradientTarget::Score);
            for (a, b) in ur.iter().zip(u.row(r)) {
                assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-12));
            }
            let (_, l) = crate::activations::sigmoid_bce(c.logit, labels[r]);
            want_loss += l;
            let g = backward(&p, &c, labels[r]);
            want_grads.add_assign(&g);
        }
        want_loss /= rows as f64;
        want_grads.scale(1.0 / rows as f64);
        assert!((loss - want_loss).abs() <= 1e-12 * want_loss.max(1e-12));
        for (a, b) in grads.flatten().iter().zip(want_grads.flatten()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-12), "{a} vs {b}");
        }
    }

    #[test]
    fn batched_grad_dot_matches_single_example_primitive() {
        let dims = MlpDims::new(5, 4, 3);
        let mut rng = stream(66, 0);
        let p = init_params(dims, 0.01, &mut rng).unwrap();
        let rows = 4;
        let mut x = Matrix::zeros(rows, 5);
        let mut v = Matrix::zeros(rows, 5);
        for r in 0..rows {
            for d in 0..5 {
                x.set(r, d, rng.uniform(-1.0, 1.0));
                v.set(r, d, rng.uniform(-1.0, 1.0));
            }
        }
        for target in [GradientTarget::Score, GradientTarget::Logit] {
            let cache = forward_batch(&p, &x).unwrap();
            let chain = logit_chain_batch(&p, &cache);
            let got = grad_dot_param_grads_batch(&p, &cache, &chain, &v, target).unwrap();
            let mut want = MlpGrads::zeros(dims);
            for r in 0..rows {
                let g = grad_dot_param_grads(&p, x.row(r), v.row(r), target).unwrap();
                want.add_assign(&g);
            }
            for (a, b) in got.flatten().iter().zip(want.flatten()) {
                assert!((a - b).abs() <= 1e-11 * b.abs().max(1e-10), "{a} vs {b}");
            }
        }
    }
}
