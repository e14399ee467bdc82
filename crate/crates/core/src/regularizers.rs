//! The pairwise diversity penalty, its feature-gradient-product variant, the
//! full collection loss assembly, and the baseline gradient penalties.
//!
//! Pair summation is over unordered pairs `(i, j)`, `i < j`. The alignment
//! term is symmetric, so this halves the work of an ordered `i != j` sum;
//! the factor 2 is absorbed into `lambda` (double `lambda` to compare with
//! an ordered-pair implementation). Penalties are averaged over the batch
//! before multiplying by `lambda`, so `lambda` is batch-size-independent.

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix, Vector};
use crate::mlp::{
    self, BatchCache, GradientTarget, MlpGrads, MlpParams,
};
use rayon::prelude::*;

/// Elementwise rectifier applied to gradient coordinates before the dot
/// product. Squaring is deliberately not offered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rectifier {
    #[default]
    None,
    Abs,
    Relu,
}

impl Rectifier {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Rectifier::None => x,
            Rectifier::Abs => x.abs(),
            Rectifier::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
        }
    }

    /// Subgradient mask; `0` at the kink for `Abs` and `Relu`.
    pub fn slope(self, x: f64) -> f64 {
        match self {
            Rectifier::None => 1.0,
            Rectifier::Abs => sign(x),
            Rectifier::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Which penalty a training run applies. The names double as the canonical
/// config-file strings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyKind {
    /// Pairwise dot product of input gradients.
    DiversityDot,
    /// Pairwise dot product of feature-gradient products.
    DiversityFgpDot,
    /// L1 norm of the input gradient.
    L1Grad,
    /// L1 norm of the feature-gradient product.
    L1Fgp,
    /// Squared L2 norm of the input gradient (Jacobian regularization).
    L2sqGrad,
    /// Squared L2 norm of the positive part of the input gradient.
    L2sqReluGrad,
    /// Squared L2 norm of the feature-gradient product.
    L2sqFgp,
    /// Squared L2 norm of the logits (spectral decoupling).
    L2sqLogits,
    /// Dropout on input features; applied in the forward pass, so it
    /// contributes no penalty term of its own.
    InputDropout(f64),
}

impl PenaltyKind {
    pub fn is_diversity(self) -> bool {
        matches!(self, PenaltyKind::DiversityDot | PenaltyKind::DiversityFgpDot)
    }

    pub fn canonical_name(self) -> &'static str {
        match self {
            PenaltyKind::DiversityDot => "diversity_dot",
            PenaltyKind::DiversityFgpDot => "diversity_fgp_dot",
            PenaltyKind::L1Grad => "l1_grad",
            PenaltyKind::L1Fgp => "l1_fgp",
            PenaltyKind::L2sqGrad => "l2sq_grad",
            PenaltyKind::L2sqReluGrad => "l2sq_relu_grad",
            PenaltyKind::L2sqFgp => "l2sq_fgp",
            PenaltyKind::L2sqLogits => "l2sq_logits",
            PenaltyKind::InputDropout(_) => "input_dropout",
        }
    }

    /// Parses a canonical config string. `input_dropout` takes its rate from
    /// a separate config key, so it parses with the default rate 0.5 here.
    pub fn parse(s: &str) -> Option<PenaltyKind> {
        Some(match s {
            "diversity_dot" => PenaltyKind::DiversityDot,
            "diversity_fgp_dot" => PenaltyKind::DiversityFgpDot,
            "l1_grad" => PenaltyKind::L1Grad,
            "l1_fgp" => PenaltyKind::L1Fgp,
            "l2sq_grad" => PenaltyKind::L2sqGrad,
            "l2sq_relu_grad" => PenaltyKind::L2sqReluGrad,
            "l2sq_fgp" => PenaltyKind::L2sqFgp,
            "l2sq_logits" => PenaltyKind::L2sqLogits,
            "input_dropout" => PenaltyKind::InputDropout(0.5),
            _ => return None,
        })
    }
}

/// Configuration of the diversity term.
#[derive(Debug, Clone, Copy)]
pub struct DiversityConfig {
    /// Regularizer strength; must be finite and nonnegative.
    pub lambda: f64,
    /// Differentiate the score (default) or the logit.
    pub gradient_target: GradientTarget,
    /// Rectification of gradient coordinates before the dot product.
    pub rectifier: Rectifier,
    /// Compare feature-gradient products instead of bare gradients. The
    /// documented default for precomputed-feature datasets; raw-pixel
    /// collages use bare gradients.
    pub feature_product: bool,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        DiversityConfig {
            lambda: 0.0,
            gradient_target: GradientTarget::Score,
            rectifier: Rectifier::None,
            feature_product: false,
        }
    }
}

/// Alignment of two (optionally rectified) input gradients at one point.
pub fn diversity_penalty(grad_i: &[f64], grad_j: &[f64], rectifier: Rectifier) -> Result<f64> {
    if grad_i.len() != grad_j.len() {
        return Err(Error::ShapeMismatch {
            op: "diversity_penalty",
            left: format!("length {}", grad_i.len()),
            right: format!("length {}", grad_j.len()),
        });
    }
    let mut acc = 0.0;
    for (&a, &b) in grad_i.iter().zip(grad_j) {
        acc += rectifier.apply(a) * rectifier.apply(b);
    }
    Ok(acc)
}

/// Elementwise product of features with the gradient.
pub fn feature_grad_product(h: &[f64], grad: &[f64]) -> Result<Vector> {
    if h.len() != grad.len() {
        return Err(Error::ShapeMismatch {
            op: "feature_grad_product",
            left: format!("length {}", h.len()),
            right: format!("length {}", grad.len()),
        });
    }
    Ok(h.iter().zip(grad).map(|(&a, &b)| a * b).collect())
}

/// Value and per-model parameter gradients of the collection diversity term.
#[derive(Debug, Clone)]
pub struct CollectionPenalty {
    pub value: f64,
    pub grads: Vec<MlpGrads>,
}

/// Collection penalty over a batch:
/// `lambda / B * sum_k sum_{i<j} delta_ij(h_k)`.
///
/// The returned gradients are the exact gradients of the returned value.
/// Fewer than two models is a documented degenerate case: zero value and
/// zero gradients.
pub fn collection_penalty(
    models: &[MlpParams],
    batch: &Matrix,
    cfg: &DiversityConfig,
) -> Result<CollectionPenalty> {
    if batch.rows() == 0 {
        return Err(Error::Empty { what: "batch" });
    }
    let caches: Vec<BatchCache> = models
        .iter()
        .map(|p| mlp::forward_batch(p, batch))
        .collect::<Result<_>>()?;
    let chains: Vec<(Matrix, Matrix)> = models
        .iter()
        .zip(&caches)
        .map(|(p, c)| mlp::logit_chain_batch(p, c))
        .collect();
    collection_penalty_with_caches(models, &caches, &chains, cfg)
}

/// Same as [`collection_penalty`], reusing forward caches the caller already
/// has (the trainer shares them with the classification backward pass).
pub fn collection_penalty_with_caches(
    models: &[MlpParams],
    caches: &[BatchCache],
    chains: &[(Matrix, Matrix)],
    cfg: &DiversityConfig,
) -> Result<CollectionPenalty> {
    let n = models.len();
    let dims: Vec<_> = models.iter().map(|p| p.dims()).collect();
    if n < 2 || cfg.lambda == 0.0 {
        return Ok(CollectionPenalty {
            value: 0.0,
            grads: dims.into_iter().map(MlpGrads::zeros).collect(),
        });
    }
    let batch = caches[0].x.rows();
    let input = caches[0].x.cols();
    for d in &dims {
        if d.input != input {
            return Err(Error::ShapeMismatch {
                op: "collection_penalty",
                left: format!("input {input}"),
                right: format!("input {}", d.input),
            });
        }
    }

    // Rectified (and optionally feature-multiplied) per-example gradients,
    // one matrix per model.
    let rectified: Vec<Matrix> = models
        .par_iter()
        .zip(caches.par_iter())
        .zip(chains.par_iter())
        .map(|((p, c), chain)| {
            let mut u = mlp::input_gradient_batch(p, c, chain, cfg.gradient_target);
            for b in 0..batch {
                let x = c.x.row(b);
                let row = u.row_mut(b);
                for (d, r) in row.iter_mut().enumerate() {
                    let t = if cfg.feature_product { x[d] * *r } else { *r };
                    *r = cfg.rectifier.apply(t);
                }
            }
            u
        })
        .collect();

    // Sum of rectified gradients over models, in fixed index order; each
    // model then differentiates against the sum of the *others*.
    let mut total = Matrix::zeros(batch, input);
    for r in &rectified {
        for (acc, &v) in total.data_mut().iter_mut().zip(r.data()) {
            *acc += v;
        }
    }

    // Unordered-pair sum via the polarization identity:
    // sum_{i<j} R_i . R_j = (||S||^2 - sum_i ||R_i||^2) / 2.
    let scale = cfg.lambda / batch as f64;
    let mut raw = dot(total.data(), total.data());
    for r in &rectified {
        raw -= dot(r.data(), r.data());
    }
    let value = scale * (raw / 2.0);

    let grads: Vec<MlpGrads> = models
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let cache = &caches[i];
            let chain = &chains[i];
            // Recover this model's raw gradient mask: d delta / d u_i =
            // tau' * rho'(tau(u_i)) * (sum_{j != i} rho(tau(u_j))).
            let u = mlp::input_gradient_batch(p, cache, chain, cfg.gradient_target);
            let mut v = Matrix::zeros(batch, input);
            for b in 0..batch {
                let x = cache.x.row(b);
                let urow = u.row(b);
                let rrow = rectified[i].row(b);
                let trow = total.row(b);
                for (d, dst) in v.row_mut(b).iter_mut().enumerate() {
                    let t = if cfg.feature_product {
                        x[d] * urow[d]
                    } else {
                        urow[d]
                    };
                    let mask = if cfg.feature_product { x[d] } else { 1.0 } * cfg.rectifier.slope(t);
                    *dst = scale * mask * (trow[d] - rrow[d]);
                }
            }
            mlp::grad_dot_param_grads_batch(p, cache, chain, &v, cfg.gradient_target)
        })
        .collect::<Result<_>>()?;

    Ok(CollectionPenalty { value, grads })
}

/// Per-example baseline penalty value and its exact parameter gradient.
///
/// `input_dropout` is applied in the forward pass instead and contributes
/// `(0, 0)` here; diversity kinds are a hard error.
pub fn baseline_penalty(
    kind: PenaltyKind,
    p: &MlpParams,
    h: &[f64],
    target: GradientTarget,
) -> Result<(f64, MlpGrads)> {
    let x = Matrix::from_vec(1, h.len(), h.to_vec())?;
    let cache = mlp::forward_batch(p, &x)?;
    let chain = mlp::logit_chain_batch(p, &cache);
    baseline_penalty_batch(kind, p, &cache, &chain, target)
}

/// Batch-mean baseline penalty and the gradient of that mean.
pub fn baseline_penalty_batch(
    kind: PenaltyKind,
    p: &MlpParams,
    cache: &BatchCache,
    chain: &(Matrix, Matrix),
    target: GradientTarget,
) -> Result<(f64, MlpGrads)> {
    let batch = cache.x.rows();
    let inv = 1.0 / batch as f64;
    match kind {
        PenaltyKind::DiversityDot | PenaltyKind::DiversityFgpDot => Err(Error::InvalidArgument {
            op: "baseline_penalty",
            what: format!(
                "{} is a collection penalty, not a per-model baseline",
                kind.canonical_name()
            ),
        }),
        PenaltyKind::InputDropout(_) => Ok((0.0, MlpGrads::zeros(p.dims()))),
        PenaltyKind::L2sqLogits => {
            let value = cache.logits.iter().map(|&z| z * z).sum::<f64>() * inv;
            let weights: Vector = cache.logits.iter().map(|&z| 2.0 * z * inv).collect();
            let g = mlp::logit_weighted_grads(p, cache, &weights);
            Ok((value, g))
        }
        PenaltyKind::L1Grad
        | PenaltyKind::L1Fgp
        | PenaltyKind::L2sqGrad
        | PenaltyKind::L2sqReluGrad
        | PenaltyKind::L2sqFgp => {
            let u = mlp::input_gradient_batch(p, cache, chain, target);
            let mut value = 0.0;
            let mut v = Matrix::zeros(batch, cache.x.cols());
            for b in 0..batch {
                let x = cache.x.row(b);
                let urow = u.row(b);
                for (d, dst) in v.row_mut(b).iter_mut().enumerate() {
                    let (val_d, dval_du) = match kind {
                        PenaltyKind::L1Grad => (urow[d].abs(), sign(urow[d])),
                        PenaltyKind::L1Fgp => {
                            let t = x[d] * urow[d];
                            (t.abs(), x[d] * sign(t))
                        }
                        PenaltyKind::L2sqGrad => (urow[d] * urow[d], 2.0 * urow[d]),
                        PenaltyKind::L2sqReluGrad => {
                            let r = if urow[d] > 0.0 { urow[d] } else { 0.0 };
                            (r * r, 2.0 * r)
                        }
                        PenaltyKind::L2sqFgp => {
                            let t = x[d] * urow[d];
                            (t * t, 2.0 * x[d] * t)
                        }
                        _ => unreachable!(),
                    };
                    value += val_d;
                    *dst = dval_du * inv;
                }
            }
            let g = mlp::grad_dot_param_grads_batch(p, cache, chain, &v, target)?;
            Ok((value * inv, g))
        }
    }
}
