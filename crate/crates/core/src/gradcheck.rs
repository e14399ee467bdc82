//! Central finite-difference validation of every analytic gradient path.
//!
//! The differencing oracle only ever calls forward passes (and, for the
//! penalty checks, the input-gradient evaluation that is itself validated
//! against pure forward differencing here), so it is independent of the
//! backward and double-backprop code it checks.
//!
//! Sampled inputs are kept away from leaky-ReLU kinks: draws are rejected
//! until every pre-activation satisfies `|z| > 1e-3`, which dwarfs the
//! perturbation radius of the differencing.

use crate::error::Result;
use crate::mlp::{self, GradientTarget, MlpDims, MlpParams};
use crate::regularizers::{self, PenaltyKind};
use crate::rng::RngStream;

/// Step for parameter-space differencing.
pub const PARAM_EPSILON: f64 = 1e-5;
/// Step for input-space differencing.
pub const INPUT_EPSILON: f64 = 1e-6;
/// Pre-activation margin kept around kinks.
pub const KINK_MARGIN: f64 = 1e-3;

/// Tolerances from the gradient-correctness contract.
pub const BCE_TOLERANCE: f64 = 1e-6;
pub const INPUT_GRAD_TOLERANCE: f64 = 1e-6;
pub const PENALTY_TOLERANCE: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, 1e-4)`: relative where the values are sizeable,
/// absolute below that.
///
/// The floor is set by what central differencing can certify: at step 1e-5
/// the f64 cancellation noise is ~1e-11 absolute, so entries smaller than
/// 1e-4 cannot be compared at 1e-6 relative precision by any finite
/// difference. Below the floor the comparison is absolute at
/// `tolerance * 1e-4`, still an order of magnitude above the noise.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

fn param_count(dims: MlpDims) -> usize {
    dims.parameter_count()
}

/// Mutable view of the flat-indexed parameter, ordered like
/// [`MlpGrads::flatten`]: w1, b1, w2, b2, w3, b3.
fn param_mut(p: &mut MlpParams, idx: usize) -> &mut f64 {
    let n_w1 = p.w1.data().len();
    let n_b1 = p.b1.len();
    let n_w2 = p.w2.data().len();
    let n_b2 = p.b2.len();
    let n_w3 = p.w3.len();
    let mut i = idx;
    if i < n_w1 {
        return &mut p.w1.data_mut()[i];
    }
    i -= n_w1;
    if i < n_b1 {
        return &mut p.b1[i];
    }
    i -= n_b1;
    if i < n_w2 {
        return &mut p.w2.data_mut()[i];
    }
    i -= n_w2;
    if i < n_b2 {
        return &mut p.b2[i];
    }
    i -= n_b2;
    if i < n_w3 {
        return &mut p.w3[i];
    }
    i -= n_w3;
    debug_assert_eq!(i, 0);
    &mut p.b3
}

/// Central difference of `f` over every parameter of `p`.
fn fd_param_gradient<F>(p: &MlpParams, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&MlpParams) -> Result<f64>,
{
    let count = param_count(p.dims());
    let mut out = Vec::with_capacity(count);
    let mut work = p.clone();
    for idx in 0..count {
        let original = *param_mut(&mut work, idx);
        *param_mut(&mut work, idx) = original + PARAM_EPSILON;
        let plus = f(&work)?;
        *param_mut(&mut work, idx) = original - PARAM_EPSILON;
        let minus = f(&work)?;
        *param_mut(&mut work, idx) = original;
        out.push((plus - minus) / (2.0 * PARAM_EPSILON));
    }
    Ok(out)
}

fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| rel_err(a, b))
        .fold(0.0, f64::max)
}

/// Draws params and an input whose pre-activations clear the kink margin.
pub fn draw_well_conditioned(
    dims: MlpDims,
    leak: f64,
    rng: &mut RngStream,
) -> Result<(MlpParams, Vec<f64>)> {
    let p = mlp::init_params(dims, leak, rng)?;
    for _ in 0..1000 {
        let h: Vec<f64> = (0..dims.input).map(|_| rng.uniform(-1.0, 1.0)).collect();
        if clears_margin(&p, &h)? {
            return Ok((p, h));
        }
    }
    // With continuous draws this is unreachable in practice.
    Err(crate::error::Error::InvalidArgument {
        op: "gradcheck",
        what: "could not sample an input away from activation kinks".into(),
    })
}

fn clears_margin(p: &MlpParams, h: &[f64]) -> Result<bool> {
    let cache = mlp::forward(p, h)?;
    Ok(cache
        .z1
        .iter()
        .chain(cache.z2.iter())
        .all(|&z| z.abs() > KINK_MARGIN))
}

/// Max relative error of the analytic BCE parameter gradient.
pub fn check_bce(p: &MlpParams, h: &[f64], label: u8) -> Result<f64> {
    let cache = mlp::forward(p, h)?;
    let analytic = mlp::backward(p, &cache, label).flatten();
    let numeric = fd_param_gradient(p, |q| {
        let c = mlp::forward(q, h)?;
        let (_, loss) = crate::activations::sigmoid_bce(c.logit, label);
        Ok(loss)
    })?;
    Ok(max_rel_err(&analytic, &numeric))
}

/// Max relative error of the input gradient against differencing over `h`.
pub fn check_input_gradient(p: &MlpParams, h: &[f64], target: GradientTarget) -> Result<f64> {
    let analytic = mlp::input_gradient(p, h, target)?;
    let mut work = h.to_vec();
    let mut max_err = 0.0f64;
    for d in 0..h.len() {
        let original = work[d];
        work[d] = original + INPUT_EPSILON;
        let plus = output_of(p, &work, target)?;
        work[d] = original - INPUT_EPSILON;
        let minus = output_of(p, &work, target)?;
        work[d] = original;
        let numeric = (plus - minus) / (2.0 * INPUT_EPSILON);
        max_err = max_err.max(rel_err(analytic[d], numeric));
    }
    Ok(max_err)
}

fn output_of(p: &MlpParams, h: &[f64], target: GradientTarget) -> Result<f64> {
    let c = mlp::forward(p, h)?;
    Ok(match target {
        GradientTarget::Score => c.score,
        GradientTarget::Logit => c.logit,
    })
}

/// Max relative error of both models' alignment-penalty gradients against
/// differencing of `delta` itself.
pub fn check_penalty_pair(
    p_i: &MlpParams,
    p_j: &MlpParams,
    h: &[f64],
    target: GradientTarget,
) -> Result<f64> {
    let (g_i, g_j) = mlp::penalty_param_grads(p_i, p_j, h, target)?;
    let delta_with = |a: &MlpParams, b: &MlpParams| -> Result<f64> {
        let u = mlp::input_gradient(a, h, target)?;
        let v = mlp::input_gradient(b, h, target)?;
        Ok(crate::matrix::dot(&u, &v))
    };
    let fd_i = fd_param_gradient(p_i, |q| delta_with(q, p_j))?;
    let fd_j = fd_param_gradient(p_j, |q| delta_with(p_i, q))?;
    Ok(max_rel_err(&g_i.flatten(), &fd_i).max(max_rel_err(&g_j.flatten(), &fd_j)))
}

/// Max relative error of one baseline penalty's parameter gradient.
pub fn check_baseline(
    kind: PenaltyKind,
    p: &MlpParams,
    h: &[f64],
    target: GradientTarget,
) -> Result<f64> {
    let (_, g) = regularizers::baseline_penalty(kind, p, h, target)?;
    let numeric = fd_param_gradient(p, |q| {
        Ok(baseline_value(kind, q, h, target)?)
    })?;
    Ok(max_rel_err(&g.flatten(), &numeric))
}

/// Penalty value recomputed from scratch (forward + input gradient only).
fn baseline_value(
    kind: PenaltyKind,
    p: &MlpParams,
    h: &[f64],
    target: GradientTarget,
) -> Result<f64> {
    if kind == PenaltyKind::L2sqLogits {
        let c = mlp::forward(p, h)?;
        return Ok(c.logit * c.logit);
    }
    let u = mlp::input_gradient(p, h, target)?;
    Ok(match kind {
        PenaltyKind::L1Grad => u.iter().map(|v| v.abs()).sum(),
        PenaltyKind::L1Fgp => u.iter().zip(h).map(|(v, x)| (v * x).abs()).sum(),
        PenaltyKind::L2sqGrad => u.iter().map(|v| v * v).sum(),
        PenaltyKind::L2sqReluGrad => u.iter().map(|v| v.max(0.0) * v.max(0.0)).sum(),
        PenaltyKind::L2sqFgp => u.iter().zip(h).map(|(v, x)| (v * x) * (v * x)).sum(),
        _ => unreachable!("handled above"),
    })
}

/// All gradient kinds checked by [`run`].
pub const BASELINE_KINDS: [PenaltyKind; 6] = [
    PenaltyKind::L1Grad,
    PenaltyKind::L1Fgp,
    PenaltyKind::L2sqGrad,
    PenaltyKind::L2sqReluGrad,
    PenaltyKind::L2sqFgp,
    PenaltyKind::L2sqLogits,
];

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub seeds: usize,
    pub bce_max: f64,
    pub input_grad_max: f64,
    pub penalty_max: f64,
    pub baseline_max: Vec<(&'static str, f64)>,
    pub pass: bool,
}

impl GradcheckReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "bce              max rel err {:.3e} (tol {:.0e})\n",
            self.bce_max, BCE_TOLERANCE
        ));
        out.push_str(&format!(
            "input_gradient   max rel err {:.3e} (tol {:.0e})\n",
            self.input_grad_max, INPUT_GRAD_TOLERANCE
        ));
        out.push_str(&format!(
            "diversity_delta  max rel err {:.3e} (tol {:.0e})\n",
            self.penalty_max, PENALTY_TOLERANCE
        ));
        for (name, err) in &self.baseline_max {
            out.push_str(&format!(
                "{name:<16} max rel err {err:.3e} (tol {PENALTY_TOLERANCE:.0e})\n"
            ));
        }
        out.push_str(if self.pass { "PASS\n" } else { "FAIL\n" });
        out
    }
}

/// Runs the whole differencing suite over `seeds` random draws.
///
/// Draw sizes are kept small so a 100-seed sweep finishes in seconds; the
/// formulas under test are size-independent.
pub fn run(seed: u64, seeds: usize) -> Result<GradcheckReport> {
    let dims = MlpDims::new(6, 5, 4);
    let mut bce_max = 0.0f64;
    let mut input_max = 0.0f64;
    let mut penalty_max = 0.0f64;
    let mut baseline_max = vec![0.0f64; BASELINE_KINDS.len()];
    for s in 0..seeds {
        let mut rng = RngStream::new(seed.wrapping_add(s as u64), 0);
        let (p, h) = draw_well_conditioned(dims, 0.01, &mut rng)?;
        let label = (s % 2) as u8;
        let target = if s % 3 == 0 {
            GradientTarget::Logit
        } else {
            GradientTarget::Score
        };
        bce_max = bce_max.max(check_bce(&p, &h, label)?);
        input_max = input_max.max(check_input_gradient(&p, &h, target)?);

        // Second model for the pairwise check, conditioned at the same input.
        let mut p_j = mlp::init_params(dims, 0.01, &mut rng)?;
        for _ in 0..1000 {
            if clears_margin(&p_j, &h)? {
                break;
            }
            p_j = mlp::init_params(dims, 0.01, &mut rng)?;
        }
        penalty_max = penalty_max.max(check_penalty_pair(&p, &p_j, &h, target)?);

        for (k, kind) in BASELINE_KINDS.iter().enumerate() {
            baseline_max[k] = baseline_max[k].max(check_baseline(*kind, &p, &h, target)?);
        }
    }
    let pass = bce_max <= BCE_TOLERANCE
        && input_max <= INPUT_GRAD_TOLERANCE
        && penalty_max <= PENALTY_TOLERANCE
        && baseline_max.iter().all(|&e| e <= PENALTY_TOLERANCE);
    Ok(GradcheckReport {
        seeds,
        bce_max,
        input_grad_max: input_max,
        penalty_max,
        baseline_max: BASELINE_KINDS
            .iter()
            .map(|k| k.canonical_name())
            .zip(baseline_max)
            .collect(),
        pass,
    })
}
