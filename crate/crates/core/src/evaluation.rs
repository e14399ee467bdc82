//! Accuracy, the mean / ensemble / best report with its specialization cross
//! table, gradient-alignment diagnostics, and input-gradient heatmaps.

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::mlp::{self, GradientTarget, MlpParams};

/// One named evaluation split, already downsampled to the model input size.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub name: String,
    pub inputs: Matrix,
    pub labels: Vec<u8>,
}

/// Fraction of examples with `(score >= 0.5) == label`; a tie at exactly 0.5
/// counts as predicting 1.
pub fn accuracy(p: &MlpParams, inputs: &Matrix, labels: &[u8]) -> Result<f64> {
    let scores = score_all(p, inputs)?;
    accuracy_of_scores(&scores, labels)
}

fn score_all(p: &MlpParams, inputs: &Matrix) -> Result<Vec<f64>> {
    if inputs.rows() == 0 {
        return Err(Error::Empty { what: "evaluation set" });
    }
    Ok(mlp::forward_batch(p, inputs)?.scores)
}

fn accuracy_of_scores(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty { what: "evaluation set" });
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| u8::from(s >= 0.5) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Accuracy of the summed-scores rule: predict 1 when
/// `sum_i score_i >= n / 2`.
pub fn ensemble_accuracy(models: &[MlpParams], inputs: &Matrix, labels: &[u8]) -> Result<f64> {
    if models.is_empty() {
        return Err(Error::Empty { what: "model collection" });
    }
    let mut sums = vec![0.0; inputs.rows()];
    for p in models {
        for (acc, s) in sums.iter_mut().zip(score_all(p, inputs)?) {
            *acc += s;
        }
    }
    let threshold = models.len() as f64 / 2.0;
    let correct = sums
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| u8::from(s >= threshold) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Per-test-set numbers for one collection.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSetEval {
    pub name: String,
    pub per_model: Vec<f64>,
    pub mean: f64,
    pub ensemble: f64,
    pub best: f64,
    /// Oracle selection; ties break toward the lowest model index.
    pub best_index: usize,
}

/// Validation-based selection: the model picked on one held-out split,
/// reported on the others.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionEval {
    pub select_on: String,
    pub selected_model: usize,
    pub accuracies: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub testsets: Vec<TestSetEval>,
    /// `cross[b][t]`: accuracy of the best-on-test-set-`b` model when
    /// evaluated on test set `t`.
    pub cross: Matrix,
    pub metadata: String,
    pub selection: Option<SelectionEval>,
}

/// Evaluates the collection on every test set.
///
/// Best-model selection is per test set by that set's accuracy (oracle
/// selection). `select_on` optionally adds a validation-based row: the model
/// chosen on that split, reported on all the others.
pub fn report(
    models: &[MlpParams],
    testsets: &[TestSet],
    metadata: &str,
    select_on: Option<&str>,
) -> Result<EvalReport> {
    if models.is_empty() {
        return Err(Error::Empty { what: "model collection" });
    }
    if testsets.is_empty() {
        return Err(Error::Empty { what: "test set list" });
    }
    let mut evals = Vec::with_capacity(testsets.len());
    for ts in testsets {
        let per_model: Vec<f64> = models
            .iter()
            .map(|p| accuracy(p, &ts.inputs, &ts.labels))
            .collect::<Result<_>>()?;
        let mean = per_model.iter().sum::<f64>() / per_model.len() as f64;
        let ensemble = ensemble_accuracy(models, &ts.inputs, &ts.labels)?;
        let (best_index, best) = per_model
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            });
        evals.push(TestSetEval {
            name: ts.name.clone(),
            per_model,
            mean,
            ensemble,
            best,
            best_index,
        });
    }
    let t = evals.len();
    let mut cross = Matrix::zeros(t, t);
    for b in 0..t {
        let model = evals[b].best_index;
        for (col, e) in evals.iter().enumerate() {
            cross.set(b, col, e.per_model[model]);
        }
    }
    let selection = match select_on {
        None => None,
        Some(name) => {
            let row = evals
                .iter()
                .position(|e| e.name == name)
                .ok_or_else(|| Error::InvalidArgument {
                    op: "report",
                    what: format!("selection split {name:?} is not among the test sets"),
                })?;
            let selected = evals[row].best_index;
            Some(SelectionEval {
                select_on: name.to_string(),
                selected_model: selected,
                accuracies: evals
                    .iter()
                    .filter(|e| e.name != name)
                    .map(|e| (e.name.clone(), e.per_model[selected]))
                    .collect(),
            })
        }
    };
    Ok(EvalReport {
        testsets: evals,
        cross,
        metadata: metadata.to_string(),
        selection,
    })
}

/// Cosine-style summary of pairwise gradient alignment over (up to) `sample`
/// probe points.
///
/// Entry `(i, j)` is the mean alignment normalized by the product of the two
/// models' root-mean-square gradient norms; the diagonal is 1 by
/// construction. A zero-gradient model gets zero entries and a raised flag.
pub fn alignment_matrix(
    models: &[MlpParams],
    probe: &Matrix,
    sample: usize,
    target: GradientTarget,
) -> Result<(Matrix, Vec<bool>)> {
    if probe.rows() == 0 || sample == 0 {
        return Err(Error::Empty { what: "alignment probe" });
    }
    let n = models.len();
    let take = sample.min(probe.rows());
    let sub = probe.gather_rows(&(0..take).collect::<Vec<_>>());
    let grads: Vec<Matrix> = models
        .iter()
        .map(|p| {
            let cache = mlp::forward_batch(p, &sub)?;
            let chain = mlp::logit_chain_batch(p, &cache);
            Ok(mlp::input_gradient_batch(p, &cache, &chain, target))
        })
        .collect::<Result<_>>()?;
    let norms: Vec<f64> = grads
        .iter()
        .map(|u| (u.data().iter().map(|v| v * v).sum::<f64>() / take as f64).sqrt())
        .collect();
    let flags: Vec<bool> = norms.iter().map(|&v| v == 0.0).collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        out.set(i, i, if flags[i] { 0.0 } else { 1.0 });
        for j in (i + 1)..n {
            let value = if flags[i] || flags[j] {
                0.0
            } else {
                let mean_dot = dot(grads[i].data(), grads[j].data()) / take as f64;
                mean_dot / (norms[i] * norms[j])
            };
            out.set(i, j, value);
            out.set(j, i, value);
        }
    }
    Ok((out, flags))
}

/// Mean absolute off-diagonal entry; the scalar tracked by the diversity
/// diagnostic.
pub fn mean_off_diagonal(m: &Matrix) -> f64 {
    let n = m.rows();
    if n < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += m.get(i, j).abs();
            }
        }
    }
    acc / (n * (n - 1)) as f64
}

/// Mean absolute input gradient over the first `count` examples, reshaped to
/// the model's square input grid, bilinearly upsampled, and min-max
/// normalized to `0..=255`.
///
/// Returns `(pixels, side, zero_flag)`; the flag marks an all-zero gradient
/// field (the image is then uniformly zero).
pub fn gradient_heatmap(
    p: &MlpParams,
    inputs: &Matrix,
    count: usize,
    upsample_to: usize,
) -> Result<(Vec<u8>, usize, bool)> {
    if count == 0 || count > inputs.rows() {
        return Err(Error::InvalidArgument {
            op: "gradient_heatmap",
            what: format!("count {count} outside 1..={}", inputs.rows()),
        });
    }
    let dim = inputs.cols();
    let side = (dim as f64).sqrt().round() as usize;
    if side * side != dim {
        return Err(Error::InvalidArgument {
            op: "gradient_heatmap",
            what: format!("input dim {dim} is not a square grid"),
        });
    }
    let sub = inputs.gather_rows(&(0..count).collect::<Vec<_>>());
    let cache = mlp::forward_batch(p, &sub)?;
    let chain = mlp::logit_chain_batch(p, &cache);
    let grads = mlp::input_gradient_batch(p, &cache, &chain, GradientTarget::Score);
    let mut mean = vec![0.0; dim];
    for b in 0..count {
        for (m, &g) in mean.iter_mut().zip(grads.row(b)) {
            *m += g.abs();
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let up = bilinear_upsample(&mean, side, upsample_to);
    let lo = up.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = up.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let zero_flag = hi == lo;
    let pixels: Vec<u8> = if zero_flag {
        vec![0; up.len()]
    } else {
        up.iter()
            .map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
            .collect()
    };
    Ok((pixels, upsample_to, zero_flag))
}

/// Pixel-center-aligned bilinear interpolation of a square image.
pub fn bilinear_upsample(src: &[f64], side: usize, out_side: usize) -> Vec<f64> {
    debug_assert_eq!(src.len(), side * side);
    let scale = side as f64 / out_side as f64;
    let mut out = vec![0.0; out_side * out_side];
    for r in 0..out_side {
        let sr = ((r as f64 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f64);
        let r0 = sr.floor() as usize;
        let r1 = (r0 + 1).min(side - 1);
        let fr = sr - r0 as f64;
        for c in 0..out_side {
            let sc = ((c as f64 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f64);
            let c0 = sc.floor() as usize;
            let c1 = (c0 + 1).min(side - 1);
            let fc = sc - c0 as f64;
            let top = src[r0 * side + c0] * (1.0 - fc) + src[r0 * side + c1] * fc;
            let bottom = src[r1 * side + c0] * (1.0 - fc) + src[r1 * side + c1] * fc;
            out[r * out_side + c] = top * (1.0 - fr) + bottom * fr;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// PGM output
// ---------------------------------------------------------------------------

/// Binary PGM (P5) with one comment line carrying run metadata.
pub fn pgm_to_bytes(width: usize, height: usize, pixels: &[u8], comment: &str) -> Vec<u8> {
    debug_assert_eq!(pixels.len(), width * height);
    debug_assert!(!comment.contains('\n'));
    let mut out = Vec::with_capacity(32 + comment.len() + pixels.len());
    out.extend_from_slice(b"P5\n# ");
    out.extend_from_slice(comment.as_bytes());
    out.extend_from_slice(format!("\n{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(pixels);
    out
}

pub fn write_pgm(
    path: &std::path::Path,
    width: usize,
    height: usize,
    pixels: &[u8],
    comment: &str,
) -> Result<()> {
    crate::datasets::atomic_write(path, &pgm_to_bytes(width, height, pixels, comment))
}

/// Reads back a P5 file written by [`write_pgm`] (or any single-comment,
/// maxval-255 P5 file). Returns `(width, height, pixels)`.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let header_err = |what: &'static str| Error::InvalidArgument {
        op: "read_pgm",
        what: what.into(),
    };
    let mut lines = Vec::new();
    let mut off = 0;
    // P5 header is 3 whitespace-separated records plus optional comments.
    while lines.len() < 3 && off < bytes.len() {
        let end = bytes[off..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| off + p)
            .ok_or_else(|| header_err("unterminated header"))?;
        let line = std::str::from_utf8(&bytes[off..end])
            .map_err(|_| header_err("non-utf8 header"))?;
        off = end + 1;
        if !line.starts_with('#') {
            lines.push(line.to_string());
        }
    }
    if lines.len() != 3 || lines[0] != "P5" {
        return Err(header_err("expected P5 header"));
    }
    let mut dims = lines[1].split_whitespace();
    let width: usize = dims
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| header_err("bad width"))?;
    let height: usize = dims
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| header_err("bad height"))?;
    if lines[2].trim() != "255" {
        return Err(header_err("expected maxval 255"));
    }
    let pixels = bytes
        .get(off..off + width * height)
        .ok_or(Error::Truncated {
            what: "pgm pixels",
            needed: off + width * height,
            have: bytes.len(),
        })?;
    Ok((width, height, pixels.to_vec()))
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

/// Human-readable aligned-column table.
pub fn render_report_text(report: &EvalReport) -> String {
    let mut out = String::new();
    for line in report.metadata.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    let name_w = report
        .testsets
        .iter()
        .map(|t| t.name.len())
        .max()
        .unwrap_or(8)
        .max(8);
    out.push_str(&format!(
        "{:<name_w$}  {:>7}  {:>8}  {:>7}  {:>6}\n",
        "test set", "mean", "ensemble", "best", "model"
    ));
    for t in &report.testsets {
        out.push_str(&format!(
            "{:<name_w$}  {:>6.1}%  {:>7.1}%  {:>6.1}%  {:>6}\n",
            t.name,
            t.mean * 100.0,
            t.ensemble * 100.0,
            t.best * 100.0,
            t.best_index
        ));
    }
    out.push('\n');
    out.push_str(&format!("{:<name_w$}", "best-on"));
    for t in &report.testsets {
        out.push_str(&format!("  {:>name_w$}", t.name));
    }
    out.push('\n');
    for (b, t) in report.testsets.iter().enumerate() {
        out.push_str(&format!("{:<name_w$}", t.name));
        for col in 0..report.testsets.len() {
            out.push_str(&format!(
                "  {:>name_w$}",
                format!("{:.1}%", report.cross.get(b, col) * 100.0)
            ));
        }
        out.push('\n');
    }
    if let Some(sel) = &report.selection {
        out.push('\n');
        out.push_str(&format!(
            "selected on {}: model {}\n",
            sel.select_on, sel.selected_model
        ));
        for (name, acc) in &sel.accuracies {
            out.push_str(&format!("{:<name_w$}  {:>6.1}%\n", name, acc * 100.0));
        }
    }
    out
}

/// Machine-readable flat key-value form.
pub fn render_report_kv(report: &EvalReport) -> String {
    let mut out = String::new();
    for line in report.metadata.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    for t in &report.testsets {
        for (k, acc) in t.per_model.iter().enumerate() {
            out.push_str(&format!("testset.{}.model_{k}.accuracy = {acc:.6}\n", t.name));
        }
        out.push_str(&format!("testset.{}.mean = {:.6}\n", t.name, t.mean));
        out.push_str(&format!("testset.{}.ensemble = {:.6}\n", t.name, t.ensemble));
        out.push_str(&format!("testset.{}.best = {:.6}\n", t.name, t.best));
        out.push_str(&format!(
            "testset.{}.best_index = {}\n",
            t.name, t.best_index
        ));
    }
    for (b, row) in report.testsets.iter().enumerate() {
        for (col, t) in report.testsets.iter().enumerate() {
            out.push_str(&format!(
                "cross.{}.{} = {:.6}\n",
                row.name,
                t.name,
                report.cross.get(b, col)
            ));
        }
    }
    if let Some(sel) = &report.selection {
        out.push_str(&format!("selection.split = {}\n", sel.select_on));
        out.push_str(&format!("selection.model = {}\n", sel.selected_model));
        for (name, acc) in &sel.accuracies {
            out.push_str(&format!("selection.{name} = {acc:.6}\n"));
        }
    }
    out
}
