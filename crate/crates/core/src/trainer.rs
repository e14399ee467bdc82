//! Parallel training of a collection of classifiers on shared minibatches.
//!
//! Every iteration draws one minibatch from a single data stream, feeds it to
//! all models, combines per-model classification gradients with the penalty
//! gradients, and applies one Adam step per model. Per-model work runs on a
//! worker pool, but all cross-model reductions happen in fixed index order,
//! so results are bit-identical for any worker count.
//!
//! Stream layout (see [`crate::rng::stream_ids`]): model `i` initializes from
//! `(seed, model_stream_base + i)` and, for the dropout baseline, masks from
//! `(seed, DROPOUT + model_stream_base + i)`; minibatches come from
//! `(seed, MINIBATCH)`. A collection run is therefore bitwise equivalent to
//! independent single-model runs with shifted stream bases whenever the
//! penalty is off.

use crate::datasets::{downsample_images, Dataset};
use crate::error::{Error, Result};
use crate::hash::{fnv1a64, Fnv1a64};
use crate::matrix::Matrix;
use crate::mlp::{
    self, AdamState, GradientTarget, MlpDims, MlpGrads, MlpParams,
};
use crate::regularizers::{
    baseline_penalty_batch, collection_penalty_with_caches, DiversityConfig, PenaltyKind,
    Rectifier,
};
use crate::rng::{stream_ids, RngStream};
use rayon::prelude::*;

/// Experiment definition. Defaults follow the reference recipe: Adam at
/// learning rate 0.001, minibatches of 256, 13k iterations (65 epochs at
/// 51,200 examples), two hidden layers of 16, leaky-ReLU rate 0.01, inputs
/// downsampled by a factor 4. No early stopping of any kind.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub n_models: usize,
    pub lambda: f64,
    pub penalty: PenaltyKind,
    pub rectifier: Rectifier,
    pub gradient_target: GradientTarget,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Shifts every per-model stream id; lets a single-model run reproduce
    /// any member of a collection exactly.
    pub model_stream_base: u64,
    /// Average-pooling factor applied to collage images before training.
    /// Ignored for feature datasets.
    pub downsample_factor: usize,
    pub hidden: (usize, usize),
    pub leak_rate: f64,
    /// Worker threads; 0 uses the ambient rayon pool. Results do not depend
    /// on this.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_models: 1,
            lambda: 0.0,
            penalty: PenaltyKind::DiversityDot,
            rectifier: Rectifier::None,
            gradient_target: GradientTarget::Score,
            learning_rate: 0.001,
            batch_size: 256,
            iterations: 13_000,
            seed: 0,
            model_stream_base: stream_ids::MODEL_BASE,
            downsample_factor: 4,
            hidden: (16, 16),
            leak_rate: 0.01,
            workers: 0,
        }
    }
}

/// `epochs * ceil(n / batch)` iterations.
pub fn iterations_for_epochs(epochs: usize, n_examples: usize, batch_size: usize) -> usize {
    epochs * n_examples.div_ceil(batch_size)
}

/// Per-iteration record of the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    /// FNV-1a digest of each iteration's minibatch indices; all models share
    /// the batch, so this is the shared index stream.
    pub batch_digests: Vec<u64>,
    /// Penalty term actually added to the objective at each iteration.
    pub penalty_values: Vec<f64>,
    /// Mean batch BCE per model, iterations x models.
    pub losses: Matrix,
    /// Batch accuracy per model, iterations x models.
    pub accuracies: Matrix,
}

/// A trained collection plus everything needed to reproduce it.
#[derive(Debug, Clone)]
pub struct Collection {
    pub models: Vec<MlpParams>,
    pub adam: Vec<AdamState>,
    /// `(seed, stream_id)` pair that initialized each model.
    pub model_seeds: Vec<(u64, u64)>,
    pub log: TrainingLog,
}

/// Resolves a dataset into the matrix actually fed to the models.
pub fn model_inputs(data: &Dataset, downsample_factor: usize) -> Result<(Matrix, Vec<u8>)> {
    match data {
        Dataset::Collage(d) => Ok((
            downsample_images(&d.images, downsample_factor)?,
            d.labels.clone(),
        )),
        Dataset::Feature(d) => Ok((d.vectors.clone(), d.labels.clone())),
    }
}

fn run_in_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool")
            .install(f)
    }
}

pub fn train_collection(cfg: &TrainConfig, data: &Dataset) -> Result<Collection> {
    let (x, labels) = model_inputs(data, cfg.downsample_factor)?;
    run_in_pool(cfg.workers, || train_on_inputs(cfg, &x, &labels))
}

/// Single-classifier training: the `n_models = 1` special case.
pub fn train_single(cfg: &TrainConfig, data: &Dataset) -> Result<MlpParams> {
    let mut cfg = cfg.clone();
    cfg.n_models = 1;
    let mut collection = train_collection(&cfg, data)?;
    Ok(collection.models.pop().expect("one model"))
}

fn train_on_inputs(cfg: &TrainConfig, x: &Matrix, labels: &[u8]) -> Result<Collection> {
    let n_examples = x.rows();
    if n_examples == 0 {
        return Err(Error::Empty { what: "training set" });
    }
    if cfg.n_models == 0 {
        return Err(Error::InvalidArgument {
            op: "train_collection",
            what: "n_models must be >= 1".into(),
        });
    }
    if cfg.batch_size == 0 || cfg.batch_size > n_examples {
        return Err(Error::InvalidArgument {
            op: "train_collection",
            what: format!(
                "batch size {} outside 1..={n_examples}",
                cfg.batch_size
            ),
        });
    }
    let dims = MlpDims::new(x.cols(), cfg.hidden.0, cfg.hidden.1);
    let n = cfg.n_models;

    let mut model_seeds = Vec::with_capacity(n);
    let mut models = Vec::with_capacity(n);
    for i in 0..n {
        let stream_id = cfg.model_stream_base + i as u64;
        let mut rng = RngStream::new(cfg.seed, stream_id);
        models.push(mlp::init_params(dims, cfg.leak_rate, &mut rng)?);
        model_seeds.push((cfg.seed, stream_id));
    }
    let mut adam: Vec<AdamState> = (0..n).map(|_| AdamState::new(dims)).collect();

    let mut dropout: Option<(f64, Vec<RngStream>)> = match cfg.penalty {
        PenaltyKind::InputDropout(rate) => {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidArgument {
                    op: "train_collection",
                    what: format!("dropout rate {rate} outside [0, 1)"),
                });
            }
            let streams = (0..n)
                .map(|i| {
                    RngStream::new(
                        cfg.seed,
                        stream_ids::DROPOUT + cfg.model_stream_base + i as u64,
                    )
                })
                .collect();
            Some((rate, streams))
        }
        _ => None,
    };

    let div_cfg = DiversityConfig {
        lambda: cfg.lambda,
        gradient_target: cfg.gradient_target,
        rectifier: cfg.rectifier,
        feature_product: matches!(cfg.penalty, PenaltyKind::DiversityFgpDot),
    };
    let use_diversity = cfg.penalty.is_diversity() && cfg.lambda != 0.0 && n >= 2;
    let use_baseline = !cfg.penalty.is_diversity()
        && !matches!(cfg.penalty, PenaltyKind::InputDropout(_))
        && cfg.lambda != 0.0;

    let mut batch_rng = RngStream::new(cfg.seed, stream_ids::MINIBATCH);
    let mut order: Vec<usize> = (0..n_examples).collect();
    let mut cursor = n_examples; // force a shuffle before the first batch

    let mut log = TrainingLog {
        batch_digests: Vec::with_capacity(cfg.iterations),
        penalty_values: Vec::with_capacity(cfg.iterations),
        losses: Matrix::zeros(cfg.iterations, n),
        accuracies: Matrix::zeros(cfg.iterations, n),
    };

    for iter in 0..cfg.iterations {
        // Epoch reshuffle without replacement; the tail batch of an epoch may
        // be shorter when the batch size does not divide the dataset.
        if cursor >= n_examples {
            batch_rng.shuffle(&mut order);
            cursor = 0;
        }
        let take = cfg.batch_size.min(n_examples - cursor);
        let indices = &order[cursor..cursor + take];
        cursor += take;

        let mut digest = Fnv1a64::new();
        for &idx in indices {
            digest.update(&(idx as u32).to_le_bytes());
        }
        log.batch_digests.push(digest.finish());

        let xb = x.gather_rows(indices);
        let lb: Vec<u8> = indices.iter().map(|&i| labels[i]).collect();

        // Per-model inputs differ only under input dropout.
        let model_xb: Vec<Matrix> = match &mut dropout {
            Some((rate, streams)) => streams
                .iter_mut()
                .map(|s| apply_dropout(&xb, *rate, s))
                .collect(),
            None => Vec::new(),
        };

        let needs_chain = use_diversity || use_baseline;
        let steps: Vec<(f64, f64, MlpGrads, mlp::BatchCache, (Matrix, Matrix))> = models
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let input = if model_xb.is_empty() { &xb } else { &model_xb[i] };
                let cache = mlp::forward_batch(p, input)?;
                let (loss, grads) = mlp::backward_batch(p, &cache, &lb);
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        what: "training loss".into(),
                        context: format!("iteration {iter}, model {i}"),
                    });
                }
                let correct = cache
                    .scores
                    .iter()
                    .zip(&lb)
                    .filter(|(&s, &y)| u8::from(s >= 0.5) == y)
                    .count();
                let acc = correct as f64 / lb.len() as f64;
                let chain = if needs_chain {
                    mlp::logit_chain_batch(p, &cache)
                } else {
                    (Matrix::zeros(0, 0), Matrix::zeros(0, 0))
                };
                Ok((loss, acc, grads, cache, chain))
            })
            .collect::<Result<_>>()?;

        let mut grads = Vec::with_capacity(n);
        let mut caches = Vec::with_capacity(n);
        let mut chains = Vec::with_capacity(n);
        for (i, (loss, acc, g, cache, chain)) in steps.into_iter().enumerate() {
            log.losses.set(iter, i, loss);
            log.accuracies.set(iter, i, acc);
            grads.push(g);
            caches.push(cache);
            chains.push(chain);
        }

        let mut penalty_value = 0.0;
        if use_diversity {
            let pen = collection_penalty_with_caches(&models, &caches, &chains, &div_cfg)?;
            penalty_value = pen.value;
            for (g, pg) in grads.iter_mut().zip(&pen.grads) {
                g.add_assign(pg);
            }
        } else if use_baseline {
            let contributions: Vec<(f64, MlpGrads)> = models
                .par_iter()
                .zip(caches.par_iter())
                .zip(chains.par_iter())
                .map(|((p, cache), chain)| {
                    let (value, mut g) =
                        baseline_penalty_batch(cfg.penalty, p, cache, chain, cfg.gradient_target)?;
                    g.scale(cfg.lambda);
                    Ok((cfg.lambda * value, g))
                })
                .collect::<Result<_>>()?;
            for ((value, pg), g) in contributions.into_iter().zip(grads.iter_mut()) {
                penalty_value += value;
                g.add_assign(&pg);
            }
        }
        log.penalty_values.push(penalty_value);

        models
            .par_iter_mut()
            .zip(adam.par_iter_mut())
            .zip(grads.par_iter())
            .enumerate()
            .map(|(i, ((p, a), g))| {
                mlp::adam_step(p, g, a, cfg.learning_rate).map_err(|e| match e {
                    Error::NonFinite { what, .. } => Error::NonFinite {
                        what,
                        context: format!("iteration {iter}, model {i}"),
                    },
                    other => other,
                })
            })
            .collect::<Result<Vec<()>>>()?;
    }

    Ok(Collection {
        models,
        adam,
        model_seeds,
        log,
    })
}

/// Inverted dropout: zero with probability `rate`, otherwise scale by
/// `1 / (1 - rate)`. Masks are drawn row-major from the model's own stream.
fn apply_dropout(x: &Matrix, rate: f64, rng: &mut RngStream) -> Matrix {
    let keep_scale = 1.0 / (1.0 - rate);
    let data = x
        .data()
        .iter()
        .map(|&v| {
            if rng.next_f64() < rate {
                0.0
            } else {
                v * keep_scale
            }
        })
        .collect();
    Matrix::from_vec(x.rows(), x.cols(), data).expect("same shape")
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DVGC";
pub const CHECKPOINT_VERSION: u8 = 1;

/// A checkpoint read back from disk. Optimizer state is not persisted;
/// checkpoints are final artifacts, not resume points.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub models: Vec<MlpParams>,
    pub model_seeds: Vec<(u64, u64)>,
    pub log: TrainingLog,
    pub config_echo: String,
}

pub fn checkpoint_to_bytes(collection: &Collection, config_echo: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    let n = collection.models.len();
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(config_echo.len() as u32).to_le_bytes());
    out.extend_from_slice(config_echo.as_bytes());
    for &(seed, stream) in &collection.model_seeds {
        out.extend_from_slice(&seed.to_le_bytes());
        out.extend_from_slice(&stream.to_le_bytes());
    }
    for model in &collection.models {
        let blob = mlp::write_params(model);
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(&blob);
    }
    let log = &collection.log;
    let iters = log.batch_digests.len();
    out.extend_from_slice(&(iters as u32).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for d in &log.batch_digests {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &log.penalty_values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in log.losses.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in log.accuracies.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let checksum = fnv1a64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 21 {
        return Err(Error::Truncated {
            what: "checkpoint",
            needed: 21,
            have: bytes.len(),
        });
    }
    if bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            found: u32::from_be_bytes(bytes[0..4].try_into().unwrap()),
            expected: u32::from_be_bytes(CHECKPOINT_MAGIC),
        });
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(Error::Version {
            what: "checkpoint",
            found: bytes[4],
            supported: CHECKPOINT_VERSION,
        });
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(Error::Checksum {
            what: "checkpoint".into(),
            stored,
            computed,
        });
    }
    let mut off = 5usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > body.len() {
            return Err(Error::Truncated {
                what: "checkpoint",
                needed: *off + n,
                have: body.len(),
            });
        }
        let s = &body[*off..*off + n];
        *off += n;
        Ok(s)
    };
    let n = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let echo_len = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let config_echo = String::from_utf8(take(&mut off, echo_len)?.to_vec()).map_err(|_| {
        Error::InvalidArgument {
            op: "checkpoint_from_bytes",
            what: "non-utf8 config echo".into(),
        }
    })?;
    let mut model_seeds = Vec::with_capacity(n);
    for _ in 0..n {
        let seed = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
        let stream = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
        model_seeds.push((seed, stream));
    }
    let mut models = Vec::with_capacity(n);
    for _ in 0..n {
        let len = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        models.push(mlp::read_params(take(&mut off, len)?)?);
    }
    let iters = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let n_log = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let mut batch_digests = Vec::with_capacity(iters);
    for _ in 0..iters {
        batch_digests.push(u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()));
    }
    let read_f64s = |off: &mut usize, count: usize| -> Result<Vec<f64>> {
        let raw = take(off, count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let penalty_values = read_f64s(&mut off, iters)?;
    let losses = Matrix::from_vec(iters, n_log, read_f64s(&mut off, iters * n_log)?)?;
    let accuracies = Matrix::from_vec(iters, n_log, read_f64s(&mut off, iters * n_log)?)?;
    Ok(Checkpoint {
        models,
        model_seeds,
        log: TrainingLog {
            batch_digests,
            penalty_values,
            losses,
            accuracies,
        },
        config_echo,
    })
}

pub fn save_checkpoint(
    path: &std::path::Path,
    collection: &Collection,
    config_echo: &str,
) -> Result<()> {
    let bytes = checkpoint_to_bytes(collection, config_echo);
    crate::datasets::atomic_write(path, &bytes)
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    checkpoint_from_bytes(&bytes)
}
