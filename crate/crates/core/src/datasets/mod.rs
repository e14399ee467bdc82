//! The collages benchmark and its ingredients.
//!
//! A collage is a 64x64 image tiling four 32x32 blocks, one per source. Each
//! source contributes one of two pre-selected classes; in the training split
//! every block's class equals the collage label, while in each test split only
//! one block stays informative and the rest are coin flips. Four upper-bound
//! training splits (one informative block each) bound what a single block can
//! achieve.
//!
//! Sources are either pools of real 8-bit patches (from IDX or CIFAR binary
//! files) or synthetic generators whose latent decision boundary needs a
//! configurable number of linear pieces, giving a difficulty ladder with zero
//! downloads.

mod cifar;
mod container;
mod idx;

pub use cifar::parse_cifar10_bin;
pub use container::{
    atomic_write, dataset_checksum, dataset_from_bytes, dataset_to_bytes, load_dataset,
    read_raw_block_source, save_dataset, write_raw_block_source,
};
pub use idx::{load_idx_pair, parse_idx, write_idx_images, write_idx_labels, IdxFile};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{stream_ids, RngStream};

pub const BLOCK_SIDE: usize = 32;
pub const BLOCK_PIXELS: usize = BLOCK_SIDE * BLOCK_SIDE;
pub const COLLAGE_SIDE: usize = 64;
pub const COLLAGE_PIXELS: usize = COLLAGE_SIDE * COLLAGE_SIDE;

/// Amplitude of the synthetic latent pattern in pixel space. With unit-norm
/// patterns this keeps pixels comfortably inside `[0, 1]` while leaving the
/// latent recoverable far above the noise floor.
pub const RENDER_GAIN: f64 = 2.0;

/// Which examples a split contains. Block indices refer to source order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    /// Every block's class equals the collage label.
    TrainAllPredictive,
    /// Only the named block is informative; the rest are coin flips.
    TestSingle(usize),
    /// Training data with one informative block, for upper bounds.
    UpperBoundTrain(usize),
}

impl SplitKind {
    /// Dedicated generation stream, derived from the split so regenerating
    /// one split never perturbs another.
    pub fn stream_id(self) -> u64 {
        match self {
            SplitKind::TrainAllPredictive => stream_ids::SPLIT_TRAIN_ALL,
            SplitKind::TestSingle(b) => stream_ids::SPLIT_TEST_SINGLE + b as u64,
            SplitKind::UpperBoundTrain(b) => stream_ids::SPLIT_UPPER_BOUND + b as u64,
        }
    }

    /// Is block `b` class-locked to the label in this split?
    pub fn predictive(self, b: usize) -> bool {
        match self {
            SplitKind::TrainAllPredictive => true,
            SplitKind::TestSingle(t) | SplitKind::UpperBoundTrain(t) => b == t,
        }
    }

    pub fn code(self) -> (u8, u8) {
        match self {
            SplitKind::TrainAllPredictive => (0, 0),
            SplitKind::TestSingle(b) => (1, b as u8),
            SplitKind::UpperBoundTrain(b) => (2, b as u8),
        }
    }

    pub fn from_code(kind: u8, block: u8) -> Result<SplitKind> {
        Ok(match kind {
            0 => SplitKind::TrainAllPredictive,
            1 => SplitKind::TestSingle(block as usize),
            2 => SplitKind::UpperBoundTrain(block as usize),
            other => {
                return Err(Error::InvalidArgument {
                    op: "SplitKind::from_code",
                    what: format!("unknown split code {other}"),
                })
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockLayout {
    /// Blocks appear in constant source order (positions 0..4 = row-major).
    Ordered,
    /// Per-example random permutation of block positions, recorded.
    Shuffled,
}

/// Raw decoded images prior to block-source conversion: `count` images of
/// `rows x cols`, `channels` of 1 (grayscale) or 3 (planar RGB).
#[derive(Debug, Clone)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

/// Manifest entry for one block source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSpec {
    pub name: String,
    pub class_pair: (String, String),
}

/// One block source: a labelled pool of real patches, or a synthetic
/// generator of graded boundary complexity.
#[derive(Debug, Clone)]
pub enum BlockSource {
    Pool {
        name: String,
        class_pair: (String, String),
        /// Patches mapped to label 0, `BLOCK_PIXELS` bytes each.
        class0: Vec<u8>,
        /// Patches mapped to label 1.
        class1: Vec<u8>,
    },
    Synthetic {
        name: String,
        /// Odd number of latent slabs; the optimal decision boundary on this
        /// block needs this many linear pieces.
        k_pieces: usize,
        noise_sd: f64,
        /// Fixed unit-norm pixel pattern carrying the latent, shared by every
        /// split drawn from the same generator seed.
        pattern: Vec<f64>,
    },
}

impl BlockSource {
    pub fn name(&self) -> &str {
        match self {
            BlockSource::Pool { name, .. } => name,
            BlockSource::Synthetic { name, .. } => name,
        }
    }

    pub fn spec(&self) -> SourceSpec {
        match self {
            BlockSource::Pool {
                name, class_pair, ..
            } => SourceSpec {
                name: name.clone(),
                class_pair: class_pair.clone(),
            },
            BlockSource::Synthetic { name, k_pieces, .. } => SourceSpec {
                name: name.clone(),
                class_pair: (format!("k{k_pieces}-low"), format!("k{k_pieces}-high")),
            },
        }
    }

    pub fn pool_len(&self, class: u8) -> usize {
        match self {
            BlockSource::Pool { class0, class1, .. } => {
                let pool = if class == 0 { class0 } else { class1 };
                pool.len() / BLOCK_PIXELS
            }
            BlockSource::Synthetic { .. } => usize::MAX,
        }
    }

    /// Draws one patch of the given class as `BLOCK_PIXELS` floats in [0, 1].
    pub fn draw(&self, class: u8, rng: &mut RngStream) -> Result<Vec<f64>> {
        match self {
            BlockSource::Pool { class0, class1, .. } => {
                let pool = if class == 0 { class0 } else { class1 };
                let n = pool.len() / BLOCK_PIXELS;
                if n == 0 {
                    return Err(Error::Empty {
                        what: "block-source class pool",
                    });
                }
                let idx = rng.index(n);
                Ok(pool[idx * BLOCK_PIXELS..(idx + 1) * BLOCK_PIXELS]
                    .iter()
                    .map(|&b| f64::from(b) / 255.0)
                    .collect())
            }
            BlockSource::Synthetic {
                k_pieces,
                noise_sd,
                pattern,
                ..
            } => {
                let z = synthetic_latent(*k_pieces, class, rng)?;
                Ok(render_latent(z, pattern, *noise_sd, rng))
            }
        }
    }
}

/// Pattern cell edge: patterns are piecewise constant over `4x4` pixel
/// cells, so factor-4 average pooling preserves the latent signal exactly.
pub const PATTERN_CELL: usize = 4;

/// Creates a synthetic block source. The pattern is derived from
/// `(seed, block_index)` only, so train and test splits of the same run share
/// it while distinct blocks stay independent.
///
/// The unit-norm pattern is drawn per `4x4` cell (row-major cell order) and
/// replicated within cells.
pub fn synthetic_block_source(
    k_pieces: usize,
    noise_sd: f64,
    seed: u64,
    block_index: usize,
) -> Result<BlockSource> {
    if k_pieces == 0 || k_pieces % 2 == 0 {
        return Err(Error::InvalidArgument {
            op: "synthetic_block_source",
            what: format!("k_pieces must be odd and >= 1, got {k_pieces}"),
        });
    }
    let mut rng = RngStream::new(seed, stream_ids::SYNTHETIC_PATTERN + block_index as u64);
    let cells_per_side = BLOCK_SIDE / PATTERN_CELL;
    let cells: Vec<f64> = (0..cells_per_side * cells_per_side)
        .map(|_| rng.normal(0.0, 1.0))
        .collect();
    let mut pattern = vec![0.0; BLOCK_PIXELS];
    for r in 0..BLOCK_SIDE {
        for c in 0..BLOCK_SIDE {
            pattern[r * BLOCK_SIDE + c] =
                cells[(r / PATTERN_CELL) * cells_per_side + c / PATTERN_CELL];
        }
    }
    let norm = pattern.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut pattern {
        *v /= norm;
    }
    Ok(BlockSource::Synthetic {
        name: format!("k{k_pieces}"),
        k_pieces,
        noise_sd,
        pattern,
    })
}

/// Slab widths of the latent partition for the ladder's members.
///
/// Widths are tuned so that (a) the best single-threshold linear rule stays
/// at 90% for k=3, 64% for k=5, and 68% for k=7 (on the noiseless latent),
/// and (b) the class-conditional means differ enough for gradient descent to
/// find the latent direction quickly. Other odd `k` fall back to equal
/// widths.
fn slab_widths(k_pieces: usize) -> Vec<f64> {
    match k_pieces {
        3 => vec![0.1627, 1.1867, 0.6506],
        5 => vec![0.2373, 0.4607, 0.5393, 0.4607, 0.3020],
        7 => vec![0.1200, 0.2072, 0.4470, 0.1382, 0.4107, 0.1270, 0.5500],
        k => vec![2.0 / k as f64; k],
    }
}

/// Draws the latent coordinate for one synthetic patch.
///
/// `[-1, 1]` is partitioned into `k` slabs (widths from [`slab_widths`]);
/// label 1 draws uniformly over the union of the 1-indexed odd slabs
/// (`ceil(k/2)` of them) and label 0 over the complementary ones, so clean
/// classification needs a boundary with `k` linear pieces. `k = 1`
/// degenerates to the sign of the latent. One uniform draw per latent.
pub fn synthetic_latent(k_pieces: usize, label: u8, rng: &mut RngStream) -> Result<f64> {
    if k_pieces == 0 || k_pieces % 2 == 0 {
        return Err(Error::InvalidArgument {
            op: "synthetic_latent",
            what: format!("k_pieces must be odd and >= 1, got {k_pieces}"),
        });
    }
    if k_pieces == 1 {
        // u in (0, 1] keeps the classes disjoint at the boundary.
        let u = 1.0 - rng.next_f64();
        return Ok(if label == 1 { u } else { -u });
    }
    let widths = slab_widths(k_pieces);
    let total: f64 = widths.iter().sum();
    // Label 1 occupies 0-indexed even slabs, label 0 the odd ones.
    let own: Vec<usize> = (0..k_pieces)
        .filter(|s| (s % 2 == 0) == (label == 1))
        .collect();
    let union: f64 = own.iter().map(|&s| widths[s]).sum();
    let mut u = rng.next_f64() * union;
    let mut slab = *own.last().expect("nonempty union");
    for &s in &own {
        if u < widths[s] {
            slab = s;
            break;
        }
        u -= widths[s];
    }
    let left: f64 = -1.0 + widths[..slab].iter().sum::<f64>() * 2.0 / total;
    Ok(left + (u / widths[slab]).min(1.0) * widths[slab] * 2.0 / total)
}

/// Renders a latent onto the block's pattern with iid pixel noise, mapped
/// into `[0, 1]` around mid-gray.
pub fn render_latent(z: f64, pattern: &[f64], noise_sd: f64, rng: &mut RngStream) -> Vec<f64> {
    pattern
        .iter()
        .map(|&u| {
            let noise = if noise_sd > 0.0 {
                rng.normal(0.0, noise_sd)
            } else {
                0.0
            };
            (0.5 + RENDER_GAIN * z * u + noise).clamp(0.0, 1.0)
        })
        .collect()
}

/// One synthetic patch (pattern supplied by its block source).
pub fn synthetic_block(
    k_pieces: usize,
    noise_sd: f64,
    label: u8,
    pattern: &[f64],
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let z = synthetic_latent(k_pieces, label, rng)?;
    Ok(render_latent(z, pattern, noise_sd, rng))
}

/// Filters a decoded image set down to two classes and converts to 32x32
/// grayscale patches.
///
/// RGB converts by luminance `0.299 R + 0.587 G + 0.114 B` (rounded); 28x28
/// images are zero-padded by 2 pixels per side. `class_pair.0` maps to
/// label 0.
pub fn make_block_source(
    imgs: &RawImages,
    labels: &[u8],
    class_pair: (u8, u8),
    class_names: (&str, &str),
    name: &str,
) -> Result<BlockSource> {
    if imgs.count != labels.len() {
        return Err(Error::CountMismatch {
            images: imgs.count,
            labels: labels.len(),
        });
    }
    if !(imgs.rows == 28 && imgs.cols == 28 || imgs.rows == BLOCK_SIDE && imgs.cols == BLOCK_SIDE) {
        return Err(Error::InvalidArgument {
            op: "make_block_source",
            what: format!("unsupported image size {}x{}", imgs.rows, imgs.cols),
        });
    }
    let plane = imgs.rows * imgs.cols;
    let mut class0 = Vec::new();
    let mut class1 = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        let target = if label == class_pair.0 {
            &mut class0
        } else if label == class_pair.1 {
            &mut class1
        } else {
            continue;
        };
        let offset = i * plane * imgs.channels;
        let gray: Vec<u8> = match imgs.channels {
            1 => imgs.data[offset..offset + plane].to_vec(),
            3 => (0..plane)
                .map(|p| {
                    let r = f64::from(imgs.data[offset + p]);
                    let g = f64::from(imgs.data[offset + plane + p]);
                    let b = f64::from(imgs.data[offset + 2 * plane + p]);
                    (0.299 * r + 0.587 * g + 0.114 * b).round() as u8
                })
                .collect(),
            other => {
                return Err(Error::InvalidArgument {
                    op: "make_block_source",
                    what: format!("unsupported channel count {other}"),
                })
            }
        };
        if imgs.rows == BLOCK_SIDE {
            target.extend_from_slice(&gray);
        } else {
            // Centered zero padding, 2 px per side.
            let mut patch = vec![0u8; BLOCK_PIXELS];
            for r in 0..28 {
                let dst = (r + 2) * BLOCK_SIDE + 2;
                patch[dst..dst + 28].copy_from_slice(&gray[r * 28..(r + 1) * 28]);
            }
            target.extend_from_slice(&patch);
        }
    }
    if class0.is_empty() {
        return Err(Error::MissingClass { class: class_pair.0 });
    }
    if class1.is_empty() {
        return Err(Error::MissingClass { class: class_pair.1 });
    }
    Ok(BlockSource::Pool {
        name: name.to_string(),
        class_pair: (class_names.0.to_string(), class_names.1.to_string()),
        class0,
        class1,
    })
}

/// Generation provenance stored alongside every collage dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub sources: Vec<SourceSpec>,
    pub seed: u64,
}

/// Labelled multi-block images plus split metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CollageDataset {
    /// One 64x64 image per row, values in `[0, 1]`.
    pub images: Matrix,
    pub labels: Vec<u8>,
    pub layout: BlockLayout,
    /// Per-example block placement when shuffled: `perms[i][pos]` is the
    /// source index shown at position `pos`.
    pub perms: Option<Vec<[u8; 4]>>,
    pub split: SplitKind,
    pub manifest: DatasetManifest,
}

/// Precomputed feature vectors with binary labels, for frozen-extractor
/// experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub vectors: Matrix,
    pub labels: Vec<u8>,
    pub name: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Collage(CollageDataset),
    Feature(FeatureDataset),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Collage(d) => d.labels.len(),
            Dataset::Feature(d) => d.labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> &[u8] {
        match self {
            Dataset::Collage(d) => &d.labels,
            Dataset::Feature(d) => &d.labels,
        }
    }
}

/// Builds one collage split, also returning the per-example class shown by
/// each block (indexed by source), which tests use to verify the shortcut
/// structure.
///
/// Labels are a balanced shuffled assignment (exactly half ones, +-1 when
/// `n` is odd). Per example: position permutation (shuffled layout only),
/// then per position a class draw (label if predictive, coin otherwise) and
/// a patch draw. Everything comes from the single `rng`, so a `(seed,
/// stream)` pair fixes the dataset bytes.
pub fn build_collages_traced(
    sources: &[BlockSource; 4],
    split: SplitKind,
    n: usize,
    layout: BlockLayout,
    rng: &mut RngStream,
) -> Result<(CollageDataset, Vec<[u8; 4]>)> {
    if n == 0 {
        return Err(Error::Empty { what: "requested dataset" });
    }
    let mut labels = vec![0u8; n - n / 2];
    labels.extend(std::iter::repeat(1u8).take(n / 2));
    rng.shuffle(&mut labels);

    let mut images = Matrix::zeros(n, COLLAGE_PIXELS);
    let mut perms: Vec<[u8; 4]> = Vec::new();
    let mut classes = vec![[0u8; 4]; n];
    for i in 0..n {
        let label = labels[i];
        let mut perm = [0u8, 1, 2, 3];
        if layout == BlockLayout::Shuffled {
            rng.shuffle(&mut perm);
            perms.push(perm);
        }
        let row = images.row_mut(i);
        for (pos, &src_idx) in perm.iter().enumerate() {
            let src_idx = src_idx as usize;
            let class = if split.predictive(src_idx) {
                label
            } else {
                rng.coin()
            };
            classes[i][src_idx] = class;
            let patch = sources[src_idx].draw(class, rng)?;
            let base_r = (pos / 2) * BLOCK_SIDE;
            let base_c = (pos % 2) * BLOCK_SIDE;
            for r in 0..BLOCK_SIDE {
                let dst = (base_r + r) * COLLAGE_SIDE + base_c;
                row[dst..dst + BLOCK_SIDE]
                    .copy_from_slice(&patch[r * BLOCK_SIDE..(r + 1) * BLOCK_SIDE]);
            }
        }
    }
    let dataset = CollageDataset {
        images,
        labels,
        layout,
        perms: if layout == BlockLayout::Shuffled {
            Some(perms)
        } else {
            None
        },
        split,
        manifest: DatasetManifest {
            sources: sources.iter().map(BlockSource::spec).collect(),
            seed: rng.seed(),
        },
    };
    Ok((dataset, classes))
}

pub fn build_collages(
    sources: &[BlockSource; 4],
    split: SplitKind,
    n: usize,
    layout: BlockLayout,
    rng: &mut RngStream,
) -> Result<CollageDataset> {
    Ok(build_collages_traced(sources, split, n, layout, rng)?.0)
}

/// Non-overlapping average pooling of one square image.
pub fn downsample(image: &[f64], factor: usize) -> Result<Vec<f64>> {
    let side = (image.len() as f64).sqrt().round() as usize;
    if side * side != image.len() {
        return Err(Error::InvalidArgument {
            op: "downsample",
            what: format!("image length {} is not a square", image.len()),
        });
    }
    if factor == 0 || side % factor != 0 {
        return Err(Error::InvalidArgument {
            op: "downsample",
            what: format!("factor {factor} does not divide side {side}"),
        });
    }
    let out_side = side / factor;
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; out_side * out_side];
    for r in 0..side {
        let or = r / factor;
        for c in 0..side {
            out[or * out_side + c / factor] += image[r * side + c];
        }
    }
    for v in &mut out {
        *v *= inv;
    }
    Ok(out)
}

/// Pools every row of an image matrix.
pub fn downsample_images(images: &Matrix, factor: usize) -> Result<Matrix> {
    if images.rows() == 0 {
        return Err(Error::Empty { what: "image set" });
    }
    let first = downsample(images.row(0), factor)?;
    let cols = first.len();
    let mut out = Matrix::zeros(images.rows(), cols);
    out.row_mut(0).copy_from_slice(&first);
    for r in 1..images.rows() {
        let pooled = downsample(images.row(r), factor)?;
        out.row_mut(r).copy_from_slice(&pooled);
    }
    Ok(out)
}
