//! The `DVGD` dataset container: a versioned, checksummed binary layout that
//! round-trips bit-exactly.
//!
//! Layout (all integers little-endian, version 1):
//!
//! ```text
//! magic "DVGD" | version u8 | kind u8 (0 collage, 1 feature)
//! collage: split u8 | block u8 | layout u8 | n u32 | pixels u32 | seed u64
//!          n_sources u8 | per source: (name, class0, class1) as u16-len strings
//!          has_perms u8 | perms n*4 u8 if present
//!          labels n u8 | images n*pixels f64
//! feature: n u32 | dim u32 | seed u64 | name u16-len string
//!          labels n u8 | vectors n*dim f64
//! checksum u64  (FNV-1a over every preceding byte, header included)
//! ```
//!
//! A separate raw block-source container ingests user-converted patch data:
//! `count u32 | rows u32 (=32) | cols u32 (=32) | count*1024 u8 pixels |
//! count u8 binary labels`.

use super::{
    BlockLayout, BlockSource, CollageDataset, Dataset, DatasetManifest, FeatureDataset,
    SourceSpec, SplitKind, BLOCK_PIXELS, BLOCK_SIDE,
};
use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::matrix::Matrix;

pub const DATASET_MAGIC: [u8; 4] = *b"DVGD";
pub const DATASET_VERSION: u8 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.off + n > self.bytes.len() {
            return Err(Error::Truncated {
                what,
                needed: self.off + n,
                have: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &'static str) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()) as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::InvalidArgument {
            op: "dataset_from_bytes",
            what: format!("non-utf8 {what}"),
        })
    }

    fn f64s(&mut self, count: usize, what: &'static str) -> Result<Vec<f64>> {
        let raw = self.take(count * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn push_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn push_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    out.reserve(vals.len() * 8);
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn dataset_to_bytes(dataset: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&DATASET_MAGIC);
    out.push(DATASET_VERSION);
    match dataset {
        Dataset::Collage(d) => {
            out.push(0);
            let (split, block) = d.split.code();
            out.push(split);
            out.push(block);
            out.push(match d.layout {
                BlockLayout::Ordered => 0,
                BlockLayout::Shuffled => 1,
            });
            out.extend_from_slice(&(d.labels.len() as u32).to_le_bytes());
            out.extend_from_slice(&(d.images.cols() as u32).to_le_bytes());
            out.extend_from_slice(&d.manifest.seed.to_le_bytes());
            out.push(d.manifest.sources.len() as u8);
            for s in &d.manifest.sources {
                push_string(&mut out, &s.name);
                push_string(&mut out, &s.class_pair.0);
                push_string(&mut out, &s.class_pair.1);
            }
            match &d.perms {
                Some(perms) => {
                    out.push(1);
                    for p in perms {
                        out.extend_from_slice(p);
                    }
                }
                None => out.push(0),
            }
            out.extend_from_slice(&d.labels);
            push_f64s(&mut out, d.images.data());
        }
        Dataset::Feature(d) => {
            out.push(1);
            out.extend_from_slice(&(d.labels.len() as u32).to_le_bytes());
            out.extend_from_slice(&(d.vectors.cols() as u32).to_le_bytes());
            out.extend_from_slice(&d.seed.to_le_bytes());
            push_string(&mut out, &d.name);
            out.extend_from_slice(&d.labels);
            push_f64s(&mut out, d.vectors.data());
        }
    }
    let checksum = fnv1a64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 14 {
        return Err(Error::Truncated {
            what: "dataset container",
            needed: 14,
            have: bytes.len(),
        });
    }
    if bytes[0..4] != DATASET_MAGIC {
        return Err(Error::BadMagic {
            found: u32::from_be_bytes(bytes[0..4].try_into().unwrap()),
            expected: u32::from_be_bytes(DATASET_MAGIC),
        });
    }
    if bytes[4] != DATASET_VERSION {
        return Err(Error::Version {
            what: "dataset container",
            found: bytes[4],
            supported: DATASET_VERSION,
        });
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(Error::Checksum {
            what: "dataset container".into(),
            stored,
            computed,
        });
    }
    let mut r = Reader {
        bytes: body,
        off: 5,
    };
    let kind = r.u8("dataset kind")?;
    match kind {
        0 => {
            let split_code = r.u8("split")?;
            let block = r.u8("split block")?;
            let split = SplitKind::from_code(split_code, block)?;
            let layout = match r.u8("layout")? {
                0 => BlockLayout::Ordered,
                1 => BlockLayout::Shuffled,
                other => {
                    return Err(Error::InvalidArgument {
                        op: "dataset_from_bytes",
                        what: format!("unknown layout code {other}"),
                    })
                }
            };
            let n = r.u32("example count")? as usize;
            let pixels = r.u32("pixel count")? as usize;
            let seed = r.u64("seed")?;
            let n_sources = r.u8("source count")? as usize;
            let mut sources = Vec::with_capacity(n_sources);
            for _ in 0..n_sources {
                let name = r.string("source name")?;
                let c0 = r.string("class name")?;
                let c1 = r.string("class name")?;
                sources.push(SourceSpec {
                    name,
                    class_pair: (c0, c1),
                });
            }
            let perms = if r.u8("perm flag")? == 1 {
                let raw = r.take(n * 4, "perms")?;
                Some(
                    raw.chunks_exact(4)
                        .map(|c| [c[0], c[1], c[2], c[3]])
                        .collect(),
                )
            } else {
                None
            };
            let labels = r.take(n, "labels")?.to_vec();
            let images = Matrix::from_vec(n, pixels, r.f64s(n * pixels, "images")?)?;
            Ok(Dataset::Collage(CollageDataset {
                images,
                labels,
                layout,
                perms,
                split,
                manifest: DatasetManifest { sources, seed },
            }))
        }
        1 => {
            let n = r.u32("example count")? as usize;
            let dim = r.u32("feature dim")? as usize;
            let seed = r.u64("seed")?;
            let name = r.string("dataset name")?;
            let labels = r.take(n, "labels")?.to_vec();
            let vectors = Matrix::from_vec(n, dim, r.f64s(n * dim, "vectors")?)?;
            Ok(Dataset::Feature(FeatureDataset {
                vectors,
                labels,
                name,
                seed,
            }))
        }
        other => Err(Error::InvalidArgument {
            op: "dataset_from_bytes",
            what: format!("unknown dataset kind {other}"),
        }),
    }
}

/// Checksum of the serialized container, as recorded in run manifests.
pub fn dataset_checksum(bytes: &[u8]) -> u64 {
    fnv1a64(bytes)
}

pub fn save_dataset(path: &std::path::Path, dataset: &Dataset) -> Result<()> {
    let bytes = dataset_to_bytes(dataset);
    atomic_write(path, &bytes)
}

pub fn load_dataset(path: &std::path::Path) -> Result<Dataset> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    dataset_from_bytes(&bytes)
}

/// Writes via a sibling temp file and rename, so failed runs leave no
/// partial artifact behind.
pub fn atomic_write(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a user-converted raw block source.
pub fn read_raw_block_source(
    bytes: &[u8],
    name: &str,
    class_names: (&str, &str),
) -> Result<BlockSource> {
    let mut r = Reader { bytes, off: 0 };
    let count = r.u32("raw block source count")? as usize;
    let rows = r.u32("raw block source rows")? as usize;
    let cols = r.u32("raw block source cols")? as usize;
    if rows != BLOCK_SIDE || cols != BLOCK_SIDE {
        return Err(Error::InvalidArgument {
            op: "read_raw_block_source",
            what: format!("patches must be {BLOCK_SIDE}x{BLOCK_SIDE}, got {rows}x{cols}"),
        });
    }
    let pixels = r.take(count * BLOCK_PIXELS, "raw block source pixels")?;
    let labels = r.take(count, "raw block source labels")?;
    let mut class0 = Vec::new();
    let mut class1 = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        let patch = &pixels[i * BLOCK_PIXELS..(i + 1) * BLOCK_PIXELS];
        match label {
            0 => class0.extend_from_slice(patch),
            1 => class1.extend_from_slice(patch),
            other => {
                return Err(Error::InvalidArgument {
                    op: "read_raw_block_source",
                    what: format!("labels must be binary, found {other}"),
                })
            }
        }
    }
    if class0.is_empty() {
        return Err(Error::MissingClass { class: 0 });
    }
    if class1.is_empty() {
        return Err(Error::MissingClass { class: 1 });
    }
    Ok(BlockSource::Pool {
        name: name.to_string(),
        class_pair: (class_names.0.to_string(), class_names.1.to_string()),
        class0,
        class1,
    })
}

pub fn write_raw_block_source(patches: &[u8], labels: &[u8]) -> Vec<u8> {
    debug_assert_eq!(patches.len(), labels.len() * BLOCK_PIXELS);
    let mut out = Vec::with_capacity(12 + patches.len() + labels.len());
    out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    out.extend_from_slice(&(BLOCK_SIDE as u32).to_le_bytes());
    out.extend_from_slice(&(BLOCK_SIDE as u32).to_le_bytes());
    out.extend_from_slice(patches);
    out.extend_from_slice(labels);
    out
}
