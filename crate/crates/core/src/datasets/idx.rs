//! IDX container parsing (the MNIST / Fashion-MNIST distribution format).
//!
//! Big-endian magic `0x00000803` marks a u8 image tensor (count, rows, cols);
//! `0x00000801` marks a u8 label vector.

use super::RawImages;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone)]
pub enum IdxFile {
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        data: Vec<u8>,
    },
    Labels(Vec<u8>),
}

fn read_u32_be(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
        .ok_or(Error::Truncated {
            what,
            needed: offset + 4,
            have: bytes.len(),
        })
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile> {
    let magic = read_u32_be(bytes, 0, "idx header")?;
    match magic {
        IDX_IMAGES_MAGIC => {
            let count = read_u32_be(bytes, 4, "idx image header")? as usize;
            let rows = read_u32_be(bytes, 8, "idx image header")? as usize;
            let cols = read_u32_be(bytes, 12, "idx image header")? as usize;
            let needed = 16 + count * rows * cols;
            if bytes.len() < needed {
                return Err(Error::Truncated {
                    what: "idx image payload",
                    needed,
                    have: bytes.len(),
                });
            }
            Ok(IdxFile::Images {
                count,
                rows,
                cols,
                data: bytes[16..needed].to_vec(),
            })
        }
        IDX_LABELS_MAGIC => {
            let count = read_u32_be(bytes, 4, "idx label header")? as usize;
            let needed = 8 + count;
            if bytes.len() < needed {
                return Err(Error::Truncated {
                    what: "idx label payload",
                    needed,
                    have: bytes.len(),
                });
            }
            Ok(IdxFile::Labels(bytes[8..needed].to_vec()))
        }
        other => Err(Error::BadMagic {
            found: other,
            expected: IDX_IMAGES_MAGIC,
        }),
    }
}

/// Parses an image file and a label file together, cross-checking counts.
pub fn load_idx_pair(image_bytes: &[u8], label_bytes: &[u8]) -> Result<(RawImages, Vec<u8>)> {
    let images = match parse_idx(image_bytes)? {
        IdxFile::Images {
            count,
            rows,
            cols,
            data,
        } => RawImages {
            count,
            rows,
            cols,
            channels: 1,
            data,
        },
        IdxFile::Labels(_) => {
            return Err(Error::InvalidArgument {
                op: "load_idx_pair",
                what: "first argument is a label file, expected images".into(),
            })
        }
    };
    let labels = match parse_idx(label_bytes)? {
        IdxFile::Labels(l) => l,
        IdxFile::Images { .. } => {
            return Err(Error::InvalidArgument {
                op: "load_idx_pair",
                what: "second argument is an image file, expected labels".into(),
            })
        }
    };
    if images.count != labels.len() {
        return Err(Error::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    Ok((images, labels))
}

pub fn write_idx_images(count: usize, rows: usize, cols: usize, data: &[u8]) -> Vec<u8> {
    debug_assert_eq!(data.len(), count * rows * cols);
    let mut out = Vec::with_capacity(16 + data.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(data);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn handcrafted_two_image_file() {
        let pixels = [1u8, 2, 3, 4, 250, 251, 252, 253];
        let bytes = write_idx_images(2, 2, 2, &pixels);
        match parse_idx(&bytes).unwrap() {
            IdxFile::Images {
                count,
                rows,
                cols,
                data,
            } => {
                assert_eq!((count, rows, cols), (2, 2, 2));
                assert_eq!(data, pixels);
            }
            _ => panic!("expected images"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = write_idx_labels(&[0, 1]);
        bytes[3] = 0x99;
        match parse_idx(&bytes) {
            Err(Error::BadMagic { found, .. }) => assert_eq!(found, 0x0000_0899),
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = write_idx_images(2, 2, 2, &[0; 8]);
        match parse_idx(&bytes[..bytes.len() - 1]) {
            Err(Error::Truncated { .. }) => {}
            other => panic!("expected Truncated, got {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let imgs = write_idx_images(2, 2, 2, &[0; 8]);
        let labels = write_idx_labels(&[1]);
        match load_idx_pair(&imgs, &labels) {
            Err(Error::CountMismatch { images, labels }) => {
                assert_eq!((images, labels), (2, 1));
            }
            other => panic!("expected CountMismatch, got {other:?}"),
        }
    }

    proptest! {
        // parse . write = identity
        #[test]
        fn roundtrip_images(
            count in 0usize..4,
            rows in 1usize..6,
            cols in 1usize..6,
            seed in any::<u64>(),
        ) {
            let n = count * rows * cols;
            let data: Vec<u8> = (0..n).map(|i| ((seed >> (i % 56)) & 0xff) as u8).collect();
            let bytes = write_idx_images(count, rows, cols, &data);
            match parse_idx(&bytes).unwrap() {
                IdxFile::Images { count: c, rows: r, cols: k, data: d } => {
                    prop_assert_eq!((c, r, k), (count, rows, cols));
                    prop_assert_eq!(d, data);
                }
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn roundtrip_labels(labels in proptest::collection::vec(any::<u8>(), 0..64)) {
            let bytes = write_idx_labels(&labels);
            match parse_idx(&bytes).unwrap() {
                IdxFile::Labels(l) => prop_assert_eq!(l, labels),
                _ => prop_assert!(false),
            }
        }
    }
}
