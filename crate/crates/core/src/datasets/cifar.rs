//! CIFAR-10 binary batch parsing: 3073-byte records of one label byte
//! followed by 3072 bytes of channel-planar RGB (row-major 32x32).

use super::{RawImages, BLOCK_SIDE};
use crate::error::{Error, Result};

pub const CIFAR_RECORD: usize = 3073;
const CIFAR_PLANE: usize = BLOCK_SIDE * BLOCK_SIDE;

pub fn parse_cifar10_bin(bytes: &[u8]) -> Result<(RawImages, Vec<u8>)> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::BadRecordSize {
            what: "cifar10 batch",
            len: bytes.len(),
            record: CIFAR_RECORD,
        });
    }
    let count = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * 3 * CIFAR_PLANE);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(rec[0]);
        data.extend_from_slice(&rec[1..]);
    }
    Ok((
        RawImages {
            count,
            rows: BLOCK_SIDE,
            cols: BLOCK_SIDE,
            channels: 3,
            data,
        },
        labels,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::make_block_source;

    fn red_record(label: u8) -> Vec<u8> {
        let mut rec = vec![0u8; CIFAR_RECORD];
        rec[0] = label;
        for p in 0..CIFAR_PLANE {
            rec[1 + p] = 255; // red plane
        }
        rec
    }

    #[test]
    fn single_record_roundtrip() {
        let rec = red_record(1);
        let (imgs, labels) = parse_cifar10_bin(&rec).unwrap();
        assert_eq!(imgs.count, 1);
        assert_eq!(labels, vec![1]);
        assert_eq!(imgs.data[0], 255);
        assert_eq!(imgs.data[CIFAR_PLANE], 0);
    }

    #[test]
    fn empty_input_is_empty_dataset() {
        let (imgs, labels) = parse_cifar10_bin(&[]).unwrap();
        assert_eq!(imgs.count, 0);
        assert!(labels.is_empty());
    }

    #[test]
    fn bad_length_is_rejected() {
        match parse_cifar10_bin(&[0u8; 3072]) {
            Err(Error::BadRecordSize { record, .. }) => assert_eq!(record, CIFAR_RECORD),
            other => panic!("expected BadRecordSize, got {other:?}"),
        }
    }

    #[test]
    fn pure_red_luminance_is_76() {
        let mut bytes = red_record(0);
        bytes.extend_from_slice(&red_record(1));
        let (imgs, labels) = parse_cifar10_bin(&bytes).unwrap();
        let src = make_block_source(&imgs, &labels, (0, 1), ("a", "b"), "cifar").unwrap();
        match src {
            crate::datasets::BlockSource::Pool { class0, .. } => {
                // 0.299 * 255 = 76.245 -> 76
                assert_eq!(class0[0], 76);
            }
            _ => panic!("expected pool"),
        }
    }
}
