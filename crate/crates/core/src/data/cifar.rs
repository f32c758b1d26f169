//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 3072 pixel bytes in R, G, B plane order (each plane 32×32 row-major).

use crate::error::{Error, Result};

pub const RECORD_LEN: usize = 1 + IMAGE_LEN;
pub const IMAGE_LEN: usize = 3 * 32 * 32;
pub const NUM_CLASSES: usize = 10;

/// Decoded batch: `N` labels and `N·3072` raw pixel bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarBatch {
    pub labels: Vec<u8>,
    pub pixels: Vec<u8>,
}

impl CifarBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn parse_cifar10_batch(bytes: &[u8]) -> Result<CifarBatch> {
    if bytes.is_empty() {
        return Err(Error::parse(0, "empty CIFAR-10 batch"));
    }
    let rem = bytes.len() % RECORD_LEN;
    if rem != 0 {
        return Err(Error::parse(
            bytes.len() - rem,
            format!(
                "length {} is not a multiple of {RECORD_LEN}: trailing partial record of {rem} bytes",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * IMAGE_LEN);
    for (i, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        if rec[0] as usize >= NUM_CLASSES {
            return Err(Error::parse(
                i * RECORD_LEN,
                format!("record {i} has label {} outside 0..{NUM_CLASSES}", rec[0]),
            ));
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(CifarBatch { labels, pixels })
}

pub fn write_cifar10_batch(batch: &CifarBatch) -> Result<Vec<u8>> {
    if batch.pixels.len() != batch.labels.len() * IMAGE_LEN {
        return Err(Error::dim("pixel payload does not match label count"));
    }
    let mut out = Vec::with_capacity(batch.len() * RECORD_LEN);
    for (label, img) in batch.labels.iter().zip(batch.pixels.chunks_exact(IMAGE_LEN)) {
        out.push(*label);
        out.extend_from_slice(img);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend((0..IMAGE_LEN).map(|i| (i / 1024) as u8 * 100));
        r
    }

    #[test]
    fn single_record_plane_order() {
        let b = parse_cifar10_batch(&record(7)).unwrap();
        assert_eq!(b.labels, vec![7]);
        assert_eq!(b.pixels[0], 0);
        assert_eq!(b.pixels[1024], 100);
        assert_eq!(b.pixels[2048], 200);
    }

    #[test]
    fn label_out_of_range() {
        let mut bytes = record(1);
        bytes.extend(record(10));
        assert!(matches!(
            parse_cifar10_batch(&bytes),
            Err(Error::Parse { offset: RECORD_LEN, .. })
        ));
    }

    #[test]
    fn non_divisible_length() {
        let bytes = record(3);
        assert!(matches!(
            parse_cifar10_batch(&bytes[..100]),
            Err(Error::Parse { offset: 0, .. })
        ));
    }

    #[test]
    fn roundtrip() {
        let mut bytes = record(2);
        bytes.extend(record(9));
        let b = parse_cifar10_batch(&bytes).unwrap();
        assert_eq!(write_cifar10_batch(&b).unwrap(), bytes);
    }
}
