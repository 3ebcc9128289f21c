//! The IDX format: a big-endian magic number whose low byte counts the
//! dimensions, big-endian 32-bit dimension sizes, then unsigned bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Unsigned-byte payload type code.
const UBYTE: u32 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: 4,
            found: bytes.len(),
        });
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    let ndims = (magic & 0xff) as usize;
    if magic >> 8 != UBYTE || !(1..=4).contains(&ndims) {
        return Err(Error::BadMagic(magic));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::Truncated {
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_add(header).map(|_| n))
        .ok_or(Error::DimOverflow)?;
    let found = bytes.len() - header;
    if found < payload {
        return Err(Error::Truncated {
            expected: payload,
            found,
        });
    }
    if found > payload {
        return Err(Error::TrailingBytes { extra: found - payload });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// N × D matrix (D = product of the trailing dimensions) scaled to [0, 1].
pub fn load_idx(path: impl AsRef<Path>) -> Result<Matrix> {
    let arr = parse_idx(&std::fs::read(path)?)?;
    let n = arr.dims[0];
    let d: usize = arr.dims[1..].iter().product();
    Matrix::new(n, d, arr.data.iter().map(|&b| b as f64 / 255.0).collect())
}

/// Raw bytes of a one-dimensional IDX file.
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let arr = parse_idx(&std::fs::read(path)?)?;
    if arr.dims.len() != 1 {
        return Err(Error::Data(format!(
            "label file has {} dimensions, expected 1",
            arr.dims.len()
        )));
    }
    Ok(arr.data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Binarize {
    /// `x ≥ t → 1`, else 0.
    Threshold(f64),
    /// Input must already be 0/1.
    PreBinarized,
}

pub fn binarize(data: &Matrix, mode: Binarize) -> Result<Matrix> {
    if let Some(x) = data.data().iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::Data(format!("value {x} outside [0, 1]")));
    }
    let out = match mode {
        Binarize::Threshold(t) => data.data().iter().map(|&x| if x >= t { 1.0 } else { 0.0 }).collect(),
        Binarize::PreBinarized => {
            if let Some(x) = data.data().iter().find(|&&x| x != 0.0 && x != 1.0) {
                return Err(Error::Data(format!("pre-binarized data contains {x}")));
            }
            data.data().to_vec()
        }
    };
    Matrix::new(data.rows(), data.cols(), out)
}
