//! CNN1 checkpoint format.
//!
//! ```text
//! "CNN1" | u32 version | u32 in_h | u32 in_w | u32 in_channels | u32 filters
//!        | u32 kernel | u32 classes | u64 param_count
//! f64 params[param_count] | f64 velocity[param_count]
//! ```
//!
//! All integers and floats are little-endian. Parameter order: filters, conv
//! biases, dense weights, dense biases.

use std::io::{ErrorKind, Read, Write};

use super::model::{CnnModel, CnnShape};
use crate::{Error, Result};

pub const CNN1_MAGIC: [u8; 4] = *b"CNN1";
pub const CNN1_VERSION: u32 = 1;
pub const CNN1_HEADER_LEN: usize = 4 + 4 * 7 + 8;

/// Writes a checkpoint; returns the number of bytes written.
pub fn write_checkpoint<W: Write>(model: &CnnModel, mut dst: W) -> Result<u64> {
    let s = model.shape;
    let mut header = Vec::with_capacity(CNN1_HEADER_LEN);
    header.extend_from_slice(&CNN1_MAGIC);
    for v in [CNN1_VERSION as usize, s.in_h, s.in_w, 1, s.filters, s.kernel, s.classes] {
        header.extend_from_slice(&(v as u32).to_le_bytes());
    }
    header.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    dst.write_all(&header)?;
    let mut body = Vec::with_capacity(16 * model.params.len());
    for v in model.params.iter().chain(&model.velocity) {
        body.extend_from_slice(&v.to_le_bytes());
    }
    dst.write_all(&body)?;
    dst.flush()?;
    Ok((header.len() + body.len()) as u64)
}

fn read_exact_or_truncated<R: Read>(src: &mut R, buf: &mut [u8], offset: u64, total: u64) -> Result<()> {
    let mut got = 0;
    while got < buf.len() {
        match src.read(&mut buf[got..]) {
            Ok(0) => {
                return Err(Error::Truncated {
                    expected: total,
                    actual: offset + got as u64,
                })
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut src: R) -> Result<CnnModel> {
    let mut header = [0u8; CNN1_HEADER_LEN];
    read_exact_or_truncated(&mut src, &mut header, 0, CNN1_HEADER_LEN as u64)?;
    if header[..4] != CNN1_MAGIC {
        return Err(Error::BadMagic {
            expected: CNN1_MAGIC,
            found: header[..4].try_into().unwrap(),
        });
    }
    let u = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let version = u(0) as u32;
    if version != CNN1_VERSION {
        return Err(Error::VersionMismatch {
            expected: CNN1_VERSION,
            found: version,
        });
    }
    if u(3) != 1 {
        return Err(Error::InvalidConfig(format!("unsupported input channel count {}", u(3))));
    }
    let shape = CnnShape {
        in_h: u(1),
        in_w: u(2),
        filters: u(4),
        kernel: u(5),
        classes: u(6),
    };
    shape.validate()?;
    let count = u64::from_le_bytes(header[32..40].try_into().unwrap());
    if count != shape.param_count() as u64 {
        return Err(Error::DimensionMismatch {
            expected: shape.param_count(),
            actual: count as usize,
        });
    }
    let total = CNN1_HEADER_LEN as u64 + 16 * count;
    let mut body = vec![0u8; 16 * count as usize];
    read_exact_or_truncated(&mut src, &mut body, CNN1_HEADER_LEN as u64, total)?;
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (params, velocity) = values.split_at(count as usize);
    CnnModel::from_parts(shape, params.to_vec(), velocity.to_vec())
}
