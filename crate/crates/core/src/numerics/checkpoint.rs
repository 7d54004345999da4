//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "RKGPARAM"
//! version  u32      1
//! count    u32
//! per tensor:
//!   name_len u32, name utf-8
//!   ndim u32, dims u64 * ndim
//!   data f64 * prod(dims)
//! ```

use std::fs;
use std::path::Path;

use crate::scalar::Scalar;

use super::params::ParameterSet;
use super::tensor::Tensor;
use super::NumericsError;

pub const MAGIC: &[u8; 8] = b"RKGPARAM";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint<T: Scalar>(params: &ParameterSet<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NumericsError> {
        if self.pos + n > self.buf.len() {
            return Err(NumericsError::Checkpoint(format!(
                "truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NumericsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NumericsError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ParameterSet<T>, NumericsError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(NumericsError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NumericsError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let count = r.u32()?;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| NumericsError::Checkpoint("non-utf8 name".into()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| r.u64().map(|b| T::lit(f64::from_bits(b))))
            .collect::<Result<Vec<_>, _>>()?;
        params.insert(&name, Tensor::from_vec(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(NumericsError::Checkpoint("trailing bytes".into()));
    }
    Ok(params)
}

pub fn save_checkpoint<T: Scalar>(
    params: &ParameterSet<T>,
    path: impl AsRef<Path>,
) -> Result<(), NumericsError> {
    fs::write(path.as_ref(), encode_checkpoint(params))
        .map_err(|e| NumericsError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
) -> Result<ParameterSet<T>, NumericsError> {
    let bytes = fs::read(path.as_ref()).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(vals in proptest::collection::vec(-1e6f64..1e6, 1..40), cols in 1usize..5) {
            let rows = vals.len().div_ceil(cols);
            let mut data = vals.clone();
            data.resize(rows * cols, 0.25);
            let mut p = ParameterSet::new();
            p.insert("layer0/w", Tensor::matrix(rows, cols, data).unwrap()).unwrap();
            p.insert("b", Tensor::scalar(vals[0])).unwrap();
            let back: ParameterSet<f64> = decode_checkpoint(&encode_checkpoint(&p)).unwrap();
            prop_assert_eq!(back, p);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut p = ParameterSet::<f64>::new();
        p.insert("w", Tensor::scalar(1.0)).unwrap();
        let mut bytes = encode_checkpoint(&p);
        assert!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode_checkpoint::<f64>(&bytes).is_err());
    }
}
