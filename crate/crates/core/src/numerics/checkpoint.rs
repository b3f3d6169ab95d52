//! Checkpoint container: a little-endian binary holding named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "DMIF"
//! version u32      currently 1
//! meta    u32 length + UTF-8 JSON (model hyperparameters etc.)
//! count   u32      number of tensor records
//! record  u32 name length, name bytes,
//!         u8 dtype tag (1 = f32, 2 = f64),
//!         u8 rank, rank x u32 dims,
//!         raw values (dims product x dtype size)
//! ```
//!
//! Optimizer state rides along under reserved `__adam/...` names.

use super::scalar::Dtype;
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"DMIF";
pub const VERSION: u32 = 1;

pub const ADAM_PREFIX: &str = "__adam/";
pub const ADAM_STATE_NAME: &str = "__adam/state";

/// One named tensor; values are carried as f64 (lossless for both dtypes),
/// `dtype` records the on-disk representation.
#[derive(Debug, Clone)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn new(name: impl Into<String>, dtype: Dtype, shape: Vec<usize>, data: Vec<f64>) -> Self {
        TensorRecord {
            name: name.into(),
            dtype,
            shape,
            data,
        }
    }
}

pub fn write_checkpoint(path: &Path, meta_json: &str, records: &[TensorRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let meta = meta_json.as_bytes();
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(meta)?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for r in records {
        let name = r.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[r.dtype.tag(), r.shape.len() as u8])?;
        let numel: usize = r.shape.iter().product();
        if numel != r.data.len() {
            return Err(Error::format(format!(
                "tensor {}: shape {:?} vs {} values",
                r.name,
                r.shape,
                r.data.len()
            )));
        }
        for &d in &r.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        match r.dtype {
            Dtype::F32 => {
                for &v in &r.data {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
            Dtype::F64 => {
                for &v in &r.data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(String, Vec<TensorRecord>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("bad magic, not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let meta_len = read_u32(&mut r)? as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)?;
    let meta = String::from_utf8(meta).map_err(|_| Error::format("meta is not UTF-8"))?;
    let count = read_u32(&mut r)? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::format("name is not UTF-8"))?;
        let mut tags = [0u8; 2];
        r.read_exact(&mut tags)?;
        let dtype = Dtype::from_tag(tags[0])
            .ok_or_else(|| Error::format(format!("unknown dtype tag {}", tags[0])))?;
        let rank = tags[1] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        match dtype {
            Dtype::F32 => {
                let mut buf = vec![0u8; numel * 4];
                r.read_exact(&mut buf)?;
                for c in buf.chunks_exact(4) {
                    data.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
                }
            }
            Dtype::F64 => {
                let mut buf = vec![0u8; numel * 8];
                r.read_exact(&mut buf)?;
                for c in buf.chunks_exact(8) {
                    data.push(f64::from_le_bytes([
                        c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7],
                    ]));
                }
            }
        }
        records.push(TensorRecord {
            name,
            dtype,
            shape,
            data,
        });
    }
    Ok((meta, records))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dmif");
        let records = vec![
            TensorRecord::new("a.w", Dtype::F64, vec![2, 3], vec![1.0, -2.5, 3.0, 0.0, 1e-9, 7.0]),
            TensorRecord::new("b", Dtype::F32, vec![2], vec![0.25, -0.5]),
        ];
        write_checkpoint(&path, r#"{"k":1}"#, &records).unwrap();
        let (meta, back) = read_checkpoint(&path).unwrap();
        assert_eq!(meta, r#"{"k":1}"#);
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].name, "a.w");
        assert_eq!(back[0].shape, vec![2, 3]);
        assert_eq!(back[0].data, records[0].data);
        assert_eq!(back[1].dtype, Dtype::F32);
        assert_eq!(back[1].data, vec![0.25, -0.5]);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOPExxxxxxxxxxxx").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
