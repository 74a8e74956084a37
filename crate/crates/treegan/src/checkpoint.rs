//! The TGN1 container: one binary file holding a JSON config block and a
//! named-tensor table, checksummed with a CRC32 trailer. Training
//! checkpoints and trained feature extractors both live in this format.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::Tensor;
use crate::wire;

const MAGIC: [u8; 4] = *b"TGN1";
const VERSION: u16 = 1;

/// Write a container: config JSON, then (name, dtype, shape, raw
/// little-endian data) per tensor, then the checksum.
pub fn write_container<T: Scalar>(
    path: &Path,
    config_json: &str,
    entries: &[(String, Tensor<T>)],
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    wire::put_u16(&mut buf, VERSION);
    let cj = config_json.as_bytes();
    wire::put_u32(&mut buf, cj.len() as u32);
    buf.extend_from_slice(cj);
    wire::put_u32(&mut buf, entries.len() as u32);
    for (name, tensor) in entries {
        let nb = name.as_bytes();
        wire::put_u16(&mut buf, nb.len() as u16);
        buf.extend_from_slice(nb);
        buf.push(T::DTYPE.code());
        buf.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            wire::put_u32(&mut buf, d as u32);
        }
        for &v in tensor.data() {
            v.write_le(&mut buf);
        }
    }
    wire::seal(&mut buf);
    std::fs::write(path, buf)?;
    Ok(())
}

/// Read a container written by [`write_container`] with the same scalar
/// type. Mixing precisions is refused rather than silently converted, so
/// resumed runs stay bit-exact.
pub fn read_container<T: Scalar>(path: &Path) -> Result<(String, Vec<(String, Tensor<T>)>)> {
    let bytes = std::fs::read(path)?;
    let what = format!("checkpoint {}", path.display());
    let body = wire::unseal(&bytes, &what)?;
    let mut c = wire::Cursor::new(body, &what);
    c.expect_magic(&MAGIC)?;
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::format(format!(
            "{what}: unsupported format version {version}"
        )));
    }
    let clen = c.u32()? as usize;
    let config_json = String::from_utf8(c.take(clen)?.to_vec())
        .map_err(|e| Error::format(format!("{what}: config block is not UTF-8: {e}")))?;
    let count = c.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = c.u16()? as usize;
        let name = String::from_utf8(c.take(nlen)?.to_vec())
            .map_err(|e| Error::format(format!("{what}: tensor name is not UTF-8: {e}")))?;
        let dtype = Dtype::from_code(c.u8()?)
            .ok_or_else(|| Error::format(format!("{what}: unknown dtype for '{name}'")))?;
        if dtype != T::DTYPE {
            return Err(Error::format(format!(
                "{what}: tensor '{name}' is {dtype:?} but this run uses {:?}; rerun with the matching precision",
                T::DTYPE
            )));
        }
        let ndim = c.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = c.take(numel * dtype.size())?;
        let data = raw
            .chunks_exact(dtype.size())
            .map(|chunk| T::read_le(chunk))
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    if !c.done() {
        return Err(Error::format(format!(
            "{what}: {} trailing bytes after tensor table",
            c.remaining()
        )));
    }
    Ok((config_json, entries))
}

/// The element type a container was written with, read from its first
/// tensor entry. Lets a front end dispatch to the matching precision before
/// committing to a typed load.
pub fn peek_dtype(path: &Path) -> Result<Dtype> {
    let bytes = std::fs::read(path)?;
    let what = format!("checkpoint {}", path.display());
    let body = wire::unseal(&bytes, &what)?;
    let mut c = wire::Cursor::new(body, &what);
    c.expect_magic(&MAGIC)?;
    let _version = c.u16()?;
    let clen = c.u32()? as usize;
    c.take(clen)?;
    let count = c.u32()?;
    if count == 0 {
        return Err(Error::format(format!("{what}: no tensors to infer dtype")));
    }
    let nlen = c.u16()? as usize;
    c.take(nlen)?;
    Dtype::from_code(c.u8()?).ok_or_else(|| Error::format(format!("{what}: unknown dtype code")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peek_dtype_reports_stored_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tgn");
        write_container::<f32>(&path, "{}", &[("w".into(), Tensor::scalar(1.0))]).unwrap();
        assert_eq!(peek_dtype(&path).unwrap(), Dtype::F32);
        write_container::<f64>(&path, "{}", &[("w".into(), Tensor::scalar(1.0))]).unwrap();
        assert_eq!(peek_dtype(&path).unwrap(), Dtype::F64);
    }

    #[test]
    fn roundtrip_preserves_names_shapes_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tgn");
        let entries = vec![
            ("a.w".to_string(), Tensor::<f64>::from_rows(&[vec![1.5, -2.25], vec![0.1, 3.0]])),
            ("a.b".to_string(), Tensor::new(vec![2], vec![0.5, -0.5]).unwrap()),
        ];
        write_container(&path, "{\"kind\":\"test\"}", &entries).unwrap();
        let (json, back) = read_container::<f64>(&path).unwrap();
        assert_eq!(json, "{\"kind\":\"test\"}");
        assert_eq!(back, entries);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("c1.tgn");
        let p2 = dir.path().join("c2.tgn");
        let entries = vec![("w".to_string(), Tensor::<f32>::full(vec![3, 2], 0.125))];
        write_container(&p1, "{}", &entries).unwrap();
        let (json, back) = read_container::<f32>(&p1).unwrap();
        write_container(&p2, &json, &back).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncation_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tgn");
        write_container::<f64>(&path, "{}", &[("w".into(), Tensor::scalar(1.0))]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_container::<f64>(&path).is_err());
    }

    #[test]
    fn precision_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tgn");
        write_container::<f32>(&path, "{}", &[("w".into(), Tensor::scalar(1.0))]).unwrap();
        let err = read_container::<f64>(&path).unwrap_err().to_string();
        assert!(err.contains("precision"), "{err}");
    }
}
