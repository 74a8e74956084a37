//! PCB: a minimal bit-exact multi-cloud binary container.
//!
//! Layout: magic "PCB1", version u16, cloud count u32, points-per-cloud u32,
//! flags u16 (bit 0: labels present), then per cloud a class id u16, n×3
//! float32 little-endian coordinates, and (if flagged) n×u16 labels. A CRC32
//! trailer covers everything before it.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::wire;

use super::PointCloud;

const MAGIC: [u8; 4] = *b"PCB1";
const VERSION: u16 = 1;
const FLAG_LABELS: u16 = 1;

pub fn write_pcb<T: Scalar>(path: &Path, clouds: &[PointCloud<T>]) -> Result<()> {
    if clouds.is_empty() {
        return Err(Error::contract("PCB file needs at least one cloud"));
    }
    let n = clouds[0].len();
    if clouds.iter().any(|c| c.len() != n) {
        return Err(Error::contract(
            "all clouds in one PCB file share a point count",
        ));
    }
    let labeled = clouds[0].labels.is_some();
    if clouds.iter().any(|c| c.labels.is_some() != labeled) {
        return Err(Error::contract(
            "either every cloud in a PCB file has labels or none does",
        ));
    }

    let mut buf = Vec::with_capacity(16 + clouds.len() * (2 + n * 12));
    buf.extend_from_slice(&MAGIC);
    wire::put_u16(&mut buf, VERSION);
    wire::put_u32(&mut buf, clouds.len() as u32);
    wire::put_u32(&mut buf, n as u32);
    wire::put_u16(&mut buf, if labeled { FLAG_LABELS } else { 0 });
    for cloud in clouds {
        wire::put_u16(&mut buf, cloud.class.unwrap_or(0));
        for i in 0..n {
            let p = cloud.point(i);
            for v in p {
                wire::put_f32(&mut buf, v.as_f64() as f32);
            }
        }
        if let Some(labels) = &cloud.labels {
            for &l in labels {
                wire::put_u16(&mut buf, l);
            }
        }
    }
    wire::seal(&mut buf);
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_pcb<T: Scalar>(path: &Path) -> Result<Vec<PointCloud<T>>> {
    let bytes = std::fs::read(path)?;
    let what = format!("PCB {}", path.display());
    let body = wire::unseal(&bytes, &what)?;
    let mut c = wire::Cursor::new(body, &what);
    c.expect_magic(&MAGIC)?;
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::format(format!(
            "{what}: unsupported version {version}"
        )));
    }
    let count = c.u32()? as usize;
    let n = c.u32()? as usize;
    let flags = c.u16()?;
    let labeled = flags & FLAG_LABELS != 0;

    let mut clouds = Vec::with_capacity(count);
    for _ in 0..count {
        let class = c.u16()?;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n * 3 {
            data.push(T::of_f64(c.f32()? as f64));
        }
        let labels = if labeled {
            let mut l = Vec::with_capacity(n);
            for _ in 0..n {
                l.push(c.u16()?);
            }
            Some(l)
        } else {
            None
        };
        let mut cloud = PointCloud::new(Tensor::new(vec![n, 3], data)?)?;
        cloud.labels = labels;
        cloud.class = Some(class);
        clouds.push(cloud);
    }
    if !c.done() {
        return Err(Error::format(format!(
            "{what}: {} trailing bytes after payload",
            c.remaining()
        )));
    }
    Ok(clouds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_shape, ShapeKind};

    #[test]
    fn multi_cloud_roundtrip_preserves_order_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.pcb");
        let mut clouds: Vec<PointCloud<f32>> = (0..3)
            .map(|i| sample_shape(ShapeKind::Torus, 64, i, 0.02).unwrap())
            .collect();
        for (i, c) in clouds.iter_mut().enumerate() {
            c.class = Some(i as u16);
        }
        write_pcb(&path, &clouds).unwrap();
        let back: Vec<PointCloud<f32>> = read_pcb(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.iter().zip(&clouds) {
            assert_eq!(a.points, b.points);
            assert_eq!(a.class, b.class);
        }
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.pcb");
        let clouds: Vec<PointCloud<f32>> =
            vec![sample_shape(ShapeKind::Sphere, 16, 0, 0.0).unwrap()];
        write_pcb(&path, &clouds).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        let err = read_pcb::<f32>(&path).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }

    #[test]
    fn labels_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labeled.pcb");
        let mut cloud: PointCloud<f32> = sample_shape(ShapeKind::Cube, 10, 1, 0.0).unwrap();
        cloud.labels = Some((0..10).map(|i| i as u16 * 3).collect());
        write_pcb(&path, &[cloud.clone()]).unwrap();
        let back: Vec<PointCloud<f32>> = read_pcb(&path).unwrap();
        assert_eq!(back[0].labels, cloud.labels);
    }
}
