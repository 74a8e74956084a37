//! ASCII PLY reader/writer for point clouds.
//!
//! The writer emits `element vertex` with float x/y/z and, when part labels
//! are present, uchar red/green/blue mapped through a fixed palette. The
//! reader accepts exactly that family of files and reports anything else
//! with the offending line number.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::PointCloud;

/// Fixed label → color mapping (labels wrap modulo the palette length).
pub const LABEL_PALETTE: [[u8; 3]; 12] = [
    [227, 26, 28],
    [31, 120, 180],
    [51, 160, 44],
    [255, 127, 0],
    [106, 61, 154],
    [177, 89, 40],
    [166, 206, 227],
    [178, 223, 138],
    [251, 154, 153],
    [253, 191, 111],
    [202, 178, 214],
    [255, 255, 153],
];

pub fn label_color(label: u16) -> [u8; 3] {
    LABEL_PALETTE[label as usize % LABEL_PALETTE.len()]
}

fn color_label(rgb: [u8; 3]) -> Option<u16> {
    LABEL_PALETTE.iter().position(|c| *c == rgb).map(|i| i as u16)
}

pub fn write_ply<T: Scalar>(path: &Path, cloud: &PointCloud<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = cloud.len();
    let colored = cloud.labels.is_some();
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {n}")?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    if colored {
        writeln!(w, "property uchar red")?;
        writeln!(w, "property uchar green")?;
        writeln!(w, "property uchar blue")?;
    }
    writeln!(w, "end_header")?;
    for i in 0..n {
        // f32 shortest round-trip formatting keeps the stored values exact
        // at 32-bit precision.
        let p = cloud.point(i);
        let (x, y, z) = (
            p[0].as_f64() as f32,
            p[1].as_f64() as f32,
            p[2].as_f64() as f32,
        );
        if let Some(labels) = &cloud.labels {
            let [r, g, b] = label_color(labels[i]);
            writeln!(w, "{x} {y} {z} {r} {g} {b}")?;
        } else {
            writeln!(w, "{x} {y} {z}")?;
        }
    }
    Ok(())
}

pub fn read_ply<T: Scalar>(path: &Path) -> Result<PointCloud<T>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let pathstr = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: pathstr.clone(),
        line: line + 1,
        msg,
    };

    let mut next_line = |tag: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i, l)),
            Some((i, Err(e))) => Err(parse_err(i, e.to_string())),
            None => Err(Error::format(format!(
                "{pathstr}: truncated file, expected {tag}"
            ))),
        }
    };

    let (i, magic) = next_line("ply magic")?;
    if magic.trim() != "ply" {
        return Err(parse_err(i, "expected 'ply' magic".into()));
    }
    let (i, fmt) = next_line("format line")?;
    if fmt.trim() != "format ascii 1.0" {
        return Err(parse_err(i, format!("unsupported format '{}'", fmt.trim())));
    }

    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    loop {
        let (i, line) = next_line("header line")?;
        let line = line.trim().to_string();
        if line == "end_header" {
            break;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("comment") => {}
            Some("element") => match (tok.next(), tok.next()) {
                (Some("vertex"), Some(count)) => {
                    if vertex_count.is_some() {
                        return Err(parse_err(i, "duplicate vertex element".into()));
                    }
                    vertex_count = Some(count.parse().map_err(|_| {
                        parse_err(i, format!("bad vertex count '{count}'"))
                    })?);
                }
                (Some(other), _) => {
                    return Err(parse_err(i, format!("unsupported element '{other}'")))
                }
                _ => return Err(parse_err(i, "malformed element line".into())),
            },
            Some("property") => {
                if vertex_count.is_none() {
                    return Err(parse_err(i, "property before any element".into()));
                }
                let (ty, name) = (tok.next(), tok.next());
                match (ty, name) {
                    (Some("float"), Some(n)) if ["x", "y", "z"].contains(&n) => {
                        properties.push(n.into())
                    }
                    (Some("uchar"), Some(n)) if ["red", "green", "blue"].contains(&n) => {
                        properties.push(n.into())
                    }
                    _ => {
                        return Err(parse_err(
                            i,
                            format!("unsupported property '{}'", line),
                        ))
                    }
                }
            }
            Some(other) => return Err(parse_err(i, format!("unexpected header token '{other}'"))),
            None => {}
        }
    }

    let n = vertex_count
        .ok_or_else(|| Error::format(format!("{pathstr}: header has no vertex element")))?;
    let has_xyz = ["x", "y", "z"].iter().all(|p| properties.iter().any(|q| q == p));
    if !has_xyz {
        return Err(Error::format(format!(
            "{pathstr}: vertex element lacks float x/y/z properties"
        )));
    }
    let has_rgb = properties.iter().any(|q| q == "red");

    let mut data: Vec<T> = Vec::with_capacity(n * 3);
    let mut labels: Vec<u16> = Vec::with_capacity(if has_rgb { n } else { 0 });
    let mut got = 0usize;
    for (i, line) in &mut lines {
        let line = line.map_err(|e| Error::format(format!("{pathstr}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        if got == n {
            return Err(parse_err(
                i,
                format!("vertex count mismatch: header says {n}, found more"),
            ));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != properties.len() {
            return Err(parse_err(
                i,
                format!(
                    "expected {} fields per vertex, got {}",
                    properties.len(),
                    fields.len()
                ),
            ));
        }
        let mut xyz = [0.0f32; 3];
        let mut rgb = [0u8; 3];
        for (f, name) in fields.iter().zip(&properties) {
            match name.as_str() {
                "x" | "y" | "z" => {
                    let slot = match name.as_str() {
                        "x" => 0,
                        "y" => 1,
                        _ => 2,
                    };
                    xyz[slot] = f
                        .parse()
                        .map_err(|_| parse_err(i, format!("bad float '{f}'")))?;
                }
                _ => {
                    let slot = match name.as_str() {
                        "red" => 0,
                        "green" => 1,
                        _ => 2,
                    };
                    rgb[slot] = f
                        .parse()
                        .map_err(|_| parse_err(i, format!("bad color byte '{f}'")))?;
                }
            }
        }
        data.extend(xyz.iter().map(|&v| T::of_f64(v as f64)));
        if has_rgb {
            labels.push(color_label(rgb).unwrap_or(0));
        }
        got += 1;
    }
    if got != n {
        return Err(Error::format(format!(
            "{pathstr}: vertex count mismatch: header says {n}, payload has {got}"
        )));
    }
    let mut cloud = PointCloud::new(Tensor::new(vec![n, 3], data)?)?;
    if has_rgb {
        cloud.labels = Some(labels);
    }
    Ok(cloud)
}
