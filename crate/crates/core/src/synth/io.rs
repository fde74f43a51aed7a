//! Point-cloud files: ASCII XYZ and binary little-endian PLY.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

/// One `x y z` line per point; the shortest round-tripping decimal form.
pub fn write_xyz<W: Write>(mut out: W, cloud: &PointCloud) -> Result<()> {
    for p in cloud.points() {
        writeln!(out, "{} {} {}", p[0], p[1], p[2])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `x y z` lines (LF or CRLF). Blank lines and `#` comments are skipped.
pub fn read_xyz<R: BufRead>(input: R) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(i + 1, format!("expected 3 fields, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (slot, f) in p.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .map_err(|e| Error::parse(i + 1, format!("{f:?}: {e}")))?;
            if !slot.is_finite() {
                return Err(Error::parse(i + 1, "non-finite coordinate"));
            }
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::parse(0, "file contains no points"));
    }
    PointCloud::new(points)
}

pub fn write_ply<W: Write>(mut out: W, cloud: &PointCloud) -> Result<()> {
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    )?;
    for p in cloud.points() {
        for v in p {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy)]
enum Scalar {
    F32,
    F64,
}

/// Reads a binary little-endian PLY whose vertices are exactly `x y z` as
/// `float` or `double`. A short body is an error.
pub fn read_ply<R: Read>(input: R) -> Result<PointCloud> {
    let mut input = BufReader::new(input);
    let mut line = String::new();
    let mut lineno = 0;
    let mut next = |input: &mut BufReader<R>, line: &mut String| -> Result<usize> {
        line.clear();
        let n = input.read_line(line)?;
        lineno += 1;
        if n == 0 {
            return Err(Error::parse(lineno, "unexpected end of header"));
        }
        let t = line.trim_end_matches(['\n', '\r']).to_string();
        *line = t;
        Ok(lineno)
    };
    let at = next(&mut input, &mut line)?;
    if line != "ply" {
        return Err(Error::parse(at, "missing 'ply' magic"));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut format_ok = false;
    loop {
        let at = next(&mut input, &mut line)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "binary_little_endian", "1.0"] => format_ok = true,
            ["format", other, ..] => {
                return Err(Error::parse(at, format!("unsupported format {other}")));
            }
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(Error::parse(at, "duplicate vertex element"));
                }
                count = Some(n.parse().map_err(|_| Error::parse(at, format!("bad vertex count {n:?}")))?);
            }
            ["element", name, _] => {
                return Err(Error::parse(at, format!("unsupported element {name}")));
            }
            ["property", ty, name] if count.is_some() => {
                let ty = match *ty {
                    "double" | "float64" => Scalar::F64,
                    "float" | "float32" => Scalar::F32,
                    _ => return Err(Error::parse(at, format!("unsupported property type {ty}"))),
                };
                props.push((name.to_string(), ty));
            }
            _ => return Err(Error::parse(at, format!("unexpected header line {line:?}"))),
        }
    }
    let body_line = lineno + 1;
    if !format_ok {
        return Err(Error::parse(body_line - 1, "missing binary_little_endian format line"));
    }
    let count = count.ok_or_else(|| Error::parse(body_line - 1, "missing vertex element"))?;
    let names: Vec<&str> = props.iter().map(|p| p.0.as_str()).collect();
    if names != ["x", "y", "z"] {
        return Err(Error::parse(body_line - 1, format!("vertex properties must be x y z, got {names:?}")));
    }
    let mut points: Vec<Point> = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for i in 0..count {
        let mut p = [0.0; 3];
        for (slot, &(_, ty)) in p.iter_mut().zip(&props) {
            let width = match ty {
                Scalar::F32 => 4,
                Scalar::F64 => 8,
            };
            input
                .read_exact(&mut buf[..width])
                .map_err(|_| Error::parse(body_line, format!("body truncated at vertex {i} of {count}")))?;
            *slot = match ty {
                Scalar::F32 => f32::from_le_bytes(buf[..4].try_into().expect("4 bytes")) as f64,
                Scalar::F64 => f64::from_le_bytes(buf),
            };
        }
        points.push(p);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::parse(body_line, format!("{} trailing bytes after vertex data", rest.len())));
    }
    PointCloud::new(points).map_err(|e| Error::parse(body_line, e.to_string()))
}

fn is_ply(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

/// Reads by extension: `.ply` as PLY, anything else as XYZ.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let file = File::open(path)?;
    if is_ply(path) {
        read_ply(file)
    } else {
        read_xyz(BufReader::new(file))
    }
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let out = BufWriter::new(File::create(path)?);
    if is_ply(path) {
        write_ply(out, cloud)
    } else {
        write_xyz(out, cloud)
    }
}

/// One integer per line.
pub fn write_indices(path: &Path, indices: &[usize]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for i in indices {
        writeln!(out, "{i}")?;
    }
    out.flush()?;
    Ok(())
}
