//! ASCII PLY with `x y z` and an optional `intensity` property.
//!
//! Values are stored with `f32` semantics and printed with nine significant
//! digits, which is enough for the text to round-trip bit-exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

use super::{read_bytes, write_bytes, Lines};

/// Formats one `f32` with nine significant digits.
pub(crate) fn fmt_f32(v: f64) -> String {
    format!("{:.8e}", v as f32)
}

pub fn format_ply(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(64 + cloud.len() * 48);
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(&format!("element vertex {}\n", cloud.len()));
    for axis in ["x", "y", "z"] {
        s.push_str(&format!("property float {axis}\n"));
    }
    if cloud.intensity.is_some() {
        s.push_str("property float intensity\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        s.push_str(&format!(
            "{} {} {}",
            fmt_f32(p.x),
            fmt_f32(p.y),
            fmt_f32(p.z)
        ));
        if let Some(v) = &cloud.intensity {
            s.push(' ');
            s.push_str(&fmt_f32(v[i]));
        }
        s.push('\n');
    }
    s
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_bytes(path, format_ply(cloud).as_bytes())
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    parse_ply(&read_bytes(path)?, path)
}

/// Parses ASCII PLY text; errors carry the byte offset of the offending token.
pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let mut lines = Lines::new(bytes, path)?;
    let err = |offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset,
        message,
    };

    let (off, magic) = lines
        .next_line()
        .ok_or_else(|| err(0, "empty file".into()))?;
    if magic.trim_end() != "ply" {
        return Err(err(off, "missing `ply` magic".into()));
    }
    let mut vertices: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let (off, line) = lines
            .next_line()
            .ok_or_else(|| err(bytes.len(), "header ended without end_header".into()))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", "ascii", "1.0"] => {}
            ["format", other, ..] => {
                return Err(err(
                    off,
                    format!("unsupported format {other:?}, only ascii"),
                ))
            }
            ["element", "vertex", n] => {
                let n = n
                    .parse()
                    .map_err(|_| err(off, format!("bad vertex count {n:?}")))?;
                vertices = Some(n);
                in_vertex = true;
            }
            ["element", name, _] => return Err(err(off, format!("unsupported element {name:?}"))),
            ["property", kind, name] if in_vertex => {
                if !matches!(*kind, "float" | "float32" | "double" | "float64") {
                    return Err(err(
                        off,
                        format!("property {name:?} has unsupported type {kind:?}"),
                    ));
                }
                properties.push(name.to_string());
            }
            _ => {
                return Err(err(
                    off,
                    format!("unrecognised header line {:?}", line.trim_end()),
                ))
            }
        }
    }
    let n = vertices.ok_or_else(|| err(lines.offset(), "no vertex element".into()))?;
    let column = |name: &str| properties.iter().position(|p| p == name);
    let (Some(ix), Some(iy), Some(iz)) = (column("x"), column("y"), column("z")) else {
        return Err(err(
            lines.offset(),
            "vertex element needs x, y and z properties".into(),
        ));
    };
    let ii = column("intensity");

    let mut points = Vec::with_capacity(n);
    let mut intensity = ii.map(|_| Vec::with_capacity(n));
    for k in 0..n {
        let (off, line) = lines
            .next_line()
            .ok_or_else(|| err(bytes.len(), format!("expected {n} vertices, found {k}")))?;
        let mut values = Vec::with_capacity(properties.len());
        let mut pos = 0;
        for tok in line.split_whitespace() {
            let start = off + line[pos..].find(tok).map_or(0, |i| pos + i);
            pos = start - off + tok.len();
            let v: f64 = tok
                .parse::<f32>()
                .map(f64::from)
                .map_err(|_| err(start, format!("vertex {k}: bad number {tok:?}")))?;
            if !v.is_finite() {
                return Err(err(start, format!("vertex {k}: non-finite value")));
            }
            values.push(v);
        }
        if values.len() != properties.len() {
            return Err(err(
                off,
                format!(
                    "vertex {k}: expected {} values, found {}",
                    properties.len(),
                    values.len()
                ),
            ));
        }
        points.push(Point3::new(values[ix], values[iy], values[iz]));
        if let (Some(col), Some(v)) = (ii, intensity.as_mut()) {
            v.push(values[col]);
        }
    }
    if let Some((off, line)) = lines.next_line() {
        if !line.trim().is_empty() {
            return Err(err(off, "trailing data after the last vertex".into()));
        }
    }
    Ok(PointCloud { points, intensity })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("t.ply")
    }

    fn offset_of(e: Error) -> usize {
        match e {
            Error::Parse { offset, .. } => offset,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let cloud = PointCloud::with_intensity(
            vec![
                Point3::new(0.1, -2.5, 1e-7),
                Point3::new(123.456, 0.0, -0.3),
            ],
            vec![0.25, 1.0],
        )
        .unwrap();
        let a = format_ply(&cloud);
        let back = parse_ply(a.as_bytes(), p()).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back.points[0].x - 0.1).abs() < 1e-7);
        assert_eq!(format_ply(&back), a);
    }

    #[test]
    fn empty_cloud() {
        let a = format_ply(&PointCloud::default());
        assert!(parse_ply(a.as_bytes(), p()).unwrap().is_empty());
    }

    #[test]
    fn errors_report_byte_offsets() {
        let good = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        let text = format!("{good}1 2 3\n4 oops 6\n");
        let off = offset_of(parse_ply(text.as_bytes(), p()).unwrap_err());
        assert_eq!(&text[off..off + 4], "oops");

        let short = format!("{good}1 2 3\n");
        assert!(matches!(
            parse_ply(short.as_bytes(), p()),
            Err(Error::Parse { .. })
        ));
        let binary = "ply\nformat binary_little_endian 1.0\n";
        assert_eq!(offset_of(parse_ply(binary.as_bytes(), p()).unwrap_err()), 4);
        assert!(parse_ply(b"plx\n", p()).is_err());
        let missing_z = "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nend_header\n";
        assert!(parse_ply(missing_z.as_bytes(), p()).is_err());
        let wide = format!("{good}1 2 3 4\n5 6 7\n");
        assert!(parse_ply(wide.as_bytes(), p()).is_err());
    }

    #[test]
    fn extra_properties_are_ignored() {
        let text = "ply\nformat ascii 1.0\ncomment made elsewhere\nelement vertex 1\nproperty float nx\nproperty float x\nproperty double y\nproperty float z\nend_header\n9 1 2 3\n";
        let c = parse_ply(text.as_bytes(), p()).unwrap();
        assert_eq!(c.points[0], Point3::new(1.0, 2.0, 3.0));
    }
}
