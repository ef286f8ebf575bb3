//! Plain (`P2`) PGM with a 16-bit range.

use std::path::Path;

use crate::error::{Error, Result};
use crate::simgen::ViewImage;

use super::{read_bytes, write_bytes};

pub const PGM_MAXVAL: u32 = 65535;

const PER_LINE: usize = 16;

fn quantize(v: f64) -> u32 {
    (v.clamp(0.0, 1.0) * PGM_MAXVAL as f64).round() as u32
}

pub fn format_pgm(image: &ViewImage) -> String {
    let mut s = format!("P2\n{} {}\n{}\n", image.width(), image.height(), PGM_MAXVAL);
    for row in 0..image.height() {
        for chunk in (0..image.width()).collect::<Vec<_>>().chunks(PER_LINE) {
            let line: Vec<String> = chunk
                .iter()
                .map(|&c| quantize(image.get(row, c)).to_string())
                .collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
    }
    s
}

pub fn write_pgm(path: &Path, image: &ViewImage) -> Result<()> {
    write_bytes(path, format_pgm(image).as_bytes())
}

pub fn read_pgm(path: &Path) -> Result<ViewImage> {
    parse_pgm(&read_bytes(path)?, path)
}

/// Whitespace-separated tokens with their offsets; `#` starts a comment
/// that runs to the end of the line.
fn tokens(bytes: &[u8]) -> Vec<(usize, &[u8])> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b if b.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
                    i += 1;
                }
                out.push((start, &bytes[start..i]));
            }
        }
    }
    out
}

/// Parses a `P2` image; values are rescaled by `maxval` into `[0, 1]`.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<ViewImage> {
    let err = |offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset,
        message,
    };
    let toks = tokens(bytes);
    let mut it = toks.into_iter();
    match it.next() {
        Some((_, b"P2")) => {}
        Some((off, _)) => return Err(err(off, "expected plain PGM magic `P2`".into())),
        None => return Err(err(0, "empty file".into())),
    }
    let mut number = |what: &str| -> Result<(usize, u32)> {
        let (off, t) = it
            .next()
            .ok_or_else(|| err(bytes.len(), format!("missing {what}")))?;
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .map(|v| (off, v))
            .ok_or_else(|| err(off, format!("bad {what} {:?}", String::from_utf8_lossy(t))))
    };
    let (_, width) = number("width")?;
    let (_, height) = number("height")?;
    let (moff, maxval) = number("maxval")?;
    if maxval == 0 || maxval > PGM_MAXVAL {
        return Err(err(
            moff,
            format!("maxval {maxval} outside 1..={PGM_MAXVAL}"),
        ));
    }
    let n = width as usize * height as usize;
    let mut data = Vec::with_capacity(n);
    for k in 0..n {
        let (off, v) = number(&format!("pixel {k}"))?;
        if v > maxval {
            return Err(err(
                off,
                format!("pixel {k} value {v} exceeds maxval {maxval}"),
            ));
        }
        data.push(v as f64 / maxval as f64);
    }
    if let Some((off, _)) = it.next() {
        return Err(err(off, "trailing data after the last pixel".into()));
    }
    ViewImage::new(height as usize, width as usize, data).map_err(|e| err(0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> ViewImage {
        let data = (0..8 * 20).map(|i| (i as f64 / 159.0).powf(1.3)).collect();
        ViewImage::new(8, 20, data).unwrap()
    }

    #[test]
    fn round_trip() {
        let img = image();
        let text = format_pgm(&img);
        assert!(text.starts_with("P2\n20 8\n65535\n"));
        let back = parse_pgm(text.as_bytes(), Path::new("v.pgm")).unwrap();
        assert_eq!((back.height(), back.width()), (8, 20));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / PGM_MAXVAL as f64 + 1e-15);
        }
        assert_eq!(format_pgm(&back), text);
    }

    #[test]
    fn comments_and_other_maxvals() {
        let mut text = String::from("P2 # plain\n8 8\n# max\n255\n");
        text.push_str(&vec!["255"; 64].join(" "));
        let img = parse_pgm(text.as_bytes(), Path::new("v.pgm")).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn errors_point_at_the_token() {
        let text = "P2\n8 8\n65535\n1 2 x3";
        match parse_pgm(text.as_bytes(), Path::new("v.pgm")) {
            Err(Error::Parse { offset, .. }) => assert_eq!(&text[offset..], "x3"),
            other => panic!("{other:?}"),
        }
        assert!(parse_pgm(b"P5\n", Path::new("v.pgm")).is_err());
        assert!(parse_pgm(b"P2 8 8 10 11", Path::new("v.pgm")).is_err());
    }
}
