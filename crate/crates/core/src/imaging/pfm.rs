//! Portable float map (colour `PF` variant) reader and writer.
//!
//! Layout: `PF\n<w> <h>\n<scale>\n` followed by `w * h * 3` floats, rows
//! stored bottom to top, pixels interleaved RGB. A negative scale means
//! little-endian. The writer always emits `-1.0`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn malformed(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        format: "PFM",
        offset,
        detail: detail.into(),
    }
}

/// Encodes a (1, 3, h, w) tensor.
pub fn encode_pfm(img: &Tensor) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape("write_pfm", format!("expected (1, 3, h, w), got {s}")));
    }
    let mut out = format!("PF\n{} {}\n-1.0\n", s.w, s.h).into_bytes();
    out.reserve(s.numel() * 4);
    for y in (0..s.h).rev() {
        for x in 0..s.w {
            for c in 0..3 {
                out.extend_from_slice(&img.at(0, c, y, x).to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn token(&mut self, what: &str) -> Result<&'a str> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.buf.len() && !self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(malformed(start, format!("expected {what}, found end of data")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .map_err(|_| malformed(start, format!("{what} is not ASCII")))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        self.skip_ws();
        let start = self.pos;
        let tok = self.token(what)?;
        tok.parse()
            .map_err(|_| malformed(start, format!("bad {what} `{tok}`")))
    }
}

pub fn decode_pfm(buf: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor { buf, pos: 0 };
    let magic = cur.token("magic")?;
    match magic {
        "PF" => {}
        "Pf" => return Err(Error::Unsupported("greyscale PFM (`Pf`)".into())),
        other => return Err(malformed(0, format!("bad magic `{other}`"))),
    }
    let w: usize = cur.number("width")?;
    let h: usize = cur.number("height")?;
    let scale: f32 = cur.number("scale")?;
    if w == 0 || h == 0 {
        return Err(malformed(cur.pos, format!("empty image {w}x{h}")));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(malformed(cur.pos, format!("bad scale {scale}")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if cur.pos >= buf.len() || !buf[cur.pos].is_ascii_whitespace() {
        return Err(malformed(cur.pos, "missing separator after scale"));
    }
    let data_start = cur.pos + 1;
    let need = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(12))
        .ok_or_else(|| malformed(data_start, "dimensions overflow"))?;
    let have = buf.len() - data_start;
    if have < need {
        return Err(malformed(
            buf.len(),
            format!("truncated payload: {have} of {need} bytes"),
        ));
    }
    let little = scale < 0.0;
    let mut img = Tensor::zeros(Shape::new(1, 3, h, w));
    let mut off = data_start;
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..3 {
                let b: [u8; 4] = buf[off..off + 4].try_into().expect("4 bytes");
                let v = if little {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                };
                img.set(0, c, y, x, v);
                off += 4;
            }
        }
    }
    Ok(img)
}

pub fn write_pfm(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pfm(img)?).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&buf).map_err(|e| e.context(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_white_pixel() {
        let mut buf = b"PF\n1 1\n-1.0\n".to_vec();
        for _ in 0..3 {
            buf.extend_from_slice(&1.0f32.to_le_bytes());
        }
        let img = decode_pfm(&buf).unwrap();
        assert_eq!(img, Tensor::ones(Shape::new(1, 3, 1, 1)));
    }

    #[test]
    fn rows_are_bottom_up() {
        let img = Tensor::from_fn(Shape::new(1, 3, 2, 1), |_, c, y, _| (10 * y + c) as f32);
        let buf = encode_pfm(&img).unwrap();
        let first = f32::from_le_bytes(buf[12..16].try_into().unwrap());
        assert_eq!(first, 10.0);
        assert_eq!(decode_pfm(&buf).unwrap(), img);
    }

    #[test]
    fn greyscale_is_unsupported() {
        let err = decode_pfm(b"Pf\n1 1\n-1.0\n\0\0\0\0").unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn truncation_reports_offset() {
        let err = decode_pfm(b"PF\n2 1\n-1.0\n\0\0\0\0").unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 16),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn bad_header_reports_offset() {
        let err = decode_pfm(b"PF\nx 1\n-1.0\n").unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 3),
            other => panic!("{other}"),
        }
    }
}
