//! Binary PGM (`P5`) reading and writing, 8-bit only.
//!
//! The reader is strict: the maximum value must be exactly 255, the raster
//! must hold exactly `width * height` bytes and nothing may follow it.
//! Header comments (`#` to end of line) are accepted between tokens. Every
//! rejection names the byte offset where parsing stopped.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;

use super::Frame;

pub fn encode(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend_from_slice(frame.pixels());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Data(format!("pgm: {msg} at byte {}", self.pos))
    }

    /// Skips whitespace and comments; requires at least one separator.
    fn separator(&mut self) -> Result<()> {
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err(self.err("expected whitespace"));
        }
        Ok(())
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err(&format!("expected decimal {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&v| v <= u32::MAX as usize)
            .ok_or_else(|| Error::Data(format!("pgm: {what} out of range at byte {start}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Frame> {
    let mut c = Cursor { bytes, pos: 0 };
    if bytes.get(..2) != Some(b"P5") {
        return Err(c.err("expected magic \"P5\""));
    }
    c.pos = 2;
    c.separator()?;
    let width_at = c.pos;
    let width = c.number("width")?;
    c.separator()?;
    let height_at = c.pos;
    let height = c.number("height")?;
    if width == 0 {
        return Err(Error::Data(format!("pgm: zero width at byte {width_at}")));
    }
    if height == 0 {
        return Err(Error::Data(format!("pgm: zero height at byte {height_at}")));
    }
    c.separator()?;
    let maxval_at = c.pos;
    let maxval = c.number("maximum value")?;
    if maxval != 255 {
        return Err(Error::Data(format!(
            "pgm: maximum value must be 255, got {maxval} at byte {maxval_at}"
        )));
    }
    match bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        _ => return Err(c.err("expected a single whitespace byte before the raster")),
    }
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| Error::Data(format!("pgm: dimensions overflow at byte {width_at}")))?;
    let raster = &bytes[c.pos..];
    if raster.len() < expected {
        return Err(Error::Data(format!(
            "pgm: raster truncated, expected {expected} bytes from byte {} but file ends at byte {}",
            c.pos,
            bytes.len()
        )));
    }
    if raster.len() > expected {
        return Err(Error::Data(format!(
            "pgm: {} trailing bytes after raster at byte {}",
            raster.len() - expected,
            c.pos + expected
        )));
    }
    Frame::new(width, height, raster.to_vec())
}

pub fn read(path: &Path) -> Result<Frame> {
    decode(&fsutil::read(path)?).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write(path: &Path, frame: &Frame) -> Result<()> {
    fsutil::write_atomic(path, &encode(frame))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> Frame {
        Frame::new(3, 2, vec![0, 1, 2, 253, 254, 255]).unwrap()
    }

    #[test]
    fn round_trip() {
        let f = frame();
        let bytes = encode(&f);
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(decode(&bytes).unwrap(), f);
    }

    #[test]
    fn accepts_comments_in_header() {
        let mut bytes = b"P5 # made by hand\n3\n# another\n 2 255\n".to_vec();
        bytes.extend_from_slice(frame().pixels());
        assert_eq!(decode(&bytes).unwrap(), frame());
    }

    #[test]
    fn rejections_name_byte_offsets() {
        let body = frame().pixels().to_vec();
        let with = |header: &[u8], raster: &[u8]| {
            let mut v = header.to_vec();
            v.extend_from_slice(raster);
            v
        };
        let cases: Vec<(Vec<u8>, &str)> = vec![
            (with(b"P2\n3 2\n255\n", &body), "magic"),
            (with(b"P5\n3 2\n65535\n", &body), "255"),
            (with(b"P5\n3 2\n15\n", &body), "255"),
            (with(b"P5\n0 2\n255\n", &body), "zero width"),
            (with(b"P5\n3 x\n255\n", &body), "height"),
            (with(b"P5\n3 2\n255\n", &body[..5]), "truncated"),
            (with(b"P5\n3 2\n255\n", &[&body[..], &[9]].concat()), "trailing"),
            (with(b"P53 2\n255\n", &body), "whitespace"),
            (b"P5\n3 2\n255".to_vec(), "whitespace"),
        ];
        for (bytes, needle) in cases {
            let msg = decode(&bytes).unwrap_err().to_string();
            assert!(msg.contains(needle), "{msg} should mention {needle}");
            assert!(msg.contains("byte"), "{msg}");
        }
    }
}
