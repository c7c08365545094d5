//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    pub data: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeError(pub String);

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DecodeError {}

fn bad<T>(msg: impl Into<String>) -> Result<T, DecodeError> {
    Err(DecodeError(msg.into()))
}

pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height, "raster size");
    encode(b"P5", width, height, gray)
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3, "raster size");
    encode(b"P6", width, height, rgb)
}

fn encode(magic: &[u8], width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() + 20);
    out.extend_from_slice(magic);
    out.extend_from_slice(format!("\n{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(data);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, DecodeError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        let digits = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
        match digits.parse() {
            Ok(n) => Ok(n),
            Err(_) => bad(format!("expected {what}")),
        }
    }
}

/// Decodes a P5 or P6 file.
pub fn decode(bytes: &[u8]) -> Result<Raster, DecodeError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return bad("not a binary PGM/PPM (missing P5/P6 magic)"),
    };
    let mut c = Cursor { bytes, pos: 2 };
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return bad(format!("empty raster {width}x{height}"));
    }
    if maxval != 255 {
        return bad(format!("maxval {maxval} unsupported (only 255)"));
    }
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return bad("missing whitespace after header");
    }
    let raster = &bytes[c.pos + 1..];
    let expected = width * height * channels;
    if raster.len() != expected {
        return bad(format!(
            "raster has {} bytes, expected {expected}",
            raster.len()
        ));
    }
    Ok(Raster {
        width,
        height,
        channels,
        data: raster.to_vec(),
    })
}
