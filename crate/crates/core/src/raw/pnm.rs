//! Binary PGM (16-bit, big-endian samples) and PPM (8-bit RGB) files.

use std::path::Path;

use crate::error::{CoreError, Result};

/// Single-channel 16-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray16 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

fn malformed(format: &'static str, msg: impl Into<String>) -> CoreError {
    CoreError::Format {
        format,
        msg: msg.into(),
    }
}

/// Parses `magic width height maxval` and returns the fields with the
/// payload offset. Comments (`#` to end of line) may appear between tokens.
fn header(bytes: &[u8], magic: &[u8; 2], format: &'static str) -> Result<([usize; 3], usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(malformed(
            format,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            let name = ["width", "height", "maxval"][i];
            return Err(malformed(format, format!("missing {name}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| malformed(format, "header value out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => Ok((fields, pos + 1)),
        _ => Err(malformed(format, "header must end with a single whitespace byte")),
    }
}

pub fn decode_pgm16(bytes: &[u8]) -> Result<Gray16> {
    let ([width, height, maxval], off) = header(bytes, b"P5", "PGM")?;
    if maxval != 65535 {
        return Err(malformed("PGM", format!("maxval must be 65535, got {maxval}")));
    }
    let n = width * height;
    let payload = &bytes[off..];
    if payload.len() < 2 * n {
        return Err(malformed(
            "PGM",
            format!("truncated payload: {} of {} bytes", payload.len(), 2 * n),
        ));
    }
    let data = payload[..2 * n]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok(Gray16 { width, height, data })
}

pub fn encode_pgm16(img: &Gray16) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    for v in &img.data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn decode_ppm8(bytes: &[u8]) -> Result<Rgb8> {
    let ([width, height, maxval], off) = header(bytes, b"P6", "PPM")?;
    if maxval != 255 {
        return Err(malformed("PPM", format!("maxval must be 255, got {maxval}")));
    }
    let n = 3 * width * height;
    let payload = &bytes[off..];
    if payload.len() < n {
        return Err(malformed(
            "PPM",
            format!("truncated payload: {} of {n} bytes", payload.len()),
        ));
    }
    Ok(Rgb8 {
        width,
        height,
        data: payload[..n].to_vec(),
    })
}

pub fn encode_ppm8(img: &Rgb8) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CoreError::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
}

pub fn read_pgm16(path: &Path) -> Result<Gray16> {
    decode_pgm16(&read(path)?)
}

pub fn write_pgm16(path: &Path, img: &Gray16) -> Result<()> {
    write(path, &encode_pgm16(img))
}

pub fn read_ppm8(path: &Path) -> Result<Rgb8> {
    decode_ppm8(&read(path)?)
}

pub fn write_ppm8(path: &Path, img: &Rgb8) -> Result<()> {
    write(path, &encode_ppm8(img))
}
