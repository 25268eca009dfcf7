//! Image input/output and the log-contrast transform.
//!
//! Two interchange formats are supported: a headerless raw format holding
//! row-major unsigned 16-bit samples, and portable graymaps (P2/P5).
//! Luminance images are converted to zero-mean log-contrast fields before
//! any statistics are computed.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Byte order of 16-bit samples in the raw format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Big,
    Little,
}

/// How zero luminance values are handled before taking logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroPolicy {
    /// Replace zeros by the smallest positive value present in the image.
    ClampToMinPositive,
    /// Shift every value up by one.
    AddOne,
}

/// Raw luminance image: nonnegative values in arbitrary linear units.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    pub width: usize,
    pub height: usize,
    /// Row-major samples, `width * height` values, all nonnegative.
    pub data: Vec<f64>,
}

impl IntensityImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Input(format!(
                "pixel count {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if data.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Input(
                "luminance values must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Zero-mean log-contrast field derived from an [`IntensityImage`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastImage {
    pub width: usize,
    pub height: usize,
    /// Row-major log-contrast values; sums to zero over the image.
    pub data: Vec<f64>,
    /// Normalization luminance: the geometric mean of the (adjusted) input.
    pub i0: f64,
}

impl ContrastImage {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Wraps an arbitrary real-valued field as a centered, zero-mean contrast
    /// field without a log transform. Used for synthetic lattices whose
    /// levels are already the quantity of interest; `i0` records the
    /// subtracted mean.
    pub fn from_centered_levels(width: usize, height: usize, data: &[f64]) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Input(format!(
                "level count {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let centered: Vec<f64> = data.iter().map(|&v| v - mean).collect();
        Ok(Self {
            width,
            height,
            data: centered,
            i0: mean,
        })
    }
}

/// Reads a headerless raw image of unsigned 16-bit samples.
pub fn read_raw_u16(
    path: &Path,
    width: usize,
    height: usize,
    byte_order: ByteOrder,
) -> Result<IntensityImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw_u16(&bytes, width, height, byte_order)
}

/// Decodes raw 16-bit sample bytes; separated from file access for testing.
pub fn decode_raw_u16(
    bytes: &[u8],
    width: usize,
    height: usize,
    byte_order: ByteOrder,
) -> Result<IntensityImage> {
    let expected = 2 * width * height;
    if bytes.len() != expected {
        return Err(Error::Input(format!(
            "raw file holds {} bytes, expected {} for {}x{} 16-bit samples",
            bytes.len(),
            expected,
            width,
            height
        )));
    }
    let data = bytes
        .chunks_exact(2)
        .map(|pair| {
            let v = match byte_order {
                ByteOrder::Big => u16::from_be_bytes([pair[0], pair[1]]),
                ByteOrder::Little => u16::from_le_bytes([pair[0], pair[1]]),
            };
            v as f64
        })
        .collect();
    Ok(IntensityImage {
        width,
        height,
        data,
    })
}

/// Writes an image back to the headerless raw 16-bit format. Values are
/// rounded to the nearest integer and must fit in `u16`.
pub fn write_raw_u16(img: &IntensityImage, path: &Path, byte_order: ByteOrder) -> Result<()> {
    let mut bytes = Vec::with_capacity(2 * img.data.len());
    for &v in &img.data {
        let q = v.round();
        if !(0.0..=65535.0).contains(&q) {
            return Err(Error::Input(format!("value {v} does not fit in u16")));
        }
        let q = q as u16;
        match byte_order {
            ByteOrder::Big => bytes.extend_from_slice(&q.to_be_bytes()),
            ByteOrder::Little => bytes.extend_from_slice(&q.to_le_bytes()),
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a portable graymap, either ASCII (P2) or binary (P5), maxval up to
/// 65535. Comments introduced by `#` are allowed anywhere in the header.
pub fn read_pgm(path: &Path) -> Result<IntensityImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<IntensityImage> {
    let mut pos = 0usize;

    let magic = next_header_token(bytes, &mut pos)
        .ok_or_else(|| Error::Input("graymap header truncated".into()))?;
    let binary = match magic.as_str() {
        "P2" => false,
        "P5" => true,
        other => {
            return Err(Error::Input(format!(
                "unsupported graymap magic {other:?}"
            )))
        }
    };

    let mut dims = [0usize; 3];
    for slot in dims.iter_mut() {
        let tok = next_header_token(bytes, &mut pos)
            .ok_or_else(|| Error::Input("graymap header truncated".into()))?;
        *slot = tok
            .parse()
            .map_err(|_| Error::Input(format!("bad graymap header field {tok:?}")))?;
    }
    let [width, height, maxval] = dims;
    if width == 0 || height == 0 {
        return Err(Error::Input("graymap has zero dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Input(format!(
            "graymap maxval {maxval} outside 1..=65535"
        )));
    }

    let count = width * height;
    let mut data = Vec::with_capacity(count);
    if binary {
        // Header ends after exactly one whitespace byte following maxval;
        // next_header_token has already consumed it.
        let wide = maxval > 255;
        let per = if wide { 2 } else { 1 };
        let payload = &bytes[pos..];
        if payload.len() < count * per {
            return Err(Error::Input(format!(
                "graymap payload truncated: {} bytes, expected {}",
                payload.len(),
                count * per
            )));
        }
        for i in 0..count {
            let v = if wide {
                u16::from_be_bytes([payload[2 * i], payload[2 * i + 1]]) as usize
            } else {
                payload[i] as usize
            };
            if v > maxval {
                return Err(Error::Input(format!(
                    "graymap sample {v} exceeds maxval {maxval}"
                )));
            }
            data.push(v as f64);
        }
    } else {
        for _ in 0..count {
            let tok = next_header_token(bytes, &mut pos)
                .ok_or_else(|| Error::Input("graymap payload truncated".into()))?;
            let v: usize = tok
                .parse()
                .map_err(|_| Error::Input(format!("bad graymap sample {tok:?}")))?;
            if v > maxval {
                return Err(Error::Input(format!(
                    "graymap sample {v} exceeds maxval {maxval}"
                )));
            }
            data.push(v as f64);
        }
    }

    IntensityImage::new(width, height, data)
}

/// Next whitespace-delimited header token, skipping `#` comments. Advances
/// `pos` past the single whitespace byte that terminates the token.
fn next_header_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let tok = String::from_utf8_lossy(&bytes[start..*pos]).into_owned();
    if *pos < bytes.len() {
        *pos += 1; // single terminator byte
    }
    Some(tok)
}

/// Writes a portable graymap. Values are rounded and must lie in
/// `0..=maxval`.
pub fn write_pgm(img: &IntensityImage, path: &Path, maxval: u16, binary: bool) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let encode = |v: f64| -> Result<u16> {
        let q = v.round();
        if q < 0.0 || q > maxval as f64 {
            return Err(Error::Input(format!(
                "value {v} outside graymap range 0..={maxval}"
            )));
        }
        Ok(q as u16)
    };
    let mut run = || -> std::io::Result<Result<()>> {
        if binary {
            write!(w, "P5\n{} {}\n{}\n", img.width, img.height, maxval)?;
            let wide = maxval > 255;
            for &v in &img.data {
                let q = match encode(v) {
                    Ok(q) => q,
                    Err(e) => return Ok(Err(e)),
                };
                if wide {
                    w.write_all(&q.to_be_bytes())?;
                } else {
                    w.write_all(&[q as u8])?;
                }
            }
        } else {
            write!(w, "P2\n{} {}\n{}\n", img.width, img.height, maxval)?;
            for row in img.data.chunks(img.width) {
                let mut line = String::new();
                for (i, &v) in row.iter().enumerate() {
                    let q = match encode(v) {
                        Ok(q) => q,
                        Err(e) => return Ok(Err(e)),
                    };
                    if i > 0 {
                        line.push(' ');
                    }
                    line.push_str(&q.to_string());
                }
                writeln!(w, "{line}")?;
            }
        }
        w.flush()?;
        Ok(Ok(()))
    };
    run().map_err(|e| Error::io(path, e))?
}

/// Converts luminance to log-contrast, `ln(I / i0)`, with `i0` the geometric
/// mean of the policy-adjusted intensities so the field sums to zero.
pub fn to_contrast(img: &IntensityImage, zero_policy: ZeroPolicy) -> Result<ContrastImage> {
    let min_positive = img
        .data
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !min_positive.is_finite() {
        return Err(Error::Degenerate(
            "image has no positive luminance values".into(),
        ));
    }

    let adjusted = |v: f64| -> f64 {
        match zero_policy {
            ZeroPolicy::ClampToMinPositive => {
                if v > 0.0 {
                    v
                } else {
                    min_positive
                }
            }
            ZeroPolicy::AddOne => v + 1.0,
        }
    };

    let logs: Vec<f64> = img.data.iter().map(|&v| adjusted(v).ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let data: Vec<f64> = logs.iter().map(|&l| l - mean).collect();
    Ok(ContrastImage {
        width: img.width,
        height: img.height,
        data,
        i0: mean.exp(),
    })
}
