use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `[1, H, W]` / `[H, W]` image as P5 or a `[3, H, W]` image as P6.
/// Values are clamped to `[0, 1]` and rounded to 8 bits.
pub fn encode_pnm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = match image.shape() {
        &[h, w] => (1, h, w),
        &[c @ (1 | 3), h, w] => (c, h, w),
        other => {
            return Err(Error::InvalidShape {
                shape: other.to_vec(),
                reason: "NetPBM needs [H, W], [1, H, W] or [3, H, W]".into(),
            })
        }
    };
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for p in 0..h * w {
        for ch in 0..c {
            out.push(quantize(d[ch * h * w + p]));
        }
    }
    Ok(out)
}

/// Decodes P5/P6 into `[C, H, W]` with values `byte / maxval`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let bad = |m: String| Error::format("NetPBM", m);
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("header ends early".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let c = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(Error::BadMagic {
                what: "NetPBM".into(),
                expected: "P5 or P6".into(),
                found: other.into(),
            })
        }
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad header field '{s}'")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if !(1..=255).contains(&maxval) {
        return Err(bad(format!("unsupported maxval {maxval}")));
    }
    let n = c * h * w;
    let payload = bytes.get(pos..pos + n).ok_or(Error::Truncated {
        what: "NetPBM payload".into(),
        expected: pos + n,
        found: bytes.len(),
    })?;
    let mut data = vec![0.0f32; n];
    for p in 0..h * w {
        for ch in 0..c {
            data[ch * h * w + p] = payload[p * c + ch] as f32 / maxval as f32;
        }
    }
    Tensor::new(vec![c, h, w], data)
}

pub fn write_pnm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    Ok(std::fs::write(path, encode_pnm(image)?)?)
}

pub fn read_pnm(path: &Path) -> Result<Tensor<f32>> {
    decode_pnm(&std::fs::read(path)?)
}
