//! Binary PPM (P6) / PGM (P5) codec with maxval 255.

use anyhow::{bail, Context, Result};
use brtr_core::tensor::{DenseTensor, Shape};

/// Header token reader: skips whitespace and `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
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
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        bail!("truncated image header");
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Decode a P6/P5 image into an H×W×3 or H×W tensor with values in [0,255].
pub fn decode(bytes: &[u8]) -> Result<DenseTensor> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => bail!("unsupported image magic {other:?} (want binary P6 or P5)"),
    };
    let w: usize = next_token(bytes, &mut pos)?.parse().context("bad width")?;
    let h: usize = next_token(bytes, &mut pos)?.parse().context("bad height")?;
    let maxval: usize = next_token(bytes, &mut pos)?.parse().context("bad maxval")?;
    if maxval != 255 {
        bail!("unsupported maxval {maxval} (want 255)");
    }
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let need = w * h * channels;
    let payload = bytes
        .get(pos..pos + need)
        .with_context(|| format!("payload shorter than {need} bytes"))?;
    if pos + need != bytes.len() {
        bail!("trailing bytes after image payload");
    }
    let dims = if channels == 3 { vec![h, w, 3] } else { vec![h, w] };
    let shape = Shape::new(dims)?;
    let mut data = vec![0.0; need];
    // payload is row-major per pixel; tensor storage is first-index-fastest
    for r in 0..h {
        for c in 0..w {
            for k in 0..channels {
                let v = payload[(r * w + c) * channels + k] as f64;
                data[r + h * (c + w * k)] = v;
            }
        }
    }
    Ok(DenseTensor::new(shape, data)?)
}

/// Encode an H×W×3 tensor as P6 or an H×W tensor as P5, rounding
/// half-away-from-zero and clamping to [0,255].
pub fn encode(t: &DenseTensor) -> Result<Vec<u8>> {
    let dims = t.shape().dims();
    let (h, w, channels, magic) = match dims {
        [h, w, 3] => (*h, *w, 3usize, "P6"),
        [h, w] => (*h, *w, 1usize, "P5"),
        _ => bail!("tensor shape {dims:?} is not H×W×3 or H×W"),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for r in 0..h {
        for c in 0..w {
            for k in 0..channels {
                let v = t.data()[r + h * (c + w * k)];
                let q = v.abs().round() * v.signum();
                out.push(q.clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(out)
}
