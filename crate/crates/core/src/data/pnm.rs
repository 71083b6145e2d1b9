//! 8-bit binary PPM (P6) images and PGM (P5) label masks.

use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::numerics::Tensor;

/// Encodes a `[3,H,W]` or `[1,3,H,W]` image with values in `[0,1]`.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        &[3, h, w] | &[1, 3, h, w] => (h, w),
        other => return Err(Error::Shape(format!("PPM needs a 3-channel image, got {:?}", other))),
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    let plane = h * w;
    for p in 0..plane {
        for c in 0..3 {
            out.push((d[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Encodes one label map (`N` must be 1) as a grey-level mask.
pub fn encode_pgm(labels: &LabelMap) -> Result<Vec<u8>> {
    let [n, h, w] = labels.shape();
    if n != 1 {
        return Err(Error::Shape(format!("PGM holds one mask, got a batch of {n}")));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(labels.data());
    Ok(out)
}

fn header<'a>(bytes: &'a [u8], magic: &str) -> Result<(usize, usize, &'a [u8])> {
    // magic, width, height, maxval separated by whitespace, then one whitespace byte
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("truncated PNM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != magic {
        return Err(Error::Data(format!("expected {magic} file, found {}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Data(format!("bad PNM header field {s:?}")));
    let (w, h, max) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if max != 255 {
        return Err(Error::Data(format!("only 8-bit PNM supported, maxval {max}")));
    }
    Ok((w, h, &bytes[(pos + 1).min(bytes.len())..]))
}

/// Decodes a P6 image into a `[1,3,H,W]` tensor scaled to `[0,1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let (w, h, body) = header(bytes, "P6")?;
    if body.len() != 3 * w * h {
        return Err(Error::Data(format!("PPM body has {} bytes, expected {}", body.len(), 3 * w * h)));
    }
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            data[c * plane + p] = body[3 * p + c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![1, 3, h, w], data)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMap> {
    let (w, h, body) = header(bytes, "P5")?;
    if body.len() != w * h {
        return Err(Error::Data(format!("PGM body has {} bytes, expected {}", body.len(), w * h)));
    }
    LabelMap::new([1, h, w], body.to_vec())
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
