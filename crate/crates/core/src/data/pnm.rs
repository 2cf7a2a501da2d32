use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `round(v·255)` with halves rounded up, after clamping to `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

/// Encodes a `[C×H×W]` frame as binary PGM (C = 1) or PPM (C = 3).
pub fn encode_frame(frame: &Tensor) -> Result<Vec<u8>> {
    let [c, h, w] = frame.shape() else {
        return Err(Error::dim("write_frame_image", format!("expected [C, H, W], got {:?}", frame.shape())));
    };
    let (c, h, w) = (*c, *h, *w);
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::dim("write_frame_image", format!("unsupported channel count {c}"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..c {
            out.push(quantize(frame.data()[ch * plane + p]));
        }
    }
    Ok(out)
}

pub fn write_frame_image(path: impl AsRef<Path>, frame: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_frame(frame)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_tokens(bytes: &[u8]) -> (Vec<String>, &[u8]) {
        let text: Vec<u8> = bytes.iter().take(bytes.len()).copied().collect();
        let mut tokens = Vec::new();
        let mut pos = 0;
        while tokens.len() < 4 {
            while text[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while !text[pos].is_ascii_whitespace() {
                pos += 1;
            }
            tokens.push(String::from_utf8(text[start..pos].to_vec()).unwrap());
        }
        (tokens, &bytes[pos + 1..])
    }

    #[test]
    fn zero_gray_frame() {
        let bytes = encode_frame(&Tensor::zeros([1, 2, 2])).unwrap();
        let (tokens, payload) = header_tokens(&bytes);
        assert_eq!(tokens, ["P5", "2", "2", "255"]);
        assert_eq!(payload, &[0, 0, 0, 0]);
    }

    #[test]
    fn ones_and_half() {
        let bytes = encode_frame(&Tensor::ones([3, 1, 2])).unwrap();
        let (tokens, payload) = header_tokens(&bytes);
        assert_eq!(tokens[0], "P6");
        assert_eq!(payload, &[255; 6]);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(7.0), 255);
    }

    #[test]
    fn rejects_two_channels() {
        assert!(encode_frame(&Tensor::zeros([2, 2, 2])).is_err());
    }
}
