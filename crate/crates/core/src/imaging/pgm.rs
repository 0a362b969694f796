//! 8-bit binary PGM (P5) reading and writing. Intensity `i` is stored as
//! `round(255 i)` and read back as `v / 255`.

use std::io::{Read, Write};
use std::path::Path;

use super::{BinaryMask, GrayImage, ImagingError};

pub fn encode(image: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", image.width(), image.height());
    let mut out = header.into_bytes();
    out.extend(
        image
            .pixels()
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

pub fn encode_mask(mask: &BinaryMask) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", mask.width(), mask.height());
    let mut out = header.into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String, ImagingError> {
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
        return Err(ImagingError::Pgm("truncated header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn decode(bytes: &[u8]) -> Result<GrayImage, ImagingError> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != "P5" {
        return Err(ImagingError::Pgm(format!("unsupported magic {magic:?}")));
    }
    let parse = |s: String| {
        s.parse::<usize>()
            .map_err(|_| ImagingError::Pgm(format!("bad header field {s:?}")))
    };
    let width = parse(next_token(bytes, &mut pos)?)?;
    let height = parse(next_token(bytes, &mut pos)?)?;
    let maxval = parse(next_token(bytes, &mut pos)?)?;
    if maxval != 255 {
        return Err(ImagingError::Pgm(format!(
            "only 8-bit PGM supported, maxval {maxval}"
        )));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let data = bytes
        .get(pos..pos + width * height)
        .ok_or_else(|| ImagingError::Pgm("truncated raster".into()))?;
    GrayImage::from_vec(
        width,
        height,
        data.iter().map(|&v| v as f64 / 255.0).collect(),
    )
}

pub fn write(path: &Path, image: &GrayImage) -> std::io::Result<()> {
    std::fs::File::create(path)?.write_all(&encode(image))
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> std::io::Result<()> {
    std::fs::File::create(path)?.write_all(&encode_mask(mask))
}

pub fn read(path: &Path) -> Result<GrayImage, ImagingError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| ImagingError::Pgm(format!("{}: {e}", path.display())))?;
    decode(&buf)
}

/// Quantizes an image to the 8-bit grid exactly as a write/read cycle would.
pub fn quantize(image: &GrayImage) -> GrayImage {
    let px = image
        .pixels()
        .iter()
        .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) / 255.0)
        .collect();
    GrayImage::from_vec(image.width(), image.height(), px).expect("quantized values stay in range")
}
