//! PNG storage: colour images as 8-bit RGB, depth as 16-bit grayscale with
//! `0..=5 m` mapped linearly onto `0..=65535`.

use std::fs::File;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use super::{BinaryMask, DepthMap, Grid, Image3};
use crate::error::{Error, Result};

pub const DEPTH_RANGE_M: f32 = 5.0;

#[inline]
pub fn quantize_unit(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
pub fn quantize_depth(d: f32) -> u16 {
    ((d.clamp(0.0, DEPTH_RANGE_M) / DEPTH_RANGE_M) as f64 * 65535.0).round() as u16
}

#[inline]
pub fn dequantize_depth(q: u16) -> f32 {
    (q as f64 / 65535.0 * DEPTH_RANGE_M as f64) as f32
}

pub fn rgb_to_bytes(img: &Image3) -> Vec<u8> {
    img.data.iter().map(|&v| quantize_unit(v)).collect()
}

pub fn rgb_from_bytes(height: usize, width: usize, bytes: &[u8]) -> Image3 {
    Image3 {
        height,
        width,
        data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
    }
}

pub fn encode_rgb<W: Write>(img: &Image3, out: W) -> Result<()> {
    let mut enc = png::Encoder::new(out, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&rgb_to_bytes(img))?;
    writer.finish()?;
    Ok(())
}

pub fn encode_depth<W: Write>(depth: &DepthMap, out: W) -> Result<()> {
    let mut enc = png::Encoder::new(out, depth.width as u32, depth.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header()?;
    let mut bytes = Vec::with_capacity(depth.data.len() * 2);
    for &d in &depth.data {
        bytes.extend_from_slice(&quantize_depth(d).to_be_bytes());
    }
    writer.write_image_data(&bytes)?;
    writer.finish()?;
    Ok(())
}

fn decode(input: &[u8], path: &Path) -> Result<(png::OutputInfo, Vec<u8>)> {
    let mut decoder = png::Decoder::new(Cursor::new(input));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::malformed(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

pub fn decode_rgb(input: &[u8], path: &Path) -> Result<Image3> {
    let (info, buf) = decode(input, path)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::malformed(
            path,
            format!("expected 8-bit RGB, got {:?}/{:?}", info.color_type, info.bit_depth),
        ));
    }
    Ok(rgb_from_bytes(info.height as usize, info.width as usize, &buf))
}

pub fn decode_depth(input: &[u8], path: &Path) -> Result<DepthMap> {
    let (info, buf) = decode(input, path)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::malformed(
            path,
            format!("expected 16-bit grayscale, got {:?}/{:?}", info.color_type, info.bit_depth),
        ));
    }
    let data = buf
        .chunks_exact(2)
        .map(|b| dequantize_depth(u16::from_be_bytes([b[0], b[1]])))
        .collect();
    Ok(DepthMap {
        height: info.height as usize,
        width: info.width as usize,
        data,
    })
}

pub fn save_rgb(img: &Image3, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    encode_rgb(img, BufWriter::new(f))
}

pub fn load_rgb(path: &Path) -> Result<Image3> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rgb(&bytes, path)
}

pub fn save_depth(depth: &DepthMap, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    encode_depth(depth, BufWriter::new(f))
}

pub fn load_depth(path: &Path) -> Result<DepthMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_depth(&bytes, path)
}

pub fn mask_to_image(mask: &BinaryMask) -> Image3 {
    let mut img = Image3::new(mask.height, mask.width);
    for (i, &b) in mask.data.iter().enumerate() {
        let v = if b { 1.0 } else { 0.0 };
        img.data[i * 3..i * 3 + 3].copy_from_slice(&[v, v, v]);
    }
    img
}

/// Signed grid as a blue (negative) / red (positive) image, scaled by the
/// largest magnitude.
pub fn grid_to_image(grid: &Grid) -> Image3 {
    let scale = grid.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut img = Image3::new(grid.height, grid.width);
    for (i, &v) in grid.data.iter().enumerate() {
        let t = (v / scale) as f32;
        let px = if t >= 0.0 { [t, 0.0, 0.0] } else { [0.0, 0.0, -t] };
        img.data[i * 3..i * 3 + 3].copy_from_slice(&px);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn depth_quantization() {
        assert_eq!(quantize_depth(0.0), 0);
        assert!((quantize_depth(2.5) as i32 - 32768).abs() <= 1);
        assert_eq!(quantize_depth(5.0), 65535);
    }

    #[test]
    fn depth_roundtrip_file() {
        let mut d = DepthMap::new(3, 4);
        for (i, v) in d.data.iter_mut().enumerate() {
            *v = i as f32 * 0.4;
        }
        let mut buf = Vec::new();
        encode_depth(&d, &mut buf).unwrap();
        let back = decode_depth(buf.as_slice(), Path::new("mem")).unwrap();
        for (a, b) in d.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= DEPTH_RANGE_M / 65535.0);
        }
    }

    #[test]
    fn malformed_is_error() {
        let err = decode_rgb(&b"not a png"[..], Path::new("x.png"));
        assert!(err.is_err());
        // a depth file is not an RGB file
        let mut buf = Vec::new();
        encode_depth(&DepthMap::new(2, 2), &mut buf).unwrap();
        assert!(matches!(
            decode_rgb(buf.as_slice(), Path::new("d.png")),
            Err(Error::Malformed { .. })
        ));
    }

    proptest! {
        #[test]
        fn rgb_roundtrip_is_lossless(bytes in proptest::collection::vec(any::<u8>(), 5 * 7 * 3)) {
            let img = rgb_from_bytes(5, 7, &bytes);
            let mut buf = Vec::new();
            encode_rgb(&img, &mut buf).unwrap();
            let back = decode_rgb(buf.as_slice(), Path::new("mem")).unwrap();
            prop_assert_eq!(rgb_to_bytes(&back), bytes);
        }
    }
}
