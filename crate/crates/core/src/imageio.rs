//! PNG helpers for ID maps (16-bit grayscale) and color frames (RGB8).

use std::io::Cursor;
use std::path::Path;

use crate::{Error, Result};

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::format(format!("png: {e}"))
}

/// Encodes a 16-bit grayscale image.
pub fn encode_gray16(width: u32, height: u32, data: &[u16]) -> Result<Vec<u8>> {
    if data.len() != width as usize * height as usize {
        return Err(Error::Contract(format!("{} values for a {width}x{height} image", data.len())));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header().map_err(png_err)?;
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_be_bytes()).collect();
        w.write_image_data(&bytes).map_err(png_err)?;
    }
    Ok(out)
}

/// Encodes an RGB image from linear [0, 1] floats (clamped, rounded).
pub fn encode_rgb8(width: u32, height: u32, rgb: &[f32]) -> Result<Vec<u8>> {
    if rgb.len() != 3 * width as usize * height as usize {
        return Err(Error::Contract(format!("{} values for a {width}x{height} RGB image", rgb.len())));
    }
    let bytes: Vec<u8> = rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(&bytes).map_err(png_err)?;
    }
    Ok(out)
}

/// Decoded PNG: dimensions, channel count and samples widened to u16.
pub struct DecodedImage {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub samples: Vec<u16>,
}

pub fn decode_png(bytes: &[u8]) -> Result<DecodedImage> {
    let dec = png::Decoder::new(Cursor::new(bytes));
    let mut reader = dec.read_info().map_err(png_err)?;
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let channels = info.color_type.samples();
    let samples = match info.bit_depth {
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect(),
        png::BitDepth::Eight => buf[..info.buffer_size()].iter().map(|&b| b as u16).collect(),
        d => return Err(png_err(format!("unsupported bit depth {d:?}"))),
    };
    Ok(DecodedImage { width: info.width, height: info.height, channels, samples })
}

pub fn write_gray16(path: impl AsRef<Path>, width: u32, height: u32, data: &[u16]) -> Result<()> {
    std::fs::write(path, encode_gray16(width, height, data)?)?;
    Ok(())
}

pub fn read_gray16(path: impl AsRef<Path>) -> Result<(u32, u32, Vec<u16>)> {
    let img = decode_png(&std::fs::read(path)?)?;
    if img.channels != 1 {
        return Err(Error::format(format!("expected a grayscale ID map, got {} channels", img.channels)));
    }
    Ok((img.width, img.height, img.samples))
}
