//! 8-bit PNG encodings of slices for display.

use std::io::Cursor;

use image::{GrayImage, ImageFormat, Rgba, RgbaImage};
use probseg_core::Slice2D;

fn encode(img: impl Fn(&mut Cursor<Vec<u8>>) -> image::ImageResult<()>) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img(&mut buf).expect("in-memory PNG encoding cannot fail");
    buf.into_inner()
}

/// Maps `[lo, hi]` linearly onto `0..=255`, clamping outside values.
pub fn gray_level(v: f64, lo: f64, hi: f64) -> u8 {
    if !(hi > lo) {
        return 0;
    }
    ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn gray_png(s: &Slice2D, lo: f64, hi: f64) -> Vec<u8> {
    let img = GrayImage::from_fn(s.width as u32, s.height as u32, |c, r| {
        image::Luma([gray_level(s.get(c as usize, r as usize), lo, hi)])
    });
    encode(|b| img.write_to(b, ImageFormat::Png))
}

/// Heat layer: hue runs red to yellow with probability, opacity equals
/// probability.
pub fn heat_png(s: &Slice2D) -> Vec<u8> {
    let img = RgbaImage::from_fn(s.width as u32, s.height as u32, |c, r| {
        let p = gray_level(s.get(c as usize, r as usize), 0.0, 1.0);
        Rgba([255, p, 0, p])
    });
    encode(|b| img.write_to(b, ImageFormat::Png))
}

/// Little-endian `f64` values, row by row.
pub fn raw_rows(s: &Slice2D) -> Vec<u8> {
    s.data.iter().flat_map(|v| v.to_le_bytes()).collect()
}
