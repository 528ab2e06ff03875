use serde::{Deserialize, Serialize};

use super::ToolError;
use crate::geometry::{NormalizedBox, PixelRect};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Bicubic,
}

/// Crops to `bx`, rounding each edge half-up onto the pixel grid.
pub fn crop(image: &Image, bx: &NormalizedBox) -> Result<Image, ToolError> {
    crop_rect(image, bx.to_pixel_rect(image.width(), image.height()))
}

pub fn crop_rect(image: &Image, rect: PixelRect) -> Result<Image, ToolError> {
    if !rect.fits_in(image.width(), image.height()) {
        return Err(ToolError::DegenerateCrop(rect));
    }
    let ch = image.channels() as usize;
    let mut data = Vec::with_capacity(rect.width as usize * rect.height as usize * ch);
    for y in rect.y..rect.y + rect.height {
        let start = image.index(rect.x, y, 0);
        data.extend_from_slice(&image.data()[start..start + rect.width as usize * ch]);
    }
    Ok(Image::new(rect.width, rect.height, image.channels(), data).expect("rect inside image"))
}

/// Source coordinate for a destination sample under the half-pixel-centre convention.
#[inline]
fn src_coord(dst: u32, dst_len: u32, src_len: u32) -> f64 {
    (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5
}

/// Catmull-Rom (a = -0.5) cubic convolution kernel.
#[inline]
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Separable 1-D taps: (source index, weight) per destination sample.
fn taps(dst_len: u32, src_len: u32, interp: Interpolation) -> Vec<Vec<(usize, f64)>> {
    let last = src_len as i64 - 1;
    (0..dst_len)
        .map(|d| {
            let s = src_coord(d, dst_len, src_len);
            match interp {
                Interpolation::Bilinear => {
                    let s = s.clamp(0.0, last as f64);
                    let i0 = s.floor() as i64;
                    let i1 = (i0 + 1).min(last);
                    let f = s - i0 as f64;
                    vec![(i0 as usize, 1.0 - f), (i1 as usize, f)]
                }
                Interpolation::Bicubic => {
                    let base = s.floor() as i64;
                    let f = s - base as f64;
                    (-1..=2)
                        .map(|k| {
                            let idx = (base + k).clamp(0, last) as usize;
                            (idx, cubic_weight(k as f64 - f))
                        })
                        .collect()
                }
            }
        })
        .collect()
}

pub fn resize(image: &Image, width: u32, height: u32, interp: Interpolation) -> Result<Image, ToolError> {
    if width == 0 || height == 0 {
        return Err(ToolError::InvalidParameter(format!("resize target {width}x{height}")));
    }
    let (sw, sh) = image.dims();
    let ch = image.channels() as usize;
    let xt = taps(width, sw, interp);
    let yt = taps(height, sh, interp);

    // horizontal pass into f64, then vertical pass with rounding
    let mut horiz = vec![0.0f64; width as usize * sh as usize * ch];
    for y in 0..sh as usize {
        for (x, tap) in xt.iter().enumerate() {
            for c in 0..ch {
                let mut acc = 0.0;
                for &(sx, w) in tap {
                    acc += w * image.data()[(y * sw as usize + sx) * ch + c] as f64;
                }
                horiz[(y * width as usize + x) * ch + c] = acc;
            }
        }
    }
    let mut out = Vec::with_capacity(width as usize * height as usize * ch);
    for tap in &yt {
        for x in 0..width as usize {
            for c in 0..ch {
                let mut acc = 0.0;
                for &(sy, w) in tap {
                    acc += w * horiz[(sy * width as usize + x) * ch + c];
                }
                out.push(acc.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(Image::new(width, height, image.channels(), out).expect("resize geometry"))
}
