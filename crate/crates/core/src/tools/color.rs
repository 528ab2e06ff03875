use serde::{Deserialize, Serialize};

use super::ToolError;
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    Hsv,
    Lab,
}

/// Converts between RGB and HSV/LAB. Only pairs with RGB on one side are supported.
pub fn convert_color_space(image: &Image, from: ColorSpace, to: ColorSpace) -> Result<Image, ToolError> {
    if image.channels() != 3 {
        return Err(ToolError::UnsupportedConversion { from, to, reason: "needs 3 channels" });
    }
    let f: fn([u8; 3]) -> [u8; 3] = match (from, to) {
        (a, b) if a == b => return Ok(image.clone()),
        (ColorSpace::Rgb, ColorSpace::Hsv) => rgb_to_hsv8,
        (ColorSpace::Hsv, ColorSpace::Rgb) => hsv8_to_rgb,
        (ColorSpace::Rgb, ColorSpace::Lab) => |p| lab_to_8(rgb_to_lab(p)),
        (ColorSpace::Lab, ColorSpace::Rgb) => |p| lab_to_rgb(lab_from_8(p)),
        _ => return Err(ToolError::UnsupportedConversion { from, to, reason: "no RGB endpoint" }),
    };
    let mut out = image.data().to_vec();
    for px in out.chunks_exact_mut(3) {
        let r = f([px[0], px[1], px[2]]);
        px.copy_from_slice(&r);
    }
    Ok(Image::new(image.width(), image.height(), 3, out).expect("same geometry"))
}

/// Hexcone HSV with H in degrees/2 (0..=179), S and V on 0..=255.
pub fn rgb_to_hsv8([r, g, b]: [u8; 3]) -> [u8; 3] {
    let (rf, gf, bf) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = rf.max(gf).max(bf);
    let min = rf.min(gf).min(bf);
    let d = max - min;
    let mut h = if d == 0.0 {
        0.0
    } else if max == rf {
        60.0 * ((gf - bf) / d)
    } else if max == gf {
        60.0 * ((bf - rf) / d + 2.0)
    } else {
        60.0 * ((rf - gf) / d + 4.0)
    };
    if h < 0.0 {
        h += 360.0;
    }
    let s = if max == 0.0 { 0.0 } else { d / max };
    let h8 = ((h / 2.0).round() as u32 % 180) as u8;
    [h8, (s * 255.0).round() as u8, (max * 255.0).round() as u8]
}

pub fn hsv8_to_rgb([h, s, v]: [u8; 3]) -> [u8; 3] {
    let h = h as f64 * 2.0;
    let s = s as f64 / 255.0;
    let v = v as f64 / 255.0;
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |t: f64| ((t + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r1), q(g1), q(b1)]
}

const WHITE_D65: [f64; 3] = [0.95047, 1.0, 1.08883];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// CIELAB (L in 0..100) under D65.
pub fn rgb_to_lab([r, g, b]: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = [r, g, b].map(|v| srgb_to_linear(v as f64 / 255.0));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let f = |t: f64| {
        const E: f64 = 216.0 / 24389.0;
        const K: f64 = 24389.0 / 27.0;
        if t > E {
            t.cbrt()
        } else {
            (K * t + 16.0) / 116.0
        }
    };
    let fx = f(x / WHITE_D65[0]);
    let fy = f(y / WHITE_D65[1]);
    let fz = f(z / WHITE_D65[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn lab_to_rgb([l, a, b]: [f64; 3]) -> [u8; 3] {
    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - b / 200.0;
    let finv = |t: f64| {
        let t3 = t * t * t;
        if t3 > 216.0 / 24389.0 {
            t3
        } else {
            (116.0 * t - 16.0) * 27.0 / 24389.0
        }
    };
    let x = finv(fx) * WHITE_D65[0];
    let y = finv(fy) * WHITE_D65[1];
    let z = finv(fz) * WHITE_D65[2];
    let r = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    let g = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    let bl = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    [r, g, bl].map(|c| (linear_to_srgb(c.clamp(0.0, 1.0)) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// 8-bit LAB encoding: L*255/100, a+128, b+128.
fn lab_to_8([l, a, b]: [f64; 3]) -> [u8; 3] {
    let q = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    [q(l * 255.0 / 100.0), q(a + 128.0), q(b + 128.0)]
}

fn lab_from_8([l, a, b]: [u8; 3]) -> [f64; 3] {
    [l as f64 * 100.0 / 255.0, a as f64 - 128.0, b as f64 - 128.0]
}

/// Target statistics for LAB colour normalisation.
pub const NORM_L_MEAN: f64 = 128.0;
pub const NORM_L_STD: f64 = 48.0;
pub const NORM_AB_MEAN: f64 = 128.0;

/// Colour normalisation: standardise each LAB channel, re-map L to a fixed
/// mean/std and re-centre a/b on neutral keeping their spread, then back to RGB.
/// Channels with zero variance are only shifted.
pub fn color_normalize(image: &Image) -> Result<Image, ToolError> {
    if image.channels() != 3 {
        return Ok(image.clone());
    }
    let lab: Vec<[f64; 3]> = image
        .data()
        .chunks_exact(3)
        .map(|p| {
            let v = lab_to_8(rgb_to_lab([p[0], p[1], p[2]]));
            [v[0] as f64, v[1] as f64, v[2] as f64]
        })
        .collect();
    let n = lab.len() as f64;
    let mut mapped = lab.clone();
    for c in 0..3 {
        let mean = lab.iter().map(|p| p[c]).sum::<f64>() / n;
        let var = lab.iter().map(|p| (p[c] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let (target_mean, target_std) = if c == 0 { (NORM_L_MEAN, NORM_L_STD) } else { (NORM_AB_MEAN, std) };
        for (m, p) in mapped.iter_mut().zip(&lab) {
            m[c] = if std > 0.0 { (p[c] - mean) / std * target_std + target_mean } else { p[c] - mean + target_mean };
        }
    }
    let mut out = Vec::with_capacity(image.data().len());
    for p in mapped {
        let q = p.map(|v| v.round().clamp(0.0, 255.0) as u8);
        out.extend_from_slice(&lab_to_rgb(lab_from_8(q)));
    }
    Ok(Image::new(image.width(), image.height(), 3, out).expect("same geometry"))
}
