use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::crop_rect;
use super::ToolError;
use crate::geometry::PixelRect;
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentSpec {
    Rotate { degrees: u32 },
    FlipH,
    FlipV,
    GaussianNoise { sigma: f64, seed: u64 },
    /// Reflect-pad by `pad` pixels on every side, then crop `crop` from the padded frame.
    PadCrop { pad: u32, crop: PixelRect },
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<(), ToolError> {
        match self {
            Self::Rotate { degrees } if ![90, 180, 270].contains(degrees) => {
                Err(ToolError::InvalidParameter(format!("rotation {degrees} not a right angle")))
            }
            Self::GaussianNoise { sigma, .. } if !(*sigma > 0.0 && sigma.is_finite()) => {
                Err(ToolError::InvalidParameter(format!("noise sigma {sigma}")))
            }
            _ => Ok(()),
        }
    }
}

pub fn augment(image: &Image, spec: &AugmentSpec) -> Result<Image, ToolError> {
    spec.validate()?;
    let (w, h) = image.dims();
    let ch = image.channels();
    Ok(match spec {
        AugmentSpec::FlipH => Image::from_fn(w, h, ch, |x, y, c| image.get(w - 1 - x, y, c)),
        AugmentSpec::FlipV => Image::from_fn(w, h, ch, |x, y, c| image.get(x, h - 1 - y, c)),
        AugmentSpec::Rotate { degrees: 90 } => Image::from_fn(h, w, ch, |x, y, c| image.get(y, h - 1 - x, c)),
        AugmentSpec::Rotate { degrees: 180 } => Image::from_fn(w, h, ch, |x, y, c| image.get(w - 1 - x, h - 1 - y, c)),
        AugmentSpec::Rotate { .. } => Image::from_fn(h, w, ch, |x, y, c| image.get(w - 1 - y, x, c)),
        AugmentSpec::GaussianNoise { sigma, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let normal = Normal::new(0.0, *sigma).expect("sigma validated");
            let data = image
                .data()
                .iter()
                .map(|&v| (v as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
                .collect();
            Image::new(w, h, ch, data).expect("same geometry")
        }
        AugmentSpec::PadCrop { pad, crop } => {
            let p = *pad as i64;
            let padded = Image::from_fn(w + 2 * pad, h + 2 * pad, ch, |x, y, c| {
                image.get(reflect(x as i64 - p, w), reflect(y as i64 - p, h), c)
            });
            crop_rect(&padded, *crop)?
        }
    })
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn reflect(i: i64, len: u32) -> u32 {
    let n = len as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as u32
}
