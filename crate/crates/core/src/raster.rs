//! Binary masks, per-pixel label maps and the COCO run-length codec.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{NormalizedBox, PixelRect};

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("buffer length {len} does not match {width}x{height}")]
    Length { len: usize, width: u32, height: u32 },
    #[error("rle counts sum to {sum}, expected {expected}")]
    RleLength { sum: u64, expected: u64 },
}

/// Binary mask, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct BitMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BitMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BitMask({}x{}, area {})", self.width, self.height, self.area())
    }
}

impl BitMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, RasterError> {
        if bits.len() != width as usize * height as usize {
            return Err(RasterError::Length { len: bits.len(), width, height });
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let i = y as usize * self.width as usize + x as usize;
        self.bits[i] = v;
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    /// Tight pixel bounding box of set pixels.
    pub fn bbox(&self) -> Option<PixelRect> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then(|| PixelRect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    pub fn normalized_bbox(&self) -> Option<NormalizedBox> {
        let r = self.bbox()?;
        NormalizedBox::new(
            r.x as f64 / self.width as f64,
            r.y as f64 / self.height as f64,
            (r.x + r.width) as f64 / self.width as f64,
            (r.y + r.height) as f64 / self.height as f64,
        )
        .ok()
    }

    pub fn crop(&self, rect: PixelRect) -> BitMask {
        BitMask::from_fn(rect.width, rect.height, |x, y| self.get(rect.x + x, rect.y + y))
    }

    /// Nearest-neighbour resample with half-pixel centres.
    pub fn resize_nearest(&self, width: u32, height: u32) -> BitMask {
        let (sw, sh) = (self.width, self.height);
        BitMask::from_fn(width, height, |x, y| {
            self.get(nearest_src(x, width, sw), nearest_src(y, height, sh))
        })
    }

    /// COCO uncompressed RLE: column-major runs, first run counts zeros.
    pub fn to_rle(&self) -> Rle {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..self.width {
            for y in 0..self.height {
                let v = self.get(x, y);
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        Rle { size: [self.height, self.width], counts }
    }

    pub fn from_rle(rle: &Rle) -> Result<BitMask, RasterError> {
        let [height, width] = rle.size;
        let expected = width as u64 * height as u64;
        let sum: u64 = rle.counts.iter().map(|&c| c as u64).sum();
        if sum != expected {
            return Err(RasterError::RleLength { sum, expected });
        }
        let mut mask = BitMask::empty(width, height);
        let mut pos = 0u64;
        let mut value = false;
        for &c in &rle.counts {
            if value {
                for p in pos..pos + c as u64 {
                    let x = (p / height as u64) as u32;
                    let y = (p % height as u64) as u32;
                    mask.set(x, y, true);
                }
            }
            pos += c as u64;
            value = !value;
        }
        Ok(mask)
    }
}

pub(crate) fn nearest_src(dst: u32, dst_len: u32, src_len: u32) -> u32 {
    let s = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64;
    (s.floor() as i64).clamp(0, src_len as i64 - 1) as u32
}

/// Uncompressed COCO run-length encoding (`size` is `[height, width]`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

/// Per-pixel integer labels (class ids, or encoded panoptic ids).
#[derive(Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    data: Vec<u32>,
}

impl std::fmt::Debug for LabelMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LabelMap({}x{})", self.width, self.height)
    }
}

impl LabelMap {
    pub fn new(width: u32, height: u32, data: Vec<u32>) -> Result<Self, RasterError> {
        if data.len() != width as usize * height as usize {
            return Err(RasterError::Length { len: data.len(), width, height });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: u32) -> Self {
        Self { width, height, data: vec![value; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u32) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_mask(mask: &BitMask, value: u32) -> Self {
        Self::from_fn(mask.width, mask.height, |x, y| if mask.get(x, y) { value } else { 0 })
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
    pub fn data(&self) -> &[u32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u32) {
        let i = y as usize * self.width as usize + x as usize;
        self.data[i] = v;
    }

    pub fn distinct(&self) -> std::collections::BTreeSet<u32> {
        self.data.iter().copied().collect()
    }

    pub fn mask_of(&self, value: u32) -> BitMask {
        BitMask::from_fn(self.width, self.height, |x, y| self.get(x, y) == value)
    }

    pub fn crop(&self, rect: PixelRect) -> LabelMap {
        LabelMap::from_fn(rect.width, rect.height, |x, y| self.get(rect.x + x, rect.y + y))
    }

    pub fn resize_nearest(&self, width: u32, height: u32) -> LabelMap {
        let (sw, sh) = (self.width, self.height);
        LabelMap::from_fn(width, height, |x, y| {
            self.get(nearest_src(x, width, sw), nearest_src(y, height, sh))
        })
    }

    /// Pixels whose 4-neighbourhood (inside the image) holds a different label.
    pub fn boundary_pixels(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                let crosses = (x > 0 && self.get(x - 1, y) != v)
                    || (x + 1 < self.width && self.get(x + 1, y) != v)
                    || (y > 0 && self.get(x, y - 1) != v)
                    || (y + 1 < self.height && self.get(x, y + 1) != v);
                if crosses {
                    out.push((x, y));
                }
            }
        }
        out
    }
}
