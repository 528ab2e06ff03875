use super::ToolError;
use crate::image::Image;

/// Real-valued interleaved pixel buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatBuffer {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<f64>,
}

impl FloatBuffer {
    pub fn channel(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(c).step_by(self.channels as usize).copied()
    }
}

impl From<&Image> for FloatBuffer {
    fn from(img: &Image) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            channels: img.channels(),
            data: img.data().iter().map(|&v| v as f64).collect(),
        }
    }
}

/// v / 255.
pub fn normalize_pixels(image: &Image) -> FloatBuffer {
    let mut buf = FloatBuffer::from(image);
    buf.data.iter_mut().for_each(|v| *v /= 255.0);
    buf
}

pub fn standardize_pixels(image: &Image) -> Result<FloatBuffer, ToolError> {
    standardize_buffer(&FloatBuffer::from(image))
}

/// Per-channel (v - mean) / population std.
pub fn standardize_buffer(buf: &FloatBuffer) -> Result<FloatBuffer, ToolError> {
    let ch = buf.channels as usize;
    let n = (buf.data.len() / ch) as f64;
    let mut out = buf.clone();
    for c in 0..ch {
        let mean = buf.channel(c).sum::<f64>() / n;
        let var = buf.channel(c).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if var <= 0.0 {
            return Err(ToolError::ZeroVariance { channel: c as u8 });
        }
        let std = var.sqrt();
        for v in out.data.iter_mut().skip(c).step_by(ch) {
            *v = (*v - mean) / std;
        }
    }
    Ok(out)
}
