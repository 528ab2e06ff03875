//! 8-bit interleaved pixel buffers and the codec boundary.
//!
//! Everything inside the pipeline works on [`Image`]; the `image` crate is
//! only touched here when bytes come in (JPEG/PNG/BMP) or go out (PNG).

use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image decode failed: {0}")]
    Decode(String),
    #[error("image encode failed: {0}")]
    Encode(String),
    #[error("invalid image geometry: {0}")]
    Geometry(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major, channel-interleaved 8-bit image with 1 (gray) or 3 (RGB) channels.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish()
    }
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Geometry(format!("{width}x{height} has zero extent")));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Geometry(format!("{channels} channels (expected 1 or 3)")));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(ImageError::Geometry(format!(
                "buffer holds {} bytes, {width}x{height}x{channels} needs {expected}",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Self {
        let len = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; len]).expect("valid geometry")
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        channels: u8,
        mut f: impl FnMut(u32, u32, u8) -> u8,
    ) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * channels as usize);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data).expect("valid geometry")
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

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32, c: u8) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: u8, v: u8) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    /// Luma (BT.601 weights) as f64, row-major. Gray images pass through.
    pub fn luma_f64(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f64).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                .collect(),
        }
    }

    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self.luma_f64().into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        Image::new(self.width, self.height, 1, data).expect("same geometry")
    }

    pub fn decode(bytes: &[u8]) -> Result<Image, ImageError> {
        let dynamic = image::load_from_memory(bytes).map_err(|e| ImageError::Decode(e.to_string()))?;
        Ok(Self::from_dynamic(dynamic))
    }

    pub fn open(path: &Path) -> Result<Image, ImageError> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes)
    }

    fn from_dynamic(dynamic: image::DynamicImage) -> Image {
        use image::ColorType;
        let gray = matches!(
            dynamic.color(),
            ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16
        );
        if gray {
            let buf = dynamic.to_luma8();
            let (w, h) = buf.dimensions();
            Image::new(w, h, 1, buf.into_raw()).expect("decoder geometry")
        } else {
            let buf = dynamic.to_rgb8();
            let (w, h) = buf.dimensions();
            Image::new(w, h, 3, buf.into_raw()).expect("decoder geometry")
        }
    }

    /// Lossless PNG encoding; deterministic for equal pixel content.
    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let color = if self.channels == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb };
        encode_png_raw(self.width, self.height, color, &self.data, None)
    }
}

/// Shared PNG writer so every artifact uses the same encoder settings.
pub(crate) fn encode_png_raw(
    width: u32,
    height: u32,
    color: png::ColorType,
    data: &[u8],
    palette: Option<&[u8]>,
) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(Cursor::new(&mut out), width, height);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_compression(png::Compression::Balanced);
        if let Some(p) = palette {
            encoder.set_palette(p.to_vec());
        }
        let mut writer = encoder.write_header().map_err(|e| ImageError::Encode(e.to_string()))?;
        writer.write_image_data(data).map_err(|e| ImageError::Encode(e.to_string()))?;
        writer.finish().map_err(|e| ImageError::Encode(e.to_string()))?;
    }
    Ok(out)
}

/// Decoded PNG samples without any palette expansion.
pub(crate) struct RawPng {
    pub width: u32,
    pub height: u32,
    pub color: png::ColorType,
    pub data: Vec<u8>,
}

pub(crate) fn decode_png_raw(bytes: &[u8]) -> Result<RawPng, ImageError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| ImageError::Decode(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Decode("png output size overflow".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| ImageError::Decode(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::Decode(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    Ok(RawPng { width: info.width, height: info.height, color: info.color_type, data: buf })
}

/// Extensions accepted on ingest.
pub fn is_supported_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("jpg" | "jpeg" | "png" | "bmp")
    )
}

/// Reads only the header to obtain dimensions.
pub fn probe_dimensions(path: &Path) -> Result<(u32, u32), ImageError> {
    image::image_dimensions(path).map_err(|e| ImageError::Decode(e.to_string()))
}
