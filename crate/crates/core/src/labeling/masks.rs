use super::LabelError;
use crate::image::{decode_png_raw, encode_png_raw};
use crate::raster::{BitMask, LabelMap};

/// Panoptic segment id for `(class, instance)`; stuff uses instance 0.
pub fn panoptic_id(class_id: u32, instance: u32) -> u32 {
    class_id * 1000 + instance
}

pub fn split_panoptic_id(id: u32) -> (u32, u32) {
    (id / 1000, id % 1000)
}

/// Fixed 256-entry palette: index 0 black, others spread by bit interleaving.
pub fn palette() -> Vec<u8> {
    let mut p = Vec::with_capacity(256 * 3);
    for i in 0u32..256 {
        let (mut r, mut g, mut b) = (0u8, 0u8, 0u8);
        let mut c = i;
        for j in 0..8 {
            r |= ((c & 1) as u8) << (7 - j);
            g |= (((c >> 1) & 1) as u8) << (7 - j);
            b |= (((c >> 2) & 1) as u8) << (7 - j);
            c >>= 3;
        }
        p.extend_from_slice(&[r, g, b]);
    }
    p
}

/// 8-bit paletted PNG whose indices are class ids.
pub fn emit_semantic_png(map: &LabelMap) -> Result<Vec<u8>, LabelError> {
    let mut data = Vec::with_capacity(map.data().len());
    for &v in map.data() {
        if v > 255 {
            return Err(LabelError::TooManyClasses(v));
        }
        data.push(v as u8);
    }
    Ok(encode_png_raw(map.width(), map.height(), png::ColorType::Indexed, &data, Some(&palette()))?)
}

pub fn decode_semantic_png(bytes: &[u8]) -> Result<LabelMap, LabelError> {
    let raw = decode_png_raw(bytes)?;
    if !matches!(raw.color, png::ColorType::Indexed | png::ColorType::Grayscale) {
        return Err(LabelError::Format(format!("semantic mask has colour type {:?}", raw.color)));
    }
    Ok(LabelMap::new(raw.width, raw.height, raw.data.into_iter().map(u32::from).collect())?)
}

/// Binary mask as 8-bit greyscale, 255 inside.
pub fn emit_instance_png(mask: &BitMask) -> Result<Vec<u8>, LabelError> {
    let data: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    Ok(encode_png_raw(mask.width(), mask.height(), png::ColorType::Grayscale, &data, None)?)
}

pub fn decode_instance_png(bytes: &[u8]) -> Result<BitMask, LabelError> {
    let raw = decode_png_raw(bytes)?;
    if raw.color != png::ColorType::Grayscale {
        return Err(LabelError::Format(format!("instance mask has colour type {:?}", raw.color)));
    }
    Ok(BitMask::new(raw.width, raw.height, raw.data.into_iter().map(|v| v >= 128).collect())?)
}

/// 24-bit PNG, id = R + 256 G + 65536 B.
pub fn emit_panoptic_png(ids: &LabelMap) -> Result<Vec<u8>, LabelError> {
    let mut data = Vec::with_capacity(ids.data().len() * 3);
    for &id in ids.data() {
        if id >= 1 << 24 {
            return Err(LabelError::TooManyClasses(id));
        }
        data.extend_from_slice(&[(id & 0xff) as u8, ((id >> 8) & 0xff) as u8, ((id >> 16) & 0xff) as u8]);
    }
    Ok(encode_png_raw(ids.width(), ids.height(), png::ColorType::Rgb, &data, None)?)
}

pub fn decode_panoptic_png(bytes: &[u8]) -> Result<LabelMap, LabelError> {
    let raw = decode_png_raw(bytes)?;
    if raw.color != png::ColorType::Rgb {
        return Err(LabelError::Format(format!("panoptic mask has colour type {:?}", raw.color)));
    }
    let ids = raw.data.chunks_exact(3).map(|p| p[0] as u32 + 256 * p[1] as u32 + 65536 * p[2] as u32).collect();
    Ok(LabelMap::new(raw.width, raw.height, ids)?)
}
