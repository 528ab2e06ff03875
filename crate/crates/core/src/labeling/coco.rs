use serde::{Deserialize, Serialize};

use crate::raster::Rle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, w, h]` in absolute pixels.
    pub bbox: [f64; 4],
    pub area: f64,
    pub iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Rle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
    #[serde(default)]
    pub supercategory: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CocoDocument {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

/// Pre-id annotation; ids are assigned densely when the document is built.
#[derive(Debug, Clone, PartialEq)]
pub struct CocoEntry {
    pub category: String,
    pub bbox: [f64; 4],
    pub mask: Option<Rle>,
    pub mask_area: Option<u64>,
    pub score: f64,
}

pub struct CocoBuilder {
    doc: CocoDocument,
}

impl CocoBuilder {
    pub fn new(classes: &[String]) -> Self {
        let categories = classes
            .iter()
            .enumerate()
            .map(|(i, n)| CocoCategory { id: i as u64 + 1, name: n.clone(), supercategory: String::new() })
            .collect();
        Self { doc: CocoDocument { categories, ..Default::default() } }
    }

    /// Adds one image and its entries; returns the image id.
    pub fn add_image(&mut self, file_name: &str, dims: (u32, u32), entries: &[CocoEntry]) -> u64 {
        let image_id = self.doc.images.len() as u64 + 1;
        self.doc.images.push(CocoImage { id: image_id, file_name: file_name.into(), width: dims.0, height: dims.1 });
        for e in entries {
            let Some(cat) = self.doc.categories.iter().find(|c| c.name == e.category) else { continue };
            let area = match e.mask_area {
                Some(a) => a as f64,
                None => e.bbox[2] * e.bbox[3],
            };
            let id = self.doc.annotations.len() as u64 + 1;
            self.doc.annotations.push(CocoAnnotation {
                id,
                image_id,
                category_id: cat.id,
                bbox: e.bbox,
                area,
                iscrowd: 0,
                segmentation: e.mask.clone(),
                score: Some((e.score * 1e6).round() / 1e6),
            });
        }
        image_id
    }

    pub fn finish(self) -> CocoDocument {
        self.doc
    }
}

pub fn emit_coco(doc: &CocoDocument) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("coco serializes");
    s.push('\n');
    s
}

pub fn parse_coco(text: &str) -> Result<CocoDocument, String> {
    serde_json::from_str(text).map_err(|e| e.to_string())
}
