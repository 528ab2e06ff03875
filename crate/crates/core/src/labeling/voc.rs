use super::{Detection, LabelError};
use crate::geometry::{round_half_up, NormalizedBox};

#[derive(Debug, Clone, PartialEq)]
pub struct VocObject {
    pub name: String,
    pub xmin: u32,
    pub ymin: u32,
    pub xmax: u32,
    pub ymax: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocAnnotation {
    pub folder: String,
    pub filename: String,
    pub width: u32,
    pub height: u32,
    pub depth: u8,
    pub objects: Vec<VocObject>,
}

/// Normalized box to 1-based inclusive pixel corners.
pub fn to_voc_box(b: &NormalizedBox, width: u32, height: u32) -> (u32, u32, u32, u32) {
    let px = |v: f64, n: u32| round_half_up(v * n as f64).min(n);
    let (x1, y1) = (px(b.x1(), width), px(b.y1(), height));
    let (x2, y2) = (px(b.x2(), width).max(x1 + 1), px(b.y2(), height).max(y1 + 1));
    (x1 + 1, y1 + 1, x2.min(width.max(1)), y2.min(height.max(1)))
}

pub fn from_voc_box(o: &VocObject, width: u32, height: u32) -> Option<NormalizedBox> {
    NormalizedBox::new(
        (o.xmin as f64 - 1.0) / width as f64,
        (o.ymin as f64 - 1.0) / height as f64,
        o.xmax as f64 / width as f64,
        o.ymax as f64 / height as f64,
    )
    .ok()
}

pub fn build_voc(
    folder: &str,
    filename: &str,
    dims: (u32, u32),
    depth: u8,
    detections: &[Detection],
    known: impl Fn(&str) -> bool,
) -> Result<VocAnnotation, LabelError> {
    let mut objects = Vec::new();
    for d in detections {
        if !known(&d.class) {
            return Err(LabelError::UnknownClass(d.class.clone()));
        }
        let (xmin, ymin, xmax, ymax) = to_voc_box(&d.bbox, dims.0, dims.1);
        objects.push(VocObject { name: d.class.clone(), xmin, ymin, xmax, ymax });
    }
    Ok(VocAnnotation { folder: folder.into(), filename: filename.into(), width: dims.0, height: dims.1, depth, objects })
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn emit_voc(a: &VocAnnotation) -> String {
    let mut x = String::from("<annotation>\n");
    x += &format!("  <folder>{}</folder>\n  <filename>{}</filename>\n", esc(&a.folder), esc(&a.filename));
    x += &format!(
        "  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>{}</depth>\n  </size>\n  <segmented>0</segmented>\n",
        a.width, a.height, a.depth
    );
    for o in &a.objects {
        x += &format!(
            "  <object>\n    <name>{}</name>\n    <pose>Unspecified</pose>\n    <truncated>0</truncated>\n    <difficult>0</difficult>\n    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>\n  </object>\n",
            esc(&o.name), o.xmin, o.ymin, o.xmax, o.ymax
        );
    }
    x += "</annotation>\n";
    x
}

fn child<'a, 'i>(n: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    n.children().find(|c| c.has_tag_name(name))
}

pub fn parse_voc(xml: &str) -> Result<VocAnnotation, String> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| e.to_string())?;
    let root = doc.root_element();
    if root.tag_name().name() != "annotation" {
        return Err(format!("root element is <{}>", root.tag_name().name()));
    }
    let text = |n: roxmltree::Node, name: &str| child(n, name).and_then(|c| c.text()).map(|t| t.trim().to_string());
    let num = |n: roxmltree::Node, name: &str| -> Result<u32, String> {
        text(n, name).ok_or_else(|| format!("missing <{name}>"))?.parse::<f64>().map(|v| v.round() as u32).map_err(|e| format!("<{name}>: {e}"))
    };
    let size = child(root, "size").ok_or("missing <size>")?;
    let mut objects = Vec::new();
    for o in root.children().filter(|c| c.has_tag_name("object")) {
        let bb = child(o, "bndbox").ok_or("object without <bndbox>")?;
        objects.push(VocObject {
            name: text(o, "name").ok_or("object without <name>")?,
            xmin: num(bb, "xmin")?,
            ymin: num(bb, "ymin")?,
            xmax: num(bb, "xmax")?,
            ymax: num(bb, "ymax")?,
        });
    }
    Ok(VocAnnotation {
        folder: text(root, "folder").unwrap_or_default(),
        filename: text(root, "filename").unwrap_or_default(),
        width: num(size, "width")?,
        height: num(size, "height")?,
        depth: num(size, "depth").unwrap_or(3) as u8,
        objects,
    })
}
