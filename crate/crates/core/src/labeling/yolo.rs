use super::{Detection, LabelError};
use crate::geometry::NormalizedBox;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YoloLine {
    pub class_idx: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl YoloLine {
    pub fn from_box(class_idx: usize, b: &NormalizedBox) -> Self {
        let (cx, cy) = b.center();
        Self { class_idx, cx, cy, w: b.width(), h: b.height() }
    }

    pub fn in_bounds(&self, tol: f64) -> bool {
        let vals = [self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.cx + self.w / 2.0, self.cy + self.h / 2.0];
        self.w > 0.0 && self.h > 0.0 && vals.iter().all(|v| *v >= -tol && *v <= 1.0 + tol)
    }

    pub fn to_box(&self) -> Option<NormalizedBox> {
        let c = |v: f64| v.clamp(0.0, 1.0);
        NormalizedBox::new(
            c(self.cx - self.w / 2.0),
            c(self.cy - self.h / 2.0),
            c(self.cx + self.w / 2.0),
            c(self.cy + self.h / 2.0),
        )
        .ok()
    }
}

/// One `class cx cy w h` line per detection, six decimals, LF endings.
pub fn emit_yolo(detections: &[Detection], class_index: impl Fn(&str) -> Option<usize>) -> Result<String, LabelError> {
    let mut out = String::new();
    for d in detections {
        let idx = class_index(&d.class).ok_or_else(|| LabelError::UnknownClass(d.class.clone()))?;
        let l = YoloLine::from_box(idx, &d.bbox);
        out.push_str(&format!("{} {:.6} {:.6} {:.6} {:.6}\n", l.class_idx, l.cx, l.cy, l.w, l.h));
    }
    Ok(out)
}

/// Parses YOLO text; errors carry the 1-based line number.
pub fn parse_yolo(text: &str) -> Result<Vec<YoloLine>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 {
            return Err((i + 1, format!("expected 5 fields, got {}", parts.len())));
        }
        let class_idx = parts[0].parse::<usize>().map_err(|e| (i + 1, format!("class index: {e}")))?;
        let mut nums = [0.0; 4];
        for (k, p) in parts[1..].iter().enumerate() {
            nums[k] = p.parse::<f64>().map_err(|e| (i + 1, format!("field {}: {e}", k + 2)))?;
            if !nums[k].is_finite() {
                return Err((i + 1, "non-finite value".into()));
            }
        }
        out.push(YoloLine { class_idx, cx: nums[0], cy: nums[1], w: nums[2], h: nums[3] });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(class: &str, b: [f64; 4]) -> Detection {
        Detection::new(class, NormalizedBox::from_slice(&b).unwrap(), 0.9)
    }

    #[test]
    fn quadrant_box_line() {
        let s = emit_yolo(&[det("cat", [0.0, 0.0, 0.5, 0.5])], |_| Some(0)).unwrap();
        assert_eq!(s, "0 0.250000 0.250000 0.500000 0.500000\n");
    }

    #[test]
    fn empty_is_zero_bytes() {
        assert_eq!(emit_yolo(&[], |_| Some(0)).unwrap(), "");
    }

    #[test]
    fn unknown_class() {
        assert!(matches!(emit_yolo(&[det("yak", [0.0, 0.0, 1.0, 1.0])], |_| None), Err(LabelError::UnknownClass(_))));
    }

    #[test]
    fn malformed_lines() {
        assert_eq!(parse_yolo("0 0.1 0.1 0.1\n").unwrap_err().0, 1);
        assert_eq!(parse_yolo("\n0 0.5 0.5 0.1 0.1\nx 0 0 0 0").unwrap_err().0, 3);
    }

    proptest! {
        #[test]
        fn roundtrip_within_1e6(x1 in 0.0f64..0.5, y1 in 0.0f64..0.5, w in 0.01f64..0.5, h in 0.01f64..0.5, c in 0usize..10) {
            let d = det("k", [x1, y1, x1 + w, y1 + h]);
            let text = emit_yolo(std::slice::from_ref(&d), |_| Some(c)).unwrap();
            let parsed = parse_yolo(&text).unwrap();
            prop_assert_eq!(parsed[0].class_idx, c);
            let b = parsed[0].to_box().unwrap();
            for (a, e) in b.to_array().iter().zip(d.bbox.to_array()) {
                prop_assert!((a - e).abs() <= 1e-6 + 1e-12);
            }
            // emit -> parse -> emit is byte-stable
            let again: String = parsed.iter().map(|l| format!("{} {:.6} {:.6} {:.6} {:.6}\n", l.class_idx, l.cx, l.cy, l.w, l.h)).collect();
            prop_assert_eq!(again, text);
        }
    }
}
