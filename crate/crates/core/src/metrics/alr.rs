//! Label reliability by manual inspection: a seeded sample manifest for
//! inspectors and ingestion of their verdicts.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MetricError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlrItem {
    pub image_id: String,
    pub label: String,
}

/// Seeded uniform sample of `sample_n` items without replacement, in
/// dataset order.
pub fn alr_manifest(items: &[AlrItem], sample_n: usize, seed: u64) -> Result<Vec<AlrItem>, MetricError> {
    if sample_n > items.len() {
        return Err(MetricError::SampleTooLarge { requested: sample_n, available: items.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, items.len(), sample_n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| items[i].clone()).collect())
}

/// Tab-separated manifest with a header: `image_id`, `label`, `verdict`
/// (left blank for the inspector).
pub fn manifest_tsv(sample: &[AlrItem]) -> String {
    let mut s = String::from("image_id\tlabel\tverdict\n");
    for it in sample {
        s.push_str(&format!("{}\t{}\t\n", it.image_id, it.label));
    }
    s
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Verdicts {
    /// Whether the assigned label was judged correct.
    pub correct: BTreeMap<String, bool>,
    /// Inspector IoU against a redrawn box, when supplied.
    pub ious: BTreeMap<String, f64>,
}

fn parse_verdict(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "y" | "yes" | "true" | "correct" | "ok" => Some(true),
        "0" | "n" | "no" | "false" | "incorrect" | "wrong" => Some(false),
        _ => None,
    }
}

/// Parses a filled-in manifest: `image_id<TAB>label<TAB>verdict[<TAB>iou]`.
/// Rows with a blank verdict are not yet inspected and are ignored.
pub fn parse_verdicts(text: &str) -> Result<Verdicts, MetricError> {
    let mut v = Verdicts::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || (n == 0 && line.starts_with("image_id")) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |why: &str| MetricError::IngestMismatch(format!("line {}: {why}", n + 1));
        let id = cols.first().map(|s| s.trim()).filter(|s| !s.is_empty()).ok_or_else(|| bad("no image id"))?;
        if let Some(raw) = cols.get(2).filter(|s| !s.trim().is_empty()) {
            let ok = parse_verdict(raw).ok_or_else(|| bad("unrecognized verdict"))?;
            if v.correct.insert(id.to_string(), ok).is_some() {
                return Err(bad("duplicate image id"));
            }
        }
        if let Some(raw) = cols.get(3).filter(|s| !s.trim().is_empty()) {
            let iou: f64 = raw.trim().parse().map_err(|_| bad("iou is not a number"))?;
            if !(0.0..=1.0).contains(&iou) {
                return Err(bad("iou outside [0, 1]"));
            }
            v.ious.insert(id.to_string(), iou);
        }
    }
    Ok(v)
}

/// Fraction of inspected labels judged correct. Every verdict must name an
/// image in the manifest with the same label.
pub fn alr_ingest(manifest: &[AlrItem], verdicts: &Verdicts) -> Result<f64, MetricError> {
    let known: HashMap<&str, &str> = manifest.iter().map(|i| (i.image_id.as_str(), i.label.as_str())).collect();
    for id in verdicts.correct.keys().chain(verdicts.ious.keys()) {
        if !known.contains_key(id.as_str()) {
            return Err(MetricError::IngestMismatch(format!("verdict for unknown image {id}")));
        }
    }
    if verdicts.correct.is_empty() {
        return Err(MetricError::IngestMismatch("no verdicts".into()));
    }
    let ok = verdicts.correct.values().filter(|&&b| b).count();
    Ok(ok as f64 / verdicts.correct.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(n: usize) -> Vec<AlrItem> {
        (0..n).map(|i| AlrItem { image_id: format!("img{i:03}"), label: ["cat", "dog"][i % 2].into() }).collect()
    }

    #[test]
    fn sample_is_seeded_and_distinct() {
        let all = items(50);
        let a = alr_manifest(&all, 10, 7).unwrap();
        assert_eq!(a, alr_manifest(&all, 10, 7).unwrap());
        assert_ne!(a, alr_manifest(&all, 10, 8).unwrap());
        let mut ids: Vec<_> = a.iter().map(|i| &i.image_id).collect();
        ids.dedup();
        assert_eq!(ids.len(), 10);
        assert!(matches!(alr_manifest(&all, 51, 0), Err(MetricError::SampleTooLarge { .. })));
        assert_eq!(alr_manifest(&all, 50, 3).unwrap(), all);
    }

    #[test]
    fn ninety_five_of_hundred() {
        let all = items(100);
        let mut text = manifest_tsv(&all);
        text = text
            .lines()
            .enumerate()
            .map(|(i, l)| if i == 0 { l.to_string() } else { format!("{l}{}", if i <= 95 { "yes" } else { "no" }) })
            .collect::<Vec<_>>()
            .join("\n");
        let v = parse_verdicts(&text).unwrap();
        assert_eq!(alr_ingest(&all, &v).unwrap(), 0.95);
    }

    #[test]
    fn unknown_id_is_a_mismatch() {
        let all = items(3);
        let v = parse_verdicts("ghost\tcat\tyes\n").unwrap();
        assert!(matches!(alr_ingest(&all, &v), Err(MetricError::IngestMismatch(_))));
        assert!(parse_verdicts("img000\tcat\tmaybe\n").is_err());
    }

    #[test]
    fn iou_column_is_read() {
        let v = parse_verdicts("image_id\tlabel\tverdict\timg\nimg000\tcat\tyes\t0.8\nimg001\tdog\t\t0.6\n").unwrap();
        assert_eq!(v.ious.len(), 2);
        assert_eq!(v.correct.len(), 1);
    }
}
