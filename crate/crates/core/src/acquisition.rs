//! Candidate image sources and the per-class quota controller.
//!
//! Sources enumerate their entries once at open time in a fixed order
//! (lexicographic path order, or manifest line order). Bytes are fetched and
//! decoded lazily in [`SourceHandle::next_batch`]; entries that fail to
//! decode are reported back as [`UnreadableEntry`] rather than aborting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{is_supported_image, Image};

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("source locator missing or unreadable: {0}")]
    LocatorMissing(PathBuf),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("batch size must be at least 1")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    LocalDir,
    UrlList,
    CorpusManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDescriptor {
    pub kind: SourceKind,
    pub locator: PathBuf,
    pub source_id: String,
}

impl SourceDescriptor {
    pub fn local_dir(path: impl Into<PathBuf>, source_id: impl Into<String>) -> Self {
        Self { kind: SourceKind::LocalDir, locator: path.into(), source_id: source_id.into() }
    }

    pub fn manifest(path: impl Into<PathBuf>, source_id: impl Into<String>) -> Self {
        Self { kind: SourceKind::CorpusManifest, locator: path.into(), source_id: source_id.into() }
    }

    /// Directory for `LocalDir`, manifest/URL list file otherwise.
    pub fn infer(path: impl Into<PathBuf>, source_id: impl Into<String>) -> Self {
        let path = path.into();
        let kind = if path.is_dir() {
            SourceKind::LocalDir
        } else if path.extension().and_then(|e| e.to_str()) == Some("tsv") {
            SourceKind::CorpusManifest
        } else {
            SourceKind::UrlList
        };
        Self { kind, locator: path, source_id: source_id.into() }
    }
}

/// A decoded candidate image.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    /// 1-based ordinal of the entry within its source.
    pub index: u64,
    pub id: String,
    pub image: Image,
    pub source_id: String,
    pub origin_uri: String,
    pub acquired_at: u64,
    pub class_hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnreadableEntry {
    pub index: u64,
    pub id: String,
    pub origin_uri: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
enum Locator {
    Path(PathBuf),
    Url(String),
    Invalid(String),
}

#[derive(Debug, Clone)]
struct Entry {
    index: u64,
    id: String,
    locator: Locator,
    source_id: String,
    class_hint: Option<String>,
}

impl Entry {
    fn origin(&self) -> String {
        match &self.locator {
            Locator::Path(p) => p.display().to_string(),
            Locator::Url(u) => u.clone(),
            Locator::Invalid(line) => line.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassQuota {
    pub target: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub in_flight: u64,
}

impl ClassQuota {
    pub fn remaining(&self) -> u64 {
        self.target.saturating_sub(self.accepted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotaState {
    pub classes: BTreeMap<String, ClassQuota>,
    /// How far in-flight fetches of one class may exceed its remaining target.
    pub overcollect_factor: f64,
}

impl QuotaState {
    pub fn new(targets: impl IntoIterator<Item = (String, u64)>, overcollect_factor: f64) -> Self {
        let classes = targets
            .into_iter()
            .map(|(name, target)| (name, ClassQuota { target, ..Default::default() }))
            .collect();
        Self { classes, overcollect_factor: overcollect_factor.max(1.0) }
    }

    pub fn remaining(&self, class: &str) -> Option<u64> {
        self.classes.get(class).map(ClassQuota::remaining)
    }

    pub fn total_remaining(&self) -> u64 {
        self.classes.values().map(ClassQuota::remaining).sum()
    }

    pub fn is_satisfied(&self) -> bool {
        self.total_remaining() == 0
    }

    /// Records the outcome for one image of `class`.
    pub fn update(&mut self, class: &str, outcome: Outcome) -> Result<(), AcquisitionError> {
        let q = self.classes.get_mut(class).ok_or_else(|| AcquisitionError::UnknownClass(class.to_string()))?;
        match outcome {
            Outcome::Accepted => q.accepted += 1,
            Outcome::Rejected => q.rejected += 1,
        }
        Ok(())
    }

    /// Returns an in-flight slot charged by `next_batch`.
    pub fn release(&mut self, class: &str) {
        if let Some(q) = self.classes.get_mut(class) {
            q.in_flight = q.in_flight.saturating_sub(1);
        }
    }

    fn fetch_cap(&self, q: &ClassQuota) -> u64 {
        (q.remaining() as f64 * self.overcollect_factor).ceil() as u64
    }
}

/// Functional form of [`QuotaState::update`].
pub fn update_quota(
    quota: &QuotaState,
    class: &str,
    outcome: Outcome,
) -> Result<QuotaState, AcquisitionError> {
    let mut next = quota.clone();
    next.update(class, outcome)?;
    Ok(next)
}

#[derive(Debug, Default)]
pub struct Batch {
    pub records: Vec<ImageRecord>,
    pub unreadable: Vec<UnreadableEntry>,
    /// Entries passed over because their hinted class needs no more images.
    pub passed_over: Vec<u64>,
}

/// Single-consumer cursor over a source's entries.
pub struct SourceHandle {
    entries: Vec<Entry>,
    cursor: usize,
    consumed: u64,
    politeness: Duration,
    fetched_remote: bool,
}

impl std::fmt::Debug for SourceHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SourceHandle")
            .field("entries", &self.entries.len())
            .field("cursor", &self.cursor)
            .finish()
    }
}

pub fn open_source(desc: &SourceDescriptor) -> Result<SourceHandle, AcquisitionError> {
    let entries = match desc.kind {
        SourceKind::LocalDir => scan_dir(desc)?,
        SourceKind::UrlList => read_url_list(desc)?,
        SourceKind::CorpusManifest => read_manifest(desc)?,
    };
    Ok(SourceHandle { entries, cursor: 0, consumed: 0, politeness: Duration::ZERO, fetched_remote: false })
}

fn scan_dir(desc: &SourceDescriptor) -> Result<Vec<Entry>, AcquisitionError> {
    let root = &desc.locator;
    if !root.is_dir() {
        return Err(AcquisitionError::LocatorMissing(root.clone()));
    }
    let mut files = Vec::new();
    collect_files(root, &mut files).map_err(|_| AcquisitionError::LocatorMissing(root.clone()))?;
    files.sort();
    Ok(files
        .into_iter()
        .filter(|p| is_supported_image(p))
        .enumerate()
        .map(|(i, path)| {
            let rel = path.strip_prefix(root).unwrap_or(&path).with_extension("");
            let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            let class_hint = (parts.len() > 1).then(|| parts[0].clone());
            Entry {
                index: i as u64 + 1,
                id: parts.join("__"),
                locator: Locator::Path(path),
                source_id: desc.source_id.clone(),
                class_hint,
            }
        })
        .collect())
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let hidden = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'));
        if hidden {
            continue;
        }
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>, AcquisitionError> {
    let text = std::fs::read_to_string(path).map_err(|_| AcquisitionError::LocatorMissing(path.to_path_buf()))?;
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .collect())
}

fn resolve_locator(raw: &str, base: &Path) -> Locator {
    if raw.starts_with("http://") || raw.starts_with("https://") {
        Locator::Url(raw.to_string())
    } else if let Some(p) = raw.strip_prefix("file://") {
        Locator::Path(PathBuf::from(p))
    } else {
        let p = Path::new(raw);
        Locator::Path(if p.is_absolute() { p.to_path_buf() } else { base.join(p) })
    }
}

fn read_url_list(desc: &SourceDescriptor) -> Result<Vec<Entry>, AcquisitionError> {
    let base = desc.locator.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok(read_lines(&desc.locator)?
        .into_iter()
        .enumerate()
        .map(|(i, line)| {
            let raw = line.trim();
            let stem = raw.rsplit('/').next().unwrap_or(raw);
            let stem = stem.split(['?', '#']).next().unwrap_or(stem);
            let stem = Path::new(stem).file_stem().and_then(|s| s.to_str()).unwrap_or("url");
            Entry {
                index: i as u64 + 1,
                id: format!("{:06}_{}", i + 1, stem),
                locator: resolve_locator(raw, &base),
                source_id: desc.source_id.clone(),
                class_hint: None,
            }
        })
        .collect())
}

fn read_manifest(desc: &SourceDescriptor) -> Result<Vec<Entry>, AcquisitionError> {
    let base = desc.locator.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok(read_lines(&desc.locator)?
        .into_iter()
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            let index = i as u64 + 1;
            if fields.len() < 3 || fields[0].is_empty() || fields[1].is_empty() {
                return Entry {
                    index,
                    id: format!("line{index}"),
                    locator: Locator::Invalid(line.clone()),
                    source_id: desc.source_id.clone(),
                    class_hint: None,
                };
            }
            let source_id = if fields[2].is_empty() { desc.source_id.clone() } else { fields[2].to_string() };
            Entry {
                index,
                id: fields[0].to_string(),
                locator: resolve_locator(fields[1], &base),
                source_id,
                class_hint: fields.get(3).filter(|h| !h.is_empty()).map(|h| h.to_string()),
            }
        })
        .collect())
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl SourceHandle {
    pub fn with_politeness(mut self, delay: Duration) -> Self {
        self.politeness = delay;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_exhausted(&self) -> bool {
        self.cursor >= self.entries.len()
    }

    /// Entries fetched so far, decodable or not.
    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    /// Moves past every entry with ordinal `<= index`.
    pub fn skip_through(&mut self, index: u64) {
        while self.cursor < self.entries.len() && self.entries[self.cursor].index <= index {
            self.cursor += 1;
        }
    }

    /// Fetches up to `batch_size` decodable records in source order.
    ///
    /// Entries hinted with a class whose remaining target is zero are passed
    /// over without a fetch. The batch also stops early, without skipping,
    /// when a hinted class already has as many images in flight as its
    /// remaining target times the over-collection factor allows.
    pub fn next_batch(&mut self, quota: &mut QuotaState, batch_size: usize) -> Result<Batch, AcquisitionError> {
        if batch_size == 0 {
            return Err(AcquisitionError::EmptyBatch);
        }
        let mut batch = Batch::default();
        while batch.records.len() < batch_size && self.cursor < self.entries.len() {
            let entry = self.entries[self.cursor].clone();
            let charged = entry.class_hint.as_deref().filter(|h| quota.classes.contains_key(*h));
            if let Some(class) = charged {
                let q = &quota.classes[class];
                if q.remaining() == 0 {
                    batch.passed_over.push(entry.index);
                    self.cursor += 1;
                    continue;
                }
                if q.in_flight >= quota.fetch_cap(q) {
                    break;
                }
            }
            self.cursor += 1;
            self.consumed += 1;
            match self.fetch(&entry) {
                Ok(image) => {
                    if let Some(class) = charged {
                        quota.classes.get_mut(class).expect("checked").in_flight += 1;
                    }
                    batch.records.push(ImageRecord {
                        index: entry.index,
                        id: entry.id.clone(),
                        image,
                        source_id: entry.source_id.clone(),
                        origin_uri: entry.origin(),
                        acquired_at: now_ms(),
                        class_hint: charged.map(str::to_string),
                    });
                }
                Err(reason) => {
                    log::warn!("skipping unreadable entry {} ({}): {reason}", entry.index, entry.origin());
                    batch.unreadable.push(UnreadableEntry {
                        index: entry.index,
                        id: entry.id.clone(),
                        origin_uri: entry.origin(),
                        reason,
                    });
                }
            }
        }
        Ok(batch)
    }

    fn fetch(&mut self, entry: &Entry) -> Result<Image, String> {
        let bytes = match &entry.locator {
            Locator::Path(p) => std::fs::read(p).map_err(|e| e.to_string())?,
            Locator::Url(url) => {
                if self.fetched_remote && !self.politeness.is_zero() {
                    std::thread::sleep(self.politeness);
                }
                self.fetched_remote = true;
                let mut resp = ureq::get(url).call().map_err(|e| e.to_string())?;
                resp.body_mut().read_to_vec().map_err(|e| e.to_string())?
            }
            Locator::Invalid(line) => return Err(format!("malformed manifest line: {line:?}")),
        };
        Image::decode(&bytes).map_err(|e| e.to_string())
    }
}
