//! Image records, manifest ingest and the on-disk corpus store.
//!
//! Layout of a store directory:
//!
//! ```text
//! <root>/store.json     dimension and asset root
//! <root>/records.jsonl  one ImageRecord per line, append-only
//! <root>/images/        generated pixels, named by content hash
//! ```
//!
//! Corpus records keep their manifest `uri` verbatim; relative uris resolve
//! against the asset root (the directory of the first ingested manifest).
//! Generated records live under `images/` and resolve against the store root.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::pixels;
use crate::retrieval::{Embedder, EmbeddingVector, RetrievalError, VectorIndex};

const META_FILE: &str = "store.json";
const RECORDS_FILE: &str = "records.jsonl";
const IMAGES_DIR: &str = "images";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    Corpus,
    Generated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    Reference,
    Keywords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationProvenance {
    pub parent_image_id: String,
    pub mask_id: String,
    pub mode: GenerationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_image_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords: Option<Vec<String>>,
    pub backend_id: String,
    pub created_at: DateTime<Utc>,
}

impl GenerationProvenance {
    /// Reference mode carries a reference image and no keywords; keyword mode
    /// carries a non-empty keyword list and no reference.
    pub fn validate(&self) -> Result<(), String> {
        match self.mode {
            GenerationMode::Reference => {
                if self.reference_image_id.is_none() {
                    return Err("reference mode requires reference_image_id".into());
                }
                if self.keywords.is_some() {
                    return Err("reference mode must not carry keywords".into());
                }
            }
            GenerationMode::Keywords => {
                if self.reference_image_id.is_some() {
                    return Err("keywords mode must not carry reference_image_id".into());
                }
                match &self.keywords {
                    Some(k) if !k.is_empty() => {}
                    _ => return Err("keywords mode requires a non-empty keyword list".into()),
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub uri: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
    pub source: ImageSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<GenerationProvenance>,
    pub width: u32,
    pub height: u32,
}

/// Description for a generated image, composed from its parent and guidance.
pub fn compose_generated_description(parent_description: &str, guidance: &str) -> String {
    format!("{parent_description} modified with {guidance}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkipReason {
    Malformed { detail: String },
    DuplicateId { id: String },
    DimensionMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedLine {
    /// 1-based manifest line number.
    pub line: usize,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub count: usize,
    pub dimension: usize,
    pub skipped: Vec<SkippedLine>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read manifest {path}: {source}")]
    UnreadableManifest {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("image not found: {0}")]
    NotFound(String),
    #[error("duplicate image id: {0}")]
    DuplicateId(String),
    #[error("unknown parent image: {0}")]
    UnknownParent(String),
    #[error("unknown reference image: {0}")]
    UnknownReference(String),
    #[error("invalid provenance: {0}")]
    InvalidProvenance(String),
    #[error("dimension mismatch: store uses {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no corpus store at {0}")]
    StoreMissing(PathBuf),
    #[error("corrupt store file {path} line {line}: {detail}")]
    CorruptStore {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("pixels for {id} unavailable: {detail}")]
    PixelsUnavailable { id: String, detail: String },
    #[error("embedding failed: {0}")]
    Embedding(#[from] RetrievalError),
    #[error("storage failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreMeta {
    dimension: usize,
    #[serde(default)]
    asset_root: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct ManifestLine {
    id: Option<String>,
    uri: Option<String>,
    description: Option<String>,
    #[serde(default)]
    embedding: Option<Vec<f32>>,
    #[serde(default)]
    width: Option<u32>,
    #[serde(default)]
    height: Option<u32>,
}

#[derive(Default)]
struct Records {
    by_id: HashMap<String, ImageRecord>,
    order: Vec<String>,
}

struct Writer {
    file: File,
    meta: StoreMeta,
    next_generated: u64,
}

pub struct CorpusStore {
    root: PathBuf,
    dimension: usize,
    records: RwLock<Records>,
    writer: Mutex<Writer>,
    index: Arc<VectorIndex>,
}

impl std::fmt::Debug for CorpusStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CorpusStore")
            .field("root", &self.root)
            .field("dimension", &self.dimension)
            .field("len", &self.len())
            .finish()
    }
}

impl CorpusStore {
    /// Opens the store at `root`, creating it with `dimension` if absent.
    pub fn open_or_create(root: impl AsRef<Path>, dimension: usize) -> Result<Self, CorpusError> {
        let root = root.as_ref();
        fs::create_dir_all(root.join(IMAGES_DIR))?;
        let meta_path = root.join(META_FILE);
        let meta = if meta_path.exists() {
            let meta = read_meta(&meta_path)?;
            if meta.dimension != dimension {
                return Err(CorpusError::DimensionMismatch {
                    expected: meta.dimension,
                    actual: dimension,
                });
            }
            meta
        } else {
            let meta = StoreMeta {
                dimension,
                asset_root: None,
            };
            write_meta(&meta_path, &meta)?;
            meta
        };
        Self::load(root, meta)
    }

    /// Opens an existing store; its dimension comes from `store.json`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let root = root.as_ref();
        let meta_path = root.join(META_FILE);
        if !meta_path.exists() {
            return Err(CorpusError::StoreMissing(root.to_path_buf()));
        }
        let meta = read_meta(&meta_path)?;
        fs::create_dir_all(root.join(IMAGES_DIR))?;
        Self::load(root, meta)
    }

    fn load(root: &Path, meta: StoreMeta) -> Result<Self, CorpusError> {
        let records_path = root.join(RECORDS_FILE);
        let index = Arc::new(VectorIndex::new(meta.dimension));
        let mut records = Records::default();
        let mut generated = 0u64;
        if records_path.exists() {
            let reader = BufReader::new(File::open(&records_path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: ImageRecord = serde_json::from_str(&line)
                    .map_err(|e| CorruptStoreError::at(&records_path, i, e))?;
                if let Some(embedding) = &record.embedding {
                    index
                        .insert(&record.id, embedding.clone())
                        .map_err(|e| CorruptStoreError::at(&records_path, i, e))?;
                }
                if record.source == ImageSource::Generated {
                    generated += 1;
                }
                records.order.push(record.id.clone());
                records.by_id.insert(record.id.clone(), record);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&records_path)?;
        Ok(Self {
            root: root.to_path_buf(),
            dimension: meta.dimension,
            records: RwLock::new(records),
            writer: Mutex::new(Writer {
                file,
                meta,
                next_generated: generated + 1,
            }),
            index,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Retrieval index holding every embedded record.
    pub fn index(&self) -> Arc<VectorIndex> {
        self.index.clone()
    }

    pub fn len(&self) -> usize {
        self.records
            .read()
            .expect("corpus lock poisoned")
            .order
            .len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, id: &str) -> bool {
        self.records
            .read()
            .expect("corpus lock poisoned")
            .by_id
            .contains_key(id)
    }

    pub fn get_image(&self, id: &str) -> Result<ImageRecord, CorpusError> {
        self.records
            .read()
            .expect("corpus lock poisoned")
            .by_id
            .get(id)
            .cloned()
            .ok_or_else(|| CorpusError::NotFound(id.to_owned()))
    }

    /// All records in insertion order.
    pub fn records(&self) -> Vec<ImageRecord> {
        let records = self.records.read().expect("corpus lock poisoned");
        records
            .order
            .iter()
            .map(|id| records.by_id[id].clone())
            .collect()
    }

    /// Filesystem path of a record's pixels.
    pub fn resolve_path(&self, record: &ImageRecord) -> PathBuf {
        let uri = Path::new(&record.uri);
        if uri.is_absolute() {
            return uri.to_path_buf();
        }
        match record.source {
            ImageSource::Generated => self.root.join(uri),
            ImageSource::Corpus => {
                let writer = self.writer.lock().expect("corpus writer poisoned");
                match &writer.meta.asset_root {
                    Some(base) => base.join(uri),
                    None => uri.to_path_buf(),
                }
            }
        }
    }

    pub fn load_pixels(&self, id: &str) -> Result<RgbImage, CorpusError> {
        let record = self.get_image(id)?;
        let path = self.resolve_path(&record);
        image::open(&path)
            .map(|img| img.to_rgb8())
            .map_err(|e| CorpusError::PixelsUnavailable {
                id: id.to_owned(),
                detail: format!("{}: {e}", path.display()),
            })
    }

    /// Reads a JSON-lines manifest. Malformed lines, duplicate ids and
    /// wrong-dimension embeddings are reported in `skipped`; everything else
    /// is persisted and indexed. Records without an embedding are embedded
    /// from their pixels when `embedder` is given.
    pub fn ingest_manifest(
        &self,
        path: impl AsRef<Path>,
        embedder: Option<&Embedder>,
    ) -> Result<CorpusSummary, CorpusError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CorpusError::UnreadableManifest {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest_dir = path
            .parent()
            .map(|p| {
                if p.as_os_str().is_empty() {
                    Path::new(".")
                } else {
                    p
                }
            })
            .unwrap_or(Path::new("."))
            .canonicalize()?;

        let mut writer = self.writer.lock().expect("corpus writer poisoned");
        if writer.meta.asset_root.is_none() {
            writer.meta.asset_root = Some(manifest_dir.clone());
            write_meta(&self.root.join(META_FILE), &writer.meta)?;
        }
        let rewrite_relative = writer.meta.asset_root.as_deref() != Some(manifest_dir.as_path());

        let mut summary = CorpusSummary {
            count: 0,
            dimension: self.dimension,
            skipped: Vec::new(),
        };
        let mut seen: HashSet<String> = HashSet::new();

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let mut skip = |reason| {
                summary.skipped.push(SkippedLine {
                    line: line_no,
                    reason,
                })
            };
            let entry: ManifestLine = match serde_json::from_str(raw) {
                Ok(entry) => entry,
                Err(e) => {
                    skip(SkipReason::Malformed {
                        detail: e.to_string(),
                    });
                    continue;
                }
            };
            let (id, uri, description) = match (entry.id, entry.uri, entry.description) {
                (Some(id), Some(uri), Some(description)) if !id.trim().is_empty() => {
                    (id, uri, description)
                }
                (id, uri, description) => {
                    let missing = [
                        ("id", id.is_none_or(|s| s.trim().is_empty())),
                        ("uri", uri.is_none()),
                        ("description", description.is_none()),
                    ]
                    .iter()
                    .filter(|(_, m)| *m)
                    .map(|(n, _)| *n)
                    .collect::<Vec<_>>()
                    .join(", ");
                    skip(SkipReason::Malformed {
                        detail: format!("missing field(s): {missing}"),
                    });
                    continue;
                }
            };
            if seen.contains(&id) || self.contains(&id) {
                skip(SkipReason::DuplicateId { id });
                continue;
            }

            let uri = if rewrite_relative && Path::new(&uri).is_relative() {
                manifest_dir.join(&uri).to_string_lossy().into_owned()
            } else {
                uri
            };
            let pixel_path = {
                let p = Path::new(&uri);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    writer
                        .meta
                        .asset_root
                        .as_deref()
                        .unwrap_or(Path::new("."))
                        .join(p)
                }
            };

            let (width, height) = match (entry.width, entry.height) {
                (Some(w), Some(h)) => (w, h),
                _ => match image::image_dimensions(&pixel_path) {
                    Ok(dims) => dims,
                    Err(e) => {
                        skip(SkipReason::Malformed {
                            detail: format!("no width/height and image unreadable: {e}"),
                        });
                        continue;
                    }
                },
            };

            let embedding = match entry.embedding {
                Some(values) => {
                    if values.len() != self.dimension {
                        skip(SkipReason::DimensionMismatch {
                            expected: self.dimension,
                            actual: values.len(),
                        });
                        continue;
                    }
                    match EmbeddingVector::normalized(values) {
                        Some(v) => Some(v),
                        None => {
                            skip(SkipReason::Malformed {
                                detail: "degenerate embedding".into(),
                            });
                            continue;
                        }
                    }
                }
                None => match embedder {
                    Some(embedder) => {
                        let img = match image::open(&pixel_path) {
                            Ok(img) => img.to_rgb8(),
                            Err(e) => {
                                skip(SkipReason::Malformed {
                                    detail: format!("cannot embed, image unreadable: {e}"),
                                });
                                continue;
                            }
                        };
                        let v = embedder.embed_image(&img)?;
                        if v.dimension() != self.dimension {
                            return Err(CorpusError::DimensionMismatch {
                                expected: self.dimension,
                                actual: v.dimension(),
                            });
                        }
                        Some(v)
                    }
                    None => None,
                },
            };

            let record = ImageRecord {
                id: id.clone(),
                uri,
                description,
                embedding,
                source: ImageSource::Corpus,
                provenance: None,
                width,
                height,
            };
            self.persist(&mut writer, record)?;
            seen.insert(id);
            summary.count += 1;
        }
        Ok(summary)
    }

    /// Registers a generated image: writes its pixels to the content-addressed
    /// directory, persists the record and appends it to the index.
    pub fn add_generated(
        &self,
        pixels: &RgbImage,
        provenance: GenerationProvenance,
        description: String,
        embedding: EmbeddingVector,
    ) -> Result<ImageRecord, CorpusError> {
        provenance
            .validate()
            .map_err(CorpusError::InvalidProvenance)?;
        if embedding.dimension() != self.dimension {
            return Err(CorpusError::DimensionMismatch {
                expected: self.dimension,
                actual: embedding.dimension(),
            });
        }
        let mut writer = self.writer.lock().expect("corpus writer poisoned");
        if !self.contains(&provenance.parent_image_id) {
            return Err(CorpusError::UnknownParent(
                provenance.parent_image_id.clone(),
            ));
        }
        if let Some(reference) = &provenance.reference_image_id {
            if !self.contains(reference) {
                return Err(CorpusError::UnknownReference(reference.clone()));
            }
        }

        let hash = pixels::content_hash(pixels);
        let relative = format!("{IMAGES_DIR}/{hash}.png");
        let target = self.root.join(&relative);
        if !target.exists() {
            let png =
                pixels::encode_png(pixels).map_err(|e| std::io::Error::other(e.to_string()))?;
            let tmp = self.root.join(format!("{IMAGES_DIR}/.{hash}.tmp"));
            fs::write(&tmp, png)?;
            fs::rename(&tmp, &target)?;
        }

        let id = loop {
            let candidate = format!("gen-{:06}", writer.next_generated);
            writer.next_generated += 1;
            if !self.contains(&candidate) {
                break candidate;
            }
        };
        let record = ImageRecord {
            id,
            uri: relative,
            description,
            embedding: Some(embedding),
            source: ImageSource::Generated,
            provenance: Some(provenance),
            width: pixels.width(),
            height: pixels.height(),
        };
        self.persist(&mut writer, record.clone())?;
        Ok(record)
    }

    fn persist(&self, writer: &mut Writer, record: ImageRecord) -> Result<(), CorpusError> {
        let mut line = serde_json::to_string(&record).map_err(std::io::Error::other)?;
        line.push('\n');
        writer.file.write_all(line.as_bytes())?;
        writer.file.sync_data()?;
        if let Some(embedding) = &record.embedding {
            self.index.insert(&record.id, embedding.clone())?;
        }
        let mut records = self.records.write().expect("corpus lock poisoned");
        records.order.push(record.id.clone());
        records.by_id.insert(record.id.clone(), record);
        Ok(())
    }
}

struct CorruptStoreError;

impl CorruptStoreError {
    fn at(path: &Path, index: usize, detail: impl std::fmt::Display) -> CorpusError {
        CorpusError::CorruptStore {
            path: path.to_path_buf(),
            line: index + 1,
            detail: detail.to_string(),
        }
    }
}

fn read_meta(path: &Path) -> Result<StoreMeta, CorpusError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CorpusError::CorruptStore {
        path: path.to_path_buf(),
        line: 1,
        detail: e.to_string(),
    })
}

fn write_meta(path: &Path, meta: &StoreMeta) -> Result<(), CorpusError> {
    let text = serde_json::to_string_pretty(meta).map_err(std::io::Error::other)?;
    fs::write(path, text)?;
    Ok(())
}
