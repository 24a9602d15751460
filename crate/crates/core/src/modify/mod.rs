//! Image modification: segment an image, build a mask from chosen segments,
//! regenerate the masked region from a reference image or keywords, and
//! register the result as a searchable generated image.

mod backend;
mod mask;
mod segment;

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use chrono::Utc;
use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use backend::{
    GenerationBackend, GenerationRequest, Guidance, HttpBackend, StubBackend,
    DEFAULT_GENERATION_DEADLINE,
};
pub use mask::{BinaryMask, RleMask};
pub use segment::{GridSegmenter, HttpSegmenter, Segment, SegmentMap, SegmentationProvider};

use crate::corpus::{
    compose_generated_description, CorpusError, CorpusStore, GenerationMode, GenerationProvenance,
    ImageRecord,
};
use crate::limiter::Limiter;
use crate::retrieval::{Embedder, RetrievalError};

pub const DEFAULT_GENERATION_CONCURRENCY: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum ModifyError {
    #[error("unknown image: {0}")]
    UnknownImage(String),
    #[error("unknown mask: {0}")]
    UnknownMask(String),
    #[error("unknown segment: {0}")]
    UnknownSegment(String),
    #[error("no segments selected")]
    EmptySelection,
    #[error("keyword list is empty")]
    EmptyKeywords,
    #[error("mask {mask_id} does not belong to image {image_id}")]
    MaskMismatch { mask_id: String, image_id: String },
    #[error("segmentation provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("generation backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error(transparent)]
    Corpus(CorpusError),
    #[error(transparent)]
    Embedding(#[from] RetrievalError),
}

impl From<CorpusError> for ModifyError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::NotFound(id) => ModifyError::UnknownImage(id),
            other => ModifyError::Corpus(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub mask_id: String,
    pub image_id: String,
    pub selected_segment_ids: BTreeSet<String>,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub image: ImageRecord,
    pub pixels: RgbImage,
    pub provenance: GenerationProvenance,
    pub elapsed: Duration,
}

/// Pixelwise OR of the selected segments. Repeated ids count once.
pub fn union_segments(map: &SegmentMap, selected: &[String]) -> Result<BinaryMask, ModifyError> {
    if selected.is_empty() {
        return Err(ModifyError::EmptySelection);
    }
    let mut mask = BinaryMask::empty(map.width, map.height);
    for id in selected {
        let segment = map
            .get(id)
            .ok_or_else(|| ModifyError::UnknownSegment(id.clone()))?;
        mask.union_with(&segment.mask);
    }
    Ok(mask)
}

/// Pluggable providers behind the modifier.
#[derive(Clone)]
pub struct Backends {
    pub segmenter: Arc<dyn SegmentationProvider>,
    pub reference: Arc<dyn GenerationBackend>,
    pub keywords: Arc<dyn GenerationBackend>,
}

impl Default for Backends {
    fn default() -> Self {
        Self {
            segmenter: Arc::new(GridSegmenter::default()),
            reference: Arc::new(StubBackend::default()),
            keywords: Arc::new(StubBackend::default()),
        }
    }
}

/// Segment maps and masks live in memory for the life of the process; masks
/// are referenced from provenance by id only.
pub struct ImageModifier {
    corpus: Arc<CorpusStore>,
    embedder: Embedder,
    backends: Backends,
    limiter: Limiter,
    segment_maps: RwLock<HashMap<String, Arc<SegmentMap>>>,
    masks: RwLock<HashMap<String, Arc<MaskSpec>>>,
    next_mask: AtomicU64,
}

impl std::fmt::Debug for ImageModifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageModifier")
            .field("reference_backend", &self.backends.reference.id())
            .field("keyword_backend", &self.backends.keywords.id())
            .field("concurrency", &self.limiter.capacity())
            .finish()
    }
}

impl ImageModifier {
    pub fn new(corpus: Arc<CorpusStore>, embedder: Embedder, backends: Backends) -> Self {
        Self::with_concurrency(corpus, embedder, backends, DEFAULT_GENERATION_CONCURRENCY)
    }

    pub fn with_concurrency(
        corpus: Arc<CorpusStore>,
        embedder: Embedder,
        backends: Backends,
        limit: usize,
    ) -> Self {
        Self {
            corpus,
            embedder,
            backends,
            limiter: Limiter::new(limit),
            segment_maps: RwLock::new(HashMap::new()),
            masks: RwLock::new(HashMap::new()),
            next_mask: AtomicU64::new(1),
        }
    }

    pub fn corpus(&self) -> &Arc<CorpusStore> {
        &self.corpus
    }

    /// Segments `image_id`, reusing an earlier result for the same image.
    pub fn segment(&self, image_id: &str) -> Result<Arc<SegmentMap>, ModifyError> {
        if let Some(map) = self
            .segment_maps
            .read()
            .expect("segment cache poisoned")
            .get(image_id)
        {
            return Ok(map.clone());
        }
        let pixels = self.corpus.load_pixels(image_id)?;
        let (width, height) = pixels.dimensions();
        let mut segments = Vec::new();
        for (segment_id, mask) in self.backends.segmenter.segment(&pixels)? {
            if mask.dimensions() != (width, height) {
                return Err(ModifyError::ProviderUnavailable(format!(
                    "segment {segment_id} is {:?}, image is {width}x{height}",
                    mask.dimensions()
                )));
            }
            let area = mask.area();
            if area == 0 {
                tracing::debug!(%segment_id, "dropping empty segment");
                continue;
            }
            segments.push(Segment {
                segment_id,
                mask,
                area,
            });
        }
        let map = Arc::new(SegmentMap {
            image_id: image_id.to_owned(),
            width,
            height,
            segments,
        });
        self.segment_maps
            .write()
            .expect("segment cache poisoned")
            .insert(image_id.to_owned(), map.clone());
        Ok(map)
    }

    /// Builds and registers the union mask of `selected` segments of
    /// `image_id`.
    pub fn assemble_mask(
        &self,
        image_id: &str,
        selected: &[String],
    ) -> Result<Arc<MaskSpec>, ModifyError> {
        if selected.is_empty() {
            return Err(ModifyError::EmptySelection);
        }
        let map = self.segment(image_id)?;
        let mask = union_segments(&map, selected)?;
        let spec = Arc::new(MaskSpec {
            mask_id: format!("mask-{}", self.next_mask.fetch_add(1, Ordering::SeqCst)),
            image_id: image_id.to_owned(),
            selected_segment_ids: selected.iter().cloned().collect(),
            mask,
        });
        self.masks
            .write()
            .expect("mask registry poisoned")
            .insert(spec.mask_id.clone(), spec.clone());
        Ok(spec)
    }

    pub fn mask(&self, mask_id: &str) -> Option<Arc<MaskSpec>> {
        self.masks
            .read()
            .expect("mask registry poisoned")
            .get(mask_id)
            .cloned()
    }

    fn mask_for(&self, image_id: &str, mask_id: &str) -> Result<Arc<MaskSpec>, ModifyError> {
        let spec = self
            .mask(mask_id)
            .ok_or_else(|| ModifyError::UnknownMask(mask_id.to_owned()))?;
        if spec.image_id != image_id {
            return Err(ModifyError::MaskMismatch {
                mask_id: mask_id.to_owned(),
                image_id: image_id.to_owned(),
            });
        }
        Ok(spec)
    }

    pub fn generate_by_reference(
        &self,
        image_id: &str,
        mask_id: &str,
        reference_image_id: &str,
    ) -> Result<GenerationResult, ModifyError> {
        let parent = self.corpus.get_image(image_id)?;
        let reference = self.corpus.get_image(reference_image_id)?;
        let spec = self.mask_for(image_id, mask_id)?;
        let reference_pixels = self.corpus.load_pixels(reference_image_id)?;
        let provenance = |backend_id: &str| GenerationProvenance {
            parent_image_id: image_id.to_owned(),
            mask_id: mask_id.to_owned(),
            mode: GenerationMode::Reference,
            reference_image_id: Some(reference_image_id.to_owned()),
            keywords: None,
            backend_id: backend_id.to_owned(),
            created_at: Utc::now(),
        };
        self.run(
            &parent,
            &spec,
            self.backends.reference.as_ref(),
            Guidance::Reference(&reference_pixels),
            provenance,
            &reference.description,
        )
    }

    /// Keywords are trimmed and blanks dropped; they are otherwise passed
    /// through as given.
    pub fn generate_by_keywords(
        &self,
        image_id: &str,
        mask_id: &str,
        keywords: &[String],
    ) -> Result<GenerationResult, ModifyError> {
        let keywords: Vec<String> = keywords
            .iter()
            .map(|k| k.trim().to_owned())
            .filter(|k| !k.is_empty())
            .collect();
        if keywords.is_empty() {
            return Err(ModifyError::EmptyKeywords);
        }
        let parent = self.corpus.get_image(image_id)?;
        let spec = self.mask_for(image_id, mask_id)?;
        let provenance = |backend_id: &str| GenerationProvenance {
            parent_image_id: image_id.to_owned(),
            mask_id: mask_id.to_owned(),
            mode: GenerationMode::Keywords,
            reference_image_id: None,
            keywords: Some(keywords.clone()),
            backend_id: backend_id.to_owned(),
            created_at: Utc::now(),
        };
        self.run(
            &parent,
            &spec,
            self.backends.keywords.as_ref(),
            Guidance::Keywords(&keywords),
            provenance,
            &keywords.join(", "),
        )
    }

    fn run(
        &self,
        parent: &ImageRecord,
        spec: &MaskSpec,
        backend: &dyn GenerationBackend,
        guidance: Guidance<'_>,
        provenance: impl FnOnce(&str) -> GenerationProvenance,
        guidance_text: &str,
    ) -> Result<GenerationResult, ModifyError> {
        let original = self.corpus.load_pixels(&parent.id)?;
        if spec.mask.dimensions() != original.dimensions() {
            return Err(ModifyError::MaskMismatch {
                mask_id: spec.mask_id.clone(),
                image_id: parent.id.clone(),
            });
        }
        let started = Instant::now();
        let output = {
            let _permit = self.limiter.acquire();
            backend.generate(GenerationRequest {
                original: &original,
                mask: &spec.mask,
                guidance,
            })?
        };
        if output.dimensions() != original.dimensions() {
            return Err(ModifyError::BackendUnavailable(format!(
                "backend returned {:?}, expected {:?}",
                output.dimensions(),
                original.dimensions()
            )));
        }
        let elapsed = started.elapsed();
        let embedding = self.embedder.embed_image(&output)?;
        let provenance = provenance(backend.id());
        let description = compose_generated_description(&parent.description, guidance_text);
        let image =
            self.corpus
                .add_generated(&output, provenance.clone(), description, embedding)?;
        Ok(GenerationResult {
            image,
            pixels: output,
            provenance,
            elapsed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ImageSource;
    use crate::pixels;
    use crate::retrieval::StubEmbedder;
    use image::Rgb;

    struct Fixture {
        _dir: tempfile::TempDir,
        modifier: ImageModifier,
    }

    fn fixture() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let assets = dir.path().join("assets");
        std::fs::create_dir(&assets).unwrap();
        let a = RgbImage::from_fn(16, 16, |x, y| Rgb([x as u8 * 16, y as u8 * 16, 128]));
        let b = RgbImage::from_fn(8, 8, |x, y| Rgb([255 - x as u8, 40, y as u8 * 30]));
        let c = RgbImage::from_pixel(12, 12, Rgb([9, 9, 9]));
        a.save(assets.join("a.png")).unwrap();
        b.save(assets.join("b.png")).unwrap();
        c.save(assets.join("c.png")).unwrap();
        std::fs::write(
            assets.join("manifest.jsonl"),
            concat!(
                "{\"id\":\"a\",\"uri\":\"a.png\",\"description\":\"green forest illustration\"}\n",
                "{\"id\":\"b\",\"uri\":\"b.png\",\"description\":\"sunset over dunes\"}\n",
                "{\"id\":\"c\",\"uri\":\"c.png\",\"description\":\"grey square\"}\n",
            ),
        )
        .unwrap();
        let embedder = Embedder::new(StubEmbedder::new(7, 16));
        let corpus = Arc::new(CorpusStore::open_or_create(dir.path().join("store"), 16).unwrap());
        corpus
            .ingest_manifest(assets.join("manifest.jsonl"), Some(&embedder))
            .unwrap();
        Fixture {
            modifier: ImageModifier::new(corpus, embedder, Backends::default()),
            _dir: dir,
        }
    }

    fn ids(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn segments_are_cached_per_image() {
        let f = fixture();
        let first = f.modifier.segment("a").unwrap();
        assert_eq!(first.segments.len(), 16);
        assert!(first.segments.iter().all(|s| s.area == 16));
        assert!(Arc::ptr_eq(&first, &f.modifier.segment("a").unwrap()));
        assert!(matches!(
            f.modifier.segment("zzz"),
            Err(ModifyError::UnknownImage(_))
        ));
    }

    #[test]
    fn mask_union_and_errors() {
        let f = fixture();
        let m = f
            .modifier
            .assemble_mask("a", &ids(&["r0c0", "r0c1", "r0c0"]))
            .unwrap();
        assert_eq!(m.mask.area(), 32);
        assert_eq!(m.selected_segment_ids.len(), 2);
        let again = f
            .modifier
            .assemble_mask("a", &ids(&["r0c1", "r0c0"]))
            .unwrap();
        assert_eq!(again.mask, m.mask);
        assert_ne!(again.mask_id, m.mask_id);
        assert!(matches!(
            f.modifier.assemble_mask("a", &[]),
            Err(ModifyError::EmptySelection)
        ));
        assert!(matches!(
            f.modifier.assemble_mask("a", &ids(&["r9c9"])),
            Err(ModifyError::UnknownSegment(id)) if id == "r9c9"
        ));
    }

    #[test]
    fn union_of_small_segments() {
        let map = SegmentMap {
            image_id: "x".into(),
            width: 4,
            height: 4,
            segments: vec![
                Segment {
                    segment_id: "A".into(),
                    mask: BinaryMask::from_fn(4, 4, |x, y| y == 0 && x <= 1),
                    area: 2,
                },
                Segment {
                    segment_id: "B".into(),
                    mask: BinaryMask::from_fn(4, 4, |x, y| x == 0 && y == 1),
                    area: 1,
                },
            ],
        };
        assert_eq!(union_segments(&map, &ids(&["A", "B"])).unwrap().area(), 3);
        assert_eq!(
            union_segments(&map, &ids(&["A", "A"])).unwrap(),
            union_segments(&map, &ids(&["A"])).unwrap()
        );
    }

    #[test]
    fn reference_generation_registers_searchable_image() {
        let f = fixture();
        let m = f
            .modifier
            .assemble_mask("a", &ids(&["r1c1", "r1c2"]))
            .unwrap();
        let result = f
            .modifier
            .generate_by_reference("a", &m.mask_id, "b")
            .unwrap();
        let original = f.modifier.corpus().load_pixels("a").unwrap();
        assert_eq!(result.pixels.dimensions(), original.dimensions());
        for (x, y, p) in original.enumerate_pixels() {
            if !m.mask.get(x, y) {
                assert_eq!(result.pixels.get_pixel(x, y), p);
            }
        }
        let record = &result.image;
        assert_eq!(record.source, ImageSource::Generated);
        assert_eq!(
            record.description,
            "green forest illustration modified with sunset over dunes"
        );
        let prov = record.provenance.as_ref().unwrap();
        assert_eq!(prov.mode, GenerationMode::Reference);
        assert_eq!(prov.reference_image_id.as_deref(), Some("b"));
        assert_eq!(prov.backend_id, "stub");
        assert_eq!(
            f.modifier.corpus().load_pixels(&record.id).unwrap(),
            result.pixels
        );
        assert!(f.modifier.corpus().index().contains(&record.id));
    }

    #[test]
    fn stub_outputs_are_hash_stable() {
        let f = fixture();
        let m = f
            .modifier
            .assemble_mask("a", &ids(&["r0c0", "r2c3"]))
            .unwrap();
        let r1 = f
            .modifier
            .generate_by_reference("a", &m.mask_id, "b")
            .unwrap();
        let r2 = f
            .modifier
            .generate_by_reference("a", &m.mask_id, "b")
            .unwrap();
        assert_eq!(
            pixels::content_hash(&r1.pixels),
            pixels::content_hash(&r2.pixels)
        );
        let k1 = f
            .modifier
            .generate_by_keywords("a", &m.mask_id, &ids(&["minimalist"]))
            .unwrap();
        let k2 = f
            .modifier
            .generate_by_keywords("a", &m.mask_id, &ids(&["vintage"]))
            .unwrap();
        assert_ne!(k1.pixels, k2.pixels);
        assert_eq!(
            k1.image.description,
            "green forest illustration modified with minimalist"
        );
    }

    #[test]
    fn mask_and_keyword_errors() {
        let f = fixture();
        let m = f.modifier.assemble_mask("a", &ids(&["r0c0"])).unwrap();
        assert!(matches!(
            f.modifier.generate_by_reference("c", &m.mask_id, "b"),
            Err(ModifyError::MaskMismatch { .. })
        ));
        assert!(matches!(
            f.modifier
                .generate_by_keywords("a", &m.mask_id, &ids(&["", "  "])),
            Err(ModifyError::EmptyKeywords)
        ));
        assert!(matches!(
            f.modifier
                .generate_by_keywords("a", "mask-999", &ids(&["x"])),
            Err(ModifyError::UnknownMask(_))
        ));
        assert!(matches!(
            f.modifier.generate_by_reference("a", &m.mask_id, "nope"),
            Err(ModifyError::UnknownImage(_))
        ));
    }

    #[test]
    fn generated_images_can_be_modified_again() {
        let f = fixture();
        let m = f.modifier.assemble_mask("a", &ids(&["r0c0"])).unwrap();
        let first = f
            .modifier
            .generate_by_keywords("a", &m.mask_id, &ids(&["neon"]))
            .unwrap();
        let m2 = f
            .modifier
            .assemble_mask(&first.image.id, &ids(&["r3c3"]))
            .unwrap();
        let second = f
            .modifier
            .generate_by_reference(&first.image.id, &m2.mask_id, "c")
            .unwrap();
        assert_eq!(
            second.image.provenance.unwrap().parent_image_id,
            first.image.id
        );
    }
}
