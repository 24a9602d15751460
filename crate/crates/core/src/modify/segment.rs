use std::time::Duration;

use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::mask::{BinaryMask, RleMask};
use super::ModifyError;
use crate::{pixels, remote};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: String,
    pub mask: BinaryMask,
    pub area: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMap {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub segments: Vec<Segment>,
}

impl SegmentMap {
    pub fn get(&self, segment_id: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.segment_id == segment_id)
    }
}

/// Splits an image into candidate regions for mask selection.
pub trait SegmentationProvider: Send + Sync {
    fn segment(&self, image: &RgbImage) -> Result<Vec<(String, BinaryMask)>, ModifyError>;
}

/// Deterministic rectangular tiling. Tile edges are `floor(i * size / n)`,
/// so tiles partition the image; tiles that come out empty on images smaller
/// than the grid are omitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSegmenter {
    pub rows: u32,
    pub cols: u32,
}

impl Default for GridSegmenter {
    fn default() -> Self {
        Self { rows: 4, cols: 4 }
    }
}

impl SegmentationProvider for GridSegmenter {
    fn segment(&self, image: &RgbImage) -> Result<Vec<(String, BinaryMask)>, ModifyError> {
        let (w, h) = image.dimensions();
        let edge = |i: u32, n: u32, size: u32| (i as u64 * size as u64 / n as u64) as u32;
        let mut out = Vec::new();
        for r in 0..self.rows {
            let (y0, y1) = (edge(r, self.rows, h), edge(r + 1, self.rows, h));
            for c in 0..self.cols {
                let (x0, x1) = (edge(c, self.cols, w), edge(c + 1, self.cols, w));
                if x0 == x1 || y0 == y1 {
                    continue;
                }
                let mask = BinaryMask::from_fn(w, h, |x, y| {
                    (x0..x1).contains(&x) && (y0..y1).contains(&y)
                });
                out.push((format!("r{r}c{c}"), mask));
            }
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct SegmentRequestBody {
    image_png: String,
}

#[derive(Deserialize)]
struct SegmentResponseBody {
    segments: Vec<RemoteSegment>,
}

#[derive(Deserialize)]
struct RemoteSegment {
    id: String,
    rle: RleMask,
}

/// Remote segmentation service: `{image_png}` in, `{segments: [{id, rle}]}`
/// out.
#[derive(Debug, Clone)]
pub struct HttpSegmenter {
    endpoint: String,
    timeout: Duration,
}

impl HttpSegmenter {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout,
        }
    }
}

impl SegmentationProvider for HttpSegmenter {
    fn segment(&self, image: &RgbImage) -> Result<Vec<(String, BinaryMask)>, ModifyError> {
        let png = pixels::encode_png(image)
            .map_err(|e| ModifyError::ProviderUnavailable(e.to_string()))?;
        let body = SegmentRequestBody {
            image_png: base64::engine::general_purpose::STANDARD.encode(png),
        };
        let response: SegmentResponseBody = remote::post_json(&self.endpoint, &body, self.timeout)
            .map_err(|e| ModifyError::ProviderUnavailable(e.to_string()))?;
        response
            .segments
            .into_iter()
            .map(|s| {
                BinaryMask::from_rle(&s.rle)
                    .map(|m| (s.id, m))
                    .map_err(ModifyError::ProviderUnavailable)
            })
            .collect()
    }
}
