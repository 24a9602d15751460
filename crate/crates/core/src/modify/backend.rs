use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mask::BinaryMask;
use super::ModifyError;
use crate::{pixels, remote};

pub const DEFAULT_GENERATION_DEADLINE: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy)]
pub enum Guidance<'a> {
    Reference(&'a RgbImage),
    Keywords(&'a [String]),
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub original: &'a RgbImage,
    pub mask: &'a BinaryMask,
    pub guidance: Guidance<'a>,
}

/// Inpainting model: regenerates the masked region of `original`.
pub trait GenerationBackend: Send + Sync {
    /// Recorded in provenance.
    fn id(&self) -> &str;
    fn generate(&self, request: GenerationRequest<'_>) -> Result<RgbImage, ModifyError>;
}

/// Deterministic stand-in for both inpainting models.
///
/// Reference mode pastes the reference, resampled nearest-neighbour onto the
/// mask's bounding box, into the masked pixels. Keyword mode fills the masked
/// pixels with one colour taken from `SHA-256(seed_le ‖ keywords joined by
/// ", ")`. Unmasked pixels are copied untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubBackend {
    pub seed: u64,
}

impl StubBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn keyword_color(&self, keywords: &[String]) -> Rgb<u8> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(keywords.join(", ").as_bytes());
        let digest = hasher.finalize();
        Rgb([digest[0], digest[1], digest[2]])
    }
}

impl GenerationBackend for StubBackend {
    fn id(&self) -> &str {
        "stub"
    }

    fn generate(&self, request: GenerationRequest<'_>) -> Result<RgbImage, ModifyError> {
        let GenerationRequest {
            original,
            mask,
            guidance,
        } = request;
        let mut out = original.clone();
        let Some((x0, y0, x1, y1)) = mask.bounding_box() else {
            return Ok(out);
        };
        match guidance {
            Guidance::Reference(reference) => {
                let (bw, bh) = ((x1 - x0 + 1) as u64, (y1 - y0 + 1) as u64);
                let (rw, rh) = (reference.width() as u64, reference.height() as u64);
                if rw == 0 || rh == 0 {
                    return Err(ModifyError::BackendUnavailable(
                        "reference image is empty".into(),
                    ));
                }
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        if mask.get(x, y) {
                            let rx = ((x - x0) as u64 * rw / bw) as u32;
                            let ry = ((y - y0) as u64 * rh / bh) as u32;
                            out.put_pixel(x, y, *reference.get_pixel(rx, ry));
                        }
                    }
                }
            }
            Guidance::Keywords(keywords) => {
                let color = self.keyword_color(keywords);
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        if mask.get(x, y) {
                            out.put_pixel(x, y, color);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct GenerateRequestBody {
    original_png: String,
    mask_png: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_png: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    keywords: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct GenerateResponseBody {
    output_png: String,
}

/// Remote inpainting service. Images travel as base64 PNG; the mask is white
/// on black.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    id: String,
    endpoint: String,
    timeout: Duration,
}

impl HttpBackend {
    pub fn new(id: impl Into<String>, endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            id: id.into(),
            endpoint: endpoint.into(),
            timeout,
        }
    }
}

fn png_b64(img: &RgbImage) -> Result<String, ModifyError> {
    let png =
        pixels::encode_png(img).map_err(|e| ModifyError::BackendUnavailable(e.to_string()))?;
    Ok(STANDARD.encode(png))
}

impl GenerationBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: GenerationRequest<'_>) -> Result<RgbImage, ModifyError> {
        let (reference_png, keywords) = match request.guidance {
            Guidance::Reference(img) => (Some(png_b64(img)?), None),
            Guidance::Keywords(k) => (None, Some(k.to_vec())),
        };
        let body = GenerateRequestBody {
            original_png: png_b64(request.original)?,
            mask_png: png_b64(&request.mask.to_image())?,
            reference_png,
            keywords,
        };
        let response: GenerateResponseBody = remote::post_json(&self.endpoint, &body, self.timeout)
            .map_err(|e| ModifyError::BackendUnavailable(e.to_string()))?;
        let bytes = STANDARD
            .decode(response.output_png)
            .map_err(|e| ModifyError::BackendUnavailable(format!("output_png: {e}")))?;
        pixels::decode_png(&bytes)
            .map_err(|e| ModifyError::BackendUnavailable(format!("output_png: {e}")))
    }
}
