//! PNG codec and content hashing for RGB pixel buffers.

use std::io::Cursor;

use image::{ImageFormat, RgbImage};
use sha2::{Digest, Sha256};

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, image::ImageError> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, image::ImageError> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8())
}

/// Hex SHA-256 over the dimensions and raw RGB bytes. Independent of the PNG
/// encoder, so it is stable across codec versions.
pub fn content_hash(img: &RgbImage) -> String {
    let mut hasher = Sha256::new();
    hasher.update(img.width().to_le_bytes());
    hasher.update(img.height().to_le_bytes());
    hasher.update(img.as_raw());
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let img = RgbImage::from_fn(5, 3, |x, y| image::Rgb([x as u8, y as u8, 9]));
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn hash_depends_on_shape() {
        let a = RgbImage::new(2, 3);
        let b = RgbImage::new(3, 2);
        assert_ne!(content_hash(&a), content_hash(&b));
    }
}
