use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

/// Row-major run-length encoding of a binary mask. Runs alternate starting
/// with unset pixels, so a mask whose first pixel is set begins with a zero
/// run. Run lengths sum to `width * height`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "RleMask", try_from = "RleMask")]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut mask = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                mask.bits[(y * width + x) as usize] = f(x, y);
            }
        }
        mask
    }

    /// Set where any channel is non-zero.
    pub fn from_image(img: &RgbImage) -> Self {
        Self::from_fn(img.width(), img.height(), |x, y| {
            img.get_pixel(x, y).0.iter().any(|&c| c != 0)
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[(y * self.width + x) as usize] = value;
    }

    pub fn area(&self) -> u32 {
        self.bits.iter().filter(|&&b| b).count() as u32
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Pixelwise OR. Panics on a size mismatch.
    pub fn union_with(&mut self, other: &BinaryMask) {
        assert_eq!(self.dimensions(), other.dimensions(), "mask size mismatch");
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    /// Inclusive `(x0, y0, x1, y1)` of the set pixels.
    pub fn bounding_box(&self) -> Option<(u32, u32, u32, u32)> {
        let mut bbox: Option<(u32, u32, u32, u32)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bbox = Some(match bbox {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bbox
    }

    pub fn to_rle(&self) -> RleMask {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &bit in &self.bits {
            if bit != current {
                counts.push(run);
                current = bit;
                run = 0;
            }
            run += 1;
        }
        counts.push(run);
        RleMask {
            width: self.width,
            height: self.height,
            counts,
        }
    }

    pub fn from_rle(rle: &RleMask) -> Result<Self, String> {
        let total = rle.width as u64 * rle.height as u64;
        let sum: u64 = rle.counts.iter().map(|&c| c as u64).sum();
        if sum != total {
            return Err(format!(
                "run lengths sum to {sum}, expected {}x{} = {total}",
                rle.width, rle.height
            ));
        }
        let mut bits = Vec::with_capacity(total as usize);
        for (i, &count) in rle.counts.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, count as usize));
        }
        Ok(Self {
            width: rle.width,
            height: rle.height,
            bits,
        })
    }

    /// Black/white image, white where set.
    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_fn(self.width, self.height, |x, y| {
            Rgb([if self.get(x, y) { 255 } else { 0 }; 3])
        })
    }
}

impl From<BinaryMask> for RleMask {
    fn from(mask: BinaryMask) -> Self {
        mask.to_rle()
    }
}

impl TryFrom<RleMask> for BinaryMask {
    type Error = String;

    fn try_from(rle: RleMask) -> Result<Self, Self::Error> {
        BinaryMask::from_rle(&rle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rle_starts_with_unset_run() {
        let mask = BinaryMask::from_fn(3, 2, |x, y| x == 0 && y == 0);
        assert_eq!(mask.to_rle().counts, [0, 1, 5]);
        let mask = BinaryMask::from_fn(3, 2, |x, _| x == 2);
        assert_eq!(mask.to_rle().counts, [2, 1, 2, 1]);
        assert_eq!(BinaryMask::empty(2, 2).to_rle().counts, [4]);
    }

    #[test]
    fn rle_rejects_wrong_total() {
        let rle = RleMask {
            width: 2,
            height: 2,
            counts: vec![1, 2],
        };
        assert!(BinaryMask::from_rle(&rle).is_err());
    }

    #[test]
    fn json_is_rle() {
        let mask = BinaryMask::from_fn(2, 2, |x, y| x == y);
        let json = serde_json::to_string(&mask).unwrap();
        assert_eq!(json, r#"{"width":2,"height":2,"counts":[0,1,2,1]}"#);
        assert_eq!(serde_json::from_str::<BinaryMask>(&json).unwrap(), mask);
    }

    #[test]
    fn bounding_box_of_scattered_pixels() {
        let mask = BinaryMask::from_fn(6, 5, |x, y| (x, y) == (1, 3) || (x, y) == (4, 1));
        assert_eq!(mask.bounding_box(), Some((1, 1, 4, 3)));
        assert_eq!(BinaryMask::empty(3, 3).bounding_box(), None);
    }

    proptest! {
        #[test]
        fn rle_round_trips(w in 1u32..12, h in 1u32..12, seed in any::<u64>()) {
            let mask = BinaryMask::from_fn(w, h, |x, y| (seed >> ((x * 7 + y * 3) % 64)) & 1 == 1);
            let rle = mask.to_rle();
            prop_assert_eq!(rle.counts.iter().map(|&c| c as u64).sum::<u64>(), (w * h) as u64);
            prop_assert_eq!(BinaryMask::from_rle(&rle).unwrap(), mask);
        }
    }
}
