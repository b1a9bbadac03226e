//! Binary masks stored as row-major run lengths.
//!
//! Runs alternate background/foreground and always start with a background
//! run, which may be zero-length. Interior zero-length runs are accepted on
//! decode but never produced by [`rle_encode`].

use serde::{Deserialize, Serialize};

use super::bbox::BoundingBox;
use crate::error::{Error, Result};

/// Dense row-major bitmap; pixel (row, col) lives at `row * width + col`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    width: u32,
    height: u32,
    pixels: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<bool>) -> Result<Self> {
        let expected = width as u64 * height as u64;
        if pixels.len() as u64 != expected {
            return Err(Error::MalformedRle {
                width,
                height,
                expected,
                actual: pixels.len() as u64,
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn get(&self, row: u32, col: u32) -> bool {
        self.pixels[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, row: u32, col: u32, value: bool) {
        self.pixels[row as usize * self.width as usize + col as usize] = value;
    }

    /// Sets every pixel of `bbox` to foreground. The box must fit in the bitmap.
    pub fn fill_box(&mut self, bbox: &BoundingBox) {
        for row in bbox.y..bbox.y + bbox.h {
            for col in bbox.x..bbox.x + bbox.w {
                self.set(row, col, true);
            }
        }
    }

    pub fn count_foreground(&self) -> u64 {
        self.pixels.iter().filter(|&&p| p).count() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl BinaryMask {
    /// Wraps raw runs after checking that they cover the image exactly.
    pub fn from_runs(width: u32, height: u32, runs: Vec<u32>) -> Result<Self> {
        let expected = width as u64 * height as u64;
        let actual: u64 = runs.iter().map(|&r| r as u64).sum();
        if actual != expected || width == 0 || height == 0 {
            return Err(Error::MalformedRle {
                width,
                height,
                expected,
                actual,
            });
        }
        Ok(Self {
            width,
            height,
            runs,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn into_runs(self) -> Vec<u32> {
        self.runs
    }

    /// Foreground pixel count.
    pub fn area(&self) -> u64 {
        self.foreground_spans().map(|(_, len)| len).sum()
    }

    /// `(start, len)` of each non-empty foreground run, in flat row-major offsets.
    fn foreground_spans(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut offset = 0u64;
        self.runs.iter().enumerate().filter_map(move |(i, &len)| {
            let start = offset;
            offset += len as u64;
            (i % 2 == 1 && len > 0).then_some((start, len as u64))
        })
    }
}

pub fn rle_encode(bitmap: &Bitmap) -> BinaryMask {
    let mut runs = Vec::new();
    let mut current = false;
    let mut count = 0u32;
    for &p in &bitmap.pixels {
        if p != current {
            runs.push(count);
            count = 0;
            current = p;
        }
        count += 1;
    }
    runs.push(count);
    BinaryMask {
        width: bitmap.width,
        height: bitmap.height,
        runs,
    }
}

pub fn rle_decode(mask: &BinaryMask) -> Bitmap {
    let mut pixels = Vec::with_capacity(mask.width as usize * mask.height as usize);
    for (i, &len) in mask.runs.iter().enumerate() {
        let value = i % 2 == 1;
        pixels.extend(std::iter::repeat_n(value, len as usize));
    }
    Bitmap {
        width: mask.width,
        height: mask.height,
        pixels,
    }
}

/// Tightest axis-aligned box around every foreground pixel, computed on the runs directly.
pub fn mask_to_bbox(mask: &BinaryMask) -> Result<BoundingBox> {
    let width = mask.width as u64;
    let mut min_col = u64::MAX;
    let mut max_col = 0u64;
    let mut min_row = u64::MAX;
    let mut max_row = 0u64;
    for (start, len) in mask.foreground_spans() {
        let end = start + len - 1;
        let (row_start, row_end) = (start / width, end / width);
        min_row = min_row.min(row_start);
        max_row = max_row.max(row_end);
        if row_start == row_end {
            min_col = min_col.min(start % width);
            max_col = max_col.max(end % width);
        } else {
            // a run wrapping a row boundary touches both the last and first column
            min_col = 0;
            max_col = width - 1;
        }
    }
    if min_row == u64::MAX {
        return Err(Error::EmptyMask);
    }
    BoundingBox::new(
        min_col as u32,
        min_row as u32,
        (max_col - min_col + 1) as u32,
        (max_row - min_row + 1) as u32,
    )
}

/// Pixel-level IoU between two masks of identical dimensions.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch {
            expected: a.width as usize * a.height as usize,
            actual: b.width as usize * b.height as usize,
        });
    }
    let mut spans_a = a.foreground_spans().peekable();
    let mut spans_b = b.foreground_spans().peekable();
    let mut inter = 0u64;
    while let (Some(&(sa, la)), Some(&(sb, lb))) = (spans_a.peek(), spans_b.peek()) {
        let (ea, eb) = (sa + la, sb + lb);
        let lo = sa.max(sb);
        let hi = ea.min(eb);
        if hi > lo {
            inter += hi - lo;
        }
        if ea <= eb {
            spans_a.next();
        } else {
            spans_b.next();
        }
    }
    let union = a.area() + b.area() - inter;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// One class-agnostic candidate region with the generator's quality scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskProposal {
    mask: BinaryMask,
    generator_iou: f64,
    stability: f64,
    bbox: BoundingBox,
    area_px: u64,
}

impl MaskProposal {
    pub fn new(mask: BinaryMask, generator_iou: f64, stability: f64) -> Result<Self> {
        let bbox = mask_to_bbox(&mask)?;
        let area_px = mask.area();
        Ok(Self {
            mask,
            generator_iou,
            stability,
            bbox,
            area_px,
        })
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn generator_iou(&self) -> f64 {
        self.generator_iou
    }

    pub fn stability(&self) -> f64 {
        self.stability
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    pub fn area_px(&self) -> u64 {
        self.area_px
    }
}
