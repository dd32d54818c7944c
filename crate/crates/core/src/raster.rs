//! Minimal raster types shared by the stereo, keypoint and evaluation code.

use std::cmp::Ordering;

/// Integer pixel coordinate. Ordering is row-major (`y`, then `x`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pixel {
    pub x: i32,
    pub y: i32,
}

impl Pixel {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Pixel) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    pub fn chebyshev(self, other: Pixel) -> i32 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }

    pub fn euclidean(self, other: Pixel) -> f64 {
        let dx = (self.x - other.x) as f64;
        let dy = (self.y - other.y) as f64;
        dx.hypot(dy)
    }
}

impl Ord for Pixel {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Pixel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The 8 canonical neighbor offsets.
pub const NEIGHBORS_8: [(i32, i32); 8] =
    [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// 8-bit grayscale image stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Gray8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height, "pixel buffer does not match dimensions");
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn in_bounds(&self, p: Pixel) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height
    }

    pub fn get(&self, p: Pixel) -> u8 {
        self.data[p.y as usize * self.width + p.x as usize]
    }

    pub fn set(&mut self, p: Pixel, v: u8) {
        self.data[p.y as usize * self.width + p.x as usize] = v;
    }
}

/// Binary segmentation mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask buffer does not match dimensions");
        Self { width, height, bits }
    }

    /// Mask from a grayscale image: nonzero pixels are segmented.
    pub fn from_gray(img: &Gray8) -> Self {
        Self::from_bits(img.width(), img.height(), img.data().iter().map(|&v| v != 0).collect())
    }

    pub fn from_pixels(width: usize, height: usize, pixels: impl IntoIterator<Item = Pixel>) -> Self {
        let mut m = Self::empty(width, height);
        for p in pixels {
            m.insert(p);
        }
        m
    }

    pub fn to_gray(&self) -> Gray8 {
        Gray8::new(self.width, self.height, self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn in_bounds(&self, p: Pixel) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height
    }

    pub fn index(&self, p: Pixel) -> usize {
        p.y as usize * self.width + p.x as usize
    }

    /// Membership test; out-of-bounds pixels are never segmented.
    pub fn contains(&self, p: Pixel) -> bool {
        self.in_bounds(p) && self.bits[self.index(p)]
    }

    pub fn insert(&mut self, p: Pixel) {
        assert!(self.in_bounds(p), "pixel {p:?} outside {}x{} mask", self.width, self.height);
        let i = self.index(p);
        self.bits[i] = true;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Segmented pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| Pixel::new((i % w) as i32, (i / w) as i32))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_order_is_row_major() {
        let mut v = vec![Pixel::new(3, 1), Pixel::new(0, 2), Pixel::new(5, 0), Pixel::new(1, 1)];
        v.sort();
        assert_eq!(v, vec![Pixel::new(5, 0), Pixel::new(1, 1), Pixel::new(3, 1), Pixel::new(0, 2)]);
    }

    #[test]
    fn mask_iterates_row_major_and_ignores_out_of_bounds() {
        let m = PixelMask::from_pixels(4, 3, [Pixel::new(2, 2), Pixel::new(1, 0)]);
        assert_eq!(m.pixels().collect::<Vec<_>>(), vec![Pixel::new(1, 0), Pixel::new(2, 2)]);
        assert!(!m.contains(Pixel::new(-1, 0)));
        assert!(!m.contains(Pixel::new(4, 0)));
        assert_eq!(m.count(), 2);
    }
}
