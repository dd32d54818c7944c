//! Exact Euclidean distance transform of a binary mask.
//!
//! Separable lower-envelope algorithm of Felzenszwalb and Huttenlocher: a 1D
//! squared-distance transform along every row, then along every column.
//! Distances are between pixel centers and exact (integer squared values
//! held in `f64`).

use crate::raster::{Pixel, PixelMask};

// Large enough to exceed any in-image squared distance, small enough that
// adding squared offsets stays exact.
const FAR: f64 = 1e12;

/// Squared distance from every pixel to the nearest mask pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    squared: Vec<f64>,
    sites: Vec<Pixel>,
}

/// 1D lower envelope of parabolas rooted at `(q, f[q])`.
fn transform_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let meet = |q: usize, p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
    for q in 1..n {
        let mut s = meet(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = meet(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

impl DistanceField {
    pub fn new(mask: &PixelMask) -> Self {
        let (w, h) = (mask.width(), mask.height());
        let mut grid: Vec<f64> =
            (0..w * h).map(|i| if mask.contains(Pixel::new((i % w) as i32, (i / w) as i32)) { 0.0 } else { FAR }).collect();
        let mut out = vec![0.0; w.max(h)];
        for y in 0..h {
            let row = &grid[y * w..(y + 1) * w];
            transform_1d(row, &mut out[..w]);
            grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
        }
        let mut col = vec![0.0; h];
        for x in 0..w {
            for y in 0..h {
                col[y] = grid[y * w + x];
            }
            transform_1d(&col, &mut out[..h]);
            for y in 0..h {
                grid[y * w + x] = out[y];
            }
        }
        Self { width: w, height: h, squared: grid, sites: mask.pixels().collect() }
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Squared distance at an in-image pixel.
    pub fn squared_at(&self, p: Pixel) -> f64 {
        self.squared[p.y as usize * self.width + p.x as usize]
    }

    /// Distance from pixel `p` (possibly outside the image) to the nearest
    /// mask pixel; infinite for an empty mask.
    pub fn distance(&self, p: Pixel) -> f64 {
        if self.sites.is_empty() {
            return f64::INFINITY;
        }
        if p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height {
            self.squared_at(p).sqrt()
        } else {
            self.sites.iter().map(|s| s.euclidean(p)).fold(f64::INFINITY, f64::min)
        }
    }

    /// Distance from a sub-pixel position, measured from its nearest pixel.
    pub fn distance_at(&self, x: f64, y: f64) -> f64 {
        self.distance(Pixel::new(x.round() as i32, y.round() as i32))
    }
}
