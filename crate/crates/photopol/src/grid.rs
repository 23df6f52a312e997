//! Raster containers and the reconstruction domain Ω.

use crate::error::{Error, Result};

/// Rectangular raster of per-pixel values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> PixelGrid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        PixelGrid { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "grid data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(PixelGrid { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        PixelGrid { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = value;
    }

    /// Value at a linear (row-major) pixel id.
    #[inline]
    pub fn at(&self, pixel: usize) -> T {
        self.data[pixel]
    }

    #[inline]
    pub fn set_at(&mut self, pixel: usize, value: T) {
        self.data[pixel] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> PixelGrid<U> {
        PixelGrid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &PixelGrid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// The reconstruction domain: which pixels take part in fits and solves.
///
/// Solvers never read values at masked-out pixels. Masked pixels are kept in
/// a fixed row-major order so that "the k-th masked pixel" is a stable
/// variable index.
#[derive(Debug, Clone)]
pub struct Mask {
    grid: PixelGrid<bool>,
    indices: Vec<u32>,
    ordinal: Vec<i32>,
}

impl Mask {
    pub fn from_grid(grid: PixelGrid<bool>) -> Self {
        let mut indices = Vec::new();
        let mut ordinal = vec![-1i32; grid.len()];
        for (pixel, &inside) in grid.data().iter().enumerate() {
            if inside {
                ordinal[pixel] = indices.len() as i32;
                indices.push(pixel as u32);
            }
        }
        Mask { grid, indices, ordinal }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Mask::from_grid(PixelGrid::filled(width, height, true))
    }

    /// Disc of the given radius centred on the grid centre.
    pub fn disc(width: usize, height: usize, radius: f64) -> Self {
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        Mask::from_grid(PixelGrid::from_fn(width, height, |x, y| {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            dx * dx + dy * dy <= radius * radius
        }))
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.grid.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.grid.height()
    }

    /// Number of pixels inside Ω.
    #[inline]
    pub fn count(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.grid.get(x, y)
    }

    #[inline]
    pub fn contains_pixel(&self, pixel: usize) -> bool {
        self.ordinal[pixel] >= 0
    }

    /// Row-major linear pixel ids of the masked pixels.
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// Masked ordinal of a pixel id, if inside Ω.
    #[inline]
    pub fn ordinal(&self, pixel: usize) -> Option<usize> {
        let o = self.ordinal[pixel];
        (o >= 0).then_some(o as usize)
    }

    pub fn grid(&self) -> &PixelGrid<bool> {
        &self.grid
    }

    pub fn same_shape<U>(&self, other: &PixelGrid<U>) -> bool {
        self.grid.same_shape(other)
    }

    /// Intersection with another mask of the same shape.
    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.width() != other.width() || self.height() != other.height() {
            return Err(Error::MaskMismatch(format!(
                "{}x{} vs {}x{}",
                self.width(),
                self.height(),
                other.width(),
                other.height()
            )));
        }
        let grid = PixelGrid::from_fn(self.width(), self.height(), |x, y| {
            self.contains(x, y) && other.contains(x, y)
        });
        Ok(Mask::from_grid(grid))
    }

    /// 4-connectivity check; a single connected component is required for
    /// the one-pixel gauge fix to pin the whole surface.
    pub fn is_connected(&self) -> bool {
        if self.indices.is_empty() {
            return false;
        }
        let w = self.width();
        let h = self.height();
        let mut seen = vec![false; self.grid.len()];
        let start = self.indices[0] as usize;
        let mut queue = std::collections::VecDeque::new();
        seen[start] = true;
        queue.push_back(start);
        let mut visited = 0usize;
        while let Some(p) = queue.pop_front() {
            visited += 1;
            let (x, y) = (p % w, p / w);
            let mut push = |q: usize| {
                if self.ordinal[q] >= 0 && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x + 1 < w {
                push(p + 1);
            }
            if x > 0 {
                push(p - 1);
            }
            if y + 1 < h {
                push(p + w);
            }
            if y > 0 {
                push(p - w);
            }
        }
        visited == self.indices.len()
    }

    /// Masked pixel closest to the centroid of Ω (lowest pixel id on ties).
    pub fn centroid_pixel(&self) -> Option<usize> {
        if self.indices.is_empty() {
            return None;
        }
        let w = self.width();
        let (mut sx, mut sy) = (0.0f64, 0.0f64);
        for &p in &self.indices {
            sx += (p as usize % w) as f64;
            sy += (p as usize / w) as f64;
        }
        let n = self.indices.len() as f64;
        let (cx, cy) = (sx / n, sy / n);
        let mut best = (f64::INFINITY, usize::MAX);
        for &p in &self.indices {
            let dx = (p as usize % w) as f64 - cx;
            let dy = (p as usize / w) as f64 - cy;
            let d = dx * dx + dy * dy;
            if d < best.0 {
                best = (d, p as usize);
            }
        }
        Some(best.1)
    }

    /// Masked pixels with at least one 4-neighbour outside Ω (or the grid).
    pub fn boundary_pixels(&self) -> Vec<u32> {
        let w = self.width();
        let h = self.height();
        self.indices
            .iter()
            .copied()
            .filter(|&p| {
                let p = p as usize;
                let (x, y) = (p % w, p / w);
                x == 0
                    || y == 0
                    || x + 1 == w
                    || y + 1 == h
                    || !self.contains(x + 1, y)
                    || !self.contains(x - 1, y)
                    || !self.contains(x, y + 1)
                    || !self.contains(x, y - 1)
            })
            .collect()
    }
}
