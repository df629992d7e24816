//! Dense row-major containers for 2-D maps and per-pixel plane stacks.

/// A dense `height x width` scalar map (depth, confidence, intensity).
#[derive(Debug, Clone, PartialEq)]
pub struct Map2 {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Map2 {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
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
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Bilinear sample at continuous pixel coordinates. `None` outside
    /// `[0, width-1] x [0, height-1]`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64)
        {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let v00 = self.get(x0, y0);
        let v10 = self.get(x1, y0);
        let v01 = self.get(x0, y1);
        let v11 = self.get(x1, y1);
        Some(v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy)
    }

    /// Half-resolution box downsample (2x2 average), flooring odd dimensions.
    pub fn downsample_half(&self) -> Map2 {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        Map2::from_fn(w, h, |x, y| {
            let x0 = (2 * x).min(self.width - 1);
            let x1 = (2 * x + 1).min(self.width - 1);
            let y0 = (2 * y).min(self.height - 1);
            let y1 = (2 * y + 1).min(self.height - 1);
            0.25 * (self.get(x0, y0) + self.get(x1, y0) + self.get(x0, y1) + self.get(x1, y1))
        })
    }

    /// `factor x factor` box downsample, flooring the output dimensions.
    pub fn downsample_box(&self, factor: usize) -> Map2 {
        assert!(factor >= 1);
        let w = (self.width / factor).max(1);
        let h = (self.height / factor).max(1);
        Map2::from_fn(w, h, |x, y| {
            let mut sum = 0.0;
            let mut count = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    let sx = x * factor + dx;
                    let sy = y * factor + dy;
                    if sx < self.width && sy < self.height {
                        sum += self.get(sx, sy);
                        count += 1.0;
                    }
                }
            }
            sum / count
        })
    }
}

/// A dense `height x width x planes` stack, plane index fastest-varying.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    width: usize,
    height: usize,
    planes: usize,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(width: usize, height: usize, planes: usize, fill: f64) -> Self {
        Self {
            width,
            height,
            planes,
            data: vec![fill; width * height * planes],
        }
    }

    pub fn from_vec(width: usize, height: usize, planes: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * planes);
        Self {
            width,
            height,
            planes,
            data,
        }
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
    pub fn planes(&self) -> usize {
        self.planes
    }

    #[inline]
    pub fn same_shape(&self, other: &Volume) -> bool {
        self.width == other.width && self.height == other.height && self.planes == other.planes
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, k: usize) -> f64 {
        self.data[(y * self.width + x) * self.planes + k]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, k: usize, v: f64) {
        self.data[(y * self.width + x) * self.planes + k] = v;
    }

    /// Borrow the plane stack of one pixel.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let base = (y * self.width + x) * self.planes;
        &self.data[base..base + self.planes]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let base = (y * self.width + x) * self.planes;
        &mut self.data[base..base + self.planes]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_at_integer_coords_is_exact() {
        let m = Map2::from_fn(4, 3, |x, y| (x * 10 + y) as f64);
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(m.sample_bilinear(x as f64, y as f64), Some(m.get(x, y)));
            }
        }
        assert_eq!(m.sample_bilinear(-0.1, 0.0), None);
        assert_eq!(m.sample_bilinear(3.1, 0.0), None);
    }

    #[test]
    fn bilinear_midpoint() {
        let m = Map2::from_vec(2, 1, vec![1.0, 3.0]);
        assert_eq!(m.sample_bilinear(0.5, 0.0), Some(2.0));
    }

    #[test]
    fn volume_indexing_roundtrip() {
        let mut v = Volume::new(3, 2, 4, 0.0);
        v.set(2, 1, 3, 7.5);
        assert_eq!(v.get(2, 1, 3), 7.5);
        assert_eq!(v.pixel(2, 1)[3], 7.5);
    }
}
