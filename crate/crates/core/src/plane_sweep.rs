//! Plane-sweep measurement model: a per-frame DPV from a five-frame window.
//!
//! Each depth hypothesis is scored by warping the neighbors' quarter-resolution
//! descriptors onto the reference view through a fronto-parallel plane at that
//! depth and accumulating the L1 descriptor distance. The softmax of the cost
//! volume is the measurement DPV.

use nalgebra::Vector2;

use crate::dpv::{self, DepthHypotheses, DepthProbabilityVolume};
use crate::error::{Error, Result};
use crate::geometry::{self, CameraIntrinsics, Pose};
use crate::grid::{Map2, Volume};

/// Census neighborhood half-width (5x5 window, 24 neighbors).
const CENSUS_RADIUS: usize = 2;
/// Descriptor channels: box-filtered intensity + 24 census bits.
pub const FEATURE_CHANNELS: usize = 25;
/// L1 cost weights for the census block vs. the intensity channel.
const CENSUS_WEIGHT: f64 = 0.7;
const INTENSITY_WEIGHT: f64 = 0.3;

/// Quarter-resolution descriptor grid, channel index fastest-varying.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
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
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn descriptor(&self, x: usize, y: usize) -> &[f64] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }

    #[inline]
    fn descriptor_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let base = (y * self.width + x) * self.channels;
        &mut self.data[base..base + self.channels]
    }

    /// Bilinear descriptor sample at continuous grid coordinates; `false` if
    /// the location falls outside the grid.
    pub fn sample_into(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64)
        {
            return false;
        }
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let (w00, w10, w01, w11) = (
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        );
        let d00 = self.descriptor(x0, y0);
        let d10 = self.descriptor(x1, y0);
        let d01 = self.descriptor(x0, y1);
        let d11 = self.descriptor(x1, y1);
        for c in 0..self.channels {
            out[c] = w00 * d00[c] + w10 * d10[c] + w01 * d01[c] + w11 * d11[c];
        }
        true
    }
}

/// One neighbor frame of a window with its pose into the reference frame.
#[derive(Debug, Clone)]
pub struct SourceFrame {
    pub image: Map2,
    pub timestamp: f64,
    /// Maps source-frame coordinates into reference-frame coordinates.
    pub pose_src_to_ref: Pose,
}

/// The five-frame local neighborhood around one reference frame.
#[derive(Debug, Clone)]
pub struct FrameWindow {
    pub reference: Map2,
    pub timestamp: f64,
    /// World-from-camera pose of the reference frame; the temporal filter
    /// chains consecutive windows through it.
    pub ref_world_from_cam: Pose,
    pub sources: Vec<SourceFrame>,
    pub intrinsics: CameraIntrinsics,
}

impl FrameWindow {
    pub fn new(
        reference: Map2,
        timestamp: f64,
        ref_world_from_cam: Pose,
        sources: Vec<SourceFrame>,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self> {
        if sources.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "window requires 4 source frames, got {}",
                sources.len()
            )));
        }
        let before = sources.iter().filter(|s| s.timestamp < timestamp).count();
        let after = sources.iter().filter(|s| s.timestamp > timestamp).count();
        if before != 2 || after != 2 {
            return Err(Error::InvalidArgument(format!(
                "source frames must straddle the reference (2 before, 2 after), got {before}/{after}"
            )));
        }
        for s in &sources {
            if s.image.width() != reference.width() || s.image.height() != reference.height() {
                return Err(Error::InvalidArgument("frame sizes differ within window".into()));
            }
        }
        Ok(Self {
            reference,
            timestamp,
            ref_world_from_cam,
            sources,
            intrinsics,
        })
    }
}

/// Quarter-resolution matching cost `L(d)` with per-cell valid-source counts.
#[derive(Debug, Clone)]
pub struct CostVolume {
    pub values: Volume,
    pub valid_counts: Volume,
}

/// Plane-sweep knobs. `temperature: None` picks the mean per-pixel cost
/// spread, making the softmax scale-free across descriptors.
#[derive(Debug, Clone, Copy)]
pub struct SweepConfig {
    pub smooth_cost: bool,
    pub temperature: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            smooth_cost: true,
            temperature: None,
        }
    }
}

/// Quarter-resolution descriptors: channel 0 is 3x3 box-filtered intensity,
/// channels 1..25 are the 5x5 census signs (+1/-1, ties 0) of the
/// quarter-resolution image.
pub fn extract_features(image: &Map2) -> Result<FeatureMap> {
    if image.width() < 16 || image.height() < 16 {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} smaller than descriptor support (16x16 minimum)",
            image.width(),
            image.height()
        )));
    }
    let quarter = image.downsample_box(4);
    let (w, h) = (quarter.width(), quarter.height());
    let clamp_get = |x: isize, y: isize| -> f64 {
        let cx = x.clamp(0, w as isize - 1) as usize;
        let cy = y.clamp(0, h as isize - 1) as usize;
        quarter.get(cx, cy)
    };
    let mut features = FeatureMap::new(w, h, FEATURE_CHANNELS);
    for y in 0..h {
        for x in 0..w {
            let center = quarter.get(x, y);
            let desc = features.descriptor_mut(x, y);
            let mut box_sum = 0.0;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    box_sum += clamp_get(x as isize + dx, y as isize + dy);
                }
            }
            desc[0] = box_sum / 9.0;
            let mut c = 1;
            let r = CENSUS_RADIUS as isize;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = clamp_get(x as isize + dx, y as isize + dy);
                    desc[c] = if n > center {
                        1.0
                    } else if n < center {
                        -1.0
                    } else {
                        0.0
                    };
                    c += 1;
                }
            }
        }
    }
    Ok(features)
}

/// Warp a source feature map onto the reference grid through a
/// fronto-parallel plane at depth `d`.
///
/// `ref_to_src` maps reference-frame coordinates into the source frame;
/// `k` holds the quarter-resolution intrinsics matching the feature grid.
/// The returned mask is 1 where the sample landed inside the source grid.
pub fn warp_features(
    src: &FeatureMap,
    d: f64,
    ref_to_src: &Pose,
    k: &CameraIntrinsics,
) -> Result<(FeatureMap, Map2)> {
    if !(d > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "hypothesis depth must be positive, got {d}"
        )));
    }
    let (w, h) = (src.width(), src.height());
    let mut out = FeatureMap::new(w, h, src.channels());
    let mut valid = Map2::new(w, h, 0.0);
    let mut buf = vec![0.0; src.channels()];
    for y in 0..h {
        for x in 0..w {
            let p = geometry::backproject(Vector2::new(x as f64, y as f64), d, k)?;
            let q = ref_to_src.transform(&p);
            if q[2] <= 0.0 {
                continue;
            }
            let (px, _) = geometry::project(&q, k)?;
            if src.sample_into(px[0], px[1], &mut buf) {
                out.descriptor_mut(x, y).copy_from_slice(&buf);
                valid.set(x, y, 1.0);
            }
        }
    }
    Ok((out, valid))
}

/// Weighted L1 distance between two descriptors.
#[inline]
fn descriptor_distance(a: &[f64], b: &[f64]) -> f64 {
    let intensity = (a[0] - b[0]).abs();
    let mut census = 0.0;
    for c in 1..a.len() {
        census += (a[c] - b[c]).abs();
    }
    census /= (a.len() - 1) as f64;
    CENSUS_WEIGHT * census + INTENSITY_WEIGHT * intensity
}

/// 3x3 box smoothing of one plane slice, borders clamped.
fn smooth_slice(values: &mut Volume, k: usize) {
    let (w, h) = (values.width(), values.height());
    let mut slice = Map2::from_fn(w, h, |x, y| values.get(x, y, k));
    let src = slice.clone();
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    sum += src.get(sx, sy);
                }
            }
            slice.set(x, y, sum / 9.0);
        }
    }
    for y in 0..h {
        for x in 0..w {
            values.set(x, y, k, slice.get(x, y));
        }
    }
}

/// Mean valid-source L1 descriptor cost per cell and plane. Cells with no
/// valid source at a plane receive the per-pixel maximum cost: absence of
/// evidence must not look like a match.
pub fn build_cost_volume(
    window: &FrameWindow,
    hyps: &DepthHypotheses,
    config: &SweepConfig,
) -> Result<CostVolume> {
    let k4 = window.intrinsics.scaled_down(4);
    let ref_features = extract_features(&window.reference)?;
    let src_features: Vec<FeatureMap> = window
        .sources
        .iter()
        .map(|s| extract_features(&s.image))
        .collect::<Result<_>>()?;
    let (w, h) = (ref_features.width(), ref_features.height());
    let n = hyps.count();

    let mut values = Volume::new(w, h, n, f64::INFINITY);
    let mut counts = Volume::new(w, h, n, 0.0);
    for (k, &d) in hyps.centers().iter().enumerate() {
        for (src, feat) in window.sources.iter().zip(&src_features) {
            let ref_to_src = geometry::invert(&src.pose_src_to_ref);
            let (warped, valid) = warp_features(feat, d, &ref_to_src, &k4)?;
            for y in 0..h {
                for x in 0..w {
                    if valid.get(x, y) > 0.5 {
                        let dist = descriptor_distance(
                            ref_features.descriptor(x, y),
                            warped.descriptor(x, y),
                        );
                        let c = counts.get(x, y, k);
                        let prev = if c == 0.0 { 0.0 } else { values.get(x, y, k) };
                        values.set(x, y, k, prev + dist);
                        counts.set(x, y, k, c + 1.0);
                    }
                }
            }
        }
    }

    // Mean over valid sources, then fill uninformative cells.
    let mut any_valid = false;
    for y in 0..h {
        for x in 0..w {
            let mut max_cost = 0.0f64;
            let mut has_valid = false;
            for k in 0..n {
                let c = counts.get(x, y, k);
                if c > 0.0 {
                    let mean = values.get(x, y, k) / c;
                    values.set(x, y, k, mean);
                    max_cost = max_cost.max(mean);
                    has_valid = true;
                }
            }
            for k in 0..n {
                if counts.get(x, y, k) == 0.0 {
                    values.set(x, y, k, if has_valid { max_cost } else { 0.0 });
                }
            }
            any_valid |= has_valid;
        }
    }
    if !any_valid {
        return Err(Error::DegenerateWindow);
    }

    if config.smooth_cost {
        for k in 0..n {
            smooth_slice(&mut values, k);
        }
    }

    Ok(CostVolume {
        values,
        valid_counts: counts,
    })
}

/// Mean per-pixel cost spread, the default softmax temperature.
pub fn default_temperature(cost: &CostVolume) -> f64 {
    let v = &cost.values;
    let mut total = 0.0;
    let mut count = 0.0;
    for y in 0..v.height() {
        for x in 0..v.width() {
            let px = v.pixel(x, y);
            let lo = px.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            total += hi - lo;
            count += 1.0;
        }
    }
    let t = total / count;
    if t > 1e-12 {
        t
    } else {
        1.0
    }
}

/// Measurement DPV: cost volume followed by the softmax.
pub fn measure_dpv(
    window: &FrameWindow,
    hyps: &DepthHypotheses,
    config: &SweepConfig,
) -> Result<DepthProbabilityVolume> {
    let cost = build_cost_volume(window, hyps, config)?;
    let tau = config.temperature.unwrap_or_else(|| default_temperature(&cost));
    dpv::from_cost(&cost.values, hyps.clone(), tau)
}
