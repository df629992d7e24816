//! Depth probability volumes and the per-pixel statistics derived from them.
//!
//! A DPV stores, for every pixel, a discrete probability distribution over a
//! fixed set of depth hypotheses spaced uniformly in inverse depth. The
//! negative-log form is used by the temporal filter.

use crate::error::{Error, Result};
use crate::grid::{Map2, Volume};

/// Probabilities below this are floored before taking logs so the
/// negative-log volume stays finite.
pub const PROB_FLOOR: f64 = 1e-30;

/// Depth sentinel for invalid / masked pixels, matching the 16-bit depth PNG
/// convention where 0 means "no data".
pub const INVALID_DEPTH: f64 = 0.0;

/// The N candidate depth planes, uniform in inverse depth (disparity).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthHypotheses {
    d_min: f64,
    d_max: f64,
    centers: Vec<f64>,
}

impl DepthHypotheses {
    /// `1/centers[k] = 1/d_min + k * (1/d_max - 1/d_min) / (N-1)`, stored
    /// ascending in depth.
    pub fn new(d_min: f64, d_max: f64, count: usize) -> Result<Self> {
        if !(d_min > 0.0 && d_max > d_min) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < d_min < d_max, got [{d_min}, {d_max}]"
            )));
        }
        if count < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 hypotheses, got {count}"
            )));
        }
        let disp_near = 1.0 / d_min;
        let disp_far = 1.0 / d_max;
        let step = (disp_far - disp_near) / (count - 1) as f64;
        let mut centers: Vec<f64> = (0..count).map(|k| 1.0 / (disp_near + k as f64 * step)).collect();
        // Pin the endpoints exactly.
        centers[0] = d_min;
        centers[count - 1] = d_max;
        Ok(Self {
            d_min,
            d_max,
            centers,
        })
    }

    #[inline]
    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    #[inline]
    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.centers.len()
    }

    #[inline]
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    #[inline]
    pub fn center(&self, k: usize) -> f64 {
        self.centers[k]
    }

    /// Signed disparity spacing between consecutive planes (negative: plane
    /// index ascends with depth, so disparity descends).
    #[inline]
    pub fn disparity_step(&self) -> f64 {
        (1.0 / self.d_max - 1.0 / self.d_min) / (self.count() - 1) as f64
    }

    /// Continuous plane index of a metric depth, in disparity coordinates.
    /// Unclamped; values outside `[0, N-1]` are outside the hypothesis range.
    #[inline]
    pub fn fractional_index(&self, depth: f64) -> f64 {
        (1.0 / depth - 1.0 / self.d_min) / self.disparity_step()
    }

    /// Index of the hypothesis nearest to `depth` in disparity.
    pub fn nearest_index(&self, depth: f64) -> usize {
        let t = self.fractional_index(depth).clamp(0.0, (self.count() - 1) as f64);
        t.round() as usize
    }
}

/// Per-pixel depth distribution `p(d; u, v)` over a camera frustum.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthProbabilityVolume {
    hypotheses: DepthHypotheses,
    values: Volume,
}

impl DepthProbabilityVolume {
    pub fn hypotheses(&self) -> &DepthHypotheses {
        &self.hypotheses
    }

    pub fn values(&self) -> &Volume {
        &self.values
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    /// Uniform distribution at every pixel.
    pub fn uniform(width: usize, height: usize, hypotheses: DepthHypotheses) -> Self {
        let n = hypotheses.count();
        Self {
            hypotheses,
            values: Volume::new(width, height, n, 1.0 / n as f64),
        }
    }

    /// Negative-log form, flooring probabilities at [`PROB_FLOOR`].
    pub fn to_log(&self) -> LogVolume {
        let mut values = self.values.clone();
        for v in values.data_mut() {
            *v = -(v.max(PROB_FLOOR)).ln();
        }
        LogVolume {
            hypotheses: self.hypotheses.clone(),
            values,
        }
    }
}

/// A DPV in negative-log form, `E(d) = -log p(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogVolume {
    hypotheses: DepthHypotheses,
    values: Volume,
}

impl LogVolume {
    pub fn new(hypotheses: DepthHypotheses, values: Volume) -> Result<Self> {
        if values.planes() != hypotheses.count() {
            return Err(Error::ShapeMismatch(format!(
                "volume has {} planes, hypotheses {}",
                values.planes(),
                hypotheses.count()
            )));
        }
        Ok(Self { hypotheses, values })
    }

    pub fn hypotheses(&self) -> &DepthHypotheses {
        &self.hypotheses
    }

    pub fn values(&self) -> &Volume {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Volume {
        &mut self.values
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    /// Shift each pixel's energies so that `exp(-E)` sums to 1.
    pub fn normalize_in_place(&mut self) {
        let (w, h) = (self.values.width(), self.values.height());
        for y in 0..h {
            for x in 0..w {
                let px = self.values.pixel_mut(x, y);
                let offset = neg_log_sum_exp(px);
                for e in px.iter_mut() {
                    *e -= offset;
                }
            }
        }
    }

    /// Back to probability form with per-pixel renormalization.
    pub fn to_probability(&self) -> DepthProbabilityVolume {
        let (w, h, n) = (self.values.width(), self.values.height(), self.values.planes());
        let mut out = Volume::new(w, h, n, 0.0);
        for y in 0..h {
            for x in 0..w {
                let src = self.values.pixel(x, y);
                let dst = out.pixel_mut(x, y);
                let m = src.iter().cloned().fold(f64::INFINITY, f64::min);
                let mut sum = 0.0;
                for (d, e) in dst.iter_mut().zip(src.iter()) {
                    *d = (-(e - m)).exp();
                    sum += *d;
                }
                for d in dst.iter_mut() {
                    *d /= sum;
                }
            }
        }
        DepthProbabilityVolume {
            hypotheses: self.hypotheses.clone(),
            values: out,
        }
    }
}

/// `-log(sum_k exp(-E_k))`, computed stably. This is the per-pixel energy
/// offset that renormalizes a log volume.
#[inline]
pub fn neg_log_sum_exp(energies: &[f64]) -> f64 {
    let m = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let sum: f64 = energies.iter().map(|e| (-(e - m)).exp()).sum();
    m - sum.ln()
}

/// Normalize a raw non-negative volume into a DPV. All-zero pixels become
/// uniform distributions; their count is reported alongside the result.
pub fn normalize(raw: Volume, hypotheses: DepthHypotheses) -> Result<(DepthProbabilityVolume, usize)> {
    if raw.planes() != hypotheses.count() {
        return Err(Error::ShapeMismatch(format!(
            "volume has {} planes, hypotheses {}",
            raw.planes(),
            hypotheses.count()
        )));
    }
    let mut values = raw;
    let n = values.planes();
    let mut degenerate = 0usize;
    for y in 0..values.height() {
        for x in 0..values.width() {
            let px = values.pixel_mut(x, y);
            let sum: f64 = px.iter().sum();
            if sum > 0.0 {
                for v in px.iter_mut() {
                    *v /= sum;
                }
            } else {
                degenerate += 1;
                px.fill(1.0 / n as f64);
            }
        }
    }
    Ok((
        DepthProbabilityVolume { hypotheses, values },
        degenerate,
    ))
}

/// Softmax over depth planes: `p(k) = exp(-cost(k)/tau) / sum_j exp(-cost(j)/tau)`.
/// Low cost means high probability.
pub fn from_cost(
    cost: &Volume,
    hypotheses: DepthHypotheses,
    temperature: f64,
) -> Result<DepthProbabilityVolume> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if cost.planes() != hypotheses.count() {
        return Err(Error::ShapeMismatch(format!(
            "cost has {} planes, hypotheses {}",
            cost.planes(),
            hypotheses.count()
        )));
    }
    if cost.data().iter().any(|c| c.is_nan()) {
        return Err(Error::InvalidInput("NaN in cost volume".into()));
    }
    let (w, h, n) = (cost.width(), cost.height(), cost.planes());
    let mut values = Volume::new(w, h, n, 0.0);
    for y in 0..h {
        for x in 0..w {
            let src = cost.pixel(x, y);
            let dst = values.pixel_mut(x, y);
            let m = src.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            for (d, c) in dst.iter_mut().zip(src.iter()) {
                *d = (-(c - m) / temperature).exp();
                sum += *d;
            }
            for d in dst.iter_mut() {
                *d /= sum;
            }
        }
    }
    Ok(DepthProbabilityVolume { hypotheses, values })
}

/// Posterior-mean depth per pixel, clamped to the hypothesis range.
pub fn expected_depth(dpv: &DepthProbabilityVolume) -> Map2 {
    let h = dpv.hypotheses();
    let centers = h.centers();
    Map2::from_fn(dpv.width(), dpv.height(), |x, y| {
        let p = dpv.values().pixel(x, y);
        let d: f64 = p.iter().zip(centers).map(|(p, c)| p * c).sum();
        d.clamp(h.d_min(), h.d_max())
    })
}

/// Per-pixel argmax-probability depth; companion extractor to
/// [`expected_depth`].
pub fn argmax_depth(dpv: &DepthProbabilityVolume) -> Map2 {
    let centers = dpv.hypotheses().centers();
    Map2::from_fn(dpv.width(), dpv.height(), |x, y| {
        let p = dpv.values().pixel(x, y);
        let k = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        centers[k]
    })
}

/// Probability of the distribution at the given depth, linearly interpolated
/// between the two bracketing planes in disparity coordinates.
pub fn confidence(dpv: &DepthProbabilityVolume, depth_map: &Map2) -> Map2 {
    let hyps = dpv.hypotheses();
    let n = hyps.count();
    Map2::from_fn(dpv.width(), dpv.height(), |x, y| {
        let p = dpv.values().pixel(x, y);
        let t = hyps.fractional_index(depth_map.get(x, y)).clamp(0.0, (n - 1) as f64);
        let k0 = t.floor() as usize;
        let k1 = (k0 + 1).min(n - 1);
        let f = t - k0 as f64;
        p[k0] * (1.0 - f) + p[k1] * f
    })
}

/// Mark pixels whose confidence falls below `threshold` invalid
/// (depth sentinel 0).
pub fn mask_low_confidence(depth: &Map2, conf: &Map2, threshold: f64) -> Map2 {
    Map2::from_fn(depth.width(), depth.height(), |x, y| {
        if conf.get(x, y) < threshold {
            INVALID_DEPTH
        } else {
            depth.get(x, y)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn assert_normalized(dpv: &DepthProbabilityVolume) {
        for y in 0..dpv.height() {
            for x in 0..dpv.width() {
                let s: f64 = dpv.values().pixel(x, y).iter().sum();
                assert!((s - 1.0).abs() < 1e-6, "pixel ({x},{y}) sums to {s}");
            }
        }
    }

    #[test]
    fn hypotheses_paper_defaults() {
        let h = DepthHypotheses::new(0.5, 10.0, 64).unwrap();
        assert_eq!(h.count(), 64);
        assert_eq!(h.center(0), 0.5);
        assert_eq!(h.center(63), 10.0);
        // Arithmetic in disparity.
        let step = h.disparity_step();
        for k in 1..64 {
            let d = 1.0 / h.center(k) - 1.0 / h.center(k - 1);
            assert_abs_diff_eq!(d, step, epsilon = 1e-12);
        }
        // Mid element against the closed form.
        let expected = 1.0 / (1.0 / 0.5 + 32.0 * (1.0 / 10.0 - 1.0 / 0.5) / 63.0);
        assert_abs_diff_eq!(h.center(32), expected, epsilon = 1e-12);
    }

    #[test]
    fn hypotheses_two_point() {
        let h = DepthHypotheses::new(1.0, 2.0, 2).unwrap();
        assert_eq!(h.centers(), &[1.0, 2.0]);
    }

    #[test]
    fn hypotheses_rejects_bad_ranges() {
        assert!(DepthHypotheses::new(0.0, 1.0, 4).is_err());
        assert!(DepthHypotheses::new(2.0, 1.0, 4).is_err());
        assert!(DepthHypotheses::new(1.0, 2.0, 1).is_err());
    }

    #[test]
    fn normalize_basic_and_idempotent() {
        let h = DepthHypotheses::new(1.0, 2.0, 2).unwrap();
        let raw = Volume::from_vec(1, 1, 2, vec![2.0, 2.0]);
        let (dpv, deg) = normalize(raw, h.clone()).unwrap();
        assert_eq!(deg, 0);
        assert_eq!(dpv.values().pixel(0, 0), &[0.5, 0.5]);
        let (again, _) = normalize(dpv.values().clone(), h).unwrap();
        for (a, b) in again.values().data().iter().zip(dpv.values().data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_degenerate_pixel_becomes_uniform() {
        let h = DepthHypotheses::new(0.5, 10.0, 64).unwrap();
        let raw = Volume::new(1, 1, 64, 0.0);
        let (dpv, deg) = normalize(raw, h).unwrap();
        assert_eq!(deg, 1);
        for &p in dpv.values().pixel(0, 0) {
            assert_abs_diff_eq!(p, 1.0 / 64.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn from_cost_uniform_and_two_class() {
        let h2 = DepthHypotheses::new(1.0, 2.0, 2).unwrap();
        let c = Volume::from_vec(1, 1, 2, vec![3.0, 3.0]);
        let dpv = from_cost(&c, h2.clone(), 1.0).unwrap();
        assert_abs_diff_eq!(dpv.values().pixel(0, 0)[0], 0.5, epsilon = 1e-12);

        let c = Volume::from_vec(1, 1, 2, vec![0.0, 1.0]);
        let dpv = from_cost(&c, h2, 1.0).unwrap();
        assert_abs_diff_eq!(dpv.values().pixel(0, 0)[0], 0.7311, epsilon = 1e-4);
        assert_abs_diff_eq!(dpv.values().pixel(0, 0)[1], 0.2689, epsilon = 1e-4);
    }

    #[test]
    fn from_cost_low_temperature_concentrates() {
        let h = DepthHypotheses::new(0.5, 10.0, 8).unwrap();
        let mut c = Volume::new(1, 1, 8, 10.0);
        c.set(0, 0, 0, 0.0);
        let dpv = from_cost(&c, h, 0.1).unwrap();
        assert!(dpv.values().pixel(0, 0)[0] > 1.0 - 1e-6);
    }

    #[test]
    fn from_cost_rejects_nan() {
        let h = DepthHypotheses::new(1.0, 2.0, 2).unwrap();
        let c = Volume::from_vec(1, 1, 2, vec![f64::NAN, 0.0]);
        assert!(matches!(from_cost(&c, h, 1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn expected_depth_delta_and_mixture() {
        let h = DepthHypotheses::new(1.0, 3.0, 2).unwrap();
        let raw = Volume::from_vec(1, 1, 2, vec![0.0, 1.0]);
        let (dpv, _) = normalize(raw, h.clone()).unwrap();
        assert_abs_diff_eq!(expected_depth(&dpv).get(0, 0), 3.0, epsilon = 1e-12);

        let raw = Volume::from_vec(1, 1, 2, vec![0.5, 0.5]);
        let (dpv, _) = normalize(raw, h).unwrap();
        assert_abs_diff_eq!(expected_depth(&dpv).get(0, 0), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn expected_depth_uniform_is_mean_of_centers() {
        let h = DepthHypotheses::new(0.5, 10.0, 64).unwrap();
        let mean: f64 = h.centers().iter().sum::<f64>() / 64.0;
        let dpv = DepthProbabilityVolume::uniform(2, 2, h);
        assert_abs_diff_eq!(expected_depth(&dpv).get(1, 1), mean, epsilon = 1e-12);
    }

    #[test]
    fn confidence_delta_and_uniform() {
        let h = DepthHypotheses::new(0.5, 10.0, 64).unwrap();
        let mut raw = Volume::new(1, 1, 64, 0.0);
        raw.set(0, 0, 20, 1.0);
        let (dpv, _) = normalize(raw, h.clone()).unwrap();
        let d = expected_depth(&dpv);
        assert_abs_diff_eq!(confidence(&dpv, &d).get(0, 0), 1.0, epsilon = 1e-9);

        let uni = DepthProbabilityVolume::uniform(1, 1, h);
        let d = expected_depth(&uni);
        assert_abs_diff_eq!(confidence(&uni, &d).get(0, 0), 1.0 / 64.0, epsilon = 1e-9);
    }

    #[test]
    fn confidence_interpolates_in_disparity() {
        let h = DepthHypotheses::new(1.0, 3.0, 2).unwrap();
        let raw = Volume::from_vec(1, 1, 2, vec![0.8, 0.2]);
        let (dpv, _) = normalize(raw, h.clone()).unwrap();
        let d = expected_depth(&dpv);
        assert_abs_diff_eq!(d.get(0, 0), 1.4, epsilon = 1e-12);
        // Fraction along the disparity axis between centers 1.0 and 3.0.
        let t = (1.0 / 1.4 - 1.0) / (1.0 / 3.0 - 1.0);
        let expected = 0.8 * (1.0 - t) + 0.2 * t;
        assert_abs_diff_eq!(confidence(&dpv, &d).get(0, 0), expected, epsilon = 1e-12);
    }

    #[test]
    fn mask_low_confidence_thresholds() {
        let depth = Map2::new(2, 1, 2.0);
        let conf = Map2::from_vec(2, 1, vec![1.0 / 64.0, 0.5]);
        let none = mask_low_confidence(&depth, &conf, 0.0);
        assert_eq!(none.get(0, 0), 2.0);
        let some = mask_low_confidence(&depth, &conf, 0.1);
        assert_eq!(some.get(0, 0), INVALID_DEPTH);
        assert_eq!(some.get(1, 0), 2.0);
        let all = mask_low_confidence(&depth, &conf, 1.0);
        assert_eq!(all.get(1, 0), INVALID_DEPTH);
    }

    #[test]
    fn log_roundtrip() {
        let h = DepthHypotheses::new(0.5, 10.0, 16).unwrap();
        let raw = Volume::from_vec(
            1,
            1,
            16,
            (0..16).map(|k| ((k as f64) * 0.37).sin().abs() + 1e-3).collect(),
        );
        let (dpv, _) = normalize(raw, h).unwrap();
        let back = dpv.to_log().to_probability();
        for (a, b) in back.values().data().iter().zip(dpv.values().data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn from_cost_shift_invariant(
            costs in proptest::collection::vec(0.0..10.0f64, 8),
            shift in -100.0..100.0f64,
            tau in 0.1..5.0f64,
        ) {
            let h = DepthHypotheses::new(0.5, 10.0, 8).unwrap();
            let a = from_cost(&Volume::from_vec(1, 1, 8, costs.clone()), h.clone(), tau).unwrap();
            let shifted: Vec<f64> = costs.iter().map(|c| c + shift).collect();
            let b = from_cost(&Volume::from_vec(1, 1, 8, shifted), h, tau).unwrap();
            for (pa, pb) in a.values().data().iter().zip(b.values().data()) {
                prop_assert!((pa - pb).abs() < 1e-9);
            }
        }

        #[test]
        fn normalize_always_sums_to_one(
            raw in proptest::collection::vec(0.0..5.0f64, 4 * 4 * 8)
        ) {
            let h = DepthHypotheses::new(0.5, 10.0, 8).unwrap();
            let (dpv, _) = normalize(Volume::from_vec(4, 4, 8, raw), h).unwrap();
            assert_normalized(&dpv);
        }
    }

    #[test]
    fn from_cost_zero_temperature_limit_approaches_argmin() {
        let h = DepthHypotheses::new(0.5, 10.0, 8).unwrap();
        let costs: Vec<f64> = vec![4.0, 2.0, 0.5, 3.0, 5.0, 6.0, 7.0, 8.0];
        let dpv = from_cost(&Volume::from_vec(1, 1, 8, costs), h.clone(), 1e-3).unwrap();
        let d = expected_depth(&dpv).get(0, 0);
        assert_abs_diff_eq!(d, h.center(2), epsilon = 1e-6);
    }
}
