//! Temporal integration of measurement DPVs: Bayesian predict via 3-D warp of
//! the belief volume, plus three update rules — plain product, global damping,
//! and residual-gated adaptive damping — and the scalar Kalman oracle the
//! filter is checked against.

use nalgebra::Vector2;

use crate::dpv::{DepthProbabilityVolume, LogVolume};
use crate::error::{Error, Result};
use crate::geometry::{self, CameraIntrinsics, Pose};
use crate::grid::Volume;
use crate::plane_sweep::{self, FrameWindow, SweepConfig};

/// How the prediction and the new measurement are combined each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Discard the prediction; each frame stands alone.
    None,
    /// Plain Bayesian product of prediction and measurement.
    Bayes,
    /// Down-weight the predicted log-belief uniformly by `lambda`.
    GlobalDamping,
    /// Scale the measurement-minus-prediction residual per pixel before
    /// adding it to the prediction.
    Adaptive,
}

/// Fusion parameters. `lambda` applies to global damping; `kappa` and
/// `lambda_min` shape the adaptive per-pixel prediction weight
/// `lambda(u,v) = clamp(1 - mean_k|dE|/kappa, lambda_min, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct GainConfig {
    pub mode: FusionMode,
    pub lambda: f64,
    pub kappa: f64,
    pub lambda_min: f64,
}

impl Default for GainConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::Adaptive,
            lambda: 0.8,
            kappa: 2.0,
            lambda_min: 0.2,
        }
    }
}

/// The running belief `p(d_t | I_{1:t})` with the pose and time of the frame
/// it is expressed in.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub belief: LogVolume,
    pub world_from_cam: Pose,
    pub timestamp: f64,
}

impl FilterState {
    pub fn from_measurement(
        meas: &DepthProbabilityVolume,
        world_from_cam: Pose,
        timestamp: f64,
    ) -> Self {
        let mut belief = meas.to_log();
        belief.normalize_in_place();
        Self {
            belief,
            world_from_cam,
            timestamp,
        }
    }
}

/// Warp the belief volume from the camera frame at `t` into the camera frame
/// at `t+1`.
///
/// `cam_t_to_next` maps frame-`t` coordinates into frame-`t+1` coordinates;
/// `k` holds intrinsics at the belief's grid resolution. Each target voxel is
/// backprojected, moved into the old frame, and trilinearly sampled from the
/// old volume with the depth axis in disparity coordinates. Voxels that land
/// outside the old frustum get the uniform prior `1/N`.
pub fn predict(state: &FilterState, cam_t_to_next: &Pose, k: &CameraIntrinsics) -> LogVolume {
    let hyps = state.belief.hypotheses().clone();
    let old = state.belief.to_probability();
    let (w, h, n) = (old.width(), old.height(), hyps.count());
    let uniform = 1.0 / n as f64;
    let next_to_old = geometry::invert(cam_t_to_next);
    let mut out = Volume::new(w, h, n, uniform);
    let max_idx = (n - 1) as f64;
    for y in 0..h {
        for x in 0..w {
            for (plane, &d) in hyps.centers().iter().enumerate() {
                let p_new = match geometry::backproject(Vector2::new(x as f64, y as f64), d, k) {
                    Ok(p) => p,
                    Err(_) => continue,
                };
                let p_old = next_to_old.transform(&p_new);
                if p_old[2] <= 0.0 {
                    continue;
                }
                let (px, depth_old) = match geometry::project(&p_old, k) {
                    Ok(v) => v,
                    Err(_) => continue,
                };
                let (sx, sy) = (px[0], px[1]);
                let t = hyps.fractional_index(depth_old);
                // Small slack so the frustum faces themselves stay inside
                // despite float rounding.
                const EDGE_EPS: f64 = 1e-9;
                if !(sx >= -EDGE_EPS
                    && sy >= -EDGE_EPS
                    && sx <= (w - 1) as f64 + EDGE_EPS
                    && sy <= (h - 1) as f64 + EDGE_EPS
                    && t >= -EDGE_EPS
                    && t <= max_idx + EDGE_EPS)
                {
                    continue;
                }
                let sx = sx.clamp(0.0, (w - 1) as f64);
                let sy = sy.clamp(0.0, (h - 1) as f64);
                let t = t.clamp(0.0, max_idx);
                let x0 = (sx.floor() as usize).min(w - 1);
                let y0 = (sy.floor() as usize).min(h - 1);
                let k0 = (t.floor() as usize).min(n - 1);
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let k1 = (k0 + 1).min(n - 1);
                let fx = sx - x0 as f64;
                let fy = sy - y0 as f64;
                let fk = t - k0 as f64;
                let mut acc = 0.0;
                for (xi, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                    for (yi, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                        let px_old = old.values().pixel(xi, yi);
                        acc += wx * wy * (px_old[k0] * (1.0 - fk) + px_old[k1] * fk);
                    }
                }
                out.set(x, y, plane, acc);
            }
        }
    }
    let (normalized, _) = crate::dpv::normalize(out, hyps).expect("shape is consistent");
    let mut log = normalized.to_log();
    log.normalize_in_place();
    log
}

fn check_same_shape(pred: &LogVolume, meas_planes: usize, w: usize, h: usize) -> Result<()> {
    if pred.width() != w || pred.height() != h || pred.hypotheses().count() != meas_planes {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{}x{} vs measurement {}x{}x{}",
            pred.width(),
            pred.height(),
            pred.hypotheses().count(),
            w,
            h,
            meas_planes
        )));
    }
    Ok(())
}

/// `E_new = lambda * E_pred + E_meas`, renormalized.
fn log_linear_combine(pred: &LogVolume, meas: &DepthProbabilityVolume, lambda: f64) -> LogVolume {
    let e_meas = meas.to_log();
    let mut out = pred.clone();
    for (o, m) in out.values_mut().data_mut().iter_mut().zip(e_meas.values().data()) {
        *o = lambda * *o + *m;
    }
    out.normalize_in_place();
    out
}

/// Plain Bayesian update: product of prediction and measurement.
pub fn update_bayes(pred: &LogVolume, meas: &DepthProbabilityVolume) -> Result<LogVolume> {
    check_same_shape(pred, meas.hypotheses().count(), meas.width(), meas.height())?;
    Ok(log_linear_combine(pred, meas, 1.0))
}

/// Globally damped update: the predicted log-belief is scaled by `lambda`
/// before the product.
pub fn update_global_damping(
    pred: &LogVolume,
    meas: &DepthProbabilityVolume,
    lambda: f64,
) -> Result<LogVolume> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be in [0,1], got {lambda}"
        )));
    }
    check_same_shape(pred, meas.hypotheses().count(), meas.width(), meas.height())?;
    Ok(log_linear_combine(pred, meas, lambda))
}

/// `dE = E_meas - E_pred`, both per-pixel log-normalized first.
pub fn residual(meas: &LogVolume, pred: &LogVolume) -> Result<Volume> {
    if !meas.values().same_shape(pred.values()) {
        return Err(Error::ShapeMismatch("residual inputs differ in shape".into()));
    }
    let mut m = meas.clone();
    m.normalize_in_place();
    let mut p = pred.clone();
    p.normalize_in_place();
    let mut out = m.values().clone();
    for (o, e) in out.data_mut().iter_mut().zip(p.values().data()) {
        *o -= e;
    }
    Ok(out)
}

/// Residual-gated update: per-voxel damping `E_new = lambda(u,v) * E_pred +
/// E_meas` with `lambda = clamp(1 - mean_k|dE|/kappa, lambda_min, 1)`.
///
/// Where the residual is small the prediction is integrated at full weight
/// (the plain Bayesian update); where it is large — disocclusions, stale
/// belief — the prediction is damped towards measurement-only.
pub fn update_adaptive(
    pred: &LogVolume,
    meas: &DepthProbabilityVolume,
    cfg: &GainConfig,
) -> Result<LogVolume> {
    if !(cfg.kappa > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kappa must be positive, got {}",
            cfg.kappa
        )));
    }
    check_same_shape(pred, meas.hypotheses().count(), meas.width(), meas.height())?;
    let delta = residual(&meas.to_log(), pred)?;
    let e_meas = meas.to_log();
    let (w, h, n) = (delta.width(), delta.height(), delta.planes());
    let mut out = pred.clone();
    for y in 0..h {
        for x in 0..w {
            let de = delta.pixel(x, y);
            let s: f64 = de.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
            let lambda = (1.0 - s / cfg.kappa).clamp(cfg.lambda_min, 1.0);
            let px = out.values_mut().pixel_mut(x, y);
            for (e, m) in px.iter_mut().zip(e_meas.values().pixel(x, y)) {
                *e = lambda * *e + *m;
            }
        }
    }
    out.normalize_in_place();
    Ok(out)
}

/// Closed-form scalar Gaussian-product update, the reference the discretized
/// filter is compared against.
pub fn kalman_oracle_1d(
    prior_mean: f64,
    prior_var: f64,
    obs_mean: f64,
    obs_var: f64,
) -> Result<(f64, f64)> {
    if !(prior_var > 0.0 && obs_var > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "variances must be positive, got {prior_var} and {obs_var}"
        )));
    }
    let denom = prior_var + obs_var;
    Ok((
        (prior_mean * obs_var + obs_mean * prior_var) / denom,
        prior_var * obs_var / denom,
    ))
}

/// One predict-measure-update cycle of the filter.
pub fn step(
    state: &FilterState,
    window: &FrameWindow,
    gain: &GainConfig,
    sweep: &SweepConfig,
) -> Result<FilterState> {
    if !(window.timestamp > state.timestamp) {
        return Err(Error::InvalidArgument(format!(
            "window timestamp {} not after state timestamp {}",
            window.timestamp, state.timestamp
        )));
    }
    let hyps = state.belief.hypotheses().clone();
    let meas = plane_sweep::measure_dpv(window, &hyps, sweep)?;
    let belief = match gain.mode {
        FusionMode::None => {
            let mut b = meas.to_log();
            b.normalize_in_place();
            b
        }
        mode => {
            let cam_t_to_next =
                geometry::compose(&geometry::invert(&window.ref_world_from_cam), &state.world_from_cam);
            let k4 = window.intrinsics.scaled_down(4);
            let pred = predict(state, &cam_t_to_next, &k4);
            match mode {
                FusionMode::Bayes => update_bayes(&pred, &meas)?,
                FusionMode::GlobalDamping => update_global_damping(&pred, &meas, gain.lambda)?,
                FusionMode::Adaptive => update_adaptive(&pred, &meas, gain)?,
                FusionMode::None => unreachable!(),
            }
        }
    };
    Ok(FilterState {
        belief,
        world_from_cam: window.ref_world_from_cam,
        timestamp: window.timestamp,
    })
}
