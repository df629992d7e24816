//! Sliding-window refinement of relative camera poses by minimizing the
//! confidence-weighted photometric residual between the reference frame and
//! each source frame, given the predicted depth and confidence maps.

use nalgebra::{Vector2, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{self, CameraIntrinsics, Pose, Twist};
use crate::grid::Map2;

/// One pose-refinement problem over a frame window. `initial_poses[k]` maps
/// source-frame-`k` coordinates into the reference frame.
#[derive(Debug, Clone)]
pub struct PoseOptProblem {
    pub reference: Map2,
    pub sources: Vec<Map2>,
    pub depth: Map2,
    pub confidence: Map2,
    pub initial_poses: Vec<Pose>,
    pub intrinsics: CameraIntrinsics,
    pub pyramid_levels: usize,
    pub huber_threshold: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl PoseOptProblem {
    pub fn with_defaults(
        reference: Map2,
        sources: Vec<Map2>,
        depth: Map2,
        confidence: Map2,
        initial_poses: Vec<Pose>,
        intrinsics: CameraIntrinsics,
    ) -> Self {
        Self {
            reference,
            sources,
            depth,
            confidence,
            initial_poses,
            intrinsics,
            pyramid_levels: 3,
            huber_threshold: 0.1,
            max_iterations: 20,
            tolerance: 1e-6,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sources.len() != self.initial_poses.len() {
            return Err(Error::InvalidArgument(
                "one initial pose per source frame required".into(),
            ));
        }
        if self.sources.is_empty() {
            return Err(Error::InvalidArgument("no source frames".into()));
        }
        if self.pyramid_levels < 1 {
            return Err(Error::InvalidArgument("pyramid levels must be >= 1".into()));
        }
        let (w, h) = (self.reference.width(), self.reference.height());
        for m in [&self.depth, &self.confidence] {
            if m.width() != w || m.height() != h {
                return Err(Error::ShapeMismatch(
                    "depth/confidence must match the reference image size".into(),
                ));
            }
        }
        for s in &self.sources {
            if s.width() != w || s.height() != h {
                return Err(Error::ShapeMismatch("source image size mismatch".into()));
            }
        }
        Ok(())
    }
}

/// Per-source-frame convergence report.
#[derive(Debug, Clone, Copy)]
pub struct PoseDiagnostics {
    pub iterations: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub rank_deficient: bool,
}

#[derive(Debug, Clone)]
pub struct PoseOptResult {
    pub poses: Vec<Pose>,
    pub diagnostics: Vec<PoseDiagnostics>,
}

#[inline]
fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// IRLS weight `rho'(r)/r` of the Huber loss.
#[inline]
fn huber_weight(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        1.0
    } else {
        delta / a
    }
}

/// Bilinear sample with the exact gradient of the interpolant.
fn sample_with_gradient(img: &Map2, x: f64, y: f64) -> Option<(f64, f64, f64)> {
    let (w, h) = (img.width(), img.height());
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(w - 2);
    let y0 = (y.floor() as usize).min(h - 2);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v00 = img.get(x0, y0);
    let v10 = img.get(x0 + 1, y0);
    let v01 = img.get(x0, y0 + 1);
    let v11 = img.get(x0 + 1, y0 + 1);
    let value = v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy
        + v11 * fx * fy;
    let gx = (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy;
    let gy = (v01 - v00) * (1.0 - fx) + (v11 - v10) * fx;
    Some((value, gx, gy))
}

/// Photometric residual of one reference pixel against one source frame, and
/// its Jacobian w.r.t. a left twist perturbation of `ref_to_src`.
///
/// `point_ref` is the backprojected reference-frame point,
/// `ref_intensity` the reference intensity at that pixel. `None` when the
/// warped sample falls outside the source image or behind the camera.
pub fn residual_jacobian(
    src: &Map2,
    point_ref: &Vector3<f64>,
    ref_intensity: f64,
    ref_to_src: &Pose,
    k: &CameraIntrinsics,
) -> Option<(f64, Vector6<f64>)> {
    let q = ref_to_src.transform(point_ref);
    if q[2] <= 0.0 {
        return None;
    }
    let (px, _) = geometry::project(&q, k).ok()?;
    let (value, gx, gy) = sample_with_gradient(src, px[0], px[1])?;
    let r = ref_intensity - value;
    let z = q[2];
    let iz = 1.0 / z;
    // d(pixel)/d(q)
    let du = Vector3::new(k.fx * iz, 0.0, -k.fx * q[0] * iz * iz);
    let dv = Vector3::new(0.0, k.fy * iz, -k.fy * q[1] * iz * iz);
    // Left perturbation: q(xi) ~ q + omega x q + v, so
    // d(value)/d(omega) = q x grad_q and d(value)/d(v) = grad_q.
    // residual = ref - value flips the sign.
    let grad_q = gx * du + gy * dv;
    let jw = -(q.cross(&grad_q));
    let mut j = Vector6::zeros();
    j[0] = jw[0];
    j[1] = jw[1];
    j[2] = jw[2];
    j[3] = -grad_q[0];
    j[4] = -grad_q[1];
    j[5] = -grad_q[2];
    Some((r, j))
}

struct Level {
    reference: Map2,
    sources: Vec<Map2>,
    depth: Map2,
    confidence: Map2,
    intrinsics: CameraIntrinsics,
}

/// Downsample a depth map treating 0 as invalid.
fn downsample_depth(depth: &Map2) -> Map2 {
    let w = (depth.width() / 2).max(1);
    let h = (depth.height() / 2).max(1);
    Map2::from_fn(w, h, |x, y| {
        let mut sum = 0.0;
        let mut n = 0.0;
        for dy in 0..2 {
            for dx in 0..2 {
                let sx = (2 * x + dx).min(depth.width() - 1);
                let sy = (2 * y + dy).min(depth.height() - 1);
                let d = depth.get(sx, sy);
                if d > 0.0 {
                    sum += d;
                    n += 1.0;
                }
            }
        }
        if n > 0.0 {
            sum / n
        } else {
            0.0
        }
    })
}

fn build_pyramid(problem: &PoseOptProblem) -> Vec<Level> {
    let mut levels = vec![Level {
        reference: problem.reference.clone(),
        sources: problem.sources.clone(),
        depth: problem.depth.clone(),
        confidence: problem.confidence.clone(),
        intrinsics: problem.intrinsics,
    }];
    for _ in 1..problem.pyramid_levels {
        let prev = levels.last().unwrap();
        levels.push(Level {
            reference: prev.reference.downsample_half(),
            sources: prev.sources.iter().map(Map2::downsample_half).collect(),
            depth: downsample_depth(&prev.depth),
            confidence: prev.confidence.downsample_half(),
            intrinsics: prev.intrinsics.scaled_down(2),
        });
    }
    levels
}

/// Huber energy of one source at one pyramid level, normalized by the valid
/// sample count. `None` when nothing is valid.
fn level_energy(level: &Level, src_idx: usize, ref_to_src: &Pose, delta: f64) -> Option<f64> {
    let src = &level.sources[src_idx];
    let k = &level.intrinsics;
    let mut energy = 0.0;
    let mut count = 0usize;
    let mut total_weight = 0.0;
    for y in 0..level.reference.height() {
        for x in 0..level.reference.width() {
            let d = level.depth.get(x, y);
            let c = level.confidence.get(x, y);
            if d <= 0.0 || c <= 0.0 {
                continue;
            }
            let p = match geometry::backproject(Vector2::new(x as f64, y as f64), d, k) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let q = ref_to_src.transform(&p);
            if q[2] <= 0.0 {
                continue;
            }
            let px = match geometry::project(&q, k) {
                Ok((px, _)) => px,
                Err(_) => continue,
            };
            if let Some(v) = src.sample_bilinear(px[0], px[1]) {
                let r = level.reference.get(x, y) - v;
                energy += c * huber(r, delta);
                total_weight += c;
                count += 1;
            }
        }
    }
    if count == 0 || total_weight <= 1e-12 {
        None
    } else {
        Some(energy / count as f64)
    }
}

/// Confidence-weighted photometric energy of the window at the given poses,
/// summed over source frames, normalized per frame by valid pixel count.
pub fn photometric_objective(problem: &PoseOptProblem, poses: &[Pose]) -> Result<f64> {
    problem.validate()?;
    if poses.len() != problem.sources.len() {
        return Err(Error::InvalidArgument("one pose per source frame required".into()));
    }
    let level = Level {
        reference: problem.reference.clone(),
        sources: problem.sources.clone(),
        depth: problem.depth.clone(),
        confidence: problem.confidence.clone(),
        intrinsics: problem.intrinsics,
    };
    let mut total = 0.0;
    for (i, pose) in poses.iter().enumerate() {
        let ref_to_src = geometry::invert(pose);
        total += level_energy(&level, i, &ref_to_src, problem.huber_threshold).ok_or_else(|| {
            Error::DegenerateProblem(format!("no valid pixels against source {i}"))
        })?;
    }
    Ok(total)
}

/// One Gauss-Newton pass with Levenberg damping for a single source frame at
/// a single pyramid level. Returns the refined ref-to-src pose.
fn optimize_level(
    level: &Level,
    src_idx: usize,
    mut ref_to_src: Pose,
    problem: &PoseOptProblem,
    diag: &mut PoseDiagnostics,
) -> Result<Pose> {
    let delta = problem.huber_threshold;
    let mut energy = match level_energy(level, src_idx, &ref_to_src, delta) {
        Some(e) => e,
        None => return Ok(ref_to_src),
    };
    let mut mu = 1e-6;
    for _ in 0..problem.max_iterations {
        diag.iterations += 1;
        // Build the damped normal equations.
        let mut jtj = nalgebra::Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        let mut count = 0usize;
        let k = &level.intrinsics;
        for y in 0..level.reference.height() {
            for x in 0..level.reference.width() {
                let d = level.depth.get(x, y);
                let c = level.confidence.get(x, y);
                if d <= 0.0 || c <= 0.0 {
                    continue;
                }
                let p = match geometry::backproject(Vector2::new(x as f64, y as f64), d, k) {
                    Ok(p) => p,
                    Err(_) => continue,
                };
                let ref_i = level.reference.get(x, y);
                if let Some((r, j)) =
                    residual_jacobian(&level.sources[src_idx], &p, ref_i, &ref_to_src, k)
                {
                    let w = c * huber_weight(r, delta);
                    jtj += w * j * j.transpose();
                    jtr += w * r * j;
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Ok(ref_to_src);
        }
        let max_diag = (0..6).map(|i| jtj[(i, i)]).fold(0.0f64, f64::max);
        if max_diag < 1e-14 {
            diag.rank_deficient = true;
            return Ok(ref_to_src);
        }
        // Levenberg: retry with more damping until the step reduces the
        // energy, so accepted steps never increase the objective.
        let mut accepted = false;
        for _ in 0..10 {
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += mu * jtj[(i, i)].max(1e-12);
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-jtr)),
                None => {
                    mu *= 10.0;
                    continue;
                }
            };
            if !step.iter().all(|v| v.is_finite()) {
                return Err(Error::NumericalFailure(
                    "non-finite Gauss-Newton step".into(),
                ));
            }
            let candidate = geometry::compose(&geometry::exp(&Twist::from_vector(step)), &ref_to_src);
            let cand_energy = match level_energy(level, src_idx, &candidate, delta) {
                Some(e) => e,
                None => {
                    mu *= 10.0;
                    continue;
                }
            };
            if !cand_energy.is_finite() {
                return Err(Error::NumericalFailure("non-finite energy".into()));
            }
            if cand_energy <= energy {
                ref_to_src = candidate.reorthonormalized(1e-12);
                energy = cand_energy;
                mu = (mu * 0.3).max(1e-9);
                accepted = true;
                if step.norm() < problem.tolerance {
                    return Ok(ref_to_src);
                }
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            // Damping exhausted; we are at a (local) minimum for this level.
            return Ok(ref_to_src);
        }
    }
    Ok(ref_to_src)
}

/// Refine every source pose of the window independently, coarse-to-fine.
pub fn optimize_window_poses(problem: &PoseOptProblem) -> Result<PoseOptResult> {
    problem.validate()?;
    let levels = build_pyramid(problem);
    let mut poses = Vec::with_capacity(problem.sources.len());
    let mut diagnostics = Vec::with_capacity(problem.sources.len());
    for (i, initial) in problem.initial_poses.iter().enumerate() {
        let mut diag = PoseDiagnostics {
            iterations: 0,
            initial_energy: f64::NAN,
            final_energy: f64::NAN,
            rank_deficient: false,
        };
        let full = &levels[0];
        let mut ref_to_src = geometry::invert(initial);
        diag.initial_energy = level_energy(full, i, &ref_to_src, problem.huber_threshold)
            .ok_or_else(|| {
                Error::DegenerateProblem(format!("no valid pixels against source {i}"))
            })?;
        for level in levels.iter().rev() {
            ref_to_src = optimize_level(level, i, ref_to_src, problem, &mut diag)?;
        }
        diag.final_energy = level_energy(full, i, &ref_to_src, problem.huber_threshold)
            .unwrap_or(diag.initial_energy);
        if diag.final_energy > diag.initial_energy {
            // Coarse levels may disagree with the full-resolution objective;
            // never return something worse than the input.
            ref_to_src = geometry::invert(initial);
            diag.final_energy = diag.initial_energy;
        }
        poses.push(geometry::invert(&ref_to_src));
        diagnostics.push(diag);
    }
    Ok(PoseOptResult { poses, diagnostics })
}
