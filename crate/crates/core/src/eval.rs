//! Ground-truth depth evaluation and the synthetic scene renderer backing
//! every oracle experiment in the test suite.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::grid::Map2;

/// Eigen-style depth metrics. Delta thresholds are percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub delta_1: f64,
    pub delta_2: f64,
    pub delta_3: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub scale_inv: f64,
    pub valid_pixels: usize,
}

impl DepthMetrics {
    /// Flat key-value text block, one metric per line.
    pub fn to_text(&self) -> String {
        format!(
            "delta_1.25 {:.6}\ndelta_1.25^2 {:.6}\ndelta_1.25^3 {:.6}\nabs_rel {:.6}\nsq_rel {:.6}\nrmse {:.6}\nrmse_log {:.6}\nscale_inv {:.6}\nvalid_pixels {}\n",
            self.delta_1,
            self.delta_2,
            self.delta_3,
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.scale_inv,
            self.valid_pixels
        )
    }
}

/// Scene geometry: textured primitives in the world frame.
#[derive(Debug, Clone, Copy)]
pub enum Primitive {
    /// Infinite plane `z = z0`, normal facing -z.
    Plane { z: f64 },
    /// Axis-aligned rectangle in the plane `z = z0`.
    Rect {
        z: f64,
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    },
    Sphere { center: Vector3<f64>, radius: f64 },
}

/// A deterministic synthetic sequence: geometry, trajectory
/// (world-from-camera poses), intrinsics, and a texture seed.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub primitives: Vec<Primitive>,
    pub trajectory: Vec<Pose>,
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
}

/// Band-limited procedural albedo: a sum of 8 random-phase 3-D sinusoids.
struct Texture {
    waves: Vec<(Vector3<f64>, f64, f64)>, // (wavevector, phase, amplitude)
}

impl Texture {
    fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..8)
            .map(|_| {
                let dir = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .normalize();
                let freq = rng.gen_range(3.0..18.0);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let amp = rng.gen_range(0.04..0.09);
                (dir * freq, phase, amp)
            })
            .collect();
        Self { waves }
    }

    fn albedo(&self, p: &Vector3<f64>) -> f64 {
        let s: f64 = self
            .waves
            .iter()
            .map(|(k, phase, amp)| amp * (k.dot(p) + phase).sin())
            .sum();
        (0.5 + s).clamp(0.02, 0.98)
    }
}

const LIGHT_DIR: Vector3<f64> = Vector3::new(0.3, -0.5, -0.81);

struct Hit {
    depth: f64,
    point: Vector3<f64>,
    normal: Vector3<f64>,
}

/// Intersect one primitive with the ray `o + t*d`; `t` equals camera-frame
/// depth because the ray direction has unit z in the camera frame.
fn intersect(prim: &Primitive, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    match *prim {
        Primitive::Plane { z } => {
            if d[2].abs() < 1e-12 {
                return None;
            }
            let t = (z - o[2]) / d[2];
            (t > 1e-9).then(|| (t, Vector3::new(0.0, 0.0, -1.0)))
        }
        Primitive::Rect {
            z,
            x_min,
            x_max,
            y_min,
            y_max,
        } => {
            if d[2].abs() < 1e-12 {
                return None;
            }
            let t = (z - o[2]) / d[2];
            if t <= 1e-9 {
                return None;
            }
            let p = o + t * d;
            (p[0] >= x_min && p[0] <= x_max && p[1] >= y_min && p[1] <= y_max)
                .then(|| (t, Vector3::new(0.0, 0.0, -1.0)))
        }
        Primitive::Sphere { center, radius } => {
            let oc = o - center;
            let a = d.dot(d);
            let b = 2.0 * oc.dot(d);
            let c = oc.dot(&oc) - radius * radius;
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t = [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
                .into_iter()
                .find(|&t| t > 1e-9)?;
            let p = o + t * d;
            Some((t, (p - center).normalize()))
        }
    }
}

/// Ray-cast one frame of the scene: Lambertian-shaded image, exact depth map
/// (0 where the ray misses all geometry), and the camera pose.
pub fn render(scene: &SyntheticScene, frame: usize) -> Result<(Map2, Map2, Pose)> {
    let pose = *scene
        .trajectory
        .get(frame)
        .ok_or_else(|| Error::InvalidArgument(format!("frame {frame} outside trajectory")))?;
    let k = &scene.intrinsics;
    let texture = Texture::from_seed(scene.seed);
    let origin = pose.translation;
    let light = LIGHT_DIR.normalize();
    let mut image = Map2::new(k.width, k.height, 0.0);
    let mut depth = Map2::new(k.width, k.height, 0.0);
    for v in 0..k.height {
        for u in 0..k.width {
            // Unit-z camera ray so the hit parameter is metric depth.
            let dir_cam = Vector3::new(
                (u as f64 - k.cx) / k.fx,
                (v as f64 - k.cy) / k.fy,
                1.0,
            );
            let dir_world = pose.rotation * dir_cam;
            let mut best: Option<Hit> = None;
            for prim in &scene.primitives {
                if let Some((t, normal)) = intersect(prim, &origin, &dir_world) {
                    if best.as_ref().map_or(true, |h| t < h.depth) {
                        best = Some(Hit {
                            depth: t,
                            point: origin + t * dir_world,
                            normal,
                        });
                    }
                }
            }
            if let Some(hit) = best {
                let shade = 0.4 + 0.6 * hit.normal.dot(&(-light)).max(0.0);
                image.set(u, v, (texture.albedo(&hit.point) * shade).clamp(0.0, 1.0));
                depth.set(u, v, hit.depth);
            }
        }
    }
    Ok((image, depth, pose))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Align the monocular scale: multiply `pred` by `median(gt)/median(pred)`
/// over jointly valid (positive) pixels.
pub fn scale_normalize(pred: &Map2, gt: &Map2) -> Result<Map2> {
    let mut ps = Vec::new();
    let mut gs = Vec::new();
    for (p, g) in pred.data().iter().zip(gt.data()) {
        if *p > 0.0 && *g > 0.0 {
            ps.push(*p);
            gs.push(*g);
        }
    }
    if ps.is_empty() {
        return Err(Error::DegenerateProblem("no jointly valid pixels".into()));
    }
    let mp = median(&mut ps);
    let mg = median(&mut gs);
    if mp <= 0.0 || mg <= 0.0 {
        return Err(Error::DegenerateProblem("non-positive median depth".into()));
    }
    let s = mg / mp;
    Ok(Map2::from_fn(pred.width(), pred.height(), |x, y| {
        let p = pred.get(x, y);
        if p > 0.0 {
            p * s
        } else {
            p
        }
    }))
}

/// Standard Eigen metric suite over pixels where the mask is nonzero and
/// both maps are valid (positive).
pub fn compute_metrics(pred: &Map2, gt: &Map2, mask: &Map2) -> Result<DepthMetrics> {
    if pred.width() != gt.width()
        || pred.height() != gt.height()
        || mask.width() != gt.width()
        || mask.height() != gt.height()
    {
        return Err(Error::ShapeMismatch("metric inputs differ in size".into()));
    }
    let mut n = 0usize;
    let (mut d1, mut d2, mut d3) = (0usize, 0usize, 0usize);
    let (mut abs_rel, mut sq_rel, mut se, mut se_log) = (0.0, 0.0, 0.0, 0.0);
    let (mut sum_log, mut sum_log2) = (0.0, 0.0);
    for ((p, g), m) in pred.data().iter().zip(gt.data()).zip(mask.data()) {
        if *m == 0.0 || *g == 0.0 || *p == 0.0 {
            continue;
        }
        if *p < 0.0 || *g < 0.0 {
            return Err(Error::InvalidInput(format!(
                "non-positive depth inside mask (pred {p}, gt {g})"
            )));
        }
        n += 1;
        let ratio = (p / g).max(g / p);
        if ratio < 1.25 {
            d1 += 1;
        }
        if ratio < 1.25 * 1.25 {
            d2 += 1;
        }
        if ratio < 1.25 * 1.25 * 1.25 {
            d3 += 1;
        }
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        se += diff * diff;
        let dl = p.ln() - g.ln();
        se_log += dl * dl;
        sum_log += dl;
        sum_log2 += dl * dl;
    }
    if n == 0 {
        return Err(Error::DegenerateProblem("no valid pixels for metrics".into()));
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        delta_1: 100.0 * d1 as f64 / nf,
        delta_2: 100.0 * d2 as f64 / nf,
        delta_3: 100.0 * d3 as f64 / nf,
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (se / nf).sqrt(),
        rmse_log: (se_log / nf).sqrt(),
        // Variance form of the scale-invariant log error.
        scale_inv: sum_log2 / nf - (sum_log / nf) * (sum_log / nf),
        valid_pixels: n,
    })
}
