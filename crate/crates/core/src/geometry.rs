//! Pinhole camera model, SE(3) rigid transforms, and se(3) twists.

use nalgebra::{Matrix3, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};

/// Pinhole intrinsics. Implicitly the K matrix of every warp in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(Error::InvalidArgument(format!(
                "principal point ({cx}, {cy}) outside image {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Intrinsics of the same camera at `1/factor` resolution.
    pub fn scaled_down(&self, factor: usize) -> CameraIntrinsics {
        let f = factor as f64;
        CameraIntrinsics {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: (self.width / factor).max(1),
            height: (self.height / factor).max(1),
        }
    }
}

/// Rigid transform mapping points from a source frame into a target frame.
///
/// `p_target = rotation * p_source + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Deviation of the rotation block from orthonormality.
    pub fn orthonormality_error(&self) -> f64 {
        let e = self.rotation.transpose() * self.rotation - Matrix3::identity();
        e.norm()
    }

    /// Project the rotation back onto SO(3) via SVD if float drift has
    /// accumulated past `tol`.
    pub fn reorthonormalized(&self, tol: f64) -> Pose {
        if self.orthonormality_error() <= tol {
            return *self;
        }
        let svd = self.rotation.svd(true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.set_column(2, &(-u.column(2)));
            r = u * vt;
        }
        Pose {
            rotation: r,
            translation: self.translation,
        }
    }
}

/// se(3) tangent coordinates: rotation part `omega` (radians), translation
/// part `v` (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Self {
            omega: Vector3::zeros(),
            v: Vector3::zeros(),
        }
    }

    pub fn from_vector(xi: Vector6<f64>) -> Self {
        Self {
            omega: Vector3::new(xi[0], xi[1], xi[2]),
            v: Vector3::new(xi[3], xi[4], xi[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.omega[0],
            self.omega[1],
            self.omega[2],
            self.v[0],
            self.v[1],
            self.v[2],
        )
    }

    pub fn norm(&self) -> f64 {
        (self.omega.norm_squared() + self.v.norm_squared()).sqrt()
    }
}

#[inline]
fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0)
}

/// Camera-frame point of `pixel` at metric `depth`.
pub fn backproject(pixel: Vector2<f64>, depth: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "depth must be positive, got {depth}"
        )));
    }
    Ok(Vector3::new(
        (pixel[0] - k.cx) * depth / k.fx,
        (pixel[1] - k.cy) * depth / k.fy,
        depth,
    ))
}

/// Perspective projection; the returned pixel may fall outside image bounds.
pub fn project(point: &Vector3<f64>, k: &CameraIntrinsics) -> Result<(Vector2<f64>, f64)> {
    let z = point[2];
    if !(z > 0.0) {
        return Err(Error::BehindCamera { z });
    }
    Ok((
        Vector2::new(k.fx * point[0] / z + k.cx, k.fy * point[1] / z + k.cy),
        z,
    ))
}

/// `compose(a, b)` applies `b` first, then `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

pub fn invert(a: &Pose) -> Pose {
    let rt = a.rotation.transpose();
    Pose {
        rotation: rt,
        translation: -(rt * a.translation),
    }
}

// Rodrigues below angle ~1e-6 switches to second-order Taylor terms.
const SMALL_ANGLE: f64 = 1e-6;

fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = skew(omega);
    if theta < SMALL_ANGLE {
        Matrix3::identity() + w + 0.5 * w * w
    } else {
        Matrix3::identity() + (theta.sin() / theta) * w
            + ((1.0 - theta.cos()) / (theta * theta)) * (w * w)
    }
}

fn se3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = skew(omega);
    if theta < SMALL_ANGLE {
        Matrix3::identity() + 0.5 * w + (1.0 / 6.0) * (w * w)
    } else {
        let t2 = theta * theta;
        Matrix3::identity() + ((1.0 - theta.cos()) / t2) * w
            + ((theta - theta.sin()) / (t2 * theta)) * (w * w)
    }
}

/// SE(3) exponential map.
pub fn exp(xi: &Twist) -> Pose {
    let r = so3_exp(&xi.omega);
    let j = se3_left_jacobian(&xi.omega);
    Pose {
        rotation: r,
        translation: j * xi.v,
    }
}

/// SE(3) logarithm. Fails for rotation angles at or beyond pi.
pub fn log(t: &Pose) -> Result<Twist> {
    let r = &t.rotation;
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta >= std::f64::consts::PI {
        return Err(Error::OutOfDomain { angle: theta });
    }
    let omega = if theta < SMALL_ANGLE {
        // First-order: R ~ I + [w]
        0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)])
    } else {
        (theta / (2.0 * theta.sin()))
            * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)])
    };
    let j = se3_left_jacobian(&omega);
    let v = j
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("singular SE(3) left Jacobian".into()))?
        * t.translation;
    Ok(Twist { omega, v })
}
