//! Splat parameterization and the canonical / world / camera mappings.
//!
//! A splat is a flat Gaussian on the plane spanned by the first two columns
//! `t_u`, `t_v` of its rotation matrix. A point on the plane is
//! `P(u, v) = mean + s_u t_u u + s_v t_v v`; rendering inverts this map per
//! pixel to find the canonical coordinates `(u, v)` of the ray hit.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical cutoff radius: splats contribute nothing beyond this.
pub const R_CUT: f64 = 3.0;

/// Determinant magnitude below which a ray transform is treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;

/// Number of scalar parameters in a splat's base encoding.
pub const BASE_PARAMS: usize = 13;

/// Offsets of the parameter groups inside the flat base encoding.
pub mod param {
    use std::ops::Range;
    pub const MEAN: Range<usize> = 0..3;
    pub const ROTATION: Range<usize> = 3..7;
    pub const LOG_SCALE: Range<usize> = 7..9;
    pub const OPACITY: usize = 9;
    pub const COLOR: Range<usize> = 10..13;
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Spatial and appearance parameters of one 2D Gaussian.
///
/// `rotation` is a quaternion in `(w, x, y, z)` order. It is kept unit length
/// by [`SplatGeometry::normalize_rotation`], and normalized again at use so
/// unnormalized perturbations are still meaningful.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatGeometry {
    pub mean: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub log_scale: Vector2<f64>,
    pub opacity_logit: f64,
    pub base_color: Vector3<f64>,
}

impl SplatGeometry {
    pub fn new(
        mean: Vector3<f64>,
        rotation: Vector4<f64>,
        scale: Vector2<f64>,
        opacity: f64,
        base_color: Vector3<f64>,
    ) -> Self {
        let mut g = Self {
            mean,
            rotation,
            log_scale: scale.map(f64::ln),
            opacity_logit: logit(opacity),
            base_color,
        };
        g.normalize_rotation();
        g
    }

    pub fn scale(&self) -> Vector2<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn unit_quaternion(&self) -> Vector4<f64> {
        let n = self.rotation.norm();
        if n > 0.0 {
            self.rotation / n
        } else {
            Vector4::new(1.0, 0.0, 0.0, 0.0)
        }
    }

    pub fn normalize_rotation(&mut self) {
        self.rotation = self.unit_quaternion();
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&self.unit_quaternion())
    }

    /// Orthonormal frame `(t_u, t_v, n)`.
    pub fn frame(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let r = self.rotation_matrix();
        (
            r.column(0).into_owned(),
            r.column(1).into_owned(),
            r.column(2).into_owned(),
        )
    }

    /// World point `mean + s_u t_u u + s_v t_v v`.
    pub fn point(&self, u: f64, v: f64) -> Vector3<f64> {
        let (tu, tv, _) = self.frame();
        let s = self.scale();
        self.mean + tu * (s.x * u) + tv * (s.y * v)
    }

    pub fn params(&self) -> [f64; BASE_PARAMS] {
        let mut p = [0.0; BASE_PARAMS];
        p[param::MEAN].copy_from_slice(self.mean.as_slice());
        p[param::ROTATION].copy_from_slice(self.rotation.as_slice());
        p[param::LOG_SCALE].copy_from_slice(self.log_scale.as_slice());
        p[param::OPACITY] = self.opacity_logit;
        p[param::COLOR].copy_from_slice(self.base_color.as_slice());
        p
    }

    pub fn set_params(&mut self, p: &[f64; BASE_PARAMS]) {
        self.mean = Vector3::from_column_slice(&p[param::MEAN]);
        self.rotation = Vector4::from_column_slice(&p[param::ROTATION]);
        self.log_scale = Vector2::from_column_slice(&p[param::LOG_SCALE]);
        self.opacity_logit = p[param::OPACITY];
        self.base_color = Vector3::from_column_slice(&p[param::COLOR]);
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pull gradients on the first two rotation columns back to the raw
/// (unnormalized) quaternion `q`.
pub fn quat_frame_adjoint(q: &Vector4<f64>, d_tu: &Vector3<f64>, d_tv: &Vector3<f64>) -> Vector4<f64> {
    let norm = q.norm();
    let qn = q / norm;
    let (w, x, y, z) = (qn[0], qn[1], qn[2], qn[3]);
    // d col0 / d(w, x, y, z)
    let c0 = [
        Vector3::new(0.0, 2.0 * z, -2.0 * y),
        Vector3::new(0.0, 2.0 * y, 2.0 * z),
        Vector3::new(-4.0 * y, 2.0 * x, -2.0 * w),
        Vector3::new(-4.0 * z, 2.0 * w, 2.0 * x),
    ];
    // d col1 / d(w, x, y, z)
    let c1 = [
        Vector3::new(-2.0 * z, 0.0, 2.0 * x),
        Vector3::new(2.0 * y, -4.0 * x, 2.0 * w),
        Vector3::new(2.0 * x, 0.0, 2.0 * z),
        Vector3::new(-2.0 * w, -4.0 * z, 2.0 * y),
    ];
    let d_qn = Vector4::from_fn(|k, _| c0[k].dot(d_tu) + c1[k].dot(d_tv));
    // through q -> q / |q|
    (d_qn - qn * qn.dot(&d_qn)) / norm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraMode {
    Perspective,
    /// Orthographic: pixel rays run along camera +z from the image plane.
    Planar,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub world_to_camera: Matrix4<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub mode: CameraMode,
}

impl Camera {
    pub fn new(
        world_to_camera: Matrix4<f64>,
        focal: (f64, f64),
        principal: (f64, f64),
        resolution: (usize, usize),
        mode: CameraMode,
    ) -> Result<Self> {
        let cam = Self {
            world_to_camera,
            fx: focal.0,
            fy: focal.1,
            cx: principal.0,
            cy: principal.1,
            width: resolution.0,
            height: resolution.1,
            mode,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Planar camera with identity pose whose pixel grid maps one world unit
    /// to one pixel, origin at the image corner.
    pub fn planar(width: usize, height: usize) -> Self {
        Self {
            world_to_camera: Matrix4::identity(),
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width,
            height,
            mode: CameraMode::Planar,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!("focal must be positive, got ({}, {})", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("resolution must be at least 1x1".into()));
        }
        let w = &self.world_to_camera;
        if (w.fixed_view::<1, 4>(3, 0) - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)).norm() > 1e-9 {
            return Err(Error::InvalidCamera("bottom row of world_to_camera must be (0,0,0,1)".into()));
        }
        let r = self.rotation();
        let ortho = (r.transpose() * r - Matrix3::identity()).norm();
        if ortho > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidCamera("world_to_camera rotation block is not a proper rotation".into()));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Ray coordinates for pixel `(px, py)`, sampled at the pixel center.
    ///
    /// Perspective: normalized ray `(r_x, r_y)` with direction `(r_x, r_y, 1)`.
    /// Planar: the image-plane point `(x, y)` the orthographic ray starts from.
    #[inline]
    pub fn pixel_ray(&self, px: usize, py: usize) -> Vector2<f64> {
        Vector2::new(
            (px as f64 + 0.5 - self.cx) / self.fx,
            (py as f64 + 0.5 - self.cy) / self.fy,
        )
    }

    /// Continuous pixel coordinates of a camera-space point, or `None` if it
    /// is not in front of a perspective camera.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        match self.mode {
            CameraMode::Perspective => {
                if p.z <= 1e-9 {
                    None
                } else {
                    Some(Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
                }
            }
            CameraMode::Planar => Some(Vector2::new(self.fx * p.x + self.cx, self.fy * p.y + self.cy)),
        }
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * world + self.translation()
    }
}

/// Canonical coordinates of a ray hit together with its camera depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CanonicalPoint {
    pub u: Vector2<f64>,
    pub depth: f64,
}

impl CanonicalPoint {
    #[inline]
    pub fn radius_sq(&self) -> f64 {
        self.u.norm_squared()
    }
}

/// Homogeneous canonical-to-world transform with columns
/// `[s_u t_u | s_v t_v | 0 | mean]`.
pub fn build_homogeneous_transform(g: &SplatGeometry) -> Matrix4<f64> {
    let (tu, tv, _) = g.frame();
    let s = g.scale();
    let mut h = Matrix4::zeros();
    h.fixed_view_mut::<3, 1>(0, 0).copy_from(&(tu * s.x));
    h.fixed_view_mut::<3, 1>(0, 1).copy_from(&(tv * s.y));
    h.fixed_view_mut::<3, 1>(0, 3).copy_from(&g.mean);
    h[(3, 3)] = 1.0;
    h
}

/// Per-splat inverse map from pixel rays to canonical coordinates.
///
/// The 4x4 product `W H` always has a zero third column, so the inverse is
/// taken of its non-degenerate 3x3 block `A = [a | b | mean_c]` (camera-space
/// columns 0, 1, 3). For perspective rays `A (u, v, 1) = z (r_x, r_y, 1)`,
/// hence `(u, v, 1) = z A^-1 (r_x, r_y, 1)`. Planar rays have a fixed
/// direction, and the solved system is `[a | b | -e_z] (u, v, z) = o - mean_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct RayTransform {
    pub matrix: Matrix3<f64>,
    pub mode: CameraMode,
    /// Camera-space splat center (used by the planar solve).
    pub center: Vector3<f64>,
}

pub fn ray_transform(h: &Matrix4<f64>, w: &Matrix4<f64>, mode: CameraMode) -> Result<RayTransform> {
    let wh = w * h;
    let a = wh.fixed_view::<3, 1>(0, 0).into_owned();
    let b = wh.fixed_view::<3, 1>(0, 1).into_owned();
    let center = wh.fixed_view::<3, 1>(0, 3).into_owned();
    let third = match mode {
        CameraMode::Perspective => center,
        CameraMode::Planar => -Vector3::z(),
    };
    let k = Matrix3::from_columns(&[a, b, third]);
    let det = k.determinant();
    if !(det.abs() >= SINGULAR_DET) {
        return Err(Error::SingularTransform { det });
    }
    let matrix = k.try_inverse().ok_or(Error::SingularTransform { det })?;
    Ok(RayTransform { matrix, mode, center })
}

impl RayTransform {
    pub fn for_splat(g: &SplatGeometry, camera: &Camera) -> Result<Self> {
        ray_transform(&build_homogeneous_transform(g), &camera.world_to_camera, camera.mode)
    }

    /// Intersect the ray of [`Camera::pixel_ray`] with the splat plane.
    #[inline]
    pub fn intersect(&self, ray: &Vector2<f64>) -> Result<CanonicalPoint> {
        match self.mode {
            CameraMode::Perspective => {
                let q = self.matrix * Vector3::new(ray.x, ray.y, 1.0);
                if !(q.z.abs() > 1e-300) {
                    return Err(Error::NoIntersection);
                }
                let z = 1.0 / q.z;
                if !(z > 0.0) || !z.is_finite() {
                    return Err(Error::NoIntersection);
                }
                Ok(CanonicalPoint { u: Vector2::new(q.x * z, q.y * z), depth: z })
            }
            CameraMode::Planar => {
                let rhs = Vector3::new(ray.x - self.center.x, ray.y - self.center.y, -self.center.z);
                let q = self.matrix * rhs;
                if !(q.z > 0.0) {
                    return Err(Error::NoIntersection);
                }
                Ok(CanonicalPoint { u: Vector2::new(q.x, q.y), depth: q.z })
            }
        }
    }
}

/// Free-standing form of [`RayTransform::intersect`].
pub fn intersect(m: &RayTransform, ray: &Vector2<f64>) -> Result<CanonicalPoint> {
    m.intersect(ray)
}

/// Standard Gaussian `exp(-(u^2 + v^2) / 2)`, zero beyond [`R_CUT`].
#[inline]
pub fn gaussian_weight(u: &Vector2<f64>) -> f64 {
    let r2 = u.norm_squared();
    if r2 > R_CUT * R_CUT {
        0.0
    } else {
        (-0.5 * r2).exp()
    }
}
