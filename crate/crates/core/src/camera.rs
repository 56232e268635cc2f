//! Pinhole camera, world-to-camera transform, EWA covariance projection and
//! frustum culling.
//!
//! Camera space follows the usual vision convention: `+x` right, `+y` down,
//! `+z` forward. Pixel `(i, j)` covers `[i, i+1] × [j, j+1]` and is sampled at
//! its center `(i + 0.5, j + 0.5)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::math::{cast3, cast_mat3, congruence23, mat23_mul_mat3, mat3_vec, Mat23, Mat3, Real, Sym2, Vec2, Vec3};
use crate::model::GaussianCloud;

/// Low-pass filter added to every screen-space covariance, in pixels².
pub const DILATION: f64 = 0.3;
/// Screen-space cutoff in standard deviations used for culling and binning.
pub const CUTOFF_SIGMAS: f64 = 3.0;

/// Pinhole intrinsics plus a world-to-camera rigid pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// World-to-camera rotation, row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy)));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidCamera(format!("need 0 < near < far, got near={} far={}", self.near, self.far)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image dimensions must be nonzero".into()));
        }
        let r = self.rotation_matrix();
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (d - expect).abs() > 1e-6 {
                    return Err(Error::InvalidCamera("pose rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Mat3<f64> {
        let r = &self.rotation;
        [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]]
    }

    /// Camera with its optical axis through the image center and a vertical
    /// field of view of `fov_y_deg`, placed at `eye` looking at `target`.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fov_y_deg: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let cross = |a: [f64; 3], b: [f64; 3]| {
            [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
        };
        let norm = |a: [f64; 3]| -> Result<[f64; 3]> {
            let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            if n < 1e-12 {
                return Err(Error::InvalidCamera("degenerate look-at frame".into()));
            }
            Ok([a[0] / n, a[1] / n, a[2] / n])
        };
        let forward = norm(sub(target, eye))?;
        let right = norm(cross(forward, up))?;
        // Image y points down.
        let down = cross(forward, right);
        let rot = [right, down, forward];
        let translation = [
            -(rot[0][0] * eye[0] + rot[0][1] * eye[1] + rot[0][2] * eye[2]),
            -(rot[1][0] * eye[0] + rot[1][1] * eye[1] + rot[1][2] * eye[2]),
            -(rot[2][0] * eye[0] + rot[2][1] * eye[1] + rot[2][2] * eye[2]),
        ];
        let f = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        let cam = Camera {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            rotation: [
                rot[0][0], rot[0][1], rot[0][2], rot[1][0], rot[1][1], rot[1][2], rot[2][0], rot[2][1], rot[2][2],
            ],
            translation,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Orbit camera around `target` with world `+y` as the up axis.
    /// Azimuth 0 looks from `+z`; elevation is measured from the xz-plane.
    pub fn orbit(orbit: &Orbit, width: u32, height: u32) -> Result<Self> {
        if !(orbit.radius > 0.0) {
            return Err(Error::InvalidCamera("orbit radius must be positive".into()));
        }
        if !(orbit.elevation_deg.abs() < 90.0) {
            return Err(Error::InvalidCamera("orbit elevation must be inside (-90, 90) degrees".into()));
        }
        let az = orbit.azimuth_deg.to_radians();
        let el = orbit.elevation_deg.to_radians();
        let tg = orbit.target;
        let eye = [
            tg[0] + orbit.radius * el.cos() * az.sin(),
            tg[1] + orbit.radius * el.sin(),
            tg[2] + orbit.radius * el.cos() * az.cos(),
        ];
        let near = (orbit.radius * 0.05).max(1e-3);
        let far = orbit.radius * 4.0;
        Self::look_at(eye, tg, [0.0, 1.0, 0.0], orbit.fov_y_deg, width, height, near, far)
    }

    #[inline]
    pub fn world_to_camera<T: Real>(&self, p: Vec3<T>) -> Vec3<T> {
        world_to_camera(self, p)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> [f64; 3] {
        let r = self.rotation_matrix();
        let t = self.translation;
        [
            -(r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2]),
            -(r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2]),
            -(r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2]),
        ]
    }

    /// Pixel coordinates of a camera-space point.
    #[inline]
    pub fn project<T: Real>(&self, p_cam: Vec3<T>) -> Vec2<T> {
        let inv_z = T::one() / p_cam[2];
        [
            T::c(self.fx) * p_cam[0] * inv_z + T::c(self.cx),
            T::c(self.fy) * p_cam[1] * inv_z + T::c(self.cy),
        ]
    }

    pub fn with_size(&self, width: u32, height: u32) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }
}

/// Orbit parameterization of a camera pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    pub target: [f64; 3],
    #[serde(default = "default_fov")]
    pub fov_y_deg: f64,
}

fn default_fov() -> f64 {
    35.0
}

/// `R_w p + t_w`.
#[inline]
pub fn world_to_camera<T: Real>(cam: &Camera, p: Vec3<T>) -> Vec3<T> {
    let r: Mat3<T> = cast_mat3(&cam.rotation_matrix());
    let t: Vec3<T> = cast3(cam.translation);
    let v = mat3_vec(&r, p);
    [v[0] + t[0], v[1] + t[1], v[2] + t[2]]
}

/// Jacobian of the pixel projection at a camera-space point.
pub fn ewa_jacobian<T: Real>(cam: &Camera, p_cam: Vec3<T>) -> Result<Mat23<T>> {
    let [x, y, z] = p_cam;
    if !(z.abs() >= T::c(1e-8)) {
        return Err(Error::DegenerateDepth(z.f64().abs()));
    }
    let fx = T::c(cam.fx);
    let fy = T::c(cam.fy);
    let inv_z = T::one() / z;
    let inv_z2 = inv_z * inv_z;
    Ok([
        [fx * inv_z, T::zero(), -fx * x * inv_z2],
        [T::zero(), fy * inv_z, -fy * y * inv_z2],
    ])
}

/// Screen-space covariance `J W Σ Wᵀ Jᵀ + 0.3 I`.
pub fn project_covariance<T: Real>(sigma: &Mat3<T>, cam: &Camera, p_cam: Vec3<T>) -> Result<Sym2<T>> {
    let j = ewa_jacobian(cam, p_cam)?;
    let w: Mat3<T> = cast_mat3(&cam.rotation_matrix());
    let jw = mat23_mul_mat3(&j, &w);
    let m = congruence23(&jw, sigma);
    let d = T::c(DILATION);
    Ok(Sym2::new(m.xx + d, m.xy, m.yy + d))
}

/// Σ′⁻¹, or `None` when finite entries have a non-positive determinant. With
/// the dilation floor that only happens through f32 cancellation on
/// footprints thousands of pixels wide, which are skipped rather than
/// failing the frame. Non-finite entries mean a corrupt model and are an
/// error.
pub fn invert_screen_covariance<T: Real>(cov: &Sym2<T>) -> Result<Option<Sym2<T>>> {
    if !(cov.xx.is_finite() && cov.xy.is_finite() && cov.yy.is_finite()) {
        return Err(Error::SingularCovariance);
    }
    Ok(cov.inverse())
}

/// A Gaussian after projection to the screen at a given time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedGaussian<T> {
    /// Screen mean in pixels.
    pub mean: Vec2<T>,
    /// Dilated screen covariance Σ′.
    pub cov: Sym2<T>,
    /// Σ′⁻¹.
    pub conic: Sym2<T>,
    /// View-space depth.
    pub depth: T,
    /// Index into the source cloud.
    pub index: u32,
    /// Clamped opacity at the render time.
    pub opacity: T,
    pub intensity: T,
    /// Half-widths of the 3σ ellipse's bounding box, in pixels.
    pub extent: Vec2<T>,
}

/// Projects Gaussian `i` at time `t`. Returns `None` when it falls outside
/// the depth range or its 3σ-expanded screen rectangle, or when its screen
/// covariance is not numerically invertible (a huge footprint whose f32
/// determinant has cancelled away).
pub fn project_gaussian<T: Real>(
    cloud: &GaussianCloud<T>,
    i: usize,
    cam: &Camera,
    t: T,
) -> Result<Option<ProjectedGaussian<T>>> {
    let p_cam = world_to_camera(cam, cloud.position(i));
    let depth = p_cam[2];
    if !(depth > T::c(cam.near) && depth < T::c(cam.far)) {
        return Ok(None);
    }
    let mean = cam.project(p_cam);
    let sigma = crate::model::build_covariance(cloud.rotation(i), cloud.log_scale(i))?;
    let cov = project_covariance(&sigma, cam, p_cam)?;
    let k = T::c(CUTOFF_SIGMAS);
    let extent = [k * cov.xx.sqrt(), k * cov.yy.sqrt()];
    let (w, h) = (T::c(cam.width as f64), T::c(cam.height as f64));
    let inside = mean[0] > -extent[0] && mean[0] < w + extent[0] && mean[1] > -extent[1] && mean[1] < h + extent[1];
    if !inside {
        return Ok(None);
    }
    let Some(conic) = invert_screen_covariance(&cov)? else {
        return Ok(None);
    };
    let opacity = cloud.opacity_at(i, t)?;
    let intensity = crate::math::sigmoid(cloud.params().intensity_logit[i]);
    Ok(Some(ProjectedGaussian {
        mean,
        cov,
        conic,
        depth,
        index: i as u32,
        opacity,
        intensity,
        extent,
    }))
}

/// Every Gaussian inside the depth range whose screen mean lies in the image
/// rectangle expanded by 3 screen-space standard deviations, ordered by
/// source index.
pub fn frustum_cull<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera, t: T) -> Result<Vec<ProjectedGaussian<T>>> {
    frustum_cull_with(Exec::default(), cloud, cam, t)
}

pub fn frustum_cull_with<T: Real>(
    exec: Exec,
    cloud: &GaussianCloud<T>,
    cam: &Camera,
    t: T,
) -> Result<Vec<ProjectedGaussian<T>>> {
    if !(t >= T::zero() && t <= T::one()) {
        return Err(Error::TimeOutOfRange(t.f64()));
    }
    let results = exec.map(cloud.len(), |i| project_gaussian(cloud, i, cam, t));
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        if let Some(p) = r? {
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Gaussian;

    pub(crate) fn test_camera(w: u32, h: u32) -> Camera {
        Camera {
            fx: 100.0,
            fy: 100.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
            rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            translation: [0.0; 3],
            near: 0.1,
            far: 100.0,
        }
    }

    #[test]
    fn screen_covariance_inversion() {
        let ok = invert_screen_covariance(&Sym2::new(2.0f32, 0.5, 1.0)).unwrap().unwrap();
        assert!((ok.xx - 1.0 / 1.75).abs() < 1e-6);
        // Finite but cancelled: skipped, not an error.
        assert!(invert_screen_covariance(&Sym2::new(4.0e7f32, 4.0e7, 4.0e7)).unwrap().is_none());
        assert!(matches!(
            invert_screen_covariance(&Sym2::new(f32::NAN, 0.0, 1.0)),
            Err(Error::SingularCovariance)
        ));
    }

    #[test]
    fn world_to_camera_examples() {
        let cam = test_camera(32, 32);
        assert_eq!(cam.world_to_camera([1.0, 2.0, 3.0]), [1.0, 2.0, 3.0]);
        let cam2 = Camera { translation: [0.0, 0.0, -5.0], ..cam.clone() };
        assert_eq!(cam2.world_to_camera([0.0f64; 3]), [0.0, 0.0, -5.0]);
        // 90° yaw about y.
        let yaw = Camera { rotation: [0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0], ..cam };
        let p = yaw.world_to_camera([1.0f64, 0.0, 0.0]);
        assert_eq!(p, [0.0, 0.0, -1.0]);
        let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        assert!((n - 1.0).abs() < 1e-15);
    }

    #[test]
    fn jacobian_examples() {
        let cam = test_camera(32, 32);
        let j = ewa_jacobian(&cam, [0.0f64, 0.0, 1.0]).unwrap();
        assert_eq!(j, [[100.0, 0.0, 0.0], [0.0, 100.0, 0.0]]);
        let j = ewa_jacobian(&cam, [1.0f64, 0.0, 2.0]).unwrap();
        assert_eq!(j, [[50.0, 0.0, -25.0], [0.0, 50.0, 0.0]]);
        assert!(matches!(ewa_jacobian(&cam, [0.0f64, 0.0, 1e-9]), Err(Error::DegenerateDepth(_))));
    }

    #[test]
    fn projected_covariance_examples() {
        let cam = test_camera(32, 32);
        let zero = [[0.0f64; 3]; 3];
        let c = project_covariance(&zero, &cam, [0.3, -0.2, 2.0]).unwrap();
        assert_eq!(c, Sym2::new(0.3, 0.0, 0.3));
        let s2 = 0.04;
        let iso = [[s2, 0.0, 0.0], [0.0, s2, 0.0], [0.0, 0.0, s2]];
        let z = 4.0f64;
        let c = project_covariance(&iso, &cam, [0.0f64, 0.0, z]).unwrap();
        let expect = 100.0 * 100.0 * s2 / (z * z) + 0.3;
        assert!((c.xx - expect).abs() < 1e-12 && (c.yy - expect).abs() < 1e-12 && c.xy.abs() < 1e-12);
    }

    #[test]
    fn cull_behind_and_center() {
        let cam = test_camera(32, 32);
        let behind = Gaussian::<f64>::isotropic([0.0, 0.0, -2.0], 0.1, 0.5, 0.5, 5);
        let center = Gaussian::<f64>::isotropic([0.0, 0.0, 10.0], 0.1, 0.5, 0.5, 5);
        let cloud = GaussianCloud::from_gaussians(5, &[behind, center]);
        let culled = frustum_cull(&cloud, &cam, 0.5).unwrap();
        assert_eq!(culled.len(), 1);
        assert_eq!(culled[0].index, 1);
        assert!((culled[0].mean[0] - 16.0).abs() < 1e-12);
        assert!(frustum_cull(&cloud, &cam, 1.5).is_err());
    }

    #[test]
    fn look_at_points_forward() {
        let cam = Camera::look_at([0.0, 0.0, 5.0], [0.0; 3], [0.0, 1.0, 0.0], 40.0, 64, 64, 0.1, 20.0).unwrap();
        let p = cam.world_to_camera([0.0f64, 0.0, 0.0]);
        assert!((p[2] - 5.0).abs() < 1e-12 && p[0].abs() < 1e-12 && p[1].abs() < 1e-12);
        // World +y appears toward the top of the image (smaller pixel row).
        let up = cam.project(cam.world_to_camera([0.0f64, 1.0, 0.0]));
        assert!(up[1] < 32.0);
        let c = cam.center();
        assert!((c[2] - 5.0).abs() < 1e-12);
    }
}
