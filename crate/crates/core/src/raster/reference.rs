//! Brute-force reference renderer: no frustum rectangle test, no tiles, one
//! global depth sort, every pixel visits every Gaussian. Used as the
//! oracle for the tiled renderer.

use super::{composite_pixel, depth_order, Image};
use crate::camera::{invert_screen_covariance, project_covariance, world_to_camera, Camera, ProjectedGaussian, CUTOFF_SIGMAS};
use crate::error::Result;
use crate::math::{sigmoid, Real};
use crate::model::{build_covariance, GaussianCloud};

/// Projects every Gaussian inside the depth range with an invertible screen
/// covariance, in source order.
pub fn project_all<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera, t: T) -> Result<Vec<ProjectedGaussian<T>>> {
    let mut out = Vec::new();
    for i in 0..cloud.len() {
        let p_cam = world_to_camera(cam, cloud.position(i));
        if !(p_cam[2] > T::c(cam.near) && p_cam[2] < T::c(cam.far)) {
            continue;
        }
        let sigma = build_covariance(cloud.rotation(i), cloud.log_scale(i))?;
        let cov = project_covariance(&sigma, cam, p_cam)?;
        let Some(conic) = invert_screen_covariance(&cov)? else {
            continue;
        };
        let k = T::c(CUTOFF_SIGMAS);
        out.push(ProjectedGaussian {
            mean: cam.project(p_cam),
            cov,
            conic,
            depth: p_cam[2],
            index: i as u32,
            opacity: cloud.opacity_at(i, t)?,
            intensity: sigmoid(cloud.params().intensity_logit[i]),
            extent: [k * cov.xx.sqrt(), k * cov.yy.sqrt()],
        });
    }
    Ok(out)
}

/// Naive O(N · pixels) render.
pub fn render_naive<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera, t: T) -> Result<Image<T>> {
    let projected = project_all(cloud, cam, t)?;
    let sorted: Vec<ProjectedGaussian<T>> = depth_order(&projected)
        .into_iter()
        .map(|k| projected[k as usize])
        .collect();
    let (w, h) = (cam.width as usize, cam.height as usize);
    let half = T::c(0.5);
    Ok(Image::from_fn(w, h, |x, y| {
        composite_pixel(&sorted, [T::c(x as f64) + half, T::c(y as f64) + half]).intensity
    }))
}
