//! Tile-binned, depth-sorted alpha compositing and its analytic backward
//! pass.
//!
//! Per pixel, contributors are composited front to back:
//! `C = Σ cᵢ σᵢ Πⱼ<ᵢ (1 − σⱼ)` with `σᵢ = min(αᵢ(t) · exp(−½ dᵀ Σ′⁻¹ d), 0.99)`.
//! A contributor is skipped when the pixel lies outside its 3σ ellipse, and
//! compositing stops before the contributor that would push the
//! transmittance below `1e-4`. The background is black.

mod backward;
mod image;
pub mod reference;
mod tiles;

pub use backward::{backward, render_backward, GradientBuffer};
pub use image::Image;
pub use tiles::{bin_and_sort, depth_order, TileBins, TILE_SIZE};

use crate::camera::{frustum_cull_with, Camera, ProjectedGaussian};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::math::{Real, Vec2};
use crate::model::GaussianCloud;

/// Compositing stops once transmittance would fall below this value.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Upper clamp on a single contributor's σ.
pub const MAX_SIGMA: f64 = 0.99;
/// Half the squared Mahalanobis radius of the 3σ cutoff.
pub const MAX_POWER: f64 = 4.5;
/// Padding in pixels on 3σ bounding boxes, so that box tests are a superset
/// of the exact cutoff test despite rounding.
pub const BOX_SLACK: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenderSettings {
    pub tile_size: usize,
    pub exec: Exec,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            tile_size: TILE_SIZE,
            exec: Exec::default(),
        }
    }
}

impl RenderSettings {
    pub fn sequential() -> Self {
        Self {
            exec: Exec::Sequential,
            ..Self::default()
        }
    }
}

/// Result of compositing one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelResult<T> {
    pub intensity: T,
    /// Transmittance left after the last contributor.
    pub transmittance: T,
    /// Contributors `[0, n)` were visited before termination; the backward
    /// pass walks exactly this prefix in reverse.
    pub n_visited: u32,
}

/// Half Mahalanobis distance `½ dᵀ Σ′⁻¹ d` of a pixel center from a splat.
#[inline(always)]
pub(crate) fn power<T: Real>(p: &ProjectedGaussian<T>, dx: T, dy: T) -> T {
    let half = T::c(0.5);
    half * (p.conic.xx * dx * dx + p.conic.yy * dy * dy) + p.conic.xy * dx * dy
}

/// Composites depth-sorted contributors at a pixel center.
pub fn composite_pixel<T: Real>(sorted: &[ProjectedGaussian<T>], pixel: Vec2<T>) -> PixelResult<T> {
    composite_candidates(sorted, 0..sorted.len(), pixel)
}

/// [`composite_pixel`] restricted to `candidates`, ascending indices into
/// `sorted` that must include every contributor passing the cutoff test.
/// Skipped entries would have been skipped anyway, so the result is
/// bit-identical.
#[inline]
pub(crate) fn composite_candidates<T: Real>(
    sorted: &[ProjectedGaussian<T>],
    candidates: impl Iterator<Item = usize>,
    pixel: Vec2<T>,
) -> PixelResult<T> {
    let max_power = T::c(MAX_POWER);
    let max_sigma = T::c(MAX_SIGMA);
    let min_t = T::c(MIN_TRANSMITTANCE);
    let mut trans = T::one();
    let mut acc = T::zero();
    let mut visited = 0u32;
    for k in candidates {
        let g = &sorted[k];
        let dx = pixel[0] - g.mean[0];
        let dy = pixel[1] - g.mean[1];
        let pw = power(g, dx, dy);
        if pw > max_power {
            continue;
        }
        let sigma = (g.opacity * (-pw).exp()).min(max_sigma);
        let next = trans * (T::one() - sigma);
        if next < min_t {
            break;
        }
        acc += g.intensity * sigma * trans;
        trans = next;
        visited = k as u32 + 1;
    }
    PixelResult {
        intensity: acc,
        transmittance: trans,
        n_visited: visited,
    }
}

/// Whether coordinate `p` lies within a splat's 3σ half-width `extent` of
/// `mean`, padded like the tile binning.
#[inline(always)]
pub(crate) fn within_box<T: Real>(p: T, mean: T, extent: T) -> bool {
    (p - mean).abs() <= extent + T::c(BOX_SLACK)
}

/// Local indices of the splats whose padded box covers pixel row `py`.
pub(crate) fn row_candidates<T: Real>(splats: &[ProjectedGaussian<T>], py: T, out: &mut Vec<u32>) {
    out.clear();
    out.extend(
        splats
            .iter()
            .enumerate()
            .filter(|(_, g)| within_box(py, g.mean[1], g.extent[1]))
            .map(|(k, _)| k as u32),
    );
}

/// Everything the backward pass needs from a forward render.
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    pub image: Image<T>,
    pub t: T,
    /// Culled-in Gaussians, ordered by source index.
    pub projected: Vec<ProjectedGaussian<T>>,
    pub bins: TileBins,
    pub final_transmittance: Vec<T>,
    pub n_visited: Vec<u32>,
}

/// Renders `cloud` from `cam` at time `t`, keeping the state needed by
/// [`backward`].
pub fn forward<T: Real>(
    cloud: &GaussianCloud<T>,
    cam: &Camera,
    t: T,
    settings: RenderSettings,
) -> Result<ForwardPass<T>> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut projected = frustum_cull_with(settings.exec, cloud, cam, t)?;
    // Zero-opacity splats composite to nothing and carry no gradient.
    projected.retain(|p| p.opacity > T::zero());
    let bins = bin_and_sort(&projected, w, h, settings.tile_size);

    let tiles = settings.exec.map(bins.tile_count(), |tile| {
        let list = bins.tile(tile);
        let (x0, y0, x1, y1) = bins.pixel_rect(tile, w, h);
        let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
        if list.is_empty() {
            out.resize(
                (x1 - x0) * (y1 - y0),
                PixelResult { intensity: T::zero(), transmittance: T::one(), n_visited: 0 },
            );
            return out;
        }
        let splats: Vec<ProjectedGaussian<T>> = list.iter().map(|&k| projected[k as usize]).collect();
        let half = T::c(0.5);
        let mut row = Vec::with_capacity(splats.len());
        for y in y0..y1 {
            let py = T::c(y as f64) + half;
            row_candidates(&splats, py, &mut row);
            for x in x0..x1 {
                let px = T::c(x as f64) + half;
                let candidates = row
                    .iter()
                    .map(|&k| k as usize)
                    .filter(|&k| within_box(px, splats[k].mean[0], splats[k].extent[0]));
                out.push(composite_candidates(&splats, candidates, [px, py]));
            }
        }
        out
    });

    let mut image = Image::zeros(w, h);
    let mut final_transmittance = vec![T::one(); w * h];
    let mut n_visited = vec![0u32; w * h];
    for (tile, results) in tiles.into_iter().enumerate() {
        let (x0, y0, x1, _) = bins.pixel_rect(tile, w, h);
        let tw = x1 - x0;
        for (k, r) in results.into_iter().enumerate() {
            let idx = (y0 + k / tw) * w + x0 + k % tw;
            image.data_mut()[idx] = r.intensity;
            final_transmittance[idx] = r.transmittance;
            n_visited[idx] = r.n_visited;
        }
    }
    Ok(ForwardPass {
        image,
        t,
        projected,
        bins,
        final_transmittance,
        n_visited,
    })
}

/// Renders an image of `cloud` from `cam` at time `t` (black background).
pub fn render<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera, t: T) -> Result<Image<T>> {
    render_with(cloud, cam, t, RenderSettings::default())
}

pub fn render_with<T: Real>(cloud: &GaussianCloud<T>, cam: &Camera, t: T, settings: RenderSettings) -> Result<Image<T>> {
    cam.validate()?;
    if !(t >= T::zero() && t <= T::one()) {
        return Err(Error::TimeOutOfRange(t.f64()));
    }
    Ok(forward(cloud, cam, t, settings)?.image)
}
