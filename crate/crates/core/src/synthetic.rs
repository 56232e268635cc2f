//! Seeded random scenes for tests, benchmarks and gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::math::{logit, Real};
use crate::model::{Gaussian, GaussianCloud};

/// Camera at the origin looking down `+z` with a 90° horizontal field of
/// view (`fx = width / 2`).
pub fn frontal_camera(width: u32, height: u32) -> Camera {
    Camera {
        fx: width as f64 / 2.0,
        fy: width as f64 / 2.0,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
        rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        translation: [0.0; 3],
        near: 0.2,
        far: 50.0,
    }
}

/// Knobs for [`random_scene`].
#[derive(Clone, Debug)]
pub struct SceneParams {
    pub count: usize,
    pub table_len: usize,
    pub depth: (f64, f64),
    /// Range of per-axis standard deviations (world units).
    pub scale: (f64, f64),
    pub opacity: (f64, f64),
    /// Offset table entries are drawn from `[-table_amp, table_amp]`.
    pub table_amp: f64,
    /// Fraction of the view frustum half-width used for lateral placement.
    pub spread: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            count: 20,
            table_len: 5,
            depth: (2.0, 5.0),
            scale: (0.08, 0.4),
            opacity: (0.15, 0.85),
            table_amp: 0.1,
            spread: 0.9,
        }
    }
}

/// Random anisotropic Gaussians placed in front of [`frontal_camera`].
pub fn random_scene<T: Real>(seed: u64, params: &SceneParams) -> GaussianCloud<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = GaussianCloud::new(params.table_len);
    for _ in 0..params.count {
        let z = rng.gen_range(params.depth.0..params.depth.1);
        let x = rng.gen_range(-params.spread..params.spread) * z;
        let y = rng.gen_range(-params.spread..params.spread) * z;
        let q: [f64; 4] = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let q = if q.iter().map(|v| v * v).sum::<f64>() < 1e-3 { [1.0, 0.0, 0.0, 0.0] } else { q };
        let ls = [(); 3].map(|_| rng.gen_range(params.scale.0.ln()..params.scale.1.ln()));
        let op = rng.gen_range(params.opacity.0..params.opacity.1);
        let table = (0..params.table_len)
            .map(|_| T::c(rng.gen_range(-params.table_amp..=params.table_amp)))
            .collect();
        let c = rng.gen_range(0.1..0.95);
        cloud.push(Gaussian {
            position: [T::c(x), T::c(y), T::c(z)],
            rotation: q.map(T::c),
            log_scale: ls.map(T::c),
            opacity_logit: T::c(logit(op)),
            offset_table: table,
            intensity_logit: T::c(logit(c)),
        });
    }
    cloud
}
