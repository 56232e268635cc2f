//! Synthetic vessel phantom: a branching tube tree whose segments fill and
//! wash out with a gamma-variate time-density curve.
//!
//! Two image generators are provided. Oracle mode builds a Gaussian cloud
//! that samples the tree and renders it with the engine's rasterizer.
//! Analytic mode composites the same samples with closed-form isotropic
//! footprints and the exact (not knot-interpolated) curve, in `f64`, without
//! tiles, screen cutoffs or early termination.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Orbit, DILATION};
use crate::dataset::{Dataset, Frame, Split};
use crate::error::{Error, IoContext, Result};
use crate::exec::Exec;
use crate::imageio::BitDepth;
use crate::math::{logit, sigmoid, Real};
use crate::model::{knot_time, Gaussian, GaussianCloud};
use crate::raster::{render_with, Image, RenderSettings};

/// Gamma-variate bolus curve, normalized so the peak value `amplitude` is
/// reached at `t0 + a / b`.
pub fn gamma_variate(t: f64, t0: f64, a: f64, b: f64, amplitude: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(amplitude >= 0.0) {
        return Err(Error::InvalidPhantom(format!(
            "gamma variate needs a > 0, b > 0, A >= 0 (got a={a}, b={b}, A={amplitude})"
        )));
    }
    if t < t0 {
        return Ok(0.0);
    }
    let u = (t - t0) * b / a;
    Ok(amplitude * u.powf(a) * (a * (1.0 - u)).exp())
}

/// Parameters of one segment's time-density curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tdc {
    pub t0: f64,
    pub a: f64,
    pub b: f64,
    pub amplitude: f64,
}

impl Tdc {
    pub fn eval(&self, t: f64) -> f64 {
        gamma_variate(t, self.t0, self.a, self.b, self.amplitude).unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub radius: f64,
    /// Index of the parent segment; `None` for the root.
    #[serde(default)]
    pub parent: Option<usize>,
    pub tdc: Tdc,
}

impl Segment {
    pub fn length(&self) -> f64 {
        (0..3).map(|k| (self.end[k] - self.start[k]).powi(2)).sum::<f64>().sqrt()
    }
}

/// Image generator for [`generate_dataset`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    #[default]
    Oracle,
    Analytic,
}

impl std::str::FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "analytic" => Ok(Self::Analytic),
            other => Err(Error::InvalidPhantom(format!("unknown render mode {other:?}"))),
        }
    }
}

/// Camera path and image settings for a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Acquisition {
    pub views: usize,
    pub test_views: usize,
    pub width: u32,
    pub height: u32,
    pub table_len: usize,
    pub mode: RenderMode,
    /// Orbit sweep in degrees, starting at `azimuth_start`.
    pub azimuth_start: f64,
    pub azimuth_span: f64,
    pub elevation: f64,
    pub radius: f64,
    pub fov_y_deg: f64,
}

impl Default for Acquisition {
    fn default() -> Self {
        Self {
            views: 50,
            test_views: 20,
            width: 128,
            height: 128,
            table_len: 5,
            mode: RenderMode::Oracle,
            azimuth_start: 0.0,
            azimuth_span: 180.0,
            elevation: 15.0,
            radius: 4.5,
            fov_y_deg: 35.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub seed: u64,
    /// Gaussians per unit segment length in oracle mode.
    pub density: f64,
    /// Gaussian standard deviation as a fraction of the tube radius.
    #[serde(default = "default_sigma_ratio")]
    pub sigma_ratio: f64,
    /// Base opacity `α′` of every oracle Gaussian.
    #[serde(default = "default_base_opacity")]
    pub base_opacity: f64,
    /// Emitted intensity of every oracle Gaussian.
    #[serde(default = "default_intensity")]
    pub intensity: f64,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub acquisition: Acquisition,
}

fn default_sigma_ratio() -> f64 {
    0.5
}

fn default_base_opacity() -> f64 {
    0.05
}

fn default_intensity() -> f64 {
    0.8
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPhantom(m));
        if self.segments.is_empty() {
            return bad("phantom has no segments".into());
        }
        if !(self.density > 0.0) || !(self.sigma_ratio > 0.0) {
            return bad("density and sigma_ratio must be positive".into());
        }
        if !(self.base_opacity > 0.0 && self.base_opacity < 1.0) || !(0.0..=1.0).contains(&self.intensity) {
            return bad("base_opacity must lie in (0, 1) and intensity in [0, 1]".into());
        }
        let mut roots = 0;
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.radius > 0.0) {
                return bad(format!("segment {i} has non-positive radius {}", s.radius));
            }
            if !(s.tdc.amplitude >= 0.0 && s.tdc.amplitude <= 1.0) {
                return bad(format!("segment {i} amplitude must lie in [0, 1]"));
            }
            gamma_variate(0.0, s.tdc.t0, s.tdc.a, s.tdc.b, s.tdc.amplitude)?;
            match s.parent {
                None => roots += 1,
                // Parents precede children, which rules out cycles.
                Some(p) if p >= i => return bad(format!("segment {i} has parent {p}, which does not precede it")),
                Some(_) => {}
            }
        }
        if roots != 1 {
            return bad(format!("tree must have exactly one root, found {roots}"));
        }
        let a = &self.acquisition;
        if a.views == 0 || a.test_views >= a.views || a.table_len == 0 || a.width == 0 || a.height == 0 {
            return bad("acquisition needs views > test_views, table_len >= 1 and nonzero size".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::InvalidPhantom(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidPhantom(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).with_path(path)?)
    }

    /// Sample centers along every segment, with the owning segment index.
    pub fn samples(&self) -> Vec<(usize, [f64; 3])> {
        let mut out = Vec::new();
        for (si, s) in self.segments.iter().enumerate() {
            let count = (self.density * s.length()).round() as usize;
            for k in 0..count {
                let f = (k as f64 + 0.5) / count as f64;
                out.push((si, [0, 1, 2].map(|j| s.start[j] + f * (s.end[j] - s.start[j]))));
            }
        }
        out
    }

    /// Axis-aligned box around all tubes, inflated by 10% of its size.
    pub fn bounds(&self) -> [[f64; 3]; 2] {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for s in &self.segments {
            for p in [s.start, s.end] {
                for k in 0..3 {
                    lo[k] = lo[k].min(p[k] - s.radius);
                    hi[k] = hi[k].max(p[k] + s.radius);
                }
            }
        }
        for k in 0..3 {
            let pad = 0.05 * (hi[k] - lo[k]);
            lo[k] -= pad;
            hi[k] += pad;
        }
        [lo, hi]
    }

    pub fn center(&self) -> [f64; 3] {
        let [lo, hi] = self.bounds();
        [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]))
    }
}

/// The default phantom: a root vessel followed by three generations of
/// bifurcations (15 segments). The contrast front reaches deeper
/// generations later.
pub fn default_phantom(seed: u64) -> PhantomSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = vec![Segment {
        start: [0.0, -1.0, 0.0],
        end: [0.0, -0.35, 0.0],
        radius: 0.06,
        parent: None,
        tdc: Tdc {
            t0: 0.0,
            a: 2.0,
            b: 2.0 / 0.3,
            amplitude: 0.35,
        },
    }];
    // (segment index, unit direction)
    let mut frontier = vec![(0usize, [0.0, 1.0, 0.0])];
    let mut length = 0.55;
    for generation in 1..=3 {
        let mut next = Vec::new();
        for &(parent, dir) in &frontier {
            let p = segments[parent].clone();
            let spin: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            for side in [-1.0, 1.0] {
                let spread = rng.gen_range(0.45..0.7) * side;
                let d = branch_direction(dir, spread, spin);
                let jitter: f64 = rng.gen_range(0.85..1.15);
                let end = [0, 1, 2].map(|k| p.end[k] + length * jitter * d[k]);
                let gen = generation as f64;
                segments.push(Segment {
                    start: p.end,
                    end,
                    radius: p.radius * 0.78,
                    parent: Some(parent),
                    tdc: Tdc {
                        t0: 0.1 * gen + rng.gen_range(0.0..0.04),
                        a: 2.0,
                        b: 2.0 / rng.gen_range(0.25..0.35),
                        amplitude: rng.gen_range(0.3..0.4),
                    },
                });
                next.push((segments.len() - 1, d));
            }
        }
        frontier = next;
        length *= 0.75;
    }
    PhantomSpec {
        seed,
        density: 150.0,
        sigma_ratio: default_sigma_ratio(),
        base_opacity: default_base_opacity(),
        intensity: default_intensity(),
        segments,
        acquisition: Acquisition::default(),
    }
}

/// Rotates `dir` by `angle` radians inside the plane spanned by `dir` and a
/// perpendicular chosen by `spin` around `dir`.
fn branch_direction(dir: [f64; 3], angle: f64, spin: f64) -> [f64; 3] {
    let helper = if dir[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] };
    let cross = |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let unit = |a: [f64; 3]| {
        let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        a.map(|v| v / n)
    };
    let u = unit(cross(dir, helper));
    let v = cross(dir, u);
    let perp = [0, 1, 2].map(|k| spin.cos() * u[k] + spin.sin() * v[k]);
    unit([0, 1, 2].map(|k| angle.cos() * dir[k] + angle.sin() * perp[k]))
}

/// Ground-truth Gaussian cloud: one isotropic Gaussian per sample, with the
/// offset table chosen so that the opacity at every knot equals the
/// segment's curve there.
pub fn build_oracle<T: Real>(spec: &PhantomSpec, table_len: usize) -> Result<GaussianCloud<T>> {
    spec.validate()?;
    if table_len == 0 {
        return Err(Error::EmptyTable);
    }
    let opacity_logit = T::c(logit(spec.base_opacity));
    let base = sigmoid(opacity_logit);
    let intensity_logit = T::c(logit(spec.intensity));
    let mut cloud = GaussianCloud::new(table_len);
    for (si, p) in spec.samples() {
        let seg = &spec.segments[si];
        let table = (0..table_len)
            .map(|k| T::c(seg.tdc.eval(knot_time::<f64>(k, table_len))) - base)
            .collect();
        let ls = T::c((seg.radius * spec.sigma_ratio).ln());
        cloud.push(Gaussian {
            position: p.map(T::c),
            rotation: [T::one(), T::zero(), T::zero(), T::zero()],
            log_scale: [ls; 3],
            opacity_logit,
            offset_table: table,
            intensity_logit,
        });
    }
    Ok(cloud)
}

/// Evenly spaced cameras on the acquisition orbit with times rising
/// linearly from 0 to 1 along it.
pub fn acquisition_cameras(spec: &PhantomSpec) -> Result<Vec<(Camera, f64)>> {
    let a = &spec.acquisition;
    let target = spec.center();
    (0..a.views)
        .map(|v| {
            let f = if a.views > 1 { v as f64 / (a.views - 1) as f64 } else { 0.0 };
            let orbit = Orbit {
                azimuth_deg: a.azimuth_start + f * a.azimuth_span,
                elevation_deg: a.elevation,
                radius: a.radius,
                target,
                fov_y_deg: a.fov_y_deg,
            };
            Ok((Camera::orbit(&orbit, a.width, a.height)?, f))
        })
        .collect()
}

/// Interleaved split: `test` of the `views` indices, spread evenly, are
/// held out.
pub fn interleaved_split(views: usize, test: usize) -> Vec<Split> {
    (0..views)
        .map(|v| {
            if (v + 1) * test / views > v * test / views {
                Split::Test
            } else {
                Split::Train
            }
        })
        .collect()
}

/// Reference renderer for analytic mode.
pub fn render_analytic(spec: &PhantomSpec, cam: &Camera, t: f64) -> Result<Image<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    cam.validate()?;
    let r = cam.rotation_matrix();
    struct Footprint {
        depth: f64,
        mean: [f64; 2],
        inv: [f64; 3],
        alpha: f64,
        bbox: [usize; 4],
    }
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut prims = Vec::new();
    for (si, p) in spec.samples() {
        let seg = &spec.segments[si];
        let alpha = seg.tdc.eval(t);
        if alpha <= 0.0 {
            continue;
        }
        let pc: [f64; 3] = [0, 1, 2].map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + cam.translation[i]);
        let z = pc[2];
        if !(z > cam.near && z < cam.far) {
            continue;
        }
        // Σ′ = s² J Jᵀ + dilation for an isotropic world covariance.
        let s2 = (seg.radius * spec.sigma_ratio).powi(2);
        let (j00, j02) = (cam.fx / z, -cam.fx * pc[0] / (z * z));
        let (j11, j12) = (cam.fy / z, -cam.fy * pc[1] / (z * z));
        let a = s2 * (j00 * j00 + j02 * j02) + DILATION;
        let b = s2 * (j02 * j12);
        let c = s2 * (j11 * j11 + j12 * j12) + DILATION;
        let det = a * c - b * b;
        let mean = [cam.fx * pc[0] / z + cam.cx, cam.fy * pc[1] / z + cam.cy];
        // Footprints beyond 6σ contribute below 1e-7 of their peak.
        let (ex, ey) = (6.0 * a.sqrt(), 6.0 * c.sqrt());
        let x0 = (mean[0] - ex).floor().max(0.0) as usize;
        let y0 = (mean[1] - ey).floor().max(0.0) as usize;
        let x1 = ((mean[0] + ex).ceil().max(0.0) as usize).min(w);
        let y1 = ((mean[1] + ey).ceil().max(0.0) as usize).min(h);
        if x0 >= x1 || y0 >= y1 {
            continue;
        }
        prims.push(Footprint {
            depth: z,
            mean,
            inv: [c / det, -b / det, a / det],
            alpha: alpha.min(1.0),
            bbox: [x0, y0, x1, y1],
        });
    }
    prims.sort_by(|p, q| p.depth.total_cmp(&q.depth));
    let mut color = vec![0.0; w * h];
    let mut trans = vec![1.0; w * h];
    let c = spec.intensity;
    for f in &prims {
        let [x0, y0, x1, y1] = f.bbox;
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = x as f64 + 0.5 - f.mean[0];
                let dy = y as f64 + 0.5 - f.mean[1];
                let power = 0.5 * (f.inv[0] * dx * dx + f.inv[2] * dy * dy) + f.inv[1] * dx * dy;
                let sigma = f.alpha * (-power).exp();
                let q = y * w + x;
                color[q] += c * sigma * trans[q];
                trans[q] *= 1.0 - sigma;
            }
        }
    }
    Image::from_vec(w, h, color)
}

/// Renders every acquisition view in the requested mode.
pub fn generate_dataset(spec: &PhantomSpec, mode: RenderMode, exec: Exec) -> Result<Dataset> {
    spec.validate()?;
    let a = &spec.acquisition;
    let views = acquisition_cameras(spec)?;
    let splits = interleaved_split(a.views, a.test_views);
    let oracle: GaussianCloud<f32> = build_oracle(spec, a.table_len)?;
    let settings = RenderSettings { exec: Exec::Sequential, ..RenderSettings::default() };
    let images = exec.map(views.len(), |v| -> Result<Image<f32>> {
        let (cam, t) = &views[v];
        match mode {
            RenderMode::Oracle => render_with(&oracle, cam, *t as f32, settings),
            RenderMode::Analytic => Ok(render_analytic(spec, cam, *t)?.cast()),
        }
    });
    let mut frames = Vec::with_capacity(views.len());
    for (v, ((cam, t), img)) in views.into_iter().zip(images).enumerate() {
        frames.push(Frame {
            image: img?,
            camera: cam,
            t,
            view: v,
            split: splits[v],
        });
    }
    let mut d = Dataset::new(frames)?;
    d.bounds = Some(spec.bounds());
    Ok(d)
}

/// Generates and writes a dataset (16-bit PNG) plus a copy of the phantom description.
pub fn write_dataset(spec: &PhantomSpec, mode: RenderMode, exec: Exec, dir: &Path) -> Result<Dataset> {
    let d = generate_dataset(spec, mode, exec)?;
    d.save(dir, BitDepth::Sixteen)?;
    let spec_path = dir.join("phantom.toml");
    std::fs::write(&spec_path, spec.to_toml()?).with_path(&spec_path)?;
    Ok(d)
}
