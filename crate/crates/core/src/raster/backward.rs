use super::{forward, power, row_candidates, within_box, ForwardPass, Image, RenderSettings, MAX_POWER, MAX_SIGMA};
use crate::camera::{ewa_jacobian, world_to_camera, Camera, ProjectedGaussian};
use crate::error::{Error, Result};
use crate::math::{cast_mat3, mat23_mul_mat3, mat3_t_vec, sigmoid, Mat3, Real, Sym2};
use crate::model::{interp_stencil, normalize_quaternion, quaternion_backward, quaternion_to_matrix, GaussianCloud, Params};

/// `∂L/∂θ` for every raw parameter of a cloud, plus the screen-space mean
/// gradient and visibility used by densification.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer<T> {
    pub params: Params<T>,
    /// `∂L/∂μ′` in pixels, two values per Gaussian.
    pub screen_mean: Vec<T>,
    /// Gaussians that survived culling in the forward pass.
    pub visible: Vec<bool>,
}

impl<T: Real> GradientBuffer<T> {
    pub fn zeros(len: usize, table_len: usize) -> Self {
        Self {
            params: Params::zeros(len, table_len),
            screen_mean: vec![T::zero(); 2 * len],
            visible: vec![false; len],
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        self.visible
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| v.then_some(i))
            .collect()
    }
}

/// Gradient with respect to one contributor's screen-space quantities.
#[derive(Clone, Copy, Debug, Default)]
struct ScreenGrad<T> {
    mean: [T; 2],
    /// w.r.t. conic `(xx, xy, yy)` as they appear in `½ a dx² + b dx dy + ½ c dy²`.
    conic: [T; 3],
    opacity: T,
    intensity: T,
}

impl<T: Real> ScreenGrad<T> {
    fn add(&mut self, o: &ScreenGrad<T>) {
        self.mean[0] += o.mean[0];
        self.mean[1] += o.mean[1];
        self.conic[0] += o.conic[0];
        self.conic[1] += o.conic[1];
        self.conic[2] += o.conic[2];
        self.opacity += o.opacity;
        self.intensity += o.intensity;
    }
}

/// Walks one pixel's visited contributors back to front. `candidates`
/// descends and covers every contributor below `n_visited` that passes the
/// cutoff test.
#[inline]
fn pixel_backward<T: Real>(
    splats: &[ProjectedGaussian<T>],
    grads: &mut [ScreenGrad<T>],
    candidates: impl Iterator<Item = usize>,
    pixel: [T; 2],
    d_pixel: T,
    final_t: T,
) {
    let max_power = T::c(MAX_POWER);
    let max_sigma = T::c(MAX_SIGMA);
    let mut trans = final_t;
    // Intensity composited behind the current contributor.
    let mut behind = T::zero();
    for k in candidates {
        let g = &splats[k];
        let dx = pixel[0] - g.mean[0];
        let dy = pixel[1] - g.mean[1];
        let pw = power(g, dx, dy);
        if pw > max_power {
            continue;
        }
        let gauss = (-pw).exp();
        let raw = g.opacity * gauss;
        let sigma = raw.min(max_sigma);
        let keep = T::one() - sigma;
        trans = trans / keep;
        let acc = &mut grads[k];
        acc.intensity += d_pixel * sigma * trans;
        let d_sigma = d_pixel * trans * (g.intensity - behind);
        behind = g.intensity * sigma + keep * behind;
        if raw < max_sigma {
            acc.opacity += d_sigma * gauss;
            let d_power = -d_sigma * raw;
            let (a, b, c) = (g.conic.xx, g.conic.xy, g.conic.yy);
            // ∂power/∂mean = -(Σ′⁻¹ d)
            acc.mean[0] -= d_power * (a * dx + b * dy);
            acc.mean[1] -= d_power * (b * dx + c * dy);
            let half = T::c(0.5);
            acc.conic[0] += d_power * half * dx * dx;
            acc.conic[1] += d_power * dx * dy;
            acc.conic[2] += d_power * half * dy * dy;
        }
    }
}

/// Raw-parameter gradient of one Gaussian.
struct RowGrad<T> {
    position: [T; 3],
    rotation: [T; 4],
    log_scale: [T; 3],
    opacity_logit: T,
    table: [(usize, T); 2],
    intensity_logit: T,
}

/// Chain rule from screen-space gradients back to raw parameters.
fn gaussian_backward<T: Real>(
    cloud: &GaussianCloud<T>,
    cam: &Camera,
    t: T,
    proj: &ProjectedGaussian<T>,
    sg: &ScreenGrad<T>,
) -> Result<RowGrad<T>> {
    let i = proj.index as usize;
    let params = cloud.params();

    let c = proj.intensity;
    let intensity_logit = sg.intensity * c * (T::one() - c);

    let base = sigmoid(params.opacity_logit[i]);
    let st = interp_stencil(cloud.table_len(), t)?;
    let table = cloud.table(i);
    let raw_opacity = base + st.w_lo * table[st.lo] + if st.w_hi == T::zero() { T::zero() } else { st.w_hi * table[st.hi] };
    let (opacity_logit, table_grad) = if raw_opacity > T::zero() && raw_opacity < T::one() {
        (
            sg.opacity * base * (T::one() - base),
            [(st.lo, sg.opacity * st.w_lo), (st.hi, sg.opacity * st.w_hi)],
        )
    } else {
        (T::zero(), [(st.lo, T::zero()), (st.hi, T::zero())])
    };

    // conic = Σ′⁻¹ ⇒ ∂L/∂Σ′ = −Σ′⁻¹ Ḡ Σ′⁻¹ with Ḡ the symmetric conic gradient.
    let half = T::c(0.5);
    let g_conic = Sym2::new(sg.conic[0], half * sg.conic[1], sg.conic[2]);
    let d_cov = proj.conic.sandwich(&g_conic);
    let dm = [[-d_cov.xx, -d_cov.xy], [-d_cov.xy, -d_cov.yy]];

    let p_world = cloud.position(i);
    let p_cam = world_to_camera(cam, p_world);
    let w: Mat3<T> = cast_mat3(&cam.rotation_matrix());
    let j = ewa_jacobian(cam, p_cam)?;
    let jw = mat23_mul_mat3(&j, &w);

    let (q, _) = normalize_quaternion(cloud.rotation(i))?;
    let r = quaternion_to_matrix(q);
    let s = cloud.log_scale(i).map(|v| v.exp());
    let mut m3 = r;
    for row in m3.iter_mut() {
        for k in 0..3 {
            row[k] *= s[k];
        }
    }
    let mut sigma = [[T::zero(); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            sigma[a][b] = m3[a][0] * m3[b][0] + m3[a][1] * m3[b][1] + m3[a][2] * m3[b][2];
        }
    }

    // Σ′ = T Σ Tᵀ with T = J W.
    let mut d_sigma = [[T::zero(); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut acc = T::zero();
            for u in 0..2 {
                for v in 0..2 {
                    acc += jw[u][a] * dm[u][v] * jw[v][b];
                }
            }
            d_sigma[a][b] = acc;
        }
    }
    let mut t_sigma = [[T::zero(); 3]; 2];
    for u in 0..2 {
        for b in 0..3 {
            t_sigma[u][b] = jw[u][0] * sigma[0][b] + jw[u][1] * sigma[1][b] + jw[u][2] * sigma[2][b];
        }
    }
    let two = T::c(2.0);
    let mut d_t = [[T::zero(); 3]; 2];
    for u in 0..2 {
        for b in 0..3 {
            d_t[u][b] = two * (dm[u][0] * t_sigma[0][b] + dm[u][1] * t_sigma[1][b]);
        }
    }
    // T = J W ⇒ ∂L/∂J = ∂L/∂T Wᵀ.
    let mut d_j = [[T::zero(); 3]; 2];
    for u in 0..2 {
        for k in 0..3 {
            d_j[u][k] = d_t[u][0] * w[k][0] + d_t[u][1] * w[k][1] + d_t[u][2] * w[k][2];
        }
    }

    let (fx, fy) = (T::c(cam.fx), T::c(cam.fy));
    let [x, y, z] = p_cam;
    let inv_z = T::one() / z;
    let inv_z2 = inv_z * inv_z;
    let inv_z3 = inv_z2 * inv_z;
    let mut d_pcam = [T::zero(); 3];
    d_pcam[0] += d_j[0][2] * (-fx * inv_z2);
    d_pcam[1] += d_j[1][2] * (-fy * inv_z2);
    d_pcam[2] += d_j[0][0] * (-fx * inv_z2)
        + d_j[0][2] * (two * fx * x * inv_z3)
        + d_j[1][1] * (-fy * inv_z2)
        + d_j[1][2] * (two * fy * y * inv_z3);
    // Screen mean μ′ = (fx x/z + cx, fy y/z + cy).
    d_pcam[0] += sg.mean[0] * fx * inv_z;
    d_pcam[1] += sg.mean[1] * fy * inv_z;
    d_pcam[2] -= (sg.mean[0] * fx * x + sg.mean[1] * fy * y) * inv_z2;
    let position = mat3_t_vec(&w, d_pcam);

    // Σ = M Mᵀ with M = R S.
    let mut d_m3 = [[T::zero(); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            d_m3[a][b] = two * (d_sigma[a][0] * m3[0][b] + d_sigma[a][1] * m3[1][b] + d_sigma[a][2] * m3[2][b]);
        }
    }
    let mut d_r = [[T::zero(); 3]; 3];
    let mut log_scale = [T::zero(); 3];
    for b in 0..3 {
        let mut ds = T::zero();
        for a in 0..3 {
            d_r[a][b] = d_m3[a][b] * s[b];
            ds += d_m3[a][b] * r[a][b];
        }
        log_scale[b] = ds * s[b];
    }
    let rotation = quaternion_backward(cloud.rotation(i), &d_r)?;

    Ok(RowGrad {
        position,
        rotation,
        log_scale,
        opacity_logit,
        table: table_grad,
        intensity_logit,
    })
}

/// Backward pass for a previously computed [`ForwardPass`].
pub fn backward<T: Real>(
    cloud: &GaussianCloud<T>,
    cam: &Camera,
    fwd: &ForwardPass<T>,
    d_image: &Image<T>,
    settings: RenderSettings,
) -> Result<GradientBuffer<T>> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    if d_image.width() != w || d_image.height() != h {
        return Err(Error::DimensionMismatch(format!(
            "pixel gradient is {}x{}, camera renders {w}x{h}",
            d_image.width(),
            d_image.height()
        )));
    }
    let bins = &fwd.bins;
    let projected = &fwd.projected;

    let per_tile = settings.exec.map(bins.tile_count(), |tile| {
        let list = bins.tile(tile);
        let mut grads = vec![ScreenGrad::<T>::default(); list.len()];
        if list.is_empty() {
            return grads;
        }
        let splats: Vec<ProjectedGaussian<T>> = list.iter().map(|&k| projected[k as usize]).collect();
        let (x0, y0, x1, y1) = bins.pixel_rect(tile, w, h);
        let half = T::c(0.5);
        let mut row = Vec::with_capacity(splats.len());
        for y in y0..y1 {
            let py = T::c(y as f64) + half;
            row_candidates(&splats, py, &mut row);
            for x in x0..x1 {
                let idx = y * w + x;
                let d_pixel = d_image.data()[idx];
                let n = fwd.n_visited[idx] as usize;
                if d_pixel == T::zero() || n == 0 {
                    continue;
                }
                let px = T::c(x as f64) + half;
                let candidates = row
                    .iter()
                    .rev()
                    .map(|&k| k as usize)
                    .filter(|&k| k < n && within_box(px, splats[k].mean[0], splats[k].extent[0]));
                pixel_backward(&splats, &mut grads, candidates, [px, py], d_pixel, fwd.final_transmittance[idx]);
            }
        }
        grads
    });

    // Fixed merge order: tiles ascending, entries in list order.
    let mut screen = vec![ScreenGrad::<T>::default(); projected.len()];
    for (tile, grads) in per_tile.iter().enumerate() {
        let start = bins.tile_offset(tile);
        let entries = &bins.entries()[start..start + grads.len()];
        for (&k, g) in entries.iter().zip(grads) {
            screen[k as usize].add(g);
        }
    }

    let rows = settings
        .exec
        .map(projected.len(), |k| gaussian_backward(cloud, cam, fwd.t, &projected[k], &screen[k]));

    let mut out = GradientBuffer::zeros(cloud.len(), cloud.table_len());
    let table_len = cloud.table_len();
    for (k, row) in rows.into_iter().enumerate() {
        let row = row?;
        let i = projected[k].index as usize;
        let p = &mut out.params;
        p.position[3 * i..3 * i + 3].copy_from_slice(&row.position);
        p.rotation[4 * i..4 * i + 4].copy_from_slice(&row.rotation);
        p.log_scale[3 * i..3 * i + 3].copy_from_slice(&row.log_scale);
        p.opacity_logit[i] = row.opacity_logit;
        p.intensity_logit[i] = row.intensity_logit;
        for (entry, g) in row.table {
            p.offset_table[i * table_len + entry] += g;
        }
        out.screen_mean[2 * i] = screen[k].mean[0];
        out.screen_mean[2 * i + 1] = screen[k].mean[1];
        out.visible[i] = true;
    }
    Ok(out)
}

/// Renders and back-propagates `d_image` to every parameter of `cloud`.
pub fn render_backward<T: Real>(
    cloud: &GaussianCloud<T>,
    cam: &Camera,
    t: T,
    d_image: &Image<T>,
    settings: RenderSettings,
) -> Result<GradientBuffer<T>> {
    if d_image.width() != cam.width as usize || d_image.height() != cam.height as usize {
        return Err(Error::DimensionMismatch(format!(
            "pixel gradient is {}x{}, camera renders {}x{}",
            d_image.width(),
            d_image.height(),
            cam.width,
            cam.height
        )));
    }
    let fwd = forward(cloud, cam, t, settings)?;
    backward(cloud, cam, &fwd, d_image, settings)
}
