//! Training losses, their gradients, and the PSNR / SSIM metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Real;
use crate::model::Params;
use crate::raster::Image;

/// SSIM window edge length.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
/// PSNR reported for (numerically) identical images.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub ssim: f64,
    pub smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ssim: 0.1,
            smooth: 0.0043,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.ssim >= 0.0 && self.smooth >= 0.0) {
            return Err(Error::InvalidConfig(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Mean absolute difference and its gradient `sign(I − Î) / P`.
pub fn recon_loss<T: Real>(rendered: &Image<T>, target: &Image<T>) -> Result<(T, Image<T>)> {
    rendered.check_same_size(target)?;
    let n = rendered.len().max(1);
    let inv = T::one() / T::c(n as f64);
    let mut sum = T::zero();
    let mut grad = Image::zeros(rendered.width(), rendered.height());
    for ((g, &a), &b) in grad.data_mut().iter_mut().zip(rendered.data()).zip(target.data()) {
        let d = a - b;
        sum += d.abs();
        *g = if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        };
    }
    Ok((sum * inv, grad))
}

fn gaussian_window<T: Real>() -> [T; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let mut w = [T::zero(); SSIM_WINDOW];
    for (o, r) in w.iter_mut().zip(raw) {
        *o = T::c(r / total);
    }
    w
}

/// Separable "valid" convolution: output is `(w − 10) × (h − 10)`.
fn blur_valid<T: Real>(src: &[T], w: usize, h: usize, k: &[T; SSIM_WINDOW]) -> Vec<T> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut horiz = vec![T::zero(); ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut acc = T::zero();
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * row[x + i];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for y in 0..oh {
        for (i, &kv) in k.iter().enumerate() {
            let src_row = &horiz[(y + i) * ow..(y + i + 1) * ow];
            let dst = &mut out[y * ow..(y + 1) * ow];
            for (d, &s) in dst.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Adjoint of [`blur_valid`]: scatters a `(w − 10) × (h − 10)` map back to
/// `w × h`.
fn blur_valid_adjoint<T: Real>(src: &[T], w: usize, h: usize, k: &[T; SSIM_WINDOW]) -> Vec<T> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut vert = vec![T::zero(); ow * h];
    for y in 0..oh {
        let src_row = &src[y * ow..(y + 1) * ow];
        for (i, &kv) in k.iter().enumerate() {
            let dst = &mut vert[(y + i) * ow..(y + i + 1) * ow];
            for (d, &s) in dst.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        let row = &vert[y * ow..(y + 1) * ow];
        let dst = &mut out[y * w..(y + 1) * w];
        for (x, &s) in row.iter().enumerate() {
            for (i, &kv) in k.iter().enumerate() {
                dst[x + i] += kv * s;
            }
        }
    }
    out
}

struct SsimMaps<T> {
    value: T,
    grad: Option<Vec<T>>,
}

fn ssim_impl<T: Real>(a: &Image<T>, b: &Image<T>, want_grad: bool) -> Result<SsimMaps<T>> {
    a.check_same_size(b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let k = gaussian_window::<T>();
    let (ad, bd) = (a.data(), b.data());
    let aa: Vec<T> = ad.iter().map(|&v| v * v).collect();
    let bb: Vec<T> = bd.iter().map(|&v| v * v).collect();
    let ab: Vec<T> = ad.iter().zip(bd).map(|(&x, &y)| x * y).collect();
    let mu_a = blur_valid(ad, w, h, &k);
    let mu_b = blur_valid(bd, w, h, &k);
    let e_aa = blur_valid(&aa, w, h, &k);
    let e_bb = blur_valid(&bb, w, h, &k);
    let e_ab = blur_valid(&ab, w, h, &k);

    let c1 = T::c(SSIM_C1);
    let c2 = T::c(SSIM_C2);
    let two = T::c(2.0);
    let n = mu_a.len();
    let inv_n = T::one() / T::c(n as f64);
    let mut total = T::zero();
    let (mut d_mu, mut d_aa, mut d_ab) = if want_grad {
        (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for p in 0..n {
        let (ma, mb) = (mu_a[p], mu_b[p]);
        let var_a = e_aa[p] - ma * ma;
        let var_b = e_bb[p] - mb * mb;
        let cov = e_ab[p] - ma * mb;
        let num1 = two * ma * mb + c1;
        let num2 = two * cov + c2;
        let den1 = ma * ma + mb * mb + c1;
        let den2 = var_a + var_b + c2;
        let s = (num1 * num2) / (den1 * den2);
        total += s;
        if want_grad {
            let den = den1 * den2;
            d_mu[p] = inv_n * ((two * mb * num2 - two * mb * num1) / den - s * (two * ma / den1 - two * ma / den2));
            d_aa[p] = -inv_n * s / den2;
            d_ab[p] = inv_n * two * num1 / den;
        }
    }
    let grad = if want_grad {
        let g_mu = blur_valid_adjoint(&d_mu, w, h, &k);
        let g_aa = blur_valid_adjoint(&d_aa, w, h, &k);
        let g_ab = blur_valid_adjoint(&d_ab, w, h, &k);
        Some(
            (0..w * h)
                .map(|q| g_mu[q] + two * ad[q] * g_aa[q] + bd[q] * g_ab[q])
                .collect(),
        )
    } else {
        None
    };
    Ok(SsimMaps {
        value: total * inv_n,
        grad,
    })
}

/// Mean SSIM over all fully-contained 11×11 Gaussian windows (σ = 1.5,
/// K₁ = 0.01, K₂ = 0.03, unit dynamic range), and its gradient with respect
/// to `a`.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<(T, Image<T>)> {
    let m = ssim_impl(a, b, true)?;
    let grad = Image::from_vec(a.width(), a.height(), m.grad.unwrap_or_default())?;
    Ok((m.value, grad))
}

/// SSIM value only.
pub fn ssim_value<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    Ok(ssim_impl(a, b, false)?.value)
}

/// `(1/N) Σ_gaussians Σ_k |T[k] − T[k−1]|` and its (sub)gradient with respect
/// to every table entry, laid out like [`Params::offset_table`].
pub fn smooth_loss<T: Real>(params: &Params<T>) -> (T, Vec<T>) {
    let l = params.table_len();
    let n = params.len();
    let mut grad = vec![T::zero(); params.offset_table.len()];
    if l < 2 || n == 0 {
        return (T::zero(), grad);
    }
    let inv_n = T::one() / T::c(n as f64);
    let mut total = T::zero();
    for (row, g) in params.offset_table.chunks_exact(l).zip(grad.chunks_exact_mut(l)) {
        for k in 1..l {
            let d = row[k] - row[k - 1];
            total += d.abs();
            let s = if d > T::zero() {
                inv_n
            } else if d < T::zero() {
                -inv_n
            } else {
                T::zero()
            };
            g[k] += s;
            g[k - 1] -= s;
        }
    }
    (total * inv_n, grad)
}

/// Individual terms of the training objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub recon: f64,
    /// `1 − SSIM` (zero when the SSIM term is disabled).
    pub ssim: f64,
    pub smooth: f64,
}

/// The weighted objective with its gradients.
#[derive(Clone, Debug)]
pub struct TotalLoss<T> {
    pub terms: LossTerms,
    pub value: T,
    pub d_image: Image<T>,
    /// Gradient of the weighted smooth term, one entry per table scalar.
    pub d_table: Vec<T>,
}

/// `L_recon + λ_ssim (1 − SSIM) + λ_smooth L_smooth`. A zero weight skips the
/// corresponding term entirely.
pub fn total_loss<T: Real>(
    rendered: &Image<T>,
    target: &Image<T>,
    params: &Params<T>,
    weights: LossWeights,
) -> Result<TotalLoss<T>> {
    weights.validate()?;
    let (recon, mut d_image) = recon_loss(rendered, target)?;
    let mut value = recon;
    let mut terms = LossTerms {
        recon: recon.f64(),
        ..LossTerms::default()
    };
    if weights.ssim > 0.0 {
        let (s, g) = ssim(rendered, target)?;
        let lam = T::c(weights.ssim);
        value += lam * (T::one() - s);
        terms.ssim = (T::one() - s).f64();
        for (d, gs) in d_image.data_mut().iter_mut().zip(g.data()) {
            *d -= lam * *gs;
        }
    }
    let mut d_table = vec![T::zero(); params.offset_table.len()];
    if weights.smooth > 0.0 {
        let (s, g) = smooth_loss(params);
        let lam = T::c(weights.smooth);
        value += lam * s;
        terms.smooth = s.f64();
        for (d, gs) in d_table.iter_mut().zip(g) {
            *d = lam * gs;
        }
    }
    terms.total = value.f64();
    Ok(TotalLoss {
        terms,
        value,
        d_image,
        d_table,
    })
}

/// `10 log₁₀(1 / MSE)` on unit dynamic range, capped at 99 dB.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    a.check_same_size(b)?;
    let n = a.len().max(1) as f64;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.f64() - y.f64();
            d * d
        })
        .sum::<f64>()
        / n;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.gen_range(0.0..1.0))
    }

    fn tables(rows: &[&[f64]]) -> Params<f64> {
        let l = rows[0].len();
        let mut p = Params::zeros(rows.len(), l);
        for (i, r) in rows.iter().enumerate() {
            p.table_mut(i).copy_from_slice(r);
        }
        p
    }

    #[test]
    fn recon_examples() {
        let a = random_image(1, 8, 8);
        assert_eq!(recon_loss(&a, &a).unwrap().0, 0.0);
        let z = Image::<f64>::zeros(4, 4);
        let h = Image::filled(4, 4, 0.5);
        assert_eq!(recon_loss(&z, &h).unwrap().0, 0.5);
        assert!(recon_loss(&z, &Image::zeros(4, 5)).is_err());
    }

    #[test]
    fn recon_matches_loop() {
        let a = random_image(2, 13, 7);
        let b = random_image(3, 13, 7);
        let mut s = 0.0;
        for y in 0..7 {
            for x in 0..13 {
                s += (a.get(x, y) - b.get(x, y)).abs();
            }
        }
        let (v, g) = recon_loss(&a, &b).unwrap();
        assert!((v - s / 91.0).abs() < 1e-12);
        assert!((g.get(0, 0).abs() - 1.0 / 91.0).abs() < 1e-15);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = random_image(4, 20, 17);
        let b = random_image(5, 20, 17);
        assert!((ssim_value(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let ab = ssim_value(&a, &b).unwrap();
        let ba = ssim_value(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        assert!((-1.0..=1.0).contains(&ab) && ab < 1.0);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let (ma, mb) = (0.3, 0.45);
        let a = Image::filled(16, 16, ma);
        let b = Image::filled(16, 16, mb);
        let expect = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        assert!((ssim_value(&a, &b).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn ssim_too_small() {
        let a = Image::<f64>::zeros(10, 30);
        assert!(matches!(ssim_value(&a, &a), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn ssim_gradient_finite_differences() {
        let a = random_image(6, 16, 16);
        let b = random_image(7, 16, 16);
        let (_, g) = ssim(&a, &b).unwrap();
        let h = 1e-6;
        for q in 0..a.len() {
            let mut p = a.clone();
            p.data_mut()[q] += h;
            let mut m = a.clone();
            m.data_mut()[q] -= h;
            let fd = (ssim_value(&p, &b).unwrap() - ssim_value(&m, &b).unwrap()) / (2.0 * h);
            let an = g.data()[q];
            let tol = 1e-4 * an.abs().max(fd.abs()) + 1e-9;
            assert!((an - fd).abs() < tol, "pixel {q}: {an:e} vs {fd:e}");
        }
    }

    #[test]
    fn smooth_examples() {
        assert_eq!(smooth_loss(&tables(&[&[0.3; 5]])).0, 0.0);
        assert_eq!(smooth_loss(&tables(&[&[0.0, 0.2, 0.4, 0.2, 0.0]])).0, 0.8);
        assert_eq!(smooth_loss(&tables(&[&[0.0, 1.0, 0.0, 0.0, 0.0], &[0.0; 5]])).0, 1.0);
        let (v, g) = smooth_loss(&tables(&[&[0.7]]));
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn smooth_gradient_signs() {
        let (_, g) = smooth_loss(&tables(&[&[0.0, 1.0, 1.0, 0.0, 0.0]]));
        // Ties contribute no subgradient.
        assert_eq!(g, vec![-1.0, 1.0, 1.0, -1.0, 0.0]);
    }

    #[test]
    fn total_ablation_equals_recon() {
        let a = random_image(8, 16, 16);
        let b = random_image(9, 16, 16);
        let p = tables(&[&[0.1, 0.5, -0.2, 0.0, 0.3]]);
        let off = LossWeights { ssim: 0.0, smooth: 0.0 };
        let t = total_loss(&a, &b, &p, off).unwrap();
        let (r, rg) = recon_loss(&a, &b).unwrap();
        assert_eq!(t.value, r);
        assert_eq!(t.d_image, rg);
        assert!(t.d_table.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn total_identical_zero_tables() {
        let a = random_image(10, 16, 16);
        let p = tables(&[&[0.0; 5]]);
        let t = total_loss(&a, &a, &p, LossWeights::default()).unwrap();
        assert!(t.value.abs() < 1e-12);
    }

    #[test]
    fn psnr_examples() {
        let a = random_image(11, 8, 8);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let z = Image::<f64>::zeros(8, 8);
        let d = Image::filled(8, 8, 0.1);
        assert!((psnr(&z, &d).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&z, &Image::zeros(8, 9)).is_err());
    }
}
