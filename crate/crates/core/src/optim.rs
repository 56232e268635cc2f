//! Adam updates and adaptive density control (clone, split, opacity and
//! random pruning).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{mat3_vec, sigmoid, Real};
use crate::model::{max_opacity, mean_opacity, quaternion_to_matrix, normalize_quaternion, GaussianCloud, ParamGroup, Params};
use crate::raster::GradientBuffer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Position learning rate at iteration 0 (in scene-extent units).
    pub lr_position: f64,
    /// Position learning rate reached at `lr_decay_iterations`.
    pub lr_position_final: f64,
    /// Iterations over which the position rate decays exponentially; 0
    /// means the length of the training run.
    pub lr_decay_iterations: u64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    /// Offset tables live in opacity units, not logits, so their rate is
    /// about `lr_opacity · α₀(1 − α₀)` at the initial opacity 0.1: the same
    /// per-step opacity change the logit rate produces there.
    pub lr_table: f64,
    pub lr_intensity: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr_position: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_decay_iterations: 0,
            lr_opacity: 0.025,
            lr_scale: 0.005,
            lr_rotation: 0.001,
            lr_table: 0.0025,
            lr_intensity: 0.0025,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr_position", self.lr_position),
            ("lr_position_final", self.lr_position_final),
            ("lr_opacity", self.lr_opacity),
            ("lr_scale", self.lr_scale),
            ("lr_rotation", self.lr_rotation),
            ("lr_table", self.lr_table),
            ("lr_intensity", self.lr_intensity),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.eps >= 0.0) {
            return Err(Error::InvalidConfig(format!("eps must be non-negative, got {}", self.eps)));
        }
        Ok(())
    }

    /// Log-linear interpolation between the initial and final position
    /// rates, held at the final rate past the decay horizon. Without a
    /// horizon the initial rate is returned.
    pub fn position_lr(&self, iteration: u64) -> f64 {
        if self.lr_decay_iterations == 0 {
            return self.lr_position;
        }
        let f = (iteration as f64 / self.lr_decay_iterations as f64).clamp(0.0, 1.0);
        (self.lr_position.ln() * (1.0 - f) + self.lr_position_final.ln() * f).exp()
    }

    /// Learning rate for `group` at `iteration`; `position_scale` multiplies
    /// the position rate (the scene extent during training).
    pub fn lr(&self, group: ParamGroup, iteration: u64, position_scale: f64) -> f64 {
        match group {
            ParamGroup::Position => self.position_lr(iteration) * position_scale,
            ParamGroup::Rotation => self.lr_rotation,
            ParamGroup::LogScale => self.lr_scale,
            ParamGroup::OpacityLogit => self.lr_opacity,
            ParamGroup::OffsetTable => self.lr_table,
            ParamGroup::IntensityLogit => self.lr_intensity,
        }
    }
}

/// One bias-corrected Adam step over every parameter group. The gradient
/// buffer is checked for non-finite values before anything is modified.
pub fn adam_step<T: Real>(
    cloud: &mut GaussianCloud<T>,
    grads: &Params<T>,
    cfg: &OptimizerConfig,
    iteration: u64,
    position_scale: f64,
) -> Result<()> {
    if grads.len() != cloud.len() || grads.table_len() != cloud.table_len() {
        return Err(Error::DimensionMismatch(format!(
            "gradient buffer has {} rows (L = {}), cloud has {} (L = {})",
            grads.len(),
            grads.table_len(),
            cloud.len(),
            cloud.table_len()
        )));
    }
    for group in ParamGroup::ALL {
        if grads.column(group).iter().any(|g| !g.is_finite()) {
            return Err(Error::GradientBlowUp { group: group.name() });
        }
    }
    let (params, adam) = cloud.params_and_adam_mut();
    adam.step += 1;
    let step = adam.step as i32;
    let b1 = T::c(cfg.beta1);
    let b2 = T::c(cfg.beta2);
    let one = T::one();
    let bc1 = one - T::c(cfg.beta1.powi(step));
    let bc2 = one - T::c(cfg.beta2.powi(step));
    let eps = T::c(cfg.eps);
    for group in ParamGroup::ALL {
        let lr = T::c(cfg.lr(group, iteration, position_scale));
        let g = grads.column(group);
        let p = params.column_mut(group);
        let m = adam.first.column_mut(group);
        let v = adam.second.column_mut(group);
        for j in 0..g.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Adds each visible Gaussian's screen-space positional gradient norm to its
/// accumulator. `ndc_scale` converts pixel gradients to normalized device
/// units (`[width / 2, height / 2]`); pass `[1, 1]` to accumulate raw pixel
/// norms.
pub fn accumulate_densify_stats<T: Real>(cloud: &mut GaussianCloud<T>, grads: &GradientBuffer<T>, ndc_scale: [f64; 2]) {
    let stats = cloud.stats_mut();
    for i in grads.visible_indices() {
        let gx = grads.screen_mean[2 * i].f64() * ndc_scale[0];
        let gy = grads.screen_mean[2 * i + 1].f64() * ndc_scale[1];
        stats.grad_norm_sum[i] += (gx * gx + gy * gy).sqrt();
        let p = &grads.params.position[3 * i..3 * i + 3];
        for (acc, g) in stats.position_grad_sum[i].iter_mut().zip(p) {
            *acc += g.f64();
        }
        stats.count[i] += 1;
    }
}

/// Criterion used by [`prune_opacity`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneMode {
    /// `α′ + max(table) < U`.
    #[default]
    Max,
    /// `α′ + mean(table) < U`.
    Mean,
    /// `α′ < U`, ignoring the table.
    Initial,
}

impl std::str::FromStr for PruneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Self::Max),
            "mean" => Ok(Self::Mean),
            "initial" => Ok(Self::Initial),
            other => Err(Error::InvalidConfig(format!("unknown prune mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub densify_start: u64,
    pub densify_end: u64,
    pub densify_interval: u64,
    /// Threshold on the mean screen-space positional gradient norm.
    pub grad_threshold: f64,
    /// Gaussians whose largest scale exceeds this fraction of the scene
    /// extent are split; smaller ones are cloned.
    pub split_scale_threshold: f64,
    pub split_factor: f64,
    pub split_count: usize,
    pub opacity_threshold: f64,
    pub random_prune_interval: u64,
    pub random_prune_fraction: f64,
    pub prune_mode: PruneMode,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            densify_start: 1000,
            densify_end: 20_000,
            densify_interval: 100,
            grad_threshold: 2e-4,
            split_scale_threshold: 0.01,
            split_factor: 1.6,
            split_count: 2,
            opacity_threshold: 0.018,
            random_prune_interval: 200,
            random_prune_fraction: 0.08,
            prune_mode: PruneMode::Max,
        }
    }
}

impl DensityConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.densify_start >= self.densify_end {
            return bad(format!(
                "densify_start ({}) must be below densify_end ({})",
                self.densify_start, self.densify_end
            ));
        }
        if self.densify_interval == 0 || self.random_prune_interval == 0 {
            return bad("density intervals must be positive".into());
        }
        if !(0.0..1.0).contains(&self.random_prune_fraction) {
            return bad(format!("random_prune_fraction must lie in [0, 1), got {}", self.random_prune_fraction));
        }
        if !(self.opacity_threshold > 0.0 && self.opacity_threshold < 1.0) {
            return bad(format!("opacity_threshold must lie in (0, 1), got {}", self.opacity_threshold));
        }
        if !(self.split_factor > 0.0) || self.split_count == 0 {
            return bad("split_factor and split_count must be positive".into());
        }
        if !(self.grad_threshold >= 0.0 && self.split_scale_threshold >= 0.0) {
            return bad("thresholds must be non-negative".into());
        }
        Ok(())
    }

    /// Whether `iteration` lies in the density-control window.
    pub fn in_window(&self, iteration: u64) -> bool {
        iteration >= self.densify_start && iteration <= self.densify_end
    }

    pub fn densify_due(&self, iteration: u64) -> bool {
        self.in_window(iteration) && iteration.is_multiple_of(self.densify_interval)
    }

    pub fn random_prune_due(&self, iteration: u64) -> bool {
        self.in_window(iteration) && iteration.is_multiple_of(self.random_prune_interval)
    }
}

/// Row counts touched by [`densify`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensifyOutcome {
    pub cloned: usize,
    pub split: usize,
}

/// Clones or splits every Gaussian whose mean gradient statistic exceeds the
/// threshold, then resets the statistics. Clones are appended after the
/// existing rows, followed by split children; split parents are removed.
pub fn densify<T: Real>(cloud: &mut GaussianCloud<T>, cfg: &DensityConfig, scene_extent: f64, seed: u64) -> Result<DensifyOutcome> {
    let n = cloud.len();
    let size_limit = cfg.split_scale_threshold * scene_extent;
    let mut clones = Params::zeros(0, cloud.table_len());
    let mut children = Params::zeros(0, cloud.table_len());
    let mut keep = vec![true; n];
    let mut outcome = DensifyOutcome::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for i in 0..n {
        if cloud.stats().mean_grad(i) <= cfg.grad_threshold {
            continue;
        }
        let scale = cloud.log_scale(i).map(|v| v.f64().exp());
        let max_scale = scale.iter().cloned().fold(0.0, f64::max);
        if max_scale <= size_limit {
            clones.push_row_from(cloud.params(), i);
            let row = clones.len() - 1;
            let g = cloud.stats().position_grad_sum[i];
            let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            if norm > 0.0 {
                let pos = &mut clones.position[3 * row..3 * row + 3];
                for (p, gk) in pos.iter_mut().zip(g) {
                    *p -= T::c(max_scale * gk / norm);
                }
            }
            outcome.cloned += 1;
        } else {
            let (q, _) = normalize_quaternion(cloud.rotation(i).map(|v| v.f64()))?;
            let r = quaternion_to_matrix(q);
            let mean = cloud.position(i).map(|v| v.f64());
            let shrink = cfg.split_factor.ln();
            for _ in 0..cfg.split_count {
                let z: [f64; 3] = [(); 3].map(|_| StandardNormal.sample(&mut rng));
                let local = [z[0] * scale[0], z[1] * scale[1], z[2] * scale[2]];
                let offset = mat3_vec(&r, local);
                children.push_row_from(cloud.params(), i);
                let row = children.len() - 1;
                for k in 0..3 {
                    children.position[3 * row + k] = T::c(mean[k] + offset[k]);
                    children.log_scale[3 * row + k] -= T::c(shrink);
                }
            }
            keep[i] = false;
            outcome.split += 1;
        }
    }
    cloud.append(&clones);
    cloud.append(&children);
    keep.resize(cloud.len(), true);
    cloud.retain(&keep);
    cloud.stats_mut().reset();
    Ok(outcome)
}

/// Whether Gaussian `i` would be removed under `mode` and threshold `u`.
pub fn fails_opacity_criterion<T: Real>(cloud: &GaussianCloud<T>, i: usize, mode: PruneMode, u: f64) -> bool {
    let a = cloud.params().opacity_logit[i];
    let table = cloud.table(i);
    let score = match mode {
        PruneMode::Max => max_opacity(a, table),
        PruneMode::Mean => mean_opacity(a, table),
        PruneMode::Initial => sigmoid(a),
    };
    score.f64() < u
}

/// Removes every Gaussian failing the configured opacity criterion; returns
/// the number removed.
pub fn prune_opacity<T: Real>(cloud: &mut GaussianCloud<T>, cfg: &DensityConfig) -> usize {
    let keep: Vec<bool> = (0..cloud.len())
        .map(|i| !fails_opacity_criterion(cloud, i, cfg.prune_mode, cfg.opacity_threshold))
        .collect();
    let removed = keep.iter().filter(|k| !**k).count();
    if removed > 0 {
        cloud.retain(&keep);
    }
    removed
}

/// Removes `floor(fraction · N)` distinct Gaussians chosen uniformly with a
/// seeded generator. Survivors keep their relative order.
pub fn prune_random<T: Real>(cloud: &mut GaussianCloud<T>, fraction: f64, seed: u64) -> Result<usize> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("prune fraction must lie in [0, 1), got {fraction}")));
    }
    let n = cloud.len();
    let count = (fraction * n as f64).floor() as usize;
    if count == 0 {
        return Ok(0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; n];
    for i in rand::seq::index::sample(&mut rng, n, count) {
        keep[i] = false;
    }
    cloud.retain(&keep);
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::logit;
    use crate::model::Gaussian;

    fn with_table(opacity: f64, table: Vec<f64>) -> Gaussian<f64> {
        let l = table.len();
        Gaussian {
            offset_table: table,
            ..Gaussian::isotropic([0.0, 0.0, 3.0], 0.1, opacity, 0.5, l)
        }
    }

    fn single_param_cloud(value: f64) -> GaussianCloud<f64> {
        let mut g = Gaussian::isotropic([0.0; 3], 1.0, 0.5, 0.5, 1);
        g.opacity_logit = value;
        GaussianCloud::from_gaussians(1, &[g])
    }

    fn opacity_grad(g: f64) -> Params<f64> {
        let mut p = Params::zeros(1, 1);
        p.opacity_logit[0] = g;
        p
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut c = single_param_cloud(0.3);
        let before = c.params().clone();
        adam_step(&mut c, &Params::zeros(1, 1), &OptimizerConfig::default(), 0, 1.0).unwrap();
        assert_eq!(c.params(), &before);
        assert_eq!(c.adam().step, 1);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        let mut c = single_param_cloud(0.3);
        let cfg = OptimizerConfig::default();
        adam_step(&mut c, &opacity_grad(1.0), &cfg, 0, 1.0).unwrap();
        let delta = c.params().opacity_logit[0] - 0.3;
        assert!((delta + cfg.lr_opacity).abs() < 1e-12);
    }

    #[test]
    fn adam_matches_scalar_reference_on_quadratic() {
        // f(x) = (x − 2)², minimized from x = −1 with a large rate.
        let cfg = OptimizerConfig { lr_opacity: 0.1, ..OptimizerConfig::default() };
        let mut c = single_param_cloud(-1.0);
        let (mut x, mut m, mut v) = (-1.0f64, 0.0f64, 0.0f64);
        for step in 1..=400 {
            let g = 2.0 * (c.params().opacity_logit[0] - 2.0);
            adam_step(&mut c, &opacity_grad(g), &cfg, step, 1.0).unwrap();
            let gr = 2.0 * (x - 2.0);
            m = 0.9 * m + 0.1 * gr;
            v = 0.999 * v + 0.001 * gr * gr;
            let mh = m / (1.0 - 0.9f64.powi(step as i32));
            let vh = v / (1.0 - 0.999f64.powi(step as i32));
            x -= 0.1 * mh / (vh.sqrt() + 1e-15);
            assert!((c.params().opacity_logit[0] - x).abs() < 1e-12);
        }
        assert!((x - 2.0).abs() < 1e-3);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut c = single_param_cloud(0.3);
        let err = adam_step(&mut c, &opacity_grad(f64::NAN), &OptimizerConfig::default(), 0, 1.0).unwrap_err();
        assert!(matches!(err, Error::GradientBlowUp { group: "opacity_logit" }));
        assert_eq!(c.adam().step, 0);
    }

    #[test]
    fn position_rate_decays_log_linearly() {
        let cfg = OptimizerConfig { lr_decay_iterations: 30_000, ..OptimizerConfig::default() };
        assert!((cfg.position_lr(0) - 1.6e-4).abs() < 1e-18);
        assert!((cfg.position_lr(15_000) - 1.6e-5).abs() < 1e-15);
        assert!((cfg.position_lr(60_000) - 1.6e-6).abs() < 1e-18);
    }

    fn grads_with_screen(n: usize, values: &[(usize, f64)]) -> GradientBuffer<f64> {
        let mut g = GradientBuffer::zeros(n, 5);
        for &(i, v) in values {
            g.screen_mean[2 * i] = v;
            g.visible[i] = true;
        }
        g
    }

    #[test]
    fn stats_accumulate_visible_only() {
        let mut c = GaussianCloud::from_gaussians(5, &[with_table(0.5, vec![0.0; 5]), with_table(0.5, vec![0.0; 5])]);
        accumulate_densify_stats(&mut c, &grads_with_screen(2, &[(0, 0.1)]), [1.0, 1.0]);
        accumulate_densify_stats(&mut c, &grads_with_screen(2, &[(0, 0.3)]), [1.0, 1.0]);
        assert!((c.stats().mean_grad(0) - 0.2).abs() < 1e-15);
        assert_eq!(c.stats().count[1], 0);
        assert_eq!(c.stats().grad_norm_sum[1], 0.0);
    }

    #[test]
    fn densify_below_threshold_is_noop() {
        let mut c = GaussianCloud::from_gaussians(5, &[with_table(0.5, vec![0.0; 5])]);
        accumulate_densify_stats(&mut c, &grads_with_screen(1, &[(0, 1e-5)]), [1.0, 1.0]);
        let before = c.params().clone();
        let out = densify(&mut c, &DensityConfig::default(), 1.0, 0).unwrap();
        assert_eq!(out, DensifyOutcome::default());
        assert_eq!(c.params(), &before);
        assert!(c.stats().count.iter().all(|&k| k == 0));
    }

    #[test]
    fn densify_splits_large_gaussian() {
        let table = vec![0.1, 0.2, 0.0, -0.1, 0.05];
        let mut c = GaussianCloud::from_gaussians(5, &[with_table(0.5, table.clone())]);
        accumulate_densify_stats(&mut c, &grads_with_screen(1, &[(0, 1.0)]), [1.0, 1.0]);
        let out = densify(&mut c, &DensityConfig::default(), 1.0, 3).unwrap();
        assert_eq!(out.split, 1);
        assert_eq!(c.len(), 2);
        for i in 0..2 {
            for k in 0..3 {
                assert!((c.log_scale(i)[k].exp() - 0.1 / 1.6).abs() < 1e-12);
            }
            assert_eq!(c.table(i), &table[..]);
        }
        assert!(c.is_consistent());
    }

    #[test]
    fn densify_clones_small_gaussian_along_descent() {
        let mut c = GaussianCloud::from_gaussians(5, &[with_table(0.5, vec![0.0; 5])]);
        let mut g = grads_with_screen(1, &[(0, 1.0)]);
        g.params.position[0] = 2.0;
        accumulate_densify_stats(&mut c, &g, [1.0, 1.0]);
        let out = densify(&mut c, &DensityConfig::default(), 100.0, 0).unwrap();
        assert_eq!(out.cloned, 1);
        assert_eq!(c.len(), 2);
        let (a, b) = (c.gaussian(0), c.gaussian(1));
        assert_eq!(a.position, [0.0, 0.0, 3.0]);
        assert!((b.position[0] + 0.1).abs() < 1e-12);
        assert_eq!(b.position[1..], a.position[1..]);
        assert_eq!((b.rotation, b.log_scale, b.opacity_logit), (a.rotation, a.log_scale, a.opacity_logit));
        assert_eq!(c.adam().first.len(), 2);
    }

    #[test]
    fn opacity_pruning_examples() {
        let low = with_table(0.01, vec![0.0, 0.005, 0.0, 0.0, 0.0]);
        let high = with_table(0.5, vec![-0.4, 0.0, 0.0, 0.0, 0.0]);
        let mut c = GaussianCloud::from_gaussians(5, &[low, high.clone()]);
        assert_eq!(prune_opacity(&mut c, &DensityConfig::default()), 1);
        assert_eq!(c.gaussian(0), high);

        let transient = with_table(0.01, vec![0.0, 0.0, 0.89, 0.0, 0.0]);
        let mut max_mode = GaussianCloud::from_gaussians(5, std::slice::from_ref(&transient));
        assert_eq!(prune_opacity(&mut max_mode, &DensityConfig::default()), 0);
        let initial = DensityConfig { prune_mode: PruneMode::Initial, ..DensityConfig::default() };
        let mut init_mode = GaussianCloud::from_gaussians(5, &[transient]);
        assert_eq!(prune_opacity(&mut init_mode, &initial), 1);
    }

    #[test]
    fn mean_mode_uses_table_average() {
        let g = with_table(0.015, vec![0.0, 0.0, 0.0, 0.0, 0.01]);
        let c = GaussianCloud::from_gaussians(5, &[g]);
        assert!(!fails_opacity_criterion(&c, 0, PruneMode::Max, 0.018));
        assert!(fails_opacity_criterion(&c, 0, PruneMode::Mean, 0.018));
    }

    fn numbered(n: usize) -> GaussianCloud<f64> {
        let gs: Vec<_> = (0..n)
            .map(|i| Gaussian { opacity_logit: logit(0.5) + i as f64, ..with_table(0.5, vec![0.0; 5]) })
            .collect();
        GaussianCloud::from_gaussians(5, &gs)
    }

    #[test]
    fn random_pruning_examples() {
        let mut c = numbered(100);
        assert_eq!(prune_random(&mut c, 0.0, 1).unwrap(), 0);
        assert_eq!(c.len(), 100);
        assert_eq!(prune_random(&mut c, 0.08, 1).unwrap(), 8);
        assert_eq!(c.len(), 92);
        let mut d = numbered(100);
        prune_random(&mut d, 0.08, 1).unwrap();
        assert_eq!(c.params(), d.params());
        let ids: Vec<f64> = c.params().opacity_logit.clone();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert!(prune_random(&mut d, 1.0, 1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        assert!(OptimizerConfig { lr_table: 0.0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig { beta2: 1.0, ..Default::default() }.validate().is_err());
        assert!(DensityConfig::default().validate().is_ok());
        assert!(DensityConfig { densify_start: 20_000, ..Default::default() }.validate().is_err());
        assert!(DensityConfig { opacity_threshold: 1.0, ..Default::default() }.validate().is_err());
        let c = DensityConfig::default();
        assert!(c.densify_due(1000) && !c.densify_due(999) && !c.densify_due(20_100));
        assert!(c.random_prune_due(1200) && !c.random_prune_due(1300));
    }
}
