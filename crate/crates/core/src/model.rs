//! Gaussian parameterization, covariance construction and the temporal
//! opacity mechanism.
//!
//! Raw parameters are unconstrained: opacity and intensity are logits
//! (activated through a sigmoid), scale is stored as a log, and the rotation
//! quaternion `(w, x, y, z)` is renormalized every time it is used. The
//! offset table holds raw opacity offsets at the uniform knots `k / (L - 1)`.

use crate::error::{Error, Result};
use crate::math::{logit, sigmoid, Mat3, Real, Vec3};

/// One splat's raw parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian<T> {
    pub position: Vec3<T>,
    /// Quaternion `(w, x, y, z)`; normalized on use.
    pub rotation: [T; 4],
    pub log_scale: Vec3<T>,
    pub opacity_logit: T,
    pub offset_table: Vec<T>,
    pub intensity_logit: T,
}

impl<T: Real> Gaussian<T> {
    /// An isotropic Gaussian with identity rotation and an all-zero table.
    pub fn isotropic(position: Vec3<T>, scale: f64, opacity: f64, intensity: f64, table_len: usize) -> Self {
        let ls = T::c(scale.ln());
        Self {
            position,
            rotation: [T::one(), T::zero(), T::zero(), T::zero()],
            log_scale: [ls; 3],
            opacity_logit: T::c(logit(opacity)),
            offset_table: vec![T::zero(); table_len],
            intensity_logit: T::c(logit(intensity)),
        }
    }

    pub fn scale(&self) -> Vec3<T> {
        self.log_scale.map(|s| s.exp())
    }

    /// Activated base opacity `α′`.
    pub fn base_opacity(&self) -> T {
        sigmoid(self.opacity_logit)
    }

    pub fn intensity(&self) -> T {
        sigmoid(self.intensity_logit)
    }

    pub fn covariance(&self) -> Result<Mat3<T>> {
        build_covariance(self.rotation, self.log_scale)
    }

    pub fn opacity_at(&self, t: T) -> Result<T> {
        opacity_at(self.opacity_logit, &self.offset_table, t)
    }

    pub fn max_opacity(&self) -> T {
        max_opacity(self.opacity_logit, &self.offset_table)
    }
}

/// Normalizes a quaternion, returning the unit quaternion and the input norm.
pub fn normalize_quaternion<T: Real>(q: [T; 4]) -> Result<([T; 4], T)> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n > T::c(1e-12)) {
        return Err(Error::DegenerateRotation);
    }
    Ok((q.map(|c| c / n), n))
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quaternion_to_matrix<T: Real>(q: [T; 4]) -> Mat3<T> {
    let [w, x, y, z] = q;
    let one = T::one();
    let two = T::c(2.0);
    [
        [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
        [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
        [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
    ]
}

/// Pulls a gradient on the rotation matrix back to the raw (unnormalized)
/// quaternion.
pub fn quaternion_backward<T: Real>(q_raw: [T; 4], d_rot: &Mat3<T>) -> Result<[T; 4]> {
    let (q, norm) = normalize_quaternion(q_raw)?;
    let [w, x, y, z] = q;
    let d = d_rot;
    let two = T::c(2.0);
    let dw = two * (-z * d[0][1] + y * d[0][2] + z * d[1][0] - x * d[1][2] - y * d[2][0] + x * d[2][1]);
    let dx = two
        * (y * d[0][1] + z * d[0][2] + y * d[1][0] - two * x * d[1][1] - w * d[1][2] + z * d[2][0] + w * d[2][1]
            - two * x * d[2][2]);
    let dy = two
        * (-two * y * d[0][0] + x * d[0][1] + w * d[0][2] + x * d[1][0] + z * d[1][2] - w * d[2][0] + z * d[2][1]
            - two * y * d[2][2]);
    let dz = two
        * (-two * z * d[0][0] - w * d[0][1] + x * d[0][2] + w * d[1][0] - two * z * d[1][1] + y * d[1][2]
            + x * d[2][0]
            + y * d[2][1]);
    let dq = [dw, dx, dy, dz];
    let proj = dq[0] * q[0] + dq[1] * q[1] + dq[2] * q[2] + dq[3] * q[3];
    Ok([
        (dq[0] - q[0] * proj) / norm,
        (dq[1] - q[1] * proj) / norm,
        (dq[2] - q[2] * proj) / norm,
        (dq[3] - q[3] * proj) / norm,
    ])
}

/// `R S Sᵀ Rᵀ` with `R` from the (normalized) quaternion and
/// `S = diag(exp(log_scale))`.
pub fn build_covariance<T: Real>(rotation: [T; 4], log_scale: Vec3<T>) -> Result<Mat3<T>> {
    let (q, _) = normalize_quaternion(rotation)?;
    let r = quaternion_to_matrix(q);
    let s = log_scale.map(|v| v.exp());
    // M = R S; Σ = M Mᵀ
    let mut m = r;
    for row in m.iter_mut() {
        for c in 0..3 {
            row[c] *= s[c];
        }
    }
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = m[i][0] * m[j][0] + m[i][1] * m[j][1] + m[i][2] * m[j][2];
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    Ok(out)
}

/// Time of knot `k` in a table of length `len`.
pub fn knot_time<T: Real>(k: usize, len: usize) -> T {
    if len <= 1 {
        T::zero()
    } else {
        T::c(k as f64) / T::c((len - 1) as f64)
    }
}

/// Interpolation stencil of a table of length `len` at time `t`: up to two
/// `(index, weight)` pairs. A knot-exact `t` yields a single entry with
/// weight one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil<T> {
    pub lo: usize,
    pub w_lo: T,
    pub hi: usize,
    pub w_hi: T,
}

pub fn interp_stencil<T: Real>(len: usize, t: T) -> Result<Stencil<T>> {
    if len == 0 {
        return Err(Error::EmptyTable);
    }
    if !(t >= T::zero() && t <= T::one()) {
        return Err(Error::TimeOutOfRange(t.f64()));
    }
    let single = |k: usize| Stencil { lo: k, w_lo: T::one(), hi: k, w_hi: T::zero() };
    if len == 1 {
        return Ok(single(0));
    }
    let segments = len - 1;
    let u = t * T::c(segments as f64);
    // Snap to a knot whenever `t` is exactly the knot time, so knot lookups
    // never go through the blend.
    let nearest = u.round().to_usize().unwrap_or(0).min(segments);
    if knot_time::<T>(nearest, len) == t {
        return Ok(single(nearest));
    }
    let lo = u.floor().to_usize().unwrap_or(0).min(segments - 1);
    let frac = u - T::c(lo as f64);
    Ok(Stencil { lo, w_lo: T::one() - frac, hi: lo + 1, w_hi: frac })
}

/// Piecewise-linear interpolation of `table` over uniform knots on `[0, 1]`.
pub fn interp_table<T: Real>(table: &[T], t: T) -> Result<T> {
    let st = interp_stencil(table.len(), t)?;
    if st.w_hi == T::zero() {
        return Ok(table[st.lo]);
    }
    Ok(st.w_lo * table[st.lo] + st.w_hi * table[st.hi])
}

/// Un-clamped `α′ + Δα_t`.
pub fn raw_opacity_at<T: Real>(opacity_logit: T, table: &[T], t: T) -> Result<T> {
    Ok(sigmoid(opacity_logit) + interp_table(table, t)?)
}

/// Opacity at time `t`, clamped to `[0, 1]`.
pub fn opacity_at<T: Real>(opacity_logit: T, table: &[T], t: T) -> Result<T> {
    let raw = raw_opacity_at(opacity_logit, table, t)?;
    Ok(raw.max(T::zero()).min(T::one()))
}

/// Peak un-clamped opacity over all knots: `α′ + max_k table[k]`.
pub fn max_opacity<T: Real>(opacity_logit: T, table: &[T]) -> T {
    let peak = table.iter().copied().fold(T::neg_infinity(), T::max);
    let peak = if table.is_empty() { T::zero() } else { peak };
    sigmoid(opacity_logit) + peak
}

/// `α′ + mean_k table[k]`.
pub fn mean_opacity<T: Real>(opacity_logit: T, table: &[T]) -> T {
    let mean = if table.is_empty() {
        T::zero()
    } else {
        table.iter().copied().sum::<T>() / T::c(table.len() as f64)
    };
    sigmoid(opacity_logit) + mean
}

/// Parameter groups of a Gaussian. Each has its own learning rate and its
/// own column in [`Params`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Position,
    Rotation,
    LogScale,
    OpacityLogit,
    OffsetTable,
    IntensityLogit,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Position,
        ParamGroup::Rotation,
        ParamGroup::LogScale,
        ParamGroup::OpacityLogit,
        ParamGroup::OffsetTable,
        ParamGroup::IntensityLogit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Position => "position",
            ParamGroup::Rotation => "rotation",
            ParamGroup::LogScale => "log_scale",
            ParamGroup::OpacityLogit => "opacity_logit",
            ParamGroup::OffsetTable => "offset_table",
            ParamGroup::IntensityLogit => "intensity_logit",
        }
    }

    /// Scalars per Gaussian for this group.
    pub fn stride(self, table_len: usize) -> usize {
        match self {
            ParamGroup::Position | ParamGroup::LogScale => 3,
            ParamGroup::Rotation => 4,
            ParamGroup::OpacityLogit | ParamGroup::IntensityLogit => 1,
            ParamGroup::OffsetTable => table_len,
        }
    }
}

/// Columnar storage for every per-Gaussian parameter. The same layout is
/// used for the parameters, both Adam moments and the gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    table_len: usize,
    pub position: Vec<T>,
    pub rotation: Vec<T>,
    pub log_scale: Vec<T>,
    pub opacity_logit: Vec<T>,
    pub offset_table: Vec<T>,
    pub intensity_logit: Vec<T>,
}

impl<T: Real> Params<T> {
    pub fn zeros(len: usize, table_len: usize) -> Self {
        Self {
            table_len,
            position: vec![T::zero(); 3 * len],
            rotation: vec![T::zero(); 4 * len],
            log_scale: vec![T::zero(); 3 * len],
            opacity_logit: vec![T::zero(); len],
            offset_table: vec![T::zero(); table_len * len],
            intensity_logit: vec![T::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn table_len(&self) -> usize {
        self.table_len
    }

    pub fn column(&self, group: ParamGroup) -> &[T] {
        match group {
            ParamGroup::Position => &self.position,
            ParamGroup::Rotation => &self.rotation,
            ParamGroup::LogScale => &self.log_scale,
            ParamGroup::OpacityLogit => &self.opacity_logit,
            ParamGroup::OffsetTable => &self.offset_table,
            ParamGroup::IntensityLogit => &self.intensity_logit,
        }
    }

    pub fn column_mut(&mut self, group: ParamGroup) -> &mut Vec<T> {
        match group {
            ParamGroup::Position => &mut self.position,
            ParamGroup::Rotation => &mut self.rotation,
            ParamGroup::LogScale => &mut self.log_scale,
            ParamGroup::OpacityLogit => &mut self.opacity_logit,
            ParamGroup::OffsetTable => &mut self.offset_table,
            ParamGroup::IntensityLogit => &mut self.intensity_logit,
        }
    }

    /// True when every column holds exactly `len()` rows.
    pub fn is_consistent(&self) -> bool {
        let n = self.len();
        ParamGroup::ALL
            .iter()
            .all(|&g| self.column(g).len() == n * g.stride(self.table_len))
    }

    /// Keeps rows whose mask entry is true, preserving order.
    pub fn retain(&mut self, keep: &[bool]) {
        let table_len = self.table_len;
        for g in ParamGroup::ALL {
            let stride = g.stride(table_len);
            let col = self.column_mut(g);
            let mut w = 0;
            for (i, &k) in keep.iter().enumerate() {
                if k {
                    if w != i {
                        col.copy_within(i * stride..(i + 1) * stride, w * stride);
                    }
                    w += 1;
                }
            }
            col.truncate(w * stride);
        }
    }

    /// Appends a copy of row `i` of `src`.
    pub fn push_row_from(&mut self, src: &Params<T>, i: usize) {
        let table_len = self.table_len;
        for g in ParamGroup::ALL {
            let stride = g.stride(table_len);
            let row = &src.column(g)[i * stride..(i + 1) * stride];
            self.column_mut(g).extend_from_slice(row);
        }
    }

    pub fn push_zero_rows(&mut self, count: usize) {
        let table_len = self.table_len;
        for g in ParamGroup::ALL {
            let stride = g.stride(table_len);
            let col = self.column_mut(g);
            col.resize(col.len() + count * stride, T::zero());
        }
    }

    pub fn fill_zero(&mut self) {
        for g in ParamGroup::ALL {
            self.column_mut(g).iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn table(&self, i: usize) -> &[T] {
        &self.offset_table[i * self.table_len..(i + 1) * self.table_len]
    }

    pub fn table_mut(&mut self, i: usize) -> &mut [T] {
        let l = self.table_len;
        &mut self.offset_table[i * l..(i + 1) * l]
    }
}

/// Adam state held alongside the parameters so that density control keeps
/// it in lockstep.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first: Params<T>,
    pub second: Params<T>,
    pub step: u64,
}

/// Per-Gaussian accumulators for gradient-driven densification.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    /// Sum of screen-space positional gradient norms.
    pub grad_norm_sum: Vec<f64>,
    /// Sum of world-space positional gradients (used for the clone nudge).
    pub position_grad_sum: Vec<[f64; 3]>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    fn zeros(n: usize) -> Self {
        Self {
            grad_norm_sum: vec![0.0; n],
            position_grad_sum: vec![[0.0; 3]; n],
            count: vec![0; n],
        }
    }

    pub fn reset(&mut self) {
        let n = self.count.len();
        *self = Self::zeros(n);
    }

    /// Mean accumulated gradient norm of Gaussian `i` (zero when never seen).
    pub fn mean_grad(&self, i: usize) -> f64 {
        match self.count[i] {
            0 => 0.0,
            c => self.grad_norm_sum[i] / c as f64,
        }
    }

    fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.grad_norm_sum.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.position_grad_sum.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.count.retain(|_| *it.next().unwrap());
    }

    fn push_zero_rows(&mut self, count: usize) {
        let n = self.count.len() + count;
        self.grad_norm_sum.resize(n, 0.0);
        self.position_grad_sum.resize(n, [0.0; 3]);
        self.count.resize(n, 0);
    }
}

/// Columnar collection of Gaussians with optimizer state and densification
/// statistics. Every mutation keeps all of them the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud<T> {
    params: Params<T>,
    adam: AdamState<T>,
    stats: DensifyStats,
}

impl<T: Real> GaussianCloud<T> {
    pub fn new(table_len: usize) -> Self {
        Self::from_params(Params::zeros(0, table_len))
    }

    /// Wraps raw parameters with fresh (zeroed) optimizer state.
    pub fn from_params(params: Params<T>) -> Self {
        let n = params.len();
        let table_len = params.table_len();
        Self {
            params,
            adam: AdamState {
                first: Params::zeros(n, table_len),
                second: Params::zeros(n, table_len),
                step: 0,
            },
            stats: DensifyStats::zeros(n),
        }
    }

    pub fn from_gaussians(table_len: usize, gaussians: &[Gaussian<T>]) -> Self {
        let mut cloud = Self::new(table_len);
        for g in gaussians {
            cloud.push(g.clone());
        }
        cloud
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn table_len(&self) -> usize {
        self.params.table_len()
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    /// Mutable access to raw parameter values. Row count must not change.
    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn adam(&self) -> &AdamState<T> {
        &self.adam
    }

    pub(crate) fn params_and_adam_mut(&mut self) -> (&mut Params<T>, &mut AdamState<T>) {
        (&mut self.params, &mut self.adam)
    }

    pub fn stats(&self) -> &DensifyStats {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut DensifyStats {
        &mut self.stats
    }

    /// Appends a Gaussian with zeroed optimizer state.
    ///
    /// Panics if the table length differs from the cloud's.
    pub fn push(&mut self, g: Gaussian<T>) {
        assert_eq!(g.offset_table.len(), self.table_len(), "offset table length mismatch");
        let p = &mut self.params;
        p.position.extend_from_slice(&g.position);
        p.rotation.extend_from_slice(&g.rotation);
        p.log_scale.extend_from_slice(&g.log_scale);
        p.opacity_logit.push(g.opacity_logit);
        p.offset_table.extend_from_slice(&g.offset_table);
        p.intensity_logit.push(g.intensity_logit);
        self.adam.first.push_zero_rows(1);
        self.adam.second.push_zero_rows(1);
        self.stats.push_zero_rows(1);
    }

    pub fn gaussian(&self, i: usize) -> Gaussian<T> {
        let p = &self.params;
        Gaussian {
            position: self.position(i),
            rotation: [p.rotation[4 * i], p.rotation[4 * i + 1], p.rotation[4 * i + 2], p.rotation[4 * i + 3]],
            log_scale: [p.log_scale[3 * i], p.log_scale[3 * i + 1], p.log_scale[3 * i + 2]],
            opacity_logit: p.opacity_logit[i],
            offset_table: p.table(i).to_vec(),
            intensity_logit: p.intensity_logit[i],
        }
    }

    pub fn gaussians(&self) -> impl Iterator<Item = Gaussian<T>> + '_ {
        (0..self.len()).map(|i| self.gaussian(i))
    }

    #[inline]
    pub fn position(&self, i: usize) -> Vec3<T> {
        let p = &self.params.position;
        [p[3 * i], p[3 * i + 1], p[3 * i + 2]]
    }

    #[inline]
    pub fn rotation(&self, i: usize) -> [T; 4] {
        let r = &self.params.rotation;
        [r[4 * i], r[4 * i + 1], r[4 * i + 2], r[4 * i + 3]]
    }

    #[inline]
    pub fn log_scale(&self, i: usize) -> Vec3<T> {
        let s = &self.params.log_scale;
        [s[3 * i], s[3 * i + 1], s[3 * i + 2]]
    }

    #[inline]
    pub fn table(&self, i: usize) -> &[T] {
        self.params.table(i)
    }

    pub fn opacity_at(&self, i: usize, t: T) -> Result<T> {
        opacity_at(self.params.opacity_logit[i], self.table(i), t)
    }

    pub fn max_opacity(&self, i: usize) -> T {
        max_opacity(self.params.opacity_logit[i], self.table(i))
    }

    /// Keeps the rows whose mask entry is true (stable), compacting
    /// parameters, optimizer moments and statistics together.
    pub fn retain(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        self.params.retain(keep);
        self.adam.first.retain(keep);
        self.adam.second.retain(keep);
        self.stats.retain(keep);
    }

    /// Appends rows from `new` (parameters only); their optimizer moments and
    /// statistics start at zero.
    pub fn append(&mut self, new: &Params<T>) {
        assert_eq!(new.table_len(), self.table_len());
        for i in 0..new.len() {
            self.params.push_row_from(new, i);
        }
        self.adam.first.push_zero_rows(new.len());
        self.adam.second.push_zero_rows(new.len());
        self.stats.push_zero_rows(new.len());
    }

    /// Column lengths of parameters, moments and statistics all agree.
    pub fn is_consistent(&self) -> bool {
        let n = self.len();
        self.params.is_consistent()
            && self.adam.first.is_consistent()
            && self.adam.second.is_consistent()
            && self.adam.first.len() == n
            && self.adam.second.len() == n
            && self.stats.count.len() == n
            && self.stats.grad_norm_sum.len() == n
            && self.stats.position_grad_sum.len() == n
    }

    /// Converts parameters to another precision (optimizer state is reset).
    pub fn cast<U: Real>(&self) -> GaussianCloud<U> {
        let p = &self.params;
        let conv = |v: &Vec<T>| v.iter().map(|x| U::c(x.f64())).collect::<Vec<U>>();
        GaussianCloud::from_params(Params {
            table_len: p.table_len,
            position: conv(&p.position),
            rotation: conv(&p.rotation),
            log_scale: conv(&p.log_scale),
            opacity_logit: conv(&p.opacity_logit),
            offset_table: conv(&p.offset_table),
            intensity_logit: conv(&p.intensity_logit),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn covariance_identity() {
        let c = build_covariance([1.0, 0.0, 0.0, 0.0], [0.0; 3]).unwrap();
        assert_eq!(c, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }

    #[test]
    fn covariance_scaled_axis() {
        let c = build_covariance([1.0, 0.0, 0.0, 0.0], [2f64.ln(), 0.0, 0.0]).unwrap();
        assert!((c[0][0] - 4.0).abs() < 1e-12);
        assert!((c[1][1] - 1.0).abs() < 1e-12);
        assert!((c[2][2] - 1.0).abs() < 1e-12);
        assert!(c[0][1].abs() < 1e-12);
    }

    #[test]
    fn covariance_zero_quaternion_is_error() {
        assert!(matches!(
            build_covariance([0.0f64; 4], [0.0; 3]),
            Err(Error::DegenerateRotation)
        ));
    }

    #[test]
    fn covariance_rotated_z() {
        // Unnormalized input is accepted.
        let q = [2.0 * FRAC_1_SQRT_2, 0.0, 0.0, 2.0 * FRAC_1_SQRT_2];
        let c = build_covariance(q, [2f64.ln(), 0.0, 0.0]).unwrap();
        let expect = [[1.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((c[i][j] - expect[i][j]).abs() < 1e-12, "{c:?}");
            }
        }
    }

    #[test]
    fn interp_examples() {
        let t5 = [0.1, 0.7, -0.3, 0.2, 0.9];
        assert_eq!(interp_table(&t5, 0.25).unwrap(), 0.7);
        assert_eq!(interp_table(&[0.0, 1.0, 0.0, 0.0, 0.0], 0.125).unwrap(), 0.5);
        assert_eq!(interp_table(&[0.3], 0.7).unwrap(), 0.3);
        assert!(matches!(interp_table(&t5, 1.5), Err(Error::TimeOutOfRange(_))));
        assert!(matches!(interp_table(&t5, -0.01), Err(Error::TimeOutOfRange(_))));
        assert!(matches!(interp_table::<f64>(&[], 0.5), Err(Error::EmptyTable)));
    }

    #[test]
    fn stencil_at_knot_is_single_entry() {
        let st = interp_stencil::<f32>(5, 0.25).unwrap();
        assert_eq!((st.lo, st.w_lo, st.w_hi), (1, 1.0, 0.0));
        let st = interp_stencil::<f64>(5, 0.3).unwrap();
        assert_eq!((st.lo, st.hi), (1, 2));
        assert!((st.w_hi - 0.2).abs() < 1e-12);
    }

    #[test]
    fn opacity_examples() {
        assert_eq!(opacity_at(0.0, &[0.0; 5], 0.37).unwrap(), 0.5);
        let v = opacity_at(0.0f64, &[0.0, 0.2, 0.4, 0.2, 0.0], 0.5).unwrap();
        assert!((v - 0.9).abs() < 1e-15);
        let hi = logit(0.9);
        assert_eq!(opacity_at(hi, &[0.0, 0.0, 0.5, 0.0, 0.0], 0.5).unwrap(), 1.0);
        assert_eq!(opacity_at(0.0, &[-0.9; 5], 0.1).unwrap(), 0.0);
    }

    #[test]
    fn max_opacity_examples() {
        let m = max_opacity(logit(0.01), &[0.0, 0.005, 0.001, -0.2, 0.0]);
        assert!((m - 0.015).abs() < 1e-12);
        assert!((max_opacity(logit(0.3), &[0.0; 5]) - 0.3).abs() < 1e-12);
        let m = max_opacity(logit(0.2), &[-0.1, -0.2, -0.05, -0.3, -0.15]);
        assert!((m - 0.15).abs() < 1e-12);
    }

    #[test]
    fn cloud_retain_keeps_lockstep() {
        let gs: Vec<Gaussian<f32>> = (0..5)
            .map(|i| Gaussian::isotropic([i as f32, 0.0, 0.0], 0.1, 0.2, 0.5, 5))
            .collect();
        let mut cloud = GaussianCloud::from_gaussians(5, &gs);
        cloud.retain(&[true, false, true, false, true]);
        assert_eq!(cloud.len(), 3);
        assert!(cloud.is_consistent());
        assert_eq!(cloud.position(1), [2.0, 0.0, 0.0]);
        assert_eq!(cloud.position(2), [4.0, 0.0, 0.0]);
        cloud.append(&cloud.params().clone());
        assert_eq!(cloud.len(), 6);
        assert!(cloud.is_consistent());
    }
}
