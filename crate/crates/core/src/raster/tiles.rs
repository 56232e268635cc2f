use crate::camera::ProjectedGaussian;
use crate::math::Real;

/// Default tile edge length in pixels.
pub const TILE_SIZE: usize = 16;

/// Per-tile, depth-sorted lists of indices into a projected-Gaussian slice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    offsets: Vec<usize>,
    entries: Vec<u32>,
}

impl TileBins {
    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Indices (into the projected slice) listed for tile `tile`.
    pub fn tile(&self, tile: usize) -> &[u32] {
        &self.entries[self.offsets[tile]..self.offsets[tile + 1]]
    }

    pub fn tile_at(&self, tx: usize, ty: usize) -> &[u32] {
        self.tile(ty * self.tiles_x + tx)
    }

    pub fn total_entries(&self) -> usize {
        self.entries.len()
    }

    pub(crate) fn tile_offset(&self, tile: usize) -> usize {
        self.offsets[tile]
    }

    pub(crate) fn entries(&self) -> &[u32] {
        &self.entries
    }

    /// Pixel rectangle `(x0, y0, x1, y1)` (exclusive ends) covered by a tile.
    pub fn pixel_rect(&self, tile: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (x0, y0, (x0 + self.tile_size).min(width), (y0 + self.tile_size).min(height))
    }
}

/// Orders projected Gaussians front to back, ties broken by source index.
pub fn depth_order<T: Real>(projected: &[ProjectedGaussian<T>]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..projected.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        let (pa, pb) = (&projected[a as usize], &projected[b as usize]);
        pa.depth
            .partial_cmp(&pb.depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(pa.index.cmp(&pb.index))
    });
    order
}

/// Inclusive tile range touched by a projected Gaussian's 3σ bounding box,
/// or `None` when it misses the image. Half a pixel of slack keeps the
/// lists a superset of the per-pixel cutoff test.
fn tile_range<T: Real>(
    p: &ProjectedGaussian<T>,
    width: usize,
    height: usize,
    tile_size: usize,
) -> Option<(usize, usize, usize, usize)> {
    let slack = T::c(super::BOX_SLACK);
    let ts = T::c(tile_size as f64);
    let x_lo = p.mean[0] - p.extent[0] - slack;
    let x_hi = p.mean[0] + p.extent[0] + slack;
    let y_lo = p.mean[1] - p.extent[1] - slack;
    let y_hi = p.mean[1] + p.extent[1] + slack;
    if x_hi < T::zero() || y_hi < T::zero() || x_lo > T::c(width as f64) || y_lo > T::c(height as f64) {
        return None;
    }
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let clamp = |v: T, n: usize| -> usize {
        let f = (v / ts).floor();
        if f < T::zero() {
            0
        } else {
            f.to_usize().unwrap_or(usize::MAX).min(n - 1)
        }
    };
    Some((clamp(x_lo, tiles_x), clamp(x_hi, tiles_x), clamp(y_lo, tiles_y), clamp(y_hi, tiles_y)))
}

/// Bins projected Gaussians into `tile_size` square tiles. Each tile lists
/// every Gaussian whose 3σ screen ellipse can reach it, sorted ascending by
/// view depth with ties broken by ascending source index.
pub fn bin_and_sort<T: Real>(
    projected: &[ProjectedGaussian<T>],
    width: usize,
    height: usize,
    tile_size: usize,
) -> TileBins {
    let tile_size = tile_size.max(1);
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let n_tiles = tiles_x * tiles_y;
    let order = depth_order(projected);
    let ranges: Vec<_> = projected
        .iter()
        .map(|p| tile_range(p, width, height, tile_size))
        .collect();

    let mut counts = vec![0usize; n_tiles + 1];
    for r in ranges.iter().flatten() {
        let (x0, x1, y0, y1) = *r;
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                counts[ty * tiles_x + tx + 1] += 1;
            }
        }
    }
    for i in 0..n_tiles {
        counts[i + 1] += counts[i];
    }
    let offsets = counts;
    let mut cursor = offsets.clone();
    let mut entries = vec![0u32; offsets[n_tiles]];
    // Filling in global depth order leaves every tile list sorted.
    for &k in &order {
        if let Some((x0, x1, y0, y1)) = ranges[k as usize] {
            for ty in y0..=y1 {
                for tx in x0..=x1 {
                    let tile = ty * tiles_x + tx;
                    entries[cursor[tile]] = k;
                    cursor[tile] += 1;
                }
            }
        }
    }
    TileBins {
        tile_size,
        tiles_x,
        tiles_y,
        offsets,
        entries,
    }
}
