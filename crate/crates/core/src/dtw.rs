//! Dynamic time warping over multivariate series, exact and FastDTW.

use std::collections::HashSet;

use crate::error::{Error, Result};

pub const DEFAULT_RADIUS: usize = 1;

/// A `T × C` series stored row-major, one `C`-dimensional point per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    data: Vec<f64>,
    channels: usize,
}

impl Series {
    pub fn new(data: Vec<f64>, channels: usize) -> Result<Self> {
        if channels == 0 || data.is_empty() || data.len() % channels != 0 {
            return Err(Error::ShapeMismatch(format!(
                "series of {} values cannot hold {channels}-channel points",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("series contains non-finite values".into()));
        }
        Ok(Self { data, channels })
    }

    /// One-channel series.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec(), 1)
    }

    pub fn from_points<const C: usize>(points: &[[f64; C]]) -> Result<Self> {
        Self::new(points.iter().flatten().copied().collect(), C)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn point(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    /// Halves the time resolution by averaging adjacent pairs; an odd last point is kept.
    pub fn coarsen(&self) -> Series {
        let c = self.channels;
        let n = self.len();
        let mut data = Vec::with_capacity(n.div_ceil(2) * c);
        for t in (0..n).step_by(2) {
            if t + 1 < n {
                let (p, q) = (self.point(t), self.point(t + 1));
                data.extend(p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)));
            } else {
                data.extend_from_slice(self.point(t));
            }
        }
        Series { data, channels: c }
    }
}

/// Euclidean distance between two points.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// An alignment from `(0, 0)` to `(len_a - 1, len_b - 1)` and its accumulated cost.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpPath {
    pub path: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl WarpPath {
    pub fn len(&self) -> usize {
        self.path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.path.is_empty()
    }

    /// Total cost divided by the number of aligned pairs.
    pub fn normalized_cost(&self) -> f64 {
        self.total_cost / self.path.len() as f64
    }

    /// Checks endpoints and unit monotone steps.
    pub fn is_valid(&self, len_a: usize, len_b: usize) -> bool {
        let (Some(&first), Some(&last)) = (self.path.first(), self.path.last()) else {
            return false;
        };
        first == (0, 0)
            && last == (len_a - 1, len_b - 1)
            && self.path.windows(2).all(|w| {
                let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
                matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
            })
    }
}

/// Column range `[lo, hi)` allowed in each row of the cost matrix.
type Window = Vec<(usize, usize)>;

fn check_dims(a: &Series, b: &Series) -> Result<()> {
    if a.channels() != b.channels() {
        return Err(Error::DimensionMismatch(a.channels(), b.channels()));
    }
    Ok(())
}

/// Accumulated-cost matrix restricted to a per-row column window.
struct SparseCost {
    window: Window,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCost {
    fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = self.window[i];
        if j < lo || j >= hi {
            f64::INFINITY
        } else {
            self.values[self.offsets[i] + j - lo]
        }
    }
}

fn dtw_windowed<F>(a: &Series, b: &Series, window: Window, cost: &F) -> WarpPath
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let n = a.len();
    let m = b.len();
    let mut offsets = Vec::with_capacity(n);
    let mut total = 0;
    for &(lo, hi) in &window {
        offsets.push(total);
        total += hi - lo;
    }
    let mut acc = SparseCost { window, offsets, values: Vec::with_capacity(total) };
    for i in 0..n {
        let (lo, hi) = acc.window[i];
        for j in lo..hi {
            let prev = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => acc.get(0, j - 1),
                (_, 0) => acc.get(i - 1, 0),
                _ => acc.get(i - 1, j - 1).min(acc.get(i - 1, j)).min(acc.get(i, j - 1)),
            };
            let value = prev + cost(a.point(i), b.point(j));
            acc.values.push(value);
        }
    }

    let (mut i, mut j) = (n - 1, m - 1);
    let total_cost = acc.get(i, j);
    let mut path = vec![(i, j)];
    while (i, j) != (0, 0) {
        (i, j) = match (i, j) {
            (0, _) => (0, j - 1),
            (_, 0) => (i - 1, 0),
            _ => {
                // Diagonal first on ties.
                let candidates = [(i - 1, j - 1), (i - 1, j), (i, j - 1)];
                let mut best = candidates[0];
                for c in &candidates[1..] {
                    if acc.get(c.0, c.1) < acc.get(best.0, best.1) {
                        best = *c;
                    }
                }
                best
            }
        };
        path.push((i, j));
    }
    path.reverse();
    WarpPath { path, total_cost }
}

/// Full `O(len_a · len_b)` dynamic program with a caller-supplied point cost.
pub fn dtw_exact_with<F>(a: &Series, b: &Series, cost: F) -> Result<WarpPath>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    check_dims(a, b)?;
    let window = vec![(0, b.len()); a.len()];
    Ok(dtw_windowed(a, b, window, &cost))
}

/// Exact DTW under Euclidean point cost.
pub fn dtw_exact(a: &Series, b: &Series) -> Result<WarpPath> {
    dtw_exact_with(a, b, euclidean)
}

/// Projects a coarse path onto the finer grid after dilating it by `radius` coarse cells.
fn expand_window(path: &[(usize, usize)], len_a: usize, len_b: usize, radius: usize) -> Window {
    let r = radius as isize;
    let mut coarse: HashSet<(usize, usize)> = HashSet::new();
    for &(i, j) in path {
        for di in -r..=r {
            for dj in -r..=r {
                let (ci, cj) = (i as isize + di, j as isize + dj);
                if ci >= 0 && cj >= 0 {
                    coarse.insert((ci as usize, cj as usize));
                }
            }
        }
    }
    let mut window = vec![(usize::MAX, 0); len_a];
    for (ci, cj) in coarse {
        for fi in [2 * ci, 2 * ci + 1] {
            if fi >= len_a {
                continue;
            }
            for fj in [2 * cj, 2 * cj + 1] {
                if fj < len_b {
                    let (lo, hi) = &mut window[fi];
                    *lo = (*lo).min(fj);
                    *hi = (*hi).max(fj + 1);
                }
            }
        }
    }
    window
}

/// FastDTW with a caller-supplied point cost.
pub fn fastdtw_with<F>(a: &Series, b: &Series, radius: usize, cost: F) -> Result<WarpPath>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    check_dims(a, b)?;
    let full = |a: &Series, b: &Series| dtw_windowed(a, b, vec![(0, b.len()); a.len()], &cost);
    if is_base(a, b, radius) {
        return Ok(full(a, b));
    }

    // Coarsening pyramid down to the base level of radius 0, the deepest one needed.
    let mut pyramid = vec![(a.clone(), b.clone())];
    while !is_base(&pyramid.last().unwrap().0, &pyramid.last().unwrap().1, 0) {
        let (pa, pb) = pyramid.last().unwrap();
        pyramid.push((pa.coarsen(), pb.coarsen()));
    }

    // Radii are solved in increasing order and each level's window is widened to
    // contain the previous radius' window at that level, so the finest window for
    // radius r contains the one for r - 1 and the cost cannot increase with r.
    let mut previous: Vec<Option<Window>> = vec![None; pyramid.len()];
    let mut result = None;
    for q in 0..=radius {
        let mut current: Vec<Option<Window>> = vec![None; pyramid.len()];
        let mut coarse_path: Option<Vec<(usize, usize)>> = None;
        for level in (0..pyramid.len()).rev() {
            let (la, lb) = &pyramid[level];
            if is_base(la, lb, q) {
                // Coarser levels than this one are irrelevant for radius q.
                let window = vec![(0, lb.len()); la.len()];
                let warp = dtw_windowed(la, lb, window.clone(), &cost);
                current[level] = Some(window);
                coarse_path = Some(warp.path.clone());
                result = Some(warp);
                continue;
            }
            let Some(path) = coarse_path.take() else { continue };
            let mut window = expand_window(&path, la.len(), lb.len(), q);
            if let Some(prev) = &previous[level] {
                for (w, p) in window.iter_mut().zip(prev) {
                    w.0 = w.0.min(p.0);
                    w.1 = w.1.max(p.1);
                }
            }
            let warp = dtw_windowed(la, lb, window.clone(), &cost);
            current[level] = Some(window);
            coarse_path = Some(warp.path.clone());
            result = Some(warp);
        }
        previous = current;
    }
    Ok(result.expect("pyramid has at least one level"))
}

fn is_base(a: &Series, b: &Series, radius: usize) -> bool {
    let min_size = radius + 2;
    a.len() <= min_size || b.len() <= min_size
}

/// Textbook single-radius FastDTW, kept to measure how often the nested windows matter.
#[cfg(test)]
fn fastdtw_plain<F>(a: &Series, b: &Series, radius: usize, cost: &F) -> WarpPath
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    if is_base(a, b, radius) {
        return dtw_windowed(a, b, vec![(0, b.len()); a.len()], cost);
    }
    let coarse = fastdtw_plain(&a.coarsen(), &b.coarsen(), radius, cost);
    let window = expand_window(&coarse.path, a.len(), b.len(), radius);
    dtw_windowed(a, b, window, cost)
}

/// FastDTW under Euclidean point cost: recursive coarsening, then refinement inside
/// `radius` cells of the projected coarse path.
pub fn fastdtw(a: &Series, b: &Series, radius: usize) -> Result<WarpPath> {
    fastdtw_with(a, b, radius, euclidean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn abs(a: &[f64], b: &[f64]) -> f64 {
        (a[0] - b[0]).abs()
    }

    #[test]
    fn identical_series_diagonal() {
        let a = Series::from_points(&[[0.0, 1.0], [2.0, 3.0], [4.0, 5.0], [1.0, 1.0]]).unwrap();
        let w = dtw_exact(&a, &a).unwrap();
        assert_eq!(w.total_cost, 0.0);
        assert_eq!(w.path, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        assert_eq!(fastdtw(&a, &a, 0).unwrap().total_cost, 0.0);
    }

    #[test]
    fn small_scalar_example() {
        let a = Series::scalar(&[0.0, 1.0, 2.0]).unwrap();
        let b = Series::scalar(&[0.0, 2.0]).unwrap();
        let w = dtw_exact_with(&a, &b, abs).unwrap();
        assert_eq!(w.total_cost, 1.0);
        assert!(w.is_valid(3, 2));
    }

    #[test]
    fn dimension_mismatch() {
        let a = Series::scalar(&[0.0, 1.0]).unwrap();
        let b = Series::from_points(&[[0.0, 1.0]]).unwrap();
        assert!(matches!(dtw_exact(&a, &b), Err(Error::DimensionMismatch(1, 2))));
        assert!(matches!(fastdtw(&a, &b, 1), Err(Error::DimensionMismatch(1, 2))));
    }

    #[test]
    fn coarsen_keeps_odd_tail() {
        let a = Series::scalar(&[1.0, 3.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(a.coarsen(), Series::scalar(&[2.0, 6.0, 9.0]).unwrap());
    }

    #[test]
    fn path_cost_matches_sum_and_is_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let la = rng.gen_range(1..40);
            let lb = rng.gen_range(1..40);
            let a = Series::new((0..la * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(), 3).unwrap();
            let b = Series::new((0..lb * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(), 3).unwrap();
            for w in [dtw_exact(&a, &b).unwrap(), fastdtw(&a, &b, 1).unwrap()] {
                assert!(w.is_valid(la, lb));
                let sum = w.path.iter().fold(0.0, |s, &(i, j)| s + euclidean(a.point(i), b.point(j)));
                assert_eq!(sum, w.total_cost);
            }
        }
    }

    #[test]
    fn cost_never_increases_with_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let la = rng.gen_range(1..48);
            let lb = rng.gen_range(1..48);
            let a = Series::new((0..la * 2).map(|_| rng.gen_range(-1.0..1.0)).collect(), 2).unwrap();
            let b = Series::new((0..lb * 2).map(|_| rng.gen_range(-1.0..1.0)).collect(), 2).unwrap();
            let plain = fastdtw_plain(&a, &b, 0, &euclidean);
            assert_eq!(fastdtw(&a, &b, 0).unwrap(), plain);
            for r in 1..4 {
                let nested = fastdtw(&a, &b, r).unwrap().total_cost;
                assert!(nested <= fastdtw(&a, &b, r - 1).unwrap().total_cost);
            }
        }
    }

    #[test]
    fn window_covers_projection() {
        let w = expand_window(&[(0, 0), (1, 1), (2, 2)], 5, 6, 0);
        assert_eq!(w, vec![(0, 2), (0, 2), (2, 4), (2, 4), (4, 6)]);
    }
}
