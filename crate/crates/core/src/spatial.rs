//! Uniform bucket grid over a point set: nearest-neighbour and box queries.

use std::sync::Arc;

use crate::field::Point;

#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Arc<[Point]>,
    lo: Point,
    cell: [f64; 2],
    dims: [usize; 2],
    /// CSR layout: bucket `b` holds `items[start[b]..start[b + 1]]`, ascending.
    start: Vec<usize>,
    items: Vec<u32>,
}

impl SpatialIndex {
    pub fn new(points: Arc<[Point]>) -> Self {
        let n = points.len().max(1);
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points.iter() {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 2];
            hi = [1.0; 2];
        }
        let per_axis = ((n as f64).sqrt().ceil() as usize).clamp(1, 512);
        let mut dims = [per_axis; 2];
        let mut cell = [1.0; 2];
        for k in 0..2 {
            let span = hi[k] - lo[k];
            if span > 0.0 {
                cell[k] = span / per_axis as f64;
            } else {
                dims[k] = 1;
            }
        }
        let mut counts = vec![0usize; dims[0] * dims[1] + 1];
        let buckets: Vec<usize> = points
            .iter()
            .map(|p| {
                let [i, j] = cell_of(*p, lo, cell, dims);
                j * dims[0] + i
            })
            .collect();
        for &b in &buckets {
            counts[b + 1] += 1;
        }
        for b in 1..counts.len() {
            counts[b] += counts[b - 1];
        }
        let start = counts.clone();
        let mut fill = counts;
        let mut items = vec![0u32; points.len()];
        for (idx, &b) in buckets.iter().enumerate() {
            items[fill[b]] = idx as u32;
            fill[b] += 1;
        }
        SpatialIndex { points, lo, cell, dims, start, items }
    }

    pub fn points(&self) -> &Arc<[Point]> {
        &self.points
    }

    fn bucket(&self, i: usize, j: usize) -> &[u32] {
        let b = j * self.dims[0] + i;
        &self.items[self.start[b]..self.start[b + 1]]
    }

    /// Index of the Euclidean-closest point; ties go to the lowest index.
    pub fn nearest(&self, t: Point) -> Option<usize> {
        self.nearest_where(t, |_| true)
    }

    /// Closest point among indices accepted by `keep`.
    pub fn nearest_where(&self, t: Point, keep: impl Fn(usize) -> bool) -> Option<usize> {
        if self.points.is_empty() {
            return None;
        }
        let [ci, cj] = cell_of(t, self.lo, self.cell, self.dims);
        let cmin = if self.dims[0] > 1 && self.dims[1] > 1 {
            self.cell[0].min(self.cell[1])
        } else if self.dims[0] > 1 {
            self.cell[0]
        } else {
            self.cell[1]
        };
        let mut best: Option<(f64, usize)> = None;
        let max_ring = self.dims[0].max(self.dims[1]);
        for r in 0..=max_ring {
            let (i0, i1) = (ci.saturating_sub(r), (ci + r).min(self.dims[0] - 1));
            let (j0, j1) = (cj.saturating_sub(r), (cj + r).min(self.dims[1] - 1));
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let on_ring = i + r == ci || i == ci + r || j + r == cj || j == cj + r;
                    if !on_ring {
                        continue;
                    }
                    for &idx in self.bucket(i, j) {
                        if !keep(idx as usize) {
                            continue;
                        }
                        let p = self.points[idx as usize];
                        let d = (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2);
                        let better = match best {
                            None => true,
                            Some((bd, bi)) => d < bd || (d == bd && (idx as usize) < bi),
                        };
                        if better {
                            best = Some((d, idx as usize));
                        }
                    }
                }
            }
            if let Some((bd, _)) = best {
                // Anything outside rings 0..=r is at least r·cmin away.
                let bound = r as f64 * cmin;
                if bd < bound * bound {
                    break;
                }
            }
        }
        best.map(|(_, i)| i)
    }

    /// Indices (ascending) with `|p₁−t₁| ≤ b` and `|p₂−t₂| ≤ b`.
    pub fn within_box(&self, t: Point, b: f64) -> Vec<usize> {
        let [i0, j0] = cell_of([t[0] - b, t[1] - b], self.lo, self.cell, self.dims);
        let [i1, j1] = cell_of([t[0] + b, t[1] + b], self.lo, self.cell, self.dims);
        let mut out = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                for &idx in self.bucket(i, j) {
                    let p = self.points[idx as usize];
                    if (p[0] - t[0]).abs() <= b && (p[1] - t[1]).abs() <= b {
                        out.push(idx as usize);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn cell_of(p: Point, lo: Point, cell: [f64; 2], dims: [usize; 2]) -> [usize; 2] {
    let mut out = [0usize; 2];
    for k in 0..2 {
        let x = ((p[k] - lo[k]) / cell[k]).floor();
        out[k] = if x.is_nan() || x < 0.0 { 0 } else { (x as usize).min(dims[k] - 1) };
    }
    out
}
