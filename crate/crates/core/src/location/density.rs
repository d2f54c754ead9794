//! Weighted DBSCAN on a fine lat/lon grid. Whole cells are accepted or
//! rejected from bounding-box distance bounds, so long stays with thousands
//! of co-located fixes cost roughly linear time. Only cells straddling the
//! radius fall back to per-point haversine checks, which keeps the result
//! identical to the pairwise definition.

use std::collections::HashMap;

use crate::geo::{LatLon, EARTH_RADIUS_M};

/// Cells per `eps` along each axis.
const CELLS_PER_EPS: f64 = 3.0;

#[derive(Debug, Clone, Copy)]
struct BBox {
    lat: (f64, f64),
    lon: (f64, f64),
}

impl BBox {
    fn point(p: LatLon) -> Self {
        Self { lat: (p.lat, p.lat), lon: (p.lon, p.lon) }
    }

    fn grow(&mut self, p: LatLon) {
        self.lat = (self.lat.0.min(p.lat), self.lat.1.max(p.lat));
        self.lon = (self.lon.0.min(p.lon), self.lon.1.max(p.lon));
    }

    /// Lower and upper bounds on the distance between any two points of the boxes.
    fn bounds(&self, other: &BBox) -> (f64, f64) {
        let gap = |a: (f64, f64), b: (f64, f64)| (a.0 - b.1).max(b.0 - a.1).max(0.0);
        let span = |a: (f64, f64), b: (f64, f64)| (a.1 - b.0).max(b.1 - a.0);
        let lats = [self.lat.0, self.lat.1, other.lat.0, other.lat.1];
        let cos_lo = lats.iter().map(|l| l.abs()).fold(0.0_f64, f64::max).min(90.0).to_radians().cos();
        let cos_hi = lats.iter().map(|l| l.abs()).fold(90.0_f64, f64::min).to_radians().cos();
        let m = EARTH_RADIUS_M.to_radians();
        let lo = (gap(self.lat, other.lat) * m).hypot(gap(self.lon, other.lon) * m * cos_lo);
        let hi = (span(self.lat, other.lat) * m).hypot(span(self.lon, other.lon) * m * cos_hi);
        (lo, hi)
    }
}

#[derive(Debug, Default)]
struct Cell {
    members: Vec<usize>,
    bbox: Option<BBox>,
    weight: f64,
    core: Vec<usize>,
    core_bbox: Option<BBox>,
    min_cluster: Option<usize>,
}

pub(super) struct DensityGrid<'a> {
    points: &'a [LatLon],
    eps: f64,
    margin: f64,
    cell_lat: f64,
    cell_lon: f64,
    cells: HashMap<(i64, i64), Cell>,
}

fn grow(slot: &mut Option<BBox>, p: LatLon) {
    match slot {
        Some(b) => b.grow(p),
        None => *slot = Some(BBox::point(p)),
    }
}

impl<'a> DensityGrid<'a> {
    pub(super) fn new(points: &'a [LatLon], weights: &[f64], eps: f64) -> Self {
        let max_abs_lat = points.iter().map(|p| p.lat.abs()).fold(0.0_f64, f64::max).min(89.0);
        let cell_lat = (eps / CELLS_PER_EPS / EARTH_RADIUS_M).to_degrees().max(1e-9);
        let cell_lon = cell_lat / max_abs_lat.to_radians().cos();
        let mut cells: HashMap<(i64, i64), Cell> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let key = ((p.lat / cell_lat).floor() as i64, (p.lon / cell_lon).floor() as i64);
            let cell = cells.entry(key).or_default();
            cell.members.push(i);
            cell.weight += weights[i];
            grow(&mut cell.bbox, *p);
        }
        Self { points, eps, margin: (eps * 1e-3).max(1e-3), cell_lat, cell_lon, cells }
    }

    /// Keys of every cell that may hold a point within `eps` of the box.
    fn nearby(&self, b: &BBox) -> Vec<(i64, i64)> {
        let dlat = (self.eps / EARTH_RADIUS_M).to_degrees() * 1.01;
        let max_lat = b.lat.0.abs().max(b.lat.1.abs()) + dlat;
        let dlon = dlat / max_lat.min(89.9).to_radians().cos();
        let i0 = ((b.lat.0 - dlat) / self.cell_lat).floor() as i64;
        let i1 = ((b.lat.1 + dlat) / self.cell_lat).floor() as i64;
        let j0 = ((b.lon.0 - dlon) / self.cell_lon).floor() as i64;
        let j1 = ((b.lon.1 + dlon) / self.cell_lon).floor() as i64;
        let mut keys = Vec::new();
        for i in i0..=i1 {
            for j in j0..=j1 {
                if self.cells.contains_key(&(i, j)) {
                    keys.push((i, j));
                }
            }
        }
        keys
    }

    fn within(&self, a: usize, b: usize) -> bool {
        self.points[a].distance_m(&self.points[b]) <= self.eps
    }

    /// Sum of `weights` over all samples within `eps` of sample `i`.
    pub(super) fn density(&self, i: usize, weights: &[f64]) -> f64 {
        let pb = BBox::point(self.points[i]);
        let mut total = 0.0;
        for key in self.nearby(&pb) {
            let cell = &self.cells[&key];
            let Some(bb) = cell.bbox else { continue };
            let (lo, hi) = pb.bounds(&bb);
            if lo > self.eps + self.margin {
                continue;
            }
            if hi <= self.eps - self.margin {
                total += cell.weight;
            } else {
                total += cell.members.iter().filter(|&&j| self.within(i, j)).map(|&j| weights[j]).sum::<f64>();
            }
        }
        total
    }

    /// Cluster label per sample, numbered in order of each cluster's lowest
    /// core index. Border samples join the lowest-numbered reachable cluster.
    pub(super) fn cluster(mut self, core: &[bool]) -> Vec<Option<usize>> {
        let n = self.points.len();
        for cell in self.cells.values_mut() {
            cell.core = cell.members.iter().copied().filter(|&i| core[i]).collect();
            for &i in &cell.core {
                grow(&mut cell.core_bbox, self.points[i]);
            }
        }
        let mut uf = UnionFind::new(n);
        let keys: Vec<(i64, i64)> = self.cells.keys().copied().collect();
        for key in &keys {
            let cell = &self.cells[key];
            let Some(cb) = cell.core_bbox else { continue };
            if cb.bounds(&cb).1 <= self.eps - self.margin {
                for w in cell.core.windows(2) {
                    uf.union(w[0], w[1]);
                }
            }
            for other in self.nearby(&cb) {
                if other < *key {
                    continue;
                }
                let oc = &self.cells[&other];
                let Some(ob) = oc.core_bbox else { continue };
                let (lo, hi) = cb.bounds(&ob);
                if lo > self.eps + self.margin || uf.find(cell.core[0]) == uf.find(oc.core[0]) && hi <= self.eps - self.margin {
                    continue;
                }
                if hi <= self.eps - self.margin {
                    uf.union(cell.core[0], oc.core[0]);
                    continue;
                }
                for &a in &cell.core {
                    for &b in &oc.core {
                        if uf.find(a) != uf.find(b) && self.within(a, b) {
                            uf.union(a, b);
                        }
                    }
                }
            }
        }

        let mut label: Vec<Option<usize>> = vec![None; n];
        let mut ids: HashMap<usize, usize> = HashMap::new();
        for i in 0..n {
            if core[i] {
                let root = uf.find(i);
                let next = ids.len();
                label[i] = Some(*ids.entry(root).or_insert(next));
            }
        }
        for cell in self.cells.values_mut() {
            cell.min_cluster = cell.core.iter().filter_map(|&i| label[i]).min();
        }
        for i in 0..n {
            if core[i] {
                continue;
            }
            let pb = BBox::point(self.points[i]);
            let mut best: Option<usize> = None;
            for key in self.nearby(&pb) {
                let cell = &self.cells[&key];
                let (Some(cb), Some(min_id)) = (cell.core_bbox, cell.min_cluster) else { continue };
                if best.is_some_and(|b| b <= min_id) {
                    continue;
                }
                let (lo, hi) = pb.bounds(&cb);
                if lo > self.eps + self.margin {
                    continue;
                }
                let found = if hi <= self.eps - self.margin {
                    Some(min_id)
                } else {
                    cell.core.iter().filter(|&&j| self.within(i, j)).filter_map(|&j| label[j]).min()
                };
                best = match (best, found) {
                    (Some(b), Some(f)) => Some(b.min(f)),
                    (b, f) => b.or(f),
                };
            }
            label[i] = best;
        }
        label
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index as root keeps roots stable; numbering is done separately
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::offset_m;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    fn brute(points: &[LatLon], weights: &[f64], eps: f64, min_pts: f64) -> (Vec<f64>, Vec<Option<usize>>) {
        let n = points.len();
        let nb: Vec<Vec<usize>> =
            (0..n).map(|i| (0..n).filter(|&j| points[i].distance_m(&points[j]) <= eps).collect()).collect();
        let dens: Vec<f64> = nb.iter().map(|l| l.iter().map(|&j| weights[j]).sum()).collect();
        let core: Vec<bool> = dens.iter().map(|&d| d >= min_pts).collect();
        let mut label = vec![None; n];
        let mut next = 0;
        for seed in 0..n {
            if !core[seed] || label[seed].is_some() {
                continue;
            }
            label[seed] = Some(next);
            let mut q = VecDeque::from([seed]);
            while let Some(p) = q.pop_front() {
                for &j in &nb[p] {
                    if label[j].is_none() {
                        label[j] = Some(next);
                        if core[j] {
                            q.push_back(j);
                        }
                    }
                }
            }
            next += 1;
        }
        (dens, label)
    }

    proptest! {
        #[test]
        fn matches_pairwise_dbscan(
            offsets in proptest::collection::vec((-300.0f64..300.0, -300.0f64..300.0, 0.0f64..1.0), 1..120),
            lat in -60.0f64..60.0,
            eps in 10.0f64..80.0,
            min_pts in 1.0f64..8.0,
        ) {
            let base = LatLon::new(lat, 23.0);
            let points: Vec<LatLon> = offsets.iter().map(|&(n, e, _)| offset_m(base, n, e)).collect();
            let weights: Vec<f64> = offsets.iter().map(|o| o.2).collect();
            let (dens, want) = brute(&points, &weights, eps, min_pts);
            let grid = DensityGrid::new(&points, &weights, eps);
            let got: Vec<f64> = (0..points.len()).map(|i| grid.density(i, &weights)).collect();
            for (a, b) in got.iter().zip(&dens) {
                prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
            let core: Vec<bool> = dens.iter().map(|&d| d >= min_pts).collect();
            prop_assert_eq!(grid.cluster(&core), want);
        }
    }

    #[test]
    fn dense_stay_is_fast() {
        let base = LatLon::new(40.6, 22.9);
        let points: Vec<LatLon> =
            (0..20_000).map(|i| offset_m(base, ((i * 37) % 23) as f64 - 11.0, ((i * 17) % 19) as f64 - 9.0)).collect();
        let weights = vec![1.0; points.len()];
        let start = std::time::Instant::now();
        let grid = DensityGrid::new(&points, &weights, 50.0);
        let core: Vec<bool> = (0..points.len()).map(|i| grid.density(i, &weights) >= 10.0).collect();
        let labels = grid.cluster(&core);
        assert!(labels.iter().all(|l| *l == Some(0)));
        assert!(start.elapsed().as_secs_f64() < 5.0);
    }
}
