//! Exact k-nearest-neighbour search over small 3-D point sets.
//!
//! Neighbour lists exclude the query point itself and are ordered by
//! ascending distance, ties broken by ascending point index. Both search
//! paths return identical lists.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;

/// Clouds with at least this many points use the voxel-hash search.
pub const BRUTE_FORCE_LIMIT: usize = 20_000;

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn by_distance(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn smallest_k(mut candidates: Vec<(f64, usize)>, k: usize) -> Vec<usize> {
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, by_distance);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(by_distance);
    candidates.into_iter().map(|(_, j)| j).collect()
}

/// The `k` nearest neighbours of every point (fewer when the cloud is smaller).
pub fn k_nearest(points: &[[f64; 3]], k: usize) -> Vec<Vec<usize>> {
    if points.len() < BRUTE_FORCE_LIMIT {
        brute_force(points, k)
    } else {
        VoxelHash::build(points, k).all_neighbours(k)
    }
}

pub(crate) fn brute_force(points: &[[f64; 3]], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new(); points.len()];
    }
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let candidates = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| (dist2(p, q), j))
                .collect();
            smallest_k(candidates, k)
        })
        .collect()
}

pub(crate) struct VoxelHash<'a> {
    points: &'a [[f64; 3]],
    origin: [f64; 3],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl<'a> VoxelHash<'a> {
    /// Sizes cells so that an average occupied cell holds roughly `k` points.
    pub(crate) fn build(points: &'a [[f64; 3]], k: usize) -> Self {
        let mut origin = [f64::INFINITY; 3];
        let mut upper = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                origin[a] = origin[a].min(p[a]);
                upper[a] = upper[a].max(p[a]);
            }
        }
        let extent = (0..3)
            .map(|a| upper[a] - origin[a])
            .fold(0.0f64, f64::max);
        // Scans are closer to surfaces than volumes, hence the square root.
        let per_axis = ((points.len() as f64) / (k.max(1) as f64)).sqrt().max(1.0);
        let mut cell = extent / per_axis;
        if !(cell > 0.0 && cell.is_finite()) {
            cell = 1.0;
        }
        if points.is_empty() {
            origin = [0.0; 3];
        }
        let mut grid = VoxelHash {
            points,
            origin,
            cell,
            cells: HashMap::new(),
            lo: [i64::MAX; 3],
            hi: [i64::MIN; 3],
        };
        for (i, p) in points.iter().enumerate() {
            let key = grid.key(p);
            for (a, &k) in key.iter().enumerate() {
                grid.lo[a] = grid.lo[a].min(k);
                grid.hi[a] = grid.hi[a].max(k);
            }
            grid.cells.entry(key).or_default().push(i);
        }
        grid
    }

    fn key(&self, p: &[f64; 3]) -> [i64; 3] {
        [0, 1, 2].map(|a| ((p[a] - self.origin[a]) / self.cell).floor() as i64)
    }

    pub(crate) fn all_neighbours(&self, k: usize) -> Vec<Vec<usize>> {
        (0..self.points.len())
            .into_par_iter()
            .map(|i| self.neighbours(i, k))
            .collect()
    }

    fn neighbours(&self, i: usize, k: usize) -> Vec<usize> {
        if k == 0 {
            return Vec::new();
        }
        let p = &self.points[i];
        let center = self.key(p);
        // Shells beyond this radius contain no cells.
        let max_shell = (0..3)
            .map(|a| (center[a] - self.lo[a]).max(self.hi[a] - center[a]))
            .max()
            .unwrap_or(0);
        let mut candidates: Vec<(f64, usize)> = Vec::new();
        for s in 0..=max_shell {
            self.visit_shell(center, s, |j| {
                if j != i {
                    candidates.push((dist2(p, &self.points[j]), j));
                }
            });
            if candidates.len() >= k {
                candidates.select_nth_unstable_by(k - 1, by_distance);
                candidates.truncate(k);
                // Unvisited cells are at least `s` whole cells away.
                let kth = candidates[k - 1].0.sqrt();
                if kth < s as f64 * self.cell {
                    break;
                }
            }
        }
        smallest_k(candidates, k)
    }

    fn visit_shell(&self, c: [i64; 3], s: i64, mut f: impl FnMut(usize)) {
        for dx in -s..=s {
            for dy in -s..=s {
                let on_face = dx.abs() == s || dy.abs() == s;
                let dzs: Box<dyn Iterator<Item = i64>> = if on_face {
                    Box::new(-s..=s)
                } else if s == 0 {
                    Box::new(std::iter::once(0))
                } else {
                    Box::new([-s, s].into_iter())
                };
                for dz in dzs {
                    if let Some(ids) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        ids.iter().for_each(|&j| f(j));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn brute_force_tie_break_by_index() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert_eq!(brute_force(&pts, 2)[0], vec![1, 2]);
    }

    #[test]
    fn voxel_hash_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 5, 50, 700] {
            let pts: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    [
                        rng.random_range(-30.0..30.0),
                        rng.random_range(-30.0..30.0),
                        rng.random_range(-2.0..2.0),
                    ]
                })
                .collect();
            for k in [1, 3, 10] {
                assert_eq!(VoxelHash::build(&pts, k).all_neighbours(k), brute_force(&pts, k));
            }
        }
    }

    #[test]
    fn voxel_hash_on_lattice_with_ties() {
        let pts: Vec<[f64; 3]> = (0..6)
            .flat_map(|i| (0..6).map(move |j| [i as f64, j as f64, 0.0]))
            .collect();
        assert_eq!(VoxelHash::build(&pts, 8).all_neighbours(8), brute_force(&pts, 8));
    }

    #[test]
    fn coincident_points() {
        let pts = vec![[1.0, 1.0, 1.0]; 12];
        assert_eq!(VoxelHash::build(&pts, 4).all_neighbours(4), brute_force(&pts, 4));
    }
}
