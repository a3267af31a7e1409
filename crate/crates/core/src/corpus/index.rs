use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestResult {
    /// L1 distance to the nearest row.
    pub distance: f64,
    /// Lowest row index attaining `distance`.
    pub index: usize,
}

/// Exact L1 nearest-neighbour search.
///
/// Rows are additionally ordered by their coordinate sum. Since
/// `|sum(q) - sum(x)| <= |q - x|_1`, the scan walks outward from the query's
/// sum and stops in each direction once that bound exceeds the best distance.
/// Distance accumulation abandons a row as soon as the partial sum exceeds
/// the best distance. Both prunes are strict, so every row tying the best
/// distance is fully evaluated and the lowest index wins, exactly as in a
/// plain double loop.
#[derive(Debug, Clone)]
pub struct NearestIndex {
    data: Vec<f64>,
    dim: usize,
    /// Row indices sorted by (sum, index).
    order: Vec<usize>,
    sorted_sums: Vec<f64>,
    /// Rows copied in `order`, for contiguous scans.
    sorted_rows: Vec<f64>,
}

/// Relative slack on the sum bound; covers rounding in the row sums.
const SUM_SLACK: f64 = 1e-9;

impl NearestIndex {
    pub fn new(data: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim), "row-major data must be a multiple of dim");
        let sums: Vec<f64> = data.chunks_exact(dim).map(|r| r.iter().sum()).collect();
        let mut order: Vec<usize> = (0..sums.len()).collect();
        order.sort_by(|&a, &b| sums[a].total_cmp(&sums[b]).then(a.cmp(&b)));
        let sorted_sums = order.iter().map(|&i| sums[i]).collect();
        let mut sorted_rows = Vec::with_capacity(data.len());
        for &i in &order {
            sorted_rows.extend_from_slice(&data[i * dim..(i + 1) * dim]);
        }
        NearestIndex { data, dim, order, sorted_sums, sorted_rows }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Panics on an empty index or a query of the wrong width.
    pub fn nearest(&self, q: &[f64]) -> NearestResult {
        assert_eq!(q.len(), self.dim);
        assert!(!self.is_empty());
        let qs: f64 = q.iter().sum();
        let n = self.len();
        let start = self.sorted_sums.partition_point(|&s| s < qs);
        let mut best = NearestResult { distance: f64::INFINITY, index: usize::MAX };

        let mut lo = start; // next candidate on the left is lo - 1
        let mut hi = start; // next candidate on the right is hi
        let (mut left_open, mut right_open) = (lo > 0, hi < n);
        while left_open || right_open {
            let gap_left = if left_open { qs - self.sorted_sums[lo - 1] } else { f64::INFINITY };
            let gap_right = if right_open { self.sorted_sums[hi] - qs } else { f64::INFINITY };
            let (slot, gap) = if gap_left <= gap_right {
                lo -= 1;
                (lo, gap_left)
            } else {
                hi += 1;
                (hi - 1, gap_right)
            };
            let slack = SUM_SLACK * (1.0 + qs.abs() + self.sorted_sums[slot].abs());
            if gap > best.distance + slack {
                // Everything further out on this side is at least as far.
                if slot < start {
                    left_open = false;
                } else {
                    right_open = false;
                }
            } else {
                let row = &self.sorted_rows[slot * self.dim..(slot + 1) * self.dim];
                if let Some(d) = bounded_l1(q, row, best.distance) {
                    let idx = self.order[slot];
                    if d < best.distance || (d == best.distance && idx < best.index) {
                        best = NearestResult { distance: d, index: idx };
                    }
                }
            }
            left_open &= lo > 0;
            right_open &= hi < n;
        }
        best
    }

    /// Row-major batch query; results are in input order.
    pub fn nearest_batch(&self, queries: &[f64]) -> Result<Vec<NearestResult>> {
        if !queries.len().is_multiple_of(self.dim) {
            return Err(Error::DimensionMismatch { expected: self.dim, found: queries.len() % self.dim });
        }
        if self.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(queries.par_chunks_exact(self.dim).map(|q| self.nearest(q)).collect())
    }
}

/// Sequential L1 sum; `None` once the partial sum exceeds `bound`.
#[inline]
fn bounded_l1(a: &[f64], b: &[f64], bound: f64) -> Option<f64> {
    let mut acc = 0.0;
    let mut i = 0;
    let n = a.len();
    while i + 4 <= n {
        acc += (a[i] - b[i]).abs();
        acc += (a[i + 1] - b[i + 1]).abs();
        acc += (a[i + 2] - b[i + 2]).abs();
        acc += (a[i + 3] - b[i + 3]).abs();
        if acc > bound {
            return None;
        }
        i += 4;
    }
    while i < n {
        acc += (a[i] - b[i]).abs();
        i += 1;
    }
    (acc <= bound).then_some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::l1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(data: &[f64], dim: usize, q: &[f64]) -> NearestResult {
        let mut best = NearestResult { distance: f64::INFINITY, index: 0 };
        for (i, row) in data.chunks_exact(dim).enumerate() {
            let d = l1(q, row);
            if d < best.distance {
                best = NearestResult { distance: d, index: i };
            }
        }
        best
    }

    #[test]
    fn matches_naive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dim = 7;
        let data: Vec<f64> = (0..dim * 500).map(|_| rng.random_range(-1.0..1.0)).collect();
        let index = NearestIndex::new(data.clone(), dim);
        for _ in 0..300 {
            let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
            assert_eq!(index.nearest(&q), naive(&data, dim, &q));
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // Rows 1 and 3 are both at distance 1 from the query; duplicates of row 0 at 2 and 4.
        let data = vec![5.0, 5.0, 1.0, 0.0, 5.0, 5.0, 0.0, 1.0, 5.0, 5.0];
        let index = NearestIndex::new(data, 2);
        let hit = index.nearest(&[0.0, 0.0]);
        assert_eq!(hit, NearestResult { distance: 1.0, index: 1 });
        let hit = index.nearest(&[5.0, 5.0]);
        assert_eq!(hit, NearestResult { distance: 0.0, index: 0 });
    }

    #[test]
    fn query_equal_to_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..4 * 50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let index = NearestIndex::new(data.clone(), 4);
        let hit = index.nearest(&data[28..32]);
        assert_eq!(hit.distance, 0.0);
        assert!(hit.index <= 7);
    }

    #[test]
    fn adding_rows_never_increases_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data: Vec<f64> = (0..3 * 40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let queries: Vec<f64> = (0..3 * 30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let before = NearestIndex::new(data.clone(), 3).nearest_batch(&queries).unwrap();
        data.extend((0..3 * 40).map(|_| rng.random_range(-1.0..1.0)));
        let after = NearestIndex::new(data, 3).nearest_batch(&queries).unwrap();
        for (b, a) in before.iter().zip(&after) {
            assert!(a.distance <= b.distance);
        }
    }
}
