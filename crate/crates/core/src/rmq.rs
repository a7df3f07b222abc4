//! Range-minimum queries over `f64` samples.
//!
//! Sparse table over block minima, plus a linear scan inside the (at most two)
//! partial blocks of a query. Memory is `O(M + (M/B) log(M/B))`; a query
//! touches at most `2B` samples and two table cells.

const BLOCK: usize = 32;

#[derive(Debug, Clone)]
pub struct SparseMin {
    values: Vec<f64>,
    // levels[k][b] = min of blocks b .. b + 2^k
    levels: Vec<Vec<f64>>,
}

impl SparseMin {
    pub fn new(values: &[f64]) -> Self {
        let blocks: Vec<f64> = values
            .chunks(BLOCK)
            .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let mut levels = vec![blocks];
        let mut width = 1;
        while 2 * width <= levels[0].len() {
            let prev = levels.last().expect("level 0 exists");
            let next: Vec<f64> = (0..prev.len() - width).map(|i| prev[i].min(prev[i + width])).collect();
            levels.push(next);
            width *= 2;
        }
        Self { values: values.to_vec(), levels }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn scan(&self, i: usize, j: usize) -> f64 {
        self.values[i..=j].iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn blocks(&self, lo: usize, hi: usize) -> f64 {
        let k = usize::BITS as usize - 1 - (hi - lo + 1).leading_zeros() as usize;
        let row = &self.levels[k];
        row[lo].min(row[hi + 1 - (1 << k)])
    }

    /// Minimum over the inclusive index range `[i, j]`.
    pub fn min(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let (bi, bj) = (i / BLOCK, j / BLOCK);
        if bj <= bi + 1 {
            return self.scan(i, j);
        }
        let left = self.scan(i, (bi + 1) * BLOCK - 1);
        let right = self.scan(bj * BLOCK, j);
        left.min(right).min(self.blocks(bi + 1, bj - 1))
    }

    /// Largest index `k <= j` with `values[k] < threshold`, if any.
    pub fn last_below(&self, j: usize, threshold: f64) -> Option<usize> {
        if self.min(0, j) >= threshold {
            return None;
        }
        // min(k..=j) < threshold is monotone in k: binary search for the largest such k.
        let (mut lo, mut hi) = (0usize, j);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if self.min(mid, j) < threshold {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        Some(lo)
    }

    /// Smallest index `k >= i` with `values[k] < threshold`, if any.
    pub fn first_below(&self, i: usize, threshold: f64) -> Option<usize> {
        let last = self.values.len() - 1;
        if self.min(i, last) >= threshold {
            return None;
        }
        let (mut lo, mut hi) = (i, last);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.min(i, mid) < threshold {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Some(lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn matches_naive(values in proptest::collection::vec(-100.0f64..100.0, 1..400), a in 0usize..400, b in 0usize..400) {
            let n = values.len();
            let (i, j) = (a % n, b % n);
            let t = SparseMin::new(&values);
            let (lo, hi) = (i.min(j), i.max(j));
            let naive = values[lo..=hi].iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(t.min(i, j), naive);
            let thr = values[i];
            let last = (0..=hi).rev().find(|&k| values[k] < thr);
            prop_assert_eq!(t.last_below(hi, thr), last);
            let first = (lo..n).find(|&k| values[k] < thr);
            prop_assert_eq!(t.first_below(lo, thr), first);
        }
    }
}
