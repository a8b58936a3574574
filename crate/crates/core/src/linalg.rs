//! Small dense helpers that nalgebra does not cover directly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::space::{StateSpace, Vertex};

/// Cholesky factor of a symmetric positive definite band matrix.
///
/// Row `i` stores columns `i - b ..= i`, so the cost is `O(n b^2)`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    b: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    /// `entries` holds lower-triangle entries `(i, j, a_ij)` with `j <= i`;
    /// repeated entries are summed. `None` if the matrix is not positive
    /// definite.
    pub fn factor(n: usize, entries: &[(usize, usize, f64)]) -> Option<Self> {
        let b = entries.iter().map(|&(i, j, _)| i - j).max().unwrap_or(0);
        let w = b + 1;
        let mut l = vec![0.0; n * w];
        for &(i, j, a) in entries {
            debug_assert!(j <= i && i < n);
            l[i * w + (i - j)] += a;
        }
        for i in 0..n {
            let lo = i.saturating_sub(b);
            for j in lo..=i {
                let mut s = l[i * w + (i - j)];
                let klo = lo.max(j.saturating_sub(b));
                for k in klo..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Some(BandCholesky { n, b, l })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, b, w) = (self.n, self.b, self.b + 1);
        let mut z = rhs.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for k in i.saturating_sub(b)..i {
                s -= self.l[i * w + (i - k)] * z[k];
            }
            z[i] = s / self.l[i * w];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in i + 1..(i + b + 1).min(n) {
                s -= self.l[k * w + (k - i)] * z[k];
            }
            z[i] = s / self.l[i * w];
        }
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem(f64, Vertex);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest paths with edge lengths `len(x, y, w)`.
/// Unreachable vertices get `+inf`.
pub fn dijkstra(
    space: &StateSpace,
    source: Vertex,
    len: impl Fn(Vertex, Vertex, f64) -> f64,
) -> Vec<f64> {
    let n = space.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapItem(0.0, source));
    while let Some(HeapItem(d, x)) = heap.pop() {
        if d > dist[x] {
            continue;
        }
        for &(y, w) in space.neighbors(x) {
            if w <= 0.0 {
                continue;
            }
            let nd = d + len(x, y, w);
            if nd < dist[y] {
                dist[y] = nd;
                heap.push(HeapItem(nd, y));
            }
        }
    }
    dist
}
