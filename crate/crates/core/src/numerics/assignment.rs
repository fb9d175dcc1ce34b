use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::{Error, Result};

/// Solution of a linear sum assignment problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `row_to_col[i]` is the column assigned to row `i`.
    pub row_to_col: Vec<usize>,
    pub total_cost: f64,
}

/// Minimum-cost assignment of every row to a distinct column.
///
/// Accepts `n x p` costs with `p >= n`. Runs the shortest-augmenting-path form of the
/// Hungarian method, one augmentation per row, in O(n^2 p).
pub fn assignment(cost: &Tensor<f64>) -> Result<Assignment> {
    if cost.shape().len() != 2 {
        return Err(Error::Shape(format!("assignment cost must be 2-D, got {:?}", cost.shape())));
    }
    let (n, p) = (cost.shape()[0], cost.shape()[1]);
    if p < n {
        return Err(Error::Shape(format!(
            "assignment needs at least as many columns as rows ({n}x{p}); transpose first"
        )));
    }
    if !cost.all_finite() {
        return Err(Error::NonFinite("assignment cost matrix".into()));
    }
    if n == 0 {
        return Ok(Assignment {
            row_to_col: Vec::new(),
            total_cost: 0.0,
        });
    }
    // 1-indexed potentials; column 0 is the virtual start.
    let size = p;
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; size + 1];
    let mut col_owner = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=size {
                if !used[j] {
                    let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=size {
        if col_owner[j] > 0 {
            row_to_col[col_owner[j] - 1] = j - 1;
        }
    }
    let total_cost = row_to_col.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
    Ok(Assignment {
        row_to_col,
        total_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn brute_force(cost: &Tensor<f64>) -> f64 {
        let n = cost.shape()[0];
        let p = cost.shape()[1];
        let mut best = f64::INFINITY;
        let mut cols: Vec<usize> = (0..p).collect();
        permute(&mut cols, 0, n, &mut |perm| {
            let c: f64 = (0..n).map(|i| cost.get(i, perm[i])).sum();
            if c < best {
                best = c;
            }
        });
        best
    }

    fn permute(cols: &mut Vec<usize>, depth: usize, n: usize, f: &mut impl FnMut(&[usize])) {
        if depth == n {
            f(&cols[..n]);
            return;
        }
        for i in depth..cols.len() {
            cols.swap(depth, i);
            permute(cols, depth + 1, n, f);
            cols.swap(depth, i);
        }
    }

    fn random_cost(seed: u64, n: usize, p: usize) -> Tensor<f64> {
        let mut s = RngStream::new(seed, 77).sampler();
        let data = (0..n * p).map(|_| s.uniform_range(0.0, 10.0)).collect();
        Tensor::new(vec![n, p], data).unwrap()
    }

    #[test]
    fn diagonal_dominant_gives_identity() {
        let mut c = Tensor::<f64>::zeros(&[5, 5]);
        for i in 0..5 {
            for j in 0..5 {
                c.set(i, j, if i == j { 0.0 } else { 10.0 + (i * j) as f64 });
            }
        }
        assert_eq!(assignment(&c).unwrap().row_to_col, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn matches_brute_force_small() {
        for seed in 0..40 {
            let n = 1 + (seed as usize % 6);
            let c = random_cost(seed, n, n);
            let a = assignment(&c).unwrap();
            assert!((a.total_cost - brute_force(&c)).abs() < 1e-9);
        }
    }

    #[test]
    fn rectangular_matches_brute_force() {
        for seed in 0..20 {
            let c = random_cost(100 + seed, 3, 5);
            let a = assignment(&c).unwrap();
            let mut seen = a.row_to_col.clone();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), 3);
            assert!((a.total_cost - brute_force(&c)).abs() < 1e-9);
        }
    }

    #[test]
    fn tied_optima_give_optimal_cost() {
        let c = Tensor::new(vec![2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(assignment(&c).unwrap().total_cost, 2.0);
    }

    #[test]
    fn non_finite_rejected() {
        let c = Tensor::new(vec![2, 2], vec![1.0, f64::NAN, 1.0, 1.0]).unwrap();
        assert!(matches!(assignment(&c), Err(Error::NonFinite(_))));
    }
}
