//! Dense linear assignment (Hungarian algorithm with potentials).

use ndarray::ArrayView2;

use crate::{Error, Result};

/// Minimum-cost assignment for a rectangular cost matrix.
///
/// Returns `assignment[r] = Some(c)` for every row matched to a column. With
/// `rows ≤ cols` every row is matched; otherwise every column is. Runs in
/// `O(min² · max)` time. Ties resolve toward smaller column indices.
pub fn linear_assignment(cost: ArrayView2<f64>) -> Result<Vec<Option<usize>>> {
    let (rows, cols) = cost.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::Empty("assignment cost matrix"));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("assignment cost matrix"));
    }
    if rows <= cols {
        Ok(solve(rows, cols, |i, j| cost[[i, j]])
            .into_iter()
            .map(Some)
            .collect())
    } else {
        let by_col = solve(cols, rows, |i, j| cost[[j, i]]);
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            out[r] = Some(c);
        }
        Ok(out)
    }
}

/// Core solver for `n ≤ m`; returns the column of each row.
fn solve(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based indices with slot 0 as the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}
