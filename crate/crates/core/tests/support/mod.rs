//! Brute-force oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

pub mod grad;

use ndarray::{Array2, ArrayView2};

/// BatchTopK by sorting every entry: value descending, then row-major index.
pub fn brute_batch_topk(z: ArrayView2<f64>, k: usize) -> Array2<f64> {
    let (b, m) = z.dim();
    let mut entries: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..b {
        for j in 0..m {
            entries.push((z[[i, j]], i, j));
        }
    }
    entries.sort_by(|a, c| c.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(c.1, c.2))));
    let mut out = Array2::zeros((b, m));
    for &(v, i, j) in entries.iter().take(b * k) {
        if v > 0.0 {
            out[[i, j]] = v;
        }
    }
    out
}

/// Optimal row-to-column assignment by trying every injective map from the
/// smaller side.
pub fn brute_assignment(cost: ArrayView2<f64>) -> Vec<Option<usize>> {
    let (r, c) = cost.dim();
    if r > c {
        let cols = brute_assignment(cost.t());
        let mut rows = vec![None; r];
        for (j, i) in cols.iter().enumerate() {
            rows[i.expect("every column is matched")] = Some(j);
        }
        return rows;
    }
    struct Search<'a> {
        cost: ArrayView2<'a, f64>,
        used: Vec<bool>,
        cur: Vec<usize>,
        best: f64,
        best_asg: Vec<usize>,
    }
    fn go(s: &mut Search, row: usize, acc: f64) {
        if row == s.cost.nrows() {
            if acc < s.best {
                s.best = acc;
                s.best_asg = s.cur.clone();
            }
            return;
        }
        for j in 0..s.cost.ncols() {
            if !s.used[j] {
                s.used[j] = true;
                s.cur.push(j);
                go(s, row + 1, acc + s.cost[[row, j]]);
                s.cur.pop();
                s.used[j] = false;
            }
        }
    }
    let mut s = Search {
        cost,
        used: vec![false; c],
        cur: Vec::new(),
        best: f64::INFINITY,
        best_asg: Vec::new(),
    };
    go(&mut s, 0, 0.0);
    s.best_asg.into_iter().map(Some).collect()
}

/// Minimum assignment cost, summed in row order.
pub fn brute_assignment_cost(cost: ArrayView2<f64>) -> f64 {
    assignment_total(cost, &brute_assignment(cost))
}

/// Greedy matching: repeatedly take the largest remaining similarity.
pub fn greedy_similarity(sim: ArrayView2<f64>) -> f64 {
    let (r, c) = sim.dim();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..r {
        for j in 0..c {
            pairs.push((sim[[i, j]], i, j));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut row_used, mut col_used) = (vec![false; r], vec![false; c]);
    let mut total = 0.0;
    for (s, i, j) in pairs {
        if !row_used[i] && !col_used[j] {
            row_used[i] = true;
            col_used[j] = true;
            total += s;
        }
    }
    total
}

/// Total cost of an assignment as returned by the solver.
pub fn assignment_total(cost: ArrayView2<f64>, asg: &[Option<usize>]) -> f64 {
    asg.iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|j| cost[[i, j]]))
        .sum()
}
