//! Rectangular linear assignment (Hungarian method with potentials).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(row, col)` pairs, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
    pub total_cost: f64,
}

/// Minimum-cost assignment for `rows <= cols` (`cost[i][j]`, finite).
/// Returns the column assigned to each row.
fn solve_wide(cost: &[Vec<f64>], n: usize, m: usize) -> Vec<usize> {
    const NONE: usize = usize::MAX;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row (1-based) matched to column j; column 0 is the virtual root.
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = NONE;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
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
    let mut col_of_row = vec![NONE; n];
    for j in 1..=m {
        if p[j] != 0 {
            col_of_row[p[j] - 1] = j - 1;
        }
    }
    col_of_row
}

/// Optimal one-to-one assignment where entries above `gate` (or non-finite)
/// are forbidden. Forbidden entries are priced so that the solver first
/// maximizes the number of allowed matches, then minimizes their total cost.
///
/// `cost` has one row per track and `cols` entries per row.
pub fn assign(cost: &[Vec<f64>], cols: usize, gate: f64) -> Assignment {
    let n = cost.len();
    let m = cols;
    assert!(cost.iter().all(|r| r.len() == m), "ragged cost matrix");
    let allowed = |i: usize, j: usize| cost[i][j].is_finite() && cost[i][j] <= gate;
    if n == 0 || m == 0 {
        return Assignment {
            pairs: Vec::new(),
            unmatched_rows: (0..n).collect(),
            unmatched_cols: (0..m).collect(),
            total_cost: 0.0,
        };
    }
    let max_allowed = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .filter(|&(i, j)| allowed(i, j))
        .map(|(i, j)| cost[i][j].abs())
        .fold(0.0f64, f64::max);
    let big = (max_allowed + 1.0) * (n.max(m) as f64 + 1.0) * 2.0;
    let priced = |i: usize, j: usize| if allowed(i, j) { cost[i][j] } else { big };
    let pairs_raw: Vec<(usize, usize)> = if n <= m {
        let c: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|j| priced(i, j)).collect()).collect();
        solve_wide(&c, n, m).into_iter().enumerate().collect()
    } else {
        let c: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| priced(i, j)).collect()).collect();
        let mut v: Vec<(usize, usize)> = solve_wide(&c, m, n)
            .into_iter()
            .enumerate()
            .map(|(j, i)| (i, j))
            .collect();
        v.sort();
        v
    };
    let pairs: Vec<(usize, usize)> = pairs_raw.into_iter().filter(|&(i, j)| allowed(i, j)).collect();
    let total_cost = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
    let unmatched_rows = (0..n).filter(|i| !pairs.iter().any(|p| p.0 == *i)).collect();
    let unmatched_cols = (0..m).filter(|j| !pairs.iter().any(|p| p.1 == *j)).collect();
    Assignment {
        pairs,
        unmatched_rows,
        unmatched_cols,
        total_cost,
    }
}
