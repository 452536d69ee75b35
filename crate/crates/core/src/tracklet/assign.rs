//! Gated bipartite matching between tracks (rows) and detections (columns).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    /// Repeatedly take the highest-IoU remaining pair.
    #[default]
    Greedy,
    /// Maximum total IoU over gated pairs.
    Optimal,
}

/// Matches rows to columns given an IoU matrix (`iou[r][c]`). Only pairs with
/// `iou >= gate` are eligible. `row_keys` orders rows for tie-breaking: on
/// equal IoU the lower key wins, then the lower column.
pub fn match_pairs(iou: &[Vec<f64>], row_keys: &[u64], gate: f64, mode: Assignment) -> Vec<(usize, usize)> {
    if iou.is_empty() || iou[0].is_empty() {
        return Vec::new();
    }
    match mode {
        Assignment::Greedy => greedy(iou, row_keys, gate),
        Assignment::Optimal => optimal(iou, gate),
    }
}

fn greedy(iou: &[Vec<f64>], row_keys: &[u64], gate: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (r, row) in iou.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v >= gate {
                pairs.push((v, r, c));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(row_keys[a.1].cmp(&row_keys[b.1]))
            .then(a.2.cmp(&b.2))
    });
    let mut row_used = vec![false; iou.len()];
    let mut col_used = vec![false; iou[0].len()];
    let mut out = Vec::new();
    for (_, r, c) in pairs {
        if !row_used[r] && !col_used[c] {
            row_used[r] = true;
            col_used[c] = true;
            out.push((r, c));
        }
    }
    out.sort_unstable();
    out
}

fn optimal(iou: &[Vec<f64>], gate: f64) -> Vec<(usize, usize)> {
    let rows = iou.len();
    let cols = iou[0].len();
    let n = rows.max(cols);
    // Ineligible pairs cost 0, same as padding, so they never beat a gated pair.
    let mut cost = vec![vec![0.0; n]; n];
    for r in 0..rows {
        for c in 0..cols {
            if iou[r][c] >= gate {
                cost[r][c] = -iou[r][c];
            }
        }
    }
    let assign = hungarian(&cost);
    let mut out: Vec<(usize, usize)> = assign
        .into_iter()
        .enumerate()
        .filter(|&(r, c)| r < rows && c < cols && iou[r][c] >= gate)
        .collect();
    out.sort_unstable();
    out
}

/// Minimum-cost perfect assignment on a square matrix; returns the column
/// chosen for each row. O(n³) shortest augmenting path with potentials.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    const INF: f64 = f64::INFINITY;
    // 1-based arrays; p[j] = row matched to column j.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
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
            }
            for j in 0..=n {
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
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}
