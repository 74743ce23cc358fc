//! Exact minimum-cost assignment (Kuhn-Munkres) with deterministic ties.
//!
//! The solver runs the O(n^3) shortest-augmenting-path formulation with
//! potentials, then extracts the lexicographically smallest optimal
//! assignment from the graph of tight edges. Every perfect matching on
//! tight edges has the same total cost (complementary slackness), so the
//! tie-break never trades optimality for order.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::Assignment;

/// Solves the square assignment problem, minimising total cost.
///
/// Ties between optimal assignments resolve to the lexicographically
/// smallest `ids` vector. Non-square or non-finite input is rejected.
pub fn hungarian(cost: &Tensor<f32>) -> Result<Assignment> {
    let (n, m) = cost.dims2()?;
    if n != m {
        return Err(Error::input(format!(
            "assignment cost matrix must be square, got {n}x{m}"
        )));
    }
    if cost.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::input(
            "assignment cost matrix contains non-finite entries".to_string(),
        ));
    }
    let cost64: Vec<f64> = cost.data().iter().map(|&v| v as f64).collect();
    let ids = solve_lexicographic(n, &cost64);
    Assignment::new(ids)
}

pub(crate) fn solve_lexicographic(n: usize, cost: &[f64]) -> Vec<usize> {
    let (col_to_row, u, v) = solve_potentials(n, cost);

    let mut row_to_col = vec![0usize; n];
    for (col, &row) in col_to_row.iter().enumerate() {
        row_to_col[row] = col;
    }
    let total = |ids: &[usize]| -> f64 {
        ids.iter()
            .enumerate()
            .map(|(i, &j)| cost[i * n + j])
            .sum()
    };
    let optimum = total(&row_to_col);

    // A tight edge has zero reduced cost up to the solver's rounding
    // noise, which the assigned edges witness. Every perfect matching on
    // tight edges is then optimal up to n * tol, which the verification
    // below checks against the solver's own total before accepting a
    // tie-broken matching.
    let scale = 1.0 + cost.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
    let assigned_noise = row_to_col
        .iter()
        .enumerate()
        .map(|(row, &col)| (cost[row * n + col] - u[row] - v[col]).abs())
        .fold(0.0f64, f64::max);
    let mut tol = (assigned_noise * 4.0).max(scale * f64::EPSILON * 1024.0);

    for _ in 0..4 {
        let tight: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| cost[i * n + j] - u[i] - v[j] <= tol)
                    .collect()
            })
            .collect();
        if let Some(ids) = lexicographic_matching(n, &tight) {
            if total(&ids) <= optimum + tol * n as f64 {
                return ids;
            }
        }
        tol /= 16.0;
        if tol < assigned_noise {
            break;
        }
    }
    row_to_col
}

/// Shortest-augmenting-path assignment with dual potentials.
///
/// Returns `(col_to_row, u, v)` where every assigned edge has zero reduced
/// cost and all reduced costs are nonnegative (up to rounding).
fn solve_potentials(n: usize, cost: &[f64]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    const NONE: usize = usize::MAX;
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; n + 1];
    let mut col_to_row = vec![NONE; n + 1]; // index n is the virtual start column

    for row in 0..n {
        col_to_row[n] = row;
        let mut j0 = n;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut prev = vec![n; n + 1];
        let mut used = vec![false; n + 1];

        loop {
            used[j0] = true;
            let i0 = col_to_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = n;
            for j in 0..n {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 * n + j] - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    prev[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_to_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if col_to_row[j0] == NONE {
                break;
            }
        }

        // Augment along the alternating path back to the virtual column.
        loop {
            let j1 = prev[j0];
            col_to_row[j0] = col_to_row[j1];
            j0 = j1;
            if j0 == n {
                break;
            }
        }
    }

    col_to_row.truncate(n);
    v.truncate(n);
    (col_to_row, u, v)
}

/// Lexicographically smallest perfect matching on the tight-edge graph,
/// fixing rows in order and keeping the first column that stays feasible.
fn lexicographic_matching(n: usize, tight: &[Vec<usize>]) -> Option<Vec<usize>> {
    let mut taken = vec![false; n];
    let mut ids = vec![0usize; n];
    for i in 0..n {
        let mut chosen = None;
        for &j in &tight[i] {
            if taken[j] {
                continue;
            }
            taken[j] = true;
            if rows_matchable(i + 1, n, tight, &taken) {
                chosen = Some(j);
                break;
            }
            taken[j] = false;
        }
        ids[i] = chosen?;
    }
    Some(ids)
}

/// Whether rows `from..n` can all be matched into columns not yet taken.
fn rows_matchable(from: usize, n: usize, tight: &[Vec<usize>], taken: &[bool]) -> bool {
    const NONE: usize = usize::MAX;
    let mut col_owner = vec![NONE; n];
    for row in from..n {
        let mut visited = vec![false; n];
        if !augment(row, tight, taken, &mut visited, &mut col_owner) {
            return false;
        }
    }
    true
}

fn augment(
    row: usize,
    tight: &[Vec<usize>],
    taken: &[bool],
    visited: &mut [bool],
    col_owner: &mut [usize],
) -> bool {
    const NONE: usize = usize::MAX;
    for &j in &tight[row] {
        if taken[j] || visited[j] {
            continue;
        }
        visited[j] = true;
        if col_owner[j] == NONE || augment(col_owner[j], tight, taken, visited, col_owner) {
            col_owner[j] = row;
            return true;
        }
    }
    false
}
