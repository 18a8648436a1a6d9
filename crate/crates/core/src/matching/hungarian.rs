//! Rectangular Hungarian assignment via shortest augmenting paths with dual
//! potentials — O(G²·Q) time, exact minimum.
//!
//! Determinism: rows (ground truths) are inserted in index order and every
//! argmin over columns keeps the lowest index on ties, so among equally
//! cheap assignments the result prefers low prediction indices for low gt
//! indices — the documented "(g, then φ(g))" tie-break.

use super::MatchResult;
use crate::error::{Error, Result};

/// Minimize the total cost of assigning each of the G rows to a distinct one
/// of the Q columns. `cost` is indexed `[row][column]`; every row must have
/// `num_cols` entries.
pub fn hungarian(cost: &[Vec<f64>], num_cols: usize) -> Result<MatchResult> {
    let num_rows = cost.len();
    if num_rows > num_cols {
        return Err(Error::contract(format!(
            "hungarian: {num_rows} ground truths exceed {num_cols} prediction slots"
        )));
    }
    for (i, row) in cost.iter().enumerate() {
        if row.len() != num_cols {
            return Err(Error::contract(format!(
                "hungarian: row {i} has {} entries, expected {num_cols}",
                row.len()
            )));
        }
        if row.iter().any(|c| !c.is_finite()) {
            return Err(Error::contract(format!("hungarian: non-finite cost in row {i}")));
        }
    }
    if num_rows == 0 {
        return Ok(MatchResult { pairs: vec![], unmatched_preds: (0..num_cols).collect() });
    }

    // 1-indexed internally; index 0 is the virtual start column/row.
    let (n, m) = (num_rows, num_cols);
    let mut u = vec![0.0f64; n + 1]; // row potentials
    let mut v = vec![0.0f64; m + 1]; // column potentials
    let mut assigned_row = vec![0usize; m + 1]; // column -> row (0 = free)
    let mut way = vec![0usize; m + 1]; // augmenting-path back-pointers

    for i in 1..=n {
        assigned_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        // Walk the path backwards, flipping assignments.
        while j0 != 0 {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
        }
    }

    let mut pairs = vec![(0usize, 0usize); n];
    let mut unmatched_preds = Vec::with_capacity(m - n);
    for j in 1..=m {
        if assigned_row[j] == 0 {
            unmatched_preds.push(j - 1);
        } else {
            pairs[assigned_row[j] - 1] = (assigned_row[j] - 1, j - 1);
        }
    }
    Ok(MatchResult { pairs, unmatched_preds })
}
