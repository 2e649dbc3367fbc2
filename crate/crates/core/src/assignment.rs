//! Minimum-cost one-to-one assignment over a cost matrix with infeasible
//! entries (shortest augmenting path Hungarian, O(n² m) for n ≤ m).

use crate::model::CostMatrix;

/// Result of an assignment. Indices refer to rows (tracks) and columns
/// (detections) of whatever matrix or index space produced it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchResult {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

impl MatchResult {
    pub fn unmatched(rows: impl IntoIterator<Item = usize>, cols: impl IntoIterator<Item = usize>) -> Self {
        MatchResult {
            matches: Vec::new(),
            unmatched_tracks: rows.into_iter().collect(),
            unmatched_detections: cols.into_iter().collect(),
        }
    }

    /// Sum of matched costs, accumulated in match order.
    pub fn total_cost(&self, c: &CostMatrix) -> f64 {
        self.matches.iter().map(|&(r, k)| c.get(r, k)).sum()
    }

    /// Rewrites local indices through the given row/column index maps.
    pub fn remap(self, rows: &[usize], cols: &[usize]) -> Self {
        MatchResult {
            matches: self.matches.into_iter().map(|(r, c)| (rows[r], cols[c])).collect(),
            unmatched_tracks: self.unmatched_tracks.into_iter().map(|r| rows[r]).collect(),
            unmatched_detections: self.unmatched_detections.into_iter().map(|c| cols[c]).collect(),
        }
    }
}

/// Solves the assignment: among one-to-one matchings that use only feasible
/// entries, returns one with maximum cardinality and, among those, minimum
/// total cost. Infeasible pairs are never returned.
pub fn solve_assignment(c: &CostMatrix) -> MatchResult {
    let mut steps = 0;
    solve_assignment_counted(c, &mut steps)
}

/// Same as [`solve_assignment`], adding the number of inner relaxation steps to `steps`.
pub fn solve_assignment_counted(c: &CostMatrix, steps: &mut u64) -> MatchResult {
    let (rows, cols) = (c.rows(), c.cols());
    if c.is_empty() || c.feasible_count() == 0 {
        return MatchResult::unmatched(0..rows, 0..cols);
    }
    let assigned = if rows <= cols {
        hungarian(c, steps)
    } else {
        // Solve on the transpose so the inner dimension is the larger one.
        let t = c.transpose();
        let by_col = hungarian(&t, steps);
        let mut by_row = vec![None; rows];
        for (col, row) in by_col.into_iter().enumerate() {
            if let Some(r) = row {
                by_row[r] = Some(col);
            }
        }
        by_row
    };

    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut matches = Vec::new();
    for (r, col) in assigned.into_iter().enumerate() {
        if let Some(k) = col {
            if c.is_feasible(r, k) {
                matches.push((r, k));
                row_used[r] = true;
                col_used[k] = true;
            }
        }
    }
    MatchResult {
        matches,
        unmatched_tracks: (0..rows).filter(|&r| !row_used[r]).collect(),
        unmatched_detections: (0..cols).filter(|&k| !col_used[k]).collect(),
    }
}

/// Hungarian on an `n x m` matrix with `n <= m`; returns the column of each row.
/// Infeasible entries get a penalty large enough that one extra feasible
/// match always outweighs any difference in feasible cost.
fn hungarian(c: &CostMatrix, steps: &mut u64) -> Vec<Option<usize>> {
    let (n, m) = (c.rows(), c.cols());
    debug_assert!(n <= m);
    let (lo, hi) = (0..n)
        .flat_map(|r| (0..m).map(move |k| (r, k)))
        .filter(|&(r, k)| c.is_feasible(r, k))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (r, k)| {
            let v = c.get(r, k);
            (lo.min(v), hi.max(v))
        });
    let penalty = (n as f64) * (hi - lo) + 1.0;
    let cost = |r: usize, k: usize| {
        let v = c.get(r, k);
        if v.is_finite() {
            v - lo
        } else {
            penalty
        }
    };

    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
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
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                *steps += 1;
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}
