//! Minimum-cost assignment for small rectangular cost matrices.
//!
//! Potentials-based Hungarian algorithm (Jonker-Volgenant flavor), O(n^2 m).
//! The matrices here are per-frame, per-class prediction/reference pairings,
//! so sizes are tiny; the implementation favors clarity and exactness over
//! scale. Ties are broken deterministically by scan order.

/// Pair up all rows of the smaller side with distinct columns so that the
/// total cost is minimal. `cost[i][j]` is the cost of assigning row `i` to
/// column `j`; all costs must be finite. Returns `(row, col)` pairs sorted
/// by row; the number of pairs is `min(rows, cols)`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    debug_assert!(cost.iter().all(|r| r.len() == cols));
    if cols == 0 {
        return Vec::new();
    }
    // The classic formulation assigns every row, so run with rows as the
    // smaller side and transpose on the way out if needed.
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols)
            .map(|j| (0..rows).map(|i| cost[i][j]).collect())
            .collect();
        let mut pairs: Vec<(usize, usize)> =
            min_cost_assignment(&t).into_iter().map(|(i, j)| (j, i)).collect();
        pairs.sort_unstable();
        return pairs;
    }

    // Potentials u (rows), v (cols); way[j] remembers the augmenting path.
    // Indices are 1-based internally with 0 as the virtual root.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut match_of_col = vec![0usize; cols + 1]; // row matched to column, 0 = free
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        match_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = match_of_col[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=cols {
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
            for j in 0..=cols {
                if used[j] {
                    u[match_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if match_of_col[j0] == 0 {
                break;
            }
        }
        // Unwind the augmenting path.
        while j0 != 0 {
            let j1 = way[j0];
            match_of_col[j0] = match_of_col[j1];
            j0 = j1;
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=cols)
        .filter(|&j| match_of_col[j] != 0)
        .map(|j| (match_of_col[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Total cost of an assignment.
pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| cost[i][j]).sum()
}
