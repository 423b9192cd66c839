//! Gated linear assignment (Hungarian algorithm over f64 costs).
//!
//! Infeasible pairs are `None`. The solver returns a matching with the
//! maximum number of feasible pairs and, among those, the minimum total cost.

/// One matched (row, column) pair with its cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub row: usize,
    pub col: usize,
    pub cost: f64,
}

// Dense O(n^3) Hungarian on a square matrix, 1-based potentials.
fn hungarian_square(costs: &[Vec<f64>]) -> Vec<usize> {
    let n = costs.len();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = costs[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
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

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Solves the gated assignment for a `rows × cols` cost table.
///
/// `cost[r][c]` is `Some(non-negative cost)` when the pair is admissible.
/// Matches are returned sorted by row.
pub fn solve_gated(cost: &[Vec<Option<f64>>], cols: usize) -> Vec<Match> {
    let rows = cost.len();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let feasible_total: f64 = cost
        .iter()
        .flatten()
        .flatten()
        .copied()
        .filter(|c| c.is_finite())
        .sum();
    if !cost.iter().flatten().any(|c| c.is_some()) {
        return Vec::new();
    }
    // Any single infeasible pair must outweigh every feasible cost combined, so the
    // solver first maximizes the number of feasible matches.
    let penalty = 2.0 * feasible_total + 1.0;
    let n = rows.max(cols);
    let mut square = vec![vec![0.0f64; n]; n];
    for (r, row) in square.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = if r < rows && c < cols {
                match cost[r].get(c).copied().flatten() {
                    Some(v) if v.is_finite() => v,
                    _ => penalty,
                }
            } else {
                // Dummy row/column: leaving a real item unmatched costs the penalty too.
                penalty
            };
        }
    }
    let assignment = hungarian_square(&square);
    let mut out = Vec::new();
    for (r, &c) in assignment.iter().enumerate() {
        if r < rows && c < cols {
            if let Some(v) = cost[r].get(c).copied().flatten() {
                if v.is_finite() {
                    out.push(Match { row: r, col: c, cost: v });
                }
            }
        }
    }
    out
}

/// Total cost of a matching.
pub fn total_cost(matches: &[Match]) -> f64 {
    matches.iter().map(|m| m.cost).sum()
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Exhaustive search over all partial matchings, for small instances.

    /// Returns (max cardinality, min cost at that cardinality).
    pub fn best(cost: &[Vec<Option<f64>>], cols: usize) -> (usize, f64) {
        fn rec(
            cost: &[Vec<Option<f64>>],
            row: usize,
            used: &mut Vec<bool>,
            count: usize,
            acc: f64,
            best: &mut (usize, f64),
        ) {
            if row == cost.len() {
                if count > best.0 || (count == best.0 && acc < best.1) {
                    *best = (count, acc);
                }
                return;
            }
            rec(cost, row + 1, used, count, acc, best);
            for c in 0..used.len() {
                if used[c] {
                    continue;
                }
                if let Some(v) = cost[row][c] {
                    used[c] = true;
                    rec(cost, row + 1, used, count + 1, acc + v, best);
                    used[c] = false;
                }
            }
        }
        let mut best = (0usize, 0.0f64);
        let mut used = vec![false; cols];
        rec(cost, 0, &mut used, 0, 0.0, &mut best);
        best
    }
}
