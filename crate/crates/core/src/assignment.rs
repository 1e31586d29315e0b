//! Dense linear sum assignment (Hungarian algorithm with potentials).

/// Relative tolerance used when comparing assignment costs for ties.
const TIE_TOL: f64 = 1e-12;

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns `perm` with `perm[row] = col`. O(n^3). Non-finite entries are
/// treated as prohibitively expensive so the search always terminates.
pub fn solve(costs: &[Vec<f64>]) -> Vec<usize> {
    let n = costs.len();
    if n == 0 {
        return Vec::new();
    }
    debug_assert!(costs.iter().all(|r| r.len() == n));
    if costs.iter().flatten().any(|c| !c.is_finite()) {
        let big = costs
            .iter()
            .flatten()
            .filter(|c| c.is_finite())
            .fold(1.0f64, |m, c| m.max(c.abs()))
            * (2 * n + 1) as f64;
        let clean: Vec<Vec<f64>> = costs
            .iter()
            .map(|r| r.iter().map(|&c| if c.is_finite() { c } else { big }).collect())
            .collect();
        return solve(&clean);
    }

    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
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

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            perm[p[j] - 1] = j - 1;
        }
    }
    perm
}

pub fn cost_of(costs: &[Vec<f64>], perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(r, &c)| costs[r][c]).sum()
}

/// Optimal assignment, choosing the lexicographically smallest permutation
/// among those whose cost ties with the optimum.
pub fn solve_lexmin(costs: &[Vec<f64>]) -> Vec<usize> {
    let n = costs.len();
    let best = cost_of(costs, &solve(costs));
    let tol = TIE_TOL * best.abs().max(1.0);
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    let mut fixed_cost = 0.0;
    for row in 0..n {
        let free_cols: Vec<usize> = (0..n).filter(|c| !chosen.contains(c)).collect();
        let mut picked = None;
        for &col in &free_cols {
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != col).collect();
            let sub: Vec<Vec<f64>> = (row + 1..n)
                .map(|r| rest_cols.iter().map(|&c| costs[r][c]).collect())
                .collect();
            let sub_cost = cost_of(&sub, &solve(&sub));
            if fixed_cost + costs[row][col] + sub_cost <= best + tol {
                picked = Some(col);
                break;
            }
        }
        // The optimum is always completable, so some column passes; fall back
        // to the cheapest for robustness against rounding.
        let col = picked.unwrap_or_else(|| {
            *free_cols
                .iter()
                .min_by(|&&a, &&b| costs[row][a].total_cmp(&costs[row][b]))
                .expect("free column")
        });
        fixed_cost += costs[row][col];
        chosen.push(col);
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_assignment() {
        let costs = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let perm = solve(&costs);
        assert_eq!(cost_of(&costs, &perm), 5.0);
    }

    #[test]
    fn ties_break_lexicographically() {
        let costs = vec![vec![1.0; 3]; 3];
        assert_eq!(solve_lexmin(&costs), vec![0, 1, 2]);
        let swap = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(solve_lexmin(&swap), vec![0, 1]);
    }

    #[test]
    fn non_finite_costs_terminate() {
        let costs = vec![vec![f64::NAN, 1.0], vec![2.0, f64::INFINITY]];
        assert_eq!(solve(&costs), vec![1, 0]);
        assert_eq!(solve_lexmin(&costs).len(), 2);
    }

    #[test]
    fn empty_matrix() {
        assert!(solve(&[]).is_empty());
        assert!(solve_lexmin(&[]).is_empty());
    }
}
