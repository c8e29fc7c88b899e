//! Hungarian (Kuhn-Munkres) assignment, used as the IOU-matching baseline and
//! by the identity matching in the evaluator.

use nalgebra::DMatrix;

use crate::types::AssociationResult;

/// Cost matrix plus the largest admissible cost. Pairs above `gate` are never matched.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentProblem {
    pub cost: DMatrix<f64>,
    pub gate: f64,
}

impl AssignmentProblem {
    /// IOU baseline problem: cost `1 - iou` gated at `gate`.
    pub fn from_iou(iou: &DMatrix<f64>, gate: f64) -> Self {
        AssignmentProblem {
            cost: iou.map(|v| 1.0 - v),
            gate,
        }
    }
}

/// Minimum-cost assignment among admissible pairs (cost ≤ gate).
///
/// Inadmissible pairs are priced high enough that the solver first maximizes
/// the number of admissible matches, then minimizes their total cost.
/// Rectangular matrices are handled by assigning the smaller side.
pub fn hungarian_solve(problem: &AssignmentProblem) -> AssociationResult {
    let (m, n) = problem.cost.shape();
    if m == 0 || n == 0 {
        return AssociationResult::unmatched(m, n);
    }
    let admissible = |c: f64| c.is_finite() && c <= problem.gate;
    let max_abs = problem
        .cost
        .iter()
        .filter(|c| admissible(**c))
        .fold(0.0f64, |acc, c| acc.max(c.abs()));
    let big = (max_abs + 1.0) * 2.0 * (m.min(n) as f64 + 1.0);
    let priced = problem.cost.map(|c| if admissible(c) { c } else { big });
    let matches = solve_rectangular(&priced)
        .into_iter()
        .enumerate()
        .filter_map(|(row, col)| col.map(|c| (row, c)))
        .filter(|&(r, c)| admissible(problem.cost[(r, c)]))
        .collect();
    AssociationResult::from_matches(matches, m, n)
}

/// Minimum-cost assignment over all pairs. Returns the assigned column for
/// each row; rows beyond the column count stay `None`.
pub fn solve_rectangular(cost: &DMatrix<f64>) -> Vec<Option<usize>> {
    let (m, n) = cost.shape();
    if m == 0 || n == 0 {
        return vec![None; m];
    }
    if m <= n {
        solve_rows_le_cols(cost)
    } else {
        let by_col = solve_rows_le_cols(&cost.transpose());
        let mut rows = vec![None; m];
        for (col, row) in by_col.into_iter().enumerate() {
            if let Some(r) = row {
                rows[r] = Some(col);
            }
        }
        rows
    }
}

// Shortest augmenting path with row/column potentials, O(rows^2 * cols).
fn solve_rows_le_cols(cost: &DMatrix<f64>) -> Vec<Option<usize>> {
    let (rows, cols) = cost.shape();
    debug_assert!(rows <= cols);
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    // owner[j] = 1-based row assigned to 1-based column j, 0 if free
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];

    for row in 1..=rows {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![None; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = Some(j - 1);
        }
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive oracle: best (max admissible count, then min cost) over every
    /// partial injective assignment of admissible pairs.
    fn brute_force(cost: &DMatrix<f64>, gate: f64) -> (usize, f64) {
        fn go(cost: &DMatrix<f64>, gate: f64, row: usize, used: &mut Vec<bool>, count: usize, total: f64, best: &mut (usize, f64)) {
            if row == cost.nrows() {
                if count > best.0 || (count == best.0 && total < best.1) {
                    *best = (count, total);
                }
                return;
            }
            go(cost, gate, row + 1, used, count, total, best);
            for c in 0..cost.ncols() {
                if !used[c] && cost[(row, c)] <= gate {
                    used[c] = true;
                    go(cost, gate, row + 1, used, count + 1, total + cost[(row, c)], best);
                    used[c] = false;
                }
            }
        }
        let mut best = (0, f64::INFINITY);
        go(cost, gate, 0, &mut vec![false; cost.ncols()], 0, 0.0, &mut best);
        if best.0 == 0 {
            best.1 = 0.0;
        }
        best
    }

    fn total(problem: &AssignmentProblem, r: &AssociationResult) -> f64 {
        r.matches.iter().map(|&(a, b)| problem.cost[(a, b)]).sum()
    }

    #[test]
    fn diagonal_example() {
        let p = AssignmentProblem {
            cost: DMatrix::from_row_slice(2, 2, &[0.1, 0.9, 0.9, 0.1]),
            gate: 0.6,
        };
        assert_eq!(hungarian_solve(&p).matches, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn fully_gated() {
        let p = AssignmentProblem {
            cost: DMatrix::from_element(1, 1, 0.9),
            gate: 0.6,
        };
        let r = hungarian_solve(&p);
        assert!(r.matches.is_empty());
        assert_eq!(r.unmatched_tracks, vec![0]);
        assert_eq!(r.unmatched_detections, vec![0]);
    }

    #[test]
    fn empty_problems() {
        let p = AssignmentProblem { cost: DMatrix::zeros(0, 4), gate: 0.7 };
        assert_eq!(hungarian_solve(&p).unmatched_detections.len(), 4);
        let p = AssignmentProblem { cost: DMatrix::zeros(3, 0), gate: 0.7 };
        assert_eq!(hungarian_solve(&p).unmatched_tracks.len(), 3);
    }

    #[test]
    fn gating_prefers_more_admissible_pairs() {
        // Greedy on (0,0) would strand row 1; the optimum uses both admissible pairs.
        let p = AssignmentProblem {
            cost: DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.95]),
            gate: 0.6,
        };
        assert_eq!(hungarian_solve(&p).matches, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn solves_are_deterministic() {
        let cost = DMatrix::from_element(4, 4, 0.5);
        let p = AssignmentProblem { cost, gate: 1.0 };
        let a = hungarian_solve(&p);
        for _ in 0..5 {
            assert_eq!(hungarian_solve(&p), a);
        }
        assert_eq!(a.matches.len(), 4);
    }

    fn arb_problem(max: usize) -> impl Strategy<Value = AssignmentProblem> {
        (1usize..=max, 1usize..=max, 0.0..=1.0f64).prop_flat_map(|(m, n, gate)| {
            proptest::collection::vec(0.0..=1.0f64, m * n).prop_map(move |v| AssignmentProblem {
                cost: DMatrix::from_row_slice(m, n, &v),
                gate,
            })
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(p in arb_problem(6)) {
            let r = hungarian_solve(&p);
            prop_assert!(r.is_partition(p.cost.nrows(), p.cost.ncols()));
            let (count, cost) = brute_force(&p.cost, p.gate);
            prop_assert_eq!(r.matches.len(), count);
            prop_assert!((total(&p, &r) - cost).abs() < 1e-9);
            for &(a, b) in &r.matches {
                prop_assert!(p.cost[(a, b)] <= p.gate);
            }
        }
    }
}
