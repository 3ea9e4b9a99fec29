//! Minimum-cost perfect matching on square matrices.
//!
//! Shortest augmenting paths with dual potentials give an optimum in
//! O(N³). Among all optimal matchings the lexicographically smallest
//! mapping is then selected, working only on the "tight" edges whose
//! reduced cost is zero, so results do not depend on solver internals.

use std::collections::VecDeque;

use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::puzzle::Permutation;

/// Returns `σ` minimizing `Σ_i cost[i][σ(i)]`, lexicographically smallest
/// among optima.
pub fn hungarian(cost: &Mat) -> Result<Permutation> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(Error::arg(format!("cost matrix is {n}x{m}, not square")));
    }
    if n == 0 {
        return Err(Error::arg("cost matrix is empty"));
    }
    if let Some(((i, j), v)) = cost.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::arg(format!("cost[{i}][{j}] = {v} is not finite")));
    }
    let (assignment, u, v) = solve(cost);
    let scale = cost.iter().fold(1.0f64, |a, &c| a.max(c.abs()));
    let tol = 1e-10 * scale;
    let tight = |i: usize, j: usize| (cost[[i, j]] - u[i] - v[j]).abs() <= tol;
    Ok(Permutation::new(lexicographic_min(n, assignment, tight)).expect("matching is a bijection"))
}

/// Sum of `cost[i][σ(i)]`.
pub fn assignment_cost(cost: &Mat, sigma: &Permutation) -> f64 {
    sigma.as_slice().iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum()
}

/// Shortest augmenting path solver. Returns the row→column assignment and
/// the row and column potentials of an optimal dual solution.
fn solve(cost: &Mat) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.nrows();
    // 1-based with a virtual row/column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = row matched to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
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
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    (assignment, u[1..].to_vec(), v[1..].to_vec())
}

/// Given a perfect matching inside the tight-edge graph, returns the
/// lexicographically smallest perfect matching of that graph: rows are
/// fixed in order to the smallest column that still admits a completion.
fn lexicographic_min(n: usize, mut row_to_col: Vec<usize>, tight: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let mut col_to_row = vec![0; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }
    for i in 0..n {
        for j in 0..n {
            if j == row_to_col[i] {
                break;
            }
            // columns of already fixed rows are taken
            if col_to_row[j] < i || !tight(i, j) {
                continue;
            }
            // Moving i to j frees c0 and evicts row k; k must reach c0 by
            // an alternating path among the unfixed rows other than i.
            let c0 = row_to_col[i];
            let k = col_to_row[j];
            if let Some(path) = alternating_path(n, k, c0, i, &row_to_col, &col_to_row, &tight) {
                // path: list of (row, new column)
                for (r, c) in path {
                    row_to_col[r] = c;
                    col_to_row[c] = r;
                }
                row_to_col[i] = j;
                col_to_row[j] = i;
                break;
            }
        }
    }
    row_to_col
}

/// BFS from `start` row to `target` column over tight edges, re-matching
/// rows along the way. Rows `<= fixed` are frozen. Returns the reassignments.
fn alternating_path(
    n: usize,
    start: usize,
    target: usize,
    fixed: usize,
    row_to_col: &[usize],
    col_to_row: &[usize],
    tight: &impl Fn(usize, usize) -> bool,
) -> Option<Vec<(usize, usize)>> {
    let mut prev_col: Vec<Option<(usize, usize)>> = vec![None; n]; // col -> (row that takes it, previous col of that row's chain)
    let mut seen_row = vec![false; n];
    let mut queue = VecDeque::new();
    seen_row[start] = true;
    queue.push_back(start);
    while let Some(r) = queue.pop_front() {
        for c in 0..n {
            if c == row_to_col[r] || prev_col[c].is_some() || !tight(r, c) {
                continue;
            }
            if c == target {
                prev_col[c] = Some((r, usize::MAX));
                // unwind
                let mut path = Vec::new();
                let mut col = c;
                loop {
                    let (row, _) = prev_col[col].expect("visited");
                    path.push((row, col));
                    if row == start {
                        return Some(path);
                    }
                    col = row_to_col[row];
                }
            }
            let owner = col_to_row[c];
            if owner <= fixed || seen_row[owner] {
                continue;
            }
            prev_col[c] = Some((r, 0));
            seen_row[owner] = true;
            queue.push_back(owner);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_permutations(n: usize) -> Vec<Vec<usize>> {
        fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
            if prefix.len() == used.len() {
                out.push(prefix.clone());
                return;
            }
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    prefix.push(j);
                    rec(prefix, used, out);
                    prefix.pop();
                    used[j] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), &mut vec![false; n], &mut out);
        out
    }

    /// Lexicographically smallest optimal mapping by exhaustive search
    /// (permutations are enumerated in lexicographic order).
    fn brute(cost: &Mat) -> (Vec<usize>, f64) {
        let mut best: Option<(Vec<usize>, f64)> = None;
        for p in all_permutations(cost.nrows()) {
            let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
            if best.as_ref().map_or(true, |(_, b)| c < *b - 1e-12) {
                best = Some((p, c));
            }
        }
        best.unwrap()
    }

    #[test]
    fn diagonal_and_distance_costs_give_identity() {
        let c = Mat::from_shape_fn((5, 5), |(i, j)| if i == j { 0.0 } else { 1.0 });
        assert!(hungarian(&c).unwrap().is_identity());
        let c = Mat::from_shape_fn((4, 4), |(i, j)| (i as f64 - j as f64).abs());
        let s = hungarian(&c).unwrap();
        assert!(s.is_identity());
        assert_eq!(assignment_cost(&c, &s), 0.0);
    }

    #[test]
    fn matches_exhaustive_search_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let c = Mat::from_shape_simple_fn((6, 6), || rng.gen_range(-5.0..5.0));
            let s = hungarian(&c).unwrap();
            let (bp, bc) = brute(&c);
            assert!((assignment_cost(&c, &s) - bc).abs() < 1e-9);
            assert_eq!(s.as_slice(), bp.as_slice());
        }
    }

    #[test]
    fn ties_resolve_to_lexicographic_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 2..=6 {
            for _ in 0..100 {
                // small integer costs produce many ties
                let c = Mat::from_shape_simple_fn((n, n), || rng.gen_range(0..3) as f64);
                let s = hungarian(&c).unwrap();
                assert_eq!(s.as_slice(), brute(&c).0.as_slice(), "cost {c:?}");
            }
        }
        let zeros = Mat::zeros((5, 5));
        assert!(hungarian(&zeros).unwrap().is_identity());
        let anti = Mat::from_shape_fn((3, 3), |(i, j)| if i + j == 2 { 0.0 } else { 1.0 });
        assert_eq!(hungarian(&anti).unwrap().as_slice(), &[2, 1, 0]);
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = Mat::zeros((3, 3));
        c[[1, 2]] = f64::NAN;
        assert!(matches!(hungarian(&c), Err(Error::Argument(_))));
        assert!(hungarian(&Mat::zeros((2, 3))).is_err());
        assert!(hungarian(&Mat::zeros((0, 0))).is_err());
        c[[1, 2]] = f64::INFINITY;
        assert!(hungarian(&c).is_err());
    }

    #[test]
    fn single_element() {
        let c = Mat::from_elem((1, 1), 3.0);
        assert_eq!(hungarian(&c).unwrap().as_slice(), &[0]);
    }
}
