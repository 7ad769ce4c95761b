//! Dense linear assignment by shortest augmenting paths with dual potentials
//! (Jonker-Volgenant style, as in Crouse's formulation). O(n^3) worst case.

use crate::error::{Error, Result};

/// Minimum-cost perfect matching for a square row-major cost matrix.
/// Returns `col_for_row` and the optimal total cost.
pub fn solve(cost: &[f64], n: usize) -> Result<(Vec<usize>, f64)> {
    solve_with_duals(cost, n).map(|(p, total, _)| (p, total))
}

/// As [`solve`], also returning column potentials `v`. Row potentials are
/// implicit: `u_i = c[i][p_i] - v[p_i]`, and at optimum every reduced cost
/// `c[i][j] - u_i - v_j` is non-negative.
pub fn solve_with_duals(cost: &[f64], n: usize) -> Result<(Vec<usize>, f64, Vec<f64>)> {
    if cost.len() != n * n {
        return Err(Error::Shape(format!(
            "cost buffer of {} entries is not {n}x{n}",
            cost.len()
        )));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0, Vec::new()));
    }
    if let Some(c) = cost.iter().find(|c| !c.is_finite()) {
        return Err(Error::parameter("cost", format!("non-finite entry {c}")));
    }

    const NONE: usize = usize::MAX;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut col_for_row = vec![NONE; n];
    let mut row_for_col = vec![NONE; n];
    let mut path = vec![NONE; n];
    let mut shortest = vec![f64::INFINITY; n];
    let mut remaining = vec![0usize; n];
    let mut seen_row = vec![false; n];
    let mut seen_col = vec![false; n];

    for cur_row in 0..n {
        shortest.fill(f64::INFINITY);
        seen_row.fill(false);
        seen_col.fill(false);
        for (it, r) in remaining.iter_mut().enumerate() {
            *r = it;
        }
        let mut num_remaining = n;
        let mut min_val = 0.0;
        let mut i = cur_row;
        let sink;

        loop {
            seen_row[i] = true;
            let row = &cost[i * n..(i + 1) * n];
            let ui = u[i];
            let mut index = NONE;
            let mut lowest = f64::INFINITY;
            for (it, &j) in remaining[..num_remaining].iter().enumerate() {
                let r = min_val + row[j] - ui - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                // prefer an unassigned column on ties: ends the search sooner
                if shortest[j] < lowest || (shortest[j] == lowest && row_for_col[j] == NONE) {
                    lowest = shortest[j];
                    index = it;
                }
            }
            min_val = lowest;
            let j = remaining[index];
            seen_col[j] = true;
            num_remaining -= 1;
            remaining[index] = remaining[num_remaining];
            if row_for_col[j] == NONE {
                sink = j;
                break;
            }
            i = row_for_col[j];
        }

        u[cur_row] += min_val;
        for r in 0..n {
            if seen_row[r] && r != cur_row {
                u[r] += min_val - shortest[col_for_row[r]];
            }
        }
        for c in 0..n {
            if seen_col[c] {
                v[c] -= min_val - shortest[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row_for_col[j] = r;
            std::mem::swap(&mut col_for_row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }

    let total = col_for_row
        .iter()
        .enumerate()
        .map(|(r, &c)| cost[r * n + c])
        .sum();
    Ok((col_for_row, total, v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_single() {
        assert_eq!(solve(&[], 0).unwrap(), (vec![], 0.0));
        assert_eq!(solve(&[4.0], 1).unwrap(), (vec![0], 4.0));
    }

    #[test]
    fn small_known_instance() {
        // classic 3x3: optimum 5 via rows -> (1, 0, 2)
        let c = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let (p, total) = solve(&c, 3).unwrap();
        assert_eq!(p, vec![1, 0, 2]);
        assert_eq!(total, 5.0);
    }

    #[test]
    fn rejects_bad_shape_and_nan() {
        assert!(solve(&[1.0, 2.0, 3.0], 2).is_err());
        assert!(solve(&[1.0, f64::NAN, 3.0, 4.0], 2).is_err());
    }

    #[test]
    fn duals_certify_optimality() {
        let mut rng = crate::rng::Stream::new(11);
        for n in [2usize, 5, 40, 150] {
            let c: Vec<f64> = (0..n * n).map(|_| rng.uniform()).collect();
            let (p, _, v) = solve_with_duals(&c, n).unwrap();
            for i in 0..n {
                let u = c[i * n + p[i]] - v[p[i]];
                for j in 0..n {
                    assert!(c[i * n + j] - u - v[j] > -1e-9, "n={n} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn handles_all_ties() {
        let (p, total) = solve(&[1.0; 16], 4).unwrap();
        let mut sorted = p.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert_eq!(total, 4.0);
    }
}
