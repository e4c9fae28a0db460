//! Minimum-cost linear assignment with an unmatched option.

use nalgebra::DMatrix;

/// Result of [`solve_assignment`].
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `(row, col)` pairs, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
    /// Total cost including `c_miss` for every unmatched row and column.
    pub cost: f64,
}

/// Shortest-augmenting-path Hungarian method on an `n×m` matrix with
/// `n ≤ m`. Non-finite entries are forbidden. Returns the column assigned to
/// every row, or `None` when no complete assignment avoids forbidden cells.
pub fn hungarian(cost: &DMatrix<f64>) -> Option<Vec<usize>> {
    let n = cost.nrows();
    let m = cost.ncols();
    assert!(n <= m, "hungarian expects at least as many columns as rows");
    if n == 0 {
        return Some(Vec::new());
    }
    // 1-based potentials; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = usize::MAX;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let c = cost[(i0 - 1, j - 1)];
                if c.is_finite() {
                    let cur = c - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if j1 == usize::MAX {
                return None;
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if row_of[j] != 0 {
            assignment[row_of[j] - 1] = j - 1;
        }
    }
    Some(assignment)
}

/// Solves the assignment over `C` augmented so that every row and column
/// may stay unmatched at cost `c_miss`.
///
/// The augmented `(N+M)×(M+N)` matrix is
///
/// ```text
/// [ C            diag(c_miss) ]
/// [ diag(c_miss) 0            ]
/// ```
///
/// with forbidden off-diagonal cells in the two `c_miss` blocks. Non-finite
/// entries of `C` are treated as forbidden pairs.
pub fn solve_assignment(cost: &DMatrix<f64>, c_miss: f64) -> Matching {
    let (n, m) = cost.shape();
    let size = n + m;
    let mut aug = DMatrix::from_element(size, size, f64::INFINITY);
    for i in 0..n {
        for j in 0..m {
            aug[(i, j)] = cost[(i, j)];
        }
        aug[(i, m + i)] = c_miss;
    }
    for j in 0..m {
        aug[(n + j, j)] = c_miss;
        for i in 0..n {
            aug[(n + j, m + i)] = 0.0;
        }
    }
    let assignment = hungarian(&aug).expect("augmented assignment is always feasible");

    let mut pairs = Vec::new();
    let mut unmatched_rows = Vec::new();
    let mut col_taken = vec![false; m];
    for (i, &j) in assignment.iter().take(n).enumerate() {
        if j < m {
            pairs.push((i, j));
            col_taken[j] = true;
        } else {
            unmatched_rows.push(i);
        }
    }
    let unmatched_cols: Vec<usize> = (0..m).filter(|&j| !col_taken[j]).collect();
    let cost_total = pairs.iter().map(|&(i, j)| cost[(i, j)]).sum::<f64>()
        + c_miss * (unmatched_rows.len() + unmatched_cols.len()) as f64;
    Matching {
        pairs,
        unmatched_rows,
        unmatched_cols,
        cost: cost_total,
    }
}
