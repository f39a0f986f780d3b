//! Sparse LU factorization of simplex bases.
//!
//! Right-looking Gaussian elimination with Markowitz pivot selection and
//! threshold partial pivoting. Singletons are taken first, so the
//! triangular parts typical of LP bases are factored without fill.

/// Entries below this magnitude are never accepted as pivots.
const ABS_PIVOT_TOL: f64 = 1e-11;
/// Threshold partial pivoting factor for general pivots.
const REL_PIVOT_TOL: f64 = 0.1;
/// Row singletons are accepted when not much smaller than their column.
const ROW_SINGLETON_TOL: f64 = 0.01;
/// Number of short columns examined by the Markowitz search.
const SEARCH_COLS: usize = 4;

#[derive(Debug, Clone)]
pub(crate) struct Singular {
    /// Basis positions (matrix columns) left without a pivot.
    pub cols: Vec<usize>,
    /// Matrix rows left without a pivot.
    pub rows: Vec<usize>,
}

/// Factors `E B = U` where `E` is a sequence of row eliminations and `U` is
/// upper triangular up to the recorded pivot order.
#[derive(Debug, Clone, Default)]
pub(crate) struct LuFactors {
    m: usize,
    pivot_row: Vec<usize>,
    pivot_col: Vec<usize>,
    pivot_val: Vec<f64>,
    l_start: Vec<usize>,
    l_index: Vec<usize>,
    l_value: Vec<f64>,
    u_start: Vec<usize>,
    u_index: Vec<usize>,
    u_value: Vec<f64>,
}

impl LuFactors {
    #[cfg(test)]
    pub fn nnz(&self) -> usize {
        self.l_index.len() + self.u_index.len() + self.m
    }

    /// Factors the square matrix whose `k`-th column is `columns[k]`
    /// (entries are `(row, value)`).
    pub fn factorize(m: usize, columns: &[Vec<(usize, f64)>]) -> Result<Self, Singular> {
        debug_assert_eq!(columns.len(), m);
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (j, col) in columns.iter().enumerate() {
            for &(i, v) in col {
                if v != 0.0 {
                    rows[i].push((j, v));
                    col_rows[j].push(i);
                }
            }
        }
        let mut row_count: Vec<usize> = rows.iter().map(Vec::len).collect();
        let mut col_count: Vec<usize> = col_rows.iter().map(Vec::len).collect();
        let mut row_done = vec![false; m];
        let mut col_done = vec![false; m];
        let mut pos = vec![0usize; m];

        let mut lu = LuFactors {
            m,
            l_start: vec![0],
            u_start: vec![0],
            ..Default::default()
        };

        // Singleton candidates; entries are re-validated when popped.
        let mut col_single: Vec<usize> = (0..m).rev().filter(|&c| col_count[c] == 1).collect();
        let mut row_single: Vec<usize> = (0..m).rev().filter(|&r| row_count[r] == 1).collect();

        for _step in 0..m {
            let active = Active {
                rows: &rows,
                col_rows: &col_rows,
                row_count: &row_count,
                col_count: &col_count,
                row_done: &row_done,
                col_done: &col_done,
            };
            let Some((r, c)) = active.select_pivot(&mut col_single, &mut row_single) else {
                let cols = (0..m).filter(|&j| !col_done[j]).collect();
                let rows = (0..m).filter(|&i| !row_done[i]).collect();
                return Err(Singular { cols, rows });
            };
            let piv = entry(&rows[r], c).expect("pivot entry present");
            let prow: Vec<(usize, f64)> =
                rows[r].iter().copied().filter(|&(j, _)| j != c).collect();

            for idx in 0..col_rows[c].len() {
                let i = col_rows[c][idx];
                if row_done[i] || i == r {
                    continue;
                }
                let Some(at) = rows[i].iter().position(|&(j, _)| j == c) else {
                    continue;
                };
                let a_ic = rows[i][at].1;
                rows[i].swap_remove(at);
                row_count[i] -= 1;
                let mult = a_ic / piv;
                lu.l_index.push(i);
                lu.l_value.push(mult);

                for (k, &(j, _)) in rows[i].iter().enumerate() {
                    pos[j] = k + 1;
                }
                for &(j, v) in &prow {
                    if pos[j] > 0 {
                        rows[i][pos[j] - 1].1 -= mult * v;
                    } else {
                        rows[i].push((j, -mult * v));
                        col_rows[j].push(i);
                        col_count[j] += 1;
                        row_count[i] += 1;
                    }
                }
                for &(j, _) in rows[i].iter() {
                    pos[j] = 0;
                }
                if row_count[i] == 1 {
                    row_single.push(i);
                }
            }
            lu.l_start.push(lu.l_index.len());

            for &(j, v) in &prow {
                col_count[j] -= 1;
                if col_count[j] == 1 {
                    col_single.push(j);
                }
                lu.u_index.push(j);
                lu.u_value.push(v);
            }
            lu.u_start.push(lu.u_index.len());
            lu.pivot_row.push(r);
            lu.pivot_col.push(c);
            lu.pivot_val.push(piv);

            row_done[r] = true;
            col_done[c] = true;
            col_count[c] = 0;
            rows[r].clear();
            row_count[r] = 0;
        }
        Ok(lu)
    }

    /// Solves `B x = b` in place: `rhs` is indexed by row on entry and by
    /// basis position on exit.
    pub fn ftran(&self, rhs: &mut [f64], work: &mut Vec<f64>) {
        for k in 0..self.m {
            let v = rhs[self.pivot_row[k]];
            if v != 0.0 {
                for p in self.l_start[k]..self.l_start[k + 1] {
                    rhs[self.l_index[p]] -= self.l_value[p] * v;
                }
            }
        }
        work.clear();
        work.resize(self.m, 0.0);
        for k in (0..self.m).rev() {
            let mut s = rhs[self.pivot_row[k]];
            for p in self.u_start[k]..self.u_start[k + 1] {
                s -= self.u_value[p] * work[self.u_index[p]];
            }
            work[self.pivot_col[k]] = s / self.pivot_val[k];
        }
        rhs.copy_from_slice(work);
    }

    /// Solves `B^T y = c` in place: `rhs` is indexed by basis position on
    /// entry and by row on exit.
    pub fn btran(&self, rhs: &mut [f64], work: &mut Vec<f64>) {
        work.clear();
        work.resize(self.m, 0.0);
        for k in 0..self.m {
            let z = rhs[self.pivot_col[k]] / self.pivot_val[k];
            work[self.pivot_row[k]] = z;
            if z != 0.0 {
                for p in self.u_start[k]..self.u_start[k + 1] {
                    rhs[self.u_index[p]] -= self.u_value[p] * z;
                }
            }
        }
        for k in (0..self.m).rev() {
            let mut s = 0.0;
            for p in self.l_start[k]..self.l_start[k + 1] {
                s += self.l_value[p] * work[self.l_index[p]];
            }
            work[self.pivot_row[k]] -= s;
        }
        rhs.copy_from_slice(work);
    }
}

fn entry(row: &[(usize, f64)], col: usize) -> Option<f64> {
    row.iter().find(|&&(j, _)| j == col).map(|&(_, v)| v)
}

/// Read-only view of the active submatrix during elimination.
struct Active<'a> {
    rows: &'a [Vec<(usize, f64)>],
    col_rows: &'a [Vec<usize>],
    row_count: &'a [usize],
    col_count: &'a [usize],
    row_done: &'a [bool],
    col_done: &'a [bool],
}

impl Active<'_> {
    fn col_max(&self, c: usize) -> f64 {
        self.col_rows[c]
            .iter()
            .filter(|&&i| !self.row_done[i])
            .filter_map(|&i| entry(&self.rows[i], c))
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    fn select_pivot(&self, col_single: &mut Vec<usize>, row_single: &mut Vec<usize>) -> Option<(usize, usize)> {
        // Column singletons: no multipliers, no fill.
        while let Some(c) = col_single.pop() {
            if self.col_done[c] || self.col_count[c] != 1 {
                continue;
            }
            for &i in &self.col_rows[c] {
                if self.row_done[i] {
                    continue;
                }
                if let Some(v) = entry(&self.rows[i], c) {
                    if v.abs() > ABS_PIVOT_TOL {
                        return Some((i, c));
                    }
                }
            }
        }

        // Row singletons.
        while let Some(r) = row_single.pop() {
            if self.row_done[r] || self.row_count[r] != 1 {
                continue;
            }
            let (c, v) = self.rows[r][0];
            if v.abs() > ABS_PIVOT_TOL && v.abs() >= ROW_SINGLETON_TOL * self.col_max(c) {
                return Some((r, c));
            }
        }

        // Markowitz search over the shortest columns.
        let mut order: Vec<usize> = (0..self.rows.len())
            .filter(|&c| !self.col_done[c] && self.col_count[c] > 0)
            .collect();
        let key = |c: &usize| (self.col_count[*c], *c);
        if order.len() > 4 * SEARCH_COLS {
            order.select_nth_unstable_by_key(4 * SEARCH_COLS, key);
            order.truncate(4 * SEARCH_COLS);
        }
        order.sort_by_key(key);
        let mut best: Option<(usize, f64, usize, usize)> = None;
        let mut examined = 0;
        for &c in &order {
            let cmax = self.col_max(c);
            if cmax <= ABS_PIVOT_TOL {
                continue;
            }
            examined += 1;
            for &i in &self.col_rows[c] {
                if self.row_done[i] {
                    continue;
                }
                let Some(v) = entry(&self.rows[i], c) else { continue };
                if v.abs() < REL_PIVOT_TOL * cmax {
                    continue;
                }
                let cost = (self.row_count[i] - 1) * (self.col_count[c] - 1);
                let better = match best {
                    None => true,
                    Some((bc, bv, _, _)) => cost < bc || (cost == bc && v.abs() > bv),
                };
                if better {
                    best = Some((cost, v.abs(), i, c));
                }
            }
            if examined >= SEARCH_COLS && best.is_some() {
                break;
            }
        }
        if best.is_none() && order.len() == 4 * SEARCH_COLS {
            // Every short column was numerically empty; widen to all.
            return self.select_any();
        }
        best.map(|(_, _, i, c)| (i, c))
    }

    /// Largest admissible entry over the whole active submatrix.
    fn select_any(&self) -> Option<(usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for c in 0..self.rows.len() {
            if self.col_done[c] {
                continue;
            }
            for &i in &self.col_rows[c] {
                if self.row_done[i] {
                    continue;
                }
                if let Some(v) = entry(&self.rows[i], c) {
                    if v.abs() > ABS_PIVOT_TOL && best.is_none_or(|(b, _, _)| v.abs() > b) {
                        best = Some((v.abs(), i, c));
                    }
                }
            }
        }
        best.map(|(_, i, c)| (i, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_to_cols(a: &[Vec<f64>]) -> Vec<Vec<(usize, f64)>> {
        let m = a.len();
        (0..m)
            .map(|j| (0..m).filter(|&i| a[i][j] != 0.0).map(|i| (i, a[i][j])).collect())
            .collect()
    }

    fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, density: f64) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; m]; m];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if i == j || rng.random::<f64>() < density {
                    *v = rng.random_range(-2.0..2.0);
                }
            }
            row[i] += 4.0;
        }
        a
    }

    #[test]
    fn ftran_and_btran_solve_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &m in &[1usize, 2, 5, 17, 40] {
            let a = random_matrix(&mut rng, m, 0.2);
            let lu = LuFactors::factorize(m, &dense_to_cols(&a)).unwrap();
            let x: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut b = matvec(&a, &x);
            let mut work = Vec::new();
            lu.ftran(&mut b, &mut work);
            for (p, q) in b.iter().zip(&x) {
                assert!((p - q).abs() < 1e-10);
            }
            let at: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| a[j][i]).collect()).collect();
            let mut c = matvec(&at, &x);
            lu.btran(&mut c, &mut work);
            for (p, q) in c.iter().zip(&x) {
                assert!((p - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn permuted_identity_needs_no_fill() {
        let m = 6;
        let perm = [3, 0, 5, 1, 4, 2];
        let cols: Vec<Vec<(usize, f64)>> = (0..m).map(|j| vec![(perm[j], -1.0)]).collect();
        let lu = LuFactors::factorize(m, &cols).unwrap();
        assert_eq!(lu.nnz(), m);
    }

    #[test]
    fn singular_matrix_reports_unpivoted_parts() {
        let cols = vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 2.0), (1, 2.0)], vec![(2, 1.0)]];
        let err = LuFactors::factorize(3, &cols).unwrap_err();
        assert_eq!(err.cols.len(), 1);
        assert_eq!(err.rows.len(), 1);
    }
}
