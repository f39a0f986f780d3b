use crate::LpError;

/// A single constraint row `lower <= sum(coeffs) <= upper`.
///
/// Equality rows use `lower == upper`; one-sided rows use an infinite bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
}

/// Sparse linear program in minimization form with range rows and
/// bounded columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LpProblem {
    objective: Vec<f64>,
    col_lower: Vec<f64>,
    col_upper: Vec<f64>,
    rows: Vec<Row>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a column and returns its index.
    pub fn add_col(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.col_lower.push(lower);
        self.col_upper.push(upper);
        self.objective.len() - 1
    }

    /// Adds a range row and returns its index. Duplicate column entries are
    /// summed and explicit zeros dropped.
    pub fn add_row<I>(&mut self, coeffs: I, lower: f64, upper: f64) -> usize
    where
        I: IntoIterator<Item = (usize, f64)>,
    {
        let mut entries: Vec<(usize, f64)> = coeffs.into_iter().collect();
        entries.sort_by_key(|&(j, _)| j);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for (j, v) in entries {
            match merged.last_mut() {
                Some((k, acc)) if *k == j => *acc += v,
                _ => merged.push((j, v)),
            }
        }
        merged.retain(|&(_, v)| v != 0.0);
        self.rows.push(Row {
            coeffs: merged,
            lower,
            upper,
        });
        self.rows.len() - 1
    }

    pub fn num_cols(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn set_objective_coeff(&mut self, col: usize, cost: f64) {
        self.objective[col] = cost;
    }

    pub fn col_lower(&self) -> &[f64] {
        &self.col_lower
    }

    pub fn col_upper(&self) -> &[f64] {
        &self.col_upper
    }

    pub fn col_bounds(&self, col: usize) -> (f64, f64) {
        (self.col_lower[col], self.col_upper[col])
    }

    pub fn set_col_bounds(&mut self, col: usize, lower: f64, upper: f64) {
        self.col_lower[col] = lower;
        self.col_upper[col] = upper;
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Row {
        &self.rows[i]
    }

    pub fn set_row_bounds(&mut self, row: usize, lower: f64, upper: f64) {
        self.rows[row].lower = lower;
        self.rows[row].upper = upper;
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.coeffs.len()).sum()
    }

    /// Checks index consistency, finiteness of coefficients and bound order.
    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_cols();
        for j in 0..n {
            let (lo, hi) = self.col_bounds(j);
            if !self.objective[j].is_finite() {
                return Err(LpError::Malformed(format!("objective[{j}] is not finite")));
            }
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY
            {
                return Err(LpError::Malformed(format!(
                    "column {j} has invalid bounds [{lo}, {hi}]"
                )));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.lower.is_nan()
                || row.upper.is_nan()
                || row.lower > row.upper
                || row.lower == f64::INFINITY
                || row.upper == f64::NEG_INFINITY
            {
                return Err(LpError::Malformed(format!(
                    "row {i} has invalid bounds [{}, {}]",
                    row.lower, row.upper
                )));
            }
            for &(j, v) in &row.coeffs {
                if j >= n {
                    return Err(LpError::Malformed(format!(
                        "row {i} references column {j} but only {n} columns exist"
                    )));
                }
                if !v.is_finite() {
                    return Err(LpError::Malformed(format!("row {i} has a non-finite coefficient")));
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    pub fn row_activity(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.coeffs.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    /// Largest absolute bound violation of `x` over columns and rows.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.num_cols() {
            worst = worst.max(self.col_lower[j] - x[j]).max(x[j] - self.col_upper[j]);
        }
        for (row, act) in self.rows.iter().zip(self.row_activity(x)) {
            worst = worst.max(row.lower - act).max(act - row.upper);
        }
        worst
    }

    /// Column-major copy of the constraint matrix.
    pub(crate) fn to_csc(&self) -> Csc {
        let n = self.num_cols();
        let mut counts = vec![0usize; n + 1];
        for row in &self.rows {
            for &(j, _) in &row.coeffs {
                counts[j + 1] += 1;
            }
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let start = counts.clone();
        let mut fill = counts;
        let nnz = start[n];
        let mut index = vec![0usize; nnz];
        let mut value = vec![0.0; nnz];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in &row.coeffs {
                let k = fill[j];
                index[k] = i;
                value[k] = v;
                fill[j] += 1;
            }
        }
        Csc {
            start,
            index,
            value,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Csc {
    pub start: Vec<usize>,
    pub index: Vec<usize>,
    pub value: Vec<f64>,
}

impl Csc {
    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.start[j], self.start[j + 1]);
        self.index[a..b].iter().copied().zip(self.value[a..b].iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_row_merges_duplicates() {
        let mut lp = LpProblem::new();
        let x = lp.add_col(1.0, 0.0, 1.0);
        let y = lp.add_col(1.0, 0.0, 1.0);
        lp.add_row([(y, 1.0), (x, 2.0), (y, 3.0), (x, -2.0)], 0.0, 1.0);
        assert_eq!(lp.row(0).coeffs, vec![(y, 4.0)]);
    }

    #[test]
    fn validate_rejects_bad_bounds_and_indices() {
        let mut lp = LpProblem::new();
        lp.add_col(0.0, 2.0, 1.0);
        assert!(matches!(lp.validate(), Err(LpError::Malformed(_))));

        let mut lp = LpProblem::new();
        lp.add_col(0.0, 0.0, 1.0);
        lp.add_row([(3, 1.0)], 0.0, 1.0);
        assert!(matches!(lp.validate(), Err(LpError::Malformed(_))));
    }

    #[test]
    fn csc_matches_rows() {
        let mut lp = LpProblem::new();
        for _ in 0..3 {
            lp.add_col(0.0, 0.0, 1.0);
        }
        lp.add_row([(0, 1.0), (2, 2.0)], 0.0, 1.0);
        lp.add_row([(1, 3.0), (2, 4.0)], 0.0, 1.0);
        let csc = lp.to_csc();
        assert_eq!(csc.col(2).collect::<Vec<_>>(), vec![(0, 2.0), (1, 4.0)]);
        assert_eq!(csc.col(1).collect::<Vec<_>>(), vec![(1, 3.0)]);
    }
}
