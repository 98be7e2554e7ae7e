//! Objective and gradient evaluation on a hyperplane.
//!
//! The full point is `(x, z)` with `x` the `dim_m` independent variables and
//! `z = A x` the dependent ones. `dim_m` is a variable count, never a machine
//! count; machine counts are called `q` here.

use std::fmt::Write as _;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::partition::split_even;

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrix {
    /// Row-major, `rows * dim_m` entries.
    a: Vec<f64>,
    rows: usize,
    dim_m: usize,
}

impl ConstraintMatrix {
    pub fn new(rows: usize, dim_m: usize, a: Vec<f64>) -> Result<Self> {
        if dim_m == 0 {
            return Err(Error::validation("constraint matrix needs at least one column"));
        }
        if a.len() != rows * dim_m {
            return Err(Error::validation(format!(
                "{} values for a {rows}x{dim_m} matrix",
                a.len()
            )));
        }
        if let Some(v) = a.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite matrix entry {v}")));
        }
        Ok(Self { a, rows, dim_m })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim_m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim_m) {
            return Err(Error::validation("ragged matrix rows"));
        }
        Self::new(rows.len(), dim_m, rows.concat())
    }

    pub fn zeros(rows: usize, dim_m: usize) -> Result<Self> {
        Self::new(rows, dim_m, vec![0.0; rows * dim_m])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim_m(&self) -> usize {
        self.dim_m
    }

    pub fn n_total(&self) -> usize {
        self.dim_m + self.rows
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.a[j * self.dim_m + i]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.a[j * self.dim_m..(j + 1) * self.dim_m]
    }

    /// First line `rows,cols` (optionally preceded by a literal `rows,cols`
    /// header), then the row-major values, any number per line.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut dims: Option<(usize, usize)> = None;
        let mut values = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if dims.is_none() {
                if fields.len() == 2 && fields[0].eq_ignore_ascii_case("rows") && fields[1].eq_ignore_ascii_case("cols") {
                    continue;
                }
                let parsed: Vec<usize> = fields
                    .iter()
                    .map(|f| f.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse { line, message: format!("dimensions: {e}") })?;
                if parsed.len() != 2 {
                    return Err(Error::Parse { line, message: "expected `rows,cols`".into() });
                }
                dims = Some((parsed[0], parsed[1]));
                continue;
            }
            for f in fields.iter().filter(|f| !f.is_empty()) {
                values.push(f.parse::<f64>().map_err(|e| Error::Parse { line, message: format!("`{f}`: {e}") })?);
            }
        }
        let (rows, cols) = dims.ok_or_else(|| Error::Parse { line: 1, message: "missing dimensions".into() })?;
        Self::new(rows, cols, values)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("rows,cols\n{},{}\n", self.rows, self.dim_m);
        for j in 0..self.rows {
            let row: Vec<String> = self.row(j).iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

/// `z_j = Σ_i a_ji x_i` for the requested rows, all rows when `rows` is `None`.
pub fn eval_dependent(cm: &ConstraintMatrix, x: &[f64], rows: Option<&[usize]>) -> Result<Vec<f64>> {
    if x.len() != cm.dim_m {
        return Err(Error::validation(format!("x has {} entries, expected {}", x.len(), cm.dim_m)));
    }
    let dot = |j: usize| cm.row(j).iter().zip(x).map(|(a, x)| a * x).sum::<f64>();
    match rows {
        None => Ok((0..cm.rows).map(dot).collect()),
        Some(rows) => {
            if let Some(&j) = rows.iter().find(|&&j| j >= cm.rows) {
                return Err(Error::validation(format!("row {j} out of range")));
            }
            Ok(rows.iter().map(|&j| dot(j)).collect())
        }
    }
}

/// Partial derivatives of `F` at the full point: `(∂F/∂x, ∂F/∂z)`.
pub type Partials = (Vec<f64>, Vec<f64>);

fn checked_partials<F>(f_partials: &mut F, cm: &ConstraintMatrix, x: &[f64]) -> Result<Partials>
where
    F: FnMut(&[f64], &[f64]) -> Partials,
{
    let z = eval_dependent(cm, x, None)?;
    let (dx, dz) = f_partials(x, &z);
    if dx.len() != cm.dim_m || dz.len() != cm.rows {
        return Err(Error::validation(format!(
            "partials have lengths ({}, {}), expected ({}, {})",
            dx.len(),
            dz.len(),
            cm.dim_m,
            cm.rows
        )));
    }
    Ok((dx, dz))
}

/// Column entries of `Σ_j dz_j a_ji` for `i` in `cols`.
fn chain_columns(cm: &ConstraintMatrix, dz: &[f64], cols: Range<usize>) -> Vec<f64> {
    cols.map(|i| (0..cm.rows).map(|j| dz[j] * cm.get(j, i)).sum()).collect()
}

/// `g_i = ∂F/∂x_i + Σ_j ∂F/∂z_j · a_ji`.
pub fn gradient<F>(mut f_partials: F, cm: &ConstraintMatrix, x: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &[f64]) -> Partials,
{
    let (dx, dz) = checked_partials(&mut f_partials, cm, x)?;
    let chain = chain_columns(cm, &dz, 0..cm.dim_m);
    Ok(dx.iter().zip(chain).map(|(d, c)| d + c).collect())
}

/// Balanced row blocks (for evaluating `z`) and column blocks (for the
/// gradient sum), one of each per machine.
#[derive(Debug, Clone, PartialEq)]
pub struct RowColPlan {
    pub rows: Vec<Range<usize>>,
    pub cols: Vec<Range<usize>>,
    pub machine_count: usize,
    matrix_rows: usize,
    matrix_cols: usize,
}

impl RowColPlan {
    /// Elements of `a` that machine `k` holds in both its blocks.
    pub fn overlap(&self, k: usize) -> usize {
        self.rows[k].len() * self.cols[k].len()
    }

    /// Duplicated elements summed over machines.
    pub fn duplicated_elements(&self) -> usize {
        (0..self.machine_count).map(|k| self.overlap(k)).sum()
    }

    /// Distinct elements of `a` stored on machine `k`.
    pub fn stored_elements(&self, k: usize) -> usize {
        self.rows[k].len() * self.matrix_cols + self.cols[k].len() * self.matrix_rows - self.overlap(k)
    }

    /// `rows * cols / q²`, the per-machine overlap order of magnitude.
    pub fn overlap_estimate(&self) -> f64 {
        (self.matrix_rows * self.matrix_cols) as f64 / (self.machine_count * self.machine_count) as f64
    }
}

pub fn plan_distribution(cm: &ConstraintMatrix, q: usize) -> Result<RowColPlan> {
    if q == 0 {
        return Err(Error::validation("machine count must be at least 1"));
    }
    if q > cm.rows && q > cm.dim_m {
        return Err(Error::validation(format!(
            "{q} machines exceed both {} rows and {} columns",
            cm.rows, cm.dim_m
        )));
    }
    Ok(RowColPlan {
        rows: split_even(cm.rows, q).assignments,
        cols: split_even(cm.dim_m, q).assignments,
        machine_count: q,
        matrix_rows: cm.rows,
        matrix_cols: cm.dim_m,
    })
}

/// Gradient assembled from per-machine column blocks, merged by addition.
pub fn distributed_gradient<F>(mut f_partials: F, cm: &ConstraintMatrix, x: &[f64], plan: &RowColPlan) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &[f64]) -> Partials,
{
    if plan.matrix_rows != cm.rows || plan.matrix_cols != cm.dim_m {
        return Err(Error::validation("plan was built for a different matrix"));
    }
    let (dx, dz) = checked_partials(&mut f_partials, cm, x)?;
    let mut g = dx;
    for cols in &plan.cols {
        let mut part = vec![0.0; cm.dim_m];
        for (i, v) in cols.clone().zip(chain_columns(cm, &dz, cols.clone())) {
            part[i] = v;
        }
        for (g, p) in g.iter_mut().zip(part) {
            *g += p;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTiming {
    pub sequential: f64,
    pub parallel: f64,
    /// `dim_m (1 - 1/q) t_scalar > t_in + t_out`.
    pub parallel_wins: bool,
}

/// Sequential versus distributed time for evaluating `dim_m` scalar products.
pub fn distributed_objective_time(dim_m: usize, q: usize, t_scalar: f64, t_in: f64, t_out: f64) -> Result<ObjectiveTiming> {
    if q == 0 {
        return Err(Error::validation("machine count must be at least 1"));
    }
    if !(t_scalar >= 0.0 && t_in >= 0.0 && t_out >= 0.0) {
        return Err(Error::validation("times must be non-negative"));
    }
    let sequential = dim_m as f64 * t_scalar;
    let parallel = sequential / q as f64 + t_in + t_out;
    let saved = dim_m as f64 * (1.0 - 1.0 / q as f64) * t_scalar;
    Ok(ObjectiveTiming { sequential, parallel, parallel_wins: saved > t_in + t_out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ConstraintMatrix {
        ConstraintMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_matrix_gives_zero_dependents() {
        let cm = ConstraintMatrix::zeros(4, 3).unwrap();
        assert_eq!(eval_dependent(&cm, &[1.0, 2.0, 3.0], None).unwrap(), vec![0.0; 4]);
        assert_eq!(cm.n_total(), 7);
    }

    #[test]
    fn summation_row() {
        let cm = ConstraintMatrix::from_rows(&[vec![1.0; 4]]).unwrap();
        assert_eq!(eval_dependent(&cm, &[1.0, 2.5, -3.0, 4.0], None).unwrap(), vec![4.5]);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cm = random_matrix(&mut rng, 5, 3);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let z = eval_dependent(&cm, &x, None).unwrap();
        for j in 0..5 {
            let mut acc = 0.0;
            for i in 0..3 {
                acc += cm.get(j, i) * x[i];
            }
            assert!((z[j] - acc).abs() <= 1e-12);
        }
        assert!(eval_dependent(&cm, &[1.0], None).is_err());
        assert!(eval_dependent(&cm, &x, Some(&[5])).is_err());
    }

    #[test]
    fn zero_matrix_gradient_is_direct_partial() {
        let cm = ConstraintMatrix::zeros(3, 2).unwrap();
        let g = gradient(|x, _| (vec![2.0 * x[0], 3.0], vec![7.0, 8.0, 9.0]), &cm, &[1.5, 0.0]).unwrap();
        assert_eq!(g, vec![3.0, 3.0]);
    }

    #[test]
    fn half_norm_of_z() {
        // F = ½‖z‖² with a = [[1,2],[3,4]] gives g = aᵀ a x.
        let cm = ConstraintMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let x = [0.5, -1.0];
        let g = gradient(|x, z| (vec![0.0; x.len()], z.to_vec()), &cm, &x).unwrap();
        // aᵀa = [[10,14],[14,20]]
        assert_eq!(g, vec![10.0 * 0.5 - 14.0, 14.0 * 0.5 - 20.0]);
    }

    #[test]
    fn partial_length_mismatch_is_rejected() {
        let cm = ConstraintMatrix::zeros(2, 2).unwrap();
        assert!(gradient(|_, _| (vec![0.0], vec![0.0, 0.0]), &cm, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn plan_examples() {
        let cm = ConstraintMatrix::zeros(10, 10).unwrap();
        let p = plan_distribution(&cm, 2).unwrap();
        assert_eq!(p.rows, vec![0..5, 5..10]);
        assert_eq!(p.cols, vec![0..5, 5..10]);
        assert_eq!(p.overlap(0), 25);
        assert_eq!(p.overlap(1), 25);
        assert_eq!(p.duplicated_elements(), 50);
        assert_eq!(p.overlap_estimate(), 25.0);

        let one = plan_distribution(&cm, 1).unwrap();
        assert_eq!(one.stored_elements(0), 100);
        assert!(plan_distribution(&ConstraintMatrix::zeros(3, 4).unwrap(), 5).is_err());
        assert!(plan_distribution(&ConstraintMatrix::zeros(3, 4).unwrap(), 4).is_ok());
    }

    #[test]
    fn timing_examples() {
        let t = distributed_objective_time(1000, 1, 1.0, 3.0, 4.0).unwrap();
        assert_eq!(t.parallel, t.sequential + 7.0);
        assert!(!t.parallel_wins);
        assert!(distributed_objective_time(10, 2, 1.0, 0.0, 0.0).unwrap().parallel_wins);
        let t = distributed_objective_time(1000, 4, 1.0, 250.0, 250.0).unwrap();
        assert!(t.parallel_wins);
        assert_eq!(t.parallel, 750.0);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let cm = ConstraintMatrix::from_rows(&[vec![1.0, -2.5], vec![0.125, 3.0], vec![0.0, 1e-3]]).unwrap();
        assert_eq!(ConstraintMatrix::parse_csv(&cm.to_csv()).unwrap(), cm);
        assert_eq!(ConstraintMatrix::parse_csv("2,2\n1,2,3,4\n").unwrap().get(1, 0), 3.0);
        assert!(matches!(ConstraintMatrix::parse_csv("2,2\n1,2\n3,x\n"), Err(Error::Parse { line: 3, .. })));
        assert!(ConstraintMatrix::parse_csv("2,2\n1,2,3\n").is_err());
    }

    proptest! {
        #[test]
        fn row_blocks_concatenate(rows in 1usize..20, cols in 1usize..10, q in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cm = random_matrix(&mut rng, rows, cols);
            let x: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            prop_assume!(q <= rows.max(cols));
            let plan = plan_distribution(&cm, q).unwrap();
            let mut joined = Vec::new();
            for r in &plan.rows {
                let idx: Vec<usize> = r.clone().collect();
                joined.extend(eval_dependent(&cm, &x, Some(&idx)).unwrap());
            }
            prop_assert_eq!(joined, eval_dependent(&cm, &x, None).unwrap());
            let dup: usize = (0..q).map(|k| plan.rows[k].len() * plan.cols[k].len()).sum();
            prop_assert_eq!(plan.duplicated_elements(), dup);
            let sizes: Vec<usize> = plan.cols.iter().map(|c| c.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }

        #[test]
        fn distributed_gradient_matches(rows in 1usize..20, cols in 1usize..10, q in 1usize..6, seed in any::<u64>()) {
            prop_assume!(q <= rows.max(cols));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cm = random_matrix(&mut rng, rows, cols);
            let x: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = |x: &[f64], z: &[f64]| (x.iter().map(|v| 2.0 * v).collect::<Vec<_>>(), z.iter().map(|v| v * v).collect::<Vec<_>>());
            let plan = plan_distribution(&cm, q).unwrap();
            let a = gradient(f, &cm, &x).unwrap();
            let b = distributed_gradient(f, &cm, &x, &plan).unwrap();
            for (a, b) in a.iter().zip(&b) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
