//! Compressed-row sparse matrices and a Jacobi-preconditioned BiCGSTAB.

use nalgebra::{DMatrix, DVector};

use super::NumericsError;

/// Largest system handed to the dense LU fallback.
pub const DENSE_FALLBACK_MAX: usize = 64;

const MAX_RESTARTS: usize = 8;

/// Square CSR matrix. Column indices are strictly increasing within a row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self, NumericsError> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= n || *c >= n) {
            return Err(NumericsError::InvalidInput(format!("entry ({r}, {c}) outside {n}x{n}")));
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0usize; n + 1];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(CsrMatrix { n, row_offsets, col_indices, values })
    }

    pub fn from_raw(
        n: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, NumericsError> {
        let m = CsrMatrix { n, row_offsets, col_indices, values };
        m.check()?;
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    fn check(&self) -> Result<(), NumericsError> {
        let bad = |m: String| Err(NumericsError::InvalidInput(m));
        if self.row_offsets.len() != self.n + 1 || self.row_offsets[0] != 0 {
            return bad("row offsets must have n+1 entries starting at 0".into());
        }
        if self.row_offsets.windows(2).any(|w| w[1] < w[0]) {
            return bad("row offsets must be non-decreasing".into());
        }
        if *self.row_offsets.last().unwrap() != self.col_indices.len() || self.col_indices.len() != self.values.len() {
            return bad("row offsets, column indices and values disagree in length".into());
        }
        for i in 0..self.n {
            let cols = &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]];
            if cols.iter().any(|&c| c >= self.n) {
                return bad(format!("row {i} has a column index out of range"));
            }
            if cols.windows(2).any(|w| w[1] <= w[0]) {
                return bad(format!("row {i} column indices not strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).find(|&(c, _)| c == i).map_or(0.0, |(_, v)| v))
            .collect()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(c, v)| c == i || v == 0.0))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (c, v) in self.row(i) {
                d[(i, c)] = v;
            }
        }
        d
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.mul_vec(x);
    b.iter().zip(ax).map(|(bi, axi)| bi - axi).collect()
}

/// Solves `A x = b` to `‖Ax − b‖₂ ≤ tol·‖b‖₂`.
///
/// Diagonal systems are divided out directly. Everything else goes through
/// BiCGSTAB with a Jacobi preconditioner; systems of at most
/// [`DENSE_FALLBACK_MAX`] unknowns fall back to dense LU if it fails.
pub fn solve_sparse(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>, NumericsError> {
    if b.len() != a.n {
        return Err(NumericsError::InvalidInput(format!("rhs length {} for {}x{} matrix", b.len(), a.n, a.n)));
    }
    if !(tol > 0.0) {
        return Err(NumericsError::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; a.n]);
    }
    let target = tol * b_norm;

    if a.is_diagonal() {
        let d = a.diagonal();
        if d.iter().all(|&v| v != 0.0) {
            let x: Vec<f64> = b.iter().zip(&d).map(|(bi, di)| bi / di).collect();
            let r = norm2(&residual(a, &x, b));
            if r <= target {
                return Ok(x);
            }
        }
    }

    match bicgstab(a, b, None, tol, max_iter) {
        Ok(sol) => Ok(sol.x),
        Err(err) if a.n <= DENSE_FALLBACK_MAX => {
            log::debug!("bicgstab failed ({err}), using dense LU for n = {}", a.n);
            let x = a
                .to_dense()
                .lu()
                .solve(&DVector::from_column_slice(b))
                .ok_or(NumericsError::NoConvergence {
                    residual_norm: f64::NAN,
                    iterations: 0,
                    reason: "singular matrix".into(),
                })?;
            let x: Vec<f64> = x.iter().copied().collect();
            let r = norm2(&residual(a, &x, b));
            if r <= target {
                Ok(x)
            } else {
                Err(NumericsError::NoConvergence {
                    residual_norm: r,
                    iterations: 0,
                    reason: "dense LU residual above tolerance".into(),
                })
            }
        }
        Err(err) => Err(err),
    }
}

#[derive(Clone, Debug)]
pub struct IterativeSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Jacobi-preconditioned BiCGSTAB.
///
/// Convergence is only declared on the true residual `b − Ax`; when the
/// recurrence claims convergence but the true residual disagrees, or the
/// recurrence breaks down, the iteration restarts from the current iterate.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<IterativeSolution, NumericsError> {
    let n = a.n;
    let target = tol * norm2(b);
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let precondition = |v: &[f64], out: &mut [f64]| {
        for ((o, vi), di) in out.iter_mut().zip(v).zip(&inv_diag) {
            *o = vi * di;
        }
    };

    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut iterations = 0usize;
    let mut restarts = 0usize;
    let mut r = residual(a, &x, b);
    let mut r_norm = norm2(&r);

    let (mut p, mut v, mut y, mut s, mut z, mut t) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);

    'outer: loop {
        if r_norm <= target {
            return Ok(IterativeSolution { x, iterations, residual_norm: r_norm });
        }
        if restarts > MAX_RESTARTS {
            break;
        }
        let r_hat = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        p.fill(0.0);
        v.fill(0.0);

        while iterations < max_iter {
            iterations += 1;
            let rho_new = dot(&r_hat, &r);
            if rho_new == 0.0 || !rho_new.is_finite() {
                restarts += 1;
                r = residual(a, &x, b);
                r_norm = norm2(&r);
                continue 'outer;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            precondition(&p, &mut y);
            a.mul_vec_into(&y, &mut v);
            let denom = dot(&r_hat, &v);
            if denom == 0.0 || !denom.is_finite() {
                restarts += 1;
                r = residual(a, &x, b);
                r_norm = norm2(&r);
                continue 'outer;
            }
            alpha = rho / denom;
            for i in 0..n {
                x[i] += alpha * y[i];
                s[i] = r[i] - alpha * v[i];
            }
            if norm2(&s) <= target {
                r = residual(a, &x, b);
                r_norm = norm2(&r);
                if r_norm > target {
                    restarts += 1;
                }
                continue 'outer;
            }
            precondition(&s, &mut z);
            a.mul_vec_into(&z, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..n {
                x[i] += omega * z[i];
                r[i] = s[i] - omega * t[i];
            }
            r_norm = norm2(&r);
            if r_norm <= target || omega == 0.0 || !omega.is_finite() {
                r = residual(a, &x, b);
                r_norm = norm2(&r);
                if r_norm > target {
                    restarts += 1;
                }
                continue 'outer;
            }
        }
        break;
    }
    let r_norm = norm2(&residual(a, &x, b));
    if r_norm <= target {
        return Ok(IterativeSolution { x, iterations, residual_norm: r_norm });
    }
    Err(NumericsError::NoConvergence {
        residual_norm: r_norm,
        iterations,
        reason: if iterations >= max_iter {
            "iteration limit reached".into()
        } else {
            "breakdown".into()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tridiag(n: usize, lo: f64, d: f64, hi: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, d));
            if i > 0 {
                t.push((i, i - 1, lo));
            }
            if i + 1 < n {
                t.push((i, i + 1, hi));
            }
        }
        CsrMatrix::from_triplets(n, t).unwrap()
    }

    #[test]
    fn identity_system() {
        let x = solve_sparse(&CsrMatrix::identity(3), &[1.0, 2.0, 3.0], 1e-12, 10).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn diagonal_system() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 2.0), (1, 1, 4.0)]).unwrap();
        assert_eq!(solve_sparse(&a, &[2.0, 8.0], 1e-12, 10).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn laplacian_1d() {
        let a = tridiag(4, -1.0, 2.0, -1.0);
        let x = bicgstab(&a, &[1.0, 0.0, 0.0, 1.0], None, 1e-13, 100).unwrap().x;
        for xi in x {
            assert!((xi - 1.0).abs() < 1e-12);
        }
        let x = solve_sparse(&a, &[1.0, 0.0, 0.0, 1.0], 1e-13, 100).unwrap();
        for xi in x {
            assert!((xi - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nonsymmetric_upwind_like() {
        let n = 200;
        let a = tridiag(n, -1.5, 2.6, -0.1);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let sol = bicgstab(&a, &b, None, 1e-14, 1000).unwrap();
        let r = norm2(&residual(&a, &sol.x, &b));
        assert!(r <= 1e-14 * norm2(&b));
    }

    #[test]
    fn zero_rhs() {
        let a = tridiag(5, -1.0, 3.0, -1.0);
        assert_eq!(solve_sparse(&a, &[0.0; 5], 1e-10, 10).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn reports_no_convergence() {
        let n = 100;
        let a = tridiag(n, -1.0, 2.0, -1.0);
        let b = vec![1.0; n];
        match solve_sparse(&a, &b, 1e-14, 2) {
            Err(NumericsError::NoConvergence { residual_norm, .. }) => assert!(residual_norm > 0.0),
            other => panic!("expected no-convergence, got {other:?}"),
        }
    }

    #[test]
    fn singular_small_system_errors() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert!(solve_sparse(&a, &[1.0, 2.0], 1e-12, 50).is_err());
    }

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let a = CsrMatrix::from_triplets(2, vec![(1, 1, 1.0), (0, 1, 2.0), (0, 0, 3.0), (1, 1, 4.0)]).unwrap();
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.row(1).collect::<Vec<_>>(), vec![(1, 5.0)]);
        assert!(CsrMatrix::from_triplets(2, vec![(2, 0, 1.0)]).is_err());
        assert!(CsrMatrix::from_raw(2, vec![0, 2, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::from_raw(2, vec![0, 1, 2], vec![0, 1], vec![1.0, 1.0]).is_ok());
    }

    proptest! {
        #[test]
        fn diagonally_dominant_systems_meet_tolerance(
            n in 2usize..120,
            seed in prop::collection::vec(-1.0f64..1.0, 360),
        ) {
            let mut t = Vec::new();
            for i in 0..n {
                let lo = seed[(3 * i) % seed.len()];
                let hi = seed[(3 * i + 1) % seed.len()];
                let far = seed[(3 * i + 2) % seed.len()];
                let mut off = 0.0;
                if i > 0 { t.push((i, i - 1, lo)); off += lo.abs(); }
                if i + 1 < n { t.push((i, i + 1, hi)); off += hi.abs(); }
                let j = (i * 7 + 3) % n;
                if j != i { t.push((i, j, far)); off += far.abs(); }
                t.push((i, i, off + 0.5));
            }
            let a = CsrMatrix::from_triplets(n, t).unwrap();
            let b: Vec<f64> = (0..n).map(|i| seed[i % seed.len()] + 0.1).collect();
            let tol = 1e-10;
            let x = solve_sparse(&a, &b, tol, 2000).unwrap();
            prop_assert!(norm2(&residual(&a, &x, &b)) <= tol * norm2(&b));
        }
    }
}
