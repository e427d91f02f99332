//! Small dense helpers: row-major design matrices and SPD solves.

use nalgebra::{DMatrix, DVector};

/// Row-major design matrix whose first column is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl Design {
    /// Build `[1, features]` rows.
    pub fn with_intercept<I, R>(rows: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f64]>,
    {
        let mut data = Vec::new();
        let mut n = 0;
        let mut k = 0;
        for row in rows {
            let row = row.as_ref();
            if n == 0 {
                k = row.len() + 1;
            }
            assert_eq!(row.len() + 1, k, "ragged design rows");
            data.push(1.0);
            data.extend_from_slice(row);
            n += 1;
        }
        Self { n, k, data }
    }

    /// Wrap an existing row-major buffer (intercept column included by caller).
    pub fn from_raw(n: usize, k: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * k);
        Self { n, k, data }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    /// Number of columns, intercept included.
    pub fn ncols(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.k)
    }

    /// Drop column `j` (must not be the intercept).
    pub fn without_column(&self, j: usize) -> Self {
        assert!(j > 0 && j < self.k);
        let data = self
            .rows()
            .flat_map(|r| r.iter().enumerate().filter(move |(c, _)| *c != j).map(|(_, v)| *v))
            .collect();
        Self { n: self.n, k: self.k - 1, data }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `A x = b` for symmetric positive (semi)definite `A`, adding a small
/// diagonal jitter when the Cholesky factorisation fails.
pub fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(&b));
    }
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for exp in [-12, -10, -8, -6] {
        let mut aj = a.clone();
        for i in 0..aj.nrows() {
            aj[(i, i)] += scale * 10f64.powi(exp);
        }
        if let Some(ch) = aj.cholesky() {
            return Some(ch.solve(&b));
        }
    }
    None
}

/// Weighted least squares: minimise Σ wᵢ (yᵢ − xᵢᵀβ)².
pub fn weighted_least_squares(x: &Design, y: &[f64], w: &[f64]) -> Option<Vec<f64>> {
    let k = x.ncols();
    let mut xtwx = DMatrix::<f64>::zeros(k, k);
    let mut xtwy = DVector::<f64>::zeros(k);
    for (i, row) in x.rows().enumerate() {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        for a in 0..k {
            let wa = wi * row[a];
            xtwy[a] += wa * y[i];
            for b in 0..=a {
                xtwx[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtwx[(b, a)] = xtwx[(a, b)];
        }
    }
    solve_spd(xtwx, xtwy).map(|v| v.iter().copied().collect())
}

/// Population mean and variance (denominator n).
pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var)
}
