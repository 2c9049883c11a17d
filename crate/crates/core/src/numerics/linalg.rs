use crate::error::{MlrError, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(MlrError::InvalidInput(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MlrError::InvalidInput("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(MlrError::InvalidInput("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DenseMatrix,
}

impl Cholesky {
    /// Factors a symmetric positive definite matrix.
    ///
    /// A pivot at or below `n · ε · max(diag A)` is reported as
    /// [`MlrError::SingularSystem`].
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        let n = a.rows();
        if n != a.cols() {
            return Err(MlrError::InvalidInput("Cholesky needs a square matrix".into()));
        }
        let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
        let threshold = n as f64 * f64::EPSILON * max_diag;
        if max_diag <= 0.0 {
            return Err(MlrError::SingularSystem {
                column: 0,
                pivot: max_diag,
            });
        }

        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > threshold) {
                return Err(MlrError::SingularSystem { column: j, pivot: d });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let l = &self.l;
        let mut z = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                z[i] -= l[(i, k)] * z[k];
            }
            z[i] /= l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                z[i] -= l[(k, i)] * z[k];
            }
            z[i] /= l[(i, i)];
        }
        z
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.rows(), self.dim());
        let mut out = DenseMatrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let col = self.solve(&b.column(j));
            for (i, v) in col.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }
}

/// Solves `(Xᵀ W X + ridge·I) θ = Xᵀ W y` with `W = diag(w)`.
///
/// Weights must be finite and non-negative. The Gram matrix is factored by
/// Cholesky and the solution gets one step of iterative refinement. A
/// rank-deficient system yields [`MlrError::SingularSystem`] and
/// the caller picks the fallback.
pub fn solve_weighted_normal_equations(
    x: &DenseMatrix,
    y: &[f64],
    w: &[f64],
    ridge: f64,
) -> Result<Vec<f64>> {
    let (n, p) = (x.rows(), x.cols());
    if n == 0 || p == 0 {
        return Err(MlrError::InvalidInput("empty design matrix".into()));
    }
    if y.len() != n || w.len() != n {
        return Err(MlrError::InvalidInput(format!(
            "design has {n} rows but y has {} and w has {} entries",
            y.len(),
            w.len()
        )));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(MlrError::InvalidInput("weights must be finite and non-negative".into()));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(MlrError::InvalidInput("ridge must be finite and non-negative".into()));
    }

    let mut gram = DenseMatrix::zeros(p, p);
    let mut rhs = vec![0.0; p];
    for i in 0..n {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        let xi = x.row(i);
        for a in 0..p {
            let wxa = wi * xi[a];
            rhs[a] += wxa * y[i];
            for b in 0..=a {
                gram[(a, b)] += wxa * xi[b];
            }
        }
    }
    for a in 0..p {
        gram[(a, a)] += ridge;
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let chol = Cholesky::factor(&gram)?;
    let mut theta = chol.solve(&rhs);
    // One refinement step with the residual taken from the data rather than the
    // Gram matrix; recovers the digits lost when weights span many decades.
    let mut correction = vec![0.0; p];
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        let xi = x.row(i);
        let r = w[i] * (y[i] - xi.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>());
        for a in 0..p {
            correction[a] += xi[a] * r;
        }
    }
    for a in 0..p {
        correction[a] -= ridge * theta[a];
    }
    for (t, d) in theta.iter_mut().zip(chol.solve(&correction)) {
        *t += d;
    }
    Ok(theta)
}

/// `trace(Xᵀ W X)`, used to scale the ridge fallback.
pub(crate) fn weighted_gram_trace(x: &DenseMatrix, w: &[f64]) -> f64 {
    (0..x.rows())
        .map(|i| w[i] * x.row(i).iter().map(|v| v * v).sum::<f64>())
        .sum()
}
