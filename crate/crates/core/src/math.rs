//! Dense matrix helpers shared by the encoders and training objectives.
//!
//! Everything is plain `Vec<f64>` arithmetic; the shapes involved are small
//! enough that straightforward cache-friendly loops are all we need.

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data. Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Mat { rows, cols, data }
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        if rows.is_empty() {
            return Mat::zeros(0, 0);
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `self (m,k) * rhs (k,n) -> (m,n)`
    pub fn matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self (m,k) * rhs^T` where `rhs` is `(n,k) -> (m,n)`
    pub fn matmul_nt(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.cols, "matmul_nt shape mismatch");
        let mut out = Mat::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..rhs.rows {
                out.data[i * rhs.rows + j] = dot(a_row, rhs.row(j));
            }
        }
        out
    }

    /// `self^T * rhs` where `self` is `(k,m)`, `rhs` is `(k,n) -> (m,n)`
    pub fn matmul_tn(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.rows, rhs.rows, "matmul_tn shape mismatch");
        let mut out = Mat::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = rhs.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, other: &Mat, scale: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * scale;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Adds `bias` to every row. Panics if `bias.len() != cols`.
    pub fn add_row_vector(&mut self, bias: &[f64]) {
        assert_eq!(bias.len(), self.cols);
        for r in 0..self.rows {
            for (v, b) in self.row_mut(r).iter_mut().zip(bias) {
                *v += b;
            }
        }
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn sq_sum(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mean of rows `start..=end` (inclusive). Panics if the range is empty
    /// or out of bounds.
    pub fn mean_rows(&self, start: usize, end: usize) -> Vec<f64> {
        assert!(start <= end && end < self.rows, "row range out of bounds");
        let mut out = vec![0.0; self.cols];
        for r in start..=end {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        let inv = 1.0 / (end - start + 1) as f64;
        for o in &mut out {
            *o *= inv;
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

/// Numerically stable log(sum(exp(x_i))).
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Stable in-place softmax over a slice.
pub fn softmax_in_place(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Two-component principal component analysis of the rows of a point matrix.
///
/// Components are unit length, ordered by decreasing eigenvalue, and
/// sign-fixed so that each component's largest-magnitude entry is positive,
/// which makes the projection deterministic.
#[derive(Debug, Clone)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
}

pub fn pca2(points: &Mat) -> Pca2 {
    let n = points.rows();
    let d = points.cols();
    assert!(d >= 1, "pca2 needs at least one dimension");
    let mean = if n == 0 {
        vec![0.0; d]
    } else {
        let mut m = points.col_sums();
        for v in &mut m {
            *v /= n as f64;
        }
        m
    };
    // population covariance of the centered rows
    let mut cov = Mat::zeros(d, d);
    if n > 0 {
        for r in 0..n {
            let row = points.row(r);
            for i in 0..d {
                let ci = row[i] - mean[i];
                if ci == 0.0 {
                    continue;
                }
                for j in 0..d {
                    let cj = row[j] - mean[j];
                    cov.data[i * d + j] += ci * cj;
                }
            }
        }
        cov.scale(1.0 / n as f64);
    }
    let (eigenvalues, vectors) = jacobi_eigen_sym(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
    let mut components: [Vec<f64>; 2] = [vec![0.0; d], vec![0.0; d]];
    let mut top_values = [0.0; 2];
    for k in 0..2 {
        if k < d {
            let col = order[k];
            let mut comp: Vec<f64> = (0..d).map(|r| vectors.get(r, col)).collect();
            fix_sign(&mut comp);
            components[k] = comp;
            top_values[k] = eigenvalues[col];
        } else if k < 2 {
            // fewer dimensions than components: pad with a zero direction
            components[k] = vec![0.0; d];
        }
    }
    Pca2 {
        mean,
        components,
        eigenvalues: top_values,
    }
}

/// Projects points onto the two principal components; returns an `n x 2` matrix.
pub fn pca2_project(points: &Mat, pca: &Pca2) -> Mat {
    let n = points.rows();
    let mut out = Mat::zeros(n, 2);
    let mut centered = vec![0.0; points.cols()];
    for r in 0..n {
        for (c, (v, m)) in points.row(r).iter().zip(&pca.mean).enumerate() {
            centered[c] = v - m;
        }
        out.set(r, 0, dot(&centered, &pca.components[0]));
        out.set(r, 1, dot(&centered, &pca.components[1]));
    }
    out
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns eigenvalues and the matrix whose columns are the eigenvectors.
fn jacobi_eigen_sym(sym: &Mat) -> (Vec<f64>, Mat) {
    let d = sym.rows();
    assert_eq!(d, sym.cols());
    let mut a = sym.clone();
    let mut v = Mat::zeros(d, d);
    for i in 0..d {
        v.set(i, i, 1.0);
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += a.get(p, q).powi(2);
            }
        }
        if off <= 1e-24 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..d {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..d {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..d).map(|i| a.get(i, i)).collect();
    (eigenvalues, v)
}
