use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Invalid(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Matrix {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other`.
    ///
    /// Zero entries of `self` are skipped, so products with one-hot rows cost
    /// one row copy each.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        kernels::dispatch(kernels::Kind::Nn, self, other, &mut out);
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape("matmul_nt", self.shape(), other.shape()));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        kernels::dispatch(kernels::Kind::Nt, self, other, &mut out);
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape("matmul_tn", self.shape(), other.shape()));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        kernels::dispatch(kernels::Kind::Tn, self, other, &mut out);
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// In-place `self += other`; shapes must agree.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape("add_assign", self.shape(), other.shape()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Column sums as a `1 × cols` matrix.
    pub fn col_sums(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::shape("max_abs_diff", self.shape(), other.shape()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }
}

/// Dot product with four interleaved partial sums.
#[inline(always)]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Product loops, compiled twice: once for the baseline target and once with
/// AVX2 enabled (selected at run time). Neither build fuses multiply-adds,
/// so both produce identical bits.
mod kernels {
    use super::Matrix;

    #[derive(Clone, Copy)]
    pub(super) enum Kind {
        Nn,
        Nt,
        Tn,
    }

    pub(super) fn dispatch(kind: Kind, a: &Matrix, b: &Matrix, out: &mut Matrix) {
        #[cfg(target_arch = "x86_64")]
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { run_avx2(kind, a, b, out) };
            return;
        }
        run(kind, a, b, out);
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn run_avx2(kind: Kind, a: &Matrix, b: &Matrix, out: &mut Matrix) {
        run(kind, a, b, out);
    }

    #[inline(always)]
    fn run(kind: Kind, a: &Matrix, b: &Matrix, out: &mut Matrix) {
        match kind {
            Kind::Nn => nn(a, b, out),
            Kind::Nt => nt(a, b, out),
            Kind::Tn => tn(a, b, out),
        }
    }

    /// `o += Σ a[k]·b[k]`, summed in `k` order, skipping zero coefficients.
    #[inline(always)]
    fn accumulate<'a>(o: &mut [f64], terms: impl Iterator<Item = (f64, &'a [f64])>) {
        let mut buf: [(f64, &[f64]); 4] = [(0.0, &[]); 4];
        let mut len = 0;
        for (a, b) in terms {
            if a == 0.0 {
                continue;
            }
            buf[len] = (a, b);
            len += 1;
            if len == 4 {
                let [(a0, b0), (a1, b1), (a2, b2), (a3, b3)] = buf;
                let (b0, b1, b2, b3) = (&b0[..o.len()], &b1[..o.len()], &b2[..o.len()], &b3[..o.len()]);
                for j in 0..o.len() {
                    let mut v = o[j];
                    v += a0 * b0[j];
                    v += a1 * b1[j];
                    v += a2 * b2[j];
                    v += a3 * b3[j];
                    o[j] = v;
                }
                len = 0;
            }
        }
        for &(a, b) in &buf[..len] {
            for (o, &b) in o.iter_mut().zip(b) {
                *o += a * b;
            }
        }
    }

    #[inline(always)]
    fn nn(a: &Matrix, b: &Matrix, out: &mut Matrix) {
        let n = b.cols;
        for i in 0..a.rows {
            let terms = a.row(i).iter().enumerate().map(|(k, &av)| (av, &b.data[k * n..(k + 1) * n]));
            accumulate(&mut out.data[i * n..(i + 1) * n], terms);
        }
    }

    #[inline(always)]
    fn nt(a: &Matrix, b: &Matrix, out: &mut Matrix) {
        nn(a, &b.transpose(), out);
    }

    #[inline(always)]
    fn tn(a: &Matrix, b: &Matrix, out: &mut Matrix) {
        let n = b.cols;
        for i in 0..a.cols {
            let terms = (0..a.rows).map(|k| (a.data[k * a.cols + i], b.row(k)));
            accumulate(&mut out.data[i * n..(i + 1) * n], terms);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn identity_product() {
        let b = Matrix::from_rows(&[[5.0, 6.0], [7.0, 8.0]]).unwrap();
        assert_eq!(Matrix::identity(2).matmul(&b).unwrap(), b);
    }

    #[test]
    fn zero_product() {
        let b = Matrix::filled(3, 4, 2.5);
        assert_eq!(Matrix::zeros(2, 3).matmul(&b).unwrap(), Matrix::zeros(2, 4));
    }

    #[test]
    fn small_product() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[5.0, 6.0], [7.0, 8.0]]).unwrap();
        let expected = Matrix::from_rows(&[[19.0, 22.0], [43.0, 50.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap(), expected);
        assert_eq!(naive(&a, &b), expected);
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let err = Matrix::zeros(2, 3).matmul(&Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
    }

    #[test]
    fn transposed_products_agree() {
        let a = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 4.0, -1.0]]).unwrap();
        let b = Matrix::from_rows(&[[2.0, 1.0, 0.0], [-1.0, 3.0, 2.0]]).unwrap();
        assert_eq!(a.matmul_nt(&b).unwrap(), naive(&a, &b.transpose()));
        assert_eq!(a.matmul_tn(&b).unwrap(), naive(&a.transpose(), &b));
    }

    proptest::proptest! {
        #[test]
        fn matmul_matches_triple_loop_bitwise(
            m in 1usize..=32, k in 1usize..=32, n in 1usize..=32, seed in 0u64..1000
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut gen = |r, c| {
                let data = (0..r * c).map(|_| rng.random_range(-3.0..3.0)).collect();
                Matrix::from_vec(r, c, data).unwrap()
            };
            let a = gen(m, k);
            let b = gen(k, n);
            let expected = naive(&a, &b);
            proptest::prop_assert_eq!(a.matmul(&b).unwrap(), expected.clone());
            proptest::prop_assert_eq!(a.matmul_nt(&b.transpose()).unwrap(), expected.clone());
            proptest::prop_assert_eq!(a.transpose().matmul_tn(&b).unwrap(), expected);
        }
    }
}
