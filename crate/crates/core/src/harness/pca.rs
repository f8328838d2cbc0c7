use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const PCA_TOLERANCE: f64 = 1e-9;
pub const PCA_MAX_ITERATIONS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit eigenvectors of the covariance, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Covariance eigenvalues matching `components`.
    pub eigenvalues: Vec<f64>,
    /// `M × dims` projected coordinates.
    pub coordinates: Matrix,
}

/// Sample covariance (divisor `M - 1`) of the rows of `x` around `mean`.
pub fn covariance(x: &Matrix, mean: &[f64]) -> Matrix {
    let (m, n) = x.shape();
    let mut cov = Matrix::zeros(n, n);
    for r in 0..m {
        let row = x.row(r);
        for i in 0..n {
            let di = row[i] - mean[i];
            for j in 0..n {
                let v = cov.get(i, j) + di * (row[j] - mean[j]);
                cov.set(i, j, v);
            }
        }
    }
    cov.scale(1.0 / (m - 1) as f64)
}

/// Projects the rows of `x` onto the top `dims` principal components.
///
/// Eigenvectors come from power iteration on the covariance with deflation
/// and re-orthogonalization; each is signed so that its first nonzero entry
/// is positive. Directions with zero variance give zero coordinates.
pub fn pca_project(x: &Matrix, dims: usize) -> Result<Pca> {
    let (m, n) = x.shape();
    if m < 2 {
        return Err(Error::Invalid(format!("PCA needs at least 2 rows, got {m}")));
    }
    if dims == 0 || dims > n {
        return Err(Error::Config(format!("cannot project {n} columns onto {dims} components")));
    }
    let mean: Vec<f64> = x.col_sums().data().iter().map(|s| s / m as f64).collect();
    let mut cov = covariance(x, &mean);
    let scale = cov.data().iter().fold(0.0_f64, |a, v| a.max(v.abs()));

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(dims);
    let mut eigenvalues = Vec::with_capacity(dims);
    for _ in 0..dims {
        let (v, lambda) = match dominant(&cov, &components, scale) {
            Some(found) => found,
            None => (zero_variance_direction(n, &components), 0.0),
        };
        for i in 0..n {
            for j in 0..n {
                let d = cov.get(i, j) - lambda * v[i] * v[j];
                cov.set(i, j, d);
            }
        }
        components.push(v);
        eigenvalues.push(lambda);
    }

    let mut coordinates = Matrix::zeros(m, dims);
    for r in 0..m {
        let row = x.row(r);
        for (k, (c, &lambda)) in components.iter().zip(&eigenvalues).enumerate() {
            if lambda > 0.0 {
                let p: f64 = row.iter().zip(&mean).zip(c).map(|((a, mu), ci)| (a - mu) * ci).sum();
                coordinates.set(r, k, p);
            }
        }
    }
    Ok(Pca {
        mean,
        components,
        eigenvalues,
        coordinates,
    })
}

/// Power iteration for the leading eigenpair of the symmetric PSD matrix
/// `a`, kept orthogonal to `previous`. `None` when `a` is numerically zero.
fn dominant(a: &Matrix, previous: &[Vec<f64>], scale: f64) -> Option<(Vec<f64>, f64)> {
    let n = a.rows();
    let floor = scale * 1e-12;
    // start from the column with the largest norm
    let start = (0..n)
        .map(|j| (j, (0..n).map(|i| a.get(i, j).powi(2)).sum::<f64>()))
        .fold((0, -1.0), |best, (j, s)| if s > best.1 { (j, s) } else { best });
    if start.1.sqrt() <= floor {
        return None;
    }
    let mut v: Vec<f64> = (0..n).map(|i| a.get(i, start.0)).collect();
    orthogonalize(&mut v, previous);
    if normalize(&mut v) <= floor {
        return None;
    }
    for _ in 0..PCA_MAX_ITERATIONS {
        let mut w = mat_vec(a, &v);
        orthogonalize(&mut w, previous);
        if normalize(&mut w) <= floor {
            return None;
        }
        let delta = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if delta < PCA_TOLERANCE {
            break;
        }
    }
    fix_sign(&mut v);
    let av = mat_vec(a, &v);
    let lambda = v.iter().zip(&av).map(|(a, b)| a * b).sum::<f64>().max(0.0);
    Some((v, lambda))
}

fn zero_variance_direction(n: usize, previous: &[Vec<f64>]) -> Vec<f64> {
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        orthogonalize(&mut e, previous);
        if normalize(&mut e) > 1e-6 {
            fix_sign(&mut e);
            return e;
        }
    }
    vec![0.0; n]
}

fn mat_vec(a: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..a.rows()).map(|i| a.row(i).iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn fix_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn collinear_points_have_no_second_coordinate() {
        let x = Matrix::from_rows(&[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [-2.0, -4.0, -6.0], [0.5, 1.0, 1.5]]).unwrap();
        let pca = pca_project(&x, 2).unwrap();
        for r in 0..4 {
            assert!(pca.coordinates.get(r, 1).abs() <= 1e-6);
        }
        assert!(pca.eigenvalues[1].abs() < 1e-9);
        let c = &pca.components[0];
        assert!(c[0] > 0.0);
        assert!((c[1] / c[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn constant_input_projects_to_zero() {
        let x = Matrix::filled(5, 3, 2.5);
        let pca = pca_project(&x, 2).unwrap();
        assert!(pca.coordinates.data().iter().all(|&v| v == 0.0));
        assert_eq!(pca.eigenvalues, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_single_row_and_bad_dims() {
        assert!(pca_project(&Matrix::zeros(1, 3), 2).is_err());
        assert!(pca_project(&Matrix::zeros(4, 2), 3).is_err());
    }

    #[test]
    fn components_are_orthonormal_and_sign_fixed() {
        let x = Matrix::from_rows(&[[2.0, 0.1, -1.0], [-1.0, 0.5, 0.3], [0.4, -2.0, 0.0], [1.5, 1.5, 1.0], [-3.0, 0.2, 0.7]]).unwrap();
        let pca = pca_project(&x, 3).unwrap();
        for (i, a) in pca.components.iter().enumerate() {
            assert!(a.iter().find(|v| v.abs() > 1e-12).unwrap() > &0.0);
            for (j, b) in pca.components.iter().enumerate() {
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
        assert!(pca.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    proptest! {
        #[test]
        fn two_dimensional_projection_is_an_isometry(
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..12)
        ) {
            let x = Matrix::from_rows(&pts.iter().map(|&(a, b)| [a, b]).collect::<Vec<_>>()).unwrap();
            let pca = pca_project(&x, 2).unwrap();
            prop_assume!(pca.eigenvalues[1] > 1e-6 * pca.eigenvalues[0].max(1e-12));
            for i in 0..x.rows() {
                for j in 0..x.rows() {
                    let d0 = dist(x.row(i), x.row(j));
                    let d1 = dist(pca.coordinates.row(i), pca.coordinates.row(j));
                    prop_assert!((d0 - d1).abs() <= 1e-6, "{} vs {}", d0, d1);
                }
            }
        }
    }
}
