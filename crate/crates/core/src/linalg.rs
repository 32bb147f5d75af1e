//! Dense and operator-form numerics shared by the modules.

use nalgebra::{Complex, DMatrix};

use crate::error::{Result, SisError};

pub type C64 = Complex<f64>;

/// Outcome of a power iteration.
#[derive(Debug, Clone)]
pub struct DominantEigen {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Dominant (Perron) eigenvalue of a non-negative linear operator.
///
/// `apply(x, y)` must write `A x` into `y`. The iteration runs on `A + sI` with a
/// positive shift `s`, which keeps the Perron root strictly dominant in modulus
/// for periodic matrices (e.g. bipartite graphs with eigenvalues `±ρ`).
pub fn dominant_eigenvalue<F>(dim: usize, mut apply: F, tol: f64, max_iter: usize) -> Result<DominantEigen>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if dim == 0 {
        return Err(SisError::validation("power iteration on an empty operator"));
    }
    let mut x = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut y = vec![0.0; dim];
    apply(&x, &mut y);
    let scale = norm2(&y);
    if scale == 0.0 {
        return Ok(DominantEigen { value: 0.0, vector: x, iterations: 1, residual: 0.0 });
    }
    // Nilpotent operators (acyclic link structure) have Perron root 0, which power
    // iteration only approaches like 1/k; detect them by repeated application.
    let mut z = y.clone();
    for _ in 0..dim.min(64) {
        let nz = norm2(&z);
        if nz == 0.0 {
            return Ok(DominantEigen { value: 0.0, vector: x, iterations: 1, residual: 0.0 });
        }
        let zn: Vec<f64> = z.iter().map(|v| v / nz).collect();
        apply(&zn, &mut z);
    }
    let shift = 0.25 * scale;
    let mut previous = f64::NAN;
    let mut stable = 0;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        apply(&x, &mut y);
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi += shift * xi;
        }
        let mu = norm2(&y);
        residual = y.iter().zip(&x).map(|(yi, xi)| (yi / mu - xi).powi(2)).sum::<f64>().sqrt();
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / mu;
        }
        let value = mu - shift;
        if (value - previous).abs() <= tol * value.abs().max(f64::MIN_POSITIVE) {
            stable += 1;
            if stable >= 3 {
                return Ok(DominantEigen { value: value.max(0.0), vector: x, iterations: it, residual });
            }
        } else {
            stable = 0;
        }
        previous = value;
    }
    Err(SisError::numerical(format!(
        "power iteration did not converge in {max_iter} iterations (last estimate {previous:.6e}, residual {residual:.3e})"
    )))
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Eigen-decomposition `K = V diag(values) V⁻¹` of a real square matrix in complex arithmetic.
#[derive(Debug, Clone)]
pub struct ComplexEigen {
    pub values: Vec<C64>,
    /// Columns are unit-norm eigenvectors.
    pub vectors: DMatrix<C64>,
    /// Unitary factor of the Schur form `K = Q T Qᴴ`.
    pub schur_q: DMatrix<C64>,
    /// Upper-triangular factor of the Schur form.
    pub schur_t: DMatrix<C64>,
}

/// Complex Schur form `K = Q T Qᴴ`.
///
/// The QR sweep deflates on a relative sub-diagonal test. A tolerance at machine epsilon
/// can stall on matrices with many exactly repeated eigenvalues, so the sweep starts at
/// `1e-14` and loosens with a bounded iteration count.
pub fn complex_schur(k: &DMatrix<f64>) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let r = k.nrows();
    if r != k.ncols() {
        return Err(SisError::validation("Schur decomposition of a non-square matrix"));
    }
    let kc: DMatrix<C64> = k.map(|v| C64::new(v, 0.0));
    for eps in [1e-14, 1e-13, 1e-12] {
        if let Some(schur) = nalgebra::Schur::try_new(kc.clone(), eps, 30 * r.max(10)) {
            return Ok(schur.unpack());
        }
    }
    Err(SisError::numerical("complex Schur decomposition failed to converge"))
}

/// Complex Schur form followed by back-substitution on the triangular factor.
pub fn complex_eigen(k: &DMatrix<f64>) -> Result<ComplexEigen> {
    let r = k.nrows();
    let (q, t) = complex_schur(k)?;
    let tnorm = t.iter().fold(0.0_f64, |acc, z| acc.max(z.norm())).max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * tnorm;

    let mut x = DMatrix::<C64>::zeros(r, r);
    for col in 0..r {
        let lambda = t[(col, col)];
        x[(col, col)] = C64::new(1.0, 0.0);
        for i in (0..col).rev() {
            let mut acc = C64::new(0.0, 0.0);
            for m in (i + 1)..=col {
                acc += t[(i, m)] * x[(m, col)];
            }
            let mut denom = t[(i, i)] - lambda;
            if denom.norm() < small {
                denom = C64::new(small, 0.0);
            }
            x[(i, col)] = -acc / denom;
        }
    }
    let mut vectors = &q * x;
    for mut c in vectors.column_iter_mut() {
        let nrm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nrm > 0.0 {
            c.iter_mut().for_each(|z| *z /= nrm);
        }
    }
    let values = (0..r).map(|i| t[(i, i)]).collect();
    Ok(ComplexEigen { values, vectors, schur_q: q, schur_t: t })
}

/// Frobenius-norm condition estimate `‖V‖_F ‖V⁻¹‖_F / r` together with the inverse.
pub fn invert_with_condition(v: &DMatrix<C64>) -> Option<(DMatrix<C64>, f64)> {
    let inv = v.clone().lu().try_inverse()?;
    let fro = |m: &DMatrix<C64>| m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let cond = fro(v) * fro(&inv) / v.nrows().max(1) as f64;
    if !cond.is_finite() {
        return None;
    }
    Some((inv, cond))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn power_iteration_handles_bipartite_spectrum() {
        // eigenvalues ±1.5
        let a = [[0.0, 1.5], [1.5, 0.0]];
        let e = dominant_eigenvalue(
            2,
            |x, y| {
                for i in 0..2 {
                    y[i] = a[i][0] * x[0] + a[i][1] * x[1];
                }
            },
            1e-12,
            10_000,
        )
        .unwrap();
        assert_relative_eq!(e.value, 1.5, max_relative = 1e-10);
    }

    #[test]
    fn zero_operator_has_zero_root() {
        let e = dominant_eigenvalue(3, |_, y| y.iter_mut().for_each(|v| *v = 0.0), 1e-10, 10).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn complex_eigen_reconstructs_rotation_like_matrix() {
        let k = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, -2.0, -1.0, 0.5, 0.0, 0.3, -3.0]);
        let e = complex_eigen(&k).unwrap();
        let (inv, cond) = invert_with_condition(&e.vectors).unwrap();
        assert!(cond < 1e3);
        let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(e.values.clone()));
        let rec = &e.vectors * lam * inv;
        for i in 0..3 {
            for j in 0..3 {
                assert!((rec[(i, j)].re - k[(i, j)]).abs() < 1e-12);
                assert!(rec[(i, j)].im.abs() < 1e-12);
            }
        }
    }
}
