//! Dense linear algebra helpers used throughout the pipeline.
//!
//! Conventions fixed here and relied on everywhere else:
//!
//! - `vec` stacks matrix columns (nalgebra's native storage order).
//! - `svec` packs a symmetric matrix by upper triangle in column-major entry
//!   order with off-diagonal entries scaled by sqrt(2), so that
//!   `svec(A) . svec(B) = trace(A B)`. This is also the packing the PSD cone
//!   backend expects.

use nalgebra::{DMatrix, DVector};

use crate::error::SynthError;

/// Kronecker product `a (x) b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc))
                    .copy_from(&(b * aij));
            }
        }
    }
    out
}

/// Commutation matrix `K` of size `m n x m n` with `K vec(A) = vec(A^T)`
/// for any `m x n` matrix `A`.
pub fn commutation_matrix(m: usize, n: usize) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(m * n, m * n);
    for i in 0..m {
        for j in 0..n {
            // vec(A) index of A[(i, j)] is j*m + i; vec(A^T) index is i*n + j.
            k[(i * n + j, j * m + i)] = 1.0;
        }
    }
    k
}

/// Column-stacking vectorization.
pub fn vec_of(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec_of`] for an `r x c` target shape.
pub fn unvec(v: &DVector<f64>, r: usize, c: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), r * c, "unvec: length {} != {}x{}", v.len(), r, c);
    DMatrix::from_column_slice(r, c, v.as_slice())
}

/// Number of packed entries of a symmetric `d x d` matrix.
pub fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Packed index of entry `(i, j)`, `i <= j`, in the svec ordering.
pub fn svec_index(i: usize, j: usize) -> usize {
    assert!(i <= j, "svec_index expects i <= j");
    j * (j + 1) / 2 + i
}

/// Scaled packing of a symmetric matrix (upper triangle, off-diagonals
/// times sqrt(2)).
pub fn svec(a: &DMatrix<f64>) -> DVector<f64> {
    let d = a.nrows();
    assert_eq!(d, a.ncols(), "svec expects a square matrix");
    let s2 = std::f64::consts::SQRT_2;
    let mut out = DVector::zeros(svec_len(d));
    let mut idx = 0;
    for j in 0..d {
        for i in 0..=j {
            out[idx] = if i == j { a[(i, j)] } else { s2 * a[(i, j)] };
            idx += 1;
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat(v: &DVector<f64>, d: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), svec_len(d), "smat: packed length mismatch");
    let is2 = 1.0 / std::f64::consts::SQRT_2;
    let mut out = DMatrix::zeros(d, d);
    let mut idx = 0;
    for j in 0..d {
        for i in 0..=j {
            let x = if i == j { v[idx] } else { is2 * v[idx] };
            out[(i, j)] = x;
            out[(j, i)] = x;
            idx += 1;
        }
    }
    out
}

/// Symmetric part `(a + a^T) / 2`.
pub fn sym_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Largest deviation from symmetry, `max |a - a^T|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).amax()
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> DVector<f64> {
    let mut ev: Vec<f64> = sym_part(a).symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).expect("eigenvalue is NaN"));
    DVector::from_vec(ev)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(a: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(a);
    ev[ev.len() - 1]
}

/// Spectral norm (largest singular value) of a general matrix.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    lambda_max(&(a.transpose() * a)).max(0.0).sqrt()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a)[0]
}

/// Largest eigenvalue together with the trace-normalized projector onto the
/// span of all eigenvectors whose eigenvalue sits within `cluster_tol` of the
/// top one. For a simple top eigenvalue this is the rank-one `v v^T`.
pub fn top_eig_cluster(a: &DMatrix<f64>, cluster_tol: f64) -> (f64, DMatrix<f64>) {
    let eig = sym_part(a).symmetric_eigen();
    let d = a.nrows();
    let lmax = eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut w = DMatrix::zeros(d, d);
    let mut count = 0usize;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lmax - lam <= cluster_tol {
            let v = eig.eigenvectors.column(k);
            w += v * v.transpose();
            count += 1;
        }
    }
    (lmax, w / count as f64)
}

/// Symmetric square root of a positive semidefinite matrix. Eigenvalues
/// below zero are clamped (tolerated up to `-tol`, rejected beyond).
pub fn symmetric_sqrt(a: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>, SynthError> {
    let eig = sym_part(a).symmetric_eigen();
    let d = a.nrows();
    let mut out = DMatrix::zeros(d, d);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -tol {
            return Err(SynthError::NotPositive(format!(
                "matrix square root requested for a matrix with eigenvalue {lam:.3e}"
            )));
        }
        let s = lam.max(0.0).sqrt();
        let v = eig.eigenvectors.column(k);
        out += v * v.transpose() * s;
    }
    Ok(out)
}

/// Inverse of a symmetric positive definite matrix through its Cholesky
/// factor, with a clear error when the matrix is not positive definite.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>, SynthError> {
    sym_part(a)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| SynthError::NotPositive("matrix inverse requested for a non-PD matrix".into()))
}

/// One fixed-size Runge-Kutta 4 step for a vector-valued ODE.
pub fn rk4_step_vec<F>(f: &F, t: f64, y: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// One fixed-size Runge-Kutta 4 step for a matrix-valued ODE.
pub fn rk4_step_mat<F>(f: &F, t: f64, y: &DMatrix<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Assemble a symmetric matrix from its lower block triangle. `blocks[i][j]`
/// for `j <= i` fills block row `i`, block column `j`; the strict upper
/// triangle is the transpose. Block sizes are given per block row/column.
pub fn sym_from_lower_blocks(sizes: &[usize], blocks: &[Vec<DMatrix<f64>>]) -> DMatrix<f64> {
    let total: usize = sizes.iter().sum();
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0usize, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let mut out = DMatrix::zeros(total, total);
    for (i, row) in blocks.iter().enumerate() {
        for (j, b) in row.iter().enumerate() {
            assert!(j <= i, "only the lower block triangle may be provided");
            assert_eq!(b.shape(), (sizes[i], sizes[j]), "block ({i},{j}) shape");
            out.view_mut((offsets[i], offsets[j]), (sizes[i], sizes[j])).copy_from(b);
            if j < i {
                out.view_mut((offsets[j], offsets[i]), (sizes[j], sizes[i]))
                    .copy_from(&b.transpose());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_sym(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let a = random_matrix(rng, d, d);
        sym_part(&a)
    }

    #[test]
    fn kron_against_definition() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 5.0, 6.0, 7.0]);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (4, 4));
        assert_abs_diff_eq!(k[(0, 1)], 1.0 * 5.0);
        assert_abs_diff_eq!(k[(2, 0)], 3.0 * 0.0);
        assert_abs_diff_eq!(k[(3, 3)], 4.0 * 7.0);
        assert_abs_diff_eq!(k[(2, 1)], 3.0 * 5.0);
    }

    #[test]
    fn kron_mixed_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 2, 3);
        let b = random_matrix(&mut rng, 3, 2);
        let c = random_matrix(&mut rng, 3, 2);
        let d = random_matrix(&mut rng, 2, 3);
        let lhs = kron(&(&a * &b), &(&c * &d));
        let rhs = kron(&a, &c) * kron(&b, &d);
        assert_abs_diff_eq!((lhs - rhs).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn commutation_transposes_vec() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 3, 4);
        let k = commutation_matrix(3, 4);
        let lhs = &k * vec_of(&a);
        let rhs = vec_of(&a.transpose());
        assert_abs_diff_eq!((lhs - rhs).amax(), 0.0, epsilon = 0.0);
    }

    #[test]
    fn lyapunov_vectorization_identity() {
        // vec(M Q + Q M^T) = (I (x) M + M (x) I) vec(Q) on random 3x3 data.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 3, 3);
        let q = random_sym(&mut rng, 3);
        let id = DMatrix::identity(3, 3);
        let op = kron(&id, &m) + kron(&m, &id);
        let lhs = &op * vec_of(&q);
        let rhs = vec_of(&(&m * &q + &q * m.transpose()));
        assert_abs_diff_eq!((lhs - rhs).amax(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn svec_smat_round_trip_and_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_sym(&mut rng, 5);
        let b = random_sym(&mut rng, 5);
        let back = smat(&svec(&a), 5);
        assert_abs_diff_eq!((&a - back).amax(), 0.0, epsilon = 1e-15);
        let dot = svec(&a).dot(&svec(&b));
        assert_abs_diff_eq!(dot, (&a * &b).trace(), epsilon = 1e-12);
    }

    #[test]
    fn svec_index_matches_packing_order() {
        let d = 4;
        let mut seen = vec![false; svec_len(d)];
        let mut idx = 0;
        for j in 0..d {
            for i in 0..=j {
                assert_eq!(svec_index(i, j), idx);
                seen[idx] = true;
                idx += 1;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn symmetric_sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 4, 4);
        let spd = &a * a.transpose() + DMatrix::identity(4, 4) * 0.1;
        let r = symmetric_sqrt(&spd, 1e-12).unwrap();
        assert_abs_diff_eq!((&r * &r - spd).amax(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn symmetric_sqrt_rejects_indefinite() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(symmetric_sqrt(&a, 1e-12).is_err());
    }

    #[test]
    fn spd_inverse_matches_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_matrix(&mut rng, 4, 4);
        let spd = &a * a.transpose() + DMatrix::identity(4, 4) * 0.5;
        let inv = spd_inverse(&spd).unwrap();
        assert_abs_diff_eq!((&spd * inv - DMatrix::identity(4, 4)).amax(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn top_eig_cluster_simple_and_degenerate() {
        // Simple top eigenvalue: projector is rank one.
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, -2.0]));
        let (lmax, w) = top_eig_cluster(&a, 1e-8);
        assert_abs_diff_eq!(lmax, 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w.trace(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[(0, 0)], 1.0, epsilon = 1e-12);

        // Two-fold top eigenvalue: projector averages both directions.
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0, 0.0]));
        let (lmax, w) = top_eig_cluster(&b, 1e-8);
        assert_abs_diff_eq!(lmax, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w.trace(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[(2, 2)], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn rk4_matches_exponential() {
        // Scalar y' = a y over one unit interval, 100 substeps: the global
        // error of RK4 at h = 0.01 sits well under 1e-10.
        let a = 0.7;
        let f = |_t: f64, y: &DVector<f64>| y * a;
        let mut y = DVector::from_vec(vec![1.0]);
        let n = 100;
        let h = 1.0 / n as f64;
        for k in 0..n {
            y = rk4_step_vec(&f, k as f64 * h, &y, h);
        }
        assert_abs_diff_eq!(y[0], a.exp(), epsilon = 1e-10);
    }

    #[test]
    fn sym_from_lower_blocks_layout() {
        let a = DMatrix::from_element(2, 2, 1.0);
        let b = DMatrix::from_row_slice(1, 2, &[2.0, 3.0]);
        let c = DMatrix::from_element(1, 1, 4.0);
        let m = sym_from_lower_blocks(&[2, 1], &[vec![a], vec![b, c]]);
        assert_eq!(m.shape(), (3, 3));
        assert_abs_diff_eq!(m[(2, 0)], 2.0);
        assert_abs_diff_eq!(m[(0, 2)], 2.0);
        assert_abs_diff_eq!(m[(2, 1)], 3.0);
        assert_abs_diff_eq!(m[(1, 2)], 3.0);
        assert_abs_diff_eq!(m[(2, 2)], 4.0);
        assert_abs_diff_eq!(asymmetry(&m), 0.0);
    }
}
