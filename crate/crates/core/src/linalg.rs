//! Dense decompositions backed by faer, whose SVD stays accurate on
//! exactly rank-deficient input (centered data, planar point sets).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Thin SVD `a = U diag(s) V^T` with singular values in descending order.
pub(crate) struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub(crate) fn thin_svd(a: &DMatrix<f64>) -> Result<ThinSvd> {
    let (r, c) = a.shape();
    let m = faer::Mat::<f64>::from_fn(r, c, |i, j| a[(i, j)]);
    let svd = m.thin_svd().map_err(|e| Error::DegenerateConfiguration(format!("SVD did not converge: {e:?}")))?;
    let k = r.min(c);
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    Ok(ThinSvd {
        u: DMatrix::from_fn(r, k, |i, j| u[(i, j)]),
        s: DVector::from_fn(k, |i, _| s[i]),
        v: DMatrix::from_fn(c, k, |i, j| v[(i, j)]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reconstructs_rank_deficient_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(r, c, rank) in &[(3usize, 3usize, 2usize), (3, 3, 1), (12, 5, 4), (5, 12, 3), (2, 2, 2)] {
            for _ in 0..200 {
                let a = DMatrix::from_fn(r, rank, |_, _| rng.random_range(-1.0..1.0))
                    * DMatrix::from_fn(rank, c, |_, _| rng.random_range(-1.0..1.0));
                let svd = thin_svd(&a).unwrap();
                let rec = &svd.u * DMatrix::from_diagonal(&svd.s) * svd.v.transpose();
                assert!((rec - &a).amax() < 1e-12);
                assert!(svd.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
                let k = r.min(c);
                assert!((svd.u.tr_mul(&svd.u) - DMatrix::<f64>::identity(k, k)).amax() < 1e-12);
                assert!((svd.v.tr_mul(&svd.v) - DMatrix::<f64>::identity(k, k)).amax() < 1e-12);
            }
        }
    }
}
