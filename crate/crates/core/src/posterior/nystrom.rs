use std::collections::HashSet;

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::Rng;

use super::{outlier_constant, MixtureSettings, PosteriorSummary};
use crate::error::{Error, Result};
use crate::geometry::{ensure_same_dim, gaussian_affinity, PointSet};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Low-rank factor `K_YX ≈ K_YV K_VV^{-1} K_VX` over landmarks `V` drawn
/// from the concatenation of the source and target sets.
pub struct NystromFactor {
    samples: Vec<usize>,
    k_yv: DMatrix<f64>,
    k_vx: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl std::fmt::Debug for NystromFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NystromFactor").field("rank", &self.samples.len()).field("jitter", &self.jitter).finish()
    }
}

impl NystromFactor {
    /// Indices into `Y ++ X` of the landmarks kept after deduplication.
    pub fn samples(&self) -> &[usize] {
        &self.samples
    }

    pub fn rank(&self) -> usize {
        self.samples.len()
    }

    /// Diagonal jitter that made `K_VV` factorizable.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `K_YX b` for `b` of shape `N x c`, evaluated right to left.
    pub fn apply(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let t = &self.k_vx * b;
        &self.k_yv * self.chol.solve(&t)
    }

    /// `K_YX^T a` for `a` of shape `M x c`, evaluated right to left.
    pub fn apply_transpose(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let t = self.k_yv.tr_mul(a);
        self.k_vx.tr_mul(&self.chol.solve(&t))
    }

    /// The implied dense `M x N` approximation. Quadratic; for diagnostics.
    pub fn approximation(&self) -> DMatrix<f64> {
        &self.k_yv * self.chol.solve(&self.k_vx)
    }
}

/// Draws `samples` landmarks uniformly without replacement from `Y ++ X`,
/// drops coordinate duplicates, and factorizes the jittered `K_VV`. The
/// jitter starts at `1e-10 * tr(K_VV) / L` and grows tenfold up to
/// `1e-4 * tr(K_VV) / L`.
pub fn nystrom_build<R: Rng + ?Sized>(
    y: &PointSet,
    x: &PointSet,
    sigma2: f64,
    samples: usize,
    rng: &mut R,
) -> Result<NystromFactor> {
    ensure_same_dim(y, x)?;
    let (m, n) = (y.len(), x.len());
    if samples == 0 || samples > m + n {
        return Err(Error::Domain(format!("Nyström sample count must lie in 1..={}, got {samples}", m + n)));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!("sigma2 must be positive, got {sigma2}")));
    }
    let point = |i: usize| if i < m { y.point(i) } else { x.point(i - m) };

    let drawn = rand::seq::index::sample(rng, m + n, samples).into_vec();
    let mut seen = HashSet::with_capacity(drawn.len());
    let kept: Vec<usize> =
        drawn.into_iter().filter(|&i| seen.insert(point(i).iter().map(|c| c.to_bits()).collect::<Vec<_>>())).collect();
    let mut coords = Vec::with_capacity(kept.len() * y.dim());
    for &i in &kept {
        coords.extend_from_slice(point(i));
    }
    let v = PointSet::new(y.dim(), coords)?;

    let k_vv = gaussian_affinity(&v, &v, sigma2)?;
    let l = kept.len();
    let mean_diag = k_vv.trace() / l as f64;
    let mut jitter = JITTER_START * mean_diag;
    let chol = loop {
        let mut shifted = k_vv.clone();
        for i in 0..l {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(shifted) {
            break c;
        }
        jitter *= 10.0;
        if jitter > JITTER_MAX * mean_diag * (1.0 + 1e-12) {
            return Err(Error::ApproximationFailure(format!(
                "K_VV not positive definite with jitter up to {:e}",
                JITTER_MAX * mean_diag
            )));
        }
    };
    Ok(NystromFactor {
        samples: kept,
        k_yv: gaussian_affinity(y, &v, sigma2)?,
        k_vx: gaussian_affinity(&v, x, sigma2)?,
        chol,
        jitter,
    })
}

/// E-step products through the Nyström factor, built at the current
/// `sigma2`. Costs `O(L (M + N) D + L^3)`.
pub fn posterior_nystrom(
    factor: &NystromFactor,
    y: &PointSet,
    x: &PointSet,
    settings: &MixtureSettings,
) -> Result<PosteriorSummary> {
    ensure_same_dim(y, x)?;
    let (m, n, dim) = (y.len(), x.len(), y.dim());
    if factor.k_yv.nrows() != m || factor.k_vx.ncols() != n {
        return Err(Error::Domain("Nyström factor was built for different point sets".into()));
    }
    let c = outlier_constant(settings, m, dim)?;

    let col_sums = factor.apply_transpose(&DMatrix::from_element(m, 1, 1.0));
    let (q, pt1m) = PosteriorSummary::weights_from_column_sums(col_sums.as_slice(), c);

    // One pass for q and one per coordinate of q ∘ x_(d).
    let rhs = DMatrix::from_fn(n, dim + 1, |i, j| if j == 0 { q[i] } else { q[i] * x.point(i)[j - 1] });
    let out = factor.apply(&rhs);

    let p1n: Vec<f64> = (0..m).map(|i| out[(i, 0)].max(0.0)).collect();
    let mut px = Vec::with_capacity(m * dim);
    for i in 0..m {
        for j in 0..dim {
            px.push(out[(i, j + 1)]);
        }
    }
    let np = p1n.iter().sum();
    let summary = PosteriorSummary {
        p1n,
        pt1m,
        px,
        dim,
        np,
        affinity_sums: col_sums.as_slice().iter().map(|v| v.max(0.0)).collect(),
    };
    if !summary.is_finite() {
        return Err(Error::ApproximationFailure("non-finite Nyström posterior".into()));
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::posterior_dense;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointSet {
        PointSet::new(d, (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    fn clusters(rng: &mut ChaCha8Rng, n: usize, centers: &[[f64; 2]], spread: f64) -> PointSet {
        let g = Normal::new(0.0, spread).unwrap();
        let mut coords = Vec::new();
        for i in 0..n {
            let c = centers[i % centers.len()];
            coords.push(c[0] + g.sample(rng));
            coords.push(c[1] + g.sample(rng));
        }
        PointSet::new(2, coords).unwrap()
    }

    fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn full_span_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let y = random_set(&mut rng, 12, 2);
        let x = random_set(&mut rng, 15, 2);
        let s2 = 0.02;
        let f = nystrom_build(&y, &x, s2, 27, &mut rng).unwrap();
        assert_eq!(f.rank(), 27);
        let exact = gaussian_affinity(&y, &x, s2).unwrap();
        assert!((f.approximation() - &exact).amax() < 1e-6);

        let settings = MixtureSettings { omega: 0.1, volume: 1.0, sigma2: s2 };
        let a = posterior_nystrom(&f, &y, &x, &settings).unwrap();
        let d = posterior_dense(&y, &x, &settings).unwrap();
        let close = |u: &[f64], v: &[f64]| u.iter().zip(v).all(|(p, q)| (p - q).abs() < 1e-6);
        assert!(close(&a.p1n, &d.p1n) && close(&a.pt1m, &d.pt1m) && close(&a.px, &d.px));
        assert!((a.np - d.np).abs() < 1e-6);
    }

    #[test]
    fn duplicates_are_removed() {
        let y = PointSet::new(2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let x = y.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = nystrom_build(&y, &x, 0.5, 4, &mut rng).unwrap();
        assert_eq!(f.rank(), 2);
    }

    #[test]
    fn single_sample_stays_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let y = clusters(&mut rng, 40, &[[0.0, 0.0], [3.0, 3.0]], 0.1);
        let x = clusters(&mut rng, 40, &[[0.0, 0.0], [3.0, 3.0]], 0.1);
        let f = nystrom_build(&y, &x, 0.05, 1, &mut rng).unwrap();
        let settings = MixtureSettings { omega: 0.1, volume: 9.0, sigma2: 0.05 };
        let p = posterior_nystrom(&f, &y, &x, &settings).unwrap();
        assert!(p.is_finite());
    }

    #[test]
    fn error_shrinks_with_more_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let centers = [[0.0, 0.0], [1.0, 0.5], [0.3, 1.2], [1.4, 1.4]];
        let y = clusters(&mut rng, 500, &centers, 0.15);
        let x = clusters(&mut rng, 500, &centers, 0.15);
        let s2 = 0.05;
        let exact = gaussian_affinity(&y, &x, s2).unwrap();
        let (mut e10, mut e100) = (0.0, 0.0);
        for seed in 0..20 {
            let mut r = ChaCha8Rng::seed_from_u64(1000 + seed);
            e10 += rel_frobenius(&nystrom_build(&y, &x, s2, 10, &mut r).unwrap().approximation(), &exact);
            e100 += rel_frobenius(&nystrom_build(&y, &x, s2, 100, &mut r).unwrap().approximation(), &exact);
        }
        assert!(e100 < e10, "L=100 error {e100} vs L=10 error {e10}");
    }

    #[test]
    fn tight_cluster_is_all_inlier() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let y = clusters(&mut rng, 200, &[[0.5, 0.5]], 0.02);
        let x = clusters(&mut rng, 200, &[[0.5, 0.5]], 0.02);
        let settings = MixtureSettings { omega: 0.0, volume: 1.0, sigma2: 0.05 };
        let f = nystrom_build(&y, &x, settings.sigma2, 50, &mut rng).unwrap();
        let p = posterior_nystrom(&f, &y, &x, &settings).unwrap();
        assert!((p.np / 200.0 - 1.0).abs() < 1e-3, "np = {}", p.np);
    }

    #[test]
    fn np_close_to_dense_at_moderate_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let y = random_set(&mut rng, 1000, 2);
        let x = random_set(&mut rng, 1000, 2);
        let settings = MixtureSettings { omega: 0.1, volume: 1.0, sigma2: 0.05 };
        let dense = posterior_dense(&y, &x, &settings).unwrap();
        let mut worst: f64 = 0.0;
        for seed in 0..10 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let f = nystrom_build(&y, &x, settings.sigma2, 500, &mut r).unwrap();
            let p = posterior_nystrom(&f, &y, &x, &settings).unwrap();
            worst = worst.max((p.np - dense.np).abs() / dense.np);
        }
        assert!(worst < 1e-2, "worst relative np error {worst}");
    }

    #[test]
    fn bad_sample_counts() {
        let y = PointSet::new(1, vec![0.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(nystrom_build(&y, &y, 1.0, 0, &mut rng).is_err());
        assert!(nystrom_build(&y, &y, 1.0, 5, &mut rng).is_err());
    }
}
