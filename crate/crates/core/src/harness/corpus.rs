use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::procrustes::{mean_shape, normalize_mean_scale, rotation_2d, rotation_3d, ScaleMode, SimilarityTransform};
use crate::ssm::{synthesize, train_pca, ShapeModel, TrainReport};

/// Procrustes sweeps used by [`train_model`].
pub const TRAIN_SWEEPS: usize = 5;

/// Random similarity pose applied to every generated training shape, so
/// that training has to undo it.
fn random_pose(rng: &mut ChaCha8Rng, dim: usize) -> SimilarityTransform {
    let scale = rng.random_range(0.8..1.25);
    let rotation = if dim == 2 {
        rotation_2d(rng.random_range(-0.4..0.4))
    } else {
        let a: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        rotation_3d(a, rng.random_range(-0.4..0.4))
    };
    let t = DVector::from_fn(dim, |_, _| rng.random_range(-0.5..0.5));
    SimilarityTransform::new(scale, rotation, t).expect("proper rotation")
}

/// Finger bumps on the base outline as `(center angle, width, height)`.
const FINGERS: [(f64, f64, f64); 5] =
    [(0.35, 0.10, 0.45), (1.05, 0.09, 0.85), (1.40, 0.09, 0.95), (1.75, 0.09, 0.85), (2.10, 0.09, 0.65)];

/// Polar radius of an outline: an elongated palm with five finger bumps.
/// `heights` scales each finger.
fn hand_radius(th: f64, heights: &[f64; 5]) -> f64 {
    let mut r = 1.0 + 0.12 * (th - 0.4).cos() + 0.1 * (2.0 * th).cos();
    for ((c, w, h), s) in FINGERS.iter().zip(heights) {
        let mut d = (th - c).rem_euclid(2.0 * PI);
        if d > PI {
            d -= 2.0 * PI;
        }
        r += h * s * (-(d / w).powi(2)).exp();
    }
    r
}

/// Parameter angles placing `m` landmarks at equal arc length along the
/// base outline.
fn arclength_angles(m: usize) -> Vec<f64> {
    const FINE: usize = 20_000;
    let ones = [1.0; 5];
    let point = |th: f64| {
        let r = hand_radius(th, &ones);
        (r * th.cos(), r * th.sin())
    };
    let mut cum = vec![0.0; FINE + 1];
    let mut prev = point(0.0);
    for i in 1..=FINE {
        let p = point(2.0 * PI * i as f64 / FINE as f64);
        cum[i] = cum[i - 1] + ((p.0 - prev.0).powi(2) + (p.1 - prev.1).powi(2)).sqrt();
        prev = p;
    }
    let total = cum[FINE];
    let mut out = Vec::with_capacity(m);
    let mut i = 0;
    for k in 0..m {
        let target = total * k as f64 / m as f64;
        while cum[i + 1] < target {
            i += 1;
        }
        let f = (target - cum[i]) / (cum[i + 1] - cum[i]);
        out.push(2.0 * PI * (i as f64 + f) / FINE as f64);
    }
    out
}

/// Hand-like 2D outlines with `landmarks` points at fixed arc-length
/// positions of the base outline. Each shape varies the finger lengths and
/// adds a smooth low-order vector displacement field.
pub fn contour_shapes(count: usize, landmarks: usize, seed: u64) -> Result<Vec<PointSet>> {
    if landmarks < 3 {
        return Err(Error::Domain(format!("a contour needs at least 3 landmarks, got {landmarks}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angles = arclength_angles(landmarks);
    const HARMONICS: usize = 4;
    (0..count)
        .map(|_| {
            let heights: [f64; 5] = std::array::from_fn(|_| {
                let g: f64 = rng.sample(StandardNormal);
                1.0 + 0.12 * g
            });
            let coef: Vec<[f64; 4]> = (1..=HARMONICS)
                .map(|j| {
                    let s = 0.05 / j as f64;
                    std::array::from_fn(|_| s * rng.sample::<f64, _>(StandardNormal))
                })
                .collect();
            let mut coords = Vec::with_capacity(2 * landmarks);
            for &th in &angles {
                let r = hand_radius(th, &heights);
                let (mut x, mut y) = (r * th.cos(), r * th.sin());
                for (j, c) in coef.iter().enumerate() {
                    let f = (j + 1) as f64 * th;
                    x += c[0] * f.cos() + c[1] * f.sin();
                    y += c[2] * f.cos() + c[3] * f.sin();
                }
                coords.push(x);
                coords.push(y);
            }
            let local = PointSet::new(2, coords)?;
            crate::procrustes::apply_transform(&random_pose(&mut rng, 2), &local)
        })
        .collect()
}

/// Scattered 2D point clouds: a fixed random sample of an egg-shaped region,
/// denser toward one end so that no rotation maps the cloud onto itself,
/// deformed by random combinations of smooth fields.
pub fn cloud_shapes(count: usize, landmarks: usize, seed: u64) -> Result<Vec<PointSet>> {
    if landmarks < 3 {
        return Err(Error::Domain(format!("a cloud needs at least 3 landmarks, got {landmarks}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<(f64, f64)> = (0..landmarks)
        .map(|_| loop {
            let (x, y): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let half_width = 0.75 + 0.3 * x;
            if x * x + (y / half_width).powi(2) < 1.0 && rng.random_range(0.0..1.0) < 0.55 + 0.45 * x {
                break (x, y);
            }
        })
        .collect();
    (0..count)
        .map(|_| {
            let coef: Vec<f64> = (0..12).map(|_| 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
            let mut coords = Vec::with_capacity(2 * landmarks);
            for &(x, y) in &base {
                let f = [x * x, x * y, y * y, (2.0 * x).sin(), (2.0 * y).sin(), x * y * y];
                coords.push(x + f.iter().zip(&coef[..6]).map(|(a, b)| a * b).sum::<f64>());
                coords.push(y + f.iter().zip(&coef[6..]).map(|(a, b)| a * b).sum::<f64>());
            }
            let local = PointSet::new(2, coords)?;
            crate::procrustes::apply_transform(&random_pose(&mut rng, 2), &local)
        })
        .collect()
}

/// Near-uniform unit directions on the sphere (Fibonacci lattice).
fn sphere_directions(n: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let zc = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - zc * zc).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), zc]
        })
        .collect()
}

/// Low-order polynomial fields on the sphere driving the radial variation.
fn surface_fields(u: &[f64; 3]) -> [f64; 12] {
    let [x, y, z] = *u;
    [
        x,
        y,
        z,
        x * x - y * y,
        x * y,
        x * z,
        y * z,
        3.0 * z * z - 1.0,
        x * (x * x - 3.0 * y * y),
        z * (5.0 * z * z - 3.0),
        x * y * z,
        y * (3.0 * x * x - y * y),
    ]
}

/// Closed 3D surfaces sampled at `landmarks` fixed directions: an
/// ellipsoid with an off-axis bump, radially perturbed by random
/// combinations of low-order fields.
pub fn surface_shapes(count: usize, landmarks: usize, seed: u64) -> Result<Vec<PointSet>> {
    if landmarks < 4 {
        return Err(Error::Domain(format!("a surface needs at least 4 landmarks, got {landmarks}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs = sphere_directions(landmarks);
    let bump = [0.48, 0.6, 0.64];
    (0..count)
        .map(|_| {
            let coef: Vec<f64> = (0..12)
                .map(|j| {
                    let g: f64 = rng.sample(StandardNormal);
                    g * 0.05 / (1.0 + 0.25 * j as f64)
                })
                .collect();
            let mut coords = Vec::with_capacity(3 * landmarks);
            for u in &dirs {
                let near = u.iter().zip(&bump).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                let mut r = 1.0 + 0.25 * (-near / 0.3).exp();
                for (c, f) in coef.iter().zip(surface_fields(u)) {
                    r += c * f;
                }
                coords.push(1.0 * r * u[0]);
                coords.push(0.75 * r * u[1]);
                coords.push(0.55 * r * u[2]);
            }
            let local = PointSet::new(3, coords)?;
            crate::procrustes::apply_transform(&random_pose(&mut rng, 3), &local)
        })
        .collect()
}

/// Generalized Procrustes alignment, centering at the origin, unit-volume
/// normalization of the mean's bounding box, then PCA with `k` modes.
pub fn train_model(shapes: &[PointSet], k: usize, sweeps: usize) -> Result<(ShapeModel, TrainReport)> {
    let (mean, aligned) = mean_shape(shapes, sweeps, ScaleMode::Similarity)?;
    let c: Vec<f64> = mean.centroid().iter().map(|v| -v).collect();
    let mean = mean.translated(&c);
    let aligned: Vec<PointSet> = aligned.iter().map(|s| s.translated(&c)).collect();
    let (_, _, aligned) = normalize_mean_scale(&mean, &aligned)?;
    train_pca(&aligned, k)
}

/// Trained 2D contour model from 40 generated outlines.
pub fn contour_model(landmarks: usize, k: usize, seed: u64) -> Result<ShapeModel> {
    Ok(train_model(&contour_shapes(40, landmarks, seed)?, k, TRAIN_SWEEPS)?.0)
}

/// Trained 2D point-cloud model from 40 generated clouds.
pub fn cloud_model(landmarks: usize, k: usize, seed: u64) -> Result<ShapeModel> {
    Ok(train_model(&cloud_shapes(40, landmarks, seed)?, k, TRAIN_SWEEPS)?.0)
}

/// Trained 3D surface model from 30 generated surfaces.
pub fn surface_model(landmarks: usize, k: usize, seed: u64) -> Result<ShapeModel> {
    Ok(train_model(&surface_shapes(30, landmarks, seed)?, k, TRAIN_SWEEPS)?.0)
}

/// Ranges for drawing a ground-truth instance of a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetRanges {
    /// Shape weights are drawn with `|z_k| <= sd_bound * sqrt(lambda_k)`.
    pub sd_bound: f64,
    pub max_angle: f64,
    /// As a fraction of the mean shape's diameter, per axis.
    pub max_offset: f64,
    /// Scale is drawn from `[1 / max_scale, max_scale]`.
    pub max_scale: f64,
}

impl Default for TargetRanges {
    fn default() -> Self {
        TargetRanges { sd_bound: 2.0, max_angle: PI / 5.0, max_offset: 0.25, max_scale: 1.0 }
    }
}

/// A sampled ground truth: weights, pose, and the synthesized target.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub z: DVector<f64>,
    pub transform: SimilarityTransform,
    pub points: PointSet,
}

/// Draws `z` uniformly in the box of `sd_bound` standard deviations and a
/// random pose within `ranges`, then synthesizes the target.
pub fn sample_ground_truth<R: Rng + ?Sized>(
    model: &ShapeModel,
    ranges: &TargetRanges,
    rng: &mut R,
) -> Result<GroundTruth> {
    let z = DVector::from_iterator(
        model.modes(),
        model.eigenvalues().iter().map(|l| rng.random_range(-1.0..=1.0) * ranges.sd_bound * l.sqrt()),
    );
    let dim = model.dim();
    let angle = rng.random_range(-1.0..=1.0) * ranges.max_angle;
    let rotation = if dim == 2 {
        rotation_2d(angle)
    } else {
        let a: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        rotation_3d(a, angle)
    };
    let diam = model.mean_shape().diameter();
    let t = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..=1.0) * ranges.max_offset * diam);
    let scale =
        if ranges.max_scale > 1.0 { rng.random_range(ranges.max_scale.recip()..=ranges.max_scale) } else { 1.0 };
    let transform = SimilarityTransform::new(scale, rotation, t)?;
    let points = synthesize(model, &z, &transform)?;
    Ok(GroundTruth { z, transform, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contour_corpus_has_requested_shape() {
        let shapes = contour_shapes(5, 56, 1).unwrap();
        assert_eq!(shapes.len(), 5);
        assert!(shapes.iter().all(|s| s.len() == 56 && s.dim() == 2));
        assert_ne!(shapes[0], shapes[1]);
        assert_eq!(shapes, contour_shapes(5, 56, 1).unwrap());
    }

    #[test]
    fn cloud_corpus_is_deterministic_and_varied() {
        let shapes = cloud_shapes(4, 100, 2).unwrap();
        assert!(shapes.iter().all(|s| s.len() == 100 && s.dim() == 2));
        assert_ne!(shapes[0], shapes[1]);
        assert_eq!(shapes, cloud_shapes(4, 100, 2).unwrap());
        let model = cloud_model(100, 6, 2).unwrap();
        assert!((model.mean_shape().bounding_box().volume() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sphere_lattice_is_unit_and_spread() {
        let d = sphere_directions(500);
        for u in &d {
            assert!((u.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mean: Vec<f64> = (0..3).map(|i| d.iter().map(|u| u[i]).sum::<f64>() / 500.0).collect();
        assert!(mean.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn trained_contour_model_is_centered_unit_volume() {
        let model = contour_model(56, 10, 3).unwrap();
        assert_eq!(model.modes(), 10);
        let mean = model.mean_shape();
        assert!(mean.centroid().iter().all(|c| c.abs() < 1e-9));
        assert!((mean.bounding_box().volume() - 1.0).abs() < 1e-9);
        let lambdas = model.eigenvalues();
        assert!(lambdas.iter().zip(lambdas.iter().skip(1)).all(|(a, b)| a >= b));
    }

    #[test]
    fn trained_surface_model_has_modes() {
        let model = surface_model(400, 10, 4).unwrap();
        assert_eq!((model.landmarks(), model.dim(), model.modes()), (400, 3, 10));
        assert!((model.mean_shape().bounding_box().volume() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ground_truth_respects_ranges() {
        let model = contour_model(56, 5, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ranges = TargetRanges::default();
        let diam = model.mean_shape().diameter();
        for _ in 0..50 {
            let g = sample_ground_truth(&model, &ranges, &mut rng).unwrap();
            for (z, l) in g.z.iter().zip(model.eigenvalues().iter()) {
                assert!(z.abs() <= 2.0 * l.sqrt() + 1e-15);
            }
            let angle = g.transform.rotation[(1, 0)].atan2(g.transform.rotation[(0, 0)]);
            assert!(angle.abs() <= PI / 5.0 + 1e-12);
            assert!(g.transform.translation.iter().all(|t| t.abs() <= 0.25 * diam + 1e-12));
            assert_eq!(g.transform.scale, 1.0);
        }
    }
}
