//! Shared oracles for the integration suites.
//!
//! Everything here recomputes results through a different route than the
//! library (explicit inversion, term expansion, exhaustive per-pixel
//! loops), so agreement is evidence rather than tautology. Kernel values
//! are expanded inline for the same reason.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use radsplat::geometry::{AngularCoordinate, AngularRange, Point3};
use radsplat::pointcloud::{ScanRecord, SparseDepthScan};
use radsplat::splat::{project_gaussian, CameraModel, GaussianPrimitive, ProjectedGaussian};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The scene domain the binary also defaults to.
pub fn default_range() -> AngularRange {
    AngularRange::new(
        (-90f64).to_radians(),
        90f64.to_radians(),
        (-20f64).to_radians(),
        20f64.to_radians(),
    )
    .expect("static bounds are valid")
}

pub fn random_coordinates(
    range: &AngularRange,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<AngularCoordinate> {
    (0..count)
        .map(|_| {
            let az = rng.random_range(range.azimuth_min()..range.azimuth_max());
            let el = rng.random_range(range.elevation_min()..range.elevation_max());
            AngularCoordinate::new(az, el).expect("sampled inside a valid range")
        })
        .collect()
}

/// A reproducible scan over the default range: smooth depth plus bounded
/// jitter, one RNG stream for locations and noise.
pub fn noisy_scan(seed: u64, count: usize) -> SparseDepthScan {
    let range = default_range();
    let mut r = rng(seed);
    let coords = random_coordinates(&range, count, &mut r);
    let records = coords
        .into_iter()
        .map(|c| {
            let depth = 20.0
                + 4.0 * (1.5 * c.azimuth()).sin()
                + 2.0 * (3.0 * c.elevation()).cos()
                + r.random_range(-0.5..0.5);
            ScanRecord::new(c, depth).expect("synthetic depths are valid")
        })
        .collect();
    SparseDepthScan::new(records, None, None)
}

/// Squared-exponential covariance written out longhand.
pub fn rbf_value(
    signal_variance: f64,
    lengthscale: f64,
    a: &AngularCoordinate,
    b: &AngularCoordinate,
) -> f64 {
    let daz = a.azimuth() - b.azimuth();
    let del = a.elevation() - b.elevation();
    signal_variance * (-(daz * daz + del * del) / (2.0 * lengthscale * lengthscale)).exp()
}

fn regularized_gram(
    inputs: &[AngularCoordinate],
    signal_variance: f64,
    lengthscale: f64,
    noise_variance: f64,
) -> DMatrix<f64> {
    let t = inputs.len();
    let mut a = DMatrix::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            a[(i, j)] = rbf_value(signal_variance, lengthscale, &inputs[i], &inputs[j]);
        }
        a[(i, i)] += noise_variance;
    }
    a
}

/// Posterior mean and variance through an explicit matrix inverse:
/// `m + k'(K + noise I)^-1 (y - m)` and `k(x,x) - k'(K + noise I)^-1 k`.
pub fn naive_predict(
    inputs: &[AngularCoordinate],
    targets: &[f64],
    noise_variance: f64,
    signal_variance: f64,
    lengthscale: f64,
    query: &AngularCoordinate,
) -> (f64, f64) {
    let t = inputs.len();
    let offset = targets.iter().sum::<f64>() / t as f64;
    let a = regularized_gram(inputs, signal_variance, lengthscale, noise_variance);
    let inv = a.try_inverse().expect("oracle systems are well conditioned");
    let centered = DVector::from_iterator(t, targets.iter().map(|y| y - offset));
    let k = DVector::from_iterator(
        t,
        inputs
            .iter()
            .map(|p| rbf_value(signal_variance, lengthscale, query, p)),
    );
    let alpha = &inv * &centered;
    let mean = offset + k.dot(&alpha);
    let variance = signal_variance - k.dot(&(&inv * &k));
    (mean, variance)
}

/// Log evidence of the centered targets through an explicit inverse and an
/// LU determinant.
pub fn naive_lml(
    inputs: &[AngularCoordinate],
    targets: &[f64],
    noise_variance: f64,
    signal_variance: f64,
    lengthscale: f64,
) -> f64 {
    let t = inputs.len();
    let offset = targets.iter().sum::<f64>() / t as f64;
    let a = regularized_gram(inputs, signal_variance, lengthscale, noise_variance);
    let det = a.determinant();
    let inv = a.try_inverse().expect("oracle systems are well conditioned");
    let centered = DVector::from_iterator(t, targets.iter().map(|y| y - offset));
    let alpha = &inv * &centered;
    -0.5 * centered.dot(&alpha)
        - 0.5 * det.ln()
        - 0.5 * t as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Draws one function sample of a zero-mean GP with the given kernel at
/// `inputs`, plus observation noise, around a constant offset.
pub fn sample_gp_function(
    inputs: &[AngularCoordinate],
    signal_variance: f64,
    lengthscale: f64,
    noise_std: f64,
    offset: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let t = inputs.len();
    let mut k = DMatrix::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            k[(i, j)] = rbf_value(signal_variance, lengthscale, &inputs[i], &inputs[j]);
        }
        // Draw-side regularization only; keeps the factorization alive.
        k[(i, i)] += 1e-10 * signal_variance;
    }
    let chol = k.cholesky().expect("regularized gram factorizes");
    let z = DVector::from_iterator(t, (0..t).map(|_| StandardNormal.sample(rng)));
    let f = chol.l() * z;
    (0..t)
        .map(|i| {
            let noise: f64 = StandardNormal.sample(rng);
            offset + f[i] + noise_std * noise
        })
        .collect()
}

/// 2D splat density by adjugate inversion of the 2x2 covariance, with the
/// library's peak clamp mirrored from its documented contract.
pub fn density_oracle(s: &ProjectedGaussian, p: [f64; 2]) -> f64 {
    let (a, b, c) = (s.cov2d[(0, 0)], s.cov2d[(0, 1)], s.cov2d[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return 0.0;
    }
    let dx = p[0] - s.mean2d.x;
    let dy = p[1] - s.mean2d.y;
    let q = (dx * (c * dx - b * dy) + dy * (a * dy - b * dx)) / det;
    (s.opacity * (-0.5 * q).exp()).clamp(0.0, 0.999)
}

/// Compositing by literal term expansion: every term rebuilds its
/// transmittance prefix product from scratch.
pub fn composite_terms(splats: &[ProjectedGaussian], p: [f64; 2]) -> [f64; 3] {
    let mut out = [0f64; 3];
    for (i, s) in splats.iter().enumerate() {
        let gi = density_oracle(s, p);
        let mut prefix = 1f64;
        for t in &splats[..i] {
            prefix *= 1.0 - density_oracle(t, p);
        }
        for (ch, c) in out.iter_mut().zip(&s.color) {
            *ch += gi * prefix * c;
        }
    }
    out
}

/// Cutoff-free reference image: every projected splat is composited at
/// every pixel in depth order with primitive-index tie breaks.
pub fn brute_force_render(gaussians: &[GaussianPrimitive], cam: &CameraModel) -> Vec<[f64; 3]> {
    let mut projected: Vec<(usize, ProjectedGaussian)> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, cam).map(|p| (i, p)))
        .collect();
    projected.sort_by(|x, y| {
        x.1.view_depth
            .total_cmp(&y.1.view_depth)
            .then(x.0.cmp(&y.0))
    });
    let splats: Vec<ProjectedGaussian> = projected.into_iter().map(|(_, p)| p).collect();
    let (width, height) = (cam.width(), cam.height());
    let mut pixels = vec![[0f64; 3]; width * height];
    for y in 0..height {
        for x in 0..width {
            let p = [x as f64, y as f64];
            let mut color = [0f64; 3];
            let mut transmittance = 1f64;
            for s in &splats {
                let g = density_oracle(s, p);
                for (ch, c) in color.iter_mut().zip(&s.color) {
                    *ch += transmittance * g * c;
                }
                transmittance *= 1.0 - g;
            }
            pixels[y * width + x] = color;
        }
    }
    pixels
}

/// Uniform rotation via four normalized normal deviates.
pub fn random_unit_quaternion(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return [q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm];
        }
    }
}

/// A primitive in front of an origin camera looking down +z.
pub fn random_primitive(rng: &mut ChaCha8Rng) -> GaussianPrimitive {
    let mean = Point3::new(
        rng.random_range(-4.0..4.0),
        rng.random_range(-4.0..4.0),
        rng.random_range(4.0..40.0),
    )
    .expect("finite components");
    let scale = [
        rng.random_range(0.05..1.5),
        rng.random_range(0.05..1.5),
        rng.random_range(0.05..1.5),
    ];
    let opacity = rng.random_range(0.05..1.0);
    let color = [
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
    ];
    GaussianPrimitive::from_quaternion_components(
        mean,
        random_unit_quaternion(rng),
        scale,
        opacity,
        color,
    )
    .expect("sampled parameters are valid")
}

/// A posed pinhole camera with a bounded focal length.
pub fn random_camera(rng: &mut ChaCha8Rng, width: usize, height: usize) -> CameraModel {
    let q = random_unit_quaternion(rng);
    let r = nalgebra::UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(
        q[0], q[1], q[2], q[3],
    ))
    .to_rotation_matrix();
    let t = [
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    ];
    let m = r.matrix();
    let extrinsic = [
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        t[0],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
        t[1],
        m[(2, 0)],
        m[(2, 1)],
        m[(2, 2)],
        t[2],
    ];
    let fx = rng.random_range(80.0..400.0);
    let fy = rng.random_range(80.0..400.0);
    CameraModel::new(
        &extrinsic,
        fx,
        fy,
        width as f64 * 0.5,
        height as f64 * 0.5,
        width,
        height,
    )
    .expect("sampled camera is valid")
}

pub fn max_channel_gap(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    assert_eq!(a.len(), b.len(), "images must be the same size");
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

/// 2x2 symmetric eigenvalue pair in closed form, smallest first.
pub fn eigenvalues_2x2(m: &Matrix2<f64>) -> (f64, f64) {
    let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let half_trace = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (half_trace - disc, half_trace + disc)
}

/// A synthetic projected splat for compositing property tests.
pub fn random_projected(rng: &mut ChaCha8Rng, view_depth: f64) -> ProjectedGaussian {
    // Random SPD covariance: A A' + eps I.
    let a = Matrix2::new(
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    );
    let cov2d = a * a.transpose() + Matrix2::identity() * 0.05;
    ProjectedGaussian {
        mean2d: Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
        cov2d,
        view_depth,
        opacity: rng.random_range(0.0..1.0),
        color: [
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
        ],
    }
}

/// Sorted random splat list with occasional exact depth ties.
pub fn random_sorted_splats(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<ProjectedGaussian> {
    let len = rng.random_range(0..=max_len);
    let mut depths: Vec<f64> = (0..len).map(|_| rng.random_range(0.5..30.0)).collect();
    depths.sort_by(|a, b| a.total_cmp(b));
    if depths.len() >= 2 && rng.random_range(0.0..1.0) < 0.2 {
        depths[1] = depths[0];
    }
    depths
        .into_iter()
        .map(|d| random_projected(rng, d))
        .collect()
}
