//! Exact Gaussian-process regression with a Cholesky backbone.
//!
//! Targets are centered by their empirical mean before fitting and the
//! offset is added back at prediction, so data-sparse queries revert to the
//! scan's mean depth instead of 0 m. Variance never depends on the offset.

use crate::geometry::AngularCoordinate;
use crate::kernel::{distance_squared_matrix, KernelError, RbfKernel};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

/// Smallest admissible signal variance when deriving it from data.
pub const SIGNAL_VARIANCE_FLOOR: f64 = 1e-6;
/// First jitter attempt, as a fraction of the signal variance.
const JITTER_START_FRACTION: f64 = 1e-10;
/// Last jitter attempt before giving up, as a fraction of the signal variance.
const JITTER_MAX_FRACTION: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("dataset must contain at least one observation")]
    EmptyDataset,
    #[error("inputs ({inputs}) and targets ({targets}) differ in length")]
    MismatchedLengths { inputs: usize, targets: usize },
    #[error("noise variance must be finite and non-negative, got {0}")]
    InvalidNoiseVariance(f64),
    #[error("target depth must be finite, got {0}")]
    NonFiniteTarget(f64),
    #[error("gram matrix not factorizable even with jitter {jitter:.3e}")]
    DegenerateData { jitter: f64 },
    #[error("lengthscale bounds must satisfy 0 < min < max, got [{min}, {max}]")]
    InvalidLengthscaleBounds { min: f64, max: f64 },
    #[error("lengthscale search needs at least one grid point")]
    EmptySearchGrid,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Observations for one regression problem: viewing directions, measured
/// depths, and the shared measurement noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GpDataset {
    inputs: Vec<AngularCoordinate>,
    targets: Vec<f64>,
    noise_variance: f64,
}

impl GpDataset {
    pub fn new(
        inputs: Vec<AngularCoordinate>,
        targets: Vec<f64>,
        noise_variance: f64,
    ) -> Result<Self, GpError> {
        if inputs.len() != targets.len() {
            return Err(GpError::MismatchedLengths {
                inputs: inputs.len(),
                targets: targets.len(),
            });
        }
        if !noise_variance.is_finite() || noise_variance < 0.0 {
            return Err(GpError::InvalidNoiseVariance(noise_variance));
        }
        if let Some(&bad) = targets.iter().find(|t| !t.is_finite()) {
            return Err(GpError::NonFiniteTarget(bad));
        }
        Ok(Self {
            inputs,
            targets,
            noise_variance,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[AngularCoordinate] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn mean_target(&self) -> f64 {
        if self.targets.is_empty() {
            0.0
        } else {
            self.targets.iter().sum::<f64>() / self.targets.len() as f64
        }
    }

    /// Population variance of the mean-centered targets, floored so a
    /// constant scan still yields a usable kernel.
    pub fn floored_target_variance(&self) -> f64 {
        let m = self.mean_target();
        let var = self
            .targets
            .iter()
            .map(|t| (t - m) * (t - m))
            .sum::<f64>()
            / self.targets.len().max(1) as f64;
        var.max(SIGNAL_VARIANCE_FLOOR)
    }

    fn centered_targets(&self) -> (DVector<f64>, f64) {
        let offset = self.mean_target();
        (
            DVector::from_iterator(
                self.targets.len(),
                self.targets.iter().map(|t| t - offset),
            ),
            offset,
        )
    }
}

/// Fitted posterior: the Cholesky factor of the regularized Gram matrix and
/// the precomputed weight vector, ready for O(T) mean and O(T^2) variance
/// queries.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    dataset: GpDataset,
    kernel: RbfKernel,
    mean_offset: f64,
    chol_lower: DMatrix<f64>,
    weights: DVector<f64>,
    jitter: f64,
}

impl GpPosterior {
    /// Factorizes `K + noise I (+ jitter I)` and solves for the weights.
    ///
    /// Jitter starts tiny and escalates tenfold until the factorization
    /// succeeds; coincident sample directions need this.
    pub fn fit(dataset: GpDataset, kernel: RbfKernel) -> Result<Self, GpError> {
        if dataset.is_empty() {
            return Err(GpError::EmptyDataset);
        }
        let (centered, mean_offset) = dataset.centered_targets();
        let mut gram = kernel.gram_matrix(dataset.inputs());
        for i in 0..gram.nrows() {
            gram[(i, i)] += dataset.noise_variance();
        }
        let (chol, jitter) = cholesky_with_jitter(&gram, kernel.signal_variance())?;
        let weights = chol.solve(&centered);
        let chol_lower = chol.unpack();
        Ok(Self {
            dataset,
            kernel,
            mean_offset,
            chol_lower,
            weights,
            jitter,
        })
    }

    pub fn dataset(&self) -> &GpDataset {
        &self.dataset
    }

    pub fn kernel(&self) -> &RbfKernel {
        &self.kernel
    }

    pub fn mean_offset(&self) -> f64 {
        self.mean_offset
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn cholesky_lower(&self) -> &DMatrix<f64> {
        &self.chol_lower
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior mean and variance at one viewing direction.
    ///
    /// Mean is `offset + k(x)' w`; variance is `k(x,x) - |L^-1 k(x)|^2`,
    /// clamped at zero against rounding.
    pub fn predict(&self, x: &AngularCoordinate) -> (f64, f64) {
        let k = self.kernel.cross_covariance(x, self.dataset.inputs());
        let mean = self.mean_offset + k.dot(&self.weights);
        let v = self
            .chol_lower
            .solve_lower_triangular(&k)
            .expect("factor has strictly positive diagonal by construction");
        let variance = self.kernel.signal_variance() - v.norm_squared();
        (mean, variance.max(0.0))
    }
}

/// Prediction with no observations at all: the prior mean and variance.
///
/// The query location is accepted for call-site symmetry with
/// [`GpPosterior::predict`]; a stationary prior ignores it.
pub fn predict_prior(kernel: &RbfKernel, _x: &AngularCoordinate, mean_offset: f64) -> (f64, f64) {
    (mean_offset, kernel.signal_variance())
}

/// Gaussian evidence of the centered targets under the kernel:
/// `-1/2 y' A^-1 y - 1/2 log det A - T/2 log 2pi` with `A = K + noise I`.
pub fn log_marginal_likelihood(dataset: &GpDataset, kernel: &RbfKernel) -> Result<f64, GpError> {
    if dataset.is_empty() {
        return Err(GpError::EmptyDataset);
    }
    let dist_sq = distance_squared_matrix(dataset.inputs());
    let (centered, _) = dataset.centered_targets();
    lml_from_distances(&dist_sq, &centered, kernel, dataset.noise_variance())
}

fn lml_from_distances(
    dist_sq: &DMatrix<f64>,
    centered: &DVector<f64>,
    kernel: &RbfKernel,
    noise_variance: f64,
) -> Result<f64, GpError> {
    let t = centered.len();
    let mut a = DMatrix::zeros(t, t);
    for i in 0..t {
        a[(i, i)] = kernel.signal_variance() + noise_variance;
        for j in (i + 1)..t {
            let v = kernel.from_distance_squared(dist_sq[(i, j)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let (chol, _) = cholesky_with_jitter(&a, kernel.signal_variance())?;
    let alpha = chol.solve(centered);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    Ok(-0.5 * centered.dot(&alpha)
        - log_det_half
        - 0.5 * t as f64 * (2.0 * std::f64::consts::PI).ln())
}

fn cholesky_with_jitter(
    a: &DMatrix<f64>,
    signal_variance: f64,
) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let mut jitter = JITTER_START_FRACTION * signal_variance;
    let max_jitter = JITTER_MAX_FRACTION * signal_variance;
    loop {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok((chol, jitter));
        }
        if jitter >= max_jitter {
            return Err(GpError::DegenerateData { jitter });
        }
        jitter *= 10.0;
    }
}

/// Settings shared by every lengthscale search in a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpFitConfig {
    /// Search interval in radians.
    pub lengthscale_bounds: (f64, f64),
    /// Log-uniform grid resolution of the coarse pass.
    pub lengthscale_grid_points: usize,
    /// Lengthscale used verbatim when a search is impossible (fewer than two
    /// observations).
    pub template_lengthscale: f64,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self {
            lengthscale_bounds: (1e-3, 2.0),
            lengthscale_grid_points: 32,
            template_lengthscale: 0.1,
        }
    }
}

/// Outcome of a lengthscale search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthscaleSearch {
    pub kernel: RbfKernel,
    /// True when the dataset was too small to search and the template
    /// lengthscale was kept.
    pub template_fallback: bool,
}

/// Maximizes the log-marginal likelihood over the lengthscale.
///
/// A log-uniform grid (endpoints included exactly) locates the best cell,
/// then golden-section refinement narrows it. The returned lengthscale is
/// the best value seen across all evaluations; exact ties prefer the larger
/// lengthscale, so degenerate data settles on the smoothest model.
pub fn optimize_lengthscale(
    dataset: &GpDataset,
    kernel_template: &RbfKernel,
    bounds: (f64, f64),
    grid_points: usize,
) -> Result<LengthscaleSearch, GpError> {
    let (lo, hi) = bounds;
    if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || lo >= hi {
        return Err(GpError::InvalidLengthscaleBounds { min: lo, max: hi });
    }
    if grid_points == 0 {
        return Err(GpError::EmptySearchGrid);
    }
    if dataset.len() < 2 {
        return Ok(LengthscaleSearch {
            kernel: *kernel_template,
            template_fallback: true,
        });
    }

    struct Tracker {
        dist_sq: DMatrix<f64>,
        centered: DVector<f64>,
        template: RbfKernel,
        noise: f64,
        best: Option<(f64, f64)>, // (lml, lengthscale)
        last_err: Option<GpError>,
    }

    impl Tracker {
        fn evaluate(&mut self, lengthscale: f64) -> f64 {
            let kernel = match self.template.with_lengthscale(lengthscale) {
                Ok(k) => k,
                Err(_) => return f64::NEG_INFINITY,
            };
            match lml_from_distances(&self.dist_sq, &self.centered, &kernel, self.noise) {
                Ok(v) => {
                    let better = match self.best {
                        None => true,
                        Some((bv, bl)) => v > bv || (v == bv && lengthscale > bl),
                    };
                    if better {
                        self.best = Some((v, lengthscale));
                    }
                    v
                }
                Err(e) => {
                    self.last_err = Some(e);
                    f64::NEG_INFINITY
                }
            }
        }
    }

    let (centered, _) = dataset.centered_targets();
    let mut search = Tracker {
        dist_sq: distance_squared_matrix(dataset.inputs()),
        centered,
        template: *kernel_template,
        noise: dataset.noise_variance(),
        best: None,
        last_err: None,
    };

    // Coarse pass. A single-point grid sits at the geometric midpoint.
    let grid: Vec<f64> = if grid_points == 1 {
        vec![(lo.ln() + hi.ln()).mul_add(0.5, 0.0).exp()]
    } else {
        let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
        (0..grid_points)
            .map(|i| {
                if i == 0 {
                    lo
                } else if i == grid_points - 1 {
                    hi
                } else {
                    (ln_lo + (ln_hi - ln_lo) * i as f64 / (grid_points - 1) as f64).exp()
                }
            })
            .collect()
    };
    for &l in &grid {
        search.evaluate(l);
    }
    let best_idx = match search.best {
        Some((_, bl)) => grid
            .iter()
            .position(|&l| l == bl)
            .unwrap_or(grid.len() - 1),
        None => {
            return Err(search.last_err.unwrap_or(GpError::DegenerateData {
                jitter: JITTER_MAX_FRACTION * kernel_template.signal_variance(),
            }))
        }
    };

    // Golden-section refinement inside the bracket around the best cell.
    if grid.len() > 1 {
        let mut a = grid[best_idx.saturating_sub(1)].ln();
        let mut b = grid[(best_idx + 1).min(grid.len() - 1)].ln();
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - ratio * (b - a);
        let mut d = a + ratio * (b - a);
        let mut fc = search.evaluate(c.exp());
        let mut fd = search.evaluate(d.exp());
        for _ in 0..20 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = search.evaluate(c.exp());
            } else {
                // Ties shrink toward the larger lengthscale.
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = search.evaluate(d.exp());
            }
        }
    }

    let (_, lengthscale) = search.best.expect("grid produced at least one finite score");
    Ok(LengthscaleSearch {
        kernel: kernel_template.with_lengthscale(lengthscale)?,
        template_fallback: false,
    })
}

/// A posterior produced by the full automatic pipeline.
#[derive(Debug, Clone)]
pub struct AutoFit {
    pub posterior: GpPosterior,
    /// True when the lengthscale search could not run (fewer than two
    /// observations) and the template lengthscale was used.
    pub lengthscale_fallback: bool,
}

/// Centers targets, derives the signal variance from them, searches the
/// lengthscale, and fits. Single-region and many-region pipelines both call
/// this, so a one-region partition reproduces the conventional fit exactly.
pub fn fit_auto(dataset: GpDataset, config: &GpFitConfig) -> Result<AutoFit, GpError> {
    if dataset.is_empty() {
        return Err(GpError::EmptyDataset);
    }
    let signal_variance = dataset.floored_target_variance();
    let template = RbfKernel::new(signal_variance, config.template_lengthscale)?;
    let search = optimize_lengthscale(
        &dataset,
        &template,
        config.lengthscale_bounds,
        config.lengthscale_grid_points,
    )?;
    let posterior = GpPosterior::fit(dataset, search.kernel)?;
    Ok(AutoFit {
        posterior,
        lengthscale_fallback: search.template_fallback,
    })
}
