//! Sampling-based pose estimation: MLE and MAP selection over mixture
//! samples, and the two uniform-sampling baselines.

use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{angular_error, render_depth, sample_pose, CameraIntrinsics, DepthImage, PoseMode, RotVec};
use crate::mdn::{gmm_pdf, gmm_sample, GmmParams};
use crate::sdfprior::{field_error, prior_density_with, silhouette_sdf, PriorConfig, SignedDistanceField};
use crate::shapespace::{binarize, reconstruct, Coefficients, SubspaceModel, VoxelGrid};

/// Occupancy threshold applied to reconstructed shapes before rendering.
pub const BINARIZE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub pose: RotVec,
    /// Mixture density for MLE, `prior · density` for MAP, the prior alone
    /// for the SDF baseline and the angular error in degrees for the oracle
    /// baseline.
    pub score: f64,
    pub n_evaluated: usize,
    /// Wall-clock seconds.
    pub elapsed: f64,
    /// Set when every MAP candidate rendered an empty silhouette and the
    /// MLE choice over the same samples was returned instead.
    pub fell_back: bool,
}

/// Renders the reconstructed shape at candidate poses and compares the
/// resulting silhouettes with the observed one.
#[derive(Debug, Clone)]
pub struct SilhouetteScorer {
    grid: VoxelGrid,
    observed: SignedDistanceField,
    cam: CameraIntrinsics,
    prior: PriorConfig,
    constant_prior: bool,
}

impl SilhouetteScorer {
    pub fn new(
        shape_coeffs: &Coefficients,
        observed: &DepthImage,
        cam: &CameraIntrinsics,
        model: &SubspaceModel,
        prior: PriorConfig,
    ) -> Result<Self> {
        let shape = reconstruct(shape_coeffs, model)?;
        let grid = binarize(&shape, BINARIZE_THRESHOLD, model.grid_dims())?;
        Self::from_grid(grid, observed, cam, prior)
    }

    pub fn from_grid(grid: VoxelGrid, observed: &DepthImage, cam: &CameraIntrinsics, prior: PriorConfig) -> Result<Self> {
        cam.validate()?;
        Error::check_len(cam.width, observed.width())?;
        Error::check_len(cam.height, observed.height())?;
        if !(prior.epsilon > 0.0) {
            return Err(Error::invalid("prior epsilon must be positive"));
        }
        Ok(Self {
            grid,
            observed: silhouette_sdf(observed)?,
            cam: *cam,
            prior,
            constant_prior: false,
        })
    }

    /// Test hook: every candidate gets `e_R = 0`, so the prior is constant.
    pub fn with_constant_prior(mut self) -> Self {
        self.constant_prior = true;
        self
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    /// `e_R` of a candidate pose, `None` when its render is empty.
    pub fn error(&self, pose: &RotVec) -> Result<Option<f64>> {
        if self.constant_prior {
            return Ok(Some(0.0));
        }
        let rendered = render_depth(&self.grid, pose, &self.cam)?;
        if rendered.object_pixel_count() == 0 {
            return Ok(None);
        }
        field_error(&self.observed, &silhouette_sdf(&rendered)?, &self.prior).map(Some)
    }

    /// Prior density of a candidate, zero for empty renders.
    pub fn prior(&self, pose: &RotVec) -> Result<f64> {
        match self.error(pose)? {
            Some(e) => prior_density_with(e, self.prior.epsilon),
            None => Ok(0.0),
        }
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("sample budget must be at least 1"));
    }
    Ok(())
}

fn draw<R: Rng + ?Sized>(theta: &GmmParams, n: usize, rng: &mut R) -> Vec<RotVec> {
    (0..n).map(|_| RotVec(gmm_sample(theta, rng))).collect()
}

fn draw_uniform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<RotVec> {
    (0..n).map(|_| sample_pose(PoseMode::Uniform, rng)).collect()
}

/// Index of the best key under `better`, keeping the earliest on ties.
fn arg_best<T>(keys: &[T], better: impl Fn(&T, &T) -> bool) -> usize {
    let mut best = 0;
    for i in 1..keys.len() {
        if better(&keys[i], &keys[best]) {
            best = i;
        }
    }
    best
}

/// Highest-density sample among `n` draws from `theta`.
pub fn estimate_mle<R: Rng + ?Sized>(theta: &GmmParams, n: usize, rng: &mut R) -> Result<EstimateResult> {
    check_n(n)?;
    let start = Instant::now();
    let candidates = draw(theta, n, rng);
    let pdfs: Vec<f64> = candidates.iter().map(|c| gmm_pdf(&c.0, theta)).collect();
    let best = arg_best(&pdfs, |a, b| a > b);
    Ok(EstimateResult {
        pose: candidates[best],
        score: pdfs[best],
        n_evaluated: n,
        elapsed: start.elapsed().as_secs_f64(),
        fell_back: false,
    })
}

/// Reconstructs the shape from `shape_coeffs` and returns the sample that
/// maximizes `prior(e_R) · density`.
pub fn estimate_map<R: Rng + ?Sized>(
    theta: &GmmParams,
    shape_coeffs: &Coefficients,
    observed: &DepthImage,
    cam: &CameraIntrinsics,
    model: &SubspaceModel,
    n: usize,
    rng: &mut R,
) -> Result<EstimateResult> {
    let scorer = SilhouetteScorer::new(shape_coeffs, observed, cam, model, PriorConfig::default())?;
    estimate_map_with(theta, &scorer, n, rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    score: f64,
    pdf: f64,
}

fn map_better(a: &Scored, b: &Scored) -> bool {
    a.score > b.score || (a.score == b.score && a.pdf > b.pdf)
}

fn score_candidate(theta: &GmmParams, scorer: &SilhouetteScorer, pose: &RotVec) -> Result<Scored> {
    let pdf = gmm_pdf(&pose.0, theta);
    let prior = scorer.prior(pose)?;
    Ok(Scored { score: prior * pdf, pdf })
}

fn finish_map(candidates: &[RotVec], scored: &[Scored], start: Instant) -> EstimateResult {
    let fell_back = scored.iter().all(|s| s.score == 0.0);
    let best = if fell_back {
        arg_best(scored, |a, b| a.pdf > b.pdf)
    } else {
        arg_best(scored, map_better)
    };
    EstimateResult {
        pose: candidates[best],
        score: if fell_back { scored[best].pdf } else { scored[best].score },
        n_evaluated: scored.len(),
        elapsed: start.elapsed().as_secs_f64(),
        fell_back,
    }
}

/// MAP selection with a prepared scorer.
pub fn estimate_map_with<R: Rng + ?Sized>(
    theta: &GmmParams,
    scorer: &SilhouetteScorer,
    n: usize,
    rng: &mut R,
) -> Result<EstimateResult> {
    check_n(n)?;
    let start = Instant::now();
    let candidates = draw(theta, n, rng);
    let mut result = select_map(theta, scorer, &candidates)?;
    result.elapsed = start.elapsed().as_secs_f64();
    Ok(result)
}

/// MAP choice over a given candidate list. Candidates are scored in
/// parallel and reduced in list order.
pub fn select_map(theta: &GmmParams, scorer: &SilhouetteScorer, candidates: &[RotVec]) -> Result<EstimateResult> {
    check_n(candidates.len())?;
    let start = Instant::now();
    let scored = candidates
        .par_iter()
        .map(|c| score_candidate(theta, scorer, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish_map(candidates, &scored, start))
}

/// Any-time MAP: draws and scores candidates one at a time while another
/// candidate still fits in `budget` (judged by the slowest one so far) and
/// fewer than `max_n` are scored, and returns the best of them. At least one candidate is always scored. The candidate sequence is
/// the same as [`estimate_map_with`] draws for the same generator state.
pub fn estimate_map_timed<R: Rng + ?Sized>(
    theta: &GmmParams,
    scorer: &SilhouetteScorer,
    budget: Duration,
    max_n: Option<usize>,
    rng: &mut R,
) -> Result<EstimateResult> {
    if let Some(n) = max_n {
        check_n(n)?;
    }
    let start = Instant::now();
    let mut candidates = Vec::new();
    let mut scored = Vec::new();
    // Slowest candidate so far; a new one is only started if it would still
    // fit in the budget at that cost.
    let mut slowest = Duration::ZERO;
    loop {
        let t = Instant::now();
        let c = RotVec(gmm_sample(theta, rng));
        scored.push(score_candidate(theta, scorer, &c)?);
        candidates.push(c);
        slowest = slowest.max(t.elapsed());
        if start.elapsed() + slowest >= budget || max_n.is_some_and(|n| candidates.len() >= n) {
            break;
        }
    }
    Ok(finish_map(&candidates, &scored, start))
}

/// Any-time MLE, the density-only counterpart of [`estimate_map_timed`].
pub fn estimate_mle_timed<R: Rng + ?Sized>(
    theta: &GmmParams,
    budget: Duration,
    max_n: Option<usize>,
    rng: &mut R,
) -> Result<EstimateResult> {
    if let Some(n) = max_n {
        check_n(n)?;
    }
    let start = Instant::now();
    let mut best: Option<(RotVec, f64)> = None;
    let mut count = 0;
    loop {
        let c = RotVec(gmm_sample(theta, rng));
        let pdf = gmm_pdf(&c.0, theta);
        count += 1;
        if best.is_none_or(|(_, b)| pdf > b) {
            best = Some((c, pdf));
        }
        if start.elapsed() >= budget || max_n.is_some_and(|n| count >= n) {
            break;
        }
    }
    let (pose, score) = best.expect("at least one candidate");
    Ok(EstimateResult {
        pose,
        score,
        n_evaluated: count,
        elapsed: start.elapsed().as_secs_f64(),
        fell_back: false,
    })
}

/// Closest of `n` uniform rotations to the true pose. The score is the
/// angular error in degrees.
pub fn baseline_random_oracle<R: Rng + ?Sized>(true_pose: &RotVec, n: usize, rng: &mut R) -> Result<EstimateResult> {
    check_n(n)?;
    let start = Instant::now();
    let candidates = draw_uniform(n, rng);
    let errors: Vec<f64> = candidates.iter().map(|c| angular_error(true_pose, c)).collect();
    let best = arg_best(&errors, |a, b| a < b);
    Ok(EstimateResult {
        pose: candidates[best],
        score: errors[best],
        n_evaluated: n,
        elapsed: start.elapsed().as_secs_f64(),
        fell_back: false,
    })
}

/// Uniform rotations ranked by silhouette error alone.
pub fn baseline_random_sdf<R: Rng + ?Sized>(
    shape_coeffs: &Coefficients,
    observed: &DepthImage,
    cam: &CameraIntrinsics,
    model: &SubspaceModel,
    n: usize,
    rng: &mut R,
) -> Result<EstimateResult> {
    let scorer = SilhouetteScorer::new(shape_coeffs, observed, cam, model, PriorConfig::default())?;
    baseline_random_sdf_with(&scorer, n, rng)
}

pub fn baseline_random_sdf_with<R: Rng + ?Sized>(
    scorer: &SilhouetteScorer,
    n: usize,
    rng: &mut R,
) -> Result<EstimateResult> {
    check_n(n)?;
    let start = Instant::now();
    let candidates = draw_uniform(n, rng);
    let mut result = select_by_sdf(scorer, &candidates)?;
    result.elapsed = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Lowest silhouette error over a given candidate list. With every render
/// empty the first candidate is returned with score 0 and the fallback flag
/// set.
pub fn select_by_sdf(scorer: &SilhouetteScorer, candidates: &[RotVec]) -> Result<EstimateResult> {
    check_n(candidates.len())?;
    let start = Instant::now();
    let priors = candidates
        .par_iter()
        .map(|c| scorer.prior(c))
        .collect::<Result<Vec<_>>>()?;
    let best = arg_best(&priors, |a, b| a > b);
    Ok(EstimateResult {
        pose: candidates[best],
        score: priors[best],
        n_evaluated: candidates.len(),
        elapsed: start.elapsed().as_secs_f64(),
        fell_back: priors.iter().all(|&p| p == 0.0),
    })
}
