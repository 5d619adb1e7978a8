//! Benchmark evaluation: every method at every sample budget over a set of
//! labeled test views.
//!
//! Each view gets its own random streams, independent of the sample budget,
//! so larger budgets see a superset of the candidates drawn at smaller ones.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    baseline_random_oracle, baseline_random_sdf_with, estimate_map_with, estimate_mle, SilhouetteScorer,
};
use crate::geometry::{CameraIntrinsics, DepthImage, RotVec};
use crate::mdn::{forward, HeadMode, PosePrediction, PredictionOutput, TrainedModel};
use crate::metrics::{compute_metrics, MetricsRow};
use crate::sdfprior::PriorConfig;
use crate::shapespace::SubspaceModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Direct regression by the point-mode network.
    Point,
    Mle,
    Map,
    RandomOracle,
    RandomSdf,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Point, Method::Mle, Method::Map, Method::RandomOracle, Method::RandomSdf];

    pub fn name(self) -> &'static str {
        match self {
            Method::Point => "point",
            Method::Mle => "mle",
            Method::Map => "map",
            Method::RandomOracle => "random-oracle",
            Method::RandomSdf => "random-sdf",
        }
    }

    /// MLE and MAP share a stream so they rank the same candidates.
    fn stream(self) -> u64 {
        match self {
            Method::Point => 0,
            Method::Mle | Method::Map => 1,
            Method::RandomOracle => 2,
            Method::RandomSdf => 3,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}'")))
    }
}

/// A test view with its ground-truth pose.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub depth: DepthImage,
    pub pose: RotVec,
    pub category: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub sample_counts: Vec<usize>,
    pub seed: u64,
    pub camera: CameraIntrinsics,
    pub prior: PriorConfig,
}

/// Trained networks available to the evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Models<'a> {
    pub mdn: Option<&'a TrainedModel>,
    pub point: Option<&'a TrainedModel>,
    pub subspace: &'a SubspaceModel,
}

/// Predictions of one method at one budget, aligned with the items.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub method: Method,
    pub n_samples: usize,
    pub poses: Vec<RotVec>,
    /// Per-view wall-clock seconds.
    pub seconds: Vec<f64>,
}

impl MethodRun {
    pub fn row(&self, truth: &[RotVec]) -> Result<MetricsRow> {
        Ok(MetricsRow {
            method: self.method.name().into(),
            n_samples: self.n_samples,
            metrics: compute_metrics(&self.poses, truth)?,
            runtime_s: self.seconds.iter().sum::<f64>() / self.seconds.len().max(1) as f64,
        })
    }

    /// Predictions restricted to the views selected by `keep`.
    pub fn subset(&self, keep: &[bool]) -> MethodRun {
        fn pick<T: Copy>(v: &[T], keep: &[bool]) -> Vec<T> {
            v.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| *x).collect()
        }
        MethodRun {
            method: self.method,
            n_samples: self.n_samples,
            poses: pick(&self.poses, keep),
            seconds: pick(&self.seconds, keep),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub runs: Vec<MethodRun>,
    pub rows: Vec<MetricsRow>,
}

impl EvalReport {
    pub fn run(&self, method: Method, n: usize) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.method == method && r.n_samples == n)
    }

    pub fn row(&self, method: Method, n: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method.name() && r.n_samples == n)
    }
}

fn require(model: Option<&TrainedModel>, mode: HeadMode, method: Method) -> Result<&TrainedModel> {
    let m = model.ok_or_else(|| Error::invalid(format!("method '{}' needs a {mode:?} model", method.name())))?;
    if m.config.mode != mode {
        return Err(Error::invalid(format!("method '{}' needs a {mode:?} model", method.name())));
    }
    Ok(m)
}

/// Random stream for one view and method.
pub fn item_rng(seed: u64, item: usize, method: Method) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((item as u64) << 8) | method.stream());
    rng
}

struct ItemOutcome {
    /// Indexed like the (method, n) cells.
    poses: Vec<RotVec>,
    seconds: Vec<f64>,
}

fn timed_forward(model: &TrainedModel, depth: &DepthImage) -> Result<(PredictionOutput, f64)> {
    let t = Instant::now();
    let out = forward(&model.weights, depth, &model.config)?;
    Ok((out, t.elapsed().as_secs_f64()))
}

fn evaluate_item(index: usize, item: &EvalItem, models: &Models, cfg: &EvalConfig) -> Result<ItemOutcome> {
    let needs_mdn = cfg.methods.iter().any(|m| matches!(m, Method::Mle | Method::Map));
    let needs_point = cfg.methods.contains(&Method::Point);
    let needs_shape = cfg.methods.iter().any(|m| matches!(m, Method::Map | Method::RandomSdf));

    let mdn_out = if needs_mdn || (needs_shape && models.mdn.is_some()) {
        Some(timed_forward(require(models.mdn, HeadMode::Mdn, Method::Mle)?, &item.depth)?)
    } else {
        None
    };
    let point_out = if needs_point || (needs_shape && mdn_out.is_none()) {
        Some(timed_forward(require(models.point, HeadMode::Point, Method::Point)?, &item.depth)?)
    } else {
        None
    };
    let scorer = if needs_shape {
        let (out, _) = mdn_out.as_ref().or(point_out.as_ref()).expect("a shape prediction");
        Some(SilhouetteScorer::new(&out.shape_coeffs, &item.depth, &cfg.camera, models.subspace, cfg.prior)?)
    } else {
        None
    };

    let mut poses = Vec::new();
    let mut seconds = Vec::new();
    for &method in &cfg.methods {
        for &n in &cfg.sample_counts {
            let mut rng = item_rng(cfg.seed, index, method);
            let (pose, secs) = match method {
                Method::Point => {
                    let (out, t) = point_out.as_ref().expect("point output");
                    match &out.pose {
                        PosePrediction::Point(r) => (*r, *t),
                        PosePrediction::Mixture(_) => unreachable!("point model checked"),
                    }
                }
                Method::Mle => {
                    let (out, t) = mdn_out.as_ref().expect("mdn output");
                    let r = estimate_mle(out.mixture().expect("mixture"), n, &mut rng)?;
                    (r.pose, t + r.elapsed)
                }
                Method::Map => {
                    let (out, t) = mdn_out.as_ref().expect("mdn output");
                    let scorer = scorer.as_ref().expect("scorer");
                    let r = estimate_map_with(out.mixture().expect("mixture"), scorer, n, &mut rng)?;
                    (r.pose, t + r.elapsed)
                }
                Method::RandomOracle => {
                    let r = baseline_random_oracle(&item.pose, n, &mut rng)?;
                    (r.pose, r.elapsed)
                }
                Method::RandomSdf => {
                    let (_, t) = mdn_out.as_ref().or(point_out.as_ref()).expect("shape output");
                    let r = baseline_random_sdf_with(scorer.as_ref().expect("scorer"), n, &mut rng)?;
                    (r.pose, t + r.elapsed)
                }
            };
            poses.push(pose);
            seconds.push(secs);
        }
    }
    Ok(ItemOutcome { poses, seconds })
}

/// Runs every configured method at every sample count over `items`.
pub fn evaluate(items: &[EvalItem], models: &Models, cfg: &EvalConfig) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Empty("evaluation items"));
    }
    if cfg.methods.is_empty() || cfg.sample_counts.is_empty() {
        return Err(Error::invalid("need at least one method and one sample count"));
    }
    if cfg.sample_counts.contains(&0) {
        return Err(Error::invalid("sample counts must be positive"));
    }
    for &m in &cfg.methods {
        match m {
            Method::Mle | Method::Map => {
                require(models.mdn, HeadMode::Mdn, m)?;
            }
            Method::Point => {
                require(models.point, HeadMode::Point, m)?;
            }
            Method::RandomSdf if models.mdn.is_none() && models.point.is_none() => {
                return Err(Error::invalid("random-sdf needs a model for the shape estimate"));
            }
            _ => {}
        }
    }

    let outcomes = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| evaluate_item(i, item, models, cfg))
        .collect::<Result<Vec<_>>>()?;

    let truth: Vec<RotVec> = items.iter().map(|it| it.pose).collect();
    let mut runs = Vec::new();
    let mut cell = 0;
    for &method in &cfg.methods {
        for &n in &cfg.sample_counts {
            runs.push(MethodRun {
                method,
                n_samples: n,
                poses: outcomes.iter().map(|o| o.poses[cell]).collect(),
                seconds: outcomes.iter().map(|o| o.seconds[cell]).collect(),
            });
            cell += 1;
        }
    }
    let rows = runs.iter().map(|r| r.row(&truth)).collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { runs, rows })
}
