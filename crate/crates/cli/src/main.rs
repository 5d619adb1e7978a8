use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use posterior_pose::dataset::{self, DatasetConfig, LabeledView, SplitKind};
use posterior_pose::estimator::{
    baseline_random_oracle, baseline_random_sdf_with, estimate_map_timed, estimate_map_with, estimate_mle,
    estimate_mle_timed, EstimateResult, SilhouetteScorer,
};
use posterior_pose::eval::{evaluate, EvalConfig, EvalItem, Method, Models};
use posterior_pose::geometry::render_depth;
use posterior_pose::io;
use posterior_pose::mdn::{forward, preprocess, train_with_progress, HeadMode, NetworkConfig, Target, TrainOptions, TrainingSample};
use posterior_pose::metrics::{gnuplot_script, metrics_csv};
use posterior_pose::sdfprior::{silhouette_sdf, PriorConfig};
use posterior_pose::{CameraIntrinsics, Coefficients, Error, RotVec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "posterior-pose", version, about = "Pose posteriors from segmented depth images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: subspace, train and test splits.
    GenData {
        /// Dataset config JSON; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a network on a dataset's training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "mdn")]
        mode: HeadMode,
        #[arg(long, default_value_t = 25)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Network and optimizer overrides as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Estimate the pose of one depth image.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        subspace: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long, default_value = "map")]
        method: Method,
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Seconds; candidates are drawn until the budget runs out (mle, map).
        #[arg(long)]
        time_budget: Option<f64>,
        /// Ground truth, required by random-oracle.
        #[arg(long, allow_hyphen_values = true)]
        true_pose: Option<String>,
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Benchmark methods over a dataset's test split and write a metrics CSV.
    Eval {
        /// Mixture-density model.
        #[arg(long)]
        model: PathBuf,
        /// Point-regression model, needed by the point method.
        #[arg(long)]
        point_model: Option<PathBuf>,
        #[arg(long)]
        subspace: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "point,mle,map,random-oracle,random-sdf")]
        methods: Vec<Method>,
        #[arg(long, value_delimiter = ',', default_value = "5,25,100")]
        n: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a voxel grid at a pose.
    Render {
        #[arg(long)]
        voxel: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        camera: Option<PathBuf>,
    },
    /// Signed distance field of a depth image's silhouette.
    Sdf {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::NumericFailure(_)) => 3,
        Some(err) if err.is_validation() => 2,
        _ => 1,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { config, out, seed } => gen_data(config.as_deref(), &out, seed),
        Command::Train { data, out, mode, epochs, seed, config } => {
            train(&data, &out, mode, epochs, seed, config.as_deref())
        }
        Command::Estimate { model, subspace, depth, method, n, time_budget, true_pose, camera, seed } => {
            estimate(&EstimateArgs {
                model,
                subspace,
                depth,
                method,
                n,
                time_budget,
                true_pose,
                camera,
                seed,
            })
        }
        Command::Eval { model, point_model, subspace, data, methods, n, out, seed } => {
            eval(&model, point_model.as_deref(), &subspace, &data, methods, n, &out, seed)
        }
        Command::Render { voxel, pose, out, camera } => {
            let grid = io::read_voxels(&voxel).with_context(|| format!("reading {}", voxel.display()))?;
            let pose = RotVec::parse(&pose)?;
            let cam = load_camera(camera.as_deref())?;
            io::write_depth(&out, &render_depth(&grid, &pose, &cam)?)?;
            Ok(())
        }
        Command::Sdf { depth, out } => {
            let image = io::read_depth(&depth).with_context(|| format!("reading {}", depth.display()))?;
            let sdf = silhouette_sdf(&image)?;
            let values: Vec<f32> = sdf.values().iter().map(|&v| v as f32).collect();
            io::write_float_grid(&out, sdf.width(), sdf.height(), &values)?;
            Ok(())
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::from).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(Error::from)
        .with_context(|| format!("parsing {}", path.display()))
}

fn load_camera(path: Option<&Path>) -> Result<CameraIntrinsics> {
    let cam = match path {
        Some(p) => read_json(p)?,
        None => CameraIntrinsics::default(),
    };
    cam.validate()?;
    Ok(cam)
}

/// The dataset config written next to the splits, if any.
fn dataset_config(data: &Path) -> Result<Option<DatasetConfig>> {
    let path = data.join("config.json");
    if path.exists() {
        Ok(Some(read_json(&path)?))
    } else {
        Ok(None)
    }
}

/// Split directory and camera for a dataset root or a bare split directory.
fn open_split(data: &Path, split: SplitKind) -> Result<(PathBuf, CameraIntrinsics)> {
    match dataset_config(data)? {
        Some(cfg) => Ok((dataset::split_dir(data, split), cfg.camera)),
        None => Ok((data.to_path_buf(), CameraIntrinsics::default())),
    }
}

fn gen_data(config: Option<&Path>, out: &Path, seed: u64) -> Result<()> {
    let cfg = match config {
        Some(p) => read_json(p)?,
        None => DatasetConfig::default(),
    };
    let generated = dataset::gen_dataset(&cfg, out, seed).with_context(|| format!("writing {}", out.display()))?;
    eprintln!(
        "wrote {} training and {} test views, subspace dimension {}",
        generated.train.len(),
        generated.test.len(),
        generated.subspace.retained_dim()
    );
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainFileConfig {
    input_side: Option<usize>,
    hidden_sizes: Option<Vec<usize>>,
    components: Option<usize>,
    lambda_pose: Option<f64>,
    lambda_shape: Option<f64>,
    lambda_class: Option<f64>,
    elu_alpha: Option<f64>,
    var_epsilon: Option<f64>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
}

fn training_samples(
    views: &[LabeledView],
    category_ids: &[u32],
    cfg: &NetworkConfig,
) -> Result<Vec<TrainingSample>> {
    views
        .iter()
        .map(|v| {
            let category = category_ids
                .iter()
                .position(|&c| c == v.record.category)
                .ok_or_else(|| Error::Invalid(format!("category {} not in the subspace", v.record.category)))?;
            Ok(TrainingSample {
                input: preprocess(&v.depth, cfg.input_side, cfg.object_distance)?,
                target: Target {
                    pose: RotVec(v.record.pose),
                    shape_coeffs: Coefficients(v.record.shape_coeffs.clone()),
                    category,
                },
            })
        })
        .collect()
}

fn train(data: &Path, out: &Path, mode: HeadMode, epochs: usize, seed: u64, config: Option<&Path>) -> Result<()> {
    let subspace = io::load_subspace(&data.join(dataset::SUBSPACE_DIR))
        .with_context(|| format!("loading the subspace of {}", data.display()))?;
    let (split, cam) = open_split(data, SplitKind::Train)?;
    let views = dataset::load_split(&split).with_context(|| format!("loading {}", split.display()))?;

    let overrides: TrainFileConfig = match config {
        Some(p) => read_json(p)?,
        None => TrainFileConfig::default(),
    };
    let mut cfg = NetworkConfig::new(subspace.retained_dim(), subspace.category_ids().len());
    cfg.mode = mode;
    cfg.object_distance = cam.object_distance;
    if let Some(v) = overrides.input_side {
        cfg.input_side = v;
    }
    if let Some(v) = overrides.hidden_sizes {
        cfg.hidden_sizes = v;
    }
    if let Some(v) = overrides.components {
        cfg.components = v;
    }
    if let Some(v) = overrides.lambda_pose {
        cfg.lambda_pose = v;
    }
    if let Some(v) = overrides.lambda_shape {
        cfg.lambda_shape = v;
    }
    if let Some(v) = overrides.lambda_class {
        cfg.lambda_class = v;
    }
    if let Some(v) = overrides.elu_alpha {
        cfg.elu_alpha = v;
    }
    if let Some(v) = overrides.var_epsilon {
        cfg.var_epsilon = v;
    }
    let mut opts = TrainOptions { epochs, ..TrainOptions::default() };
    if let Some(v) = overrides.batch_size {
        opts.batch_size = v;
    }
    if let Some(v) = overrides.learning_rate {
        opts.learning_rate = v;
    }

    let samples = training_samples(&views, subspace.category_ids(), &cfg)?;
    let model = train_with_progress(&samples, &cfg, &opts, seed, |epoch, loss| {
        eprintln!("epoch {epoch:>3}  loss {loss:.4}");
    })?;
    io::save_model(out, &model).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

struct EstimateArgs {
    model: PathBuf,
    subspace: PathBuf,
    depth: PathBuf,
    method: Method,
    n: usize,
    time_budget: Option<f64>,
    true_pose: Option<String>,
    camera: Option<PathBuf>,
    seed: u64,
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    let model = io::load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let subspace = io::load_subspace(&args.subspace).with_context(|| format!("loading {}", args.subspace.display()))?;
    let depth = io::read_depth(&args.depth).with_context(|| format!("reading {}", args.depth.display()))?;
    let cam = load_camera(args.camera.as_deref())?;
    let prediction = forward(&model.weights, &depth, &model.config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let budget = match args.time_budget {
        Some(t) if t.is_finite() && t >= 0.0 => Some(Duration::from_secs_f64(t)),
        Some(t) => return Err(Error::Invalid(format!("time budget must be non-negative, got {t}")).into()),
        None => None,
    };
    if budget.is_some() && !matches!(args.method, Method::Mle | Method::Map) {
        return Err(Error::Invalid("--time-budget applies to mle and map only".into()).into());
    }
    let mixture = || {
        prediction
            .mixture()
            .ok_or_else(|| Error::Invalid(format!("method '{}' needs an mdn model", args.method.name())))
    };
    let scorer = || SilhouetteScorer::new(&prediction.shape_coeffs, &depth, &cam, &subspace, PriorConfig::default());

    let result: EstimateResult = match args.method {
        Method::Point => match &prediction.pose {
            posterior_pose::mdn::PosePrediction::Point(r) => EstimateResult {
                pose: *r,
                score: 0.0,
                n_evaluated: 1,
                elapsed: 0.0,
                fell_back: false,
            },
            _ => bail!(Error::Invalid("method 'point' needs a point model".into())),
        },
        Method::Mle => match budget {
            Some(b) => estimate_mle_timed(mixture()?, b, Some(args.n), &mut rng)?,
            None => estimate_mle(mixture()?, args.n, &mut rng)?,
        },
        Method::Map => match budget {
            Some(b) => estimate_map_timed(mixture()?, &scorer()?, b, Some(args.n), &mut rng)?,
            None => estimate_map_with(mixture()?, &scorer()?, args.n, &mut rng)?,
        },
        Method::RandomOracle => {
            let truth = args
                .true_pose
                .as_deref()
                .ok_or_else(|| Error::Invalid("random-oracle needs --true-pose".into()))?;
            baseline_random_oracle(&RotVec::parse(truth)?, args.n, &mut rng)?
        }
        Method::RandomSdf => baseline_random_sdf_with(&scorer()?, args.n, &mut rng)?,
    };
    if result.fell_back {
        eprintln!("warning: no candidate rendered a silhouette; returned the density-only choice");
    }
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    model: &Path,
    point_model: Option<&Path>,
    subspace: &Path,
    data: &Path,
    methods: Vec<Method>,
    n: Vec<usize>,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let first = io::load_model(model).with_context(|| format!("loading {}", model.display()))?;
    let second = point_model
        .map(|p| io::load_model(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let (mut mdn, mut point) = (None, None);
    for m in std::iter::once(&first).chain(second.as_ref()) {
        match m.config.mode {
            HeadMode::Mdn => mdn = Some(m),
            HeadMode::Point => point = Some(m),
        }
    }
    let subspace = io::load_subspace(subspace).with_context(|| format!("loading {}", subspace.display()))?;
    let (split, camera) = open_split(data, SplitKind::Test)?;
    let items: Vec<EvalItem> = dataset::load_split(&split)
        .with_context(|| format!("loading {}", split.display()))?
        .into_iter()
        .map(|v| EvalItem {
            depth: v.depth,
            pose: RotVec(v.record.pose),
            category: v.record.category,
        })
        .collect();

    let cfg = EvalConfig {
        methods: methods.clone(),
        sample_counts: n,
        seed,
        camera,
        prior: PriorConfig::default(),
    };
    let report = evaluate(&items, &Models { mdn, point, subspace: &subspace }, &cfg)?;
    fs::write(out, metrics_csv(&report.rows)).with_context(|| format!("writing {}", out.display()))?;
    let names: Vec<String> = methods.iter().map(|m| m.name().to_string()).collect();
    let csv_name = out.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    fs::write(out.with_extension("gp"), gnuplot_script(&csv_name, &names))?;
    for row in &report.rows {
        eprintln!(
            "{:<14} n={:<4} mean {:7.2} deg  +-{:5.2}  gross {:.3}",
            row.method, row.n_samples, row.metrics.mean_error_deg, row.metrics.ci95_deg, row.metrics.gross_rate
        );
    }
    Ok(())
}
