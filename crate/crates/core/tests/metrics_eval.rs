use posterior_pose::dataset::{generate_object, Family};
use posterior_pose::eval::{evaluate, EvalConfig, EvalItem, Method, Models};
use posterior_pose::geometry::{angular_error, render_depth, sample_pose, PoseMode, ViewAngles};
use posterior_pose::metrics::{compute_metrics, metrics_csv, CSV_HEADER, GROSS_ERROR_DEG};
use posterior_pose::shapespace::{learn_class_subspace, merge_subspaces, Retained};
use posterior_pose::{CameraIntrinsics, PriorConfig, RotVec, SubspaceModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn about_y(deg: f64) -> RotVec {
    RotVec::new(0.0, deg.to_radians(), 0.0)
}

#[test]
fn exact_predictions_score_perfectly() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth: Vec<RotVec> = (0..50).map(|_| sample_pose(PoseMode::TrainingView, &mut rng)).collect();
    let m = compute_metrics(&truth, &truth).unwrap();
    assert!(m.mean_error_deg < 1e-6);
    assert_eq!(m.gross_rate, 0.0);
    assert!(m.azimuth_accuracy.iter().chain(&m.elevation_accuracy).all(|&a| a == 1.0));
}

#[test]
fn ten_and_twenty_degrees() {
    let truth = [RotVec::IDENTITY, RotVec::IDENTITY];
    let preds = [about_y(10.0), about_y(20.0)];
    let m = compute_metrics(&preds, &truth).unwrap();
    assert!((m.mean_error_deg - 15.0).abs() < 1e-9);
    assert_eq!(m.gross_rate, 0.5);
    // Sample sd of {10, 20} is √50.
    assert!((m.ci95_deg - 1.96 * 50f64.sqrt() / 2f64.sqrt()).abs() < 1e-9);
}

#[test]
fn metrics_match_a_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let truth: Vec<RotVec> = (0..200).map(|_| sample_pose(PoseMode::Uniform, &mut rng)).collect();
    let preds: Vec<RotVec> = (0..200).map(|_| sample_pose(PoseMode::Uniform, &mut rng)).collect();
    let m = compute_metrics(&preds, &truth).unwrap();

    let errs: Vec<f64> = preds.iter().zip(&truth).map(|(p, t)| angular_error(p, t)).collect();
    let mean = errs.iter().sum::<f64>() / 200.0;
    let gross = errs.iter().filter(|&&e| e > GROSS_ERROR_DEG).count() as f64 / 200.0;
    assert!((m.mean_error_deg - mean).abs() < 1e-9);
    assert!((m.gross_rate - gross).abs() < 1e-12);

    // Bin membership via an independent half-open interval test.
    let same_bin = |a: f64, b: f64, lo: f64, width: f64, bins: usize| {
        let idx = |x: f64| {
            let k = ((x - lo) / width).floor() as i64;
            k.rem_euclid(bins as i64)
        };
        idx(a) == idx(b)
    };
    let hits = preds
        .iter()
        .zip(&truth)
        .filter(|(p, t)| {
            let (p, t) = (ViewAngles::from_rotvec(p), ViewAngles::from_rotvec(t));
            same_bin(p.azimuth, t.azimuth, -std::f64::consts::PI, std::f64::consts::PI / 4.0, 8)
        })
        .count();
    assert!((m.azimuth_accuracy[1] - hits as f64 / 200.0).abs() < 1e-12);
    assert!(m.azimuth_accuracy.iter().chain(&m.elevation_accuracy).all(|a| (0.0..=1.0).contains(a)));
}

#[test]
fn csv_has_the_fixed_header_and_one_row_per_cell() {
    let truth = [RotVec::IDENTITY, RotVec::IDENTITY];
    let row = posterior_pose::metrics::MetricsRow {
        method: "mle".into(),
        n_samples: 25,
        metrics: compute_metrics(&[about_y(10.0), about_y(20.0)], &truth).unwrap(),
        runtime_s: 0.5,
    };
    let csv = metrics_csv(&[row.clone(), row]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,n_samples,mean_err_deg,ci95_deg,gross_rate,runtime_s,azb4,azb8,azb12,azb24,elb4,elb6,elb12");
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("mle,25,15,"));
    assert_eq!(lines[1].split(',').count(), 13);
}

fn eval_items(n: usize) -> Vec<EvalItem> {
    let ranges = Family::Boxcar.default_ranges();
    let cam = CameraIntrinsics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let grid = generate_object(Family::Boxcar, 16, &ranges, &mut rng);
    (0..n)
        .map(|_| {
            let pose = sample_pose(PoseMode::TrainingView, &mut rng);
            EvalItem { depth: render_depth(&grid, &pose, &cam).unwrap(), pose, category: 0 }
        })
        .collect()
}

fn subspace() -> SubspaceModel {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ranges = Family::Boxcar.default_ranges();
    let shapes: Vec<_> = (0..4)
        .map(|_| generate_object(Family::Boxcar, 16, &ranges, &mut rng).to_shape_vector())
        .collect();
    merge_subspaces(&[learn_class_subspace(&shapes, Retained::Dim(2), 0).unwrap()]).unwrap()
}

fn oracle_config(seed: u64) -> EvalConfig {
    EvalConfig {
        methods: vec![Method::RandomOracle],
        sample_counts: vec![5, 25, 100],
        seed,
        camera: CameraIntrinsics::default(),
        prior: PriorConfig::default(),
    }
}

#[test]
fn oracle_candidates_are_nested_across_budgets() {
    let items = eval_items(12);
    let sub = subspace();
    let models = Models { mdn: None, point: None, subspace: &sub };
    let report = evaluate(&items, &models, &oracle_config(5)).unwrap();
    assert_eq!(report.rows.len(), 3);

    let errors = |n: usize| -> Vec<f64> {
        let run = report.run(Method::RandomOracle, n).unwrap();
        run.poses.iter().zip(&items).map(|(p, it)| angular_error(p, &it.pose)).collect()
    };
    let (e5, e25, e100) = (errors(5), errors(25), errors(100));
    for i in 0..items.len() {
        assert!(e25[i] <= e5[i] && e100[i] <= e25[i], "view {i}");
    }

    let again = evaluate(&items, &models, &oracle_config(5)).unwrap();
    assert_eq!(report.runs.iter().map(|r| &r.poses).collect::<Vec<_>>(), again.runs.iter().map(|r| &r.poses).collect::<Vec<_>>());
    let other = evaluate(&items, &models, &oracle_config(6)).unwrap();
    assert_ne!(report.runs[2].poses, other.runs[2].poses);
}

#[test]
fn learned_methods_require_their_models() {
    let items = eval_items(2);
    let sub = subspace();
    let models = Models { mdn: None, point: None, subspace: &sub };
    for m in [Method::Mle, Method::Map, Method::Point, Method::RandomSdf] {
        let cfg = EvalConfig { methods: vec![m], ..oracle_config(1) };
        let err = evaluate(&items, &models, &cfg).unwrap_err();
        assert!(err.is_validation(), "{m:?}: {err}");
    }
    let cfg = EvalConfig { sample_counts: vec![0], ..oracle_config(1) };
    assert!(evaluate(&items, &models, &cfg).is_err());
    assert!(evaluate(&[], &models, &oracle_config(1)).is_err());
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert!("nearest".parse::<Method>().is_err());
}
