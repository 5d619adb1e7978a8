use posterior_pose::geometry::MASKED;
use posterior_pose::sdfprior::*;
use posterior_pose::DepthImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All-pairs scan. Positions one step outside the image are background.
fn brute_sdf(w: usize, h: usize, mask: &[bool]) -> Vec<f64> {
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            let inside = mask[(r as usize) * w + c as usize];
            let mut best = i64::MAX;
            for rr in -1..=h as i64 {
                for cc in -1..=w as i64 {
                    let in_image = rr >= 0 && rr < h as i64 && cc >= 0 && cc < w as i64;
                    let other = if in_image { mask[rr as usize * w + cc as usize] } else { false };
                    if other != inside {
                        best = best.min((rr - r).pow(2) + (cc - c).pow(2));
                    }
                }
            }
            let d = (best as f64).sqrt();
            out.push(if inside { -d } else { d });
        }
    }
    out
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<bool> {
    let density: f64 = rng.random_range(0.02..0.98);
    loop {
        let m: Vec<bool> = (0..w * h).map(|_| rng.random::<f64>() < density).collect();
        if m.iter().any(|&b| b) {
            return m;
        }
    }
}

fn to_image(w: usize, h: usize, mask: &[bool], rng: &mut ChaCha8Rng) -> DepthImage {
    let depth = mask
        .iter()
        .map(|&m| if m { rng.random_range(1.6f32..3.4) } else { MASKED })
        .collect();
    DepthImage::new(w, h, depth).unwrap()
}

#[test]
fn matches_brute_force_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let mask = random_mask(&mut rng, 16, 16);
        let sdf = silhouette_sdf(&to_image(16, 16, &mask, &mut rng)).unwrap();
        assert_eq!(sdf.values(), brute_sdf(16, 16, &mask).as_slice());
        for (v, &m) in sdf.values().iter().zip(&mask) {
            assert_eq!(*v < 0.0, m);
        }
    }
    // Non-square shapes and single-pixel silhouettes.
    for (w, h) in [(1, 7), (9, 2), (13, 5)] {
        let mask = random_mask(&mut rng, w, h);
        let sdf = silhouette_sdf_from_mask(w, h, &mask).unwrap();
        assert_eq!(sdf.values(), brute_sdf(w, h, &mask).as_slice());
    }
    let mut single = vec![false; 64];
    single[27] = true;
    assert_eq!(silhouette_sdf_from_mask(8, 8, &single).unwrap().values(), brute_sdf(8, 8, &single).as_slice());
}

#[test]
fn depth_error_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..30 {
        let (w, h) = (rng.random_range(3..20), rng.random_range(3..20));
        let ma = random_mask(&mut rng, w, h);
        let mb = random_mask(&mut rng, w, h);
        let (a, b) = (to_image(w, h, &ma, &mut rng), to_image(w, h, &mb, &mut rng));
        let (fa, fb) = (brute_sdf(w, h, &ma), brute_sdf(w, h, &mb));
        let mut sum = 0.0;
        for i in 0..w * h {
            sum += (fa[i] - fb[i]).powi(2);
        }
        let want = (sum / (w * h) as f64).sqrt();
        let got = depth_error(&a, &b).unwrap();
        assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        assert_eq!(got, depth_error(&b, &a).unwrap());
        assert_eq!(depth_error(&a, &a).unwrap(), 0.0);

        let raw = PriorConfig { normalize: false, ..PriorConfig::default() };
        assert!((depth_error_with(&a, &b, &raw).unwrap() - sum.sqrt()).abs() <= 1e-9);

        // Only the mask matters.
        let a2 = to_image(w, h, &ma, &mut rng);
        assert_eq!(depth_error(&a2, &b).unwrap(), got);
    }
}

#[test]
fn one_by_three_error() {
    let img = |m: [bool; 3]| {
        DepthImage::new(3, 1, m.iter().map(|&o| if o { 2.0 } else { MASKED }).collect()).unwrap()
    };
    let e = depth_error(&img([false, true, false]), &img([true, false, false])).unwrap();
    // Fields [1,-1,1] and [-1,1,2].
    assert!((e - 3.0f64.sqrt()).abs() < 1e-12, "{e}");
}

#[test]
fn prior_is_strictly_decreasing() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10_000 {
        let a: f64 = rng.random_range(0.0..10.0);
        let b: f64 = rng.random_range(0.0..10.0);
        if a == b {
            continue;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (pl, ph) = (prior_density(lo).unwrap(), prior_density(hi).unwrap());
        assert!(pl > ph, "{lo} {hi}");
        assert!(pl <= 1e6);
    }
}
