//! Diagonal-covariance Gaussian mixtures over the 3-vector pose space and
//! the network head that produces them.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POSE_DIM: usize = 3;

/// Raw head width for `c` components: `c` logits, `3c` means, `3c` variances.
pub const fn mixture_head_len(c: usize) -> usize {
    c * (2 * POSE_DIM + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: [f64; POSE_DIM],
    /// Diagonal of the covariance.
    pub var: [f64; POSE_DIM],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    components: Vec<GmmComponent>,
}

impl GmmParams {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Empty("mixture components"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mixture weights sum to {total}")));
        }
        for c in &components {
            if !(c.weight >= 0.0) || c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::invalid("mixture weight or mean out of range"));
            }
            if c.var.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::invalid("mixture variances must be positive"));
            }
        }
        Ok(Self { components })
    }

    pub fn single(mean: [f64; POSE_DIM], var: [f64; POSE_DIM]) -> Result<Self> {
        Self::new(vec![GmmComponent {
            weight: 1.0,
            mean,
            var,
        }])
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Translated ELU keeping variances strictly positive and continuous at 0:
/// `z + α + ε` for `z > 0`, `α·exp(z) + ε` otherwise.
#[inline]
pub fn variance_activation(z: f64, alpha: f64, eps: f64) -> f64 {
    if z > 0.0 {
        z + alpha + eps
    } else {
        alpha * z.exp() + eps
    }
}

#[inline]
pub(crate) fn variance_activation_grad(z: f64, alpha: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        alpha * z.exp()
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Maps raw head pre-activations to mixture parameters: softmax weights,
/// identity means, translated-ELU variances.
pub fn head_transform(raw: &[f64], c: usize, alpha: f64, eps: f64) -> Result<GmmParams> {
    Error::check_len(mixture_head_len(c), raw.len())?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("non-finite mixture head input".into()));
    }
    let logits = &raw[..c];
    let lse = log_sum_exp(logits);
    let components = (0..c)
        .map(|i| {
            let m = &raw[c + POSE_DIM * i..c + POSE_DIM * (i + 1)];
            let s = &raw[4 * c + POSE_DIM * i..4 * c + POSE_DIM * (i + 1)];
            GmmComponent {
                weight: (logits[i] - lse).exp(),
                mean: [m[0], m[1], m[2]],
                var: [
                    variance_activation(s[0], alpha, eps),
                    variance_activation(s[1], alpha, eps),
                    variance_activation(s[2], alpha, eps),
                ],
            }
        })
        .collect();
    // Softmax output sums to one up to rounding; renormalize to keep the
    // invariant tight for any finite input.
    let mut params = GmmParams { components };
    let total: f64 = params.components.iter().map(|c| c.weight).sum();
    for comp in &mut params.components {
        comp.weight /= total;
    }
    Ok(params)
}

/// `ln N(y | μ, diag(var))`.
#[inline]
pub(crate) fn log_normal_diag(y: &[f64; POSE_DIM], mean: &[f64; POSE_DIM], var: &[f64; POSE_DIM]) -> f64 {
    let mut acc = POSE_DIM as f64 * (2.0 * PI).ln();
    for j in 0..POSE_DIM {
        let d = y[j] - mean[j];
        acc += var[j].ln() + d * d / var[j];
    }
    -0.5 * acc
}

/// Mixture density evaluated directly as `Σ πᵢ N(y | μᵢ, Σᵢ)`.
pub fn gmm_pdf(y: &[f64; POSE_DIM], theta: &GmmParams) -> f64 {
    theta
        .components
        .iter()
        .map(|c| {
            let det: f64 = c.var.iter().product();
            let mut maha = 0.0;
            for j in 0..POSE_DIM {
                let d = y[j] - c.mean[j];
                maha += d * d / c.var[j];
            }
            c.weight * (-0.5 * maha).exp() / ((2.0 * PI).powi(POSE_DIM as i32) * det).sqrt()
        })
        .sum()
}

/// `ln p(y | θ)` via log-sum-exp.
pub fn gmm_log_pdf(y: &[f64; POSE_DIM], theta: &GmmParams) -> f64 {
    let terms: Vec<f64> = theta
        .components
        .iter()
        .map(|c| c.weight.ln() + log_normal_diag(y, &c.mean, &c.var))
        .collect();
    log_sum_exp(&terms)
}

/// Negative log mixture likelihood of the true pose.
pub fn pose_loss(y: &[f64; POSE_DIM], theta: &GmmParams) -> f64 {
    -gmm_log_pdf(y, theta)
}

/// Ancestral sample: a component by weight, then its Gaussian.
pub fn gmm_sample<R: Rng + ?Sized>(theta: &GmmParams, rng: &mut R) -> [f64; POSE_DIM] {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = theta.components.len() - 1;
    for (i, c) in theta.components.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            chosen = i;
            break;
        }
    }
    let c = &theta.components[chosen];
    let mut out = [0.0; POSE_DIM];
    for j in 0..POSE_DIM {
        let n: f64 = StandardNormal.sample(rng);
        out[j] = c.mean[j] + c.var[j].sqrt() * n;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gmm(rng: &mut ChaCha8Rng, c: usize) -> GmmParams {
        let raw: Vec<f64> = (0..mixture_head_len(c)).map(|_| rng.random_range(-1.5..1.5)).collect();
        head_transform(&raw, c, 1.0, 1e-6).unwrap()
    }

    #[test]
    fn uniform_logits_give_uniform_weights() {
        let raw = vec![0.0; mixture_head_len(5)];
        let g = head_transform(&raw, 5, 1.0, 1e-6).unwrap();
        for c in g.components() {
            assert!((c.weight - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn variance_branches_meet_at_zero() {
        let alpha = 1.0;
        let eps = 1e-6;
        let left = alpha * 0f64.exp() + eps;
        let right_limit = 0.0 + alpha + eps;
        assert_eq!(variance_activation(0.0, alpha, eps), left);
        assert!((variance_activation(1e-12, alpha, eps) - right_limit).abs() < 1e-11);
        assert!((left - (1.0 + 1e-6)).abs() < 1e-15);
        let floor = variance_activation(-20.0, alpha, eps);
        assert!(floor > eps && floor - eps < 3e-9);
    }

    #[test]
    fn standard_normal_density_at_mean() {
        let g = GmmParams::single([0.0; 3], [1.0; 3]).unwrap();
        let p = gmm_pdf(&[0.0; 3], &g);
        assert!((p - (2.0 * PI).powf(-1.5)).abs() < 1e-15);
        assert!((p - 0.063494).abs() < 1e-6);
        assert!((pose_loss(&[0.0; 3], &g) - 1.5 * (2.0 * PI).ln()).abs() < 1e-12);
        assert!((pose_loss(&[0.0; 3], &g) - 2.7568).abs() < 1e-4);
    }

    #[test]
    fn duplicate_components_collapse() {
        let c = GmmComponent { weight: 0.5, mean: [0.3, -0.1, 1.0], var: [0.2, 0.5, 1.3] };
        let two = GmmParams::new(vec![c.clone(), c.clone()]).unwrap();
        let one = GmmParams::single(c.mean, c.var).unwrap();
        let y = [0.1, 0.2, 0.3];
        assert!((gmm_pdf(&y, &two) - gmm_pdf(&y, &one)).abs() < 1e-15);
    }

    #[test]
    fn density_integrates_to_one_on_box_grid() {
        // Midpoint-rule quadrature over a ±6σ box enclosing every component.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3 {
            let g = random_gmm(&mut rng, 3);
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for c in g.components() {
                for j in 0..3 {
                    let s = 6.0 * c.var[j].sqrt();
                    lo[j] = lo[j].min(c.mean[j] - s);
                    hi[j] = hi[j].max(c.mean[j] + s);
                }
            }
            let n = 120;
            let h: Vec<f64> = (0..3).map(|j| (hi[j] - lo[j]) / n as f64).collect();
            let mut total = 0.0;
            for i in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let y = [
                            lo[0] + (i as f64 + 0.5) * h[0],
                            lo[1] + (k as f64 + 0.5) * h[1],
                            lo[2] + (l as f64 + 0.5) * h[2],
                        ];
                        total += gmm_pdf(&y, &g);
                    }
                }
            }
            total *= h[0] * h[1] * h[2];
            assert!((total - 1.0).abs() < 1e-3, "{total}");
        }
    }

    #[test]
    fn loss_decreases_as_mean_approaches_target() {
        let y = [0.5, -0.2, 0.1];
        let mut last = f64::INFINITY;
        for step in (0..=10).rev() {
            let t = step as f64 / 10.0;
            let g = GmmParams::single([y[0] + t, y[1] - t, y[2] + 2.0 * t], [0.3; 3]).unwrap();
            let l = pose_loss(&y, &g);
            assert!(l < last || step == 10);
            last = l;
        }
    }

    #[test]
    fn extreme_inputs_stay_finite() {
        let c = 5;
        let mut raw = vec![0.0; mixture_head_len(c)];
        for (i, v) in raw.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 50.0 } else { -50.0 };
        }
        let g = head_transform(&raw, c, 1.0, 1e-6).unwrap();
        for y in [[0.0; 3], [50.0, -50.0, 50.0], [-50.0; 3]] {
            assert!(pose_loss(&y, &g).is_finite());
        }
    }

    #[test]
    fn degenerate_component_samples_its_mean() {
        let g = GmmParams::single([0.2, -1.0, 0.7], [1e-14; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let s = gmm_sample(&g, &mut rng);
            for j in 0..3 {
                assert!((s[j] - g.components()[0].mean[j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn component_frequencies_follow_weights() {
        let g = GmmParams::new(vec![
            GmmComponent { weight: 0.9, mean: [-10.0, 0.0, 0.0], var: [1.0; 3] },
            GmmComponent { weight: 0.1, mean: [10.0, 0.0, 0.0], var: [1.0; 3] },
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let first = (0..n).filter(|_| gmm_sample(&g, &mut rng)[0] < 0.0).count();
        // Binomial standard error is 0.00095; 0.01 is ~10 SE.
        assert!((first as f64 / n as f64 - 0.9).abs() < 0.01);
    }

    #[test]
    fn sample_variance_matches_parameters() {
        let var = [0.25, 1.0, 4.0];
        let g = GmmParams::single([1.0, 2.0, 3.0], var).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let samples: Vec<[f64; 3]> = (0..n).map(|_| gmm_sample(&g, &mut rng)).collect();
        for j in 0..3 {
            let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n as f64;
            let v = samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            // SE of the sample variance for a normal: σ²·sqrt(2/(n−1)).
            let se = var[j] * (2.0 / (n - 1) as f64).sqrt();
            assert!((v - var[j]).abs() < 3.0 * se, "dim {j}: {v} vs {}", var[j]);
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(GmmParams::new(vec![]).is_err());
        assert!(GmmParams::single([0.0; 3], [0.0, 1.0, 1.0]).is_err());
        let c = GmmComponent { weight: 0.7, mean: [0.0; 3], var: [1.0; 3] };
        assert!(GmmParams::new(vec![c]).is_err());
        assert!(head_transform(&[0.0; 7], 2, 1.0, 1e-6).is_err());
    }

    proptest! {
        #[test]
        fn head_output_is_valid(raw in prop::collection::vec(-60.0f64..60.0, 35)) {
            let g = head_transform(&raw, 5, 1.0, 1e-6).unwrap();
            let total: f64 = g.components().iter().map(|c| c.weight).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for c in g.components() {
                prop_assert!(c.var.iter().all(|&v| v >= 1e-6));
            }
        }

        #[test]
        fn log_path_matches_direct_path(
            raw in prop::collection::vec(-2.0f64..2.0, 35),
            y in prop::array::uniform3(-3.0f64..3.0),
        ) {
            let g = head_transform(&raw, 5, 1.0, 1e-6).unwrap();
            let direct = -gmm_pdf(&y, &g).ln();
            prop_assert!((pose_loss(&y, &g) - direct).abs() < 1e-9);
            prop_assert!(gmm_pdf(&y, &g) >= 0.0);
        }
    }
}
