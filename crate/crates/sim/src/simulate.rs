//! Ground truth and measurement generation.

use drkf_core::channel::derive_seed;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{SimError, SimResult};
use crate::scenario::{fading_interval, Dist, Scenario};

const TRUTH_STREAM: u64 = 1;
const MEASUREMENT_STREAM: u64 = 2;
const CHANNEL_STREAM: u64 = 3;

/// Seed of run `run` under a master seed.
pub fn run_seed(master: u64, run: usize) -> u64 {
    derive_seed(&[master, run as u64])
}

pub fn channel_seed(run_seed: u64) -> u64 {
    derive_seed(&[run_seed, CHANNEL_STREAM])
}

/// Symmetric square root of a PSD matrix.
pub fn cov_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Unit-variance zero-mean scalar draw.
fn unit<R: Rng>(rng: &mut R, dist: Dist) -> f64 {
    match dist {
        Dist::Normal => rng.sample(StandardNormal),
        Dist::Uniform => rng.random_range(-3f64.sqrt()..=3f64.sqrt()),
        Dist::Zero => 0.0,
    }
}

/// Zero-mean draw with covariance exactly `cov`.
pub fn draw_vector<R: Rng>(rng: &mut R, dist: Dist, cov: &DMatrix<f64>) -> DVector<f64> {
    let n = cov.nrows();
    if dist == Dist::Zero {
        return DVector::zeros(n);
    }
    let z = DVector::from_fn(n, |_, _| unit(rng, dist));
    cov_sqrt(cov) * z
}

/// `x_0 … x_K` of `x_{k+1} = (A_k + F_k ε_k) x_k + w_k`.
pub fn simulate_truth(scenario: &Scenario, run_seed: u64) -> SimResult<Vec<DVector<f64>>> {
    let model = &scenario.setup.model;
    let bounds = &scenario.setup.bounds;
    let noise = &scenario.noise;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[run_seed, TRUTH_STREAM]));
    let mut x = &noise.x0_mean + draw_vector(&mut rng, noise.x0, &noise.x0_cov);
    let mut out = Vec::with_capacity(scenario.horizon() + 1);
    out.push(x.clone());
    for k in 0..scenario.horizon() {
        let eps = bounds.mu.at(k).max(0.0).sqrt() * unit(&mut rng, noise.multiplicative);
        let w = draw_vector(&mut rng, noise.process, &bounds.q.at(k));
        x = (&*model.a(k) + eps * &*model.f(k)) * x + w;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SimError::Divergence { k: k + 1 });
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// `y_{k,i} = γ_{k,i} C_{k,i} x_k + v_{k,i}`, indexed `[k][i]`. Entry `k = 0`
/// is generated too but no filter consumes it.
pub fn simulate_measurements(
    truth: &[DVector<f64>],
    scenario: &Scenario,
    run_seed: u64,
) -> SimResult<Vec<Vec<DVector<f64>>>> {
    let model = &scenario.setup.model;
    let noise = &scenario.noise;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[run_seed, MEASUREMENT_STREAM]));
    truth
        .iter()
        .enumerate()
        .map(|(k, x)| {
            model
                .sensors()
                .iter()
                .map(|s| {
                    let (tau, phi) = (s.tau.at(k), s.phi.at(k));
                    let (lo, hi) = fading_interval(tau, phi);
                    if lo < 0.0 || hi > 1.0 {
                        return Err(SimError::Invalid(format!(
                            "fading interval [{lo}, {hi}] of sensor {} leaves [0, 1]",
                            s.id + 1
                        )));
                    }
                    let gamma = if noise.fading_uniform && hi > lo {
                        rng.random_range(lo..=hi)
                    } else {
                        tau
                    };
                    let v = draw_vector(&mut rng, noise.measurement, &s.r.at(k));
                    Ok(gamma * (&*s.c.at(k) * x) + v)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{example1, ChannelMode};
    use drkf_core::linalg::mat;

    #[test]
    fn cov_sqrt_squares_back() {
        let m = mat(&[&[2.0, 0.3], &[0.3, 0.5]]);
        let s = cov_sqrt(&m);
        assert!((&s * &s - &m).abs().max() < 1e-14);
        let singular = mat(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let s = cov_sqrt(&singular);
        assert!((&s * &s - &singular).abs().max() < 1e-14);
    }

    fn quiet_scenario() -> Scenario {
        let mut s = example1(1).unwrap();
        s.noise.x0 = Dist::Zero;
        s.noise.process = Dist::Zero;
        s.noise.multiplicative = Dist::Zero;
        s.noise.measurement = Dist::Zero;
        s.noise.fading_uniform = false;
        s.noise.x0_mean = DVector::from_vec(vec![1.0, -2.0]);
        s.channel_mode = ChannelMode::Noiseless;
        s
    }

    #[test]
    fn noiseless_truth_follows_nominal_dynamics() {
        let s = quiet_scenario();
        let truth = simulate_truth(&s, 5).unwrap();
        assert_eq!(truth.len(), 101);
        let mut x = DVector::from_vec(vec![1.0, -2.0]);
        for (k, t) in truth.iter().enumerate() {
            assert!((t - &x).abs().max() < 1e-12);
            x = crate::scenario::example1_a(k) * x;
        }
        let y = simulate_measurements(&truth, &s, 5).unwrap();
        // sensor 2 sees 0.15 x₂ exactly
        assert!((y[3][1][0] - 0.15 * truth[3][1]).abs() < 1e-15);
    }

    #[test]
    fn runs_are_reproducible_and_distinct() {
        let s = example1(1).unwrap();
        let a = simulate_truth(&s, run_seed(7, 0)).unwrap();
        let b = simulate_truth(&s, run_seed(7, 0)).unwrap();
        let c = simulate_truth(&s, run_seed(7, 1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_moments_match_requested_covariance() {
        let cov = mat(&[&[0.07, 0.01], &[0.01, 0.2]]);
        for dist in [Dist::Normal, Dist::Uniform] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut acc = DMatrix::zeros(2, 2);
            let n = 200_000;
            for _ in 0..n {
                let v = draw_vector(&mut rng, dist, &cov);
                acc += &v * v.transpose();
            }
            acc /= n as f64;
            assert!((acc - &cov).abs().max() < 3e-3, "{dist:?}");
        }
    }

    #[test]
    fn fading_draws_stay_in_support() {
        let mut s = quiet_scenario();
        s.noise.fading_uniform = true;
        s.noise.x0_mean = DVector::from_vec(vec![0.0, 1.0]);
        s.setup.model = s.setup.model.with_horizon(0, &Default::default()).unwrap();
        for seed in 0..200 {
            let y = simulate_measurements(&[DVector::from_vec(vec![0.0, 1.0])], &s, seed).unwrap();
            let g = y[0][0][0];
            assert!((0.801..=0.899).contains(&g), "{g}");
        }
    }
}
