//! Checks of the observability and noise-structure hypotheses on a finite
//! horizon. Every verdict here is finite-horizon evidence only.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{NoiseBounds, SystemModel};
use crate::moment::{self, DEFAULT_PI_CAP};

/// Smallest eigenvalue treated as positive when judging a Gramian.
pub const ALPHA_MARGIN: f64 = 1e-12;

/// Default floor below which `μ_k` counts as zero.
pub const MU_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    pub nbar: usize,
    /// Window starts, aligned with the eigenvalue vectors.
    pub starts: Vec<usize>,
    /// Smallest eigenvalue of each window Gramian built with `R̃`.
    pub window_min_eig: Vec<f64>,
    /// Same with the moment-based `R̄ = R + φ C Π Cᵀ`.
    pub moment_window_min_eig: Vec<f64>,
    pub alpha_hat: f64,
    pub moment_alpha_hat: f64,
    pub pass: bool,
}

/// `ᾱ_j = ‖A_j‖² + μ_j ‖F_j‖²` and `q̄_j = ‖Q_j‖` for `j = 0..len`.
pub fn growth_constants(
    model: &SystemModel,
    bounds: &NoiseBounds,
    len: usize,
) -> (Vec<f64>, Vec<f64>) {
    (0..len)
        .map(|j| {
            let a = linalg::spectral_norm(&model.a(j));
            let f = linalg::spectral_norm(&model.f(j));
            (
                a * a + bounds.mu.at(j) * f * f,
                linalg::spectral_norm(&bounds.q.at(j)),
            )
        })
        .unzip()
}

/// `ϖ_0 … ϖ_last` from `ϖ_0 = ‖P₀‖`, `ϖ_{j+1} = ᾱ_j ϖ_j + q̄_j`.
pub fn varpi_sequence(model: &SystemModel, bounds: &NoiseBounds, last: usize) -> Vec<f64> {
    let (alpha, q) = growth_constants(model, bounds, last);
    let mut out = Vec::with_capacity(last + 1);
    out.push(linalg::spectral_norm(&bounds.p0));
    for j in 0..last {
        out.push(alpha[j] * out[j] + q[j]);
    }
    out
}

/// Unrolled form `ϖ_j = ‖P₀‖ Π_{i<j} ᾱ_i + Σ_{s<j} q̄_s Π_{s<i<j} ᾱ_i`.
pub fn varpi_closed_form(p0_norm: f64, alpha: &[f64], q: &[f64], j: usize) -> f64 {
    let tail = |from: usize| alpha[from..j].iter().product::<f64>();
    p0_norm * tail(0) + (0..j).map(|s| q[s] * tail(s + 1)).sum::<f64>()
}

fn window_gramian<F>(
    model: &SystemModel,
    start: usize,
    nbar: usize,
    noise: F,
) -> Result<DMatrix<f64>>
where
    F: Fn(usize, usize, &DMatrix<f64>) -> DMatrix<f64>,
{
    let n = model.n();
    let mut g = DMatrix::zeros(n, n);
    let mut phi = DMatrix::<f64>::identity(n, n);
    for j in start..=start + nbar {
        if j > start {
            phi = &*model.a(j - 1) * phi;
        }
        for (i, s) in model.sensors().iter().enumerate() {
            let c = s.c.at(j);
            let r = noise(j, i, &c);
            let cbar = s.tau.at(j) * &*c;
            let rinv = linalg::spd_inverse(&r).ok_or_else(|| Error::NotPositiveDefinite {
                what: format!("surrogate measurement noise of sensor {i} at k={j}"),
            })?;
            let h = &cbar * &phi;
            g += h.transpose() * rinv * h;
        }
    }
    Ok(linalg::symmetrized(g))
}

/// Minimum eigenvalue of the windowed information Gramian
/// `Σ_i Σ_{j=k}^{k+N̄} Φ_{j,k}ᵀ C̄ᵀ R⁻¹ C̄ Φ_{j,k}` over window starts in
/// `starts`, for both noise surrogates.
pub fn check_observability(
    model: &SystemModel,
    bounds: &NoiseBounds,
    nbar: usize,
    starts: Range<usize>,
) -> Result<ObservabilityReport> {
    let end = starts.end.saturating_sub(1) + nbar;
    if starts.is_empty() || end > model.horizon() {
        return Err(Error::InvalidParameter(format!(
            "windows {starts:?} with N̄={nbar} exceed horizon {}",
            model.horizon()
        )));
    }
    let varpi = varpi_sequence(model, bounds, end);
    let pi = moment::propagate_pi(model, bounds, end, DEFAULT_PI_CAP)?;
    let mut report = ObservabilityReport {
        nbar,
        starts: starts.clone().collect(),
        window_min_eig: Vec::new(),
        moment_window_min_eig: Vec::new(),
        alpha_hat: f64::INFINITY,
        moment_alpha_hat: f64::INFINITY,
        pass: false,
    };
    for k in starts {
        let g = window_gramian(model, k, nbar, |j, i, c| {
            let s = model.sensor(i);
            &*s.r.at(j) + varpi[j] * s.phi.at(j) * (c * c.transpose())
        })?;
        let gl = window_gramian(model, k, nbar, |j, i, c| {
            let s = model.sensor(i);
            &*s.r.at(j) + s.phi.at(j) * (c * pi.get(j) * c.transpose())
        })?;
        let (e, el) = (linalg::min_eigenvalue(&g), linalg::min_eigenvalue(&gl));
        report.alpha_hat = report.alpha_hat.min(e);
        report.moment_alpha_hat = report.moment_alpha_hat.min(el);
        report.window_min_eig.push(e);
        report.moment_window_min_eig.push(el);
    }
    report.pass = report.alpha_hat > ALPHA_MARGIN;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Times with `μ_k` above the floor.
    pub noise_times: Vec<usize>,
    pub rho: Vec<f64>,
    pub m: f64,
    pub varrho: f64,
    pub sup_term: f64,
    pub pass_a: bool,
    pub pass_exp: bool,
    pub pass_sup: bool,
    /// True when fewer than two noise times exist and the decay conditions
    /// hold by the small-`μ̄` substitution.
    pub vacuous: bool,
}

impl StructureReport {
    pub fn pass(&self) -> bool {
        self.pass_a && self.pass_exp && self.pass_sup
    }
}

/// Evaluates the bounds on `A_k A_kᵀ`, the decay products of `ρ_{k_t}` and
/// the accumulated process-noise term over `0..=horizon`.
pub fn check_structure(
    model: &SystemModel,
    bounds: &NoiseBounds,
    horizon: usize,
    mu_floor: f64,
) -> Result<StructureReport> {
    if horizon > model.horizon() {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} exceeds model horizon {}",
            model.horizon()
        )));
    }
    let (mut lambda1, mut lambda2) = (f64::INFINITY, 0.0f64);
    for k in 0..=horizon {
        let a = model.a(k);
        let eig = linalg::sym_eigenvalues(&(&*a * a.transpose()));
        lambda1 = lambda1.min(eig.min());
        lambda2 = lambda2.max(eig.max());
    }
    let noise_times: Vec<usize> = (0..=horizon)
        .filter(|&k| bounds.mu.at(k) > mu_floor)
        .collect();
    let mut report = StructureReport {
        lambda1,
        lambda2,
        rho: Vec::new(),
        m: 1.0,
        varrho: 0.0,
        sup_term: 0.0,
        pass_a: lambda1 > 0.0,
        pass_exp: true,
        pass_sup: true,
        vacuous: noise_times.len() < 2,
        noise_times,
    };
    if report.vacuous {
        return Ok(report);
    }
    for w in report.noise_times.windows(2) {
        let (kt, kn) = (w[0], w[1]);
        let phi = moment::transition(model, kn, kt)?;
        let f_next = model.f(kn);
        let f_now = model.f(kt);
        let finv = f_now
            .clone()
            .into_owned()
            .try_inverse()
            .ok_or(Error::SingularNoiseMatrix {
                k: kt,
                cond: f64::INFINITY,
            })?;
        let (mu_t, mu_n) = (bounds.mu.at(kt), bounds.mu.at(kn));
        let fphi = &*f_next * &phi;
        let a = linalg::spectral_norm(&(&fphi * finv));
        let b = linalg::spectral_norm(&fphi);
        report.rho.push(mu_n / mu_t * a * a + mu_n * b * b);

        let mut acc = DMatrix::zeros(model.n(), model.n());
        for k in kt..=kn {
            let p = moment::transition(model, kn, k)?;
            acc += &p * &*bounds.q.at(k) * p.transpose();
        }
        let term = linalg::spectral_norm(&(mu_n * (&*f_next * acc * f_next.transpose())));
        report.sup_term = report.sup_term.max(term);
    }
    let (m, varrho) = fit_envelope(&report.rho);
    report.m = m;
    report.varrho = varrho;
    report.pass_exp = varrho < 1.0 && m.is_finite();
    report.pass_sup = report.sup_term.is_finite();
    Ok(report)
}

/// Fits `Π_{t=s}^{l} ρ_t ≤ M ϱ^{l−s}`: `log ϱ` is the least-squares slope of
/// the cumulative log product, `M` the smallest constant making the bound hold.
pub fn fit_envelope(rho: &[f64]) -> (f64, f64) {
    let logs: Vec<f64> = rho.iter().map(|r| libm::log(*r)).collect();
    let n = logs.len();
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for l in &logs {
        cum.push(cum.last().unwrap() + l);
    }
    let slope = if n == 1 {
        logs[0]
    } else {
        let xs: Vec<f64> = (0..=n).map(|v| v as f64).collect();
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = cum.iter().sum::<f64>() / cum.len() as f64;
        let num: f64 = xs.iter().zip(&cum).map(|(x, y)| (x - xm) * (y - ym)).sum();
        let den: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
        num / den
    };
    let mut log_m = f64::NEG_INFINITY;
    for s in 0..n {
        for l in s..n {
            log_m = log_m.max(cum[l + 1] - cum[s] - (l - s) as f64 * slope);
        }
    }
    (libm::exp(log_m), libm::exp(slope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mat;
    use crate::model::{MatrixSeq, ModelLimits, ScalarSeq, SensorSpec};
    use alloc::vec;
    use proptest::prelude::*;

    fn bounds(n: usize, q: f64, mu: impl Into<ScalarSeq>) -> NoiseBounds {
        NoiseBounds::new(
            q * DMatrix::<f64>::identity(n, n),
            mu,
            DMatrix::identity(n, n),
            vec![DMatrix::identity(n, n)],
        )
    }

    fn example1_sensors(keep: &[usize]) -> Vec<SensorSpec> {
        let all = [
            (mat(&[&[0.0, 1.0]]), 0.07, 0.85),
            (mat(&[&[0.0, 1.0]]), 0.08, 0.15),
            (mat(&[&[0.0, 1.0]]), 0.09, 0.20),
            (mat(&[&[1.0, 0.0]]), 0.09, 0.85),
        ];
        keep.iter()
            .enumerate()
            .map(|(id, &s)| {
                SensorSpec::new(id, all[s].0.clone(), mat(&[&[all[s].1]]), all[s].2, 0.8e-3)
            })
            .collect()
    }

    fn example1(keep: &[usize], horizon: usize) -> (SystemModel, NoiseBounds) {
        let model = SystemModel::new(
            2,
            horizon,
            MatrixSeq::varying(|k| {
                let t = 0.1 * k as f64;
                mat(&[&[0.8 * (1.0 + 0.01 * t), 0.01], &[0.1, 0.98]])
            }),
            DMatrix::identity(2, 2),
            example1_sensors(keep),
            &ModelLimits::default(),
        )
        .unwrap();
        (
            model,
            bounds(2, 0.1, ScalarSeq::varying(|k| 0.1 / (0.1 * k as f64 + 2.0))),
        )
    }

    #[test]
    fn fully_observed_identity_gramian() {
        let model = SystemModel::new(
            2,
            3,
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            vec![SensorSpec::new(
                0,
                DMatrix::identity(2, 2),
                DMatrix::identity(2, 2),
                1.0,
                0.0,
            )],
            &ModelLimits::default(),
        )
        .unwrap();
        let r = check_observability(&model, &bounds(2, 0.1, 0.0), 0, 0..3).unwrap();
        assert!((r.alpha_hat - 1.0).abs() < 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn complementary_sensors_are_needed_without_window() {
        let (model, b) = example1(&[0, 3], 20);
        let both = check_observability(&model, &b, 0, 0..10).unwrap();
        assert!(both.pass);
        for keep in [[0usize], [3]] {
            let (m, b) = example1(&keep, 20);
            let r = check_observability(&m, &b, 0, 0..10).unwrap();
            assert!(r.alpha_hat.abs() < 1e-12, "{keep:?}: {}", r.alpha_hat);
            assert!(!r.pass);
        }
    }

    #[test]
    fn example1_window_four_passes_and_dropping_x1_sensor_fails() {
        let (model, b) = example1(&[0, 1, 2, 3], 100);
        let r = check_observability(&model, &b, 4, 0..97).unwrap();
        assert!(r.pass);
        for (e, el) in r.window_min_eig.iter().zip(&r.moment_window_min_eig) {
            assert!(r.alpha_hat <= *e);
            assert!(*el >= *e - 1e-12);
        }
        let (model, b) = example1(&[0, 1, 2], 100);
        let r = check_observability(&model, &b, 0, 0..97).unwrap();
        assert!(r.alpha_hat < 1e-12);
    }

    #[test]
    fn observability_rejects_short_horizon() {
        let (model, b) = example1(&[0, 3], 5);
        assert!(check_observability(&model, &b, 3, 0..4).is_err());
    }

    #[test]
    fn zero_mu_is_vacuous() {
        let model = SystemModel::new(
            2,
            30,
            mat(&[&[1.05, -0.1], &[0.1, 0.98]]),
            DMatrix::identity(2, 2),
            example1_sensors(&[0]),
            &ModelLimits::default(),
        )
        .unwrap();
        let r = check_structure(&model, &bounds(2, 0.1, 0.0), 30, MU_FLOOR).unwrap();
        assert!(r.noise_times.is_empty() && r.vacuous && r.pass());
        // independent oracle: closed-form eigenvalues of the symmetric 2x2 A Aᵀ
        let (a, b, c, d) = (1.05f64, -0.1f64, 0.1f64, 0.98f64);
        let (p, q, s) = (a * a + b * b, a * c + b * d, c * c + d * d);
        let mid = (p + s) / 2.0;
        let rad = (((p - s) / 2.0).powi(2) + q * q).sqrt();
        assert!((r.lambda1 - (mid - rad)).abs() < 1e-12);
        assert!((r.lambda2 - (mid + rad)).abs() < 1e-12);
    }

    #[test]
    fn constant_scalar_rho_closed_form() {
        for (a, m, pass) in [(0.9, 0.1, true), (0.99, 0.1, false), (0.5, 2.0, true)] {
            let model = SystemModel::new(
                1,
                20,
                mat(&[&[a]]),
                mat(&[&[1.0]]),
                vec![SensorSpec::new(0, mat(&[&[1.0]]), mat(&[&[1.0]]), 1.0, 0.0)],
                &ModelLimits::default(),
            )
            .unwrap();
            let r = check_structure(&model, &bounds(1, 1.0, m), 20, MU_FLOOR).unwrap();
            assert_eq!(r.rho.len(), 20);
            let expected = a * a + m * a * a;
            for rho in &r.rho {
                assert!((rho - expected).abs() < 1e-12);
            }
            assert!((r.varrho - expected).abs() < 1e-9);
            assert!((r.m - expected).abs() < 1e-9);
            assert_eq!(r.pass_exp, pass);
            // 𝒬 over two consecutive steps: a² q + q
            assert!((r.sup_term - m * (a * a + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn envelope_bounds_all_partial_products() {
        let rho = [0.5, 1.5, 0.3, 0.9, 0.2];
        let (m, v) = fit_envelope(&rho);
        for s in 0..rho.len() {
            for l in s..rho.len() {
                let prod: f64 = rho[s..=l].iter().product();
                assert!(prod <= m * v.powi((l - s) as i32) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn example1_structure_and_moment_dominance() {
        let (model, b) = example1(&[0, 1, 2, 3], 100);
        let r = check_structure(&model, &b, 100, MU_FLOOR).unwrap();
        assert!(r.lambda1 <= r.lambda2 && r.pass_a);
        assert_eq!(r.noise_times.len(), 101);
        let varpi = varpi_sequence(&model, &b, 100);
        let pi = moment::propagate_pi(&model, &b, 100, DEFAULT_PI_CAP).unwrap();
        for k in 0..=100 {
            assert!(linalg::spectral_norm(pi.get(k)) <= varpi[k] * (1.0 + 1e-12));
        }
    }

    proptest! {
        #[test]
        fn varpi_recursion_matches_closed_form(
            a in proptest::collection::vec(0.1f64..1.5, 12),
            q in proptest::collection::vec(0.0f64..2.0, 12),
            p0 in 0.1f64..5.0,
        ) {
            let mut v = p0;
            for j in 0..12 {
                let closed = varpi_closed_form(p0, &a, &q, j);
                prop_assert!((closed - v).abs() <= 1e-9 * v.abs().max(1e-300));
                v = a[j] * v + q[j];
            }
        }

        #[test]
        fn larger_window_never_lowers_alpha(
            coeffs in proptest::collection::vec(-1.0f64..1.0, 4),
            nbar in 0usize..4,
        ) {
            let a = mat(&[&[1.0 + 0.2 * coeffs[0], 0.3 * coeffs[1]], &[0.3 * coeffs[2], 0.9 + 0.2 * coeffs[3]]]);
            let model = SystemModel::new(
                2,
                20,
                a,
                DMatrix::identity(2, 2),
                example1_sensors(&[0, 1]),
                &ModelLimits::default(),
            ).unwrap();
            let b = bounds(2, 0.1, 0.02);
            let small = check_observability(&model, &b, nbar, 0..10).unwrap();
            let big = check_observability(&model, &b, nbar + 1, 0..10).unwrap();
            prop_assert!(big.alpha_hat >= small.alpha_hat - 1e-12);
            prop_assert!(small.moment_alpha_hat >= small.alpha_hat - 1e-10);
        }
    }
}
