//! Centralized reference filters over the stacked measurements of all sensors:
//! the textbook Kalman filter (CKF) and the centralized robust filter (CRKF).

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::drkf::{self, RobustMeasurement};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{EstimatePair, NoiseBounds, SystemModel};
use crate::moment::MomentTrace;

/// All sensors at time `k` as one measurement model.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSensor {
    pub c: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Fading mean per row.
    pub tau: DVector<f64>,
    /// Fading variance bound per sensor block.
    pub phi: Vec<f64>,
    /// Row ranges of the blocks.
    pub blocks: Vec<(usize, usize)>,
}

impl StackedSensor {
    pub fn from_model(model: &SystemModel, k: usize) -> Self {
        let mut cs = Vec::new();
        let mut rs = Vec::new();
        let mut tau = Vec::new();
        let mut phi = Vec::new();
        let mut blocks = Vec::new();
        let mut row = 0;
        for s in model.sensors() {
            let c = s.c.at(k).into_owned();
            let m = c.nrows();
            tau.extend(core::iter::repeat_n(s.tau.at(k), m));
            phi.push(s.phi.at(k));
            blocks.push((row, row + m));
            row += m;
            cs.push(c);
            rs.push(s.r.at(k).into_owned());
        }
        StackedSensor {
            c: linalg::vstack(&cs),
            r: linalg::block_diag(&rs),
            tau: DVector::from_vec(tau),
            phi,
            blocks,
        }
    }

    pub fn rows(&self) -> usize {
        self.c.nrows()
    }

    /// Robust measurement with block-diagonal fading `diag(φ_i C_i Π C_iᵀ)`.
    pub fn robust(&self, pi: &DMatrix<f64>) -> RobustMeasurement {
        let m = self.rows();
        let mut fading = DMatrix::zeros(m, m);
        for (&(lo, hi), &phi) in self.blocks.iter().zip(&self.phi) {
            let ci = self.c.rows(lo, hi - lo);
            fading
                .view_mut((lo, lo), (hi - lo, hi - lo))
                .copy_from(&(phi * (ci * pi * ci.transpose())));
        }
        RobustMeasurement {
            c: self.c.clone(),
            tau: self.tau.clone(),
            r: self.r.clone(),
            fading,
        }
    }

    /// Nominal model with no fading: `τ = 1`, `φ = 0`.
    pub fn nominal(&self) -> RobustMeasurement {
        let m = self.rows();
        RobustMeasurement {
            c: self.c.clone(),
            tau: DVector::from_element(m, 1.0),
            r: self.r.clone(),
            fading: DMatrix::zeros(m, m),
        }
    }
}

/// Concatenates per-sensor measurements in sensor order.
pub fn stack_measurements(ys: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        ys.iter().map(|y| y.len()).sum(),
        ys.iter().flat_map(|y| y.iter().copied()),
    )
}

fn check_rows(y: &DVector<f64>, rows: usize) -> Result<()> {
    if y.len() != rows {
        return Err(Error::Dimension {
            what: "stacked measurement".into(),
            expected: (rows, 1),
            got: (y.len(), 1),
        });
    }
    Ok(())
}

/// Textbook Kalman filter step from `k-1` to `k` on the stacked system,
/// ignoring multiplicative noise and fading.
pub fn ckf_step(
    pair: &EstimatePair,
    y: &DVector<f64>,
    model: &SystemModel,
    bounds: &NoiseBounds,
    k: usize,
) -> Result<EstimatePair> {
    let t = k - 1;
    let a = model.a(t);
    let pred = EstimatePair::new_unchecked(
        &*a * &pair.x,
        linalg::symmetrized(&*a * &pair.p * a.transpose() + &*bounds.q.at(t)),
    );
    let meas = StackedSensor::from_model(model, k).nominal();
    check_rows(y, meas.c.nrows())?;
    let gain = meas.optimal_gain(&pred.p, 0, k)?;
    Ok(meas.apply(&pred, y, &gain))
}

/// Robust predict/update on the stacked sensor; `pi` must cover `k`.
pub fn crkf_step(
    pair: &EstimatePair,
    y: &DVector<f64>,
    model: &SystemModel,
    bounds: &NoiseBounds,
    pi: &MomentTrace,
    k: usize,
) -> Result<EstimatePair> {
    let pi_k = pi
        .try_get(k)
        .ok_or_else(|| Error::InvalidParameter(format!("moment bound at k={k} not available")))?;
    let pred = drkf::predict(pair, model, bounds, pi.get(k - 1), k);
    let meas = StackedSensor::from_model(model, k).robust(pi_k);
    check_rows(y, meas.c.nrows())?;
    let gain = meas.optimal_gain(&pred.p, 0, k)?;
    Ok(meas.apply(&pred, y, &gain))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CentralKind {
    Ckf,
    Crkf,
}

/// Owned centralized filter.
#[derive(Debug, Clone)]
pub struct Centralized {
    pub kind: CentralKind,
    pub pair: EstimatePair,
    pub pi: MomentTrace,
    k: usize,
}

impl Centralized {
    pub fn new(kind: CentralKind, init: EstimatePair, bounds: &NoiseBounds, pi_cap: f64) -> Self {
        Centralized {
            kind,
            pair: init,
            pi: MomentTrace::new(&bounds.p0, pi_cap),
            k: 0,
        }
    }

    pub fn time(&self) -> usize {
        self.k
    }

    pub fn step(
        &mut self,
        model: &SystemModel,
        bounds: &NoiseBounds,
        ys: &[DVector<f64>],
    ) -> Result<()> {
        let k = self.k + 1;
        let y = stack_measurements(ys);
        self.pair = match self.kind {
            CentralKind::Ckf => ckf_step(&self.pair, &y, model, bounds, k)?,
            CentralKind::Crkf => {
                self.pi.extend_to(model, bounds, k)?;
                crkf_step(&self.pair, &y, model, bounds, &self.pi, k)?
            }
        };
        self.k = k;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelBounds, Noiseless};
    use crate::drkf::{Drkf, FilterSetup};
    use crate::linalg::mat;
    use crate::model::{ModelLimits, SensorGraph, SensorSpec};
    use alloc::vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textbook_kf(
        x: &DVector<f64>,
        p: &DMatrix<f64>,
        a: &DMatrix<f64>,
        q: &DMatrix<f64>,
        c: &DMatrix<f64>,
        r: &DMatrix<f64>,
        y: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let xp = a * x;
        let pp = a * p * a.transpose() + q;
        let s = c * &pp * c.transpose() + r;
        let k = &pp * c.transpose() * s.try_inverse().unwrap();
        let n = x.len();
        (
            &xp + &k * (y - c * &xp),
            (DMatrix::identity(n, n) - &k * c) * pp,
        )
    }

    #[test]
    fn scalar_textbook_update() {
        let model = SystemModel::new(
            1,
            2,
            mat(&[&[1.0]]),
            mat(&[&[1.0]]),
            vec![SensorSpec::new(0, mat(&[&[1.0]]), mat(&[&[1.0]]), 1.0, 0.0)],
            &ModelLimits::default(),
        )
        .unwrap();
        let bounds = NoiseBounds::new(mat(&[&[0.0]]), 0.0, mat(&[&[1.0]]), vec![mat(&[&[1.0]])]);
        let init = EstimatePair::new_unchecked(DVector::zeros(1), mat(&[&[1.0]]));
        let out = ckf_step(&init, &DVector::from_vec(vec![2.0]), &model, &bounds, 1).unwrap();
        assert!((out.p[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((out.x[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn noiseless_observable_covariance_decreases() {
        let model = SystemModel::new(
            2,
            30,
            mat(&[&[1.0, 0.1], &[0.0, 1.0]]),
            DMatrix::identity(2, 2),
            vec![SensorSpec::new(
                0,
                mat(&[&[1.0, 0.0]]),
                mat(&[&[1e-9]]),
                1.0,
                0.0,
            )],
            &ModelLimits::default(),
        )
        .unwrap();
        let bounds = NoiseBounds::new(
            DMatrix::zeros(2, 2),
            0.0,
            DMatrix::identity(2, 2),
            vec![DMatrix::identity(2, 2)],
        );
        let mut f = Centralized::new(
            CentralKind::Ckf,
            EstimatePair::new_unchecked(DVector::zeros(2), DMatrix::identity(2, 2)),
            &bounds,
            1e150,
        );
        let mut last = f64::INFINITY;
        for _ in 0..30 {
            f.step(&model, &bounds, &[DVector::zeros(1)]).unwrap();
            let tr = f.pair.p.trace();
            assert!(tr <= last);
            last = tr;
        }
        assert!(last < 1e-6);
    }

    fn two_sensor_model(mu: f64, phi: f64, tau: f64) -> (SystemModel, NoiseBounds) {
        let model = SystemModel::new(
            2,
            100,
            mat(&[&[0.95, 0.1], &[-0.05, 1.01]]),
            DMatrix::identity(2, 2),
            vec![
                SensorSpec::new(0, mat(&[&[1.0, 0.0]]), mat(&[&[0.5]]), tau, phi),
                SensorSpec::new(
                    1,
                    mat(&[&[0.3, 1.0], &[0.0, 2.0]]),
                    mat(&[&[0.4, 0.1], &[0.1, 0.3]]),
                    tau,
                    phi,
                ),
            ],
            &ModelLimits::default(),
        )
        .unwrap();
        let bounds = NoiseBounds::new(
            mat(&[&[0.1, 0.02], &[0.02, 0.2]]),
            mu,
            DMatrix::identity(2, 2),
            vec![3.0 * DMatrix::<f64>::identity(2, 2)],
        );
        (model, bounds)
    }

    fn rand_measurements(rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
        vec![
            DVector::from_fn(1, |_, _| rng.random_range(-2.0..2.0)),
            DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0)),
        ]
    }

    #[test]
    fn ckf_matches_textbook_oracle() {
        let (model, bounds) = two_sensor_model(0.0, 0.0, 1.0);
        let s = StackedSensor::from_model(&model, 0);
        let (a, q) = (model.a(0).into_owned(), bounds.q.at(0).into_owned());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = Centralized::new(
            CentralKind::Ckf,
            EstimatePair::new_unchecked(
                DVector::from_vec(vec![1.0, -1.0]),
                3.0 * DMatrix::<f64>::identity(2, 2),
            ),
            &bounds,
            1e150,
        );
        let (mut x, mut p) = (f.pair.x.clone(), f.pair.p.clone());
        for _ in 0..100 {
            let ys = rand_measurements(&mut rng);
            f.step(&model, &bounds, &ys).unwrap();
            (x, p) = textbook_kf(&x, &p, &a, &q, &s.c, &s.r, &stack_measurements(&ys));
            assert!((&f.pair.x - &x).abs().max() < 1e-10);
            assert!((&f.pair.p - &p).abs().max() < 1e-10);
        }
    }

    #[test]
    fn crkf_reduces_to_ckf() {
        let (model, bounds) = two_sensor_model(0.0, 0.0, 1.0);
        let init = EstimatePair::new_unchecked(
            DVector::from_vec(vec![0.5, 0.5]),
            3.0 * DMatrix::<f64>::identity(2, 2),
        );
        let mut ckf = Centralized::new(CentralKind::Ckf, init.clone(), &bounds, 1e150);
        let mut crkf = Centralized::new(CentralKind::Crkf, init, &bounds, 1e150);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let ys = rand_measurements(&mut rng);
            ckf.step(&model, &bounds, &ys).unwrap();
            crkf.step(&model, &bounds, &ys).unwrap();
            assert!((&ckf.pair.x - &crkf.pair.x).abs().max() < 1e-10);
            assert!((&ckf.pair.p - &crkf.pair.p).abs().max() < 1e-10);
        }
    }

    #[test]
    fn single_sensor_drkf_reduces_to_kf() {
        let model = SystemModel::new(
            2,
            100,
            mat(&[&[1.02, 0.1], &[0.0, 0.97]]),
            DMatrix::identity(2, 2),
            vec![SensorSpec::new(
                0,
                mat(&[&[1.0, 0.5]]),
                mat(&[&[0.3]]),
                1.0,
                0.0,
            )],
            &ModelLimits::default(),
        )
        .unwrap();
        let bounds = NoiseBounds::new(
            0.1 * DMatrix::<f64>::identity(2, 2),
            0.0,
            DMatrix::identity(2, 2),
            vec![2.0 * DMatrix::<f64>::identity(2, 2)],
        );
        let graph = SensorGraph::new(mat(&[&[1.0]])).unwrap();
        let channel = ChannelBounds::zero(&graph, 2);
        let setup = FilterSetup::new(model.clone(), bounds.clone(), graph, channel).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let mut d = Drkf::new(&setup, std::slice::from_ref(&x0)).unwrap();
        let (a, q, c, r) = (
            model.a(0).into_owned(),
            bounds.q.at(0).into_owned(),
            mat(&[&[1.0, 0.5]]),
            mat(&[&[0.3]]),
        );
        let (mut x, mut p) = (x0, 2.0 * DMatrix::<f64>::identity(2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let y = DVector::from_fn(1, |_, _| rng.random_range(-3.0..3.0));
            d.step(&setup, std::slice::from_ref(&y), &Noiseless).unwrap();
            (x, p) = textbook_kf(&x, &p, &a, &q, &c, &r, &y);
            let s = &d.states[0].fused;
            assert!((&s.x - &x).abs().max() < 1e-10);
            assert!((&s.p - &p).abs().max() < 1e-10);
        }
    }

    #[test]
    fn single_sensor_crkf_equals_local_robust_update() {
        let (model, bounds) = two_sensor_model(0.05, 0.01, 0.7);
        let model = model.with_sensors(&[1]).unwrap();
        let pi = crate::moment::propagate_pi(&model, &bounds, 1, 1e150).unwrap();
        let init = EstimatePair::new_unchecked(
            DVector::from_vec(vec![0.2, 0.1]),
            3.0 * DMatrix::<f64>::identity(2, 2),
        );
        let y = DVector::from_vec(vec![0.4, -0.3]);
        let central = crkf_step(&init, &y, &model, &bounds, &pi, 1).unwrap();
        let pred = drkf::predict(&init, &model, &bounds, pi.get(0), 1);
        let (local, _) = drkf::update(&pred, &y, model.sensor(0), pi.get(1), 1).unwrap();
        assert!((&central.p - &local.p).abs().max() < 1e-14);
        assert!((&central.x - &local.x).abs().max() < 1e-14);
    }

    proptest! {
        #[test]
        fn adding_a_sensor_block_never_increases_trace(
            vals in proptest::collection::vec(-1.0f64..1.0, 8),
            tau in 0.1f64..1.0,
            phi in 0.0f64..0.2,
        ) {
            let pbar = {
                let m = DMatrix::from_fn(2, 2, |r, c| vals[2 * r + c]);
                &m * m.transpose() + 0.1 * DMatrix::<f64>::identity(2, 2)
            };
            let pi = 2.0 * DMatrix::<f64>::identity(2, 2);
            let c1 = DMatrix::from_row_slice(1, 2, &vals[4..6]);
            let c2 = DMatrix::from_row_slice(1, 2, &vals[6..8]);
            let one = StackedSensor {
                c: c1.clone(),
                r: mat(&[&[0.5]]),
                tau: DVector::from_element(1, tau),
                phi: vec![phi],
                blocks: vec![(0, 1)],
            };
            let two = StackedSensor {
                c: linalg::vstack(&[c1, c2]),
                r: mat(&[&[0.5, 0.0], &[0.0, 0.7]]),
                tau: DVector::from_vec(vec![tau, 0.9]),
                phi: vec![phi, 0.05],
                blocks: vec![(0, 1), (1, 2)],
            };
            let pred = EstimatePair::new_unchecked(DVector::zeros(2), pbar.clone());
            let trace = |s: &StackedSensor| {
                let m = s.robust(&pi);
                let g = m.optimal_gain(&pbar, 0, 1).unwrap();
                m.apply(&pred, &DVector::zeros(s.rows()), &g).p.trace()
            };
            prop_assert!(trace(&two) <= trace(&one) + 1e-10);
        }
    }
}
