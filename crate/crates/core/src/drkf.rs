//! Distributed robust Kalman filter.
//!
//! Each sensor runs prediction, a measurement update with the trace-optimal
//! stochastic gain, and covariance-intersection fusion of the pairs received
//! from its in-neighbors. Sensors transmit the *updated* pair `{x̃, P̃}`; the
//! consistency argument for fusion is stated for that pair, so transmitting
//! the fused pair instead would void the bound.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::channel::{self, Channel, ChannelBounds, Link};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{EstimatePair, NoiseBounds, SensorGraph, SensorSpec, SystemModel};
use crate::moment::{MomentTrace, DEFAULT_PI_CAP};

/// Innovation matrices with a condition number above this are rejected.
pub const INNOVATION_COND_CAP: f64 = 1e12;

/// Everything the filters need to know about the scenario.
#[derive(Debug, Clone)]
pub struct FilterSetup {
    pub model: SystemModel,
    pub bounds: NoiseBounds,
    pub graph: SensorGraph,
    pub channel: ChannelBounds,
    /// Magnitude cap for the moment bound `Π_k`.
    pub pi_cap: f64,
}

impl FilterSetup {
    pub fn new(
        model: SystemModel,
        bounds: NoiseBounds,
        graph: SensorGraph,
        channel: ChannelBounds,
    ) -> Result<Self> {
        let setup = FilterSetup {
            model,
            bounds,
            graph,
            channel,
            pi_cap: DEFAULT_PI_CAP,
        };
        setup.validate()?;
        Ok(setup)
    }

    pub fn validate(&self) -> Result<()> {
        if self.graph.len() != self.model.num_sensors() {
            return Err(Error::InvalidGraph(format!(
                "graph has {} nodes for {} sensors",
                self.graph.len(),
                self.model.num_sensors()
            )));
        }
        let report = crate::model::validate_graph(&self.graph);
        if !report.is_valid() {
            return Err(Error::InvalidGraph(crate::model::describe_report(&report)));
        }
        self.bounds.validate(&self.model, &Default::default())?;
        self.channel.validate(&self.graph, self.model.n())
    }
}

/// Per-sensor filter state.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorState {
    pub id: usize,
    pub fused: EstimatePair,
    pub predicted: EstimatePair,
    pub updated: EstimatePair,
    pub gain: DMatrix<f64>,
}

impl SensorState {
    pub fn new(id: usize, init: EstimatePair, m: usize) -> Self {
        let n = init.dim();
        SensorState {
            id,
            fused: init.clone(),
            predicted: init.clone(),
            updated: init,
            gain: DMatrix::zeros(n, m),
        }
    }
}

/// Linear measurement with per-row fading means and an additive fading term.
///
/// For a single sensor every row shares `τ` and `fading = φ C Π Cᵀ`; stacked
/// centralized models carry a block-diagonal fading term.
#[derive(Debug, Clone)]
pub struct RobustMeasurement {
    pub c: DMatrix<f64>,
    pub tau: DVector<f64>,
    pub r: DMatrix<f64>,
    pub fading: DMatrix<f64>,
}

impl RobustMeasurement {
    pub fn from_sensor(spec: &SensorSpec, pi: &DMatrix<f64>, k: usize) -> Self {
        let c = spec.c.at(k).into_owned();
        let phi = spec.phi.at(k);
        let fading = phi * (&c * pi * c.transpose());
        RobustMeasurement {
            tau: DVector::from_element(c.nrows(), spec.tau.at(k)),
            r: spec.r.at(k).into_owned(),
            fading,
            c,
        }
    }

    /// `T C` with `T = diag(τ)`.
    pub fn effective_c(&self) -> DMatrix<f64> {
        let mut tc = self.c.clone();
        for (row, &t) in self.tau.iter().enumerate() {
            tc.row_mut(row).scale_mut(t);
        }
        tc
    }

    /// `Ξ = T C P̄ Cᵀ T + R + fading`.
    pub fn innovation(&self, pbar: &DMatrix<f64>) -> DMatrix<f64> {
        let tc = self.effective_c();
        linalg::symmetrized(&tc * pbar * tc.transpose() + &self.r + &self.fading)
    }

    /// Gain-dependent bound `(I - K T C) P̄ (I - K T C)ᵀ + K (R + fading) Kᵀ`,
    /// valid for any gain.
    pub fn joseph_bound(&self, pbar: &DMatrix<f64>, gain: &DMatrix<f64>) -> DMatrix<f64> {
        let n = pbar.nrows();
        let ikc = DMatrix::identity(n, n) - gain * self.effective_c();
        linalg::symmetrized(
            &ikc * pbar * ikc.transpose() + gain * (&self.r + &self.fading) * gain.transpose(),
        )
    }

    /// `K* = P̄ Cᵀ T Ξ⁻¹`, the trace-minimizing gain.
    pub fn optimal_gain(
        &self,
        pbar: &DMatrix<f64>,
        sensor: usize,
        k: usize,
    ) -> Result<DMatrix<f64>> {
        let xi = self.innovation(pbar);
        let rhs = self.effective_c() * pbar; // Ξ Kᵀ = T C P̄
        let kt = match xi.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => {
                let cond = linalg::sym_condition(&xi);
                if !(cond <= INNOVATION_COND_CAP) {
                    return Err(Error::SingularInnovation { sensor, k, cond });
                }
                xi.lu()
                    .solve(&rhs)
                    .ok_or(Error::SingularInnovation { sensor, k, cond })?
            }
        };
        if !kt.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularInnovation {
                sensor,
                k,
                cond: f64::INFINITY,
            });
        }
        Ok(kt.transpose())
    }

    /// Update with a given gain: `x̃ = x̄ + K (y − T C x̄)`, `P̃ = (I − K T C) P̄`.
    pub fn apply(
        &self,
        pred: &EstimatePair,
        y: &DVector<f64>,
        gain: &DMatrix<f64>,
    ) -> EstimatePair {
        let tc = self.effective_c();
        let x = &pred.x + gain * (y - &tc * &pred.x);
        let n = pred.dim();
        let p = (DMatrix::identity(n, n) - gain * tc) * &pred.p;
        EstimatePair::new_unchecked(x, linalg::symmetrized(p))
    }
}

/// Prediction from `k-1` to `k`:
/// `x̄ = A x̂`, `P̄ = A P Aᵀ + μ F Π_{k-1} Fᵀ + Q`.
pub fn predict(
    prev: &EstimatePair,
    model: &SystemModel,
    bounds: &NoiseBounds,
    pi_prev: &DMatrix<f64>,
    k: usize,
) -> EstimatePair {
    debug_assert!(k >= 1);
    let t = k - 1;
    let a = model.a(t);
    let f = model.f(t);
    let x = &*a * &prev.x;
    let p = &*a * &prev.p * a.transpose()
        + bounds.mu.at(t) * (&*f * pi_prev * f.transpose())
        + &*bounds.q.at(t);
    EstimatePair::new_unchecked(x, linalg::symmetrized(p))
}

/// Trace-optimal gain `K* = τ P̄ Cᵀ Ξ⁻¹` with
/// `Ξ = τ² C P̄ Cᵀ + R + φ C Π_k Cᵀ`.
pub fn optimal_gain(
    pbar: &DMatrix<f64>,
    spec: &SensorSpec,
    pi_k: &DMatrix<f64>,
    k: usize,
) -> Result<DMatrix<f64>> {
    RobustMeasurement::from_sensor(spec, pi_k, k).optimal_gain(pbar, spec.id, k)
}

/// Measurement update with the optimal gain. Returns the updated pair and the gain.
pub fn update(
    pred: &EstimatePair,
    y: &DVector<f64>,
    spec: &SensorSpec,
    pi_k: &DMatrix<f64>,
    k: usize,
) -> Result<(EstimatePair, DMatrix<f64>)> {
    let meas = RobustMeasurement::from_sensor(spec, pi_k, k);
    if y.len() != meas.c.nrows() {
        return Err(Error::Dimension {
            what: format!("measurement of sensor {}", spec.id),
            expected: (meas.c.nrows(), 1),
            got: (y.len(), 1),
        });
    }
    let gain = meas.optimal_gain(&pred.p, spec.id, k)?;
    Ok((meas.apply(pred, y, &gain), gain))
}

/// Covariance intersection of weighted candidates:
/// `P = (Σ w P̌⁻¹)⁻¹`, `x = P Σ w P̌⁻¹ x̌`. Zero weights are skipped.
///
/// The error callback names the candidate whose matrix is not positive definite.
pub fn ci_combine<'a, I, E>(candidates: I, n: usize, on_not_pd: E) -> Result<EstimatePair>
where
    I: IntoIterator<Item = (f64, &'a EstimatePair, usize)>,
    E: Fn(usize) -> Error,
{
    let mut info = DMatrix::zeros(n, n);
    let mut info_x = DVector::zeros(n);
    for (w, pair, tag) in candidates {
        if w == 0.0 {
            continue;
        }
        let inv = linalg::spd_inverse(&pair.p).ok_or_else(|| on_not_pd(tag))?;
        info_x += w * (&inv * &pair.x);
        info += w * inv;
    }
    let p = linalg::spd_inverse(&info).ok_or(Error::NotPositiveDefinite {
        what: "fused information matrix".into(),
    })?;
    let x = &p * info_x;
    Ok(EstimatePair::new_unchecked(x, p))
}

/// CI fusion over already-inflated pairs with the graph weights `a_{i,j}`.
pub fn fuse_inflated(
    inflated: &[(Link, EstimatePair)],
    graph: &SensorGraph,
    i: usize,
) -> Result<EstimatePair> {
    check_neighbors(inflated.iter().map(|(l, _)| *l), graph, i)?;
    let n = inflated[0].1.dim();
    ci_combine(
        inflated
            .iter()
            .map(|(l, p)| (graph.weight(i, l.sender), p, l.sender)),
        n,
        |j| Error::InflatedNotPd { i, j },
    )
}

/// Plain fusion: inflate every received pair by `D_{i,j} + Υ_{i,j}`
/// then combine with the graph weights.
pub fn fuse(
    received: &[(EstimatePair, Link)],
    channel_bounds: &ChannelBounds,
    graph: &SensorGraph,
    i: usize,
) -> Result<EstimatePair> {
    let inflated = received
        .iter()
        .map(|(pair, link)| Ok((*link, channel::inflate(pair, *link, channel_bounds)?)))
        .collect::<Result<Vec<_>>>()?;
    fuse_inflated(&inflated, graph, i)
}

fn check_neighbors(links: impl Iterator<Item = Link>, graph: &SensorGraph, i: usize) -> Result<()> {
    let senders: Vec<usize> = links
        .map(|l| {
            if l.receiver == i {
                Ok(l.sender)
            } else {
                Err(Error::NeighborMismatch { i })
            }
        })
        .collect::<Result<_>>()?;
    let mut sorted = senders.clone();
    sorted.sort_unstable();
    if sorted != graph.neighbors(i) {
        return Err(Error::NeighborMismatch { i });
    }
    Ok(())
}

/// Implicit fusion weights `W_{i,j} = a_{i,j} P (P̌_j)⁻¹`. They sum to `I_n`.
pub fn fusion_weights(
    inflated: &[(Link, EstimatePair)],
    fused_p: &DMatrix<f64>,
    graph: &SensorGraph,
    i: usize,
) -> Result<Vec<DMatrix<f64>>> {
    inflated
        .iter()
        .map(|(l, pair)| {
            let inv =
                linalg::spd_inverse(&pair.p).ok_or(Error::InflatedNotPd { i, j: l.sender })?;
            Ok(graph.weight(i, l.sender) * fused_p * inv)
        })
        .collect()
}

pub(crate) fn collect_failures<T>(k: usize, results: Vec<Result<T>>) -> Result<Vec<T>> {
    let mut ok = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failures.push((i, Box::new(e))),
        }
    }
    if failures.is_empty() {
        Ok(ok)
    } else {
        Err(Error::Step { k, failures })
    }
}

/// Prediction and update for every sensor at step `k`. Extends `Π` to `k`.
pub fn local_step(
    setup: &FilterSetup,
    states: &mut [SensorState],
    pi: &mut MomentTrace,
    measurements: &[DVector<f64>],
    k: usize,
) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "filter steps start at k = 1".into(),
        ));
    }
    if measurements.len() != states.len() {
        return Err(Error::InvalidParameter(format!(
            "{} measurements for {} sensors",
            measurements.len(),
            states.len()
        )));
    }
    pi.extend_to(&setup.model, &setup.bounds, k)?;
    let pi_prev = pi.get(k - 1);
    let pi_k = pi.get(k);
    let results: Vec<Result<(EstimatePair, EstimatePair, DMatrix<f64>)>> = states
        .iter()
        .zip(measurements)
        .map(|(s, y)| {
            let pred = predict(&s.fused, &setup.model, &setup.bounds, pi_prev, k);
            let (upd, gain) = update(&pred, y, setup.model.sensor(s.id), pi_k, k)?;
            Ok((pred, upd, gain))
        })
        .collect();
    for (s, (pred, upd, gain)) in states.iter_mut().zip(collect_failures(k, results)?) {
        s.predicted = pred;
        s.updated = upd;
        s.gain = gain;
    }
    Ok(())
}

/// Transmits every updated pair across its links and inflates it at the
/// receiver. Entry `i` lists the inflated pairs sensor `i` received, ordered
/// by sender.
pub fn exchange<C: Channel + ?Sized>(
    setup: &FilterSetup,
    states: &[SensorState],
    channel: &C,
    k: usize,
) -> Result<Vec<Vec<(Link, EstimatePair)>>> {
    let results = (0..states.len())
        .map(|i| {
            setup
                .graph
                .neighbors(i)
                .iter()
                .map(|&j| {
                    let link = Link::new(i, j);
                    let received = channel.transmit(&states[j].updated, link, k);
                    Ok((link, channel::inflate(&received, link, &setup.channel)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect();
    collect_failures(k, results)
}

/// One full tick of the distributed robust Kalman filter.
pub fn drkf_step<C: Channel + ?Sized>(
    setup: &FilterSetup,
    states: &mut [SensorState],
    pi: &mut MomentTrace,
    measurements: &[DVector<f64>],
    channel: &C,
    k: usize,
) -> Result<()> {
    local_step(setup, states, pi, measurements, k)?;
    let inbox = exchange(setup, states, channel, k)?;
    let fused = collect_failures(
        k,
        inbox
            .iter()
            .enumerate()
            .map(|(i, inflated)| fuse_inflated(inflated, &setup.graph, i))
            .collect(),
    )?;
    for (s, f) in states.iter_mut().zip(fused) {
        s.fused = f;
    }
    Ok(())
}

/// Owned DRKF network: sensor states plus the shared moment bound.
#[derive(Debug, Clone)]
pub struct Drkf {
    pub states: Vec<SensorState>,
    pub pi: MomentTrace,
    k: usize,
}

impl Drkf {
    /// Starts every sensor from `{x̂_{0,i}, P_{0,i}}`.
    pub fn new(setup: &FilterSetup, x0: &[DVector<f64>]) -> Result<Self> {
        let states = initial_states(setup, x0)?;
        Ok(Drkf {
            states,
            pi: MomentTrace::new(&setup.bounds.p0, setup.pi_cap),
            k: 0,
        })
    }

    /// Time index of the current fused estimates.
    pub fn time(&self) -> usize {
        self.k
    }

    pub fn step<C: Channel + ?Sized>(
        &mut self,
        setup: &FilterSetup,
        measurements: &[DVector<f64>],
        channel: &C,
    ) -> Result<()> {
        let k = self.k + 1;
        drkf_step(
            setup,
            &mut self.states,
            &mut self.pi,
            measurements,
            channel,
            k,
        )?;
        self.k = k;
        Ok(())
    }
}

pub(crate) fn initial_states(setup: &FilterSetup, x0: &[DVector<f64>]) -> Result<Vec<SensorState>> {
    let n = setup.model.n();
    if x0.len() != setup.model.num_sensors() {
        return Err(Error::InvalidParameter(format!(
            "{} initial estimates for {} sensors",
            x0.len(),
            setup.model.num_sensors()
        )));
    }
    x0.iter()
        .enumerate()
        .map(|(i, x)| {
            if x.len() != n {
                return Err(Error::Dimension {
                    what: format!("initial estimate of sensor {i}"),
                    expected: (n, 1),
                    got: (x.len(), 1),
                });
            }
            let pair = EstimatePair::new(x.clone(), setup.bounds.p0i[i].clone())?;
            Ok(SensorState::new(i, pair, setup.model.sensor(i).dim()))
        })
        .collect()
}
