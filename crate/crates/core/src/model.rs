//! System, sensing and network data model.
//!
//! Sensor and node indices are zero-based throughout the library. Time-varying
//! quantities are pure functions of the step index `k` so that long horizons
//! never materialize whole matrix sequences.

use alloc::borrow::Cow;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, PSD_TOL};

type MatrixFn = dyn Fn(usize) -> DMatrix<f64> + Send + Sync;
type ScalarFn = dyn Fn(usize) -> f64 + Send + Sync;

/// A matrix-valued function of time.
#[derive(Clone)]
pub enum MatrixSeq {
    Constant(DMatrix<f64>),
    Varying(Arc<MatrixFn>),
}

impl MatrixSeq {
    pub fn varying<F>(f: F) -> Self
    where
        F: Fn(usize) -> DMatrix<f64> + Send + Sync + 'static,
    {
        MatrixSeq::Varying(Arc::new(f))
    }

    pub fn at(&self, k: usize) -> Cow<'_, DMatrix<f64>> {
        match self {
            MatrixSeq::Constant(m) => Cow::Borrowed(m),
            MatrixSeq::Varying(f) => Cow::Owned(f(k)),
        }
    }
}

impl From<DMatrix<f64>> for MatrixSeq {
    fn from(m: DMatrix<f64>) -> Self {
        MatrixSeq::Constant(m)
    }
}

impl fmt::Debug for MatrixSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixSeq::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            MatrixSeq::Varying(_) => f.write_str("Varying(..)"),
        }
    }
}

/// A scalar-valued function of time.
#[derive(Clone)]
pub enum ScalarSeq {
    Constant(f64),
    Varying(Arc<ScalarFn>),
}

impl ScalarSeq {
    pub fn varying<F>(f: F) -> Self
    where
        F: Fn(usize) -> f64 + Send + Sync + 'static,
    {
        ScalarSeq::Varying(Arc::new(f))
    }

    pub fn at(&self, k: usize) -> f64 {
        match self {
            ScalarSeq::Constant(v) => *v,
            ScalarSeq::Varying(f) => f(k),
        }
    }
}

impl From<f64> for ScalarSeq {
    fn from(v: f64) -> Self {
        ScalarSeq::Constant(v)
    }
}

impl fmt::Debug for ScalarSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarSeq::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            ScalarSeq::Varying(_) => f.write_str("Varying(..)"),
        }
    }
}

/// Validation thresholds applied when a model is constructed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelLimits {
    /// Largest accepted condition number of any `F_k`.
    pub f_condition_cap: f64,
    /// Smallest accepted eigenvalue of any `Q_k`.
    pub q_floor: f64,
}

impl Default for ModelLimits {
    fn default() -> Self {
        ModelLimits {
            f_condition_cap: 1e12,
            q_floor: 1e-12,
        }
    }
}

/// Measurement model and noise statistics of one sensor.
///
/// `y_k = γ_k C_k x_k + v_k` with `E γ_k = tau_k`, `Var γ_k ≤ phi_k` and
/// `E v vᵀ ⪯ R_k`.
#[derive(Debug, Clone)]
pub struct SensorSpec {
    pub id: usize,
    pub c: MatrixSeq,
    pub r: MatrixSeq,
    pub tau: ScalarSeq,
    pub phi: ScalarSeq,
}

impl SensorSpec {
    pub fn new(
        id: usize,
        c: impl Into<MatrixSeq>,
        r: impl Into<MatrixSeq>,
        tau: impl Into<ScalarSeq>,
        phi: impl Into<ScalarSeq>,
    ) -> Self {
        SensorSpec {
            id,
            c: c.into(),
            r: r.into(),
            tau: tau.into(),
            phi: phi.into(),
        }
    }

    /// Measurement dimension, read from `C_0`.
    pub fn dim(&self) -> usize {
        self.c.at(0).nrows()
    }
}

/// Dynamics `x_{k+1} = (A_k + F_k ε_k) x_k + w_k` plus the sensor list.
#[derive(Debug, Clone)]
pub struct SystemModel {
    n: usize,
    horizon: usize,
    a: MatrixSeq,
    f: MatrixSeq,
    sensors: Vec<SensorSpec>,
}

impl SystemModel {
    /// Validates every time-varying matrix over `0..=horizon`.
    pub fn new(
        n: usize,
        horizon: usize,
        a: impl Into<MatrixSeq>,
        f: impl Into<MatrixSeq>,
        sensors: Vec<SensorSpec>,
        limits: &ModelLimits,
    ) -> Result<Self> {
        let model = SystemModel {
            n,
            horizon,
            a: a.into(),
            f: f.into(),
            sensors,
        };
        model.validate(limits)?;
        Ok(model)
    }

    fn validate(&self, limits: &ModelLimits) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter(
                "state dimension must be positive".into(),
            ));
        }
        if self.sensors.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one sensor is required".into(),
            ));
        }
        let n = self.n;
        for k in 0..=self.horizon {
            check_dims(&format!("A_{k}"), &self.a.at(k), (n, n))?;
            let f = self.f.at(k);
            check_dims(&format!("F_{k}"), &f, (n, n))?;
            let cond = linalg::condition(&f);
            if !(cond <= limits.f_condition_cap) {
                return Err(Error::SingularNoiseMatrix { k, cond });
            }
        }
        for (idx, s) in self.sensors.iter().enumerate() {
            if s.id != idx {
                return Err(Error::InvalidParameter(format!(
                    "sensor at position {idx} carries id {}",
                    s.id
                )));
            }
            let m = s.dim();
            if m == 0 {
                return Err(Error::InvalidParameter(format!(
                    "sensor {idx} has no outputs"
                )));
            }
            for k in 0..=self.horizon {
                check_dims(&format!("C_{{{k},{idx}}}"), &s.c.at(k), (m, n))?;
                let r = s.r.at(k);
                check_dims(&format!("R_{{{k},{idx}}}"), &r, (m, m))?;
                check_sym_psd(&format!("R_{{{k},{idx}}}"), &r)?;
                let tau = s.tau.at(k);
                if !(tau > 0.0 && tau <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "tau of sensor {idx} at k={k} is {tau}, must lie in (0,1]"
                    )));
                }
                let phi = s.phi.at(k);
                if !(phi >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "phi of sensor {idx} at k={k} is {phi}, must be nonnegative"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn a(&self, k: usize) -> Cow<'_, DMatrix<f64>> {
        self.a.at(k)
    }

    pub fn f(&self, k: usize) -> Cow<'_, DMatrix<f64>> {
        self.f.at(k)
    }

    pub fn sensors(&self) -> &[SensorSpec] {
        &self.sensors
    }

    pub fn sensor(&self, i: usize) -> &SensorSpec {
        &self.sensors[i]
    }

    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }

    /// Same dynamics restricted to a subset of sensors, renumbered in order.
    pub fn with_sensors(&self, keep: &[usize]) -> Result<SystemModel> {
        let sensors = keep
            .iter()
            .enumerate()
            .map(|(new_id, &old)| {
                let mut s = self.sensors[old].clone();
                s.id = new_id;
                s
            })
            .collect();
        SystemModel::new(
            self.n,
            self.horizon,
            self.a.clone(),
            self.f.clone(),
            sensors,
            &ModelLimits {
                f_condition_cap: f64::INFINITY,
                q_floor: 0.0,
            },
        )
    }

    /// Same model over a different horizon.
    pub fn with_horizon(&self, horizon: usize, limits: &ModelLimits) -> Result<SystemModel> {
        SystemModel::new(
            self.n,
            horizon,
            self.a.clone(),
            self.f.clone(),
            self.sensors.clone(),
            limits,
        )
    }
}

/// Known second-moment bounds on the noise and the initial conditions.
#[derive(Debug, Clone)]
pub struct NoiseBounds {
    /// `E w wᵀ ⪯ Q_k`
    pub q: MatrixSeq,
    /// `E ε_k² ≤ μ_k`
    pub mu: ScalarSeq,
    /// `E x₀x₀ᵀ ⪯ P₀`
    pub p0: DMatrix<f64>,
    /// Per-sensor initial error bounds `P_{0,i}`.
    pub p0i: Vec<DMatrix<f64>>,
}

impl NoiseBounds {
    pub fn new(
        q: impl Into<MatrixSeq>,
        mu: impl Into<ScalarSeq>,
        p0: DMatrix<f64>,
        p0i: Vec<DMatrix<f64>>,
    ) -> Self {
        NoiseBounds {
            q: q.into(),
            mu: mu.into(),
            p0,
            p0i,
        }
    }

    pub fn validate(&self, model: &SystemModel, limits: &ModelLimits) -> Result<()> {
        let n = model.n();
        check_dims("P0", &self.p0, (n, n))?;
        check_sym_psd("P0", &self.p0)?;
        if self.p0i.len() != model.num_sensors() {
            return Err(Error::InvalidParameter(format!(
                "{} initial bounds for {} sensors",
                self.p0i.len(),
                model.num_sensors()
            )));
        }
        for (i, p) in self.p0i.iter().enumerate() {
            let what = format!("P0_{i}");
            check_dims(&what, p, (n, n))?;
            check_sym_psd(&what, p)?;
        }
        for k in 0..=model.horizon() {
            let q = self.q.at(k);
            let what = format!("Q_{k}");
            check_dims(&what, &q, (n, n))?;
            check_sym_psd(&what, &q)?;
            if linalg::min_eigenvalue(&q) < limits.q_floor {
                return Err(Error::InvalidParameter(format!(
                    "{what} has smallest eigenvalue below the floor {:e}",
                    limits.q_floor
                )));
            }
            let mu = self.mu.at(k);
            if !(mu >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "mu_{k} = {mu} is negative"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_dims(what: &str, m: &DMatrix<f64>, expected: (usize, usize)) -> Result<()> {
    let got = m.shape();
    if got != expected {
        return Err(Error::Dimension {
            what: what.into(),
            expected,
            got,
        });
    }
    Ok(())
}

pub(crate) fn check_sym_psd(what: &str, m: &DMatrix<f64>) -> Result<()> {
    let scale = linalg::max_abs(m).max(1.0);
    if linalg::asymmetry(m) > 1e-10 * scale || !linalg::is_psd(m) {
        return Err(Error::NotPositiveDefinite { what: what.into() });
    }
    Ok(())
}

/// A state estimate together with its consistency bound matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatePair {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl EstimatePair {
    /// Checks symmetry and PSD-ness within `1e-10`, then symmetrizes.
    pub fn new(x: DVector<f64>, p: DMatrix<f64>) -> Result<Self> {
        check_dims("P", &p, (x.len(), x.len()))?;
        if linalg::asymmetry(&p) > 1e-10 || linalg::min_eigenvalue(&p) < -PSD_TOL {
            return Err(Error::NotPositiveDefinite {
                what: "estimate bound".into(),
            });
        }
        Ok(EstimatePair {
            x,
            p: linalg::symmetrized(p),
        })
    }

    /// Skips validation. Used inside the recursions, which symmetrize as they go.
    pub fn new_unchecked(x: DVector<f64>, p: DMatrix<f64>) -> Self {
        EstimatePair { x, p }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Weighted digraph over the sensors. `weights[(i, j)] > 0` means node `i`
/// receives from node `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorGraph {
    weights: DMatrix<f64>,
    neighbors: Vec<Vec<usize>>,
}

/// Row tolerance for stochasticity checks.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum GraphViolation {
    NegativeWeight { i: usize, j: usize, value: f64 },
    ZeroDiagonal { i: usize },
    RowSum { i: usize, sum: f64 },
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphViolation::NegativeWeight { i, j, value } => {
                write!(f, "negative weight a[{i},{j}] = {value}")
            }
            GraphViolation::ZeroDiagonal { i } => write!(f, "non-positive diagonal at node {i}"),
            GraphViolation::RowSum { i, sum } => write!(f, "row {i} sums to {sum}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<GraphViolation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl SensorGraph {
    /// Wraps a square weight matrix without checking the row constraints.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        if !weights.is_square() || weights.nrows() == 0 {
            return Err(Error::InvalidGraph(format!(
                "weight matrix must be square and non-empty, got {:?}",
                weights.shape()
            )));
        }
        let n = weights.nrows();
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| weights[(i, j)] > 0.0).collect())
            .collect();
        Ok(SensorGraph { weights, neighbors })
    }

    /// Like [`SensorGraph::from_weights`] but rejects graphs with violations.
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        let g = SensorGraph::from_weights(weights)?;
        let report = validate_graph(&g);
        if let Some(v) = report.violations.first() {
            return Err(Error::InvalidGraph(format!("{v}")));
        }
        Ok(g)
    }

    /// Self-loop-only graph.
    pub fn isolated(n: usize) -> Self {
        SensorGraph::from_weights(DMatrix::identity(n, n)).expect("identity is square")
    }

    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// In-neighbors of `i`, including `i` itself when the graph is valid.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }
}

/// Lists every violated row constraint of the adjacency matrix.
pub fn validate_graph(g: &SensorGraph) -> ValidationReport {
    let n = g.len();
    let mut violations = Vec::new();
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..n {
            let a = g.weight(i, j);
            if a < 0.0 {
                violations.push(GraphViolation::NegativeWeight { i, j, value: a });
            }
            sum += a;
        }
        if !(g.weight(i, i) > 0.0) {
            violations.push(GraphViolation::ZeroDiagonal { i });
        }
        if !(libm::fabs(sum - 1.0) <= ROW_SUM_TOL) {
            violations.push(GraphViolation::RowSum { i, sum });
        }
    }
    ValidationReport { violations }
}

/// True iff every node reaches every other node along positive-weight links.
pub fn is_strongly_connected(g: &SensorGraph) -> bool {
    let n = g.len();
    // reach[i][j]: information flows from j to i
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        reach[i][i] = true;
        for j in 0..n {
            if g.weight(i, j) > 0.0 {
                reach[i][j] = true;
            }
        }
    }
    for m in 0..n {
        for i in 0..n {
            if reach[i][m] {
                for j in 0..n {
                    if reach[m][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach.iter().all(|row| row.iter().all(|&r| r))
}

/// Metropolis weights `a_ij = 1 / max(d_i, d_j)` on an undirected edge list,
/// where `d_i` counts node `i` itself. Diagonals absorb the remainder.
pub fn metropolis_weights(edges: &[(usize, usize)], n: usize) -> Result<SensorGraph> {
    let mut adj = vec![vec![false; n]; n];
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::InvalidGraph(format!(
                "edge ({a},{b}) out of range for {n} nodes"
            )));
        }
        if a == b {
            return Err(Error::InvalidGraph(format!("self edge ({a},{a})")));
        }
        if adj[a][b] {
            return Err(Error::MultiEdge(a.min(b), a.max(b)));
        }
        adj[a][b] = true;
        adj[b][a] = true;
    }
    let degree: Vec<usize> = adj
        .iter()
        .map(|row| 1 + row.iter().filter(|&&e| e).count())
        .collect();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if adj[i][j] {
                let a = 1.0 / degree[i].max(degree[j]) as f64;
                w[(i, j)] = a;
                off += a;
            }
        }
        w[(i, i)] = 1.0 - off;
    }
    SensorGraph::from_weights(w)
}

/// Human-readable one-line summary of a report.
pub fn describe_report(report: &ValidationReport) -> String {
    if report.is_valid() {
        return "valid".into();
    }
    let parts: Vec<String> = report.violations.iter().map(|v| format!("{v}")).collect();
    parts.join("; ")
}
