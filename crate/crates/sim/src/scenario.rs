//! Scenario description and the built-in presets.

use std::fmt;
use std::str::FromStr;

use drkf_core::channel::{ChannelBounds, SamplerMode};
use drkf_core::drkf::FilterSetup;
use drkf_core::linalg::mat;
use drkf_core::model::{
    self, MatrixSeq, ModelLimits, NoiseBounds, ScalarSeq, SensorGraph, SensorSpec, SystemModel,
};
use drkf_core::swf::SolverOptions;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{SimError, SimResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Drkf,
    DrkfSwf,
    Ckf,
    Crkf,
}

impl FilterKind {
    pub fn is_centralized(self) -> bool {
        matches!(self, FilterKind::Ckf | FilterKind::Crkf)
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterKind::Drkf => "drkf",
            FilterKind::DrkfSwf => "drkf-swf",
            FilterKind::Ckf => "ckf",
            FilterKind::Crkf => "crkf",
        })
    }
}

impl FromStr for FilterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "drkf" => Ok(FilterKind::Drkf),
            "drkf-swf" | "swf" => Ok(FilterKind::DrkfSwf),
            "ckf" => Ok(FilterKind::Ckf),
            "crkf" => Ok(FilterKind::Crkf),
            other => Err(format!(
                "unknown filter '{other}' (drkf, drkf-swf, ckf, crkf)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelMode {
    Noiseless,
    /// Entries uniform on `[-amplitude, amplitude]` on every link between distinct sensors.
    PaperLiteral {
        amplitude: f64,
    },
    BoundRespecting {
        stretch: f64,
    },
}

impl ChannelMode {
    pub fn sampler_mode(self) -> SamplerMode {
        match self {
            ChannelMode::Noiseless => SamplerMode::Noiseless,
            ChannelMode::PaperLiteral { amplitude } => SamplerMode::PaperLiteral { amplitude },
            ChannelMode::BoundRespecting { stretch } => SamplerMode::BoundRespecting { stretch },
        }
    }
}

/// Zero-mean distribution scaled to a given covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dist {
    Normal,
    /// Independent uniforms on a symmetric interval, then mixed by the
    /// covariance square root.
    Uniform,
    Zero,
}

impl FromStr for Dist {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "normal" => Ok(Dist::Normal),
            "uniform" => Ok(Dist::Uniform),
            "zero" => Ok(Dist::Zero),
            other => Err(format!(
                "unknown distribution '{other}' (normal, uniform, zero)"
            )),
        }
    }
}

/// How the true noises are drawn. Covariances come from the noise bounds
/// (met with equality) except the initial state, which has its own.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub x0_mean: DVector<f64>,
    pub x0_cov: DMatrix<f64>,
    pub x0: Dist,
    pub process: Dist,
    pub multiplicative: Dist,
    pub measurement: Dist,
    /// `γ` uniform on `τ ± sqrt(3φ)`; `false` fixes `γ = τ`.
    pub fading_uniform: bool,
}

impl NoiseSpec {
    pub fn standard(n: usize) -> Self {
        NoiseSpec {
            x0_mean: DVector::zeros(n),
            x0_cov: DMatrix::identity(n, n),
            x0: Dist::Normal,
            process: Dist::Normal,
            multiplicative: Dist::Normal,
            measurement: Dist::Normal,
            fading_uniform: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub setup: FilterSetup,
    pub x0_hat: Vec<DVector<f64>>,
    pub noise: NoiseSpec,
    pub channel_mode: ChannelMode,
    pub filter: FilterKind,
    pub window: usize,
    pub delta: usize,
    pub solver: SolverOptions,
    pub runs: usize,
    pub seed: u64,
    /// Steps excluded from consistency checks.
    pub warmup: usize,
    /// Inclusive step range for `MSE_max` and `P_max`.
    pub tail: (usize, usize),
}

impl Scenario {
    pub fn horizon(&self) -> usize {
        self.setup.model.horizon()
    }

    pub fn n(&self) -> usize {
        self.setup.model.n()
    }

    pub fn num_sensors(&self) -> usize {
        self.setup.model.num_sensors()
    }

    pub fn validate(&self) -> SimResult<()> {
        self.setup.validate()?;
        let n = self.n();
        if self.x0_hat.len() != self.num_sensors() || self.x0_hat.iter().any(|x| x.len() != n) {
            return Err(SimError::Invalid(
                "initial estimates do not match sensors and state size".into(),
            ));
        }
        if self.noise.x0_mean.len() != n || self.noise.x0_cov.shape() != (n, n) {
            return Err(SimError::Invalid(
                "initial state distribution has the wrong size".into(),
            ));
        }
        if self.runs == 0 {
            return Err(SimError::Invalid("runs must be at least 1".into()));
        }
        if self.window == 0 || self.delta == 0 {
            return Err(SimError::Invalid(
                "window length and interval must be at least 1".into(),
            ));
        }
        if self.tail.0 > self.tail.1 || self.tail.1 > self.horizon() {
            return Err(SimError::Invalid(format!(
                "tail window {:?} outside horizon {}",
                self.tail,
                self.horizon()
            )));
        }
        for s in self.setup.model.sensors() {
            for k in 0..=self.horizon() {
                let (lo, hi) = fading_interval(s.tau.at(k), s.phi.at(k));
                if lo < 0.0 || hi > 1.0 {
                    return Err(SimError::Invalid(format!(
                        "fading interval [{lo}, {hi}] of sensor {} at k={k} leaves [0, 1]",
                        s.id + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Same scenario with a different horizon; the tail window is clipped.
    pub fn with_horizon(mut self, horizon: usize) -> SimResult<Self> {
        self.setup.model = self
            .setup
            .model
            .with_horizon(horizon, &ModelLimits::default())?;
        self.tail = (self.tail.0.min(horizon), self.tail.1.min(horizon));
        Ok(self)
    }
}

/// Support `τ ± sqrt(3φ)` of the uniform fading factor, whose variance is `φ`.
pub fn fading_interval(tau: f64, phi: f64) -> (f64, f64) {
    let h = (3.0 * phi).sqrt();
    (tau - h, tau + h)
}

/// One row of the initial-quantity table: `P_{0,i}`, `Π₀`, `D`, `Υ` as
/// multiples of `I₂`, with the published `MSE_max` and `P_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table2Case {
    pub case: usize,
    pub p0i: f64,
    pub pi0: f64,
    pub d: f64,
    pub upsilon: f64,
    pub mse_max: f64,
    pub p_max: f64,
}

pub const TABLE2: [Table2Case; 5] = [
    Table2Case {
        case: 1,
        p0i: 100.0,
        pi0: 1.0,
        d: 1.0,
        upsilon: 1.0,
        mse_max: 0.74,
        p_max: 4.15,
    },
    Table2Case {
        case: 2,
        p0i: 500.0,
        pi0: 1.0,
        d: 1.0,
        upsilon: 1.0,
        mse_max: 0.75,
        p_max: 4.15,
    },
    Table2Case {
        case: 3,
        p0i: 100.0,
        pi0: 5.0,
        d: 1.0,
        upsilon: 1.0,
        mse_max: 0.73,
        p_max: 4.16,
    },
    Table2Case {
        case: 4,
        p0i: 100.0,
        pi0: 1.0,
        d: 5.0,
        upsilon: 1.0,
        mse_max: 0.89,
        p_max: 9.38,
    },
    Table2Case {
        case: 5,
        p0i: 100.0,
        pi0: 1.0,
        d: 1.0,
        upsilon: 5.0,
        mse_max: 0.90,
        p_max: 9.38,
    },
];

pub const DEFAULT_SEED: u64 = 2024;
pub const DEFAULT_RUNS: usize = 100;
pub const DEFAULT_HORIZON: usize = 100;

/// `A_k` of the first example with `t_k = 0.1 k`.
pub fn example1_a(k: usize) -> DMatrix<f64> {
    let t = 0.1 * k as f64;
    mat(&[&[0.8 * (1.0 + 0.01 * t), 0.01], &[0.1, 0.98]])
}

/// `μ_k = 0.1 / (t_k + 2)`.
pub fn example1_mu(k: usize) -> f64 {
    0.1 / (0.1 * k as f64 + 2.0)
}

pub const EXAMPLE2_A: [[f64; 2]; 2] = [[1.05, -0.1], [0.1, 0.98]];

/// The four `(C, τ, φ)` sensor types of the first example.
pub fn sensor_types() -> [(DMatrix<f64>, f64, f64); 4] {
    let y = mat(&[&[0.0, 1.0]]);
    [
        (y.clone(), 0.85, 0.8e-3),
        (y.clone(), 0.15, 0.8e-3),
        (y, 0.20, 0.8e-3),
        (mat(&[&[1.0, 0.0]]), 0.85, 0.8e-3),
    ]
}

pub fn example1_graph() -> SensorGraph {
    SensorGraph::new(mat(&[
        &[0.3, 0.7, 0.0, 0.0],
        &[0.0, 0.4, 0.6, 0.0],
        &[0.0, 0.0, 0.3, 0.7],
        &[0.3, 0.4, 0.0, 0.3],
    ]))
    .expect("example graph is valid")
}

fn base(
    name: String,
    model: SystemModel,
    bounds: NoiseBounds,
    graph: SensorGraph,
    upsilon: f64,
    d: f64,
) -> SimResult<Scenario> {
    let n = model.n();
    let sensors = model.num_sensors();
    let eye = DMatrix::<f64>::identity(n, n);
    let channel = ChannelBounds::uniform(&graph, &(upsilon * &eye), &(d * &eye))?;
    let setup = FilterSetup::new(model, bounds, graph, channel)?;
    let scenario = Scenario {
        name,
        setup,
        x0_hat: vec![DVector::from_element(n, 1.0); sensors],
        noise: NoiseSpec::standard(n),
        channel_mode: ChannelMode::PaperLiteral { amplitude: 1.0 },
        filter: FilterKind::Drkf,
        window: 2,
        delta: 5,
        solver: SolverOptions::default(),
        runs: DEFAULT_RUNS,
        seed: DEFAULT_SEED,
        warmup: 5,
        tail: (51, DEFAULT_HORIZON),
    };
    scenario.validate()?;
    Ok(scenario)
}

/// First example, one of the five initial-quantity cases.
pub fn example1(case: usize) -> SimResult<Scenario> {
    let row = TABLE2
        .iter()
        .find(|c| c.case == case)
        .ok_or_else(|| SimError::Invalid(format!("case {case} not in 1..=5")))?;
    let types = sensor_types();
    let r = [0.07, 0.08, 0.09, 0.09];
    let sensors = (0..4)
        .map(|i| {
            SensorSpec::new(
                i,
                types[i].0.clone(),
                mat(&[&[r[i]]]),
                types[i].1,
                types[i].2,
            )
        })
        .collect();
    let model = SystemModel::new(
        2,
        DEFAULT_HORIZON,
        MatrixSeq::varying(example1_a),
        DMatrix::identity(2, 2),
        sensors,
        &ModelLimits::default(),
    )?;
    let eye = DMatrix::<f64>::identity(2, 2);
    let bounds = NoiseBounds::new(
        0.1 * &eye,
        ScalarSeq::varying(example1_mu),
        row.pi0 * &eye,
        vec![row.p0i * &eye; 4],
    );
    let name = if case == 1 {
        "example1".to_string()
    } else {
        format!("example1-case{case}")
    };
    base(name, model, bounds, example1_graph(), row.upsilon, row.d)
}

pub const EXAMPLE2_NODES: usize = 50;
pub const EXAMPLE2_RADIUS: f64 = 0.2;
pub const EXAMPLE2_TOPOLOGY_SEED: u64 = 50;

/// Seeded random geometric graph on the unit square, redrawn until connected.
/// Returns the undirected edge list.
pub fn random_geometric_edges(nodes: usize, radius: f64, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let pts: Vec<(f64, f64)> = (0..nodes)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let mut edges = Vec::new();
        for i in 0..nodes {
            for j in i + 1..nodes {
                let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
                if dx * dx + dy * dy < radius * radius {
                    edges.push((i, j));
                }
            }
        }
        if connected(nodes, &edges) {
            return edges;
        }
    }
}

fn connected(nodes: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); nodes];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; nodes];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// Second example: 50 sensors on a random connected graph with Metropolis
/// weights, unstable constant dynamics and no multiplicative noise.
pub fn example2(topology_seed: u64) -> SimResult<Scenario> {
    let edges = random_geometric_edges(EXAMPLE2_NODES, EXAMPLE2_RADIUS, topology_seed);
    let graph = model::metropolis_weights(&edges, EXAMPLE2_NODES)?;
    let types = sensor_types();
    let mut rng = ChaCha8Rng::seed_from_u64(topology_seed ^ 0x5e45_0125);
    let sensors = (0..EXAMPLE2_NODES)
        .map(|i| {
            let (c, tau, phi) = &types[rng.random_range(0..4)];
            SensorSpec::new(i, c.clone(), mat(&[&[1.0]]), *tau, *phi)
        })
        .collect();
    let a = DMatrix::from_fn(2, 2, |r, c| EXAMPLE2_A[r][c]);
    let model = SystemModel::new(
        2,
        DEFAULT_HORIZON,
        a,
        DMatrix::identity(2, 2),
        sensors,
        &ModelLimits::default(),
    )?;
    let eye = DMatrix::<f64>::identity(2, 2);
    let bounds = NoiseBounds::new(
        0.1 * &eye,
        0.0,
        eye.clone(),
        vec![100.0 * &eye; EXAMPLE2_NODES],
    );
    base("example2".into(), model, bounds, graph, 1.0, 1.0)
}

/// Names accepted by `preset`.
pub const PRESETS: [&str; 6] = [
    "example1",
    "example1-case2",
    "example1-case3",
    "example1-case4",
    "example1-case5",
    "example2",
];

/// Looks up a preset; `case` overrides the example-1 case.
pub fn preset(name: &str, case: Option<usize>) -> SimResult<Scenario> {
    match (name, case) {
        ("example2", None) => example2(EXAMPLE2_TOPOLOGY_SEED),
        ("example2", Some(_)) => Err(SimError::Invalid("--case applies to example1 only".into())),
        ("example1", c) => example1(c.unwrap_or(1)),
        (other, None) if other.starts_with("example1-case") => {
            let c = other["example1-case".len()..]
                .parse()
                .map_err(|_| SimError::Invalid(format!("unknown scenario '{other}'")))?;
            example1(c)
        }
        (other, _) => Err(SimError::Invalid(format!(
            "unknown scenario '{other}' (available: {})",
            PRESETS.join(", ")
        ))),
    }
}

/// All presets in `PRESETS` order.
pub fn builtin_scenarios() -> SimResult<Vec<Scenario>> {
    PRESETS.iter().map(|p| preset(p, None)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use drkf_core::model::{is_strongly_connected, validate_graph};

    #[test]
    fn fading_interval_of_first_sensor() {
        let (lo, hi) = fading_interval(0.85, 0.8e-3);
        // half-width sqrt(3 · 0.8e-3) = sqrt(2.4e-3)
        assert!((lo - (0.85 - 0.048989794855663561)).abs() < 1e-12);
        assert!((hi - (0.85 + 0.048989794855663561)).abs() < 1e-12);
        assert!((lo - 0.801).abs() < 1e-3 && (hi - 0.899).abs() < 1e-3);
        assert_eq!(fading_interval(1.0, 0.0), (1.0, 1.0));
    }

    #[test]
    fn example1_constants() {
        let s = example1(1).unwrap();
        assert_eq!(s.horizon(), 100);
        assert_eq!(s.num_sensors(), 4);
        assert_eq!(*s.setup.model.a(0), mat(&[&[0.8, 0.01], &[0.1, 0.98]]));
        assert!((s.setup.model.a(100)[(0, 0)] - 0.8 * 1.1).abs() < 1e-15);
        assert!((s.setup.bounds.mu.at(0) - 0.05).abs() < 1e-15);
        assert!((s.setup.bounds.mu.at(100) - 0.1 / 12.0).abs() < 1e-15);
        assert_eq!(s.setup.model.sensor(3).r.at(0)[(0, 0)], 0.09);
        assert_eq!(s.setup.model.sensor(1).tau.at(7), 0.15);
        assert_eq!(s.x0_hat[2], DVector::from_element(2, 1.0));
        assert_eq!(
            s.setup.bounds.p0i[0],
            100.0 * DMatrix::<f64>::identity(2, 2)
        );
    }

    #[test]
    fn table_cases_set_only_their_quantity() {
        let c4 = example1(4).unwrap();
        let link = drkf_core::channel::Link::new(0, 1);
        assert_eq!(
            c4.setup.channel.d(link).unwrap(),
            &(5.0 * DMatrix::<f64>::identity(2, 2))
        );
        assert_eq!(
            c4.setup.channel.upsilon(link).unwrap(),
            &DMatrix::<f64>::identity(2, 2)
        );
        let c3 = example1(3).unwrap();
        assert_eq!(c3.setup.bounds.p0, 5.0 * DMatrix::<f64>::identity(2, 2));
        assert!(example1(6).is_err());
    }

    #[test]
    fn example2_graph_is_connected_and_stochastic() {
        let s = example2(EXAMPLE2_TOPOLOGY_SEED).unwrap();
        assert_eq!(s.num_sensors(), 50);
        assert!(validate_graph(&s.setup.graph).is_valid());
        assert!(is_strongly_connected(&s.setup.graph));
        assert_eq!(s.setup.bounds.mu.at(17), 0.0);
        assert_eq!(s.setup.model.sensor(10).r.at(0)[(0, 0)], 1.0);
        // symmetric Metropolis weights
        let w = s.setup.graph.weights();
        assert!((w - w.transpose()).abs().max() < 1e-15);
    }

    #[test]
    fn presets_resolve() {
        for p in PRESETS {
            assert_eq!(preset(p, None).unwrap().name, p);
        }
        assert_eq!(preset("example1", Some(4)).unwrap().name, "example1-case4");
        assert!(preset("nope", None).is_err());
    }

    #[test]
    fn fading_outside_unit_interval_rejected() {
        let mut s = example1(1).unwrap();
        let mut sensors = s.setup.model.sensors().to_vec();
        sensors[0].phi = 0.1.into();
        s.setup.model = SystemModel::new(
            2,
            100,
            MatrixSeq::varying(example1_a),
            DMatrix::identity(2, 2),
            sensors,
            &ModelLimits::default(),
        )
        .unwrap();
        assert!(matches!(s.validate(), Err(SimError::Invalid(_))));
    }
}
