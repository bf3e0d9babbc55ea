//! TOML scenario files.
//!
//! A file either starts from a preset and overrides run parameters, or
//! defines `[model]`, `[[sensors]]` and `[graph]` in full. Unknown keys are
//! rejected.
//!
//! ```toml
//! preset = "example1"
//! case = 4
//! filter = "drkf-swf"
//! runs = 50
//!
//! [channel]
//! mode = "bound-respecting"
//! ```

use std::path::Path;

use drkf_core::channel::ChannelBounds;
use drkf_core::drkf::FilterSetup;
use drkf_core::model::{
    self, MatrixSeq, ModelLimits, NoiseBounds, ScalarSeq, SensorGraph, SensorSpec, SystemModel,
};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{SimError, SimResult};
use crate::scenario::{self, ChannelMode, Dist, FilterKind, NoiseSpec, Scenario};

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub preset: Option<String>,
    pub case: Option<usize>,
    pub name: Option<String>,
    pub filter: Option<String>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub horizon: Option<usize>,
    pub window: Option<usize>,
    pub delta: Option<usize>,
    pub warmup: Option<usize>,
    pub tail: Option<[usize; 2]>,
    pub channel: Option<ChannelConfig>,
    pub model: Option<ModelConfig>,
    pub sensors: Option<Vec<SensorConfig>>,
    pub graph: Option<GraphConfig>,
    pub noise: Option<NoiseConfig>,
    pub solver: Option<SolverConfig>,
    pub output: Option<OutputConfig>,
}

/// A matrix literal or a generator name.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum MatrixValue {
    Rows(Vec<Vec<f64>>),
    Named(String),
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ScalarValue {
    Value(f64),
    Named(String),
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub mode: Option<String>,
    pub amplitude: Option<f64>,
    pub stretch: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n: usize,
    pub a: MatrixValue,
    pub f: Option<MatrixValue>,
    pub q: MatrixValue,
    pub mu: Option<ScalarValue>,
    pub p0: MatrixValue,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub c: MatrixValue,
    pub r: MatrixValue,
    pub tau: f64,
    pub phi: Option<f64>,
    pub p0i: MatrixValue,
    pub x0_hat: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub weights: Option<Vec<Vec<f64>>>,
    /// Undirected edges, 1-based, weighted by the Metropolis rule.
    pub edges: Option<Vec<[usize; 2]>>,
    pub upsilon: Option<MatrixValue>,
    pub d: Option<MatrixValue>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub x0: Option<String>,
    pub x0_mean: Option<Vec<f64>>,
    pub x0_cov: Option<MatrixValue>,
    pub process: Option<String>,
    pub multiplicative: Option<String>,
    pub measurement: Option<String>,
    /// "uniform" or "fixed".
    pub fading: Option<String>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: Option<usize>,
    pub feasibility_iters: Option<usize>,
    pub rel_tol: Option<f64>,
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
    pub svg: Option<bool>,
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::Invalid(msg.into())
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> SimResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(invalid(format!(
            "{what}: rows must be non-empty and of equal length"
        )));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl MatrixValue {
    /// Constant matrix; `identity` needs the size.
    fn constant(&self, what: &str, n: usize) -> SimResult<DMatrix<f64>> {
        match self {
            MatrixValue::Rows(rows) => rows_to_matrix(rows, what),
            MatrixValue::Named(name) if name == "identity" => Ok(DMatrix::identity(n, n)),
            MatrixValue::Named(name) if name == "example2_A" => {
                Ok(DMatrix::from_fn(2, 2, |r, c| scenario::EXAMPLE2_A[r][c]))
            }
            MatrixValue::Named(name) => Err(invalid(format!(
                "{what}: unknown constant generator '{name}'"
            ))),
        }
    }

    fn sequence(&self, what: &str, n: usize) -> SimResult<MatrixSeq> {
        match self {
            MatrixValue::Named(name) if name == "example1_A" => {
                Ok(MatrixSeq::varying(scenario::example1_a))
            }
            other => Ok(other.constant(what, n)?.into()),
        }
    }
}

impl ScalarValue {
    fn sequence(&self, what: &str) -> SimResult<ScalarSeq> {
        match self {
            ScalarValue::Value(v) => Ok((*v).into()),
            ScalarValue::Named(name) if name == "example1_mu" => {
                Ok(ScalarSeq::varying(scenario::example1_mu))
            }
            ScalarValue::Named(name) => Err(invalid(format!("{what}: unknown generator '{name}'"))),
        }
    }
}

fn parse_dist(v: &Option<String>, default: Dist, what: &str) -> SimResult<Dist> {
    v.as_deref().map_or(Ok(default), |s| {
        s.parse()
            .map_err(|e: String| invalid(format!("{what}: {e}")))
    })
}

/// Parses the channel mode names used by files and flags.
pub fn parse_channel_mode(mode: &str, amplitude: f64, stretch: f64) -> SimResult<ChannelMode> {
    match mode {
        "paper-literal" => Ok(ChannelMode::PaperLiteral { amplitude }),
        "bound-respecting" => Ok(ChannelMode::BoundRespecting { stretch }),
        "noiseless" => Ok(ChannelMode::Noiseless),
        other => Err(invalid(format!(
            "unknown channel mode '{other}' (paper-literal, bound-respecting, noiseless)"
        ))),
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> SimResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| SimError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Builds and validates the scenario.
    pub fn to_scenario(&self) -> SimResult<Scenario> {
        let custom = [
            self.model.is_some(),
            self.sensors.is_some(),
            self.graph.is_some(),
        ];
        let mut s = match (&self.preset, custom) {
            (Some(_), c) if c.iter().any(|&b| b) => {
                return Err(invalid(
                    "a preset cannot be combined with [model], [[sensors]] or [graph]",
                ))
            }
            (Some(p), _) => scenario::preset(p, self.case)?,
            (None, [true, true, true]) => self.custom()?,
            (None, _) => {
                return Err(invalid(
                    "either `preset` or all of [model], [[sensors]], [graph] are required",
                ))
            }
        };
        if let Some(h) = self.horizon {
            s = s.with_horizon(h)?;
        }
        if let Some(name) = &self.name {
            s.name = name.clone();
        }
        if let Some(f) = &self.filter {
            s.filter = f.parse::<FilterKind>().map_err(invalid)?;
        }
        s.runs = self.runs.unwrap_or(s.runs);
        s.seed = self.seed.unwrap_or(s.seed);
        s.window = self.window.unwrap_or(s.window);
        s.delta = self.delta.unwrap_or(s.delta);
        s.warmup = self.warmup.unwrap_or(s.warmup);
        if let Some([a, b]) = self.tail {
            s.tail = (a, b);
        }
        if let Some(c) = &self.channel {
            let mode = c.mode.as_deref().unwrap_or("paper-literal");
            s.channel_mode =
                parse_channel_mode(mode, c.amplitude.unwrap_or(1.0), c.stretch.unwrap_or(1.0))?;
        }
        if let Some(n) = &self.noise {
            let dim = s.n();
            s.noise.x0 = parse_dist(&n.x0, s.noise.x0, "noise.x0")?;
            s.noise.process = parse_dist(&n.process, s.noise.process, "noise.process")?;
            s.noise.multiplicative = parse_dist(
                &n.multiplicative,
                s.noise.multiplicative,
                "noise.multiplicative",
            )?;
            s.noise.measurement =
                parse_dist(&n.measurement, s.noise.measurement, "noise.measurement")?;
            if let Some(m) = &n.x0_mean {
                s.noise.x0_mean = DVector::from_vec(m.clone());
            }
            if let Some(c) = &n.x0_cov {
                s.noise.x0_cov = c.constant("noise.x0_cov", dim)?;
            }
            s.noise.fading_uniform = match n.fading.as_deref() {
                None | Some("uniform") => true,
                Some("fixed") => false,
                Some(other) => {
                    return Err(invalid(format!(
                        "noise.fading: unknown '{other}' (uniform, fixed)"
                    )))
                }
            };
        }
        if let Some(o) = &self.solver {
            s.solver.max_iters = o.max_iters.unwrap_or(s.solver.max_iters);
            s.solver.feasibility_iters = o.feasibility_iters.unwrap_or(s.solver.feasibility_iters);
            s.solver.rel_tol = o.rel_tol.unwrap_or(s.solver.rel_tol);
            s.solver.margin = o.margin.unwrap_or(s.solver.margin);
        }
        s.validate()?;
        Ok(s)
    }

    fn custom(&self) -> SimResult<Scenario> {
        let (m, sensors, g) = (
            self.model.as_ref().unwrap(),
            self.sensors.as_ref().unwrap(),
            self.graph.as_ref().unwrap(),
        );
        let n = m.n;
        let horizon = self.horizon.unwrap_or(scenario::DEFAULT_HORIZON);
        let specs = sensors
            .iter()
            .enumerate()
            .map(|(i, sc)| {
                Ok(SensorSpec::new(
                    i,
                    sc.c.constant(&format!("sensors[{i}].c"), n)?,
                    sc.r.constant(&format!("sensors[{i}].r"), n)?,
                    sc.tau,
                    sc.phi.unwrap_or(0.0),
                ))
            })
            .collect::<SimResult<Vec<_>>>()?;
        let f = match &m.f {
            Some(f) => f.sequence("model.f", n)?,
            None => DMatrix::<f64>::identity(n, n).into(),
        };
        let model = SystemModel::new(
            n,
            horizon,
            m.a.sequence("model.a", n)?,
            f,
            specs,
            &ModelLimits::default(),
        )?;
        let p0i = sensors
            .iter()
            .enumerate()
            .map(|(i, sc)| sc.p0i.constant(&format!("sensors[{i}].p0i"), n))
            .collect::<SimResult<Vec<_>>>()?;
        let mu = match &m.mu {
            Some(v) => v.sequence("model.mu")?,
            None => 0.0.into(),
        };
        let bounds = NoiseBounds::new(
            m.q.sequence("model.q", n)?,
            mu,
            m.p0.constant("model.p0", n)?,
            p0i,
        );
        let graph = match (&g.weights, &g.edges) {
            (Some(w), None) => SensorGraph::new(rows_to_matrix(w, "graph.weights")?)?,
            (None, Some(e)) => {
                let edges = e
                    .iter()
                    .map(|[a, b]| {
                        if *a == 0 || *b == 0 {
                            Err(invalid("graph.edges are 1-based"))
                        } else {
                            Ok((a - 1, b - 1))
                        }
                    })
                    .collect::<SimResult<Vec<_>>>()?;
                model::metropolis_weights(&edges, sensors.len())?
            }
            _ => return Err(invalid("graph needs exactly one of `weights` or `edges`")),
        };
        let zero = DMatrix::<f64>::zeros(n, n);
        let upsilon = g
            .upsilon
            .as_ref()
            .map_or(Ok(zero.clone()), |v| v.constant("graph.upsilon", n))?;
        let d =
            g.d.as_ref()
                .map_or(Ok(zero), |v| v.constant("graph.d", n))?;
        let channel = ChannelBounds::uniform(&graph, &upsilon, &d)?;
        let setup = FilterSetup::new(model, bounds, graph, channel)?;
        Ok(Scenario {
            name: self.name.clone().unwrap_or_else(|| "custom".into()),
            x0_hat: sensors
                .iter()
                .map(|sc| {
                    sc.x0_hat
                        .clone()
                        .map_or(DVector::zeros(n), DVector::from_vec)
                })
                .collect(),
            setup,
            noise: NoiseSpec::standard(n),
            channel_mode: ChannelMode::PaperLiteral { amplitude: 1.0 },
            filter: FilterKind::Drkf,
            window: 2,
            delta: 5,
            solver: Default::default(),
            runs: scenario::DEFAULT_RUNS,
            seed: scenario::DEFAULT_SEED,
            warmup: 5,
            tail: ((horizon / 2 + 1).min(horizon), horizon),
        })
    }
}
