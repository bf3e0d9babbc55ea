//! Monte Carlo orchestration and statistics.

use std::ops::RangeInclusive;

use drkf_core::baselines::{CentralKind, Centralized};
use drkf_core::channel::LinkNoiseSampler;
use drkf_core::drkf::Drkf;
use drkf_core::model::EstimatePair;
use drkf_core::swf::{FusionKind, Swf, SwfSchedule};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{SimError, SimResult};
use crate::scenario::{FilterKind, Scenario};
use crate::simulate::{channel_seed, run_seed, simulate_measurements, simulate_truth};

/// Per-step, per-series squared error and bound trace of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub err: Vec<Vec<f64>>,
    pub trp: Vec<Vec<f64>>,
    pub fusion: FusionCounts,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusionCounts {
    pub plain: usize,
    pub optimized: usize,
    pub infeasible: usize,
    pub not_converged: usize,
}

impl FusionCounts {
    fn add(&mut self, kind: FusionKind) {
        match kind {
            FusionKind::Plain => self.plain += 1,
            FusionKind::Optimized => self.optimized += 1,
            FusionKind::Infeasible => self.infeasible += 1,
            FusionKind::NotConverged => self.not_converged += 1,
        }
    }

    fn merge(&mut self, o: &FusionCounts) {
        self.plain += o.plain;
        self.optimized += o.optimized;
        self.infeasible += o.infeasible;
        self.not_converged += o.not_converged;
    }
}

/// Averages over runs: `MSE_{k,i}` and `Tr(P_{k,i})`, indexed `[k][series]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStatistics {
    pub scenario: String,
    pub filter: FilterKind,
    pub runs: usize,
    /// Sensor number written to CSV per series; `0` for centralized filters.
    pub sensor_ids: Vec<usize>,
    pub mse: Vec<Vec<f64>>,
    pub trp: Vec<Vec<f64>>,
    pub fusion: FusionCounts,
}

impl RunStatistics {
    pub fn horizon(&self) -> usize {
        self.mse.len() - 1
    }

    /// `MSE_k`, the average over sensors.
    pub fn mse_network(&self, k: usize) -> f64 {
        mean(&self.mse[k])
    }

    /// `Tr(P_k)`, the average over sensors.
    pub fn trp_network(&self, k: usize) -> f64 {
        mean(&self.trp[k])
    }

    pub fn mse_max(&self, range: RangeInclusive<usize>) -> f64 {
        range
            .map(|k| self.mse_network(k))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn p_max(&self, range: RangeInclusive<usize>) -> f64 {
        range
            .map(|k| self.trp_network(k))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Fraction of `(k, i)` cells with `k ≥ warmup` where `MSE ≤ Tr(P)`.
    pub fn consistency_fraction(&self, warmup: usize) -> f64 {
        let mut total = 0usize;
        let mut ok = 0usize;
        for k in warmup..=self.horizon() {
            for (m, p) in self.mse[k].iter().zip(&self.trp[k]) {
                total += 1;
                if m <= p {
                    ok += 1;
                }
            }
        }
        if total == 0 {
            1.0
        } else {
            ok as f64 / total as f64
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn record(
    err: &mut Vec<Vec<f64>>,
    trp: &mut Vec<Vec<f64>>,
    pairs: &[&EstimatePair],
    x: &DVector<f64>,
) {
    err.push(pairs.iter().map(|p| (&p.x - x).norm_squared()).collect());
    trp.push(pairs.iter().map(|p| p.p.trace()).collect());
}

/// One seeded run of the scenario's filter.
pub fn run_single(scenario: &Scenario, run: usize) -> SimResult<RunTrace> {
    let seed = run_seed(scenario.seed, run);
    let truth = simulate_truth(scenario, seed)?;
    let ys = simulate_measurements(&truth, scenario, seed)?;
    let setup = &scenario.setup;
    let sampler = LinkNoiseSampler::new(
        scenario.channel_mode.sampler_mode(),
        channel_seed(seed),
        scenario.n(),
        setup.channel.clone(),
    );
    let horizon = scenario.horizon();
    let mut err = Vec::with_capacity(horizon + 1);
    let mut trp = Vec::with_capacity(horizon + 1);
    let mut fusion = FusionCounts::default();
    match scenario.filter {
        FilterKind::Drkf => {
            let mut f = Drkf::new(setup, &scenario.x0_hat)?;
            record(
                &mut err,
                &mut trp,
                &f.states.iter().map(|s| &s.fused).collect::<Vec<_>>(),
                &truth[0],
            );
            for k in 1..=horizon {
                f.step(setup, &ys[k], &sampler)?;
                record(
                    &mut err,
                    &mut trp,
                    &f.states.iter().map(|s| &s.fused).collect::<Vec<_>>(),
                    &truth[k],
                );
            }
        }
        FilterKind::DrkfSwf => {
            let schedule = SwfSchedule::uniform(scenario.delta, scenario.num_sensors())?;
            let mut f = Swf::new(
                setup,
                &scenario.x0_hat,
                scenario.window,
                schedule,
                scenario.solver,
            )?;
            record(
                &mut err,
                &mut trp,
                &f.states.iter().map(|s| &s.fused).collect::<Vec<_>>(),
                &truth[0],
            );
            for k in 1..=horizon {
                f.step(setup, &ys[k], &sampler)?;
                f.last_kinds.iter().for_each(|&kind| fusion.add(kind));
                record(
                    &mut err,
                    &mut trp,
                    &f.states.iter().map(|s| &s.fused).collect::<Vec<_>>(),
                    &truth[k],
                );
            }
        }
        FilterKind::Ckf | FilterKind::Crkf => {
            let kind = if scenario.filter == FilterKind::Ckf {
                CentralKind::Ckf
            } else {
                CentralKind::Crkf
            };
            let init = EstimatePair::new(scenario.x0_hat[0].clone(), setup.bounds.p0i[0].clone())?;
            let mut f = Centralized::new(kind, init, &setup.bounds, setup.pi_cap);
            record(&mut err, &mut trp, &[&f.pair], &truth[0]);
            for k in 1..=horizon {
                f.step(&setup.model, &setup.bounds, &ys[k])?;
                record(&mut err, &mut trp, &[&f.pair], &truth[k]);
            }
        }
    }
    Ok(RunTrace { err, trp, fusion })
}

/// Runs are independent and executed in parallel; the reduction runs in run
/// order so results do not depend on scheduling.
pub fn run_monte_carlo(scenario: &Scenario) -> SimResult<RunStatistics> {
    scenario.validate()?;
    let traces: Vec<SimResult<RunTrace>> = (0..scenario.runs)
        .into_par_iter()
        .map(|run| run_single(scenario, run))
        .collect();
    let series = if scenario.filter.is_centralized() {
        1
    } else {
        scenario.num_sensors()
    };
    let horizon = scenario.horizon();
    let mut mse = vec![vec![0.0; series]; horizon + 1];
    let mut trp = vec![vec![0.0; series]; horizon + 1];
    let mut fusion = FusionCounts::default();
    for (run, t) in traces.into_iter().enumerate() {
        let t = t.map_err(|e| SimError::Run {
            run,
            source: Box::new(e),
        })?;
        for k in 0..=horizon {
            for i in 0..series {
                mse[k][i] += t.err[k][i];
                trp[k][i] += t.trp[k][i];
            }
        }
        fusion.merge(&t.fusion);
    }
    let scale = 1.0 / scenario.runs as f64;
    for row in mse.iter_mut().chain(trp.iter_mut()) {
        row.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(RunStatistics {
        scenario: scenario.name.clone(),
        filter: scenario.filter,
        runs: scenario.runs,
        sensor_ids: if scenario.filter.is_centralized() {
            vec![0]
        } else {
            (1..=series).collect()
        },
        mse,
        trp,
        fusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{example1, ChannelMode, Dist};

    #[test]
    fn perfect_noiseless_run_has_zero_error() {
        let mut s = example1(1).unwrap();
        s.noise.x0 = Dist::Zero;
        s.noise.process = Dist::Zero;
        s.noise.multiplicative = Dist::Zero;
        s.noise.measurement = Dist::Zero;
        s.noise.fading_uniform = false;
        s.noise.x0_mean = DVector::from_element(2, 1.0);
        s.channel_mode = ChannelMode::Noiseless;
        s.runs = 1;
        let stats = run_monte_carlo(&s).unwrap();
        for k in 0..=100 {
            for m in &stats.mse[k] {
                assert!(m.abs() < 1e-20, "k={k}: {m}");
            }
        }
    }

    #[test]
    fn statistics_are_averages_of_runs() {
        let mut s = example1(1).unwrap().with_horizon(10).unwrap();
        s.runs = 3;
        let stats = run_monte_carlo(&s).unwrap();
        let traces: Vec<RunTrace> = (0..3).map(|r| run_single(&s, r).unwrap()).collect();
        for k in 0..=10 {
            for i in 0..4 {
                let m: f64 = traces.iter().map(|t| t.err[k][i]).sum::<f64>() / 3.0;
                assert!((stats.mse[k][i] - m).abs() <= 1e-15 * m.max(1.0));
            }
        }
        assert_eq!(stats.sensor_ids, vec![1, 2, 3, 4]);
        assert!((stats.trp[0][0] - 200.0).abs() < 1e-12);
    }

    #[test]
    fn centralized_series_is_single() {
        let mut s = example1(1).unwrap().with_horizon(5).unwrap();
        s.runs = 2;
        s.filter = FilterKind::Crkf;
        let stats = run_monte_carlo(&s).unwrap();
        assert_eq!(stats.sensor_ids, vec![0]);
        assert_eq!(stats.mse[3].len(), 1);
    }

    #[test]
    fn swf_counts_every_sensor_step() {
        let mut s = example1(1).unwrap().with_horizon(10).unwrap();
        s.runs = 2;
        s.filter = FilterKind::DrkfSwf;
        let stats = run_monte_carlo(&s).unwrap();
        let f = stats.fusion;
        assert_eq!(
            f.plain + f.optimized + f.infeasible + f.not_converged,
            2 * 10 * 4
        );
        assert_eq!(f.plain, 2 * 8 * 4);
    }
}
