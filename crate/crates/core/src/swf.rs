//! Sliding-window fusion.
//!
//! Each sensor keeps the last `L` inflated pairs received from every
//! in-neighbor, re-predicts them to the current time, and at scheduled
//! instants fuses all of them with CI weights chosen by
//!
//! ```text
//! minimize   Tr(J(a)⁻¹)
//! subject to J(a) = Σ a_c P̌_c⁻¹ − Σ_j a_{i,j} P̌_{k,j}⁻¹ ⪰ εI,   a ∈ simplex
//! ```
//!
//! Any feasible weight vector yields a fused bound no larger than the plain
//! CI fusion. When no feasible point is found the plain fusion is used.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::channel::{Channel, Link};
use crate::drkf::{self, FilterSetup, SensorState};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{EstimatePair, NoiseBounds, SensorGraph, SystemModel};
use crate::moment::MomentTrace;

/// Last `L` inflated pairs from every in-neighbor of one sensor.
#[derive(Debug, Clone)]
pub struct WindowBuffer {
    len: usize,
    neighbors: Vec<usize>,
    entries: Vec<VecDeque<(usize, EstimatePair)>>,
}

impl WindowBuffer {
    pub fn new(len: usize, neighbors: &[usize]) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidParameter(
                "window length must be at least 1".into(),
            ));
        }
        Ok(WindowBuffer {
            len,
            neighbors: neighbors.to_vec(),
            entries: vec![VecDeque::with_capacity(len); neighbors.len()],
        })
    }

    pub fn window_len(&self) -> usize {
        self.len
    }

    /// Appends the pairs received at time `k`, one per neighbor.
    pub fn push(&mut self, k: usize, inflated: &[(Link, EstimatePair)]) -> Result<()> {
        for (slot, &j) in self.neighbors.iter().enumerate() {
            let (_, pair) =
                inflated
                    .iter()
                    .find(|(l, _)| l.sender == j)
                    .ok_or(Error::NeighborMismatch {
                        i: inflated.first().map_or(0, |(l, _)| l.receiver),
                    })?;
            let q = &mut self.entries[slot];
            if let Some(&(last, _)) = q.back() {
                if last + 1 != k {
                    // a gap breaks contiguity; restart the window
                    q.clear();
                }
            }
            q.push_back((k, pair.clone()));
            while q.len() > self.len {
                q.pop_front();
            }
        }
        Ok(())
    }

    /// Entries for neighbor `j`, oldest first, as `(time, pair)`.
    pub fn history(&self, j: usize) -> impl Iterator<Item = &(usize, EstimatePair)> {
        let slot = self.neighbors.iter().position(|&n| n == j);
        slot.into_iter().flat_map(move |s| self.entries[s].iter())
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    /// Number of entries held per neighbor (at most `L`).
    pub fn depth(&self) -> usize {
        self.entries.iter().map(|q| q.len()).min().unwrap_or(0)
    }
}

/// Re-predicts a pair from time `from` to time `to` by repeated
/// `x ← A_t x`, `P ← A_t P A_tᵀ + Q_t + μ_t F_t Π_t F_tᵀ` for `t = from..to`.
/// `from == to` is the identity.
pub fn window_predict(
    entry: &EstimatePair,
    from: usize,
    to: usize,
    model: &SystemModel,
    bounds: &NoiseBounds,
    pi: &MomentTrace,
) -> Result<EstimatePair> {
    if to < from {
        return Err(Error::InvalidTransition { j: to, k: from });
    }
    let mut x = entry.x.clone();
    let mut p = entry.p.clone();
    for t in from..to {
        let pi_t = pi.try_get(t).ok_or_else(|| {
            Error::InvalidParameter(format!("moment bound at k={t} not available"))
        })?;
        let a = model.a(t);
        let f = model.f(t);
        x = &*a * x;
        p = &*a * &p * a.transpose()
            + &*bounds.q.at(t)
            + bounds.mu.at(t) * (&*f * pi_t * f.transpose());
    }
    Ok(EstimatePair::new_unchecked(x, linalg::symmetrized(p)))
}

/// One fusion candidate: neighbor `j`'s pair of age `s - 1`, re-predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub j: usize,
    pub s: usize,
    pub pair: EstimatePair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSource {
    Optimized,
    Fallback,
}

/// Window weights `a^s_{i,j}` aligned with a candidate list.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowWeights {
    pub weights: Vec<f64>,
    pub source: WeightSource,
}

impl WindowWeights {
    /// Graph weights on the newest slot, zero elsewhere.
    pub fn fallback(candidates: &[Candidate], graph: &SensorGraph, i: usize) -> Self {
        WindowWeights {
            weights: candidates
                .iter()
                .map(|c| if c.s == 1 { graph.weight(i, c.j) } else { 0.0 })
                .collect(),
            source: WeightSource::Fallback,
        }
    }
}

/// Result of the weight optimization.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightOutcome {
    Optimized {
        weights: WindowWeights,
        objective: f64,
        iterations: usize,
    },
    /// No simplex point with `J ⪰ εI` was found.
    Infeasible { best_min_eig: f64 },
    /// A feasible start existed but descent hit the iteration budget.
    NotConverged { objective: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub feasibility_iters: usize,
    /// Stop when the relative objective decrease falls below this.
    pub rel_tol: f64,
    /// `ε = margin · ‖Σ a_{i,j} P̌⁻¹‖₂` for the relaxed constraint `J ⪰ εI`.
    pub margin: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 500,
            feasibility_iters: 500,
            rel_tol: 1e-9,
            margin: 1e-8,
        }
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (idx, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (idx + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    // remove rounding drift so the weights sum to one
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        for w in &mut out {
            *w /= total;
        }
    }
    out
}

/// The affine map `a ↦ J(a)` with its constant part.
#[derive(Debug, Clone)]
pub struct WeightProblem {
    infos: Vec<DMatrix<f64>>,
    baseline: DMatrix<f64>,
    eps: f64,
}

impl WeightProblem {
    /// `candidates` are the window matrices `P̌ˢ`; `baseline` the plain-fusion
    /// pairs `(a_{i,j}, P̌_{k,j})`.
    pub fn new(
        candidates: &[Candidate],
        baseline: &[(f64, &DMatrix<f64>)],
        margin: f64,
    ) -> Result<Self> {
        let infos = candidates
            .iter()
            .map(|c| linalg::spd_inverse(&c.pair.p).ok_or(Error::CandidateNotPd { j: c.j, s: c.s }))
            .collect::<Result<Vec<_>>>()?;
        let n = infos.first().map_or(0, |m| m.nrows());
        let mut b = DMatrix::zeros(n, n);
        for (a, p) in baseline {
            let inv = linalg::spd_inverse(p).ok_or(Error::NotPositiveDefinite {
                what: "baseline inflated matrix".into(),
            })?;
            b += *a * inv;
        }
        let eps = margin * linalg::spectral_norm(&b);
        Ok(WeightProblem {
            infos,
            baseline: b,
            eps,
        })
    }

    pub fn dim(&self) -> usize {
        self.infos.len()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn j(&self, a: &[f64]) -> DMatrix<f64> {
        let mut j = -self.baseline.clone();
        for (w, info) in a.iter().zip(&self.infos) {
            if *w != 0.0 {
                j += *w * info;
            }
        }
        linalg::symmetrized(j)
    }

    /// `Tr(J⁻¹)` or `None` outside `J ⪰ εI`.
    pub fn objective(&self, a: &[f64]) -> Option<f64> {
        let j = self.j(a);
        let n = j.nrows();
        (&j - self.eps * DMatrix::<f64>::identity(n, n)).cholesky()?;
        Some(linalg::spd_inverse(&j)?.trace())
    }

    /// `∂/∂a_c Tr(J⁻¹) = −Tr(J⁻¹ P̌_c⁻¹ J⁻¹)`.
    fn gradient(&self, a: &[f64]) -> Option<Vec<f64>> {
        let jinv = linalg::spd_inverse(&self.j(a))?;
        let jinv2 = &jinv * &jinv;
        Some(self.infos.iter().map(|info| -jinv2.dot(info)).collect())
    }

    /// Smallest eigenvalue of `J(a)` and a unit eigenvector for it.
    fn min_eig(&self, a: &[f64]) -> (f64, DVector<f64>) {
        let eig = self.j(a).symmetric_eigen();
        let (idx, val) =
            eig.eigenvalues
                .iter()
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc },
                );
        (val, eig.eigenvectors.column(idx).into_owned())
    }

    /// Maximizes `λ_min(J(a))` over the simplex by projected supergradient
    /// ascent, stopping as soon as `λ_min > ε`. Returns the best point found.
    pub fn find_feasible(&self, iters: usize) -> (Vec<f64>, f64) {
        let d = self.dim();
        let mut starts: Vec<Vec<f64>> = (0..d)
            .map(|c| {
                let mut e = vec![0.0; d];
                e[c] = 1.0;
                e
            })
            .collect();
        starts.push(vec![1.0 / d as f64; d]);
        let mut best = (starts[0].clone(), f64::NEG_INFINITY);
        for s in starts {
            let (v, _) = self.min_eig(&s);
            if v > best.1 {
                best = (s, v);
            }
        }
        if best.1 > self.eps {
            return best;
        }
        let mut a = best.0.clone();
        for it in 0..iters {
            let (val, v) = self.min_eig(&a);
            if val > best.1 {
                best = (a.clone(), val);
                if val > self.eps {
                    break;
                }
            }
            // the simplex projection ignores shifts along 1, so only the
            // tangential part of the supergradient sets the step length
            let g: Vec<f64> = self.infos.iter().map(|info| (info * &v).dot(&v)).collect();
            let mean = g.iter().sum::<f64>() / d as f64;
            let norm = libm::sqrt(g.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>());
            if !(norm > 0.0) {
                break;
            }
            let step = 1.0 / (norm * libm::sqrt(it as f64 + 1.0));
            let trial: Vec<f64> = a.iter().zip(&g).map(|(x, gi)| x + step * (gi - mean)).collect();
            a = project_simplex(&trial);
        }
        best
    }
}

/// Solves the window weight problem. Candidates must be ordered as the
/// returned weights.
pub fn optimize_weights(
    candidates: &[Candidate],
    baseline: &[(f64, &DMatrix<f64>)],
    opts: &SolverOptions,
) -> Result<WeightOutcome> {
    let problem = WeightProblem::new(candidates, baseline, opts.margin)?;
    if problem.dim() == 0 {
        return Ok(WeightOutcome::Infeasible {
            best_min_eig: f64::NEG_INFINITY,
        });
    }
    let (start, min_eig) = problem.find_feasible(opts.feasibility_iters);
    if min_eig <= problem.eps() {
        return Ok(WeightOutcome::Infeasible {
            best_min_eig: min_eig,
        });
    }
    let (a, objective, iterations, converged) = descend(&problem, start, opts);
    if !converged {
        log::debug!("window weight descent hit {} iterations", opts.max_iters);
        return Ok(WeightOutcome::NotConverged { objective });
    }
    Ok(WeightOutcome::Optimized {
        weights: WindowWeights {
            weights: a,
            source: WeightSource::Optimized,
        },
        objective,
        iterations,
    })
}

/// Projected gradient descent with Barzilai–Borwein steps and Armijo
/// backtracking. Trial points outside `J ⪰ εI` count as infinite objective.
fn descend(
    problem: &WeightProblem,
    start: Vec<f64>,
    opts: &SolverOptions,
) -> (Vec<f64>, f64, usize, bool) {
    const ARMIJO: f64 = 1e-4;
    let mut a = start;
    let mut f = problem.objective(&a).expect("start is feasible");
    let mut g = match problem.gradient(&a) {
        Some(g) => g,
        None => return (a, f, 0, false),
    };
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
    let mut step = if gmax > 0.0 { 1.0 / gmax } else { 1.0 };
    let mut calm = 0;
    for it in 1..=opts.max_iters {
        let mut t = step;
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = a.iter().zip(&g).map(|(x, gi)| x - t * gi).collect();
            let cand = project_simplex(&trial);
            let dir: f64 = g
                .iter()
                .zip(cand.iter().zip(&a))
                .map(|(gi, (c, x))| gi * (c - x))
                .sum();
            if dir >= 0.0 {
                // projected point does not descend: stationary
                break;
            }
            if let Some(fc) = problem.objective(&cand) {
                if fc <= f + ARMIJO * dir {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((next, fnext)) = accepted else {
            return (a, f, it, true);
        };
        let gnext = match problem.gradient(&next) {
            Some(g) => g,
            None => return (next, fnext, it, true),
        };
        let sa: Vec<f64> = next.iter().zip(&a).map(|(x, y)| x - y).collect();
        let sg: Vec<f64> = gnext.iter().zip(&g).map(|(x, y)| x - y).collect();
        let ss: f64 = sa.iter().map(|v| v * v).sum();
        let sy: f64 = sa.iter().zip(&sg).map(|(x, y)| x * y).sum();
        step = if sy > 0.0 { ss / sy } else { step * 2.0 };
        let decrease = f - fnext;
        a = next;
        g = gnext;
        f = fnext;
        if decrease <= opts.rel_tol * libm::fabs(f) {
            calm += 1;
            if calm >= 3 {
                return (a, f, it, true);
            }
        } else {
            calm = 0;
        }
    }
    (a, f, opts.max_iters, false)
}

/// Windowed CI fusion `P = (Σ a P̌ˢ⁻¹)⁻¹`, `x = P Σ a P̌ˢ⁻¹ x̌ˢ`.
pub fn swf_fuse(candidates: &[Candidate], weights: &WindowWeights) -> Result<EstimatePair> {
    if candidates.len() != weights.weights.len() || candidates.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{} weights for {} candidates",
            weights.weights.len(),
            candidates.len()
        )));
    }
    let n = candidates[0].pair.dim();
    drkf::ci_combine(
        candidates
            .iter()
            .zip(&weights.weights)
            .enumerate()
            .map(|(idx, (c, &w))| (w, &c.pair, idx)),
        n,
        |idx| Error::CandidateNotPd {
            j: candidates[idx].j,
            s: candidates[idx].s,
        },
    )
}

/// Builds the re-predicted candidate list for time `k`, newest slot first
/// within each neighbor.
pub fn window_candidates(
    buffer: &WindowBuffer,
    model: &SystemModel,
    bounds: &NoiseBounds,
    pi: &MomentTrace,
    k: usize,
) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for &j in buffer.neighbors() {
        let mut hist: Vec<&(usize, EstimatePair)> = buffer.history(j).collect();
        hist.reverse();
        for (t, pair) in hist {
            let age = k - t;
            out.push(Candidate {
                j,
                s: age + 1,
                pair: window_predict(pair, *t, k, model, bounds, pi)?,
            });
        }
    }
    Ok(out)
}

/// Per-sensor optimization intervals `Δ_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwfSchedule {
    pub delta: Vec<usize>,
}

impl SwfSchedule {
    pub fn uniform(delta: usize, sensors: usize) -> Result<Self> {
        SwfSchedule::new(vec![delta; sensors])
    }

    pub fn new(delta: Vec<usize>) -> Result<Self> {
        if delta.contains(&0) {
            return Err(Error::InvalidParameter(
                "optimization interval must be at least 1".into(),
            ));
        }
        Ok(SwfSchedule { delta })
    }

    pub fn due(&self, i: usize, k: usize) -> bool {
        k.is_multiple_of(self.delta[i])
    }
}

/// What happened in one sensor's fusion step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    /// Not a scheduled instant.
    Plain,
    Optimized,
    Infeasible,
    NotConverged,
}

/// One DRKF-SWF tick. `buffers[i]` belongs to sensor `i`.
#[allow(clippy::too_many_arguments)]
pub fn swf_step<C: Channel + ?Sized>(
    setup: &FilterSetup,
    states: &mut [SensorState],
    buffers: &mut [WindowBuffer],
    pi: &mut MomentTrace,
    measurements: &[DVector<f64>],
    channel: &C,
    schedule: &SwfSchedule,
    opts: &SolverOptions,
    k: usize,
) -> Result<Vec<FusionKind>> {
    drkf::local_step(setup, states, pi, measurements, k)?;
    let inbox = drkf::exchange(setup, states, channel, k)?;
    let results: Vec<Result<(EstimatePair, FusionKind)>> = inbox
        .iter()
        .enumerate()
        .map(|(i, inflated)| {
            buffers[i].push(k, inflated)?;
            let plain = || drkf::fuse_inflated(inflated, &setup.graph, i);
            if !schedule.due(i, k) {
                return Ok((plain()?, FusionKind::Plain));
            }
            let candidates = window_candidates(&buffers[i], &setup.model, &setup.bounds, pi, k)?;
            let baseline: Vec<(f64, &DMatrix<f64>)> = inflated
                .iter()
                .map(|(l, p)| (setup.graph.weight(i, l.sender), &p.p))
                .collect();
            match optimize_weights(&candidates, &baseline, opts)? {
                WeightOutcome::Optimized { weights, .. } => {
                    Ok((swf_fuse(&candidates, &weights)?, FusionKind::Optimized))
                }
                WeightOutcome::Infeasible { .. } => Ok((plain()?, FusionKind::Infeasible)),
                WeightOutcome::NotConverged { .. } => Ok((plain()?, FusionKind::NotConverged)),
            }
        })
        .collect();
    let fused = drkf::collect_failures(k, results)?;
    let mut kinds = Vec::with_capacity(fused.len());
    for (s, (pair, kind)) in states.iter_mut().zip(fused) {
        s.fused = pair;
        kinds.push(kind);
    }
    Ok(kinds)
}

/// Owned DRKF-SWF network.
#[derive(Debug, Clone)]
pub struct Swf {
    pub states: Vec<SensorState>,
    pub buffers: Vec<WindowBuffer>,
    pub pi: MomentTrace,
    pub schedule: SwfSchedule,
    pub opts: SolverOptions,
    pub last_kinds: Vec<FusionKind>,
    k: usize,
}

impl Swf {
    pub fn new(
        setup: &FilterSetup,
        x0: &[DVector<f64>],
        window: usize,
        schedule: SwfSchedule,
        opts: SolverOptions,
    ) -> Result<Self> {
        let states = drkf::initial_states(setup, x0)?;
        if schedule.delta.len() != states.len() {
            return Err(Error::InvalidParameter(format!(
                "{} intervals for {} sensors",
                schedule.delta.len(),
                states.len()
            )));
        }
        let buffers = (0..states.len())
            .map(|i| WindowBuffer::new(window, setup.graph.neighbors(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Swf {
            last_kinds: vec![FusionKind::Plain; states.len()],
            states,
            buffers,
            pi: MomentTrace::new(&setup.bounds.p0, setup.pi_cap),
            schedule,
            opts,
            k: 0,
        })
    }

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
        self.last_kinds = swf_step(
            setup,
            &mut self.states,
            &mut self.buffers,
            &mut self.pi,
            measurements,
            channel,
            &self.schedule,
            &self.opts,
            k,
        )?;
        self.k = k;
        Ok(())
    }
}
