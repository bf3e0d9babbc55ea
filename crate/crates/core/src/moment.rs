//! Second-moment bound `Π_k ⪰ E x_k x_kᵀ` and state-transition products.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{NoiseBounds, SystemModel};

/// Default magnitude cap on entries of `Π_k`. Unstable systems legitimately
/// grow, so the cap is only a guard against numeric blow-up.
pub const DEFAULT_PI_CAP: f64 = 1e150;

/// Cached prefix `Π_0, Π_1, …` of the moment-bound recursion
/// `Π_{k+1} = A_k Π_k A_kᵀ + μ_k F_k Π_k F_kᵀ + Q_k`.
#[derive(Debug, Clone)]
pub struct MomentTrace {
    pi: Vec<DMatrix<f64>>,
    cap: f64,
}

impl MomentTrace {
    pub fn new(p0: &DMatrix<f64>, cap: f64) -> Self {
        MomentTrace {
            pi: vec![linalg::symmetrized(p0.clone())],
            cap,
        }
    }

    /// Index of the last cached entry.
    pub fn last(&self) -> usize {
        self.pi.len() - 1
    }

    /// `Π_k`; panics if `k` has not been computed yet.
    pub fn get(&self, k: usize) -> &DMatrix<f64> {
        &self.pi[k]
    }

    pub fn try_get(&self, k: usize) -> Option<&DMatrix<f64>> {
        self.pi.get(k)
    }

    /// Extends the cache through `Π_k`.
    pub fn extend_to(&mut self, model: &SystemModel, bounds: &NoiseBounds, k: usize) -> Result<()> {
        while self.pi.len() <= k {
            let t = self.pi.len() - 1;
            let next = pi_step(&self.pi[t], model, bounds, t);
            if !next
                .iter()
                .all(|v| v.is_finite() && libm::fabs(*v) <= self.cap)
            {
                return Err(Error::Overflow {
                    k: t + 1,
                    cap: self.cap,
                });
            }
            self.pi.push(next);
        }
        Ok(())
    }
}

/// One step of the moment-bound recursion from time `k` to `k + 1`.
pub fn pi_step(
    pi: &DMatrix<f64>,
    model: &SystemModel,
    bounds: &NoiseBounds,
    k: usize,
) -> DMatrix<f64> {
    let a = model.a(k);
    let f = model.f(k);
    let next =
        &*a * pi * a.transpose() + bounds.mu.at(k) * (&*f * pi * f.transpose()) + &*bounds.q.at(k);
    linalg::symmetrized(next)
}

/// Computes `Π_0 … Π_horizon`.
pub fn propagate_pi(
    model: &SystemModel,
    bounds: &NoiseBounds,
    horizon: usize,
    cap: f64,
) -> Result<MomentTrace> {
    let mut trace = MomentTrace::new(&bounds.p0, cap);
    trace.extend_to(model, bounds, horizon)?;
    Ok(trace)
}

/// State transition `Φ_{j,k} = A_{j-1} ⋯ A_k`, with `Φ_{k,k} = I`.
pub fn transition(model: &SystemModel, j: usize, k: usize) -> Result<DMatrix<f64>> {
    if j < k {
        return Err(Error::InvalidTransition { j, k });
    }
    let n = model.n();
    let mut phi = DMatrix::identity(n, n);
    for t in k..j {
        phi = &*model.a(t) * phi;
    }
    Ok(phi)
}
