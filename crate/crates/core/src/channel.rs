//! Corrupted inter-sensor links.
//!
//! A pair `{x, P}` sent from `j` to `i` arrives as `{x + ε, P + D_k}` with
//! `εεᵀ ⪯ Υ_{i,j}` and `-D_{i,j} ⪯ D_k ⪯ D_{i,j}`. The receiver inflates the
//! matrix by `D_{i,j} + Υ_{i,j}` before fusing, which restores consistency.
//! A sensor's own pair never crosses a channel: self-links carry no noise and
//! zero bounds.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{EstimatePair, SensorGraph};

/// Directed link: `receiver` gets messages from `sender`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Link {
    pub receiver: usize,
    pub sender: usize,
}

impl Link {
    pub fn new(receiver: usize, sender: usize) -> Self {
        Link { receiver, sender }
    }

    pub fn is_self(&self) -> bool {
        self.receiver == self.sender
    }
}

/// Per-link noise bounds `Υ_{i,j}` and `D_{i,j}`.
#[derive(Debug, Clone)]
pub struct ChannelBounds {
    nodes: usize,
    upsilon: Vec<Option<DMatrix<f64>>>,
    d: Vec<Option<DMatrix<f64>>>,
}

impl ChannelBounds {
    /// Same `Υ` and `D` on every link between distinct sensors; zero on
    /// self-links.
    pub fn uniform(graph: &SensorGraph, upsilon: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<Self> {
        let mut bounds = ChannelBounds::empty(graph.len());
        let zero = DMatrix::zeros(upsilon.nrows(), upsilon.ncols());
        for i in 0..graph.len() {
            for &j in graph.neighbors(i) {
                let link = Link::new(i, j);
                if link.is_self() {
                    bounds.set(link, zero.clone(), zero.clone())?;
                } else {
                    bounds.set(link, upsilon.clone(), d.clone())?;
                }
            }
        }
        Ok(bounds)
    }

    /// Zero bounds on every link of the graph.
    pub fn zero(graph: &SensorGraph, n: usize) -> Self {
        let z = DMatrix::zeros(n, n);
        ChannelBounds::uniform(graph, &z, &z).expect("zero is PSD")
    }

    pub fn empty(nodes: usize) -> Self {
        ChannelBounds {
            nodes,
            upsilon: vec![None; nodes * nodes],
            d: vec![None; nodes * nodes],
        }
    }

    pub fn set(&mut self, link: Link, upsilon: DMatrix<f64>, d: DMatrix<f64>) -> Result<()> {
        for (name, m) in [("Upsilon", &upsilon), ("D", &d)] {
            if !m.is_square() || !linalg::is_psd(m) || linalg::asymmetry(m) > 1e-12 {
                return Err(Error::NotPositiveDefinite {
                    what: format!("{name} on link ({},{})", link.receiver, link.sender),
                });
            }
        }
        let idx = self.index(link);
        self.upsilon[idx] = Some(upsilon);
        self.d[idx] = Some(d);
        Ok(())
    }

    fn index(&self, link: Link) -> usize {
        link.receiver * self.nodes + link.sender
    }

    pub fn upsilon(&self, link: Link) -> Option<&DMatrix<f64>> {
        self.upsilon.get(self.index(link))?.as_ref()
    }

    pub fn d(&self, link: Link) -> Option<&DMatrix<f64>> {
        self.d.get(self.index(link))?.as_ref()
    }

    /// `D_{i,j} + Υ_{i,j}`.
    pub fn inflation(&self, link: Link) -> Result<DMatrix<f64>> {
        match (self.upsilon(link), self.d(link)) {
            (Some(u), Some(d)) => Ok(u + d),
            _ => Err(Error::InvalidParameter(format!(
                "no channel bounds for link ({},{})",
                link.receiver, link.sender
            ))),
        }
    }

    /// Checks that every link of the graph carries bounds of dimension `n`.
    pub fn validate(&self, graph: &SensorGraph, n: usize) -> Result<()> {
        for i in 0..graph.len() {
            for &j in graph.neighbors(i) {
                let inf = self.inflation(Link::new(i, j))?;
                crate::model::check_dims(&format!("channel bound ({i},{j})"), &inf, (n, n))?;
            }
        }
        Ok(())
    }
}

/// One realization of the noise on a link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkNoise {
    pub eps: DVector<f64>,
    pub d: DMatrix<f64>,
}

impl LinkNoise {
    pub fn zero(n: usize) -> Self {
        LinkNoise {
            eps: DVector::zeros(n),
            d: DMatrix::zeros(n, n),
        }
    }
}

/// `x̌ = x + ε`, `P̌_raw = P + D_k`.
pub fn corrupt(sent: &EstimatePair, noise: &LinkNoise) -> EstimatePair {
    EstimatePair::new_unchecked(&sent.x + &noise.eps, &sent.p + &noise.d)
}

/// `P̌ = P̌_raw + D_{i,j} + Υ_{i,j}`; fails if the result is not positive definite.
pub fn inflate(
    received: &EstimatePair,
    link: Link,
    bounds: &ChannelBounds,
) -> Result<EstimatePair> {
    let p = linalg::symmetrized(&received.p + bounds.inflation(link)?);
    if p.clone().cholesky().is_none() {
        return Err(Error::InflatedNotPd {
            i: link.receiver,
            j: link.sender,
        });
    }
    Ok(EstimatePair::new_unchecked(received.x.clone(), p))
}

/// Anything that carries a transmitted pair across a link.
pub trait Channel {
    fn transmit(&self, sent: &EstimatePair, link: Link, k: usize) -> EstimatePair;
}

/// A perfect channel.
#[derive(Debug, Clone, Copy, Default)]
pub struct Noiseless;

impl Channel for Noiseless {
    fn transmit(&self, sent: &EstimatePair, _link: Link, _k: usize) -> EstimatePair {
        sent.clone()
    }
}

/// How link noise is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerMode {
    Noiseless,
    /// Every entry of `ε` and of the upper triangle of `D_k` uniform on
    /// `[-amplitude, amplitude]`, with no check against the declared bounds.
    PaperLiteral {
        amplitude: f64,
    },
    /// Entries scaled so the declared bounds hold by construction:
    /// half-width `sqrt(λ_min(Υ)/n)` for `ε` and `λ_min(D)/n` for `D_k`,
    /// each multiplied by `stretch`. With `stretch > 1` samples may leave the
    /// bound and are resampled, then scaled back in.
    BoundRespecting {
        stretch: f64,
    },
}

/// Maximum resampling attempts before a sample is scaled into its bound.
pub const MAX_RESAMPLES: usize = 10;

/// Seeded per-link noise source. Every `(link, k)` gets its own stream derived
/// from the master seed, so results do not depend on evaluation order.
#[derive(Debug, Clone)]
pub struct LinkNoiseSampler {
    pub mode: SamplerMode,
    pub seed: u64,
    pub n: usize,
    bounds: ChannelBounds,
}

impl LinkNoiseSampler {
    pub fn new(mode: SamplerMode, seed: u64, n: usize, bounds: ChannelBounds) -> Self {
        LinkNoiseSampler {
            mode,
            seed,
            n,
            bounds,
        }
    }

    pub fn bounds(&self) -> &ChannelBounds {
        &self.bounds
    }

    fn rng(&self, link: Link, k: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(&[
            self.seed,
            link.receiver as u64,
            link.sender as u64,
            k as u64,
        ]))
    }

    pub fn sample(&self, link: Link, k: usize) -> LinkNoise {
        let n = self.n;
        if link.is_self() {
            return LinkNoise::zero(n);
        }
        match self.mode {
            SamplerMode::Noiseless => LinkNoise::zero(n),
            SamplerMode::PaperLiteral { amplitude } => {
                let mut rng = self.rng(link, k);
                draw(&mut rng, n, amplitude, amplitude)
            }
            SamplerMode::BoundRespecting { stretch } => {
                let zero = DMatrix::zeros(n, n);
                let upsilon = self.bounds.upsilon(link).unwrap_or(&zero);
                let d_bound = self.bounds.d(link).unwrap_or(&zero);
                let h_eps =
                    libm::sqrt(linalg::min_eigenvalue(upsilon).max(0.0) / n as f64) * stretch;
                let h_d = linalg::min_eigenvalue(d_bound).max(0.0) / n as f64 * stretch;
                let mut rng = self.rng(link, k);
                let mut noise = draw(&mut rng, n, h_eps, h_d);
                let mut tries = 1;
                while !within_bounds(&noise, upsilon, d_bound) && tries < MAX_RESAMPLES {
                    noise = draw(&mut rng, n, h_eps, h_d);
                    tries += 1;
                }
                if !within_bounds(&noise, upsilon, d_bound) {
                    log::debug!(
                        "link ({},{}) k={k}: noise outside bounds after {MAX_RESAMPLES} draws, scaling",
                        link.receiver,
                        link.sender
                    );
                    noise = scale_into(noise, upsilon, d_bound);
                }
                noise
            }
        }
    }
}

impl Channel for LinkNoiseSampler {
    fn transmit(&self, sent: &EstimatePair, link: Link, k: usize) -> EstimatePair {
        corrupt(sent, &self.sample(link, k))
    }
}

fn draw<R: Rng>(rng: &mut R, n: usize, h_eps: f64, h_d: f64) -> LinkNoise {
    let eps = DVector::from_fn(n, |_, _| uniform(rng, h_eps));
    let mut d = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in r..n {
            let v = uniform(rng, h_d);
            d[(r, c)] = v;
            d[(c, r)] = v;
        }
    }
    LinkNoise { eps, d }
}

fn uniform<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Checks `εεᵀ ⪯ Υ` and `-D ⪯ D_k ⪯ D`.
pub fn within_bounds(noise: &LinkNoise, upsilon: &DMatrix<f64>, d_bound: &DMatrix<f64>) -> bool {
    let outer = &noise.eps * noise.eps.transpose();
    linalg::loewner_le(&outer, upsilon, 1e-12)
        && linalg::loewner_le(&noise.d, d_bound, 1e-12)
        && linalg::loewner_le(&(-&noise.d), d_bound, 1e-12)
}

/// Shrinks a sample until it satisfies its bounds.
fn scale_into(mut noise: LinkNoise, upsilon: &DMatrix<f64>, d_bound: &DMatrix<f64>) -> LinkNoise {
    let norm = noise.eps.norm();
    let lam = linalg::min_eigenvalue(upsilon).max(0.0);
    if norm > 0.0 {
        noise.eps *= (libm::sqrt(lam) / norm).min(1.0);
    }
    let dn = linalg::spectral_norm(&noise.d);
    let lam_d = linalg::min_eigenvalue(d_bound).max(0.0);
    if dn > 0.0 {
        noise.d *= (lam_d / dn).min(1.0);
    }
    noise
}

/// Mixes a list of integers into one seed (splitmix64 finalizer chain).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &p in parts {
        h ^= p
            .wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = splitmix(h);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
