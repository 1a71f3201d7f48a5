//! Reproducible two-sided noise.
//!
//! All randomness in the crate comes from [`CounterStream`]: a ChaCha8
//! keystream keyed by `(seed, domain)` and addressed by a signed counter.
//! Each counter value selects its own ChaCha stream, so a draw depends only
//! on `(seed, domain, index)` and never on query order or thread layout.

use std::sync::{Arc, RwLock};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Vec2;

/// Independent sub-streams derived from one user seed.
pub mod domain {
    pub const INCREMENT: u64 = 0x11;
    pub const OU_ANCHOR: u64 = 0x22;
    pub const BRIDGE: u64 = 0x33;
    pub const CLOUD: u64 = 0x44;
    pub const SAMPLING: u64 = 0x55;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with further words into a single 64-bit seed.
pub fn derive_seed(seed: u64, words: &[u64]) -> u64 {
    let mut state = seed;
    let mut out = splitmix64(&mut state);
    for &w in words {
        state ^= w.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        out ^= splitmix64(&mut state);
    }
    out
}

/// Stateless generator: `(seed, domain, index) -> random words`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterStream {
    key: [u8; 32],
}

impl CounterStream {
    pub fn new(seed: u64, domain: u64) -> Self {
        let mut state = seed ^ domain.rotate_left(32);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        CounterStream { key }
    }

    /// The raw keystream for `index`.
    pub fn rng(&self, index: i64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index as u64);
        rng
    }

    /// Fills `out` with independent standard normals (Box-Muller).
    pub fn normals(&self, index: i64, out: &mut [f64]) {
        fill_normals(&mut self.rng(index), out);
    }

    /// Fills `out` with uniforms in [0, 1).
    pub fn uniforms(&self, index: i64, out: &mut [f64]) {
        let mut rng = self.rng(index);
        for u in out.iter_mut() {
            *u = unit_open_right(rng.next_u64());
        }
    }
}

#[inline]
fn unit_open_right(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn unit_open_left(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub(crate) fn fill_normals(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let mut chunks = out.chunks_exact_mut(2);
    for pair in &mut chunks {
        let (z0, z1) = box_muller(rng);
        pair[0] = z0;
        pair[1] = z1;
    }
    if let [last] = chunks.into_remainder() {
        *last = box_muller(rng).0;
    }
}

#[inline]
fn box_muller(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1 = unit_open_left(rng.next_u64());
    let u2 = unit_open_right(rng.next_u64());
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Brownian increments on the grid `t_k = k tau`, indexed by any signed
/// `k`. Increment `k` is `W(t_k) - W(t_{k-1})`.
///
/// Shifting by `l` grid steps realises the Wiener shift `theta_{t_l}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    seed: u64,
    tau: f64,
    sqrt_tau: f64,
    offset: i64,
    silent: bool,
    stream: CounterStream,
}

impl NoisePath {
    pub fn new(seed: u64, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau = {tau} must be positive")));
        }
        Ok(NoisePath {
            seed,
            tau,
            sqrt_tau: tau.sqrt(),
            offset: 0,
            silent: false,
            stream: CounterStream::new(seed, domain::INCREMENT),
        })
    }

    /// Test hook: a path whose increments (and OU innovations) are all zero.
    /// An [`OuPath`] built on it still draws a random anchor value.
    pub fn silent(seed: u64, tau: f64) -> Result<Self> {
        Ok(NoisePath {
            silent: true,
            ..NoisePath::new(seed, tau)?
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn is_silent(&self) -> bool {
        self.silent
    }

    /// `theta_{t_l}`: the path seen from grid time `t_l`.
    pub fn shift(&self, l: i64) -> NoisePath {
        NoisePath {
            offset: self.offset + l,
            ..self.clone()
        }
    }

    /// Four standard normals for absolute index `j`: the first two drive the
    /// increment, the last two the part of the OU innovation that is
    /// independent of it.
    #[inline]
    fn draws(&self, absolute: i64) -> [f64; 4] {
        let mut z = [0.0; 4];
        self.stream.normals(absolute, &mut z);
        z
    }

    /// `Delta W_k ~ N(0, tau I)`.
    #[inline]
    pub fn increment(&self, k: i64) -> Vec2 {
        if self.silent {
            return Vec2::ZERO;
        }
        let z = self.draws(k + self.offset);
        Vec2::new(self.sqrt_tau * z[0], self.sqrt_tau * z[1])
    }

    /// Increments for `k = first, first + 1, ..., first + len - 1`.
    pub fn increments(&self, first: i64, len: usize) -> Vec<Vec2> {
        (0..len as i64).map(|j| self.increment(first + j)).collect()
    }

    /// Splits increment `k` into `parts` sub-increments on the grid of step
    /// `tau / parts` by sampling the Brownian bridge conditioned on the
    /// coarse increment. Deterministic per `(seed, k + offset)`.
    pub fn refine(&self, k: i64, parts: usize) -> RefinedIncrement {
        assert!(parts >= 1, "refinement needs at least one part");
        let coarse = self.increment(k);
        let mut fine = Vec::with_capacity(parts);
        if parts == 1 {
            fine.push(coarse);
            return RefinedIncrement::from_fine(fine);
        }
        let mut z = vec![0.0; 2 * (parts - 1)];
        if !self.silent {
            CounterStream::new(self.seed, domain::BRIDGE).normals(k + self.offset, &mut z);
        }
        let h = self.tau / parts as f64;
        let mut remaining = coarse;
        for j in 0..parts - 1 {
            let rem_time = (parts - j) as f64 * h;
            let w = h / rem_time;
            let sd = (h * (rem_time - h) / rem_time).sqrt();
            let dw = Vec2::new(
                w * remaining.x + sd * z[2 * j],
                w * remaining.y + sd * z[2 * j + 1],
            );
            remaining = remaining - dw;
            fine.push(dw);
        }
        fine.push(remaining);
        RefinedIncrement::from_fine(fine)
    }
}

/// Fine increments of one coarse step. `coarse` is their left-to-right sum,
/// so the fine and coarse paths agree bit-for-bit on the coarse grid. It
/// differs from the unrefined increment only by rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedIncrement {
    pub fine: Vec<Vec2>,
    pub coarse: Vec2,
}

impl RefinedIncrement {
    fn from_fine(fine: Vec<Vec2>) -> Self {
        let coarse = fine.iter().fold(Vec2::ZERO, |acc, &d| acc + d);
        RefinedIncrement { fine, coarse }
    }
}

#[derive(Debug)]
struct OuCache {
    anchor_value: Vec2,
    /// `values[i]` is `Z*` at absolute index `anchor + i`.
    values: RwLock<Vec<Vec2>>,
}

/// Stationary Ornstein-Uhlenbeck sequence `Z*_k = Z*(theta_{t_k} omega)`
/// of `dZ = -gamma Z dt + dW`, driven by the increments of a [`NoisePath`].
///
/// The value at the anchor index is drawn from the stationary law
/// `N(0, I / (2 gamma))`; later values follow the exact grid recursion
/// `Z_{k+1} = e^{-gamma tau} Z_k + I_{k+1}`, where `I_{k+1}` is jointly
/// Gaussian with `Delta W_{k+1}`. The anchor is independent of all later
/// innovations, so the sequence is exactly stationary from the anchor on.
/// Indices before the anchor are not available.
///
/// Shifted copies share one cache, indexed by absolute grid position.
#[derive(Debug, Clone)]
pub struct OuPath {
    base: NoisePath,
    gamma: f64,
    anchor: i64,
    decay: f64,
    /// Regression of `I` on `Delta W`, and the residual standard deviation.
    slope: f64,
    resid_sd: f64,
    cache: Arc<OuCache>,
}

impl OuPath {
    /// OU path anchored at index 0 of `base`.
    pub fn new(base: &NoisePath, gamma: f64) -> Result<Self> {
        Self::anchored_at(base, gamma, 0)
    }

    /// OU path whose first available index is `anchor` (relative to `base`).
    pub fn anchored_at(base: &NoisePath, gamma: f64, anchor: i64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("OU rate gamma = {gamma} must be positive")));
        }
        let tau = base.tau;
        let decay = (-gamma * tau).exp();
        // Var(I) = (1 - e^{-2 gamma tau}) / (2 gamma), Cov(I, dW) = (1 - e^{-gamma tau}) / gamma.
        let var_i = -(-2.0 * gamma * tau).exp_m1() / (2.0 * gamma);
        let cov = -(-gamma * tau).exp_m1() / gamma;
        let slope = cov / tau;
        let resid_sd = (var_i - cov * cov / tau).max(0.0).sqrt();

        let absolute = anchor + base.offset;
        let mut z = [0.0; 2];
        CounterStream::new(base.seed, domain::OU_ANCHOR).normals(absolute, &mut z);
        let sd = (0.5 / gamma).sqrt();
        let anchor_value = Vec2::new(sd * z[0], sd * z[1]);

        Ok(OuPath {
            base: base.clone(),
            gamma,
            anchor: absolute,
            decay,
            slope,
            resid_sd,
            cache: Arc::new(OuCache {
                anchor_value,
                values: RwLock::new(vec![anchor_value]),
            }),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn path(&self) -> &NoisePath {
        &self.base
    }

    /// First available index, relative to this path's offset.
    pub fn first_index(&self) -> i64 {
        self.anchor - self.base.offset
    }

    pub fn shift(&self, l: i64) -> OuPath {
        OuPath {
            base: self.base.shift(l),
            ..self.clone()
        }
    }

    /// OU innovation `I_j` at absolute index `j`.
    fn innovation(&self, absolute: i64) -> Vec2 {
        if self.base.silent {
            return Vec2::ZERO;
        }
        let z = self.base.draws(absolute);
        let st = self.base.sqrt_tau;
        Vec2::new(
            self.slope * st * z[0] + self.resid_sd * z[2],
            self.slope * st * z[1] + self.resid_sd * z[3],
        )
    }

    /// `Z*_k`.
    pub fn value(&self, k: i64) -> Result<Vec2> {
        let absolute = k + self.base.offset;
        if absolute < self.anchor {
            return Err(Error::BeforeAnchor {
                index: k,
                anchor: self.first_index(),
            });
        }
        let idx = (absolute - self.anchor) as usize;
        {
            let values = self.cache.values.read().expect("OU cache poisoned");
            if let Some(v) = values.get(idx) {
                return Ok(*v);
            }
        }
        let mut values = self.cache.values.write().expect("OU cache poisoned");
        while values.len() <= idx {
            let last = *values.last().unwrap_or(&self.cache.anchor_value);
            let j = self.anchor + values.len() as i64;
            let next = self.decay * last + self.innovation(j);
            values.push(next);
        }
        Ok(values[idx])
    }

    /// `Z~*_k := (Z*_{k-1} - Z*_k + Delta W_k) / gamma`, the grid average of
    /// the OU path over `[t_{k-1}, t_k]` consistent with the increment
    /// identity `Z*_k - Z*_{k-1} = -gamma Z~*_k + Delta W_k`.
    pub fn tilde(&self, k: i64) -> Result<Vec2> {
        let prev = self.value(k - 1)?;
        let cur = self.value(k)?;
        let dw = self.base.increment(k);
        Ok((1.0 / self.gamma) * (prev - cur + dw))
    }
}
