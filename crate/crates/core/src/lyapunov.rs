//! Top Lyapunov exponent of the backward Euler scheme.
//!
//! Two estimators run on the same trajectory:
//!
//! * [`Method::TangentGrowth`]: the growth rate of `log |U_k|`, where the
//!   tangent vector solves `M(X_{k+1}) U_{k+1} = U_k` each step;
//! * [`Method::FkAverage`]: the time average of `q_hat(X_k, xi_k)`, the
//!   instantaneous growth rate of the continuous-time linearisation
//!   evaluated along the discrete trajectory.
//!
//! Per step they differ by `tau * O(|DF(X) C|^2)`, which is bounded by
//! `(tau / 2) h_bound(X)`; [`LyapunovReport::gap`] is the time average of
//! that bound.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrators::{propagate_direction, steps_for, trajectory, StepConfig, TangentFrame};
use crate::model::{h_bound, q_hat, wrap_pi, ModelParams, State, Vec2};
use crate::noise::NoisePath;

pub const DEFAULT_BATCHES: usize = 20;
pub const DEFAULT_BURN_IN_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    TangentGrowth,
    FkAverage,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::TangentGrowth => "tangent",
            Method::FkAverage => "fk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    /// Exponent per unit time.
    pub lambda_hat: f64,
    pub total_time: f64,
    pub tau: f64,
    pub burn_in_time: f64,
    /// Batch-means standard error.
    pub std_error: f64,
    pub method: Method,
}

/// Total simulated time and discarded transient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Horizon {
    pub t_final: f64,
    pub burn_in: f64,
}

impl Horizon {
    pub fn new(t_final: f64, burn_in: f64) -> Result<Self> {
        if !(t_final > burn_in && burn_in >= 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need T > burn-in >= 0, got T = {t_final}, burn-in = {burn_in}"
            )));
        }
        Ok(Horizon { t_final, burn_in })
    }

    /// Burn-in of 10% of `t_final`.
    pub fn with_default_burn_in(t_final: f64) -> Result<Self> {
        Horizon::new(t_final, DEFAULT_BURN_IN_FRACTION * t_final)
    }
}

/// Non-overlapping batch means over a stream of per-step values.
#[derive(Debug, Clone)]
pub struct BatchMeans {
    values: Vec<f64>,
}

impl BatchMeans {
    pub fn with_capacity(n: usize) -> Self {
        BatchMeans {
            values: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, v: f64) {
        self.values.push(v);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Standard error of the mean from `batches` contiguous batches of
    /// (almost) equal length.
    pub fn std_error(&self, batches: usize) -> f64 {
        let n = self.values.len();
        let nb = batches.min(n);
        if nb < 2 {
            return 0.0;
        }
        let means: Vec<f64> = (0..nb)
            .map(|j| {
                let (lo, hi) = (j * n / nb, (j + 1) * n / nb);
                self.values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect();
        let m = means.iter().sum::<f64>() / nb as f64;
        let var = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (nb - 1) as f64;
        (var / nb as f64).sqrt()
    }
}

/// Both estimators and the gap bound from a single pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub tangent: LyapunovEstimate,
    pub fk: LyapunovEstimate,
    /// `(tau / 2)` times the time average of `h_bound(X_k)`.
    pub gap: f64,
    /// Time average of `|X_k|^2` after burn-in.
    pub mean_radius_sq: f64,
}

impl LyapunovReport {
    /// `|fk - tangent| <= gap + 3 (se_fk + se_tangent)`.
    pub fn estimators_consistent(&self) -> bool {
        (self.fk.lambda_hat - self.tangent.lambda_hat).abs()
            <= self.gap + 3.0 * (self.fk.std_error + self.tangent.std_error)
    }
}

/// Runs the tangent recursion along a given sequence of post-step states
/// `X_1, X_2, ...` and returns both estimators.
///
/// Step `k` uses `X_k` both in the tangent matrix and in `q_hat` / `h_bound`
/// together with the direction obtained after that step. Steps with
/// `k * tau <= burn_in` are discarded.
pub fn analyze_states<I>(p: &ModelParams, tau: f64, states: I, u0: Vec2, horizon: &Horizon) -> Result<LyapunovReport>
where
    I: IntoIterator<Item = Result<State>>,
{
    let n = steps_for(horizon.t_final, tau);
    let n_burn = steps_for(horizon.burn_in, tau);
    if n <= n_burn {
        return Err(Error::InvalidParameter(format!(
            "horizon T = {} with burn-in {} leaves no steps at tau = {tau}",
            horizon.t_final, horizon.burn_in
        )));
    }
    let mut dir = TangentFrame::new(u0)?.direction();
    let m = n - n_burn;
    let mut growth = BatchMeans::with_capacity(m);
    let mut fk = BatchMeans::with_capacity(m);
    let mut h_sum = 0.0;
    let mut r2_sum = 0.0;
    let mut states = states.into_iter();
    for k in 1..=n {
        let x = match states.next() {
            Some(s) => s?,
            None => {
                return Err(Error::InvalidParameter(format!(
                    "state sequence ended after {} of {n} steps",
                    k - 1
                )))
            }
        };
        let (next, g) = propagate_direction(p, tau, x, dir).map_err(|e| e.at_step(k as i64))?;
        dir = next;
        if k > n_burn {
            growth.push(g / tau);
            let xi = wrap_pi(dir.y.atan2(dir.x));
            fk.push(q_hat(p, x, xi));
            h_sum += h_bound(p, x);
            r2_sum += x.norm_sq();
        }
    }
    let total_time = n as f64 * tau;
    let burn_in_time = n_burn as f64 * tau;
    let estimate = |b: &BatchMeans, method| LyapunovEstimate {
        lambda_hat: b.mean(),
        total_time,
        tau,
        burn_in_time,
        std_error: b.std_error(DEFAULT_BATCHES),
        method,
    };
    Ok(LyapunovReport {
        tangent: estimate(&growth, Method::TangentGrowth),
        fk: estimate(&fk, Method::FkAverage),
        gap: 0.5 * tau * h_sum / m as f64,
        mean_radius_sq: r2_sum / m as f64,
    })
}

/// Both estimators along the backward Euler trajectory from `x0`.
pub fn analyze(
    p: &ModelParams,
    cfg: &StepConfig,
    path: &NoisePath,
    x0: State,
    u0: Vec2,
    horizon: &Horizon,
) -> Result<LyapunovReport> {
    let n = steps_for(horizon.t_final, cfg.tau());
    let states = trajectory(p, cfg, path, x0, n, None)?.skip(1).map(|r| r.map(|pt| pt.state));
    analyze_states(p, cfg.tau(), states, u0, horizon)
}

/// `(1 / (T - burn_in)) * sum of log |U_{k+1}| - log |U_k|` after burn-in.
pub fn lyap_tangent(
    p: &ModelParams,
    cfg: &StepConfig,
    path: &NoisePath,
    x0: State,
    u0: Vec2,
    horizon: &Horizon,
) -> Result<LyapunovEstimate> {
    analyze(p, cfg, path, x0, u0, horizon).map(|r| r.tangent)
}

/// Time average of `q_hat(X_k, xi_k)` after burn-in, with `xi` read off the
/// renormalised tangent direction started at angle `xi0`.
pub fn lyap_fk(
    p: &ModelParams,
    cfg: &StepConfig,
    path: &NoisePath,
    x0: State,
    xi0: f64,
    horizon: &Horizon,
) -> Result<LyapunovEstimate> {
    analyze(p, cfg, path, x0, TangentFrame::from_angle(xi0).direction(), horizon).map(|r| r.fk)
}

/// `(tau / 2)` times the post-burn-in time average of `h_bound(X_k)`.
pub fn gap_estimate(p: &ModelParams, cfg: &StepConfig, path: &NoisePath, x0: State, horizon: &Horizon) -> Result<f64> {
    analyze(p, cfg, path, x0, Vec2::new(1.0, 0.0), horizon).map(|r| r.gap)
}

/// Lanczos approximation (g = 7, 9 terms) with reflection below 1/2.
pub fn gamma_fn(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    use std::f64::consts::PI;
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma_fn(1.0 - x));
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
}

/// `pi / (2^{1/3} 3^{1/6} Gamma(1/3)^2)`, the constant in the large-shear
/// asymptotics `lambda ~ (2 b sigma)^{2/3} lambda_0 E[gamma^{2/3}]`.
pub fn lambda0_reference() -> f64 {
    let g = gamma_fn(1.0 / 3.0);
    std::f64::consts::PI / (2f64.cbrt() * 3f64.powf(1.0 / 6.0) * g * g)
}
