//! Time stepping: the drift-implicit (backward) Euler step solved by Newton,
//! an explicit Euler-Maruyama reference step, and the linearised tangent
//! step used for Lyapunov exponents.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{drift, max_stable_step, tangent_matrix, wrap_pi, ModelParams, State, Vec2};
use crate::noise::NoisePath;

pub const DEFAULT_NEWTON_TOL: f64 = 1e-12;
pub const DEFAULT_NEWTON_MAX_ITER: usize = 50;
const SINGULAR_DET: f64 = 1e-14;

/// Step size and Newton settings, validated against a [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepConfig {
    tau: f64,
    newton_tol: f64,
    newton_max_iter: usize,
}

impl StepConfig {
    /// Rejects `tau` outside `(0, max_stable_step(params))`.
    pub fn new(params: &ModelParams, tau: f64) -> Result<Self> {
        let max_step = max_stable_step(params);
        if !(tau > 0.0 && tau < max_step) {
            return Err(Error::StepTooLarge { tau, max_step });
        }
        Ok(StepConfig {
            tau,
            newton_tol: DEFAULT_NEWTON_TOL,
            newton_max_iter: DEFAULT_NEWTON_MAX_ITER,
        })
    }

    pub fn with_newton(mut self, tol: f64, max_iter: usize) -> Result<Self> {
        if !(tol > 0.0) || max_iter == 0 {
            return Err(Error::InvalidParameter(format!(
                "Newton tolerance {tol} and iteration cap {max_iter} must be positive"
            )));
        }
        self.newton_tol = tol;
        self.newton_max_iter = max_iter;
        Ok(self)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn newton_tol(&self) -> f64 {
        self.newton_tol
    }

    pub fn newton_max_iter(&self) -> usize {
        self.newton_max_iter
    }
}

/// Outcome of one Newton solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solve {
    pub state: State,
    pub residual: f64,
    pub iterations: usize,
}

/// `F_tau(rhs)`: the unique solution `Y` of `Y - tau F(Y) = rhs`.
///
/// Newton's method with the Jacobian `I - tau DF(Y)` and a backtracking
/// line search on the residual norm, started from `rhs`, followed by one
/// polishing step once the tolerance is met. The step index in
/// a returned [`Error::NonConvergence`] is `-1`; callers that know the index
/// replace it.
pub fn solve_implicit(p: &ModelParams, cfg: &StepConfig, rhs: State) -> Result<Solve> {
    let tau = cfg.tau;
    let residual_of = |y: State| y - tau * drift(p, y) - rhs;
    let mut y = rhs;
    let mut g = residual_of(y);
    let mut res = g.norm();
    let mut iterations = 0;
    while !(res < cfg.newton_tol) {
        if iterations == cfg.newton_max_iter || !res.is_finite() {
            return Err(Error::NonConvergence {
                step: -1,
                iterations,
                residual: res,
            });
        }
        iterations += 1;
        let jac = tangent_matrix(p, tau, y);
        let det = jac.det();
        if !(det.abs() >= SINGULAR_DET) {
            return Err(Error::SingularTangentMatrix { det });
        }
        let delta = jac.solve(-g);
        let mut damping = 1.0;
        loop {
            let cand = y + damping * delta;
            let gc = residual_of(cand);
            let rc = gc.norm();
            if rc < res || damping < 1e-8 {
                y = cand;
                g = gc;
                res = rc;
                break;
            }
            damping *= 0.5;
        }
    }
    // One extra correction brings the iterate to rounding level.
    if res > 0.0 {
        let cand = y + tangent_matrix(p, tau, y).solve(-g);
        let rc = residual_of(cand).norm();
        if rc <= res {
            y = cand;
            res = rc;
        }
    }
    Ok(Solve {
        state: y,
        residual: res,
        iterations,
    })
}

/// One backward Euler step `X' = X + tau F(X') + sigma dW`.
#[inline]
pub fn be_step(p: &ModelParams, cfg: &StepConfig, x: State, dw: Vec2) -> Result<State> {
    solve_implicit(p, cfg, x + p.sigma * dw).map(|s| s.state)
}

/// One explicit Euler-Maruyama step `X' = X + tau F(X) + sigma dW`.
#[inline]
pub fn em_step(p: &ModelParams, tau: f64, x: State, dw: Vec2) -> State {
    x + tau * drift(p, x) + p.sigma * dw
}

/// Radius of the invariant circle of the deterministic (`sigma = 0`)
/// backward Euler map, when `alpha > 0`.
///
/// On a circle of radius `r` the map acts as a rotation composed with the
/// scaling `1 / |1 - tau (alpha - a r^2) - i tau (beta + b r^2)|`; the
/// invariant radius makes that modulus one. It lies strictly inside the
/// continuous limit cycle `sqrt(alpha / a)` whenever the rotation speed is
/// nonzero.
pub fn discrete_cycle_radius(p: &ModelParams, tau: f64) -> Option<f64> {
    // (1 - tau alpha + tau a rho)^2 + tau^2 (beta + b rho)^2 = 1 in rho = r^2.
    let d = 1.0 - tau * p.alpha;
    let qa = tau * tau * (p.a * p.a + p.b * p.b);
    let qb = 2.0 * tau * p.a * d + 2.0 * tau * tau * p.beta * p.b;
    let qc = d * d + tau * tau * p.beta * p.beta - 1.0;
    if qc >= 0.0 {
        return None;
    }
    let disc = qb * qb - 4.0 * qa * qc;
    let rho = -2.0 * qc / (qb + disc.sqrt());
    (rho > 0.0).then(|| rho.sqrt())
}

/// Unit tangent direction plus the accumulated `log |U_k|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TangentFrame {
    pub c: f64,
    pub s: f64,
    pub log_growth: f64,
}

impl TangentFrame {
    pub fn new(direction: Vec2) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tangent direction ({}, {}) must be nonzero and finite",
                direction.x, direction.y
            )));
        }
        Ok(TangentFrame {
            c: direction.x / n,
            s: direction.y / n,
            log_growth: 0.0,
        })
    }

    /// Frame pointing at angle `xi`.
    pub fn from_angle(xi: f64) -> Self {
        let (s, c) = xi.sin_cos();
        TangentFrame {
            c,
            s,
            log_growth: 0.0,
        }
    }

    pub fn direction(&self) -> Vec2 {
        Vec2::new(self.c, self.s)
    }

    /// Direction angle in [0, pi).
    pub fn xi(&self) -> f64 {
        wrap_pi(self.s.atan2(self.c))
    }
}

/// Solves `M(X_next) U' = dir` and returns `(U' / |U'|, log |U'|)`.
#[inline]
pub fn propagate_direction(p: &ModelParams, tau: f64, x_next: State, dir: Vec2) -> Result<(Vec2, f64)> {
    let m = tangent_matrix(p, tau, x_next);
    let det = m.det();
    if !(det.abs() >= SINGULAR_DET) {
        return Err(Error::SingularTangentMatrix { det });
    }
    let u = m.solve(dir);
    let n = u.norm();
    Ok(((1.0 / n) * u, n.ln()))
}

/// Advances a tangent frame through one backward Euler step whose new state
/// is `x_next`, renormalising the direction.
pub fn tangent_step(p: &ModelParams, cfg: &StepConfig, x_next: State, frame: &TangentFrame) -> Result<TangentFrame> {
    let (dir, growth) = propagate_direction(p, cfg.tau, x_next, frame.direction())?;
    Ok(TangentFrame {
        c: dir.x,
        s: dir.y,
        log_growth: frame.log_growth + growth,
    })
}

/// One sample of a trajectory: step index, state and (optionally) the
/// tangent frame after that step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub k: i64,
    pub state: State,
    pub frame: Option<TangentFrame>,
}

/// Streaming backward Euler trajectory. Yields the initial point first,
/// then one point per step consuming increments `1..=n`. Stops after the
/// first error.
pub struct Trajectory<'a> {
    params: ModelParams,
    cfg: StepConfig,
    path: &'a NoisePath,
    current: TrajectoryPoint,
    n: i64,
    started: bool,
    failed: bool,
}

impl<'a> Trajectory<'a> {
    pub fn new(
        params: &ModelParams,
        cfg: &StepConfig,
        path: &'a NoisePath,
        x0: State,
        n: usize,
        tangent: Option<Vec2>,
    ) -> Result<Self> {
        let frame = tangent.map(TangentFrame::new).transpose()?;
        Ok(Trajectory {
            params: *params,
            cfg: *cfg,
            path,
            current: TrajectoryPoint {
                k: 0,
                state: x0,
                frame,
            },
            n: n as i64,
            started: false,
            failed: false,
        })
    }
}

impl Iterator for Trajectory<'_> {
    type Item = Result<TrajectoryPoint>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(Ok(self.current));
        }
        if self.current.k >= self.n {
            return None;
        }
        let k = self.current.k + 1;
        let step = be_step(&self.params, &self.cfg, self.current.state, self.path.increment(k))
            .and_then(|x| {
                let frame = match &self.current.frame {
                    Some(f) => Some(tangent_step(&self.params, &self.cfg, x, f)?),
                    None => None,
                };
                Ok(TrajectoryPoint { k, state: x, frame })
            })
            .map_err(|e| e.at_step(k));
        match step {
            Ok(pt) => {
                self.current = pt;
                Some(Ok(pt))
            }
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Convenience wrapper around [`Trajectory::new`].
pub fn trajectory<'a>(
    params: &ModelParams,
    cfg: &StepConfig,
    path: &'a NoisePath,
    x0: State,
    n: usize,
    tangent: Option<Vec2>,
) -> Result<Trajectory<'a>> {
    Trajectory::new(params, cfg, path, x0, n, tangent)
}

/// The state after `n` steps from `x0`.
pub fn integrate(params: &ModelParams, cfg: &StepConfig, path: &NoisePath, x0: State, n: usize) -> Result<State> {
    let mut x = x0;
    for k in 1..=n as i64 {
        x = be_step(params, cfg, x, path.increment(k)).map_err(|e| e.at_step(k))?;
    }
    Ok(x)
}

/// Number of grid steps covering `t` (rounded to nearest).
pub fn steps_for(t: f64, tau: f64) -> usize {
    (t / tau).round().max(0.0) as usize
}
