//! The discrete random dynamical system generated by backward Euler.
//!
//! `cocycle(k, omega, x)` composes `k` backward Euler steps over the noise
//! `omega`; the conjugated system shifts states by the OU path,
//! `y = x - sigma Z*(omega)`, and steps with the OU grid average in place of
//! the raw increment. The two are related by
//! `cocycle(k, omega, x) = T^{-1}(theta_k omega, hat_cocycle(k, omega, T(omega, x)))`.

use crate::error::{Error, Result};
use crate::integrators::{be_step, solve_implicit, StepConfig};
use crate::model::{drift, tangent_matrix, ModelParams, State};
use crate::noise::{NoisePath, OuPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `x - sigma Z*_k`
    Forward,
    /// `x + sigma Z*_k`
    Inverse,
}

/// Everything a cocycle evaluation needs. The OU path must be built on the
/// same noise path (same seed, step and shift).
#[derive(Debug, Clone)]
pub struct CocycleContext {
    params: ModelParams,
    cfg: StepConfig,
    path: NoisePath,
    ou: OuPath,
}

impl CocycleContext {
    pub fn new(params: ModelParams, cfg: StepConfig, path: NoisePath, ou: OuPath) -> Result<Self> {
        params.validate()?;
        if ou.path() != &path {
            return Err(Error::InvalidParameter(
                "OU path is driven by a different noise path (seed, tau or shift differ)".into(),
            ));
        }
        if (path.tau() - cfg.tau()).abs() > 0.0 {
            return Err(Error::InvalidParameter(format!(
                "noise path step {} differs from integrator step {}",
                path.tau(),
                cfg.tau()
            )));
        }
        Ok(CocycleContext { params, cfg, path, ou })
    }

    /// Builds the noise and OU paths from a seed; the OU path is anchored at
    /// index 0.
    pub fn from_seed(params: ModelParams, tau: f64, seed: u64, ou_rate: f64) -> Result<Self> {
        let cfg = StepConfig::new(&params, tau)?;
        let path = NoisePath::new(seed, tau)?;
        let ou = OuPath::new(&path, ou_rate)?;
        CocycleContext::new(params, cfg, path, ou)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn cfg(&self) -> &StepConfig {
        &self.cfg
    }

    pub fn path(&self) -> &NoisePath {
        &self.path
    }

    pub fn ou(&self) -> &OuPath {
        &self.ou
    }

    /// The context over `theta_{t_l} omega`.
    pub fn shift(&self, l: i64) -> CocycleContext {
        CocycleContext {
            params: self.params,
            cfg: self.cfg,
            path: self.path.shift(l),
            ou: self.ou.shift(l),
        }
    }

    /// `phi_tau(k, omega, x)`: `k` backward Euler steps consuming increments
    /// `1..=k`.
    pub fn cocycle(&self, k: usize, x: State) -> Result<State> {
        let mut state = x;
        for j in 1..=k as i64 {
            state = be_step(&self.params, &self.cfg, state, self.path.increment(j)).map_err(|e| e.at_step(j))?;
        }
        Ok(state)
    }

    /// One step `k -> k + 1` of the conjugated system: the solution `y'` of
    /// `y' = y + tau F(y' + sigma Z*_{k+1}) + gamma sigma Z~*_{k+1}`,
    /// found by Newton's method in the conjugated variable (with the same
/// final polishing step as [`solve_implicit`]).
    pub fn hat_step(&self, k: i64, y: State) -> Result<State> {
        let p = &self.params;
        let tau = self.cfg.tau();
        let z_next = self.ou.value(k + 1)?;
        let shift = p.sigma * z_next;
        let rhs = y + (self.ou.gamma() * p.sigma) * self.ou.tilde(k + 1)?;
        let residual_of = |v: State| v - tau * drift(p, v + shift) - rhs;

        let mut v = y;
        let mut g = residual_of(v);
        let mut res = g.norm();
        let mut iterations = 0;
        while !(res < self.cfg.newton_tol()) {
            if iterations == self.cfg.newton_max_iter() || !res.is_finite() {
                return Err(Error::NonConvergence {
                    step: k + 1,
                    iterations,
                    residual: res,
                });
            }
            iterations += 1;
            let jac = tangent_matrix(p, tau, v + shift);
            let delta = jac.solve(-g);
            let mut damping = 1.0;
            loop {
                let cand = v + damping * delta;
                let gc = residual_of(cand);
                let rc = gc.norm();
                if rc < res || damping < 1e-8 {
                    v = cand;
                    g = gc;
                    res = rc;
                    break;
                }
                damping *= 0.5;
            }
        }
        if res > 0.0 {
            let cand = v + tangent_matrix(p, tau, v + shift).solve(-g);
            if residual_of(cand).norm() <= res {
                v = cand;
            }
        }
        Ok(v)
    }

    /// The same step written as
    /// `F_tau(y + sigma Z*_{k+1} + gamma sigma Z~*_{k+1}) - sigma Z*_{k+1}`.
    pub fn hat_step_composed(&self, k: i64, y: State) -> Result<State> {
        let p = &self.params;
        let z_next = self.ou.value(k + 1)?;
        let rhs = y + p.sigma * z_next + (self.ou.gamma() * p.sigma) * self.ou.tilde(k + 1)?;
        let solved = solve_implicit(p, &self.cfg, rhs).map_err(|e| e.at_step(k + 1))?;
        Ok(solved.state - p.sigma * z_next)
    }

    /// `phi^hat_tau(k, omega, y)`.
    pub fn hat_cocycle(&self, k: usize, y: State) -> Result<State> {
        let mut state = y;
        for j in 0..k as i64 {
            state = self.hat_step(j, state)?;
        }
        Ok(state)
    }

    /// `T(theta_{t_k} omega, x)` or its inverse.
    pub fn transform(&self, k: i64, x: State, direction: Direction) -> Result<State> {
        let z = self.params.sigma * self.ou.value(k)?;
        Ok(match direction {
            Direction::Forward => x - z,
            Direction::Inverse => x + z,
        })
    }

    /// `|phi_tau(k, omega, x) - T^{-1}(theta_k omega, phi^hat_tau(k, omega, T(omega, x)))|`.
    pub fn verify_conjugacy(&self, k: usize, x: State) -> Result<f64> {
        let direct = self.cocycle(k, x)?;
        let y0 = self.transform(0, x, Direction::Forward)?;
        let yk = self.hat_cocycle(k, y0)?;
        let back = self.transform(k as i64, yk, Direction::Inverse)?;
        Ok((direct - back).norm())
    }

    /// `|phi_tau(k + l, omega, x) - phi_tau(k, theta_l omega, phi_tau(l, omega, x))|`.
    pub fn verify_cocycle(&self, k: usize, l: usize, x: State) -> Result<f64> {
        let whole = self.cocycle(k + l, x)?;
        let first = self.cocycle(l, x)?;
        let split = self.shift(l as i64).cocycle(k, first)?;
        Ok((whole - split).norm())
    }

    /// `phi_tau(k, theta_{-t_k} omega, x)`: the state at time 0 of the
    /// trajectory started from `x` at time `-t_k`.
    pub fn pullback_point(&self, k: usize, x: State) -> Result<State> {
        self.shift(-(k as i64)).cocycle(k, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vec2;

    fn ctx(sigma: f64, b: f64, tau: f64, seed: u64) -> CocycleContext {
        let p = ModelParams::new(1.0, 1.0, 1.0, b, sigma).unwrap();
        CocycleContext::from_seed(p, tau, seed, 1.0).unwrap()
    }

    #[test]
    fn cocycle_small_k() {
        let c = ctx(1.0, 2.0, 1e-2, 4);
        let x = Vec2::new(0.5, -0.2);
        assert_eq!(c.cocycle(0, x).unwrap(), x);
        let one = be_step(c.params(), c.cfg(), x, c.path().increment(1)).unwrap();
        assert_eq!(c.cocycle(1, x).unwrap(), one);
    }

    #[test]
    fn cocycle_identity_pairs() {
        let c = ctx(1.0, 10.0, 1e-3, 8);
        for (k, l) in [(3, 5), (7, 2), (1, 9)] {
            for x in [Vec2::new(1.2, -0.4), Vec2::new(-1.0, 1.5)] {
                assert!(c.verify_cocycle(k, l, x).unwrap() < 1e-10);
            }
        }
    }

    #[test]
    fn hat_step_forms_agree() {
        let c = ctx(1.0, 10.0, 1e-3, 12);
        for j in 0..20 {
            let y = Vec2::new(0.1 * j as f64 - 1.0, 0.05 * j as f64);
            let a = c.hat_step(j, y).unwrap();
            let b = c.hat_step_composed(j, y).unwrap();
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn hat_step_without_noise_is_be_step() {
        let c = ctx(0.0, 3.0, 1e-2, 2);
        let y = Vec2::new(0.7, 0.1);
        let a = c.hat_step(4, y).unwrap();
        let b = be_step(c.params(), c.cfg(), y, Vec2::ZERO).unwrap();
        assert!((a - b).norm() < 1e-13);
    }

    #[test]
    fn transform_round_trip() {
        let c = ctx(1.0, 2.0, 1e-2, 6);
        let x = Vec2::new(0.3, 0.9);
        let y = c.transform(5, x, Direction::Forward).unwrap();
        assert_eq!(c.transform(5, y, Direction::Inverse).unwrap(), x);
        let z0 = c.ou().value(0).unwrap();
        assert_eq!(c.transform(0, x, Direction::Forward).unwrap(), x - z0);
        let quiet = ctx(0.0, 2.0, 1e-2, 6);
        assert_eq!(quiet.transform(3, x, Direction::Forward).unwrap(), x);
    }

    #[test]
    fn conjugacy_residuals() {
        let c = ctx(1.0, 10.0, 1e-3, 21);
        let x = Vec2::new(0.8, 0.3);
        assert!(c.verify_conjugacy(0, x).unwrap() < 1e-15);
        assert!(c.verify_conjugacy(10, x).unwrap() < 1e-8);
        let quiet = ctx(0.0, 10.0, 1e-3, 21);
        assert!(quiet.verify_conjugacy(25, x).unwrap() < 1e-12);
    }

    #[test]
    fn pullback_uses_shifted_path() {
        let c = ctx(1.0, 2.0, 1e-2, 3);
        let x = Vec2::new(1.0, 0.0);
        assert_eq!(c.pullback_point(0, x).unwrap(), x);
        let k = 50;
        let direct = c.shift(-(k as i64)).cocycle(k, x).unwrap();
        assert_eq!(c.pullback_point(k, x).unwrap(), direct);
    }

    #[test]
    fn mismatched_paths_rejected() {
        let p = ModelParams::new(1.0, 1.0, 1.0, 2.0, 1.0).unwrap();
        let cfg = StepConfig::new(&p, 0.01).unwrap();
        let path = NoisePath::new(1, 0.01).unwrap();
        let ou = OuPath::new(&NoisePath::new(2, 0.01).unwrap(), 1.0).unwrap();
        assert!(CocycleContext::new(p, cfg, path.clone(), ou).is_err());
        let ou = OuPath::new(&path.shift(1), 1.0).unwrap();
        assert!(CocycleContext::new(p, cfg, path, ou).is_err());
    }
}
