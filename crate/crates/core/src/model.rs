//! The stochastic Hopf normal form with shear.
//!
//! ```text
//! dX = F(X) dt + sigma dW,
//! F(X) = [[alpha, -beta], [beta, alpha]] X + |X|^2 [[-a, -b], [b, -a]] X
//! ```
//!
//! Everything in this module is a pure function of [`ModelParams`] and its
//! arguments: the vector field, its Jacobian, the tangent-step matrix of the
//! backward Euler linearisation, and the scalar observables used by the
//! Lyapunov estimators.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A vector in the plane. Used for states, noise increments and tangent
/// directions alike.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

/// A point in phase space.
pub type State = Vec2;

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Polar angle in [0, 2pi); zero at the origin.
    pub fn angle(self) -> f64 {
        if self.x == 0.0 && self.y == 0.0 {
            return 0.0;
        }
        let phi = self.y.atan2(self.x).rem_euclid(2.0 * PI);
        if phi >= 2.0 * PI {
            0.0
        } else {
            phi
        }
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    #[inline]
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    #[inline]
    fn mul(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self * rhs.x, self * rhs.y)
    }
}

/// Row-major 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub m: [[f64; 2]; 2],
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        m: [[1.0, 0.0], [0.0, 1.0]],
    };

    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Mat2 {
            m: [[a11, a12], [a21, a22]],
        }
    }

    #[inline]
    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    #[inline]
    pub fn apply(&self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y,
            self.m[1][0] * v.x + self.m[1][1] * v.y,
        )
    }

    /// Solves `self * u = rhs` by Cramer's rule. The caller is responsible
    /// for checking the determinant.
    #[inline]
    pub fn solve(&self, rhs: Vec2) -> Vec2 {
        let det = self.det();
        Vec2::new(
            (self.m[1][1] * rhs.x - self.m[0][1] * rhs.y) / det,
            (self.m[0][0] * rhs.y - self.m[1][0] * rhs.x) / det,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }
}

/// Coefficients of the SDE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Linear growth rate.
    pub alpha: f64,
    /// Rotation speed.
    pub beta: f64,
    /// Radial damping, strictly positive.
    pub a: f64,
    /// Shear strength.
    pub b: f64,
    /// Additive noise amplitude.
    pub sigma: f64,
}

impl ModelParams {
    pub fn new(alpha: f64, beta: f64, a: f64, b: f64, sigma: f64) -> Result<Self> {
        let p = ModelParams {
            alpha,
            beta,
            a,
            b,
            sigma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("a", self.a),
            ("b", self.b),
            ("sigma", self.sigma),
        ];
        if let Some((name, v)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} = {v} is not finite")));
        }
        if self.a <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "a = {} must be strictly positive",
                self.a
            )));
        }
        if self.sigma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma = {} must be non-negative",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn with_b(self, b: f64) -> Self {
        ModelParams { b, ..self }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        ModelParams { alpha, ..self }
    }

    pub fn with_sigma(self, sigma: f64) -> Self {
        ModelParams { sigma, ..self }
    }
}

/// Reduces an angle to the projective range [0, pi).
#[inline]
pub fn wrap_pi(angle: f64) -> f64 {
    let r = angle.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// The drift `F(X)`.
#[inline]
pub fn drift(p: &ModelParams, x: State) -> State {
    let r2 = x.norm_sq();
    Vec2::new(
        p.alpha * x.x - p.beta * x.y + r2 * (-p.a * x.x - p.b * x.y),
        p.beta * x.x + p.alpha * x.y + r2 * (p.b * x.x - p.a * x.y),
    )
}

/// The Jacobian `DF(X)`.
#[inline]
pub fn drift_jacobian(p: &ModelParams, x: State) -> Mat2 {
    let (u, v) = (x.x, x.y);
    let (uu, vv, uv) = (u * u, v * v, u * v);
    Mat2::new(
        p.alpha - p.a * (3.0 * uu + vv) - 2.0 * p.b * uv,
        -p.beta - p.b * (uu + 3.0 * vv) - 2.0 * p.a * uv,
        p.beta + p.b * (3.0 * uu + vv) - 2.0 * p.a * uv,
        p.alpha - p.a * (uu + 3.0 * vv) + 2.0 * p.b * uv,
    )
}

/// The matrix `M(x, y)` of the linear system `M U_{k+1} = U_k` that
/// propagates tangent vectors through one backward Euler step. Written out
/// entrywise; equal to `I - tau DF(X)`.
#[inline]
pub fn tangent_matrix(p: &ModelParams, tau: f64, x: State) -> Mat2 {
    let (u, v) = (x.x, x.y);
    let (uu, vv, uv) = (u * u, v * v, u * v);
    let diag = 1.0 - p.alpha * tau;
    Mat2::new(
        diag + tau * (3.0 * p.a * uu + 2.0 * p.b * uv + p.a * vv),
        p.beta * tau + tau * (p.b * uu + 2.0 * p.a * uv + 3.0 * p.b * vv),
        -p.beta * tau - tau * (3.0 * p.b * uu - 2.0 * p.a * uv + p.b * vv),
        diag + tau * (p.a * uu - 2.0 * p.b * uv + 3.0 * p.a * vv),
    )
}

/// Instantaneous log-growth rate of a tangent vector with direction angle
/// `xi` at the point `x`.
#[inline]
pub fn q_hat(p: &ModelParams, x: State, xi: f64) -> f64 {
    let (s2, c2) = (2.0 * xi).sin_cos();
    let (u, v) = (x.x, x.y);
    p.alpha - 2.0 * p.a * (u * u + v * v) - (2.0 * p.b * c2 + 2.0 * p.a * s2) * u * v
        + (p.b * s2 - p.a * c2) * (u * u - v * v)
}

/// The same observable in polar form, with `psi` the angle between the
/// tangent direction and the state.
#[inline]
pub fn q_polar(p: &ModelParams, gamma: f64, psi: f64) -> f64 {
    let (s2, c2) = (2.0 * psi).sin_cos();
    let g2 = gamma * gamma;
    p.alpha - 2.0 * p.a * g2 + g2 * (p.b * s2 - p.a * c2)
}

/// `3(alpha^2 + beta^2) + 15(a^2 + b^2) |X|^4`; bounds the squared
/// stretching `|DF(X) C|^2` of a unit vector and controls the gap between
/// the two Lyapunov estimators.
#[inline]
pub fn h_bound(p: &ModelParams, x: State) -> f64 {
    let r2 = x.norm_sq();
    3.0 * (p.alpha * p.alpha + p.beta * p.beta) + 15.0 * (p.a * p.a + p.b * p.b) * r2 * r2
}

/// Velocity `G(X, C)` of the unit tangent direction `C = (c, s)`.
pub fn direction_drift(p: &ModelParams, x: State, dir: Vec2) -> Result<Vec2> {
    let norm = dir.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::NonUnitDirection { norm });
    }
    let (u, v) = (x.x, x.y);
    let (c, s) = (dir.x, dir.y);
    let (a, b, beta) = (p.a, p.b, p.beta);
    let r2 = u * u + v * v;
    let d2 = u * u - v * v;
    let uv = u * v;
    let g1 = -beta * s - 2.0 * b * s * r2 - (2.0 * a * c * s * s + b * c * c * s - b * s * s * s) * d2
        - (4.0 * b * c * s * s - 2.0 * a * c * c * s + 2.0 * a * s * s * s) * uv;
    let g2 = beta * c + 2.0 * b * c * r2 + (2.0 * a * c * c * s + b * c * c * c - b * c * s * s) * d2
        + (4.0 * b * c * c * s - 2.0 * a * c * c * c + 2.0 * a * c * s * s) * uv;
    Ok(Vec2::new(g1, g2))
}

/// Angular speed of the tangent direction, `d xi / dt`.
pub fn direction_angle_rate(p: &ModelParams, x: State, xi: f64) -> f64 {
    let g2 = x.norm_sq();
    let rel = 2.0 * xi - 2.0 * x.angle();
    p.beta + 2.0 * p.b * g2 + g2 * (p.a * rel.sin() + p.b * rel.cos())
}

/// Radius, angle and relative tangent direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarState {
    pub gamma: f64,
    /// In [0, 2pi).
    pub phi: f64,
    /// In [0, pi).
    pub psi: f64,
}

impl PolarState {
    /// At the origin the state angle is taken to be zero.
    pub fn from_cartesian(x: State, xi: f64) -> Self {
        let phi = x.angle();
        PolarState {
            gamma: x.norm(),
            phi,
            psi: wrap_pi(xi - phi),
        }
    }
}

/// Drift coefficients `(d gamma, d phi, d psi)` of the polar form of the
/// SDE. The radial drift includes the Ito correction `sigma^2 / (2 gamma)`
/// and is therefore singular at `gamma = 0`.
pub fn polar_drift(p: &ModelParams, s: PolarState) -> (f64, f64, f64) {
    let g = s.gamma;
    let g2 = g * g;
    let d_gamma = p.alpha * g - p.a * g * g2 + p.sigma * p.sigma / (2.0 * g);
    let d_phi = p.beta + p.b * g2;
    let (sp, cp) = s.psi.sin_cos();
    let d_psi = 2.0 * g2 * cp * (p.a * sp + p.b * cp);
    (d_gamma, d_phi, d_psi)
}

/// Largest admissible step size: the backward Euler state equation is
/// uniquely solvable below `min{1/(1+4|alpha|), a/(1+|a alpha|+|b beta|)}`
/// and the tangent system below `1/(1+|alpha|)`. Integrators reject any
/// `tau` at or above the minimum of all three.
pub fn max_stable_step(p: &ModelParams) -> f64 {
    let state_a = 1.0 / (1.0 + 4.0 * p.alpha.abs());
    let state_b = p.a / (1.0 + (p.a * p.alpha).abs() + (p.b * p.beta).abs());
    let tangent = 1.0 / (1.0 + p.alpha.abs());
    state_a.min(state_b).min(tangent)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> ModelParams {
        ModelParams::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn drift_examples() {
        let p = unit();
        assert_eq!(drift(&p, Vec2::ZERO), Vec2::ZERO);
        assert_eq!(drift(&p, Vec2::new(1.0, 0.0)), Vec2::new(0.0, 2.0));
        let x = Vec2::new(0.3, -1.7);
        let (f, g) = (drift(&p, x), drift(&p, -x));
        assert!((f + g).norm() < 1e-14);
    }

    #[test]
    fn jacobian_examples() {
        let p = ModelParams::new(0.7, -1.3, 1.0, 2.0, 1.0).unwrap();
        assert_eq!(drift_jacobian(&p, Vec2::ZERO), Mat2::new(0.7, 1.3, -1.3, 0.7));
        let q = ModelParams::new(0.0, 0.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(drift_jacobian(&q, Vec2::new(1.0, 0.0)), Mat2::new(-3.0, 0.0, 0.0, -1.0));
    }

    #[test]
    fn tangent_matrix_at_origin() {
        let p = unit();
        let m = tangent_matrix(&p, 0.1, Vec2::ZERO);
        let want = Mat2::new(0.9, 0.1, -0.1, 0.9);
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.m[i][j] - want.m[i][j]).abs() < 1e-15);
            }
        }
        assert!((m.det() - 0.82).abs() < 1e-14);
    }

    #[test]
    fn tangent_matrix_is_identity_minus_tau_jacobian() {
        let p = ModelParams::new(0.4, 1.2, 0.8, -3.0, 1.0).unwrap();
        let x = Vec2::new(0.9, -0.35);
        let tau = 0.013;
        let m = tangent_matrix(&p, tau, x);
        let j = drift_jacobian(&p, x);
        for i in 0..2 {
            for k in 0..2 {
                let id = if i == k { 1.0 } else { 0.0 };
                assert!((m.m[i][k] - (id - tau * j.m[i][k])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tangent_matrix_tends_to_identity() {
        let p = unit();
        let x = Vec2::new(1.1, 0.4);
        let (m1, m2) = (tangent_matrix(&p, 1e-3, x), tangent_matrix(&p, 5e-4, x));
        for i in 0..2 {
            for k in 0..2 {
                let id = if i == k { 1.0 } else { 0.0 };
                let d1 = m1.m[i][k] - id;
                let d2 = m2.m[i][k] - id;
                assert!((d1 - 2.0 * d2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn q_examples() {
        let p = ModelParams::new(1.0, 0.0, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(q_hat(&unit(), Vec2::ZERO, 0.7), 1.0);
        assert!((q_hat(&p, Vec2::new(1.0, 0.0), 0.0) + 2.0).abs() < 1e-15);
        let p0 = ModelParams::new(0.0, 0.0, 1.0, 0.0, 1.0).unwrap();
        assert!((q_polar(&p0, 1.0, 0.0) + 3.0).abs() < 1e-15);
        assert_eq!(q_polar(&unit(), 0.0, 1.3), 1.0);
        let v1 = q_polar(&unit(), 0.8, 0.3);
        let v2 = q_polar(&unit(), 0.8, 0.3 + PI);
        assert!((v1 - v2).abs() < 1e-14);
    }

    #[test]
    fn h_bound_examples() {
        assert_eq!(h_bound(&unit(), Vec2::ZERO), 6.0);
        let p = ModelParams::new(0.0, 0.0, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(h_bound(&p, Vec2::new(1.0, 0.0)), 15.0);
    }

    #[test]
    fn direction_drift_at_origin() {
        let p = unit();
        assert_eq!(direction_drift(&p, Vec2::ZERO, Vec2::new(1.0, 0.0)).unwrap(), Vec2::new(0.0, 1.0));
        assert_eq!(direction_drift(&p, Vec2::ZERO, Vec2::new(0.0, 1.0)).unwrap(), Vec2::new(-1.0, 0.0));
        assert!(matches!(
            direction_drift(&p, Vec2::ZERO, Vec2::new(1.0, 1.0)),
            Err(Error::NonUnitDirection { .. })
        ));
    }

    #[test]
    fn step_bound_examples() {
        assert!((max_stable_step(&unit()) - 0.2).abs() < 1e-15);
        let p = ModelParams::new(0.0, 0.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(max_stable_step(&p), 1.0);
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(1.0, 1.0, 0.0, 1.0, 1.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1.0, 1.0, -0.1).is_err());
        assert!(ModelParams::new(f64::NAN, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1.0, 1.0, 0.0).is_ok());
    }

    #[test]
    fn wrap_pi_range() {
        for a in [-7.0, -PI, -1e-17, 0.0, 1.0, PI, 3.0 * PI + 0.5] {
            let w = wrap_pi(a);
            assert!((0.0..PI).contains(&w), "{a} -> {w}");
        }
    }

    #[test]
    fn polar_origin_convention() {
        let s = PolarState::from_cartesian(Vec2::ZERO, 2.0);
        assert_eq!(s.phi, 0.0);
        assert_eq!(s.psi, 2.0);
    }
}
