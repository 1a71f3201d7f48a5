//! Parameter sweeps of the numerical Lyapunov exponent, bisection of the
//! shear threshold and the strong convergence study.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrators::{be_step, em_step, propagate_direction, steps_for, StepConfig};
use crate::lyapunov::{lyap_tangent, Horizon, LyapunovEstimate};
use crate::model::{drift_jacobian, ModelParams, State, Vec2};
use crate::noise::{derive_seed, NoisePath};

/// Lyapunov exponents over an `alpha x b` grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub alpha_grid: Vec<f64>,
    pub b_grid: Vec<f64>,
    /// `lambda_matrix[i][j]` belongs to `(alpha_grid[i], b_grid[j])`; NaN
    /// for failed cells.
    pub lambda_matrix: Vec<Vec<f64>>,
    pub std_errors: Vec<Vec<f64>>,
    pub tau: f64,
    pub t_final: f64,
    pub burn_in: f64,
    pub seed: u64,
    /// `(i, j, message)` for every failed cell.
    pub failures: Vec<(usize, usize, String)>,
    /// Points `(alpha, b)` where linear interpolation between neighbouring
    /// cells crosses zero.
    pub zero_contour: Vec<(f64, f64)>,
}

/// Noise seed of grid cell `(i, j)`.
pub fn cell_seed(seed: u64, i: usize, j: usize) -> u64 {
    derive_seed(seed, &[i as u64, j as u64])
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter(format!("{name} grid is empty")));
    }
    if grid.iter().any(|v| !v.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(format!("{name} grid must be finite and strictly increasing")));
    }
    Ok(())
}

/// Tangent Lyapunov estimate for every `(alpha, b)` cell, each on its own
/// noise seed. Cells run in parallel; a failing cell is recorded and left
/// as NaN.
#[allow(clippy::too_many_arguments)]
pub fn scan_lambda(
    base: &ModelParams,
    alpha_grid: &[f64],
    b_grid: &[f64],
    tau: f64,
    horizon: &Horizon,
    seed: u64,
    x0: State,
    u0: Vec2,
) -> Result<SweepResult> {
    check_grid("alpha", alpha_grid)?;
    check_grid("b", b_grid)?;
    let nb = b_grid.len();
    let cells: Vec<Result<LyapunovEstimate>> = (0..alpha_grid.len() * nb)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / nb, idx % nb);
            let p = base.with_alpha(alpha_grid[i]).with_b(b_grid[j]);
            p.validate()?;
            let cfg = StepConfig::new(&p, tau)?;
            let path = NoisePath::new(cell_seed(seed, i, j), tau)?;
            lyap_tangent(&p, &cfg, &path, x0, u0, horizon)
        })
        .collect();

    let mut lambda_matrix = vec![vec![f64::NAN; nb]; alpha_grid.len()];
    let mut std_errors = lambda_matrix.clone();
    let mut failures = Vec::new();
    for (idx, cell) in cells.into_iter().enumerate() {
        let (i, j) = (idx / nb, idx % nb);
        match cell {
            Ok(est) => {
                lambda_matrix[i][j] = est.lambda_hat;
                std_errors[i][j] = est.std_error;
            }
            Err(e) => failures.push((i, j, e.to_string())),
        }
    }
    let zero_contour = zero_contour(alpha_grid, b_grid, &lambda_matrix);
    Ok(SweepResult {
        alpha_grid: alpha_grid.to_vec(),
        b_grid: b_grid.to_vec(),
        lambda_matrix,
        std_errors,
        tau,
        t_final: horizon.t_final,
        burn_in: horizon.burn_in,
        seed,
        failures,
        zero_contour,
    })
}

/// Sign changes between horizontally and vertically adjacent cells,
/// located by linear interpolation. A cell that is exactly zero is a
/// contour point itself.
pub fn zero_contour(alpha_grid: &[f64], b_grid: &[f64], m: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let crossing = |v0: f64, v1: f64| -> Option<f64> {
        if !(v0.is_finite() && v1.is_finite()) || v0 == 0.0 || v1 == 0.0 || (v0 < 0.0) == (v1 < 0.0) {
            return None;
        }
        Some(v0 / (v0 - v1))
    };
    for (i, &alpha) in alpha_grid.iter().enumerate() {
        for (j, &b) in b_grid.iter().enumerate() {
            let v = m[i][j];
            if v == 0.0 {
                out.push((alpha, b));
            }
            if j + 1 < b_grid.len() {
                if let Some(s) = crossing(v, m[i][j + 1]) {
                    out.push((alpha, b + s * (b_grid[j + 1] - b)));
                }
            }
            if i + 1 < alpha_grid.len() {
                if let Some(s) = crossing(v, m[i + 1][j]) {
                    out.push((alpha + s * (alpha_grid[i + 1] - alpha), b));
                }
            }
        }
    }
    out
}

/// Seed-averaged exponent at one shear value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AveragedLambda {
    pub b: f64,
    pub lambda_hat: f64,
    /// `sqrt(sum se_i^2) / n`.
    pub std_error: f64,
}

/// Mean of the tangent estimates over `seeds`, evaluated in parallel with
/// common noise across calls.
pub fn averaged_lambda(
    base: &ModelParams,
    b: f64,
    tau: f64,
    horizon: &Horizon,
    seeds: &[u64],
    x0: State,
    u0: Vec2,
) -> Result<AveragedLambda> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("at least one seed is required".into()));
    }
    let p = base.with_b(b);
    p.validate()?;
    let cfg = StepConfig::new(&p, tau)?;
    let estimates: Vec<LyapunovEstimate> = seeds
        .par_iter()
        .map(|&s| {
            let path = NoisePath::new(s, tau)?;
            lyap_tangent(&p, &cfg, &path, x0, u0, horizon)
        })
        .collect::<Result<_>>()?;
    let n = estimates.len() as f64;
    Ok(AveragedLambda {
        b,
        lambda_hat: estimates.iter().map(|e| e.lambda_hat).sum::<f64>() / n,
        std_error: estimates.iter().map(|e| e.std_error * e.std_error).sum::<f64>().sqrt() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bisection {
    pub b_star: f64,
    pub lower: AveragedLambda,
    pub upper: AveragedLambda,
    /// Every midpoint evaluation in order.
    pub history: Vec<BisectionStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BisectionStep {
    pub b_lo: f64,
    pub b_hi: f64,
    pub mid: AveragedLambda,
}

/// Brackets the shear value at which the seed-averaged exponent changes
/// sign. Both endpoints must be separated from zero by two standard
/// errors with the right signs.
#[allow(clippy::too_many_arguments)]
pub fn bisect_bifurcation(
    base: &ModelParams,
    b_lo: f64,
    b_hi: f64,
    tau: f64,
    horizon: &Horizon,
    tol_b: f64,
    seeds: &[u64],
    x0: State,
    u0: Vec2,
) -> Result<Bisection> {
    if !(b_lo < b_hi) || !(tol_b > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need b_lo < b_hi and tol_b > 0, got [{b_lo}, {b_hi}] and {tol_b}"
        )));
    }
    let eval = |b: f64| averaged_lambda(base, b, tau, horizon, seeds, x0, u0);
    let lower = eval(b_lo)?;
    let upper = eval(b_hi)?;
    for (end, negative) in [(&lower, true), (&upper, false)] {
        let separated = if negative {
            end.lambda_hat < -2.0 * end.std_error
        } else {
            end.lambda_hat > 2.0 * end.std_error
        };
        if !separated {
            return Err(Error::SignAmbiguous {
                b: end.b,
                lambda: end.lambda_hat,
                std_error: end.std_error,
            });
        }
    }
    let (mut lo, mut hi) = (b_lo, b_hi);
    let mut history = Vec::new();
    while hi - lo > tol_b {
        let mid = eval(0.5 * (lo + hi))?;
        history.push(BisectionStep { b_lo: lo, b_hi: hi, mid });
        if mid.lambda_hat < 0.0 {
            lo = mid.b;
        } else {
            hi = mid.b;
        }
    }
    Ok(Bisection {
        b_star: 0.5 * (lo + hi),
        lower,
        upper,
        history,
    })
}

/// Scheme used for the fine reference path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ReferenceScheme {
    /// Explicit Euler-Maruyama with explicit tangent propagation.
    EulerMaruyama,
    /// Backward Euler with the implicit tangent step.
    BackwardEuler,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub tau_list: Vec<f64>,
    /// RMS over seeds of the sup-in-time state error, one per step size.
    pub rms_errors_state: Vec<f64>,
    pub rms_errors_direction: Vec<f64>,
    /// Delta-method standard errors of the RMS values.
    pub se_state: Vec<f64>,
    pub se_direction: Vec<f64>,
    pub fitted_order_state: f64,
    pub fitted_order_direction: f64,
    pub seeds: usize,
    pub ref_refinement: usize,
    pub t_final: f64,
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn sign_free_distance(u: Vec2, v: Vec2) -> f64 {
    (u - v).norm().min((u + v).norm())
}

/// Sup over the coarse grid of the state and direction errors of backward
/// Euler at step `tau` against the fine reference.
#[allow(clippy::too_many_arguments)]
fn path_errors(
    p: &ModelParams,
    cfg: &StepConfig,
    path: &NoisePath,
    refinement: usize,
    n: usize,
    x0: State,
    u0: Vec2,
    reference: ReferenceScheme,
) -> Result<(f64, f64)> {
    let tau = cfg.tau();
    let h = tau / refinement as f64;
    let fine_cfg = match reference {
        ReferenceScheme::BackwardEuler => Some(StepConfig::new(p, h)?),
        ReferenceScheme::EulerMaruyama => None,
    };
    let u0 = (1.0 / u0.norm()) * u0;
    let (mut xc, mut uc) = (x0, u0);
    let (mut xf, mut uf) = (x0, u0);
    let (mut sup_x, mut sup_u) = (0.0_f64, 0.0_f64);
    for k in 1..=n as i64 {
        let refined = path.refine(k, refinement);
        xc = be_step(p, cfg, xc, refined.coarse).map_err(|e| e.at_step(k))?;
        uc = propagate_direction(p, tau, xc, uc).map_err(|e| e.at_step(k))?.0;
        for &dw in &refined.fine {
            match &fine_cfg {
                None => {
                    let jac = drift_jacobian(p, xf);
                    let u = uf + h * jac.apply(uf);
                    xf = em_step(p, h, xf, dw);
                    uf = (1.0 / u.norm()) * u;
                }
                Some(fc) => {
                    xf = be_step(p, fc, xf, dw).map_err(|e| e.at_step(k))?;
                    uf = propagate_direction(p, h, xf, uf).map_err(|e| e.at_step(k))?.0;
                }
            }
        }
        if !(xf.is_finite() && uf.is_finite()) {
            return Err(Error::NonConvergence {
                step: k,
                iterations: 0,
                residual: f64::INFINITY,
            });
        }
        sup_x = sup_x.max((xf - xc).norm());
        sup_u = sup_u.max(sign_free_distance(uf, uc));
    }
    Ok((sup_x, sup_u))
}

fn rms_with_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    let mean_sq = sq.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        sq.iter().map(|s| (s - mean_sq) * (s - mean_sq)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let rms = mean_sq.sqrt();
    let se = if rms > 0.0 { (var / n).sqrt() / (2.0 * rms) } else { 0.0 };
    (rms, se)
}

/// Strong error of backward Euler against a fine Euler-Maruyama reference
/// driven by Brownian-bridge refinements of the same increments. Seeds are
/// `derive_seed(seed, [s])` for `s < n_seeds`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    p: &ModelParams,
    tau_list: &[f64],
    ref_refinement: usize,
    t_final: f64,
    n_seeds: usize,
    seed: u64,
    x0: State,
    u0: Vec2,
) -> Result<ConvergenceReport> {
    if ref_refinement < 64 {
        return Err(Error::InvalidParameter(format!(
            "reference refinement must be at least 64, got {ref_refinement}"
        )));
    }
    convergence_study_with_reference(
        p,
        tau_list,
        ref_refinement,
        t_final,
        n_seeds,
        seed,
        x0,
        u0,
        ReferenceScheme::EulerMaruyama,
    )
}

/// [`convergence_study`] with a selectable reference scheme and no lower
/// bound on the refinement.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study_with_reference(
    p: &ModelParams,
    tau_list: &[f64],
    ref_refinement: usize,
    t_final: f64,
    n_seeds: usize,
    seed: u64,
    x0: State,
    u0: Vec2,
    reference: ReferenceScheme,
) -> Result<ConvergenceReport> {
    p.validate()?;
    if tau_list.is_empty() || n_seeds == 0 || ref_refinement == 0 || !(t_final > 0.0) {
        return Err(Error::InvalidParameter(
            "need at least one step size, one seed, a positive refinement and T > 0".into(),
        ));
    }
    if !(u0.norm() > 0.0) {
        return Err(Error::InvalidParameter("initial tangent vector must be nonzero".into()));
    }
    let mut taus = tau_list.to_vec();
    taus.sort_by(|a, b| b.total_cmp(a));
    let cfgs: Vec<StepConfig> = taus.iter().map(|&t| StepConfig::new(p, t)).collect::<Result<_>>()?;

    let mut report = ConvergenceReport {
        tau_list: taus.clone(),
        rms_errors_state: Vec::new(),
        rms_errors_direction: Vec::new(),
        se_state: Vec::new(),
        se_direction: Vec::new(),
        fitted_order_state: f64::NAN,
        fitted_order_direction: f64::NAN,
        seeds: n_seeds,
        ref_refinement,
        t_final,
    };
    for cfg in &cfgs {
        let n = steps_for(t_final, cfg.tau());
        let errs: Vec<(f64, f64)> = (0..n_seeds as u64)
            .into_par_iter()
            .map(|s| {
                let path = NoisePath::new(derive_seed(seed, &[s]), cfg.tau())?;
                path_errors(p, cfg, &path, ref_refinement, n, x0, u0, reference)
            })
            .collect::<Result<_>>()?;
        let (xs, us): (Vec<f64>, Vec<f64>) = errs.into_iter().unzip();
        let (rx, sx) = rms_with_se(&xs);
        let (ru, su) = rms_with_se(&us);
        report.rms_errors_state.push(rx);
        report.se_state.push(sx);
        report.rms_errors_direction.push(ru);
        report.se_direction.push(su);
    }
    if taus.len() >= 2 {
        report.fitted_order_state = loglog_slope(&taus, &report.rms_errors_state);
        report.fitted_order_direction = loglog_slope(&taus, &report.rms_errors_direction);
    }
    Ok(report)
}
