//! Point clouds driven by one noise realisation, synchronisation
//! diagnostics and log-density rasters of the empirical sample measure.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrators::{be_step, StepConfig};
use crate::model::{ModelParams, State, Vec2};
use crate::noise::{domain, CounterStream, NoisePath};

/// Subsample size for [`diameter`] on large clouds.
pub const DEFAULT_DIAMETER_SAMPLE: usize = 2048;
/// Pseudo-count added to every cell before taking logs.
pub const LOG_DENSITY_EPS: f64 = 0.5;
const CHUNK_STEPS: usize = 8192;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSnapshot {
    pub time: f64,
    pub step: i64,
    pub points: Vec<State>,
    pub diameter: f64,
    pub mean: State,
}

impl EnsembleSnapshot {
    pub fn new(time: f64, step: i64, points: Vec<State>) -> Self {
        let diameter = diameter(&points, DEFAULT_DIAMETER_SAMPLE);
        let mean = mean(&points);
        EnsembleSnapshot {
            time,
            step,
            points,
            diameter,
            mean,
        }
    }
}

/// What to do with a point whose Newton solve fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailurePolicy {
    #[default]
    Abort,
    Drop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    pub snapshots: Vec<EnsembleSnapshot>,
    /// Indices (into the initial cloud) of points removed under
    /// [`FailurePolicy::Drop`].
    pub dropped: Vec<usize>,
}

/// `n` points from the standard normal law in the plane.
pub fn normal_cloud(seed: u64, n: usize) -> Vec<State> {
    let stream = CounterStream::new(seed, domain::CLOUD);
    (0..n)
        .map(|i| {
            let mut z = [0.0; 2];
            stream.normals(i as i64, &mut z);
            Vec2::new(z[0], z[1])
        })
        .collect()
}

pub fn mean(points: &[State]) -> State {
    if points.is_empty() {
        return Vec2::ZERO;
    }
    let s = points.iter().fold(Vec2::ZERO, |acc, &p| acc + p);
    (1.0 / points.len() as f64) * s
}

/// Maximum pairwise distance over an evenly strided subsample of at most
/// `sample_size` points (exact when the cloud is no larger than that).
pub fn diameter(points: &[State], sample_size: usize) -> f64 {
    let n = points.len();
    let m = sample_size.max(1).min(n);
    let sample: Vec<State> = if m == n {
        points.to_vec()
    } else {
        (0..m).map(|i| points[i * n / m]).collect()
    };
    sample
        .par_iter()
        .enumerate()
        .map(|(i, &p)| sample[i + 1..].iter().map(|&q| (p - q).norm_sq()).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max)
        .sqrt()
}

/// Distance between the means of two snapshots.
pub fn mean_displacement(a: &EnsembleSnapshot, b: &EnsembleSnapshot) -> f64 {
    (a.mean - b.mean).norm()
}

fn snapshot_steps(times: &[f64], t_final: f64, tau: f64) -> Result<Vec<i64>> {
    let mut steps = Vec::with_capacity(times.len());
    let mut prev = f64::NEG_INFINITY;
    for &t in times {
        if !(t >= 0.0 && t <= t_final * (1.0 + 1e-12)) {
            return Err(Error::InvalidParameter(format!("snapshot time {t} outside [0, {t_final}]")));
        }
        if t < prev {
            return Err(Error::InvalidParameter("snapshot times must be sorted".into()));
        }
        prev = t;
        let k = (t / tau).round();
        if (k * tau - t).abs() > 1e-6 * tau.max(t.abs() * 1e-6) && (t / tau - k).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!("snapshot time {t} is not a multiple of tau = {tau}")));
        }
        steps.push(k as i64);
    }
    Ok(steps)
}

/// Evolves every point of `points0` under the same increments and records
/// the cloud at each of `snapshot_times` (sorted, multiples of `tau`, inside
/// `[0, t_final]`).
pub fn evolve_ensemble(
    params: &ModelParams,
    cfg: &StepConfig,
    path: &NoisePath,
    points0: &[State],
    t_final: f64,
    snapshot_times: &[f64],
    policy: FailurePolicy,
) -> Result<EnsembleRun> {
    let tau = cfg.tau();
    let steps = snapshot_steps(snapshot_times, t_final, tau)?;
    // (original index, state, alive)
    let mut cloud: Vec<(usize, State, bool)> = points0.iter().enumerate().map(|(i, &p)| (i, p, true)).collect();
    let mut dropped = Vec::new();
    let mut snapshots = Vec::with_capacity(steps.len());
    let mut current = 0_i64;

    for (&target, &time) in steps.iter().zip(snapshot_times) {
        while current < target {
            let len = ((target - current) as usize).min(CHUNK_STEPS);
            let incs = path.increments(current + 1, len);
            let first = current + 1;
            let failures: Vec<(usize, Error)> = cloud
                .par_iter_mut()
                .filter_map(|(idx, x, alive)| {
                    if !*alive {
                        return None;
                    }
                    for (j, dw) in incs.iter().enumerate() {
                        match be_step(params, cfg, *x, *dw) {
                            Ok(next) => *x = next,
                            Err(e) => {
                                *alive = false;
                                return Some((*idx, e.at_step(first + j as i64)));
                            }
                        }
                    }
                    None
                })
                .collect();
            if let Some((point, source)) = failures.into_iter().min_by_key(|(i, _)| *i).map(|f| (f.0, f.1)) {
                if policy == FailurePolicy::Abort {
                    return Err(Error::PointFailed {
                        point,
                        source: Box::new(source),
                    });
                }
            }
            if policy == FailurePolicy::Drop {
                dropped.extend(cloud.iter().filter(|c| !c.2).map(|c| c.0));
                cloud.retain(|c| c.2);
            }
            current += len as i64;
        }
        let points: Vec<State> = cloud.iter().map(|c| c.1).collect();
        snapshots.push(EnsembleSnapshot::new(time, target, points));
    }
    dropped.sort_unstable();
    Ok(EnsembleRun { snapshots, dropped })
}

/// Raster geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidParameter("grid needs at least one cell per axis".into()));
        }
        if !(x_min < x_max && y_min < y_max) || ![x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "grid bounds [{x_min}, {x_max}] x [{y_min}, {y_max}] are not ordered"
            )));
        }
        Ok(GridSpec {
            x_min,
            x_max,
            y_min,
            y_max,
            nx,
            ny,
        })
    }

    /// `[-half_width, half_width]^2` with `n x n` cells.
    pub fn square(half_width: f64, n: usize) -> Result<Self> {
        GridSpec::new(-half_width, half_width, -half_width, half_width, n, n)
    }

    /// Bounds expanded to cover every finite point, with a 5% margin.
    pub fn fit(points: &[State], nx: usize, ny: usize) -> Result<Self> {
        let finite = points.iter().filter(|p| p.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in finite {
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
        }
        if !x0.is_finite() {
            return GridSpec::square(1.0, nx.max(ny));
        }
        let pad = |lo: f64, hi: f64| {
            let w = (hi - lo).max(1e-9);
            (lo - 0.05 * w, hi + 0.05 * w)
        };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        GridSpec::new(x0, x1, y0, y1, nx, ny)
    }

    #[inline]
    fn cell(&self, p: State) -> Option<(usize, usize)> {
        if !p.is_finite() || p.x < self.x_min || p.x > self.x_max || p.y < self.y_min || p.y > self.y_max {
            return None;
        }
        let fx = (p.x - self.x_min) / (self.x_max - self.x_min) * self.nx as f64;
        let fy = (p.y - self.y_min) / (self.y_max - self.y_min) * self.ny as f64;
        Some(((fx as usize).min(self.nx - 1), (fy as usize).min(self.ny - 1)))
    }
}

/// Cell counts of a point cloud. `counts[iy * nx + ix]`, with `iy = 0` the
/// bottom row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramGrid {
    pub spec: GridSpec,
    pub counts: Vec<u64>,
    pub out_of_bounds: u64,
    pub total: u64,
}

impl HistogramGrid {
    pub fn count(&self, ix: usize, iy: usize) -> u64 {
        self.counts[iy * self.spec.nx + ix]
    }

    /// `log10((count + 0.5) / total)`.
    pub fn log_density(&self, ix: usize, iy: usize) -> f64 {
        ((self.count(ix, iy) as f64 + LOG_DENSITY_EPS) / self.total.max(1) as f64).log10()
    }

    pub fn occupied_cells(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Range `[log10(eps / total), log10((max + eps) / total)]` mapped onto
    /// the 16-bit grey scale.
    pub fn log_range(&self) -> (f64, f64) {
        let total = self.total.max(1) as f64;
        let max = self.counts.iter().copied().max().unwrap_or(0) as f64;
        ((LOG_DENSITY_EPS / total).log10(), ((max + LOG_DENSITY_EPS) / total).log10())
    }

    /// Binary 16-bit PGM (P5, maxval 65535, big-endian samples), top row =
    /// largest `y`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let GridSpec { nx, ny, .. } = self.spec;
        let header = format!("P5\n{nx} {ny}\n65535\n");
        let mut out = Vec::with_capacity(header.len() + 2 * nx * ny);
        out.extend_from_slice(header.as_bytes());
        let (lo, hi) = self.log_range();
        let span = hi - lo;
        for iy in (0..ny).rev() {
            for ix in 0..nx {
                let v = if span > 0.0 {
                    ((self.log_density(ix, iy) - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
                } else {
                    0
                };
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
        out
    }
}

/// Bins a cloud; non-finite or outside points are counted separately.
pub fn histogram(points: &[State], spec: &GridSpec) -> HistogramGrid {
    let mut counts = vec![0u64; spec.nx * spec.ny];
    let mut out_of_bounds = 0;
    for &p in points {
        match spec.cell(p) {
            Some((ix, iy)) => counts[iy * spec.nx + ix] += 1,
            None => out_of_bounds += 1,
        }
    }
    HistogramGrid {
        spec: *spec,
        counts,
        out_of_bounds,
        total: points.len() as u64,
    }
}

/// `x,y` rows with a header line.
pub fn points_csv(points: &[State]) -> String {
    let mut s = String::with_capacity(40 * points.len() + 8);
    s.push_str("x,y\n");
    for p in points {
        s.push_str(&format!("{:e},{:e}\n", p.x, p.y));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diameter_examples() {
        assert_eq!(diameter(&[Vec2::new(1.0, 1.0); 5], 2048), 0.0);
        assert_eq!(diameter(&[Vec2::ZERO, Vec2::new(3.0, 4.0)], 2048), 5.0);
        assert_eq!(diameter(&[], 2048), 0.0);
        let cloud = normal_cloud(3, 500);
        assert!(diameter(&cloud, 50) <= diameter(&cloud, 500));
    }

    #[test]
    fn histogram_single_cell() {
        let spec = GridSpec::square(1.0, 8).unwrap();
        let h = histogram(&[Vec2::new(0.1, 0.1); 7], &spec);
        assert_eq!(h.occupied_cells(), 1);
        assert_eq!(h.count(4, 4), 7);
        assert_eq!(h.total, 7);
    }

    #[test]
    fn histogram_conserves_mass() {
        let spec = GridSpec::square(1.0, 16).unwrap();
        let mut pts = normal_cloud(9, 1000);
        pts.push(Vec2::new(f64::NAN, 0.0));
        let h = histogram(&pts, &spec);
        assert_eq!(h.counts.iter().sum::<u64>() + h.out_of_bounds, h.total);
        assert_eq!(h.total, 1001);
        assert!(h.out_of_bounds > 0);
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(1.0, 0.0, 0.0, 1.0, 4, 4).is_err());
        assert!(GridSpec::new(0.0, 1.0, 0.0, 1.0, 0, 4).is_err());
        let fit = GridSpec::fit(&[Vec2::new(-2.0, 1.0), Vec2::new(3.0, 5.0)], 10, 10).unwrap();
        assert!(fit.x_min < -2.0 && fit.x_max > 3.0 && fit.y_min < 1.0 && fit.y_max > 5.0);
    }

    #[test]
    fn pgm_layout() {
        let spec = GridSpec::new(0.0, 2.0, 0.0, 2.0, 2, 2).unwrap();
        // One point in the top-left cell (x < 1, y > 1).
        let h = histogram(&[Vec2::new(0.5, 1.5)], &spec);
        let pgm = h.to_pgm();
        let header = b"P5\n2 2\n65535\n";
        assert_eq!(&pgm[..header.len()], header);
        let px: Vec<u16> = pgm[header.len()..]
            .chunks(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(px, vec![65535, 0, 0, 0]);
    }

    #[test]
    fn snapshot_time_validation() {
        assert!(snapshot_steps(&[0.0, 0.5, 1.0], 1.0, 0.1).is_ok());
        assert!(snapshot_steps(&[0.5, 0.2], 1.0, 0.1).is_err());
        assert!(snapshot_steps(&[2.0], 1.0, 0.1).is_err());
        assert!(snapshot_steps(&[0.55], 1.0, 0.1).is_err());
        assert_eq!(snapshot_steps(&[500.3], 600.0, 1e-4).unwrap(), vec![5_003_000]);
    }
}
