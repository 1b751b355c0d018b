//! Characteristics of the transport field (v, E(t, x)), their deviation from
//! free streaming, the straightening change of velocity and the scattering
//! limits.
//!
//! With X_{t,t} = x, V_{t,t} = v we write
//! X_{s,t}(x, v) = x − (t − s)v + Y_{s,t}(x − vt, v) and
//! V_{s,t}(x, v) = v + W_{s,t}(x − vt, v).

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibria::EquilibriumProfile;
use crate::error::{precondition, Error, Result};
use crate::interp::{cubic_weights, periodic_cubic, periodic_quintic, CubicSpline};
use crate::reconstruct::{fit_decay, mode_symbol, DecayReport};
use crate::transport::{field_from_density, FieldSnapshot, PhaseDensity};
use crate::volterra::ModeSeries;

type FieldFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Spatial interpolation on a periodic grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaceInterp {
    Cubic,
    Quintic,
}

/// Interpolation between time nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeInterp {
    Linear,
    Cubic,
}

/// Field samples on a periodic d = 1 grid at uniform times `k dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHistory {
    pub dt: f64,
    pub origin: f64,
    pub dx: f64,
    /// One row of `n` samples per time node.
    pub snapshots: Vec<Vec<f64>>,
    pub space: SpaceInterp,
    pub time: TimeInterp,
}

/// Radial field E(t, x) = e(t, |x|) x/|x| sampled at arbitrary increasing times.
#[derive(Debug, Clone)]
pub struct RadialHistory {
    dimension: usize,
    times: Vec<f64>,
    splines: Vec<CubicSpline<f64>>,
}

impl RadialHistory {
    pub fn new(dimension: usize, times: Vec<f64>, radii: Vec<f64>, e: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() < 2 || e.len() != times.len() {
            return precondition("radial history needs at least two time nodes with one profile each");
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return precondition("history times must increase");
        }
        if radii.first().is_none_or(|&r| r <= 0.0) {
            return precondition("history radii must be positive");
        }
        let splines = e
            .into_iter()
            .map(|row| CubicSpline::new(radii.clone(), row))
            .collect::<Result<_>>()?;
        Ok(Self { dimension, times, splines })
    }

    /// Screened field of the radial density whose modes are tabulated in
    /// `rho`, sampled at the grid nodes nearest to `times`.
    pub fn from_density_modes(dimension: usize, rho: &ModeSeries<f64>, times: &[f64], radii: &[f64]) -> Result<Self> {
        let mut steps: Vec<usize> = times.iter().map(|&t| rho.grid().nearest(t)).collect();
        steps.dedup();
        let rows: Vec<Vec<f64>> = steps
            .par_iter()
            .map(|&k| {
                let symbol = mode_symbol(rho, k)?;
                match field_from_density(dimension, &symbol, radii, rho.grid().node(k), false)? {
                    FieldSnapshot::Radial { e, .. } => Ok(e),
                    FieldSnapshot::Grid { .. } => unreachable!("radial densities give radial fields"),
                }
            })
            .collect::<Result<_>>()?;
        let node_times = steps.iter().map(|&k| rho.grid().node(k)).collect();
        Self::new(dimension, node_times, radii.to_vec(), rows)
    }

    fn radial(&self, spline: &CubicSpline<f64>, r: f64) -> f64 {
        if r < spline.lo() {
            // The field is odd, so e(r) vanishes linearly at the origin.
            spline.values()[0] * r / spline.lo()
        } else {
            spline.eval_unchecked(r).0
        }
    }
}

/// A prescribed field history E(t, x).
#[derive(Clone)]
pub enum FieldHistory {
    Zero { dimension: usize, horizon: f64 },
    Constant { e0: Vec<f64>, horizon: f64 },
    Closure { dimension: usize, horizon: f64, f: FieldFn },
    Grid(GridHistory),
    Radial(RadialHistory),
}

impl fmt::Debug for FieldHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero { dimension, horizon } => write!(f, "Zero(d={dimension}, T={horizon})"),
            Self::Constant { e0, horizon } => write!(f, "Constant({e0:?}, T={horizon})"),
            Self::Closure { dimension, horizon, .. } => write!(f, "Closure(d={dimension}, T={horizon})"),
            Self::Grid(g) => write!(f, "Grid({} nodes, dt={})", g.snapshots.len(), g.dt),
            Self::Radial(r) => write!(f, "Radial(d={}, {} nodes)", r.dimension, r.times.len()),
        }
    }
}

/// Stencil over time nodes `0..n` for a point at node `i` plus fraction `s`.
pub(crate) fn time_stencil(n: usize, i: usize, s: f64, kind: TimeInterp) -> Vec<(usize, f64)> {
    match kind {
        TimeInterp::Linear if i + 1 < n => vec![(i, 1.0 - s), (i + 1, s)],
        TimeInterp::Linear => vec![(n - 1, 1.0)],
        TimeInterp::Cubic if n >= 4 => {
            // Keep the four-point stencil inside the node range.
            let base = (i as i64 - 1).clamp(0, n as i64 - 4) as usize;
            let shift = i as f64 - base as f64 - 1.0;
            let w = cubic_weights(s + shift);
            (0..4).map(|o| (base + o, w[o])).collect()
        }
        TimeInterp::Cubic => time_stencil(n, i, s, TimeInterp::Linear),
    }
}

impl FieldHistory {
    pub fn closure(dimension: usize, horizon: f64, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self::Closure { dimension, horizon, f: Arc::new(f) }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Self::Zero { dimension, .. } | Self::Closure { dimension, .. } => *dimension,
            Self::Constant { e0, .. } => e0.len(),
            Self::Grid(_) => 1,
            Self::Radial(r) => r.dimension,
        }
    }

    /// Last time at which the field is defined.
    pub fn horizon(&self) -> f64 {
        match self {
            Self::Zero { horizon, .. } | Self::Constant { horizon, .. } | Self::Closure { horizon, .. } => *horizon,
            Self::Grid(g) => g.dt * (g.snapshots.len() - 1) as f64,
            Self::Radial(r) => r.times[r.times.len() - 1],
        }
    }

    /// Native time resolution of the history, if it has one.
    pub fn resolution(&self) -> Option<f64> {
        match self {
            Self::Grid(g) => Some(g.dt),
            Self::Radial(r) => r.times.windows(2).map(|w| w[1] - w[0]).reduce(f64::min),
            _ => None,
        }
    }

    /// E(t, x) written into `out`.
    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let horizon = self.horizon();
        if !(t >= -1e-12 && t <= horizon * (1.0 + 1e-12) + 1e-12) {
            return Err(Error::Domain { t, x: x[0] });
        }
        let t = t.clamp(0.0, horizon);
        match self {
            Self::Zero { .. } => out.iter_mut().for_each(|e| *e = 0.0),
            Self::Constant { e0, .. } => out.copy_from_slice(e0),
            Self::Closure { f, .. } => f(t, x, out),
            Self::Grid(g) => {
                let n = g.snapshots.len();
                let pos = t / g.dt;
                let i = (pos.floor() as usize).min(n - 1);
                let mut e = 0.0;
                for (k, w) in time_stencil(n, i, pos - i as f64, g.time) {
                    let row = &g.snapshots[k];
                    e += w * match g.space {
                        SpaceInterp::Cubic => periodic_cubic(row, g.origin, g.dx, x[0]),
                        SpaceInterp::Quintic => periodic_quintic(row, g.origin, g.dx, x[0]),
                    };
                }
                out[0] = e;
            }
            Self::Radial(h) => {
                let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
                let hi = h.splines[0].hi();
                if r > hi {
                    return Err(Error::Domain { t, x: r });
                }
                let j = h.times.partition_point(|&s| s <= t).clamp(1, h.times.len() - 1);
                let (t0, t1) = (h.times[j - 1], h.times[j]);
                let s = (t - t0) / (t1 - t0);
                let e = (1.0 - s) * h.radial(&h.splines[j - 1], r) + s * h.radial(&h.splines[j], r);
                for (o, c) in out.iter_mut().zip(x) {
                    *o = if r > 0.0 { e * c / r } else { 0.0 };
                }
            }
        }
        Ok(())
    }
}

impl GridHistory {
    pub fn new(dt: f64, origin: f64, dx: f64, snapshots: Vec<Vec<f64>>) -> Result<Self> {
        if snapshots.len() < 2 || !(dt > 0.0) || !(dx > 0.0) {
            return precondition("grid history needs two or more nodes and positive spacings");
        }
        let n = snapshots[0].len();
        if n < 6 || snapshots.iter().any(|s| s.len() != n) {
            return precondition("grid snapshots must share a length of at least six");
        }
        Ok(Self { dt, origin, dx, snapshots, space: SpaceInterp::Cubic, time: TimeInterp::Linear })
    }

    pub fn with_interpolation(mut self, space: SpaceInterp, time: TimeInterp) -> Self {
        self.space = space;
        self.time = time;
        self
    }
}

/// Time integrator for the characteristic ODE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Integrator {
    Rk4,
    /// Kick-drift-kick leapfrog; symplectic, second order.
    Verlet,
}

/// Integration controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub integrator: Integrator,
    /// Fixed step; `None` picks min(field resolution, 0.05)/2.
    pub step: Option<f64>,
    /// Finite-difference step for Jacobians.
    pub fd_step: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { integrator: Integrator::Rk4, step: None, fd_step: 1e-5 }
    }
}

impl FlowOptions {
    fn step_for(&self, field: &FieldHistory) -> f64 {
        self.step
            .unwrap_or_else(|| field.resolution().unwrap_or(f64::INFINITY).min(0.05) / 2.0)
    }
}

/// (X_{s,t}(x, v), V_{s,t}(x, v)) by backward integration from time t.
pub fn trace(field: &FieldHistory, s: f64, t: f64, x: &[f64], v: &[f64], opts: &FlowOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    check_point(field, s, t, x, v)?;
    let d = x.len();
    let (dy, dw) = integrate_deviation(field, s, t, x, v, opts)?;
    let xs = (0..d).map(|i| x[i] - (t - s) * v[i] + dy[i]).collect();
    let vs = (0..d).map(|i| v[i] + dw[i]).collect();
    Ok((xs, vs))
}

/// Integrates the deviation from free streaming, dY/dτ = W and
/// dW/dτ = E(τ, x − (t − τ)v + Y), backward from Y = W = 0 at τ = t.
/// Working with the deviation avoids cancellation against the free motion.
fn integrate_deviation(field: &FieldHistory, s: f64, t: f64, x: &[f64], v: &[f64], opts: &FlowOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = x.len();
    let (mut y, mut w) = (vec![0.0; d], vec![0.0; d]);
    if s == t || matches!(field, FieldHistory::Zero { .. }) {
        // Still report histories that end before t.
        field.eval(t, x, &mut vec![0.0; d])?;
        return Ok((y, w));
    }
    let steps = ((t - s) / opts.step_for(field)).ceil().max(1.0) as usize;
    let h = -(t - s) / steps as f64;
    let mut xa = vec![0.0; d];
    let mut field_at = |tau: f64, y: &[f64], out: &mut [f64]| {
        for i in 0..d {
            xa[i] = x[i] - (t - tau) * v[i] + y[i];
        }
        field.eval(tau, &xa, out)
    };
    match opts.integrator {
        Integrator::Rk4 => {
            let (mut ya, mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
            for n in 0..steps {
                let tau = t + h * n as f64;
                field_at(tau, &y, &mut k1)?;
                for i in 0..d {
                    ya[i] = y[i] + 0.5 * h * w[i];
                }
                field_at(tau + 0.5 * h, &ya, &mut k2)?;
                for i in 0..d {
                    ya[i] = y[i] + 0.5 * h * (w[i] + 0.5 * h * k1[i]);
                }
                field_at(tau + 0.5 * h, &ya, &mut k3)?;
                for i in 0..d {
                    ya[i] = y[i] + h * (w[i] + 0.5 * h * k2[i]);
                }
                field_at(tau + h, &ya, &mut k4)?;
                for i in 0..d {
                    // The position stages are w + c h k, so the RK4 position
                    // update collapses to this form.
                    y[i] += h * w[i] + h * h / 6.0 * (k1[i] + k2[i] + k3[i]);
                    w[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        Integrator::Verlet => {
            let mut e = vec![0.0; d];
            for n in 0..steps {
                let tau = t + h * n as f64;
                field_at(tau, &y, &mut e)?;
                for i in 0..d {
                    w[i] += 0.5 * h * e[i];
                    y[i] += h * w[i];
                }
                field_at(tau + h, &y, &mut e)?;
                for i in 0..d {
                    w[i] += 0.5 * h * e[i];
                }
            }
        }
    }
    Ok((y, w))
}

/// A phase-space point in the shifted convention (y, v) with y = x − vt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub y: Vec<f64>,
    pub v: Vec<f64>,
}

/// Tensor lattice of d = 1 phase points `(y_i, v_j)`, row-major in y.
pub fn phase_lattice(y_range: (f64, f64), ny: usize, v_range: (f64, f64), nv: usize) -> Vec<PhasePoint> {
    let lin = |(a, b): (f64, f64), n: usize, i: usize| if n > 1 { a + (b - a) * i as f64 / (n - 1) as f64 } else { a };
    (0..ny)
        .flat_map(|i| (0..nv).map(move |j| PhasePoint { y: vec![lin(y_range, ny, i)], v: vec![lin(v_range, nv, j)] }))
        .collect()
}

/// d × d blocks of the deviation-map Jacobians at one point, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationJacobian {
    pub dy_dx: Vec<f64>,
    pub dy_dv: Vec<f64>,
    pub dw_dx: Vec<f64>,
    pub dw_dv: Vec<f64>,
}

/// Deviation maps Y_{s,t}, W_{s,t} sampled at phase points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMap {
    pub s: f64,
    pub t: f64,
    pub points: Vec<PhasePoint>,
    pub y_dev: Vec<Vec<f64>>,
    pub w_dev: Vec<Vec<f64>>,
    pub jacobians: Option<Vec<DeviationJacobian>>,
    pub psi: Option<Vec<Vec<f64>>>,
}

impl FlowMap {
    pub fn sup_y(&self) -> f64 {
        sup_norm(&self.y_dev)
    }

    pub fn sup_w(&self) -> f64 {
        sup_norm(&self.w_dev)
    }

    /// sup over points of the largest entry of ∇_x Y.
    pub fn sup_grad_x_y(&self) -> Option<f64> {
        self.jacobians
            .as_ref()
            .map(|js| js.iter().flat_map(|j| j.dy_dx.iter()).fold(0.0f64, |m, v| m.max(v.abs())))
    }
}

fn sup_norm(rows: &[Vec<f64>]) -> f64 {
    rows.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// (Y, W) at a single shifted point.
pub fn deviation(field: &FieldHistory, s: f64, t: f64, p: &PhasePoint, opts: &FlowOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    check_point(field, s, t, &p.y, &p.v)?;
    let x: Vec<f64> = p.y.iter().zip(&p.v).map(|(y, v)| y + v * t).collect();
    integrate_deviation(field, s, t, &x, &p.v, opts)
}

fn check_point(field: &FieldHistory, s: f64, t: f64, x: &[f64], v: &[f64]) -> Result<()> {
    let d = field.dimension();
    if x.len() != d || v.len() != d {
        return Err(Error::Mismatch(format!("phase point of dimension {} in a d = {d} field", x.len())));
    }
    if !(0.0 <= s && s <= t) {
        return precondition(format!("characteristics need 0 ≤ s ≤ t, got s = {s}, t = {t}"));
    }
    Ok(())
}

fn jacobian_at(field: &FieldHistory, s: f64, t: f64, p: &PhasePoint, opts: &FlowOptions) -> Result<DeviationJacobian> {
    let d = p.y.len();
    let h = opts.fd_step;
    let mut j = DeviationJacobian {
        dy_dx: vec![0.0; d * d],
        dy_dv: vec![0.0; d * d],
        dw_dx: vec![0.0; d * d],
        dw_dv: vec![0.0; d * d],
    };
    for k in 0..d {
        for (in_v, (dy, dw)) in [(false, (&mut j.dy_dx, &mut j.dw_dx)), (true, (&mut j.dy_dv, &mut j.dw_dv))] {
            let shifted = |sign: f64| {
                let mut q = p.clone();
                if in_v {
                    q.v[k] += sign * h;
                } else {
                    q.y[k] += sign * h;
                }
                deviation(field, s, t, &q, opts)
            };
            let (yp, wp) = shifted(1.0)?;
            let (ym, wm) = shifted(-1.0)?;
            for i in 0..d {
                dy[i * d + k] = (yp[i] - ym[i]) / (2.0 * h);
                dw[i * d + k] = (wp[i] - wm[i]) / (2.0 * h);
            }
        }
    }
    Ok(j)
}

/// Deviation maps at the given points; Jacobians by centred differences.
pub fn flow(field: &FieldHistory, s: f64, t: f64, points: &[PhasePoint], jacobians: bool, opts: &FlowOptions) -> Result<FlowMap> {
    if t > field.horizon() * (1.0 + 1e-12) {
        return Err(Error::Domain { t, x: f64::NAN });
    }
    let devs: Vec<(Vec<f64>, Vec<f64>)> = points.par_iter().map(|p| deviation(field, s, t, p, opts)).collect::<Result<_>>()?;
    let (y_dev, w_dev) = devs.into_iter().unzip();
    let jacobians = if jacobians {
        Some(points.par_iter().map(|p| jacobian_at(field, s, t, p, opts)).collect::<Result<_>>()?)
    } else {
        None
    };
    Ok(FlowMap { s, t, points: points.to_vec(), y_dev, w_dev, jacobians, psi: None })
}

/// Determinant of ∂(X, V)/∂(x, v) at an unshifted point, by centred differences.
pub fn phase_jacobian_det(field: &FieldHistory, s: f64, t: f64, x: &[f64], v: &[f64], opts: &FlowOptions) -> Result<f64> {
    let d = x.len();
    let n = 2 * d;
    let h = opts.fd_step;
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let run = |sign: f64| {
            let (mut xp, mut vp) = (x.to_vec(), v.to_vec());
            if k < d {
                xp[k] += sign * h;
            } else {
                vp[k - d] += sign * h;
            }
            trace(field, s, t, &xp, &vp, opts)
        };
        let (xa, va) = run(1.0)?;
        let (xb, vb) = run(-1.0)?;
        for i in 0..d {
            m[i * n + k] = (xa[i] - xb[i]) / (2.0 * h);
            m[(i + d) * n + k] = (va[i] - vb[i]) / (2.0 * h);
        }
    }
    Ok(determinant(&mut m, n))
}

/// Determinant by Gaussian elimination with partial pivoting (destroys `m`).
fn determinant(m: &mut [f64], n: usize) -> f64 {
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| m[a * n + c].abs().total_cmp(&m[b * n + c].abs())).unwrap_or(c);
        if m[p * n + c] == 0.0 {
            return 0.0;
        }
        if p != c {
            for k in 0..n {
                m.swap(p * n + k, c * n + k);
            }
            det = -det;
        }
        det *= m[c * n + c];
        for r in c + 1..n {
            let f = m[r * n + c] / m[c * n + c];
            for k in c..n {
                m[r * n + k] -= f * m[c * n + k];
            }
        }
    }
    det
}

/// Controls for [`straighten`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StraightenOptions {
    /// Residual target relative to 1 + |x|.
    pub tol: f64,
    pub max_iter: usize,
    pub flow: FlowOptions,
}

impl Default for StraightenOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 60, flow: FlowOptions::default() }
    }
}

/// Ψ_{s,t} at unshifted points together with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Straightening {
    pub psi: Vec<Vec<f64>>,
    /// |X_{s,t}(x, Ψ) − x + (t − s)v| / (1 + |x|).
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    /// Largest observed ratio of successive iterate displacements.
    pub max_ratio: f64,
    /// det ∇_v Ψ at each point.
    pub det_grad_v: Vec<f64>,
}

impl Straightening {
    /// Fraction of points whose residual is below `tol`.
    pub fn converged_fraction(&self, tol: f64) -> f64 {
        self.residuals.iter().filter(|&&r| r < tol).count() as f64 / self.residuals.len().max(1) as f64
    }

    pub fn sup_displacement(&self, v: &[Vec<f64>]) -> f64 {
        self.psi
            .iter()
            .zip(v)
            .flat_map(|(p, v)| p.iter().zip(v).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Solves X_{s,t}(x, Ψ) = x − (t − s)v at one point; returns
/// (Ψ, residual, iterations, worst ratio).
fn straighten_point(field: &FieldHistory, s: f64, t: f64, x: &[f64], v: &[f64], opts: &StraightenOptions, point: usize) -> Result<(Vec<f64>, f64, usize, f64)> {
    let d = x.len();
    if s == t {
        return Ok((v.to_vec(), 0.0, 0, 0.0));
    }
    let scale = 1.0 + norm(x);
    let residual = |w: &[f64]| -> Result<(Vec<f64>, f64)> {
        let (xs, _) = trace(field, s, t, x, w, &opts.flow)?;
        // Φ(x, w) from X = x − (t − s)(w + Φ).
        let phi: Vec<f64> = (0..d).map(|i| -(xs[i] - x[i]) / (t - s) - w[i]).collect();
        let res: Vec<f64> = (0..d).map(|i| xs[i] - x[i] + (t - s) * v[i]).collect();
        Ok((phi, norm(&res) / scale))
    };
    let mut psi = v.to_vec();
    let mut damping = 1.0;
    let mut damped_once = false;
    let mut last_step = f64::INFINITY;
    let mut bad = 0;
    let mut worst: f64 = 0.0;
    for it in 0..opts.max_iter {
        let (phi, res) = residual(&psi)?;
        if res < opts.tol {
            return Ok((psi, res, it, worst));
        }
        let next: Vec<f64> = (0..d).map(|i| (1.0 - damping) * psi[i] + damping * (v[i] - phi[i])).collect();
        let step = norm(&next.iter().zip(&psi).map(|(a, b)| a - b).collect::<Vec<_>>());
        if last_step.is_finite() && last_step > 0.0 {
            let ratio = step / last_step;
            worst = worst.max(ratio);
            if ratio >= 0.5 {
                bad += 1;
                if !damped_once {
                    damping = 0.5;
                    damped_once = true;
                } else if bad >= 3 {
                    return Err(Error::Straightening { ratio, point });
                }
            } else {
                bad = 0;
            }
        }
        last_step = step;
        psi = next;
    }
    let (_, res) = residual(&psi)?;
    Ok((psi, res, opts.max_iter, worst))
}

/// Ψ_{s,t}(x, v) at unshifted points `(x_i, v_i)` by fixed-point iteration
/// on Ψ = v − Φ_{s,t}(x, Ψ), each Φ from a fresh trajectory.
pub fn straighten(field: &FieldHistory, s: f64, t: f64, xs: &[Vec<f64>], vs: &[Vec<f64>], opts: &StraightenOptions) -> Result<Straightening> {
    if xs.len() != vs.len() {
        return Err(Error::Mismatch("positions and velocities differ in count".into()));
    }
    let solved: Vec<(Vec<f64>, f64, usize, f64, f64)> = xs
        .par_iter()
        .zip(vs.par_iter())
        .enumerate()
        .map(|(i, (x, v))| {
            let (psi, res, it, ratio) = straighten_point(field, s, t, x, v, opts, i)?;
            // det ∇_v Ψ by centred differences.
            let d = v.len();
            let h = opts.flow.fd_step;
            let mut m = vec![0.0; d * d];
            for k in 0..d {
                let mut vp = v.clone();
                vp[k] += h;
                let plus = straighten_point(field, s, t, x, &vp, opts, i)?.0;
                vp[k] -= 2.0 * h;
                let minus = straighten_point(field, s, t, x, &vp, opts, i)?.0;
                for r in 0..d {
                    m[r * d + k] = (plus[r] - minus[r]) / (2.0 * h);
                }
            }
            Ok((psi, res, it, ratio, determinant(&mut m, d)))
        })
        .collect::<Result<_>>()?;
    let mut out = Straightening { psi: vec![], residuals: vec![], iterations: vec![], max_ratio: 0.0, det_grad_v: vec![] };
    for (psi, res, it, ratio, det) in solved {
        out.psi.push(psi);
        out.residuals.push(res);
        out.iterations.push(it);
        out.max_ratio = out.max_ratio.max(ratio);
        out.det_grad_v.push(det);
    }
    Ok(out)
}

/// Scattering data: Y_{0,t}, W_{0,t} along a list of times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatteringReport {
    pub times: Vec<f64>,
    /// Y_{0,t_max} and W_{0,t_max} at each point.
    pub y_inf: Vec<Vec<f64>>,
    pub w_inf: Vec<Vec<f64>>,
    /// (t_{k+1}, sup|Y_{0,t_{k+1}} − Y_{0,t_k}|, sup|W_{0,t_{k+1}} − W_{0,t_k}|).
    pub increments: Vec<(f64, f64, f64)>,
    /// Fit of the Y increments against −(d − 1), when requested.
    pub fit: Option<DecayReport<f64>>,
}

/// Controls for [`scattering_limits`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringOptions {
    /// Largest acceptable final Y increment.
    pub tol: f64,
    /// Fit the increments to log(2 + t)/t^{d−1} with this tolerance.
    pub fit_tolerance: Option<f64>,
    pub flow: FlowOptions,
}

impl Default for ScatteringOptions {
    fn default() -> Self {
        Self { tol: 1e-2, fit_tolerance: None, flow: FlowOptions::default() }
    }
}

/// Y_{0,t}, W_{0,t} for increasing `times`, their Cauchy increments and the
/// approximate limits at the last time.
pub fn scattering_limits(field: &FieldHistory, points: &[PhasePoint], times: &[f64], opts: &ScatteringOptions) -> Result<ScatteringReport> {
    if times.len() < 2 || times.windows(2).any(|w| w[1] <= w[0]) {
        return precondition("scattering needs at least two increasing times");
    }
    let maps: Vec<FlowMap> = times
        .iter()
        .map(|&t| flow(field, 0.0, t, points, false, &opts.flow))
        .collect::<Result<_>>()?;
    let diff = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a.iter().flatten().zip(b.iter().flatten()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    };
    let increments: Vec<(f64, f64, f64)> = maps
        .windows(2)
        .map(|w| (w[1].t, diff(&w[1].y_dev, &w[0].y_dev), diff(&w[1].w_dev, &w[0].w_dev)))
        .collect();
    let last = increments.last().map_or(0.0, |i| i.1);
    if last > opts.tol {
        return Err(Error::NoConvergence(last));
    }
    let fit = match opts.fit_tolerance {
        Some(tol) => {
            let d = field.dimension() as f64;
            let series: Vec<(f64, f64)> = increments.iter().map(|&(t, y, _)| (t, y)).collect();
            Some(fit_decay("Y increments", &series, -(d - 1.0), tol, true)?)
        }
        None => None,
    };
    let final_map = maps.into_iter().last().expect("two or more times");
    Ok(ScatteringReport { times: times.to_vec(), y_inf: final_map.y_dev, w_inf: final_map.w_dev, increments, fit })
}

/// f∞(x, v) = f₀(x + Y∞, v + W∞) + μ(v + W∞) − μ(v) at each point, with
/// `points` read as (x, v).
pub fn scattering_profile(
    f0: &PhaseDensity,
    mu: &EquilibriumProfile,
    points: &[PhasePoint],
    y_inf: &[Vec<f64>],
    w_inf: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if points.len() != y_inf.len() || points.len() != w_inf.len() {
        return Err(Error::Mismatch("scattering data and points differ in count".into()));
    }
    points
        .iter()
        .zip(y_inf.iter().zip(w_inf))
        .map(|(p, (yi, wi))| {
            let x: Vec<f64> = p.y.iter().zip(yi).map(|(a, b)| a + b).collect();
            let v: Vec<f64> = p.v.iter().zip(wi).map(|(a, b)| a + b).collect();
            Ok(f0.eval(&x, &v)? + mu.eval_mu(&v)? - mu.eval_mu(&p.v)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lattice() -> Vec<PhasePoint> {
        phase_lattice((-3.0, 3.0), 7, (-2.0, 2.0), 5)
    }

    fn wave(amp: f64) -> FieldHistory {
        FieldHistory::closure(1, 30.0, move |t, x, out| out[0] = amp * (0.5 * x[0]).sin() * (-0.1 * t).exp())
    }

    #[test]
    fn zero_field_gives_free_transport() {
        let f = FieldHistory::Zero { dimension: 1, horizon: 10.0 };
        let m = flow(&f, 2.0, 9.0, &lattice(), true, &FlowOptions::default()).unwrap();
        assert_eq!(m.sup_y(), 0.0);
        assert_eq!(m.sup_w(), 0.0);
        assert_eq!(m.sup_grad_x_y(), Some(0.0));
        let xs: Vec<Vec<f64>> = vec![vec![0.3], vec![-1.0]];
        let vs: Vec<Vec<f64>> = vec![vec![0.5], vec![2.0]];
        let st = straighten(&f, 1.0, 5.0, &xs, &vs, &StraightenOptions::default()).unwrap();
        assert_eq!(st.psi, vs);
    }

    #[test]
    fn constant_field_closed_forms() {
        let e0 = vec![0.3, -0.2, 0.1];
        let f = FieldHistory::Constant { e0: e0.clone(), horizon: 10.0 };
        let (s, t) = (1.5, 7.0);
        let p = PhasePoint { y: vec![0.1, 0.2, -0.3], v: vec![1.0, -0.5, 0.25] };
        for integrator in [Integrator::Rk4, Integrator::Verlet] {
            let opts = FlowOptions { integrator, ..FlowOptions::default() };
            let (y, w) = deviation(&f, s, t, &p, &opts).unwrap();
            for i in 0..3 {
                assert!((y[i] - e0[i] * (t - s).powi(2) / 2.0).abs() < 1e-10);
                assert!((w[i] + e0[i] * (t - s)).abs() < 1e-10);
            }
        }
        let xs = vec![vec![0.5, 0.0, 1.0]];
        let vs = vec![vec![0.2, 0.1, -0.4]];
        let st = straighten(&f, s, t, &xs, &vs, &StraightenOptions::default()).unwrap();
        for i in 0..3 {
            assert!((st.psi[0][i] - (vs[0][i] + e0[i] * (t - s) / 2.0)).abs() < 1e-10);
        }
        assert!(st.residuals[0] < 1e-10);
        assert_relative_eq!(st.det_grad_v[0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn group_property() {
        let f = wave(0.05);
        let opts = FlowOptions::default();
        let (s, u, t) = (1.0, 4.0, 9.0);
        for (x, v) in [(0.3, 0.7), (-2.0, -0.4), (5.0, 1.5)] {
            let (xu, vu) = trace(&f, u, t, &[x], &[v], &opts).unwrap();
            let (xs, vs) = trace(&f, s, u, &xu, &vu, &opts).unwrap();
            let (xd, vd) = trace(&f, s, t, &[x], &[v], &opts).unwrap();
            assert!((xs[0] - xd[0]).abs() < 1e-9);
            assert!((vs[0] - vd[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn volume_preservation() {
        let f = wave(0.2);
        for integrator in [Integrator::Rk4, Integrator::Verlet] {
            let opts = FlowOptions { integrator, ..FlowOptions::default() };
            for (x, v) in [(0.3, 0.7), (-2.0, -0.4), (5.0, 1.5)] {
                let det = phase_jacobian_det(&f, 0.0, 20.0, &[x], &[v], &opts).unwrap();
                assert!((det - 1.0).abs() < 1e-6, "{integrator:?} det={det}");
            }
        }
    }

    #[test]
    fn small_field_straightening() {
        let f = wave(0.01);
        let pts = lattice();
        let xs: Vec<Vec<f64>> = pts.iter().map(|p| p.y.clone()).collect();
        let vs: Vec<Vec<f64>> = pts.iter().map(|p| p.v.clone()).collect();
        let st = straighten(&f, 2.0, 15.0, &xs, &vs, &StraightenOptions::default()).unwrap();
        assert!(st.converged_fraction(1e-8) >= 0.99);
        assert!(st.max_ratio < 0.5);
        assert!(st.det_grad_v.iter().all(|&d| d > 0.5 && d < 1.5));
        assert!(st.sup_displacement(&vs) < 0.5);
    }

    #[test]
    fn strong_field_fails_to_straighten() {
        let f = FieldHistory::closure(1, 30.0, |_, x, out| out[0] = 3.0 * (2.0 * x[0]).sin());
        let r = straighten(&f, 0.0, 20.0, &[vec![0.1]], &[vec![0.3]], &StraightenOptions::default());
        assert!(matches!(r, Err(Error::Straightening { .. })));
    }

    #[test]
    fn leaving_the_history_is_a_domain_error() {
        let f = FieldHistory::Zero { dimension: 1, horizon: 5.0 };
        assert!(matches!(flow(&f, 0.0, 6.0, &lattice(), false, &FlowOptions::default()), Err(Error::Domain { .. })));
        let h = RadialHistory::new(3, vec![0.0, 10.0], vec![0.1, 1.0, 2.0, 3.0], vec![vec![0.0; 4]; 2]).unwrap();
        let f = FieldHistory::Radial(h);
        let r = trace(&f, 0.0, 5.0, &[2.5, 0.0, 0.0], &[-1.0, 0.0, 0.0], &FlowOptions::default());
        assert!(matches!(r, Err(Error::Domain { .. })));
    }

    #[test]
    fn grid_history_reproduces_nodes() {
        let n = 32;
        let dx = 0.25;
        let snaps: Vec<Vec<f64>> = (0..5).map(|k| (0..n).map(|i| (k * n + i) as f64).collect()).collect();
        for (space, time) in [(SpaceInterp::Cubic, TimeInterp::Linear), (SpaceInterp::Quintic, TimeInterp::Cubic)] {
            let g = GridHistory::new(0.5, -4.0, dx, snaps.clone()).unwrap().with_interpolation(space, time);
            let f = FieldHistory::Grid(g);
            let mut e = [0.0];
            for k in 0..5 {
                for i in 0..n {
                    f.eval(0.5 * k as f64, &[-4.0 + dx * i as f64], &mut e).unwrap();
                    assert!((e[0] - snaps[k][i]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn radial_history_is_a_gradient_direction_field() {
        let radii: Vec<f64> = (1..=50).map(|i| 0.2 * i as f64).collect();
        let prof: Vec<f64> = radii.iter().map(|r| r * (-r).exp()).collect();
        let h = RadialHistory::new(3, vec![0.0, 1.0], radii, vec![prof.clone(), prof]).unwrap();
        let f = FieldHistory::Radial(h);
        let mut e = [0.0; 3];
        let x = [1.0, 2.0, -2.0];
        f.eval(0.5, &x, &mut e).unwrap();
        let r: f64 = 3.0;
        for i in 0..3 {
            assert_relative_eq!(e[i], (-r).exp() * x[i], max_relative = 1e-4);
        }
    }

    #[test]
    fn scattering_of_compactly_supported_field() {
        let f = FieldHistory::closure(1, 40.0, |t, x, out| {
            out[0] = if t < 5.0 { 0.02 * x[0].sin() * (t * (5.0 - t)) } else { 0.0 }
        });
        let pts = lattice();
        let opts = ScatteringOptions { tol: 1e-9, ..ScatteringOptions::default() };
        let rep = scattering_limits(&f, &pts, &[5.0, 10.0, 20.0, 40.0], &opts).unwrap();
        // Past T₀ = 5 the shifted deviations are frozen.
        for inc in &rep.increments {
            assert!(inc.1 < 1e-9 && inc.2 < 1e-9, "{inc:?}");
        }
        let at_t0 = flow(&f, 0.0, 5.0, &pts, false, &FlowOptions::default()).unwrap();
        assert!(sup_norm(&rep.y_inf.iter().zip(&at_t0.y_dev).map(|(a, b)| vec![a[0] - b[0]]).collect::<Vec<_>>()) < 1e-9);
        let zero = FieldHistory::Zero { dimension: 1, horizon: 10.0 };
        let z = scattering_limits(&zero, &pts, &[2.0, 10.0], &ScatteringOptions::default()).unwrap();
        assert_eq!(sup_norm(&z.y_inf), 0.0);
        assert_eq!(sup_norm(&z.w_inf), 0.0);
    }

    #[test]
    fn non_cauchy_sequence_is_reported() {
        let f = FieldHistory::Constant { e0: vec![0.1], horizon: 50.0 };
        let r = scattering_limits(&f, &lattice(), &[10.0, 20.0, 40.0], &ScatteringOptions::default());
        assert!(matches!(r, Err(Error::NoConvergence(_))));
    }

    #[test]
    fn scattering_profile_substitution() {
        let f0 = PhaseDensity::gaussian(1, 0.1, 1.0, 1.0).unwrap();
        let mu = EquilibriumProfile::maxwellian(1, 1.0).unwrap();
        let pts = lattice();
        let zeros = vec![vec![0.0]; pts.len()];
        let f_inf = scattering_profile(&f0, &mu, &pts, &zeros, &zeros).unwrap();
        for (p, f) in pts.iter().zip(&f_inf) {
            assert_relative_eq!(*f, f0.eval(&p.y, &p.v).unwrap(), max_relative = 1e-12);
        }
        let (a, b) = (0.3, -0.2);
        let ys = vec![vec![a]; pts.len()];
        let ws = vec![vec![b]; pts.len()];
        let shifted = scattering_profile(&f0, &mu, &pts, &ys, &ws).unwrap();
        for (p, f) in pts.iter().zip(&shifted) {
            let exact = f0.eval(&[p.y[0] + a], &[p.v[0] + b]).unwrap() + mu.eval_mu(&[p.v[0] + b]).unwrap()
                - mu.eval_mu(&p.v).unwrap();
            assert_relative_eq!(*f, exact, max_relative = 1e-15);
        }
    }
}
