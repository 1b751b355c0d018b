//! The nonlinear density loop in d = 1 on a periodic box.
//!
//! Each Picard step takes a field history E⁽ⁿ⁾, follows its characteristics,
//! assembles S = 𝓘 + 𝓡_L − 𝓡_NL with
//!
//! * 𝓘(t, x) = ∫ f₀(X_{0,t}, V_{0,t}) dv,
//! * 𝓡_L(t, x) = ∫∫ E(s, x − (t − s)v) μ'(v) dv ds,
//! * 𝓡_NL(t, x) = ∫∫ E(s, X_{s,t}) μ'(V_{s,t}) dv ds,
//!
//! and solves ρ = S + K⋆ρ mode by mode for the next density and field.
//!
//! Characteristics live on the shifted grid (y, v) = (x − tv, v), where the
//! deviation maps Y_{0,t}, W_{0,t} and the accumulated reaction are smooth.
//! A step from t − Δ to t composes a one-step RK4 map with the stored maps,
//! so f₀ is always evaluated at the exact composed foot. Velocity integrals
//! become exact Fourier phase shifts e^{−iktv} of the shifted columns.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::characteristics::{time_stencil, GridHistory, SpaceInterp, TimeInterp};
use crate::equilibria::EquilibriumProfile;
use crate::error::{precondition, Error, Result};
use crate::interp::{cubic_weights, periodic_cubic, periodic_quintic, quintic_weights};
use crate::transport::{wavenumbers, GridSnapshot, PhaseDensity, PhaseGrid};
use crate::volterra::{mode_sweep, solve_mode_volterra, ModeSeries, SeriesKind, TimeGrid};

/// Periodic box, velocity window and time grid shared by both solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearGrid {
    pub length: f64,
    pub nx: usize,
    pub vmax: f64,
    pub nv: usize,
    pub dt: f64,
    pub t_max: f64,
}

impl Default for NonlinearGrid {
    fn default() -> Self {
        Self { length: 128.0, nx: 256, vmax: 6.0, nv: 241, dt: 0.025, t_max: 20.0 }
    }
}

impl NonlinearGrid {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 8 || self.nv < 8 {
            return precondition("nonlinear grids need nx ≥ 8 and nv ≥ 8");
        }
        if !(self.length > 0.0 && self.vmax > 0.0 && self.dt > 0.0 && self.t_max > 0.0) {
            return precondition("nonlinear grid extents must be positive");
        }
        let steps = self.t_max / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps {
            return precondition("t_max must be a whole number of time steps");
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    pub fn dx(&self) -> f64 {
        self.length / self.nx as f64
    }

    pub fn dv(&self) -> f64 {
        2.0 * self.vmax / (self.nv - 1) as f64
    }

    pub fn origin(&self) -> f64 {
        -0.5 * self.length
    }

    pub fn x(&self, i: usize) -> f64 {
        self.origin() + self.dx() * i as f64
    }

    pub fn v(&self, j: usize) -> f64 {
        -self.vmax + self.dv() * j as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.dt * k as f64
    }

    pub fn time_grid(&self) -> Result<TimeGrid<f64>> {
        TimeGrid::new(self.t_max, self.steps())
    }

    fn velocity_weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.nv - 1 { 0.5 * self.dv() } else { self.dv() }
    }

    fn wrap(&self, x: f64) -> f64 {
        (x - self.origin()).rem_euclid(self.length) + self.origin()
    }
}

/// Density ρ(t, x) and ∂_x ρ at every time node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityHistory {
    pub times: Vec<f64>,
    pub origin: f64,
    pub dx: f64,
    pub rho: Vec<Vec<f64>>,
    pub grad: Vec<Vec<f64>>,
}

impl DensityHistory {
    fn zeros(grid: &NonlinearGrid) -> Self {
        let rows = grid.steps() + 1;
        Self {
            times: (0..rows).map(|k| grid.time(k)).collect(),
            origin: grid.origin(),
            dx: grid.dx(),
            rho: vec![vec![0.0; grid.nx]; rows],
            grad: vec![vec![0.0; grid.nx]; rows],
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn snapshot(&self, k: usize) -> GridSnapshot {
        GridSnapshot {
            t: self.times[k],
            origin: self.origin,
            dx: self.dx,
            values: self.rho[k].clone(),
            gradient: Some(self.grad[k].clone()),
        }
    }

    pub fn mass(&self, k: usize) -> f64 {
        self.rho[k].iter().sum::<f64>() * self.dx
    }

    /// ‖ρ(t_k)‖_{L¹}, ‖ρ(t_k)‖_{L∞}, ‖∂ρ(t_k)‖_{L¹}, ‖∂ρ(t_k)‖_{L∞}.
    pub fn norms(&self, k: usize) -> [f64; 4] {
        let l1 = |r: &[f64]| r.iter().map(|v| v.abs()).sum::<f64>() * self.dx;
        let sup = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        [l1(&self.rho[k]), sup(&self.rho[k]), l1(&self.grad[k]), sup(&self.grad[k])]
    }

    /// ‖ρ(t_k) − ρ'(t_k)‖_{L²} / ‖ρ'(t_k)‖_{L²}.
    pub fn relative_l2(&self, reference: &Self, k: usize) -> f64 {
        let diff: f64 = self.rho[k].iter().zip(&reference.rho[k]).map(|(a, b)| (a - b).powi(2)).sum();
        let norm: f64 = reference.rho[k].iter().map(|b| b * b).sum();
        (diff / norm).sqrt()
    }

    fn difference(&self, other: &Self) -> Result<Self> {
        if self.times.len() != other.times.len() || self.rho[0].len() != other.rho[0].len() {
            return Err(Error::Mismatch("density histories live on different grids".into()));
        }
        let sub = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
            a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect()
        };
        Ok(Self {
            times: self.times.clone(),
            origin: self.origin,
            dx: self.dx,
            rho: sub(&self.rho, &other.rho),
            grad: sub(&self.grad, &other.grad),
        })
    }
}

/// Running bootstrap functional
/// 𝒩(t) = sup_{s ≤ t} (‖ρ‖₁ + ⟨s⟩^d‖ρ‖_∞ + ⟨s⟩‖∇ρ‖₁ + ⟨s⟩^{d+1}‖∇ρ‖_∞) / log(2 + s).
///
/// The weights follow `dimension`, so the monitor can be read descriptively
/// in d = 1 even though the decay theory needs d ≥ 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapMonitor {
    pub dimension: usize,
    pub epsilon: f64,
    pub times: Vec<f64>,
    pub norms: Vec<[f64; 4]>,
    pub n_of_t: Vec<f64>,
    pub breach_time: Option<f64>,
}

fn weighted_norm(d: usize, t: f64, n: &[f64; 4]) -> f64 {
    let bracket = (1.0 + t * t).sqrt();
    (n[0] + bracket.powi(d as i32) * n[1] + bracket * n[2] + bracket.powi(d as i32 + 1) * n[3]) / (2.0 + t).ln()
}

impl BootstrapMonitor {
    pub fn from_norms(dimension: usize, epsilon: f64, times: Vec<f64>, norms: Vec<[f64; 4]>) -> Result<Self> {
        if times.len() != norms.len() {
            return Err(Error::Mismatch("one set of norms per time is required".into()));
        }
        let mut running = 0.0f64;
        let n_of_t: Vec<f64> = times
            .iter()
            .zip(&norms)
            .map(|(&t, n)| {
                running = running.max(weighted_norm(dimension, t, n));
                running
            })
            .collect();
        let breach_time = n_of_t.iter().position(|&n| n > epsilon).map(|k| times[k]);
        Ok(Self { dimension, epsilon, times, norms, n_of_t, breach_time })
    }

    pub fn max(&self) -> f64 {
        self.n_of_t.last().copied().unwrap_or(0.0)
    }
}

pub fn bootstrap_monitor(history: &DensityHistory, dimension: usize, epsilon: f64) -> Result<BootstrapMonitor> {
    let norms = (0..history.len()).map(|k| history.norms(k)).collect();
    BootstrapMonitor::from_norms(dimension, epsilon, history.times.clone(), norms)
}

/// Components of the source on the x grid at every time node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceHistory {
    pub times: Vec<f64>,
    pub origin: f64,
    pub dx: f64,
    pub initial: Vec<Vec<f64>>,
    pub r_l: Vec<Vec<f64>>,
    pub r_nl: Vec<Vec<f64>>,
    /// S assembled pointwise in phase space before the velocity integral.
    pub total: Vec<Vec<f64>>,
    /// Half spectrum (modes 0..=nx/2) of `total`, as fed to the Volterra solve.
    pub total_modes: Vec<Vec<Complex64>>,
    /// sup |Y_{0,t}| and sup |W_{0,t}| over the phase grid.
    pub sup_y: Vec<f64>,
    pub sup_w: Vec<f64>,
    /// Deviation maps kept at the requested steps.
    pub kept: Vec<DeviationSnapshot>,
}

impl SourceHistory {
    /// sup over time and space of |S − (𝓘 + 𝓡_L − 𝓡_NL)|.
    pub fn identity_defect(&self) -> f64 {
        (0..self.times.len())
            .flat_map(|k| {
                (0..self.total[k].len())
                    .map(move |i| (self.total[k][i] - (self.initial[k][i] + self.r_l[k][i] - self.r_nl[k][i])).abs())
            })
            .fold(0.0, f64::max)
    }

    /// 𝓡_L − 𝓡_NL at step `k`.
    pub fn reaction(&self, k: usize) -> Vec<f64> {
        self.r_l[k].iter().zip(&self.r_nl[k]).map(|(a, b)| a - b).collect()
    }
}

/// Shifted-grid deviation maps and accumulated nonlinear reaction
/// b(t, y, v) = ∫₀ᵗ E(s, X_{s,t}) μ'(V_{s,t}) ds at one time, row-major in y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationSnapshot {
    pub step: usize,
    pub t: f64,
    pub y_dev: Vec<f64>,
    pub w_dev: Vec<f64>,
    pub reaction: Vec<f64>,
}

/// Controls for [`assemble_source`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MarchOptions {
    /// Force free characteristics (Y = W = 0) while still integrating the
    /// reaction along them.
    pub frozen: bool,
    /// Steps at which the deviation maps are kept.
    pub keep_steps: Vec<usize>,
}

struct Spectral {
    n: usize,
    ks: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Spectral {
    fn new(n: usize, length: f64) -> Self {
        let mut planner = FftPlanner::new();
        Self { n, ks: wavenumbers(n, length), fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    fn half(&self) -> usize {
        self.n / 2 + 1
    }

    /// Real samples from a half spectrum, with an optional multiplier that is
    /// dropped at the Nyquist mode of even grids.
    fn synthesize(&self, half: &[Complex64], symbol: impl Fn(f64) -> Complex64) -> Vec<f64> {
        let n = self.n;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (m, c) in half.iter().enumerate() {
            let s = symbol(self.ks[m]);
            let v = if n.is_multiple_of(2) && m == n / 2 { Complex64::new((c * s).re, 0.0) } else { c * s };
            buf[m] = v;
            if m > 0 && m < n - m {
                buf[n - m] = v.conj();
            }
        }
        self.inv.process(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    }

    fn analyze(&self, a: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf.truncate(self.half());
        buf
    }
}

/// f₀ restricted to the box, evaluated at arbitrary (x, v).
fn initial_sampler<'a>(f0: &'a PhaseDensity, grid: &'a NonlinearGrid) -> Result<Box<dyn Fn(f64, f64) -> f64 + Sync + 'a>> {
    if f0.dimension() != 1 {
        return Err(Error::Unsupported("the nonlinear solvers run in d = 1".into()));
    }
    match f0 {
        PhaseDensity::SeparableRadial { .. } => {
            f0.eval(&[0.0], &[0.0])?;
            Ok(Box::new(move |x, v| f0.eval(&[grid.wrap(x)], &[v]).unwrap_or(0.0)))
        }
        PhaseDensity::Grid(g) => {
            if (g.length - grid.length).abs() > 1e-12 * grid.length {
                return Err(Error::Mismatch("gridded f₀ must share the box length".into()));
            }
            Ok(Box::new(move |x, v| phase_grid_eval(g, x, v)))
        }
    }
}

/// Bicubic interpolation of gridded f₀; periodic in x, zero outside the
/// velocity window.
fn phase_grid_eval(g: &PhaseGrid, x: f64, v: f64) -> f64 {
    if v.abs() > g.vmax {
        return 0.0;
    }
    let (i, sx) = crate::interp::locate(x, -0.5 * g.length, g.dx());
    let (j, sv) = crate::interp::locate(v, -g.vmax, g.dv());
    let base = (j - 1).clamp(0, g.nv as i64 - 4);
    let wv = cubic_weights(sv + (j - 1 - base) as f64);
    let wx = cubic_weights(sx);
    let mut acc = 0.0;
    for (a, wa) in wx.iter().enumerate() {
        let row = (i - 1 + a as i64).rem_euclid(g.nx as i64) as usize * g.nv;
        for (b, wb) in wv.iter().enumerate() {
            acc += wa * wb * g.values[row + base as usize + b];
        }
    }
    acc
}

/// μ' for d = 1 profiles as a cheap scalar closure.
fn mu_prime(mu: &EquilibriumProfile) -> Result<Box<dyn Fn(f64) -> f64 + Sync + '_>> {
    if mu.dimension() != 1 {
        return Err(Error::Unsupported("the nonlinear solvers run in d = 1".into()));
    }
    Ok(match mu.components() {
        Some(cs) => Box::new(move |v| {
            cs.iter()
                .map(|c| {
                    let y = v - c.shift;
                    -y / c.theta * c.weight * (-y * y / (2.0 * c.theta)).exp()
                        / (2.0 * std::f64::consts::PI * c.theta).sqrt()
                })
                .sum()
        }),
        None => Box::new(move |v| mu.grad_mu(&[v]).map(|g| g[0]).unwrap_or(0.0)),
    })
}

fn mu_value(mu: &EquilibriumProfile) -> Result<Box<dyn Fn(f64) -> f64 + Sync + '_>> {
    if mu.dimension() != 1 {
        return Err(Error::Unsupported("the nonlinear solvers run in d = 1".into()));
    }
    Ok(Box::new(move |v| mu.eval_mu(&[v]).unwrap_or(0.0)))
}

/// E(τ, ·) on the x grid by interpolation in time.
fn history_row(field: &GridHistory, tau: f64) -> Vec<f64> {
    let n = field.snapshots.len();
    let pos = (tau / field.dt).max(0.0);
    let i = (pos.floor() as usize).min(n - 1);
    let mut row = vec![0.0; field.snapshots[0].len()];
    for (k, w) in time_stencil(n, i, pos - i as f64, field.time) {
        for (r, e) in row.iter_mut().zip(&field.snapshots[k]) {
            *r += w * e;
        }
    }
    row
}

/// Field rows at the RK4 stage times t − m h/2, m = 0..=2·substeps.
struct StageRows {
    rows: Vec<Vec<f64>>,
    origin: f64,
    dx: f64,
    space: SpaceInterp,
}

impl StageRows {
    #[inline]
    fn eval(&self, m: usize, x: f64) -> f64 {
        match self.space {
            SpaceInterp::Cubic => periodic_cubic(&self.rows[m], self.origin, self.dx, x),
            SpaceInterp::Quintic => periodic_quintic(&self.rows[m], self.origin, self.dx, x),
        }
    }
}

/// ∫_{t−Δ}^t E(s, x₀ − (t − s)v) ds · μ'(v) along the free line, by the RK4
/// quadrature used for the characteristics.
#[inline]
fn free_reaction(rows: &StageRows, substeps: usize, h: f64, x0: f64, v: f64, mu_v: f64) -> f64 {
    let mut acc = 0.0;
    for sub in 0..substeps {
        let m = 2 * sub;
        let lag = h * sub as f64;
        let e1 = rows.eval(m, x0 - lag * v);
        let e2 = rows.eval(m + 1, x0 - (lag + 0.5 * h) * v);
        let e4 = rows.eval(m + 2, x0 - (lag + h) * v);
        acc += h / 6.0 * (e1 + 4.0 * e2 + e4) * mu_v;
    }
    acc
}

/// One backward step of (Y, W) from Y = W = 0 at t, with the reaction
/// ∫_{t−Δ}^t E μ'(V) ds along the way.
#[inline]
fn characteristic_step(
    rows: &StageRows,
    substeps: usize,
    h: f64,
    x0: f64,
    v: f64,
    mu_prime: &(dyn Fn(f64) -> f64 + Sync),
) -> (f64, f64, f64) {
    let (mut y, mut w, mut b) = (0.0, 0.0, 0.0);
    for sub in 0..substeps {
        let m = 2 * sub;
        let lag = h * sub as f64;
        let xf = |extra: f64| x0 - (lag + extra) * v;
        let e1 = rows.eval(m, xf(0.0) + y);
        let (y2, w2) = (y - 0.5 * h * w, w - 0.5 * h * e1);
        let e2 = rows.eval(m + 1, xf(0.5 * h) + y2);
        let (y3, w3) = (y - 0.5 * h * w2, w - 0.5 * h * e2);
        let e3 = rows.eval(m + 1, xf(0.5 * h) + y3);
        let (y4, w4) = (y - h * w3, w - h * e3);
        let e4 = rows.eval(m + 2, xf(h) + y4);
        b += h / 6.0
            * (e1 * mu_prime(v + w) + 2.0 * e2 * mu_prime(v + w2) + 2.0 * e3 * mu_prime(v + w3) + e4 * mu_prime(v + w4));
        y -= h / 6.0 * (w + 2.0 * w2 + 2.0 * w3 + w4);
        w -= h / 6.0 * (e1 + 2.0 * e2 + 2.0 * e3 + e4);
    }
    (y, w, b)
}

/// Interpolation stencil on the shifted grid for a foot displaced by
/// (δy, δv) from node (i, j): quintic periodic in y, cubic clamped in v.
struct Stencil {
    rows: [usize; 6],
    wy: [f64; 6],
    base: usize,
    wv: [f64; 4],
}

impl Stencil {
    #[inline]
    fn new(grid: &NonlinearGrid, i: usize, j: usize, dy: f64, dv: f64) -> Self {
        let uy = dy / grid.dx();
        let fy = uy.floor();
        let wy = quintic_weights(uy - fy);
        let iy = i as i64 + fy as i64;
        let nx = grid.nx as i64;
        let rows = std::array::from_fn(|a| (iy - 2 + a as i64).rem_euclid(nx) as usize);
        let uv = dv / grid.dv();
        let fv = uv.floor();
        let jv = j as i64 + fv as i64;
        let base = (jv - 1).clamp(0, grid.nv as i64 - 4);
        let wv = cubic_weights(uv - fv + (jv - 1 - base) as f64);
        Self { rows, wy, base: base as usize, wv }
    }

    #[inline]
    fn apply(&self, values: &[f64], nv: usize) -> f64 {
        let mut acc = 0.0;
        for (r, wy) in self.rows.iter().zip(&self.wy) {
            let row = &values[r * nv + self.base..r * nv + self.base + 4];
            acc += wy * (self.wv[0] * row[0] + self.wv[1] * row[1] + self.wv[2] * row[2] + self.wv[3] * row[3]);
        }
        acc
    }
}

/// Marches the characteristics of `field` over the whole horizon and
/// assembles 𝓘, 𝓡_L, 𝓡_NL and S at every time node.
pub fn assemble_source(
    f0: &PhaseDensity,
    mu: &EquilibriumProfile,
    grid: &NonlinearGrid,
    field: &GridHistory,
    opts: &MarchOptions,
) -> Result<SourceHistory> {
    grid.validate()?;
    let steps = grid.steps();
    if field.snapshots.len() != steps + 1 || field.snapshots[0].len() != grid.nx {
        return Err(Error::Mismatch("field history does not match the nonlinear grid".into()));
    }
    let f0_at = initial_sampler(f0, grid)?;
    let mu_p = mu_prime(mu)?;
    let (nx, nv) = (grid.nx, grid.nv);
    let spectral = Spectral::new(nx, grid.length);
    let frozen_field = field.snapshots.iter().all(|r| r.iter().all(|&e| e == 0.0));
    // dt_char = min(Δ, 0.05)/2.
    let substeps = (grid.dt / (grid.dt.min(0.05) / 2.0)).round().max(1.0) as usize;
    let h = grid.dt / substeps as f64;
    let mu_nodes: Vec<f64> = (0..nv).map(|j| mu_p(grid.v(j))).collect();

    let size = nx * nv;
    let (mut dy, mut dw) = (vec![0.0; size], vec![0.0; size]);
    let (mut bnl, mut bl) = (vec![0.0; size], vec![0.0; size]);

    let mut out = SourceHistory {
        times: Vec::with_capacity(steps + 1),
        origin: grid.origin(),
        dx: grid.dx(),
        initial: vec![],
        r_l: vec![],
        r_nl: vec![],
        total: vec![],
        total_modes: vec![],
        sup_y: vec![],
        sup_w: vec![],
        kept: vec![],
    };

    for k in 0..=steps {
        let t = grid.time(k);
        if k > 0 && !frozen_field {
            let rows = StageRows {
                rows: (0..=2 * substeps).map(|m| history_row(field, t - 0.5 * h * m as f64)).collect(),
                origin: grid.origin(),
                dx: grid.dx(),
                space: field.space,
            };
            let updated: Vec<[f64; 4]> = (0..size)
                .into_par_iter()
                .map(|idx| {
                    let (i, j) = (idx / nv, idx % nv);
                    let v = grid.v(j);
                    let x0 = grid.x(i) + t * v;
                    let local_free = free_reaction(&rows, substeps, h, x0, v, mu_nodes[j]);
                    if opts.frozen {
                        return [0.0, 0.0, bnl[idx] + local_free, bl[idx] + local_free];
                    }
                    let (y1, w1, local) = characteristic_step(&rows, substeps, h, x0, v, &*mu_p);
                    // Foot of the step in shifted coordinates at time t − Δ.
                    let shift_y = y1 - (t - grid.dt) * w1;
                    let st = Stencil::new(grid, i, j, shift_y, w1);
                    [
                        shift_y + st.apply(&dy, nv),
                        w1 + st.apply(&dw, nv),
                        st.apply(&bnl, nv) + local,
                        bl[idx] + local_free,
                    ]
                })
                .collect();
            for (idx, u) in updated.into_iter().enumerate() {
                dy[idx] = u[0];
                dw[idx] = u[1];
                bnl[idx] = u[2];
                bl[idx] = u[3];
            }
        }
        if opts.keep_steps.contains(&k) {
            out.kept.push(DeviationSnapshot { step: k, t, y_dev: dy.clone(), w_dev: dw.clone(), reaction: bnl.clone() });
        }
        out.sup_y.push(dy.iter().fold(0.0, |m, v| m.max(v.abs())));
        out.sup_w.push(dw.iter().fold(0.0, |m, v| m.max(v.abs())));

        // Velocity integrals as phase-shifted column spectra, summed in a
        // fixed order so results do not depend on the worker count.
        let columns: Vec<[Vec<Complex64>; 4]> = (0..nv)
            .into_par_iter()
            .map(|j| {
                let v = grid.v(j);
                let mut init = vec![0.0; nx];
                let mut lin = vec![0.0; nx];
                let mut non = vec![0.0; nx];
                let mut tot = vec![0.0; nx];
                for i in 0..nx {
                    let idx = i * nv + j;
                    init[i] = f0_at(grid.x(i) + dy[idx], v + dw[idx]);
                    lin[i] = bl[idx];
                    non[i] = bnl[idx];
                    tot[i] = init[i] + bl[idx] - bnl[idx];
                }
                // Separate transforms keep 𝓡_L and 𝓡_NL bitwise comparable.
                let (a, b) = (spectral.analyze(&init), spectral.analyze(&lin));
                let (c, d) = (spectral.analyze(&non), spectral.analyze(&tot));
                let w = grid.velocity_weight(j);
                let phase: Vec<Complex64> =
                    spectral.ks[..spectral.half()].iter().map(|&kk| Complex64::from_polar(w, -kk * t * v)).collect();
                let shift = |s: Vec<Complex64>| s.iter().zip(&phase).map(|(a, p)| a * p).collect::<Vec<_>>();
                [shift(a), shift(b), shift(c), shift(d)]
            })
            .collect();
        let mut acc = vec![vec![Complex64::new(0.0, 0.0); spectral.half()]; 4];
        for col in &columns {
            for (a, c) in acc.iter_mut().zip(col) {
                for (x, y) in a.iter_mut().zip(c) {
                    *x += y;
                }
            }
        }
        let one = |_: f64| Complex64::new(1.0, 0.0);
        out.times.push(t);
        out.initial.push(spectral.synthesize(&acc[0], one));
        out.r_l.push(spectral.synthesize(&acc[1], one));
        out.r_nl.push(spectral.synthesize(&acc[2], one));
        out.total.push(spectral.synthesize(&acc[3], one));
        out.total_modes.push(acc.swap_remove(3));
    }
    Ok(out)
}

/// 𝓘 at the grid time nearest `t`.
pub fn initial_data_term(f0: &PhaseDensity, mu: &EquilibriumProfile, grid: &NonlinearGrid, field: &GridHistory, t: f64) -> Result<GridSnapshot> {
    let s = assemble_source(f0, mu, grid, field, &MarchOptions::default())?;
    let k = ((t / grid.dt).round() as usize).min(grid.steps());
    Ok(GridSnapshot { t: s.times[k], origin: s.origin, dx: s.dx, values: s.initial[k].clone(), gradient: None })
}

/// (𝓡_L, 𝓡_NL) at the grid time nearest `t`.
pub fn reaction_term(
    f0: &PhaseDensity,
    mu: &EquilibriumProfile,
    grid: &NonlinearGrid,
    field: &GridHistory,
    t: f64,
) -> Result<(GridSnapshot, GridSnapshot)> {
    let s = assemble_source(f0, mu, grid, field, &MarchOptions::default())?;
    let k = ((t / grid.dt).round() as usize).min(grid.steps());
    let snap = |v: &Vec<f64>| GridSnapshot { t: s.times[k], origin: s.origin, dx: s.dx, values: v.clone(), gradient: None };
    Ok((snap(&s.r_l[k]), snap(&s.r_nl[k])))
}

/// One iterate of the Picard loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub n: usize,
    pub field: GridHistory,
    pub density: DensityHistory,
    pub source: Option<SourceHistory>,
    /// Bootstrap-weighted size of ρ⁽ⁿ⁾ − ρ⁽ⁿ⁻¹⁾; `None` before the first step.
    pub residual: Option<f64>,
}

/// Fixed data of a Picard run: f₀, μ, grids and the tabulated kernel.
pub struct PicardProblem {
    f0: PhaseDensity,
    mu: EquilibriumProfile,
    grid: NonlinearGrid,
    kernel: ModeSeries<f64>,
    spectral: Spectral,
}

impl PicardProblem {
    pub fn new(f0: PhaseDensity, mu: EquilibriumProfile, grid: NonlinearGrid) -> Result<Self> {
        grid.validate()?;
        let _ = initial_sampler(&f0, &grid)?;
        let _ = mu_prime(&mu)?;
        let spectral = Spectral::new(grid.nx, grid.length);
        let ks = spectral.ks[..spectral.half()].to_vec();
        let kernel = mode_sweep(&mu, grid.time_grid()?, &ks)?;
        Ok(Self { f0, mu, grid, kernel, spectral })
    }

    pub fn grid(&self) -> &NonlinearGrid {
        &self.grid
    }

    pub fn f0(&self) -> &PhaseDensity {
        &self.f0
    }

    pub fn mu(&self) -> &EquilibriumProfile {
        &self.mu
    }

    /// E⁽⁰⁾ ≡ 0 and ρ⁽⁰⁾ ≡ 0.
    pub fn initial_state(&self) -> Result<IterationState> {
        let rows = vec![vec![0.0; self.grid.nx]; self.grid.steps() + 1];
        Ok(IterationState {
            n: 0,
            field: self.field_rows(rows)?,
            density: DensityHistory::zeros(&self.grid),
            source: None,
            residual: None,
        })
    }

    fn field_rows(&self, rows: Vec<Vec<f64>>) -> Result<GridHistory> {
        Ok(GridHistory::new(self.grid.dt, self.grid.origin(), self.grid.dx(), rows)?
            .with_interpolation(SpaceInterp::Quintic, TimeInterp::Cubic))
    }

    /// ρ solving ρ = S + K⋆ρ for a tabulated source, with ∂_x ρ and the
    /// field E = −∂_x(1 − ∂²_x)⁻¹ρ.
    pub fn solve_density(&self, source: &SourceHistory) -> Result<(DensityHistory, GridHistory)> {
        let half = self.spectral.half();
        let len = self.grid.steps() + 1;
        if source.total_modes.len() != len {
            return Err(Error::Mismatch("source history does not cover the time grid".into()));
        }
        let mut values = Vec::with_capacity(half * len);
        for m in 0..half {
            values.extend(source.total_modes.iter().map(|row| row[m]));
        }
        let s_hat = ModeSeries::from_rows(*self.kernel.grid(), self.kernel.xi().to_vec(), SeriesKind::Source, values)?;
        let rho_hat = solve_mode_volterra(&self.kernel, &s_hat)?;
        let columns: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..len)
            .into_par_iter()
            .map(|k| {
                let col = rho_hat.column(k);
                (
                    self.spectral.synthesize(&col, |_| Complex64::new(1.0, 0.0)),
                    self.spectral.synthesize(&col, |kk| Complex64::new(0.0, kk)),
                    self.spectral.synthesize(&col, |kk| Complex64::new(0.0, -kk / (1.0 + kk * kk))),
                )
            })
            .collect();
        let mut density = DensityHistory::zeros(&self.grid);
        let mut field = Vec::with_capacity(len);
        for (k, (rho, grad, e)) in columns.into_iter().enumerate() {
            density.rho[k] = rho;
            density.grad[k] = grad;
            field.push(e);
        }
        Ok((density, self.field_rows(field)?))
    }

    /// S⁽ⁿ⁾ from E⁽ⁿ⁾'s characteristics, then ρ⁽ⁿ⁺¹⁾ and E⁽ⁿ⁺¹⁾.
    pub fn step(&self, state: &IterationState) -> Result<IterationState> {
        let source = assemble_source(&self.f0, &self.mu, &self.grid, &state.field, &MarchOptions::default())?;
        let (density, field) = self.solve_density(&source)?;
        let delta = density.difference(&state.density)?;
        let residual = (0..delta.len())
            .map(|k| weighted_norm(1, delta.times[k], &delta.norms(k)))
            .fold(0.0, f64::max);
        Ok(IterationState { n: state.n + 1, field, density, source: Some(source), residual: Some(residual) })
    }
}

pub fn picard_step(problem: &PicardProblem, state: &IterationState) -> Result<IterationState> {
    problem.step(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { max_iter: 20, tol: 1e-8 }
    }
}

/// Outcome of a Picard run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardRun {
    pub residuals: Vec<f64>,
    /// residual_n / residual_{n−1} for n ≥ 2.
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub state: IterationState,
}

impl PicardRun {
    /// Largest contraction ratio from step 3 on.
    pub fn max_ratio_after(&self, step: usize) -> f64 {
        self.ratios.iter().skip(step.saturating_sub(1)).copied().fold(0.0, f64::max)
    }
}

/// Iterates from E⁽⁰⁾ ≡ 0 until the residual drops below `tol`.
pub fn picard_iterate(problem: &PicardProblem, opts: &PicardOptions) -> Result<PicardRun> {
    let mut state = problem.initial_state()?;
    let mut residuals = Vec::new();
    for _ in 0..opts.max_iter {
        state = problem.step(&state)?;
        let r = state.residual.expect("stepped states carry a residual");
        residuals.push(r);
        if r < opts.tol {
            break;
        }
    }
    let ratios = residuals.windows(2).map(|w| w[1] / w[0]).collect();
    let converged = residuals.last().is_some_and(|&r| r < opts.tol);
    Ok(PicardRun { residuals, ratios, converged, state })
}

/// Strang-split semi-Lagrangian solution of the perturbation equation
/// ∂_t f + v ∂_x f + E ∂_v(μ + f) = 0 on the same periodic box. Both
/// advections are exact Fourier shifts; μ is shifted analytically.
pub fn semi_lagrangian_reference(f0: &PhaseDensity, mu: &EquilibriumProfile, grid: &NonlinearGrid) -> Result<DensityHistory> {
    grid.validate()?;
    let f0_at = initial_sampler(f0, grid)?;
    let mu_v = mu_value(mu)?;
    let (nx, nv, dt) = (grid.nx, grid.nv, grid.dt);
    let xs = Spectral::new(nx, grid.length);
    let vs = Spectral::new(nv, nv as f64 * grid.dv());
    let weights: Vec<f64> = (0..nv).map(|j| grid.velocity_weight(j)).collect();
    let mu_nodes: Vec<f64> = (0..nv).map(|j| mu_v(grid.v(j))).collect();

    // f[i * nv + j]
    let mut f: Vec<f64> = (0..nx * nv).map(|idx| f0_at(grid.x(idx / nv), grid.v(idx % nv))).collect();

    let density_of = |f: &[f64]| -> Vec<f64> {
        f.chunks(nv).map(|row| row.iter().zip(&weights).map(|(a, w)| a * w).sum()).collect()
    };
    let advect_x = |f: &mut Vec<f64>, tau: f64| {
        let cols: Vec<Vec<f64>> = (0..nv)
            .into_par_iter()
            .map(|j| {
                let v = grid.v(j);
                let mut buf: Vec<Complex64> = (0..nx).map(|i| Complex64::new(f[i * nv + j], 0.0)).collect();
                xs.fwd.process(&mut buf);
                for (c, &k) in buf.iter_mut().zip(&xs.ks) {
                    *c *= Complex64::from_polar(1.0, -k * v * tau);
                }
                if nx % 2 == 0 {
                    // Keep the Nyquist coefficient real so the shift stays real.
                    let c = buf[nx / 2];
                    buf[nx / 2] = Complex64::new(c.re, 0.0);
                }
                xs.inv.process(&mut buf);
                buf.iter().map(|c| c.re / nx as f64).collect()
            })
            .collect();
        for (j, col) in cols.into_iter().enumerate() {
            for (i, val) in col.into_iter().enumerate() {
                f[i * nv + j] = val;
            }
        }
    };

    let mut history = DensityHistory::zeros(grid);
    let record = |history: &mut DensityHistory, k: usize, rho: Vec<f64>| {
        let mut buf: Vec<Complex64> = rho.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        xs.fwd.process(&mut buf);
        let half = &buf[..xs.half()];
        history.grad[k] = xs.synthesize(half, |k| Complex64::new(0.0, k));
        history.rho[k] = rho;
    };
    record(&mut history, 0, density_of(&f));

    for k in 1..=grid.steps() {
        advect_x(&mut f, 0.5 * dt);
        let rho = density_of(&f);
        let mut buf: Vec<Complex64> = rho.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        xs.fwd.process(&mut buf);
        let e = xs.synthesize(&buf[..xs.half()], |kk| Complex64::new(0.0, -kk / (1.0 + kk * kk)));
        f.par_chunks_mut(nv).zip(e.par_iter()).for_each(|(row, &ei)| {
            let a = ei * dt;
            let mut buf: Vec<Complex64> = row.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            vs.fwd.process(&mut buf);
            for (c, &kv) in buf.iter_mut().zip(&vs.ks) {
                *c *= Complex64::from_polar(1.0, -kv * a);
            }
            if nv % 2 == 0 {
                let c = buf[nv / 2];
                buf[nv / 2] = Complex64::new(c.re, 0.0);
            }
            vs.inv.process(&mut buf);
            for (j, (x, c)) in row.iter_mut().zip(&buf).enumerate() {
                *x = c.re / nv as f64 + mu_v(grid.v(j) - a) - mu_nodes[j];
            }
        });
        advect_x(&mut f, 0.5 * dt);
        record(&mut history, k, density_of(&f));
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{free_source, free_source_grid, SourceMethod};
    use crate::volterra::discrete_convolution;

    fn small_grid() -> NonlinearGrid {
        NonlinearGrid { length: 40.0, nx: 80, vmax: 6.0, nv: 121, dt: 0.05, t_max: 4.0 }
    }

    fn maxwellian() -> EquilibriumProfile {
        EquilibriumProfile::maxwellian(1, 1.0).unwrap()
    }

    fn perturbation(eps: f64) -> PhaseDensity {
        PhaseDensity::gaussian(1, eps, 1.0, 1.0).unwrap()
    }

    /// The field of ρ⁽¹⁾, used as a generic nonzero history.
    fn linear_state(problem: &PicardProblem) -> IterationState {
        problem.step(&problem.initial_state().unwrap()).unwrap()
    }

    #[test]
    fn zero_data_is_a_fixed_point() {
        let p = PicardProblem::new(perturbation(0.0), maxwellian(), small_grid()).unwrap();
        let s = linear_state(&p);
        assert!(s.density.rho.iter().flatten().all(|&r| r == 0.0));
        assert_eq!(s.residual, Some(0.0));
        let sl = semi_lagrangian_reference(&perturbation(0.0), &maxwellian(), &small_grid()).unwrap();
        assert!(sl.rho.iter().flatten().all(|&r| r == 0.0));
    }

    #[test]
    fn initial_term_without_field_is_the_free_source() {
        let g = small_grid();
        let f0 = perturbation(1e-3);
        let p = PicardProblem::new(f0.clone(), maxwellian(), g).unwrap();
        let zero = p.initial_state().unwrap().field;
        let s = assemble_source(&f0, &maxwellian(), &g, &zero, &MarchOptions::default()).unwrap();
        let positive = g.nx / 2 + 1..g.nx;
        let radii: Vec<f64> = positive.clone().map(|i| g.x(i)).collect();
        for k in [0, 10, 40] {
            let t = s.times[k];
            let exact = free_source(&f0, t, &radii, SourceMethod::Auto).unwrap();
            for (a, b) in s.initial[k][positive.clone()].iter().zip(&exact.values) {
                assert!((a - b).abs() < 1e-12, "t={t} {a} {b}");
            }
            assert!(s.r_l[k].iter().chain(&s.r_nl[k]).all(|&r| r == 0.0));
        }
    }

    #[test]
    fn frozen_characteristics_cancel_the_reaction() {
        let g = small_grid();
        let p = PicardProblem::new(perturbation(1e-2), maxwellian(), g).unwrap();
        let field = linear_state(&p).field;
        let opts = MarchOptions { frozen: true, ..MarchOptions::default() };
        let s = assemble_source(p.f0(), p.mu(), &g, &field, &opts).unwrap();
        assert!(s.r_l.iter().flatten().any(|&r| r != 0.0));
        assert_eq!(s.r_l, s.r_nl);
    }

    #[test]
    fn source_identity_and_reaction_size() {
        let g = small_grid();
        let p = PicardProblem::new(perturbation(1e-2), maxwellian(), g).unwrap();
        let state = p.step(&linear_state(&p)).unwrap();
        let s = state.source.as_ref().unwrap();
        assert!(s.identity_defect() < 1e-12, "{}", s.identity_defect());
        // The reaction is quadratic in the amplitude, the linear part is not.
        let sup = |rows: &[Vec<f64>]| rows.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let reaction: Vec<Vec<f64>> = (0..s.times.len()).map(|k| s.reaction(k)).collect();
        assert!(sup(&reaction) < 1e-2 * sup(&s.r_l), "{} vs {}", sup(&reaction), sup(&s.r_l));
    }

    #[test]
    fn one_step_from_zero_field_is_the_linear_solution() {
        let g = small_grid();
        let f0 = perturbation(1e-3);
        let p = PicardProblem::new(f0.clone(), maxwellian(), g).unwrap();
        let s1 = linear_state(&p);
        // Independent route: gridded free source, transformed and solved.
        let pg = PhaseGrid::sample(g.length, g.nx, g.vmax, g.nv, |x, v| f0.eval(&[x], &[v]).unwrap()).unwrap();
        let spectral = Spectral::new(g.nx, g.length);
        let half = spectral.half();
        let mut values = vec![Complex64::new(0.0, 0.0); half * (g.steps() + 1)];
        for k in 0..=g.steps() {
            let snap = free_source_grid(&pg, g.time(k)).unwrap();
            let spec = spectral.analyze(&snap.values);
            for m in 0..half {
                values[m * (g.steps() + 1) + k] = spec[m];
            }
        }
        let src = ModeSeries::from_rows(*p.kernel.grid(), p.kernel.xi().to_vec(), SeriesKind::Source, values).unwrap();
        let rho = solve_mode_volterra(&p.kernel, &src).unwrap();
        for k in [5, 40, 80] {
            let direct = spectral.synthesize(&rho.column(k), |_| Complex64::new(1.0, 0.0));
            for (a, b) in direct.iter().zip(&s1.density.rho[k]) {
                assert!((a - b).abs() < 1e-15, "{a} {b}");
            }
        }
    }

    #[test]
    fn free_reaction_matches_the_kernel_convolution() {
        let g = small_grid();
        let p = PicardProblem::new(perturbation(1e-2), maxwellian(), g).unwrap();
        let s1 = linear_state(&p);
        let s = assemble_source(p.f0(), p.mu(), &g, &s1.field, &MarchOptions::default()).unwrap();
        // 𝓡_L is −K⋆ρ⁽¹⁾; compare with the trapezoidal convolution per mode.
        let len = g.steps() + 1;
        let spectral = &p.spectral;
        let rho_modes: Vec<Vec<Complex64>> = s1
            .density
            .rho
            .iter()
            .map(|r| spectral.analyze(r))
            .collect();
        let k_last = len - 1;
        let conv: Vec<Complex64> = (0..spectral.half())
            .map(|m| {
                let rm: Vec<Complex64> = rho_modes.iter().map(|r| r[m]).collect();
                discrete_convolution(p.kernel.row(m), &rm, g.dt)[k_last]
            })
            .collect();
        let via_kernel = spectral.synthesize(&conv, |_| Complex64::new(1.0, 0.0));
        let scale = via_kernel.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = via_kernel.iter().zip(&s.r_l[k_last]).fold(0.0f64, |m, (a, b)| m.max((a + b).abs()));
        assert!(err < 1e-3 * scale, "err {err} scale {scale}");
    }

    #[test]
    fn semi_lagrangian_free_streaming_and_mass() {
        let g = small_grid();
        let f0 = perturbation(1e-3);
        let vacuum = EquilibriumProfile::vacuum(1).unwrap();
        let sl = semi_lagrangian_reference(&f0, &vacuum, &g).unwrap();
        let pg = PhaseGrid::sample(g.length, g.nx, g.vmax, g.nv, |x, v| f0.eval(&[x], &[v]).unwrap()).unwrap();
        // The self-consistent field is O(ε), so compare at first order only.
        let free = free_source_grid(&pg, g.t_max).unwrap();
        let last = g.steps();
        let err = free.values.iter().zip(&sl.rho[last]).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-3 * free.linf(), "{err}");
        let sl = semi_lagrangian_reference(&f0, &maxwellian(), &g).unwrap();
        let m0 = sl.mass(0);
        for k in 0..sl.len() {
            assert!((sl.mass(k) - m0).abs() < 1e-8 * m0.abs().max(1e-3));
        }
    }

    #[test]
    fn twin_solvers_agree_on_a_short_run() {
        let g = small_grid();
        let f0 = perturbation(1e-3);
        let p = PicardProblem::new(f0.clone(), maxwellian(), g).unwrap();
        let run = picard_iterate(&p, &PicardOptions::default()).unwrap();
        assert!(run.converged, "{:?}", run.residuals);
        assert!(run.max_ratio_after(2) < 0.5, "{:?}", run.ratios);
        let sl = semi_lagrangian_reference(&f0, &maxwellian(), &g).unwrap();
        for k in (0..sl.len()).step_by(10) {
            let e = run.state.density.relative_l2(&sl, k);
            assert!(e < 1e-3, "t={} rel={e}", sl.times[k]);
        }
    }

    #[test]
    fn monitor_oracles() {
        let times: Vec<f64> = (0..50).map(|i| 0.5 * i as f64).collect();
        let zero = BootstrapMonitor::from_norms(1, 1.0, times.clone(), vec![[0.0; 4]; 50]).unwrap();
        assert!(zero.n_of_t.iter().all(|&n| n == 0.0));
        assert_eq!(zero.breach_time, None);
        for d in [1, 3] {
            let norms = times
                .iter()
                .map(|&s| [0.0, (2.0 + s).ln() / (1.0 + s * s).sqrt().powi(d as i32), 0.0, 0.0])
                .collect();
            let m = BootstrapMonitor::from_norms(d, 2.0, times.clone(), norms).unwrap();
            assert!(m.n_of_t.iter().all(|&n| (n - 1.0).abs() < 1e-14));
        }
        let growing = times.iter().map(|&s| [s, 0.0, 0.0, 0.0]).collect();
        let m = BootstrapMonitor::from_norms(1, 3.0, times.clone(), growing).unwrap();
        assert!(m.n_of_t.windows(2).all(|w| w[1] >= w[0]));
        let first = m.n_of_t.iter().position(|&n| n > 3.0).unwrap();
        assert_eq!(m.breach_time, Some(times[first]));
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let f0 = PhaseDensity::gaussian(3, 1e-3, 1.0, 1.0).unwrap();
        let mu = EquilibriumProfile::maxwellian(3, 1.0).unwrap();
        assert!(matches!(PicardProblem::new(f0, mu, small_grid()), Err(Error::Unsupported(_))));
    }
}
