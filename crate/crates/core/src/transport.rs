//! Free transport of the initial perturbation and the screened field.
//!
//! S(t, x) = ∫ f₀(x − tv, v) dv is the density produced by free streaming,
//! and E = −∇(1 − Δ)⁻¹ρ the field of a density ρ.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::quad::GaussLegendre;
use crate::reconstruct::{
    norms, radial_inverse_fourier, AnalyticSymbol, InverseOptions, RadialSnapshot, RadialSymbol,
};
use crate::volterra::{ModeSeries, SeriesKind, TimeGrid};

type RadialFn = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;

/// A radial factor of a separable phase-space density.
#[derive(Clone)]
pub enum RadialFactor {
    /// `mass · (2πσ²)^{-d/2} exp(−r²/2σ²)`.
    Gaussian { mass: f64, sigma: f64 },
    /// Arbitrary profile returning `(value, derivative)` at r; `scale` is the
    /// length on which it varies and `reach` the radius beyond which it
    /// vanishes to working precision.
    Custom { f: RadialFn, scale: f64, reach: f64 },
}

impl fmt::Debug for RadialFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian { mass, sigma } => write!(f, "Gaussian {{ mass: {mass}, sigma: {sigma} }}"),
            Self::Custom { scale, reach, .. } => write!(f, "Custom {{ scale: {scale}, reach: {reach} }}"),
        }
    }
}

impl RadialFactor {
    pub fn gaussian(mass: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !mass.is_finite() {
            return precondition("Gaussian factor needs a positive width and finite mass");
        }
        Ok(Self::Gaussian { mass, sigma })
    }

    pub fn custom(f: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static, scale: f64, reach: f64) -> Result<Self> {
        if !(scale > 0.0) || !(reach > 0.0) {
            return precondition("custom factor needs a positive scale and reach");
        }
        Ok(Self::Custom { f: Arc::new(f), scale, reach })
    }

    /// Value and radial derivative in dimension `d`.
    pub fn eval(&self, d: usize, r: f64) -> (f64, f64) {
        match self {
            Self::Gaussian { mass, sigma } => {
                let s2 = sigma * sigma;
                let v = mass * (2.0 * PI * s2).powf(-(d as f64) / 2.0) * (-0.5 * r * r / s2).exp();
                (v, -r / s2 * v)
            }
            Self::Custom { f, .. } => f(r),
        }
    }

    pub fn scale(&self) -> f64 {
        match self {
            Self::Gaussian { sigma, .. } => *sigma,
            Self::Custom { scale, .. } => *scale,
        }
    }

    pub fn reach(&self) -> f64 {
        match self {
            Self::Gaussian { sigma, .. } => 10.0 * sigma,
            Self::Custom { reach, .. } => *reach,
        }
    }

    /// ∫ |h(|x|)| dx over ℝ^d for h the factor (`derivative = false`) or its
    /// radial derivative.
    fn l1(&self, d: usize, derivative: bool) -> f64 {
        let omega = crate::equilibria::sphere_area(d);
        let rule = GaussLegendre::<f64>::new(16);
        let panels = (self.reach() / self.scale() * 8.0).ceil() as usize;
        omega
            * rule.integrate_panels(0.0, self.reach(), panels, |r| {
                let (v, dv) = self.eval(d, r);
                (if derivative { dv } else { v }).abs() * r.powi(d as i32 - 1)
            })
    }

    /// sup |h| (or sup |h'|) over a fine radial sample.
    fn sup(&self, d: usize, derivative: bool) -> f64 {
        let n = 4096;
        (0..=n)
            .map(|i| {
                let (v, dv) = self.eval(d, self.reach() * i as f64 / n as f64);
                (if derivative { dv } else { v }).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Initial perturbation on a periodic d = 1 phase-space grid, row-major in x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub length: f64,
    pub nx: usize,
    pub vmax: f64,
    pub nv: usize,
    pub values: Vec<f64>,
}

impl PhaseGrid {
    /// Samples `f(x, v)` at x_i = −L/2 + iL/nx and v_j = −vmax + 2 j vmax/(nv − 1).
    pub fn sample(length: f64, nx: usize, vmax: f64, nv: usize, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Self> {
        if nx < 4 || nv < 3 || !(length > 0.0) || !(vmax > 0.0) {
            return precondition("phase grid needs nx ≥ 4, nv ≥ 3 and positive extents");
        }
        let mut g = Self { length, nx, vmax, nv, values: vec![0.0; nx * nv] };
        let (dx, dv) = (g.dx(), g.dv());
        g.values.par_chunks_mut(nv).enumerate().for_each(|(i, row)| {
            let x = -0.5 * length + dx * i as f64;
            for (j, val) in row.iter_mut().enumerate() {
                *val = f(x, -vmax + dv * j as f64);
            }
        });
        Ok(g)
    }

    pub fn dx(&self) -> f64 {
        self.length / self.nx as f64
    }

    pub fn dv(&self) -> f64 {
        2.0 * self.vmax / (self.nv - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        -0.5 * self.length + self.dx() * i as f64
    }

    pub fn v(&self, j: usize) -> f64 {
        -self.vmax + self.dv() * j as f64
    }
}

/// Initial perturbation f₀.
#[derive(Debug, Clone)]
pub enum PhaseDensity {
    /// f₀(x, v) = a(|x|) b(|v|) on ℝ^d × ℝ^d.
    SeparableRadial { dimension: usize, a: RadialFactor, b: RadialFactor },
    /// Periodic d = 1 samples.
    Grid(PhaseGrid),
}

/// Norms of f₀ entering the free-transport bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersiveNorms {
    /// ‖f₀‖_{L¹}
    pub l1: f64,
    /// ‖f₀‖_{L¹_x L^∞_v}
    pub l1_linf: f64,
    /// ‖∇_v f₀‖_{L¹}
    pub grad_v_l1: f64,
    /// ‖∇_v f₀‖_{L¹_x L^∞_v}
    pub grad_v_l1_linf: f64,
}

impl PhaseDensity {
    /// Product of Gaussians with total mass `amplitude`.
    pub fn gaussian(dimension: usize, amplitude: f64, sigma_x: f64, sigma_v: f64) -> Result<Self> {
        if !(1..=3).contains(&dimension) {
            return Err(Error::Unsupported(format!("phase densities in dimension {dimension}")));
        }
        Ok(Self::SeparableRadial {
            dimension,
            a: RadialFactor::gaussian(amplitude, sigma_x)?,
            b: RadialFactor::gaussian(1.0, sigma_v)?,
        })
    }

    pub fn dimension(&self) -> usize {
        match self {
            Self::SeparableRadial { dimension, .. } => *dimension,
            Self::Grid(_) => 1,
        }
    }

    /// f₀ at a phase-space point (separable representation only).
    pub fn eval(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        match self {
            Self::SeparableRadial { dimension, a, b } => {
                if x.len() != *dimension || v.len() != *dimension {
                    return Err(Error::Mismatch("point dimension differs from the density".into()));
                }
                let norm = |w: &[f64]| w.iter().map(|c| c * c).sum::<f64>().sqrt();
                Ok(a.eval(*dimension, norm(x)).0 * b.eval(*dimension, norm(v)).0)
            }
            Self::Grid(_) => Err(Error::Unsupported("pointwise evaluation of gridded data".into())),
        }
    }

    pub fn dispersive_norms(&self) -> DispersiveNorms {
        match self {
            Self::SeparableRadial { dimension: d, a, b } => {
                let a1 = a.l1(*d, false);
                DispersiveNorms {
                    l1: a1 * b.l1(*d, false),
                    l1_linf: a1 * b.sup(*d, false),
                    grad_v_l1: a1 * b.l1(*d, true),
                    grad_v_l1_linf: a1 * b.sup(*d, true),
                }
            }
            Self::Grid(g) => {
                let (dx, dv) = (g.dx(), g.dv());
                let mut n = DispersiveNorms { l1: 0.0, l1_linf: 0.0, grad_v_l1: 0.0, grad_v_l1_linf: 0.0 };
                for row in g.values.chunks(g.nv) {
                    n.l1 += row.iter().map(|v| v.abs()).sum::<f64>() * dx * dv;
                    n.l1_linf += row.iter().fold(0.0f64, |m, v| m.max(v.abs())) * dx;
                    let grads = row.windows(2).map(|w| ((w[1] - w[0]) / dv).abs());
                    let (s, m) = grads.fold((0.0, 0.0f64), |(s, m), g| (s + g, m.max(g)));
                    n.grad_v_l1 += s * dx * dv;
                    n.grad_v_l1_linf += m * dx;
                }
                n
            }
        }
    }

    fn separable(&self) -> Result<(usize, &RadialFactor, &RadialFactor)> {
        match self {
            Self::SeparableRadial { dimension, a, b } => Ok((*dimension, a, b)),
            Self::Grid(_) => Err(Error::Unsupported("radial free source of gridded data".into())),
        }
    }

    /// Ŝ(t, k) for Gaussian factors: â(k) b̂(tk).
    pub fn source_symbol(&self, t: f64) -> Result<AnalyticSymbol<impl Fn(f64) -> f64 + Sync>> {
        let (_, a, b) = self.separable()?;
        let (RadialFactor::Gaussian { mass: ma, sigma: sa }, RadialFactor::Gaussian { mass: mb, sigma: sb }) = (a, b)
        else {
            return Err(Error::Unsupported("closed-form source symbol needs Gaussian factors".into()));
        };
        let (m, s2) = (ma * mb, sa * sa + t * t * sb * sb);
        let s = s2.sqrt();
        Ok(AnalyticSymbol::truncated(move |k: f64| m * (-0.5 * k * k * s2).exp(), 10.0 / s, 0.25 / s))
    }

    /// Ŝ(t, k) tabulated on a time grid and mode list.
    pub fn source_modes(&self, grid: TimeGrid<f64>, xi: &[f64]) -> Result<ModeSeries<f64>> {
        let (_, a, b) = self.separable()?;
        let (RadialFactor::Gaussian { mass: ma, sigma: sa }, RadialFactor::Gaussian { mass: mb, sigma: sb }) = (a, b)
        else {
            return Err(Error::Unsupported("closed-form source modes need Gaussian factors".into()));
        };
        let (m, sa2, sb2) = (ma * mb, sa * sa, sb * sb);
        let ks = xi.to_vec();
        Ok(ModeSeries::from_fn(grid, xi.to_vec(), SeriesKind::Source, move |j, t| {
            let k = ks[j];
            Complex64::new(m * (-0.5 * k * k * (sa2 + t * t * sb2)).exp(), 0.0)
        }))
    }
}

/// How [`free_source`] evaluates S.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceMethod {
    /// Closed form when both factors are Gaussian, quadrature otherwise.
    Auto,
    Quadrature,
}

/// Panels of width at most `width` covering `[lo, hi]`, with `rule` nodes.
fn panel_nodes(rule: &GaussLegendre<f64>, lo: f64, hi: f64, width: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
    let panels = if hi > lo { ((hi - lo) / width).ceil().max(1.0) as usize } else { 0 };
    let h = if panels > 0 { (hi - lo) / panels as f64 } else { 0.0 };
    (0..panels).flat_map(move |p| rule.mapped(lo + h * p as f64, lo + h * (p + 1) as f64))
}

/// (S(t, r), ∂_r S(t, r)) by quadrature over v.
fn source_quadrature(d: usize, a: &RadialFactor, b: &RadialFactor, t: f64, r: f64, rule: &GaussLegendre<f64>) -> (f64, f64) {
    let (sa, ra, sb, rb) = (a.scale(), a.reach(), b.scale(), b.reach());
    if t == 0.0 {
        let (v, dv) = a.eval(d, r);
        let mass = b.l1(d, false);
        return (v * mass, dv * mass);
    }
    let w_width = (sb.min(sa / t)) / 2.0;
    match d {
        1 => {
            let lo = ((r - ra) / t).max(-rb);
            let hi = ((r + ra) / t).min(rb);
            panel_nodes(rule, lo, hi, w_width).fold((0.0, 0.0), |(s, g), (v, w)| {
                let y = r - t * v;
                let (av, ad) = a.eval(1, y.abs());
                let bw = b.eval(1, v.abs()).0 * w;
                (s + av * bw, g + ad * y.signum() * bw)
            })
        }
        2 => {
            let lo = ((r - ra) / t).max(0.0);
            let hi = ((r + ra) / t).min(rb);
            panel_nodes(rule, lo, hi, w_width).fold((0.0, 0.0), |(s, g), (w, wt)| {
                // Periodic trapezoid in the angle between x and v.
                let n_phi = ((8.0 * r * t * w / sa).ceil() as usize).max(64);
                let mut acc = (0.0, 0.0);
                for i in 0..n_phi {
                    let c = (2.0 * PI * i as f64 / n_phi as f64).cos();
                    let rho = (r * r + t * t * w * w - 2.0 * r * t * w * c).max(0.0).sqrt();
                    let (av, ad) = a.eval(2, rho);
                    acc.0 += av;
                    if rho > 0.0 {
                        acc.1 += ad * (r - t * w * c) / rho;
                    }
                }
                let f = b.eval(2, w).0 * w * wt * 2.0 * PI / n_phi as f64;
                (s + acc.0 * f, g + acc.1 * f)
            })
        }
        _ => {
            let lo = ((r - ra) / t).max(0.0);
            let hi = ((r + ra) / t).min(rb);
            panel_nodes(rule, lo, hi, w_width).fold((0.0, 0.0), |(s, g), (w, wt)| {
                // Angular average rewritten over ρ = |x − tv| ∈ [|r − tw|, r + tw].
                let (p_lo, p_hi) = ((r - t * w).abs(), (r + t * w).min(ra));
                let mut acc = (0.0, 0.0);
                for (rho, pw) in panel_nodes(rule, p_lo, p_hi, sa / 2.0) {
                    let (av, ad) = a.eval(3, rho);
                    acc.0 += av * rho * pw;
                    acc.1 += ad * (r * r - t * t * w * w + rho * rho) / (2.0 * r) * pw;
                }
                let f = b.eval(3, w).0 * w * w * wt * 2.0 * PI / (r * t * w);
                (s + acc.0 * f, g + acc.1 * f)
            })
        }
    }
}

/// S(t, ·) on `radii`, with ∂_r S as the gradient.
pub fn free_source(f0: &PhaseDensity, t: f64, radii: &[f64], method: SourceMethod) -> Result<RadialSnapshot> {
    if !(t >= 0.0) {
        return precondition("free transport runs forward from t = 0");
    }
    let (d, a, b) = f0.separable()?;
    let closed = match (method, a, b) {
        (SourceMethod::Auto, RadialFactor::Gaussian { mass: ma, sigma: sa }, RadialFactor::Gaussian { mass: mb, sigma: sb }) => {
            Some((ma * mb, sa * sa + t * t * sb * sb))
        }
        _ => None,
    };
    let (values, grads): (Vec<f64>, Vec<f64>) = if let Some((m, s2)) = closed {
        let c = m * (2.0 * PI * s2).powf(-(d as f64) / 2.0);
        radii
            .iter()
            .map(|&r| {
                let v = c * (-0.5 * r * r / s2).exp();
                (v, -r / s2 * v)
            })
            .unzip()
    } else {
        let rule = GaussLegendre::<f64>::new(16);
        radii.par_iter().map(|&r| source_quadrature(d, a, b, t, r, &rule)).unzip()
    };
    RadialSnapshot::new(d, t, radii.to_vec(), values, Some(grads))
}

/// ∂_r S(t, ·): the radial component of ∇S.
pub fn free_source_gradient(f0: &PhaseDensity, t: f64, radii: &[f64], method: SourceMethod) -> Result<RadialSnapshot> {
    let s = free_source(f0, t, radii, method)?;
    let g = s.gradient.clone().unwrap_or_default();
    RadialSnapshot::new(s.dimension, t, s.radii, g, None)
}

/// Samples on a uniform periodic d = 1 grid starting at `origin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSnapshot {
    pub t: f64,
    pub origin: f64,
    pub dx: f64,
    pub values: Vec<f64>,
    pub gradient: Option<Vec<f64>>,
}

impl GridSnapshot {
    pub fn l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.dx
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.dx).sqrt()
    }
}

pub(crate) fn wavenumbers(n: usize, length: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let m = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
            2.0 * PI * m / length
        })
        .collect()
}

/// Applies a Fourier multiplier to periodic real samples.
pub fn periodic_multiplier(values: &[f64], length: f64, symbol: impl Fn(f64) -> Complex64) -> Vec<f64> {
    let n = values.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    let ks = wavenumbers(n, length);
    for (c, &k) in buf.iter_mut().zip(&ks) {
        // The Nyquist mode of an even grid has no sign; drop odd symbols there.
        let s = symbol(k);
        *c *= if n.is_multiple_of(2) && k == ks[n / 2] { Complex64::new(s.re, 0.0) } else { s };
    }
    inv.process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// S(t, ·) and ∂_x S for gridded d = 1 data by exact spectral shifts in x
/// and the trapezoid rule in v.
pub fn free_source_grid(f0: &PhaseGrid, t: f64) -> Result<GridSnapshot> {
    if !(t >= 0.0) {
        return precondition("free transport runs forward from t = 0");
    }
    let (nx, nv) = (f0.nx, f0.nv);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nx);
    let inv = planner.plan_fft_inverse(nx);
    let ks = wavenumbers(nx, f0.length);
    let mut acc = vec![Complex64::new(0.0, 0.0); nx];
    for j in 0..nv {
        let w = if j == 0 || j == nv - 1 { 0.5 } else { 1.0 } * f0.dv();
        let v = f0.v(j);
        let mut col: Vec<Complex64> = (0..nx).map(|i| Complex64::new(f0.values[i * nv + j], 0.0)).collect();
        fwd.process(&mut col);
        for ((a, c), &k) in acc.iter_mut().zip(&col).zip(&ks) {
            *a += c * Complex64::from_polar(w, -k * t * v);
        }
    }
    let mut grad: Vec<Complex64> = acc
        .iter()
        .zip(&ks)
        .enumerate()
        .map(|(i, (c, &k))| if nx % 2 == 0 && i == nx / 2 { Complex64::new(0.0, 0.0) } else { c * Complex64::new(0.0, k) })
        .collect();
    inv.process(&mut acc);
    inv.process(&mut grad);
    let scale = 1.0 / nx as f64;
    Ok(GridSnapshot {
        t,
        origin: -0.5 * f0.length,
        dx: f0.dx(),
        values: acc.iter().map(|c| c.re * scale).collect(),
        gradient: Some(grad.iter().map(|c| c.re * scale).collect()),
    })
}

/// Screened field of a density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FieldSnapshot {
    /// E(x) = e(r) x/r. `hessian` holds the radial and tangential
    /// eigenvalues (−Φ'', −Φ'/r) of ∇E.
    Radial { t: f64, radii: Vec<f64>, e: Vec<f64>, hessian: Option<Vec<(f64, f64)>> },
    /// Periodic d = 1 field with ∂_x E.
    Grid { t: f64, origin: f64, dx: f64, e: Vec<f64>, de: Vec<f64> },
}

impl FieldSnapshot {
    pub fn sup(&self) -> f64 {
        match self {
            Self::Radial { e, .. } | Self::Grid { e, .. } => e.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// sup |∇E| (operator norm), when available.
    pub fn grad_sup(&self) -> Option<f64> {
        match self {
            Self::Radial { hessian, .. } => hessian
                .as_ref()
                .map(|h| h.iter().fold(0.0f64, |m, (a, b)| m.max(a.abs()).max(b.abs()))),
            Self::Grid { de, .. } => Some(de.iter().fold(0.0, |m, v| m.max(v.abs()))),
        }
    }
}

struct ScreenedSymbol<'a, S: ?Sized>(&'a S);

impl<S: RadialSymbol + ?Sized> RadialSymbol for ScreenedSymbol<'_, S> {
    fn breakpoints(&self) -> std::borrow::Cow<'_, [f64]> {
        self.0.breakpoints()
    }

    fn value_on(&self, piece: usize, k: f64) -> f64 {
        self.0.value_on(piece, k) / (1.0 + k * k)
    }

    fn value(&self, k: f64) -> f64 {
        self.0.value(k) / (1.0 + k * k)
    }

    fn max_panel(&self) -> f64 {
        self.0.max_panel().min(1.0)
    }

    fn has_tail(&self) -> bool {
        self.0.has_tail()
    }
}

/// Field of a radial density given by its symbol ρ̂(k): E = −∇Φ with
/// Φ̂ = ρ̂/(1 + k²). With `hessian`, ∇E is assembled from
/// Φ'' = Φ − ρ − (d − 1)Φ'/r.
pub fn field_from_density<S: RadialSymbol + ?Sized>(
    d: usize,
    rho_hat: &S,
    radii: &[f64],
    t: f64,
    hessian: bool,
) -> Result<FieldSnapshot> {
    let phi = radial_inverse_fourier(d, &ScreenedSymbol(rho_hat), radii, t, InverseOptions::default().with_gradient())?;
    let dphi = phi.gradient.as_ref().expect("gradient requested");
    let e: Vec<f64> = dphi.iter().map(|g| -g).collect();
    let hessian = if hessian {
        let rho = radial_inverse_fourier(d, rho_hat, radii, t, InverseOptions::default())?;
        Some(
            radii
                .iter()
                .enumerate()
                .map(|(i, &r)| {
                    let tangential = dphi[i] / r;
                    let radial = phi.values[i] - rho.values[i] - (d as f64 - 1.0) * tangential;
                    (-radial, -tangential)
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(FieldSnapshot::Radial { t, radii: radii.to_vec(), e, hessian })
}

/// ‖∇Y‖_{L¹} for the screened kernel Y with Ŷ = 1/(1 + k²). By Young's
/// inequality it bounds ‖E‖_{L^p}/‖ρ‖_{L^p} for every p.
pub fn screened_gradient_l1(d: usize) -> Result<f64> {
    match d {
        1 => Ok(1.0),
        2 => Ok(0.5 * PI),
        3 => Ok(2.0),
        _ => Err(Error::Unsupported(format!("screened kernel in dimension {d}"))),
    }
}

/// ‖E‖_{L^p}/‖ρ‖_{L^p} for p = 1 and p = ∞.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RieszRatios {
    pub l1: f64,
    pub linf: f64,
}

/// Measured ratios of the field norms to the density norms for a radial
/// density with symbol `rho_hat`.
pub fn riesz_ratios<S: RadialSymbol + ?Sized>(d: usize, rho_hat: &S, radii: &[f64]) -> Result<RieszRatios> {
    let rho = norms(&radial_inverse_fourier(d, rho_hat, radii, 0.0, InverseOptions::default())?)?;
    let FieldSnapshot::Radial { e, .. } = field_from_density(d, rho_hat, radii, 0.0, false)? else {
        unreachable!("radial densities give radial fields")
    };
    let field = norms(&RadialSnapshot::new(d, 0.0, radii.to_vec(), e, None)?)?;
    if rho.l1 == 0.0 {
        return precondition("Riesz ratios need a nonzero density");
    }
    Ok(RieszRatios { l1: field.l1 / rho.l1, linf: field.linf / rho.linf })
}

/// Field of a periodic d = 1 density: Ê = −ik ρ̂/(1 + k²).
pub fn field_from_grid_density(rho: &GridSnapshot) -> Result<FieldSnapshot> {
    if rho.values.len() < 4 {
        return precondition("grid density needs at least four samples");
    }
    let length = rho.dx * rho.values.len() as f64;
    let e = periodic_multiplier(&rho.values, length, |k| Complex64::new(0.0, -k / (1.0 + k * k)));
    let de = periodic_multiplier(&rho.values, length, |k| Complex64::new(k * k / (1.0 + k * k), 0.0));
    Ok(FieldSnapshot::Grid { t: rho.t, origin: rho.origin, dx: rho.dx, e, de })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruct::{default_radii, fit_decay, geometric_radii, norms};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn source_at_time_zero_is_the_spatial_factor() {
        let f0 = PhaseDensity::gaussian(3, 1.0, 1.0, 1.0).unwrap();
        let radii = geometric_radii(1e-2, 8.0, 30);
        for method in [SourceMethod::Auto, SourceMethod::Quadrature] {
            let s = free_source(&f0, 0.0, &radii, method).unwrap();
            for (r, v) in s.radii.iter().zip(&s.values) {
                assert_relative_eq!(*v, (2.0 * PI).powf(-1.5) * (-0.5 * r * r).exp(), max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn gaussian_closed_form_matches_quadrature() {
        for d in 1..=3 {
            let f0 = PhaseDensity::gaussian(d, 0.7, 1.3, 0.8).unwrap();
            let radii = geometric_radii(1e-2, 40.0, 25);
            for t in [0.5, 3.0, 10.0] {
                let exact = free_source(&f0, t, &radii, SourceMethod::Auto).unwrap();
                let quad = free_source(&f0, t, &radii, SourceMethod::Quadrature).unwrap();
                let peak = exact.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let gpeak = exact.gradient.as_ref().unwrap().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for i in 0..radii.len() {
                    assert!((exact.values[i] - quad.values[i]).abs() < 1e-8 * peak, "d={d} t={t} i={i}");
                    let (ge, gq) = (exact.gradient.as_ref().unwrap()[i], quad.gradient.as_ref().unwrap()[i]);
                    assert!((ge - gq).abs() < 1e-8 * gpeak, "d={d} t={t} i={i}");
                }
            }
        }
    }

    #[test]
    fn dispersive_bounds_hold() {
        let f0 = PhaseDensity::gaussian(3, 1.0, 1.0, 1.0).unwrap();
        let n = f0.dispersive_norms();
        assert_relative_eq!(n.l1, 1.0, max_relative = 1e-10);
        let t = 10.0;
        let s = free_source(&f0, t, &default_radii(t), SourceMethod::Auto).unwrap();
        let sn = norms(&s).unwrap();
        assert!(sn.linf <= n.l1_linf / t.powi(3));
        assert_relative_eq!(sn.l1, n.l1, max_relative = 1e-6);
        let g = s.gradient_norms().unwrap();
        assert!(g.linf <= n.grad_v_l1_linf / t.powi(4));
        assert!(g.l1 <= n.grad_v_l1 / t);
    }

    #[test]
    fn free_transport_decay_exponents() {
        let f0 = PhaseDensity::gaussian(3, 1.0, 1.0, 1.0).unwrap();
        let times: Vec<f64> = (0..10).map(|i| 5.0 * 10f64.powf(i as f64 / 9.0)).collect();
        let (mut s, mut g) = (vec![], vec![]);
        for &t in &times {
            let snap = free_source(&f0, t, &default_radii(t), SourceMethod::Auto).unwrap();
            s.push((t, norms(&snap).unwrap().linf));
            g.push((t, snap.gradient_norms().unwrap().linf));
        }
        assert!(fit_decay("S", &s, -3.0, 0.05, false).unwrap().pass);
        assert!(fit_decay("grad S", &g, -4.0, 0.05, false).unwrap().pass);
    }

    #[test]
    fn custom_factor_uses_quadrature() {
        let d = 3;
        let norm = (2.0 * PI).powf(-1.5);
        let a = RadialFactor::custom(move |r| (norm * (-0.5 * r * r).exp(), -r * norm * (-0.5 * r * r).exp()), 1.0, 10.0)
            .unwrap();
        let f0 = PhaseDensity::SeparableRadial { dimension: d, a, b: RadialFactor::gaussian(1.0, 1.0).unwrap() };
        let g0 = PhaseDensity::gaussian(d, 1.0, 1.0, 1.0).unwrap();
        let radii = geometric_radii(0.1, 20.0, 10);
        let s = free_source(&f0, 2.0, &radii, SourceMethod::Auto).unwrap();
        let e = free_source(&g0, 2.0, &radii, SourceMethod::Auto).unwrap();
        for (x, y) in s.values.iter().zip(&e.values) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn grid_source_matches_closed_form() {
        let f0 = PhaseDensity::gaussian(1, 1.0, 1.0, 1.0).unwrap();
        let grid = PhaseGrid::sample(80.0, 256, 8.0, 161, |x, v| f0.eval(&[x], &[v]).unwrap()).unwrap();
        let t = 4.0;
        let s = free_source_grid(&grid, t).unwrap();
        let s2 = 1.0 + t * t;
        for (i, (v, g)) in s.values.iter().zip(s.gradient.as_ref().unwrap()).enumerate() {
            let x = s.origin + s.dx * i as f64;
            let exact = (2.0 * PI * s2).powf(-0.5) * (-0.5 * x * x / s2).exp();
            assert!((v - exact).abs() < 1e-10, "x={x}");
            assert!((g + x / s2 * exact).abs() < 1e-10, "x={x}");
        }
        assert_relative_eq!(s.l1(), 1.0, max_relative = 1e-9);
        let n = PhaseDensity::Grid(grid).dispersive_norms();
        assert!(s.linf() <= n.l1_linf / t * (1.0 + 1e-6));
    }

    #[test]
    fn zero_density_has_zero_field() {
        let zero = AnalyticSymbol::truncated(|_| 0.0, 1.0, 1.0);
        let f = field_from_density(3, &zero, &geometric_radii(1e-2, 10.0, 16), 0.0, true).unwrap();
        assert_eq!(f.sup(), 0.0);
        assert_eq!(f.grad_sup(), Some(0.0));
        let g = GridSnapshot { t: 0.0, origin: 0.0, dx: 0.1, values: vec![0.0; 64], gradient: None };
        assert_eq!(field_from_grid_density(&g).unwrap().sup(), 0.0);
    }

    #[test]
    fn narrow_density_gives_screened_green_field() {
        let w: f64 = 0.05;
        let rho = AnalyticSymbol::truncated(move |k: f64| (-0.5 * w * w * k * k).exp(), 10.0 / w, 1.0);
        let radii = geometric_radii(1.0, 8.0, 12);
        let FieldSnapshot::Radial { e, .. } = field_from_density(3, &rho, &radii, 0.0, false).unwrap() else {
            unreachable!()
        };
        for (r, e) in radii.iter().zip(&e) {
            // −d/dr of e^{−r}/(4πr), smeared by the Gaussian width.
            let exact = (-r).exp() / (4.0 * PI * r) * (1.0 + 1.0 / r);
            assert_relative_eq!(*e, exact, max_relative = 2.0 * w * w);
        }
    }

    #[test]
    fn periodic_field_solves_the_screened_equation() {
        let n = 128;
        let length = 2.0 * PI * 4.0;
        let dx = length / n as f64;
        let k = 2.0 * PI * 3.0 / length;
        let rho = GridSnapshot {
            t: 0.0,
            origin: 0.0,
            dx,
            values: (0..n).map(|i| (k * dx * i as f64).cos()).collect(),
            gradient: None,
        };
        let FieldSnapshot::Grid { e, de, .. } = field_from_grid_density(&rho).unwrap() else { unreachable!() };
        for i in 0..n {
            let x = dx * i as f64;
            assert!((e[i] - k / (1.0 + k * k) * (k * x).sin()).abs() < 1e-12);
            assert!((de[i] - k * k / (1.0 + k * k) * (k * x).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn field_bound_is_uniform_over_random_densities() {
        // sup|e| ≤ C sup|ρ| with C = ‖∇Y‖_{L¹} for the screened kernel Y;
        // in d = 3, ∫ |∂_r(e^{−r}/(4πr))| 4πr² dr = 2.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let radii = geometric_radii(1e-2, 60.0, 400);
        let mut ratios = vec![];
        for _ in 0..20 {
            let terms: Vec<(f64, f64)> = (0..3).map(|_| (rng.gen_range(0.1..1.0), rng.gen_range(0.3..3.0))).collect();
            let t2 = terms.clone();
            let rho_hat = AnalyticSymbol::truncated(
                move |k: f64| t2.iter().map(|(c, s)| c * (-0.5 * s * s * k * k).exp()).sum(),
                30.0,
                0.1,
            );
            let rho = radial_inverse_fourier(3, &rho_hat, &radii, 0.0, InverseOptions::default()).unwrap();
            let field = field_from_density(3, &rho_hat, &radii, 0.0, false).unwrap();
            ratios.push(field.sup() / norms(&rho).unwrap().linf);
        }
        assert!(ratios.iter().all(|&r| r > 0.0 && r <= 2.0), "{ratios:?}");
    }

    #[test]
    fn gradient_of_field_is_controlled_by_gradient_of_density() {
        let rho_hat = AnalyticSymbol::truncated(|k: f64| (-0.5 * k * k).exp(), 10.0, 0.25);
        let radii = geometric_radii(1e-2, 30.0, 300);
        let f = field_from_density(3, &rho_hat, &radii, 0.0, true).unwrap();
        let rho = radial_inverse_fourier(3, &rho_hat, &radii, 0.0, InverseOptions::default().with_gradient()).unwrap();
        let ratio = f.grad_sup().unwrap() / rho.gradient_norms().unwrap().linf;
        assert!(ratio > 0.0 && ratio < 2.0, "{ratio}");
    }

    #[test]
    fn narrow_density_saturates_the_riesz_constant() {
        for (d, sigma) in [(1, 0.01), (3, 0.01)] {
            let rho_hat = AnalyticSymbol::truncated(move |k: f64| (-0.5 * sigma * sigma * k * k).exp(), 9.0 / sigma, 0.2 / sigma);
            let r = riesz_ratios(d, &rho_hat, &geometric_radii(1e-4, 60.0, 1500)).unwrap();
            let c = screened_gradient_l1(d).unwrap();
            assert!(r.l1 <= c * (1.0 + 1e-6) && r.l1 > 0.97 * c, "d={d} {r:?}");
        }
    }

    #[test]
    fn source_modes_match_symbol() {
        let f0 = PhaseDensity::gaussian(3, 2.0, 1.0, 0.5).unwrap();
        let grid = TimeGrid::new(4.0, 8).unwrap();
        let xi = [0.1, 0.7, 2.0];
        let modes = f0.source_modes(grid, &xi).unwrap();
        for (m, &k) in xi.iter().enumerate() {
            for step in 0..grid.len() {
                let sym = f0.source_symbol(grid.node(step)).unwrap();
                assert_relative_eq!(modes.row(m)[step].re, sym.value(k), max_relative = 1e-14);
            }
        }
    }
}
