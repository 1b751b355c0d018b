//! Kernel symbols of the linearized density equation and the Penrose margin.
//!
//! Along a ray the symbol integrand is g(s) = iξ·∇μ̂(sξ) = −s|ξ|² μ̂(sξ), so
//! K̂(t,ξ) = g(t)/(1+|ξ|²) and K̃(τ−iγ, ξ) = ∫₀^∞ e^{−(γ+iτ)s} g(s) ds/(1+|ξ|²).
//! For a Gaussian component of temperature θ and drift a e₁ the Laplace
//! integral collapses to the universal function
//! Λ(ζ) = ∫₀^∞ u e^{−ζu−u²/2} du evaluated at ζ = (z + i a ξ₁)/(|ξ|√θ).

use crate::equilibria::EquilibriumProfile;
use crate::error::{precondition, Error, Result};
use crate::quad::GaussLegendre;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

const ASYMPTOTIC_RADIUS: f64 = 9.0;
const LAMBDA_CUTOFF: f64 = 10.0;
const MAX_PANELS: usize = 500_000;

/// A point (γ, τ, ξ) of the closed lower half-plane in Laplace–Fourier variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolPoint {
    pub gamma: f64,
    pub tau: f64,
    pub xi: Vec<f64>,
}

impl SymbolPoint {
    pub fn new(gamma: f64, tau: f64, xi: Vec<f64>) -> Self {
        Self { gamma, tau, xi }
    }

    pub fn xi_norm(&self) -> f64 {
        norm(&self.xi)
    }
}

fn gl16() -> &'static GaussLegendre<f64> {
    static RULE: OnceLock<GaussLegendre<f64>> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(16))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Λ(ζ) = ∫₀^∞ u e^{−ζu−u²/2} du for Re ζ ≥ 0.
pub fn lambda(zeta: Complex64) -> Complex64 {
    if zeta.norm() >= ASYMPTOTIC_RADIUS {
        if let Some(v) = lambda_asymptotic(zeta) {
            return v;
        }
    }
    lambda_quadrature(zeta, 1)
}

/// Watson expansion Λ(ζ) ~ Σ (−1)ⁿ (2n+1)!! / ζ^{2n+2}, truncated at the
/// smallest term.
fn lambda_asymptotic(zeta: Complex64) -> Option<Complex64> {
    let inv2 = (zeta * zeta).inv();
    let mut term = inv2;
    let mut sum = term;
    for n in 0..200 {
        let next = -term * inv2 * (2 * n + 3) as f64;
        if next.norm() >= term.norm() {
            return (term.norm() <= 1e-13 * sum.norm()).then_some(sum);
        }
        sum += next;
        if next.norm() <= 1e-17 * sum.norm() {
            return Some(sum);
        }
        term = next;
    }
    None
}

/// Panel quadrature of Λ with panels of width π/max(|Im ζ|, 1), divided by
/// `refine`.
pub fn lambda_quadrature(zeta: Complex64, refine: usize) -> Complex64 {
    let width = PI / zeta.im.abs().max(1.0) / refine.max(1) as f64;
    let panels = (LAMBDA_CUTOFF / width).ceil() as usize;
    let h = LAMBDA_CUTOFF / panels as f64;
    let gl = gl16();
    let mut acc = Complex64::new(0.0, 0.0);
    for p in 0..panels {
        let a = p as f64 * h;
        for (u, w) in gl.mapped(a, a + h) {
            acc += (-zeta * u - 0.5 * u * u).exp() * (u * w);
        }
    }
    acc
}

/// Oscillatory Laplace quadrature ∫₀^∞ e^{−zs} f(s) ds.
///
/// `scale` is the envelope length of `f` and `freq` its internal oscillation
/// rate. Panels are marched until the integrand falls below 1e-17 of its
/// running maximum past four envelope lengths.
pub fn laplace_quadrature<F>(z: Complex64, f: F, scale: f64, freq: f64, refine: usize) -> Result<Complex64>
where
    F: Fn(f64) -> Complex64,
{
    if !(scale > 0.0 && scale.is_finite()) {
        return precondition("envelope scale must be positive");
    }
    let width = (PI / (z.im.abs() + freq).max(1.0)).min(0.5 * scale) / refine.max(1) as f64;
    let gl = gl16();
    let mut acc = Complex64::new(0.0, 0.0);
    let mut running_max = 0.0f64;
    let mut quiet = 0;
    for p in 0..MAX_PANELS {
        let a = p as f64 * width;
        let mut panel_max = 0.0f64;
        for (s, w) in gl.mapped(a, a + width) {
            let v = (-z * s).exp() * f(s);
            panel_max = panel_max.max(v.norm());
            acc += v * w;
        }
        running_max = running_max.max(panel_max);
        if a + width >= 4.0 * scale && panel_max <= 1e-17 * running_max.max(1e-300) {
            quiet += 1;
            if quiet >= 2 {
                return Ok(acc);
            }
        } else {
            quiet = 0;
        }
    }
    Err(Error::Accuracy {
        what: "Laplace quadrature did not reach its envelope cutoff".into(),
        achieved: running_max,
        wanted: 1e-17,
    })
}

/// g(s) = iξ·∇μ̂(sξ) and its second derivative along the ray.
fn ray_integrand(profile: &EquilibriumProfile, xi: &[f64], s: f64) -> (Complex64, Complex64) {
    let k2: f64 = xi.iter().map(|x| x * x).sum();
    let jet = profile.ray_jet(xi, s);
    (-k2 * s * jet.value, -k2 * (2.0 * jet.d1 + s * jet.d2))
}

/// Envelope length and internal oscillation rate of g along the ray ξ.
fn ray_scales(profile: &EquilibriumProfile, xi: &[f64]) -> (f64, f64) {
    let k = norm(xi);
    match profile.components() {
        Some(c) if !c.is_empty() => {
            let st = c.iter().map(|c| c.theta.sqrt()).fold(f64::INFINITY, f64::min);
            let freq = c.iter().map(|c| (c.shift * xi[0]).abs()).fold(0.0, f64::max);
            (10.0 / (k * st), freq)
        }
        Some(_) => (10.0 / k, 0.0),
        None => (10.0 / (k * profile.thermal_speed()), 0.0),
    }
}

/// ∫₀^∞ e^{−zs} g(s) ds.
fn laplace_g(profile: &EquilibriumProfile, z: Complex64, xi: &[f64]) -> Result<Complex64> {
    let k = norm(xi);
    if k == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    match profile.components() {
        Some(comps) => Ok(comps
            .iter()
            .map(|c| {
                let zeta = (z + Complex64::new(0.0, c.shift * xi[0])) / (k * c.theta.sqrt());
                -(c.weight / c.theta) * lambda(zeta)
            })
            .sum()),
        None => laplace_g_quadrature(profile, z, xi, 1),
    }
}

/// Direct panel quadrature of ∫₀^∞ e^{−zs} g(s) ds, valid for every profile.
pub fn laplace_g_quadrature(
    profile: &EquilibriumProfile,
    z: Complex64,
    xi: &[f64],
    refine: usize,
) -> Result<Complex64> {
    if norm(xi) == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let (scale, freq) = ray_scales(profile, xi);
    laplace_quadrature(z, |s| ray_integrand(profile, xi, s).0, scale, freq, refine)
}

/// Spatial Fourier transform of the kernel at time t: (iξ/(1+|ξ|²))·∇μ̂(tξ).
pub fn khat_time(profile: &EquilibriumProfile, t: f64, xi: &[f64]) -> Complex64 {
    assert!(t >= 0.0, "kernel time must be nonnegative");
    let k2: f64 = xi.iter().map(|x| x * x).sum();
    -(t * k2 / (1.0 + k2)) * profile.fourier_mu(&xi.iter().map(|x| t * x).collect::<Vec<_>>())
}

/// Radial kernel value −t k² m(tk)/(1+k²).
pub fn khat_radial(profile: &EquilibriumProfile, t: f64, k: f64) -> Result<f64> {
    Ok(-t * k * k * profile.fourier_radial(t * k)? / (1.0 + k * k))
}

/// K̃(τ−iγ, ξ).
pub fn ktilde(profile: &EquilibriumProfile, p: &SymbolPoint) -> Result<Complex64> {
    if !(p.gamma >= 0.0) {
        return precondition("Laplace abscissa gamma must be nonnegative");
    }
    let k2: f64 = p.xi.iter().map(|x| x * x).sum();
    Ok(laplace_g(profile, Complex64::new(p.gamma, p.tau), &p.xi)? / (1.0 + k2))
}

/// K̃^{h,1}(τ, ξ) = ∫₀^∞ e^{−iτt} iξ·∇μ̂(tξ) dt, homogeneous of degree zero.
pub fn k_h1(profile: &EquilibriumProfile, tau: f64, xi: &[f64]) -> Result<Complex64> {
    if tau == 0.0 && norm(xi) == 0.0 {
        return precondition("K^{h,1} is undefined at the origin");
    }
    laplace_g(profile, Complex64::new(0.0, tau), xi)
}

/// Pieces of the second-order expansion of K̃^{h,1}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct H2Decomposition {
    /// 𝒫₂(ξ) = iξ·(D_ξ∇μ̂)(0):ξ.
    pub p2: Complex64,
    /// (ξ^{⊗2}/(iτ)²) : K̃^{h,2}(τ, ξ).
    pub contraction: Complex64,
    pub k_h1: Complex64,
    /// |𝒫₂/(iτ)² + contraction − K̃^{h,1}|.
    pub identity_residual: f64,
    /// Residual of the full expansion of K̃ through K̃^{h,1}, 𝒫₂ and K̃^{h,2}.
    pub expansion_residual: f64,
}

pub fn k_h2_decomposition(profile: &EquilibriumProfile, tau: f64, xi: &[f64]) -> Result<H2Decomposition> {
    if tau == 0.0 {
        return precondition("the K^{h,2} expansion divides by tau; tau = 0 is excluded");
    }
    let k2: f64 = xi.iter().map(|x| x * x).sum();
    let zero = Complex64::new(0.0, 0.0);
    let itau2 = Complex64::new(-tau * tau, 0.0);
    let p2 = Complex64::new(-k2 * profile.mass(), 0.0);
    let remainder = if k2 == 0.0 {
        zero
    } else {
        let (scale, freq) = ray_scales(profile, xi);
        laplace_quadrature(
            Complex64::new(0.0, tau),
            |s| ray_integrand(profile, xi, s).1,
            scale,
            freq,
            1,
        )?
    };
    let contraction = remainder / itau2;
    let kh1 = k_h1(profile, tau, xi)?;
    let kt = kh1 / (1.0 + k2);
    let full = (kh1 - p2 / (1.0 + k2) - (itau2 * contraction) / (1.0 + k2)) / (1.0 + k2 + tau * tau);
    Ok(H2Decomposition {
        p2,
        contraction,
        k_h1: kh1,
        identity_residual: (p2 / itau2 + contraction - kh1).norm(),
        expansion_residual: (full - kt).norm(),
    })
}

/// Scan ranges for the Penrose margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenroseGrid {
    pub gamma_max: f64,
    pub tau_max: f64,
    pub xi_max: f64,
    /// Number of |ξ| samples; τ and γ use n/2 geometric samples per side.
    pub n: usize,
    /// Number of local refinement passes around the argmin.
    pub refine: usize,
    /// Number of directions cos∠(ξ, e₁) ∈ [0, 1] for non-radial profiles.
    pub directions: usize,
    pub gamma_min: f64,
}

impl PenroseGrid {
    pub fn for_profile(profile: &EquilibriumProfile) -> Self {
        let scale = 50.0 / profile.thermal_speed().max(1.0);
        Self {
            gamma_max: scale,
            tau_max: scale,
            xi_max: 20.0,
            n: 32,
            refine: 2,
            directions: if profile.is_radial() { 1 } else { 5 },
            gamma_min: 0.0,
        }
    }

    pub fn doubled(&self) -> Self {
        Self {
            n: 2 * self.n,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.gamma_min < 0.0 {
            return precondition("Penrose scan needs gamma_min >= 0");
        }
        if !(self.gamma_max > 0.0 && self.tau_max > 0.0 && self.xi_max > 0.0) {
            return precondition("Penrose scan ranges must be positive");
        }
        if self.n < 4 || self.directions == 0 {
            return precondition("Penrose scan needs n >= 4 and at least one direction");
        }
        Ok(())
    }

    fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        let r = (hi / lo).ln();
        (0..n)
            .map(|i| lo * (r * i as f64 / (n - 1).max(1) as f64).exp())
            .collect()
    }

    fn xi_axis(&self) -> Vec<f64> {
        Self::geometric(self.xi_max * 1e-3, self.xi_max, self.n)
    }

    fn tau_axis(&self) -> Vec<f64> {
        let pos = Self::geometric(self.tau_max * 1e-4, self.tau_max, (self.n / 2).max(2));
        let mut t: Vec<f64> = pos.iter().rev().map(|x| -x).collect();
        t.push(0.0);
        t.extend(pos);
        t
    }

    fn gamma_axis(&self) -> Vec<f64> {
        let mut g = vec![self.gamma_min];
        let lo = (self.gamma_max * 1e-4).max(self.gamma_min);
        g.extend(
            Self::geometric(lo, self.gamma_max, (self.n / 2).max(2))
                .into_iter()
                .filter(|&x| x > self.gamma_min),
        );
        g
    }
}

/// Numeric majorants of |K̃| outside the scanned box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCertificate {
    /// sup |K̃| for |ξ| ≥ ξ_max, from ∫|g| / (1+ξ_max²).
    pub xi_bound: f64,
    /// sup |K̃| for γ ≥ γ_max, from max|g| / ((1+|ξ|²) γ_max).
    pub gamma_bound: f64,
    /// sup |K̃| for |τ| ≥ τ_max, from (|g′(0)| + ∫|g″|) / ((1+|ξ|²) τ_max²).
    pub tau_bound: f64,
    pub threshold: f64,
    /// Relative size of the factor 1/(1+|ξ|²) neglected below the smallest
    /// scanned |ξ| when appealing to homogeneity.
    pub small_xi_slack: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenroseScan {
    pub grid: PenroseGrid,
    pub margin: f64,
    pub argmin: SymbolPoint,
    /// (level, margin) after the coarse scan and each refinement pass.
    pub trace: Vec<(usize, f64)>,
    pub tail_certificate: TailCertificate,
    /// A point on γ = 0 where the Nyquist curve crosses the real axis to the
    /// right of 1, which signals an unstable root.
    pub violation: Option<SymbolPoint>,
    pub points_evaluated: usize,
}

impl PenroseScan {
    pub fn verdict(&self) -> &'static str {
        if self.violation.is_some() || self.margin < 0.05 {
            "Penrose violated / marginal"
        } else {
            "Penrose stable"
        }
    }
}

fn direction_vector(d: usize, k: f64, cos: f64) -> Vec<f64> {
    let mut xi = vec![0.0; d];
    xi[0] = k * cos;
    if d > 1 {
        xi[1] = k * (1.0 - cos * cos).max(0.0).sqrt();
    }
    xi
}

fn directions(profile: &EquilibriumProfile, grid: &PenroseGrid) -> Vec<f64> {
    if profile.is_radial() || profile.dimension() == 1 || grid.directions == 1 {
        vec![1.0]
    } else {
        (0..grid.directions)
            .map(|j| 1.0 - j as f64 / (grid.directions - 1) as f64)
            .collect()
    }
}

/// min |1 − K̃| over the scan box, with local refinement and a tail certificate.
pub fn penrose_margin(profile: &EquilibriumProfile, grid: &PenroseGrid) -> Result<PenroseScan> {
    grid.validate()?;
    let d = profile.dimension();
    let ks = grid.xi_axis();
    let taus = grid.tau_axis();
    let gammas = grid.gamma_axis();
    let dirs = directions(profile, grid);

    let mut points = Vec::with_capacity(ks.len() * taus.len() * gammas.len() * dirs.len());
    for (di, _) in dirs.iter().enumerate() {
        for ki in 0..ks.len() {
            for gi in 0..gammas.len() {
                for ti in 0..taus.len() {
                    points.push((di, ki, gi, ti));
                }
            }
        }
    }
    let values: Vec<Complex64> = points
        .par_iter()
        .map(|&(di, ki, gi, ti)| {
            let xi = direction_vector(d, ks[ki], dirs[di]);
            ktilde(profile, &SymbolPoint::new(gammas[gi], taus[ti], xi))
                .map(|k| Complex64::new(1.0, 0.0) - k)
        })
        .collect::<Result<_>>()?;
    let mut evaluated = values.len();

    // Deterministic reduction: smallest value, ties to the first index.
    let (best, margin) = argmin(values.iter().map(|v| v.norm()));
    let (bd, bk, bg, bt) = points[best];
    let mut trace = vec![(0, margin)];

    // Nyquist crossings along γ = 0.
    let mut violation = None;
    'outer: for (di, &cos) in dirs.iter().enumerate() {
        for (ki, &k) in ks.iter().enumerate() {
            let row = |ti: usize| values[((di * ks.len() + ki) * gammas.len()) * taus.len() + ti];
            if gammas[0] != 0.0 {
                break 'outer;
            }
            for ti in 0..taus.len() - 1 {
                let (a, b) = (row(ti), row(ti + 1));
                if a.im.signum() != b.im.signum() && (a.re < 0.0 || b.re < 0.0) {
                    let tau = if (b.im - a.im).abs() > 0.0 {
                        taus[ti] - a.im * (taus[ti + 1] - taus[ti]) / (b.im - a.im)
                    } else {
                        taus[ti]
                    };
                    violation = Some(SymbolPoint::new(0.0, tau, direction_vector(d, k, cos)));
                    break 'outer;
                }
            }
        }
    }

    let mut best_point = (gammas[bg], taus[bt], ks[bk]);
    let mut best_margin = margin;
    let mut spans = (
        neighbour_span(&gammas, bg),
        neighbour_span(&taus, bt),
        neighbour_span(&ks, bk),
    );
    let cos = dirs[bd];
    for level in 1..=grid.refine {
        let g_axis = linspace(spans.0 .0.max(grid.gamma_min), spans.0 .1.max(grid.gamma_min), 5);
        let t_axis = linspace(spans.1 .0, spans.1 .1, 5);
        let k_axis = linspace(spans.2 .0.max(ks[0]), spans.2 .1, 5);
        let local: Vec<(f64, f64, f64)> = g_axis
            .iter()
            .flat_map(|&g| {
                let t_axis = &t_axis;
                k_axis
                    .iter()
                    .flat_map(move |&k| t_axis.iter().map(move |&t| (g, t, k)))
            })
            .collect();
        let vals: Vec<f64> = local
            .par_iter()
            .map(|&(g, t, k)| {
                ktilde(profile, &SymbolPoint::new(g, t, direction_vector(d, k, cos)))
                    .map(|v| (Complex64::new(1.0, 0.0) - v).norm())
            })
            .collect::<Result<_>>()?;
        evaluated += vals.len();
        let (i, m) = argmin(vals.iter().copied());
        if m < best_margin {
            best_margin = m;
            best_point = local[i];
        }
        let step = |axis: &[f64]| if axis.len() > 1 { axis[1] - axis[0] } else { 0.0 };
        let (sg, st, sk) = (step(&g_axis), step(&t_axis), step(&k_axis));
        spans = (
            (best_point.0 - sg, best_point.0 + sg),
            (best_point.1 - st, best_point.1 + st),
            (best_point.2 - sk, best_point.2 + sk),
        );
        trace.push((level, best_margin));
    }

    let tail_certificate = tail_certificate(profile, grid, &ks, &dirs)?;
    Ok(PenroseScan {
        grid: grid.clone(),
        margin: best_margin,
        argmin: SymbolPoint::new(best_point.0, best_point.1, direction_vector(d, best_point.2, cos)),
        trace,
        tail_certificate,
        violation,
        points_evaluated: evaluated,
    })
}

fn argmin(values: impl Iterator<Item = f64>) -> (usize, f64) {
    values
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, v)| if v < bv { (i, v) } else { (bi, bv) })
}

fn neighbour_span(axis: &[f64], i: usize) -> (f64, f64) {
    let lo = if i > 0 { axis[i - 1] } else { axis[i] };
    let hi = if i + 1 < axis.len() { axis[i + 1] } else { axis[i] };
    (lo, hi)
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if (b - a).abs() == 0.0 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// ∫|g|, max|g| and ∫|g″| along the ray ξ by panel quadrature.
fn ray_magnitudes(profile: &EquilibriumProfile, xi: &[f64]) -> (f64, f64, f64) {
    let (scale, freq) = ray_scales(profile, xi);
    let width = (PI / freq.max(1.0)).min(0.5 * scale) / 2.0;
    let panels = ((8.0 * scale) / width).ceil() as usize;
    let gl = gl16();
    let (mut i0, mut m0, mut i2) = (0.0, 0.0f64, 0.0);
    for p in 0..panels {
        let a = p as f64 * width;
        for (s, w) in gl.mapped(a, a + width) {
            let (g, g2) = ray_integrand(profile, xi, s);
            i0 += w * g.norm();
            m0 = m0.max(g.norm());
            i2 += w * g2.norm();
        }
    }
    (i0, m0, i2)
}

fn tail_certificate(
    profile: &EquilibriumProfile,
    grid: &PenroseGrid,
    ks: &[f64],
    dirs: &[f64],
) -> Result<TailCertificate> {
    let d = profile.dimension();
    if profile.components().is_some_and(|c| c.is_empty()) {
        return Ok(TailCertificate {
            xi_bound: 0.0,
            gamma_bound: 0.0,
            tau_bound: 0.0,
            threshold: 0.5,
            small_xi_slack: ks[0] * ks[0],
            certified: true,
        });
    }
    let mut probe: Vec<f64> = ks.to_vec();
    probe.extend([grid.xi_max * 2.0, grid.xi_max * 10.0]);
    let mut xi_bound = 0.0f64;
    let mut gamma_bound = 0.0f64;
    let mut tau_bound = 0.0f64;
    for &cos in dirs {
        for &k in &probe {
            let xi = direction_vector(d, k, cos);
            let (i0, m0, i2) = ray_magnitudes(profile, &xi);
            let screen = 1.0 + k * k;
            if k >= grid.xi_max {
                xi_bound = xi_bound.max(i0 / screen);
            }
            gamma_bound = gamma_bound.max(m0 / (screen * grid.gamma_max));
            let g1 = k * k * profile.mass().abs();
            tau_bound = tau_bound.max((g1 + i2) / (screen * grid.tau_max * grid.tau_max));
        }
    }
    let threshold = 0.5;
    let k_min = ks[0];
    Ok(TailCertificate {
        xi_bound,
        gamma_bound,
        tau_bound,
        threshold,
        small_xi_slack: k_min * k_min,
        certified: xi_bound < threshold && gamma_bound < threshold && tau_bound < threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn maxwell3() -> EquilibriumProfile {
        EquilibriumProfile::maxwellian(3, 1.0).unwrap()
    }

    #[test]
    fn lambda_matches_real_closed_form() {
        // Λ(x) = 1 − x √(π/2) e^{x²/2} erfc(x/√2) for real x ≥ 0.
        for x in [0.0, 0.3, 1.0, 4.0, 8.5, 12.0, 30.0] {
            let exact = 1.0
                - x * (PI / 2.0).sqrt() * (x * x / 2.0).exp() * libm::erfc(x / 2f64.sqrt());
            let got = lambda(Complex64::new(x, 0.0));
            assert_relative_eq!(got.re, exact, epsilon = 1e-12);
            assert!(got.im.abs() < 1e-15);
        }
    }

    #[test]
    fn lambda_asymptotic_agrees_with_quadrature() {
        for z in [
            Complex64::new(0.0, 9.5),
            Complex64::new(3.0, 9.0),
            Complex64::new(9.2, 0.4),
            Complex64::new(0.0, -15.0),
        ] {
            let a = lambda_asymptotic(z).unwrap();
            let q = lambda_quadrature(z, 4);
            assert!((a - q).norm() < 1e-13, "{z}: {a} vs {q}");
        }
    }

    #[test]
    fn khat_closed_form_values() {
        let p = maxwell3();
        assert_eq!(khat_time(&p, 0.0, &[1.0, 0.0, 0.0]).norm(), 0.0);
        let v = khat_time(&p, 1.0, &[1.0, 0.0, 0.0]);
        assert_relative_eq!(v.re, -0.5 * (-0.5f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(khat_radial(&p, 1.0, 1.0).unwrap(), v.re, max_relative = 1e-14);
    }

    #[test]
    fn ktilde_at_origin_of_laplace_variables() {
        let p = maxwell3();
        let v = ktilde(&p, &SymbolPoint::new(0.0, 0.0, vec![1.0, 0.0, 0.0])).unwrap();
        assert_relative_eq!(v.re, -0.5, epsilon = 1e-12);
        assert!(v.im.abs() < 1e-14);
        assert!(ktilde(&p, &SymbolPoint::new(-1.0, 0.0, vec![1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn mixture_route_matches_direct_quadrature() {
        let profiles = [
            maxwell3(),
            EquilibriumProfile::maxwellian(3, 0.4).unwrap(),
            EquilibriumProfile::bi_maxwellian(3, 1.5, 0.3, 0.2, 0.5).unwrap(),
        ];
        for p in &profiles {
            for (g, t, xi) in [
                (0.0, 0.7, vec![0.5, 0.1, 0.0]),
                (0.3, -2.0, vec![1.2, 0.0, 0.4]),
                (2.0, 5.0, vec![0.05, 0.02, 0.0]),
                (0.0, 0.01, vec![3.0, 0.0, 0.0]),
            ] {
                let z = Complex64::new(g, t);
                let fast = laplace_g(p, z, &xi).unwrap();
                let slow = laplace_g_quadrature(p, z, &xi, 2).unwrap();
                assert!((fast - slow).norm() < 1e-10, "{fast} vs {slow}");
            }
        }
    }

    #[test]
    fn vacuum_margin_is_one() {
        let p = EquilibriumProfile::vacuum(3).unwrap();
        let mut grid = PenroseGrid::for_profile(&p);
        grid.n = 8;
        let scan = penrose_margin(&p, &grid).unwrap();
        assert_eq!(scan.margin, 1.0);
        assert!(scan.violation.is_none());
    }

    #[test]
    fn negative_gamma_min_is_rejected() {
        let p = maxwell3();
        let mut grid = PenroseGrid::for_profile(&p);
        grid.gamma_min = -0.1;
        assert!(penrose_margin(&p, &grid).is_err());
    }

    #[test]
    fn p2_for_maxwellian() {
        let p = maxwell3();
        let dec = k_h2_decomposition(&p, 0.8, &[1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(dec.p2.re, -1.0, max_relative = 1e-14);
        assert!(dec.identity_residual < 1e-9);
        assert!(dec.expansion_residual < 1e-9);
        assert!(k_h2_decomposition(&p, 0.0, &[1.0, 0.0, 0.0]).is_err());
    }
}
