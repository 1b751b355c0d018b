//! Physical-space reconstruction of radial symbols.
//!
//! A radial symbol f̂(|ξ|) on ℝ^d is inverted through
//! g(r) = c_d ∫₀^∞ f̂(k) k^{d-1} j_d(kr) dk with c_d = ω_d/(2π)^d, where j_d is
//! the normalised radial kernel of [`radial_kernel`]. Integration runs over
//! Gauss-Legendre panels that never straddle a breakpoint of the symbol and
//! never exceed half an oscillation of the kernel.

pub mod fit;
pub mod lp;

use std::borrow::Cow;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibria::{radial_kernel, sphere_area};
use crate::error::{precondition, Error, Result};
use crate::interp::CubicSpline;
use crate::quad::GaussLegendre;
use crate::volterra::{geometric_modes, ModeSeries, SeriesKind};

pub use fit::{fit_decay, DecayReport};
pub use lp::{bernstein_ratios, gq_block_norms, lp_block, lp_bump, lp_partition_sum, LpDomain, LpNormalization};

/// A radial function of the frequency magnitude, piecewise smooth between
/// its breakpoints.
pub trait RadialSymbol: Sync {
    /// Sorted breakpoints `0 = k_0 < ... < k_n`; the symbol is negligible
    /// past `k_n` unless [`RadialSymbol::has_tail`] says otherwise.
    fn breakpoints(&self) -> Cow<'_, [f64]>;

    /// Value at `k` knowing that `k` lies on piece `piece`.
    fn value_on(&self, piece: usize, k: f64) -> f64;

    /// Value anywhere on `[0, ∞)`.
    fn value(&self, k: f64) -> f64;

    /// Widest panel that still resolves the symbol itself.
    fn max_panel(&self) -> f64 {
        f64::INFINITY
    }

    /// True when the symbol decays too slowly to be truncated; the part past
    /// the last breakpoint is then handled by an asymptotic expansion.
    fn has_tail(&self) -> bool {
        false
    }
}

/// Cubic-spline interpolant of symbol samples.
#[derive(Debug, Clone)]
pub struct SampledSymbol {
    spline: CubicSpline<f64>,
    cut: usize,
}

impl SampledSymbol {
    /// Builds the interpolant from samples at increasing `k ≥ 0`. A knot at
    /// `k = 0` is required so that the low-frequency end is pinned.
    pub fn new(k: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if k.first().copied() != Some(0.0) {
            return precondition("sampled symbol must include k = 0");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return precondition("sampled symbol has non-finite values");
        }
        let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // Drop the trailing knots where the symbol has died out.
        let last = values.iter().rposition(|v| v.abs() > 1e-17 * peak).unwrap_or(0);
        let cut = (last + 1).min(k.len() - 1).max(1);
        let spline = CubicSpline::new(k, values)?;
        Ok(Self { spline, cut })
    }

    pub fn spline(&self) -> &CubicSpline<f64> {
        &self.spline
    }
}

impl RadialSymbol for SampledSymbol {
    fn breakpoints(&self) -> Cow<'_, [f64]> {
        Cow::Borrowed(&self.spline.knots()[..=self.cut])
    }

    fn value_on(&self, piece: usize, k: f64) -> f64 {
        self.spline.eval_segment(piece, k).0
    }

    fn value(&self, k: f64) -> f64 {
        if k > self.spline.knots()[self.cut] {
            0.0
        } else {
            self.spline.eval_unchecked(k).0
        }
    }
}

/// A symbol given by a closed form.
pub struct AnalyticSymbol<F> {
    f: F,
    cutoff: f64,
    panel: f64,
    tail: bool,
}

impl<F: Fn(f64) -> f64 + Sync> AnalyticSymbol<F> {
    /// Symbol negligible past `cutoff`, smooth on panels of width `panel`.
    pub fn truncated(f: F, cutoff: f64, panel: f64) -> Self {
        Self { f, cutoff, panel, tail: false }
    }

    /// Slowly decaying symbol: the integral past `cutoff` (or past 64/r when
    /// that is larger) is taken from its asymptotic expansion.
    pub fn with_tail(f: F, cutoff: f64, panel: f64) -> Self {
        Self { f, cutoff, panel, tail: true }
    }
}

impl<F: Fn(f64) -> f64 + Sync> RadialSymbol for AnalyticSymbol<F> {
    fn breakpoints(&self) -> Cow<'_, [f64]> {
        Cow::Owned(vec![0.0, self.cutoff])
    }

    fn value_on(&self, _piece: usize, k: f64) -> f64 {
        (self.f)(k)
    }

    fn value(&self, k: f64) -> f64 {
        (self.f)(k)
    }

    fn max_panel(&self) -> f64 {
        self.panel
    }

    fn has_tail(&self) -> bool {
        self.tail
    }
}

/// Quadrature controls for [`radial_inverse_fourier`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseOptions {
    /// Gauss-Legendre points per panel.
    pub order: usize,
    /// Panel subdivision factor.
    pub refine: usize,
    /// Also reconstruct g'(r).
    pub gradient: bool,
    /// When set, repeat on a subset of radii with doubled panels and fail if
    /// the two disagree by more than this fraction of max |g|.
    pub verify: Option<f64>,
}

impl Default for InverseOptions {
    fn default() -> Self {
        Self { order: 8, refine: 1, gradient: false, verify: None }
    }
}

impl InverseOptions {
    pub fn with_gradient(mut self) -> Self {
        self.gradient = true;
        self
    }
}

/// Sampled radial profile g(r_j), optionally with g'(r_j).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialSnapshot {
    pub dimension: usize,
    pub t: f64,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub gradient: Option<Vec<f64>>,
}

impl RadialSnapshot {
    pub fn new(dimension: usize, t: f64, radii: Vec<f64>, values: Vec<f64>, gradient: Option<Vec<f64>>) -> Result<Self> {
        if radii.len() < 4 || values.len() != radii.len() {
            return precondition("snapshot needs at least four radii with one value each");
        }
        if radii[0] <= 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
            return precondition("snapshot radii must be positive and strictly increasing");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return precondition("snapshot values must be finite");
        }
        if let Some(g) = &gradient {
            if g.len() != radii.len() || g.iter().any(|v| !v.is_finite()) {
                return precondition("gradient values must be finite and match the radii");
            }
        }
        Ok(Self { dimension, t, radii, values, gradient })
    }

    /// Samples a closed-form profile (test and oracle helper).
    pub fn from_fn(dimension: usize, t: f64, radii: Vec<f64>, g: impl Fn(f64) -> f64) -> Result<Self> {
        let values = radii.iter().map(|&r| g(r)).collect();
        Self::new(dimension, t, radii, values, None)
    }

    /// Norms of |g'| when the gradient was reconstructed.
    pub fn gradient_norms(&self) -> Result<Norms> {
        let g = self
            .gradient
            .as_ref()
            .ok_or_else(|| Error::Precondition("snapshot has no gradient values".into()))?;
        profile_norms(self.dimension, &self.radii, g)
    }
}

/// L¹ and L∞ norms of a radial profile on ℝ^d.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l1: f64,
    pub linf: f64,
    /// The maximum sits at the innermost radius and the profile still grows
    /// like a power there: the reported L∞ is only the grid maximum.
    pub linf_divergent: bool,
}

/// Geometric radius grid.
pub fn geometric_radii(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    geometric_modes(lo, hi, n)
}

/// Radii used for a profile at time `t`: `[1e-3, max(1e3, 30 t)]`, 1024 points.
pub fn default_radii(t: f64) -> Vec<f64> {
    geometric_radii(1e-3, (30.0 * t).max(1e3), 1024)
}

fn weight_constant(d: usize) -> f64 {
    sphere_area(d) / (2.0 * PI).powi(d as i32)
}

/// ∫_K^∞ F(k) sin(kr) dk from the jet (F, F', F'') at K.
fn sin_tail(jet: [f64; 3], k: f64, r: f64) -> f64 {
    let (s, c) = (k * r).sin_cos();
    jet[0] * c / r - jet[1] * s / (r * r) - jet[2] * c / (r * r * r)
}

/// ∫_K^∞ F(k) cos(kr) dk from the jet (F, F', F'') at K.
fn cos_tail(jet: [f64; 3], k: f64, r: f64) -> f64 {
    let (s, c) = (k * r).sin_cos();
    -jet[0] * s / r - jet[1] * c / (r * r) + jet[2] * s / (r * r * r)
}

fn symbol_jet<S: RadialSymbol + ?Sized>(symbol: &S, k: f64) -> [f64; 3] {
    let h = 1e-3 * k;
    let (m, c, p) = (symbol.value(k - h), symbol.value(k), symbol.value(k + h));
    [c, (p - m) / (2.0 * h), (p - 2.0 * c + m) / (h * h)]
}

/// Tail contributions past `k` to (g(r), g'(r)) before the c_d factor.
fn tail_terms<S: RadialSymbol + ?Sized>(symbol: &S, d: usize, k: f64, r: f64) -> Result<(f64, f64)> {
    let [f, f1, f2] = symbol_jet(symbol, k);
    let kf = [k * f, f + k * f1, 2.0 * f1 + k * f2];
    match d {
        1 => Ok((cos_tail([f, f1, f2], k, r), -sin_tail(kf, k, r))),
        3 => {
            let k2f = [k * k * f, 2.0 * k * f + k * k * f1, 2.0 * f + 4.0 * k * f1 + k * k * f2];
            let value = sin_tail(kf, k, r) / r;
            let grad = cos_tail(k2f, k, r) / r - sin_tail(kf, k, r) / (r * r);
            Ok((value, grad))
        }
        _ => Err(Error::Unsupported(format!("asymptotic symbol tail in dimension {d}"))),
    }
}

/// (g(r), g'(r)) for a single radius.
fn invert_at<S: RadialSymbol + ?Sized>(
    symbol: &S,
    breaks: &[f64],
    d: usize,
    r: f64,
    rule: &GaussLegendre<f64>,
    refine: usize,
    gradient: bool,
) -> Result<(f64, f64)> {
    let osc = PI / (r * refine as f64);
    let width = osc.min(symbol.max_panel() / refine as f64);
    let dm1 = (d - 1) as i32;
    let mut value = 0.0;
    let mut grad = 0.0;
    let integrate = |lo: f64, hi: f64, piece: usize, value: &mut f64, grad: &mut f64| {
        let panels = ((hi - lo) / width).ceil().max(1.0) as usize;
        let h = (hi - lo) / panels as f64;
        for p in 0..panels {
            let a = lo + h * p as f64;
            for (k, w) in rule.mapped(a, a + h) {
                let f = symbol.value_on(piece, k) * w;
                let (j, dj, _) = radial_kernel(d, k * r);
                let kp = k.powi(dm1);
                *value += f * kp * j;
                if gradient {
                    *grad += f * kp * k * dj;
                }
            }
        }
    };
    for (piece, w) in breaks.windows(2).enumerate() {
        integrate(w[0], w[1], piece, &mut value, &mut grad);
    }
    if symbol.has_tail() {
        let k_end = breaks[breaks.len() - 1];
        let k_far = k_end.max(64.0 / r);
        if k_far > k_end {
            // Extension past the nominal cutoff; the piece index is unused by
            // symbols that carry a tail.
            integrate(k_end, k_far, breaks.len() - 2, &mut value, &mut grad);
        }
        let (tv, tg) = tail_terms(symbol, d, k_far, r)?;
        value += tv;
        grad += tg;
    }
    let c = weight_constant(d);
    Ok((c * value, c * grad))
}

fn invert_many<S: RadialSymbol + ?Sized>(
    symbol: &S,
    d: usize,
    radii: &[f64],
    order: usize,
    refine: usize,
    gradient: bool,
) -> Result<Vec<(f64, f64)>> {
    let breaks = symbol.breakpoints();
    if breaks.len() < 2 || breaks[0] != 0.0 || breaks.windows(2).any(|w| w[1] <= w[0]) {
        return precondition("symbol breakpoints must start at 0 and increase");
    }
    let rule = GaussLegendre::<f64>::new(order);
    radii
        .par_iter()
        .map(|&r| invert_at(symbol, &breaks, d, r, &rule, refine, gradient))
        .collect()
}

/// Inverse Fourier transform of a radial symbol in dimension `d ∈ {1, 2, 3}`,
/// sampled at `radii`.
pub fn radial_inverse_fourier<S: RadialSymbol + ?Sized>(
    d: usize,
    symbol: &S,
    radii: &[f64],
    t: f64,
    options: InverseOptions,
) -> Result<RadialSnapshot> {
    if !(1..=3).contains(&d) {
        return Err(Error::Unsupported(format!("radial inversion in dimension {d}")));
    }
    if options.order == 0 || options.refine == 0 {
        return precondition("quadrature order and refinement must be positive");
    }
    let out = invert_many(symbol, d, radii, options.order, options.refine, options.gradient)?;
    if let Some(tol) = options.verify {
        let probe: Vec<f64> = radii.iter().step_by(16).copied().collect();
        let fine = invert_many(symbol, d, &probe, options.order, 2 * options.refine, false)?;
        let scale = out.iter().fold(0.0f64, |m, v| m.max(v.0.abs())).max(f64::MIN_POSITIVE);
        let worst = fine
            .iter()
            .zip(out.iter().step_by(16))
            .fold(0.0f64, |m, (a, b)| m.max((a.0 - b.0).abs()));
        if worst > tol * scale {
            return Err(Error::Accuracy {
                what: "radial inverse transform under panel doubling".into(),
                achieved: worst / scale,
                wanted: tol,
            });
        }
    }
    let (values, grads): (Vec<f64>, Vec<f64>) = out.into_iter().unzip();
    RadialSnapshot::new(d, t, radii.to_vec(), values, options.gradient.then_some(grads))
}

/// Composite Simpson weights on a uniform grid of `n ≥ 4` points, closing
/// with the 3/8 rule when the interval count is odd.
fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    let intervals = n - 1;
    let simpson_end = if intervals.is_multiple_of(2) { intervals } else { intervals - 3 };
    for i in (0..simpson_end).step_by(2) {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
    }
    if simpson_end < intervals {
        let s = simpson_end;
        for (o, c) in [1.0, 3.0, 3.0, 1.0].iter().enumerate() {
            w[s + o] += 3.0 * h / 8.0 * c;
        }
    }
    w
}

/// ∫ h(r) ω_d r^{d-1} dr over `[0, r_max]` for samples on a geometric grid;
/// the disc inside the first radius is filled with the innermost value.
fn radial_integral(d: usize, radii: &[f64], h: &[f64]) -> f64 {
    let n = radii.len();
    let step = (radii[n - 1] / radii[0]).ln() / (n - 1) as f64;
    let w = simpson_weights(n, step);
    let omega = sphere_area(d);
    let di = d as i32;
    let body: f64 = radii.iter().zip(h).zip(&w).map(|((r, v), w)| v * r.powi(di) * w).sum();
    omega * (body + h[0] * radii[0].powi(di) / d as f64)
}

fn profile_norms(d: usize, radii: &[f64], values: &[f64]) -> Result<Norms> {
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let l1 = radial_integral(d, radii, &abs);
    let n = radii.len();
    if l1 > 0.0 {
        // Share of the integral carried by the outermost 2% of the grid.
        let start = n - (n / 50).max(4);
        let mut outer = abs.clone();
        outer[..start].iter_mut().for_each(|v| *v = 0.0);
        let share = radial_integral(d, radii, &outer) / l1;
        if share > 0.01 {
            return Err(Error::Accuracy {
                what: "L1 norm dominated by the outer radii".into(),
                achieved: share,
                wanted: 0.01,
            });
        }
    }
    let (j, &peak) = abs
        .iter()
        .enumerate()
        .fold((0, &0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    let mut linf = peak;
    let mut divergent = false;
    if peak > 0.0 && j > 0 && j + 1 < n {
        // Parabola in log r through the three samples around the maximum.
        let (a, b, c) = (abs[j - 1], abs[j], abs[j + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            let s = 0.5 * (a - c) / denom;
            linf = linf.max(b - 0.25 * (a - c) * s);
        }
    } else if peak > 0.0 && j == 0 {
        let slope = (abs[1] / abs[0]).ln() / (radii[1] / radii[0]).ln();
        divergent = slope < -0.5;
    }
    Ok(Norms { l1, linf, linf_divergent: divergent })
}

/// L¹ and L∞ norms of the profile in `snapshot`.
pub fn norms(snapshot: &RadialSnapshot) -> Result<Norms> {
    profile_norms(snapshot.dimension, &snapshot.radii, &snapshot.values)
}

/// ∫ g² ω_d r^{d-1} dr, used for Plancherel checks.
pub fn l2_squared(snapshot: &RadialSnapshot) -> f64 {
    let sq: Vec<f64> = snapshot.values.iter().map(|v| v * v).collect();
    radial_integral(snapshot.dimension, &snapshot.radii, &sq)
}

/// Norms of the resolvent kernel G(t) and of its gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelNorms {
    pub t: f64,
    pub l1: f64,
    pub linf: f64,
    pub grad_l1: f64,
    pub grad_linf: f64,
}

/// Radial symbol k ↦ Re f̂(t, k) from column `step` of a tabulated series,
/// extended flat from the lowest mode down to k = 0.
pub fn mode_symbol(series: &ModeSeries<f64>, step: usize) -> Result<SampledSymbol> {
    if series.xi().first().is_none_or(|&k| k <= 0.0) {
        return precondition("series modes must be positive");
    }
    let column = series.column(step);
    let k = std::iter::once(0.0).chain(series.xi().iter().copied()).collect();
    let values = std::iter::once(column[0].re).chain(column.iter().map(|c| c.re)).collect();
    SampledSymbol::new(k, values)
}

fn resolvent_symbol(resolvent: &ModeSeries<f64>, step: usize) -> Result<SampledSymbol> {
    if resolvent.kind() != SeriesKind::Resolvent {
        return Err(Error::Mismatch(format!("expected a resolvent series, got {:?}", resolvent.kind())));
    }
    mode_symbol(resolvent, step)
}

/// Kernel norms at the grid times nearest to `times`.
pub fn g_kernel_norms(resolvent: &ModeSeries<f64>, d: usize, times: &[f64]) -> Result<Vec<KernelNorms>> {
    times
        .par_iter()
        .map(|&t| {
            let step = resolvent.grid().nearest(t);
            let t_node = resolvent.grid().node(step);
            let symbol = resolvent_symbol(resolvent, step)?;
            let radii = default_radii(t_node);
            let snap = radial_inverse_fourier(d, &symbol, &radii, t_node, InverseOptions::default().with_gradient())?;
            let n = norms(&snap)?;
            let g = snap.gradient_norms()?;
            Ok(KernelNorms { t: t_node, l1: n.l1, linf: n.linf, grad_l1: g.l1, grad_linf: g.linf })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::EquilibriumProfile;
    use crate::volterra::{mode_sweep, resolvent_mode, TimeGrid};
    use approx::assert_relative_eq;

    fn gaussian() -> AnalyticSymbol<impl Fn(f64) -> f64 + Sync> {
        AnalyticSymbol::truncated(|k: f64| (-0.5 * k * k).exp(), 10.0, 0.25)
    }

    #[test]
    fn gaussian_self_transform_in_three_dimensions() {
        let radii = geometric_radii(1e-3, 12.0, 200);
        let snap = radial_inverse_fourier(3, &gaussian(), &radii, 0.0, InverseOptions::default()).unwrap();
        let c = (2.0 * PI).powf(-1.5);
        for (r, g) in snap.radii.iter().zip(&snap.values) {
            assert!((g - c * (-0.5 * r * r).exp()).abs() < 1e-13, "r={r}");
        }
    }

    #[test]
    fn gaussian_transform_in_one_and_two_dimensions() {
        let radii = geometric_radii(1e-3, 10.0, 100);
        for d in [1, 2] {
            let opts = InverseOptions::default().with_gradient();
            let snap = radial_inverse_fourier(d, &gaussian(), &radii, 0.0, opts).unwrap();
            let c = (2.0 * PI).powf(-(d as f64) / 2.0);
            let grad = snap.gradient.as_ref().unwrap();
            for ((r, g), dg) in snap.radii.iter().zip(&snap.values).zip(grad) {
                let exact = c * (-0.5 * r * r).exp();
                assert!((g - exact).abs() < 1e-12, "d={d} r={r}");
                assert!((dg + r * exact).abs() < 1e-12, "d={d} r={r}");
            }
        }
    }

    #[test]
    fn zero_symbol_gives_zero_profile_and_norms() {
        let zero = AnalyticSymbol::truncated(|_| 0.0, 1.0, 1.0);
        let radii = geometric_radii(1e-3, 1e3, 64);
        let snap = radial_inverse_fourier(3, &zero, &radii, 0.0, InverseOptions::default().with_gradient()).unwrap();
        assert!(snap.values.iter().all(|v| *v == 0.0));
        let n = norms(&snap).unwrap();
        assert_eq!((n.l1, n.linf), (0.0, 0.0));
    }

    #[test]
    fn screened_green_function() {
        let yukawa = AnalyticSymbol::with_tail(|k: f64| 1.0 / (1.0 + k * k), 200.0, 1.0);
        let radii = geometric_radii(0.5, 10.0, 40);
        let opts = InverseOptions::default().with_gradient();
        let snap = radial_inverse_fourier(3, &yukawa, &radii, 0.0, opts).unwrap();
        let grad = snap.gradient.as_ref().unwrap();
        for ((&r, g), dg) in snap.radii.iter().zip(&snap.values).zip(grad) {
            let exact = (-r).exp() / (4.0 * PI * r);
            assert_relative_eq!(*g, exact, max_relative = 1e-6);
            assert_relative_eq!(*dg, -exact * (1.0 + 1.0 / r), max_relative = 1e-6);
        }
    }

    #[test]
    fn gaussian_norms() {
        let c = (2.0 * PI).powf(-1.5);
        let snap = RadialSnapshot::from_fn(3, 0.0, default_radii(0.0), |r| c * (-0.5 * r * r).exp()).unwrap();
        let n = norms(&snap).unwrap();
        assert_relative_eq!(n.l1, 1.0, max_relative = 1e-6);
        assert_relative_eq!(n.linf, c, max_relative = 1e-6);
        assert!(!n.linf_divergent);
    }

    #[test]
    fn yukawa_norms_flag_divergent_maximum() {
        let snap =
            RadialSnapshot::from_fn(3, 0.0, default_radii(0.0), |r| (-r).exp() / (4.0 * PI * r)).unwrap();
        let n = norms(&snap).unwrap();
        assert_relative_eq!(n.l1, 1.0, max_relative = 1e-5);
        assert!(n.linf_divergent);
    }

    #[test]
    fn tail_dominated_profile_is_rejected() {
        let snap = RadialSnapshot::from_fn(3, 0.0, geometric_radii(1e-3, 10.0, 128), |r| 1.0 / (1.0 + r)).unwrap();
        assert!(matches!(norms(&snap), Err(Error::Accuracy { .. })));
    }

    #[test]
    fn plancherel_for_gaussian_symbols() {
        for (d, s) in [(1, 0.7), (2, 1.3), (3, 1.0), (3, 2.0)] {
            let sym = AnalyticSymbol::truncated(move |k: f64| (-0.5 * s * s * k * k).exp(), 10.0 / s, 0.25 / s);
            let radii = geometric_radii(1e-4, 40.0 * s, 1025);
            let snap = radial_inverse_fourier(d, &sym, &radii, 0.0, InverseOptions::default()).unwrap();
            let physical = l2_squared(&snap);
            let rule = GaussLegendre::<f64>::new(16);
            let spectral = sphere_area(d) / (2.0 * PI).powi(d as i32)
                * rule.integrate_panels(0.0, 10.0 / s, 40, |k| sym.value(k).powi(2) * k.powi(d as i32 - 1));
            assert_relative_eq!(physical, spectral, max_relative = 1e-6);
        }
    }

    #[test]
    fn dilation_covariance() {
        let lambda = 1.7;
        let radii = geometric_radii(1e-2, 8.0, 50);
        let scaled: Vec<f64> = radii.iter().map(|r| r / lambda).collect();
        let base = |k: f64| (1.0 + k * k) * (-0.5 * k * k).exp();
        let sym = AnalyticSymbol::truncated(base, 12.0, 0.2);
        let dil = AnalyticSymbol::truncated(move |k: f64| base(lambda * k), 12.0 / lambda, 0.2 / lambda);
        let a = radial_inverse_fourier(3, &dil, &radii, 0.0, InverseOptions::default()).unwrap();
        let b = radial_inverse_fourier(3, &sym, &scaled, 0.0, InverseOptions::default()).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - lambda.powi(-3) * y).abs() < 1e-8);
        }
    }

    #[test]
    fn sampled_symbol_matches_analytic() {
        let k: Vec<f64> = std::iter::once(0.0).chain(geometric_modes(1e-3, 12.0, 1500)).collect();
        let v: Vec<f64> = k.iter().map(|k| (-0.5 * k * k).exp()).collect();
        let sym = SampledSymbol::new(k, v).unwrap();
        let radii = geometric_radii(1e-2, 10.0, 60);
        let opts = InverseOptions { verify: Some(1e-8), ..InverseOptions::default() };
        let snap = radial_inverse_fourier(3, &sym, &radii, 0.0, opts).unwrap();
        let c = (2.0 * PI).powf(-1.5);
        for (r, g) in snap.radii.iter().zip(&snap.values) {
            assert!((g - c * (-0.5 * r * r).exp()).abs() < 1e-7, "r={r}");
        }
    }

    #[test]
    fn unresolved_panels_are_reported() {
        let wiggly = AnalyticSymbol::truncated(|k: f64| (40.0 * k).cos() * (-k).exp(), 40.0, 2.0);
        let radii = geometric_radii(1e-2, 5.0, 64);
        let opts = InverseOptions { order: 2, verify: Some(1e-10), ..InverseOptions::default() };
        assert!(matches!(
            radial_inverse_fourier(3, &wiggly, &radii, 0.0, opts),
            Err(Error::Accuracy { .. })
        ));
    }

    #[test]
    fn vacuum_kernel_norms_vanish() {
        let p = EquilibriumProfile::vacuum(3).unwrap();
        let grid = TimeGrid::new(10.0, 40).unwrap();
        let xi = geometric_modes(1e-3, 8.0, 32);
        let g = resolvent_mode(&mode_sweep(&p, grid, &xi).unwrap()).unwrap();
        for n in g_kernel_norms(&g, 3, &[2.0, 10.0]).unwrap() {
            assert_eq!((n.l1, n.linf, n.grad_l1, n.grad_linf), (0.0, 0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn wrong_series_kind_is_rejected() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let s = ModeSeries::zeros(grid, vec![1.0], SeriesKind::Kernel);
        assert!(matches!(g_kernel_norms(&s, 3, &[1.0]), Err(Error::Mismatch(_))));
    }
}
