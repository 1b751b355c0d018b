//! Per-mode Volterra convolution equations ρ = S + K⋆ρ and their resolvent.
//!
//! Product trapezoidal rule on a uniform grid. With the kernel vanishing at
//! t = 0 the scheme is explicit, and the discrete resolvent satisfies
//! ρ = S + G⋆S exactly in exact arithmetic.

use crate::dispersion::khat_time;
use crate::equilibria::EquilibriumProfile;
use crate::error::{precondition, Error, Result};
use crate::scalar::Real;
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Kernel entries below this fraction of the row maximum are dropped from the
/// tail of the convolution.
const KERNEL_TRUNCATION: f64 = 1e-18;

/// Uniform time grid `t_k = k·dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid<T> {
    t_max: T,
    steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(t_max: T, steps: usize) -> Result<Self> {
        if !(t_max > T::zero()) || steps == 0 {
            return precondition("time grid needs t_max > 0 and at least one step");
        }
        Ok(Self { t_max, steps })
    }

    pub fn t_max(&self) -> T {
        self.t_max
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `steps + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> T {
        self.t_max / T::idx(self.steps)
    }

    pub fn node(&self, k: usize) -> T {
        self.dt() * T::idx(k)
    }

    pub fn nodes(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.len()).map(move |k| self.node(k))
    }

    /// Index of the node closest to `t`.
    pub fn nearest(&self, t: T) -> usize {
        (t / self.dt()).round().to_usize().unwrap_or(0).min(self.steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeriesKind {
    Source,
    Density,
    Kernel,
    Resolvent,
}

/// Per-mode time histories, stored row-major by mode then time.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSeries<T> {
    grid: TimeGrid<T>,
    xi: Vec<T>,
    values: Vec<Complex<T>>,
    kind: SeriesKind,
}

impl<T: Real> ModeSeries<T> {
    pub fn zeros(grid: TimeGrid<T>, xi: Vec<T>, kind: SeriesKind) -> Self {
        let values = vec![Complex::new(T::zero(), T::zero()); xi.len() * grid.len()];
        Self { grid, xi, values, kind }
    }

    /// Tabulates `f(mode index, t)`.
    pub fn from_fn<F>(grid: TimeGrid<T>, xi: Vec<T>, kind: SeriesKind, f: F) -> Self
    where
        F: Fn(usize, T) -> Complex<T> + Sync,
    {
        let n = grid.len();
        let mut s = Self::zeros(grid, xi, kind);
        s.values.par_chunks_mut(n).enumerate().for_each(|(m, row)| {
            for (k, v) in row.iter_mut().enumerate() {
                *v = f(m, grid.node(k));
            }
        });
        s
    }

    pub fn from_rows(grid: TimeGrid<T>, xi: Vec<T>, kind: SeriesKind, values: Vec<Complex<T>>) -> Result<Self> {
        if values.len() != xi.len() * grid.len() {
            return Err(Error::Mismatch(format!(
                "{} values for {} modes x {} nodes",
                values.len(),
                xi.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, xi, values, kind })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn xi(&self) -> &[T] {
        &self.xi
    }

    pub fn kind(&self) -> SeriesKind {
        self.kind
    }

    pub fn modes(&self) -> usize {
        self.xi.len()
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn row(&self, m: usize) -> &[Complex<T>] {
        let n = self.grid.len();
        &self.values[m * n..(m + 1) * n]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [Complex<T>] {
        let n = self.grid.len();
        &mut self.values[m * n..(m + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Complex<T>]> {
        self.values.chunks(self.grid.len())
    }

    /// Values of all modes at time node `k`.
    pub fn column(&self, k: usize) -> Vec<Complex<T>> {
        self.rows().map(|r| r[k]).collect()
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |a, v| a.max(v.norm()))
    }

    pub fn max_imag(&self) -> T {
        self.values.iter().fold(T::zero(), |a, v| a.max(v.im.abs()))
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.xi != other.xi {
            return Err(Error::Mismatch("series grids or mode lists differ".into()));
        }
        Ok(())
    }
}

/// Marches one mode of `x = f + K⋆x` in place; `x` holds `f` on entry.
fn march_mode<T: Real>(kernel: &[Complex<T>], x: &mut [Complex<T>], dt: T) -> Result<()> {
    let n = x.len();
    let half = T::lit(0.5);
    let diag = Complex::new(T::one(), T::zero()) - kernel[0] * (dt * half);
    if diag.norm() <= T::epsilon() {
        return Err(Error::SingularStep(0));
    }
    let kmax = kernel.iter().fold(T::zero(), |a, v| a.max(v.norm()));
    let cut = T::lit(KERNEL_TRUNCATION) * kmax;
    let reach = kernel.iter().rposition(|v| v.norm() > cut).unwrap_or(0);
    x[0] /= diag;
    let real = kernel.iter().all(|v| v.im == T::zero()) && x.iter().all(|v| v.im == T::zero());
    if real {
        let kr: Vec<T> = kernel.iter().map(|v| v.re).collect();
        let mut xr: Vec<T> = x.iter().map(|v| v.re).collect();
        let dr = diag.re;
        for step in 1..n {
            let lo = step.saturating_sub(reach).max(1);
            let mut acc = T::zero();
            for j in lo..step {
                acc += kr[step - j] * xr[j];
            }
            let end = if step <= reach { kr[step] * xr[0] * half } else { T::zero() };
            xr[step] = (xr[step] + dt * (acc + end)) / dr;
        }
        for (v, r) in x.iter_mut().zip(xr) {
            *v = Complex::new(r, T::zero());
        }
    } else {
        for step in 1..n {
            let lo = step.saturating_sub(reach).max(1);
            let mut acc = Complex::new(T::zero(), T::zero());
            for j in lo..step {
                acc += kernel[step - j] * x[j];
            }
            if step <= reach {
                acc += kernel[step] * x[0] * half;
            }
            x[step] = (x[step] + acc * dt) / diag;
        }
    }
    Ok(())
}

/// Solves ρ̂(t) = Ŝ(t) + ∫₀ᵗ K̂(t−s) ρ̂(s) ds for every mode.
pub fn solve_mode_volterra<T: Real>(kernel: &ModeSeries<T>, source: &ModeSeries<T>) -> Result<ModeSeries<T>> {
    kernel.check_compatible(source)?;
    let dt = kernel.grid.dt();
    let n = kernel.grid.len();
    let mut out = source.clone();
    out.kind = SeriesKind::Density;
    out.values
        .par_chunks_mut(n)
        .enumerate()
        .try_for_each(|(m, row)| march_mode(kernel.row(m), row, dt))?;
    Ok(out)
}

/// Solves Ĝ(t) = K̂(t) + ∫₀ᵗ K̂(t−s) Ĝ(s) ds for every mode.
pub fn resolvent_mode<T: Real>(kernel: &ModeSeries<T>) -> Result<ModeSeries<T>> {
    let dt = kernel.grid.dt();
    let n = kernel.grid.len();
    let mut out = kernel.clone();
    out.kind = SeriesKind::Resolvent;
    out.values
        .par_chunks_mut(n)
        .enumerate()
        .try_for_each(|(m, row)| march_mode(kernel.row(m), row, dt))?;
    Ok(out)
}

/// Trapezoidal convolution (a⋆b)(t_k) = ∫₀^{t_k} a(t_k − s) b(s) ds.
pub fn discrete_convolution<T: Real>(a: &[Complex<T>], b: &[Complex<T>], dt: T) -> Vec<Complex<T>> {
    assert_eq!(a.len(), b.len(), "convolution operands must share a grid");
    let half = T::lit(0.5);
    (0..a.len())
        .map(|k| {
            if k == 0 {
                return Complex::new(T::zero(), T::zero());
            }
            let mut acc = (a[k] * b[0] + a[0] * b[k]) * half;
            for j in 1..k {
                acc += a[k - j] * b[j];
            }
            acc * dt
        })
        .collect()
}

/// S + G⋆S mode by mode.
pub fn apply_resolvent<T: Real>(resolvent: &ModeSeries<T>, source: &ModeSeries<T>) -> Result<ModeSeries<T>> {
    resolvent.check_compatible(source)?;
    let dt = resolvent.grid.dt();
    let n = resolvent.grid.len();
    let mut out = source.clone();
    out.kind = SeriesKind::Density;
    out.values.par_chunks_mut(n).enumerate().for_each(|(m, row)| {
        let conv = discrete_convolution(resolvent.row(m), source.row(m), dt);
        for (r, c) in row.iter_mut().zip(conv) {
            *r += c;
        }
    });
    Ok(out)
}

/// Tabulates K̂(t, |ξ| e₁) on the product of the time grid and the mode list.
pub fn mode_sweep(profile: &EquilibriumProfile, grid: TimeGrid<f64>, xi_list: &[f64]) -> Result<ModeSeries<f64>> {
    if xi_list.is_empty() {
        return precondition("mode list must be nonempty");
    }
    if xi_list.iter().any(|&k| !(k >= 0.0) || !k.is_finite()) {
        return precondition("mode magnitudes must be finite and nonnegative");
    }
    let d = profile.dimension();
    Ok(ModeSeries::from_fn(grid, xi_list.to_vec(), SeriesKind::Kernel, |m, t| {
        let mut xi = vec![0.0; d];
        xi[0] = xi_list[m];
        khat_time(profile, t, &xi)
    }))
}

/// Geometric mode list of `n` magnitudes in `[lo, hi]`.
pub fn geometric_modes(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let r = (hi / lo).ln();
    (0..n)
        .map(|i| lo * (r * i as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}

/// Richardson ratio ‖x_n − x_{2n}‖∞ / ‖x_{2n} − x_{4n}‖∞ of one mode problem
/// compared on the coarse nodes; close to 4 for a second-order scheme.
pub fn richardson_ratio<T, K, S>(kernel: K, source: S, t_max: T, steps: usize) -> Result<T>
where
    T: Real,
    K: Fn(T) -> Complex<T>,
    S: Fn(T) -> Complex<T>,
{
    let solve = |n: usize| -> Result<Vec<Complex<T>>> {
        let g = TimeGrid::new(t_max, n)?;
        let k: Vec<_> = g.nodes().map(&kernel).collect();
        let mut x: Vec<_> = g.nodes().map(&source).collect();
        march_mode(&k, &mut x, g.dt())?;
        Ok(x)
    };
    let a = solve(steps)?;
    let b = solve(2 * steps)?;
    let c = solve(4 * steps)?;
    let e1 = (0..a.len()).fold(T::zero(), |m, i| m.max((a[i] - b[2 * i]).norm()));
    let e2 = (0..a.len()).fold(T::zero(), |m, i| m.max((b[2 * i] - c[4 * i]).norm()));
    if e2 == T::zero() {
        return Err(Error::Accuracy {
            what: "refined solutions coincide; ratio undefined".into(),
            achieved: 0.0,
            wanted: 0.0,
        });
    }
    Ok(e1 / e2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn maxwell_kernel(n: usize, t_max: f64, xi: Vec<f64>) -> ModeSeries<f64> {
        let p = EquilibriumProfile::maxwellian(3, 1.0).unwrap();
        mode_sweep(&p, TimeGrid::new(t_max, n).unwrap(), &xi).unwrap()
    }

    #[test]
    fn zero_kernel_returns_source() {
        let g = TimeGrid::new(5.0, 50).unwrap();
        let k = ModeSeries::zeros(g, vec![1.0], SeriesKind::Kernel);
        let s = ModeSeries::from_fn(g, vec![1.0], SeriesKind::Source, |_, t: f64| Complex64::new(t.sin(), 0.0));
        let rho = solve_mode_volterra(&k, &s).unwrap();
        assert_eq!(rho.values(), s.values());
        assert_eq!(resolvent_mode(&k).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn matches_picard_iteration_of_discrete_equation() {
        let k = maxwell_kernel(200, 10.0, vec![1.0]);
        let g = *k.grid();
        let s = ModeSeries::from_fn(g, vec![1.0], SeriesKind::Source, |_, t| Complex64::new((-t * t / 2.0).exp(), 0.0));
        let rho = solve_mode_volterra(&k, &s).unwrap();
        // Brute force: iterate x <- S + T_K x until stationary.
        let dt = g.dt();
        let kr = k.row(0);
        let sr = s.row(0);
        let mut x = sr.to_vec();
        for _ in 0..400 {
            let conv = discrete_convolution(kr, &x, dt);
            x = sr.iter().zip(conv).map(|(a, b)| a + b).collect();
        }
        let err = x.iter().zip(rho.row(0)).fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn resolvent_identity_holds_discretely() {
        let k = maxwell_kernel(256, 20.0, vec![0.1, 0.7, 2.0]);
        let g = *k.grid();
        let s = ModeSeries::from_fn(g, k.xi().to_vec(), SeriesKind::Source, |m, t| {
            Complex64::new((-(t - 1.0 - m as f64).powi(2)).exp(), 0.3 * (t * 0.5).sin() / (1.0 + t))
        });
        let rho = solve_mode_volterra(&k, &s).unwrap();
        let viag = apply_resolvent(&resolvent_mode(&k).unwrap(), &s).unwrap();
        let err = rho.values().iter().zip(viag.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn second_order_convergence() {
        let p = EquilibriumProfile::maxwellian(3, 1.0).unwrap();
        let ratio = richardson_ratio(
            |t| Complex64::new(crate::dispersion::khat_radial(&p, t, 1.0).unwrap(), 0.0),
            |t| Complex64::new((-t * t / 2.0).exp(), 0.0),
            10.0,
            100,
        )
        .unwrap();
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn generic_over_f32() {
        let g = TimeGrid::<f32>::new(4.0, 64).unwrap();
        let k = ModeSeries::from_fn(g, vec![1.0], SeriesKind::Kernel, |_, t| Complex::new(-t * (-t * t / 2.0).exp() / 2.0, 0.0));
        let s = ModeSeries::from_fn(g, vec![1.0], SeriesKind::Source, |_, t| Complex::new((-t).exp(), 0.0));
        let rho = solve_mode_volterra(&k, &s).unwrap();
        let via = apply_resolvent(&resolvent_mode(&k).unwrap(), &s).unwrap();
        let err = rho.values().iter().zip(via.values()).fold(0.0f32, |m, (a, b)| m.max((a - b).norm()));
        assert!(err < 1e-5);
    }

    #[test]
    fn sweep_first_row_vanishes_and_envelope_peaks_at_inverse_xi() {
        let k = maxwell_kernel(1000, 10.0, vec![0.5, 1.0, 2.0]);
        for (m, &xi) in k.xi().iter().enumerate() {
            let row = k.row(m);
            assert_eq!(row[0].norm(), 0.0);
            let (imax, _) = row
                .iter()
                .enumerate()
                .fold((0, 0.0), |(bi, bv), (i, v)| if v.norm() > bv { (i, v.norm()) } else { (bi, bv) });
            assert!((k.grid().node(imax) - 1.0 / xi).abs() <= k.grid().dt());
        }
        let mid = k.grid().nearest(1.0);
        assert!((k.row(1)[mid].re + 0.5 * (-0.5f64).exp()).abs() < 1e-15);
    }
}
