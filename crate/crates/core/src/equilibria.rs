//! Background velocity profiles μ(v) with their Fourier data.
//!
//! Fourier convention: ĝ(η) = ∫ e^{-iv·η} g(v) dv, so the transform of ∇μ is
//! iη μ̂(η).

use crate::error::{precondition, Error, Result};
use crate::interp::CubicSpline;
use crate::quad::GaussLegendre;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// One Gaussian `w · N_θ(v − a e₁)` of a mixture profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub shift: f64,
    pub theta: f64,
}

/// Radial samples `μ(r_j)` of an isotropic profile.
#[derive(Debug, Clone)]
pub struct TabulatedRadial {
    spline: CubicSpline<f64>,
    /// Products `ω_d r^{d-1} μ(r) w` on the radial quadrature nodes.
    nodes: Vec<(f64, f64)>,
}

impl TabulatedRadial {
    pub fn radii(&self) -> &[f64] {
        self.spline.knots()
    }

    pub fn values(&self) -> &[f64] {
        self.spline.values()
    }
}

#[derive(Debug, Clone)]
pub enum ProfileKind {
    /// μ ≡ 0; the degenerate background used to check the free limits.
    Vacuum,
    Maxwellian { theta: f64 },
    BiMaxwellianBump {
        separation: f64,
        alpha: f64,
        theta1: f64,
        theta2: f64,
    },
    TabulatedRadial(TabulatedRadial),
}

#[derive(Debug, Clone)]
pub struct EquilibriumProfile {
    dimension: usize,
    kind: ProfileKind,
    mass: f64,
    h1_weight_k: f64,
}

/// Value and first two derivatives of `s ↦ μ̂(sξ)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayJet {
    pub value: Complex64,
    pub d1: Complex64,
    pub d2: Complex64,
}

impl EquilibriumProfile {
    pub fn maxwellian(dimension: usize, theta: f64) -> Result<Self> {
        check_dimension(dimension)?;
        if !(theta > 0.0 && theta.is_finite()) {
            return precondition("Maxwellian temperature must be positive");
        }
        Ok(Self::with_kind(dimension, ProfileKind::Maxwellian { theta }, 1.0))
    }

    pub fn bi_maxwellian(
        dimension: usize,
        separation: f64,
        alpha: f64,
        theta1: f64,
        theta2: f64,
    ) -> Result<Self> {
        check_dimension(dimension)?;
        if !(separation > 0.0) {
            return precondition("bump separation must be positive");
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return precondition("bump mass fraction must lie in (0,1)");
        }
        if !(theta1 > 0.0 && theta2 > 0.0) {
            return precondition("bump temperatures must be positive");
        }
        let kind = ProfileKind::BiMaxwellianBump {
            separation,
            alpha,
            theta1,
            theta2,
        };
        Ok(Self::with_kind(dimension, kind, 1.0))
    }

    pub fn vacuum(dimension: usize) -> Result<Self> {
        check_dimension(dimension)?;
        Ok(Self::with_kind(dimension, ProfileKind::Vacuum, 0.0))
    }

    /// Isotropic profile from radial samples; `radii` must start at 0.
    /// The Fourier profile is computed by Gauss–Legendre panels.
    pub fn tabulated(dimension: usize, radii: Vec<f64>, values: Vec<f64>, panels: usize) -> Result<Self> {
        if !(1..=3).contains(&dimension) {
            return Err(Error::Unsupported(format!(
                "tabulated radial profiles need d in {{1,2,3}}, got {dimension}"
            )));
        }
        if radii.first().copied() != Some(0.0) {
            return precondition("tabulated radii must start at 0");
        }
        if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return precondition("tabulated profile must be finite and nonnegative");
        }
        let spline = CubicSpline::new(radii, values)?;
        let gl = GaussLegendre::<f64>::new(8);
        let r_max = spline.hi();
        let h = r_max / panels.max(1) as f64;
        let omega = sphere_area(dimension);
        let mut nodes = Vec::with_capacity(panels.max(1) * 8);
        for p in 0..panels.max(1) {
            let a = p as f64 * h;
            for (r, w) in gl.mapped(a, a + h) {
                let mu = spline.eval_unchecked(r).0;
                nodes.push((r, w * omega * r.powi(dimension as i32 - 1) * mu));
            }
        }
        let mass: f64 = nodes.iter().map(|n| n.1).sum();
        if (mass - 1.0).abs() > 1e-6 {
            return precondition(format!("tabulated profile has mass {mass}, expected 1"));
        }
        let kind = ProfileKind::TabulatedRadial(TabulatedRadial { spline, nodes });
        Ok(Self::with_kind(dimension, kind, mass))
    }

    fn with_kind(dimension: usize, kind: ProfileKind, mass: f64) -> Self {
        Self {
            dimension,
            kind,
            mass,
            h1_weight_k: dimension as f64 + 1.0,
        }
    }

    pub fn with_h1_weight(mut self, k: f64) -> Self {
        self.h1_weight_k = k;
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn kind(&self) -> &ProfileKind {
        &self.kind
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn h1_weight_k(&self) -> f64 {
        self.h1_weight_k
    }

    pub fn is_radial(&self) -> bool {
        !matches!(self.kind, ProfileKind::BiMaxwellianBump { .. })
    }

    /// Gaussian mixture representation, when the profile has one.
    pub fn components(&self) -> Option<Vec<GaussianComponent>> {
        match self.kind {
            ProfileKind::Vacuum => Some(Vec::new()),
            ProfileKind::Maxwellian { theta } => Some(vec![GaussianComponent {
                weight: 1.0,
                shift: 0.0,
                theta,
            }]),
            ProfileKind::BiMaxwellianBump {
                separation,
                alpha,
                theta1,
                theta2,
            } => Some(vec![
                GaussianComponent {
                    weight: alpha,
                    shift: 0.0,
                    theta: theta1,
                },
                GaussianComponent {
                    weight: 1.0 - alpha,
                    shift: separation,
                    theta: theta2,
                },
            ]),
            ProfileKind::TabulatedRadial(_) => None,
        }
    }

    /// Largest velocity scale √θ among the components (1 for tabulated data).
    pub fn thermal_speed(&self) -> f64 {
        match &self.kind {
            ProfileKind::TabulatedRadial(t) => t.spline.hi() / 12.0,
            _ => self
                .components()
                .unwrap_or_default()
                .iter()
                .map(|c| c.theta.sqrt())
                .fold(1e-300, f64::max),
        }
    }

    fn check_len(&self, v: &[f64]) {
        assert_eq!(v.len(), self.dimension, "vector length must equal the dimension");
    }

    pub fn eval_mu(&self, v: &[f64]) -> Result<f64> {
        self.check_len(v);
        match &self.kind {
            ProfileKind::TabulatedRadial(t) => {
                let r = norm(v);
                t.spline.eval(r).map_err(|_| {
                    Error::Extrapolation(format!("|v| = {r} beyond tabulated radius {}", t.spline.hi()))
                })
            }
            _ => Ok(self
                .components()
                .unwrap_or_default()
                .iter()
                .map(|c| c.weight * gaussian(self.dimension, c, v))
                .sum()),
        }
    }

    pub fn grad_mu(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v);
        let d = self.dimension;
        match &self.kind {
            ProfileKind::TabulatedRadial(t) => {
                let r = norm(v);
                let (_, dmu) = t.spline.eval_with_deriv(r).map_err(|_| {
                    Error::Extrapolation(format!("|v| = {r} beyond tabulated radius {}", t.spline.hi()))
                })?;
                if r == 0.0 {
                    return Ok(vec![0.0; d]);
                }
                Ok(v.iter().map(|x| dmu * x / r).collect())
            }
            _ => {
                let mut g = vec![0.0; d];
                for c in self.components().unwrap_or_default() {
                    let n = c.weight * gaussian(d, &c, v);
                    for (j, gj) in g.iter_mut().enumerate() {
                        let y = if j == 0 { v[0] - c.shift } else { v[j] };
                        *gj -= y / c.theta * n;
                    }
                }
                Ok(g)
            }
        }
    }

    /// μ̂(η).
    pub fn fourier_mu(&self, eta: &[f64]) -> Complex64 {
        self.check_len(eta);
        match &self.kind {
            ProfileKind::TabulatedRadial(_) => Complex64::new(self.radial_jet(norm(eta)).0, 0.0),
            _ => {
                let k2: f64 = eta.iter().map(|x| x * x).sum();
                self.components()
                    .unwrap_or_default()
                    .iter()
                    .map(|c| {
                        c.weight
                            * Complex64::from_polar((-0.5 * c.theta * k2).exp(), -c.shift * eta[0])
                    })
                    .sum()
            }
        }
    }

    /// Fourier transform of ∇μ at η, equal to iη μ̂(η).
    pub fn fourier_grad_mu(&self, eta: &[f64]) -> Vec<Complex64> {
        let m = self.fourier_mu(eta);
        eta.iter().map(|&e| Complex64::new(0.0, e) * m).collect()
    }

    /// Radial Fourier profile m(k) with μ̂(η) = m(|η|).
    pub fn fourier_radial(&self, k: f64) -> Result<f64> {
        match &self.kind {
            ProfileKind::BiMaxwellianBump { .. } => {
                Err(Error::Unsupported("bi-Maxwellian profile is not radial".into()))
            }
            ProfileKind::Vacuum => Ok(0.0),
            ProfileKind::Maxwellian { theta } => Ok((-0.5 * theta * k * k).exp()),
            ProfileKind::TabulatedRadial(_) => Ok(self.radial_jet(k).0),
        }
    }

    /// m(k), m'(k), m''(k) for radial profiles.
    pub fn radial_jet(&self, k: f64) -> (f64, f64, f64) {
        match &self.kind {
            ProfileKind::Vacuum | ProfileKind::BiMaxwellianBump { .. } => (0.0, 0.0, 0.0),
            ProfileKind::Maxwellian { theta } => {
                let m = (-0.5 * theta * k * k).exp();
                (m, -theta * k * m, (theta * theta * k * k - theta) * m)
            }
            ProfileKind::TabulatedRadial(t) => {
                let d = self.dimension;
                t.nodes.iter().fold((0.0, 0.0, 0.0), |acc, &(r, w)| {
                    let (j0, j1, j2) = radial_kernel(d, k * r);
                    (acc.0 + w * j0, acc.1 + w * r * j1, acc.2 + w * r * r * j2)
                })
            }
        }
    }

    /// μ̂(sξ) and its first two s-derivatives.
    pub fn ray_jet(&self, xi: &[f64], s: f64) -> RayJet {
        self.check_len(xi);
        let k2: f64 = xi.iter().map(|x| x * x).sum();
        match &self.kind {
            ProfileKind::TabulatedRadial(_) => {
                let k = k2.sqrt();
                let (m0, m1, m2) = self.radial_jet(s * k);
                RayJet {
                    value: m0.into(),
                    d1: (k * m1).into(),
                    d2: (k2 * m2).into(),
                }
            }
            _ => {
                let mut jet = RayJet::default();
                for c in self.components().unwrap_or_default() {
                    // exp(-i κ s - β s²) with κ = a ξ₁ and β = θ|ξ|²/2.
                    let kappa = c.shift * xi[0];
                    let beta = 0.5 * c.theta * k2;
                    let f = c.weight * Complex64::from_polar((-beta * s * s).exp(), -kappa * s);
                    let l = Complex64::new(-2.0 * beta * s, -kappa);
                    jet.value += f;
                    jet.d1 += l * f;
                    jet.d2 += (l * l - 2.0 * beta) * f;
                }
                jet
            }
        }
    }

    /// Numerical audit of the (H1) weighted norms along the e₁ direction.
    pub fn verify_h1(&self, k: f64, max_order: usize) -> Result<H1Report> {
        let d = self.dimension;
        if !(k > d as f64) {
            return precondition(format!("(H1) weight must satisfy k > d = {d}, got {k}"));
        }
        let comps = match self.components() {
            Some(c) => c,
            None => {
                return Err(Error::Unsupported(
                    "tabulated profiles carry no derivative metadata for the (H1) audit".into(),
                ))
            }
        };
        let sup_orders = max_order.min(2);
        let l1_orders = max_order.min(2 * d + 5);
        let l1_weight = (4 * d + 6) as f64;
        let n_orders = sup_orders.max(l1_orders) + 1;
        if comps.is_empty() {
            return Ok(H1Report {
                weight_k: k,
                sup_norms: vec![0.0; sup_orders + 1],
                l1_norms: vec![0.0; l1_orders + 1],
                tail_bound: 0.0,
                satisfied: true,
            });
        }
        let st_min = comps.iter().map(|c| c.theta.sqrt()).fold(f64::INFINITY, f64::min);
        let st_max = comps.iter().map(|c| c.theta.sqrt()).fold(0.0, f64::max);
        let a_lo = comps.iter().map(|c| c.shift).fold(0.0, f64::min);
        let a_hi = comps.iter().map(|c| c.shift).fold(0.0, f64::max);
        let reach = 12.0 * st_max;
        // Dyadic spacing: sixteen cells per thermal length of the coldest component.
        let h = st_min / 16.0;
        let n1 = ((a_hi - a_lo + 2.0 * reach) / h).ceil() as usize + 1;
        let n_perp = if d == 1 { 1 } else { (reach / h).ceil() as usize + 1 };
        let perp_area = if d == 1 { 1.0 } else { sphere_area(d - 1) };
        let mut sup = vec![0.0f64; sup_orders + 1];
        let mut l1 = vec![0.0f64; l1_orders + 1];
        let mut boundary = 0.0f64;
        let mut he = vec![0.0; n_orders + 2];
        for i in 0..n1 {
            let v1 = a_lo - reach + i as f64 * h;
            let w1 = if i == 0 || i + 1 == n1 { 0.5 * h } else { h };
            for j in 0..n_perp {
                let rho = j as f64 * h;
                let (wp, jac) = if d == 1 {
                    (1.0, 1.0)
                } else {
                    let w = if j == 0 || j + 1 == n_perp { 0.5 * h } else { h };
                    (w, perp_area * rho.powi(d as i32 - 2))
                };
                let r2 = v1 * v1 + rho * rho;
                let bracket = (1.0 + r2).sqrt();
                let on_edge = i == 0 || i + 1 == n1 || j + 1 == n_perp;
                for o in 0..n_orders {
                    // ∂₁^{o} ∂₁ μ = Σ w (-1)^{o+1} θ^{-(o+1)/2} He_{o+1}(s) N_θ.
                    let mut val = 0.0;
                    for c in &comps {
                        let st = c.theta.sqrt();
                        let s = (v1 - c.shift) / st;
                        hermite_he(s, &mut he[..o + 2]);
                        let dens = c.weight
                            * (-(((v1 - c.shift).powi(2) + rho * rho) / (2.0 * c.theta))).exp()
                            / (2.0 * PI * c.theta).powf(d as f64 / 2.0);
                        let sign = if (o + 1) % 2 == 0 { 1.0 } else { -1.0 };
                        val += sign * st.powi(-(o as i32 + 1)) * he[o + 1] * dens;
                    }
                    if o <= sup_orders {
                        sup[o] = sup[o].max(bracket.powf(k) * val.abs());
                    }
                    if o <= l1_orders {
                        let weighted = bracket.powf(l1_weight) * val.abs();
                        l1[o] += w1 * wp * jac * weighted;
                        if on_edge {
                            boundary = boundary.max(weighted);
                        }
                    }
                }
            }
        }
        // Gaussian tail beyond the audit box: the integrand at the box edge
        // times the measure of a thermal shell.
        let tail_bound = boundary * sphere_area(d) * (reach + a_hi - a_lo).powi(d as i32 - 1) * st_max;
        let finite = sup.iter().chain(&l1).all(|x| x.is_finite());
        let scale = l1.iter().cloned().fold(0.0, f64::max).max(1e-300);
        Ok(H1Report {
            weight_k: k,
            sup_norms: sup,
            l1_norms: l1,
            tail_bound,
            satisfied: finite && tail_bound <= 1e-6 * scale,
        })
    }
}

/// Outcome of the (H1) audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H1Report {
    pub weight_k: f64,
    /// sup ⟨v⟩^k |∂₁^j ∂₁μ| for j = 0..=min(max_order, 2).
    pub sup_norms: Vec<f64>,
    /// ∫ ⟨v⟩^{4d+6} |∂₁^j ∂₁μ| for j = 0..=min(max_order, 2d+5).
    pub l1_norms: Vec<f64>,
    pub tail_bound: f64,
    pub satisfied: bool,
}

impl H1Report {
    pub fn verdict(&self) -> &'static str {
        if self.satisfied {
            "H1 satisfied"
        } else {
            "H1 not confirmed"
        }
    }
}

fn check_dimension(d: usize) -> Result<()> {
    if d == 0 {
        return precondition("dimension must be at least 1");
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gaussian(d: usize, c: &GaussianComponent, v: &[f64]) -> f64 {
    let mut r2 = 0.0;
    for (j, x) in v.iter().enumerate() {
        let y = if j == 0 { x - c.shift } else { *x };
        r2 += y * y;
    }
    (-r2 / (2.0 * c.theta)).exp() / (2.0 * PI * c.theta).powf(d as f64 / 2.0)
}

/// Probabilists' Hermite polynomials He_0..He_{n-1} at `x`.
fn hermite_he(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for n in 2..out.len() {
        out[n] = x * out[n - 1] - (n - 1) as f64 * out[n - 2];
    }
}

/// Surface area ω_d of the unit sphere in ℝ^d.
pub fn sphere_area(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    2.0 * PI.powf(half) / libm::tgamma(half)
}

/// The radial kernel j_d(z) with ĝ(k) = ω_d ∫ g(r) r^{d-1} j_d(kr) dr, and its
/// first two derivatives.
pub fn radial_kernel(d: usize, z: f64) -> (f64, f64, f64) {
    match d {
        1 => (z.cos(), -z.sin(), -z.cos()),
        2 => {
            let j0 = libm::j0(z);
            let j1 = libm::j1(z);
            let j1_over_z = if z.abs() < 1e-8 { 0.5 } else { j1 / z };
            (j0, -j1, -j0 + j1_over_z)
        }
        _ => {
            if z.abs() < 1e-2 {
                let z2 = z * z;
                (
                    1.0 - z2 / 6.0 + z2 * z2 / 120.0,
                    -z / 3.0 + z * z2 / 30.0,
                    -1.0 / 3.0 + z2 / 10.0 - z2 * z2 / 168.0,
                )
            } else {
                let (s, c) = z.sin_cos();
                let j = s / z;
                let dj = (z * c - s) / (z * z);
                (j, dj, -j - 2.0 * dj / z)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn maxwellian_normalisation_at_origin() {
        let p = EquilibriumProfile::maxwellian(3, 1.0).unwrap();
        assert_relative_eq!(p.eval_mu(&[0.0; 3]).unwrap(), (2.0 * PI).powf(-1.5), max_relative = 1e-14);
        assert!(p.eval_mu(&[40.0, 0.0, 0.0]).unwrap() < 1e-300);
    }

    #[test]
    fn maxwellian_jet_matches_closed_form() {
        let p = EquilibriumProfile::maxwellian(2, 0.7).unwrap();
        let xi = [0.3, -0.4];
        let s = 1.3;
        let jet = p.ray_jet(&xi, s);
        let k = 0.5;
        let (m0, m1, m2) = p.radial_jet(s * k);
        assert_relative_eq!(jet.value.re, m0, max_relative = 1e-14);
        assert_relative_eq!(jet.d1.re, k * m1, max_relative = 1e-13);
        assert_relative_eq!(jet.d2.re, k * k * m2, max_relative = 1e-13);
    }

    #[test]
    fn fourier_gradient_is_i_eta_times_m() {
        let p = EquilibriumProfile::maxwellian(3, 1.0).unwrap();
        let g = p.fourier_grad_mu(&[1.0, 0.0, 0.0]);
        assert_relative_eq!(g[0].im, (-0.5f64).exp(), max_relative = 1e-14);
        assert_eq!(g[0].re, 0.0);
        assert_eq!(g[1], Complex64::new(0.0, 0.0));
        let z = p.fourier_grad_mu(&[0.0; 3]);
        assert!(z.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn bump_is_not_radial() {
        let p = EquilibriumProfile::bi_maxwellian(1, 1.0, 0.5, 0.05, 0.05).unwrap();
        assert!(p.fourier_radial(1.0).is_err());
        assert!(!p.is_radial());
    }

    #[test]
    fn radial_kernels_match_derivatives() {
        for d in 1..=3 {
            for z in [0.005, 0.4, 3.0, 11.0] {
                let h = 1e-5;
                let (j, dj, ddj) = radial_kernel(d, z);
                let (jp, djp, _) = radial_kernel(d, z + h);
                let (jm, djm, _) = radial_kernel(d, z - h);
                assert_relative_eq!(dj, (jp - jm) / (2.0 * h), epsilon = 1e-8);
                assert_relative_eq!(ddj, (djp - djm) / (2.0 * h), epsilon = 1e-7);
                assert!(j.abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(sphere_area(1), 2.0, max_relative = 1e-14);
        assert_relative_eq!(sphere_area(2), 2.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(sphere_area(3), 4.0 * PI, max_relative = 1e-14);
    }

    #[test]
    fn tabulated_maxwellian_reproduces_closed_form() {
        let radii: Vec<f64> = (0..=1200).map(|j| j as f64 * 0.01).collect();
        let values: Vec<f64> = radii.iter().map(|r| (2.0 * PI).powf(-1.5) * (-r * r / 2.0).exp()).collect();
        let p = EquilibriumProfile::tabulated(3, radii, values, 256).unwrap();
        for k in [0.0, 0.5, 1.0, 2.5] {
            let (m0, m1, m2) = p.radial_jet(k);
            let e = (-k * k / 2.0).exp();
            assert_relative_eq!(m0, e, epsilon = 1e-7);
            assert_relative_eq!(m1, -k * e, epsilon = 1e-6);
            assert_relative_eq!(m2, (k * k - 1.0) * e, epsilon = 1e-6);
        }
        assert!(p.eval_mu(&[20.0, 0.0, 0.0]).is_err());
        assert!(p.verify_h1(4.0, 3).is_err());
    }
}
