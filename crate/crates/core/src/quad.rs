//! Gauss–Legendre and Gauss–Hermite rules, generic over the scalar type.

use crate::scalar::Real;
use num_traits::Zero;
use std::ops::{Add, Mul};

const MAX_NEWTON: usize = 100;

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> GaussLegendre<T> {
    /// Builds the `n`-point rule by Newton iteration on the Legendre recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![T::zero(); n];
        let mut weights = vec![T::zero(); n];
        let nf = T::idx(n);
        let half = T::lit(0.5);
        let tol = T::epsilon() * T::lit(4.0);
        for i in 0..n.div_ceil(2) {
            let mut z = (T::PI() * (T::idx(i) + T::lit(0.75)) / (nf + half)).cos();
            let mut pp = T::one();
            for _ in 0..MAX_NEWTON {
                let (p1, p2) = legendre_pair(n, z);
                pp = nf * (z * p1 - p2) / (z * z - T::one());
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() <= tol {
                    let (p1, p2) = legendre_pair(n, z);
                    pp = nf * (z * p1 - p2) / (z * z - T::one());
                    break;
                }
            }
            let w = T::lit(2.0) / ((T::one() - z * z) * pp * pp);
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = T::zero();
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: T, b: T) -> impl Iterator<Item = (T, T)> + '_ {
        let c = (a + b) * T::lit(0.5);
        let h = (b - a) * T::lit(0.5);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (c + h * x, h * w))
    }

    /// Integral of `f` over `[a, b]` with a single application of the rule.
    pub fn integrate<R, F>(&self, a: T, b: T, mut f: F) -> R
    where
        R: Zero + Add<Output = R> + Mul<T, Output = R>,
        F: FnMut(T) -> R,
    {
        self.mapped(a, b).fold(R::zero(), |acc, (x, w)| acc + f(x) * w)
    }

    /// Composite rule with `panels` equal panels on `[a, b]`.
    pub fn integrate_panels<R, F>(&self, a: T, b: T, panels: usize, mut f: F) -> R
    where
        R: Zero + Add<Output = R> + Mul<T, Output = R>,
        F: FnMut(T) -> R,
    {
        let panels = panels.max(1);
        let h = (b - a) / T::idx(panels);
        (0..panels).fold(R::zero(), |acc, p| {
            let lo = a + h * T::idx(p);
            acc + self.integrate(lo, lo + h, &mut f)
        })
    }
}

fn legendre_pair<T: Real>(n: usize, z: T) -> (T, T) {
    let mut p1 = T::one();
    let mut p2 = T::zero();
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = T::idx(j);
        p1 = ((T::lit(2.0) * jf - T::one()) * z * p2 - (jf - T::one()) * p3) / jf;
    }
    (p1, p2)
}

/// Gauss–Hermite rule for the weight `exp(-x²/2)` on the real line.
#[derive(Debug, Clone)]
pub struct GaussHermite<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> GaussHermite<T> {
    /// Builds the `n`-point rule from the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
        let mut x = vec![T::zero(); n];
        let mut w = vec![T::zero(); n];
        let nf = T::idx(n);
        let two = T::lit(2.0);
        let pim4 = T::PI().powf(T::lit(-0.25));
        let tol = T::epsilon() * T::lit(8.0);
        let mut z = T::zero();
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => {
                    let m = two * nf + T::one();
                    m.sqrt() - T::lit(1.85575) * m.powf(T::lit(-1.0 / 6.0))
                }
                1 => z - T::lit(1.14) * nf.powf(T::lit(0.426)) / z,
                2 => T::lit(1.86) * z - T::lit(0.86) * x[0],
                3 => T::lit(1.91) * z - T::lit(0.91) * x[1],
                _ => two * z - x[i - 2],
            };
            let mut pp = T::one();
            for _ in 0..MAX_NEWTON {
                let mut p1 = pim4;
                let mut p2 = T::zero();
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = T::idx(j);
                    p1 = z * (two / (jf + T::one())).sqrt() * p2
                        - (jf / (jf + T::one())).sqrt() * p3;
                }
                pp = (two * nf).sqrt() * p2;
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() <= tol * (T::one() + z.abs()) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = two / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            x[n / 2] = T::zero();
        }
        // Rescale from weight exp(-y^2) to exp(-x^2/2) with x = sqrt(2) y.
        let s = two.sqrt();
        let mut pairs: Vec<(T, T)> = x.into_iter().zip(w).map(|(a, b)| (a * s, b * s)).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite node"));
        let (nodes, weights) = pairs.into_iter().unzip();
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Expectation of `f(m + s Z)` for a standard normal `Z`.
    pub fn expectation<R, F>(&self, mean: T, std: T, mut f: F) -> R
    where
        R: Zero + Add<Output = R> + Mul<T, Output = R>,
        F: FnMut(T) -> R,
    {
        let norm = (T::lit(2.0) * T::PI()).sqrt().recip();
        self.nodes
            .iter()
            .zip(&self.weights)
            .fold(R::zero(), |acc, (&x, &w)| acc + f(mean + std * x) * (w * norm))
    }
}

/// Trapezoidal weights on a uniform grid of `n` points with spacing `h`.
pub fn trapezoid_weights<T: Real>(n: usize, h: T) -> Vec<T> {
    let mut w = vec![h; n];
    if n >= 2 {
        w[0] = h * T::lit(0.5);
        w[n - 1] = h * T::lit(0.5);
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let gl = GaussLegendre::<f64>::new(8);
        for p in 0..16 {
            let got: f64 = gl.integrate(0.0, 2.0, |x| x.powi(p));
            let exact = 2f64.powi(p + 1) / f64::from(p + 1);
            assert_relative_eq!(got, exact, max_relative = 1e-13);
        }
    }

    #[test]
    fn legendre_weights_sum_to_two_in_f32() {
        let gl = GaussLegendre::<f32>::new(12);
        let s: f32 = gl.weights().iter().sum();
        assert!((s - 2.0).abs() < 1e-5);
    }

    #[test]
    fn legendre_panels_match_smooth_integral() {
        let gl = GaussLegendre::<f64>::new(10);
        let got: f64 = gl.integrate_panels(0.0, 10.0, 8, |x| x.sin());
        assert_relative_eq!(got, 1.0 - 10f64.cos(), max_relative = 1e-13);
    }

    #[test]
    fn hermite_reproduces_gaussian_moments() {
        let gh = GaussHermite::<f64>::new(40);
        let m0: f64 = gh.expectation(0.0, 1.0, |_| 1.0);
        let m2: f64 = gh.expectation(0.0, 1.0, |x| x * x);
        let m4: f64 = gh.expectation(0.0, 1.0, |x| x.powi(4));
        let m10: f64 = gh.expectation(0.0, 1.0, |x| x.powi(10));
        assert_relative_eq!(m0, 1.0, max_relative = 1e-13);
        assert_relative_eq!(m2, 1.0, max_relative = 1e-13);
        assert_relative_eq!(m4, 3.0, max_relative = 1e-12);
        assert_relative_eq!(m10, 945.0, max_relative = 1e-11);
    }

    #[test]
    fn hermite_large_rule_is_accurate() {
        let gh = GaussHermite::<f64>::new(64);
        let got: f64 = gh.expectation(0.5, 2.0, |x| (0.3 * x).cos());
        let exact = (0.15f64).cos() * (-0.5 * 0.36f64).exp();
        assert_relative_eq!(got, exact, max_relative = 1e-12);
    }
}
