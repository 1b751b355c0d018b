//! Interpolation kernels: natural cubic splines on nonuniform knots and
//! local Lagrange stencils on uniform (optionally periodic) grids.

use crate::error::{precondition, Error, Result};
use crate::scalar::Real;

/// Natural cubic spline through `(x_j, y_j)` with strictly increasing knots.
#[derive(Debug, Clone)]
pub struct CubicSpline<T> {
    x: Vec<T>,
    y: Vec<T>,
    m: Vec<T>,
}

impl<T: Real> CubicSpline<T> {
    pub fn new(x: Vec<T>, y: Vec<T>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return precondition("spline needs at least two knots and matching values");
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return precondition("spline knots must be strictly increasing");
        }
        let mut m = vec![T::zero(); n];
        if n > 2 {
            // Thomas algorithm for the interior second derivatives.
            let mut c = vec![T::zero(); n];
            let mut d = vec![T::zero(); n];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                let a = h0;
                let b = T::lit(2.0) * (h0 + h1);
                let cc = h1;
                let rhs = T::lit(6.0) * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
                let denom = b - a * c[i - 1];
                c[i] = cc / denom;
                d[i] = (rhs - a * d[i - 1]) / denom;
            }
            for i in (1..n - 1).rev() {
                m[i] = d[i] - c[i] * m[i + 1];
            }
        }
        Ok(Self { x, y, m })
    }

    pub fn knots(&self) -> &[T] {
        &self.x
    }

    pub fn values(&self) -> &[T] {
        &self.y
    }

    pub fn lo(&self) -> T {
        self.x[0]
    }

    pub fn hi(&self) -> T {
        self.x[self.x.len() - 1]
    }

    fn segment(&self, t: T) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|p| p.partial_cmp(&t).expect("finite knot")) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    /// Value and first derivative at `t`; errors outside the knot range.
    pub fn eval_with_deriv(&self, t: T) -> Result<(T, T)> {
        if t < self.lo() || t > self.hi() {
            return Err(Error::Extrapolation(format!(
                "{t} not in [{}, {}]",
                self.lo(),
                self.hi()
            )));
        }
        Ok(self.eval_unchecked(t))
    }

    pub fn eval(&self, t: T) -> Result<T> {
        self.eval_with_deriv(t).map(|(v, _)| v)
    }

    /// Evaluation without range checking; the end cubics are extended.
    pub fn eval_unchecked(&self, t: T) -> (T, T) {
        self.eval_segment(self.segment(t), t)
    }

    /// Value and derivative of the cubic on segment `i` (between knots `i`
    /// and `i + 1`), skipping the knot search.
    pub fn eval_segment(&self, i: usize, t: T) -> (T, T) {
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        let six = T::lit(6.0);
        let v = a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / six;
        let dv = (self.y[i + 1] - self.y[i]) / h
            + ((T::one() - T::lit(3.0) * a * a) * self.m[i]
                + (T::lit(3.0) * b * b - T::one()) * self.m[i + 1])
                * h
                / six;
        (v, dv)
    }
}

/// Cubic Lagrange weights for nodes at offsets `-1, 0, 1, 2` and fraction `s`.
#[inline]
pub fn cubic_weights<T: Real>(s: T) -> [T; 4] {
    let one = T::one();
    let two = T::lit(2.0);
    let six = T::lit(6.0);
    [
        -s * (s - one) * (s - two) / six,
        (s + one) * (s - one) * (s - two) / two,
        -(s + one) * s * (s - two) / two,
        (s + one) * s * (s - one) / six,
    ]
}

/// Derivatives (with respect to `s`) of [`cubic_weights`].
#[inline]
pub fn cubic_weights_deriv<T: Real>(s: T) -> [T; 4] {
    let one = T::one();
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let six = T::lit(6.0);
    [
        -(three * s * s - T::lit(6.0) * s + two) / six,
        (three * s * s - T::lit(4.0) * s - one) / two,
        -(three * s * s - two * s - two) / two,
        (three * s * s - one) / six,
    ]
}

/// Quintic Lagrange weights for nodes at offsets `-2..=3` and fraction `s`.
#[inline]
pub fn quintic_weights<T: Real>(s: T) -> [T; 6] {
    let mut w = [T::zero(); 6];
    for (j, wj) in w.iter_mut().enumerate() {
        let xj = T::idx(j) - T::lit(2.0);
        let mut num = T::one();
        let mut den = T::one();
        for k in 0..6 {
            if k != j {
                let xk = T::idx(k) - T::lit(2.0);
                num *= s - xk;
                den *= xj - xk;
            }
        }
        *wj = num / den;
    }
    w
}

/// Splits a coordinate on a uniform grid into base index and fraction.
#[inline]
pub fn locate<T: Real>(x: T, origin: T, h: T) -> (i64, T) {
    let u = (x - origin) / h;
    let f = u.floor();
    (f.to_i64().expect("finite coordinate"), u - f)
}

/// Cubic interpolation of periodic samples `values[j] = f(origin + j h)`.
#[inline]
pub fn periodic_cubic<T: Real>(values: &[T], origin: T, h: T, x: T) -> T {
    let n = values.len() as i64;
    let (i, s) = locate(x, origin, h);
    let w = cubic_weights(s);
    (0..4).fold(T::zero(), |acc, k| {
        acc + w[k] * values[(i - 1 + k as i64).rem_euclid(n) as usize]
    })
}

/// Quintic interpolation of periodic samples.
#[inline]
pub fn periodic_quintic<T: Real>(values: &[T], origin: T, h: T, x: T) -> T {
    let n = values.len() as i64;
    let (i, s) = locate(x, origin, h);
    let w = quintic_weights(s);
    (0..6).fold(T::zero(), |acc, k| {
        acc + w[k] * values[(i - 2 + k as i64).rem_euclid(n) as usize]
    })
}

/// Cubic interpolation on a bounded uniform grid; the stencil is clamped
/// into range so points slightly outside are extrapolated by the end cubic.
#[inline]
pub fn clamped_cubic<T: Real>(values: &[T], origin: T, h: T, x: T) -> T {
    let n = values.len() as i64;
    debug_assert!(n >= 4);
    let (i, s) = locate(x, origin, h);
    let base = (i - 1).clamp(0, n - 4);
    let s = s + T::from_i64(i - 1 - base).expect("small offset");
    let w = cubic_weights(s);
    (0..4).fold(T::zero(), |acc, k| acc + w[k] * values[(base + k as i64) as usize])
}
