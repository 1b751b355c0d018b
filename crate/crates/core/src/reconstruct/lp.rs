//! Dyadic Littlewood-Paley blocks of radial symbols.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::{geometric_radii, norms, radial_inverse_fourier, resolvent_symbol, InverseOptions, Norms, RadialSymbol};
use crate::error::{Error, Result};
use crate::volterra::ModeSeries;

/// Smooth step rising from 0 at `x ≤ 0` to 1 at `x ≥ 1`, built from the
/// exp(-1/x) mollifier.
fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a / (a + b)
}

/// The fixed annular cutoff ψ: 1 on `[1/2, 2]`, 0 outside `(1/4, 4)`.
pub fn lp_bump(s: f64) -> f64 {
    if s <= 0.25 || s >= 4.0 {
        0.0
    } else if s < 0.5 {
        smooth_step(4.0 * s - 1.0)
    } else if s <= 2.0 {
        1.0
    } else {
        smooth_step((4.0 - s) / 2.0)
    }
}

/// Σ_q ψ(s / 2^q); lies in `[2, 4]` for every `s > 0`.
pub fn lp_partition_sum(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let centre = s.log2().floor() as i32;
    (centre - 3..=centre + 3).map(|q| lp_bump(s / 2f64.powi(q))).sum()
}

/// Whether blocks use the raw cutoff χ_q or χ_q divided by the partition sum,
/// so that blocks add up to the symbol exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpNormalization {
    Raw,
    PartitionOfUnity,
}

/// Frequency variables the block is cut in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpDomain {
    Space,
    SpaceTime,
}

/// The symbol f̂·χ_q.
pub struct LpBlock<'a, S: ?Sized> {
    inner: &'a S,
    q: i32,
    normalization: LpNormalization,
    breaks: Vec<f64>,
}

impl<S: RadialSymbol + ?Sized> LpBlock<'_, S> {
    fn cutoff(&self, k: f64) -> f64 {
        let s = k / 2f64.powi(self.q);
        let chi = lp_bump(s);
        match self.normalization {
            LpNormalization::Raw => chi,
            LpNormalization::PartitionOfUnity if chi > 0.0 => chi / lp_partition_sum(s),
            LpNormalization::PartitionOfUnity => 0.0,
        }
    }
}

impl<S: RadialSymbol + ?Sized> RadialSymbol for LpBlock<'_, S> {
    fn breakpoints(&self) -> Cow<'_, [f64]> {
        Cow::Borrowed(&self.breaks)
    }

    fn value_on(&self, _piece: usize, k: f64) -> f64 {
        self.value(k)
    }

    fn value(&self, k: f64) -> f64 {
        let c = self.cutoff(k);
        if c == 0.0 {
            0.0
        } else {
            c * self.inner.value(k)
        }
    }

    fn max_panel(&self) -> f64 {
        // The transitions of the cutoff have width 2^q / 4 and are steep
        // near their ends.
        self.inner.max_panel().min(2f64.powi(self.q) / 64.0)
    }
}

/// The block f̂·χ_q of a radial symbol.
pub fn lp_block<S: RadialSymbol + ?Sized>(
    symbol: &S,
    q: i32,
    domain: LpDomain,
    normalization: LpNormalization,
) -> Result<LpBlock<'_, S>> {
    if domain == LpDomain::SpaceTime {
        return Err(Error::Unsupported("space-time Littlewood-Paley blocks".into()));
    }
    let scale = 2f64.powi(q);
    let edges = [0.25, 0.5, 1.0, 2.0, 4.0].map(|s| s * scale);
    let mut breaks: Vec<f64> = symbol
        .breakpoints()
        .iter()
        .copied()
        .filter(|&k| k > edges[0] && k < edges[4])
        .chain(edges)
        .chain([0.0])
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    Ok(LpBlock { inner: symbol, q, normalization, breaks })
}

/// Norms of the block G_q(t) of the resolvent kernel at the grid time nearest `t`.
pub fn gq_block_norms(resolvent: &ModeSeries<f64>, d: usize, q: i32, t: f64) -> Result<Norms> {
    let step = resolvent.grid().nearest(t);
    let t_node = resolvent.grid().node(step);
    let symbol = resolvent_symbol(resolvent, step)?;
    let block = lp_block(&symbol, q, LpDomain::Space, LpNormalization::PartitionOfUnity)?;
    // The cutoff is Gevrey rather than analytic, so the block decays only
    // like exp(-c (2^q r)^{1/2}); radii scale with the block wavelength.
    let s = 2f64.powi(-q);
    let radii = geometric_radii(1e-3 * s, (3e3 * s).max(30.0 * t_node), 1024);
    norms(&radial_inverse_fourier(d, &block, &radii, t_node, InverseOptions::default())?)
}

/// Bernstein ratios ‖∇u‖_p / ‖u‖_p for p = 1 and p = ∞, where û = χ_q.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernsteinRatios {
    pub q: i32,
    pub l1: f64,
    pub linf: f64,
}

pub fn bernstein_ratios(d: usize, q: i32) -> Result<BernsteinRatios> {
    let one = super::AnalyticSymbol::truncated(|_| 1.0, 4.0 * 2f64.powi(q), f64::INFINITY);
    let block = lp_block(&one, q, LpDomain::Space, LpNormalization::Raw)?;
    let scale = 2f64.powi(-q);
    let radii = geometric_radii(1e-3 * scale, 2e3 * scale, 2048);
    let snap = radial_inverse_fourier(d, &block, &radii, 0.0, InverseOptions::default().with_gradient())?;
    let u = norms(&snap)?;
    let du = snap.gradient_norms()?;
    Ok(BernsteinRatios { q, l1: du.l1 / u.l1, linf: du.linf / u.linf })
}

#[cfg(test)]
mod tests {
    use super::super::AnalyticSymbol;
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bump_plateau_and_support() {
        assert_eq!(lp_bump(0.25), 0.0);
        assert_eq!(lp_bump(4.0), 0.0);
        for s in [0.5, 1.0, 1.7, 2.0] {
            assert_eq!(lp_bump(s), 1.0);
        }
        assert!(lp_bump(0.3) > 0.0 && lp_bump(0.3) < 1.0);
        assert!(lp_bump(3.0) > 0.0 && lp_bump(3.0) < 1.0);
    }

    #[test]
    fn partition_sum_is_bounded_and_scale_periodic() {
        for i in 0..200 {
            let s = 0.01 * 1.05f64.powi(i);
            let sum = lp_partition_sum(s);
            assert!((2.0..=4.0).contains(&sum), "s={s} sum={sum}");
            assert_relative_eq!(sum, lp_partition_sum(2.0 * s), max_relative = 1e-14);
        }
    }

    #[test]
    fn block_is_identity_on_the_plateau() {
        let sym = AnalyticSymbol::truncated(|k: f64| k.sin() + 2.0, 10.0, 1.0);
        let block = lp_block(&sym, 0, LpDomain::Space, LpNormalization::Raw).unwrap();
        for k in [0.5, 0.8, 1.3, 2.0] {
            assert_eq!(block.value(k), sym.value(k));
        }
    }

    #[test]
    fn normalised_blocks_sum_to_the_symbol() {
        let sym = AnalyticSymbol::truncated(|k: f64| (-k).exp(), 50.0, 1.0);
        let blocks: Vec<_> = (-8..=6)
            .map(|q| lp_block(&sym, q, LpDomain::Space, LpNormalization::PartitionOfUnity).unwrap())
            .collect();
        for k in [0.01, 0.1, 0.37, 1.0, 5.5, 20.0] {
            let total: f64 = blocks.iter().map(|b| b.value(k)).sum();
            assert_relative_eq!(total, sym.value(k), max_relative = 1e-14);
        }
    }

    #[test]
    fn space_time_blocks_are_unsupported() {
        let sym = AnalyticSymbol::truncated(|_| 1.0, 1.0, 1.0);
        assert!(matches!(
            lp_block(&sym, 0, LpDomain::SpaceTime, LpNormalization::Raw),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn block_scaling_by_change_of_variables() {
        let f = |k: f64| (-0.3 * k * k).exp() * (1.0 + k);
        let q = 2;
        let lam = 2f64.powi(q);
        let sym = AnalyticSymbol::truncated(f, 64.0, 0.5);
        let dilated = AnalyticSymbol::truncated(move |k: f64| f(lam * k), 64.0 / lam, 0.5 / lam);
        let bq = lp_block(&sym, q, LpDomain::Space, LpNormalization::Raw).unwrap();
        let b0 = lp_block(&dilated, 0, LpDomain::Space, LpNormalization::Raw).unwrap();
        let radii = geometric_radii(1e-2, 20.0, 40);
        let scaled: Vec<f64> = radii.iter().map(|r| r * lam).collect();
        let a = radial_inverse_fourier(3, &bq, &radii, 0.0, InverseOptions::default()).unwrap();
        let b = radial_inverse_fourier(3, &b0, &scaled, 0.0, InverseOptions::default()).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - lam.powi(3) * y).abs() < 1e-9 * lam.powi(3));
        }
    }

    #[test]
    fn bernstein_ratios_scale_dyadically() {
        let r0 = bernstein_ratios(3, 0).unwrap();
        assert!(r0.l1 > 0.25 && r0.l1 < 4.0, "{r0:?}");
        assert!(r0.linf > 0.25 && r0.linf < 4.0, "{r0:?}");
        let r2 = bernstein_ratios(3, 2).unwrap();
        assert_relative_eq!(r2.l1, 4.0 * r0.l1, max_relative = 1e-4);
        assert_relative_eq!(r2.linf, 4.0 * r0.linf, max_relative = 1e-4);
    }
}
