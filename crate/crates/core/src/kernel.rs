//! The atomic response e^{−(b−t′)} and its convolutions with pulse envelopes.
//!
//! Every emission amplitude in the crate is assembled from integrals of the form
//! `∫_a^b e^{−(b−t′)} f(t′) dt′`. The functions here return the unsigned integral;
//! the emission phase is applied by the amplitude layer.

use num_complex::Complex;

use crate::error::{Result, ScatterError};
use crate::model::{Bandwidth, PulseProfile, TimePoint};
use crate::quadrature::{integrate, PanelHint, QuadratureSpec};
use crate::scalar::{re, Real};

/// Absorption window [a, b] of a single emission at time b.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpan<T> {
    a: TimePoint<T>,
    b: TimePoint<T>,
}

impl<T: Real> KernelSpan<T> {
    pub fn new(a: TimePoint<T>, b: TimePoint<T>) -> Result<Self> {
        if a.value() > b.value() {
            return Err(ScatterError::InvalidSpan {
                a: a.value().to_f64().unwrap_or(f64::NAN),
                b: b.value().to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(Self { a, b })
    }

    /// Span from raw values; both must be valid times with a ≤ b.
    pub fn from_values(a: T, b: T) -> Result<Self> {
        Self::new(TimePoint::new(a)?, TimePoint::new(b)?)
    }

    /// Window starting at the wavefront.
    pub fn from_origin(b: TimePoint<T>) -> Self {
        Self { a: TimePoint::zero(), b }
    }

    pub fn start(&self) -> T {
        self.a.value()
    }

    pub fn end(&self) -> T {
        self.b.value()
    }
}

/// ∫_a^b e^{−(b−t′)} ξ(t′) dt′ for a pulse envelope.
pub fn kernel_convolve<T: Real>(
    profile: &PulseProfile<T>,
    span: KernelSpan<T>,
    quad: &QuadratureSpec<T>,
) -> Result<Complex<T>> {
    let (a, b) = (span.start(), span.end());
    let upper = b.min(profile.horizon().value());
    if upper <= a {
        return Ok(re(T::zero()));
    }
    let hint = profile.panel_hint(a, upper);
    convolve_with(|t| profile.eval(t), a, b, upper, quad, &hint)
}

/// ∫_a^{upper} e^{−(b−t′)} f(t′) dt′ with `upper ≤ b`, for arbitrary integrands.
pub fn convolve_with<T: Real>(
    f: impl Fn(T) -> Complex<T>,
    a: T,
    b: T,
    upper: T,
    quad: &QuadratureSpec<T>,
    hint: &PanelHint<T>,
) -> Result<Complex<T>> {
    integrate(|t| f(t) * (t - b).exp(), a, upper.min(b), quad, hint).map(|e| e.value)
}

/// Closed-form convolution of the exponential envelope of bandwidth Γ over
/// the window [τ_prev, τ_i], extended to an infinite horizon.
pub fn h_closed_form<T: Real>(tau_i: TimePoint<T>, tau_prev: TimePoint<T>, gamma: Bandwidth<T>) -> Result<T> {
    let (b, a, g) = (tau_i.value(), tau_prev.value(), gamma.value());
    if a > b {
        return Err(ScatterError::InvalidSpan {
            a: a.to_f64().unwrap_or(f64::NAN),
            b: b.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(h_unchecked(b, a, g))
}

/// Threshold on |1 − Γ/2| below which the removable-singularity limit is used.
pub const DEGENERACY_EPSILON: f64 = 1e-6;

#[inline]
pub(crate) fn h_unchecked<T: Real>(b: T, a: T, g: T) -> T {
    let x = T::one() - g * T::lit(0.5);
    let w = b - a;
    if x.abs() < T::lit(DEGENERACY_EPSILON) {
        // symmetric expansion about Γ = 2; reduces to √2 (b − a) e^{−b} there
        let z = w * x;
        return g.sqrt() * w * (-b + x * (a + b) * T::lit(0.5)).exp() * (T::one() + z * z / T::lit(24.0));
    }
    let z = w * x;
    if z > T::one() {
        // no cancellation: the two exponentials differ by more than a factor e
        return g.sqrt() * ((-b * g * T::lit(0.5)).exp() - (-b + a * x).exp()) / x;
    }
    let exprel = if z == T::zero() { T::one() } else { z.exp_m1() / z };
    g.sqrt() * (-b + a * x).exp() * w * exprel
}

/// ∫_{τ_prev}^∞ e^{−mτΓ} |h(τ, τ_prev)|² dτ in closed form.
pub fn weighted_h_norm_integral<T: Real>(m: usize, gamma: Bandwidth<T>, tau_prev: TimePoint<T>) -> T {
    let g = gamma.value();
    let mf = T::from_usize_lossy(m);
    let one = T::one();
    let two = T::lit(2.0);
    T::lit(4.0) * (-(one + mf) * tau_prev.value() * g).exp()
        / ((one + mf) * (two + mf * g) * (two + g + two * mf * g))
}

/// Convolutions K(0, x_j) on a uniform grid x_j = j·step, built by the recurrence
/// K(0, x_j) = e^{−step} K(0, x_{j−1}) + ∫_{x_{j−1}}^{x_j} e^{−(x_j−t′)} f(t′) dt′.
///
/// Any window between grid nodes follows as K(x_i, x_j) = K(0, x_j) − e^{−(x_j−x_i)} K(0, x_i).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionTable<T> {
    step: T,
    prefix: Vec<Complex<T>>,
}

impl<T: Real> ConvolutionTable<T> {
    pub fn for_profile(profile: &PulseProfile<T>, step: T, n_nodes: usize, quad: &QuadratureSpec<T>) -> Result<Self> {
        Self::build(|t| profile.eval(t), |a, b| profile.panel_hint(a, b), step, n_nodes, quad)
    }

    pub fn build(
        f: impl Fn(T) -> Complex<T>,
        hint: impl Fn(T, T) -> PanelHint<T>,
        step: T,
        n_nodes: usize,
        quad: &QuadratureSpec<T>,
    ) -> Result<Self> {
        if !(step > T::zero()) || n_nodes == 0 {
            return Err(ScatterError::BadGrid);
        }
        let decay = (-step).exp();
        let mut prefix = Vec::with_capacity(n_nodes);
        prefix.push(re(T::zero()));
        for j in 1..n_nodes {
            let (lo, hi) = (step * T::from_usize_lossy(j - 1), step * T::from_usize_lossy(j));
            let cell = convolve_with(&f, lo, hi, hi, quad, &hint(lo, hi))?;
            let prev = prefix[j - 1];
            prefix.push(prev * decay + cell);
        }
        Ok(Self { step, prefix })
    }

    pub fn step(&self) -> T {
        self.step
    }

    pub fn len(&self) -> usize {
        self.prefix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefix.is_empty()
    }

    pub fn node(&self, j: usize) -> T {
        self.step * T::from_usize_lossy(j)
    }

    /// K(0, x_j).
    #[inline]
    pub fn from_origin(&self, j: usize) -> Complex<T> {
        self.prefix[j]
    }

    /// K(x_i, x_j) for i ≤ j.
    #[inline]
    pub fn span(&self, i: usize, j: usize) -> Complex<T> {
        debug_assert!(i <= j);
        if i == j {
            return re(T::zero());
        }
        let gap = self.step * T::from_usize_lossy(j - i);
        self.prefix[j] - self.prefix[i] * (-gap).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tp(x: f64) -> TimePoint<f64> {
        TimePoint::new(x).unwrap()
    }

    fn bw(x: f64) -> Bandwidth<f64> {
        Bandwidth::new(x).unwrap()
    }

    fn exp(g: f64) -> PulseProfile<f64> {
        PulseProfile::exponential_default(bw(g)).unwrap()
    }

    #[test]
    fn span_validation() {
        assert!(KernelSpan::from_values(2.0, 1.0).is_err());
        assert!(KernelSpan::from_values(-1.0, 1.0).is_err());
        assert!(KernelSpan::from_values(1.0, 1.0).is_ok());
    }

    #[test]
    fn empty_window_and_zero_profile() {
        let q = QuadratureSpec::default();
        let s = KernelSpan::from_values(1.5, 1.5).unwrap();
        assert_eq!(kernel_convolve(&exp(1.0), s, &q).unwrap().norm(), 0.0);

        let zero = PulseProfile::tabulated(
            std::sync::Arc::new(|_t: f64| re(0.0)),
            tp(10.0),
            1.0,
        );
        assert!(zero.is_err(), "a zero envelope cannot be normalized");
        let f = convolve_with(|_t: f64| re(0.0), 0.0, 3.0, 3.0, &q, &PanelHint::width(1.0)).unwrap();
        assert_eq!(f.norm(), 0.0);
    }

    #[test]
    fn closed_form_fixtures() {
        assert_eq!(h_closed_form(tp(1.3), tp(1.3), bw(0.7)).unwrap(), 0.0);
        let v = h_closed_form(tp(1.0), tp(0.0), bw(2.0)).unwrap();
        assert_relative_eq!(v, 2f64.sqrt() * (-1.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(v, 0.52026, epsilon = 5e-6);
        let v = h_closed_form(tp(2.0), tp(1.0), bw(1.0)).unwrap();
        assert_relative_eq!(v, 2.0 * ((-1.0f64).exp() - (-1.5f64).exp()), max_relative = 1e-14);
        assert_relative_eq!(v, 0.28950, epsilon = 5e-6);
        assert!(h_closed_form(tp(1.0), tp(2.0), bw(1.0)).is_err());
    }

    #[test]
    fn convolution_matches_closed_form() {
        let q = QuadratureSpec::default();
        let p = exp(1.0);
        let k = kernel_convolve(&p, KernelSpan::from_values(0.0, 2.0).unwrap(), &q).unwrap();
        let h = h_closed_form(tp(2.0), tp(0.0), bw(1.0)).unwrap();
        assert_relative_eq!(k.re, h, max_relative = 1e-12);
        assert_eq!(k.im, 0.0);
    }

    #[test]
    fn weighted_integral_fixtures() {
        assert_relative_eq!(weighted_h_norm_integral(0, bw(2.0), tp(0.0)), 0.5, max_relative = 1e-15);
        assert_relative_eq!(weighted_h_norm_integral(1, bw(1.0), tp(0.0)), 4.0 / 30.0, max_relative = 1e-15);
        for g in [0.1, 0.7, 3.0, 15.0] {
            assert_relative_eq!(weighted_h_norm_integral(0, bw(g), tp(0.0)), 2.0 / (2.0 + g), max_relative = 1e-14);
        }
    }

    #[test]
    fn weighted_integral_matches_quadrature() {
        let q = QuadratureSpec::default();
        for m in 0..3 {
            for &(g, a) in &[(0.3f64, 0.0f64), (1.0, 0.5), (2.0, 1.2), (7.0, 0.1)] {
                let upper = a + 60.0 / g.min(1.0);
                let val = integrate(
                    |t: f64| (-(m as f64) * t * g).exp() * h_unchecked(t, a, g).powi(2),
                    a,
                    upper,
                    &q,
                    &PanelHint::width(0.5f64.min(1.0 / g)),
                )
                .unwrap()
                .value;
                let closed = weighted_h_norm_integral(m, bw(g), tp(a));
                assert_relative_eq!(val, closed, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn limit_branch_is_continuous() {
        for i in 0..=16 {
            for j in 0..=i {
                let (b, a) = (0.5 * i as f64, 0.5 * j as f64);
                let lim = 2f64.sqrt() * (b - a) * (-b).exp();
                for d in [-1e-5, 1e-5, 5e-7, -5e-7, 0.0] {
                    // first order in δ = Γ − 2
                    let expect = lim * (1.0 + d * (1.0 - a - b) / 4.0);
                    let v = h_closed_form(tp(b), tp(a), bw(2.0 + d)).unwrap();
                    assert!((v - expect).abs() <= 1e-9, "δ={d} b={b} a={a}: {v} vs {expect}");
                }
            }
        }
        for &(b, a) in &[(1.0, 0.0), (2.0, 1.0), (1.5, 0.5), (0.5, 0.0), (3.0, 2.0), (4.0, 3.5)] {
            let lim = 2f64.sqrt() * (b - a) * (-b as f64).exp();
            for g in [2.0 - 1e-5, 2.0 + 1e-5] {
                assert!((h_closed_form(tp(b), tp(a), bw(g)).unwrap() - lim).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn large_windows_do_not_overflow() {
        let v = h_closed_form(tp(900.0), tp(0.0), bw(0.01)).unwrap();
        assert!(v.is_finite() && v >= 0.0);
        let v = h_closed_form(tp(900.0), tp(10.0), bw(50.0)).unwrap();
        assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn table_matches_direct_convolution() {
        let q = QuadratureSpec::default();
        for g in [0.5, 2.0, 9.0] {
            let p = exp(g);
            let t = ConvolutionTable::for_profile(&p, 0.05, 201, &q).unwrap();
            for &(i, j) in &[(0, 20), (0, 200), (13, 57), (100, 101), (40, 40)] {
                let a = t.node(i);
                let b = t.node(j);
                let exact = h_closed_form(tp(b), tp(a), bw(g)).unwrap();
                assert!((t.span(i, j).re - exact).abs() < 1e-12, "g={g} ({a},{b})");
            }
        }
        assert!(ConvolutionTable::for_profile(&exp(1.0), 0.0, 10, &q).is_err());
    }

    #[test]
    fn single_precision_closed_form() {
        let v = h_closed_form(
            TimePoint::new(1.0f32).unwrap(),
            TimePoint::new(0.0f32).unwrap(),
            Bandwidth::new(1.0f32).unwrap(),
        )
        .unwrap();
        assert!((v - 2.0 * ((-0.5f32).exp() - (-1.0f32).exp())).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn convolution_agrees_with_closed_form(g in 0.05f64..20.0, a in 0.0f64..8.0, w in 0.0f64..8.0) {
            let p = exp(g);
            let b = a + w;
            let k = kernel_convolve(&p, KernelSpan::from_values(a, b).unwrap(), &QuadratureSpec::default()).unwrap();
            let h = h_closed_form(tp(b), tp(a), bw(g)).unwrap();
            prop_assert!((k.re - h).abs() <= 1e-8);
        }

        #[test]
        fn shrinking_window_never_grows(g in 0.05f64..20.0, b in 0.0f64..10.0, f1 in 0.0f64..1.0, f2 in 0.0f64..1.0) {
            let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
            let wide = h_closed_form(tp(b), tp(b * lo), bw(g)).unwrap().abs();
            let narrow = h_closed_form(tp(b), tp(b * hi), bw(g)).unwrap().abs();
            prop_assert!(narrow <= wide * (1.0 + 1e-12) + 1e-300);
        }
    }
}
