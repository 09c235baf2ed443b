//! Gauss–Legendre panel quadrature with adaptive bisection.
//!
//! Every integrand in this crate is a smooth product of exponentials and
//! (possibly piecewise-linear) pulse envelopes, so a fixed 16-point rule per
//! panel is spectrally accurate once panel edges are aligned with the
//! envelope's breakpoints. Error control compares a panel against its two
//! halves and bisects the worst panel until the global estimate meets the
//! requested tolerance.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScatterError};
use crate::scalar::{Quantity, Real};

/// Nodes and weights of an n-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on P_n starting from the Chebyshev-like guess.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre order must be at least 1");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrates `f` over [a, b] with this rule.
    #[inline]
    pub fn integrate<T: Real, V: Quantity<T>>(&self, a: T, b: T, f: &impl Fn(T) -> V) -> V {
        let half = (b - a) * T::lit(0.5);
        let mid = (a + b) * T::lit(0.5);
        let mut acc = V::zero();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc = acc + f(mid + half * T::lit(*x)) * T::lit(*w);
        }
        acc * half
    }

    /// Nodes mapped to [a, b] together with their scaled weights.
    pub fn mapped<T: Real>(&self, a: T, b: T) -> impl Iterator<Item = (T, T)> + '_ {
        let half = (b - a) * T::lit(0.5);
        let mid = (a + b) * T::lit(0.5);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * T::lit(*x), half * T::lit(*w)))
    }

    /// Barycentric interpolation weights for the nodes (up to a common factor).
    pub fn barycentric_weights(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(j, (x, w))| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * ((1.0 - x * x) * w).sqrt()
            })
            .collect()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// The 16-point rule used for every panel.
pub fn gl16() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(16))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureRule {
    /// Fixed panels, one 16-point rule each, no error control.
    GaussLegendreComposite,
    /// Panels seeded as for the composite rule, then bisected on the error estimate.
    #[default]
    Adaptive,
}

/// Tolerances and limits for every quadrature in the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec<T> {
    pub rule: QuadratureRule,
    pub rel_tol: T,
    pub abs_tol: T,
    pub max_subdivisions: usize,
}

impl<T: Real> Default for QuadratureSpec<T> {
    fn default() -> Self {
        let eps = T::epsilon();
        Self {
            rule: QuadratureRule::Adaptive,
            rel_tol: (eps * T::lit(1e3)).max(T::lit(1e-12)),
            abs_tol: (eps * T::lit(10.0)).max(T::lit(1e-15)),
            max_subdivisions: 4000,
        }
    }
}

impl<T: Real> QuadratureSpec<T> {
    pub fn new(rule: QuadratureRule, rel_tol: T, abs_tol: T, max_subdivisions: usize) -> Result<Self> {
        let spec = Self {
            rule,
            rel_tol,
            abs_tol,
            max_subdivisions,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > T::zero() && self.rel_tol.is_finite()) {
            return Err(ScatterError::BadQuadrature("rel_tol must be positive".into()));
        }
        if !(self.abs_tol > T::zero() && self.abs_tol.is_finite()) {
            return Err(ScatterError::BadQuadrature("abs_tol must be positive".into()));
        }
        if self.max_subdivisions == 0 {
            return Err(ScatterError::BadQuadrature("max_subdivisions must be >= 1".into()));
        }
        Ok(())
    }

    pub fn composite() -> Self {
        Self {
            rule: QuadratureRule::GaussLegendreComposite,
            ..Self::default()
        }
    }

    #[inline]
    fn tolerance(&self, magnitude: T) -> T {
        self.abs_tol.max(self.rel_tol * magnitude)
    }
}

/// How to cut an interval into initial panels: a maximum width plus points
/// where the integrand is not smooth.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelHint<T> {
    pub max_width: T,
    pub breakpoints: Vec<T>,
}

impl<T: Real> PanelHint<T> {
    pub fn width(max_width: T) -> Self {
        Self {
            max_width,
            breakpoints: Vec::new(),
        }
    }

    /// Initial panel edges covering [a, b].
    pub fn edges(&self, a: T, b: T) -> Vec<T> {
        let mut cuts = vec![a];
        cuts.extend(self.breakpoints.iter().copied().filter(|&x| x > a && x < b));
        cuts.push(b);
        let mut edges = Vec::with_capacity(cuts.len());
        edges.push(a);
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let len = hi - lo;
            if len <= T::zero() {
                continue;
            }
            let n = if self.max_width > T::zero() && self.max_width.is_finite() {
                (len / self.max_width).ceil().to_usize().unwrap_or(1).max(1)
            } else {
                1
            };
            let step = len / T::from_usize_lossy(n);
            for k in 1..n {
                edges.push(lo + step * T::from_usize_lossy(k));
            }
            edges.push(hi);
        }
        edges
    }
}

/// Integral value with its error estimate (absent for the composite rule).
#[derive(Debug, Clone, Copy)]
pub struct Estimate<V, T> {
    pub value: V,
    pub abs_err: Option<T>,
}

struct Panel<V, T> {
    a: T,
    b: T,
    value: V,
    err: T,
}

fn refined_panel<T: Real, V: Quantity<T>>(a: T, b: T, f: &impl Fn(T) -> V) -> Panel<V, T> {
    let rule = gl16();
    let m = (a + b) * T::lit(0.5);
    let whole = rule.integrate(a, b, f);
    let halves = rule.integrate(a, m, f) + rule.integrate(m, b, f);
    Panel {
        a,
        b,
        value: halves,
        err: (whole - halves).magnitude(),
    }
}

/// Integrates `f` over [a, b] following `spec`, seeding panels from `hint`.
pub fn integrate<T: Real, V: Quantity<T>>(
    f: impl Fn(T) -> V,
    a: T,
    b: T,
    spec: &QuadratureSpec<T>,
    hint: &PanelHint<T>,
) -> Result<Estimate<V, T>> {
    if b <= a {
        return Ok(Estimate {
            value: V::zero(),
            abs_err: Some(T::zero()),
        });
    }
    let edges = hint.edges(a, b);
    match spec.rule {
        QuadratureRule::GaussLegendreComposite => {
            let rule = gl16();
            let value = edges
                .windows(2)
                .fold(V::zero(), |acc, w| acc + rule.integrate(w[0], w[1], &f));
            Ok(Estimate { value, abs_err: None })
        }
        QuadratureRule::Adaptive => adaptive(&f, &edges, spec),
    }
}

/// As [`integrate`], but refines the seed panels independently on the rayon pool.
///
/// Each seed panel must meet the relative tolerance on its own value; the
/// absolute tolerance is shared evenly between panels.
pub fn integrate_par<T: Real, V: Quantity<T>>(
    f: impl Fn(T) -> V + Sync,
    a: T,
    b: T,
    spec: &QuadratureSpec<T>,
    hint: &PanelHint<T>,
) -> Result<Estimate<V, T>> {
    use rayon::prelude::*;
    if b <= a || spec.rule == QuadratureRule::GaussLegendreComposite {
        return integrate(f, a, b, spec, hint);
    }
    let edges = hint.edges(a, b);
    let mut local = *spec;
    local.abs_tol = spec.abs_tol / T::from_usize_lossy(edges.len() - 1);
    let parts = edges
        .par_windows(2)
        .map(|w| adaptive(&f, &[w[0], w[1]], &local))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().fold(
        Estimate {
            value: V::zero(),
            abs_err: Some(T::zero()),
        },
        |acc, p| Estimate {
            value: acc.value + p.value,
            abs_err: Some(acc.abs_err.unwrap_or(T::zero()) + p.abs_err.unwrap_or(T::zero())),
        },
    ))
}

fn adaptive<T: Real, V: Quantity<T>>(
    f: &impl Fn(T) -> V,
    edges: &[T],
    spec: &QuadratureSpec<T>,
) -> Result<Estimate<V, T>> {
    let mut panels: Vec<Panel<V, T>> = edges.windows(2).map(|w| refined_panel(w[0], w[1], f)).collect();
    let mut subdivisions = 0usize;
    loop {
        let (value, err) = panels
            .iter()
            .fold((V::zero(), T::zero()), |(v, e), p| (v + p.value, e + p.err));
        if err <= spec.tolerance(value.magnitude()) {
            return Ok(Estimate {
                value,
                abs_err: Some(err),
            });
        }
        if subdivisions >= spec.max_subdivisions {
            return Err(ScatterError::NoConvergence {
                subdivisions,
                estimate: err.to_f64().unwrap_or(f64::NAN),
            });
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.partial_cmp(&y.1.err).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .expect("at least one panel");
        let p = panels.swap_remove(worst);
        let m = (p.a + p.b) * T::lit(0.5);
        if m <= p.a || m >= p.b {
            // Panel collapsed to adjacent floats; nothing left to refine.
            return Err(ScatterError::NoConvergence {
                subdivisions,
                estimate: err.to_f64().unwrap_or(f64::NAN),
            });
        }
        panels.push(refined_panel(p.a, m, f));
        panels.push(refined_panel(m, p.b, f));
        subdivisions += 1;
    }
}

/// Barycentric Lagrange interpolation through `(xs, ys)` with precomputed weights.
pub fn barycentric_eval<T: Real, V: Quantity<T>>(xs: &[T], ys: &[V], bw: &[T], x: T) -> V {
    let mut num = V::zero();
    let mut den = T::zero();
    for ((&xi, &yi), &wi) in xs.iter().zip(ys).zip(bw) {
        let d = x - xi;
        if d == T::zero() {
            return yi;
        }
        let c = wi / d;
        num = num + yi * c;
        den = den + c;
    }
    num * den.recip()
}
