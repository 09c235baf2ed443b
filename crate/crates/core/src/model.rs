//! Units, pulse envelopes and N-photon input states.
//!
//! Times are measured in atomic lifetimes (1/γ) from the wavefront, the
//! moment the first wavepacket reaches the atom. Bandwidths are in units of γ.
//!
//! # Component convention
//!
//! An N-photon state is expanded into components ξ_n, where n photons move to
//! the right and N−n to the left, each weighted by 1/√(n!(N−n)!) in the
//! creation-operator expansion. With that measure the total state norm is
//! Σ_n ∫|ξ_n|². A separable state built from single-photon envelopes
//! (φ_k, d_k) is the normalized product of the corresponding creation
//! operators, which gives
//!
//! ```text
//! ξ_n(τ_1..τ_N) = c · perm[φ_{R_k}(τ_i)] · perm[φ_{L_k}(τ_{n+j})] / √(n!(N−n)!)
//! ```
//!
//! with `c = 1/√(perm G_R · perm G_L)` fixed by the Gram matrices of the right-
//! and left-moving envelopes. For identical envelopes this is simply the
//! product ∏φ(τ_i). Only the component whose right-mover count matches the
//! input is nonzero. Symmetrization happens at evaluation time; storage stays
//! one envelope per photon.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScatterError};
use crate::quadrature::{integrate, PanelHint, QuadratureSpec};
use crate::scalar::{factorial, re, Real};

/// Default normalization tolerance η_norm, loosened for single precision.
pub fn default_norm_tolerance<T: Real>() -> T {
    T::lit(1e-8).max(T::epsilon() * T::lit(100.0))
}

/// Default truncation horizon max(20, 40/Γ).
pub fn default_horizon<T: Real>(gamma: Bandwidth<T>) -> TimePoint<T> {
    TimePoint(T::lit(20.0).max(T::lit(40.0) / gamma.value()))
}

/// Non-negative, finite time in units of 1/γ.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct TimePoint<T>(T);

impl<T: Real> TimePoint<T> {
    pub fn new(value: T) -> Result<Self> {
        if value.is_finite() && value >= T::zero() {
            Ok(Self(value))
        } else {
            Err(ScatterError::InvalidTime(value.to_f64().unwrap_or(f64::NAN)))
        }
    }

    pub fn zero() -> Self {
        Self(T::zero())
    }

    #[inline]
    pub fn value(self) -> T {
        self.0
    }
}

/// Pulse bandwidth Γ in units of γ.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Bandwidth<T>(T);

impl<T: Real> Bandwidth<T> {
    pub fn new(value: T) -> Result<Self> {
        if value.is_finite() && value > T::zero() {
            Ok(Self(value))
        } else {
            Err(ScatterError::InvalidBandwidth(value.to_f64().unwrap_or(f64::NAN)))
        }
    }

    #[inline]
    pub fn value(self) -> T {
        self.0
    }
}

/// Propagation direction of a waveguide photon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    pub fn arrow(self) -> char {
        match self {
            Direction::Left => '↼',
            Direction::Right => '⇀',
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Left => "left",
            Direction::Right => "right",
        })
    }
}

pub type EnvelopeFn<T> = Arc<dyn Fn(T) -> Complex<T> + Send + Sync>;

#[derive(Clone)]
pub enum ProfileShape<T> {
    /// √Γ·e^{−τΓ/2}.
    Exponential { gamma: Bandwidth<T> },
    /// Piecewise-linear interpolation of complex samples.
    Sampled { grid: Vec<T>, values: Vec<Complex<T>> },
    /// Arbitrary envelope with a characteristic time scale for panel sizing.
    Tabulated { envelope: EnvelopeFn<T>, time_scale: T },
}

impl<T: fmt::Debug> fmt::Debug for ProfileShape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProfileShape::Exponential { gamma } => f.debug_struct("Exponential").field("gamma", &gamma.0).finish(),
            ProfileShape::Sampled { grid, .. } => f.debug_struct("Sampled").field("nodes", &grid.len()).finish(),
            ProfileShape::Tabulated { time_scale, .. } => {
                f.debug_struct("Tabulated").field("time_scale", time_scale).finish()
            }
        }
    }
}

impl<T: PartialEq> PartialEq for ProfileShape<T> {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ProfileShape::Exponential { gamma: a }, ProfileShape::Exponential { gamma: b }) => a == b,
            (ProfileShape::Sampled { grid: g1, values: v1 }, ProfileShape::Sampled { grid: g2, values: v2 }) => {
                g1 == g2 && v1 == v2
            }
            (ProfileShape::Tabulated { envelope: e1, .. }, ProfileShape::Tabulated { envelope: e2, .. }) => {
                Arc::ptr_eq(e1, e2)
            }
            _ => false,
        }
    }
}

/// Single-photon temporal envelope ξ(τ), zero outside [0, t_max].
#[derive(Debug, Clone, PartialEq)]
pub struct PulseProfile<T> {
    shape: ProfileShape<T>,
    t_max: TimePoint<T>,
}

impl<T: Real> PulseProfile<T> {
    /// Exponential envelope √Γ·e^{−τΓ/2} truncated at `t_max`.
    pub fn exponential(gamma: Bandwidth<T>, t_max: TimePoint<T>) -> Result<Self> {
        Self::exponential_with_tolerance(gamma, t_max, default_norm_tolerance())
    }

    pub fn exponential_with_tolerance(gamma: Bandwidth<T>, t_max: TimePoint<T>, eta: T) -> Result<Self> {
        let retained = -(-gamma.value() * t_max.value()).exp_m1();
        if retained < T::one() - eta {
            return Err(ScatterError::HorizonTooShort {
                t_max: t_max.value().to_f64().unwrap_or(f64::NAN),
                retained: retained.to_f64().unwrap_or(f64::NAN),
                tolerance: eta.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(Self {
            shape: ProfileShape::Exponential { gamma },
            t_max,
        })
    }

    /// Exponential envelope with the default horizon max(20, 40/Γ).
    pub fn exponential_default(gamma: Bandwidth<T>) -> Result<Self> {
        Self::exponential(gamma, default_horizon(gamma))
    }

    /// Sampled envelope; the horizon is the last grid node.
    pub fn sampled(grid: Vec<T>, values: Vec<Complex<T>>) -> Result<Self> {
        let profile = Self::sampled_unchecked(grid, values)?;
        profile.check_norm(default_norm_tolerance())?;
        Ok(profile)
    }

    /// Sampled envelope rescaled to unit norm.
    pub fn sampled_normalized(grid: Vec<T>, values: Vec<Complex<T>>) -> Result<Self> {
        let profile = Self::sampled_unchecked(grid, values)?;
        let n = profile.norm_sq().sqrt();
        if !(n > T::zero()) {
            return Err(ScatterError::Unnormalized {
                norm: 0.0,
                tolerance: 0.0,
            });
        }
        let ProfileShape::Sampled { grid, values } = profile.shape else {
            unreachable!()
        };
        let values = values.into_iter().map(|v| v / n).collect();
        Ok(Self {
            shape: ProfileShape::Sampled { grid, values },
            t_max: profile.t_max,
        })
    }

    fn sampled_unchecked(grid: Vec<T>, values: Vec<Complex<T>>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(ScatterError::BadGrid);
        }
        if grid[0] < T::zero() || grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|x| !x.is_finite()) {
            return Err(ScatterError::BadGrid);
        }
        let t_max = TimePoint::new(*grid.last().unwrap())?;
        Ok(Self {
            shape: ProfileShape::Sampled { grid, values },
            t_max,
        })
    }

    /// Envelope given by a closure; `time_scale` bounds quadrature panel widths.
    pub fn tabulated(envelope: EnvelopeFn<T>, t_max: TimePoint<T>, time_scale: T) -> Result<Self> {
        let profile = Self {
            shape: ProfileShape::Tabulated {
                envelope,
                time_scale: time_scale.max(T::epsilon()),
            },
            t_max,
        };
        profile.check_norm(default_norm_tolerance())?;
        Ok(profile)
    }

    pub fn shape(&self) -> &ProfileShape<T> {
        &self.shape
    }

    pub fn horizon(&self) -> TimePoint<T> {
        self.t_max
    }

    /// Bandwidth of an exponential envelope.
    pub fn gamma(&self) -> Option<Bandwidth<T>> {
        match self.shape {
            ProfileShape::Exponential { gamma } => Some(gamma),
            _ => None,
        }
    }

    /// ξ(τ); zero outside [0, t_max].
    #[inline]
    pub fn eval(&self, tau: T) -> Complex<T> {
        if !(tau >= T::zero()) || tau > self.t_max.value() {
            return Complex::new(T::zero(), T::zero());
        }
        match &self.shape {
            ProfileShape::Exponential { gamma } => {
                let g = gamma.value();
                re(g.sqrt() * (-tau * g * T::lit(0.5)).exp())
            }
            ProfileShape::Sampled { grid, values } => interpolate_linear(grid, values, tau),
            ProfileShape::Tabulated { envelope, .. } => envelope(tau),
        }
    }

    /// Panel layout for integrating this envelope against the atomic kernel on [a, b].
    pub fn panel_hint(&self, a: T, b: T) -> PanelHint<T> {
        let mut breakpoints = Vec::new();
        if self.t_max.value() > a && self.t_max.value() < b {
            breakpoints.push(self.t_max.value());
        }
        let max_width = match &self.shape {
            ProfileShape::Exponential { gamma } => T::lit(2.0).min(T::lit(4.0) / gamma.value()),
            ProfileShape::Sampled { grid, .. } => {
                let lo = grid.partition_point(|&x| x <= a);
                let hi = grid.partition_point(|&x| x < b);
                breakpoints.extend_from_slice(&grid[lo..hi]);
                breakpoints.sort_by(|x, y| x.partial_cmp(y).unwrap());
                T::lit(2.0)
            }
            ProfileShape::Tabulated { time_scale, .. } => T::lit(2.0).min(*time_scale),
        };
        PanelHint { max_width, breakpoints }
    }

    /// ∫|ξ|² over [0, t_max].
    pub fn norm_sq(&self) -> T {
        match &self.shape {
            ProfileShape::Exponential { gamma } => -(-gamma.value() * self.t_max.value()).exp_m1(),
            ProfileShape::Sampled { grid, values } => {
                // exact for the piecewise-linear interpolant
                let third = T::lit(1.0 / 3.0);
                grid.windows(2)
                    .zip(values.windows(2))
                    .map(|(g, v)| {
                        let h = g[1] - g[0];
                        h * third * (v[0].norm_sqr() + (v[0] * v[1].conj()).re + v[1].norm_sqr())
                    })
                    .sum()
            }
            ProfileShape::Tabulated { .. } => {
                let hint = self.panel_hint(T::zero(), self.t_max.value());
                integrate(
                    |t| self.eval(t).norm_sqr(),
                    T::zero(),
                    self.t_max.value(),
                    &QuadratureSpec::default(),
                    &hint,
                )
                .map(|e| e.value)
                .unwrap_or(T::nan())
            }
        }
    }

    /// ⟨self|other⟩ = ∫ conj(ξ_self)·ξ_other.
    pub fn overlap(&self, other: &PulseProfile<T>) -> Complex<T> {
        if let (ProfileShape::Exponential { gamma: g1 }, ProfileShape::Exponential { gamma: g2 }) =
            (&self.shape, &other.shape)
        {
            let (a, b) = (g1.value(), g2.value());
            let s = (a + b) * T::lit(0.5);
            let t = self.t_max.value().min(other.t_max.value());
            return re((a * b).sqrt() * (-(-s * t).exp_m1()) / s);
        }
        if self == other {
            return re(self.norm_sq());
        }
        let t = self.t_max.value().min(other.t_max.value());
        let mut hint = self.panel_hint(T::zero(), t);
        let other_hint = other.panel_hint(T::zero(), t);
        hint.max_width = hint.max_width.min(other_hint.max_width);
        hint.breakpoints.extend(other_hint.breakpoints);
        hint.breakpoints.sort_by(|x, y| x.partial_cmp(y).unwrap());
        integrate(
            |x| self.eval(x).conj() * other.eval(x),
            T::zero(),
            t,
            &QuadratureSpec::default(),
            &hint,
        )
        .map(|e| e.value)
        .unwrap_or(Complex::new(T::nan(), T::nan()))
    }

    pub fn check_norm(&self, eta: T) -> Result<()> {
        let n = self.norm_sq();
        if (n - T::one()).abs() > eta || !n.is_finite() {
            return Err(ScatterError::Unnormalized {
                norm: n.to_f64().unwrap_or(f64::NAN),
                tolerance: eta.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(())
    }
}

fn interpolate_linear<T: Real>(grid: &[T], values: &[Complex<T>], x: T) -> Complex<T> {
    if x < grid[0] || x > *grid.last().unwrap() {
        return Complex::new(T::zero(), T::zero());
    }
    let i = grid.partition_point(|&g| g <= x).clamp(1, grid.len() - 1);
    let (x0, x1) = (grid[i - 1], grid[i]);
    let w = (x - x0) / (x1 - x0);
    values[i - 1] * (T::one() - w) + values[i] * w
}

/// One photon of a separable input: envelope and propagation direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Photon<T> {
    pub profile: Arc<PulseProfile<T>>,
    pub direction: Direction,
}

impl<T: Real> Photon<T> {
    pub fn new(profile: Arc<PulseProfile<T>>, direction: Direction) -> Self {
        Self { profile, direction }
    }
}

/// Product of single-photon creation operators, normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableWavepacket<T> {
    photons: Vec<Photon<T>>,
    scale: T,
    identical: bool,
}

/// Sampled two-photon state ξ_0, ξ_1, ξ_2 on a square grid (same axis for τ₁ and τ₂).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedPair<T> {
    axis: Vec<T>,
    xi: [Vec<Complex<T>>; 3],
}

/// N-photon input state.
#[derive(Debug, Clone, PartialEq)]
pub enum Wavepacket<T> {
    Separable(SeparableWavepacket<T>),
    Correlated2(CorrelatedPair<T>),
}

/// Largest photon count for which a permanent over distinct envelopes is evaluated.
pub const MAX_DISTINCT_PHOTONS: usize = 20;

impl<T: Real> Wavepacket<T> {
    /// Vacuum (zero photons).
    pub fn vacuum() -> Self {
        Wavepacket::Separable(SeparableWavepacket {
            photons: Vec::new(),
            scale: T::one(),
            identical: true,
        })
    }

    /// Normalized product state of the given photons.
    pub fn product(photons: Vec<Photon<T>>) -> Result<Self> {
        if photons.is_empty() {
            return Err(ScatterError::PhotonCount { expected: 1, found: 0 });
        }
        let eta = default_norm_tolerance();
        for p in &photons {
            p.profile.check_norm(eta)?;
        }
        let identical = photons.windows(2).all(|w| w[0].profile == w[1].profile);
        if !identical && photons.len() > MAX_DISTINCT_PHOTONS {
            return Err(ScatterError::Unsupported(format!(
                "separable states with distinct envelopes are limited to {MAX_DISTINCT_PHOTONS} photons"
            )));
        }
        let gram_perm = |dir: Direction| -> T {
            let group: Vec<&PulseProfile<T>> = photons
                .iter()
                .filter(|p| p.direction == dir)
                .map(|p| p.profile.as_ref())
                .collect();
            let n = group.len();
            if n == 0 {
                return T::one();
            }
            if identical {
                return factorial::<T>(n) * group[0].norm_sq().powi(n as i32);
            }
            let gram: Vec<Complex<T>> = (0..n)
                .flat_map(|i| (0..n).map(move |k| (i, k)))
                .map(|(i, k)| group[i].overlap(group[k]))
                .collect();
            permanent(&gram, n).re
        };
        let scale = (gram_perm(Direction::Right) * gram_perm(Direction::Left)).sqrt().recip();
        Ok(Wavepacket::Separable(SeparableWavepacket {
            photons,
            scale,
            identical,
        }))
    }

    /// `n` copies of the same envelope, all moving in `direction`.
    pub fn identical(profile: PulseProfile<T>, direction: Direction, n: usize) -> Result<Self> {
        let profile = Arc::new(profile);
        Self::product((0..n).map(|_| Photon::new(profile.clone(), direction)).collect())
    }

    pub fn correlated(pair: CorrelatedPair<T>) -> Self {
        Wavepacket::Correlated2(pair)
    }

    pub fn n_photons(&self) -> usize {
        match self {
            Wavepacket::Separable(s) => s.photons.len(),
            Wavepacket::Correlated2(_) => 2,
        }
    }

    pub fn as_separable(&self) -> Option<&SeparableWavepacket<T>> {
        match self {
            Wavepacket::Separable(s) => Some(s),
            Wavepacket::Correlated2(_) => None,
        }
    }

    /// Latest time at which any envelope is nonzero.
    pub fn horizon(&self) -> T {
        match self {
            Wavepacket::Separable(s) => s
                .photons
                .iter()
                .map(|p| p.profile.horizon().value())
                .fold(T::zero(), T::max),
            Wavepacket::Correlated2(c) => *c.axis.last().unwrap(),
        }
    }

    /// Smallest panel width and all breakpoints relevant on [a, b].
    pub fn panel_hint(&self, a: T, b: T) -> PanelHint<T> {
        match self {
            Wavepacket::Separable(s) => {
                let mut hint = PanelHint::width(T::lit(2.0));
                for p in &s.photons {
                    let h = p.profile.panel_hint(a, b);
                    hint.max_width = hint.max_width.min(h.max_width);
                    hint.breakpoints.extend(h.breakpoints);
                }
                hint.breakpoints.sort_by(|x, y| x.partial_cmp(y).unwrap());
                hint.breakpoints.dedup();
                hint
            }
            Wavepacket::Correlated2(c) => c.panel_hint(a, b),
        }
    }

    /// ξ_{n_right}(τ_1, …, τ_N).
    pub fn component(&self, n_right: usize, times: &[T]) -> Result<Complex<T>> {
        let n = self.n_photons();
        if n_right > n {
            return Err(ScatterError::ComponentOutOfRange {
                n_right,
                n_photons: n,
            });
        }
        if times.len() != n {
            return Err(ScatterError::PhotonCount {
                expected: n,
                found: times.len(),
            });
        }
        Ok(match self {
            Wavepacket::Separable(s) => {
                let dirs: Vec<(Direction, T)> = times
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| (if i < n_right { Direction::Right } else { Direction::Left }, t))
                    .collect();
                let measure = (factorial::<T>(n_right) * factorial::<T>(n - n_right)).sqrt();
                s.vacuum_overlap(&dirs) / measure
            }
            Wavepacket::Correlated2(c) => c.eval(n_right, times[0], times[1]),
        })
    }

    /// ⟨vac| a^{d_1}_{t_1} ⋯ a^{d_N}_{t_N} |ψ⟩ for the initial field operators.
    pub fn vacuum_overlap(&self, slots: &[(Direction, T)]) -> Complex<T> {
        if slots.len() != self.n_photons() {
            return Complex::new(T::zero(), T::zero());
        }
        match self {
            Wavepacket::Separable(s) => s.vacuum_overlap(slots),
            Wavepacket::Correlated2(c) => c.vacuum_overlap(slots),
        }
    }

    /// ⟨vac| d_in(t_1) ⋯ d_in(t_N) |ψ⟩, summing both propagation directions per slot.
    pub fn field_overlap(&self, times: &[T]) -> Complex<T> {
        if times.len() != self.n_photons() {
            return Complex::new(T::zero(), T::zero());
        }
        match self {
            Wavepacket::Separable(s) => s.field_overlap(times),
            Wavepacket::Correlated2(c) => {
                let (a, b) = (times[0], times[1]);
                let r2 = T::SQRT_2();
                c.eval(0, a, b) * r2 + c.eval(1, a, b) + c.eval(1, b, a) + c.eval(2, a, b) * r2
            }
        }
    }

    /// Total state norm Σ_n ∫|ξ_n|².
    pub fn norm(&self) -> T {
        match self {
            Wavepacket::Separable(s) => s.norm(),
            Wavepacket::Correlated2(c) => c.norm(),
        }
    }
}

impl<T: Real> SeparableWavepacket<T> {
    pub fn photons(&self) -> &[Photon<T>] {
        &self.photons
    }

    /// Normalization constant c of the symmetrized product.
    pub fn scale(&self) -> T {
        self.scale
    }

    /// True when every photon shares the same envelope.
    pub fn is_identical(&self) -> bool {
        self.identical
    }

    /// Direction shared by all photons, if any.
    pub fn common_direction(&self) -> Option<Direction> {
        let first = self.photons.first()?.direction;
        self.photons.iter().all(|p| p.direction == first).then_some(first)
    }

    pub fn count(&self, dir: Direction) -> usize {
        self.photons.iter().filter(|p| p.direction == dir).count()
    }

    fn vacuum_overlap(&self, slots: &[(Direction, T)]) -> Complex<T> {
        let mut total = re(self.scale);
        for dir in [Direction::Right, Direction::Left] {
            let times: Vec<T> = slots.iter().filter(|s| s.0 == dir).map(|s| s.1).collect();
            let profiles: Vec<&PulseProfile<T>> = self
                .photons
                .iter()
                .filter(|p| p.direction == dir)
                .map(|p| p.profile.as_ref())
                .collect();
            if times.len() != profiles.len() {
                return Complex::new(T::zero(), T::zero());
            }
            total = total * self.assignment_sum(&profiles, &times);
        }
        total
    }

    fn field_overlap(&self, times: &[T]) -> Complex<T> {
        let profiles: Vec<&PulseProfile<T>> = self.photons.iter().map(|p| p.profile.as_ref()).collect();
        self.assignment_sum(&profiles, times) * self.scale
    }

    /// Σ over bijections photon→slot of ∏ φ_k(t_slot), i.e. perm[φ_k(t_i)].
    fn assignment_sum(&self, profiles: &[&PulseProfile<T>], times: &[T]) -> Complex<T> {
        let n = times.len();
        if n == 0 {
            return re(T::one());
        }
        if self.identical {
            let prod = times
                .iter()
                .fold(re(T::one()), |acc, &t| acc * profiles[0].eval(t));
            return prod * factorial::<T>(n);
        }
        let m: Vec<Complex<T>> = times
            .iter()
            .flat_map(|&t| profiles.iter().map(move |p| p.eval(t)))
            .collect();
        permanent(&m, n)
    }

    fn norm(&self) -> T {
        let mut total = T::one();
        for dir in [Direction::Right, Direction::Left] {
            let group: Vec<&PulseProfile<T>> = self
                .photons
                .iter()
                .filter(|p| p.direction == dir)
                .map(|p| p.profile.as_ref())
                .collect();
            let n = group.len();
            if n == 0 {
                continue;
            }
            let gram: Vec<Complex<T>> = (0..n)
                .flat_map(|i| (0..n).map(move |k| (i, k)))
                .map(|(i, k)| group[i].overlap(group[k]))
                .collect();
            total = total * permanent(&gram, n).re;
        }
        total * self.scale * self.scale
    }
}

/// Permanent of a row-major n×n matrix (Ryser's formula with Gray-code updates).
pub fn permanent<T: Real>(m: &[Complex<T>], n: usize) -> Complex<T> {
    assert_eq!(m.len(), n * n);
    let zero = Complex::new(T::zero(), T::zero());
    match n {
        0 => return re(T::one()),
        1 => return m[0],
        2 => return m[0] * m[3] + m[1] * m[2],
        _ => {}
    }
    let mut row_sums = vec![zero; n];
    let mut total = zero;
    let mut gray = 0usize;
    for k in 1..(1usize << n) {
        let next = k ^ (k >> 1);
        let col = (gray ^ next).trailing_zeros() as usize;
        let added = next & (1 << col) != 0;
        for (i, s) in row_sums.iter_mut().enumerate() {
            if added {
                *s += m[i * n + col];
            } else {
                *s -= m[i * n + col];
            }
        }
        gray = next;
        let prod = row_sums.iter().fold(re(T::one()), |acc, &s| acc * s);
        if next.count_ones() % 2 == 0 {
            total += prod;
        } else {
            total -= prod;
        }
    }
    if n % 2 == 1 {
        -total
    } else {
        total
    }
}

impl<T: Real> CorrelatedPair<T> {
    /// Validates shape, exchange symmetry of ξ_0 and ξ_2, and unit norm.
    pub fn new(axis: Vec<T>, xi: [Vec<Complex<T>>; 3]) -> Result<Self> {
        let pair = Self::unchecked(axis, xi)?;
        let eta = default_norm_tolerance();
        pair.check_symmetry(eta)?;
        let n = pair.norm();
        if (n - T::one()).abs() > eta {
            return Err(ScatterError::Unnormalized {
                norm: n.to_f64().unwrap_or(f64::NAN),
                tolerance: eta.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(pair)
    }

    /// As [`CorrelatedPair::new`] but rescales the tensors to unit total norm.
    pub fn normalized(axis: Vec<T>, xi: [Vec<Complex<T>>; 3]) -> Result<Self> {
        let mut pair = Self::unchecked(axis, xi)?;
        pair.check_symmetry(default_norm_tolerance())?;
        let n = pair.norm().sqrt();
        if !(n > T::zero()) {
            return Err(ScatterError::Unnormalized {
                norm: 0.0,
                tolerance: 0.0,
            });
        }
        for t in pair.xi.iter_mut() {
            for v in t.iter_mut() {
                *v = *v / n;
            }
        }
        Ok(pair)
    }

    fn unchecked(axis: Vec<T>, xi: [Vec<Complex<T>>; 3]) -> Result<Self> {
        let n = axis.len();
        if n < 2 || axis[0] < T::zero() || axis.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ScatterError::BadGrid);
        }
        if xi.iter().any(|t| t.len() != n * n) {
            return Err(ScatterError::BadGrid);
        }
        Ok(Self { axis, xi })
    }

    fn check_symmetry(&self, eta: T) -> Result<()> {
        let n = self.axis.len();
        for comp in [0usize, 2] {
            for i in 0..n {
                for j in 0..i {
                    if (self.xi[comp][i * n + j] - self.xi[comp][j * n + i]).norm() > eta {
                        return Err(ScatterError::Unsupported(format!(
                            "xi_{comp} is not symmetric under exchange of the two photons"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn axis(&self) -> &[T] {
        &self.axis
    }

    /// Stored samples of ξ_n, row-major with τ₁ as the row index.
    pub fn samples(&self, n_right: usize) -> &[Complex<T>] {
        &self.xi[n_right]
    }

    /// Bilinear interpolation of ξ_n(τ₁, τ₂); zero outside the grid.
    pub fn eval(&self, n_right: usize, t1: T, t2: T) -> Complex<T> {
        let ax = &self.axis;
        let zero = Complex::new(T::zero(), T::zero());
        let (lo, hi) = (ax[0], *ax.last().unwrap());
        if !(t1 >= lo && t1 <= hi && t2 >= lo && t2 <= hi) {
            return zero;
        }
        let locate = |x: T| {
            let i = ax.partition_point(|&g| g <= x).clamp(1, ax.len() - 1);
            (i - 1, (x - ax[i - 1]) / (ax[i] - ax[i - 1]))
        };
        let (i, u) = locate(t1);
        let (j, v) = locate(t2);
        let n = ax.len();
        let t = &self.xi[n_right];
        let one = T::one();
        t[i * n + j] * ((one - u) * (one - v))
            + t[(i + 1) * n + j] * (u * (one - v))
            + t[i * n + j + 1] * ((one - u) * v)
            + t[(i + 1) * n + j + 1] * (u * v)
    }

    fn vacuum_overlap(&self, slots: &[(Direction, T)]) -> Complex<T> {
        let r2 = T::SQRT_2();
        match (slots[0], slots[1]) {
            ((Direction::Right, a), (Direction::Right, b)) => self.eval(2, a, b) * r2,
            ((Direction::Left, a), (Direction::Left, b)) => self.eval(0, a, b) * r2,
            ((Direction::Right, r), (Direction::Left, l)) | ((Direction::Left, l), (Direction::Right, r)) => {
                self.eval(1, r, l)
            }
        }
    }

    /// Σ_n ∫∫|ξ_n|², exact for the bilinear interpolant.
    pub fn norm(&self) -> T {
        let n = self.axis.len();
        let sixth = T::lit(1.0 / 6.0);
        let two = T::lit(2.0);
        // 1-D mass matrix of hat functions on one cell: h/6 [[2,1],[1,2]]
        let mass = |h: T| [[two * h * sixth, h * sixth], [h * sixth, two * h * sixth]];
        let mut total = T::zero();
        for t in &self.xi {
            for i in 0..n - 1 {
                let mi = mass(self.axis[i + 1] - self.axis[i]);
                for j in 0..n - 1 {
                    let mj = mass(self.axis[j + 1] - self.axis[j]);
                    let corners = [
                        t[i * n + j],
                        t[i * n + j + 1],
                        t[(i + 1) * n + j],
                        t[(i + 1) * n + j + 1],
                    ];
                    for (p, cp) in corners.iter().enumerate() {
                        for (q, cq) in corners.iter().enumerate() {
                            let w = mi[p / 2][q / 2] * mj[p % 2][q % 2];
                            total = total + w * (cp * cq.conj()).re;
                        }
                    }
                }
            }
        }
        total
    }

    fn panel_hint(&self, a: T, b: T) -> PanelHint<T> {
        let lo = self.axis.partition_point(|&x| x <= a);
        let hi = self.axis.partition_point(|&x| x < b);
        PanelHint {
            max_width: T::lit(2.0),
            breakpoints: self.axis[lo..hi].to_vec(),
        }
    }
}

/// Atom-plus-field input with N excitations: c_g |ψ_N⟩|g⟩ + c_e |ψ_{N−1}⟩|e⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState<T> {
    c_g: Complex<T>,
    c_e: Complex<T>,
    field_g: Wavepacket<T>,
    field_e: Wavepacket<T>,
}

impl<T: Real> InitialState<T> {
    pub fn new(c_g: Complex<T>, c_e: Complex<T>, field_g: Wavepacket<T>, field_e: Wavepacket<T>) -> Result<Self> {
        let total = c_g.norm_sqr() + c_e.norm_sqr();
        if (total - T::one()).abs() > default_norm_tolerance() {
            return Err(ScatterError::StateNorm(total.to_f64().unwrap_or(f64::NAN)));
        }
        let zero = T::zero();
        if c_g.norm() > zero && c_e.norm() > zero && field_g.n_photons() != field_e.n_photons() + 1 {
            return Err(ScatterError::PhotonCount {
                expected: field_e.n_photons() + 1,
                found: field_g.n_photons(),
            });
        }
        Ok(Self {
            c_g,
            c_e,
            field_g,
            field_e,
        })
    }

    /// Atom in |g⟩ with the given field.
    pub fn ground(field: Wavepacket<T>) -> Self {
        Self {
            c_g: re(T::one()),
            c_e: re(T::zero()),
            field_g: field,
            field_e: Wavepacket::vacuum(),
        }
    }

    /// Atom in |e⟩ with the given field.
    pub fn excited(field: Wavepacket<T>) -> Self {
        Self {
            c_g: re(T::zero()),
            c_e: re(T::one()),
            field_g: Wavepacket::vacuum(),
            field_e: field,
        }
    }

    pub fn c_g(&self) -> Complex<T> {
        self.c_g
    }

    pub fn c_e(&self) -> Complex<T> {
        self.c_e
    }

    pub fn field_g(&self) -> &Wavepacket<T> {
        &self.field_g
    }

    pub fn field_e(&self) -> &Wavepacket<T> {
        &self.field_e
    }

    /// Total number of excitations shared by field and atom.
    pub fn n_excitations(&self) -> usize {
        if self.c_g.norm() > T::zero() {
            self.field_g.n_photons()
        } else {
            self.field_e.n_photons() + 1
        }
    }
}

/// JSON description of a single-photon envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProfileDesc {
    Exponential {
        gamma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_max: Option<f64>,
    },
    Sampled {
        times: Vec<f64>,
        re: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        im: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonDesc {
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileDesc>,
}

/// JSON description of a separable wavepacket: a shared default envelope and
/// per-photon overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavepacketDesc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileDesc>,
    pub photons: Vec<PhotonDesc>,
}

impl ProfileDesc {
    pub fn build<T: Real>(&self) -> Result<PulseProfile<T>> {
        match self {
            ProfileDesc::Exponential { gamma, t_max } => {
                let g = Bandwidth::new(T::lit(*gamma))?;
                match t_max {
                    Some(t) => PulseProfile::exponential(g, TimePoint::new(T::lit(*t))?),
                    None => PulseProfile::exponential_default(g),
                }
            }
            ProfileDesc::Sampled { times, re: real, im } => {
                let imag = im.clone().unwrap_or_else(|| vec![0.0; real.len()]);
                if imag.len() != real.len() || times.len() != real.len() {
                    return Err(ScatterError::BadGrid);
                }
                PulseProfile::sampled(
                    times.iter().map(|&t| T::lit(t)).collect(),
                    real.iter()
                        .zip(&imag)
                        .map(|(&a, &b)| Complex::new(T::lit(a), T::lit(b)))
                        .collect(),
                )
            }
        }
    }

    pub fn describe<T: Real>(profile: &PulseProfile<T>) -> Option<Self> {
        let f = |x: T| x.to_f64().unwrap_or(f64::NAN);
        match profile.shape() {
            ProfileShape::Exponential { gamma } => Some(ProfileDesc::Exponential {
                gamma: f(gamma.value()),
                t_max: Some(f(profile.horizon().value())),
            }),
            ProfileShape::Sampled { grid, values } => Some(ProfileDesc::Sampled {
                times: grid.iter().map(|&x| f(x)).collect(),
                re: values.iter().map(|v| f(v.re)).collect(),
                im: Some(values.iter().map(|v| f(v.im)).collect()),
            }),
            ProfileShape::Tabulated { .. } => None,
        }
    }
}

impl WavepacketDesc {
    pub fn build<T: Real>(&self) -> Result<Wavepacket<T>> {
        let shared = self.profile.as_ref().map(|p| p.build::<T>().map(Arc::new)).transpose()?;
        let photons = self
            .photons
            .iter()
            .map(|p| {
                let profile = match (&p.profile, &shared) {
                    (Some(own), _) => Arc::new(own.build::<T>()?),
                    (None, Some(s)) => s.clone(),
                    (None, None) => {
                        return Err(ScatterError::Unsupported(
                            "photon without a profile and no shared profile".into(),
                        ))
                    }
                };
                Ok(Photon::new(profile, p.direction))
            })
            .collect::<Result<Vec<_>>>()?;
        Wavepacket::product(photons)
    }

    /// Description of a separable wavepacket; `None` for closures or correlated states.
    pub fn describe<T: Real>(w: &Wavepacket<T>) -> Option<Self> {
        let s = w.as_separable()?;
        let photons = s
            .photons()
            .iter()
            .map(|p| {
                Some(PhotonDesc {
                    direction: p.direction,
                    profile: Some(ProfileDesc::describe(&p.profile)?),
                })
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Self { profile: None, photons })
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("description serializes")
    }
}
