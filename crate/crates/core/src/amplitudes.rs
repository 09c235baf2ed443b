//! Output amplitudes assembled from atomic kernels.
//!
//! Conventions used throughout:
//!
//! * every atomic emission carries a factor −1, applied once here;
//! * the gate θ(t − τ) is open at equality (an emission exactly at t counts);
//! * reported same-direction amplitudes (f₀, f₂ and the N-photon reflected
//!   amplitude) are the raw matrix elements divided by √N!, so that
//!   Σ ∫|f|² over the full square equals the state norm;
//! * the nonlinear correction B is reported in that same normalization, so
//!   `shifted = linear + B` holds for normalized two-emission amplitudes.

use std::cell::RefCell;
use std::fmt;
use std::io::Write;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScatterError};
use crate::kernel::{h_unchecked, kernel_convolve, ConvolutionTable, KernelSpan};
use crate::model::{Direction, InitialState, PulseProfile, TimePoint, Wavepacket};
use crate::quadrature::{integrate, QuadratureSpec};
use crate::scalar::{factorial, re, Real};

/// Emission times τ₁ ≤ … ≤ τ_N.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionTimeList<T> {
    times: Vec<T>,
}

impl<T: Real> EmissionTimeList<T> {
    /// Rejects lists that are not in non-decreasing order.
    pub fn new(times: Vec<TimePoint<T>>) -> Result<Self> {
        if times.windows(2).any(|w| w[1].value() < w[0].value()) {
            return Err(ScatterError::UnsortedTimes);
        }
        Ok(Self {
            times: times.into_iter().map(|t| t.value()).collect(),
        })
    }

    /// Stable sort of arbitrary valid times.
    pub fn sorted(mut times: Vec<TimePoint<T>>) -> Self {
        times.sort_by(|a, b| a.value().partial_cmp(&b.value()).unwrap());
        Self {
            times: times.into_iter().map(|t| t.value()).collect(),
        }
    }

    pub fn from_values(times: &[T]) -> Result<Self> {
        Self::new(times.iter().map(|&t| TimePoint::new(t)).collect::<Result<_>>()?)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Absorption windows (0, τ₁), (τ₁, τ₂), …
    pub fn spans(&self) -> Vec<(T, T)> {
        let mut prev = T::zero();
        self.times
            .iter()
            .map(|&t| {
                let s = (prev, t);
                prev = t;
                s
            })
            .collect()
    }
}

/// How single-photon kernels are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    /// Closed form for exponential envelopes, quadrature otherwise.
    #[default]
    Auto,
    /// Always integrate numerically.
    Quadrature,
}

struct PhotonKernel<'a, T> {
    profile: &'a PulseProfile<T>,
    table: Option<ConvolutionTable<T>>,
}

/// Amplitude evaluator bound to one field state.
pub struct Engine<'a, T: Real> {
    w: &'a Wavepacket<T>,
    quad: QuadratureSpec<T>,
    mode: KernelMode,
    kernels: Vec<PhotonKernel<'a, T>>,
}

impl<'a, T: Real> Engine<'a, T> {
    pub fn new(w: &'a Wavepacket<T>, quad: &QuadratureSpec<T>, mode: KernelMode) -> Result<Self> {
        quad.validate()?;
        let kernels = w
            .as_separable()
            .map(|s| {
                s.photons()
                    .iter()
                    .map(|p| PhotonKernel {
                        profile: p.profile.as_ref(),
                        table: None,
                    })
                    .collect()
            })
            .unwrap_or_default();
        Ok(Self {
            w,
            quad: *quad,
            mode,
            kernels,
        })
    }

    /// Precomputes kernel tables on the grid j·step, j < n_nodes (separable inputs).
    pub fn with_tables(mut self, step: T, n_nodes: usize) -> Result<Self> {
        let Some(s) = self.w.as_separable() else {
            return Ok(self);
        };
        for k in 0..self.kernels.len() {
            if self.mode == KernelMode::Auto && self.kernels[k].profile.gamma().is_some() {
                continue;
            }
            // photons sharing an envelope share a table
            let shared = (0..k).find(|&j| s.photons()[j].profile == s.photons()[k].profile);
            self.kernels[k].table = match shared.and_then(|j| self.kernels[j].table.clone()) {
                Some(t) => Some(t),
                None => Some(ConvolutionTable::for_profile(
                    self.kernels[k].profile,
                    step,
                    n_nodes,
                    &self.quad,
                )?),
            };
        }
        Ok(self)
    }

    pub fn wavepacket(&self) -> &Wavepacket<T> {
        self.w
    }

    pub fn quadrature(&self) -> &QuadratureSpec<T> {
        &self.quad
    }

    /// ∫_a^b e^{−(b−t′)} φ_k(t′) dt′ for photon k of a separable input.
    pub fn kernel(&self, k: usize, a: T, b: T) -> Result<Complex<T>> {
        if !(b > a) {
            return Ok(re(T::zero()));
        }
        let pk = &self.kernels[k];
        if let Some(tab) = &pk.table {
            if let (Some(i), Some(j)) = (grid_index(tab, a), grid_index(tab, b)) {
                return Ok(tab.span(i, j));
            }
        }
        if self.mode == KernelMode::Auto {
            if let Some(g) = pk.profile.gamma() {
                let tm = pk.profile.horizon().value();
                if a >= tm {
                    return Ok(re(T::zero()));
                }
                let top = b.min(tm);
                return Ok(re(h_unchecked(top, a, g.value()) * (top - b).exp()));
            }
        }
        kernel_convolve(pk.profile, KernelSpan::from_values(a, b)?, &self.quad)
    }

    /// Unsigned chain ∫⋯∫ ∏_i e^{−(b_i−t_i)} D(t_1..t_N) over the windows (a_i, b_i).
    pub fn emission_chain(&self, spans: &[(T, T)]) -> Result<Complex<T>> {
        let n = self.w.n_photons();
        if spans.len() != n {
            return Err(ScatterError::PhotonCount {
                expected: n,
                found: spans.len(),
            });
        }
        if n == 0 {
            return Ok(re(T::one()));
        }
        let Some(s) = self.w.as_separable() else {
            return nested_emission_integral(self.w, spans, &self.quad);
        };
        if s.is_identical() {
            let mut prod = re(s.scale() * factorial::<T>(n));
            for &(a, b) in spans {
                prod = prod * self.kernel(0, a, b)?;
            }
            return Ok(prod);
        }
        let mut m = Vec::with_capacity(n * n);
        for &(a, b) in spans {
            for k in 0..n {
                m.push(self.kernel(k, a, b)?);
            }
        }
        Ok(crate::model::permanent(&m, n) * s.scale())
    }

    fn require_two(&self) -> Result<()> {
        match self.w.n_photons() {
            2 => Ok(()),
            n => Err(ScatterError::PhotonCount { expected: 2, found: n }),
        }
    }

    /// Single-emission term: −∫₀^τ e^{−(τ−t′)} Σ_x ⟨vac|a^x_{t′} a^y_u|ψ⟩ dt′.
    pub fn single_emission(&self, tau: T, y: Direction, u: T) -> Result<Complex<T>> {
        self.require_two()?;
        if let Some(s) = self.w.as_separable() {
            let ph = s.photons();
            let mut acc = re(T::zero());
            for (k, j) in [(0usize, 1usize), (1, 0)] {
                if ph[j].direction == y {
                    acc = acc + self.kernel(k, T::zero(), tau)? * ph[j].profile.eval(u);
                }
            }
            return Ok(-acc * s.scale());
        }
        let upper = tau.min(self.w.horizon());
        if !(upper > T::zero()) {
            return Ok(re(T::zero()));
        }
        let f = |t: T| {
            (self.w.vacuum_overlap(&[(Direction::Right, t), (y, u)])
                + self.w.vacuum_overlap(&[(Direction::Left, t), (y, u)]))
                * (t - tau).exp()
        };
        let v = integrate(f, T::zero(), upper, &self.quad, &self.w.panel_hint(T::zero(), upper))?;
        Ok(-v.value)
    }

    /// Raw double-emission term with shifted windows (0, a), (a, b), a ≤ b.
    pub fn double_emission(&self, t1: T, t2: T) -> Result<Complex<T>> {
        self.require_two()?;
        let (a, b) = order(t1, t2);
        self.emission_chain(&[(T::zero(), a), (a, b)])
    }

    /// Raw linear double-kernel term: both windows start at the wavefront.
    pub fn linear_double_kernel(&self, t1: T, t2: T) -> Result<Complex<T>> {
        self.require_two()?;
        let (a, b) = order(t1, t2);
        self.emission_chain(&[(T::zero(), a), (T::zero(), b)])
    }

    /// Normalized nonlinear correction, so that
    /// `double_emission/√2 = linear_double_kernel/√2 + B`.
    pub fn nonlinear_correction(&self, t1: T, t2: T) -> Result<Complex<T>> {
        self.require_two()?;
        let (a, b) = order(t1, t2);
        if !(a > T::zero()) {
            return Ok(re(T::zero()));
        }
        let square = self.emission_chain(&[(T::zero(), a), (T::zero(), a)])?;
        Ok(-square * ((a - b).exp() / T::SQRT_2()))
    }

    /// Two-photon output channels at dynamical time t.
    pub fn two_photon(&self, tau1: T, tau2: T, t: T) -> Result<TwoPhotonOutputs<T>> {
        self.require_two()?;
        let open1 = t >= tau1;
        let open2 = t >= tau2;
        let zero = re(T::zero());
        let e = if open1 && open2 { self.double_emission(tau1, tau2)? } else { zero };
        let raw = |d1: Direction, d2: Direction| -> Result<Complex<T>> {
            let mut v = self.w.vacuum_overlap(&[(d1, tau1), (d2, tau2)]) + e;
            if open1 {
                v = v + self.single_emission(tau1, d2, tau2)?;
            }
            if open2 {
                v = v + self.single_emission(tau2, d1, tau1)?;
            }
            Ok(v)
        };
        let r2 = T::SQRT_2();
        Ok(TwoPhotonOutputs {
            f0: raw(Direction::Left, Direction::Left)? / r2,
            f1: raw(Direction::Right, Direction::Left)?,
            f2: raw(Direction::Right, Direction::Right)? / r2,
        })
    }

    /// Normalized amplitude for all N photons leaving opposite to their incidence.
    pub fn reflected(&self, tau: &EmissionTimeList<T>, t: T) -> Result<Complex<T>> {
        let n = self.w.n_photons();
        if tau.len() != n {
            return Err(ScatterError::PhotonCount {
                expected: n,
                found: tau.len(),
            });
        }
        match self.w {
            Wavepacket::Separable(s) => {
                if n > 0 && s.common_direction().is_none() {
                    return Err(ScatterError::Unsupported(
                        "reflected amplitude requires all photons incident from one side".into(),
                    ));
                }
            }
            Wavepacket::Correlated2(c) => {
                let nonzero = |k: usize| c.samples(k).iter().any(|v| v.norm() > T::zero());
                if nonzero(1) || (nonzero(0) && nonzero(2)) {
                    return Err(ScatterError::Unsupported(
                        "reflected amplitude requires all photons incident from one side".into(),
                    ));
                }
            }
        }
        if tau.as_slice().iter().any(|&x| x > t) {
            return Ok(re(T::zero()));
        }
        let chain = self.emission_chain(&tau.spans())?;
        Ok(chain * (sign::<T>(n) / factorial::<T>(n).sqrt()))
    }
}

fn order<T: Real>(a: T, b: T) -> (T, T) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn sign<T: Real>(n: usize) -> T {
    if n % 2 == 0 {
        T::one()
    } else {
        -T::one()
    }
}

fn grid_index<T: Real>(tab: &ConvolutionTable<T>, x: T) -> Option<usize> {
    let r = x / tab.step();
    let i = r.round();
    if (r - i).abs() > T::lit(1e-9) || i < T::zero() {
        return None;
    }
    let i = i.to_usize()?;
    (i < tab.len()).then_some(i)
}

/// Nested quadrature of the chain integral for any input state (reference path).
pub fn nested_emission_integral<T: Real>(
    w: &Wavepacket<T>,
    spans: &[(T, T)],
    quad: &QuadratureSpec<T>,
) -> Result<Complex<T>> {
    if spans.len() != w.n_photons() {
        return Err(ScatterError::PhotonCount {
            expected: w.n_photons(),
            found: spans.len(),
        });
    }
    nested_level(w, spans, &[], quad)
}

fn nested_level<T: Real>(
    w: &Wavepacket<T>,
    spans: &[(T, T)],
    fixed: &[T],
    quad: &QuadratureSpec<T>,
) -> Result<Complex<T>> {
    let level = fixed.len();
    if level == spans.len() {
        return Ok(w.field_overlap(fixed));
    }
    let (a, b) = spans[level];
    let upper = b.min(w.horizon());
    if !(upper > a) {
        return Ok(re(T::zero()));
    }
    let failure = RefCell::new(None);
    let f = |x: T| {
        let mut times = fixed.to_vec();
        times.push(x);
        match nested_level(w, spans, &times, quad) {
            Ok(v) => v * (x - b).exp(),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                re(T::zero())
            }
        }
    };
    let v = integrate(f, a, upper, quad, &w.panel_hint(a, upper))?;
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(v.value),
    }
}

/// ⟨∅| emission chain |ψ_in⟩ for emission times τ₁ ≤ … ≤ τ_N, including an
/// initially excited atom.
pub fn ordered_emission_amplitude<T: Real>(
    tau: &EmissionTimeList<T>,
    state: &InitialState<T>,
    quad: &QuadratureSpec<T>,
) -> Result<Complex<T>> {
    let n = tau.len();
    if state.n_excitations() != n {
        return Err(ScatterError::PhotonCount {
            expected: state.n_excitations(),
            found: n,
        });
    }
    let zero = T::zero();
    let mut total = re(zero);
    if state.c_g().norm() > zero {
        let engine = Engine::new(state.field_g(), quad, KernelMode::Quadrature)?;
        total = total + engine.emission_chain(&tau.spans())? * state.c_g() * sign::<T>(n);
    }
    if state.c_e().norm() > zero {
        let engine = Engine::new(state.field_e(), quad, KernelMode::Quadrature)?;
        let spans = &tau.spans()[1..];
        let first = tau.as_slice()[0];
        total = total + engine.emission_chain(spans)? * state.c_e() * ((-first).exp() * sign::<T>(n - 1));
    }
    Ok(total)
}

/// Normalized amplitude that all N photons leave opposite to their incidence, at dynamical time t.
pub fn reflection_amplitude_f0<T: Real>(
    tau: &EmissionTimeList<T>,
    w: &Wavepacket<T>,
    t: TimePoint<T>,
    quad: &QuadratureSpec<T>,
) -> Result<Complex<T>> {
    Engine::new(w, quad, KernelMode::Quadrature)?.reflected(tau, t.value())
}

/// Two-photon channel amplitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPhotonOutputs<T> {
    /// Both photons left-moving (↼↼).
    pub f0: Complex<T>,
    /// First photon right-moving, second left-moving (⇀↼).
    pub f1: Complex<T>,
    /// Both photons right-moving (⇀⇀).
    pub f2: Complex<T>,
}

impl<T: Real> TwoPhotonOutputs<T> {
    pub fn get(&self, channel: Channel) -> Complex<T> {
        match channel {
            Channel::F0 => self.f0,
            Channel::F1 => self.f1,
            Channel::F2 => self.f2,
        }
    }

    /// Σ|f|² at this point.
    pub fn intensity(&self) -> T {
        self.f0.norm_sqr() + self.f1.norm_sqr() + self.f2.norm_sqr()
    }
}

pub fn two_photon_outputs<T: Real>(
    tau1: TimePoint<T>,
    tau2: TimePoint<T>,
    t: TimePoint<T>,
    w: &Wavepacket<T>,
    quad: &QuadratureSpec<T>,
) -> Result<TwoPhotonOutputs<T>> {
    Engine::new(w, quad, KernelMode::Quadrature)?.two_photon(tau1.value(), tau2.value(), t.value())
}

pub fn nonlinear_correction_b<T: Real>(
    tau1: TimePoint<T>,
    tau2: TimePoint<T>,
    w: &Wavepacket<T>,
    quad: &QuadratureSpec<T>,
) -> Result<Complex<T>> {
    Engine::new(w, quad, KernelMode::Quadrature)?.nonlinear_correction(tau1.value(), tau2.value())
}

/// Two-photon output channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    F0,
    F1,
    F2,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::F0, Channel::F1, Channel::F2];

    pub fn directions(self) -> Vec<Direction> {
        match self {
            Channel::F0 => vec![Direction::Left, Direction::Left],
            Channel::F1 => vec![Direction::Right, Direction::Left],
            Channel::F2 => vec![Direction::Right, Direction::Right],
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::F0 => "f0",
            Channel::F1 => "f1",
            Channel::F2 => "f2",
        })
    }
}

/// Arrow label of a direction pattern, e.g. "⇀↼".
pub fn channel_label(dirs: &[Direction]) -> String {
    dirs.iter().map(|d| d.arrow()).collect()
}

/// Normalized amplitudes on a tensor grid of emission times.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeGrid<T> {
    axes: Vec<Vec<T>>,
    dynamical_time: T,
    channel: Vec<Direction>,
    values: Vec<Complex<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSummary {
    pub len: usize,
    pub start: f64,
    pub end: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub channel: String,
    pub directions: Vec<Direction>,
    pub dynamical_time: f64,
    pub axes: Vec<AxisSummary>,
    pub columns: Vec<String>,
}

/// Uniform grid spacing, if the axis is uniform to a relative 1e-9.
pub fn uniform_step<T: Real>(axis: &[T]) -> Option<T> {
    if axis.len() < 2 {
        return None;
    }
    let step = (axis[axis.len() - 1] - axis[0]) / T::from_usize_lossy(axis.len() - 1);
    let tol = step.abs() * T::lit(1e-9);
    axis.iter()
        .enumerate()
        .all(|(i, &x)| (x - (axis[0] + step * T::from_usize_lossy(i))).abs() <= tol)
        .then_some(step)
}

/// Twelve significant digits, fixed exponent notation.
pub fn format_real<T: Real>(x: T) -> String {
    format!("{:.11e}", x.to_f64().unwrap_or(f64::NAN))
}

impl<T: Real> AmplitudeGrid<T> {
    pub fn new(axes: Vec<Vec<T>>, dynamical_time: T, channel: Vec<Direction>, values: Vec<Complex<T>>) -> Result<Self> {
        let size: usize = axes.iter().map(|a| a.len()).product();
        if axes.is_empty() || channel.len() != axes.len() || size != values.len() {
            return Err(ScatterError::BadGrid);
        }
        Ok(Self {
            axes,
            dynamical_time,
            channel,
            values,
        })
    }

    /// Evaluates `f` at every node in parallel (row-major, last axis fastest).
    pub fn fill(
        axes: Vec<Vec<T>>,
        dynamical_time: T,
        channel: Vec<Direction>,
        f: impl Fn(&[T]) -> Result<Complex<T>> + Sync,
    ) -> Result<Self> {
        let shape: Vec<usize> = axes.iter().map(|a| a.len()).collect();
        let size: usize = shape.iter().product();
        let values = (0..size)
            .into_par_iter()
            .map(|flat| {
                let idx = unravel(flat, &shape);
                let point: Vec<T> = idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
                f(&point)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes, dynamical_time, channel, values)
    }

    pub fn axes(&self) -> &[Vec<T>] {
        &self.axes
    }

    pub fn dynamical_time(&self) -> T {
        self.dynamical_time
    }

    pub fn channel(&self) -> &[Direction] {
        &self.channel
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len()).collect()
    }

    pub fn get(&self, idx: &[usize]) -> Complex<T> {
        let shape = self.shape();
        let flat = idx.iter().zip(&shape).fold(0, |acc, (&i, &n)| acc * n + i);
        self.values[flat]
    }

    /// Largest |f(…τ_i…τ_j…) − f(…τ_j…τ_i…)| over all axis pairs sharing the same nodes.
    pub fn max_exchange_asymmetry(&self) -> T {
        let mut worst = T::zero();
        if self.axes.len() != 2 || self.axes[0] != self.axes[1] {
            return worst;
        }
        let n = self.axes[0].len();
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.values[i * n + j] - self.values[j * n + i]).norm());
            }
        }
        worst
    }

    pub fn header(&self) -> GridHeader {
        let f = |x: T| x.to_f64().unwrap_or(f64::NAN);
        let mut columns: Vec<String> = (1..=self.axes.len()).map(|i| format!("tau{i}")).collect();
        columns.extend(["t", "re", "im"].map(String::from));
        GridHeader {
            channel: channel_label(&self.channel),
            directions: self.channel.clone(),
            dynamical_time: f(self.dynamical_time),
            axes: self
                .axes
                .iter()
                .map(|a| AxisSummary {
                    len: a.len(),
                    start: a.first().map(|&x| f(x)).unwrap_or(0.0),
                    end: a.last().map(|&x| f(x)).unwrap_or(0.0),
                    step: uniform_step(a).map(f),
                })
                .collect(),
            columns,
        }
    }

    pub fn header_json(&self) -> String {
        serde_json::to_string_pretty(&self.header()).expect("header serializes")
    }

    /// One row per node: τ₁, …, τ_N, t, Re f, Im f.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let header = self.header();
        writeln!(out, "{}", header.columns.join(","))?;
        let shape = self.shape();
        let t = format_real(self.dynamical_time);
        for (flat, v) in self.values.iter().enumerate() {
            let idx = unravel(flat, &shape);
            let mut row: Vec<String> = idx.iter().zip(&self.axes).map(|(&i, a)| format_real(a[i])).collect();
            row.push(t.clone());
            row.push(format_real(v.re));
            row.push(format_real(v.im));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for d in (0..shape.len()).rev() {
        idx[d] = flat % shape[d];
        flat /= shape[d];
    }
    idx
}

/// f₀, f₁, f₂ on a common square grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhotonGrids<T> {
    pub f0: AmplitudeGrid<T>,
    pub f1: AmplitudeGrid<T>,
    pub f2: AmplitudeGrid<T>,
}

impl<T: Real> TwoPhotonGrids<T> {
    pub fn get(&self, channel: Channel) -> &AmplitudeGrid<T> {
        match channel {
            Channel::F0 => &self.f0,
            Channel::F1 => &self.f1,
            Channel::F2 => &self.f2,
        }
    }
}

/// Evaluates all two-photon channels on axis × axis at dynamical time t.
///
/// Separable inputs on a uniform axis starting at 0 use tabulated kernels.
pub fn two_photon_grid<T: Real>(
    w: &Wavepacket<T>,
    axis: &[T],
    t: TimePoint<T>,
    quad: &QuadratureSpec<T>,
    mode: KernelMode,
) -> Result<TwoPhotonGrids<T>> {
    if axis.is_empty() || axis.iter().any(|&x| !(x >= T::zero()) || !x.is_finite()) {
        return Err(ScatterError::BadGrid);
    }
    let mut engine = Engine::new(w, quad, mode)?;
    if let Some(step) = uniform_step(axis) {
        if axis[0].abs() <= step * T::lit(1e-9) && step > T::zero() {
            engine = engine.with_tables(step, axis.len())?;
        }
    }
    let n = axis.len();
    let t = t.value();
    let outputs = (0..n * n)
        .into_par_iter()
        .map(|flat| engine_point(&engine, axis[flat / n], axis[flat % n], t))
        .collect::<Result<Vec<_>>>()?;
    let make = |ch: Channel| {
        AmplitudeGrid::new(
            vec![axis.to_vec(), axis.to_vec()],
            t,
            ch.directions(),
            outputs.iter().map(|o| o.get(ch)).collect(),
        )
    };
    Ok(TwoPhotonGrids {
        f0: make(Channel::F0)?,
        f1: make(Channel::F1)?,
        f2: make(Channel::F2)?,
    })
}

fn engine_point<T: Real>(e: &Engine<'_, T>, a: T, b: T, t: T) -> Result<TwoPhotonOutputs<T>> {
    e.two_photon(a, b, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::h_closed_form;
    use crate::model::{Bandwidth, CorrelatedPair, Photon};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn tp(x: f64) -> TimePoint<f64> {
        TimePoint::new(x).unwrap()
    }

    fn exp(g: f64) -> PulseProfile<f64> {
        PulseProfile::exponential_default(Bandwidth::new(g).unwrap()).unwrap()
    }

    fn h(b: f64, a: f64, g: f64) -> f64 {
        h_closed_form(tp(b), tp(a), Bandwidth::new(g).unwrap()).unwrap()
    }

    fn q() -> QuadratureSpec<f64> {
        QuadratureSpec::default()
    }

    #[test]
    fn time_list_validation() {
        assert!(EmissionTimeList::from_values(&[2.0, 1.0]).is_err());
        assert!(EmissionTimeList::from_values(&[1.0, 1.0, 3.0]).is_ok());
        let s = EmissionTimeList::sorted(vec![tp(3.0), tp(1.0)]);
        assert_eq!(s.as_slice(), &[1.0, 3.0]);
        assert_eq!(s.spans(), vec![(0.0, 1.0), (1.0, 3.0)]);
    }

    #[test]
    fn excited_atom_relaxes() {
        let state = InitialState::excited(Wavepacket::vacuum());
        for t in [0.0, 0.5, 2.0] {
            let tau = EmissionTimeList::from_values(&[t]).unwrap();
            let a = ordered_emission_amplitude(&tau, &state, &q()).unwrap();
            assert_relative_eq!(a.re, (-t as f64).exp(), max_relative = 1e-15);
        }
    }

    #[test]
    fn single_photon_emission_is_minus_h() {
        let w = Wavepacket::identical(exp(0.8), Direction::Right, 1).unwrap();
        let state = InitialState::ground(w);
        let tau = EmissionTimeList::from_values(&[1.7]).unwrap();
        let a = ordered_emission_amplitude(&tau, &state, &q()).unwrap();
        assert_relative_eq!(a.re, -h(1.7, 0.0, 0.8), max_relative = 1e-10);
    }

    #[test]
    fn excitation_count_must_match() {
        let w = Wavepacket::identical(exp(1.0), Direction::Right, 2).unwrap();
        let tau = EmissionTimeList::from_values(&[1.0]).unwrap();
        assert!(ordered_emission_amplitude(&tau, &InitialState::ground(w), &q()).is_err());
    }

    #[test]
    fn reflected_two_photon_factorizes() {
        let w = Wavepacket::identical(exp(2.0), Direction::Right, 2).unwrap();
        let tau = EmissionTimeList::from_values(&[1.0, 2.0]).unwrap();
        let f = reflection_amplitude_f0(&tau, &w, tp(50.0), &q()).unwrap();
        assert_relative_eq!(f.re, h(1.0, 0.0, 2.0) * h(2.0, 1.0, 2.0), max_relative = 1e-10);
        // raw matrix element carries the extra √2!
        let raw = ordered_emission_amplitude(&tau, &InitialState::ground(w.clone()), &q()).unwrap();
        assert_relative_eq!(raw.re, 2f64.sqrt() * f.re, max_relative = 1e-12);
        assert_eq!(reflection_amplitude_f0(&tau, &w, tp(1.5), &q()).unwrap(), re(0.0));
        assert_eq!(reflection_amplitude_f0(&tau, &w, tp(0.0), &q()).unwrap(), re(0.0));
    }

    #[test]
    fn mixed_direction_reflection_is_rejected() {
        let p = Arc::new(exp(1.0));
        let w = Wavepacket::product(vec![
            Photon::new(p.clone(), Direction::Right),
            Photon::new(p, Direction::Left),
        ])
        .unwrap();
        let tau = EmissionTimeList::from_values(&[1.0, 2.0]).unwrap();
        assert!(matches!(
            reflection_amplitude_f0(&tau, &w, tp(5.0), &q()),
            Err(ScatterError::Unsupported(_))
        ));
    }

    #[test]
    fn initial_condition_of_channels() {
        let w = Wavepacket::identical(exp(1.0), Direction::Right, 2).unwrap();
        let o = two_photon_outputs(tp(0.3), tp(1.1), tp(0.0), &w, &q()).unwrap();
        assert_relative_eq!(o.f2.re, w.component(2, &[0.3, 1.1]).unwrap().re, max_relative = 1e-14);
        assert_eq!(o.f1, re(0.0));
        assert_eq!(o.f0, re(0.0));

        let p = Arc::new(exp(1.0));
        let w = Wavepacket::product(vec![
            Photon::new(p.clone(), Direction::Right),
            Photon::new(p, Direction::Left),
        ])
        .unwrap();
        for &(a, b) in &[(0.4, 2.0), (1.0, 1.0), (3.0, 0.2)] {
            let o = two_photon_outputs(tp(a), tp(b), tp(0.0), &w, &q()).unwrap();
            assert_relative_eq!(o.f1.re, w.component(1, &[a, b]).unwrap().re, max_relative = 1e-14);
        }
    }

    #[test]
    fn closed_gates_give_exact_zero_reflection() {
        let w = Wavepacket::identical(exp(1.0), Direction::Right, 2).unwrap();
        let o = two_photon_outputs(tp(2.0), tp(3.0), tp(1.5), &w, &q()).unwrap();
        assert_eq!(o.f0, re(0.0));
        let o = two_photon_outputs(tp(1.0), tp(3.0), tp(1.5), &w, &q()).unwrap();
        assert_eq!(o.f0, re(0.0));
    }

    #[test]
    fn correction_for_product_input() {
        let w = Wavepacket::identical(exp(1.0), Direction::Right, 2).unwrap();
        let b = nonlinear_correction_b(tp(1.0), tp(2.0), &w, &q()).unwrap();
        assert_relative_eq!(b.re, -(-1.0f64).exp() * h(1.0, 0.0, 1.0).powi(2), max_relative = 1e-10);
        assert_eq!(nonlinear_correction_b(tp(0.0), tp(2.0), &w, &q()).unwrap(), re(0.0));
        let swapped = nonlinear_correction_b(tp(2.0), tp(1.0), &w, &q()).unwrap();
        assert_eq!(b, swapped);
    }

    #[test]
    fn identity_holds_for_distinct_envelopes() {
        let w = Wavepacket::product(vec![
            Photon::new(Arc::new(exp(0.7)), Direction::Right),
            Photon::new(Arc::new(exp(3.0)), Direction::Left),
        ])
        .unwrap();
        let e = Engine::new(&w, &q(), KernelMode::Quadrature).unwrap();
        for &(a, b) in &[(0.5, 1.5), (2.0, 0.3), (1.0, 1.0), (4.0, 6.0)] {
            let lhs = e.double_emission(a, b).unwrap() / 2f64.sqrt();
            let rhs = e.linear_double_kernel(a, b).unwrap() / 2f64.sqrt() + e.nonlinear_correction(a, b).unwrap();
            assert!((lhs - rhs).norm() < 1e-12, "({a},{b})");
        }
    }

    #[test]
    fn analytic_and_quadrature_kernels_agree() {
        let w = Wavepacket::identical(exp(1.3), Direction::Left, 2).unwrap();
        let ea = Engine::new(&w, &q(), KernelMode::Auto).unwrap();
        let eq = Engine::new(&w, &q(), KernelMode::Quadrature).unwrap();
        for &(a, b) in &[(0.5, 1.5), (2.0, 0.3), (10.0, 40.0), (25.0, 35.0)] {
            let x = ea.two_photon(a, b, 100.0).unwrap();
            let y = eq.two_photon(a, b, 100.0).unwrap();
            for ch in Channel::ALL {
                assert!((x.get(ch) - y.get(ch)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn nested_quadrature_matches_factorized_chain() {
        let w = Wavepacket::product(vec![
            Photon::new(Arc::new(exp(1.0)), Direction::Right),
            Photon::new(Arc::new(exp(2.5)), Direction::Right),
        ])
        .unwrap();
        let e = Engine::new(&w, &q(), KernelMode::Auto).unwrap();
        let spans = [(0.0, 0.8), (0.8, 2.1)];
        let f = e.emission_chain(&spans).unwrap();
        let n = nested_emission_integral(&w, &spans, &q()).unwrap();
        assert!((f - n).norm() < 1e-11);
    }

    #[test]
    fn correlated_pair_matches_separable_equivalent() {
        let n = 161;
        let axis: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        let xi = |t: f64| (-(t as f64) / 2.0).exp();
        let mut t2 = vec![re(0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                t2[i * n + j] = re(xi(axis[i]) * xi(axis[j]));
            }
        }
        let pair = CorrelatedPair::normalized(axis, [vec![re(0.0); n * n], vec![re(0.0); n * n], t2]).unwrap();
        let wc = Wavepacket::correlated(pair);
        let ws = Wavepacket::identical(exp(1.0), Direction::Right, 2).unwrap();
        let quad = QuadratureSpec::new(crate::QuadratureRule::Adaptive, 1e-9, 1e-12, 4000).unwrap();
        let a = two_photon_outputs(tp(1.05), tp(2.3), tp(30.0), &wc, &quad).unwrap();
        let b = two_photon_outputs(tp(1.05), tp(2.3), tp(30.0), &ws, &quad).unwrap();
        // bilinear sampling at spacing 0.1 limits agreement
        for ch in Channel::ALL {
            assert!((a.get(ch) - b.get(ch)).norm() < 2e-3, "{ch}");
        }
        let tau = EmissionTimeList::from_values(&[1.05, 2.3]).unwrap();
        let ra = reflection_amplitude_f0(&tau, &wc, tp(30.0), &quad).unwrap();
        assert!((ra - a.f0).norm() < 1e-9);
    }

    #[test]
    fn grid_is_symmetric_and_matches_pointwise() {
        let w = Wavepacket::identical(exp(1.0), Direction::Right, 2).unwrap();
        let axis: Vec<f64> = (0..24).map(|i| i as f64 * 0.25).collect();
        let grids = two_photon_grid(&w, &axis, tp(1e3), &q(), KernelMode::Auto).unwrap();
        assert!(grids.f0.max_exchange_asymmetry() < 1e-12);
        assert!(grids.f2.max_exchange_asymmetry() < 1e-12);
        let direct = two_photon_outputs(tp(axis[5]), tp(axis[17]), tp(1e3), &w, &q()).unwrap();
        assert!((grids.f1.get(&[5, 17]) - direct.f1).norm() < 1e-12);

        let tabulated = two_photon_grid(&w, &axis, tp(1e3), &q(), KernelMode::Quadrature).unwrap();
        for ch in Channel::ALL {
            let (x, y) = (grids.get(ch), tabulated.get(ch));
            let err = x.values().iter().zip(y.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{ch}: {err}");
        }
    }

    #[test]
    fn csv_is_deterministic() {
        let w = Wavepacket::identical(exp(2.0), Direction::Right, 2).unwrap();
        let axis = vec![0.0, 0.5, 1.0];
        let g = two_photon_grid(&w, &axis, tp(10.0), &q(), KernelMode::Auto).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        g.f0.write_csv(&mut a).unwrap();
        g.f0.write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "tau1,tau2,t,re,im");
        assert_eq!(lines.count(), 9);
        assert!(!text.contains('\r'));
        let header: GridHeader = serde_json::from_str(&g.f1.header_json()).unwrap();
        assert_eq!(header.channel, "⇀↼");
        assert_eq!(header.axes[0].step, Some(0.5));
    }

    #[test]
    fn grid_rejects_bad_axes() {
        let w = Wavepacket::identical(exp(2.0), Direction::Right, 2).unwrap();
        assert!(two_photon_grid(&w, &[], tp(1.0), &q(), KernelMode::Auto).is_err());
        assert!(two_photon_grid(&w, &[-1.0, 0.0], tp(1.0), &q(), KernelMode::Auto).is_err());
        assert!(AmplitudeGrid::new(vec![vec![0.0, 1.0]], 0.0, vec![Direction::Left], vec![re(0.0)]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn factorization_up_to_five_photons(g in 0.1f64..8.0, n in 1usize..6, raw in proptest::collection::vec(0.0f64..6.0, 5)) {
            let mut times: Vec<f64> = raw[..n].to_vec();
            times.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let w = Wavepacket::identical(exp(g), Direction::Left, n).unwrap();
            let tau = EmissionTimeList::from_values(&times).unwrap();
            let f = reflection_amplitude_f0(&tau, &w, tp(100.0), &q()).unwrap();
            let mut expect = if n % 2 == 0 { 1.0 } else { -1.0 };
            let mut prev = 0.0;
            for &t in &times {
                expect *= h(t, prev, g);
                prev = t;
            }
            prop_assert!((f.re - expect).abs() <= 1e-8 * expect.abs() + 1e-300);
        }

        #[test]
        fn same_direction_channels_are_exchange_symmetric(g in 0.2f64..6.0, a in 0.0f64..5.0, b in 0.0f64..5.0, t in 0.0f64..6.0) {
            let w = Wavepacket::identical(exp(g), Direction::Right, 2).unwrap();
            let e = Engine::new(&w, &q(), KernelMode::Auto).unwrap();
            let x = e.two_photon(a, b, t).unwrap();
            let y = e.two_photon(b, a, t).unwrap();
            prop_assert!((x.f0 - y.f0).norm() < 1e-9);
            prop_assert!((x.f2 - y.f2).norm() < 1e-9);
        }
    }
}
