//! Frequency-domain two-photon scattering and the bridge from time-domain grids.
//!
//! Detunings ω are measured from the atomic resonance in units of γ. The
//! transform convention is ξ(ω) = (2π)^{−1/2} ∫ ξ(τ) e^{+iωτ} dτ, under which the
//! exponential envelope √Γ·e^{−τΓ/2} maps to √(Γ/2π)/(Γ/2 − iω).

use std::f64::consts::PI;

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::amplitudes::{channel_label, two_photon_grid, uniform_step, AmplitudeGrid, Channel, KernelMode, TwoPhotonOutputs};
use crate::error::{Result, ScatterError};
use crate::model::{Bandwidth, Direction, PulseProfile, TimePoint, Wavepacket};
use crate::quadrature::{integrate, PanelHint, QuadratureSpec};
use crate::scalar::{re, Real};

/// Detuning from resonance in units of γ.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FrequencyPoint<T>(T);

impl<T: Real> FrequencyPoint<T> {
    pub fn new(detuning: T) -> Result<Self> {
        if detuning.is_finite() {
            Ok(Self(detuning))
        } else {
            Err(ScatterError::Unsupported("detuning must be finite".into()))
        }
    }

    pub fn value(self) -> T {
        self.0
    }
}

/// Single-photon reflection and transmission amplitudes (r_ω, t_ω).
pub fn single_photon_r_t<T: Real>(omega: FrequencyPoint<T>) -> (Complex<T>, Complex<T>) {
    let w = omega.value();
    let den = Complex::new(w, T::one());
    let r = Complex::new(T::zero(), -T::one()) / den;
    (r, Complex::new(w, T::zero()) / den)
}

#[inline]
fn r_of<T: Real>(w: T) -> Complex<T> {
    Complex::new(T::zero(), -T::one()) / Complex::new(w, T::one())
}

/// Spectrum of a single exponential envelope, √(Γ/2π)/(Γ/2 − iω).
pub fn lorentzian<T: Real>(gamma: Bandwidth<T>, omega: T) -> Complex<T> {
    let g = gamma.value();
    re((g / T::lit(2.0 * PI)).sqrt()) / Complex::new(g * T::lit(0.5), -omega)
}

/// Two-photon amplitude ξ₂(ω₁, ω₂) of the incident (right-moving) pair.
pub trait TwoPhotonSpectrum<T: Real>: Sync {
    fn eval(&self, w1: T, w2: T) -> Complex<T>;

    /// Frequency range outside which the spectrum is zero, if bounded.
    fn support(&self) -> Option<(T, T)> {
        None
    }

    /// Narrowest spectral feature, used to size quadrature panels.
    fn feature_width(&self) -> T {
        T::one()
    }
}

/// Product of two identical Lorentzians: the spectrum of two photons in one exponential mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzianPair<T> {
    pub gamma: Bandwidth<T>,
}

impl<T: Real> TwoPhotonSpectrum<T> for LorentzianPair<T> {
    fn eval(&self, w1: T, w2: T) -> Complex<T> {
        lorentzian(self.gamma, w1) * lorentzian(self.gamma, w2)
    }

    fn feature_width(&self) -> T {
        T::one().min(self.gamma.value() * T::lit(0.5))
    }
}

/// Complex amplitudes on a tensor grid of detunings.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqAmplitudeGrid<T> {
    axes: Vec<Vec<T>>,
    channel: Vec<Direction>,
    values: Vec<Complex<T>>,
}

impl<T: Real> FreqAmplitudeGrid<T> {
    pub fn new(axes: Vec<Vec<T>>, channel: Vec<Direction>, values: Vec<Complex<T>>) -> Result<Self> {
        let size: usize = axes.iter().map(|a| a.len()).product();
        if axes.is_empty()
            || size != values.len()
            || channel.len() != axes.len()
            || axes.iter().any(|a| a.len() < 2 || a.windows(2).any(|w| !(w[1] > w[0])))
        {
            return Err(ScatterError::BadGrid);
        }
        Ok(Self { axes, channel, values })
    }

    pub fn axes(&self) -> &[Vec<T>] {
        &self.axes
    }

    pub fn channel(&self) -> &[Direction] {
        &self.channel
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn get(&self, idx: &[usize]) -> Complex<T> {
        let flat = idx
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, a)| acc * a.len() + i);
        self.values[flat]
    }

    /// Σ|F|² Δω over the grid (uniform axes).
    pub fn norm_sq(&self) -> T {
        let cell: T = self
            .axes
            .iter()
            .map(|a| uniform_step(a).unwrap_or(T::nan()))
            .fold(T::one(), |acc, d| acc * d);
        self.values.iter().map(|v| v.norm_sqr()).sum::<T>() * cell
    }

    fn locate(axis: &[T], x: T) -> Option<(usize, T)> {
        if x < axis[0] || x > axis[axis.len() - 1] {
            return None;
        }
        let i = axis.partition_point(|&g| g <= x).clamp(1, axis.len() - 1);
        Some((i - 1, (x - axis[i - 1]) / (axis[i] - axis[i - 1])))
    }
}

impl<T: Real> TwoPhotonSpectrum<T> for FreqAmplitudeGrid<T> {
    /// Bilinear interpolation; zero outside the grid.
    fn eval(&self, w1: T, w2: T) -> Complex<T> {
        if self.axes.len() != 2 {
            return re(T::zero());
        }
        let (Some((i, u)), Some((j, v))) = (Self::locate(&self.axes[0], w1), Self::locate(&self.axes[1], w2)) else {
            return re(T::zero());
        };
        let n = self.axes[1].len();
        let one = T::one();
        let f = &self.values;
        f[i * n + j] * ((one - u) * (one - v))
            + f[(i + 1) * n + j] * (u * (one - v))
            + f[i * n + j + 1] * ((one - u) * v)
            + f[(i + 1) * n + j + 1] * (u * v)
    }

    fn support(&self) -> Option<(T, T)> {
        let lo = self.axes.iter().map(|a| a[0]).fold(T::infinity(), T::min);
        let hi = self.axes.iter().map(|a| a[a.len() - 1]).fold(T::neg_infinity(), T::max);
        Some((lo, hi))
    }

    fn feature_width(&self) -> T {
        self.axes
            .iter()
            .filter_map(|a| uniform_step(a))
            .fold(T::one(), T::min)
    }
}

/// Half-width of the directly integrated part of the anti-diagonal integral.
pub const OMEGA_MAX: f64 = 50.0;

/// Largest tolerated estimate of the anti-diagonal integral beyond a bounded spectrum.
pub const TAIL_BUDGET: f64 = 1e-6;

/// Anti-diagonal integral ∫ r_{ω′} r_{Ω−ω′} ξ₂(ω′, Ω−ω′) dω′ with its tail contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntiDiagonal<T> {
    pub value: Complex<T>,
    pub tail: T,
}

pub fn anti_diagonal_integral<T: Real, S: TwoPhotonSpectrum<T> + ?Sized>(
    total: T,
    xi2: &S,
    quad: &QuadratureSpec<T>,
) -> Result<AntiDiagonal<T>> {
    let f = |w: T| r_of(w) * r_of(total - w) * xi2.eval(w, total - w);
    let cap = T::lit(OMEGA_MAX);
    let width = xi2.feature_width().max(T::lit(1e-3));
    // features sit near ω′ = 0 and ω′ = Ω
    let mut hint = PanelHint::width(width.max(T::lit(0.25)));
    hint.breakpoints = vec![T::zero(), total];
    hint.breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    match xi2.support() {
        None => {
            let core = integrate(&f, -cap, cap, quad, &hint)?.value;
            // ω′ = ±cap / s maps each tail onto s ∈ (0, 1]
            let tail_part = |sign: T| {
                integrate(
                    |s: T| {
                        if s <= T::zero() {
                            return re(T::zero());
                        }
                        f(sign * cap / s) * (cap / (s * s))
                    },
                    T::zero(),
                    T::one(),
                    quad,
                    &PanelHint::width(T::lit(0.25)),
                )
                .map(|e| e.value)
            };
            let tail = tail_part(T::one())? + tail_part(-T::one())?;
            Ok(AntiDiagonal {
                value: core + tail,
                tail: tail.norm(),
            })
        }
        Some((lo, hi)) => {
            // both arguments must stay inside [lo, hi]
            let a = lo.max(total - hi).max(-cap);
            let b = hi.min(total - lo).min(cap);
            let value = if b > a {
                let mut hint = hint;
                hint.max_width = width * T::lit(4.0);
                integrate(&f, a, b, quad, &hint)?.value
            } else {
                re(T::zero())
            };
            // integrand falls off like ω′⁻⁴ beyond the edges
            let tail = [a, b]
                .iter()
                .map(|&e| f(e).norm() * e.abs().max(T::one()) / T::lit(3.0))
                .fold(T::zero(), |x, y| x + y);
            if tail > T::lit(TAIL_BUDGET) {
                return Err(ScatterError::SupportTruncated(tail.to_f64().unwrap_or(f64::NAN)));
            }
            Ok(AntiDiagonal { value, tail })
        }
    }
}

/// B(ω₁, ω₂) = (1/2π)(r_{ω₁} + r_{ω₂}) ∫ r_{ω′} r_{Ω−ω′} ξ₂(ω′, Ω−ω′) dω′, Ω = ω₁ + ω₂.
pub fn freq_nonlinear_correction<T: Real, S: TwoPhotonSpectrum<T> + ?Sized>(
    omega1: FrequencyPoint<T>,
    omega2: FrequencyPoint<T>,
    xi2: &S,
    quad: &QuadratureSpec<T>,
) -> Result<Complex<T>> {
    let (w1, w2) = (omega1.value(), omega2.value());
    let line = anti_diagonal_integral(w1 + w2, xi2, quad)?;
    Ok(correction_from_line(w1, w2, line.value))
}

fn correction_from_line<T: Real>(w1: T, w2: T, line: Complex<T>) -> Complex<T> {
    (r_of(w1) + r_of(w2)) * line / T::lit(2.0 * PI)
}

fn outputs_from_parts<T: Real>(w1: T, w2: T, xi: Complex<T>, b: Complex<T>) -> TwoPhotonOutputs<T> {
    let (r1, t1) = single_photon_r_t(FrequencyPoint(w1));
    let (r2, t2) = single_photon_r_t(FrequencyPoint(w2));
    TwoPhotonOutputs {
        f0: r1 * r2 * xi + b,
        f1: (t1 * r2 * xi + b) * T::SQRT_2(),
        f2: t1 * t2 * xi + b,
    }
}

/// Long-time output amplitudes for two photons incident from the left (right-moving).
pub fn freq_two_photon_outputs<T: Real, S: TwoPhotonSpectrum<T> + ?Sized>(
    omega1: FrequencyPoint<T>,
    omega2: FrequencyPoint<T>,
    xi2: &S,
    quad: &QuadratureSpec<T>,
) -> Result<TwoPhotonOutputs<T>> {
    let (w1, w2) = (omega1.value(), omega2.value());
    let b = freq_nonlinear_correction(omega1, omega2, xi2, quad)?;
    Ok(outputs_from_parts(w1, w2, xi2.eval(w1, w2), b))
}

/// Largest tolerated |f| on the last time sample relative to the grid maximum.
pub const ALIASING_TOLERANCE: f64 = 1e-6;

/// Per-axis transform of a uniform time grid into (2π)^{−1/2}∫ f(τ) e^{+iωτ} dτ.
///
/// Each axis uses the exact transform of the piecewise-linear interpolant
/// (one FFT plus endpoint corrections), extrapolated with the every-other-sample
/// subgrid as F = (4F_h − F_{2h})/3. Both grids share the bins ω_k = 2πk/(N·dt);
/// the output keeps k ∈ [−N/4, N/4) per axis.
pub fn fourier_bridge<T: Real>(grid: &AmplitudeGrid<T>) -> Result<FreqAmplitudeGrid<T>> {
    let mut steps = Vec::new();
    for (d, axis) in grid.axes().iter().enumerate() {
        let step = uniform_step(axis)
            .filter(|s| *s > T::zero())
            .ok_or_else(|| ScatterError::NonUniformGrid(format!("axis {d} is not uniform")))?;
        if axis.len() < 8 || axis.len() % 4 != 0 {
            return Err(ScatterError::NonUniformGrid(format!(
                "axis {d} needs a multiple of 4 samples (at least 8), got {}",
                axis.len()
            )));
        }
        steps.push(step);
    }
    check_aliasing(grid)?;

    let mut shape: Vec<usize> = grid.axes().iter().map(|a| a.len()).collect();
    let mut data = grid.values().to_vec();
    let mut freq_axes = Vec::new();
    for (d, axis) in grid.axes().iter().enumerate() {
        let n = axis.len();
        let line = LineTransform::new(n, steps[d], axis[0]);
        let out_len = n / 2;
        let outer: usize = shape[..d].iter().product();
        let inner: usize = shape[d + 1..].iter().product();
        let mut next = vec![re(T::zero()); outer * out_len * inner];
        let lines: Vec<(usize, Vec<Complex<T>>)> = (0..outer * inner)
            .into_par_iter()
            .map(|li| {
                let (o, i) = (li / inner, li % inner);
                let samples: Vec<Complex<T>> = (0..n).map(|k| data[(o * n + k) * inner + i]).collect();
                (li, line.apply(&samples))
            })
            .collect();
        for (li, out) in lines {
            let (o, i) = (li / inner, li % inner);
            for (k, v) in out.into_iter().enumerate() {
                next[(o * out_len + k) * inner + i] = v;
            }
        }
        data = next;
        shape[d] = out_len;
        freq_axes.push(line.frequencies());
    }
    FreqAmplitudeGrid::new(freq_axes, grid.channel().to_vec(), data)
}

fn check_aliasing<T: Real>(grid: &AmplitudeGrid<T>) -> Result<()> {
    let peak = grid.values().iter().map(|v| v.norm()).fold(T::zero(), T::max);
    if !(peak > T::zero()) {
        return Ok(());
    }
    let shape = grid.shape();
    let mut edge = T::zero();
    let mut idx = vec![0usize; shape.len()];
    for (flat, v) in grid.values().iter().enumerate() {
        let mut rem = flat;
        for d in (0..shape.len()).rev() {
            idx[d] = rem % shape[d];
            rem /= shape[d];
        }
        if idx.iter().zip(&shape).any(|(&i, &n)| i + 1 == n) {
            edge = edge.max(v.norm());
        }
    }
    let ratio = edge / peak;
    if ratio > T::lit(ALIASING_TOLERANCE) {
        return Err(ScatterError::Aliasing(format!(
            "amplitude at the end of the time window is {:.3e} of its peak; extend the span",
            ratio.to_f64().unwrap_or(f64::NAN)
        )));
    }
    Ok(())
}

struct LineTransform<T: Real> {
    n: usize,
    dt: T,
    t0: T,
    fine: std::sync::Arc<dyn rustfft::Fft<T>>,
    coarse: std::sync::Arc<dyn rustfft::Fft<T>>,
}

impl<T: Real> LineTransform<T> {
    fn new(n: usize, dt: T, t0: T) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            dt,
            t0,
            fine: planner.plan_fft_inverse(n),
            coarse: planner.plan_fft_inverse(n / 2),
        }
    }

    fn omega(&self, k: isize) -> T {
        T::lit(2.0 * PI) * T::lit(k as f64) / (T::from_usize_lossy(self.n) * self.dt)
    }

    fn frequencies(&self) -> Vec<T> {
        let q = (self.n / 4) as isize;
        (-q..q).map(|k| self.omega(k)).collect()
    }

    fn apply(&self, samples: &[Complex<T>]) -> Vec<Complex<T>> {
        let fine = filon(samples, self.dt, self.t0, self.n, &*self.fine, |k| self.omega(k));
        let even: Vec<Complex<T>> = samples.iter().step_by(2).copied().collect();
        let coarse = filon(&even, self.dt * T::lit(2.0), self.t0, self.n, &*self.coarse, |k| self.omega(k));
        let (four, three) = (T::lit(4.0), T::lit(3.0));
        fine.iter().zip(&coarse).map(|(&f, &c)| (f * four - c) / three).collect()
    }
}

/// Transform of the piecewise-linear interpolant of `samples` at bins k ∈ [−n/4, n/4).
fn filon<T: Real>(
    samples: &[Complex<T>],
    dt: T,
    t0: T,
    n_fine: usize,
    fft: &dyn rustfft::Fft<T>,
    omega: impl Fn(isize) -> T,
) -> Vec<Complex<T>> {
    let m = samples.len();
    let mut buf = samples.to_vec();
    fft.process(&mut buf);
    let q = (n_fine / 4) as isize;
    let last = samples[m - 1];
    let t_last = t0 + dt * T::from_usize_lossy(m - 1);
    let scale = dt / T::lit(2.0 * PI).sqrt();
    (-q..q)
        .map(|k| {
            let w = omega(k);
            let theta = w * dt;
            let interior = sinc_sq_half(theta);
            let start = half_hat(theta);
            let end = start.conj();
            let sum = buf[k.rem_euclid(m as isize) as usize] * phase(w * t0);
            let corr = (start - re(interior)) * samples[0] * phase(w * t0)
                + (end - re(interior)) * last * phase(w * t_last);
            (sum * interior + corr) * scale
        })
        .collect()
}

#[inline]
fn phase<T: Real>(x: T) -> Complex<T> {
    Complex::new(x.cos(), x.sin())
}

/// (sin(θ/2)/(θ/2))², the transform weight of an interior hat function.
fn sinc_sq_half<T: Real>(theta: T) -> T {
    let h = theta * T::lit(0.5);
    if h.abs() < T::lit(1e-4) {
        let h2 = h * h;
        return T::one() - h2 / T::lit(3.0);
    }
    let s = h.sin() / h;
    s * s
}

/// ∫₀¹ (1 − x) e^{iθx} dx = −(e^{iθ} − 1 − iθ)/θ².
fn half_hat<T: Real>(theta: T) -> Complex<T> {
    if theta.abs() < T::lit(1e-3) {
        let t2 = theta * theta;
        return Complex::new(T::lit(0.5) - t2 / T::lit(24.0), theta / T::lit(6.0) - theta * t2 / T::lit(120.0));
    }
    let e = phase(theta);
    -(e - re(T::one()) - Complex::new(T::zero(), theta)) / (theta * theta)
}

/// Sampling layout of a bridge comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeGridSpec {
    pub samples_per_axis: usize,
    pub dt: f64,
    pub t_span: f64,
    pub frequency_step: f64,
    pub omega_window: f64,
    pub compared_points: usize,
}

/// Outcome of comparing the bridged time-domain result against the frequency-domain oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeReport {
    pub channel: String,
    pub label: String,
    pub gamma: f64,
    pub grid: BridgeGridSpec,
    pub max_abs_err: f64,
    pub rms_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Largest default time step of the two-photon bridge grid.
pub const MAX_BRIDGE_STEP: f64 = 0.04;

/// Settings for the two-photon bridge comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeConfig {
    /// Samples per time axis; `None` picks a power of two covering the window.
    pub samples: Option<usize>,
    /// Time span; `None` uses max(40, 40/Γ).
    pub t_span: Option<f64>,
    pub omega_window: f64,
    pub max_points_per_axis: usize,
    pub tolerance: f64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            samples: None,
            t_span: None,
            omega_window: 10.0,
            max_points_per_axis: 64,
            tolerance: 1e-4,
        }
    }
}

impl BridgeConfig {
    pub fn span(&self, gamma: f64) -> f64 {
        self.t_span.unwrap_or_else(|| 40f64.max(40.0 / gamma))
    }

    /// Smallest power of two ≥ 1024 whose retained bins reach 2× the window
    /// and whose step resolves the kink on the τ₁ = τ₂ diagonal.
    pub fn sample_count(&self, gamma: f64) -> usize {
        self.samples.unwrap_or_else(|| {
            let span = self.span(gamma);
            let need = (4.0 * self.omega_window * span / PI).max(span / MAX_BRIDGE_STEP).ceil() as usize;
            need.next_power_of_two().max(1024)
        })
    }
}

/// Bridges the time-domain f₀, f₁, f₂ of two photons in one right-moving
/// exponential mode and compares them with the frequency-domain oracle.
pub fn two_photon_bridge_validation(gamma: Bandwidth<f64>, config: &BridgeConfig) -> Result<Vec<BridgeReport>> {
    let g = gamma.value();
    let span = config.span(g);
    let n = config.sample_count(g);
    let dt = span / n as f64;
    let axis: Vec<f64> = (0..n).map(|j| j as f64 * dt).collect();
    let horizon = TimePoint::new(span)?;
    let profile = PulseProfile::exponential(gamma, horizon)?;
    let w = Wavepacket::identical(profile, Direction::Right, 2)?;
    let quad = QuadratureSpec::default();
    let grids = two_photon_grid(&w, &axis, TimePoint::new(f64::MAX)?, &quad, KernelMode::Auto)?;

    let spectrum = LorentzianPair { gamma };
    let mut reports = Vec::new();
    for ch in Channel::ALL {
        let freq = fourier_bridge(grids.get(ch))?;
        let axis_w = &freq.axes()[0];
        let inside: Vec<usize> = (0..axis_w.len())
            .filter(|&k| axis_w[k].abs() <= config.omega_window)
            .collect();
        let stride = inside.len().div_ceil(config.max_points_per_axis.max(1)).max(1);
        let picked: Vec<usize> = inside.iter().step_by(stride).copied().collect();
        let pairs: Vec<(usize, usize)> = picked
            .iter()
            .flat_map(|&i| picked.iter().map(move |&j| (i, j)))
            .collect();
        let errs = pairs
            .par_iter()
            .map(|&(i, j)| {
                let (w1, w2) = (axis_w[i], axis_w[j]);
                let line = anti_diagonal_integral(w1 + w2, &spectrum, &quad)?;
                let b = correction_from_line(w1, w2, line.value);
                let oracle = outputs_from_parts(w1, w2, spectrum.eval(w1, w2), b).get(ch);
                Ok((freq.get(&[i, j]) - oracle).norm())
            })
            .collect::<Result<Vec<f64>>>()?;
        let max = errs.iter().copied().fold(0.0, f64::max);
        let rms = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len().max(1) as f64).sqrt();
        reports.push(BridgeReport {
            channel: ch.to_string(),
            label: channel_label(&ch.directions()),
            gamma: g,
            grid: BridgeGridSpec {
                samples_per_axis: n,
                dt,
                t_span: span,
                frequency_step: 2.0 * PI / span,
                omega_window: config.omega_window,
                compared_points: errs.len(),
            },
            max_abs_err: max,
            rms_err: rms,
            tolerance: config.tolerance,
            pass: max <= config.tolerance && !errs.is_empty(),
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn bw(x: f64) -> Bandwidth<f64> {
        Bandwidth::new(x).unwrap()
    }

    fn fp(x: f64) -> FrequencyPoint<f64> {
        FrequencyPoint::new(x).unwrap()
    }

    fn q() -> QuadratureSpec<f64> {
        QuadratureSpec::default()
    }

    #[test]
    fn resonant_and_far_detuned_limits() {
        let (r, t) = single_photon_r_t(fp(0.0));
        assert!((r - re(-1.0)).norm() < 1e-15);
        assert!(t.norm() < 1e-15);
        let (r, t) = single_photon_r_t(fp(1e8));
        assert!(r.norm() < 1e-7 && (t - re(1.0)).norm() < 1e-7);
        assert!(FrequencyPoint::new(f64::NAN).is_err());
    }

    #[test]
    fn single_photon_reflection_integral() {
        for g in [0.1, 1.0, 10.0] {
            let v = integrate(
                |w: f64| lorentzian(bw(g), w).norm_sqr() * single_photon_r_t(fp(w)).0.norm_sqr(),
                -2e4,
                2e4,
                &q(),
                &PanelHint {
                    max_width: 50.0,
                    breakpoints: vec![-1.0, 0.0, 1.0],
                },
            )
            .unwrap()
            .value;
            // tails beyond ±2e4 fall off like ω⁻⁴
            assert_relative_eq!(v, 2.0 / (2.0 + g), epsilon = 1e-9);
        }
    }

    #[test]
    fn correction_symmetry_and_suppression() {
        let s = LorentzianPair { gamma: bw(1.0) };
        let a = freq_nonlinear_correction(fp(0.3), fp(-1.2), &s, &q()).unwrap();
        let b = freq_nonlinear_correction(fp(-1.2), fp(0.3), &s, &q()).unwrap();
        assert_eq!(a, b);

        struct Shifted(LorentzianPair<f64>, f64);
        impl TwoPhotonSpectrum<f64> for Shifted {
            fn eval(&self, w1: f64, w2: f64) -> Complex<f64> {
                self.0.eval(w1 - self.1, w2 - self.1)
            }
            fn feature_width(&self) -> f64 {
                0.5
            }
        }
        let far = Shifted(s, 50.0);
        let v = freq_nonlinear_correction(fp(50.0), fp(50.0), &far, &q()).unwrap();
        assert!(v.norm() < 1e-3, "{v}");
    }

    #[test]
    fn resonant_outputs() {
        let s = LorentzianPair { gamma: bw(2.0) };
        let o = freq_two_photon_outputs(fp(0.0), fp(0.0), &s, &q()).unwrap();
        let b = freq_nonlinear_correction(fp(0.0), fp(0.0), &s, &q()).unwrap();
        assert!((o.f2 - b).norm() < 1e-15);
        assert!((o.f0 - (s.eval(0.0, 0.0) + b)).norm() < 1e-15);
    }

    #[test]
    fn truncated_grid_support_is_reported() {
        let axis: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
        let s = LorentzianPair { gamma: bw(1.0) };
        let values = axis
            .iter()
            .flat_map(|&a| axis.iter().map(move |&b| s.eval(a, b)))
            .collect();
        let grid = FreqAmplitudeGrid::new(vec![axis.clone(), axis], vec![Direction::Right; 2], values).unwrap();
        assert!(matches!(
            freq_nonlinear_correction(fp(0.0), fp(0.0), &grid, &q()),
            Err(ScatterError::SupportTruncated(_))
        ));
    }

    fn exp_grid(g: f64, n: usize, span: f64) -> AmplitudeGrid<f64> {
        let dt = span / n as f64;
        let axis: Vec<f64> = (0..n).map(|j| j as f64 * dt).collect();
        let values = axis.iter().map(|&t| re(g.sqrt() * (-t * g / 2.0).exp())).collect();
        AmplitudeGrid::new(vec![axis], 0.0, vec![Direction::Right], values).unwrap()
    }

    #[test]
    fn exponential_maps_to_lorentzian() {
        for g in [0.5, 1.0, 2.0] {
            let span = 40f64.max(80.0 / g);
            let f = fourier_bridge(&exp_grid(g, 4096, span)).unwrap();
            let err = f.axes()[0]
                .iter()
                .zip(f.values())
                .map(|(&w, &v)| (v - lorentzian(bw(g), w)).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-6, "Γ={g}: {err}");
        }
    }

    #[test]
    fn parseval_for_smooth_pulse() {
        let n = 2048;
        let span = 40.0;
        let dt = span / n as f64;
        let axis: Vec<f64> = (0..n).map(|j| j as f64 * dt).collect();
        let values: Vec<Complex<f64>> = axis
            .iter()
            .map(|&t| Complex::new((-(t - 12.0f64).powi(2) / 4.0).exp(), 0.3 * (-(t - 15.0f64).powi(2)).exp()))
            .collect();
        let time_norm: f64 = values.iter().map(|v| v.norm_sqr()).sum::<f64>() * dt;
        let grid = AmplitudeGrid::new(vec![axis], 0.0, vec![Direction::Right], values).unwrap();
        let f = fourier_bridge(&grid).unwrap();
        assert!((f.norm_sq() - time_norm).abs() < 1e-6);
    }

    #[test]
    fn single_emission_bridges_to_r_times_xi() {
        use crate::kernel::h_closed_form;
        let g = 1.0;
        let n = 4096;
        let span = 80.0;
        let dt = span / n as f64;
        let axis: Vec<f64> = (0..n).map(|j| j as f64 * dt).collect();
        let values = axis
            .iter()
            .map(|&t| re(-h_closed_form(TimePoint::new(t).unwrap(), TimePoint::zero(), bw(g)).unwrap()))
            .collect();
        let grid = AmplitudeGrid::new(vec![axis], 1e9, vec![Direction::Left], values).unwrap();
        let f = fourier_bridge(&grid).unwrap();
        for (&w, &v) in f.axes()[0].iter().zip(f.values()) {
            let expect = single_photon_r_t(fp(w)).0 * lorentzian(bw(g), w);
            assert!((v - expect).norm() < 1e-6, "ω={w}");
        }
    }

    #[test]
    fn bridged_time_domain_correction_matches_frequency_form() {
        use crate::amplitudes::Engine;
        let g = 1.0;
        let n = 2048;
        let span = 40.0;
        let dt = span / n as f64;
        let axis: Vec<f64> = (0..n).map(|j| j as f64 * dt).collect();
        let p = PulseProfile::exponential(bw(g), TimePoint::new(span).unwrap()).unwrap();
        let w = Wavepacket::identical(p, Direction::Right, 2).unwrap();
        let engine = Engine::new(&w, &q(), KernelMode::Auto).unwrap();
        let grid = AmplitudeGrid::fill(vec![axis.clone(), axis], 1e9, vec![Direction::Left; 2], |x| {
            engine.nonlinear_correction(x[0], x[1])
        })
        .unwrap();
        let f = fourier_bridge(&grid).unwrap();
        let s = LorentzianPair { gamma: bw(g) };
        let ax = &f.axes()[0];
        let zero = ax.iter().position(|&x| x == 0.0).unwrap();
        let picks: Vec<usize> = (0..ax.len()).filter(|&k| ax[k].abs() <= 5.0).step_by(8).chain([zero]).collect();
        for &i in &picks {
            for &j in &picks {
                let b = freq_nonlinear_correction(fp(ax[i]), fp(ax[j]), &s, &q()).unwrap();
                let tol = if i == zero && j == zero { 1e-5 } else { 1e-4 };
                assert!((f.get(&[i, j]) - b).norm() < tol, "({}, {}) {} vs {}", ax[i], ax[j], f.get(&[i, j]), b);
            }
        }
    }

    #[test]
    fn bridge_rejects_bad_grids() {
        let g = exp_grid(1.0, 10, 40.0);
        assert!(matches!(fourier_bridge(&g), Err(ScatterError::NonUniformGrid(_))));
        let g = exp_grid(1.0, 64, 5.0);
        assert!(matches!(fourier_bridge(&g), Err(ScatterError::Aliasing(_))));
        let axis = vec![0.0, 0.1, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
        let g = AmplitudeGrid::new(vec![axis], 0.0, vec![Direction::Right], vec![re(0.0); 8]).unwrap();
        assert!(matches!(fourier_bridge(&g), Err(ScatterError::NonUniformGrid(_))));
    }

    #[test]
    fn filon_weights_series_match_closed_forms() {
        for th in [0.9e-3f64, 0.999e-3, -0.5e-3] {
            let direct = -(phase(th) - re(1.0) - Complex::new(0.0, th)) / (th * th);
            assert!((half_hat(th) - direct).norm() < 1e-9);
        }
        assert!((sinc_sq_half(1e-4f64) - sinc_sq_half(1.0001e-4f64)).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn reflection_and_transmission_conserve_flux(w in -1e4f64..1e4) {
            let (r, t) = single_photon_r_t(fp(w));
            prop_assert!((r.norm_sqr() + t.norm_sqr() - 1.0).abs() < 1e-14);
            prop_assert!((t - (re(1.0) + r)).norm() < 1e-14);
        }
    }
}
