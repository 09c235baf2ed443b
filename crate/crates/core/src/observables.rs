//! Physical observables: atomic excitation, all-photon reflection and
//! probability conservation.

use std::cell::RefCell;
use std::sync::Mutex;
use std::io::Write;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amplitudes::{format_real, Engine, KernelMode};
use crate::error::{Result, ScatterError};
use crate::kernel::h_unchecked;
use crate::model::{Bandwidth, Direction, InitialState, TimePoint, Wavepacket};
use crate::quadrature::{barycentric_eval, gl16, integrate, integrate_par, PanelHint, QuadratureRule, QuadratureSpec};
use crate::scalar::{factorial, re, Quantity, Real};

/// P_e(t) sampled on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationTrace<T> {
    pub times: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Real> ExcitationTrace<T> {
    /// Sample with the largest excitation.
    pub fn peak(&self) -> Option<(T, T)> {
        self.times
            .iter()
            .zip(&self.values)
            .map(|(&t, &p)| (t, p))
            .fold(None, |best, (t, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((t, p)),
            })
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "t,P_e")?;
        for (&t, &p) in self.times.iter().zip(&self.values) {
            writeln!(out, "{},{}", format_real(t), format_real(p))?;
        }
        Ok(())
    }
}

/// Probability that the atom is excited at time t for a one- or two-photon
/// input with the atom initially in its ground state.
pub fn excitation_probability<T: Real>(t: TimePoint<T>, w: &Wavepacket<T>, quad: &QuadratureSpec<T>) -> Result<T> {
    let engine = Engine::new(w, quad, KernelMode::Auto)?;
    excitation_with(&engine, t.value())
}

/// As [`excitation_probability`], rejecting states with an excited atom.
pub fn excitation_probability_state<T: Real>(
    t: TimePoint<T>,
    state: &InitialState<T>,
    quad: &QuadratureSpec<T>,
) -> Result<T> {
    if state.c_e().norm() > T::zero() {
        return Err(ScatterError::Unsupported(
            "excitation probability requires the atom to start in its ground state".into(),
        ));
    }
    excitation_probability(t, state.field_g(), quad)
}

fn excitation_with<T: Real>(engine: &Engine<'_, T>, t: T) -> Result<T> {
    let w = engine.wavepacket();
    match w.n_photons() {
        1 => {
            let s = w.as_separable().expect("single photons are separable");
            Ok((engine.kernel(0, T::zero(), t)? * s.scale()).norm_sqr())
        }
        2 => {
            let failure = RefCell::new(None);
            let density = |tau: T| -> T {
                let mut sum = T::zero();
                for d in [Direction::Right, Direction::Left] {
                    let amp = engine.single_emission(t, d, tau).and_then(|direct| {
                        if tau <= t {
                            Ok(direct + engine.double_emission(tau, t)?)
                        } else {
                            Ok(direct)
                        }
                    });
                    match amp {
                        Ok(a) => sum = sum + a.norm_sqr(),
                        Err(e) => {
                            failure.borrow_mut().get_or_insert(e);
                        }
                    }
                }
                sum
            };
            let quad = engine.quadrature();
            let before = integrate(&density, T::zero(), t, quad, &w.panel_hint(T::zero(), t))?.value;
            let top = w.horizon().max(t);
            let after = integrate(&density, t, top, quad, &w.panel_hint(t, top))?.value;
            if let Some(e) = failure.into_inner() {
                return Err(e);
            }
            Ok((before + after).min(T::one()))
        }
        n => Err(ScatterError::Unsupported(format!(
            "excitation probability is implemented for one or two photons, got {n}"
        ))),
    }
}

/// P_e on a grid of times, evaluated in parallel.
pub fn excitation_trace<T: Real>(times: &[T], w: &Wavepacket<T>, quad: &QuadratureSpec<T>) -> Result<ExcitationTrace<T>> {
    let engine = Engine::new(w, quad, KernelMode::Auto)?;
    let values = times
        .par_iter()
        .map(|&t| {
            TimePoint::new(t)?;
            excitation_with(&engine, t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExcitationTrace {
        times: times.to_vec(),
        values,
    })
}

/// ln R_N for N identical exponential photons, summed term by term.
pub fn ln_reflection_probability_closed<T: Real>(n: usize, gamma: Bandwidth<T>) -> Result<T> {
    if n == 0 {
        return Err(ScatterError::PhotonCount { expected: 1, found: 0 });
    }
    let g = gamma.value();
    let two = T::lit(2.0);
    let ln4 = T::lit(4.0).ln();
    // the N! prefactor cancels the (1+m) factors of the product exactly
    Ok((0..n)
        .map(|m| {
            let m = T::from_usize_lossy(m);
            ln4 - (two + m * g).ln() - (two + g + two * m * g).ln()
        })
        .sum())
}

/// Probability that all N photons of identical exponential modes are reflected.
pub fn reflection_probability_closed<T: Real>(n: usize, gamma: Bandwidth<T>) -> Result<T> {
    Ok(ln_reflection_probability_closed(n, gamma)?.exp().min(T::one()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionResult<T> {
    pub n_photons: usize,
    pub gamma: T,
    pub r_closed: T,
    pub r_numeric: Option<T>,
    pub abs_err: Option<T>,
}

impl<T: Real> ReflectionResult<T> {
    pub fn closed_only(n: usize, gamma: Bandwidth<T>) -> Result<Self> {
        Ok(Self {
            n_photons: n,
            gamma: gamma.value(),
            r_closed: reflection_probability_closed(n, gamma)?,
            r_numeric: None,
            abs_err: None,
        })
    }
}

/// Largest photon number handled by the numeric reflection probability.
pub const MAX_NUMERIC_PHOTONS: usize = 5;

/// Nested time-ordered integral for R_N, evaluated on a fixed panel grid.
///
/// With H_0 = 1 and H_j(s) = ∫_s^T |h(τ, s)|² H_{j−1}(τ) dτ, R_N = N!·H_N(0).
/// All H_j share one set of Gauss–Legendre nodes; the partial panel that
/// contains s is integrated with its own nodes and interpolated values.
/// With an adaptive rule the grid is refined once and the difference serves
/// as the error estimate.
pub fn reflection_probability_numeric<T: Real>(
    n: usize,
    gamma: Bandwidth<T>,
    quad: &QuadratureSpec<T>,
) -> Result<ReflectionResult<T>> {
    if n == 0 || n > MAX_NUMERIC_PHOTONS {
        return Err(ScatterError::Unsupported(format!(
            "numeric reflection probability supports 1..={MAX_NUMERIC_PHOTONS} photons, got {n}"
        )));
    }
    quad.validate()?;
    let g = gamma.value();
    let width = T::one().min(T::lit(2.0) / g);
    let coarse = nystrom_chain(n, g, width);
    let value = match quad.rule {
        QuadratureRule::GaussLegendreComposite => coarse,
        QuadratureRule::Adaptive => {
            let fine = nystrom_chain(n, g, width * T::lit(0.5));
            let err = (fine - coarse).abs();
            if err > quad.abs_tol.max(quad.rel_tol * fine.abs()) * T::lit(10.0) {
                return Err(ScatterError::NoConvergence {
                    subdivisions: 2,
                    estimate: err.to_f64().unwrap_or(f64::NAN),
                });
            }
            fine
        }
    };
    let r_closed = reflection_probability_closed(n, gamma)?;
    Ok(ReflectionResult {
        n_photons: n,
        gamma: g,
        r_closed,
        r_numeric: Some(value),
        abs_err: Some((value - r_closed).abs()),
    })
}

/// Below this |1 − Γ/2| the whole-panel sums use the kernel directly.
const SPLIT_THRESHOLD: f64 = 0.05;

fn nystrom_chain<T: Real>(n: usize, g: T, max_width: T) -> T {
    let horizon = T::lit(30.0).max(T::lit(36.0) / g.min(T::lit(2.0)));
    let panels = (horizon / max_width).ceil().to_usize().unwrap_or(1).max(1);
    let width = horizon / T::from_usize_lossy(panels);
    let rule = gl16();
    let order = rule.order();
    let bw: Vec<T> = rule.barycentric_weights().iter().map(|&x| T::lit(x)).collect();
    let local_nodes: Vec<T> = rule.nodes().iter().map(|&x| T::lit(x)).collect();
    let local_weights: Vec<T> = rule.weights().iter().map(|&x| T::lit(x)).collect();
    let half = width * T::lit(0.5);
    let node = |p: usize, k: usize| {
        let mid = width * T::from_usize_lossy(p) + half;
        mid + half * local_nodes[k]
    };
    let edge = |p: usize| width * T::from_usize_lossy(p + 1);
    let weight = |k: usize| half * local_weights[k];
    let h2 = |tau: T, s: T| {
        let v = h_unchecked(tau, s, g);
        v * v
    };
    let x = T::one() - g * T::lit(0.5);
    // |h(τ,s)|² = Γ/x²·[e^{−Γτ} − 2e^{−Γτ/2}e^{−(τ−s)}e^{−Γs/2} + e^{−2(τ−s)}e^{−Γs}]
    let split = x.abs() >= T::lit(SPLIT_THRESHOLD);
    let half_g = g * T::lit(0.5);

    let total = panels * order;
    let mut prev = vec![T::one(); total];
    let mut origin = T::one();
    for _ in 0..n {
        // sums over the panels after p, referenced to the end of panel p
        let mut a0 = vec![T::zero(); panels];
        let mut u1 = vec![T::zero(); panels];
        let mut u2 = vec![T::zero(); panels];
        if split {
            let decay = (-width).exp();
            for p in (0..panels.saturating_sub(1)).rev() {
                let e = edge(p);
                let (mut s0, mut s1, mut s2) = (T::zero(), T::zero(), T::zero());
                for k in 0..order {
                    let tau = node(p + 1, k);
                    let f = weight(k) * prev[(p + 1) * order + k];
                    let d = (-(tau - e)).exp();
                    s0 = s0 + f * (-g * tau).exp();
                    s1 = s1 + f * d * (-half_g * tau).exp();
                    s2 = s2 + f * d * d;
                }
                a0[p] = a0[p + 1] + s0;
                u1[p] = decay * u1[p + 1] + s1;
                u2[p] = decay * decay * u2[p + 1] + s2;
            }
        }
        let scale = g / (x * x);
        let apply = |s: T, p: usize| -> T {
            // partial panel [s, end of panel p]
            let end = edge(p);
            let lo = width * T::from_usize_lossy(p);
            let ph = (end - s) * T::lit(0.5);
            let pm = (end + s) * T::lit(0.5);
            let panel_vals = &prev[p * order..(p + 1) * order];
            let mut acc = T::zero();
            if ph > T::zero() {
                for k in 0..order {
                    let tau = pm + ph * local_nodes[k];
                    let xi = (tau - lo) / half - T::one();
                    let hv = barycentric_eval(&local_nodes, panel_vals, &bw, xi);
                    acc = acc + ph * local_weights[k] * h2(tau, s) * hv;
                }
            }
            if split {
                let d = (-(end - s)).exp();
                let cross = T::lit(2.0) * (-half_g * s).exp() * d * u1[p];
                let far = (-g * s).exp() * d * d * u2[p];
                acc = acc + scale * (a0[p] - cross + far);
            } else {
                for q in (p + 1)..panels {
                    for k in 0..order {
                        acc = acc + weight(k) * h2(node(q, k), s) * prev[q * order + k];
                    }
                }
            }
            acc
        };
        let next: Vec<T> = (0..total)
            .into_par_iter()
            .map(|idx| {
                let p = idx / order;
                apply(node(p, idx % order), p)
            })
            .collect();
        origin = apply(T::zero(), 0);
        prev = next;
    }
    factorial::<T>(n) * origin
}

/// Comma-separated sweep of reflection results.
pub fn write_reflection_csv<T: Real>(rows: &[ReflectionResult<T>], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "N,gamma,R_closed,R_numeric,abs_err")?;
    for r in rows {
        let opt = |x: Option<T>| x.map(format_real).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            r.n_photons,
            format_real(r.gamma),
            format_real(r.r_closed),
            opt(r.r_numeric),
            opt(r.abs_err)
        )?;
    }
    Ok(())
}

/// Long-time probabilities of the three two-photon output channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelProbabilities<T> {
    /// Both photons left-moving.
    pub p0: T,
    /// One photon each way.
    pub p1: T,
    /// Both photons right-moving.
    pub p2: T,
}

impl<T: Real> ChannelProbabilities<T> {
    pub fn total(&self) -> T {
        self.p0 + self.p1 + self.p2
    }
}

/// Three channel densities integrated together.
#[derive(Debug, Clone, Copy)]
struct Triple<T>([T; 3]);

impl<T: Real> std::ops::Add for Triple<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Triple([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<T: Real> std::ops::Sub for Triple<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Triple([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl<T: Real> std::ops::Mul<T> for Triple<T> {
    type Output = Self;
    fn mul(self, k: T) -> Self {
        Triple(self.0.map(|x| x * k))
    }
}

impl<T: Real> Quantity<T> for Triple<T> {
    fn zero() -> Self {
        Triple([T::zero(); 3])
    }
    fn magnitude(&self) -> T {
        self.0[0].abs() + self.0[1].abs() + self.0[2].abs()
    }
}

/// Σ_channels ∫∫|f(τ₁, τ₂, t→∞)|² dτ₁dτ₂ for a two-photon input.
pub fn unitarity_check_two_photon<T: Real>(w: &Wavepacket<T>, quad: &QuadratureSpec<T>) -> Result<T> {
    Ok(two_photon_channel_probabilities(w, quad)?.total())
}

/// Integration horizon for long-time output states: input support plus enough
/// atomic lifetimes for the last emission to decay.
fn output_horizon<T: Real>(w: &Wavepacket<T>) -> T {
    w.horizon() + T::lit(40.0)
}

pub fn two_photon_channel_probabilities<T: Real>(
    w: &Wavepacket<T>,
    quad: &QuadratureSpec<T>,
) -> Result<ChannelProbabilities<T>> {
    let engine = Engine::new(w, quad, KernelMode::Auto)?;
    if w.n_photons() != 2 {
        return Err(ScatterError::PhotonCount {
            expected: 2,
            found: w.n_photons(),
        });
    }
    let top = output_horizon(w);
    let late = T::max_value();
    let failure = Mutex::new(None);
    let fail = |e: ScatterError| {
        failure.lock().unwrap().get_or_insert(e);
    };
    // seed at the atomic scale; bisection resolves narrower input features
    let hint = |a: T, b: T| -> PanelHint<T> {
        let mut h = w.panel_hint(a, b);
        h.max_width = T::lit(2.0);
        h
    };
    let point = |a: T, b: T| -> Triple<T> {
        match engine.two_photon(a, b, late) {
            Ok(o) => Triple([o.f0.norm_sqr(), o.f1.norm_sqr(), o.f2.norm_sqr()]),
            Err(e) => {
                fail(e);
                Triple::zero()
            }
        }
    };
    // the amplitudes have a kink on the diagonal; integrate each triangle separately
    let inner = |a: T| -> Triple<T> {
        let lower = integrate(|b| point(a, b), T::zero(), a, quad, &hint(T::zero(), a));
        let upper = integrate(|b| point(a, b), a, top, quad, &hint(a, top));
        match (lower, upper) {
            (Ok(l), Ok(u)) => l.value + u.value,
            (Err(e), _) | (_, Err(e)) => {
                fail(e);
                Triple::zero()
            }
        }
    };
    let probs = integrate_par(inner, T::zero(), top, quad, &hint(T::zero(), top))?.value.0;
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    Ok(ChannelProbabilities {
        p0: probs[0],
        p1: probs[1],
        p2: probs[2],
    })
}

/// Long-time probabilities (same direction, opposite direction) for one photon.
pub fn single_photon_probabilities<T: Real>(w: &Wavepacket<T>, quad: &QuadratureSpec<T>) -> Result<(T, T)> {
    let engine = Engine::new(w, quad, KernelMode::Auto)?;
    let s = w
        .as_separable()
        .filter(|s| s.photons().len() == 1)
        .ok_or(ScatterError::PhotonCount {
            expected: 1,
            found: w.n_photons(),
        })?;
    let d = s.photons()[0].direction;
    let top = output_horizon(w);
    let failure = RefCell::new(None);
    let emitted = |tau: T| -> Complex<T> {
        match engine.kernel(0, T::zero(), tau) {
            Ok(k) => -k * s.scale(),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                re(T::zero())
            }
        }
    };
    let hint = w.panel_hint(T::zero(), top);
    let same = integrate(
        |tau| (w.vacuum_overlap(&[(d, tau)]) + emitted(tau)).norm_sqr(),
        T::zero(),
        top,
        quad,
        &hint,
    )?;
    let opposite = integrate(|tau| emitted(tau).norm_sqr(), T::zero(), top, quad, &hint)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok((same.value, opposite.value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Photon, PulseProfile};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn bw(x: f64) -> Bandwidth<f64> {
        Bandwidth::new(x).unwrap()
    }

    fn tp(x: f64) -> TimePoint<f64> {
        TimePoint::new(x).unwrap()
    }

    fn exp(g: f64) -> PulseProfile<f64> {
        PulseProfile::exponential_default(bw(g)).unwrap()
    }

    fn q() -> QuadratureSpec<f64> {
        QuadratureSpec::default()
    }

    /// RK4 for e' = −e − ξ(t), the one-excitation sector driven by a single photon.
    fn ode_trace(g: f64, dt: f64, t_end: f64) -> Vec<(f64, f64)> {
        let xi = |t: f64| g.sqrt() * (-t * g / 2.0).exp();
        let rhs = |t: f64, e: f64| -e - xi(t);
        let mut e = 0.0;
        let mut out = vec![(0.0, 0.0)];
        let steps = (t_end / dt).round() as usize;
        for i in 0..steps {
            let t = i as f64 * dt;
            let k1 = rhs(t, e);
            let k2 = rhs(t + dt / 2.0, e + dt / 2.0 * k1);
            let k3 = rhs(t + dt / 2.0, e + dt / 2.0 * k2);
            let k4 = rhs(t + dt, e + dt * k3);
            e += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            out.push(((i + 1) as f64 * dt, e * e));
        }
        out
    }

    #[test]
    fn closed_form_fixtures() {
        assert_relative_eq!(reflection_probability_closed(1, bw(2.0)).unwrap(), 0.5, max_relative = 1e-14);
        assert_relative_eq!(reflection_probability_closed(2, bw(2.0)).unwrap(), 0.0625, max_relative = 1e-14);
        for g in [0.3, 1.0, 7.0] {
            assert_relative_eq!(reflection_probability_closed(1, bw(g)).unwrap(), 2.0 / (2.0 + g), max_relative = 1e-14);
            let r2 = 8.0 / ((2.0 + g).powi(2) * (2.0 + 3.0 * g));
            assert_relative_eq!(reflection_probability_closed(2, bw(g)).unwrap(), r2, max_relative = 1e-14);
        }
        assert!(reflection_probability_closed(0, bw(1.0)).is_err());
        assert!(reflection_probability_closed(7, bw(1e-9)).unwrap() > 0.999);
    }

    #[test]
    fn closed_form_stays_a_probability() {
        for n in 1..=50 {
            for k in 0..=24 {
                let g = 10f64.powf(-3.0 + 6.0 * k as f64 / 24.0);
                let r = reflection_probability_closed(n, bw(g)).unwrap();
                assert!((0.0..=1.0).contains(&r), "N={n} Γ={g}: {r}");
            }
        }
    }

    #[test]
    fn numeric_matches_closed_form() {
        for &(n, g) in &[(1, 2.0), (2, 2.0), (3, 10.0), (5, 0.1)] {
            let r = reflection_probability_numeric(n, bw(g), &q()).unwrap();
            assert!(r.abs_err.unwrap() <= 1e-9, "N={n} Γ={g}: {:?}", r);
        }
        let r3 = reflection_probability_numeric(3, bw(10.0), &q()).unwrap().r_numeric.unwrap();
        let r2 = reflection_probability_closed(2, bw(10.0)).unwrap();
        let r1 = reflection_probability_closed(1, bw(10.0)).unwrap();
        assert!(r3 < r2 && r2 < r1);
        assert!(reflection_probability_numeric(6, bw(1.0), &q()).is_err());
        assert!(reflection_probability_numeric(0, bw(1.0), &q()).is_err());
    }

    #[test]
    fn composite_rule_skips_refinement() {
        let r = reflection_probability_numeric(2, bw(1.0), &QuadratureSpec::composite()).unwrap();
        assert!(r.abs_err.unwrap() < 1e-9);
    }

    #[test]
    fn single_photon_excitation() {
        let w = Wavepacket::identical(exp(2.0), Direction::Left, 1).unwrap();
        assert_eq!(excitation_probability(tp(0.0), &w, &q()).unwrap(), 0.0);
        let p = excitation_probability(tp(1.0), &w, &q()).unwrap();
        assert_relative_eq!(p, 2.0 * (-2.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(p, 0.27067, epsilon = 5e-6);
        assert!(excitation_probability(tp(60.0), &w, &q()).unwrap() < 1e-20);
    }

    #[test]
    fn excitation_trace_matches_ode() {
        for g in [0.5, 2.0, 4.0] {
            let w = Wavepacket::identical(exp(g), Direction::Right, 1).unwrap();
            let ode = ode_trace(g, 1e-3, 8.0);
            let times: Vec<f64> = ode.iter().step_by(50).map(|x| x.0).collect();
            let trace = excitation_trace(&times, &w, &q()).unwrap();
            for (i, &p) in trace.values.iter().enumerate() {
                assert!((p - ode[i * 50].1).abs() < 1e-9, "Γ={g} t={}", times[i]);
            }
        }
    }

    #[test]
    fn two_photon_excitation_is_bounded() {
        let w = Wavepacket::identical(exp(1.0), Direction::Right, 2).unwrap();
        assert_eq!(excitation_probability(tp(0.0), &w, &q()).unwrap(), 0.0);
        let times: Vec<f64> = (0..30).map(|i| i as f64 * 0.5).collect();
        let trace = excitation_trace(&times, &w, &q()).unwrap();
        assert!(trace.values.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert!(trace.peak().unwrap().1 > 0.1);
        assert!(*trace.values.last().unwrap() < 1e-3);
    }

    #[test]
    fn excitation_rejects_unsupported_inputs() {
        let w = Wavepacket::identical(exp(1.0), Direction::Right, 3).unwrap();
        assert!(excitation_probability(tp(1.0), &w, &q()).is_err());
        let one = Wavepacket::identical(exp(1.0), Direction::Right, 1).unwrap();
        let state = InitialState::excited(one);
        assert!(excitation_probability_state(tp(1.0), &state, &q()).is_err());
    }

    #[test]
    fn single_photon_unitarity() {
        for g in [0.2, 1.0, 6.0] {
            let w = Wavepacket::identical(exp(g), Direction::Right, 1).unwrap();
            let (same, opposite) = single_photon_probabilities(&w, &q()).unwrap();
            assert!((same + opposite - 1.0).abs() < 1e-8, "Γ={g}");
            assert!((opposite - 2.0 / (2.0 + g)).abs() < 1e-8);
        }
    }

    #[test]
    fn two_photon_unitarity_counter_propagating() {
        let p = Arc::new(exp(1.5));
        let w = Wavepacket::product(vec![
            Photon::new(p.clone(), Direction::Right),
            Photon::new(p, Direction::Left),
        ])
        .unwrap();
        let quad = QuadratureSpec::new(QuadratureRule::Adaptive, 1e-9, 1e-12, 4000).unwrap();
        let probs = two_photon_channel_probabilities(&w, &quad).unwrap();
        assert!((probs.total() - 1.0).abs() < 1e-6, "{probs:?}");
    }

    #[test]
    fn reflection_csv_layout() {
        let rows = vec![
            ReflectionResult::closed_only(2, bw(2.0)).unwrap(),
            reflection_probability_numeric(1, bw(2.0), &q()).unwrap(),
        ];
        let mut buf = Vec::new();
        write_reflection_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "N,gamma,R_closed,R_numeric,abs_err");
        assert_eq!(lines[1], "2,2.00000000000e0,6.25000000000e-2,,");
        assert!(lines[2].starts_with("1,2.00000000000e0,5.00000000000e-1,5.0"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn reflection_decreases_with_photons_and_bandwidth(n in 1usize..40, lg in -3.0f64..3.0, dl in 0.01f64..1.0) {
            let g = 10f64.powf(lg);
            let g2 = g * 10f64.powf(dl);
            let r = ln_reflection_probability_closed(n, bw(g)).unwrap();
            prop_assert!(ln_reflection_probability_closed(n + 1, bw(g)).unwrap() < r);
            prop_assert!(ln_reflection_probability_closed(n, bw(g2)).unwrap() < r);
        }
    }
}
