use nphoton_core::amplitudes::{reflection_amplitude_f0, EmissionTimeList};
use nphoton_core::kernel::h_closed_form;
use nphoton_core::observables::{reflection_probability_closed, reflection_probability_numeric};
use nphoton_core::quadrature::gl16;
use nphoton_core::{Bandwidth, Direction, PulseProfile, QuadratureSpec, TimePoint, Wavepacket};

fn h(b: f64, a: f64, g: f64) -> f64 {
    h_closed_form(TimePoint::new(b).unwrap(), TimePoint::new(a).unwrap(), Bandwidth::new(g).unwrap()).unwrap()
}

// τ₁ = s, τ₂ = s + u, τ₃ = s + u + v over a truncated cube
fn brute_force_r3(g: f64, len: f64) -> f64 {
    let rule = gl16();
    let panels = len.ceil() as usize;
    let pts: Vec<(f64, f64)> = (0..panels)
        .flat_map(|p| rule.mapped(p as f64, (p + 1) as f64).collect::<Vec<_>>())
        .collect();
    let mut total = 0.0;
    for &(s, ws) in &pts {
        let h1 = h(s, 0.0, g).powi(2);
        for &(u, wu) in &pts {
            let h2 = h(s + u, s, g).powi(2);
            let inner: f64 = pts.iter().map(|&(v, wv)| wv * h(s + u + v, s + u, g).powi(2)).sum();
            total += ws * wu * h1 * h2 * inner;
        }
    }
    6.0 * total
}

#[test]
fn three_photon_reflection_by_direct_integration() {
    for (g, len) in [(1.0, 30.0), (2.0, 20.0)] {
        let direct = brute_force_r3(g, len);
        let closed = reflection_probability_closed(3, Bandwidth::new(g).unwrap()).unwrap();
        let nested = reflection_probability_numeric(3, Bandwidth::new(g).unwrap(), &QuadratureSpec::default())
            .unwrap()
            .r_numeric
            .unwrap();
        assert!((direct - closed).abs() < 1e-9, "Γ={g}: {direct} vs {closed}");
        assert!((nested - closed).abs() < 1e-9, "Γ={g}: {nested} vs {closed}");
    }
}

#[test]
fn three_photon_amplitude_is_product_of_kernels() {
    let g = 1.3;
    let p = PulseProfile::exponential(Bandwidth::new(g).unwrap(), TimePoint::new(60.0).unwrap()).unwrap();
    let w = Wavepacket::identical(p, Direction::Right, 3).unwrap();
    let quad = QuadratureSpec::default();
    for tau in [[0.1, 0.7, 2.5], [1.0, 1.0, 4.0], [0.0, 3.2, 3.3]] {
        let list = EmissionTimeList::from_values(&tau).unwrap();
        let f = reflection_amplitude_f0(&list, &w, TimePoint::new(10.0).unwrap(), &quad).unwrap();
        let expect = -h(tau[0], 0.0, g) * h(tau[1], tau[0], g) * h(tau[2], tau[1], g);
        assert!((f.re - expect).abs() < 1e-10 && f.im.abs() < 1e-12, "{tau:?}");
    }
}
