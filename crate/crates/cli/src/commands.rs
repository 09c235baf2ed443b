//! Subcommand execution. Each command renders its result into a byte buffer so
//! that output is identical whether it goes to a file or to stdout.

use std::io::Write;

use nphoton_core::amplitudes::{format_real, two_photon_grid, Channel, KernelMode, TwoPhotonGrids};
use nphoton_core::observables::{
    excitation_trace, reflection_probability_numeric, two_photon_channel_probabilities,
    write_reflection_csv, ReflectionResult, MAX_NUMERIC_PHOTONS,
};
use nphoton_core::spectral::{two_photon_bridge_validation, BridgeConfig, BridgeReport};
use nphoton_core::{Bandwidth, Direction, PulseProfile, QuadratureSpec, ScatterError, Wavepacket};
use serde::Serialize;

use crate::config::{ChannelChoice, CommandKind, ConfigError, Format, GridSpec, RunConfig, Suite};

/// Failure of a run, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("computation failed: {0}")]
    Compute(#[from] ScatterError),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Compute(_) => 1,
        }
    }
}

/// Rendered output plus whether every check the command performs passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub body: Vec<u8>,
    pub pass: bool,
    pub messages: Vec<String>,
}

impl Outcome {
    fn ok(body: Vec<u8>) -> Self {
        Self {
            body,
            pass: true,
            messages: Vec::new(),
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> RunError {
    RunError::Config(ConfigError::Invalid(msg.into()))
}

fn json_body(value: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

pub fn run(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let command = cfg.command.ok_or_else(|| cfg_err("no command given"))?;
    let quad = cfg.quadrature.resolve()?;
    match command {
        CommandKind::Reflect => reflect(cfg, &quad),
        CommandKind::Excite => excite(cfg, &quad),
        CommandKind::TwoPhoton => two_photon(cfg, &quad),
        CommandKind::Validate => validate(cfg, &quad),
        CommandKind::Figure3 => figure3(cfg, &quad),
    }
}

fn photon_counts(cfg: &RunConfig) -> Result<Vec<usize>, RunError> {
    let list = match (cfg.n, &cfg.n_list) {
        (Some(_), Some(_)) => return Err(cfg_err("give n or n-list, not both")),
        (Some(n), None) => vec![n],
        (None, Some(l)) => l.clone(),
        (None, None) => return Err(cfg_err("missing n")),
    };
    if list.is_empty() || list.contains(&0) {
        return Err(cfg_err("photon counts must be positive"));
    }
    Ok(list)
}

fn gammas(cfg: &RunConfig) -> Result<Vec<f64>, RunError> {
    let list = match (&cfg.gamma, &cfg.gamma_grid) {
        (Some(_), Some(_)) => return Err(cfg_err("give gamma or gamma-grid, not both")),
        (Some(g), None) => g.clone(),
        (None, Some(grid)) => grid.points(),
        (None, None) => return Err(cfg_err("missing gamma")),
    };
    for &g in &list {
        RunConfig::bandwidth(g)?;
    }
    Ok(list)
}

fn reflection_rows(
    ns: &[usize],
    gs: &[f64],
    numeric: Option<bool>,
    quad: &QuadratureSpec<f64>,
) -> Result<Vec<ReflectionResult<f64>>, RunError> {
    if numeric == Some(true) && ns.iter().any(|&n| n > MAX_NUMERIC_PHOTONS) {
        return Err(cfg_err(format!(
            "numeric reflection is limited to N <= {MAX_NUMERIC_PHOTONS}"
        )));
    }
    let mut rows = Vec::with_capacity(ns.len() * gs.len());
    for &n in ns {
        for &g in gs {
            let bw = Bandwidth::new(g).map_err(ConfigError::from)?;
            let want = numeric.unwrap_or(true) && n <= MAX_NUMERIC_PHOTONS;
            rows.push(if want {
                reflection_probability_numeric(n, bw, quad)?
            } else {
                ReflectionResult::closed_only(n, bw)?
            });
        }
    }
    Ok(rows)
}

fn render_reflection(rows: &[ReflectionResult<f64>], format: Format) -> Vec<u8> {
    match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_reflection_csv(rows, &mut buf).expect("writing to memory");
            buf
        }
        Format::Json => json_body(&rows),
    }
}

fn reflect(cfg: &RunConfig, quad: &QuadratureSpec<f64>) -> Result<Outcome, RunError> {
    if cfg.input.is_some() {
        return Err(cfg_err("reflect uses identical exponential photons; give gamma and n"));
    }
    let rows = reflection_rows(&photon_counts(cfg)?, &gammas(cfg)?, cfg.numeric, quad)?;
    Ok(Outcome::ok(render_reflection(&rows, cfg.format())))
}

fn excite(cfg: &RunConfig, quad: &QuadratureSpec<f64>) -> Result<Outcome, RunError> {
    let w = cfg.wavepacket(1)?;
    if w.n_photons() > 2 {
        return Err(cfg_err("excitation dynamics is available for one or two photons"));
    }
    let times = cfg
        .times
        .clone()
        .unwrap_or(GridSpec::Linear {
            start: 0.0,
            end: 10.0,
            count: 101,
        })
        .points();
    if times.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
        return Err(cfg_err("trace times must be finite and non-negative"));
    }
    let trace = excitation_trace(&times, &w, quad)?;
    let body = match cfg.format() {
        Format::Csv => {
            let mut buf = Vec::new();
            trace.write_csv(&mut buf).expect("writing to memory");
            buf
        }
        Format::Json => json_body(&trace),
    };
    Ok(Outcome::ok(body))
}

#[derive(Serialize)]
struct ChannelJson {
    channel: String,
    label: String,
    re: Vec<f64>,
    im: Vec<f64>,
}

#[derive(Serialize)]
struct TwoPhotonJson {
    dynamical_time: Option<f64>,
    tau: Vec<f64>,
    channels: Vec<ChannelJson>,
}

fn two_photon(cfg: &RunConfig, quad: &QuadratureSpec<f64>) -> Result<Outcome, RunError> {
    let w = cfg.wavepacket(2)?;
    if w.n_photons() != 2 {
        return Err(cfg_err("two-photon needs exactly two photons"));
    }
    let axis = cfg
        .times
        .clone()
        .unwrap_or(GridSpec::Linear {
            start: 0.0,
            end: 10.0,
            count: 101,
        })
        .points();
    let t = cfg.dynamical_time()?;
    let grids = two_photon_grid(&w, &axis, t, quad, KernelMode::Auto)?;
    let channels = cfg.channel.unwrap_or(ChannelChoice::All).channels();
    let long_time = t.value() == f64::MAX;
    let body = match cfg.format() {
        Format::Csv => two_photon_csv(&grids, &channels, &axis, long_time),
        Format::Json => json_body(&TwoPhotonJson {
            dynamical_time: (!long_time).then_some(t.value()),
            tau: axis.clone(),
            channels: channels
                .iter()
                .map(|&ch| {
                    let g = grids.get(ch);
                    ChannelJson {
                        channel: ch.to_string(),
                        label: g.header().channel,
                        re: g.values().iter().map(|v| v.re).collect(),
                        im: g.values().iter().map(|v| v.im).collect(),
                    }
                })
                .collect(),
        }),
    };
    Ok(Outcome::ok(body))
}

fn two_photon_csv(grids: &TwoPhotonGrids<f64>, channels: &[Channel], axis: &[f64], long_time: bool) -> Vec<u8> {
    let mut buf = Vec::new();
    let mut header = String::from("tau1,tau2,t");
    for ch in channels {
        header.push_str(&format!(",{ch}_re,{ch}_im"));
    }
    writeln!(buf, "{header}").expect("writing to memory");
    let t = if long_time {
        "inf".to_string()
    } else {
        format_real(grids.get(channels[0]).dynamical_time())
    };
    let n = axis.len();
    for i in 0..n {
        for j in 0..n {
            let mut line = format!("{},{},{}", format_real(axis[i]), format_real(axis[j]), t);
            for &ch in channels {
                let v = grids.get(ch).get(&[i, j]);
                line.push_str(&format!(",{},{}", format_real(v.re), format_real(v.im)));
            }
            writeln!(buf, "{line}").expect("writing to memory");
        }
    }
    buf
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReflectionCheck {
    pub n: usize,
    pub gamma: f64,
    pub r_closed: f64,
    pub r_numeric: f64,
    pub abs_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitarityCheck {
    pub gamma: f64,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub total: f64,
    pub deviation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum SuiteResults {
    Bridge(Vec<BridgeReport>),
    Reflection(Vec<ReflectionCheck>),
    Unitarity(Vec<UnitarityCheck>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub suite: Suite,
    pub tolerance: f64,
    pub pass: bool,
    pub results: SuiteResults,
}

pub fn validation_report(cfg: &RunConfig, quad: &QuadratureSpec<f64>) -> Result<ValidationReport, RunError> {
    let suite = cfg.suite.ok_or_else(|| cfg_err("missing suite"))?;
    let default_gammas = |d: &[f64]| -> Result<Vec<f64>, RunError> {
        if cfg.gamma.is_none() && cfg.gamma_grid.is_none() {
            Ok(d.to_vec())
        } else {
            gammas(cfg)
        }
    };
    let (tolerance, results) = match suite {
        Suite::TwoPhotonBridge => {
            let tol = cfg.tolerance.unwrap_or(1e-4);
            let bridge = BridgeConfig {
                samples: cfg.samples,
                t_span: cfg.t_max,
                tolerance: tol,
                ..Default::default()
            };
            let mut all = Vec::new();
            for g in default_gammas(&[0.5, 1.0, 2.0])? {
                all.extend(two_photon_bridge_validation(RunConfig::bandwidth(g)?, &bridge)?);
            }
            (tol, SuiteResults::Bridge(all))
        }
        Suite::Reflection => {
            let tol = cfg.tolerance.unwrap_or(1e-6);
            let ns = match (cfg.n, &cfg.n_list) {
                (None, None) => (1..=MAX_NUMERIC_PHOTONS).collect(),
                _ => photon_counts(cfg)?,
            };
            let gs = default_gammas(&[0.1, 0.5, 1.0, 2.0, 5.0, 10.0])?;
            let rows = reflection_rows(&ns, &gs, Some(true), quad)?;
            let checks = rows
                .iter()
                .map(|r| {
                    let numeric = r.r_numeric.unwrap_or(f64::NAN);
                    let err = (r.r_closed - numeric).abs();
                    ReflectionCheck {
                        n: r.n_photons,
                        gamma: r.gamma,
                        r_closed: r.r_closed,
                        r_numeric: numeric,
                        abs_err: err,
                        pass: err <= tol,
                    }
                })
                .collect();
            (tol, SuiteResults::Reflection(checks))
        }
        Suite::Unitarity => {
            let tol = cfg.tolerance.unwrap_or(1e-5);
            let mut checks = Vec::new();
            for g in default_gammas(&[0.5, 2.0, 20.0])? {
                let w = match &cfg.input {
                    Some(_) => cfg.wavepacket(2)?,
                    None => {
                        let p = PulseProfile::exponential_default(RunConfig::bandwidth(g)?).map_err(ConfigError::from)?;
                        Wavepacket::identical(p, cfg.direction.unwrap_or(Direction::Right), 2).map_err(ConfigError::from)?
                    }
                };
                let c = two_photon_channel_probabilities(&w, quad)?;
                let total = c.total();
                checks.push(UnitarityCheck {
                    gamma: g,
                    p0: c.p0,
                    p1: c.p1,
                    p2: c.p2,
                    total,
                    deviation: (total - 1.0).abs(),
                    pass: (total - 1.0).abs() <= tol,
                });
                if cfg.input.is_some() {
                    break;
                }
            }
            (tol, SuiteResults::Unitarity(checks))
        }
    };
    let pass = match &results {
        SuiteResults::Bridge(r) => !r.is_empty() && r.iter().all(|x| x.pass),
        SuiteResults::Reflection(r) => !r.is_empty() && r.iter().all(|x| x.pass),
        SuiteResults::Unitarity(r) => !r.is_empty() && r.iter().all(|x| x.pass),
    };
    Ok(ValidationReport {
        suite,
        tolerance,
        pass,
        results,
    })
}

fn validate(cfg: &RunConfig, quad: &QuadratureSpec<f64>) -> Result<Outcome, RunError> {
    if cfg.format == Some(Format::Csv) {
        return Err(cfg_err("validation reports are JSON"));
    }
    let report = validation_report(cfg, quad)?;
    let messages = if report.pass {
        Vec::new()
    } else {
        vec![format!("validation suite {:?} failed", report.suite)]
    };
    Ok(Outcome {
        body: json_body(&report),
        pass: report.pass,
        messages,
    })
}

/// Photon counts of the reference figure.
pub const FIGURE3_N: [usize; 11] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 20];

/// Reflection probabilities for each (N, Γ), ordered by N then Γ.
pub fn figure3_rows(cfg: &RunConfig, quad: &QuadratureSpec<f64>) -> Result<Vec<ReflectionResult<f64>>, RunError> {
    let ns = match (cfg.n, &cfg.n_list) {
        (None, None) => FIGURE3_N.to_vec(),
        _ => photon_counts(cfg)?,
    };
    let gs = match (&cfg.gamma, &cfg.gamma_grid) {
        (None, None) => GridSpec::Log {
            start: 0.01,
            end: 100.0,
            count: 200,
        }
        .points(),
        _ => gammas(cfg)?,
    };
    let mut ns = ns;
    ns.sort_unstable();
    ns.dedup();
    let mut gs = gs;
    gs.sort_by(f64::total_cmp);
    gs.dedup();
    reflection_rows(&ns, &gs, Some(cfg.numeric.unwrap_or(false)), quad)
}

/// Rows breaking strict decrease of R_N in Γ (at fixed N) or in N (at fixed Γ).
pub fn monotonicity_violations(rows: &[ReflectionResult<f64>]) -> Vec<String> {
    let mut out = Vec::new();
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.n_photons == b.n_photons && b.r_closed >= a.r_closed {
            out.push(format!(
                "R_{}(gamma={}) = {} does not decrease to R_{}(gamma={}) = {}",
                a.n_photons, a.gamma, a.r_closed, b.n_photons, b.gamma, b.r_closed
            ));
        }
    }
    for a in rows {
        if let Some(b) = rows
            .iter()
            .filter(|b| b.gamma == a.gamma && b.n_photons > a.n_photons)
            .min_by_key(|b| b.n_photons)
        {
            if b.r_closed >= a.r_closed {
                out.push(format!(
                    "R_{} = {} does not exceed R_{} = {} at gamma={}",
                    a.n_photons, a.r_closed, b.n_photons, b.r_closed, a.gamma
                ));
            }
        }
    }
    out
}

fn figure3(cfg: &RunConfig, quad: &QuadratureSpec<f64>) -> Result<Outcome, RunError> {
    let rows = figure3_rows(cfg, quad)?;
    let messages = monotonicity_violations(&rows);
    Ok(Outcome {
        body: render_reflection(&rows, cfg.format()),
        pass: messages.is_empty(),
        messages,
    })
}
