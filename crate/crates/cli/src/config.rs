//! Run configuration: a JSON document whose fields can all be overridden by flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use nphoton_core::amplitudes::Channel;
use nphoton_core::model::{CorrelatedPair, ProfileDesc};
use nphoton_core::{Bandwidth, Direction, QuadratureRule, QuadratureSpec, TimePoint, Wavepacket, WavepacketDesc};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

/// Problems with the configuration itself; these map to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] nphoton_core::ScatterError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Reflect,
    Excite,
    TwoPhoton,
    Validate,
    Figure3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// Time-domain two-photon amplitudes bridged into the frequency domain.
    #[serde(rename = "appendix-b")]
    #[value(name = "appendix-b")]
    TwoPhotonBridge,
    Reflection,
    Unitarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ChannelChoice {
    F0,
    F1,
    F2,
    All,
}

impl ChannelChoice {
    pub fn channels(self) -> Vec<Channel> {
        match self {
            ChannelChoice::F0 => vec![Channel::F0],
            ChannelChoice::F1 => vec![Channel::F1],
            ChannelChoice::F2 => vec![Channel::F2],
            ChannelChoice::All => Channel::ALL.to_vec(),
        }
    }
}

/// Quadrature overrides; unset fields keep the library defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<QuadratureRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_subdivisions: Option<usize>,
}

impl QuadratureConfig {
    pub fn merge(&mut self, other: QuadratureConfig) {
        self.rule = other.rule.or(self.rule);
        self.rel_tol = other.rel_tol.or(self.rel_tol);
        self.abs_tol = other.abs_tol.or(self.abs_tol);
        self.max_subdivisions = other.max_subdivisions.or(self.max_subdivisions);
    }

    pub fn resolve(&self) -> Result<QuadratureSpec<f64>, ConfigError> {
        let d = QuadratureSpec::<f64>::default();
        Ok(QuadratureSpec::new(
            self.rule.unwrap_or(d.rule),
            self.rel_tol.unwrap_or(d.rel_tol),
            self.abs_tol.unwrap_or(d.abs_tol),
            self.max_subdivisions.unwrap_or(d.max_subdivisions),
        )?)
    }
}

/// Incident field given explicitly rather than through `gamma`/`n`/`direction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputSpec {
    /// Product of single-photon envelopes.
    Separable(WavepacketDesc),
    /// Entangled photon pair ξ_n(τ₁, τ₂) on a square grid, n = number of right-movers.
    /// Each component is row-major over (τ₁, τ₂).
    Correlated {
        axis: Vec<f64>,
        re: [Vec<f64>; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        im: Option<[Vec<f64>; 3]>,
        #[serde(default)]
        normalize: bool,
    },
}

impl InputSpec {
    pub fn n_photons(&self) -> usize {
        match self {
            InputSpec::Separable(d) => d.photons.len(),
            InputSpec::Correlated { .. } => 2,
        }
    }

    pub fn build(&self) -> Result<Wavepacket<f64>, ConfigError> {
        match self {
            InputSpec::Separable(d) => Ok(d.build()?),
            InputSpec::Correlated { axis, re, im, normalize } => {
                let zeros: [Vec<f64>; 3] = std::array::from_fn(|k| vec![0.0; re[k].len()]);
                let im = im.as_ref().unwrap_or(&zeros);
                let mut xi: [Vec<Complex<f64>>; 3] = Default::default();
                for k in 0..3 {
                    if im[k].len() != re[k].len() {
                        return invalid(format!("correlated component {k}: re and im lengths differ"));
                    }
                    xi[k] = re[k].iter().zip(&im[k]).map(|(&a, &b)| Complex::new(a, b)).collect();
                }
                let pair = if *normalize {
                    CorrelatedPair::normalized(axis.clone(), xi)?
                } else {
                    CorrelatedPair::new(axis.clone(), xi)?
                };
                Ok(Wavepacket::correlated(pair))
            }
        }
    }
}

/// Everything a run needs. All fields are optional so that a file and the
/// command line can each supply part of it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<Suite>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

macro_rules! take {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f; } )*
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })
    }

    /// Fields set in `flags` replace those read from the file.
    pub fn overridden_by(mut self, flags: RunConfig) -> Self {
        take!(self, flags; command, n, gamma, t_max, direction, input, times, t, channel, numeric, suite,
              tolerance, n_list, gamma_grid, samples, output, format);
        self.quadrature.merge(flags.quadrature);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or_default()
    }

    pub fn single_gamma(&self) -> Result<Option<f64>, ConfigError> {
        match self.gamma.as_deref() {
            None => Ok(None),
            Some([g]) => Ok(Some(*g)),
            Some(_) => invalid("this command takes a single gamma"),
        }
    }

    /// The incident field, from `input` or from the `gamma`/`n`/`direction` shorthand.
    pub fn wavepacket(&self, default_n: usize) -> Result<Wavepacket<f64>, ConfigError> {
        match &self.input {
            Some(spec) => {
                if self.gamma.is_some() || self.direction.is_some() || self.t_max.is_some() {
                    return invalid("give either an explicit input or gamma/direction/t-max, not both");
                }
                if let Some(n) = self.n {
                    if n != spec.n_photons() {
                        let kind = match spec {
                            InputSpec::Correlated { .. } => "a correlated input holds exactly 2 photons",
                            InputSpec::Separable(_) => "photon count does not match the input",
                        };
                        return invalid(format!("n = {n}: {kind}"));
                    }
                }
                spec.build()
            }
            None => {
                let Some(g) = self.single_gamma()? else {
                    return invalid("missing gamma (or an explicit input)");
                };
                let n = self.n.unwrap_or(default_n);
                let desc = WavepacketDesc {
                    profile: Some(ProfileDesc::Exponential { gamma: g, t_max: self.t_max }),
                    photons: vec![
                        nphoton_core::model::PhotonDesc {
                            direction: self.direction.unwrap_or(Direction::Right),
                            profile: None,
                        };
                        n
                    ],
                };
                Ok(desc.build()?)
            }
        }
    }

    pub fn bandwidth(g: f64) -> Result<Bandwidth<f64>, ConfigError> {
        Ok(Bandwidth::new(g)?)
    }

    pub fn dynamical_time(&self) -> Result<TimePoint<f64>, ConfigError> {
        match self.t {
            None => Ok(TimePoint::new(f64::MAX)?),
            Some(t) if t.is_infinite() && t > 0.0 => Ok(TimePoint::new(f64::MAX)?),
            Some(t) => Ok(TimePoint::new(t)?),
        }
    }
}

/// A sampling of an interval: `lin:a:b:n`, `log:a:b:n`, or a comma-separated list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GridSpec {
    Linear { start: f64, end: f64, count: usize },
    Log { start: f64, end: f64, count: usize },
    List(Vec<f64>),
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        match *self {
            GridSpec::Linear { start, end, count } => {
                if count == 1 {
                    return vec![start];
                }
                (0..count)
                    .map(|i| start + (end - start) * i as f64 / (count - 1) as f64)
                    .collect()
            }
            GridSpec::Log { start, end, count } => {
                if count == 1 {
                    return vec![start];
                }
                let (a, b) = (start.log10(), end.log10());
                (0..count)
                    .map(|i| match i {
                        0 => start,
                        i if i + 1 == count => end,
                        i => 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64),
                    })
                    .collect()
            }
            GridSpec::List(ref v) => v.clone(),
        }
    }
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() == 4 && (parts[0] == "lin" || parts[0] == "log") {
            let start = num(parts[1])?;
            let end = num(parts[2])?;
            let count: usize = parts[3].trim().parse().map_err(|e| format!("'{}': {e}", parts[3]))?;
            if count == 0 || !start.is_finite() || !end.is_finite() {
                return Err(format!("bad grid '{s}'"));
            }
            if parts[0] == "log" {
                if !(start > 0.0 && end > 0.0) {
                    return Err(format!("log grid needs positive ends: '{s}'"));
                }
                return Ok(GridSpec::Log { start, end, count });
            }
            return Ok(GridSpec::Linear { start, end, count });
        }
        if parts.len() != 1 {
            return Err(format!("expected lin:a:b:n, log:a:b:n or a list, got '{s}'"));
        }
        let v = s.split(',').map(num).collect::<Result<Vec<_>, _>>()?;
        if v.is_empty() {
            return Err("empty grid".into());
        }
        Ok(GridSpec::List(v))
    }
}

impl TryFrom<String> for GridSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<GridSpec> for String {
    fn from(g: GridSpec) -> String {
        match g {
            GridSpec::Linear { start, end, count } => format!("lin:{start}:{end}:{count}"),
            GridSpec::Log { start, end, count } => format!("log:{start}:{end}:{count}"),
            GridSpec::List(v) => v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        }
    }
}
