//! Run configuration: TOML schema, benchmark presets, overrides and the
//! translation into a [`Problem`] with its optimizer settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::continuation::Schedule;
use crate::error::ConfigError;
use crate::filter::{Kernel, Thresholds};
use crate::grid::{ElasticParams, GridModel};
use crate::optimizer::OptimizerSettings;
use crate::pipeline::{BandSpec, DensityFilter, LocalMaxLength, Problem, ProblemSpec, Slope, VariableMaxLength};
use crate::profile::{Orientation, Profile, ProfileSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub iterations: usize,
    /// Seed of the random designs used by gradient checks.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub grid: GridConfig,
    #[serde(default)]
    pub material: MaterialConfig,
    pub filter: FilterConfig,
    #[serde(default)]
    pub projection: ThresholdConfig,
    pub volume: VolumeConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<BandConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_volume: Option<LocalVolumeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_max_length: Option<LocalMaxLengthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<SlopeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable_max_length: Option<VariableMaxLengthConfig>,
}

fn default_name() -> String {
    "custom".into()
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Mbb,
    Cantilever,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub kind: Benchmark,
    pub nelx: usize,
    pub nely: usize,
    #[serde(default = "one")]
    pub element_size: f64,
    /// Ghost cells on each side; derived from the operator supports when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialConfig {
    pub e_max: f64,
    pub e_min: f64,
    pub nu: f64,
    /// Stiffness reduction ratio inside the band.
    pub r_e: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        let e = ElasticParams::default();
        Self {
            e_max: e.e_max,
            e_min: e.e_min,
            nu: e.nu,
            r_e: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub r_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<VariableFilterConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableFilterConfig {
    pub gamma: f64,
    #[serde(default = "two")]
    pub exponent: u32,
}

fn two() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub eta_ero: f64,
    pub eta_int: f64,
    pub eta_dil: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            eta_ero: 0.6,
            eta_int: 0.5,
            eta_dil: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeConfig {
    pub target: f64,
    #[serde(default = "dilated_factor")]
    pub dilated_factor: f64,
    #[serde(default = "adapt_every")]
    pub adapt_every: usize,
}

fn dilated_factor() -> f64 {
    1.05
}

fn adapt_every() -> usize {
    25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub move_rho: f64,
    pub move_shape: f64,
    pub objective_scale: f64,
    /// Exponent of the p-norm aggregations of local averages.
    pub p_agg: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            move_rho: 0.2,
            move_shape: 0.005,
            objective_scale: 10.0,
            p_agg: 64.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulePreset {
    Reference,
    LocalVolume,
    LocalMaxLength,
    VariableMinLength,
    VariableMaxLength,
}

impl SchedulePreset {
    pub fn schedule(self) -> Schedule {
        match self {
            SchedulePreset::Reference => Schedule::reference(),
            SchedulePreset::LocalVolume => Schedule::local_volume(),
            SchedulePreset::LocalMaxLength => Schedule::local_max_length(),
            SchedulePreset::VariableMinLength => Schedule::variable_min_length(),
            SchedulePreset::VariableMaxLength => Schedule::variable_max_length(),
        }
    }
}

/// A named schedule with optional replacement columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub preset: SchedulePreset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penal: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_hs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_fil: Option<Vec<f64>>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::from(SchedulePreset::Reference)
    }
}

impl From<SchedulePreset> for ScheduleConfig {
    fn from(preset: SchedulePreset) -> Self {
        Self {
            preset,
            step_length: None,
            penal: None,
            mu: None,
            beta_hs: None,
            beta_fil: None,
        }
    }
}

impl ScheduleConfig {
    pub fn resolve(&self) -> Schedule {
        let mut s = self.preset.schedule();
        if let Some(v) = self.step_length {
            s.step_length = v;
        }
        for (dst, src) in [
            (&mut s.penal, &self.penal),
            (&mut s.mu, &self.mu),
            (&mut s.beta_hs, &self.beta_hs),
            (&mut s.beta_fil, &self.beta_fil),
        ] {
            if let Some(v) = src {
                dst.clone_from(v);
            }
        }
        s
    }
}

/// Uniform value or one value per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeValues {
    Uniform(f64),
    Nodes(Vec<f64>),
}

impl NodeValues {
    fn expand(&self, n: usize) -> Vec<f64> {
        match self {
            NodeValues::Uniform(v) => vec![*v; n],
            NodeValues::Nodes(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub orientation: Orientation,
    /// Equal segments spanning the domain along the development axis.
    pub segments: usize,
    pub initial: NodeValues,
    pub lower: NodeValues,
    pub upper: NodeValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub r_phi: f64,
    pub beta_fil: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    pub profiles: Vec<ProfileConfig>,
}

fn default_q() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalVolumeConfig {
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalMaxLengthConfig {
    pub r_max: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlopeConfig {
    pub theta_deg: f64,
    pub p: f64,
}

impl Default for SlopeConfig {
    fn default() -> Self {
        Self {
            theta_deg: 60.0,
            p: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableMaxLengthConfig {
    pub r_max: f64,
    pub alpha: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "six")]
    pub exponent: u32,
}

fn six() -> u32 {
    6
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        reason: reason.into(),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn parse_error(text: &str, e: toml::de::Error) -> ConfigError {
    ConfigError::Parse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    }
}

impl RunConfig {
    /// Parses and validates a configuration document.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| parse_error(text, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Effective configuration with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable in TOML")
    }

    /// Applies `key=value` assignments with dotted keys, e.g.
    /// `grid.nelx=150` or `schedule.beta_hs=[1, 2]`.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc: toml::Table = toml::from_str(&self.to_toml()).map_err(|e| parse_error("", e))?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw.split_once('=').ok_or_else(|| ConfigError::Override(raw.into()))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Override(raw.into()));
            }
            let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
                Ok(mut t) => t.remove("v").expect("single key"),
                Err(_) => toml::Value::String(value.into()),
            };
            let mut parts: Vec<&str> = key.split('.').collect();
            let last = parts.pop().expect("split yields one part");
            let mut table = &mut doc;
            for part in parts {
                table = table
                    .entry(part)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| invalid(key, format!("`{part}` is not a section")))?;
            }
            table.insert(last.into(), value);
        }
        let text = toml::to_string(&doc).expect("table serializes");
        let cfg: Self = toml::from_str(&text).map_err(|e| invalid("override", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("must be positive (got {v})")))
            }
        };
        let fraction = |key: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(invalid(key, format!("must lie in (0, 1) (got {v})")))
            }
        };
        if self.grid.nelx == 0 || self.grid.nely == 0 {
            return Err(invalid("grid", "nelx and nely must be positive"));
        }
        positive("grid.element_size", self.grid.element_size)?;
        positive("material.e_max", self.material.e_max)?;
        positive("material.e_min", self.material.e_min)?;
        if self.material.e_min >= self.material.e_max {
            return Err(invalid("material.e_min", "must be smaller than e_max"));
        }
        if !(self.material.nu > 0.0 && self.material.nu < 0.5) {
            return Err(invalid("material.nu", "must lie in (0, 0.5)"));
        }
        if !(0.0..1.0).contains(&self.material.r_e) {
            return Err(invalid("material.r_e", "must lie in [0, 1)"));
        }
        if !(self.filter.r_min >= 1.0) {
            return Err(invalid("filter.r_min", "must be at least 1"));
        }
        if let Some(v) = &self.filter.variable {
            if !(v.gamma >= 0.0) {
                return Err(invalid("filter.variable.gamma", "must be non-negative"));
            }
            if v.exponent < 2 || v.exponent % 2 != 0 {
                return Err(invalid("filter.variable.exponent", "must be an even number >= 2"));
            }
        }
        let t = &self.projection;
        if !(0.0 <= t.eta_dil && t.eta_dil <= t.eta_int && t.eta_int <= t.eta_ero && t.eta_ero <= 1.0) {
            return Err(invalid("projection", "thresholds must satisfy 0 <= eta_dil <= eta_int <= eta_ero <= 1"));
        }
        fraction("volume.target", self.volume.target)?;
        positive("volume.dilated_factor", self.volume.dilated_factor)?;
        fraction("optimizer.move_rho", self.optimizer.move_rho)?;
        fraction("optimizer.move_shape", self.optimizer.move_shape)?;
        positive("optimizer.objective_scale", self.optimizer.objective_scale)?;
        if !(self.optimizer.p_agg >= 1.0) {
            return Err(invalid("optimizer.p_agg", "must be at least 1"));
        }
        self.schedule
            .resolve()
            .validate()
            .map_err(|e| invalid("schedule", e.to_string()))?;

        let has_profiles = self.band.as_ref().is_some_and(|b| !b.profiles.is_empty());
        if let Some(b) = &self.band {
            if !(b.r_phi >= 1.0) {
                return Err(invalid("band.r_phi", "must be at least 1"));
            }
            positive("band.beta_fil", b.beta_fil)?;
            if !(b.q >= 1.0) {
                return Err(invalid("band.q", "must be at least 1"));
            }
            for (k, p) in b.profiles.iter().enumerate() {
                self.profile(p).map_err(|r| invalid(&format!("band.profiles[{k}]"), r))?;
            }
        }
        let needs_band = |key: &str| {
            if has_profiles {
                Ok(())
            } else {
                Err(invalid(key, "requires at least one profile in [band]"))
            }
        };
        if self.material.r_e > 0.0 {
            needs_band("material.r_e")?;
        }
        if self.filter.variable.as_ref().is_some_and(|v| v.gamma > 0.0) {
            needs_band("filter.variable")?;
        }
        if let Some(l) = &self.local_volume {
            needs_band("local_volume")?;
            fraction("local_volume.target", l.target)?;
        }
        if let Some(l) = &self.local_max_length {
            needs_band("local_max_length")?;
            positive("local_max_length.r_max", l.r_max)?;
            fraction("local_max_length.alpha", l.alpha)?;
        }
        if let Some(s) = &self.slope {
            needs_band("slope")?;
            if !(s.theta_deg > 0.0 && s.theta_deg < 90.0) {
                return Err(invalid("slope.theta_deg", "must lie in (0, 90)"));
            }
            if !(s.p >= 1.0) {
                return Err(invalid("slope.p", "must be at least 1"));
            }
        }
        if let Some(v) = &self.variable_max_length {
            if v.gamma > 0.0 {
                needs_band("variable_max_length.gamma")?;
            }
            positive("variable_max_length.r_max", v.r_max)?;
            fraction("variable_max_length.alpha", v.alpha)?;
            if !(v.gamma >= 0.0) {
                return Err(invalid("variable_max_length.gamma", "must be non-negative"));
            }
            if v.exponent < 2 || v.exponent % 2 != 0 {
                return Err(invalid("variable_max_length.exponent", "must be an even number >= 2"));
            }
        }
        if let Some(p) = self.grid.padding {
            if p < self.required_padding() {
                return Err(invalid(
                    "grid.padding",
                    format!("must cover the largest operator support ({} cells)", self.required_padding()),
                ));
            }
        }
        Ok(())
    }

    fn profile(&self, p: &ProfileConfig) -> Result<Profile, String> {
        if p.segments == 0 {
            return Err("needs at least one segment".into());
        }
        let n = p.segments + 1;
        let extent = match p.orientation {
            Orientation::Vertical => self.grid.nely,
            Orientation::Horizontal => self.grid.nelx,
        } as f64
            * self.grid.element_size;
        let profile = Profile {
            orientation: p.orientation,
            fixed: (0..n).map(|k| extent * k as f64 / p.segments as f64).collect(),
            initial: p.initial.expand(n),
            lower: p.lower.expand(n),
            upper: p.upper.expand(n),
        };
        profile.validate().map_err(|e| e.to_string())?;
        Ok(profile)
    }

    fn density_kernel(&self) -> Kernel {
        match &self.filter.variable {
            None => Kernel::Hat {
                radius: self.filter.r_min,
            },
            Some(v) => Kernel::Gaussian {
                radius: self.filter.r_min,
                exponent: v.exponent,
                gamma: v.gamma,
            },
        }
    }

    /// Ghost cells needed so that no operator neighbourhood of a blueprint
    /// cell is truncated.
    pub fn required_padding(&self) -> usize {
        let mut support = self.density_kernel().support();
        if let Some(b) = &self.band {
            support = support.max(b.r_phi);
        }
        if let Some(l) = &self.local_max_length {
            support = support.max(l.r_max);
        }
        if let Some(v) = &self.variable_max_length {
            let k = Kernel::Gaussian {
                radius: v.r_max,
                exponent: v.exponent,
                gamma: v.gamma,
            };
            support = support.max(k.support());
        }
        (support / self.grid.element_size - 1e-9).ceil().max(0.0) as usize
    }

    pub fn padding(&self) -> usize {
        self.grid.padding.unwrap_or_else(|| self.required_padding())
    }

    /// Builds the problem and the optimizer settings.
    pub fn build(&self) -> Result<(Problem, OptimizerSettings), ConfigError> {
        self.validate()?;
        let g = &self.grid;
        let pad = self.padding();
        let grid = match g.kind {
            Benchmark::Mbb => GridModel::mbb(g.nelx, g.nely, g.element_size, pad),
            Benchmark::Cantilever => GridModel::cantilever(g.nelx, g.nely, g.element_size, pad),
        }?;
        let band = match &self.band {
            Some(b) => {
                let profiles = b
                    .profiles
                    .iter()
                    .map(|p| self.profile(p))
                    .collect::<Result<Vec<_>, String>>()
                    .map_err(|r| invalid("band.profiles", r))?;
                Some(BandSpec {
                    profiles: ProfileSet::new(profiles)?,
                    r_phi: b.r_phi,
                    beta_fil: b.beta_fil,
                    q: b.q,
                })
            }
            None => None,
        };
        let spec = ProblemSpec {
            grid,
            elastic: ElasticParams {
                e_max: self.material.e_max,
                e_min: self.material.e_min,
                nu: self.material.nu,
                penal: 1.0,
            },
            r_e: self.material.r_e,
            density_filter: match &self.filter.variable {
                None => DensityFilter::Linear {
                    radius: self.filter.r_min,
                },
                Some(v) => DensityFilter::Variable {
                    radius: self.filter.r_min,
                    gamma: v.gamma,
                    exponent: v.exponent,
                },
            },
            thresholds: Thresholds {
                ero: self.projection.eta_ero,
                int: self.projection.eta_int,
                dil: self.projection.eta_dil,
            },
            band,
            local_volume: self.local_volume.as_ref().map(|l| l.target),
            local_max_length: self.local_max_length.as_ref().map(|l| LocalMaxLength {
                radius: l.r_max,
                alpha: l.alpha,
            }),
            slope: self.slope.as_ref().map(|s| Slope {
                theta_deg: s.theta_deg,
                p: s.p,
            }),
            variable_max_length: self.variable_max_length.as_ref().map(|v| VariableMaxLength {
                radius: v.r_max,
                gamma: v.gamma,
                exponent: v.exponent,
                alpha: v.alpha,
            }),
            p_agg: self.optimizer.p_agg,
        };
        let problem = Problem::new(spec)?;
        let mut settings = OptimizerSettings::new(self.iterations, self.schedule.resolve(), self.volume.target);
        settings.dilated_factor = self.volume.dilated_factor;
        settings.adapt_every = self.volume.adapt_every;
        settings.move_rho = self.optimizer.move_rho;
        settings.move_shape = self.optimizer.move_shape;
        settings.objective_scale = self.optimizer.objective_scale;
        settings.validate()?;
        Ok((problem, settings))
    }

    /// Same problem on a mesh refined by `factor`: element counts and every
    /// length given in element units are multiplied, normalized profile
    /// coordinates are kept.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: f64| v * factor;
        let n = |v: usize| ((v as f64 * factor).round() as usize).max(1);
        let mut c = self.clone();
        c.grid.nelx = n(c.grid.nelx);
        c.grid.nely = n(c.grid.nely);
        c.grid.padding = None;
        c.filter.r_min = s(c.filter.r_min).max(1.0);
        if let Some(b) = &mut c.band {
            b.r_phi = s(b.r_phi).max(1.0);
            b.beta_fil = s(b.beta_fil);
        }
        if let Some(l) = &mut c.local_max_length {
            l.r_max = s(l.r_max);
        }
        if let Some(v) = &mut c.variable_max_length {
            v.r_max = s(v.r_max);
        }
        let beta_fil = c.schedule.resolve().beta_fil;
        if !beta_fil.is_empty() {
            c.schedule.beta_fil = Some(beta_fil.into_iter().map(s).collect());
        }
        c
    }
}

/// Reads, parses and validates a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    RunConfig::from_toml_str(&text)
}

/// Benchmark presets, in listing order, with a one-line description.
pub const PRESETS: &[(&str, &str)] = &[
    ("mbb-reference", "MBB half beam 300x100, fixed filter, no profiles"),
    ("mbb-reference-half", "mbb-reference on a 150x50 mesh"),
    ("cantilever-reference", "short cantilever 210x140, fixed filter, no profiles"),
    ("ex1-local-volume", "MBB beam with a local volume limit along one vertical profile"),
    ("ex2-local-simp", "MBB beam with halved stiffness along one vertical profile"),
    ("ex3-vv", "short cantilever, local maximum length scale along two vertical profiles"),
    ("ex3-vv-half", "ex3-vv on a 105x70 mesh"),
    ("ex3-vh", "short cantilever, local maximum length scale along a vertical and a horizontal profile"),
    ("ex4-varmin", "long cantilever with a larger minimum length scale along one profile"),
    ("ex4-varmax", "cantilever with a maximum length scale that doubles along one profile"),
    ("ex4-maxvia-min", "cantilever with a maximum length scale and a larger minimum length scale along one profile"),
];

const ALIASES: &[(&str, &str)] = &[
    ("reference-mbb", "mbb-reference"),
    ("reference-cantilever", "cantilever-reference"),
    ("cantilever-maxlen-vv", "ex3-vv"),
];

fn vertical(segments: usize, x0: f64, lower: f64, upper: f64) -> ProfileConfig {
    ProfileConfig {
        orientation: Orientation::Vertical,
        segments,
        initial: NodeValues::Uniform(x0),
        lower: NodeValues::Uniform(lower),
        upper: NodeValues::Uniform(upper),
    }
}

fn horizontal(segments: usize, y0: f64, lower: f64, upper: f64) -> ProfileConfig {
    ProfileConfig {
        orientation: Orientation::Horizontal,
        ..vertical(segments, y0, lower, upper)
    }
}

fn base(name: &str, kind: Benchmark, nelx: usize, nely: usize, r_min: f64, volume: f64) -> RunConfig {
    RunConfig {
        name: name.into(),
        iterations: 550,
        seed: 0,
        output: PathBuf::from("results").join(name),
        grid: GridConfig {
            kind,
            nelx,
            nely,
            element_size: 1.0,
            padding: None,
        },
        material: MaterialConfig::default(),
        filter: FilterConfig { r_min, variable: None },
        projection: ThresholdConfig::default(),
        volume: VolumeConfig {
            target: volume,
            dilated_factor: dilated_factor(),
            adapt_every: adapt_every(),
        },
        optimizer: OptimizerConfig::default(),
        schedule: ScheduleConfig::default(),
        band: None,
        local_volume: None,
        local_max_length: None,
        slope: None,
        variable_max_length: None,
    }
}

fn reference(name: &str, kind: Benchmark, nelx: usize, nely: usize, r_min: f64, volume: f64) -> RunConfig {
    let mut c = base(name, kind, nelx, nely, r_min, volume);
    c.projection = ThresholdConfig {
        eta_ero: 0.75,
        eta_int: 0.5,
        eta_dil: 0.25,
    };
    c
}

fn band(r_phi: f64, beta_fil: f64, profiles: Vec<ProfileConfig>) -> Option<BandConfig> {
    Some(BandConfig {
        r_phi,
        beta_fil,
        q: default_q(),
        profiles,
    })
}

fn ex1_family(name: &str) -> RunConfig {
    let mut c = base(name, Benchmark::Mbb, 300, 100, 10.0, 0.4);
    c.schedule = SchedulePreset::LocalVolume.into();
    c.band = band(10.0, 20.0, vec![vertical(5, 0.5, 0.33, 0.67)]);
    c.slope = Some(SlopeConfig::default());
    c
}

fn ex3_family(name: &str, profiles: Vec<ProfileConfig>) -> RunConfig {
    let mut c = base(name, Benchmark::Cantilever, 210, 140, 3.0, 0.35);
    c.schedule = SchedulePreset::LocalMaxLength.into();
    c.optimizer.move_rho = 0.1;
    c.band = band(3.0, 10.0, profiles);
    c.local_max_length = Some(LocalMaxLengthConfig { r_max: 5.0, alpha: 0.5 });
    c.slope = Some(SlopeConfig::default());
    c
}

fn ex4_family(name: &str) -> RunConfig {
    let mut c = base(name, Benchmark::Cantilever, 240, 120, 3.0, 0.4);
    c.schedule = SchedulePreset::VariableMaxLength.into();
    c.band = band(3.0, 20.0, vec![vertical(6, 0.5, 0.375, 0.625)]);
    c.slope = Some(SlopeConfig::default());
    c
}

/// Looks up a preset by name or alias.
pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    let key = ALIASES.iter().find(|(a, _)| *a == name).map_or(name, |(_, k)| k);
    let cfg = match key {
        "mbb-reference" => reference(key, Benchmark::Mbb, 300, 100, 10.0, 0.4),
        "mbb-reference-half" => {
            let mut c = preset("mbb-reference")?.scaled(0.5);
            c.name = key.into();
            c.output = PathBuf::from("results").join(key);
            c
        }
        "cantilever-reference" => reference(key, Benchmark::Cantilever, 210, 140, 8.0, 0.35),
        "ex1-local-volume" => {
            let mut c = ex1_family(key);
            c.local_volume = Some(LocalVolumeConfig { target: 0.25 });
            c
        }
        "ex2-local-simp" => {
            let mut c = ex1_family(key);
            c.material.r_e = 0.5;
            c
        }
        "ex3-vv" => ex3_family(key, vec![vertical(7, 0.25, 0.11, 0.40), vertical(7, 0.75, 0.61, 0.90)]),
        "ex3-vv-half" => {
            let mut c = preset("ex3-vv")?.scaled(0.5);
            c.name = key.into();
            c.output = PathBuf::from("results").join(key);
            c
        }
        "ex3-vh" => ex3_family(key, vec![horizontal(7, 0.5, 0.29, 0.71), vertical(7, 0.5, 0.36, 0.64)]),
        "ex4-varmin" => {
            let mut c = base(key, Benchmark::Cantilever, 300, 100, 2.0, 0.4);
            c.iterations = 600;
            c.schedule = SchedulePreset::VariableMinLength.into();
            c.filter.variable = Some(VariableFilterConfig { gamma: 4.0, exponent: 2 });
            c.band = band(2.0, 15.0, vec![vertical(4, 0.5, 0.43, 0.56)]);
            c.slope = Some(SlopeConfig::default());
            c
        }
        "ex4-varmax" => {
            let mut c = ex4_family(key);
            c.variable_max_length = Some(VariableMaxLengthConfig {
                r_max: 7.0,
                alpha: 0.6,
                gamma: 1.0,
                exponent: six(),
            });
            c
        }
        "ex4-maxvia-min" => {
            let mut c = ex4_family(key);
            c.filter.variable = Some(VariableFilterConfig { gamma: 1.0, exponent: 2 });
            c.variable_max_length = Some(VariableMaxLengthConfig {
                r_max: 20.0,
                alpha: 0.6,
                gamma: 0.0,
                exponent: six(),
            });
            c
        }
        _ => return Err(ConfigError::UnknownPreset(name.into())),
    };
    Ok(cfg)
}
