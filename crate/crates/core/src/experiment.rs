//! Batch experiments driven by TOML config files.
//!
//! Every experiment renders a CSV table in memory first, so reruns with the
//! same seed can be compared byte for byte, and then writes it next to a JSON
//! manifest.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Deserialize;
use toml::Spanned;

use crate::channel::{averaged_step_superop, complex_sample_plan, hoeffding_bound, hoeffding_value, observable_range};
use crate::duality::{
    hubbard_oracle, lindblad_oracle, simulate_hubbard_wavefunction, verify_duality_exact, DualityMap, HubbardRequest,
};
use crate::error::Error;
use crate::fock::{amplitude_from_state, rho_coefficient, DenseState, LiouvilleSpace};
use crate::landscape::{steps_for, variance_probe, ComplexCoupling, ProbeRequest, DEFAULT_LOG_CAP};
use crate::lattice::{BipartiteLattice, Edge, LatticeSpec, Sublattice};
use crate::linalg::{matrix_power, C64, ONE};
use crate::slater::{init_slater, Configuration};

/// Most configuration pairs enumerated when none are listed.
pub const MAX_DEFAULT_CONFIGS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Fig1,
    Hubbard,
    Oracle,
    LandscapeProbe,
    Samples,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Fig1 => "fig1",
            Kind::Hubbard => "hubbard",
            Kind::Oracle => "oracle",
            Kind::LandscapeProbe => "landscape-probe",
            Kind::Samples => "samples",
        })
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Spanned<Kind>,
    pub seed: Option<Spanned<u64>>,
    pub output: Option<Spanned<PathBuf>>,
    pub lattice: Option<Spanned<LatticeConfig>>,
    pub model: Option<Spanned<ModelConfig>>,
    pub initial: Option<Spanned<InitialConfig>>,
    pub time: Option<Spanned<TimeConfig>>,
    pub sampling: Option<Spanned<SamplingConfig>>,
    pub configs: Option<Spanned<Vec<ConfigPair>>>,
    pub hoeffding: Option<Spanned<HoeffdingConfig>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Chain,
    Square,
    Custom,
}

/// Edge weight, real or `[re, im]`. Complex weights are rejected by the lattice builder.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Real(f64),
    Complex([f64; 2]),
}

impl Weight {
    fn value(self) -> C64 {
        match self {
            Weight::Real(w) => C64::new(w, 0.0),
            Weight::Complex([re, im]) => C64::new(re, im),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub kind: LatticeKind,
    pub length: Option<usize>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub periodic: Option<bool>,
    pub weight: Option<f64>,
    pub sites: Option<usize>,
    pub edges: Option<Spanned<Vec<(usize, usize, Weight)>>>,
    pub partition: Option<Vec<Sublattice>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub gamma: Option<Spanned<f64>>,
    pub j: Option<Spanned<[f64; 2]>>,
    pub u: Option<Spanned<[f64; 2]>>,
    pub rate: Option<Spanned<[f64; 2]>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub up: Spanned<Vec<usize>>,
    pub down: Spanned<Vec<usize>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub start: Option<Spanned<f64>>,
    pub end: Option<Spanned<f64>>,
    pub points: Option<Spanned<usize>>,
    pub tau: Option<Spanned<f64>>,
    pub steps: Option<Spanned<usize>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub samples: Option<Spanned<usize>>,
    pub exact: Option<bool>,
    pub log_cap: Option<Spanned<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPair {
    pub up: Vec<usize>,
    pub down: Vec<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoeffdingConfig {
    pub range: Option<Spanned<f64>>,
    pub observable_norm: Option<Spanned<f64>>,
    pub epsilon: Spanned<f64>,
    pub delta: Spanned<f64>,
    pub complex: Option<bool>,
}

/// Invalid configuration, located in the source text when possible.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Failure of a run, mapped onto the process exit code.
#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Numerical(Error),
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Io { .. } => 1,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "config error: {e}"),
            RunError::Numerical(e) => write!(f, "numerical guard tripped: {e}"),
            RunError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

/// Resolves byte offsets of one config text into 1-based line and column.
struct Locator<'a>(&'a str);

impl Locator<'_> {
    fn at(&self, span: Range<usize>, message: impl Into<String>) -> ConfigError {
        let start = span.start.min(self.0.len());
        let before = &self.0[..start];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
        ConfigError { line: Some(line), column: Some(column), message: message.into() }
    }

    fn bare(&self, message: impl Into<String>) -> ConfigError {
        ConfigError { line: None, column: None, message: message.into() }
    }

    /// Library failure caused by the value at `span`; guards keep their own class.
    fn lib(&self, span: Range<usize>, e: Error) -> RunError {
        if e.is_numerical_guard() {
            RunError::Numerical(e)
        } else {
            RunError::Config(self.at(span, e.to_string()))
        }
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    toml::from_str(text).map_err(|e| {
        let loc = Locator(text);
        let message = e.message().to_string();
        match e.span() {
            Some(span) => loc.at(span, message),
            None => loc.bare(message),
        }
    })
}

/// Command-line overrides of a config.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
}

/// In-memory result of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub csv: String,
    /// Human-readable summary for standard output.
    pub summary: String,
    pub rows: usize,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub rendered: Rendered,
    pub output: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub seed: u64,
    pub wall_time: f64,
}

/// Fully validated experiment.
#[derive(Clone, Debug)]
pub struct Plan {
    pub kind: Kind,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub lattice: BipartiteLattice,
    pub gamma: f64,
    pub coupling: ComplexCoupling,
    pub up: Vec<usize>,
    pub down: Vec<usize>,
    pub times: Vec<f64>,
    pub steps: StepRule,
    pub samples: usize,
    pub exact: bool,
    pub log_cap: f64,
    pub configs: Vec<(Configuration, Configuration)>,
    pub hoeffding: Option<HoeffdingPlan>,
}

/// Trotter steps per time point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepRule {
    /// `R = max(1, round(t/τ))`.
    Tau(f64),
    Fixed(usize),
}

impl StepRule {
    pub fn steps(self, t: f64) -> usize {
        match self {
            StepRule::Tau(tau) => steps_for(t, tau),
            StepRule::Fixed(r) => r,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HoeffdingPlan {
    pub range: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub complex: bool,
}

pub const DEFAULT_SEED: u64 = 20240607;

fn section_not_used<T>(loc: &Locator, kind: Kind, name: &str, s: &Option<Spanned<T>>) -> Result<(), ConfigError> {
    match s {
        Some(s) => Err(loc.at(s.span(), format!("[{name}] is not used by kind {kind}"))),
        None => Ok(()),
    }
}

fn key_not_used<T>(loc: &Locator, kind: Kind, name: &str, s: &Option<Spanned<T>>) -> Result<(), ConfigError> {
    match s {
        Some(s) => Err(loc.at(s.span(), format!("{name} is not used by kind {kind}"))),
        None => Ok(()),
    }
}

fn finite_nonneg(loc: &Locator, name: &str, v: &Spanned<f64>) -> Result<f64, ConfigError> {
    let x = *v.get_ref();
    if !(x.is_finite() && x >= 0.0) {
        return Err(loc.at(v.span(), format!("{name} must be finite and non-negative, got {x}")));
    }
    Ok(x)
}

fn complex_of(v: &Spanned<[f64; 2]>, loc: &Locator, name: &str) -> Result<C64, ConfigError> {
    let [re, im] = *v.get_ref();
    if !(re.is_finite() && im.is_finite()) {
        return Err(loc.at(v.span(), format!("{name} must be finite")));
    }
    Ok(C64::new(re, im))
}

fn build_lattice(loc: &Locator, cfg: &Option<Spanned<LatticeConfig>>) -> Result<BipartiteLattice, RunError> {
    let Some(spanned) = cfg else {
        return BipartiteLattice::chain(2, -1.0).map_err(RunError::Numerical);
    };
    let (l, span) = (spanned.get_ref(), spanned.span());
    let unused = |present: bool, key: &str| -> Result<(), ConfigError> {
        if present {
            Err(loc.at(span.clone(), format!("lattice key {key} does not apply to this lattice kind")))
        } else {
            Ok(())
        }
    };
    let missing = |key: &str| loc.at(span.clone(), format!("lattice needs {key}"));
    let weight = l.weight.unwrap_or(-1.0);
    let spec = match l.kind {
        LatticeKind::Chain => {
            unused(l.rows.is_some() || l.cols.is_some(), "rows/cols")?;
            unused(l.periodic.is_some(), "periodic")?;
            unused(l.sites.is_some() || l.edges.is_some() || l.partition.is_some(), "sites/edges/partition")?;
            LatticeSpec::Chain { length: l.length.ok_or_else(|| missing("length"))?, weight }
        }
        LatticeKind::Square => {
            unused(l.length.is_some(), "length")?;
            unused(l.sites.is_some() || l.edges.is_some() || l.partition.is_some(), "sites/edges/partition")?;
            LatticeSpec::Square {
                rows: l.rows.ok_or_else(|| missing("rows"))?,
                cols: l.cols.ok_or_else(|| missing("cols"))?,
                weight,
                periodic: l.periodic.unwrap_or(false),
            }
        }
        LatticeKind::Custom => {
            unused(l.length.is_some() || l.rows.is_some() || l.cols.is_some(), "length/rows/cols")?;
            unused(l.weight.is_some() || l.periodic.is_some(), "weight/periodic")?;
            let edges = l.edges.as_ref().ok_or_else(|| missing("edges"))?;
            LatticeSpec::Custom {
                n_sites: l.sites.ok_or_else(|| missing("sites"))?,
                edges: edges.get_ref().iter().map(|&(i, j, w)| Edge { i, j, weight: w.value() }).collect(),
                partition: l.partition.clone(),
            }
        }
    };
    let at = l.edges.as_ref().map_or(span, |e| e.span());
    BipartiteLattice::build(&spec).map_err(|e| loc.lib(at, e))
}

fn linspace(start: f64, end: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![start];
    }
    (0..points).map(|k| start + (end - start) * k as f64 / (points - 1) as f64).collect()
}

fn sector_configs(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u64..1 << n)
        .filter(|b| b.count_ones() as usize == k)
        .map(|b| (0..n).filter(|&s| b >> s & 1 == 1).collect())
        .collect()
}

/// Validates a parsed config against its kind and resolves defaults.
pub fn plan(cfg: &ExperimentConfig, text: &str, opts: &RunOptions) -> Result<Plan, RunError> {
    let loc = Locator(text);
    let kind = *cfg.kind.get_ref();
    let seed = opts.seed.or(cfg.seed.as_ref().map(|s| *s.get_ref())).unwrap_or(DEFAULT_SEED);
    let output = opts.output.clone().or(cfg.output.as_ref().map(|o| o.get_ref().clone()));

    if kind == Kind::Samples {
        for (name, present) in [
            ("lattice", cfg.lattice.as_ref().map(|s| s.span())),
            ("model", cfg.model.as_ref().map(|s| s.span())),
            ("initial", cfg.initial.as_ref().map(|s| s.span())),
            ("time", cfg.time.as_ref().map(|s| s.span())),
            ("sampling", cfg.sampling.as_ref().map(|s| s.span())),
            ("configs", cfg.configs.as_ref().map(|s| s.span())),
        ] {
            if let Some(span) = present {
                return Err(loc.at(span, format!("[{name}] is not used by kind {kind}")).into());
            }
        }
        let h = cfg.hoeffding.as_ref().ok_or_else(|| loc.at(cfg.kind.span(), "kind samples needs a [hoeffding] section"))?;
        let hv = h.get_ref();
        let range = match (&hv.range, &hv.observable_norm) {
            (Some(r), None) => *r.get_ref(),
            (None, Some(n)) => observable_range(*n.get_ref()).map_err(|e| loc.lib(n.span(), e))?,
            (Some(r), Some(_)) => return Err(loc.at(r.span(), "give either range or observable_norm, not both").into()),
            (None, None) => return Err(loc.at(h.span(), "[hoeffding] needs range or observable_norm").into()),
        };
        let hp = HoeffdingPlan {
            range,
            epsilon: *hv.epsilon.get_ref(),
            delta: *hv.delta.get_ref(),
            complex: hv.complex.unwrap_or(false),
        };
        hoeffding_value(hp.range, hp.epsilon, hp.delta).map_err(|e| loc.lib(h.span(), e))?;
        return Ok(Plan {
            kind,
            seed,
            output,
            lattice: BipartiteLattice::chain(2, -1.0).map_err(RunError::Numerical)?,
            gamma: 0.0,
            coupling: ComplexCoupling::new(ONE, C64::new(0.0, 0.0)),
            up: vec![],
            down: vec![],
            times: vec![],
            steps: StepRule::Fixed(1),
            samples: 0,
            exact: false,
            log_cap: DEFAULT_LOG_CAP,
            configs: vec![],
            hoeffding: Some(hp),
        });
    }
    section_not_used(&loc, kind, "hoeffding", &cfg.hoeffding)?;
    if output.is_none() {
        return Err(loc.bare(format!("kind {kind} needs an output path (config key output or --output)")).into());
    }

    let lattice = build_lattice(&loc, &cfg.lattice)?;
    let n = lattice.n_sites();

    let model = cfg.model.as_ref().map(|m| m.get_ref());
    let (gamma, coupling) = if kind == Kind::LandscapeProbe {
        if let Some(g) = model.and_then(|m| m.gamma.as_ref()) {
            return Err(loc.at(g.span(), "landscape-probe takes j with u or rate, not gamma").into());
        }
        let j = match model.and_then(|m| m.j.as_ref()) {
            Some(j) => complex_of(j, &loc, "j")?,
            None => ONE,
        };
        let u = match (model.and_then(|m| m.u.as_ref()), model.and_then(|m| m.rate.as_ref())) {
            (Some(u), None) => complex_of(u, &loc, "u")?,
            (None, Some(r)) => complex_of(r, &loc, "rate")? * C64::new(0.0, 1.0),
            (Some(u), Some(_)) => return Err(loc.at(u.span(), "give either u or rate, not both").into()),
            (None, None) => C64::new(0.0, 1.0),
        };
        if j.norm() == 0.0 {
            let span = model.and_then(|m| m.j.as_ref()).map_or(cfg.kind.span(), |j| j.span());
            return Err(loc.at(span, "j must be nonzero").into());
        }
        (0.0, ComplexCoupling::new(j, u))
    } else {
        if let Some(m) = model {
            key_not_used(&loc, kind, "j", &m.j)?;
            key_not_used(&loc, kind, "u", &m.u)?;
            key_not_used(&loc, kind, "rate", &m.rate)?;
        }
        let gamma = match model.and_then(|m| m.gamma.as_ref()) {
            Some(g) => finite_nonneg(&loc, "gamma", g)?,
            None => 1.0,
        };
        (gamma, ComplexCoupling::from_dephasing(ONE, C64::new(gamma, 0.0)))
    };

    let (up, down) = match &cfg.initial {
        Some(i) => {
            let iv = i.get_ref();
            init_slater(n, iv.up.get_ref()).map_err(|e| loc.lib(iv.up.span(), e))?;
            init_slater(n, iv.down.get_ref()).map_err(|e| loc.lib(iv.down.span(), e))?;
            (iv.up.get_ref().clone(), iv.down.get_ref().clone())
        }
        None if n >= 2 => (vec![0], vec![1]),
        None => return Err(loc.bare("an [initial] section is required for this lattice").into()),
    };

    let time = cfg.time.as_ref().map(|t| t.get_ref());
    let get = |f: fn(&TimeConfig) -> Option<&Spanned<f64>>| time.and_then(f);
    let start = get(|t| t.start.as_ref()).map(|v| finite_nonneg(&loc, "start", v)).transpose()?.unwrap_or(0.0);
    let end = get(|t| t.end.as_ref()).map(|v| finite_nonneg(&loc, "end", v)).transpose()?.unwrap_or(10.0);
    let points_sp = time.and_then(|t| t.points.as_ref());
    let points = points_sp.map(|p| *p.get_ref()).unwrap_or(21);
    if points == 0 {
        return Err(loc.at(points_sp.expect("explicit zero").span(), "points must be at least 1").into());
    }
    if end < start {
        let span = get(|t| t.end.as_ref()).map_or(0..0, |e| e.span());
        return Err(loc.at(span, format!("end {end} is before start {start}")).into());
    }
    let steps = match (time.and_then(|t| t.tau.as_ref()), time.and_then(|t| t.steps.as_ref())) {
        (Some(tau), None) => {
            let v = *tau.get_ref();
            if !(v > 0.0 && v.is_finite()) {
                return Err(loc.at(tau.span(), format!("tau must be positive, got {v}")).into());
            }
            StepRule::Tau(v)
        }
        (None, Some(r)) => {
            if *r.get_ref() == 0 {
                return Err(loc.at(r.span(), "steps must be at least 1").into());
            }
            StepRule::Fixed(*r.get_ref())
        }
        (Some(tau), Some(_)) => return Err(loc.at(tau.span(), "give either tau or steps, not both").into()),
        (None, None) => StepRule::Tau(if kind == Kind::LandscapeProbe { 0.05 } else { 0.01 }),
    };
    if kind == Kind::LandscapeProbe && matches!(steps, StepRule::Fixed(_)) {
        let span = time.and_then(|t| t.steps.as_ref()).map_or(0..0, |s| s.span());
        return Err(loc.at(span, "landscape-probe uses tau, not fixed steps").into());
    }

    let sampling = cfg.sampling.as_ref().map(|s| s.get_ref());
    let samples_sp = sampling.and_then(|s| s.samples.as_ref());
    let samples = samples_sp.map(|s| *s.get_ref()).unwrap_or(200);
    let exact = sampling.and_then(|s| s.exact).unwrap_or(true);
    let log_cap = match sampling.and_then(|s| s.log_cap.as_ref()) {
        Some(c) if kind != Kind::LandscapeProbe => {
            return Err(loc.at(c.span(), format!("log_cap is not used by kind {kind}")).into())
        }
        Some(c) => {
            let v = *c.get_ref();
            if !(v > 0.0) {
                return Err(loc.at(c.span(), "log_cap must be positive").into());
            }
            v
        }
        None => DEFAULT_LOG_CAP,
    };
    match kind {
        Kind::Oracle => section_not_used(&loc, kind, "sampling", &cfg.sampling)?,
        Kind::LandscapeProbe if samples < 2 => {
            return Err(loc.at(samples_sp.map_or(0..0, |s| s.span()), "landscape-probe needs at least 2 samples").into())
        }
        _ if samples == 0 => return Err(loc.at(samples_sp.map_or(0..0, |s| s.span()), "samples must be at least 1").into()),
        _ => {}
    }
    if kind == Kind::Fig1 && sampling.and_then(|s| s.exact).is_some() {
        return Err(loc.at(cfg.sampling.as_ref().map_or(0..0, |s| s.span()), "fig1 always emits exact columns").into());
    }

    let configs = match &cfg.configs {
        Some(list) => {
            if kind == Kind::Fig1 {
                return Err(loc.at(list.span(), "fig1 fixes its configurations; drop [[configs]]").into());
            }
            let mut out = Vec::new();
            for p in list.get_ref() {
                let pair = (Configuration::new(&p.up, n), Configuration::new(&p.down, n));
                match pair {
                    (Ok(u), Ok(d)) => {
                        if u.len() != up.len() || d.len() != down.len() {
                            return Err(loc
                                .at(list.span(), format!("configuration (up {u}, down {d}) is outside the initial sector"))
                                .into());
                        }
                        out.push((u, d));
                    }
                    (Err(e), _) | (_, Err(e)) => return Err(loc.lib(list.span(), e)),
                }
            }
            if kind == Kind::LandscapeProbe && out.len() != 1 {
                return Err(loc.at(list.span(), "landscape-probe takes exactly one configuration").into());
            }
            out
        }
        None => match kind {
            Kind::Fig1 => vec![
                (Configuration::new(&up, n).map_err(RunError::Numerical)?, Configuration::new(&down, n).map_err(RunError::Numerical)?),
                (Configuration::new(&up, n).map_err(RunError::Numerical)?, Configuration::new(&up, n).map_err(RunError::Numerical)?),
            ],
            Kind::LandscapeProbe => vec![(
                Configuration::new(&up, n).map_err(RunError::Numerical)?,
                Configuration::new(&down, n).map_err(RunError::Numerical)?,
            )],
            _ => {
                let (us, ds) = (sector_configs(n, up.len()), sector_configs(n, down.len()));
                if us.len() * ds.len() > MAX_DEFAULT_CONFIGS {
                    return Err(loc
                        .bare(format!(
                            "{} configuration pairs in the sector; list the wanted ones under [[configs]]",
                            us.len() * ds.len()
                        ))
                        .into());
                }
                let mut out = Vec::new();
                for u in &us {
                    for d in &ds {
                        out.push((
                            Configuration::new(u, n).map_err(RunError::Numerical)?,
                            Configuration::new(d, n).map_err(RunError::Numerical)?,
                        ));
                    }
                }
                out
            }
        },
    };
    if kind == Kind::Fig1 && (up.len() != down.len()) {
        return Err(loc.bare("fig1 reads the doubly occupied alternative and needs equal up and down counts").into());
    }

    Ok(Plan {
        kind,
        seed,
        output,
        lattice,
        gamma,
        coupling,
        up,
        down,
        times: linspace(start, end, points),
        steps,
        samples,
        exact,
        log_cap,
        configs,
        hoeffding: None,
    })
}

/// Seed of time point `k`, decorrelating the grid while staying a pure function of the master seed.
pub fn point_seed(master: u64, k: usize) -> u64 {
    master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(k as u64 + 1))
}

fn f(x: f64) -> String {
    format!("{:.16e}", x + 0.0)
}

fn label(c: &Configuration) -> String {
    c.sites().iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
}

/// Dense Hubbard-side value of the averaged channel composed `steps` times.
fn trotter_reference(
    p: &Plan,
    t: f64,
    steps: usize,
    configs: &[(Configuration, Configuration)],
) -> crate::Result<Vec<C64>> {
    let n = p.lattice.n_sites();
    let (up, down) = (init_slater(n, &p.up)?, init_slater(n, &p.down)?);
    let rho0 = lindblad_oracle(&p.lattice, p.gamma, &up, &down, 0.0)?;
    let space = LiouvilleSpace::sectors(n, p.up.len(), p.down.len())?;
    let step = averaged_step_superop(&p.lattice, p.gamma, t / steps as f64, &space)?;
    let rho = DenseState { amplitudes: matrix_power(&step.matrix, steps) * &rho0.amplitudes, space: rho0.space };
    let map = DualityMap::default();
    configs
        .iter()
        .map(|(u, d)| Ok(rho_coefficient(&rho, u.sites(), d.sites())? * map.output_phase(&p.lattice, d)))
        .collect()
}

fn exact_amplitudes(p: &Plan, t: f64, configs: &[(Configuration, Configuration)]) -> crate::Result<Vec<C64>> {
    let n = p.lattice.n_sites();
    let state = hubbard_oracle(&p.lattice, ONE, p.gamma, &init_slater(n, &p.up)?, &init_slater(n, &p.down)?, t)?;
    configs.iter().map(|(u, d)| amplitude_from_state(&state, u.sites(), d.sites())).collect()
}

fn sampled(p: &Plan, t: f64, steps: usize, k: usize) -> crate::Result<Vec<crate::channel::AmplitudeEstimate>> {
    let n = p.lattice.n_sites();
    let req = HubbardRequest {
        lattice: p.lattice.clone(),
        gamma: p.gamma,
        up_initial: init_slater(n, &p.up)?,
        down_initial: init_slater(n, &p.down)?,
        t,
        steps,
        samples: p.samples,
        configs: p.configs.clone(),
        seed: point_seed(p.seed, k),
    };
    simulate_hubbard_wavefunction(&req)
}

/// Runs the computation of a validated plan on the ambient rayon pool.
pub fn render(p: &Plan) -> crate::Result<Rendered> {
    let mut csv = String::new();
    let mut summary = String::new();
    let mut rows = 0;
    let line = |csv: &mut String, cells: Vec<String>| {
        csv.push_str(&cells.join(","));
        csv.push('\n');
    };
    match p.kind {
        Kind::Fig1 => {
            line(
                &mut csv,
                [
                    "t", "R", "re_mean", "im_mean", "stderr", "re_exact", "im_exact", "re_trotter", "im_trotter",
                    "re_alt_mean", "im_alt_mean", "alt_stderr", "re_alt_exact", "im_alt_exact",
                ]
                .map(String::from)
                .to_vec(),
            );
            let mut worst: f64 = 0.0;
            for (k, &t) in p.times.iter().enumerate() {
                let steps = p.steps.steps(t);
                let est = sampled(p, t, steps, k)?;
                let exact = exact_amplitudes(p, t, &p.configs)?;
                let trotter = trotter_reference(p, t, steps, &p.configs[..1])?;
                let (e, a) = (&est[0], &est[1]);
                if e.stderr > 0.0 {
                    let gap = e.mean - trotter[0];
                    worst = worst.max(gap.re.abs().max(gap.im.abs()) / e.stderr);
                }
                line(
                    &mut csv,
                    vec![
                        f(t),
                        steps.to_string(),
                        f(e.mean.re),
                        f(e.mean.im),
                        f(e.stderr),
                        f(exact[0].re),
                        f(exact[0].im),
                        f(trotter[0].re),
                        f(trotter[0].im),
                        f(a.mean.re),
                        f(a.mean.im),
                        f(a.stderr),
                        f(exact[1].re),
                        f(exact[1].im),
                    ],
                );
                rows += 1;
            }
            summary.push_str(&format!(
                "fig1: {rows} time points, {} samples each, largest |mean - averaged channel| = {worst:.2} stderr\n",
                p.samples
            ));
        }
        Kind::Hubbard => {
            let mut header: Vec<String> =
                ["t", "R", "up", "down", "re_mean", "im_mean", "stderr", "n_samples"].map(String::from).to_vec();
            if p.exact {
                header.extend(["re_exact", "im_exact"].map(String::from));
            }
            line(&mut csv, header);
            for (k, &t) in p.times.iter().enumerate() {
                let steps = p.steps.steps(t);
                let est = sampled(p, t, steps, k)?;
                let exact = if p.exact { Some(exact_amplitudes(p, t, &p.configs)?) } else { None };
                for (c, e) in est.iter().enumerate() {
                    let mut cells = vec![
                        f(t),
                        steps.to_string(),
                        label(&e.n),
                        label(&e.m),
                        f(e.mean.re),
                        f(e.mean.im),
                        f(e.stderr),
                        e.n_samples.to_string(),
                    ];
                    if let Some(x) = &exact {
                        cells.extend([f(x[c].re), f(x[c].im)]);
                    }
                    line(&mut csv, cells);
                    rows += 1;
                }
            }
            summary.push_str(&format!("hubbard: {rows} rows\n"));
        }
        Kind::Oracle => {
            line(&mut csv, ["t", "up", "down", "re_exact", "im_exact", "duality_deviation"].map(String::from).to_vec());
            let n = p.lattice.n_sites();
            let (up, down) = (init_slater(n, &p.up)?, init_slater(n, &p.down)?);
            let mut worst: f64 = 0.0;
            for &t in &p.times {
                let exact = exact_amplitudes(p, t, &p.configs)?;
                let dev = verify_duality_exact(&p.lattice, p.gamma, &up, &down, t)?;
                worst = worst.max(dev);
                for ((u, d), x) in p.configs.iter().zip(&exact) {
                    line(&mut csv, vec![f(t), label(u), label(d), f(x.re), f(x.im), f(dev)]);
                    rows += 1;
                }
            }
            summary.push_str(&format!("oracle: {rows} rows, largest duality deviation {worst:.3e}\n"));
        }
        Kind::LandscapeProbe => {
            let n = p.lattice.n_sites();
            let tau = match p.steps {
                StepRule::Tau(tau) => tau,
                StepRule::Fixed(_) => unreachable!("rejected during planning"),
            };
            let map = DualityMap::default();
            let req = ProbeRequest {
                lattice: p.lattice.clone(),
                coupling: p.coupling,
                ket: init_slater(n, &p.up)?,
                bra: map.bra_state(&p.lattice, &init_slater(n, &p.down)?)?,
                n: p.configs[0].0.clone(),
                m: p.configs[0].1.clone(),
                times: p.times.clone(),
                tau,
                samples: p.samples,
                seed: p.seed,
                log_cap: p.log_cap,
            };
            let report = variance_probe(&req)?;
            line(
                &mut csv,
                ["t", "arg_J", "arg_U", "s", "max_abs_X", "var_re", "var_im", "bound"].map(String::from).to_vec(),
            );
            let mut violations = 0;
            for r in &report.rows {
                violations += r.chain_violations;
                line(
                    &mut csv,
                    vec![f(r.t), f(r.arg_j), f(r.arg_u), f(r.s), f(r.max_abs_x), f(r.var_re), f(r.var_im), f(r.bound)],
                );
                rows += 1;
            }
            let slope = report.slope.map_or("n/a".to_string(), |s| format!("{s:.6}"));
            summary.push_str(&format!(
                "landscape-probe: fitted log-growth slope {slope} (hopping-bound rate {:.6}), {violations} bound violations\n",
                report.reference_rate
            ));
        }
        Kind::Samples => {
            let h = p.hoeffding.expect("samples plan carries Hoeffding inputs");
            let delta = if h.complex { h.delta / 2.0 } else { h.delta };
            let value = hoeffding_value(h.range, h.epsilon, delta)?;
            let m = if h.complex {
                complex_sample_plan(h.range, h.epsilon, h.delta)?
            } else {
                hoeffding_bound(h.range, h.epsilon, h.delta)?
            };
            line(&mut csv, ["range_width", "epsilon", "delta", "complex", "value", "samples"].map(String::from).to_vec());
            line(&mut csv, vec![f(h.range), f(h.epsilon), f(h.delta), h.complex.to_string(), f(value), m.to_string()]);
            rows = 1;
            summary.push_str(&format!("{m}\n"));
        }
    }
    Ok(Rendered { csv, summary, rows })
}

/// `<output>.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write(path: &Path, contents: &str) -> Result<(), RunError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| RunError::Io { path: dir.to_path_buf(), source })?;
    }
    std::fs::write(path, contents).map_err(|source| RunError::Io { path: path.to_path_buf(), source })
}

/// Parses, validates, runs and writes one experiment.
pub fn run_experiment(text: &str, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let cfg = parse_config(text)?;
    let p = plan(&cfg, text, opts)?;
    if opts.threads == Some(0) {
        return Err(ConfigError { line: None, column: None, message: "thread count must be at least 1".into() }.into());
    }
    let started = SystemTime::now();
    let clock = Instant::now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = opts.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| RunError::Io { path: PathBuf::from("<thread pool>"), source: std::io::Error::other(e) })?;
    let threads = pool.current_num_threads();
    let rendered = pool.install(|| render(&p)).map_err(|e| {
        if e.is_numerical_guard() {
            RunError::Numerical(e)
        } else {
            RunError::Config(ConfigError { line: None, column: None, message: e.to_string() })
        }
    })?;
    let wall_time = clock.elapsed().as_secs_f64();
    let (mut output, mut manifest) = (None, None);
    if let Some(path) = &p.output {
        write(path, &rendered.csv)?;
        let record = serde_json::json!({
            "kind": p.kind.to_string(),
            "seed": p.seed,
            "threads": threads,
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix": started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            "wall_time_s": wall_time,
            "rows": rendered.rows,
            "output": path.display().to_string(),
            "config": text,
        });
        let mpath = manifest_path(path);
        let body = serde_json::to_string_pretty(&record).expect("manifest is plain JSON") + "\n";
        write(&mpath, &body)?;
        output = Some(path.clone());
        manifest = Some(mpath);
    }
    Ok(RunOutcome { rendered, output, manifest, seed: p.seed, wall_time })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan_of(text: &str) -> Result<Plan, RunError> {
        let cfg = parse_config(text).map_err(RunError::Config)?;
        plan(&cfg, text, &RunOptions::default())
    }

    fn config_error(text: &str) -> ConfigError {
        match plan_of(text) {
            Err(RunError::Config(e)) => e,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let e = config_error("kind = \"fig1\"\noutput = \"x.csv\"\n[model]\ngama = 1.0\n");
        assert_eq!(e.line, Some(4), "{e}");
        assert!(e.message.contains("gama"), "{e}");
    }

    #[test]
    fn invalid_values_point_at_their_line() {
        let e = config_error("kind = \"hubbard\"\noutput = \"x.csv\"\n\n[model]\ngamma = -1.0\n");
        assert_eq!(e.line, Some(5), "{e}");
        let e = config_error("kind = \"fig1\"\noutput = \"x.csv\"\n[time]\ntau = 0.0\n");
        assert_eq!(e.line, Some(4), "{e}");
        let e = config_error("kind = \"hubbard\"\noutput = \"x.csv\"\n[initial]\nup = [0, 0]\ndown = [1]\n");
        assert_eq!(e.line, Some(4), "{e}");
    }

    #[test]
    fn non_bipartite_lattice_is_a_config_error() {
        let text = "kind = \"oracle\"\noutput = \"x.csv\"\n[lattice]\nkind = \"custom\"\nsites = 3\nedges = [[0, 1, -1.0], [1, 2, -1.0], [2, 0, -1.0]]\n";
        let e = config_error(text);
        assert_eq!(e.line, Some(6), "{e}");
        assert!(e.message.contains("bipartite"), "{e}");
        let complex = "kind = \"oracle\"\noutput = \"x.csv\"\n[lattice]\nkind = \"custom\"\nsites = 2\nedges = [[0, 1, [1.0, 0.5]]]\n";
        assert!(config_error(complex).message.contains("hopping"));
    }

    #[test]
    fn sections_must_fit_the_kind() {
        let e = config_error("kind = \"fig1\"\noutput = \"x.csv\"\n[hoeffding]\nrange = 2.0\nepsilon = 0.1\ndelta = 0.05\n");
        assert_eq!(e.line, Some(3));
        let e = config_error("kind = \"samples\"\n[model]\ngamma = 1.0\n[hoeffding]\nrange = 2.0\nepsilon = 0.1\ndelta = 0.05\n");
        assert_eq!(e.line, Some(2));
        assert!(config_error("kind = \"hubbard\"\n").message.contains("output"));
        let e = config_error("kind = \"landscape-probe\"\noutput = \"x.csv\"\n[model]\ngamma = 1.0\n");
        assert_eq!(e.line, Some(4));
    }

    #[test]
    fn fig1_defaults() {
        let p = plan_of("kind = \"fig1\"\noutput = \"x.csv\"\n").unwrap();
        assert_eq!(p.times.len(), 21);
        assert_eq!(p.times[1], 0.5);
        assert_eq!(p.times[20], 10.0);
        assert_eq!(p.steps, StepRule::Tau(0.01));
        assert_eq!(p.steps.steps(10.0), 1000);
        assert_eq!(p.steps.steps(0.0), 1);
        assert_eq!((p.samples, p.gamma), (200, 1.0));
        assert_eq!((p.up.clone(), p.down.clone()), (vec![0], vec![1]));
        assert_eq!(p.configs[0].1.sites(), &[1]);
        assert_eq!(p.configs[1].1.sites(), &[0]);
    }

    #[test]
    fn samples_kind_prints_the_bound() {
        let text = "kind = \"samples\"\n[hoeffding]\nrange = 2.0\nepsilon = 0.1\ndelta = 0.05\n";
        let out = run_experiment(text, &RunOptions::default()).unwrap();
        assert_eq!(out.rendered.summary.trim(), "738");
        let norm = "kind = \"samples\"\n[hoeffding]\nobservable_norm = 1.0\nepsilon = 0.1\ndelta = 0.05\n";
        assert_eq!(run_experiment(norm, &RunOptions::default()).unwrap().rendered.summary.trim(), "738");
    }

    #[test]
    fn hubbard_at_time_zero_reports_the_initial_configuration() {
        let text = "kind = \"hubbard\"\noutput = \"x.csv\"\n[time]\nend = 0.0\npoints = 1\n[sampling]\nsamples = 10\n";
        let p = plan_of(text).unwrap();
        let r = render(&p).unwrap();
        let lines: Vec<&str> = r.csv.lines().collect();
        assert_eq!(lines.len(), 5);
        let initial = lines.iter().find(|l| l.split(',').nth(2) == Some("0") && l.split(',').nth(3) == Some("1")).unwrap();
        let cells: Vec<&str> = initial.split(',').collect();
        assert_eq!(cells[4].parse::<f64>().unwrap(), 1.0);
        assert_eq!(cells[5].parse::<f64>().unwrap(), 0.0);
        for l in &lines[1..] {
            if l != initial {
                assert_eq!(l.split(',').nth(4).unwrap().parse::<f64>().unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn oracle_oversize_is_a_numerical_guard() {
        let text = "kind = \"oracle\"\noutput = \"x.csv\"\n[lattice]\nkind = \"chain\"\nlength = 8\n[initial]\nup = [0, 1, 2, 3]\ndown = [4, 5, 6, 7]\n[[configs]]\nup = [0, 1, 2, 3]\ndown = [4, 5, 6, 7]\n[time]\nend = 1.0\npoints = 2\n";
        let p = plan_of(text).unwrap();
        let err = render(&p).unwrap_err();
        assert!(matches!(err, Error::Size(_)), "{err}");
    }

    #[test]
    fn csv_uses_full_precision_and_lf() {
        let text = "kind = \"oracle\"\noutput = \"x.csv\"\n[time]\nend = 1.0\npoints = 3\n";
        let r = render(&plan_of(text).unwrap()).unwrap();
        assert!(!r.csv.contains('\r'));
        let first = r.csv.lines().nth(1).unwrap();
        let re = first.split(',').nth(3).unwrap();
        assert!(re.contains('e') && re.split('e').next().unwrap().trim_start_matches('-').len() == 18, "{re}");
    }

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(manifest_path(Path::new("out/a.csv")), PathBuf::from("out/a.csv.manifest.json"));
    }
}
