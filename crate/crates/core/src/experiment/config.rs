//! Experiment configuration: TOML schema, validation and resolved echo.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arrivals::{ArrivalModel, ArrivalPmf};
use crate::geometry::{ChannelDistribution, ServerModel, ServerState, WeightVector};
use crate::rational::{format_rational, parse_rational, to_f64, Rational};
use crate::schedulers::{SchedulerSpec, Variant};
use crate::simulator::{SimError, SystemConfig, DEFAULT_DEFENSIVE_WEIGHT};

/// A number written as a TOML integer, float or string (`"3/10"`).
/// Floats are read through their shortest decimal form, so `0.3` is
/// exactly `3/10`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Number {
    fn to_rational(&self) -> Result<Rational, String> {
        match self {
            Number::Int(i) => Ok(Rational::from_integer((*i).into())),
            Number::Float(f) if f.is_finite() => parse_rational(&format!("{f}")),
            Number::Float(f) => Err(format!("{f} is not a finite number")),
            Number::Text(s) => parse_rational(s),
        }
    }

    fn exact(r: &Rational) -> Self {
        Number::Text(format_rational(r))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub system: RawSystem,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scheduler: Vec<RawScheduler>,
    pub experiment: RawExperiment,
    #[serde(default)]
    pub output: RawOutput,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSystem {
    pub states: Vec<RawState>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pi: Option<Vec<Number>>,
    /// One pmf for both queues, or one per queue.
    pub arrivals: Vec<Vec<Number>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<[Number; 2]>,
    #[serde(default)]
    pub allow_overload: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawState {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<[u64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<[u64; 2]>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScheduler {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Number>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<[Number; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<Number>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<Number>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawExperiment {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    // decay and compare
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slots: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycles: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length_cycles: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_cycle_slots: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub defensive: Option<Number>,
    // simulate
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<[u64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_level: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_window: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_samples: Option<usize>,
    // partition
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_max: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve_points: Option<usize>,
    // audit
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit_q: Option<[u64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_max: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

impl Default for RawOutput {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            formats: default_formats(),
        }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<String> {
    vec!["csv".into()]
}

/// One validation problem: where it is and what is wrong.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub reason: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("invalid config:\n{}", format_issues(.0))]
    Invalid(Vec<ConfigIssue>),
}

impl ConfigError {
    pub fn issues(&self) -> &[ConfigIssue] {
        match self {
            ConfigError::Syntax(_) => &[],
            ConfigError::Invalid(v) => v,
        }
    }
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Geometry,
    Partition,
    Audit,
    JStar,
    Simulate,
    Decay,
    Compare,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Geometry,
        ExperimentKind::Partition,
        ExperimentKind::Audit,
        ExperimentKind::JStar,
        ExperimentKind::Simulate,
        ExperimentKind::Decay,
        ExperimentKind::Compare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Geometry => "geometry",
            ExperimentKind::Partition => "partition",
            ExperimentKind::Audit => "audit",
            ExperimentKind::JStar => "jstar",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Decay => "decay",
            ExperimentKind::Compare => "compare",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    fn needs_scheduler(self) -> bool {
        !matches!(self, ExperimentKind::Geometry | ExperimentKind::JStar)
    }
}

/// Which overflow estimator a decay or compare run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Naive,
    Regenerative,
    Tilted,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Naive => "naive",
            MethodKind::Regenerative => "regenerative",
            MethodKind::Tilted => "tilted",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            MethodKind::Naive,
            MethodKind::Regenerative,
            MethodKind::Tilted,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone)]
pub struct NamedScheduler {
    pub name: String,
    pub spec: SchedulerSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecaySettings {
    pub thresholds: Vec<i64>,
    pub replications: usize,
    pub method: MethodKind,
    pub slots: u64,
    pub cycles: u64,
    pub length_cycles: u64,
    pub max_cycle_slots: u64,
    pub defensive: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftSettings {
    pub level: u64,
    pub window: u64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSettings {
    pub horizon: u64,
    pub initial: [u64; 2],
    pub trace: bool,
    pub drift: Option<DriftSettings>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSettings {
    pub grid_max: u64,
    pub grid_step: u64,
    pub curve_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditSettings {
    pub q: [u64; 2],
    pub theta_max: u64,
}

/// A fully validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub workers: Option<usize>,
    /// System under the first scheduler (PLog when none is given).
    pub system: SystemConfig,
    pub schedulers: Vec<NamedScheduler>,
    pub decay: Option<DecaySettings>,
    pub simulate: Option<SimulateSettings>,
    pub partition: Option<PartitionSettings>,
    pub audit: Option<AuditSettings>,
    pub output_dir: PathBuf,
    resolved: RawConfig,
}

/// Command-line overrides applied before validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub kind: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub replications: Option<usize>,
    pub workers: Option<usize>,
}

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_REPLICATIONS: usize = 20;

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_with(text, &Overrides::default())
}

pub fn parse_config_with(
    text: &str,
    overrides: &Overrides,
) -> Result<ExperimentConfig, ConfigError> {
    let mut raw: RawConfig =
        toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    if let Some(k) = overrides.kind {
        raw.experiment.kind = k.name().into();
    }
    if let Some(s) = overrides.seed {
        raw.experiment.seed = Some(s);
    }
    if let Some(d) = &overrides.out {
        raw.output.dir = d.clone();
    }
    if let Some(r) = overrides.replications {
        raw.experiment.replications = Some(r);
    }
    if let Some(w) = overrides.workers {
        raw.experiment.workers = Some(w);
    }
    Validator::default().validate(raw)
}

impl ExperimentConfig {
    /// The config with every default filled in and every number in exact
    /// form; parsing it yields the same experiment.
    pub fn resolved(&self) -> &RawConfig {
        &self.resolved
    }

    pub fn resolved_toml(&self) -> String {
        toml::to_string(&self.resolved).expect("resolved config serializes")
    }

    pub fn with_output_dir(mut self, dir: PathBuf) -> Self {
        self.resolved.output.dir = dir.clone();
        self.output_dir = dir;
        self
    }
}

#[derive(Default)]
struct Validator {
    issues: Vec<ConfigIssue>,
}

impl Validator {
    fn issue(&mut self, path: impl Into<String>, reason: impl Into<String>) {
        self.issues.push(ConfigIssue {
            path: path.into(),
            reason: reason.into(),
        });
    }

    fn rational(&mut self, path: &str, n: &Number) -> Option<Rational> {
        n.to_rational().map_err(|e| self.issue(path, e)).ok()
    }

    fn positive_f64(&mut self, path: &str, n: &Number) -> Option<f64> {
        let r = self.rational(path, n)?;
        let v = to_f64(&r);
        if v > 0.0 && v.is_finite() {
            Some(v)
        } else {
            self.issue(path, "must be > 0");
            None
        }
    }

    fn validate(mut self, mut raw: RawConfig) -> Result<ExperimentConfig, ConfigError> {
        let model = self.model(&raw.system);
        let pi = self.pi(&raw.system, model.as_ref());
        let arrivals = self.arrivals(&raw.system);
        let weights = self.weights(&raw.system);
        let kind = ExperimentKind::parse(&raw.experiment.kind);
        if kind.is_none() {
            self.issue(
                "experiment.kind",
                format!(
                    "unknown kind `{}`; expected one of {}",
                    raw.experiment.kind,
                    ExperimentKind::ALL.map(|k| k.name()).join(", ")
                ),
            );
        }
        let schedulers = weights
            .as_ref()
            .map(|w| self.schedulers(&raw.scheduler, w))
            .unwrap_or_default();
        if kind.is_some_and(|k| k.needs_scheduler()) && raw.scheduler.is_empty() {
            self.issue(
                "scheduler",
                "this experiment needs at least one [[scheduler]] block",
            );
        }
        let ex = &raw.experiment;
        let seed = ex.seed.unwrap_or(DEFAULT_SEED);
        if ex.workers == Some(0) {
            self.issue("experiment.workers", "must be at least 1");
        }
        for (i, f) in raw.output.formats.iter().enumerate() {
            if f != "csv" {
                self.issue(
                    format!("output.formats[{i}]"),
                    format!("unsupported format `{f}`; only `csv` is available"),
                );
            }
        }

        let system = match (model, pi, arrivals, weights) {
            (Some(model), Some(pi), Some(arrivals), Some(weights)) => {
                let first = schedulers
                    .first()
                    .map(|s: &NamedScheduler| s.spec.clone())
                    .unwrap_or_else(|| SchedulerSpec::plog(weights.clone()));
                match SystemConfig::new(model, pi, arrivals, first, seed, raw.system.allow_overload)
                {
                    Ok(s) => Some(s),
                    Err(SimError::NotStabilizable(why)) => {
                        self.issue(
                            "system.arrivals",
                            format!("{why}; set system.allow_overload = true to run anyway"),
                        );
                        None
                    }
                    Err(SimError::WeightOverflow) => {
                        self.issue("system.weights", SimError::WeightOverflow.to_string());
                        None
                    }
                    Err(e) => {
                        self.issue("system", e.to_string());
                        None
                    }
                }
            }
            _ => None,
        };

        let kind = kind.unwrap_or(ExperimentKind::Geometry);
        let decay = matches!(kind, ExperimentKind::Decay | ExperimentKind::Compare)
            .then(|| self.decay(&mut raw.experiment, system.as_ref()))
            .flatten();
        let simulate = (kind == ExperimentKind::Simulate)
            .then(|| self.simulate(&mut raw.experiment))
            .flatten();
        let partition = (kind == ExperimentKind::Partition)
            .then(|| self.partition(&mut raw.experiment))
            .flatten();
        let audit = (kind == ExperimentKind::Audit)
            .then(|| self.audit(&mut raw.experiment))
            .flatten();

        if !self.issues.is_empty() {
            return Err(ConfigError::Invalid(self.issues));
        }
        let system = system.expect("no issues means the system was built");
        resolve_numbers(&mut raw, &system, &schedulers, seed);
        Ok(ExperimentConfig {
            kind,
            seed,
            workers: raw.experiment.workers,
            system,
            schedulers,
            decay,
            simulate,
            partition,
            audit,
            output_dir: raw.output.dir.clone(),
            resolved: raw,
        })
    }

    fn model(&mut self, sys: &RawSystem) -> Option<ServerModel> {
        if sys.states.is_empty() {
            self.issue("system.states", "at least one server state is required");
            return None;
        }
        let mut states = Vec::new();
        for (i, s) in sys.states.iter().enumerate() {
            let path = format!("system.states[{i}]");
            match (&s.mu, &s.vertices) {
                (Some(mu), None) => states.push(ServerState::triangle(*mu)),
                (None, Some(v)) => match ServerState::polytope(v.clone()) {
                    Ok(st) => states.push(st),
                    Err(e) => self.issue(format!("{path}.vertices"), e.to_string()),
                },
                _ => self.issue(path, "give exactly one of `mu` or `vertices`"),
            }
        }
        if states.len() != sys.states.len() {
            return None;
        }
        ServerModel::new(states)
            .map_err(|e| self.issue("system.states", e.to_string()))
            .ok()
    }

    fn pi(&mut self, sys: &RawSystem, model: Option<&ServerModel>) -> Option<ChannelDistribution> {
        let Some(raw) = &sys.pi else {
            return Some(ChannelDistribution::uniform(sys.states.len().max(1)));
        };
        let probs: Vec<Option<Rational>> = raw
            .iter()
            .enumerate()
            .map(|(i, n)| self.rational(&format!("system.pi[{i}]"), n))
            .collect();
        let probs: Vec<Rational> = probs.into_iter().collect::<Option<_>>()?;
        if probs.len() != sys.states.len() {
            self.issue(
                "system.pi",
                format!(
                    "has {} entries but there are {} states",
                    probs.len(),
                    sys.states.len()
                ),
            );
            return None;
        }
        let pi = ChannelDistribution::nominal(probs)
            .map_err(|e| self.issue("system.pi", e.to_string()))
            .ok()?;
        if let Some(m) = model {
            pi.check_model(m)
                .map_err(|e| self.issue("system.pi", e.to_string()))
                .ok()?;
        }
        Some(pi)
    }

    fn arrivals(&mut self, sys: &RawSystem) -> Option<ArrivalModel> {
        if !(1..=2).contains(&sys.arrivals.len()) {
            self.issue(
                "system.arrivals",
                "give one pmf for both queues or one per queue",
            );
            return None;
        }
        let mut pmfs = Vec::new();
        for (q, raw) in sys.arrivals.iter().enumerate() {
            let path = format!("system.arrivals[{q}]");
            let probs: Vec<Option<Rational>> = raw
                .iter()
                .enumerate()
                .map(|(i, n)| self.rational(&format!("{path}[{i}]"), n))
                .collect();
            let Some(probs) = probs.into_iter().collect::<Option<Vec<_>>>() else {
                continue;
            };
            match ArrivalPmf::new(probs) {
                Ok(p) => {
                    if let Some(c) = sys.c {
                        if p.max_arrivals() > c {
                            self.issue(
                                path.clone(),
                                format!(
                                    "support reaches {} arrivals, above c = {c}",
                                    p.max_arrivals()
                                ),
                            );
                        }
                    }
                    pmfs.push(p);
                }
                Err(e) => self.issue(path, e.to_string()),
            }
        }
        match pmfs.as_slice() {
            [p] if sys.arrivals.len() == 1 => Some(ArrivalModel::symmetric(p.clone())),
            [p, q] => Some(ArrivalModel::new(p.clone(), q.clone())),
            _ => None,
        }
    }

    fn weights(&mut self, sys: &RawSystem) -> Option<WeightVector> {
        let Some([b1, b2]) = &sys.weights else {
            return Some(WeightVector::ones());
        };
        let b1 = self.rational("system.weights[0]", b1);
        let b2 = self.rational("system.weights[1]", b2);
        WeightVector::new(b1?, b2?)
            .map_err(|e| self.issue("system.weights", e.to_string()))
            .ok()
    }

    fn schedulers(&mut self, raw: &[RawScheduler], b: &WeightVector) -> Vec<NamedScheduler> {
        let mut out: Vec<NamedScheduler> = Vec::new();
        for (i, s) in raw.iter().enumerate() {
            let path = format!("scheduler[{i}]");
            let name = s.name.clone().unwrap_or_else(|| s.kind.clone());
            if name.is_empty()
                || !name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                self.issue(format!("{path}.name"), "use letters, digits, `_` or `-`");
            }
            if out.iter().any(|o| o.name == name) {
                self.issue(
                    format!("{path}.name"),
                    format!("duplicate scheduler name `{name}`; set a distinct `name`"),
                );
            }
            let unused = |v: &mut Self, field: &str, present: bool| {
                if present {
                    v.issue(
                        format!("{path}.{field}"),
                        format!("not a parameter of `{}`", s.kind),
                    );
                }
            };
            let spec = match s.kind.as_str() {
                "plog" => {
                    unused(self, "alpha", s.alpha.is_some());
                    unused(self, "a", s.a.is_some());
                    unused(self, "c", s.c.is_some());
                    unused(self, "eta", s.eta.is_some());
                    Some(SchedulerSpec::plog(b.clone()))
                }
                "maxweight" => {
                    unused(self, "a", s.a.is_some());
                    unused(self, "c", s.c.is_some());
                    unused(self, "eta", s.eta.is_some());
                    let alpha = match &s.alpha {
                        Some(n) => self.positive_f64(&format!("{path}.alpha"), n),
                        None => Some(1.0),
                    };
                    alpha.and_then(|a| {
                        SchedulerSpec::max_weight(b.clone(), a)
                            .map_err(|e| self.issue(&path, e.to_string()))
                            .ok()
                    })
                }
                "exp" => {
                    unused(self, "alpha", s.alpha.is_some());
                    let a = self.pair(&format!("{path}.a"), s.a.as_ref());
                    let c = match &s.c {
                        Some(n) => self.positive_f64(&format!("{path}.c"), n),
                        None => Some(1.0),
                    };
                    let eta = match &s.eta {
                        Some(n) => self.rational(&format!("{path}.eta"), n).map(|r| to_f64(&r)),
                        None => Some(0.5),
                    };
                    match (a, c, eta) {
                        (Some(a), Some(c), Some(eta)) => {
                            SchedulerSpec::exp_rule(b.clone(), a, c, eta)
                                .map_err(|e| self.issue(&path, e.to_string()))
                                .ok()
                        }
                        _ => None,
                    }
                }
                "log" => {
                    unused(self, "alpha", s.alpha.is_some());
                    unused(self, "c", s.c.is_some());
                    unused(self, "eta", s.eta.is_some());
                    self.pair(&format!("{path}.a"), s.a.as_ref()).and_then(|a| {
                        SchedulerSpec::log_rule(b.clone(), a)
                            .map_err(|e| self.issue(&path, e.to_string()))
                            .ok()
                    })
                }
                other => {
                    self.issue(
                        format!("{path}.kind"),
                        format!(
                            "unknown scheduler `{other}`; expected plog, maxweight, exp or log"
                        ),
                    );
                    None
                }
            };
            if let Some(spec) = spec {
                out.push(NamedScheduler { name, spec });
            }
        }
        out
    }

    fn pair(&mut self, path: &str, raw: Option<&[Number; 2]>) -> Option<[f64; 2]> {
        let Some([x, y]) = raw else {
            return Some([1.0, 1.0]);
        };
        let x = self.positive_f64(&format!("{path}[0]"), x);
        let y = self.positive_f64(&format!("{path}[1]"), y);
        Some([x?, y?])
    }

    fn decay(
        &mut self,
        ex: &mut RawExperiment,
        system: Option<&SystemConfig>,
    ) -> Option<DecaySettings> {
        let thresholds = match &ex.thresholds {
            Some(t) if !t.is_empty() => t.clone(),
            _ => {
                self.issue(
                    "experiment.thresholds",
                    "at least one threshold is required",
                );
                return None;
            }
        };
        let replications = *ex.replications.get_or_insert(DEFAULT_REPLICATIONS);
        if replications == 0 {
            self.issue("experiment.replications", "must be at least 1");
        }
        let method_text = ex.method.get_or_insert_with(|| "tilted".into()).clone();
        let method = MethodKind::parse(&method_text);
        if method.is_none() {
            self.issue(
                "experiment.method",
                format!("unknown method `{method_text}`; expected naive, regenerative or tilted"),
            );
        }
        let defaults = crate::simulator::EstimationBudget::default();
        let slots = *ex.slots.get_or_insert(defaults.slots);
        let cycles = *ex.cycles.get_or_insert(defaults.cycles);
        let length_cycles = *ex.length_cycles.get_or_insert(defaults.length_cycles);
        let max_cycle_slots = *ex.max_cycle_slots.get_or_insert(defaults.max_cycle_slots);
        for (field, v) in [
            ("slots", slots),
            ("cycles", cycles),
            ("length_cycles", length_cycles),
            ("max_cycle_slots", max_cycle_slots),
        ] {
            if v == 0 {
                self.issue(format!("experiment.{field}"), "must be at least 1");
            }
        }
        if method == Some(MethodKind::Naive) && slots < crate::simulator::NAIVE_BATCHES {
            self.issue(
                "experiment.slots",
                format!(
                    "naive estimation needs at least {} slots",
                    crate::simulator::NAIVE_BATCHES
                ),
            );
        }
        let defensive_raw = ex
            .defensive
            .get_or_insert(Number::Float(DEFAULT_DEFENSIVE_WEIGHT))
            .clone();
        let defensive = match self.rational("experiment.defensive", &defensive_raw) {
            Some(d) if (0.0..1.0).contains(&to_f64(&d)) => Some(to_f64(&d)),
            Some(_) => {
                self.issue("experiment.defensive", "must lie in [0, 1)");
                None
            }
            None => None,
        };
        if method != Some(MethodKind::Naive) && system.is_some_and(|s| !s.is_stabilizable()) {
            self.issue(
                "experiment.method",
                "cycle-based estimation needs a stabilizable system; use `naive`",
            );
        }
        Some(DecaySettings {
            thresholds,
            replications,
            method: method?,
            slots,
            cycles,
            length_cycles,
            max_cycle_slots,
            defensive: defensive?,
        })
    }

    fn simulate(&mut self, ex: &mut RawExperiment) -> Option<SimulateSettings> {
        let horizon = *ex.horizon.get_or_insert(1_000_000);
        if horizon == 0 {
            self.issue("experiment.horizon", "must be at least 1");
        }
        let initial = *ex.initial.get_or_insert([0, 0]);
        let trace = *ex.trace.get_or_insert(false);
        if trace && horizon > 10_000_000 {
            self.issue("experiment.trace", "traces are limited to 10^7 slots");
        }
        let drift = match ex.drift_level {
            Some(level) => {
                let window = *ex.drift_window.get_or_insert(100);
                let samples = *ex.drift_samples.get_or_insert(400);
                if window == 0 {
                    self.issue("experiment.drift_window", "must be at least 1");
                }
                if samples < 2 {
                    self.issue("experiment.drift_samples", "must be at least 2");
                }
                Some(DriftSettings {
                    level,
                    window,
                    samples,
                })
            }
            None => {
                if ex.drift_window.is_some() || ex.drift_samples.is_some() {
                    self.issue(
                        "experiment.drift_level",
                        "required when drift_window or drift_samples is set",
                    );
                }
                None
            }
        };
        Some(SimulateSettings {
            horizon,
            initial,
            trace,
            drift,
        })
    }

    fn partition(&mut self, ex: &mut RawExperiment) -> Option<PartitionSettings> {
        let grid_max = *ex.grid_max.get_or_insert(40);
        let grid_step = *ex.grid_step.get_or_insert(1);
        let curve_points = *ex.curve_points.get_or_insert(50);
        if grid_step == 0 {
            self.issue("experiment.grid_step", "must be at least 1");
            return None;
        }
        if (grid_max / grid_step + 1).pow(2) > 4_000_000 {
            self.issue("experiment.grid_max", "grid has more than 4·10^6 points");
        }
        Some(PartitionSettings {
            grid_max,
            grid_step,
            curve_points,
        })
    }

    fn audit(&mut self, ex: &mut RawExperiment) -> Option<AuditSettings> {
        let Some(q) = ex.audit_q else {
            self.issue("experiment.audit_q", "required for an audit");
            return None;
        };
        if q == [0, 0] {
            self.issue("experiment.audit_q", "must not be the origin");
        }
        let theta_max = *ex.theta_max.get_or_insert(200);
        if theta_max == 0 {
            self.issue("experiment.theta_max", "must be at least 1");
        }
        Some(AuditSettings { q, theta_max })
    }
}

/// Rewrites numbers in exact form and fills scheduler defaults.
fn resolve_numbers(
    raw: &mut RawConfig,
    system: &SystemConfig,
    schedulers: &[NamedScheduler],
    seed: u64,
) {
    raw.experiment.seed = Some(seed);
    raw.system.pi = Some(system.pi().probs().iter().map(Number::exact).collect());
    let a = system.arrivals();
    raw.system.arrivals = (0..2)
        .map(|q| a.queue(q).probs().iter().map(Number::exact).collect())
        .collect();
    raw.system.c = Some(a.max_arrivals().max(raw.system.c.unwrap_or(0)));
    let b = system.scheduler().weights().get();
    raw.system.weights = Some([Number::exact(&b[0]), Number::exact(&b[1])]);
    for (r, s) in raw.scheduler.iter_mut().zip(schedulers) {
        r.name = Some(s.name.clone());
        match s.spec.variant() {
            Variant::MaxWeight { alpha } => r.alpha = Some(Number::Float(*alpha)),
            Variant::ExpRule { a, c, eta } => {
                r.a = Some([Number::Float(a[0]), Number::Float(a[1])]);
                r.c = Some(Number::Float(*c));
                r.eta = Some(Number::Float(*eta));
            }
            Variant::LogRule { a } => r.a = Some([Number::Float(a[0]), Number::Float(a[1])]),
            Variant::PLog => {}
        }
    }
}
