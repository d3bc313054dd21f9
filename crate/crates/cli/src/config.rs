//! Run configuration: parsing with JSON-pointer diagnostics and validation.

use std::fmt;
use std::path::Path;

use parcap_core::appell::SuiteOptions;
use parcap_core::averaging::QuadratureSpec;
use parcap_core::capacity::{CapacityOptions, Schedule};
use parcap_core::geometry::ImplicitRegion;
use parcap_core::hbrownian::{ClusterPolicy, GridPolicy};
use parcap_core::kernel::{HalfSpace, PoleContext, SpaceTimePoint};
use parcap_core::wiener::{series_schedule, SeriesPolicy, ShellFamily};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One problem with the configuration, located by a JSON pointer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "{p}: {}", self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid JSON at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{}", render(.0))]
    Schema(Vec<Violation>),
}

fn render(v: &[Violation]) -> String {
    let mut s = format!("{} schema violation(s)", v.len());
    for x in v {
        s.push_str("\n  ");
        s.push_str(&x.to_string());
    }
    s
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::Schema(v) => v,
            _ => &[],
        }
    }
}

fn violation(pointer: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation { pointer: pointer.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextConfig {
    pub dim: usize,
    /// Defaults to the origin.
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    pub half_space: HalfSpace,
}

impl ContextConfig {
    pub fn to_context(&self) -> Option<PoleContext> {
        let gamma = self.gamma.clone().unwrap_or_else(|| vec![0.0; self.dim]);
        PoleContext::new(self.dim, gamma, self.half_space).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FrameSpec {
    DyadicShell {
        n: i32,
        #[serde(default)]
        center_time: Option<f64>,
    },
    LambdaShell {
        lambda: f64,
        n: i32,
        #[serde(default)]
        center_time: Option<f64>,
    },
    Cylinder {
        t_min: f64,
        t_max: f64,
        center: Vec<f64>,
        #[serde(default)]
        drift: Option<Vec<f64>>,
        radius: f64,
    },
}

/// Test functions available to the averaging tasks. Spatial coordinates `y`
/// are `x - gamma` in the upper half-space and `x` in the lower one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant { value: f64 },
    /// `(1 + y_1) / h`.
    CaloricLinear,
    /// `(|y|^2 + 2 N t + 3) / h`.
    CaloricQuadratic,
    /// `sum_k coefs[k] t^k`.
    TimePolynomial { coefs: Vec<f64> },
    /// The normalized kernel with its pole at the axis point at `time`, shifted by `offset`.
    KernelRatio {
        time: f64,
        #[serde(default)]
        offset: Option<Vec<f64>>,
    },
}

fn default_paths() -> usize {
    10_000
}
fn default_csv_paths() -> usize {
    100
}
fn default_scales() -> Vec<f64> {
    vec![1.0]
}
fn default_harnack_scales() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}
fn default_true() -> bool {
    true
}
fn default_gap_samples() -> usize {
    200
}
fn default_harnack_samples() -> usize {
    2000
}
fn default_n_range() -> (i32, i32) {
    (8, 20)
}
fn default_family() -> ShellFamily {
    ShellFamily::Dyadic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityTask {
    pub region: ImplicitRegion,
    pub frame: FrameSpec,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub options: CapacityOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesTask {
    /// Complement of the domain.
    pub complement: ImplicitRegion,
    #[serde(default = "default_family")]
    pub family: ShellFamily,
    #[serde(default = "default_n_range")]
    pub n_range: (i32, i32),
    #[serde(default = "series_schedule")]
    pub schedule: Schedule,
    #[serde(default)]
    pub options: CapacityOptions,
    #[serde(default)]
    pub policy: SeriesPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateTask {
    /// Defaults to the canonical axis point (`t = 1` upper, `t = -1/4` lower).
    #[serde(default)]
    pub start: Option<SpaceTimePoint>,
    #[serde(default)]
    pub grid: GridPolicy,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    /// Complement of the domain; without it only the ensemble is written.
    #[serde(default)]
    pub complement: Option<ImplicitRegion>,
    #[serde(default)]
    pub deltas: Option<Vec<f64>>,
    #[serde(default)]
    pub policy: ClusterPolicy,
    /// Number of paths written to the ensemble CSV.
    #[serde(default = "default_csv_paths")]
    pub csv_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanValueTask {
    pub field: FieldSpec,
    #[serde(default)]
    pub center_time: Option<f64>,
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default = "default_true")]
    pub phi_prime: bool,
    /// Also evaluate the gap inequality; requires `H[h u] <= 0`.
    #[serde(default)]
    pub gap: bool,
    #[serde(default = "default_gap_samples")]
    pub gap_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnackTask {
    pub field: FieldSpec,
    #[serde(default)]
    pub center_time: Option<f64>,
    #[serde(default = "default_harnack_scales")]
    pub scales: Vec<f64>,
    #[serde(default = "default_harnack_samples")]
    pub samples: usize,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub round_trip: f64,
    pub transform: f64,
    pub transport: f64,
    /// Accepted range of the observed finite-difference order.
    pub order_min: f64,
    pub order_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { round_trip: 1e-12, transform: 1e-10, transport: 1e-10, order_min: 1.8, order_max: 2.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppellCheckTask {
    pub points: usize,
    pub fd_points: usize,
    pub step: f64,
    pub thresholds: Thresholds,
}

impl Default for AppellCheckTask {
    fn default() -> Self {
        let s = SuiteOptions::default();
        Self { points: s.points, fd_points: s.fd_points, step: s.step, thresholds: Thresholds::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Task {
    Capacity(CapacityTask),
    Series(SeriesTask),
    Simulate(SimulateTask),
    MeanValue(MeanValueTask),
    Harnack(HarnackTask),
    AppellCheck(AppellCheckTask),
}

pub const TASK_KINDS: [&str; 6] = ["capacity", "series", "simulate", "mean-value", "harnack", "appell-check"];

impl Task {
    pub fn kind(&self) -> &'static str {
        match self {
            Task::Capacity(_) => "capacity",
            Task::Series(_) => "series",
            Task::Simulate(_) => "simulate",
            Task::MeanValue(_) => "mean-value",
            Task::Harnack(_) => "harnack",
            Task::AppellCheck(_) => "appell-check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub context: ContextConfig,
    pub seed: u64,
    /// Stem of the output files; defaults to the task kind.
    pub name: String,
    pub task: Task,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    context: ContextConfig,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    name: Option<String>,
    task: Value,
}

/// JSON pointer of a deserialization path, prefixed by `base`.
fn pointer(base: &str, path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = base.to_string();
    for seg in path.iter() {
        let token = match seg {
            Segment::Seq { index } => index.to_string(),
            Segment::Map { key } => key.replace('~', "~0").replace('/', "~1"),
            Segment::Enum { variant } => variant.clone(),
            Segment::Unknown => continue,
        };
        out.push('/');
        out.push_str(&token);
    }
    out
}

fn strip_position(msg: &str) -> String {
    match msg.find(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

fn typed<T: DeserializeOwned>(value: Value, base: &str) -> Result<T, Violation> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let p = pointer(base, e.path());
        violation(p, strip_position(&e.inner().to_string()))
    })
}

fn parse_task(mut value: Value) -> Result<Task, Violation> {
    let obj = value.as_object_mut().ok_or_else(|| violation("/task", "expected an object"))?;
    let kind = match obj.remove("kind") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(violation("/task/kind", "expected a string")),
        None => return Err(violation("/task/kind", format!("missing; one of {}", TASK_KINDS.join(", ")))),
    };
    let base = "/task";
    Ok(match kind.as_str() {
        "capacity" => Task::Capacity(typed(value, base)?),
        "series" => Task::Series(typed(value, base)?),
        "simulate" => Task::Simulate(typed(value, base)?),
        "mean-value" => Task::MeanValue(typed(value, base)?),
        "harnack" => Task::Harnack(typed(value, base)?),
        "appell-check" => Task::AppellCheck(typed(value, base)?),
        other => return Err(violation("/task/kind", format!("unknown task `{other}`; one of {}", TASK_KINDS.join(", ")))),
    })
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
            line: e.line(),
            column: e.column(),
            message: strip_position(&e.to_string()),
        })?;
        let raw: RawConfig = typed(value, "").map_err(|v| ConfigError::Schema(vec![v]))?;
        let task = parse_task(raw.task).map_err(|v| ConfigError::Schema(vec![v]))?;
        let cfg = RunConfig {
            context: raw.context,
            seed: raw.seed.unwrap_or(0),
            name: raw.name.unwrap_or_else(|| task.kind().to_string()),
            task,
        };
        let v = cfg.validate();
        if v.is_empty() {
            let seed = cfg.seed;
            Ok(cfg.with_seed(seed))
        } else {
            Err(ConfigError::Schema(v))
        }
    }

    /// Sets the run seed, which also seeds the capacity solves.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        match &mut self.task {
            Task::Capacity(t) => t.options.seed = seed,
            Task::Series(t) => t.options.seed = seed,
            _ => {}
        }
        self
    }

    /// All semantic problems of the configuration.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let c = &self.context;
        if !(1..=3).contains(&c.dim) {
            out.push(violation("/context/dim", format!("must be 1, 2 or 3, got {}", c.dim)));
            return out;
        }
        if let Some(g) = &c.gamma {
            if g.len() != c.dim {
                out.push(violation("/context/gamma", format!("expected {} entries, got {}", c.dim, g.len())));
            }
            for (i, v) in g.iter().enumerate() {
                if !v.is_finite() {
                    out.push(violation(format!("/context/gamma/{i}"), "must be finite"));
                }
            }
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            out.push(violation("/name", "must be a plain file stem"));
        }
        // a bad gamma is already reported; the task is still checked against gamma = 0
        let fallback = ContextConfig { gamma: None, ..c.clone() };
        let Some(ctx) = c.to_context().or_else(|| fallback.to_context()) else {
            return out;
        };
        let half = ctx.half_space;
        let region = |out: &mut Vec<Violation>, r: &ImplicitRegion, p: &str| {
            if let Err(e) = r.validate(&ctx) {
                out.push(violation(p, e.to_string()));
            }
        };
        let center = |out: &mut Vec<Violation>, t: Option<f64>| {
            if let Some(t) = t {
                if !(t.is_finite() && half.admits(t)) {
                    out.push(violation("/task/center_time", format!("must lie in the {} half-space", half.name())));
                }
            }
        };
        let scales = |out: &mut Vec<Violation>, s: &[f64]| {
            if s.is_empty() {
                out.push(violation("/task/scales", "must not be empty"));
            }
            for (i, v) in s.iter().enumerate() {
                if !(v.is_finite() && *v > 0.0) {
                    out.push(violation(format!("/task/scales/{i}"), "must be positive"));
                }
            }
        };
        match &self.task {
            Task::Capacity(t) => {
                region(&mut out, &t.region, "/task/region");
                check_frame(&mut out, &t.frame, &ctx);
                check_schedule(&mut out, &t.schedule, "/task/schedule");
                check_options(&mut out, &t.options, "/task/options");
            }
            Task::Series(t) => {
                region(&mut out, &t.complement, "/task/complement");
                if let ShellFamily::General { lambda } = t.family {
                    if !(lambda > 1.0 && lambda.is_finite()) {
                        out.push(violation("/task/family/lambda", "must be a finite number greater than 1"));
                    }
                }
                if t.n_range.1 < t.n_range.0 {
                    out.push(violation("/task/n_range", "upper end below lower end"));
                } else if ((t.n_range.1 - t.n_range.0 + 1) as usize) < t.policy.window.max(2) {
                    out.push(violation("/task/n_range", format!("needs at least {} shells", t.policy.window.max(2))));
                }
                if t.policy.window < 2 {
                    out.push(violation("/task/policy/window", "must be at least 2"));
                }
                check_schedule(&mut out, &t.schedule, "/task/schedule");
                check_options(&mut out, &t.options, "/task/options");
            }
            Task::Simulate(t) => {
                if t.n_paths == 0 {
                    out.push(violation("/task/n_paths", "must be positive"));
                }
                if !(t.grid.ratio > 0.0 && t.grid.ratio < 1.0) {
                    out.push(violation("/task/grid/ratio", "must lie in (0, 1)"));
                }
                if t.grid.steps == 0 {
                    out.push(violation("/task/grid/steps", "must be positive"));
                }
                if let Some(s) = &t.start {
                    if s.x.len() != ctx.dim {
                        out.push(violation("/task/start/x", format!("expected {} entries", ctx.dim)));
                    }
                    if !(s.t.is_finite() && half.admits(s.t)) {
                        out.push(violation("/task/start/t", format!("must lie in the {} half-space", half.name())));
                    }
                }
                if let Some(r) = &t.complement {
                    region(&mut out, r, "/task/complement");
                }
                if let Some(d) = &t.deltas {
                    for (i, v) in d.iter().enumerate() {
                        if !(v.is_finite() && half.admits(*v)) {
                            out.push(violation(format!("/task/deltas/{i}"), format!("must lie in the {} half-space", half.name())));
                        }
                    }
                    if t.complement.is_none() {
                        out.push(violation("/task/deltas", "given without a complement"));
                    }
                }
                if !(t.policy.z > 0.0) {
                    out.push(violation("/task/policy/z", "must be positive"));
                }
            }
            Task::MeanValue(t) => {
                check_field(&mut out, &t.field, &ctx);
                center(&mut out, t.center_time);
                scales(&mut out, &t.scales);
                check_quadrature(&mut out, &t.quadrature);
                if t.gap && t.gap_samples == 0 {
                    out.push(violation("/task/gap_samples", "must be positive"));
                }
            }
            Task::Harnack(t) => {
                check_field(&mut out, &t.field, &ctx);
                center(&mut out, t.center_time);
                scales(&mut out, &t.scales);
                check_quadrature(&mut out, &t.quadrature);
                if t.samples == 0 {
                    out.push(violation("/task/samples", "must be positive"));
                }
            }
            Task::AppellCheck(t) => {
                if t.points == 0 {
                    out.push(violation("/task/points", "must be positive"));
                }
                if t.fd_points == 0 {
                    out.push(violation("/task/fd_points", "must be positive"));
                }
                if !(t.step > 0.0 && t.step < 0.04) {
                    out.push(violation("/task/step", "must lie in (0, 0.04)"));
                }
            }
        }
        out
    }
}

fn check_frame(out: &mut Vec<Violation>, f: &FrameSpec, ctx: &PoleContext) {
    let half = ctx.half_space;
    match f {
        FrameSpec::DyadicShell { center_time, .. } | FrameSpec::LambdaShell { center_time, .. } => {
            if let FrameSpec::LambdaShell { lambda, .. } = f {
                if !(*lambda > 1.0 && lambda.is_finite()) {
                    out.push(violation("/task/frame/lambda", "must be a finite number greater than 1"));
                }
            }
            if let Some(t) = center_time {
                if !(t.is_finite() && half.admits(*t)) {
                    out.push(violation("/task/frame/center_time", format!("must lie in the {} half-space", half.name())));
                }
            }
        }
        FrameSpec::Cylinder { t_min, t_max, center, drift, radius } => {
            if !(t_min < t_max && half.admits(*t_min) && half.admits(*t_max)) {
                out.push(violation("/task/frame", format!("need t_min < t_max inside the {} half-space", half.name())));
            }
            if center.len() != ctx.dim {
                out.push(violation("/task/frame/center", format!("expected {} entries", ctx.dim)));
            }
            if drift.as_ref().is_some_and(|d| d.len() != ctx.dim) {
                out.push(violation("/task/frame/drift", format!("expected {} entries", ctx.dim)));
            }
            if !(*radius > 0.0 && radius.is_finite()) {
                out.push(violation("/task/frame/radius", "must be positive"));
            }
        }
    }
}

fn check_schedule(out: &mut Vec<Violation>, s: &Schedule, p: &str) {
    if s.max_levels == 0 {
        out.push(violation(format!("{p}/max_levels"), "must be positive"));
    }
    if !(s.rel_change > 0.0) {
        out.push(violation(format!("{p}/rel_change"), "must be positive"));
    }
    if s.max_nodes == 0 {
        out.push(violation(format!("{p}/max_nodes"), "must be positive"));
    }
}

fn check_options(out: &mut Vec<Violation>, o: &CapacityOptions, p: &str) {
    if !(o.tol > 0.0 && o.tol < 1.0) {
        out.push(violation(format!("{p}/tol"), "must lie in (0, 1)"));
    }
    if o.probe_factor == 0 {
        out.push(violation(format!("{p}/probe_factor"), "must be positive"));
    }
}

fn check_quadrature(out: &mut Vec<Violation>, q: &QuadratureSpec) {
    for (name, v) in [("time_tol", q.time_tol), ("abs_tol", q.abs_tol), ("fd_fraction", q.fd_fraction), ("error_slack", q.error_slack)] {
        if !(v > 0.0 && v.is_finite()) {
            out.push(violation(format!("/task/quadrature/{name}"), "must be positive"));
        }
    }
    if q.radial_order == 0 {
        out.push(violation("/task/quadrature/radial_order", "must be positive"));
    }
}

fn check_field(out: &mut Vec<Violation>, f: &FieldSpec, ctx: &PoleContext) {
    match f {
        FieldSpec::TimePolynomial { coefs } if coefs.is_empty() => {
            out.push(violation("/task/field/coefs", "must not be empty"));
        }
        FieldSpec::KernelRatio { time, offset } => {
            if !(time.is_finite() && ctx.half_space.admits(*time)) {
                out.push(violation("/task/field/time", format!("must lie in the {} half-space", ctx.half_space.name())));
            }
            if offset.as_ref().is_some_and(|o| o.len() != ctx.dim) {
                out.push(violation("/task/field/offset", format!("expected {} entries", ctx.dim)));
            }
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pointers(text: &str) -> Vec<String> {
        match RunConfig::from_json(text) {
            Err(ConfigError::Schema(v)) => v.into_iter().map(|v| v.pointer).collect(),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::from_json(
            r#"{"context": {"dim": 1, "half_space": "upper"}, "task": {"kind": "series", "complement": {"kind": "nothing"}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.name, "series");
        assert_eq!(cfg.seed, 0);
        let Task::Series(t) = cfg.task else { panic!() };
        assert_eq!(t.n_range, (8, 20));
        assert_eq!(t.schedule, series_schedule());
    }

    #[test]
    fn pointers_locate_errors() {
        assert_eq!(pointers(r#"{"context": {"dim": "one", "half_space": "upper"}, "task": {}}"#), ["/context/dim"]);
        assert_eq!(pointers(r#"{"context": {"dim": 1, "half_space": "upper"}, "task": {}}"#), ["/task/kind"]);
        assert_eq!(
            pointers(r#"{"context": {"dim": 1, "half_space": "upper"}, "task": {"kind": "series", "complement": {"kind": "nothing"}, "n_range": [1, "x"]}}"#),
            ["/task/n_range/1"]
        );
        assert_eq!(
            pointers(r#"{"context": {"dim": 1, "half_space": "upper"}, "task": {"kind": "simulate", "grid": {"ratio": 2.0}, "n_paths": 0}}"#),
            ["/task/n_paths", "/task/grid/ratio"]
        );
        assert_eq!(
            pointers(r#"{"context": {"dim": 2, "gamma": [0.0], "half_space": "lower"}, "task": {"kind": "appell-check", "step": 1.0}}"#),
            ["/context/gamma", "/task/step"]
        );
        assert_eq!(
            pointers(r#"{"context": {"dim": 1, "half_space": "upper"}, "extra": 1, "task": {"kind": "harnack"}}"#).len(),
            1
        );
        assert!(matches!(RunConfig::from_json("{"), Err(ConfigError::Syntax { .. })));
    }
}
