//! Task execution and report assembly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use parcap_core::appell::{identity_suite, SuiteOptions};
use parcap_core::averaging::{harnack_check, mean_value, phi, phi_prime, subparabolic_gap};
use parcap_core::capacity::capacity_of_region;
use parcap_core::geometry::{CompactSet, Frame, HeatBall, HeatShell};
use parcap_core::hbrownian::{cluster_probability, default_deltas, simulate, ClusterVerdict, PathEnsemble};
use parcap_core::kernel::{HalfSpace, PoleContext, ScalarField, SpaceTimePoint};
use parcap_core::wiener::{run_series, Verdict};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ConfigError, FrameSpec, RunConfig, Task};
use crate::fields::Field;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Compute(#[from] parcap_core::Error),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Emit {
    Csv,
    Json,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Done,
    Inconclusive(String),
    Failed(String),
}

impl Status {
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Done => 0,
            Status::Inconclusive(_) => 2,
            Status::Failed(_) => 1,
        }
    }
}

/// A finished task: JSON report, named CSV tables and the status.
pub struct Outcome {
    pub report: Value,
    /// `(suffix, content)`; the file is `<name><suffix>.csv`.
    pub tables: Vec<(String, String)>,
    pub status: Status,
}

const CRITERIA: [(&str, &str); 6] = [
    (
        "capacity",
        "C(K) is the largest total mass of a measure on K whose potential with kernel F(z - w) / (h(z) h_*(w)) stays at most 1 everywhere; it is computed as a linear program on a node cloud of K with guard collocation, and the potential is re-checked on an independent probe cloud.",
    ),
    (
        "series",
        "The pole is a removable singularity for the domain exactly when sum_n w_n C(E_n) diverges, where E_n is the complement of the domain inside the n-th shell around the pole and w_n = 2^(-nN/2) for dyadic shells, lambda^(-n) for level shells.",
    ),
    (
        "simulate",
        "The pole is removable exactly when the conditioned Brownian motion, run toward the pole, meets the complement of the domain at times accumulating at the pole with probability 1; otherwise that probability is 0.",
    ),
    (
        "mean-value",
        "For h-parabolic u the weighted average over the heat ball of scale c returns u at the center; phi'(c) is a weighted integral of H[hu]/h, and phi(2c) - phi(c) dominates a multiple of the integral of -H[hu]/h over the ball of scale c/2.",
    ),
    (
        "harnack",
        "For positive h-parabolic u the average over a time slice below the center of the ball of scale c is at most a constant times the infimum of u over the ball of scale 3c/4, with the constant independent of c.",
    ),
    (
        "appell-check",
        "The Appell map A(x, t) = (x / 2t, -1 / 4t) and its transform intertwine the two half-spaces: A^(-1) A = id, A h = h~, A F(. - w) = c(w) F(. - A w), and H[hu]/h at A^(-1) w equals 4 tau^2 H[h~ u(A^(-1) .)]/h~ at w.",
    ),
];

fn criterion(kind: &str) -> &'static str {
    CRITERIA.iter().find(|c| c.0 == kind).map(|c| c.1).unwrap_or("")
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn csv_of(f: impl FnOnce(&mut Vec<u8>) -> parcap_core::Result<()>) -> Result<String, RunError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(String::from_utf8(buf).expect("utf-8 csv"))
}

fn num(v: f64) -> String {
    format!("{v:.12e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn canonical_time(ctx: &PoleContext) -> f64 {
    match ctx.half_space {
        HalfSpace::Upper => 1.0,
        HalfSpace::Lower => -0.25,
    }
}

/// Runs the task of `cfg`; the seed in `cfg` is the one used and recorded.
pub fn execute(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let ctx = cfg.context.to_context().ok_or_else(|| {
        ConfigError::Schema(vec![crate::config::Violation { pointer: "/context".into(), message: "invalid context".into() }])
    })?;
    let seed = cfg.seed;
    let (result, tables, status) = match &cfg.task {
        Task::Capacity(t) => {
            let t0 = |c: Option<f64>| c.unwrap_or_else(|| canonical_time(&ctx));
            let frame = match &t.frame {
                FrameSpec::DyadicShell { n, center_time } => Frame::Shell(HeatShell::dyadic(&ctx, t0(*center_time), *n)?),
                FrameSpec::LambdaShell { lambda, n, center_time } => {
                    Frame::Shell(HeatShell::general(&ctx, t0(*center_time), *lambda, *n)?)
                }
                FrameSpec::Cylinder { t_min, t_max, center, drift, radius } => Frame::Cylinder {
                    t_min: *t_min,
                    t_max: *t_max,
                    center: center.clone(),
                    drift: drift.clone().unwrap_or_else(|| vec![0.0; ctx.dim]),
                    radius: *radius,
                },
            };
            let window = match &frame {
                Frame::Shell(s) => s.time_window(),
                Frame::Cylinder { t_min, t_max, .. } => (*t_min, *t_max),
            };
            let set = CompactSet::new(&ctx, frame, t.region.clone())?;
            let r = capacity_of_region(&set, &t.schedule, &t.options)?;
            let measure = csv_of(|b| r.write_measure_csv(b))?;
            let status = if r.converged {
                Status::Done
            } else {
                Status::Inconclusive("refinement did not converge within the schedule".into())
            };
            (json!({ "time_window": window, "capacity": to_value(&r) }), vec![("_measure".to_string(), measure)], status)
        }
        Task::Series(t) => {
            let r = run_series(&t.complement, &ctx, t.family, t.n_range, &t.schedule, &t.options, &t.policy)?;
            let table = csv_of(|b| r.write_csv(b))?;
            let status = match r.verdict {
                Verdict::Inconclusive => Status::Inconclusive(r.classification.reason.clone()),
                _ => Status::Done,
            };
            (to_value(&r), vec![(String::new(), table)], status)
        }
        Task::Simulate(t) => {
            let start = t
                .start
                .clone()
                .unwrap_or_else(|| SpaceTimePoint::new(ctx.axis_at(canonical_time(&ctx)), canonical_time(&ctx)));
            let e = simulate(&start, &t.grid, t.n_paths, &ctx, seed)?;
            let shown = PathEnsemble { positions: e.positions.iter().take(t.csv_paths).cloned().collect(), ..e.clone() };
            let paths = csv_of(|b| shown.write_csv(b))?;
            let last = e.times.len() - 1;
            let axis = ctx.axis_at(e.times[last]);
            let dist: Vec<f64> = e
                .marginal(last)
                .iter()
                .map(|x| x.iter().zip(&axis).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .collect();
            let terminal = json!({
                "time": e.times[last],
                "axis": axis,
                "mean_distance_to_axis": dist.iter().sum::<f64>() / dist.len().max(1) as f64,
                "max_distance_to_axis": dist.iter().copied().fold(0.0, f64::max),
            });
            let mut tables = vec![(String::new(), paths)];
            let (estimate, status) = match &t.complement {
                Some(region) => {
                    let deltas = t.deltas.clone().unwrap_or_else(|| default_deltas(ctx.half_space));
                    let est = cluster_probability(&e, region, &deltas, &t.policy)?;
                    let mut s = String::from("delta,hits,frequency,ci_low,ci_high,grid_points\n");
                    for l in &est.levels {
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{},{}",
                            num(l.delta),
                            l.hits,
                            num(l.frequency),
                            num(l.ci.0),
                            num(l.ci.1),
                            l.grid_points
                        );
                    }
                    tables.push(("_levels".to_string(), s));
                    let status = match est.verdict {
                        ClusterVerdict::Indeterminate => Status::Inconclusive(est.reason.clone()),
                        _ => Status::Done,
                    };
                    (to_value(&est), status)
                }
                None => (Value::Null, Status::Done),
            };
            let result = json!({
                "start": start,
                "n_paths": e.n_paths(),
                "grid_times": e.times.len(),
                "first_time": e.times[0],
                "last_time": e.times[last],
                "terminal": terminal,
                "estimate": estimate,
            });
            (result, tables, status)
        }
        Task::MeanValue(t) => {
            let u = Field::new(&t.field, &ctx);
            let t0 = t.center_time.unwrap_or_else(|| canonical_time(&ctx));
            let mut rows = Vec::new();
            let mut s = String::from(
                "c,center_value,mean_value,abs_error,quadrature_error,phi,phi_prime,gap_lhs,gap_rhs,gap_constant\n",
            );
            for &c in &t.scales {
                let ball = HeatBall::new(&ctx, t0, c)?;
                let center = u.eval(&ball.center)?;
                let mv = mean_value(&u, &ball, &t.quadrature)?;
                let p = phi(&u, &ball, &t.quadrature)?;
                let pp = if t.phi_prime { Some(phi_prime(&u, &ball, &t.quadrature)?) } else { None };
                let gap = if t.gap { Some(subparabolic_gap(&u, &ctx, t0, c, &t.quadrature, t.gap_samples, seed)?) } else { None };
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{}",
                    num(c),
                    num(center),
                    num(mv.value),
                    num((mv.value - center).abs()),
                    num(mv.quadrature_error),
                    num(p.value),
                    opt(pp.map(|q| q.value)),
                    opt(gap.as_ref().map(|g| g.lhs)),
                    opt(gap.as_ref().map(|g| g.rhs)),
                    opt(gap.as_ref().and_then(|g| g.admissible_constant)),
                );
                rows.push(json!({
                    "c": c,
                    "time_window": ball.time_window(),
                    "center_value": center,
                    "mean_value": mv,
                    "abs_error": (mv.value - center).abs(),
                    "phi": p,
                    "phi_prime": pp,
                    "gap": gap,
                }));
            }
            (json!({ "center_time": t0, "scales": rows }), vec![(String::new(), s)], Status::Done)
        }
        Task::Harnack(t) => {
            let u = Field::new(&t.field, &ctx);
            let t0 = t.center_time.unwrap_or_else(|| canonical_time(&ctx));
            let mut s = String::from("c,slice_time,slice_radius,average,infimum,ratio\n");
            let mut rows = Vec::new();
            for &c in &t.scales {
                let r = harnack_check(&u, &ctx, t0, c, &t.quadrature, t.samples, seed)?;
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    num(c),
                    num(r.slice_time),
                    num(r.slice_radius),
                    num(r.average),
                    num(r.infimum),
                    num(r.ratio)
                );
                rows.push(r);
            }
            let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
            (json!({ "center_time": t0, "scales": rows, "max_ratio": max_ratio }), vec![(String::new(), s)], Status::Done)
        }
        Task::AppellCheck(t) => {
            let opts = SuiteOptions { points: t.points, fd_points: t.fd_points, step: t.step };
            let r = identity_suite(&ctx.gamma, &opts, seed)?;
            let th = &t.thresholds;
            let mut checks = vec![
                ("round_trip", r.round_trip, th.round_trip, r.round_trip <= th.round_trip),
                ("transform", r.transform, th.transform, r.transform <= th.transform),
                ("transport", r.transport, th.transport, r.transport <= th.transport),
            ];
            for o in &r.identities {
                let name = match o.direction {
                    parcap_core::appell::AppellDirection::Forward => "h_identity_order_forward",
                    parcap_core::appell::AppellDirection::Backward => "h_identity_order_backward",
                };
                checks.push((name, o.order, th.order_min, o.order >= th.order_min && o.order <= th.order_max));
            }
            let mut s = String::from("check,value,threshold,pass\n");
            for (name, v, thr, ok) in &checks {
                let _ = writeln!(s, "{name},{},{},{ok}", num(*v), num(*thr));
            }
            let failed: Vec<&str> = checks.iter().filter(|c| !c.3).map(|c| c.0).collect();
            let status = if failed.is_empty() { Status::Done } else { Status::Failed(failed.join(", ")) };
            (json!({ "suite": r, "passed": failed.is_empty() }), vec![(String::new(), s)], status)
        }
    };
    let kind = cfg.task.kind();
    let report = json!({
        "task": kind,
        "name": cfg.name,
        "seed": seed,
        "context": ctx,
        "criterion": criterion(kind),
        "config": to_value(&cfg.task),
        "status": match &status {
            Status::Done => "done".to_string(),
            Status::Inconclusive(r) => format!("inconclusive: {r}"),
            Status::Failed(r) => format!("failed: {r}"),
        },
        "result": result,
    });
    Ok(Outcome { report, tables, status })
}

/// Writes the outcome under `dir`; returns the written paths in order.
pub fn write_outputs(cfg: &RunConfig, outcome: &Outcome, dir: &Path, emit: Emit) -> Result<Vec<PathBuf>, RunError> {
    let io = |path: &Path| {
        let p = path.display().to_string();
        move |source| RunError::Io { path: p, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    if matches!(emit, Emit::Json | Emit::Both) {
        let path = dir.join(format!("{}.json", cfg.name));
        let mut text = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(io(&path))?;
        written.push(path);
    }
    if matches!(emit, Emit::Csv | Emit::Both) {
        for (suffix, content) in &outcome.tables {
            let path = dir.join(format!("{}{suffix}.csv", cfg.name));
            std::fs::write(&path, content).map_err(io(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}
