//! Wiener-type series over shells marching toward the pole, and the
//! removability verdict read off a finite stretch of it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::{capacity_of_region, CapacityOptions, Schedule};
use crate::error::{invalid, Result};
use crate::geometry::{shell_complement_intersection, HeatShell, ImplicitRegion};
use crate::kernel::{HalfSpace, PoleContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// The series looks divergent.
    Removable,
    /// The series looks convergent.
    NonRemovable,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    High,
    Low,
}

/// Thresholds for [`classify`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeriesPolicy {
    /// Slopes of `ln term` against `n` at or above `-eps_slope` read as divergent.
    pub eps_slope: f64,
    /// Fitted geometric ratios at or below this read as convergent.
    pub rho_max: f64,
    /// Number of trailing terms that are fitted.
    pub window: usize,
    /// Power-law exponents at or above this (minus `eps_slope`) read as divergent, with low confidence.
    pub power_floor: f64,
    /// Terms below this count as zero.
    pub zero_floor: f64,
}

impl Default for SeriesPolicy {
    fn default() -> Self {
        Self { eps_slope: 0.05, rho_max: 0.8, window: 6, power_floor: -1.0, zero_floor: 1e-200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShellFamily {
    Dyadic,
    General { lambda: f64 },
}

impl ShellFamily {
    pub fn shell(&self, ctx: &PoleContext, n: i32) -> Result<HeatShell> {
        match *self {
            ShellFamily::Dyadic => HeatShell::canonical_dyadic(ctx, n),
            ShellFamily::General { lambda } => HeatShell::canonical_general(ctx, lambda, n),
        }
    }
}

/// Diagnostics of the tail fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    pub confidence: Confidence,
    /// Least-squares slope of `ln term` against `n` over the window.
    pub slope: Option<f64>,
    /// `exp(slope)`.
    pub ratio: Option<f64>,
    /// Least-squares slope of `ln term` against `ln n`.
    pub power_exponent: Option<f64>,
    pub reason: String,
}

impl Classification {
    fn bare(verdict: Verdict, confidence: Confidence, reason: impl Into<String>) -> Self {
        Self { verdict, confidence, slope: None, ratio: None, power_exponent: None, reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellTerm {
    pub n: i32,
    pub capacity: f64,
    pub weight: f64,
    pub term: f64,
    pub converged: bool,
    /// `weight` times the certified lower bound of the capacity.
    pub term_lower_bound: f64,
    /// Values of the last two refinement levels, when more than one was solved.
    pub bracket: Option<(f64, f64)>,
    pub nodes: usize,
    pub probe_max_potential: f64,
    /// Time window of the shell, in the coordinates of the context.
    pub time_window: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub half_space: HalfSpace,
    pub dim: usize,
    pub family: ShellFamily,
    /// Which way the shells move as `n` grows.
    pub orientation: String,
    pub shells: Vec<ShellTerm>,
    pub partial_sums: Vec<f64>,
    pub verdict: Verdict,
    pub classification: Classification,
    /// Indices `n` whose capacity did not settle within the schedule.
    pub unconverged: Vec<i32>,
}

impl SeriesReport {
    pub fn terms(&self) -> Vec<f64> {
        self.shells.iter().map(|s| s.term).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Columns `n,capacity,term,partial_sum`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "capacity", "term", "partial_sum"])?;
        for (s, p) in self.shells.iter().zip(&self.partial_sums) {
            w.write_record([s.n.to_string(), fmt(s.capacity), fmt(s.term), fmt(*p)])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// Schedule used by the series: up to three levels and a node budget that keeps
/// each shell to a second or two.
pub fn series_schedule() -> Schedule {
    Schedule { max_levels: 3, max_nodes: 1200, ..Schedule::default() }
}

/// Dyadic series `sum 2^{-nN/2} C(complement ∩ D_n)` for `n` in `n_min..=n_max`.
pub fn series_terms(
    complement: &ImplicitRegion,
    ctx: &PoleContext,
    n_range: (i32, i32),
    schedule: &Schedule,
    opts: &CapacityOptions,
    policy: &SeriesPolicy,
) -> Result<SeriesReport> {
    run_series(complement, ctx, ShellFamily::Dyadic, n_range, schedule, opts, policy)
}

/// Series over the shells between the levels `lambda^{-n}` and `lambda^{-n+1}`.
pub fn lambda_series_terms(
    complement: &ImplicitRegion,
    ctx: &PoleContext,
    lambda: f64,
    n_range: (i32, i32),
    schedule: &Schedule,
    opts: &CapacityOptions,
    policy: &SeriesPolicy,
) -> Result<SeriesReport> {
    if !(lambda > 1.0 && lambda.is_finite()) {
        return Err(invalid("lambda", "must be a finite number greater than 1"));
    }
    run_series(complement, ctx, ShellFamily::General { lambda }, n_range, schedule, opts, policy)
}

pub fn run_series(
    complement: &ImplicitRegion,
    ctx: &PoleContext,
    family: ShellFamily,
    n_range: (i32, i32),
    schedule: &Schedule,
    opts: &CapacityOptions,
    policy: &SeriesPolicy,
) -> Result<SeriesReport> {
    ctx.validate()?;
    complement.validate(ctx)?;
    let (lo, hi) = n_range;
    if hi < lo {
        return Err(invalid("n_range", format!("empty range {lo}..={hi}")));
    }
    let shells: Vec<HeatShell> = (lo..=hi).map(|n| family.shell(ctx, n)).collect::<Result<_>>()?;
    let computed: Vec<ShellTerm> = shells
        .par_iter()
        .map(|shell| {
            let set = shell_complement_intersection(complement, shell)?;
            let r = capacity_of_region(&set, schedule, opts)?;
            let weight = shell.weight();
            Ok(ShellTerm {
                n: shell.index(),
                capacity: r.value,
                weight,
                term: weight * r.value,
                converged: r.converged,
                term_lower_bound: weight * r.certified_lower_bound,
                bracket: r.bracket,
                nodes: r.capacitary.len(),
                probe_max_potential: r.probe_max_potential,
                time_window: shell.time_window(),
            })
        })
        .collect::<Result<_>>()?;
    let mut acc = 0.0;
    let partial_sums = computed
        .iter()
        .map(|s| {
            acc += s.term;
            acc
        })
        .collect();
    let unconverged: Vec<i32> = computed.iter().filter(|s| !s.converged).map(|s| s.n).collect();
    let classification = classify_shells(&computed, policy);
    let orientation = match ctx.half_space {
        HalfSpace::Upper => "n increases toward the pole: the shell time windows reach down toward t = 0",
        HalfSpace::Lower => "n increases toward the pole at infinity: the shell time windows reach down toward t = -inf",
    };
    Ok(SeriesReport {
        half_space: ctx.half_space,
        dim: ctx.dim,
        family,
        orientation: orientation.to_string(),
        shells: computed,
        partial_sums,
        verdict: classification.verdict,
        classification,
        unconverged,
    })
}

/// Classifies the computed terms. A verdict reached with unconverged shells in
/// the window is kept only if both ends of every bracket give the same verdict.
fn classify_shells(shells: &[ShellTerm], policy: &SeriesPolicy) -> Classification {
    let ns: Vec<i32> = shells.iter().map(|s| s.n).collect();
    let terms: Vec<f64> = shells.iter().map(|s| s.term).collect();
    let base = classify(&ns, &terms, policy);
    let start = shells.len().saturating_sub(policy.window);
    if shells[start..].iter().all(|s| s.converged) || base.verdict == Verdict::Inconclusive {
        return base;
    }
    let end = |pick: fn((f64, f64)) -> f64| -> Vec<f64> {
        shells.iter().map(|s| s.bracket.map_or(s.capacity, pick) * s.weight).collect()
    };
    let low = classify(&ns, &end(|b| b.0), policy);
    let high = classify(&ns, &end(|b| b.1), policy);
    if low.verdict == base.verdict && high.verdict == base.verdict {
        base
    } else {
        Classification {
            verdict: Verdict::Inconclusive,
            confidence: Confidence::Low,
            reason: format!("unconverged shells: bracket ends disagree ({:?} vs {:?})", low.verdict, high.verdict),
            ..base
        }
    }
}

/// Reads a verdict off the trailing `policy.window` terms indexed by `ns`.
pub fn classify(ns: &[i32], terms: &[f64], policy: &SeriesPolicy) -> Classification {
    if ns.len() != terms.len() || terms.len() < policy.window.max(2) {
        return Classification::bare(Verdict::Inconclusive, Confidence::Low, "too few terms");
    }
    let start = terms.len() - policy.window.max(2);
    let (ns, terms) = (&ns[start..], &terms[start..]);
    if terms.iter().all(|&t| t <= policy.zero_floor) {
        return Classification::bare(Verdict::NonRemovable, Confidence::High, "trailing terms vanish");
    }
    let ln_t: Vec<f64> = terms.iter().map(|&t| t.max(policy.zero_floor).ln()).collect();
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let slope = ls_slope(&xs, &ln_t);
    let ratio = slope.exp();
    let power_exponent = if ns.iter().all(|&n| n > 0) {
        let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        Some(ls_slope(&lx, &ln_t))
    } else {
        None
    };
    let mk = |verdict, confidence, reason: String| Classification {
        verdict,
        confidence,
        slope: Some(slope),
        ratio: Some(ratio),
        power_exponent,
        reason,
    };
    if slope >= -policy.eps_slope {
        return mk(Verdict::Removable, Confidence::High, format!("slope {slope:.4} >= -{}", policy.eps_slope));
    }
    if ratio <= policy.rho_max {
        return mk(Verdict::NonRemovable, Confidence::High, format!("geometric ratio {ratio:.4} <= {}", policy.rho_max));
    }
    match power_exponent {
        Some(p) if p >= policy.power_floor - policy.eps_slope => mk(
            Verdict::Removable,
            Confidence::Low,
            format!("power-law decay with exponent {p:.3}, no faster than n^{}", policy.power_floor),
        ),
        _ => mk(Verdict::Inconclusive, Confidence::Low, format!("ratio {ratio:.4} between thresholds")),
    }
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
