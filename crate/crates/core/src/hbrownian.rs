//! Brownian motion conditioned by `h` (Upper) or `h̃` (Lower), run downward in
//! time, and Monte-Carlo estimates of the event that it visits a set at times
//! accumulating at the pole.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::ImplicitRegion;
use crate::kernel::{HalfSpace, PoleContext, SpaceTimePoint};

/// Mean and per-coordinate variance of the transition from `(x, t)` to time `next_t`.
pub fn transition_law(ctx: &PoleContext, x: &[f64], t: f64, next_t: f64) -> Result<(Vec<f64>, f64)> {
    ctx.check(&SpaceTimePoint::new(x.to_vec(), t))?;
    if !ctx.half_space.admits(next_t) {
        return Err(Error::OutsideHalfSpace { point: format!("t = {next_t}"), half_space: ctx.half_space.name() });
    }
    if !(next_t < t) {
        return Err(invalid("next_t", format!("must be below the current time {t}, got {next_t}")));
    }
    Ok(law_unchecked(ctx, x, t, next_t))
}

fn law_unchecked(ctx: &PoleContext, x: &[f64], t: f64, tau: f64) -> (Vec<f64>, f64) {
    match ctx.half_space {
        HalfSpace::Upper => {
            let a = tau / t;
            let mean = x.iter().zip(&ctx.gamma).map(|(xi, g)| g + (xi - g) * a).collect();
            (mean, 2.0 * tau * (t - tau) / t)
        }
        HalfSpace::Lower => {
            let d = t - tau;
            let mean = x.iter().zip(&ctx.gamma).map(|(xi, g)| xi + 2.0 * g * d).collect();
            (mean, 2.0 * d)
        }
    }
}

/// One exact transition sample from `current` down to `next_t`.
pub fn transition_sample<R: Rng + ?Sized>(
    current: &SpaceTimePoint,
    next_t: f64,
    ctx: &PoleContext,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (mean, var) = transition_law(ctx, &current.x, current.t, next_t)?;
    let sd = var.sqrt();
    Ok(mean.into_iter().map(|m| m + sd * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// Geometric time grid accumulating at the pole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridPolicy {
    /// Contraction per step: `t_k = t_0 r^k` (Upper), `t_k = t_0 r^{-k}` (Lower).
    pub ratio: f64,
    pub steps: usize,
}

impl Default for GridPolicy {
    fn default() -> Self {
        Self { ratio: 0.9, steps: 200 }
    }
}

impl GridPolicy {
    pub fn times(&self, ctx: &PoleContext, t0: f64) -> Result<Vec<f64>> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(invalid("ratio", "must lie in (0, 1)"));
        }
        if self.steps == 0 {
            return Err(invalid("steps", "must be positive"));
        }
        if !ctx.half_space.admits(t0) {
            return Err(Error::OutsideHalfSpace { point: format!("t = {t0}"), half_space: ctx.half_space.name() });
        }
        let r = match ctx.half_space {
            HalfSpace::Upper => self.ratio,
            HalfSpace::Lower => 1.0 / self.ratio,
        };
        let times: Vec<f64> = (0..=self.steps).map(|k| t0 * r.powi(k as i32)).collect();
        if times.iter().any(|t| !t.is_finite() || !ctx.half_space.admits(*t)) || times.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("steps", "grid leaves the representable range"));
        }
        Ok(times)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub ctx: PoleContext,
    pub start: SpaceTimePoint,
    /// Strictly decreasing; `times[0]` is the start time.
    pub times: Vec<f64>,
    /// `positions[p][k]` is the position of path `p` at `times[k]`.
    pub positions: Vec<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.positions.len()
    }

    /// Positions of every path at grid index `k`.
    pub fn marginal(&self, k: usize) -> Vec<&[f64]> {
        self.positions.iter().map(|p| p[k].as_slice()).collect()
    }

    /// Columns `path,t,x1..xN`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["path".to_string(), "t".to_string()];
        header.extend((1..=self.ctx.dim).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (p, path) in self.positions.iter().enumerate() {
            for (t, x) in self.times.iter().zip(path) {
                let mut rec = vec![p.to_string(), format!("{t:.12e}")];
                rec.extend(x.iter().map(|v| format!("{v:.12e}")));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulates `n_paths` paths from `start` on the grid `grid`; path `p` draws
/// from its own ChaCha stream so the result does not depend on scheduling.
pub fn simulate(start: &SpaceTimePoint, grid: &GridPolicy, n_paths: usize, ctx: &PoleContext, seed: u64) -> Result<PathEnsemble> {
    ctx.validate()?;
    ctx.check(start)?;
    let times = grid.times(ctx, start.t)?;
    let positions = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut path = Vec::with_capacity(times.len());
            path.push(start.x.clone());
            for k in 1..times.len() {
                let (mean, var) = law_unchecked(ctx, &path[k - 1], times[k - 1], times[k]);
                let sd = var.sqrt();
                path.push(mean.into_iter().map(|m| m + sd * rng.sample::<f64, _>(StandardNormal)).collect());
            }
            path
        })
        .collect();
    Ok(PathEnsemble { ctx: ctx.clone(), start: start.clone(), times, positions, seed })
}

/// Two-sided Wilson score interval for `hits` successes out of `n`.
pub fn wilson_interval(hits: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterVerdict {
    /// The clustering probability looks like 0.
    Zero,
    /// The clustering probability looks like 1.
    One,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterPolicy {
    /// Normal quantile of the confidence intervals.
    pub z: f64,
    /// Largest acceptable interval half-width at the deepest level.
    pub max_half_width: f64,
    /// Upper confidence bound at the deepest level below which the verdict is `Zero`.
    pub zero_below: f64,
    /// Lower confidence bound at the deepest level above which the verdict is `One`.
    pub one_above: f64,
    /// Levels with fewer grid times beyond them are not used.
    pub min_grid_points: usize,
}

impl Default for ClusterPolicy {
    fn default() -> Self {
        Self { z: 1.96, max_half_width: 0.03, zero_below: 0.05, one_above: 0.95, min_grid_points: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaLevel {
    pub delta: f64,
    pub hits: usize,
    pub frequency: f64,
    pub ci: (f64, f64),
    /// Grid times at or beyond `delta`.
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEstimate {
    pub n_paths: usize,
    pub levels: Vec<DeltaLevel>,
    pub verdict: ClusterVerdict,
    /// Least-squares slope of the frequency against `log10 |delta|` over the usable levels.
    pub trend: Option<f64>,
    /// Ratio between consecutive grid times.
    pub grid_ratio: f64,
    pub reason: String,
}

impl ClusterEstimate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Default levels: `10^{-1}, ..., 10^{-8}` in the Upper half-space and their
/// Appell images `-10^k / 4` in the Lower one.
pub fn default_deltas(half: HalfSpace) -> Vec<f64> {
    (1..=8)
        .map(|k| match half {
            HalfSpace::Upper => 10f64.powi(-k),
            HalfSpace::Lower => -0.25 * 10f64.powi(k),
        })
        .collect()
}

/// Frequency, per level `delta`, of paths that sit in `complement` at some grid
/// time between `delta` and the pole.
pub fn cluster_probability(
    ensemble: &PathEnsemble,
    complement: &ImplicitRegion,
    deltas: &[f64],
    policy: &ClusterPolicy,
) -> Result<ClusterEstimate> {
    let ctx = &ensemble.ctx;
    complement.validate(ctx)?;
    for &d in deltas {
        if !ctx.half_space.admits(d) {
            return Err(Error::OutsideHalfSpace { point: format!("delta = {d}"), half_space: ctx.half_space.name() });
        }
    }
    let times = &ensemble.times;
    // Deepest grid index at which each path is in the complement.
    let deepest: Vec<Option<usize>> = ensemble
        .positions
        .par_iter()
        .map(|path| {
            for k in (0..times.len()).rev() {
                if complement.contains(&SpaceTimePoint::new(path[k].clone(), times[k]), ctx)? {
                    return Ok(Some(k));
                }
            }
            Ok(None)
        })
        .collect::<Result<_>>()?;
    let n = ensemble.n_paths();
    let mut sorted: Vec<f64> = deltas.to_vec();
    // Nearest to the pole last.
    sorted.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    if ctx.half_space == HalfSpace::Lower {
        sorted.reverse();
    }
    let levels: Vec<DeltaLevel> = sorted
        .iter()
        .map(|&delta| {
            let hits = deepest.iter().filter(|k| k.is_some_and(|k| times[k] <= delta)).count();
            DeltaLevel {
                delta,
                hits,
                frequency: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
                ci: wilson_interval(hits, n, policy.z),
                grid_points: times.iter().filter(|&&t| t <= delta).count(),
            }
        })
        .collect();
    let usable: Vec<&DeltaLevel> = levels.iter().filter(|l| l.grid_points >= policy.min_grid_points).collect();
    let trend = (usable.len() >= 2).then(|| {
        let xs: Vec<f64> = usable.iter().map(|l| l.delta.abs().log10()).collect();
        let ys: Vec<f64> = usable.iter().map(|l| l.frequency).collect();
        let m = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        if sxx > 0.0 { sxy / sxx } else { 0.0 }
    });
    let (verdict, reason) = match usable.last() {
        None => (ClusterVerdict::Indeterminate, "no level has enough grid points beyond it".to_string()),
        Some(l) => {
            let half = 0.5 * (l.ci.1 - l.ci.0);
            if half > policy.max_half_width {
                (ClusterVerdict::Indeterminate, format!("interval half-width {half:.4} above {}", policy.max_half_width))
            } else if l.ci.1 <= policy.zero_below {
                (ClusterVerdict::Zero, format!("deepest level {}: upper bound {:.4}", l.delta, l.ci.1))
            } else if l.ci.0 >= policy.one_above {
                (ClusterVerdict::One, format!("deepest level {}: lower bound {:.4}", l.delta, l.ci.0))
            } else {
                (ClusterVerdict::Indeterminate, format!("deepest level {}: frequency {:.4}", l.delta, l.frequency))
            }
        }
    };
    Ok(ClusterEstimate {
        n_paths: n,
        levels,
        verdict,
        trend,
        grid_ratio: if times.len() >= 2 { times[1] / times[0] } else { 1.0 },
        reason,
    })
}
