//! h-capacity of compact sets as a finite linear program over node clouds.
//!
//! `maximize sum m_i  s.t.  sum_i K(z_j, w_i) m_i <= 1,  m >= 0`, with the nodes `w_i`
//! taken from [`discretize`] and the constraint points `z_j` placed half a slice above
//! every cell of the frame (plus a halo above the frame). Violations found on random
//! probe clouds are added as cuts; the final probe cloud is reported, never clipped.

use highs::{Col, HighsModelStatus, Model, RowProblem, Sense, SolvedModel};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{
    discretize_layout, lex_cmp, sample_annulus, sample_emptiness, CompactSet, FrameLayout, NodeCloud, Resolution,
    Slicing,
};
use crate::kernel::{ln_kernel_ratio_unchecked, PoleContext, SpaceTimePoint};
use crate::measure::DiscreteMeasure;

/// Kernel entries below this are dropped from the matrix.
pub const KERNEL_FLOOR: f64 = 1e-300;

/// Scaled coefficients below this are left out of the linear program; potentials
/// and certificates always use the full kernel.
const LP_DROP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapacityOptions {
    /// Allowed excess of the potential over 1.
    pub tol: f64,
    /// Number of extra constraint slices above the frame.
    pub halo_slices: usize,
    /// Maximum number of cutting-plane rounds.
    pub cut_rounds: usize,
    /// Training probes per round, as a multiple of the constraint count.
    pub training_factor: usize,
    /// Maximum number of cuts added per round.
    pub max_cuts_per_round: usize,
    /// Size of the final probe cloud, as a multiple of the constraint count.
    pub probe_factor: usize,
    pub seed: u64,
    pub slicing: Slicing,
    /// Solve the dual program for the complementary-slackness residual.
    pub dual_certificate: bool,
    /// Restrict the frame window to the time range where the set has points.
    pub trim: bool,
    /// Scan size used by the trimming.
    pub trim_scan: usize,
}

impl Default for CapacityOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            halo_slices: 2,
            cut_rounds: 10,
            training_factor: 4,
            max_cuts_per_round: 64,
            probe_factor: 4,
            seed: 0x5eed,
            slicing: Slicing::Appell,
            dual_certificate: true,
            trim: true,
            trim_scan: 1024,
        }
    }
}

/// Refinement controls for [`capacity_of_region`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub start_level: u32,
    pub max_levels: u32,
    /// Relative change between successive levels that counts as converged.
    pub rel_change: f64,
    /// Levels whose node cloud exceeds this are not solved.
    pub max_nodes: usize,
    /// Random samples used to certify an empty set.
    pub emptiness_samples: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { start_level: 0, max_levels: 4, rel_change: 0.02, max_nodes: 4000, emptiness_samples: 20_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementStep {
    pub level: u32,
    pub nodes: usize,
    pub value: f64,
}

/// Outcome of a capacity solve together with its certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub value: f64,
    pub capacitary: DiscreteMeasure,
    /// Largest potential over the final constraint set.
    pub max_potential: f64,
    /// Smallest potential over the constraint points lying half a slice above nodes of the set.
    pub min_potential_on_k: f64,
    /// Largest potential over a fresh probe cloud.
    pub probe_max_potential: f64,
    pub probe_count: usize,
    /// `value / max(1, max_potential, probe_max_potential)`.
    pub certified_lower_bound: f64,
    /// Relative duality gap `(dual - primal) / primal`; `None` when the dual was not solved.
    pub complementary_slackness: Option<f64>,
    pub dual_value: Option<f64>,
    pub constraints: usize,
    pub cuts: usize,
    pub resolution: Resolution,
    pub converged: bool,
    /// Level history for refined solves.
    pub refinement: Vec<RefinementStep>,
    /// Smallest and largest values among the last two levels.
    pub bracket: Option<(f64, f64)>,
}

impl CapacityResult {
    fn zero(resolution: Resolution, converged: bool) -> Self {
        Self {
            value: 0.0,
            capacitary: DiscreteMeasure::empty(),
            max_potential: 0.0,
            min_potential_on_k: 0.0,
            probe_max_potential: 0.0,
            probe_count: 0,
            certified_lower_bound: 0.0,
            complementary_slackness: Some(0.0),
            dual_value: Some(0.0),
            constraints: 0,
            cuts: 0,
            resolution,
            converged,
            refinement: Vec::new(),
            bracket: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_measure_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        self.capacitary.write_csv(out)
    }
}

/// `P_mu(z)` with the kernel of `ctx`.
pub fn potential(mu: &DiscreteMeasure, z: &SpaceTimePoint, ctx: &PoleContext) -> Result<f64> {
    mu.potential(z, ctx)
}

/// `h(z) P_mu(z)`, the potential with unnormalized kernel `F / h_*`.
pub fn unnormalized_potential(mu: &DiscreteMeasure, z: &SpaceTimePoint, ctx: &PoleContext) -> Result<f64> {
    Ok(crate::kernel::h_of(z, ctx)? * mu.potential(z, ctx)?)
}

/// The smoothed reduction of 1 on the solved set, `P_lambda(z)`.
pub fn smoothed_reduction_on_compact(result: &CapacityResult, z: &SpaceTimePoint, ctx: &PoleContext) -> Result<f64> {
    result.capacitary.potential(z, ctx)
}

/// Sparse kernel rows: for each constraint point the nonzero `(node, K)` pairs.
fn kernel_rows(ctx: &PoleContext, points: &[SpaceTimePoint], nodes: &[SpaceTimePoint]) -> Vec<Vec<(usize, f64)>> {
    let ln_floor = KERNEL_FLOOR.ln();
    points
        .par_iter()
        .map(|z| {
            // nodes are sorted by time, so only a prefix can lie strictly below z
            let end = nodes.partition_point(|w| w.t < z.t);
            let mut row = Vec::new();
            for (i, w) in nodes[..end].iter().enumerate() {
                if let Some(l) = ln_kernel_ratio_unchecked(ctx, &z.x, z.t, &w.x, w.t) {
                    if l > ln_floor {
                        row.push((i, l.exp()));
                    }
                }
            }
            row
        })
        .collect()
}

fn potentials(ctx: &PoleContext, points: &[SpaceTimePoint], nodes: &[SpaceTimePoint], m: &[f64]) -> Vec<f64> {
    let active: Vec<usize> = (0..m.len()).filter(|&i| m[i] > 0.0).collect();
    points
        .par_iter()
        .map(|z| {
            active
                .iter()
                .filter(|&&i| nodes[i].t < z.t)
                .map(|&i| m[i] * ln_kernel_ratio_unchecked(ctx, &z.x, z.t, &nodes[i].x, nodes[i].t).map_or(0.0, f64::exp))
                .sum()
        })
        .collect()
}

fn solver_error(reason: impl std::fmt::Debug, best: Option<f64>) -> Error {
    Error::Solver { reason: format!("{reason:?}"), best_feasible: best }
}

struct Lp {
    vars: Vec<Option<Col>>,
    scale: Vec<f64>,
}

impl Lp {
    fn row(&self, row: &[(usize, f64)]) -> Vec<(Col, f64)> {
        row.iter()
            .filter_map(|&(i, k)| {
                let a = k * self.scale[i];
                self.vars[i].filter(|_| a > LP_DROP).map(|v| (v, a))
            })
            .collect()
    }

    fn masses(&self, sol: &SolvedModel) -> Vec<f64> {
        let x = sol.get_solution();
        let cols = x.columns();
        self.vars
            .iter()
            .zip(&self.scale)
            .map(|(v, s)| v.map_or(0.0, |v| (cols[v.index()] * s).max(0.0)))
            .collect()
    }
}

fn quiet(mut model: Model) -> Model {
    model.make_quiet();
    model.set_option("threads", 1);
    model.set_option("random_seed", 0);
    model
}

fn solve(model: Model, best: Option<f64>) -> Result<SolvedModel> {
    let sol = model.try_solve().map_err(|e| solver_error(e, best))?;
    match sol.status() {
        HighsModelStatus::Optimal => Ok(sol),
        status => Err(solver_error(status, best)),
    }
}

/// Dual simplex first, then primal simplex, then interior point.
fn solve_fresh(p: &RowProblem, sense: Sense) -> Result<SolvedModel> {
    let mut last = None;
    for attempt in 0..3 {
        let mut model = quiet(p.clone().optimise(sense));
        match attempt {
            1 => model.set_option("simplex_strategy", 4),
            2 => model.set_option("solver", "ipm"),
            _ => {}
        }
        match solve(model, None) {
            Ok(sol) => return Ok(sol),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("three attempts"))
}

/// Dual program `min sum y_j s.t. sum_j K_ji y_j >= 1`, in the column-scaled form.
fn solve_dual(rows: &[Vec<(usize, f64)>], scale: &[f64], n: usize) -> Result<f64> {
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (j, row) in rows.iter().enumerate() {
        for &(i, k) in row {
            let a = k * scale[i];
            if a > LP_DROP {
                cols[i].push((j, a));
            }
        }
    }
    let mut p = RowProblem::default();
    let ys: Vec<Col> = (0..rows.len()).map(|_| p.add_column(1.0, 0.0..)).collect();
    for (i, col) in cols.iter().enumerate() {
        if col.is_empty() {
            continue;
        }
        p.add_row(scale[i].., col.iter().map(|&(j, k)| (ys[j], k)));
    }
    let sol = solve_fresh(&p, Sense::Minimise)?;
    Ok(sol.objective_value())
}

/// Solves the capacity program on explicit nodes and constraint points, without cuts or probes.
pub fn capacity(
    cloud: &NodeCloud,
    collocation: &[SpaceTimePoint],
    ctx: &PoleContext,
    opts: &CapacityOptions,
) -> Result<CapacityResult> {
    let mut nodes = cloud.nodes.clone();
    nodes.sort_by(lex_cmp);
    if nodes.is_empty() {
        return Ok(CapacityResult::zero(cloud.resolution, true));
    }
    for z in nodes.iter().chain(collocation) {
        ctx.check(z)?;
    }
    let rows = kernel_rows(ctx, collocation, &nodes);
    let (lp, sol) = solve_primal(&rows, nodes.len())?;
    let m = lp.masses(&sol);
    let pot = potentials(ctx, collocation, &nodes, &m);
    let value: f64 = m.iter().sum();
    let max_potential = pot.iter().copied().fold(0.0, f64::max);
    let (dual_value, cs) = dual_cert(opts, &rows, &lp.scale, nodes.len(), value)?;
    Ok(CapacityResult {
        value,
        capacitary: DiscreteMeasure { nodes, masses: m },
        max_potential,
        min_potential_on_k: f64::NAN,
        probe_max_potential: f64::NAN,
        probe_count: 0,
        certified_lower_bound: value / max_potential.max(1.0),
        complementary_slackness: cs,
        dual_value,
        constraints: collocation.len(),
        cuts: 0,
        resolution: cloud.resolution,
        converged: true,
        refinement: Vec::new(),
        bracket: None,
    })
}

fn dual_cert(
    opts: &CapacityOptions,
    rows: &[Vec<(usize, f64)>],
    scale: &[f64],
    n: usize,
    value: f64,
) -> Result<(Option<f64>, Option<f64>)> {
    if !opts.dual_certificate {
        return Ok((None, None));
    }
    let d = solve_dual(rows, scale, n)?;
    let gap = if value > 0.0 { ((d - value) / value).abs() } else { d.abs() };
    Ok((Some(d), Some(gap)))
}

fn solve_primal(rows: &[Vec<(usize, f64)>], n: usize) -> Result<(Lp, SolvedModel)> {
    let mut col_max = vec![0.0f64; n];
    for row in rows {
        for &(i, k) in row {
            col_max[i] = col_max[i].max(k);
        }
    }
    let scale: Vec<f64> = col_max.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 }).collect();
    let mut p = RowProblem::default();
    // a node seen by no constraint would make the program unbounded; it is left out
    // costs normalized to at most 1; the objective value is not used, masses are
    let top = scale.iter().copied().fold(0.0, f64::max);
    let vars: Vec<Option<Col>> = scale.iter().map(|&s| (s > 0.0).then(|| p.add_column(s / top, 0.0..))).collect();
    let lp = Lp { vars, scale };
    for row in rows {
        p.add_row(..=1.0, lp.row(row));
    }
    let sol = solve_fresh(&p, Sense::Maximise)?;
    Ok((lp, sol))
}

/// Constraint points: half a slice above every frame cell, plus halo slices above the frame.
struct Collocation {
    points: Vec<SpaceTimePoint>,
    /// Indices of points sitting above a node of the set.
    over_nodes: Vec<usize>,
    top: f64,
}

const SKIRT_SLICES: usize = 3;
const SKIRT_SPACING: f64 = 0.3;

fn build_collocation(layout: &FrameLayout, res: &Resolution, node_slices: &[bool], opts: &CapacityOptions) -> Result<Collocation> {
    let dt = layout.dt(res);
    let mut points = Vec::new();
    let mut over_nodes = Vec::new();
    let cells = layout.cells(res)?;
    for c in &cells {
        let w = layout.from_ctx(&c.point);
        let t = w.t + 0.5 * dt;
        if !layout.working.admits(t) {
            continue;
        }
        let (z, _) = layout.to_ctx(&w.x, t);
        if node_slices[c.slice] {
            over_nodes.push(points.len());
        }
        points.push(z);
    }
    let dirs_res = Resolution { n_t: 1, ..*res };
    // Skirt: guards covering the radial extent of the slices just below.
    let bounds: Vec<Option<(f64, f64)>> = (0..res.n_t).map(|k| layout.radial_bounds(layout.slice_time(res, k))).collect();
    for k in 0..res.n_t {
        let lo_k = k.saturating_sub(SKIRT_SLICES);
        if !(lo_k..=k).any(|s| node_slices[s]) {
            continue;
        }
        let t = layout.slice_time(res, k) + 0.5 * dt;
        if !layout.working.admits(t) {
            continue;
        }
        let window = (lo_k..=k).filter_map(|s| bounds[s]);
        let (r_lo, r_hi) = window.fold((f64::INFINITY, 0.0f64), |(a, b), (i, o)| (a.min(i), b.max(o)));
        if !(r_hi > r_lo) {
            continue;
        }
        let own = bounds[k].filter(|(i, o)| o > i);
        let dr = own.map_or((r_hi - r_lo) / res.n_r as f64, |(i, o)| (o - i) / res.n_r as f64).max(SKIRT_SPACING * dt.sqrt());
        let axis = layout.axis(t);
        let mut r = r_lo - 0.5 * dr;
        while r <= r_hi + dr {
            let inside = own.is_some_and(|(i, o)| r > i && r < o);
            if r >= 0.0 && !inside {
                for u in unit_dirs(layout.dim(), dirs_res.n_dir, false) {
                    let x: Vec<f64> = axis.iter().zip(&u).map(|(a, e)| a + r * e).collect();
                    points.push(layout.to_ctx(&x, t).0);
                }
            }
            r += dr;
        }
    }
    let (halo_dt, top) = halo_step(layout, dt, opts.halo_slices);
    let r_max = layout.max_radius();
    for h in 0..opts.halo_slices {
        let t = layout.t_hi + (h as f64 + 0.5) * halo_dt;
        if !layout.working.admits(t) {
            continue;
        }
        let axis = layout.axis(t);
        let n_r = res.n_r + 1;
        for j in 0..n_r {
            let r = r_max * j as f64 / (n_r - 1) as f64;
            for u in unit_dirs(layout.dim(), dirs_res.n_dir, j == 0) {
                let x: Vec<f64> = axis.iter().zip(&u).map(|(a, e)| a + r * e).collect();
                points.push(layout.to_ctx(&x, t).0);
            }
        }
    }
    Ok(Collocation { points, over_nodes, top })
}

fn halo_step(layout: &FrameLayout, dt: f64, halo: usize) -> (f64, f64) {
    let mut step = dt;
    if halo > 0 && !layout.working.admits(layout.t_hi + halo as f64 * step) {
        step = 0.5 * layout.t_hi.abs() / halo as f64;
    }
    (step, layout.t_hi + halo as f64 * step)
}

fn unit_dirs(dim: usize, n_dir: usize, axis_only: bool) -> Vec<Vec<f64>> {
    if axis_only {
        let mut e = vec![0.0; dim];
        e[0] = 1.0;
        return vec![e];
    }
    match dim {
        1 => vec![vec![-1.0], vec![1.0]],
        2 => (0..n_dir)
            .map(|d| {
                let th = std::f64::consts::TAU * d as f64 / n_dir as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        _ => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..n_dir)
                .map(|d| {
                    let z = 1.0 - 2.0 * (d as f64 + 0.5) / n_dir as f64;
                    let r = (1.0 - z * z).sqrt();
                    let mut v = vec![r * (golden * d as f64).cos(), r * (golden * d as f64).sin(), z];
                    v.resize(dim, 0.0);
                    v
                })
                .collect()
        }
    }
}

/// Probe times: inside the working half-space and at least half a slice above the
/// nearest lower slice that carries nodes.
struct ProbeRule<'a> {
    layout: &'a FrameLayout,
    res: &'a Resolution,
    node_slices: &'a [bool],
    top: f64,
}

impl ProbeRule<'_> {
    fn admits(&self, t: f64) -> bool {
        if !(t >= self.layout.t_lo && t < self.top) || !self.layout.working.admits(t) {
            return false;
        }
        let dt = self.layout.dt(self.res);
        let k_below = ((t - self.layout.t_lo) / dt - 0.5).floor();
        if k_below >= 0.0 {
            let k = (k_below as usize).min(self.res.n_t - 1);
            if let Some(last) = (0..=k).rev().find(|&s| self.node_slices[s]) {
                return t - self.layout.slice_time(self.res, last) >= 0.5 * dt;
            }
        }
        true
    }

    fn point(&self, x: &[f64], t: f64) -> Option<SpaceTimePoint> {
        if !self.admits(t) {
            return None;
        }
        let (z, _) = self.layout.to_ctx(x, t);
        (self.layout.ctx.half_space.admits(z.t) && z.is_finite()).then_some(z)
    }

    /// Random probe points anywhere in the frame window plus halo.
    fn sample(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<SpaceTimePoint> {
        let r_max = self.layout.max_radius();
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0usize;
        while out.len() < count && attempts < 50 * count + 1000 {
            attempts += 1;
            let t = rng.random_range(self.layout.t_lo..self.top);
            if !self.admits(t) {
                continue;
            }
            let r_out = self.layout.radial_bounds(t).map_or(r_max, |b| b.1);
            let x = sample_annulus(&self.layout.axis(t), 0.0, 1.25 * r_out.max(1e-12), rng);
            if let Some(z) = self.point(&x, t) {
                out.push(z);
            }
        }
        out
    }

    /// Pattern-search ascent of the potential from `start`.
    fn climb(&self, start: &SpaceTimePoint, nodes: &[SpaceTimePoint], m: &[f64]) -> (SpaceTimePoint, f64) {
        let ctx = &self.layout.ctx;
        let w = self.layout.from_ctx(start);
        let (mut x, mut t) = (w.x, w.t);
        let mut best_z = start.clone();
        let mut best = potential_at(ctx, start, nodes, m);
        let mut hx = 0.05 * self.layout.max_radius().max(1e-12);
        let mut ht = 0.25 * self.layout.dt(self.res);
        for _ in 0..24 {
            let mut moved = false;
            for i in 0..=x.len() {
                for sign in [1.0, -1.0] {
                    let (mut xc, mut tc) = (x.clone(), t);
                    if i < x.len() {
                        xc[i] += sign * hx;
                    } else {
                        tc += sign * ht;
                    }
                    let Some(z) = self.point(&xc, tc) else { continue };
                    let p = potential_at(ctx, &z, nodes, m);
                    if p > best {
                        (best, best_z, x, t, moved) = (p, z, xc, tc, true);
                    }
                }
            }
            if !moved {
                hx *= 0.5;
                ht *= 0.5;
            }
        }
        (best_z, best)
    }
}

fn potential_at(ctx: &PoleContext, z: &SpaceTimePoint, nodes: &[SpaceTimePoint], m: &[f64]) -> f64 {
    nodes
        .iter()
        .zip(m)
        .filter(|(w, mi)| **mi > 0.0 && w.t < z.t)
        .map(|(w, mi)| mi * ln_kernel_ratio_unchecked(ctx, &z.x, z.t, &w.x, w.t).map_or(0.0, f64::exp))
        .sum()
}

/// Capacity of `set` at one resolution, with cuts and the probe certificate.
pub fn capacity_on_set(set: &CompactSet, res: &Resolution, opts: &CapacityOptions) -> Result<CapacityResult> {
    match prepared_layout(set, opts)? {
        Some(layout) => capacity_on_layout(set, &layout, res, opts),
        None => Ok(CapacityResult::zero(*res, true)),
    }
}

/// The frame layout used for `set`, or `None` when trimming finds no point of the set.
pub fn prepared_layout(set: &CompactSet, opts: &CapacityOptions) -> Result<Option<FrameLayout>> {
    let mut layout = set.layout(opts.slicing)?;
    if opts.trim && !layout.trim_to(set, opts.trim_scan)? {
        return Ok(None);
    }
    Ok(Some(layout))
}

fn capacity_on_layout(
    set: &CompactSet,
    layout: &FrameLayout,
    res: &Resolution,
    opts: &CapacityOptions,
) -> Result<CapacityResult> {
    if !(opts.tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    let cloud = discretize_layout(set, layout, res)?;
    if cloud.is_empty() {
        return Ok(CapacityResult::zero(*res, true));
    }
    let ctx = &set.ctx;
    let mut node_slices = vec![false; res.n_t];
    for &s in &cloud.slices {
        node_slices[s] = true;
    }
    let col = build_collocation(layout, res, &node_slices, opts)?;
    let nodes = cloud.nodes.clone();
    let mut points = col.points.clone();
    let mut rows = kernel_rows(ctx, &points, &nodes);
    let (mut lp, mut sol) = solve_primal(&rows, nodes.len())?;
    let rule = ProbeRule { layout, res, node_slices: &node_slices, top: col.top };
    let mut cuts = 0;
    for round in 0..opts.cut_rounds {
        let m = lp.masses(&sol);
        let mut probe_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(round as u64 + 1)));
        let train = rule.sample(opts.training_factor * points.len(), &mut probe_rng);
        let pot = potentials(ctx, &train, &nodes, &m);
        let mut order: Vec<usize> = (0..train.len()).filter(|&i| pot[i] > 0.9).collect();
        order.sort_by(|a, b| pot[*b].total_cmp(&pot[*a]).then(a.cmp(b)));
        order.truncate(opts.max_cuts_per_round);
        let climbed: Vec<(SpaceTimePoint, f64)> = order.par_iter().map(|&i| rule.climb(&train[i], &nodes, &m)).collect();
        let merge = 1e-3 * layout.max_radius().max(1e-12);
        let mut new_points: Vec<SpaceTimePoint> = Vec::new();
        for (z, _) in climbed.into_iter().filter(|(_, p)| *p > 1.0 + 0.5 * opts.tol) {
            let w = layout.from_ctx(&z);
            let close = |q: &SpaceTimePoint| {
                let v = layout.from_ctx(q);
                (v.t - w.t).abs() <= 1e-3 * rule.layout.dt(res) && v.x.iter().zip(&w.x).all(|(a, b)| (a - b).abs() <= merge)
            };
            if !new_points.iter().any(close) {
                new_points.push(z);
            }
        }
        if new_points.is_empty() {
            break;
        }
        let new_rows = kernel_rows(ctx, &new_points, &nodes);
        let best = Some(lp.masses(&sol).iter().sum());
        let mut model = Model::from(sol);
        for r in &new_rows {
            model.try_add_row(..=1.0, lp.row(r)).map_err(|e| solver_error(e, best))?;
        }
        cuts += new_points.len();
        points.extend(new_points);
        rows.extend(new_rows);
        // a failed warm start is retried from scratch
        (lp, sol) = match solve(model, best) {
            Ok(s) => (lp, s),
            Err(_) => solve_primal(&rows, nodes.len())?,
        };
    }
    let m = lp.masses(&sol);
    let value: f64 = m.iter().sum();
    let pot = potentials(ctx, &points, &nodes, &m);
    let max_potential = pot.iter().copied().fold(0.0, f64::max);
    let min_potential_on_k = col.over_nodes.iter().map(|&j| pot[j]).fold(f64::INFINITY, f64::min);
    let mut final_rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(0xC0FFEE));
    let probes = rule.sample(opts.probe_factor * points.len(), &mut final_rng);
    let probe_max = potentials(ctx, &probes, &nodes, &m).into_iter().fold(0.0, f64::max);
    let (dual_value, cs) = dual_cert(opts, &rows, &lp.scale, nodes.len(), value)?;
    Ok(CapacityResult {
        value,
        capacitary: DiscreteMeasure { nodes, masses: m },
        max_potential,
        min_potential_on_k,
        probe_max_potential: probe_max,
        probe_count: probes.len(),
        certified_lower_bound: value / max_potential.max(probe_max).max(1.0),
        complementary_slackness: cs,
        dual_value,
        constraints: points.len(),
        cuts,
        resolution: *res,
        converged: true,
        refinement: Vec::new(),
        bracket: None,
    })
}

/// Refines the resolution until successive values agree to `schedule.rel_change`.
pub fn capacity_of_region(set: &CompactSet, schedule: &Schedule, opts: &CapacityOptions) -> Result<CapacityResult> {
    let dim = set.ctx.dim;
    let Some(layout) = prepared_layout(set, opts)? else {
        let cert = sample_emptiness(set, schedule.emptiness_samples, opts.seed)?;
        let mut r = CapacityResult::zero(Resolution::level(schedule.start_level, dim), cert.is_empty());
        r.refinement.push(RefinementStep { level: schedule.start_level, nodes: 0, value: 0.0 });
        return Ok(r);
    };
    let mut history: Vec<RefinementStep> = Vec::new();
    let mut last: Option<CapacityResult> = None;
    for level in schedule.start_level..schedule.start_level + schedule.max_levels {
        let res = Resolution::level(level, dim);
        let cloud = discretize_layout(set, &layout, &res)?;
        if cloud.len() > schedule.max_nodes {
            break;
        }
        let r = capacity_on_layout(set, &layout, &res, opts)?;
        history.push(RefinementStep { level, nodes: cloud.len(), value: r.value });
        let done = match &last {
            Some(prev) => {
                let scale = prev.value.max(r.value);
                scale == 0.0 || (r.value - prev.value).abs() <= schedule.rel_change * scale
            }
            None => false,
        };
        last = Some(r);
        if done {
            break;
        }
    }
    let Some(mut result) = last else {
        return Err(Error::Solver {
            reason: format!("no level fits the node budget of {}", schedule.max_nodes),
            best_feasible: None,
        });
    };
    let n = history.len();
    let converged = if n >= 2 {
        let (a, b) = (history[n - 2].value, history[n - 1].value);
        let scale = a.max(b);
        scale == 0.0 || (a - b).abs() <= schedule.rel_change * scale
    } else {
        false
    };
    if history.iter().all(|h| h.nodes == 0) {
        let cert = sample_emptiness(set, schedule.emptiness_samples, opts.seed)?;
        result.converged = cert.is_empty();
    } else {
        result.converged = converged;
    }
    if n >= 2 {
        let (a, b) = (history[n - 2].value, history[n - 1].value);
        result.bracket = Some((a.min(b), a.max(b)));
    }
    result.refinement = history;
    Ok(result)
}
