use std::cmp::Ordering;
use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::appell::{map_unchecked, AppellDirection};
use crate::error::{invalid, Error, Result};
use crate::kernel::{HalfSpace, PoleContext, SpaceTimePoint};

use super::ball::HeatShell;
use super::region::ImplicitRegion;

/// Cell counts along time, radius and direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub level: u32,
    pub n_t: usize,
    pub n_r: usize,
    pub n_dir: usize,
}

impl Resolution {
    /// Level 0 is `8 x 3 x 8`; every level halves each spacing.
    pub fn level(level: u32, dim: usize) -> Self {
        let k = 1usize << level;
        let n_dir = match dim {
            1 => 2,
            2 => 8 * k,
            _ => 8 * k * k,
        };
        Self { level, n_t: 8 * k, n_r: 3 * k, n_dir }
    }

    pub fn refine(&self, dim: usize) -> Self {
        Self::level(self.level + 1, dim)
    }
}

/// How shell frames in the upper half-space are sliced in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slicing {
    /// Uniform slices in the lower half-space image, mapped back.
    #[default]
    Appell,
    /// Uniform slices in the native time coordinate.
    Native,
}

/// A simple compact set on which the region is restricted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Frame {
    Shell(HeatShell),
    /// `t_min <= t <= t_max`, `|x - center - drift t| <= radius`.
    Cylinder { t_min: f64, t_max: f64, center: Vec<f64>, drift: Vec<f64>, radius: f64 },
}

/// `frame ∩ region`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactSet {
    pub ctx: PoleContext,
    pub frame: Frame,
    pub region: ImplicitRegion,
}

/// `E = Ω^c ∩ shell`, with `region` describing `Ω^c`.
pub fn shell_complement_intersection(region: &ImplicitRegion, shell: &HeatShell) -> Result<CompactSet> {
    region.validate(shell.ctx())?;
    Ok(CompactSet { ctx: shell.ctx().clone(), frame: Frame::Shell(shell.clone()), region: region.clone() })
}

impl CompactSet {
    pub fn new(ctx: &PoleContext, frame: Frame, region: ImplicitRegion) -> Result<Self> {
        region.validate(ctx)?;
        if let Frame::Cylinder { t_min, t_max, center, drift, radius } = &frame {
            if !(t_min < t_max && ctx.half_space.admits(*t_min) && ctx.half_space.admits(*t_max)) {
                return Err(invalid("t_min", "cylinder time range must be a nonempty interval inside the half-space"));
            }
            if center.len() != ctx.dim || drift.len() != ctx.dim {
                return Err(Error::DimensionMismatch { expected: ctx.dim, got: center.len().min(drift.len()) });
            }
            if !(*radius > 0.0 && radius.is_finite()) {
                return Err(invalid("radius", "must be positive and finite"));
            }
        }
        if let Frame::Shell(s) = &frame {
            if s.ctx() != ctx {
                return Err(invalid("frame", "shell context differs from the set context"));
            }
        }
        Ok(Self { ctx: ctx.clone(), frame, region })
    }

    pub fn frame_contains(&self, z: &SpaceTimePoint) -> bool {
        match &self.frame {
            Frame::Shell(s) => s.contains(z),
            Frame::Cylinder { t_min, t_max, center, drift, radius } => {
                if z.t < *t_min || z.t > *t_max {
                    return false;
                }
                let r2: f64 = z.x.iter().zip(center).zip(drift).map(|((x, c), d)| (x - c - d * z.t).powi(2)).sum();
                r2 <= radius * radius
            }
        }
    }

    pub fn contains(&self, z: &SpaceTimePoint) -> bool {
        z.dim() == self.ctx.dim
            && self.ctx.half_space.admits(z.t)
            && self.frame_contains(z)
            && self.region.contains_unchecked(&z.x, z.t, &self.ctx)
    }

    /// Same frame with a different region.
    pub fn with_region(&self, region: ImplicitRegion) -> Result<Self> {
        Self::new(&self.ctx, self.frame.clone(), region)
    }

    pub fn layout(&self, slicing: Slicing) -> Result<FrameLayout> {
        FrameLayout::new(self, slicing)
    }
}

/// Slicing geometry of a frame: the working half-space where slices are uniform,
/// its axis and radial bounds, and the map back to context coordinates.
#[derive(Debug, Clone)]
pub struct FrameLayout {
    pub ctx: PoleContext,
    pub working: HalfSpace,
    pub t_lo: f64,
    pub t_hi: f64,
    kind: LayoutKind,
}

#[derive(Debug, Clone)]
enum LayoutKind {
    Shell(HeatShell),
    Cylinder { center: Vec<f64>, drift: Vec<f64>, radius: f64 },
}

impl FrameLayout {
    fn new(set: &CompactSet, slicing: Slicing) -> Result<Self> {
        match &set.frame {
            Frame::Shell(shell) => {
                let s = if set.ctx.half_space == HalfSpace::Upper && slicing == Slicing::Appell {
                    shell.appell_image()?
                } else {
                    shell.clone()
                };
                let (t_lo, t_hi) = s.time_window();
                Ok(Self { ctx: set.ctx.clone(), working: s.ctx().half_space, t_lo, t_hi, kind: LayoutKind::Shell(s) })
            }
            Frame::Cylinder { t_min, t_max, center, drift, radius } => Ok(Self {
                ctx: set.ctx.clone(),
                working: set.ctx.half_space,
                t_lo: *t_min,
                t_hi: *t_max,
                kind: LayoutKind::Cylinder { center: center.clone(), drift: drift.clone(), radius: *radius },
            }),
        }
    }

    /// Shrinks the time window to the part where `set` has points, detected on `scan`
    /// uniform plus `scan` top-graded times. Returns `false` when no point was found.
    pub fn trim_to(&mut self, set: &CompactSet, scan: usize) -> Result<bool> {
        let dirs = directions(self.dim(), if self.dim() == 1 { 2 } else { 8 * self.dim() })?;
        let span = self.t_hi - self.t_lo;
        let mut times: Vec<f64> = (0..scan)
            .flat_map(|j| {
                let u = (j as f64 + 0.5) / scan as f64;
                [self.t_lo + span * u, self.t_hi - span * u.powi(4)]
            })
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let hit: Vec<bool> = times
            .par_iter()
            .map(|&t| {
                let Some((r_in, r_out)) = self.radial_bounds(t) else { return false };
                let axis = self.axis(t);
                (0..32).any(|i| {
                    let r = r_in + (r_out - r_in) * (i as f64 + 0.5) / 32.0;
                    dirs.units.iter().any(|u| {
                        let x: Vec<f64> = axis.iter().zip(u).map(|(a, e)| a + r * e).collect();
                        let (z, _) = self.to_ctx(&x, t);
                        set.contains(&z)
                    })
                })
            })
            .collect();
        let (Some(first), Some(last)) = (hit.iter().position(|h| *h), hit.iter().rposition(|h| *h)) else {
            return Ok(false);
        };
        let lo = if first == 0 { self.t_lo } else { times[first - 1] };
        let hi = if last + 1 == times.len() { self.t_hi } else { times[last + 1] };
        self.t_lo = lo.max(self.t_lo);
        self.t_hi = hi.min(self.t_hi);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.ctx.dim
    }

    pub fn is_mapped(&self) -> bool {
        self.working != self.ctx.half_space
    }

    /// Frame axis at working time `t`.
    pub fn axis(&self, t: f64) -> Vec<f64> {
        match &self.kind {
            LayoutKind::Shell(s) => s.ctx().axis_at(t),
            LayoutKind::Cylinder { center, drift, .. } => center.iter().zip(drift).map(|(c, d)| c + d * t).collect(),
        }
    }

    /// Radial bounds `(r_in, r_out)` about the axis at working time `t`.
    pub fn radial_bounds(&self, t: f64) -> Option<(f64, f64)> {
        match &self.kind {
            LayoutKind::Shell(s) => s.radial_bounds_sq(t).map(|(a, b)| (a.sqrt(), b.sqrt())),
            LayoutKind::Cylinder { radius, .. } => (t >= self.t_lo && t <= self.t_hi).then_some((0.0, *radius)),
        }
    }

    /// Largest outer radius over the window (sampled).
    pub fn max_radius(&self) -> f64 {
        (0..=256)
            .filter_map(|k| self.radial_bounds(self.t_lo + (self.t_hi - self.t_lo) * k as f64 / 256.0))
            .map(|b| b.1)
            .fold(0.0, f64::max)
    }

    /// Working coordinates to context coordinates, with the volume Jacobian.
    pub fn to_ctx(&self, x: &[f64], t: f64) -> (SpaceTimePoint, f64) {
        if !self.is_mapped() {
            return (SpaceTimePoint::new(x.to_vec(), t), 1.0);
        }
        let dir = AppellDirection::from_source(self.working);
        let z = map_unchecked(x, t, dir);
        let jac = (2.0 * t.abs()).powi(-(self.dim() as i32)) / (4.0 * t * t);
        (z, jac)
    }

    /// Context coordinates to working coordinates.
    pub fn from_ctx(&self, z: &SpaceTimePoint) -> SpaceTimePoint {
        if !self.is_mapped() {
            return z.clone();
        }
        map_unchecked(&z.x, z.t, AppellDirection::from_source(self.ctx.half_space))
    }

    pub fn dt(&self, res: &Resolution) -> f64 {
        (self.t_hi - self.t_lo) / res.n_t as f64
    }

    pub fn slice_time(&self, res: &Resolution, k: usize) -> f64 {
        self.t_lo + (k as f64 + 0.5) * self.dt(res)
    }

    /// Every cell of the frame at `res`, in working-coordinate slice order.
    pub fn cells(&self, res: &Resolution) -> Result<Vec<Cell>> {
        let dirs = directions(self.dim(), res.n_dir)?;
        let dt = self.dt(res);
        let per_slice: Vec<Vec<Cell>> = (0..res.n_t)
            .into_par_iter()
            .map(|k| {
                let t = self.slice_time(res, k);
                let mut out = Vec::new();
                let Some((r_in, r_out)) = self.radial_bounds(t) else { return out };
                if r_out <= r_in {
                    return out;
                }
                let axis = self.axis(t);
                let dr = (r_out - r_in) / res.n_r as f64;
                for j in 0..res.n_r {
                    let (r1, r2) = (r_in + j as f64 * dr, r_in + (j + 1) as f64 * dr);
                    let r = 0.5 * (r1 + r2);
                    let shell_vol = dirs.solid_angle * (r2.powi(self.dim() as i32) - r1.powi(self.dim() as i32))
                        / self.dim() as f64;
                    for (d, u) in dirs.units.iter().enumerate() {
                        let x: Vec<f64> = axis.iter().zip(u).map(|(a, e)| a + r * e).collect();
                        let (point, jac) = self.to_ctx(&x, t);
                        out.push(Cell { point, volume: dt * shell_vol * jac, slice: k, radial: j, direction: d });
                    }
                }
                out
            })
            .collect();
        Ok(per_slice.into_iter().flatten().collect())
    }
}

/// One space-time cell, reported by its center in context coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub point: SpaceTimePoint,
    pub volume: f64,
    pub slice: usize,
    pub radial: usize,
    pub direction: usize,
}

struct Directions {
    units: Vec<Vec<f64>>,
    /// Measure of the unit sphere attached to each direction.
    solid_angle: f64,
}

fn directions(dim: usize, n_dir: usize) -> Result<Directions> {
    match dim {
        1 => Ok(Directions { units: vec![vec![-1.0], vec![1.0]], solid_angle: 1.0 }),
        2 => {
            let units = (0..n_dir)
                .map(|d| {
                    let th = 2.0 * PI * (d as f64 + 0.5) / n_dir as f64;
                    vec![th.cos(), th.sin()]
                })
                .collect();
            Ok(Directions { units, solid_angle: 2.0 * PI / n_dir as f64 })
        }
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            let units = (0..n_dir)
                .map(|d| {
                    let z = 1.0 - 2.0 * (d as f64 + 0.5) / n_dir as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * d as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect();
            Ok(Directions { units, solid_angle: 4.0 * PI / n_dir as f64 })
        }
        _ => Err(Error::Unsupported(format!("discretization is implemented for N <= 3, got N = {dim}"))),
    }
}

/// Nodes of a compact set at a given resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCloud {
    pub nodes: Vec<SpaceTimePoint>,
    pub cell_volumes: Vec<f64>,
    /// Working-coordinate slice index of every node.
    pub slices: Vec<usize>,
    pub resolution: Resolution,
}

impl NodeCloud {
    pub fn empty(resolution: Resolution) -> Self {
        Self { nodes: Vec::new(), cell_volumes: Vec::new(), slices: Vec::new(), resolution }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_volume(&self) -> f64 {
        self.cell_volumes.iter().sum()
    }
}

pub(crate) fn lex_cmp(a: &SpaceTimePoint, b: &SpaceTimePoint) -> Ordering {
    a.t.total_cmp(&b.t).then_with(|| {
        a.x.iter().zip(&b.x).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    })
}

/// Cell centers of the frame that lie in the set, sorted by `(t, x)`. The shell center is never emitted.
pub fn discretize(set: &CompactSet, res: &Resolution) -> Result<NodeCloud> {
    discretize_with(set, res, Slicing::default())
}

pub fn discretize_with(set: &CompactSet, res: &Resolution, slicing: Slicing) -> Result<NodeCloud> {
    let layout = set.layout(slicing)?;
    discretize_layout(set, &layout, res)
}

/// Discretization on an explicit (possibly trimmed) layout.
pub fn discretize_layout(set: &CompactSet, layout: &FrameLayout, res: &Resolution) -> Result<NodeCloud> {
    if res.n_t == 0 || res.n_r == 0 || res.n_dir == 0 {
        return Err(invalid("resolution", "all cell counts must be positive"));
    }
    let center = match &set.frame {
        Frame::Shell(s) => Some(s.ball.center.clone()),
        Frame::Cylinder { .. } => None,
    };
    let mut cells: Vec<Cell> = layout
        .cells(res)?
        .into_iter()
        .filter(|c| Some(&c.point) != center.as_ref() && c.point.is_finite() && set.contains(&c.point))
        .collect();
    cells.sort_by(|a, b| lex_cmp(&a.point, &b.point));
    let mut cloud = NodeCloud::empty(*res);
    for c in cells {
        cloud.nodes.push(c.point);
        cloud.cell_volumes.push(c.volume);
        cloud.slices.push(c.slice);
    }
    Ok(cloud)
}

/// Outcome of random sampling of the frame for points of the region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmptinessCertificate {
    pub samples: usize,
    pub hits: usize,
    pub seed: u64,
}

impl EmptinessCertificate {
    pub fn is_empty(&self) -> bool {
        self.hits == 0
    }
}

/// Samples `samples` points of the frame (uniform in working time, radius and direction)
/// and counts how many fall in the set.
pub fn sample_emptiness(set: &CompactSet, samples: usize, seed: u64) -> Result<EmptinessCertificate> {
    let layout = set.layout(Slicing::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..samples {
        let z = sample_frame_point(&layout, &mut rng);
        if let Some(z) = z {
            if set.contains(&z) {
                hits += 1;
            }
        }
    }
    Ok(EmptinessCertificate { samples, hits, seed })
}

pub(crate) fn sample_frame_point(layout: &FrameLayout, rng: &mut ChaCha8Rng) -> Option<SpaceTimePoint> {
    let t = rng.random_range(layout.t_lo..layout.t_hi);
    let (r_in, r_out) = layout.radial_bounds(t)?;
    if r_out <= r_in {
        return None;
    }
    let x = sample_annulus(&layout.axis(t), r_in, r_out, rng);
    Some(layout.to_ctx(&x, t).0)
}

/// Uniform point of the annulus `r_in <= |x - axis| <= r_out`.
pub(crate) fn sample_annulus(axis: &[f64], r_in: f64, r_out: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = axis.len();
    let mut u: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    u.iter_mut().for_each(|v| *v /= norm);
    let nf = n as i32;
    let s: f64 = rng.random();
    let r = (r_in.powi(nf) + s * (r_out.powi(nf) - r_in.powi(nf))).powf(1.0 / n as f64);
    axis.iter().zip(&u).map(|(a, e)| a + r * e).collect()
}
