//! Heat kernel, the four h-functions and the normalized kernel ratio.
//!
//! Every evaluation goes through log-space so that the ratios stay finite for
//! large `|x - y|^2 / (t - tau)` and for dimensions up to 8.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Time separations below this are treated as the zero branch of the kernel.
pub const EPS_TIME: f64 = 1e-14;

/// A space-time point `z = (x, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub x: Vec<f64>,
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(x: Vec<f64>, t: f64) -> Self {
        Self { x, t }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of the full space-time vector.
    pub fn norm(&self) -> f64 {
        (self.t * self.t + dot(&self.x, &self.x)).sqrt()
    }

    pub fn with_time(&self, t: f64) -> Self {
        Self { x: self.x.clone(), t }
    }
}

impl fmt::Display for SpaceTimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(x={:?}, t={})", self.x, self.t)
    }
}

/// Which half of space-time the pole context lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HalfSpace {
    /// `t > 0`, pole at `O = (gamma, 0)`.
    Upper,
    /// `t < 0`, pole at infinity.
    Lower,
}

impl HalfSpace {
    pub fn admits(self, t: f64) -> bool {
        match self {
            HalfSpace::Upper => t > 0.0,
            HalfSpace::Lower => t < 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HalfSpace::Upper => "upper",
            HalfSpace::Lower => "lower",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            HalfSpace::Upper => HalfSpace::Lower,
            HalfSpace::Lower => HalfSpace::Upper,
        }
    }
}

/// The symbolic singular boundary point of a context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pole {
    /// `O = (gamma, 0)` of the upper half-space.
    Origin,
    /// The point at infinity of the lower half-space.
    Infinity,
}

/// Dimension, pole parameter and half-space tag shared by all computations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleContext {
    pub dim: usize,
    pub gamma: Vec<f64>,
    pub half_space: HalfSpace,
}

impl PoleContext {
    pub fn new(dim: usize, gamma: Vec<f64>, half_space: HalfSpace) -> Result<Self> {
        let ctx = Self { dim, gamma, half_space };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn upper(gamma: Vec<f64>) -> Result<Self> {
        Self::new(gamma.len(), gamma, HalfSpace::Upper)
    }

    pub fn lower(gamma: Vec<f64>) -> Result<Self> {
        Self::new(gamma.len(), gamma, HalfSpace::Lower)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if self.gamma.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: self.gamma.len() });
        }
        if self.gamma.iter().any(|g| !g.is_finite()) {
            return Err(invalid("gamma", "components must be finite"));
        }
        Ok(())
    }

    /// The same `gamma` in the other half-space (the Appell partner setting).
    pub fn dual(&self) -> Self {
        Self { dim: self.dim, gamma: self.gamma.clone(), half_space: self.half_space.opposite() }
    }

    pub fn pole(&self) -> Pole {
        match self.half_space {
            HalfSpace::Upper => Pole::Origin,
            HalfSpace::Lower => Pole::Infinity,
        }
    }

    /// Checks dimension, finiteness and half-space membership of `z`.
    pub fn check(&self, z: &SpaceTimePoint) -> Result<()> {
        if z.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: z.dim() });
        }
        if !z.is_finite() {
            return Err(Error::Domain(format!("non-finite point {z}")));
        }
        if !self.half_space.admits(z.t) {
            return Err(Error::OutsideHalfSpace { point: z.to_string(), half_space: self.half_space.name() });
        }
        Ok(())
    }

    /// Spatial axis through the pole at time `t`: `gamma` (upper) or `-2 gamma t` (lower).
    pub fn axis_at(&self, t: f64) -> Vec<f64> {
        match self.half_space {
            HalfSpace::Upper => self.gamma.clone(),
            HalfSpace::Lower => self.gamma.iter().map(|g| -2.0 * g * t).collect(),
        }
    }

    /// Squared distance of `z` from the axis through the pole at time `z.t`.
    pub fn axial_dist_sq(&self, z: &SpaceTimePoint) -> f64 {
        match self.half_space {
            HalfSpace::Upper => dist_sq(&z.x, &self.gamma),
            HalfSpace::Lower => z.x.iter().zip(&self.gamma).map(|(x, g)| (x + 2.0 * g * z.t).powi(2)).sum(),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `ln F(z - w)`, or `None` on the zero branch `t - tau < EPS_TIME`.
pub fn ln_heat_kernel(z: &SpaceTimePoint, w: &SpaceTimePoint) -> Result<Option<f64>> {
    if z.dim() != w.dim() {
        return Err(Error::DimensionMismatch { expected: z.dim(), got: w.dim() });
    }
    Ok(ln_heat_kernel_unchecked(&z.x, z.t, &w.x, w.t))
}

#[inline]
pub(crate) fn ln_heat_kernel_unchecked(x: &[f64], t: f64, y: &[f64], tau: f64) -> Option<f64> {
    let s = t - tau;
    if s < EPS_TIME {
        return None;
    }
    let n = x.len() as f64;
    Some(-0.5 * n * (4.0 * PI * s).ln() - dist_sq(x, y) / (4.0 * s))
}

/// Fundamental solution `F(z - w)` of `u_t - Δu = 0`.
pub fn heat_kernel(z: &SpaceTimePoint, w: &SpaceTimePoint) -> Result<f64> {
    Ok(ln_heat_kernel(z, w)?.map_or(0.0, f64::exp))
}

fn require(ctx: &PoleContext, z: &SpaceTimePoint, half: HalfSpace) -> Result<()> {
    if ctx.half_space != half {
        return Err(Error::Domain(format!(
            "function defined on the {} half-space, context is {}",
            half.name(),
            ctx.half_space.name()
        )));
    }
    ctx.check(z)
}

#[inline]
fn ln_h_pole_unchecked(ctx: &PoleContext, x: &[f64], t: f64) -> f64 {
    let n = ctx.dim as f64;
    -0.5 * n * (4.0 * PI * t).ln() - dist_sq(x, &ctx.gamma) / (4.0 * t)
}

#[inline]
fn ln_h_star_unchecked(ctx: &PoleContext, x: &[f64], t: f64) -> f64 {
    let n = ctx.dim as f64;
    0.5 * n * (PI / t).ln() + dist_sq(x, &ctx.gamma) / (4.0 * t)
}

#[inline]
fn ln_h_tilde_unchecked(ctx: &PoleContext, x: &[f64], t: f64) -> f64 {
    dot(x, &ctx.gamma) + dot(&ctx.gamma, &ctx.gamma) * t
}

/// `h(x, t) = F(x - gamma, t)` on the upper half-space.
pub fn h_pole(z: &SpaceTimePoint, ctx: &PoleContext) -> Result<f64> {
    require(ctx, z, HalfSpace::Upper)?;
    Ok(ln_h_pole_unchecked(ctx, &z.x, z.t).exp())
}

/// `h_*(x, t) = (pi/t)^{N/2} exp(|x - gamma|^2 / 4t)`, adjoint fundamental solution.
pub fn h_star(z: &SpaceTimePoint, ctx: &PoleContext) -> Result<f64> {
    require(ctx, z, HalfSpace::Upper)?;
    Ok(ln_h_star_unchecked(ctx, &z.x, z.t).exp())
}

/// `h~(x, t) = exp(<x, gamma> + |gamma|^2 t)` on the lower half-space.
pub fn h_tilde(z: &SpaceTimePoint, ctx: &PoleContext) -> Result<f64> {
    require(ctx, z, HalfSpace::Lower)?;
    Ok(ln_h_tilde_unchecked(ctx, &z.x, z.t).exp())
}

/// `h~_*(y, tau) = exp(-<y, gamma> - |gamma|^2 tau)`.
pub fn h_tilde_star(w: &SpaceTimePoint, ctx: &PoleContext) -> Result<f64> {
    require(ctx, w, HalfSpace::Lower)?;
    Ok((-ln_h_tilde_unchecked(ctx, &w.x, w.t)).exp())
}

/// The positive h-function of the context (`h` upper, `h~` lower).
pub fn h_of(z: &SpaceTimePoint, ctx: &PoleContext) -> Result<f64> {
    match ctx.half_space {
        HalfSpace::Upper => h_pole(z, ctx),
        HalfSpace::Lower => h_tilde(z, ctx),
    }
}

/// `ln` of the normalized kernel, `None` on the zero branch. No domain checks.
#[inline]
pub(crate) fn ln_kernel_ratio_unchecked(ctx: &PoleContext, x: &[f64], t: f64, y: &[f64], tau: f64) -> Option<f64> {
    let lf = ln_heat_kernel_unchecked(x, t, y, tau)?;
    Some(match ctx.half_space {
        HalfSpace::Upper => lf - ln_h_pole_unchecked(ctx, x, t) - ln_h_star_unchecked(ctx, y, tau),
        HalfSpace::Lower => lf - ln_h_tilde_unchecked(ctx, x, t) + ln_h_tilde_unchecked(ctx, y, tau),
    })
}

#[inline]
pub(crate) fn kernel_ratio_unchecked(ctx: &PoleContext, x: &[f64], t: f64, y: &[f64], tau: f64) -> f64 {
    ln_kernel_ratio_unchecked(ctx, x, t, y, tau).map_or(0.0, f64::exp)
}

/// The kernel of the h-potential: `F(z - w) / (h(z) h_*(w))` in the upper
/// half-space, `F(z - w) / (h~(z) h~_*(w))` in the lower one.
pub fn kernel_ratio(z_ref: &SpaceTimePoint, w: &SpaceTimePoint, ctx: &PoleContext) -> Result<f64> {
    ctx.check(z_ref)?;
    ctx.check(w)?;
    Ok(kernel_ratio_unchecked(ctx, &z_ref.x, z_ref.t, &w.x, w.t))
}

/// `ln kernel_ratio`, `None` when the ratio vanishes.
pub fn ln_kernel_ratio(z_ref: &SpaceTimePoint, w: &SpaceTimePoint, ctx: &PoleContext) -> Result<Option<f64>> {
    ctx.check(z_ref)?;
    ctx.check(w)?;
    Ok(ln_kernel_ratio_unchecked(ctx, &z_ref.x, z_ref.t, &w.x, w.t))
}

/// A scalar function on space-time.
pub trait ScalarField: Sync {
    fn eval(&self, z: &SpaceTimePoint) -> Result<f64>;
}

impl<F> ScalarField for F
where
    F: Fn(&SpaceTimePoint) -> Result<f64> + Sync,
{
    fn eval(&self, z: &SpaceTimePoint) -> Result<f64> {
        self(z)
    }
}

/// Adapter for infallible closures.
pub struct Plain<F>(pub F);

impl<F> ScalarField for Plain<F>
where
    F: Fn(&SpaceTimePoint) -> f64 + Sync,
{
    fn eval(&self, z: &SpaceTimePoint) -> Result<f64> {
        Ok((self.0)(z))
    }
}

pub fn plain<F>(f: F) -> Plain<F>
where
    F: Fn(&SpaceTimePoint) -> f64 + Sync,
{
    Plain(f)
}

/// Default finite-difference step `1e-4 (1 + |z|)`.
pub fn default_fd_step(z: &SpaceTimePoint) -> f64 {
    1e-4 * (1.0 + z.norm())
}

/// Central-difference approximation of `f_t - Δf` at `z`, second order in `step`.
///
/// When `domain` is given, the stencil must stay inside that half-space.
pub fn heat_operator_fd(f: &dyn ScalarField, z: &SpaceTimePoint, step: f64, domain: Option<HalfSpace>) -> Result<f64> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(invalid("step", "must be positive and finite"));
    }
    if let Some(half) = domain {
        if !half.admits(z.t - step) || !half.admits(z.t + step) {
            return Err(Error::Domain(format!(
                "stencil of step {step} around {z} leaves the {} half-space",
                half.name()
            )));
        }
    }
    let f0 = f.eval(z)?;
    let fp = f.eval(&z.with_time(z.t + step))?;
    let fm = f.eval(&z.with_time(z.t - step))?;
    let dt = (fp - fm) / (2.0 * step);
    let mut lap = 0.0;
    let mut probe = z.clone();
    for i in 0..z.dim() {
        let xi = z.x[i];
        probe.x[i] = xi + step;
        let a = f.eval(&probe)?;
        probe.x[i] = xi - step;
        let b = f.eval(&probe)?;
        probe.x[i] = xi;
        lap += (a - 2.0 * f0 + b) / (step * step);
    }
    Ok(dt - lap)
}

/// One Richardson refinement of [`heat_operator_fd`]: `(4 D(step/2) - D(step)) / 3`.
pub fn heat_operator_fd_richardson(
    f: &dyn ScalarField,
    z: &SpaceTimePoint,
    step: f64,
    domain: Option<HalfSpace>,
) -> Result<f64> {
    let coarse = heat_operator_fd(f, z, step, domain)?;
    let fine = heat_operator_fd(f, z, 0.5 * step, domain)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// `H f` at `z` with the default step and one Richardson refinement.
pub fn heat_operator(f: &dyn ScalarField, z: &SpaceTimePoint, domain: Option<HalfSpace>) -> Result<f64> {
    heat_operator_fd_richardson(f, z, default_fd_step(z), domain)
}
