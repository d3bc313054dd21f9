//! Integral functionals over h-heat balls: the functional `phi(c)`, its
//! derivative, the mean-value identity for h-parabolic functions, the gap
//! inequality for h-subparabolic ones and a Harnack-type check.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::HeatBall;
use crate::kernel::{heat_operator_fd_richardson, h_of, HalfSpace, PoleContext, ScalarField, SpaceTimePoint};

/// Quadrature controls: tanh-sinh in time, Gauss-Legendre in the radius and
/// in the polar angle, trapezoidal in azimuth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    /// Relative accuracy requested from the time integral.
    pub time_tol: f64,
    /// Absolute accuracy floor of the time integral.
    pub abs_tol: f64,
    pub radial_order: usize,
    /// Azimuthal points (N = 2, 3); the polar order for N = 3 is half of it.
    pub angular_order: usize,
    /// Finite-difference step for `H`, as a fraction of the distance to the slab edges.
    pub fd_fraction: f64,
    /// Largest accepted ratio between the reported error and the requested one.
    pub error_slack: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { time_tol: 1e-10, abs_tol: 1e-12, radial_order: 20, angular_order: 16, fd_fraction: 1e-3, error_slack: 1e4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub value: f64,
    pub error: f64,
    pub evaluations: u32,
}

struct SphereRule {
    /// Unit vectors with their weights; weights sum to the sphere measure.
    points: Vec<(Vec<f64>, f64)>,
}

impl SphereRule {
    fn new(dim: usize, order: usize) -> Result<Self> {
        let order = order.max(4);
        let points = match dim {
            1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
            2 => (0..order)
                .map(|k| {
                    let th = 2.0 * PI * (k as f64 + 0.5) / order as f64;
                    (vec![th.cos(), th.sin()], 2.0 * PI / order as f64)
                })
                .collect(),
            3 => {
                let gl = GaussLegendre::new(nz(order / 2)?);
                let mut pts = Vec::new();
                for &(z, w) in gl.as_node_weight_pairs() {
                    let s = (1.0 - z * z).sqrt();
                    for k in 0..order {
                        let ph = 2.0 * PI * (k as f64 + 0.5) / order as f64;
                        pts.push((vec![s * ph.cos(), s * ph.sin(), z], w * 2.0 * PI / order as f64));
                    }
                }
                pts
            }
            _ => return Err(Error::Unsupported(format!("ball quadrature in dimension {dim}"))),
        };
        Ok(Self { points })
    }
}

fn nz(n: usize) -> Result<NonZeroUsize> {
    NonZeroUsize::new(n.max(2)).ok_or_else(|| invalid("order", "must be positive"))
}

/// Integrates `g(x, t, r^2)` over the cross-sections `|x - axis(t)| < R(t)` of
/// `ball` for `t` in `(t_lo, t_hi)`; `r` is the distance to the axis.
fn integrate_ball<G>(ball: &HeatBall, t_lo: f64, t_hi: f64, spec: &QuadratureSpec, g: G) -> Result<Quad>
where
    G: Fn(&[f64], f64, f64) -> Result<f64>,
{
    let dim = ball.dim();
    let sphere = SphereRule::new(dim, spec.angular_order)?;
    let radial = GaussLegendre::new(nz(spec.radial_order)?);
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let slice = |t: f64| -> f64 {
        if failure.borrow().is_some() {
            return 0.0;
        }
        let Some(r2max) = ball.radius_sq(t) else { return 0.0 };
        let rmax = r2max.sqrt();
        if rmax <= 0.0 {
            return 0.0;
        }
        let axis = ball.ctx.axis_at(t);
        let mut x = axis.clone();
        let inner = radial.integrate(0.0, rmax, |r| {
            let mut s = 0.0;
            for (u, w) in &sphere.points {
                for i in 0..dim {
                    x[i] = axis[i] + r * u[i];
                }
                match g(&x, t, r * r) {
                    Ok(v) => s += w * v,
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                    }
                }
            }
            s * r.powi(dim as i32 - 1)
        });
        inner
    };
    // t = t_hi - L w^2 flattens the vertex singularity at t_hi.
    let span = t_hi - t_lo;
    let mapped = |w: f64| 2.0 * span * w * slice(t_hi - span * w * w);
    let scale = GaussLegendre::new(nz(32)?).integrate(0.0, 1.0, mapped).abs();
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    let target = (spec.time_tol * scale).max(spec.abs_tol);
    let out = quadrature::double_exponential::integrate(mapped, 0.0, 1.0, target);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    if !out.integral.is_finite() || out.error_estimate > spec.error_slack * target {
        return Err(Error::Quadrature { value: out.integral, error: out.error_estimate });
    }
    Ok(Quad { value: out.integral, error: out.error_estimate, evaluations: out.num_function_evaluations })
}

fn check_ball(ball: &HeatBall) -> Result<()> {
    ball.ctx.validate()?;
    if ball.dim() > 3 {
        return Err(Error::Unsupported(format!("ball quadrature in dimension {}", ball.dim())));
    }
    Ok(())
}

/// `phi(c)`: the weighted integral of `u` over the ball whose derivative in `c`
/// vanishes for h-parabolic `u`.
pub fn phi(u: &dyn ScalarField, ball: &HeatBall, spec: &QuadratureSpec) -> Result<Quad> {
    check_ball(ball)?;
    let n = ball.dim() as i32;
    let (t0, c) = (ball.center_time(), ball.scale);
    let (lo, hi) = ball.time_window();
    let q = integrate_ball(ball, lo, hi, spec, |x, t, r2| {
        let v = u.eval(&SpaceTimePoint::new(x.to_vec(), t))?;
        Ok(match ball.ctx.half_space {
            HalfSpace::Upper => v * r2 / (t.powi(n + 2) * (t - t0).powi(2)),
            HalfSpace::Lower => v * r2 / (t - t0).powi(2),
        })
    })?;
    let k = match ball.ctx.half_space {
        HalfSpace::Upper => t0 * t0 * (4.0 * c).powf(-(n as f64) / 2.0),
        HalfSpace::Lower => c.powf(-(n as f64) / 2.0),
    };
    Ok(scaled(q, k))
}

fn scaled(q: Quad, k: f64) -> Quad {
    Quad { value: k * q.value, error: k.abs() * q.error, evaluations: q.evaluations }
}

/// `H[h u] / h` at `z`, by finite differences with a step kept inside the half-space.
fn h_operator_ratio(u: &dyn ScalarField, ctx: &PoleContext, z: &SpaceTimePoint, fd_fraction: f64, room: f64) -> Result<f64> {
    let hu = |p: &SpaceTimePoint| -> Result<f64> { Ok(h_of(p, ctx)? * u.eval(p)?) };
    let step = (fd_fraction * (1.0 + z.norm())).min(0.25 * room).max(1e-7 * (1.0 + z.norm()));
    Ok(heat_operator_fd_richardson(&hu, z, step, Some(ctx.half_space))? / h_of(z, ctx)?)
}

/// Derivative of [`phi`] in the scale, as an integral of `H[h u] / h`.
pub fn phi_prime(u: &dyn ScalarField, ball: &HeatBall, spec: &QuadratureSpec) -> Result<Quad> {
    check_ball(ball)?;
    let dim = ball.dim();
    let (t0, c) = (ball.center_time(), ball.scale);
    let (lo, hi) = ball.time_window();
    let ctx = &ball.ctx;
    let q = integrate_ball(ball, lo, hi, spec, |x, t, r2| {
        let z = SpaceTimePoint::new(x.to_vec(), t);
        let room = match ctx.half_space {
            HalfSpace::Upper => t,
            HalfSpace::Lower => -t,
        };
        let hr = h_operator_ratio(u, ctx, &z, spec.fd_fraction, room)?;
        let big_r2 = ball.radius_sq(t).unwrap_or(0.0);
        Ok(match ctx.half_space {
            HalfSpace::Upper => hr * (big_r2 - r2) / (t.powi(dim as i32 + 1) * (t - t0)),
            HalfSpace::Lower => hr * (big_r2 - r2) / (t - t0),
        })
    })?;
    Ok(scaled(q, phi_prime_constant(ctx.half_space, dim, t0, c)))
}

fn phi_prime_constant(half: HalfSpace, dim: usize, t0: f64, c: f64) -> f64 {
    let n = dim as f64;
    match half {
        HalfSpace::Upper => n * t0 * 4f64.powf(-(n + 1.0) / 2.0) * c.powf(-(n + 2.0) / 2.0),
        HalfSpace::Lower => n / 2.0 * c.powf(-(n + 2.0) / 2.0),
    }
}

/// Ratio between the `phi'` prefactor written as `N t0 (4c)^{-(N+1)/2}`, resp.
/// `N / (2 c^{(N+1)/2})`, and the one used here.
pub fn phi_prime_reference_ratio(half: HalfSpace, dim: usize, t0: f64, c: f64) -> f64 {
    let n = dim as f64;
    let reference = match half {
        HalfSpace::Upper => n * t0 * (4.0 * c).powf(-(n + 1.0) / 2.0),
        HalfSpace::Lower => n / (2.0 * c.powf((n + 1.0) / 2.0)),
    };
    reference / phi_prime_constant(half, dim, t0, c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanValue {
    pub value: f64,
    pub quadrature_error: f64,
    /// Ratio between the normalization `1/(2^{N+1} (pi c)^{N/2})` (Lower) or
    /// `4 t0^2 / (pi c)^{N/2}` (Upper) and the one used.
    pub reference_constant_ratio: f64,
}

fn mean_value_constant(half: HalfSpace, dim: usize, t0: f64, c: f64) -> f64 {
    let n = dim as f64;
    match half {
        HalfSpace::Upper => 4.0 * t0 * t0 * (PI * c).powf(-n / 2.0),
        HalfSpace::Lower => 1.0 / (2f64.powf(n + 2.0) * (PI * c).powf(n / 2.0)),
    }
}

/// Weighted ball average reproducing `u(center)` for h-parabolic `u`.
pub fn mean_value(u: &dyn ScalarField, ball: &HeatBall, spec: &QuadratureSpec) -> Result<MeanValue> {
    check_ball(ball)?;
    let dim = ball.dim();
    let n = dim as i32;
    let (t0, c) = (ball.center_time(), ball.scale);
    let (lo, hi) = ball.time_window();
    let q = integrate_ball(ball, lo, hi, spec, |x, t, r2| {
        let v = u.eval(&SpaceTimePoint::new(x.to_vec(), t))?;
        Ok(match ball.ctx.half_space {
            HalfSpace::Upper => v * r2 / ((4.0 * t).powi(n + 2) * (t - t0).powi(2)),
            HalfSpace::Lower => v * r2 / (t - t0).powi(2),
        })
    })?;
    let k = mean_value_constant(ball.ctx.half_space, dim, t0, c);
    let reference = match ball.ctx.half_space {
        HalfSpace::Upper => k,
        HalfSpace::Lower => 1.0 / (2f64.powi(n + 1) * (PI * c).powf(dim as f64 / 2.0)),
    };
    Ok(MeanValue { value: k * q.value, quadrature_error: k * q.error, reference_constant_ratio: reference / k })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub c: f64,
    /// `phi(2c) - phi(c)`.
    pub lhs: f64,
    /// `c^{-N/2}` times the integral of `-H[h u] / ((2t)^N h)` (Upper) or
    /// `-H[h u] / h` (Lower) over the ball of scale `c/2`.
    pub rhs: f64,
    /// `lhs / rhs`, the largest constant the inequality admits on this fixture.
    pub admissible_constant: Option<f64>,
    pub precondition_samples: usize,
}

/// Both sides of the gap inequality for `u` with `H[h u] <= 0` on the ball of scale `2c`.
pub fn subparabolic_gap(
    u: &dyn ScalarField,
    ctx: &PoleContext,
    center_time: f64,
    c: f64,
    spec: &QuadratureSpec,
    samples: usize,
    seed: u64,
) -> Result<GapReport> {
    let big = HeatBall::new(ctx, center_time, 2.0 * c)?;
    check_ball(&big)?;
    let room = |t: f64| if ctx.half_space == HalfSpace::Upper { t } else { -t };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for z in sample_ball(&big, samples, &mut rng) {
        let hr = h_operator_ratio(u, ctx, &z, spec.fd_fraction, room(z.t))?;
        if hr > 1e-6 * (1.0 + u.eval(&z)?.abs()) {
            return Err(Error::Precondition { point: z.to_string(), reason: format!("H[h u]/h = {hr:.3e} > 0") });
        }
    }
    let small = HeatBall::new(ctx, center_time, 0.5 * c)?;
    let (lo, hi) = small.time_window();
    let n = ctx.dim as i32;
    let q = integrate_ball(&small, lo, hi, spec, |x, t, _| {
        let z = SpaceTimePoint::new(x.to_vec(), t);
        let hr = h_operator_ratio(u, ctx, &z, spec.fd_fraction, room(t))?;
        Ok(match ctx.half_space {
            HalfSpace::Upper => -hr / (2.0 * t).powi(n),
            HalfSpace::Lower => -hr,
        })
    })?;
    let rhs = q.value * c.powf(-(n as f64) / 2.0);
    let lhs = phi(u, &big, spec)?.value - phi(u, &HeatBall::new(ctx, center_time, c)?, spec)?.value;
    Ok(GapReport {
        c,
        lhs,
        rhs,
        admissible_constant: (rhs > 0.0).then(|| lhs / rhs),
        precondition_samples: samples,
    })
}

/// Uniform-in-time, uniform-in-volume samples of the open ball.
fn sample_ball(ball: &HeatBall, count: usize, rng: &mut ChaCha8Rng) -> Vec<SpaceTimePoint> {
    let (lo, hi) = ball.time_window();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let t = rng.random_range(lo..hi);
        let Some(r2) = ball.radius_sq(t) else { continue };
        let axis = ball.ctx.axis_at(t);
        let x = crate::geometry::sample_annulus(&axis, 0.0, r2.sqrt(), rng);
        let z = SpaceTimePoint::new(x, t);
        if ball.contains_closed_form(&z) {
            out.push(z);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackReport {
    pub c: f64,
    /// Time of the averaging slice.
    pub slice_time: f64,
    pub slice_radius: f64,
    pub average: f64,
    pub infimum: f64,
    pub infimum_point: SpaceTimePoint,
    pub ratio: f64,
}

/// Average of `u` over the slice disc at the bottom of the truncated ball of
/// scale `2c`, the infimum of `u` over the ball of scale `3c/4`, and their ratio.
/// Discs are centred on the pole axis.
pub fn harnack_check(
    u: &dyn ScalarField,
    ctx: &PoleContext,
    center_time: f64,
    c: f64,
    spec: &QuadratureSpec,
    samples: usize,
    seed: u64,
) -> Result<HarnackReport> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid("c", "must be positive and finite"));
    }
    let dim = ctx.dim;
    let n = dim as f64;
    let t0 = center_time;
    let (ts, rho) = match ctx.half_space {
        HalfSpace::Upper => (t0 / (1.0 + 6.0 * c * t0), (3.0 * n * c).sqrt() * t0 / (1.0 + 6.0 * c * t0)),
        HalfSpace::Lower => (t0 - 1.5 * c, 0.5 * (3.0 * n * c).sqrt()),
    };
    let inner = HeatBall::new(ctx, t0, 0.75 * c)?;
    check_ball(&inner)?;
    let sphere = SphereRule::new(dim, spec.angular_order)?;
    let radial = GaussLegendre::new(nz(spec.radial_order)?);
    let axis = ctx.axis_at(ts);
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let integral = radial.integrate(0.0, rho, |r| {
        let mut s = 0.0;
        for (e, w) in &sphere.points {
            let x: Vec<f64> = axis.iter().zip(e).map(|(a, b)| a + r * b).collect();
            match u.eval(&SpaceTimePoint::new(x, ts)) {
                Ok(v) => s += w * v,
                Err(err) => {
                    failure.borrow_mut().get_or_insert(err);
                }
            }
        }
        s * r.powi(dim as i32 - 1)
    });
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let sphere_measure: f64 = sphere.points.iter().map(|(_, w)| w).sum();
    let average = integral / (sphere_measure * rho.powi(dim as i32) / n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = sample_ball(&inner, samples, &mut rng);
    pts.extend(ball_grid(&inner, 48, 12, &sphere));
    let mut inf = f64::INFINITY;
    let mut arg = inner.center.clone();
    for z in pts {
        let v = u.eval(&z)?;
        if v < 0.0 {
            return Err(Error::Precondition { point: z.to_string(), reason: format!("u = {v:.3e} < 0") });
        }
        if v < inf {
            inf = v;
            arg = z;
        }
    }
    Ok(HarnackReport { c, slice_time: ts, slice_radius: rho, average, infimum: inf, infimum_point: arg, ratio: average / inf })
}

/// Structured points of the open ball, including cross-section edges.
fn ball_grid(ball: &HeatBall, n_t: usize, n_r: usize, sphere: &SphereRule) -> Vec<SpaceTimePoint> {
    let (lo, hi) = ball.time_window();
    let mut out = Vec::new();
    for i in 1..n_t {
        let t = lo + (hi - lo) * i as f64 / n_t as f64;
        let Some(r2) = ball.radius_sq(t) else { continue };
        let axis = ball.ctx.axis_at(t);
        for j in 0..=n_r {
            let r = r2.sqrt() * (j as f64 / n_r as f64) * (1.0 - 1e-9);
            for (e, _) in &sphere.points {
                out.push(SpaceTimePoint::new(axis.iter().zip(e).map(|(a, b)| a + r * b).collect(), t));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::plain;

    fn one() -> impl ScalarField {
        plain(|_: &SpaceTimePoint| 1.0)
    }

    #[test]
    fn constant_mean_values() {
        for half in [HalfSpace::Upper, HalfSpace::Lower] {
            for dim in [1, 2] {
                let ctx = PoleContext::new(dim, vec![0.0; dim], half).unwrap();
                let ball = HeatBall::canonical(&ctx, 1.0).unwrap();
                let m = mean_value(&one(), &ball, &QuadratureSpec::default()).unwrap();
                assert!((m.value - 1.0).abs() < 1e-6, "{half:?} N={dim}: {}", m.value);
            }
        }
    }

    #[test]
    fn phi_of_constant_is_scale_free() {
        let ctx = PoleContext::upper(vec![0.3]).unwrap();
        let want = 8.0 * PI.sqrt();
        for c in [0.5, 1.0, 2.0] {
            let ball = HeatBall::new(&ctx, 0.7, c).unwrap();
            let p = phi(&one(), &ball, &QuadratureSpec::default()).unwrap();
            assert!((p.value - want).abs() < 1e-6 * want, "{}", p.value);
        }
    }

    #[test]
    fn reference_ratios() {
        assert!((phi_prime_reference_ratio(HalfSpace::Upper, 2, 1.0, 4.0) - 2.0).abs() < 1e-12);
        let ctx = PoleContext::lower(vec![0.0]).unwrap();
        let m = mean_value(&one(), &HeatBall::canonical(&ctx, 1.0).unwrap(), &QuadratureSpec::default()).unwrap();
        assert!((m.reference_constant_ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gap_precondition_is_enforced() {
        let ctx = PoleContext::upper(vec![0.0]).unwrap();
        let up = plain(|z: &SpaceTimePoint| z.t);
        let e = subparabolic_gap(&up, &ctx, 1.0, 0.5, &QuadratureSpec::default(), 50, 1).unwrap_err();
        assert!(matches!(e, Error::Precondition { .. }));
    }
}
