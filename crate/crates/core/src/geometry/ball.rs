use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::appell::{appell_map, AppellDirection};
use crate::error::{invalid, Error, Result};
use crate::kernel::{ln_kernel_ratio_unchecked, HalfSpace, PoleContext, SpaceTimePoint};

/// Level `(4 pi c)^{-N/2}` bounding the heat ball of scale `c`.
pub fn level_of_scale(c: f64, dim: usize) -> f64 {
    (4.0 * PI * c).powf(-(dim as f64) / 2.0)
}

/// Inverse of [`level_of_scale`].
pub fn scale_of_level(level: f64, dim: usize) -> f64 {
    level.powf(-2.0 / dim as f64) / (4.0 * PI)
}

/// h-heat ball `{w : K(center, w) > (4 pi c)^{-N/2}}` with center on the pole axis:
/// `(gamma, t0)` in the upper half-space, `(-2 gamma tau0, tau0)` in the lower one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatBall {
    pub ctx: PoleContext,
    pub center: SpaceTimePoint,
    pub scale: f64,
}

impl HeatBall {
    /// Ball with center at time `center_time` on the axis of `ctx`.
    pub fn new(ctx: &PoleContext, center_time: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid("scale", "must be positive and finite"));
        }
        let center = SpaceTimePoint::new(ctx.axis_at(center_time), center_time);
        ctx.check(&center)?;
        Ok(Self { ctx: ctx.clone(), center, scale })
    }

    /// `(gamma, 1)` upper or `(gamma/2, -1/4)` lower.
    pub fn canonical(ctx: &PoleContext, scale: f64) -> Result<Self> {
        let t0 = match ctx.half_space {
            HalfSpace::Upper => 1.0,
            HalfSpace::Lower => -0.25,
        };
        Self::new(ctx, t0, scale)
    }

    pub fn dim(&self) -> usize {
        self.ctx.dim
    }

    pub fn level(&self) -> f64 {
        level_of_scale(self.scale, self.dim())
    }

    pub fn center_time(&self) -> f64 {
        self.center.t
    }

    /// Open time interval on which the ball has nonempty cross-sections.
    pub fn time_window(&self) -> (f64, f64) {
        window(self.ctx.half_space, self.center.t, self.scale)
    }

    /// Squared cross-section radius, `None` outside the closed time window.
    pub fn radius_sq(&self, t: f64) -> Option<f64> {
        ball_radius_sq(self.ctx.half_space, self.dim(), self.center.t, self.scale, t)
    }

    /// Cross-section radius about the pole axis; zero at both ends of the window.
    pub fn radius(&self, t: f64) -> Result<f64> {
        self.radius_sq(t).map(f64::sqrt).ok_or_else(|| {
            let (a, b) = self.time_window();
            Error::Domain(format!("time {t} outside the ball window [{a}, {b}]"))
        })
    }

    /// `ln K(center, w)`, `-inf` off the kernel support and `+inf` at the center.
    pub fn ln_ratio(&self, w: &SpaceTimePoint) -> f64 {
        if w == &self.center {
            return f64::INFINITY;
        }
        ln_kernel_ratio_unchecked(&self.ctx, &self.center.x, self.center.t, &w.x, w.t).unwrap_or(f64::NEG_INFINITY)
    }

    /// Level-set membership; the center is not a member of the open ball.
    pub fn contains(&self, w: &SpaceTimePoint) -> bool {
        if w.dim() != self.dim() || !self.ctx.half_space.admits(w.t) || w == &self.center {
            return false;
        }
        self.ln_ratio(w) > self.level().ln()
    }

    /// Membership through the explicit cross-section inequality.
    pub fn contains_closed_form(&self, w: &SpaceTimePoint) -> bool {
        if w.dim() != self.dim() || !self.ctx.half_space.admits(w.t) {
            return false;
        }
        let (a, b) = self.time_window();
        if !(w.t > a && w.t < b) {
            return false;
        }
        self.ctx.axial_dist_sq(w) < self.radius_sq(w.t).unwrap_or(0.0)
    }

    /// The image ball under the Appell map (same scale, center mapped).
    pub fn appell_image(&self) -> Result<Self> {
        let dir = AppellDirection::from_source(self.ctx.half_space);
        let c = appell_map(&self.center, dir)?;
        Self::new(&self.ctx.dual(), c.t, self.scale)
    }

    /// Time and radius of the widest cross-section.
    pub fn widest_section(&self) -> (f64, f64) {
        let (t0, c) = (self.center.t, self.scale);
        let n = self.dim() as f64;
        match self.ctx.half_space {
            HalfSpace::Lower => (t0 - c / std::f64::consts::E, (2.0 * n * c / std::f64::consts::E).sqrt()),
            HalfSpace::Upper => {
                // Root of (t0 - 2t) ln(4 c t0 t / (t0 - t)) + t0, which is decreasing on the window.
                let (mut a, mut b) = self.time_window();
                let slope = |t: f64| (t0 - 2.0 * t) * (4.0 * c * t0 * t / (t0 - t)).ln() + t0;
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if m <= a || m >= b {
                        break;
                    }
                    if slope(m) > 0.0 {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                let t = 0.5 * (a + b);
                (t, self.radius_sq(t).unwrap_or(0.0).sqrt())
            }
        }
    }

    /// Time above which the Harnack region of the ball is kept.
    pub fn harnack_cut(&self) -> f64 {
        let t0 = self.center.t;
        match self.ctx.half_space {
            HalfSpace::Upper => t0 / (1.0 + 3.0 * t0 * self.scale),
            HalfSpace::Lower => t0 - 0.75 * self.scale,
        }
    }
}

pub(crate) fn window(half: HalfSpace, t0: f64, c: f64) -> (f64, f64) {
    match half {
        HalfSpace::Upper => (t0 / (1.0 + 4.0 * t0 * c), t0),
        HalfSpace::Lower => (t0 - c, t0),
    }
}

/// Squared cross-section radius of the ball of scale `c` centred on the axis at time `t0`.
pub fn ball_radius_sq(half: HalfSpace, dim: usize, t0: f64, c: f64, t: f64) -> Option<f64> {
    let (a, b) = window(half, t0, c);
    if !(t >= a && t <= b) {
        return None;
    }
    if t == a || t == b {
        return Some(0.0);
    }
    let n = dim as f64;
    let v = match half {
        HalfSpace::Upper => {
            let s = t0 - t;
            (2.0 * n / t0) * t * s * (4.0 * c * t0 * t / s).ln()
        }
        HalfSpace::Lower => {
            let d = t0 - t;
            2.0 * n * d * (c / d).ln()
        }
    };
    Some(v.max(0.0))
}

/// How the two levels of a shell are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShellKind {
    /// Between the balls of scale `2^n` and `2^{n-1}`.
    Dyadic { n: i32 },
    /// Between the levels `lambda^{-n}` and `lambda^{-n+1}`.
    General { lambda: f64, n: i32 },
}

/// Closed shell between two concentric heat balls, plus the common center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatShell {
    /// Outer ball.
    pub ball: HeatBall,
    pub inner_scale: f64,
    pub kind: ShellKind,
}

impl HeatShell {
    pub fn dyadic(ctx: &PoleContext, center_time: f64, n: i32) -> Result<Self> {
        let c = 2f64.powi(n);
        Ok(Self { ball: HeatBall::new(ctx, center_time, c)?, inner_scale: 0.5 * c, kind: ShellKind::Dyadic { n } })
    }

    pub fn general(ctx: &PoleContext, center_time: f64, lambda: f64, n: i32) -> Result<Self> {
        if !(lambda > 1.0 && lambda.is_finite()) {
            return Err(invalid("lambda", "must be a finite number greater than 1"));
        }
        let dim = ctx.dim;
        let outer = scale_of_level(lambda.powi(-n), dim);
        let inner = scale_of_level(lambda.powi(1 - n), dim);
        Ok(Self { ball: HeatBall::new(ctx, center_time, outer)?, inner_scale: inner, kind: ShellKind::General { lambda, n } })
    }

    /// Dyadic shell around the canonical center.
    pub fn canonical_dyadic(ctx: &PoleContext, n: i32) -> Result<Self> {
        let t0 = HeatBall::canonical(ctx, 1.0)?.center.t;
        Self::dyadic(ctx, t0, n)
    }

    pub fn canonical_general(ctx: &PoleContext, lambda: f64, n: i32) -> Result<Self> {
        let t0 = HeatBall::canonical(ctx, 1.0)?.center.t;
        Self::general(ctx, t0, lambda, n)
    }

    pub fn ctx(&self) -> &PoleContext {
        &self.ball.ctx
    }

    pub fn outer_level(&self) -> f64 {
        self.ball.level()
    }

    pub fn inner_level(&self) -> f64 {
        level_of_scale(self.inner_scale, self.ball.dim())
    }

    pub fn inner_ball(&self) -> HeatBall {
        HeatBall { ctx: self.ball.ctx.clone(), center: self.ball.center.clone(), scale: self.inner_scale }
    }

    pub fn time_window(&self) -> (f64, f64) {
        self.ball.time_window()
    }

    /// `outer_level <= K(center, w) <= inner_level`, or `w` is the center.
    pub fn contains(&self, w: &SpaceTimePoint) -> bool {
        if w.dim() != self.ball.dim() || !self.ball.ctx.half_space.admits(w.t) {
            return false;
        }
        if w == &self.ball.center {
            return true;
        }
        let l = self.ball.ln_ratio(w);
        l >= self.outer_level().ln() && l <= self.inner_level().ln()
    }

    /// Closed-form membership: inside the outer cross-section and outside the inner one.
    pub fn contains_closed_form(&self, w: &SpaceTimePoint) -> bool {
        if w.dim() != self.ball.dim() || !self.ball.ctx.half_space.admits(w.t) {
            return false;
        }
        if w == &self.ball.center {
            return true;
        }
        let r2 = self.ball.ctx.axial_dist_sq(w);
        let Some(out) = self.ball.radius_sq(w.t) else { return false };
        if r2 > out {
            return false;
        }
        match self.inner_ball().radius_sq(w.t) {
            Some(inn) => r2 >= inn,
            None => true,
        }
    }

    /// Squared radial bounds `(inner, outer)` of the cross-section at time `t`.
    pub fn radial_bounds_sq(&self, t: f64) -> Option<(f64, f64)> {
        let out = self.ball.radius_sq(t)?;
        let inn = self.inner_ball().radius_sq(t).unwrap_or(0.0);
        Some((inn.min(out), out))
    }

    pub fn appell_image(&self) -> Result<Self> {
        Ok(Self { ball: self.ball.appell_image()?, inner_scale: self.inner_scale, kind: self.kind })
    }

    /// Weight of the series term attached to this shell.
    pub fn weight(&self) -> f64 {
        match self.kind {
            ShellKind::Dyadic { n } => 2f64.powf(-(n as f64) * self.ball.dim() as f64 / 2.0),
            ShellKind::General { lambda, n } => lambda.powi(-n),
        }
    }

    pub fn index(&self) -> i32 {
        match self.kind {
            ShellKind::Dyadic { n } | ShellKind::General { n, .. } => n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn radius_endpoints() {
        let ctx = PoleContext::upper(vec![0.2]).unwrap();
        for &(t0, c) in &[(1.0, 1.0), (0.5, 3.0), (2.0, 0.25)] {
            let b = HeatBall::new(&ctx, t0, c).unwrap();
            assert_eq!(b.radius(t0).unwrap(), 0.0);
            assert_eq!(b.radius(t0 / (1.0 + 4.0 * t0 * c)).unwrap(), 0.0);
            assert!(b.radius(t0 * 1.01).is_err());
            assert!(b.radius(0.5 * t0 / (1.0 + 4.0 * t0 * c)).is_err());
        }
        let r2 = ball_radius_sq(HalfSpace::Lower, 1, 0.0, std::f64::consts::E, -1.0).unwrap();
        assert_relative_eq!(r2.sqrt(), 2f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn widest_section_beats_neighbours() {
        for half in [HalfSpace::Upper, HalfSpace::Lower] {
            let ctx = PoleContext::new(2, vec![0.3, -0.2], half).unwrap();
            for c in [0.1, 1.0, 7.0] {
                let b = HeatBall::canonical(&ctx, c).unwrap();
                let (t, r) = b.widest_section();
                let (lo, hi) = b.time_window();
                for k in 1..400 {
                    let s = lo + (hi - lo) * k as f64 / 400.0;
                    assert!(b.radius(s).unwrap() <= r * (1.0 + 1e-12));
                }
                assert!(t > lo && t < hi);
            }
        }
    }

    #[test]
    fn lower_radius_maximum() {
        let ctx = PoleContext::lower(vec![0.5, 0.1]).unwrap();
        let (tau0, c) = (-0.7, 2.5);
        let b = HeatBall::new(&ctx, tau0, c).unwrap();
        let arg = tau0 - c / std::f64::consts::E;
        let best = b.radius(arg).unwrap();
        assert_relative_eq!(best, (2.0 * 2.0 * c / std::f64::consts::E).sqrt(), max_relative = 1e-12);
        for k in 1..1000 {
            let t = tau0 - c * k as f64 / 1000.0;
            assert!(b.radius(t).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn canonical_ball_window() {
        let ctx = PoleContext::upper(vec![0.0]).unwrap();
        let b = HeatBall::canonical(&ctx, 2.0).unwrap();
        assert_eq!(b.time_window(), (1.0 / 9.0, 1.0));
        assert!(!b.contains(&SpaceTimePoint::new(vec![0.0], 0.1)));
        assert!(b.contains(&SpaceTimePoint::new(vec![0.0], 0.5)));
        assert!(!b.contains(&b.center));
        let lo = PoleContext::lower(vec![1.0, -2.0]).unwrap();
        let bl = HeatBall::canonical(&lo, 1.0).unwrap();
        assert_eq!(bl.center, SpaceTimePoint::new(vec![0.5, -1.0], -0.25));
    }

    fn check_agreement(ball: &HeatBall, rng: &mut ChaCha8Rng) -> usize {
        let (a, b) = ball.time_window();
        let rmax = ball.radius_sq((a + b) / 2.0).unwrap().sqrt().max(1.0) * 2.0;
        let mut inside = 0;
        for _ in 0..10_000 {
            let t = rng.random_range(a - 0.2 * (b - a)..b + 0.2 * (b - a));
            if !ball.ctx.half_space.admits(t) {
                continue;
            }
            let axis = ball.ctx.axis_at(t);
            let x: Vec<f64> = axis.iter().map(|g| g + rng.random_range(-rmax..rmax)).collect();
            let w = SpaceTimePoint::new(x, t);
            let l = ball.ln_ratio(&w);
            if l.is_finite() && (l.exp() - ball.level()).abs() < 1e-10 {
                continue;
            }
            let by_ratio = ball.contains(&w);
            assert_eq!(by_ratio, ball.contains_closed_form(&w), "{w}");
            inside += by_ratio as usize;
        }
        inside
    }

    #[test]
    fn level_set_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..4 {
            let gamma: Vec<f64> = (0..n).map(|i| 0.3 - 0.2 * i as f64).collect();
            for half in [HalfSpace::Upper, HalfSpace::Lower] {
                let ctx = PoleContext::new(n, gamma.clone(), half).unwrap();
                for c in [0.3, 1.0, 8.0] {
                    let b = HeatBall::canonical(&ctx, c).unwrap();
                    assert!(check_agreement(&b, &mut rng) > 100);
                    let shell = HeatShell::canonical_dyadic(&ctx, 2).unwrap();
                    for _ in 0..2000 {
                        let (a, bb) = shell.time_window();
                        let t = rng.random_range(a..bb);
                        let r = shell.ball.radius_sq(t).unwrap().sqrt();
                        let axis = ctx.axis_at(t);
                        let x: Vec<f64> = axis.iter().map(|g| g + rng.random_range(-r..r)).collect();
                        let w = SpaceTimePoint::new(x, t);
                        let l = shell.ball.ln_ratio(&w).exp();
                        if (l - shell.outer_level()).abs() < 1e-10 || (l - shell.inner_level()).abs() < 1e-10 {
                            continue;
                        }
                        assert_eq!(shell.contains(&w), shell.contains_closed_form(&w));
                    }
                }
            }
        }
    }

    #[test]
    fn shell_levels_and_center() {
        let ctx = PoleContext::upper(vec![0.0, 0.0]).unwrap();
        let s = HeatShell::canonical_dyadic(&ctx, 3).unwrap();
        assert_relative_eq!(s.inner_level(), (2.0 * PI * 8.0f64).powf(-1.0), max_relative = 1e-14);
        assert!(s.contains(&s.ball.center));
        assert_relative_eq!(s.weight(), 2f64.powi(-3), max_relative = 1e-15);
        let g = HeatShell::canonical_general(&ctx, 4.0, 2).unwrap();
        assert_relative_eq!(g.outer_level(), 1.0 / 16.0, max_relative = 1e-12);
        assert_relative_eq!(g.inner_level(), 1.0 / 4.0, max_relative = 1e-12);
        assert!(HeatShell::canonical_general(&ctx, 1.0, 2).is_err());
    }

    #[test]
    fn appell_image_of_shell_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for half in [HalfSpace::Upper, HalfSpace::Lower] {
            let ctx = PoleContext::new(2, vec![0.4, -0.3], half).unwrap();
            let s = HeatShell::canonical_dyadic(&ctx, 1).unwrap();
            let img = s.appell_image().unwrap();
            let dir = AppellDirection::from_source(half);
            let mut hits = 0;
            for _ in 0..4000 {
                let (a, b) = s.time_window();
                let t = rng.random_range(a..b);
                let r = s.ball.radius_sq(t).unwrap().sqrt();
                let x: Vec<f64> = ctx.axis_at(t).iter().map(|g| g + rng.random_range(-r..r)).collect();
                let w = SpaceTimePoint::new(x, t);
                let l = s.ball.ln_ratio(&w).exp();
                if (l - s.outer_level()).abs() < 1e-9 || (l - s.inner_level()).abs() < 1e-9 {
                    continue;
                }
                let aw = appell_map(&w, dir).unwrap();
                assert_eq!(s.contains(&w), img.contains(&aw));
                hits += s.contains(&w) as usize;
            }
            assert!(hits > 100);
        }
    }
}
