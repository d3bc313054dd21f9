//! Heat balls and shells of the h-kernel, CSG regions and node clouds.

mod ball;
mod discretize;
mod region;

pub use ball::{ball_radius_sq, level_of_scale, scale_of_level, HeatBall, HeatShell, ShellKind};
pub use discretize::{
    discretize, discretize_layout, discretize_with, sample_emptiness, shell_complement_intersection, Cell, CompactSet,
    EmptinessCertificate, Frame, FrameLayout, NodeCloud, Resolution, Slicing,
};
pub(crate) use discretize::{lex_cmp, sample_annulus};
pub use region::{ImplicitRegion, TubeProfile};

use crate::error::{invalid, Result};
use crate::kernel::PoleContext;

/// The heat ball of scale `c` centred on the axis at `center_time`, with its bottom cut off:
/// below `t0 / (1 + 3 t0 c)` in the upper half-space, below `tau0 - 3c/4` in the lower one.
pub fn harnack_region(center_time: f64, c: f64, ctx: &PoleContext) -> Result<ImplicitRegion> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid("c", "must be positive and finite"));
    }
    let ball = HeatBall::new(ctx, center_time, c)?;
    Ok(ImplicitRegion::HeatBall { center_time, scale: c, truncate_below: Some(ball.harnack_cut()) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{HalfSpace, SpaceTimePoint};

    #[test]
    fn harnack_region_inside_ball() {
        for half in [HalfSpace::Upper, HalfSpace::Lower] {
            let ctx = PoleContext::new(1, vec![0.3], half).unwrap();
            let t0 = if half == HalfSpace::Upper { 0.8 } else { -0.6 };
            let q = harnack_region(t0, 1.2, &ctx).unwrap();
            let b = HeatBall::new(&ctx, t0, 1.2).unwrap();
            let (a, bb) = b.time_window();
            let mut kept = 0;
            for k in 1..200 {
                let t = a + (bb - a) * k as f64 / 200.0;
                for j in -20..=20 {
                    let mut x = ctx.axis_at(t);
                    x[0] += 0.1 * j as f64;
                    let w = SpaceTimePoint::new(x, t);
                    if q.contains(&w, &ctx).unwrap() {
                        assert!(b.contains_closed_form(&w));
                        assert!(t >= b.harnack_cut());
                        kept += 1;
                    }
                }
            }
            assert!(kept > 0);
        }
    }

    #[test]
    fn lower_flat_harnack_is_truncated_classical_ball() {
        let ctx = PoleContext::lower(vec![0.0]).unwrap();
        let q = harnack_region(-1.0, 2.0, &ctx).unwrap();
        // classical ball: |x|^2 < 2 d log(c/d) with d = tau0 - tau, kept for tau >= tau0 - 3c/4
        for k in 1..100 {
            let tau = -1.0 - 2.0 * k as f64 / 100.0;
            let d = -1.0 - tau;
            for j in 0..30 {
                let x = 0.1 * j as f64;
                let inside = x * x < 2.0 * d * (2.0 / d).ln() && tau >= -2.5;
                let r2 = 2.0 * d * (2.0 / d).ln();
                if (x * x - r2).abs() < 1e-9 {
                    continue;
                }
                assert_eq!(q.contains(&SpaceTimePoint::new(vec![x], tau), &ctx).unwrap(), inside);
            }
        }
    }
}
