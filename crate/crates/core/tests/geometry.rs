use parcap_core::appell::{appell_map, AppellDirection};
use parcap_core::geometry::*;
use parcap_core::kernel::*;
use proptest::prelude::*;

fn ctx_strategy() -> impl Strategy<Value = PoleContext> {
    (1usize..=3, any::<bool>(), prop::collection::vec(-1.0..1.0f64, 3)).prop_map(|(dim, up, g)| {
        let g = g[..dim].to_vec();
        if up {
            PoleContext::upper(g).unwrap()
        } else {
            PoleContext::lower(g).unwrap()
        }
    })
}

/// A point in the time window of the canonical ball of scale `c`, at radial fraction `f` of the cross-section.
fn point_in_window(ctx: &PoleContext, c: f64, s: f64, f: f64, dir: &[f64]) -> SpaceTimePoint {
    let ball = HeatBall::canonical(ctx, c).unwrap();
    let (a, b) = ball.time_window();
    let t = a + s * (b - a);
    let r = ball.radius(t).unwrap() * f;
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
    let axis = ctx.axis_at(t);
    SpaceTimePoint::new(axis.iter().zip(dir).map(|(p, d)| p + r * d / norm).collect(), t)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn ball_membership_forms_agree(
        ctx in ctx_strategy(),
        c in 0.05..4.0f64,
        s in 0.01..0.99f64,
        f in 0.0..1.6f64,
        dir in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        prop_assume!((f - 1.0).abs() > 1e-6);
        let ball = HeatBall::canonical(&ctx, c).unwrap();
        let w = point_in_window(&ctx, c, s, f, &dir[..ctx.dim]);
        prop_assume!(w != ball.center);
        prop_assert_eq!(ball.contains(&w), ball.contains_closed_form(&w));
        prop_assert_eq!(ball.contains(&w), f < 1.0);
    }

    #[test]
    fn appell_maps_balls_to_balls(
        ctx in ctx_strategy(),
        c in 0.05..4.0f64,
        s in 0.01..0.99f64,
        f in 0.0..1.6f64,
        dir in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        prop_assume!((f - 1.0).abs() > 1e-6);
        let ball = HeatBall::canonical(&ctx, c).unwrap();
        let image = ball.appell_image().unwrap();
        let w = point_in_window(&ctx, c, s, f, &dir[..ctx.dim]);
        prop_assume!(w != ball.center);
        let m = appell_map(&w, AppellDirection::from_source(ctx.half_space)).unwrap();
        prop_assert_eq!(ball.contains(&w), image.contains_closed_form(&m));
    }

    #[test]
    fn shells_lie_between_their_balls(
        ctx in ctx_strategy(),
        n in -3i32..6,
        s in 0.01..0.99f64,
        f in 0.0..1.3f64,
        dir in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        let shell = HeatShell::canonical_dyadic(&ctx, n).unwrap();
        let c = shell.ball.scale;
        let w = point_in_window(&ctx, c, s, f, &dir[..ctx.dim]);
        prop_assume!((f - 1.0).abs() > 1e-6 && w != shell.ball.center);
        let inner = shell.inner_ball();
        let near_inner = inner.radius_sq(w.t).is_some_and(|r2| (ctx.axial_dist_sq(&w) - r2).abs() < 1e-9 * (1.0 + r2));
        prop_assume!(!near_inner);
        prop_assert_eq!(shell.contains(&w), shell.ball.contains(&w) && !inner.contains(&w));
        prop_assert_eq!(shell.contains(&w), shell.contains_closed_form(&w));
    }

    #[test]
    fn level_and_scale_are_inverse(c in 1e-6..1e6f64, dim in 1usize..=3) {
        let back = scale_of_level(level_of_scale(c, dim), dim);
        prop_assert!((back / c - 1.0).abs() < 1e-12);
    }
}

#[test]
fn general_shells_with_lambda_two_to_the_half_dim_rescale_dyadic() {
    for dim in 1..=3usize {
        let ctx = PoleContext::upper(vec![0.0; dim]).unwrap();
        let lambda = 2f64.powf(dim as f64 / 2.0);
        for n in 0..6 {
            let g = HeatShell::canonical_general(&ctx, lambda, n).unwrap();
            let d = HeatShell::canonical_dyadic(&ctx, n).unwrap();
            assert!((4.0 * std::f64::consts::PI * g.ball.scale / d.ball.scale - 1.0).abs() < 1e-12);
            assert!((g.inner_scale / g.ball.scale - 0.5).abs() < 1e-12);
            assert!((g.weight() / d.weight() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn regions_round_trip_through_json() {
    let regions = [
        ImplicitRegion::axis_tube(1.0, 0.5).complement(),
        ImplicitRegion::Union {
            children: vec![
                ImplicitRegion::SpaceBall { center: vec![0.0, 1.0], radius: 0.5 },
                ImplicitRegion::TimeSlab { t_min: Some(0.1), t_max: None },
            ],
        },
        ImplicitRegion::HeatBall { center_time: 1.0, scale: 0.5, truncate_below: Some(0.3) }
            .appell(AppellDirection::Backward),
        ImplicitRegion::HalfSpace { normal: vec![1.0, 0.0], time_coef: -2.0, offset: 0.5 },
    ];
    for r in regions {
        let back = ImplicitRegion::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
    let bad = ImplicitRegion::from_json(r#"{"kind": "tube", "profile": {"kind": "power", "coef": -1.0, "exponent": 0.5}}"#);
    let ctx = PoleContext::upper(vec![0.0]).unwrap();
    assert!(bad.is_err() || bad.unwrap().validate(&ctx).is_err());
}

#[test]
fn tube_profiles_round_trip_through_csv() {
    let p = TubeProfile::Table { points: vec![(0.0, 1.0), (0.5, 0.7), (2.0, 0.2)] };
    let times = [0.0, 0.25, 0.5, 1.0, 2.0];
    let mut buf = Vec::new();
    p.write_csv(&times, &mut buf).unwrap();
    let back = TubeProfile::from_csv_reader(buf.as_slice()).unwrap();
    for t in [0.0, 0.1, 0.3, 0.5, 1.7, 2.0] {
        assert!((back.eval(t) - p.eval(t)).abs() < 1e-12, "{t}");
    }
}
