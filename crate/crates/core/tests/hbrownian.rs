use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use parcap_core::appell::{appell_map, AppellDirection};
use parcap_core::geometry::ImplicitRegion;
use parcap_core::hbrownian::*;
use parcap_core::kernel::*;

/// Conditioned marginal density at time `tau` from `start`, straight from the kernel.
fn density(ctx: &PoleContext, start: &SpaceTimePoint, y: f64, tau: f64) -> f64 {
    let w = SpaceTimePoint::new(vec![y], tau);
    heat_kernel(start, &w).unwrap() * h_of(&w, ctx).unwrap() / h_of(start, ctx).unwrap()
}

/// Kolmogorov-Smirnov statistic `D sqrt(n)` of the samples against the density.
fn ks_statistic(mut xs: Vec<f64>, pdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let gl = GaussLegendre::new(NonZeroUsize::new(10).unwrap());
    let spread = (xs[xs.len() - 1] - xs[0]).max(1e-12);
    let head = quadrature::double_exponential::integrate(&pdf, xs[0] - 20.0 * spread, xs[0], 1e-14).integral;
    let mut cdf = head;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        if i > 0 {
            cdf += gl.integrate(xs[i - 1], x, &pdf);
        }
        d = d.max((cdf - i as f64 / n).abs()).max(((i + 1) as f64 / n - cdf).abs());
    }
    d * n.sqrt()
}

#[test]
fn marginals_pass_ks() {
    let n = 100_000;
    let cases = [
        (PoleContext::upper(vec![0.7]).unwrap(), SpaceTimePoint::new(vec![-0.4], 1.0)),
        (PoleContext::lower(vec![0.7]).unwrap(), SpaceTimePoint::new(vec![-0.4], -0.25)),
    ];
    for (ctx, start) in cases {
        let e = simulate(&start, &GridPolicy { ratio: 0.8, steps: 6 }, n, &ctx, 11).unwrap();
        for k in [1, 6] {
            let tau = e.times[k];
            let xs: Vec<f64> = e.marginal(k).iter().map(|x| x[0]).collect();
            let ks = ks_statistic(xs, |y| density(&ctx, &start, y, tau));
            assert!(ks < 1.628, "{:?} k={k}: {ks}", ctx.half_space);
        }
    }
}

#[test]
fn ks_rejects_a_shifted_law() {
    let ctx = PoleContext::upper(vec![0.0]).unwrap();
    let start = SpaceTimePoint::new(vec![1.0], 1.0);
    let e = simulate(&start, &GridPolicy { ratio: 0.5, steps: 1 }, 100_000, &ctx, 3).unwrap();
    let xs: Vec<f64> = e.marginal(1).iter().map(|x| x[0] + 0.02).collect();
    assert!(ks_statistic(xs, |y| density(&ctx, &start, y, 0.5)) > 1.628);
}

#[test]
fn moments_in_two_dimensions() {
    for ctx in [PoleContext::upper(vec![0.5, -1.0]).unwrap(), PoleContext::lower(vec![0.5, -1.0]).unwrap()] {
        let t0 = if ctx.half_space == HalfSpace::Upper { 2.0 } else { -0.5 };
        let start = SpaceTimePoint::new(vec![0.3, 0.1], t0);
        let e = simulate(&start, &GridPolicy { ratio: 0.7, steps: 4 }, 40_000, &ctx, 5).unwrap();
        let tau = e.times[4];
        let (mean, var) = transition_law(&ctx, &start.x, t0, tau).unwrap();
        let m = e.n_paths() as f64;
        for i in 0..2 {
            let xs: Vec<f64> = e.marginal(4).iter().map(|x| x[i]).collect();
            let mu = xs.iter().sum::<f64>() / m;
            let s2 = xs.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (m - 1.0);
            assert!((mu - mean[i]).abs() < 5.0 * (var / m).sqrt(), "{mu} vs {}", mean[i]);
            assert!((s2 / var - 1.0).abs() < 5.0 * (2.0 / m).sqrt(), "{s2} vs {var}");
        }
    }
}

#[test]
fn upper_paths_map_onto_lower_paths() {
    let gamma = vec![0.3, -0.6];
    let up = PoleContext::upper(gamma.clone()).unwrap();
    let low = PoleContext::lower(gamma).unwrap();
    let start = SpaceTimePoint::new(vec![0.2, 0.4], 1.0);
    let image = appell_map(&start, AppellDirection::Forward).unwrap();
    let grid = GridPolicy { ratio: 0.85, steps: 40 };
    let a = simulate(&start, &grid, 300, &up, 9).unwrap();
    let b = simulate(&image, &grid, 300, &low, 9).unwrap();
    for (pa, pb) in a.positions.iter().zip(&b.positions) {
        for ((x, t), (y, s)) in pa.iter().zip(&a.times).zip(pb.iter().zip(&b.times)) {
            let m = appell_map(&SpaceTimePoint::new(x.clone(), *t), AppellDirection::Forward).unwrap();
            assert!((m.t - s).abs() <= 1e-9 * s.abs());
            for (u, v) in m.x.iter().zip(y) {
                assert!((u - v).abs() <= 1e-7 * (1.0 + v.abs()), "{u} vs {v}");
            }
        }
    }
}

#[test]
fn cluster_estimates_agree_across_the_map() {
    let up = PoleContext::upper(vec![0.0]).unwrap();
    let low = PoleContext::lower(vec![0.0]).unwrap();
    let start = SpaceTimePoint::new(vec![0.0], 1.0);
    let grid = GridPolicy::default();
    let region = ImplicitRegion::axis_tube(1.0, 0.5).complement();
    let a = simulate(&start, &grid, 2000, &up, 4).unwrap();
    let b = simulate(&appell_map(&start, AppellDirection::Forward).unwrap(), &grid, 2000, &low, 4).unwrap();
    let pa = cluster_probability(&a, &region, &default_deltas(HalfSpace::Upper), &ClusterPolicy::default()).unwrap();
    let pb = cluster_probability(
        &b,
        &region.clone().appell(AppellDirection::Forward),
        &default_deltas(HalfSpace::Lower),
        &ClusterPolicy::default(),
    )
    .unwrap();
    let ha: Vec<usize> = pa.levels.iter().map(|l| l.hits).collect();
    let hb: Vec<usize> = pb.levels.iter().map(|l| l.hits).collect();
    assert_eq!(ha, hb);
    assert_eq!(pa.verdict, pb.verdict);
}
