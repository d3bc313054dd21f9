//! The Appell map between the upper and lower half-spaces and the transport of
//! fields, measures and potentials across it.

use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::{
    dot, h_pole, h_tilde, heat_kernel, heat_operator_fd, plain, HalfSpace, PoleContext, Pole, ScalarField,
    SpaceTimePoint,
};
use crate::measure::DiscreteMeasure;

/// `Forward` is `A: upper -> lower`, `Backward` is `A^{-1}: lower -> upper`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppellDirection {
    Forward,
    Backward,
}

impl AppellDirection {
    pub fn inverse(self) -> Self {
        match self {
            AppellDirection::Forward => AppellDirection::Backward,
            AppellDirection::Backward => AppellDirection::Forward,
        }
    }

    pub fn source(self) -> HalfSpace {
        match self {
            AppellDirection::Forward => HalfSpace::Upper,
            AppellDirection::Backward => HalfSpace::Lower,
        }
    }

    pub fn target(self) -> HalfSpace {
        self.source().opposite()
    }

    /// The direction whose source is `half`.
    pub fn from_source(half: HalfSpace) -> Self {
        match half {
            HalfSpace::Upper => AppellDirection::Forward,
            HalfSpace::Lower => AppellDirection::Backward,
        }
    }
}

/// `A(x,t) = (x/2t, -1/4t)` or `A^{-1}(x,t) = (-x/2t, -1/4t)`.
pub fn appell_map(z: &SpaceTimePoint, direction: AppellDirection) -> Result<SpaceTimePoint> {
    if z.t == 0.0 {
        return Err(Error::Pole);
    }
    if !z.is_finite() {
        return Err(Error::Domain(format!("non-finite point {z}")));
    }
    if !direction.source().admits(z.t) {
        return Err(Error::OutsideHalfSpace { point: z.to_string(), half_space: direction.source().name() });
    }
    Ok(map_unchecked(&z.x, z.t, direction))
}

#[inline]
pub(crate) fn map_unchecked(x: &[f64], t: f64, direction: AppellDirection) -> SpaceTimePoint {
    let s = match direction {
        AppellDirection::Forward => 0.5 / t,
        AppellDirection::Backward => -0.5 / t,
    };
    SpaceTimePoint { x: x.iter().map(|v| v * s).collect(), t: -0.25 / t }
}

/// The boundary tags swap: `A(O) = inf`, `A^{-1}(inf) = O`.
pub fn map_pole(pole: Pole, direction: AppellDirection) -> Result<Pole> {
    match (pole, direction) {
        (Pole::Origin, AppellDirection::Forward) => Ok(Pole::Infinity),
        (Pole::Infinity, AppellDirection::Backward) => Ok(Pole::Origin),
        _ => Err(Error::Domain(format!("{pole:?} is not in the source of {direction:?}"))),
    }
}

/// Lazily evaluated Appell transform of a field.
pub struct AppellTransformed<U> {
    inner: U,
    direction: AppellDirection,
}

/// `Au(z) = (-pi/t)^{N/2} e^{-|x|^2/4t} u(A^{-1}z)` for `Forward`,
/// `A^{-1}v(z) = F(z) v(Az)` for `Backward`.
pub fn appell_transform<U: ScalarField>(u: U, direction: AppellDirection) -> AppellTransformed<U> {
    AppellTransformed { inner: u, direction }
}

impl<U: ScalarField> ScalarField for AppellTransformed<U> {
    fn eval(&self, z: &SpaceTimePoint) -> Result<f64> {
        let target = self.direction.target();
        if !target.admits(z.t) || !z.is_finite() {
            return Err(Error::OutsideHalfSpace { point: z.to_string(), half_space: target.name() });
        }
        let back = map_unchecked(&z.x, z.t, self.direction.inverse());
        let u = self.inner.eval(&back)?;
        let weight = match self.direction {
            AppellDirection::Forward => {
                let n = z.dim() as f64;
                (0.5 * n * (-PI / z.t).ln() - dot(&z.x, &z.x) / (4.0 * z.t)).exp()
            }
            AppellDirection::Backward => heat_kernel(z, &SpaceTimePoint::new(vec![0.0; z.dim()], 0.0))?,
        };
        Ok(weight * u)
    }
}

/// Pushforward of `mu` by the Appell map; masses are copied unchanged.
pub fn push_measure(mu: &DiscreteMeasure, direction: AppellDirection) -> Result<DiscreteMeasure> {
    let nodes = mu.nodes.iter().map(|w| appell_map(w, direction)).collect::<Result<Vec<_>>>()?;
    Ok(DiscreteMeasure { nodes, masses: mu.masses.clone() })
}

/// Prefactor in the transport of a translated kernel:
/// `A F(. - w) = c(w) F(. - Aw)` (`Forward`) and `A^{-1} F(. - w) = c(w) F(. - A^{-1}w)` (`Backward`).
pub fn kernel_transport_factor(w: &SpaceTimePoint, direction: AppellDirection) -> Result<f64> {
    let wt = appell_map(w, direction)?;
    let n = w.dim() as f64;
    let e = -dot(&wt.x, &wt.x) / (4.0 * wt.t);
    Ok(match direction {
        AppellDirection::Forward => (0.5 * n * (-4.0 * PI * wt.t).ln() + e).exp(),
        AppellDirection::Backward => (0.5 * n * (wt.t / PI).ln() + e).exp(),
    })
}

/// Both sides of the identity relating `H[h u]/h` and `H[h~ u]/h~` across the map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Finite-difference check of the Appell identities for `H`.
///
/// `Forward`: `u` lives on the upper half-space and `point = w` is in the lower one;
/// returns `H[hu]/h` at `A^{-1}w` against `4 tau^2 H[h~ u(A^{-1}.)]/h~` at `w`.
/// `Backward`: `u` lives on the lower half-space and `point = z` is in the upper one;
/// returns `H[h~u]/h~` at `Az` against `4 t^2 H[h u(A.)]/h` at `z`.
pub fn verify_h_identities(
    u: &dyn ScalarField,
    point: &SpaceTimePoint,
    gamma: &[f64],
    step: f64,
    direction: AppellDirection,
) -> Result<IdentityResidual> {
    let upper = PoleContext::upper(gamma.to_vec())?;
    let lower = PoleContext::lower(gamma.to_vec())?;
    let (src_ctx, dst_ctx) = match direction {
        AppellDirection::Forward => (&upper, &lower),
        AppellDirection::Backward => (&lower, &upper),
    };
    dst_ctx.check(point)?;
    let image = appell_map(point, direction.inverse())?;

    let h_src = |z: &SpaceTimePoint| h_for(src_ctx, z);
    let h_dst = |z: &SpaceTimePoint| h_for(dst_ctx, z);

    let hu = |z: &SpaceTimePoint| Ok(h_src(z)? * u.eval(z)?);
    let lhs = heat_operator_fd(&hu, &image, step, Some(src_ctx.half_space))? / h_src(&image)?;

    let hv = |z: &SpaceTimePoint| {
        let back = appell_map(z, direction.inverse())?;
        Ok(h_dst(z)? * u.eval(&back)?)
    };
    let rhs = 4.0 * point.t * point.t * heat_operator_fd(&hv, point, step, Some(dst_ctx.half_space))? / h_dst(point)?;
    Ok(IdentityResidual { lhs, rhs, residual: lhs - rhs })
}

fn h_for(ctx: &PoleContext, z: &SpaceTimePoint) -> Result<f64> {
    crate::kernel::h_of(z, ctx)
}

/// Controls of [`identity_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteOptions {
    /// Random points for the map, transform and transport checks.
    pub points: usize,
    /// Points per direction for the finite-difference identities.
    pub fd_points: usize,
    /// Coarse finite-difference step; the fine one is half of it.
    pub step: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { points: 1000, fd_points: 40, step: 1e-2 }
    }
}

/// Convergence of the `H` identities under step halving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityOrder {
    pub direction: AppellDirection,
    pub step: f64,
    /// Sum of `|lhs - rhs|` over the points at `step`.
    pub residual: f64,
    /// The same at `step / 2`.
    pub half_step_residual: f64,
    /// `log2(residual / half_step_residual)`.
    pub order: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentitySuite {
    pub dim: usize,
    pub gamma: Vec<f64>,
    pub points: usize,
    /// Largest `|A^{-1}A z - z| / (1 + |z|)`.
    pub round_trip: f64,
    /// Largest relative deviation of `A h` from `h~`.
    pub transform: f64,
    /// Largest relative deviation in the kernel transport identity, both directions.
    pub transport: f64,
    pub identities: Vec<IdentityOrder>,
}

fn random_in(rng: &mut ChaCha8Rng, dim: usize, half: HalfSpace) -> SpaceTimePoint {
    let x = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let t: f64 = rng.random_range(0.05..3.0);
    SpaceTimePoint::new(x, if half == HalfSpace::Upper { t } else { -t })
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 { 0.0 } else { (a - b).abs() / scale }
}

/// Randomized check of the map, the transform of `h`, the kernel transport and
/// the `H` identities across the map.
pub fn identity_suite(gamma: &[f64], opts: &SuiteOptions, seed: u64) -> Result<IdentitySuite> {
    let up = PoleContext::upper(gamma.to_vec())?;
    let lo = PoleContext::lower(gamma.to_vec())?;
    up.validate()?;
    if !(opts.step > 0.0 && opts.step < 0.04) {
        return Err(invalid("step", "must lie in (0, 0.04)"));
    }
    let dim = gamma.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut round_trip, mut transform, mut transport) = (0.0f64, 0.0f64, 0.0f64);
    let ah = appell_transform(|z: &SpaceTimePoint| h_pole(z, &up), AppellDirection::Forward);
    for _ in 0..opts.points {
        let z = random_in(&mut rng, dim, HalfSpace::Upper);
        let back = appell_map(&appell_map(&z, AppellDirection::Forward)?, AppellDirection::Backward)?;
        let d = back.x.iter().zip(&z.x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        round_trip = round_trip.max((d + (back.t - z.t).abs()) / (1.0 + z.norm()));

        let w = random_in(&mut rng, dim, HalfSpace::Lower);
        transform = transform.max(rel(ah.eval(&w)?, h_tilde(&w, &lo)?));

        // A F(. - v) = c(v) F(. - Av), evaluated at a lower point later than Av.
        let v = random_in(&mut rng, dim, HalfSpace::Upper);
        let vt = appell_map(&v, AppellDirection::Forward)?;
        let v2 = v.clone();
        let af = appell_transform(move |z: &SpaceTimePoint| heat_kernel(z, &v2), AppellDirection::Forward);
        let mut q = random_in(&mut rng, dim, HalfSpace::Lower);
        q.t = vt.t * rng.random_range(0.05..0.95);
        let c = kernel_transport_factor(&v, AppellDirection::Forward)?;
        transport = transport.max(rel(af.eval(&q)?, c * heat_kernel(&q, &vt)?));

        let s = random_in(&mut rng, dim, HalfSpace::Lower);
        let st = appell_map(&s, AppellDirection::Backward)?;
        let s2 = s.clone();
        let ainv = appell_transform(move |z: &SpaceTimePoint| heat_kernel(z, &s2), AppellDirection::Backward);
        let mut q = random_in(&mut rng, dim, HalfSpace::Upper);
        q.t = st.t + rng.random_range(0.05..2.0);
        let c = kernel_transport_factor(&s, AppellDirection::Backward)?;
        transport = transport.max(rel(ainv.eval(&q)?, c * heat_kernel(&q, &st)?));
    }
    let u = plain(|z: &SpaceTimePoint| z.x[0].sin() + z.t * z.t + z.x[0] * z.t);
    let mut identities = Vec::new();
    for direction in [AppellDirection::Forward, AppellDirection::Backward] {
        let (mut coarse, mut fine) = (0.0, 0.0);
        for _ in 0..opts.fd_points {
            let mut p = random_in(&mut rng, dim, direction.target());
            // keep a margin of several steps from t = 0
            if p.t.abs() < 0.25 {
                p.t = p.t.signum() * (0.25 + p.t.abs());
            }
            coarse += verify_h_identities(&u, &p, gamma, opts.step, direction)?.residual.abs();
            fine += verify_h_identities(&u, &p, gamma, 0.5 * opts.step, direction)?.residual.abs();
        }
        identities.push(IdentityOrder {
            direction,
            step: opts.step,
            residual: coarse,
            half_step_residual: fine,
            order: (coarse / fine).log2(),
        });
    }
    Ok(IdentitySuite { dim, gamma: gamma.to_vec(), points: opts.points, round_trip, transform, transport, identities })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{h_pole, h_star, h_tilde, kernel_ratio, plain};
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(x: &[f64], t: f64) -> SpaceTimePoint {
        SpaceTimePoint::new(x.to_vec(), t)
    }

    fn random_point(rng: &mut ChaCha8Rng, n: usize, half: HalfSpace) -> SpaceTimePoint {
        let x = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t: f64 = rng.random_range(0.05..3.0);
        p_vec(x, if half == HalfSpace::Upper { t } else { -t })
    }

    fn p_vec(x: Vec<f64>, t: f64) -> SpaceTimePoint {
        SpaceTimePoint::new(x, t)
    }

    #[test]
    fn map_values_and_errors() {
        assert_eq!(appell_map(&p(&[0.0], 1.0), AppellDirection::Forward).unwrap(), p(&[0.0], -0.25));
        let g = [0.6, -1.2];
        assert_eq!(appell_map(&p(&g, 1.0), AppellDirection::Forward).unwrap(), p(&[0.3, -0.6], -0.25));
        assert!(matches!(appell_map(&p(&[0.0], 0.0), AppellDirection::Forward), Err(Error::Pole)));
        assert!(matches!(appell_map(&p(&[0.0], -1.0), AppellDirection::Forward), Err(Error::OutsideHalfSpace { .. })));
        assert_eq!(map_pole(Pole::Origin, AppellDirection::Forward).unwrap(), Pole::Infinity);
        assert_eq!(map_pole(Pole::Infinity, AppellDirection::Backward).unwrap(), Pole::Origin);
        assert!(map_pole(Pole::Origin, AppellDirection::Backward).is_err());
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let n = rng.random_range(1..4);
            let z = random_point(&mut rng, n, HalfSpace::Upper);
            let back = appell_map(&appell_map(&z, AppellDirection::Forward).unwrap(), AppellDirection::Backward).unwrap();
            assert!((back.t - z.t).abs() <= 1e-12 * (1.0 + z.t.abs()));
            for (a, b) in back.x.iter().zip(&z.x) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn transform_of_h_is_h_tilde() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..4 {
            let gamma: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let up = PoleContext::upper(gamma.clone()).unwrap();
            let lo = PoleContext::lower(gamma.clone()).unwrap();
            let ah = appell_transform(|z: &SpaceTimePoint| h_pole(z, &up), AppellDirection::Forward);
            for _ in 0..200 {
                let w = random_point(&mut rng, n, HalfSpace::Lower);
                assert_relative_eq!(ah.eval(&w).unwrap(), h_tilde(&w, &lo).unwrap(), max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn inverse_transform_of_one_is_fundamental_solution() {
        let f = appell_transform(plain(|_: &SpaceTimePoint| 1.0), AppellDirection::Backward);
        let z = p(&[0.4, -0.1], 0.7);
        assert_relative_eq!(
            f.eval(&z).unwrap(),
            heat_kernel(&z, &p(&[0.0, 0.0], 0.0)).unwrap(),
            max_relative = 1e-15
        );
        assert!(f.eval(&p(&[0.0, 0.0], -1.0)).is_err());
    }

    #[test]
    fn transform_preserves_caloricity() {
        // x^3 + 6 x t is a heat polynomial.
        let u = plain(|z: &SpaceTimePoint| z.x[0].powi(3) + 6.0 * z.x[0] * z.t);
        let au = appell_transform(u, AppellDirection::Forward);
        let w = p(&[0.3], -0.8);
        let mut prev = f64::INFINITY;
        for step in [4e-3, 2e-3, 1e-3] {
            let r = heat_operator_fd(&au, &w, step, Some(HalfSpace::Lower)).unwrap().abs();
            assert!(r < prev, "step {step}: {r}");
            prev = r;
        }
        assert!(prev < 1e-5);
        let v = plain(|z: &SpaceTimePoint| z.x[0] * z.x[0] + 2.0 * z.t);
        let av = appell_transform(v, AppellDirection::Backward);
        assert!(heat_operator_fd(&av, &p(&[0.2], 0.9), 1e-3, Some(HalfSpace::Upper)).unwrap().abs() < 1e-5);
    }

    #[test]
    fn pole_function_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..4 {
            let gamma: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let up = PoleContext::upper(gamma.clone()).unwrap();
            let lo = PoleContext::lower(gamma.clone()).unwrap();
            for _ in 0..200 {
                let w = random_point(&mut rng, n, HalfSpace::Lower);
                let a = appell_map(&w, AppellDirection::Backward).unwrap();
                let nn = n as f64;
                let y2 = dot(&w.x, &w.x);
                let expect_h = (-PI / w.t).powf(-nn / 2.0) * (y2 / (4.0 * w.t)).exp() * h_tilde(&w, &lo).unwrap();
                assert_relative_eq!(h_pole(&a, &up).unwrap(), expect_h, max_relative = 1e-10);
                let shifted: f64 = w.x.iter().zip(&gamma).map(|(y, g)| (y + 2.0 * w.t * g).powi(2)).sum();
                let expect_star = (-4.0 * PI * w.t).powf(nn / 2.0) * (-shifted / (4.0 * w.t)).exp();
                assert_relative_eq!(h_star(&a, &up).unwrap(), expect_star, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn kernel_transport() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..4 {
            for _ in 0..100 {
                let w = random_point(&mut rng, n, HalfSpace::Upper);
                let wt = appell_map(&w, AppellDirection::Forward).unwrap();
                let w_c = w.clone();
                let af = appell_transform(move |z: &SpaceTimePoint| heat_kernel(z, &w_c), AppellDirection::Forward);
                let c = kernel_transport_factor(&w, AppellDirection::Forward).unwrap();
                // a lower point later than Aw
                let mut z = random_point(&mut rng, n, HalfSpace::Lower);
                z.t = wt.t + (0.0 - wt.t) * rng.random_range(0.05..0.95);
                let lhs = af.eval(&z).unwrap();
                let rhs = c * heat_kernel(&z, &wt).unwrap();
                assert_relative_eq!(lhs, rhs, max_relative = 1e-10);

                let v = random_point(&mut rng, n, HalfSpace::Lower);
                let vt = appell_map(&v, AppellDirection::Backward).unwrap();
                let v_c = v.clone();
                let ainv = appell_transform(move |z: &SpaceTimePoint| heat_kernel(z, &v_c), AppellDirection::Backward);
                let c = kernel_transport_factor(&v, AppellDirection::Backward).unwrap();
                let mut z = random_point(&mut rng, n, HalfSpace::Upper);
                z.t = vt.t + rng.random_range(0.05..2.0);
                assert_relative_eq!(ainv.eval(&z).unwrap(), c * heat_kernel(&z, &vt).unwrap(), max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn ratio_is_appell_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..4 {
            let gamma: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let up = PoleContext::upper(gamma.clone()).unwrap();
            let lo = PoleContext::lower(gamma).unwrap();
            for _ in 0..200 {
                let z = random_point(&mut rng, n, HalfSpace::Lower);
                let mut w = random_point(&mut rng, n, HalfSpace::Lower);
                w.t = z.t - rng.random_range(0.01..2.0);
                let a = kernel_ratio(
                    &appell_map(&z, AppellDirection::Backward).unwrap(),
                    &appell_map(&w, AppellDirection::Backward).unwrap(),
                    &up,
                )
                .unwrap();
                let b = kernel_ratio(&z, &w, &lo).unwrap();
                if b > 1e-250 {
                    assert_relative_eq!(a, b, max_relative = 1e-9);
                }
            }
        }
    }

    #[test]
    fn measure_push_preserves_mass_and_potential() {
        let empty = push_measure(&DiscreteMeasure::empty(), AppellDirection::Forward).unwrap();
        assert!(empty.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gamma = vec![0.4, -0.3];
        let up = PoleContext::upper(gamma.clone()).unwrap();
        let lo = PoleContext::lower(gamma).unwrap();
        let nodes: Vec<_> = (0..40)
            .map(|_| p_vec(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], rng.random_range(0.2..0.6)))
            .collect();
        let masses: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
        let mu = DiscreteMeasure::new(nodes, masses).unwrap();
        let pushed = push_measure(&mu, AppellDirection::Forward).unwrap();
        assert_eq!(pushed.total_mass(), mu.total_mass());
        for _ in 0..100 {
            let z = p_vec(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], rng.random_range(-0.4..-0.05));
            let lhs = mu.potential(&appell_map(&z, AppellDirection::Backward).unwrap(), &up).unwrap();
            let rhs = pushed.potential(&z, &lo).unwrap();
            assert!((lhs - rhs).abs() <= 1e-8 * rhs.max(1e-300), "{lhs} vs {rhs}");
        }
        let bad = DiscreteMeasure::new(vec![p(&[0.0], 0.0)], vec![1.0]).unwrap();
        assert!(matches!(push_measure(&bad, AppellDirection::Forward), Err(Error::Pole)));
    }

    #[test]
    fn suite_meets_its_thresholds() {
        for gamma in [vec![0.4], vec![0.0, 1.0], vec![0.3, -0.2, 0.5]] {
            let s = identity_suite(&gamma, &SuiteOptions { points: 200, ..SuiteOptions::default() }, 4).unwrap();
            assert!(s.round_trip <= 1e-12 && s.transform <= 1e-10 && s.transport <= 1e-10, "{s:?}");
            for o in &s.identities {
                assert!(o.order > 1.8 && o.order < 2.2, "{o:?}");
            }
        }
    }

    #[test]
    fn h_identities() {
        let gamma = [0.5];
        let one = plain(|_: &SpaceTimePoint| 1.0);
        let w = p(&[0.3], -0.7);
        let r = verify_h_identities(&one, &w, &gamma, 1e-3, AppellDirection::Forward).unwrap();
        assert!(r.lhs.abs() < 1e-5 && r.rhs.abs() < 1e-5);

        let t = plain(|z: &SpaceTimePoint| z.t);
        let mut prev = f64::INFINITY;
        for step in [4e-3, 2e-3, 1e-3] {
            let r = verify_h_identities(&t, &w, &gamma, step, AppellDirection::Forward).unwrap();
            assert_relative_eq!(r.lhs, 1.0, epsilon = 1e-3);
            assert!(r.residual.abs() < prev.max(1e-9));
            prev = r.residual.abs();
        }
        let x1 = plain(|z: &SpaceTimePoint| z.x[0]);
        let coarse = verify_h_identities(&x1, &w, &gamma, 2e-3, AppellDirection::Forward).unwrap().residual.abs();
        let fine = verify_h_identities(&x1, &w, &gamma, 1e-3, AppellDirection::Forward).unwrap().residual.abs();
        assert!(fine < 1e-4 && fine <= coarse.max(1e-9));

        let z = p(&[0.2], 0.8);
        let r = verify_h_identities(&t, &z, &gamma, 1e-3, AppellDirection::Backward).unwrap();
        assert!(r.residual.abs() < 1e-4, "{r:?}");
    }
}
