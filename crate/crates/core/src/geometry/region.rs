use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::appell::{map_unchecked, AppellDirection};
use crate::error::{invalid, Error, Result};
use crate::kernel::{dist_sq, dot, PoleContext, SpaceTimePoint};

use super::ball::{ball_radius_sq, window};

/// Radius profile `f(t)` of a tube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TubeProfile {
    /// `f(t) = coef * |t|^exponent`.
    Power { coef: f64, exponent: f64 },
    /// Piecewise-linear through `(t, f)` pairs sorted by `t`, constant beyond the ends.
    Table { points: Vec<(f64, f64)> },
}

impl TubeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TubeProfile::Power { coef, exponent } => coef * t.abs().powf(*exponent),
            TubeProfile::Table { points } => interpolate(points, t),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TubeProfile::Power { coef, exponent } => {
                if !(coef.is_finite() && *coef >= 0.0) {
                    return Err(invalid("coef", "must be finite and nonnegative"));
                }
                if !exponent.is_finite() {
                    return Err(invalid("exponent", "must be finite"));
                }
            }
            TubeProfile::Table { points } => {
                if points.is_empty() {
                    return Err(invalid("points", "table must not be empty"));
                }
                for (i, (t, f)) in points.iter().enumerate() {
                    if !(t.is_finite() && f.is_finite() && *f >= 0.0) {
                        return Err(invalid("points", format!("row {i} must be finite with f >= 0")));
                    }
                    if i > 0 && *t <= points[i - 1].0 {
                        return Err(invalid("points", "t values must be strictly increasing"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads a `t,f` table (header optional).
    pub fn from_csv_reader<R: Read>(rdr: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(rdr);
        let mut points = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::Parse(format!("row {}: expected two columns", i + 1)));
            }
            let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
            match parsed {
                (Ok(t), Ok(f)) => points.push((t, f)),
                _ if i == 0 => continue,
                _ => return Err(Error::Parse(format!("row {}: not a number", i + 1))),
            }
        }
        let p = TubeProfile::Table { points };
        p.validate()?;
        Ok(p)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(f)
    }

    /// Writes `t,f` rows sampled at `times`.
    pub fn write_csv<W: std::io::Write>(&self, times: &[f64], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "f"])?;
        for &t in times {
            w.write_record([t.to_string(), self.eval(t).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn interpolate(points: &[(f64, f64)], t: f64) -> f64 {
    let (first, last) = (points[0], points[points.len() - 1]);
    if t <= first.0 {
        return first.1;
    }
    if t >= last.0 {
        return last.1;
    }
    let i = points.partition_point(|p| p.0 <= t);
    let (a, b) = (points[i - 1], points[i]);
    a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
}

/// CSG description of a space-time set, evaluated against a [`PoleContext`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImplicitRegion {
    Everything,
    Nothing,
    /// `t_min <= t <= t_max`, either bound optional.
    TimeSlab {
        #[serde(default)]
        t_min: Option<f64>,
        #[serde(default)]
        t_max: Option<f64>,
    },
    /// `|x - center| < radius` for all times.
    SpaceBall { center: Vec<f64>, radius: f64 },
    /// `|x - c(t)| < f(t)` with `c(t) = center + drift t`, or the pole axis when `center` is omitted.
    Tube {
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default)]
        drift: Option<Vec<f64>>,
        profile: TubeProfile,
    },
    /// `<normal, x> + time_coef t <= offset`.
    HalfSpace {
        normal: Vec<f64>,
        #[serde(default)]
        time_coef: f64,
        offset: f64,
    },
    /// Open h-heat ball of the context centred on the pole axis, optionally cut below a time.
    HeatBall {
        center_time: f64,
        scale: f64,
        #[serde(default)]
        truncate_below: Option<f64>,
    },
    Union { children: Vec<ImplicitRegion> },
    Intersection { children: Vec<ImplicitRegion> },
    Complement { child: Box<ImplicitRegion> },
    /// Image of `child` (described in the other half-space) under the Appell map in `direction`.
    Appell { direction: AppellDirection, child: Box<ImplicitRegion> },
}

impl ImplicitRegion {
    pub fn complement(self) -> Self {
        ImplicitRegion::Complement { child: Box::new(self) }
    }

    pub fn appell(self, direction: AppellDirection) -> Self {
        ImplicitRegion::Appell { direction, child: Box::new(self) }
    }

    /// Tube about the pole axis with profile `coef |t|^exponent`.
    pub fn axis_tube(coef: f64, exponent: f64) -> Self {
        ImplicitRegion::Tube { center: None, drift: None, profile: TubeProfile::Power { coef, exponent } }
    }

    /// Membership of `z`; errors when `z` is not in the context half-space.
    pub fn contains(&self, z: &SpaceTimePoint, ctx: &PoleContext) -> Result<bool> {
        ctx.check(z)?;
        Ok(self.contains_unchecked(&z.x, z.t, ctx))
    }

    pub(crate) fn contains_unchecked(&self, x: &[f64], t: f64, ctx: &PoleContext) -> bool {
        match self {
            ImplicitRegion::Everything => true,
            ImplicitRegion::Nothing => false,
            ImplicitRegion::TimeSlab { t_min, t_max } => {
                t_min.is_none_or(|a| t >= a) && t_max.is_none_or(|b| t <= b)
            }
            ImplicitRegion::SpaceBall { center, radius } => dist_sq(x, center) < radius * radius,
            ImplicitRegion::Tube { center, drift, profile } => {
                let f = profile.eval(t);
                let r2 = match center {
                    Some(c) => {
                        let zero;
                        let d = match drift {
                            Some(d) => d.as_slice(),
                            None => {
                                zero = vec![0.0; c.len()];
                                zero.as_slice()
                            }
                        };
                        x.iter().zip(c).zip(d).map(|((xi, ci), di)| (xi - ci - di * t).powi(2)).sum::<f64>()
                    }
                    None => ctx.axial_dist_sq(&SpaceTimePoint::new(x.to_vec(), t)),
                };
                r2 < f * f
            }
            ImplicitRegion::HalfSpace { normal, time_coef, offset } => dot(normal, x) + time_coef * t <= *offset,
            ImplicitRegion::HeatBall { center_time, scale, truncate_below } => {
                if truncate_below.is_some_and(|c| t < c) {
                    return false;
                }
                let (a, b) = window(ctx.half_space, *center_time, *scale);
                if !(t > a && t < b) {
                    return false;
                }
                let r2 = ctx.axial_dist_sq(&SpaceTimePoint::new(x.to_vec(), t));
                r2 < ball_radius_sq(ctx.half_space, ctx.dim, *center_time, *scale, t).unwrap_or(0.0)
            }
            ImplicitRegion::Union { children } => children.iter().any(|c| c.contains_unchecked(x, t, ctx)),
            ImplicitRegion::Intersection { children } => children.iter().all(|c| c.contains_unchecked(x, t, ctx)),
            ImplicitRegion::Complement { child } => !child.contains_unchecked(x, t, ctx),
            ImplicitRegion::Appell { direction, child } => {
                if !direction.target().admits(t) {
                    return false;
                }
                let pre = map_unchecked(x, t, direction.inverse());
                child.contains_unchecked(&pre.x, pre.t, &ctx.dual())
            }
        }
    }

    /// Structural checks: dimensions, finite parameters, profile shape, Appell orientation.
    pub fn validate(&self, ctx: &PoleContext) -> Result<()> {
        let dim_ok = |v: &Vec<f64>| -> Result<()> {
            if v.len() != ctx.dim {
                return Err(Error::DimensionMismatch { expected: ctx.dim, got: v.len() });
            }
            if v.iter().any(|a| !a.is_finite()) {
                return Err(invalid("vector", "components must be finite"));
            }
            Ok(())
        };
        match self {
            ImplicitRegion::Everything | ImplicitRegion::Nothing => Ok(()),
            ImplicitRegion::TimeSlab { t_min, t_max } => {
                if let (Some(a), Some(b)) = (t_min, t_max) {
                    if a > b {
                        return Err(invalid("t_min", "must not exceed t_max"));
                    }
                }
                Ok(())
            }
            ImplicitRegion::SpaceBall { center, radius } => {
                dim_ok(center)?;
                if !(*radius >= 0.0 && radius.is_finite()) {
                    return Err(invalid("radius", "must be finite and nonnegative"));
                }
                Ok(())
            }
            ImplicitRegion::Tube { center, drift, profile } => {
                if let Some(c) = center {
                    dim_ok(c)?;
                }
                if let Some(d) = drift {
                    dim_ok(d)?;
                    if center.is_none() {
                        return Err(invalid("drift", "requires an explicit center"));
                    }
                }
                profile.validate()
            }
            ImplicitRegion::HalfSpace { normal, time_coef, offset } => {
                dim_ok(normal)?;
                if !(time_coef.is_finite() && offset.is_finite()) {
                    return Err(invalid("offset", "must be finite"));
                }
                Ok(())
            }
            ImplicitRegion::HeatBall { center_time, scale, truncate_below } => {
                if !ctx.half_space.admits(*center_time) {
                    return Err(invalid("center_time", format!("must lie in the {} half-space", ctx.half_space.name())));
                }
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(invalid("scale", "must be positive and finite"));
                }
                if truncate_below.is_some_and(|c| !c.is_finite()) {
                    return Err(invalid("truncate_below", "must be finite"));
                }
                Ok(())
            }
            ImplicitRegion::Union { children } | ImplicitRegion::Intersection { children } => {
                children.iter().try_for_each(|c| c.validate(ctx))
            }
            ImplicitRegion::Complement { child } => child.validate(ctx),
            ImplicitRegion::Appell { direction, child } => {
                if direction.target() != ctx.half_space {
                    return Err(invalid(
                        "direction",
                        format!("maps into the {} half-space, context is {}", direction.target().name(), ctx.half_space.name()),
                    ));
                }
                child.validate(&ctx.dual())
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::appell::appell_map;
    use crate::geometry::HeatBall as Ball;
    use crate::kernel::HalfSpace;

    fn p(x: &[f64], t: f64) -> SpaceTimePoint {
        SpaceTimePoint::new(x.to_vec(), t)
    }

    #[test]
    fn profile_interpolation_and_csv() {
        let prof = TubeProfile::from_csv_reader("t,f\n0,0\n1,2\n3,2\n".as_bytes()).unwrap();
        assert_eq!(prof.eval(-1.0), 0.0);
        assert_eq!(prof.eval(0.5), 1.0);
        assert_eq!(prof.eval(2.0), 2.0);
        assert_eq!(prof.eval(10.0), 2.0);
        assert!(TubeProfile::from_csv_reader("0,1\n0,2\n".as_bytes()).is_err());
        assert!(TubeProfile::from_csv_reader("0,-1\n".as_bytes()).is_err());
        let mut buf = Vec::new();
        prof.write_csv(&[0.0, 0.5], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,f\n0,0\n0.5,1\n");
    }

    #[test]
    fn primitives() {
        let ctx = PoleContext::upper(vec![0.5]).unwrap();
        let tube = ImplicitRegion::axis_tube(1.0, 0.5);
        assert!(tube.contains(&p(&[0.6], 0.25), &ctx).unwrap());
        assert!(!tube.contains(&p(&[1.1], 0.25), &ctx).unwrap());
        assert!(tube.contains(&p(&[0.6], -0.25), &ctx).is_err());
        let slab = ImplicitRegion::TimeSlab { t_min: Some(0.5), t_max: None };
        assert!(slab.contains(&p(&[0.0], 0.5), &ctx).unwrap());
        assert!(!slab.contains(&p(&[0.0], 0.4), &ctx).unwrap());
        let hs = ImplicitRegion::HalfSpace { normal: vec![1.0], time_coef: 1.0, offset: 1.0 };
        assert!(hs.contains(&p(&[0.5], 0.5), &ctx).unwrap());
        assert!(!hs.contains(&p(&[0.6], 0.5), &ctx).unwrap());
        let u = ImplicitRegion::Union { children: vec![ImplicitRegion::Nothing, slab.clone()] };
        assert!(u.contains(&p(&[0.0], 0.9), &ctx).unwrap());
        let i = ImplicitRegion::Intersection { children: vec![ImplicitRegion::Everything, slab.clone()] };
        assert!(!i.contains(&p(&[0.0], 0.1), &ctx).unwrap());
        assert!(slab.complement().contains(&p(&[0.0], 0.1), &ctx).unwrap());
    }

    #[test]
    fn heat_ball_primitive_matches_ball() {
        for half in [HalfSpace::Upper, HalfSpace::Lower] {
            let ctx = PoleContext::new(2, vec![0.3, -0.1], half).unwrap();
            let b = Ball::canonical(&ctx, 1.5).unwrap();
            let reg = ImplicitRegion::HeatBall { center_time: b.center.t, scale: 1.5, truncate_below: None };
            let (a, bb) = b.time_window();
            for k in 1..50 {
                let t = a + (bb - a) * k as f64 / 50.0;
                for j in 0..20 {
                    let mut x = ctx.axis_at(t);
                    x[0] += j as f64 * 0.15;
                    let w = SpaceTimePoint::new(x, t);
                    if (b.ln_ratio(&w).exp() - b.level()).abs() < 1e-10 {
                        continue;
                    }
                    assert_eq!(reg.contains(&w, &ctx).unwrap(), b.contains(&w));
                }
            }
            let q = ImplicitRegion::HeatBall { center_time: b.center.t, scale: 1.5, truncate_below: Some(b.harnack_cut()) };
            let cut = b.harnack_cut();
            assert!(b.radius(cut).unwrap() > 0.0);
            let on_axis = SpaceTimePoint::new(ctx.axis_at(cut), cut);
            assert!(q.contains(&on_axis, &ctx).unwrap());
        }
    }

    #[test]
    fn appell_node() {
        let up = PoleContext::upper(vec![0.2]).unwrap();
        let lo = up.dual();
        let tube = ImplicitRegion::axis_tube(1.0, 0.5);
        let image = tube.clone().appell(AppellDirection::Forward);
        image.validate(&lo).unwrap();
        assert!(image.validate(&up).is_err());
        for k in 1..200 {
            let z = p(&[0.2 + (k as f64 - 100.0) * 0.013], 0.01 * k as f64);
            let w = appell_map(&z, AppellDirection::Forward).unwrap();
            assert_eq!(tube.contains(&z, &up).unwrap(), image.contains(&w, &lo).unwrap());
        }
    }

    #[test]
    fn json_roundtrip() {
        let r = ImplicitRegion::Union {
            children: vec![
                ImplicitRegion::axis_tube(1.0, 0.25).complement(),
                ImplicitRegion::Tube {
                    center: Some(vec![0.0]),
                    drift: Some(vec![1.0]),
                    profile: TubeProfile::Table { points: vec![(0.0, 1.0), (1.0, 2.0)] },
                },
                ImplicitRegion::HeatBall { center_time: 1.0, scale: 2.0, truncate_below: None },
                ImplicitRegion::Nothing.appell(AppellDirection::Backward),
            ],
        };
        let s = r.to_json().unwrap();
        assert!(s.contains("\"kind\": \"complement\""));
        assert_eq!(ImplicitRegion::from_json(&s).unwrap(), r);
        let parsed: ImplicitRegion = serde_json::from_str(r#"{"kind":"time_slab","t_max":0.5}"#).unwrap();
        assert_eq!(parsed, ImplicitRegion::TimeSlab { t_min: None, t_max: Some(0.5) });
    }

    #[test]
    fn validation() {
        let ctx = PoleContext::upper(vec![0.0, 0.0]).unwrap();
        assert!(ImplicitRegion::SpaceBall { center: vec![0.0], radius: 1.0 }.validate(&ctx).is_err());
        assert!(ImplicitRegion::axis_tube(-1.0, 0.5).validate(&ctx).is_err());
        assert!(ImplicitRegion::HeatBall { center_time: -1.0, scale: 1.0, truncate_below: None }.validate(&ctx).is_err());
        assert!(ImplicitRegion::TimeSlab { t_min: Some(2.0), t_max: Some(1.0) }.validate(&ctx).is_err());
    }
}
