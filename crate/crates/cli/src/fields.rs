use parcap_core::kernel::{h_of, kernel_ratio, HalfSpace, PoleContext, ScalarField, SpaceTimePoint};
use parcap_core::Result;

use crate::config::FieldSpec;

/// A [`FieldSpec`] bound to a context.
pub struct Field {
    spec: FieldSpec,
    ctx: PoleContext,
    pole: Option<SpaceTimePoint>,
}

impl Field {
    pub fn new(spec: &FieldSpec, ctx: &PoleContext) -> Self {
        let pole = match spec {
            FieldSpec::KernelRatio { time, offset } => {
                let mut x = ctx.axis_at(*time);
                if let Some(o) = offset {
                    x.iter_mut().zip(o).for_each(|(a, b)| *a += b);
                }
                Some(SpaceTimePoint::new(x, *time))
            }
            _ => None,
        };
        Self { spec: spec.clone(), ctx: ctx.clone(), pole }
    }

    fn relative(&self, z: &SpaceTimePoint) -> Vec<f64> {
        match self.ctx.half_space {
            HalfSpace::Upper => z.x.iter().zip(&self.ctx.gamma).map(|(a, g)| a - g).collect(),
            HalfSpace::Lower => z.x.clone(),
        }
    }
}

impl ScalarField for Field {
    fn eval(&self, z: &SpaceTimePoint) -> Result<f64> {
        Ok(match &self.spec {
            FieldSpec::Constant { value } => *value,
            FieldSpec::CaloricLinear => (1.0 + self.relative(z)[0]) / h_of(z, &self.ctx)?,
            FieldSpec::CaloricQuadratic => {
                let y = self.relative(z);
                let r2: f64 = y.iter().map(|v| v * v).sum();
                (r2 + 2.0 * y.len() as f64 * z.t + 3.0) / h_of(z, &self.ctx)?
            }
            FieldSpec::TimePolynomial { coefs } => coefs.iter().rev().fold(0.0, |acc, c| acc * z.t + c),
            FieldSpec::KernelRatio { .. } => kernel_ratio(z, self.pole.as_ref().expect("pole set"), &self.ctx)?,
        })
    }
}
