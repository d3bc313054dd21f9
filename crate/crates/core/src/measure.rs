//! Discrete measures and their h-potentials.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{kernel_ratio_unchecked, PoleContext, SpaceTimePoint};

/// Weighted point cloud `sum_i m_i delta_{w_i}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub nodes: Vec<SpaceTimePoint>,
    pub masses: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(nodes: Vec<SpaceTimePoint>, masses: Vec<f64>) -> Result<Self> {
        if nodes.len() != masses.len() {
            return Err(Error::DimensionMismatch { expected: nodes.len(), got: masses.len() });
        }
        if let Some(m) = masses.iter().find(|m| !(**m >= 0.0 && m.is_finite())) {
            return Err(Error::Domain(format!("mass {m} is not a finite nonnegative number")));
        }
        Ok(Self { nodes, masses })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// `P_mu(z) = sum_i m_i K(z, w_i)` with the normalized kernel of `ctx`.
    pub fn potential(&self, z: &SpaceTimePoint, ctx: &PoleContext) -> Result<f64> {
        ctx.check(z)?;
        for w in &self.nodes {
            ctx.check(w)?;
        }
        Ok(self.potential_unchecked(z, ctx))
    }

    pub(crate) fn potential_unchecked(&self, z: &SpaceTimePoint, ctx: &PoleContext) -> f64 {
        self.nodes
            .iter()
            .zip(&self.masses)
            .filter(|(_, m)| **m > 0.0)
            .map(|(w, m)| m * kernel_ratio_unchecked(ctx, &z.x, z.t, &w.x, w.t))
            .sum()
    }

    /// CSV dump with header `t,x1..xN,mass`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.nodes.first().map_or(0, |n| n.dim());
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=dim).map(|i| format!("x{i}")));
        header.push("mass".into());
        wtr.write_record(&header)?;
        for (n, m) in self.nodes.iter().zip(&self.masses) {
            let mut row = vec![n.t.to_string()];
            row.extend(n.x.iter().map(|v| v.to_string()));
            row.push(m.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
