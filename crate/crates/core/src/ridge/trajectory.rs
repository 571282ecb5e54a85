use std::io::Write;

use crate::error::{Error, Result};
use crate::problem::fmt_f64;

/// Losses above this abort training with a divergence error.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

pub const CSV_HEADER: &str = "step,train_loss,test_loss,param_norm,perp_norm";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub step: u64,
    /// `L_n(θ)` including the factor 1/2.
    pub train_loss: f64,
    /// `L(θ)`, no factor 1/2.
    pub pop_loss: f64,
    pub param_norm: f64,
    /// `‖θ_⊥‖₂`; absent for nonlinear students.
    pub perp_norm: Option<f64>,
}

impl TrajectoryPoint {
    /// Rejects non-finite or exploding losses.
    pub(crate) fn check(&self) -> Result<()> {
        for (quantity, value) in [("train_loss", self.train_loss), ("pop_loss", self.pop_loss)] {
            if !value.is_finite() || value > DIVERGENCE_LIMIT {
                return Err(Error::Divergence {
                    step: self.step,
                    quantity,
                    value,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    /// `L_n` at every step `0..=max_steps`, kept when the engine computes it anyway.
    pub step_train_loss: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn steps(&self) -> impl Iterator<Item = u64> + '_ {
        self.points.iter().map(|p| p.step)
    }

    pub fn last(&self) -> Option<&TrajectoryPoint> {
        self.points.last()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for p in &self.points {
            let perp = p.perp_norm.map(fmt_f64).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{}",
                p.step,
                fmt_f64(p.train_loss),
                fmt_f64(p.pop_loss),
                fmt_f64(p.param_norm),
                perp
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}
