//! Batch normalization as two cascaded single-column crossbars.
//!
//! Stage 1 takes `(x, E[x], -x, -E[x])` and forms the difference; which pair
//! of inputs it taps depends on the sign of gamma. Stage 2 scales the stage-1
//! output by `|gamma| / sqrt(var + eps)` and adds beta through one of the two
//! bias rails. Every "0" in a weight tuple is an absent cell.

use crate::crossbar::{weight_to_resistance, Cell, CrossbarProgram, DeviceParams};
use crate::error::{Error, Result};
use crate::reference::BnParams;

/// Stage-1 pattern for `gamma >= 0`: `x - E[x]`.
pub const SUBTRACT_MEAN: [f64; 4] = [1.0, 0.0, 0.0, 1.0];
/// Stage-1 pattern for `gamma < 0`: `E[x] - x`.
pub const SUBTRACT_INPUT: [f64; 4] = [0.0, 1.0, 1.0, 0.0];

#[derive(Debug, Clone, PartialEq)]
pub struct BnCircuit {
    /// Weights over `(x, E[x], -x, -E[x])`.
    pub stage1_weights: [f64; 4],
    /// Weights over `(stage-1 output, +V_b, -V_b)`.
    pub stage2_weights: [f64; 3],
    /// `|gamma| / sqrt(var + eps)`.
    pub scale: f64,
    pub stage1: CrossbarProgram,
    pub stage2: CrossbarProgram,
}

impl BnCircuit {
    pub fn memristor_count(&self) -> usize {
        self.stage1.memristor_count() + self.stage2.memristor_count()
    }
}

fn single_column(label: &str, weights: &[f64], dp: &DeviceParams) -> Result<CrossbarProgram> {
    let cells = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w != 0.0)
        .map(|(row, &w)| {
            Ok(Cell {
                row,
                col: 0,
                ohms: weight_to_resistance(w, dp)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CrossbarProgram::new(label, weights.len(), 1, dp.rf(), cells)
}

pub fn compile_bn(p: &BnParams, dp: &DeviceParams) -> Result<BnCircuit> {
    p.validate()?;
    let scale = p.gamma.abs() / (p.var + p.eps).sqrt();
    let stage1_weights = if p.gamma >= 0.0 {
        SUBTRACT_MEAN
    } else {
        SUBTRACT_INPUT
    };
    // A positive shift must come out positive after the inverting TIA, so it
    // is drawn from the -V_b rail.
    let stage2_weights = if p.beta > 0.0 {
        [scale, 0.0, p.beta]
    } else if p.beta < 0.0 {
        [scale, -p.beta, 0.0]
    } else {
        [scale, 0.0, 0.0]
    };
    Ok(BnCircuit {
        stage1: single_column("bn.s1", &stage1_weights, dp)?,
        stage2: single_column("bn.s2", &stage2_weights, dp)?,
        stage1_weights,
        stage2_weights,
        scale,
    })
}

pub fn evaluate_bn_circuit(c: &BnCircuit, x: f64, p: &BnParams, dp: &DeviceParams) -> Result<f64> {
    if c.stage1.rows() != 4 || c.stage2.rows() != 3 {
        return Err(Error::InvalidProgram(
            "batch-norm circuit has unexpected row counts".into(),
        ));
    }
    let v = dp.v_scale;
    let first = c
        .stage1
        .evaluate(&[x * v, p.mean * v, -x * v, -p.mean * v])?[0];
    let second = c.stage2.evaluate(&[first, v, -v])?[0];
    Ok(second / v)
}
