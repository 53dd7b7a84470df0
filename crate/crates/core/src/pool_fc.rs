//! Global average pooling and fully connected layers on crossbars.

use crate::conv_map::{bias_row, PlacedWeight, PlacementPlan};
use crate::crossbar::{weight_to_resistance, Cell, CrossbarProgram, DeviceParams};
use crate::error::{Error, Result};
use crate::reference::Dense;
use crate::tensor::Tensor;

/// Pooling crossbar: `C * N` rows driven by the negated input, one column per
/// channel, each cell at weight `1 / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GapProgram {
    pub program: CrossbarProgram,
    pub spatial: usize,
    pub channels: usize,
}

pub fn compile_gap(spatial: usize, channels: usize, dp: &DeviceParams) -> Result<GapProgram> {
    if spatial == 0 {
        return Err(Error::Geometry(
            "global average pool over zero spatial elements".into(),
        ));
    }
    let ohms = weight_to_resistance(1.0 / spatial as f64, dp)?;
    let cells = (0..channels)
        .flat_map(|c| {
            (0..spatial).map(move |k| Cell {
                row: c * spatial + k,
                col: c,
                ohms,
            })
        })
        .collect();
    Ok(GapProgram {
        program: CrossbarProgram::new("gap", channels * spatial, channels, dp.rf(), cells)?,
        spatial,
        channels,
    })
}

impl GapProgram {
    pub fn encode(&self, input: &Tensor, dp: &DeviceParams) -> Result<Vec<f64>> {
        if input.len() != self.spatial * self.channels {
            return Err(Error::Geometry(format!(
                "pooling expects {} channels of {} elements, got shape {:?}",
                self.channels,
                self.spatial,
                input.shape()
            )));
        }
        Ok(input.data().iter().map(|x| -x * dp.v_scale).collect())
    }

    /// Per-channel spatial means in activation units.
    pub fn run(&self, input: &Tensor, dp: &DeviceParams) -> Result<Vec<f64>> {
        let v = self.encode(input, dp)?;
        Ok(self
            .program
            .evaluate(&v)?
            .into_iter()
            .map(|o| o / dp.v_scale)
            .collect())
    }
}

/// Fully connected crossbar: rows are the inputs, their negations, then the bias pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FcProgram {
    pub program: CrossbarProgram,
    pub plan: PlacementPlan,
    pub in_features: usize,
    pub out_features: usize,
}

pub fn compile_fc(dense: &Dense, dp: &DeviceParams) -> Result<FcProgram> {
    let (out, n) = (dense.out_features(), dense.in_features());
    let w = dense.weight.data();
    if w.iter().chain(&dense.bias).any(|v| !v.is_finite()) {
        return Err(Error::Parameter("non-finite fc parameter".into()));
    }
    let mut entries = Vec::new();
    let mut bias = Vec::new();
    for j in 0..out {
        for k in 0..n {
            let wt = w[j * n + k];
            if wt != 0.0 {
                let row = if wt > 0.0 { n + k } else { k };
                entries.push(PlacedWeight {
                    row,
                    col: j,
                    weight: wt,
                });
            }
        }
        let b = dense.bias[j];
        if b != 0.0 {
            bias.push(PlacedWeight {
                row: bias_row(b, 2 * n),
                col: j,
                weight: b,
            });
        }
    }
    let plan = PlacementPlan {
        entries,
        bias,
        bias_rows: (2 * n, 2 * n + 1),
        region_split: n,
    };
    let program = plan.to_program("fc", 2 * n + 2, out, dp)?;
    Ok(FcProgram {
        program,
        plan,
        in_features: n,
        out_features: out,
    })
}

impl FcProgram {
    pub fn encode(&self, x: &[f64], dp: &DeviceParams) -> Result<Vec<f64>> {
        if x.len() != self.in_features {
            return Err(Error::Geometry(format!(
                "fc expects {} inputs, got {}",
                self.in_features,
                x.len()
            )));
        }
        let n = self.in_features;
        let mut v = vec![0.0; 2 * n + 2];
        for (k, &xk) in x.iter().enumerate() {
            v[k] = xk * dp.v_scale;
            v[n + k] = -xk * dp.v_scale;
        }
        v[2 * n] = dp.v_scale;
        v[2 * n + 1] = -dp.v_scale;
        Ok(v)
    }

    pub fn run(&self, x: &[f64], dp: &DeviceParams) -> Result<Vec<f64>> {
        let v = self.encode(x, dp)?;
        Ok(self
            .program
            .evaluate(&v)?
            .into_iter()
            .map(|o| o / dp.v_scale)
            .collect())
    }
}
