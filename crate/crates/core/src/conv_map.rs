//! Convolution lowering onto crossbars.
//!
//! The padded input plane (`W'_r x W'_c`, flattened row-major, `N` values) drives
//! rows `[0, N)`; its negation drives rows `[N, 2N)`; the last two rows carry
//! `+V_b` and `-V_b`. Each output position owns one column. Weight signs are
//! mapped inverted: a positive weight sits on the negated-input region and a
//! negative weight on the original-input region, so the single inverting TIA
//! per column restores the correct polarity. Zero weights get no cell.

use crate::crossbar::{weight_to_resistance, Cell, CrossbarProgram, DeviceParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output length along one axis: `(W - F + 2P) / S + 1`, which must be integral.
pub fn output_dims(w: usize, f: usize, p: usize, s: usize) -> Result<usize> {
    let describe = || format!("W={w}, F={f}, P={p}, S={s}");
    if w == 0 || f == 0 || s == 0 {
        return Err(Error::Geometry(format!(
            "dimensions and stride must be at least 1 ({})",
            describe()
        )));
    }
    let span = (w + 2 * p).checked_sub(f).ok_or_else(|| {
        Error::Geometry(format!("kernel larger than padded input ({})", describe()))
    })?;
    if span % s != 0 {
        return Err(Error::Geometry(format!(
            "(W - F + 2P) / S is not integral ({})",
            describe()
        )));
    }
    Ok(span / s + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    /// Unpadded input rows.
    pub h: usize,
    /// Unpadded input cols.
    pub w: usize,
    /// Padded input rows `h + 2p`.
    pub w_r: usize,
    /// Padded input cols `w + 2p`.
    pub w_c: usize,
    pub f_r: usize,
    pub f_c: usize,
    pub p: usize,
    pub s: usize,
    pub o_r: usize,
    pub o_c: usize,
}

impl ConvGeometry {
    pub fn new(h: usize, w: usize, f_r: usize, f_c: usize, p: usize, s: usize) -> Result<Self> {
        let o_r = output_dims(h, f_r, p, s)?;
        let o_c = output_dims(w, f_c, p, s)?;
        Ok(ConvGeometry {
            h,
            w,
            w_r: h + 2 * p,
            w_c: w + 2 * p,
            f_r,
            f_c,
            p,
            s,
            o_r,
            o_c,
        })
    }

    /// Flattened padded plane size, the width of one input region.
    pub fn region(&self) -> usize {
        self.w_r * self.w_c
    }

    pub fn outputs(&self) -> usize {
        self.o_r * self.o_c
    }
}

/// Start rows of output `i`'s window in the original and negated regions.
pub fn placement_start(i: usize, geom: &ConvGeometry) -> Result<(usize, usize)> {
    if i >= geom.outputs() {
        return Err(Error::Index {
            index: i,
            limit: geom.outputs(),
        });
    }
    let p_pi = ((i / geom.o_c) * geom.w_c + i % geom.o_c) * geom.s;
    Ok((p_pi, p_pi + geom.w_r * geom.w_c))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedWeight {
    pub row: usize,
    pub col: usize,
    pub weight: f64,
}

/// Signed weights at their crossbar coordinates, before conversion to ohms.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementPlan {
    pub entries: Vec<PlacedWeight>,
    /// Bias cells; these live on the two bias rows.
    pub bias: Vec<PlacedWeight>,
    /// `(+V_b row, -V_b row)`.
    pub bias_rows: (usize, usize),
    /// First row of the negated-input region.
    pub region_split: usize,
}

impl PlacementPlan {
    /// Coordinates of entries that break the sign-region rule.
    pub fn region_violations(&self) -> Vec<(usize, usize)> {
        let n = self.region_split;
        self.entries
            .iter()
            .filter(|e| {
                e.weight == 0.0
                    || (e.weight > 0.0 && !(n..2 * n).contains(&e.row))
                    || (e.weight < 0.0 && e.row >= n)
            })
            .map(|e| (e.row, e.col))
            .collect()
    }

    pub fn to_program(
        &self,
        label: &str,
        rows: usize,
        cols: usize,
        dp: &DeviceParams,
    ) -> Result<CrossbarProgram> {
        let cells = self
            .entries
            .iter()
            .chain(&self.bias)
            .map(|e| {
                Ok(Cell {
                    row: e.row,
                    col: e.col,
                    ohms: weight_to_resistance(e.weight, dp)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        CrossbarProgram::new(label, rows, cols, dp.rf(), cells)
    }
}

/// Row of the bias cell for a signed bias: positive bias rides the `-V_b` row.
pub(crate) fn bias_row(bias: f64, plus_row: usize) -> usize {
    if bias > 0.0 {
        plus_row + 1
    } else {
        plus_row
    }
}

/// Row voltages for a crossbar stage.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInput {
    pub voltages: Vec<f64>,
}

/// Places `c_in` kernel slices (each `f_r * f_c`, row-major) into one output channel's columns.
fn place_channels(slices: &[&[f64]], bias: f64, geom: &ConvGeometry) -> PlacementPlan {
    let c_in = slices.len();
    let n = geom.region();
    let split = c_in * n;
    let plus_row = 2 * split;
    let mut entries = Vec::new();
    let mut bias_cells = Vec::new();
    for i in 0..geom.outputs() {
        let (p_pi, _) = placement_start(i, geom).expect("index within outputs");
        for (ci, slice) in slices.iter().enumerate() {
            let pos_base = ci * n + p_pi;
            let neg_base = split + ci * n + p_pi;
            for r in 0..geom.f_r {
                for c in 0..geom.f_c {
                    let w = slice[r * geom.f_c + c];
                    if w == 0.0 {
                        continue;
                    }
                    let base = if w > 0.0 { neg_base } else { pos_base };
                    entries.push(PlacedWeight {
                        row: base + r * geom.w_c + c,
                        col: i,
                        weight: w,
                    });
                }
            }
        }
        if bias != 0.0 {
            bias_cells.push(PlacedWeight {
                row: bias_row(bias, plus_row),
                col: i,
                weight: bias,
            });
        }
    }
    PlacementPlan {
        entries,
        bias: bias_cells,
        bias_rows: (plus_row, plus_row + 1),
        region_split: split,
    }
}

fn kernel_plane<'a>(kernel: &'a Tensor, geom: &ConvGeometry) -> Result<&'a [f64]> {
    let dims: Vec<usize> = kernel
        .shape()
        .iter()
        .copied()
        .skip_while(|&d| d == 1)
        .collect();
    let plane_ok = match dims.as_slice() {
        [] => geom.f_r == 1 && geom.f_c == 1,
        [n] => (geom.f_r == 1 && geom.f_c == *n) || (geom.f_c == 1 && geom.f_r == *n),
        [r, c] => *r == geom.f_r && *c == geom.f_c,
        _ => false,
    };
    if !plane_ok || kernel.len() != geom.f_r * geom.f_c {
        return Err(Error::Geometry(format!(
            "kernel shape {:?} does not match {}x{} geometry",
            kernel.shape(),
            geom.f_r,
            geom.f_c
        )));
    }
    Ok(kernel.data())
}

/// Single-channel convolution: one column per output position.
pub fn compile_conv(
    kernel: &Tensor,
    bias: f64,
    geom: &ConvGeometry,
    dp: &DeviceParams,
) -> Result<(CrossbarProgram, PlacementPlan)> {
    let plane = kernel_plane(kernel, geom)?;
    let plan = place_channels(&[plane], bias, geom);
    let prog = plan.to_program("conv", 2 * geom.region() + 2, geom.outputs(), dp)?;
    Ok((prog, plan))
}

/// One independent single-channel program per channel. `kernels` is `(C, F_r, F_c)`.
pub fn compile_depthwise(
    kernels: &Tensor,
    biases: &[f64],
    geom: &ConvGeometry,
    dp: &DeviceParams,
) -> Result<Vec<(CrossbarProgram, PlacementPlan)>> {
    let &[c, fr, fc] = kernels.shape() else {
        return Err(Error::Geometry(format!(
            "depthwise kernels must be (C, F_r, F_c), got {:?}",
            kernels.shape()
        )));
    };
    if fr != geom.f_r || fc != geom.f_c || biases.len() != c {
        return Err(Error::Geometry(format!(
            "depthwise kernels {:?} with {} biases do not match {}x{} geometry",
            kernels.shape(),
            biases.len(),
            geom.f_r,
            geom.f_c
        )));
    }
    let k = fr * fc;
    (0..c)
        .map(|ch| {
            let plane = &kernels.data()[ch * k..(ch + 1) * k];
            let plan = place_channels(&[plane], biases[ch], geom);
            let prog = plan.to_program(
                &format!("dw.c{ch}"),
                2 * geom.region() + 2,
                geom.outputs(),
                dp,
            )?;
            Ok((prog, plan))
        })
        .collect()
}

/// Channel-stacked programs, one per output channel. `kernel` is `(C_out, C_in, F_r, F_c)`.
///
/// Rows are the `C_in` original-input blocks, then the `C_in` negated blocks,
/// then the bias pair, so all input channels sum in the same column current.
pub fn compile_multichannel_conv(
    kernel: &Tensor,
    biases: &[f64],
    geom: &ConvGeometry,
    dp: &DeviceParams,
) -> Result<Vec<(CrossbarProgram, PlacementPlan)>> {
    let &[c_out, c_in, fr, fc] = kernel.shape() else {
        return Err(Error::Geometry(format!(
            "conv kernel must be (C_out, C_in, F_r, F_c), got {:?}",
            kernel.shape()
        )));
    };
    if fr != geom.f_r || fc != geom.f_c || biases.len() != c_out {
        return Err(Error::Geometry(format!(
            "conv kernel {:?} with {} biases does not match {}x{} geometry",
            kernel.shape(),
            biases.len(),
            geom.f_r,
            geom.f_c
        )));
    }
    let k = fr * fc;
    let rows = 2 * c_in * geom.region() + 2;
    (0..c_out)
        .map(|co| {
            let slices: Vec<&[f64]> = (0..c_in)
                .map(|ci| {
                    let start = (co * c_in + ci) * k;
                    &kernel.data()[start..start + k]
                })
                .collect();
            let plan = place_channels(&slices, biases[co], geom);
            let prog = plan.to_program(&format!("conv.oc{co}"), rows, geom.outputs(), dp)?;
            Ok((prog, plan))
        })
        .collect()
}

/// Encodes a `(C, H, W)` input for a channel-stacked program (any `C`, including 1).
pub fn encode_channels(
    input: &Tensor,
    geom: &ConvGeometry,
    dp: &DeviceParams,
) -> Result<EncodedInput> {
    let (c, h, w) = input.chw()?;
    if h != geom.h || w != geom.w {
        return Err(Error::Geometry(format!(
            "input plane {h}x{w} does not match geometry {}x{}",
            geom.h, geom.w
        )));
    }
    let n = geom.region();
    let split = c * n;
    let mut v = vec![0.0; 2 * split + 2];
    for ch in 0..c {
        let plane = input.channel(ch);
        for r in 0..h {
            for col in 0..w {
                let idx = ch * n + (r + geom.p) * geom.w_c + (col + geom.p);
                let x = plane[r * w + col] * dp.v_scale;
                v[idx] = x;
                v[split + idx] = -x;
            }
        }
    }
    v[2 * split] = dp.v_scale;
    v[2 * split + 1] = -dp.v_scale;
    Ok(EncodedInput { voltages: v })
}

/// Encodes a single-channel `(H, W)` or `(1, H, W)` input.
pub fn encode_input(
    input: &Tensor,
    geom: &ConvGeometry,
    dp: &DeviceParams,
) -> Result<EncodedInput> {
    let (c, _, _) = input.chw()?;
    if c != 1 {
        return Err(Error::Geometry(format!(
            "single-channel encoding got {c} channels"
        )));
    }
    encode_channels(input, geom, dp)
}

/// Reshapes column voltages to the `(O_r, O_c)` output plane in activation units.
pub fn decode_output(v_out: &[f64], geom: &ConvGeometry, dp: &DeviceParams) -> Result<Tensor> {
    if v_out.len() != geom.outputs() {
        return Err(Error::Input(format!(
            "expected {} output voltages, got {}",
            geom.outputs(),
            v_out.len()
        )));
    }
    Tensor::new(
        vec![geom.o_r, geom.o_c],
        v_out.iter().map(|v| v / dp.v_scale).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dims_examples() {
        assert_eq!(output_dims(4, 3, 0, 1).unwrap(), 2);
        assert_eq!(output_dims(3, 3, 1, 1).unwrap(), 3);
        let err = output_dims(4, 2, 0, 3).unwrap_err().to_string();
        for part in ["W=4", "F=2", "P=0", "S=3"] {
            assert!(err.contains(part), "{err}");
        }
        assert!(output_dims(2, 5, 0, 1).is_err());
        assert!(output_dims(2, 1, 0, 0).is_err());
    }

    #[test]
    fn placement_start_examples() {
        let g = ConvGeometry::new(4, 4, 3, 3, 0, 1).unwrap();
        assert_eq!((g.o_c, g.w_c, g.w_r), (2, 4, 4));
        assert_eq!(placement_start(0, &g).unwrap(), (0, 16));
        assert_eq!(placement_start(1, &g).unwrap(), (1, 17));
        assert_eq!(placement_start(2, &g).unwrap(), (4, 20));
        assert!(matches!(
            placement_start(4, &g),
            Err(Error::Index { index: 4, limit: 4 })
        ));
    }

    #[test]
    fn compile_hand_example() {
        let g = ConvGeometry::new(3, 3, 2, 2, 0, 1).unwrap();
        let k = Tensor::matrix(&[&[1.0, 0.0], &[0.0, -1.0]]).unwrap();
        let (prog, plan) = compile_conv(&k, 0.0, &g, &DeviceParams::default()).unwrap();
        assert_eq!(prog.cols(), 4);
        assert_eq!(prog.rows(), 20);
        assert_eq!(prog.memristor_count(), 8);
        for j in 0..4 {
            let rows: Vec<usize> = prog.column_cells(j).map(|c| c.row).collect();
            assert_eq!(rows.len(), 2);
            assert_eq!(rows.iter().filter(|&&r| r < 9).count(), 1);
            assert_eq!(rows.iter().filter(|&&r| (9..18).contains(&r)).count(), 1);
        }
        assert!(plan.region_violations().is_empty());
    }

    #[test]
    fn zero_kernel_has_no_cells() {
        let g = ConvGeometry::new(3, 3, 2, 2, 0, 1).unwrap();
        let (prog, _) = compile_conv(
            &Tensor::zeros(vec![2, 2]),
            0.0,
            &g,
            &DeviceParams::default(),
        )
        .unwrap();
        assert_eq!(prog.memristor_count(), 0);
    }

    #[test]
    fn pointwise_positive_weight_lands_in_negated_region() {
        let g = ConvGeometry::new(2, 2, 1, 1, 0, 1).unwrap();
        let dp = DeviceParams::default();
        let (prog, _) = compile_conv(&Tensor::vector(vec![2.0]), 0.0, &g, &dp).unwrap();
        assert_eq!(prog.cols(), 4);
        let rows: Vec<usize> = prog.cells().iter().map(|c| c.row).collect();
        assert_eq!(rows, vec![4, 5, 6, 7]);
        assert!(prog
            .cells()
            .iter()
            .all(|c| c.ohms == 1.0 / (2.0 * dp.g_unit)));
    }

    #[test]
    fn bias_uses_opposite_rail() {
        let g = ConvGeometry::new(1, 1, 1, 1, 0, 1).unwrap();
        let dp = DeviceParams::default();
        let one = Tensor::vector(vec![1.0]);
        let (prog, plan) = compile_conv(&one, 0.5, &g, &dp).unwrap();
        assert_eq!(plan.bias_rows, (2, 3));
        assert_eq!(plan.bias[0].row, 3);
        let x = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let v = encode_input(&x, &g, &dp).unwrap();
        let y = decode_output(&prog.evaluate(&v.voltages).unwrap(), &g, &dp).unwrap();
        assert!((y.data()[0] - 2.5).abs() < 1e-12);
        let (_, plan) = compile_conv(&one, -0.5, &g, &dp).unwrap();
        assert_eq!(plan.bias[0].row, 2);
    }

    #[test]
    fn encode_layouts() {
        let dp = DeviceParams::default();
        let v = dp.v_scale;
        let g = ConvGeometry::new(1, 1, 1, 1, 0, 1).unwrap();
        let e = encode_input(&Tensor::matrix(&[&[1.0]]).unwrap(), &g, &dp).unwrap();
        assert_eq!(e.voltages, vec![v, -v, v, -v]);

        let g = ConvGeometry::new(2, 2, 1, 1, 0, 1).unwrap();
        let e = encode_input(
            &Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap(),
            &g,
            &dp,
        )
        .unwrap();
        assert_eq!(&e.voltages[..4], &[v, 2.0 * v, 3.0 * v, 4.0 * v]);
        for k in 0..4 {
            assert_eq!(e.voltages[4 + k], -e.voltages[k]);
        }

        let g = ConvGeometry::new(1, 1, 1, 1, 1, 1).unwrap();
        let e = encode_input(&Tensor::matrix(&[&[1.0]]).unwrap(), &g, &dp).unwrap();
        assert_eq!(e.voltages.len(), 20);
        let region = &e.voltages[..9];
        assert_eq!(region[4], v);
        assert_eq!(region.iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn decode_reshapes_row_major() {
        let dp = DeviceParams {
            v_scale: 0.5,
            ..DeviceParams::default()
        };
        let g = ConvGeometry::new(3, 3, 2, 2, 0, 1).unwrap();
        let t = decode_output(&[0.5, 1.0, 1.5, 2.0], &g, &dp).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(decode_output(&[0.0; 4], &g, &dp)
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 0.0));
        assert!(decode_output(&[0.0; 3], &g, &dp).is_err());
    }

    #[test]
    fn two_channel_pointwise_sums_in_one_column() {
        let dp = DeviceParams::default();
        let g = ConvGeometry::new(1, 1, 1, 1, 0, 1).unwrap();
        let k = Tensor::new(vec![1, 2, 1, 1], vec![1.0, 1.0]).unwrap();
        let progs = compile_multichannel_conv(&k, &[0.0], &g, &dp).unwrap();
        let x = Tensor::new(vec![2, 1, 1], vec![1.0, 2.0]).unwrap();
        let v = encode_channels(&x, &g, &dp).unwrap();
        let y = decode_output(&progs[0].0.evaluate(&v.voltages).unwrap(), &g, &dp).unwrap();
        assert!((y.data()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_second_slice_matches_single_channel_cells() {
        let dp = DeviceParams::default();
        let g = ConvGeometry::new(3, 3, 2, 2, 0, 1).unwrap();
        let single = Tensor::new(vec![1, 1, 2, 2], vec![0.3, -0.1, 0.0, 0.7]).unwrap();
        let double = Tensor::new(
            vec![1, 2, 2, 2],
            vec![0.3, -0.1, 0.0, 0.7, 0.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let a = &compile_multichannel_conv(&single, &[0.0], &g, &dp).unwrap()[0].0;
        let b = &compile_multichannel_conv(&double, &[0.0], &g, &dp).unwrap()[0].0;
        assert_eq!(a.memristor_count(), b.memristor_count());
        // Same cells once the negated region is re-based: only its offset differs.
        let n = g.region();
        let rebase = |row: usize, split: usize| if row >= split { row - split } else { row };
        let ca: Vec<_> = a
            .cells()
            .iter()
            .map(|c| (c.row >= n, rebase(c.row, n), c.col, c.ohms))
            .collect();
        let mut cb: Vec<_> = b
            .cells()
            .iter()
            .map(|c| (c.row >= 2 * n, rebase(c.row, 2 * n), c.col, c.ohms))
            .collect();
        let mut ca = ca;
        ca.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(ca, cb);
    }

    #[test]
    fn depthwise_channels_are_independent_programs() {
        let dp = DeviceParams::default();
        let g = ConvGeometry::new(3, 3, 2, 2, 1, 1).unwrap();
        let k = Tensor::new(
            vec![2, 2, 2],
            vec![0.5, -0.5, 1.0, 0.0, 0.5, -0.5, 1.0, 0.0],
        )
        .unwrap();
        let progs = compile_depthwise(&k, &[0.1, 0.1], &g, &dp).unwrap();
        assert_eq!(progs.len(), 2);
        assert_eq!(progs[0].0.cells(), progs[1].0.cells());
        let single = Tensor::new(vec![2, 2], vec![0.5, -0.5, 1.0, 0.0]).unwrap();
        let (prog, _) = compile_conv(&single, 0.1, &g, &dp).unwrap();
        assert_eq!(prog.cells(), progs[0].0.cells());
    }
}
