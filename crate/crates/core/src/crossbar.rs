//! Programmed memristor crossbar with per-column trans-impedance readout.
//!
//! A column output is `V_j = -R_f * sum_i V_i / R_ij` over the cells present in
//! column `j`. Absent cells carry no current, which is how zero weights are
//! realized.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Device-level constants shared by every mapper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Smallest programmable resistance, ohms.
    pub r_min: f64,
    /// Largest programmable resistance, ohms.
    pub r_max: f64,
    /// Conductance per unit of logical weight, siemens.
    pub g_unit: f64,
    /// Input voltage per unit of activation, volts.
    pub v_scale: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        DeviceParams {
            r_min: 1e-9,
            r_max: 1e12,
            g_unit: 1.0,
            v_scale: 2.5e-3,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.r_min > 0.0
            && self.r_min <= self.r_max
            && self.g_unit > 0.0
            && self.v_scale > 0.0
            && [self.r_min, self.r_max, self.g_unit, self.v_scale]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!(
                "invalid device parameters {self:?}"
            )))
        }
    }

    /// TIA feedback resistance that makes `R_f / R` equal the stored weight.
    pub fn rf(&self) -> f64 {
        1.0 / self.g_unit
    }
}

pub fn weight_to_resistance(w: f64, dp: &DeviceParams) -> Result<f64> {
    if w == 0.0 {
        return Err(Error::ZeroWeight);
    }
    let r = 1.0 / (w.abs() * dp.g_unit);
    if !r.is_finite() || !w.is_finite() || r < dp.r_min || r > dp.r_max {
        return Err(Error::Programmability {
            weight: w,
            resistance: r,
            r_min: dp.r_min,
            r_max: dp.r_max,
        });
    }
    Ok(r)
}

pub fn resistance_to_weight(r: f64, dp: &DeviceParams) -> Result<f64> {
    if r <= 0.0 || !r.is_finite() {
        return Err(Error::InvalidProgram(format!(
            "resistance {r} is not positive and finite"
        )));
    }
    Ok(1.0 / (r * dp.g_unit))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
    pub ohms: f64,
}

/// An immutable crossbar program.
///
/// Cells are kept sorted by `(row, col)`; a column index is built once at
/// construction so evaluation does not rescan the cell list per column.
#[derive(Clone, PartialEq)]
pub struct CrossbarProgram {
    label: String,
    rows: usize,
    cols: usize,
    rf: f64,
    cells: Vec<Cell>,
    col_start: Vec<usize>,
    col_cells: Vec<usize>,
}

impl fmt::Debug for CrossbarProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CrossbarProgram")
            .field("label", &self.label)
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("rf", &self.rf)
            .field("cells", &self.cells.len())
            .finish()
    }
}

/// One invariant violation found by [`validate_program`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateCell { row: usize, col: usize },
    RowOutOfRange { row: usize, col: usize, rows: usize },
    ColOutOfRange { row: usize, col: usize, cols: usize },
    NonPositiveResistance { row: usize, col: usize, ohms: f64 },
    NonPositiveFeedback { rf: f64 },
    BadLabel { label: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateCell { row, col } => write!(f, "duplicate cell at ({row}, {col})"),
            Violation::RowOutOfRange { row, col, rows } => {
                write!(f, "cell ({row}, {col}) row outside 0..{rows}")
            }
            Violation::ColOutOfRange { row, col, cols } => {
                write!(f, "cell ({row}, {col}) column outside 0..{cols}")
            }
            Violation::NonPositiveResistance { row, col, ohms } => {
                write!(f, "cell ({row}, {col}) has non-positive resistance {ohms}")
            }
            Violation::NonPositiveFeedback { rf } => {
                write!(f, "feedback resistance {rf} is not positive")
            }
            Violation::BadLabel { label } => {
                write!(f, "label {label:?} must be one non-empty token")
            }
        }
    }
}

/// Checks a raw program description without constructing it.
pub fn validate_program(
    label: &str,
    rows: usize,
    cols: usize,
    rf: f64,
    cells: &[Cell],
) -> Vec<Violation> {
    let mut out = Vec::new();
    if label.is_empty() || label.chars().any(char::is_whitespace) {
        out.push(Violation::BadLabel {
            label: label.to_owned(),
        });
    }
    if rf <= 0.0 || !rf.is_finite() {
        out.push(Violation::NonPositiveFeedback { rf });
    }
    let mut seen = HashSet::with_capacity(cells.len());
    for c in cells {
        if !seen.insert((c.row, c.col)) {
            out.push(Violation::DuplicateCell {
                row: c.row,
                col: c.col,
            });
        }
        if c.row >= rows {
            out.push(Violation::RowOutOfRange {
                row: c.row,
                col: c.col,
                rows,
            });
        }
        if c.col >= cols {
            out.push(Violation::ColOutOfRange {
                row: c.row,
                col: c.col,
                cols,
            });
        }
        if c.ohms <= 0.0 || !c.ohms.is_finite() {
            out.push(Violation::NonPositiveResistance {
                row: c.row,
                col: c.col,
                ohms: c.ohms,
            });
        }
    }
    out
}

impl CrossbarProgram {
    pub fn new(
        label: impl Into<String>,
        rows: usize,
        cols: usize,
        rf: f64,
        mut cells: Vec<Cell>,
    ) -> Result<Self> {
        let label = label.into();
        let violations = validate_program(&label, rows, cols, rf, &cells);
        if !violations.is_empty() {
            let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(Error::InvalidProgram(msg.join("; ")));
        }
        cells.sort_by_key(|c| (c.row, c.col));

        let mut col_start = vec![0usize; cols + 1];
        for c in &cells {
            col_start[c.col + 1] += 1;
        }
        for j in 0..cols {
            col_start[j + 1] += col_start[j];
        }
        let mut fill = col_start.clone();
        let mut col_cells = vec![0usize; cells.len()];
        for (idx, c) in cells.iter().enumerate() {
            col_cells[fill[c.col]] = idx;
            fill[c.col] += 1;
        }
        Ok(CrossbarProgram {
            label,
            rows,
            cols,
            rf,
            cells,
            col_start,
            col_cells,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rf(&self) -> f64 {
        self.rf
    }

    /// Cells sorted by `(row, col)`.
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn memristor_count(&self) -> usize {
        self.cells.len()
    }

    pub fn column_cells(&self, col: usize) -> impl Iterator<Item = &Cell> + '_ {
        self.col_cells[self.col_start[col]..self.col_start[col + 1]]
            .iter()
            .map(move |&i| &self.cells[i])
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if label.is_empty() || label.chars().any(char::is_whitespace) {
            return Err(Error::InvalidProgram(
                Violation::BadLabel { label }.to_string(),
            ));
        }
        self.label = label;
        Ok(self)
    }

    fn column_output(&self, col: usize, v: &[f64]) -> f64 {
        let current: f64 = self.column_cells(col).map(|c| v[c.row] / c.ohms).sum();
        -self.rf * current
    }

    /// Output voltage per column for row voltages `v`.
    pub fn evaluate(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::Input(format!(
                "crossbar `{}` has {} rows, got {} input voltages",
                self.label,
                self.rows,
                v.len()
            )));
        }
        // Each column sums in a fixed order, so both paths are bit-identical.
        if self.cells.len() >= par::COLUMN_PARALLEL_MIN_CELLS {
            Ok(par::map_range(self.cols, |j| self.column_output(j, v)))
        } else {
            Ok((0..self.cols).map(|j| self.column_output(j, v)).collect())
        }
    }

    /// Dense conductance matrix `G[i][j] = 1 / R_ij`, zero where no cell exists.
    pub fn conductance_matrix(&self) -> Vec<Vec<f64>> {
        let mut g = vec![vec![0.0; self.cols]; self.rows];
        for c in &self.cells {
            g[c.row][c.col] = 1.0 / c.ohms;
        }
        g
    }

    /// Program with every cell of column `col` removed.
    pub fn without_column(&self, col: usize) -> Self {
        let cells = self
            .cells
            .iter()
            .copied()
            .filter(|c| c.col != col)
            .collect();
        CrossbarProgram::new(self.label.clone(), self.rows, self.cols, self.rf, cells)
            .expect("subset of a valid program is valid")
    }
}

/// Free-function form of [`CrossbarProgram::evaluate`].
pub fn evaluate_crossbar(prog: &CrossbarProgram, v: &[f64]) -> Result<Vec<f64>> {
    prog.evaluate(v)
}
