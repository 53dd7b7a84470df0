//! Crossbar netlist text format.
//!
//! ```text
//! XBAR <label> ROWS <rows> COLS <cols> RF <ohms>
//! CELL <row> <col> <ohms>        (sorted by row, then column)
//! END
//! ```
//!
//! One statement per line, LF endings, numbers printed as the shortest decimal
//! that round-trips. Files written to disk carry a leading `VERSION 1` line,
//! which the parser accepts but does not require.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::crossbar::{Cell, CrossbarProgram};
use crate::error::{Error, NetlistError, NetlistErrorKind, Result};

pub const NETLIST_VERSION: &str = "VERSION 1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetlistDocument {
    pub lines: Vec<String>,
}

impl fmt::Display for NetlistDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in &self.lines {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

pub fn export_netlist(prog: &CrossbarProgram) -> NetlistDocument {
    let mut lines = Vec::with_capacity(prog.memristor_count() + 2);
    lines.push(format!(
        "XBAR {} ROWS {} COLS {} RF {}",
        prog.label(),
        prog.rows(),
        prog.cols(),
        prog.rf()
    ));
    for c in prog.cells() {
        lines.push(format!("CELL {} {} {}", c.row, c.col, c.ohms));
    }
    lines.push("END".to_owned());
    NetlistDocument { lines }
}

fn err(line: usize, token: &str, kind: NetlistErrorKind) -> NetlistError {
    NetlistError {
        line,
        token: token.to_owned(),
        kind,
    }
}

fn int(line: usize, tok: Option<&str>) -> Result<usize, NetlistError> {
    let tok = tok.ok_or_else(|| err(line, "<eol>", NetlistErrorKind::UnexpectedToken))?;
    tok.parse()
        .map_err(|_| err(line, tok, NetlistErrorKind::BadNumber))
}

fn ohms(line: usize, tok: Option<&str>) -> Result<f64, NetlistError> {
    let tok = tok.ok_or_else(|| err(line, "<eol>", NetlistErrorKind::UnexpectedToken))?;
    let v: f64 = tok
        .parse()
        .map_err(|_| err(line, tok, NetlistErrorKind::BadNumber))?;
    if v <= 0.0 || !v.is_finite() {
        return Err(err(line, tok, NetlistErrorKind::NonPositive));
    }
    Ok(v)
}

fn keyword(line: usize, tok: Option<&str>, want: &str) -> Result<(), NetlistError> {
    match tok {
        Some(t) if t == want => Ok(()),
        Some(t) => Err(err(line, t, NetlistErrorKind::UnexpectedToken)),
        None => Err(err(line, "<eol>", NetlistErrorKind::UnexpectedToken)),
    }
}

fn end_of_line<'a>(
    line: usize,
    mut rest: impl Iterator<Item = &'a str>,
) -> Result<(), NetlistError> {
    match rest.next() {
        Some(t) => Err(err(line, t, NetlistErrorKind::UnexpectedToken)),
        None => Ok(()),
    }
}

pub fn parse_netlist(doc: &str) -> Result<CrossbarProgram, NetlistError> {
    let body = doc.strip_suffix('\n').unwrap_or(doc);
    let mut lines = body
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .peekable();

    if let Some((_, first)) = lines.peek() {
        if first.split_whitespace().next() == Some("VERSION") {
            let (n, text) = lines.next().expect("peeked");
            if text.trim() != NETLIST_VERSION {
                let tok = text.split_whitespace().nth(1).unwrap_or("<eol>");
                return Err(err(n, tok, NetlistErrorKind::Version));
            }
        }
    }

    let (n, header) = lines
        .next()
        .ok_or_else(|| err(1, "<eof>", NetlistErrorKind::Truncated))?;
    let mut toks = header.split_whitespace();
    keyword(n, toks.next(), "XBAR")?;
    let label = toks
        .next()
        .ok_or_else(|| err(n, "<eol>", NetlistErrorKind::UnexpectedToken))?
        .to_owned();
    keyword(n, toks.next(), "ROWS")?;
    let rows = int(n, toks.next())?;
    keyword(n, toks.next(), "COLS")?;
    let cols = int(n, toks.next())?;
    keyword(n, toks.next(), "RF")?;
    let rf = ohms(n, toks.next())?;
    end_of_line(n, toks)?;

    let mut cells: Vec<Cell> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut last_line = n;
    let mut ended = false;
    for (n, text) in lines.by_ref() {
        last_line = n;
        let mut toks = text.split_whitespace();
        match toks.next() {
            Some("CELL") => {
                let row = int(n, toks.next())?;
                let col = int(n, toks.next())?;
                let r = ohms(n, toks.next())?;
                end_of_line(n, toks)?;
                if row >= rows || col >= cols {
                    return Err(err(
                        n,
                        &format!("{row},{col}"),
                        NetlistErrorKind::OutOfBounds,
                    ));
                }
                if !seen.insert((row, col)) {
                    return Err(err(
                        n,
                        &format!("{row},{col}"),
                        NetlistErrorKind::DuplicateCell,
                    ));
                }
                cells.push(Cell { row, col, ohms: r });
            }
            Some("END") => {
                end_of_line(n, toks)?;
                ended = true;
                break;
            }
            Some(t) => return Err(err(n, t, NetlistErrorKind::UnexpectedToken)),
            None => return Err(err(n, "<blank>", NetlistErrorKind::UnexpectedToken)),
        }
    }
    if !ended {
        return Err(err(last_line, "<eof>", NetlistErrorKind::Truncated));
    }
    if let Some((n, text)) = lines.next() {
        let tok = text.split_whitespace().next().unwrap_or("<blank>");
        return Err(err(n, tok, NetlistErrorKind::TrailingContent));
    }
    CrossbarProgram::new(label.clone(), rows, cols, rf, cells)
        .map_err(|_| err(n, &label, NetlistErrorKind::UnexpectedToken))
}

/// Writes `VERSION 1` followed by the program's document.
pub fn write_netlist_file(path: impl AsRef<Path>, prog: &CrossbarProgram) -> Result<()> {
    let path = path.as_ref();
    let text = format!("{NETLIST_VERSION}\n{}", export_netlist(prog));
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_netlist_file(path: impl AsRef<Path>) -> Result<CrossbarProgram> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_netlist(&text)?)
}
