//! Plain-text and CSV rendering of result rows.

use std::io::{self, Write};

use crate::args::Format;

pub struct Table {
    headers: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&'static str]) -> Self {
        Table {
            headers: headers.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn write(&self, w: &mut dyn Write, format: Format) -> io::Result<()> {
        match format {
            Format::Csv => {
                writeln!(w, "{}", self.headers.join(","))?;
                for row in &self.rows {
                    writeln!(w, "{}", row.join(","))?;
                }
            }
            Format::Table => {
                let mut widths: Vec<usize> = self.headers.iter().map(|h| h.len()).collect();
                for row in &self.rows {
                    for (w, cell) in widths.iter_mut().zip(row) {
                        *w = (*w).max(cell.chars().count());
                    }
                }
                let line = |cells: Vec<&str>| -> String {
                    let mut out = String::new();
                    for (i, (cell, width)) in cells.iter().zip(&widths).enumerate() {
                        if i + 1 == cells.len() {
                            out.push_str(cell);
                        } else {
                            out.push_str(&format!("{cell:<width$}  "));
                        }
                    }
                    out
                };
                writeln!(w, "{}", line(self.headers.clone()))?;
                for row in &self.rows {
                    writeln!(w, "{}", line(row.iter().map(String::as_str).collect()))?;
                }
            }
        }
        Ok(())
    }
}

/// Distances and probabilities are shown to four decimals.
pub fn num(x: f64) -> String {
    format!("{x:.4}")
}
