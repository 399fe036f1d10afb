//! BER/SNR tables and log-linear lookup.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BerTableError {
    #[error("BER table is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("row {row}: {message}")]
    Invalid { row: usize, message: String },
    #[error("cannot read BER table {path}: {message}")]
    Io { path: String, message: String },
}

/// Monotone mapping from SNR (dB) to bit error probability.
#[derive(Debug, Clone, PartialEq)]
pub struct BerTable {
    rows: Vec<(f64, f64)>,
}

const HEADER: &str = "snr_db,ber";

impl BerTable {
    pub fn from_rows(rows: Vec<(f64, f64)>) -> Result<Self, BerTableError> {
        if rows.is_empty() {
            return Err(BerTableError::Empty);
        }
        for (i, &(snr, ber)) in rows.iter().enumerate() {
            if !snr.is_finite() {
                return Err(BerTableError::Invalid { row: i, message: format!("non-finite snr_db {snr}") });
            }
            if !(0.0..=1.0).contains(&ber) {
                return Err(BerTableError::Invalid { row: i, message: format!("ber {ber} outside [0, 1]") });
            }
            if i > 0 {
                let (prev_snr, prev_ber) = rows[i - 1];
                if snr <= prev_snr {
                    return Err(BerTableError::Invalid {
                        row: i,
                        message: format!("snr_db {snr} not strictly above previous {prev_snr}"),
                    });
                }
                if ber > prev_ber {
                    return Err(BerTableError::Invalid {
                        row: i,
                        message: format!("ber {ber} increases over previous {prev_ber}"),
                    });
                }
            }
        }
        Ok(BerTable { rows })
    }

    /// Parses the `snr_db,ber` text format. The header row is mandatory;
    /// blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, BerTableError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, h)) if h.replace(' ', "") == HEADER => {}
            Some((line, h)) => {
                return Err(BerTableError::Parse {
                    line,
                    message: format!("expected header `{HEADER}`, found `{h}`"),
                })
            }
            None => return Err(BerTableError::Empty),
        }
        let mut rows = Vec::new();
        let mut line_of_row = Vec::new();
        for (line, l) in lines {
            let fields: Vec<&str> = l.split(',').map(str::trim).collect();
            if fields.len() != 2 {
                return Err(BerTableError::Parse {
                    line,
                    message: format!("expected 2 fields, found {}", fields.len()),
                });
            }
            let num = |s: &str, what: &str| {
                s.parse::<f64>().map_err(|_| BerTableError::Parse {
                    line,
                    message: format!("invalid {what} `{s}`"),
                })
            };
            rows.push((num(fields[0], "snr_db")?, num(fields[1], "ber")?));
            line_of_row.push(line);
        }
        // Report row-level violations against their source line.
        BerTable::from_rows(rows).map_err(|e| match e {
            BerTableError::Invalid { row, message } => BerTableError::Parse { line: line_of_row[row], message },
            other => other,
        })
    }

    pub fn load(path: &Path) -> Result<Self, BerTableError> {
        let text = std::fs::read_to_string(path).map_err(|e| BerTableError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn rows(&self) -> &[(f64, f64)] {
        &self.rows
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for (s, b) in &self.rows {
            out.push_str(&format!("{s},{b}\n"));
        }
        out
    }

    /// Bit error probability at `snr_db`, interpolating linearly in
    /// `(snr_db, log10 ber)` and clamping outside the table range.
    pub fn lookup(&self, snr_db: f64) -> f64 {
        let rows = &self.rows;
        let first = rows[0];
        let last = rows[rows.len() - 1];
        if snr_db.is_nan() || snr_db <= first.0 {
            return first.1;
        }
        if snr_db >= last.0 {
            return last.1;
        }
        let hi = rows.partition_point(|&(s, _)| s <= snr_db);
        let (s0, b0) = rows[hi - 1];
        let (s1, b1) = rows[hi];
        if snr_db == s0 {
            return b0;
        }
        if b0 == b1 {
            return b0;
        }
        if b1 == 0.0 {
            // log10(0) = -inf: the interpolant is zero everywhere past s0.
            return 0.0;
        }
        let frac = (snr_db - s0) / (s1 - s0);
        let log_ber = b0.log10() + frac * (b1.log10() - b0.log10());
        10f64.powf(log_ber)
    }
}
