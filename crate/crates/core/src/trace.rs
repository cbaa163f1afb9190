//! Time-indexed simulation records and their CSV form.
//!
//! CSV layout, one header row then one row per sample:
//!
//! ```text
//! t,x_0,...,x_{n-1},x_t,H,T,Htot,alpha,P_c,P_t,P_e,P_d
//! ```
//!
//! Every value is written with 17 significant digits so that a trace read
//! back from disk is bit-identical to the one held in memory.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tank::{EnergyLaw, ValveConfig};

/// Signals only available for in-memory traces.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDetail {
    pub z: DVector<f64>,
    pub env_energy: f64,
    pub scale: f64,
    pub p_refill: f64,
    pub p_overflow: f64,
    pub w: DVector<f64>,
    pub u_c: DVector<f64>,
    pub u_e: DVector<f64>,
    pub y: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: DVector<f64>,
    pub x_t: f64,
    pub h: f64,
    pub tank_energy: f64,
    pub h_total: f64,
    pub alpha: f64,
    pub p_c: f64,
    pub p_t: f64,
    pub p_e: f64,
    pub p_d: f64,
    pub detail: Option<SampleDetail>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TraceMeta {
    pub scenario: String,
    pub config_hash: String,
    pub law: Option<EnergyLaw>,
    pub valve: Option<ValveConfig>,
    /// Plant gradient obtained by central differences.
    pub gradient_fd: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub samples: Vec<Sample>,
}

impl Trace {
    pub fn state_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len())
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }

    pub fn last_time(&self) -> Option<f64> {
        self.samples.last().map(|s| s.t)
    }

    /// Structural checks shared by the CSV reader and the audit.
    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        for (i, pair) in self.samples.windows(2).enumerate() {
            if !(pair[1].t > pair[0].t) {
                return Err(Error::Trace {
                    row: i + 2,
                    message: format!(
                        "time is not strictly increasing ({} after {})",
                        pair[1].t, pair[0].t
                    ),
                });
            }
        }
        if let Some((i, _)) = self.samples.iter().enumerate().find(|(_, s)| s.x.len() != n) {
            return Err(Error::Trace {
                row: i + 1,
                message: "state dimension changes within the trace".into(),
            });
        }
        Ok(())
    }

    pub fn header(&self) -> Vec<String> {
        csv_header(self.state_dim())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.header().join(","))?;
        let mut line = String::new();
        for s in &self.samples {
            line.clear();
            push_num(&mut line, s.t);
            for v in s.x.iter() {
                push_num(&mut line, *v);
            }
            for v in [
                s.x_t,
                s.h,
                s.tank_energy,
                s.h_total,
                s.alpha,
                s.p_c,
                s.p_t,
                s.p_e,
                s.p_d,
            ] {
                push_num(&mut line, v);
            }
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Parse a trace written by [`Trace::write_csv`]. Row numbers in errors are
    /// 1-based file lines.
    pub fn read_csv<R: Read>(input: R) -> Result<Trace> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = reader
            .headers()
            .map_err(|e| Error::Trace {
                row: 1,
                message: e.to_string(),
            })?
            .clone();
        let n = headers.len().checked_sub(10).ok_or_else(|| Error::Trace {
            row: 1,
            message: format!("expected at least 10 columns, found {}", headers.len()),
        })?;
        let expected = csv_header(n);
        if headers.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::Trace {
                row: 1,
                message: format!("unexpected header, expected '{}'", expected.join(",")),
            });
        }

        let mut samples = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 2;
            let record = record.map_err(|e| Error::Trace {
                row,
                message: e.to_string(),
            })?;
            if record.len() != n + 10 {
                return Err(Error::Trace {
                    row,
                    message: format!("expected {} fields, found {}", n + 10, record.len()),
                });
            }
            let mut vals = Vec::with_capacity(record.len());
            for (col, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::Trace {
                    row,
                    message: format!("column '{}': cannot parse '{field}'", expected[col]),
                })?;
                vals.push(v);
            }
            let tail = &vals[n + 1..];
            samples.push(Sample {
                t: vals[0],
                x: DVector::from_row_slice(&vals[1..=n]),
                x_t: tail[0],
                h: tail[1],
                tank_energy: tail[2],
                h_total: tail[3],
                alpha: tail[4],
                p_c: tail[5],
                p_t: tail[6],
                p_e: tail[7],
                p_d: tail[8],
                detail: None,
            });
        }
        let trace = Trace {
            meta: TraceMeta::default(),
            samples,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn load_csv(path: &Path) -> Result<Trace> {
        let file = std::fs::File::open(path)?;
        Trace::read_csv(std::io::BufReader::new(file))
    }
}

pub fn csv_header(n: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..n).map(|i| format!("x_{i}")));
    cols.extend(
        ["x_t", "H", "T", "Htot", "alpha", "P_c", "P_t", "P_e", "P_d"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols
}

/// 17 significant digits.
pub fn format_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn push_num(line: &mut String, v: f64) {
    if !line.is_empty() {
        line.push(',');
    }
    line.push_str(&format_num(v));
}
