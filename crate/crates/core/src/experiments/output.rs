//! Tables in CSV (canonical), JSON mirror and plain-text form.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::config::Config;
use super::harness::{ConvergenceTable, TimeSeries, Trajectory};

/// C `printf("%.6e")`: six fractional digits, signed exponent of at least
/// two digits.
pub fn fmt_e(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{x:.6e}");
    let (mant, exp) = s.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", exp.abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(usize),
    Real(f64),
    Missing,
}

impl Cell {
    fn text(self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Real(x) => fmt_e(x),
            Cell::Missing => String::new(),
        }
    }

    /// JSON value of the printed text, so both files carry the same digits.
    fn json(self) -> Value {
        match self {
            Cell::Int(i) => Value::from(i),
            Cell::Real(x) => fmt_e(x)
                .parse::<f64>()
                .ok()
                .and_then(serde_json::Number::from_f64)
                .map_or(Value::Null, Value::Number),
            Cell::Missing => Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.iter().map(|c| c.text())).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("ascii")
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let obj: Map<String, Value> = self.header.iter().cloned().zip(r.iter().map(|c| c.json())).collect();
                Value::Object(obj)
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&rows).expect("serializable");
        s.push('\n');
        s
    }

    /// Right-aligned columns, `-` for missing entries.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| match c {
                        Cell::Missing => "-".to_string(),
                        c => c.text(),
                    })
                    .collect()
            })
            .collect();
        let width: Vec<usize> = (0..self.header.len())
            .map(|j| cells.iter().map(|r| r[j].len()).chain([self.header[j].len()]).max().unwrap_or(0))
            .collect();
        let line = |items: &[String]| {
            let parts: Vec<String> = items.iter().zip(&width).map(|(s, &w)| format!("{s:>w$}")).collect();
            parts.join("  ") + "\n"
        };
        let mut out = line(&self.header);
        for r in &cells {
            out += &line(r);
        }
        out
    }
}

pub fn convergence_table(t: &ConvergenceTable) -> Table {
    let mut header = vec!["k".to_string(), "N".to_string()];
    for f in &t.fields {
        header.push(format!("err_{f}"));
        header.push(format!("ord_{f}"));
    }
    let rows = t
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![Cell::Int(r.k), Cell::Int(r.n)];
            for (e, o) in r.errors.iter().zip(&r.orders) {
                row.push(Cell::Real(*e));
                row.push(o.map_or(Cell::Missing, Cell::Real));
            }
            row
        })
        .collect();
    Table { header, rows }
}

pub fn conservation_table(ts: &TimeSeries) -> Table {
    let header = ["t", "mass", "energy", "hamiltonian", "dmass", "denergy", "dhamiltonian"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = ts
        .samples
        .iter()
        .map(|s| {
            let mut row = vec![Cell::Real(s.t)];
            row.extend(s.values.iter().map(|&v| Cell::Real(v)));
            row.extend(s.deviations.iter().map(|&v| Cell::Real(v)));
            row
        })
        .collect();
    Table { header, rows }
}

pub fn snapshot_table(tr: &Trajectory) -> Table {
    let mut header: Vec<String> = ["step", "t", "x"].iter().map(|s| s.to_string()).collect();
    header.extend(tr.fields.iter().map(|f| f.to_string()));
    let mut rows = Vec::new();
    for s in &tr.snapshots {
        for (i, &x) in s.x.iter().enumerate() {
            let mut row = vec![Cell::Int(s.step), Cell::Real(s.t), Cell::Real(x)];
            row.extend(s.values.iter().map(|col| Cell::Real(col[i])));
            rows.push(row);
        }
    }
    Table { header, rows }
}

/// Hex SHA-256 of the resolved configuration.
pub fn config_hash(cfg: &Config) -> String {
    let text = serde_json::to_string(cfg).expect("serializable");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Run metadata written next to the tables.
#[derive(Debug, Serialize)]
pub struct Meta<'a, S: Serialize> {
    pub command: &'a str,
    pub config_sha256: String,
    pub config: &'a Config,
    pub status: &'a str,
    pub error: Option<String>,
    pub wall_seconds: f64,
    pub details: S,
}

/// Writes `<prefix>_<kind>.csv`, `.json` and `.meta.json` into `dir`.
pub fn write_outputs<S: Serialize>(dir: &Path, prefix: &str, kind: &str, table: &Table, meta: &Meta<S>) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let base = format!("{prefix}_{kind}");
    let paths = [
        dir.join(format!("{base}.csv")),
        dir.join(format!("{base}.json")),
        dir.join(format!("{base}.meta.json")),
    ];
    fs::write(&paths[0], table.to_csv())?;
    fs::write(&paths[1], table.to_json())?;
    let mut m = serde_json::to_string_pretty(meta).map_err(io::Error::other)?;
    m.push('\n');
    fs::write(&paths[2], m)?;
    Ok(paths.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_style_exponent() {
        assert_eq!(fmt_e(4.75e-3), "4.750000e-03");
        assert_eq!(fmt_e(0.0), "0.000000e+00");
        assert_eq!(fmt_e(-123456.789), "-1.234568e+05");
        assert_eq!(fmt_e(1e-300), "1.000000e-300");
        assert_eq!(fmt_e(f64::NAN), "nan");
        assert_eq!(fmt_e(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn csv_and_json_agree() {
        let t = Table {
            header: vec!["k".into(), "N".into(), "err_u".into(), "ord_u".into()],
            rows: vec![
                vec![Cell::Int(2), Cell::Int(8), Cell::Real(4.75e-3), Cell::Missing],
                vec![Cell::Int(2), Cell::Int(16), Cell::Real(4.891234567e-4), Cell::Real(3.2793)],
            ],
        };
        let csv = t.to_csv();
        assert_eq!(csv, "k,N,err_u,ord_u\n2,8,4.750000e-03,\n2,16,4.891235e-04,3.279300e+00\n");
        let json: Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(json[0]["ord_u"], Value::Null);
        assert_eq!(json[1]["err_u"].as_f64(), Some(4.891235e-4));
        let keys: Vec<&String> = json[1].as_object().unwrap().keys().collect();
        assert_eq!(keys, ["k", "N", "err_u", "ord_u"]);
        assert!(t.to_text().lines().nth(1).unwrap().trim_end().ends_with('-'));
    }
}
