//! Trajectory CSV: `t,y,x1,x2,k1,k2,F1,F2,G2,regime1,regime2`, then
//! `k3..kp` for chains. Floats use `{:.16e}`, which round-trips every `f64`.

use std::fmt::Write as _;

use crawler_core::model::ContactState;

pub const BASE_COLUMNS: [&str; 11] = [
    "t", "y", "x1", "x2", "k1", "k2", "F1", "F2", "G2", "regime1", "regime2",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TableError {
    #[error("empty trajectory file")]
    Empty,
    #[error("unexpected header column {index}: expected `{expected}`, got `{got}`")]
    Header {
        index: usize,
        expected: String,
        got: String,
    },
    #[error("line {line}: expected {expected} fields, got {got}")]
    Width { line: usize, expected: usize, got: usize },
    #[error("line {line}, column `{column}`: cannot parse `{value}`")]
    Value {
        line: usize,
        column: String,
        value: String,
    },
}

/// One trajectory, column by column. `k` holds every impulse channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub k: Vec<Vec<f64>>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub g2: Vec<f64>,
    pub regime1: Vec<ContactState>,
    pub regime2: Vec<ContactState>,
}

fn num(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String");
}

impl TrajectoryTable {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.k.len()
    }

    pub fn header(&self) -> String {
        let mut cols: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
        cols.extend((3..=self.k.len()).map(|i| format!("k{i}")));
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for j in 0..self.len() {
            for v in [self.t[j], self.y[j], self.x1[j], self.x2[j], self.k[0][j], self.k[1][j], self.f1[j], self.f2[j], self.g2[j]] {
                num(&mut out, v);
                out.push(',');
            }
            out.push_str(self.regime1[j].label());
            out.push(',');
            out.push_str(self.regime2[j].label());
            for k in &self.k[2..] {
                out.push(',');
                num(&mut out, k[j]);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, TableError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(TableError::Empty)?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let extra = cols.len().saturating_sub(BASE_COLUMNS.len());
        let expected: Vec<String> = BASE_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain((3..3 + extra).map(|i| format!("k{i}")))
            .collect();
        for (index, exp) in expected.iter().enumerate() {
            let got = cols.get(index).copied().unwrap_or("");
            if got != exp {
                return Err(TableError::Header {
                    index,
                    expected: exp.clone(),
                    got: got.to_string(),
                });
            }
        }
        let mut table = TrajectoryTable {
            t: Vec::new(),
            y: Vec::new(),
            x1: Vec::new(),
            x2: Vec::new(),
            k: vec![Vec::new(); 2 + extra],
            f1: Vec::new(),
            f2: Vec::new(),
            g2: Vec::new(),
            regime1: Vec::new(),
            regime2: Vec::new(),
        };
        for (i, line) in lines {
            let line_no = i + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != expected.len() {
                return Err(TableError::Width {
                    line: line_no,
                    expected: expected.len(),
                    got: fields.len(),
                });
            }
            let float = |c: usize| {
                fields[c].parse::<f64>().map_err(|_| TableError::Value {
                    line: line_no,
                    column: expected[c].clone(),
                    value: fields[c].to_string(),
                })
            };
            let state = |c: usize| {
                ContactState::parse(fields[c]).ok_or_else(|| TableError::Value {
                    line: line_no,
                    column: expected[c].clone(),
                    value: fields[c].to_string(),
                })
            };
            table.t.push(float(0)?);
            table.y.push(float(1)?);
            table.x1.push(float(2)?);
            table.x2.push(float(3)?);
            table.k[0].push(float(4)?);
            table.k[1].push(float(5)?);
            table.f1.push(float(6)?);
            table.f2.push(float(7)?);
            table.g2.push(float(8)?);
            table.regime1.push(state(9)?);
            table.regime2.push(state(10)?);
            for c in 0..extra {
                table.k[2 + c].push(float(11 + c)?);
            }
        }
        if table.is_empty() {
            return Err(TableError::Empty);
        }
        Ok(table)
    }
}
