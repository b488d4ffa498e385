//! Named feature matrix with target vector; the unit of exchange between stages.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    I,
    II,
    III,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::I, Phase::II, Phase::III];

    pub fn label(self) -> &'static str {
        match self {
            Phase::I => "I",
            Phase::II => "II",
            Phase::III => "III",
        }
    }

    pub fn parse(text: &str) -> Option<Phase> {
        match text.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Some(Phase::I),
            "II" | "2" => Some(Phase::II),
            "III" | "3" => Some(Phase::III),
            _ => None,
        }
    }
}

/// Row-major `n x p` matrix of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    column_names: Vec<String>,
    data: Vec<f64>,
    target: Vec<f64>,
    row_ids: Vec<String>,
    phase: Option<Phase>,
    target_name: String,
}

/// JSON sidecar written next to the CSV form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub phase: Option<Phase>,
    pub n: usize,
    pub p: usize,
    pub column_names: Vec<String>,
    #[serde(default)]
    pub target_name: Option<String>,
    #[serde(default)]
    pub row_ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(
        column_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        target: Vec<f64>,
        row_ids: Vec<String>,
        phase: Option<Phase>,
    ) -> Result<Self> {
        let p = column_names.len();
        if rows.len() != target.len() || rows.len() != row_ids.len() {
            return Err(Error::InvalidInput(format!(
                "{} rows, {} targets, {} ids",
                rows.len(),
                target.len(),
                row_ids.len()
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * p);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != p {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} values, expected {p}",
                    r.len()
                )));
            }
            data.extend(r);
        }
        Self::from_flat(column_names, data, target, row_ids, phase)
    }

    pub fn from_flat(
        column_names: Vec<String>,
        data: Vec<f64>,
        target: Vec<f64>,
        row_ids: Vec<String>,
        phase: Option<Phase>,
    ) -> Result<Self> {
        let p = column_names.len();
        let n = target.len();
        if data.len() != n * p || row_ids.len() != n {
            return Err(Error::InvalidInput("matrix shape mismatch".into()));
        }
        let unique: BTreeSet<&String> = column_names.iter().collect();
        if unique.len() != p {
            return Err(Error::InvalidInput("duplicate column names".into()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value in row {} column `{}`",
                pos / p.max(1),
                column_names[pos % p.max(1)]
            )));
        }
        if let Some(i) = target.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite target in row {i}")));
        }
        Ok(Self {
            column_names,
            data,
            target,
            row_ids,
            phase,
            target_name: crate::ingest::BANDGAP.to_string(),
        })
    }

    pub fn with_target_name(mut self, name: &str) -> Self {
        self.target_name = name.to_string();
        self
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn phase(&self) -> Option<Phase> {
        self.phase
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.get(i, j)).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let p = self.n_cols();
        let mut data = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            column_names: self.column_names.clone(),
            data,
            target: rows.iter().map(|&i| self.target[i]).collect(),
            row_ids: rows.iter().map(|&i| self.row_ids[i].clone()).collect(),
            phase: self.phase,
            target_name: self.target_name.clone(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.n_rows() * cols.len());
        for i in 0..self.n_rows() {
            let row = self.row(i);
            data.extend(cols.iter().map(|&j| row[j]));
        }
        FeatureMatrix {
            column_names: cols.iter().map(|&j| self.column_names[j].clone()).collect(),
            data,
            target: self.target.clone(),
            row_ids: self.row_ids.clone(),
            phase: self.phase,
            target_name: self.target_name.clone(),
        }
    }

    pub fn select_named(&self, names: &[String]) -> Result<FeatureMatrix> {
        let cols = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::InvalidInput(format!("no column `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_columns(&cols))
    }

    /// Appends a column; its length must match the row count.
    pub fn with_column(&self, name: &str, values: &[f64]) -> Result<FeatureMatrix> {
        if values.len() != self.n_rows() {
            return Err(Error::InvalidInput(format!(
                "column `{name}` has {} values for {} rows",
                values.len(),
                self.n_rows()
            )));
        }
        if self.column_index(name).is_some() {
            return Err(Error::InvalidInput(format!("column `{name}` already present")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("column `{name}` has non-finite values")));
        }
        let p = self.n_cols();
        let mut data = Vec::with_capacity(self.n_rows() * (p + 1));
        for (i, v) in values.iter().enumerate() {
            data.extend_from_slice(self.row(i));
            data.push(*v);
        }
        let mut column_names = self.column_names.clone();
        column_names.push(name.to_string());
        Ok(FeatureMatrix {
            column_names,
            data,
            target: self.target.clone(),
            row_ids: self.row_ids.clone(),
            phase: self.phase,
            target_name: self.target_name.clone(),
        })
    }

    /// Column-major copy, convenient for split search.
    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.n_cols()).map(|j| self.column(j)).collect()
    }

    pub fn meta(&self) -> MatrixMeta {
        MatrixMeta {
            phase: self.phase,
            n: self.n_rows(),
            p: self.n_cols(),
            column_names: self.column_names.clone(),
            target_name: Some(self.target_name.clone()),
            row_ids: self.row_ids.clone(),
        }
    }

    /// CSV with header = column names, target as the last column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.column_names.iter().map(String::as_str).collect();
        header.push(&self.target_name);
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| fmt_f64(*v)).collect();
            rec.push(fmt_f64(self.target[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV form; the sidecar, when given, supplies phase and row ids.
    pub fn read_csv<R: Read>(input: R, meta: Option<&MatrixMeta>) -> Result<FeatureMatrix> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if headers.len() < 2 {
            return Err(Error::InvalidInput("matrix CSV needs features and a target".into()));
        }
        let p = headers.len() - 1;
        let mut data = Vec::new();
        let mut target = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            if row.len() != p + 1 {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("expected {} cells", p + 1),
                });
            }
            for (j, cell) in row.iter().enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                    line: i + 2,
                    message: format!("non-numeric cell `{cell}`"),
                })?;
                if j == p {
                    target.push(v);
                } else {
                    data.push(v);
                }
            }
        }
        let n = target.len();
        let (row_ids, phase) = match meta {
            Some(m) => {
                if m.n != n || m.column_names.as_slice() != &headers[..p] {
                    return Err(Error::InvalidInput("matrix sidecar does not match CSV".into()));
                }
                let ids = if m.row_ids.len() == n {
                    m.row_ids.clone()
                } else {
                    (0..n).map(|i| i.to_string()).collect()
                };
                (ids, m.phase)
            }
            None => ((0..n).map(|i| i.to_string()).collect(), None),
        };
        let target_name = headers[p].clone();
        Ok(Self::from_flat(headers[..p].to_vec(), data, target, row_ids, phase)?
            .with_target_name(&target_name))
    }
}

/// Shortest representation that round-trips.
pub fn fmt_f64(v: f64) -> String {
    let s = format!("{v}");
    debug_assert_eq!(s.parse::<f64>().ok(), Some(v));
    s
}
