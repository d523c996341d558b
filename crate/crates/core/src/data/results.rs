use std::path::Path;

use crate::error::{Error, Result};

/// Numeric table written as CSV with one header row; column order is the order given.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ResultTable {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        ResultTable {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Dimension(format!(
                "row has {} values, table has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }
}

/// Writes `table` with shortest round-trip decimal formatting.
pub fn write_results(table: &ResultTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| Error::parse(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(&table.columns).map_err(err)?;
    for r in &table.rows {
        w.write_record(r.iter().map(|v| format!("{v:?}"))).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_results(path: impl AsRef<Path>) -> Result<ResultTable> {
    let path = path.as_ref();
    let err = |e: csv::Error| Error::parse(path, e.to_string());
    let mut rdr = csv::Reader::from_path(path).map_err(err)?;
    let mut table = ResultTable::new(rdr.headers().map_err(err)?.iter());
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(err)?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, v)| {
                v.parse::<f64>()
                    .map_err(|_| Error::parse(path, format!("line {}, column {}: not a number", r + 2, c + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        table.push(row).map_err(|e| Error::parse(path, e.to_string()))?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut t = ResultTable::new(["nu", "eps_e", "reserve"]);
        t.push(vec![1e-5, 0.2, 1.0 / 3.0]).unwrap();
        t.push(vec![0.035, f64::INFINITY, -0.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_results(&t, &p).unwrap();
        assert_eq!(load_results(&p).unwrap(), t);
        assert!(t.push(vec![1.0]).is_err());
    }
}
