//! Wide CSV panels: a leading ISO-8601 date column followed by one numeric
//! column per series.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    /// Strictly increasing.
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    /// T×K values.
    pub values: Vec<Vec<f64>>,
}

/// Percent log-returns, T×N.
pub type ReturnsPanel = Panel;
/// Covariate changes, T×p (p may be 0).
pub type CovariatePanel = Panel;

impl Panel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn date_strings(&self) -> Vec<String> {
        self.dates.iter().map(|d| d.format("%Y-%m-%d").to_string()).collect()
    }

    /// Rows `lo..hi` as a new panel.
    pub fn slice(&self, lo: usize, hi: usize) -> Panel {
        Panel {
            dates: self.dates[lo..hi].to_vec(),
            names: self.names.clone(),
            values: self.values[lo..hi].to_vec(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("date");
        for n in &self.names {
            write!(s, ",{n}").expect("string write");
        }
        s.push('\n');
        for (d, row) in self.date_strings().iter().zip(&self.values) {
            s.push_str(d);
            for v in row {
                // Display prints the shortest representation that parses back exactly.
                write!(s, ",{v}").expect("string write");
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        flexdep::io::write_atomic(path, self.to_csv().as_bytes())?;
        Ok(())
    }
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

/// Reads a wide CSV and sorts it by date. Lines starting with '#' are comments.
pub fn load_panel(path: &Path) -> CliResult<Panel> {
    let data_err = |message: String| CliError::Data {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data_err(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| data_err(e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(data_err("missing header row".into()));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut rows: BTreeMap<NaiveDate, Vec<f64>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| data_err(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let cell = |col: usize| CliError::Cell {
            path: path.to_path_buf(),
            line,
            column: headers.get(col).unwrap_or("?").to_string(),
            value: rec.get(col).unwrap_or("").to_string(),
        };
        if rec.len() != headers.len() {
            return Err(data_err(format!(
                "line {line} has {} fields, header has {}",
                rec.len(),
                headers.len()
            )));
        }
        let date = parse_date(&rec[0]).ok_or_else(|| cell(0))?;
        let mut vals = Vec::with_capacity(names.len());
        for c in 1..rec.len() {
            let v: f64 = rec[c].parse().map_err(|_| cell(c))?;
            if !v.is_finite() {
                return Err(cell(c));
            }
            vals.push(v);
        }
        if rows.insert(date, vals).is_some() {
            return Err(CliError::DuplicateDate {
                path: path.to_path_buf(),
                date: date.format("%Y-%m-%d").to_string(),
            });
        }
    }
    let (dates, values) = rows.into_iter().unzip();
    Ok(Panel { dates, names, values })
}

pub fn load_returns(path: &Path) -> CliResult<ReturnsPanel> {
    let p = load_panel(path)?;
    if p.names.is_empty() {
        return Err(CliError::Data {
            path: path.to_path_buf(),
            message: "returns file has no asset columns".into(),
        });
    }
    Ok(p)
}

pub fn load_covariates(path: &Path) -> CliResult<CovariatePanel> {
    load_panel(path)
}

/// Rows whose date appears in both panels. Returns the joined panels and
/// the number of rows dropped from each.
pub fn inner_join(a: &Panel, b: &Panel) -> (Panel, Panel, usize, usize) {
    let mut ja = Panel {
        dates: Vec::new(),
        names: a.names.clone(),
        values: Vec::new(),
    };
    let mut jb = Panel {
        dates: Vec::new(),
        names: b.names.clone(),
        values: Vec::new(),
    };
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a.dates[i].cmp(&b.dates[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                ja.dates.push(a.dates[i]);
                ja.values.push(a.values[i].clone());
                jb.dates.push(b.dates[j]);
                jb.values.push(b.values[j].clone());
                i += 1;
                j += 1;
            }
        }
    }
    let (da, db) = (a.len() - ja.len(), b.len() - jb.len());
    (ja, jb, da, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn shape_sorting_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let sorted = write(
            dir.path(),
            "a.csv",
            "date,X,Y\n2020-01-03,1,2\n2020-01-10,3,4\n2020-01-17,5,6\n",
        );
        let shuffled = write(
            dir.path(),
            "b.csv",
            "date,X,Y\n2020-01-17,5,6\n2020-01-03,1,2\n2020-01-10,3,4\n",
        );
        let a = load_returns(&sorted).unwrap();
        assert_eq!((a.len(), a.names.len()), (3, 2));
        assert_eq!(a, load_returns(&shuffled).unwrap());

        let bad = write(dir.path(), "c.csv", "date,X,Y\n2020-01-03,1,2\n2020-01-10,oops,4\n");
        match load_returns(&bad) {
            Err(CliError::Cell { line, column, .. }) => assert_eq!((line, column.as_str()), (3, "X")),
            other => panic!("{other:?}"),
        }
        let dup = write(dir.path(), "d.csv", "date,X\n2020-01-03,1\n2020-01-03,2\n");
        assert!(matches!(load_returns(&dup), Err(CliError::DuplicateDate { .. })));
    }

    #[test]
    fn join_drops_unmatched_dates() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(
            dir.path(),
            "r.csv",
            "date,X\n2020-01-03,1\n2020-01-10,2\n2020-01-17,3\n",
        );
        let c = write(dir.path(), "c.csv", "date,Z\n2020-01-03,0.1\n2020-01-17,0.3\n");
        let (jr, jc, dr, dc) = inner_join(&load_returns(&r).unwrap(), &load_covariates(&c).unwrap());
        assert_eq!((jr.len(), dr, dc), (2, 1, 0));
        assert_eq!(jr.dates, jc.dates);
        assert_eq!(jr.values, vec![vec![1.0], vec![3.0]]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let p = Panel {
            dates: vec![NaiveDate::from_ymd_opt(2021, 5, 7).unwrap()],
            names: vec!["u".into()],
            values: vec![vec![0.1 + 0.2]],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        p.write(&path).unwrap();
        assert_eq!(load_panel(&path).unwrap(), p);
    }
}
