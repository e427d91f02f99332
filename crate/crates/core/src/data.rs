//! Observed-data representation and CSV ingestion.
//!
//! A [`Unit`] is one subject: covariates `x`, arm indicator `s` (true for
//! single-arm-trial participants, false for external controls), the
//! no-intercurrent-event indicator `r`, and an outcome `y` that is observed
//! exactly when `r` holds.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stratum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub x: Vec<f64>,
    pub s: bool,
    pub r: bool,
    pub y: Option<f64>,
}

impl Unit {
    pub fn new(x: Vec<f64>, s: bool, r: bool, y: Option<f64>) -> Self {
        Self { x, s, r, y }
    }

    fn check(&self, p: usize) -> std::result::Result<(), String> {
        if self.x.len() != p {
            return Err(format!("expected {} covariates, found {}", p, self.x.len()));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err("non-finite covariate".into());
        }
        match (self.r, self.y) {
            (true, None) => Err("outcome missing without intercurrent event".into()),
            (false, Some(_)) => Err("outcome present after intercurrent event".into()),
            (true, Some(y)) if !y.is_finite() => Err("non-finite outcome".into()),
            _ => Ok(()),
        }
    }
}

/// Column mapping for CSV input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub covariates: Vec<String>,
    pub s: String,
    pub r: String,
    pub y: String,
    /// Cell values read as a missing outcome.
    pub missing_tokens: Vec<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            covariates: Vec::new(),
            s: "s".into(),
            r: "r".into(),
            y: "y".into(),
            missing_tokens: vec![String::new()],
        }
    }
}

impl Schema {
    /// Parse `x1,...,xp,s,r,y`: every name but the last three is a covariate.
    pub fn parse(spec: &str) -> Result<Self> {
        let names: Vec<String> = spec.split(',').map(|s| s.trim().to_string()).collect();
        if names.len() < 4 || names.iter().any(|n| n.is_empty()) {
            return Err(Error::InvalidArgument(format!(
                "schema `{spec}` must list at least one covariate followed by s,r,y"
            )));
        }
        let k = names.len();
        Ok(Self {
            covariates: names[..k - 3].to_vec(),
            s: names[k - 3].clone(),
            r: names[k - 2].clone(),
            y: names[k - 1].clone(),
            ..Self::default()
        })
    }

    pub fn with_missing_tokens(mut self, tokens: &[&str]) -> Self {
        self.missing_tokens = tokens.iter().map(|t| t.to_string()).collect();
        self
    }

    fn is_missing(&self, cell: &str) -> bool {
        self.missing_tokens.iter().any(|t| t == cell.trim())
    }
}

/// Immutable collection of units sharing covariate dimension `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    units: Vec<Unit>,
    p: usize,
    covariate_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumCounts {
    pub s1_r1: usize,
    pub s1_r0: usize,
    pub s0_r1: usize,
    pub s0_r0: usize,
}

impl StratumCounts {
    pub fn total(&self) -> usize {
        self.s1_r1 + self.s1_r0 + self.s0_r1 + self.s0_r0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub n_r: usize,
    pub n_e: usize,
    pub counts: StratumCounts,
    pub covariate_names: Vec<String>,
    pub covariate_means: Vec<f64>,
    pub covariate_means_sat: Vec<f64>,
    pub covariate_means_ec: Vec<f64>,
}

impl Dataset {
    /// Validate units and build a dataset. Covariate names default to `x1..xp`.
    pub fn new(units: Vec<Unit>, covariate_names: Option<Vec<String>>) -> Result<Self> {
        let p = units.first().map(|u| u.x.len()).ok_or_else(|| {
            Error::InvalidDataset("dataset has no units".into())
        })?;
        for (i, u) in units.iter().enumerate() {
            u.check(p).map_err(|msg| Error::InvalidRow { row: i + 1, msg })?;
        }
        let names = covariate_names.unwrap_or_else(|| (1..=p).map(|j| format!("x{j}")).collect());
        if names.len() != p {
            return Err(Error::InvalidDataset(format!(
                "{} covariate names for {} covariates",
                names.len(),
                p
            )));
        }
        Ok(Self { units, p, covariate_names: names })
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    /// Number of single-arm-trial participants.
    pub fn n_r(&self) -> usize {
        self.units.iter().filter(|u| u.s).count()
    }

    /// Number of external controls.
    pub fn n_e(&self) -> usize {
        self.units.iter().filter(|u| !u.s).count()
    }

    pub fn counts(&self) -> StratumCounts {
        let mut c = StratumCounts { s1_r1: 0, s1_r0: 0, s0_r1: 0, s0_r0: 0 };
        for u in &self.units {
            match (u.s, u.r) {
                (true, true) => c.s1_r1 += 1,
                (true, false) => c.s1_r0 += 1,
                (false, true) => c.s0_r1 += 1,
                (false, false) => c.s0_r0 += 1,
            }
        }
        c
    }

    pub fn stratify(&self, s: bool, r: Option<bool>) -> DatasetView<'_> {
        let indices = self
            .units
            .iter()
            .enumerate()
            .filter(|(_, u)| u.s == s && r.map_or(true, |r| u.r == r))
            .map(|(i, _)| i)
            .collect();
        DatasetView { ds: self, indices, stratum: Stratum { s, r } }
    }

    /// Error naming the first empty stratum among those estimation needs.
    pub fn require_estimable(&self) -> Result<()> {
        let c = self.counts();
        let checks = [
            (c.s1_r1 + c.s1_r0, Stratum { s: true, r: None }),
            (c.s0_r1 + c.s0_r0, Stratum { s: false, r: None }),
            (c.s1_r1, Stratum { s: true, r: Some(true) }),
            (c.s0_r1, Stratum { s: false, r: Some(true) }),
        ];
        for (count, stratum) in checks {
            if count == 0 {
                return Err(Error::EmptyStratum(stratum));
            }
        }
        Ok(())
    }

    /// Dataset built from a subset (with repetition) of this dataset's units.
    pub fn resample(&self, indices: &[usize]) -> Self {
        Self {
            units: indices.iter().map(|&i| self.units[i].clone()).collect(),
            p: self.p,
            covariate_names: self.covariate_names.clone(),
        }
    }

    pub fn summary(&self) -> DatasetSummary {
        let mean_of = |pred: &dyn Fn(&Unit) -> bool| -> Vec<f64> {
            let mut sums = vec![0.0; self.p];
            let mut n = 0usize;
            for u in self.units.iter().filter(|u| pred(u)) {
                n += 1;
                for (acc, v) in sums.iter_mut().zip(&u.x) {
                    *acc += v;
                }
            }
            sums.iter().map(|s| if n > 0 { s / n as f64 } else { f64::NAN }).collect()
        };
        DatasetSummary {
            n: self.n(),
            n_r: self.n_r(),
            n_e: self.n_e(),
            counts: self.counts(),
            covariate_names: self.covariate_names.clone(),
            covariate_means: mean_of(&|_| true),
            covariate_means_sat: mean_of(&|u| u.s),
            covariate_means_ec: mean_of(&|u| !u.s),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.covariate_names.iter().map(String::as_str).collect();
        header.extend(["s", "r", "y"]);
        w.write_record(&header)?;
        for u in &self.units {
            let mut rec: Vec<String> = u.x.iter().map(|v| v.to_string()).collect();
            rec.push((u.s as u8).to_string());
            rec.push((u.r as u8).to_string());
            rec.push(u.y.map(|y| y.to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Borrowed view over the units of one stratum.
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    ds: &'a Dataset,
    indices: Vec<usize>,
    stratum: Stratum,
}

impl<'a> DatasetView<'a> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn stratum(&self) -> Stratum {
        self.stratum
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a Unit> + '_ {
        self.indices.iter().map(move |&i| &self.ds.units[i])
    }

    pub fn non_empty(self) -> Result<Self> {
        if self.is_empty() {
            Err(Error::EmptyStratum(self.stratum))
        } else {
            Ok(self)
        }
    }
}

fn parse_binary(cell: &str, name: &str, row: usize) -> Result<bool> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::InvalidRow {
        row,
        msg: format!("{name} value `{cell}` is not numeric"),
    })?;
    if v == 0.0 {
        Ok(false)
    } else if v == 1.0 {
        Ok(true)
    } else {
        Err(Error::InvalidRow { row, msg: format!("{name} out of {{0,1}}") })
    }
}

/// Read a dataset from CSV. Rows are numbered from 1, not counting the header.
///
/// When `schema.covariates` is empty every column other than the `s`, `r`
/// and `y` columns is taken as a covariate, in file order.
pub fn read_dataset<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| index.get(name).copied().ok_or_else(|| Error::MissingColumn(name.into()));

    let covariates: Vec<String> = if schema.covariates.is_empty() {
        headers
            .iter()
            .filter(|h| *h != schema.s && *h != schema.r && *h != schema.y)
            .map(str::to_string)
            .collect()
    } else {
        schema.covariates.clone()
    };
    let x_cols = covariates.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let (s_col, r_col, y_col) = (col(&schema.s)?, col(&schema.r)?, col(&schema.y)?);

    let mut units = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let x = x_cols
            .iter()
            .zip(&covariates)
            .map(|(&c, name)| {
                cell(c).parse::<f64>().map_err(|_| Error::InvalidRow {
                    row,
                    msg: format!("covariate {name} value `{}` is not numeric", cell(c)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let s = parse_binary(cell(s_col), "s", row)?;
        let r = parse_binary(cell(r_col), "r", row)?;
        let y_raw = cell(y_col);
        let y = if schema.is_missing(y_raw) {
            None
        } else {
            Some(y_raw.parse::<f64>().map_err(|_| Error::InvalidRow {
                row,
                msg: format!("outcome value `{y_raw}` is not numeric"),
            })?)
        };
        let unit = Unit { x, s, r, y };
        unit.check(covariates.len()).map_err(|msg| Error::InvalidRow { row, msg })?;
        units.push(unit);
    }
    Dataset::new(units, Some(covariates))
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let f = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(f), schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_ROWS: &str = "x,s,r,y\n1.0,1,1,2.0\n0.5,0,1,1.0\n0.2,0,0,\n";

    fn schema() -> Schema {
        Schema::parse("x,s,r,y").unwrap()
    }

    #[test]
    fn loads_three_row_example() {
        let ds = read_dataset(THREE_ROWS.as_bytes(), &schema()).unwrap();
        assert_eq!((ds.n(), ds.n_r(), ds.n_e()), (3, 1, 2));
        assert_eq!(ds.units()[2].y, None);
        assert_eq!(ds.units()[0].y, Some(2.0));
    }

    #[test]
    fn stratify_counts() {
        let ds = read_dataset(THREE_ROWS.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.stratify(true, None).len(), 1);
        assert_eq!(ds.stratify(false, Some(true)).len(), 1);
        assert_eq!(ds.stratify(false, Some(false)).len(), 1);
        assert_eq!(ds.stratify(true, None).len() + ds.stratify(false, None).len(), ds.n());
        assert_eq!(ds.counts().total(), ds.n());
    }

    #[test]
    fn rejects_s_out_of_range() {
        let csv = "x,s,r,y\n1.0,1,1,2.0\n0.5,2,1,1.0\n";
        let err = read_dataset(csv.as_bytes(), &schema()).unwrap_err();
        assert_eq!(err.to_string(), "s out of {0,1} at row 2");
    }

    #[test]
    fn rejects_outcome_after_intercurrent_event() {
        let csv = "x,s,r,y\n1.0,1,0,3.1\n";
        let err = read_dataset(csv.as_bytes(), &schema()).unwrap_err();
        assert_eq!(err.to_string(), "outcome present after intercurrent event at row 1");
    }

    #[test]
    fn rejects_missing_outcome_without_event() {
        let csv = "x,s,r,y\n1.0,1,1,\n";
        let err = read_dataset(csv.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::InvalidRow { row: 1, .. }), "{err}");
    }

    #[test]
    fn na_token_is_configurable() {
        let csv = "x,s,r,y\n1.0,1,1,2\n0.3,0,0,NA\n";
        assert!(read_dataset(csv.as_bytes(), &schema()).is_err());
        let ds = read_dataset(csv.as_bytes(), &schema().with_missing_tokens(&["", "NA"])).unwrap();
        assert_eq!(ds.units()[1].y, None);
    }

    #[test]
    fn schema_names_columns_in_any_order() {
        let csv = "y,r,id,b,a,s\n2.0,1,7,0.1,0.2,1\n";
        let ds = read_dataset(csv.as_bytes(), &Schema::parse("a,b,s,r,y").unwrap()).unwrap();
        assert_eq!(ds.units()[0].x, vec![0.2, 0.1]);
        let err = read_dataset(csv.as_bytes(), &Schema::parse("a,c,s,r,y").unwrap()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "c"));
    }

    #[test]
    fn write_then_read_round_trips() {
        let ds = read_dataset(THREE_ROWS.as_bytes(), &schema()).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), &schema()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn estimability_names_empty_stratum() {
        let csv = "x,s,r,y\n1.0,1,1,2.0\n0.5,0,0,\n";
        let ds = read_dataset(csv.as_bytes(), &schema()).unwrap();
        let err = ds.require_estimable().unwrap_err();
        assert_eq!(err.to_string(), "empty stratum (S=0,R=1)");
    }
}
