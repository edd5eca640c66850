//! Experimental datasets: the flammability-index table, the cone-calorimetry
//! table and generic descriptor matrices.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance between a published FI cell and the value recomputed
/// from its inputs. The published column carries four truncated decimals.
pub const FI_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("{field} must be strictly positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("empty input: no header row")]
    Empty,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

impl IngestError {
    fn row(row: usize, message: impl Into<String>) -> Self {
        IngestError::Row {
            row,
            message: message.into(),
        }
    }
}

/// Flammability class assigned from an FI value or by an expert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FiLabel {
    L,
    M,
    H,
}

impl FiLabel {
    pub const ALL: [FiLabel; 3] = [FiLabel::L, FiLabel::M, FiLabel::H];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FiLabel::L => "L",
            FiLabel::M => "M",
            FiLabel::H => "H",
        }
    }
}

impl fmt::Display for FiLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FiLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "L" => Ok(FiLabel::L),
            "M" => Ok(FiLabel::M),
            "H" => Ok(FiLabel::H),
            other => Err(format!("unknown label `{other}` (expected L, M or H)")),
        }
    }
}

/// Result of placing an FI value against [`LabelThresholds`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeClass {
    Label(FiLabel),
    Unclassified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ClosedInterval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Closed FI ranges for the Low, Medium and High classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelThresholds {
    pub low: ClosedInterval,
    pub medium: ClosedInterval,
    pub high: ClosedInterval,
}

impl Default for LabelThresholds {
    fn default() -> Self {
        Self {
            low: ClosedInterval::new(0.0203, 0.0376),
            medium: ClosedInterval::new(0.0382, 0.041),
            high: ClosedInterval::new(0.0418, 0.1652),
        }
    }
}

impl LabelThresholds {
    /// Intervals must be well formed, disjoint and ordered low < medium < high.
    pub fn is_valid(&self) -> bool {
        let ordered = |a: &ClosedInterval| a.lo <= a.hi;
        ordered(&self.low)
            && ordered(&self.medium)
            && ordered(&self.high)
            && self.low.hi < self.medium.lo
            && self.medium.hi < self.high.lo
    }
}

/// One row of the FI table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolymerRecord {
    pub name: String,
    pub mol_wt: f64,
    pub cp_molar: f64,
    pub t_ignition: f64,
    pub heat_combustion: f64,
    pub fi: f64,
    pub label: Option<FiLabel>,
}

impl PolymerRecord {
    /// FI recomputed from the thermophysical inputs.
    pub fn computed_fi(&self) -> Result<f64, IngestError> {
        compute_fi(self.cp_molar, self.mol_wt, self.t_ignition, self.heat_combustion)
    }
}

/// One row of the cone-calorimetry table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeRecord {
    pub name: String,
    pub tig: f64,
    pub phrr: f64,
    pub tsr: f64,
    pub figra: f64,
}

fn require_positive(field: &'static str, value: f64) -> Result<(), IngestError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(IngestError::NonPositive { field, value })
    }
}

/// Flammability index using the per-gram specific heat:
/// `(cp_molar / mol_wt) * t_ignition / heat_combustion`.
pub fn compute_fi(
    cp_molar: f64,
    mol_wt: f64,
    t_ignition: f64,
    heat_combustion: f64,
) -> Result<f64, IngestError> {
    require_positive("cp_molar", cp_molar)?;
    require_positive("mol_wt", mol_wt)?;
    require_positive("t_ignition", t_ignition)?;
    require_positive("heat_combustion", heat_combustion)?;
    Ok((cp_molar / mol_wt) * t_ignition / heat_combustion)
}

/// Fire growth rate: peak heat release rate over the time to reach it.
pub fn compute_figra(phrr: f64, t_peak: f64) -> Result<f64, IngestError> {
    if !phrr.is_finite() || phrr < 0.0 {
        return Err(IngestError::NonPositive {
            field: "phrr",
            value: phrr,
        });
    }
    require_positive("t_peak", t_peak)?;
    Ok(phrr / t_peak)
}

pub fn range_label(fi: f64, thresholds: &LabelThresholds) -> RangeClass {
    if thresholds.low.contains(fi) {
        RangeClass::Label(FiLabel::L)
    } else if thresholds.medium.contains(fi) {
        RangeClass::Label(FiLabel::M)
    } else if thresholds.high.contains(fi) {
        RangeClass::Label(FiLabel::H)
    } else {
        RangeClass::Unclassified
    }
}

/// Ordered, named numeric matrix under a descriptor catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub catalog_id: String,
    pub target_column: Option<String>,
    /// Optional per-row identifiers (the `name` column of a feature CSV).
    #[serde(default)]
    pub row_names: Option<Vec<String>>,
}

impl FeatureTable {
    pub fn new(
        column_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        catalog_id: impl Into<String>,
    ) -> Result<Self, IngestError> {
        let table = Self {
            column_names,
            rows,
            catalog_id: catalog_id.into(),
            target_column: None,
            row_names: None,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let width = self.column_names.len();
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != width {
                return Err(IngestError::row(
                    i + 1,
                    format!("expected {width} values, found {}", row.len()),
                ));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(IngestError::row(
                    i + 1,
                    format!("non-finite value in column `{}`", self.column_names[j]),
                ));
            }
        }
        if let Some(names) = &self.row_names {
            if names.len() != self.rows.len() {
                return Err(IngestError::row(0, "row name count does not match rows"));
            }
        }
        if let Some(t) = &self.target_column {
            if self.column_index(t).is_none() {
                return Err(IngestError::MissingColumn(t.clone()));
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn column(&self, index: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[index]).collect()
    }

    pub fn with_target(mut self, target: impl Into<String>) -> Result<Self, IngestError> {
        let target = target.into();
        if self.column_index(&target).is_none() {
            return Err(IngestError::MissingColumn(target));
        }
        self.target_column = Some(target);
        Ok(self)
    }

    /// Names of every column except the target.
    pub fn feature_names(&self) -> Vec<String> {
        let target = self.target_index();
        self.column_names
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != target)
            .map(|(_, n)| n.clone())
            .collect()
    }

    pub fn target_index(&self) -> Option<usize> {
        self.target_column.as_deref().and_then(|t| self.column_index(t))
    }

    /// Splits into (feature rows, target values). Fails without a target column.
    pub fn split_target(&self) -> Result<(Vec<Vec<f64>>, Vec<f64>), IngestError> {
        let t = self
            .target_index()
            .ok_or_else(|| IngestError::MissingColumn("<target>".into()))?;
        let mut x = Vec::with_capacity(self.rows.len());
        let mut y = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let mut features = row.clone();
            y.push(features.remove(t));
            x.push(features);
        }
        Ok((x, y))
    }

    /// Appends a column on the right. `values` must have one entry per row.
    pub fn push_column(&mut self, name: impl Into<String>, values: &[f64]) -> Result<(), IngestError> {
        if values.len() != self.rows.len() {
            return Err(IngestError::row(
                0,
                format!("column has {} values for {} rows", values.len(), self.rows.len()),
            ));
        }
        self.column_names.push(name.into());
        for (row, v) in self.rows.iter_mut().zip(values) {
            row.push(*v);
        }
        self.validate()
    }

    /// New table holding only the named columns, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self, IngestError> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| IngestError::MissingColumn(n.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let rows = self
            .rows
            .iter()
            .map(|r| idx.iter().map(|&i| r[i]).collect())
            .collect();
        let target_column = self.target_column.clone().filter(|t| names.contains(t));
        Ok(Self {
            column_names: names.to_vec(),
            rows,
            catalog_id: self.catalog_id.clone(),
            target_column,
            row_names: self.row_names.clone(),
        })
    }

    /// Writes the table as CSV; row names, when present, lead as a `name` column.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut w = csv::Writer::from_writer(writer);
        let io_err = |e: csv::Error| IngestError::Io {
            path: "<output>".into(),
            message: e.to_string(),
        };
        let mut header: Vec<String> = Vec::new();
        if self.row_names.is_some() {
            header.push("name".into());
        }
        header.extend(self.column_names.iter().cloned());
        w.write_record(&header).map_err(io_err)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            if let Some(names) = &self.row_names {
                rec.push(names[i].clone());
            }
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(io_err)?;
        }
        w.flush().map_err(|e| IngestError::Io {
            path: "<output>".into(),
            message: e.to_string(),
        })
    }
}

struct RawCsv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_csv<R: Read>(reader: R) -> Result<RawCsv, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(IngestError::Empty),
        Some(rec) => rec
            .map_err(|e| IngestError::row(1, e.to_string()))?
            .iter()
            .map(|s| s.trim_start_matches('\u{feff}').to_string())
            .collect::<Vec<_>>(),
    };
    if header.iter().all(|h| h.is_empty()) {
        return Err(IngestError::Empty);
    }
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(|e| IngestError::row(i + 1, e.to_string()))?;
        if rec.iter().all(|s| s.is_empty()) {
            continue;
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(RawCsv { header, rows })
}

fn open(path: &Path) -> Result<std::fs::File, IngestError> {
    std::fs::File::open(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

struct Columns<'a> {
    header: &'a [String],
}

impl<'a> Columns<'a> {
    fn index(&self, name: &str) -> Result<usize, IngestError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    }
}

fn cell<'r>(row: &'r [String], idx: usize, row_no: usize, column: &str) -> Result<&'r str, IngestError> {
    row.get(idx)
        .map(String::as_str)
        .ok_or_else(|| IngestError::row(row_no, format!("missing value for `{column}`")))
}

fn parse_number(text: &str, row_no: usize, column: &str) -> Result<f64, IngestError> {
    let v: f64 = text
        .parse()
        .map_err(|_| IngestError::row(row_no, format!("`{column}` is not numeric: `{text}`")))?;
    if !v.is_finite() {
        return Err(IngestError::row(row_no, format!("`{column}` is not finite")));
    }
    Ok(v)
}

fn positive_cell(row: &[String], idx: usize, row_no: usize, column: &str) -> Result<f64, IngestError> {
    let v = parse_number(cell(row, idx, row_no, column)?, row_no, column)?;
    if v <= 0.0 {
        return Err(IngestError::row(
            row_no,
            format!("`{column}` must be > 0, got {v}"),
        ));
    }
    Ok(v)
}

/// Reads FI records. Row numbers in errors are 1-based data rows.
pub fn read_fi_table<R: Read>(reader: R) -> Result<Vec<PolymerRecord>, IngestError> {
    let raw = read_csv(reader)?;
    let cols = Columns { header: &raw.header };
    let name = cols.index("name")?;
    let mol_wt = cols.index("mol_wt")?;
    let cp = cols.index("cp_molar")?;
    let ti = cols.index("t_ignition")?;
    let dh = cols.index("heat_combustion")?;
    let fi = cols.index("fi")?;
    let label = cols.index("label").ok();

    let mut out = Vec::with_capacity(raw.rows.len());
    for (i, row) in raw.rows.iter().enumerate() {
        let r = i + 1;
        let rec = PolymerRecord {
            name: cell(row, name, r, "name")?.to_string(),
            mol_wt: positive_cell(row, mol_wt, r, "mol_wt")?,
            cp_molar: positive_cell(row, cp, r, "cp_molar")?,
            t_ignition: positive_cell(row, ti, r, "t_ignition")?,
            heat_combustion: positive_cell(row, dh, r, "heat_combustion")?,
            fi: positive_cell(row, fi, r, "fi")?,
            label: match label.map(|l| cell(row, l, r, "label")).transpose()? {
                None | Some("") => None,
                Some(text) => Some(text.parse().map_err(|e: String| IngestError::row(r, e))?),
            },
        };
        let recomputed = rec.computed_fi()?;
        if (recomputed - rec.fi).abs() > FI_TOLERANCE {
            return Err(IngestError::row(
                r,
                format!(
                    "FI {} of `{}` disagrees with recomputed {:.6}",
                    rec.fi, rec.name, recomputed
                ),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_fi_table(path: impl AsRef<Path>) -> Result<Vec<PolymerRecord>, IngestError> {
    read_fi_table(open(path.as_ref())?)
}

pub fn read_cone_table<R: Read>(reader: R) -> Result<Vec<ConeRecord>, IngestError> {
    let raw = read_csv(reader)?;
    let cols = Columns { header: &raw.header };
    let name = cols.index("name")?;
    let tig = cols.index("tig")?;
    let phrr = cols.index("phrr")?;
    let tsr = cols.index("tsr")?;
    let figra = cols.index("figra")?;

    raw.rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let r = i + 1;
            let tsr_v = parse_number(cell(row, tsr, r, "tsr")?, r, "tsr")?;
            if tsr_v < 0.0 {
                return Err(IngestError::row(r, format!("`tsr` must be >= 0, got {tsr_v}")));
            }
            Ok(ConeRecord {
                name: cell(row, name, r, "name")?.to_string(),
                tig: positive_cell(row, tig, r, "tig")?,
                phrr: positive_cell(row, phrr, r, "phrr")?,
                tsr: tsr_v,
                figra: positive_cell(row, figra, r, "figra")?,
            })
        })
        .collect()
}

pub fn load_cone_table(path: impl AsRef<Path>) -> Result<Vec<ConeRecord>, IngestError> {
    read_cone_table(open(path.as_ref())?)
}

/// Reads a numeric matrix. A `name` column, if present, becomes row names;
/// every other column must be numeric and finite.
pub fn read_feature_table<R: Read>(
    reader: R,
    target_column: Option<&str>,
    catalog_id: &str,
) -> Result<FeatureTable, IngestError> {
    let raw = read_csv(reader)?;
    let name_idx = raw.header.iter().position(|h| h == "name");
    let numeric: Vec<usize> = (0..raw.header.len()).filter(|&i| Some(i) != name_idx).collect();
    let width = raw.header.len();

    let mut rows = Vec::with_capacity(raw.rows.len());
    let mut names = Vec::new();
    for (i, row) in raw.rows.iter().enumerate() {
        let r = i + 1;
        if row.len() != width {
            return Err(IngestError::row(
                r,
                format!("ragged row: expected {width} cells, found {}", row.len()),
            ));
        }
        if let Some(n) = name_idx {
            names.push(row[n].clone());
        }
        let values = numeric
            .iter()
            .map(|&j| parse_number(&row[j], r, &raw.header[j]))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(values);
    }
    let mut table = FeatureTable {
        column_names: numeric.iter().map(|&j| raw.header[j].clone()).collect(),
        rows,
        catalog_id: catalog_id.to_string(),
        target_column: None,
        row_names: name_idx.map(|_| names),
    };
    if let Some(t) = target_column {
        table = table.with_target(t)?;
    }
    table.validate()?;
    Ok(table)
}

pub fn load_feature_table(
    path: impl AsRef<Path>,
    target_column: Option<&str>,
) -> Result<FeatureTable, IngestError> {
    read_feature_table(open(path.as_ref())?, target_column, "external")
}
