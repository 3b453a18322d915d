//! CSV ingestion: per-unit feature tables, merging, derived population
//! density, missing-value imputation, and daily case series.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diag::{codes, Warning};
use crate::stats;

pub const POPULATION_DENSITY: &str = "population_density";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {source_name}: {source}")]
    Csv {
        source_name: String,
        #[source]
        source: csv::Error,
    },
    #[error("no geo-unit key column found for schema {0}")]
    MissingKeyColumn(Schema),
    #[error("duplicate geo-unit {0}")]
    DuplicateUnit(String),
    #[error("duplicate feature name {0}")]
    DuplicateFeature(String),
    #[error("empty table: {0}")]
    EmptyTable(String),
    #[error("value matrix is {rows}x{cols} but table has {units} units and {features} features")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        units: usize,
        features: usize,
    },
    #[error("no tables to merge")]
    NoTables,
    #[error("feature name {0} appears in more than one table")]
    FeatureNameCollision(String),
    #[error("merged tables share no geo-units")]
    EmptyIntersection,
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("land area for unit {unit} is {value}, must be strictly positive")]
    NonPositiveLandArea { unit: String, value: f64 },
    #[error("column {0} has no non-missing values")]
    AllMissingColumn(String),
    #[error("dates for unit {unit} are not contiguous: {detail}")]
    NonContiguousDates { unit: String, detail: String },
    #[error("negative count {value} for unit {unit} on {date}")]
    NegativeCount {
        unit: String,
        date: NaiveDate,
        value: f64,
    },
    #[error("series for unit {unit} has {len} days, need at least 2")]
    SeriesTooShort { unit: String, len: usize },
    #[error("unparseable date {0:?}")]
    BadDate(String),
    #[error("unparseable count {value:?} for unit {unit}")]
    BadCount { unit: String, value: String },
    #[error("empty geo-unit code")]
    EmptyUnit,
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// Identifier of a spatial unit, e.g. a 5-digit ZIP code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GeoUnitId(String);

impl GeoUnitId {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.trim().is_empty() {
            return Err(IngestError::EmptyUnit);
        }
        Ok(Self(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GeoUnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Source layout of a feature CSV. The schema decides which header names are
/// accepted as the geo-unit key and how strictly keys are validated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    Census,
    Subway,
    Citibike,
    Generic,
}

impl Schema {
    fn key_candidates(self) -> &'static [&'static str] {
        match self {
            Schema::Census => &["geo_id", "zipcode", "zip_code", "zip", "zcta"],
            Schema::Subway | Schema::Citibike => &["zipcode", "zip_code", "zip"],
            Schema::Generic => &["unit", "geo_id", "zipcode", "zip_code", "zip"],
        }
    }

    fn key_is_valid(self, key: &str) -> bool {
        match self {
            Schema::Generic => !key.is_empty() && !key.chars().any(char::is_whitespace),
            _ => key.len() == 5 && key.bytes().all(|b| b.is_ascii_digit()),
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Schema::Census => "census",
            Schema::Subway => "subway",
            Schema::Citibike => "citibike",
            Schema::Generic => "generic",
        };
        f.write_str(s)
    }
}

/// Units × named numeric features. Missing cells are carried as NaN until
/// [`impute_missing`] runs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    units: Vec<GeoUnitId>,
    feature_names: Vec<String>,
    values: Array2<f64>,
}

impl FeatureTable {
    pub fn new(units: Vec<GeoUnitId>, feature_names: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != units.len() || values.ncols() != feature_names.len() {
            return Err(IngestError::ShapeMismatch {
                rows: values.nrows(),
                cols: values.ncols(),
                units: units.len(),
                features: feature_names.len(),
            });
        }
        let mut seen = HashSet::new();
        for u in &units {
            if !seen.insert(u.as_str()) {
                return Err(IngestError::DuplicateUnit(u.to_string()));
            }
        }
        let mut seen = HashSet::new();
        for f in &feature_names {
            if !seen.insert(f.as_str()) {
                return Err(IngestError::DuplicateFeature(f.clone()));
            }
        }
        Ok(Self {
            units,
            feature_names,
            values,
        })
    }

    pub fn units(&self) -> &[GeoUnitId] {
        &self.units
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn column(&self, name: &str) -> Option<ArrayView1<'_, f64>> {
        self.column_index(name).map(|j| self.values.column(j))
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_finite()).count()
    }

    /// Rows reordered / filtered to `indices`.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureTable {
        FeatureTable {
            units: indices.iter().map(|&i| self.units[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            values: self.values.select(Axis(0), indices),
        }
    }

    /// Columns restricted to `names`, in the order given.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureTable> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| IngestError::MissingColumn(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureTable {
            units: self.units.clone(),
            feature_names: names.to_vec(),
            values: self.values.select(Axis(1), &idx),
        })
    }

    /// Writes the table as CSV with a leading `unit` column. Missing cells are
    /// written as empty fields.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["unit".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for (i, unit) in self.units.iter().enumerate() {
            let mut rec = vec![unit.to_string()];
            rec.extend(self.values.row(i).iter().map(|v| {
                if v.is_finite() {
                    v.to_string()
                } else {
                    String::new()
                }
            }));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn is_missing_token(s: &str) -> bool {
    matches!(
        s.to_ascii_lowercase().as_str(),
        "" | "na" | "n/a" | "nan" | "null" | "none"
    )
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(source_name: &str) -> impl Fn(csv::Error) -> IngestError + '_ {
    move |source| IngestError::Csv {
        source_name: source_name.to_string(),
        source,
    }
}

pub fn load_feature_csv(path: &Path, schema: Schema) -> Result<(FeatureTable, Vec<Warning>)> {
    read_feature_csv(open(path)?, schema, &path.display().to_string())
}

/// Parses a feature CSV. Columns with any non-numeric, non-missing cell are
/// dropped with a warning; rows whose key fails schema validation are rejected
/// with a warning.
pub fn read_feature_csv<R: Read>(
    reader: R,
    schema: Schema,
    source_name: &str,
) -> Result<(FeatureTable, Vec<Warning>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(csv_err(source_name))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let key_col = schema
        .key_candidates()
        .iter()
        .find_map(|cand| headers.iter().position(|h| h.eq_ignore_ascii_case(cand)))
        .or(if schema == Schema::Generic && !headers.is_empty() {
            Some(0)
        } else {
            None
        })
        .ok_or(IngestError::MissingKeyColumn(schema))?;

    let mut warnings = Vec::new();
    let mut units = Vec::new();
    let mut seen = HashSet::new();
    let mut cells: Vec<Vec<String>> = Vec::new();
    for (row_no, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err(source_name))?;
        let key = record.get(key_col).unwrap_or("").trim().to_string();
        if !schema.key_is_valid(&key) {
            warnings.push(Warning::new(
                codes::BAD_KEY,
                Some(&key),
                format!("{source_name} row {} rejected", row_no + 2),
            ));
            continue;
        }
        if !seen.insert(key.clone()) {
            return Err(IngestError::DuplicateUnit(key));
        }
        units.push(GeoUnitId(key));
        cells.push(record.iter().map(|c| c.trim().to_string()).collect());
    }

    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (j, name) in headers.iter().enumerate() {
        if j == key_col {
            continue;
        }
        let mut col = Vec::with_capacity(cells.len());
        let mut bad = None;
        for row in &cells {
            let raw = row.get(j).map(String::as_str).unwrap_or("");
            if is_missing_token(raw) {
                col.push(f64::NAN);
            } else {
                match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => col.push(v),
                    Ok(_) => col.push(f64::NAN),
                    Err(_) => {
                        bad = Some(raw.to_string());
                        break;
                    }
                }
            }
        }
        match bad {
            Some(token) => warnings.push(Warning::global(
                codes::DROPPED_COLUMN,
                format!("{source_name} column {name} is non-numeric (e.g. {token:?})"),
            )),
            None => {
                names.push(name.clone());
                columns.push(col);
            }
        }
    }

    if units.is_empty() {
        return Err(IngestError::EmptyTable(format!("{source_name} has no valid rows")));
    }
    if names.is_empty() {
        return Err(IngestError::EmptyTable(format!("{source_name} has no numeric columns")));
    }
    let values = Array2::from_shape_fn((units.len(), names.len()), |(i, j)| columns[j][i]);
    Ok((FeatureTable::new(units, names, values)?, warnings))
}

/// Joins tables on geo-unit. Keeps units present in every table (in the order
/// of the first table) and concatenates feature columns in input order.
pub fn merge_tables(tables: &[FeatureTable]) -> Result<FeatureTable> {
    let (first, rest) = tables.split_first().ok_or(IngestError::NoTables)?;
    let mut names_seen = HashSet::new();
    for t in tables {
        for f in &t.feature_names {
            if !names_seen.insert(f.as_str()) {
                return Err(IngestError::FeatureNameCollision(f.clone()));
            }
        }
    }
    let lookups: Vec<HashMap<&GeoUnitId, usize>> = rest
        .iter()
        .map(|t| t.units.iter().enumerate().map(|(i, u)| (u, i)).collect())
        .collect();
    let mut rows: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, u) in first.units.iter().enumerate() {
        let others: Option<Vec<usize>> = lookups.iter().map(|l| l.get(u).copied()).collect();
        if let Some(others) = others {
            rows.push((i, others));
        }
    }
    if rows.is_empty() {
        return Err(IngestError::EmptyIntersection);
    }
    let width: usize = tables.iter().map(FeatureTable::n_features).sum();
    let mut values = Array2::zeros((rows.len(), width));
    for (r, (i0, others)) in rows.iter().enumerate() {
        let mut offset = 0;
        for (t, &i) in tables.iter().zip(std::iter::once(i0).chain(others.iter())) {
            let w = t.n_features();
            values
                .row_mut(r)
                .slice_mut(ndarray::s![offset..offset + w])
                .assign(&t.values.row(i));
            offset += w;
        }
    }
    let units = rows.iter().map(|(i, _)| first.units[*i].clone()).collect();
    let names = tables.iter().flat_map(|t| t.feature_names.iter().cloned()).collect();
    FeatureTable::new(units, names, values)
}

/// Appends `population_density = population / land_area`.
pub fn add_population_density(table: &FeatureTable, population_col: &str, land_area_col: &str) -> Result<FeatureTable> {
    let pop = table
        .column(population_col)
        .ok_or_else(|| IngestError::MissingColumn(population_col.to_string()))?;
    let area = table
        .column(land_area_col)
        .ok_or_else(|| IngestError::MissingColumn(land_area_col.to_string()))?;
    if table.column_index(POPULATION_DENSITY).is_some() {
        return Err(IngestError::FeatureNameCollision(POPULATION_DENSITY.to_string()));
    }
    for (u, &a) in table.units.iter().zip(area.iter()) {
        // NaN fails this comparison as well.
        if !(a > 0.0) {
            return Err(IngestError::NonPositiveLandArea {
                unit: u.to_string(),
                value: a,
            });
        }
    }
    let density = &pop / &area;
    let mut values = table.values.clone();
    values
        .push_column(density.view())
        .expect("column length matches row count");
    let mut names = table.feature_names.clone();
    names.push(POPULATION_DENSITY.to_string());
    FeatureTable::new(table.units.clone(), names, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputePolicy {
    #[default]
    ColumnMedian,
    DropUnit,
}

pub fn impute_missing(table: &FeatureTable, policy: ImputePolicy) -> Result<FeatureTable> {
    match policy {
        ImputePolicy::ColumnMedian => {
            let mut values = table.values.clone();
            for (j, mut col) in values.axis_iter_mut(Axis(1)).enumerate() {
                let present: Vec<f64> = col.iter().copied().filter(|v| v.is_finite()).collect();
                if present.len() == col.len() {
                    continue;
                }
                if present.is_empty() {
                    return Err(IngestError::AllMissingColumn(table.feature_names[j].clone()));
                }
                let med = stats::median(&present);
                col.mapv_inplace(|v| if v.is_finite() { v } else { med });
            }
            FeatureTable::new(table.units.clone(), table.feature_names.clone(), values)
        }
        ImputePolicy::DropUnit => {
            let keep: Vec<usize> = (0..table.n_units())
                .filter(|&i| table.values.row(i).iter().all(|v| v.is_finite()))
                .collect();
            if keep.is_empty() {
                return Err(IngestError::EmptyTable("every unit has a missing value".into()));
            }
            Ok(table.select_rows(&keep))
        }
    }
}

/// Daily new positive cases for one unit over a contiguous date window.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSeries {
    unit: GeoUnitId,
    dates: Vec<NaiveDate>,
    new_cases: Vec<f64>,
}

impl CaseSeries {
    pub fn new(unit: GeoUnitId, dates: Vec<NaiveDate>, new_cases: Vec<f64>) -> Result<Self> {
        if dates.len() != new_cases.len() || dates.len() < 2 {
            return Err(IngestError::SeriesTooShort {
                unit: unit.to_string(),
                len: dates.len().min(new_cases.len()),
            });
        }
        check_contiguous(&unit, &dates)?;
        if let Some((d, &v)) = dates.iter().zip(&new_cases).find(|(_, v)| !(**v >= 0.0)) {
            return Err(IngestError::NegativeCount {
                unit: unit.to_string(),
                date: *d,
                value: v,
            });
        }
        Ok(Self { unit, dates, new_cases })
    }

    /// Builds a series of `new_cases.len()` days starting at `start`.
    pub fn from_start(unit: GeoUnitId, start: NaiveDate, new_cases: Vec<f64>) -> Result<Self> {
        let dates = start.iter_days().take(new_cases.len()).collect();
        Self::new(unit, dates, new_cases)
    }

    pub fn unit(&self) -> &GeoUnitId {
        &self.unit
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn new_cases(&self) -> &[f64] {
        &self.new_cases
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }
}

fn check_contiguous(unit: &GeoUnitId, dates: &[NaiveDate]) -> Result<()> {
    for w in dates.windows(2) {
        if w[0].succ_opt() != Some(w[1]) {
            return Err(IngestError::NonContiguousDates {
                unit: unit.to_string(),
                detail: format!("{} followed by {}", w[0], w[1]),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseMode {
    DailyNew,
    #[default]
    Cumulative,
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    let s = s.trim();
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(s, "%m/%d/%Y"))
        .map_err(|_| IngestError::BadDate(s.to_string()))
}

pub fn load_case_series(path: &Path, mode: CaseMode) -> Result<(BTreeMap<GeoUnitId, CaseSeries>, Vec<Warning>)> {
    read_case_series(open(path)?, mode, &path.display().to_string())
}

/// Reads case counts in long (`unit,date,count`) or wide (`unit,<date>,<date>,...`)
/// layout. A header containing a `date` column selects the long layout.
pub fn read_case_series<R: Read>(
    reader: R,
    mode: CaseMode,
    source_name: &str,
) -> Result<(BTreeMap<GeoUnitId, CaseSeries>, Vec<Warning>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(csv_err(source_name))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut raw: BTreeMap<GeoUnitId, Vec<(NaiveDate, f64)>> = BTreeMap::new();

    let parse_count = |unit: &str, s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| IngestError::BadCount {
                unit: unit.to_string(),
                value: s.to_string(),
            })
    };

    if let Some(date_col) = headers.iter().position(|h| h.eq_ignore_ascii_case("date")) {
        let unit_col = Schema::Generic
            .key_candidates()
            .iter()
            .find_map(|c| headers.iter().position(|h| h.eq_ignore_ascii_case(c)))
            .unwrap_or(if date_col == 0 { 1 } else { 0 });
        let count_col = (0..headers.len())
            .find(|&j| j != date_col && j != unit_col)
            .ok_or_else(|| IngestError::MissingColumn("count".into()))?;
        for record in rdr.records() {
            let record = record.map_err(csv_err(source_name))?;
            let unit = GeoUnitId::new(record.get(unit_col).unwrap_or("").trim())?;
            let date = parse_date(record.get(date_col).unwrap_or(""))?;
            let count = parse_count(unit.as_str(), record.get(count_col).unwrap_or(""))?;
            raw.entry(unit).or_default().push((date, count));
        }
    } else {
        let dates = headers
            .iter()
            .skip(1)
            .map(|h| parse_date(h))
            .collect::<Result<Vec<_>>>()?;
        for record in rdr.records() {
            let record = record.map_err(csv_err(source_name))?;
            let unit = GeoUnitId::new(record.get(0).unwrap_or("").trim())?;
            if raw.contains_key(&unit) {
                return Err(IngestError::DuplicateUnit(unit.to_string()));
            }
            let mut obs = Vec::with_capacity(dates.len());
            for (j, d) in dates.iter().enumerate() {
                obs.push((*d, parse_count(unit.as_str(), record.get(j + 1).unwrap_or(""))?));
            }
            raw.insert(unit, obs);
        }
    }

    let mut warnings = Vec::new();
    let mut out = BTreeMap::new();
    for (unit, mut obs) in raw {
        obs.sort_by_key(|(d, _)| *d);
        if let Some(w) = obs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(IngestError::NonContiguousDates {
                unit: unit.to_string(),
                detail: format!("duplicate date {}", w[0].0),
            });
        }
        if let Some((d, v)) = obs.iter().find(|(_, v)| *v < 0.0) {
            return Err(IngestError::NegativeCount {
                unit: unit.to_string(),
                date: *d,
                value: *v,
            });
        }
        let dates: Vec<NaiveDate> = obs.iter().map(|(d, _)| *d).collect();
        let counts: Vec<f64> = obs.iter().map(|(_, v)| *v).collect();
        let new_cases = match mode {
            CaseMode::DailyNew => counts,
            CaseMode::Cumulative => {
                let (new_cases, clamped) = cumulative_to_daily(&counts);
                for i in clamped {
                    warnings.push(Warning::new(
                        codes::NEGATIVE_DIFF,
                        Some(unit.as_str()),
                        format!("cumulative count fell on {}; new cases clamped to 0", dates[i]),
                    ));
                }
                new_cases
            }
        };
        let series = CaseSeries::new(unit.clone(), dates, new_cases)?;
        out.insert(unit, series);
    }
    Ok((out, warnings))
}

/// First differences with the first day kept as-is; negative differences are
/// clamped to zero and their indices returned.
pub fn cumulative_to_daily(counts: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut clamped = Vec::new();
    let mut out = Vec::with_capacity(counts.len());
    for (i, &c) in counts.iter().enumerate() {
        if i == 0 {
            out.push(c);
            continue;
        }
        let d = c - counts[i - 1];
        if d < 0.0 {
            clamped.push(i);
            out.push(0.0);
        } else {
            out.push(d);
        }
    }
    (out, clamped)
}
