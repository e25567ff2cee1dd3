//! Ingestion of gridded multi-model data and the temporal slicing used by
//! the benchmark harness.
//!
//! Interchange format is CSV with the fixed header
//! `variable,year,month,location_id,lat,lon,observed,esm_1,...,esm_d`
//! (UTF-8, `.` decimal separator). Grid metadata lives in a companion file
//! with header `location_id,row,col,lat,lon`. Values are written in the
//! shortest decimal form that parses back to the identical double, so a
//! dump/load round trip is lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::baselines::GridSpec;
use crate::error::{Error, Result};
use crate::model::{HierarchicalDataset, SubTaskData};

/// One parsed data row.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedRecord {
    pub variable: String,
    pub year: i32,
    pub month: u8,
    pub location_id: u64,
    pub lat: f64,
    pub lon: f64,
    pub observed: f64,
    pub esm_values: Vec<f64>,
}

/// A timestamp on the shared axis. `season_year` equals `year` on loaded
/// tables; seasonal extraction may shift it (December belongs to the season
/// of the following January).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TimeStamp {
    pub year: i32,
    pub month: u8,
    pub season_year: i32,
}

/// Season selector. Months follow the Southern Hemisphere convention:
/// summer is December through February, winter June through August. Use
/// [`ClimateTable::filter_months`] directly for any other mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Season {
    Summer,
    Winter,
    Year,
}

impl Season {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "summer" => Ok(Season::Summer),
            "winter" => Ok(Season::Winter),
            "year" => Ok(Season::Year),
            other => Err(Error::Config(format!(
                "unknown season `{other}` (expected summer, winter, or year)"
            ))),
        }
    }
}

/// Validated gridded dataset: every (variable, location) series shares one
/// strictly increasing time axis. Variables are ordered lexicographically,
/// locations by id; those orders define super-task and sub-task indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ClimateTable {
    variables: Vec<String>,
    locations: Vec<u64>,
    /// (lat, lon) per location, aligned with `locations`.
    coords: Vec<(f64, f64)>,
    times: Vec<TimeStamp>,
    dim: usize,
    /// `[variable][location][time]`
    observed: Vec<Vec<Vec<f64>>>,
    /// `[variable][location]`, each `times.len() x dim`
    esm: Vec<Vec<DMatrix<f64>>>,
}

/// One train/test pair from a moving window.
#[derive(Debug, Clone)]
pub struct WindowSplit {
    pub start_year: i32,
    pub train_years: u32,
    pub train: ClimateTable,
    pub test: ClimateTable,
}

impl ClimateTable {
    /// Assembles and validates a table from parsed records.
    pub fn from_records(records: Vec<GriddedRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidInput("no data rows".into()));
        }
        let dim = records[0].esm_values.len();

        let mut variables: Vec<String> = records.iter().map(|r| r.variable.clone()).collect();
        variables.sort();
        variables.dedup();
        let mut locations: Vec<u64> = records.iter().map(|r| r.location_id).collect();
        locations.sort_unstable();
        locations.dedup();
        let mut times: Vec<(i32, u8)> = records.iter().map(|r| (r.year, r.month)).collect();
        times.sort_unstable();
        times.dedup();

        let var_index: BTreeMap<&str, usize> = variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.as_str(), i))
            .collect();
        let loc_index: BTreeMap<u64, usize> =
            locations.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let time_index: BTreeMap<(i32, u8), usize> =
            times.iter().enumerate().map(|(i, &t)| (t, i)).collect();

        let mut coords: Vec<Option<(f64, f64)>> = vec![None; locations.len()];
        let mut observed =
            vec![vec![vec![f64::NAN; times.len()]; locations.len()]; variables.len()];
        let mut esm = vec![
            vec![DMatrix::from_element(times.len(), dim, f64::NAN); locations.len()];
            variables.len()
        ];
        let mut seen =
            vec![vec![vec![false; times.len()]; locations.len()]; variables.len()];

        for r in &records {
            if r.esm_values.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "row for variable `{}` location {} has {} ensemble values, expected {}",
                    r.variable,
                    r.location_id,
                    r.esm_values.len(),
                    dim
                )));
            }
            if !(1..=12).contains(&r.month) {
                return Err(Error::InvalidInput(format!(
                    "month {} out of range for variable `{}` location {}",
                    r.month, r.variable, r.location_id
                )));
            }
            if !r.observed.is_finite()
                || !r.lat.is_finite()
                || !r.lon.is_finite()
                || r.esm_values.iter().any(|v| !v.is_finite())
            {
                return Err(Error::InvalidInput(format!(
                    "non-finite value for variable `{}` location {} at {}-{:02}",
                    r.variable, r.location_id, r.year, r.month
                )));
            }
            let v = var_index[r.variable.as_str()];
            let l = loc_index[&r.location_id];
            let ti = time_index[&(r.year, r.month)];
            if seen[v][l][ti] {
                return Err(Error::InvalidInput(format!(
                    "duplicate row for variable `{}` location {} at {}-{:02}",
                    r.variable, r.location_id, r.year, r.month
                )));
            }
            seen[v][l][ti] = true;
            match coords[l] {
                None => coords[l] = Some((r.lat, r.lon)),
                Some((lat, lon)) if lat == r.lat && lon == r.lon => {}
                Some(_) => {
                    return Err(Error::InvalidInput(format!(
                        "conflicting coordinates for location {}",
                        r.location_id
                    )))
                }
            }
            observed[v][l][ti] = r.observed;
            for (j, &val) in r.esm_values.iter().enumerate() {
                esm[v][l][(ti, j)] = val;
            }
        }

        // every series must cover the full shared axis
        for (v, variable) in variables.iter().enumerate() {
            for (l, &loc) in locations.iter().enumerate() {
                if let Some(ti) = seen[v][l].iter().position(|&s| !s) {
                    let (year, month) = times[ti];
                    return Err(Error::InvalidInput(format!(
                        "variable `{variable}` location {loc} is missing {year}-{month:02}; \
                         every location must cover the same time axis"
                    )));
                }
            }
        }

        Ok(Self {
            variables,
            locations,
            coords: coords.into_iter().map(|c| c.unwrap()).collect(),
            times: times
                .into_iter()
                .map(|(year, month)| TimeStamp {
                    year,
                    month,
                    season_year: year,
                })
                .collect(),
            dim,
            observed,
            esm,
        })
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn locations(&self) -> &[u64] {
        &self.locations
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn times(&self) -> &[TimeStamp] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    /// Keeps only the given months. With `roll_december` set, December rows
    /// are assigned to the season year of the following January.
    pub fn filter_months(&self, months: &[u8], roll_december: bool) -> ClimateTable {
        let keep: Vec<usize> = self
            .times
            .iter()
            .enumerate()
            .filter(|(_, t)| months.contains(&t.month))
            .map(|(i, _)| i)
            .collect();
        let mut out = self.slice_times(&keep);
        if roll_december {
            for t in &mut out.times {
                if t.month == 12 {
                    t.season_year = t.year + 1;
                }
            }
        }
        out
    }

    /// Seasonal extraction with the Southern Hemisphere month mapping.
    pub fn extract_season(&self, season: Season) -> ClimateTable {
        match season {
            Season::Summer => self.filter_months(&[12, 1, 2], true),
            Season::Winter => self.filter_months(&[6, 7, 8], false),
            Season::Year => self.clone(),
        }
    }

    fn slice_times(&self, keep: &[usize]) -> ClimateTable {
        let times = keep.iter().map(|&i| self.times[i]).collect();
        let observed = self
            .observed
            .iter()
            .map(|per_loc| {
                per_loc
                    .iter()
                    .map(|series| keep.iter().map(|&i| series[i]).collect())
                    .collect()
            })
            .collect();
        let esm = self
            .esm
            .iter()
            .map(|per_loc| {
                per_loc
                    .iter()
                    .map(|mat| {
                        DMatrix::from_fn(keep.len(), self.dim, |i, j| mat[(keep[i], j)])
                    })
                    .collect()
            })
            .collect();
        ClimateTable {
            variables: self.variables.clone(),
            locations: self.locations.clone(),
            coords: self.coords.clone(),
            times,
            dim: self.dim,
            observed,
            esm,
        }
    }

    /// Moving-window splits over season years: train on `train_years`
    /// consecutive years, test on the following `test_years`, advancing by
    /// `step_years`. Returns an empty sequence when the axis is too short.
    pub fn split_moving_window(
        &self,
        train_years: u32,
        test_years: u32,
        step_years: u32,
    ) -> Vec<WindowSplit> {
        let mut splits = Vec::new();
        if self.times.is_empty() || train_years == 0 || test_years == 0 || step_years == 0 {
            return splits;
        }
        let first = self.times.iter().map(|t| t.season_year).min().unwrap();
        let last = self.times.iter().map(|t| t.season_year).max().unwrap();
        let mut start = first;
        while start + (train_years + test_years) as i32 - 1 <= last {
            let train_end = start + train_years as i32; // exclusive
            let test_end = train_end + test_years as i32; // exclusive
            let train_idx: Vec<usize> = self
                .times
                .iter()
                .enumerate()
                .filter(|(_, t)| t.season_year >= start && t.season_year < train_end)
                .map(|(i, _)| i)
                .collect();
            let test_idx: Vec<usize> = self
                .times
                .iter()
                .enumerate()
                .filter(|(_, t)| t.season_year >= train_end && t.season_year < test_end)
                .map(|(i, _)| i)
                .collect();
            if !train_idx.is_empty() && !test_idx.is_empty() {
                splits.push(WindowSplit {
                    start_year: start,
                    train_years,
                    train: self.slice_times(&train_idx),
                    test: self.slice_times(&test_idx),
                });
            }
            start += step_years as i32;
        }
        splits
    }

    /// Sample matrix of one (variable, location) series, rows time-ordered.
    pub fn esm_matrix(&self, variable: usize, location: usize) -> &DMatrix<f64> {
        &self.esm[variable][location]
    }

    pub fn observed_series(&self, variable: usize, location: usize) -> &[f64] {
        &self.observed[variable][location]
    }

    /// Converts to the in-memory regression layout: one super-task per
    /// variable, one sub-task per location.
    pub fn to_hierarchical_dataset(&self) -> Result<HierarchicalDataset<f64>> {
        if self.times.is_empty() {
            return Err(Error::InvalidInput(
                "table has no timestamps to regress on".into(),
            ));
        }
        let super_tasks = (0..self.variables.len())
            .map(|v| {
                (0..self.locations.len())
                    .map(|l| {
                        SubTaskData::new(
                            self.esm[v][l].clone(),
                            nalgebra::DVector::from_vec(self.observed[v][l].clone()),
                        )
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        HierarchicalDataset::new(super_tasks)
    }
}

fn required_header(dim_hint: Option<usize>) -> Vec<String> {
    let mut cols: Vec<String> = [
        "variable",
        "year",
        "month",
        "location_id",
        "lat",
        "lon",
        "observed",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if let Some(d) = dim_hint {
        for j in 1..=d {
            cols.push(format!("esm_{j}"));
        }
    }
    cols
}

/// Loads and validates a gridded CSV file.
pub fn load_gridded_csv(path: &Path) -> Result<ClimateTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let headers = reader.headers()?.clone();
    let fixed = required_header(None);
    for (i, name) in fixed.iter().enumerate() {
        match headers.get(i) {
            Some(h) if h == name => {}
            Some(h) => {
                return Err(Error::parse(
                    1,
                    format!("expected column `{name}` at position {}, found `{h}`", i + 1),
                ))
            }
            None => return Err(Error::parse(1, format!("missing column `{name}`"))),
        }
    }
    let dim = headers.len() - fixed.len();
    if dim == 0 {
        return Err(Error::parse(1, "missing column `esm_1`".to_string()));
    }
    for j in 0..dim {
        let expected = format!("esm_{}", j + 1);
        let got = headers.get(fixed.len() + j).unwrap_or("");
        if got != expected {
            return Err(Error::parse(
                1,
                format!("expected column `{expected}`, found `{got}`"),
            ));
        }
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != headers.len() {
            return Err(Error::parse(
                line,
                format!("expected {} fields, found {}", headers.len(), row.len()),
            ));
        }
        let field = |idx: usize| row.get(idx).unwrap_or("");
        let parse_num = |idx: usize, what: &str| -> Result<f64> {
            field(idx).parse::<f64>().map_err(|_| {
                Error::parse(
                    line,
                    format!("non-numeric `{what}` value `{}`", field(idx)),
                )
            })
        };
        let year = field(1)
            .parse::<i32>()
            .map_err(|_| Error::parse(line, format!("non-numeric `year` value `{}`", field(1))))?;
        let month = field(2)
            .parse::<u8>()
            .map_err(|_| Error::parse(line, format!("invalid `month` value `{}`", field(2))))?;
        let location_id = field(3).parse::<u64>().map_err(|_| {
            Error::parse(line, format!("invalid `location_id` value `{}`", field(3)))
        })?;
        let mut esm_values = Vec::with_capacity(dim);
        for j in 0..dim {
            esm_values.push(parse_num(fixed.len() + j, &format!("esm_{}", j + 1))?);
        }
        records.push(GriddedRecord {
            variable: field(0).to_string(),
            year,
            month,
            location_id,
            lat: parse_num(4, "lat")?,
            lon: parse_num(5, "lon")?,
            observed: parse_num(6, "observed")?,
            esm_values,
        });
    }
    ClimateTable::from_records(records)
}

/// Writes a table in the interchange layout: variables, then locations, then
/// timestamps, each sorted, so output is deterministic.
pub fn write_gridded_csv(table: &ClimateTable, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&required_header(Some(table.dim)).join(","));
    out.push('\n');
    for (v, variable) in table.variables.iter().enumerate() {
        for (l, &loc) in table.locations.iter().enumerate() {
            let (lat, lon) = table.coords[l];
            for (ti, t) in table.times.iter().enumerate() {
                let _ = write!(
                    out,
                    "{variable},{},{},{loc},{lat},{lon},{}",
                    t.year, t.month, table.observed[v][l][ti]
                );
                for j in 0..table.dim {
                    let _ = write!(out, ",{}", table.esm[v][l][(ti, j)]);
                }
                out.push('\n');
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Grid metadata: the lattice position of every location.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTable {
    pub spec: GridSpec,
    /// `(location_id, row, col, lat, lon)` sorted by location id.
    pub entries: Vec<(u64, usize, usize, f64, f64)>,
}

impl GridTable {
    /// Builds the full row-major lattice for synthetic data: location id
    /// `r * cols + c` sits at `(r, c)` with its indices doubling as
    /// coordinates.
    pub fn dense(spec: GridSpec) -> Self {
        let entries = (0..spec.num_locations())
            .map(|i| {
                let (r, c) = spec.position(i);
                (i as u64, r, c, r as f64, c as f64)
            })
            .collect();
        Self { spec, entries }
    }

    /// Lattice Laplacian reordered to match the given location order.
    pub fn laplacian_for(&self, locations: &[u64]) -> Result<DMatrix<f64>> {
        let m = self.spec.num_locations();
        if locations.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "grid has {m} cells but the table has {} locations",
                locations.len()
            )));
        }
        let by_id: BTreeMap<u64, usize> = self
            .entries
            .iter()
            .map(|&(id, r, c, _, _)| (id, self.spec.index(r, c)))
            .collect();
        let mut order = Vec::with_capacity(locations.len());
        for &loc in locations {
            let &gidx = by_id.get(&loc).ok_or_else(|| {
                Error::InvalidInput(format!("location {loc} is absent from the grid file"))
            })?;
            order.push(gidx);
        }
        let full = crate::baselines::build_grid_laplacian::<f64>(&self.spec);
        Ok(DMatrix::from_fn(m, m, |a, b| full[(order[a], order[b])]))
    }
}

/// Loads grid metadata (`location_id,row,col,lat,lon`).
pub fn load_grid_csv(path: &Path) -> Result<GridTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected = ["location_id", "row", "col", "lat", "lon"];
    for (i, name) in expected.iter().enumerate() {
        if headers.get(i) != Some(name) {
            return Err(Error::parse(1, format!("missing column `{name}`")));
        }
    }
    let mut entries = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| row.get(i).unwrap_or("");
        let id = get(0)
            .parse::<u64>()
            .map_err(|_| Error::parse(line, format!("invalid location_id `{}`", get(0))))?;
        let r = get(1)
            .parse::<usize>()
            .map_err(|_| Error::parse(line, format!("invalid row `{}`", get(1))))?;
        let c = get(2)
            .parse::<usize>()
            .map_err(|_| Error::parse(line, format!("invalid col `{}`", get(2))))?;
        let lat = get(3)
            .parse::<f64>()
            .map_err(|_| Error::parse(line, format!("invalid lat `{}`", get(3))))?;
        let lon = get(4)
            .parse::<f64>()
            .map_err(|_| Error::parse(line, format!("invalid lon `{}`", get(4))))?;
        entries.push((id, r, c, lat, lon));
    }
    if entries.is_empty() {
        return Err(Error::InvalidInput("grid file has no rows".into()));
    }
    let rows = entries.iter().map(|e| e.1).max().unwrap() + 1;
    let cols = entries.iter().map(|e| e.2).max().unwrap() + 1;
    let spec = GridSpec::new(rows, cols)?;
    if entries.len() != spec.num_locations() {
        return Err(Error::InvalidInput(format!(
            "grid file has {} rows but a {}x{} lattice needs {}",
            entries.len(),
            rows,
            cols,
            spec.num_locations()
        )));
    }
    let mut seen_ids = std::collections::BTreeSet::new();
    let mut seen_cells = std::collections::BTreeSet::new();
    for &(id, r, c, _, _) in &entries {
        if !seen_ids.insert(id) {
            return Err(Error::InvalidInput(format!("duplicate location_id {id}")));
        }
        if !seen_cells.insert((r, c)) {
            return Err(Error::InvalidInput(format!("duplicate grid cell ({r},{c})")));
        }
    }
    let mut entries = entries;
    entries.sort_unstable_by_key(|e| e.0);
    Ok(GridTable { spec, entries })
}

/// Writes grid metadata in the companion layout.
pub fn write_grid_csv(grid: &GridTable, path: &Path) -> Result<()> {
    let mut out = String::from("location_id,row,col,lat,lon\n");
    for &(id, r, c, lat, lon) in &grid.entries {
        let _ = writeln!(out, "{id},{r},{c},{lat},{lon}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Lays a synthetic hierarchical dataset out as a gridded table: sub-task
/// `k` becomes location `k` on the lattice, sample `i` becomes month
/// `i % 12 + 1` of year `start_year + i / 12`, and super-task `t` becomes
/// variable `var_{t:02}` (zero-padded so lexicographic order preserves the
/// super-task order). All sub-tasks must share one sample count.
pub fn table_from_dataset(
    data: &HierarchicalDataset<f64>,
    spec: GridSpec,
    start_year: i32,
) -> Result<(ClimateTable, GridTable)> {
    let m = data.num_sub_tasks();
    if spec.num_locations() != m {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} grid holds {} locations but the dataset has {m} sub-tasks",
            spec.rows,
            spec.cols,
            spec.num_locations()
        )));
    }
    let n = data.super_task(0)[0].n();
    for tasks in data.super_tasks() {
        for task in tasks {
            if task.n() != n {
                return Err(Error::InvalidInput(
                    "all sub-tasks must share one sample count to share a time axis".into(),
                ));
            }
        }
    }
    let grid = GridTable::dense(spec);
    let mut records = Vec::with_capacity(data.num_super_tasks() * m * n);
    for t in 0..data.num_super_tasks() {
        for (k, task) in data.super_task(t).iter().enumerate() {
            let (r, c) = spec.position(k);
            for i in 0..n {
                records.push(GriddedRecord {
                    variable: format!("var_{t:02}"),
                    year: start_year + (i / 12) as i32,
                    month: (i % 12 + 1) as u8,
                    location_id: k as u64,
                    lat: r as f64,
                    lon: c as f64,
                    observed: task.y()[i],
                    esm_values: (0..task.dim()).map(|j| task.x()[(i, j)]).collect(),
                });
            }
        }
    }
    Ok((ClimateTable::from_records(records)?, grid))
}
