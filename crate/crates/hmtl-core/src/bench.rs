//! Experiment harness: moving-window evaluation of the joint fit against the
//! baselines, with per-window hyperparameter selection on a temporal 80/20
//! split of each training block and deterministic report files.
//!
//! Outputs per run: `summary.csv` (mean and standard deviation of RMSE per
//! method, variable, and window length), `per_location_rmse_<method>.csv`
//! (mean RMSE per location), `raw_rmse.csv` (every successful cell at
//! per-location granularity), and `manifest.json` (config echo, seed,
//! versions, per-cell status).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_ols, fit_s2m2r, predict_mma, select_best_esm, GridSpec};
use crate::data_io::{
    load_grid_csv, load_gridded_csv, table_from_dataset, write_grid_csv, write_gridded_csv,
    ClimateTable, GridTable, Season, WindowSplit,
};
use crate::driver::{fit_hmtl, fit_mssl, DriverConfig};
use crate::error::{Error, Result};
use crate::model::{predict, rmse, HierarchicalDataset, Hyperparams, SubTaskData};
use crate::omega::AdmmConfig;
use crate::synthetic::{generate_hierarchical_dataset, SyntheticSpec};
use crate::theta::ThetaSolveConfig;

/// The comparison methods the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hmtl,
    Mssl,
    Ols,
    Mma,
    BestEsm,
    S2m2r,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Hmtl => "hmtl",
            Method::Mssl => "mssl",
            Method::Ols => "ols",
            Method::Mma => "mma",
            Method::BestEsm => "best_esm",
            Method::S2m2r => "s2m2r",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "hmtl" => Ok(Method::Hmtl),
            "mssl" => Ok(Method::Mssl),
            "ols" => Ok(Method::Ols),
            "mma" => Ok(Method::Mma),
            "best_esm" => Ok(Method::BestEsm),
            "s2m2r" => Ok(Method::S2m2r),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// One moving-window shape. `step_years` defaults to `test_years`, giving
/// non-overlapping test blocks.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WindowConfig {
    pub train_years: u32,
    #[serde(default = "default_test_years")]
    pub test_years: u32,
    #[serde(default)]
    pub step_years: Option<u32>,
}

fn default_test_years() -> u32 {
    10
}

impl WindowConfig {
    pub fn step(&self) -> u32 {
        self.step_years.unwrap_or(self.test_years)
    }
}

/// A point of the single-super-task grid (no group coupling to tune).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MsslPoint {
    pub lambda0: f64,
    pub lambda1: f64,
}

impl From<MsslPoint> for Hyperparams<f64> {
    fn from(p: MsslPoint) -> Self {
        Hyperparams {
            lambda0: p.lambda0,
            lambda1: p.lambda1,
            lambda2: 0.0,
        }
    }
}

/// Hyperparameter candidates per fitted method.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodGrids {
    pub hmtl: Vec<Hyperparams<f64>>,
    pub mssl: Vec<MsslPoint>,
    pub s2m2r: Vec<f64>,
}

/// Solver settings shared by every fit of a run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub outer_tol: f64,
    pub max_outer_iters: usize,
    pub grad_tol: f64,
    pub theta_max_iters: usize,
    pub history_size: usize,
    pub rho: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub admm_max_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let driver = DriverConfig::<f64>::default();
        let theta = ThetaSolveConfig::<f64>::default();
        let admm = AdmmConfig::<f64>::default();
        Self {
            outer_tol: driver.outer_tol,
            max_outer_iters: driver.max_outer_iters,
            grad_tol: theta.grad_tol,
            theta_max_iters: theta.max_iters,
            history_size: theta.history_size,
            rho: admm.rho,
            abs_tol: admm.abs_tol,
            rel_tol: admm.rel_tol,
            admm_max_iters: admm.max_iters,
        }
    }
}

impl SolverSettings {
    pub fn driver(&self, seed: u64) -> DriverConfig<f64> {
        DriverConfig {
            outer_tol: self.outer_tol,
            max_outer_iters: self.max_outer_iters,
            rng_seed: seed,
        }
    }

    pub fn theta(&self) -> ThetaSolveConfig<f64> {
        ThetaSolveConfig {
            grad_tol: self.grad_tol,
            max_iters: self.theta_max_iters,
            history_size: self.history_size,
        }
    }

    pub fn admm(&self) -> AdmmConfig<f64> {
        AdmmConfig {
            rho: self.rho,
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_iters: self.admm_max_iters,
        }
    }
}

/// Where the data comes from: a CSV pair on disk, or the synthetic generator
/// laid out on a lattice.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Csv {
        data: PathBuf,
        #[serde(default)]
        grid: Option<PathBuf>,
        #[serde(default = "default_season")]
        season: String,
    },
    Synthetic {
        spec: SyntheticSpec,
        grid_rows: usize,
        grid_cols: usize,
        #[serde(default = "default_start_year")]
        start_year: i32,
        #[serde(default = "default_season")]
        season: String,
    },
}

fn default_season() -> String {
    "year".into()
}

fn default_start_year() -> i32 {
    1901
}

/// Full experiment description, normally read from a TOML file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub methods: Vec<Method>,
    pub windows: Vec<WindowConfig>,
    #[serde(default)]
    pub grids: MethodGrids,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.windows.is_empty() {
            return Err(Error::Config("at least one window shape is required".into()));
        }
        for w in &self.windows {
            if w.train_years == 0 || w.test_years == 0 || w.step() == 0 {
                return Err(Error::Config("window years must be positive".into()));
            }
        }
        for method in &self.methods {
            let empty = match method {
                Method::Hmtl => self.grids.hmtl.is_empty(),
                Method::Mssl => self.grids.mssl.is_empty(),
                Method::S2m2r => self.grids.s2m2r.is_empty(),
                _ => false,
            };
            if empty {
                return Err(Error::Config(format!(
                    "method `{}` needs a nonempty hyperparameter grid",
                    method.name()
                )));
            }
        }
        Ok(())
    }
}

/// Hyperparameters chosen for one (method, window) cell.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChosenParams {
    Hmtl(Hyperparams<f64>),
    Mssl(MsslPoint),
    S2m2r(f64),
    None,
}

/// Splits every sub-task at `floor(0.8 n)`: earlier rows fit, later rows
/// validate. Rows are time-ordered, so this is the temporal split.
fn temporal_split(
    data: &HierarchicalDataset<f64>,
) -> Result<(HierarchicalDataset<f64>, HierarchicalDataset<f64>)> {
    let mut fit_tasks = Vec::new();
    let mut val_tasks = Vec::new();
    for tasks in data.super_tasks() {
        let mut fit_row = Vec::new();
        let mut val_row = Vec::new();
        for task in tasks {
            let n = task.n();
            if n < 5 {
                return Err(Error::Config(format!(
                    "need at least 5 timestamps for an 80/20 validation split, got {n}"
                )));
            }
            let cut = ((n as f64) * 0.8).floor() as usize;
            let cut = cut.clamp(1, n - 1);
            fit_row.push(SubTaskData::new(
                task.x().rows(0, cut).into_owned(),
                task.y().rows(0, cut).into_owned(),
            )?);
            val_row.push(SubTaskData::new(
                task.x().rows(cut, n - cut).into_owned(),
                task.y().rows(cut, n - cut).into_owned(),
            )?);
        }
        fit_tasks.push(fit_row);
        val_tasks.push(val_row);
    }
    Ok((
        HierarchicalDataset::new(fit_tasks)?,
        HierarchicalDataset::new(val_tasks)?,
    ))
}

/// Per-(variable, location) RMSE of one fitted method evaluated on held-out
/// data.
fn eval_method(
    method: Method,
    train: &HierarchicalDataset<f64>,
    test: &HierarchicalDataset<f64>,
    chosen: &ChosenParams,
    laplacian: Option<&DMatrix<f64>>,
    solver: &SolverSettings,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let t_count = train.num_super_tasks();
    let m = train.num_sub_tasks();
    let mut thetas: Vec<Option<DMatrix<f64>>> = vec![None; t_count];

    match (method, chosen) {
        (Method::Hmtl, ChosenParams::Hmtl(h)) => {
            let model = fit_hmtl(
                train,
                h,
                &solver.driver(seed),
                &solver.theta(),
                &solver.admm(),
            )?;
            for (t, theta) in model.weights.into_inner().into_iter().enumerate() {
                thetas[t] = Some(theta);
            }
        }
        (Method::Mssl, ChosenParams::Mssl(p)) => {
            let h: Hyperparams<f64> = (*p).into();
            for t in 0..t_count {
                let model = fit_mssl(
                    train.super_task(t),
                    &h,
                    &solver.driver(seed),
                    &solver.theta(),
                    &solver.admm(),
                )?;
                thetas[t] = Some(model.weights.into_inner().remove(0));
            }
        }
        (Method::Ols, _) => {
            for t in 0..t_count {
                thetas[t] = Some(fit_ols(train.super_task(t))?);
            }
        }
        (Method::S2m2r, ChosenParams::S2m2r(lambda)) => {
            let l = laplacian.ok_or_else(|| {
                Error::Config("s2m2r needs grid metadata for the lattice Laplacian".into())
            })?;
            for t in 0..t_count {
                thetas[t] = Some(fit_s2m2r(train.super_task(t), l, *lambda)?);
            }
        }
        (Method::Mma, _) | (Method::BestEsm, _) => {}
        (method, chosen) => {
            return Err(Error::Config(format!(
                "method `{}` received mismatched parameters {chosen:?}",
                method.name()
            )))
        }
    }

    let mut out = vec![vec![0.0; m]; t_count];
    for t in 0..t_count {
        for k in 0..m {
            let test_task = &test.super_task(t)[k];
            let pred: DVector<f64> = match method {
                Method::Mma => predict_mma(test_task.x()),
                Method::BestEsm => {
                    let col = select_best_esm(&train.super_task(t)[k]);
                    test_task.x().column(col).into_owned()
                }
                _ => {
                    let theta = thetas[t].as_ref().expect("fitted above");
                    predict(test_task.x(), &theta.column(k).into_owned())?
                }
            };
            out[t][k] = rmse(&pred, test_task.y())?;
        }
    }
    Ok(out)
}

fn mean_rmse(per_cell: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for row in per_cell {
        for &v in row {
            acc += v;
            count += 1;
        }
    }
    acc / count as f64
}

/// Selects hyperparameters for `method` on a training block: fit each grid
/// point on the first 80% of the block, score mean validation RMSE on the
/// remaining 20%, return the best (ties go to the first point in declared
/// order). Singleton grids and parameterless methods return immediately.
pub fn grid_search(
    train: &HierarchicalDataset<f64>,
    method: Method,
    grids: &MethodGrids,
    solver: &SolverSettings,
    seed: u64,
    laplacian: Option<&DMatrix<f64>>,
) -> Result<ChosenParams> {
    let candidates: Vec<ChosenParams> = match method {
        Method::Hmtl => grids.hmtl.iter().map(|h| ChosenParams::Hmtl(*h)).collect(),
        Method::Mssl => grids.mssl.iter().map(|p| ChosenParams::Mssl(*p)).collect(),
        Method::S2m2r => grids.s2m2r.iter().map(|l| ChosenParams::S2m2r(*l)).collect(),
        Method::Ols | Method::Mma | Method::BestEsm => return Ok(ChosenParams::None),
    };
    if candidates.is_empty() {
        return Err(Error::Config(format!(
            "empty hyperparameter grid for `{}`",
            method.name()
        )));
    }
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }
    let (fit_part, val_part) = temporal_split(train)?;
    let mut best = 0usize;
    let mut best_score = f64::INFINITY;
    for (i, candidate) in candidates.iter().enumerate() {
        let per_cell = eval_method(
            method,
            &fit_part,
            &val_part,
            candidate,
            laplacian,
            solver,
            seed,
        )?;
        let score = mean_rmse(&per_cell);
        if score < best_score {
            best_score = score;
            best = i;
        }
    }
    Ok(candidates[best])
}

/// One summary line: RMSE aggregated per location, then per window, then
/// mean and standard deviation across windows.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub variable: String,
    pub train_years: u32,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub windows: usize,
}

#[derive(Debug, Clone, Serialize)]
struct CellRecord {
    method: String,
    train_years: u32,
    window_start: i32,
    params: ChosenParams,
    status: String,
}

/// Paths and in-memory copies of everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub summary: Vec<SummaryRow>,
    pub summary_path: PathBuf,
    pub raw_path: PathBuf,
    pub per_location_paths: Vec<(String, PathBuf)>,
    pub manifest_path: PathBuf,
}

struct CellOutcome {
    method: Method,
    train_years: u32,
    window_start: i32,
    params: ChosenParams,
    /// per (variable, location) RMSE, or the failure reason
    result: std::result::Result<Vec<Vec<f64>>, String>,
}

/// Materializes the configured dataset as a (table, grid) pair.
pub fn load_dataset(config: &ExperimentConfig) -> Result<(ClimateTable, Option<GridTable>)> {
    match &config.dataset {
        DatasetConfig::Csv { data, grid, season } => {
            let table = load_gridded_csv(data)?;
            let grid = grid.as_ref().map(|p| load_grid_csv(p)).transpose()?;
            let season = Season::parse(season)?;
            Ok((table.extract_season(season), grid))
        }
        DatasetConfig::Synthetic {
            spec,
            grid_rows,
            grid_cols,
            start_year,
            season,
        } => {
            let grid_spec = GridSpec::new(*grid_rows, *grid_cols)?;
            if grid_spec.num_locations() != spec.sub_tasks {
                return Err(Error::Config(format!(
                    "a {grid_rows}x{grid_cols} grid holds {} locations but the synthetic spec has {}",
                    grid_spec.num_locations(),
                    spec.sub_tasks
                )));
            }
            let (data, _, _) = generate_hierarchical_dataset::<f64>(spec)?;
            let (table, grid) = table_from_dataset(&data, grid_spec, *start_year)?;
            let season = Season::parse(season)?;
            Ok((table.extract_season(season), Some(grid)))
        }
    }
}

/// Runs the full benchmark described by `config` and writes the report
/// files. Per-cell failures are recorded in the manifest and skipped in the
/// aggregates; the run itself keeps going.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutputs> {
    config.validate()?;
    let (table, grid) = load_dataset(config)?;
    let laplacian = match &grid {
        Some(g) => Some(g.laplacian_for(table.locations())?),
        None => None,
    };
    if config.methods.contains(&Method::S2m2r) && laplacian.is_none() {
        return Err(Error::Config(
            "s2m2r requires grid metadata; provide a grid file".into(),
        ));
    }

    // enumerate cells in deterministic order
    struct Cell {
        method: Method,
        split: WindowSplit,
    }
    let mut cells = Vec::new();
    let mut window_warnings = Vec::new();
    for w in &config.windows {
        let splits = table.split_moving_window(w.train_years, w.test_years, w.step());
        if splits.is_empty() {
            window_warnings.push(format!(
                "window train={} test={} step={} does not fit the time axis; skipped",
                w.train_years,
                w.test_years,
                w.step()
            ));
            continue;
        }
        for split in splits {
            for &method in &config.methods {
                cells.push(Cell {
                    method,
                    split: split.clone(),
                });
            }
        }
    }

    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|cell| {
            let run = || -> Result<(ChosenParams, Vec<Vec<f64>>)> {
                let train = cell.split.train.to_hierarchical_dataset()?;
                let test = cell.split.test.to_hierarchical_dataset()?;
                let chosen = grid_search(
                    &train,
                    cell.method,
                    &config.grids,
                    &config.solver,
                    config.seed,
                    laplacian.as_ref(),
                )?;
                let per_cell = eval_method(
                    cell.method,
                    &train,
                    &test,
                    &chosen,
                    laplacian.as_ref(),
                    &config.solver,
                    config.seed,
                )?;
                Ok((chosen, per_cell))
            };
            match run() {
                Ok((params, per_cell)) => CellOutcome {
                    method: cell.method,
                    train_years: cell.split.train_years,
                    window_start: cell.split.start_year,
                    params,
                    result: Ok(per_cell),
                },
                Err(e) => CellOutcome {
                    method: cell.method,
                    train_years: cell.split.train_years,
                    window_start: cell.split.start_year,
                    params: ChosenParams::None,
                    result: Err(e.to_string()),
                },
            }
        })
        .collect();

    write_outputs(config, &table, &outcomes, &window_warnings)
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

fn write_outputs(
    config: &ExperimentConfig,
    table: &ClimateTable,
    outcomes: &[CellOutcome],
    warnings: &[String],
) -> Result<RunOutputs> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)?;
    let variables = table.variables();
    let locations = table.locations();
    let coords = table.coords();

    // raw per-location rows for successful cells, in outcome order
    let raw_path = dir.join("raw_rmse.csv");
    let mut raw = String::from("method,variable,train_years,window_start,location_id,rmse\n");
    for o in outcomes {
        if let Ok(per_cell) = &o.result {
            for (v, row) in per_cell.iter().enumerate() {
                for (l, value) in row.iter().enumerate() {
                    let _ = writeln!(
                        raw,
                        "{},{},{},{},{},{}",
                        o.method.name(),
                        variables[v],
                        o.train_years,
                        o.window_start,
                        locations[l],
                        value
                    );
                }
            }
        }
    }
    std::fs::write(&raw_path, raw)?;

    // summary: per (method in declared order, variable, train_years)
    let mut summary = Vec::new();
    let mut train_lengths: Vec<u32> = config.windows.iter().map(|w| w.train_years).collect();
    train_lengths.dedup();
    for &method in &config.methods {
        for (v, variable) in variables.iter().enumerate() {
            for &train_years in &train_lengths {
                let mut per_window = Vec::new();
                for o in outcomes {
                    if o.method == method && o.train_years == train_years {
                        if let Ok(per_cell) = &o.result {
                            let loc_mean: f64 =
                                per_cell[v].iter().sum::<f64>() / per_cell[v].len() as f64;
                            per_window.push(loc_mean);
                        }
                    }
                }
                if per_window.is_empty() {
                    continue;
                }
                let mean = per_window.iter().sum::<f64>() / per_window.len() as f64;
                summary.push(SummaryRow {
                    method: method.name().to_string(),
                    variable: variable.clone(),
                    train_years,
                    mean_rmse: mean,
                    std_rmse: sample_std(&per_window, mean),
                    windows: per_window.len(),
                });
            }
        }
    }
    let summary_path = dir.join("summary.csv");
    let mut text = String::from("method,variable,train_years,mean_rmse,std_rmse,windows\n");
    for row in &summary {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            row.method, row.variable, row.train_years, row.mean_rmse, row.std_rmse, row.windows
        );
    }
    std::fs::write(&summary_path, text)?;

    // per-location means per method
    let mut per_location_paths = Vec::new();
    for &method in &config.methods {
        let path = dir.join(format!("per_location_rmse_{}.csv", method.name()));
        let mut text = String::from(
            "variable,train_years,location_id,lat,lon,mean_rmse,windows\n",
        );
        for (v, variable) in variables.iter().enumerate() {
            for &train_years in &train_lengths {
                for (l, &loc) in locations.iter().enumerate() {
                    let mut values = Vec::new();
                    for o in outcomes {
                        if o.method == method && o.train_years == train_years {
                            if let Ok(per_cell) = &o.result {
                                values.push(per_cell[v][l]);
                            }
                        }
                    }
                    if values.is_empty() {
                        continue;
                    }
                    let mean = values.iter().sum::<f64>() / values.len() as f64;
                    let (lat, lon) = coords[l];
                    let _ = writeln!(
                        text,
                        "{variable},{train_years},{loc},{lat},{lon},{mean},{}",
                        values.len()
                    );
                }
            }
        }
        std::fs::write(&path, text)?;
        per_location_paths.push((method.name().to_string(), path));
    }

    // manifest with config echo, versions, and per-cell status
    let cells: Vec<CellRecord> = outcomes
        .iter()
        .map(|o| CellRecord {
            method: o.method.name().to_string(),
            train_years: o.train_years,
            window_start: o.window_start,
            params: o.params,
            status: match &o.result {
                Ok(_) => "ok".to_string(),
                Err(reason) => format!("error: {reason}"),
            },
        })
        .collect();
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": config.seed,
        "config": config,
        "warnings": warnings,
        "cells": cells,
    });
    let manifest_path = dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;

    Ok(RunOutputs {
        summary,
        summary_path,
        raw_path,
        per_location_paths,
        manifest_path,
    })
}

/// Grid search on the first training block of the first configured window;
/// the `gridsearch` command's entry point.
pub fn grid_search_first_window(
    config: &ExperimentConfig,
    method: Method,
    train_years: Option<u32>,
) -> Result<ChosenParams> {
    let (table, grid) = load_dataset(config)?;
    let window = config
        .windows
        .first()
        .copied()
        .ok_or_else(|| Error::Config("config declares no windows".into()))?;
    let train_years = train_years.unwrap_or(window.train_years);
    let splits = table.split_moving_window(train_years, window.test_years, window.step());
    let split = splits
        .first()
        .ok_or_else(|| Error::Config("time axis too short for the requested window".into()))?;
    let train = split.train.to_hierarchical_dataset()?;
    let laplacian = match &grid {
        Some(g) => Some(g.laplacian_for(table.locations())?),
        None => None,
    };
    grid_search(
        &train,
        method,
        &config.grids,
        &config.solver,
        config.seed,
        laplacian.as_ref(),
    )
}

/// Generates the synthetic dataset of `spec`, dumps it in the interchange
/// format, and writes the generating weights and precisions alongside.
pub fn dump_synthetic(
    spec: &SyntheticSpec,
    grid_spec: GridSpec,
    start_year: i32,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf, PathBuf)> {
    if grid_spec.num_locations() != spec.sub_tasks {
        return Err(Error::Config(format!(
            "a {}x{} grid holds {} locations but the spec has {} sub-tasks",
            grid_spec.rows,
            grid_spec.cols,
            grid_spec.num_locations(),
            spec.sub_tasks
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let (data, weights, precisions) = generate_hierarchical_dataset::<f64>(spec)?;
    let (table, grid) = table_from_dataset(&data, grid_spec, start_year)?;
    let data_path = out_dir.join("data.csv");
    let grid_path = out_dir.join("grid.csv");
    write_gridded_csv(&table, &data_path)?;
    write_grid_csv(&grid, &grid_path)?;

    let row_major = |m: &DMatrix<f64>| -> Vec<f64> {
        let mut out = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.push(m[(i, j)]);
            }
        }
        out
    };
    let truth = serde_json::json!({
        "spec": spec,
        "thetas": weights.thetas().iter().map(row_major).collect::<Vec<_>>(),
        "omegas": precisions.omegas().iter().map(row_major).collect::<Vec<_>>(),
    });
    let truth_path = out_dir.join("truth.json");
    std::fs::write(&truth_path, serde_json::to_string_pretty(&truth)?)?;
    Ok((data_path, grid_path, truth_path))
}
