use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{DatasetKind, DatasetSpec, MapKind};
use crate::diffengine::stream_rng;
use crate::evalharness::classifier::ClassifierSpec;
use crate::evalharness::config::{ExperimentConfig, LrDecay, Metric};
use crate::evalharness::experiment::{domain_adapt_eval, run_experiment, ExperimentResult};
use crate::evalharness::plot::movement_svg;
use crate::evalharness::train::RunStatus;
use crate::flows::FlowArch;
use crate::pushforward::Mode;
use crate::{Error, Result};

/// RNG stream of the classifier trained on unmapped source data.
pub const STREAM_BASELINE: u64 = 103;

pub const PAIRED_PROPS: [f64; 5] = [0.0, 0.05, 0.1, 0.2, 0.5];
pub const ID_WEIGHT_GRID: [f64; 4] = [1e-4, 1e-3, 1e-1, 5e-1];
pub const PAIRED_WEIGHT_GRID: [f64; 5] = [0.1, 1.0, 10.0, 50.0, 100.0];
pub const MODE_GRID: [Mode; 2] = [Mode::Chained, Mode::Triangle];

/// Learning rate used by the benchmark cells.
pub const BENCH_LR: f64 = 1e-3;
pub const BENCH_LR_DECAY: LrDecay = LrDecay { at: 0.7, factor: 0.1 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Mog,
    Moons,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mog" => Ok(Suite::Mog),
            "moons" => Ok(Suite::Moons),
            "all" => Ok(Suite::All),
            other => Err(Error::InvalidArgument(format!(
                "unknown suite {other:?} (expected mog, moons or all)"
            ))),
        }
    }
}

/// One (dataset, true map, paired proportion) combination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub dataset: DatasetKind,
    pub map: MapKind,
    pub paired_prop: f64,
}

impl Cell {
    pub fn new(dataset: DatasetKind, map: MapKind, paired_prop: f64) -> Self {
        Cell {
            dataset,
            map,
            paired_prop,
        }
    }

    pub fn name(&self) -> String {
        format!(
            "{}_{}_p{:.2}",
            dataset_name(self.dataset),
            map_name(self.map),
            self.paired_prop
        )
    }

    pub fn metrics(&self) -> Vec<Metric> {
        let mut m = vec![Metric::MapMse];
        match (self.dataset, self.map) {
            (DatasetKind::Mog, MapKind::Linear) => m.push(Metric::NllRelMse),
            (DatasetKind::Moons, _) => m.push(Metric::DaAccuracy),
            _ => {}
        }
        m
    }
}

fn dataset_name(d: DatasetKind) -> &'static str {
    match d {
        DatasetKind::Mog => "mog",
        DatasetKind::Moons => "moons",
    }
}

fn map_name(m: MapKind) -> &'static str {
    match m {
        MapKind::Linear => "linear",
        MapKind::Nonlinear => "nonlinear",
    }
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Triangle => "triangle",
        Mode::Chained => "chained",
    }
}

pub fn suite_cells(suite: Suite) -> Vec<Cell> {
    let datasets: &[DatasetKind] = match suite {
        Suite::Mog => &[DatasetKind::Mog],
        Suite::Moons => &[DatasetKind::Moons],
        Suite::All => &[DatasetKind::Mog, DatasetKind::Moons],
    };
    let mut cells = Vec::new();
    for &d in datasets {
        for m in [MapKind::Linear, MapKind::Nonlinear] {
            for p in PAIRED_PROPS {
                cells.push(Cell::new(d, m, p));
            }
        }
    }
    cells
}

/// The hyperparameters searched over per cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub mode: Mode,
    pub id_weight: f64,
    pub paired_weight: f64,
}

impl Hyper {
    fn tag(&self) -> String {
        format!(
            "{}_id{}_pw{}",
            mode_name(self.mode),
            self.id_weight,
            self.paired_weight
        )
    }
}

/// Grid point used for a cell when no search is requested.
pub fn tuned_hyper(cell: &Cell) -> Hyper {
    let id_weight = if cell.dataset == DatasetKind::Moons && cell.paired_prop == 0.0 {
        1e-3
    } else {
        1e-1
    };
    Hyper {
        mode: Mode::Triangle,
        id_weight,
        paired_weight: 10.0,
    }
}

/// Every grid point for a cell. The paired weight is irrelevant without
/// pairs, so unpaired cells only vary mode and identity weight.
pub fn hyper_grid(cell: &Cell) -> Vec<Hyper> {
    let pws: &[f64] = if cell.paired_prop == 0.0 {
        &[10.0]
    } else {
        &PAIRED_WEIGHT_GRID
    };
    let mut grid = Vec::new();
    for mode in MODE_GRID {
        for id_weight in ID_WEIGHT_GRID {
            for &paired_weight in pws {
                grid.push(Hyper {
                    mode,
                    id_weight,
                    paired_weight,
                });
            }
        }
    }
    grid
}

/// Spline tail bound for a benchmark: wider for the nonlinear map, whose
/// exponential coordinate reaches far beyond the bulk of the data.
pub fn bench_tail(map: MapKind) -> f64 {
    match map {
        MapKind::Linear => 5.0,
        MapKind::Nonlinear => 12.0,
    }
}

pub fn cell_config(cell: &Cell, hyper: &Hyper, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(DatasetSpec::new(cell.dataset, cell.map, cell.paired_prop, seed));
    cfg.model.mode = hyper.mode;
    let mut arch = FlowArch::rqs(2);
    arch.tail = Some(bench_tail(cell.map));
    cfg.model.arch_a = Some(arch.clone());
    cfg.model.arch_b = Some(arch);
    cfg.loss.weights.id_weight = hyper.id_weight;
    cfg.loss.weights.paired_weight = hyper.paired_weight;
    cfg.train.seed = seed;
    cfg.train.lr = BENCH_LR;
    cfg.train.lr_decay = Some(BENCH_LR_DECAY);
    cfg.eval.metrics = cell.metrics();
    cfg
}

#[derive(Clone, Debug)]
pub struct BenchmarkOptions {
    pub suite: Suite,
    pub seeds: usize,
    pub first_seed: u64,
    /// Worker threads; zero means one per logical core.
    pub jobs: usize,
    /// Search the full hyperparameter grid instead of the tuned point.
    pub search: bool,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            suite: Suite::All,
            seeds: 5,
            first_seed: 0,
            jobs: 0,
            search: false,
        }
    }
}

/// One finished training run.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub cell: Cell,
    pub hyper: Hyper,
    pub result: ExperimentResult,
    pub baseline_da: Option<f64>,
    svg: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct CellSummary {
    pub cell: Cell,
    pub hyper: Hyper,
    pub runs: usize,
    pub failed: usize,
    pub map_mse: Option<f64>,
    pub nll_rel_mse: Option<f64>,
    pub da_accuracy: Option<f64>,
    pub baseline_da: Option<f64>,
    pub seconds: Option<f64>,
    pub checks: Vec<Check>,
}

impl CellSummary {
    /// `None` when no threshold applies to this cell.
    pub fn verdict(&self) -> Option<bool> {
        (!self.checks.is_empty()).then(|| self.checks.iter().all(|c| c.pass))
    }
}

pub struct BenchmarkReport {
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunRecord>,
}

/// Median of the finite values, if any.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn run_one(cells: &[Cell], cell: usize, hyper: Hyper, seed: u64, plot: bool) -> Result<RunRecord> {
    let c = &cells[cell];
    let cfg = cell_config(c, &hyper, seed);
    let outcome = run_experiment(&cfg)?;
    let baseline_da = if c.metrics().contains(&Metric::DaAccuracy) {
        let mut rng = stream_rng(seed, STREAM_BASELINE);
        Some(domain_adapt_eval(&outcome.dataset, None, &ClassifierSpec::default(), &mut rng)?)
    } else {
        None
    };
    let svg = if plot && outcome.result.status == RunStatus::Ok {
        let ds = &outcome.dataset;
        let mapped = outcome.trained.map_forward(&ds.source_test.x)?;
        let title = format!("{} / {} / seed {seed}", c.name(), hyper.tag());
        Some(movement_svg(&title, &ds.source_test.x, &ds.target_test.x, &mapped)?)
    } else {
        None
    };
    Ok(RunRecord {
        cell: *c,
        hyper,
        result: outcome.result,
        baseline_da,
        svg,
    })
}

fn summarize(cell: Cell, hyper: Hyper, runs: &[&RunRecord]) -> CellSummary {
    let ok: Vec<&&RunRecord> = runs.iter().filter(|r| r.result.status == RunStatus::Ok).collect();
    let collect = |f: &dyn Fn(&RunRecord) -> Option<f64>| median(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
    CellSummary {
        cell,
        hyper,
        runs: runs.len(),
        failed: runs.len() - ok.len(),
        map_mse: collect(&|r| r.result.metrics.map_mse),
        nll_rel_mse: collect(&|r| r.result.metrics.nll_rel_mse),
        da_accuracy: collect(&|r| r.result.metrics.da_accuracy),
        baseline_da: median(&runs.iter().filter_map(|r| r.baseline_da).collect::<Vec<_>>()),
        seconds: median(&runs.iter().map(|r| r.result.seconds).collect::<Vec<_>>()),
        checks: Vec::new(),
    }
}

fn check(name: &str, value: Option<f64>, ok: impl Fn(f64) -> bool) -> Check {
    Check {
        name: name.to_string(),
        value,
        pass: value.is_some_and(ok),
    }
}

/// Attaches the acceptance thresholds that apply to each summarized cell.
pub fn attach_checks(cells: &mut [CellSummary]) {
    let unpaired: Vec<(DatasetKind, MapKind, Option<f64>)> = cells
        .iter()
        .filter(|c| c.cell.paired_prop == 0.0)
        .map(|c| (c.cell.dataset, c.cell.map, c.map_mse))
        .collect();
    for s in cells.iter_mut() {
        let c = s.cell;
        let mut checks = Vec::new();
        let at_02 = (c.paired_prop - 0.2).abs() < 1e-12;
        match (c.dataset, c.map) {
            (DatasetKind::Mog, MapKind::Linear) if at_02 => {
                checks.push(check("map_mse<=0.05", s.map_mse, |v| v <= 0.05));
                checks.push(check("nll_rel_mse<=0.05", s.nll_rel_mse, |v| v <= 0.05));
                checks.push(check("seconds<=180", s.seconds, |v| v <= 180.0));
            }
            (DatasetKind::Mog, MapKind::Nonlinear) if at_02 => {
                checks.push(check("map_mse<=0.6", s.map_mse, |v| v <= 0.6));
            }
            (DatasetKind::Moons, MapKind::Nonlinear) if at_02 => {
                checks.push(check("map_mse<=0.1", s.map_mse, |v| v <= 0.1));
                checks.push(check("da>=0.85", s.da_accuracy, |v| v >= 0.85));
                checks.push(check("baseline_da<=0.55", s.baseline_da, |v| v <= 0.55));
            }
            (DatasetKind::Moons, MapKind::Nonlinear) if c.paired_prop == 0.0 => {
                let gain = s.da_accuracy.zip(s.baseline_da).map(|(a, b)| a - b);
                checks.push(check("da-baseline>0.25", gain, |v| v > 0.25));
            }
            _ => {}
        }
        if at_02 {
            if let Some((_, _, base)) = unpaired.iter().find(|u| u.0 == c.dataset && u.1 == c.map) {
                let margin = s.map_mse.zip(*base).map(|(a, b)| b - a);
                checks.push(check("map_mse<unpaired", margin, |v| v > 0.0));
            }
        }
        s.checks = checks;
    }
}

/// Runs every cell of a suite over `seeds` seeds, optionally searching the
/// grid, and reports medians with pass/fail against the thresholds.
pub fn run_benchmark(opts: &BenchmarkOptions) -> Result<BenchmarkReport> {
    if opts.seeds == 0 {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let cells = suite_cells(opts.suite);
    let mut jobs = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        let grid = if opts.search {
            hyper_grid(cell)
        } else {
            vec![tuned_hyper(cell)]
        };
        for h in grid {
            for k in 0..opts.seeds as u64 {
                jobs.push((ci, h, opts.first_seed + k, k == 0));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let runs: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(ci, h, seed, plot)| run_one(&cells, ci, h, seed, plot))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut summaries = Vec::new();
    for cell in &cells {
        let mut best: Option<CellSummary> = None;
        let grid = if opts.search {
            hyper_grid(cell)
        } else {
            vec![tuned_hyper(cell)]
        };
        for h in grid {
            let rs: Vec<&RunRecord> = runs.iter().filter(|r| r.cell == *cell && r.hyper == h).collect();
            let s = summarize(*cell, h, &rs);
            let better = match &best {
                None => true,
                Some(b) => s.map_mse.unwrap_or(f64::INFINITY) < b.map_mse.unwrap_or(f64::INFINITY),
            };
            if better {
                best = Some(s);
            }
        }
        summaries.extend(best);
    }
    attach_checks(&mut summaries);
    Ok(BenchmarkReport { cells: summaries, runs })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn verdict_str(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "pass",
        Some(false) => "fail",
        None => "-",
    }
}

impl BenchmarkReport {
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "dataset,true_map,paired_prop,mode,id_weight,paired_weight,runs,failed,map_mse,nll_rel_mse,da_accuracy,baseline_da,seconds,checks,pass\n",
        );
        for s in &self.cells {
            let checks: Vec<String> = s
                .checks
                .iter()
                .map(|c| format!("{}:{}", c.name, if c.pass { "ok" } else { "no" }))
                .collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                dataset_name(s.cell.dataset),
                map_name(s.cell.map),
                s.cell.paired_prop,
                mode_name(s.hyper.mode),
                s.hyper.id_weight,
                s.hyper.paired_weight,
                s.runs,
                s.failed,
                opt(s.map_mse),
                opt(s.nll_rel_mse),
                opt(s.da_accuracy),
                opt(s.baseline_da),
                opt(s.seconds),
                checks.join(" "),
                verdict_str(s.verdict()),
            );
        }
        out
    }

    pub fn summary_table(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut out = format!(
            "{:<24} {:<9} {:>8} {:>6} {:>9} {:>9} {:>9} {:>9} {:>8}  {}\n",
            "cell", "mode", "id_w", "pair_w", "map_mse", "nll_rel", "da_acc", "no_da", "secs", "verdict"
        );
        for s in &self.cells {
            let failed: Vec<&str> = s.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
            let verdict = match s.verdict() {
                Some(false) => format!("fail ({})", failed.join(", ")),
                v => verdict_str(v).to_string(),
            };
            let _ = writeln!(
                out,
                "{:<24} {:<9} {:>8} {:>6} {:>9} {:>9} {:>9} {:>9} {:>8}  {}",
                s.cell.name(),
                mode_name(s.hyper.mode),
                format!("{:e}", s.hyper.id_weight),
                s.hyper.paired_weight,
                f(s.map_mse),
                f(s.nll_rel_mse),
                f(s.da_accuracy),
                f(s.baseline_da),
                s.seconds.map_or_else(|| "-".to_string(), |x| format!("{x:.1}")),
                verdict
            );
        }
        out
    }

    /// Writes per-run results, one plot per cell, and the summaries.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("plots"))?;
        for r in &self.runs {
            let run_dir = dir
                .join("runs")
                .join(r.cell.name())
                .join(r.hyper.tag())
                .join(format!("seed{}", r.result.seed));
            std::fs::create_dir_all(&run_dir)?;
            std::fs::write(run_dir.join("result.json"), r.result.to_json()?)?;
        }
        for s in &self.cells {
            let plot = self
                .runs
                .iter()
                .find(|r| r.cell == s.cell && r.hyper == s.hyper && r.svg.is_some())
                .and_then(|r| r.svg.as_ref());
            if let Some(svg) = plot {
                std::fs::write(dir.join("plots").join(format!("{}.svg", s.cell.name())), svg)?;
            }
        }
        std::fs::write(dir.join("summary.csv"), self.summary_csv())?;
        std::fs::write(dir.join("summary.txt"), self.summary_table())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[f64::NAN, 1.0]), Some(1.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn suite_has_one_cell_per_combination() {
        assert_eq!(suite_cells(Suite::Mog).len(), 2 * PAIRED_PROPS.len());
        assert_eq!(suite_cells(Suite::All).len(), 4 * PAIRED_PROPS.len());
        let names: std::collections::HashSet<String> = suite_cells(Suite::All).iter().map(Cell::name).collect();
        assert_eq!(names.len(), 20);
    }

    #[test]
    fn grid_matches_axes() {
        let paired = Cell::new(DatasetKind::Mog, MapKind::Linear, 0.2);
        assert_eq!(hyper_grid(&paired).len(), 2 * 4 * 5);
        let unpaired = Cell::new(DatasetKind::Mog, MapKind::Linear, 0.0);
        assert_eq!(hyper_grid(&unpaired).len(), 2 * 4);
        for c in suite_cells(Suite::All) {
            assert!(hyper_grid(&c).contains(&tuned_hyper(&c)));
            cell_config(&c, &tuned_hyper(&c), 3).validate().unwrap();
        }
    }

    fn summary(d: DatasetKind, m: MapKind, p: f64, mse: f64) -> CellSummary {
        let cell = Cell::new(d, m, p);
        CellSummary {
            cell,
            hyper: tuned_hyper(&cell),
            runs: 1,
            failed: 0,
            map_mse: Some(mse),
            nll_rel_mse: Some(0.01),
            da_accuracy: Some(0.9),
            baseline_da: Some(0.3),
            seconds: Some(10.0),
            checks: Vec::new(),
        }
    }

    #[test]
    fn thresholds_drive_verdicts() {
        let mut cells = vec![
            summary(DatasetKind::Mog, MapKind::Linear, 0.0, 0.3),
            summary(DatasetKind::Mog, MapKind::Linear, 0.2, 0.04),
            summary(DatasetKind::Mog, MapKind::Nonlinear, 0.0, 0.5),
            summary(DatasetKind::Mog, MapKind::Nonlinear, 0.2, 0.55),
            summary(DatasetKind::Mog, MapKind::Linear, 0.1, 0.01),
        ];
        attach_checks(&mut cells);
        assert_eq!(cells[0].verdict(), None);
        assert_eq!(cells[1].verdict(), Some(true));
        // Within the absolute threshold but worse than the unpaired run.
        assert_eq!(cells[3].verdict(), Some(false));
        assert_eq!(cells[4].verdict(), None);

        cells[1].map_mse = Some(0.051);
        attach_checks(&mut cells);
        assert_eq!(cells[1].verdict(), Some(false));
    }

    #[test]
    fn unpaired_domain_adaptation_needs_margin() {
        let mut cells = vec![summary(DatasetKind::Moons, MapKind::Nonlinear, 0.0, 5.0)];
        cells[0].da_accuracy = Some(0.5);
        attach_checks(&mut cells);
        assert_eq!(cells[0].verdict(), Some(false));
        cells[0].da_accuracy = Some(0.6);
        attach_checks(&mut cells);
        assert_eq!(cells[0].verdict(), Some(true));
    }
}
