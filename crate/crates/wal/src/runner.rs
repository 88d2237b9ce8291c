//! Cell construction, execution and output layout.
//!
//! A run directory holds `metrics.csv`, `reports/` with one JSON report per
//! cell and, for WAL cells when artifacts are on, `cells/<cell>/` with
//! `stage{1..4}.ckpt`, the splits as `.wds` files, `relabeled.wds` and
//! `annotator.wds`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use wal_core::annotate::{
    make_calibrated_annotator, make_constant_annotator, make_earlystop_annotator, make_noise_annotator,
    make_perfect_annotator, EarlyStopConfig, WeakAnnotator,
};
use wal_core::baselines::{run_bdirect, run_bf1, run_bf2, run_bt, run_bwa, BaselineResult, Method};
use wal_core::bound::{bound_report_for_run, BoundReport};
use wal_core::data::{sample_splits, shift_domain, synth_domain_pair, Domain, ExperimentData, SynthModel};
use wal_core::nets::{ModelTriple, TrainConfig};
use wal_core::pipeline::{evaluate, run_wal_observed, RunReport, StageReport, WalRun};
use wal_core::seed;

use crate::config::{AnnotatorChoice, Axis, ExperimentConfig};
use crate::format::{self, FormatError};
use crate::plot::sweep_svg;
use crate::report::{aggregate, write_metrics, write_sweep, CellMetrics};
use crate::CliError;

/// One (method, axis value, seed) point of the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub axis: Option<(Axis, f64)>,
    pub seed: u64,
}

impl Cell {
    /// Stable identifier used for directories and messages.
    pub fn id(&self) -> String {
        match self.axis {
            Some((axis, v)) => format!("{}_{}{v}_seed{}", self.method, axis.name(), self.seed),
            None => format!("{}_seed{}", self.method, self.seed),
        }
    }
}

/// Grid of cells: methods × axis values (if any) × seeds.
pub fn cells(cfg: &ExperimentConfig, sweep: bool) -> Vec<Cell> {
    let axis_values: Vec<Option<(Axis, f64)>> = match (&cfg.sweep, sweep) {
        (Some(s), true) => s.values.iter().map(|&v| Some((s.axis, v))).collect(),
        _ => vec![None],
    };
    let mut out = Vec::new();
    for &method in &cfg.methods {
        for &axis in &axis_values {
            for &seed in &cfg.seeds {
                out.push(Cell { method, axis, seed });
            }
        }
    }
    out
}

fn core(e: wal_core::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn fmt_err(e: FormatError) -> CliError {
    CliError::Runtime(e.to_string())
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// The splits and weak annotator of one cell. Depends on the seed and axis
/// value only, so every method at a grid point sees identical inputs.
pub fn build_experiment(
    cfg: &ExperimentConfig,
    axis: Option<(Axis, f64)>,
    seed: u64,
) -> wal_core::Result<(ExperimentData, WeakAnnotator)> {
    let synth = wal_core::data::SynthConfig {
        seed,
        ..cfg.data.synth.clone()
    };
    let (source, mut target) = synth_domain_pair(&synth)?;
    let mut n_target = cfg.data.n_target;
    let mut noise_mean = cfg.data.noise_mean;
    let mut annotator = cfg.annotator.clone();
    let mut calibrate = false;
    match axis {
        Some((Axis::TargetQuantity, v)) => n_target = v as usize,
        Some((Axis::NoiseMean, v)) => noise_mean = v,
        Some((Axis::AnnotatorAccuracy, v)) => {
            if annotator.kind != AnnotatorChoice::Earlystop {
                annotator.kind = AnnotatorChoice::Noise;
            }
            annotator.accuracy = v;
            calibrate = true;
        }
        None => {}
    }
    let shifted = noise_mean != 0.0 || cfg.data.noise_sigma > 0.0;
    if shifted {
        target = shift_domain(&target, noise_mean, cfg.data.noise_sigma, seed::derive(seed, "data/noise"))?;
    }
    let exp = sample_splits(
        &source,
        &target,
        cfg.data.n_source,
        n_target,
        cfg.data.n_validation,
        seed,
    )?;
    let reference = || -> wal_core::Result<_> {
        let all = exp.source.concat(&exp.target, "reference")?;
        if exp.validation.is_empty() {
            Ok(all)
        } else {
            all.concat(&exp.validation, "reference")
        }
    };
    let a = match annotator.kind {
        AnnotatorChoice::Earlystop => {
            let model = SynthModel::new(&synth)?;
            let pool = model.sample(Domain::Source, annotator.pool_per_class, "annotator/pool")?;
            if calibrate {
                let mut calibration =
                    model.sample(Domain::Target, annotator.calibration_per_class, "annotator/calibration")?;
                if shifted {
                    let s = seed::derive(seed, "annotator/calibration_noise");
                    calibration = shift_domain(&calibration, noise_mean, cfg.data.noise_sigma, s)?;
                }
                let es = EarlyStopConfig {
                    epochs: annotator.max_epochs,
                    ..annotator.earlystop.clone()
                };
                make_calibrated_annotator(&pool, &calibration, &es, annotator.accuracy, seed)?
            } else {
                make_earlystop_annotator(&pool, &annotator.earlystop, seed)?
            }
        }
        AnnotatorChoice::Noise => make_noise_annotator(&reference()?, annotator.accuracy, annotator.sharpness, seed)?,
        AnnotatorChoice::Perfect => make_perfect_annotator(&reference()?)?,
        AnnotatorChoice::Constant => {
            let m = exp.num_classes();
            make_constant_annotator(vec![1.0 / m as f64; m], exp.feature_dim())?
        }
    };
    Ok((exp, a))
}

/// Report written for a cell: the method's own report, or the failure.
#[derive(Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum CellReport<'a> {
    Ok {
        cell: String,
        axis_value: Option<f64>,
        annotator_accuracy: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        run: Option<&'a RunReport>,
        #[serde(skip_serializing_if = "Option::is_none")]
        baseline: Option<&'a BaselineResult>,
    },
    Failed {
        cell: String,
        error: String,
    },
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io(path, e))
}

fn save_splits(dir: &Path, exp: &ExperimentData, a: &WeakAnnotator) -> Result<(), CliError> {
    format::save_dataset(&exp.source, &dir.join("source.wds")).map_err(fmt_err)?;
    format::save_dataset(&exp.target, &dir.join("target.wds")).map_err(fmt_err)?;
    if !exp.validation.is_empty() {
        format::save_dataset(&exp.validation, &dir.join("validation.wds")).map_err(fmt_err)?;
    }
    format::save_annotator(a, &dir.join("annotator.wds")).map_err(fmt_err)
}

/// Execute one cell, writing its report and artifacts under `out`.
pub fn run_cell(cfg: &ExperimentConfig, cell: Cell, out: &Path) -> Result<CellMetrics, CliError> {
    let id = cell.id();
    let fail = |msg: String| CliError::Runtime(format!("cell {id} failed: {msg}"));
    let report_path = out.join("reports").join(format!("{id}.json"));
    let started = Instant::now();
    let (exp, annotator) = build_experiment(cfg, cell.axis, cell.seed).map_err(|e| fail(e.to_string()))?;
    let annotator_accuracy = evaluate(&annotator, &exp.validation).map_err(|e| fail(e.to_string()))?.accuracy;
    let train = TrainConfig {
        seed: cell.seed,
        ..cfg.train.clone()
    };
    let record = cfg.record_wall_time;

    let outcome: wal_core::Result<(Option<RunReport>, Option<BaselineResult>)> = match cell.method {
        Method::Wal => {
            let dir = out.join("cells").join(&id);
            if cfg.save_artifacts {
                fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
                save_splits(&dir, &exp, &annotator)?;
            }
            let mut saved: Result<(), CliError> = Ok(());
            let mut clock = Instant::now();
            let result = run_wal_observed(&exp, &annotator, &train, &mut |m: &ModelTriple, r: &mut StageReport| {
                if record {
                    r.wall_time = clock.elapsed().as_secs_f64();
                }
                if cfg.save_artifacts && saved.is_ok() {
                    let path = dir.join(format!("stage{}.ckpt", r.stage));
                    saved = format::save_checkpoint(m, &path).map_err(fmt_err);
                }
                clock = Instant::now();
            });
            saved?;
            result.and_then(|run| {
                if cfg.save_artifacts {
                    format::save_dataset(&run.relabeled, &dir.join("relabeled.wds"))
                        .map_err(|e| wal_core::Error::Schema(e.to_string()))?;
                }
                Ok((Some(run.report), None))
            })
        }
        Method::Bwa => run_bwa(&annotator, &exp.validation).map(|r| (None, Some(r))),
        Method::Bt => run_bt(&exp, &train).map(|r| (None, Some(r.result))),
        Method::Bf1 => run_bf1(&exp, &annotator, &train).map(|r| (None, Some(r.result))),
        Method::Bf2 => run_bf2(&exp, &annotator, &train).map(|r| (None, Some(r.result))),
        Method::Bdirect => run_bdirect(&exp, &annotator, &train).map(|r| (None, Some(r.result))),
    };

    let (run, baseline) = match outcome {
        Ok(v) => v,
        Err(e) => {
            write_json(
                &report_path,
                &CellReport::Failed {
                    cell: id.clone(),
                    error: e.to_string(),
                },
            )?;
            return Err(fail(e.to_string()));
        }
    };
    write_json(
        &report_path,
        &CellReport::Ok {
            cell: id.clone(),
            axis_value: cell.axis.map(|a| a.1),
            annotator_accuracy,
            run: run.as_ref(),
            baseline: baseline.as_ref(),
        },
    )?;
    let (accuracy, per_class_accuracy, class_counts) = match (run, baseline) {
        (Some(r), _) => (r.final_accuracy, r.per_class_accuracy, r.class_counts),
        (_, Some(b)) => (b.accuracy, b.per_class_accuracy, b.class_counts),
        _ => unreachable!("every method yields a report"),
    };
    Ok(CellMetrics {
        method: cell.method,
        seed: cell.seed,
        axis_value: cell.axis.map(|a| a.1),
        accuracy,
        per_class_accuracy,
        class_counts,
        annotator_accuracy,
        wall_time: if record { started.elapsed().as_secs_f64() } else { 0.0 },
    })
}

/// Run every cell, on `cfg.workers` threads, returning metrics in grid order.
pub fn run_cells(cfg: &ExperimentConfig, cells: &[Cell], out: &Path) -> Result<Vec<CellMetrics>, CliError> {
    for sub in ["reports", "cells"] {
        let p = out.join(sub);
        fs::create_dir_all(&p).map_err(|e| io(&p, e))?;
    }
    let go = |c: &Cell| {
        log::info!("running cell {}", c.id());
        run_cell(cfg, *c, out)
    };
    if cfg.workers <= 1 {
        return cells.iter().map(go).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let results: Vec<_> = pool.install(|| cells.par_iter().map(go).collect());
    results.into_iter().collect()
}

fn write_csv(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, buf).map_err(|e| io(path, e))
}

/// `run` and `baseline`: every (method, seed) cell, then `metrics.csv`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<Vec<CellMetrics>, CliError> {
    let rows = run_cells(cfg, &cells(cfg, false), &cfg.out)?;
    write_csv(&cfg.out.join("metrics.csv"), |b| write_metrics(b, &rows, false))?;
    Ok(rows)
}

/// `sweep`: the grid over the configured axis, then `metrics.csv`,
/// `sweep.csv` and `sweep_<axis>.svg`.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<CellMetrics>, CliError> {
    let Some(spec) = &cfg.sweep else {
        return Err(CliError::Config(crate::config::ConfigError {
            message: "`sweep` needs a [sweep] table with `axis` and `values`".into(),
            location: None,
            path: None,
        }));
    };
    let rows = run_cells(cfg, &cells(cfg, true), &cfg.out)?;
    write_csv(&cfg.out.join("metrics.csv"), |b| write_metrics(b, &rows, true))?;
    let points = aggregate(&rows);
    write_csv(&cfg.out.join("sweep.csv"), |b| write_sweep(b, spec.axis, &points))?;
    let svg = cfg.out.join(format!("sweep_{}.svg", spec.axis.name()));
    fs::write(&svg, sweep_svg(spec.axis, &points)).map_err(|e| io(&svg, e))?;
    Ok(rows)
}

/// Bound report of one WAL cell, rebuilt from its artifacts.
pub fn bound_for_cell(cfg: &ExperimentConfig, cell: Cell, out: &Path) -> Result<BoundReport, CliError> {
    let dir = out.join("cells").join(cell.id());
    let need = |name: &str| -> Result<PathBuf, CliError> {
        let p = dir.join(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::Runtime(format!(
                "cell {}: missing {} (run `wal run` with artifacts first)",
                cell.id(),
                p.display()
            )))
        }
    };
    let stage1 = format::load_checkpoint(&need("stage1.ckpt")?).map_err(fmt_err)?;
    let stage2 = format::load_checkpoint(&need("stage2.ckpt")?).map_err(fmt_err)?;
    let model = format::load_checkpoint(&need("stage4.ckpt")?).map_err(fmt_err)?;
    let source = format::load_dataset(&need("source.wds")?).map_err(fmt_err)?;
    let target = format::load_dataset(&need("target.wds")?).map_err(fmt_err)?;
    let relabeled = format::load_dataset(&need("relabeled.wds")?).map_err(fmt_err)?;
    let annotator = format::load_annotator(&need("annotator.wds")?).map_err(fmt_err)?;
    let report_path = out.join("reports").join(format!("{}.json", cell.id()));
    let text = fs::read_to_string(&report_path).map_err(|e| io(&report_path, e))?;
    let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Runtime(e.to_string()))?;
    let report: RunReport = serde_json::from_value(json["run"].clone())
        .map_err(|e| CliError::Runtime(format!("{}: {e}", report_path.display())))?;
    let train = TrainConfig {
        delta: cfg.train.delta,
        sigma_h2: cfg.train.sigma_h2,
        ..report.config.clone()
    };
    let run = WalRun {
        stage1,
        stage2,
        model,
        relabeled,
        report,
    };
    bound_report_for_run(&run, &source, &target, &annotator, &train, cfg.bound.pool_size, cfg.bound.loss_kind)
        .map_err(core)
}

#[derive(Serialize)]
struct BoundEntry<'a> {
    cell: String,
    seed: u64,
    axis_value: Option<f64>,
    report: &'a BoundReport,
}

/// `bound`: a BoundReport for every WAL cell of a finished run or sweep,
/// written as `bound.json` and a term-per-row `bound.csv`.
pub fn cmd_bound(cfg: &ExperimentConfig) -> Result<Vec<(Cell, BoundReport)>, CliError> {
    let grid: Vec<Cell> = cells(cfg, cfg.sweep.is_some())
        .into_iter()
        .filter(|c| c.method == Method::Wal)
        .collect();
    if grid.is_empty() {
        return Err(CliError::Runtime("no wal cells to bound; add `wal` to `methods`".into()));
    }
    let mut out = Vec::new();
    for cell in grid {
        log::info!("bounding cell {}", cell.id());
        out.push((cell, bound_for_cell(cfg, cell, &cfg.out)?));
    }
    let entries: Vec<BoundEntry> = out
        .iter()
        .map(|(c, r)| BoundEntry {
            cell: c.id(),
            seed: c.seed,
            axis_value: c.axis.map(|a| a.1),
            report: r,
        })
        .collect();
    write_json(&cfg.out.join("bound.json"), &entries)?;
    write_csv(&cfg.out.join("bound.csv"), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["cell", "seed", "axis_value", "term", "value"])?;
        for e in &entries {
            let axis = e.axis_value.map(|v| v.to_string()).unwrap_or_default();
            for (term, value) in e.report.terms() {
                w.write_record([&e.cell, &e.seed.to_string(), &axis, term, &value.to_string()])?;
            }
            w.write_record([&e.cell, &e.seed.to_string(), &axis, "total", &e.report.total.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(out)
}
