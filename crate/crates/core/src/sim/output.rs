use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::{eval_grid, BatchReport, ExperimentConfig, FieldSnapshot, MetricsRecord};
use crate::error::Result;
use crate::geometry::Point;

#[derive(Serialize)]
struct MetricsRow {
    run: usize,
    step: usize,
    alpv: f64,
    rmse: f64,
    mae: f64,
    wall_ms: f64,
}

/// `run,step,alpv,rmse,mae,wall_ms`, one row per run and measurement step.
pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (run, rec) in records.iter().enumerate() {
        for s in &rec.steps {
            wtr.serialize(MetricsRow {
                run,
                step: s.step,
                alpv: s.alpv,
                rmse: s.rmse,
                mae: s.mae,
                wall_ms: s.wall_ms,
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// The solver traces of one run as a JSON array, one entry per solve.
pub fn write_traces_json<W: Write>(record: &MetricsRecord, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, &record.traces)?;
    Ok(())
}

#[derive(Serialize)]
struct FieldRow {
    x: f64,
    y: f64,
    pred_mean: f64,
    pred_var: f64,
}

/// `x,y,pred_mean,pred_var` on the evaluation grid.
pub fn write_field_csv<W: Write>(grid: &[Point], snapshot: &FieldSnapshot, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (i, p) in grid.iter().enumerate() {
        wtr.serialize(FieldRow { x: p.x, y: p.y, pred_mean: snapshot.mean[i], pred_var: snapshot.var[i] })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes `metrics.csv`, `summary.json`, `trace_<run>.json` and
/// `field_<run>_<step>.csv` into `dir`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, report: &BatchReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_metrics_csv(&report.records, BufWriter::new(File::create(dir.join("metrics.csv"))?))?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("summary.json"))?), &report.summary)?;
    let grid = eval_grid(&cfg.domain, cfg.eval_grid);
    for (run, rec) in report.records.iter().enumerate() {
        write_traces_json(rec, BufWriter::new(File::create(dir.join(format!("trace_{run}.json")))?))?;
        for snap in &rec.snapshots {
            let path = dir.join(format!("field_{run}_{}.csv", snap.step));
            write_field_csv(&grid, snap, BufWriter::new(File::create(path)?))?;
        }
    }
    Ok(())
}
