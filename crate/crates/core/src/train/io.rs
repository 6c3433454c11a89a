//! `metrics.csv` and `events.jsonl`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::EpochMetrics;
use crate::error::{Error, Result};
use crate::pruner::PruneEvent;

const FIXED_COLUMNS: [&str; 6] = [
    "epoch",
    "loss_task",
    "loss_reg",
    "loss_all",
    "test_error_pct",
    "total_sparsity_pct",
];

pub fn write_metrics_csv(path: &Path, history: &[EpochMetrics], conv_layers: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((1..=conv_layers).map(|l| format!("active_conv{l}")));
    w.write_record(&header)?;
    for m in history {
        let mut row = vec![
            m.epoch.to_string(),
            m.loss_task.to_string(),
            m.loss_reg.to_string(),
            m.loss_all.to_string(),
            m.test_error_pct.to_string(),
            m.total_sparsity_pct.to_string(),
        ];
        row.extend(m.active_counts.iter().map(usize::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < FIXED_COLUMNS.len()
        || header.iter().zip(FIXED_COLUMNS).any(|(a, b)| a != b)
    {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("unexpected header {header:?}"),
        });
    }
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|e| bad(format!("column {}: {e}", header[i].to_string())))
        };
        out.push(EpochMetrics {
            epoch: rec[0].parse().map_err(|e| bad(format!("epoch: {e}")))?,
            loss_task: f(1)?,
            loss_reg: f(2)?,
            loss_all: f(3)?,
            test_error_pct: f(4)?,
            total_sparsity_pct: f(5)?,
            active_counts: (FIXED_COLUMNS.len()..rec.len())
                .map(|i| rec[i].parse().map_err(|e| bad(format!("active count: {e}"))))
                .collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

pub fn write_events(path: &Path, events: &[PruneEvent]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for e in events {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_events(path: &Path) -> Result<Vec<PruneEvent>> {
    BufReader::new(fs::File::open(path)?)
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}
