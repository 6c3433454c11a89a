//! Table-style run summaries, filter images, and pruned-model export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{compact, count_active_filters, FilterCounts};
use crate::ops::GradientStore;
use crate::pruner::KernelMask;
use crate::regularizer::RegMode;
use crate::tensor::Tensor;
use crate::train::{Checkpoint, EpochMetrics};

/// One results-table row: method, lambda, error and per-layer filter counts.
/// Sparsity figures are always derived from the counts.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub method: String,
    pub lambda: f64,
    pub error_pct: f64,
    pub counts: FilterCounts,
}

pub fn method_label(mode: RegMode, lambda: f64) -> &'static str {
    match mode {
        _ if lambda == 0.0 => "baseline",
        RegMode::None => "baseline",
        RegMode::L1 => "l1",
        RegMode::L2 => "l2",
        RegMode::Ratio => "l1/l2",
    }
}

impl RunReport {
    /// Row for the checkpoint's final state (error from its last epoch).
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let error_pct = ckpt
            .history
            .last()
            .map(|m| m.test_error_pct)
            .ok_or_else(|| Error::Checkpoint("checkpoint has no epoch history".into()))?;
        Ok(Self {
            method: method_label(ckpt.config.reg.mode, ckpt.config.reg.lambda).to_string(),
            lambda: ckpt.config.reg.lambda,
            error_pct,
            counts: count_active_filters(&ckpt.network, &ckpt.mask)?,
        })
    }

    /// Row for one recorded epoch of a run.
    pub fn from_epoch(ckpt: &Checkpoint, metrics: &EpochMetrics) -> Self {
        Self {
            method: method_label(ckpt.config.reg.mode, ckpt.config.reg.lambda).to_string(),
            lambda: ckpt.config.reg.lambda,
            error_pct: metrics.test_error_pct,
            counts: FilterCounts {
                active: metrics.active_counts.clone(),
                original: ckpt.network.conv_filter_counts(),
            },
        }
    }

    pub fn total_sparsity_pct(&self) -> f64 {
        self.counts.total_sparsity_pct()
    }
}

pub fn render_table(rows: &[RunReport]) -> String {
    let layers = rows.iter().map(|r| r.counts.active.len()).max().unwrap_or(0);
    let mut header = vec![
        "Method".to_string(),
        "lambda".to_string(),
        "Error".to_string(),
    ];
    header.extend((1..=layers).map(|l| format!("Conv{l} filters (sparsity)")));
    header.push("Conv-filter sparsity".to_string());
    let mut body: Vec<Vec<String>> = Vec::new();
    for r in rows {
        let mut row = vec![
            r.method.clone(),
            if r.method == "baseline" {
                "-".to_string()
            } else {
                r.lambda.to_string()
            },
            format!("{:.2}%", r.error_pct),
        ];
        for l in 0..layers {
            row.push(match r.counts.active.get(l) {
                Some(&a) if a == r.counts.original[l] => a.to_string(),
                Some(&a) => format!("{a} ({:.1}%)", r.counts.layer_sparsity_pct(l)),
                None => String::new(),
            });
        }
        row.push(format!("{:.1}%", r.total_sparsity_pct()));
        body.push(row);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            body.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&body) {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

pub fn write_report_csv(path: &Path, rows: &[RunReport]) -> Result<()> {
    let layers = rows.iter().map(|r| r.counts.active.len()).max().unwrap_or(0);
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path)?;
    let mut header = vec![
        "method".to_string(),
        "lambda".to_string(),
        "error_pct".to_string(),
    ];
    for l in 1..=layers {
        header.push(format!("conv{l}_filters"));
        header.push(format!("conv{l}_original"));
        header.push(format!("conv{l}_sparsity_pct"));
    }
    header.push("total_sparsity_pct".to_string());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.method.clone(), r.lambda.to_string(), r.error_pct.to_string()];
        for l in 0..r.counts.active.len() {
            rec.push(r.counts.active[l].to_string());
            rec.push(r.counts.original[l].to_string());
            rec.push(format!("{:.1}", r.counts.layer_sparsity_pct(l)));
        }
        rec.push(format!("{:.1}", r.total_sparsity_pct()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv(path: &Path) -> Result<Vec<RunReport>> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() < 4 || (rec.len() - 4) % 3 != 0 {
            return Err(bad(format!("row with {} fields", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|e| bad(format!("field {i}: {e}")))
        };
        let int = |i: usize| -> Result<usize> {
            rec[i].parse().map_err(|e| bad(format!("field {i}: {e}")))
        };
        let layers = (rec.len() - 4) / 3;
        let mut counts = FilterCounts {
            active: Vec::with_capacity(layers),
            original: Vec::with_capacity(layers),
        };
        for l in 0..layers {
            counts.active.push(int(3 + 3 * l)?);
            counts.original.push(int(4 + 3 * l)?);
        }
        rows.push(RunReport {
            method: rec[0].to_string(),
            lambda: num(1)?,
            error_pct: num(2)?,
            counts,
        });
    }
    Ok(rows)
}

/// Grid of each kernel's first input channel as a binary PGM (P5).
///
/// Tiles are laid out `ceil(sqrt(kernels))` per row with one-pixel white
/// separators. Each tile is min-max scaled on its own; all-zero (pruned)
/// kernels are black and other constant kernels mid-gray.
pub fn render_filters_pgm(weights: &Tensor) -> Result<Vec<u8>> {
    if weights.ndim() != 4 {
        return Err(Error::Config(format!(
            "expected conv weights (K, C, H, W), got {:?}",
            weights.shape()
        )));
    }
    let (k, kh, kw) = (weights.dim(0), weights.dim(2), weights.dim(3));
    let vol = weights.len() / k;
    let cols = (k as f64).sqrt().ceil() as usize;
    let rows = k.div_ceil(cols);
    let width = cols * (kw + 1) + 1;
    let height = rows * (kh + 1) + 1;
    let mut pixels = vec![255u8; width * height];
    for i in 0..k {
        let tile = &weights.data()[i * vol..i * vol + kh * kw];
        let (lo, hi) = tile
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let all_zero = tile.iter().all(|&v| v == 0.0);
        let (ty, tx) = (i / cols, i % cols);
        for y in 0..kh {
            for x in 0..kw {
                let v = tile[y * kw + x];
                let p = if all_zero {
                    0
                } else if hi == lo {
                    128
                } else {
                    ((v - lo) / (hi - lo) * 255.0).round() as u8
                };
                pixels[(ty * (kh + 1) + 1 + y) * width + tx * (kw + 1) + 1 + x] = p;
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels);
    Ok(out)
}

/// Compacts a checkpoint's network: pruned filters and their downstream
/// input slices are deleted. The exported mask is all-active and the
/// momentum buffers are reset.
pub fn export_pruned(ckpt: &Checkpoint) -> Result<Checkpoint> {
    let network = compact(&ckpt.network, &ckpt.mask)?;
    let mask = KernelMask::all_active(&network);
    let velocity = GradientStore::zeros_like(&network.params()).velocity;
    Ok(Checkpoint {
        network,
        mask,
        velocity,
        config: ckpt.config,
        history: ckpt.history.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgmHeader {
    pub width: usize,
    pub height: usize,
}

/// Parses the `P5` header of a PGM written by [`render_filters_pgm`] and
/// returns it with the pixel payload.
pub fn parse_pgm(bytes: &[u8]) -> Result<(PgmHeader, &[u8])> {
    let bad = || Error::Config("not a binary PGM".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let width: usize = fields[1].parse().map_err(|_| bad())?;
    let height: usize = fields[2].parse().map_err(|_| bad())?;
    let payload = &bytes[pos + 1..];
    if payload.len() != width * height {
        return Err(bad());
    }
    Ok((PgmHeader { width, height }, payload))
}
