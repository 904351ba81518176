//! The turbulence × message-length accuracy grid.
//!
//! Every cell `(n_bits, T, seed)` generates its own dataset, computes
//! diagrams, trains both models and evaluates them. A finished cell leaves
//! a marker `cells/<id>.done` holding its CSV rows and their sha256, so an
//! interrupted sweep resumes where it stopped. The final CSV is rebuilt
//! from the markers in canonical order and written atomically.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::dataset::{generate_dataset, split, Dataset};
use super::diagrams::compute_diagrams;
use super::{evaluate, model_inputs, train_model, EvalMeta, EvalReport, ModelKind};
use crate::homology::PersistenceDiagram;
use crate::io;
use crate::rng;
use crate::{Error, Result};

pub const CSV_HEADER: &str = "model,n_bits,turbulence,seed,accuracy,p_e";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub model: ModelKind,
    pub n_bits: u32,
    pub turbulence: f64,
    pub seed: u64,
    pub accuracy: f64,
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6}",
            self.model,
            self.n_bits,
            self.turbulence,
            self.seed,
            self.accuracy,
            1.0 - self.accuracy
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::format("sweep row", line.to_string());
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        Ok(SweepRow {
            model: f[0].parse()?,
            n_bits: f[1].parse().map_err(|_| bad())?,
            turbulence: f[2].parse().map_err(|_| bad())?,
            seed: f[3].parse().map_err(|_| bad())?,
            accuracy: f[4].parse().map_err(|_| bad())?,
        })
    }
}

pub fn parse_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::format("sweep csv", "missing header"));
    }
    lines.filter(|l| !l.trim().is_empty()).map(SweepRow::parse).collect()
}

/// Both evaluations of one grid cell.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub cnn: EvalReport,
    pub ph_cnn: EvalReport,
}

/// Seed of the dataset behind cell `(n_bits, turbulence, seed)`.
pub fn cell_seed(cfg: &ExperimentConfig, n_bits: u32, turbulence: f64, seed: u64) -> u64 {
    rng::derive_seed(&[cfg.seed, n_bits as u64, turbulence.to_bits(), seed])
}

/// Run one cell in memory.
pub fn run_cell(cfg: &ExperimentConfig, n_bits: u32, turbulence: f64, seed: u64) -> Result<CellResult> {
    let mut cfg = cfg.clone();
    cfg.data.n_bits = n_bits;
    cfg.data.charges.clear();
    cfg.data.turbulence = turbulence;
    cfg.train.seed = rng::derive_seed(&[cfg.train.seed, seed]);
    cfg.validate()?;
    let started = Instant::now();
    let (dataset, _) = generate_dataset(&cfg.data, cell_seed(&cfg, n_bits, turbulence, seed))?;
    let diagrams = compute_diagrams(&dataset, cfg.data.grid()?, &cfg.filtration)?;
    let (train, test) = split(&dataset, cfg.split_ratio, rng::derive_seed(&[cfg.seed, seed]))?;
    let run = |kind| train_and_eval(kind, &cfg, &dataset, &diagrams, &train, &test, turbulence, seed);
    let cnn = run(ModelKind::Cnn)?;
    let ph_cnn = run(ModelKind::PhCnn)?;
    log::info!(
        "cell n={n_bits} T={turbulence} seed={seed}: cnn {:.4} ph_cnn {:.4} ({:.1}s)",
        cnn.accuracy,
        ph_cnn.accuracy,
        started.elapsed().as_secs_f64()
    );
    Ok(CellResult { cnn, ph_cnn })
}

#[allow(clippy::too_many_arguments)]
fn train_and_eval(
    kind: ModelKind,
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    diagrams: &[PersistenceDiagram],
    train: &[usize],
    test: &[usize],
    turbulence: f64,
    seed: u64,
) -> Result<EvalReport> {
    let trained = train_model(kind, cfg, dataset, Some(diagrams), train)?;
    let inputs = model_inputs(kind, dataset, Some(diagrams), test)?;
    let labels: Vec<usize> = test.iter().map(|&i| dataset.samples[i].label as usize).collect();
    evaluate(
        &trained.model,
        &inputs,
        &labels,
        EvalMeta {
            model: kind,
            n_bits: dataset.n_bits,
            turbulence,
            seed,
        },
    )
}

fn cell_id(n_bits: u32, turbulence: f64, seed: u64) -> String {
    format!("n{n_bits}_T{turbulence}_s{seed}")
}

fn marker_body(rows: &str) -> String {
    format!("{rows}sha256={}\n", io::sha256_hex(rows.as_bytes()))
}

/// Rows stored in a marker, verified against their checksum.
fn read_marker(path: &Path, id: &str) -> Result<Vec<SweepRow>> {
    let text = String::from_utf8(io::read_file(path)?).map_err(|_| Error::CorruptCell { cell: id.into() })?;
    let (rows, sum) = text
        .rsplit_once("sha256=")
        .ok_or_else(|| Error::CorruptCell { cell: id.into() })?;
    if io::sha256_hex(rows.as_bytes()) != sum.trim() {
        return Err(Error::CorruptCell { cell: id.into() });
    }
    rows.lines().map(SweepRow::parse).collect()
}

/// Run (or resume) the full grid in `work_dir` and write the CSV to `out`.
///
/// Cells run in parallel on the current rayon pool; results do not depend
/// on scheduling.
pub fn run_sweep(cfg: &ExperimentConfig, work_dir: &Path, out: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let cells_dir = work_dir.join("cells");
    std::fs::create_dir_all(&cells_dir).map_err(|e| Error::io(cells_dir.display().to_string(), e))?;
    let mut cells = Vec::new();
    for &n in &cfg.sweep.bits {
        for &t in &cfg.sweep.turbulence {
            for &s in &cfg.sweep.seeds {
                cells.push((n, t, s));
            }
        }
    }
    let results: Vec<Vec<SweepRow>> = cells
        .par_iter()
        .map(|&(n, t, s)| {
            let id = cell_id(n, t, s);
            let marker: PathBuf = cells_dir.join(format!("{id}.done"));
            if marker.exists() {
                log::debug!("cell {id} already done");
                return read_marker(&marker, &id);
            }
            let r = run_cell(cfg, n, t, s)?;
            let rows = vec![
                SweepRow {
                    model: ModelKind::Cnn,
                    n_bits: n,
                    turbulence: t,
                    seed: s,
                    accuracy: r.cnn.accuracy,
                },
                SweepRow {
                    model: ModelKind::PhCnn,
                    n_bits: n,
                    turbulence: t,
                    seed: s,
                    accuracy: r.ph_cnn.accuracy,
                },
            ];
            let text: String = rows.iter().map(|r| r.to_csv() + "\n").collect();
            io::write_atomic(&marker, marker_body(&text).as_bytes())?;
            // Round-trip through the text so resumed and fresh runs agree.
            rows.iter().map(|r| SweepRow::parse(&r.to_csv())).collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<SweepRow> = results.into_iter().flatten().collect();
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.to_csv());
        csv.push('\n');
    }
    io::write_atomic(out, csv.as_bytes())?;
    Ok(rows)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median-over-seeds view of a sweep.
#[derive(Clone, Debug)]
pub struct SweepSummary {
    pub bits: Vec<u32>,
    pub turbulence: Vec<f64>,
    /// `(model, n, T, median accuracy)`.
    pub medians: Vec<(ModelKind, u32, f64, f64)>,
}

impl SweepSummary {
    pub fn from_rows(rows: &[SweepRow]) -> Self {
        let mut bits: Vec<u32> = rows.iter().map(|r| r.n_bits).collect();
        bits.sort_unstable();
        bits.dedup();
        let mut turbulence: Vec<f64> = rows.iter().map(|r| r.turbulence).collect();
        turbulence.sort_by(f64::total_cmp);
        turbulence.dedup();
        let mut medians = Vec::new();
        for model in [ModelKind::Cnn, ModelKind::PhCnn] {
            for &n in &bits {
                for &t in &turbulence {
                    let acc: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.model == model && r.n_bits == n && r.turbulence == t)
                        .map(|r| r.accuracy)
                        .collect();
                    if !acc.is_empty() {
                        medians.push((model, n, t, median(acc)));
                    }
                }
            }
        }
        SweepSummary {
            bits,
            turbulence,
            medians,
        }
    }

    pub fn median(&self, model: ModelKind, n: u32, t: f64) -> Option<f64> {
        self.medians
            .iter()
            .find(|m| m.0 == model && m.1 == n && m.2 == t)
            .map(|m| m.3)
    }

    /// Cells whose median accuracy exceeds that of the next-lower turbulence
    /// level by more than `tolerance`, as `(model, n, T)`.
    pub fn monotonicity_violations(&self, tolerance: f64) -> Vec<(ModelKind, u32, f64)> {
        let mut out = Vec::new();
        for model in [ModelKind::Cnn, ModelKind::PhCnn] {
            for &n in &self.bits {
                for w in self.turbulence.windows(2) {
                    if let (Some(a), Some(b)) = (self.median(model, n, w[0]), self.median(model, n, w[1])) {
                        if b > a + tolerance {
                            out.push((model, n, w[1]));
                        }
                    }
                }
            }
        }
        out
    }

    /// Median over seeds of the per-seed accuracy gap (ph_cnn − cnn).
    pub fn gap(rows: &[SweepRow], n: u32, t: f64) -> f64 {
        let pick = |m| {
            let mut v: Vec<(u64, f64)> = rows
                .iter()
                .filter(|r| r.model == m && r.n_bits == n && r.turbulence == t)
                .map(|r| (r.seed, r.accuracy))
                .collect();
            v.sort_by_key(|p| p.0);
            v
        };
        let (a, b) = (pick(ModelKind::Cnn), pick(ModelKind::PhCnn));
        median(
            a.iter()
                .zip(&b)
                .filter(|(x, y)| x.0 == y.0)
                .map(|(x, y)| y.1 - x.1)
                .collect(),
        )
    }
}
