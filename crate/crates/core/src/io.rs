//! File formats: sample CSV, loss curves, histogram CSV, metrics JSON,
//! manifests, and the binary checkpoint.
//!
//! Floats are written with 17 significant digits so files round-trip
//! bit-exactly; all emitters are deterministic byte-for-byte.

use crate::error::{Error, Result};
use crate::eval::Histogram;
use crate::geometry::DomainSpec;
use crate::schedule::NoiseSchedule;
use crate::score::{MlpParams, ScoreModel, TrainConfig, TrainRecord};
use crate::Method;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Render a float with full double precision (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// SHA-256 hex digest; used for config hashes in manifests.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Sample CSV
// ---------------------------------------------------------------------------

/// Write samples as CSV with header `x0,...,x{d-1}`.
pub fn write_samples_csv(path: &Path, samples: &[DVector<f64>]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to write".into()));
    }
    let d = samples[0].len();
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for s in samples {
        if s.len() != d {
            return Err(Error::DimensionMismatch("mixed sample dimensions".into()));
        }
        let row: Vec<String> = s.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a sample CSV produced by [`write_samples_csv`].
pub fn read_samples_csv(path: &Path) -> Result<Vec<DVector<f64>>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV".into()))??;
    let d = header.split(',').count();
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {}: {e}", lineno + 2)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != d {
            return Err(Error::Format(format!(
                "row {} has {} fields, header has {d}",
                lineno + 2,
                vals.len()
            )));
        }
        out.push(DVector::from_vec(vals));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Training log CSV
// ---------------------------------------------------------------------------

pub fn write_loss_csv(path: &Path, records: &[TrainRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "iteration,loss,lr")?;
    for r in records {
        writeln!(w, "{},{},{}", r.iteration, fmt_f64(r.loss), fmt_f64(r.lr))?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Histogram CSV
// ---------------------------------------------------------------------------

/// Marginal histograms: one row per (coordinate, bin) with the bin edges.
pub fn write_histogram_csv(path: &Path, hist: &Histogram) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "coordinate,bin,lo,hi,count")?;
    for (c, counts) in hist.marginals.iter().enumerate() {
        let edges = hist.edges(c);
        for (b, count) in counts.iter().enumerate() {
            writeln!(
                w,
                "{c},{b},{},{},{count}",
                fmt_f64(edges[b]),
                fmt_f64(edges[b + 1])
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Joint two-dimensional grid, when present. Returns whether a file was
/// written.
pub fn write_joint_histogram_csv(path: &Path, hist: &Histogram) -> Result<bool> {
    let Some(grid) = hist.joint.as_ref() else {
        return Ok(false);
    };
    let e0 = hist.edges(0);
    let e1 = hist.edges(1);
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "bin0,bin1,lo0,hi0,lo1,hi1,count")?;
    for i in 0..hist.bins {
        for j in 0..hist.bins {
            writeln!(
                w,
                "{i},{j},{},{},{},{},{}",
                fmt_f64(e0[i]),
                fmt_f64(e0[i + 1]),
                fmt_f64(e1[j]),
                fmt_f64(e1[j + 1]),
                grid[i * hist.bins + j]
            )?;
        }
    }
    w.flush()?;
    Ok(true)
}

// ---------------------------------------------------------------------------
// Metrics report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mmd2: f64,
    pub kernel: KernelReport,
    pub m: usize,
    pub m_y: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelReport {
    pub kind: String,
    pub bandwidth: f64,
    pub bandwidth_mode: String,
}

pub fn write_metrics_json(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

/// Provenance sidecar written next to every primary artifact. Contains no
/// timestamps so reruns stay byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: ManifestVersions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestVersions {
    pub cdiff_core: String,
}

impl Manifest {
    pub fn new(artifact: &Path, command: &str, config_hash: String, seed: u64) -> Self {
        Self {
            artifact: artifact
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            command: command.to_string(),
            config_hash,
            seed,
            versions: ManifestVersions { cdiff_core: env!("CARGO_PKG_VERSION").to_string() },
        }
    }
}

/// Manifest path for an artifact: `<artifact>.manifest.json`.
pub fn manifest_path(artifact: &Path) -> std::path::PathBuf {
    let mut os = artifact.as_os_str().to_owned();
    os.push(".manifest.json");
    std::path::PathBuf::from(os)
}

pub fn write_manifest(artifact: &Path, manifest: &Manifest) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(manifest_path(artifact))?);
    serde_json::to_writer_pretty(&mut w, manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"CDIFCKPT";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub method: Method,
    pub schedule: NoiseSchedule,
    pub domain: DomainSpec,
    pub domain_hash: String,
    pub delta: f64,
    pub train: TrainConfig,
    pub iteration: usize,
    /// `(rows, cols)` of each weight matrix in storage order; each block is
    /// followed by its bias vector.
    pub layers: Vec<(usize, usize)>,
    pub param_count: usize,
}

/// Write a checkpoint: magic, little-endian header length, JSON header, then
/// the parameter blocks (column-major weights then bias per layer) as
/// little-endian doubles.
pub fn write_checkpoint(
    path: &Path,
    model: &ScoreModel,
    method: Method,
    schedule: &NoiseSchedule,
    train: &TrainConfig,
    iteration: usize,
) -> Result<()> {
    let header = CheckpointHeader {
        format_version: CKPT_VERSION,
        method,
        schedule: schedule.clone(),
        domain: model.domain.clone(),
        domain_hash: model.domain.hash(),
        delta: model.delta,
        train: train.clone(),
        iteration,
        layers: model.params.weights.iter().map(|w| (w.nrows(), w.ncols())).collect(),
        param_count: model.params.param_count(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())?;
    w.write_all(&header_json)?;
    for (wm, b) in model.params.weights.iter().zip(&model.params.biases) {
        for v in wm.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in b.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint back into a model and its header.
pub fn read_checkpoint(path: &Path) -> Result<(ScoreModel, CheckpointHeader)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)?;
    if header.format_version != CKPT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            header.format_version
        )));
    }
    if header.domain.hash() != header.domain_hash {
        return Err(Error::Format("checkpoint domain hash does not match its domain".into()));
    }

    let mut read_f64 = |buf: &mut BufReader<std::fs::File>| -> Result<f64> {
        let mut b = [0u8; 8];
        buf.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let mut weights = Vec::with_capacity(header.layers.len());
    let mut biases = Vec::with_capacity(header.layers.len());
    let mut count = 0usize;
    for &(rows, cols) in &header.layers {
        let mut wm = DMatrix::zeros(rows, cols);
        for v in wm.as_mut_slice() {
            *v = read_f64(&mut r)?;
        }
        let mut b = DVector::zeros(rows);
        for v in b.as_mut_slice() {
            *v = read_f64(&mut r)?;
        }
        count += rows * cols + rows;
        weights.push(wm);
        biases.push(b);
    }
    if count != header.param_count {
        return Err(Error::Format(format!(
            "checkpoint parameter count {} does not match header {}",
            count, header.param_count
        )));
    }
    let mut trailing = Vec::new();
    r.read_to_end(&mut trailing)?;
    if !trailing.is_empty() {
        return Err(Error::Format("trailing bytes after checkpoint parameters".into()));
    }
    let params = MlpParams { weights, biases };
    let model = ScoreModel::new(params, header.delta, header.domain.clone(), header.schedule.t_max);
    Ok((model, header))
}
