//! File formats: `.f64` rasters, 16-bit PGM previews, JSON manifests and
//! convergence CSVs.
//!
//! A raster is the ASCII line `MCIR-F64 1`, the ASCII line `rows cols`, then
//! `rows·cols` little-endian `f64` values in row-major order.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{ConvergenceRecord, RecordRow};
use crate::error::{Error, Result};
use crate::grid::{Grid, Image, Shape, Sinogram};
use crate::motion::MotionParams;
use crate::projector::Geometry;
use crate::simulate::{GatedDataset, NoiseModel, PhantomKind};
use crate::solvers::{SaddlePoint, SaddleSource};

pub const RASTER_MAGIC: &[u8] = b"MCIR-F64 1\n";
pub const CSV_HEADER: &str = "epoch,dist_sq,objective,rmse_to_truth,fwd_calls,adj_calls";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

pub fn encode_raster(grid: &Grid) -> Vec<u8> {
    let header = format!("{} {}\n", grid.rows(), grid.cols());
    let mut out = Vec::with_capacity(RASTER_MAGIC.len() + header.len() + 8 * grid.shape().len());
    out.extend_from_slice(RASTER_MAGIC);
    out.extend_from_slice(header.as_bytes());
    for v in grid.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raster(bytes: &[u8]) -> Result<Grid> {
    let parse = |offset: usize, reason: &str| Error::Parse {
        offset,
        reason: reason.to_string(),
    };
    if !bytes.starts_with(RASTER_MAGIC) {
        let bad = bytes
            .iter()
            .zip(RASTER_MAGIC)
            .position(|(a, b)| a != b)
            .unwrap_or(bytes.len());
        return Err(parse(bad, "missing `MCIR-F64 1` magic line"));
    }
    let start = RASTER_MAGIC.len();
    let end = bytes[start..]
        .iter()
        .take(64)
        .position(|&b| b == b'\n')
        .map(|p| start + p)
        .ok_or_else(|| parse(start, "unterminated dimension line"))?;
    let line = std::str::from_utf8(&bytes[start..end]).map_err(|_| parse(start, "dimension line is not ASCII"))?;
    let mut fields = line.split(' ');
    let mut dim = |what: &str| -> Result<usize> {
        let f = fields.next().ok_or_else(|| parse(start, &format!("missing {what}")))?;
        if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
            return Err(parse(start, &format!("{what} `{f}` is not a decimal integer")));
        }
        f.parse::<usize>().map_err(|_| parse(start, &format!("{what} out of range")))
    };
    let rows = dim("rows")?;
    let cols = dim("cols")?;
    if fields.next().is_some() {
        return Err(parse(start, "trailing fields on dimension line"));
    }
    let payload = end + 1;
    let count = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| parse(start, "dimensions overflow"))?;
    let available = bytes.len() - payload;
    if available != count {
        return Err(parse(
            payload + available.min(count),
            &format!("expected {count} payload bytes, found {available}"),
        ));
    }
    let data = bytes[payload..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Grid::from_vec(Shape::new(rows, cols), data)
}

pub fn write_raster(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    fs::write(path, encode_raster(grid))?;
    Ok(())
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Grid> {
    decode_raster(&fs::read(path)?)
}

/// Binary 16-bit PGM, mapping `[min, max]` affinely onto `[0, 65535]`.
/// A constant image maps to 0.
pub fn encode_pgm(grid: &Grid) -> Result<Vec<u8>> {
    if !grid.is_finite() {
        return Err(Error::invalid("image", "cannot export non-finite values"));
    }
    let (lo, hi) = grid.min_max();
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n65535\n", grid.cols(), grid.rows()).into_bytes();
    for &v in grid.as_slice() {
        let level = if span > 0.0 {
            ((v - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        };
        out.extend_from_slice(&level.to_be_bytes());
    }
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    fs::write(path, encode_pgm(grid)?)?;
    Ok(())
}

/// Power-iteration estimates recorded with a dataset or run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub base_norm_sq: f64,
    pub gate_norms_sq: Vec<f64>,
    pub stacked_norm_sq: f64,
    pub power_iterations: usize,
    pub power_seed: u64,
}

/// Which inputs are synthetic stand-ins rather than measured values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StandIns {
    pub phantom: bool,
    pub sigma: bool,
    pub motion_magnitude: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFiles {
    pub truth: String,
    pub gates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub geometry: Geometry,
    pub phantom: Option<PhantomKind>,
    pub num_gates: usize,
    pub motion: Vec<MotionParams>,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norms: Option<NormRecord>,
    pub stand_ins: StandIns,
    pub files: DatasetFiles,
}

impl Manifest {
    pub fn for_dataset(data: &GatedDataset) -> Self {
        Self {
            version: MANIFEST_VERSION,
            geometry: data.geometry.clone(),
            phantom: data.phantom,
            num_gates: data.num_gates(),
            motion: data.motion.clone(),
            sigma: data.noise.sigma,
            seed: data.seed,
            magnitude: None,
            norms: None,
            stand_ins: StandIns {
                phantom: data.phantom.is_some(),
                sigma: true,
                motion_magnitude: true,
            },
            files: DatasetFiles {
                truth: "truth.f64".into(),
                gates: (0..data.num_gates()).map(|i| format!("gate_{i:03}.f64")).collect(),
            },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::invalid("version", format!("unsupported manifest version {}", m.version)));
        }
        if m.motion.len() != m.num_gates || m.files.gates.len() != m.num_gates {
            return Err(Error::invalid("manifest", "gate count disagrees with motion or file lists"));
        }
        m.geometry.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Writes `manifest.json`, `truth.f64` and one raster per gate into `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, data: &GatedDataset, manifest: &Manifest) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    if manifest.files.gates.len() != data.num_gates() {
        return Err(Error::invalid("manifest", "gate count disagrees with the dataset"));
    }
    write_raster(dir.join(&manifest.files.truth), &data.truth)?;
    for (name, d) in manifest.files.gates.iter().zip(&data.sinograms) {
        write_raster(dir.join(name), d)?;
    }
    manifest.write(dir.join(MANIFEST_FILE))
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(GatedDataset, Manifest)> {
    let dir = dir.as_ref();
    let manifest = Manifest::read(dir.join(MANIFEST_FILE))?;
    let truth = read_raster(dir.join(&manifest.files.truth))?;
    manifest.geometry.image_shape().ensure(truth.shape())?;
    let sinograms = manifest
        .files
        .gates
        .iter()
        .map(|name| {
            let d = read_raster(dir.join(name))?;
            manifest.geometry.sinogram_shape().ensure(d.shape())?;
            Ok(d)
        })
        .collect::<Result<Vec<Sinogram>>>()?;
    let data = GatedDataset {
        geometry: manifest.geometry.clone(),
        phantom: manifest.phantom,
        motion: manifest.motion.clone(),
        noise: NoiseModel::new(manifest.sigma)?,
        seed: manifest.seed,
        truth,
        sinograms,
    };
    Ok((data, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SaddleMeta {
    source: SaddleSource,
    converged: bool,
    residual: f64,
    iterations: usize,
    num_gates: usize,
}

/// `x.f64`, `y_000.f64`… plus `saddle.json`.
pub fn write_saddle(dir: impl AsRef<Path>, saddle: &SaddlePoint) -> Result<()> {
    let dir = dir.as_ref();
    write_primal_dual(dir, &saddle.x_star, &saddle.y_star)?;
    let meta = SaddleMeta {
        source: saddle.source,
        converged: saddle.converged,
        residual: saddle.residual,
        iterations: saddle.iterations,
        num_gates: saddle.y_star.len(),
    };
    fs::write(dir.join("saddle.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn read_saddle(dir: impl AsRef<Path>) -> Result<SaddlePoint> {
    let dir = dir.as_ref();
    let meta: SaddleMeta = serde_json::from_str(&fs::read_to_string(dir.join("saddle.json"))?)?;
    let (x_star, y_star) = read_primal_dual(dir, meta.num_gates)?;
    Ok(SaddlePoint {
        x_star,
        y_star,
        source: meta.source,
        converged: meta.converged,
        residual: meta.residual,
        iterations: meta.iterations,
    })
}

fn dual_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("y_{i:03}.f64"))
}

/// Dumps a primal-dual pair as `x.f64` and `y_000.f64`….
pub fn write_primal_dual(dir: impl AsRef<Path>, x: &Image, y: &[Sinogram]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_raster(dir.join("x.f64"), x)?;
    for (i, yi) in y.iter().enumerate() {
        write_raster(dual_path(dir, i), yi)?;
    }
    Ok(())
}

pub fn read_primal_dual(dir: impl AsRef<Path>, num_gates: usize) -> Result<(Image, Vec<Sinogram>)> {
    let dir = dir.as_ref();
    let x = read_raster(dir.join("x.f64"))?;
    let y = (0..num_gates)
        .map(|i| read_raster(dual_path(dir, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((x, y))
}

fn csv_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

fn write_csv_row(out: &mut impl Write, prefix: &str, row: &RecordRow) -> std::io::Result<()> {
    writeln!(
        out,
        "{prefix}{},{},{},{},{},{}",
        csv_float(row.epoch),
        csv_float(row.dist_sq),
        csv_float(row.objective),
        csv_float(row.rmse_to_truth),
        row.fwd_calls,
        row.adj_calls
    )
}

/// Writes the CSV header and one line per row. Floats use 17 significant
/// digits with `.` as the decimal mark.
pub fn write_csv(out: &mut impl Write, record: &ConvergenceRecord) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in record.rows() {
        write_csv_row(out, "", row)?;
    }
    Ok(())
}

/// Like [`write_csv`] with leading label columns, e.g. `algo,seed,`.
pub fn write_labelled_csv<'a>(
    out: &mut impl Write,
    label_header: &str,
    records: impl IntoIterator<Item = (String, &'a ConvergenceRecord)>,
) -> Result<()> {
    writeln!(out, "{label_header},{CSV_HEADER}")?;
    for (label, record) in records {
        for row in record.rows() {
            write_csv_row(out, &format!("{label},"), row)?;
        }
    }
    Ok(())
}

pub fn write_csv_file(path: impl AsRef<Path>, record: &ConvergenceRecord) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_csv(&mut f, record)?;
    f.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<ConvergenceRecord> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut record = ConvergenceRecord::new();
    let mut offset = 0usize;
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        let bad = |reason: String| Error::Parse { offset, reason };
        if index == 0 {
            if line != CSV_HEADER {
                return Err(bad("unexpected CSV header".into()));
            }
        } else if !line.is_empty() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(format!("expected 6 fields, found {}", f.len())));
            }
            let float = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("`{s}` is not a number")));
            let count = |s: &str| s.parse::<u64>().map_err(|_| bad(format!("`{s}` is not a count")));
            record.push(RecordRow {
                epoch: float(f[0])?,
                dist_sq: float(f[1])?,
                objective: float(f[2])?,
                rmse_to_truth: float(f[3])?,
                fwd_calls: count(f[4])?,
                adj_calls: count(f[5])?,
            })?;
        }
        offset += line.len() + 1;
    }
    Ok(record)
}
