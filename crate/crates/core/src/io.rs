//! PGM image, mask, report-CSV and config-file serialization.
//!
//! Formats are deterministic: frames are 8-bit binary PGM, reports are
//! CSV with floats printed at 17 significant digits (so a re-parse
//! recovers every value bit-exactly), configs are flat `key = value`
//! lines with `#` comments.

use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, DensityGrid, DensityPath, ObstacleMask};
use crate::metrics::SsimSequence;
use crate::transport_energy::EnergyReport;
use ndarray::Array2;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// CSV header of the per-slice report.
pub const REPORT_HEADER: &str = "t,energy,mass,ssim_next";

// ---------------------------------------------------------------------
// PGM

struct Pgm {
    width: usize,
    height: usize,
    maxval: u32,
    pixels: Vec<u32>,
}

/// Pull the next whitespace-delimited ASCII token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::CorruptHeader("unexpected end of file".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    let tok = next_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| Error::CorruptHeader(format!("{what} is not a number: {tok:?}")))
}

fn parse_pgm(bytes: &[u8]) -> Result<Pgm> {
    if bytes.len() < 2 {
        return Err(Error::CorruptHeader("file shorter than a magic number".into()));
    }
    let magic = &bytes[..2];
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        _ => {
            return Err(Error::UnsupportedFormat(format!(
                "expected PGM magic P2 or P5, found {:?}",
                String::from_utf8_lossy(magic)
            )))
        }
    };
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, "width")? as usize;
    let height = header_number(bytes, &mut pos, "height")? as usize;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::CorruptHeader(format!("degenerate size {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedFormat(format!(
            "only 8-bit PGM is supported, maxval = {maxval}"
        )));
    }
    let count = width * height;
    let mut pixels = Vec::with_capacity(count);
    if binary {
        // single whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::CorruptHeader("missing raster separator".into()));
        }
        pos += 1;
        if bytes.len() < pos + count {
            return Err(Error::CorruptHeader(format!(
                "raster truncated: expected {count} bytes, found {}",
                bytes.len() - pos
            )));
        }
        pixels.extend(bytes[pos..pos + count].iter().map(|&b| b as u32));
    } else {
        for _ in 0..count {
            pixels.push(header_number(bytes, &mut pos, "pixel")?);
        }
    }
    if let Some(bad) = pixels.iter().find(|&&v| v > maxval) {
        return Err(Error::CorruptHeader(format!(
            "pixel value {bad} exceeds maxval {maxval}"
        )));
    }
    Ok(Pgm {
        width,
        height,
        maxval,
        pixels,
    })
}

/// Read a square 8-bit PGM image (P2 or P5) into a density grid with
/// values in [0, 1] (pixel / maxval).
pub fn read_image(path: &Path) -> Result<DensityGrid> {
    let pgm = parse_pgm(&fs::read(path)?)?;
    if pgm.width != pgm.height {
        return Err(Error::NonSquare {
            width: pgm.width,
            height: pgm.height,
        });
    }
    let scale = 1.0 / pgm.maxval as f64;
    let values = Array2::from_shape_vec(
        (pgm.height, pgm.width),
        pgm.pixels.iter().map(|&v| v as f64 * scale).collect(),
    )
    .expect("pixel count matches header");
    DensityGrid::new(values)
}

/// Read an obstacle mask from a PGM file: nonzero pixels are obstacles.
/// The mask must be n×n to match the images it constrains.
pub fn read_mask(path: &Path, n: usize) -> Result<ObstacleMask> {
    let pgm = parse_pgm(&fs::read(path)?)?;
    if pgm.width != n || pgm.height != n {
        return Err(Error::ShapeMismatch(format!(
            "mask is {}x{}, images are {n}x{n}",
            pgm.height, pgm.width
        )));
    }
    let cells = Array2::from_shape_vec(
        (pgm.height, pgm.width),
        pgm.pixels.iter().map(|&v| v != 0).collect(),
    )
    .expect("pixel count matches header");
    ObstacleMask::new(cells)
}

/// Write every slice of `path` as an 8-bit binary PGM named
/// `<prefix>_0000.pgm`, `<prefix>_0001.pgm`, … inside `dir`. Values are
/// clamped to [0, 1] before quantization. Returns the written paths.
pub fn write_frames(path: &DensityPath, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let n = path.n();
    let mut files = Vec::with_capacity(path.slices().len());
    for (t, slice) in path.slices().iter().enumerate() {
        let file = dir.join(format!("{prefix}_{t:04}.pgm"));
        let mut out = Vec::with_capacity(16 + n * n);
        write!(out, "P5\n{n} {n}\n255\n").expect("in-memory write");
        out.extend(
            slice
                .values()
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        fs::write(&file, out)?;
        files.push(file);
    }
    Ok(files)
}

/// Read every `*.pgm` in `dir`, sorted by file name, as a density path.
pub fn read_frames(dir: &Path) -> Result<DensityPath> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    names.sort();
    if names.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 frames, found {} in {}",
            names.len(),
            dir.display()
        )));
    }
    let slices = names
        .iter()
        .map(|p| read_image(p))
        .collect::<Result<Vec<_>>>()?;
    let n = slices[0].n();
    if let Some(bad) = slices.iter().find(|s| s.n() != n) {
        return Err(Error::ShapeMismatch(format!(
            "frames mix sizes {n} and {}",
            bad.n()
        )));
    }
    DensityPath::new(slices)
}

// ---------------------------------------------------------------------
// Report CSV

/// One per-slice row of a report. `energy` and `ssim_next` are empty on
/// the last slice, which has no following step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub t: usize,
    pub energy: Option<f64>,
    pub mass: f64,
    pub ssim_next: Option<f64>,
}

/// Parsed report document: the per-slice rows plus the summary fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportDoc {
    pub rows: Vec<ReportRow>,
    pub j: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub w2: f64,
}

/// 17-significant-digit float formatting; round-trips bit-exactly.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write the per-slice report CSV: header `t,energy,mass,ssim_next`, one
/// row per slice (energy and ssim_next empty on the last), then a
/// trailing `summary` row carrying J, the SSIM mean/std and the W2
/// estimate as key=value fields.
pub fn write_report(
    report: &EnergyReport,
    path: &DensityPath,
    seq: &SsimSequence,
    w2: f64,
    out: &Path,
) -> Result<()> {
    let mut text = String::new();
    text.push_str(REPORT_HEADER);
    text.push('\n');
    for (t, slice) in path.slices().iter().enumerate() {
        let energy = report.per_slice_energy.get(t).map(|&e| fmt(e)).unwrap_or_default();
        let ssim_next = seq.per_pair.get(t).map(|&s| fmt(s)).unwrap_or_default();
        text.push_str(&format!("{t},{energy},{},{ssim_next}\n", fmt(slice.mass())));
    }
    text.push_str(&format!(
        "summary,J={},ssim_mean={},ssim_std={},w2={}\n",
        fmt(report.j),
        fmt(seq.mean),
        fmt(seq.std),
        fmt(w2)
    ));
    fs::write(out, text)?;
    Ok(())
}

fn parse_field(s: &str, what: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::CorruptHeader(format!("bad {what} field: {s:?}")))
}

fn parse_opt_field(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(s, what).map(Some)
    }
}

/// Parse a report CSV back into its rows and summary; exact inverse of
/// [`write_report`] on the numeric values.
pub fn read_report(path: &Path) -> Result<ReportDoc> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == REPORT_HEADER => {}
        other => {
            return Err(Error::CorruptHeader(format!(
                "expected report header, found {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    let mut summary = None;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("summary,") {
            let mut j = None;
            let mut mean = None;
            let mut std = None;
            let mut w2 = None;
            for field in rest.split(',') {
                let (key, value) = field
                    .split_once('=')
                    .ok_or_else(|| Error::CorruptHeader(format!("bad summary field {field:?}")))?;
                let slot = match key {
                    "J" => &mut j,
                    "ssim_mean" => &mut mean,
                    "ssim_std" => &mut std,
                    "w2" => &mut w2,
                    _ => {
                        return Err(Error::CorruptHeader(format!(
                            "unknown summary field {key:?}"
                        )))
                    }
                };
                *slot = Some(parse_field(value, key)?);
            }
            match (j, mean, std, w2) {
                (Some(j), Some(ssim_mean), Some(ssim_std), Some(w2)) => {
                    summary = Some((j, ssim_mean, ssim_std, w2));
                }
                _ => return Err(Error::CorruptHeader("incomplete summary row".into())),
            }
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(Error::CorruptHeader(format!(
                "expected 4 cells per row, found {}",
                cells.len()
            )));
        }
        rows.push(ReportRow {
            t: cells[0]
                .parse()
                .map_err(|_| Error::CorruptHeader(format!("bad slice index {:?}", cells[0])))?,
            energy: parse_opt_field(cells[1], "energy")?,
            mass: parse_field(cells[2], "mass")?,
            ssim_next: parse_opt_field(cells[3], "ssim_next")?,
        });
    }
    let (j, ssim_mean, ssim_std, w2) =
        summary.ok_or_else(|| Error::CorruptHeader("missing summary row".into()))?;
    Ok(ReportDoc {
        rows,
        j,
        ssim_mean,
        ssim_std,
        w2,
    })
}

// ---------------------------------------------------------------------
// Config

/// Optional-valued run configuration read from a flat `key = value` file.
///
/// Every field is optional so a config can be merged under command-line
/// flags (flags win). Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub obstacle: Option<PathBuf>,
    pub downsample: Option<usize>,
    pub steps: Option<usize>,
    pub mode: Option<String>,
    pub tau: Option<f64>,
    pub beta: Option<f64>,
    pub bc: Option<BoundaryCondition>,
    pub eps: Option<f64>,
    pub max_iters: Option<usize>,
    pub step0: Option<f64>,
    pub tol_rel: Option<f64>,
    pub seed: Option<u64>,
}

fn config_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value for {key}: {value:?}")))
}

impl RunConfig {
    /// Parse a config document: one `key = value` per line, `#` starts a
    /// full-line comment, blank lines ignored.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "source" => cfg.source = Some(PathBuf::from(value)),
                "target" => cfg.target = Some(PathBuf::from(value)),
                "out" => cfg.out = Some(PathBuf::from(value)),
                "obstacle" => cfg.obstacle = Some(PathBuf::from(value)),
                "downsample" => cfg.downsample = Some(config_value(key, value)?),
                "steps" => cfg.steps = Some(config_value(key, value)?),
                "mode" => match value {
                    "balanced" | "unbalanced" => cfg.mode = Some(value.to_string()),
                    _ => {
                        return Err(Error::Config(format!(
                            "mode must be balanced or unbalanced, got {value:?}"
                        )))
                    }
                },
                "tau" => cfg.tau = Some(config_value(key, value)?),
                "beta" => cfg.beta = Some(config_value(key, value)?),
                "bc" => cfg.bc = Some(config_value(key, value)?),
                "eps" => cfg.eps = Some(config_value(key, value)?),
                "max_iters" => cfg.max_iters = Some(config_value(key, value)?),
                "step0" => cfg.step0 = Some(config_value(key, value)?),
                "tol_rel" => cfg.tol_rel = Some(config_value(key, value)?),
                "seed" => cfg.seed = Some(config_value(key, value)?),
                _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Range checks mirroring the solver's configuration invariants.
    fn validate(&self) -> Result<()> {
        if let Some(t) = self.steps {
            if t < 1 {
                return Err(Error::Config("steps must be >= 1".into()));
            }
        }
        if let Some(eps) = self.eps {
            if !(eps > 0.0) {
                return Err(Error::Config(format!("eps must be positive, got {eps}")));
            }
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0) {
                return Err(Error::Config(format!("tau must be positive, got {tau}")));
            }
        }
        if let Some(beta) = self.beta {
            if !(beta >= 0.0) {
                return Err(Error::Config(format!("beta must be >= 0, got {beta}")));
            }
        }
        if let Some(m) = self.max_iters {
            if m < 1 {
                return Err(Error::Config("max_iters must be >= 1".into()));
            }
        }
        if let Some(s) = self.step0 {
            if !(s > 0.0) {
                return Err(Error::Config(format!("step0 must be positive, got {s}")));
            }
        }
        if let Some(t) = self.tol_rel {
            if !(t > 0.0) {
                return Err(Error::Config(format!("tol_rel must be positive, got {t}")));
            }
        }
        if let Some(d) = self.downsample {
            if d < 1 {
                return Err(Error::Config("downsample must be >= 1".into()));
            }
        }
        Ok(())
    }
}
