//! Point-cloud, weight and sequence files.
//!
//! * XYZ: one `x y z` triple per line, written with six decimals; blank
//!   lines and `#` comments are skipped on read.
//! * PLY: ASCII, vertex-only, write-only.
//! * Weights: text container, one block per layer:
//!
//!   ```text
//!   regtrack-weights 1
//!   layer <name> <rows> <cols>
//!   <rows lines of cols values, row-major>
//!   bias <rows values>
//!   ```
//!
//!   Values use the shortest representation that parses back exactly.
//! * Sequence directory: `frame_%04d.xyz` plus `gt.json` holding the boxes
//!   as `[x, y, z, l, w, h, theta]` tuples.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use regtrack_core::geom::{BBox3D, BoxSize, Point3, PointCloud};
use regtrack_core::nn::{LinearLayer, WeightStore};
use regtrack_core::sim::SyntheticSequence;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const WEIGHTS_MAGIC: &str = "regtrack-weights 1";
pub const GT_FILE: &str = "gt.json";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Rounds to six decimals for JSON output.
pub fn fixed(v: f64) -> f64 {
    format!("{v:.6}").parse().unwrap_or(v)
}

pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CliError::data(path, format!("line {}: not a number", n + 1)))?;
        match vals[..] {
            [x, y, z] if vals.iter().all(|v| v.is_finite()) => points.push(Point3::new(x, y, z)),
            _ => {
                return Err(CliError::data(
                    path,
                    format!("line {}: expected three finite values", n + 1),
                ))
            }
        }
    }
    Ok(PointCloud::new(points))
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    parse_xyz(&read_text(path)?, path)
}

pub fn format_xyz(c: &PointCloud) -> String {
    let mut out = String::with_capacity(c.len() * 32);
    for p in &c.points {
        let _ = writeln!(out, "{:.6} {:.6} {:.6}", p.x, p.y, p.z);
    }
    out
}

pub fn write_xyz(path: &Path, c: &PointCloud) -> Result<()> {
    write_text(path, &format_xyz(c))
}

pub fn format_ply(c: &PointCloud) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        c.len()
    );
    for p in &c.points {
        let _ = writeln!(out, "{:.6} {:.6} {:.6}", p.x, p.y, p.z);
    }
    out
}

pub fn write_ply(path: &Path, c: &PointCloud) -> Result<()> {
    write_text(path, &format_ply(c))
}

pub fn format_weights(store: &WeightStore) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{WEIGHTS_MAGIC}");
    let row = |vals: &mut dyn Iterator<Item = f64>| {
        vals.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
    };
    for (name, layer) in store.iter() {
        let w = &layer.weight;
        let _ = writeln!(out, "layer {name} {} {}", w.nrows(), w.ncols());
        for r in 0..w.nrows() {
            let _ = writeln!(out, "{}", row(&mut w.row(r).iter().copied()));
        }
        let _ = writeln!(out, "bias {}", row(&mut layer.bias.iter().copied()));
    }
    out
}

pub fn parse_weights(text: &str, path: &Path) -> Result<WeightStore> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let bad = |n: usize, what: &str| CliError::data(path, format!("line {}: {what}", n + 1));
    match lines.next() {
        Some((_, l)) if l.trim() == WEIGHTS_MAGIC => {}
        _ => {
            return Err(CliError::data(
                path,
                format!("missing `{WEIGHTS_MAGIC}` header"),
            ))
        }
    }
    let numbers = |n: usize, s: &str, count: usize| -> Result<Vec<f64>> {
        let vals: Vec<f64> = s
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(n, "not a number"))?;
        if vals.len() != count {
            return Err(bad(
                n,
                &format!("expected {count} values, got {}", vals.len()),
            ));
        }
        Ok(vals)
    };
    let mut store = WeightStore::new();
    while let Some((n, header)) = lines.next() {
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (name, rows, cols) = match parts[..] {
            ["layer", name, r, c] => (
                name,
                r.parse::<usize>().map_err(|_| bad(n, "bad row count"))?,
                c.parse::<usize>().map_err(|_| bad(n, "bad column count"))?,
            ),
            _ => return Err(bad(n, "expected `layer <name> <rows> <cols>`")),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (m, l) = lines.next().ok_or_else(|| bad(n, "truncated layer"))?;
            data.extend(numbers(m, l, cols)?);
        }
        let (m, l) = lines.next().ok_or_else(|| bad(n, "missing bias"))?;
        let bias = l
            .trim()
            .strip_prefix("bias")
            .ok_or_else(|| bad(m, "expected `bias`"))?;
        let bias = numbers(m, bias, rows)?;
        let layer = LinearLayer::new(
            DMatrix::from_row_slice(rows, cols, &data),
            DVector::from_vec(bias),
        )
        .map_err(|e| CliError::data(path, format!("layer {name}: {e}")))?;
        store.insert(name, layer);
    }
    Ok(store)
}

pub fn read_weights(path: &Path) -> Result<WeightStore> {
    parse_weights(&read_text(path)?, path)
}

pub fn write_weights(path: &Path, store: &WeightStore) -> Result<()> {
    write_text(path, &format_weights(store))
}

#[derive(Debug, Serialize, Deserialize)]
struct GtFile {
    seed: u64,
    object_size: [f64; 3],
    boxes: Vec<[f64; 7]>,
}

pub fn frame_name(t: usize) -> String {
    format!("frame_{t:04}.xyz")
}

/// Writes `frame_%04d.xyz` files and `gt.json` into `dir`.
pub fn write_sequence(dir: &Path, seq: &SyntheticSequence, ply: bool) -> Result<()> {
    for (t, frame) in seq.frames.iter().enumerate() {
        write_xyz(&dir.join(frame_name(t)), frame)?;
        if ply {
            write_ply(&dir.join(format!("frame_{t:04}.ply")), frame)?;
        }
    }
    let s = &seq.object_size;
    let gt = GtFile {
        seed: seq.seed,
        object_size: [s.l, s.w, s.h],
        boxes: seq
            .gt_boxes
            .iter()
            .map(|b| b.to_array().map(fixed))
            .collect(),
    };
    let json = serde_json::to_string_pretty(&gt).expect("plain data serialises");
    write_text(&dir.join(GT_FILE), &(json + "\n"))
}

pub fn read_sequence(dir: &Path) -> Result<SyntheticSequence> {
    let gt_path = dir.join(GT_FILE);
    let gt: GtFile = serde_json::from_str(&read_text(&gt_path)?)
        .map_err(|e| CliError::data(&gt_path, e.to_string()))?;
    if gt.boxes.len() < 2 {
        return Err(CliError::data(&gt_path, "needs at least two boxes"));
    }
    let [l, w, h] = gt.object_size;
    let object_size = BoxSize::new(l, w, h).map_err(|e| CliError::data(&gt_path, e.to_string()))?;
    let gt_boxes = gt
        .boxes
        .iter()
        .map(|a| BBox3D::from_array(*a))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::data(&gt_path, e.to_string()))?;
    let frames = (0..gt_boxes.len())
        .map(|t| read_xyz(&dir.join(frame_name(t))))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticSequence {
        frames,
        gt_boxes,
        object_size,
        seed: gt.seed,
    })
}

/// Expands each path into sequence directories: a directory holding
/// `gt.json` is taken as is, otherwise its sorted subdirectories that hold
/// one are used.
pub fn sequence_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join(GT_FILE).is_file() {
            out.push(p.clone());
            continue;
        }
        let entries = fs::read_dir(p).map_err(|e| CliError::io(p, e))?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join(GT_FILE).is_file())
            .collect();
        if found.is_empty() {
            return Err(CliError::data(p, "no gt.json here or in any subdirectory"));
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}
