//! PGM and CSV export, plus reading capture CSVs back.
//!
//! CSV schemas:
//! - captures: `layer,step,region,row,col,value` (row/col local to the region)
//! - stats: `range,class,mean,max`
//! - curve: `a,value`
//!
//! Floats are written with Rust's shortest round-trip formatting, so the
//! text is deterministic and parses back to the same bits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::LayerRangeStats;
use crate::masks::{Region, RegionMask};
use crate::mini_dit::CaptureRecord;
use crate::tensor::Matrix;
use crate::Error;

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_text(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// ASCII graymap (P2) with maxval 255.
pub fn pgm_p2(width: usize, height: usize, pixels: &[u8]) -> String {
    let mut s = format!("P2\n{width} {height}\n255\n");
    for row in pixels.chunks(width.max(1)) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// Min-max scales a grid to `[0, 255]`; constant grids map to 0.
pub fn heatmap_pgm(grid: &Matrix) -> String {
    let (lo, hi) = grid
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let pixels: Vec<u8> = grid
        .data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    pgm_p2(grid.cols(), grid.rows(), &pixels)
}

/// Binary mask as 0/255.
pub fn mask_pgm(mask: &RegionMask) -> String {
    let pixels: Vec<u8> = (0..mask.rows())
        .flat_map(|r| mask.row_bits(r).iter().map(|&b| if b { 255 } else { 0 }))
        .collect();
    pgm_p2(mask.cols(), mask.rows(), &pixels)
}

/// Entries of one map keyed by `(layer, step)`.
type CaptureEntries = BTreeMap<(usize, usize), Vec<(usize, usize, f64)>>;

pub const CAPTURE_HEADER: &str = "layer,step,region,row,col,value";

/// Writes every entry of every capture, labelled by region.
pub fn captures_csv(captures: &[CaptureRecord], d_c: usize) -> String {
    let mut s = String::from(CAPTURE_HEADER);
    s.push('\n');
    for cap in captures {
        let n = cap.attention.rows();
        for r in 0..n {
            for c in 0..n {
                let region = crate::mini_dit::region_of(d_c, r, c);
                let (lr, lc) = (if r < d_c { r } else { r - d_c }, if c < d_c { c } else { c - d_c });
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    cap.layer,
                    cap.step,
                    region,
                    lr,
                    lc,
                    cap.attention.get(r, c)
                );
            }
        }
    }
    s
}

/// Rebuilds full maps from a capture CSV. `d_c` is needed to place the
/// region-local indices.
pub fn parse_captures_csv(text: &str, d_c: usize) -> Result<Vec<CaptureRecord>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CAPTURE_HEADER => {}
        _ => return Err(format!("missing header `{CAPTURE_HEADER}`")),
    }
    let mut entries = CaptureEntries::new();
    let mut side = d_c;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(format!("line {}: expected 6 fields", i + 2));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| format!("line {}: bad integer `{s}`", i + 2));
        let (layer, step, lr, lc) = (num(f[0])?, num(f[1])?, num(f[3])?, num(f[4])?);
        let region: Region = f[2].parse().map_err(|e| format!("line {}: {e}", i + 2))?;
        let value: f64 = f[5].parse().map_err(|_| format!("line {}: bad value", i + 2))?;
        let (r, c) = match region {
            Region::T2T => (lr, lc),
            Region::T2I => (lr, lc + d_c),
            Region::I2T => (lr + d_c, lc),
            Region::I2I => (lr + d_c, lc + d_c),
        };
        side = side.max(r + 1).max(c + 1);
        entries.entry((layer, step)).or_default().push((r, c, value));
    }
    Ok(entries
        .into_iter()
        .map(|((layer, step), vals)| {
            let mut m = Matrix::zeros(side, side);
            for (r, c, v) in vals {
                m.set(r, c, v);
            }
            CaptureRecord {
                layer,
                step,
                attention: m,
                raw: None,
            }
        })
        .collect())
}

pub fn stats_csv(stats: &[LayerRangeStats]) -> String {
    let mut s = String::from("range,class,mean,max\n");
    for st in stats {
        let _ = writeln!(s, "{},{},{},{}", st.range, st.class, st.mean, st.max);
    }
    s
}

pub fn curve_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("a,value\n");
    for (a, v) in points {
        let _ = writeln!(s, "{a},{v}");
    }
    s
}

/// One value per line: `row,col,value`.
pub fn matrix_csv(m: &Matrix) -> String {
    let mut s = String::from("row,col,value\n");
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            let _ = writeln!(s, "{r},{c},{}", m.get(r, c));
        }
    }
    s
}
