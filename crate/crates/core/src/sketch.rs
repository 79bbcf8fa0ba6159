//! Instance-id sketches, their downsampling to the latent grid, and the
//! flattened per-instance index sets.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SketchError {
    #[error("format error: {0}")]
    Format(String),
    #[error("instance ids are not contiguous from 1: missing {missing}")]
    NonContiguousIds { missing: u32 },
    #[error("grid {src_h}x{src_w} is not an integer multiple of latent {h}x{w}")]
    Dim {
        src_h: usize,
        src_w: usize,
        h: usize,
        w: usize,
    },
    #[error("mask index {index} out of range for {count} masks")]
    BadIndex { index: usize, count: usize },
    #[error("instance {id} vanished at latent resolution")]
    EmptyMask { id: u32 },
    #[error("invalid sketch set: {0}")]
    Invalid(String),
    #[error("io error reading {path}: {msg}")]
    Io { path: String, msg: String },
}

impl SketchError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Format(_) => "FormatError",
            Self::NonContiguousIds { .. } => "NonContiguousIds",
            Self::Dim { .. } => "DimError",
            Self::BadIndex { .. } => "BadIndex",
            Self::EmptyMask { .. } => "EmptyMask",
            Self::Invalid(_) => "InvalidSketch",
            Self::Io { .. } => "IoError",
        }
    }
}

/// Full-resolution grid of instance ids; 0 means unassigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceGrid {
    height: usize,
    width: usize,
    ids: Vec<u32>,
}

impl InstanceGrid {
    /// Validates shape and id contiguity.
    pub fn new(height: usize, width: usize, ids: Vec<u32>) -> Result<Self, SketchError> {
        if height == 0 || width == 0 || ids.len() != height * width {
            return Err(SketchError::Format(format!(
                "{} values for a {height}x{width} grid",
                ids.len()
            )));
        }
        let max = ids.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; max as usize + 1];
        for &id in &ids {
            seen[id as usize] = true;
        }
        if let Some(missing) = (1..=max).find(|&id| !seen[id as usize]) {
            return Err(SketchError::NonContiguousIds { missing });
        }
        Ok(Self { height, width, ids })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.ids[row * self.width + col]
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn instance_count(&self) -> u32 {
        self.ids.iter().copied().max().unwrap_or(0)
    }
}

/// Loads a sketch from a PGM (P2/P5) or whitespace-separated integer grid.
pub fn load_sketch(path: &Path) -> Result<InstanceGrid, SketchError> {
    let bytes = std::fs::read(path).map_err(|e| SketchError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_sketch(&bytes)
}

/// Dispatches on the magic number; anything else is read as a text grid.
pub fn parse_sketch(bytes: &[u8]) -> Result<InstanceGrid, SketchError> {
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        parse_pgm(bytes)
    } else {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| SketchError::Format("text grid is not UTF-8".into()))?;
        parse_text_grid(text)
    }
}

pub fn parse_text_grid(text: &str) -> Result<InstanceGrid, SketchError> {
    let mut width = None;
    let mut ids = Vec::new();
    let mut height = 0;
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<u32> = line
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| SketchError::Format(format!("bad grid value `{t}`")))
            })
            .collect::<Result<_, _>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(SketchError::Format(format!(
                    "row {height} has {} values, expected {w}",
                    row.len()
                )))
            }
            _ => {}
        }
        ids.extend(row);
        height += 1;
    }
    InstanceGrid::new(height, width.unwrap_or(0), ids)
}

/// Reads a header token, skipping whitespace and `#` comments.
fn next_header_token(bytes: &[u8], pos: &mut usize) -> Result<usize, SketchError> {
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
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| SketchError::Format(format!("bad PGM header at byte {start}")))
}

pub fn parse_pgm(bytes: &[u8]) -> Result<InstanceGrid, SketchError> {
    let binary = match bytes.get(..2) {
        Some(b"P2") => false,
        Some(b"P5") => true,
        _ => return Err(SketchError::Format("missing P2/P5 magic".into())),
    };
    let mut pos = 2;
    let width = next_header_token(bytes, &mut pos)?;
    let height = next_header_token(bytes, &mut pos)?;
    let maxval = next_header_token(bytes, &mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(SketchError::Format(format!("maxval {maxval} out of range")));
    }
    let n = width * height;
    let ids: Vec<u32> = if binary {
        // exactly one whitespace byte separates header and raster
        pos += 1;
        let bpp = if maxval < 256 { 1 } else { 2 };
        let raster = bytes
            .get(pos..pos + n * bpp)
            .ok_or_else(|| SketchError::Format("truncated P5 raster".into()))?;
        if bpp == 1 {
            raster.iter().map(|&b| u32::from(b)).collect()
        } else {
            raster
                .chunks_exact(2)
                .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
                .collect()
        }
    } else {
        let text = std::str::from_utf8(&bytes[pos..])
            .map_err(|_| SketchError::Format("P2 raster is not ASCII".into()))?;
        let values: Vec<u32> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace)
            .map(|t| {
                t.parse()
                    .map_err(|_| SketchError::Format(format!("bad P2 value `{t}`")))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != n {
            return Err(SketchError::Format(format!(
                "P2 raster has {} values, expected {n}",
                values.len()
            )));
        }
        values
    };
    if ids.iter().any(|&v| v as usize > maxval) {
        return Err(SketchError::Format("value exceeds maxval".into()));
    }
    InstanceGrid::new(height, width, ids)
}

/// Binary instance masks on the latent `h x w` grid, each bound to a
/// sub-prompt index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchSet {
    h: usize,
    w: usize,
    masks: Vec<Vec<bool>>,
    binding: Vec<usize>,
}

impl SketchSet {
    /// Masks are bound to sub-prompts `0..N` in order until rebound.
    pub fn new(h: usize, w: usize, masks: Vec<Vec<bool>>) -> Result<Self, SketchError> {
        if h == 0 || w == 0 {
            return Err(SketchError::Invalid("latent grid must be non-empty".into()));
        }
        for (k, m) in masks.iter().enumerate() {
            if m.len() != h * w {
                return Err(SketchError::Invalid(format!(
                    "mask {k} has {} cells, expected {}",
                    m.len(),
                    h * w
                )));
            }
            if !m.iter().any(|&b| b) {
                return Err(SketchError::EmptyMask { id: k as u32 + 1 });
            }
        }
        let binding = (0..masks.len()).collect();
        Ok(Self { h, w, masks, binding })
    }

    /// Builds masks from rectangles `(row0, col0, rows, cols)`.
    pub fn from_rects(
        h: usize,
        w: usize,
        rects: &[(usize, usize, usize, usize)],
    ) -> Result<Self, SketchError> {
        let masks = rects
            .iter()
            .map(|&(r0, c0, rh, cw)| {
                (0..h * w)
                    .map(|p| {
                        let (r, c) = (p / w, p % w);
                        (r0..r0 + rh).contains(&r) && (c0..c0 + cw).contains(&c)
                    })
                    .collect()
            })
            .collect();
        Self::new(h, w, masks)
    }

    /// Sets mask `k` -> sub-prompt `binding[k]`; the map must be injective.
    pub fn with_binding(mut self, binding: Vec<usize>) -> Result<Self, SketchError> {
        if binding.len() != self.masks.len() {
            return Err(SketchError::Invalid(format!(
                "binding has {} entries for {} masks",
                binding.len(),
                self.masks.len()
            )));
        }
        let mut sorted = binding.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != binding.len() {
            return Err(SketchError::Invalid("binding is not injective".into()));
        }
        self.binding = binding;
        Ok(self)
    }

    /// Binds masks in order to the non-background sub-prompts of `spec`.
    pub fn bind_to(self, spec: &crate::prompt::PromptSpec) -> Result<Self, SketchError> {
        let targets: Vec<usize> = spec
            .sub_prompts()
            .iter()
            .enumerate()
            .filter(|(_, sp)| !sp.is_background)
            .map(|(i, _)| i)
            .collect();
        if targets.len() != self.masks.len() {
            return Err(SketchError::Invalid(format!(
                "{} instance sub-prompts but {} sketch masks",
                targets.len(),
                self.masks.len()
            )));
        }
        self.with_binding(targets)
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn mask(&self, k: usize) -> Result<&[bool], SketchError> {
        self.masks
            .get(k)
            .map(Vec::as_slice)
            .ok_or(SketchError::BadIndex {
                index: k,
                count: self.masks.len(),
            })
    }

    pub fn masks(&self) -> &[Vec<bool>] {
        &self.masks
    }

    pub fn binding(&self) -> &[usize] {
        &self.binding
    }

    /// Mask index bound to sub-prompt `sub`, if any.
    pub fn mask_for_sub_prompt(&self, sub: usize) -> Option<usize> {
        self.binding.iter().position(|&b| b == sub)
    }

    /// Row-major indices of the set pixels of mask `k`.
    pub fn flatten(&self, k: usize) -> Result<Vec<usize>, SketchError> {
        let m = self.mask(k)?;
        Ok(m.iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect())
    }

    /// Pixels covered by no instance mask.
    pub fn complement_mask(&self) -> Vec<bool> {
        (0..self.hw())
            .map(|p| !self.masks.iter().any(|m| m[p]))
            .collect()
    }

    pub fn complement(&self) -> Vec<usize> {
        self.complement_mask()
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn area(&self, k: usize) -> Result<usize, SketchError> {
        Ok(self.mask(k)?.iter().filter(|&&b| b).count())
    }
}

/// Majority-vote pooling onto an `h x w` latent grid.
///
/// A cell takes id `k` when at least `threshold` of its source pixels carry
/// `k`; among qualifying ids the largest share wins, ties to the lower id.
pub fn to_latent(
    grid: &InstanceGrid,
    h: usize,
    w: usize,
    threshold: f64,
) -> Result<SketchSet, SketchError> {
    if h == 0 || w == 0 || !grid.height.is_multiple_of(h) || !grid.width.is_multiple_of(w) {
        return Err(SketchError::Dim {
            src_h: grid.height,
            src_w: grid.width,
            h,
            w,
        });
    }
    let (bh, bw) = (grid.height / h, grid.width / w);
    let n_ids = grid.instance_count() as usize;
    let cell_pixels = (bh * bw) as f64;
    let mut masks = vec![vec![false; h * w]; n_ids];
    let mut counts = vec![0usize; n_ids + 1];
    for r in 0..h {
        for c in 0..w {
            counts.fill(0);
            for y in r * bh..(r + 1) * bh {
                for x in c * bw..(c + 1) * bw {
                    counts[grid.get(y, x) as usize] += 1;
                }
            }
            let mut best: Option<(usize, usize)> = None;
            for (id, &count) in counts.iter().enumerate().skip(1) {
                if count == 0 || (count as f64) / cell_pixels < threshold {
                    continue;
                }
                // strict comparison keeps the lower id on ties
                if best.is_none_or(|(_, n)| count > n) {
                    best = Some((id, count));
                }
            }
            if let Some((id, _)) = best {
                masks[id - 1][r * w + c] = true;
            }
        }
    }
    if let Some(k) = masks.iter().position(|m| !m.iter().any(|&b| b)) {
        return Err(SketchError::EmptyMask { id: k as u32 + 1 });
    }
    SketchSet::new(h, w, masks)
}

/// Parses `HxW` (e.g. `64x64`).
pub fn parse_latent_dims(s: &str) -> Result<(usize, usize), SketchError> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| SketchError::Format(format!("latent size `{s}` is not HxW")))?;
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| SketchError::Format(format!("latent size `{s}` is not HxW")))
    };
    Ok((parse(a)?, parse(b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_from(rows: &[&[u32]]) -> InstanceGrid {
        let w = rows[0].len();
        InstanceGrid::new(rows.len(), w, rows.iter().flat_map(|r| r.iter().copied()).collect())
            .unwrap()
    }

    #[test]
    fn text_grid_single_instance() {
        let g = parse_text_grid("0 0 0 0\n0 1 1 0\n0 1 1 0\n0 0 0 0\n").unwrap();
        assert_eq!((g.height(), g.width()), (4, 4));
        assert_eq!(g.instance_count(), 1);
    }

    #[test]
    fn non_contiguous_ids_rejected() {
        let err = parse_text_grid("0 1\n3 0\n").unwrap_err();
        assert_eq!(err, SketchError::NonContiguousIds { missing: 2 });
    }

    #[test]
    fn ragged_text_grid_rejected() {
        assert_eq!(parse_text_grid("0 1\n0\n").unwrap_err().kind(), "FormatError");
    }

    fn two_instance_8x8() -> InstanceGrid {
        InstanceGrid::new(
            8,
            8,
            (0..64)
                .map(|p| {
                    let (r, c) = (p / 8, p % 8);
                    if r < 4 && c < 4 {
                        1
                    } else if r >= 6 && c >= 5 {
                        2
                    } else {
                        0
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    fn to_text(g: &InstanceGrid) -> String {
        let mut s = String::new();
        for r in 0..g.height() {
            let row: Vec<String> = (0..g.width()).map(|c| g.get(r, c).to_string()).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    #[test]
    fn p2_matches_text_loader() {
        let g = two_instance_8x8();
        let p2 = format!("P2\n# sketch\n8 8\n2\n{}", to_text(&g));
        let from_pgm = parse_sketch(p2.as_bytes()).unwrap();
        let from_text = parse_sketch(to_text(&g).as_bytes()).unwrap();
        assert_eq!(from_pgm, from_text);
        assert_eq!(from_pgm.instance_count(), 2);
    }

    #[test]
    fn p5_matches_text_loader() {
        let g = two_instance_8x8();
        let mut p5 = b"P5\n8 8\n255\n".to_vec();
        p5.extend(g.ids().iter().map(|&v| v as u8));
        assert_eq!(parse_sketch(&p5).unwrap(), g);
    }

    #[test]
    fn truncated_p5_is_format_error() {
        assert_eq!(parse_pgm(b"P5\n4 4\n255\n\x00\x01").unwrap_err().kind(), "FormatError");
    }

    #[test]
    fn block_aligns_exactly() {
        let g = InstanceGrid::new(
            8,
            8,
            (0..64).map(|p| u32::from(p / 8 < 4 && p % 8 < 4)).collect(),
        )
        .unwrap();
        let set = to_latent(&g, 4, 4, 0.5).unwrap();
        assert_eq!(set.flatten(0).unwrap(), vec![0, 1, 4, 5]);
    }

    #[test]
    fn tie_goes_to_lower_id() {
        let g = grid_from(&[&[1, 2], &[1, 2]]);
        let set = to_latent(&g, 1, 1, 0.5).unwrap_err();
        // id 2 loses every cell, so it vanishes
        assert_eq!(set, SketchError::EmptyMask { id: 2 });
        let g = grid_from(&[&[1, 2, 2, 2], &[1, 2, 2, 2]]);
        let set = to_latent(&g, 1, 2, 0.5).unwrap();
        assert_eq!(set.mask(0).unwrap(), &[true, false]);
        assert_eq!(set.mask(1).unwrap(), &[false, true]);
    }

    #[test]
    fn below_threshold_is_unassigned() {
        let g = grid_from(&[&[1, 0, 0, 0], &[0, 0, 1, 1]]);
        let set = to_latent(&g, 1, 2, 0.5).unwrap();
        assert_eq!(set.mask(0).unwrap(), &[false, true]);
    }

    #[test]
    fn non_multiple_dims_rejected() {
        let g = InstanceGrid::new(7, 7, vec![0; 49]).unwrap();
        assert_eq!(to_latent(&g, 4, 4, 0.5).unwrap_err().kind(), "DimError");
    }

    #[test]
    fn flatten_full_and_bad_index() {
        let set = SketchSet::new(2, 2, vec![vec![true; 4], vec![true, false, false, false]]).unwrap();
        assert_eq!(set.flatten(0).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(
            set.flatten(5).unwrap_err(),
            SketchError::BadIndex { index: 5, count: 2 }
        );
    }

    #[test]
    fn union_plus_complement_covers_once() {
        let set = SketchSet::from_rects(4, 4, &[(0, 0, 2, 2), (2, 2, 2, 2)]).unwrap();
        let mut all: Vec<usize> = (0..set.len())
            .flat_map(|k| set.flatten(k).unwrap())
            .chain(set.complement())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn binding_must_be_injective() {
        let set = SketchSet::from_rects(2, 2, &[(0, 0, 1, 1), (1, 1, 1, 1)]).unwrap();
        assert!(set.clone().with_binding(vec![1, 1]).is_err());
        assert_eq!(set.with_binding(vec![2, 0]).unwrap().mask_for_sub_prompt(0), Some(1));
    }

    #[test]
    fn latent_dims_parse() {
        assert_eq!(parse_latent_dims("64x32").unwrap(), (64, 32));
        assert!(parse_latent_dims("8").is_err());
        assert!(parse_latent_dims("0x4").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Axis-aligned rectangles on block boundaries downsample to the
            // geometrically expected latent block.
            #[test]
            fn rect_downsample_matches_geometry(
                h in 1usize..6, w in 1usize..6, scale in 1usize..4,
                r0 in 0usize..6, c0 in 0usize..6, rh in 1usize..6, cw in 1usize..6,
            ) {
                let r0 = r0 % h; let c0 = c0 % w;
                let rh = rh.min(h - r0); let cw = cw.min(w - c0);
                let (gh, gw) = (h * scale, w * scale);
                let ids = (0..gh * gw).map(|p| {
                    let (y, x) = (p / gw / scale, p % gw / scale);
                    u32::from((r0..r0 + rh).contains(&y) && (c0..c0 + cw).contains(&x))
                }).collect();
                let g = InstanceGrid::new(gh, gw, ids).unwrap();
                let set = to_latent(&g, h, w, 0.5).unwrap();
                let expected: Vec<usize> = (0..h * w)
                    .filter(|p| (r0..r0 + rh).contains(&(p / w)) && (c0..c0 + cw).contains(&(p % w)))
                    .collect();
                prop_assert_eq!(set.flatten(0).unwrap(), expected);
            }
        }
    }
}
