//! Region masks for the unified attention map and the per-pixel
//! sensitivity vectors that scale the tuning exponent.
//!
//! The map over `d_c + hw` tokens splits into four blocks, with text
//! tokens first:
//!
//! ```text
//!            text keys   image keys
//! text q   [   T2T    |    T2I    ]
//! image q  [   I2T    |    I2I    ]
//! ```
//!
//! T2I is never tuned, so it has no builder.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::prompt::{PromptSpec, TokenClass};
use crate::sketch::SketchSet;
use crate::tensor::Matrix;

pub const DEFAULT_LAMBDA_CROSS: f64 = 5.0;
pub const DEFAULT_LAMBDA_SELF: f64 = 3.5;
pub const DEFAULT_GAMMA_TEXT: f64 = 4.0;
pub const DEFAULT_GAMMA_IMAGE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaskError {
    #[error("sub-prompt {sub} (`{label}`) has neither a sketch mask nor a background flag")]
    Binding { sub: usize, label: String },
    #[error("mask {mask} is bound to sub-prompt {sub}, which {reason}")]
    BadBinding {
        mask: usize,
        sub: usize,
        reason: &'static str,
    },
}

impl MaskError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Binding { .. } | Self::BadBinding { .. } => "BindingError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    T2T,
    T2I,
    I2T,
    I2I,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::T2T, Region::T2I, Region::I2T, Region::I2I];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::T2T => "T2T",
            Region::T2I => "T2I",
            Region::I2T => "I2T",
            Region::I2I => "I2I",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "T2T" => Ok(Region::T2T),
            "T2I" => Ok(Region::T2I),
            "I2T" => Ok(Region::I2T),
            "I2I" => Ok(Region::I2I),
            _ => Err(format!("unknown region `{s}`")),
        }
    }
}

/// Binary mask over one block of the attention map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    region: Region,
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl RegionMask {
    fn from_fn(region: Region, rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..rows * cols).map(|p| f(p / cols, p % cols)).collect();
        Self {
            region,
            rows,
            cols,
            bits,
        }
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f64 {
        if self.get(row, col) {
            1.0
        } else {
            0.0
        }
    }

    pub fn row_bits(&self, row: usize) -> &[bool] {
        &self.bits[row * self.cols..(row + 1) * self.cols]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| self.value(i, j))
    }
}

/// Within-sub-prompt coupling: `M(i, j) = 1` iff tokens `i` and `j` share a
/// sub-prompt range. Tokens outside every range get all-zero rows and columns.
pub fn build_t2t(spec: &PromptSpec) -> RegionMask {
    let d_c = spec.d_c();
    let owner: Vec<Option<usize>> = (0..d_c).map(|t| spec.sub_prompt_of(t)).collect();
    RegionMask::from_fn(Region::T2T, d_c, d_c, |i, j| {
        owner[i].is_some() && owner[i] == owner[j]
    })
}

/// Pixel-to-region membership: each instance mask, plus the background
/// complement when `include_background` is set.
fn image_regions(sketch: &SketchSet, include_background: bool) -> Vec<Vec<bool>> {
    let mut regions: Vec<Vec<bool>> = sketch.masks().to_vec();
    if include_background {
        let comp = sketch.complement_mask();
        if comp.iter().any(|&b| b) {
            regions.push(comp);
        }
    }
    regions
}

/// `M(i, j) = 1` iff image pixels `i` and `j` lie in a common region.
pub fn build_i2i(sketch: &SketchSet, include_background: bool) -> RegionMask {
    let hw = sketch.hw();
    let regions = image_regions(sketch, include_background);
    // pixel -> list of regions; masks may overlap when built by hand
    let member: Vec<Vec<usize>> = (0..hw)
        .map(|p| (0..regions.len()).filter(|&r| regions[r][p]).collect())
        .collect();
    RegionMask::from_fn(Region::I2I, hw, hw, |i, j| {
        member[i].iter().any(|r| member[j].contains(r))
    })
}

/// Image pixel `i` to text token `j`: set when `i` lies in the image
/// region bound to the sub-prompt holding `j`. Background sub-prompts pair
/// with the complement of the instance masks.
pub fn build_i2t(spec: &PromptSpec, sketch: &SketchSet) -> Result<RegionMask, MaskError> {
    let subs = spec.sub_prompts();
    for (mask, &sub) in sketch.binding().iter().enumerate() {
        match subs.get(sub) {
            None => {
                return Err(MaskError::BadBinding {
                    mask,
                    sub,
                    reason: "does not exist",
                })
            }
            Some(sp) if sp.is_background => {
                return Err(MaskError::BadBinding {
                    mask,
                    sub,
                    reason: "is flagged background",
                })
            }
            Some(_) => {}
        }
    }
    let complement = sketch.complement_mask();
    let mut sub_region: Vec<&[bool]> = Vec::with_capacity(subs.len());
    for (idx, sp) in subs.iter().enumerate() {
        if sp.is_background {
            sub_region.push(&complement);
        } else if let Some(k) = sketch.mask_for_sub_prompt(idx) {
            sub_region.push(&sketch.masks()[k]);
        } else {
            return Err(MaskError::Binding {
                sub: idx,
                label: sp.label.clone(),
            });
        }
    }
    let owner: Vec<Option<usize>> = (0..spec.d_c()).map(|t| spec.sub_prompt_of(t)).collect();
    Ok(RegionMask::from_fn(
        Region::I2T,
        sketch.hw(),
        spec.d_c(),
        |i, j| owner[j].is_some_and(|k| sub_region[k][i]),
    ))
}

/// Per-image-query sensitivity for text-key (I2T) and image-key (I2I)
/// tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityVector {
    pub g_text: Vec<f64>,
    pub g_image: Vec<f64>,
}

impl SensitivityVector {
    pub fn ones(hw: usize) -> Self {
        Self {
            g_text: vec![1.0; hw],
            g_image: vec![1.0; hw],
        }
    }

    pub fn hw(&self) -> usize {
        self.g_text.len()
    }
}

/// `G_q(j) = 1 - gamma_q * (sum_i L(j, i)) / hw` with `L = sum_k s_k s_k^T`.
///
/// The row sum of `L` at pixel `j` is the total area of the masks
/// containing `j`, so `L` is never materialized. Values are left unclamped
/// unless `clamp` is set, in which case they are clipped to `[0, 1]`.
pub fn build_sensitivity(
    sketch: &SketchSet,
    gamma_text: f64,
    gamma_image: f64,
    clamp: bool,
) -> SensitivityVector {
    let hw = sketch.hw();
    let areas: Vec<f64> = sketch
        .masks()
        .iter()
        .map(|m| m.iter().filter(|&&b| b).count() as f64)
        .collect();
    let row_sum: Vec<f64> = (0..hw)
        .map(|j| {
            sketch
                .masks()
                .iter()
                .zip(&areas)
                .filter(|(m, _)| m[j])
                .map(|(_, &a)| a)
                .sum()
        })
        .collect();
    let g = |gamma: f64| -> Vec<f64> {
        row_sum
            .iter()
            .map(|&s| {
                let v = 1.0 - gamma * s / hw as f64;
                if clamp {
                    v.clamp(0.0, 1.0)
                } else {
                    v
                }
            })
            .collect()
    };
    SensitivityVector {
        g_text: g(gamma_text),
        g_image: g(gamma_image),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionLambdas {
    pub t2t: f64,
    pub i2i: f64,
    pub i2t: f64,
}

impl RegionLambdas {
    pub fn get(&self, region: Region) -> Option<f64> {
        match region {
            Region::T2T => Some(self.t2t),
            Region::I2I => Some(self.i2i),
            Region::I2T => Some(self.i2t),
            Region::T2I => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskOptions {
    pub lambda_cross: f64,
    pub lambda_self: f64,
    pub i2i_background: bool,
}

impl Default for MaskOptions {
    fn default() -> Self {
        Self {
            lambda_cross: DEFAULT_LAMBDA_CROSS,
            lambda_self: DEFAULT_LAMBDA_SELF,
            i2i_background: true,
        }
    }
}

/// The three tuned region masks with their lambdas and the token classes
/// used to gate I2T columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FullMask {
    pub d_c: usize,
    pub hw: usize,
    pub t2t: RegionMask,
    pub i2i: RegionMask,
    pub i2t: RegionMask,
    pub lambdas: RegionLambdas,
    pub token_classes: Vec<TokenClass>,
}

impl FullMask {
    pub fn n(&self) -> usize {
        self.d_c + self.hw
    }

    pub fn region(&self, region: Region) -> Option<&RegionMask> {
        match region {
            Region::T2T => Some(&self.t2t),
            Region::I2I => Some(&self.i2i),
            Region::I2T => Some(&self.i2t),
            Region::T2I => None,
        }
    }

    /// Assembled `(d_c + hw)^2` binary matrix; the T2I block is zero.
    pub fn to_dense(&self) -> Matrix {
        let d_c = self.d_c;
        Matrix::from_fn(self.n(), self.n(), |r, c| match (r < d_c, c < d_c) {
            (true, true) => self.t2t.value(r, c),
            (true, false) => 0.0,
            (false, true) => self.i2t.value(r - d_c, c),
            (false, false) => self.i2i.value(r - d_c, c - d_c),
        })
    }
}

/// Builds T2T, I2I and I2T masks; I2T takes `lambda_cross`, the two
/// self-attention regions take `lambda_self`.
pub fn assemble(
    spec: &PromptSpec,
    sketch: &SketchSet,
    opts: MaskOptions,
) -> Result<FullMask, MaskError> {
    Ok(FullMask {
        d_c: spec.d_c(),
        hw: sketch.hw(),
        t2t: build_t2t(spec),
        i2i: build_i2i(sketch, opts.i2i_background),
        i2t: build_i2t(spec, sketch)?,
        lambdas: RegionLambdas {
            t2t: opts.lambda_self,
            i2i: opts.lambda_self,
            i2t: opts.lambda_cross,
        },
        token_classes: spec.token_classes().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::parse_prompt_spec;

    fn red_cube() -> PromptSpec {
        parse_prompt_spec("d_c = 7\nsub = \"Red cube\" 0 3\nsub = \"in a forest\" 3 7 background\n")
            .unwrap()
    }

    #[test]
    fn t2t_red_cube_is_block_diagonal() {
        let m = build_t2t(&red_cube());
        assert_eq!(m.shape(), (7, 7));
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(m.get(i, j), (i < 3) == (j < 3), "({i},{j})");
            }
        }
        assert_eq!(m.count_ones(), 9 + 16);
    }

    #[test]
    fn t2t_whole_prompt_saturates() {
        let spec = parse_prompt_spec("d_c = 4\nsub = \"x\" 0 4\n").unwrap();
        assert_eq!(build_t2t(&spec).count_ones(), 16);
    }

    #[test]
    fn t2t_gap_token_is_zero() {
        let spec = parse_prompt_spec("d_c = 5\nsub = \"a b\" 0 2\nsub = \"c d\" 3 5\n").unwrap();
        let m = build_t2t(&spec);
        for k in 0..5 {
            assert!(!m.get(2, k) && !m.get(k, 2));
        }
        for i in 0..5 {
            for j in 0..5 {
                let same = (i < 2 && j < 2) || (i >= 3 && j >= 3);
                assert_eq!(m.get(i, j), same);
            }
        }
    }

    #[test]
    fn i2i_one_block_plus_complement() {
        let set = SketchSet::from_rects(4, 4, &[(0, 0, 2, 2)]).unwrap();
        let m = build_i2i(&set, true);
        let inside = [0usize, 1, 4, 5];
        for i in 0..16 {
            for j in 0..16 {
                assert_eq!(m.get(i, j), inside.contains(&i) == inside.contains(&j));
            }
        }
        assert_eq!(m.count_ones(), 16 + 144);
        let no_bg = build_i2i(&set, false);
        assert_eq!(no_bg.count_ones(), 16);
    }

    #[test]
    fn i2i_background_only_saturates() {
        let set = SketchSet::new(3, 3, vec![]).unwrap();
        assert_eq!(build_i2i(&set, true).count_ones(), 81);
    }

    #[test]
    fn i2i_singletons() {
        let set = SketchSet::from_rects(3, 3, &[(0, 0, 1, 1), (2, 2, 1, 1)]).unwrap();
        let m = build_i2i(&set, true);
        let off_complement: usize = [0usize, 8]
            .iter()
            .map(|&p| (0..9).filter(|&q| m.get(p, q)).count())
            .sum();
        assert_eq!(off_complement, 2);
        assert!(m.get(0, 0) && m.get(8, 8) && !m.get(0, 8));
    }

    #[test]
    fn i2t_red_cube_with_one_sketch() {
        let set = SketchSet::from_rects(4, 4, &[(1, 1, 2, 2)]).unwrap();
        let m = build_i2t(&red_cube(), &set).unwrap();
        let inside = set.mask(0).unwrap();
        for i in 0..16 {
            for j in 0..7 {
                assert_eq!(m.get(i, j), if j < 3 { inside[i] } else { !inside[i] });
            }
        }
    }

    #[test]
    fn i2t_single_pixel_latent() {
        let spec = red_cube();
        let set = SketchSet::new(1, 1, vec![vec![true]]).unwrap();
        let m = build_i2t(&spec, &set).unwrap();
        assert_eq!(m.shape(), (1, 7));
        assert_eq!(m.row_bits(0), &[true, true, true, false, false, false, false]);
    }

    #[test]
    fn i2t_unbound_instance_is_binding_error() {
        let spec = parse_prompt_spec("d_c = 4\nsub = \"a\" 0 2\nsub = \"b\" 2 4\n").unwrap();
        let set = SketchSet::from_rects(2, 2, &[(0, 0, 1, 1)]).unwrap();
        let err = build_i2t(&spec, &set).unwrap_err();
        assert_eq!(err.kind(), "BindingError");
        assert!(matches!(err, MaskError::Binding { sub: 1, .. }));
    }

    #[test]
    fn i2t_mask_bound_to_background_is_rejected() {
        let set = SketchSet::from_rects(2, 2, &[(0, 0, 1, 1)])
            .unwrap()
            .with_binding(vec![1])
            .unwrap();
        assert!(matches!(
            build_i2t(&red_cube(), &set),
            Err(MaskError::BadBinding { sub: 1, .. })
        ));
    }

    #[test]
    fn sensitivity_2x2_on_4x4() {
        let set = SketchSet::from_rects(4, 4, &[(0, 0, 2, 2)]).unwrap();
        let g = build_sensitivity(&set, DEFAULT_GAMMA_TEXT, DEFAULT_GAMMA_IMAGE, false);
        assert_eq!(g.g_text[0], 0.0);
        assert_eq!(g.g_image[0], 0.75);
        assert_eq!(g.g_text[15], 1.0);
        assert_eq!(g.g_image[15], 1.0);
    }

    #[test]
    fn sensitivity_without_masks_is_one() {
        let set = SketchSet::new(2, 3, vec![]).unwrap();
        assert_eq!(build_sensitivity(&set, 4.0, 1.0, false), SensitivityVector::ones(6));
    }

    #[test]
    fn sensitivity_full_frame() {
        let set = SketchSet::new(2, 2, vec![vec![true; 4]]).unwrap();
        let g = build_sensitivity(&set, 4.0, 1.0, false);
        assert!(g.g_image.iter().all(|&v| v == 0.0));
        assert!(g.g_text.iter().all(|&v| v == -3.0));
        let clamped = build_sensitivity(&set, 4.0, 1.0, true);
        assert!(clamped.g_text.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn assemble_defaults() {
        let set = SketchSet::from_rects(4, 4, &[(0, 0, 2, 2)]).unwrap();
        let fm = assemble(&red_cube(), &set, MaskOptions::default()).unwrap();
        assert_eq!(fm.lambdas.get(Region::I2T), Some(5.0));
        assert_eq!(fm.lambdas.get(Region::T2T), Some(3.5));
        assert_eq!(fm.lambdas.get(Region::I2I), Some(3.5));
        assert_eq!(fm.lambdas.get(Region::T2I), None);
        assert!(fm.region(Region::T2I).is_none());
        let dense = fm.to_dense();
        assert_eq!(dense.shape(), (23, 23));
        for r in 0..7 {
            for c in 7..23 {
                assert_eq!(dense.get(r, c), 0.0);
            }
        }
    }

    #[test]
    fn assemble_ablation_lambda() {
        let set = SketchSet::from_rects(4, 4, &[(0, 0, 2, 2)]).unwrap();
        let opts = MaskOptions {
            lambda_cross: 4.0,
            lambda_self: 4.0,
            ..MaskOptions::default()
        };
        let fm = assemble(&red_cube(), &set, opts).unwrap();
        assert_eq!(fm.lambdas, RegionLambdas { t2t: 4.0, i2i: 4.0, i2t: 4.0 });
    }
}
