//! Readers over captured attention maps: block extraction, per-token
//! heatmaps, layer-range statistics and the tuning scaling curve.

use std::collections::BTreeMap;
use std::ops::Range;

use thiserror::Error;

use crate::masks::Region;
use crate::mini_dit::CaptureRecord;
use crate::prompt::{PromptSpec, TokenClass};
use crate::scheduler::LayerRange;
use crate::tensor::Matrix;
use crate::tuner::{TuneError, TuneParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("map is {rows}x{cols}, expected side d_c + hw = {expected}")]
    DimMismatch {
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("token {token} out of range for d_c = {d_c}")]
    BadToken { token: usize, d_c: usize },
    #[error("no captures fall in layer range {0}")]
    EmptyRange(LayerRange),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Tune(#[from] TuneError),
}

impl AnalysisError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::DimMismatch { .. } => "DimMismatch",
            Self::BadToken { .. } => "BadToken",
            Self::EmptyRange(_) => "EmptyRange",
            Self::InvalidArgument(_) => "InvalidArgument",
            Self::Tune(e) => e.kind(),
        }
    }
}

/// The four blocks of one unified attention map.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionView {
    pub d_c: usize,
    pub hw: usize,
    pub t2t: Matrix,
    pub t2i: Matrix,
    pub i2t: Matrix,
    pub i2i: Matrix,
}

pub fn extract_regions(attn: &Matrix, d_c: usize, hw: usize) -> Result<RegionView, AnalysisError> {
    let n = d_c + hw;
    if attn.shape() != (n, n) {
        return Err(AnalysisError::DimMismatch {
            rows: attn.rows(),
            cols: attn.cols(),
            expected: n,
        });
    }
    Ok(RegionView {
        d_c,
        hw,
        t2t: attn.block(0, 0, d_c, d_c),
        t2i: attn.block(0, d_c, d_c, hw),
        i2t: attn.block(d_c, 0, hw, d_c),
        i2i: attn.block(d_c, d_c, hw, hw),
    })
}

impl RegionView {
    pub fn block(&self, region: Region) -> &Matrix {
        match region {
            Region::T2T => &self.t2t,
            Region::T2I => &self.t2i,
            Region::I2T => &self.i2t,
            Region::I2I => &self.i2i,
        }
    }

    /// Stitches the blocks back into the full map.
    pub fn reassemble(&self) -> Matrix {
        let d_c = self.d_c;
        Matrix::from_fn(d_c + self.hw, d_c + self.hw, |r, c| match (r < d_c, c < d_c) {
            (true, true) => self.t2t.get(r, c),
            (true, false) => self.t2i.get(r, c - d_c),
            (false, true) => self.i2t.get(r - d_c, c),
            (false, false) => self.i2i.get(r - d_c, c - d_c),
        })
    }

    /// Mean entry of each block.
    pub fn region_means(&self) -> Vec<(Region, f64)> {
        Region::ALL
            .iter()
            .map(|&r| {
                let m = self.block(r);
                let n = m.data().len();
                let mean = if n == 0 {
                    0.0
                } else {
                    m.data().iter().sum::<f64>() / n as f64
                };
                (r, mean)
            })
            .collect()
    }
}

/// I2T column `token`, reshaped row-major to `h x w`.
pub fn token_heatmap(
    view: &RegionView,
    token: usize,
    h: usize,
    w: usize,
) -> Result<Matrix, AnalysisError> {
    if token >= view.d_c {
        return Err(AnalysisError::BadToken {
            token,
            d_c: view.d_c,
        });
    }
    if h * w != view.hw {
        return Err(AnalysisError::DimMismatch {
            rows: h,
            cols: w,
            expected: view.hw,
        });
    }
    Ok(Matrix::from_fn(h, w, |r, c| view.i2t.get(r * w + c, token)))
}

/// Aggregated I2T mass for one (layer range, token class).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRangeStats {
    pub range: LayerRange,
    pub class: TokenClass,
    /// Mean over captures and class tokens of the token's mean I2T value.
    pub mean: f64,
    /// Max over the same population.
    pub max: f64,
    pub samples: usize,
}

/// Per range and token class, the mean and max over captured maps of each
/// class token's I2T column mean. Captures are sorted by (layer, step)
/// first, so the result does not depend on their order. `steps` optionally
/// restricts which captured steps count.
pub fn layer_range_stats(
    captures: &[CaptureRecord],
    ranges: &[LayerRange],
    spec: &PromptSpec,
    steps: Option<Range<usize>>,
) -> Result<Vec<LayerRangeStats>, AnalysisError> {
    let d_c = spec.d_c();
    let mut ordered: Vec<&CaptureRecord> = captures
        .iter()
        .filter(|c| steps.as_ref().is_none_or(|s| s.contains(&c.step)))
        .collect();
    ordered.sort_by_key(|c| (c.layer, c.step));
    let mut by_class: BTreeMap<TokenClass, Vec<usize>> = BTreeMap::new();
    for t in 0..d_c {
        by_class.entry(spec.class_of(t)).or_default().push(t);
    }
    let mut out = Vec::new();
    for &range in ranges {
        let in_range: Vec<&CaptureRecord> = ordered
            .iter()
            .copied()
            .filter(|c| range.contains(c.layer))
            .collect();
        if in_range.is_empty() {
            return Err(AnalysisError::EmptyRange(range));
        }
        for (&class, tokens) in &by_class {
            let mut sum = 0.0;
            let mut max = f64::NEG_INFINITY;
            let mut n = 0;
            for cap in &in_range {
                let side = cap.attention.rows();
                if side < d_c || cap.attention.cols() != side {
                    return Err(AnalysisError::DimMismatch {
                        rows: cap.attention.rows(),
                        cols: cap.attention.cols(),
                        expected: side.max(d_c),
                    });
                }
                let hw = side - d_c;
                for &t in tokens {
                    let col_mean = if hw == 0 {
                        0.0
                    } else {
                        (d_c..side).map(|r| cap.attention.get(r, t)).sum::<f64>() / hw as f64
                    };
                    sum += col_mean;
                    max = max.max(col_mean);
                    n += 1;
                }
            }
            out.push(LayerRangeStats {
                range,
                class,
                mean: sum / n as f64,
                max,
                samples: n,
            });
        }
    }
    Ok(out)
}

/// Samples `a * exp(beta * (m - a))` on `samples` evenly spaced points of
/// `[0, 1]`, with `beta` from the step schedule.
pub fn scaling_curve(
    lambda: f64,
    total_steps: usize,
    step: usize,
    m: u8,
    samples: usize,
) -> Result<Vec<(f64, f64)>, AnalysisError> {
    if m > 1 {
        return Err(AnalysisError::InvalidArgument(format!("m must be 0 or 1, got {m}")));
    }
    if samples < 2 {
        return Err(AnalysisError::InvalidArgument(format!(
            "need at least 2 samples, got {samples}"
        )));
    }
    let beta = TuneParams::new(lambda, total_steps, step)?.beta();
    let m = f64::from(m);
    let last = (samples - 1) as f64;
    Ok((0..samples)
        .map(|i| {
            let a = i as f64 / last;
            (a, a * (beta * (m - a)).exp())
        })
        .collect())
}
