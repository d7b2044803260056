//! Token grids: the `c × h × w` feature maps aggregation heads consume.
//!
//! Maps come either from the built-in [`baseline_encode`] or from an external
//! backbone via `PFEA` files. `PFEA` layout (little-endian): magic `PFEA`,
//! `u32` version, `u32` c, `u32` h, `u32` w, `u64` frame id, `u8` source
//! (0 baseline, 1 external), then `c·h·w` `f32` in `(c, h, w)` order.
//!
//! Baseline statistics occupy the first `8·C` channels, channel-major: for
//! input channel `k`, output channel `8k + s` holds statistic `s` in the order
//! of [`BASELINE_STATS`]. Version 1 of the format fixes this layout.

use crate::codec::{dim_u32, put_f32, put_u32, put_u64, Reader};
use crate::projection::ProjectionImage;
use crate::{Error, Result};

pub const PFEA_VERSION: u32 = 1;
pub const DEFAULT_PATCH: usize = 16;
pub const DEFAULT_BASELINE_CHANNELS: usize = 64;
pub const STATS_PER_CHANNEL: usize = 8;

pub const BASELINE_STATS: [&str; STATS_PER_CHANNEL] = [
    "mean",
    "std",
    "min",
    "max",
    "fill_ratio",
    "mean_abs_du",
    "mean_abs_dv",
    "centroid",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    Baseline,
    External,
}

impl FeatureSource {
    fn code(self) -> u8 {
        match self {
            FeatureSource::Baseline => 0,
            FeatureSource::External => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    /// `c·h·w` values, channel-major then row-major.
    pub data: Vec<f32>,
    pub frame_id: u64,
    pub source: FeatureSource,
}

impl FeatureMap {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f32>, frame_id: u64, source: FeatureSource) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::Shape(format!(
                "feature map {c}x{h}x{w} needs {} values, got {}",
                c * h * w,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("feature value at index {i} is not finite")));
        }
        Ok(FeatureMap {
            c,
            h,
            w,
            data,
            frame_id,
            source,
        })
    }

    pub fn at(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[(channel * self.h + row) * self.w + col]
    }

    pub fn num_tokens(&self) -> usize {
        self.h * self.w
    }
}

/// Per-cell summary statistics of one image channel.
fn cell_stats(img: &ProjectionImage, ch: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> [f64; 8] {
    let v = |r: usize, c: usize| img.get(r, c, ch) as f64;
    let n = (rows.len() * cols.len()) as f64;
    let mut sum = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut filled = 0usize;
    for r in rows.clone() {
        for c in cols.clone() {
            let x = v(r, c);
            sum += x;
            lo = lo.min(x);
            hi = hi.max(x);
            filled += img.filled(r, c) as usize;
        }
    }
    let mean = sum / n;
    let mut var = 0.0;
    for r in rows.clone() {
        for c in cols.clone() {
            var += (v(r, c) - mean).powi(2);
        }
    }
    let std = (var / n).sqrt();

    let (mut du, mut ndu) = (0.0, 0usize);
    for r in rows.clone() {
        for c in cols.start..cols.end.saturating_sub(1) {
            du += (v(r, c + 1) - v(r, c)).abs();
            ndu += 1;
        }
    }
    let (mut dv, mut ndv) = (0.0, 0usize);
    for r in rows.start..rows.end.saturating_sub(1) {
        for c in cols.clone() {
            dv += (v(r + 1, c) - v(r, c)).abs();
            ndv += 1;
        }
    }
    let mean_or_zero = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    let centroid = v(rows.start + rows.len() / 2, cols.start + cols.len() / 2);
    [
        mean,
        std,
        lo,
        hi,
        filled as f64 / n,
        mean_or_zero(du, ndu),
        mean_or_zero(dv, ndv),
        centroid,
    ]
}

/// Deterministic hand-crafted encoder: tiles the image into `patch × patch`
/// cells (edge cells truncated) and describes each cell by eight statistics
/// per input channel.
pub fn baseline_encode(img: &ProjectionImage, patch: usize, c_out: usize) -> Result<FeatureMap> {
    let nc = img.num_channels();
    if patch == 0 {
        return Err(Error::Config("patch size must be at least 1".into()));
    }
    if c_out < STATS_PER_CHANNEL * nc {
        return Err(Error::Config(format!(
            "baseline encoder needs c_out >= {} for {nc} input channels, got {c_out}",
            STATS_PER_CHANNEL * nc
        )));
    }
    if patch > img.height && patch > img.width {
        return Err(Error::Degenerate(format!(
            "patch {patch} larger than the {}x{} image",
            img.height, img.width
        )));
    }
    let h = img.height.div_ceil(patch);
    let w = img.width.div_ceil(patch);
    let mut data = vec![0f32; c_out * h * w];
    for i in 0..h {
        let rows = i * patch..((i + 1) * patch).min(img.height);
        for j in 0..w {
            let cols = j * patch..((j + 1) * patch).min(img.width);
            for ch in 0..nc {
                let stats = cell_stats(img, ch, rows.clone(), cols.clone());
                for (s, value) in stats.iter().enumerate() {
                    let out_c = ch * STATS_PER_CHANNEL + s;
                    data[(out_c * h + i) * w + j] = *value as f32;
                }
            }
        }
    }
    FeatureMap::new(c_out, h, w, data, img.frame_id, FeatureSource::Baseline)
}

/// Tokens in row-major grid order; token `(i, j)` is `data[:, i, j]`.
pub fn flatten_tokens(fm: &FeatureMap) -> Vec<Vec<f64>> {
    let mut tokens = Vec::with_capacity(fm.num_tokens());
    for i in 0..fm.h {
        for j in 0..fm.w {
            tokens.push((0..fm.c).map(|c| fm.at(c, i, j) as f64).collect());
        }
    }
    tokens
}

/// Inverse of [`flatten_tokens`]. Values are stored as `f32`.
pub fn unflatten_tokens(tokens: &[Vec<f64>], h: usize, w: usize, frame_id: u64, source: FeatureSource) -> Result<FeatureMap> {
    if tokens.len() != h * w {
        return Err(Error::Shape(format!("{} tokens cannot fill a {h}x{w} grid", tokens.len())));
    }
    let c = tokens.first().map_or(0, Vec::len);
    if tokens.iter().any(|t| t.len() != c) {
        return Err(Error::Shape("tokens have differing dimensions".into()));
    }
    let mut data = vec![0f32; c * h * w];
    for (t, token) in tokens.iter().enumerate() {
        for (ch, v) in token.iter().enumerate() {
            data[ch * h * w + t] = *v as f32;
        }
    }
    FeatureMap::new(c, h, w, data, frame_id, source)
}

pub fn save_feature_map(fm: &FeatureMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(29 + fm.data.len() * 4);
    out.extend_from_slice(b"PFEA");
    put_u32(&mut out, PFEA_VERSION);
    put_u32(&mut out, dim_u32(fm.c, "c")?);
    put_u32(&mut out, dim_u32(fm.h, "h")?);
    put_u32(&mut out, dim_u32(fm.w, "w")?);
    put_u64(&mut out, fm.frame_id);
    out.push(fm.source.code());
    for &v in &fm.data {
        put_f32(&mut out, v);
    }
    Ok(out)
}

pub fn load_feature_map(bytes: &[u8]) -> Result<FeatureMap> {
    let mut r = Reader::new(bytes, "PFEA");
    r.magic(b"PFEA")?;
    let version = r.u32()?;
    if version != PFEA_VERSION {
        return Err(Error::Format(format!("PFEA: unsupported version {version}")));
    }
    let c = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Format(format!("PFEA: empty grid {c}x{h}x{w}")));
    }
    let frame_id = r.u64()?;
    let source = match r.u8()? {
        0 => FeatureSource::Baseline,
        1 => FeatureSource::External,
        other => return Err(Error::Format(format!("PFEA: unknown source code {other}"))),
    };
    let n = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Format("PFEA: grid size overflow".into()))?;
    let data = r.f32s(n)?;
    r.finish()?;
    FeatureMap::new(c, h, w, data, frame_id, source)
}
