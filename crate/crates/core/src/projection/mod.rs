//! Point cloud to multi-channel image projections.
//!
//! Pixel indices follow the usual `(row, col)` convention. The mapping per kind:
//!
//! | kind  | row                               | col                                      |
//! |-------|-----------------------------------|------------------------------------------|
//! | BEV   | `⌊x'/max x' · (H−1)⌋`             | `⌊y'/max y' · (W−1)⌋`                    |
//! | POLAR | `⌊r/max r · (H−1)⌋`, `r = √(x²+y²)` | `⌊(θ−min θ)/(max θ−min θ) · (W−1)⌋`    |
//! | RANGE | nearest beam elevation            | `⌊0.5(1−θ/π) · W⌋`                       |
//! | FRONT | nearest beam elevation            | `⌊(θ−a_min)/(a_max−a_min) · W⌋`          |
//!
//! where `x' = x − min x`, `θ = atan2(y, x)` with `atan2(0, 0) = 0`. Indices that
//! land outside the grid are clamped to the edge. Beam-indexed kinds use one
//! row per beam of the [`SensorProfile`], ascending elevation from row 0.

mod image_io;
mod resize;

pub use image_io::{read_pprj, render_png, write_pprj, PPRJ_VERSION};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::pointcloud::{PointCloud, PointRecord, SensorProfile};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProjectionKind {
    Bev,
    Polar,
    Range,
    Front,
}

impl ProjectionKind {
    pub fn code(self) -> u8 {
        match self {
            ProjectionKind::Bev => 0,
            ProjectionKind::Polar => 1,
            ProjectionKind::Range => 2,
            ProjectionKind::Front => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => ProjectionKind::Bev,
            1 => ProjectionKind::Polar,
            2 => ProjectionKind::Range,
            3 => ProjectionKind::Front,
            other => return Err(Error::Format(format!("unknown projection kind code {other}"))),
        })
    }

    fn beam_indexed(self) -> bool {
        matches!(self, ProjectionKind::Range | ProjectionKind::Front)
    }
}

impl FromStr for ProjectionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bev" => Ok(ProjectionKind::Bev),
            "polar" => Ok(ProjectionKind::Polar),
            "range" => Ok(ProjectionKind::Range),
            "front" => Ok(ProjectionKind::Front),
            _ => Err(Error::Lookup {
                kind: "projection",
                name: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for ProjectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectionKind::Bev => "bev",
            ProjectionKind::Polar => "polar",
            ProjectionKind::Range => "range",
            ProjectionKind::Front => "front",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    Height,
    Range,
    Intensity,
    Curvature,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::Height,
        Channel::Range,
        Channel::Intensity,
        Channel::Curvature,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Channel::Height => "height",
            Channel::Range => "range",
            Channel::Intensity => "intensity",
            Channel::Curvature => "curvature",
        }
    }

    /// Parses a comma separated list such as `height,intensity,curvature`.
    pub fn parse_list(s: &str) -> Result<Vec<Channel>> {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse())
            .collect()
    }
}

impl FromStr for Channel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| Error::Lookup {
                kind: "channel",
                name: s.to_string(),
            })
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// How BEV and POLAR grids are anchored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Extent {
    /// Grid spans the frame's own coordinate range (the `(H−1)`/`(W−1)` formulas).
    PerFrame,
    /// Metric grid of `H × W` equal cells over half-open intervals; points
    /// outside are dropped. Rows/cols are `(x, y)` for BEV and `(r, θ)` for
    /// POLAR. A θ interval spanning a full turn wraps around.
    Fixed {
        rows: (f64, f64),
        cols: (f64, f64),
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionConfig {
    pub kind: ProjectionKind,
    /// Native grid rows. Ignored by RANGE/FRONT, which use one row per beam.
    pub height: usize,
    pub width: usize,
    pub channels: Vec<Channel>,
    /// Divisor for the range channel, meters.
    pub max_range: f64,
    /// Horizontal field of view `(a_min, a_max)` in radians, FRONT only.
    pub fov: (f64, f64),
    pub extent: Extent,
    /// Final `(rows, cols)` after resizing.
    pub output_size: (usize, usize),
}

impl ProjectionConfig {
    pub fn new(kind: ProjectionKind, height: usize, width: usize, channels: Vec<Channel>) -> Self {
        ProjectionConfig {
            kind,
            height,
            width,
            channels,
            max_range: 100.0,
            fov: (-PI / 4.0, PI / 4.0),
            extent: Extent::PerFrame,
            output_size: (height, width),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "projection grid must be at least 1x1, got {}x{}",
                self.height, self.width
            )));
        }
        if self.output_size.0 == 0 || self.output_size.1 == 0 {
            return Err(Error::Config("output size must be at least 1x1".into()));
        }
        if self.channels.is_empty() {
            return Err(Error::Config("at least one channel is required".into()));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if self.channels[..i].contains(c) {
                return Err(Error::Config(format!("duplicate channel `{c}`")));
            }
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(Error::Config(format!("max_range must be positive, got {}", self.max_range)));
        }
        if self.kind == ProjectionKind::Front && !(self.fov.0 < self.fov.1) {
            return Err(Error::Config(format!(
                "field of view needs a_min < a_max, got {:?}",
                self.fov
            )));
        }
        if let Extent::Fixed { rows, cols } = self.extent {
            if !(rows.0 < rows.1 && cols.0 < cols.1) {
                return Err(Error::Config("fixed extent needs lo < hi on both axes".into()));
            }
        }
        Ok(())
    }
}

/// `H × W × C` image with values in `[0, 1]`, stored row-major with channels
/// interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionImage {
    pub height: usize,
    pub width: usize,
    pub channels: Vec<Channel>,
    pub kind: ProjectionKind,
    pub frame_id: u64,
    pub data: Vec<f32>,
    /// True where at least one point landed.
    pub mask: Vec<bool>,
}

impl ProjectionImage {
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels.len() + channel]
    }

    pub fn filled(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.width + col]
    }

    pub fn channel_index(&self, channel: Channel) -> Result<usize> {
        self.channels
            .iter()
            .position(|&c| c == channel)
            .ok_or_else(|| Error::Lookup {
                kind: "channel",
                name: channel.label().to_string(),
            })
    }

    /// One channel as a row-major `H × W` plane.
    pub fn plane(&self, channel: usize) -> Vec<f32> {
        let c = self.channels.len();
        self.data.iter().skip(channel).step_by(c).copied().collect()
    }
}

/// `atan2` with the `atan2(0, 0) = 0` convention made explicit.
pub fn azimuth(x: f64, y: f64) -> f64 {
    if x == 0.0 && y == 0.0 {
        0.0
    } else {
        y.atan2(x)
    }
}

/// `⌊offset · n / span⌋` clamped to `[0, n]`; zero span maps to 0.
fn scaled_floor(offset: f64, span: f64, n: usize) -> usize {
    if !(span > 0.0) {
        return 0;
    }
    let v = (offset * n as f64 / span).floor();
    if v <= 0.0 {
        0
    } else {
        (v as usize).min(n)
    }
}

fn clamp_index(v: f64, n: usize) -> usize {
    if v <= 0.0 {
        0
    } else {
        (v as usize).min(n - 1)
    }
}

/// Cell of `value` in a half-open `[lo, hi)` interval split into `n` cells.
fn fixed_cell(value: f64, (lo, hi): (f64, f64), n: usize) -> Option<usize> {
    if value < lo || value >= hi {
        return None;
    }
    let c = ((value - lo) / (hi - lo) * n as f64).floor();
    Some(clamp_index(c, n))
}

fn wrapped_cell(theta: f64, (lo, hi): (f64, f64), n: usize) -> Option<usize> {
    let span = hi - lo;
    if span >= 2.0 * PI - 1e-12 {
        let off = (theta - lo).rem_euclid(2.0 * PI);
        let c = (off / (2.0 * PI) * n as f64).floor();
        Some(if c as usize >= n { 0 } else { c as usize })
    } else {
        fixed_cell(theta, (lo, hi), n)
    }
}

struct Placed {
    point: usize,
    row: usize,
    col: usize,
    range: f64,
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn place_points(cloud: &PointCloud, profile: &SensorProfile, cfg: &ProjectionConfig) -> Vec<Option<Placed>> {
    let pts = &cloud.points;
    let (h, w) = (cfg.height, cfg.width);
    let planar = |p: &PointRecord| (p.x * p.x + p.y * p.y).sqrt();
    let spatial = |p: &PointRecord| (p.x * p.x + p.y * p.y + p.z * p.z).sqrt();
    let placed = |i: usize, row: usize, col: usize, range: f64| Some(Placed { point: i, row, col, range });

    match cfg.kind {
        ProjectionKind::Bev => match cfg.extent {
            Extent::PerFrame => {
                let (min_x, max_x) = min_max(pts.iter().map(|p| p.x));
                let (min_y, max_y) = min_max(pts.iter().map(|p| p.y));
                pts.iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let row = scaled_floor(p.x - min_x, max_x - min_x, h - 1);
                        let col = scaled_floor(p.y - min_y, max_y - min_y, w - 1);
                        placed(i, row, col, spatial(p))
                    })
                    .collect()
            }
            Extent::Fixed { rows, cols } => pts
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let row = fixed_cell(p.x, rows, h)?;
                    let col = fixed_cell(p.y, cols, w)?;
                    placed(i, row, col, spatial(p))
                })
                .collect(),
        },
        ProjectionKind::Polar => {
            let polar: Vec<(f64, f64)> = pts.iter().map(|p| (planar(p), azimuth(p.x, p.y))).collect();
            match cfg.extent {
                Extent::PerFrame => {
                    let (_, max_r) = min_max(polar.iter().map(|v| v.0));
                    let (min_t, max_t) = min_max(polar.iter().map(|v| v.1));
                    polar
                        .iter()
                        .enumerate()
                        .map(|(i, &(r, t))| {
                            let row = scaled_floor(r, max_r, h - 1);
                            let col = scaled_floor(t - min_t, max_t - min_t, w - 1);
                            placed(i, row, col, r)
                        })
                        .collect()
                }
                Extent::Fixed { rows, cols } => polar
                    .iter()
                    .enumerate()
                    .map(|(i, &(r, t))| {
                        let row = fixed_cell(r, rows, h)?;
                        let col = wrapped_cell(t, cols, w)?;
                        placed(i, row, col, r)
                    })
                    .collect(),
            }
        }
        ProjectionKind::Range | ProjectionKind::Front => pts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let r = spatial(p);
                let theta = azimuth(p.x, p.y);
                let col = if cfg.kind == ProjectionKind::Range {
                    clamp_index((0.5 * (1.0 - theta / PI) * w as f64).floor(), w)
                } else {
                    let (a_min, a_max) = cfg.fov;
                    if theta < a_min || theta > a_max {
                        return None;
                    }
                    clamp_index(((theta - a_min) / (a_max - a_min) * w as f64).floor(), w)
                };
                let elevation = if r > 0.0 { (p.z / r).clamp(-1.0, 1.0).asin() } else { 0.0 };
                let row = profile.nearest_beam(elevation.to_degrees())?;
                placed(i, row, col, r)
            })
            .collect(),
    }
}

/// Native `(rows, cols)` of the grid before resizing.
pub fn native_size(profile: &SensorProfile, cfg: &ProjectionConfig) -> (usize, usize) {
    if cfg.kind.beam_indexed() {
        (profile.num_beams(), cfg.width)
    } else {
        (cfg.height, cfg.width)
    }
}

/// Native-grid `(row, col)` of every point, `None` for points the projection
/// discards (outside the FRONT field of view or a fixed extent).
pub fn pixel_coordinates(
    cloud: &PointCloud,
    profile: &SensorProfile,
    cfg: &ProjectionConfig,
) -> Result<Vec<Option<(usize, usize)>>> {
    check_inputs(cloud, profile, cfg)?;
    Ok(place_points(cloud, profile, cfg)
        .into_iter()
        .map(|p| p.map(|p| (p.row, p.col)))
        .collect())
}

fn check_inputs(cloud: &PointCloud, profile: &SensorProfile, cfg: &ProjectionConfig) -> Result<()> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(Error::Degenerate(format!("frame {} has no points", cloud.frame_id)));
    }
    if cfg.kind.beam_indexed() && profile.num_beams() == 0 {
        return Err(Error::Config(format!(
            "{} projection needs a sensor profile with beam elevations",
            cfg.kind
        )));
    }
    Ok(())
}

/// Projects `cloud` into a `cfg.output_size` image.
///
/// Non-range channels are min-max normalized over the projected points; the
/// range channel is divided by `cfg.max_range` and clipped. On collisions the
/// range channel keeps the closest point and all other channels keep the last
/// point in cloud order.
pub fn project(cloud: &PointCloud, profile: &SensorProfile, cfg: &ProjectionConfig) -> Result<ProjectionImage> {
    check_inputs(cloud, profile, cfg)?;
    let placed: Vec<Placed> = place_points(cloud, profile, cfg).into_iter().flatten().collect();
    if placed.is_empty() {
        return Err(Error::Degenerate(format!(
            "no point of frame {} falls inside the {} projection",
            cloud.frame_id, cfg.kind
        )));
    }

    let nc = cfg.channels.len();
    let values: Vec<Vec<f64>> = cfg
        .channels
        .iter()
        .map(|&ch| {
            let raw: Vec<f64> = placed
                .iter()
                .map(|pl| {
                    let p = &cloud.points[pl.point];
                    match ch {
                        Channel::Height => p.z,
                        Channel::Intensity => p.intensity,
                        Channel::Curvature => p.curvature,
                        Channel::Range => pl.range,
                    }
                })
                .collect();
            if ch == Channel::Range {
                raw.iter().map(|r| (r / cfg.max_range).clamp(0.0, 1.0)).collect()
            } else {
                crate::pointcloud::normalize_per_frame(&raw)
            }
        })
        .collect();

    let (h, w) = native_size(profile, cfg);
    let mut data = vec![0.0f64; h * w * nc];
    let mut mask = vec![false; h * w];
    for (n, pl) in placed.iter().enumerate() {
        let pix = pl.row * w + pl.col;
        let first = !mask[pix];
        mask[pix] = true;
        for (c, ch) in cfg.channels.iter().enumerate() {
            let slot = &mut data[pix * nc + c];
            let v = values[c][n];
            if *ch == Channel::Range && !first {
                *slot = slot.min(v);
            } else {
                *slot = v;
            }
        }
    }

    let (oh, ow) = cfg.output_size;
    let (data, mask) = if (oh, ow) == (h, w) {
        (data, mask)
    } else {
        let data = resize::bilinear(&data, h, w, nc, oh, ow);
        let mask = resize::nearest(&mask, h, w, oh, ow);
        (data, mask)
    };
    let data = data
        .chunks_exact(nc)
        .zip(&mask)
        .flat_map(|(px, &filled)| {
            px.iter()
                .map(move |&v| if filled { v.clamp(0.0, 1.0) as f32 } else { 0.0 })
        })
        .collect();

    Ok(ProjectionImage {
        height: oh,
        width: ow,
        channels: cfg.channels.clone(),
        kind: cfg.kind,
        frame_id: cloud.frame_id,
        data,
        mask,
    })
}
