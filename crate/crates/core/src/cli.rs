//! Command-line driver: `project`, `encode`, `eval` and `report`.
//!
//! Settings come from flags, then from an optional `key = value` file given
//! with `--config` (sections either as `[section]` headers or dotted keys),
//! then from built-in defaults. Everything is resolved and validated before
//! any output is written.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage, configuration or
//! input-format error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::{self, Display};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aggregation::{
    init_codebook, l2_normalize, mean_std_pool, read_codebook, read_descriptors, vlad_aggregate, write_codebook,
    write_descriptors, GlobalDescriptor, VladCodebook, DEFAULT_ALPHA,
};
use crate::features::{
    baseline_encode, flatten_tokens, load_feature_map, FeatureMap, DEFAULT_BASELINE_CHANNELS, DEFAULT_PATCH,
};
use crate::metrics::EvalReport;
use crate::pointcloud::{
    crop_filter, estimate_curvature, load_poses, parse_csv, parse_kitti_bin, PoseTrack, Roi, SensorProfile,
    DEFAULT_CURVATURE_K,
};
use crate::projection::{
    native_size, project, read_pprj, render_png, write_pprj, Channel, Extent, ProjectionConfig, ProjectionKind,
};
use crate::retrieval::{
    build_index, read_records, run_regime, write_records, GroundTruthConfig, QueryRecord, RegimeConfig, TemporalUnit,
    DEFAULT_INTRA_OFFSET, DEFAULT_TAU,
};
use crate::{Error, Result};

pub const DEFAULT_IMAGE_SIZE: usize = 224;
pub const DEFAULT_CLUSTERS: usize = 8;
pub const DEFAULT_CODEBOOK_SAMPLE: usize = 10_000;

#[derive(Debug, Parser)]
#[command(name = "polarscan", version, about = "LiDAR place recognition through 2-D projections")]
pub struct Cli {
    /// Settings file with `key = value` lines; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "POLARSCAN_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rasterize point clouds into PPRJ images.
    Project(ProjectArgs),
    /// Turn PPRJ images or PFEA token grids into a PDSC descriptor file.
    Encode(EncodeArgs),
    /// Evaluate retrieval under one regime.
    Eval(EvalArgs),
    /// Compare record files and emit match maps.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Directory of `.bin` (KITTI) or `.csv` clouds; frame ids come from file names.
    #[arg(long)]
    pub clouds: Option<PathBuf>,
    /// Sensor profile; required for range and front projections.
    #[arg(long)]
    pub sensor: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub kind: Option<ProjectionKind>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Comma separated, e.g. `height,intensity,curvature`.
    #[arg(long)]
    pub channels: Option<ChannelList>,
    #[arg(long)]
    pub max_range: Option<f64>,
    /// `ROWSxCOLS` or `native`.
    #[arg(long)]
    pub output_size: Option<OutputSize>,
    /// Front-view field of view `MIN,MAX` in degrees.
    #[arg(long)]
    pub fov: Option<Fov>,
    /// `per_frame` or `fixed:ROW_LO,ROW_HI,COL_LO,COL_HI`.
    #[arg(long)]
    pub extent: Option<ExtentArg>,
    #[arg(long)]
    pub curvature_k: Option<usize>,
    /// Keep points inside the cube `[-R, R]^3`.
    #[arg(long)]
    pub roi: Option<f64>,
    /// Drop points with `z <= GROUND_Z`.
    #[arg(long, allow_hyphen_values = true)]
    pub ground_z: Option<f64>,
    /// Also render this channel as an 8-bit PNG per frame.
    #[arg(long)]
    pub png: Option<Channel>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Directory of `frame_*.pprj` (baseline) or `*.pfea` (external) files.
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    #[arg(long)]
    pub encoder: Option<EncoderKind>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub c_out: Option<usize>,
    #[arg(long)]
    pub head: Option<HeadKind>,
    /// VLAD codebook; created from a seeded token sample when missing.
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tokens sampled for codebook initialization.
    #[arg(long)]
    pub sample: Option<usize>,
    /// Output PDSC file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub descriptors: Option<PathBuf>,
    #[arg(long)]
    pub poses: Option<PathBuf>,
    #[arg(long)]
    pub regime: Option<RegimeKind>,
    /// Database size for the intra regime; defaults to half the frames.
    #[arg(long)]
    pub split: Option<usize>,
    #[arg(long)]
    pub offset: Option<usize>,
    /// Time-window size in frames.
    #[arg(long = "w")]
    pub window: Option<usize>,
    /// Time-window lag in frames.
    #[arg(long = "delta")]
    pub lag: Option<usize>,
    /// Query-side descriptors for the inter regime.
    #[arg(long)]
    pub query_descriptors: Option<PathBuf>,
    #[arg(long)]
    pub query_poses: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub delta_t: Option<f64>,
    #[arg(long)]
    pub unit: Option<TemporalUnit>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Records CSV files, one per run.
    pub records: Vec<PathBuf>,
    /// Comma separated run names; defaults to file stems.
    #[arg(long)]
    pub names: Option<String>,
    #[arg(long)]
    pub poses: Option<PathBuf>,
    #[arg(long)]
    pub query_poses: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! keyword_enum {
    ($name:ident, $what:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq)]
        pub enum $name { $($variant),+ }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::Lookup { kind: $what, name: s.to_string() }),
                }
            }
        }
    };
}

keyword_enum!(EncoderKind, "encoder", { Baseline => "baseline", External => "external" });
keyword_enum!(HeadKind, "head", { MeanStd => "meanstd", Vlad => "vlad" });
keyword_enum!(RegimeKind, "regime", { Intra => "intra", Inter => "inter", TimeWindow => "time_window" });

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelList(pub Vec<Channel>);

impl FromStr for ChannelList {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Channel::parse_list(s).map(ChannelList)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OutputSize {
    Native,
    Fixed(usize, usize),
}

impl FromStr for OutputSize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("native") {
            return Ok(OutputSize::Native);
        }
        let bad = || Error::Config(format!("output size `{s}` is not ROWSxCOLS"));
        let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        Ok(OutputSize::Fixed(
            r.trim().parse().map_err(|_| bad())?,
            c.trim().parse().map_err(|_| bad())?,
        ))
    }
}

fn float_list(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("{what} `{s}` must be {n} comma separated numbers")))?;
    if v.len() != n {
        return Err(Error::Config(format!("{what} `{s}` must be {n} comma separated numbers")));
    }
    Ok(v)
}

/// Degrees on the command line, radians inside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fov(pub f64, pub f64);

impl FromStr for Fov {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let v = float_list(s, 2, "field of view")?;
        Ok(Fov(v[0].to_radians(), v[1].to_radians()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtentArg(pub Extent);

impl FromStr for ExtentArg {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("per_frame") {
            return Ok(ExtentArg(Extent::PerFrame));
        }
        let body = s
            .strip_prefix("fixed:")
            .ok_or_else(|| Error::Config(format!("extent `{s}` is neither per_frame nor fixed:...")))?;
        let v = float_list(body, 4, "fixed extent")?;
        Ok(ExtentArg(Extent::Fixed {
            rows: (v[0], v[1]),
            cols: (v[2], v[3]),
        }))
    }
}

const KNOWN_KEYS: &[&str] = &[
    "jobs",
    "dataset.clouds",
    "dataset.sensor",
    "dataset.poses",
    "dataset.descriptors",
    "dataset.query_descriptors",
    "dataset.query_poses",
    "projection.kind",
    "projection.height",
    "projection.width",
    "projection.channels",
    "projection.max_range",
    "projection.output_size",
    "projection.fov",
    "projection.extent",
    "projection.curvature_k",
    "projection.roi",
    "projection.ground_z",
    "encoder.inputs",
    "encoder.kind",
    "encoder.patch",
    "encoder.c_out",
    "head.kind",
    "head.codebook",
    "head.clusters",
    "head.alpha",
    "head.seed",
    "head.sample",
    "regime.kind",
    "regime.split",
    "regime.offset",
    "regime.w",
    "regime.delta",
    "gt.tau",
    "gt.delta_t",
    "gt.unit",
    "output.dir",
    "output.descriptors",
    "output.png",
    "report.names",
];

/// Parsed settings file.
#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Settings> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let loc = || format!("config line {}", n + 1);
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(loc(), "unterminated section header"))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(loc(), "expected `key = value`"))?;
            let key = match section.as_str() {
                "" => k.trim().to_string(),
                s => format!("{s}.{}", k.trim()),
            };
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown setting `{key}` ({})", loc())));
            }
            values.insert(key, v.trim().trim_matches('"').to_string());
        }
        Ok(Settings { values })
    }

    pub fn load(path: &Path) -> Result<Settings> {
        Settings::parse(&read_text(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Flag value if given, else the parsed file value.
    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.get(key)
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| Error::Config(format!("setting `{key} = {s}`: {e}")))
            })
            .transpose()
    }

    fn require<T: FromStr>(&self, flag: Option<T>, key: &str, flag_name: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.pick(flag, key)?
            .ok_or_else(|| Error::Config(format!("missing `--{flag_name}` (or `{key}` in the config file)")))
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn existing_file(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Config(format!("{} is not a readable file", path.display())))
    }
}

fn existing_dir(path: PathBuf) -> Result<PathBuf> {
    if path.is_dir() {
        Ok(path)
    } else {
        Err(Error::Config(format!("{} is not a directory", path.display())))
    }
}

/// Trailing digits of the file stem, e.g. `frame_000042.pprj` → 42.
pub fn frame_id_from_path(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .take_while(char::is_ascii_digit)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

/// Files in `dir` with one of `extensions`, ordered by frame id.
fn list_frames(dir: &Path, extensions: &[&str]) -> Result<Vec<(u64, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| extensions.contains(&e.as_str())) {
            continue;
        }
        let id = frame_id_from_path(&path).ok_or_else(|| {
            Error::Config(format!("cannot derive a frame id from {}", path.display()))
        })?;
        frames.push((id, path));
    }
    frames.sort();
    if let Some(w) = frames.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Config(format!(
            "{} and {} share frame id {}",
            w[0].1.display(),
            w[1].1.display(),
            w[0].0
        )));
    }
    if frames.is_empty() {
        return Err(Error::Config(format!(
            "no .{} files in {}",
            extensions.join("/."),
            dir.display()
        )));
    }
    Ok(frames)
}

pub fn frame_file_name(frame: u64, ext: &str) -> String {
    format!("frame_{frame:06}.{ext}")
}

struct ProjectPlan {
    frames: Vec<(u64, PathBuf)>,
    profile: SensorProfile,
    cfg: ProjectionConfig,
    curvature_k: usize,
    roi: Option<Roi>,
    ground_z: Option<f64>,
    png: Option<Channel>,
    out: PathBuf,
}

fn plan_project(a: ProjectArgs, s: &Settings) -> Result<ProjectPlan> {
    let kind = s.pick(a.kind, "projection.kind")?.unwrap_or(ProjectionKind::Bev);
    let height = s.pick(a.height, "projection.height")?.unwrap_or(DEFAULT_IMAGE_SIZE);
    let width = s.pick(a.width, "projection.width")?.unwrap_or(DEFAULT_IMAGE_SIZE);
    let channels = s
        .pick(a.channels, "projection.channels")?
        .map_or_else(|| vec![Channel::Height, Channel::Range, Channel::Intensity], |c| c.0);
    let sensor = s.pick(a.sensor, "dataset.sensor")?.map(existing_file).transpose()?;
    let profile = match sensor {
        Some(path) => SensorProfile::parse(&read_text(&path)?)?,
        None if matches!(kind, ProjectionKind::Range | ProjectionKind::Front) => {
            return Err(Error::Config(format!("{kind} projection needs `--sensor`")));
        }
        None => SensorProfile::new("unspecified", vec![0.0], 100.0)?,
    };
    let mut cfg = ProjectionConfig::new(kind, height, width, channels);
    cfg.max_range = s.pick(a.max_range, "projection.max_range")?.unwrap_or(profile.max_range);
    if let Some(Fov(lo, hi)) = s.pick(a.fov, "projection.fov")? {
        cfg.fov = (lo, hi);
    }
    if let Some(ExtentArg(e)) = s.pick(a.extent, "projection.extent")? {
        cfg.extent = e;
    }
    cfg.output_size = match s.pick(a.output_size, "projection.output_size")? {
        Some(OutputSize::Native) => native_size(&profile, &cfg),
        Some(OutputSize::Fixed(r, c)) => (r, c),
        None => (DEFAULT_IMAGE_SIZE, DEFAULT_IMAGE_SIZE),
    };
    cfg.validate()?;
    let curvature_k = s.pick(a.curvature_k, "projection.curvature_k")?.unwrap_or(DEFAULT_CURVATURE_K);
    if curvature_k < 3 {
        return Err(Error::Config(format!("curvature k must be at least 3, got {curvature_k}")));
    }
    let roi = s
        .pick(a.roi, "projection.roi")?
        .map(|r| {
            if r > 0.0 {
                Ok(Roi::cube(r))
            } else {
                Err(Error::Config(format!("roi half-size must be positive, got {r}")))
            }
        })
        .transpose()?;
    let ground_z = s.pick(a.ground_z, "projection.ground_z")?;
    let png = s.pick(a.png, "output.png")?;
    if let Some(ch) = png {
        if !cfg.channels.contains(&ch) {
            return Err(Error::Config(format!("PNG channel `{ch}` is not among the projected channels")));
        }
    }
    let out = s.require(a.out, "output.dir", "out")?;
    let clouds = existing_dir(s.require(a.clouds, "dataset.clouds", "clouds")?)?;
    let frames = list_frames(&clouds, &["bin", "csv"])?;
    Ok(ProjectPlan {
        frames,
        profile,
        cfg,
        curvature_k,
        roi,
        ground_z,
        png,
        out,
    })
}

fn project_frame(plan: &ProjectPlan, frame: u64, path: &Path) -> Result<(Vec<u8>, Option<Vec<u8>>)> {
    let bytes = read_bytes(path)?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let mut cloud = if is_csv {
        let text = String::from_utf8(bytes).map_err(|_| Error::Format(format!("{} is not UTF-8", path.display())))?;
        parse_csv(&text)?
    } else {
        parse_kitti_bin(&bytes)?
    };
    cloud.frame_id = frame;
    if plan.roi.is_some() || plan.ground_z.is_some() {
        let roi = plan.roi.unwrap_or(Roi::cube(f64::MAX));
        cloud = crop_filter(&cloud, &roi, plan.ground_z);
    }
    if plan.cfg.channels.contains(&Channel::Curvature) {
        cloud = estimate_curvature(&cloud, plan.curvature_k)?;
    }
    let img = project(&cloud, &plan.profile, &plan.cfg)?;
    let png = plan.png.map(|ch| render_png(&img, ch)).transpose()?;
    Ok((write_pprj(&img)?, png))
}

fn cmd_project(a: ProjectArgs, s: &Settings) -> Result<()> {
    let plan = plan_project(a, s)?;
    create_dir(&plan.out)?;
    let results: Vec<_> = plan
        .frames
        .par_iter()
        .map(|(frame, path)| project_frame(&plan, *frame, path))
        .collect();
    let mut failed = 0usize;
    for ((frame, path), result) in plan.frames.iter().zip(results) {
        match result {
            Ok((pprj, png)) => {
                write_file(&plan.out.join(frame_file_name(*frame, "pprj")), &pprj)?;
                if let (Some(bytes), Some(ch)) = (png, plan.png) {
                    let name = format!("frame_{frame:06}_{ch}.png");
                    write_file(&plan.out.join(name), &bytes)?;
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("polarscan: frame {frame} ({}): {e}", path.display());
            }
        }
    }
    if failed > 0 {
        return Err(Error::Degenerate(format!(
            "{failed} of {} frames failed to project",
            plan.frames.len()
        )));
    }
    println!("projected {} frames into {}", plan.frames.len(), plan.out.display());
    Ok(())
}

enum Head {
    MeanStd,
    Vlad {
        path: PathBuf,
        existing: bool,
        clusters: usize,
        alpha: f64,
        seed: u64,
        sample: usize,
    },
}

struct EncodePlan {
    frames: Vec<(u64, PathBuf)>,
    encoder: EncoderKind,
    patch: usize,
    c_out: usize,
    head: Head,
    out: PathBuf,
}

fn plan_encode(a: EncodeArgs, s: &Settings) -> Result<EncodePlan> {
    let encoder = s.pick(a.encoder, "encoder.kind")?.unwrap_or(EncoderKind::Baseline);
    let patch = s.pick(a.patch, "encoder.patch")?.unwrap_or(DEFAULT_PATCH);
    let c_out = s.pick(a.c_out, "encoder.c_out")?.unwrap_or(DEFAULT_BASELINE_CHANNELS);
    if patch == 0 || c_out == 0 {
        return Err(Error::Config("patch and c_out must be positive".into()));
    }
    let out = s.require(a.out, "output.descriptors", "out")?;
    let head = match s.pick(a.head, "head.kind")?.unwrap_or(HeadKind::MeanStd) {
        HeadKind::MeanStd => Head::MeanStd,
        HeadKind::Vlad => {
            let path = s.pick(a.codebook, "head.codebook")?.unwrap_or_else(|| out.with_extension("pvld"));
            let clusters = s.pick(a.clusters, "head.clusters")?.unwrap_or(DEFAULT_CLUSTERS);
            let alpha = s.pick(a.alpha, "head.alpha")?.unwrap_or(DEFAULT_ALPHA);
            let sample = s.pick(a.sample, "head.sample")?.unwrap_or(DEFAULT_CODEBOOK_SAMPLE);
            if clusters == 0 || sample < clusters || !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::Config(format!(
                    "VLAD needs clusters >= 1, sample >= clusters and alpha > 0 (got {clusters}, {sample}, {alpha})"
                )));
            }
            Head::Vlad {
                existing: path.is_file(),
                path,
                clusters,
                alpha,
                seed: s.pick(a.seed, "head.seed")?.unwrap_or(0),
                sample,
            }
        }
    };
    let inputs = existing_dir(s.require(a.inputs, "encoder.inputs", "inputs")?)?;
    let ext = match encoder {
        EncoderKind::Baseline => "pprj",
        EncoderKind::External => "pfea",
    };
    let frames = list_frames(&inputs, &[ext])?;
    Ok(EncodePlan {
        frames,
        encoder,
        patch,
        c_out,
        head,
        out,
    })
}

fn load_features(plan: &EncodePlan, frame: u64, path: &Path) -> Result<FeatureMap> {
    let bytes = read_bytes(path)?;
    let fm = match plan.encoder {
        EncoderKind::Baseline => {
            let mut img = read_pprj(&bytes)?;
            img.frame_id = frame;
            baseline_encode(&img, plan.patch, plan.c_out)?
        }
        EncoderKind::External => {
            let mut fm = load_feature_map(&bytes)?;
            fm.frame_id = frame;
            fm
        }
    };
    Ok(fm)
}

/// Seeded uniform sample of tokens across all maps, in (frame, token) order.
fn sample_tokens(maps: &[FeatureMap], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let total: usize = maps.iter().map(FeatureMap::num_tokens).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, total, n.min(total)).into_vec();
    picked.sort_unstable();
    let mut out = Vec::with_capacity(picked.len());
    let mut next = picked.into_iter().peekable();
    let mut base = 0;
    for fm in maps {
        let count = fm.num_tokens();
        if next.peek().is_some_and(|&i| i < base + count) {
            let tokens = flatten_tokens(fm);
            while let Some(&i) = next.peek() {
                if i >= base + count {
                    break;
                }
                out.push(tokens[i - base].clone());
                next.next();
            }
        }
        base += count;
    }
    out
}

/// Descriptors for already loaded maps, plus the codebook to persist if one
/// was created.
pub fn encode_maps(
    maps: &[FeatureMap],
    head: HeadKind,
    codebook: Option<&VladCodebook>,
) -> Result<Vec<GlobalDescriptor>> {
    let descriptors: Vec<GlobalDescriptor> = match head {
        HeadKind::MeanStd => maps.par_iter().map(|fm| l2_normalize(&mean_std_pool(fm))).collect(),
        HeadKind::Vlad => {
            let cb = codebook.ok_or_else(|| Error::Config("VLAD head needs a codebook".into()))?;
            maps.par_iter()
                .map(|fm| vlad_aggregate(fm, cb).map(|g| l2_normalize(&g)))
                .collect::<Result<_>>()?
        }
    };
    if let Some(d) = descriptors.iter().find(|d| d.dim() != descriptors[0].dim()) {
        return Err(Error::Shape(format!(
            "frame {} has descriptor length {}, frame {} has {}",
            d.frame_id,
            d.dim(),
            descriptors[0].frame_id,
            descriptors[0].dim()
        )));
    }
    Ok(descriptors)
}

fn cmd_encode(a: EncodeArgs, s: &Settings) -> Result<()> {
    let plan = plan_encode(a, s)?;
    let existing_codebook = match &plan.head {
        Head::Vlad { path, existing: true, .. } => Some(read_codebook(&read_bytes(path)?)?),
        _ => None,
    };
    let maps: Vec<FeatureMap> = plan
        .frames
        .par_iter()
        .map(|(frame, path)| {
            load_features(&plan, *frame, path).map_err(|e| match e {
                Error::Io { .. } => e,
                other => Error::Format(format!("{}: {other}", path.display())),
            })
        })
        .collect::<Result<_>>()?;
    let (head, codebook, created) = match &plan.head {
        Head::MeanStd => (HeadKind::MeanStd, None, None),
        Head::Vlad { path, clusters, alpha, seed, sample, .. } => {
            let cb = match existing_codebook {
                Some(cb) => cb,
                None => init_codebook(&sample_tokens(&maps, *sample, *seed), *clusters, *seed, *alpha)?,
            };
            let created = (!matches!(plan.head, Head::Vlad { existing: true, .. })).then(|| path.clone());
            (HeadKind::Vlad, Some(cb), created)
        }
    };
    let descriptors = encode_maps(&maps, head, codebook.as_ref())?;
    let pdsc = write_descriptors(&descriptors)?;
    if let (Some(path), Some(cb)) = (created, &codebook) {
        write_file(&path, &write_codebook(cb)?)?;
    }
    if let Some(parent) = plan.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&plan.out, &pdsc)?;
    println!(
        "encoded {} frames into {} (L={})",
        descriptors.len(),
        plan.out.display(),
        descriptors[0].dim()
    );
    Ok(())
}

fn load_index_inputs(descriptors: &Path, poses: &Path) -> Result<(Vec<GlobalDescriptor>, PoseTrack)> {
    let d = read_descriptors(&read_bytes(descriptors)?)
        .map_err(|e| Error::Format(format!("{}: {e}", descriptors.display())))?;
    let p = load_poses(&read_text(poses)?)?;
    Ok((d, p))
}

fn cmd_eval(a: EvalArgs, s: &Settings) -> Result<()> {
    let kind = s.pick(a.regime, "regime.kind")?.unwrap_or(RegimeKind::Intra);
    let gt = GroundTruthConfig {
        tau: s.pick(a.tau, "gt.tau")?.unwrap_or(DEFAULT_TAU),
        delta_t: s.pick(a.delta_t, "gt.delta_t")?.unwrap_or(0.0),
        unit: s.pick(a.unit, "gt.unit")?.unwrap_or(TemporalUnit::Frames),
    };
    gt.validate()?;
    let out = s.require(a.out, "output.dir", "out")?;
    let desc_path = existing_file(s.require(a.descriptors, "dataset.descriptors", "descriptors")?)?;
    let pose_path = existing_file(s.require(a.poses, "dataset.poses", "poses")?)?;
    let split = s.pick(a.split, "regime.split")?;
    let offset = s.pick(a.offset, "regime.offset")?.unwrap_or(DEFAULT_INTRA_OFFSET);
    let window = s.pick(a.window, "regime.w")?;
    let lag = s.pick(a.lag, "regime.delta")?;
    let query_paths = match kind {
        RegimeKind::Inter => Some((
            existing_file(s.require(a.query_descriptors, "dataset.query_descriptors", "query-descriptors")?)?,
            existing_file(s.require(a.query_poses, "dataset.query_poses", "query-poses")?)?,
        )),
        _ => None,
    };
    let regime = match kind {
        RegimeKind::Intra => None,
        RegimeKind::Inter => Some(RegimeConfig::Inter),
        RegimeKind::TimeWindow => Some(RegimeConfig::TimeWindow {
            window: window.ok_or_else(|| Error::Config("time_window regime needs `--w`".into()))?,
            lag: lag.ok_or_else(|| Error::Config("time_window regime needs `--delta`".into()))?,
        }),
    };

    let (descriptors, poses) = load_index_inputs(&desc_path, &pose_path)?;
    let regime = regime.unwrap_or(RegimeConfig::Intra {
        split: split.unwrap_or(descriptors.len() / 2),
        offset,
    });
    regime.validate(descriptors.len())?;
    let index = build_index(&descriptors, &poses)?;
    let query_index = match query_paths {
        Some((d, p)) => {
            let (qd, qp) = load_index_inputs(&d, &p)?;
            Some(build_index(&qd, &qp)?)
        }
        None => None,
    };
    let records = run_regime(&index, query_index.as_ref(), &regime, &gt)?;
    let report = EvalReport::from_records(&records);

    create_dir(&out)?;
    write_file(&out.join("report.json"), report.to_json().as_bytes())?;
    write_file(&out.join("records.csv"), write_records(&records).as_bytes())?;
    write_file(&out.join("pr.csv"), report.curve.to_csv().as_bytes())?;
    for w in &report.warnings {
        eprintln!("polarscan: warning: {w}");
    }
    println!("{}", report.summary_line());
    Ok(())
}

/// Per-query `qx,qy,mx,my,correct` rows for records that have a positive.
pub fn match_map(records: &[QueryRecord], db_poses: &PoseTrack, query_poses: &PoseTrack) -> Result<String> {
    let mut out = String::from("qx,qy,mx,my,correct\n");
    for r in records.iter().filter(|r| r.has_positive) {
        let q = query_poses.get(r.query_frame).ok_or(Error::Join(r.query_frame))?;
        let m = db_poses.get(r.top1_frame).ok_or(Error::Join(r.top1_frame))?;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            q.position[0], q.position[1], m.position[0], m.position[1], r.is_positive as u8
        ));
    }
    Ok(out)
}

struct Table<'a>(&'a [(String, EvalReport)]);

impl fmt::Display for Table<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.0.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(3);
        writeln!(f, "{:<width$}  {:>8}  {:>6}  {:>6}  {:>6}", "run", "queries", "R@1", "maxF1", "AUC")?;
        for (name, r) in self.0 {
            writeln!(
                f,
                "{:<width$}  {:>8}  {:>6.4}  {:>6.4}  {:>6.4}",
                name, r.n_queries_with_positives, r.recall_at_1, r.max_f1, r.pr_auc
            )?;
        }
        Ok(())
    }
}

fn cmd_report(a: ReportArgs, s: &Settings) -> Result<()> {
    if a.records.is_empty() {
        return Err(Error::Config("report needs at least one records file".into()));
    }
    let out = s.require(a.out, "output.dir", "out")?;
    let pose_path = existing_file(s.require(a.poses, "dataset.poses", "poses")?)?;
    let query_pose_path = s.pick(a.query_poses, "dataset.query_poses")?.map(existing_file).transpose()?;
    let records_paths: Vec<PathBuf> = a.records.into_iter().map(existing_file).collect::<Result<_>>()?;
    let mut names: Vec<String> = match s.pick(a.names, "report.names")? {
        Some(list) => list.split(',').map(|n| n.trim().to_string()).collect(),
        None => records_paths
            .iter()
            .map(|p| p.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned()))
            .collect(),
    };
    if names.len() != records_paths.len() {
        return Err(Error::Config(format!(
            "{} names for {} records files",
            names.len(),
            records_paths.len()
        )));
    }
    for i in 0..names.len() {
        if names[..i].contains(&names[i]) || names[i].is_empty() {
            names[i] = format!("{}{}", names[i], i + 1);
        }
    }

    let db_poses = load_poses(&read_text(&pose_path)?)?;
    let query_poses = match query_pose_path {
        Some(p) => load_poses(&read_text(&p)?)?,
        None => db_poses.clone(),
    };
    let mut runs = Vec::new();
    let mut maps = Vec::new();
    for (name, path) in names.into_iter().zip(&records_paths) {
        let records = read_records(&read_text(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        maps.push(match_map(&records, &db_poses, &query_poses)?);
        runs.push((name, EvalReport::from_records(&records)));
    }

    let mut csv = String::from("run,queries,recall_at_1,max_f1,pr_auc\n");
    for (name, r) in &runs {
        csv.push_str(&format!(
            "{name},{},{},{},{}\n",
            r.n_queries_with_positives, r.recall_at_1, r.max_f1, r.pr_auc
        ));
    }
    create_dir(&out)?;
    write_file(&out.join("table.csv"), csv.as_bytes())?;
    for ((name, _), map) in runs.iter().zip(&maps) {
        write_file(&out.join(format!("map_{name}.csv")), map.as_bytes())?;
    }
    print!("{}", Table(&runs));
    Ok(())
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Format(_) | Error::Parse { .. } | Error::Config(_) | Error::Lookup { .. } | Error::Validation(_) => 2,
        Error::Degenerate(_) | Error::Shape(_) | Error::Join(_) | Error::Io { .. } => 1,
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let settings = match &cli.config {
        Some(path) => Settings::load(&existing_file(path.clone())?)?,
        None => Settings::default(),
    };
    let jobs = settings.pick(cli.jobs, "jobs")?.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| match cli.command {
        Command::Project(a) => cmd_project(a, &settings),
        Command::Encode(a) => cmd_encode(a, &settings),
        Command::Eval(a) => cmd_eval(a, &settings),
        Command::Report(a) => cmd_report(a, &settings),
    })
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("polarscan: {e}");
            exit_code(&e)
        }
    }
}
