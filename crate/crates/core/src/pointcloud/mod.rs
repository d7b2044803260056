//! Point clouds, pose tracks and sensor profiles.

mod curvature;
mod knn;

pub use curvature::{estimate_curvature, normalize_per_frame, raw_curvature, DEFAULT_CURVATURE_K};
pub use knn::{k_nearest, BRUTE_FORCE_LIMIT};

use crate::{Error, Result};

/// One LiDAR return with its per-point channels.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PointRecord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
    /// Normalized curvature in `[0, 1]`, or 0 until estimated.
    pub curvature: f64,
}

impl PointRecord {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        PointRecord {
            x,
            y,
            z,
            intensity,
            curvature: 0.0,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// An ordered scan. Point order is significant: projections resolve pixel
/// collisions by it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub frame_id: u64,
    pub timestamp: f64,
    pub points: Vec<PointRecord>,
}

impl PointCloud {
    pub fn new(frame_id: u64, timestamp: f64, points: Vec<PointRecord>) -> Self {
        PointCloud {
            frame_id,
            timestamp,
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn with_points(&self, points: Vec<PointRecord>) -> Self {
        PointCloud {
            frame_id: self.frame_id,
            timestamp: self.timestamp,
            points,
        }
    }
}

/// Decodes a KITTI Velodyne scan: little-endian `f32` quadruples
/// `(x, y, z, intensity)` with no header.
pub fn parse_kitti_bin(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() % 16 != 0 {
        return Err(Error::Format(format!(
            "KITTI scan length {} is not a multiple of 16 bytes",
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for (index, record) in bytes.chunks_exact(16).enumerate() {
        let mut v = [0f32; 4];
        for (slot, word) in v.iter_mut().zip(record.chunks_exact(4)) {
            *slot = f32::from_le_bytes(word.try_into().unwrap());
        }
        if let Some(bad) = v.iter().position(|f| !f.is_finite()) {
            return Err(Error::parse(
                format!("point {index}"),
                format!("non-finite value {} in field {bad}", v[bad]),
            ));
        }
        points.push(PointRecord::new(
            v[0] as f64,
            v[1] as f64,
            v[2] as f64,
            v[3] as f64,
        ));
    }
    Ok(PointCloud::new(0, 0.0, points))
}

/// Encodes the `(x, y, z, intensity)` of each point as KITTI `f32` records.
pub fn to_kitti_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn column(headers: &csv::StringRecord, name: &str, what: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Format(format!("{what}: missing column `{name}`")))
}

fn field_f64(record: &csv::StringRecord, col: usize, name: &str) -> Result<f64> {
    let line = record.position().map_or(0, |p| p.line());
    let raw = record
        .get(col)
        .ok_or_else(|| Error::parse(format!("line {line}"), format!("missing field `{name}`")))?;
    let value: f64 = raw.trim().parse().map_err(|_| {
        Error::parse(format!("line {line}"), format!("`{raw}` is not a number ({name})"))
    })?;
    if !value.is_finite() {
        return Err(Error::parse(
            format!("line {line}"),
            format!("non-finite value for `{name}`"),
        ));
    }
    Ok(value)
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn csv_error(what: &str, e: csv::Error) -> Error {
    Error::Format(format!("{what}: {e}"))
}

/// Parses a points CSV with header `x,y,z,intensity`.
pub fn parse_csv(text: &str) -> Result<PointCloud> {
    let mut reader = csv_reader(text);
    let headers = reader.headers().map_err(|e| csv_error("points CSV", e))?.clone();
    let cols = ["x", "y", "z", "intensity"]
        .map(|name| column(&headers, name, "points CSV").map(|c| (c, name)));
    let mut idx = [(0, ""); 4];
    for (slot, c) in idx.iter_mut().zip(cols) {
        *slot = c?;
    }
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error("points CSV", e))?;
        let mut v = [0.0; 4];
        for (slot, &(col, name)) in v.iter_mut().zip(&idx) {
            *slot = field_f64(&record, col, name)?;
        }
        points.push(PointRecord::new(v[0], v[1], v[2], v[3]));
    }
    Ok(PointCloud::new(0, 0.0, points))
}

/// Writes a points CSV readable by [`parse_csv`]. Values use the shortest
/// round-trip representation.
pub fn serialize_csv(cloud: &PointCloud) -> String {
    let mut out = String::from("x,y,z,intensity\n");
    for p in &cloud.points {
        out.push_str(&format!("{},{},{},{}\n", p.x, p.y, p.z, p.intensity));
    }
    out
}

/// Axis-aligned box, bounds inclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Roi {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Roi {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|a| !(min[a] < max[a])) {
            return Err(Error::Config(format!(
                "region of interest needs min < max on every axis, got {min:?}..{max:?}"
            )));
        }
        Ok(Roi { min, max })
    }

    pub fn cube(half: f64) -> Self {
        Roi {
            min: [-half; 3],
            max: [half; 3],
        }
    }

    pub fn contains(&self, p: &PointRecord) -> bool {
        p.position()
            .iter()
            .enumerate()
            .all(|(a, v)| *v >= self.min[a] && *v <= self.max[a])
    }
}

/// Keeps points inside `roi` and, when `ground_z` is set, strictly above it.
pub fn crop_filter(cloud: &PointCloud, roi: &Roi, ground_z: Option<f64>) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .filter(|p| roi.contains(p) && ground_z.is_none_or(|g| p.z > g))
        .copied()
        .collect();
    cloud.with_points(points)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub frame_id: u64,
    pub timestamp: f64,
    pub position: [f64; 3],
}

/// Poses ordered by strictly increasing frame id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PoseTrack {
    entries: Vec<Pose>,
}

impl PoseTrack {
    pub fn new(entries: Vec<Pose>) -> Result<Self> {
        for pair in entries.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.frame_id == a.frame_id {
                return Err(Error::Format(format!("duplicate pose for frame {}", b.frame_id)));
            }
            if b.frame_id < a.frame_id {
                return Err(Error::Format(format!(
                    "pose frames out of order: {} after {}",
                    b.frame_id, a.frame_id
                )));
            }
            if b.timestamp < a.timestamp {
                return Err(Error::Format(format!(
                    "pose timestamps decrease at frame {}",
                    b.frame_id
                )));
            }
        }
        Ok(PoseTrack { entries })
    }

    pub fn entries(&self) -> &[Pose] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, frame_id: u64) -> Option<&Pose> {
        self.entries
            .binary_search_by_key(&frame_id, |p| p.frame_id)
            .ok()
            .map(|i| &self.entries[i])
    }
}

/// Parses a poses CSV with header `frame,timestamp,x,y,z`.
pub fn load_poses(text: &str) -> Result<PoseTrack> {
    let mut reader = csv_reader(text);
    let headers = reader.headers().map_err(|e| csv_error("poses CSV", e))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(PoseTrack::default());
    }
    let frame_col = column(&headers, "frame", "poses CSV")?;
    let ts_col = column(&headers, "timestamp", "poses CSV")?;
    let xyz = [
        column(&headers, "x", "poses CSV")?,
        column(&headers, "y", "poses CSV")?,
        column(&headers, "z", "poses CSV")?,
    ];
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error("poses CSV", e))?;
        let line = record.position().map_or(0, |p| p.line());
        let raw = record.get(frame_col).unwrap_or("");
        let frame_id: u64 = raw.parse().map_err(|_| {
            Error::parse(format!("line {line}"), format!("`{raw}` is not a frame number"))
        })?;
        let timestamp = field_f64(&record, ts_col, "timestamp")?;
        let position = [
            field_f64(&record, xyz[0], "x")?,
            field_f64(&record, xyz[1], "y")?,
            field_f64(&record, xyz[2], "z")?,
        ];
        entries.push(Pose {
            frame_id,
            timestamp,
            position,
        });
    }
    PoseTrack::new(entries)
}

pub fn serialize_poses(track: &PoseTrack) -> String {
    let mut out = String::from("frame,timestamp,x,y,z\n");
    for p in track.entries() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.frame_id, p.timestamp, p.position[0], p.position[1], p.position[2]
        ));
    }
    out
}

/// Vertical beam layout of a spinning LiDAR.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorProfile {
    pub name: String,
    /// Beam elevations in degrees, ascending.
    pub beam_elevations: Vec<f64>,
    pub max_range: f64,
}

impl SensorProfile {
    pub fn new(name: impl Into<String>, beam_elevations: Vec<f64>, max_range: f64) -> Result<Self> {
        if beam_elevations.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("beam elevations must be finite".into()));
        }
        if beam_elevations.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("beam elevations must be sorted ascending".into()));
        }
        if !(max_range > 0.0 && max_range.is_finite()) {
            return Err(Error::Config(format!("max_range must be positive, got {max_range}")));
        }
        Ok(SensorProfile {
            name: name.into(),
            beam_elevations,
            max_range,
        })
    }

    /// `n` beams evenly spaced over `[lowest, highest]` degrees.
    pub fn uniform(name: impl Into<String>, n: usize, lowest: f64, highest: f64, max_range: f64) -> Result<Self> {
        let beams = match n {
            0 => Vec::new(),
            1 => vec![lowest],
            _ => (0..n)
                .map(|k| lowest + (highest - lowest) * k as f64 / (n - 1) as f64)
                .collect(),
        };
        SensorProfile::new(name, beams, max_range)
    }

    pub fn num_beams(&self) -> usize {
        self.beam_elevations.len()
    }

    /// Index of the beam closest to `elevation_deg`, lowest index on ties.
    pub fn nearest_beam(&self, elevation_deg: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (k, g) in self.beam_elevations.iter().enumerate() {
            let d = (elevation_deg - g).abs();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        best.map(|(k, _)| k)
    }

    /// Parses `key=value` lines: `beams=<deg>,<deg>,...`, `max_range=<m>`,
    /// optional `name=` and `num_beams=` (checked against `beams`).
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut name = String::from("custom");
        let mut beams = None;
        let mut max_range = None;
        let mut num_beams = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("sensor profile line {}: expected key=value", n + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let loc = || format!("sensor profile line {}", n + 1);
            match key {
                "name" => name = value.to_string(),
                "beams" => {
                    let parsed: Result<Vec<f64>> = value
                        .split(',')
                        .map(|s| {
                            s.trim()
                                .parse::<f64>()
                                .map_err(|_| Error::parse(loc(), format!("bad beam angle `{s}`")))
                        })
                        .collect();
                    beams = Some(parsed?);
                }
                "max_range" => {
                    max_range = Some(
                        value
                            .parse::<f64>()
                            .map_err(|_| Error::parse(loc(), format!("bad max_range `{value}`")))?,
                    )
                }
                "num_beams" => {
                    num_beams = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| Error::parse(loc(), format!("bad num_beams `{value}`")))?,
                    )
                }
                other => {
                    return Err(Error::Format(format!("{}: unknown key `{other}`", loc())));
                }
            }
        }
        let beams = beams.ok_or_else(|| Error::Format("sensor profile: missing `beams`".into()))?;
        let max_range =
            max_range.ok_or_else(|| Error::Format("sensor profile: missing `max_range`".into()))?;
        if let Some(n) = num_beams {
            if n != beams.len() {
                return Err(Error::Format(format!(
                    "sensor profile: num_beams={n} but {} beam angles given",
                    beams.len()
                )));
            }
        }
        SensorProfile::new(name, beams, max_range)
    }

    pub fn serialize(&self) -> String {
        let beams: Vec<String> = self.beam_elevations.iter().map(|b| b.to_string()).collect();
        format!(
            "name={}\nnum_beams={}\nbeams={}\nmax_range={}\n",
            self.name,
            self.num_beams(),
            beams.join(","),
            self.max_range
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(v: [f32; 4]) -> Vec<u8> {
        v.iter().flat_map(|f| f.to_le_bytes()).collect()
    }

    #[test]
    fn kitti_single_point() {
        let cloud = parse_kitti_bin(&record([1.0, 2.0, 3.0, 0.5])).unwrap();
        assert_eq!(cloud.points, vec![PointRecord::new(1.0, 2.0, 3.0, 0.5)]);
    }

    #[test]
    fn kitti_empty_and_bad_length() {
        assert!(parse_kitti_bin(&[]).unwrap().is_empty());
        assert!(matches!(parse_kitti_bin(&[0u8; 17]), Err(Error::Format(_))));
    }

    #[test]
    fn kitti_nan_reports_point_index() {
        let mut bytes = record([0.0; 4]);
        bytes.extend(record([1.0, f32::NAN, 0.0, 0.0]));
        match parse_kitti_bin(&bytes) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "point 1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_cases() {
        let cloud = parse_csv("x,y,z,intensity\n1,0,0,0.2").unwrap();
        assert_eq!(cloud.points, vec![PointRecord::new(1.0, 0.0, 0.0, 0.2)]);
        assert!(parse_csv("x,y,z,intensity\n").unwrap().is_empty());
        assert!(matches!(parse_csv("x,y,z\n1,0,0"), Err(Error::Format(_))));
    }

    #[test]
    fn csv_bad_number_has_line() {
        match parse_csv("x,y,z,intensity\n1,0,0,0\n1,abc,0,0\n") {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "line 3"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn crop_ground_threshold() {
        let cloud = PointCloud::new(
            0,
            0.0,
            [-2.0, 0.0, 1.0]
                .iter()
                .map(|&z| PointRecord::new(0.0, 0.0, z, 0.0))
                .collect(),
        );
        let out = crop_filter(&cloud, &Roi::cube(100.0), Some(-1.5));
        let zs: Vec<f64> = out.points.iter().map(|p| p.z).collect();
        assert_eq!(zs, vec![0.0, 1.0]);
        assert_eq!(crop_filter(&cloud, &Roi::cube(100.0), None), cloud);
        let far = Roi::new([10.0; 3], [11.0; 3]).unwrap();
        assert!(crop_filter(&cloud, &far, None).is_empty());
    }

    #[test]
    fn roi_rejects_inverted_box() {
        assert!(Roi::new([0.0; 3], [0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn poses_cases() {
        let track = load_poses("frame,timestamp,x,y,z\n0,0.0,0,0,0\n1,0.1,1,0,0\n").unwrap();
        assert_eq!(track.len(), 2);
        assert_eq!(track.get(1).unwrap().position, [1.0, 0.0, 0.0]);
        assert!(matches!(
            load_poses("frame,timestamp,x,y,z\n1,0.0,0,0,0\n0,0.1,1,0,0\n"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            load_poses("frame,timestamp,x,y,z\n1,0.0,0,0,0\n1,0.1,1,0,0\n"),
            Err(Error::Format(_))
        ));
        assert!(load_poses("frame,timestamp,x,y,z\n").unwrap().is_empty());
        assert!(load_poses("").unwrap().is_empty());
    }

    #[test]
    fn profile_round_trip_and_nearest_beam() {
        let p = SensorProfile::parse("# test\nname=toy\nbeams=-10,0,10\nmax_range=80\n").unwrap();
        assert_eq!(p.num_beams(), 3);
        assert_eq!(SensorProfile::parse(&p.serialize()).unwrap(), p);
        assert_eq!(p.nearest_beam(90.0), Some(2));
        assert_eq!(p.nearest_beam(-5.0), Some(0));
        assert_eq!(p.nearest_beam(5.0), Some(1));
        assert!(SensorProfile::parse("beams=10,0\nmax_range=1").is_err());
        assert!(SensorProfile::parse("beams=0,1\nmax_range=1\nnum_beams=3").is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip(pts in prop::collection::vec(prop::array::uniform4(-1e4f32..1e4f32), 0..40)) {
            let cloud = PointCloud::new(0, 0.0, pts.iter()
                .map(|v| PointRecord::new(v[0] as f64, v[1] as f64, v[2] as f64, v[3].abs() as f64))
                .collect());
            let back = parse_csv(&serialize_csv(&cloud)).unwrap();
            prop_assert_eq!(back, cloud.clone());
            let bin = parse_kitti_bin(&to_kitti_bin(&cloud)).unwrap();
            prop_assert_eq!(bin, cloud);
        }

        #[test]
        fn crop_is_idempotent(
            pts in prop::collection::vec(prop::array::uniform3(-20.0f64..20.0), 0..60),
            half in 1.0f64..15.0,
            ground in prop::option::of(-5.0f64..5.0),
        ) {
            let cloud = PointCloud::new(0, 0.0, pts.iter().map(|v| PointRecord::new(v[0], v[1], v[2], 0.0)).collect());
            let roi = Roi::cube(half);
            let once = crop_filter(&cloud, &roi, ground);
            prop_assert_eq!(crop_filter(&once, &roi, ground), once);
        }
    }
}
