//! C ABI over `polarscan`.
//!
//! Objects cross the boundary as opaque handles created by `ps_*_new`-style
//! constructors and released with the matching `ps_*_free`. Every fallible
//! call returns a [`PsStatus`]; on failure [`ps_last_error_message`] describes
//! the most recent error on the calling thread. Output pointers are written
//! only on success. Panics are caught and reported as
//! `PS_STATUS_INTERNAL`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use polarscan::aggregation::{l2_normalize, mean_std_pool, GlobalDescriptor};
use polarscan::features::{baseline_encode, load_feature_map, FeatureMap};
use polarscan::metrics::{max_f1, pr_auc, pr_curve};
use polarscan::pointcloud::{
    estimate_curvature, parse_kitti_bin, PointCloud, PointRecord, Pose, PoseTrack, SensorProfile,
};
use polarscan::projection::{project, write_pprj, Channel, ProjectionConfig, ProjectionImage, ProjectionKind};
use polarscan::retrieval::{build_index, DescriptorIndex};
use polarscan::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Format = 3,
    Parse = 4,
    Degenerate = 5,
    Shape = 6,
    Lookup = 7,
    Join = 8,
    Validation = 9,
    Config = 10,
    Io = 11,
    Internal = 12,
}

pub const PS_KIND_BEV: u32 = 0;
pub const PS_KIND_POLAR: u32 = 1;
pub const PS_KIND_RANGE: u32 = 2;
pub const PS_KIND_FRONT: u32 = 3;

pub const PS_CHANNEL_HEIGHT: u32 = 0;
pub const PS_CHANNEL_RANGE: u32 = 1;
pub const PS_CHANNEL_INTENSITY: u32 = 2;
pub const PS_CHANNEL_CURVATURE: u32 = 3;

pub struct PsPointCloud(PointCloud);
pub struct PsSensorProfile(SensorProfile);
pub struct PsImage(ProjectionImage);
pub struct PsFeatureMap(FeatureMap);
pub struct PsDescriptor(GlobalDescriptor);
pub struct PsIndex(DescriptorIndex);

/// Projection settings. `out_height`/`out_width` of 0 keep the native grid.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct PsProjectionParams {
    /// One of the `PS_KIND_*` constants.
    pub kind: u32,
    pub height: usize,
    pub width: usize,
    pub out_height: usize,
    pub out_width: usize,
    /// Range channel divisor in meters.
    pub max_range: f64,
    /// Front-view field of view in radians.
    pub fov_min: f64,
    pub fov_max: f64,
    /// `PS_CHANNEL_*` codes in output order.
    pub channels: *const u32,
    pub n_channels: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: PsStatus,
    message: String,
}

impl Failure {
    fn new(status: PsStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Format(_) => PsStatus::Format,
            Error::Parse { .. } => PsStatus::Parse,
            Error::Degenerate(_) => PsStatus::Degenerate,
            Error::Shape(_) => PsStatus::Shape,
            Error::Lookup { .. } => PsStatus::Lookup,
            Error::Join(_) => PsStatus::Join,
            Error::Validation(_) => PsStatus::Validation,
            Error::Config(_) => PsStatus::Config,
            Error::Io { .. } => PsStatus::Io,
        };
        Failure::new(status, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PsStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(_) => {
            set_last_error("internal panic");
            PsStatus::Internal
        }
    }
}

unsafe fn reference<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, Failure> {
    ptr.as_ref()
        .ok_or_else(|| Failure::new(PsStatus::NullArgument, format!("`{name}` is null")))
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::new(PsStatus::NullArgument, format!("`{name}` is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Failure::new(PsStatus::NullArgument, format!("`{name}` is null")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(PsStatus::NullArgument, "output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(handle: *mut T) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn ps_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Decodes a KITTI `.bin` blob (little-endian float32 x, y, z, intensity).
#[no_mangle]
pub unsafe extern "C" fn ps_cloud_from_kitti(
    data: *const u8,
    len: usize,
    frame_id: u64,
    out: *mut *mut PsPointCloud,
) -> PsStatus {
    guard(|| {
        let mut cloud = parse_kitti_bin(slice(data, len, "data")?)?;
        cloud.frame_id = frame_id;
        emit(out, PsPointCloud(cloud))
    })
}

/// Builds a cloud from `n_points` interleaved `x, y, z, intensity` doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_cloud_from_points(
    xyzi: *const f64,
    n_points: usize,
    frame_id: u64,
    out: *mut *mut PsPointCloud,
) -> PsStatus {
    guard(|| {
        let values = slice(xyzi, n_points * 4, "xyzi")?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Failure::new(PsStatus::Parse, format!("point {} is not finite", i / 4)));
        }
        let points = values
            .chunks_exact(4)
            .map(|p| PointRecord::new(p[0], p[1], p[2], p[3]))
            .collect();
        emit(out, PsPointCloud(PointCloud::new(frame_id, 0.0, points)))
    })
}

#[no_mangle]
pub unsafe extern "C" fn ps_cloud_len(cloud: *const PsPointCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// Replaces every point's curvature with the normalized estimate over `k`
/// nearest neighbours.
#[no_mangle]
pub unsafe extern "C" fn ps_cloud_estimate_curvature(cloud: *mut PsPointCloud, k: usize) -> PsStatus {
    guard(|| {
        let c = cloud
            .as_mut()
            .ok_or_else(|| Failure::new(PsStatus::NullArgument, "`cloud` is null"))?;
        c.0 = estimate_curvature(&c.0, k)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ps_cloud_free(cloud: *mut PsPointCloud) {
    release(cloud)
}

/// Sensor profile from beam elevations in degrees (ascending).
#[no_mangle]
pub unsafe extern "C" fn ps_profile_new(
    elevations_deg: *const f64,
    n_beams: usize,
    max_range: f64,
    out: *mut *mut PsSensorProfile,
) -> PsStatus {
    guard(|| {
        let beams = slice(elevations_deg, n_beams, "elevations_deg")?.to_vec();
        emit(out, PsSensorProfile(SensorProfile::new("ffi", beams, max_range)?))
    })
}

/// Parses a `key=value` sensor profile (`beams=...`, `max_range=...`).
#[no_mangle]
pub unsafe extern "C" fn ps_profile_parse(text: *const c_char, out: *mut *mut PsSensorProfile) -> PsStatus {
    guard(|| {
        if text.is_null() {
            return Err(Failure::new(PsStatus::NullArgument, "`text` is null"));
        }
        let text = CStr::from_ptr(text)
            .to_str()
            .map_err(|_| Failure::new(PsStatus::InvalidArgument, "`text` is not UTF-8"))?;
        emit(out, PsSensorProfile(SensorProfile::parse(text)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn ps_profile_free(profile: *mut PsSensorProfile) {
    release(profile)
}

fn projection_config(p: &PsProjectionParams, channels: &[u32]) -> Result<ProjectionConfig, Failure> {
    let kind = u8::try_from(p.kind)
        .ok()
        .and_then(|k| ProjectionKind::from_code(k).ok())
        .ok_or_else(|| Failure::new(PsStatus::Lookup, format!("unknown projection kind {}", p.kind)))?;
    let channels = channels
        .iter()
        .map(|&c| {
            Channel::ALL
                .get(c as usize)
                .copied()
                .ok_or_else(|| Failure::new(PsStatus::Lookup, format!("unknown channel code {c}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut cfg = ProjectionConfig::new(kind, p.height, p.width, channels);
    cfg.max_range = p.max_range;
    if kind == ProjectionKind::Front {
        cfg.fov = (p.fov_min, p.fov_max);
    }
    Ok(cfg)
}

/// Projects `cloud` into an image. `profile` may be NULL for BEV and POLAR.
#[no_mangle]
pub unsafe extern "C" fn ps_project(
    cloud: *const PsPointCloud,
    profile: *const PsSensorProfile,
    params: *const PsProjectionParams,
    out: *mut *mut PsImage,
) -> PsStatus {
    guard(|| {
        let cloud = reference(cloud, "cloud")?;
        let p = reference(params, "params")?;
        let mut cfg = projection_config(p, slice(p.channels, p.n_channels, "params.channels")?)?;
        let fallback;
        let profile = match profile.as_ref() {
            Some(pr) => &pr.0,
            None => {
                fallback = SensorProfile::new("unspecified", Vec::new(), cfg.max_range)?;
                &fallback
            }
        };
        cfg.output_size = if p.out_height == 0 || p.out_width == 0 {
            polarscan::projection::native_size(profile, &cfg)
        } else {
            (p.out_height, p.out_width)
        };
        emit(out, PsImage(project(&cloud.0, profile, &cfg)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn ps_image_shape(
    image: *const PsImage,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> PsStatus {
    guard(|| {
        let img = &reference(image, "image")?.0;
        if height.is_null() || width.is_null() || channels.is_null() {
            return Err(Failure::new(PsStatus::NullArgument, "shape output pointer is null"));
        }
        *height = img.height;
        *width = img.width;
        *channels = img.num_channels();
        Ok(())
    })
}

/// Copies `height·width·channels` values (row-major, channels interleaved).
#[no_mangle]
pub unsafe extern "C" fn ps_image_copy_data(image: *const PsImage, buffer: *mut f32, len: usize) -> PsStatus {
    guard(|| {
        let img = &reference(image, "image")?.0;
        if len != img.data.len() {
            return Err(Failure::new(
                PsStatus::Shape,
                format!("buffer holds {len} values, image has {}", img.data.len()),
            ));
        }
        slice_mut(buffer, len, "buffer")?.copy_from_slice(&img.data);
        Ok(())
    })
}

/// Serializes the image as PPRJ into a buffer released with [`ps_buffer_free`].
#[no_mangle]
pub unsafe extern "C" fn ps_image_to_pprj(image: *const PsImage, data: *mut *mut u8, len: *mut usize) -> PsStatus {
    guard(|| {
        let img = &reference(image, "image")?.0;
        if data.is_null() || len.is_null() {
            return Err(Failure::new(PsStatus::NullArgument, "output pointer is null"));
        }
        let bytes = write_pprj(img)?.into_boxed_slice();
        *len = bytes.len();
        *data = Box::into_raw(bytes).cast();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ps_buffer_free(data: *mut u8, len: usize) {
    if !data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(data, len)));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ps_image_free(image: *mut PsImage) {
    release(image)
}

#[no_mangle]
pub unsafe extern "C" fn ps_baseline_encode(
    image: *const PsImage,
    patch: usize,
    c_out: usize,
    out: *mut *mut PsFeatureMap,
) -> PsStatus {
    guard(|| {
        let img = &reference(image, "image")?.0;
        emit(out, PsFeatureMap(baseline_encode(img, patch, c_out)?))
    })
}

/// Decodes a PFEA blob written by an external backbone.
#[no_mangle]
pub unsafe extern "C" fn ps_feature_map_load(data: *const u8, len: usize, out: *mut *mut PsFeatureMap) -> PsStatus {
    guard(|| emit(out, PsFeatureMap(load_feature_map(slice(data, len, "data")?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn ps_feature_map_shape(
    map: *const PsFeatureMap,
    c: *mut usize,
    h: *mut usize,
    w: *mut usize,
) -> PsStatus {
    guard(|| {
        let fm = &reference(map, "map")?.0;
        if c.is_null() || h.is_null() || w.is_null() {
            return Err(Failure::new(PsStatus::NullArgument, "shape output pointer is null"));
        }
        *c = fm.c;
        *h = fm.h;
        *w = fm.w;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ps_feature_map_free(map: *mut PsFeatureMap) {
    release(map)
}

/// Mean and standard deviation pooling, optionally L2-normalized.
#[no_mangle]
pub unsafe extern "C" fn ps_mean_std_descriptor(
    map: *const PsFeatureMap,
    normalize: bool,
    out: *mut *mut PsDescriptor,
) -> PsStatus {
    guard(|| {
        let g = mean_std_pool(&reference(map, "map")?.0);
        emit(out, PsDescriptor(if normalize { l2_normalize(&g) } else { g }))
    })
}

#[no_mangle]
pub unsafe extern "C" fn ps_descriptor_dim(descriptor: *const PsDescriptor) -> usize {
    descriptor.as_ref().map_or(0, |d| d.0.dim())
}

#[no_mangle]
pub unsafe extern "C" fn ps_descriptor_copy(descriptor: *const PsDescriptor, buffer: *mut f64, len: usize) -> PsStatus {
    guard(|| {
        let d = &reference(descriptor, "descriptor")?.0;
        if len != d.dim() {
            return Err(Failure::new(
                PsStatus::Shape,
                format!("buffer holds {len} values, descriptor has {}", d.dim()),
            ));
        }
        slice_mut(buffer, len, "buffer")?.copy_from_slice(&d.values);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ps_descriptor_free(descriptor: *mut PsDescriptor) {
    release(descriptor)
}

/// Exact L2 index over `n` row-major descriptors of length `dim`, with one
/// frame id, timestamp and `x, y, z` position per row.
#[no_mangle]
pub unsafe extern "C" fn ps_index_new(
    values: *const f64,
    n: usize,
    dim: usize,
    frame_ids: *const u64,
    timestamps: *const f64,
    positions: *const f64,
    out: *mut *mut PsIndex,
) -> PsStatus {
    guard(|| {
        let values = slice(values, n * dim, "values")?;
        let frames = slice(frame_ids, n, "frame_ids")?;
        let times = slice(timestamps, n, "timestamps")?;
        let pos = slice(positions, n * 3, "positions")?;
        let descriptors: Vec<GlobalDescriptor> = frames
            .iter()
            .enumerate()
            .map(|(i, &f)| GlobalDescriptor::new(values[i * dim..(i + 1) * dim].to_vec(), f))
            .collect();
        let poses = PoseTrack::new(
            frames
                .iter()
                .enumerate()
                .map(|(i, &f)| Pose {
                    frame_id: f,
                    timestamp: times[i],
                    position: [pos[3 * i], pos[3 * i + 1], pos[3 * i + 2]],
                })
                .collect(),
        )?;
        emit(out, PsIndex(build_index(&descriptors, &poses)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn ps_index_len(index: *const PsIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.len())
}

/// Writes up to `k` nearest rows and distances, ascending; `count` receives
/// how many were written.
#[no_mangle]
pub unsafe extern "C" fn ps_index_search(
    index: *const PsIndex,
    query: *const f64,
    dim: usize,
    k: usize,
    rows: *mut usize,
    distances: *mut f64,
    count: *mut usize,
) -> PsStatus {
    guard(|| {
        let idx = &reference(index, "index")?.0;
        if count.is_null() {
            return Err(Failure::new(PsStatus::NullArgument, "`count` is null"));
        }
        let result = idx.search_topk(slice(query, dim, "query")?, k, None)?;
        let n = result.ids.len();
        slice_mut(rows, n, "rows")?.copy_from_slice(&result.ids);
        slice_mut(distances, n, "distances")?.copy_from_slice(&result.distances);
        *count = n;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ps_index_free(index: *mut PsIndex) {
    release(index)
}

/// max-F1 and PR-AUC of top-1 distances with 0/1 labels.
#[no_mangle]
pub unsafe extern "C" fn ps_pr_summary(
    distances: *const f64,
    labels: *const u8,
    n: usize,
    max_f1_out: *mut f64,
    auc_out: *mut f64,
) -> PsStatus {
    guard(|| {
        let d = slice(distances, n, "distances")?;
        let l: Vec<bool> = slice(labels, n, "labels")?.iter().map(|&b| b != 0).collect();
        if max_f1_out.is_null() || auc_out.is_null() {
            return Err(Failure::new(PsStatus::NullArgument, "output pointer is null"));
        }
        let curve = pr_curve(d, &l)?;
        let (f, a) = (max_f1(&curve)?, pr_auc(&curve)?);
        *max_f1_out = f;
        *auc_out = a;
        Ok(())
    })
}
