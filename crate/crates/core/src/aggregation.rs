//! Global descriptors from token grids.
//!
//! Two heads are provided: first/second order pooling ([`mean_std_pool`]) and
//! soft-assignment residual aggregation ([`vlad_aggregate`]). Retrieval
//! compares [`l2_normalize`]d descriptors.
//!
//! `PDSC` layout (little-endian): magic `PDSC`, `u32` version, `u32` N,
//! `u32` L, `u8` normalized flag, `N × u64` frame ids, `N·L` `f32` row-major.
//! `PVLD` codebook layout: magic `PVLD`, `u32` K, `u32` c, `f32` alpha,
//! `K·c` `f32` centers.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{dim_u32, put_f32, put_u32, put_u64, Reader};
use crate::features::{flatten_tokens, FeatureMap};
use crate::{Error, Result};

pub const PDSC_VERSION: u32 = 1;
pub const DEFAULT_ALPHA: f64 = 10.0;
pub const KMEANS_MAX_ITERATIONS: usize = 50;
pub const KMEANS_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalDescriptor {
    pub values: Vec<f64>,
    /// Set only when `values` was scaled to unit length.
    pub normalized: bool,
    pub frame_id: u64,
}

impl GlobalDescriptor {
    pub fn new(values: Vec<f64>, frame_id: u64) -> Self {
        GlobalDescriptor {
            values,
            normalized: false,
            frame_id,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Per-channel mean followed by per-channel population standard deviation,
/// `L = 2c`.
pub fn mean_std_pool(fm: &FeatureMap) -> GlobalDescriptor {
    let n = fm.num_tokens();
    let mut values = vec![0.0; 2 * fm.c];
    if n == 0 {
        return GlobalDescriptor::new(values, fm.frame_id);
    }
    for c in 0..fm.c {
        let plane = &fm.data[c * n..(c + 1) * n];
        let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        values[c] = mean;
        values[fm.c + c] = var.sqrt();
    }
    GlobalDescriptor::new(values, fm.frame_id)
}

/// Unit-length copy of `g`. A zero vector is returned unchanged with
/// `normalized = false`.
pub fn l2_normalize(g: &GlobalDescriptor) -> GlobalDescriptor {
    let norm = g.norm();
    if norm == 0.0 || !norm.is_finite() {
        return GlobalDescriptor {
            normalized: false,
            ..g.clone()
        };
    }
    GlobalDescriptor {
        values: g.values.iter().map(|v| v / norm).collect(),
        normalized: true,
        frame_id: g.frame_id,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VladCodebook {
    centers: Vec<Vec<f64>>,
    alpha: f64,
}

impl VladCodebook {
    pub fn new(centers: Vec<Vec<f64>>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("assignment sharpness must be finite and positive, got {alpha}")));
        }
        let dim = centers.first().map_or(0, Vec::len);
        if centers.is_empty() || dim == 0 {
            return Err(Error::Config("codebook needs at least one non-empty center".into()));
        }
        if centers.iter().any(|c| c.len() != dim) {
            return Err(Error::Shape("codebook centers have differing dimensions".into()));
        }
        if centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("codebook center is not finite".into()));
        }
        for (i, c) in centers.iter().enumerate() {
            if let Some(j) = centers[..i].iter().position(|o| o == c) {
                return Err(Error::Validation(format!("codebook centers {j} and {i} are identical")));
            }
        }
        Ok(VladCodebook { centers, alpha })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// Softmax over `-alpha · ‖token − c_k‖²`.
    pub fn soft_assign(&self, token: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .centers
            .iter()
            .map(|c| -self.alpha * sq_dist(token, c))
            .collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-cluster residual sums `Σ_t a_k(f_t)(f_t − c_k)` before any
/// normalization, one block per center.
pub fn vlad_residuals(fm: &FeatureMap, cb: &VladCodebook) -> Result<Vec<Vec<f64>>> {
    Ok(residuals_with_mass(fm, cb)?.0)
}

/// Residual blocks plus, per block, `Σ_t a_k ‖f_t − c_k‖` (the magnitude the
/// residuals could have had without cancellation).
fn residuals_with_mass(fm: &FeatureMap, cb: &VladCodebook) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if cb.dim() != fm.c {
        return Err(Error::Shape(format!(
            "codebook dimension {} does not match feature channels {}",
            cb.dim(),
            fm.c
        )));
    }
    let mut blocks = vec![vec![0.0; fm.c]; cb.k()];
    let mut mass = vec![0.0; cb.k()];
    for token in flatten_tokens(fm) {
        let weights = cb.soft_assign(&token);
        for (k, (center, a)) in cb.centers.iter().zip(weights).enumerate() {
            if a == 0.0 {
                continue;
            }
            let mut len2 = 0.0;
            for ((slot, f), c) in blocks[k].iter_mut().zip(&token).zip(center) {
                let r = f - c;
                *slot += a * r;
                len2 += r * r;
            }
            mass[k] += a * len2.sqrt();
        }
    }
    Ok((blocks, mass))
}

/// Residual aggregation with per-cluster L2 normalization, `L = K·c`.
///
/// A block whose residuals cancel (norm at rounding level relative to the
/// summed residual magnitude) is emitted as zeros.
pub fn vlad_aggregate(fm: &FeatureMap, cb: &VladCodebook) -> Result<GlobalDescriptor> {
    let (blocks, mass) = residuals_with_mass(fm, cb)?;
    let mut values = Vec::with_capacity(cb.k() * fm.c);
    for (block, m) in blocks.into_iter().zip(mass) {
        let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || norm <= 1e-10 * m {
            values.extend(std::iter::repeat_n(0.0, block.len()));
        } else {
            values.extend(block.iter().map(|v| v / norm));
        }
    }
    Ok(GlobalDescriptor::new(values, fm.frame_id))
}

/// Seeded k-means (k-means++ seeding, then Lloyd iterations until centers
/// move less than [`KMEANS_TOLERANCE`] or [`KMEANS_MAX_ITERATIONS`] pass).
pub fn init_codebook(sample: &[Vec<f64>], k: usize, seed: u64, alpha: f64) -> Result<VladCodebook> {
    if k == 0 {
        return Err(Error::Config("codebook needs K >= 1".into()));
    }
    if sample.len() < k {
        return Err(Error::Degenerate(format!(
            "k-means needs at least {k} samples, got {}",
            sample.len()
        )));
    }
    let dim = sample[0].len();
    if sample.iter().any(|s| s.len() != dim) {
        return Err(Error::Shape("token sample has differing dimensions".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![sample[rng.random_range(0..sample.len())].clone()];
    let mut d2: Vec<f64> = sample.iter().map(|s| sq_dist(s, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate(format!(
                "token sample has fewer than {k} distinct vectors"
            )));
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap();
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let chosen = sample[pick].clone();
        for (d, s) in d2.iter_mut().zip(sample) {
            *d = d.min(sq_dist(s, &chosen));
        }
        centers.push(chosen);
    }

    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for s in sample {
            let best = nearest_center(s, &centers);
            counts[best] += 1;
            for (acc, v) in sums[best].iter_mut().zip(s) {
                *acc += v;
            }
        }
        let mut shift = 0.0f64;
        for ((center, sum), &n) in centers.iter_mut().zip(sums).zip(&counts) {
            if n == 0 {
                continue;
            }
            let next: Vec<f64> = sum.iter().map(|v| v / n as f64).collect();
            shift = shift.max(sq_dist(center, &next).sqrt());
            *center = next;
        }
        if shift < KMEANS_TOLERANCE {
            break;
        }
    }
    VladCodebook::new(centers, alpha)
}

fn nearest_center(x: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

pub fn write_descriptors(descriptors: &[GlobalDescriptor]) -> Result<Vec<u8>> {
    let l = descriptors.first().map_or(0, GlobalDescriptor::dim);
    if let Some(bad) = descriptors.iter().find(|d| d.dim() != l) {
        return Err(Error::Shape(format!(
            "frame {} has descriptor length {}, expected {l}",
            bad.frame_id,
            bad.dim()
        )));
    }
    let normalized = !descriptors.is_empty() && descriptors.iter().all(|d| d.normalized);
    let mut out = Vec::with_capacity(17 + descriptors.len() * (8 + 4 * l));
    out.extend_from_slice(b"PDSC");
    put_u32(&mut out, PDSC_VERSION);
    put_u32(&mut out, dim_u32(descriptors.len(), "N")?);
    put_u32(&mut out, dim_u32(l, "L")?);
    out.push(normalized as u8);
    for d in descriptors {
        put_u64(&mut out, d.frame_id);
    }
    for d in descriptors {
        for &v in &d.values {
            put_f32(&mut out, v as f32);
        }
    }
    Ok(out)
}

pub fn read_descriptors(bytes: &[u8]) -> Result<Vec<GlobalDescriptor>> {
    let mut r = Reader::new(bytes, "PDSC");
    r.magic(b"PDSC")?;
    let version = r.u32()?;
    if version != PDSC_VERSION {
        return Err(Error::Format(format!("PDSC: unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let l = r.u32()? as usize;
    let normalized = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("PDSC: bad normalized flag {other}"))),
    };
    let frame_ids: Vec<u64> = (0..n).map(|_| r.u64()).collect::<Result<_>>()?;
    let total = n
        .checked_mul(l)
        .ok_or_else(|| Error::Format("PDSC: size overflow".into()))?;
    let values = r.f32s(total)?;
    r.finish()?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("PDSC: value at index {i} is not finite")));
    }
    Ok(frame_ids
        .into_iter()
        .enumerate()
        .map(|(i, frame_id)| GlobalDescriptor {
            values: values[i * l..(i + 1) * l].iter().map(|&v| v as f64).collect(),
            normalized,
            frame_id,
        })
        .collect())
}

pub fn write_codebook(cb: &VladCodebook) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + cb.k() * cb.dim() * 4);
    out.extend_from_slice(b"PVLD");
    put_u32(&mut out, dim_u32(cb.k(), "K")?);
    put_u32(&mut out, dim_u32(cb.dim(), "c")?);
    put_f32(&mut out, cb.alpha as f32);
    for c in &cb.centers {
        for &v in c {
            put_f32(&mut out, v as f32);
        }
    }
    Ok(out)
}

pub fn read_codebook(bytes: &[u8]) -> Result<VladCodebook> {
    let mut r = Reader::new(bytes, "PVLD");
    r.magic(b"PVLD")?;
    let k = r.u32()? as usize;
    let c = r.u32()? as usize;
    let alpha = r.f32()? as f64;
    let flat = r.f32s(k.checked_mul(c).ok_or_else(|| Error::Format("PVLD: size overflow".into()))?)?;
    r.finish()?;
    let centers = flat
        .chunks(c.max(1))
        .take(k)
        .map(|ch| ch.iter().map(|&v| v as f64).collect())
        .collect();
    VladCodebook::new(centers, alpha)
}
