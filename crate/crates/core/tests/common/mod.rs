//! Synthetic data shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use polarscan::pointcloud::{serialize_poses, to_kitti_bin, PointCloud, PointRecord, Pose, PoseTrack};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Loop length in meters. The vehicle moves 1 m per frame, so a place seen at
/// frame `i` is seen again at `i + 210`, beyond the 200-frame intra offset.
pub const LOOP_LENGTH: f64 = 210.0;
pub const SENSOR_RANGE: f64 = 40.0;
pub const SENSOR_HEIGHT: f64 = 1.7;

/// Static world: vertical poles scattered on both sides of a circular road.
pub fn scene(seed: u64) -> Vec<PointRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = LOOP_LENGTH / (2.0 * PI);
    let mut pts = Vec::new();
    for _ in 0..260 {
        let a = rng.random_range(0.0..2.0 * PI);
        let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let rho = radius + side * rng.random_range(4.0..25.0);
        let (cx, cy) = (rho * a.cos(), rho * a.sin());
        let height = rng.random_range(1.0..6.0);
        let width = rng.random_range(0.2..1.5);
        let intensity = rng.random_range(0.05..1.0);
        let mut z = 0.0;
        while z <= height {
            for k in 0..4 {
                let phi = k as f64 * PI / 2.0;
                pts.push(PointRecord::new(cx + width * phi.cos(), cy + width * phi.sin(), z, intensity));
            }
            z += 0.4;
        }
    }
    pts
}

pub fn pose_at(frame: usize) -> Pose {
    let radius = LOOP_LENGTH / (2.0 * PI);
    let a = (frame as f64 % LOOP_LENGTH) / radius;
    Pose {
        frame_id: frame as u64,
        timestamp: frame as f64 * 0.1,
        position: [radius * a.cos(), radius * a.sin(), 0.0],
    }
}

/// Sensor-frame scan of `world` from the pose of `frame`, with seeded jitter.
pub fn scan(world: &[PointRecord], frame: usize, seed: u64) -> PointCloud {
    let pose = pose_at(frame);
    let radius = LOOP_LENGTH / (2.0 * PI);
    let heading = (frame as f64 % LOOP_LENGTH) / radius + PI / 2.0;
    let (s, c) = heading.sin_cos();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (frame as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut jitter = || rng.random_range(-0.02..0.02);
    let points = world
        .iter()
        .filter_map(|p| {
            let dx = p.x - pose.position[0];
            let dy = p.y - pose.position[1];
            if dx * dx + dy * dy > SENSOR_RANGE * SENSOR_RANGE {
                return None;
            }
            let x = c * dx + s * dy + jitter();
            let y = -s * dx + c * dy + jitter();
            Some(PointRecord::new(x, y, p.z - SENSOR_HEIGHT + jitter(), p.intensity))
        })
        .collect();
    PointCloud::new(frame as u64, pose.timestamp, points)
}

pub fn poses(frames: usize) -> PoseTrack {
    PoseTrack::new((0..frames).map(pose_at).collect()).unwrap()
}

pub fn synthetic_loop(frames: usize, seed: u64) -> (Vec<PointCloud>, PoseTrack) {
    let world = scene(seed);
    ((0..frames).map(|f| scan(&world, f, seed)).collect(), poses(frames))
}

/// Writes `<dir>/clouds/%06d.bin` and `<dir>/poses.csv`.
pub fn write_dataset(dir: &Path, frames: usize, seed: u64) {
    let (clouds, track) = synthetic_loop(frames, seed);
    let cloud_dir = dir.join("clouds");
    fs::create_dir_all(&cloud_dir).unwrap();
    for cloud in &clouds {
        fs::write(cloud_dir.join(format!("{:06}.bin", cloud.frame_id)), to_kitti_bin(cloud)).unwrap();
    }
    fs::write(dir.join("poses.csv"), serialize_poses(&track)).unwrap();
}
