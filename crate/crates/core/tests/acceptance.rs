//! Acceptance suite: one line per criterion, non-zero exit if any fails.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use polarscan::aggregation::{mean_std_pool, read_descriptors, vlad_aggregate, GlobalDescriptor, VladCodebook};
use polarscan::features::{FeatureMap, FeatureSource};
use polarscan::metrics::{max_f1, pr_auc, pr_curve, PRPoint};
use polarscan::pointcloud::{raw_curvature, PointCloud, PointRecord, Pose, PoseTrack, SensorProfile};
use polarscan::projection::{pixel_coordinates, project, Channel, Extent, ProjectionConfig, ProjectionKind};
use polarscan::retrieval::{build_index, run_regime, GroundTruthConfig, RegimeConfig, TemporalUnit};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn cloud(pts: &[[f64; 3]]) -> PointCloud {
    PointCloud::new(0, 0.0, pts.iter().map(|p| PointRecord::new(p[0], p[1], p[2], 0.5)).collect())
}

fn projection_formulas() -> Check {
    let profile = SensorProfile::new("toy", vec![-10.0, 0.0, 10.0], 100.0).map_err(|e| e.to_string())?;
    let px = |kind, h, w, pts: &[[f64; 3]], fov: Option<(f64, f64)>| {
        let mut cfg = ProjectionConfig::new(kind, h, w, vec![Channel::Range]);
        if let Some(f) = fov {
            cfg.fov = f;
        }
        pixel_coordinates(&cloud(pts), &profile, &cfg).map_err(|e| e.to_string())
    };

    let range = px(ProjectionKind::Range, 1, 64, &[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 1.0]], None)?;
    ensure!(range == vec![Some((1, 32)), Some((2, 32)), Some((2, 16))], "range pixels {range:?}");

    let bev = px(
        ProjectionKind::Bev,
        4,
        4,
        &[[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 5.0, 0.0], [10.0, 5.0, 0.0]],
        None,
    )?;
    ensure!(bev == vec![Some((0, 0)), Some((3, 0)), Some((0, 3)), Some((3, 3))], "bev pixels {bev:?}");

    // Polar: evaluate the mapping with scalar arithmetic and compare.
    let pts = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]];
    let polar = px(ProjectionKind::Polar, 3, 4, &pts, None)?;
    let r: Vec<f64> = pts.iter().map(|p| p[0].hypot(p[1])).collect();
    let t: Vec<f64> = pts.iter().map(|p| p[1].atan2(p[0])).collect();
    let (rmax, tmin, tmax) = (2f64.sqrt(), -PI / 2.0, PI / 4.0);
    let oracle: Vec<Option<(usize, usize)>> = (0..3)
        .map(|i| Some(((r[i] / rmax * 2.0).floor() as usize, ((t[i] - tmin) / (tmax - tmin) * 3.0).floor() as usize)))
        .collect();
    ensure!(polar == oracle, "polar pixels {polar:?}, oracle {oracle:?}");
    ensure!(polar[2] == Some((2, 3)) && polar[1] == Some((1, 2)), "polar example pixels {polar:?}");

    let front = px(
        ProjectionKind::Front,
        1,
        8,
        &[[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, -2.0, 0.0]],
        Some((-PI / 4.0, PI / 4.0)),
    )?;
    ensure!(front == vec![Some((1, 4)), Some((1, 7)), None], "front pixels {front:?}");
    Ok("range, bev, polar and front examples exact".into())
}

fn polar_shift() -> Check {
    let w = 360;
    let h = 8;
    let bin = 2.0 * PI / w as f64;
    let centers: Vec<f64> = (0..w).map(|j| -PI + (j as f64 + 0.5) * bin).collect();
    let ring = |m: usize| {
        let points = (0..w)
            .map(|k| {
                let r = 0.5 + ((k * 7) % h) as f64;
                let t = centers[(k + m) % w];
                PointRecord::new(r * t.cos(), r * t.sin(), (k as f64).sin(), (k % 13) as f64 / 13.0)
            })
            .collect();
        PointCloud::new(0, 0.0, points)
    };
    let mut cfg = ProjectionConfig::new(ProjectionKind::Polar, h, w, vec![Channel::Height, Channel::Range, Channel::Intensity]);
    cfg.extent = Extent::Fixed { rows: (0.0, h as f64), cols: (-PI, PI) };
    cfg.max_range = 10.0;
    let profile = SensorProfile::new("none", vec![0.0], 10.0).map_err(|e| e.to_string())?;
    let base = project(&ring(0), &profile, &cfg).map_err(|e| e.to_string())?;
    ensure!(base.mask.iter().filter(|&&f| f).count() == w, "ring should fill one pixel per column");
    for m in [1, 7, 180] {
        let rot = project(&ring(m), &profile, &cfg).map_err(|e| e.to_string())?;
        for row in 0..h {
            for col in 0..w {
                let shifted = (col + m) % w;
                ensure!(
                    rot.filled(row, shifted) == base.filled(row, col),
                    "m={m}: mask differs at ({row},{col})"
                );
                for ch in 0..3 {
                    ensure!(
                        rot.get(row, shifted, ch).to_bits() == base.get(row, col, ch).to_bits(),
                        "m={m}: channel {ch} differs at ({row},{col})"
                    );
                }
            }
        }
    }
    Ok("m = 1, 7, 180 bit-exact circular shifts".into())
}

fn rotation(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = axis.map(|a| a / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn curvature_analytics() -> Check {
    let plane: Vec<[f64; 3]> = (0..9).map(|i| [(i % 3) as f64, (i / 3) as f64, 0.0]).collect();
    let k_plane = raw_curvature(&cloud(&plane), 8).map_err(|e| e.to_string())?;
    let worst_plane = k_plane.iter().cloned().fold(0.0, f64::max);
    ensure!(worst_plane <= 1e-12, "plane curvature {worst_plane}");

    let mut cube: Vec<[f64; 3]> = (0..8)
        .map(|i| [(i & 1) as f64 - 0.5, ((i >> 1) & 1) as f64 - 0.5, ((i >> 2) & 1) as f64 - 0.5])
        .collect();
    cube.push([0.0, 0.0, 0.0]);
    let k_cube = raw_curvature(&cloud(&cube), 8).map_err(|e| e.to_string())?;
    let corner_err = (k_cube[8] - 1.0 / 3.0).abs();
    ensure!(corner_err <= 1e-9, "cube centre curvature {} (error {corner_err:e})", k_cube[8]);

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pts: Vec<[f64; 3]> = (0..600)
        .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)])
        .collect();
    let before = raw_curvature(&cloud(&pts), 10).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for trial in 0..5 {
        let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let r = rotation(axis, 0.3 + trial as f64);
        let rotated: Vec<[f64; 3]> = pts
            .iter()
            .map(|p| [0, 1, 2].map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]))
            .collect();
        let after = raw_curvature(&cloud(&rotated), 10).map_err(|e| e.to_string())?;
        for (a, b) in before.iter().zip(&after) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure!(worst <= 1e-9, "rotation changed curvature by {worst:e}");
    ensure!(
        before.iter().all(|&k| (0.0..=1.0 / 3.0 + 1e-12).contains(&k)),
        "curvature outside [0, 1/3]"
    );
    Ok(format!("plane max {worst_plane:.1e}, corner error {corner_err:.1e}, rotation drift {worst:.1e}"))
}

fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    let data = (0..c * h * w).map(|_| rng.random_range(-3.0f32..3.0)).collect();
    FeatureMap::new(c, h, w, data, 0, FeatureSource::External).unwrap()
}

fn vlad_oracle(fm: &FeatureMap, centers: &[Vec<f64>], alpha: f64) -> Vec<f64> {
    let (k, c) = (centers.len(), fm.c);
    let mut g = vec![vec![0.0; c]; k];
    for i in 0..fm.h {
        for j in 0..fm.w {
            let f: Vec<f64> = (0..c).map(|ch| fm.at(ch, i, j) as f64).collect();
            let d2: Vec<f64> = centers
                .iter()
                .map(|ck| f.iter().zip(ck).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            let lo = d2.iter().cloned().fold(f64::INFINITY, f64::min);
            let e: Vec<f64> = d2.iter().map(|d| (-alpha * (d - lo)).exp()).collect();
            let z: f64 = e.iter().sum();
            for kk in 0..k {
                for ch in 0..c {
                    g[kk][ch] += e[kk] / z * (f[ch] - centers[kk][ch]);
                }
            }
        }
    }
    g.into_iter()
        .flat_map(|block| {
            let n = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            block.into_iter().map(move |v| if n > 0.0 { v / n } else { 0.0 })
        })
        .collect()
}

fn aggregation_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_pool = 0.0f64;
    for _ in 0..100 {
        let (c, h, w) = (rng.random_range(1..=8), rng.random_range(1..=32), rng.random_range(1..=32));
        let fm = random_map(&mut rng, c, h, w);
        let g = mean_std_pool(&fm);
        let n = (h * w) as f64;
        for ch in 0..c {
            let mut sum = 0.0;
            for i in 0..h {
                for j in 0..w {
                    sum += fm.at(ch, i, j) as f64;
                }
            }
            let mean = sum / n;
            let mut var = 0.0;
            for i in 0..h {
                for j in 0..w {
                    var += (fm.at(ch, i, j) as f64 - mean).powi(2);
                }
            }
            worst_pool = worst_pool.max((g.values[ch] - mean).abs()).max((g.values[c + ch] - (var / n).sqrt()).abs());
        }
    }
    ensure!(worst_pool <= 1e-12, "mean/std pooling error {worst_pool:e}");

    let mut worst_vlad = 0.0f64;
    for _ in 0..50 {
        let (c, k) = (rng.random_range(1..=6), rng.random_range(1..=5));
        let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let fm = random_map(&mut rng, c, h, w);
        let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..c).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let alpha = rng.random_range(0.1..10.0);
        let cb = VladCodebook::new(centers.clone(), alpha).map_err(|e| e.to_string())?;
        let got = vlad_aggregate(&fm, &cb).map_err(|e| e.to_string())?;
        for (a, b) in got.values.iter().zip(vlad_oracle(&fm, &centers, alpha)) {
            worst_vlad = worst_vlad.max((a - b).abs());
        }
    }
    let two = FeatureMap::new(1, 1, 2, vec![0.0, 2.0], 0, FeatureSource::External).unwrap();
    let centers = vec![vec![0.0], vec![2.0]];
    let got = vlad_aggregate(&two, &VladCodebook::new(centers.clone(), 1.0).unwrap()).unwrap();
    for (a, b) in got.values.iter().zip(vlad_oracle(&two, &centers, 1.0)) {
        worst_vlad = worst_vlad.max((a - b).abs());
    }
    ensure!(worst_vlad <= 1e-9, "VLAD error {worst_vlad:e}");

    let fm = random_map(&mut rng, 4, 5, 5);
    let tokens = (fm.h * fm.w) as f64;
    let mean: Vec<f64> = (0..fm.c)
        .map(|ch| (0..fm.h).flat_map(|i| (0..fm.w).map(move |j| (i, j))).map(|(i, j)| fm.at(ch, i, j) as f64).sum::<f64>() / tokens)
        .collect();
    let zero = vlad_aggregate(&fm, &VladCodebook::new(vec![mean], 10.0).unwrap()).unwrap();
    ensure!(zero.values.iter().all(|&v| v == 0.0), "K=1 mean-centre descriptor is not zero: {:?}", zero.values);
    Ok(format!("pool error {worst_pool:.1e}, VLAD error {worst_vlad:.1e}, K=1 mean centre gives zeros"))
}

fn line_track(n: usize) -> PoseTrack {
    PoseTrack::new(
        (0..n)
            .map(|i| Pose { frame_id: i as u64, timestamp: i as f64, position: [i as f64 * 0.5, 0.0, 0.0] })
            .collect(),
    )
    .unwrap()
}

fn random_descriptors(rng: &mut ChaCha8Rng, n: usize, l: usize) -> Vec<GlobalDescriptor> {
    (0..n)
        .map(|i| GlobalDescriptor::new((0..l).map(|_| rng.random_range(-1.0..1.0)).collect(), i as u64))
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn retrieval_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let track = line_track(50);
    for _ in 0..100 {
        let descs = random_descriptors(&mut rng, 50, 8);
        let index = build_index(&descs, &track).map_err(|e| e.to_string())?;
        let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut all: Vec<(f64, usize)> = descs.iter().enumerate().map(|(i, d)| (dist(&q, &d.values), i)).collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for k in [1, 5, 50] {
            let got = index.search_topk(&q, k, None).map_err(|e| e.to_string())?;
            let ids: Vec<usize> = all[..k].iter().map(|x| x.1).collect();
            let ds: Vec<f64> = all[..k].iter().map(|x| x.0).collect();
            ensure!(got.ids == ids && got.distances == ds, "top-{k} differs from full sort");
        }
    }

    let n = 500;
    let (w, lag) = (30, 5);
    let descs = random_descriptors(&mut rng, n, 16);
    let index = build_index(&descs, &line_track(n)).map_err(|e| e.to_string())?;
    let gt = GroundTruthConfig { tau: 5.0, delta_t: 0.0, unit: TemporalUnit::Frames };
    let records = run_regime(&index, None, &RegimeConfig::TimeWindow { window: w, lag }, &gt).map_err(|e| e.to_string())?;
    ensure!(records.len() == n - lag, "{} time-window records, expected {}", records.len(), n - lag);
    for rec in &records {
        let t = rec.query_frame as usize;
        let m = rec.top1_frame as usize;
        ensure!(m + lag <= t, "query {t} matched future frame {m}");
        let lo = t.saturating_sub(w + lag);
        let best = (lo..=t - lag)
            .min_by(|&a, &b| dist(&descs[t].values, &descs[a].values).total_cmp(&dist(&descs[t].values, &descs[b].values)).then(a.cmp(&b)))
            .unwrap();
        ensure!(m == best, "query {t}: window argmin {best}, got {m}");
    }
    Ok("100 instances exact; 495 window queries, none beyond t-δ".into())
}

fn pr_oracle(d: &[f64], l: &[bool]) -> Vec<PRPoint> {
    let pos = l.iter().filter(|&&x| x).count();
    if pos == 0 {
        return Vec::new();
    }
    let mut ts: Vec<f64> = d.iter().map(|x| x.next_up()).collect();
    ts.push(d.iter().cloned().fold(f64::INFINITY, f64::min));
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.into_iter()
        .filter_map(|t| {
            let tp = d.iter().zip(l).filter(|(x, y)| **x < t && **y).count();
            let fp = d.iter().zip(l).filter(|(x, y)| **x < t && !**y).count();
            (tp + fp > 0).then(|| PRPoint {
                threshold: t,
                precision: tp as f64 / (tp + fp) as f64,
                recall: tp as f64 / pos as f64,
            })
        })
        .collect()
}

fn metrics_oracle() -> Check {
    let curve = pr_curve(&[0.1, 0.2, 0.3, 0.4], &[true, true, false, true]).map_err(|e| e.to_string())?;
    let f1 = max_f1(&curve).map_err(|e| e.to_string())?;
    ensure!(f1 == 6.0 / 7.0, "max-F1 {f1} != 6/7");
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let n = rng.random_range(1..=200);
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(0..40) as f64 * 0.025).collect();
        let l: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let got = pr_curve(&d, &l).map_err(|e| e.to_string())?;
        ensure!(got.points == pr_oracle(&d, &l), "curve differs from oracle (n={n})");
        ensure!(got.points.windows(2).all(|p| p[0].recall <= p[1].recall), "recall not monotone");
        if !got.is_empty() {
            let auc = pr_auc(&got).map_err(|e| e.to_string())?;
            ensure!((0.0..=1.0).contains(&auc), "AUC {auc} outside [0,1]");
        }
    }
    Ok("max-F1 = 6/7 exactly; 200 curves equal the oracle".into())
}

const FRAMES: usize = 400;
const SEED: u64 = 2024;

fn polarscan(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_polarscan"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("polarscan {} failed: {}", args[0], String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Project, encode and evaluate the synthetic loop under `dir`.
fn pipeline(dir: &Path, head: &str) -> Result<String, String> {
    common::write_dataset(dir, FRAMES, SEED);
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    polarscan(&[
        "project", "--clouds", &p("clouds"), "--out", &p("pprj"), "--kind", "bev", "--height", "64", "--width", "64",
        "--channels", "height,range,intensity", "--extent", "fixed:-40,40,-40,40", "--output-size", "native",
    ])?;
    polarscan(&[
        "encode", "--inputs", &p("pprj"), "--patch", "16", "--c-out", "64", "--head", head, "--seed", "7", "--out",
        &p("db.pdsc"),
    ])?;
    polarscan(&[
        "eval", "--descriptors", &p("db.pdsc"), "--poses", &p("poses.csv"), "--regime", "intra", "--split", "200",
        "--offset", "200", "--tau", "5", "--out", &p("eval"),
    ])
}

fn end_to_end() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let summary = pipeline(tmp.path(), "meanstd")?;
    let report: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("eval/report.json")).unwrap())
        .map_err(|e| e.to_string())?;
    let r1 = report["recall_at_1"].as_f64().ok_or("report lacks recall_at_1")?;

    // Straight-line reference: exhaustive loops over the written descriptors.
    let descs = read_descriptors(&fs::read(tmp.path().join("db.pdsc")).unwrap()).map_err(|e| e.to_string())?;
    let poses: Vec<[f64; 3]> = (0..FRAMES).map(|f| common::pose_at(f).position).collect();
    let (mut eligible, mut hits) = (0, 0);
    for q in 200..FRAMES {
        let positive = |j: usize| q - j > 200 && dist(&poses[q], &poses[j]) < 5.0;
        if !(0..200).any(positive) {
            continue;
        }
        eligible += 1;
        let mut best = 0;
        for j in 1..200 {
            if dist(&descs[q].values, &descs[j].values) < dist(&descs[q].values, &descs[best].values) {
                best = j;
            }
        }
        hits += positive(best) as usize;
    }
    let reference = hits as f64 / eligible as f64;
    ensure!(r1 == reference, "report R@1 {r1} differs from reference {reference}");
    ensure!(r1 >= 0.95, "R@1 {r1} < 0.95");
    Ok(format!("{} over {eligible} queries", summary.trim()))
}

fn determinism() -> Check {
    let mut files = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        pipeline(tmp.path(), "vlad")?;
        let read = |name: &str| fs::read(tmp.path().join(name)).map_err(|e| e.to_string());
        files.push((read("db.pdsc")?, read("db.pvld")?, read("eval/report.json")?));
    }
    ensure!(files[0].0 == files[1].0, "PDSC files differ");
    ensure!(files[0].1 == files[1].1, "codebooks differ");
    ensure!(files[0].2 == files[1].2, "reports differ");
    Ok(format!("PDSC ({} bytes), codebook and report byte-identical", files[0].0.len()))
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn main() {
    let secs = Duration::from_secs;
    let criteria = [
        Criterion { name: "projection formula suite", budget: secs(1), run: projection_formulas },
        Criterion { name: "polar circular-shift equivariance", budget: secs(1), run: polar_shift },
        Criterion { name: "curvature analytics", budget: secs(5), run: curvature_analytics },
        Criterion { name: "aggregation oracles", budget: secs(10), run: aggregation_oracles },
        Criterion { name: "retrieval oracle", budget: secs(10), run: retrieval_oracle },
        Criterion { name: "metrics oracle", budget: secs(10), run: metrics_oracle },
        Criterion { name: "end-to-end synthetic loop", budget: secs(60), run: end_to_end },
        Criterion { name: "determinism", budget: secs(120), run: determinism },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over the {:?} budget", c.budget)),
            other => other,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(e) => {
                failed += 1;
                ("FAIL", e)
            }
        };
        println!("{tag}  {:<36} {:>8.3}s  {detail}", c.name, elapsed.as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
