//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::cell::OnceCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skinfuse::errormap::{color_of, hausdorff, median, DEFAULT_SATURATION_MM};
use skinfuse::mesh::ply::{write_ply, PlyFormat};
use skinfuse::phantom::{make_phantom, scenario_from_skin, CameraSimSpec, DepthNoise, PhantomSpec, ScenarioInputs};
use skinfuse::pipeline::{run_pipeline, PipelineConfig};
use skinfuse::registration::{coregister, pose_error, CoregisterConfig, Coregistration, Landmark, RigidTransform};
use skinfuse::segmentation::{extract_skin_mesh, segment_slice, segment_volume, IsoValue};
use skinfuse::tracking::{FrameRegistry, CAMERA, PROBE};
use skinfuse::volume::{save_volume, subsample, PlaneSpec, SliceView};
use skinfuse::{KdTree, TriangleMesh, Volume};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

/// The phantom, its skin and the ground-truth pose shared by the
/// registration criteria.
struct Fixture {
    spec: PhantomSpec,
    volume: Volume,
    skin: TriangleMesh,
    truth: RigidTransform,
}

impl Fixture {
    fn new() -> Self {
        let spec = PhantomSpec::abdomen();
        let volume = make_phantom(&spec).unwrap();
        let labels = segment_volume(&volume, IsoValue::new(spec.iso()).unwrap()).unwrap();
        let skin = extract_skin_mesh(&labels, volume.geometry()).unwrap();
        // 10° about an oblique axis, 30 mm translation.
        let truth = RigidTransform::from_axis_angle(
            &Vector3::new(0.3, 0.2, 1.0),
            10f64.to_radians(),
            Vector3::new(20.0, -15.0, 16.0).normalize() * 30.0,
        );
        Self {
            spec,
            volume,
            skin,
            truth,
        }
    }

    fn scenario(&self, distance: f64, tilt: f64, noise: DepthNoise, seed: u64) -> ScenarioInputs {
        let mut cam = CameraSimSpec::looking_at(&self.spec, distance, tilt);
        cam.noise = noise;
        cam.seed = seed;
        scenario_from_skin(
            self.volume.clone(),
            self.spec.iso(),
            self.skin.clone(),
            &self.spec,
            &cam,
            &self.truth,
        )
        .unwrap()
        .0
    }
}

fn register(inputs: &ScenarioInputs, landmark: &Landmark) -> Coregistration {
    coregister(&inputs.skin, &inputs.camera, landmark, &CoregisterConfig::default()).unwrap()
}

/// Median of the camera-side error field over the ROI.
fn roi_median(reg: &Coregistration) -> f64 {
    median(&reg.error_map.second.per_point)
}

const SWEEP_DISTANCES: [f64; 4] = [200.0, 250.0, 300.0, 350.0];
const SWEEP_SEED: u64 = 7;

fn sweep_noise() -> DepthNoise {
    DepthNoise::scaled(1.0, 200.0)
}

// ---------------------------------------------------------------- 1

/// Labels by fixed-point relaxation: background grows from the seed over
/// sub-threshold pixels until nothing changes; skin is every supra-threshold
/// pixel 4-adjacent to background.
fn relaxation_labels(w: usize, h: usize, px: &[i32], iso: f64, seed: (usize, usize)) -> Vec<u8> {
    let below = |i: usize| (px[i] as f64) < iso;
    let mut bg = vec![false; w * h];
    bg[seed.1 * w + seed.0] = true;
    let neighbours = |i: usize| {
        let (x, y) = (i % w, i / w);
        let mut n = Vec::with_capacity(4);
        if x > 0 {
            n.push(i - 1);
        }
        if x + 1 < w {
            n.push(i + 1);
        }
        if y > 0 {
            n.push(i - w);
        }
        if y + 1 < h {
            n.push(i + w);
        }
        n
    };
    loop {
        let mut changed = false;
        for i in 0..w * h {
            if !bg[i] && below(i) && neighbours(i).into_iter().any(|j| bg[j]) {
                bg[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..w * h)
        .map(|i| {
            if bg[i] {
                0
            } else if !below(i) && neighbours(i).into_iter().any(|j| bg[j]) {
                1
            } else {
                2
            }
        })
        .collect()
}

/// A slice of random discs and speckle over a background of 0.
fn random_blob_slice(rng: &mut ChaCha8Rng) -> (usize, usize, Vec<i32>) {
    let w = rng.random_range(1..=64);
    let h = rng.random_range(1..=64);
    let mut px = vec![0i32; w * h];
    for _ in 0..rng.random_range(0..6) {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let r = rng.random_range(1.0..20.0f64);
        let v = rng.random_range(40..200);
        for y in 0..h {
            for x in 0..w {
                if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                    px[y * w + x] = v;
                }
            }
        }
    }
    let speckle = rng.random_range(0.0..0.3);
    for p in px.iter_mut() {
        if rng.random_bool(speckle) {
            *p = rng.random_range(0..200);
        }
    }
    (w, h, px)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut fills = 0;
    for case in 0..200 {
        let (w, h, mut px) = random_blob_slice(&mut rng);
        let iso = rng.random_range(30.0..120.0);
        let seed = (rng.random_range(0..w), rng.random_range(0..h));
        px[seed.1 * w + seed.0] = 0;
        let slice = SliceView::new(w, h, &px).unwrap();
        let got = segment_slice(&slice, IsoValue::new(iso).unwrap(), seed).unwrap();
        let want = relaxation_labels(w, h, &px, iso, seed);
        ensure!(
            got.labels == want,
            "slice {case} ({w}x{h}, seed {seed:?}) differs from the oracle"
        );
        fills += got.labels.iter().filter(|&&l| l == 0).count();
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2} s");
    Ok(format!("200 slices identical, {fills} background pixels, {secs:.2} s"))
}

// ---------------------------------------------------------------- 2

fn ellipsoid_volume(dims: [usize; 3]) -> Volume {
    let semi = [dims[0] as f64 * 0.8, dims[1] as f64 * 0.8, dims[2] as f64 * 0.8];
    make_phantom(&PhantomSpec::ellipsoid(dims, [2.0; 3], semi)).unwrap()
}

fn criterion_2() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let volumes: Vec<Volume> = [[256, 256, 64], [256, 256, 128], [256, 512, 128]]
        .map(ellipsoid_volume)
        .into();
    let iso = IsoValue::new(50.0).unwrap();
    let time = |v: &Volume| {
        let t = Instant::now();
        std::hint::black_box(segment_volume(v, iso).unwrap());
        t.elapsed().as_secs_f64()
    };
    // Sizes are interleaved within each round so load changes hit all alike.
    let mut runs = vec![Vec::new(); volumes.len()];
    pool.install(|| {
        for v in &volumes {
            time(v);
        }
        for _ in 0..5 {
            for (v, r) in volumes.iter().zip(runs.iter_mut()) {
                r.push(time(v));
            }
        }
    });
    let t: Vec<f64> = runs.iter().map(|r| median(r)).collect();
    let ratios = [t[1] / t[0], t[2] / t[1]];
    let detail = format!(
        "median times {:.1}/{:.1}/{:.1} ms, ratios {:.2}, {:.2}",
        t[0] * 1e3,
        t[1] * 1e3,
        t[2] * 1e3,
        ratios[0],
        ratios[1]
    );
    ensure!(ratios.iter().all(|r| (1.6..=2.5).contains(r)), "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let spec = PhantomSpec::abdomen();
    let iso = IsoValue::new(spec.iso()).unwrap();
    let fine = make_phantom(&spec).unwrap();
    let coarse = subsample(&fine, [2, 2, 2]).unwrap();
    let mesh = |v: &Volume| extract_skin_mesh(&segment_volume(v, iso).unwrap(), v.geometry()).unwrap();
    let (mf, mc) = (mesh(&fine), mesh(&coarse));
    let limit = 2.0 * coarse.geometry().voxel_diagonal();
    let em = hausdorff(mc.vertices(), mf.vertices()).unwrap();
    let share = |d: &[f64]| d.iter().filter(|&&x| x <= limit).count() as f64 / d.len() as f64;
    let (a, b) = (share(&em.first.per_point), share(&em.second.per_point));
    let detail = format!(
        "{:.2}% coarse and {:.2}% fine vertices within {limit:.2} mm, hausdorff {:.2} mm",
        100.0 * a,
        100.0 * b,
        em.hausdorff
    );
    ensure!(a >= 0.99 && b >= 0.99, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 4

fn criterion_4(fx: &Fixture) -> Outcome {
    let mut parts = Vec::new();
    for (noise, tol_mm, tol_deg) in [
        (DepthNoise::constant(0.0), 0.5, 0.5),
        (DepthNoise::constant(1.0), 1.0, 1.0),
    ] {
        let inputs = fx.scenario(250.0, 0.0, noise, SWEEP_SEED);
        let t = Instant::now();
        let reg = register(&inputs, &inputs.landmark);
        let secs = t.elapsed().as_secs_f64();
        let (dt, dr) = pose_error(&reg.transform, &fx.truth, &Point3::from(fx.spec.centre));
        let detail = format!("σ={} mm: {dt:.3} mm, {dr:.3}°, {secs:.2} s", noise.sigma_mm);
        ensure!(dt <= tol_mm && dr <= tol_deg && secs < 10.0, "{detail}");
        parts.push(detail);
    }
    Ok(parts.join("; "))
}

// ---------------------------------------------------------------- 5 and 9

/// Median ROI error for every (distance, tilt) of the sweep.
struct Sweep {
    medians: Vec<(f64, f64, f64)>,
}

impl Sweep {
    fn run(fx: &Fixture) -> Self {
        let mut medians = Vec::new();
        for &d in &SWEEP_DISTANCES {
            for tilt in [0.0, 45.0, 90.0] {
                let inputs = fx.scenario(d, tilt, sweep_noise(), SWEEP_SEED);
                medians.push((d, tilt, roi_median(&register(&inputs, &inputs.landmark))));
            }
        }
        Self { medians }
    }

    fn get(&self, d: f64, tilt: f64) -> f64 {
        self.medians.iter().find(|m| m.0 == d && m.1 == tilt).unwrap().2
    }
}

fn criterion_5(sweep: &Sweep) -> Outcome {
    let mut parts = Vec::new();
    for &d in &SWEEP_DISTANCES {
        let (front, lateral) = (sweep.get(d, 0.0), sweep.get(d, 90.0));
        let detail = format!("{d} mm: 0° {front:.2}, 90° {lateral:.2}");
        ensure!(front <= 10.0 && lateral <= 10.0 && front <= lateral, "{detail}");
        parts.push(detail);
    }
    Ok(format!("median ROI error (mm) {}", parts.join("; ")))
}

fn criterion_9(sweep: &Sweep) -> Outcome {
    let mut parts = Vec::new();
    for &d in &SWEEP_DISTANCES {
        let (oblique, lateral) = (sweep.get(d, 45.0), sweep.get(d, 90.0));
        let detail = format!("{d} mm: 45° {oblique:.2}, 90° {lateral:.2}");
        ensure!(oblique <= lateral, "{detail}");
        parts.push(detail);
    }
    Ok(format!("median ROI error (mm) {}", parts.join("; ")))
}

// ---------------------------------------------------------------- 6

fn criterion_6(fx: &Fixture) -> Outcome {
    let inputs = fx.scenario(250.0, 0.0, DepthNoise::constant(1.0), SWEEP_SEED);
    let base = register(&inputs, &inputs.landmark).transform;
    let seg_tree = KdTree::build(inputs.skin.vertices()).unwrap();
    let cam_tree = KdTree::build(inputs.camera.vertices()).unwrap();
    let snap = |tree: &KdTree, p: &Point3<f64>| *tree.point(tree.nearest(p).index);
    let diagonal = Vector3::new(1.0, 0.0, 1.0).normalize();
    let (mut worst_deg, mut worst_mm) = (0.0f64, 0.0f64);
    for magnitude in [5.0, 10.0] {
        for dir in [
            Vector3::x(),
            Vector3::z(),
            diagonal,
            -Vector3::x(),
            -Vector3::z(),
            -diagonal,
        ] {
            let moved = inputs.landmark.shifted(&(dir * magnitude));
            let lm = Landmark::new(snap(&seg_tree, &moved.segmented), snap(&cam_tree, &moved.camera));
            let r = register(&inputs, &lm).transform;
            let (ea, eb) = (r.euler_xyz(), base.euler_xyz());
            let deg = (0..3).map(|i| (ea[i] - eb[i]).to_degrees().abs()).fold(0.0, f64::max);
            let mm = (r.translation() - base.translation()).norm();
            worst_deg = worst_deg.max(deg);
            worst_mm = worst_mm.max(mm);
        }
    }
    let detail = format!("12 perturbations, max angle change {worst_deg:.3}°, max translation change {worst_mm:.3} mm");
    ensure!(worst_deg < 1.0 && worst_mm < 2.0, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn brute_directed(a: &[Point3<f64>], b: &[Point3<f64>]) -> Vec<f64> {
    a.iter()
        .map(|p| b.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
        .collect()
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cloud = |rng: &mut ChaCha8Rng| -> Vec<Point3<f64>> {
        let n = rng.random_range(1..=1000);
        let scale = rng.random_range(1.0..200.0);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                )
            })
            .collect()
    };
    for case in 0..50 {
        let a = cloud(&mut rng);
        let b = cloud(&mut rng);
        let em = hausdorff(&a, &b).unwrap();
        let (da, db) = (brute_directed(&a, &b), brute_directed(&b, &a));
        let h = da.iter().chain(&db).copied().fold(0.0, f64::max);
        ensure!(
            em.first.per_point == da && em.second.per_point == db,
            "pair {case}: per-point distances differ"
        );
        ensure!(
            em.hausdorff.to_bits() == h.to_bits(),
            "pair {case}: {} vs brute force {h}",
            em.hausdorff
        );
        let back = hausdorff(&b, &a).unwrap();
        ensure!(
            back.hausdorff.to_bits() == em.hausdorff.to_bits(),
            "pair {case}: not symmetric"
        );
    }
    Ok("50 pairs match brute force exactly, symmetric bit for bit".into())
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let sat = DEFAULT_SATURATION_MM;
    ensure!(color_of(0.0, sat) == [0, 0, 255], "0 mm gives {:?}", color_of(0.0, sat));
    for d in [5.0, 5.5, 100.0] {
        ensure!(color_of(d, sat) == [255, 0, 0], "{d} mm gives {:?}", color_of(d, sat));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ds: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..10.0)).collect();
    ds.sort_by(f64::total_cmp);
    let colors: Vec<_> = ds.iter().map(|&d| color_of(d, sat)).collect();
    ensure!(
        colors.windows(2).all(|w| w[0][0] <= w[1][0]),
        "red channel not monotone"
    );
    ensure!(
        colors.windows(2).all(|w| w[0][2] >= w[1][2]),
        "blue channel not monotone"
    );
    Ok("endpoints exact, red non-decreasing over 1000 samples".into())
}

// ---------------------------------------------------------------- 10

fn pipeline_config(fx: &Fixture, dir: &Path, out: &str) -> PipelineConfig {
    let volume = dir.join("phantom.hdr");
    let camera = dir.join("camera.ply");
    let frames = dir.join("frames.json");
    if !volume.exists() {
        let inputs = fx.scenario(250.0, 0.0, DepthNoise::constant(0.5), SWEEP_SEED);
        save_volume(&inputs.volume, &volume).unwrap();
        write_ply(&camera, &inputs.camera, PlyFormat::Ascii).unwrap();
        std::fs::write(
            dir.join("landmark.json"),
            serde_json::to_string(&inputs.landmark).unwrap(),
        )
        .unwrap();
        let mut reg = FrameRegistry::new();
        reg.insert(CAMERA, RigidTransform::from_translation(Vector3::new(0.0, 0.0, 500.0)))
            .unwrap();
        reg.insert(
            PROBE,
            RigidTransform::from_axis_angle(&Vector3::x(), 0.3, Vector3::new(10.0, 60.0, 480.0)),
        )
        .unwrap();
        std::fs::write(&frames, reg.to_json()).unwrap();
    }
    let landmark: Landmark =
        serde_json::from_str(&std::fs::read_to_string(dir.join("landmark.json")).unwrap()).unwrap();
    let mut config = PipelineConfig::new(volume, fx.spec.iso(), camera, landmark, dir.join(out));
    config.frames = Some(frames);
    config.plane = Some(PlaneSpec {
        origin: [-60.0, -60.0, 0.0],
        u: [1.0, 0.0, 0.0],
        v: [0.0, 1.0, 0.0],
        extent: [120.0, 120.0],
        resolution: 1.0,
    });
    config
}

fn criterion_10(fx: &Fixture) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let a = run_pipeline(&pipeline_config(fx, dir.path(), "a")).map_err(|e| e.to_string())?;
    run_pipeline(&pipeline_config(fx, dir.path(), "b")).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for path in &a.outputs {
        let name = path.file_name().unwrap();
        if name == "report.json" {
            continue;
        }
        let x = std::fs::read(path).unwrap();
        let y = std::fs::read(dir.path().join("b").join(name)).unwrap();
        ensure!(x == y, "{} differs between runs", name.to_string_lossy());
        compared += 1;
    }
    ensure!(compared == 6, "expected 6 outputs, compared {compared}");
    Ok(format!(
        "{compared} outputs byte-identical, hausdorff {:.2} mm",
        a.error.hausdorff_mm
    ))
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let fixture = Fixture::new();
    let sweep = OnceCell::new();
    let criteria: Vec<Criterion> = vec![
        ("flood-fill oracle equivalence", Box::new(criterion_1)),
        ("segmentation linearity", Box::new(criterion_2)),
        ("subsampling robustness", Box::new(criterion_3)),
        ("known-transform recovery", Box::new(|| criterion_4(&fixture))),
        (
            "accuracy envelope",
            Box::new(|| criterion_5(sweep.get_or_init(|| Sweep::run(&fixture)))),
        ),
        ("landmark robustness", Box::new(|| criterion_6(&fixture))),
        ("hausdorff oracle", Box::new(criterion_7)),
        ("colormap endpoints", Box::new(criterion_8)),
        (
            "tilt experiment shape",
            Box::new(|| criterion_9(sweep.get_or_init(|| Sweep::run(&fixture)))),
        ),
        ("end-to-end determinism", Box::new(|| criterion_10(&fixture))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
