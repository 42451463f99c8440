//! `skinfuse` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::{Point3, Vector3};
use serde::Serialize;

use skinfuse::errormap::{colorize, hausdorff, median, DEFAULT_SATURATION_MM};
use skinfuse::mesh::ply::{read_ply, write_ply, PlyFormat};
use skinfuse::phantom::{make_phantom, scenario_from_skin, simulate_camera, CameraSimSpec, DepthNoise, PhantomSpec};
use skinfuse::pipeline::{error_meshes, run_pipeline, PipelineConfig, TransformFile};
use skinfuse::registration::{coregister, CoregisterConfig, Landmark, RigidTransform, RigidTransformJson};
use skinfuse::segmentation::{extract_skin_mesh, segment_volume, segment_volume_padded, IsoValue};
use skinfuse::tracking::{volume_to_probe, FrameRegistry};
use skinfuse::volume::{load_volume, reformat_slice, save_volume, subsample, PlaneSpec};
use skinfuse::Volume;

/// Exit codes, one per failure class.
mod exit {
    pub const CONFIG: u8 = 2;
    pub const IO: u8 = 3;
    pub const SEGMENT: u8 = 4;
    pub const REGISTER: u8 = 5;
    pub const ERRORMAP: u8 = 6;
    pub const FUSE: u8 = 7;
    pub const PHANTOM: u8 = 8;
}

#[derive(Parser)]
#[command(
    name = "skinfuse",
    version,
    about = "Skin-surface co-registration for CT/MR to ultrasound fusion"
)]
struct Cli {
    /// Maximum number of worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a volume and write its skin mesh.
    Segment(SegmentArgs),
    /// Register a segmented skin mesh onto a camera surface.
    Register(RegisterArgs),
    /// Distance map between two surfaces.
    Errormap(ErrormapArgs),
    /// Resample the volume in the probe's image plane.
    Fuse(FuseArgs),
    /// Synthetic phantoms and camera captures.
    #[command(subcommand)]
    Phantom(PhantomCommand),
    /// Segmentation timing sweep and linearity check.
    Bench(BenchArgs),
    /// Full pipeline from a JSON configuration.
    Run(RunArgs),
}

#[derive(Args)]
struct SegmentArgs {
    /// Volume header file.
    #[arg(long)]
    volume: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    iso: f64,
    /// Keep every n-th voxel per axis, e.g. `2,2,1`.
    #[arg(long, value_parser = parse_triple::<usize>)]
    subsample: Option<[usize; 3]>,
    /// Background padding around each slice.
    #[arg(long, default_value_t = 1)]
    pad: usize,
    #[arg(long)]
    out: PathBuf,
    /// Write ASCII instead of binary PLY.
    #[arg(long)]
    ascii: bool,
}

#[derive(Args)]
struct RegisterArgs {
    /// Segmented skin mesh (volume coordinates).
    #[arg(long)]
    seg: PathBuf,
    /// Camera surface (camera coordinates).
    #[arg(long)]
    cam: PathBuf,
    #[arg(long, value_parser = parse_triple::<f64>, allow_hyphen_values = true)]
    landmark_seg: [f64; 3],
    #[arg(long, value_parser = parse_triple::<f64>, allow_hyphen_values = true)]
    landmark_cam: [f64; 3],
    /// Registration settings (JSON); the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    roi_mm: Option<f64>,
    /// Fraction of correspondences kept by the second ICP stage.
    #[arg(long)]
    trim: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SATURATION_MM)]
    saturate_mm: f64,
    #[arg(long)]
    out_transform: PathBuf,
    /// Registered skin coloured by its distance to the camera surface.
    #[arg(long)]
    out_errormap: PathBuf,
    /// Camera surface coloured by its distance to the registered skin.
    #[arg(long)]
    out_errormap_camera: Option<PathBuf>,
    /// Error summary (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ErrormapArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SATURATION_MM)]
    saturate_mm: f64,
    /// `a` coloured by its distance to `b`.
    #[arg(long)]
    out: PathBuf,
    /// `b` coloured by its distance to `a`.
    #[arg(long)]
    out_b: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    volume: PathBuf,
    /// Volume-to-camera transform (JSON with `R` and `t`).
    #[arg(long)]
    transform: PathBuf,
    /// Tracker frames (JSON).
    #[arg(long)]
    frames: PathBuf,
    /// Image plane in probe coordinates (JSON).
    #[arg(long)]
    plane: PathBuf,
    /// Output image, `.png` or `.pgm`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum PhantomCommand {
    /// Write a phantom volume.
    Make {
        /// Phantom description (JSON); default: the asymmetric abdomen.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output volume header.
        #[arg(long)]
        out: PathBuf,
    },
    /// Capture a mesh with a simulated depth camera.
    Camera {
        #[arg(long)]
        mesh: PathBuf,
        /// Camera description (JSON).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a complete registration scenario and its pipeline configuration.
    Scenario(ScenarioArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Phantom description (JSON); default: the asymmetric abdomen.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Camera description (JSON); overrides the camera flags.
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long, default_value_t = 250.0)]
    distance_mm: f64,
    /// Orbit angle about the head-feet axis, 0 is frontal.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    tilt_deg: f64,
    /// Depth noise σ at the reference distance.
    #[arg(long, default_value_t = 1.0)]
    sigma_mm: f64,
    /// Distance at which σ applies; noise grows linearly with distance.
    #[arg(long)]
    reference_mm: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Camera pose relative to the volume (JSON with `R` and `t`); default:
    /// 10° about an oblique axis and 30 mm.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Smallest phantom, voxels per axis.
    #[arg(long, value_parser = parse_triple::<usize>, default_value = "256,256,64")]
    base: [usize; 3],
    /// Runs per size; the median is reported.
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Also write the results as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration (JSON); the flags below override it.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    iso: Option<f64>,
    #[arg(long, value_parser = parse_triple::<usize>)]
    subsample: Option<[usize; 3]>,
    #[arg(long)]
    roi_mm: Option<f64>,
    #[arg(long)]
    trim: Option<f64>,
    #[arg(long)]
    saturate_mm: Option<f64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CliResult<T = ()> = Result<T, Failure>;

/// Input-file problems map to the I/O class, everything else to `code`.
fn classify(code: u8) -> impl Fn(skinfuse::Error) -> Failure {
    move |e| {
        let mut inner = &e;
        while let skinfuse::Error::Stage { source, .. } = inner {
            inner = source;
        }
        let code = match inner {
            skinfuse::Error::Io { .. } | skinfuse::Error::Format { .. } | skinfuse::Error::SizeMismatch { .. } => {
                exit::IO
            }
            _ => code,
        };
        Failure { code, error: e.into() }
    }
}

fn fail(code: u8) -> impl Fn(anyhow::Error) -> Failure {
    move |error| Failure { code, error }
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String>
where
    T::Err: std::fmt::Display,
{
    let parts: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    <[T; 3]>::try_from(parts).map_err(|v| format!("expected three comma-separated values, got {}", v.len()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(fail(exit::IO))?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(fail(exit::CONFIG))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).expect("serialisable");
    fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(fail(exit::IO))
}

fn read_transform(path: &Path) -> CliResult<RigidTransform> {
    let json: RigidTransformJson = read_json(path)?;
    RigidTransform::try_from(&json).map_err(classify(exit::CONFIG))
}

fn segment(args: &SegmentArgs) -> CliResult {
    let iso = IsoValue::new(args.iso).map_err(classify(exit::CONFIG))?;
    let t = Instant::now();
    let mut volume = load_volume(&args.volume).map_err(classify(exit::IO))?;
    if let Some(f) = args.subsample {
        volume = subsample(&volume, f).map_err(classify(exit::CONFIG))?;
    }
    let read = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let labels = segment_volume_padded(&volume, iso, args.pad).map_err(classify(exit::SEGMENT))?;
    let seg = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let mesh = extract_skin_mesh(&labels, volume.geometry()).map_err(classify(exit::SEGMENT))?;
    let extract = t.elapsed().as_secs_f64();
    let format = if args.ascii {
        PlyFormat::Ascii
    } else {
        PlyFormat::BinaryLittleEndian
    };
    write_ply(&args.out, &mesh, format).map_err(classify(exit::IO))?;
    let [nx, ny, nz] = volume.dims();
    println!(
        "volume {nx}x{ny}x{nz}, skin {} vertices, {} triangles",
        mesh.vertices().len(),
        mesh.triangles().len()
    );
    println!(
        "{:>16} {:>16} {:>16}",
        "volume reading", "segmentation", "skin extraction"
    );
    println!("{:>14.1}ms {:>14.1}ms {:>14.1}ms", read * 1e3, seg * 1e3, extract * 1e3);
    Ok(())
}

fn register(args: &RegisterArgs) -> CliResult {
    let mut config: CoregisterConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => CoregisterConfig::default(),
    };
    if let Some(r) = args.roi_mm {
        config.roi_radius_mm = r;
    }
    if let Some(t) = args.trim {
        config.icp.trim_stage2 = t;
    }
    config.validate().map_err(classify(exit::CONFIG))?;
    let seg = read_ply(&args.seg).map_err(classify(exit::IO))?;
    let cam = read_ply(&args.cam).map_err(classify(exit::IO))?;
    let landmark = Landmark::new(Point3::from(args.landmark_seg), Point3::from(args.landmark_cam));
    let reg = coregister(&seg, &cam, &landmark, &config).map_err(classify(exit::REGISTER))?;
    write_json(&args.out_transform, &TransformFile::new(&reg))?;
    let (seg_map, cam_map) = error_meshes(&reg, &cam, args.saturate_mm).map_err(classify(exit::ERRORMAP))?;
    write_ply(&args.out_errormap, &seg_map, PlyFormat::BinaryLittleEndian).map_err(classify(exit::IO))?;
    if let Some(p) = &args.out_errormap_camera {
        write_ply(p, &cam_map, PlyFormat::BinaryLittleEndian).map_err(classify(exit::IO))?;
    }
    let report = reg.error_map.report();
    if let Some(p) = &args.report {
        write_json(p, &report)?;
    }
    let iterations: Vec<usize> = reg.stages.iter().map(|s| s.iterations).collect();
    println!(
        "registered: ICP iterations {iterations:?}, hausdorff {:.2} mm, median {:.2} / {:.2} mm",
        report.hausdorff_mm, report.first_to_second.median, report.second_to_first.median
    );
    Ok(())
}

fn errormap(args: &ErrormapArgs) -> CliResult {
    let a = read_ply(&args.a).map_err(classify(exit::IO))?;
    let b = read_ply(&args.b).map_err(classify(exit::IO))?;
    let em = hausdorff(a.vertices(), b.vertices()).map_err(classify(exit::ERRORMAP))?;
    let paint = |mesh: skinfuse::TriangleMesh, d: &[f64]| -> CliResult<skinfuse::TriangleMesh> {
        let colors = colorize(d, args.saturate_mm).map_err(classify(exit::CONFIG))?;
        skinfuse::TriangleMesh::with_colors(mesh, colors).map_err(classify(exit::ERRORMAP))
    };
    let a_map = paint(a, &em.first.per_point)?;
    write_ply(&args.out, &a_map, PlyFormat::BinaryLittleEndian).map_err(classify(exit::IO))?;
    if let Some(p) = &args.out_b {
        let b_map = paint(b, &em.second.per_point)?;
        write_ply(p, &b_map, PlyFormat::BinaryLittleEndian).map_err(classify(exit::IO))?;
    }
    write_json(&args.report, &em.report())?;
    println!("hausdorff {:.3} mm", em.hausdorff);
    Ok(())
}

fn fuse(args: &FuseArgs) -> CliResult {
    let coreg = read_transform(&args.transform)?;
    let frames = FrameRegistry::load(&args.frames).map_err(classify(exit::CONFIG))?;
    let plane: PlaneSpec = read_json(&args.plane)?;
    plane.validate().map_err(classify(exit::CONFIG))?;
    let volume = load_volume(&args.volume).map_err(classify(exit::IO))?;
    let to_probe = volume_to_probe(&coreg, &frames).map_err(classify(exit::FUSE))?;
    let slice = reformat_slice(&volume, &to_probe, &plane).map_err(classify(exit::FUSE))?;
    slice
        .save(&args.out, volume.min_value() as f64, volume.max_value() as f64)
        .map_err(classify(exit::IO))?;
    println!(
        "fused slice {}x{} written to {}",
        slice.width,
        slice.height,
        args.out.display()
    );
    Ok(())
}

fn load_phantom_spec(path: Option<&Path>) -> CliResult<PhantomSpec> {
    let spec = match path {
        Some(p) => read_json(p)?,
        None => PhantomSpec::abdomen(),
    };
    spec.validate().map_err(classify(exit::CONFIG))?;
    Ok(spec)
}

fn default_truth() -> RigidTransform {
    RigidTransform::from_axis_angle(
        &Vector3::new(0.3, 0.2, 1.0),
        10f64.to_radians(),
        Vector3::new(20.0, -15.0, 16.0).normalize() * 30.0,
    )
}

fn phantom(cmd: &PhantomCommand) -> CliResult {
    match cmd {
        PhantomCommand::Make { spec, out } => {
            let spec = load_phantom_spec(spec.as_deref())?;
            let volume = make_phantom(&spec).map_err(classify(exit::PHANTOM))?;
            save_volume(&volume, out).map_err(classify(exit::IO))?;
            println!(
                "phantom {:?} written to {}, iso-value {}",
                volume.dims(),
                out.display(),
                spec.iso()
            );
        }
        PhantomCommand::Camera { mesh, spec, out } => {
            let cam: CameraSimSpec = read_json(spec)?;
            let mesh = read_ply(mesh).map_err(classify(exit::IO))?;
            let capture = simulate_camera(&mesh, &cam).map_err(classify(exit::PHANTOM))?;
            write_ply(out, &capture.mesh, PlyFormat::BinaryLittleEndian).map_err(classify(exit::IO))?;
            println!("captured {} vertices", capture.mesh.vertices().len());
        }
        PhantomCommand::Scenario(args) => scenario(args)?,
    }
    Ok(())
}

fn scenario(args: &ScenarioArgs) -> CliResult {
    let spec = load_phantom_spec(args.spec.as_deref())?;
    let cam = match &args.camera {
        Some(p) => read_json(p)?,
        None => {
            let mut cam = CameraSimSpec::looking_at(&spec, args.distance_mm, args.tilt_deg);
            cam.noise = match args.reference_mm {
                Some(d0) => DepthNoise::scaled(args.sigma_mm, d0),
                None => DepthNoise::constant(args.sigma_mm),
            };
            cam.seed = args.seed;
            cam
        }
    };
    let truth = match &args.truth {
        Some(p) => read_transform(p)?,
        None => default_truth(),
    };
    let volume = make_phantom(&spec).map_err(classify(exit::PHANTOM))?;
    let iso = IsoValue::new(spec.iso()).map_err(classify(exit::CONFIG))?;
    let labels = segment_volume(&volume, iso).map_err(classify(exit::SEGMENT))?;
    let skin = extract_skin_mesh(&labels, volume.geometry()).map_err(classify(exit::SEGMENT))?;
    let (inputs, gt) =
        scenario_from_skin(volume, spec.iso(), skin, &spec, &cam, &truth).map_err(classify(exit::PHANTOM))?;

    let dir = &args.out_dir;
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(fail(exit::IO))?;
    let volume_path = dir.join("phantom.hdr");
    let camera_path = dir.join("camera.ply");
    save_volume(&inputs.volume, &volume_path).map_err(classify(exit::IO))?;
    write_ply(&camera_path, &inputs.camera, PlyFormat::BinaryLittleEndian).map_err(classify(exit::IO))?;
    write_json(&dir.join("camera.json"), &cam)?;
    write_json(&dir.join("truth.json"), &gt.transform)?;
    // Paths relative to the bundle, which `run` resolves against the file.
    let config = PipelineConfig::new(
        "phantom.hdr".into(),
        inputs.iso,
        "camera.ply".into(),
        inputs.landmark,
        "out".into(),
    );
    write_json(&dir.join("pipeline.json"), &config)?;
    println!(
        "scenario written to {}: {} camera vertices, landmark {:?} / {:?}",
        dir.display(),
        inputs.camera.vertices().len(),
        inputs.landmark.segmented.coords.as_slice(),
        inputs.landmark.camera.coords.as_slice()
    );
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    dims: [usize; 3],
    voxels: usize,
    volume_reading_ms: f64,
    segmentation_ms: f64,
    skin_extraction_ms: f64,
}

#[derive(Serialize)]
struct BenchReport {
    rows: Vec<BenchRow>,
    /// Segmentation time ratio between consecutive sizes.
    ratios: Vec<f64>,
    linear: bool,
}

fn bench(args: &BenchArgs) -> CliResult {
    if args.runs == 0 || args.base.contains(&0) {
        return Err(fail(exit::CONFIG)(anyhow!("runs and base dimensions must be positive")));
    }
    let [x, y, z] = args.base;
    let sizes = [[x, y, z], [x, y, 2 * z], [x, 2 * y, 2 * z]];
    let dir = std::env::temp_dir().join(format!("skinfuse-bench-{}", std::process::id()));
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(fail(exit::IO))?;
    let result = bench_in(&dir, &sizes, args.runs);
    let _ = fs::remove_dir_all(&dir);
    let rows = result?;

    println!(
        "{:>16} {:>16} {:>16} {:>16}",
        "dims", "volume reading", "segmentation", "skin extraction"
    );
    for r in &rows {
        let dims = format!("{}x{}x{}", r.dims[0], r.dims[1], r.dims[2]);
        println!(
            "{dims:>16} {:>14.1}ms {:>14.1}ms {:>14.1}ms",
            r.volume_reading_ms, r.segmentation_ms, r.skin_extraction_ms
        );
    }
    let ratios: Vec<f64> = rows
        .windows(2)
        .map(|w| w[1].segmentation_ms / w[0].segmentation_ms)
        .collect();
    let linear = ratios.iter().all(|r| (1.6..=2.5).contains(r));
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    println!(
        "segmentation time ratio per doubling: {} ({})",
        shown.join(", "),
        if linear { "linear" } else { "outside [1.6, 2.5]" }
    );
    if let Some(p) = &args.json {
        write_json(p, &BenchReport { rows, ratios, linear })?;
    }
    Ok(())
}

fn bench_in(dir: &Path, sizes: &[[usize; 3]], runs: usize) -> CliResult<Vec<BenchRow>> {
    let iso = IsoValue::new(50.0).expect("finite");
    let mut paths = Vec::new();
    for (i, &dims) in sizes.iter().enumerate() {
        let semi = dims.map(|n| n as f64 * 0.8);
        let volume = make_phantom(&PhantomSpec::ellipsoid(dims, [2.0; 3], semi)).map_err(classify(exit::PHANTOM))?;
        let path = dir.join(format!("size{i}.hdr"));
        save_volume(&volume, &path).map_err(classify(exit::IO))?;
        paths.push(path);
    }
    let mut samples = vec![[const { Vec::new() }; 3]; sizes.len()];
    // One warm-up round, then sizes interleaved within each round.
    for round in 0..=runs {
        for (path, s) in paths.iter().zip(samples.iter_mut()) {
            let t = Instant::now();
            let volume: Volume = load_volume(path).map_err(classify(exit::IO))?;
            let read = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let labels = segment_volume(&volume, iso).map_err(classify(exit::SEGMENT))?;
            let seg = t.elapsed().as_secs_f64();
            let t = Instant::now();
            extract_skin_mesh(&labels, volume.geometry()).map_err(classify(exit::SEGMENT))?;
            let extract = t.elapsed().as_secs_f64();
            if round > 0 {
                for (v, x) in s.iter_mut().zip([read, seg, extract]) {
                    v.push(x * 1e3);
                }
            }
        }
    }
    Ok(sizes
        .iter()
        .zip(samples)
        .map(|(&dims, s)| BenchRow {
            dims,
            voxels: dims.iter().product(),
            volume_reading_ms: median(&s[0]),
            segmentation_ms: median(&s[1]),
            skin_extraction_ms: median(&s[2]),
        })
        .collect())
}

fn run(args: &RunArgs) -> CliResult {
    let mut config = PipelineConfig::load(&args.config).map_err(classify(exit::CONFIG))?;
    // Relative paths in the file are taken relative to the file.
    let base = args.config.parent().unwrap_or(Path::new("."));
    for p in [&mut config.volume, &mut config.camera, &mut config.output_dir] {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    if let Some(f) = config.frames.as_mut().filter(|f| f.is_relative()) {
        *f = base.join(&*f);
    }
    if args.iso.is_some() {
        config.iso = args.iso;
    }
    if let Some(s) = args.subsample {
        config.subsample = s;
    }
    if let Some(r) = args.roi_mm {
        config.registration.roi_radius_mm = r;
    }
    if let Some(t) = args.trim {
        config.registration.icp.trim_stage2 = t;
    }
    if let Some(s) = args.saturate_mm {
        config.saturation_mm = s;
    }
    if let Some(o) = &args.output_dir {
        config.output_dir = o.clone();
    }
    let report = run_pipeline(&config).map_err(|e| {
        let code = match e.stage() {
            Some("configuration") => exit::CONFIG,
            Some("segmentation" | "skin_extraction") => exit::SEGMENT,
            Some("registration") => exit::REGISTER,
            Some("error_map") => exit::ERRORMAP,
            Some("fusion") => exit::FUSE,
            _ => exit::IO,
        };
        classify(code)(e)
    })?;
    let t = &report.timings;
    println!(
        "{:>16} {:>16} {:>16} {:>16} {:>16}",
        "volume reading", "segmentation", "skin extraction", "registration", "total"
    );
    println!(
        "{:>14.1}ms {:>14.1}ms {:>14.1}ms {:>14.1}ms {:>14.1}ms",
        t.volume_reading * 1e3,
        t.segmentation * 1e3,
        t.skin_extraction * 1e3,
        t.registration * 1e3,
        t.total * 1e3
    );
    println!(
        "hausdorff {:.2} mm, median {:.2} / {:.2} mm; outputs in {}",
        report.error.hausdorff_mm,
        report.error.first_to_second.median,
        report.error.second_to_first.median,
        config.output_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(exit::CONFIG);
        }
    }
    let result = match &cli.command {
        Command::Segment(a) => segment(a),
        Command::Register(a) => register(a),
        Command::Errormap(a) => errormap(a),
        Command::Fuse(a) => fuse(a),
        Command::Phantom(c) => phantom(c),
        Command::Bench(a) => bench(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_line_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn triples_parse() {
        assert_eq!(parse_triple::<f64>("1, -2.5,3").unwrap(), [1.0, -2.5, 3.0]);
        assert!(parse_triple::<usize>("1,2").is_err());
        assert!(parse_triple::<usize>("1,2,x").is_err());
    }
}
