//! End-to-end run: read the volume, segment, extract the skin, register it
//! to the camera surface, map the error and optionally reformat a fused
//! slice in the probe frame.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::errormap::{colorize, ErrorReport, DEFAULT_SATURATION_MM};
use crate::mesh::ply::{read_ply, write_ply, PlyFormat};
use crate::mesh::TriangleMesh;
use crate::registration::{
    coregister, CoregisterConfig, Coregistration, Landmark, PcaCandidate, RigidTransform, RigidTransformJson,
    StageReport,
};
use crate::segmentation::{extract_skin_mesh, segment_volume_padded, IsoValue};
use crate::tracking::{volume_to_probe, FrameRegistry};
use crate::volume::{load_volume, subsample, PlaneSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Volume header file.
    pub volume: PathBuf,
    /// Background/body threshold. Required.
    #[serde(default)]
    pub iso: Option<f64>,
    /// Camera surface (PLY), in camera coordinates.
    pub camera: PathBuf,
    pub landmark: Landmark,
    #[serde(default = "unit_factors")]
    pub subsample: [usize; 3],
    /// Background padding added around every slice before flood filling.
    #[serde(default = "one")]
    pub pad: usize,
    #[serde(default)]
    pub registration: CoregisterConfig,
    #[serde(default = "default_saturation")]
    pub saturation_mm: f64,
    /// Tracker frames (JSON); with `plane`, enables the fused slice.
    #[serde(default)]
    pub frames: Option<PathBuf>,
    /// Probe image plane, in probe coordinates.
    #[serde(default)]
    pub plane: Option<PlaneSpec>,
    pub output_dir: PathBuf,
}

fn unit_factors() -> [usize; 3] {
    [1, 1, 1]
}

fn one() -> usize {
    1
}

fn default_saturation() -> f64 {
    DEFAULT_SATURATION_MM
}

impl PipelineConfig {
    /// Minimal configuration with defaults for every optional field.
    pub fn new(volume: PathBuf, iso: f64, camera: PathBuf, landmark: Landmark, output_dir: PathBuf) -> Self {
        Self {
            volume,
            iso: Some(iso),
            camera,
            landmark,
            subsample: unit_factors(),
            pad: 1,
            registration: CoregisterConfig::default(),
            saturation_mm: DEFAULT_SATURATION_MM,
            frames: None,
            plane: None,
            output_dir,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("pipeline config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Check parameters and that every input file exists.
    pub fn validate(&self) -> Result<IsoValue> {
        let iso = self
            .iso
            .ok_or_else(|| Error::InvalidParameter("iso-value is required".into()))
            .and_then(IsoValue::new)?;
        if self.subsample.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "subsample factors must be >= 1, got {:?}",
                self.subsample
            )));
        }
        if !(self.saturation_mm > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "colour saturation must be positive, got {}",
                self.saturation_mm
            )));
        }
        self.registration.validate()?;
        if let Some(p) = &self.plane {
            p.validate()?;
        }
        if self.plane.is_some() != self.frames.is_some() {
            return Err(Error::InvalidParameter(
                "`frames` and `plane` must be given together".into(),
            ));
        }
        let mut inputs = vec![&self.volume, &self.camera];
        inputs.extend(self.frames.as_ref());
        for p in inputs {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
                ));
            }
        }
        Ok(iso)
    }
}

/// Wall time per stage, seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub volume_reading: f64,
    pub segmentation: f64,
    pub skin_extraction: f64,
    pub registration: f64,
    pub error_map: f64,
    pub fusion: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformMetadata {
    pub stages: Vec<StageReport>,
    pub pca_candidates: Vec<PcaCandidate>,
    pub pca_choice: Option<usize>,
}

/// Content of `transform.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformFile {
    #[serde(flatten)]
    pub transform: RigidTransformJson,
    pub metadata: TransformMetadata,
}

impl TransformFile {
    pub fn new(reg: &Coregistration) -> Self {
        Self {
            transform: (&reg.transform).into(),
            metadata: TransformMetadata {
                stages: reg.stages.clone(),
                pca_candidates: reg.pca.candidates.to_vec(),
                pca_choice: reg.pca.chosen,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub volume_dims: [usize; 3],
    pub skin_vertices: usize,
    pub skin_triangles: usize,
    pub camera_vertices: usize,
    pub transform: RigidTransform,
    pub error: ErrorReport,
    pub timings: StageTimings,
    pub outputs: Vec<PathBuf>,
}

pub const SKIN_PLY: &str = "skin.ply";
pub const TRANSFORM_JSON: &str = "transform.json";
pub const SEGMENTED_ERRORMAP_PLY: &str = "errormap_segmented.ply";
pub const CAMERA_ERRORMAP_PLY: &str = "errormap_camera.ply";
pub const ERROR_REPORT_JSON: &str = "errormap.json";
pub const FUSED_PGM: &str = "fused.pgm";
pub const RUN_REPORT_JSON: &str = "report.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report types serialise");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Colour a subset of `mesh` by per-vertex distances.
fn colored_subset(mesh: &TriangleMesh, subset: &[usize], distances: &[f64], sat: f64) -> Result<TriangleMesh> {
    let mut keep = vec![false; mesh.vertices().len()];
    for &i in subset {
        keep[i] = true;
    }
    let (sub, _) = mesh.select_vertices(&keep);
    sub.with_colors(colorize(distances, sat)?)
}

/// The two coloured error-map meshes of a registration, both in camera
/// coordinates: the registered anterior skin and the camera surface, each
/// cut to the error-map region.
pub fn error_meshes(
    reg: &Coregistration,
    camera: &TriangleMesh,
    saturation_mm: f64,
) -> Result<(TriangleMesh, TriangleMesh)> {
    let em = &reg.error_map;
    let front = reg.front.transformed(&reg.transform);
    Ok((
        colored_subset(&front, &reg.error_source, &em.first.per_point, saturation_mm)?,
        colored_subset(camera, &reg.error_target, &em.second.per_point, saturation_mm)?,
    ))
}

/// Run every stage and write the outputs into `config.output_dir`.
///
/// Apart from the timings in `report.json`, outputs depend only on the
/// configuration and inputs.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    let iso = config.validate().map_err(|e| e.in_stage("configuration"))?;
    let frames = config
        .frames
        .as_deref()
        .map(FrameRegistry::load)
        .transpose()
        .map_err(|e| e.in_stage("configuration"))?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e).in_stage("output"))?;
    let mut timings = StageTimings::default();
    let start = Instant::now();
    let mut clock = Instant::now();
    let mut lap = || {
        let t = clock.elapsed().as_secs_f64();
        clock = Instant::now();
        t
    };

    let volume = load_volume(&config.volume).map_err(|e| e.in_stage("volume_reading"))?;
    let volume = if config.subsample == [1, 1, 1] {
        volume
    } else {
        subsample(&volume, config.subsample).map_err(|e| e.in_stage("volume_reading"))?
    };
    timings.volume_reading = lap();

    let labels = segment_volume_padded(&volume, iso, config.pad).map_err(|e| e.in_stage("segmentation"))?;
    timings.segmentation = lap();

    let skin = extract_skin_mesh(&labels, volume.geometry()).map_err(|e| e.in_stage("skin_extraction"))?;
    timings.skin_extraction = lap();

    let camera = read_ply(&config.camera).map_err(|e| e.in_stage("registration"))?;
    let reg =
        coregister(&skin, &camera, &config.landmark, &config.registration).map_err(|e| e.in_stage("registration"))?;
    timings.registration = lap();

    let mut outputs = Vec::new();
    let mut emit = |name: &str| {
        let p = out.join(name);
        outputs.push(p.clone());
        p
    };
    let em = &reg.error_map;
    (|| -> Result<()> {
        let (seg_colored, cam_colored) = error_meshes(&reg, &camera, config.saturation_mm)?;
        write_ply(
            &emit(SEGMENTED_ERRORMAP_PLY),
            &seg_colored,
            PlyFormat::BinaryLittleEndian,
        )?;
        write_ply(&emit(CAMERA_ERRORMAP_PLY), &cam_colored, PlyFormat::BinaryLittleEndian)?;
        write_json(&emit(ERROR_REPORT_JSON), &em.report())
    })()
    .map_err(|e| e.in_stage("error_map"))?;
    timings.error_map = lap();

    (|| -> Result<()> {
        write_ply(&emit(SKIN_PLY), &skin, PlyFormat::BinaryLittleEndian)?;
        write_json(&emit(TRANSFORM_JSON), &TransformFile::new(&reg))
    })()
    .map_err(|e| e.in_stage("output"))?;

    if let (Some(frames), Some(plane)) = (&frames, &config.plane) {
        (|| -> Result<()> {
            let to_probe = volume_to_probe(&reg.transform, frames)?;
            let slice = crate::volume::reformat_slice(&volume, &to_probe, plane)?;
            slice.save(&emit(FUSED_PGM), volume.min_value() as f64, volume.max_value() as f64)
        })()
        .map_err(|e| e.in_stage("fusion"))?;
    }
    timings.fusion = lap();
    timings.total = start.elapsed().as_secs_f64();

    let report = RunReport {
        volume_dims: volume.dims(),
        skin_vertices: skin.vertices().len(),
        skin_triangles: skin.triangles().len(),
        camera_vertices: camera.vertices().len(),
        transform: reg.transform,
        error: em.report(),
        timings,
        outputs: {
            let mut o = outputs;
            o.push(out.join(RUN_REPORT_JSON));
            o
        },
    };
    write_json(&out.join(RUN_REPORT_JSON), &report).map_err(|e| e.in_stage("output"))?;
    Ok(report)
}
