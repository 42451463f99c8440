use std::path::Path;

use nalgebra::{Point3, Vector3};

use skinfuse::mesh::ply::{write_ply, PlyFormat};
use skinfuse::phantom::{make_phantom, scenario, CameraSimSpec, DepthNoise, PhantomSpec};
use skinfuse::pipeline::{run_pipeline, PipelineConfig, RUN_REPORT_JSON};
use skinfuse::registration::RigidTransform;
use skinfuse::tracking::{volume_to_probe, FrameRegistry, CAMERA, PROBE};
use skinfuse::volume::{reformat_slice, save_volume, PlaneSpec};

/// Writes a frontal abdomen scenario into `dir` and returns its config.
fn write_scenario(dir: &Path, sigma: f64) -> PipelineConfig {
    let spec = PhantomSpec::abdomen();
    let mut cam = CameraSimSpec::looking_at(&spec, 250.0, 0.0);
    cam.noise = DepthNoise::constant(sigma);
    cam.seed = 11;
    let truth = RigidTransform::from_axis_angle(&Vector3::z(), 8f64.to_radians(), Vector3::new(-12.0, 20.0, 5.0));
    let (inputs, _) = scenario(&spec, &cam, &truth).unwrap();
    save_volume(&inputs.volume, &dir.join("body.hdr")).unwrap();
    write_ply(&dir.join("camera.ply"), &inputs.camera, PlyFormat::BinaryLittleEndian).unwrap();
    PipelineConfig::new(
        dir.join("body.hdr"),
        inputs.iso,
        dir.join("camera.ply"),
        inputs.landmark,
        dir.join("out"),
    )
}

#[test]
fn phantom_end_to_end_error_under_a_centimetre() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scenario(dir.path(), 0.5);
    let report = run_pipeline(&config).unwrap();
    assert!(report.error.hausdorff_mm < 10.0, "{}", report.error.hausdorff_mm);
    assert!(report.timings.total >= report.timings.registration);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(config.output_dir.join(RUN_REPORT_JSON)).unwrap()).unwrap();
    for key in [
        "volume_reading",
        "segmentation",
        "skin_extraction",
        "registration",
        "error_map",
        "fusion",
        "total",
    ] {
        assert!(json["timings"][key].is_number());
    }
    assert!(report.outputs.iter().all(|p| p.is_file()));
}

#[test]
fn missing_iso_fails_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = write_scenario(dir.path(), 0.0);
    config.iso = None;
    let err = run_pipeline(&config).unwrap_err();
    assert_eq!(err.stage(), Some("configuration"));
    assert!(!config.output_dir.exists());
}

#[test]
fn config_requires_frames_and_plane_together() {
    let text = r#"{"volume": "v.hdr", "iso": 50, "camera": "c.ply", "output_dir": "out",
        "landmark": {"segmented": [0, 0, 0], "camera": [0, 0, 0]},
        "plane": {"origin": [0,0,0], "u": [1,0,0], "v": [0,1,0], "extent": [10,10], "resolution": 1}}"#;
    let config = PipelineConfig::from_json(text).unwrap();
    assert!(config.validate().is_err());
    assert!(PipelineConfig::from_json(&text.replace("\"iso\"", "\"isovalue\"")).is_err());
}

#[test]
fn fused_slice_follows_the_probe() {
    // Registration and camera pose are identities, so the probe pose alone
    // places the image plane in the volume.
    let spec = PhantomSpec::abdomen().symmetric();
    let volume = make_phantom(&spec).unwrap();
    let plane = PlaneSpec {
        origin: [-100.0, -100.0, 0.0],
        u: [1.0, 0.0, 0.0],
        v: [0.0, 1.0, 0.0],
        extent: [200.0, 200.0],
        resolution: 1.0,
    };
    let centre = (100, 100);
    let mut seen = Vec::new();
    for angle in [0.0, 30.0, 75.0f64] {
        let mut frames = FrameRegistry::new();
        frames.insert(CAMERA, RigidTransform::identity()).unwrap();
        let probe = RigidTransform::from_axis_angle(&Vector3::x(), angle.to_radians(), Vector3::zeros());
        frames.insert(PROBE, probe).unwrap();
        let xf = volume_to_probe(&RigidTransform::identity(), &frames).unwrap();
        let slice = reformat_slice(&volume, &xf, &plane).unwrap();
        // The plane passes through the body centre whatever the tilt.
        assert_eq!(slice.get(centre.0, centre.1), spec.interior as f64);
        // 90 mm along the probe's v axis leaves the body at 0° and is
        // still inside at 75°; the slice agrees with the phantom.
        let p = probe.apply_point(&Point3::new(0.0, 90.0, 0.0));
        let inside = spec.contains(&p);
        let value = slice.get(centre.0, centre.1 + 90);
        assert_eq!(
            value == spec.interior as f64,
            inside,
            "angle {angle}, point {p:?}, value {value}"
        );
        seen.push(inside);
    }
    assert_eq!(seen, [false, false, true]);
}
