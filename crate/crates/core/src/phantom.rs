//! Synthetic fixtures: voxelised ellipsoidal bodies with optional bumps,
//! simulated depth-camera captures, and known-transform scenarios.

use nalgebra::{Point3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::registration::{Landmark, RigidTransform};
use crate::segmentation::{extract_skin_mesh, segment_volume, IsoValue};
use crate::volume::{Volume, VolumeGeometry};

/// A sphere unioned onto the body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub centre: [f64; 3],
    pub radius: f64,
}

impl Bump {
    fn contains(&self, p: &Point3<f64>) -> bool {
        (p - Point3::from(self.centre)).norm_squared() <= self.radius * self.radius
    }
}

/// An ellipsoidal body, optionally with bumps, voxelised on a grid centred
/// on the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub centre: [f64; 3],
    pub semi_axes: [f64; 3],
    #[serde(default)]
    pub bumps: Vec<Bump>,
    pub interior: i32,
    pub exterior: i32,
}

impl PhantomSpec {
    /// Plain ellipsoid centred in the grid, interior 100, exterior 0.
    pub fn ellipsoid(dims: [usize; 3], spacing: [f64; 3], semi_axes: [f64; 3]) -> Self {
        Self {
            dims,
            spacing,
            centre: [0.0; 3],
            semi_axes,
            bumps: Vec::new(),
            interior: 100,
            exterior: 0,
        }
    }

    /// Abdomen-sized body: wide left-right (x), shallower front-back (y),
    /// with three bumps that break its mirror symmetries. 2 mm voxels.
    pub fn abdomen() -> Self {
        Self {
            bumps: vec![
                Bump {
                    centre: [45.0, 70.0, 35.0],
                    radius: 22.0,
                },
                Bump {
                    centre: [-85.0, 55.0, -30.0],
                    radius: 18.0,
                },
                Bump {
                    centre: [10.0, 78.0, -55.0],
                    radius: 12.0,
                },
            ],
            ..Self::ellipsoid([160, 100, 110], [2.0; 3], [140.0, 85.0, 95.0])
        }
    }

    /// Same body without the bumps.
    pub fn symmetric(&self) -> Self {
        Self {
            bumps: Vec::new(),
            ..self.clone()
        }
    }

    pub fn geometry(&self) -> Result<VolumeGeometry> {
        let origin = Point3::from(std::array::from_fn(|a| {
            -((self.dims[a] as f64 - 1.0) / 2.0) * self.spacing[a]
        }));
        VolumeGeometry::axis_aligned(self.spacing, origin)
    }

    /// Half the grid extent along each axis, measured between voxel centres.
    fn half_extent(&self) -> [f64; 3] {
        std::array::from_fn(|a| (self.dims[a] as f64 - 1.0) / 2.0 * self.spacing[a])
    }

    /// The iso-value halfway between exterior and interior.
    pub fn iso(&self) -> f64 {
        (self.interior as f64 + self.exterior as f64) / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.interior <= self.exterior {
            return Err(Error::InvalidParameter(format!(
                "interior value {} must exceed exterior value {}",
                self.interior, self.exterior
            )));
        }
        if self.dims.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "dims must be positive, got {:?}",
                self.dims
            )));
        }
        if self.semi_axes.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "semi-axes must be non-negative, got {:?}",
                self.semi_axes
            )));
        }
        let half = self.half_extent();
        let fits = |c: &[f64; 3], r: [f64; 3]| (0..3).all(|a| (c[a].abs() + r[a]) <= half[a]);
        if !fits(&self.centre, self.semi_axes) {
            return Err(Error::InvalidParameter(format!(
                "body with semi-axes {:?} at {:?} does not fit in a grid of half-extent {half:?} mm",
                self.semi_axes, self.centre
            )));
        }
        for b in &self.bumps {
            if !(b.radius >= 0.0) || !fits(&b.centre, [b.radius; 3]) {
                return Err(Error::InvalidParameter(format!("bump {b:?} does not fit in the grid")));
            }
        }
        Ok(())
    }

    pub fn in_ellipsoid(&self, p: &Point3<f64>) -> bool {
        if self.semi_axes.iter().any(|&s| s <= 0.0) {
            return false;
        }
        (0..3)
            .map(|a| ((p[a] - self.centre[a]) / self.semi_axes[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        self.in_ellipsoid(p) || self.bumps.iter().any(|b| b.contains(p))
    }

    /// Point where the ray from the body centre along `dir` leaves the
    /// ellipsoid (bumps ignored).
    pub fn surface_point(&self, dir: &Vector3<f64>) -> Point3<f64> {
        let s: f64 = (0..3).map(|a| (dir[a] / self.semi_axes[a]).powi(2)).sum();
        Point3::from(self.centre) + dir / s.sqrt()
    }
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Volume> {
    spec.validate()?;
    let geometry = spec.geometry()?;
    let [nx, ny, nz] = spec.dims;
    let mut data = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = geometry.index_to_world([i as f64, j as f64, k as f64]);
                data.push(if spec.contains(&p) {
                    spec.interior
                } else {
                    spec.exterior
                });
            }
        }
    }
    Volume::new(spec.dims, geometry, data)
}

/// Depth noise: zero-mean Gaussian along the viewing ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthNoise {
    /// Standard deviation at the reference distance, mm.
    pub sigma_mm: f64,
    /// When set, σ scales linearly with the vertex distance from the
    /// viewpoint: σ(d) = σ·d/d₀. When unset σ is constant.
    pub reference_distance_mm: Option<f64>,
}

impl Default for DepthNoise {
    fn default() -> Self {
        Self {
            sigma_mm: 0.0,
            reference_distance_mm: None,
        }
    }
}

impl DepthNoise {
    pub fn constant(sigma_mm: f64) -> Self {
        Self {
            sigma_mm,
            ..Self::default()
        }
    }

    /// σ(d) = σ₀·d/d₀.
    pub fn scaled(sigma_mm: f64, reference_distance_mm: f64) -> Self {
        Self {
            sigma_mm,
            reference_distance_mm: Some(reference_distance_mm),
        }
    }

    /// σ for a vertex at `distance` from the viewpoint.
    pub fn sigma(&self, distance: f64) -> f64 {
        match self.reference_distance_mm {
            Some(d0) => self.sigma_mm * distance / d0,
            None => self.sigma_mm,
        }
    }
}

/// A depth camera orbiting the body around its head-feet (z) axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSimSpec {
    /// Point the camera looks at, mm.
    pub target: [f64; 3],
    /// Distance from the target to the viewpoint, mm.
    pub distance_mm: f64,
    /// Orbit angle about the head-feet axis: 0° views straight down the
    /// anterior axis, 90° views the body's left flank.
    pub tilt_deg: f64,
    /// Full cone angle of the field of view, degrees.
    pub fov_deg: f64,
    pub noise: DepthNoise,
    pub dropout: f64,
    pub seed: u64,
}

impl CameraSimSpec {
    /// Camera aimed at the ellipsoid surface point in the viewing direction.
    pub fn looking_at(body: &PhantomSpec, distance_mm: f64, tilt_deg: f64) -> Self {
        let dir = orbit_direction(tilt_deg);
        let target = body.surface_point(&dir);
        Self {
            target: [target.x, target.y, target.z],
            distance_mm,
            tilt_deg,
            fov_deg: 90.0,
            noise: DepthNoise::default(),
            dropout: 0.0,
            seed: 0,
        }
    }

    /// Unit vector from the target towards the viewpoint.
    pub fn back_direction(&self) -> Vector3<f64> {
        orbit_direction(self.tilt_deg)
    }

    pub fn viewpoint(&self) -> Point3<f64> {
        Point3::from(self.target) + self.distance_mm * self.back_direction()
    }

    pub fn view_direction(&self) -> Vector3<f64> {
        -self.back_direction()
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.noise;
        if !(n.sigma_mm >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise σ must be non-negative, got {}",
                n.sigma_mm
            )));
        }
        if let Some(d0) = n.reference_distance_mm {
            if !(d0 > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "reference distance must be positive, got {d0}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParameter(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.distance_mm > 0.0) || !(self.fov_deg > 0.0 && self.fov_deg <= 360.0) {
            return Err(Error::InvalidParameter(
                "camera distance and field of view must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn orbit_direction(tilt_deg: f64) -> Vector3<f64> {
    let t = tilt_deg.to_radians();
    Vector3::new(t.sin(), t.cos(), 0.0)
}

/// A simulated capture and, for each of its vertices, the index of the
/// input vertex it was generated from.
#[derive(Debug, Clone)]
pub struct CameraCapture {
    pub mesh: TriangleMesh,
    pub source_indices: Vec<usize>,
}

/// Keep the vertices facing the camera inside its field of view, drop a
/// seeded random `dropout` fraction, and displace the rest along their
/// viewing rays by Gaussian depth noise.
pub fn simulate_camera(mesh: &TriangleMesh, spec: &CameraSimSpec) -> Result<CameraCapture> {
    spec.validate()?;
    let eye = spec.viewpoint();
    let axis = spec.view_direction();
    let cos_half_fov = (spec.fov_deg.to_radians() / 2.0).cos();
    let visible: Vec<bool> = mesh
        .vertices()
        .iter()
        .zip(mesh.normals())
        .map(|(p, n)| {
            let ray = p - eye;
            n.dot(&-ray) > 0.0 && ray.normalize().dot(&axis) >= cos_half_fov
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen: Vec<usize> = (0..visible.len()).filter(|&i| visible[i]).collect();
    let drop = (spec.dropout * seen.len() as f64).round() as usize;
    if drop > 0 {
        seen.shuffle(&mut rng);
        seen.truncate(seen.len() - drop);
        seen.sort_unstable();
    }
    if seen.is_empty() {
        return Err(Error::Empty("visible surface"));
    }
    let mut keep = vec![false; visible.len()];
    for &i in &seen {
        keep[i] = true;
    }
    let (subset, source_indices) = mesh.select_vertices(&keep);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let noisy: Vec<Point3<f64>> = subset
        .vertices()
        .iter()
        .map(|p| {
            let ray = p - eye;
            let d = ray.norm();
            let u = ray / d;
            let sigma = spec.noise.sigma(d);
            let eps: f64 = unit.sample(&mut rng);
            if sigma > 0.0 {
                p + u * (sigma * eps)
            } else {
                *p
            }
        })
        .collect();
    let mesh = TriangleMesh::new(noisy, subset.triangles().to_vec())?;
    Ok(CameraCapture { mesh, source_indices })
}

/// Everything the registration path may see.
#[derive(Debug, Clone)]
pub struct ScenarioInputs {
    pub volume: Volume,
    pub iso: f64,
    /// Skin surface of `volume`, as the segmentation pipeline produces it.
    pub skin: TriangleMesh,
    /// Camera capture in camera coordinates.
    pub camera: TriangleMesh,
    /// The camera's central ray hit point on each surface.
    pub landmark: Landmark,
}

/// Known answers for scoring, kept apart from [`ScenarioInputs`].
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth {
    /// Maps volume coordinates onto camera coordinates.
    pub transform: RigidTransform,
    /// Body centre in volume coordinates.
    pub body_centre: Point3<f64>,
}

/// Build a phantom, extract its skin, capture it with the simulated camera
/// and move the capture by `truth`.
pub fn scenario(
    spec: &PhantomSpec,
    cam: &CameraSimSpec,
    truth: &RigidTransform,
) -> Result<(ScenarioInputs, GroundTruth)> {
    let volume = make_phantom(spec)?;
    let iso = spec.iso();
    let labels = segment_volume(&volume, IsoValue::new(iso)?)?;
    let skin = extract_skin_mesh(&labels, volume.geometry())?;
    scenario_from_skin(volume, iso, skin, spec, cam, truth)
}

/// [`scenario`] reusing an already extracted skin mesh of `volume`.
pub fn scenario_from_skin(
    volume: Volume,
    iso: f64,
    skin: TriangleMesh,
    spec: &PhantomSpec,
    cam: &CameraSimSpec,
    truth: &RigidTransform,
) -> Result<(ScenarioInputs, GroundTruth)> {
    let capture = simulate_camera(&skin, cam)?;
    let eye = cam.viewpoint();
    let axis = cam.view_direction();
    // The captured vertex closest to the central ray, ties to lower index.
    let off_axis = |p: &Point3<f64>| {
        let v = p - eye;
        (v - axis * v.dot(&axis)).norm()
    };
    let source = &capture.source_indices;
    let best = (0..source.len())
        .min_by(|&a, &b| {
            off_axis(&skin.vertices()[source[a]])
                .total_cmp(&off_axis(&skin.vertices()[source[b]]))
                .then(a.cmp(&b))
        })
        .expect("capture is non-empty");
    let camera = capture.mesh.transformed(truth);
    let landmark = Landmark::new(skin.vertices()[source[best]], camera.vertices()[best]);
    Ok((
        ScenarioInputs {
            volume,
            iso,
            skin,
            camera,
            landmark,
        },
        GroundTruth {
            transform: *truth,
            body_centre: Point3::from(spec.centre),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn ellipsoid_voxel_count_matches_volume() {
        let spec = PhantomSpec::ellipsoid([128; 3], [2.0; 3], [100.0, 60.0, 40.0]);
        let vol = make_phantom(&spec).unwrap();
        let inside = vol.data().iter().filter(|&&v| v == spec.interior).count() as f64;
        let analytic = 4.0 / 3.0 * PI * 100.0 * 60.0 * 40.0 / 8.0;
        assert!((inside - analytic).abs() / analytic < 0.02, "{inside} vs {analytic}");
    }

    #[test]
    fn zero_radius_body_is_empty() {
        let spec = PhantomSpec::ellipsoid([10; 3], [1.0; 3], [0.0; 3]);
        assert!(make_phantom(&spec).unwrap().data().iter().all(|&v| v == spec.exterior));
    }

    #[test]
    fn bumps_change_only_their_region() {
        let spec = PhantomSpec::abdomen();
        let with = make_phantom(&spec).unwrap();
        let without = make_phantom(&spec.symmetric()).unwrap();
        let geo = with.geometry();
        let [nx, ny, nz] = with.dims();
        let mut changed = 0;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let p = geo.index_to_world([i as f64, j as f64, k as f64]);
                    let in_bump_only = !spec.in_ellipsoid(&p) && spec.bumps.iter().any(|b| b.contains(&p));
                    let differs = with.get(i, j, k) != without.get(i, j, k);
                    assert_eq!(differs, in_bump_only);
                    changed += differs as usize;
                }
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn invalid_specs() {
        let mut s = PhantomSpec::ellipsoid([10; 3], [1.0; 3], [3.0; 3]);
        s.interior = -1;
        assert!(make_phantom(&s).is_err());
        let s = PhantomSpec::ellipsoid([10; 3], [1.0; 3], [6.0, 3.0, 3.0]);
        assert!(make_phantom(&s).is_err());
    }

    fn skin_of(spec: &PhantomSpec) -> TriangleMesh {
        let vol = make_phantom(spec).unwrap();
        let labels = segment_volume(&vol, IsoValue::new(spec.iso()).unwrap()).unwrap();
        extract_skin_mesh(&labels, vol.geometry()).unwrap()
    }

    fn small() -> PhantomSpec {
        PhantomSpec::ellipsoid([60, 44, 44], [2.0; 3], [50.0, 35.0, 35.0])
    }

    #[test]
    fn noiseless_capture_is_a_subset() {
        let spec = small();
        let skin = skin_of(&spec);
        let mut cam = CameraSimSpec::looking_at(&spec, 200.0, 0.0);
        cam.fov_deg = 360.0;
        let cap = simulate_camera(&skin, &cam).unwrap();
        assert!(!cap.mesh.is_empty());
        for (p, &i) in cap.mesh.vertices().iter().zip(&cap.source_indices) {
            assert_eq!(*p, skin.vertices()[i]);
            // Frontal capture only sees the anterior half.
            assert!(p.y > -5.0);
        }
    }

    #[test]
    fn depth_noise_half_normal_mean() {
        let spec = small();
        let skin = skin_of(&spec);
        let mut cam = CameraSimSpec::looking_at(&spec, 200.0, 0.0);
        cam.noise = DepthNoise::constant(1.0);
        cam.seed = 5;
        let cap = simulate_camera(&skin, &cam).unwrap();
        let n = cap.source_indices.len() as f64;
        let mean = cap
            .mesh
            .vertices()
            .iter()
            .zip(&cap.source_indices)
            .map(|(p, &i)| (p - skin.vertices()[i]).norm())
            .sum::<f64>()
            / n;
        let expected = (2.0 / PI).sqrt();
        assert!((mean - expected).abs() / expected < 0.1, "mean {mean}, n {n}");
    }

    #[test]
    fn farther_camera_is_noisier() {
        let noise = DepthNoise::scaled(1.0, 200.0);
        assert!(noise.sigma(350.0) > noise.sigma(200.0));
        assert_eq!(noise.sigma(200.0), 1.0);
        assert_eq!(DepthNoise::constant(1.0).sigma(350.0), 1.0);
    }

    #[test]
    fn dropout_and_seeding() {
        let spec = small();
        let skin = skin_of(&spec);
        let mut cam = CameraSimSpec::looking_at(&spec, 200.0, 30.0);
        let full = simulate_camera(&skin, &cam).unwrap();
        cam.dropout = 0.25;
        cam.noise = DepthNoise::constant(0.5);
        let a = simulate_camera(&skin, &cam).unwrap();
        let b = simulate_camera(&skin, &cam).unwrap();
        assert_eq!(a.mesh, b.mesh);
        let expected = full.source_indices.len() - (0.25 * full.source_indices.len() as f64).round() as usize;
        assert_eq!(a.source_indices.len(), expected);
        cam.seed = 1;
        assert_ne!(simulate_camera(&skin, &cam).unwrap().mesh, a.mesh);
    }

    #[test]
    fn scenario_landmarks_correspond() {
        let spec = small();
        let truth = RigidTransform::from_axis_angle(&Vector3::z(), 0.2, Vector3::new(5.0, 0.0, 3.0));
        let cam = CameraSimSpec::looking_at(&spec, 250.0, 0.0);
        let (inputs, gt) = scenario(&spec, &cam, &truth).unwrap();
        let moved = gt.transform.apply_point(&inputs.landmark.segmented);
        assert!((moved - inputs.landmark.camera).norm() < 1e-9);
        // The landmark sits on the front of the body, close to the aim point.
        assert!((inputs.landmark.segmented - Point3::from(cam.target)).norm() < 4.0);
    }
}
