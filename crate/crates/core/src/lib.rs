//! Skin-surface co-registration for CT/MR to ultrasound fusion.
//!
//! The pipeline segments the skin of a volume slice by slice with a flood
//! fill from the image corners, triangulates it, and rigidly registers its
//! anterior part to a surface captured by a depth camera. The residual
//! misalignment is reported as a per-vertex distance map, and the
//! registration, chained with tracked sensor poses, resamples the volume in
//! the ultrasound probe's image plane.
//!
//! ```
//! use skinfuse::phantom::{make_phantom, PhantomSpec};
//! use skinfuse::segmentation::{extract_skin_mesh, segment_volume, IsoValue};
//!
//! let spec = PhantomSpec::ellipsoid([40, 32, 24], [2.0; 3], [30.0, 20.0, 15.0]);
//! let volume = make_phantom(&spec).unwrap();
//! let labels = segment_volume(&volume, IsoValue::new(50.0).unwrap()).unwrap();
//! let skin = extract_skin_mesh(&labels, volume.geometry()).unwrap();
//! assert!(skin.signed_volume() > 0.0);
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod errormap;
pub mod mesh;
pub mod phantom;
pub mod pipeline;
pub mod registration;
pub mod segmentation;
pub mod tracking;
pub mod volume;

pub use error::{Error, Result};
pub use mesh::{KdTree, TriangleMesh};
pub use registration::{coregister, Landmark, RigidTransform};
pub use volume::{Volume, VolumeGeometry};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/segmentation.md")]
    mod segmentation {}
    #[doc = include_str!("../../../book/src/registration.md")]
    mod registration {}
    #[doc = include_str!("../../../book/src/error-maps.md")]
    mod error_maps {}
    #[doc = include_str!("../../../book/src/tracking.md")]
    mod tracking {}
    #[doc = include_str!("../../../book/src/phantoms.md")]
    mod phantoms {}
}
