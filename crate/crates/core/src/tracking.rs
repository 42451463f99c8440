//! Static frame registry for a single electromagnetic transmitter. Every
//! frame is posed directly against the transmitter ("tracker") frame.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::{RigidTransform, RigidTransformJson};

pub const TRACKER: &str = "tracker";
pub const CAMERA: &str = "camera";
pub const PROBE: &str = "probe";

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub name: String,
    /// Maps coordinates in this frame to tracker coordinates.
    pub pose: RigidTransform,
}

#[derive(Serialize, Deserialize)]
struct FrameJson {
    name: String,
    #[serde(flatten)]
    pose: RigidTransformJson,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameRegistry {
    frames: BTreeMap<String, RigidTransform>,
}

impl FrameRegistry {
    /// A registry holding only the tracker frame.
    pub fn new() -> Self {
        let mut frames = BTreeMap::new();
        frames.insert(TRACKER.to_string(), RigidTransform::identity());
        Self { frames }
    }

    pub fn from_frames(frames: impl IntoIterator<Item = Frame>) -> Result<Self> {
        let mut reg = Self::new();
        for f in frames {
            reg.insert(&f.name, f.pose)?;
        }
        Ok(reg)
    }

    /// Register or replace a frame. The tracker frame itself is fixed.
    pub fn insert(&mut self, name: &str, pose: RigidTransform) -> Result<()> {
        if name == TRACKER {
            if pose != RigidTransform::identity() {
                return Err(Error::InvalidParameter("the tracker frame pose is the identity".into()));
            }
            return Ok(());
        }
        if name.is_empty() {
            return Err(Error::InvalidParameter("frame name is empty".into()));
        }
        self.frames.insert(name.to_string(), pose);
        Ok(())
    }

    pub fn pose(&self, name: &str) -> Result<&RigidTransform> {
        self.frames
            .get(name)
            .ok_or_else(|| Error::UnknownFrame(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.frames.keys().map(String::as_str)
    }

    /// Transform taking `from` coordinates to `to` coordinates.
    pub fn resolve(&self, from: &str, to: &str) -> Result<RigidTransform> {
        let a = self.pose(from)?;
        let b = self.pose(to)?;
        Ok(b.inverse().then_after(a))
    }

    pub fn parse_json(text: &str) -> Result<Self> {
        let list: Vec<FrameJson> =
            serde_json::from_str(text).map_err(|e| Error::format("frames JSON", e.to_string()))?;
        let frames = list
            .iter()
            .map(|f| {
                Ok(Frame {
                    name: f.name.clone(),
                    pose: RigidTransform::try_from(&f.pose)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_frames(frames)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_json(&text)
    }

    pub fn to_json(&self) -> String {
        let list: Vec<FrameJson> = self
            .frames
            .iter()
            .filter(|(n, _)| n.as_str() != TRACKER)
            .map(|(n, p)| FrameJson {
                name: n.clone(),
                pose: p.into(),
            })
            .collect();
        serde_json::to_string_pretty(&list).expect("frames serialise")
    }
}

/// Map volume coordinates into the probe frame, given the co-registration
/// (volume to camera). The camera sensor is taken to coincide with the
/// camera's optical frame.
pub fn volume_to_probe(coreg: &RigidTransform, frames: &FrameRegistry) -> Result<RigidTransform> {
    Ok(frames.resolve(CAMERA, PROBE)?.then_after(coreg))
}
