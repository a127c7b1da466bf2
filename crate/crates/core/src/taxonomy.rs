//! Scene categories and the sample records both samplers emit.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_raster::Rect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Natural,
    ManMade,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Natural => "natural",
            SourceKind::ManMade => "man-made",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Natural land-cover classes; the index is the class id used in land-cover rasters.
pub const NATURAL_NAMES: [&str; 9] = [
    "Forest",
    "Grassland",
    "Shrubland",
    "Cropland",
    "Wetland",
    "Water",
    "Tundra",
    "Bareland",
    "Snow/Ice",
];

pub const MAN_MADE_NAMES: [&str; 22] = [
    "Airport",
    "Parking",
    "Commercial area",
    "Residential area",
    "School",
    "Industrial area",
    "Harbor",
    "Railway station",
    "Bridge",
    "Highway interchange",
    "Religious site",
    "Hospital",
    "Stadium",
    "Golf course",
    "Park",
    "Cemetery",
    "Power plant",
    "Storage tanks",
    "Wastewater plant",
    "Solar farm",
    "Dam",
    "Sports center",
];

/// A scene category. Natural ids are `0..9`, man-made ids `9..31`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SceneCategory {
    id: u8,
}

impl SceneCategory {
    pub const COUNT: usize = NATURAL_NAMES.len() + MAN_MADE_NAMES.len();

    pub fn natural(class_id: usize) -> Option<Self> {
        (class_id < NATURAL_NAMES.len()).then_some(SceneCategory { id: class_id as u8 })
    }

    pub fn man_made(index: usize) -> Option<Self> {
        (index < MAN_MADE_NAMES.len()).then(|| SceneCategory {
            id: (NATURAL_NAMES.len() + index) as u8,
        })
    }

    pub fn from_id(id: usize) -> Option<Self> {
        (id < Self::COUNT).then_some(SceneCategory { id: id as u8 })
    }

    /// Exact, case-sensitive lookup by display name.
    pub fn from_name(name: &str) -> Result<Self> {
        Self::all()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::UnknownCategory(name.to_string()))
    }

    pub fn all() -> impl Iterator<Item = SceneCategory> {
        (0..Self::COUNT).map(|id| SceneCategory { id: id as u8 })
    }

    pub fn id(self) -> usize {
        self.id as usize
    }

    pub fn kind(self) -> SourceKind {
        if self.id() < NATURAL_NAMES.len() {
            SourceKind::Natural
        } else {
            SourceKind::ManMade
        }
    }

    pub fn name(self) -> &'static str {
        match self.kind() {
            SourceKind::Natural => NATURAL_NAMES[self.id()],
            SourceKind::ManMade => MAN_MADE_NAMES[self.id() - NATURAL_NAMES.len()],
        }
    }
}

impl fmt::Display for SceneCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A sampled window with its noisy label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: String,
    pub window: Rect,
    pub label: SceneCategory,
    pub score: Option<f64>,
}

impl Sample {
    pub fn kind(&self) -> SourceKind {
        self.label.kind()
    }
}
