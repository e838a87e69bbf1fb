//! Land-use legends: ordered class → colour tables.
//!
//! Two legends ship with the crate. [`Legend::park`] holds the six design
//! element classes plus a background class for everything outside the site.
//! [`Legend::environment`] holds the urban context classes extracted from
//! overhead imagery and the site ("red line") mask.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    ParkElement,
    EnvironmentElement,
    Mask,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub class_id: u8,
    pub name: String,
    pub r: u8,
    pub g: u8,
    pub b: u8,
    pub role: Role,
}

impl LegendEntry {
    pub fn rgb(&self) -> [u8; 3] {
        [self.r, self.g, self.b]
    }
}

/// The six park element colours, byte-exact.
pub const PARK_ELEMENTS: [(&str, [u8; 3]); 6] = [
    ("Green land", [0, 255, 0]),
    ("Water", [0, 255, 255]),
    ("Roads", [241, 145, 73]),
    ("Paving", [255, 255, 0]),
    ("Structures", [255, 0, 255]),
    ("Plant", [0, 152, 67]),
];

pub mod park {
    pub const GREEN_LAND: u8 = 0;
    pub const WATER: u8 = 1;
    pub const ROADS: u8 = 2;
    pub const PAVING: u8 = 3;
    pub const STRUCTURES: u8 = 4;
    pub const PLANT: u8 = 5;
    pub const BACKGROUND: u8 = 6;
}

pub mod env {
    pub const URBAN_ROAD: u8 = 0;
    pub const BUILDING: u8 = 1;
    pub const HARD_GROUND: u8 = 2;
    pub const BACKGROUND: u8 = 3;
    pub const WATER: u8 = 4;
    pub const SITE: u8 = 5;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Legend {
    pub name: String,
    pub entries: Vec<LegendEntry>,
}

impl Legend {
    /// Builds and validates a legend.
    pub fn new(name: impl Into<String>, entries: Vec<LegendEntry>) -> Result<Self> {
        let legend = Self {
            name: name.into(),
            entries,
        };
        legend.validate()?;
        Ok(legend)
    }

    pub fn park() -> Self {
        let mut entries: Vec<LegendEntry> = PARK_ELEMENTS
            .iter()
            .enumerate()
            .map(|(i, (name, [r, g, b]))| LegendEntry {
                class_id: i as u8,
                name: (*name).to_string(),
                r: *r,
                g: *g,
                b: *b,
                role: Role::ParkElement,
            })
            .collect();
        entries.push(entry(park::BACKGROUND, "Background/other", [255, 255, 255], Role::EnvironmentElement));
        Self::new("park", entries).expect("built-in park legend is valid")
    }

    /// Colours here are configuration: overhead imagery has no standard
    /// encoding for urban context classes.
    pub fn environment() -> Self {
        let entries = vec![
            entry(env::URBAN_ROAD, "Urban road", [128, 128, 128], Role::EnvironmentElement),
            entry(env::BUILDING, "Building", [255, 0, 255], Role::EnvironmentElement),
            entry(env::HARD_GROUND, "Bare/hard ground", [200, 200, 200], Role::EnvironmentElement),
            entry(env::BACKGROUND, "Background/other", [255, 255, 255], Role::EnvironmentElement),
            entry(env::WATER, "Water", [0, 255, 255], Role::EnvironmentElement),
            entry(env::SITE, "Red line / site", [255, 0, 0], Role::Mask),
        ];
        Self::new("environment", entries).expect("built-in environment legend is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, class_id: u8) -> Option<&LegendEntry> {
        self.entries.get(class_id as usize)
    }

    pub fn contains(&self, class_id: u8) -> bool {
        (class_id as usize) < self.entries.len()
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.class_id)
    }

    pub fn ids_with_role(&self, role: Role) -> Vec<u8> {
        self.entries
            .iter()
            .filter(|e| e.role == role)
            .map(|e| e.class_id)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.len() > 256 {
            return Err(Error::structural("legend has more than 256 classes"));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.class_id as usize != i {
                return Err(Error::structural(format!(
                    "legend `{}`: class ids must be contiguous from 0, entry {i} has id {}",
                    self.name, e.class_id
                )));
            }
            if let Some(other) = self.entries[..i].iter().find(|o| o.rgb() == e.rgb()) {
                return Err(Error::structural(format!(
                    "legend `{}`: `{}` and `{}` share colour {:?}",
                    self.name,
                    other.name,
                    e.name,
                    e.rgb()
                )));
            }
            if e.role == Role::ParkElement {
                match PARK_ELEMENTS.iter().find(|(n, _)| *n == e.name) {
                    Some((_, rgb)) if *rgb == e.rgb() => {}
                    Some((_, rgb)) => {
                        return Err(Error::structural(format!(
                            "park element `{}` must be {rgb:?}, got {:?}",
                            e.name,
                            e.rgb()
                        )))
                    }
                    None => {
                        return Err(Error::structural(format!(
                            "`{}` is not one of the six park element classes",
                            e.name
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("legend serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let legend: Legend =
            toml::from_str(text).map_err(|e| Error::config(format!("legend: {e}")))?;
        legend.validate()?;
        Ok(legend)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

fn entry(class_id: u8, name: &str, [r, g, b]: [u8; 3], role: Role) -> LegendEntry {
    LegendEntry {
        class_id,
        name: name.to_string(),
        r,
        g,
        b,
        role,
    }
}
