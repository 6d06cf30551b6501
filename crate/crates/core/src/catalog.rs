//! Class catalogs: the ordered list of semantic classes a pipeline runs on.
//!
//! Channel index equals class id everywhere in this crate. To make that work
//! for grids that carry only a prefix of the catalog (BEV maps hold just the
//! background classes, object-augmented maps background + foreground), a
//! catalog is required to list background classes first, then foreground
//! classes, then the single unknown class last.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Error;
use crate::Result;

/// Occlusion role of a semantic class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ClassRole {
    /// Scene layout: survives the projection into the top view.
    Background,
    /// Occluders (cars, pedestrians): masked out of the perspective input.
    Foreground,
    /// Catch-all for cells with no evidence; exactly one per catalog.
    Unknown,
}

/// One catalog entry. Ids are dense and equal the entry's position.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassDef {
    pub name: String,
    pub id: u8,
    pub role: ClassRole,
}

/// Ordered semantic class list with dense ids `0..C`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassCatalog {
    classes: Vec<ClassDef>,
    num_background: usize,
    num_foreground: usize,
}

impl ClassCatalog {
    /// Builds a catalog from `(name, role)` pairs, assigning ids by position.
    ///
    /// The order must be: all background classes, then all foreground
    /// classes, then exactly one unknown class.
    pub fn new<S: Into<String>>(classes: Vec<(S, ClassRole)>) -> Result<Self> {
        let defs: Vec<ClassDef> = classes
            .into_iter()
            .enumerate()
            .map(|(id, (name, role))| ClassDef { name: name.into(), id: id as u8, role })
            .collect();
        if defs.is_empty() || defs.len() > 256 {
            return Err(Error::InvalidCatalog("need between 1 and 256 classes".into()));
        }

        let num_background = defs.iter().take_while(|d| d.role == ClassRole::Background).count();
        let num_foreground = defs[num_background..]
            .iter()
            .take_while(|d| d.role == ClassRole::Foreground)
            .count();
        let tail = &defs[num_background + num_foreground..];
        if tail.len() != 1 || tail[0].role != ClassRole::Unknown {
            return Err(Error::InvalidCatalog(
                "classes must be ordered background*, foreground*, unknown (exactly one unknown, last)"
                    .into(),
            ));
        }
        for (i, d) in defs.iter().enumerate() {
            if defs[..i].iter().any(|e| e.name == d.name) {
                let mut msg = String::from("duplicate class name: ");
                msg.push_str(&d.name);
                return Err(Error::InvalidCatalog(msg));
            }
        }
        Ok(Self { classes: defs, num_background, num_foreground })
    }

    /// The catalog used by the CLI and the synthetic pipeline: three layout
    /// classes, two occluder classes, unknown.
    pub fn default_road_scene() -> Self {
        Self::new(alloc::vec![
            ("road", ClassRole::Background),
            ("sidewalk", ClassRole::Background),
            ("background", ClassRole::Background),
            ("car", ClassRole::Foreground),
            ("person", ClassRole::Foreground),
            ("unknown", ClassRole::Unknown),
        ])
        .expect("built-in catalog is well-formed")
    }

    pub fn classes(&self) -> &[ClassDef] {
        &self.classes
    }

    /// Total class count C.
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Background class count; BEV grids carry exactly this many channels.
    pub fn num_background(&self) -> usize {
        self.num_background
    }

    /// Foreground class count.
    pub fn num_foreground(&self) -> usize {
        self.num_foreground
    }

    /// Id of the unknown class (always the last id).
    pub fn unknown_id(&self) -> u8 {
        (self.classes.len() - 1) as u8
    }

    pub fn role_of(&self, id: u8) -> Option<ClassRole> {
        self.classes.get(id as usize).map(|d| d.role)
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.classes.iter().find(|d| d.name == name).map(|d| d.id)
    }

    pub fn name_of(&self, id: u8) -> Option<&str> {
        self.classes.get(id as usize).map(|d| d.name.as_str())
    }

    /// Ids of all background classes (the dense prefix `0..num_background`).
    pub fn background_ids(&self) -> Vec<u8> {
        (0..self.num_background as u8).collect()
    }

    /// Ids of all foreground classes.
    pub fn foreground_ids(&self) -> Vec<u8> {
        (self.num_background as u8..(self.num_background + self.num_foreground) as u8).collect()
    }

    /// Checks that `channels` is a legal channel count for grids under this
    /// catalog: any prefix from the background classes up to the full set.
    pub fn check_channels(&self, channels: usize) -> Result<()> {
        if channels >= self.num_background && channels <= self.num_classes() {
            Ok(())
        } else {
            let mut expected = String::from("between C^bg and C channels");
            expected.push_str(" (prefix of the catalog)");
            Err(Error::CatalogMismatch { channels, expected })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_catalog_counts() {
        let cat = ClassCatalog::default_road_scene();
        assert_eq!(cat.num_classes(), 6);
        assert_eq!(cat.num_background(), 3);
        assert_eq!(cat.num_foreground(), 2);
        assert_eq!(cat.num_background() + cat.num_foreground() + 1, cat.num_classes());
        assert_eq!(cat.unknown_id(), 5);
        assert_eq!(cat.id_of("road"), Some(0));
        assert_eq!(cat.id_of("car"), Some(3));
        assert_eq!(cat.role_of(4), Some(ClassRole::Foreground));
    }

    #[test]
    fn rejects_bad_orderings() {
        assert!(ClassCatalog::new(alloc::vec![
            ("car", ClassRole::Foreground),
            ("road", ClassRole::Background),
            ("unknown", ClassRole::Unknown),
        ])
        .is_err());
        // no unknown
        assert!(ClassCatalog::new(alloc::vec![("road", ClassRole::Background)]).is_err());
        // two unknowns
        assert!(ClassCatalog::new(alloc::vec![
            ("road", ClassRole::Background),
            ("u1", ClassRole::Unknown),
            ("u2", ClassRole::Unknown),
        ])
        .is_err());
        // duplicate name
        assert!(ClassCatalog::new(alloc::vec![
            ("road", ClassRole::Background),
            ("road", ClassRole::Background),
            ("unknown", ClassRole::Unknown),
        ])
        .is_err());
    }

    #[test]
    fn channel_prefix_rule() {
        let cat = ClassCatalog::default_road_scene();
        assert!(cat.check_channels(3).is_ok()); // background only
        assert!(cat.check_channels(5).is_ok()); // background + foreground
        assert!(cat.check_channels(6).is_ok()); // full
        assert!(cat.check_channels(2).is_err());
        assert!(cat.check_channels(7).is_err());
    }
}
