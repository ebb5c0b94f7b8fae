//! Canonical anatomical-region and clinical-abnormality taxonomies.
//!
//! Every report section is keyed by one of the 10 regions, and every
//! abnormality-logit vector is indexed by the 18 abnormalities, in the
//! canonical orders defined here.

use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

/// One of the 10 anatomical regions a report section can describe.
///
/// The declaration order is the canonical order used for report
/// serialization and section iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegionId {
    Abdomen,
    Bone,
    Breast,
    Heart,
    Esophagus,
    Lung,
    Mediastinum,
    Pleura,
    Thyroid,
    TracheaBronchi,
}

impl RegionId {
    /// All regions in canonical order.
    pub const ALL: [RegionId; 10] = [
        RegionId::Abdomen,
        RegionId::Bone,
        RegionId::Breast,
        RegionId::Heart,
        RegionId::Esophagus,
        RegionId::Lung,
        RegionId::Mediastinum,
        RegionId::Pleura,
        RegionId::Thyroid,
        RegionId::TracheaBronchi,
    ];

    pub const COUNT: usize = 10;

    pub fn name(self) -> &'static str {
        match self {
            RegionId::Abdomen => "abdomen",
            RegionId::Bone => "bone",
            RegionId::Breast => "breast",
            RegionId::Heart => "heart",
            RegionId::Esophagus => "esophagus",
            RegionId::Lung => "lung",
            RegionId::Mediastinum => "mediastinum",
            RegionId::Pleura => "pleura",
            RegionId::Thyroid => "thyroid",
            RegionId::TracheaBronchi => "trachea/bronchi",
        }
    }

    /// Case-insensitive lookup by canonical name.
    pub fn from_name(name: &str) -> Option<RegionId> {
        let lower = name.trim().to_ascii_lowercase();
        RegionId::ALL.iter().copied().find(|r| r.name() == lower)
    }

    /// Position in the canonical order.
    pub fn ordinal(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for RegionId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for RegionId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        RegionId::from_name(&s).ok_or_else(|| de::Error::custom(format!("unknown region name: {s:?}")))
    }
}

/// One of the 18 clinical abnormalities tracked by the logit vectors and
/// the clinical-efficacy metrics.
///
/// Declaration order is the canonical logit index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AbnormalityId {
    ArterialWallCalcification,
    Atelectasis,
    Bronchiectasis,
    Cardiomegaly,
    Consolidation,
    CoronaryArteryWallCalcification,
    Emphysema,
    HiatalHernia,
    InterlobularSeptalThickening,
    LungNodule,
    LungOpacity,
    Lymphadenopathy,
    MedicalMaterial,
    MosaicAttenuationPattern,
    PeribronchialThickening,
    PericardialEffusion,
    PleuralEffusion,
    PulmonaryFibroticSequela,
}

impl AbnormalityId {
    pub const ALL: [AbnormalityId; 18] = [
        AbnormalityId::ArterialWallCalcification,
        AbnormalityId::Atelectasis,
        AbnormalityId::Bronchiectasis,
        AbnormalityId::Cardiomegaly,
        AbnormalityId::Consolidation,
        AbnormalityId::CoronaryArteryWallCalcification,
        AbnormalityId::Emphysema,
        AbnormalityId::HiatalHernia,
        AbnormalityId::InterlobularSeptalThickening,
        AbnormalityId::LungNodule,
        AbnormalityId::LungOpacity,
        AbnormalityId::Lymphadenopathy,
        AbnormalityId::MedicalMaterial,
        AbnormalityId::MosaicAttenuationPattern,
        AbnormalityId::PeribronchialThickening,
        AbnormalityId::PericardialEffusion,
        AbnormalityId::PleuralEffusion,
        AbnormalityId::PulmonaryFibroticSequela,
    ];

    pub const COUNT: usize = 18;

    pub fn name(self) -> &'static str {
        match self {
            AbnormalityId::ArterialWallCalcification => "arterial wall calcification",
            AbnormalityId::Atelectasis => "atelectasis",
            AbnormalityId::Bronchiectasis => "bronchiectasis",
            AbnormalityId::Cardiomegaly => "cardiomegaly",
            AbnormalityId::Consolidation => "consolidation",
            AbnormalityId::CoronaryArteryWallCalcification => "coronary artery wall calcification",
            AbnormalityId::Emphysema => "emphysema",
            AbnormalityId::HiatalHernia => "hiatal hernia",
            AbnormalityId::InterlobularSeptalThickening => "interlobular septal thickening",
            AbnormalityId::LungNodule => "lung nodule",
            AbnormalityId::LungOpacity => "lung opacity",
            AbnormalityId::Lymphadenopathy => "lymphadenopathy",
            AbnormalityId::MedicalMaterial => "medical material",
            AbnormalityId::MosaicAttenuationPattern => "mosaic attenuation pattern",
            AbnormalityId::PeribronchialThickening => "peribronchial thickening",
            AbnormalityId::PericardialEffusion => "pericardial effusion",
            AbnormalityId::PleuralEffusion => "pleural effusion",
            AbnormalityId::PulmonaryFibroticSequela => "pulmonary fibrotic sequela",
        }
    }

    /// Case-insensitive lookup by canonical name.
    pub fn from_name(name: &str) -> Option<AbnormalityId> {
        let lower = name.trim().to_ascii_lowercase();
        AbnormalityId::ALL.iter().copied().find(|a| a.name() == lower)
    }

    /// Index into a logit vector.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AbnormalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for AbnormalityId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for AbnormalityId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        AbnormalityId::from_name(&s)
            .ok_or_else(|| de::Error::custom(format!("unknown abnormality name: {s:?}")))
    }
}
