use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::tags::*;
use super::{DicomError, Tag, Vr};

/// Tags the image export cannot do without; they may not be removed from
/// the extraction list.
pub const PIXEL_STRUCTURE_TAGS: [Tag; 8] = [
    SAMPLES_PER_PIXEL,
    PHOTOMETRIC,
    NUMBER_OF_FRAMES,
    ROWS,
    COLUMNS,
    BITS_ALLOCATED,
    BITS_STORED,
    PIXEL_REPRESENTATION,
];

const DICTIONARY: &[(Tag, &str, Vr)] = &[
    (Tag(0x0002, 0x0010), "TransferSyntaxUID", Vr::UI),
    (Tag(0x0008, 0x0005), "SpecificCharacterSet", Vr::CS),
    (Tag(0x0008, 0x0008), "ImageType", Vr::CS),
    (Tag(0x0008, 0x0016), "SOPClassUID", Vr::UI),
    (Tag(0x0008, 0x0018), "SOPInstanceUID", Vr::UI),
    (Tag(0x0008, 0x0060), "Modality", Vr::CS),
    (Tag(0x0008, 0x0070), "Manufacturer", Vr::LO),
    (Tag(0x0008, 0x1030), "StudyDescription", Vr::LO),
    (Tag(0x0008, 0x103E), "SeriesDescription", Vr::LO),
    (Tag(0x0008, 0x1090), "ManufacturerModelName", Vr::LO),
    (Tag(0x0010, 0x0040), "PatientSex", Vr::CS),
    (Tag(0x0018, 0x0015), "BodyPartExamined", Vr::CS),
    (Tag(0x0018, 0x0050), "SliceThickness", Vr::DS),
    (Tag(0x0018, 0x0060), "KVP", Vr::DS),
    (Tag(0x0018, 0x1030), "ProtocolName", Vr::LO),
    (Tag(0x0018, 0x1150), "ExposureTime", Vr::IS),
    (Tag(0x0018, 0x1151), "XRayTubeCurrent", Vr::IS),
    (Tag(0x0018, 0x5100), "PatientPosition", Vr::CS),
    (Tag(0x0018, 0x0087), "MagneticFieldStrength", Vr::DS),
    (Tag(0x0020, 0x000D), "StudyInstanceUID", Vr::UI),
    (Tag(0x0020, 0x000E), "SeriesInstanceUID", Vr::UI),
    (Tag(0x0020, 0x0013), "InstanceNumber", Vr::IS),
    (Tag(0x0028, 0x0002), "SamplesPerPixel", Vr::US),
    (Tag(0x0028, 0x0004), "PhotometricInterpretation", Vr::CS),
    (Tag(0x0028, 0x0008), "NumberOfFrames", Vr::IS),
    (Tag(0x0028, 0x0010), "Rows", Vr::US),
    (Tag(0x0028, 0x0011), "Columns", Vr::US),
    (Tag(0x0028, 0x0030), "PixelSpacing", Vr::DS),
    (Tag(0x0028, 0x0100), "BitsAllocated", Vr::US),
    (Tag(0x0028, 0x0101), "BitsStored", Vr::US),
    (Tag(0x0028, 0x0102), "HighBit", Vr::US),
    (Tag(0x0028, 0x0103), "PixelRepresentation", Vr::US),
    (Tag(0x0028, 0x1050), "WindowCenter", Vr::DS),
    (Tag(0x0028, 0x1051), "WindowWidth", Vr::DS),
    (Tag(0x0028, 0x1052), "RescaleIntercept", Vr::DS),
    (Tag(0x0028, 0x1053), "RescaleSlope", Vr::DS),
    (Tag(0x0028, 0x3000), "ModalityLUTSequence", Vr::SQ),
    (Tag(0x0028, 0x3010), "VOILUTSequence", Vr::SQ),
    (Tag(0x0032, 0x1060), "RequestedProcedureDescription", Vr::LO),
    (Tag(0x0040, 0x0275), "RequestAttributesSequence", Vr::SQ),
    (Tag(0x7FE0, 0x0010), "PixelData", Vr::OW),
];

pub fn tag_name(tag: Tag) -> String {
    DICTIONARY
        .iter()
        .find(|(t, _, _)| *t == tag)
        .map_or_else(|| format!("Tag{:04X}{:04X}", tag.0, tag.1), |(_, n, _)| (*n).to_owned())
}

pub fn tag_vr(tag: Tag) -> Option<Vr> {
    DICTIONARY.iter().find(|(t, _, _)| *t == tag).map(|(_, _, vr)| *vr)
}

pub fn tag_by_name(name: &str) -> Option<Tag> {
    DICTIONARY.iter().find(|(_, n, _)| *n == name).map(|(t, _, _)| *t)
}

/// The built-in extraction list.
pub fn default_extraction() -> Vec<Tag> {
    let mut v = vec![
        MODALITY,
        BODY_PART_EXAMINED,
        STUDY_DESCRIPTION,
        PROTOCOL_NAME,
        REQUESTED_PROCEDURE_DESCRIPTION,
        RESCALE_SLOPE,
        RESCALE_INTERCEPT,
        WINDOW_CENTER,
        WINDOW_WIDTH,
        IMAGE_TYPE,
        STUDY_INSTANCE_UID,
        SERIES_INSTANCE_UID,
        SOP_INSTANCE_UID,
        Tag(0x0008, 0x0016),
        Tag(0x0008, 0x103E),
        Tag(0x0010, 0x0040),
        Tag(0x0018, 0x0050),
        Tag(0x0018, 0x0060),
        Tag(0x0018, 0x0087),
        Tag(0x0018, 0x1150),
        Tag(0x0018, 0x1151),
        Tag(0x0018, 0x5100),
        Tag(0x0020, 0x0013),
        Tag(0x0028, 0x0030),
    ];
    v.extend(PIXEL_STRUCTURE_TAGS);
    v.sort();
    v
}

/// Extraction list as it appears in the pipeline config: additions and
/// removals relative to the default list, given as `GGGG,EEEE` or names.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionSpec {
    pub add: Vec<String>,
    pub remove: Vec<String>,
    /// Tag whose value groups instances into exams.
    pub exam_id_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionConfig {
    pub tags: Vec<Tag>,
    pub exam_id_tag: Tag,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self { tags: default_extraction(), exam_id_tag: STUDY_INSTANCE_UID }
    }
}

fn resolve(s: &str) -> Result<Tag, DicomError> {
    tag_by_name(s)
        .map(Ok)
        .unwrap_or_else(|| s.parse::<Tag>().map_err(DicomError::Config))
}

impl ExtractionConfig {
    pub fn from_spec(spec: &ExtractionSpec) -> Result<Self, DicomError> {
        let mut set: BTreeSet<Tag> = default_extraction().into_iter().collect();
        for s in &spec.remove {
            let t = resolve(s)?;
            if PIXEL_STRUCTURE_TAGS.contains(&t) {
                return Err(DicomError::Config(format!("pixel-structure tag {t} cannot be removed")));
            }
            if t == SOP_INSTANCE_UID {
                return Err(DicomError::Config(format!("instance identifier {t} cannot be removed")));
            }
            set.remove(&t);
        }
        for s in &spec.add {
            set.insert(resolve(s)?);
        }
        let exam_id_tag = match &spec.exam_id_tag {
            Some(s) => resolve(s)?,
            None => STUDY_INSTANCE_UID,
        };
        set.insert(exam_id_tag);
        Ok(Self { tags: set.into_iter().collect(), exam_id_tag })
    }

    /// The extraction list.
    pub fn tag_extraction_list(&self) -> &[Tag] {
        &self.tags
    }

    pub(crate) fn tag_set(&self) -> BTreeSet<Tag> {
        self.tags.iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_list_contains_required_tags() {
        let cfg = ExtractionConfig::default();
        for t in [
            BODY_PART_EXAMINED,
            MODALITY,
            STUDY_DESCRIPTION,
            PROTOCOL_NAME,
            REQUESTED_PROCEDURE_DESCRIPTION,
            RESCALE_SLOPE,
            RESCALE_INTERCEPT,
            WINDOW_CENTER,
            WINDOW_WIDTH,
            IMAGE_TYPE,
            STUDY_INSTANCE_UID,
            SOP_INSTANCE_UID,
        ] {
            assert!(cfg.tag_extraction_list().contains(&t), "{t} missing");
        }
        assert!(!cfg.tags.contains(&MANUFACTURER));
    }

    #[test]
    fn config_can_add_tags() {
        let spec = ExtractionSpec { add: vec!["0008,0070".into()], ..Default::default() };
        let cfg = ExtractionConfig::from_spec(&spec).unwrap();
        assert!(cfg.tags.contains(&MANUFACTURER));
        let by_name = ExtractionSpec { add: vec!["Manufacturer".into()], ..Default::default() };
        assert!(ExtractionConfig::from_spec(&by_name).unwrap().tags.contains(&MANUFACTURER));
    }

    #[test]
    fn removing_pixel_structure_tag_is_a_config_error() {
        let spec = ExtractionSpec { remove: vec!["0028,0010".into()], ..Default::default() };
        assert!(matches!(ExtractionConfig::from_spec(&spec), Err(DicomError::Config(_))));
        let ok = ExtractionSpec { remove: vec!["KVP".into()], ..Default::default() };
        assert!(!ExtractionConfig::from_spec(&ok).unwrap().tags.contains(&Tag(0x0018, 0x0060)));
    }

    #[test]
    fn names_resolve() {
        assert_eq!(tag_name(BODY_PART_EXAMINED), "BodyPartExamined");
        assert_eq!(tag_name(Tag(0x0009, 0x0010)), "Tag00090010");
        assert_eq!(tag_vr(ROWS), Some(Vr::US));
    }
}
