//! Minimal DICOM Part 10 reader.
//!
//! Only little-endian uncompressed transfer syntaxes (explicit and implicit
//! VR) are accepted. Values of the configured extraction list are captured
//! from the top-level data set; sequences are skipped structurally.

mod dictionary;
mod tag;
pub mod writer;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dictionary::{
    default_extraction, tag_by_name, tag_name, tag_vr, ExtractionConfig, ExtractionSpec, PIXEL_STRUCTURE_TAGS,
};
pub use tag::{Tag, Vr};

pub const EXPLICIT_VR_LE: &str = "1.2.840.10008.1.2.1";
pub const IMPLICIT_VR_LE: &str = "1.2.840.10008.1.2";

pub mod tags {
    use super::Tag;
    pub const TRANSFER_SYNTAX: Tag = Tag(0x0002, 0x0010);
    pub const SPECIFIC_CHARACTER_SET: Tag = Tag(0x0008, 0x0005);
    pub const IMAGE_TYPE: Tag = Tag(0x0008, 0x0008);
    pub const SOP_INSTANCE_UID: Tag = Tag(0x0008, 0x0018);
    pub const MODALITY: Tag = Tag(0x0008, 0x0060);
    pub const MANUFACTURER: Tag = Tag(0x0008, 0x0070);
    pub const STUDY_DESCRIPTION: Tag = Tag(0x0008, 0x1030);
    pub const BODY_PART_EXAMINED: Tag = Tag(0x0018, 0x0015);
    pub const PROTOCOL_NAME: Tag = Tag(0x0018, 0x1030);
    pub const STUDY_INSTANCE_UID: Tag = Tag(0x0020, 0x000D);
    pub const SERIES_INSTANCE_UID: Tag = Tag(0x0020, 0x000E);
    pub const SAMPLES_PER_PIXEL: Tag = Tag(0x0028, 0x0002);
    pub const PHOTOMETRIC: Tag = Tag(0x0028, 0x0004);
    pub const NUMBER_OF_FRAMES: Tag = Tag(0x0028, 0x0008);
    pub const ROWS: Tag = Tag(0x0028, 0x0010);
    pub const COLUMNS: Tag = Tag(0x0028, 0x0011);
    pub const BITS_ALLOCATED: Tag = Tag(0x0028, 0x0100);
    pub const BITS_STORED: Tag = Tag(0x0028, 0x0101);
    pub const PIXEL_REPRESENTATION: Tag = Tag(0x0028, 0x0103);
    pub const WINDOW_CENTER: Tag = Tag(0x0028, 0x1050);
    pub const WINDOW_WIDTH: Tag = Tag(0x0028, 0x1051);
    pub const RESCALE_INTERCEPT: Tag = Tag(0x0028, 0x1052);
    pub const RESCALE_SLOPE: Tag = Tag(0x0028, 0x1053);
    pub const MODALITY_LUT_SEQUENCE: Tag = Tag(0x0028, 0x3000);
    pub const VOI_LUT_SEQUENCE: Tag = Tag(0x0028, 0x3010);
    pub const REQUESTED_PROCEDURE_DESCRIPTION: Tag = Tag(0x0032, 0x1060);
    pub const PIXEL_DATA: Tag = Tag(0x7FE0, 0x0010);
    pub const ITEM: Tag = Tag(0xFFFE, 0xE000);
    pub const ITEM_DELIMITATION: Tag = Tag(0xFFFE, 0xE00D);
    pub const SEQUENCE_DELIMITATION: Tag = Tag(0xFFFE, 0xE0DD);
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DicomError {
    #[error("missing DICM magic after preamble")]
    MissingMagic,
    #[error("unsupported transfer syntax {0}")]
    UnsupportedTransferSyntax(String),
    #[error("element {tag} truncated at offset {offset}")]
    TruncatedElement { tag: Tag, offset: usize },
    #[error("pixel data missing")]
    MissingPixelData,
    #[error("non-linear LUT sequence {0} present")]
    NonlinearLutPresent(Tag),
    #[error("required tag {0} missing")]
    MissingRequiredTag(Tag),
    #[error("unsupported pixel structure: {0}")]
    UnsupportedPixelFormat(String),
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    PixelLengthMismatch { expected: usize, got: usize },
    #[error("configuration error: {0}")]
    Config(String),
}

/// A captured tag value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TagValue {
    Number(f64),
    Text(String),
    /// Backslash-delimited values in file order.
    Multi(Vec<String>),
}

impl TagValue {
    /// All components as strings, in file order.
    pub fn values(&self) -> Vec<String> {
        match self {
            TagValue::Number(v) => vec![format_number(*v)],
            TagValue::Text(s) => vec![s.clone()],
            TagValue::Multi(v) => v.clone(),
        }
    }

    /// Single-string rendering; multi-values are rejoined with `\`.
    pub fn as_text(&self) -> String {
        match self {
            TagValue::Number(v) => format_number(*v),
            TagValue::Text(s) => s.clone(),
            TagValue::Multi(v) => v.join("\\"),
        }
    }

    /// Numeric value of the first component, if it parses.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            TagValue::Number(v) => Some(*v),
            TagValue::Text(s) => s.trim().parse().ok(),
            TagValue::Multi(v) => v.first().and_then(|s| s.trim().parse().ok()),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            TagValue::Number(_) => false,
            TagValue::Text(s) => s.trim().is_empty(),
            TagValue::Multi(v) => v.iter().all(|s| s.trim().is_empty()),
        }
    }
}

pub(crate) fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelRepresentation {
    Unsigned,
    Signed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Photometric {
    #[serde(rename = "MONOCHROME1")]
    Monochrome1,
    #[serde(rename = "MONOCHROME2")]
    Monochrome2,
}

/// Raw pixel buffer and the structure needed to decode it.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelData {
    pub data: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
    pub bits_allocated: u16,
    pub bits_stored: u16,
    pub representation: PixelRepresentation,
    pub photometric: Photometric,
    pub n_frames: usize,
}

impl PixelData {
    pub fn frame_len(&self) -> usize {
        self.rows * self.cols
    }

    /// Decodes one frame to raw integer samples, masking to `bits_stored`
    /// and sign-extending when the representation is signed.
    pub fn frame_values(&self, frame: usize) -> Vec<f64> {
        let n = self.frame_len();
        let bytes_per = usize::from(self.bits_allocated / 8);
        let start = frame * n * bytes_per;
        let raw = &self.data[start..start + n * bytes_per];
        let stored = u32::from(self.bits_stored);
        let mask: u32 = if stored >= 32 { u32::MAX } else { (1u32 << stored) - 1 };
        let signed = self.representation == PixelRepresentation::Signed;
        let decode = |v: u32| -> f64 {
            let v = v & mask;
            if signed && stored > 0 && v & (1 << (stored - 1)) != 0 {
                f64::from(v as i32 - (1i32 << stored))
            } else {
                f64::from(v)
            }
        };
        if bytes_per == 1 {
            raw.iter().map(|&b| decode(u32::from(b))).collect()
        } else {
            raw.chunks_exact(2)
                .map(|c| decode(u32::from(u16::from_le_bytes([c[0], c[1]]))))
                .collect()
        }
    }
}

/// One parsed DICOM file.
#[derive(Debug, Clone, PartialEq)]
pub struct DicomInstance {
    pub tags: BTreeMap<Tag, TagValue>,
    pub pixels: Option<PixelData>,
    pub exam_id: String,
    pub instance_id: String,
}

impl DicomInstance {
    pub fn get(&self, tag: Tag) -> Option<&TagValue> {
        self.tags.get(&tag)
    }

    pub fn text(&self, tag: Tag) -> Option<String> {
        self.tags.get(&tag).filter(|v| !v.is_empty()).map(TagValue::as_text)
    }

    pub fn number(&self, tag: Tag) -> Option<f64> {
        self.tags.get(&tag).and_then(TagValue::as_f64)
    }
}

struct RawElement {
    tag: Tag,
    vr: Vr,
    value: Vec<u8>,
}

/// Parses a DICOM Part 10 byte stream.
pub fn parse_file(bytes: &[u8], config: &ExtractionConfig, require_pixels: bool) -> Result<DicomInstance, DicomError> {
    if bytes.len() < 132 || &bytes[128..132] != b"DICM" {
        return Err(DicomError::MissingMagic);
    }
    let mut reader = Reader { bytes, pos: 132, explicit: true };

    // file meta group is always explicit VR little endian
    let mut transfer_syntax = None;
    while reader.pos + 2 <= bytes.len() && reader.peek_group() == Some(0x0002) {
        let el = reader.next_element()?;
        if let Some(el) = el {
            if el.tag == tags::TRANSFER_SYNTAX {
                transfer_syntax = Some(trim_value(&latin1(&el.value), el.vr));
            }
        }
    }
    let ts = transfer_syntax.ok_or(DicomError::MissingRequiredTag(tags::TRANSFER_SYNTAX))?;
    reader.explicit = match ts.as_str() {
        EXPLICIT_VR_LE => true,
        IMPLICIT_VR_LE => false,
        other => return Err(DicomError::UnsupportedTransferSyntax(other.to_owned())),
    };

    let wanted = config.tag_set();
    let mut captured: Vec<RawElement> = Vec::new();
    let mut pixel_bytes: Option<Vec<u8>> = None;
    while reader.pos < bytes.len() {
        let Some(el) = reader.next_element()? else { continue };
        if el.tag == tags::VOI_LUT_SEQUENCE || el.tag == tags::MODALITY_LUT_SEQUENCE {
            return Err(DicomError::NonlinearLutPresent(el.tag));
        }
        if el.tag == tags::PIXEL_DATA {
            pixel_bytes = Some(el.value);
        } else if wanted.contains(&el.tag) || el.tag == tags::SPECIFIC_CHARACTER_SET {
            captured.push(el);
        }
    }

    let utf8 = captured
        .iter()
        .find(|e| e.tag == tags::SPECIFIC_CHARACTER_SET)
        .is_some_and(|e| latin1(&e.value).contains("ISO_IR 192"));
    let mut tag_map = BTreeMap::new();
    for el in captured {
        if !wanted.contains(&el.tag) {
            continue;
        }
        tag_map.insert(el.tag, decode_value(&el.value, el.vr, utf8));
    }

    let exam_id = required_text(&tag_map, config.exam_id_tag)?;
    let instance_id = required_text(&tag_map, tags::SOP_INSTANCE_UID)?;

    let pixels = match pixel_bytes {
        Some(data) => Some(pixel_structure(&tag_map, data)?),
        None if require_pixels => return Err(DicomError::MissingPixelData),
        None => None,
    };

    Ok(DicomInstance { tags: tag_map, pixels, exam_id, instance_id })
}

fn required_text(map: &BTreeMap<Tag, TagValue>, tag: Tag) -> Result<String, DicomError> {
    map.get(&tag)
        .filter(|v| !v.is_empty())
        .map(TagValue::as_text)
        .ok_or(DicomError::MissingRequiredTag(tag))
}

fn pixel_structure(map: &BTreeMap<Tag, TagValue>, mut data: Vec<u8>) -> Result<PixelData, DicomError> {
    let int = |tag: Tag| -> Result<i64, DicomError> {
        map.get(&tag)
            .and_then(TagValue::as_f64)
            .map(|v| v as i64)
            .ok_or(DicomError::MissingRequiredTag(tag))
    };
    let unsupported = |msg: String| Err(DicomError::UnsupportedPixelFormat(msg));

    let samples = map.get(&tags::SAMPLES_PER_PIXEL).and_then(TagValue::as_f64).unwrap_or(1.0);
    if samples != 1.0 {
        return unsupported(format!("SamplesPerPixel = {samples}"));
    }
    let rows = int(tags::ROWS)?;
    let cols = int(tags::COLUMNS)?;
    if rows < 1 || cols < 1 {
        return unsupported(format!("{rows}x{cols} image"));
    }
    let bits_allocated = int(tags::BITS_ALLOCATED)?;
    if bits_allocated != 8 && bits_allocated != 16 {
        return unsupported(format!("BitsAllocated = {bits_allocated}"));
    }
    let bits_stored = map
        .get(&tags::BITS_STORED)
        .and_then(TagValue::as_f64)
        .map_or(bits_allocated, |v| v as i64);
    if bits_stored < 1 || bits_stored > bits_allocated {
        return unsupported(format!("BitsStored = {bits_stored} with BitsAllocated = {bits_allocated}"));
    }
    let representation = match map.get(&tags::PIXEL_REPRESENTATION).and_then(TagValue::as_f64) {
        None | Some(0.0) => PixelRepresentation::Unsigned,
        Some(1.0) => PixelRepresentation::Signed,
        Some(v) => return unsupported(format!("PixelRepresentation = {v}")),
    };
    let photometric = match map.get(&tags::PHOTOMETRIC).map(TagValue::as_text).as_deref() {
        Some("MONOCHROME1") => Photometric::Monochrome1,
        Some("MONOCHROME2") | None => Photometric::Monochrome2,
        Some(other) => return unsupported(format!("PhotometricInterpretation = {other}")),
    };
    let n_frames = map
        .get(&tags::NUMBER_OF_FRAMES)
        .and_then(TagValue::as_f64)
        .map_or(1, |v| v as i64);
    if n_frames < 1 {
        return unsupported(format!("NumberOfFrames = {n_frames}"));
    }
    let expected = (rows * cols * n_frames * (bits_allocated / 8)) as usize;
    // odd-length 8-bit buffers carry one pad byte
    if data.len() == expected + 1 && expected % 2 == 1 {
        data.truncate(expected);
    }
    if data.len() != expected {
        return Err(DicomError::PixelLengthMismatch { expected, got: data.len() });
    }
    Ok(PixelData {
        data,
        rows: rows as usize,
        cols: cols as usize,
        bits_allocated: bits_allocated as u16,
        bits_stored: bits_stored as u16,
        representation,
        photometric,
        n_frames: n_frames as usize,
    })
}

fn latin1(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| char::from(b)).collect()
}

fn trim_value(s: &str, vr: Vr) -> String {
    let trailing: &[char] = &[' ', '\0'];
    if vr.preserves_leading_space() {
        s.trim_end_matches(trailing).to_owned()
    } else {
        s.trim_matches(trailing).to_owned()
    }
}

fn decode_value(bytes: &[u8], vr: Vr, utf8: bool) -> TagValue {
    if let Some(width) = vr.binary_width() {
        let nums: Vec<f64> = bytes
            .chunks_exact(width)
            .map(|c| match vr {
                Vr::US => f64::from(u16::from_le_bytes([c[0], c[1]])),
                Vr::SS => f64::from(i16::from_le_bytes([c[0], c[1]])),
                Vr::UL => f64::from(u32::from_le_bytes([c[0], c[1], c[2], c[3]])),
                Vr::SL => f64::from(i32::from_le_bytes([c[0], c[1], c[2], c[3]])),
                Vr::FL => f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
                Vr::FD => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                _ => unreachable!("binary_width is only defined for numeric VRs"),
            })
            .collect();
        return match nums.as_slice() {
            [v] => TagValue::Number(*v),
            _ => TagValue::Multi(nums.into_iter().map(format_number).collect()),
        };
    }
    let text = if utf8 { String::from_utf8_lossy(bytes).into_owned() } else { latin1(bytes) };
    if vr.is_multi_valued_text() {
        let parts: Vec<String> = text.split('\\').map(|p| trim_value(p, vr)).collect();
        if parts.len() > 1 {
            return TagValue::Multi(parts);
        }
    }
    TagValue::Text(trim_value(&text, vr))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    explicit: bool,
}

const UNDEFINED: u32 = 0xFFFF_FFFF;

impl Reader<'_> {
    fn peek_group(&self) -> Option<u16> {
        self.bytes.get(self.pos..self.pos + 2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn take(&mut self, n: usize, tag: Tag) -> Result<&[u8], DicomError> {
        let start = self.pos;
        let end = start
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(DicomError::TruncatedElement { tag, offset: start })?;
        self.pos = end;
        Ok(&self.bytes[start..end])
    }

    fn u16(&mut self, tag: Tag) -> Result<u16, DicomError> {
        let b = self.take(2, tag)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, tag: Tag) -> Result<u32, DicomError> {
        let b = self.take(4, tag)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn read_tag(&mut self) -> Result<Tag, DicomError> {
        let unknown = Tag(0xFFFF, 0xFFFF);
        let group = self.u16(unknown)?;
        let element = self.u16(Tag(group, 0xFFFF))?;
        Ok(Tag(group, element))
    }

    fn read_header(&mut self) -> Result<(Tag, Vr, u32), DicomError> {
        let tag = self.read_tag()?;
        if tag.0 == 0xFFFE {
            // item and delimiter headers never carry a VR
            let len = self.u32(tag)?;
            return Ok((tag, Vr::UN, len));
        }
        if self.explicit {
            let code = self.take(2, tag)?;
            let vr = Vr::from_bytes([code[0], code[1]]);
            let len = if vr.has_long_length() {
                self.take(2, tag)?;
                self.u32(tag)?
            } else {
                u32::from(self.u16(tag)?)
            };
            Ok((tag, vr, len))
        } else {
            let len = self.u32(tag)?;
            let vr = tag_vr(tag).unwrap_or(if len == UNDEFINED { Vr::SQ } else { Vr::UN });
            Ok((tag, vr, len))
        }
    }

    /// Reads the next element at the current nesting level. Sequences are
    /// consumed and reported with an empty value.
    fn next_element(&mut self) -> Result<Option<RawElement>, DicomError> {
        let start = self.pos;
        let (tag, vr, len) = self.read_header()?;
        if tag == tags::PIXEL_DATA && len == UNDEFINED {
            return Err(DicomError::UnsupportedTransferSyntax("encapsulated pixel data".into()));
        }
        if vr == Vr::SQ || len == UNDEFINED {
            self.skip_sequence(tag, len)?;
            return Ok(Some(RawElement { tag, vr: Vr::SQ, value: Vec::new() }));
        }
        let value = self
            .take(len as usize, tag)
            .map_err(|_| DicomError::TruncatedElement { tag, offset: start })?
            .to_vec();
        Ok(Some(RawElement { tag, vr, value }))
    }

    fn skip_sequence(&mut self, seq: Tag, len: u32) -> Result<(), DicomError> {
        if len != UNDEFINED {
            self.take(len as usize, seq)?;
            return Ok(());
        }
        loop {
            let (tag, _, item_len) = self.read_header()?;
            match tag {
                tags::SEQUENCE_DELIMITATION => return Ok(()),
                tags::ITEM if item_len == UNDEFINED => self.skip_item_elements()?,
                tags::ITEM => {
                    self.take(item_len as usize, tag)?;
                }
                other => return Err(DicomError::TruncatedElement { tag: other, offset: self.pos }),
            }
        }
    }

    fn skip_item_elements(&mut self) -> Result<(), DicomError> {
        loop {
            let save = self.pos;
            let tag = self.read_tag()?;
            if tag == tags::ITEM_DELIMITATION {
                self.u32(tag)?;
                return Ok(());
            }
            self.pos = save;
            self.next_element()?;
        }
    }
}

#[cfg(test)]
mod tests;
