//! Minimal DICOM Part 10 writer for little-endian uncompressed files.
//!
//! Used by the synthetic corpus generator and by tests; it writes exactly
//! the elements it is given, sorted by tag.

use super::tags::{ITEM, ITEM_DELIMITATION, PIXEL_DATA, SEQUENCE_DELIMITATION, TRANSFER_SYNTAX};
use super::{Tag, Vr, EXPLICIT_VR_LE, IMPLICIT_VR_LE};

#[derive(Debug, Clone)]
enum Value {
    Bytes(Vec<u8>),
    Sequence { items: Vec<Vec<Element>>, undefined_length: bool },
}

#[derive(Debug, Clone)]
pub struct Element {
    tag: Tag,
    vr: Vr,
    value: Value,
}

impl Element {
    pub fn text(tag: Tag, vr: Vr, s: &str) -> Self {
        let mut bytes = s.as_bytes().to_vec();
        if bytes.len() % 2 == 1 {
            bytes.push(vr.pad_byte());
        }
        Self { tag, vr, value: Value::Bytes(bytes) }
    }

    pub fn u16(tag: Tag, v: u16) -> Self {
        Self { tag, vr: Vr::US, value: Value::Bytes(v.to_le_bytes().to_vec()) }
    }

    pub fn raw(tag: Tag, vr: Vr, bytes: Vec<u8>) -> Self {
        Self { tag, vr, value: Value::Bytes(bytes) }
    }

    pub fn sequence(tag: Tag, items: Vec<Vec<Element>>, undefined_length: bool) -> Self {
        Self { tag, vr: Vr::SQ, value: Value::Sequence { items, undefined_length } }
    }
}

#[derive(Debug, Clone)]
pub struct DicomWriter {
    explicit: bool,
    elements: Vec<Element>,
}

impl DicomWriter {
    pub fn new(explicit: bool) -> Self {
        Self { explicit, elements: Vec::new() }
    }

    pub fn push(&mut self, el: Element) -> &mut Self {
        self.elements.retain(|e| e.tag != el.tag);
        self.elements.push(el);
        self
    }

    pub fn without(mut self, tag: Tag) -> Self {
        self.elements.retain(|e| e.tag != tag);
        self
    }

    pub fn text(&mut self, tag: Tag, vr: Vr, s: &str) -> &mut Self {
        self.push(Element::text(tag, vr, s))
    }

    pub fn u16(&mut self, tag: Tag, v: u16) -> &mut Self {
        self.push(Element::u16(tag, v))
    }

    /// Pixel data as OW (16-bit) or OB (8-bit), padded to even length.
    pub fn pixel_data(&mut self, mut bytes: Vec<u8>, bits_allocated: u16) -> &mut Self {
        if bytes.len() % 2 == 1 {
            bytes.push(0);
        }
        let vr = if bits_allocated > 8 { Vr::OW } else { Vr::OB };
        self.push(Element::raw(PIXEL_DATA, vr, bytes))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; 128];
        out.extend_from_slice(b"DICM");

        let ts = if self.explicit { EXPLICIT_VR_LE } else { IMPLICIT_VR_LE };
        let mut meta = Vec::new();
        write_element(&mut meta, &Element::raw(Tag(0x0002, 0x0001), Vr::OB, vec![0, 1]), true);
        write_element(&mut meta, &Element::text(TRANSFER_SYNTAX, Vr::UI, ts), true);
        write_element(
            &mut out,
            &Element::raw(Tag(0x0002, 0x0000), Vr::UL, (meta.len() as u32).to_le_bytes().to_vec()),
            true,
        );
        out.extend_from_slice(&meta);

        let mut sorted: Vec<&Element> = self.elements.iter().filter(|e| e.tag.0 != 0x0002).collect();
        sorted.sort_by_key(|e| e.tag);
        for el in sorted {
            write_element(&mut out, el, self.explicit);
        }
        out
    }
}

fn write_header(out: &mut Vec<u8>, tag: Tag, vr: Vr, len: u32, explicit: bool) {
    out.extend_from_slice(&tag.0.to_le_bytes());
    out.extend_from_slice(&tag.1.to_le_bytes());
    if explicit {
        out.extend_from_slice(&vr.code());
        if vr.has_long_length() {
            out.extend_from_slice(&[0, 0]);
            out.extend_from_slice(&len.to_le_bytes());
        } else {
            out.extend_from_slice(&(len as u16).to_le_bytes());
        }
    } else {
        out.extend_from_slice(&len.to_le_bytes());
    }
}

fn write_element(out: &mut Vec<u8>, el: &Element, explicit: bool) {
    match &el.value {
        Value::Bytes(b) => {
            write_header(out, el.tag, el.vr, b.len() as u32, explicit);
            out.extend_from_slice(b);
        }
        Value::Sequence { items, undefined_length } => {
            let mut body = Vec::new();
            for item in items {
                let mut item_body = Vec::new();
                for e in item {
                    write_element(&mut item_body, e, explicit);
                }
                push_tag(&mut body, ITEM);
                if *undefined_length {
                    body.extend_from_slice(&u32::MAX.to_le_bytes());
                    body.extend_from_slice(&item_body);
                    push_tag(&mut body, ITEM_DELIMITATION);
                    body.extend_from_slice(&0u32.to_le_bytes());
                } else {
                    body.extend_from_slice(&(item_body.len() as u32).to_le_bytes());
                    body.extend_from_slice(&item_body);
                }
            }
            if *undefined_length {
                write_header(out, el.tag, Vr::SQ, u32::MAX, explicit);
                out.extend_from_slice(&body);
                push_tag(out, SEQUENCE_DELIMITATION);
                out.extend_from_slice(&0u32.to_le_bytes());
            } else {
                write_header(out, el.tag, Vr::SQ, body.len() as u32, explicit);
                out.extend_from_slice(&body);
            }
        }
    }
}

fn push_tag(out: &mut Vec<u8>, tag: Tag) {
    out.extend_from_slice(&tag.0.to_le_bytes());
    out.extend_from_slice(&tag.1.to_le_bytes());
}
