use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A `(group, element)` data element tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag(pub u16, pub u16);

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:04X},{:04X})", self.0, self.1)
    }
}

impl FromStr for Tag {
    type Err = String;

    /// Accepts `GGGG,EEEE`, `(GGGG,EEEE)` or `GGGGEEEE`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().trim_start_matches('(').trim_end_matches(')');
        let (g, e) = match t.split_once(',') {
            Some((g, e)) => (g.trim(), e.trim()),
            None if t.len() == 8 => t.split_at(4),
            None => return Err(format!("malformed tag '{s}'")),
        };
        let parse = |x: &str| u16::from_str_radix(x, 16).map_err(|_| format!("malformed tag '{s}'"));
        Ok(Tag(parse(g)?, parse(e)?))
    }
}

impl Serialize for Tag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:04X},{:04X}", self.0, self.1))
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Value representations this reader distinguishes.
#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Vr {
    AE, AS, AT, CS, DA, DS, DT, FL, FD, IS, LO, LT, OB, OD, OF, OL, OV, OW, PN, SH, SL, SQ, SS, ST,
    SV, TM, UC, UI, UL, UN, UR, US, UT, UV,
}

impl Vr {
    pub fn from_bytes(code: [u8; 2]) -> Vr {
        use Vr::*;
        match &code {
            b"AE" => AE, b"AS" => AS, b"AT" => AT, b"CS" => CS, b"DA" => DA, b"DS" => DS,
            b"DT" => DT, b"FL" => FL, b"FD" => FD, b"IS" => IS, b"LO" => LO, b"LT" => LT,
            b"OB" => OB, b"OD" => OD, b"OF" => OF, b"OL" => OL, b"OV" => OV, b"OW" => OW,
            b"PN" => PN, b"SH" => SH, b"SL" => SL, b"SQ" => SQ, b"SS" => SS, b"ST" => ST,
            b"SV" => SV, b"TM" => TM, b"UC" => UC, b"UI" => UI, b"UL" => UL, b"UR" => UR,
            b"US" => US, b"UT" => UT, b"UV" => UV,
            _ => UN,
        }
    }

    pub fn code(self) -> [u8; 2] {
        let s = format!("{self:?}");
        let b = s.as_bytes();
        [b[0], b[1]]
    }

    /// Explicit-VR encodings with a 2-byte reserved field and 4-byte length.
    pub fn has_long_length(self) -> bool {
        use Vr::*;
        matches!(self, OB | OD | OF | OL | OV | OW | SQ | UC | UR | UT | UN | SV | UV)
    }

    pub(crate) fn binary_width(self) -> Option<usize> {
        match self {
            Vr::US | Vr::SS => Some(2),
            Vr::UL | Vr::SL | Vr::FL => Some(4),
            Vr::FD => Some(8),
            _ => None,
        }
    }

    pub(crate) fn is_multi_valued_text(self) -> bool {
        !matches!(self, Vr::LT | Vr::ST | Vr::UT | Vr::UR | Vr::OB | Vr::OW | Vr::UN)
    }

    pub(crate) fn preserves_leading_space(self) -> bool {
        matches!(self, Vr::LT | Vr::ST | Vr::UT)
    }

    /// Padding byte used to reach even value length.
    pub fn pad_byte(self) -> u8 {
        match self {
            Vr::UI | Vr::OB | Vr::UN => 0,
            _ => b' ',
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_parsing_forms() {
        assert_eq!("0018,0015".parse::<Tag>().unwrap(), Tag(0x0018, 0x0015));
        assert_eq!("(0008,0070)".parse::<Tag>().unwrap(), Tag(0x0008, 0x0070));
        assert_eq!("7FE00010".parse::<Tag>().unwrap(), Tag(0x7FE0, 0x0010));
        assert!("zz".parse::<Tag>().is_err());
        assert_eq!(Tag(0x0028, 0x1050).to_string(), "(0028,1050)");
    }

    #[test]
    fn vr_codes_roundtrip() {
        for code in [b"DS", b"US", b"SQ", b"UI", b"OW"] {
            assert_eq!(&Vr::from_bytes(*code).code(), code);
        }
        assert_eq!(Vr::from_bytes(*b"??"), Vr::UN);
    }
}
