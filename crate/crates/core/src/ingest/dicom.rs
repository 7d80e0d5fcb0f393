//! A deliberately strict DICOM Part 10 reader/writer.
//!
//! Supported: explicit-VR little-endian transfer syntax, uncompressed single-frame
//! monochrome pixel data with 8 or 16 bits allocated and unsigned pixel representation.
//! Anything else is rejected with [`Error::DicomUnsupported`] instead of being guessed at.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EXPLICIT_VR_LITTLE_ENDIAN: &str = "1.2.840.10008.1.2.1";
const SECONDARY_CAPTURE: &str = "1.2.840.10008.5.1.4.1.1.7";

pub const TRANSFER_SYNTAX: Tag = Tag(0x0002, 0x0010);
pub const MODALITY: Tag = Tag(0x0008, 0x0060);
pub const STUDY_DESCRIPTION: Tag = Tag(0x0008, 0x1030);
pub const BODY_PART_EXAMINED: Tag = Tag(0x0018, 0x0015);
pub const SAMPLES_PER_PIXEL: Tag = Tag(0x0028, 0x0002);
pub const PHOTOMETRIC_INTERPRETATION: Tag = Tag(0x0028, 0x0004);
pub const NUMBER_OF_FRAMES: Tag = Tag(0x0028, 0x0008);
pub const ROWS: Tag = Tag(0x0028, 0x0010);
pub const COLUMNS: Tag = Tag(0x0028, 0x0011);
pub const BITS_ALLOCATED: Tag = Tag(0x0028, 0x0100);
pub const BITS_STORED: Tag = Tag(0x0028, 0x0101);
pub const HIGH_BIT: Tag = Tag(0x0028, 0x0102);
pub const PIXEL_REPRESENTATION: Tag = Tag(0x0028, 0x0103);
pub const PIXEL_DATA: Tag = Tag(0x7FE0, 0x0010);

/// `(group, element)` pair; ordered the way elements must appear in a data set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag(pub u16, pub u16);

impl std::fmt::Display for Tag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:04X},{:04X}", self.0, self.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DicomElement {
    pub tag: Tag,
    pub vr: [u8; 2],
    pub value: Vec<u8>,
}

impl DicomElement {
    pub fn new(tag: Tag, vr: &str, value: impl Into<Vec<u8>>) -> Self {
        let b = vr.as_bytes();
        assert!(b.len() == 2, "VR must be two characters");
        Self {
            tag,
            vr: [b[0], b[1]],
            value: value.into(),
        }
    }

    pub fn text(tag: Tag, vr: &str, s: &str) -> Self {
        Self::new(tag, vr, s.as_bytes().to_vec())
    }

    pub fn us(tag: Tag, v: u16) -> Self {
        Self::new(tag, "US", v.to_le_bytes().to_vec())
    }
}

fn has_long_length(vr: &[u8; 2]) -> bool {
    matches!(
        vr,
        b"OB" | b"OD" | b"OF" | b"OL" | b"OV" | b"OW" | b"SQ" | b"SV" | b"UC" | b"UN" | b"UR" | b"UT" | b"UV"
    )
}

fn is_text(vr: &[u8; 2]) -> bool {
    matches!(
        vr,
        b"AE" | b"AS" | b"CS" | b"DA" | b"DS" | b"DT" | b"IS" | b"LO" | b"LT" | b"PN" | b"SH" | b"ST" | b"TM" | b"UC" | b"UI" | b"UR" | b"UT"
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Photometric {
    Monochrome1,
    Monochrome2,
}

impl Photometric {
    fn as_str(self) -> &'static str {
        match self {
            Photometric::Monochrome1 => "MONOCHROME1",
            Photometric::Monochrome2 => "MONOCHROME2",
        }
    }
}

/// Pixel buffer and metadata extracted from a supported DICOM file.
#[derive(Debug, Clone, PartialEq)]
pub struct DicomImage {
    /// Raw stored intensities as `[1, rows, columns]`.
    pub pixels: Tensor,
    pub bits_allocated: u16,
    pub photometric: Photometric,
    /// Text and `US` element values keyed by `"GGGG,EEEE"`.
    pub tags: BTreeMap<String, String>,
}

impl DicomImage {
    pub fn tag(&self, tag: Tag) -> Option<&str> {
        self.tags.get(&tag.to_string()).map(String::as_str)
    }

    pub fn modality(&self) -> Option<&str> {
        self.tag(MODALITY).filter(|s| !s.is_empty())
    }

    pub fn body_part(&self) -> Option<&str> {
        self.tag(BODY_PART_EXAMINED).filter(|s| !s.is_empty())
    }

    pub fn rows(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn columns(&self) -> usize {
        self.pixels.shape()[2]
    }
}

fn clean_text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes)
        .trim_end_matches(['\0', ' '])
        .trim_start_matches(' ')
        .to_string()
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

/// Splits a Part 10 byte stream into its top-level elements, enforcing the subset.
pub fn read_elements(bytes: &[u8]) -> Result<Vec<DicomElement>> {
    if bytes.len() < 132 || &bytes[128..132] != b"DICM" {
        return Err(Error::DicomFormat("magic \"DICM\" not found at offset 128".into()));
    }
    let mut pos = 132;
    let mut out: Vec<DicomElement> = Vec::new();
    let mut syntax_checked = false;
    while pos < bytes.len() {
        if bytes.len() - pos < 8 {
            return Err(Error::DicomTruncated(format!("element header at offset {pos}")));
        }
        let tag = Tag(read_u16(bytes, pos), read_u16(bytes, pos + 2));
        if tag.0 == 0xFFFE {
            return Err(Error::DicomUnsupported(format!("sequence item delimiter ({tag})")));
        }
        if tag.0 != 0x0002 && !syntax_checked {
            check_transfer_syntax(&out)?;
            syntax_checked = true;
        }
        let vr = [bytes[pos + 4], bytes[pos + 5]];
        if !vr.iter().all(u8::is_ascii_uppercase) {
            return Err(Error::DicomUnsupported(format!("implicit VR encoding at ({tag})")));
        }
        let (len, header) = if has_long_length(&vr) {
            if bytes.len() - pos < 12 {
                return Err(Error::DicomTruncated(format!("long element header ({tag})")));
            }
            (u32::from_le_bytes(bytes[pos + 8..pos + 12].try_into().unwrap()), 12)
        } else {
            (read_u16(bytes, pos + 6) as u32, 8)
        };
        if &vr == b"SQ" {
            return Err(Error::DicomUnsupported(format!("sequence element ({tag})")));
        }
        if len == u32::MAX {
            let what = if tag == PIXEL_DATA { "encapsulated (compressed) pixel data" } else { "undefined-length element" };
            return Err(Error::DicomUnsupported(format!("{what} ({tag})")));
        }
        let start = pos + header;
        let end = start
            .checked_add(len as usize)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::DicomTruncated(format!("({tag}) declares {len} bytes, {} available", bytes.len() - start)))?;
        if let Some(prev) = out.last() {
            if tag <= prev.tag {
                return Err(Error::DicomFormat(format!("element ({tag}) follows ({}): tags must increase", prev.tag)));
            }
        }
        out.push(DicomElement {
            tag,
            vr,
            value: bytes[start..end].to_vec(),
        });
        pos = end;
    }
    if !syntax_checked {
        check_transfer_syntax(&out)?;
    }
    Ok(out)
}

fn check_transfer_syntax(meta: &[DicomElement]) -> Result<()> {
    let ts = meta
        .iter()
        .find(|e| e.tag == TRANSFER_SYNTAX)
        .map(|e| clean_text(&e.value))
        .ok_or_else(|| Error::DicomFormat("file meta lacks TransferSyntaxUID (0002,0010)".into()))?;
    if ts != EXPLICIT_VR_LITTLE_ENDIAN {
        return Err(Error::DicomUnsupported(format!("transfer syntax {ts}")));
    }
    Ok(())
}

/// Parses a supported DICOM file into its raw pixel buffer and tag map.
pub fn parse_dicom(bytes: &[u8]) -> Result<DicomImage> {
    let elements = read_elements(bytes)?;
    let find = |tag: Tag| elements.iter().find(|e| e.tag == tag);
    let us = |tag: Tag| -> Result<Option<u16>> {
        match find(tag) {
            None => Ok(None),
            Some(e) if e.value.len() >= 2 => Ok(Some(read_u16(&e.value, 0))),
            Some(_) => Err(Error::DicomTruncated(format!("US value of ({tag})"))),
        }
    };
    let required = |tag: Tag, name: &str| -> Result<u16> {
        us(tag)?.ok_or_else(|| Error::DicomFormat(format!("missing {name} ({tag})")))
    };

    let rows = required(ROWS, "Rows")? as usize;
    let cols = required(COLUMNS, "Columns")? as usize;
    let bits = required(BITS_ALLOCATED, "BitsAllocated")?;
    if bits != 8 && bits != 16 {
        return Err(Error::DicomUnsupported(format!("BitsAllocated = {bits}")));
    }
    if let Some(rep) = us(PIXEL_REPRESENTATION)? {
        if rep != 0 {
            return Err(Error::DicomUnsupported("signed pixel representation".into()));
        }
    }
    if let Some(spp) = us(SAMPLES_PER_PIXEL)? {
        if spp != 1 {
            return Err(Error::DicomUnsupported(format!("SamplesPerPixel = {spp}")));
        }
    }
    if let Some(frames) = find(NUMBER_OF_FRAMES) {
        let n: u32 = clean_text(&frames.value).parse().unwrap_or(1);
        if n > 1 {
            return Err(Error::DicomUnsupported(format!("multi-frame image ({n} frames)")));
        }
    }
    let photometric = match find(PHOTOMETRIC_INTERPRETATION).map(|e| clean_text(&e.value)).as_deref() {
        Some("MONOCHROME1") => Photometric::Monochrome1,
        Some("MONOCHROME2") => Photometric::Monochrome2,
        Some(other) => return Err(Error::DicomUnsupported(format!("PhotometricInterpretation {other}"))),
        None => return Err(Error::DicomFormat("missing PhotometricInterpretation (0028,0004)".into())),
    };
    if rows == 0 || cols == 0 {
        return Err(Error::DicomFormat(format!("empty image {rows}×{cols}")));
    }
    let pixel = find(PIXEL_DATA).ok_or_else(|| Error::DicomFormat("missing PixelData (7FE0,0010)".into()))?;
    let bytes_per = bits as usize / 8;
    let needed = rows * cols * bytes_per;
    if pixel.value.len() < needed {
        return Err(Error::DicomTruncated(format!(
            "PixelData holds {} bytes, {rows}×{cols}×{bytes_per} needed",
            pixel.value.len()
        )));
    }
    let data: Vec<f64> = if bits == 8 {
        pixel.value[..needed].iter().map(|&b| b as f64).collect()
    } else {
        pixel.value[..needed].chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as f64).collect()
    };

    let mut tags = BTreeMap::new();
    for e in &elements {
        if is_text(&e.vr) {
            tags.insert(e.tag.to_string(), clean_text(&e.value));
        } else if &e.vr == b"US" && e.value.len() >= 2 {
            tags.insert(e.tag.to_string(), read_u16(&e.value, 0).to_string());
        }
    }
    Ok(DicomImage {
        pixels: Tensor::new(vec![1, rows, cols], data)?,
        bits_allocated: bits,
        photometric,
        tags,
    })
}

/// Prepends the preamble and magic and encodes `elements` in explicit-VR little endian.
/// Values are padded to even length (`\0` for UI and binary VRs, space otherwise).
pub fn encode_elements(elements: &[DicomElement]) -> Vec<u8> {
    let mut out = vec![0u8; 128];
    out.extend_from_slice(b"DICM");
    for e in elements {
        let mut value = e.value.clone();
        if value.len() % 2 == 1 {
            value.push(if is_text(&e.vr) && &e.vr != b"UI" { b' ' } else { 0 });
        }
        out.extend_from_slice(&e.tag.0.to_le_bytes());
        out.extend_from_slice(&e.tag.1.to_le_bytes());
        out.extend_from_slice(&e.vr);
        if has_long_length(&e.vr) {
            out.extend_from_slice(&[0, 0]);
            out.extend_from_slice(&(value.len() as u32).to_le_bytes());
        } else {
            out.extend_from_slice(&(value.len() as u16).to_le_bytes());
        }
        out.extend_from_slice(&value);
    }
    out
}

/// Minimal file meta group for an explicit-VR little-endian secondary-capture object.
pub fn file_meta(instance_uid: &str) -> Vec<DicomElement> {
    let body = vec![
        DicomElement::new(Tag(0x0002, 0x0001), "OB", vec![0u8, 1]),
        DicomElement::text(Tag(0x0002, 0x0002), "UI", SECONDARY_CAPTURE),
        DicomElement::text(Tag(0x0002, 0x0003), "UI", instance_uid),
        DicomElement::text(TRANSFER_SYNTAX, "UI", EXPLICIT_VR_LITTLE_ENDIAN),
    ];
    let group_len: usize = encode_elements(&body).len() - 132;
    let mut meta = vec![DicomElement::new(Tag(0x0002, 0x0000), "UL", (group_len as u32).to_le_bytes().to_vec())];
    meta.extend(body);
    meta
}

/// Serialises the supported tag set of `image` back into a Part 10 byte stream.
pub fn write_dicom(image: &DicomImage) -> Result<Vec<u8>> {
    let rows = image.rows();
    let cols = image.columns();
    let bits = image.bits_allocated;
    let max = if bits == 8 { u8::MAX as f64 } else { u16::MAX as f64 };
    let mut pixel = Vec::with_capacity(rows * cols * bits as usize / 8);
    for &v in image.pixels.data() {
        if !(0.0..=max).contains(&v) || v.fract() != 0.0 {
            return Err(Error::InvalidInput(format!("pixel value {v} not representable in {bits} bits")));
        }
        if bits == 8 {
            pixel.push(v as u8);
        } else {
            pixel.extend_from_slice(&(v as u16).to_le_bytes());
        }
    }
    let mut elements = file_meta(image.tag(Tag(0x0002, 0x0003)).unwrap_or("2.25.1"));
    let text = |tag: Tag, vr: &str| image.tag(tag).map(|v| DicomElement::text(tag, vr, v));
    elements.extend(text(MODALITY, "CS"));
    elements.extend(text(STUDY_DESCRIPTION, "LO"));
    elements.extend(text(BODY_PART_EXAMINED, "CS"));
    elements.push(DicomElement::us(SAMPLES_PER_PIXEL, 1));
    elements.push(DicomElement::text(PHOTOMETRIC_INTERPRETATION, "CS", image.photometric.as_str()));
    elements.push(DicomElement::us(ROWS, rows as u16));
    elements.push(DicomElement::us(COLUMNS, cols as u16));
    elements.push(DicomElement::us(BITS_ALLOCATED, bits));
    let stored = image.tag(BITS_STORED).and_then(|s| s.parse().ok()).unwrap_or(bits);
    elements.push(DicomElement::us(BITS_STORED, stored));
    elements.push(DicomElement::us(HIGH_BIT, stored - 1));
    elements.push(DicomElement::us(PIXEL_REPRESENTATION, 0));
    elements.push(DicomElement::new(PIXEL_DATA, if bits == 8 { "OB" } else { "OW" }, pixel));
    Ok(encode_elements(&elements))
}

/// Convenience constructor used by fixtures and the synthetic corpus generator.
pub fn new_image(pixels: Tensor, bits_allocated: u16, photometric: Photometric, tags: &[(Tag, &str)]) -> DicomImage {
    let mut map = BTreeMap::new();
    for (t, v) in tags {
        map.insert(t.to_string(), v.to_string());
    }
    DicomImage {
        pixels,
        bits_allocated,
        photometric,
        tags: map,
    }
}
