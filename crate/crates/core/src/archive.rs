//! Byte layout of the stacked supervision archive ("D3RC").
//!
//! ```text
//! offset  size  field
//!      0     4  magic "D3RC"
//!      4     2  version (u16, currently 1)
//!      6     2  n_views (u16)
//!      8     4  height (u32)
//!     12     4  width (u32)
//!     16     4  flags (u32, bit 0: at least one degenerate view)
//!     20     4  reserved, zero
//!     24    40  section table: 5 x (offset u32, length u32)
//!     64     -  sections, each starting on an 8-byte boundary, zero padded
//! ```
//!
//! Sections, in order: global points, local points, global confidence,
//! local confidence, masks. Map sections hold binary16 halfwords, view-major
//! then row-major, with 3 (points) or 1 (confidence) halfwords per pixel.
//! The mask section starts with one u32 record offset per view (relative to
//! the section start), followed by one record per view:
//! `first_value u8, flags u8 (bit 0: degenerate), reserved u16, run_count u32,
//! runs u32 * run_count`. All integers are little-endian.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{ConfidenceMap, Frame, PointMap, Resolution, View, ViewMaps, ViewSet};
use crate::half::{self, Half};
use crate::rle::RleMask;

pub const MAGIC: [u8; 4] = *b"D3RC";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 64;
pub const SECTION_ALIGN: usize = 8;
/// Header flag: at least one view has an empty validity mask.
pub const FLAG_DEGENERATE: u32 = 1;
/// Mask record flag: this view has an empty validity mask.
pub const VIEW_FLAG_DEGENERATE: u8 = 1;
const MASK_RECORD_HEADER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Section {
    PointsGlobal,
    PointsLocal,
    ConfGlobal,
    ConfLocal,
    Masks,
}

impl Section {
    pub const ALL: [Section; 5] =
        [Section::PointsGlobal, Section::PointsLocal, Section::ConfGlobal, Section::ConfLocal, Section::Masks];
    pub const MAPS: [Section; 4] = [Section::PointsGlobal, Section::PointsLocal, Section::ConfGlobal, Section::ConfLocal];

    /// Halfwords per pixel for map sections.
    pub fn channels(self) -> Option<usize> {
        match self {
            Section::PointsGlobal | Section::PointsLocal => Some(3),
            Section::ConfGlobal | Section::ConfLocal => Some(1),
            Section::Masks => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Section::PointsGlobal => "points_global",
            Section::PointsLocal => "points_local",
            Section::ConfGlobal => "conf_global",
            Section::ConfLocal => "conf_local",
            Section::Masks => "masks",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SectionEntry {
    pub offset: u32,
    pub length: u32,
}

impl SectionEntry {
    pub fn end(&self) -> u64 {
        u64::from(self.offset) + u64::from(self.length)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveHeader {
    pub version: u16,
    pub n_views: u16,
    pub res: Resolution,
    pub flags: u32,
    pub sections: [SectionEntry; 5],
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

const fn align_up(v: u64) -> u64 {
    v.div_ceil(SECTION_ALIGN as u64) * SECTION_ALIGN as u64
}

impl ArchiveHeader {
    /// Parses and validates the fixed 64-byte header. Only the first
    /// `HEADER_LEN` bytes are inspected.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::corrupt(
                bytes.len() as u64,
                format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
            ));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:02x?}, expected \"D3RC\"", &bytes[0..4])));
        }
        let version = le_u16(bytes, 4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported archive version {version}")));
        }
        let n_views = le_u16(bytes, 6);
        let height = le_u32(bytes, 8);
        let width = le_u32(bytes, 12);
        let flags = le_u32(bytes, 16);
        if n_views == 0 {
            return Err(Error::corrupt(6, "archive declares zero views"));
        }
        if height == 0 || width == 0 {
            return Err(Error::corrupt(8, format!("archive declares zero-sized maps {height}x{width}")));
        }
        if flags & !FLAG_DEGENERATE != 0 {
            return Err(Error::corrupt(16, format!("unknown header flags {flags:#x}")));
        }
        if le_u32(bytes, 20) != 0 {
            return Err(Error::corrupt(20, "reserved header field is not zero"));
        }
        let mut sections = [SectionEntry::default(); 5];
        for (i, s) in sections.iter_mut().enumerate() {
            s.offset = le_u32(bytes, 24 + 8 * i);
            s.length = le_u32(bytes, 28 + 8 * i);
        }
        let header = ArchiveHeader {
            version,
            n_views,
            res: Resolution::new(height as usize, width as usize),
            flags,
            sections,
        };
        header.check_layout()?;
        Ok(header)
    }

    fn check_layout(&self) -> Result<()> {
        let mut prev_end = HEADER_LEN as u64;
        for (i, section) in Section::ALL.iter().enumerate() {
            let entry = self.sections[i];
            let field = 24 + 8 * i as u64;
            if entry.offset as usize % SECTION_ALIGN != 0 {
                return Err(Error::corrupt(field, format!("{} offset {} is not 8-byte aligned", section.name(), entry.offset)));
            }
            if u64::from(entry.offset) < prev_end {
                return Err(Error::corrupt(field, format!("{} overlaps the preceding data", section.name())));
            }
            if u64::from(entry.offset) - prev_end >= SECTION_ALIGN as u64 {
                return Err(Error::corrupt(field, format!("{} has unexpected padding before it", section.name())));
            }
            match section.channels() {
                Some(_) => {
                    let want = self.map_section_len(*section);
                    if u64::from(entry.length) != want {
                        return Err(Error::corrupt(
                            field + 4,
                            format!("{} length {} does not match {want} for {} views at {}", section.name(), entry.length, self.n_views, self.res),
                        ));
                    }
                }
                None => {
                    let min = u64::from(self.n_views) * (4 + MASK_RECORD_HEADER as u64);
                    if u64::from(entry.length) < min {
                        return Err(Error::corrupt(field + 4, format!("mask section length {} is below minimum {min}", entry.length)));
                    }
                }
            }
            prev_end = entry.end();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6..8].copy_from_slice(&self.n_views.to_le_bytes());
        out[8..12].copy_from_slice(&(self.res.height as u32).to_le_bytes());
        out[12..16].copy_from_slice(&(self.res.width as u32).to_le_bytes());
        out[16..20].copy_from_slice(&self.flags.to_le_bytes());
        for (i, s) in self.sections.iter().enumerate() {
            out[24 + 8 * i..28 + 8 * i].copy_from_slice(&s.offset.to_le_bytes());
            out[28 + 8 * i..32 + 8 * i].copy_from_slice(&s.length.to_le_bytes());
        }
        out
    }

    pub fn section(&self, section: Section) -> SectionEntry {
        self.sections[section.index()]
    }

    /// Byte length of a map section implied by the header dimensions.
    pub fn map_section_len(&self, section: Section) -> u64 {
        let channels = section.channels().unwrap_or(0) as u64;
        u64::from(self.n_views) * self.res.pixels() as u64 * channels * 2
    }

    /// Absolute byte span of one view inside a map section.
    pub fn view_span(&self, section: Section, view: usize) -> Result<(u64, usize)> {
        let channels = section
            .channels()
            .ok_or_else(|| Error::invalid_argument("mask records are located through the mask index"))?;
        if view >= usize::from(self.n_views) {
            return Err(Error::invalid_argument(format!("view {view} out of range (archive has {})", self.n_views)));
        }
        let len = self.res.pixels() * channels * 2;
        Ok((u64::from(self.section(section).offset) + (view * len) as u64, len))
    }

    /// Total bytes the archive must have.
    pub fn expected_file_len(&self) -> u64 {
        self.section(Section::Masks).end()
    }

    /// Rejects files shorter or longer than the section table implies.
    pub fn check_file_len(&self, len: u64) -> Result<()> {
        let want = self.expected_file_len();
        if len < want {
            return Err(Error::corrupt(len, format!("file truncated: {len} of {want} bytes present")));
        }
        if len > want {
            return Err(Error::corrupt(want, format!("{} trailing bytes after the mask section", len - want)));
        }
        Ok(())
    }

    pub fn map_bytes(&self) -> u64 {
        Section::MAPS.iter().map(|s| u64::from(self.section(*s).length)).sum()
    }

    pub fn has_degenerate(&self) -> bool {
        self.flags & FLAG_DEGENERATE != 0
    }
}

/// One view as stored: quantized maps, RLE mask and degenerate flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HalfView {
    pub pts_global: Vec<Half>,
    pub pts_local: Vec<Half>,
    pub conf_global: Vec<Half>,
    pub conf_local: Vec<Half>,
    pub mask: RleMask,
    pub degenerate: bool,
}

impl HalfView {
    pub fn map(&self, section: Section) -> &[Half] {
        match section {
            Section::PointsGlobal => &self.pts_global,
            Section::PointsLocal => &self.pts_local,
            Section::ConfGlobal => &self.conf_global,
            Section::ConfLocal => &self.conf_local,
            Section::Masks => &[],
        }
    }
}

/// Stacked N-view sample in storage precision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HalfViewSet {
    res: Resolution,
    views: Vec<HalfView>,
}

impl HalfViewSet {
    pub fn new(res: Resolution, views: Vec<HalfView>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::invalid_argument("a view set needs at least one view"));
        }
        for (k, v) in views.iter().enumerate() {
            for s in Section::MAPS {
                let want = res.pixels() * s.channels().unwrap_or(0);
                if v.map(s).len() != want {
                    return Err(Error::shape(format!("view {k} {} has {} halfwords, expected {want}", s.name(), v.map(s).len())));
                }
            }
            if v.mask.res != res {
                return Err(Error::shape(format!("view {k} mask is {}, expected {res}", v.mask.res)));
            }
            v.mask.validate()?;
            if v.degenerate != (v.mask.valid_count() == 0) {
                return Err(Error::invalid_data(format!("view {k} degenerate flag disagrees with its mask")));
            }
        }
        Ok(HalfViewSet { res, views })
    }

    pub fn resolution(&self) -> Resolution {
        self.res
    }

    pub fn views(&self) -> &[HalfView] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn degenerate_views(&self) -> usize {
        self.views.iter().filter(|v| v.degenerate).count()
    }

    /// Decodes to full precision for the loss and evaluator.
    pub fn to_view_set(&self) -> Result<ViewSet> {
        let views = self
            .views
            .iter()
            .map(|v| {
                let maps = ViewMaps::new(
                    PointMap::new(self.res, Frame::Global, half::decode_slice(&v.pts_global))?,
                    PointMap::new(self.res, Frame::Local, half::decode_slice(&v.pts_local))?,
                    ConfidenceMap::new(self.res, half::decode_slice(&v.conf_global))?,
                    ConfidenceMap::new(self.res, half::decode_slice(&v.conf_local))?,
                )?;
                Ok(View { maps, mask: v.mask.decode()? })
            })
            .collect::<Result<Vec<_>>>()?;
        ViewSet::new(views)
    }
}

fn mask_record_len(mask: &RleMask) -> usize {
    MASK_RECORD_HEADER + mask.payload_bytes()
}

/// Serializes a view set. Identical inputs give identical bytes.
pub fn encode_archive(set: &HalfViewSet) -> Result<Vec<u8>> {
    let n = set.views.len();
    let n_views = u16::try_from(n).map_err(|_| Error::invalid_argument(format!("{n} views exceed the u16 view count")))?;
    let height = u32::try_from(set.res.height).map_err(|_| Error::invalid_argument("height exceeds u32"))?;
    let width = u32::try_from(set.res.width).map_err(|_| Error::invalid_argument("width exceeds u32"))?;

    let mut sections = [SectionEntry::default(); 5];
    let mut cursor = HEADER_LEN as u64;
    for (i, s) in Section::ALL.iter().enumerate() {
        let len = match s.channels() {
            Some(c) => (n * set.res.pixels() * c * 2) as u64,
            None => (n * 4 + set.views.iter().map(|v| mask_record_len(&v.mask)).sum::<usize>()) as u64,
        };
        cursor = align_up(cursor);
        let offset = u32::try_from(cursor);
        let length = u32::try_from(len);
        match (offset, length, u32::try_from(cursor + len)) {
            (Ok(offset), Ok(length), Ok(_)) => sections[i] = SectionEntry { offset, length },
            _ => return Err(Error::invalid_argument("archive would exceed 4 GiB")),
        }
        cursor += len;
    }

    let flags = if set.views.iter().any(|v| v.degenerate) { FLAG_DEGENERATE } else { 0 };
    let header = ArchiveHeader {
        version: VERSION,
        n_views,
        res: Resolution::new(height as usize, width as usize),
        flags,
        sections,
    };

    let mut out = Vec::with_capacity(cursor as usize);
    out.extend_from_slice(&header.to_bytes());
    for s in Section::MAPS {
        out.resize(header.section(s).offset as usize, 0);
        for v in &set.views {
            for h in v.map(s) {
                out.extend_from_slice(&h.to_bits().to_le_bytes());
            }
        }
    }
    out.resize(header.section(Section::Masks).offset as usize, 0);
    let mut rel = (n * 4) as u32;
    for v in &set.views {
        out.extend_from_slice(&rel.to_le_bytes());
        rel += mask_record_len(&v.mask) as u32;
    }
    for v in &set.views {
        out.push(u8::from(v.mask.first_value));
        out.push(if v.degenerate { VIEW_FLAG_DEGENERATE } else { 0 });
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(v.mask.runs.len() as u32).to_le_bytes());
        for r in &v.mask.runs {
            out.extend_from_slice(&r.to_le_bytes());
        }
    }
    debug_assert_eq!(out.len() as u64, header.expected_file_len());
    Ok(out)
}

/// Decodes little-endian halfwords.
pub fn decode_halves(bytes: &[u8]) -> Vec<Half> {
    bytes.chunks_exact(2).map(|c| Half::from_bits(u16::from_le_bytes([c[0], c[1]]))).collect()
}

/// Fixed part of one mask record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskRecordHeader {
    pub first_value: bool,
    pub degenerate: bool,
    pub run_count: u32,
}

impl MaskRecordHeader {
    pub const LEN: usize = MASK_RECORD_HEADER;

    /// `at` is the absolute file offset of the record, used in errors.
    pub fn parse(bytes: &[u8], at: u64) -> Result<Self> {
        if bytes.len() < MASK_RECORD_HEADER {
            return Err(Error::corrupt(at + bytes.len() as u64, "truncated mask record"));
        }
        let first_value = match bytes[0] {
            0 => false,
            1 => true,
            b => return Err(Error::corrupt(at, format!("mask first_value byte is {b}"))),
        };
        if bytes[1] & !VIEW_FLAG_DEGENERATE != 0 {
            return Err(Error::corrupt(at + 1, format!("unknown mask flags {:#x}", bytes[1])));
        }
        if bytes[2] != 0 || bytes[3] != 0 {
            return Err(Error::corrupt(at + 2, "reserved mask bytes are not zero"));
        }
        Ok(MaskRecordHeader {
            first_value,
            degenerate: bytes[1] & VIEW_FLAG_DEGENERATE != 0,
            run_count: le_u32(bytes, 4),
        })
    }

    pub fn record_len(&self) -> usize {
        MASK_RECORD_HEADER + self.run_count as usize * 4
    }
}

/// Decodes one complete mask record (header + runs) and checks it.
pub fn decode_mask_record(bytes: &[u8], at: u64, res: Resolution) -> Result<(RleMask, bool)> {
    let head = MaskRecordHeader::parse(bytes, at)?;
    if bytes.len() < head.record_len() {
        return Err(Error::corrupt(at + bytes.len() as u64, "mask runs run past the record"));
    }
    let runs: Vec<u32> = bytes[MASK_RECORD_HEADER..head.record_len()]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mask = RleMask { res, first_value: head.first_value, runs };
    mask.validate().map_err(|e| match e {
        Error::Corrupt { reason, .. } => Error::corrupt(at, reason),
        other => other,
    })?;
    if head.degenerate != (mask.valid_count() == 0) {
        return Err(Error::corrupt(at + 1, "degenerate flag disagrees with the mask runs"));
    }
    Ok((mask, head.degenerate))
}

/// Parses the whole mask section. `section` must be exactly the section bytes.
pub fn decode_mask_section(section: &[u8], header: &ArchiveHeader) -> Result<Vec<(RleMask, bool)>> {
    let base = u64::from(header.section(Section::Masks).offset);
    let n = usize::from(header.n_views);
    if section.len() < n * 4 {
        return Err(Error::corrupt(base + section.len() as u64, "truncated mask index"));
    }
    let mut out = Vec::with_capacity(n);
    let mut expected = n * 4;
    for k in 0..n {
        let rel = le_u32(section, k * 4) as usize;
        if rel != expected {
            return Err(Error::corrupt(base + (k * 4) as u64, format!("mask record {k} offset {rel}, expected {expected}")));
        }
        let record = &section[rel.min(section.len())..];
        let (mask, degenerate) = decode_mask_record(record, base + rel as u64, header.res)?;
        expected = rel + mask_record_len(&mask);
        out.push((mask, degenerate));
    }
    if expected != section.len() {
        return Err(Error::corrupt(base + expected as u64, "mask section length disagrees with its records"));
    }
    Ok(out)
}

/// Parses a complete archive held in memory.
pub fn decode_archive(bytes: &[u8]) -> Result<HalfViewSet> {
    let header = ArchiveHeader::parse(bytes)?;
    header.check_file_len(bytes.len() as u64)?;
    let n = usize::from(header.n_views);
    let slice = |s: Section| {
        let e = header.section(s);
        &bytes[e.offset as usize..e.end() as usize]
    };
    let mut maps: Vec<Vec<Half>> = Section::MAPS.iter().map(|s| decode_halves(slice(*s))).collect();
    let masks = decode_mask_section(slice(Section::Masks), &header)?;
    if header.has_degenerate() != masks.iter().any(|(_, d)| *d) {
        return Err(Error::corrupt(16, "header degenerate flag disagrees with the mask records"));
    }
    let mut views = Vec::with_capacity(n);
    let mut split: Vec<_> = maps.iter_mut().map(|m| core::mem::take(m).into_iter()).collect();
    for (mask, degenerate) in masks {
        let mut take = |i: usize, c: usize| split[i].by_ref().take(header.res.pixels() * c).collect::<Vec<_>>();
        views.push(HalfView {
            pts_global: take(0, 3),
            pts_local: take(1, 3),
            conf_global: take(2, 1),
            conf_local: take(3, 1),
            mask,
            degenerate,
        });
    }
    HalfViewSet::new(header.res, views)
}

/// Size accounting for one archive.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArchiveStats {
    pub stored_bytes: u64,
    pub map_bytes: u64,
    pub mask_bytes: u64,
    /// Size the four maps would take in float32.
    pub raw_f32_bytes: u64,
    pub stored_to_raw_ratio: f64,
    pub expansion_ratio_vs_source_images: Option<f64>,
}

impl ArchiveStats {
    pub fn new(header: &ArchiveHeader, stored_bytes: u64, source_image_bytes: Option<u64>) -> Self {
        let map_bytes = header.map_bytes();
        let raw_f32_bytes = 2 * map_bytes;
        ArchiveStats {
            stored_bytes,
            map_bytes,
            mask_bytes: u64::from(header.section(Section::Masks).length),
            raw_f32_bytes,
            stored_to_raw_ratio: stored_bytes as f64 / raw_f32_bytes as f64,
            expansion_ratio_vs_source_images: source_image_bytes
                .filter(|b| *b > 0)
                .map(|b| stored_bytes as f64 / b as f64),
        }
    }
}

/// Checks that every map halfword is finite and confidences are not negative.
pub fn check_map_values(section: Section, halves: &[Half], first_offset: u64) -> Result<()> {
    for (i, h) in halves.iter().enumerate() {
        let at = first_offset + 2 * i as u64;
        if !h.is_finite() {
            return Err(Error::corrupt(at, format!("non-finite halfword {:#06x} in {}", h.to_bits(), section.name())));
        }
        if section.channels() == Some(1) && h.is_sign_negative() && h.to_bits() != 0x8000 {
            return Err(Error::corrupt(at, format!("negative confidence {} in {}", h.to_f32(), section.name())));
        }
    }
    Ok(())
}

/// Zero-initialized halfword buffer for a map of `res` with `channels`.
pub fn zero_map(res: Resolution, channels: usize) -> Vec<Half> {
    vec![Half::ZERO; res.pixels() * channels]
}
