//! Archive files on disk: whole-file write/read plus a reader that fetches
//! single views through positional reads, so concurrent readers can share
//! one open file and only touch the bytes they need.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use distillcache_core::archive::{
    check_map_values, decode_archive, decode_halves, decode_mask_record, encode_archive, ArchiveHeader, ArchiveStats, HalfView,
    HalfViewSet, MaskRecordHeader, Section, HEADER_LEN,
};
use distillcache_core::{Error as CoreError, Half, RleMask};

use crate::error::{CliError, CliResult};

pub const ARCHIVE_EXTENSION: &str = "d3rc";

/// Writes an archive through a temporary sibling file and a rename, so a
/// crashed writer never leaves a half-written archive under the final name.
pub fn write_archive_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension(format!("{ARCHIVE_EXTENSION}.tmp"));
    let mut f = File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Encodes and writes a view set; returns the number of bytes written.
pub fn write_archive(path: &Path, set: &HalfViewSet) -> CliResult<u64> {
    let bytes = encode_archive(set)?;
    write_archive_bytes(path, &bytes)?;
    Ok(bytes.len() as u64)
}

/// Reads and fully validates an archive.
pub fn read_archive(path: &Path) -> CliResult<HalfViewSet> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_checked(&bytes).map_err(|e| CliError::from_core_at(path, e))
}

/// Structural decode plus halfword value checks (finite, confidences ≥ 0).
pub fn decode_checked(bytes: &[u8]) -> Result<HalfViewSet, CoreError> {
    let set = decode_archive(bytes)?;
    let header = ArchiveHeader::parse(bytes)?;
    for s in Section::MAPS {
        let e = header.section(s);
        let halves = decode_halves(&bytes[e.offset as usize..e.end() as usize]);
        check_map_values(s, &halves, u64::from(e.offset))?;
    }
    Ok(set)
}

/// Lists archive files in a directory, sorted by name.
pub fn list_archives(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == ARCHIVE_EXTENSION) && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Size accounting for an archive file.
pub fn archive_stats(path: &Path, source_image_bytes: Option<u64>) -> CliResult<ArchiveStats> {
    let reader = ArchiveReader::open(path)?;
    Ok(ArchiveStats::new(reader.header(), reader.len(), source_image_bytes))
}

#[cfg(unix)]
fn read_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::read_exact_at(file, buf, offset)
}

#[cfg(windows)]
fn read_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, offset)? {
            0 => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            n => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
        }
    }
    Ok(())
}

/// Random-access reader over one archive file. Only the header is read on
/// open; `&self` methods use positional reads and are safe to call from
/// several threads at once.
#[derive(Debug)]
pub struct ArchiveReader {
    path: PathBuf,
    file: File,
    header: ArchiveHeader,
    len: u64,
}

impl ArchiveReader {
    pub fn open(path: &Path) -> CliResult<Self> {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        let len = file.metadata().map_err(|e| CliError::io(path, e))?.len();
        let mut head = vec![0u8; HEADER_LEN.min(len as usize)];
        read_at(&file, &mut head, 0).map_err(|e| CliError::io(path, e))?;
        let header = ArchiveHeader::parse(&head).map_err(|e| CliError::from_core_at(path, e))?;
        header.check_file_len(len).map_err(|e| CliError::from_core_at(path, e))?;
        Ok(ArchiveReader { path: path.to_path_buf(), file, header, len })
    }

    pub fn header(&self) -> &ArchiveHeader {
        &self.header
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_views(&self) -> usize {
        usize::from(self.header.n_views)
    }

    fn bytes(&self, offset: u64, len: usize) -> CliResult<Vec<u8>> {
        let mut buf = vec![0u8; len];
        read_at(&self.file, &mut buf, offset).map_err(|e| CliError::io(&self.path, e))?;
        Ok(buf)
    }

    /// One view's halfwords from a map section.
    pub fn read_map(&self, section: Section, view: usize) -> CliResult<Vec<Half>> {
        let (offset, len) = self.header.view_span(section, view)?;
        let halves = decode_halves(&self.bytes(offset, len)?);
        check_map_values(section, &halves, offset).map_err(|e| CliError::from_core_at(&self.path, e))?;
        Ok(halves)
    }

    /// One view's mask and degenerate flag, located through the mask index.
    pub fn read_mask(&self, view: usize) -> CliResult<(RleMask, bool)> {
        if view >= self.n_views() {
            return Err(CliError::input(format!("view {view} out of range (archive has {})", self.n_views())));
        }
        let section = self.header.section(Section::Masks);
        let index_at = u64::from(section.offset) + 4 * view as u64;
        let idx = self.bytes(index_at, 4)?;
        let rel = u64::from(u32::from_le_bytes([idx[0], idx[1], idx[2], idx[3]]));
        let at = u64::from(section.offset) + rel;
        let corrupt = |e| CliError::from_core_at(&self.path, e);
        if rel + MaskRecordHeader::LEN as u64 > u64::from(section.length) {
            return Err(corrupt(CoreError::Corrupt { offset: index_at, reason: format!("mask record offset {rel} out of range") }));
        }
        let head = MaskRecordHeader::parse(&self.bytes(at, MaskRecordHeader::LEN)?, at).map_err(corrupt)?;
        if rel + head.record_len() as u64 > u64::from(section.length) {
            return Err(corrupt(CoreError::Corrupt { offset: at + 4, reason: "mask runs run past the section".into() }));
        }
        decode_mask_record(&self.bytes(at, head.record_len())?, at, self.header.res).map_err(corrupt)
    }

    pub fn read_view(&self, view: usize) -> CliResult<HalfView> {
        let (mask, degenerate) = self.read_mask(view)?;
        Ok(HalfView {
            pts_global: self.read_map(Section::PointsGlobal, view)?,
            pts_local: self.read_map(Section::PointsLocal, view)?,
            conf_global: self.read_map(Section::ConfGlobal, view)?,
            conf_local: self.read_map(Section::ConfLocal, view)?,
            mask,
            degenerate,
        })
    }

    /// Reads every view and checks the result as a whole.
    pub fn read_all(&self) -> CliResult<HalfViewSet> {
        let views = (0..self.n_views()).map(|k| self.read_view(k)).collect::<CliResult<Vec<_>>>()?;
        HalfViewSet::new(self.header.res, views).map_err(|e| CliError::from_core_at(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use distillcache_core::teacher::{build_cache_sample, synth_teacher, CacheConfig, SyntheticScene};
    use distillcache_core::Resolution;

    fn fixture() -> (tempfile::TempDir, PathBuf, HalfViewSet) {
        let dir = tempfile::tempdir().unwrap();
        let teacher = synth_teacher(&SyntheticScene::new(3, 3, Resolution::new(30, 50))).unwrap();
        let built = build_cache_sample(&teacher, &CacheConfig { target: Resolution::new(28, 42), tau: 0.3 }).unwrap();
        let path = dir.path().join("s.d3rc");
        write_archive(&path, &built.views).unwrap();
        (dir, path, built.views)
    }

    #[test]
    fn random_access_matches_whole_file_read() {
        let (_dir, path, set) = fixture();
        assert_eq!(read_archive(&path).unwrap(), set);
        let reader = ArchiveReader::open(&path).unwrap();
        for k in (0..3).rev() {
            assert_eq!(&reader.read_view(k).unwrap(), &set.views()[k]);
        }
        assert_eq!(reader.read_all().unwrap(), set);
        assert!(reader.read_mask(3).is_err());
    }

    #[test]
    fn concurrent_readers_share_one_file() {
        let (_dir, path, set) = fixture();
        let reader = ArchiveReader::open(&path).unwrap();
        std::thread::scope(|s| {
            for k in 0..3 {
                let (reader, set) = (&reader, &set);
                s.spawn(move || assert_eq!(&reader.read_view(k).unwrap(), &set.views()[k]));
            }
        });
    }

    #[test]
    fn truncation_and_trailing_bytes_are_corruption() {
        let (_dir, path, _) = fixture();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = read_archive(&path).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert_eq!(err.offset(), Some(bytes.len() as u64 - 3));
        assert_eq!(ArchiveReader::open(&path).unwrap_err().exit_code(), 4);
        let mut longer = bytes.clone();
        longer.push(0);
        fs::write(&path, &longer).unwrap();
        assert_eq!(read_archive(&path).unwrap_err().offset(), Some(bytes.len() as u64));
    }

    #[test]
    fn non_finite_payload_is_reported_with_offset() {
        let (_dir, path, _) = fixture();
        let mut bytes = fs::read(&path).unwrap();
        let header = ArchiveHeader::parse(&bytes).unwrap();
        let at = header.section(Section::ConfLocal).offset as usize + 10;
        bytes[at..at + 2].copy_from_slice(&0x7C00u16.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let err = read_archive(&path).unwrap_err();
        assert_eq!(err.offset(), Some(at as u64));
        let reader = ArchiveReader::open(&path).unwrap();
        assert!(reader.read_map(Section::ConfLocal, 0).is_err());
        assert!(reader.read_map(Section::ConfLocal, 1).is_ok());
    }

    #[test]
    fn stats_and_listing() {
        let (dir, path, set) = fixture();
        let stats = archive_stats(&path, Some(1000)).unwrap();
        assert_eq!(stats.raw_f32_bytes, 2 * stats.map_bytes);
        assert_eq!(stats.map_bytes, (set.len() * 28 * 42 * 8 * 2) as u64);
        assert!(stats.stored_to_raw_ratio <= 0.51);
        assert_eq!(list_archives(dir.path()).unwrap(), vec![path]);
    }
}
