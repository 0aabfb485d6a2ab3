//! `CGSG` segment files and two-level ID-map PNGs.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{RawSegments, Segment, TwoLevelMask, ID_STRIDE};
use crate::imageio::{read_gray16, write_gray16};
use crate::{Error, Level, Result};

pub const SEGMENT_MAGIC: &[u8; 4] = b"CGSG";

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::format(format!("truncated segment file ({what})")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_segments<W: Write>(w: &mut W, raw: &RawSegments) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(SEGMENT_MAGIC);
    for v in [raw.view_id, raw.width, raw.height, raw.segments.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in &raw.segments {
        for v in [s.id, s.area, s.bbox[0], s.bbox[1], s.bbox[2], s.bbox[3], s.rle.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &s.rle {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&out)?;
    Ok(())
}

/// Reads one view's segments, validating every RLE against its bbox and area.
pub fn read_segments<R: Read>(r: &mut R) -> Result<RawSegments> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::format("truncated segment file (magic)"))?;
    if &magic != SEGMENT_MAGIC {
        return Err(Error::format("bad segment file magic (expected CGSG)"));
    }
    let view_id = read_u32(r, "view id")?;
    let width = read_u32(r, "width")?;
    let height = read_u32(r, "height")?;
    let count = read_u32(r, "segment count")?;
    let mut segments = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let id = read_u32(r, "segment id")?;
        let area = read_u32(r, "area")?;
        let bbox = [read_u32(r, "bbox")?, read_u32(r, "bbox")?, read_u32(r, "bbox")?, read_u32(r, "bbox")?];
        let len = read_u32(r, "rle length")?;
        let mut rle = Vec::with_capacity(len.min(1 << 20) as usize);
        for _ in 0..len {
            rle.push(read_u32(r, "rle")?);
        }
        let s = Segment { id, area, bbox, rle };
        if bbox[0] as u64 + bbox[2] as u64 > width as u64 || bbox[1] as u64 + bbox[3] as u64 > height as u64 {
            return Err(Error::format(format!("segment {id}: bbox {bbox:?} exceeds {width}x{height}")));
        }
        s.decode_window()?;
        segments.push(s);
    }
    Ok(RawSegments { view_id, width, height, segments })
}

fn segment_file(dir: &Path, view_id: u32) -> PathBuf {
    dir.join(format!("{view_id:04}.cgsg"))
}

/// Writes `<dir>/<view>.cgsg` and returns its path.
pub fn save_segments(raw: &RawSegments, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let path = segment_file(dir.as_ref(), raw.view_id);
    let mut bytes = Vec::new();
    write_segments(&mut bytes, raw)?;
    std::fs::write(&path, bytes)?;
    Ok(path)
}

/// Loads every `*.cgsg` file in `dir`, ordered by view id, with segment IDs
/// offset to `view_id * 65536 + local_id` so they are unique across views.
pub fn load_segments(dir: impl AsRef<Path>) -> Result<Vec<RawSegments>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cgsg"))
        .collect();
    paths.sort();
    let mut views = Vec::with_capacity(paths.len());
    for p in paths {
        let bytes = std::fs::read(&p)?;
        let mut cursor = &bytes[..];
        let mut raw = read_segments(&mut cursor).map_err(|e| Error::format(format!("{}: {e}", p.display())))?;
        if !cursor.is_empty() {
            return Err(Error::format(format!("{}: trailing bytes", p.display())));
        }
        if raw.view_id >= (i32::MAX as u32) / ID_STRIDE {
            return Err(Error::format(format!("{}: view id {} too large", p.display(), raw.view_id)));
        }
        for s in &mut raw.segments {
            if s.id == 0 || s.id >= ID_STRIDE {
                return Err(Error::format(format!("{}: segment id {} outside 1..{ID_STRIDE}", p.display(), s.id)));
            }
            s.id += raw.view_id * ID_STRIDE;
        }
        views.push(raw);
    }
    views.sort_by_key(|v| v.view_id);
    if views.windows(2).any(|w| w[0].view_id == w[1].view_id) {
        return Err(Error::format("duplicate view id among segment files"));
    }
    Ok(views)
}

fn local_ids(mask: &TwoLevelMask, level: Level) -> Result<Vec<u16>> {
    let offset = mask.view_id as i64 * ID_STRIDE as i64;
    mask.level(level)
        .iter()
        .map(|&id| {
            let id = id as i64;
            let local = if id >= offset && offset > 0 { id - offset } else { id };
            u16::try_from(local).map_err(|_| Error::format(format!("segment id {id} does not fit a 16-bit ID map")))
        })
        .collect()
}

/// Writes `<dir>/<view>_coarse.png` and `<dir>/<view>_fine.png` (16-bit, view-local IDs).
pub fn save_two_level(mask: &TwoLevelMask, dir: impl AsRef<Path>) -> Result<()> {
    for level in Level::BOTH {
        let path = dir.as_ref().join(format!("{:04}_{level}.png", mask.view_id));
        write_gray16(path, mask.width, mask.height, &local_ids(mask, level)?)?;
    }
    Ok(())
}

/// Reads the maps written by [`save_two_level`] (view-local IDs).
pub fn read_two_level(dir: impl AsRef<Path>, view_id: u32) -> Result<TwoLevelMask> {
    let mut mask: Option<TwoLevelMask> = None;
    for level in Level::BOTH {
        let (w, h, data) = read_gray16(dir.as_ref().join(format!("{view_id:04}_{level}.png")))?;
        let m = mask.get_or_insert_with(|| TwoLevelMask::empty(view_id, w, h));
        if (m.width, m.height) != (w, h) {
            return Err(Error::format("coarse and fine ID maps differ in size"));
        }
        *m.level_mut(level) = data.into_iter().map(i32::from).collect();
    }
    Ok(mask.unwrap())
}
