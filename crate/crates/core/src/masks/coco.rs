//! Converter from automatic-mask-generator JSON exports (COCO RLE) to `CGSG`.
//!
//! Each input file is a JSON array of annotations with a `segmentation`
//! object `{"size": [h, w], "counts": ...}`; `counts` is either the
//! compressed COCO string or a plain list of run lengths. COCO runs are
//! column-major over the full image and start with a zero run.

use std::path::{Path, PathBuf};

use serde_json::Value;

use super::{assign_levels, save_segments, save_two_level, RawSegments, Segment};
use crate::{Error, Result};

/// Decodes the compressed COCO run-length string.
pub fn decode_coco_counts(s: &str) -> Result<Vec<u32>> {
    let bytes = s.as_bytes();
    let mut counts: Vec<i64> = Vec::new();
    let mut p = 0;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut k = 0;
        loop {
            if p >= bytes.len() || k > 12 {
                return Err(Error::format("malformed COCO RLE string"));
            }
            let c = bytes[p] as i64 - 48;
            x |= (c & 0x1f) << (5 * k);
            p += 1;
            k += 1;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * k);
                }
                break;
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2];
        }
        counts.push(x);
    }
    counts
        .into_iter()
        .map(|c| u32::try_from(c).map_err(|_| Error::format("negative run in COCO RLE")))
        .collect()
}

/// Inverse of [`decode_coco_counts`].
pub fn encode_coco_counts(counts: &[u32]) -> String {
    let mut out = String::new();
    for i in 0..counts.len() {
        let mut x = counts[i] as i64;
        if i > 2 {
            x -= counts[i - 2] as i64;
        }
        loop {
            let mut c = x & 0x1f;
            x >>= 5;
            let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                c |= 0x20;
            }
            out.push((c + 48) as u8 as char);
            if !more {
                break;
            }
        }
    }
    out
}

fn parse_annotation(v: &Value) -> Result<(u32, u32, Vec<u32>)> {
    let seg = v.get("segmentation").ok_or_else(|| Error::format("annotation without `segmentation`"))?;
    let size = seg
        .get("size")
        .and_then(Value::as_array)
        .filter(|a| a.len() == 2)
        .ok_or_else(|| Error::format("segmentation without [h, w] `size`"))?;
    let dim = |k: usize| size[k].as_u64().and_then(|d| u32::try_from(d).ok()).ok_or_else(|| Error::format("bad size"));
    let (h, w) = (dim(0)?, dim(1)?);
    let counts = match seg.get("counts") {
        Some(Value::String(s)) => decode_coco_counts(s)?,
        Some(Value::Array(a)) => a
            .iter()
            .map(|c| c.as_u64().and_then(|c| u32::try_from(c).ok()).ok_or_else(|| Error::format("bad run length")))
            .collect::<Result<_>>()?,
        _ => return Err(Error::format("segmentation without `counts`")),
    };
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total != w as u64 * h as u64 {
        return Err(Error::format(format!("RLE covers {total} pixels, image has {}", w as u64 * h as u64)));
    }
    Ok((w, h, counts))
}

/// Parses one view's annotation array; segments are numbered 1.. in file order.
pub fn segments_from_sam_json(json: &str, view_id: u32) -> Result<RawSegments> {
    let v: Value = serde_json::from_str(json).map_err(|e| Error::format(format!("json: {e}")))?;
    let anns = v.as_array().ok_or_else(|| Error::format("expected a JSON array of annotations"))?;
    let mut dims: Option<(u32, u32)> = None;
    let mut segments = Vec::new();
    for (k, a) in anns.iter().enumerate() {
        let (w, h, counts) = parse_annotation(a)?;
        if *dims.get_or_insert((w, h)) != (w, h) {
            return Err(Error::format("annotations disagree on image size"));
        }
        let mut mask = vec![false; (w * h) as usize];
        let mut pos = 0usize;
        for (r, &c) in counts.iter().enumerate() {
            if r % 2 == 1 {
                for q in pos..pos + c as usize {
                    // column-major → row-major
                    let (x, y) = (q / h as usize, q % h as usize);
                    mask[y * w as usize + x] = true;
                }
            }
            pos += c as usize;
        }
        if let Some(s) = Segment::from_mask(k as u32 + 1, w, h, &mask) {
            segments.push(s);
        }
    }
    let (width, height) = dims.unwrap_or((0, 0));
    Ok(RawSegments { view_id, width, height, segments })
}

/// Converts every `*.json` in `in_dir` into `CGSG` files plus two-level PNGs
/// in `out_dir`. The view id is the numeric file stem, or the position in
/// sorted order for non-numeric stems. Nothing is written unless every input
/// parses.
pub fn convert_sam_json(in_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(in_dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Precondition(format!("no .json mask exports in {}", in_dir.as_ref().display())));
    }
    let numeric: Option<Vec<u32>> =
        paths.iter().map(|p| p.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok())).collect();
    let mut views = Vec::with_capacity(paths.len());
    for (k, p) in paths.iter().enumerate() {
        let view_id = numeric.as_ref().map_or(k as u32, |ids| ids[k]);
        let text = std::fs::read_to_string(p)?;
        let raw = segments_from_sam_json(&text, view_id).map_err(|e| Error::format(format!("{}: {e}", p.display())))?;
        let mask = assign_levels(&raw)?;
        views.push((raw, mask));
    }
    std::fs::create_dir_all(out_dir.as_ref())?;
    let mut written = Vec::new();
    for (raw, mask) in &views {
        written.push(save_segments(raw, out_dir.as_ref())?);
        save_two_level(mask, out_dir.as_ref())?;
    }
    Ok(written)
}
