//! Per-view segment masks and their coarse/fine ID maps.

mod coco;
mod io;

pub use coco::{convert_sam_json, decode_coco_counts, encode_coco_counts, segments_from_sam_json};
pub use io::{
    load_segments, read_segments, read_two_level, save_segments, save_two_level, write_segments, SEGMENT_MAGIC,
};

use crate::{Error, Level, Result};

/// Local segment IDs are offset by `view_id * ID_STRIDE` at load time.
pub const ID_STRIDE: u32 = 65536;

/// One segment: a bitmask inside its bounding box, run-length encoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub id: u32,
    pub area: u32,
    /// x, y, width, height.
    pub bbox: [u32; 4],
    /// Alternating zero/one run lengths over the row-major bbox window,
    /// starting with a (possibly empty) zero run.
    pub rle: Vec<u32>,
}

impl Segment {
    /// Builds a segment from a full-frame row-major bitmask; `None` if empty.
    pub fn from_mask(id: u32, width: u32, height: u32, mask: &[bool]) -> Option<Segment> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..height {
            for x in 0..width {
                if mask[(y * width + x) as usize] {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        if x0 == u32::MAX {
            return None;
        }
        let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
        let mut rle = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        let mut area = 0;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let v = mask[(y * width + x) as usize];
                area += v as u32;
                if v != current {
                    rle.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        rle.push(run);
        Some(Segment { id, area, bbox: [x0, y0, bw, bh], rle })
    }

    /// Decodes the bbox window (row-major, `bbox[2] * bbox[3]` entries).
    pub fn decode_window(&self) -> Result<Vec<bool>> {
        let total = self.bbox[2] as u64 * self.bbox[3] as u64;
        let sum: u64 = self.rle.iter().map(|&r| r as u64).sum();
        if sum != total {
            return Err(Error::format(format!(
                "segment {}: RLE covers {sum} pixels, bbox window has {total}",
                self.id
            )));
        }
        let mut out = Vec::with_capacity(total as usize);
        for (k, &r) in self.rle.iter().enumerate() {
            out.extend(std::iter::repeat_n(k % 2 == 1, r as usize));
        }
        let ones = out.iter().filter(|&&b| b).count() as u64;
        if ones != self.area as u64 {
            return Err(Error::format(format!("segment {}: area {} but RLE has {ones} pixels", self.id, self.area)));
        }
        Ok(out)
    }

    /// Calls `f(pixel_index)` for every covered pixel of a `width`×`height` frame.
    pub fn for_each_pixel(&self, width: u32, height: u32, mut f: impl FnMut(usize)) -> Result<()> {
        let [bx, by, bw, bh] = self.bbox;
        if bx as u64 + bw as u64 > width as u64 || by as u64 + bh as u64 > height as u64 {
            return Err(Error::format(format!("segment {}: bbox {:?} exceeds {width}x{height}", self.id, self.bbox)));
        }
        let window = self.decode_window()?;
        for (k, &on) in window.iter().enumerate() {
            if on {
                let (x, y) = (bx + k as u32 % bw, by + k as u32 / bw);
                f((y * width + x) as usize);
            }
        }
        Ok(())
    }
}

/// Overlapping segments of one view, as produced by an automatic mask generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSegments {
    pub view_id: u32,
    pub width: u32,
    pub height: u32,
    pub segments: Vec<Segment>,
}

/// Per-view coarse and fine segment ID maps (row-major, 0 = unassigned).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwoLevelMask {
    pub view_id: u32,
    pub width: u32,
    pub height: u32,
    pub coarse: Vec<i32>,
    pub fine: Vec<i32>,
}

impl TwoLevelMask {
    pub fn empty(view_id: u32, width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        TwoLevelMask { view_id, width, height, coarse: vec![0; n], fine: vec![0; n] }
    }

    pub fn level(&self, level: Level) -> &[i32] {
        match level {
            Level::Coarse => &self.coarse,
            Level::Fine => &self.fine,
        }
    }

    pub fn level_mut(&mut self, level: Level) -> &mut Vec<i32> {
        match level {
            Level::Coarse => &mut self.coarse,
            Level::Fine => &mut self.fine,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.coarse.len()
    }

    /// Pixels assigned at both levels.
    pub fn assigned_pixels(&self) -> Vec<usize> {
        (0..self.pixel_count()).filter(|&p| self.coarse[p] != 0 && self.fine[p] != 0).collect()
    }
}

/// Coarse takes the largest covering segment, fine the smallest; equal areas
/// resolve to the lower segment ID.
pub fn assign_levels(raw: &RawSegments) -> Result<TwoLevelMask> {
    let n = raw.width as usize * raw.height as usize;
    // (area, id) of the current coarse and fine winners.
    let mut big: Vec<Option<(u32, u32)>> = vec![None; n];
    let mut small: Vec<Option<(u32, u32)>> = vec![None; n];
    for s in &raw.segments {
        if s.id == 0 || s.id > i32::MAX as u32 {
            return Err(Error::format(format!("segment id {} out of range", s.id)));
        }
        s.for_each_pixel(raw.width, raw.height, |p| {
            let better_big = match big[p] {
                None => true,
                Some((a, id)) => s.area > a || (s.area == a && s.id < id),
            };
            if better_big {
                big[p] = Some((s.area, s.id));
            }
            let better_small = match small[p] {
                None => true,
                Some((a, id)) => s.area < a || (s.area == a && s.id < id),
            };
            if better_small {
                small[p] = Some((s.area, s.id));
            }
        })?;
    }
    let id_of = |v: &Option<(u32, u32)>| v.map_or(0, |(_, id)| id as i32);
    Ok(TwoLevelMask {
        view_id: raw.view_id,
        width: raw.width,
        height: raw.height,
        coarse: big.iter().map(id_of).collect(),
        fine: small.iter().map(id_of).collect(),
    })
}
