use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::raster::{BinaryMask, ClassId};

/// One prototype of the labelling session. `frame_index` counts frames over
/// the whole training split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub cluster_id: usize,
    pub frame_index: usize,
    pub instance_index: usize,
    pub label: Option<ClassId>,
}

pub fn read_session(path: &Path) -> Result<Vec<SessionEntry>> {
    let entries: Vec<SessionEntry> = read_jsonl(path)?;
    let mut ids: Vec<usize> = entries.iter().map(|e| e.cluster_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::format(path, "duplicate cluster id in session"));
    }
    Ok(entries)
}

pub fn write_session(path: &Path, entries: &[SessionEntry]) -> Result<()> {
    write_jsonl(path, entries)
}

/// Frame with the prototype tinted and framed by its bounding box.
pub fn render_overlay(image: &RgbImage, mask: &BinaryMask) -> RgbImage {
    const TINT: [f32; 3] = [255.0, 230.0, 40.0];
    let mut out = image.clone();
    for (x, y) in mask.pixels() {
        let p = out.get_pixel_mut(x as u32, y as u32);
        for c in 0..3 {
            p.0[c] = (0.55 * p.0[c] as f32 + 0.45 * TINT[c]).round() as u8;
        }
    }
    if let Some((x0, y0, x1, y1)) = mask.bbox() {
        let (w, h) = (image.width() as i64, image.height() as i64);
        let (x0, y0, x1, y1) = (
            (x0 as i64 - 2).max(0),
            (y0 as i64 - 2).max(0),
            (x1 as i64 + 2).min(w - 1),
            (y1 as i64 + 2).min(h - 1),
        );
        let green = Rgb([40, 255, 90]);
        for x in x0..=x1 {
            out.put_pixel(x as u32, y0 as u32, green);
            out.put_pixel(x as u32, y1 as u32, green);
        }
        for y in y0..=y1 {
            out.put_pixel(x0 as u32, y as u32, green);
            out.put_pixel(x1 as u32, y as u32, green);
        }
    }
    out
}
