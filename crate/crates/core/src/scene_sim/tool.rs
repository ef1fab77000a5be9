//! Tool geometry: a capsule shaft entering from a side border, capped by a
//! triangular tip. Everything is expressed in the tool's material frame so a
//! pose change is a rigid transform of the image plane.

use serde::{Deserialize, Serialize};

use crate::raster::ClassId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntrySide {
    Left,
    Right,
}

/// Appearance and geometry of one tool. Tools of the same class share
/// everything except `entry_side`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub class_id: ClassId,
    pub width_px: u32,
    pub color_mean: [u8; 3],
    pub texture_seed: u64,
    pub entry_side: EntrySide,
    pub tip_len_px: f64,
    /// Tip base half-width relative to the shaft radius.
    pub tip_flare: f64,
}

const PALETTE: [([u8; 3], f64, f64, f64); 8] = [
    // color, width (at 256 px), tip length, tip flare
    ([192, 192, 202], 14.0, 22.0, 0.6),
    ([62, 64, 76], 11.0, 16.0, 1.7),
    ([66, 112, 208], 17.0, 14.0, 1.2),
    ([216, 186, 64], 12.0, 26.0, 1.0),
    ([86, 188, 106], 15.0, 18.0, 1.4),
    ([158, 92, 204], 13.0, 20.0, 0.8),
    ([238, 238, 236], 16.0, 12.0, 1.5),
    ([36, 150, 162], 10.0, 24.0, 1.1),
];

const PALETTE_NAMES: [&str; 8] = [
    "steel", "graphite", "blue", "gold", "green", "violet", "white", "teal",
];

/// Display name of a class, following the palette entry it is drawn with.
pub fn class_name(class_id: ClassId) -> String {
    let base = PALETTE_NAMES[class_id % PALETTE_NAMES.len()];
    match class_id / PALETTE_NAMES.len() {
        0 => base.to_string(),
        cycle => format!("{base}-{cycle}"),
    }
}

impl ToolSpec {
    /// Class-determined appearance scaled to an image of the given width.
    pub fn for_class(class_id: ClassId, image_width: usize, entry_side: EntrySide) -> Self {
        let (color, width, tip, flare) = PALETTE[class_id % PALETTE.len()];
        // classes beyond the palette get a shifted hue of the base entry
        let cycle = (class_id / PALETTE.len()) as i32;
        let color = color.map(|c| (c as i32 + 37 * cycle).rem_euclid(256) as u8);
        let scale = image_width as f64 / 256.0;
        Self {
            class_id,
            width_px: ((width * scale).round() as u32).max(3),
            color_mean: color,
            texture_seed: 0x9e37_79b9_7f4a_7c15 ^ (class_id as u64).wrapping_mul(0x2545_f491),
            entry_side,
            tip_len_px: (tip * scale).max(2.0),
            tip_flare: flare,
        }
    }

    pub fn radius(&self) -> f64 {
        self.width_px as f64 / 2.0
    }

    /// Narrowest tool any class can produce at this image width.
    pub fn min_width_px(image_width: usize) -> u32 {
        (0..PALETTE.len())
            .map(|c| Self::for_class(c, image_width, EntrySide::Left).width_px)
            .min()
            .unwrap_or(3)
    }
}

/// Pose of a tool: anchor on its entry border, shaft direction and how far
/// the shaft end (where the tip begins) reaches along that direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolPose {
    pub anchor: [f64; 2],
    pub angle: f64,
    pub insertion: f64,
}

impl ToolPose {
    #[inline]
    pub fn direction(&self) -> [f64; 2] {
        [self.angle.cos(), self.angle.sin()]
    }

    /// Material coordinates `(s, v)` of an image point: `s` runs along the
    /// shaft with 0 at the tip base, `v` across it.
    #[inline]
    pub fn to_material(&self, p: [f64; 2]) -> [f64; 2] {
        let [dx, dy] = [p[0] - self.anchor[0], p[1] - self.anchor[1]];
        let [c, s] = self.direction();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        [u - self.insertion, v]
    }

    #[inline]
    pub fn from_material(&self, m: [f64; 2]) -> [f64; 2] {
        let [c, s] = self.direction();
        let u = m[0] + self.insertion;
        let v = m[1];
        [
            self.anchor[0] + u * c - v * s,
            self.anchor[1] + u * s + v * c,
        ]
    }

    /// Image-plane position at `next` of the material point under `p` now.
    #[inline]
    pub fn carry(&self, next: &ToolPose, p: [f64; 2]) -> [f64; 2] {
        next.from_material(self.to_material(p))
    }
}

/// True if material point `(s, v)` lies within `margin` of the tool body.
#[inline]
pub fn material_inside(spec: &ToolSpec, m: [f64; 2], margin: f64) -> bool {
    let [s, v] = m;
    let r = spec.radius() + margin;
    // shaft: half-plane behind the tip base plus a round cap
    if s <= 0.0 && v.abs() <= r {
        return true;
    }
    if s * s + v * v <= r * r {
        return true;
    }
    let tip = spec.tip_len_px;
    if s >= -margin && s <= tip + margin {
        let half = spec.radius() * spec.tip_flare * (1.0 - s.max(0.0) / tip).max(0.0);
        return v.abs() <= half + margin;
    }
    false
}

/// Longest distance from the anchor to any visible tool point.
pub fn reach(spec: &ToolSpec, pose: &ToolPose) -> f64 {
    pose.insertion + spec.tip_len_px.max(spec.radius()) + spec.radius()
}

/// Pixels covered by the tool, clipped to the image, in row-major order.
pub fn rasterize(
    spec: &ToolSpec,
    pose: &ToolPose,
    width: usize,
    height: usize,
    margin: f64,
) -> Vec<(usize, usize)> {
    let (x0, y0, x1, y1) = bounds(spec, pose, width, height, margin);
    let mut out = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            if material_inside(spec, pose.to_material([x as f64, y as f64]), margin) {
                out.push((x, y));
            }
        }
    }
    out
}

fn bounds(
    spec: &ToolSpec,
    pose: &ToolPose,
    width: usize,
    height: usize,
    margin: f64,
) -> (usize, usize, usize, usize) {
    let r = spec.radius().max(spec.radius() * spec.tip_flare) + margin + 1.0;
    let far = pose.from_material([spec.tip_len_px + margin, 0.0]);
    let near = pose.anchor;
    let [c, s] = pose.direction();
    // anchor sits on the border; extend slightly behind it to catch the shaft edge
    let behind = [near[0] - 2.0 * r * c, near[1] - 2.0 * r * s];
    let xs = [far[0], near[0], behind[0]];
    let ys = [far[1], near[1], behind[1]];
    let clamp = |v: f64, hi: usize| v.max(0.0).min(hi as f64 - 1.0);
    let xmin = clamp(xs.iter().cloned().fold(f64::INFINITY, f64::min) - r, width).floor();
    let xmax = clamp(
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + r,
        width,
    )
    .ceil();
    let ymin = clamp(ys.iter().cloned().fold(f64::INFINITY, f64::min) - r, height).floor();
    let ymax = clamp(
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + r,
        height,
    )
    .ceil();
    (xmin as usize, ymin as usize, xmax as usize, ymax as usize)
}
