//! Synthetic endoscopic-like sequences with complete ground truth: instance
//! masks with classes and identities, rigid per-tool motion (hence exact
//! optical flow) and frame-/sequence-wise presence labels.

mod tool;

use std::collections::{BTreeSet, VecDeque};

use image::{Rgb, RgbImage};
use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use tool::{class_name, material_inside, rasterize, reach, EntrySide, ToolPose, ToolSpec};

use crate::error::{Error, Result};
use crate::raster::{ClassId, DisplacementField, FlowField, InstanceMaskSet};
use crate::util::{derive_seed, sub_rng, value_noise, Rng};

/// Minimum gap (px) kept between tools that are not meant to overlap.
pub const SEPARATION_PX: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub width: usize,
    pub height: usize,
    pub n_classes: usize,
    pub n_frames: usize,
    pub max_instances_per_frame: usize,
    pub overlap_probability: f64,
    pub motion_px_per_frame: f64,
    pub absent_class_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            n_classes: 4,
            n_frames: 100,
            max_instances_per_frame: 4,
            overlap_probability: 0.1,
            motion_px_per_frame: 3.0,
            absent_class_fraction: 0.4,
        }
    }
}

impl SimConfig {
    fn min_insertion(&self) -> f64 {
        0.28 * self.width as f64
    }

    fn max_insertion(&self) -> f64 {
        0.5 * self.width as f64
    }

    /// Smallest visible area a tool can have (shaft only, shortest insertion).
    pub fn min_tool_area(&self) -> f64 {
        ToolSpec::min_width_px(self.width) as f64 * self.min_insertion()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::config("frames must be at least 16x16"));
        }
        if self.n_classes == 0 || self.n_frames == 0 {
            return Err(Error::config("n_classes and n_frames must be positive"));
        }
        for (name, p) in [
            ("overlap_probability", self.overlap_probability),
            ("absent_class_fraction", self.absent_class_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.motion_px_per_frame >= 0.0 && self.motion_px_per_frame.is_finite()) {
            return Err(Error::config(
                "motion_px_per_frame must be finite and non-negative",
            ));
        }
        let area = (self.width * self.height) as f64;
        if self.max_instances_per_frame as f64 * self.min_tool_area() > area / 2.0 {
            return Err(Error::config(format!(
                "unsatisfiable layout: {} instances x {:.0} px minimum tool area exceeds half the frame",
                self.max_instances_per_frame,
                self.min_tool_area()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimFrame {
    pub image: RgbImage,
    /// Visible instances, ordered by tool index, with class ids.
    pub instances: InstanceMaskSet,
    /// Ground-truth tool identity of every instance in `instances`.
    pub tool_ids: Vec<usize>,
    /// Pose of every tool of the sequence, visible or not.
    pub poses: Vec<ToolPose>,
    pub visible: Vec<bool>,
    pub presence_fw: BTreeSet<ClassId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSequence {
    pub config: SimConfig,
    pub seed: u64,
    pub tools: Vec<ToolSpec>,
    /// Tool pairs allowed to overlap each other.
    pub overlap_pairs: Vec<(usize, usize)>,
    pub brightness: f64,
    pub frames: Vec<SimFrame>,
    pub presence_sw: BTreeSet<ClassId>,
}

impl SyntheticSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Ground-truth flow for every consecutive frame pair.
    pub fn flows(&self) -> Vec<FlowField> {
        (0..self.frames.len().saturating_sub(1))
            .into_par_iter()
            .map(|t| gt_flow(self, t).expect("index in range"))
            .collect()
    }
}

/// Generates one sequence; a pure function of `(config, seed)`.
pub fn gen_sequence(config: &SimConfig, seed: u64) -> Result<SyntheticSequence> {
    config.validate()?;
    let mut rng = sub_rng(seed, 1);
    let (tools, mut poses, overlap_pairs) = initial_layout(config, &mut rng);
    let n_tools = tools.len();
    let visibility = absence_schedule(config, n_tools, &mut sub_rng(seed, 2));
    let brightness = 0.94 + 0.12 * sub_rng(seed, 3).random::<f64>();

    let mut pose_track = Vec::with_capacity(config.n_frames);
    pose_track.push(poses.clone());
    let mut motion_rng = sub_rng(seed, 4);
    for _ in 1..config.n_frames {
        step_poses(config, &tools, &overlap_pairs, &mut poses, &mut motion_rng);
        pose_track.push(poses.clone());
    }

    let background = render_background(config, derive_seed(seed, 5));
    let frames: Vec<SimFrame> = pose_track
        .into_par_iter()
        .zip(visibility.into_par_iter())
        .map(|(poses, visible)| {
            render_frame(config, &tools, poses, visible, &background, brightness)
        })
        .collect();

    let presence_sw = frames
        .iter()
        .flat_map(|f| f.presence_fw.iter().copied())
        .collect();
    Ok(SyntheticSequence {
        config: config.clone(),
        seed,
        tools,
        overlap_pairs,
        brightness,
        frames,
        presence_sw,
    })
}

/// Vector from every instance pixel to its instance's arithmetic-mean centroid.
pub fn gt_displacement(masks: &InstanceMaskSet) -> DisplacementField {
    let (w, h) = masks.dims();
    let centroids = masks.centroids();
    let mut field = DisplacementField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if let Some(i) = masks.instance_at(x, y) {
                let c = centroids[i].expect("instance with a pixel has a centroid");
                field.set(x, y, [(c[0] - x as f64) as f32, (c[1] - y as f64) as f32]);
            }
        }
    }
    field
}

/// Exact optical flow between frames `t` and `t + 1`: the rigid motion of the
/// owning tool on instance pixels, zero on background.
pub fn gt_flow(seq: &SyntheticSequence, t: usize) -> Result<FlowField> {
    if t + 1 >= seq.frames.len() {
        return Err(Error::OutOfRange {
            index: t,
            len: seq.frames.len().saturating_sub(1),
        });
    }
    let now = &seq.frames[t];
    let next = &seq.frames[t + 1];
    let (w, h) = now.instances.dims();
    let mut flow = FlowField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if let Some(i) = now.instances.instance_at(x, y) {
                let tool = now.tool_ids[i];
                if now.poses[tool] == next.poses[tool] {
                    continue;
                }
                let p = [x as f64, y as f64];
                let q = now.poses[tool].carry(&next.poses[tool], p);
                flow.set(x, y, [(q[0] - p[0]) as f32, (q[1] - p[1]) as f32]);
            }
        }
    }
    Ok(flow)
}

fn side_angle(side: EntrySide) -> f64 {
    match side {
        EntrySide::Left => 0.0,
        EntrySide::Right => std::f64::consts::PI,
    }
}

fn anchor_x(config: &SimConfig, side: EntrySide) -> f64 {
    match side {
        EntrySide::Left => 0.0,
        EntrySide::Right => config.width as f64 - 1.0,
    }
}

const MAX_TILT: f64 = 0.6;

fn pose_in_range(config: &SimConfig, spec: &ToolSpec, pose: &ToolPose, paired: bool) -> bool {
    let h = config.height as f64;
    let tilt = angle_diff(pose.angle, side_angle(spec.entry_side));
    let max_ins = if paired {
        0.75 * config.width as f64
    } else {
        config.max_insertion()
    };
    pose.anchor[1] >= 0.12 * h
        && pose.anchor[1] <= 0.88 * h
        && tilt.abs() <= MAX_TILT
        && pose.insertion >= config.min_insertion()
        && pose.insertion <= max_ins
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    if d > std::f64::consts::PI {
        d - std::f64::consts::TAU
    } else {
        d
    }
}

fn is_pair(pairs: &[(usize, usize)], a: usize, b: usize) -> bool {
    pairs
        .iter()
        .any(|&(i, j)| (i, j) == (a, b) || (j, i) == (a, b))
}

/// True when tool `a` comes closer than the separation margin to tool `b`.
fn too_close(
    config: &SimConfig,
    spec_a: &ToolSpec,
    pose_a: &ToolPose,
    spec_b: &ToolSpec,
    pose_b: &ToolPose,
) -> bool {
    // cheap reject on bounding circles around the shaft segments
    let ra = reach(spec_a, pose_a);
    let rb = reach(spec_b, pose_b);
    let da = pose_a.direction();
    let db = pose_b.direction();
    let mid_a = [
        pose_a.anchor[0] + da[0] * ra / 2.0,
        pose_a.anchor[1] + da[1] * ra / 2.0,
    ];
    let mid_b = [
        pose_b.anchor[0] + db[0] * rb / 2.0,
        pose_b.anchor[1] + db[1] * rb / 2.0,
    ];
    let dist = ((mid_a[0] - mid_b[0]).powi(2) + (mid_a[1] - mid_b[1]).powi(2)).sqrt();
    if dist > (ra + rb) / 2.0 + 2.0 * SEPARATION_PX + spec_a.radius() + spec_b.radius() {
        return false;
    }
    rasterize(spec_b, pose_b, config.width, config.height, 0.0)
        .into_iter()
        .any(|(x, y)| {
            material_inside(
                spec_a,
                pose_a.to_material([x as f64, y as f64]),
                SEPARATION_PX,
            )
        })
}

fn layout_valid(
    config: &SimConfig,
    tools: &[ToolSpec],
    poses: &[ToolPose],
    pairs: &[(usize, usize)],
    only: Option<usize>,
) -> bool {
    for a in 0..tools.len() {
        if !pose_in_range(config, &tools[a], &poses[a], is_pair_member(pairs, a)) {
            return false;
        }
    }
    for a in 0..tools.len() {
        for b in (a + 1)..tools.len() {
            if let Some(k) = only {
                if a != k && b != k {
                    continue;
                }
            }
            if is_pair(pairs, a, b) {
                continue;
            }
            if too_close(config, &tools[a], &poses[a], &tools[b], &poses[b]) {
                return false;
            }
        }
    }
    true
}

fn is_pair_member(pairs: &[(usize, usize)], a: usize) -> bool {
    pairs.iter().any(|&(i, j)| i == a || j == a)
}

fn initial_layout(
    config: &SimConfig,
    rng: &mut Rng,
) -> (Vec<ToolSpec>, Vec<ToolPose>, Vec<(usize, usize)>) {
    let cap = config.max_instances_per_frame.min(config.n_classes);
    if cap == 0 {
        return (Vec::new(), Vec::new(), Vec::new());
    }
    let mut k = if cap >= 2 {
        rng.random_range(2..=cap)
    } else {
        cap
    };
    let want_overlap = rng.random_bool(config.overlap_probability);
    let (w, h) = (config.width as f64, config.height as f64);
    loop {
        let classes: Vec<ClassId> = sample_indices(rng, config.n_classes, k).into_vec();
        let overlap = want_overlap && k >= 2;
        for _attempt in 0..400 {
            let mut tools = Vec::with_capacity(k);
            let mut poses = Vec::with_capacity(k);
            for (i, &class) in classes.iter().enumerate() {
                let side = if overlap && i < 2 {
                    [EntrySide::Left, EntrySide::Right][i]
                } else if rng.random_bool(0.5) {
                    EntrySide::Left
                } else {
                    EntrySide::Right
                };
                let spec = ToolSpec::for_class(class, config.width, side);
                let pose = ToolPose {
                    anchor: [anchor_x(config, side), rng.random_range(0.15 * h..0.85 * h)],
                    angle: side_angle(side) + rng.random_range(-0.45..0.45),
                    insertion: rng.random_range(config.min_insertion()..config.max_insertion()),
                };
                tools.push(spec);
                poses.push(pose);
            }
            let mut pairs = Vec::new();
            if overlap {
                // facing tools on one horizontal line whose tips meet
                let y = poses[0].anchor[1];
                poses[1].anchor[1] = (y + rng.random_range(-3.0..3.0)).clamp(0.13 * h, 0.87 * h);
                poses[0].angle = rng.random_range(-0.05..0.05);
                poses[1].angle = std::f64::consts::PI + rng.random_range(-0.05..0.05);
                let overlap_px = rng.random_range(0.03..0.07) * w;
                let total = w - 1.0 + overlap_px - tools[0].tip_len_px - tools[1].tip_len_px;
                let split = rng.random_range(0.4..0.6);
                poses[0].insertion = total * split;
                poses[1].insertion = total * (1.0 - split);
                pairs.push((0, 1));
            }
            if layout_valid(config, &tools, &poses, &pairs, None) {
                return (tools, poses, pairs);
            }
        }
        k -= 1;
        if k == 0 {
            return (Vec::new(), Vec::new(), Vec::new());
        }
    }
}

/// Per-frame tool visibility. Frames are grouped in short blocks; a fixed
/// share of blocks (rounded `absent_class_fraction`) hides one tool.
fn absence_schedule(config: &SimConfig, n_tools: usize, rng: &mut Rng) -> Vec<Vec<bool>> {
    let mut visible = vec![vec![true; n_tools]; config.n_frames];
    if n_tools == 0 {
        return visible;
    }
    let block = (config.n_frames / 20).clamp(1, 10);
    let n_blocks = config.n_frames.div_ceil(block);
    let n_absent = (config.absent_class_fraction * n_blocks as f64).round() as usize;
    let mut chosen = sample_indices(rng, n_blocks, n_absent.min(n_blocks)).into_vec();
    chosen.sort_unstable();
    for b in chosen {
        let tool = rng.random_range(0..n_tools);
        for row in visible.iter_mut().skip(b * block).take(block) {
            row[tool] = false;
        }
    }
    visible
}

fn step_poses(
    config: &SimConfig,
    tools: &[ToolSpec],
    pairs: &[(usize, usize)],
    poses: &mut [ToolPose],
    rng: &mut Rng,
) {
    let m = config.motion_px_per_frame;
    for k in 0..tools.len() {
        let old = poses[k];
        let rho = reach(&tools[k], &old);
        for _ in 0..10 {
            let da = 0.5 * m / rho * rng.random_range(-1.0..1.0);
            let dy = 0.25 * m * rng.random_range(-1.0..1.0);
            let dl = 0.25 * m * rng.random_range(-1.0..1.0);
            poses[k] = ToolPose {
                anchor: [old.anchor[0], old.anchor[1] + dy],
                angle: old.angle + da,
                insertion: old.insertion + dl,
            };
            if layout_valid(config, tools, poses, pairs, Some(k)) {
                break;
            }
            poses[k] = old;
        }
    }
}

fn render_background(config: &SimConfig, seed: u64) -> Vec<[f64; 3]> {
    let (s1, s2, s3) = (
        derive_seed(seed, 1),
        derive_seed(seed, 2),
        derive_seed(seed, 3),
    );
    let mut out = Vec::with_capacity(config.width * config.height);
    for y in 0..config.height {
        for x in 0..config.width {
            let (fx, fy) = (x as f64, y as f64);
            let n1 = value_noise(fx / 48.0, fy / 48.0, s1);
            let n2 = value_noise(fx / 12.0, fy / 12.0, s2);
            let n3 = value_noise(fx / 4.0, fy / 4.0, s3);
            out.push([
                165.0 + 45.0 * n1 + 14.0 * n2 + 6.0 * n3,
                62.0 + 22.0 * n1 + 10.0 * n2 + 5.0 * n3,
                66.0 + 18.0 * n1 + 8.0 * n2 + 5.0 * n3,
            ]);
        }
    }
    out
}

fn tool_color(spec: &ToolSpec, pose: &ToolPose, x: usize, y: usize, brightness: f64) -> [f64; 3] {
    let [s, v] = pose.to_material([x as f64, y as f64]);
    let across = (v / spec.radius()).clamp(-1.5, 1.5);
    let shade = 1.0 - 0.25 * across * across;
    let tex = 0.14 * value_noise(s / 5.0, v / 5.0 + 100.0, spec.texture_seed)
        + 0.06 * value_noise(s / 2.3, v / 2.3, spec.texture_seed ^ 0xabcd);
    let f = (shade + tex) * brightness;
    spec.color_mean.map(|c| c as f64 * f + 12.0 * tex)
}

fn render_frame(
    config: &SimConfig,
    tools: &[ToolSpec],
    poses: Vec<ToolPose>,
    visible: Vec<bool>,
    background: &[[f64; 3]],
    brightness: f64,
) -> SimFrame {
    let (w, h) = (config.width, config.height);
    // owner[p] = tool index + 1; lower tool index is in front
    let mut owner = vec![0u16; w * h];
    for (k, spec) in tools.iter().enumerate() {
        if !visible[k] {
            continue;
        }
        for (x, y) in rasterize(spec, &poses[k], w, h, 0.0) {
            let o = &mut owner[y * w + x];
            if *o == 0 {
                *o = k as u16 + 1;
            }
        }
    }
    for (k, spec) in tools.iter().enumerate() {
        if visible[k] {
            keep_border_component(&mut owner, w, h, k as u16 + 1, spec.entry_side);
        }
    }

    let mut labels = vec![0u16; w * h];
    let mut classes = Vec::new();
    let mut tool_ids = Vec::new();
    let mut slot = vec![0u16; tools.len()];
    for k in 0..tools.len() {
        if owner.iter().any(|&o| o == k as u16 + 1) {
            classes.push(Some(tools[k].class_id));
            tool_ids.push(k);
            slot[k] = classes.len() as u16;
        }
    }
    let mut image = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let o = owner[y * w + x];
            let rgb = if o == 0 {
                background[y * w + x]
            } else {
                let k = o as usize - 1;
                labels[y * w + x] = slot[k];
                tool_color(&tools[k], &poses[k], x, y, brightness)
            };
            image.put_pixel(
                x as u32,
                y as u32,
                Rgb(rgb.map(|c| c.round().clamp(0.0, 255.0) as u8)),
            );
        }
    }
    let presence_fw = classes.iter().flatten().copied().collect();
    let instances =
        InstanceMaskSet::from_labels(w, h, labels, classes).expect("labels built in range");
    SimFrame {
        image,
        instances,
        tool_ids,
        poses,
        visible,
        presence_fw,
    }
}

/// Drops every pixel of `label` not 8-connected to its entry border column.
fn keep_border_component(owner: &mut [u16], w: usize, h: usize, label: u16, side: EntrySide) {
    let col = match side {
        EntrySide::Left => 0,
        EntrySide::Right => w - 1,
    };
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        let i = y * w + col;
        if owner[i] == label {
            seen[i] = true;
            queue.push_back((col, y));
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !seen[j] && owner[j] == label {
                    seen[j] = true;
                    queue.push_back((nx as usize, ny as usize));
                }
            }
        }
    }
    for (o, s) in owner.iter_mut().zip(seen) {
        if *o == label && !s {
            *o = 0;
        }
    }
}
