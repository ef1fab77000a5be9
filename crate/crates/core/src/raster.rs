//! Pixel-grid containers shared by every stage: binary masks, instance label
//! maps and 2-vector fields. All grids are row-major with `x` the column and
//! `y` the row; a pixel's position is its integer `(x, y)` coordinate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClassId = usize;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn filled(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: (width, height),
                actual: (data.len(), 1),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Iterates the `(x, y)` positions of set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn union_count(&self, other: &BinaryMask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a || b)
            .count()
    }

    pub fn union_with(&mut self, other: &BinaryMask) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    /// Arithmetic-mean position of the set pixels, `None` for an empty mask.
    pub fn centroid(&self) -> Option<[f64; 2]> {
        let (mut sx, mut sy, mut n) = (0f64, 0f64, 0usize);
        for (x, y) in self.pixels() {
            sx += x as f64;
            sy += y as f64;
            n += 1;
        }
        (n > 0).then(|| [sx / n as f64, sy / n as f64])
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)`.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for (x, y) in self.pixels() {
            bb = Some(match bb {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        bb
    }

    pub fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if self.dims() != (width, height) {
            return Err(Error::ShapeMismatch {
                expected: (width, height),
                actual: self.dims(),
            });
        }
        Ok(())
    }
}

/// Disjoint instance masks stored as a label map: 0 is background and
/// `i + 1` marks pixels of instance `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMaskSet {
    width: usize,
    height: usize,
    labels: Vec<u16>,
    classes: Vec<Option<ClassId>>,
}

impl InstanceMaskSet {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
            classes: Vec::new(),
        }
    }

    /// Builds a set from a raw label map. Labels must lie in `0..=classes.len()`.
    pub fn from_labels(
        width: usize,
        height: usize,
        labels: Vec<u16>,
        classes: Vec<Option<ClassId>>,
    ) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: (width, height),
                actual: (labels.len(), 1),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize > classes.len()) {
            return Err(Error::OutOfRange {
                index: bad as usize,
                len: classes.len(),
            });
        }
        Ok(Self {
            width,
            height,
            labels,
            classes,
        })
    }

    /// Builds a set from separate masks; errors if any two overlap.
    pub fn from_masks(
        width: usize,
        height: usize,
        masks: &[BinaryMask],
        classes: Vec<Option<ClassId>>,
    ) -> Result<Self> {
        if masks.len() != classes.len() {
            return Err(Error::config("one class entry per mask required"));
        }
        let mut set = Self::empty(width, height);
        for (mask, class) in masks.iter().zip(classes) {
            mask.check_dims(width, height)?;
            set.push(mask, class)?;
        }
        Ok(set)
    }

    /// Appends a mask as a new instance; errors if it overlaps an existing one.
    pub fn push(&mut self, mask: &BinaryMask, class: Option<ClassId>) -> Result<usize> {
        mask.check_dims(self.width, self.height)?;
        if mask
            .as_slice()
            .iter()
            .zip(&self.labels)
            .any(|(&m, &l)| m && l != 0)
        {
            return Err(Error::config("instance masks must be pairwise disjoint"));
        }
        self.classes.push(class);
        let label = self.classes.len() as u16;
        for (l, &m) in self.labels.iter_mut().zip(mask.as_slice()) {
            if m {
                *l = label;
            }
        }
        Ok(self.classes.len() - 1)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn classes(&self) -> &[Option<ClassId>] {
        &self.classes
    }

    pub fn class(&self, instance: usize) -> Option<ClassId> {
        self.classes.get(instance).copied().flatten()
    }

    pub fn set_class(&mut self, instance: usize, class: Option<ClassId>) {
        self.classes[instance] = class;
    }

    /// Instance index at a pixel, `None` on background.
    #[inline]
    pub fn instance_at(&self, x: usize, y: usize) -> Option<usize> {
        match self.labels[y * self.width + x] {
            0 => None,
            l => Some(l as usize - 1),
        }
    }

    pub fn mask(&self, instance: usize) -> BinaryMask {
        let target = instance as u16 + 1;
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&l| l == target).collect(),
        }
    }

    pub fn masks(&self) -> Vec<BinaryMask> {
        (0..self.len()).map(|i| self.mask(i)).collect()
    }

    /// Union of all instances.
    pub fn binary(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&l| l != 0).collect(),
        }
    }

    pub fn pixel_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.len()];
        for &l in &self.labels {
            if l != 0 {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }

    /// Arithmetic-mean centroid of every instance (`None` for empty ones).
    pub fn centroids(&self) -> Vec<Option<[f64; 2]>> {
        let mut acc = vec![(0f64, 0f64, 0usize); self.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            if l != 0 {
                let a = &mut acc[l as usize - 1];
                a.0 += (i % self.width) as f64;
                a.1 += (i / self.width) as f64;
                a.2 += 1;
            }
        }
        acc.into_iter()
            .map(|(sx, sy, n)| (n > 0).then(|| [sx / n as f64, sy / n as f64]))
            .collect()
    }

    /// Per-pixel semantic map: 0 background, `class + 1` for classified
    /// instances; unclassified instances count as background.
    pub fn semantic_map(&self) -> Vec<u16> {
        self.labels
            .iter()
            .map(|&l| match l {
                0 => 0,
                l => match self.classes[l as usize - 1] {
                    Some(c) => c as u16 + 1,
                    None => 0,
                },
            })
            .collect()
    }
}

/// Per-pixel 2-vector field in pixel units, order `[dx, dy]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    width: usize,
    height: usize,
    data: Vec<[f32; 2]>,
}

/// Per-pixel vector from a tool pixel to its instance centroid.
pub type DisplacementField = VectorField;
/// Per-pixel motion between two consecutive frames.
pub type FlowField = VectorField;

impl VectorField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 2]; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<[f32; 2]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: (width, height),
                actual: (data.len(), 1),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 2] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f32; 2]) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[[f32; 2]] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [[f32; 2]] {
        &mut self.data
    }

    pub fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if self.dims() != (width, height) {
            return Err(Error::ShapeMismatch {
                expected: (width, height),
                actual: self.dims(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|v| v[0].is_finite() && v[1].is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_map_round_trips_masks() {
        let a = BinaryMask::from_fn(4, 3, |x, _| x == 0);
        let b = BinaryMask::from_fn(4, 3, |x, y| x == 3 && y > 0);
        let set = InstanceMaskSet::from_masks(4, 3, &[a.clone(), b.clone()], vec![Some(2), None])
            .unwrap();
        assert_eq!(set.mask(0), a);
        assert_eq!(set.mask(1), b);
        assert_eq!(set.pixel_counts(), vec![3, 2]);
        assert_eq!(set.semantic_map()[0], 3);
        assert_eq!(set.semantic_map()[7], 0);
    }

    #[test]
    fn overlapping_masks_are_rejected() {
        let a = BinaryMask::from_fn(3, 3, |x, _| x < 2);
        let b = BinaryMask::from_fn(3, 3, |x, _| x > 0);
        assert!(InstanceMaskSet::from_masks(3, 3, &[a, b], vec![None, None]).is_err());
    }

    #[test]
    fn centroid_is_pixel_mean() {
        let m = BinaryMask::from_fn(5, 5, |x, y| y == 4 && x <= 2);
        assert_eq!(m.centroid(), Some([1.0, 4.0]));
        assert_eq!(m.bbox(), Some((0, 4, 2, 4)));
        assert_eq!(BinaryMask::new(2, 2).centroid(), None);
    }
}
