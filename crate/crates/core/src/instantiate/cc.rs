use crate::raster::{BinaryMask, InstanceMaskSet};

/// Splits a binary mask into its maximal 8-connected components.
///
/// Two-pass union-find labelling; components are numbered in raster order of
/// their first pixel, i.e. by (min row, min col).
pub fn cc_label(mask: &BinaryMask) -> InstanceMaskSet {
    let (w, h) = mask.dims();
    let mut provisional = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];

    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            // already-visited 8-neighbours: W, NW, N, NE
            let mut neighbours = [0u32; 4];
            if x > 0 {
                neighbours[0] = provisional[y * w + x - 1];
            }
            if y > 0 {
                let row = (y - 1) * w;
                if x > 0 {
                    neighbours[1] = provisional[row + x - 1];
                }
                neighbours[2] = provisional[row + x];
                if x + 1 < w {
                    neighbours[3] = provisional[row + x + 1];
                }
            }
            let mut label = 0u32;
            for &n in neighbours.iter().filter(|&&n| n != 0) {
                let root = find(&mut parent, n);
                if label == 0 {
                    label = root;
                } else if root != label {
                    let (lo, hi) = (label.min(root), label.max(root));
                    parent[hi as usize] = lo;
                    label = lo;
                }
            }
            if label == 0 {
                label = parent.len() as u32;
                parent.push(label);
            }
            provisional[y * w + x] = label;
        }
    }

    // roots are the smallest provisional label of their set, which is the
    // first one seen in raster order; compact them in increasing order
    let mut compact = vec![0u16; parent.len()];
    let mut next = 0u16;
    for l in 1..parent.len() as u32 {
        let root = find(&mut parent, l);
        if root == l {
            next += 1;
            compact[l as usize] = next;
        }
    }
    let labels = provisional
        .iter()
        .map(|&l| {
            if l == 0 {
                0
            } else {
                let root = find(&mut parent, l);
                compact[root as usize]
            }
        })
        .collect();
    InstanceMaskSet::from_labels(w, h, labels, vec![None; next as usize])
        .expect("compact labels are in range")
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let up = parent[parent[x as usize] as usize];
        parent[x as usize] = up;
        x = up;
    }
    x
}

/// Pixels of every component spanning the full frame width, i.e. touching
/// both column 0 and column `width - 1`.
pub fn detect_overlap(cc_masks: &InstanceMaskSet, width: usize) -> BinaryMask {
    let (w, h) = cc_masks.dims();
    let mut touches_left = vec![false; cc_masks.len()];
    let mut touches_right = vec![false; cc_masks.len()];
    let last = width.min(w).saturating_sub(1);
    for y in 0..h {
        if let Some(i) = cc_masks.instance_at(0, y) {
            touches_left[i] = true;
        }
        if let Some(i) = cc_masks.instance_at(last, y) {
            touches_right[i] = true;
        }
    }
    let labels = cc_masks.labels();
    let data = labels
        .iter()
        .map(|&l| l != 0 && touches_left[l as usize - 1] && touches_right[l as usize - 1])
        .collect();
    BinaryMask::from_vec(w, h, data).expect("same dims")
}
