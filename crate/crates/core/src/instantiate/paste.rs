use image::RgbImage;
use rand::Rng as _;

use crate::error::Result;
use crate::instantiate::cc_label;
use crate::raster::{BinaryMask, DisplacementField};
use crate::util::rng;

/// Redraws allowed before a paste gives up and passes the sample through.
pub const MAX_PASTE_ATTEMPTS: usize = 10;

/// Image, binary mask and (fabricated) displacement field of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PasteSample {
    pub image: RgbImage,
    pub mask: BinaryMask,
    pub field: DisplacementField,
}

/// A single tool instance taken from a different sample.
#[derive(Clone, Debug)]
pub struct Donor<'a> {
    pub image: &'a RgbImage,
    pub instance_mask: &'a BinaryMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PasteOutcome {
    pub sample: PasteSample,
    /// Translation applied to the donor, `None` when passed through.
    pub offset: Option<(i64, i64)>,
    /// Pixels written by the paste (after clipping).
    pub pasted: BinaryMask,
}

/// Pastes a donor instance at a seeded random placement.
///
/// Pasted pixels point to the centroid of the pasted (clipped) instance;
/// every other pixel keeps its original vector, so partially occluded
/// instances still point to their pre-paste centroid. A placement that would
/// hide an existing component entirely is redrawn.
pub fn augm_paste(
    sample: &PasteSample,
    donor: &Donor<'_>,
    placement_seed: u64,
) -> Result<PasteOutcome> {
    let (w, h) = sample.mask.dims();
    sample.field.check_dims(w, h)?;
    let pass_through = || PasteOutcome {
        sample: sample.clone(),
        offset: None,
        pasted: BinaryMask::new(w, h),
    };
    let Some((x0, y0, x1, y1)) = donor.instance_mask.bbox() else {
        return Ok(pass_through());
    };
    let existing = cc_label(&sample.mask);
    let (bw, bh) = ((x1 - x0 + 1) as i64, (y1 - y0 + 1) as i64);
    let mut rng = rng(placement_seed);

    for _ in 0..MAX_PASTE_ATTEMPTS {
        // new top-left corner keeps at least half the donor box inside
        let nx = rng.random_range(-(bw / 2)..=(w as i64 - bw / 2 - 1).max(-(bw / 2)));
        let ny = rng.random_range(-(bh / 2)..=(h as i64 - bh / 2 - 1).max(-(bh / 2)));
        let (dx, dy) = (nx - x0 as i64, ny - y0 as i64);

        let mut pasted = BinaryMask::new(w, h);
        let mut sources = Vec::new();
        for (sx, sy) in donor.instance_mask.pixels() {
            let (tx, ty) = (sx as i64 + dx, sy as i64 + dy);
            if tx >= 0 && ty >= 0 && (tx as usize) < w && (ty as usize) < h {
                pasted.set(tx as usize, ty as usize, true);
                sources.push(((sx, sy), (tx as usize, ty as usize)));
            }
        }
        if sources.is_empty() {
            continue;
        }
        let mut remaining = vec![0usize; existing.len()];
        for (x, y) in sample.mask.pixels() {
            if !pasted.get(x, y) {
                if let Some(i) = existing.instance_at(x, y) {
                    remaining[i] += 1;
                }
            }
        }
        if remaining.contains(&0) {
            continue;
        }

        let c = pasted.centroid().expect("non-empty paste");
        let mut out = sample.clone();
        for &((sx, sy), (tx, ty)) in &sources {
            let px = *donor.image.get_pixel(sx as u32, sy as u32);
            out.image.put_pixel(tx as u32, ty as u32, px);
            out.mask.set(tx, ty, true);
            out.field.set(
                tx,
                ty,
                [(c[0] - tx as f64) as f32, (c[1] - ty as f64) as f32],
            );
        }
        return Ok(PasteOutcome {
            sample: out,
            offset: Some((dx, dy)),
            pasted,
        });
    }
    Ok(pass_through())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instantiate::fabricate_field;

    fn blob(w: usize, h: usize, x0: usize, y0: usize, bw: usize, bh: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            x >= x0 && x < x0 + bw && y >= y0 && y < y0 + bh
        })
    }

    #[test]
    fn paste_on_empty_background() {
        let (w, h) = (64, 64);
        let sample = PasteSample {
            image: RgbImage::new(w as u32, h as u32),
            mask: BinaryMask::new(w, h),
            field: DisplacementField::zeros(w, h),
        };
        let donor_mask = blob(w, h, 5, 5, 12, 6);
        let donor_image = RgbImage::from_pixel(w as u32, h as u32, image::Rgb([200, 10, 10]));
        let out = augm_paste(
            &sample,
            &Donor {
                image: &donor_image,
                instance_mask: &donor_mask,
            },
            9,
        )
        .unwrap();
        assert!(out.offset.is_some());
        assert_eq!(out.sample.mask, out.pasted);
        let c = out.pasted.centroid().unwrap();
        for y in 0..h {
            for x in 0..w {
                let v = out.sample.field.get(x, y);
                if out.pasted.get(x, y) {
                    assert!((x as f64 + v[0] as f64 - c[0]).abs() < 1e-4);
                    assert!((y as f64 + v[1] as f64 - c[1]).abs() < 1e-4);
                    assert_eq!(
                        out.sample.image.get_pixel(x as u32, y as u32).0,
                        [200, 10, 10]
                    );
                } else {
                    assert_eq!(v, [0.0, 0.0]);
                }
            }
        }
    }

    #[test]
    fn untouched_pixels_keep_their_vectors() {
        let (w, h) = (64, 64);
        let mask = blob(w, h, 0, 28, 30, 8);
        let sample = PasteSample {
            image: RgbImage::new(w as u32, h as u32),
            mask: mask.clone(),
            field: fabricate_field(&cc_label(&mask)),
        };
        let donor_mask = blob(w, h, 40, 2, 10, 10);
        let donor_image = RgbImage::new(w as u32, h as u32);
        for seed in 0..20 {
            let out = augm_paste(
                &sample,
                &Donor {
                    image: &donor_image,
                    instance_mask: &donor_mask,
                },
                seed,
            )
            .unwrap();
            for (x, y) in mask.pixels() {
                if !out.pasted.get(x, y) {
                    assert_eq!(out.sample.field.get(x, y), sample.field.get(x, y));
                }
            }
        }
    }

    #[test]
    fn existing_components_are_never_erased() {
        let (w, h) = (24, 24);
        let mask = blob(w, h, 10, 10, 2, 2);
        let sample = PasteSample {
            image: RgbImage::new(w as u32, h as u32),
            mask: mask.clone(),
            field: fabricate_field(&cc_label(&mask)),
        };
        let donor_mask = blob(w, h, 0, 0, 20, 20);
        let donor_image = RgbImage::new(w as u32, h as u32);
        let donor = Donor {
            image: &donor_image,
            instance_mask: &donor_mask,
        };
        let mut passed = 0;
        for seed in 0..200 {
            let out = augm_paste(&sample, &donor, seed).unwrap();
            match out.offset {
                None => {
                    passed += 1;
                    assert_eq!(out.sample, sample);
                }
                Some(_) => assert!(mask.pixels().any(|(x, y)| !out.pasted.get(x, y))),
            }
        }
        // a 20x20 donor hides the 2x2 blob for most placements
        assert!(passed < 200);
    }

    #[test]
    fn empty_donor_passes_through() {
        let (w, h) = (8, 8);
        let sample = PasteSample {
            image: RgbImage::new(w as u32, h as u32),
            mask: BinaryMask::new(w, h),
            field: DisplacementField::zeros(w, h),
        };
        let empty = BinaryMask::new(w, h);
        let out = augm_paste(
            &sample,
            &Donor {
                image: &sample.image,
                instance_mask: &empty,
            },
            0,
        )
        .unwrap();
        assert_eq!(out.offset, None);
        assert_eq!(out.sample, sample);
    }
}
