use crate::error::{Error, Result};
use crate::raster::{BinaryMask, DisplacementField, InstanceMaskSet};
use crate::scene_sim::gt_displacement;

/// Clamp applied to predicted probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Centroid-pointing field built from connected-component masks.
pub fn fabricate_field(cc_masks: &InstanceMaskSet) -> DisplacementField {
    gt_displacement(cc_masks)
}

/// Zeroes the field wherever the mask is unset.
pub fn mask_field(field: &DisplacementField, mask: &BinaryMask) -> Result<DisplacementField> {
    mask.check_dims(field.width(), field.height())?;
    let data = field
        .as_slice()
        .iter()
        .zip(mask.as_slice())
        .map(|(&v, &m)| if m { v } else { [0.0, 0.0] })
        .collect();
    DisplacementField::from_vec(field.width(), field.height(), data)
}

fn check_same(a: &DisplacementField, b: &DisplacementField) -> Result<()> {
    b.check_dims(a.width(), a.height())
}

/// Mean absolute difference over all pixels and both channels.
pub fn loss_fs(d_gt: &DisplacementField, d_pred: &DisplacementField) -> Result<f64> {
    check_same(d_gt, d_pred)?;
    let sum: f64 = d_gt
        .as_slice()
        .iter()
        .zip(d_pred.as_slice())
        .map(|(a, b)| (a[0] as f64 - b[0] as f64).abs() + (a[1] as f64 - b[1] as f64).abs())
        .sum();
    Ok(sum / (2 * d_gt.as_slice().len()) as f64)
}

/// Pixel-wise binary cross-entropy with probabilities clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn bce(target: &BinaryMask, probs: &[f64]) -> Result<f64> {
    if probs.len() != target.as_slice().len() {
        return Err(Error::ShapeMismatch {
            expected: target.dims(),
            actual: (probs.len(), 1),
        });
    }
    let mut sum = 0.0;
    for (&y, &p) in target.as_slice().iter().zip(probs) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        sum -= if y { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(sum / probs.len().max(1) as f64)
}

/// Instantiation loss: L1 between fabricated and predicted fields outside the
/// overlap mask, plus binary cross-entropy of the predicted tool mask.
pub fn loss_instantiation(
    d_cc: &DisplacementField,
    d_pred: &DisplacementField,
    overlap: &BinaryMask,
    mask_target: &BinaryMask,
    mask_probs: &[f64],
) -> Result<f64> {
    check_same(d_cc, d_pred)?;
    overlap.check_dims(d_cc.width(), d_cc.height())?;
    mask_target.check_dims(d_cc.width(), d_cc.height())?;
    let mut sum = 0.0;
    let mut kept = 0usize;
    for ((a, b), &ov) in d_cc
        .as_slice()
        .iter()
        .zip(d_pred.as_slice())
        .zip(overlap.as_slice())
    {
        if !ov {
            sum += (a[0] as f64 - b[0] as f64).abs() + (a[1] as f64 - b[1] as f64).abs();
            kept += 1;
        }
    }
    let l1 = if kept == 0 {
        0.0
    } else {
        sum / (2 * kept) as f64
    };
    Ok(l1 + bce(mask_target, mask_probs)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(w: usize, h: usize, f: impl Fn(usize, usize) -> [f32; 2]) -> DisplacementField {
        let mut d = DisplacementField::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                d.set(x, y, f(x, y));
            }
        }
        d
    }

    #[test]
    fn loss_fs_zero_and_constant_offset() {
        let a = field(5, 4, |x, y| [x as f32 - 2.0, y as f32 * 0.5]);
        assert_eq!(loss_fs(&a, &a).unwrap(), 0.0);
        let b = field(5, 4, |x, y| [x as f32 - 1.0, y as f32 * 0.5 + 1.0]);
        assert!((loss_fs(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!(loss_fs(&a, &DisplacementField::zeros(4, 4)).is_err());
    }

    #[test]
    fn full_overlap_mask_discards_l1() {
        let a = field(4, 4, |x, _| [x as f32, 0.0]);
        let b = field(4, 4, |_, y| [0.0, -(y as f32) * 3.0]);
        let ov = BinaryMask::filled(4, 4);
        let target = BinaryMask::from_fn(4, 4, |x, _| x < 2);
        let probs: Vec<f64> = target
            .as_slice()
            .iter()
            .map(|&t| if t { 0.8 } else { 0.3 })
            .collect();
        let with = loss_instantiation(&a, &b, &ov, &target, &probs).unwrap();
        assert!((with - bce(&target, &probs).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_mask_gives_small_loss() {
        let a = field(6, 6, |x, y| [x as f32 * 0.1, y as f32]);
        let target = BinaryMask::from_fn(6, 6, |x, y| x + y < 6);
        let probs: Vec<f64> = target
            .as_slice()
            .iter()
            .map(|&t| if t { 0.999 } else { 0.001 })
            .collect();
        let loss = loss_instantiation(&a, &a, &BinaryMask::new(6, 6), &target, &probs).unwrap();
        assert!((loss - (-(0.999f64).ln())).abs() < 1e-12);
        assert!((loss - 1.0005e-3).abs() < 1e-6);
    }

    #[test]
    fn invalid_probability_is_rejected() {
        let a = DisplacementField::zeros(2, 1);
        let t = BinaryMask::new(2, 1);
        assert!(loss_instantiation(&a, &a, &t, &t, &[0.5, 1.5]).is_err());
        assert!(loss_instantiation(&a, &a, &t, &t, &[0.5, f64::NAN]).is_err());
        // exact 0/1 are clamped, not rejected
        assert!(loss_instantiation(&a, &a, &t, &t, &[0.0, 1.0])
            .unwrap()
            .is_finite());
    }

    #[test]
    fn mask_field_is_a_projection() {
        let f = field(5, 5, |x, y| [x as f32 + 1.0, y as f32 - 2.0]);
        let m = BinaryMask::from_fn(5, 5, |x, y| (x * y) % 3 == 1);
        assert_eq!(mask_field(&f, &BinaryMask::filled(5, 5)).unwrap(), f);
        assert_eq!(
            mask_field(&f, &BinaryMask::new(5, 5)).unwrap(),
            DisplacementField::zeros(5, 5)
        );
        let once = mask_field(&f, &m).unwrap();
        assert_eq!(mask_field(&once, &m).unwrap(), once);
    }
}
