use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, GrayImage, ImageEncoder, RgbImage};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::saft::Tensor;
use crate::raster::{BinaryMask, ClassId, InstanceMaskSet, VectorField};

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?);
    }
    Ok(out)
}

fn encode_png(path: &Path, bytes: &[u8], w: u32, h: u32, color: ExtendedColorType) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let enc = PngEncoder::new_with_quality(
        BufWriter::new(f),
        CompressionType::Fast,
        FilterType::Adaptive,
    );
    enc.write_image(bytes, w, h, color)
        .map_err(|e| Error::Image {
            path: path.into(),
            source: e,
        })
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })
}

/// PNG bytes of an RGB image.
pub fn rgb_png_bytes(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Fast, FilterType::Adaptive)
        .write_image(
            img.as_raw(),
            img.width(),
            img.height(),
            ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Image {
            path: "<memory>".into(),
            source: e,
        })?;
    Ok(out)
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    encode_png(
        path,
        img.as_raw(),
        img.width(),
        img.height(),
        ExtendedColorType::Rgb8,
    )
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    match decode(path)? {
        image::DynamicImage::ImageRgb8(img) => Ok(img),
        _ => Err(Error::format(path, "expected an 8-bit RGB PNG")),
    }
}

/// 8-bit label PNG: 0 background, `i` for instance `i - 1`.
pub fn write_label_png(path: &Path, width: usize, height: usize, labels: &[u16]) -> Result<()> {
    let bytes = labels
        .iter()
        .map(|&l| {
            u8::try_from(l).map_err(|_| Error::format(path, format!("label {l} exceeds 255")))
        })
        .collect::<Result<Vec<u8>>>()?;
    encode_png(
        path,
        &bytes,
        width as u32,
        height as u32,
        ExtendedColorType::L8,
    )
}

pub fn read_label_png(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img: GrayImage = match decode(path)? {
        image::DynamicImage::ImageLuma8(img) => img,
        _ => return Err(Error::format(path, "expected an 8-bit greyscale PNG")),
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.into_raw().into_iter().map(u16::from).collect()))
}

pub fn write_instances(path: &Path, set: &InstanceMaskSet) -> Result<()> {
    let (w, h) = set.dims();
    write_label_png(path, w, h, set.labels())
}

/// Reads a label PNG; classes come from the side-car record.
pub fn read_instances(path: &Path, classes: Vec<Option<ClassId>>) -> Result<InstanceMaskSet> {
    let (w, h, labels) = read_label_png(path)?;
    if let Some(&l) = labels.iter().find(|&&l| l as usize > classes.len()) {
        return Err(Error::format(
            path,
            format!("label {l} but {} instances recorded", classes.len()),
        ));
    }
    InstanceMaskSet::from_labels(w, h, labels, classes)
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let labels: Vec<u16> = mask
        .as_slice()
        .iter()
        .map(|&b| if b { 255 } else { 0 })
        .collect();
    write_label_png(path, mask.width(), mask.height(), &labels)
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let (w, h, labels) = read_label_png(path)?;
    BinaryMask::from_vec(w, h, labels.into_iter().map(|l| l != 0).collect())
}

/// Sparse field: support mask as PNG plus an `[N, 2]` f32 SAFT of the
/// vectors at mask pixels in raster order. Off-mask vectors must be zero.
pub fn write_field(
    mask_path: &Path,
    values_path: &Path,
    field: &VectorField,
    mask: &BinaryMask,
) -> Result<()> {
    mask.check_dims(field.width(), field.height())?;
    let mut data = Vec::with_capacity(2 * mask.count());
    for (v, &m) in field.as_slice().iter().zip(mask.as_slice()) {
        if m {
            data.extend_from_slice(v);
        } else if *v != [0.0, 0.0] {
            return Err(Error::format(
                values_path,
                "non-zero vector outside the field mask",
            ));
        }
    }
    write_mask(mask_path, mask)?;
    Tensor::new(vec![data.len() / 2, 2], data)?.write(values_path)
}

pub fn read_field(mask_path: &Path, values_path: &Path) -> Result<(VectorField, BinaryMask)> {
    let mask = read_mask(mask_path)?;
    let t = Tensor::<f32>::read(values_path)?;
    if t.dims != [mask.count(), 2] {
        return Err(Error::format(
            values_path,
            format!("dims {:?} for {} mask pixels", t.dims, mask.count()),
        ));
    }
    let mut field = VectorField::zeros(mask.width(), mask.height());
    let mut it = t.data.chunks_exact(2);
    for (v, &m) in field.as_mut_slice().iter_mut().zip(mask.as_slice()) {
        if m {
            let c = it.next().expect("counted");
            *v = [c[0], c[1]];
        }
    }
    Ok((field, mask))
}
