//! MNIST ingestion and object encoding.
//!
//! IDX files are big-endian: a magic number (`0x00000803` for images,
//! `0x00000801` for labels), the item count, for images the row and column
//! counts, then the raw bytes. Gzipped files are recognised by their magic
//! and decompressed transparently.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ComplexField;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;

pub const TRAIN_SIZE: usize = 55_000;
pub const VALIDATION_SIZE: usize = 5_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub pixels: Vec<u8>,
    pub label: u8,
}

/// Binary object mask, `true` where the digit (steel) is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    n: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(n: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != n * n {
            return Err(Error::Format(format!("mask of side {n} needs {} bits, got {}", n * n, bits.len())));
        }
        Ok(BinaryMask { n, bits })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// 0/255 grayscale rendering, the inverse of [`binarize`] on masks.
    pub fn to_image(&self, label: u8) -> RawImage {
        RawImage {
            pixels: self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub mask: BinaryMask,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EncodeMode {
    /// Steel digit blocks the plane wave: `u = 1 − mask`.
    #[default]
    Blocking,
    /// Digit-shaped opening in an otherwise opaque screen: `u = mask`.
    Aperture,
}

/// Rounds every grayscale value up on the [0, 1] scale: any nonzero pixel
/// becomes material.
pub fn binarize(img: &RawImage) -> BinaryMask {
    BinaryMask {
        n: SIDE,
        bits: img.pixels.iter().map(|&p| p > 0).collect(),
    }
}

/// Thin-screen object field before normalization.
pub fn encode_object(mask: &BinaryMask, mode: EncodeMode) -> Result<ComplexField> {
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let data = mask
        .bits
        .iter()
        .map(|&b| match (mode, b) {
            (EncodeMode::Blocking, true) | (EncodeMode::Aperture, false) => zero,
            _ => one,
        })
        .collect();
    let field = ComplexField::from_vec(mask.n, data)?.with_tag("object");
    if field.energy() == 0.0 {
        return Err(Error::ZeroField);
    }
    Ok(field)
}

/// Encoded and normalized to unit energy; what the network consumes.
pub fn object_field(mask: &BinaryMask, mode: EncodeMode) -> Result<ComplexField> {
    encode_object(mask, mode)?.normalize()
}

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::TruncatedFile {
            path: path.to_path_buf(),
            detail: format!("header ends before byte {}", at + 4),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Parses an IDX image file and its label file.
pub fn parse_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<RawImage>> {
    let images = read_maybe_gzip(images_path)?;
    let labels = read_maybe_gzip(labels_path)?;
    parse_idx_bytes(&images, images_path, &labels, labels_path)
}

pub fn parse_idx_bytes(images: &[u8], images_path: &Path, labels: &[u8], labels_path: &Path) -> Result<Vec<RawImage>> {
    check_magic(images, IMAGE_MAGIC, images_path)?;
    check_magic(labels, LABEL_MAGIC, labels_path)?;
    let count = be_u32(images, 4, images_path)? as usize;
    let rows = be_u32(images, 8, images_path)? as usize;
    let cols = be_u32(images, 12, images_path)? as usize;
    if rows != SIDE || cols != SIDE {
        return Err(Error::Format(format!("expected {SIDE}x{SIDE} images, header says {rows}x{cols}")));
    }
    let label_count = be_u32(labels, 4, labels_path)? as usize;
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let pixel_bytes = &images[16..];
    if pixel_bytes.len() < count * PIXELS {
        return Err(Error::TruncatedFile {
            path: images_path.to_path_buf(),
            detail: format!("{} pixel bytes for {count} images", pixel_bytes.len()),
        });
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < count {
        return Err(Error::TruncatedFile {
            path: labels_path.to_path_buf(),
            detail: format!("{} label bytes for {count} labels", label_bytes.len()),
        });
    }
    pixel_bytes
        .chunks_exact(PIXELS)
        .take(count)
        .zip(label_bytes)
        .map(|(px, &label)| {
            if label > 9 {
                return Err(Error::Format(format!("label {label} out of range")));
            }
            Ok(RawImage {
                pixels: px.to_vec(),
                label,
            })
        })
        .collect()
}

/// Serializes images back into uncompressed IDX (images, labels) bytes.
pub fn write_idx(images: &[RawImage]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.len() * PIXELS);
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(SIDE as u32).to_be_bytes());
    img.extend_from_slice(&(SIDE as u32).to_be_bytes());
    let mut lab = Vec::with_capacity(8 + images.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(images.len() as u32).to_be_bytes());
    for im in images {
        img.extend_from_slice(&im.pixels);
        lab.push(im.label);
    }
    (img, lab)
}

fn locate(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found (raw or .gz)"),
    ))
}

pub fn load_train_images(dir: &Path) -> Result<Vec<RawImage>> {
    parse_idx(&locate(dir, "train-images-idx3-ubyte")?, &locate(dir, "train-labels-idx1-ubyte")?)
}

pub fn load_test_images(dir: &Path) -> Result<Vec<RawImage>> {
    parse_idx(&locate(dir, "t10k-images-idx3-ubyte")?, &locate(dir, "t10k-labels-idx1-ubyte")?)
}

pub fn to_samples(images: &[RawImage]) -> Vec<Sample> {
    images
        .iter()
        .map(|im| Sample {
            mask: binarize(im),
            label: im.label,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl DatasetSplit {
    /// First 55000 training-file images train, the remaining 5000 validate.
    pub fn from_images(train_file: &[RawImage], test_file: &[RawImage]) -> Result<Self> {
        if train_file.len() < TRAIN_SIZE + VALIDATION_SIZE {
            return Err(Error::Format(format!(
                "training file holds {} images, need {}",
                train_file.len(),
                TRAIN_SIZE + VALIDATION_SIZE
            )));
        }
        let samples = to_samples(train_file);
        Ok(DatasetSplit {
            train: samples[..TRAIN_SIZE].to_vec(),
            validation: samples[TRAIN_SIZE..TRAIN_SIZE + VALIDATION_SIZE].to_vec(),
            test: to_samples(test_file),
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_images(&load_train_images(dir)?, &load_test_images(dir)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(pixels: Vec<u8>, label: u8) -> RawImage {
        RawImage { pixels, label }
    }

    #[test]
    fn binarize_rounds_up() {
        let zero = image(vec![0; PIXELS], 3);
        assert_eq!(binarize(&zero).count_ones(), 0);
        let mut px = vec![0; PIXELS];
        px[10] = 1;
        px[20] = 255;
        px[30] = 128;
        let m = binarize(&image(px, 1));
        assert!(m.bits()[10] && m.bits()[20] && m.bits()[30]);
        assert_eq!(m.count_ones(), 3);
        let again = binarize(&m.to_image(1));
        assert_eq!(again, m);
    }

    #[test]
    fn encoding_modes_are_complementary() {
        let mut bits = vec![false; PIXELS];
        for i in (0..PIXELS).step_by(7) {
            bits[i] = true;
        }
        let mask = BinaryMask::new(SIDE, bits.clone()).unwrap();
        let blocking = encode_object(&mask, EncodeMode::Blocking).unwrap();
        let aperture = encode_object(&mask, EncodeMode::Aperture).unwrap();
        for ((b, a), &bit) in blocking.data().iter().zip(aperture.data()).zip(&bits) {
            assert_eq!(b + a, Complex64::new(1.0, 0.0));
            assert_eq!(b.re == 0.0, bit);
        }
        let empty = BinaryMask::new(SIDE, vec![false; PIXELS]).unwrap();
        let plane = encode_object(&empty, EncodeMode::Blocking).unwrap();
        assert!(plane.data().iter().all(|z| *z == Complex64::new(1.0, 0.0)));
        let full = BinaryMask::new(SIDE, vec![true; PIXELS]).unwrap();
        assert!(matches!(encode_object(&full, EncodeMode::Blocking), Err(Error::ZeroField)));
        assert!(matches!(encode_object(&empty, EncodeMode::Aperture), Err(Error::ZeroField)));
        let unit = object_field(&mask, EncodeMode::Blocking).unwrap();
        assert!((unit.energy() - 1.0).abs() < 1e-12);
    }

    fn tiny_set() -> Vec<RawImage> {
        (0..3u8)
            .map(|i| image((0..PIXELS).map(|p| (p as u8).wrapping_mul(i + 1)).collect(), i + 4))
            .collect()
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let images = tiny_set();
        let (img, lab) = write_idx(&images);
        let ip = Path::new("images");
        let lp = Path::new("labels");
        let parsed = parse_idx_bytes(&img, ip, &lab, lp).unwrap();
        assert_eq!(parsed, images);
        assert_eq!(write_idx(&parsed), (img.clone(), lab.clone()));

        assert!(matches!(parse_idx_bytes(&lab, ip, &lab, lp), Err(Error::BadMagic { .. })));
        assert!(matches!(
            parse_idx_bytes(&img[..img.len() - 1], ip, &lab, lp),
            Err(Error::TruncatedFile { .. })
        ));
        assert!(matches!(parse_idx_bytes(&img[..6], ip, &lab, lp), Err(Error::TruncatedFile { .. })));
        let (_, lab2) = write_idx(&images[..2]);
        assert!(matches!(parse_idx_bytes(&img, ip, &lab2, lp), Err(Error::CountMismatch { .. })));
    }

    #[test]
    fn reads_gzipped_files() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_idx(&tiny_set());
        let gz = |bytes: &[u8]| {
            let mut e = GzEncoder::new(Vec::new(), flate2::Compression::default());
            e.write_all(bytes).unwrap();
            e.finish().unwrap()
        };
        std::fs::write(dir.path().join("t10k-images-idx3-ubyte.gz"), gz(&img)).unwrap();
        std::fs::write(dir.path().join("t10k-labels-idx1-ubyte"), &lab).unwrap();
        let parsed = load_test_images(dir.path()).unwrap();
        assert_eq!(parsed, tiny_set());
        assert!(load_train_images(dir.path()).is_err());
    }
}
