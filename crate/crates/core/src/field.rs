//! Square grids of complex pressure samples and the MNNF binary dump format.
//!
//! MNNF layout (little-endian): `b"MNNF"`, `u32` version (= 1), `u32` n,
//! then n² `(f64 re, f64 im)` pairs in row-major order.

use std::io::{Read, Write};
use std::ops::{Index, IndexMut};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MNNF_MAGIC: &[u8; 4] = b"MNNF";
pub const MNNF_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    n: usize,
    data: Vec<Complex64>,
    pub plane_tag: String,
}

impl ComplexField {
    pub fn zeros(n: usize) -> Self {
        ComplexField {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
            plane_tag: String::new(),
        }
    }

    pub fn filled(n: usize, value: Complex64) -> Self {
        ComplexField {
            n,
            data: vec![value; n * n],
            plane_tag: String::new(),
        }
    }

    /// Builds a field from row-major samples. Fails on a length mismatch or
    /// non-finite entries.
    pub fn from_vec(n: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Format(format!(
                "field of side {n} needs {} samples, got {}",
                n * n,
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Format("field contains non-finite samples".into()));
        }
        Ok(ComplexField {
            n,
            data,
            plane_tag: String::new(),
        })
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.plane_tag = tag.into();
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    /// Σ|u|² with no cell-area weighting.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Scales the field to unit energy.
    pub fn normalize(&self) -> Result<ComplexField> {
        let e = self.energy();
        if e <= 0.0 {
            return Err(Error::ZeroField);
        }
        let s = 1.0 / e.sqrt();
        Ok(ComplexField {
            n: self.n,
            data: self.data.iter().map(|z| z * s).collect(),
            plane_tag: self.plane_tag.clone(),
        })
    }

    pub fn scale(&self, alpha: Complex64) -> ComplexField {
        ComplexField {
            n: self.n,
            data: self.data.iter().map(|z| z * alpha).collect(),
            plane_tag: self.plane_tag.clone(),
        }
    }

    /// Hermitian inner product ⟨self, other⟩ = Σ conj(self)·other.
    pub fn inner(&self, other: &ComplexField) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn write_mnnf<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MNNF_MAGIC)?;
        w.write_all(&MNNF_VERSION.to_le_bytes())?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        for z in &self.data {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_mnnf<R: Read>(mut r: R) -> Result<ComplexField> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Format(format!("reading MNNF stream: {e}")))?;
        Self::from_mnnf_bytes(&bytes)
    }

    pub fn from_mnnf_bytes(bytes: &[u8]) -> Result<ComplexField> {
        if bytes.len() < 12 {
            return Err(Error::Format("MNNF header truncated".into()));
        }
        if &bytes[0..4] != MNNF_MAGIC {
            return Err(Error::Format("missing MNNF magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != MNNF_VERSION {
            return Err(Error::Format(format!("unsupported MNNF version {version}")));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() != n * n * 16 {
            return Err(Error::Format(format!(
                "MNNF body has {} bytes, expected {}",
                body.len(),
                n * n * 16
            )));
        }
        let data = body
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[0..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..16].try_into().unwrap()),
                )
            })
            .collect();
        ComplexField::from_vec(n, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_mnnf(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ComplexField> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_mnnf_bytes(&bytes)
    }
}

impl Index<(usize, usize)> for ComplexField {
    type Output = Complex64;

    fn index(&self, (row, col): (usize, usize)) -> &Complex64 {
        &self.data[row * self.n + col]
    }
}

impl IndexMut<(usize, usize)> for ComplexField {
    fn index_mut(&mut self, (row, col): (usize, usize)) -> &mut Complex64 {
        &mut self.data[row * self.n + col]
    }
}

pub fn energy(field: &ComplexField) -> f64 {
    field.energy()
}

pub fn normalize(field: &ComplexField) -> Result<ComplexField> {
    field.normalize()
}
