//! Turning trained phases into meta-neuron geometry.
//!
//! A calibration table samples the monotone map from pipe height to the
//! phase the unit cell imparts. Phases are wrapped, optionally quantized,
//! and inverted through the table to heights, then written as a manifest.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{wrap_phase, MetaNetwork};

pub const DEFAULT_CELL_WIDTH: f64 = 0.02;
pub const DEFAULT_CELL_THICKNESS: f64 = 0.07;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub height_m: f64,
    pub phase_rad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    samples: Vec<CalibrationSample>,
    pub cell_width: f64,
    pub cell_thickness: f64,
}

impl CalibrationTable {
    pub fn new(samples: Vec<CalibrationSample>) -> Result<Self> {
        let table = CalibrationTable {
            samples,
            cell_width: DEFAULT_CELL_WIDTH,
            cell_thickness: DEFAULT_CELL_THICKNESS,
        };
        table.validate()?;
        Ok(table)
    }

    /// Synthetic table `φ(h) = 2π·h/h_max` on `count` evenly spaced heights
    /// from 0 to `h_max`. Not a measured resonator curve.
    pub fn synthetic_linear(h_max: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::TableInvalid("need at least 2 samples".into()));
        }
        let samples = (0..count)
            .map(|i| {
                let f = i as f64 / (count - 1) as f64;
                CalibrationSample {
                    height_m: h_max * f,
                    phase_rad: TAU * f,
                }
            })
            .collect();
        Self::new(samples)
    }

    pub fn samples(&self) -> &[CalibrationSample] {
        &self.samples
    }

    fn increasing(&self) -> bool {
        self.samples[1].phase_rad > self.samples[0].phase_rad
    }

    /// Largest phase step between neighbouring samples.
    pub fn max_phase_gap(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].phase_rad - w[0].phase_rad).abs())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.samples;
        if s.len() < 2 {
            return Err(Error::TableInvalid("need at least 2 samples".into()));
        }
        if s.iter().any(|x| !x.height_m.is_finite() || !x.phase_rad.is_finite()) {
            return Err(Error::TableInvalid("non-finite entry".into()));
        }
        if s.windows(2).any(|w| w[1].height_m <= w[0].height_m) {
            return Err(Error::TableInvalid("heights must be strictly increasing".into()));
        }
        let up = s[1].phase_rad > s[0].phase_rad;
        if s
            .windows(2)
            .any(|w| if up { w[1].phase_rad <= w[0].phase_rad } else { w[1].phase_rad >= w[0].phase_rad })
        {
            return Err(Error::TableInvalid("phases must be strictly monotone".into()));
        }
        let span = (s[s.len() - 1].phase_rad - s[0].phase_rad).abs();
        if span + self.max_phase_gap() < TAU {
            return Err(Error::TableInvalid(format!(
                "phase span {span:.4} rad does not cover 2π within one sample gap"
            )));
        }
        Ok(())
    }

    /// Phase realised by height `h`, by linear interpolation.
    pub fn phase_at(&self, h: f64) -> f64 {
        let s = &self.samples;
        if h <= s[0].height_m {
            return s[0].phase_rad;
        }
        for w in s.windows(2) {
            if h <= w[1].height_m {
                let f = (h - w[0].height_m) / (w[1].height_m - w[0].height_m);
                return w[0].phase_rad + f * (w[1].phase_rad - w[0].phase_rad);
            }
        }
        s[s.len() - 1].phase_rad
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["height_m", "phase_rad"] {
            return Err(Error::TableInvalid(format!(
                "expected header height_m,phase_rad, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let samples = reader.deserialize().collect::<std::result::Result<Vec<CalibrationSample>, _>>()?;
        Self::new(samples)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("height_m,phase_rad\n");
        for x in &self.samples {
            s.push_str(&format!("{},{}\n", x.height_m, x.phase_rad));
        }
        s
    }
}

/// Height realising phase `phi` (wrapped to `[0, 2π)`).
///
/// The wrapped phase is shifted by whole turns into the table's phase range
/// and inverted by piecewise-linear interpolation. Phases falling in the
/// sub-gap hole of a table spanning slightly less than 2π snap to the
/// nearer end.
pub fn phase_to_height(phi: f64, table: &CalibrationTable) -> Result<f64> {
    table.validate()?;
    let s = table.samples();
    let (lo, hi) = if table.increasing() {
        (s[0].phase_rad, s[s.len() - 1].phase_rad)
    } else {
        (s[s.len() - 1].phase_rad, s[0].phase_rad)
    };
    let mut target = lo + wrap_phase(wrap_phase(phi) - lo);
    if target > hi {
        // distance to either end, going around the circle
        if target - hi > lo + TAU - target {
            target = lo;
        } else {
            target = hi;
        }
    }
    for w in s.windows(2) {
        let (a, b) = (w[0].phase_rad, w[1].phase_rad);
        let (pmin, pmax) = if a < b { (a, b) } else { (b, a) };
        if target >= pmin && target <= pmax {
            let f = (target - a) / (b - a);
            return Ok(w[0].height_m + f * (w[1].height_m - w[0].height_m));
        }
    }
    Err(Error::TableInvalid(format!("phase {target} outside table")))
}

/// Wraps every phase and rounds it to the nearest multiple of `2π/levels`;
/// exact ties go to the lower level.
pub fn quantize_phases(net: &MetaNetwork, levels: usize) -> Result<MetaNetwork> {
    if levels < 2 {
        return Err(Error::BadLevels(levels));
    }
    let step = TAU / levels as f64;
    let mut out = net.clone();
    for layer in &mut out.layers {
        for p in &mut layer.phases {
            let q = wrap_phase(*p) / step;
            let k = (q - 0.5).ceil() as usize % levels;
            *p = k as f64 * step;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
    pub phase_rad: f64,
    pub height_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryManifest {
    pub records: Vec<GeometryRecord>,
}

impl GeometryManifest {
    pub fn build(net: &MetaNetwork, table: &CalibrationTable) -> Result<Self> {
        table.validate()?;
        let n = net.n();
        let mut records = Vec::with_capacity(net.num_parameters());
        for (l, layer) in net.layers.iter().enumerate() {
            for (idx, &p) in layer.phases.iter().enumerate() {
                let phase = wrap_phase(p);
                records.push(GeometryRecord {
                    layer: l,
                    row: idx / n,
                    col: idx % n,
                    phase_rad: phase,
                    height_m: phase_to_height(phase, table)?,
                });
            }
        }
        Ok(GeometryManifest { records })
    }

    /// `layer,row,col,phase_rad,height_m`; floats use shortest round-trip
    /// formatting so re-import is exact.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let records = reader.deserialize().collect::<std::result::Result<Vec<GeometryRecord>, _>>()?;
        Ok(GeometryManifest { records })
    }

    /// Rebuilds a network from `template` with the manifest's wrapped phases.
    pub fn to_network(&self, template: &MetaNetwork) -> Result<MetaNetwork> {
        let n = template.n();
        let mut net = template.clone();
        if self.records.len() != net.num_parameters() {
            return Err(Error::Format(format!(
                "manifest has {} records, network has {} phases",
                self.records.len(),
                net.num_parameters()
            )));
        }
        for r in &self.records {
            if r.layer >= net.layers.len() || r.row >= n || r.col >= n {
                return Err(Error::Format(format!("record out of range: {r:?}")));
            }
            net.layers[r.layer].phases[r.row * n + r.col] = r.phase_rad;
        }
        Ok(net)
    }
}

pub fn export_manifest(net: &MetaNetwork, table: &CalibrationTable, path: &Path) -> Result<GeometryManifest> {
    let manifest = GeometryManifest::build(net, table)?;
    manifest.write(path)?;
    Ok(manifest)
}
