//! Free-space scalar diffraction between parallel planes.
//!
//! Two discretizations of the same plane-to-plane operator are provided:
//!
//! * [`Method::Direct`] sums a Rayleigh–Sommerfeld secondary-source weight
//!   over every source/target cell pair. It costs O(n⁴) per plane and serves
//!   as the reference.
//! * [`Method::Spectral`] zero-pads the field, multiplies its 2D spectrum by
//!   the angular-spectrum transfer function and crops back.
//!
//! Each has an exact discrete adjoint, which the training code uses to pull
//! loss sensitivities back towards the object plane. The time convention is
//! `exp(-jωt)`, so outgoing waves carry phase `+kr`.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::config::PhysicsConfig;
use crate::error::{Error, Result};
use crate::field::ComplexField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Direct,
    Spectral,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Spectral => "spectral",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Treatment of spatial frequencies beyond the propagation cutoff `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvanescentPolicy {
    Zero,
    Decay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationSettings {
    pub method: Method,
    pub pad_factor: usize,
    pub evanescent: EvanescentPolicy,
}

impl Default for PropagationSettings {
    fn default() -> Self {
        PropagationSettings {
            method: Method::Spectral,
            pad_factor: 4,
            evanescent: EvanescentPolicy::Zero,
        }
    }
}

impl PropagationSettings {
    pub fn direct() -> Self {
        PropagationSettings {
            method: Method::Direct,
            ..Default::default()
        }
    }
}

fn check_distance(z: f64) -> Result<()> {
    if z > 0.0 && z.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveDistance(z))
    }
}

/// Secondary-source weight from a cell at transverse offset `(dx, dy)` across
/// an axial gap `z`:
///
/// `pitch² · (z/r²) · (1/(2πr) + 1/(jλ)) · exp(j·2πr/λ)`, `r = √(dx²+dy²+z²)`.
pub fn rs_weight(dx: f64, dy: f64, z: f64, config: &PhysicsConfig) -> Result<Complex64> {
    check_distance(z)?;
    let lambda = config.wavelength();
    let r = (dx * dx + dy * dy + z * z).sqrt();
    let area = config.pitch * config.pitch;
    let amplitude = Complex64::new(1.0 / (TAU * r), -1.0 / lambda);
    let phase = Complex64::from_polar(1.0, TAU * r / lambda);
    Ok(amplitude * phase * (area * z / (r * r)))
}

/// Weights for every cell offset `(Δi, Δj) ∈ [-(n-1), n-1]²` at a fixed gap.
#[derive(Debug, Clone)]
pub struct Kernel {
    n: usize,
    weights: Vec<Complex64>,
}

impl Kernel {
    pub fn new(n: usize, z: f64, config: &PhysicsConfig) -> Result<Kernel> {
        check_distance(z)?;
        let side = 2 * n - 1;
        let mut weights = Vec::with_capacity(side * side);
        for di in -(n as isize - 1)..=(n as isize - 1) {
            for dj in -(n as isize - 1)..=(n as isize - 1) {
                let dx = di as f64 * config.pitch;
                let dy = dj as f64 * config.pitch;
                weights.push(rs_weight(dx, dy, z, config)?);
            }
        }
        Ok(Kernel { n, weights })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn side(&self) -> usize {
        2 * self.n - 1
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    pub fn weight(&self, di: isize, dj: isize) -> Complex64 {
        let off = self.n as isize - 1;
        self.weights[((di + off) as usize) * self.side() + (dj + off) as usize]
    }
}

struct SpectralPlan {
    m: usize,
    transfer: Vec<Complex64>,
    forward_fft: Arc<dyn Fft<f64>>,
    inverse_fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralPlan").field("m", &self.m).finish_non_exhaustive()
    }
}

/// Spatial angular frequency of FFT bin `idx` on an `m`-point grid.
fn fft_frequency(idx: usize, m: usize, pitch: f64) -> f64 {
    let signed = if idx <= (m - 1) / 2 {
        idx as f64
    } else {
        idx as f64 - m as f64
    };
    TAU * signed / (m as f64 * pitch)
}

impl SpectralPlan {
    fn new(n: usize, z: f64, config: &PhysicsConfig, pad_factor: usize, policy: EvanescentPolicy) -> Self {
        let m = n * pad_factor.max(1);
        let k = config.wavenumber();
        let k2 = k * k;
        let freqs: Vec<f64> = (0..m).map(|i| fft_frequency(i, m, config.pitch)).collect();
        let mut transfer = Vec::with_capacity(m * m);
        for &kx in &freqs {
            for &ky in &freqs {
                let kt2 = kx * kx + ky * ky;
                let h = if kt2 <= k2 {
                    Complex64::from_polar(1.0, z * (k2 - kt2).sqrt())
                } else {
                    match policy {
                        EvanescentPolicy::Zero => Complex64::new(0.0, 0.0),
                        EvanescentPolicy::Decay => Complex64::new((-z * (kt2 - k2).sqrt()).exp(), 0.0),
                    }
                };
                transfer.push(h);
            }
        }
        let mut planner = FftPlanner::new();
        SpectralPlan {
            m,
            transfer,
            forward_fft: planner.plan_fft_forward(m),
            inverse_fft: planner.plan_fft_inverse(m),
        }
    }

    /// Pads the n×n field into the top-left corner of an m×m frame, filters
    /// it and crops the same corner back out. Zero rows are skipped in the
    /// row transforms.
    fn apply(&self, u: &[Complex64], n: usize, conjugate: bool) -> Vec<Complex64> {
        let m = self.m;
        let mut frame = vec![Complex64::new(0.0, 0.0); m * m];
        for r in 0..n {
            frame[r * m..r * m + n].copy_from_slice(&u[r * n..(r + 1) * n]);
        }
        self.forward_fft.process(&mut frame[..n * m]);

        let mut cols = transpose(&frame, m);
        self.forward_fft.process(&mut cols);
        // transfer is symmetric under kx <-> ky, so it applies unchanged in
        // the transposed layout
        if conjugate {
            for (c, h) in cols.iter_mut().zip(&self.transfer) {
                *c *= h.conj();
            }
        } else {
            for (c, h) in cols.iter_mut().zip(&self.transfer) {
                *c *= h;
            }
        }
        self.inverse_fft.process(&mut cols);

        let mut rows = vec![Complex64::new(0.0, 0.0); n * m];
        for r in 0..n {
            for c in 0..m {
                rows[r * m + c] = cols[c * m + r];
            }
        }
        self.inverse_fft.process(&mut rows);
        let scale = 1.0 / (m * m) as f64;
        let mut out = Vec::with_capacity(n * n);
        for r in 0..n {
            out.extend(rows[r * m..r * m + n].iter().map(|z| z * scale));
        }
        out
    }

    fn apply_frame(&self, frame: &[Complex64]) -> Vec<Complex64> {
        let m = self.m;
        let mut buf = frame.to_vec();
        self.forward_fft.process(&mut buf);
        let mut cols = transpose(&buf, m);
        self.forward_fft.process(&mut cols);
        for (c, h) in cols.iter_mut().zip(&self.transfer) {
            *c *= h;
        }
        self.inverse_fft.process(&mut cols);
        let mut out = transpose(&cols, m);
        self.inverse_fft.process(&mut out);
        let scale = 1.0 / (m * m) as f64;
        out.iter_mut().for_each(|z| *z *= scale);
        out
    }
}

fn transpose(a: &[Complex64], m: usize) -> Vec<Complex64> {
    let mut t = vec![Complex64::new(0.0, 0.0); m * m];
    const BLOCK: usize = 16;
    for rb in (0..m).step_by(BLOCK) {
        for cb in (0..m).step_by(BLOCK) {
            for r in rb..(rb + BLOCK).min(m) {
                for c in cb..(cb + BLOCK).min(m) {
                    t[c * m + r] = a[r * m + c];
                }
            }
        }
    }
    t
}

#[derive(Debug)]
enum Plan {
    Direct(Kernel),
    Spectral(SpectralPlan),
}

/// Precomputed propagation operator for one grid size and one axial gap.
/// Immutable after construction and safe to share between threads.
#[derive(Debug)]
pub struct Propagator {
    n: usize,
    distance: f64,
    settings: PropagationSettings,
    plan: Plan,
}

impl Propagator {
    pub fn new(n: usize, distance: f64, config: &PhysicsConfig, settings: PropagationSettings) -> Result<Self> {
        check_distance(distance)?;
        if settings.pad_factor < 1 {
            return Err(Error::InvalidConfig("pad_factor must be >= 1".into()));
        }
        let plan = match settings.method {
            Method::Direct => Plan::Direct(Kernel::new(n, distance, config)?),
            Method::Spectral => Plan::Spectral(SpectralPlan::new(
                n,
                distance,
                config,
                settings.pad_factor,
                settings.evanescent,
            )),
        };
        Ok(Propagator {
            n,
            distance,
            settings,
            plan,
        })
    }

    pub fn method(&self) -> Method {
        self.settings.method
    }

    pub fn settings(&self) -> PropagationSettings {
        self.settings
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn check_grid(&self, u: &ComplexField) -> Result<()> {
        if u.n() != self.n {
            return Err(Error::GridMismatch {
                expected: self.n,
                actual: u.n(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, u: &ComplexField) -> Result<ComplexField> {
        self.check_grid(u)?;
        let data = match &self.plan {
            Plan::Direct(kernel) => direct_sum(u.data(), kernel, false),
            Plan::Spectral(plan) => plan.apply(u.data(), self.n, false),
        };
        ComplexField::from_vec(self.n, data)
    }

    /// Conjugate transpose of [`Propagator::forward`].
    pub fn adjoint(&self, u: &ComplexField) -> Result<ComplexField> {
        self.check_grid(u)?;
        let data = match &self.plan {
            Plan::Direct(kernel) => direct_sum(u.data(), kernel, true),
            Plan::Spectral(plan) => plan.apply(u.data(), self.n, true),
        };
        ComplexField::from_vec(self.n, data)
    }

    /// Adjoint that refuses to pair with a forward pass run by another method.
    pub fn adjoint_paired(&self, u: &ComplexField, forward_method: Method) -> Result<ComplexField> {
        if forward_method != self.method() {
            return Err(Error::MethodMismatch {
                forward: forward_method.name(),
                backward: self.method().name(),
            });
        }
        self.adjoint(u)
    }

    /// Side of the padded spectral frame, or `None` for the direct method.
    pub fn frame_side(&self) -> Option<usize> {
        match &self.plan {
            Plan::Spectral(plan) => Some(plan.m),
            Plan::Direct(_) => None,
        }
    }

    /// Applies the spectral transfer function to a whole padded frame
    /// without cropping. Direct propagators have no frame and return `None`.
    pub fn propagate_frame(&self, frame: &[Complex64]) -> Option<Vec<Complex64>> {
        match &self.plan {
            Plan::Spectral(plan) if frame.len() == plan.m * plan.m => Some(plan.apply_frame(frame)),
            _ => None,
        }
    }
}

/// `v_pq = Σ_ij u_ij · w(p−i, q−j)`; with `adjoint` set, the conjugate
/// transpose `v_ij = Σ_pq conj(w(p−i, q−j)) · u_pq`.
fn direct_sum(u: &[Complex64], kernel: &Kernel, adjoint: bool) -> Vec<Complex64> {
    let n = kernel.n();
    let side = kernel.side();
    let w = kernel.weights();
    let mut v = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            let src = u[i * n + j];
            if src.re == 0.0 && src.im == 0.0 {
                continue;
            }
            for p in 0..n {
                let (krow, base) = if adjoint {
                    // offset (i - p, j - q) read from a cell at (i, j) into (p, q)
                    (i + n - 1 - p, n - 1 + j)
                } else {
                    (p + n - 1 - i, n - 1 - j)
                };
                let row = &w[krow * side..(krow + 1) * side];
                let out = &mut v[p * n..(p + 1) * n];
                if adjoint {
                    for (q, o) in out.iter_mut().enumerate() {
                        *o += row[base - q].conj() * src;
                    }
                } else {
                    for (q, o) in out.iter_mut().enumerate() {
                        *o += row[base + q] * src;
                    }
                }
            }
        }
    }
    v
}

pub fn propagate_direct(u: &ComplexField, z: f64, config: &PhysicsConfig) -> Result<ComplexField> {
    Propagator::new(u.n(), z, config, PropagationSettings::direct())?.forward(u)
}

pub fn propagate_spectral(
    u: &ComplexField,
    z: f64,
    config: &PhysicsConfig,
    pad_factor: usize,
    evanescent: EvanescentPolicy,
) -> Result<ComplexField> {
    let settings = PropagationSettings {
        method: Method::Spectral,
        pad_factor,
        evanescent,
    };
    Propagator::new(u.n(), z, config, settings)?.forward(u)
}

pub fn adjoint_propagate(
    u: &ComplexField,
    z: f64,
    config: &PhysicsConfig,
    settings: PropagationSettings,
) -> Result<ComplexField> {
    Propagator::new(u.n(), z, config, settings)?.adjoint(u)
}

/// ‖a − b‖ / ‖b‖.
pub fn relative_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

/// `exp(jkz)`: the phase a normally incident plane wave picks up over `z`.
pub fn plane_wave_phase(z: f64, config: &PhysicsConfig) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * z / config.wavelength())
}
