//! The layered forward model: phase masks separated by free space, ending in
//! a ten-region energy readout on the detector plane.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::config::PhysicsConfig;
use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::propagation::{Method, PropagationSettings, Propagator};

pub const NUM_CLASSES: usize = 10;
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Wraps a phase into `[0, 2π)`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(std::f64::consts::TAU);
    if w >= std::f64::consts::TAU {
        0.0
    } else {
        w
    }
}

/// One plane of meta-neurons: a phase per cell and a common transmission
/// amplitude. Phases are kept unwrapped while training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseLayer {
    pub transmission: f64,
    #[serde(serialize_with = "serialize_f64_17")]
    pub phases: Vec<f64>,
}

impl PhaseLayer {
    pub fn uniform(n: usize, phase: f64) -> Self {
        PhaseLayer {
            transmission: 1.0,
            phases: vec![phase; n * n],
        }
    }

    pub fn n(&self) -> usize {
        (self.phases.len() as f64).sqrt().round() as usize
    }

    pub fn wrapped_phases(&self) -> Vec<f64> {
        self.phases.iter().map(|&p| wrap_phase(p)).collect()
    }
}

/// Floats in model files are written with 17 significant digits.
fn serialize_f64_17<S: Serializer>(values: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::{Error as _, SerializeSeq};
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for v in values {
        if !v.is_finite() {
            return Err(S::Error::custom("non-finite phase"));
        }
        let raw = RawValue::from_string(format!("{v:.16e}")).map_err(S::Error::custom)?;
        seq.serialize_element(&raw)?;
    }
    seq.end()
}

/// `out_ij = u_ij · t · exp(jφ_ij)`.
pub fn apply_layer(u: &ComplexField, layer: &PhaseLayer) -> Result<ComplexField> {
    if layer.phases.len() != u.data().len() {
        return Err(Error::GridMismatch {
            expected: u.n(),
            actual: layer.n(),
        });
    }
    let data = u
        .data()
        .iter()
        .zip(&layer.phases)
        .map(|(z, &phi)| z * Complex64::from_polar(layer.transmission, phi))
        .collect();
    ComplexField::from_vec(u.n(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

impl Region {
    fn overlaps(&self, other: &Region) -> bool {
        self.row < other.row + other.size
            && other.row < self.row + self.size
            && self.col < other.col + other.size
            && other.col < self.col + self.size
    }

    pub fn cells(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        (self.row..self.row + self.size)
            .flat_map(move |r| (self.col..self.col + self.size).map(move |c| r * n + c))
    }
}

/// Ten equal square regions on the detector plane plus the digit → region
/// assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorLayout {
    pub n: usize,
    pub regions: Vec<Region>,
    pub label_map: [usize; NUM_CLASSES],
}

impl DetectorLayout {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::LayoutOverflow(msg));
        if self.regions.len() != NUM_CLASSES {
            return bad(format!("need {NUM_CLASSES} regions, got {}", self.regions.len()));
        }
        let size = self.regions[0].size;
        for (i, r) in self.regions.iter().enumerate() {
            if r.size == 0 || r.size != size {
                return bad(format!("region {i} has size {}, expected {size}", r.size));
            }
            if r.row + r.size > self.n || r.col + r.size > self.n {
                return bad(format!("region {i} leaves the {0}x{0} grid", self.n));
            }
            for (j, other) in self.regions.iter().enumerate().skip(i + 1) {
                if r.overlaps(other) {
                    return bad(format!("regions {i} and {j} overlap"));
                }
            }
        }
        let mut seen = [false; NUM_CLASSES];
        for &r in &self.label_map {
            if r >= NUM_CLASSES || seen[r] {
                return bad("label_map is not a permutation of 0..10".into());
            }
            seen[r] = true;
        }
        Ok(())
    }

    pub fn region_for_digit(&self, digit: usize) -> &Region {
        &self.regions[self.label_map[digit]]
    }

    /// Energy collected by each digit's region, indexed by digit.
    pub fn digit_energies(&self, output: &ComplexField) -> [f64; NUM_CLASSES] {
        let data = output.data();
        let mut e = [0.0; NUM_CLASSES];
        for (d, slot) in e.iter_mut().enumerate() {
            *slot = self.region_for_digit(d).cells(self.n).map(|i| data[i].norm_sqr()).sum();
        }
        e
    }
}

/// Regions arranged in a centred `rows × cols` array. Rows are filled left to
/// right, top to bottom, so with the default 2×5 array digits 0–4 sit on the
/// top row and 5–9 on the bottom row. Gaps between regions are equal along
/// each axis and at least one cell, with leftover cells split evenly at the
/// borders.
pub fn default_detector_layout(n: usize, region_size: usize, rows: usize, cols: usize) -> Result<DetectorLayout> {
    if rows * cols != NUM_CLASSES {
        return Err(Error::LayoutOverflow(format!(
            "{rows}x{cols} arrangement does not hold {NUM_CLASSES} regions"
        )));
    }
    if region_size == 0 {
        return Err(Error::LayoutOverflow("region size must be positive".into()));
    }
    let place = |count: usize| -> Result<Vec<usize>> {
        let used = count * region_size;
        if used + count + 1 > n {
            return Err(Error::LayoutOverflow(format!(
                "{count} regions of {region_size} cells with 1-cell gaps exceed {n} cells"
            )));
        }
        let gap = (n - used) / (count + 1);
        let span = used + (count - 1) * gap;
        let offset = (n - span) / 2;
        Ok((0..count).map(|i| offset + i * (region_size + gap)).collect())
    };
    let row_starts = place(rows)?;
    let col_starts = place(cols)?;
    let mut regions = Vec::with_capacity(NUM_CLASSES);
    for &row in &row_starts {
        for &col in &col_starts {
            regions.push(Region {
                row,
                col,
                size: region_size,
            });
        }
    }
    let layout = DetectorLayout {
        n,
        regions,
        label_map: std::array::from_fn(|d| d),
    };
    layout.validate()?;
    Ok(layout)
}

/// Ten single-cell regions spaced evenly in raster order. Meant for grids
/// too small for [`default_detector_layout`].
pub fn point_detector_layout(n: usize) -> Result<DetectorLayout> {
    let cells = n * n;
    if cells < NUM_CLASSES {
        return Err(Error::LayoutOverflow(format!("{n}x{n} grid has fewer than {NUM_CLASSES} cells")));
    }
    let regions = (0..NUM_CLASSES)
        .map(|d| {
            let idx = d * cells / NUM_CLASSES + cells / (2 * NUM_CLASSES);
            Region {
                row: idx / n,
                col: idx % n,
                size: 1,
            }
        })
        .collect();
    let layout = DetectorLayout {
        n,
        regions,
        label_map: std::array::from_fn(|d| d),
    };
    layout.validate()?;
    Ok(layout)
}

/// How region energies become class probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Readout {
    /// `p_c = E_c / Σ E`.
    #[default]
    Energy,
    /// Softmax over the normalized energies divided by `temperature`.
    Softmax { temperature: f64 },
}

impl Readout {
    pub fn probabilities(&self, energies: &[f64; NUM_CLASSES]) -> Result<[f64; NUM_CLASSES]> {
        let p = region_probabilities(energies)?;
        match *self {
            Readout::Energy => Ok(p),
            Readout::Softmax { temperature } => Ok(softmax(&p, temperature)),
        }
    }

    /// Vector-Jacobian product: maps ∂L/∂p to ∂L/∂E.
    pub fn pullback(
        &self,
        energies: &[f64; NUM_CLASSES],
        probs: &[f64; NUM_CLASSES],
        grad_p: &[f64; NUM_CLASSES],
    ) -> [f64; NUM_CLASSES] {
        let grad_q = match *self {
            Readout::Energy => *grad_p,
            Readout::Softmax { temperature } => {
                let dot: f64 = probs.iter().zip(grad_p).map(|(p, g)| p * g).sum();
                std::array::from_fn(|c| probs[c] * (grad_p[c] - dot) / temperature)
            }
        };
        let total: f64 = energies.iter().sum();
        let dot: f64 = grad_q.iter().zip(energies).map(|(g, e)| g * e).sum();
        std::array::from_fn(|d| grad_q[d] / total - dot / (total * total))
    }
}

fn softmax(q: &[f64; NUM_CLASSES], temperature: f64) -> [f64; NUM_CLASSES] {
    let max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: [f64; NUM_CLASSES] = std::array::from_fn(|c| ((q[c] - max) / temperature).exp());
    let s: f64 = ex.iter().sum();
    std::array::from_fn(|c| ex[c] / s)
}

/// Normalized region energies ("energy distribution percentage").
pub fn region_probabilities(energies: &[f64; NUM_CLASSES]) -> Result<[f64; NUM_CLASSES]> {
    let total: f64 = energies.iter().sum();
    if !(total > 0.0) {
        return Err(Error::AllZeroRegions);
    }
    Ok(std::array::from_fn(|c| energies[c] / total))
}

/// Index of the largest probability; ties go to the lowest digit.
pub fn classify(p: &[f64; NUM_CLASSES]) -> usize {
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if p[c] > p[best] {
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaNetwork {
    pub format_version: u32,
    pub config: PhysicsConfig,
    pub propagation: PropagationSettings,
    pub readout: Readout,
    pub detector: DetectorLayout,
    pub layers: Vec<PhaseLayer>,
}

impl MetaNetwork {
    /// A network with every phase set to `phase`.
    pub fn uniform(
        config: PhysicsConfig,
        propagation: PropagationSettings,
        detector: DetectorLayout,
        phase: f64,
    ) -> Result<Self> {
        let net = MetaNetwork {
            format_version: MODEL_FORMAT_VERSION,
            config,
            propagation,
            readout: Readout::Energy,
            layers: (0..config.num_layers).map(|_| PhaseLayer::uniform(config.grid_n, phase)).collect(),
            detector,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model format version {}", self.format_version)));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        let n = self.config.grid_n;
        for layer in &self.layers {
            if layer.phases.len() != n * n {
                return Err(Error::GridMismatch {
                    expected: n,
                    actual: layer.n(),
                });
            }
            if layer.phases.iter().any(|p| !p.is_finite()) {
                return Err(Error::Format("non-finite phase".into()));
            }
        }
        if self.detector.n != n {
            return Err(Error::GridMismatch {
                expected: n,
                actual: self.detector.n,
            });
        }
        self.detector.validate()
    }

    pub fn n(&self) -> usize {
        self.config.grid_n
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.phases.len()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: MetaNetwork = serde_json::from_str(s)?;
        net.validate()?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// The propagators a network needs, built once and shared read-only.
#[derive(Debug)]
pub struct Optics {
    object: Propagator,
    between: Propagator,
    detector: Propagator,
}

impl Optics {
    pub fn new(config: &PhysicsConfig, settings: PropagationSettings) -> Result<Self> {
        let n = config.grid_n;
        Ok(Optics {
            object: Propagator::new(n, config.object_gap, config, settings)?,
            between: Propagator::new(n, config.layer_gap, config, settings)?,
            detector: Propagator::new(n, config.detector_gap, config, settings)?,
        })
    }

    pub fn for_network(net: &MetaNetwork) -> Result<Self> {
        Self::new(&net.config, net.propagation)
    }

    pub fn method(&self) -> Method {
        self.object.method()
    }

    pub fn object(&self) -> &Propagator {
        &self.object
    }

    /// Propagator leaving layer `l` of a network with `num_layers` layers.
    pub fn after_layer(&self, l: usize, num_layers: usize) -> &Propagator {
        if l + 1 == num_layers {
            &self.detector
        } else {
            &self.between
        }
    }
}

/// Cached planes from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub method: Method,
    pub input: ComplexField,
    /// Field arriving at each layer.
    pub pre_layer: Vec<ComplexField>,
    /// Field leaving each layer.
    pub post_layer: Vec<ComplexField>,
    pub output: ComplexField,
    /// Indexed by digit.
    pub region_energies: [f64; NUM_CLASSES],
}

/// Runs the object field through the network. The object plane is
/// propagated to the first layer, then each layer modulates and propagates
/// to the next plane, the last one to the detector.
pub fn forward(net: &MetaNetwork, optics: &Optics, u0: &ComplexField) -> Result<ForwardTrace> {
    if u0.n() != net.n() {
        return Err(Error::GridMismatch {
            expected: net.n(),
            actual: u0.n(),
        });
    }
    if u0.energy() <= 0.0 {
        return Err(Error::ZeroField);
    }
    let num_layers = net.layers.len();
    let mut pre_layer = Vec::with_capacity(num_layers);
    let mut post_layer = Vec::with_capacity(num_layers);
    let mut current = optics.object().forward(u0)?;
    for (l, layer) in net.layers.iter().enumerate() {
        let modulated = apply_layer(&current, layer)?;
        let next = optics.after_layer(l, num_layers).forward(&modulated)?;
        pre_layer.push(current.with_tag(format!("layer{l}_in")));
        post_layer.push(modulated.with_tag(format!("layer{l}_out")));
        current = next;
    }
    let output = current.with_tag("detector");
    let region_energies = net.detector.digit_energies(&output);
    Ok(ForwardTrace {
        method: optics.method(),
        input: u0.clone().with_tag("object"),
        pre_layer,
        post_layer,
        output,
        region_energies,
    })
}

/// Forward pass returning only the class probabilities.
pub fn predict(net: &MetaNetwork, optics: &Optics, u0: &ComplexField) -> Result<[f64; NUM_CLASSES]> {
    let trace = forward(net, optics, u0)?;
    net.readout.probabilities(&trace.region_energies)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::propagate_spectral;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(n: usize, rng: &mut ChaCha8Rng) -> ComplexField {
        let data = (0..n * n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        ComplexField::from_vec(n, data).unwrap()
    }

    fn small_net(n: usize, layers: usize, seed: u64) -> MetaNetwork {
        let config = PhysicsConfig {
            grid_n: n,
            num_layers: layers,
            ..Default::default()
        };
        let detector = point_detector_layout(n).unwrap();
        let mut net = MetaNetwork::uniform(config, PropagationSettings::default(), detector, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            layer.phases.iter_mut().for_each(|p| *p = rng.gen_range(0.0..2.0 * PI));
        }
        net
    }

    #[test]
    fn apply_layer_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u = random_field(6, &mut rng);
        let id = apply_layer(&u, &PhaseLayer::uniform(6, 0.0)).unwrap();
        assert_eq!(id.data(), u.data());
        let neg = apply_layer(&u, &PhaseLayer::uniform(6, PI)).unwrap();
        for (a, b) in neg.data().iter().zip(u.data()) {
            assert!((a + b).norm() < 1e-15);
        }
        let layer = PhaseLayer {
            transmission: 1.0,
            phases: (0..36).map(|_| rng.gen_range(-10.0..10.0)).collect(),
        };
        let out = apply_layer(&u, &layer).unwrap();
        assert!((out.energy() - u.energy()).abs() < 1e-12);
        for (a, b) in out.data().iter().zip(u.data()) {
            assert!((a.norm() - b.norm()).abs() < 1e-14);
        }
        let inverse = PhaseLayer {
            transmission: 1.0,
            phases: layer.phases.iter().map(|p| -p).collect(),
        };
        let back = apply_layer(&out, &inverse).unwrap();
        for (a, b) in back.data().iter().zip(u.data()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(matches!(
            apply_layer(&u, &PhaseLayer::uniform(5, 0.0)),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn region_probability_examples() {
        let p = region_probabilities(&[3.0; 10]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.1).abs() < 1e-15));
        let mut e = [0.0; 10];
        e[4] = 2.5;
        let p = region_probabilities(&e).unwrap();
        assert_eq!(p[4], 1.0);
        assert_eq!(p.iter().sum::<f64>(), 1.0);
        let mut e = [0.0; 10];
        e[0] = 1.0;
        e[1] = 1.0;
        e[2] = 2.0;
        let p = region_probabilities(&e).unwrap();
        assert_eq!(&p[..3], &[0.25, 0.25, 0.5]);
        assert!(matches!(region_probabilities(&[0.0; 10]), Err(Error::AllZeroRegions)));
    }

    #[test]
    fn classify_examples() {
        let mut p = [0.0; 10];
        p[7] = 1.0;
        assert_eq!(classify(&p), 7);
        let mut p = [0.05; 10];
        p[2] = 0.3;
        p[5] = 0.3;
        assert_eq!(classify(&p), 2);
        assert_eq!(classify(&[0.1; 10]), 0);
    }

    #[test]
    fn default_layout_geometry() {
        let layout = default_detector_layout(28, 4, 2, 5).unwrap();
        assert_eq!(layout.regions.len(), 10);
        for (i, a) in layout.regions.iter().enumerate() {
            assert_eq!(a.cells(28).count(), 16);
            for b in &layout.regions[i + 1..] {
                let ca: Vec<usize> = a.cells(28).collect();
                assert!(b.cells(28).all(|c| !ca.contains(&c)));
            }
        }
        // digits 0-4 on the top row, left to right
        for d in 0..4 {
            let (a, b) = (layout.region_for_digit(d), layout.region_for_digit(d + 1));
            assert_eq!(a.row, b.row);
            assert!(a.col < b.col);
        }
        assert!(layout.region_for_digit(5).row > layout.region_for_digit(0).row);
        assert!(matches!(
            default_detector_layout(28, 12, 2, 5),
            Err(Error::LayoutOverflow(_))
        ));
        assert!(default_detector_layout(28, 4, 3, 3).is_err());
    }

    #[test]
    fn layout_validation_catches_overlap() {
        let mut layout = default_detector_layout(28, 4, 2, 5).unwrap();
        layout.regions[1] = Region { row: layout.regions[0].row + 1, col: layout.regions[0].col + 1, size: 4 };
        assert!(layout.validate().is_err());
    }

    #[test]
    fn transparent_layer_is_double_propagation() {
        let net = small_net(8, 1, 0);
        let mut net = net;
        net.layers[0].phases.iter_mut().for_each(|p| *p = 0.0);
        let optics = Optics::for_network(&net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u0 = random_field(8, &mut rng);
        let trace = forward(&net, &optics, &u0).unwrap();
        let c = &net.config;
        let twice = propagate_spectral(
            &propagate_spectral(&u0, c.object_gap, c, 4, crate::propagation::EvanescentPolicy::Zero).unwrap(),
            c.detector_gap,
            c,
            4,
            crate::propagation::EvanescentPolicy::Zero,
        )
        .unwrap();
        for (a, b) in trace.output.data().iter().zip(twice.data()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn forward_is_energy_nonincreasing_and_linear() {
        let net = small_net(8, 2, 1);
        let optics = Optics::for_network(&net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_field(8, &mut rng).normalize().unwrap();
        let v = random_field(8, &mut rng).normalize().unwrap();
        let tu = forward(&net, &optics, &u).unwrap();
        assert!(tu.output.energy() <= 1.0 + 1e-9);
        assert!(tu.region_energies.iter().sum::<f64>() <= tu.output.energy() + 1e-9);
        let tv = forward(&net, &optics, &v).unwrap();
        let (a, b) = (Complex64::new(0.3, -1.2), Complex64::new(-0.7, 0.4));
        let mix = ComplexField::from_vec(
            8,
            u.data().iter().zip(v.data()).map(|(x, y)| a * x + b * y).collect(),
        )
        .unwrap();
        let tm = forward(&net, &optics, &mix).unwrap();
        let expect: Vec<Complex64> = tu
            .output
            .data()
            .iter()
            .zip(tv.output.data())
            .map(|(x, y)| a * x + b * y)
            .collect();
        let err = crate::propagation::relative_l2(tm.output.data(), &expect);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn forward_rejects_zero_and_mismatched_inputs() {
        let net = small_net(8, 1, 0);
        let optics = Optics::for_network(&net).unwrap();
        assert!(matches!(forward(&net, &optics, &ComplexField::zeros(8)), Err(Error::ZeroField)));
        assert!(matches!(
            forward(&net, &optics, &ComplexField::filled(9, Complex64::new(1.0, 0.0))),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn single_phase_reaches_every_detector_cell() {
        let net = small_net(10, 2, 4);
        let optics = Optics::for_network(&net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u0 = random_field(10, &mut rng).normalize().unwrap();
        let base = forward(&net, &optics, &u0).unwrap().output;
        for &(layer, cell) in &[(0usize, 0usize), (0, 55), (1, 99), (1, 37)] {
            let mut probe = net.clone();
            probe.layers[layer].phases[cell] += 1e-3;
            let out = forward(&probe, &optics, &u0).unwrap().output;
            let touched = out
                .data()
                .iter()
                .zip(base.data())
                .filter(|(a, b)| (*a - *b).norm() > 0.0)
                .count();
            assert!(touched as f64 >= 0.99 * 100.0, "layer {layer} cell {cell}: {touched}");
        }
    }

    #[test]
    fn model_json_round_trip_is_byte_exact() {
        let net = small_net(6, 2, 5);
        let s1 = net.to_json().unwrap();
        let back = MetaNetwork::from_json(&s1).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_json().unwrap(), s1);
        assert!(s1.contains("e0") || s1.contains("e-"));
    }

    #[test]
    fn softmax_pullback_matches_finite_differences() {
        let readout = Readout::Softmax { temperature: 0.1 };
        let e = [0.3, 0.1, 0.05, 0.2, 0.01, 0.07, 0.02, 0.09, 0.04, 0.12];
        let weights: [f64; 10] = std::array::from_fn(|i| (i as f64 * 0.37).sin());
        let f = |e: &[f64; 10]| -> f64 {
            let p = readout.probabilities(e).unwrap();
            p.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let p = readout.probabilities(&e).unwrap();
        let g = readout.pullback(&e, &p, &weights);
        for d in 0..10 {
            let h = 1e-6;
            let mut ep = e;
            ep[d] += h;
            let mut em = e;
            em[d] -= h;
            let fd = (f(&ep) - f(&em)) / (2.0 * h);
            assert!((fd - g[d]).abs() < 1e-6 * (1.0 + fd.abs()), "{d}: {fd} vs {}", g[d]);
        }
    }

    proptest! {
        #[test]
        fn probabilities_and_classification_are_scale_invariant(
            e in prop::array::uniform10(0.0f64..10.0),
            alpha in 1e-3f64..1e3,
        ) {
            prop_assume!(e.iter().sum::<f64>() > 1e-6);
            let scaled: [f64; 10] = std::array::from_fn(|i| e[i] * alpha);
            let p = region_probabilities(&e).unwrap();
            let ps = region_probabilities(&scaled).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in p.iter().zip(&ps) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert_eq!(classify(&e), classify(&scaled));
        }

        #[test]
        fn wrap_phase_in_range(phi in -1e3f64..1e3) {
            let w = wrap_phase(phi);
            prop_assert!((0.0..std::f64::consts::TAU).contains(&w));
            prop_assert!((Complex64::from_polar(1.0, w) - Complex64::from_polar(1.0, phi)).norm() < 1e-9);
        }
    }
}
