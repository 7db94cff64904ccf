//! Accuracy, confusion and energy-distribution matrices, layer sweeps, and
//! field / heatmap artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{object_field, EncodeMode, Sample};
use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::network::{classify, predict, MetaNetwork, Optics, NUM_CLASSES};
use crate::training::{randomize_phases, train, Hyperparams};

/// Anything that maps a sample to ten class probabilities.
pub trait Classifier: Sync {
    fn probabilities(&self, sample: &Sample) -> Result<[f64; NUM_CLASSES]>;
}

enum OpticsRef<'a> {
    Owned(Optics),
    Borrowed(&'a Optics),
}

pub struct NetworkClassifier<'a> {
    net: &'a MetaNetwork,
    optics: OpticsRef<'a>,
    encode: EncodeMode,
}

impl<'a> NetworkClassifier<'a> {
    pub fn new(net: &'a MetaNetwork, encode: EncodeMode) -> Result<Self> {
        Ok(NetworkClassifier {
            net,
            optics: OpticsRef::Owned(Optics::for_network(net)?),
            encode,
        })
    }

    pub fn with_optics(net: &'a MetaNetwork, optics: &'a Optics, encode: EncodeMode) -> Self {
        NetworkClassifier {
            net,
            optics: OpticsRef::Borrowed(optics),
            encode,
        }
    }

    pub fn optics(&self) -> &Optics {
        match &self.optics {
            OpticsRef::Owned(o) => o,
            OpticsRef::Borrowed(o) => o,
        }
    }
}

impl Classifier for NetworkClassifier<'_> {
    fn probabilities(&self, sample: &Sample) -> Result<[f64; NUM_CLASSES]> {
        let u0 = object_field(&sample.mask, self.encode)?;
        predict(self.net, self.optics(), &u0)
    }
}

/// Rows are the true digit, columns the prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[u64; NUM_CLASSES]; NUM_CLASSES]);

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.0[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in &self.0 {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Entry `(d, c)` is the mean probability on region `c` over samples of
/// true digit `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyMatrix(pub [[f64; NUM_CLASSES]; NUM_CLASSES]);

impl EnergyMatrix {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in &self.0 {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn as_rows(&self) -> Vec<Vec<f64>> {
        self.0.iter().map(|r| r.to_vec()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub energy: EnergyMatrix,
    pub predictions: Vec<usize>,
}

/// Classifies every sample. Samples are evaluated in parallel and reduced in
/// dataset order.
pub fn evaluate<C: Classifier + ?Sized>(classifier: &C, samples: &[Sample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let probs: Vec<[f64; NUM_CLASSES]> = samples
        .par_iter()
        .map(|s| classifier.probabilities(s))
        .collect::<Result<_>>()?;
    let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    let mut energy_sum = [[0.0f64; NUM_CLASSES]; NUM_CLASSES];
    let mut counts = [0u64; NUM_CLASSES];
    let mut predictions = Vec::with_capacity(samples.len());
    for (s, p) in samples.iter().zip(&probs) {
        let truth = s.label as usize;
        let pred = classify(p);
        predictions.push(pred);
        confusion[truth][pred] += 1;
        counts[truth] += 1;
        for c in 0..NUM_CLASSES {
            energy_sum[truth][c] += p[c];
        }
    }
    let mut energy = [[0.0; NUM_CLASSES]; NUM_CLASSES];
    for d in 0..NUM_CLASSES {
        if counts[d] > 0 {
            for c in 0..NUM_CLASSES {
                energy[d][c] = energy_sum[d][c] / counts[d] as f64;
            }
        }
    }
    let confusion = ConfusionMatrix(confusion);
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        confusion,
        energy: EnergyMatrix(energy),
        predictions,
    })
}

/// Indices of the first `per_digit` correctly classified samples of each
/// digit, in digit order.
pub fn select_showcase(evaluation: &Evaluation, samples: &[Sample], per_digit: usize) -> Vec<usize> {
    let mut picked = Vec::new();
    for d in 0..NUM_CLASSES {
        picked.extend(
            samples
                .iter()
                .zip(&evaluation.predictions)
                .enumerate()
                .filter(|(_, (s, &p))| s.label as usize == d && p == d)
                .map(|(i, _)| i)
                .take(per_digit),
        );
    }
    picked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub layer_count: usize,
    pub accuracy: f64,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub hyperparams: Hyperparams,
}

impl SweepReport {
    /// `accuracy(k+1) − accuracy(k)` for consecutive rows.
    pub fn increments(&self) -> Vec<f64> {
        self.rows.windows(2).map(|w| w[1].accuracy - w[0].accuracy).collect()
    }

    pub fn to_csv(&self) -> String {
        let hp = &self.hyperparams;
        let mut s = format!(
            "# budget: max_epochs={} batch_size={} learning_rate={} optimizer={:?} seed={}\n",
            hp.max_epochs, hp.batch_size, hp.learning_rate, hp.optimizer, hp.seed
        );
        s.push_str("layer_count,accuracy,epochs,seed\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{},{}", r.layer_count, r.accuracy, r.epochs, r.seed);
        }
        s
    }
}

/// Trains one network per layer count under the same budget and seed and
/// evaluates each on `eval_set`.
pub fn sweep_layers(
    layer_counts: &[usize],
    hyperparams: &Hyperparams,
    template: &MetaNetwork,
    train_set: &[Sample],
    validation_set: &[Sample],
    eval_set: &[Sample],
    encode: EncodeMode,
) -> Result<SweepReport> {
    if layer_counts.is_empty() {
        return Err(Error::InvalidConfig("layer sweep needs at least one count".into()));
    }
    let mut rows = Vec::with_capacity(layer_counts.len());
    for &count in layer_counts {
        let net = network_with_layers(template, count, hyperparams.seed)?;
        let run = train(train_set, validation_set, hyperparams, net, encode)?;
        let acc = evaluate(&NetworkClassifier::new(&run.network, encode)?, eval_set)?.accuracy;
        log::info!("sweep: {count} layer(s) -> accuracy {acc:.4}");
        rows.push(SweepRow {
            layer_count: count,
            accuracy: acc,
            epochs: run.history.len(),
            seed: hyperparams.seed,
        });
    }
    Ok(SweepReport {
        rows,
        hyperparams: *hyperparams,
    })
}

/// Copy of `template` with `count` freshly randomized layers.
pub fn network_with_layers(template: &MetaNetwork, count: usize, seed: u64) -> Result<MetaNetwork> {
    let mut config = template.config;
    config.num_layers = count;
    let mut net = MetaNetwork::uniform(config, template.propagation, template.detector.clone(), 0.0)?;
    net.readout = template.readout;
    randomize_phases(&mut net, seed);
    Ok(net)
}

pub fn dump_field(field: &ComplexField, path: &Path) -> Result<()> {
    field.save(path)
}

/// Piecewise-linear approximation of the viridis colormap: five anchors at
/// 0, 0.25, 0.5, 0.75 and 1.
const COLORMAP: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * 4.0;
    let i = (t.floor() as usize).min(3);
    let f = t - i as f64;
    let a = COLORMAP[i];
    let b = COLORMAP[i + 1];
    std::array::from_fn(|k| (a[k] + (b[k] - a[k]) * f).round() as u8)
}

/// Writes `values` (rows × cols) as a PNG with `block`×`block` pixels per
/// entry, linearly scaled from the minimum to the maximum entry, and always
/// a CSV twin next to it (same stem, `.csv`). A constant matrix renders in
/// the lowest colour. Returns the CSV path.
pub fn render_heatmap(values: &[Vec<f64>], block: usize, path: &Path) -> Result<PathBuf> {
    let rows = values.len();
    let cols = values.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 || values.iter().any(|r| r.len() != cols) || block == 0 {
        return Err(Error::Format("heatmap needs a non-empty rectangular matrix".into()));
    }
    let (lo, hi) = values
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let width = cols * block;
    let height = rows * block;
    let mut pixels = vec![0u8; width * height * 3];
    for (r, row) in values.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
            let rgb = colormap(t);
            for y in r * block..(r + 1) * block {
                for x in c * block..(c + 1) * block {
                    let o = (y * width + x) * 3;
                    pixels[o..o + 3].copy_from_slice(&rgb);
                }
            }
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Format(format!("PNG encoding failed: {e}"));
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(&pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)?;

    let csv_path = path.with_extension("csv");
    let mut csv = String::new();
    for row in values {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6e}")).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    Ok(csv_path)
}

/// Intensity `|u|²` of a field as rows for [`render_heatmap`].
pub fn intensity_rows(field: &ComplexField) -> Vec<Vec<f64>> {
    let n = field.n();
    field.intensity().chunks(n).map(|r| r.to_vec()).collect()
}
