//! Cross-entropy training of the phase masks.
//!
//! Gradients come from one forward pass and one adjoint sweep. With the
//! Wirtinger convention `g = ∂L/∂Re z + j ∂L/∂Im z`, a detector energy
//! `E = Σ|z|²` seeds `g = 2·(∂L/∂E)·z` on its region, a linear propagator
//! `y = G x` pulls back as `g_x = G† g_y`, and a phase mask `b = a·t·e^{jφ}`
//! gives `∂L/∂φ = −Im(b · conj(g_b))` and `g_a = t·e^{−jφ}·g_b`.

use std::f64::consts::TAU;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{object_field, EncodeMode, Sample};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, NetworkClassifier};
use crate::field::ComplexField;
use crate::config::PhysicsConfig;
use crate::network::{default_detector_layout, forward, MetaNetwork, Optics, Readout, NUM_CLASSES};
use crate::propagation::PropagationSettings;

pub const DEFAULT_LOSS_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub loss_epsilon: f64,
    pub early_stop_patience: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.01,
            batch_size: 64,
            max_epochs: 15,
            optimizer: Optimizer::default(),
            seed: 42,
            loss_epsilon: DEFAULT_LOSS_EPSILON,
            early_stop_patience: 3,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.loss_epsilon > 0.0 && self.loss_epsilon <= 1e-6) {
            return Err(Error::InvalidConfig("loss_epsilon must lie in (0, 1e-6]".into()));
        }
        Ok(())
    }
}

/// `−ln(max(p_label, ε))`.
pub fn loss(p: &[f64; NUM_CLASSES], label: usize, epsilon: f64) -> f64 {
    -p[label].max(epsilon).ln()
}

/// Per-layer `∂L/∂φ`, flattened row-major per layer.
pub type PhaseGradient = Vec<Vec<f64>>;

fn zero_gradient(net: &MetaNetwork) -> PhaseGradient {
    net.layers.iter().map(|l| vec![0.0; l.phases.len()]).collect()
}

/// Loss and phase gradient for one object field.
///
/// A zero input field has zero gradient (the model is linear in the field);
/// it is reported with the clamped loss `−ln ε`.
pub fn loss_and_gradient(
    net: &MetaNetwork,
    optics: &Optics,
    u0: &ComplexField,
    label: usize,
    loss_epsilon: f64,
) -> Result<(f64, PhaseGradient)> {
    if u0.n() != net.n() {
        return Err(Error::GridMismatch {
            expected: net.n(),
            actual: u0.n(),
        });
    }
    let clamped = -loss_epsilon.ln();
    if u0.energy() == 0.0 {
        return Ok((clamped, zero_gradient(net)));
    }
    let trace = forward(net, optics, u0)?;
    let energies = trace.region_energies;
    let probs = match net.readout.probabilities(&energies) {
        Ok(p) => p,
        Err(Error::AllZeroRegions) => return Ok((clamped, zero_gradient(net))),
        Err(e) => return Err(e),
    };
    let value = loss(&probs, label, loss_epsilon);
    let mut grad_p = [0.0; NUM_CLASSES];
    if probs[label] > loss_epsilon {
        grad_p[label] = -1.0 / probs[label];
    } else {
        return Ok((value, zero_gradient(net)));
    }
    let grad_e = net.readout.pullback(&energies, &probs, &grad_p);

    let n = net.n();
    let out = trace.output.data();
    let mut seed = vec![Complex64::new(0.0, 0.0); n * n];
    for (d, &g) in grad_e.iter().enumerate() {
        for idx in net.detector.region_for_digit(d).cells(n) {
            seed[idx] = out[idx] * (2.0 * g);
        }
    }
    let mut adj = ComplexField::from_vec(n, seed)?;

    let num_layers = net.layers.len();
    let mut grads = vec![Vec::new(); num_layers];
    for l in (0..num_layers).rev() {
        let layer = &net.layers[l];
        let g_post = optics.after_layer(l, num_layers).adjoint_paired(&adj, trace.method)?;
        let post = trace.post_layer[l].data();
        grads[l] = post
            .iter()
            .zip(g_post.data())
            .map(|(b, g)| -(b * g.conj()).im)
            .collect();
        if l > 0 {
            let data = g_post
                .data()
                .iter()
                .zip(&layer.phases)
                .map(|(g, &phi)| g * Complex64::from_polar(layer.transmission, -phi))
                .collect();
            adj = ComplexField::from_vec(n, data)?;
        }
    }
    Ok((value, grads))
}

/// Phase gradient only; see [`loss_and_gradient`].
pub fn gradient(
    net: &MetaNetwork,
    optics: &Optics,
    u0: &ComplexField,
    label: usize,
    loss_epsilon: f64,
) -> Result<PhaseGradient> {
    loss_and_gradient(net, optics, u0, label, loss_epsilon).map(|(_, g)| g)
}

/// Loss of a single sample, for finite-difference probes.
pub fn sample_loss(net: &MetaNetwork, optics: &Optics, u0: &ComplexField, label: usize, loss_epsilon: f64) -> Result<f64> {
    let trace = forward(net, optics, u0)?;
    let p = net.readout.probabilities(&trace.region_energies)?;
    Ok(loss(&p, label, loss_epsilon))
}

/// Mean loss and mean gradient over a batch. Per-sample work runs in
/// parallel; the reduction runs in batch order so the result does not depend
/// on the thread count.
pub fn batch_loss_and_gradient(
    net: &MetaNetwork,
    optics: &Optics,
    batch: &[&Sample],
    encode: EncodeMode,
    loss_epsilon: f64,
) -> Result<(f64, PhaseGradient)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_sample: Vec<(f64, PhaseGradient)> = batch
        .par_iter()
        .map(|s| {
            let u0 = object_field(&s.mask, encode)?;
            loss_and_gradient(net, optics, &u0, s.label as usize, loss_epsilon)
        })
        .collect::<Result<_>>()?;
    let mut total = zero_gradient(net);
    let mut loss_sum = 0.0;
    for (l, g) in &per_sample {
        loss_sum += l;
        for (acc, layer) in total.iter_mut().zip(g) {
            for (a, v) in acc.iter_mut().zip(layer) {
                *a += v;
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    total.iter_mut().flatten().for_each(|v| *v *= scale);
    Ok((loss_sum * scale, total))
}

enum OptimizerState {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

impl OptimizerState {
    fn new(opt: Optimizer, params: usize) -> Self {
        match opt {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::Adam { beta1, beta2, epsilon } => OptimizerState::Adam {
                beta1,
                beta2,
                epsilon,
                m: vec![0.0; params],
                v: vec![0.0; params],
                t: 0,
            },
        }
    }

    fn step(&mut self, net: &mut MetaNetwork, grad: &PhaseGradient, lr: f64) {
        let params = net.layers.iter_mut().flat_map(|l| l.phases.iter_mut());
        let grads = grad.iter().flatten();
        match self {
            OptimizerState::Sgd => {
                for (p, g) in params.zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerState::Adam {
                beta1,
                beta2,
                epsilon,
                m,
                v,
                t,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (((p, g), m), v) in params.zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = *beta1 * *m + (1.0 - *beta1) * g;
                    *v = *beta2 * *v + (1.0 - *beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + *epsilon);
                }
            }
        }
    }
}

/// Independent RNG streams derived from the run seed.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Replaces every phase with an i.i.d. draw from `[0, 2π)`.
pub fn randomize_phases(net: &mut MetaNetwork, seed: u64) {
    let mut rng = stream_rng(seed, 1);
    for layer in &mut net.layers {
        for p in &mut layer.phases {
            *p = rng.gen_range(0.0..TAU);
        }
    }
}

/// Randomly initialized network on the default centered 2×5 detector
/// layout with `region_size`-cell square regions.
pub fn initial_network(
    config: PhysicsConfig,
    settings: PropagationSettings,
    region_size: usize,
    readout: Readout,
    seed: u64,
) -> Result<MetaNetwork> {
    config.validate()?;
    let detector = default_detector_layout(config.grid_n, region_size, 2, 5)?;
    let mut net = MetaNetwork::uniform(config, settings, detector, 0.0)?;
    net.readout = readout;
    net.validate()?;
    randomize_phases(&mut net, seed);
    Ok(net)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub history: Vec<EpochRecord>,
    /// Best-validation snapshot.
    pub network: MetaNetwork,
    pub best_epoch: usize,
    pub hyperparams: Hyperparams,
    pub wall_time: Duration,
}

impl TrainingRun {
    pub fn best_val_accuracy(&self) -> f64 {
        self.history
            .iter()
            .map(|r| r.val_accuracy)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `epoch,train_loss,val_accuracy` with one row per epoch.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_accuracy\n");
        for r in &self.history {
            s.push_str(&format!("{},{:.17e},{:.17e}\n", r.epoch, r.train_loss, r.val_accuracy));
        }
        s
    }
}

pub fn train(
    train_set: &[Sample],
    validation_set: &[Sample],
    hyperparams: &Hyperparams,
    init: MetaNetwork,
    encode: EncodeMode,
) -> Result<TrainingRun> {
    train_with_observer(train_set, validation_set, hyperparams, init, encode, |_| {})
}

/// Minibatch training with per-epoch callback. Stops after `max_epochs` or
/// once validation accuracy has not improved for `early_stop_patience`
/// epochs, and returns the best-validation network.
pub fn train_with_observer(
    train_set: &[Sample],
    validation_set: &[Sample],
    hyperparams: &Hyperparams,
    init: MetaNetwork,
    encode: EncodeMode,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainingRun> {
    hyperparams.validate()?;
    if train_set.is_empty() || validation_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    init.validate()?;
    let n = init.n();
    if let Some(s) = train_set.iter().chain(validation_set).find(|s| s.mask.n() != n) {
        return Err(Error::GridMismatch {
            expected: n,
            actual: s.mask.n(),
        });
    }

    let started = Instant::now();
    let optics = Optics::for_network(&init)?;
    let mut net = init;
    let mut state = OptimizerState::new(hyperparams.optimizer, net.num_parameters());
    let mut shuffle_rng = stream_rng(hyperparams.seed, 2);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, net.clone());
    let mut stale = 0;
    for epoch in 1..=hyperparams.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(hyperparams.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (batch_loss, grad) =
                batch_loss_and_gradient(&net, &optics, &batch, encode, hyperparams.loss_epsilon)?;
            loss_sum += batch_loss * batch.len() as f64;
            state.step(&mut net, &grad, hyperparams.learning_rate);
        }
        let classifier = NetworkClassifier::with_optics(&net, &optics, encode);
        let val_accuracy = evaluate(&classifier, validation_set)?.accuracy;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_accuracy,
        };
        log::info!(
            "epoch {epoch}: train loss {:.5}, validation accuracy {:.4}",
            record.train_loss,
            record.val_accuracy
        );
        observer(&record);
        history.push(record);
        if val_accuracy > best.0 {
            best = (val_accuracy, epoch, net.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyperparams.early_stop_patience {
                break;
            }
        }
    }
    Ok(TrainingRun {
        history,
        network: best.2,
        best_epoch: best.1,
        hyperparams: *hyperparams,
        wall_time: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PhysicsConfig;
    use crate::network::point_detector_layout;
    use crate::propagation::PropagationSettings;

    fn random_net(n: usize, layers: usize, settings: PropagationSettings, seed: u64) -> MetaNetwork {
        let config = PhysicsConfig {
            grid_n: n,
            num_layers: layers,
            ..Default::default()
        };
        let mut net = MetaNetwork::uniform(config, settings, point_detector_layout(n).unwrap(), 0.0).unwrap();
        randomize_phases(&mut net, seed);
        net
    }

    fn random_input(n: usize, seed: u64) -> ComplexField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        ComplexField::from_vec(n, data).unwrap().normalize().unwrap()
    }

    #[test]
    fn loss_examples() {
        let mut p = [0.0; 10];
        p[3] = 1.0;
        assert_eq!(loss(&p, 3, 1e-12), 0.0);
        assert!((loss(&[0.1; 10], 4, 1e-12) - 10f64.ln()).abs() < 1e-15);
        assert!((loss(&p, 0, 1e-12) - 1e12f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        for settings in [PropagationSettings::default(), PropagationSettings::direct()] {
            let net = random_net(8, 2, settings, 3);
            let optics = Optics::for_network(&net).unwrap();
            let u0 = random_input(8, 4);
            let label = 6;
            let grad = gradient(&net, &optics, &u0, label, 1e-12).unwrap();
            let h = 1e-6;
            let mut worst: f64 = 0.0;
            for layer in 0..2 {
                for cell in (0..64).step_by(9) {
                    let mut plus = net.clone();
                    plus.layers[layer].phases[cell] += h;
                    let mut minus = net.clone();
                    minus.layers[layer].phases[cell] -= h;
                    let fd = (sample_loss(&plus, &optics, &u0, label, 1e-12).unwrap()
                        - sample_loss(&minus, &optics, &u0, label, 1e-12).unwrap())
                        / (2.0 * h);
                    let g = grad[layer][cell];
                    worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-8));
                }
            }
            assert!(worst < 1e-5, "{:?}: {worst}", settings.method);
        }
    }

    #[test]
    fn zero_input_has_zero_gradient() {
        let net = random_net(8, 2, PropagationSettings::default(), 1);
        let optics = Optics::for_network(&net).unwrap();
        let g = gradient(&net, &optics, &ComplexField::zeros(8), 2, 1e-12).unwrap();
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn global_phase_direction_is_flat() {
        let net = random_net(8, 2, PropagationSettings::default(), 5);
        let optics = Optics::for_network(&net).unwrap();
        let u0 = random_input(8, 6);
        let g = gradient(&net, &optics, &u0, 1, 1e-12).unwrap();
        let all: f64 = g.iter().flatten().sum();
        assert!(all.abs() < 1e-9, "{all}");
        for layer in &g {
            assert!(layer.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn mismatched_backward_method_is_rejected() {
        let net = random_net(8, 1, PropagationSettings::default(), 1);
        let direct = Optics::new(&net.config, PropagationSettings::direct()).unwrap();
        let spectral = Optics::for_network(&net).unwrap();
        let u0 = random_input(8, 2);
        let trace = forward(&net, &spectral, &u0).unwrap();
        let adj = direct.after_layer(0, 1).adjoint_paired(&trace.output, trace.method);
        assert!(matches!(adj, Err(Error::MethodMismatch { .. })));
    }

    #[test]
    fn hyperparam_validation() {
        let hp = Hyperparams::default();
        hp.validate().unwrap();
        assert!(Hyperparams { learning_rate: 0.0, ..hp }.validate().is_err());
        assert!(Hyperparams { batch_size: 0, ..hp }.validate().is_err());
        assert!(Hyperparams { loss_epsilon: 1e-3, ..hp }.validate().is_err());
    }
}
