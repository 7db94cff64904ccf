use metann::dataset::{object_field, BinaryMask, EncodeMode, Sample};
use metann::network::{Optics, Readout};
use metann::propagation::PropagationSettings;
use metann::training::{batch_loss_and_gradient, initial_network, loss_and_gradient, train, Hyperparams};
use metann::{MetaNetwork, PhysicsConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(seed: u64, label: u8) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits = (0..28 * 28)
        .map(|i| {
            let (r, c) = (i / 28, i % 28);
            (6..22).contains(&r) && (8..20).contains(&c) && rng.gen_bool(0.6)
        })
        .collect();
    Sample { mask: BinaryMask::new(28, bits).unwrap(), label }
}

fn net(seed: u64) -> MetaNetwork {
    initial_network(PhysicsConfig::default(), PropagationSettings::default(), 4, Readout::Energy, seed).unwrap()
}

#[test]
fn overfits_a_single_sample() {
    let s = vec![sample(1, 4)];
    let hp = Hyperparams {
        learning_rate: 0.05,
        batch_size: 1,
        max_epochs: 200,
        early_stop_patience: 200,
        ..Default::default()
    };
    let run = train(&s, &s, &hp, net(3), EncodeMode::Blocking).unwrap();
    assert_eq!(run.history.len(), 200);
    let first = run.history[0].train_loss;
    let last = run.history.last().unwrap().train_loss;
    assert!(last < 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn batch_gradient_is_mean_of_sample_gradients() {
    let n = net(5);
    let optics = Optics::for_network(&n).unwrap();
    let samples: Vec<Sample> = (0..6).map(|i| sample(10 + i, i as u8)).collect();
    let refs: Vec<&Sample> = samples.iter().collect();
    let (loss, grad) = batch_loss_and_gradient(&n, &optics, &refs, EncodeMode::Blocking, 1e-12).unwrap();
    let mut mean_loss = 0.0;
    let mut mean = vec![vec![0.0; 28 * 28]; n.layers.len()];
    for s in &samples {
        let u0 = object_field(&s.mask, EncodeMode::Blocking).unwrap();
        let (l, g) = loss_and_gradient(&n, &optics, &u0, s.label as usize, 1e-12).unwrap();
        mean_loss += l / samples.len() as f64;
        for (m, layer) in mean.iter_mut().zip(&g) {
            for (a, v) in m.iter_mut().zip(layer) {
                *a += v / samples.len() as f64;
            }
        }
    }
    assert!((loss - mean_loss).abs() < 1e-12);
    for (a, b) in grad.iter().flatten().zip(mean.iter().flatten()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn single_layer_phase_offset_leaves_loss_unchanged() {
    let n = net(8);
    let optics = Optics::for_network(&n).unwrap();
    let s = sample(2, 7);
    let u0 = object_field(&s.mask, EncodeMode::Blocking).unwrap();
    let (loss, grad) = loss_and_gradient(&n, &optics, &u0, 7, 1e-12).unwrap();
    for l in 0..n.layers.len() {
        let directional: f64 = grad[l].iter().sum();
        assert!(directional.abs() < 1e-9, "layer {l}: {directional}");
        let mut shifted = n.clone();
        for p in &mut shifted.layers[l].phases {
            *p += 1.234;
        }
        let (l2, _) = loss_and_gradient(&shifted, &optics, &u0, 7, 1e-12).unwrap();
        assert!((loss - l2).abs() < 1e-9);
    }
}

#[test]
fn training_is_reproducible() {
    let samples: Vec<Sample> = (0..40).map(|i| sample(100 + i, (i % 10) as u8)).collect();
    let hp = Hyperparams { max_epochs: 2, batch_size: 8, ..Default::default() };
    let a = train(&samples[..30], &samples[30..], &hp, net(1), EncodeMode::Blocking).unwrap();
    let b = train(&samples[..30], &samples[30..], &hp, net(1), EncodeMode::Blocking).unwrap();
    assert_eq!(a.history_csv(), b.history_csv());
    assert_eq!(a.network.to_json().unwrap(), b.network.to_json().unwrap());
    let c = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| train(&samples[..30], &samples[30..], &hp, net(1), EncodeMode::Blocking).unwrap());
    assert_eq!(a.network.to_json().unwrap(), c.network.to_json().unwrap());
}
