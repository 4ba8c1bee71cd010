//! The bundled desk-scale benchmark: a synthetic 10-class set of noisy binary patterns and a
//! small two-layer BNN that classifies it.
//!
//! Everything is derived from [`TOY_SEED`], so the files under `data/` can be regenerated
//! byte for byte. The network has no training loop: the convolution uses random binary
//! filters with per-channel thresholds set so that pooled features fire about half the time,
//! and the classifier stores the sign of each class's mean feature vector (a Hamming
//! nearest-centroid readout, which is exactly what an XNOR/popcount layer computes).
//!
//! Test samples are kept only if the fault-free classifier separates its best class from the
//! runner-up by at least [`TOY_MARGIN`] popcounts, so that a handful of bit flips does not
//! change a decision. Samples are otherwise unconstrained and may be misclassified.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::bintensor::{
    argmax, oracle_accumulate, oracle_layer, oracle_network, BinaryTensor, LayerKind, LayerSpec,
    Network, NetworkSpec, Pool, Shape, Word,
};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::rng::{derive_seed, rng_from_seed};

pub const TOY_SEED: u64 = 0x5EED_B17E;
pub const TOY_CLASSES: usize = 10;
pub const TOY_INPUT: Shape = Shape::new(16, 4, 4);
pub const TOY_HIDDEN: usize = 32;
pub const TOY_TEST_PER_CLASS: usize = 100;
pub const TOY_MARGIN: u32 = 8;

const TRAIN_PER_CLASS: usize = 200;
const PATTERN_NOISE: f64 = 0.3;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> BinaryTensor {
    let values: Vec<i8> = (0..shape.values())
        .map(|_| if rng.random::<bool>() { 1 } else { -1 })
        .collect();
    BinaryTensor::pack(&values, shape).expect("shape-consistent values")
}

fn noisy_copy(rng: &mut ChaCha8Rng, proto: &BinaryTensor, p: f64) -> BinaryTensor {
    let values: Vec<i8> = proto
        .unpack()
        .into_iter()
        .map(|v| if rng.random_bool(p) { -v } else { v })
        .collect();
    BinaryTensor::pack(&values, proto.shape()).expect("same shape")
}

fn conv_layer(thresholds: Vec<u8>) -> LayerSpec {
    LayerSpec {
        kind: LayerKind::Convolution,
        in_channels: TOY_INPUT.channels,
        out_channels: TOY_HIDDEN,
        kernel_h: 3,
        kernel_w: 3,
        stride: 1,
        padding: 1,
        thresholds,
        shift: 0,
        pool: Pool::Max2x2,
    }
}

fn classifier_layer() -> LayerSpec {
    LayerSpec {
        kind: LayerKind::Linear,
        in_channels: TOY_HIDDEN,
        out_channels: TOY_CLASSES,
        kernel_h: 1,
        kernel_w: 1,
        stride: 1,
        padding: 0,
        thresholds: vec![0; TOY_CLASSES],
        shift: 0,
        pool: Pool::None,
    }
}

/// Deterministically builds the toy network and its balanced test set.
pub fn generate() -> Result<(Network, Dataset)> {
    let mut rng = rng_from_seed(derive_seed(TOY_SEED, &[0]));
    let protos: Vec<BinaryTensor> = (0..TOY_CLASSES)
        .map(|_| random_tensor(&mut rng, TOY_INPUT))
        .collect();

    // Random filters: one word per (output channel, kernel position), 16 live bits.
    let live = (1 as Word)
        .wrapping_shl(TOY_INPUT.channels as u32)
        .wrapping_sub(1);
    let conv_w: Vec<Word> = (0..TOY_HIDDEN * 9)
        .map(|_| rng.random::<Word>() & live)
        .collect();

    let mut train_rng = rng_from_seed(derive_seed(TOY_SEED, &[1]));
    let train: Vec<(usize, BinaryTensor)> = (0..TRAIN_PER_CLASS * TOY_CLASSES)
        .map(|i| {
            let c = i % TOY_CLASSES;
            (c, noisy_copy(&mut train_rng, &protos[c], PATTERN_NOISE))
        })
        .collect();

    // A pooled bit is the OR of four; each unpooled bit should fire with 1 - 0.5^(1/4).
    let quantile = 0.5f64.powf(0.25);
    let mut per_channel: Vec<Vec<u32>> = vec![Vec::new(); TOY_HIDDEN];
    for (_, x) in &train {
        let (_, acc) = oracle_accumulate(x, &conv_layer(vec![0; TOY_HIDDEN]), &conv_w)?;
        for (i, &a) in acc.iter().enumerate() {
            per_channel[i % TOY_HIDDEN].push(a);
        }
    }
    let thresholds: Vec<u8> = per_channel
        .iter_mut()
        .map(|v| {
            v.sort_unstable();
            let idx = ((v.len() as f64 * quantile) as usize).min(v.len() - 1);
            v[idx].min(u8::MAX as u32) as u8
        })
        .collect();
    let conv = conv_layer(thresholds);

    // Class centroids of the pooled features.
    let feature_shape = Shape::new(TOY_HIDDEN, TOY_INPUT.height / 2, TOY_INPUT.width / 2);
    let mut counts = vec![vec![0u32; feature_shape.values()]; TOY_CLASSES];
    for (c, x) in &train {
        let f = oracle_layer(x, &conv, &conv_w)?;
        for (slot, v) in counts[*c].iter_mut().zip(f.unpack()) {
            *slot += (v > 0) as u32;
        }
    }
    let mut fc_w = Vec::with_capacity(TOY_CLASSES * feature_shape.pixels());
    for class_counts in &counts {
        for px in class_counts.chunks(TOY_HIDDEN) {
            let mut w: Word = 0;
            for (ch, &n) in px.iter().enumerate() {
                if 2 * n as usize > TRAIN_PER_CLASS {
                    w |= 1 << ch;
                }
            }
            fc_w.push(w);
        }
    }

    let spec = NetworkSpec {
        name: "toy".into(),
        input_shape: TOY_INPUT,
        class_count: TOY_CLASSES,
        ops_per_inference: None,
        layers: vec![conv, classifier_layer()],
    };
    let net = Network::new(spec, vec![conv_w, fc_w])?;

    let mut test_rng = rng_from_seed(derive_seed(TOY_SEED, &[2]));
    let mut kept = [0usize; TOY_CLASSES];
    let mut inputs = Vec::with_capacity(TOY_TEST_PER_CLASS * TOY_CLASSES);
    let mut labels = Vec::with_capacity(TOY_TEST_PER_CLASS * TOY_CLASSES);
    let mut c = 0;
    while inputs.len() < TOY_TEST_PER_CLASS * TOY_CLASSES {
        let x = noisy_copy(&mut test_rng, &protos[c], PATTERN_NOISE);
        if kept[c] < TOY_TEST_PER_CLASS && margin(&oracle_network(&net, &x)?) >= TOY_MARGIN {
            kept[c] += 1;
            inputs.push(x);
            labels.push(c as u8);
        }
        c = (c + 1) % TOY_CLASSES;
    }
    let data = Dataset::new("toy-test", TOY_CLASSES, inputs, labels)?;
    Ok((net, data))
}

/// Gap between the best and second-best score.
pub fn margin(scores: &[u32]) -> u32 {
    let best = argmax(scores);
    let runner_up = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &s)| s)
        .max()
        .unwrap_or(0);
    scores[best] - runner_up
}
