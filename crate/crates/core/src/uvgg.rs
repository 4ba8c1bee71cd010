//! A uVGG-shaped CIFAR-10 network used for footprint, allocation and timing studies.
//!
//! Seven binarized layers on a 128-channel 16x16 input map: five 3x3 convolutions with
//! three 2x2 poolings, then two fully connected layers. Its packed parameters and
//! activations take about 312 kB, which fits the interleaved SRAM. Weights are not
//! shipped; [`random_network`] fills the topology with random bits.

use rand::Rng;

use crate::bintensor::{
    channel_mask, LayerKind, LayerSpec, Network, NetworkSpec, Pool, Shape, Word,
};
use crate::error::Result;
use crate::rng::rng_from_seed;

/// Operation count quoted for the reference network (two ops per binary MAC, including the
/// input feature extraction that runs off-engine).
pub const UVGG_OPS_PER_INFERENCE: u64 = 260_000_000;

fn layer(
    kind: LayerKind,
    cin: usize,
    cout: usize,
    k: usize,
    padding: usize,
    pool: Pool,
    positions: usize,
) -> LayerSpec {
    // Threshold at half the popcount range, expressed as a u8 with the smallest shift.
    let half = (positions * cin / 2) as u32;
    let shift = (0..=8u8)
        .find(|&s| half >> s <= u8::MAX as u32)
        .unwrap_or(8);
    LayerSpec {
        kind,
        in_channels: cin,
        out_channels: cout,
        kernel_h: k,
        kernel_w: k,
        stride: 1,
        padding,
        thresholds: vec![(half >> shift) as u8; cout],
        shift,
        pool,
    }
}

pub fn spec() -> NetworkSpec {
    use LayerKind::{Convolution as Conv, Linear};
    NetworkSpec {
        name: "uvgg".into(),
        input_shape: Shape::new(128, 16, 16),
        class_count: 10,
        ops_per_inference: Some(UVGG_OPS_PER_INFERENCE),
        layers: vec![
            layer(Conv, 128, 128, 3, 1, Pool::Max2x2, 9),
            layer(Conv, 128, 256, 3, 1, Pool::None, 9),
            layer(Conv, 256, 256, 3, 1, Pool::Max2x2, 9),
            layer(Conv, 256, 256, 3, 1, Pool::None, 9),
            layer(Conv, 256, 256, 3, 1, Pool::Max2x2, 9),
            layer(Linear, 256, 256, 1, 0, Pool::None, 4),
            layer(Linear, 256, 10, 1, 0, Pool::None, 1),
        ],
    }
}

/// The uVGG topology with uniformly random weights.
pub fn random_network(seed: u64) -> Result<Network> {
    let spec = spec();
    let mut rng = rng_from_seed(seed);
    let weights = spec
        .geometries()?
        .iter()
        .map(|geo| {
            let groups = geo.in_groups();
            (0..geo.weight_words())
                .map(|i| rng.random::<Word>() & channel_mask(geo.input.channels, i % groups))
                .collect()
        })
        .collect();
    Network::new(spec, weights)
}
