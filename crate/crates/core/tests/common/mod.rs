#![allow(dead_code)]

use bnnsim::bintensor::{channel_mask, BinaryTensor, LayerKind, LayerSpec, Pool, Shape, Word};
use bnnsim::memsim::{MemoryModel, RegionKind};
use bnnsim::xne::{tile_weights, JobDescriptor, JobStats, OutputMode, Xne};
use rand::Rng;

pub struct Case {
    pub layer: LayerSpec,
    pub input: BinaryTensor,
    pub weights: Vec<Word>,
}

pub fn random_tensor(rng: &mut impl Rng, shape: Shape) -> BinaryTensor {
    let words = (0..shape.words())
        .map(|i| rng.random::<Word>() & channel_mask(shape.channels, i % shape.words_per_pixel()))
        .collect();
    BinaryTensor::from_words(shape, words).unwrap()
}

/// Random layer with matching input and canonical weights. Channel counts straddle the
/// 128-bit word boundary.
pub fn random_case(rng: &mut impl Rng) -> Case {
    loop {
        let cin = match rng.random_range(0..4) {
            0 => rng.random_range(1..=16),
            1 => rng.random_range(100..=140),
            2 => 128,
            _ => rng.random_range(1..=300),
        };
        let cout = match rng.random_range(0..3) {
            0 => rng.random_range(1..=20),
            1 => rng.random_range(120..=140),
            _ => rng.random_range(1..=260),
        };
        let linear = rng.random_bool(0.2);
        let (h, w) = if linear {
            (rng.random_range(1..=3), rng.random_range(1..=3))
        } else {
            (rng.random_range(1..=7), rng.random_range(1..=7))
        };
        let (k, stride, padding) = if linear {
            (1, 1, 0)
        } else {
            (
                rng.random_range(1..=3),
                rng.random_range(1..=2),
                rng.random_range(0..=1),
            )
        };
        let pool = if !linear && rng.random_bool(0.4) {
            Pool::Max2x2
        } else {
            Pool::None
        };
        let shift = rng.random_range(0..=3);
        let kh = if linear { h } else { k };
        let kw = if linear { w } else { k };
        let max = (kh * kw * cin) as u32;
        let thresholds = (0..cout)
            .map(|_| (rng.random_range(0..=max) >> shift).min(255) as u8)
            .collect();
        let layer = LayerSpec {
            kind: if linear {
                LayerKind::Linear
            } else {
                LayerKind::Convolution
            },
            in_channels: cin,
            out_channels: cout,
            kernel_h: k,
            kernel_w: k,
            stride,
            padding,
            thresholds,
            shift,
            pool,
        };
        let shape = Shape::new(cin, h, w);
        let Ok(geo) = layer.geometry(shape) else {
            continue;
        };
        let input = random_tensor(rng, shape);
        let groups = geo.in_groups();
        let weights = (0..geo.weight_words())
            .map(|i| rng.random::<Word>() & channel_mask(cin, i % groups))
            .collect();
        return Case {
            layer,
            input,
            weights,
        };
    }
}

/// Straight-line reference over ±1 values: returns (binarized output, raw popcounts of the
/// unpooled output indexed `(y * conv_w + x) * out + o`).
pub fn naive_layer(case: &Case) -> (BinaryTensor, Vec<u32>, usize, usize) {
    let l = &case.layer;
    let s = case.input.shape();
    let linear = l.kind == LayerKind::Linear;
    let (kh, kw, st, pd) = if linear {
        (s.height, s.width, 1, 0)
    } else {
        (l.kernel_h, l.kernel_w, l.stride, l.padding)
    };
    let x = case.input.unpack();
    let at = |c: usize, y: usize, xx: usize| x[(y * s.width + xx) * s.channels + c] as i64;
    let groups = s.channels.div_ceil(128);
    let wbit = |o: usize, ky: usize, kx: usize, c: usize| {
        let word = case.weights[((o * kh + ky) * kw + kx) * groups + c / 128];
        if word >> (c % 128) & 1 == 1 {
            1i64
        } else {
            -1
        }
    };
    let oh = (s.height + 2 * pd - kh) / st + 1;
    let ow = (s.width + 2 * pd - kw) / st + 1;
    let mut raw = vec![0u32; oh * ow * l.out_channels];
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..l.out_channels {
                let mut dot = 0i64;
                let mut n = 0i64;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * st + ky) as i64 - pd as i64;
                        let ix = (ox * st + kx) as i64 - pd as i64;
                        if iy < 0 || ix < 0 || iy >= s.height as i64 || ix >= s.width as i64 {
                            continue;
                        }
                        for c in 0..s.channels {
                            dot += at(c, iy as usize, ix as usize) * wbit(o, ky, kx, c);
                            n += 1;
                        }
                    }
                }
                // Matches count = (n + dot) / 2.
                raw[(oy * ow + ox) * l.out_channels + o] = ((n + dot) / 2) as u32;
            }
        }
    }
    let fires = |y: usize, xx: usize, o: usize| {
        raw[(y * ow + xx) * l.out_channels + o] >= (l.thresholds[o] as u32) << l.shift
    };
    let (ph, pw) = match l.pool {
        Pool::None => (oh, ow),
        Pool::Max2x2 => (oh / 2, ow / 2),
    };
    let mut vals = Vec::with_capacity(ph * pw * l.out_channels);
    for y in 0..ph {
        for xx in 0..pw {
            for o in 0..l.out_channels {
                let b = match l.pool {
                    Pool::None => fires(y, xx, o),
                    Pool::Max2x2 => {
                        fires(2 * y, 2 * xx, o)
                            || fires(2 * y, 2 * xx + 1, o)
                            || fires(2 * y + 1, 2 * xx, o)
                            || fires(2 * y + 1, 2 * xx + 1, o)
                    }
                };
                vals.push(if b { 1 } else { -1 });
            }
        }
    }
    let out = BinaryTensor::pack(&vals, Shape::new(l.out_channels, ph, pw)).unwrap();
    (out, raw, oh, ow)
}

pub fn sram_base(mem: &MemoryModel) -> u32 {
    mem.map()
        .regions
        .iter()
        .filter(|r| r.kind == RegionKind::Sram)
        .max_by_key(|r| r.size)
        .unwrap()
        .base
}

/// Places the operands back to back in the large SRAM region and runs one job.
pub fn run_on_xne(
    xne: &mut Xne,
    mem: &mut MemoryModel,
    case: &Case,
    output: OutputMode,
) -> (Vec<u8>, JobStats) {
    let geo = case.layer.geometry(case.input.shape()).unwrap();
    let align = |x: usize| x.div_ceil(16) * 16;
    let base = sram_base(mem);
    let input_base = base;
    let weight_base = input_base + align(case.input.shape().bytes()) as u32;
    let tiled = tile_weights(&geo, &case.weights).unwrap();
    let threshold_base = weight_base + align(tiled.len() * 16) as u32;
    let output_base = threshold_base + align(geo.out_channels) as u32;
    mem.write_words(input_base, case.input.words()).unwrap();
    mem.write_words(weight_base, &tiled).unwrap();
    mem.write(threshold_base, &case.layer.thresholds).unwrap();
    let job = JobDescriptor {
        layer: case.layer.clone(),
        input_shape: case.input.shape(),
        input_base,
        weight_base,
        threshold_base,
        output_base,
        output,
    };
    let len = job.output_bytes(&geo);
    let stats = xne.run_job(&job, mem).unwrap();
    (mem.peek(output_base, len).unwrap(), stats)
}
