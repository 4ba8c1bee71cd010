//! Bit-packed binary tensors and an integer reference model of BNN layers.
//!
//! Values are in {-1, +1}; bit 1 encodes +1 and bit 0 encodes -1. Tensors are stored
//! channel-major: all channel bits of one spatial position are packed into
//! `ceil(C / 128)` words before moving to the next position (row-major over H, W).
//! Bits at channel indices >= C in the last word of a position are always zero.
//!
//! The reference model works in the popcount domain, like the accelerator datapath: for an
//! output channel the accumulator is `P = sum popcount(xnor(input window, weights))` over the
//! valid channel bits of every in-bounds kernel position, and the output bit is `P >= tau << shift`.
//! Kernel positions that fall into the padding border contribute nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Word = u128;
pub const WORD_BITS: usize = 128;
pub const WORD_BYTES: usize = 16;

/// Number of 128-bit words needed for `channels` bits.
pub fn words_for(channels: usize) -> usize {
    channels.div_ceil(WORD_BITS)
}

/// Mask of the valid bits in word `word_index` of a `channels`-wide channel vector.
pub fn channel_mask(channels: usize, word_index: usize) -> Word {
    let valid = channels
        .saturating_sub(word_index * WORD_BITS)
        .min(WORD_BITS);
    lane_mask(valid)
}

/// Mask with the lowest `lanes` bits set (`lanes <= 128`).
pub fn lane_mask(lanes: usize) -> Word {
    match lanes {
        0 => 0,
        WORD_BITS.. => Word::MAX,
        n => (1u128 << n) - 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> usize {
        self.channels * self.pixels()
    }

    pub fn words_per_pixel(&self) -> usize {
        words_for(self.channels)
    }

    pub fn words(&self) -> usize {
        self.words_per_pixel() * self.pixels()
    }

    pub fn bytes(&self) -> usize {
        self.words() * WORD_BYTES
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryTensor {
    shape: Shape,
    words: Vec<Word>,
}

impl BinaryTensor {
    pub fn zeros(shape: Shape) -> Self {
        BinaryTensor {
            shape,
            words: vec![0; shape.words()],
        }
    }

    /// Wraps packed words, checking the length and padding invariants.
    pub fn from_words(shape: Shape, words: Vec<Word>) -> Result<Self> {
        if words.len() != shape.words() {
            return Err(Error::shape(format!(
                "{} words supplied for a {} tensor, expected {}",
                words.len(),
                shape,
                shape.words()
            )));
        }
        let per_pixel = shape.words_per_pixel();
        let last_mask = channel_mask(shape.channels, per_pixel - 1);
        if let Some(p) = words
            .chunks(per_pixel)
            .position(|px| px[per_pixel - 1] & !last_mask != 0)
        {
            return Err(Error::shape(format!("padding bits set at pixel {p}")));
        }
        Ok(BinaryTensor { shape, words })
    }

    /// Packs `values` given in (y, x, c) order, i.e. the same channel-major order as the words.
    pub fn pack(values: &[i8], shape: Shape) -> Result<Self> {
        if values.len() != shape.values() {
            return Err(Error::shape(format!(
                "{} values supplied for a {} tensor",
                values.len(),
                shape
            )));
        }
        let per_pixel = shape.words_per_pixel();
        let mut words = vec![0; shape.words()];
        for (p, px) in values.chunks(shape.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                match v {
                    1 => words[p * per_pixel + c / WORD_BITS] |= 1 << (c % WORD_BITS),
                    -1 => {}
                    other => return Err(Error::shape(format!("value {other} is not +-1"))),
                }
            }
        }
        Ok(BinaryTensor { shape, words })
    }

    /// Inverse of [`BinaryTensor::pack`].
    pub fn unpack(&self) -> Vec<i8> {
        let mut out = Vec::with_capacity(self.shape.values());
        for px in self.words.chunks(self.shape.words_per_pixel()) {
            for c in 0..self.shape.channels {
                let bit = (px[c / WORD_BITS] >> (c % WORD_BITS)) & 1;
                out.push(if bit == 1 { 1 } else { -1 });
            }
        }
        out
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn into_words(self) -> Vec<Word> {
        self.words
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[Word] {
        let per_pixel = self.shape.words_per_pixel();
        let start = (y * self.shape.width + x) * per_pixel;
        &self.words[start..start + per_pixel]
    }

    pub fn bit(&self, c: usize, y: usize, x: usize) -> bool {
        (self.pixel(y, x)[c / WORD_BITS] >> (c % WORD_BITS)) & 1 == 1
    }

    pub fn set_bit(&mut self, c: usize, y: usize, x: usize, value: bool) {
        let per_pixel = self.shape.words_per_pixel();
        let idx = (y * self.shape.width + x) * per_pixel + c / WORD_BITS;
        let m = 1u128 << (c % WORD_BITS);
        if value {
            self.words[idx] |= m;
        } else {
            self.words[idx] &= !m;
        }
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        words_to_le_bytes(&self.words)
    }

    pub fn from_le_bytes(shape: Shape, bytes: &[u8]) -> Result<Self> {
        Self::from_words(shape, words_from_le_bytes(bytes)?)
    }
}

pub fn words_to_le_bytes(words: &[Word]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

pub fn words_from_le_bytes(bytes: &[u8]) -> Result<Vec<Word>> {
    if !bytes.len().is_multiple_of(WORD_BYTES) {
        return Err(Error::shape(format!(
            "{} bytes is not a whole number of 128-bit words",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(WORD_BYTES)
        .map(|c| Word::from_le_bytes(c.try_into().expect("16-byte chunk")))
        .collect())
}

/// Popcount of `xnor(a, b)` over the first `n` bits.
pub fn xnor_popcount(a: &[Word], b: &[Word], n: usize) -> Result<u32> {
    let words = words_for(n);
    if a.len() != words || b.len() != words {
        return Err(Error::shape(format!(
            "operands of {} and {} words for {n} bits (expected {words})",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| (!(x ^ y) & channel_mask(n, i)).count_ones())
        .sum())
}

/// The +-1 dot product of two packed vectors of `n` values: `2 * popcount(xnor) - n`.
pub fn binary_dot(a: &[Word], b: &[Word], n: usize) -> Result<i64> {
    let matches = xnor_popcount(a, b, n)? as i64;
    Ok(2 * matches - n as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Convolution,
    /// Fully connected over the whole input extent; the kernel fields are 1 and the
    /// effective kernel covers every input position.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    #[default]
    None,
    /// 2x2 max pooling over binarized outputs (a logical OR), stride 2, floor division.
    Max2x2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub thresholds: Vec<u8>,
    pub shift: u8,
    #[serde(default)]
    pub pool: Pool,
}

/// Loop geometry of a layer applied to a concrete input shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub input: Shape,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    /// Convolution output extent before pooling.
    pub conv_h: usize,
    pub conv_w: usize,
    pub pool: Pool,
    pub out_channels: usize,
}

impl Geometry {
    pub fn in_groups(&self) -> usize {
        words_for(self.input.channels)
    }

    pub fn kernel_positions(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    /// Weight words of one output channel (canonical layout).
    pub fn words_per_filter(&self) -> usize {
        self.kernel_positions() * self.in_groups()
    }

    pub fn weight_words(&self) -> usize {
        self.words_per_filter() * self.out_channels
    }

    pub fn output(&self) -> Shape {
        match self.pool {
            Pool::None => Shape::new(self.out_channels, self.conv_h, self.conv_w),
            Pool::Max2x2 => Shape::new(self.out_channels, self.conv_h / 2, self.conv_w / 2),
        }
    }

    /// Input coordinate touched by kernel offset `k` from output coordinate `o`, if in bounds.
    pub fn input_coord(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        (o * self.stride + k)
            .checked_sub(self.padding)
            .filter(|&i| i < extent)
    }

    /// Worst-case accumulator value: 128 per datapath step, one step per kernel position
    /// and input-channel group.
    pub fn max_accumulation(&self) -> u64 {
        (WORD_BITS * self.kernel_positions() * self.in_groups()) as u64
    }
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::shape("layer with zero channels"));
        }
        if self.thresholds.len() != self.out_channels {
            return Err(Error::shape(format!(
                "{} thresholds for {} output channels",
                self.thresholds.len(),
                self.out_channels
            )));
        }
        if self.shift > 8 {
            let threshold = self.thresholds.iter().copied().max().unwrap_or(0);
            return Err(Error::ThresholdOverflow {
                threshold,
                shift: self.shift,
            });
        }
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return Err(Error::shape("kernel and stride must be nonzero"));
        }
        if self.kind == LayerKind::Linear
            && (self.kernel_h != 1 || self.kernel_w != 1 || self.stride != 1 || self.padding != 0)
        {
            return Err(Error::shape(
                "linear layers take kernel 1x1, stride 1, padding 0",
            ));
        }
        Ok(())
    }

    /// Shifted threshold of output channel `o` in the popcount domain.
    pub fn shifted_threshold(&self, o: usize) -> u32 {
        (self.thresholds[o] as u32) << self.shift
    }

    pub fn geometry(&self, input: Shape) -> Result<Geometry> {
        self.validate()?;
        if input.channels != self.in_channels {
            return Err(Error::shape(format!(
                "layer expects {} input channels, got {}",
                self.in_channels, input.channels
            )));
        }
        let (kernel_h, kernel_w, stride, padding) = match self.kind {
            LayerKind::Linear => (input.height, input.width, 1, 0),
            LayerKind::Convolution => (self.kernel_h, self.kernel_w, self.stride, self.padding),
        };
        let span_h = input.height + 2 * padding;
        let span_w = input.width + 2 * padding;
        if span_h < kernel_h || span_w < kernel_w {
            return Err(Error::shape(format!(
                "kernel {kernel_h}x{kernel_w} larger than padded input {span_h}x{span_w}"
            )));
        }
        let geo = Geometry {
            input,
            kernel_h,
            kernel_w,
            stride,
            padding,
            conv_h: (span_h - kernel_h) / stride + 1,
            conv_w: (span_w - kernel_w) / stride + 1,
            pool: self.pool,
            out_channels: self.out_channels,
        };
        if geo.pool == Pool::Max2x2 && (geo.conv_h < 2 || geo.conv_w < 2) {
            return Err(Error::shape("2x2 pooling of an output smaller than 2x2"));
        }
        if geo.max_accumulation() >= 1 << 16 {
            return Err(Error::AccumulatorOverflow {
                max_accumulation: geo.max_accumulation(),
            });
        }
        Ok(geo)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input_shape: Shape,
    pub class_count: usize,
    /// Operation count used for throughput-derived inference rates; defaults to
    /// `2 * MACs` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ops_per_inference: Option<u64>,
    pub layers: Vec<LayerSpec>,
}

/// Storage accounting of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Footprint {
    pub weight_bits: u64,
    pub threshold_bits: u64,
    /// Network input plus every layer output (final scores as 16-bit values).
    pub activation_bits: u64,
    /// Bytes actually occupied once packed into 128-bit words.
    pub packed_bytes: u64,
}

impl Footprint {
    pub fn logical_bytes(&self) -> f64 {
        (self.weight_bits + self.threshold_bits + self.activation_bits) as f64 / 8.0
    }
}

impl NetworkSpec {
    /// Geometry of every layer, checking shape compatibility and the classifier layout.
    pub fn geometries(&self) -> Result<Vec<Geometry>> {
        if self.layers.is_empty() {
            return Err(Error::shape("network without layers"));
        }
        let mut shape = self.input_shape;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let geo = layer
                .geometry(shape)
                .map_err(|e| Error::shape(format!("layer {i}: {e}")))?;
            shape = geo.output();
            out.push(geo);
        }
        let last = self.layers.last().expect("non-empty");
        if last.kind != LayerKind::Linear || last.pool != Pool::None {
            return Err(Error::shape(
                "the classifier layer must be linear without pooling",
            ));
        }
        if last.out_channels != self.class_count {
            return Err(Error::shape(format!(
                "classifier has {} outputs for {} classes",
                last.out_channels, self.class_count
            )));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometries().map(|_| ())
    }

    pub fn footprint(&self) -> Result<Footprint> {
        let geos = self.geometries()?;
        let mut fp = Footprint {
            activation_bits: self.input_shape.values() as u64,
            packed_bytes: self.input_shape.bytes() as u64,
            ..Footprint::default()
        };
        let last = geos.len() - 1;
        for (i, geo) in geos.iter().enumerate() {
            fp.weight_bits +=
                (geo.kernel_positions() * geo.input.channels * geo.out_channels) as u64;
            fp.threshold_bits += 8 * geo.out_channels as u64;
            fp.packed_bytes += (geo.weight_words() * WORD_BYTES + geo.out_channels) as u64;
            let out = geo.output();
            if i == last {
                fp.activation_bits += 16 * out.channels as u64;
                fp.packed_bytes += 2 * out.channels as u64;
            } else {
                fp.activation_bits += out.values() as u64;
                fp.packed_bytes += out.bytes() as u64;
            }
        }
        Ok(fp)
    }

    /// Binary multiply-accumulates per inference (one XNOR + popcount contribution each).
    pub fn macs(&self) -> Result<u64> {
        Ok(self
            .geometries()?
            .iter()
            .map(|g| {
                (g.conv_h * g.conv_w * g.kernel_positions() * g.input.channels * g.out_channels)
                    as u64
            })
            .sum())
    }

    pub fn ops_per_inference(&self) -> Result<u64> {
        match self.ops_per_inference {
            Some(ops) => Ok(ops),
            None => Ok(2 * self.macs()?),
        }
    }
}

/// A network specification together with its weights.
///
/// Weights of each layer use the canonical layout: word
/// `((o * kernel_h + ky) * kernel_w + kx) * in_groups + g` holds input channels
/// `128 g .. 128 g + 127` of kernel position `(ky, kx)` for output channel `o`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub weights: Vec<Vec<Word>>,
}

impl Network {
    pub fn new(spec: NetworkSpec, weights: Vec<Vec<Word>>) -> Result<Self> {
        let geos = spec.geometries()?;
        if weights.len() != geos.len() {
            return Err(Error::shape(format!(
                "{} weight blocks for {} layers",
                weights.len(),
                geos.len()
            )));
        }
        for (i, (geo, w)) in geos.iter().zip(&weights).enumerate() {
            if w.len() != geo.weight_words() {
                return Err(Error::shape(format!(
                    "layer {i}: {} weight words, expected {}",
                    w.len(),
                    geo.weight_words()
                )));
            }
            let mask = channel_mask(geo.input.channels, geo.in_groups() - 1);
            if w.chunks(geo.in_groups())
                .any(|ch| ch[geo.in_groups() - 1] & !mask != 0)
            {
                return Err(Error::shape(format!("layer {i}: weight padding bits set")));
            }
        }
        Ok(Network { spec, weights })
    }

    pub fn geometries(&self) -> Vec<Geometry> {
        self.spec.geometries().expect("validated at construction")
    }
}

/// Accumulated popcounts of one layer before binarization, indexed
/// `(y * conv_w + x) * out_channels + o` over the unpooled output.
pub fn oracle_accumulate(
    input: &BinaryTensor,
    layer: &LayerSpec,
    weights: &[Word],
) -> Result<(Geometry, Vec<u32>)> {
    let geo = layer.geometry(input.shape())?;
    if weights.len() != geo.weight_words() {
        return Err(Error::shape(format!(
            "{} weight words, expected {}",
            weights.len(),
            geo.weight_words()
        )));
    }
    let groups = geo.in_groups();
    let channels = geo.input.channels;
    let mut acc = vec![0u32; geo.conv_h * geo.conv_w * geo.out_channels];
    for oy in 0..geo.conv_h {
        for ox in 0..geo.conv_w {
            let base = (oy * geo.conv_w + ox) * geo.out_channels;
            for ky in 0..geo.kernel_h {
                let Some(iy) = geo.input_coord(oy, ky, geo.input.height) else {
                    continue;
                };
                for kx in 0..geo.kernel_w {
                    let Some(ix) = geo.input_coord(ox, kx, geo.input.width) else {
                        continue;
                    };
                    let px = input.pixel(iy, ix);
                    for (o, slot) in acc[base..base + geo.out_channels].iter_mut().enumerate() {
                        let w0 = ((o * geo.kernel_h + ky) * geo.kernel_w + kx) * groups;
                        *slot += xnor_popcount(px, &weights[w0..w0 + groups], channels)?;
                    }
                }
            }
        }
    }
    Ok((geo, acc))
}

/// Binarizes (and pools) accumulated popcounts: bit = `P >= thresholds[o] << shift`.
pub fn binarize(geo: &Geometry, layer: &LayerSpec, acc: &[u32]) -> BinaryTensor {
    let out_shape = geo.output();
    let mut out = BinaryTensor::zeros(out_shape);
    let fires = |y: usize, x: usize, o: usize| {
        acc[(y * geo.conv_w + x) * geo.out_channels + o] >= layer.shifted_threshold(o)
    };
    for y in 0..out_shape.height {
        for x in 0..out_shape.width {
            for o in 0..geo.out_channels {
                let bit = match geo.pool {
                    Pool::None => fires(y, x, o),
                    Pool::Max2x2 => {
                        (0..2).any(|dy| (0..2).any(|dx| fires(2 * y + dy, 2 * x + dx, o)))
                    }
                };
                if bit {
                    out.set_bit(o, y, x, true);
                }
            }
        }
    }
    out
}

/// Reference execution of one binarized layer.
pub fn oracle_layer(
    input: &BinaryTensor,
    layer: &LayerSpec,
    weights: &[Word],
) -> Result<BinaryTensor> {
    let (geo, acc) = oracle_accumulate(input, layer, weights)?;
    Ok(binarize(&geo, layer, &acc))
}

/// Reference inference: binarized hidden layers, raw popcount sums from the classifier.
pub fn oracle_network(net: &Network, input: &BinaryTensor) -> Result<Vec<u32>> {
    if input.shape() != net.spec.input_shape {
        return Err(Error::shape(format!(
            "input {} does not match network input {}",
            input.shape(),
            net.spec.input_shape
        )));
    }
    let (last, hidden) = net.spec.layers.split_last().expect("validated");
    let mut act = input.clone();
    for (layer, w) in hidden.iter().zip(&net.weights) {
        act = oracle_layer(&act, layer, w)?;
    }
    let (_, scores) = oracle_accumulate(&act, last, net.weights.last().expect("validated"))?;
    Ok(scores)
}

/// Index of the largest score; ties resolve to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
