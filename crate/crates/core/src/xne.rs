//! Functional and cycle model of the XNOR neural engine.
//!
//! The datapath holds 128 stationary input bits, streams one 128-bit weight word per cycle
//! through 128 XNOR gates and a popcount tree, and adds the result into one of 128 16-bit
//! accumulators. A microcoded loop nest drives it over a whole layer:
//!
//! ```text
//! for each output pixel (pooled pixel when pooling):
//!   for each output-channel group of up to 128 channels:
//!     for each pre-pool pixel covered by the output pixel:
//!       clear accumulators
//!       for each in-bounds kernel position:
//!         for each input-channel group:
//!           load input buffer; stream one weight word per output channel
//!       stream thresholds, binarize (P >= tau << shift), OR into the output word
//!     write the output word
//! ```
//!
//! Partial sums never leave the accumulator bank; the only writes are finished outputs.
//! All feature, weight and threshold traffic goes through [`MemoryModel`], so faults
//! configured there reach the datapath exactly as the hardware would see them.

use crate::bintensor::{
    channel_mask, lane_mask, Geometry, LayerSpec, Shape, Word, WORD_BITS, WORD_BYTES,
};
use crate::error::{Error, Result};
use crate::memsim::{MemoryMap, MemoryModel};

pub const LANES: usize = 128;
pub const IDEAL_OPS_PER_CYCLE: f64 = 2.0 * LANES as f64;

/// Fixed-cost part of the cycle model. Each streamed weight word costs one cycle on top.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct XneTiming {
    /// Register programming, core wakeup and loop setup, once per job.
    pub job_overhead: u64,
    /// Input buffer load and reduction-tree drain, once per datapath step.
    pub step_overhead: u64,
    /// Binarization and writeback, once per output group; threshold streaming is added on
    /// top at 16 bytes per cycle.
    pub group_overhead: u64,
}

impl Default for XneTiming {
    /// Overheads calibrated so the uVGG-shaped reference network costs about 1.17 M cycles
    /// per inference, i.e. 15.4 inferences/s at 18 MHz.
    fn default() -> Self {
        XneTiming {
            job_overhead: 64,
            step_overhead: 71,
            group_overhead: 8,
        }
    }
}

/// Datapath throughput: 256 ideal binary ops per cycle scaled by a utilization factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Throughput {
    pub utilization: f64,
}

/// Peak throughput reference point: 129 Gop/s at 565.8 MHz.
pub const REFERENCE_GOPS: f64 = 129.0;
pub const REFERENCE_MHZ: f64 = 565.8;

impl Throughput {
    pub fn ideal() -> Self {
        Throughput { utilization: 1.0 }
    }

    /// Utilization matching the reference point, about 0.89.
    pub fn calibrated() -> Self {
        Throughput {
            utilization: REFERENCE_GOPS * 1e9 / (IDEAL_OPS_PER_CYCLE * REFERENCE_MHZ * 1e6),
        }
    }

    pub fn effective_ops_per_cycle(&self) -> f64 {
        IDEAL_OPS_PER_CYCLE * self.utilization
    }

    pub fn gops_at(&self, f_mhz: f64) -> f64 {
        self.effective_ops_per_cycle() * f_mhz * 1e6 / 1e9
    }
}

impl Default for Throughput {
    fn default() -> Self {
        Self::calibrated()
    }
}

/// 128 accumulators of 16 bits, wrapping modulo 2^16.
#[derive(Debug, Clone)]
pub struct AccumulatorBank {
    values: [u16; LANES],
}

impl Default for AccumulatorBank {
    fn default() -> Self {
        AccumulatorBank { values: [0; LANES] }
    }
}

impl AccumulatorBank {
    pub fn clear(&mut self) {
        self.values = [0; LANES];
    }

    pub fn add(&mut self, lane: usize, popcount: u32) {
        self.values[lane] = self.values[lane].wrapping_add(popcount as u16);
    }

    pub fn values(&self) -> &[u16; LANES] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    /// Thresholded, packed output bits.
    Binarized,
    /// Raw 16-bit accumulators, little-endian, `(pixel * out_channels + o) * 2`.
    Raw,
}

/// One layer job as programmed into the engine's register file.
#[derive(Debug, Clone, PartialEq)]
pub struct JobDescriptor {
    pub layer: LayerSpec,
    pub input_shape: Shape,
    pub input_base: u32,
    pub weight_base: u32,
    pub threshold_base: u32,
    pub output_base: u32,
    pub output: OutputMode,
}

impl JobDescriptor {
    pub fn geometry(&self) -> Result<Geometry> {
        self.layer.geometry(self.input_shape)
    }

    pub fn input_bytes(&self) -> usize {
        self.input_shape.bytes()
    }

    pub fn weight_bytes(&self, geo: &Geometry) -> usize {
        geo.weight_words() * WORD_BYTES
    }

    pub fn output_bytes(&self, geo: &Geometry) -> usize {
        match self.output {
            OutputMode::Binarized => geo.output().bytes(),
            OutputMode::Raw => geo.conv_h * geo.conv_w * geo.out_channels * 2,
        }
    }

    /// Checks the overflow guard, output mode and that every buffer is mapped, with the
    /// output disjoint from the operands.
    pub fn validate(&self, map: &MemoryMap) -> Result<Geometry> {
        let geo = self.geometry()?;
        if self.output == OutputMode::Raw && geo.pool != crate::bintensor::Pool::None {
            return Err(Error::shape("raw output cannot be pooled"));
        }
        let buffers = [
            ("input", self.input_base, self.input_bytes()),
            ("weights", self.weight_base, self.weight_bytes(&geo)),
            ("thresholds", self.threshold_base, geo.out_channels),
            ("output", self.output_base, self.output_bytes(&geo)),
        ];
        for (name, base, len) in buffers {
            if !map.is_mapped(base, len) {
                return Err(Error::Config(format!(
                    "{name} buffer {base:#010x}+{len} is not mapped"
                )));
            }
        }
        let (_, out_base, out_len) = buffers[3];
        for (name, base, len) in &buffers[..3] {
            let disjoint = out_base as u64 + out_len as u64 <= *base as u64
                || *base as u64 + *len as u64 <= out_base as u64;
            if !disjoint {
                return Err(Error::Config(format!("output buffer overlaps {name}")));
            }
        }
        Ok(geo)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JobStats {
    pub cycles: u64,
    pub weight_words_read: u64,
    pub feature_words_read: u64,
    pub threshold_bytes_read: u64,
    pub output_words_written: u64,
    pub output_bytes_written: u64,
}

impl std::ops::AddAssign for JobStats {
    fn add_assign(&mut self, o: Self) {
        self.cycles += o.cycles;
        self.weight_words_read += o.weight_words_read;
        self.feature_words_read += o.feature_words_read;
        self.threshold_bytes_read += o.threshold_bytes_read;
        self.output_words_written += o.output_words_written;
        self.output_bytes_written += o.output_bytes_written;
    }
}

fn out_groups(out_channels: usize) -> usize {
    out_channels.div_ceil(LANES)
}

fn group_lanes(out_channels: usize, group: usize) -> usize {
    (out_channels - group * LANES).min(LANES)
}

/// Word offset of the weights for (output group, kernel position, input group) in the
/// streaming layout: groups are stored one after another; inside a group, each
/// (kernel position, input group) step holds one word per output channel of the group.
pub fn weight_step_offset(geo: &Geometry, group: usize, ky: usize, kx: usize, ig: usize) -> usize {
    let steps = geo.kernel_positions() * geo.in_groups();
    let step = (ky * geo.kernel_w + kx) * geo.in_groups() + ig;
    group * LANES * steps + step * group_lanes(geo.out_channels, group)
}

/// Reorders canonical weights (output channel major) into the streaming layout.
pub fn tile_weights(geo: &Geometry, canonical: &[Word]) -> Result<Vec<Word>> {
    if canonical.len() != geo.weight_words() {
        return Err(Error::shape(format!(
            "{} weight words, expected {}",
            canonical.len(),
            geo.weight_words()
        )));
    }
    let groups = geo.in_groups();
    let mut tiled = vec![0; canonical.len()];
    for og in 0..out_groups(geo.out_channels) {
        for ky in 0..geo.kernel_h {
            for kx in 0..geo.kernel_w {
                for ig in 0..groups {
                    let dst = weight_step_offset(geo, og, ky, kx, ig);
                    for lane in 0..group_lanes(geo.out_channels, og) {
                        let o = og * LANES + lane;
                        tiled[dst + lane] =
                            canonical[((o * geo.kernel_h + ky) * geo.kernel_w + kx) * groups + ig];
                    }
                }
            }
        }
    }
    Ok(tiled)
}

#[derive(Debug, Clone)]
pub struct Xne {
    timing: XneTiming,
    bank: AccumulatorBank,
    weight_buf: Vec<Word>,
    stats: JobStats,
}

impl Default for Xne {
    fn default() -> Self {
        Xne::new(XneTiming::default())
    }
}

impl Xne {
    pub fn new(timing: XneTiming) -> Self {
        Xne {
            timing,
            bank: AccumulatorBank::default(),
            weight_buf: vec![0; LANES],
            stats: JobStats::default(),
        }
    }

    pub fn timing(&self) -> XneTiming {
        self.timing
    }

    pub fn accumulators(&self) -> &AccumulatorBank {
        &self.bank
    }

    /// Loads 128 stationary input bits.
    pub fn load_input_buffer(&mut self, mem: &mut MemoryModel, addr: u32) -> Result<Word> {
        let w = mem.read_word(addr)?;
        self.stats.feature_words_read += 1;
        Ok(w)
    }

    /// One full 128x128 binary matrix-vector product: streams 128 weight words and returns
    /// `popcount(xnor(input, weight_o))` per lane.
    pub fn matvec_128(
        &mut self,
        input: Word,
        mem: &mut MemoryModel,
        weight_base: u32,
    ) -> Result<[u32; LANES]> {
        let mut out = [0; LANES];
        self.matvec(input, Word::MAX, mem, weight_base, LANES, |lane, p| {
            out[lane] = p
        })?;
        Ok(out)
    }

    /// Streams `lanes` weight words and hands each lane's masked popcount to `sink`.
    fn matvec(
        &mut self,
        input: Word,
        in_mask: Word,
        mem: &mut MemoryModel,
        weight_base: u32,
        lanes: usize,
        mut sink: impl FnMut(usize, u32),
    ) -> Result<()> {
        let buf = &mut self.weight_buf[..lanes];
        mem.read_words(weight_base, buf)?;
        for (lane, w) in buf.iter().enumerate() {
            sink(lane, (!(input ^ w) & in_mask).count_ones());
        }
        self.stats.weight_words_read += lanes as u64;
        self.stats.cycles += lanes as u64;
        Ok(())
    }

    /// Accumulates one pre-pool output pixel for one output group.
    fn accumulate_pixel(
        &mut self,
        job: &JobDescriptor,
        geo: &Geometry,
        mem: &mut MemoryModel,
        group: usize,
        cy: usize,
        cx: usize,
    ) -> Result<()> {
        let lanes = group_lanes(geo.out_channels, group);
        let in_groups = geo.in_groups();
        self.bank.clear();
        for ky in 0..geo.kernel_h {
            let Some(iy) = geo.input_coord(cy, ky, geo.input.height) else {
                continue;
            };
            for kx in 0..geo.kernel_w {
                let Some(ix) = geo.input_coord(cx, kx, geo.input.width) else {
                    continue;
                };
                for ig in 0..in_groups {
                    let word = (iy * geo.input.width + ix) * in_groups + ig;
                    let addr = job.input_base + (word * WORD_BYTES) as u32;
                    let in_mask = channel_mask(geo.input.channels, ig);
                    let input = self.load_input_buffer(mem, addr)? & in_mask;
                    let w_addr = job.weight_base
                        + (weight_step_offset(geo, group, ky, kx, ig) * WORD_BYTES) as u32;
                    self.stats.cycles += self.timing.step_overhead;
                    let mut bank = std::mem::take(&mut self.bank);
                    let r = self.matvec(input, in_mask, mem, w_addr, lanes, |lane, p| {
                        bank.add(lane, p)
                    });
                    self.bank = bank;
                    r?;
                }
            }
        }
        Ok(())
    }

    /// Streams the group's thresholds and binarizes the accumulators into a lane mask.
    fn binarize(
        &mut self,
        job: &JobDescriptor,
        mem: &mut MemoryModel,
        group: usize,
        lanes: usize,
    ) -> Result<Word> {
        let mut thresholds = [0u8; LANES];
        let addr = job.threshold_base + (group * LANES) as u32;
        mem.read_into(addr, &mut thresholds[..lanes])?;
        self.stats.threshold_bytes_read += lanes as u64;
        self.stats.cycles += lanes.div_ceil(WORD_BYTES) as u64;
        let shift = job.layer.shift;
        let bits = (0..lanes)
            .filter(|&l| self.bank.values[l] as u32 >= (thresholds[l] as u32) << shift)
            .fold(0 as Word, |acc, l| acc | 1 << l);
        Ok(bits)
    }

    /// Executes a whole layer job.
    pub fn run_job(&mut self, job: &JobDescriptor, mem: &mut MemoryModel) -> Result<JobStats> {
        let geo = job.validate(mem.map())?;
        self.stats = JobStats {
            cycles: self.timing.job_overhead,
            ..JobStats::default()
        };
        let groups = out_groups(geo.out_channels);
        match job.output {
            OutputMode::Binarized => {
                let out = geo.output();
                let (pool_h, pool_w) = match geo.pool {
                    crate::bintensor::Pool::None => (1, 1),
                    crate::bintensor::Pool::Max2x2 => (2, 2),
                };
                for oy in 0..out.height {
                    for ox in 0..out.width {
                        for og in 0..groups {
                            let lanes = group_lanes(geo.out_channels, og);
                            let mut word: Word = 0;
                            for dy in 0..pool_h {
                                for dx in 0..pool_w {
                                    let (cy, cx) = (oy * pool_h + dy, ox * pool_w + dx);
                                    self.accumulate_pixel(job, &geo, mem, og, cy, cx)?;
                                    word |= self.binarize(job, mem, og, lanes)?;
                                    self.stats.cycles += self.timing.group_overhead;
                                }
                            }
                            debug_assert_eq!(word & !lane_mask(lanes), 0);
                            let idx = (oy * out.width + ox) * out.words_per_pixel() + og;
                            mem.write(
                                job.output_base + (idx * WORD_BYTES) as u32,
                                &word.to_le_bytes(),
                            )?;
                            self.stats.output_words_written += 1;
                            self.stats.output_bytes_written += WORD_BYTES as u64;
                        }
                    }
                }
            }
            OutputMode::Raw => {
                let mut raw = Vec::with_capacity(LANES * 2);
                for cy in 0..geo.conv_h {
                    for cx in 0..geo.conv_w {
                        for og in 0..groups {
                            let lanes = group_lanes(geo.out_channels, og);
                            self.accumulate_pixel(job, &geo, mem, og, cy, cx)?;
                            self.stats.cycles += self.timing.group_overhead;
                            raw.clear();
                            raw.extend(
                                self.bank.values[..lanes]
                                    .iter()
                                    .flat_map(|v| v.to_le_bytes()),
                            );
                            let first = (cy * geo.conv_w + cx) * geo.out_channels + og * LANES;
                            mem.write(job.output_base + (first * 2) as u32, &raw)?;
                            self.stats.output_words_written +=
                                raw.len().div_ceil(WORD_BYTES) as u64;
                            self.stats.output_bytes_written += raw.len() as u64;
                        }
                    }
                }
            }
        }
        Ok(self.stats)
    }

    /// Cycles `run_job` spends on a layer, computed without executing it.
    pub fn estimate_cycles(&self, geo: &Geometry, output: OutputMode) -> u64 {
        let t = self.timing;
        let in_bounds = |conv: usize, k: usize, extent: usize| {
            (0..k)
                .filter(|&kk| geo.input_coord(conv, kk, extent).is_some())
                .count()
        };
        let (eval_h, eval_w) = match (output, geo.pool) {
            (OutputMode::Binarized, crate::bintensor::Pool::Max2x2) => {
                (geo.output().height * 2, geo.output().width * 2)
            }
            _ => (geo.conv_h, geo.conv_w),
        };
        let rows: usize = (0..eval_h)
            .map(|y| in_bounds(y, geo.kernel_h, geo.input.height))
            .sum();
        let cols: usize = (0..eval_w)
            .map(|x| in_bounds(x, geo.kernel_w, geo.input.width))
            .sum();
        let kernel_steps = (rows * cols * geo.in_groups()) as u64;
        let pixels = (eval_h * eval_w) as u64;
        let mut cycles = t.job_overhead;
        for og in 0..out_groups(geo.out_channels) {
            let lanes = group_lanes(geo.out_channels, og) as u64;
            cycles += kernel_steps * (t.step_overhead + lanes);
            cycles += pixels * t.group_overhead;
            if output == OutputMode::Binarized {
                cycles += pixels * lanes.div_ceil(WORD_BYTES as u64);
            }
        }
        cycles
    }
}

/// Datapath cycles for a 128-bit step with no overhead: one per streamed weight word.
pub const fn mvp_cycles() -> u64 {
    WORD_BITS as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bintensor::{LayerKind, Pool};
    use crate::memsim::{MemoryMap, RegionKind};

    fn sram_base() -> u32 {
        MemoryMap::default()
            .regions
            .iter()
            .find(|r| r.kind == RegionKind::Sram && r.size > 100_000)
            .unwrap()
            .base
    }

    #[test]
    fn accumulators_wrap() {
        let mut bank = AccumulatorBank::default();
        bank.add(3, 65_535);
        bank.add(3, 2);
        assert_eq!(bank.values()[3], 1);
        bank.clear();
        assert!(bank.values().iter().all(|&v| v == 0));
    }

    #[test]
    fn matvec_identical_and_zero_weights() {
        let mut mem = MemoryModel::fault_free(MemoryMap::default()).unwrap();
        let base = sram_base();
        let input = 0x0F0F_1234_5678_9ABC_DEF0_0000_FFFF_AAAAu128;
        mem.write_words(base, &[input; LANES]).unwrap();
        let mut xne = Xne::default();
        assert_eq!(xne.matvec_128(input, &mut mem, base).unwrap(), [128; LANES]);
        mem.write_words(base, &[0; LANES]).unwrap();
        assert_eq!(
            xne.matvec_128(Word::MAX, &mut mem, base).unwrap(),
            [0; LANES]
        );
        assert_eq!(xne.stats.weight_words_read, 2 * LANES as u64);
    }

    #[test]
    fn tiling_places_group_words_contiguously() {
        let layer = LayerSpec {
            kind: LayerKind::Convolution,
            in_channels: 200,
            out_channels: 130,
            kernel_h: 3,
            kernel_w: 1,
            stride: 1,
            padding: 0,
            thresholds: vec![0; 130],
            shift: 0,
            pool: Pool::None,
        };
        let geo = layer.geometry(Shape::new(200, 3, 1)).unwrap();
        let canonical: Vec<Word> = (0..geo.weight_words() as u128).collect();
        let tiled = tile_weights(&geo, &canonical).unwrap();
        let mut sorted = tiled.clone();
        sorted.sort();
        assert_eq!(sorted, canonical);
        // Output 129 is lane 1 of group 1; kernel row 2, input group 1.
        let o = 129;
        let off = weight_step_offset(&geo, 1, 2, 0, 1) + 1;
        assert_eq!(tiled[off], ((o * 3 + 2) * 2 + 1) as u128);
    }

    #[test]
    fn ideal_and_calibrated_throughput() {
        assert_eq!(Throughput::ideal().effective_ops_per_cycle(), 256.0);
        let u = Throughput::calibrated().utilization;
        assert!((u - 0.8906).abs() < 1e-3, "{u}");
    }
}
