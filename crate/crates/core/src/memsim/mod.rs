//! Hybrid L2 memory model.
//!
//! The address space is a list of regions, each either standard-cell memory (SCM, always
//! reliable) or SRAM (subject to bit errors when voltage-scaled). Faults only ever touch bytes
//! that live in SRAM regions:
//!
//! * read faults are transient: each SRAM bit returned by a read is flipped independently
//!   with probability `read_ber`, and the stored cell is left intact;
//! * write faults are persistent: each SRAM bit stored by a write is flipped with probability
//!   `write_ber`;
//! * in patterned mode, a fixed set of stuck positions is flipped on every read instead of
//!   drawing fresh uniform errors.
//!
//! Uniform errors are drawn by geometric skip sampling (the gap to the next flipped bit is
//! `Geometric(p)`), which is distributed exactly like per-bit Bernoulli trials but costs
//! O(1) per access plus O(1) per flip.

mod alloc;
mod ber;

use std::fmt;
use std::ops::Range;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::bintensor::{Word, WORD_BYTES};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

pub use alloc::{AllocationPolicy, Allocator, PolicyName};
pub use ber::{ber_from_voltage, BerCurve, OBSERVATION_CUTOFF_V};

/// Width of the interleaving unit.
pub const BANK_WORD_BYTES: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Scm,
    Sram,
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegionKind::Scm => "scm",
            RegionKind::Sram => "sram",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Banking {
    Private,
    /// Word-interleaved over this many banks.
    Interleaved(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub base: u32,
    pub size: u32,
    pub kind: RegionKind,
    pub banking: Banking,
}

impl Region {
    pub fn end(&self) -> u64 {
        self.base as u64 + self.size as u64
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.base && (addr as u64) < self.end()
    }

    pub fn range(&self) -> Range<u32> {
        self.base..self.base + self.size
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryMap {
    pub regions: Vec<Region>,
}

pub const L2_BASE: u32 = 0x1C00_0000;

impl Default for MemoryMap {
    /// 64 kB private L2 (8 kB SCM + 56 kB SRAM) followed by four interleaved banks of
    /// 112 kB SRAM + 2 kB SCM each. The interleaved SCM occupies the top 2 kB of every bank,
    /// which under word interleaving is the last 8 kB of the interleaved address window.
    fn default() -> Self {
        const KB: u32 = 1024;
        let region = |name: &str, base, size, kind, banking| Region {
            name: name.into(),
            base,
            size,
            kind,
            banking,
        };
        let interleaved = L2_BASE + 64 * KB;
        MemoryMap {
            regions: vec![
                region(
                    "private_scm",
                    L2_BASE,
                    8 * KB,
                    RegionKind::Scm,
                    Banking::Private,
                ),
                region(
                    "private_sram",
                    L2_BASE + 8 * KB,
                    56 * KB,
                    RegionKind::Sram,
                    Banking::Private,
                ),
                region(
                    "interleaved_sram",
                    interleaved,
                    448 * KB,
                    RegionKind::Sram,
                    Banking::Interleaved(4),
                ),
                region(
                    "interleaved_scm",
                    interleaved + 448 * KB,
                    8 * KB,
                    RegionKind::Scm,
                    Banking::Interleaved(4),
                ),
            ],
        }
    }
}

impl MemoryMap {
    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::Config("memory map has no regions".into()));
        }
        for r in &self.regions {
            if r.size == 0 {
                return Err(Error::Config(format!("region {} is empty", r.name)));
            }
            if r.end() > 1 << 32 {
                return Err(Error::Config(format!(
                    "region {} exceeds 32-bit space",
                    r.name
                )));
            }
            if let Banking::Interleaved(banks) = r.banking {
                let unit = banks * BANK_WORD_BYTES;
                if banks == 0 || r.base % unit != 0 || r.size % unit != 0 {
                    return Err(Error::Config(format!(
                        "interleaved region {} must be aligned to {unit} bytes",
                        r.name
                    )));
                }
            }
        }
        let mut sorted: Vec<&Region> = self.regions.iter().collect();
        sorted.sort_by_key(|r| r.base);
        for pair in sorted.windows(2) {
            if pair[0].end() > pair[1].base as u64 {
                return Err(Error::Config(format!(
                    "regions {} and {} overlap",
                    pair[0].name, pair[1].name
                )));
            }
        }
        Ok(())
    }

    pub fn region_index(&self, addr: u32) -> Option<usize> {
        self.regions.iter().position(|r| r.contains(addr))
    }

    pub fn region_of(&self, addr: u32) -> Option<&Region> {
        self.region_index(addr).map(|i| &self.regions[i])
    }

    /// True when `[addr, addr + len)` is covered by mapped regions.
    pub fn is_mapped(&self, addr: u32, len: usize) -> bool {
        let end = addr as u64 + len as u64;
        let mut cursor = addr as u64;
        while cursor < end {
            match self.region_of(cursor as u32) {
                Some(r) => cursor = r.end(),
                None => return false,
            }
        }
        true
    }

    /// Kind of every region overlapped by `[addr, addr + len)`.
    pub fn kinds_in(&self, addr: u32, len: usize) -> Vec<RegionKind> {
        let end = addr as u64 + len as u64;
        self.regions
            .iter()
            .filter(|r| (r.base as u64) < end && r.end() > addr as u64)
            .map(|r| r.kind)
            .collect()
    }

    pub fn total_bytes(&self, kind: RegionKind) -> u64 {
        self.regions
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.size as u64)
            .sum()
    }

    /// Bank serving `addr`: 32-bit words are assigned round-robin to the banks of an
    /// interleaved region.
    pub fn bank_of(&self, addr: u32) -> Result<usize> {
        let region = self
            .region_of(addr)
            .ok_or_else(|| Error::domain(format!("address {addr:#010x} is unmapped")))?;
        match region.banking {
            Banking::Interleaved(banks) => {
                Ok((((addr - region.base) / BANK_WORD_BYTES) % banks) as usize)
            }
            Banking::Private => Err(Error::domain(format!(
                "address {addr:#010x} is in non-interleaved region {}",
                region.name
            ))),
        }
    }
}

/// Position of a single stored bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitAddress {
    pub addr: u32,
    pub bit: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FaultMode {
    /// Independent errors on every SRAM bit of every read.
    Uniform,
    /// A fixed set of stuck positions, drawn with the given density over all SRAM bits plus
    /// any explicitly listed positions, flipped on every read.
    Patterned {
        density: f64,
        #[serde(default)]
        stuck: Vec<BitAddress>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultModel {
    pub read_ber: f64,
    #[serde(default)]
    pub write_ber: f64,
    #[serde(flatten)]
    pub mode: FaultMode,
    pub seed: u64,
}

impl Default for FaultModel {
    fn default() -> Self {
        FaultModel::fault_free()
    }
}

impl FaultModel {
    pub fn fault_free() -> Self {
        FaultModel {
            read_ber: 0.0,
            write_ber: 0.0,
            mode: FaultMode::Uniform,
            seed: 0,
        }
    }

    pub fn uniform_read(ber: f64, seed: u64) -> Self {
        FaultModel {
            read_ber: ber,
            write_ber: 0.0,
            mode: FaultMode::Uniform,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} {p} outside [0, 1]")))
            }
        };
        check("read_ber", self.read_ber)?;
        check("write_ber", self.write_ber)?;
        if let FaultMode::Patterned { density, .. } = &self.mode {
            check("stuck density", *density)?;
        }
        Ok(())
    }
}

/// Rates at or above this use dense per-word masks instead of geometric gaps.
const DENSE_MIN_P: f64 = 1.0 / 32.0;
/// Binary digits of `p` used by the dense sampler (absolute error below 2^-32).
const DENSE_DIGITS: usize = 32;

#[derive(Debug, Clone)]
enum Sampler {
    Off,
    /// Geometric gaps between flips; `skip` clean bits remain before the next one.
    Sparse {
        gap: Geometric,
        skip: u64,
    },
    /// Each 64-bit mask combines one random word per binary digit of `p`, least
    /// significant digit first: OR for a 1 digit, AND for a 0 digit.
    Dense {
        digits: Vec<bool>,
    },
    Always,
}

/// Draws flip positions for a stream of SRAM bits with a fixed per-bit probability.
#[derive(Debug, Clone)]
struct FlipStream {
    rng: ChaCha8Rng,
    sampler: Sampler,
}

impl FlipStream {
    fn new(p: f64, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let sampler = if p <= 0.0 {
            Sampler::Off
        } else if p >= 1.0 {
            Sampler::Always
        } else if p >= DENSE_MIN_P {
            let mut frac = p;
            let mut digits: Vec<bool> = (0..DENSE_DIGITS)
                .map(|_| {
                    frac *= 2.0;
                    let d = frac >= 1.0;
                    if d {
                        frac -= 1.0;
                    }
                    d
                })
                .collect();
            while digits.last() == Some(&false) {
                digits.pop();
            }
            digits.reverse();
            Sampler::Dense { digits }
        } else {
            let gap = Geometric::new(p).expect("probability validated");
            let skip = gap.sample(&mut rng);
            Sampler::Sparse { gap, skip }
        };
        FlipStream { rng, sampler }
    }

    fn mask(rng: &mut ChaCha8Rng, digits: &[bool]) -> u64 {
        digits.iter().fold(0u64, |m, &d| {
            let r = rng.next_u64();
            if d {
                m | r
            } else {
                m & r
            }
        })
    }

    /// Flips bits of `bytes` (bit `i` is bit `i % 8` of byte `i / 8`); returns the count.
    fn apply(&mut self, bytes: &mut [u8]) -> u32 {
        match &mut self.sampler {
            Sampler::Off => 0,
            Sampler::Always => {
                bytes.iter_mut().for_each(|b| *b = !*b);
                bytes.len() as u32 * 8
            }
            Sampler::Dense { digits } => {
                let mut flips = 0;
                let mut chunks = bytes.chunks_exact_mut(8);
                for c in &mut chunks {
                    let m = Self::mask(&mut self.rng, digits);
                    let v = u64::from_le_bytes((&*c).try_into().expect("8 bytes")) ^ m;
                    c.copy_from_slice(&v.to_le_bytes());
                    flips += m.count_ones();
                }
                let tail = chunks.into_remainder();
                if !tail.is_empty() {
                    let m = Self::mask(&mut self.rng, digits).to_le_bytes();
                    for (b, m) in tail.iter_mut().zip(m) {
                        *b ^= m;
                        flips += m.count_ones();
                    }
                }
                flips
            }
            Sampler::Sparse { gap, skip } => {
                let total = bytes.len() as u64 * 8;
                let mut pos = 0u64;
                let mut flips = 0;
                loop {
                    let remaining = total - pos;
                    if *skip >= remaining {
                        *skip -= remaining;
                        return flips;
                    }
                    pos += *skip;
                    bytes[(pos / 8) as usize] ^= 1 << (pos % 8);
                    flips += 1;
                    pos += 1;
                    *skip = gap.sample(&mut self.rng);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessOp {
    Read,
    Write,
}

/// One memory transaction as seen by the trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub op: AccessOp,
    pub addr: u32,
    pub size: usize,
    /// Index into the memory map of the region holding `addr`.
    pub region: usize,
    pub flipped_bits: u32,
}

/// Observed fault statistics, per region kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaultCounters {
    pub sram_bits_read: u64,
    pub sram_read_flips: u64,
    pub scm_bits_read: u64,
    pub sram_bits_written: u64,
    pub sram_write_flips: u64,
}

#[derive(Debug, Clone)]
struct Bank {
    data: Vec<u8>,
    /// XOR mask applied on reads in patterned mode.
    stuck: Option<Vec<u8>>,
}

/// Mutable memory store with fault injection. One instance per simulated run.
#[derive(Debug, Clone)]
pub struct MemoryModel {
    map: MemoryMap,
    fault: FaultModel,
    banks: Vec<Bank>,
    read_flips: FlipStream,
    write_flips: FlipStream,
    counters: FaultCounters,
    trace: Option<Vec<TraceRecord>>,
    scratch: Vec<u8>,
}

/// (region index, byte range within the region, byte range within the access).
type Span = (usize, Range<usize>, Range<usize>);

impl MemoryModel {
    pub fn new(map: MemoryMap, fault: FaultModel) -> Result<Self> {
        map.validate()?;
        fault.validate()?;
        let mut banks: Vec<Bank> = map
            .regions
            .iter()
            .map(|r| Bank {
                data: vec![0; r.size as usize],
                stuck: None,
            })
            .collect();
        let read_p = match fault.mode {
            FaultMode::Uniform => fault.read_ber,
            FaultMode::Patterned { .. } => 0.0,
        };
        if let FaultMode::Patterned { density, stuck } = &fault.mode {
            let mut stream = FlipStream::new(*density, derive_seed(fault.seed, &[2]));
            for (region, bank) in map.regions.iter().zip(banks.iter_mut()) {
                if region.kind == RegionKind::Sram {
                    let mut mask = vec![0u8; region.size as usize];
                    stream.apply(&mut mask);
                    bank.stuck = Some(mask);
                }
            }
            for b in stuck {
                if b.bit > 7 {
                    return Err(Error::domain(format!("stuck bit index {} > 7", b.bit)));
                }
                let idx = map.region_index(b.addr).ok_or(Error::Bus {
                    addr: b.addr,
                    len: 1,
                })?;
                if let Some(mask) = banks[idx].stuck.as_mut() {
                    mask[(b.addr - map.regions[idx].base) as usize] |= 1 << b.bit;
                }
            }
        }
        Ok(MemoryModel {
            read_flips: FlipStream::new(read_p, derive_seed(fault.seed, &[0])),
            write_flips: FlipStream::new(fault.write_ber, derive_seed(fault.seed, &[1])),
            map,
            fault,
            banks,
            counters: FaultCounters::default(),
            trace: None,
            scratch: Vec::new(),
        })
    }

    pub fn fault_free(map: MemoryMap) -> Result<Self> {
        Self::new(map, FaultModel::fault_free())
    }

    pub fn map(&self) -> &MemoryMap {
        &self.map
    }

    pub fn fault_model(&self) -> &FaultModel {
        &self.fault
    }

    pub fn counters(&self) -> FaultCounters {
        self.counters
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Splits an access into per-region spans, or fails with a bus error.
    fn spans(&self, addr: u32, len: usize) -> Result<Vec<Span>> {
        let bus = || Error::Bus { addr, len };
        let end = addr as u64 + len as u64;
        let mut cursor = addr as u64;
        let mut spans = Vec::with_capacity(1);
        while cursor < end {
            let idx = self.map.region_index(cursor as u32).ok_or_else(bus)?;
            let region = &self.map.regions[idx];
            let stop = end.min(region.end());
            let local =
                (cursor - region.base as u64) as usize..(stop - region.base as u64) as usize;
            let buf = (cursor - addr as u64) as usize..(stop - addr as u64) as usize;
            spans.push((idx, local, buf));
            cursor = stop;
        }
        if len == 0 {
            self.map.region_index(addr).ok_or_else(bus)?;
        }
        Ok(spans)
    }

    fn record(&mut self, op: AccessOp, addr: u32, size: usize, flipped_bits: u32) {
        if let Some(trace) = self.trace.as_mut() {
            let region = self.map.region_index(addr).unwrap_or(usize::MAX);
            trace.push(TraceRecord {
                op,
                addr,
                size,
                region,
                flipped_bits,
            });
        }
    }

    /// Region index and local offset when `[addr, addr + len)` lies in a single region.
    fn single_span(&self, addr: u32, len: usize) -> Option<(usize, Range<usize>)> {
        let idx = self.map.region_index(addr)?;
        let region = &self.map.regions[idx];
        let start = (addr - region.base) as usize;
        (start + len <= region.size as usize).then(|| (idx, start..start + len))
    }

    fn read_span(&mut self, idx: usize, local: Range<usize>, out: &mut [u8]) -> u32 {
        let bank = &self.banks[idx];
        out.copy_from_slice(&bank.data[local.clone()]);
        let bits = out.len() as u64 * 8;
        match self.map.regions[idx].kind {
            RegionKind::Scm => {
                self.counters.scm_bits_read += bits;
                0
            }
            RegionKind::Sram => {
                let f = match &bank.stuck {
                    Some(mask) => {
                        let mut n = 0;
                        for (b, m) in out.iter_mut().zip(&mask[local]) {
                            *b ^= m;
                            n += m.count_ones();
                        }
                        n
                    }
                    None => self.read_flips.apply(out),
                };
                self.counters.sram_bits_read += bits;
                self.counters.sram_read_flips += f as u64;
                f
            }
        }
    }

    /// Reads `buf.len()` bytes at `addr` through the fault model; returns the flipped bits.
    pub fn read_into(&mut self, addr: u32, buf: &mut [u8]) -> Result<u32> {
        let flips = match self.single_span(addr, buf.len()) {
            Some((idx, local)) => self.read_span(idx, local, buf),
            None => {
                let mut flips = 0;
                for (idx, local, dst) in self.spans(addr, buf.len())? {
                    flips += self.read_span(idx, local, &mut buf[dst]);
                }
                flips
            }
        };
        self.record(AccessOp::Read, addr, buf.len(), flips);
        Ok(flips)
    }

    pub fn read(&mut self, addr: u32, len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; len];
        self.read_into(addr, &mut buf)?;
        Ok(buf)
    }

    /// Burst read of consecutive 128-bit little-endian words.
    pub fn read_words(&mut self, addr: u32, out: &mut [Word]) -> Result<u32> {
        let mut scratch = std::mem::take(&mut self.scratch);
        scratch.resize(out.len() * WORD_BYTES, 0);
        let result = self.read_into(addr, &mut scratch);
        if result.is_ok() {
            for (w, bytes) in out.iter_mut().zip(scratch.chunks_exact(WORD_BYTES)) {
                *w = Word::from_le_bytes(bytes.try_into().expect("16 bytes"));
            }
        }
        self.scratch = scratch;
        result
    }

    pub fn read_word(&mut self, addr: u32) -> Result<Word> {
        let mut w = [0];
        self.read_words(addr, &mut w)?;
        Ok(w[0])
    }

    fn write_span(&mut self, idx: usize, local: Range<usize>, src: &[u8]) -> u32 {
        let kind = self.map.regions[idx].kind;
        let cells = &mut self.banks[idx].data[local];
        cells.copy_from_slice(src);
        if kind != RegionKind::Sram {
            return 0;
        }
        let f = self.write_flips.apply(cells);
        self.counters.sram_bits_written += cells.len() as u64 * 8;
        self.counters.sram_write_flips += f as u64;
        f
    }

    /// Stores `bytes` at `addr`, applying persistent write faults to SRAM spans.
    pub fn write(&mut self, addr: u32, bytes: &[u8]) -> Result<u32> {
        let flips = match self.single_span(addr, bytes.len()) {
            Some((idx, local)) => self.write_span(idx, local, bytes),
            None => {
                let mut flips = 0;
                for (idx, local, src) in self.spans(addr, bytes.len())? {
                    flips += self.write_span(idx, local, &bytes[src]);
                }
                flips
            }
        };
        self.record(AccessOp::Write, addr, bytes.len(), flips);
        Ok(flips)
    }

    pub fn write_words(&mut self, addr: u32, words: &[Word]) -> Result<u32> {
        let mut scratch = std::mem::take(&mut self.scratch);
        scratch.clear();
        scratch.extend(words.iter().flat_map(|w| w.to_le_bytes()));
        let result = self.write(addr, &scratch);
        self.scratch = scratch;
        result
    }

    /// Stored contents without faults, counters or tracing.
    pub fn peek(&self, addr: u32, len: usize) -> Result<Vec<u8>> {
        let mut out = vec![0; len];
        for (idx, local, dst) in self.spans(addr, len)? {
            out[dst].copy_from_slice(&self.banks[idx].data[local]);
        }
        Ok(out)
    }

    /// Stores bytes without faults, counters or tracing.
    pub fn poke(&mut self, addr: u32, bytes: &[u8]) -> Result<()> {
        for (idx, local, src) in self.spans(addr, bytes.len())? {
            self.banks[idx].data[local].copy_from_slice(&bytes[src]);
        }
        Ok(())
    }

    /// Fills a byte range with pseudo-random data from `rng` (used by tests and benches).
    pub fn fill_random(&mut self, addr: u32, len: usize, rng: &mut impl Rng) -> Result<()> {
        let mut data = vec![0u8; len];
        rng.fill(&mut data[..]);
        self.poke(addr, &data)
    }
}

/// Writes trace records as CSV: `op,address,size,region,kind,flipped_bits`.
pub fn write_trace_csv<W: std::io::Write>(
    map: &MemoryMap,
    records: &[TraceRecord],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["op", "address", "size", "region", "kind", "flipped_bits"])
        .map_err(csv_err)?;
    for r in records {
        let region = map.regions.get(r.region);
        let op = match r.op {
            AccessOp::Read => "read",
            AccessOp::Write => "write",
        };
        w.write_record([
            op.to_string(),
            format!("{:#010x}", r.addr),
            r.size.to_string(),
            region.map_or("unmapped".into(), |g| g.name.clone()),
            region.map_or("-".into(), |g| g.kind.to_string()),
            r.flipped_bits.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
