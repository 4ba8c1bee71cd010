//! Memory BER self-test.
//!
//! Mirrors a software self-test running on the host core: a 32-bit Fibonacci LFSR
//! generates test words, the test region is filled sequentially, and the readback is compared
//! bit by bit against the regenerated sequence. Every iteration reseeds the LFSR so that no
//! address receives the same pattern twice in a row.
//!
//! LFSR: feedback polynomial x^32 + x^22 + x^2 + x + 1 (taps 32, 22, 2, 1). One bit step
//! computes `b = s[0] ^ s[10] ^ s[30] ^ s[31]` and shifts right, inserting `b` at bit 31.
//! One output word is the state after 32 bit steps.
//!
//! Iteration seeds: `derive_iteration_seed(seed0, i) = mix32(fold(splitmix64(seed0)) + i)`
//! where `fold` XORs the two 32-bit halves and `mix32` is the bijective "lowbias32" integer
//! hash (`x ^= x >> 16; x *= 0x7feb352d; x ^= x >> 15; x *= 0x846ca68b; x ^= x >> 16`).
//! A zero result is replaced by 1.

use std::fmt;
use std::ops::Range;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::memsim::MemoryModel;
use crate::rng::splitmix64;

const CHUNK_BYTES: usize = 4096;

/// One bit step of the Fibonacci register.
const fn bit_step(s: u32) -> u32 {
    let b = (s ^ (s >> 10) ^ (s >> 30) ^ (s >> 31)) & 1;
    (s >> 1) | (b << 31)
}

/// The register is linear over GF(2), so 32 steps can be applied byte by byte.
fn word_step_tables() -> &'static [[u32; 256]; 4] {
    static TABLES: OnceLock<[[u32; 256]; 4]> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut basis = [0u32; 32];
        for (i, b) in basis.iter_mut().enumerate() {
            let mut s = 1u32 << i;
            for _ in 0..32 {
                s = bit_step(s);
            }
            *b = s;
        }
        let mut tables = [[0u32; 256]; 4];
        for (t, table) in tables.iter_mut().enumerate() {
            for (v, entry) in table.iter_mut().enumerate() {
                *entry = (0..8)
                    .filter(|bit| v >> bit & 1 == 1)
                    .fold(0, |acc, bit| acc ^ basis[t * 8 + bit]);
            }
        }
        tables
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lfsr32 {
    state: u32,
}

impl Lfsr32 {
    pub fn new(seed: u32) -> Result<Self> {
        if seed == 0 {
            return Err(Error::InvalidState("LFSR seed must be nonzero".into()));
        }
        Ok(Lfsr32 { state: seed })
    }

    pub fn state(&self) -> u32 {
        self.state
    }

    /// Advances by one bit step.
    pub fn step(&mut self) -> u32 {
        self.state = bit_step(self.state);
        self.state
    }

    /// Advances 32 bit steps and returns the new state as the output word.
    pub fn next_word(&mut self) -> u32 {
        let t = word_step_tables();
        let s = self.state;
        self.state = t[0][(s & 0xFF) as usize]
            ^ t[1][(s >> 8 & 0xFF) as usize]
            ^ t[2][(s >> 16 & 0xFF) as usize]
            ^ t[3][(s >> 24) as usize];
        self.state
    }

    fn fill(&mut self, buf: &mut [u8]) {
        for chunk in buf.chunks_exact_mut(4) {
            chunk.copy_from_slice(&self.next_word().to_le_bytes());
        }
    }
}

fn mix32(mut x: u32) -> u32 {
    x ^= x >> 16;
    x = x.wrapping_mul(0x7FEB_352D);
    x ^= x >> 15;
    x = x.wrapping_mul(0x846C_A68B);
    x ^ (x >> 16)
}

/// Nonzero LFSR seed for iteration `i` of a run started from `seed0`.
pub fn derive_iteration_seed(seed0: u64, iteration: u64) -> u32 {
    let h = splitmix64(seed0);
    let base = (h as u32) ^ ((h >> 32) as u32);
    match mix32(base.wrapping_add(iteration as u32)) {
        0 => 1,
        s => s,
    }
}

/// Result of a self-test campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BerEstimate {
    pub bits_observed: u64,
    pub bit_errors: u64,
}

impl BerEstimate {
    /// Point estimate; meaningful only when errors were observed.
    pub fn rate(&self) -> f64 {
        if self.bits_observed == 0 {
            return 0.0;
        }
        self.bit_errors as f64 / self.bits_observed as f64
    }

    /// Smallest rate a campaign of this size can resolve.
    pub fn floor(&self) -> f64 {
        1.0 / self.bits_observed as f64
    }

    pub fn below_floor(&self) -> bool {
        self.bit_errors == 0
    }

    pub fn merge(&mut self, other: BerEstimate) {
        self.bits_observed += other.bits_observed;
        self.bit_errors += other.bit_errors;
    }
}

impl fmt::Display for BerEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.below_floor() {
            write!(f, "< {:e}", self.floor())
        } else {
            write!(f, "{:e}", self.rate())
        }
    }
}

/// Bits a campaign observes: whole 32-bit words of the region times the iteration count.
pub fn planned_bits(region_bytes: u64, iterations: u64) -> u64 {
    region_bytes / 4 * 32 * iterations
}

/// Fills `region` with LFSR data and checks it back, `iterations` times.
pub fn run_selftest(
    mem: &mut MemoryModel,
    region: Range<u32>,
    iterations: u64,
    seed0: u64,
) -> Result<BerEstimate> {
    let len = region.end.saturating_sub(region.start) as usize / 4 * 4;
    if len < 4 {
        return Err(Error::shape(
            "self-test region must hold at least one 32-bit word",
        ));
    }
    if iterations == 0 {
        return Err(Error::Config(
            "self-test needs at least one iteration".into(),
        ));
    }
    if !mem.map().is_mapped(region.start, len) {
        return Err(Error::Bus {
            addr: region.start,
            len,
        });
    }
    let mut expected = vec![0u8; CHUNK_BYTES];
    let mut observed = vec![0u8; CHUNK_BYTES];
    let mut estimate = BerEstimate::default();
    for i in 0..iterations {
        let seed = derive_iteration_seed(seed0, i);
        let mut gen = Lfsr32::new(seed)?;
        for offset in (0..len).step_by(CHUNK_BYTES) {
            let n = CHUNK_BYTES.min(len - offset);
            gen.fill(&mut expected[..n]);
            mem.write(region.start + offset as u32, &expected[..n])?;
        }
        let mut check = Lfsr32::new(seed)?;
        for offset in (0..len).step_by(CHUNK_BYTES) {
            let n = CHUNK_BYTES.min(len - offset);
            check.fill(&mut expected[..n]);
            mem.read_into(region.start + offset as u32, &mut observed[..n])?;
            estimate.bit_errors += expected[..n]
                .chunks_exact(8)
                .zip(observed[..n].chunks_exact(8))
                .map(|(a, b)| {
                    (u64::from_le_bytes(a.try_into().unwrap())
                        ^ u64::from_le_bytes(b.try_into().unwrap()))
                    .count_ones() as u64
                })
                .sum::<u64>();
            let tail = n / 8 * 8;
            estimate.bit_errors += expected[tail..n]
                .iter()
                .zip(&observed[tail..n])
                .map(|(a, b)| (a ^ b).count_ones() as u64)
                .sum::<u64>();
        }
        estimate.bits_observed += len as u64 * 8;
    }
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_seed_rejected() {
        assert!(matches!(Lfsr32::new(0), Err(Error::InvalidState(_))));
    }

    #[test]
    fn two_instances_agree() {
        let mut a = Lfsr32::new(0xC0FFEE).unwrap();
        let mut b = Lfsr32::new(0xC0FFEE).unwrap();
        for _ in 0..1000 {
            assert_eq!(a.next_word(), b.next_word());
        }
    }

    #[test]
    fn table_step_equals_32_bit_steps() {
        let mut fast = Lfsr32::new(0x8000_0001).unwrap();
        let mut slow = fast;
        for _ in 0..10_000 {
            let w = fast.next_word();
            for _ in 0..32 {
                slow.step();
            }
            assert_eq!(w, slow.state());
        }
    }

    #[test]
    fn estimate_display_reports_floor() {
        let e = BerEstimate {
            bits_observed: 800_000_000,
            bit_errors: 0,
        };
        assert_eq!(e.to_string(), "< 1.25e-9");
        let e = BerEstimate {
            bits_observed: 1000,
            bit_errors: 2,
        };
        assert_eq!(e.to_string(), "2e-3");
    }

    #[test]
    fn planned_bits_of_1800_iteration_campaign() {
        assert_eq!(planned_bits(448 * 1024, 1800), 6_606_028_800);
    }

    #[test]
    fn tiny_region_rejected() {
        let mut mem = MemoryModel::fault_free(Default::default()).unwrap();
        let base = mem.map().regions[1].base;
        assert!(run_selftest(&mut mem, base..base + 3, 1, 0).is_err());
        assert!(run_selftest(&mut mem, base..base + 4, 0, 0).is_err());
        assert!(matches!(
            run_selftest(&mut mem, 0..64, 1, 0),
            Err(Error::Bus { .. })
        ));
    }
}
