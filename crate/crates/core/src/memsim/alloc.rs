//! Placement of network buffers into SCM or SRAM.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Banking, MemoryMap, RegionKind};
use crate::bintensor::WORD_BYTES;
use crate::error::{Error, Result, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    /// Data in SRAM, thresholds and code in SCM.
    SramExec,
    /// Everything in SCM.
    ScmExec,
}

impl std::fmt::Display for PolicyName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PolicyName::SramExec => "sram-exec",
            PolicyName::ScmExec => "scm-exec",
        })
    }
}

impl std::str::FromStr for PolicyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sram-exec" => Ok(PolicyName::SramExec),
            "scm-exec" => Ok(PolicyName::ScmExec),
            other => Err(Error::Config(format!(
                "unknown allocation policy {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationPolicy {
    name: PolicyName,
    kinds: BTreeMap<Role, RegionKind>,
}

impl AllocationPolicy {
    pub fn named(name: PolicyName) -> Self {
        use RegionKind::*;
        let data = match name {
            PolicyName::SramExec => Sram,
            PolicyName::ScmExec => Scm,
        };
        let kinds = BTreeMap::from([
            (Role::Weights, data),
            (Role::InputFeatures, data),
            (Role::OutputFeatures, data),
            (Role::Thresholds, Scm),
            (Role::Results, Scm),
            (Role::Instructions, Scm),
        ]);
        AllocationPolicy { name, kinds }
    }

    pub fn sram_exec() -> Self {
        Self::named(PolicyName::SramExec)
    }

    pub fn scm_exec() -> Self {
        Self::named(PolicyName::ScmExec)
    }

    pub fn name(&self) -> PolicyName {
        self.name
    }

    pub fn kind_for(&self, role: Role) -> RegionKind {
        self.kinds[&role]
    }
}

/// Bump allocator with one cursor per region. Allocations are 16-byte aligned and never
/// straddle regions. Code prefers private regions, data prefers interleaved ones.
#[derive(Debug, Clone)]
pub struct Allocator {
    map: MemoryMap,
    used: Vec<u32>,
}

impl Allocator {
    pub fn new(map: MemoryMap) -> Result<Self> {
        map.validate()?;
        let used = vec![0; map.regions.len()];
        Ok(Allocator { map, used })
    }

    pub fn map(&self) -> &MemoryMap {
        &self.map
    }

    pub fn allocate(
        &mut self,
        policy: &AllocationPolicy,
        role: Role,
        size: usize,
    ) -> Result<Range<u32>> {
        let kind = policy.kind_for(role);
        let prefer_private = role == Role::Instructions;
        let mut candidates: Vec<usize> = (0..self.map.regions.len())
            .filter(|&i| self.map.regions[i].kind == kind)
            .collect();
        candidates.sort_by_key(|&i| {
            let private = self.map.regions[i].banking == Banking::Private;
            private != prefer_private
        });
        let align = WORD_BYTES as u64;
        for i in candidates {
            let region = &self.map.regions[i];
            let start = (region.base as u64 + self.used[i] as u64).div_ceil(align) * align;
            let end = start + size as u64;
            if end <= region.end() {
                self.used[i] = (end - region.base as u64) as u32;
                return Ok(start as u32..end as u32);
            }
        }
        Err(Error::Allocation { role, kind, size })
    }

    /// Bytes handed out so far in regions of `kind`.
    pub fn used_bytes(&self, kind: RegionKind) -> u64 {
        self.map
            .regions
            .iter()
            .zip(&self.used)
            .filter(|(r, _)| r.kind == kind)
            .map(|(_, &u)| u as u64)
            .sum()
    }
}
