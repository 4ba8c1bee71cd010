//! Network deployment and inference on the engine.
//!
//! Deployment mirrors what the host core does before running a network: it carves buffers
//! out of L2 according to an [`AllocationPolicy`], stores tiled weights and thresholds,
//! and prepares one job per layer. Each inference then loads the input frame, runs the jobs
//! back to back, and reads the classifier scores to take the argmax.

use std::ops::Range;

use crate::bintensor::{argmax, BinaryTensor, Network, WORD_BYTES};
use crate::error::{Error, Result, Role};
use crate::memsim::{AllocationPolicy, Allocator, MemoryModel, RegionKind};
use crate::xne::{tile_weights, JobDescriptor, JobStats, OutputMode, Xne};

/// Bytes reserved for core code and stack in SCM.
pub const DEFAULT_INSTRUCTION_BYTES: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub role: Role,
    pub layer: Option<usize>,
    pub range: Range<u32>,
    pub kind: RegionKind,
}

#[derive(Debug, Clone)]
pub struct Deployment {
    jobs: Vec<JobDescriptor>,
    input: Range<u32>,
    results: Range<u32>,
    class_count: usize,
    placements: Vec<Placement>,
}

impl Deployment {
    /// Allocates every buffer of `net` and stores weights and thresholds through `mem`.
    pub fn new(
        net: &Network,
        mem: &mut MemoryModel,
        policy: &AllocationPolicy,
        instruction_bytes: usize,
    ) -> Result<Self> {
        let geos = net.spec.geometries()?;
        let mut alloc = Allocator::new(mem.map().clone())?;
        let mut placements = Vec::new();
        let mut place = |role, layer, size: usize, alloc: &mut Allocator| -> Result<Range<u32>> {
            let range = alloc.allocate(policy, role, size)?;
            placements.push(Placement {
                role,
                layer,
                range: range.clone(),
                kind: policy.kind_for(role),
            });
            Ok(range)
        };
        place(Role::Instructions, None, instruction_bytes, &mut alloc)?;
        let input = place(
            Role::InputFeatures,
            None,
            net.spec.input_shape.bytes(),
            &mut alloc,
        )?;

        let last = geos.len() - 1;
        let mut jobs = Vec::with_capacity(geos.len());
        let mut feature = input.clone();
        for (i, (geo, layer)) in geos.iter().zip(&net.spec.layers).enumerate() {
            let tiled = tile_weights(geo, &net.weights[i])?;
            let weights = place(Role::Weights, Some(i), tiled.len() * WORD_BYTES, &mut alloc)?;
            let thresholds = place(Role::Thresholds, Some(i), geo.out_channels, &mut alloc)?;
            let (output, role) = if i == last {
                (OutputMode::Raw, Role::Results)
            } else {
                (OutputMode::Binarized, Role::OutputFeatures)
            };
            let job = JobDescriptor {
                layer: layer.clone(),
                input_shape: geo.input,
                input_base: feature.start,
                weight_base: weights.start,
                threshold_base: thresholds.start,
                output_base: 0,
                output,
            };
            let out = place(role, Some(i), job.output_bytes(geo), &mut alloc)?;
            let job = JobDescriptor {
                output_base: out.start,
                ..job
            };
            job.validate(mem.map())?;
            mem.write_words(weights.start, &tiled)?;
            mem.write(thresholds.start, &layer.thresholds)?;
            jobs.push(job);
            feature = out;
        }
        Ok(Deployment {
            jobs,
            input,
            results: feature,
            class_count: net.spec.class_count,
            placements,
        })
    }

    pub fn jobs(&self) -> &[JobDescriptor] {
        &self.jobs
    }

    pub fn placements(&self) -> &[Placement] {
        &self.placements
    }

    pub fn input_range(&self) -> Range<u32> {
        self.input.clone()
    }

    pub fn results_range(&self) -> Range<u32> {
        self.results.clone()
    }

    /// Runs one frame: input load, every layer job, score readback.
    pub fn infer(
        &self,
        xne: &mut Xne,
        mem: &mut MemoryModel,
        input: &BinaryTensor,
    ) -> Result<Inference> {
        let expected = self.jobs[0].input_shape;
        if input.shape() != expected {
            return Err(Error::shape(format!(
                "input {} does not match network input {expected}",
                input.shape()
            )));
        }
        mem.write_words(self.input.start, input.words())?;
        let mut stats = JobStats::default();
        for job in &self.jobs {
            stats += xne.run_job(job, mem)?;
        }
        let raw = mem.read(self.results.start, self.class_count * 2)?;
        let scores: Vec<u16> = raw
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .collect();
        Ok(Inference {
            prediction: argmax(&scores),
            scores,
            stats,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inference {
    pub scores: Vec<u16>,
    pub prediction: usize,
    pub stats: JobStats,
}
