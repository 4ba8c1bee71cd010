mod common;

use bnnsim::bintensor::{
    binarize, oracle_accumulate, oracle_network, LayerKind, LayerSpec, Pool, Shape, Word,
};
use bnnsim::memsim::{AccessOp, AllocationPolicy, FaultModel, MemoryMap, MemoryModel, RegionKind};
use bnnsim::rng::rng_from_seed;
use bnnsim::runtime::{Deployment, DEFAULT_INSTRUCTION_BYTES};
use bnnsim::xne::{JobDescriptor, OutputMode, Throughput, Xne, XneTiming};
use bnnsim::{uvgg, Error};
use rand::Rng;

fn fault_free() -> MemoryModel {
    MemoryModel::fault_free(MemoryMap::default()).unwrap()
}

#[test]
fn random_layers_match_oracle() {
    let mut rng = rng_from_seed(2024);
    let mut xne = Xne::default();
    let mut narrow = 0;
    for i in 0..100 {
        let case = common::random_case(&mut rng);
        let mut mem = fault_free();
        let (out, stats) = common::run_on_xne(&mut xne, &mut mem, &case, OutputMode::Binarized);
        let (expect, _, _, _) = common::naive_layer(&case);
        assert_eq!(out, expect.to_le_bytes(), "case {i}: {:?}", case.layer);
        assert!(stats.cycles >= stats.weight_words_read);
        if case.layer.in_channels < 128 || case.layer.out_channels < 128 {
            narrow += 1;
        }
        if case.layer.pool == Pool::None {
            let (raw, _) = common::run_on_xne(&mut xne, &mut mem, &case, OutputMode::Raw);
            let (_, acc) = oracle_accumulate(&case.input, &case.layer, &case.weights).unwrap();
            let acc16: Vec<u8> = acc.iter().flat_map(|&a| (a as u16).to_le_bytes()).collect();
            assert_eq!(raw, acc16, "case {i} raw");
        }
    }
    assert!(narrow > 20);
}

#[test]
fn matvec_examples() {
    let mut mem = fault_free();
    let base = common::sram_base(&mem);
    let mut xne = Xne::default();
    let mut rng = rng_from_seed(5);
    let input: Word = rng.random();
    mem.write_words(base, &[input; 128]).unwrap();
    assert_eq!(xne.matvec_128(input, &mut mem, base).unwrap(), [128; 128]);
    mem.write_words(base, &[0; 128]).unwrap();
    assert_eq!(xne.matvec_128(Word::MAX, &mut mem, base).unwrap(), [0; 128]);
    let weights: Vec<Word> = (0..128).map(|_| rng.random()).collect();
    mem.write_words(base, &weights).unwrap();
    let out = xne.matvec_128(input, &mut mem, base).unwrap();
    for (lane, w) in weights.iter().enumerate() {
        assert_eq!(out[lane], (!(input ^ w)).count_ones());
    }
}

#[test]
fn single_mvp_costs_128_cycles_plus_overhead() {
    let case = common::Case {
        layer: LayerSpec {
            kind: LayerKind::Convolution,
            in_channels: 128,
            out_channels: 128,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            padding: 0,
            thresholds: vec![64; 128],
            shift: 0,
            pool: Pool::None,
        },
        input: common::random_tensor(&mut rng_from_seed(1), Shape::new(128, 1, 1)),
        weights: vec![0; 128],
    };
    let t = XneTiming::default();
    let mut xne = Xne::new(t);
    let (_, stats) = common::run_on_xne(&mut xne, &mut fault_free(), &case, OutputMode::Binarized);
    let fixed = t.job_overhead + t.step_overhead + t.group_overhead + 128 / 16;
    assert_eq!(stats.cycles, 128 + fixed);
    assert_eq!(stats.weight_words_read, 128);
    assert_eq!(stats.threshold_bytes_read, 128);
}

#[test]
fn load_input_buffer_examples() {
    let mut mem = fault_free();
    let base = common::sram_base(&mem);
    let word: Word = 0xAB00_0000_0000_0000_0000_0000_0000_00CD;
    mem.write_words(base, &[word]).unwrap();
    let mut xne = Xne::default();
    assert_eq!(xne.load_input_buffer(&mut mem, base).unwrap(), word);

    let mut all = MemoryModel::new(MemoryMap::default(), FaultModel::uniform_read(1.0, 3)).unwrap();
    all.write_words(base, &[word]).unwrap();
    assert_eq!(xne.load_input_buffer(&mut all, base).unwrap(), !word);
    assert!(matches!(
        xne.load_input_buffer(&mut all, 0x10),
        Err(Error::Bus { .. })
    ));

    let mut noisy =
        MemoryModel::new(MemoryMap::default(), FaultModel::uniform_read(1e-3, 4)).unwrap();
    let n = 1_000_000u64;
    let mut flipped = 0u64;
    for i in 0..n {
        let addr = base + ((i % 1024) * 16) as u32;
        flipped += xne
            .load_input_buffer(&mut noisy, addr)
            .unwrap()
            .count_ones() as u64;
    }
    let frac = flipped as f64 / (n * 128) as f64;
    assert!((0.8e-3..=1.2e-3).contains(&frac), "{frac}");
}

#[test]
fn deterministic_given_seed() {
    let mut rng = rng_from_seed(8);
    let case = common::random_case(&mut rng);
    let run = || {
        let mut mem =
            MemoryModel::new(MemoryMap::default(), FaultModel::uniform_read(1e-2, 77)).unwrap();
        common::run_on_xne(&mut Xne::default(), &mut mem, &case, OutputMode::Binarized)
    };
    assert_eq!(run(), run());
}

#[test]
fn no_write_between_accumulation_and_binarization() {
    let mut rng = rng_from_seed(9);
    for _ in 0..10 {
        let case = common::random_case(&mut rng);
        let mut mem = fault_free();
        mem.enable_trace();
        let base = common::sram_base(&mem);
        let geo = case.layer.geometry(case.input.shape()).unwrap();
        common::run_on_xne(&mut Xne::default(), &mut mem, &case, OutputMode::Binarized);
        let trace = mem.take_trace();
        // Skip the operand setup writes; the job starts at its first read.
        let start = trace.iter().position(|r| r.op == AccessOp::Read).unwrap();
        let job = &trace[start..];
        let align = |x: usize| (x.div_ceil(16) * 16) as u32;
        let weight_base = base + align(case.input.shape().bytes());
        let threshold_base = weight_base + align(geo.weight_words() * 16);
        let thresholds = threshold_base..threshold_base + geo.out_channels as u32;
        let mut accumulating = false;
        for r in job {
            match r.op {
                AccessOp::Read if thresholds.contains(&r.addr) => accumulating = false,
                AccessOp::Read => accumulating = true,
                AccessOp::Write => {
                    assert!(!accumulating, "write during accumulation");
                    assert!(r.addr >= thresholds.end);
                }
            }
        }
        let writes = job.iter().filter(|r| r.op == AccessOp::Write).count();
        let out = geo.output();
        assert_eq!(writes, out.height * out.width * out.words_per_pixel());
    }
}

#[test]
fn thresholds_in_scm_survive_noisy_weights() {
    let mut rng = rng_from_seed(12);
    let case = loop {
        let c = common::random_case(&mut rng);
        if c.layer.out_channels >= 8 {
            break c;
        }
    };
    let map = MemoryMap::default();
    let scm = map
        .regions
        .iter()
        .position(|r| r.kind == RegionKind::Scm)
        .unwrap();
    let mut mem = MemoryModel::new(map.clone(), FaultModel::uniform_read(0.5, 13)).unwrap();
    mem.enable_trace();
    let geo = case.layer.geometry(case.input.shape()).unwrap();
    let sram = common::sram_base(&mem);
    let tiled = bnnsim::xne::tile_weights(&geo, &case.weights).unwrap();
    let weight_base = sram + case.input.shape().bytes().div_ceil(16) as u32 * 16;
    let output_base = weight_base + (tiled.len() * 16) as u32;
    let threshold_base = map.regions[scm].base;
    mem.write_words(sram, case.input.words()).unwrap();
    mem.write_words(weight_base, &tiled).unwrap();
    mem.write(threshold_base, &case.layer.thresholds).unwrap();
    let job = JobDescriptor {
        layer: case.layer.clone(),
        input_shape: case.input.shape(),
        input_base: sram,
        weight_base,
        threshold_base,
        output_base,
        output: OutputMode::Binarized,
    };
    let stats = Xne::default().run_job(&job, &mut mem).unwrap();
    let trace = mem.take_trace();
    let threshold_reads: Vec<_> = trace
        .iter()
        .filter(|r| r.region == scm && r.op == AccessOp::Read)
        .collect();
    assert!(!threshold_reads.is_empty());
    assert!(threshold_reads.iter().all(|r| r.flipped_bits == 0));
    assert_eq!(
        stats.threshold_bytes_read,
        threshold_reads.iter().map(|r| r.size as u64).sum::<u64>()
    );
    let (_, acc) = oracle_accumulate(&case.input, &case.layer, &case.weights).unwrap();
    let expect = binarize(&geo, &case.layer, &acc);
    let got = mem.peek(output_base, expect.shape().bytes()).unwrap();
    assert_ne!(got, expect.to_le_bytes());
}

#[test]
fn overflow_guard_rejects_deep_layers() {
    let layer = LayerSpec {
        kind: LayerKind::Convolution,
        in_channels: 1024,
        out_channels: 8,
        kernel_h: 8,
        kernel_w: 8,
        stride: 1,
        padding: 0,
        thresholds: vec![0; 8],
        shift: 0,
        pool: Pool::None,
    };
    assert!(matches!(
        layer.geometry(Shape::new(1024, 8, 8)),
        Err(Error::AccumulatorOverflow { .. })
    ));
    let shifted = LayerSpec {
        shift: 9,
        in_channels: 8,
        kernel_h: 1,
        kernel_w: 1,
        ..layer
    };
    assert!(matches!(
        shifted.geometry(Shape::new(8, 1, 1)),
        Err(Error::ThresholdOverflow { .. })
    ));
}

#[test]
fn throughput_reference_points() {
    assert_eq!(Throughput::ideal().effective_ops_per_cycle(), 256.0);
    let t = Throughput::calibrated();
    assert!((t.gops_at(565.8) - 129.0).abs() <= 2.0);
    assert!((4.0..=4.2).contains(&t.gops_at(18.0)));
    assert!((t.utilization - 0.89).abs() < 0.01);
}

#[test]
fn uvgg_inference_matches_oracle_and_cycle_budget() {
    let net = uvgg::random_network(3).unwrap();
    let mut mem = fault_free();
    let dep = Deployment::new(
        &net,
        &mut mem,
        &AllocationPolicy::sram_exec(),
        DEFAULT_INSTRUCTION_BYTES,
    )
    .unwrap();
    let mut xne = Xne::default();
    let input = common::random_tensor(&mut rng_from_seed(4), net.spec.input_shape);
    let inf = dep.infer(&mut xne, &mut mem, &input).unwrap();
    let oracle: Vec<u16> = oracle_network(&net, &input)
        .unwrap()
        .into_iter()
        .map(|s| s as u16)
        .collect();
    assert_eq!(inf.scores, oracle);
    let estimate: u64 = dep
        .jobs()
        .iter()
        .map(|j| xne.estimate_cycles(&j.geometry().unwrap(), j.output))
        .sum();
    assert_eq!(inf.stats.cycles, estimate);
    let per_s = 18e6 / inf.stats.cycles as f64;
    assert!((per_s - 15.4).abs() <= 0.5, "{per_s} inf/s");
}
