use std::path::PathBuf;

use bnnsim::bintensor::{argmax, oracle_network};
use bnnsim::dataset::Dataset;
use bnnsim::memsim::{AllocationPolicy, FaultModel, MemoryMap, MemoryModel, RegionKind};
use bnnsim::runtime::{Deployment, DEFAULT_INSTRUCTION_BYTES};
use bnnsim::xne::Xne;
use bnnsim::{modelfile, toy, Role};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

#[test]
fn bundled_files_regenerate_byte_identically() {
    let (net, data) = toy::generate().unwrap();
    let dir = std::env::temp_dir().join(format!("bnnsim-toy-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    modelfile::save(&net, &dir.join("toy.xnemodel")).unwrap();
    data.save(&dir, "toy-test").unwrap();
    for f in [
        "toy.xnemodel",
        "toy-test.toml",
        "toy-test.inputs.bin",
        "toy-test.labels.bin",
    ] {
        let fresh = std::fs::read(dir.join(f)).unwrap();
        let shipped = std::fs::read(data_dir().join(f)).unwrap();
        assert!(fresh == shipped, "{f} differs from the shipped copy");
    }
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn bundled_set_is_balanced_and_separable() {
    let net = modelfile::load(&data_dir().join("toy.xnemodel")).unwrap();
    let data = Dataset::load(&data_dir().join("toy-test.toml")).unwrap();
    assert_eq!(data.len(), 1000);
    for c in 0..10u8 {
        assert_eq!(data.labels.iter().filter(|&&l| l == c).count(), 100);
    }
    let fp = net.spec.footprint().unwrap();
    assert!(fp.packed_bytes + DEFAULT_INSTRUCTION_BYTES as u64 <= 16 * 1024);
    let mut correct = 0;
    for (x, &l) in data.inputs.iter().zip(&data.labels) {
        let scores = oracle_network(&net, x).unwrap();
        assert!(toy::margin(&scores) >= toy::TOY_MARGIN);
        correct += (argmax(&scores) == l as usize) as usize;
    }
    assert!(correct >= 900, "{correct}");
}

fn accuracy(policy: &AllocationPolicy, fault: FaultModel, samples: usize) -> usize {
    let net = modelfile::load(&data_dir().join("toy.xnemodel")).unwrap();
    let data = Dataset::load(&data_dir().join("toy-test.toml")).unwrap();
    let mut mem = MemoryModel::new(MemoryMap::default(), fault).unwrap();
    let dep = Deployment::new(&net, &mut mem, policy, DEFAULT_INSTRUCTION_BYTES).unwrap();
    let mut xne = Xne::default();
    data.inputs
        .iter()
        .zip(&data.labels)
        .take(samples)
        .filter(|(x, &l)| dep.infer(&mut xne, &mut mem, x).unwrap().prediction == l as usize)
        .count()
}

#[test]
fn scm_exec_is_immune_to_faults() {
    let clean = accuracy(&AllocationPolicy::scm_exec(), FaultModel::fault_free(), 300);
    let noisy = accuracy(
        &AllocationPolicy::scm_exec(),
        FaultModel::uniform_read(0.5, 1),
        300,
    );
    assert_eq!(clean, noisy);
    let degraded = accuracy(
        &AllocationPolicy::sram_exec(),
        FaultModel::uniform_read(0.5, 1),
        300,
    );
    assert!(degraded < clean);
}

#[test]
fn sram_exec_keeps_thresholds_and_code_in_scm() {
    let net = modelfile::load(&data_dir().join("toy.xnemodel")).unwrap();
    let mut mem = MemoryModel::fault_free(MemoryMap::default()).unwrap();
    let dep = Deployment::new(
        &net,
        &mut mem,
        &AllocationPolicy::sram_exec(),
        DEFAULT_INSTRUCTION_BYTES,
    )
    .unwrap();
    for p in dep.placements() {
        let kinds = mem.map().kinds_in(p.range.start, p.range.len());
        let expect = match p.role {
            Role::Thresholds | Role::Instructions | Role::Results => RegionKind::Scm,
            _ => RegionKind::Sram,
        };
        assert_eq!(kinds, vec![expect], "{:?}", p);
    }
}
