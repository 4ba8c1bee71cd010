use std::collections::HashMap;

use bnnsim::bintensor::{argmax, oracle_network, Network};
use bnnsim::dataset::Dataset;
use bnnsim::memsim::{
    write_trace_csv, AllocationPolicy, FaultMode, FaultModel, MemoryModel, TraceRecord,
};
use bnnsim::powermodel::{PowerModel, ANCHOR_COLUMNS};
use bnnsim::rng::derive_seed;
use bnnsim::runtime::Deployment;
use bnnsim::selftest::run_selftest;
use bnnsim::xne::{Throughput, Xne};
use bnnsim::{modelfile, uvgg, Error};
use serde_json::{json, Value};

use crate::config::{FaultKind, Loaded};
use crate::error::CliError;
use crate::output::OutputDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Infer,
    SweepBer,
    SweepVoltage,
    Selftest,
    PowerReport,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Infer => "infer",
            Command::SweepBer => "sweep-ber",
            Command::SweepVoltage => "sweep-voltage",
            Command::Selftest => "selftest",
            Command::PowerReport => "power-report",
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record the memory transactions of the first inference (or self-test point).
    pub trace: bool,
}

/// Runs `command` and writes its result files plus `run.json` into the output directory.
/// Returns the run metadata.
pub fn run(command: Command, cfg: &Loaded, opts: RunOptions) -> Result<Value, CliError> {
    let mut out = OutputDir::create(cfg.out_dir(), command.name(), &cfg.hash)?;
    let summary = match command {
        Command::Infer => cmd_infer(cfg, opts, &mut out)?,
        Command::SweepBer => cmd_sweep_ber(cfg, opts, &mut out)?,
        Command::SweepVoltage => cmd_sweep_voltage(cfg, opts, &mut out)?,
        Command::Selftest => cmd_selftest(cfg, opts, &mut out)?,
        Command::PowerReport => cmd_power_report(cfg, &mut out)?,
    };
    let c = &cfg.config;
    let mut outputs = out.written().to_vec();
    outputs.push("run.json".into());
    let meta = json!({
        "tool": "bnnsim",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command.name(),
        "config_sha256": cfg.hash,
        "seed": c.seed,
        "trials": c.trials,
        "policy": c.policy.to_string(),
        "outputs": outputs,
        "summary": summary,
    });
    out.write_json("run.json", &meta)?;
    Ok(meta)
}

/// Network, test set, and the fault-free reference decisions.
pub struct Workload {
    pub net: Network,
    pub data: Dataset,
    pub oracle_predictions: Vec<usize>,
    pub oracle_correct: usize,
}

impl Workload {
    pub fn load(cfg: &Loaded) -> Result<Self, CliError> {
        let c = &cfg.config;
        let net_path = c
            .network
            .as_ref()
            .ok_or_else(|| CliError::Config("`network` is required".into()))?;
        let data_path = c
            .dataset
            .as_ref()
            .ok_or_else(|| CliError::Config("`dataset` is required".into()))?;
        let net = load_with_path(&cfg.resolve(net_path), modelfile::load)?;
        let mut data = load_with_path(&cfg.resolve(data_path), Dataset::load)?;
        if let Some(n) = c.samples {
            data.inputs.truncate(n);
            data.labels.truncate(n);
        }
        if data.is_empty() {
            return Err(CliError::Config("the dataset has no samples".into()));
        }
        if data.shape() != Some(net.spec.input_shape) {
            return Err(Error::Shape(format!(
                "dataset samples {} do not match network input {}",
                data.shape().expect("non-empty"),
                net.spec.input_shape
            ))
            .into());
        }
        if data.class_count != net.spec.class_count {
            return Err(Error::Shape(format!(
                "dataset has {} classes, network {}",
                data.class_count, net.spec.class_count
            ))
            .into());
        }
        let oracle_predictions = data
            .inputs
            .iter()
            .map(|x| Ok(argmax(&oracle_network(&net, x)?)))
            .collect::<Result<Vec<_>, Error>>()?;
        let oracle_correct = oracle_predictions
            .iter()
            .zip(&data.labels)
            .filter(|(p, &l)| **p == l as usize)
            .count();
        Ok(Workload {
            net,
            data,
            oracle_predictions,
            oracle_correct,
        })
    }

    pub fn oracle_accuracy(&self) -> f64 {
        self.oracle_correct as f64 / self.data.len() as f64
    }
}

fn load_with_path<T>(
    path: &std::path::Path,
    f: impl FnOnce(&std::path::Path) -> bnnsim::Result<T>,
) -> Result<T, CliError> {
    f(path).map_err(|e| match e {
        Error::Io(source) => CliError::io(path, source),
        other => other.into(),
    })
}

fn fault_model(cfg: &Loaded, rate: f64, seed: u64) -> FaultModel {
    let f = &cfg.config.fault;
    match f.mode {
        FaultKind::Uniform => FaultModel {
            read_ber: rate,
            write_ber: f.write_ber,
            mode: FaultMode::Uniform,
            seed,
        },
        FaultKind::Patterned => FaultModel {
            read_ber: 0.0,
            write_ber: f.write_ber,
            mode: FaultMode::Patterned {
                density: rate,
                stuck: f.stuck.clone(),
            },
            seed,
        },
    }
}

fn is_fault_free(fm: &FaultModel) -> bool {
    let no_pattern = match &fm.mode {
        FaultMode::Uniform => true,
        FaultMode::Patterned { density, stuck } => *density == 0.0 && stuck.is_empty(),
    };
    fm.read_ber == 0.0 && fm.write_ber == 0.0 && no_pattern
}

pub struct Trial {
    pub predictions: Vec<u8>,
    pub correct: usize,
    pub cycles_per_inference: u64,
    pub trace: Option<Vec<TraceRecord>>,
}

/// One pass over the test set on a freshly deployed memory image.
pub fn run_trial(
    cfg: &Loaded,
    work: &Workload,
    fault: FaultModel,
    trace: bool,
) -> Result<Trial, CliError> {
    let mut mem = MemoryModel::new(cfg.memory_map(), fault)?;
    let policy = AllocationPolicy::named(cfg.config.policy);
    let dep = Deployment::new(&work.net, &mut mem, &policy, cfg.config.instruction_bytes)?;
    let mut xne = Xne::default();
    let mut predictions = Vec::with_capacity(work.data.len());
    let mut correct = 0;
    let mut cycles = 0;
    let mut records = None;
    for (i, (x, &label)) in work.data.inputs.iter().zip(&work.data.labels).enumerate() {
        if trace && i == 0 {
            mem.enable_trace();
        }
        let inf = dep.infer(&mut xne, &mut mem, x)?;
        if i == 0 {
            cycles = inf.stats.cycles;
            if trace {
                records = Some(mem.take_trace());
            }
        }
        correct += (inf.prediction == label as usize) as usize;
        predictions.push(inf.prediction as u8);
    }
    Ok(Trial {
        predictions,
        correct,
        cycles_per_inference: cycles,
        trace: records,
    })
}

#[derive(Debug, Clone)]
pub struct PointStats {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over trials.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl PointStats {
    /// Accuracy statistics from per-trial correct counts over `samples` inputs each.
    fn from_counts(correct: &[usize], samples: usize) -> Self {
        let n = correct.len() as f64;
        // Integer total keeps identical trials exactly equal to their common value.
        let mean = correct.iter().sum::<usize>() as f64 / (n * samples as f64);
        let accuracies: Vec<f64> = correct.iter().map(|&c| c as f64 / samples as f64).collect();
        let var = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let min = accuracies.iter().copied().fold(f64::INFINITY, f64::min);
        let max = accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        PointStats {
            accuracies,
            mean,
            std: var.sqrt(),
            min,
            max,
        }
    }
}

/// `trials` passes at one rate. A fault-free point is deterministic and evaluated once.
fn sweep_point(
    cfg: &Loaded,
    work: &Workload,
    point: u64,
    rate: f64,
    trace: bool,
    traces: &mut Option<Vec<TraceRecord>>,
) -> Result<(PointStats, Vec<Trial>), CliError> {
    let c = &cfg.config;
    let mut trials = Vec::with_capacity(c.trials);
    for t in 0..c.trials {
        let fm = fault_model(cfg, rate, derive_seed(c.seed, &[point, t as u64]));
        if t > 0 && is_fault_free(&fm) {
            let first: &Trial = &trials[0];
            let copy = Trial {
                predictions: first.predictions.clone(),
                correct: first.correct,
                cycles_per_inference: first.cycles_per_inference,
                trace: None,
            };
            trials.push(copy);
            continue;
        }
        let want_trace = trace && traces.is_none() && t == 0;
        let mut trial = run_trial(cfg, work, fm, want_trace)?;
        if want_trace {
            *traces = trial.trace.take();
        }
        trials.push(trial);
    }
    let correct: Vec<usize> = trials.iter().map(|t| t.correct).collect();
    let stats = PointStats::from_counts(&correct, work.data.len());
    Ok((stats, trials))
}

fn write_trace(
    cfg: &Loaded,
    out: &mut OutputDir,
    records: Option<Vec<TraceRecord>>,
) -> Result<(), CliError> {
    if let Some(records) = records {
        let mut buf = out.provenance().into_bytes();
        write_trace_csv(&cfg.memory_map(), &records, &mut buf)?;
        out.write_raw("trace.csv", &buf)?;
    }
    Ok(())
}

fn cmd_infer(cfg: &Loaded, opts: RunOptions, out: &mut OutputDir) -> Result<Value, CliError> {
    let work = Workload::load(cfg)?;
    let mut traces = None;
    let (stats, trials) =
        sweep_point(cfg, &work, 0, cfg.config.fault.ber, opts.trace, &mut traces)?;
    let mut rows = Vec::new();
    for (t, trial) in trials.iter().enumerate() {
        for (s, (&p, &l)) in trial.predictions.iter().zip(&work.data.labels).enumerate() {
            rows.push(vec![
                t.to_string(),
                s.to_string(),
                l.to_string(),
                p.to_string(),
                work.oracle_predictions[s].to_string(),
            ]);
        }
    }
    out.write_csv(
        "predictions.csv",
        &[
            "trial",
            "sample",
            "label",
            "prediction",
            "oracle_prediction",
        ],
        rows,
    )?;
    out.write_csv(
        "accuracy.csv",
        &["trial", "correct", "samples", "accuracy"],
        trials.iter().enumerate().map(|(t, tr)| {
            vec![
                t.to_string(),
                tr.correct.to_string(),
                work.data.len().to_string(),
                (tr.correct as f64 / work.data.len() as f64).to_string(),
            ]
        }),
    )?;
    write_trace(cfg, out, traces)?;
    let cycles = trials[0].cycles_per_inference;
    Ok(json!({
        "network": work.net.spec.name,
        "samples": work.data.len(),
        "ber": cfg.config.fault.ber,
        "oracle_accuracy": work.oracle_accuracy(),
        "mean_accuracy": stats.mean,
        "std_accuracy": stats.std,
        "cycles_per_inference": cycles,
    }))
}

fn cmd_sweep_ber(cfg: &Loaded, opts: RunOptions, out: &mut OutputDir) -> Result<Value, CliError> {
    let c = &cfg.config;
    if c.sweep.ber.is_empty() {
        return Err(CliError::Config("sweep.ber is empty".into()));
    }
    let work = Workload::load(cfg)?;
    let mut traces = None;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for (i, &ber) in c.sweep.ber.iter().enumerate() {
        let (s, _) = sweep_point(cfg, &work, i as u64, ber, opts.trace, &mut traces)?;
        log::info!("ber {ber:e}: mean {:.4} std {:.4}", s.mean, s.std);
        rows.push(vec![
            ber.to_string(),
            c.trials.to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            s.min.to_string(),
            s.max.to_string(),
        ]);
        points.push(json!({"ber": ber, "mean_acc": s.mean, "std_acc": s.std}));
    }
    out.write_csv(
        "sweep_ber.csv",
        &["ber", "trials", "mean_acc", "std_acc", "min_acc", "max_acc"],
        rows,
    )?;
    write_trace(cfg, out, traces)?;
    Ok(json!({
        "network": work.net.spec.name,
        "samples": work.data.len(),
        "oracle_accuracy": work.oracle_accuracy(),
        "points": points,
    }))
}

fn power_model(cfg: &Loaded) -> Result<PowerModel, CliError> {
    Ok(PowerModel::new(
        cfg.anchors()?,
        Throughput::calibrated(),
        cfg.config.observation_floor,
    )?)
}

fn cmd_sweep_voltage(
    cfg: &Loaded,
    opts: RunOptions,
    out: &mut OutputDir,
) -> Result<Value, CliError> {
    let c = &cfg.config;
    if c.sweep.voltages.is_empty() {
        return Err(CliError::Config("sweep.voltages is empty".into()));
    }
    let work = Workload::load(cfg)?;
    let model = power_model(cfg)?;
    let baseline = work.oracle_accuracy();
    let mut traces = None;
    // One accuracy sweep per distinct rate, in order of first use.
    let mut cache: HashMap<u64, (PointStats, usize)> = HashMap::new();
    let mut order = 0u64;
    let rows = model.tradeoff_table(&c.sweep.voltages, baseline, |ber| {
        if let Some((s, _)) = cache.get(&ber.to_bits()) {
            return Ok(s.mean);
        }
        let (s, trials) =
            sweep_point(cfg, &work, order, ber, opts.trace, &mut traces).map_err(|e| match e {
                CliError::Core(e) => e,
                other => Error::Config(other.to_string()),
            })?;
        order += 1;
        let exact = trials
            .iter()
            .filter(|t| t.correct == work.oracle_correct)
            .count();
        let mean = s.mean;
        cache.insert(ber.to_bits(), (s, exact));
        Ok(mean)
    })?;
    let mut csv_rows = Vec::new();
    let mut points = Vec::new();
    for r in &rows {
        let (s, exact) = &cache[&r.ber.to_bits()];
        csv_rows.push(vec![
            r.v.to_string(),
            r.f_max_mhz.to_string(),
            r.power_uw.to_string(),
            format!("{:.3}", r.energy_pj_per_op),
            format!("{:e}", r.ber),
            r.accuracy.to_string(),
            s.std.to_string(),
            r.accuracy_drop.to_string(),
            exact.to_string(),
            c.trials.to_string(),
        ]);
        points.push(json!({
            "v": r.v,
            "ber": r.ber,
            "mean_acc": r.accuracy,
            "accuracy_drop": r.accuracy_drop,
            "exact_trials": exact,
        }));
    }
    out.write_csv(
        "sweep_voltage.csv",
        &[
            "v",
            "f_max_mhz",
            "power_uw",
            "energy_pj_per_op",
            "ber",
            "mean_acc",
            "std_acc",
            "accuracy_drop",
            "exact_trials",
            "trials",
        ],
        csv_rows,
    )?;
    write_trace(cfg, out, traces)?;
    Ok(json!({
        "network": work.net.spec.name,
        "samples": work.data.len(),
        "oracle_accuracy": baseline,
        "observation_floor": c.observation_floor,
        "points": points,
    }))
}

fn cmd_selftest(cfg: &Loaded, opts: RunOptions, out: &mut OutputDir) -> Result<Value, CliError> {
    let c = &cfg.config;
    let st = &c.selftest;
    let map = cfg.memory_map();
    let region = map
        .regions
        .iter()
        .find(|r| r.name == st.region)
        .ok_or_else(|| CliError::Config(format!("no memory region named {:?}", st.region)))?
        .range();
    let model = power_model(cfg)?;
    let mut points: Vec<(Option<f64>, f64)> = Vec::new();
    for &v in &st.voltages {
        points.push((Some(v), model.ber(v)?));
    }
    points.extend(st.ber.iter().map(|&b| (None, b)));
    if points.is_empty() {
        return Err(CliError::Config(
            "selftest has neither voltages nor ber points".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut traces = None;
    for (i, &(v, ber)) in points.iter().enumerate() {
        let fm = fault_model(cfg, ber, derive_seed(c.seed, &[i as u64, 0]));
        let mut mem = MemoryModel::new(map.clone(), fm)?;
        let trace = opts.trace && i == 0;
        if trace {
            mem.enable_trace();
        }
        let est = run_selftest(
            &mut mem,
            region.clone(),
            st.iterations as u64,
            derive_seed(c.seed, &[i as u64, 1]),
        )?;
        if trace {
            traces = Some(mem.take_trace());
        }
        log::info!("selftest point {i}: injected {ber:e}, estimate {est}");
        rows.push(vec![
            v.map_or(String::new(), |v| v.to_string()),
            format!("{ber:e}"),
            st.region.clone(),
            st.iterations.to_string(),
            est.bits_observed.to_string(),
            est.bit_errors.to_string(),
            est.to_string(),
            format!("{:e}", est.floor()),
        ]);
        summary.push(json!({
            "v": v,
            "injected_ber": ber,
            "bits_observed": est.bits_observed,
            "bit_errors": est.bit_errors,
            "estimate": est.to_string(),
        }));
    }
    out.write_csv(
        "selftest.csv",
        &[
            "v",
            "injected_ber",
            "region",
            "iterations",
            "bits_observed",
            "bit_errors",
            "estimate",
            "floor",
        ],
        rows,
    )?;
    write_trace(cfg, out, traces)?;
    Ok(json!({ "points": summary }))
}

fn cmd_power_report(cfg: &Loaded, out: &mut OutputDir) -> Result<Value, CliError> {
    let c = &cfg.config;
    let model = power_model(cfg)?;
    let table = model.table();

    let mut anchors = out.provenance();
    anchors.push_str(&table.to_csv());
    out.write_raw("anchors.csv", anchors.as_bytes())?;

    let mut voltages = c.power.voltages.clone();
    voltages.sort_by(f64::total_cmp);
    voltages.dedup();
    let interpolated = voltages
        .iter()
        .map(|&v| Ok(model.operating_point(v)?.csv_row()))
        .collect::<Result<Vec<_>, Error>>()?;
    let mut text = out.provenance();
    text.push_str(&ANCHOR_COLUMNS.join(","));
    text.push('\n');
    for row in interpolated {
        text.push_str(&row);
        text.push('\n');
    }
    out.write_raw("interpolated.csv", text.as_bytes())?;

    let ops = match (c.power.ops_per_inference, &c.network) {
        (Some(ops), _) => ops,
        (None, Some(p)) => load_with_path(&cfg.resolve(p), modelfile::load)?
            .spec
            .ops_per_inference()?,
        (None, None) => uvgg::UVGG_OPS_PER_INFERENCE,
    };
    let mut curve_v: Vec<f64> = table.rows().iter().map(|r| r.v).collect();
    curve_v.extend(&voltages);
    curve_v.sort_by(f64::total_cmp);
    curve_v.dedup();
    let mut rows = Vec::new();
    for &v in &curve_v {
        let op = model.operating_point(v)?;
        let e = model.energy_per_op(v)?;
        let m = model.inference_metrics(ops, v)?;
        rows.push(vec![
            v.to_string(),
            op.f_max_mhz.to_string(),
            format!("{:.1}", op.total_power_uw()),
            format!("{:.1}", op.leak_power_uw()),
            format!("{:.4}", op.leak_fraction()),
            format!("{:.3}", e.table_pj),
            format!("{:.4}", e.computed_pj),
            format!("{:.3}", m.gops),
            format!("{:.3}", m.inf_per_s),
            format!("{:.3}", m.inf_per_s_per_mw),
        ]);
    }
    out.write_csv(
        "energy_curve.csv",
        &[
            "v",
            "f_max_mhz",
            "total_power_uw",
            "leak_power_uw",
            "leak_fraction",
            "energy_pj_per_op",
            "energy_computed_pj_per_op",
            "gops",
            "inf_per_s",
            "inf_per_s_per_mw",
        ],
        rows,
    )?;
    let (lo, _) = table.voltage_range();
    let low = model.inference_metrics(ops, lo)?;
    Ok(json!({
        "anchors": table.rows().len(),
        "min_energy_voltage": model.min_energy_voltage(),
        "ops_per_inference": ops,
        "lowest_voltage": {
            "v": lo,
            "total_power_uw": model.total_power(lo)?,
            "leak_fraction": model.operating_point(lo)?.leak_fraction(),
            "gops": low.gops,
            "inf_per_s": low.inf_per_s,
            "inf_per_s_per_mw": low.inf_per_s_per_mw,
        },
    }))
}
