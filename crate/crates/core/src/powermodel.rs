//! Power, frequency and energy model anchored to silicon measurements.
//!
//! The anchor table holds one row per measured supply voltage: the maximum frequency, total,
//! leakage and dynamic power of three supply domains (memory array, memory periphery, and
//! the rest of the SoC), the energy per binary operation and the SRAM bit error rate.
//! Between anchors, power, frequency and energy are interpolated linearly in voltage and
//! the BER log-linearly.
//!
//! CSV schema (header required, in this order):
//! `v,f_max_mhz,ma_total,mp_total,soc_total,ma_leak,mp_leak,soc_leak,ma_dyn,mp_dyn,soc_dyn,energy_pj_per_op,ber`
//! with voltages in V, frequency in MHz, powers in µW, energy in pJ/op and BER as a fraction.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::memsim::{BerCurve, OBSERVATION_CUTOFF_V};
use crate::xne::Throughput;

pub const ANCHOR_COLUMNS: [&str; 13] = [
    "v",
    "f_max_mhz",
    "ma_total",
    "mp_total",
    "soc_total",
    "ma_leak",
    "mp_leak",
    "soc_leak",
    "ma_dyn",
    "mp_dyn",
    "soc_dyn",
    "energy_pj_per_op",
    "ber",
];

/// The silicon characterization shipped with the model.
pub const DEFAULT_ANCHORS_CSV: &str = include_str!("../../../data/anchors.csv");

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct DomainPower {
    pub total: f64,
    pub leak: f64,
    pub dynamic: f64,
}

impl DomainPower {
    fn lerp(a: &Self, b: &Self, t: f64) -> Self {
        DomainPower {
            total: lerp(a.total, b.total, t),
            leak: lerp(a.leak, b.leak, t),
            dynamic: lerp(a.dynamic, b.dynamic, t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub v: f64,
    pub f_max_mhz: f64,
    /// Memory array supply.
    pub ma: DomainPower,
    /// Memory periphery supply.
    pub mp: DomainPower,
    /// Logic supply (core, accelerator, interconnect, SCM).
    pub soc: DomainPower,
    pub energy_pj_per_op: f64,
    pub ber: f64,
}

impl OperatingPoint {
    pub fn domains(&self) -> [DomainPower; 3] {
        [self.ma, self.mp, self.soc]
    }

    pub fn total_power_uw(&self) -> f64 {
        self.ma.total + self.mp.total + self.soc.total
    }

    pub fn leak_power_uw(&self) -> f64 {
        self.ma.leak + self.mp.leak + self.soc.leak
    }

    pub fn leak_fraction(&self) -> f64 {
        self.leak_power_uw() / self.total_power_uw()
    }

    /// Row in anchor CSV formatting: shortest round-trip decimals, energy with three
    /// decimals, BER in exponent notation.
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{},{}", self.v, self.f_max_mhz);
        for d in self.domains() {
            let _ = write!(s, ",{}", d.total);
        }
        for d in self.domains() {
            let _ = write!(s, ",{}", d.leak);
        }
        for d in self.domains() {
            let _ = write!(s, ",{}", d.dynamic);
        }
        let _ = write!(s, ",{:.3},{:e}", self.energy_pj_per_op, self.ber);
        s
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTable {
    rows: Vec<OperatingPoint>,
}

impl AnchorTable {
    pub fn silicon() -> Self {
        Self::from_csv_str(DEFAULT_ANCHORS_CSV).expect("shipped anchor table parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::parse("header", e.to_string()))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ANCHOR_COLUMNS {
            return Err(Error::parse(
                "line 1",
                format!("expected columns {}", ANCHOR_COLUMNS.join(",")),
            ));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::parse(format!("line {line}"), e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let mut vals = [0.0; 13];
            for (col, (slot, field)) in vals.iter_mut().zip(record.iter()).enumerate() {
                *slot = field.parse::<f64>().map_err(|_| {
                    Error::parse(
                        format!("line {line}, column {} ({})", col + 1, ANCHOR_COLUMNS[col]),
                        format!("{field:?} is not a number"),
                    )
                })?;
            }
            if record.len() != 13 {
                return Err(Error::parse(
                    format!("line {line}"),
                    format!("{} fields, expected 13", record.len()),
                ));
            }
            let domain = |i: usize| DomainPower {
                total: vals[2 + i],
                leak: vals[5 + i],
                dynamic: vals[8 + i],
            };
            rows.push(OperatingPoint {
                v: vals[0],
                f_max_mhz: vals[1],
                ma: domain(0),
                mp: domain(1),
                soc: domain(2),
                energy_pj_per_op: vals[11],
                ber: vals[12],
            });
        }
        Self::new(rows)
    }

    pub fn new(rows: Vec<OperatingPoint>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::parse(
                "table",
                "at least two operating points required",
            ));
        }
        if rows.windows(2).any(|w| w[1].v <= w[0].v) {
            return Err(Error::parse(
                "table",
                "voltages must be strictly increasing",
            ));
        }
        if rows.iter().any(|r| r.f_max_mhz <= 0.0) {
            return Err(Error::parse("table", "frequencies must be positive"));
        }
        Ok(AnchorTable { rows })
    }

    pub fn rows(&self) -> &[OperatingPoint] {
        &self.rows
    }

    pub fn voltage_range(&self) -> (f64, f64) {
        (self.rows[0].v, self.rows[self.rows.len() - 1].v)
    }

    pub fn to_csv(&self) -> String {
        let mut s = ANCHOR_COLUMNS.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn ber_curve(&self) -> Result<BerCurve> {
        BerCurve::new(self.rows.iter().map(|r| (r.v, r.ber)).collect())
    }

    /// Operating point at `v`: anchors verbatim, interpolated in between.
    pub fn at(&self, v: f64) -> Result<OperatingPoint> {
        let (lo, hi) = self.voltage_range();
        if !(lo..=hi).contains(&v) {
            return Err(Error::domain(format!(
                "voltage {v} V outside [{lo}, {hi}] V"
            )));
        }
        if let Some(r) = self.rows.iter().find(|r| r.v == v) {
            return Ok(*r);
        }
        let i = self.rows.partition_point(|r| r.v < v);
        let (a, b) = (&self.rows[i - 1], &self.rows[i]);
        let t = (v - a.v) / (b.v - a.v);
        Ok(OperatingPoint {
            v,
            f_max_mhz: lerp(a.f_max_mhz, b.f_max_mhz, t),
            ma: DomainPower::lerp(&a.ma, &b.ma, t),
            mp: DomainPower::lerp(&a.mp, &b.mp, t),
            soc: DomainPower::lerp(&a.soc, &b.soc, t),
            energy_pj_per_op: lerp(a.energy_pj_per_op, b.energy_pj_per_op, t),
            ber: (a.ber.ln() + t * (b.ber.ln() - a.ber.ln())).exp(),
        })
    }
}

/// Power measured at one clock frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSample {
    pub frequency_mhz: f64,
    pub power_uw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticDynamicFit {
    pub leak_uw: f64,
    pub dyn_uw_per_mhz: f64,
    /// The unconstrained intercept was negative and has been clamped to zero.
    pub clamped: bool,
}

impl StaticDynamicFit {
    pub fn dynamic_at(&self, f_mhz: f64) -> f64 {
        self.dyn_uw_per_mhz * f_mhz
    }
}

/// Ordinary least squares of `P = leak + c * f`.
pub fn fit_static_dynamic(samples: &[PowerSample]) -> Result<StaticDynamicFit> {
    if samples.len() < 2 {
        return Err(Error::SingularFit("need at least two samples".into()));
    }
    if let Some(s) = samples
        .iter()
        .find(|s| s.frequency_mhz.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater))
    {
        return Err(Error::domain(format!(
            "sample frequency {} MHz must be positive",
            s.frequency_mhz
        )));
    }
    let n = samples.len() as f64;
    let mean_f = samples.iter().map(|s| s.frequency_mhz).sum::<f64>() / n;
    let mean_p = samples.iter().map(|s| s.power_uw).sum::<f64>() / n;
    let sxx: f64 = samples
        .iter()
        .map(|s| (s.frequency_mhz - mean_f).powi(2))
        .sum();
    if sxx <= f64::EPSILON * mean_f * mean_f {
        return Err(Error::SingularFit("all samples share one frequency".into()));
    }
    let sxy: f64 = samples
        .iter()
        .map(|s| (s.frequency_mhz - mean_f) * (s.power_uw - mean_p))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_p - slope * mean_f;
    if intercept < 0.0 {
        log::warn!("static power fit went negative ({intercept:.3} uW); clamping to 0");
        // Refit the slope through the origin.
        let sff: f64 = samples.iter().map(|s| s.frequency_mhz.powi(2)).sum();
        let sfp: f64 = samples.iter().map(|s| s.frequency_mhz * s.power_uw).sum();
        return Ok(StaticDynamicFit {
            leak_uw: 0.0,
            dyn_uw_per_mhz: sfp / sff,
            clamped: true,
        });
    }
    Ok(StaticDynamicFit {
        leak_uw: intercept,
        dyn_uw_per_mhz: slope,
        clamped: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyPerOp {
    /// Interpolated measured value.
    pub table_pj: f64,
    /// Total power divided by the modelled throughput at f_max.
    pub computed_pj: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InferenceMetrics {
    pub gops: f64,
    pub inf_per_s: f64,
    pub inf_per_s_per_mw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub v: f64,
    pub f_max_mhz: f64,
    pub power_uw: f64,
    pub energy_pj_per_op: f64,
    pub ber: f64,
    pub accuracy: f64,
    pub accuracy_drop: f64,
}

#[derive(Debug, Clone)]
pub struct PowerModel {
    table: AnchorTable,
    ber: BerCurve,
    throughput: Throughput,
    observation_floor: bool,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel::new(AnchorTable::silicon(), Throughput::calibrated(), true)
            .expect("shipped anchors are valid")
    }
}

impl PowerModel {
    pub fn new(
        table: AnchorTable,
        throughput: Throughput,
        observation_floor: bool,
    ) -> Result<Self> {
        let ber = table.ber_curve()?;
        Ok(PowerModel {
            table,
            ber,
            throughput,
            observation_floor,
        })
    }

    pub fn table(&self) -> &AnchorTable {
        &self.table
    }

    pub fn throughput(&self) -> Throughput {
        self.throughput
    }

    pub fn observation_floor(&self) -> bool {
        self.observation_floor
    }

    pub fn operating_point(&self, v: f64) -> Result<OperatingPoint> {
        self.table.at(v)
    }

    pub fn total_power(&self, v: f64) -> Result<f64> {
        Ok(self.table.at(v)?.total_power_uw())
    }

    pub fn f_max(&self, v: f64) -> Result<f64> {
        Ok(self.table.at(v)?.f_max_mhz)
    }

    /// BER at `v`, zero above the observation cutoff when the floor flag is set.
    pub fn ber(&self, v: f64) -> Result<f64> {
        self.ber.ber(v, self.observation_floor)
    }

    pub fn energy_per_op(&self, v: f64) -> Result<EnergyPerOp> {
        let op = self.table.at(v)?;
        Ok(EnergyPerOp {
            table_pj: op.energy_pj_per_op,
            computed_pj: op.total_power_uw()
                / (self.throughput.effective_ops_per_cycle() * op.f_max_mhz),
        })
    }

    pub fn gops(&self, v: f64) -> Result<f64> {
        Ok(self.throughput.gops_at(self.f_max(v)?))
    }

    pub fn inference_metrics(&self, ops_per_inference: u64, v: f64) -> Result<InferenceMetrics> {
        if ops_per_inference == 0 {
            return Err(Error::domain("ops per inference must be positive"));
        }
        let gops = self.gops(v)?;
        let inf_per_s = gops * 1e9 / ops_per_inference as f64;
        Ok(InferenceMetrics {
            gops,
            inf_per_s,
            inf_per_s_per_mw: inf_per_s / (self.total_power(v)? / 1000.0),
        })
    }

    /// Anchor voltage with the lowest measured energy per operation.
    pub fn min_energy_voltage(&self) -> f64 {
        self.table
            .rows()
            .iter()
            .min_by(|a, b| a.energy_pj_per_op.total_cmp(&b.energy_pj_per_op))
            .expect("non-empty table")
            .v
    }

    /// One row per voltage (sorted ascending), joining the power model with the accuracy
    /// reached at that voltage's BER. `baseline` is the fault-free accuracy.
    pub fn tradeoff_table(
        &self,
        voltages: &[f64],
        baseline: f64,
        mut accuracy_at: impl FnMut(f64) -> Result<f64>,
    ) -> Result<Vec<TradeoffRow>> {
        let mut vs = voltages.to_vec();
        vs.sort_by(f64::total_cmp);
        vs.dedup();
        vs.into_iter()
            .map(|v| {
                let op = self.table.at(v)?;
                let ber = self.ber(v)?;
                let accuracy = accuracy_at(ber)?;
                Ok(TradeoffRow {
                    v,
                    f_max_mhz: op.f_max_mhz,
                    power_uw: op.total_power_uw(),
                    energy_pj_per_op: op.energy_pj_per_op,
                    ber,
                    accuracy,
                    accuracy_drop: baseline - accuracy,
                })
            })
            .collect()
    }
}

/// Voltages above which the self-test observes no error (see [`OBSERVATION_CUTOFF_V`]).
pub fn is_above_observation_cutoff(v: f64) -> bool {
    v > OBSERVATION_CUTOFF_V
}
