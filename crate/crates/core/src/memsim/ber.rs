//! Supply voltage to SRAM bit error rate.

use crate::error::{Error, Result};

/// Above this supply voltage no error is observable by the self-test.
pub const OBSERVATION_CUTOFF_V: f64 = 0.60;

/// Measured (voltage, BER) anchors of the SRAM, as fractions (not percent).
const SILICON_ANCHORS: [(f64, f64); 10] = [
    (0.42, 1.723e-3),
    (0.46, 1.09e-4),
    (0.50, 6.93e-6),
    (0.54, 4.40e-7),
    (0.58, 2.79e-8),
    (0.62, 1.77e-9),
    (0.66, 1.12e-10),
    (0.70, 7.11e-12),
    (0.75, 4.51e-13),
    (0.80, 2.86e-14),
];

/// Piecewise log-linear BER curve through measured anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct BerCurve {
    anchors: Vec<(f64, f64)>,
}

impl Default for BerCurve {
    fn default() -> Self {
        BerCurve {
            anchors: SILICON_ANCHORS.to_vec(),
        }
    }
}

impl BerCurve {
    /// Anchors must be sorted by strictly increasing voltage with positive rates.
    pub fn new(anchors: Vec<(f64, f64)>) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(Error::domain("a BER curve needs at least two anchors"));
        }
        if anchors.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::domain("BER anchors must have increasing voltages"));
        }
        if anchors.iter().any(|&(_, b)| !(b > 0.0 && b <= 1.0)) {
            return Err(Error::domain("BER anchors must lie in (0, 1]"));
        }
        Ok(BerCurve { anchors })
    }

    pub fn anchors(&self) -> &[(f64, f64)] {
        &self.anchors
    }

    pub fn voltage_range(&self) -> (f64, f64) {
        (self.anchors[0].0, self.anchors[self.anchors.len() - 1].0)
    }

    /// BER at `v`. With `observation_floor`, rates above the cutoff voltage report 0,
    /// as no error is observable there.
    pub fn ber(&self, v: f64, observation_floor: bool) -> Result<f64> {
        let (lo, hi) = self.voltage_range();
        if !(lo..=hi).contains(&v) {
            return Err(Error::domain(format!(
                "voltage {v} V outside [{lo}, {hi}] V"
            )));
        }
        if observation_floor && v > OBSERVATION_CUTOFF_V {
            return Ok(0.0);
        }
        if let Some(&(_, b)) = self.anchors.iter().find(|(av, _)| *av == v) {
            return Ok(b);
        }
        let i = self.anchors.partition_point(|(av, _)| *av < v);
        let (v0, b0) = self.anchors[i - 1];
        let (v1, b1) = self.anchors[i];
        let t = (v - v0) / (v1 - v0);
        Ok((b0.ln() + t * (b1.ln() - b0.ln())).exp())
    }
}

/// BER of the silicon SRAM at supply voltage `v`.
pub fn ber_from_voltage(v: f64, observation_floor: bool) -> Result<f64> {
    BerCurve::default().ber(v, observation_floor)
}
