use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Session;
use crate::Modality;

/// Observed rate may deviate this much (relative) from the nominal range
/// before it is reported.
const RATE_TOLERANCE: f64 = 0.2;
/// An interval longer than this many nominal periods counts as a gap.
const GAP_PERIODS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    NonMonotonic { modality: Modality, index: usize },
    OutOfRange { modality: Modality, index: usize, t: f64 },
    ArityViolation { modality: Modality, index: usize, expected: usize, found: usize },
    NonFiniteTimestamp { modality: Modality, index: usize },
    RateDeviation { modality: Modality, nominal_lo: f64, nominal_hi: f64, observed: f64 },
    ModalityMismatch { key: Modality, series: Modality },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub count: usize,
    pub max_gap_s: f64,
    pub total_gap_s: f64,
}

/// Invariant violations (`findings`) plus informational gap statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub gaps: BTreeMap<Modality, GapStats>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }
}

pub fn validate_session(session: &Session) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (&key, series) in &session.modalities {
        let m = series.modality;
        if key != m {
            report.findings.push(Finding::ModalityMismatch { key, series: m });
        }
        let mut prev_t = f64::NEG_INFINITY;
        for (index, s) in series.samples.iter().enumerate() {
            if !s.t.is_finite() {
                report.findings.push(Finding::NonFiniteTimestamp { modality: m, index });
                continue;
            }
            if s.t <= prev_t {
                report.findings.push(Finding::NonMonotonic { modality: m, index });
            }
            prev_t = s.t;
            if s.t < 0.0 || s.t > session.duration_s {
                report.findings.push(Finding::OutOfRange { modality: m, index, t: s.t });
            }
            let n = s.values.len();
            let ok = match m.payload_arity() {
                Some(expected) => n == expected,
                None => n > 0 && n % 3 == 0,
            };
            if !ok {
                report.findings.push(Finding::ArityViolation {
                    modality: m,
                    index,
                    expected: m.payload_arity().unwrap_or(3),
                    found: n,
                });
            }
        }

        let mut dts: Vec<f64> = series
            .samples
            .windows(2)
            .map(|w| w[1].t - w[0].t)
            .filter(|d| d.is_finite() && *d > 0.0)
            .collect();
        let (lo, hi) = m.nominal_rate_range();
        let mut gaps = GapStats::default();
        let limit = GAP_PERIODS / lo;
        for &d in &dts {
            if d > limit {
                gaps.count += 1;
                gaps.total_gap_s += d;
                gaps.max_gap_s = gaps.max_gap_s.max(d);
            }
        }
        report.gaps.insert(m, gaps);

        if !dts.is_empty() {
            dts.sort_by(f64::total_cmp);
            let median = crate::stats::quantile_sorted(&dts, 0.5);
            let observed = 1.0 / median;
            if observed < lo * (1.0 - RATE_TOLERANCE) || observed > hi * (1.0 + RATE_TOLERANCE) {
                report.findings.push(Finding::RateDeviation {
                    modality: m,
                    nominal_lo: lo,
                    nominal_hi: hi,
                    observed,
                });
            }
        }
    }
    report
}
