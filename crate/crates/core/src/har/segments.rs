use serde::{Deserialize, Serialize};

use super::HarError;
use crate::featurize::{to_micros, WindowSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    pub label: String,
}

/// Turns window predictions `(t_s, label)` (window end times, ascending)
/// into contiguous segments.
///
/// The span from the first window start to the last window end is cut into
/// ticks of one stride; each tick takes the majority label of the windows
/// covering its midpoint (ties to the lexicographically first label). Runs
/// shorter than `min_segment_s` are then merged into their longer neighbour
/// (the earlier one on ties), shortest run first.
pub fn aggregate_predictions(preds: &[(f64, String)], window: &WindowSpec, min_segment_s: f64) -> Result<Vec<Segment>, HarError> {
    if preds.is_empty() {
        return Err(HarError::Empty("window predictions".into()));
    }
    if preds.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(HarError::Dimension("predictions are not time-ordered".into()));
    }
    let len = to_micros(window.length_s);
    let tick = to_micros(window.stride_s).max(1);
    let ends: Vec<i64> = preds.iter().map(|(t, _)| to_micros(*t)).collect();
    let start = ends[0] - len;
    let stop = *ends.last().unwrap();
    let n_ticks = ((stop - start) + tick - 1) / tick;

    // (label, start_us, end_us) runs.
    let mut runs: Vec<(String, i64, i64)> = Vec::new();
    let mut lo = 0;
    for k in 0..n_ticks {
        let a = start + k * tick;
        let b = (a + tick).min(stop);
        let mid2 = a + b; // twice the midpoint, avoids rounding
        while lo < ends.len() && 2 * ends[lo] < mid2 {
            lo += 1;
        }
        let mut votes: Vec<(&str, usize)> = Vec::new();
        let mut i = lo;
        while i < ends.len() && 2 * (ends[i] - len) <= mid2 {
            let l = preds[i].1.as_str();
            match votes.iter_mut().find(|(x, _)| *x == l) {
                Some(v) => v.1 += 1,
                None => votes.push((l, 1)),
            }
            i += 1;
        }
        votes.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(y.0)));
        let label = votes.first().map_or(super::NO_PREDICTION, |v| v.0);
        match runs.last_mut() {
            Some(r) if r.0 == label => r.2 = b,
            _ => runs.push((label.to_string(), a, b)),
        }
    }

    let min = to_micros(min_segment_s);
    loop {
        let short = runs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.2 - r.1 < min)
            .min_by_key(|(i, r)| (r.2 - r.1, *i))
            .map(|(i, _)| i);
        let Some(i) = short else { break };
        if runs.len() == 1 {
            break;
        }
        let left = (i > 0).then(|| runs[i - 1].2 - runs[i - 1].1);
        let right = runs.get(i + 1).map(|r| r.2 - r.1);
        let into_left = match (left, right) {
            (Some(l), Some(r)) => l >= r,
            (Some(_), None) => true,
            _ => false,
        };
        let r = runs.remove(i);
        if into_left {
            runs[i - 1].2 = r.2;
        } else {
            runs[i].1 = r.1;
        }
        // Coalesce neighbours that now share a label.
        let mut merged: Vec<(String, i64, i64)> = Vec::with_capacity(runs.len());
        for r in runs {
            match merged.last_mut() {
                Some(m) if m.0 == r.0 => m.2 = r.2,
                _ => merged.push(r),
            }
        }
        runs = merged;
    }
    Ok(runs
        .into_iter()
        .map(|(label, a, b)| Segment {
            start_s: a as f64 / 1e6,
            end_s: b as f64 / 1e6,
            label,
        })
        .collect())
}
