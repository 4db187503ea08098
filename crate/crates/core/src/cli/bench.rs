//! Mock decoder workload and wall-clock timing.

use std::hint::black_box;
use std::time::Instant;

use serde::Serialize;

use crate::metrics::CostModel;

/// Dependent multiply-adds per cost unit.
const OPS_PER_UNIT: u32 = 4;

/// Burns `units` cost units of serial floating-point work.
pub fn burn(units: u64) -> f64 {
    let mut acc = black_box(1.000_000_1f64);
    let k = black_box(0.999_999_9f64);
    for _ in 0..units {
        for _ in 0..OPS_PER_UNIT {
            acc = acc * k + 1e-9;
        }
    }
    acc
}

/// Runs the mock decoder once over sequences of the given lengths; the work
/// for each sequence is `round(cost(L))` units.
pub fn decode_batch(cost: &CostModel, lengths: &[usize]) -> f64 {
    lengths
        .iter()
        .map(|&l| burn(cost.cost(l).round() as u64))
        .sum()
}

/// Min / median / max wall-clock seconds over `reps` runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub reps: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Times the mock decoder on the current thread.
pub fn time_batch(cost: &CostModel, lengths: &[usize], reps: usize) -> Timing {
    let reps = reps.max(1);
    let mut samples: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            black_box(decode_batch(cost, black_box(lengths)));
            // Guard against a zero reading on coarse clocks.
            start.elapsed().as_secs_f64().max(1e-9)
        })
        .collect();
    let med = median(&mut samples);
    Timing {
        min: samples[0],
        median: med,
        max: samples[reps - 1],
        reps,
    }
}
