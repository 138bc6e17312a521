pub mod binadd;
pub mod exact;
pub mod oracle;
pub mod simulate;
pub mod verify;

use starlab_core::{IterationTrace, TraceRow};

use crate::chart::Series;

pub fn exact_series(trace: &IterationTrace, pick: fn(&TraceRow) -> f64) -> Vec<(f64, f64)> {
    trace.rows.iter().map(|r| (r.t as f64, pick(r))).collect()
}

pub fn series(label: &str, points: Vec<(f64, f64)>, dashed: bool) -> Series<'_> {
    Series {
        label,
        points,
        dashed,
    }
}
