//! CSV outputs: the training log and per-sample evaluation metrics.

use std::fmt::Write as _;

use ctsn_core::training::LogRow;

pub const LOG_HEADER: &str = "epoch,stage,loss";
pub const METRICS_HEADER: &str = "sample,E_dist_m,E_norm_deg,penetrated_before,penetrated_after";

pub fn log_line(row: &LogRow) -> String {
    format!("{},{},{}", row.epoch, row.stage_label(), row.loss)
}

pub fn format_log(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&log_line(r));
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub sample: String,
    pub e_dist: f64,
    pub e_norm: f64,
    /// Penetration counts before and after resolution; `None` without a body.
    pub penetrated: Option<(usize, usize)>,
}

pub fn format_metrics(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{},{},", r.sample, r.e_dist, r.e_norm);
        match r.penetrated {
            Some((b, a)) => {
                let _ = writeln!(s, "{b},{a}");
            }
            None => s.push_str(",\n"),
        }
    }
    s
}
