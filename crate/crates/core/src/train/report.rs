//! CSV writers. Floats use Rust's shortest round-trip formatting, so equal
//! values always serialize to equal bytes.

use std::io::Write;

use super::{MetricsRecord, ScalingRow, SweepRow};
use crate::error::Result;

/// Metrics CSV. The `seconds` column is left empty unless `timing` is set,
/// which keeps reruns byte-identical.
pub fn write_metrics_csv<W: Write>(out: &mut W, records: &[MetricsRecord], timing: bool) -> Result<()> {
    let mut text = String::from("epoch,train_loss,train_acc,val_loss,val_acc,seconds,fb_count\n");
    for r in records {
        let secs = if timing { format!("{:.3}", r.seconds) } else { String::new() };
        text += &format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, secs, r.fb_count
        );
    }
    write_all(out, &text)
}

pub fn write_sweep_csv<W: Write>(out: &mut W, rows: &[SweepRow]) -> Result<()> {
    let mut text = String::from("epsilon,p,K,seed_count,mean_test_acc,std_test_acc\n");
    for r in rows {
        text += &format!(
            "{},{},{},{},{},{}\n",
            r.epsilon, r.p, r.k, r.seed_count, r.mean_test_acc, r.std_test_acc
        );
    }
    write_all(out, &text)
}

pub fn write_scaling_csv<W: Write>(out: &mut W, rows: &[ScalingRow]) -> Result<()> {
    let mut text = String::from("size,seed_count,standard_acc,dropattack_acc,improvement\n");
    for r in rows {
        text += &format!(
            "{},{},{},{},{}\n",
            r.size, r.seed_count, r.standard_acc, r.dropattack_acc, r.improvement
        );
    }
    write_all(out, &text)
}

fn write_all<W: Write>(out: &mut W, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| crate::Error::io("<csv output>", e))
}
