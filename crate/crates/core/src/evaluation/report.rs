//! CSV and JSON emission with fixed column orders and fixed float
//! formatting, so identical runs produce byte-identical files (wall-time
//! columns aside).

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::federation::RoundMetrics;

use super::{ArmRecord, SweepRecord};

pub const ARM_CSV_HEADER: &str =
    "arm,seed,class_id,bd_acc_before,bd_acc_after,test_acc_before,test_acc_after,wall_time_s";
pub const ROUND_CSV_HEADER: &str = "round,client,loss,acc";
pub const SWEEP_CSV_HEADER: &str = "param,value,trial,seed,target_acc,non_target_acc,wall_time_s";
pub const OVERLAP_CSV_HEADER: &str = "kind,class_id,trial,seed,target_acc,non_target_acc";

fn num(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_arm_csv(mut out: impl Write, records: &[ArmRecord]) -> Result<()> {
    writeln!(out, "{ARM_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.arm,
            r.seed,
            r.class_id,
            num(r.bd_acc_before),
            num(r.bd_acc_after),
            num(r.test_acc_before),
            num(r.test_acc_after),
            num(r.wall_time_s),
        )?;
    }
    Ok(())
}

pub fn write_round_csv(mut out: impl Write, records: &[RoundMetrics]) -> Result<()> {
    writeln!(out, "{ROUND_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{}",
            r.round,
            r.client,
            num(r.loss),
            num(r.accuracy)
        )?;
    }
    Ok(())
}

pub fn write_sweep_csv(mut out: impl Write, records: &[SweepRecord]) -> Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.param,
            num(r.value),
            r.trial,
            r.seed,
            num(r.target_acc),
            num(r.non_target_acc),
            num(r.wall_time_s),
        )?;
    }
    Ok(())
}

/// One overlapping-validation measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapRecord {
    pub kind: String,
    pub class_id: usize,
    pub trial: usize,
    pub seed: u64,
    pub target_acc: f64,
    pub non_target_acc: f64,
}

pub fn write_overlap_csv(mut out: impl Write, records: &[OverlapRecord]) -> Result<()> {
    writeln!(out, "{OVERLAP_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.kind,
            r.class_id,
            r.trial,
            r.seed,
            num(r.target_acc),
            num(r.non_target_acc),
        )?;
    }
    Ok(())
}

/// JSON mirror: the records plus the resolved config snapshot that
/// produced them.
pub fn write_json_mirror<T: Serialize>(
    mut out: impl Write,
    config: &serde_json::Value,
    records: &[T],
) -> Result<()> {
    let doc = serde_json::json!({
        "config": config,
        "records": records,
    });
    let text = serde_json::to_string_pretty(&doc).expect("serializable records");
    writeln!(out, "{text}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arm_csv_has_fixed_columns() {
        let record = ArmRecord {
            arm: "fedaf".into(),
            seed: 7,
            class_id: 3,
            bd_acc_before: 0.8125,
            bd_acc_after: 0.0125,
            test_acc_before: 0.9,
            test_acc_after: 0.875,
            wall_time_s: 1.5,
        };
        let mut buf = Vec::new();
        write_arm_csv(&mut buf, &[record]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), ARM_CSV_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "fedaf,7,3,0.812500,0.012500,0.900000,0.875000,1.500000"
        );
    }

    #[test]
    fn json_mirror_embeds_the_config() {
        let mut buf = Vec::new();
        let config = serde_json::json!({"seed": 1});
        write_json_mirror(&mut buf, &config, &[1, 2, 3]).unwrap();
        let doc: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(doc["config"]["seed"], 1);
        assert_eq!(doc["records"].as_array().unwrap().len(), 3);
    }
}
