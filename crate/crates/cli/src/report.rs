//! `report`: aggregate metrics CSVs into mean ± std tables.
//!
//! The schema of each file is recognized by its header line; files in a
//! directory argument are discovered by extension.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use fedforget::evaluation::report::{
    ARM_CSV_HEADER, OVERLAP_CSV_HEADER, ROUND_CSV_HEADER, SWEEP_CSV_HEADER,
};

#[derive(Default)]
struct Stat {
    values: Vec<f64>,
}

impl Stat {
    fn push(&mut self, v: f64) {
        self.values.push(v);
    }

    fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }

    fn std(&self) -> f64 {
        if self.values.len() < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
            / (self.values.len() - 1) as f64)
            .sqrt()
    }

    fn cell(&self) -> String {
        format!("{:.4} ± {:.4}", self.mean(), self.std())
    }
}

fn collect_csvs(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        bail!("no CSV files found under the given inputs");
    }
    Ok(files)
}

fn read_rows(path: &Path) -> anyhow::Result<(String, Vec<csv::StringRecord>)> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    let rows = reader.records().collect::<Result<Vec<_>, _>>()?;
    Ok((header, rows))
}

fn f(rec: &csv::StringRecord, i: usize) -> f64 {
    rec.get(i).and_then(|s| s.parse().ok()).unwrap_or(f64::NAN)
}

/// Aggregate every input CSV and render the tables.
pub fn render(inputs: &[PathBuf]) -> anyhow::Result<String> {
    let mut out = String::new();
    // (table, key) -> column label -> stats
    let mut arm: BTreeMap<(String, String), BTreeMap<&'static str, Stat>> = BTreeMap::new();
    let mut sweeps: BTreeMap<(String, String), BTreeMap<&'static str, Stat>> = BTreeMap::new();
    let mut overlaps: BTreeMap<(String, String), BTreeMap<&'static str, Stat>> = BTreeMap::new();
    let mut rounds: BTreeMap<usize, BTreeMap<&'static str, Stat>> = BTreeMap::new();

    for path in collect_csvs(inputs)? {
        let (header, rows) = read_rows(&path)?;
        match header.as_str() {
            ARM_CSV_HEADER => {
                for r in &rows {
                    let key = (r.get(0).unwrap_or("?").to_string(), r.get(2).unwrap_or("?").to_string());
                    let entry = arm.entry(key).or_default();
                    entry.entry("bd_before").or_default().push(f(r, 3));
                    entry.entry("bd_after").or_default().push(f(r, 4));
                    entry.entry("test_before").or_default().push(f(r, 5));
                    entry.entry("test_after").or_default().push(f(r, 6));
                    entry.entry("wall_s").or_default().push(f(r, 7));
                }
            }
            SWEEP_CSV_HEADER => {
                for r in &rows {
                    let key = (r.get(0).unwrap_or("?").to_string(), r.get(1).unwrap_or("?").to_string());
                    let entry = sweeps.entry(key).or_default();
                    entry.entry("target_acc").or_default().push(f(r, 4));
                    entry.entry("non_target_acc").or_default().push(f(r, 5));
                }
            }
            OVERLAP_CSV_HEADER => {
                for r in &rows {
                    let key = (r.get(0).unwrap_or("?").to_string(), r.get(1).unwrap_or("?").to_string());
                    let entry = overlaps.entry(key).or_default();
                    entry.entry("target_acc").or_default().push(f(r, 4));
                    entry.entry("non_target_acc").or_default().push(f(r, 5));
                }
            }
            ROUND_CSV_HEADER => {
                for r in &rows {
                    let round: usize = r.get(0).and_then(|s| s.parse().ok()).unwrap_or(0);
                    let entry = rounds.entry(round).or_default();
                    entry.entry("loss").or_default().push(f(r, 2));
                    entry.entry("acc").or_default().push(f(r, 3));
                }
            }
            other => bail!("{}: unrecognized CSV header: {other}", path.display()),
        }
    }

    let mut table = |title: &str,
                     key_names: (&str, &str),
                     data: &BTreeMap<(String, String), BTreeMap<&'static str, Stat>>,
                     columns: &[&str]| {
        if data.is_empty() {
            return;
        }
        out.push_str(&format!("# {title}\n"));
        out.push_str(&format!("{:<12} {:<10}", key_names.0, key_names.1));
        for c in columns {
            out.push_str(&format!(" {c:>20}"));
        }
        out.push('\n');
        for ((a, b), cells) in data {
            out.push_str(&format!("{a:<12} {b:<10}"));
            for c in columns {
                let cell = cells.get(c).map_or_else(|| "-".into(), Stat::cell);
                out.push_str(&format!(" {cell:>20}"));
            }
            out.push('\n');
        }
        out.push('\n');
    };

    table(
        "unlearning arms (mean ± std over trials)",
        ("arm", "class"),
        &arm,
        &["bd_before", "bd_after", "test_before", "test_after", "wall_s"],
    );
    table(
        "sweep (mean ± std over trials)",
        ("param", "value"),
        &sweeps,
        &["target_acc", "non_target_acc"],
    );
    table(
        "overlap validation (mean ± std over trials)",
        ("kind", "class"),
        &overlaps,
        &["target_acc", "non_target_acc"],
    );

    if !rounds.is_empty() {
        out.push_str("# training rounds (mean ± std over clients)\n");
        out.push_str(&format!("{:<8} {:>20} {:>20}\n", "round", "loss", "acc"));
        for (round, cells) in &rounds {
            out.push_str(&format!(
                "{:<8} {:>20} {:>20}\n",
                round,
                cells.get("loss").map_or_else(|| "-".into(), Stat::cell),
                cells.get("acc").map_or_else(|| "-".into(), Stat::cell),
            ));
        }
        out.push('\n');
    }

    Ok(out)
}
