//! Subcommand implementations: dataset assembly, fan-out over trials, and
//! artifact writing.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;

use fedforget::data::partition_iid;
use fedforget::evaluation::report::{
    write_arm_csv, write_json_mirror, write_overlap_csv, write_round_csv, write_sweep_csv,
    OverlapRecord,
};
use fedforget::evaluation::{
    overlap_validation, run_arm, sweep, Arm, ArmRecord, MetricsRecord, Scenario, SweepParameter,
    SweepSpec,
};
use fedforget::federation::run_federated;
use fedforget::nn::accuracy;
use fedforget::seed;
use fedforget::unlearning::FakeLabelKind;

use crate::config::ExperimentConfig;

pub fn ensure_out_dir(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))
}

fn write_config_snapshot(out: &Path, config: &ExperimentConfig) -> anyhow::Result<()> {
    let file = File::create(out.join("config.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &config.snapshot())?;
    Ok(())
}

/// `train`: FedAvg only. Writes per-round metrics and prints the final
/// global test accuracy.
pub fn train(config: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    ensure_out_dir(out)?;
    write_config_snapshot(out, config)?;

    let (train_ds, test_ds) = config.build_datasets()?;
    let spec = config.model_spec(train_ds.feature_dim(), train_ds.class_count())?;
    let fed = config.federation_config();
    let partition = partition_iid(&train_ds, fed.client_count, config.seed)?;
    let (state, rounds) = run_federated(&fed, &spec, &partition, &train_ds)?;
    let test_acc = accuracy(&state.global_params, &spec, &test_ds.as_batch()?)?;

    let csv_path = out.join("train_metrics.csv");
    write_round_csv(BufWriter::new(File::create(&csv_path)?), &rounds)?;
    write_json_mirror(
        BufWriter::new(File::create(out.join("train_metrics.json"))?),
        &config.snapshot(),
        &rounds,
    )?;
    println!(
        "train: {} rounds x {} clients, final test acc {:.4} -> {}",
        fed.rounds,
        fed.client_count,
        test_acc,
        csv_path.display()
    );
    Ok(())
}

/// `unlearn`: full pipeline for one arm over `trials` seeds.
pub fn unlearn(
    config: &ExperimentConfig,
    arm: Arm,
    label_kind: Option<FakeLabelKind>,
    class: Option<usize>,
    trials: Option<usize>,
    out: &Path,
) -> anyhow::Result<()> {
    ensure_out_dir(out)?;
    write_config_snapshot(out, config)?;

    let mut scenario = config.scenario()?;
    if let Some(kind) = label_kind {
        scenario.kind = kind;
    }
    if let Some(class) = class {
        scenario.target_class = class;
    }
    let trials = trials.unwrap_or(config.trials);

    let outcomes: Vec<_> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let trial_seed = seed::mix(&[config.seed, seed::TAG_TRIAL, trial as u64]);
            run_arm(&scenario, arm, trial_seed)
        })
        .collect::<Result<_, _>>()?;

    let records: Vec<ArmRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    let metrics: Vec<MetricsRecord> = outcomes
        .iter()
        .map(|o| MetricsRecord {
            arm: o.record.arm.clone(),
            bd_acc: o.record.bd_acc_after,
            test_acc: o.record.test_acc_after,
            per_class_acc: o.per_class_acc_after.clone(),
            wall_time_seconds: o.record.wall_time_s,
            seed: o.record.seed,
            config: config.snapshot(),
        })
        .collect();

    let csv_path = out.join(format!("unlearn_{arm}_metrics.csv"));
    write_arm_csv(BufWriter::new(File::create(&csv_path)?), &records)?;
    write_json_mirror(
        BufWriter::new(File::create(out.join(format!("unlearn_{arm}_metrics.json")))?),
        &config.snapshot(),
        &metrics,
    )?;

    for r in &records {
        println!(
            "{} class {} seed {}: bd {:.4} -> {:.4}, test {:.4} -> {:.4}, {:.2}s",
            r.arm,
            r.class_id,
            r.seed,
            r.bd_acc_before,
            r.bd_acc_after,
            r.test_acc_before,
            r.test_acc_after,
            r.wall_time_s
        );
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}

/// `overlap`: the mixed-task ablation over all classes.
pub fn overlap(
    config: &ExperimentConfig,
    kinds: Vec<FakeLabelKind>,
    trials: Option<usize>,
    out: &Path,
) -> anyhow::Result<()> {
    ensure_out_dir(out)?;
    write_config_snapshot(out, config)?;

    let (train_ds, test_ds) = config.build_datasets()?;
    let spec = config.model_spec(train_ds.feature_dim(), train_ds.class_count())?;
    let fed = config.federation_config();
    let partition = partition_iid(&train_ds, fed.client_count, config.seed)?;
    let client_data = train_ds.batch(partition.client(config.unlearn.client))?;
    let test = test_ds.as_batch()?;
    let overlap_cfg = config.overlap_config();
    let trials = trials.unwrap_or(config.trials);

    let classes = train_ds.class_count();
    let jobs: Vec<(usize, usize, usize)> = (0..kinds.len())
        .flat_map(|k| (0..classes).flat_map(move |c| (0..trials).map(move |t| (k, c, t))))
        .collect();
    let records: Vec<OverlapRecord> = jobs
        .into_par_iter()
        .map(|(k, class, trial)| {
            let kind = kinds[k];
            let run_seed = seed::mix(&[
                config.seed,
                seed::TAG_OVERLAP,
                k as u64,
                class as u64,
                trial as u64,
            ]);
            let (target_acc, non_target_acc) = overlap_validation(
                &spec,
                &client_data,
                &test,
                class,
                kind,
                &overlap_cfg,
                run_seed,
            )?;
            Ok(OverlapRecord {
                kind: kind.to_string(),
                class_id: class,
                trial,
                seed: run_seed,
                target_acc,
                non_target_acc,
            })
        })
        .collect::<anyhow::Result<_>>()?;

    let csv_path = out.join("overlap_metrics.csv");
    write_overlap_csv(BufWriter::new(File::create(&csv_path)?), &records)?;
    write_json_mirror(
        BufWriter::new(File::create(out.join("overlap_metrics.json"))?),
        &config.snapshot(),
        &records,
    )?;
    for r in &records {
        println!(
            "overlap {} class {} trial {}: target {:.4}, non-target {:.4}",
            r.kind, r.class_id, r.trial, r.target_acc, r.non_target_acc
        );
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}

/// `sweep`: one unlearning experiment per (value, trial).
pub fn run_sweep(
    config: &ExperimentConfig,
    parameter: SweepParameter,
    values: Vec<f64>,
    trials: Option<usize>,
    out: &Path,
) -> anyhow::Result<()> {
    ensure_out_dir(out)?;
    write_config_snapshot(out, config)?;

    let scenario: Scenario = config.scenario()?;
    let spec = SweepSpec {
        parameter,
        values,
        trials: trials.unwrap_or(config.trials),
    };
    let records = sweep(&scenario, &spec, config.seed)?;

    let csv_path = out.join("sweep_metrics.csv");
    write_sweep_csv(BufWriter::new(File::create(&csv_path)?), &records)?;
    write_json_mirror(
        BufWriter::new(File::create(out.join("sweep_metrics.json"))?),
        &config.snapshot(),
        &records,
    )?;
    for r in &records {
        println!(
            "sweep {}={} trial {}: target {:.4}, non-target {:.4}",
            r.param, r.value, r.trial, r.target_acc, r.non_target_acc
        );
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}

/// Resolve the output directory: flag/env beats config beats `runs/`.
pub fn resolve_out(flag: Option<PathBuf>, config: Option<&ExperimentConfig>) -> PathBuf {
    flag.or_else(|| config.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("runs"))
}
