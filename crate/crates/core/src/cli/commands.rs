use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::manifest::Run;
use super::{Aggregate, Cli, Command, Format, RobustnessTarget, SeedArgs, TrainArgs};
use crate::datagen::{generate, DataConfig};
use crate::error::{Error, Result};
use crate::kstat::{
    k_robustness, k_run, k_sweep, median_k_by_value, reference_agreement, robustness_to_csv, sweep_to_csv, Hyper, KRun,
    Knob,
};
use crate::recommend::{best_by_average, leave_one_out, method_profiles, profiles_to_csv, recommend_closest, Strategy};
use crate::training::{BatchMode, Objective};
use crate::validity::stats::median;
use crate::validity::{
    agreement_matrix, build_report, convergent_points, method_ranks, read_stats_csv, GroupAccuracyTable, KTable,
    ResultsTable, Thresholds, ValidityReport,
};

fn json_bytes(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn utf8(bytes: Vec<u8>, path: &Path) -> Result<String> {
    String::from_utf8(bytes).map_err(|_| Error::Schema {
        file: path.display().to_string(),
        row: 0,
        message: "file is not valid UTF-8".into(),
    })
}

fn load_data_config(run: &mut Run, path: &Path) -> Result<DataConfig> {
    let text = utf8(run.read_input(path)?, path)?;
    DataConfig::from_json(&text).map_err(|e| e.with_context(path.display().to_string()))
}

fn name(path: &Path) -> String {
    path.display().to_string()
}

fn load_results(run: &mut Run, path: &Path) -> Result<ResultsTable> {
    ResultsTable::from_csv(run.read_input(path)?.as_slice(), &name(path))
}

fn load_k(run: &mut Run, path: &Path) -> Result<KTable> {
    KTable::from_csv(run.read_input(path)?.as_slice(), &name(path))
}

fn load_validity(run: &mut Run, path: &Path) -> Result<ValidityReport> {
    let bytes = run.read_input(path)?;
    if path.extension().is_some_and(|e| e == "csv") {
        let stats = read_stats_csv(bytes.as_slice(), &name(path))?;
        Ok(ValidityReport::from_stats(stats, Thresholds::default()))
    } else {
        serde_json::from_slice(&bytes).map_err(|e| Error::from(e).with_context(name(path)))
    }
}

/// Emits one document: `file` in the output directory, or stdout.
fn emit(run: &mut Run, file: &str, bytes: Vec<u8>) {
    run.output(file, bytes);
}

pub(super) fn dispatch(cli: &Cli) -> Result<()> {
    let fmt = |default| cli.format.unwrap_or(default);
    let mut run = Run::new(command_name(&cli.command), cli.out.clone());
    match &cli.command {
        Command::Simulate { config, seed } => {
            let mut cfg = load_data_config(&mut run, config)?;
            if let Some(s) = seed {
                cfg.seed = *s;
            }
            run.set_config(&cfg)?;
            run.set_seeds(&[cfg.seed]);
            let ds = generate(&cfg)?;
            emit(&mut run, "dataset.csv", csv_bytes(|w| ds.to_csv(w))?);
            if run.has_out_dir() {
                run.output("config.json", json_bytes(&cfg)?);
            }
        }
        Command::K {
            config,
            reference,
            seeds,
            aggregate,
            train,
        } => cmd_k(
            &mut run,
            config,
            *reference,
            seeds,
            *aggregate,
            train,
            fmt(Format::Json),
        )?,
        Command::Sweep {
            base,
            knob,
            values,
            seeds,
            reference,
            aggregate,
            train,
        } => cmd_sweep(
            &mut run,
            base,
            *knob,
            values,
            seeds,
            *reference,
            *aggregate,
            train,
            fmt(Format::Csv),
        )?,
        Command::Robustness {
            base,
            hyper,
            settings,
            reference_setting,
            rhos,
            seed,
            reference,
            train,
        } => {
            let base_cfg = load_data_config(&mut run, base)?;
            let pipeline = train.pipeline()?;
            let probes = rhos
                .iter()
                .enumerate()
                .map(|(i, &rho)| {
                    let cfg = DataConfig {
                        confounder_strength: rho,
                        seed: seed + i as u64,
                        ..base_cfg.clone()
                    };
                    cfg.validate().map(|_| cfg)
                })
                .collect::<Result<Vec<_>>>()?;
            run.set_seeds(&probes.iter().map(|p| p.seed).collect::<Vec<_>>());
            if *hyper == RobustnessTarget::Reference {
                run.set_config(json!({ "base": base_cfg, "pipeline": pipeline, "rhos": rhos, "target": hyper }))?;
                let (r, rw, gdro) = reference_agreement(&probes, &pipeline)?;
                match fmt(Format::Csv) {
                    Format::Json => emit(
                        &mut run,
                        "robustness.json",
                        json_bytes(&json!({ "pearson_r": r, "rhos": rhos, "k_reweight": rw, "k_groupdro": gdro }))?,
                    ),
                    Format::Csv => {
                        let mut text = String::from("probe,confounder_strength,k_reweight,k_groupdro,pearson_r\n");
                        for (i, rho) in rhos.iter().enumerate() {
                            text.push_str(&format!("{i},{rho},{},{},{r}\n", rw[i], gdro[i]));
                        }
                        emit(&mut run, "robustness.csv", text.into_bytes());
                    }
                }
            } else {
                let target = match hyper {
                    RobustnessTarget::LearningRate => Hyper::LearningRate,
                    _ => Hyper::BatchSize,
                };
                if settings.is_empty() {
                    return Err(Error::config("settings", "required for this robustness target"));
                }
                let reference_setting = match (reference_setting, target, pipeline.train.batch_mode) {
                    (Some(s), _, _) => *s,
                    (None, Hyper::LearningRate, _) => pipeline.train.learning_rate,
                    (None, Hyper::BatchSize, BatchMode::Minibatch(b)) => b as f64,
                    (None, Hyper::BatchSize, BatchMode::Full) => {
                        return Err(Error::config("reference_setting", "required for batch_size"))
                    }
                };
                run.set_config(json!({
                    "base": base_cfg, "pipeline": pipeline, "rhos": rhos, "target": hyper,
                    "settings": settings, "reference_setting": reference_setting, "reference": reference,
                }))?;
                let rows = k_robustness(target, settings, reference_setting, &probes, *reference, &pipeline)?;
                match fmt(Format::Csv) {
                    Format::Json => emit(&mut run, "robustness.json", json_bytes(&rows)?),
                    Format::Csv => emit(&mut run, "robustness.csv", csv_bytes(|w| robustness_to_csv(&rows, w))?),
                }
            }
        }
        Command::Validate {
            results,
            groups,
            k,
            stats,
            thresholds,
        } => {
            run.set_config(thresholds)?;
            let report = if let Some(stats) = stats {
                let rows = read_stats_csv(run.read_input(stats)?.as_slice(), &name(stats))?;
                ValidityReport::from_stats(rows, *thresholds)
            } else {
                let (results, groups, k) = (
                    results.as_ref().expect("clap requires results"),
                    groups.as_ref().expect("clap requires groups"),
                    k.as_ref().expect("clap requires k"),
                );
                let results = load_results(&mut run, results)?;
                let groups = GroupAccuracyTable::from_csv(run.read_input(groups)?.as_slice(), &name(groups))?;
                let k_table = load_k(&mut run, k)?;
                let (report, agreement) = build_report(&results, &groups, &k_table, *thresholds);
                let prefilter: BTreeSet<String> = report
                    .rows
                    .iter()
                    .filter(|r| r.flags.erm_failure && r.flags.disc_power && r.stats.k.is_some())
                    .map(|r| r.stats.benchmark.clone())
                    .collect();
                if run.has_out_dir() {
                    run.output("agreement.csv", csv_bytes(|w| agreement.to_csv(w))?);
                    let mut text = String::from("benchmark,partner,abs_dk,pearson_r\n");
                    for b in &prefilter {
                        for p in convergent_points(&agreement, &k_table, &prefilter, b)? {
                            text.push_str(&format!("{},{},{},{}\n", p.benchmark, p.partner, p.abs_dk, p.pearson_r));
                        }
                    }
                    run.output("convergent.csv", text.into_bytes());
                }
                report
            };
            let table = csv_bytes(|w| report.to_csv(w))?;
            let doc = json_bytes(&report)?;
            if run.has_out_dir() {
                run.output("validity.json", doc);
                run.output("validity.csv", table);
            } else {
                match fmt(Format::Json) {
                    Format::Json => emit(&mut run, "validity.json", doc),
                    Format::Csv => emit(&mut run, "validity.csv", table),
                }
            }
        }
        Command::Agreement { results, k } => {
            let table = load_results(&mut run, results)?;
            let k_table = k.as_ref().map(|p| load_k(&mut run, p)).transpose()?;
            let matrix = agreement_matrix(&table);
            match fmt(Format::Csv) {
                Format::Json => emit(&mut run, "agreement.json", json_bytes(&matrix)?),
                Format::Csv => emit(&mut run, "agreement.csv", csv_bytes(|w| matrix.to_csv(w))?),
            }
            if run.has_out_dir() {
                let mut text = String::from("benchmark,method,wg_test_acc,rank\n");
                for b in table.benchmarks() {
                    if let Ok(ranks) = method_ranks(&table, b) {
                        for (m, rank) in ranks {
                            let acc = table.get(b, &m).expect("ranked methods have cells");
                            text.push_str(&format!("{b},{m},{acc},{rank}\n"));
                        }
                    }
                }
                run.output("ranks.csv", text.into_bytes());
                if let Some(k_table) = &k_table {
                    let mut text = String::from("benchmark_a,benchmark_b,abs_dk,pearson_r\n");
                    for (i, a) in matrix.benchmarks.iter().enumerate() {
                        for b in &matrix.benchmarks[i + 1..] {
                            let (Some(ka), Some(kb), Some(r)) = (k_table.get(a), k_table.get(b), matrix.get(a, b))
                            else {
                                continue;
                            };
                            if ka.family == kb.family {
                                text.push_str(&format!("{a},{b},{},{r}\n", (ka.k - kb.k).abs()));
                            }
                        }
                    }
                    run.output("dk_agreement.csv", text.into_bytes());
                }
            }
        }
        Command::Recommend {
            results,
            k,
            validity,
            test_k,
            test_family,
            test_dataset,
            loo,
        } => {
            let table = load_results(&mut run, results)?;
            let k_table = load_k(&mut run, k)?;
            let report = load_validity(&mut run, validity)?;
            if *loo {
                run.set_config(json!({ "mode": "leave_one_out" }))?;
                let loo = leave_one_out(&table, &k_table, &report)?;
                let table_csv = csv_bytes(|w| loo.to_csv(w))?;
                if run.has_out_dir() {
                    run.output("loo.csv", table_csv);
                    run.output("loo.json", json_bytes(&loo)?);
                } else {
                    match fmt(Format::Csv) {
                        Format::Json => emit(&mut run, "loo.json", json_bytes(&loo)?),
                        Format::Csv => emit(&mut run, "loo.csv", table_csv),
                    }
                }
            } else {
                let listed = test_dataset.as_deref().and_then(|t| k_table.get(t));
                let test_k = test_k
                    .or(listed.map(|e| e.k))
                    .ok_or_else(|| Error::config("test_k", "required unless --test-dataset has a K value"))?;
                let family = test_family
                    .or(listed.map(|e| e.family))
                    .ok_or_else(|| Error::config("test_family", "required unless --test-dataset has a K value"))?;
                run.set_config(json!({ "test_k": test_k, "test_family": family, "test_dataset": test_dataset }))?;
                let exclude: BTreeSet<String> = test_dataset.iter().cloned().collect();
                let usable = |names: BTreeSet<String>| -> BTreeSet<String> {
                    names
                        .into_iter()
                        .filter(|b| table.contains(b) && !exclude.contains(b))
                        .collect()
                };
                let reported = usable(report.benchmarks());
                let valid = usable(report.valid_benchmarks());
                let closest = recommend_closest(&table, test_k, family, &k_table, &valid, &exclude)?;
                let all = best_by_average(&table, &reported, Strategy::AllAvg)?;
                let valid_avg = best_by_average(&table, &valid, Strategy::ValidAvg)?;
                let doc = json!({
                    "test_k": test_k,
                    "test_family": family,
                    "recommendations": [all, valid_avg, closest],
                });
                emit(&mut run, "recommendation.json", json_bytes(&doc)?);
            }
        }
        Command::Profiles { results, k } => {
            let table = load_results(&mut run, results)?;
            let k_table = load_k(&mut run, k)?;
            let profiles = method_profiles(&table, &k_table);
            match fmt(Format::Csv) {
                Format::Json => emit(&mut run, "profiles.json", json_bytes(&profiles)?),
                Format::Csv => emit(&mut run, "profiles.csv", csv_bytes(|w| profiles_to_csv(&profiles, w))?),
            }
        }
    }
    run.finish()
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate { .. } => "simulate",
        Command::K { .. } => "k",
        Command::Sweep { .. } => "sweep",
        Command::Robustness { .. } => "robustness",
        Command::Validate { .. } => "validate",
        Command::Agreement { .. } => "agreement",
        Command::Recommend { .. } => "recommend",
        Command::Profiles { .. } => "profiles",
    }
}

#[derive(Serialize)]
struct KDocument<'a> {
    reference: Objective,
    data: &'a DataConfig,
    runs: &'a [KRun],
    #[serde(skip_serializing_if = "Option::is_none")]
    median_k: Option<f64>,
}

fn cmd_k(
    run: &mut Run,
    config: &Path,
    reference: Objective,
    seeds: &SeedArgs,
    aggregate: Option<Aggregate>,
    train: &TrainArgs,
    format: Format,
) -> Result<()> {
    let cfg = load_data_config(run, config)?;
    let pipeline = train.pipeline()?;
    let seeds = seeds.resolve(cfg.seed);
    run.set_config(json!({ "data": cfg, "pipeline": pipeline, "reference": reference, "aggregate": aggregate }))?;
    run.set_seeds(&seeds);
    let runs = seeds
        .par_iter()
        .map(|&s| k_run(&cfg, &pipeline, reference, s).map_err(|e| e.with_context(format!("seed {s}"))))
        .collect::<Result<Vec<_>>>()?;
    let ks: Vec<f64> = runs.iter().map(|r| r.estimate.k).collect();
    let median_k = aggregate.map(|Aggregate::Median| median(&ks)).transpose()?;
    match format {
        Format::Json => {
            let doc = KDocument {
                reference,
                data: &cfg,
                runs: &runs,
                median_k,
            };
            emit(run, "k.json", json_bytes(&doc)?);
        }
        Format::Csv => {
            let mut text = String::new();
            if let Some(m) = median_k {
                text.push_str(&format!(
                    "reference,n_seeds,median_k\n{},{},{m}\n",
                    reference.as_str(),
                    ks.len()
                ));
            } else {
                text.push_str(
                    "seed,reference,k,ll_rw,ll_erm,worst_group,n_worst,erm_best_epoch,reference_best_epoch\n",
                );
                for r in &runs {
                    let e = &r.estimate;
                    text.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{}\n",
                        e.seed,
                        e.reference.as_str(),
                        e.k,
                        e.ll_rw,
                        e.ll_erm,
                        e.worst_group,
                        e.n_worst,
                        r.erm_convergence.best_epoch,
                        r.reference_convergence.best_epoch
                    ));
                }
            }
            emit(run, "k.csv", text.into_bytes());
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    run: &mut Run,
    base: &Path,
    knob: Knob,
    values: &[f64],
    seeds: &SeedArgs,
    reference: Objective,
    aggregate: Option<Aggregate>,
    train: &TrainArgs,
    format: Format,
) -> Result<()> {
    let cfg = load_data_config(run, base)?;
    let pipeline = train.pipeline()?;
    let seeds = seeds.resolve(cfg.seed);
    run.set_config(json!({
        "base": cfg, "pipeline": pipeline, "knob": knob, "values": values,
        "reference": reference, "aggregate": aggregate,
    }))?;
    run.set_seeds(&seeds);
    for &v in values {
        knob.apply(&cfg, v)
            .validate()
            .map_err(|e| e.with_context(format!("{knob}={v}")))?;
    }
    let rows = k_sweep(&cfg, knob, values, &seeds, reference, &pipeline)?;
    let medians = aggregate.map(|Aggregate::Median| median_k_by_value(&rows));
    let median_csv = |m: &[(f64, f64)]| {
        let mut text = String::from("knob,value,median_k\n");
        for (v, k) in m {
            text.push_str(&format!("{knob},{v},{k}\n"));
        }
        text.into_bytes()
    };
    match format {
        Format::Json => {
            let medians: Option<Vec<_>> = medians.map(|m| {
                m.into_iter()
                    .map(|(value, k)| json!({ "value": value, "median_k": k }))
                    .collect()
            });
            emit(
                run,
                "sweep.json",
                json_bytes(&json!({ "rows": rows, "medians": medians }))?,
            );
        }
        Format::Csv => match medians {
            Some(m) if run.has_out_dir() => {
                run.output("sweep.csv", csv_bytes(|w| sweep_to_csv(&rows, w))?);
                run.output("sweep_median.csv", median_csv(&m));
            }
            Some(m) => emit(run, "sweep_median.csv", median_csv(&m)),
            None => emit(run, "sweep.csv", csv_bytes(|w| sweep_to_csv(&rows, w))?),
        },
    }
    Ok(())
}
