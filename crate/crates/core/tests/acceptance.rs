//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use bench_validity::datagen::{generate, DataConfig, Split};
use bench_validity::kstat::{
    k_robustness, k_sweep, median_k_by_value, mutual_information, mutual_information_from_joint, reference_agreement,
    Hyper, Knob, PipelineConfig,
};
use bench_validity::recommend::{leave_one_out, LooTable};
use bench_validity::training::{evaluate_groups, train, Architecture, Objective, TrainConfig};
use bench_validity::validity::{agreement_matrix, median};
use common::oracle;
use rayon::prelude::*;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn fmt_medians(m: &[(f64, f64)]) -> String {
    m.iter()
        .map(|(v, k)| format!("{v}:{k:.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn strictly(m: &[(f64, f64)], f: impl Fn(f64) -> f64, increasing: bool) -> bool {
    m.windows(2).all(|w| {
        let (a, b) = (f(w[0].1), f(w[1].1));
        if increasing {
            b > a
        } else {
            b < a
        }
    })
}

fn sweep(base: &DataConfig, knob: Knob, values: &[f64]) -> Vec<(f64, f64)> {
    let rows = k_sweep(
        base,
        knob,
        values,
        &SEEDS,
        Objective::Reweight,
        &PipelineConfig::default(),
    )
    .expect("sweep runs");
    median_k_by_value(&rows)
}

fn at_rho(rho: f64) -> DataConfig {
    DataConfig {
        confounder_strength: rho,
        ..DataConfig::default()
    }
}

fn table_partition() -> Outcome {
    let report = common::validity();
    let invalid = report.invalid_benchmarks();
    let valid = report.valid_benchmarks();
    let want: BTreeSet<String> = ["AvP", "ImageNetBG", "MultiNLI"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    outcome(
        invalid == want && valid.len() == 8 && report.rows.len() == 11,
        format!(
            "invalid={invalid:?}, {} valid of {} rows",
            valid.len(),
            report.rows.len()
        ),
    )
}

fn loo_replay() -> Outcome {
    let loo = leave_one_out(&common::results(), &common::k_table(), &common::validity()).unwrap();
    let expected = LooTable::from_csv(
        fs::File::open(common::fixture("expected_loo.csv")).unwrap(),
        "expected_loo.csv",
    )
    .unwrap();
    type Picks = Vec<(String, Option<String>, Option<String>, Option<(String, String)>)>;
    let picks = |t: &LooTable| -> Picks {
        t.rows
            .iter()
            .map(|r| {
                (
                    r.test_dataset.clone(),
                    r.all_avg.as_ref().map(|p| p.method.clone()),
                    r.valid_avg.as_ref().map(|p| p.method.clone()),
                    r.closest.as_ref().map(|c| (c.benchmark.clone(), c.method.clone())),
                )
            })
            .collect()
    };
    let s = &loo.summary;
    let dollar = loo
        .row("DollarStreet")
        .and_then(|r| r.closest.as_ref())
        .map(|c| (c.benchmark.as_str(), c.method.as_str()));
    let picks_match = picks(&loo) == picks(&expected);
    outcome(
        picks_match
            && (s.closest_wins, s.closest_eligible) == (5, 8)
            && (s.valid_beats_all, s.average_rows) == (6, 9)
            && dollar == Some(("NICO++", "Focal")),
        format!(
            "closest wins {}/{}, valid>all {}/{}, DollarStreet -> {dollar:?}, picks match oracle: {picks_match}",
            s.closest_wins, s.closest_eligible, s.valid_beats_all, s.average_rows
        ),
    )
}

fn k_monotone_in_rho() -> Outcome {
    let m = sweep(&DataConfig::default(), Knob::Confounder, &[0.5, 0.75, 0.95]);
    let inc = strictly(&m, |k| k, true);
    let low = m[0].1.abs() < 0.1;
    let high = m[2].1 > 0.3;
    outcome(
        inc && low && high,
        format!(
            "median K {} (increasing {inc}, |K(0.5)|<0.1 {low}, K(0.95)>0.3 {high})",
            fmt_medians(&m)
        ),
    )
}

fn background_noise() -> Outcome {
    let m9 = sweep(&at_rho(0.9), Knob::BgNoise, &[0.0, 1.0, 4.0]);
    let m5 = sweep(&at_rho(0.5), Knob::BgNoise, &[0.0, 1.0, 4.0]);
    let dec = strictly(&m9, |k| k, false);
    let flat = m5.iter().all(|(_, k)| k.abs() < 0.1);
    outcome(
        dec && flat,
        format!(
            "rho=0.9: {} (decreasing {dec}); rho=0.5: {} (all |K|<0.1 {flat})",
            fmt_medians(&m9),
            fmt_medians(&m5)
        ),
    )
}

fn foreground_noise() -> Outcome {
    let m = sweep(&at_rho(0.9), Knob::FgNoise, &[0.0, 1.0, 4.0]);
    let inc = strictly(&m, |k| k, true);
    outcome(inc, format!("rho=0.9: {} (increasing {inc})", fmt_medians(&m)))
}

fn attribute_noise() -> Outcome {
    let m = sweep(&at_rho(0.9), Knob::AttrNoise, &[0.0, 0.25, 0.5]);
    let dec = strictly(&m, f64::abs, false);
    let small = m[2].1.abs() < 0.1;
    outcome(
        dec && small,
        format!(
            "rho=0.9: {} (|K| decreasing {dec}, |K(0.5)|<0.1 {small})",
            fmt_medians(&m)
        ),
    )
}

fn reference_robustness() -> Outcome {
    let probes: Vec<DataConfig> = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95]
        .iter()
        .enumerate()
        .map(|(i, &rho)| DataConfig {
            seed: i as u64,
            ..at_rho(rho)
        })
        .collect();
    let pipeline = PipelineConfig::default();
    let (r_ref, _, _) = reference_agreement(&probes, &pipeline).unwrap();
    let rows = k_robustness(
        Hyper::LearningRate,
        &[3e-4, 1e-3, 3e-3],
        1e-3,
        &probes,
        Objective::Reweight,
        &pipeline,
    )
    .unwrap();
    let lr: Vec<String> = rows
        .iter()
        .map(|r| format!("lr {}: r={:.4}", r.setting, r.pearson_r))
        .collect();
    let pass = r_ref > 0.9 && rows.iter().all(|r| r.pearson_r > 0.9);
    outcome(pass, format!("reweight vs groupdro r={r_ref:.4}; {}", lr.join(", ")))
}

fn mi_insensitivity() -> Outcome {
    let base = at_rho(0.9);
    let mi = |cfg: &DataConfig| mutual_information(&generate(cfg).unwrap(), Split::Train).unwrap();
    let reference = mi(&base);
    let invariant = [(1.0, 0.0), (4.0, 0.0), (0.0, 1.0), (0.0, 4.0), (4.0, 4.0)]
        .iter()
        .all(|&(bg, fg)| {
            mi(&DataConfig {
                bg_noise: bg,
                fg_noise: fg,
                ..base.clone()
            })
            .to_bits()
                == reference.to_bits()
        });
    let grid = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95];
    let empirical: Vec<f64> = grid.iter().map(|&rho| mi(&at_rho(rho))).collect();
    let increasing = empirical.windows(2).all(|w| w[1] > w[0]);
    let population = mutual_information_from_joint(&[[0.45, 0.05], [0.05, 0.45]]).unwrap();
    let close = (population - 0.36807).abs() < 1e-3;
    outcome(
        invariant && increasing && close,
        format!(
            "exact across noise variants {invariant}; increasing in rho {increasing}; population MI(0.9)={population:.6}"
        ),
    )
}

fn worst_group_accuracy(ds: &bench_validity::datagen::GroupedDataset, objective: Objective, seed: u64) -> f64 {
    let cfg = TrainConfig {
        objective,
        seed,
        ..TrainConfig::default()
    };
    let model = train(ds, Architecture::Linear, &cfg).unwrap();
    evaluate_groups(&model.params, ds, Split::Test)
        .unwrap()
        .values()
        .map(|e| e.accuracy)
        .fold(f64::INFINITY, f64::min)
}

fn erm_failure() -> Outcome {
    let pairs: Vec<(f64, f64)> = SEEDS
        .par_iter()
        .map(|&seed| {
            let ds = generate(&DataConfig { seed, ..at_rho(0.95) }).unwrap();
            (
                worst_group_accuracy(&ds, Objective::Erm, seed),
                worst_group_accuracy(&ds, Objective::Reweight, seed),
            )
        })
        .collect();
    let erm = median(&pairs.iter().map(|p| p.0).collect::<Vec<_>>()).unwrap();
    let rw = median(&pairs.iter().map(|p| p.1).collect::<Vec<_>>()).unwrap();
    let gap = 100.0 * (rw - erm);
    outcome(
        gap >= 5.0,
        format!(
            "median worst-group accuracy erm {:.2}%, reweight {:.2}%, gap {gap:.2} pp",
            100.0 * erm,
            100.0 * rw
        ),
    )
}

fn numerics() -> Outcome {
    let grads = oracle::gradient_errors(20);
    let worst_grad = grads.iter().map(|g| g.1).fold(0.0, f64::max);
    let stats = oracle::statistics_deviations(50);
    let worst_stat = stats.iter().map(|s| s.1).fold(0.0, f64::max);
    let m = agreement_matrix(&common::results());
    let symmetric = m.benchmarks.iter().all(|a| {
        m.get(a, a) == Some(1.0)
            && m.benchmarks
                .iter()
                .all(|b| m.get(a, b).map(f64::to_bits) == m.get(b, a).map(f64::to_bits))
    });
    outcome(
        grads.len() == 20 && worst_grad < 1e-5 && worst_stat <= 1e-10 && symmetric,
        format!(
            "max gradient rel. error {worst_grad:.2e} over {} cases; max statistic deviation {worst_stat:.2e}; agreement symmetric/unit diagonal {symmetric}",
            grads.len()
        ),
    )
}

/// Files of an output directory; the manifest's wall clock is dropped.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let mut bytes = fs::read(&path).unwrap();
        if name == "manifest.json" {
            let mut doc: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
            doc.as_object_mut().unwrap().remove("wall_clock_seconds");
            bytes = serde_json::to_vec(&doc).unwrap();
        }
        files.insert(name, bytes);
    }
    files
}

fn run_cli(args: &[String], threads: usize, out: Option<&Path>) -> (Option<i32>, Vec<u8>) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bench-validity"));
    cmd.args(args).args(["--threads", &threads.to_string()]);
    if let Some(dir) = out {
        cmd.arg("--out").arg(dir);
    }
    let res = cmd.output().unwrap();
    (res.status.code(), res.stdout)
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let cfg = tmp.path().join("config.json");
    fs::write(
        &cfg,
        r#"{"n_train":400,"n_val":150,"n_test":200,"core_dim":3,"spurious_dim":3,"confounder_strength":0.9}"#,
    )
    .unwrap();
    let groups = tmp.path().join("groups.csv");
    let mut text = String::from("benchmark,group_id,erm_test_acc\n");
    for (i, b) in common::results().benchmarks().enumerate() {
        for g in 0..4 {
            let acc = 95.0 - ((i * 7 + g * 13) % 40) as f64 * (g as f64 + 0.5) / 2.0;
            text.push_str(&format!("{b},g{g},{acc}\n"));
        }
    }
    fs::write(&groups, text).unwrap();

    let p = |path: &Path| path.display().to_string();
    let fx = |name: &str| p(&common::fixture(name));
    let c = p(&cfg);
    let (results, k, stats) = (
        fx("benchmark_results.csv"),
        fx("benchmark_k.csv"),
        fx("benchmark_stats.csv"),
    );
    let commands: Vec<Vec<String>> = [
        vec!["simulate", &c, "--seed", "5"],
        vec!["k", &c, "--seeds", "0..3", "--epochs", "40"],
        vec![
            "k",
            &c,
            "--seeds",
            "0..3",
            "--epochs",
            "40",
            "--aggregate",
            "median",
            "--format",
            "csv",
        ],
        vec![
            "sweep",
            &c,
            "--knob",
            "confounder",
            "--values",
            "0.5,0.9",
            "--seeds",
            "0..2",
            "--epochs",
            "40",
        ],
        vec![
            "robustness",
            &c,
            "--hyper",
            "learning_rate",
            "--settings",
            "0.001,0.003",
            "--rhos",
            "0.6,0.8,0.95",
            "--epochs",
            "40",
        ],
        vec![
            "robustness",
            &c,
            "--hyper",
            "batch_size",
            "--settings",
            "64,128",
            "--reference-setting",
            "128",
            "--rhos",
            "0.6,0.8,0.95",
            "--epochs",
            "10",
        ],
        vec![
            "robustness",
            &c,
            "--hyper",
            "reference",
            "--rhos",
            "0.6,0.8,0.95",
            "--epochs",
            "40",
        ],
        vec!["validate", "--stats", &stats],
        vec!["validate", "--results", &results, "--groups", &p(&groups), "--k", &k],
        vec!["agreement", "--results", &results, "--k", &k],
        vec![
            "recommend",
            "--results",
            &results,
            "--k",
            &k,
            "--validity",
            &stats,
            "--loo",
        ],
        vec![
            "recommend",
            "--results",
            &results,
            "--k",
            &k,
            "--validity",
            &stats,
            "--test-k",
            "0.5",
            "--test-family",
            "vision",
        ],
        vec!["profiles", "--results", &results, "--k", &k],
    ]
    .iter()
    .map(|v| v.iter().map(|s| s.to_string()).collect())
    .collect();

    let mut failures = Vec::new();
    let mut runs = 0;
    for (i, args) in commands.iter().enumerate() {
        let label = format!("{} #{i}", args[0]);
        let mut stdout_seen: Option<Vec<u8>> = None;
        let mut files_seen: Option<BTreeMap<String, Vec<u8>>> = None;
        for threads in [1, 8] {
            for rep in 0..2 {
                runs += 1;
                let (code, stdout) = run_cli(args, threads, None);
                if code != Some(0) || stdout.is_empty() {
                    failures.push(format!("{label}: exit {code:?} on stdout run"));
                    continue;
                }
                if stdout_seen.get_or_insert_with(|| stdout.clone()) != &stdout {
                    failures.push(format!("{label}: stdout differs (threads {threads}, run {rep})"));
                }
                let dir = tmp.path().join(format!("out-{i}-{threads}-{rep}"));
                let (code, _) = run_cli(args, threads, Some(&dir));
                if code != Some(0) {
                    failures.push(format!("{label}: exit {code:?} with --out"));
                    continue;
                }
                let files = snapshot(&dir);
                if files_seen.get_or_insert_with(|| files.clone()) != &files {
                    failures.push(format!("{label}: output files differ (threads {threads}, run {rep})"));
                }
            }
        }
    }
    let detail = if failures.is_empty() {
        format!(
            "{} commands x threads {{1, 8}} x 2 runs ({runs} stdout + {runs} --out runs) byte-identical",
            commands.len()
        )
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(u32, &str, Duration, Check); 11] = [
        (
            1,
            "validity partition of transcribed statistics",
            Duration::from_secs(1),
            table_partition,
        ),
        (
            2,
            "leave-one-out replay of transcribed accuracies",
            Duration::from_secs(1),
            loo_replay,
        ),
        (
            3,
            "K sign and monotonicity in confounder strength",
            Duration::from_secs(180),
            k_monotone_in_rho,
        ),
        (
            4,
            "background noise suppresses K",
            Duration::from_secs(300),
            background_noise,
        ),
        (
            5,
            "foreground noise amplifies K",
            Duration::from_secs(180),
            foreground_noise,
        ),
        (
            6,
            "attribute noise degrades K",
            Duration::from_secs(180),
            attribute_noise,
        ),
        (
            7,
            "K robust to reference model and learning rate",
            Duration::from_secs(600),
            reference_robustness,
        ),
        (
            8,
            "mutual information ignores feature noise",
            Duration::from_secs(60),
            mi_insensitivity,
        ),
        (9, "ERM fails on minority groups", Duration::from_secs(120), erm_failure),
        (10, "numerics against oracles", Duration::from_secs(60), numerics),
        (
            11,
            "CLI determinism across runs and thread counts",
            Duration::from_secs(600),
            cli_determinism,
        ),
    ];
    let mut failed = Vec::new();
    for (id, name, budget, check) in criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = result.pass && in_time;
        println!(
            "criterion {id:>2} {}  {name}: {} [{:.1}s of {}s budget]",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 11 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
