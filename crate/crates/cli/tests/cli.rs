//! End-to-end tests of the `dyncal` binary: every subcommand, the exit
//! codes, and cross-run determinism.

use std::path::Path;
use std::process::{Command, Output};

fn dyncal(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyncal"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|_| panic!("missing {name}"))
}

fn synth_args(out_dir: &str) -> Vec<&str> {
    vec![
        "synth", "--users", "24", "--items", "60", "--categories", "6", "--windows", "3",
        "--shift-at", "2", "--per-cell", "8", "--orthogonal", "--seed", "11", "--out-dir", out_dir,
    ]
}

#[test]
fn synth_is_byte_identical_under_the_same_seed() {
    let tmp = tempfile::tempdir().unwrap();
    assert_success(&dyncal(&synth_args("a"), tmp.path()));
    assert_success(&dyncal(&synth_args("b"), tmp.path()));
    for file in ["interactions.csv", "categories.csv", "truth.json"] {
        assert_eq!(
            read(&tmp.path().join("a"), file),
            read(&tmp.path().join("b"), file),
            "{file} differs between identical seeds"
        );
    }
    // truth records the planted shift window
    let truth: serde_json::Value =
        serde_json::from_slice(&read(&tmp.path().join("a"), "truth.json")).unwrap();
    assert_eq!(truth["spec"]["shift_at"], 2);
    assert_eq!(truth["pre"].as_array().unwrap().len(), 24);
}

#[test]
fn full_pipeline_synth_ingest_run_report() {
    let tmp = tempfile::tempdir().unwrap();
    assert_success(&dyncal(&synth_args("raw"), tmp.path()));

    // re-ingest the synthetic files through the generic profile
    let out = dyncal(
        &[
            "ingest",
            "--interactions",
            "raw/interactions.csv",
            "--categories",
            "raw/categories.csv",
            "--profile",
            "generic",
            "--out-dir",
            "canonical",
        ],
        tmp.path(),
    );
    assert_success(&out);
    let stats = String::from_utf8(read(&tmp.path().join("canonical"), "stats.csv")).unwrap();
    assert!(stats.lines().nth(1).unwrap().starts_with("24,60,6,"));

    let out = dyncal(
        &[
            "run",
            "--data",
            "canonical",
            "--width",
            "1d",
            "--anchor",
            "1700000000",
            "--reps",
            "2",
            "--seed-list",
            "1,2",
            "--grid-lr",
            "0.05",
            "--grid-dim",
            "8",
            "--epochs",
            "8",
            "--min-train",
            "2",
            "--reference-mode",
            "recent-window",
            "--jobs",
            "2",
            "--out-dir",
            "results",
        ],
        tmp.path(),
    );
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("argmin miscalibration level"));
    let summary: serde_json::Value =
        serde_json::from_slice(&read(&tmp.path().join("results"), "summary.json")).unwrap();
    assert_eq!(summary["n_levels"], 3);
    assert!(summary["argmin_miscalibration_level"].is_number());

    let out = dyncal(
        &["report", "--results", "results/results.csv", "--out-dir", "report"],
        tmp.path(),
    );
    assert_success(&out);
    let global = String::from_utf8(read(&tmp.path().join("report"), "report_global.csv")).unwrap();
    assert!(global.lines().count() > 3 * 7);
    let segments =
        String::from_utf8(read(&tmp.path().join("report"), "report_segments.csv")).unwrap();
    assert!(segments.contains("entropy:"));
}

#[test]
fn run_is_idempotent_across_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    assert_success(&dyncal(&synth_args("data"), tmp.path()));
    let run = |out_dir: &str, jobs: &str| {
        let out = dyncal(
            &[
                "run", "--data", "data", "--width", "1d", "--anchor", "1700000000", "--reps",
                "2", "--seed-list", "1,2", "--grid-lr", "0.05", "--grid-dim", "8", "--epochs",
                "6", "--min-train", "2", "--jobs", jobs, "--out-dir", out_dir,
            ],
            tmp.path(),
        );
        assert_success(&out);
    };
    run("r1", "1");
    run("r2", "4");
    // results are independent of the parallelism degree
    assert_eq!(
        read(&tmp.path().join("r1"), "results.csv"),
        read(&tmp.path().join("r2"), "results.csv")
    );
    assert_eq!(
        read(&tmp.path().join("r1"), "segments.csv"),
        read(&tmp.path().join("r2"), "segments.csv")
    );
    // an identical invocation reproduces every output digest (paths carry
    // the out dir and wall clock varies, so compare by file name)
    run("r3", "1");
    let digests = |dir: &str| -> std::collections::BTreeMap<String, String> {
        let manifest: serde_json::Value =
            serde_json::from_slice(&read(&tmp.path().join(dir), "manifest.json")).unwrap();
        manifest["outputs"]
            .as_object()
            .unwrap()
            .iter()
            .map(|(k, v)| {
                let name = Path::new(k).file_name().unwrap().to_string_lossy().into_owned();
                (name, v.as_str().unwrap().to_string())
            })
            .collect()
    };
    assert_eq!(digests("r1"), digests("r3"));
}

#[test]
fn kuairec_profile_applies_the_signal_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("log.csv"),
        "user_id,item_id,timestamp,signal\n\
         u1,i1,100,0.9\n\
         u1,i2,200,0.89\n\
         u2,i1,300,2.5\n\
         u2,i2,400,0.1\n",
    )
    .unwrap();
    std::fs::write(tmp.path().join("cats.csv"), "item_id,categories\ni1,a\ni2,a|b\n").unwrap();
    let out = dyncal(
        &[
            "ingest",
            "--interactions",
            "log.csv",
            "--categories",
            "cats.csv",
            "--profile",
            "kuairec",
            "--threshold",
            "0.9",
            "--out-dir",
            "out",
        ],
        tmp.path(),
    );
    assert_success(&out);
    let canonical =
        String::from_utf8(read(&tmp.path().join("out"), "interactions.csv")).unwrap();
    let labels: Vec<&str> = canonical
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap())
        .collect();
    assert_eq!(labels, vec!["1", "0", "1", "0"]);
    // stats count positive deduplicated pairs only
    let stats = String::from_utf8(read(&tmp.path().join("out"), "stats.csv")).unwrap();
    assert!(stats.lines().nth(1).unwrap().starts_with("2,2,2,2,"));
}

#[test]
fn goodreads_profile_filters_and_writes_stats() {
    let tmp = tempfile::tempdir().unwrap();
    // seven steady readers clear every stage (their shared item gathers
    // 1120 interactions); one casual reader fails the annual bounds
    let mut log = String::from("user_id,item_id,timestamp\n");
    for user in 0..7 {
        for year in 2010..=2017 {
            for day in 0..20 {
                let ts = dyncal_core::timeutil::days_from_civil(year, 1, 1 + day) * 86_400
                    + user * 60;
                log.push_str(&format!("reader{user},book,{ts}\n"));
            }
        }
    }
    for year in 2010..=2017 {
        for day in 0..10 {
            let ts = dyncal_core::timeutil::days_from_civil(year, 2, 1 + day) * 86_400;
            log.push_str(&format!("casual,book,{ts}\n"));
        }
    }
    std::fs::write(tmp.path().join("log.csv"), log).unwrap();
    std::fs::write(tmp.path().join("cats.csv"), "item_id,categories\nbook,fiction\n").unwrap();
    let out = dyncal(
        &[
            "ingest",
            "--interactions",
            "log.csv",
            "--categories",
            "cats.csv",
            "--profile",
            "goodreads",
            "--out-dir",
            "out",
        ],
        tmp.path(),
    );
    assert_success(&out);
    let stats = String::from_utf8(read(&tmp.path().join("out"), "stats.csv")).unwrap();
    assert!(stats.lines().nth(1).unwrap().starts_with("7,1,1,"), "stats: {stats}");
    let report: serde_json::Value =
        serde_json::from_slice(&read(&tmp.path().join("out"), "filter_report.json")).unwrap();
    assert_eq!(report["users_dropped_activity"], 1);
}

#[test]
fn diverging_grid_exits_with_training_failure() {
    let tmp = tempfile::tempdir().unwrap();
    assert_success(&dyncal(&synth_args("data"), tmp.path()));
    let out = dyncal(
        &[
            "run", "--data", "data", "--width", "1d", "--anchor", "1700000000", "--reps", "1",
            "--seed-list", "1", "--grid-lr", "1e12", "--grid-dim", "8", "--epochs", "10",
            "--min-train", "1", "--out-dir", "boom",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    // the partial manifest records that nothing completed
    let partial: serde_json::Value =
        serde_json::from_slice(&read(&tmp.path().join("boom"), "partial_manifest.json")).unwrap();
    assert_eq!(partial["completed_cells"].as_array().unwrap().len(), 0);
    assert_eq!(partial["failed_level"], 1);
}

#[test]
fn itemknn_algo_runs_without_a_grid() {
    let tmp = tempfile::tempdir().unwrap();
    assert_success(&dyncal(&synth_args("data"), tmp.path()));
    let out = dyncal(
        &[
            "run", "--data", "data", "--width", "1d", "--anchor", "1700000000", "--reps", "2",
            "--seed-list", "1,2", "--algo", "itemknn", "--knn-k", "20", "--min-train", "2",
            "--out-dir", "knn",
        ],
        tmp.path(),
    );
    assert_success(&out);
    let summary: serde_json::Value =
        serde_json::from_slice(&read(&tmp.path().join("knn"), "summary.json")).unwrap();
    assert_eq!(summary["levels"][0]["chosen"]["algo"], "item-knn");
}

#[test]
fn missing_category_file_exits_with_data_error_naming_the_flag() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("log.csv"), "user_id,item_id,timestamp\nu,i,1\n").unwrap();
    let out = dyncal(
        &[
            "ingest",
            "--interactions",
            "log.csv",
            "--categories",
            "nope.csv",
            "--out-dir",
            "out",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--categories"), "stderr: {stderr}");
}

#[test]
fn seed_list_must_match_repetitions() {
    let tmp = tempfile::tempdir().unwrap();
    assert_success(&dyncal(&synth_args("data"), tmp.path()));
    let out = dyncal(
        &[
            "run", "--data", "data", "--reps", "6", "--seed-list", "1,2,3", "--out-dir", "out",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeds"));
}

#[test]
fn single_level_run_degenerates_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    assert_success(&dyncal(&synth_args("data"), tmp.path()));
    let out = dyncal(
        &[
            "run", "--data", "data", "--width", "1d", "--anchor", "1700000000", "--levels",
            "1", "--reps", "1", "--seed-list", "9", "--grid-lr", "0.05", "--grid-dim", "4",
            "--epochs", "5", "--min-train", "1", "--out-dir", "one",
        ],
        tmp.path(),
    );
    assert_success(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("argmin miscalibration level: 1 of 1"));
}

#[test]
fn report_requires_an_existing_results_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dyncal(&["report", "--results", "missing.csv", "--out-dir", "out"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dyncal(&["run", "--frobnicate"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn windows_command_tabulates_candidate_widths() {
    let tmp = tempfile::tempdir().unwrap();
    assert_success(&dyncal(&synth_args("data"), tmp.path()));
    let out = dyncal(
        &[
            "windows", "--data", "data", "--widths", "1d,3d", "--anchor", "1700000000",
            "--out-dir", "wg",
        ],
        tmp.path(),
    );
    assert_success(&out);
    let grid = String::from_utf8(read(&tmp.path().join("wg"), "window_grid.csv")).unwrap();
    let mut lines = grid.lines().skip(1);
    assert!(lines.next().unwrap().starts_with("86400,3,"));
    assert!(lines.next().unwrap().starts_with("259200,1,"));
}

#[test]
fn config_file_keys_are_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    assert_success(&dyncal(&synth_args("data"), tmp.path()));
    std::fs::write(
        tmp.path().join("run.toml"),
        "width = \"1d\"\nanchor = \"1700000000\"\nreps = 1\nseeds = [5]\n\
         grid_lr = [0.05]\ngrid_dim = [4]\nepochs = 4\nmin_train = 1\nlevels = 2\n",
    )
    .unwrap();
    // config alone: 2 levels
    let out = dyncal(
        &["run", "--data", "data", "--config", "run.toml", "--out-dir", "c1"],
        tmp.path(),
    );
    assert_success(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("of 2"));
    // flag overrides the level cap
    let out = dyncal(
        &[
            "run", "--data", "data", "--config", "run.toml", "--levels", "1", "--out-dir", "c2",
        ],
        tmp.path(),
    );
    assert_success(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("of 1"));
}
