//! End-to-end runs of the `mmdglm` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmd_glm::glm::ModelFile;
use mmd_glm::spiketrain::write_spike_times;
use mmd_glm::{Glm, GlmParams, ObservationModel, TrialSet};
use tempfile::TempDir;

fn mmdglm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmdglm")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_set(dir: &Path, name: &str, set: &TrialSet) -> String {
    let p = dir.join(name);
    std::fs::write(&p, write_spike_times(set)).unwrap();
    p.to_str().unwrap().to_string()
}

fn refractory_data(seed: u64) -> TrialSet {
    let glm = Glm::new(ObservationModel::Bernoulli);
    let p = GlmParams::new(40f64.ln(), vec![-4.0, -1.5, 0.3]);
    glm.sample_free_running(&p, 20, 200, 0.005, None, seed).unwrap().trials
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

fn csv_rows(path: PathBuf) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

struct Fixture {
    tmp: TempDir,
    data: String,
}

impl Fixture {
    fn new() -> Self {
        let tmp = TempDir::new().unwrap();
        let data = write_set(tmp.path(), "data.txt", &refractory_data(3));
        Self { tmp, data }
    }

    fn out(&self, name: &str) -> (PathBuf, String) {
        let p = self.tmp.path().join(name);
        let s = p.to_str().unwrap().to_string();
        (p, s)
    }

    fn data_args(&self) -> Vec<&str> {
        vec!["--data", &self.data, "--dt", "0.005", "--duration", "1.0", "--history-len", "3"]
    }

    fn fit_mle(&self, name: &str, extra: &[&str]) -> PathBuf {
        let (p, s) = self.out(name);
        let mut a = vec!["fit-mle"];
        a.extend(self.data_args());
        a.extend_from_slice(&["--out", &s]);
        a.extend_from_slice(extra);
        let o = mmdglm(&a);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        p
    }
}

fn read_model(path: PathBuf) -> GlmParams {
    ModelFile::from_toml(&std::fs::read_to_string(path).unwrap()).unwrap().params()
}

#[test]
fn unparseable_data_exits_2_without_artifacts() {
    let f = Fixture::new();
    let bad = f.tmp.path().join("bad.txt");
    std::fs::write(&bad, "0.1 0.2\nnot-a-number\n").unwrap();
    let (out, s) = f.out("bad_run");
    let o = mmdglm(&["fit-mle", "--data", bad.to_str().unwrap(), "--dt", "0.005", "--duration", "1.0", "--out", &s]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    assert_eq!(files_in(&out), vec!["manifest.json"]);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
    assert_eq!(manifest["exit_code"], 2);
}

#[test]
fn spikeless_data_exits_3() {
    let f = Fixture::new();
    let empty = write_set(f.tmp.path(), "empty.txt", &TrialSet::from_counts(vec![vec![0; 200]; 3], 0.005).unwrap());
    let (_, s) = f.out("empty_run");
    let o = mmdglm(&["fit-mle", "--data", &empty, "--dt", "0.005", "--duration", "1.0", "--out", &s]);
    assert_eq!(code(&o), 3);
}

#[test]
fn zero_samples_is_a_parameter_error() {
    let f = Fixture::new();
    let fit = f.fit_mle("mle", &[]);
    let params = fit.join("params.toml");
    let (_, s) = f.out("sample0");
    let mut a = vec!["sample", "--seed", "1", "--n", "0", "--params", params.to_str().unwrap(), "--out", &s];
    a.extend(f.data_args());
    assert_eq!(code(&mmdglm(&a)), 2);
}

#[test]
fn missing_seed_is_rejected() {
    let f = Fixture::new();
    let (_, s) = f.out("noseed");
    let mut a = vec!["fit-mmd", "--init", "zero-history", "--out", &s];
    a.extend(f.data_args());
    assert_eq!(code(&mmdglm(&a)), 2);
}

#[test]
fn set_overrides_take_precedence_over_the_config_file() {
    let f = Fixture::new();
    let cfg = f.tmp.path().join("cfg.toml");
    std::fs::write(&cfg, "[model]\nhistory_len = 7\n").unwrap();
    let from_file = f.fit_mle("from_file", &["--config", cfg.to_str().unwrap()]);
    // named flags in data_args set history_len = 3, beating the file
    assert_eq!(read_model(from_file.join("params.toml")).history_len(), 3);
    let overridden = f.fit_mle("overridden", &["--config", cfg.to_str().unwrap(), "--set", "model.history_len=5"]);
    assert_eq!(read_model(overridden.join("params.toml")).history_len(), 5);
}

#[test]
fn ridge_shrinks_the_history_filter() {
    let f = Fixture::new();
    let plain = read_model(f.fit_mle("plain", &[]).join("params.toml"));
    let ridge = read_model(f.fit_mle("ridge", &["--lambda-ridge", "1.0"]).join("params.toml"));
    let norm = |p: &GlmParams| p.history.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm(&ridge) < norm(&plain), "{} vs {}", norm(&ridge), norm(&plain));
}

#[test]
fn gof_writes_curves_with_expected_lengths_and_tolerates_missing_validation() {
    let f = Fixture::new();
    let params = f.fit_mle("mle", &[]).join("params.toml");
    let (out, s) = f.out("gof");
    let missing = f.tmp.path().join("nope.txt");
    let mut a = vec![
        "gof",
        "--seed",
        "9",
        "--n",
        "50",
        "--params",
        params.to_str().unwrap(),
        "--valid",
        missing.to_str().unwrap(),
        "--max-lag",
        "12",
        "--set",
        "gof.isi_bins=17",
        "--set",
        "gof.cdf_points=33",
        "--out",
        &s,
    ];
    a.extend(f.data_args());
    let o = mmdglm(&a);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let report = std::fs::read_to_string(out.join("report.toml")).unwrap();
    assert!(report.contains("rel_ll_valid = \"absent\""), "{report}");
    assert_eq!(csv_rows(out.join("isi_hist.csv")), 17);
    assert_eq!(csv_rows(out.join("autocorr.csv")), 12);
    assert_eq!(csv_rows(out.join("rate.csv")), 200);
    assert_eq!(csv_rows(out.join("rescaled_cdf.csv")), 33);
    assert_eq!(csv_rows(out.join("report_row.csv")), 1);
}

#[test]
fn repeated_fits_get_their_own_directories_and_a_summary() {
    let f = Fixture::new();
    let (out, s) = f.out("reps");
    let mut a = vec![
        "fit-mmd", "--seed", "4", "--repeats", "3", "--iters", "20", "--samples-per-step", "10", "--init",
        "zero-history", "--out", &s,
    ];
    a.extend(f.data_args());
    let o = mmdglm(&a);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for r in 0..3 {
        let files = files_in(&out.join(format!("rep_{r:03}")));
        for want in ["manifest.json", "params.toml", "summary.toml", "trace.ndjson"] {
            assert!(files.contains(&want.to_string()), "rep {r}: {files:?}");
        }
    }
    assert_eq!(csv_rows(out.join("repeats.csv")), 3);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("statistic,median,min,max"));
}

#[test]
fn reruns_are_byte_identical() {
    let f = Fixture::new();
    let mut runs = Vec::new();
    for name in ["det_a", "det_b"] {
        let (out, s) = f.out(name);
        let mut a = vec!["fit-mmd", "--seed", "2", "--iters", "15", "--samples-per-step", "10", "--init", "mle", "--out", &s];
        a.extend(f.data_args());
        assert_eq!(code(&mmdglm(&a)), 0);
        runs.push(
            ["params.toml", "trace.ndjson", "summary.toml"]
                .map(|n| std::fs::read(out.join(n)).unwrap())
                .to_vec(),
        );
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn alpha_scan_without_a_qualifying_alpha_exits_5_and_keeps_the_table() {
    // A saturated Bernoulli train: the zero-history start cannot reach the
    // data rate, and a frozen optimizer keeps every alpha out of the band.
    let tmp = TempDir::new().unwrap();
    let glm = Glm::new(ObservationModel::Bernoulli);
    let data = glm
        .sample_free_running(&GlmParams::new(400f64.ln(), vec![0.0]), 20, 200, 0.005, None, 1)
        .unwrap()
        .trials;
    let d = write_set(tmp.path(), "hot.txt", &data);
    let out = tmp.path().join("scan");
    let o = mmdglm(&[
        "alpha-scan", "--data", &d, "--dt", "0.005", "--duration", "1.0", "--history-len", "1", "--seed", "1",
        "--init", "zero-history", "--grid", "0.1,1", "--iters", "2", "--learning-rate", "1e-9", "--samples-per-step",
        "10", "--eval-samples", "100", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("selected_alpha=none"));
    assert_eq!(csv_rows(out.join("alpha_scan.csv")), 2);
    assert!(!out.join("params.toml").exists());
}

#[test]
fn help_lists_every_subcommand() {
    let o = mmdglm(&["--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["fit-mle", "fit-mmd", "sample", "gof", "alpha-scan", "toy"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}
