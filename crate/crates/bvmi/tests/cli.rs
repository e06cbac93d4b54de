use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bvmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bvmi"))
        .args(args)
        .env_remove("BVMI_LOG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn smoke() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/smoke.json")
        .to_string_lossy()
        .into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn prints_version() {
    let out = bvmi(&["--version"]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), format!("bvmi {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn run_writes_the_same_csv_for_any_thread_count() {
    let dir = TempDir::new().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "2", "4"] {
        let path = dir.path().join(format!("t{threads}.csv"));
        let out = bvmi(&["run", "--config", &smoke(), "--out", s(&path), "--threads", threads]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(stderr(&out).contains("wrote 10 rows"));
        outputs.push(fs::read_to_string(&path).unwrap());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(outputs[0].lines().count(), 11);

    // without --out the CSV goes to standard output
    let out = bvmi(&["run", "--config", &smoke()]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout), outputs[0]);

    let out = bvmi(&["run", "--config", &smoke(), "--seed", "5"]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert_ne!(text, outputs[0]);
    assert!(text.lines().nth(1).unwrap().ends_with(",5"));
}

#[test]
fn bad_configs_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{ not json").unwrap();
    let out = bvmi(&["run", "--config", s(&path)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).starts_with("error: cannot parse config"));

    let out = bvmi(&["run", "--config", s(&dir.path().join("missing.json"))]);
    assert_eq!(code(&out), 2);

    fs::write(
        &path,
        r#"{ "data": { "synthetic": { "n_assets": 2, "split": { "train": 4, "test": 2, "oos": 2 } } },
             "mask": { "mcar": { "p": 2 } }, "repetitions": 1, "imputations": 2, "seed": 1 }"#,
    )
    .unwrap();
    assert_eq!(code(&bvmi(&["run", "--config", s(&path)])), 2);
}

#[test]
fn aborted_runs_exit_with_code_three() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("abort.json");
    fs::write(
        &path,
        r#"{ "data": { "synthetic": { "n_assets": 2, "split": { "train": 8, "test": 4, "oos": 4 } } },
             "mask": { "by_value": { "threshold": 1e-12 } }, "repetitions": 2, "imputations": 2, "seed": 1 }"#,
    )
    .unwrap();
    let out = bvmi(&["run", "--config", s(&path)]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("2 of 2 repetitions aborted"));
}

const PANEL: &str = "\
date,A,B,C
20210104,1.25,NA,-0.50
20210105,NA,0.75,0.30
20210106,0.40,NA,1.10
20210107,-0.20,0.15,NA
20210108,0.90,-0.35,0.25
20210111,-1.10,0.60,0.45
20210112,0.05,0.80,-0.65
20210113,0.70,-0.45,0.20
20210114,-0.30,0.10,0.95
20210115,0.55,-0.90,-0.15
";

struct Impute {
    dir: TempDir,
    config: PathBuf,
}

impl Impute {
    fn new(panel: &str, prior: &str) -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("panel.csv"), panel).unwrap();
        let config = dir.path().join("impute.json");
        fs::write(
            &config,
            format!(
                r#"{{ "input": "panel.csv", "schema": {{ "divisor": 100 }},
                     "split": {{ "train": 4, "test": 3, "oos": 3 }},
                     "prior": {prior}, "output_dir": "out", "seed": 42 }}"#
            ),
        )
        .unwrap();
        Impute { dir, config }
    }

    fn run(&self, delta: &str, m: &str) -> Output {
        bvmi(&["impute", "--config", s(&self.config), "--delta", delta, "--m", m])
    }

    fn file(&self, k: usize) -> String {
        fs::read_to_string(self.dir.path().join(format!("out/imputed_{k:03}.csv"))).unwrap()
    }
}

fn cells(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn impute_fills_only_missing_cells() {
    let job = Impute::new(PANEL, r#""flat""#);
    let out = job.run("0", "3");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("wrote 3 panels"));

    let original = cells(PANEL);
    let files: Vec<String> = (1..=3).map(|k| job.file(k)).collect();
    for file in &files {
        let got = cells(file);
        assert_eq!(got.len(), original.len());
        for (row_got, row_orig) in got.iter().zip(&original) {
            for (g, o) in row_got.iter().zip(row_orig) {
                if o == "NA" {
                    assert!(g.parse::<f64>().unwrap().is_finite(), "{g}");
                } else {
                    assert_eq!(g, o);
                }
            }
        }
    }
    assert_ne!(files[0], files[1]);
    assert_ne!(files[1], files[2]);

    // the same config and seed reproduce the same panels
    assert_eq!(code(&job.run("0", "3")), 0);
    let again: Vec<String> = (1..=3).map(|k| job.file(k)).collect();
    assert_eq!(files, again);

    // an absolute budget above the cap is clamped, not rejected
    assert_eq!(code(&job.run("1e9", "1")), 0);
    assert_eq!(code(&job.run("-1", "1")), 2);
    assert_eq!(code(&job.run("0", "0")), 2);
}

#[test]
fn impute_without_missing_cells_copies_the_input() {
    let complete = PANEL.replace("NA", "0.33");
    let job = Impute::new(&complete, r#""flat""#);
    let out = job.run("0.5", "2");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(job.file(1), complete);
    assert_eq!(job.file(2), complete);
}

#[test]
fn impute_rejects_missing_cells_outside_training() {
    let late = PANEL.replace("20210113,0.70", "20210113,NA");
    let job = Impute::new(&late, r#""flat""#);
    let out = job.run("0", "1");
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("training block") && err.contains("line 9"), "{err}");
}

#[test]
fn impute_needs_an_observed_entry_per_asset_under_a_flat_prior() {
    let unseen = PANEL
        .replace("20210105,NA,0.75", "20210105,NA,NA")
        .replace("20210107,-0.20,0.15", "20210107,-0.20,NA");
    let job = Impute::new(&unseen, r#""flat""#);
    let out = job.run("0", "1");
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("flat prior needs one): B"), "{}", stderr(&out));

    let job = Impute::new(&unseen, r#"{ "isotropic": { "mean": 0.0, "variance": 1e-4 } }"#);
    let out = job.run("0", "1");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}
