use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ldp-gof"))
}

fn here(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data() -> String {
    here("tests/data/uniform10.txt").display().to_string()
}

fn golden(name: &str) -> String {
    fs::read_to_string(here(&format!("tests/golden/{name}"))).unwrap()
}

#[test]
fn help_matches_golden() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout), golden("help.txt"));
    for sub in ["privatize", "test", "rates", "sweep", "calibrate"] {
        let o = run(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert_eq!(
            String::from_utf8_lossy(&o.stdout),
            golden(&format!("help_{sub}.txt")),
            "{sub}"
        );
    }
}

#[test]
fn help_lists_every_flag() {
    let all: String = ["privatize", "test", "rates", "sweep", "calibrate"]
        .iter()
        .map(|s| golden(&format!("help_{s}.txt")))
        .collect();
    for flag in [
        "--mode", "--norm", "--alpha", "--gamma", "--d ", "--family", "--p0-file", "--seed",
        "--config", "--out",
    ] {
        assert!(all.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn test_report_noninteractive_golden() {
    let d = data();
    let o = run(&["test", "--data", &d, "--family", "uniform", "--d", "10", "--alpha", "1", "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout), golden("test_ni.json"));
    let report = ldp_gof::io::parse_test_report(&golden("test_ni.json")).unwrap();
    assert!(!report.reject);
    report.validate().unwrap();
}

#[test]
fn test_report_interactive_golden() {
    let d = data();
    let o = run(&[
        "test", "--data", &d, "--family", "uniform", "--d", "10", "--alpha", "1", "--seed", "7",
        "--mode", "interactive", "--norm", "l2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout), golden("test_interactive.json"));
}

#[test]
fn test_p0_file_equals_family() {
    let d = data();
    let p0 = here("tests/data/uniform10_p0.txt").display().to_string();
    let a = run(&["test", "--data", &d, "--family", "uniform", "--d", "10", "--alpha", "1", "--seed", "7"]);
    let b = run(&["test", "--data", &d, "--p0-file", &p0, "--alpha", "1", "--seed", "7"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn rejection_exits_one() {
    let d = data();
    let o = run(&[
        "test", "--data", &d, "--family", "polynomial:beta=1", "--d", "10", "--alpha", "1", "--seed", "7",
    ]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let report = ldp_gof::io::parse_test_report(&String::from_utf8_lossy(&o.stdout)).unwrap();
    assert!(report.reject);
}

#[test]
fn bad_alpha_names_the_constraint() {
    let d = data();
    let o = run(&["test", "--data", &d, "--family", "uniform", "--d", "10", "--alpha", "1.5", "--seed", "7"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("(0, 1]"), "{}", stderr(&o));
}

#[test]
fn empty_data_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "").unwrap();
    let o = run(&[
        "test", "--data", empty.to_str().unwrap(), "--family", "uniform", "--d", "10", "--alpha", "1",
        "--seed", "1",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn stochastic_commands_need_a_seed() {
    let d = data();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    fs::write(&cfg, "{\"grid\": []}").unwrap();
    let out = dir.path().join("out.csv");
    let cases: Vec<Vec<&str>> = vec![
        vec!["test", "--data", &d, "--family", "uniform", "--d", "10", "--alpha", "1"],
        vec!["privatize", "--input", &d, "--d", "10", "--b", "1,2", "--alpha", "1"],
        vec!["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
        vec!["calibrate"],
    ];
    for args in cases {
        let o = run(&args);
        assert_eq!(code(&o), 2, "{args:?}");
        assert!(stderr(&o).contains("--seed"), "{args:?}");
    }
}

#[test]
fn truncates_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("odd.txt");
    let mut text = fs::read_to_string(data()).unwrap();
    text.push_str("3\n");
    fs::write(&f, &text).unwrap();
    let o = run(&[
        "test", "--data", f.to_str().unwrap(), "--family", "uniform", "--d", "10", "--alpha", "1", "--seed", "7",
    ]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("warning"));
    // the dropped last user leaves the report unchanged
    assert_eq!(String::from_utf8_lossy(&o.stdout), golden("test_ni.json"));
}

#[test]
fn privatize_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let d = data();
    for out in [&a, &b] {
        let o = run(&[
            "privatize", "--input", &d, "--d", "10", "--family", "uniform", "--alpha", "0.5", "--seed", "11",
            "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());

    let mut r = csv::Reader::from_path(&a).unwrap();
    let header = r.headers().unwrap().clone();
    let width = header.len();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 3000);
    let vectors = rows.iter().filter(|x| &x[1] == "vector").count();
    let tails = rows.iter().filter(|x| &x[1] == "tail").count();
    assert_eq!((vectors, tails), (1500, 1500));
    // vector rows fill every z column and leave the tail empty
    let k = width - 3;
    assert!(k >= 1);
    assert!(rows[0].iter().skip(2).take(k).all(|v| v.parse::<f64>().is_ok()));
    assert_eq!(&rows[0][width - 1], "");
    assert!(rows[2999][width - 1].parse::<f64>().is_ok());
}

#[test]
fn privatize_interactive_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("i.csv");
    let d = data();
    let o = run(&[
        "privatize", "--input", &d, "--d", "10", "--family", "uniform", "--alpha", "1", "--seed", "3",
        "--mode", "interactive", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut r = csv::Reader::from_path(&out).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    let count = |label: &str| rows.iter().filter(|x| &x[1] == label).count();
    assert_eq!((count("stage1"), count("stage2"), count("tail")), (1000, 1000, 1000));
    // stage-two outputs take exactly two values, ±c_α τ
    let mut mags: Vec<f64> = rows
        .iter()
        .filter(|x| &x[1] == "stage2")
        .map(|x| x[12].parse::<f64>().unwrap())
        .collect();
    mags.sort_by(f64::total_cmp);
    mags.dedup();
    assert_eq!(mags.len(), 2);
    assert_eq!(mags[0], -mags[1]);
}

#[test]
fn privatize_rejects_categories_beyond_d() {
    let d = data();
    let o = run(&["privatize", "--input", &d, "--d", "5", "--b", "1,2", "--alpha", "1", "--seed", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line "), "{}", stderr(&o));
}

#[test]
fn rates_match_golden_and_write_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rates.csv");
    let o = run(&["rates", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let expect = fs::read(here("../core/tests/golden/rates.csv")).unwrap();
    assert_eq!(fs::read(&out).unwrap(), expect);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("rates.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["rows"], 600);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    let o = run(&["rates"]);
    assert_eq!(o.stdout, expect);
}

#[test]
fn empty_sweep_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    fs::write(&cfg, "{\"grid\": []}").unwrap();
    let out = dir.path().join("out.csv");
    let o = run(&["sweep", "--config", cfg.to_str().unwrap(), "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn small_sweep_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    let point = |d: usize| {
        format!(
            "{{\"family\": {{\"kind\": \"uniform\", \"d\": {d}}}, \"n_block\": 20000, \"alpha\": 1.0, \
             \"gamma\": 0.5, \"norm\": \"L1\", \"mode\": \"interactive\", \"M\": 200, \"master_seed\": 0}}"
        )
    };
    fs::write(&cfg, format!("{{\"grid\": [{}, {}], \"tol\": 0.02}}", point(10), point(40))).unwrap();
    let out = dir.path().join("sweep.csv");
    let args = ["sweep", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", out.to_str().unwrap()];
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let first = fs::read(&out).unwrap();
    let mut r = csv::Reader::from_reader(first.as_slice());
    assert!(r.headers().unwrap().iter().any(|h| h == "slope"));
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sweep.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seeds"].as_array().unwrap().len(), 2);

    run(&args);
    assert_eq!(fs::read(&out).unwrap(), first, "same seed, same table");
}

#[test]
fn calibrate_prints_one_constant() {
    let o = run(&["calibrate", "--seed", "3", "--cases", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    let c: f64 = lines[0].parse().unwrap();
    assert!(c > 0.0 && c < 1.0);
    let again = run(&["calibrate", "--seed", "3", "--cases", "3"]);
    assert_eq!(again.stdout, o.stdout);
}

#[test]
fn calibrate_rejects_small_m() {
    let o = run(&["calibrate", "--seed", "3", "--m", "100"]);
    assert_eq!(code(&o), 2);
}
