use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nigvb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nigvb"))
        .args(args)
        .output()
        .unwrap()
}

fn data_file(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn ari_from_report(report: &str) -> f64 {
    let line = report.lines().find(|l| l.starts_with("ARI = ")).unwrap();
    line["ARI = ".len()..]
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn fit_micro_dataset_finds_two_components() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("micro.csv");
    fs::write(&input, "y\n0.0\n0.1\n10.0\n10.1\n").unwrap();
    let output = dir.path().join("fit.json");
    let o = nigvb(&[
        "fit",
        "--input",
        path_str(&input),
        "--output",
        path_str(&output),
        "--model",
        "unig",
        "--g-init",
        "2",
        "--seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("G = 2"), "{}", stdout(&o));
    let labels = csv_rows(&output.with_extension("labels.csv"));
    assert_eq!(labels.len(), 4);
    assert_eq!(labels[0], labels[1]);
    assert_ne!(labels[0], labels[2]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("fit.json");
    let faithful = data_file("faithful.csv");
    let not_converged = nigvb(&[
        "fit",
        "--input",
        &faithful,
        "--output",
        path_str(&output),
        "--max-iter",
        "2",
    ]);
    assert_eq!(not_converged.status.code(), Some(2));
    assert!(stderr(&not_converged).contains("warning[not_converged]"));
    assert!(output.exists());

    let missing = nigvb(&[
        "fit",
        "--input",
        &faithful,
        "--output",
        path_str(&output),
        "--columns",
        "nope",
    ]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(
        stderr(&missing).contains("error[missing_column]"),
        "{}",
        stderr(&missing)
    );

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "a\n1\nzz\n").unwrap();
    let non_numeric = nigvb(&[
        "fit",
        "--input",
        path_str(&bad),
        "--output",
        path_str(&output),
    ]);
    assert_eq!(non_numeric.status.code(), Some(3));
    assert!(stderr(&non_numeric).contains("error[non_numeric]"));

    assert_eq!(nigvb(&["fit", "--bogus"]).status.code(), Some(3));
    assert_eq!(nigvb(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"model": "mnig", "g_init": 3, "max_iter": 2}"#).unwrap();
    let output = dir.path().join("fit.json");
    let faithful = data_file("faithful.csv");
    let args = [
        "fit",
        "--input",
        &faithful,
        "--output",
        path_str(&output),
        "--config",
        path_str(&config),
    ];
    assert_eq!(nigvb(&args).status.code(), Some(2));
    let mut more = args.to_vec();
    more.extend(["--max-iter", "500"]);
    let o = nigvb(&more);
    assert!(matches!(o.status.code(), Some(0 | 2)));
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&output).unwrap()).unwrap();
    assert_eq!(record["payload"]["config"]["g_init"], 3);
    assert_eq!(record["payload"]["config"]["max_iter"], 500);

    fs::write(&config, r#"{"g_int": 3}"#).unwrap();
    assert_eq!(nigvb(&args).status.code(), Some(3));
}

#[test]
fn simulate_presets() {
    let dir = tempfile::tempdir().unwrap();
    let count = |preset: &str, n: Option<&str>| -> Vec<usize> {
        let out = dir.path().join(format!("{preset}.csv"));
        let mut args = vec![
            "simulate",
            "--preset",
            preset,
            "--seed",
            "3",
            "--output",
            path_str(&out),
        ];
        if let Some(n) = n {
            args.extend(["--n", n]);
        }
        assert_eq!(nigvb(&args).status.code(), Some(0));
        let rows = csv_rows(&out);
        let mut counts = vec![0; 2];
        for row in &rows {
            counts[row.last().unwrap().parse::<usize>().unwrap() - 1] += 1;
        }
        counts
    };
    assert_eq!(count("study1", None), vec![150, 150]);
    assert_eq!(count("study4", None), vec![150, 200]);
    assert_eq!(count("study1", Some("1")).iter().sum::<usize>(), 1);
    let sidecar = dir.path().join("study4.csv.json");
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sidecar).unwrap()).unwrap();
    assert_eq!(meta["seed"], 3);
    assert_eq!(
        nigvb(&["simulate", "--preset", "study9", "--output", "x.csv"])
            .status
            .code(),
        Some(3)
    );
}

fn write_labels(path: &Path, labels: &[usize]) {
    let mut text = String::from("label\n");
    for l in labels {
        text.push_str(&format!("{l}\n"));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn evaluate_reports_ari_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = [
        [41usize, 9, 0, 0],
        [1, 48, 0, 1],
        [0, 0, 50, 0],
        [0, 0, 6, 44],
    ];
    let (mut truth, mut fitted) = (Vec::new(), Vec::new());
    for (r, row) in table.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            truth.extend(std::iter::repeat_n(r + 1, count));
            fitted.extend(std::iter::repeat_n(c + 1, count));
        }
    }
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_labels(&a, &truth);
    write_labels(&b, &fitted);

    let same = nigvb(&["evaluate", path_str(&a), path_str(&a)]);
    assert_eq!(same.status.code(), Some(0));
    assert_eq!(ari_from_report(&stdout(&same)), 1.0);

    let o = nigvb(&["evaluate", path_str(&a), path_str(&b)]);
    assert!(
        (ari_from_report(&stdout(&o)) - 0.79).abs() < 0.005,
        "{}",
        stdout(&o)
    );
    assert!(stdout(&o).contains("41"));

    let merged = nigvb(&["evaluate", path_str(&b), path_str(&a), "--merge", "1,2;3,4"]);
    assert_eq!(merged.status.code(), Some(0));

    let short = dir.path().join("short.csv");
    write_labels(&short, &[1, 2, 1]);
    let o = nigvb(&["evaluate", path_str(&a), path_str(&short)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("error[length_mismatch]"));
}

fn fit_record(dir: &Path, input: &str, extra: &[&str]) -> PathBuf {
    let output = dir.join("model.json");
    let mut args = vec!["fit", "--input", input, "--output", path_str(&output)];
    args.extend(extra);
    let o = nigvb(&args);
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", stderr(&o));
    output
}

#[test]
fn density_grid_one_dimension_integrates_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let sample = dir.path().join("s.csv");
    assert_eq!(
        nigvb(&[
            "simulate",
            "--preset",
            "study1",
            "--output",
            path_str(&sample)
        ])
        .status
        .code(),
        Some(0)
    );
    let model = fit_record(
        dir.path(),
        path_str(&sample),
        &["--model", "unig", "--columns", "y1", "--seed", "1"],
    );
    let grid = dir.path().join("grid.csv");
    let o = nigvb(&[
        "density-grid",
        "--model",
        path_str(&model),
        "--output",
        path_str(&grid),
        "--lower=-30",
        "--upper",
        "40",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: Vec<(f64, f64)> = csv_rows(&grid)
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap()))
        .collect();
    assert_eq!(rows.len(), 512);
    let h = rows[1].0 - rows[0].0;
    let integral: f64 = rows.iter().map(|r| r.1).sum::<f64>() * h;
    assert!((integral - 1.0).abs() < 1e-3, "{integral}");
}

#[test]
fn density_grid_two_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit_record(
        dir.path(),
        &data_file("faithful.csv"),
        &["--g-init", "3", "--max-iter", "100"],
    );
    let grid = dir.path().join("grid.csv");
    let o = nigvb(&[
        "density-grid",
        "--model",
        path_str(&model),
        "--output",
        path_str(&grid),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let header = fs::read_to_string(&grid)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(header, "eruptions,waiting,density");
    let rows = csv_rows(&grid);
    assert_eq!(rows.len(), 10_000);
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() >= 0.0));

    let crabs = fit_record(
        dir.path(),
        &data_file("crabs.csv"),
        &[
            "--g-init",
            "2",
            "--max-iter",
            "5",
            "--columns",
            "FL,RW,CL,CW,BD",
        ],
    );
    let o = nigvb(&[
        "density-grid",
        "--model",
        path_str(&crabs),
        "--output",
        path_str(&grid),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("error[usage]"));
}
