use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn graphpd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphpd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "stderr should be one line: {text:?}");
    lines[0].to_string()
}

fn synth(dir: &Path, config: &str) -> String {
    let cfg = dir.join("synth.toml");
    fs::write(&cfg, config).unwrap();
    let data = dir.join("data");
    let out = graphpd(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    data.to_str().unwrap().to_string()
}

const SMALL: &str = "speakers_per_class = 10\nsegments_per_speaker = 3\ndim = 4\nclass_separation = 4.0\nlabel_noise_rate = 0.34\nseed = 5\n";

#[test]
fn synth_writes_the_dataset_and_noise_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), SMALL);
    let manifest = fs::read_to_string(Path::new(&data).join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 60);
    let flags = fs::read_to_string(Path::new(&data).join("noise_flags.tsv")).unwrap();
    assert!(flags.starts_with("segment_id\tis_noised\n"));
    assert_eq!(flags.lines().filter(|l| l.ends_with("\t1")).count(), 10);
}

#[test]
fn build_graph_exports_edges_and_rejects_k_equal_to_n() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), SMALL);
    let edges = dir.path().join("edges.tsv");
    let e = edges.to_str().unwrap();
    let ok = graphpd(&[
        "build-graph",
        "--data",
        &data,
        "--distance",
        "cosine",
        "--k",
        "3",
        "--out",
        e,
    ]);
    assert!(ok.status.success());
    let text = fs::read_to_string(&edges).unwrap();
    assert!(text.lines().count() >= 60 * 3 / 2);
    for line in text.lines() {
        let (i, j) = line.split_once('\t').unwrap();
        assert!(i.parse::<usize>().unwrap() < j.parse::<usize>().unwrap());
    }

    let bad = graphpd(&[
        "build-graph",
        "--data",
        &data,
        "--distance",
        "euclidean",
        "--k",
        "60",
        "--out",
        e,
    ]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(stderr_line(&bad).contains("k-too-large"));
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), SMALL);
    let grid = dir.path().join("grid.toml");
    fs::write(
        &grid,
        "learning_rates = [0.01]\nks = [2, 3]\nlayers = [2]\ndistances = [\"manhattan\"]\nhidden_width = 8\nmax_epochs = 30\n",
    )
    .unwrap();
    let mut reports = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = dir.path().join(name);
        let status = graphpd(&[
            "--jobs",
            "1",
            "run",
            "--data",
            &data,
            "--model",
            "gcn",
            "--grid",
            grid.to_str().unwrap(),
            "--replicates",
            "2",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        reports.push(fs::read(&out).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let summary = fs::read_to_string(dir.path().join("a.summary.tsv")).unwrap();
    assert!(summary.starts_with("model\tdistance\tk\tL\tmean\tstd\n"));
    assert!(summary.contains("gcn\tmanhattan\t3\t2\t"));
}

#[test]
fn sweep_over_k_emits_one_row_per_paper_value() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), SMALL);
    let fixed = dir.path().join("fixed.toml");
    fs::write(
        &fixed,
        "replicates = 2\nseed = 1\n[fixed]\neuclidean = 2\n[grid]\nlearning_rates = [0.01]\nhidden_width = 4\nmax_epochs = 5\n",
    )
    .unwrap();
    let out = dir.path().join("curve.tsv");
    let status = graphpd(&[
        "sweep",
        "--data",
        &data,
        "--axis",
        "k",
        "--fixed",
        fixed.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split('\t').collect())
        .collect();
    assert_eq!(text.lines().next(), Some("distance\tk\tmean\tstd"));
    let ks: Vec<&str> = rows.iter().map(|r| r[1]).collect();
    assert_eq!(ks, ["1", "2", "3", "5", "7", "10"]);
    assert!(rows.iter().all(|r| r[0] == "euclidean" && r.len() == 4));
}

#[test]
fn sweep_over_depth_uses_the_paper_depths() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), SMALL);
    let fixed = dir.path().join("fixed.toml");
    fs::write(
        &fixed,
        "replicates = 1\n[fixed]\ncosine = 3\n[grid]\nlearning_rates = [0.01]\nhidden_width = 4\nmax_epochs = 3\n",
    )
    .unwrap();
    let out = dir.path().join("curve.tsv");
    let status = graphpd(&[
        "sweep",
        "--data",
        &data,
        "--axis",
        "L",
        "--fixed",
        fixed.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let text = fs::read_to_string(&out).unwrap();
    let depths: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap())
        .collect();
    assert_eq!(depths, ["2", "3", "4", "5"]);
}

#[test]
fn usage_errors_exit_2_with_one_line() {
    let out = graphpd(&["run", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error[usage]:"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "speakers_per_class = \"many\"\n").unwrap();
    let out = graphpd(&["synth", "--config", cfg.to_str().unwrap(), "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error[malformed-config]:"));

    fs::write(&cfg, "label_noise_rate = 1.5\n").unwrap();
    let out = graphpd(&["synth", "--config", cfg.to_str().unwrap(), "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error[invalid-config]:"));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let out = graphpd(&[
        "run",
        "--data",
        missing.to_str().unwrap(),
        "--model",
        "fc",
        "--out",
        "r.json",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_line(&out).starts_with("error[io]:"));

    // three speakers per class cannot fill ten folds
    let data = synth(
        dir.path(),
        "speakers_per_class = 3\nsegments_per_speaker = 2\n",
    );
    let out = graphpd(&["run", "--data", &data, "--model", "knn", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_line(&out).starts_with("error[too-few-speakers]:"));
}

#[test]
fn training_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), SMALL);
    let grid = dir.path().join("grid.toml");
    fs::write(&grid, "learning_rates = [1e200]\nmax_epochs = 20\n").unwrap();
    let out = graphpd(&[
        "run",
        "--data",
        &data,
        "--model",
        "fc",
        "--grid",
        grid.to_str().unwrap(),
        "--replicates",
        "1",
        "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr_line(&out).starts_with("error[training-diverged]:"));
}
