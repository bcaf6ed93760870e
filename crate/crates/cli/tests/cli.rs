use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aeforce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aeforce"))
        .args(args)
        .output()
        .unwrap()
}

const SMALL: [&str; 4] = [
    "--set",
    "synth.experiment.duration_s=120",
    "--set",
    "synth.time_compression=100",
];

fn synth(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["synth", "--seed", "7", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    args.extend(extra);
    aeforce(&args)
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(aeforce(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn unknown_config_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = aeforce(&[
        "synth",
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "fine.nope=1",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fine.nope"));
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(synth(a.path(), &["--count", "2"]).status.success());
    assert!(synth(b.path(), &["--count", "2"]).status.success());
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    assert!(ta.iter().any(|(n, _)| n.ends_with("truth.csv")));
    assert_eq!(ta, tb);
}

#[test]
fn snr_sweep_writes_one_directory_per_level() {
    let dir = tempfile::tempdir().unwrap();
    assert!(synth(dir.path(), &["--snr", "inf,10,1"]).status.success());
    for s in ["inf", "10", "1"] {
        assert!(
            dir.path()
                .join(format!("synth-0-snr{s}"))
                .join("meta.json")
                .exists(),
            "{s}"
        );
    }
}

#[test]
fn train_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    assert!(synth(&data, &["--count", "2"]).status.success());
    let data = data.to_str().unwrap();
    let grid = [
        "--set",
        "fine.forest.n_trees=[10]",
        "--set",
        "fine.forest.max_depth=[8]",
        "--set",
        "fine.forest.min_samples_leaf=[5]",
        "--set",
        "fine.forest.max_features=[\"sqrt\"]",
        "--set",
        "coarse.forest.n_trees=[10]",
        "--set",
        "coarse.forest.max_depth=[8]",
        "--set",
        "coarse.forest.min_samples_leaf=[2]",
        "--set",
        "coarse.forest.max_features=[1.0]",
    ];
    let fine = d.join("fine");
    let coarse = d.join("coarse");
    let pred = d.join("pred");
    let run = |cmd: &[&str]| {
        let mut args = cmd.to_vec();
        args.extend(grid);
        let o = aeforce(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run(&[
        "train-fine",
        "--data",
        data,
        "--out",
        fine.to_str().unwrap(),
    ]);
    run(&[
        "train-coarse",
        "--data",
        data,
        "--out",
        coarse.to_str().unwrap(),
    ]);
    run(&[
        "predict",
        "--fine-model",
        fine.join("model_fine.json").to_str().unwrap(),
        "--coarse-model",
        coarse.join("model_coarse.json").to_str().unwrap(),
        "--data",
        data,
        "--only",
        "synth-0",
        "--out",
        pred.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(pred.join("prediction.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t_s,F_ground_mN,F_pred_mN"));
    assert!(lines.count() > 100);
    assert!(pred.join("run_config.json").exists());
    assert!(fs::read_to_string(pred.join("log.txt"))
        .unwrap()
        .contains("synth-0"));
}

#[test]
fn missing_data_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = aeforce(&[
        "stats",
        "--data",
        dir.path().join("absent").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}
