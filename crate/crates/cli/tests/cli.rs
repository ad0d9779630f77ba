use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ladder_hsi::experiments::RunConfig;
use ladder_hsi::hsi::{load_cube, synthetic_cube, SyntheticSpec};
use ladder_hsi::train::parse_kv;
use tempfile::TempDir;

fn ladder(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ladder"))
        .current_dir(cwd)
        .env_remove("LADDER_DATA_DIR")
        .args(args)
        .output()
        .expect("spawn ladder")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_dirs(out: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn only_run_dir(out: &Path) -> PathBuf {
    let v = run_dirs(out);
    assert_eq!(v.len(), 1, "{v:?}");
    v[0].clone()
}

const TINY: &[&str] = &["--config", "synthetic", "--set", "train.iterations=30"];

#[test]
fn dry_run_prints_fc_lambdas_and_round_trips() {
    let tmp = TempDir::new().unwrap();
    let o = ladder(tmp.path(), &["train", "--config", "fc_pavia", "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("100,10,1,0.1,0.1,0"), "{text}");
    let cfg = RunConfig::from_toml(&text).unwrap();
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0, "dry run wrote files");
}

#[test]
fn dry_run_with_synthetic_fills_input_shape() {
    let tmp = TempDir::new().unwrap();
    let o = ladder(tmp.path(), &["train", "--config", "synthetic", "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = RunConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!(cfg.train.ladder.input_shape, vec![8]);
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let tmp = TempDir::new().unwrap();
    let o = ladder(
        tmp.path(),
        &[
            "train",
            "--config",
            "fc_pavia",
            "--set",
            "train.ladder.noise_stdd=0.3",
            "--dry-run",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error kind=config exit=2 message="), "{err}");
    assert!(err.contains("noise_stdd"), "{err}");

    let file = tmp.path().join("bad.toml");
    let text = ladder_hsi::experiments::config::FC_PAVIA.replace("noise_std = 0.3", "noise_stdd = 0.3");
    fs::write(&file, text).unwrap();
    let o = ladder(tmp.path(), &["train", "--config", file.to_str().unwrap(), "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("noise_stdd"));
}

#[test]
fn missing_dataset_exits_3_with_remediation() {
    let tmp = TempDir::new().unwrap();
    let o = ladder(tmp.path(), &["train", "--config", "fc_pavia", "--data-dir", "nowhere"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("kind=missing-dataset") && err.contains("hint="), "{err}");
    assert!(
        !tmp.path().join("out").exists(),
        "no run directory before the data is found"
    );
}

#[test]
fn flag_beats_set_beats_file() {
    let tmp = TempDir::new().unwrap();
    let seed = |args: &[&str]| {
        let mut a = vec!["train", "--config", "synthetic", "--dry-run"];
        a.extend_from_slice(args);
        let o = ladder(tmp.path(), &a);
        assert!(o.status.success(), "{}", stderr(&o));
        RunConfig::from_toml(&stdout(&o)).unwrap().train.seed
    };
    assert_eq!(seed(&[]), 1);
    assert_eq!(seed(&["--set", "train.seed=4"]), 4);
    assert_eq!(seed(&["--set", "train.seed=4", "--seed", "9"]), 9);
}

#[test]
fn train_writes_one_manifest_and_report() {
    let tmp = TempDir::new().unwrap();
    let mut args = vec!["train"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--out", "runs"]);
    let o = ladder(tmp.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let top: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(top, vec!["runs"], "wrote outside --out");
    let dir = only_run_dir(&tmp.path().join("runs"));
    for f in [
        "manifest.json",
        "config.toml",
        "report.txt",
        "loss_curve.csv",
        "checkpoint.ckpt",
        "split.csv",
    ] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let manifests = fs::read_dir(&dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("manifest")
        })
        .count();
    assert_eq!(manifests, 1);
    let kv = parse_kv(&fs::read_to_string(dir.join("report.txt")).unwrap());
    let oa: f64 = kv["oa"].parse().unwrap();
    assert!((0.0..=1.0).contains(&oa));
    assert_eq!(kv["iterations"], "30");

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["precision"], "f64");
    assert_eq!(manifest["seeds"], serde_json::json!([1]));
    let config = fs::read(dir.join("config.toml")).unwrap();
    let sha = sha256_hex(&config);
    assert_eq!(manifest["config"]["resolved_sha256"], sha);
    assert!(dir.file_name().unwrap().to_string_lossy().ends_with(&sha[..8]));
}

fn sha256_hex(bytes: &[u8]) -> String {
    // Independent of the binary: shell out to coreutils when present.
    let tmp = tempfile::NamedTempFile::new().unwrap();
    fs::write(tmp.path(), bytes).unwrap();
    let o = Command::new("sha256sum").arg(tmp.path()).output().expect("sha256sum");
    String::from_utf8(o.stdout)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .to_string()
}

fn write_pavia_like(dir: &Path) {
    let spec = SyntheticSpec {
        bands: 103,
        classes: 9,
        ..SyntheticSpec::default()
    };
    let cube = synthetic_cube(&spec).unwrap();
    cube.save(&dir.join("paviaU.hsc"), &dir.join("paviaU_gt.hsc")).unwrap();
}

#[test]
fn fc_default_trains_on_files_dataset() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_pavia_like(&data);
    let o = Command::new(env!("CARGO_BIN_EXE_ladder"))
        .current_dir(tmp.path())
        .env("LADDER_DATA_DIR", &data)
        .args([
            "train",
            "--config",
            "fc_pavia",
            "--labels",
            "10",
            "--seed",
            "1",
            "--set",
            "train.iterations=5",
            "--out",
            "o",
        ])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = only_run_dir(&tmp.path().join("o"));
    let kv = parse_kv(&fs::read_to_string(dir.join("report.txt")).unwrap());
    assert!(kv.contains_key("oa"));
    assert_eq!(kv["labeled"], "90");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["dataset"]["files"].as_array().unwrap();
    assert_eq!(files.len(), 2);
    assert_eq!(
        files[0]["sha256"],
        sha256_hex(&fs::read(data.join("paviaU.hsc")).unwrap())
    );
}

#[test]
fn resume_matches_uninterrupted_run() {
    let tmp = TempDir::new().unwrap();
    let mut full = vec!["train"];
    full.extend_from_slice(TINY);
    full.extend_from_slice(&["--out", "full"]);
    assert!(ladder(tmp.path(), &full).status.success());

    let mut part = vec!["train"];
    part.extend_from_slice(TINY);
    part.extend_from_slice(&["--out", "part", "--stop-after", "12", "--checkpoint-every", "5"]);
    let o = ladder(tmp.path(), &part);
    assert!(o.status.success(), "{}", stderr(&o));
    let part_dir = only_run_dir(&tmp.path().join("part"));
    let ck = part_dir.join("checkpoint.ckpt");
    let o = ladder(
        tmp.path(),
        &["train", "--resume", ck.to_str().unwrap(), "--out", "resumed"],
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let full_dir = only_run_dir(&tmp.path().join("full"));
    let res_dir = only_run_dir(&tmp.path().join("resumed"));
    assert_eq!(
        fs::read(full_dir.join("loss_curve.csv")).unwrap(),
        fs::read(res_dir.join("loss_curve.csv")).unwrap()
    );
    assert_eq!(
        fs::read(full_dir.join("checkpoint.ckpt")).unwrap(),
        fs::read(res_dir.join("checkpoint.ckpt")).unwrap()
    );
    let a = parse_kv(&fs::read_to_string(full_dir.join("report.txt")).unwrap());
    let b = parse_kv(&fs::read_to_string(res_dir.join("report.txt")).unwrap());
    assert_eq!(a["oa"], b["oa"]);
    assert_eq!(a["confusion"], b["confusion"]);
}

#[test]
fn eval_uses_config_beside_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let mut args = vec!["train"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--out", "t"]);
    assert!(ladder(tmp.path(), &args).status.success());
    let dir = only_run_dir(&tmp.path().join("t"));
    let ck = dir.join("checkpoint.ckpt");
    let o = ladder(
        tmp.path(),
        &["eval", "--checkpoint", ck.to_str().unwrap(), "--out", "e"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let eval = parse_kv(&fs::read_to_string(only_run_dir(&tmp.path().join("e")).join("eval.txt")).unwrap());
    let report = parse_kv(&fs::read_to_string(dir.join("report.txt")).unwrap());
    assert_eq!(eval["oa"], report["oa"]);
    assert_eq!(eval["confusion"], report["confusion"]);
}

#[test]
fn f32_precision_runs() {
    let tmp = TempDir::new().unwrap();
    let mut args = vec!["train", "--precision", "f32"];
    args.extend_from_slice(TINY);
    let o = ladder(tmp.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = only_run_dir(&tmp.path().join("out"));
    let ck = dir.join("checkpoint.ckpt");
    let o = ladder(tmp.path(), &["eval", "--checkpoint", ck.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn sweep_writes_rows_and_summary_and_resumes() {
    let tmp = TempDir::new().unwrap();
    let args = [
        "sweep",
        "--config",
        "synthetic",
        "--set",
        "train.iterations=10",
        "--set",
        "sweep.seeds=[1,2]",
        "--out",
        "s",
    ];
    let o = ladder(tmp.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = only_run_dir(&tmp.path().join("s"));
    let runs = fs::read_to_string(dir.join("sweep_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 4);
    let summary = fs::read_to_string(dir.join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2);

    let o = ladder(
        tmp.path(),
        &["sweep", "--resume", dir.to_str().unwrap(), "--set", "sweep.seeds=[1,2]"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(dir.join("sweep_runs.csv")).unwrap(), runs);
    assert_eq!(run_dirs(&tmp.path().join("s")).len(), 1);
}

#[test]
fn sweep_without_section_is_config_error() {
    let tmp = TempDir::new().unwrap();
    let text: String = ladder_hsi::experiments::config::SYNTHETIC
        .split("[sweep]")
        .next()
        .unwrap()
        .to_string();
    fs::write(tmp.path().join("c.toml"), text).unwrap();
    let o = ladder(tmp.path(), &["sweep", "--config", "c.toml", "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn table1_dry_run_lists_both_variants() {
    let tmp = TempDir::new().unwrap();
    let o = ladder(tmp.path(), &["table1", "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("# variant = fc") && text.contains("# variant = conv"));
}

#[test]
fn split_writes_csv() {
    let tmp = TempDir::new().unwrap();
    let o = ladder(tmp.path(), &["split", "--config", "synthetic", "--labels", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = only_run_dir(&tmp.path().join("out"));
    let csv = fs::read_to_string(dir.join("split.csv")).unwrap();
    let labeled = csv.lines().filter(|l| l.ends_with(",labeled")).count();
    assert_eq!(labeled, 12);
    assert_eq!(csv.lines().count(), 1 + 48 * 48);
}

fn write_raw_f64(path: &Path, values: &[f64], big: bool) {
    let bytes: Vec<u8> = values
        .iter()
        .flat_map(|v| if big { v.to_be_bytes() } else { v.to_le_bytes() })
        .collect();
    fs::write(path, bytes).unwrap();
}

#[test]
fn convert_round_trips_through_load_cube() {
    let tmp = TempDir::new().unwrap();
    let (h, w, b) = (4usize, 5usize, 3usize);
    let values: Vec<f64> = (0..h * w * b).map(|i| i as f64 * 0.5 - 3.0).collect();
    write_raw_f64(&tmp.path().join("cube.raw"), &values, false);
    let gt: Vec<u8> = (0..h * w).map(|i| (i % 3) as u8).collect();
    fs::write(tmp.path().join("gt.raw"), &gt).unwrap();
    let dims = format!("{h},{w},{b}");
    let o = ladder(
        tmp.path(),
        &[
            "convert", "--input", "cube.raw", "--dims", &dims, "--dtype", "f64", "--output", "cube.hsc",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let gdims = format!("{h},{w}");
    let o = ladder(
        tmp.path(),
        &[
            "convert", "--input", "gt.raw", "--dims", &gdims, "--dtype", "u8", "--output", "gt.hsc",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let cube = load_cube(&tmp.path().join("cube.hsc"), &tmp.path().join("gt.hsc"), None).unwrap();
    assert_eq!((cube.height, cube.width, cube.bands), (h, w, b));
    assert_eq!(cube.reflectance, values);
    assert_eq!(cube.ground_truth, gt);

    // Same input again: byte-identical output.
    let first = fs::read(tmp.path().join("cube.hsc")).unwrap();
    let o = ladder(
        tmp.path(),
        &[
            "convert",
            "--input",
            "cube.raw",
            "--dims",
            &dims,
            "--dtype",
            "f64",
            "--output",
            "again.hsc",
        ],
    );
    assert!(o.status.success());
    assert_eq!(fs::read(tmp.path().join("again.hsc")).unwrap(), first);
}

#[test]
fn convert_column_major_big_endian() {
    let tmp = TempDir::new().unwrap();
    // 2x3 matrix [[1,2,3],[4,5,6]] stored column-major, big-endian.
    write_raw_f64(&tmp.path().join("m.raw"), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0], true);
    let o = ladder(
        tmp.path(),
        &[
            "convert", "--input", "m.raw", "--dims", "2,3", "--dtype", "f64", "--order", "column", "--endian", "big",
            "--output", "m.hsc",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let a = ladder_hsi::hsi::ArrayFile::read(&tmp.path().join("m.hsc")).unwrap();
    assert_eq!(a.data.to_f64(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn convert_wrong_dims_leaves_nothing() {
    let tmp = TempDir::new().unwrap();
    write_raw_f64(&tmp.path().join("x.raw"), &[0.0; 24], false);
    let o = ladder(
        tmp.path(),
        &[
            "convert", "--input", "x.raw", "--dims", "2,3,5", "--dtype", "f64", "--output", "x.hsc",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("192") && err.contains("240"), "{err}");
    let names: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names, vec!["x.raw"]);
}
