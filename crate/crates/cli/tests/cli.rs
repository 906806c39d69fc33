use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_switchvae"));
    c.env("RUST_LOG", "off").env_remove("SWITCHVAE_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn switchvae")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn sample_lines(manifest: &Path) -> Vec<String> {
    std::fs::read_to_string(manifest)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

fn small_data(dir: &Path, count: &str) -> PathBuf {
    let out = dir.join("ds");
    ok(&[
        "gen-data",
        "--families",
        "chair,table",
        "--count",
        count,
        "--seed",
        "7",
        "--resolution",
        "8",
        "--views",
        "2",
        "--out",
        s(&out),
    ]);
    out
}

const TINY_MODEL: [&str; 8] = [
    "--latent",
    "6",
    "--image-channels",
    "4",
    "--view-feature",
    "8",
    "--gru-hidden",
    "8",
];

fn train_args<'a>(data: &'a Path, out: &'a Path, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "train",
        "--data",
        s(data),
        "--out",
        s(out),
        "--epochs",
        "3",
        "--batch-size",
        "2",
        "--seed",
        "11",
    ];
    v.extend(TINY_MODEL);
    v.extend(extra);
    v
}

#[test]
fn gen_data_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_data(dir.path(), "50");
    assert_eq!(sample_lines(&a.join("manifest.txt")).len(), 100);

    let b = dir.path().join("again");
    ok(&[
        "gen-data",
        "--families",
        "chair,table",
        "--count",
        "50",
        "--seed",
        "7",
        "--resolution",
        "8",
        "--views",
        "2",
        "--out",
        s(&b),
    ]);
    assert_eq!(tree(&a), tree(&b));

    let empty = dir.path().join("empty");
    let out = run(&["gen-data", "--count", "0", "--out", s(&empty)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(sample_lines(&empty.join("manifest.txt")).is_empty());
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("SWITCHVAE_OUT", dir.path())
        .args([
            "gen-data",
            "--count",
            "1",
            "--resolution",
            "8",
            "--views",
            "1",
            "--run-id",
            "exp1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("exp1").join("manifest.txt").is_file());

    let out = run(&["gen-data", "--count", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["gen-data", "--count", "1", "--run-id", "../x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "3");
    for precision in ["f32", "f64"] {
        let a = dir.path().join(format!("a_{precision}"));
        let b = dir.path().join(format!("b_{precision}"));
        let extra = ["--precision", precision, "--checkpoint-every", "1"];
        ok(&train_args(&data, &a, &extra));
        ok(&train_args(&data, &b, &extra));
        let (ta, tb) = (tree(&a), tree(&b));
        assert!(ta.contains_key(Path::new("checkpoints/final.ckpt")));
        assert!(ta.contains_key(Path::new("checkpoints/epoch_0001.ckpt")));
        assert_eq!(ta, tb);
        let csv = String::from_utf8(ta[Path::new("epochs.csv")].clone()).unwrap();
        assert_eq!(csv.lines().count(), 4);
    }
}

#[test]
fn resumed_training_matches_a_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "3");
    let straight = dir.path().join("straight");
    ok(&train_args(&data, &straight, &["--checkpoint-every", "1"]));

    let resumed = dir.path().join("resumed");
    let mut first = train_args(&data, &resumed, &[]);
    first[6] = "1";
    ok(&first);
    let ckpt = resumed.join("checkpoints/final.ckpt");
    let ckpt_copy = dir.path().join("after1.ckpt");
    std::fs::copy(&ckpt, &ckpt_copy).unwrap();
    assert_eq!(
        std::fs::read(&ckpt_copy).unwrap(),
        std::fs::read(straight.join("checkpoints/epoch_0001.ckpt")).unwrap()
    );
    ok(&train_args(&data, &resumed, &["--resume", s(&ckpt_copy)]));
    assert_eq!(
        std::fs::read(resumed.join("checkpoints/final.ckpt")).unwrap(),
        std::fs::read(straight.join("checkpoints/final.ckpt")).unwrap()
    );
    assert_eq!(
        std::fs::read(resumed.join("epochs.csv")).unwrap(),
        std::fs::read(straight.join("epochs.csv")).unwrap()
    );
}

#[test]
fn config_file_fills_unset_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "2");
    let plain = dir.path().join("plain");
    ok(&train_args(&data, &plain, &["--lr", "1e-4"]));

    // The recorded settings reproduce the run.
    let replay = dir.path().join("replay");
    let settings = plain.join("config.txt");
    ok(&["train", "--config", s(&settings), "--out", s(&replay)]);
    assert_eq!(tree(&plain), tree(&replay));

    // Flags win over the file.
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "lr = 0.5\nepochs = 1\n").unwrap();
    let mixed = dir.path().join("mixed");
    ok(&train_args(&data, &mixed, &["--lr", "1e-4", "--config", s(&cfg)]));
    let settings = std::fs::read_to_string(mixed.join("config.txt")).unwrap();
    assert!(settings.contains("lr = 1e-4\n"), "{settings}");
    assert!(settings.contains("epochs = 3\n"), "{settings}");

    std::fs::write(&cfg, "learning-rate = 0.5\n").unwrap();
    let out = run(&train_args(&data, &dir.path().join("bad"), &["--config", s(&cfg)]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key `learning-rate`"));
}

#[test]
fn invalid_input_fails_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "2");
    let out_dir = dir.path().join("x");
    let not_a_checkpoint = data.join("manifest.txt");
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--bogus"],
        vec!["frobnicate"],
        vec!["train", "--out", s(&out_dir)],
        train_args(&data, &out_dir, &["--p-vox", "1.5"]),
        train_args(&data, &out_dir, &["--mode", "sideways"]),
        train_args(&data, &out_dir, &["--batch-size", "0"]),
        vec!["gen-data", "--families", "teapot", "--out", s(&out_dir)],
        vec![
            "eval-recon",
            "--checkpoint",
            "/does/not/exist",
            "--data",
            s(&data),
            "--out",
            s(&out_dir),
        ],
        vec![
            "eval-recon",
            "--checkpoint",
            s(&not_a_checkpoint),
            "--data",
            s(&data),
            "--out",
            s(&out_dir),
        ],
        vec!["train", "--data", "/does/not/exist", "--out", s(&out_dir)],
    ];
    for args in cases {
        let out = run(&args);
        assert!(!out.status.success(), "{args:?} succeeded");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error: "), "{err}");
        assert!(out.stdout.is_empty());
    }
}

#[test]
fn evaluation_and_latent_commands() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), "5");
    let other = dir.path().join("other");
    ok(&[
        "gen-data",
        "--families",
        "chair,table",
        "--count",
        "3",
        "--seed",
        "8",
        "--resolution",
        "8",
        "--views",
        "2",
        "--out",
        s(&other),
    ]);
    let run_dir = dir.path().join("run");
    ok(&train_args(&data, &run_dir, &[]));
    let ckpt = run_dir.join("checkpoints/final.ckpt");

    let recon = dir.path().join("recon");
    let line = ok(&[
        "eval-recon",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--out",
        s(&recon),
    ]);
    assert!(line.starts_with("iou=") && line.lines().count() == 1, "{line}");
    let csv = std::fs::read_to_string(recon.join("metrics.csv")).unwrap();
    let test_count = sample_lines(&data.join("manifest.txt"))
        .iter()
        .filter(|l| l.contains("\ttest\t"))
        .count();
    assert_eq!(csv.lines().count(), 1 + test_count + 1);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));

    let cls = dir.path().join("cls");
    let line = ok(&[
        "eval-classify",
        "--checkpoint",
        s(&ckpt),
        "--svm-train-manifest",
        s(&data),
        "--svm-test-manifest",
        s(&other),
        "--svm-train-split",
        "all",
        "--svm-test-split",
        "all",
        "--out",
        s(&cls),
    ]);
    assert_eq!(line.lines().count(), 1);
    assert!(line.starts_with("accuracy="), "{line}");
    for f in [
        "predictions.csv",
        "latents_train.csv",
        "latents_test.csv",
        "embedding.csv",
    ] {
        assert!(cls.join(f).is_file(), "{f}");
    }
    let preds = std::fs::read_to_string(cls.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + 6 + 1);

    let ids: Vec<String> = sample_lines(&data.join("manifest.txt"))
        .iter()
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect();
    let interp = dir.path().join("interp");
    let listed = ok(&[
        "latent",
        "interpolate",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--from",
        &ids[0],
        "--to",
        &ids[7],
        "--steps",
        "8",
        "--out",
        s(&interp),
    ]);
    assert_eq!(listed.lines().count(), 8);
    let binvox = std::fs::read_dir(&interp)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "binvox"))
        .count();
    assert_eq!(binvox, 8);

    // Codes from a latent CSV give the same exports as encoding the data.
    let via_csv = dir.path().join("via_csv");
    ok(&[
        "latent",
        "interpolate",
        "--checkpoint",
        s(&ckpt),
        "--latents",
        s(&cls.join("latents_train.csv")),
        "--from",
        &ids[0],
        "--to",
        &ids[7],
        "--steps",
        "8",
        "--out",
        s(&via_csv),
    ]);
    assert_eq!(tree(&interp), tree(&via_csv));

    let arith = dir.path().join("arith");
    let listed = ok(&[
        "latent",
        "arithmetic",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--base",
        &ids[0],
        "--plus",
        &ids[1],
        "--minus",
        &ids[1],
        "--out",
        s(&arith),
    ]);
    assert_eq!(listed.lines().count(), 1);
    assert_eq!(
        std::fs::read(arith.join("recon_000.binvox")).unwrap(),
        std::fs::read(interp.join("recon_000.binvox")).unwrap()
    );

    let trav = dir.path().join("trav");
    let listed = ok(&[
        "latent",
        "traverse",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--id",
        &ids[2],
        "--dim",
        "3",
        "--values=-2,0,2",
        "--out",
        s(&trav),
    ]);
    assert_eq!(listed.lines().count(), 3);
    let out = run(&[
        "latent",
        "traverse",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--id",
        &ids[2],
        "--dim",
        "6",
        "--out",
        s(&trav),
    ]);
    assert!(!out.status.success());
    let out = run(&[
        "latent",
        "interpolate",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--from",
        "nobody",
        "--to",
        &ids[0],
        "--out",
        s(&trav),
    ]);
    assert!(!out.status.success());
}
