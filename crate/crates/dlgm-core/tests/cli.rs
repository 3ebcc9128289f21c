use std::path::Path;
use std::process::Command;

use dlgm::io::{load_model, read_csv};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dlgm"))
}

/// `n` 4×4 images made of two stripe patterns.
fn write_images(path: &Path, n: u32) {
    let mut b = 0x0803u32.to_be_bytes().to_vec();
    for d in [n, 4, 4] {
        b.extend_from_slice(&d.to_be_bytes());
    }
    for i in 0..n {
        for p in 0..16u32 {
            let on = if i % 2 == 0 { p % 4 < 2 } else { p / 4 < 2 };
            b.push(if on { 230 } else { 10 });
        }
    }
    std::fs::write(path, b).unwrap();
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let out = cmd.output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn train_small(dir: &Path, out: &str, seed: &str) -> (i32, String, String) {
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"latent_dims":[2],"hidden":6,"minibatch":10,"steps":40,"alpha":0.01,"checkpoint_every":20}"#,
    )
    .unwrap();
    run(bin()
        .args(["train", "--seed", seed, "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(dir.join("x.idx"))
        .arg("--out-dir")
        .arg(dir.join(out)))
}

#[test]
fn train_then_every_analysis_command() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_images(&d.join("x.idx"), 30);
    let (code, stdout, stderr) = train_small(d, "a", "3");
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("step 40"));

    let model = d.join("a/model.dlgm");
    let file = load_model(&model).unwrap();
    assert_eq!(file.step, 40);
    assert_eq!(file.seed, 3);
    assert_eq!(file.image_shape, Some((4, 4)));
    assert!(file.optimizer.is_some());
    let mid = load_model(d.join("a/checkpoint-20.dlgm")).unwrap();
    assert_eq!(mid.step, 20);
    assert_eq!(load_model(d.join("a/checkpoint-40.dlgm")).unwrap(), file);

    let metrics = std::fs::read_to_string(d.join("a/metrics.csv")).unwrap();
    assert!(metrics.starts_with("# seed=3\n# config_sha256="));
    let (header, rows) = read_csv(d.join("a/metrics.csv")).unwrap();
    assert_eq!(header[0], "step");
    assert_eq!(rows.len(), 40);

    let common = |c: &mut Command| {
        c.arg("--model-in")
            .arg(&model)
            .arg("--data")
            .arg(d.join("x.idx"))
            .arg("--out-dir")
            .arg(d.join("a"));
    };
    for args in [
        vec!["sample", "--count", "5"],
        vec!["eval-ll", "--S", "20", "--limit", "4"],
        vec!["impute", "--mask", "square:1,1,2", "--iters", "5", "--count", "2"],
        vec!["embed"],
        vec!["posterior-grid", "--grid", "-2,2,5", "--index", "1"],
    ] {
        let mut c = bin();
        c.args(&args);
        common(&mut c);
        let (code, _, stderr) = run(&mut c);
        assert_eq!(code, 0, "{args:?}: {stderr}");
    }
    let pgm = std::fs::read(d.join("a/samples.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n12 8\n255\n"));
    assert_eq!(read_csv(d.join("a/log_likelihood.csv")).unwrap().1.len(), 4);
    let (_, grid) = read_csv(d.join("a/posterior_grid.csv")).unwrap();
    assert_eq!(grid.len(), 25);
    assert!((grid.iter().map(|r| r[2]).sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(read_csv(d.join("a/embedding.csv")).unwrap().1.len(), 30);
}

#[test]
fn same_seed_same_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_images(&d.join("x.idx"), 20);
    assert_eq!(train_small(d, "a", "9").0, 0);
    assert_eq!(train_small(d, "b", "9").0, 0);
    let strip = |p: &str| {
        let (_, rows) = read_csv(d.join(p)).unwrap();
        rows.into_iter().map(|r| r[..5].to_vec()).collect::<Vec<_>>()
    };
    assert_eq!(strip("a/metrics.csv"), strip("b/metrics.csv"));
    assert_eq!(
        std::fs::read(d.join("a/model.dlgm")).unwrap(),
        std::fs::read(d.join("b/model.dlgm")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = |c: &mut Command| {
        c.arg("--out-dir").arg(d);
    };

    let mut c = bin();
    c.args(["train", "--bogus"]);
    assert_eq!(run(&mut c).0, 1);

    let mut c = bin();
    c.args(["sample"]);
    out(&mut c);
    assert_eq!(run(&mut c).0, 1);

    std::fs::write(d.join("bad.idx"), [0xde, 0xad, 0xbe, 0xef, 0, 0, 0, 0]).unwrap();
    let mut c = bin();
    c.args(["train", "--data"]).arg(d.join("bad.idx"));
    out(&mut c);
    let (code, _, stderr) = run(&mut c);
    assert_eq!(code, 2);
    assert!(stderr.contains("magic"));

    let mut c = bin();
    c.args(["gradcheck", "--seed", "2"]);
    out(&mut c);
    let (code, stdout, _) = run(&mut c);
    assert_eq!(code, 0);
    assert!(stdout.contains("rank-one"));

    // A step this large swamps the finite differences with truncation error.
    let mut c = bin();
    c.args(["gradcheck", "--step", "0.5"]);
    out(&mut c);
    assert_eq!(run(&mut c).0, 3);
}

#[test]
fn varbench_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run(bin()
        .args(["varbench", "--K-sweep", "1,2,8", "--trials", "200", "--out-dir"])
        .arg(dir.path()));
    assert_eq!(code, 0);
    assert!(stdout.contains("R²"));
    let (header, rows) = read_csv(dir.path().join("varbench.csv")).unwrap();
    assert_eq!(header, ["k", "gbp_variance", "reinforce_variance"]);
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), vec![1.0, 2.0, 8.0]);
}
