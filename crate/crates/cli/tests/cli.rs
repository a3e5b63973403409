use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ctxfuse_core::audio::SpectrogramImage;
use ctxfuse_core::pipeline::RunReport;

fn ctxfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxfuse")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(ctxfuse(&[]).status.code(), Some(1));
    assert_eq!(ctxfuse(&["train"]).status.code(), Some(1));
    assert_eq!(ctxfuse(&["calib", "--input", "x.csv", "--bins", "many"]).status.code(), Some(1));
    assert_eq!(ctxfuse(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_files_exit_with_three() {
    let o = ctxfuse(&["calib", "--input", "/nonexistent/preds.csv"]);
    assert_eq!(o.status.code(), Some(3));
    let o = ctxfuse(&["train", "--config", "/nonexistent/cfg.toml", "--out", "r.json"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "model.strategy = \"sideways\"\n").unwrap();
    let out = dir.path().join("r.json");
    let o = ctxfuse(&["train", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn calib_reports_ece_and_ace() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("preds.csv");
    fs::write(&input, "prob0,prob1,label\n1.0,0.0,0\n1.0,0.0,1\n0.0,1.0,1\n0.0,1.0,0\n").unwrap();
    let o = ctxfuse(&["calib", "--input", path(&input), "--ranges", "2"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["ece"].as_f64(), Some(0.5));
    assert_eq!(v["ece_bins"]["bins"].as_array().unwrap().len(), 10);

    let o = ctxfuse(&["calib", "--input", path(&input), "--ranges", "2", "--format", "csv"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("metric,class,lower,upper,count,accuracy,confidence"));
}

#[test]
fn calib_rejects_bad_labels() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("preds.csv");
    fs::write(&input, "0.3,0.7,2\n").unwrap();
    assert_eq!(ctxfuse(&["calib", "--input", path(&input)]).status.code(), Some(1));
}

#[test]
fn aso_prints_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    let lows: Vec<String> = (0..10).map(|i| format!("{}", 0.1 + i as f64 * 0.01)).collect();
    let highs: Vec<String> = (0..10).map(|i| format!("{}", 0.8 + i as f64 * 0.01)).collect();
    fs::write(&a, highs.join("\n")).unwrap();
    fs::write(&b, lows.join("\n")).unwrap();
    let o = ctxfuse(&["aso", path(&a), path(&b), "--iterations", "200"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("eps_min: 0.000000"), "{text}");
    assert!(text.contains("verdict: stochastically dominant"), "{text}");
    let again = ctxfuse(&["aso", path(&a), path(&b), "--iterations", "200"]);
    assert_eq!(again.stdout, o.stdout);
}

#[test]
fn ot_writes_plan_and_mapped_points() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src.csv");
    let tgt = dir.path().join("tgt.csv");
    fs::write(&src, "x,y\n0,0\n1,0\n").unwrap();
    fs::write(&tgt, "0,1\n1,1\n").unwrap();
    let plan = dir.path().join("plan.csv");
    let mapped = dir.path().join("mapped.csv");
    let o = ctxfuse(&["ot", "--source", path(&src), "--target", path(&tgt), "--plan", path(&plan), "--mapped", path(&mapped)]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["cost"].as_f64(), Some(1.0));
    assert_eq!(fs::read_to_string(&plan).unwrap(), "0.5,0\n0,0.5\n");
    assert_eq!(fs::read_to_string(&mapped).unwrap(), "0,1\n1,1\n");

    let o = ctxfuse(&["ot", "--source", path(&src), "--target", path(&tgt), "--solver", "sinkhorn", "--eps", "0.5"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["cost"].as_f64().unwrap() >= 1.0 - 1e-9);
}

fn write_wav(path: &Path, channels: u16) {
    let spec = hound::WavSpec {
        channels,
        sample_rate: 16_000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for i in 0..16_000 {
        let v = (2.0 * std::f64::consts::PI * 500.0 * i as f64 / 16_000.0).sin();
        for _ in 0..channels {
            w.write_sample((v * 20_000.0) as i16).unwrap();
        }
    }
    w.finalize().unwrap();
}

#[test]
fn features_tensor_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mono = dir.path().join("mono.wav");
    let stereo = dir.path().join("stereo.wav");
    write_wav(&mono, 1);
    write_wav(&stereo, 2);
    let t1 = dir.path().join("mono.cxft");
    let t2 = dir.path().join("stereo.cxft");
    let args = ["--n-fft", "512", "--hop", "256", "--n-mels", "40", "--image-size", "32"];
    for (wav, out) in [(&mono, &t1), (&stereo, &t2)] {
        let mut a = vec!["features", "--input", path(wav), "--output", path(out)];
        a.extend(args);
        assert!(ctxfuse(&a).status.success());
    }
    let image = SpectrogramImage::read_tensor(fs::File::open(&t1).unwrap()).unwrap();
    assert_eq!(image.shape(), (3, 32, 32));
    assert_eq!(fs::read(&t1).unwrap(), fs::read(&t2).unwrap());

    let prefix = dir.path().join("feat");
    let mut a = vec!["features", "--input", path(&mono), "--output", path(&prefix), "--format", "csv"];
    a.extend(args);
    assert!(ctxfuse(&a).status.success());
    let mel = fs::read_to_string(dir.path().join("feat.mel.csv")).unwrap();
    assert_eq!(mel.lines().count(), 32);
    assert!(dir.path().join("feat.delta2.csv").exists());
}

#[test]
fn train_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(
        &cfg,
        "model.fusion = \"co-attention\"\ntrain.runs = 2\ntrain.max_epochs = 2\ntask.train_size = 16\ntask.val_size = 0\ntask.test_size = 8\n",
    )
    .unwrap();
    let report = dir.path().join("tiny.json");
    let o = ctxfuse(&["train", "--config", path(&cfg), "--out", path(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("tiny: 2 runs"));
    let parsed = RunReport::from_json(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed.seeds, vec![0, 1]);

    let o = ctxfuse(&["eval", "--report", path(&report)]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("seed,epochs,best_epoch,precision"));

    let o = ctxfuse(&["report", path(&report)]);
    assert!(o.status.success());
    let table = stdout(&o);
    assert!(table.starts_with("model,runs,prec_mean,prec_std,rec_mean"));
    assert!(table.lines().nth(1).unwrap().starts_with("tiny,2,"));
}

#[test]
fn ablate_writes_reports_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("abl.toml");
    fs::write(
        &cfg,
        "train.runs = 1\ntrain.max_epochs = 1\ntask.train_size = 12\ntask.val_size = 4\ntask.test_size = 4\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = ctxfuse(&["ablate", "--config", path(&cfg), "--out-dir", path(&out), "--axis", "no-gate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("no-gate.json").exists());
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    let o = ctxfuse(&["ablate", "--config", path(&cfg), "--out-dir", path(&out), "--axis", "dropout"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_passes_on_defaults() {
    let o = ctxfuse(&["gradcheck", "--entries", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("parameter,max_rel_error,passed"));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")));
}
