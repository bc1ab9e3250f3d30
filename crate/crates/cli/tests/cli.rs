use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

fn cchp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cchp"))
        .args(args)
        .env_remove("CCHP_SEED")
        .output()
        .expect("run cchp")
}

fn ok(args: &[&str]) -> String {
    let out = cchp(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path, users: &str, out_users: &str, extra: &[&str]) {
    let mut args = vec!["gen-data", "--out", s(dir), "--in-sample", users, "--out-sample", out_users, "--seed", "3"];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn gen_data_counts_and_reproducibility() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let summary = ok(&["gen-data", "--out", s(&a), "--in-sample", "1", "--out-sample", "0", "--seed", "5"]);
    assert!(summary.contains("clips: 72"), "{summary}");
    assert!(summary.contains("36 train, 36 in-sample test, 0 out-of-sample test"));
    let b = tmp.path().join("b");
    let out = Command::new(env!("CARGO_BIN_EXE_cchp"))
        .args(["gen-data", "--out", s(&b), "--in-sample", "1", "--out-sample", "0"])
        .env("CCHP_SEED", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    for f in ["manifest.json", "styles.json", "split.json", "clips/u00.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let short = tmp.path().join("short");
    ok(&["gen-data", "--out", s(&short), "--in-sample", "1", "--out-sample", "0", "--clip-frames", "30", "--rate", "6"]);
    let line = fs::read_to_string(short.join("clips/u00.jsonl")).unwrap();
    let clip: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(clip["gestures"].as_array().unwrap().len(), 30);
    assert_eq!(clip["rate_hz"], 6.0);
}

#[test]
fn full_scale_corpus_has_1080_clips() {
    let tmp = TempDir::new().unwrap();
    let summary = ok(&["gen-data", "--out", s(tmp.path()), "--in-sample", "10", "--out-sample", "5"]);
    assert!(summary.contains("clips: 1080"), "{summary}");
    assert!(summary.contains("360 train"), "{summary}");
}

#[test]
fn consistency_gate_rejects_shuffled_users() {
    let tmp = TempDir::new().unwrap();
    corpus(tmp.path(), "1", "0", &["--shuffled-users", "1"]);
    let out = cchp(&["check-consistency", "--corpus", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("user_id,same_label_mean,cross_label_mean,t,df,p_value,verdict\n"));
    let verdicts: Vec<&str> = table.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(verdicts, ["accepted", "rejected"]);
    let single = ok(&["check-consistency", "--corpus", s(tmp.path()), "--user", "u00"]);
    assert!(single.contains("u00,") && single.contains("accepted"));
}

#[test]
fn errors_are_named() {
    let tmp = TempDir::new().unwrap();
    let out = cchp(&["check-consistency", "--corpus", s(&tmp.path().join("missing"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: IoError:"));
    let out = cchp(&["eval", "--corpus", s(tmp.path()), "--checkpoints", "mc", "--out", "x.csv"]);
    assert!(!out.status.success());
}

#[test]
fn train_eval_infer_round_trip() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, "2", "1", &[]);
    let ckpt = tmp.path().join("cchp.ckpt");
    ok(&["train", "--corpus", s(&data), "--model", "cchp", "--out", s(&ckpt), "--epochs", "1", "--seed", "1"]);
    let history = fs::read_to_string(tmp.path().join("cchp.loss.csv")).unwrap();
    assert!(history.starts_with("step,nll,kl,p_tf\n"));
    assert_eq!(history.lines().count(), 1 + 3);

    let lstm = tmp.path().join("lstm.ckpt");
    let out = cchp(&["train", "--corpus", s(&data), "--model", "lstm", "--out", s(&lstm), "--epochs", "1", "--p-m", "0.3"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning: the lstm model ignores --p-m"));

    let report = tmp.path().join("report.csv");
    let ckpts = format!("mc,oracle,{},{}", s(&ckpt), s(&lstm));
    ok(&["eval", "--corpus", s(&data), "--checkpoints", &ckpts, "--settings", "all", "--out", s(&report)]);
    let table = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "model,setting,rmse_cm_s,rot_deg_s");
    assert_eq!(lines.len(), 1 + 4 * 4);
    assert!(table.contains("mc,mismatching,NA,NA"));
    assert!(table.contains("lstm,mismatching,NA,NA"));
    assert!(!table.contains("cchp,mismatching,NA"));
    let hist = fs::read_to_string(tmp.path().join("report_cumulative.csv")).unwrap();
    assert!(hist.starts_with("model,setting,bin_lo_deg,bin_hi_deg,count,top_decile_threshold_deg\n"));

    let context = data.join("clips/u02.jsonl");
    let clips = fs::read_to_string(&context).unwrap();
    let ctx_file = tmp.path().join("context.jsonl");
    fs::write(&ctx_file, clips.lines().take(3).collect::<Vec<_>>().join("\n")).unwrap();
    let clip: serde_json::Value = serde_json::from_str(clips.lines().nth(5).unwrap()).unwrap();
    let gestures = tmp.path().join("gestures.jsonl");
    let mut g = fs::File::create(&gestures).unwrap();
    for frame in clip["gestures"].as_array().unwrap() {
        writeln!(g, "{frame}").unwrap();
    }
    drop(g);
    let batch = tmp.path().join("batch.csv");
    let stream = tmp.path().join("stream.csv");
    let attention = tmp.path().join("attention.csv");
    ok(&["infer", "--checkpoint", s(&ckpt), "--context", s(&ctx_file), "--gestures", s(&gestures), "--out", s(&batch)]);
    ok(&[
        "infer", "--checkpoint", s(&ckpt), "--context", s(&ctx_file), "--gestures", s(&gestures), "--out", s(&stream),
        "--stream", "--dump-attention", s(&attention),
    ]);
    let batch = fs::read_to_string(&batch).unwrap();
    assert_eq!(batch, fs::read_to_string(&stream).unwrap());
    assert_eq!(batch.lines().count(), 51);
    let att = fs::read_to_string(&attention).unwrap();
    let rows: Vec<&str> = att.lines().collect();
    assert_eq!(rows.len(), 50);
    assert!(rows.iter().all(|r| r.split(',').count() == 150));

    // Frames piped through standard input are answered one at a time.
    let mut child = Command::new(env!("CARGO_BIN_EXE_cchp"))
        .args(["infer", "--checkpoint", s(&ckpt), "--context", s(&ctx_file), "--gestures", "-", "--out", "-", "--stream"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&fs::read(&gestures).unwrap()).unwrap();
    let piped = child.wait_with_output().unwrap();
    assert_eq!(String::from_utf8(piped.stdout).unwrap(), batch);

    let missing = cchp(&[
        "infer", "--checkpoint", s(&ckpt), "--context", s(&tmp.path().join("none.jsonl")), "--gestures", s(&gestures),
        "--out", s(&tmp.path().join("x.csv")),
    ]);
    assert_ne!(missing.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("EmptyContext"));

    fs::write(tmp.path().join("bad.jsonl"), "{\"t\": 0.0, \"keypoints\": [1.0]}\n").unwrap();
    let bad = cchp(&[
        "infer", "--checkpoint", s(&ckpt), "--context", s(&ctx_file), "--gestures", s(&tmp.path().join("bad.jsonl")),
        "--out", s(&tmp.path().join("x.csv")),
    ]);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("ParseError"));
}

#[test]
fn config_file_and_flags_combine() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, "1", "0", &[]);
    let cfg = tmp.path().join("train.toml");
    fs::write(&cfg, "epochs = 1\nbatch_size = 12\np_tf_init = 0.4\n").unwrap();
    let ckpt = tmp.path().join("m.ckpt");
    ok(&[
        "train", "--corpus", s(&data), "--model", "ranp", "--config", s(&cfg), "--out", s(&ckpt), "--batch-size", "18",
    ]);
    let history = fs::read_to_string(tmp.path().join("m.loss.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 2);
    assert!(history.lines().nth(1).unwrap().ends_with(",0.4"));
    fs::write(&cfg, "epochs = 1\nbogus = 3\n").unwrap();
    let out = cchp(&["train", "--corpus", s(&data), "--model", "cchp", "--config", s(&cfg), "--out", s(&ckpt)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error: ParseError"));
}

#[test]
fn ablation_table_has_one_row_per_value_and_setting() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, "1", "1", &[]);
    let out = tmp.path().join("ablate");
    ok(&[
        "ablate", "--corpus", s(&data), "--sweep", "p_tf", "--out", s(&out), "--epochs", "1", "--settings",
        "matching,new-user",
    ]);
    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "sweep,value,setting,rmse_cm_s,rot_deg_s");
    assert_eq!(lines.len(), 1 + 3 * 2);
    for v in ["0.1", "0.5", "0.9"] {
        assert!(out.join(format!("cchp_p_tf_{v}.ckpt")).exists());
        let h = fs::read_to_string(out.join(format!("cchp_p_tf_{v}.loss.csv"))).unwrap();
        assert!(h.lines().skip(1).all(|l| l.ends_with(&format!(",{v}"))));
    }
}
