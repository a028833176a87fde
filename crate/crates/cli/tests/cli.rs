use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use witunet::metrics::{psnr, MetricConfig};
use witunet::net::{Checkpoint, NetConfig};
use witunet::Tensor;

fn witunet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_witunet"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn make_data(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["make-data", "--out", out, "--n-train", "8", "--n-test", "2", "--size", "64", "--seed", "7"];
    args.extend_from_slice(extra);
    witunet(&args)
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "train", "test"] {
        let mut files: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
        files.sort();
        for f in files {
            out.push((f.strip_prefix(dir).unwrap().display().to_string(), fs::read(&f).unwrap()));
        }
    }
    out
}

#[test]
fn make_data_writes_counted_deterministic_corpus() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let o = make_data(a.path(), &["--pgm"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("wrote 10 pairs"));
    let manifest = fs::read_to_string(a.path().join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 10);
    assert_eq!(fs::read_dir(a.path().join("train")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "wten").count(), 16);
    let pgm = fs::read(a.path().join("test/00008_ldct.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n64 64\n255\n"));
    assert_eq!(pgm.len(), b"P5\n64 64\n255\n".len() + 64 * 64);
    assert!(make_data(b.path(), &["--pgm"]).status.success());
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
}

#[test]
fn make_data_bad_path_fails_without_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, b"").unwrap();
    let target = blocker.join("corpus");
    let o = make_data(&target, &[]);
    assert!(!o.status.success());
    assert!(!target.join("manifest.tsv").exists());
    assert!(stderr(&o).contains("error"));
}

#[test]
fn train_desk_preset_writes_outputs_and_eval_reports_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(witunet(&["make-data", "--out", data.to_str().unwrap(), "--n-train", "2", "--n-test", "1", "--size", "16", "--seed", "3"]).status.success());
    let manifest = data.join("manifest.tsv");
    let ck = dir.path().join("run.witu");
    let o = witunet(&[
        "train", "--preset", "desk", "--epochs", "2", "--manifest", manifest.to_str().unwrap(), "--out", ck.to_str().unwrap(), "--seed", "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["run.witu", "run.best.witu", "run.steps.csv", "run.epochs.csv", "run.log.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let saved = Checkpoint::load(&ck).unwrap();
    assert_eq!(saved.net, NetConfig::desk());
    assert_eq!((saved.progress.epoch, saved.progress.step), (2, 4));

    let ablated = dir.path().join("ablated.witu");
    let o = witunet(&[
        "train", "--preset", "desk", "--epochs", "1", "--ablate-lipe", "--ablate-nested", "--manifest", manifest.to_str().unwrap(), "--out", ablated.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let net = Checkpoint::load(&ablated).unwrap().net;
    assert!(!net.use_lipe && !net.use_nested);

    let out_dir = dir.path().join("eval");
    let o = witunet(&[
        "eval", "--checkpoint", ck.to_str().unwrap(), "--manifest", manifest.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap(), "--metric-max", "400",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out_dir.join("eval.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("index,source,psnr,ssim,rmse"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().any(|r| r.contains(",model,")) && rows.iter().any(|r| r.contains(",input-baseline,")));
    let json = fs::read_to_string(out_dir.join("eval.json")).unwrap();
    assert!(json.contains("\"input-baseline\"") && json.contains("400"));

    // the reported baseline PSNR must use MAX = 400
    let test_pair = fs::read_to_string(&manifest).unwrap().lines().last().unwrap().split('\t').map(String::from).collect::<Vec<_>>();
    let y = Tensor::load_wten(data.join(&test_pair[1])).unwrap();
    let x = Tensor::load_wten(data.join(&test_pair[2])).unwrap();
    let want = psnr(&y, &x, &MetricConfig::for_range(400.0)).unwrap();
    let baseline = rows.iter().find(|r| r.contains("input-baseline")).unwrap();
    let got: f64 = baseline.split(',').nth(2).unwrap().parse().unwrap();
    assert!((got - want).abs() < 1e-6 * want.abs(), "{got} vs {want}");
}

#[test]
fn train_missing_manifest_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere/manifest.tsv");
    let o = witunet(&["train", "--preset", "desk", "--manifest", missing.to_str().unwrap(), "--out", dir.path().join("x.witu").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(missing.to_str().unwrap()));
}

#[test]
fn denoise_with_zero_init_checkpoint_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("zero.witu");
    Checkpoint::initial(NetConfig::desk(), 1).unwrap().save(&ck).unwrap();
    for dims in [vec![13, 18], vec![1, 16, 16], vec![2, 1, 8, 12]] {
        let n: usize = dims.iter().product();
        let img = Tensor::from_fn(&dims, |i| ((i * 37) % 101) as f32 / 101.0);
        let (inp, out) = (dir.path().join("in.wten"), dir.path().join("out.wten"));
        img.save_wten(&inp).unwrap();
        let o = witunet(&["denoise", "--checkpoint", ck.to_str().unwrap(), "--input", inp.to_str().unwrap(), "--output", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(fs::read(&out).unwrap(), fs::read(&inp).unwrap(), "{n} values");
        let again = dir.path().join("again.wten");
        let o = witunet(&["denoise", "--checkpoint", ck.to_str().unwrap(), "--input", out.to_str().unwrap(), "--output", again.to_str().unwrap()]);
        assert!(o.status.success());
    }
    let bad = dir.path().join("bad.wten");
    Tensor::<f32>::zeros(&[2, 2, 4, 4]).save_wten(&bad).unwrap();
    let o = witunet(&["denoise", "--checkpoint", ck.to_str().unwrap(), "--input", bad.to_str().unwrap(), "--output", dir.path().join("o.wten").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_passes_and_detects_injected_fault() {
    let o = witunet(&["gradcheck"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let table = stdout(&o);
    for g in ["conv2d", "conv_transpose2d", "linear", "layer_norm", "w_msa", "lipe", "network"] {
        assert!(table.lines().any(|l| l.starts_with(g) && l.ends_with("PASS")), "{g}: {table}");
    }
    assert!(witunet(&["gradcheck", "--f64", "--group", "w_msa"]).status.success());
    let o = witunet(&["gradcheck", "--inject-wrong-sign", "--group", "lipe"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL"));
    assert_eq!(witunet(&["gradcheck", "--group", "nope"]).status.code(), Some(1));
}

#[test]
fn bench_prints_table_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let o = witunet(&["bench", "--sizes", "16,32", "--window", "4", "--channels", "4", "--repeats", "1", "--out", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    // global/windowed FLOP ratio equals H·W/M²
    let row: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[4].parse::<f64>().unwrap(), 32.0 * 32.0 / 16.0);
    assert_eq!(witunet(&["bench", "--sizes", "32"]).status.code(), Some(1));
}

#[test]
fn config_files_and_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    let out_file = dir.path().join("from-file");
    fs::write(&cfg, format!("# corpus\nout = {}\nn_train = 3\nn-test = 2\nsize = 16\n", out_file.display())).unwrap();
    let o = witunet(&["make-data", "--config", cfg.to_str().unwrap(), "--n-test", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = fs::read_to_string(out_file.join("manifest.tsv")).unwrap().lines().count();
    assert_eq!(lines, 4);

    fs::write(&cfg, "n-train = 3\nbogus = 1\n").unwrap();
    let o = witunet(&["make-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("bogus") && err.contains("n-train") && err.contains("intensity-hi"), "{err}");

    fs::write(&cfg, "n-train = many\n").unwrap();
    assert_eq!(witunet(&["make-data", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(witunet(&["make-data", "--config", dir.path().join("absent").to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(witunet(&["train", "--preset", "huge"]).status.code(), Some(1));
    assert_eq!(witunet(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn help_lists_every_flag_with_defaults() {
    let o = witunet(&["--help"]);
    assert!(o.status.success());
    for sub in ["make-data", "train", "denoise", "eval", "gradcheck", "bench"] {
        assert!(stdout(&o).contains(sub));
    }
    let o = witunet(&["train", "--help"]);
    let help = stdout(&o);
    for (flag, default) in [("--lr", "0.0005"), ("--epochs", "200"), ("--window", "8"), ("--preset", "\"full\""), ("--weight-decay", "0.0001")] {
        let line = help.lines().skip_while(|l| !l.contains(flag)).take(3).collect::<String>();
        assert!(line.contains(&format!("[default: {default}]")), "{flag}: {line}");
    }
    let o = witunet(&["eval", "--help"]);
    assert!(stdout(&o).contains("[default: 1.0]"));
    assert!(stdout(&o).contains("--metric-max"));
}
