use std::path::Path;
use std::process::{Command, Output};

use dgda::format::{manifest_path, read_features};

const SMALL: [&str; 7] = [
    "--epochs=2",
    "--batch_size=4",
    "--model_dim=6",
    "--gru_hidden=4",
    "--synth.dialogues_per_domain=12",
    "--synth.d_t=4",
    "--synth.d_a=3",
];

fn dgda(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_dgda")).args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "dgda {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn value<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no `{key}` in {text}"))
}

#[test]
fn train_twice_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let mut args = vec!["train", "--out", a.to_str().unwrap()];
    args.extend(SMALL);
    dgda(&args);
    args[2] = b.to_str().unwrap();
    args.insert(3, "--sequential");
    dgda(&args);
    let (a, b) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,wf1,f1_class0,f1_class1,f1_class2,f1_class3,memorization_rate,branch_agreement,L_D,L_adv,L_couple,L_cls"
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn generate_then_train_on_files_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("gen.cfg");
    std::fs::write(&cfg, "# small pair\nd_t=4\nd_a=3\nd_v=2\ndialogues_per_domain=10\nseed=3\n").unwrap();
    dgda(&["generate", "--config", cfg.to_str().unwrap(), "--out-dir", d.to_str().unwrap(), "--noise_rate=0.2"]);
    let src = d.join("source.dgdf");
    let tgt = d.join("target.dgdf");
    assert!(manifest_path(&src).exists());
    let ds = read_features(&src).unwrap();
    assert_eq!(ds.dims, [4, 3, 2]);
    let flipped = ds.flat_noise_mask().iter().filter(|m| **m).count();
    assert_eq!(flipped, (0.2 * ds.num_utterances() as f64).round() as usize);

    let snap = d.join("model.dgdp");
    let source_arg = format!("--source_path={}", src.display());
    let target_arg = format!("--target_path={}", tgt.display());
    let out = dgda(&[
        "train",
        "--snapshot",
        snap.to_str().unwrap(),
        &source_arg,
        &target_arg,
        "--epochs=1",
        "--batch_size=4",
        "--model_dim=5",
        "--gru_hidden=3",
    ]);
    assert_eq!(stdout(&out).lines().count(), 2);
    let report = stdout(&dgda(&["evaluate", "--model", snap.to_str().unwrap(), "--data", tgt.to_str().unwrap()]));
    let wf1: f64 = value(&report, "wf1").parse().unwrap();
    assert!((0.0..=1.0).contains(&wf1));
    let rows: u64 = (0..4)
        .map(|k| value(&report, &format!("confusion_row{k}")).split(',').map(|c| c.parse::<u64>().unwrap()).sum::<u64>())
        .sum();
    assert_eq!(rows as usize, read_features(&tgt).unwrap().num_utterances());
}

#[test]
fn bound_plug_in_and_csv() {
    let kv = stdout(&dgda(&[
        "bound",
        "--source-risk=0.2",
        "--target-risk=0.15",
        "--w1=0.3",
        "--omega=0.1",
        "--rademacher=0.05",
        "--eta=0.2",
    ]));
    let total: f64 = value(&kv, "total").parse().unwrap();
    let (ns, nt) = (1000.0f64, 50.0f64);
    let cx = ((40.0 / ns) * (std::f64::consts::E * ns / 10.0).ln() + (1.0 / ns) * 20f64.ln()).sqrt();
    let expected = nt / (ns + nt) * 0.15 + ns / (ns + nt) * (0.2 + cx + 0.6 + 0.1);
    assert!((total - expected).abs() < 1e-12);
    assert!(value(&kv, "noise_total").parse::<f64>().unwrap() > 0.0);
    let csv = stdout(&dgda(&["bound", "--w1=0.3", "--csv"]));
    assert!(csv.lines().count() >= 2);
}

#[test]
fn bound_measures_w1_from_feature_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dgda(&["generate", "--out-dir", d.to_str().unwrap(), "--dialogues_per_domain=8", "--d_t=3", "--d_a=2", "--d_v=2"]);
    let s = d.join("source.dgdf");
    let t = d.join("target.dgdf");
    let args = [
        "bound",
        "--source-features",
        s.to_str().unwrap(),
        "--target-features",
        t.to_str().unwrap(),
    ];
    let a = stdout(&dgda(&args));
    let w1: f64 = value(&a, "w1").parse().unwrap();
    assert!(w1 > 0.0);
    assert_eq!(a, stdout(&dgda(&args)));
    let same = stdout(&dgda(&["bound", "--source-features", s.to_str().unwrap(), "--target-features", s.to_str().unwrap()]));
    assert_eq!(value(&same, "w1").parse::<f64>().unwrap(), 0.0);
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let mut args = vec!["sweep", "--seeds=1,2", "--noise-rates=0,0.2", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    args[5] = "--epochs=1";
    dgda(&args);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("seed,noise_rate,epoch,wf1"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn bad_override_is_reported() {
    let out = Command::new(env!("CARGO_BIN_EXE_dgda"))
        .args(["train", "--no_such_key=1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
    assert!(!Path::new("no_such_key").exists());
}
