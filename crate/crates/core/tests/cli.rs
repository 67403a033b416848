use std::path::Path;
use std::process::Command;

const CONFIG: &str = "seed = 2
train.count = 16
train.size = 16
test.size = 16
test.sequences = 1
test.frames = 25
net.encoder_widths = 4
pretrain.epochs = 1
pretrain.batch_size = 8
finetune.epochs = 1
finetune.batch_size = 8
repetitions = 1
sweep.reg_kinds = sparse-jacobian
sweep.alpha_indices = 3
sweep.augmentation_alpha = none
";

fn run(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_tempstab"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn last_line(s: &str) -> Vec<String> {
    s.lines()
        .last()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn end_to_end_through_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.txt");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");

    run(&["gen-data", "--config", p(&cfg), "--out", p(&out)]);
    assert!(out.join("test/manifest.txt").exists());
    assert!(out.join("train/manifest.txt").exists());

    let pre = last_line(&run(&["pretrain", "--config", p(&cfg), "--out", p(&out)]));
    let ckpt = pre[0].clone();
    assert!(ckpt.ends_with("pretrain_seed2.ckpt"));

    let ft = last_line(&run(&[
        "finetune",
        "--config",
        p(&cfg),
        "--out",
        p(&out),
        "--checkpoint",
        &ckpt,
        "--reg-kind",
        "transform-invariance",
        "--alpha",
        "0.8",
    ]));
    assert!(ft[0].ends_with("transform-invariance_a0.8_seed2.ckpt"));

    let dump = dir.path().join("dump");
    let ev = last_line(&run(&[
        "eval",
        "--config",
        p(&cfg),
        "--checkpoint",
        &ft[0],
        "--data",
        p(&out.join("test")),
        "--dump",
        p(&dump),
        "--condition",
        "ti",
    ]));
    assert_eq!(ev[0], "ti");
    let (psnr, s): (f64, f64) = (ev[1].parse().unwrap(), ev[2].parse().unwrap());
    assert!(psnr.is_finite() && s > 0.0);

    let m = run(&[
        "metrics",
        "--reference",
        p(&out.join("test")),
        "--reconstruction",
        p(&dump),
        "--condition",
        "ti",
    ]);
    assert_eq!(
        m.lines().next().unwrap(),
        "condition,psnr_db,smoothness,masked_pixels"
    );
    let m = last_line(&m);
    assert_eq!(m[3], ev[3]);
    // the dump holds the predictions clipped to [0, y_max] and quantized to 16 bits
    let (set, y_max) = tempstab::procgen::read_dataset(&out.join("test")).unwrap();
    let net = tempstab::nn::load_checkpoint(Path::new(&ft[0])).unwrap();
    let clipped: Vec<Vec<_>> = tempstab::harness::predict(&net, &set)
        .unwrap()
        .into_iter()
        .map(|s| s.into_iter().map(|f| f.clamp(0.0, y_max)).collect())
        .collect();
    let want = tempstab::harness::evaluate_predictions(&set, &clipped, y_max).unwrap();
    assert!(
        (m[1].parse::<f64>().unwrap() - want.psnr).abs() < 1e-3,
        "{m:?} vs {want:?}"
    );
    assert!((m[2].parse::<f64>().unwrap() / want.smoothness - 1.0).abs() < 1e-3);

    let same = last_line(&run(&[
        "metrics",
        "--reference",
        p(&out.join("test")),
        "--reconstruction",
        p(&out.join("test")),
    ]));
    assert_eq!(same[1], "inf");
    assert_eq!(same[2], "1");

    let sweep_out = dir.path().join("sweep");
    run(&[
        "sweep",
        "--config",
        p(&cfg),
        "--out",
        p(&sweep_out),
        "--workers",
        "2",
    ]);
    let csv = std::fs::read_to_string(sweep_out.join("runs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "repetitions = 0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tempstab"))
        .args(["sweep", "--config", p(&cfg)])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("repetitions"));
}
