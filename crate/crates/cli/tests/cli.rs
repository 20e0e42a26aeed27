use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use convivit::data::{save_clip, Clip};
use convivit::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn micro_cfg() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/micro.cfg")
}

fn convivit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convivit")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_micro(out: &Path, extra: &[&str]) -> Output {
    let cfg = micro_cfg();
    let mut args = vec!["train", "--config", s(&cfg), "--out", s(out)];
    args.extend_from_slice(extra);
    convivit(&args)
}

#[test]
fn train_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = train_micro(&a, &["--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["checkpoint.cvvtw", "metrics.log", "config.resolved", "eval.txt"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    let log = fs::read_to_string(a.join("metrics.log")).unwrap();
    assert_eq!(log.lines().count(), 3, "{log}");
    assert!(log.lines().last().unwrap().starts_with("final test_acc="));
    assert!(String::from_utf8_lossy(&o.stdout).contains("final test accuracy"));

    assert_eq!(code(&train_micro(&b, &["--seed", "3"])), 0);
    for f in ["metrics.log", "checkpoint.cvvtw", "config.resolved"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn bad_value_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = train_micro(&out, &["--set", "model.variant=bogus"]);
    assert_eq!(code(&o), 1);
    let msg = stderr(&o);
    assert!(msg.contains("model.variant") && msg.contains("bogus"), "{msg}");
    assert_eq!(msg.trim().lines().count(), 1, "{msg}");
    assert!(!out.exists());

    let o = train_micro(&out, &["--set", "model.deph=2"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("model.deph"));
    assert_eq!(code(&convivit(&["frobnicate"])), 1);
}

#[test]
fn resolution_order_is_defaults_file_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = convivit(&[
        "bench",
        "--config",
        s(&micro_cfg()),
        "--seed",
        "9",
        "--set",
        "model.depth=2",
        "--set",
        "model.depth=3",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    for line in ["model.depth=3", "model.embed_dim=16", "model.stem_channels=64,128", "train.seed=9", "data.seed=9", "data.frames=2"] {
        assert!(resolved.lines().any(|l| l == line), "{line} not in\n{resolved}");
    }
}

#[test]
fn output_directory_guard() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("old.txt"), "x").unwrap();
    let cfg = micro_cfg();
    let args = ["bench", "--config", s(&cfg), "--out", s(&out)];
    let o = convivit(&args);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&convivit(&forced)), 0);
    assert!(out.join("flops.csv").is_file());
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = convivit(&["bench", "--config", s(&dir.path().join("nope.cfg")), "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn diverging_training_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = train_micro(&out, &["--set", "train.lr=1e30"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("NaN"));
    assert!(out.join("metrics.log").is_file());
}

#[test]
fn gradcheck_passes_on_micro_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let o = convivit(&["gradcheck", "--config", s(&micro_cfg()), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(out.join("gradcheck.txt")).unwrap();
    assert!(report.trim_end().ends_with("overall: PASS"), "{report}");
    assert!(report.contains("blocks.0") && report.contains("stem.0"));
}

#[test]
fn bench_csv_has_fixed_columns_and_inequality() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    assert_eq!(code(&convivit(&["bench", "--out", s(&out)])), 0);
    let csv = fs::read_to_string(out.join("flops.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "variant,stem,patch_embed,spatial_attention,temporal_attention,joint_attention,mlp,head,total");
    let total = |name: &str| -> u64 {
        let row = csv.lines().find(|l| l.starts_with(&format!("{name},"))).unwrap();
        row.rsplit(',').next().unwrap().parse().unwrap()
    };
    assert!(total("factorized-dot-product") < total("joint"));
    assert_eq!(csv.lines().count(), 4);
    let timings = fs::read_to_string(out.join("timings.csv")).unwrap();
    assert!(timings.starts_with("variant,batch,forward_seconds\n"));
}

fn random_clip(path: &Path, frames: usize) {
    let video = Tensor::uniform(&[3, frames, 16, 16], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    save_clip(&Clip::new(video).unwrap(), path).unwrap();
}

#[test]
fn infer_and_export_attention() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&train_micro(&run, &[])), 0);
    let ckpt = run.join("checkpoint.cvvtw");
    let clip = dir.path().join("clip.cvvtc");
    random_clip(&clip, 8);

    let o = convivit(&["infer", "--checkpoint", s(&ckpt), "--clip", s(&clip)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("class=") && stdout.contains("logits="), "{stdout}");

    let maps = dir.path().join("maps");
    let o = convivit(&["export-attention", "--checkpoint", s(&ckpt), "--clip", s(&clip), "--out", s(&maps)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut names: Vec<String> = fs::read_dir(&maps).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    let heatmaps: Vec<&String> = names.iter().filter(|n| n.ends_with(".ppm")).collect();
    assert_eq!(heatmaps.len(), 8);
    for (t, n) in heatmaps.iter().enumerate() {
        assert_eq!(**n, format!("attention_l0_h0_t{t:03}.ppm"));
    }
    let heat = fs::read(maps.join(heatmaps[0])).unwrap();
    assert!(heat.starts_with(b"P6\n16 16\n255\n"));
    for block in [1, 2] {
        let n = names.iter().filter(|n| n.starts_with(&format!("stem{block}_")) && n.ends_with(".pgm")).count();
        assert_eq!(n, 8, "stem{block}");
    }

    let o = convivit(&["export-attention", "--checkpoint", s(&ckpt), "--clip", s(&clip), "--layer", "3", "--out", s(&dir.path().join("bad"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("0..=0"), "{}", stderr(&o));
}

#[test]
fn corrupt_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.cvvtw");
    fs::write(&ckpt, b"CVVTW\x01").unwrap();
    let clip = dir.path().join("clip.cvvtc");
    random_clip(&clip, 2);
    let o = convivit(&["infer", "--checkpoint", s(&ckpt), "--clip", s(&clip)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}
