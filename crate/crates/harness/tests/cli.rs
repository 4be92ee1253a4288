use std::path::Path;
use std::process::Command;

fn fuseg3d(args: &[&str], cwd: &Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_fuseg3d")).args(args).current_dir(cwd).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

const TINY: &str = r#"{
  "model": {"embed_dim": 4, "num_heads": 2, "window_size": 2, "depths": [1, 1, 1, 1], "fusion_kernels": [1, 3]},
  "train": {"window_depth": 8, "max_steps": 4, "val_every": 2, "folds": 2, "seed": 3}
}"#;

const SPEC: &str = r#"{"dims": [20, 20, 12], "semi_axis_range": [2.0, 3.5], "lesions": 2}"#;

#[test]
fn end_to_end_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), TINY).unwrap();
    std::fs::write(d.join("spec.json"), SPEC).unwrap();

    let (code, err) = fuseg3d(&["phantom", "--spec", "spec.json", "--count", "5", "--out", "cases"], d);
    assert_eq!(code, 0, "{err}");
    assert!(d.join("cases/phantom-004_mask.fsgv").exists());

    let (code, err) = fuseg3d(&["train", "--config", "cfg.json", "--fold", "1", "--data", "cases", "--out", "runs"], d);
    assert_eq!(code, 0, "{err}");
    let run = d.join("runs/fold1");
    for f in ["best.ckpt", "last.ckpt", "history.json", "metrics.csv", "tmtv.csv", "split.json"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let (code, err) = fuseg3d(
        &["infer", "--ckpt", "runs/fold1/best.ckpt", "--pet", "cases/phantom-000_pet.fsgv", "--ct", "cases/phantom-000_ct.fsgv", "--out", "pred/phantom-000.fsgv", "--binarize"],
        d,
    );
    assert_eq!(code, 0, "{err}");

    let (code, err) = fuseg3d(&["eval", "--ckpt", "runs/fold1/best.ckpt", "--data", "cases", "--out", "eval"], d);
    assert_eq!(code, 0, "{err}");
    let metrics = std::fs::read_to_string(d.join("eval/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 6);

    let (code, err) = fuseg3d(&["tmtv", "--pred-dir", "pred", "--gt-dir", "cases", "--out", "tmtv"], d);
    // One prediction cannot support a regression.
    assert_eq!(code, 3, "{err}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.json"), r#"{"train": {"beta2": 1.5}}"#).unwrap();
    assert_eq!(fuseg3d(&["train", "--config", "bad.json", "--fold", "0"], d).0, 2);
    assert_eq!(fuseg3d(&["ablate", "--axis", "width"], d).0, 2);
    assert_eq!(fuseg3d(&["ablate", "--axis", "heads", "--values", "3"], d).0, 2);
    assert_eq!(fuseg3d(&["frobnicate"], d).0, 2);
    std::fs::create_dir(d.join("empty")).unwrap();
    std::fs::write(d.join("cfg.json"), TINY).unwrap();
    assert_eq!(fuseg3d(&["train", "--config", "cfg.json", "--fold", "0", "--data", "empty"], d).0, 3);
    assert_eq!(fuseg3d(&["eval", "--ckpt", "missing.ckpt", "--data", "empty"], d).0, 3);

    let huge = TINY.replace(r#""window_depth": 8"#, r#""window_depth": 8, "lr": 1.5e308"#);
    std::fs::write(d.join("huge.json"), huge).unwrap();
    std::fs::write(d.join("spec.json"), SPEC).unwrap();
    assert_eq!(fuseg3d(&["phantom", "--spec", "spec.json", "--count", "4", "--out", "cases"], d).0, 0);
    let (code, err) = fuseg3d(&["train", "--config", "huge.json", "--fold", "0", "--data", "cases"], d);
    assert_eq!(code, 4, "{err}");
}
