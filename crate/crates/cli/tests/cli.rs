use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[model]
mechanism = "cholesky-residual"
dense_depth = 2
dense_width = 16

[train]
epsilon = "0.1"
epochs = 20
batch_size = 64
learning_rate = 0.1
seed = 3

[data]
kind = "two-moons"
n_train = 300
n_test = 200
seed = 1

[certify]
epsilons = [0, "0.1"]
"#;

fn lipcert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipcert")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn vra_column(csv: &str) -> Vec<f64> {
    csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect()
}

#[test]
fn train_certify_attack_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.toml", CONFIG);
    let out = tmp.path().join("run");
    let out_s = out.to_str().unwrap();
    let o = lipcert(&["train", "--config", &cfg, "--out", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["train_log.csv", "timing.csv", "checkpoint/manifest.toml", "checkpoint/weights.bin"] {
        assert!(out.join(f).exists(), "{f} missing");
    }

    let ckpt = out.join("checkpoint");
    let ckpt_s = ckpt.to_str().unwrap();
    let certify = |method: &str| {
        let o = lipcert(&["certify", "--checkpoint", ckpt_s, "--data", "two-moons:200:2", "--eps", "0,0.05,0.1,0.2", "--method", method]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        vra_column(&String::from_utf8(o.stdout).unwrap())
    };
    let (tight, naive) = (certify("tight"), certify("naive"));
    assert_eq!(tight.len(), 4);
    assert!(tight.windows(2).all(|w| w[1] <= w[0]));
    assert!(tight.iter().zip(&naive).all(|(t, n)| t >= n));

    let o = lipcert(&["attack", "--checkpoint", ckpt_s, "--data", "two-moons:100:2", "--eps", "0.1", "--steps", "20", "--restarts", "1"]);
    assert!(o.status.success());
    assert!(!String::from_utf8_lossy(&o.stderr).contains("warning"));

    let o = lipcert(&["report", "--run", out_s]);
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().contains("final epoch 19"));
}

#[test]
fn config_error_exits_2_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", &CONFIG.replace("epochs = 20", "epochs = 20\nunknown_key = 1"));
    let out = tmp.path().join("run");
    let o = lipcert(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("checkpoint").exists());
}

#[test]
fn shape_mismatch_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.toml", &CONFIG.replace("epochs = 20", "epochs = 1"));
    let out = tmp.path().join("run");
    assert!(lipcert(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let ckpt = out.join("checkpoint");
    let o = lipcert(&["certify", "--checkpoint", ckpt.to_str().unwrap(), "--data", "synthetic-images:10:2:4:0"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn divergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let text = CONFIG.replace("learning_rate = 0.1", "learning_rate = 1e12\ngrad_clip = 1e300");
    let cfg = write(tmp.path(), "run.toml", &text);
    let out = tmp.path().join("run");
    let o = lipcert(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("train_log.csv").exists());
}
