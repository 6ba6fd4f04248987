use std::fs;
use std::path::{Path, PathBuf};

use zat_cli::run;

fn zat(args: &[&str]) -> i32 {
    run(std::iter::once("zat").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A three-domain corpus and a config small enough for one-epoch runs.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("gen.toml"), "domains = 3\nutterances_per_domain = 200\n").unwrap();
        assert_eq!(zat(&["gen-data", "--spec", s(&root.join("gen.toml")), "--out", s(&root.join("data"))]), 0);
        fs::write(
            root.join("exp.toml"),
            "corpus = \"data\"\n\
             [plan]\ntarget = \"flight_status\"\ntake = 30\ndev_take = 10\ntarget_sizes = [0, 10]\nseeds = [1]\n\
             [train]\nmax_epochs = 1\n[finetune]\nmax_epochs = 1\npatience = 1\n\
             [zat.dims]\nlstm_hidden = 4\nff_hidden = 4\n[zat.char_cnn]\nchannels = 4\n\
             [ct]\nfirst_hidden = 4\ncombine = 4\nsecond_hidden = 4\n[lstm]\nword_hidden = 4\nchar_hidden = 4\n",
        )
        .unwrap();
        Self { _dir: dir, root }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.root.join(p)
    }

    fn run(&self, args: &[&str], out: &str) -> i32 {
        let config = self.path("exp.toml");
        let out = self.path(out);
        let mut full: Vec<&str> = args.to_vec();
        full.extend(["--config", s(&config), "--out", s(&out)]);
        zat(&full)
    }

    fn read(&self, p: &str) -> String {
        fs::read_to_string(self.path(p)).unwrap()
    }
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(zat(&["frobnicate"]), 2);
    assert_eq!(zat(&[]), 2);
    assert_eq!(zat(&["eval", "--bogus"]), 2);
    assert_eq!(zat(&["--help"]), 0);
    assert_eq!(zat(&["--version"]), 0);
}

#[test]
fn bad_configs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "corpse = 1\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(zat(&["train-base", "--config", s(&cfg), "--out", s(&out)]), 1);
    assert_eq!(zat(&["train-base", "--config", s(&dir.path().join("missing.toml")), "--out", s(&out)]), 1);
    fs::write(&cfg, "[plan]\ntarget = \"x\"\n").unwrap();
    assert_eq!(zat(&["train-base", "--config", s(&cfg), "--out", s(&out)]), 1, "corpus does not exist");
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("gen.toml");
    fs::write(&spec, "domains = 2\nutterances_per_domain = 100\n").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(zat(&["gen-data", "--spec", s(&spec), "--out", s(&a), "--seed", "4"]), 0);
    assert_eq!(zat(&["gen-data", "--spec", s(&spec), "--out", s(&b), "--seed", "4"]), 0);
    let listing = |d: &Path| {
        let mut files = Vec::new();
        let mut stack = vec![d.to_path_buf()];
        while let Some(p) = stack.pop() {
            for e in fs::read_dir(&p).unwrap() {
                let e = e.unwrap().path();
                if e.is_dir() {
                    stack.push(e);
                } else {
                    files.push((e.strip_prefix(d).unwrap().to_path_buf(), fs::read(&e).unwrap()));
                }
            }
        }
        files.sort();
        files
    };
    assert_eq!(listing(&a), listing(&b));
    assert!(a.join("manifest.json").exists());
}

#[test]
fn pipeline_end_to_end() {
    let f = Fixture::new();
    assert_eq!(f.run(&["train-base", "--model", "zat"], "base"), 0);
    let base = f.path("base/model.ckpt");
    assert_eq!(f.run(&["finetune", "--base", s(&base), "--n", "0"], "ft0"), 0);
    assert_eq!(f.run(&["finetune", "--base", s(&base), "--n", "10"], "ft10"), 0);
    assert_eq!(f.run(&["eval", "--model", s(&base)], "ev_base"), 0);
    assert_eq!(f.run(&["eval", "--model", s(&f.path("ft0/model.ckpt"))], "ev_ft0"), 0);
    assert_eq!(f.read("ev_base/summary.json"), f.read("ev_ft0/summary.json"));
    assert_eq!(f.read("ev_base/report.tsv"), f.read("ev_ft0/report.tsv"));

    let manifest: serde_json::Value = serde_json::from_str(&f.read("ft10/manifest.json")).unwrap();
    assert_eq!(manifest["command"], "finetune");
    assert_eq!(manifest["args"]["n"], "10");
    assert!(manifest["inputs"].as_object().unwrap().keys().any(|k| k.ends_with("model.ckpt")));
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    fs::write(f.path("raw.txt"), "flight to paris at noon\n\nwhat is the status of flight 12 today\n").unwrap();
    assert_eq!(f.run(&["predict", "--model", s(&f.path("ft10/model.ckpt")), "--input", s(&f.path("raw.txt"))], "pred"), 0);
    let spans: Vec<serde_json::Value> =
        f.read("pred/predictions.jsonl").lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    for (i, a) in spans.iter().enumerate() {
        for b in &spans[i + 1..] {
            if a["utterance"] == b["utterance"] {
                let (a0, a1) = (a["start"].as_u64().unwrap(), a["end"].as_u64().unwrap());
                let (b0, b1) = (b["start"].as_u64().unwrap(), b["end"].as_u64().unwrap());
                assert!(a1 <= b0 || b1 <= a0, "{a} overlaps {b}");
            }
        }
    }

    assert_eq!(f.run(&["analyze", "--model", s(&base), "--min-frequency", "1"], "an"), 0);
    for file in ["position.tsv", "length.tsv", "pos.tsv"] {
        assert!(f.read(&format!("an/{file}")).lines().count() >= 1);
    }
    assert_eq!(f.run(&["dump-attention", "--model", s(&base), "--slot", "date", "--text", "flight on monday"], "att"), 0);
    assert_eq!(f.read("att/attention.tsv").lines().count(), 4);
    assert_eq!(f.run(&["dump-attention", "--model", s(&base), "--slot", "nope", "--text", "x"], "att2"), 1);
}

#[test]
fn baselines_train_and_evaluate() {
    let f = Fixture::new();
    assert_eq!(f.run(&["train-baseline", "--model", "ct"], "ct"), 0);
    assert_eq!(f.run(&["finetune", "--base", s(&f.path("ct/model.ckpt")), "--n", "10"], "ct10"), 0);
    assert_eq!(f.run(&["train-baseline", "--model", "lstm", "--n", "10"], "lstm"), 0);
    assert_eq!(f.run(&["train-baseline", "--model", "lstm", "--n", "0"], "lstm0"), 1);
    assert_eq!(f.run(&["eval", "--model", s(&f.path("lstm/model.ckpt")), "--split", "dev"], "ev"), 0);
    let summary: serde_json::Value = serde_json::from_str(&f.read("ev/summary.json")).unwrap();
    assert_eq!(summary["model"], "lstm");
    assert_eq!(f.run(&["finetune", "--base", s(&f.path("lstm/model.ckpt")), "--n", "10"], "bad"), 1);
}

#[test]
fn sweep_and_ablate_tables() {
    let f = Fixture::new();
    assert_eq!(f.run(&["sweep", "--models", "zat,lstm"], "sweep"), 0);
    let curve = f.read("sweep/learning_curve.tsv");
    let rows: Vec<&str> = curve.lines().collect();
    assert_eq!(rows[0], "model\t0\t10");
    assert!(rows[1].starts_with("zat\t") && rows[2].starts_with("lstm\t-\t"), "{curve}");

    assert_eq!(f.run(&["ablate", "--sizes", "0"], "ablate"), 0);
    let table = f.read("ablate/ablation.tsv");
    let labels: Vec<&str> = table.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(labels, ["ZAT", "-CRF", "-CHAR", "+WEFT"]);
}
