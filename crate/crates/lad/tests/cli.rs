use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use lad::formats::Checkpoint;
use lad::run::AssignDump;
use serde_json::Value;

fn lad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lad")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn config(&self, name: &str, body: Value) -> String {
        let mut cfg = serde_json::json!({"format_version": 1, "train": {"seed": 5, "iterations": 10, "batch_scenes": 2}});
        merge(&mut cfg, body);
        fs::write(self.path(name), cfg.to_string()).unwrap();
        self.s(name)
    }

    fn gen(&self, cfg: &str, count: usize, out: &str) -> String {
        let o = lad(&["gen", "--config", cfg, "--count", &count.to_string(), "--out", &self.s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        self.s(out)
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn lines(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().map(str::to_owned).collect()
}

#[test]
fn gen_writes_requested_scenes() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.json", serde_json::json!({}));
    let a = sb.gen(&cfg, 10, "a.jsonl");
    let b = sb.gen(&cfg, 10, "b.jsonl");
    assert_eq!(lines(Path::new(&a)).len(), 10);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let empty = sb.gen(&cfg, 0, "e.jsonl");
    assert_eq!(fs::read(empty).unwrap().len(), 0);
}

#[test]
fn gen_ranges_continue_the_same_stream() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.json", serde_json::json!({}));
    let all = sb.gen(&cfg, 6, "all.jsonl");
    let o = lad(&["gen", "--config", &cfg, "--count", "2", "--first-id", "4", "--out", &sb.s("tail.jsonl")]);
    assert_eq!(code(&o), 0);
    assert_eq!(lines(&sb.path("tail.jsonl")), lines(Path::new(&all))[4..]);
}

#[test]
fn bad_config_names_the_field() {
    let sb = Sandbox::new();
    let cases = [
        (serde_json::json!({"train": {"lr": -1.0}}), "train.lr"),
        (serde_json::json!({"fusion": {"mode": "sideways"}}), "fusion.mode"),
        (serde_json::json!({"world": {"num_classes": "three"}}), "world.num_classes"),
        (serde_json::json!({"eval": {"nms_iou": 2.0}}), "eval.nms_iou"),
    ];
    for (i, (patch, field)) in cases.into_iter().enumerate() {
        let cfg = sb.config(&format!("bad{i}.json"), patch);
        let o = lad(&["gen", "--config", &cfg, "--count", "1", "--out", &sb.s("x.jsonl")]);
        assert_eq!(code(&o), 2);
        assert!(stderr(&o).contains(field), "{field}: {}", stderr(&o));
    }
    fs::write(sb.path("noseed.json"), r#"{"format_version": 1, "train": {}}"#).unwrap();
    let o = lad(&["gen", "--config", &sb.s("noseed.json"), "--count", "1", "--out", &sb.s("x.jsonl")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("seed"));
    assert_eq!(code(&lad(&["gen", "--count", "1"])), 2);
}

#[test]
fn train_eval_and_csv() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.json", serde_json::json!({}));
    let data = sb.gen(&cfg, 1, "d.jsonl");
    let o = lad(&["train", "--config", &cfg, "--data", &data, "--out", &sb.s("m.json"), "--threads", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(sb.path("m.json").exists());
    let hist = lines(&sb.path("m.json.history.jsonl"));
    assert_eq!(hist.len(), 10);
    let first: Value = serde_json::from_str(&hist[0]).unwrap();
    assert_eq!(first["format_version"], 1);
    assert_eq!(first["iter"], 0);

    let eval = |run: &str| {
        let o = lad(&[
            "eval", "--config", &cfg, "--checkpoint", &sb.s("m.json"), "--data", &data, "--csv", &sb.s("m.csv"),
            "--run-id", run,
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        serde_json::from_slice::<Value>(&o.stdout).unwrap()
    };
    let a = eval("r1");
    let b = eval("r1");
    assert_eq!(a, b);
    let csv = lines(&sb.path("m.csv"));
    assert_eq!(csv[0], "run_id,strategy,seed,AP50,mAP,tp,fp,fn,loc_err");
    assert_eq!(csv.len(), 3);
    assert_eq!(csv[1], csv[2]);
    assert!(csv[1].starts_with("r1,baseline,5,"));
}

fn keys(v: &Value) -> Vec<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

#[test]
fn distilled_and_colearned_runs() {
    let sb = Sandbox::new();
    let base = sb.config("base.json", serde_json::json!({}));
    let data = sb.gen(&base, 3, "d.jsonl");
    assert_eq!(code(&lad(&["train", "--config", &base, "--data", &data, "--out", &sb.s("t.json")])), 0);

    let missing = sb.config("lad0.json", serde_json::json!({"strategy": {"variant": "lad"}}));
    let o = lad(&["train", "--config", &missing, "--data", &data, "--out", &sb.s("s.json")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("strategy.teacher_path"));
    let gone = sb.config("lad1.json", serde_json::json!({"strategy": {"variant": "lad", "teacher_path": "nope.json"}}));
    let o = lad(&["train", "--config", &gone, "--data", &data, "--out", &sb.s("s.json")]);
    assert_eq!(code(&o), 2);
    assert!(!sb.path("s.json").exists());

    // The teacher path is relative to the config file.
    let lad_cfg = sb.config("lad.json", serde_json::json!({"strategy": {"variant": "lad", "teacher_path": "t.json"}}));
    let o = lad(&["train", "--config", &lad_cfg, "--data", &data, "--out", &sb.s("s.json")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let before = fs::read(sb.path("t.json")).unwrap();

    let solad = sb.config(
        "solad.json",
        serde_json::json!({"strategy": {"variant": "solad", "teacher_path": "t.json", "distill_loss": "l2"}}),
    );
    assert_eq!(code(&lad(&["train", "--config", &solad, "--data", &data, "--out", &sb.s("so.json")])), 0);
    assert_eq!(fs::read(sb.path("t.json")).unwrap(), before);

    let colad = sb.config("co.json", serde_json::json!({"strategy": {"variant": "colad", "criterion": "fisher"}}));
    let o = lad(&["train", "--config", &colad, "--data", &data, "--out", &sb.s("co")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(sb.path("co.a").exists() && sb.path("co.b").exists() && !sb.path("co").exists());
    let hist = lines(&sb.path("co.history.jsonl"));
    let rec: Value = serde_json::from_str(&hist[3]).unwrap();
    assert_eq!(rec["role"]["criterion"], "Fisher");
    assert!(rec["partner_losses"].is_object());

    let eval = |ckpt: &str| {
        let o = lad(&["eval", "--config", &base, "--checkpoint", &sb.s(ckpt), "--data", &data]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        serde_json::from_slice::<Value>(&o.stdout).unwrap()
    };
    let (b, l) = (eval("t.json"), eval("s.json"));
    assert_eq!(keys(&b), keys(&l));
    assert_eq!(keys(&b["counts"]), keys(&l["counts"]));
    assert_eq!(l["strategy"], "lad");
    assert_eq!(eval("co.b")["strategy"], "colad");
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.json", serde_json::json!({}));
    let cop = sb.config("cop.json", serde_json::json!({"fusion": {"mode": "cop"}}));
    let data = sb.gen(&cfg, 1, "d.jsonl");
    assert_eq!(code(&lad(&["train", "--config", &cfg, "--data", &data, "--out", &sb.s("m.json")])), 0);
    let o = lad(&["eval", "--config", &cop, "--checkpoint", &sb.s("m.json"), "--data", &data]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("config_hash"));
}

#[test]
fn diverging_training_exits_3() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.json", serde_json::json!({"train": {"lr": 1e308, "warmup_iters": 0}}));
    let data = sb.gen(&cfg, 2, "d.jsonl");
    let o = lad(&["train", "--config", &cfg, "--data", &data, "--out", &sb.s("m.json")]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("iteration"));
    assert!(!sb.path("m.json").exists());
}

#[test]
fn empty_scenes_skip_every_class() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.json", serde_json::json!({"train": {"iterations": 0}}));
    let data = sb.path("d.jsonl");
    fs::write(&data, "{\"id\":0,\"objects\":[],\"seed\":1}\n{\"id\":1,\"objects\":[],\"seed\":2}\n").unwrap();
    let data = data.to_string_lossy().into_owned();
    assert_eq!(code(&lad(&["train", "--config", &cfg, "--data", &data, "--out", &sb.s("m.json")])), 0);
    let o = lad(&["eval", "--config", &cfg, "--checkpoint", &sb.s("m.json"), "--data", &data]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["per_class_ap"], serde_json::json!([null, null, null]));
    assert_eq!(m["counts"]["true_positives"], 0);
    assert_eq!(m["counts"]["false_positives"], 0);
}

/// Writes a checkpoint that decodes every anchor's box exactly and scores
/// the nearest object's class high, for a noise-free world.
fn perfect_checkpoint(sb: &Sandbox, cfg: &str, data: &str) -> String {
    assert_eq!(code(&lad(&["train", "--config", cfg, "--data", data, "--out", &sb.s("p.json")])), 0);
    let mut c = Checkpoint::read(&sb.path("p.json")).unwrap();
    let d = c.spec.num_features;
    let k = c.spec.num_classes;
    let mut cls_w = vec![0.0; d * k];
    for j in 0..k {
        cls_w[(5 + j) * k + j] = 12.0;
    }
    let mut box_w = vec![0.0; d * 4];
    for j in 0..4 {
        box_w[j * 4 + j] = 1.0;
    }
    c.params.insert("cls_w".into(), cls_w);
    c.params.insert("cls_b".into(), vec![-6.0; k]);
    c.params.insert("box_w".into(), box_w);
    c.params.insert("box_b".into(), vec![0.0; 4]);
    c.write(&sb.path("p.json")).unwrap();
    sb.s("p.json")
}

#[test]
fn assign_dump() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.json", serde_json::json!({"train": {"iterations": 0}, "world": {"noise_sigma": 0.0}}));
    let data = sb.path("d.jsonl");
    fs::write(
        &data,
        "{\"id\":7,\"objects\":[{\"class\":1,\"box\":[20.0,18.0,44.0,40.0]}],\"seed\":3}\n\
         {\"id\":8,\"objects\":[{\"class\":0,\"box\":[0.0,0.0,1.0,1.0]}],\"seed\":4}\n",
    )
    .unwrap();
    let data = data.to_string_lossy().into_owned();
    let ckpt = perfect_checkpoint(&sb, &cfg, &data);

    let o = lad(&["assign", "--config", &cfg, "--checkpoint", &ckpt, "--data", &data, "--scene", "7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let dump: AssignDump = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&dump).unwrap(), text.trim_end());
    assert_eq!(dump.scene_id, 7);
    let obj = &dump.objects[0];
    assert!(!obj.candidates.is_empty());
    assert!(!obj.positives.is_empty());
    assert!(dump.unmatched_objects.is_empty());
    let best = obj.candidates.iter().map(|c| c.cost).fold(f64::INFINITY, f64::min);
    assert!(best < 0.05, "best cost {best}");

    let o = lad(&["assign", "--config", &cfg, "--checkpoint", &ckpt, "--data", &data, "--scene", "8"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dump: AssignDump = serde_json::from_slice(&o.stdout).unwrap();
    assert!(dump.objects[0].candidates.is_empty());
    assert!(dump.objects[0].fit.is_none());
    assert_eq!(dump.unmatched_objects, [0]);
    assert!(dump.labels.iter().all(Option::is_none));

    let o = lad(&["assign", "--config", &cfg, "--checkpoint", &ckpt, "--data", &data, "--scene", "99"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gmm_fit_reads_stdin() {
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_lad"))
        .arg("gmm-fit")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"0.05\n0.06\n1.4\n1.5\n1.6\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["samples"], 5);
    assert!((v["model"]["mu1"].as_f64().unwrap() - 0.055).abs() < 1e-6);
    assert!((v["model"]["mu2"].as_f64().unwrap() - 1.5).abs() < 1e-6);
    assert!(v["fisher_score"].as_f64().unwrap() > 0.0);

    let sb = Sandbox::new();
    fs::write(sb.path("bad.txt"), "1\nfoo\n").unwrap();
    let o = lad(&["gmm-fit", "--input", &sb.s("bad.txt")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2"));
}
