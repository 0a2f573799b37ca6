use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
  "corpus.max_docs_per_lang": 300,
  "tokenizer.vocab_size": 300,
  "teacher.model": {"n_layers": 1, "n_heads": 2, "d_model": 32, "d_ff": 64, "context_len": 32},
  "teacher.train": {"steps": 4, "eval_every": 0, "eval_sequences": 8},
  "student": {"n_layers": 1, "d_model": 16, "d_ff": 32, "context_len": 32},
  "distill": {"steps": 3, "eval_every": 0, "eval_sequences": 8},
  "router.epochs": 30
}"#;

struct Run {
    _tmp: tempfile::TempDir,
    out: PathBuf,
    config: PathBuf,
}

impl Run {
    fn new(config: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let mut v: serde_json::Value = serde_json::from_str(config).unwrap();
        let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
        v["paths.corpus_dir"] = data.display().to_string().into();
        let path = tmp.path().join("config.json");
        std::fs::write(&path, v.to_string()).unwrap();
        Run {
            out: tmp.path().join("out"),
            config: path,
            _tmp: tmp,
        }
    }

    fn exec(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_modmoe"))
            .args(args)
            .arg("--out")
            .arg(&self.out)
            .arg("--config")
            .arg(&self.config)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let o = self.exec(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }

    fn fails(&self, args: &[&str]) -> String {
        let o = self.exec(args);
        assert_eq!(o.status.code(), Some(1), "{args:?} should fail");
        String::from_utf8(o.stderr).unwrap()
    }

    fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.out.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    /// Stages every later command depends on.
    fn base(&self) {
        for args in [&["prepare"][..], &["tokenizer"], &["teacher"]] {
            self.ok(&[args, &["--seed", "3"]].concat());
        }
    }
}

#[test]
fn training_stages_require_a_seed() {
    let r = Run::new(TINY);
    let err = r.fails(&["teacher"]);
    assert!(err.contains("--seed is required for teacher"), "{err}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let r = Run::new(r#"{"distill.stepz": 3}"#);
    let err = r.fails(&["prepare", "--seed", "1"]);
    assert!(err.contains("unknown config key 'distill.stepz'"), "{err}");
}

#[test]
fn missing_prerequisites_are_named() {
    let r = Run::new(TINY);
    let err = r.fails(&["distill", "--seed", "1"]);
    assert!(err.contains("missing artifact: teacher checkpoint"), "{err}");
    r.ok(&["prepare", "--seed", "1"]);
    let err = r.fails(&["teacher", "--seed", "1"]);
    assert!(err.contains("missing artifact: tokenizer"), "{err}");
}

#[test]
fn forgetting_study_is_reproducible() {
    let tables: Vec<String> = (0..2)
        .map(|_| {
            let r = Run::new(TINY);
            r.base();
            r.ok(&["study", "forgetting", "--seed", "3"]);
            let manifest = r.read("manifests/study-forgetting.json");
            assert!(manifest.contains("config_hash"), "{manifest}");
            r.read("study/forgetting/fk_table.csv")
        })
        .collect();
    assert_eq!(tables[0], tables[1]);
    let lines: Vec<&str> = tables[0].lines().collect();
    assert_eq!(lines[0], "language,experiment_a,experiment_b,experiment_c");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("py,N/A"), "{}", lines[4]);
}

#[test]
fn settings_grid_covers_every_subset() {
    let r = Run::new(TINY);
    r.base();
    r.ok(&["router", "--seed", "3"]);
    r.ok(&["moe-train", "--setup", "moe-ce", "--seed", "3"]);
    r.ok(&["moe-eval", "--setup", "moe-ce", "--settings-grid", "full"]);
    let grid = r.read("eval/moe-ce.csv");
    let lines: Vec<&str> = grid.lines().collect();
    assert_eq!(lines[0], "routable,use_common,ppl_en,ppl_fr,ppl_de,ppl_py,ppl_all");
    assert_eq!(lines.len(), 18);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 7));

    r.ok(&["moe-eval", "--setup", "moe-ce", "--routable", "en,fr", "--use-common", "false"]);
    let single = r.read("eval/moe-ce.csv");
    assert_eq!(single.lines().count(), 2);
    let err = r.fails(&["moe-eval", "--setup", "jeet"]);
    assert!(err.contains("missing artifact"), "{err}");
}
