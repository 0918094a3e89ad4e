use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use conparse::treebank::parse_bracketed;

const TINY_CONFIG: &str = "word_dim=8\npos_dim=4\nchar_dim=4\nchar_hidden=4\nlstm_hidden=8\nlstm_layers=2
span_hidden=8\nproj_dim=8\ntree_hidden=8\nlabel_dim=4\nlabel_hidden=8\nout_hidden=8
max_epochs=3\neval_every=2\ndropout=0.3\n";

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name)
}

fn conparse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conparse"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

struct Trained {
    dir: tempfile::TempDir,
    model: PathBuf,
}

fn train(variant: &str, seed: &str) -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY_CONFIG).unwrap();
    let model = dir.path().join("model.cpkt");
    let gold = data("golden_gold.mrg");
    let o = conparse(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--variant",
        variant,
        "--seed",
        seed,
        "--model",
        model.to_str().unwrap(),
        gold.to_str().unwrap(),
        gold.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    Trained { dir, model }
}

#[test]
fn missing_train_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.cpkt");
    let gold = data("golden_gold.mrg");
    let o = conparse(&["train", "--model", model.to_str().unwrap(), "/no/such/file", gold.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "momentum=0.9\n").unwrap();
    let gold = data("golden_gold.mrg");
    let model = dir.path().join("m.cpkt");
    let o = conparse(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        gold.to_str().unwrap(),
        gold.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn training_writes_a_loadable_model() {
    let t = train("binary-span", "1");
    let m = conparse::model_file::load(&t.model).unwrap();
    assert_eq!(m.parser.variant().name(), "binary-span");
    assert!(t.dir.path().join("model.cpkt.last").exists());
    let log = fs::read_to_string(t.dir.path().join("model.cpkt.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert!(log.lines().all(|l| l.starts_with("{\"epoch\":")));
}

#[test]
fn same_seed_same_artifacts() {
    let a = train("multi-span", "7");
    let b = train("multi-span", "7");
    for name in ["model.cpkt", "model.cpkt.last", "model.cpkt.log.jsonl"] {
        let x = fs::read(a.dir.path().join(name)).unwrap();
        let y = fs::read(b.dir.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn resume_continues_the_log() {
    let t = train("linear-rule", "1");
    let cfg = t.dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY_CONFIG.replace("max_epochs=3", "max_epochs=4")).unwrap();
    let last = t.dir.path().join("model.cpkt.last");
    let gold = data("golden_gold.mrg");
    let o = conparse(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--variant",
        "linear-rule",
        "--seed",
        "1",
        "--resume",
        last.to_str().unwrap(),
        "--model",
        t.model.to_str().unwrap(),
        gold.to_str().unwrap(),
        gold.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(t.dir.path().join("model.cpkt.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 7);
}

#[test]
fn parse_output_is_readable_and_ordered() {
    let t = train("biaffine-rule", "1");
    let input = t.dir.path().join("in.txt");
    fs::write(&input, "The_DT cat_NN sat_VBD ._.\nnounderscore here_RB\nrained_VBD\nIt_PRP rained_VBD\n").unwrap();
    let chart = t.dir.path().join("chart.txt");
    let o = conparse(&[
        "parse",
        "--model",
        t.model.to_str().unwrap(),
        "--dump-chart",
        chart.to_str().unwrap(),
        input.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1], "(())");
    let words = |s: &str| {
        let t = parse_bracketed(s).unwrap().remove(0);
        t.tokens().into_iter().map(|t| t.word).collect::<Vec<_>>().join(" ")
    };
    assert_eq!(words(lines[0]), "The cat sat .");
    assert_eq!(words(lines[2]), "rained");
    assert_eq!(words(lines[3]), "It rained");
    // A single word still gets a constituent label above its POS.
    assert!(lines[2].starts_with('(') && lines[2].ends_with("(VBD rained))"), "{}", lines[2]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("sentences/s"));
    let charts = fs::read_to_string(chart).unwrap();
    assert!(charts.contains("# sentence 1\n[0,1]\t"));
    assert!(charts.contains("# sentence 4\n[0,1]\t"));
}

#[test]
fn parse_fails_when_every_line_fails() {
    let t = train("binary-span", "1");
    let input = t.dir.path().join("in.txt");
    fs::write(&input, "no tags here\n").unwrap();
    let o = conparse(&["parse", "--model", t.model.to_str().unwrap(), input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stdout(&o), "(())\n");
}

#[test]
fn eval_reports() {
    let gold = data("golden_gold.mrg");
    let pred = data("golden_pred.mrg");
    let o = conparse(&["eval", gold.to_str().unwrap(), gold.to_str().unwrap()]);
    assert!(stdout(&o).contains("LF           100.00"));

    let o = conparse(&["eval", gold.to_str().unwrap(), pred.to_str().unwrap()]);
    let out = stdout(&o);
    assert!(out.contains("LP           61.54"), "{out}");
    assert!(out.contains("LR           66.67"));
    assert!(out.contains("LF           64.00"));

    let o = conparse(&["eval", "--strict-eval", gold.to_str().unwrap(), pred.to_str().unwrap()]);
    assert!(stdout(&o).contains("LF           56.00"));

    let dir = tempfile::tempdir().unwrap();
    let prm = dir.path().join("p.prm");
    fs::write(&prm, "DELETE_LABEL .\nDELETE_LABEL ,\n").unwrap();
    let o = conparse(&["eval", "--per-sentence", "--eval-params", prm.to_str().unwrap(), gold.to_str().unwrap(), pred.to_str().unwrap()]);
    let out = stdout(&o);
    // Without the PRT/ADVP equivalence the second sentence loses one match.
    assert!(out.contains("brackets     gold 12  pred 13  matched 7"), "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("{\"sentence\"")).count(), 3);

    let short = dir.path().join("short.mrg");
    fs::write(&short, "(S (NN a))\n").unwrap();
    let o = conparse(&["eval", gold.to_str().unwrap(), short.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

/// Parameter count recomputed from the architecture dimensions.
fn analytic_count(m: &conparse::model_file::ModelFile) -> usize {
    let c = &m.parser.config;
    let v = &m.parser.vocab;
    let e = &c.encoder;
    let l = &c.labeler;
    let lstm = |input: usize, hidden: usize| 4 * hidden * input + 4 * hidden * hidden + 4 * hidden;
    let input = e.word_dim + e.pos_dim;
    let mut enc = v.num_words() * e.word_dim + v.num_pos() * e.pos_dim + v.num_chars() * e.char_dim;
    enc += 2 * lstm(e.char_dim, e.char_hidden) + 2 * e.word_dim * e.char_hidden + e.word_dim;
    for layer in 0..e.layers {
        enc += 2 * lstm(if layer == 0 { input } else { 2 * e.hidden }, e.hidden);
    }
    let labels = v.num_labels();
    let structure = match c.variant.name() {
        "binary-span" => c.span_hidden * 4 * e.hidden + c.span_hidden + 2 * c.span_hidden + 2,
        "multi-span" => c.span_hidden * 4 * e.hidden + c.span_hidden + labels * c.span_hidden + labels,
        "linear-rule" => 3 * (c.proj_dim * 6 * e.hidden + c.proj_dim) + 2 * c.proj_dim + 1,
        _ => 3 * (c.proj_dim * 6 * e.hidden + c.proj_dim) + 2 * (c.proj_dim + 1).pow(2),
    };
    let tx = 2 * e.hidden + input;
    let th = l.tree_hidden;
    let lex = 2 * tx * tx + 2 * tx * th + tx;
    let tree = 3 * th * (tx + 4 * th) + 3 * th + th * (tx + 2 * th) + th + th * (tx + 3 * th) + th;
    let decoder = (labels + 1) * l.label_dim + lstm(l.label_dim, l.label_hidden);
    let out = l.out_hidden * (l.label_hidden + l.label_dim + th) + l.out_hidden + labels * l.out_hidden + labels;
    enc + structure + lex + tree + decoder + out
}

#[test]
fn inspect_counts_parameters() {
    for variant in ["binary-span", "multi-span", "linear-rule", "biaffine-rule"] {
        let t = train(variant, "1");
        let m = conparse::model_file::load(&t.model).unwrap();
        let o = conparse(&["inspect", "--model", t.model.to_str().unwrap()]);
        assert!(o.status.success());
        let out = stdout(&o);
        assert!(out.contains(&format!("variant      {variant}")));
        assert!(out.contains(&format!("parameters   {}\n", analytic_count(&m))), "{variant}\n{out}");
        assert_eq!(out.lines().filter(|l| l.starts_with("tensor")).count(), m.params.len());
    }
}

#[test]
fn inspect_rejects_damaged_files() {
    let t = train("binary-span", "1");
    let bytes = fs::read(&t.model).unwrap();
    let truncated = t.dir.path().join("truncated.cpkt");
    fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    let o = conparse(&["inspect", "--model", truncated.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("truncated"));

    let mut bumped = bytes;
    bumped[4..8].copy_from_slice(&2u32.to_le_bytes());
    let future = t.dir.path().join("future.cpkt");
    fs::write(&future, bumped).unwrap();
    let o = conparse(&["inspect", "--model", future.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version 2"));
}
