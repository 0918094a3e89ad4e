use conparse::metrics::{EvalParams, Evaluation};
use conparse::treebank::parse_bracketed;

fn golden(params: &EvalParams) -> Evaluation {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/");
    let read = |f: &str| parse_bracketed(&std::fs::read_to_string(format!("{dir}{f}")).unwrap()).unwrap();
    let (gold, pred) = (read("golden_gold.mrg"), read("golden_pred.mrg"));
    let mut e = Evaluation::new();
    for (g, p) in gold.iter().zip(&pred) {
        e.add(g, p, None, params).unwrap();
    }
    e
}

fn percent(e: &Evaluation) -> (String, String, String) {
    let s = e.labeled();
    let f = |x: f64| format!("{:.2}", 100.0 * x);
    (f(s.precision), f(s.recall), f(s.f1))
}

// Counts worked by hand: punctuation removed before indexing, PRT read as ADVP,
// and the duplicated unary VP in the third prediction matching only once.
#[test]
fn default_parameters() {
    let e = golden(&EvalParams::default());
    let per: Vec<_> = e.sentences.iter().map(|s| (s.gold, s.pred, s.matched)).collect();
    assert_eq!(per, [(5, 5, 4), (4, 4, 2), (3, 4, 2)]);
    assert_eq!(percent(&e), ("61.54".into(), "66.67".into(), "64.00".into()));
    assert_eq!(e.exact, 0);
}

// Same files with nothing deleted: the comma shifts the second sentence's
// spans and the PRT bracket no longer matches.
#[test]
fn strict_parameters() {
    let e = golden(&EvalParams::strict());
    let per: Vec<_> = e.sentences.iter().map(|s| (s.gold, s.pred, s.matched)).collect();
    assert_eq!(per, [(5, 5, 4), (4, 4, 1), (3, 4, 2)]);
    assert_eq!(percent(&e), ("53.85".into(), "58.33".into(), "56.00".into()));
}
