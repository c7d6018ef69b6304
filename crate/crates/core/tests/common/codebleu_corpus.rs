//! Frozen CodeBLEU corpus and oracles written independently of the library
//! internals. Shared by the core integration tests and the acceptance run.

#![allow(dead_code)]

use std::collections::HashSet;

use rand::Rng;
use tabrl_core::codesim::lexer::tokenize;
use tabrl_core::codesim::parser::{parse_source, Node};
use tabrl_core::codesim::{CodeBleu, PYTHON_KEYWORDS};

/// (candidate, reference)
pub const PAIRS: [(&str, &str); 10] = [
    ("a = 1\nb = a + 2\nprint(b)", "x = 1\ny = x + 2\nprint(y)"),
    ("a = 1\nb = a\nc = b * 2", "x = 1\ny = x * 2"),
    ("x = 5", "y = 6\nprint(y)"),
    ("a, b = 1, 2\nc = a + b", "a = 1\nb = 2\nc = a + b"),
    ("t = 0\nfor v in xs:\n    t += v", "t = 0\nfor v in xs:\n    t = t + v"),
    (
        "df = pd.read_csv(\"a.csv\")\ntotal = df[\"amount\"].sum()\nprint(total)",
        "import pandas as pd\ndf = pd.read_csv(\"a.csv\")\nresult = df[\"amount\"].mean()\nprint(result)",
    ),
    ("ys = [x * 2 for x in xs]", "ys = []\nfor x in xs:\n    ys.append(x * 2)"),
    ("def f(a, b):\n    c = a + b\n    return c", "def g(x, y):\n    z = x - y\n    return z"),
    (
        "with open(p) as fh:\n    data = fh.read()",
        "fh = open(p)\ndata = fh.readlines()\nn = len(data)",
    ),
    ("if (n := len(xs)) > 3:\n    big = n", "n = len(xs)\nbig = n if n > 3 else 0"),
];

/// Dataflow match per pair, enumerated by hand. Edges are (def, use, rel)
/// with names renamed v0, v1, ... in first-definition order, then
/// first-use order for names never defined; callee names are not reads.
///
/// 1. cand {(v1,v0,computed)}, ref the same: 1/1.
/// 2. cand {(v1,v0,comes), (v2,v1,computed)}, ref {(v1,v0,computed)}: 0/2.
/// 3. cand has no edges: absent.
/// 4. pairwise unpacking of literals adds no edges; both {(v2,v0,c), (v2,v1,c)}: 2/2.
/// 5. order [t, v, xs]; both {(v1,v2,comes), (v0,v0,c), (v0,v1,c)}: 3/3.
/// 6. cand order [df, total, pd]: {(v0,v2,c), (v1,v0,c)}; ref order
///    [pd, df, result]: {(v1,v0,c), (v2,v1,c)}: 1/2.
/// 7. cand defines x inside the comprehension before ys: order [x, ys, xs],
///    {(v0,v2,comes), (v1,v2,c), (v1,v0,c)}; ref order [ys, x, xs],
///    {(v1,v2,comes)}: 0/3.
/// 8. order [f, a, b, c] and [g, x, y, z]: {(v3,v1,c), (v3,v2,c)} both: 2/2.
/// 9. cand order [fh, data, p]: {(v0,v2,c), (v1,v0,c)}; ref order
///    [fh, data, n, p]: {(v0,v3,c), (v1,v0,c), (v2,v1,c)}: 1/2.
/// 10. order [n, big, xs]; cand {(v0,v2,c), (v1,v0,comes)}, ref
///     {(v0,v2,c), (v1,v0,c)} since a conditional is computed: 1/2.
pub const DATAFLOW_EXPECTED: [Option<f64>; 10] = [
    Some(1.0),
    Some(0.0),
    None,
    Some(1.0),
    Some(1.0),
    Some(0.5),
    Some(0.0),
    Some(1.0),
    Some(0.5),
    Some(0.5),
];

pub const IDENTITY_FIXTURES: [&str; 20] = [
    "x = 1",
    "print(1 + 2)",
    "import pandas as pd\ndf = pd.read_csv(\"data/sales.csv\")\nprint(df[\"amount\"].sum())",
    "a, b = b, a",
    "total = 0\nfor v in values:\n    total += v\nprint(total)",
    "def f(x, y=2):\n    return x * y",
    "class A:\n    def m(self):\n        return self.v",
    "while n > 0:\n    n -= 1",
    "try:\n    x = int(s)\nexcept ValueError as e:\n    x = 0\nfinally:\n    done = True",
    "with open(p) as fh:\n    text = fh.read()",
    "ys = [x * x for x in xs if x > 0]",
    "d = {k: v for k, v in pairs}",
    "s = {1, 2, 3}",
    "f = lambda a: a + 1",
    "if a:\n    b = 1\nelif c:\n    b = 2\nelse:\n    b = 3",
    "r = df.groupby(\"region\")[\"amount\"].agg([\"sum\", \"mean\"])",
    "x = y if y is not None else -1",
    "from os import path\nprint(path.join(\"a\", \"b\"))",
    "@decorator\ndef g(*args, **kwargs):\n    yield args",
    "m = df[(df[\"a\"] > 1) & (df[\"b\"] != \"x\")][\"c\"].mean()",
];

fn lexemes(src: &str) -> Vec<String> {
    tokenize(src).tokens.into_iter().map(|t| t.lexeme).collect()
}

/// Plain modified n-gram precision by exhaustive window comparison.
pub fn oracle_bleu(cand: &[String], refs: &[Vec<String>], max_n: usize, weight: &dyn Fn(&[String]) -> f64) -> f64 {
    let c = cand.len();
    if c == 0 || refs.is_empty() {
        return 0.0;
    }
    let orders = max_n.min(c);
    let mut logs = Vec::new();
    for n in 1..=orders {
        let grams: Vec<&[String]> = cand.windows(n).collect();
        let mut seen: Vec<&[String]> = Vec::new();
        let (mut num, mut den) = (0.0, 0.0);
        for g in &grams {
            if seen.contains(g) {
                continue;
            }
            seen.push(g);
            let count = grams.iter().filter(|h| h == &g).count();
            let best = refs
                .iter()
                .map(|r| if r.len() >= n { r.windows(n).filter(|h| h == g).count() } else { 0 })
                .max()
                .unwrap();
            let w = weight(g);
            num += w * count.min(best) as f64;
            den += w * count as f64;
        }
        if num == 0.0 {
            if n == 1 {
                return 0.0;
            }
            logs.push((1.0 / (den + 1.0)).ln());
        } else {
            logs.push((num / den).ln());
        }
    }
    let shortest = refs.iter().map(Vec::len).min().unwrap();
    let bp = if c >= shortest { 1.0 } else { (1.0 - shortest as f64 / c as f64).exp() };
    bp * (logs.iter().sum::<f64>() / orders as f64).exp()
}

fn shape(node: &Node, out: &mut Vec<String>) -> (String, usize) {
    if node.children.is_empty() {
        return (node.kind.clone(), 1);
    }
    let mut parts = Vec::new();
    let mut h = 0;
    for c in &node.children {
        let (s, ch) = shape(c, out);
        parts.push(s);
        h = h.max(ch);
    }
    let s = format!("({} {})", node.kind, parts.join(" "));
    out.push(s.clone());
    (s, h + 1)
}

/// Subtree shapes as strings; every internal node has height >= 2.
pub fn oracle_syntax(cand: &str, refs: &[&str]) -> Option<f64> {
    let ref_trees: Vec<Node> = refs.iter().filter_map(|r| parse_source(r).root).collect();
    if ref_trees.is_empty() {
        return None;
    }
    let Some(c) = parse_source(cand).root else {
        return Some(0.0);
    };
    let mut ref_shapes = Vec::new();
    for r in &ref_trees {
        shape(r, &mut ref_shapes);
    }
    let ref_set: HashSet<String> = ref_shapes.into_iter().collect();
    let mut cand_shapes = Vec::new();
    shape(&c, &mut cand_shapes);
    if cand_shapes.is_empty() {
        return Some(0.0);
    }
    let hits = cand_shapes.iter().filter(|s| ref_set.contains(*s)).count();
    Some(hits as f64 / cand_shapes.len() as f64)
}

pub struct OracleComponents {
    pub ngram: f64,
    pub weighted: f64,
    pub syntax: Option<f64>,
    pub dataflow: Option<f64>,
}

pub fn oracle_components(pair: usize) -> OracleComponents {
    let (cand, reference) = PAIRS[pair];
    let c = lexemes(cand);
    let r = vec![lexemes(reference)];
    let kw: HashSet<&str> = PYTHON_KEYWORDS.iter().copied().collect();
    OracleComponents {
        ngram: oracle_bleu(&c, &r, 4, &|_| 1.0),
        weighted: oracle_bleu(&c, &r, 4, &|g| if kw.contains(g[0].as_str()) { 5.0 } else { 1.0 }),
        syntax: oracle_syntax(cand, &[reference]),
        dataflow: DATAFLOW_EXPECTED[pair],
    }
}

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

/// Compare library components with the oracles for one pair.
pub fn check_pair(pair: usize, tol: f64) -> Result<(), String> {
    let (cand, reference) = PAIRS[pair];
    let got = CodeBleu::default()
        .components(cand, &[reference])
        .ok_or_else(|| format!("pair {pair}: no components"))?;
    let want = oracle_components(pair);
    let mut bad = Vec::new();
    if (got.ngram - want.ngram).abs() > tol {
        bad.push(format!("ngram {} vs {}", got.ngram, want.ngram));
    }
    if (got.weighted - want.weighted).abs() > tol {
        bad.push(format!("weighted {} vs {}", got.weighted, want.weighted));
    }
    if !close(got.syntax, want.syntax, tol) {
        bad.push(format!("syntax {:?} vs {:?}", got.syntax, want.syntax));
    }
    if !close(got.dataflow, want.dataflow, tol) {
        bad.push(format!("dataflow {:?} vs {:?}", got.dataflow, want.dataflow));
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(format!("pair {pair}: {}", bad.join("; ")))
    }
}

const NAMES: [&str; 6] = ["a", "b", "df", "total", "x", "rows"];
const CALLS: [&str; 4] = ["len", "sum", "max", "print"];

fn expr(rng: &mut impl Rng, depth: usize) -> String {
    let pick = |rng: &mut dyn rand::RngCore, xs: &[&str]| xs[rng.random_range(0..xs.len())].to_string();
    match if depth == 0 { rng.random_range(0..2) } else { rng.random_range(0..5) } {
        0 => pick(rng, &NAMES),
        1 => rng.random_range(0..10).to_string(),
        2 => format!("{} + {}", expr(rng, depth - 1), expr(rng, depth - 1)),
        3 => format!("{}({})", pick(rng, &CALLS), expr(rng, depth - 1)),
        _ => format!("{}[\"{}\"]", pick(rng, &NAMES[..3]), pick(rng, &["amount", "region"])),
    }
}

/// A small random straight-line program that always parses.
pub fn random_program(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..5);
    let mut lines = Vec::new();
    for _ in 0..n {
        let line = match rng.random_range(0..4) {
            0 => format!("print({})", expr(rng, 2)),
            1 => format!("for {} in {}:\n    {} += 1", NAMES[rng.random_range(0..6)], expr(rng, 1), NAMES[rng.random_range(0..6)]),
            _ => format!("{} = {}", NAMES[rng.random_range(0..6)], expr(rng, 2)),
        };
        lines.push(line);
    }
    lines.join("\n")
}
