//! CodeBLEU similarity between a candidate program and reference programs.
//!
//! Four components, each in `[0, 1]`:
//! token n-gram BLEU, keyword-weighted n-gram BLEU, syntax-subtree match and
//! def-use dataflow match. The composite is their weighted mean over the
//! components that are present; syntax is absent when no reference parses and
//! dataflow is absent when the candidate has no edges.

pub mod bleu;
pub mod dataflow;
pub mod lexer;
pub mod parser;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bleu::{ngram_bleu, weighted_ngram_bleu};
pub use dataflow::{dataflow_match, extract_dataflow, DataflowEdge, DataflowGraph, Relation};
pub use lexer::{tokenize, Token, TokenKind, TokenStream, PYTHON_KEYWORDS};
pub use parser::{parse, parse_source, Node, SyntaxTree};

use crate::Error;

pub const DEFAULT_KEYWORD_WEIGHT: f64 = 5.0;
pub const DEFAULT_MAX_N: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodeBleuWeights {
    pub w_ngram: f64,
    pub w_weighted: f64,
    pub w_syntax: f64,
    pub w_dataflow: f64,
}

impl Default for CodeBleuWeights {
    fn default() -> Self {
        Self {
            w_ngram: 0.25,
            w_weighted: 0.25,
            w_syntax: 0.25,
            w_dataflow: 0.25,
        }
    }
}

impl CodeBleuWeights {
    pub fn new(w_ngram: f64, w_weighted: f64, w_syntax: f64, w_dataflow: f64) -> Result<Self, Error> {
        let w = Self {
            w_ngram,
            w_weighted,
            w_syntax,
            w_dataflow,
        };
        w.validate()?;
        Ok(w)
    }

    /// Non-negative, finite, summing to 1 within 1e-9.
    pub fn validate(&self) -> Result<(), Error> {
        let all = [self.w_ngram, self.w_weighted, self.w_syntax, self.w_dataflow];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("codebleu weights must be non-negative".into()));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("codebleu weights sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Component scores; `None` marks an absent component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub ngram: f64,
    pub weighted: f64,
    pub syntax: Option<f64>,
    pub dataflow: Option<f64>,
}

impl Components {
    /// Weighted mean over present components; absent weight is redistributed
    /// proportionally. 0 when no present component carries weight.
    pub fn combine(&self, w: &CodeBleuWeights) -> f64 {
        let parts = [
            (Some(self.ngram), w.w_ngram),
            (Some(self.weighted), w.w_weighted),
            (self.syntax, w.w_syntax),
            (self.dataflow, w.w_dataflow),
        ];
        let mut num = 0.0;
        let mut den = 0.0;
        for (v, wt) in parts {
            if let Some(v) = v {
                num += wt * v;
                den += wt;
            }
        }
        if den <= 0.0 {
            0.0
        } else {
            (num / den).clamp(0.0, 1.0)
        }
    }
}

struct Interner<'a> {
    ids: HashMap<(&'a str, Vec<u32>), u32>,
}

impl<'a> Interner<'a> {
    fn new() -> Self {
        Self { ids: HashMap::new() }
    }

    /// Structural id of `node` (kinds only); pushes ids of subtrees with
    /// height >= 2 into `out`. Returns (id, height).
    fn visit(&mut self, node: &'a Node, out: &mut Vec<u32>) -> (u32, usize) {
        let mut child_ids = Vec::with_capacity(node.children.len());
        let mut h = 0;
        for c in &node.children {
            let (id, ch) = self.visit(c, out);
            child_ids.push(id);
            h = h.max(ch);
        }
        let next = self.ids.len() as u32;
        let id = *self.ids.entry((node.kind.as_str(), child_ids)).or_insert(next);
        if h + 1 >= 2 {
            out.push(id);
        }
        (id, h + 1)
    }
}

/// Fraction of the candidate's subtrees of height >= 2 (counted with
/// multiplicity) whose kind structure occurs in some reference.
/// `None` when no reference parses; 0 when the candidate does not.
pub fn syntax_match(candidate: &SyntaxTree, references: &[SyntaxTree]) -> Option<f64> {
    let parsed: Vec<&Node> = references.iter().filter_map(|r| r.root.as_ref()).collect();
    if parsed.is_empty() {
        return None;
    }
    let Some(cand) = &candidate.root else {
        return Some(0.0);
    };
    let mut interner = Interner::new();
    let mut ref_ids = Vec::new();
    for r in parsed {
        interner.visit(r, &mut ref_ids);
    }
    let ref_set: HashSet<u32> = ref_ids.into_iter().collect();
    let mut cand_ids = Vec::new();
    interner.visit(cand, &mut cand_ids);
    if cand_ids.is_empty() {
        return Some(0.0);
    }
    let hits = cand_ids.iter().filter(|id| ref_set.contains(id)).count();
    Some(hits as f64 / cand_ids.len() as f64)
}

/// A program tokenized, parsed and dataflow-extracted once, for reuse across
/// many comparisons.
#[derive(Debug, Clone)]
pub struct PreparedCode {
    pub tokens: TokenStream,
    pub tree: SyntaxTree,
    pub graph: DataflowGraph,
}

impl PreparedCode {
    pub fn new(source: &str) -> Self {
        let tokens = tokenize(source);
        let tree = parse(&tokens);
        let graph = extract_dataflow(&tree);
        Self { tokens, tree, graph }
    }

    fn lexemes(&self) -> Vec<&str> {
        self.tokens.tokens.iter().map(|t| t.lexeme.as_str()).collect()
    }
}

/// Scorer configuration: weights plus the keyword list for the weighted
/// component.
#[derive(Debug, Clone)]
pub struct CodeBleu {
    pub weights: CodeBleuWeights,
    pub keywords: HashSet<String>,
    pub keyword_weight: f64,
    pub max_n: usize,
}

impl Default for CodeBleu {
    fn default() -> Self {
        Self {
            weights: CodeBleuWeights::default(),
            keywords: PYTHON_KEYWORDS.iter().map(|k| k.to_string()).collect(),
            keyword_weight: DEFAULT_KEYWORD_WEIGHT,
            max_n: DEFAULT_MAX_N,
        }
    }
}

impl CodeBleu {
    pub fn new(weights: CodeBleuWeights) -> Result<Self, Error> {
        weights.validate()?;
        Ok(Self {
            weights,
            ..Self::default()
        })
    }

    /// One keyword per line; blank lines and surrounding whitespace ignored.
    pub fn parse_keywords(text: &str) -> HashSet<String> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect()
    }

    pub fn with_keywords_file(mut self, path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("keywords file {}: {e}", path.display())))?;
        self.keywords = Self::parse_keywords(&text);
        Ok(self)
    }

    pub fn components_prepared(&self, candidate: &PreparedCode, references: &[&PreparedCode]) -> Option<Components> {
        if candidate.tokens.is_empty() || references.is_empty() {
            return None;
        }
        let cand = candidate.lexemes();
        let refs: Vec<Vec<&str>> = references.iter().map(|r| r.lexemes()).collect();
        let trees: Vec<SyntaxTree> = references.iter().map(|r| r.tree.clone()).collect();
        let graphs: Vec<DataflowGraph> = references.iter().map(|r| r.graph.clone()).collect();
        Some(Components {
            ngram: ngram_bleu(&cand, &refs, self.max_n),
            weighted: weighted_ngram_bleu(&cand, &refs, &self.keywords, self.keyword_weight, self.max_n),
            syntax: syntax_match(&candidate.tree, &trees),
            dataflow: dataflow_match(&candidate.graph, &graphs),
        })
    }

    pub fn components(&self, candidate: &str, references: &[&str]) -> Option<Components> {
        let cand = PreparedCode::new(candidate);
        let refs: Vec<PreparedCode> = references.iter().map(|r| PreparedCode::new(r)).collect();
        let refs: Vec<&PreparedCode> = refs.iter().collect();
        self.components_prepared(&cand, &refs)
    }

    pub fn score_prepared(&self, candidate: &PreparedCode, references: &[&PreparedCode]) -> f64 {
        self.components_prepared(candidate, references)
            .map_or(0.0, |c| c.combine(&self.weights))
    }

    /// 0 for an empty candidate or no references.
    pub fn score(&self, candidate: &str, references: &[&str]) -> f64 {
        self.components(candidate, references)
            .map_or(0.0, |c| c.combine(&self.weights))
    }
}

/// CodeBLEU with the default keyword list and the given weights.
pub fn codebleu(candidate: &str, references: &[&str], weights: &CodeBleuWeights) -> f64 {
    let scorer = CodeBleu {
        weights: *weights,
        ..CodeBleu::default()
    };
    scorer.score(candidate, references)
}
