//! Def-use edges between variables, extracted from a parsed syntax tree.
//!
//! An edge `(def, use, relation)` says the value bound to `def` was taken
//! from `use` directly (`comes_from`) or computed from it (`computed_from`).
//! Names are kept raw; `normalized_edges` renames them by definition order so
//! matching is invariant under consistent renaming.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::parser::{Node, SyntaxTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    ComesFrom,
    ComputedFrom,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DataflowEdge {
    pub def_var: String,
    pub use_var: String,
    pub relation: Relation,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataflowGraph {
    pub edges: BTreeSet<DataflowEdge>,
    /// Defined names in first-definition order, then undefined names in
    /// first-use order.
    pub order: Vec<String>,
}

impl DataflowGraph {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edges with every name replaced by `v<index in order>`.
    pub fn normalized_edges(&self) -> BTreeSet<DataflowEdge> {
        let index: HashMap<&str, usize> = self
            .order
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let rename = |n: &str| format!("v{}", index[n]);
        self.edges
            .iter()
            .map(|e| DataflowEdge {
                def_var: rename(&e.def_var),
                use_var: rename(&e.use_var),
                relation: e.relation,
            })
            .collect()
    }
}

#[derive(Default)]
struct Builder {
    edges: BTreeSet<DataflowEdge>,
    defs: Vec<String>,
    uses: Vec<String>,
}

impl Builder {
    fn define(&mut self, name: &str) {
        if !self.defs.iter().any(|d| d == name) {
            self.defs.push(name.to_string());
        }
    }

    fn note_use(&mut self, name: &str) {
        if !self.uses.iter().any(|u| u == name) {
            self.uses.push(name.to_string());
        }
    }

    fn edge(&mut self, def: &str, used: &str, relation: Relation) {
        self.edges.insert(DataflowEdge {
            def_var: def.to_string(),
            use_var: used.to_string(),
            relation,
        });
    }

    /// Variable reads in an expression, in source order. Records the uses and
    /// recurses into nested binding constructs (comprehensions, walrus).
    fn reads(&mut self, node: &Node) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_reads(node, &mut out);
        for n in &out {
            self.note_use(n);
        }
        out
    }

    fn collect_reads(&mut self, node: &Node, out: &mut Vec<String>) {
        match node.kind.as_str() {
            "identifier" => {
                if let Some(t) = &node.text {
                    if !out.contains(t) {
                        out.push(t.clone());
                    }
                }
            }
            "attribute" => self.collect_reads(&node.children[0], out),
            "call" => {
                let func = &node.children[0];
                if func.kind != "identifier" {
                    self.collect_reads(func, out);
                }
                self.collect_reads(&node.children[1], out);
            }
            "keyword_argument" => self.collect_reads(&node.children[1], out),
            "named_expression" => {
                let inner = self.reads(&node.children[1]);
                self.bind(&node.children[0], &node.children[1], &inner);
                if let Some(t) = &node.children[0].text {
                    if !out.contains(t) {
                        out.push(t.clone());
                    }
                }
            }
            "list_comprehension" | "set_comprehension" | "dictionary_comprehension" | "generator_expression" => {
                for clause in &node.children[1..] {
                    if clause.kind == "for_in_clause" {
                        let src = self.reads(&clause.children[1]);
                        self.bind(&clause.children[0], &clause.children[1], &src);
                        for s in src {
                            if !out.contains(&s) {
                                out.push(s);
                            }
                        }
                    } else {
                        self.collect_reads(clause, out);
                    }
                }
                self.collect_reads(&node.children[0], out);
            }
            "lambda" => self.collect_reads(&node.children[1], out),
            _ => {
                for c in &node.children {
                    self.collect_reads(c, out);
                }
            }
        }
    }

    /// Names bound by an assignment target. Subscript and attribute targets
    /// bind their base object.
    fn target_names(node: &Node, out: &mut Vec<String>) {
        match node.kind.as_str() {
            "identifier" => {
                if let Some(t) = &node.text {
                    out.push(t.clone());
                }
            }
            "subscript" | "attribute" => {
                let mut base = node;
                while matches!(base.kind.as_str(), "subscript" | "attribute") {
                    base = &base.children[0];
                }
                Self::target_names(base, out);
            }
            "pattern_list" | "expression_list" | "tuple" | "list" | "parenthesized_expression"
            | "list_splat" | "list_splat_pattern" => {
                for c in &node.children {
                    Self::target_names(c, out);
                }
            }
            _ => {}
        }
    }

    fn relation_for(value: &Node) -> Relation {
        if value.kind == "identifier" {
            Relation::ComesFrom
        } else {
            Relation::ComputedFrom
        }
    }

    /// Bind `target` to `value`, whose reads are `reads`. Equal-length
    /// sequence unpacking pairs elements up.
    fn bind(&mut self, target: &Node, value: &Node, reads: &[String]) {
        let seq = |n: &Node| matches!(n.kind.as_str(), "pattern_list" | "expression_list" | "tuple" | "list");
        if seq(target)
            && seq(value)
            && target.children.len() == value.children.len()
            && !target.children.iter().any(|c| c.kind.contains("splat"))
            && !value.children.iter().any(|c| c.kind.contains("splat"))
        {
            for (t, v) in target.children.iter().zip(&value.children) {
                let mut sub = Vec::new();
                self.collect_reads(v, &mut sub);
                self.bind(t, v, &sub);
            }
            return;
        }
        let mut names = Vec::new();
        Self::target_names(target, &mut names);
        let rel = Self::relation_for(value);
        // Index expressions in a subscript target are reads.
        if matches!(target.kind.as_str(), "subscript") {
            let mut idx = Vec::new();
            for c in &target.children[1..] {
                self.collect_reads(c, &mut idx);
            }
            for n in &idx {
                self.note_use(n);
            }
        }
        for name in &names {
            self.define(name);
            for r in reads {
                self.edge(name, r, rel);
            }
        }
    }

    fn define_target(&mut self, target: &Node) {
        let mut names = Vec::new();
        Self::target_names(target, &mut names);
        for n in names {
            self.define(&n);
        }
    }

    fn statement(&mut self, node: &Node) {
        match node.kind.as_str() {
            "assignment" => {
                let mut targets = vec![&node.children[0]];
                let mut value = &node.children[1];
                while value.kind == "assignment" {
                    targets.push(&value.children[0]);
                    value = &value.children[1];
                }
                let reads = self.reads(value);
                for t in targets {
                    self.bind(t, value, &reads);
                }
            }
            "annotated_assignment" => {
                if let Some(value) = node.children.get(2) {
                    let reads = self.reads(value);
                    self.bind(&node.children[0], value, &reads);
                } else {
                    self.define_target(&node.children[0]);
                }
            }
            "augmented_assignment" => {
                let target = &node.children[0];
                let reads = self.reads(&node.children[2]);
                let mut names = Vec::new();
                Self::target_names(target, &mut names);
                for name in &names {
                    self.note_use(name);
                    self.define(name);
                    self.edge(name, name, Relation::ComputedFrom);
                    for r in &reads {
                        self.edge(name, r, Relation::ComputedFrom);
                    }
                }
            }
            "for_statement" => {
                let reads = self.reads(&node.children[1]);
                self.bind(&node.children[0], &node.children[1], &reads);
                for c in &node.children[2..] {
                    self.statement(c);
                }
            }
            "with_statement" => {
                for item in &node.children {
                    if item.kind == "with_item" {
                        let reads = self.reads(&item.children[0]);
                        if let Some(t) = item.children.get(1) {
                            let mut names = Vec::new();
                            Self::target_names(t, &mut names);
                            for n in &names {
                                self.define(n);
                                for r in &reads {
                                    self.edge(n, r, Relation::ComputedFrom);
                                }
                            }
                        }
                    } else {
                        self.statement(item);
                    }
                }
            }
            "import_statement" | "import_from_statement" => {
                let from = node.kind == "import_from_statement";
                for c in &node.children {
                    match c.kind.as_str() {
                        "aliased_import" => self.define_target(&c.children[1]),
                        // `import a.b` binds `a`; `from m import a` binds `a`.
                        "dotted_name" if from => self.define_target(c.children.last().unwrap()),
                        "dotted_name" => self.define_target(&c.children[0]),
                        _ => {}
                    }
                }
            }
            "function_definition" => {
                self.define_target(&node.children[0]);
                for p in &node.children[1].children {
                    self.parameter(p);
                }
                for c in &node.children[2..] {
                    if c.kind == "return_type" {
                        self.reads(c);
                    } else {
                        self.statement(c);
                    }
                }
            }
            "class_definition" => {
                self.define_target(&node.children[0]);
                for c in &node.children[1..] {
                    if c.kind == "argument_list" {
                        self.reads(c);
                    } else {
                        self.statement(c);
                    }
                }
            }
            "except_clause" => {
                let mut rest = &node.children[..];
                if node.children.len() >= 2 && node.children[1].kind == "identifier" {
                    let reads = self.reads(&node.children[0]);
                    let name = node.children[1].text.clone().unwrap_or_default();
                    self.define(&name);
                    for r in &reads {
                        self.edge(&name, r, Relation::ComputedFrom);
                    }
                    rest = &node.children[2..];
                }
                for c in rest {
                    self.statement(c);
                }
            }
            "module" | "block" | "if_statement" | "elif_clause" | "else_clause" | "while_statement"
            | "try_statement" | "finally_clause" | "decorated_definition" | "async_statement" => {
                for c in &node.children {
                    self.statement(c);
                }
            }
            "decorator" | "expression_statement" | "return_statement" | "delete_statement" | "raise_statement"
            | "assert_statement" => {
                self.reads(node);
            }
            "global_statement" | "nonlocal_statement" | "pass_statement" | "break_statement"
            | "continue_statement" => {}
            // Conditions of if/while/elif and any other expression position.
            _ => {
                self.reads(node);
            }
        }
    }

    fn parameter(&mut self, p: &Node) {
        match p.kind.as_str() {
            "identifier" => self.define_target(p),
            "default_parameter" | "typed_parameter" | "typed_default_parameter" => {
                for c in &p.children[1..] {
                    self.reads(c);
                }
                self.define_target(&p.children[0]);
            }
            "list_splat_pattern" | "dictionary_splat_pattern" => self.define_target(&p.children[0]),
            _ => {}
        }
    }
}

/// Extract the def-use graph of a parsed tree; empty when the parse failed.
pub fn extract_dataflow(tree: &SyntaxTree) -> DataflowGraph {
    let Some(root) = &tree.root else {
        return DataflowGraph::default();
    };
    let mut b = Builder::default();
    b.statement(root);
    let mut order = b.defs.clone();
    for u in &b.uses {
        if !order.contains(u) {
            order.push(u.clone());
        }
    }
    // Every edge endpoint has an index.
    for e in &b.edges {
        for n in [&e.def_var, &e.use_var] {
            if !order.contains(n) {
                order.push(n.clone());
            }
        }
    }
    DataflowGraph { edges: b.edges, order }
}

/// Fraction of candidate edges (after def-order renaming) present in any
/// reference graph. `None` when the candidate has no edges.
pub fn dataflow_match(candidate: &DataflowGraph, references: &[DataflowGraph]) -> Option<f64> {
    if candidate.is_empty() {
        return None;
    }
    if references.is_empty() {
        return Some(0.0);
    }
    let refs: Vec<BTreeSet<DataflowEdge>> = references.iter().map(DataflowGraph::normalized_edges).collect();
    let cand = candidate.normalized_edges();
    let hits = cand.iter().filter(|e| refs.iter().any(|r| r.contains(*e))).count();
    Some(hits as f64 / cand.len() as f64)
}
