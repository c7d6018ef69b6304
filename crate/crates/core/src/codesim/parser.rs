//! Recursive-descent parser for the subset of Python that dataframe scripts
//! use: assignments, calls, attribute and index access, comprehensions,
//! conditionals, loops, `try`, `with`, function and class definitions.
//!
//! Anything outside the subset makes the whole parse fail; callers treat that
//! as a missing syntax tree rather than an error.

use serde::{Deserialize, Serialize};

use super::lexer::{Token, TokenKind, TokenStream};

/// Recursion limit for nested constructs.
const MAX_NEST: usize = 100;
/// Limit on tree depth, counting left-associative chains.
const MAX_DEPTH: usize = 2000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub kind: String,
    /// Source text for identifier and literal leaves.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub children: Vec<Node>,
}

impl Node {
    fn new(kind: &str, children: Vec<Node>) -> Self {
        Self {
            kind: kind.to_string(),
            text: None,
            children,
        }
    }

    fn leaf(kind: &str, text: Option<&str>) -> Self {
        Self {
            kind: kind.to_string(),
            text: text.map(str::to_string),
            children: Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// 1 for a leaf.
    pub fn height(&self) -> usize {
        1 + self.children.iter().map(Node::height).max().unwrap_or(0)
    }

    pub fn leaf_count(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(Node::leaf_count).sum()
        }
    }

    /// Pre-order traversal.
    pub fn walk(&self) -> Vec<&Node> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(n.children.iter().rev());
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxTree {
    pub root: Option<Node>,
    pub parse_ok: bool,
}

impl SyntaxTree {
    fn failed() -> Self {
        Self {
            root: None,
            parse_ok: false,
        }
    }
}

#[derive(Debug)]
struct ParseError;

type PResult<T> = Result<T, ParseError>;

#[derive(Debug, Clone, Copy)]
struct LogicalLine {
    indent: usize,
    start: usize,
    end: usize,
}

fn logical_lines(toks: &[Token]) -> Option<Vec<LogicalLine>> {
    let mut lines: Vec<LogicalLine> = Vec::new();
    let mut depth: i64 = 0;
    for (i, t) in toks.iter().enumerate() {
        let new_line = match i.checked_sub(1) {
            None => true,
            Some(p) => depth == 0 && t.line > toks[p].end_line && !t.continued,
        };
        if new_line {
            if let Some(last) = lines.last_mut() {
                last.end = i;
            }
            lines.push(LogicalLine {
                indent: t.col,
                start: i,
                end: toks.len(),
            });
        }
        if t.kind == TokenKind::Punctuation {
            match t.lexeme.as_str() {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => {
                    depth -= 1;
                    if depth < 0 {
                        return None;
                    }
                }
                _ => {}
            }
        }
    }
    (depth == 0).then_some(lines)
}

struct Parser<'a> {
    toks: &'a [Token],
    lines: Vec<LogicalLine>,
    li: usize,
    pos: usize,
    end: usize,
    nest: usize,
    depth: usize,
}

const COMPOUND_STARTERS: [&str; 9] = ["if", "for", "while", "try", "with", "def", "class", "@", "async"];
const AUG_OPS: [&str; 13] = [
    "+=", "-=", "*=", "/=", "//=", "%=", "@=", "&=", "|=", "^=", ">>=", "<<=", "**=",
];

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        (self.pos < self.end).then(|| &self.toks[self.pos])
    }

    fn peek_at(&self, off: usize) -> Option<&'a Token> {
        (self.pos + off < self.end).then(|| &self.toks[self.pos + off])
    }

    fn at(&self, lexeme: &str) -> bool {
        self.peek().is_some_and(|t| t.lexeme == lexeme && t.kind != TokenKind::String)
    }

    fn at_kind(&self, kind: TokenKind) -> bool {
        self.peek().is_some_and(|t| t.kind == kind)
    }

    fn eat(&mut self, lexeme: &str) -> bool {
        if self.at(lexeme) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, lexeme: &str) -> PResult<()> {
        if self.eat(lexeme) {
            Ok(())
        } else {
            Err(ParseError)
        }
    }

    fn at_line_end(&self) -> bool {
        self.pos >= self.end
    }

    fn enter(&mut self) -> PResult<()> {
        self.nest += 1;
        self.depth += 1;
        if self.nest > MAX_NEST || self.depth > MAX_DEPTH {
            Err(ParseError)
        } else {
            Ok(())
        }
    }

    fn leave(&mut self) {
        self.nest -= 1;
        self.depth -= 1;
    }

    /// One more level of a left-associative chain; undone with `unchain`.
    fn chain(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            Err(ParseError)
        } else {
            Ok(())
        }
    }

    fn unchain(&mut self, n: usize) {
        self.depth -= n;
    }

    fn name(&mut self) -> PResult<Node> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                self.pos += 1;
                Ok(Node::leaf("identifier", Some(&t.lexeme)))
            }
            _ => Err(ParseError),
        }
    }

    // ---- blocks and statements ----

    fn load_line(&mut self) {
        let l = self.lines[self.li];
        self.pos = l.start;
        self.end = l.end;
    }

    fn module(&mut self) -> PResult<Node> {
        let mut body = Vec::new();
        if let Some(first) = self.lines.first() {
            body = self.block(first.indent)?;
        }
        if self.li != self.lines.len() {
            return Err(ParseError);
        }
        Ok(Node::new("module", body))
    }

    fn block(&mut self, indent: usize) -> PResult<Vec<Node>> {
        self.enter()?;
        let mut out = Vec::new();
        while self.li < self.lines.len() {
            let l = self.lines[self.li];
            if l.indent < indent {
                break;
            }
            if l.indent > indent {
                return Err(ParseError);
            }
            out.extend(self.statement()?);
        }
        self.leave();
        if out.is_empty() {
            return Err(ParseError);
        }
        Ok(out)
    }

    fn statement(&mut self) -> PResult<Vec<Node>> {
        self.load_line();
        let first = self.peek().ok_or(ParseError)?;
        if first.kind != TokenKind::String && COMPOUND_STARTERS.contains(&first.lexeme.as_str()) {
            return Ok(vec![self.compound()?]);
        }
        let stmts = self.simple_statements()?;
        self.li += 1;
        Ok(stmts)
    }

    fn simple_statements(&mut self) -> PResult<Vec<Node>> {
        let mut out = vec![self.small_statement()?];
        while self.eat(";") {
            if self.at_line_end() {
                break;
            }
            out.push(self.small_statement()?);
        }
        if !self.at_line_end() {
            return Err(ParseError);
        }
        Ok(out)
    }

    /// Body after a header's `:`; either the rest of the line or an indented block.
    fn suite(&mut self, header_indent: usize) -> PResult<Node> {
        if !self.at_line_end() {
            let stmts = self.simple_statements()?;
            self.li += 1;
            return Ok(Node::new("block", stmts));
        }
        self.li += 1;
        let next = self.lines.get(self.li).ok_or(ParseError)?;
        if next.indent <= header_indent {
            return Err(ParseError);
        }
        let stmts = self.block(next.indent)?;
        Ok(Node::new("block", stmts))
    }

    /// True when the next logical line sits at `indent` and starts with `kw`.
    fn next_line_is(&self, indent: usize, kw: &str) -> bool {
        self.lines.get(self.li).is_some_and(|l| {
            l.indent == indent && {
                let t = &self.toks[l.start];
                t.kind == TokenKind::Keyword && t.lexeme == kw
            }
        })
    }

    fn clause_line(&mut self, kw: &str) -> PResult<()> {
        self.load_line();
        self.expect(kw)
    }

    fn compound(&mut self) -> PResult<Node> {
        self.enter()?;
        let indent = self.lines[self.li].indent;
        let kw = self.peek().ok_or(ParseError)?.lexeme.clone();
        let node = match kw.as_str() {
            "if" => {
                self.pos += 1;
                let cond = self.expr()?;
                self.expect(":")?;
                let body = self.suite(indent)?;
                let mut children = vec![cond, body];
                while self.next_line_is(indent, "elif") {
                    self.clause_line("elif")?;
                    let c = self.expr()?;
                    self.expect(":")?;
                    let b = self.suite(indent)?;
                    children.push(Node::new("elif_clause", vec![c, b]));
                }
                if let Some(e) = self.else_clause(indent)? {
                    children.push(e);
                }
                Node::new("if_statement", children)
            }
            "while" => {
                self.pos += 1;
                let cond = self.expr()?;
                self.expect(":")?;
                let body = self.suite(indent)?;
                let mut children = vec![cond, body];
                children.extend(self.else_clause(indent)?);
                Node::new("while_statement", children)
            }
            "for" => {
                self.pos += 1;
                self.for_statement(indent)?
            }
            "try" => {
                self.pos += 1;
                self.expect(":")?;
                let mut children = vec![self.suite(indent)?];
                let mut handlers = 0;
                while self.next_line_is(indent, "except") {
                    self.clause_line("except")?;
                    let mut parts = Vec::new();
                    if !self.at(":") {
                        self.eat("*");
                        parts.push(self.expr()?);
                        if self.eat("as") {
                            parts.push(self.name()?);
                        }
                    }
                    self.expect(":")?;
                    parts.push(self.suite(indent)?);
                    children.push(Node::new("except_clause", parts));
                    handlers += 1;
                }
                if handlers > 0 {
                    children.extend(self.else_clause(indent)?);
                }
                let mut finally = false;
                if self.next_line_is(indent, "finally") {
                    self.clause_line("finally")?;
                    self.expect(":")?;
                    children.push(Node::new("finally_clause", vec![self.suite(indent)?]));
                    finally = true;
                }
                if handlers == 0 && !finally {
                    return Err(ParseError);
                }
                Node::new("try_statement", children)
            }
            "with" => {
                self.pos += 1;
                self.with_statement(indent)?
            }
            "def" => {
                self.pos += 1;
                self.function_def(indent)?
            }
            "class" => {
                self.pos += 1;
                let name = self.name()?;
                let mut children = vec![name];
                if self.eat("(") {
                    children.push(self.call_args()?);
                }
                self.expect(":")?;
                children.push(self.suite(indent)?);
                Node::new("class_definition", children)
            }
            "@" => {
                let mut decorators = Vec::new();
                while self.eat("@") {
                    let e = self.expr()?;
                    if !self.at_line_end() {
                        return Err(ParseError);
                    }
                    decorators.push(Node::new("decorator", vec![e]));
                    self.li += 1;
                    if self.li >= self.lines.len() || self.lines[self.li].indent != indent {
                        return Err(ParseError);
                    }
                    self.load_line();
                }
                let def = self.compound()?;
                if !matches!(def.kind.as_str(), "function_definition" | "class_definition" | "async_statement") {
                    return Err(ParseError);
                }
                decorators.push(def);
                Node::new("decorated_definition", decorators)
            }
            "async" => {
                self.pos += 1;
                let inner = match self.peek().map(|t| t.lexeme.as_str()) {
                    Some("def") => {
                        self.pos += 1;
                        self.function_def(indent)?
                    }
                    Some("for") => {
                        self.pos += 1;
                        self.for_statement(indent)?
                    }
                    Some("with") => {
                        self.pos += 1;
                        self.with_statement(indent)?
                    }
                    _ => return Err(ParseError),
                };
                Node::new("async_statement", vec![inner])
            }
            _ => return Err(ParseError),
        };
        self.leave();
        Ok(node)
    }

    fn else_clause(&mut self, indent: usize) -> PResult<Option<Node>> {
        if !self.next_line_is(indent, "else") {
            return Ok(None);
        }
        self.clause_line("else")?;
        self.expect(":")?;
        Ok(Some(Node::new("else_clause", vec![self.suite(indent)?])))
    }

    fn for_statement(&mut self, indent: usize) -> PResult<Node> {
        let target = self.target_list()?;
        self.expect("in")?;
        let iter = self.expr_list()?;
        self.expect(":")?;
        let body = self.suite(indent)?;
        let mut children = vec![target, iter, body];
        children.extend(self.else_clause(indent)?);
        Ok(Node::new("for_statement", children))
    }

    fn with_statement(&mut self, indent: usize) -> PResult<Node> {
        let mut children = Vec::new();
        let parens = self.at("(")
            && {
                // `with (a as b, c as d):` only; a parenthesized expression is handled by expr().
                let mut i = self.pos + 1;
                let mut depth = 1;
                let mut has_as = false;
                while i < self.end && depth > 0 {
                    let t = &self.toks[i];
                    match t.lexeme.as_str() {
                        "(" | "[" | "{" => depth += 1,
                        ")" | "]" | "}" => depth -= 1,
                        "as" if depth == 1 => has_as = true,
                        _ => {}
                    }
                    i += 1;
                }
                has_as
            };
        if parens {
            self.pos += 1;
        }
        loop {
            let e = self.expr()?;
            let mut item = vec![e];
            if self.eat("as") {
                item.push(self.target()?);
            }
            children.push(Node::new("with_item", item));
            if !self.eat(",") {
                break;
            }
            if parens && self.at(")") {
                break;
            }
        }
        if parens {
            self.expect(")")?;
        }
        self.expect(":")?;
        children.push(self.suite(indent)?);
        Ok(Node::new("with_statement", children))
    }

    fn function_def(&mut self, indent: usize) -> PResult<Node> {
        let name = self.name()?;
        self.expect("(")?;
        let params = self.parameters(")", true)?;
        self.expect(")")?;
        let mut children = vec![name, params];
        if self.eat("->") {
            children.push(Node::new("return_type", vec![self.expr()?]));
        }
        self.expect(":")?;
        children.push(self.suite(indent)?);
        Ok(Node::new("function_definition", children))
    }

    fn parameters(&mut self, close: &str, annotations: bool) -> PResult<Node> {
        let mut params = Vec::new();
        while !self.at(close) {
            let p = if self.eat("**") {
                Node::new("dictionary_splat_pattern", vec![self.name()?])
            } else if self.eat("*") {
                if self.at(",") || self.at(close) {
                    Node::leaf("keyword_separator", None)
                } else {
                    Node::new("list_splat_pattern", vec![self.name()?])
                }
            } else if self.eat("/") {
                Node::leaf("positional_separator", None)
            } else {
                let n = self.name()?;
                let mut kind = "identifier";
                let mut ch = vec![n];
                if annotations && self.eat(":") {
                    ch.push(Node::new("type", vec![self.expr()?]));
                    kind = "typed_parameter";
                }
                if self.eat("=") {
                    ch.push(self.expr()?);
                    kind = if kind == "typed_parameter" {
                        "typed_default_parameter"
                    } else {
                        "default_parameter"
                    };
                }
                if kind == "identifier" {
                    ch.pop().unwrap()
                } else {
                    Node::new(kind, ch)
                }
            };
            params.push(p);
            if !self.eat(",") {
                break;
            }
        }
        Ok(Node::new(if annotations { "parameters" } else { "lambda_parameters" }, params))
    }

    fn small_statement(&mut self) -> PResult<Node> {
        let t = self.peek().ok_or(ParseError)?;
        if t.kind == TokenKind::Keyword {
            match t.lexeme.as_str() {
                "pass" => {
                    self.pos += 1;
                    return Ok(Node::leaf("pass_statement", None));
                }
                "break" => {
                    self.pos += 1;
                    return Ok(Node::leaf("break_statement", None));
                }
                "continue" => {
                    self.pos += 1;
                    return Ok(Node::leaf("continue_statement", None));
                }
                "return" => {
                    self.pos += 1;
                    let mut ch = Vec::new();
                    if !self.at_line_end() && !self.at(";") {
                        ch.push(self.expr_list()?);
                    }
                    return Ok(Node::new("return_statement", ch));
                }
                "del" => {
                    self.pos += 1;
                    return Ok(Node::new("delete_statement", vec![self.target_list()?]));
                }
                "raise" => {
                    self.pos += 1;
                    let mut ch = Vec::new();
                    if !self.at_line_end() && !self.at(";") {
                        ch.push(self.expr()?);
                        if self.eat("from") {
                            ch.push(self.expr()?);
                        }
                    }
                    return Ok(Node::new("raise_statement", ch));
                }
                "global" | "nonlocal" => {
                    let kind = if t.lexeme == "global" {
                        "global_statement"
                    } else {
                        "nonlocal_statement"
                    };
                    self.pos += 1;
                    let mut ch = vec![self.name()?];
                    while self.eat(",") {
                        ch.push(self.name()?);
                    }
                    return Ok(Node::new(kind, ch));
                }
                "assert" => {
                    self.pos += 1;
                    let mut ch = vec![self.expr()?];
                    if self.eat(",") {
                        ch.push(self.expr()?);
                    }
                    return Ok(Node::new("assert_statement", ch));
                }
                "import" => {
                    self.pos += 1;
                    let mut ch = vec![self.import_item()?];
                    while self.eat(",") {
                        ch.push(self.import_item()?);
                    }
                    return Ok(Node::new("import_statement", ch));
                }
                "from" => {
                    self.pos += 1;
                    return self.import_from();
                }
                _ => {}
            }
        }
        self.expression_statement()
    }

    fn dotted_name(&mut self) -> PResult<Node> {
        let mut parts = vec![self.name()?];
        while self.eat(".") {
            parts.push(self.name()?);
        }
        Ok(Node::new("dotted_name", parts))
    }

    fn import_item(&mut self) -> PResult<Node> {
        let d = self.dotted_name()?;
        if self.eat("as") {
            let alias = self.name()?;
            Ok(Node::new("aliased_import", vec![d, alias]))
        } else {
            Ok(d)
        }
    }

    fn import_from(&mut self) -> PResult<Node> {
        let mut dots = 0;
        while self.at(".") || self.at("...") {
            dots += self.peek().unwrap().lexeme.len();
            self.pos += 1;
        }
        let mut source = Vec::new();
        if dots > 0 {
            source.push(Node::leaf("relative_import", None));
        }
        if !self.at("import") {
            source.push(self.dotted_name()?);
        } else if dots == 0 {
            return Err(ParseError);
        }
        self.expect("import")?;
        let mut children = vec![Node::new("import_source", source)];
        if self.eat("*") {
            children.push(Node::leaf("wildcard_import", None));
        } else {
            let parens = self.eat("(");
            loop {
                let n = self.dotted_name()?;
                if self.eat("as") {
                    let alias = self.name()?;
                    children.push(Node::new("aliased_import", vec![n, alias]));
                } else {
                    children.push(n);
                }
                if !self.eat(",") {
                    break;
                }
                if parens && self.at(")") {
                    break;
                }
            }
            if parens {
                self.expect(")")?;
            }
        }
        Ok(Node::new("import_from_statement", children))
    }

    fn expression_statement(&mut self) -> PResult<Node> {
        if self.at("yield") {
            let y = self.yield_expr()?;
            return Ok(Node::new("expression_statement", vec![y]));
        }
        let first = self.star_expr_list()?;
        if self.at(":") {
            self.pos += 1;
            let ann = Node::new("type", vec![self.expr()?]);
            let mut ch = vec![first, ann];
            if self.eat("=") {
                ch.push(self.rhs()?);
            }
            return Ok(Node::new("annotated_assignment", ch));
        }
        if let Some(op) = self.peek().filter(|t| t.kind == TokenKind::Operator && AUG_OPS.contains(&t.lexeme.as_str())) {
            self.pos += 1;
            let rhs = self.rhs()?;
            return Ok(Node::new(
                "augmented_assignment",
                vec![first, Node::leaf(&op.lexeme, None), rhs],
            ));
        }
        if self.at("=") {
            let mut parts = vec![first];
            while self.eat("=") {
                parts.push(self.rhs()?);
            }
            // Right-nested like `a = (b = value)`.
            let mut node = parts.pop().unwrap();
            while let Some(target) = parts.pop() {
                node = Node::new("assignment", vec![target, node]);
            }
            return Ok(node);
        }
        Ok(Node::new("expression_statement", vec![first]))
    }

    fn rhs(&mut self) -> PResult<Node> {
        if self.at("yield") {
            self.yield_expr()
        } else {
            self.star_expr_list()
        }
    }

    fn yield_expr(&mut self) -> PResult<Node> {
        self.expect("yield")?;
        let mut ch = Vec::new();
        if self.eat("from") {
            ch.push(self.expr()?);
        } else if !self.at_line_end() && !self.at(")") && !self.at(";") && !self.at("=") {
            ch.push(self.expr_list()?);
        }
        Ok(Node::new("yield", ch))
    }

    // ---- expressions ----

    fn starts_expr(&self) -> bool {
        match self.peek() {
            None => false,
            Some(t) => match t.kind {
                TokenKind::Identifier | TokenKind::Number | TokenKind::String => true,
                TokenKind::Keyword => matches!(
                    t.lexeme.as_str(),
                    "True" | "False" | "None" | "not" | "lambda" | "await"
                ),
                TokenKind::Operator => matches!(t.lexeme.as_str(), "-" | "+" | "~" | "*"),
                TokenKind::Punctuation => matches!(t.lexeme.as_str(), "(" | "[" | "{" | "..."),
            },
        }
    }

    fn star_expr(&mut self) -> PResult<Node> {
        if self.eat("*") {
            Ok(Node::new("list_splat", vec![self.bitor()?]))
        } else {
            self.expr()
        }
    }

    /// Comma-separated expressions; more than one (or a trailing comma) makes
    /// an `expression_list`.
    fn star_expr_list(&mut self) -> PResult<Node> {
        let first = self.star_expr()?;
        if !self.at(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat(",") {
            if !self.starts_expr() {
                break;
            }
            items.push(self.star_expr()?);
        }
        Ok(Node::new("expression_list", items))
    }

    fn expr_list(&mut self) -> PResult<Node> {
        self.star_expr_list()
    }

    fn target(&mut self) -> PResult<Node> {
        if self.eat("*") {
            return Ok(Node::new("list_splat_pattern", vec![self.bitor()?]));
        }
        self.bitor()
    }

    /// Targets of `for`/`del`/`as`: stops before `in`.
    fn target_list(&mut self) -> PResult<Node> {
        let first = self.target()?;
        if !self.at(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat(",") {
            if !self.starts_expr() {
                break;
            }
            items.push(self.target()?);
        }
        Ok(Node::new("pattern_list", items))
    }

    fn expr(&mut self) -> PResult<Node> {
        self.enter()?;
        let r = self.expr_inner();
        self.leave();
        r
    }

    fn expr_inner(&mut self) -> PResult<Node> {
        if self.at("lambda") {
            self.pos += 1;
            let params = self.parameters(":", false)?;
            self.expect(":")?;
            let body = self.expr()?;
            return Ok(Node::new("lambda", vec![params, body]));
        }
        if self.at_kind(TokenKind::Identifier) && self.peek_at(1).is_some_and(|t| t.lexeme == ":=") {
            let n = self.name()?;
            self.pos += 1;
            let v = self.expr()?;
            return Ok(Node::new("named_expression", vec![n, v]));
        }
        let body = self.or_test()?;
        if self.at("if") {
            self.pos += 1;
            let cond = self.or_test()?;
            self.expect("else")?;
            let alt = self.expr()?;
            return Ok(Node::new("conditional_expression", vec![body, cond, alt]));
        }
        Ok(body)
    }

    fn or_test(&mut self) -> PResult<Node> {
        let mut left = self.and_test()?;
        let mut links = 0;
        while self.at("or") {
            self.pos += 1;
            self.chain()?;
            links += 1;
            let right = self.and_test()?;
            left = Node::new("boolean_operator", vec![left, Node::leaf("or", None), right]);
        }
        self.unchain(links);
        Ok(left)
    }

    fn and_test(&mut self) -> PResult<Node> {
        let mut left = self.not_test()?;
        let mut links = 0;
        while self.at("and") {
            self.pos += 1;
            self.chain()?;
            links += 1;
            let right = self.not_test()?;
            left = Node::new("boolean_operator", vec![left, Node::leaf("and", None), right]);
        }
        self.unchain(links);
        Ok(left)
    }

    fn not_test(&mut self) -> PResult<Node> {
        if self.at("not") {
            self.pos += 1;
            self.enter()?;
            let inner = self.not_test();
            self.leave();
            return Ok(Node::new("not_operator", vec![inner?]));
        }
        self.comparison()
    }

    fn comp_op(&mut self) -> Option<&'static str> {
        let t = self.peek()?;
        if t.kind == TokenKind::String {
            return None;
        }
        let op = match t.lexeme.as_str() {
            "<" => "<",
            ">" => ">",
            "==" => "==",
            ">=" => ">=",
            "<=" => "<=",
            "!=" => "!=",
            "in" => "in",
            "is" => {
                if self.peek_at(1).is_some_and(|n| n.lexeme == "not") {
                    self.pos += 1;
                    "is not"
                } else {
                    "is"
                }
            }
            "not" if self.peek_at(1).is_some_and(|n| n.lexeme == "in") => {
                self.pos += 1;
                "not in"
            }
            _ => return None,
        };
        self.pos += 1;
        Some(op)
    }

    fn comparison(&mut self) -> PResult<Node> {
        let first = self.bitor()?;
        let mut parts = vec![first];
        while let Some(op) = self.comp_op() {
            parts.push(Node::leaf(op, None));
            parts.push(self.bitor()?);
        }
        if parts.len() == 1 {
            Ok(parts.pop().unwrap())
        } else {
            Ok(Node::new("comparison_operator", parts))
        }
    }

    fn binary_level(&mut self, ops: &[&str], next: fn(&mut Self) -> PResult<Node>) -> PResult<Node> {
        let mut left = next(self)?;
        let mut links = 0;
        while let Some(t) = self.peek().filter(|t| t.kind == TokenKind::Operator && ops.contains(&t.lexeme.as_str())) {
            self.pos += 1;
            self.chain()?;
            links += 1;
            let right = next(self)?;
            left = Node::new("binary_operator", vec![left, Node::leaf(&t.lexeme, None), right]);
        }
        self.unchain(links);
        Ok(left)
    }

    fn bitor(&mut self) -> PResult<Node> {
        self.binary_level(&["|"], Self::bitxor)
    }

    fn bitxor(&mut self) -> PResult<Node> {
        self.binary_level(&["^"], Self::bitand)
    }

    fn bitand(&mut self) -> PResult<Node> {
        self.binary_level(&["&"], Self::shift)
    }

    fn shift(&mut self) -> PResult<Node> {
        self.binary_level(&["<<", ">>"], Self::arith)
    }

    fn arith(&mut self) -> PResult<Node> {
        self.binary_level(&["+", "-"], Self::term)
    }

    fn term(&mut self) -> PResult<Node> {
        self.binary_level(&["*", "/", "//", "%", "@"], Self::factor)
    }

    fn factor(&mut self) -> PResult<Node> {
        if let Some(t) = self.peek().filter(|t| t.kind == TokenKind::Operator && matches!(t.lexeme.as_str(), "+" | "-" | "~")) {
            self.pos += 1;
            self.enter()?;
            let inner = self.factor();
            self.leave();
            return Ok(Node::new("unary_operator", vec![Node::leaf(&t.lexeme, None), inner?]));
        }
        self.power()
    }

    fn power(&mut self) -> PResult<Node> {
        let base = if self.at("await") {
            self.pos += 1;
            Node::new("await", vec![self.primary()?])
        } else {
            self.primary()?
        };
        if self.at("**") {
            self.pos += 1;
            self.enter()?;
            let exp = self.factor();
            self.leave();
            let exp = exp?;
            return Ok(Node::new("binary_operator", vec![base, Node::leaf("**", None), exp]));
        }
        Ok(base)
    }

    fn primary(&mut self) -> PResult<Node> {
        let mut node = self.atom()?;
        let mut links = 0;
        loop {
            if self.at("(") || self.at("[") || self.at(".") {
                self.chain()?;
                links += 1;
            }
            if self.at(".") {
                self.pos += 1;
                let attr = self.name()?;
                node = Node::new("attribute", vec![node, attr]);
            } else if self.at("(") {
                self.pos += 1;
                let args = self.call_args()?;
                node = Node::new("call", vec![node, args]);
            } else if self.at("[") {
                self.pos += 1;
                let mut items = vec![node];
                loop {
                    items.push(self.slice_item()?);
                    if !self.eat(",") || self.at("]") {
                        break;
                    }
                }
                self.expect("]")?;
                node = Node::new("subscript", items);
            } else {
                self.unchain(links);
                return Ok(node);
            }
        }
    }

    fn slice_item(&mut self) -> PResult<Node> {
        let lower = if self.at(":") { None } else { Some(self.star_expr()?) };
        if !self.at(":") {
            return lower.ok_or(ParseError);
        }
        let mut ch: Vec<Node> = lower.into_iter().collect();
        self.pos += 1;
        if !self.at(":") && !self.at("]") && !self.at(",") {
            ch.push(self.expr()?);
        }
        if self.eat(":") && !self.at("]") && !self.at(",") {
            ch.push(self.expr()?);
        }
        Ok(Node::new("slice", ch))
    }

    /// After `(`; consumes the closing `)`.
    fn call_args(&mut self) -> PResult<Node> {
        let mut args = Vec::new();
        while !self.at(")") {
            let a = if self.eat("**") {
                Node::new("dictionary_splat", vec![self.expr()?])
            } else if self.eat("*") {
                Node::new("list_splat", vec![self.expr()?])
            } else if self.at_kind(TokenKind::Identifier) && self.peek_at(1).is_some_and(|t| t.lexeme == "=") {
                let n = self.name()?;
                self.pos += 1;
                Node::new("keyword_argument", vec![n, self.expr()?])
            } else {
                let e = self.expr()?;
                if self.at("for") || (self.at("async") && self.peek_at(1).is_some_and(|t| t.lexeme == "for")) {
                    let mut ch = vec![e];
                    ch.extend(self.comp_clauses()?);
                    Node::new("generator_expression", ch)
                } else {
                    e
                }
            };
            args.push(a);
            if !self.eat(",") {
                break;
            }
        }
        self.expect(")")?;
        Ok(Node::new("argument_list", args))
    }

    fn comp_clauses(&mut self) -> PResult<Vec<Node>> {
        let mut out = Vec::new();
        loop {
            if self.at("async") && self.peek_at(1).is_some_and(|t| t.lexeme == "for") {
                self.pos += 1;
            }
            if self.eat("for") {
                let t = self.target_list()?;
                self.expect("in")?;
                let it = self.or_test()?;
                out.push(Node::new("for_in_clause", vec![t, it]));
            } else if self.eat("if") {
                out.push(Node::new("if_clause", vec![self.or_test()?]));
            } else {
                return Ok(out);
            }
        }
    }

    fn atom(&mut self) -> PResult<Node> {
        let t = self.peek().ok_or(ParseError)?;
        match t.kind {
            TokenKind::Identifier => self.name(),
            TokenKind::Number => {
                self.pos += 1;
                let is_float = t.lexeme.contains(['.', 'e', 'E', 'j', 'J'])
                    && !t.lexeme.starts_with("0x")
                    && !t.lexeme.starts_with("0X");
                Ok(Node::leaf(if is_float { "float" } else { "integer" }, Some(&t.lexeme)))
            }
            TokenKind::String => {
                let mut parts = Vec::new();
                while let Some(s) = self.peek().filter(|s| s.kind == TokenKind::String) {
                    self.pos += 1;
                    parts.push(Node::leaf("string", Some(&s.lexeme)));
                }
                if parts.len() == 1 {
                    Ok(parts.pop().unwrap())
                } else {
                    Ok(Node::new("concatenated_string", parts))
                }
            }
            TokenKind::Keyword => {
                self.pos += 1;
                match t.lexeme.as_str() {
                    "True" => Ok(Node::leaf("true", None)),
                    "False" => Ok(Node::leaf("false", None)),
                    "None" => Ok(Node::leaf("none", None)),
                    _ => Err(ParseError),
                }
            }
            TokenKind::Punctuation => match t.lexeme.as_str() {
                "..." => {
                    self.pos += 1;
                    Ok(Node::leaf("ellipsis", None))
                }
                "(" => {
                    self.pos += 1;
                    self.enter()?;
                    let r = self.paren_atom();
                    self.leave();
                    r
                }
                "[" => {
                    self.pos += 1;
                    self.enter()?;
                    let r = self.list_atom();
                    self.leave();
                    r
                }
                "{" => {
                    self.pos += 1;
                    self.enter()?;
                    let r = self.brace_atom();
                    self.leave();
                    r
                }
                _ => Err(ParseError),
            },
            TokenKind::Operator => Err(ParseError),
        }
    }

    fn paren_atom(&mut self) -> PResult<Node> {
        if self.eat(")") {
            return Ok(Node::new("tuple", Vec::new()));
        }
        if self.at("yield") {
            let y = self.yield_expr()?;
            self.expect(")")?;
            return Ok(Node::new("parenthesized_expression", vec![y]));
        }
        let first = self.star_expr()?;
        if self.at("for") || self.at("async") {
            let mut ch = vec![first];
            ch.extend(self.comp_clauses()?);
            self.expect(")")?;
            return Ok(Node::new("generator_expression", ch));
        }
        if self.eat(")") {
            return Ok(Node::new("parenthesized_expression", vec![first]));
        }
        let mut items = vec![first];
        while self.eat(",") {
            if self.at(")") {
                break;
            }
            items.push(self.star_expr()?);
        }
        self.expect(")")?;
        Ok(Node::new("tuple", items))
    }

    fn list_atom(&mut self) -> PResult<Node> {
        if self.eat("]") {
            return Ok(Node::new("list", Vec::new()));
        }
        let first = self.star_expr()?;
        if self.at("for") || self.at("async") {
            let mut ch = vec![first];
            ch.extend(self.comp_clauses()?);
            self.expect("]")?;
            return Ok(Node::new("list_comprehension", ch));
        }
        let mut items = vec![first];
        while self.eat(",") {
            if self.at("]") {
                break;
            }
            items.push(self.star_expr()?);
        }
        self.expect("]")?;
        Ok(Node::new("list", items))
    }

    fn dict_item(&mut self) -> PResult<(Node, bool)> {
        if self.eat("**") {
            return Ok((Node::new("dictionary_splat", vec![self.bitor()?]), true));
        }
        let k = self.star_expr()?;
        if self.eat(":") {
            let v = self.expr()?;
            return Ok((Node::new("pair", vec![k, v]), true));
        }
        Ok((k, false))
    }

    fn brace_atom(&mut self) -> PResult<Node> {
        if self.eat("}") {
            return Ok(Node::new("dictionary", Vec::new()));
        }
        let (first, is_dict) = self.dict_item()?;
        if self.at("for") || self.at("async") {
            let mut ch = vec![first];
            ch.extend(self.comp_clauses()?);
            self.expect("}")?;
            let kind = if is_dict {
                "dictionary_comprehension"
            } else {
                "set_comprehension"
            };
            return Ok(Node::new(kind, ch));
        }
        let mut items = vec![first];
        while self.eat(",") {
            if self.at("}") {
                break;
            }
            let (item, d) = self.dict_item()?;
            if d != is_dict {
                return Err(ParseError);
            }
            items.push(item);
        }
        self.expect("}")?;
        Ok(Node::new(if is_dict { "dictionary" } else { "set" }, items))
    }
}

/// Parse a token stream into a syntax tree; `parse_ok` is false (and the tree
/// empty) on anything outside the supported subset.
pub fn parse(tokens: &TokenStream) -> SyntaxTree {
    let toks = tokens.tokens.as_slice();
    if toks.is_empty() {
        return SyntaxTree::failed();
    }
    let Some(lines) = logical_lines(toks) else {
        return SyntaxTree::failed();
    };
    let mut p = Parser {
        toks,
        lines,
        li: 0,
        pos: 0,
        end: 0,
        nest: 0,
        depth: 0,
    };
    match p.module() {
        Ok(root) => SyntaxTree {
            root: Some(root),
            parse_ok: true,
        },
        Err(_) => SyntaxTree::failed(),
    }
}

/// Tokenize and parse in one step.
pub fn parse_source(source: &str) -> SyntaxTree {
    parse(&super::lexer::tokenize(source))
}

/// S-expression of node kinds, for debugging and test oracles.
pub fn sexp(node: &Node) -> String {
    if node.is_leaf() {
        return node.kind.clone();
    }
    let inner: Vec<String> = node.children.iter().map(sexp).collect();
    format!("({} {})", node.kind, inner.join(" "))
}
