use serde::{Deserialize, Serialize};

pub const PYTHON_KEYWORDS: [&str; 35] = [
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global",
    "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return",
    "try", "while", "with", "yield",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Identifier,
    Keyword,
    Number,
    String,
    Operator,
    Punctuation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub lexeme: String,
    pub kind: TokenKind,
    /// Byte range in the source.
    pub span: (usize, usize),
    /// 0-based line of the first byte.
    pub line: usize,
    /// 0-based line of the last byte (differs for multi-line strings).
    pub end_line: usize,
    /// Display column of the first byte, tabs expanded to multiples of 8.
    pub col: usize,
    /// Preceded by a backslash line continuation.
    pub continued: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lexemes(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.lexeme.as_str()).collect()
    }
}

const THREE_CHAR_OPS: [&str; 4] = ["**=", "//=", ">>=", "<<="];
const TWO_CHAR_OPS: [&str; 19] = [
    "**", "//", "<<", ">>", "<=", ">=", "==", "!=", "->", ":=", "+=", "-=", "*=", "/=", "%=",
    "@=", "&=", "|=", "^=",
];
const ONE_CHAR_OPS: &str = "+-*/%@&|^~<>=!";
const PUNCT: &str = "()[]{},:.;";

fn is_id_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_id_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    line_start: usize,
    continued: bool,
    col_at: usize,
    col_val: usize,
    out: Vec<Token>,
}

impl<'a> Lexer<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, off: usize) -> Option<char> {
        self.src.get(self.pos + off..)?.chars().next()
    }

    /// Positions only move forward, so the scan resumes from the last query.
    fn col_of(&mut self, at: usize) -> usize {
        if self.col_at < self.line_start {
            self.col_at = self.line_start;
            self.col_val = 0;
        }
        for c in self.src[self.col_at..at].chars() {
            self.col_val = if c == '\t' { (self.col_val / 8 + 1) * 8 } else { self.col_val + 1 };
        }
        self.col_at = at;
        self.col_val
    }

    fn push(&mut self, start: usize, kind: TokenKind, start_line: usize, col: usize) {
        self.out.push(Token {
            lexeme: self.src[start..self.pos].to_string(),
            kind,
            span: (start, self.pos),
            line: start_line,
            end_line: self.line,
            col,
            continued: std::mem::take(&mut self.continued),
        });
    }

    fn newline_at(&mut self, idx: usize) {
        self.line += 1;
        self.line_start = idx + 1;
    }

    fn run(mut self) -> Vec<Token> {
        while let Some(c) = self.peek() {
            let start = self.pos;
            let start_line = self.line;
            let col = self.col_of(start);
            match c {
                '\n' => {
                    self.newline_at(self.pos);
                    self.pos += 1;
                }
                c if c.is_whitespace() => self.pos += c.len_utf8(),
                '#' => {
                    let end = self.src[self.pos..]
                        .find('\n')
                        .map_or(self.src.len(), |i| self.pos + i);
                    self.pos = end;
                }
                '\\' if matches!(self.peek_at(1), Some('\n'))
                    || (self.peek_at(1) == Some('\r') && self.peek_at(2) == Some('\n')) =>
                {
                    let nl = self.src[self.pos..].find('\n').unwrap() + self.pos;
                    self.newline_at(nl);
                    self.pos = nl + 1;
                    self.continued = true;
                }
                '"' | '\'' => {
                    self.string_body(self.pos);
                    self.push(start, TokenKind::String, start_line, col);
                }
                c if is_id_start(c) => {
                    while let Some(c) = self.peek() {
                        if !is_id_continue(c) {
                            break;
                        }
                        self.pos += c.len_utf8();
                    }
                    let word = &self.src[start..self.pos];
                    let lower = word.to_ascii_lowercase();
                    let is_prefix = word.len() <= 2
                        && lower.chars().all(|c| matches!(c, 'r' | 'b' | 'u' | 'f'))
                        && matches!(self.peek(), Some('"' | '\''));
                    if is_prefix {
                        self.string_body(self.pos);
                        self.push(start, TokenKind::String, start_line, col);
                    } else if PYTHON_KEYWORDS.contains(&word) {
                        self.push(start, TokenKind::Keyword, start_line, col);
                    } else {
                        self.push(start, TokenKind::Identifier, start_line, col);
                    }
                }
                c if c.is_ascii_digit()
                    || (c == '.' && self.peek_at(1).is_some_and(|d| d.is_ascii_digit())) =>
                {
                    self.number();
                    self.push(start, TokenKind::Number, start_line, col);
                }
                _ => {
                    let rest = &self.src[self.pos..];
                    let op_len = if rest.starts_with("...") {
                        Some((3, TokenKind::Punctuation))
                    } else if THREE_CHAR_OPS.iter().any(|o| rest.starts_with(o)) {
                        Some((3, TokenKind::Operator))
                    } else if TWO_CHAR_OPS.iter().any(|o| rest.starts_with(o)) {
                        Some((2, TokenKind::Operator))
                    } else if ONE_CHAR_OPS.contains(c) {
                        Some((1, TokenKind::Operator))
                    } else if PUNCT.contains(c) {
                        Some((1, TokenKind::Punctuation))
                    } else {
                        None
                    };
                    match op_len {
                        Some((n, kind)) => {
                            self.pos += n;
                            self.push(start, kind, start_line, col);
                        }
                        None => {
                            self.pos += c.len_utf8();
                            self.push(start, TokenKind::Punctuation, start_line, col);
                        }
                    }
                }
            }
        }
        self.out
    }

    /// Consume a quoted body starting at the opening quote. Unterminated
    /// strings run to the end of the line (single) or input (triple).
    fn string_body(&mut self, at: usize) {
        self.pos = at;
        let quote = self.peek().unwrap();
        let triple = self.peek_at(1) == Some(quote) && self.peek_at(2) == Some(quote);
        self.pos += if triple { 3 } else { 1 };
        while let Some(c) = self.peek() {
            match c {
                '\\' => {
                    self.pos += 1;
                    if let Some(n) = self.peek() {
                        if n == '\n' {
                            self.newline_at(self.pos);
                        }
                        self.pos += n.len_utf8();
                    }
                }
                '\n' if !triple => return,
                '\n' => {
                    self.newline_at(self.pos);
                    self.pos += 1;
                }
                c if c == quote => {
                    if !triple {
                        self.pos += 1;
                        return;
                    }
                    if self.peek_at(1) == Some(quote) && self.peek_at(2) == Some(quote) {
                        self.pos += 3;
                        return;
                    }
                    self.pos += 1;
                }
                c => self.pos += c.len_utf8(),
            }
        }
    }

    fn number(&mut self) {
        let rest = &self.src[self.pos..];
        if rest.len() > 1 && rest.starts_with('0') && matches!(rest.as_bytes()[1], b'x' | b'X' | b'o' | b'O' | b'b' | b'B') {
            self.pos += 2;
            while self.peek().is_some_and(|c| c.is_ascii_hexdigit() || c == '_') {
                self.pos += 1;
            }
            return;
        }
        let digits = |l: &mut Self| {
            while l.peek().is_some_and(|c| c.is_ascii_digit() || c == '_') {
                l.pos += 1;
            }
        };
        digits(self);
        if self.peek() == Some('.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let sign = matches!(self.peek_at(1), Some('+' | '-'));
            let d = self.peek_at(if sign { 2 } else { 1 });
            if d.is_some_and(|c| c.is_ascii_digit()) {
                self.pos += if sign { 2 } else { 1 };
                digits(self);
            }
        }
        if matches!(self.peek(), Some('j' | 'J')) {
            self.pos += 1;
        }
    }
}

/// Lex Python source. Comments are dropped; unknown characters become
/// single-character punctuation tokens. Never fails.
pub fn tokenize(source: &str) -> TokenStream {
    let lexer = Lexer {
        src: source,
        pos: 0,
        line: 0,
        line_start: 0,
        continued: false,
        col_at: 0,
        col_val: 0,
        out: Vec::new(),
    };
    TokenStream { tokens: lexer.run() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use TokenKind::{Identifier, Keyword, Number, Operator, Punctuation};

    fn kinds(src: &str) -> Vec<(String, TokenKind)> {
        tokenize(src)
            .tokens
            .into_iter()
            .map(|t| (t.lexeme, t.kind))
            .collect()
    }

    #[test]
    fn simple_assignment() {
        assert_eq!(
            kinds("x = 1"),
            vec![
                ("x".into(), Identifier),
                ("=".into(), Operator),
                ("1".into(), Number)
            ]
        );
    }

    #[test]
    fn comment_only() {
        assert!(tokenize("# only a comment").is_empty());
    }

    #[test]
    fn subscript_call_chain() {
        let got: Vec<TokenKind> = tokenize("df['a'].sum()").tokens.iter().map(|t| t.kind).collect();
        assert_eq!(
            got,
            vec![Identifier, Punctuation, TokenKind::String, Punctuation, Punctuation, Identifier, Punctuation, Punctuation]
        );
    }

    #[test]
    fn strings_and_prefixes() {
        let t = kinds("f'{a}' rb\"x\" '''multi\nline''' r'\\''");
        assert_eq!(t.len(), 4);
        assert!(t.iter().all(|(_, k)| *k == TokenKind::String));
        assert_eq!(t[2].0, "'''multi\nline'''");
    }

    #[test]
    fn numbers() {
        let t = kinds("1 2.5 .5 1e-3 0x1F 1_000 3j");
        assert_eq!(t.len(), 7);
        assert!(t.iter().all(|(_, k)| *k == Number));
    }

    #[test]
    fn operators_longest_match() {
        let t: Vec<String> = kinds("a //= b ** c != d -> e").into_iter().map(|x| x.0).collect();
        assert_eq!(t, vec!["a", "//=", "b", "**", "c", "!=", "d", "->", "e"]);
    }

    #[test]
    fn keywords_vs_identifiers() {
        let t = kinds("if not x in None: pass");
        assert_eq!(t[0].1, Keyword);
        assert_eq!(t[1].1, Keyword);
        assert_eq!(t[2].1, Identifier);
        assert_eq!(t[4].1, Keyword);
    }

    #[test]
    fn positions_and_continuation() {
        let ts = tokenize("if x:\n\ty = 1 + \\\n  2\n");
        let y = &ts.tokens[3];
        assert_eq!((y.lexeme.as_str(), y.line, y.col), ("y", 1, 8));
        let two = ts.tokens.last().unwrap();
        assert_eq!(two.lexeme, "2");
        assert!(two.continued);
        assert_eq!(two.line, 2);
    }

    #[test]
    fn unknown_chars_become_punctuation() {
        let t = kinds("a $ b ? ¿");
        assert_eq!(t[1], ("$".into(), Punctuation));
        assert_eq!(t[3], ("?".into(), Punctuation));
        assert_eq!(t[4], ("¿".into(), Punctuation));
    }

    #[test]
    fn spans_recover_source_modulo_comments() {
        let src = "x = 1  # note\nif x:\n    print('a b')\n";
        let ts = tokenize(src);
        let mut rebuilt = String::new();
        let mut last = 0;
        for t in &ts.tokens {
            let gap = &src[last..t.span.0];
            let gap = match gap.find('#') {
                Some(i) => {
                    let nl = gap[i..].find('\n').map_or(gap.len(), |j| i + j);
                    format!("{}{}", &gap[..i], &gap[nl..])
                }
                None => gap.to_string(),
            };
            rebuilt.push_str(&gap);
            rebuilt.push_str(&t.lexeme);
            last = t.span.1;
        }
        rebuilt.push_str(&src[last..]);
        assert_eq!(rebuilt, "x = 1  \nif x:\n    print('a b')\n");
    }
}
