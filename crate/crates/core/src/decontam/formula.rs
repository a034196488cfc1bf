//! Arithmetic formula parsing, canonicalization, and evaluation.
//!
//! Formulas are parsed from infix notation (numbers, identifiers,
//! `+ - * / ^`, parentheses, unary minus, function calls such as `log10(x)`)
//! into a tree with n-ary sums and products. Canonicalization flattens
//! nested sums/products, folds constants, and sorts commutative operands
//! lexicographically by their canonical subterm string, then emits a stable
//! prefix-notation string. The prefix form is itself parseable, so
//! canonicalization is idempotent.
//!
//! Subtraction and division are rewritten at parse time (`a-b` becomes
//! `a + (-1)*b`, `a/b` becomes `a * b^-1`), so the canonical form uses only
//! `+`, `*`, `^`, numbers, variables, and calls.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FormulaError {
    #[error("formula is empty")]
    Empty,
    #[error("formula syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function `{function}` expects {expected} argument(s), got {got}")]
    WrongArity {
        function: String,
        expected: usize,
        got: usize,
    },
    #[error("evaluation left the function domain (log/sqrt/division)")]
    DomainViolation,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EquivalenceError {
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error("variable sets differ after slot abstraction: {left:?} vs {right:?}")]
    NotComparable {
        left: Vec<String>,
        right: Vec<String>,
    },
    #[error("could not draw a domain-valid sample after {0} attempts")]
    Unsampleable(usize),
    #[error("formula is not numerically executable: {0}")]
    NotExecutable(#[from] EvalError),
}

/// Numeric literals treated as unit-conversion factors during slot
/// abstraction (SI prefix scales plus the decibel base).
const UNIT_SCALE_LITERALS: [f64; 10] = [
    1e-9, 1e-6, 1e-3, 1e-2, 1e-1, 10.0, 1e2, 1e3, 1e6, 1e9,
];

// ---------------------------------------------------------------------------
// Tokenizer and infix parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>, FormulaError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && i + 1 < bytes.len() && (bytes[i + 1] as char).is_ascii_digit()) {
            let start = i;
            while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && matches!(bytes[i], b'e' | b'E') {
                let mut j = i + 1;
                if j < bytes.len() && matches!(bytes[j], b'+' | b'-') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| FormulaError::Syntax {
                pos: start,
                msg: format!("invalid number `{text}`"),
            })?;
            tokens.push((start, Token::Num(value)));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len()
                && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
            {
                i += 1;
            }
            // Identifier casing is normalized here.
            tokens.push((start, Token::Ident(src[start..i].to_lowercase())));
            continue;
        }
        match c {
            '+' | '-' | '/' | '^' => {
                tokens.push((i, Token::Op(c)));
                i += 1;
            }
            '*' => {
                // `**` is accepted as power.
                if i + 1 < bytes.len() && bytes[i + 1] == b'*' {
                    tokens.push((i, Token::Op('^')));
                    i += 2;
                } else {
                    tokens.push((i, Token::Op('*')));
                    i += 1;
                }
            }
            '(' => {
                tokens.push((i, Token::LParen));
                i += 1;
            }
            ')' => {
                tokens.push((i, Token::RParen));
                i += 1;
            }
            ',' => {
                tokens.push((i, Token::Comma));
                i += 1;
            }
            '−' => {
                // Unicode minus shows up in copied problem text.
                tokens.push((i, Token::Op('-')));
                i += '−'.len_utf8();
            }
            _ => {
                return Err(FormulaError::Syntax {
                    pos: i,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    Ok(tokens)
}

struct InfixParser<'a> {
    tokens: &'a [(usize, Token)],
    pos: usize,
    src_len: usize,
}

impl<'a> InfixParser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn next(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.pos).map(|(_, t)| t);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(p, _)| *p)
            .unwrap_or(self.src_len)
    }

    fn err(&self, msg: impl Into<String>) -> FormulaError {
        FormulaError::Syntax {
            pos: self.here(),
            msg: msg.into(),
        }
    }

    fn parse_expr(&mut self, min_bp: u8) -> Result<Expr, FormulaError> {
        let mut lhs = self.parse_prefix()?;
        loop {
            let op = match self.peek() {
                Some(Token::Op(c)) => *c,
                _ => break,
            };
            let (l_bp, r_bp) = match op {
                '+' | '-' => (1, 2),
                '*' | '/' => (3, 4),
                '^' => (6, 5), // right-associative
                _ => return Err(self.err(format!("unexpected operator `{op}`"))),
            };
            if l_bp < min_bp {
                break;
            }
            self.next();
            let rhs = self.parse_expr(r_bp)?;
            lhs = match op {
                '+' => Expr::Add(vec![lhs, rhs]),
                '-' => Expr::Add(vec![lhs, Expr::Mul(vec![Expr::Num(-1.0), rhs])]),
                '*' => Expr::Mul(vec![lhs, rhs]),
                '/' => Expr::Mul(vec![
                    lhs,
                    Expr::Pow(Box::new(rhs), Box::new(Expr::Num(-1.0))),
                ]),
                '^' => Expr::Pow(Box::new(lhs), Box::new(rhs)),
                _ => unreachable!(),
            };
        }
        Ok(lhs)
    }

    fn parse_prefix(&mut self) -> Result<Expr, FormulaError> {
        match self.next().cloned() {
            Some(Token::Num(v)) => Ok(Expr::Num(v)),
            Some(Token::Ident(name)) => {
                if matches!(self.peek(), Some(Token::LParen)) {
                    self.next();
                    let mut args = vec![self.parse_expr(0)?];
                    while matches!(self.peek(), Some(Token::Comma)) {
                        self.next();
                        args.push(self.parse_expr(0)?);
                    }
                    match self.next() {
                        Some(Token::RParen) => Ok(Expr::Call(name, args)),
                        _ => Err(self.err("expected `)` after call arguments")),
                    }
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(Token::Op('-')) => {
                // Binds tighter than * but looser than ^, so -x^2 == -(x^2).
                let inner = self.parse_expr(5)?;
                Ok(Expr::Mul(vec![Expr::Num(-1.0), inner]))
            }
            Some(Token::Op('+')) => self.parse_expr(5),
            Some(Token::LParen) => {
                let inner = self.parse_expr(0)?;
                match self.next() {
                    Some(Token::RParen) => Ok(inner),
                    _ => Err(self.err("expected `)`")),
                }
            }
            Some(t) => Err(self.err(format!("unexpected token {t:?}"))),
            None => Err(self.err("unexpected end of formula")),
        }
    }
}

// ---------------------------------------------------------------------------
// Prefix (canonical-form) parser
// ---------------------------------------------------------------------------

fn parse_prefix_form(src: &str) -> Result<Expr, FormulaError> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut start = 0usize;
    for (i, c) in src.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if !word.is_empty() {
                tokens.push((start, std::mem::take(&mut word)));
            }
            if c == '(' {
                tokens.push((i, "(".to_string()));
            } else if c == ')' {
                tokens.push((i, ")".to_string()));
            }
        } else {
            if word.is_empty() {
                start = i;
            }
            word.push(c);
        }
    }
    if !word.is_empty() {
        tokens.push((start, word));
    }
    let mut pos = 0;
    let expr = parse_sexpr(src, &tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(FormulaError::Syntax {
            pos: tokens[pos].0,
            msg: "trailing tokens after expression".into(),
        });
    }
    Ok(expr)
}

fn parse_sexpr(
    src: &str,
    tokens: &[(usize, String)],
    pos: &mut usize,
) -> Result<Expr, FormulaError> {
    let syntax = |pos: usize, msg: &str| FormulaError::Syntax {
        pos,
        msg: msg.to_string(),
    };
    let (tok_pos, tok) = tokens
        .get(*pos)
        .ok_or_else(|| syntax(src.len(), "unexpected end of expression"))?;
    *pos += 1;
    if tok == ")" {
        return Err(syntax(*tok_pos, "unexpected `)`"));
    }
    if tok != "(" {
        return parse_atom(tok, *tok_pos);
    }
    let (head_pos, head) = tokens
        .get(*pos)
        .ok_or_else(|| syntax(src.len(), "unexpected end of expression"))?;
    *pos += 1;
    let mut args = Vec::new();
    loop {
        match tokens.get(*pos) {
            Some((_, t)) if t == ")" => {
                *pos += 1;
                break;
            }
            Some(_) => args.push(parse_sexpr(src, tokens, pos)?),
            None => return Err(syntax(src.len(), "missing `)`")),
        }
    }
    match head.as_str() {
        "+" => {
            if args.len() < 2 {
                return Err(syntax(*head_pos, "`+` needs at least two operands"));
            }
            Ok(Expr::Add(args))
        }
        "*" => {
            if args.len() < 2 {
                return Err(syntax(*head_pos, "`*` needs at least two operands"));
            }
            Ok(Expr::Mul(args))
        }
        "^" => {
            if args.len() != 2 {
                return Err(syntax(*head_pos, "`^` needs exactly two operands"));
            }
            let mut it = args.into_iter();
            Ok(Expr::Pow(
                Box::new(it.next().unwrap()),
                Box::new(it.next().unwrap()),
            ))
        }
        "-" => match args.len() {
            1 => Ok(Expr::Mul(vec![Expr::Num(-1.0), args.into_iter().next().unwrap()])),
            2 => {
                let mut it = args.into_iter();
                let a = it.next().unwrap();
                let b = it.next().unwrap();
                Ok(Expr::Add(vec![a, Expr::Mul(vec![Expr::Num(-1.0), b])]))
            }
            _ => Err(syntax(*head_pos, "`-` needs one or two operands")),
        },
        "/" => {
            if args.len() != 2 {
                return Err(syntax(*head_pos, "`/` needs exactly two operands"));
            }
            let mut it = args.into_iter();
            let a = it.next().unwrap();
            let b = it.next().unwrap();
            Ok(Expr::Mul(vec![
                a,
                Expr::Pow(Box::new(b), Box::new(Expr::Num(-1.0))),
            ]))
        }
        name if name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') => {
            if args.is_empty() {
                return Err(syntax(*head_pos, "call needs at least one argument"));
            }
            Ok(Expr::Call(name.to_lowercase(), args))
        }
        other => Err(syntax(*head_pos, &format!("unknown operator `{other}`"))),
    }
}

fn parse_atom(tok: &str, pos: usize) -> Result<Expr, FormulaError> {
    if let Ok(v) = tok.parse::<f64>() {
        if v.is_finite() {
            return Ok(Expr::Num(v));
        }
    }
    let mut chars = tok.chars();
    let first_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
    if first_ok && chars.all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Ok(Expr::Var(tok.to_lowercase()));
    }
    Err(FormulaError::Syntax {
        pos,
        msg: format!("invalid atom `{tok}`"),
    })
}

/// Parse a formula from either canonical prefix notation or infix notation.
pub fn parse_formula(src: &str) -> Result<Expr, FormulaError> {
    if src.trim().is_empty() {
        return Err(FormulaError::Empty);
    }
    if let Ok(expr) = parse_prefix_form(src) {
        return Ok(expr);
    }
    let tokens = tokenize(src)?;
    let mut parser = InfixParser {
        tokens: &tokens,
        pos: 0,
        src_len: src.len(),
    };
    let expr = parser.parse_expr(0)?;
    if parser.pos != tokens.len() {
        return Err(parser.err("trailing tokens after expression"));
    }
    Ok(expr)
}

// ---------------------------------------------------------------------------
// Canonicalization
// ---------------------------------------------------------------------------

fn fold_call(name: &str, arg: f64) -> Option<f64> {
    let v = match name {
        "log" | "ln" => arg.ln(),
        "log10" => arg.log10(),
        "log2" => arg.log2(),
        "exp" => arg.exp(),
        "sqrt" => arg.sqrt(),
        "abs" => arg.abs(),
        _ => return None,
    };
    v.is_finite().then_some(v)
}

fn normalize_zero(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// Canonicalize an expression tree: flatten nested sums/products, fold
/// constants (only while results stay finite), eliminate identities, and
/// sort commutative operands by their canonical prefix string.
pub fn canonicalize_expr(expr: &Expr) -> Expr {
    match expr {
        Expr::Num(v) => Expr::Num(normalize_zero(*v)),
        Expr::Var(name) => Expr::Var(name.clone()),
        Expr::Add(children) => {
            let mut terms: Vec<Expr> = Vec::new();
            let mut constant = 0.0f64;
            let mut pending_nums: Vec<f64> = Vec::new();
            for child in children {
                match canonicalize_expr(child) {
                    Expr::Num(v) => pending_nums.push(v),
                    Expr::Add(inner) => {
                        for item in inner {
                            match item {
                                Expr::Num(v) => pending_nums.push(v),
                                other => terms.push(other),
                            }
                        }
                    }
                    other => terms.push(other),
                }
            }
            let sum: f64 = pending_nums.iter().sum();
            if sum.is_finite() {
                constant += sum;
            } else {
                // Overflow: keep the literals unfolded.
                terms.extend(pending_nums.into_iter().map(Expr::Num));
            }
            if terms.is_empty() {
                return Expr::Num(normalize_zero(constant));
            }
            if constant != 0.0 {
                terms.push(Expr::Num(constant));
            }
            sort_canonical(&mut terms);
            if terms.len() == 1 {
                terms.pop().unwrap()
            } else {
                Expr::Add(terms)
            }
        }
        Expr::Mul(children) => {
            let mut factors: Vec<Expr> = Vec::new();
            let mut pending_nums: Vec<f64> = Vec::new();
            for child in children {
                match canonicalize_expr(child) {
                    Expr::Num(v) => pending_nums.push(v),
                    Expr::Mul(inner) => {
                        for item in inner {
                            match item {
                                Expr::Num(v) => pending_nums.push(v),
                                other => factors.push(other),
                            }
                        }
                    }
                    other => factors.push(other),
                }
            }
            let mut constant = 1.0f64;
            let product: f64 = pending_nums.iter().product();
            if product.is_finite() {
                constant = product;
            } else {
                factors.extend(pending_nums.into_iter().map(Expr::Num));
            }
            if constant == 0.0 {
                return Expr::Num(0.0);
            }
            if factors.is_empty() {
                return Expr::Num(normalize_zero(constant));
            }
            if constant != 1.0 {
                factors.push(Expr::Num(constant));
            }
            sort_canonical(&mut factors);
            if factors.len() == 1 {
                factors.pop().unwrap()
            } else {
                Expr::Mul(factors)
            }
        }
        Expr::Pow(base, exponent) => {
            let base = canonicalize_expr(base);
            let exponent = canonicalize_expr(exponent);
            if let (Expr::Num(b), Expr::Num(e)) = (&base, &exponent) {
                let v = b.powf(*e);
                if v.is_finite() {
                    return Expr::Num(normalize_zero(v));
                }
            }
            match &exponent {
                Expr::Num(e) if *e == 1.0 => return base,
                Expr::Num(e) if *e == 0.0 => return Expr::Num(1.0),
                _ => {}
            }
            if matches!(&base, Expr::Num(b) if *b == 1.0) {
                return Expr::Num(1.0);
            }
            Expr::Pow(Box::new(base), Box::new(exponent))
        }
        Expr::Call(name, args) => {
            let args: Vec<Expr> = args.iter().map(canonicalize_expr).collect();
            if args.len() == 1 {
                if let Expr::Num(v) = args[0] {
                    if let Some(folded) = fold_call(name, v) {
                        return Expr::Num(normalize_zero(folded));
                    }
                }
            }
            Expr::Call(name.clone(), args)
        }
    }
}

fn sort_canonical(terms: &mut [Expr]) {
    terms.sort_by(|a, b| to_prefix(a).cmp(&to_prefix(b)));
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Emit an expression in prefix notation.
pub fn to_prefix(expr: &Expr) -> String {
    match expr {
        Expr::Num(v) => fmt_num(*v),
        Expr::Var(name) => name.clone(),
        Expr::Add(children) => {
            let parts: Vec<String> = children.iter().map(to_prefix).collect();
            format!("(+ {})", parts.join(" "))
        }
        Expr::Mul(children) => {
            let parts: Vec<String> = children.iter().map(to_prefix).collect();
            format!("(* {})", parts.join(" "))
        }
        Expr::Pow(base, exponent) => {
            format!("(^ {} {})", to_prefix(base), to_prefix(exponent))
        }
        Expr::Call(name, args) => {
            let parts: Vec<String> = args.iter().map(to_prefix).collect();
            format!("({} {})", name, parts.join(" "))
        }
    }
}

/// Parse and canonicalize, returning the stable prefix string.
pub fn canonical_formula(src: &str) -> Result<String, FormulaError> {
    let expr = parse_formula(src)?;
    Ok(to_prefix(&canonicalize_expr(&expr)))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Evaluate against a variable environment. Any non-finite intermediate
/// (log of a non-positive value, division by zero, overflow) is a
/// `DomainViolation`.
pub fn eval(expr: &Expr, env: &BTreeMap<String, f64>) -> Result<f64, EvalError> {
    let v = match expr {
        Expr::Num(v) => *v,
        Expr::Var(name) => *env
            .get(name)
            .ok_or_else(|| EvalError::UnknownVariable(name.clone()))?,
        Expr::Add(children) => {
            let mut acc = 0.0;
            for child in children {
                acc += eval(child, env)?;
            }
            acc
        }
        Expr::Mul(children) => {
            let mut acc = 1.0;
            for child in children {
                acc *= eval(child, env)?;
            }
            acc
        }
        Expr::Pow(base, exponent) => {
            let b = eval(base, env)?;
            let e = eval(exponent, env)?;
            b.powf(e)
        }
        Expr::Call(name, args) => {
            match name.as_str() {
                "log" | "ln" | "log10" | "log2" | "exp" | "sqrt" | "abs" => {
                    if args.len() != 1 {
                        return Err(EvalError::WrongArity {
                            function: name.clone(),
                            expected: 1,
                            got: args.len(),
                        });
                    }
                    let arg = eval(&args[0], env)?;
                    match name.as_str() {
                        "log" | "ln" => arg.ln(),
                        "log10" => arg.log10(),
                        "log2" => arg.log2(),
                        "exp" => arg.exp(),
                        "sqrt" => arg.sqrt(),
                        "abs" => arg.abs(),
                        _ => unreachable!(),
                    }
                }
                other => return Err(EvalError::UnknownFunction(other.to_string())),
            }
        }
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::DomainViolation)
    }
}

/// Free variables in depth-first, left-to-right first-appearance order.
pub fn variables(expr: &Expr) -> Vec<String> {
    let mut out = Vec::new();
    collect_vars(expr, &mut out);
    out
}

fn collect_vars(expr: &Expr, out: &mut Vec<String>) {
    match expr {
        Expr::Num(_) => {}
        Expr::Var(name) => {
            if !out.iter().any(|v| v == name) {
                out.push(name.clone());
            }
        }
        Expr::Add(children) | Expr::Mul(children) | Expr::Call(_, children) => {
            for child in children {
                collect_vars(child, out);
            }
        }
        Expr::Pow(base, exponent) => {
            collect_vars(base, out);
            collect_vars(exponent, out);
        }
    }
}

// ---------------------------------------------------------------------------
// Slot abstraction
// ---------------------------------------------------------------------------

/// Rename variables to canonical slots `v1, v2, ...` in first-appearance
/// order and replace unit-conversion literals with the marker variable `u`,
/// then re-canonicalize. Two formulas differing only in variable names or
/// unit scale factors map to the same abstraction.
pub fn slot_abstract(src: &str) -> Result<String, FormulaError> {
    let expr = parse_formula(src)?;
    let order = variables(&expr);
    let renames: BTreeMap<String, String> = order
        .iter()
        .enumerate()
        .map(|(i, name)| (name.clone(), format!("v{}", i + 1)))
        .collect();
    let abstracted = rename(&expr, &renames);
    Ok(to_prefix(&canonicalize_expr(&abstracted)))
}

fn rename(expr: &Expr, renames: &BTreeMap<String, String>) -> Expr {
    match expr {
        Expr::Num(v) => {
            if UNIT_SCALE_LITERALS.iter().any(|&u| u == *v) {
                Expr::Var("u".to_string())
            } else {
                Expr::Num(*v)
            }
        }
        Expr::Var(name) => Expr::Var(renames.get(name).cloned().unwrap_or_else(|| name.clone())),
        Expr::Add(children) => Expr::Add(children.iter().map(|c| rename(c, renames)).collect()),
        Expr::Mul(children) => Expr::Mul(children.iter().map(|c| rename(c, renames)).collect()),
        Expr::Pow(base, exponent) => Expr::Pow(
            Box::new(rename(base, renames)),
            Box::new(rename(exponent, renames)),
        ),
        Expr::Call(name, args) => Expr::Call(
            name.clone(),
            args.iter().map(|a| rename(a, renames)).collect(),
        ),
    }
}

// ---------------------------------------------------------------------------
// Numeric equivalence
// ---------------------------------------------------------------------------

/// Variable sampling ranges for the numeric-equivalence check.
#[derive(Debug, Clone)]
pub struct DomainRanges {
    pub default: (f64, f64),
    pub per_var: BTreeMap<String, (f64, f64)>,
}

impl Default for DomainRanges {
    fn default() -> Self {
        DomainRanges {
            default: (0.1, 100.0),
            per_var: BTreeMap::new(),
        }
    }
}

impl DomainRanges {
    fn range_for(&self, var: &str) -> (f64, f64) {
        self.per_var.get(var).copied().unwrap_or(self.default)
    }
}

const REL_ERR_FLOOR: f64 = 1e-9;
const MAX_REDRAWS_PER_SAMPLE: usize = 50;

/// Decide whether two formulas are numerically equivalent templates: both
/// are slot-abstracted, the shared variables are sampled from domain-valid
/// ranges, and equivalence holds iff the worst relative error over all
/// samples stays within `epsilon`.
///
/// Samples violating a function domain are rejected and redrawn a bounded
/// number of times.
pub fn numeric_equivalence(
    f1: &str,
    f2: &str,
    n_samples: usize,
    ranges: &DomainRanges,
    epsilon: f64,
    seed: u64,
) -> Result<bool, EquivalenceError> {
    let a = parse_formula(&slot_abstract(f1)?)?;
    let b = parse_formula(&slot_abstract(f2)?)?;
    let mut vars_a = variables(&a);
    let mut vars_b = variables(&b);
    vars_a.sort();
    vars_b.sort();
    if vars_a != vars_b {
        return Err(EquivalenceError::NotComparable {
            left: vars_a,
            right: vars_b,
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for _ in 0..n_samples {
        let mut attempts = 0;
        let (va, vb) = loop {
            attempts += 1;
            if attempts > MAX_REDRAWS_PER_SAMPLE {
                return Err(EquivalenceError::Unsampleable(MAX_REDRAWS_PER_SAMPLE));
            }
            let env: BTreeMap<String, f64> = vars_a
                .iter()
                .map(|name| {
                    let (lo, hi) = ranges.range_for(name);
                    (name.clone(), rng.gen_range(lo..=hi))
                })
                .collect();
            match (eval(&a, &env), eval(&b, &env)) {
                (Ok(va), Ok(vb)) => break (va, vb),
                (Err(EvalError::DomainViolation), _) | (_, Err(EvalError::DomainViolation)) => {
                    continue
                }
                (Err(e), _) | (_, Err(e)) => return Err(EquivalenceError::NotExecutable(e)),
            }
        };
        let rel = (va - vb).abs() / va.abs().max(REL_ERR_FLOOR);
        if rel > epsilon {
            return Ok(false);
        }
    }
    Ok(true)
}
