//! Model-specification DSL: `response ~ term + term + ...`.
//!
//! Terms are parametric names, `s(...)` smooths (plain, random-effect,
//! factor-smooth), and `ti(...)` tensor-product interactions. The grammar is
//! whitespace-insensitive; option values may be quoted or bare. Parsing is
//! total: every input yields a formula or a positioned error.
//!
//! Whether a name is numeric or a factor — and whether a `by=` factor is
//! ordered — is a property of the dataset, not of the formula; those checks
//! happen at assembly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("formula error at position {pos}: {message}")]
pub struct FormulaError {
    /// Character offset into the formula text.
    pub pos: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Cr,
    Ps,
    Tp,
}

impl BasisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BasisKind::Cr => "cr",
            BasisKind::Ps => "ps",
            BasisKind::Tp => "tp",
        }
    }
}

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_M: usize = 2;
/// Default per-margin dimension for `ti()` when `k=c(..)` is omitted.
pub const DEFAULT_TI_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    /// Bare column name: numeric covariate or factor (treatment-expanded).
    Parametric { name: String },
    /// `s(var, ...)` with a cr/ps/tp basis, optionally `by=` a factor.
    Smooth {
        var: String,
        basis: BasisKind,
        k: usize,
        m: usize,
        by: Option<String>,
    },
    /// `s(group, bs="re")` or `s(group, var, bs="re")`.
    RandomEffect { group: String, slope: Option<String> },
    /// `s(var, group, bs="fs", ...)`: one inner smooth per group level.
    FactorSmooth {
        var: String,
        group: String,
        xt: BasisKind,
        k: usize,
        m: usize,
    },
    /// `ti(var1, var2, ...)`: pure-interaction tensor product.
    TensorInteraction {
        var1: String,
        var2: String,
        k1: usize,
        k2: usize,
        by: Option<String>,
    },
}

impl Term {
    /// Display label; two terms with equal labels are indistinguishable in
    /// output tables, so formulas must not contain duplicates.
    pub fn label(&self) -> String {
        match self {
            Term::Parametric { name } => name.clone(),
            Term::Smooth { var, by: None, .. } => format!("s({var})"),
            Term::Smooth { var, by: Some(w), .. } => format!("s({var}):{w}"),
            Term::RandomEffect { group, slope: None } => format!("s({group})"),
            Term::RandomEffect {
                group,
                slope: Some(v),
            } => format!("s({group},{v})"),
            Term::FactorSmooth { var, group, .. } => format!("s({var},{group})"),
            Term::TensorInteraction {
                var1, var2, by: None, ..
            } => format!("ti({var1},{var2})"),
            Term::TensorInteraction {
                var1,
                var2,
                by: Some(w),
                ..
            } => format!("ti({var1},{var2}):{w}"),
        }
    }

    /// Every column name the term references.
    pub fn referenced_names(&self) -> Vec<&str> {
        match self {
            Term::Parametric { name } => vec![name],
            Term::Smooth { var, by, .. } => {
                let mut v = vec![var.as_str()];
                if let Some(w) = by {
                    v.push(w);
                }
                v
            }
            Term::RandomEffect { group, slope } => {
                let mut v = vec![group.as_str()];
                if let Some(s) = slope {
                    v.push(s);
                }
                v
            }
            Term::FactorSmooth { var, group, .. } => vec![var, group],
            Term::TensorInteraction { var1, var2, by, .. } => {
                let mut v = vec![var1.as_str(), var2.as_str()];
                if let Some(w) = by {
                    v.push(w);
                }
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFormula {
    pub response: String,
    pub terms: Vec<Term>,
}

/// Parse the DSL. See the module doc for the grammar.
pub fn parse_formula(text: &str) -> Result<ModelFormula, FormulaError> {
    let mut s = Scanner::new(text);
    let response = s.ident("response name")?;
    s.expect('~')?;
    let mut terms: Vec<(Term, usize)> = Vec::new();
    loop {
        s.skip_ws();
        let term_pos = s.pos;
        if s.peek() == Some('1') {
            // explicit intercept marker; the intercept is always included
            s.bump();
        } else {
            terms.push((parse_term(&mut s)?, term_pos));
        }
        s.skip_ws();
        match s.peek() {
            Some('+') => {
                s.bump();
            }
            None => break,
            Some(c) => return Err(s.err(format!("expected `+` or end of formula, found `{c}`"))),
        }
    }
    validate(&response, &terms)?;
    Ok(ModelFormula {
        response,
        terms: terms.into_iter().map(|(t, _)| t).collect(),
    })
}

fn validate(response: &str, terms: &[(Term, usize)]) -> Result<(), FormulaError> {
    let mut labels: Vec<String> = Vec::new();
    for (term, pos) in terms {
        if term.referenced_names().contains(&response) {
            return Err(FormulaError {
                pos: *pos,
                message: format!("response `{response}` also appears on the right-hand side"),
            });
        }
        let label = term.label();
        if labels.contains(&label) {
            return Err(FormulaError {
                pos: *pos,
                message: format!("duplicate term `{label}`"),
            });
        }
        labels.push(label);
    }
    Ok(())
}

/// Canonical text: defaults omitted, one space after `~`, `+`, and commas.
/// `parse_formula(format_formula(f))` is structurally equal to `f`.
pub fn format_formula(f: &ModelFormula) -> String {
    if f.terms.is_empty() {
        return format!("{} ~ 1", f.response);
    }
    let terms: Vec<String> = f.terms.iter().map(format_term).collect();
    format!("{} ~ {}", f.response, terms.join(" + "))
}

fn format_term(t: &Term) -> String {
    match t {
        Term::Parametric { name } => name.clone(),
        Term::Smooth { var, basis, k, m, by } => {
            let mut out = format!("s({var}");
            if *basis != BasisKind::Tp {
                out.push_str(&format!(", bs=\"{}\"", basis.as_str()));
            }
            if *k != DEFAULT_K {
                out.push_str(&format!(", k={k}"));
            }
            if *m != DEFAULT_M {
                out.push_str(&format!(", m={m}"));
            }
            if let Some(w) = by {
                out.push_str(&format!(", by={w}"));
            }
            out.push(')');
            out
        }
        Term::RandomEffect { group, slope } => match slope {
            None => format!("s({group}, bs=\"re\")"),
            Some(v) => format!("s({group}, {v}, bs=\"re\")"),
        },
        Term::FactorSmooth { var, group, xt, k, m } => {
            let mut out = format!("s({var}, {group}, bs=\"fs\"");
            if *xt != BasisKind::Cr {
                out.push_str(&format!(", xt=\"{}\"", xt.as_str()));
            }
            if *k != DEFAULT_K {
                out.push_str(&format!(", k={k}"));
            }
            if *m != DEFAULT_M {
                out.push_str(&format!(", m={m}"));
            }
            out.push(')');
            out
        }
        Term::TensorInteraction { var1, var2, k1, k2, by } => {
            let mut out = format!("ti({var1}, {var2}");
            if *k1 != DEFAULT_TI_K || *k2 != DEFAULT_TI_K {
                out.push_str(&format!(", k=c({k1},{k2})"));
            }
            if let Some(w) = by {
                out.push_str(&format!(", by={w}"));
            }
            out.push(')');
            out
        }
    }
}

// ---------------------------------------------------------------------------
// Parser internals

struct Scanner {
    chars: Vec<char>,
    pos: usize,
}

impl Scanner {
    fn new(text: &str) -> Self {
        Scanner {
            chars: text.chars().collect(),
            pos: 0,
        }
    }

    fn err(&self, message: impl Into<String>) -> FormulaError {
        FormulaError {
            pos: self.pos,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: char) -> Result<(), FormulaError> {
        self.skip_ws();
        match self.peek() {
            Some(found) if found == c => {
                self.bump();
                Ok(())
            }
            Some(found) => Err(self.err(format!("expected `{c}`, found `{found}`"))),
            None => Err(self.err(format!("expected `{c}`, found end of input"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, FormulaError> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some(c) if is_ident_start(c) => {}
            Some(c) => return Err(self.err(format!("expected {what}, found `{c}`"))),
            None => return Err(self.err(format!("expected {what}, found end of input"))),
        }
        while self.peek().is_some_and(is_ident_char) {
            self.pos += 1;
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn integer(&mut self) -> Result<usize, FormulaError> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected an integer"));
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse().map_err(|_| FormulaError {
            pos: start,
            message: format!("integer `{text}` out of range"),
        })
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '.' || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '.' || c == '_'
}

#[derive(Debug)]
enum OptValue {
    Int(usize),
    Pair(usize, usize),
    Name(String),
}

#[derive(Debug)]
struct CallOption {
    key: String,
    value: OptValue,
    pos: usize,
}

fn parse_term(s: &mut Scanner) -> Result<Term, FormulaError> {
    let call_pos = s.pos;
    let name = s.ident("a term")?;
    s.skip_ws();
    if (name == "s" || name == "ti") && s.peek() == Some('(') {
        s.bump();
        let (vars, options) = parse_call_args(s, &name)?;
        s.expect(')')?;
        return if name == "s" {
            build_smooth(vars, options, call_pos)
        } else {
            build_ti(vars, options, call_pos)
        };
    }
    Ok(Term::Parametric { name })
}

fn parse_call_args(
    s: &mut Scanner,
    call: &str,
) -> Result<(Vec<String>, Vec<CallOption>), FormulaError> {
    let mut vars = Vec::new();
    let mut options: Vec<CallOption> = Vec::new();
    loop {
        s.skip_ws();
        if s.peek() == Some(')') {
            break;
        }
        let arg_pos = s.pos;
        let word = s.ident("an argument")?;
        s.skip_ws();
        if s.peek() == Some('=') {
            s.bump();
            let value = parse_option_value(s, &word)?;
            if options.iter().any(|o| o.key == word) {
                return Err(FormulaError {
                    pos: arg_pos,
                    message: format!("duplicate option `{word}`"),
                });
            }
            options.push(CallOption {
                key: word,
                value,
                pos: arg_pos,
            });
        } else {
            if !options.is_empty() {
                return Err(FormulaError {
                    pos: arg_pos,
                    message: format!("positional argument `{word}` after options in {call}()"),
                });
            }
            vars.push(word);
        }
        s.skip_ws();
        match s.peek() {
            Some(',') => {
                s.bump();
            }
            Some(')') | None => {}
            Some(c) => return Err(s.err(format!("expected `,` or `)`, found `{c}`"))),
        }
    }
    Ok((vars, options))
}

fn parse_option_value(s: &mut Scanner, key: &str) -> Result<OptValue, FormulaError> {
    match key {
        "k" => {
            s.skip_ws();
            if s.peek().is_some_and(|c| c.is_ascii_digit()) {
                return Ok(OptValue::Int(s.integer()?));
            }
            let pos = s.pos;
            let word = s.ident("an integer or c(k1,k2)")?;
            if word != "c" {
                return Err(FormulaError {
                    pos,
                    message: format!("expected an integer or c(k1,k2), found `{word}`"),
                });
            }
            s.expect('(')?;
            let a = s.integer()?;
            let mut ks = vec![a];
            loop {
                s.skip_ws();
                match s.peek() {
                    Some(',') => {
                        s.bump();
                        ks.push(s.integer()?);
                    }
                    _ => break,
                }
            }
            s.expect(')')?;
            if ks.len() != 2 {
                return Err(FormulaError {
                    pos,
                    message: format!("k=c(...) takes exactly 2 values, found {}", ks.len()),
                });
            }
            Ok(OptValue::Pair(ks[0], ks[1]))
        }
        "m" => Ok(OptValue::Int(s.integer()?)),
        "bs" | "xt" | "by" => {
            s.skip_ws();
            if s.peek() == Some('"') {
                s.bump();
                let start = s.pos;
                while s.peek().is_some_and(|c| c != '"') {
                    s.pos += 1;
                }
                if s.peek().is_none() {
                    return Err(s.err("unterminated string"));
                }
                let word: String = s.chars[start..s.pos].iter().collect();
                s.bump();
                Ok(OptValue::Name(word))
            } else {
                Ok(OptValue::Name(s.ident("a name")?))
            }
        }
        _ => Err(s.err(format!("unknown option `{key}`"))),
    }
}

/// Post-parse option bag for one call.
#[derive(Default)]
struct Opts {
    bs: Option<(String, usize)>,
    xt: Option<(String, usize)>,
    k: Option<(OptValue, usize)>,
    m: Option<(usize, usize)>,
    by: Option<(String, usize)>,
}

fn collect_opts(options: Vec<CallOption>) -> Result<Opts, FormulaError> {
    let mut o = Opts::default();
    for opt in options {
        let pos = opt.pos;
        match (opt.key.as_str(), opt.value) {
            ("bs", OptValue::Name(v)) => o.bs = Some((v, pos)),
            ("xt", OptValue::Name(v)) => o.xt = Some((v, pos)),
            ("by", OptValue::Name(v)) => o.by = Some((v, pos)),
            ("k", v) => o.k = Some((v, pos)),
            ("m", OptValue::Int(v)) => o.m = Some((v, pos)),
            (key, _) => {
                return Err(FormulaError {
                    pos,
                    message: format!("malformed value for option `{key}`"),
                })
            }
        }
    }
    Ok(o)
}

fn basis_kind(name: &str, pos: usize) -> Result<BasisKind, FormulaError> {
    match name {
        "cr" => Ok(BasisKind::Cr),
        "ps" => Ok(BasisKind::Ps),
        "tp" => Ok(BasisKind::Tp),
        other => Err(FormulaError {
            pos,
            message: format!("unknown basis `{other}` (expected cr, ps, or tp)"),
        }),
    }
}

fn scalar_k(k: Option<(OptValue, usize)>) -> Result<usize, FormulaError> {
    match k {
        None => Ok(DEFAULT_K),
        Some((OptValue::Int(v), pos)) => {
            if v < 2 {
                Err(FormulaError {
                    pos,
                    message: "k must be at least 2".into(),
                })
            } else {
                Ok(v)
            }
        }
        Some((OptValue::Pair(..), pos)) => Err(FormulaError {
            pos,
            message: "k=c(k1,k2) is only valid inside ti()".into(),
        }),
        Some((OptValue::Name(_), pos)) => Err(FormulaError {
            pos,
            message: "k must be an integer".into(),
        }),
    }
}

fn scalar_m(m: Option<(usize, usize)>) -> Result<usize, FormulaError> {
    match m {
        None => Ok(DEFAULT_M),
        Some((v @ (1 | 2), _)) => Ok(v),
        Some((v, pos)) => Err(FormulaError {
            pos,
            message: format!("m must be 1 or 2, found {v}"),
        }),
    }
}

fn reject(opt: &Option<(impl Sized, usize)>, name: &str, context: &str) -> Result<(), FormulaError> {
    if let Some((_, pos)) = opt {
        return Err(FormulaError {
            pos: *pos,
            message: format!("option `{name}` is not valid {context}"),
        });
    }
    Ok(())
}

fn build_smooth(
    vars: Vec<String>,
    options: Vec<CallOption>,
    call_pos: usize,
) -> Result<Term, FormulaError> {
    let o = collect_opts(options)?;
    let bs_name = o.bs.as_ref().map(|(v, _)| v.as_str()).unwrap_or("tp");
    match (vars.len(), bs_name) {
        (1, "re") => {
            reject(&o.k, "k", "with bs=\"re\"")?;
            reject(&o.m, "m", "with bs=\"re\"")?;
            reject(&o.xt, "xt", "with bs=\"re\"")?;
            reject(&o.by, "by", "with bs=\"re\"")?;
            Ok(Term::RandomEffect {
                group: vars.into_iter().next().unwrap(),
                slope: None,
            })
        }
        (2, "re") => {
            reject(&o.k, "k", "with bs=\"re\"")?;
            reject(&o.m, "m", "with bs=\"re\"")?;
            reject(&o.xt, "xt", "with bs=\"re\"")?;
            reject(&o.by, "by", "with bs=\"re\"")?;
            let mut it = vars.into_iter();
            Ok(Term::RandomEffect {
                group: it.next().unwrap(),
                slope: Some(it.next().unwrap()),
            })
        }
        (2, "fs") => {
            reject(&o.by, "by", "with bs=\"fs\"")?;
            let xt = match &o.xt {
                None => BasisKind::Cr,
                Some((name, pos)) => basis_kind(name, *pos)?,
            };
            let mut it = vars.into_iter();
            Ok(Term::FactorSmooth {
                var: it.next().unwrap(),
                group: it.next().unwrap(),
                xt,
                k: scalar_k(o.k)?,
                m: scalar_m(o.m)?,
            })
        }
        (1, "fs") => Err(FormulaError {
            pos: call_pos,
            message: "bs=\"fs\" needs two arguments: s(variable, group, bs=\"fs\")".into(),
        }),
        (1, _) => {
            reject(&o.xt, "xt", "outside bs=\"fs\"")?;
            let basis = match &o.bs {
                None => BasisKind::Tp,
                Some((name, pos)) => basis_kind(name, *pos)?,
            };
            Ok(Term::Smooth {
                var: vars.into_iter().next().unwrap(),
                basis,
                k: scalar_k(o.k)?,
                m: scalar_m(o.m)?,
                by: o.by.map(|(v, _)| v),
            })
        }
        (2, _) => Err(FormulaError {
            pos: call_pos,
            message: "s() with two variables requires bs=\"re\" or bs=\"fs\"".into(),
        }),
        (0, _) => Err(FormulaError {
            pos: call_pos,
            message: "s() needs at least one variable".into(),
        }),
        (n, _) => Err(FormulaError {
            pos: call_pos,
            message: format!("s() takes at most 2 variables, found {n}"),
        }),
    }
}

fn build_ti(
    vars: Vec<String>,
    options: Vec<CallOption>,
    call_pos: usize,
) -> Result<Term, FormulaError> {
    let o = collect_opts(options)?;
    reject(&o.bs, "bs", "for ti()")?;
    reject(&o.xt, "xt", "for ti()")?;
    reject(&o.m, "m", "for ti()")?;
    if vars.len() != 2 {
        return Err(FormulaError {
            pos: call_pos,
            message: format!("ti() takes exactly 2 variables, found {}", vars.len()),
        });
    }
    let (k1, k2) = match o.k {
        None => (DEFAULT_TI_K, DEFAULT_TI_K),
        Some((OptValue::Pair(a, b), pos)) => {
            if a < 2 || b < 2 {
                return Err(FormulaError {
                    pos,
                    message: "each margin of k=c(k1,k2) must be at least 2".into(),
                });
            }
            (a, b)
        }
        Some((_, pos)) => {
            return Err(FormulaError {
                pos,
                message: "ti() takes per-margin k=c(k1,k2)".into(),
            })
        }
    };
    let mut it = vars.into_iter();
    Ok(Term::TensorInteraction {
        var1: it.next().unwrap(),
        var2: it.next().unwrap(),
        k1,
        k2,
        by: o.by.map(|(v, _)| v),
    })
}
