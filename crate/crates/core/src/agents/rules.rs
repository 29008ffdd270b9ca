//! Priority-tiered IF-THEN rules over named facts.
//!
//! Conditions are small boolean/arithmetic expressions:
//!
//! ```text
//! expr := or
//! or   := and ("||" and)*
//! and  := not ("&&" not)*
//! not  := "!" not | cmp
//! cmp  := sum (("==" | "!=" | "<" | "<=" | ">" | ">=") sum)?
//! sum  := term (("+" | "-") term)*
//! term := unary (("*" | "/") unary)*
//! unary := "-" unary | atom
//! atom := number | "true" | "false" | name | "(" expr ")"
//! ```
//!
//! Names are facts supplied at evaluation time or mode constants. Booleans are
//! 1.0 and 0.0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Action, MajorState};

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("rule {rule}: at byte {pos}: {msg}")]
    Syntax { rule: String, pos: usize, msg: String },
    #[error("rule {rule}: unknown name {name:?}")]
    UnknownName { rule: String, name: String },
    #[error("rule file: {0}")]
    File(String),
    #[error("rule {0} has neither a mode nor an action")]
    EmptyThen(String),
    #[error("duplicate rule id {0}")]
    Duplicate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Not(Box<Expr>),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

fn truth(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl Expr {
    pub fn eval(&self, facts: &Facts) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(n) => facts.get(n),
            Expr::Not(e) => truth(e.eval(facts) == 0.0),
            Expr::Neg(e) => -e.eval(facts),
            Expr::Bin(op, a, b) => {
                let x = a.eval(facts);
                // short-circuit the logical operators
                match op {
                    BinOp::Or => return truth(x != 0.0 || b.eval(facts) != 0.0),
                    BinOp::And => return truth(x != 0.0 && b.eval(facts) != 0.0),
                    _ => {}
                }
                let y = b.eval(facts);
                match op {
                    BinOp::Eq => truth(x == y),
                    BinOp::Ne => truth(x != y),
                    BinOp::Lt => truth(x < y),
                    BinOp::Le => truth(x <= y),
                    BinOp::Gt => truth(x > y),
                    BinOp::Ge => truth(x >= y),
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Or | BinOp::And => unreachable!(),
                }
            }
        }
    }

    fn names<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(n) => out.push(n),
            Expr::Not(e) | Expr::Neg(e) => e.names(out),
            Expr::Bin(_, a, b) => {
                a.names(out);
                b.names(out);
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: impl Into<String>) -> (usize, String) {
        (self.pos, msg.into())
    }

    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(|c: char| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn or(&mut self) -> Result<Expr, (usize, String)> {
        let mut e = self.and()?;
        while self.eat("||") {
            e = Expr::Bin(BinOp::Or, Box::new(e), Box::new(self.and()?));
        }
        Ok(e)
    }

    fn and(&mut self) -> Result<Expr, (usize, String)> {
        let mut e = self.not()?;
        while self.eat("&&") {
            e = Expr::Bin(BinOp::And, Box::new(e), Box::new(self.not()?));
        }
        Ok(e)
    }

    fn not(&mut self) -> Result<Expr, (usize, String)> {
        self.skip_ws();
        if self.src[self.pos..].starts_with('!') && !self.src[self.pos..].starts_with("!=") {
            self.pos += 1;
            return Ok(Expr::Not(Box::new(self.not()?)));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Expr, (usize, String)> {
        let a = self.sum()?;
        const OPS: [(&str, BinOp); 6] = [
            ("==", BinOp::Eq),
            ("!=", BinOp::Ne),
            ("<=", BinOp::Le),
            (">=", BinOp::Ge),
            ("<", BinOp::Lt),
            (">", BinOp::Gt),
        ];
        for (tok, op) in OPS {
            if self.eat(tok) {
                return Ok(Expr::Bin(op, Box::new(a), Box::new(self.sum()?)));
            }
        }
        Ok(a)
    }

    fn sum(&mut self) -> Result<Expr, (usize, String)> {
        let mut e = self.term()?;
        loop {
            let op = if self.eat("+") {
                BinOp::Add
            } else if self.eat("-") {
                BinOp::Sub
            } else {
                return Ok(e);
            };
            e = Expr::Bin(op, Box::new(e), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr, (usize, String)> {
        let mut e = self.unary()?;
        loop {
            let op = if self.eat("*") {
                BinOp::Mul
            } else if self.eat("/") {
                BinOp::Div
            } else {
                return Ok(e);
            };
            e = Expr::Bin(op, Box::new(e), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Expr, (usize, String)> {
        if self.eat("-") {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, (usize, String)> {
        self.skip_ws();
        if self.eat("(") {
            let e = self.or()?;
            if !self.eat(")") {
                return Err(self.err("expected ')'"));
            }
            return Ok(e);
        }
        let rest = &self.src[self.pos..];
        let len = rest.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '.')).unwrap_or(rest.len());
        if len == 0 {
            return Err(self.err("expected a value"));
        }
        let word = &rest[..len];
        let start = self.pos;
        self.pos += len;
        if word.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
            return word.parse::<f64>().map(Expr::Num).map_err(|_| (start, format!("bad number {word:?}")));
        }
        Ok(match word {
            "true" => Expr::Num(1.0),
            "false" => Expr::Num(0.0),
            _ => Expr::Var(word.to_string()),
        })
    }
}

/// Parses a condition; errors carry the byte offset.
pub fn parse_expr(src: &str) -> Result<Expr, (usize, String)> {
    let mut p = Parser { src, pos: 0 };
    let e = p.or()?;
    p.skip_ws();
    if p.pos != src.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(e)
}

/// Named values a condition can read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Facts {
    values: BTreeMap<String, f64>,
}

impl Facts {
    pub fn set(&mut self, name: &str, v: f64) {
        self.values.insert(name.to_string(), v);
    }

    pub fn flag(&mut self, name: &str, v: bool) {
        self.set(name, truth(v));
    }

    /// Mode constants resolve to their index; anything unknown reads as 0.
    pub fn get(&self, name: &str) -> f64 {
        if let Some(v) = self.values.get(name) {
            return *v;
        }
        MajorState::ALL.iter().position(|m| m.name() == name).map_or(0.0, |i| i as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Then {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<MajorState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub id: String,
    pub priority: i32,
    pub when: String,
    pub then: Then,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub spec: RuleSpec,
    pub condition: Expr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RuleFile {
    rule: Vec<RuleSpec>,
}

/// Rules grouped into ascending priority tiers, file order kept within a tier.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    tiers: Vec<(i32, Vec<Rule>)>,
}

pub const DEFAULT_RULES: &str = include_str!("default_rules.toml");

impl RuleSet {
    pub fn from_specs(specs: Vec<RuleSpec>, known: &[&str]) -> Result<Self, RuleError> {
        let mut seen = std::collections::HashSet::new();
        let mut tiers: BTreeMap<i32, Vec<Rule>> = BTreeMap::new();
        for spec in specs {
            if !seen.insert(spec.id.clone()) {
                return Err(RuleError::Duplicate(spec.id));
            }
            if spec.then.mode.is_none() && spec.then.action.is_none() {
                return Err(RuleError::EmptyThen(spec.id));
            }
            let condition =
                parse_expr(&spec.when).map_err(|(pos, msg)| RuleError::Syntax { rule: spec.id.clone(), pos, msg })?;
            let mut names = Vec::new();
            condition.names(&mut names);
            if let Some(bad) =
                names.into_iter().find(|n| !known.contains(n) && !MajorState::ALL.iter().any(|m| m.name() == *n))
            {
                return Err(RuleError::UnknownName { rule: spec.id.clone(), name: bad.to_string() });
            }
            tiers.entry(spec.priority).or_default().push(Rule { spec, condition });
        }
        Ok(Self { tiers: tiers.into_iter().collect() })
    }

    pub fn from_toml_str(text: &str, known: &[&str]) -> Result<Self, RuleError> {
        let file: RuleFile = toml::from_str(text).map_err(|e| RuleError::File(e.to_string()))?;
        Self::from_specs(file.rule, known)
    }

    pub fn specs(&self) -> impl Iterator<Item = &RuleSpec> {
        self.tiers.iter().flat_map(|(_, rs)| rs.iter().map(|r| &r.spec))
    }

    /// Same rules minus those whose id is not kept.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> Self {
        let tiers = self
            .tiers
            .iter()
            .map(|(p, rs)| (*p, rs.iter().filter(|r| keep(&r.spec.id)).cloned().collect::<Vec<_>>()))
            .filter(|(_, rs)| !rs.is_empty())
            .collect();
        Self { tiers }
    }

    pub fn to_toml_string(&self) -> String {
        let file = RuleFile { rule: self.specs().cloned().collect() };
        toml::to_string(&file).expect("rules serialize")
    }

    /// One forward pass: per tier, the first rule whose condition holds fires.
    /// `fire` applies the rule and may update the facts seen by later tiers.
    pub fn run(&self, facts: &mut Facts, mut fire: impl FnMut(&RuleSpec, &mut Facts)) -> Vec<String> {
        let mut fired = Vec::new();
        for (_, rules) in &self.tiers {
            if let Some(rule) = rules.iter().find(|r| r.condition.eval(facts) != 0.0) {
                fire(&rule.spec, facts);
                fired.push(rule.spec.id.clone());
            }
        }
        fired
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn facts(pairs: &[(&str, f64)]) -> Facts {
        let mut f = Facts::default();
        for (k, v) in pairs {
            f.set(k, *v);
        }
        f
    }

    #[test]
    fn expression_semantics() {
        let f = facts(&[("a", 3.0), ("b", 0.0), ("temp", 181.0)]);
        let cases = [
            ("a > 2 && !b", 1.0),
            ("a + 1 * 2 == 5", 1.0),
            ("(a + 1) * 2", 8.0),
            ("-a < 0 || b", 1.0),
            ("temp > 180 && a >= 3", 1.0),
            ("b || false", 0.0),
            ("a != 3", 0.0),
            ("!(a <= 2)", 1.0),
            ("HandleTemperatureTrouble", 3.0),
        ];
        for (src, want) in cases {
            assert_eq!(parse_expr(src).unwrap().eval(&f), want, "{src}");
        }
    }

    #[test]
    fn syntax_errors_have_positions() {
        assert_eq!(parse_expr("a &&").unwrap_err().0, 4);
        assert_eq!(parse_expr("(a").unwrap_err().0, 2);
        assert_eq!(parse_expr("a b").unwrap_err().0, 2);
    }

    #[test]
    fn tiers_first_match_and_forward_facts() {
        let text = r#"
[[rule]]
id = "x"
priority = 0
when = "a > 1"
then = { mode = "HandleTemperatureTrouble" }

[[rule]]
id = "y"
priority = 0
when = "true"
then = { mode = "SteadyStateOptimization" }

[[rule]]
id = "z"
priority = 1
when = "mode == HandleTemperatureTrouble"
then = { action = "handle_stator_hot" }
"#;
        let rs = RuleSet::from_toml_str(text, &["a", "mode"]).unwrap();
        let mut f = facts(&[("a", 2.0)]);
        let fired = rs.run(&mut f, |spec, facts| {
            if let Some(m) = spec.then.mode {
                facts.set("mode", m.index() as f64);
            }
        });
        assert_eq!(fired, vec!["x", "z"]);
        let mut f = facts(&[("a", 0.0)]);
        let fired = rs.run(&mut f, |spec, facts| {
            if let Some(m) = spec.then.mode {
                facts.set("mode", m.index() as f64);
            }
        });
        assert_eq!(fired, vec!["y"]);
        assert!(RuleSet::from_toml_str(text, &["a"]).is_err());
        let back = RuleSet::from_toml_str(&rs.to_toml_string(), &["a", "mode"]).unwrap();
        assert_eq!(back, rs);
    }
}
