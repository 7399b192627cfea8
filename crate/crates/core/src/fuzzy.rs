//! Fuzzy truth values, membership functions and weighted linguistic
//! IF-THEN rules.
//!
//! Connectives follow the min/max family: NOT t = 1 - t, AND = min, OR = max
//! and implication = max(1 - a, b). A rule fires at
//! `min(antecedent truth, weight)`; `classify` takes the strongest rule whose
//! consequent is [`THREAT`] and compares it with a drop threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Consequent label that `classify` treats as an intrusion.
pub const THREAT: &str = "threat";

/// Drop threshold used when none is configured.
pub const DEFAULT_DROP_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FuzzyError {
    #[error("truth value {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("trapezoid points must satisfy a <= b <= c <= d, got ({0}, {1}, {2}, {3})")]
    BadTrapezoid(f64, f64, f64, f64),
    #[error("missing input variable {0:?}")]
    MissingInput(String),
    #[error("variable {0:?} is not declared in the rule's input schema")]
    UndeclaredVariable(String),
    #[error("unknown term {term:?} for variable {variable:?}")]
    UnknownTerm { variable: String, term: String },
    #[error("cannot parse rule expression {expr:?}: {reason}")]
    Syntax { expr: String, reason: String },
    #[error("rule set is empty")]
    EmptyRuleSet,
}

/// A degree of truth in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TruthValue(f64);

impl TruthValue {
    pub const ZERO: TruthValue = TruthValue(0.0);
    pub const ONE: TruthValue = TruthValue(1.0);

    pub fn new(value: f64) -> Result<Self, FuzzyError> {
        if (0.0..=1.0).contains(&value) {
            Ok(TruthValue(value))
        } else {
            Err(FuzzyError::OutOfRange(value))
        }
    }

    /// Clamps into `[0, 1]`; NaN maps to 0.
    pub fn saturating(value: f64) -> Self {
        if value.is_nan() {
            TruthValue(0.0)
        } else {
            TruthValue(value.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TruthValue {
    type Error = FuzzyError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        TruthValue::new(value)
    }
}

impl From<TruthValue> for f64 {
    fn from(t: TruthValue) -> f64 {
        t.0
    }
}

impl fmt::Display for TruthValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn negation(t: TruthValue) -> TruthValue {
    TruthValue(1.0 - t.0)
}

pub fn conjunction(a: TruthValue, b: TruthValue) -> TruthValue {
    TruthValue(a.0.min(b.0))
}

pub fn disjunction(a: TruthValue, b: TruthValue) -> TruthValue {
    TruthValue(a.0.max(b.0))
}

pub fn implication(a: TruthValue, b: TruthValue) -> TruthValue {
    disjunction(negation(a), b)
}

/// Maps a crisp measurement to a truth value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembershipFunction {
    /// 1 when `x > threshold`, else 0.
    CrispStep(f64),
    /// 0 outside `[a, d]`, 1 on `[b, c]`, linear ramps in between. `c` and
    /// `d` may be `+inf` for an open shoulder.
    Trapezoid([f64; 4]),
}

impl MembershipFunction {
    pub fn trapezoid(a: f64, b: f64, c: f64, d: f64) -> Result<Self, FuzzyError> {
        let ok = [a, b, c, d].iter().all(|p| !p.is_nan()) && a <= b && b <= c && c <= d;
        if ok {
            Ok(MembershipFunction::Trapezoid([a, b, c, d]))
        } else {
            Err(FuzzyError::BadTrapezoid(a, b, c, d))
        }
    }

    pub fn validate(&self) -> Result<(), FuzzyError> {
        match *self {
            MembershipFunction::CrispStep(t) if t.is_nan() => Err(FuzzyError::OutOfRange(t)),
            MembershipFunction::CrispStep(_) => Ok(()),
            MembershipFunction::Trapezoid([a, b, c, d]) => Self::trapezoid(a, b, c, d).map(|_| ()),
        }
    }

    pub fn evaluate(&self, x: f64) -> TruthValue {
        evaluate_membership(self, x)
    }
}

pub fn evaluate_membership(mf: &MembershipFunction, x: f64) -> TruthValue {
    match *mf {
        MembershipFunction::CrispStep(threshold) => {
            if x > threshold {
                TruthValue::ONE
            } else {
                TruthValue::ZERO
            }
        }
        MembershipFunction::Trapezoid([a, b, c, d]) => {
            if x.is_nan() {
                TruthValue::ZERO
            } else if x >= b && x <= c {
                TruthValue::ONE
            } else if x <= a || x >= d {
                TruthValue::ZERO
            } else if x < b {
                TruthValue::saturating((x - a) / (b - a))
            } else {
                TruthValue::saturating((d - x) / (d - c))
            }
        }
    }
}

/// Antecedent expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Antecedent {
    Is {
        variable: String,
        term: String,
        mf: MembershipFunction,
    },
    Not(Box<Antecedent>),
    And(Box<Antecedent>, Box<Antecedent>),
    Or(Box<Antecedent>, Box<Antecedent>),
}

impl Antecedent {
    pub fn is(variable: &str, term: &str, mf: MembershipFunction) -> Self {
        Antecedent::Is {
            variable: variable.to_string(),
            term: term.to_string(),
            mf,
        }
    }

    pub fn and(self, other: Antecedent) -> Self {
        Antecedent::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Antecedent) -> Self {
        Antecedent::Or(Box::new(self), Box::new(other))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        Antecedent::Not(Box::new(self))
    }

    pub fn variables(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_variables(&mut out);
        out
    }

    fn collect_variables<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Antecedent::Is { variable, .. } => {
                out.insert(variable.as_str());
            }
            Antecedent::Not(inner) => inner.collect_variables(out),
            Antecedent::And(l, r) | Antecedent::Or(l, r) => {
                l.collect_variables(out);
                r.collect_variables(out);
            }
        }
    }

    pub fn truth(&self, inputs: &Inputs) -> Result<TruthValue, FuzzyError> {
        Ok(match self {
            Antecedent::Is { variable, mf, .. } => {
                let x = inputs
                    .get(variable)
                    .ok_or_else(|| FuzzyError::MissingInput(variable.clone()))?;
                mf.evaluate(*x)
            }
            Antecedent::Not(inner) => negation(inner.truth(inputs)?),
            Antecedent::And(l, r) => conjunction(l.truth(inputs)?, r.truth(inputs)?),
            Antecedent::Or(l, r) => disjunction(l.truth(inputs)?, r.truth(inputs)?),
        })
    }

    /// Parses `var IS term` clauses joined by `AND`, `OR`, `NOT` and
    /// parentheses (keywords are case-insensitive; AND binds tighter than OR).
    pub fn parse(expr: &str, terms: &TermLibrary) -> Result<Self, FuzzyError> {
        let tokens = tokenize(expr);
        let mut parser = ExprParser {
            expr,
            tokens: &tokens,
            pos: 0,
            terms,
        };
        let tree = parser.parse_or()?;
        if parser.pos != tokens.len() {
            return Err(parser.error(format!("unexpected token {:?}", tokens[parser.pos])));
        }
        Ok(tree)
    }
}

impl fmt::Display for Antecedent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Antecedent::Is { variable, term, .. } => write!(f, "{variable} IS {term}"),
            Antecedent::Not(inner) => write!(f, "NOT ({inner})"),
            Antecedent::And(l, r) => write!(f, "({l} AND {r})"),
            Antecedent::Or(l, r) => write!(f, "({l} OR {r})"),
        }
    }
}

fn tokenize(expr: &str) -> Vec<String> {
    expr.replace('(', " ( ")
        .replace(')', " ) ")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

struct ExprParser<'a> {
    expr: &'a str,
    tokens: &'a [String],
    pos: usize,
    terms: &'a TermLibrary,
}

impl ExprParser<'_> {
    fn error(&self, reason: String) -> FuzzyError {
        FuzzyError::Syntax {
            expr: self.expr.to_string(),
            reason,
        }
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        self.tokens.get(self.pos).is_some_and(|t| t.eq_ignore_ascii_case(kw))
    }

    fn next(&mut self) -> Result<&str, FuzzyError> {
        let token = self
            .tokens
            .get(self.pos)
            .ok_or_else(|| self.error("unexpected end of expression".into()))?;
        self.pos += 1;
        Ok(token)
    }

    fn parse_or(&mut self) -> Result<Antecedent, FuzzyError> {
        let mut left = self.parse_and()?;
        while self.peek_keyword("OR") {
            self.pos += 1;
            left = left.or(self.parse_and()?);
        }
        Ok(left)
    }

    fn parse_and(&mut self) -> Result<Antecedent, FuzzyError> {
        let mut left = self.parse_unary()?;
        while self.peek_keyword("AND") {
            self.pos += 1;
            left = left.and(self.parse_unary()?);
        }
        Ok(left)
    }

    fn parse_unary(&mut self) -> Result<Antecedent, FuzzyError> {
        if self.peek_keyword("NOT") {
            self.pos += 1;
            return Ok(self.parse_unary()?.not());
        }
        if self.peek_keyword("(") {
            self.pos += 1;
            let inner = self.parse_or()?;
            if !self.peek_keyword(")") {
                return Err(self.error("missing ')'".into()));
            }
            self.pos += 1;
            return Ok(inner);
        }
        let variable = self.next()?.to_string();
        let is = self.next()?.to_string();
        if !is.eq_ignore_ascii_case("IS") {
            return Err(self.error(format!("expected IS after {variable:?}, found {is:?}")));
        }
        let term = self.next()?.to_string();
        let mf = self.terms.get(&variable, &term)?;
        Ok(Antecedent::Is { variable, term, mf })
    }
}

/// Named membership functions, keyed by variable then term.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TermLibrary {
    terms: BTreeMap<String, BTreeMap<String, MembershipFunction>>,
}

impl TermLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, variable: &str, term: &str, mf: MembershipFunction) {
        self.terms
            .entry(variable.to_string())
            .or_default()
            .insert(term.to_string(), mf);
    }

    pub fn get(&self, variable: &str, term: &str) -> Result<MembershipFunction, FuzzyError> {
        self.terms
            .get(variable)
            .and_then(|t| t.get(term))
            .copied()
            .ok_or_else(|| FuzzyError::UnknownTerm {
                variable: variable.into(),
                term: term.into(),
            })
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.terms.keys().map(String::as_str)
    }
}

/// Crisp input values by variable name.
pub type Inputs = BTreeMap<String, f64>;

/// `IF antecedent THEN consequent [weight]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinguisticRule {
    schema: BTreeSet<String>,
    antecedent: Antecedent,
    consequent: String,
    weight: TruthValue,
}

impl LinguisticRule {
    /// Fails if the antecedent references a variable missing from `schema`.
    pub fn new<S: AsRef<str>>(
        schema: impl IntoIterator<Item = S>,
        antecedent: Antecedent,
        consequent: &str,
        weight: TruthValue,
    ) -> Result<Self, FuzzyError> {
        let schema: BTreeSet<String> = schema.into_iter().map(|s| s.as_ref().to_string()).collect();
        if let Some(v) = antecedent.variables().into_iter().find(|v| !schema.contains(*v)) {
            return Err(FuzzyError::UndeclaredVariable(v.to_string()));
        }
        Ok(LinguisticRule {
            schema,
            antecedent,
            consequent: consequent.to_string(),
            weight,
        })
    }

    pub fn antecedent(&self) -> &Antecedent {
        &self.antecedent
    }

    pub fn consequent(&self) -> &str {
        &self.consequent
    }

    pub fn weight(&self) -> TruthValue {
        self.weight
    }

    pub fn schema(&self) -> impl Iterator<Item = &str> {
        self.schema.iter().map(String::as_str)
    }
}

impl fmt::Display for LinguisticRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IF {} THEN {} [{}]", self.antecedent, self.consequent, self.weight)
    }
}

pub fn fire_rule(rule: &LinguisticRule, inputs: &Inputs) -> Result<(String, TruthValue), FuzzyError> {
    let truth = rule.antecedent.truth(inputs)?;
    Ok((rule.consequent.clone(), conjunction(truth, rule.weight)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterAction {
    Drop,
    Accept,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: FilterAction,
    pub degree: TruthValue,
    pub winning_label: Option<String>,
}

/// Fires every rule and drops when the strongest threat rule reaches
/// `drop_threshold`.
pub fn classify(rules: &[LinguisticRule], inputs: &Inputs, drop_threshold: TruthValue) -> Result<Decision, FuzzyError> {
    if rules.is_empty() {
        return Err(FuzzyError::EmptyRuleSet);
    }
    let mut best: Option<(String, TruthValue)> = None;
    for rule in rules {
        let (label, degree) = fire_rule(rule, inputs)?;
        if label == THREAT && !matches!(&best, Some((_, d)) if degree <= *d) {
            best = Some((label, degree));
        }
    }
    let degree = best.as_ref().map_or(TruthValue::ZERO, |(_, d)| *d);
    let action = if degree > TruthValue::ZERO && degree >= drop_threshold {
        FilterAction::Drop
    } else {
        FilterAction::Accept
    };
    let winning_label = best.filter(|(_, d)| *d > TruthValue::ZERO).map(|(l, _)| l);
    Ok(Decision {
        action,
        degree,
        winning_label,
    })
}

/// Rule text as stored in configuration: `when` is an antecedent expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub when: String,
    #[serde(default = "default_consequent")]
    pub then: String,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_consequent() -> String {
    THREAT.to_string()
}

fn default_weight() -> f64 {
    1.0
}

impl RuleSpec {
    pub fn new(when: &str, then: &str, weight: f64) -> Self {
        RuleSpec {
            when: when.to_string(),
            then: then.to_string(),
            weight,
        }
    }

    pub fn compile(&self, terms: &TermLibrary) -> Result<LinguisticRule, FuzzyError> {
        let antecedent = Antecedent::parse(&self.when, terms)?;
        LinguisticRule::new(terms.variables(), antecedent, &self.then, TruthValue::new(self.weight)?)
    }
}
