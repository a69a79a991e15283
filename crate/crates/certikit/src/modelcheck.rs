//! Symbolic CTL model checking with trace recording.
//!
//! A model is a flattened boolean transition system: declared state
//! variables, an initial-state predicate, a transition relation over
//! current and primed variables, and named atomic propositions. The
//! checker evaluates CTL formulas bottom-up with BDD fixpoints, writing
//! every decision-diagram call into a [`Trace`] as it goes, so the whole
//! computation can later be handed to the certification protocol. Loop
//! exits become equivalence assertions (one "not equivalent" per
//! continuing iteration, one "equivalent" on exit) and the verdict
//! becomes a final assertion that `init ∧ ¬sem(φ)` is the empty set —
//! the answer is `true` exactly when every initial state satisfies φ.
//!
//! Variable order interleaves current and primed copies (state variable
//! `i` becomes BDD variables `2i` and `2i+1`), which keeps the renames
//! performed by the predecessor computation order-preserving.
//!
//! [`explicit_oracle`] answers the same questions by brute-force state
//! enumeration and is deliberately independent of the BDD engine.

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::bdd::{BoolOp, Engine, NodeRef};
use crate::circuit::{Formula, Step, Trace};

/// A flattened boolean transition system plus the properties to check.
#[derive(Clone, Debug)]
pub struct Model {
    /// State variables in declaration order; variable `i` is BDD variable
    /// `2i`, its primed twin `2i+1`.
    pub vars: Vec<String>,
    /// Initial-state predicate over current variables.
    pub init: Formula,
    /// Transition relation over current and primed variables.
    pub trans: Formula,
    /// Named atomic propositions over current variables.
    pub labels: Vec<(String, Formula)>,
    /// Properties listed in the model file, in order.
    pub specs: Vec<Spec>,
}

/// One `CTLSPEC` line.
#[derive(Clone, Debug)]
pub struct Spec {
    pub formula: CtlFormula,
    /// Line of the model file it came from.
    pub line: usize,
}

/// A CTL formula. Universal operators and the derived boolean
/// connectives are rewritten into this core at parse time, so evaluation
/// only ever sees existential temporal operators.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CtlFormula {
    Atom(String),
    Not(Box<CtlFormula>),
    And(Box<CtlFormula>, Box<CtlFormula>),
    Or(Box<CtlFormula>, Box<CtlFormula>),
    Ex(Box<CtlFormula>),
    Ef(Box<CtlFormula>),
    Eg(Box<CtlFormula>),
    Eu(Box<CtlFormula>, Box<CtlFormula>),
}

impl CtlFormula {
    fn not(f: CtlFormula) -> CtlFormula {
        CtlFormula::Not(Box::new(f))
    }

    fn and(a: CtlFormula, b: CtlFormula) -> CtlFormula {
        CtlFormula::And(Box::new(a), Box::new(b))
    }

    fn or(a: CtlFormula, b: CtlFormula) -> CtlFormula {
        CtlFormula::Or(Box::new(a), Box::new(b))
    }

    fn atoms<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            CtlFormula::Atom(n) => out.push(n),
            CtlFormula::Not(f) | CtlFormula::Ex(f) | CtlFormula::Ef(f) | CtlFormula::Eg(f) => {
                f.atoms(out)
            }
            CtlFormula::And(a, b) | CtlFormula::Or(a, b) | CtlFormula::Eu(a, b) => {
                a.atoms(out);
                b.atoms(out);
            }
        }
    }
}

impl fmt::Display for CtlFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CtlFormula::Atom(n) => write!(f, "{n}"),
            CtlFormula::Not(x) => write!(f, "!{x}"),
            CtlFormula::And(a, b) => write!(f, "({a} & {b})"),
            CtlFormula::Or(a, b) => write!(f, "({a} | {b})"),
            CtlFormula::Ex(x) => write!(f, "EX {x}"),
            CtlFormula::Ef(x) => write!(f, "EF {x}"),
            CtlFormula::Eg(x) => write!(f, "EG {x}"),
            CtlFormula::Eu(a, b) => write!(f, "E [{a} U {b}]"),
        }
    }
}

#[derive(Error, Debug, PartialEq, Eq)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: undeclared variable `{name}`")]
    Undeclared { line: usize, name: String },
    #[error("line {line}: `next({name})` is only allowed in TRANS")]
    PrimedOutsideTrans { line: usize, name: String },
    #[error("line {line}: duplicate declaration of `{name}`")]
    Duplicate { line: usize, name: String },
    #[error("line {line}: `{name}` is a reserved name")]
    Reserved { line: usize, name: String },
    #[error("line {line}: unknown atomic proposition `{name}`")]
    UnknownAtom { line: usize, name: String },
    #[error("model declares no variables")]
    NoVariables,
    #[error("state space too large to enumerate: {bits} state bits")]
    StateSpaceTooLarge { bits: usize },
}

const RESERVED: &[&str] = &[
    "VAR", "INIT", "TRANS", "LABEL", "CTLSPEC", "TRUE", "FALSE", "next", "E", "A", "U", "EX",
    "EF", "EG", "AX", "AF", "AG", "init", "trans", "true", "false",
];

// ---------------------------------------------------------------------
// Lexing and parsing
// ---------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Sym(&'static str),
}

#[derive(Clone, Debug)]
struct Lexed {
    line: usize,
    tok: Tok,
}

fn lex(text: &str) -> Result<Vec<Lexed>, ModelError> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let code = raw.split("--").next().unwrap_or("");
        let bytes = code.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Lexed {
                    line,
                    tok: Tok::Ident(code[start..i].to_string()),
                });
                continue;
            }
            let two = |a: u8, b: u8| i + 1 < bytes.len() && bytes[i] == a && bytes[i + 1] == b;
            let three = |a: u8, b: u8, c: u8| {
                i + 2 < bytes.len() && bytes[i] == a && bytes[i + 1] == b && bytes[i + 2] == c
            };
            let (sym, width): (&'static str, usize) = if three(b'<', b'-', b'>') {
                ("<->", 3)
            } else if two(b'-', b'>') {
                ("->", 2)
            } else if two(b':', b'=') {
                (":=", 2)
            } else {
                match c {
                    ';' => (";", 1),
                    '(' => ("(", 1),
                    ')' => (")", 1),
                    '[' => ("[", 1),
                    ']' => ("]", 1),
                    '!' => ("!", 1),
                    '&' => ("&", 1),
                    '|' => ("|", 1),
                    '^' => ("^", 1),
                    _ => {
                        return Err(ModelError::Syntax {
                            line,
                            message: format!("unexpected character `{c}`"),
                        })
                    }
                }
            };
            out.push(Lexed {
                line,
                tok: Tok::Sym(sym),
            });
            i += width;
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [Lexed],
    pos: usize,
    /// Declared state variables, visible to everything parsed after them.
    vars: Vec<String>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|l| &l.tok)
    }

    fn line(&self) -> usize {
        self.toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map(|l| l.line)
            .unwrap_or(0)
    }

    fn bump(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.pos).map(|l| &l.tok);
        self.pos += 1;
        t
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(k)) if *k == s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ModelError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.syntax(format!("expected `{s}`")))
        }
    }

    fn expect_ident(&mut self) -> Result<(String, usize), ModelError> {
        let line = self.line();
        match self.bump() {
            Some(Tok::Ident(n)) => Ok((n.clone(), line)),
            _ => Err(ModelError::Syntax {
                line,
                message: "expected an identifier".to_string(),
            }),
        }
    }

    fn syntax(&self, message: String) -> ModelError {
        ModelError::Syntax {
            line: self.line(),
            message,
        }
    }

    fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == name)
    }

    // ----- boolean expressions (over model variables) -----

    fn bexpr(&mut self, primed_ok: bool) -> Result<Formula, ModelError> {
        self.bexpr_iff(primed_ok)
    }

    fn bexpr_iff(&mut self, primed_ok: bool) -> Result<Formula, ModelError> {
        let mut lhs = self.bexpr_imp(primed_ok)?;
        while self.eat_sym("<->") {
            let rhs = self.bexpr_imp(primed_ok)?;
            lhs = Formula::Bin(BoolOp::XNOR, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn bexpr_imp(&mut self, primed_ok: bool) -> Result<Formula, ModelError> {
        let lhs = self.bexpr_or(primed_ok)?;
        if self.eat_sym("->") {
            let rhs = self.bexpr_imp(primed_ok)?;
            return Ok(Formula::Bin(BoolOp::IMP, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn bexpr_or(&mut self, primed_ok: bool) -> Result<Formula, ModelError> {
        let mut lhs = self.bexpr_xor(primed_ok)?;
        while self.eat_sym("|") {
            let rhs = self.bexpr_xor(primed_ok)?;
            lhs = Formula::Bin(BoolOp::OR, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn bexpr_xor(&mut self, primed_ok: bool) -> Result<Formula, ModelError> {
        let mut lhs = self.bexpr_and(primed_ok)?;
        while self.eat_sym("^") {
            let rhs = self.bexpr_and(primed_ok)?;
            lhs = Formula::Bin(BoolOp::XOR, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn bexpr_and(&mut self, primed_ok: bool) -> Result<Formula, ModelError> {
        let mut lhs = self.bexpr_unary(primed_ok)?;
        while self.eat_sym("&") {
            let rhs = self.bexpr_unary(primed_ok)?;
            lhs = Formula::Bin(BoolOp::AND, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn bexpr_unary(&mut self, primed_ok: bool) -> Result<Formula, ModelError> {
        if self.eat_sym("!") {
            return Ok(Formula::Not(Box::new(self.bexpr_unary(primed_ok)?)));
        }
        if self.eat_sym("(") {
            let inner = self.bexpr(primed_ok)?;
            self.expect_sym(")")?;
            return Ok(inner);
        }
        let (name, line) = self.expect_ident()?;
        match name.as_str() {
            "TRUE" => Ok(Formula::Const(true)),
            "FALSE" => Ok(Formula::Const(false)),
            "next" => {
                self.expect_sym("(")?;
                let (var, vline) = self.expect_ident()?;
                self.expect_sym(")")?;
                let Some(i) = self.var_index(&var) else {
                    return Err(ModelError::Undeclared {
                        line: vline,
                        name: var,
                    });
                };
                if !primed_ok {
                    return Err(ModelError::PrimedOutsideTrans {
                        line: vline,
                        name: var,
                    });
                }
                Ok(Formula::Var(2 * i as u32 + 1))
            }
            _ => match self.var_index(&name) {
                Some(i) => Ok(Formula::Var(2 * i as u32)),
                None => Err(ModelError::Undeclared { line, name }),
            },
        }
    }

    // ----- CTL formulas -----

    fn ctl(&mut self) -> Result<CtlFormula, ModelError> {
        self.ctl_iff()
    }

    fn ctl_iff(&mut self) -> Result<CtlFormula, ModelError> {
        let mut lhs = self.ctl_imp()?;
        while self.eat_sym("<->") {
            let rhs = self.ctl_imp()?;
            lhs = CtlFormula::or(
                CtlFormula::and(lhs.clone(), rhs.clone()),
                CtlFormula::and(CtlFormula::not(lhs), CtlFormula::not(rhs)),
            );
        }
        Ok(lhs)
    }

    fn ctl_imp(&mut self) -> Result<CtlFormula, ModelError> {
        let lhs = self.ctl_or()?;
        if self.eat_sym("->") {
            let rhs = self.ctl_imp()?;
            return Ok(CtlFormula::or(CtlFormula::not(lhs), rhs));
        }
        Ok(lhs)
    }

    fn ctl_or(&mut self) -> Result<CtlFormula, ModelError> {
        let mut lhs = self.ctl_xor()?;
        while self.eat_sym("|") {
            let rhs = self.ctl_xor()?;
            lhs = CtlFormula::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn ctl_xor(&mut self) -> Result<CtlFormula, ModelError> {
        let mut lhs = self.ctl_and()?;
        while self.eat_sym("^") {
            let rhs = self.ctl_and()?;
            lhs = CtlFormula::or(
                CtlFormula::and(lhs.clone(), CtlFormula::not(rhs.clone())),
                CtlFormula::and(CtlFormula::not(lhs), rhs),
            );
        }
        Ok(lhs)
    }

    fn ctl_and(&mut self) -> Result<CtlFormula, ModelError> {
        let mut lhs = self.ctl_unary()?;
        while self.eat_sym("&") {
            let rhs = self.ctl_unary()?;
            lhs = CtlFormula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn ctl_unary(&mut self) -> Result<CtlFormula, ModelError> {
        if self.eat_sym("!") {
            return Ok(CtlFormula::not(self.ctl_unary()?));
        }
        if let Some(Tok::Ident(name)) = self.peek() {
            let op = name.clone();
            match op.as_str() {
                "EX" | "EF" | "EG" | "AX" | "AF" | "AG" => {
                    self.pos += 1;
                    let inner = self.ctl_unary()?;
                    return Ok(match op.as_str() {
                        "EX" => CtlFormula::Ex(Box::new(inner)),
                        "EF" => CtlFormula::Ef(Box::new(inner)),
                        "EG" => CtlFormula::Eg(Box::new(inner)),
                        // Universal operators via their existential duals.
                        "AX" => CtlFormula::not(CtlFormula::Ex(Box::new(CtlFormula::not(inner)))),
                        "AF" => CtlFormula::not(CtlFormula::Eg(Box::new(CtlFormula::not(inner)))),
                        _ => CtlFormula::not(CtlFormula::Ef(Box::new(CtlFormula::not(inner)))),
                    });
                }
                "E" | "A" => {
                    self.pos += 1;
                    self.expect_sym("[")?;
                    let lhs = self.ctl()?;
                    let (u, _) = self.expect_ident()?;
                    if u != "U" {
                        return Err(self.syntax("expected `U`".to_string()));
                    }
                    let rhs = self.ctl()?;
                    self.expect_sym("]")?;
                    return Ok(if op == "E" {
                        CtlFormula::Eu(Box::new(lhs), Box::new(rhs))
                    } else {
                        // A[φ U ψ] = ¬(E[¬ψ U ¬φ∧¬ψ] ∨ EG ¬ψ)
                        let np = CtlFormula::not(lhs);
                        let nq = CtlFormula::not(rhs);
                        CtlFormula::not(CtlFormula::or(
                            CtlFormula::Eu(
                                Box::new(nq.clone()),
                                Box::new(CtlFormula::and(np, nq.clone())),
                            ),
                            CtlFormula::Eg(Box::new(nq)),
                        ))
                    });
                }
                _ => {}
            }
        }
        self.ctl_primary()
    }

    fn ctl_primary(&mut self) -> Result<CtlFormula, ModelError> {
        if self.eat_sym("(") {
            let inner = self.ctl()?;
            self.expect_sym(")")?;
            return Ok(inner);
        }
        let (name, _) = self.expect_ident()?;
        Ok(CtlFormula::Atom(name))
    }
}

fn conjoin(parts: Vec<Formula>) -> Formula {
    let mut it = parts.into_iter();
    let Some(first) = it.next() else {
        return Formula::Const(true);
    };
    it.fold(first, |acc, f| {
        Formula::Bin(BoolOp::AND, Box::new(acc), Box::new(f))
    })
}

/// Parses a model file: `VAR`, `INIT`, `TRANS`, `LABEL`, and `CTLSPEC`
/// statements, each ending in `;`, with `--` comments. Repeated `INIT`
/// and `TRANS` sections are conjoined.
pub fn parse_model(text: &str) -> Result<Model, ModelError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        vars: Vec::new(),
    };
    let mut inits = Vec::new();
    let mut transs = Vec::new();
    let mut labels: Vec<(String, Formula)> = Vec::new();
    let mut specs = Vec::new();

    while p.peek().is_some() {
        let (head, line) = p.expect_ident()?;
        match head.as_str() {
            "VAR" => {
                let (name, nline) = p.expect_ident()?;
                if RESERVED.contains(&name.as_str()) {
                    return Err(ModelError::Reserved { line: nline, name });
                }
                if p.vars.contains(&name) || labels.iter().any(|(l, _)| *l == name) {
                    return Err(ModelError::Duplicate { line: nline, name });
                }
                p.vars.push(name);
                p.expect_sym(";")?;
            }
            "INIT" => {
                inits.push(p.bexpr(false)?);
                p.expect_sym(";")?;
            }
            "TRANS" => {
                transs.push(p.bexpr(true)?);
                p.expect_sym(";")?;
            }
            "LABEL" => {
                let (name, nline) = p.expect_ident()?;
                if RESERVED.contains(&name.as_str()) {
                    return Err(ModelError::Reserved { line: nline, name });
                }
                if p.vars.contains(&name) || labels.iter().any(|(l, _)| *l == name) {
                    return Err(ModelError::Duplicate { line: nline, name });
                }
                p.expect_sym(":=")?;
                let f = p.bexpr(false)?;
                p.expect_sym(";")?;
                labels.push((name, f));
            }
            "CTLSPEC" => {
                let formula = p.ctl()?;
                p.expect_sym(";")?;
                specs.push(Spec { formula, line });
            }
            _ => {
                return Err(ModelError::Syntax {
                    line,
                    message: format!("expected a statement keyword, found `{head}`"),
                })
            }
        }
    }

    if p.vars.is_empty() {
        return Err(ModelError::NoVariables);
    }

    let model = Model {
        vars: p.vars,
        init: conjoin(inits),
        trans: conjoin(transs),
        labels,
        specs,
    };

    // Every atom must resolve to a label or a variable.
    for spec in &model.specs {
        let mut atoms = Vec::new();
        spec.formula.atoms(&mut atoms);
        for a in atoms {
            if !model.labels.iter().any(|(l, _)| l == a) && !model.vars.iter().any(|v| v == a) {
                return Err(ModelError::UnknownAtom {
                    line: spec.line,
                    name: a.to_string(),
                });
            }
        }
    }

    Ok(model)
}

/// Parses a standalone CTL formula (atoms stay unresolved).
pub fn parse_ctl(text: &str) -> Result<CtlFormula, ModelError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        vars: Vec::new(),
    };
    let f = p.ctl()?;
    p.eat_sym(";");
    if p.peek().is_some() {
        return Err(p.syntax("trailing input after formula".to_string()));
    }
    Ok(f)
}

impl Model {
    pub fn n_state_vars(&self) -> usize {
        self.vars.len()
    }

    /// Trace variable count: current and primed copy per state variable.
    pub fn n_trace_vars(&self) -> u32 {
        2 * self.vars.len() as u32
    }

    /// The named functions the trace's steps may reference: the model
    /// sections, the labels, and one single-variable macro per state
    /// variable so formulas can use variables as atoms directly.
    pub fn macro_inputs(&self) -> Vec<(String, Formula)> {
        let mut out = vec![
            ("init".to_string(), self.init.clone()),
            ("trans".to_string(), self.trans.clone()),
        ];
        for (name, f) in &self.labels {
            out.push((name.clone(), f.clone()));
        }
        for (i, name) in self.vars.iter().enumerate() {
            out.push((name.clone(), Formula::Var(2 * i as u32)));
        }
        out
    }
}

// ---------------------------------------------------------------------
// The recording solver
// ---------------------------------------------------------------------

/// A named BDD inside a solve: the node plus the trace name that
/// evaluates to it.
#[derive(Clone, Debug)]
pub struct Value {
    pub node: NodeRef,
    pub name: String,
}

/// Evaluates CTL formulas on the BDD engine while recording every engine
/// call as a trace step.
pub struct Solver<'m> {
    model: &'m Model,
    engine: Engine,
    steps: Vec<Step>,
    macros: HashMap<String, NodeRef>,
    used_names: HashSet<String>,
    counter: usize,
}

fn formula_bdd(engine: &mut Engine, f: &Formula) -> NodeRef {
    match f {
        Formula::Const(b) => engine.constant(*b),
        Formula::Var(x) => engine.mk_var(*x),
        Formula::Not(g) => {
            let c = formula_bdd(engine, g);
            engine.negate(c)
        }
        Formula::Bin(op, a, b) => {
            let x = formula_bdd(engine, a);
            let y = formula_bdd(engine, b);
            engine.apply(x, y, *op)
        }
    }
}

impl<'m> Solver<'m> {
    pub fn new(model: &'m Model) -> Solver<'m> {
        let mut engine = Engine::new();
        let mut macros = HashMap::new();
        let mut used_names = HashSet::new();
        used_names.insert("false".to_string());
        used_names.insert("true".to_string());
        for (name, f) in model.macro_inputs() {
            let node = formula_bdd(&mut engine, &f);
            used_names.insert(name.clone());
            macros.insert(name, node);
        }
        Solver {
            model,
            engine,
            steps: Vec::new(),
            macros,
            used_names,
            counter: 0,
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn fresh(&mut self) -> String {
        loop {
            let name = format!("t{}", self.counter);
            self.counter += 1;
            if self.used_names.insert(name.clone()) {
                return name;
            }
        }
    }

    fn named(&self, name: &str) -> Value {
        Value {
            node: self.macros[name],
            name: name.to_string(),
        }
    }

    fn apply(&mut self, a: &Value, b: &Value, op: BoolOp) -> Value {
        let node = self.engine.apply(a.node, b.node, op);
        let name = self.fresh();
        self.steps.push(Step::Apply {
            name: name.clone(),
            lhs: a.name.clone(),
            rhs: b.name.clone(),
            op,
        });
        Value { node, name }
    }

    fn restrict(&mut self, a: &Value, var: u32, value: bool) -> Value {
        let node = self.engine.restrict(a.node, var, value);
        let name = self.fresh();
        self.steps.push(Step::Restrict {
            name: name.clone(),
            arg: a.name.clone(),
            var,
            value,
        });
        Value { node, name }
    }

    fn rename(&mut self, a: &Value, from: u32, to: u32) -> Value {
        let node = self
            .engine
            .rename(a.node, from, to)
            .expect("interleaved variable order keeps renames well-formed");
        let name = self.fresh();
        self.steps.push(Step::Rename {
            name: name.clone(),
            arg: a.name.clone(),
            from,
            to,
        });
        Value { node, name }
    }

    fn assert_equiv(&mut self, lhs: &Value, rhs: &Value, expect: bool) {
        self.steps.push(Step::AssertEquiv {
            lhs: lhs.name.clone(),
            rhs: rhs.name.clone(),
            expect,
        });
    }

    fn not(&mut self, a: &Value) -> Value {
        let t = Value {
            node: self.engine.constant(true),
            name: "true".to_string(),
        };
        self.apply(a, &t, BoolOp::NAND)
    }

    /// States with a successor in `c`: rename `c` onto the primed
    /// variables, conjoin the transition relation, and quantify the
    /// primed variables away (outermost first). Everything is recorded.
    pub fn pre_image(&mut self, c: &Value) -> Value {
        let k = self.model.vars.len() as u32;
        let mut cur = c.clone();
        for i in 0..k {
            cur = self.rename(&cur, 2 * i, 2 * i + 1);
        }
        let trans = self.named("trans");
        cur = self.apply(&cur, &trans, BoolOp::AND);
        for i in (0..k).rev() {
            let v = 2 * i + 1;
            let lo = self.restrict(&cur, v, false);
            let hi = self.restrict(&cur, v, true);
            cur = self.apply(&lo, &hi, BoolOp::OR);
        }
        cur
    }

    /// Runs a fixpoint loop `z ↦ step(z)` from `start`, recording one
    /// inequivalence assertion per continuing iteration and an
    /// equivalence assertion on exit.
    fn fixpoint(
        &mut self,
        start: Value,
        mut step: impl FnMut(&mut Self, &Value) -> Value,
    ) -> Value {
        let mut c = start;
        loop {
            let next = step(self, &c);
            let stable = next.node == c.node;
            self.assert_equiv(&next, &c, stable);
            if stable {
                return next;
            }
            c = next;
        }
    }

    /// The state set satisfying `phi`, computed bottom-up. Atoms must
    /// name a label or a state variable of the model.
    pub fn sem(&mut self, phi: &CtlFormula) -> Value {
        match phi {
            CtlFormula::Atom(name) => {
                assert!(
                    self.macros.contains_key(name),
                    "atom `{name}` does not name a label or variable"
                );
                self.named(name)
            }
            CtlFormula::Not(f) => {
                let v = self.sem(f);
                self.not(&v)
            }
            CtlFormula::And(a, b) => {
                let x = self.sem(a);
                let y = self.sem(b);
                self.apply(&x, &y, BoolOp::AND)
            }
            CtlFormula::Or(a, b) => {
                let x = self.sem(a);
                let y = self.sem(b);
                self.apply(&x, &y, BoolOp::OR)
            }
            CtlFormula::Ex(f) => {
                let v = self.sem(f);
                self.pre_image(&v)
            }
            CtlFormula::Ef(f) => {
                // Least fixpoint of Z ↦ Z ∨ pre(Z), seeded with sem(f).
                let start = self.sem(f);
                self.fixpoint(start, |s, c| {
                    let p = s.pre_image(c);
                    s.apply(c, &p, BoolOp::OR)
                })
            }
            CtlFormula::Eg(f) => {
                // Greatest fixpoint of Z ↦ Z ∧ pre(Z), seeded with sem(f).
                let start = self.sem(f);
                self.fixpoint(start, |s, c| {
                    let p = s.pre_image(c);
                    s.apply(c, &p, BoolOp::AND)
                })
            }
            CtlFormula::Eu(f, g) => {
                // Least fixpoint of Z ↦ q ∨ (p ∧ pre(Z)), seeded with q.
                let p = self.sem(f);
                let q = self.sem(g);
                let start = q.clone();
                self.fixpoint(start, move |s, c| {
                    let pre = s.pre_image(c);
                    let both = s.apply(&p, &pre, BoolOp::AND);
                    s.apply(&q, &both, BoolOp::OR)
                })
            }
        }
    }

    /// Records the final verdict assertion for a computed state set:
    /// the property holds iff no initial state avoids it.
    pub fn assert_final(&mut self, sat: &Value) -> bool {
        let flipped = self.not(sat);
        let init = self.named("init");
        let escape = self.apply(&flipped, &init, BoolOp::AND);
        let answer = escape.node == self.engine.constant(false);
        self.steps.push(Step::AssertEquiv {
            lhs: escape.name.clone(),
            rhs: "false".to_string(),
            expect: answer,
        });
        answer
    }

    pub fn into_trace(self) -> Trace {
        Trace {
            n_vars: self.model.n_trace_vars(),
            steps: self.steps,
        }
    }
}

/// Reads the per-property verdicts back out of a recorded trace: the
/// expectation of each final assertion (the ones comparing against the
/// empty set), in property order. This is how a verifier that never ran
/// the solver learns what answer it is certifying.
pub fn final_answers(trace: &Trace) -> Vec<bool> {
    trace
        .steps
        .iter()
        .filter_map(|s| match s {
            Step::AssertEquiv { rhs, expect, .. } if rhs == "false" => Some(*expect),
            _ => None,
        })
        .collect()
}

/// Checks one formula: the answer plus the recorded trace.
pub fn check(model: &Model, phi: &CtlFormula) -> (bool, Trace) {
    let mut solver = Solver::new(model);
    let sat = solver.sem(phi);
    let answer = solver.assert_final(&sat);
    (answer, solver.into_trace())
}

/// Checks every `CTLSPEC` of the model in one recorded session.
pub fn check_all(model: &Model) -> (Vec<bool>, Trace) {
    let mut solver = Solver::new(model);
    let mut answers = Vec::new();
    for spec in &model.specs {
        let sat = solver.sem(&spec.formula);
        answers.push(solver.assert_final(&sat));
    }
    (answers, solver.into_trace())
}

// ---------------------------------------------------------------------
// Explicit-state oracle
// ---------------------------------------------------------------------

fn state_set(model: &Model, f: &Formula) -> Vec<bool> {
    let k = model.vars.len();
    let n = 1usize << k;
    let mut assign = vec![false; 2 * k];
    (0..n)
        .map(|s| {
            for i in 0..k {
                assign[2 * i] = (s >> i) & 1 == 1;
            }
            f.eval(&assign)
        })
        .collect()
}

struct Enumerated {
    n: usize,
    /// Successor bitmask rows: bit `t` of row `s` means `s -> t`.
    rows: Vec<Vec<u64>>,
}

impl Enumerated {
    fn ex(&self, z: &[bool]) -> Vec<bool> {
        let words = self.n.div_ceil(64);
        let mut packed = vec![0u64; words];
        for (t, &b) in z.iter().enumerate() {
            if b {
                packed[t / 64] |= 1 << (t % 64);
            }
        }
        (0..self.n)
            .map(|s| {
                self.rows[s]
                    .iter()
                    .zip(&packed)
                    .any(|(a, b)| a & b != 0)
            })
            .collect()
    }

    fn eval(&self, model: &Model, phi: &CtlFormula) -> Vec<bool> {
        match phi {
            CtlFormula::Atom(name) => {
                let f = model
                    .labels
                    .iter()
                    .find(|(l, _)| l == name)
                    .map(|(_, f)| f.clone())
                    .or_else(|| {
                        model
                            .vars
                            .iter()
                            .position(|v| v == name)
                            .map(|i| Formula::Var(2 * i as u32))
                    })
                    .unwrap_or_else(|| panic!("atom `{name}` does not name a label or variable"));
                state_set(model, &f)
            }
            CtlFormula::Not(f) => self.eval(model, f).into_iter().map(|b| !b).collect(),
            CtlFormula::And(a, b) => zip_with(self.eval(model, a), self.eval(model, b), |x, y| {
                x && y
            }),
            CtlFormula::Or(a, b) => zip_with(self.eval(model, a), self.eval(model, b), |x, y| {
                x || y
            }),
            CtlFormula::Ex(f) => self.ex(&self.eval(model, f)),
            CtlFormula::Ef(f) => {
                let mut z = self.eval(model, f);
                loop {
                    let grown = zip_with(z.clone(), self.ex(&z), |a, b| a || b);
                    if grown == z {
                        return z;
                    }
                    z = grown;
                }
            }
            CtlFormula::Eg(f) => {
                let mut z = self.eval(model, f);
                loop {
                    let shrunk = zip_with(z.clone(), self.ex(&z), |a, b| a && b);
                    if shrunk == z {
                        return z;
                    }
                    z = shrunk;
                }
            }
            CtlFormula::Eu(f, g) => {
                let p = self.eval(model, f);
                let q = self.eval(model, g);
                let mut z = q.clone();
                loop {
                    let reach = self.ex(&z);
                    let grown: Vec<bool> = (0..self.n)
                        .map(|s| q[s] || (p[s] && reach[s]))
                        .collect();
                    if grown == z {
                        return z;
                    }
                    z = grown;
                }
            }
        }
    }
}

fn zip_with(a: Vec<bool>, b: Vec<bool>, f: impl Fn(bool, bool) -> bool) -> Vec<bool> {
    a.into_iter().zip(b).map(|(x, y)| f(x, y)).collect()
}

/// Brute-force ground truth: enumerates every state and transition and
/// evaluates the formula by set fixpoints. Refuses more than 14 state
/// bits.
pub fn explicit_oracle(model: &Model, phi: &CtlFormula) -> Result<bool, ModelError> {
    let k = model.vars.len();
    if k > 14 {
        return Err(ModelError::StateSpaceTooLarge { bits: k });
    }
    let n = 1usize << k;
    let words = n.div_ceil(64);
    let mut rows = vec![vec![0u64; words]; n];
    let mut assign = vec![false; 2 * k];
    for (s, row) in rows.iter_mut().enumerate() {
        for i in 0..k {
            assign[2 * i] = (s >> i) & 1 == 1;
        }
        for t in 0..n {
            for i in 0..k {
                assign[2 * i + 1] = (t >> i) & 1 == 1;
            }
            if model.trans.eval(&assign) {
                row[t / 64] |= 1 << (t % 64);
            }
        }
    }
    let system = Enumerated { n, rows };
    let sat = system.eval(model, phi);
    let init = state_set(model, &model.init);
    Ok((0..n).all(|s| !init[s] || sat[s]))
}
