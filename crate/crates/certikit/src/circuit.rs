//! Generalized boolean circuits and solver traces.
//!
//! A solver run is recorded as a [`Trace`]: a straight-line sequence of
//! primitive BDD instructions (`apply`, `restrict`, `rename`) over named
//! values, interleaved with the assertions the solver relied on
//! (equivalence, point evaluation, solution counting). Traces have a
//! plain-text form, one instruction per line:
//!
//! ```text
//! vars 4
//! let C1 = apply(C0, PreC0, or2)
//! let T0 = restrict(trans, x2, 0)
//! let R0 = rename(C0, x0, x1)
//! assert_equiv C1 C0 0
//! assert_eval C1 0110 1
//! assert_count C1 42
//! ```
//!
//! Named inputs (`init`, `trans`, labels — plus the reserved constants
//! `true` and `false`) are *formula macros*: small boolean formulas supplied
//! alongside the trace, not part of its text.
//!
//! [`CompiledTrace::build`] turns a trace into a circuit of gates —
//! constants, variables, negation, the sixteen binary operators, projection
//! (`x := b`), renaming, and degree reduction (`delta`) — then runs the
//! `conv` pass, which inserts after every binary gate one `delta` gate per
//! free variable, innermost on the smallest index. Over the field, a binary
//! gate multiplies two multilinear polynomials, so its output can be
//! quadratic in each variable; the delta chain reduces it back to the
//! multilinear extension, which is the form on which the certification
//! protocol's per-variable challenges work. Consumers of a value always
//! reference its chain top.
//!
//! The module also carries two independent evaluation oracles used heavily
//! by the test suite: a boolean-cube multilinear-extension oracle and a
//! structural gate-polynomial oracle. They are deliberately brute-force.

use std::collections::HashMap;

use num_bigint::BigUint;
use thiserror::Error;

use crate::bdd::BoolOp;
use crate::field::{Fp, Poly2};

/// Index of a gate in a [`Circuit`]. Gates are numbered in construction
/// order, so every gate's children have smaller ids (topological).
pub type GateId = u32;

/// A gate of a generalized boolean circuit.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum GateKind {
    /// Boolean constant.
    Const(bool),
    /// Input variable x_i.
    Var(u32),
    /// Negation.
    Not(GateId),
    /// One of the sixteen binary boolean operators.
    Bin(BoolOp, GateId, GateId),
    /// Projection: the child with variable `var` fixed to `value`.
    Project { child: GateId, var: u32, value: bool },
    /// Renaming: the child with variable `from` substituted by `to`.
    Rename { child: GateId, from: u32, to: u32 },
    /// Degree reduction in `var` (multilinearization of one coordinate).
    Delta { child: GateId, var: u32 },
    /// A certified placeholder: stands for an already-certified gate in the
    /// incremental protocol. Carries the free set of the gate it replaced;
    /// its recorded value lives with the verifier, not in the circuit.
    Epsilon { free: Vec<u32> },
}

/// A generalized boolean circuit with per-gate free-variable sets.
#[derive(Clone, Debug)]
pub struct Circuit {
    pub n_vars: u32,
    gates: Vec<GateKind>,
    free_sets: Vec<Vec<u32>>,
}

fn union_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                i += 1;
                j += 1;
                x
            }
            (Some(&x), Some(&y)) if x < y => {
                i += 1;
                x
            }
            (Some(_), Some(&y)) => {
                j += 1;
                y
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        out.push(next);
    }
    out
}

impl Circuit {
    pub fn new(n_vars: u32) -> Circuit {
        Circuit {
            n_vars,
            gates: Vec::new(),
            free_sets: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn kind(&self, g: GateId) -> &GateKind {
        &self.gates[g as usize]
    }

    /// The gate's free variables, sorted ascending.
    ///
    /// This is the *semantic* support of the gate polynomial: projection
    /// removes its variable, renaming substitutes it. (For binary gates it
    /// is the union of the children's sets, which over-approximates only in
    /// contrived cancellation cases; it never under-approximates, which is
    /// what the protocol's merge step requires.)
    pub fn free(&self, g: GateId) -> &[u32] {
        &self.free_sets[g as usize]
    }

    /// Appends a gate; children must already exist.
    pub fn push(&mut self, kind: GateKind) -> GateId {
        let free = match &kind {
            GateKind::Const(_) => Vec::new(),
            GateKind::Var(x) => {
                assert!(*x < self.n_vars, "variable out of range");
                vec![*x]
            }
            GateKind::Not(c) | GateKind::Delta { child: c, .. } => {
                self.free_sets[*c as usize].clone()
            }
            GateKind::Bin(_, a, b) => {
                union_sorted(&self.free_sets[*a as usize], &self.free_sets[*b as usize])
            }
            GateKind::Project { child, var, .. } => {
                let mut f = self.free_sets[*child as usize].clone();
                f.retain(|v| v != var);
                f
            }
            GateKind::Rename { child, from, to } => {
                let mut f = self.free_sets[*child as usize].clone();
                if let Ok(pos) = f.binary_search(from) {
                    f.remove(pos);
                    if let Err(ins) = f.binary_search(to) {
                        f.insert(ins, *to);
                    }
                }
                f
            }
            GateKind::Epsilon { free } => free.clone(),
        };
        self.gates.push(kind);
        self.free_sets.push(free);
        (self.gates.len() - 1) as GateId
    }

    /// Replaces a certified gate by an epsilon placeholder (incremental
    /// protocol). Its free set is preserved.
    pub fn replace_with_epsilon(&mut self, g: GateId) {
        let free = self.free_sets[g as usize].clone();
        self.gates[g as usize] = GateKind::Epsilon { free };
    }

    /// Evaluates the gate as a boolean function under a total assignment.
    pub fn bool_eval(&self, g: GateId, assignment: &[bool]) -> bool {
        assert_eq!(assignment.len(), self.n_vars as usize);
        let mut a = assignment.to_vec();
        let mut memo: HashMap<(GateId, u64), bool> = HashMap::new();
        self.beval(g, &mut a, &mut memo)
    }

    fn free_key_bool(&self, g: GateId, a: &[bool]) -> u64 {
        // Free sets stay small (at most n_vars <= 64 in practice for the
        // memoized paths); pack the free coordinates into a word.
        let mut key = 0u64;
        for (i, &v) in self.free(g).iter().enumerate() {
            assert!(i < 64, "free set too large for the evaluation memo");
            if a[v as usize] {
                key |= 1 << i;
            }
        }
        key
    }

    fn beval(&self, g: GateId, a: &mut Vec<bool>, memo: &mut HashMap<(GateId, u64), bool>) -> bool {
        let key = (g, self.free_key_bool(g, a));
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let v = match self.kind(g) {
            GateKind::Const(b) => *b,
            GateKind::Var(x) => a[*x as usize],
            GateKind::Not(c) => !self.beval(*c, a, memo),
            GateKind::Bin(op, l, r) => {
                let x = self.beval(*l, a, memo);
                let y = self.beval(*r, a, memo);
                op.bit(x, y)
            }
            GateKind::Project { child, var, value } => {
                let (child, var, value) = (*child, *var as usize, *value);
                let saved = a[var];
                a[var] = value;
                let v = self.beval(child, a, memo);
                a[var] = saved;
                v
            }
            GateKind::Rename { child, from, to } => {
                let (child, from, to) = (*child, *from as usize, *to as usize);
                let saved = a[from];
                a[from] = a[to];
                let v = self.beval(child, a, memo);
                a[from] = saved;
                v
            }
            // Degree reduction is the identity on boolean points.
            GateKind::Delta { child, .. } => self.beval(*child, a, memo),
            GateKind::Epsilon { .. } => {
                panic!("boolean evaluation reached an epsilon placeholder")
            }
        };
        memo.insert(key, v);
        v
    }
}

/// The arithmetization of a binary boolean operator: the unique polynomial
/// agreeing with the operator's truth table on boolean points,
/// `sum_{a,b} table(a,b) * (a ? p : 1-p) * (b ? q : 1-q)`.
pub fn arith_op(op: BoolOp, p: Fp, q: Fp) -> Fp {
    let mut acc = Fp::ZERO;
    for a in [false, true] {
        for b in [false, true] {
            if op.bit(a, b) {
                let pa = if a { p } else { Fp::ONE - p };
                let qb = if b { q } else { Fp::ONE - q };
                acc = acc + pa * qb;
            }
        }
    }
    acc
}

/// [`arith_op`] lifted to degree-two polynomials in one challenge variable.
pub fn arith_op_poly(op: BoolOp, p: &Poly2, q: &Poly2) -> Poly2 {
    let one = Poly2::constant(Fp::ONE);
    let mut acc = Poly2::ZERO;
    for a in [false, true] {
        for b in [false, true] {
            if op.bit(a, b) {
                let pa = if a { *p } else { one.sub(p) };
                let qb = if b { *q } else { one.sub(q) };
                acc = acc.add(&pa.mul(&qb));
            }
        }
    }
    acc
}

/// A named-input macro: a small boolean formula over the circuit variables.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Formula {
    Const(bool),
    Var(u32),
    Not(Box<Formula>),
    Bin(BoolOp, Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn eval(&self, assignment: &[bool]) -> bool {
        match self {
            Formula::Const(b) => *b,
            Formula::Var(x) => assignment[*x as usize],
            Formula::Not(f) => !f.eval(assignment),
            Formula::Bin(op, l, r) => op.bit(l.eval(assignment), r.eval(assignment)),
        }
    }
}

/// One step of a trace.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Step {
    Apply {
        name: String,
        lhs: String,
        rhs: String,
        op: BoolOp,
    },
    Restrict {
        name: String,
        arg: String,
        var: u32,
        value: bool,
    },
    Rename {
        name: String,
        arg: String,
        from: u32,
        to: u32,
    },
    AssertEquiv {
        lhs: String,
        rhs: String,
        expect: bool,
    },
    AssertEval {
        arg: String,
        bits: Vec<bool>,
        expect: bool,
    },
    AssertCount {
        arg: String,
        count: BigUint,
    },
}

impl Step {
    pub fn is_assertion(&self) -> bool {
        matches!(
            self,
            Step::AssertEquiv { .. } | Step::AssertEval { .. } | Step::AssertCount { .. }
        )
    }

    /// The value name this step defines, if any.
    pub fn defines(&self) -> Option<&str> {
        match self {
            Step::Apply { name, .. }
            | Step::Restrict { name, .. }
            | Step::Rename { name, .. } => Some(name),
            _ => None,
        }
    }

    /// The value names this step references.
    pub fn references(&self) -> Vec<&str> {
        match self {
            Step::Apply { lhs, rhs, .. } => vec![lhs, rhs],
            Step::Restrict { arg, .. } | Step::Rename { arg, .. } => vec![arg],
            Step::AssertEquiv { lhs, rhs, .. } => vec![lhs, rhs],
            Step::AssertEval { arg, .. } | Step::AssertCount { arg, .. } => vec![arg],
        }
    }
}

/// A recorded solver run.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Trace {
    pub n_vars: u32,
    pub steps: Vec<Step>,
}

#[derive(Error, Debug, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("step {step}: name `{name}` is not defined")]
    UndefinedName { step: usize, name: String },
    #[error("name `{name}` is defined twice")]
    DuplicateName { name: String },
    #[error("step {step}: variable x{var} out of range (vars {n})")]
    VarOutOfRange { step: usize, var: u32, n: u32 },
    #[error("step {step}: assert_eval gives {given} bits for {n} variables")]
    BitsLength { step: usize, given: usize, n: u32 },
}

fn valid_name(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_var_token(tok: &str, line: usize) -> Result<u32, TraceError> {
    let err = || TraceError::Parse {
        line,
        message: format!("expected a variable token like x3, got `{tok}`"),
    };
    let rest = tok.strip_prefix('x').ok_or_else(err)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return Err(err());
    }
    rest.parse().map_err(|_| err())
}

/// Parses the plain-text trace format.
pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let mut n_vars: Option<u32> = None;
    let mut steps = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find("--") {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let cleaned: String = line
            .chars()
            .map(|c| if matches!(c, '(' | ')' | ',' | '=') { ' ' } else { c })
            .collect();
        let toks: Vec<&str> = cleaned.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let parse_err = |message: String| TraceError::Parse {
            line: line_no,
            message,
        };
        if n_vars.is_none() {
            if toks.len() == 2 && toks[0] == "vars" {
                let n = toks[1]
                    .parse::<u32>()
                    .map_err(|_| parse_err(format!("bad variable count `{}`", toks[1])))?;
                n_vars = Some(n);
                continue;
            }
            return Err(parse_err("trace must start with `vars <n>`".into()));
        }
        let expect_name = |tok: &str| -> Result<String, TraceError> {
            if valid_name(tok) {
                Ok(tok.to_string())
            } else {
                Err(parse_err(format!("`{tok}` is not a valid name")))
            }
        };
        let parse_bit = |tok: &str| -> Result<bool, TraceError> {
            match tok {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(parse_err(format!("expected 0 or 1, got `{tok}`"))),
            }
        };
        match toks[0] {
            "let" => {
                if toks.len() < 3 {
                    return Err(parse_err("truncated let binding".into()));
                }
                let name = expect_name(toks[1])?;
                match (toks[2], toks.len()) {
                    ("apply", 6) => steps.push(Step::Apply {
                        name,
                        lhs: expect_name(toks[3])?,
                        rhs: expect_name(toks[4])?,
                        op: BoolOp::from_name(toks[5])
                            .ok_or_else(|| parse_err(format!("unknown operator `{}`", toks[5])))?,
                    }),
                    ("restrict", 6) => steps.push(Step::Restrict {
                        name,
                        arg: expect_name(toks[3])?,
                        var: parse_var_token(toks[4], line_no)?,
                        value: parse_bit(toks[5])?,
                    }),
                    ("rename", 6) => steps.push(Step::Rename {
                        name,
                        arg: expect_name(toks[3])?,
                        from: parse_var_token(toks[4], line_no)?,
                        to: parse_var_token(toks[5], line_no)?,
                    }),
                    _ => {
                        return Err(parse_err(format!(
                            "expected apply/restrict/rename with the right arity, got `{}`",
                            toks[2]
                        )))
                    }
                }
            }
            "assert_equiv" => {
                if toks.len() != 4 {
                    return Err(parse_err("assert_equiv takes two names and a bit".into()));
                }
                steps.push(Step::AssertEquiv {
                    lhs: expect_name(toks[1])?,
                    rhs: expect_name(toks[2])?,
                    expect: parse_bit(toks[3])?,
                });
            }
            "assert_eval" => {
                if toks.len() != 4 {
                    return Err(parse_err(
                        "assert_eval takes a name, a bit string and a bit".into(),
                    ));
                }
                let bits: Vec<bool> = toks[2]
                    .chars()
                    .map(|c| match c {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        _ => Err(parse_err(format!("bad bit `{c}` in assignment"))),
                    })
                    .collect::<Result<_, _>>()?;
                steps.push(Step::AssertEval {
                    arg: expect_name(toks[1])?,
                    bits,
                    expect: parse_bit(toks[3])?,
                });
            }
            "assert_count" => {
                if toks.len() != 3 {
                    return Err(parse_err("assert_count takes a name and a count".into()));
                }
                let count = toks[2]
                    .parse::<BigUint>()
                    .map_err(|_| parse_err(format!("bad count `{}`", toks[2])))?;
                steps.push(Step::AssertCount {
                    arg: expect_name(toks[1])?,
                    count,
                });
            }
            other => return Err(parse_err(format!("unknown instruction `{other}`"))),
        }
    }
    let n_vars = n_vars.ok_or(TraceError::Parse {
        line: 0,
        message: "empty trace: missing `vars <n>` header".into(),
    })?;
    Ok(Trace { n_vars, steps })
}

/// Renders a trace in the plain-text format accepted by [`parse_trace`].
pub fn serialize_trace(trace: &Trace) -> String {
    let mut out = format!("vars {}\n", trace.n_vars);
    for step in &trace.steps {
        match step {
            Step::Apply { name, lhs, rhs, op } => {
                out.push_str(&format!("let {name} = apply({lhs}, {rhs}, {op})\n"));
            }
            Step::Restrict {
                name,
                arg,
                var,
                value,
            } => {
                out.push_str(&format!(
                    "let {name} = restrict({arg}, x{var}, {})\n",
                    *value as u8
                ));
            }
            Step::Rename {
                name,
                arg,
                from,
                to,
            } => {
                out.push_str(&format!("let {name} = rename({arg}, x{from}, x{to})\n"));
            }
            Step::AssertEquiv { lhs, rhs, expect } => {
                out.push_str(&format!("assert_equiv {lhs} {rhs} {}\n", *expect as u8));
            }
            Step::AssertEval { arg, bits, expect } => {
                let bitstr: String = bits.iter().map(|&b| if b { '1' } else { '0' }).collect();
                out.push_str(&format!("assert_eval {arg} {bitstr} {}\n", *expect as u8));
            }
            Step::AssertCount { arg, count } => {
                out.push_str(&format!("assert_count {arg} {count}\n"));
            }
        }
    }
    out
}

/// An assertion with its gate targets resolved into the delta-expanded
/// circuit.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Assertion {
    /// Index of the originating step in the trace.
    pub step: usize,
    pub kind: AssertionKind,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum AssertionKind {
    Equiv { lhs: GateId, rhs: GateId, expect: bool },
    Eval { gate: GateId, bits: Vec<bool>, expect: bool },
    CountIs { gate: GateId, count: BigUint },
}

/// Where a gate of the plain circuit came from.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Origin {
    Reserved,
    Macro,
    Step(usize),
}

/// A contiguous run of steps ending at an assertion; the unit of work of
/// the incremental (garbage-collected) certification protocol.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Fragment {
    /// First step index (inclusive).
    pub first_step: usize,
    /// Last step index (inclusive; the assertion, when the fragment has one).
    pub last_step: usize,
}

/// A trace compiled against its named inputs: the delta-expanded circuit,
/// name and assertion resolution, and the provenance maps the prover and
/// the incremental protocol need.
#[derive(Clone, Debug)]
pub struct CompiledTrace {
    pub n_vars: u32,
    /// The trace this was compiled from.
    pub trace: Trace,
    /// The circuit before delta insertion.
    pub plain: Circuit,
    /// The delta-expanded circuit the protocol runs on.
    pub circuit: Circuit,
    /// Plain gate id -> its image (chain top for binary gates).
    pub remap: Vec<GateId>,
    /// Value name -> gate id in the expanded circuit.
    pub names: HashMap<String, GateId>,
    /// Assertions with targets resolved into the expanded circuit.
    pub assertions: Vec<Assertion>,
    /// Expanded-circuit gate ids created by each step (empty for asserts).
    pub step_gates: Vec<Vec<GateId>>,
    /// Expanded gates below this id belong to constants and input macros.
    pub macro_gate_end: GateId,
    /// Steps partitioned at assertions.
    pub fragments: Vec<Fragment>,
    /// Step index -> fragment index.
    pub fragment_of_step: Vec<u32>,
    /// Value name -> last step index that references it.
    pub last_use: HashMap<String, usize>,
}

impl CompiledTrace {
    /// Compiles a trace against named input macros.
    ///
    /// `inputs` supplies the formula behind each input name, in a fixed
    /// order both protocol parties must share (gate numbering depends on
    /// it). The names `true` and `false` are predefined constants.
    pub fn build(trace: &Trace, inputs: &[(String, Formula)]) -> Result<CompiledTrace, TraceError> {
        let n = trace.n_vars;
        let mut plain = Circuit::new(n);
        let mut origin: Vec<Origin> = Vec::new();
        let mut names: HashMap<String, GateId> = HashMap::new();

        let f_gate = plain.push(GateKind::Const(false));
        let t_gate = plain.push(GateKind::Const(true));
        origin.push(Origin::Reserved);
        origin.push(Origin::Reserved);
        names.insert("false".into(), f_gate);
        names.insert("true".into(), t_gate);

        fn compile_formula(
            c: &mut Circuit,
            origin: &mut Vec<Origin>,
            f: &Formula,
        ) -> GateId {
            let kind = match f {
                Formula::Const(b) => GateKind::Const(*b),
                Formula::Var(x) => GateKind::Var(*x),
                Formula::Not(inner) => {
                    let child = compile_formula(c, origin, inner);
                    GateKind::Not(child)
                }
                Formula::Bin(op, l, r) => {
                    let lc = compile_formula(c, origin, l);
                    let rc = compile_formula(c, origin, r);
                    GateKind::Bin(*op, lc, rc)
                }
            };
            origin.push(Origin::Macro);
            c.push(kind)
        }

        for (name, formula) in inputs {
            if names.contains_key(name) {
                return Err(TraceError::DuplicateName { name: name.clone() });
            }
            if !valid_name(name) {
                return Err(TraceError::Parse {
                    line: 0,
                    message: format!("input name `{name}` is not a valid identifier"),
                });
            }
            let g = compile_formula(&mut plain, &mut origin, formula);
            names.insert(name.clone(), g);
        }

        let mut plain_assertions: Vec<Assertion> = Vec::new();
        let mut plain_step_gate: Vec<Option<GateId>> = Vec::new();
        for (s, step) in trace.steps.iter().enumerate() {
            let resolve = |nm: &str, names: &HashMap<String, GateId>| {
                names.get(nm).copied().ok_or(TraceError::UndefinedName {
                    step: s,
                    name: nm.to_string(),
                })
            };
            let check_var = |v: u32| {
                if v < n {
                    Ok(v)
                } else {
                    Err(TraceError::VarOutOfRange { step: s, var: v, n })
                }
            };
            let mut define = |nm: &str,
                              kind: GateKind,
                              plain: &mut Circuit,
                              names: &mut HashMap<String, GateId>|
             -> Result<GateId, TraceError> {
                if names.contains_key(nm) {
                    return Err(TraceError::DuplicateName {
                        name: nm.to_string(),
                    });
                }
                let g = plain.push(kind);
                origin.push(Origin::Step(s));
                names.insert(nm.to_string(), g);
                Ok(g)
            };
            match step {
                Step::Apply { name, lhs, rhs, op } => {
                    let l = resolve(lhs, &names)?;
                    let r = resolve(rhs, &names)?;
                    let g = define(name, GateKind::Bin(*op, l, r), &mut plain, &mut names)?;
                    plain_step_gate.push(Some(g));
                }
                Step::Restrict {
                    name,
                    arg,
                    var,
                    value,
                } => {
                    let child = resolve(arg, &names)?;
                    let var = check_var(*var)?;
                    let g = define(
                        name,
                        GateKind::Project {
                            child,
                            var,
                            value: *value,
                        },
                        &mut plain,
                        &mut names,
                    )?;
                    plain_step_gate.push(Some(g));
                }
                Step::Rename {
                    name,
                    arg,
                    from,
                    to,
                } => {
                    let child = resolve(arg, &names)?;
                    let from = check_var(*from)?;
                    let to = check_var(*to)?;
                    let g = define(
                        name,
                        GateKind::Rename { child, from, to },
                        &mut plain,
                        &mut names,
                    )?;
                    plain_step_gate.push(Some(g));
                }
                Step::AssertEquiv { lhs, rhs, expect } => {
                    plain_assertions.push(Assertion {
                        step: s,
                        kind: AssertionKind::Equiv {
                            lhs: resolve(lhs, &names)?,
                            rhs: resolve(rhs, &names)?,
                            expect: *expect,
                        },
                    });
                    plain_step_gate.push(None);
                }
                Step::AssertEval { arg, bits, expect } => {
                    if bits.len() != n as usize {
                        return Err(TraceError::BitsLength {
                            step: s,
                            given: bits.len(),
                            n,
                        });
                    }
                    plain_assertions.push(Assertion {
                        step: s,
                        kind: AssertionKind::Eval {
                            gate: resolve(arg, &names)?,
                            bits: bits.clone(),
                            expect: *expect,
                        },
                    });
                    plain_step_gate.push(None);
                }
                Step::AssertCount { arg, count } => {
                    plain_assertions.push(Assertion {
                        step: s,
                        kind: AssertionKind::CountIs {
                            gate: resolve(arg, &names)?,
                            count: count.clone(),
                        },
                    });
                    plain_step_gate.push(None);
                }
            }
        }

        // Delta expansion: after every binary gate, one delta per free
        // variable, innermost on the smallest index. Consumers reference
        // the chain top.
        let (circuit, remap, created) = conv_with_provenance(&plain);

        let names: HashMap<String, GateId> = names
            .into_iter()
            .map(|(k, v)| (k, remap[v as usize]))
            .collect();
        let assertions: Vec<Assertion> = plain_assertions
            .into_iter()
            .map(|a| Assertion {
                step: a.step,
                kind: match a.kind {
                    AssertionKind::Equiv { lhs, rhs, expect } => AssertionKind::Equiv {
                        lhs: remap[lhs as usize],
                        rhs: remap[rhs as usize],
                        expect,
                    },
                    AssertionKind::Eval { gate, bits, expect } => AssertionKind::Eval {
                        gate: remap[gate as usize],
                        bits,
                        expect,
                    },
                    AssertionKind::CountIs { gate, count } => AssertionKind::CountIs {
                        gate: remap[gate as usize],
                        count,
                    },
                },
            })
            .collect();

        let mut step_gates: Vec<Vec<GateId>> = vec![Vec::new(); trace.steps.len()];
        let mut macro_gate_end: GateId = circuit.len() as GateId;
        let mut first_step_gate_seen = false;
        for (plain_id, org) in origin.iter().enumerate() {
            match org {
                Origin::Step(s) => {
                    if !first_step_gate_seen {
                        macro_gate_end = created[plain_id].0;
                        first_step_gate_seen = true;
                    }
                    let (start, end) = created[plain_id];
                    step_gates[*s] = (start..end).collect();
                }
                _ => {}
            }
        }
        let _ = plain_step_gate;

        // Fragments: split after every assertion step.
        let mut fragments: Vec<Fragment> = Vec::new();
        let mut fragment_of_step: Vec<u32> = Vec::with_capacity(trace.steps.len());
        let mut frag_start = 0usize;
        for (s, step) in trace.steps.iter().enumerate() {
            fragment_of_step.push(fragments.len() as u32);
            if step.is_assertion() {
                fragments.push(Fragment {
                    first_step: frag_start,
                    last_step: s,
                });
                frag_start = s + 1;
            }
        }
        if frag_start < trace.steps.len() {
            fragments.push(Fragment {
                first_step: frag_start,
                last_step: trace.steps.len() - 1,
            });
        }

        let mut last_use: HashMap<String, usize> = HashMap::new();
        for (s, step) in trace.steps.iter().enumerate() {
            for r in step.references() {
                last_use.insert(r.to_string(), s);
            }
        }

        Ok(CompiledTrace {
            n_vars: n,
            trace: trace.clone(),
            plain,
            circuit,
            remap,
            names,
            assertions,
            step_gates,
            macro_gate_end,
            fragments,
            fragment_of_step,
            last_use,
        })
    }

    /// The gate id a value name resolves to.
    pub fn gate_of(&self, name: &str) -> Option<GateId> {
        self.names.get(name).copied()
    }
}

/// The delta-insertion pass on a plain circuit. Returns the expanded
/// circuit and the old-id -> new-top-id map.
pub fn conv(plain: &Circuit) -> (Circuit, Vec<GateId>) {
    let (c, remap, _) = conv_with_provenance(plain);
    (c, remap)
}

fn conv_with_provenance(plain: &Circuit) -> (Circuit, Vec<GateId>, Vec<(GateId, GateId)>) {
    let mut out = Circuit::new(plain.n_vars);
    let mut remap: Vec<GateId> = Vec::with_capacity(plain.len());
    // Per plain gate: the half-open range of expanded gate ids it produced.
    let mut created: Vec<(GateId, GateId)> = Vec::with_capacity(plain.len());
    for g in 0..plain.len() as GateId {
        let start = out.len() as GateId;
        let kind = match plain.kind(g) {
            GateKind::Const(b) => GateKind::Const(*b),
            GateKind::Var(x) => GateKind::Var(*x),
            GateKind::Not(c) => GateKind::Not(remap[*c as usize]),
            GateKind::Bin(op, a, b) => {
                GateKind::Bin(*op, remap[*a as usize], remap[*b as usize])
            }
            GateKind::Project { child, var, value } => GateKind::Project {
                child: remap[*child as usize],
                var: *var,
                value: *value,
            },
            GateKind::Rename { child, from, to } => GateKind::Rename {
                child: remap[*child as usize],
                from: *from,
                to: *to,
            },
            GateKind::Delta { child, var } => GateKind::Delta {
                child: remap[*child as usize],
                var: *var,
            },
            GateKind::Epsilon { free } => GateKind::Epsilon { free: free.clone() },
        };
        let is_bin = matches!(kind, GateKind::Bin(..));
        let id = out.push(kind);
        let top = if is_bin {
            let vars = out.free(id).to_vec();
            let mut cur = id;
            for v in vars {
                cur = out.push(GateKind::Delta { child: cur, var: v });
            }
            cur
        } else {
            id
        };
        remap.push(top);
        created.push((start, out.len() as GateId));
    }
    (out, remap, created)
}

/// A claim the certification protocol tracks. Assertions seed the initial
/// claim set; the protocol rewrites everything into field-evaluation claims.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Claim {
    /// The gate polynomial evaluates to `value` at the total point `sigma`.
    FieldEval {
        gate: GateId,
        sigma: Vec<Fp>,
        value: Fp,
    },
    /// The gate's boolean function takes `expect` at a boolean point.
    BoolEval {
        gate: GateId,
        bits: Vec<bool>,
        expect: bool,
    },
    /// The gate has exactly `count` satisfying assignments of its free set.
    CountIs { gate: GateId, count: BigUint },
    /// Two gates compute (or do not compute) the same boolean function.
    EquivIs {
        g1: GateId,
        g2: GateId,
        expect: bool,
    },
    /// A field-evaluation claim addressed to an already-certified gate; the
    /// verifier discharges it against its recorded value.
    EpsCheck {
        gate: GateId,
        sigma: Vec<Fp>,
        value: Fp,
    },
}

/// The initial claim set of a compiled trace: one claim per assertion.
pub fn claims(compiled: &CompiledTrace) -> Vec<Claim> {
    compiled
        .assertions
        .iter()
        .map(|a| match &a.kind {
            AssertionKind::Equiv { lhs, rhs, expect } => Claim::EquivIs {
                g1: *lhs,
                g2: *rhs,
                expect: *expect,
            },
            AssertionKind::Eval { gate, bits, expect } => Claim::BoolEval {
                gate: *gate,
                bits: bits.clone(),
                expect: *expect,
            },
            AssertionKind::CountIs { gate, count } => Claim::CountIs {
                gate: *gate,
                count: count.clone(),
            },
        })
        .collect()
}

/// Brute-force multilinear-extension oracle.
///
/// Evaluates the multilinear extension of the gate's *boolean function* by
/// summing over the boolean cube of its free variables:
/// `sum_b f(b) * prod_i (b_i ? sigma_i : 1 - sigma_i)`. Independent of the
/// gate-polynomial semantics, so it is used to cross-check delta-chain tops
/// (whose polynomial is exactly this extension). Refuses more than 14 free
/// variables; it is a test oracle, not a production path.
pub fn eval_multilinear_oracle(c: &Circuit, g: GateId, sigma: &[Fp]) -> Fp {
    let free = c.free(g);
    assert!(
        free.len() <= 14,
        "multilinear oracle limited to 14 free variables"
    );
    assert_eq!(sigma.len(), c.n_vars as usize);
    let mut acc = Fp::ZERO;
    let mut assignment = vec![false; c.n_vars as usize];
    for b in 0..(1u32 << free.len()) {
        let mut weight = Fp::ONE;
        for (i, &v) in free.iter().enumerate() {
            let bit = (b >> i) & 1 == 1;
            assignment[v as usize] = bit;
            let s = sigma[v as usize];
            weight = weight * if bit { s } else { Fp::ONE - s };
        }
        if c.bool_eval(g, &assignment) {
            acc = acc + weight;
        }
    }
    acc
}

/// Structural gate-polynomial oracle.
///
/// Computes the gate's polynomial value at a field point directly from the
/// arithmetization rules (negation `1-p`, the operator polynomials,
/// substitution for projection and renaming, pointwise doubling for delta),
/// memoized on `(gate, sigma restricted to the gate's free set)`.
pub fn eval_gate_polynomial_oracle(c: &Circuit, g: GateId, sigma: &[Fp]) -> Fp {
    assert_eq!(sigma.len(), c.n_vars as usize);
    let mut s = sigma.to_vec();
    let mut memo: HashMap<(GateId, Vec<u64>), Fp> = HashMap::new();
    poly_rec(c, g, &mut s, &mut memo)
}

fn poly_rec(
    c: &Circuit,
    g: GateId,
    s: &mut Vec<Fp>,
    memo: &mut HashMap<(GateId, Vec<u64>), Fp>,
) -> Fp {
    let key = (
        g,
        c.free(g).iter().map(|&v| s[v as usize].value()).collect::<Vec<u64>>(),
    );
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let val = match c.kind(g) {
        GateKind::Const(b) => Fp::from_bool(*b),
        GateKind::Var(x) => s[*x as usize],
        GateKind::Not(inner) => Fp::ONE - poly_rec(c, *inner, s, memo),
        GateKind::Bin(op, l, r) => {
            let p = poly_rec(c, *l, s, memo);
            let q = poly_rec(c, *r, s, memo);
            arith_op(*op, p, q)
        }
        GateKind::Project { child, var, value } => {
            let (child, var, value) = (*child, *var as usize, *value);
            let saved = s[var];
            s[var] = Fp::from_bool(value);
            let v = poly_rec(c, child, s, memo);
            s[var] = saved;
            v
        }
        GateKind::Rename { child, from, to } => {
            let (child, from, to) = (*child, *from as usize, *to as usize);
            let saved = s[from];
            s[from] = s[to];
            let v = poly_rec(c, child, s, memo);
            s[from] = saved;
            v
        }
        GateKind::Delta { child, var } => {
            let (child, var) = (*child, *var as usize);
            let x = s[var];
            let saved = s[var];
            s[var] = Fp::ONE;
            let p1 = poly_rec(c, child, s, memo);
            s[var] = Fp::ZERO;
            let p0 = poly_rec(c, child, s, memo);
            s[var] = saved;
            x * p1 + (Fp::ONE - x) * p0
        }
        GateKind::Epsilon { .. } => {
            panic!("polynomial oracle reached an epsilon placeholder")
        }
    };
    memo.insert(key, val);
    val
}
