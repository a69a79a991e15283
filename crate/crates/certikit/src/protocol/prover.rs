//! The prover side of the certification protocol.
//!
//! A [`ProverSession`] re-executes a recorded trace on its own BDD engine
//! and answers the verifier's challenges from what the execution leaves
//! behind: an extended-BDD chain per binary gate (for stage challenges)
//! and a reduced BDD per named value (for everything else). The session is
//! a stateless oracle with respect to challenges — answers depend only on
//! the challenged gate and point, never on challenge order — so one
//! session can serve any number of verification runs.
//!
//! Execution is lazy and driven by the challenges themselves: the prover
//! infers how far the verifier has progressed from the gates being
//! challenged and materializes up to that fragment. Under
//! [`Retention::FragmentGc`] it also *forgets*: chains die one fragment
//! after their step, and a value's reduced BDD dies once the last step
//! referencing it has passed. A challenge that regresses to a forgotten
//! fragment (a new repetition starting over) triggers a full replay, which
//! is sound because re-execution through the same unique table reproduces
//! identical functions. Under [`Retention::KeepAll`] nothing is dropped,
//! which suits a server that cannot know the verifier's schedule.
//!
//! For fault-injection testing the session can carry a [`TamperPlan`],
//! corrupting exactly one designated answer while leaving every other
//! byte honest.

use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

use crate::bdd::{BddError, BoolOp, Engine, NodeRef, ONE, ZERO};
use crate::circuit::{CompiledTrace, Formula, GateId, GateKind, Trace, TraceError};
use crate::ebdd::{answer_challenge, apply_ebdd, bdd_mle_poly, EbddChain, EbddStore};
use crate::field::{Fp, Poly2};
use crate::protocol::wire::{self, Message, WireError};

/// What the session keeps as the verifier advances.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Retention {
    /// Keep every chain and reduced BDD for the whole session.
    KeepAll,
    /// Drop chains one fragment after their step and reduced BDDs once
    /// past their last use; replay on regression.
    FragmentGc,
}

/// Which class of answer a tamper plan corrupts.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TamperClass {
    /// Not a prover-side tamper: the verifier is given a trace whose i-th
    /// assertion has its expectation flipped. Listed here so the command
    /// line can parse every class with one type.
    FlipAssert,
    /// Add one to the linear coefficient of the i-th polynomial answer.
    Poly,
    /// Add one to the i-th point answer.
    Point,
    /// Replace the i-th distinctness witness by a point where the two
    /// functions agree.
    Distinct,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TamperPlan {
    pub class: TamperClass,
    pub index: u32,
}

impl TamperPlan {
    /// Parses the `class:index` form used by the command line.
    pub fn parse(s: &str) -> Option<TamperPlan> {
        let (class, idx) = s.split_once(':')?;
        let class = match class {
            "flip-assert" => TamperClass::FlipAssert,
            "poly" => TamperClass::Poly,
            "point" => TamperClass::Point,
            "distinct" => TamperClass::Distinct,
            _ => return None,
        };
        Some(TamperPlan {
            class,
            index: idx.parse().ok()?,
        })
    }
}

/// Returns a copy of the trace whose `index`-th assertion records the
/// wrong outcome (flipped expectation, or an off-by-one count). This is
/// the [`TamperClass::FlipAssert`] experiment: the corrupted copy goes to
/// the verifier while the prover answers for the real computation.
/// `None` when the trace has fewer assertions.
pub fn flip_assertion(trace: &Trace, index: usize) -> Option<Trace> {
    use crate::circuit::Step;
    let mut out = trace.clone();
    let mut seen = 0;
    for step in &mut out.steps {
        if !step.is_assertion() {
            continue;
        }
        if seen == index {
            match step {
                Step::AssertEquiv { expect, .. } | Step::AssertEval { expect, .. } => {
                    *expect = !*expect;
                }
                Step::AssertCount { count, .. } => {
                    *count += 1u32;
                }
                _ => unreachable!(),
            }
            return Some(out);
        }
        seen += 1;
    }
    None
}

#[derive(Error, Debug)]
pub enum ProverError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("trace does not compile: {0}")]
    Trace(#[from] TraceError),
    #[error("trace violates an engine precondition: {0}")]
    Engine(#[from] BddError),
    #[error("received an answer message; the prover only takes challenges")]
    UnexpectedMessage,
    #[error("challenge names gate {0}, beyond the circuit")]
    BadGate(GateId),
    #[error("challenge carries {given} coordinates for {needed} variables")]
    SigmaLength { given: usize, needed: usize },
}

/// How a gate answers evaluation challenges.
#[derive(Clone, Copy, Debug)]
enum Source {
    /// The gate polynomial is the multilinear extension of this BDD.
    FinalBdd(NodeRef),
    /// A stage of a recorded chain: threshold `None` is the raw product,
    /// `Some(v)` has every chain variable `<= v` reduced.
    Chain { slot: usize, threshold: Option<u32> },
}

pub struct ProverSession {
    engine: Engine,
    store: EbddStore,
    compiled: CompiledTrace,
    retention: Retention,
    tamper: Option<TamperPlan>,

    sources: HashMap<GateId, Source>,
    /// Reduced BDD per value gate (chain tops and structural gates); each
    /// entry holds one reference count.
    funcs: HashMap<GateId, NodeRef>,
    chains: Vec<Option<EbddChain>>,
    /// Gates whose sources point into each chain slot (the chain interior).
    slot_gates: Vec<Vec<GateId>>,

    /// Gates that are images of the plain circuit: named values and the
    /// structural gates parents reference directly.
    tops: HashSet<GateId>,
    /// First expanded gate of each instruction step, for gate -> step lookup.
    step_first: Vec<(GateId, usize)>,
    /// Value name of each defining step's top gate.
    name_of_top: HashMap<GateId, String>,

    executed_steps: usize,
    current_fragment: u32,
    chain_retire: BTreeMap<u32, Vec<usize>>,
    func_retire: BTreeMap<u32, Vec<GateId>>,

    peak_combined: usize,
    replays: u64,
    poly_answers: u32,
    point_answers: u32,
    assignment_answers: u32,
    faults: Vec<String>,
}

impl ProverSession {
    /// Compiles the trace, materializes the input macros, and stands ready
    /// to answer challenges.
    pub fn new(
        trace: &Trace,
        inputs: &[(String, Formula)],
        retention: Retention,
        tamper: Option<TamperPlan>,
    ) -> Result<ProverSession, ProverError> {
        let compiled = CompiledTrace::build(trace, inputs)?;
        let tops: HashSet<GateId> = compiled.remap.iter().copied().collect();
        let mut step_first = Vec::new();
        for (s, gates) in compiled.step_gates.iter().enumerate() {
            if let Some(&first) = gates.first() {
                step_first.push((first, s));
            }
        }
        let mut name_of_top = HashMap::new();
        for (name, &gate) in &compiled.names {
            name_of_top.insert(gate, name.clone());
        }
        let mut session = ProverSession {
            engine: Engine::new(),
            store: EbddStore::new(),
            compiled,
            retention,
            tamper,
            sources: HashMap::new(),
            funcs: HashMap::new(),
            chains: Vec::new(),
            slot_gates: Vec::new(),
            tops,
            step_first,
            name_of_top,
            executed_steps: 0,
            current_fragment: 0,
            chain_retire: BTreeMap::new(),
            func_retire: BTreeMap::new(),
            peak_combined: 0,
            replays: 0,
            poly_answers: 0,
            point_answers: 0,
            assignment_answers: 0,
            faults: Vec::new(),
        };
        session.materialize_macros()?;
        Ok(session)
    }

    pub fn compiled(&self) -> &CompiledTrace {
        &self.compiled
    }

    /// High-water mark of live nodes (BDD engine plus extended store),
    /// sampled after every materialization and collection.
    pub fn peak_nodes(&self) -> usize {
        self.peak_combined
    }

    /// Full replays forced by challenges regressing past dropped state.
    pub fn replays(&self) -> u64 {
        self.replays
    }

    /// Challenges that reached gates the session had no source for; always
    /// empty in a correct run.
    pub fn faults(&self) -> &[String] {
        &self.faults
    }

    fn sample(&mut self) {
        let live = self.engine.live_nodes() + self.store.live_nodes();
        self.peak_combined = self.peak_combined.max(live);
    }

    fn materialize_macros(&mut self) -> Result<(), ProverError> {
        for g in 0..self.compiled.macro_gate_end {
            self.materialize_gate(g, None)?;
        }
        self.sample();
        Ok(())
    }

    fn func_of(&self, gate: GateId) -> NodeRef {
        *self
            .funcs
            .get(&gate)
            .expect("operand gate must be materialized and retained")
    }

    /// Builds the session state for one expanded gate. `owner_fragment`
    /// is the fragment of the defining step, `None` for macro gates
    /// (which are never retired).
    fn materialize_gate(
        &mut self,
        g: GateId,
        owner_fragment: Option<u32>,
    ) -> Result<(), ProverError> {
        let kind = self.compiled.circuit.kind(g).clone();
        match kind {
            GateKind::Const(b) => {
                let n = if b { ONE } else { ZERO };
                self.set_final(g, n, owner_fragment);
            }
            GateKind::Var(x) => {
                let n = self.engine.mk_var(x);
                self.set_final(g, n, owner_fragment);
            }
            GateKind::Not(child) => {
                let c = self.func_of(child);
                let n = self.engine.negate(c);
                self.set_final(g, n, owner_fragment);
            }
            GateKind::Bin(op, a, b) => {
                let (fa, fb) = (self.func_of(a), self.func_of(b));
                let chain = apply_ebdd(&mut self.engine, &mut self.store, fa, fb, op);
                let final_node = chain.final_node;
                let slot = self.chains.len();
                self.chains.push(Some(chain));
                self.slot_gates.push(Vec::new());
                if let Some(frag) = owner_fragment {
                    self.chain_retire.entry(frag).or_default().push(slot);
                }
                if self.tops.contains(&g) {
                    // A chain with no reduction stages: the raw product of
                    // two constant extensions equals the reduced constant.
                    self.set_final(g, final_node, owner_fragment);
                } else {
                    self.sources.insert(
                        g,
                        Source::Chain {
                            slot,
                            threshold: None,
                        },
                    );
                    self.slot_gates[slot].push(g);
                }
            }
            GateKind::Delta { child, var } => {
                let slot = match self.sources.get(&child) {
                    Some(Source::Chain { slot, .. }) => *slot,
                    _ => unreachable!("reduction gates sit directly on a recorded chain"),
                };
                if self.tops.contains(&g) {
                    // The last stage is the full extension of the reduced
                    // BDD; answering from it outlives the chain.
                    let final_node = self.chains[slot]
                        .as_ref()
                        .expect("chain alive while materializing its top")
                        .final_node;
                    self.set_final(g, final_node, owner_fragment);
                } else {
                    self.sources.insert(
                        g,
                        Source::Chain {
                            slot,
                            threshold: Some(var),
                        },
                    );
                    self.slot_gates[slot].push(g);
                }
            }
            GateKind::Project { child, var, value } => {
                let c = self.func_of(child);
                let n = self.engine.restrict(c, var, value);
                self.set_final(g, n, owner_fragment);
            }
            GateKind::Rename { child, from, to } => {
                let c = self.func_of(child);
                let n = self.engine.rename(c, from, to)?;
                self.set_final(g, n, owner_fragment);
            }
            GateKind::Epsilon { .. } => {
                unreachable!("the prover's circuit is never rewritten")
            }
        }
        Ok(())
    }

    fn set_final(&mut self, g: GateId, n: NodeRef, owner_fragment: Option<u32>) {
        self.engine.incref(n);
        self.sources.insert(g, Source::FinalBdd(n));
        self.funcs.insert(g, n);
        if owner_fragment.is_some() {
            // A value stays alive through the fragment of its last use
            // (later references answer boundary challenges from it); a
            // value never referenced again dies with its own fragment.
            let retire = self
                .name_of_top
                .get(&g)
                .and_then(|name| self.compiled.last_use.get(name))
                .map(|&s| self.compiled.fragment_of_step[s])
                .unwrap_or_else(|| owner_fragment.unwrap());
            self.func_retire.entry(retire).or_default().push(g);
        }
    }

    fn fragment_of_gate(&self, g: GateId) -> Option<u32> {
        if g < self.compiled.macro_gate_end {
            return None;
        }
        let idx = match self.step_first.binary_search_by_key(&g, |&(first, _)| first) {
            Ok(i) => i,
            Err(0) => return None,
            Err(i) => i - 1,
        };
        let step = self.step_first[idx].1;
        Some(self.compiled.fragment_of_step[step])
    }

    /// Makes the gate answerable, replaying from the start if its state
    /// was already dropped.
    fn ensure_gate(&mut self, g: GateId) -> Result<(), ProverError> {
        if g as usize >= self.compiled.circuit.len() {
            return Err(ProverError::BadGate(g));
        }
        if self.sources.contains_key(&g) {
            if let Some(Source::Chain { slot, .. }) = self.sources.get(&g) {
                if self.chains[*slot].is_none() {
                    // Stale entry left by a retirement race; fall through
                    // to a replay.
                    self.sources.remove(&g);
                } else {
                    return Ok(());
                }
            } else {
                return Ok(());
            }
        }
        match self.fragment_of_gate(g) {
            None => {
                // Macro gates live for the whole session; reaching here
                // means the challenge is outside anything we can answer.
                self.faults
                    .push(format!("challenge on unmaterialized macro gate {g}"));
                Ok(())
            }
            Some(f) => {
                if f < self.current_fragment {
                    self.reset()?;
                    self.replays += 1;
                }
                self.ensure_fragment(f)?;
                Ok(())
            }
        }
    }

    fn ensure_fragment(&mut self, f: u32) -> Result<(), ProverError> {
        while self.executed_steps < self.compiled.trace.steps.len()
            && self.compiled.fragment_of_step[self.executed_steps] <= f
        {
            let s = self.executed_steps;
            let frag = self.compiled.fragment_of_step[s];
            let gates = self.compiled.step_gates[s].clone();
            for g in gates {
                self.materialize_gate(g, Some(frag))?;
            }
            self.executed_steps += 1;
            self.sample();
        }
        if f > self.current_fragment {
            self.current_fragment = f;
            if self.retention == Retention::FragmentGc {
                self.retire_below(f);
            }
        }
        Ok(())
    }

    /// Drops chains and reduced BDDs whose retirement fragment precedes
    /// `f`, then lets the engine reclaim what became unreachable.
    fn retire_below(&mut self, f: u32) {
        let keep = self.chain_retire.split_off(&f);
        let dead_chains = std::mem::replace(&mut self.chain_retire, keep);
        for (_, slots) in dead_chains {
            for slot in slots {
                if let Some(chain) = self.chains[slot].take() {
                    self.store.drop_chain(&mut self.engine, chain);
                }
                for g in self.slot_gates[slot].drain(..) {
                    self.sources.remove(&g);
                }
            }
        }
        let keep = self.func_retire.split_off(&f);
        let dead_funcs = std::mem::replace(&mut self.func_retire, keep);
        for (_, gates) in dead_funcs {
            for g in gates {
                if let Some(n) = self.funcs.remove(&g) {
                    self.engine.decref(n);
                    self.sources.remove(&g);
                }
            }
        }
        self.engine.gc();
        self.sample();
    }

    /// Forgets all execution state and starts the trace over. Peak
    /// statistics survive; the unique table guarantees the replay derives
    /// identical functions.
    fn reset(&mut self) -> Result<(), ProverError> {
        for slot in &mut self.chains {
            if let Some(chain) = slot.take() {
                self.store.drop_chain(&mut self.engine, chain);
            }
        }
        self.chains.clear();
        self.slot_gates.clear();
        for (_, n) in self.funcs.drain() {
            self.engine.decref(n);
        }
        self.sources.clear();
        self.chain_retire.clear();
        self.func_retire.clear();
        self.engine.gc();
        self.executed_steps = 0;
        self.current_fragment = 0;
        self.materialize_macros()?;
        self.sample();
        Ok(())
    }

    /// Handles one encoded frame. Challenges yield an encoded answer;
    /// the verdict yields `None` and ends the session's part.
    pub fn handle_frame(&mut self, frame: &[u8]) -> Result<Option<Vec<u8>>, ProverError> {
        let msg = wire::decode(frame)?;
        let reply = match msg {
            Message::ChallengeEval { gate, free, sigma } => {
                if sigma.len() != self.compiled.n_vars as usize {
                    return Err(ProverError::SigmaLength {
                        given: sigma.len(),
                        needed: self.compiled.n_vars as usize,
                    });
                }
                Some(self.answer_eval(gate, free, &sigma)?)
            }
            Message::ChallengeDistinct { g1, g2 } => Some(self.answer_distinct(g1, g2)?),
            Message::Verdict { .. } => None,
            Message::AnswerPoly(_) | Message::AnswerPoint(_) | Message::AnswerAssignment(_) => {
                return Err(ProverError::UnexpectedMessage)
            }
        };
        Ok(reply.map(|m| wire::encode(&m)))
    }

    fn answer_eval(
        &mut self,
        gate: GateId,
        free: Option<u32>,
        sigma: &[Fp],
    ) -> Result<Message, ProverError> {
        self.ensure_gate(gate)?;
        let poly = match self.sources.get(&gate) {
            Some(&Source::FinalBdd(n)) => bdd_mle_poly(&self.engine, n, sigma, free),
            Some(&Source::Chain { slot, threshold }) => {
                let chain = self.chains[slot].as_ref().expect("live chain");
                answer_challenge(&self.engine, &self.store, chain.root, sigma, free, threshold)
            }
            None => {
                self.faults.push(format!("no source for gate {gate}"));
                Poly2::ZERO
            }
        };
        Ok(match free {
            None => {
                let mut k = poly.eval(Fp::ZERO);
                let idx = self.point_answers;
                self.point_answers += 1;
                if self.tamper
                    == Some(TamperPlan {
                        class: TamperClass::Point,
                        index: idx,
                    })
                {
                    k = k + Fp::ONE;
                }
                Message::AnswerPoint(k)
            }
            Some(_) => {
                let mut p = poly;
                let idx = self.poly_answers;
                self.poly_answers += 1;
                if self.tamper
                    == Some(TamperPlan {
                        class: TamperClass::Poly,
                        index: idx,
                    })
                {
                    p.c[1] = p.c[1] + Fp::ONE;
                }
                Message::AnswerPoly(p)
            }
        })
    }

    fn answer_distinct(&mut self, g1: GateId, g2: GateId) -> Result<Message, ProverError> {
        self.ensure_gate(g1)?;
        self.ensure_gate(g2)?;
        let n = self.compiled.n_vars;
        let (f1, f2) = match (self.funcs.get(&g1), self.funcs.get(&g2)) {
            (Some(&a), Some(&b)) => (a, b),
            _ => {
                self.faults
                    .push(format!("distinctness challenge on gates {g1}, {g2} without functions"));
                return Ok(Message::AnswerAssignment(vec![Fp::ZERO; n as usize]));
            }
        };
        let idx = self.assignment_answers;
        self.assignment_answers += 1;
        if self.tamper
            == Some(TamperPlan {
                class: TamperClass::Distinct,
                index: idx,
            })
        {
            // Corrupt deliberately: hand back a point where the functions
            // agree instead of one where they differ.
            let agree = self.engine.apply(f1, f2, BoolOp::XNOR);
            let w = self
                .engine
                .find_difference(agree, ZERO, n)
                .expect("tampering needs an agreement point; these functions are complementary");
            return Ok(Message::AnswerAssignment(
                w.into_iter().map(Fp::from_bool).collect(),
            ));
        }
        let w = match self.engine.find_difference(f1, f2, n) {
            Some(w) => w,
            // Equal functions have no witness; answer something fixed and
            // let the verifier's agreement check fire.
            None => vec![false; n as usize],
        };
        Ok(Message::AnswerAssignment(
            w.into_iter().map(Fp::from_bool).collect(),
        ))
    }
}
