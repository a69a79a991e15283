//! The verifier side of the certification protocol.
//!
//! The verifier never touches a BDD. It compiles the claimed trace into
//! the delta-expanded circuit, turns the trace's assertions into field
//! evaluation claims, and walks them down the circuit gate by gate,
//! spending a handful of field operations and a few challenge messages
//! per gate. Every rewrite is sound up to a small per-step probability of
//! a lucky polynomial agreement, which is where the reported error bound
//! comes from: a dishonest prover survives a round only by hitting a root
//! of a nonzero polynomial of degree at most two with a fresh random
//! field element.
//!
//! The certification queue processes claim-bearing gates in descending id
//! order, so claims always flow toward children that have not been
//! visited. In incremental mode the work is cut at fragment boundaries
//! (one per recorded assertion): gates certified in an earlier fragment
//! are replaced by placeholders carrying their recorded point, later
//! claims against them are discharged by comparison (re-merged first if
//! they sit at a different point), and all randomness is anchored to one
//! random point per repetition so records stay comparable. After each
//! fragment the verifier injects a claim for any value that later
//! fragments will reference but nothing certified organically, keeping
//! the prover free to drop that fragment's working state.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::io;

use num_bigint::BigUint;

use crate::circuit::{
    arith_op, Assertion, AssertionKind, Circuit, CompiledTrace, GateId, GateKind,
};
use crate::field::{derive_seed, Fp, Poly2, RandomSource, P};
use crate::protocol::wire::{self, Message};
use crate::protocol::ByteChannel;

/// Options for one verification session.
#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    /// Seed for all verifier randomness (the prover gets none).
    pub seed: u64,
    /// Independent repetitions; the error bound is raised to this power.
    pub repetitions: u32,
    /// Incremental mode: fragment-by-fragment certification with
    /// anchored randomness, allowing the prover to collect garbage.
    pub gc: bool,
}

/// Counters the verifier accumulates across a session.
#[derive(Clone, Copy, Debug, Default)]
pub struct VerifyStats {
    /// Messages in both directions, verdict included.
    pub messages: u64,
    /// Frame bytes in both directions.
    pub bytes: u64,
    /// Field additions/multiplications the verifier performed.
    pub field_ops: u64,
    /// Soundness error bound for the whole session.
    pub error_bound: f64,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Verdict {
    pub accept: bool,
    pub reason: String,
}

#[derive(Debug)]
pub struct VerifyOutcome {
    pub verdict: Verdict,
    pub stats: VerifyStats,
    /// Every frame of the session, in order, as sent on the wire.
    pub transcript: Vec<u8>,
}

/// A field-evaluation claim in flight: the gate polynomial allegedly takes
/// `value` at the total point `sigma`.
#[derive(Clone, PartialEq, Eq, Debug)]
struct PointClaim {
    sigma: Vec<Fp>,
    value: Fp,
}

/// The certified point recorded for a gate.
#[derive(Clone, Debug)]
struct Record {
    sigma: Vec<Fp>,
    value: Fp,
}

enum RunErr {
    Reject(String),
    Io(io::Error),
}

impl From<io::Error> for RunErr {
    fn from(e: io::Error) -> RunErr {
        RunErr::Io(e)
    }
}

fn reject<T>(reason: &str) -> Result<T, RunErr> {
    Err(RunErr::Reject(reason.to_string()))
}

/// Per-repetition randomness: fresh draws, or coordinates anchored to one
/// random point so that records from different fragments coincide.
enum DrawMode {
    Fresh(RandomSource),
    Anchored(Vec<Fp>),
}

impl DrawMode {
    fn draw(&mut self, var: u32) -> Fp {
        match self {
            DrawMode::Fresh(rng) => rng.field(),
            DrawMode::Anchored(sigma) => sigma[var as usize],
        }
    }

    fn draw_total(&mut self, n: u32) -> Vec<Fp> {
        match self {
            DrawMode::Fresh(rng) => (0..n).map(|_| rng.field()).collect(),
            DrawMode::Anchored(sigma) => sigma.clone(),
        }
    }
}

struct Session<'a> {
    compiled: &'a CompiledTrace,
    circuit: Circuit,
    records: HashMap<GateId, Record>,
    draw: DrawMode,
    channel: &'a mut dyn ByteChannel,
    stats: &'a mut VerifyStats,
    transcript: &'a mut Vec<u8>,
}

type Queue = BTreeMap<GateId, Vec<PointClaim>>;

impl<'a> Session<'a> {
    fn ops(&mut self, n: u64) {
        self.stats.field_ops += n;
    }

    fn log(&mut self, frame: &[u8]) {
        self.stats.messages += 1;
        self.stats.bytes += frame.len() as u64;
        self.transcript.extend_from_slice(frame);
    }

    fn exchange(&mut self, msg: &Message) -> Result<Message, RunErr> {
        let frame = wire::encode(msg);
        self.log(&frame);
        let reply = self.channel.roundtrip(&frame)?;
        self.log(&reply);
        wire::decode(&reply).map_err(|_| RunErr::Reject("transport".into()))
    }

    fn eval_point(&mut self, gate: GateId, sigma: &[Fp]) -> Result<Fp, RunErr> {
        let reply = self.exchange(&Message::ChallengeEval {
            gate,
            free: None,
            sigma: sigma.to_vec(),
        })?;
        match reply {
            Message::AnswerPoint(k) => Ok(k),
            _ => reject("protocol"),
        }
    }

    fn eval_poly(&mut self, gate: GateId, sigma: &[Fp], free: u32) -> Result<Poly2, RunErr> {
        let reply = self.exchange(&Message::ChallengeEval {
            gate,
            free: Some(free),
            sigma: sigma.to_vec(),
        })?;
        match reply {
            Message::AnswerPoly(p) => Ok(p),
            _ => reject("protocol"),
        }
    }

    /// Turns one fragment's assertions into field-evaluation claims.
    fn normalize(&mut self, assertions: &[&Assertion], queue: &mut Queue) -> Result<(), RunErr> {
        for a in assertions {
            match &a.kind {
                AssertionKind::Eval { gate, bits, expect } => {
                    let sigma: Vec<Fp> = bits.iter().map(|&b| Fp::from_bool(b)).collect();
                    enqueue(
                        queue,
                        *gate,
                        PointClaim {
                            sigma,
                            value: Fp::from_bool(*expect),
                        },
                    );
                }
                AssertionKind::CountIs { gate, count } => {
                    let m = self.circuit.free(*gate).len() as u32;
                    if m > 60 || *count > (BigUint::from(1u32) << m) {
                        return reject("count-range");
                    }
                    // The extension at the all-half point is count / 2^m.
                    let count_fp = Fp::new(u64::try_from(count).expect("count fits after guard"));
                    let value = count_fp * Fp::half().pow(m as u64);
                    self.ops(m as u64 + 1);
                    let sigma = vec![Fp::half(); self.compiled.n_vars as usize];
                    enqueue(queue, *gate, PointClaim { sigma, value });
                }
                AssertionKind::Equiv { lhs, rhs, expect } => {
                    if *expect {
                        // Allegedly equal: both extensions must agree at a
                        // random point.
                        let sigma = self.draw.draw_total(self.compiled.n_vars);
                        let k1 = self.eval_point(*lhs, &sigma)?;
                        let k2 = self.eval_point(*rhs, &sigma)?;
                        if k1 != k2 {
                            return reject("normalize-check");
                        }
                        enqueue(
                            queue,
                            *lhs,
                            PointClaim {
                                sigma: sigma.clone(),
                                value: k1,
                            },
                        );
                        enqueue(queue, *rhs, PointClaim { sigma, value: k2 });
                    } else {
                        // Allegedly different: the prover must produce a
                        // boolean point separating them.
                        let reply = self.exchange(&Message::ChallengeDistinct {
                            g1: *lhs,
                            g2: *rhs,
                        })?;
                        let w = match reply {
                            Message::AnswerAssignment(w) => w,
                            _ => return reject("protocol"),
                        };
                        if w.len() != self.compiled.n_vars as usize
                            || w.iter().any(|&x| x != Fp::ZERO && x != Fp::ONE)
                        {
                            return reject("distinct-witness");
                        }
                        let k1 = self.eval_point(*lhs, &w)?;
                        let k2 = self.eval_point(*rhs, &w)?;
                        if k1 == k2 {
                            return reject("normalize-check");
                        }
                        enqueue(
                            queue,
                            *lhs,
                            PointClaim {
                                sigma: w.clone(),
                                value: k1,
                            },
                        );
                        enqueue(queue, *rhs, PointClaim { sigma: w, value: k2 });
                    }
                }
            }
        }
        Ok(())
    }

    /// Collapses a gate's claims into a single claim at one point,
    /// re-randomizing every free coordinate with a shared draw.
    fn merge(&mut self, gate: GateId, claims: Vec<PointClaim>) -> Result<PointClaim, RunErr> {
        let free = self.circuit.free(gate).to_vec();
        let mut cs = dedupe(claims, &free);
        for &v in &free {
            let r = self.draw.draw(v);
            for c in &mut cs {
                let p = self.eval_poly(gate, &c.sigma, v)?;
                self.ops(8);
                if p.eval(c.sigma[v as usize]) != c.value {
                    return reject("merge-consistency");
                }
                c.sigma[v as usize] = r;
                c.value = p.eval(r);
            }
            cs = dedupe(cs, &free);
        }
        // All surviving claims must now be the same claim.
        let principal = cs.swap_remove(0);
        for other in &cs {
            if other.value != principal.value
                || free
                    .iter()
                    .any(|&v| other.sigma[v as usize] != principal.sigma[v as usize])
            {
                return reject("merge-consistency");
            }
        }
        Ok(principal)
    }

    /// Discharges claims that landed on an already-certified gate.
    fn discharge(
        &mut self,
        gate: GateId,
        claims: Vec<PointClaim>,
        record: &Record,
    ) -> Result<(), RunErr> {
        let free = self.circuit.free(gate).to_vec();
        let at_record_point = |c: &PointClaim| {
            free.iter()
                .all(|&v| c.sigma[v as usize] == record.sigma[v as usize])
        };
        if claims.iter().all(at_record_point) {
            // Anchored randomness puts boundary claims exactly on the
            // recorded point; equality of values settles them.
            if claims.iter().any(|c| c.value != record.value) {
                return reject("stale-epsilon");
            }
            return Ok(());
        }
        // Claims at other points (projection or renaming shifted a
        // coordinate): merge them together with the record and compare.
        let mut all = claims;
        all.push(PointClaim {
            sigma: record.sigma.clone(),
            value: record.value,
        });
        let principal = self.merge(gate, all)?;
        if principal.value != record.value || !at_record_point(&principal) {
            return reject("stale-epsilon");
        }
        Ok(())
    }

    /// One round: rewrite a gate's merged claim into claims on its
    /// children, or settle it at a leaf.
    fn dispatch(
        &mut self,
        gate: GateId,
        principal: PointClaim,
        queue: &mut Queue,
    ) -> Result<(), RunErr> {
        let PointClaim { mut sigma, value } = principal;
        match self.circuit.kind(gate).clone() {
            GateKind::Const(b) => {
                if value != Fp::from_bool(b) {
                    return reject("input-check");
                }
            }
            GateKind::Var(x) => {
                if value != sigma[x as usize] {
                    return reject("input-check");
                }
            }
            GateKind::Not(child) => {
                self.ops(1);
                enqueue(
                    queue,
                    child,
                    PointClaim {
                        sigma,
                        value: Fp::ONE - value,
                    },
                );
            }
            GateKind::Bin(op, a, b) => {
                let k1 = self.eval_point(a, &sigma)?;
                let k2 = self.eval_point(b, &sigma)?;
                self.ops(12);
                if arith_op(op, k1, k2) != value {
                    return reject("binop-consistency");
                }
                enqueue(
                    queue,
                    a,
                    PointClaim {
                        sigma: sigma.clone(),
                        value: k1,
                    },
                );
                enqueue(queue, b, PointClaim { sigma, value: k2 });
            }
            GateKind::Project { child, var, value: bit } => {
                sigma[var as usize] = Fp::from_bool(bit);
                enqueue(queue, child, PointClaim { sigma, value });
            }
            GateKind::Rename { child, from, to } => {
                sigma[from as usize] = sigma[to as usize];
                enqueue(queue, child, PointClaim { sigma, value });
            }
            GateKind::Delta { child, var } => {
                // The reduction is linear in its variable: interpolate the
                // child at 0 and 1 and check the combination, then move
                // the claim to a random point on the child polynomial.
                let p = self.eval_poly(child, &sigma, var)?;
                let x = sigma[var as usize];
                self.ops(12);
                if x * p.eval(Fp::ONE) + (Fp::ONE - x) * p.eval(Fp::ZERO) != value {
                    return reject("degree-consistency");
                }
                let r = self.draw.draw(var);
                sigma[var as usize] = r;
                self.ops(4);
                enqueue(
                    queue,
                    child,
                    PointClaim {
                        sigma,
                        value: p.eval(r),
                    },
                );
            }
            GateKind::Epsilon { .. } => {
                unreachable!("claims on certified gates are discharged before dispatch")
            }
        }
        Ok(())
    }

    /// Runs the certification queue to exhaustion, highest gate first.
    fn drain(&mut self, queue: &mut Queue) -> Result<(), RunErr> {
        while let Some((gate, claims)) = queue.pop_last() {
            if let Some(record) = self.records.get(&gate).cloned() {
                self.discharge(gate, claims, &record)?;
                continue;
            }
            let principal = self.merge(gate, claims)?;
            let record = Record {
                sigma: principal.sigma.clone(),
                value: principal.value,
            };
            self.dispatch(gate, principal, queue)?;
            self.records.insert(gate, record);
            self.circuit.replace_with_epsilon(gate);
        }
        Ok(())
    }

    /// After a fragment's own claims settle, certify any value later
    /// fragments will reference that nothing covered organically, so the
    /// prover can drop the fragment's working state.
    fn inject_boundary_claims(&mut self, fragment: usize) -> Result<(), RunErr> {
        let frag = self.compiled.fragments[fragment];
        for s in frag.first_step..=frag.last_step {
            let Some(name) = self.compiled.trace.steps[s].defines() else {
                continue;
            };
            let gate = self.compiled.names[name];
            let used_later = self
                .compiled
                .last_use
                .get(name)
                .is_some_and(|&last| last > frag.last_step);
            if !used_later || self.records.contains_key(&gate) {
                continue;
            }
            let sigma = self.draw.draw_total(self.compiled.n_vars);
            let k = self.eval_point(gate, &sigma)?;
            let mut queue = Queue::new();
            enqueue(&mut queue, gate, PointClaim { sigma, value: k });
            self.drain(&mut queue)?;
        }
        Ok(())
    }
}

fn enqueue(queue: &mut Queue, gate: GateId, claim: PointClaim) {
    queue.entry(gate).or_default().push(claim);
}

/// Drops duplicate claims (same value, same point on the gate's free
/// coordinates), keeping first occurrences in order.
fn dedupe(claims: Vec<PointClaim>, free: &[u32]) -> Vec<PointClaim> {
    let mut seen: Vec<(Vec<u64>, u64)> = Vec::new();
    let mut out = Vec::with_capacity(claims.len());
    for c in claims {
        let key: Vec<u64> = free.iter().map(|&v| c.sigma[v as usize].value()).collect();
        let tag = (key, c.value.value());
        if !seen.contains(&tag) {
            seen.push(tag);
            out.push(c);
        }
    }
    out
}

/// Soundness error of one repetition: each certification round risks at
/// most four degree-two root collisions per variable, over the gates of
/// the un-expanded circuit, plus the final free-variable sweep.
pub fn error_bound_single(n_vars: u32, plain_gates: usize) -> f64 {
    (4.0 * n_vars as f64 * plain_gates as f64 + n_vars as f64) / P as f64
}

/// Drives a full verification session over a channel and returns the
/// verdict, statistics, and the byte transcript. The verdict frame is the
/// last thing sent in either direction.
pub fn run_verification(
    compiled: &CompiledTrace,
    channel: &mut dyn ByteChannel,
    opts: &VerifyOptions,
) -> io::Result<VerifyOutcome> {
    let mut stats = VerifyStats::default();
    let mut transcript = Vec::new();
    let mut outcome: Result<(), RunErr> = Ok(());

    'reps: for rep in 0..opts.repetitions.max(1) {
        let mut rng = RandomSource::from_seed(derive_seed(opts.seed, rep as u64));
        let draw = if opts.gc {
            let anchor: Vec<Fp> = (0..compiled.n_vars).map(|_| rng.field()).collect();
            DrawMode::Anchored(anchor)
        } else {
            DrawMode::Fresh(rng)
        };
        let mut session = Session {
            compiled,
            circuit: compiled.circuit.clone(),
            records: HashMap::new(),
            draw,
            channel,
            stats: &mut stats,
            transcript: &mut transcript,
        };

        // Group assertions: per fragment in incremental mode, all at once
        // otherwise.
        let groups: Vec<Vec<&Assertion>> = if opts.gc {
            (0..compiled.fragments.len())
                .map(|f| {
                    compiled
                        .assertions
                        .iter()
                        .filter(|a| compiled.fragment_of_step[a.step] as usize == f)
                        .collect()
                })
                .collect()
        } else {
            vec![compiled.assertions.iter().collect()]
        };

        for (f, group) in groups.iter().enumerate() {
            let run = (|| -> Result<(), RunErr> {
                let mut queue = Queue::new();
                session.normalize(group, &mut queue)?;
                session.drain(&mut queue)?;
                if opts.gc {
                    session.inject_boundary_claims(f)?;
                }
                Ok(())
            })();
            if let Err(e) = run {
                outcome = Err(e);
                break 'reps;
            }
        }
    }

    let verdict = match outcome {
        Ok(()) => Verdict {
            accept: true,
            reason: "certified".into(),
        },
        Err(RunErr::Reject(reason)) => Verdict {
            accept: false,
            reason,
        },
        Err(RunErr::Io(e)) => return Err(e),
    };

    let frame = wire::encode(&Message::Verdict {
        accept: verdict.accept,
        reason: verdict.reason.clone(),
    });
    stats.messages += 1;
    stats.bytes += frame.len() as u64;
    transcript.extend_from_slice(&frame);
    channel.send(&frame)?;

    stats.error_bound =
        error_bound_single(compiled.n_vars, compiled.plain.len()).powi(opts.repetitions.max(1) as i32);

    Ok(VerifyOutcome {
        verdict,
        stats,
        transcript,
    })
}
