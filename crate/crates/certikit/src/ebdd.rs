//! Extended BDDs: the prover's record of one `apply`.
//!
//! A plain `apply(f, g, op)` forgets its own working: the result is a fully
//! reduced BDD, but the certification protocol challenges the prover on the
//! *intermediate* polynomials of the delta chain — the raw arithmetized
//! product of the operands and each partial multilinearization between it
//! and the final extension. An [`EbddChain`] keeps exactly enough structure
//! to answer those challenges without redoing the apply: the recursion tree
//! of cofactor pairs, with every node linked to its reduced form.
//!
//! Each cache-missing recursion of [`apply_ebdd`] allocates one *operator*
//! node (the unexpanded pair `u (x) v`), one *standard* node (its one-step
//! Shannon expansion at the split variable), and at most one node in the
//! ordinary BDD engine (the reduced form, hash-consed as usual) — at most
//! three nodes per recursion, and the final BDD is reference-identical to
//! what `Engine::apply` would have produced, since it is built through the
//! same unique table.
//!
//! [`answer_challenge`] evaluates any chain stage at a field point with one
//! coordinate left symbolic, returning a degree-≤2 polynomial. A stage is
//! named by a threshold: `None` is the raw product, `Some(t)` means the
//! reduction has been applied at every chain variable `<= t`. Because the
//! delta chain runs innermost-smallest, the threshold for a chain gate is
//! simply its own variable. The walk is stateless — memo tables live only
//! for the single call — so a chain answers any number of challenges in
//! any order.

use std::collections::HashMap;

use crate::bdd::{BoolOp, Engine, NodeRef, ONE, ZERO};
use crate::circuit::arith_op_poly;
use crate::field::{Fp, Poly2};

/// A reference into an [`EbddStore`], or directly to a reduced BDD node.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum EbddRef {
    /// An unexpanded operator node `u (x) v`.
    Op(u32),
    /// A one-step Shannon expansion.
    Std(u32),
    /// A fully reduced node in the BDD engine.
    Final(NodeRef),
}

#[derive(Debug)]
struct OpNode {
    lhs: NodeRef,
    rhs: NodeRef,
    op: BoolOp,
    /// Smallest variable of either operand; the expansion variable.
    split: u32,
    /// Index of the standard node this expands to.
    link: u32,
    dead: bool,
}

#[derive(Debug)]
struct StdNode {
    var: u32,
    lo: EbddRef,
    hi: EbddRef,
    /// The fully reduced form of this node, in the BDD engine.
    link: NodeRef,
    dead: bool,
}

/// Arena for extended-BDD nodes. Chains allocate contiguous ranges and are
/// freed as units; the store tracks live and peak node counts so a prover
/// can report its memory behaviour.
#[derive(Debug, Default)]
pub struct EbddStore {
    ops: Vec<OpNode>,
    stds: Vec<StdNode>,
    live: usize,
    peak: usize,
}

/// An owning handle to one recorded apply: the root of the recursion tree,
/// the reduced result, and the node ranges to release on drop.
#[derive(Debug)]
pub struct EbddChain {
    pub root: EbddRef,
    pub final_node: NodeRef,
    ops: (u32, u32),
    stds: (u32, u32),
}

impl EbddChain {
    /// Store nodes owned by this chain (operator + standard).
    pub fn store_nodes(&self) -> usize {
        (self.ops.1 - self.ops.0) as usize + (self.stds.1 - self.stds.0) as usize
    }
}

impl EbddStore {
    pub fn new() -> EbddStore {
        EbddStore::default()
    }

    /// Extended nodes currently alive.
    pub fn live_nodes(&self) -> usize {
        self.live
    }

    /// High-water mark of live extended nodes.
    pub fn peak_nodes(&self) -> usize {
        self.peak
    }

    /// The fully reduced BDD node a reference stands for.
    pub fn final_of(&self, r: EbddRef) -> NodeRef {
        match r {
            EbddRef::Final(n) => n,
            EbddRef::Std(i) => self.stds[i as usize].link,
            EbddRef::Op(i) => {
                let std = self.ops[i as usize].link;
                self.stds[std as usize].link
            }
        }
    }

    fn bump(&mut self, added: usize) {
        self.live += added;
        self.peak = self.peak.max(self.live);
    }

    /// Releases a chain: marks its nodes dead and drops every BDD
    /// reference they held, so a following `Engine::gc` can reclaim the
    /// reduced forms nothing else uses.
    pub fn drop_chain(&mut self, engine: &mut Engine, chain: EbddChain) {
        for i in chain.ops.0..chain.ops.1 {
            let node = &mut self.ops[i as usize];
            debug_assert!(!node.dead, "chain dropped twice");
            node.dead = true;
            let (lhs, rhs) = (node.lhs, node.rhs);
            engine.decref(lhs);
            engine.decref(rhs);
            self.live -= 1;
        }
        for i in chain.stds.0..chain.stds.1 {
            let node = &mut self.stds[i as usize];
            debug_assert!(!node.dead, "chain dropped twice");
            node.dead = true;
            let (link, lo, hi) = (node.link, node.lo, node.hi);
            engine.decref(link);
            if let EbddRef::Final(n) = lo {
                engine.decref(n);
            }
            if let EbddRef::Final(n) = hi {
                engine.decref(n);
            }
            self.live -= 1;
        }
        engine.decref(chain.final_node);
    }
}

/// Applies a binary operator while recording the recursion tree.
///
/// The reduced result (`EbddChain::final_node`) is reference-identical to
/// `engine.apply(f, g, op)` because both go through the same unique table.
/// Every BDD node the chain keeps a handle on is reference-counted; the
/// chain must eventually be released with [`EbddStore::drop_chain`].
pub fn apply_ebdd(
    engine: &mut Engine,
    store: &mut EbddStore,
    f: NodeRef,
    g: NodeRef,
    op: BoolOp,
) -> EbddChain {
    let ops_start = store.ops.len() as u32;
    let stds_start = store.stds.len() as u32;
    let mut memo: HashMap<(NodeRef, NodeRef), EbddRef> = HashMap::new();
    let root = rec_apply(engine, store, f, g, op, &mut memo);
    let final_node = store.final_of(root);
    engine.incref(final_node);
    EbddChain {
        root,
        final_node,
        ops: (ops_start, store.ops.len() as u32),
        stds: (stds_start, store.stds.len() as u32),
    }
}

fn rec_apply(
    engine: &mut Engine,
    store: &mut EbddStore,
    u: NodeRef,
    v: NodeRef,
    op: BoolOp,
    memo: &mut HashMap<(NodeRef, NodeRef), EbddRef>,
) -> EbddRef {
    if engine.is_terminal(u) && engine.is_terminal(v) {
        let bit = op.bit(u == ONE, v == ONE);
        return EbddRef::Final(if bit { ONE } else { ZERO });
    }
    if let Some(&r) = memo.get(&(u, v)) {
        return r;
    }
    let vu = engine.var(u).unwrap_or(u32::MAX);
    let vv = engine.var(v).unwrap_or(u32::MAX);
    let split = vu.min(vv);
    let (u0, u1) = if vu == split {
        (engine.lo(u), engine.hi(u))
    } else {
        (u, u)
    };
    let (v0, v1) = if vv == split {
        (engine.lo(v), engine.hi(v))
    } else {
        (v, v)
    };
    let lo = rec_apply(engine, store, u0, v0, op, memo);
    let hi = rec_apply(engine, store, u1, v1, op, memo);
    let flo = store.final_of(lo);
    let fhi = store.final_of(hi);
    let link = engine.mk(split, flo, fhi);
    engine.incref(link);
    if let EbddRef::Final(n) = lo {
        engine.incref(n);
    }
    if let EbddRef::Final(n) = hi {
        engine.incref(n);
    }
    let std_idx = store.stds.len() as u32;
    store.stds.push(StdNode {
        var: split,
        lo,
        hi,
        link,
        dead: false,
    });
    engine.incref(u);
    engine.incref(v);
    let op_idx = store.ops.len() as u32;
    store.ops.push(OpNode {
        lhs: u,
        rhs: v,
        op,
        split,
        link: std_idx,
        dead: false,
    });
    store.bump(2);
    let r = EbddRef::Op(op_idx);
    memo.insert((u, v), r);
    r
}

/// The multilinear extension of a BDD node, evaluated at `sigma` with
/// `free_var` (when given) left symbolic.
pub fn bdd_mle_poly(
    engine: &Engine,
    node: NodeRef,
    sigma: &[Fp],
    free_var: Option<u32>,
) -> Poly2 {
    let mut memo = HashMap::new();
    mle_rec(engine, node, sigma, free_var, &mut memo)
}

fn combine_var(var: u32, sigma: &[Fp], free_var: Option<u32>, lo: Poly2, hi: Poly2) -> Poly2 {
    if free_var == Some(var) {
        // Children live strictly below the variable, so they are constant
        // in it and the products stay within degree two.
        let x = Poly2::x();
        let one_minus_x = Poly2::constant(Fp::ONE).sub(&x);
        hi.mul(&x).add(&lo.mul(&one_minus_x))
    } else {
        let s = sigma[var as usize];
        hi.scale(s).add(&lo.scale(Fp::ONE - s))
    }
}

fn mle_rec(
    engine: &Engine,
    node: NodeRef,
    sigma: &[Fp],
    free_var: Option<u32>,
    memo: &mut HashMap<NodeRef, Poly2>,
) -> Poly2 {
    if node == ZERO {
        return Poly2::ZERO;
    }
    if node == ONE {
        return Poly2::constant(Fp::ONE);
    }
    if let Some(p) = memo.get(&node) {
        return *p;
    }
    let var = engine.var(node).unwrap();
    let lo = mle_rec(engine, engine.lo(node), sigma, free_var, memo);
    let hi = mle_rec(engine, engine.hi(node), sigma, free_var, memo);
    let p = combine_var(var, sigma, free_var, lo, hi);
    memo.insert(node, p);
    p
}

/// Evaluates one stage of a chain at a field point.
///
/// `threshold = None` selects the raw stage (the operator's arithmetization
/// applied to the operands' multilinear extensions, nothing reduced yet);
/// `Some(t)` selects the stage with every chain variable `<= t` reduced.
/// `free_var` leaves one coordinate of `sigma` symbolic; the result is the
/// stage polynomial in that coordinate, degree at most two.
pub fn answer_challenge(
    engine: &Engine,
    store: &EbddStore,
    root: EbddRef,
    sigma: &[Fp],
    free_var: Option<u32>,
    threshold: Option<u32>,
) -> Poly2 {
    let mut node_memo: HashMap<EbddRef, Poly2> = HashMap::new();
    let mut final_memo: HashMap<NodeRef, Poly2> = HashMap::new();
    stage_rec(
        engine, store, root, sigma, free_var, threshold, &mut node_memo, &mut final_memo,
    )
}

#[allow(clippy::too_many_arguments)]
fn stage_rec(
    engine: &Engine,
    store: &EbddStore,
    r: EbddRef,
    sigma: &[Fp],
    free_var: Option<u32>,
    threshold: Option<u32>,
    node_memo: &mut HashMap<EbddRef, Poly2>,
    final_memo: &mut HashMap<NodeRef, Poly2>,
) -> Poly2 {
    if let Some(p) = node_memo.get(&r) {
        return *p;
    }
    let p = match r {
        EbddRef::Final(n) => mle_rec(engine, n, sigma, free_var, final_memo),
        EbddRef::Op(i) => {
            let node = &store.ops[i as usize];
            debug_assert!(!node.dead, "challenge on a released chain");
            if threshold.is_some_and(|t| node.split <= t) {
                stage_rec(
                    engine,
                    store,
                    EbddRef::Std(node.link),
                    sigma,
                    free_var,
                    threshold,
                    node_memo,
                    final_memo,
                )
            } else {
                // Not yet reduced here: the stage polynomial is the raw
                // arithmetized product of the operand extensions.
                let p = mle_rec(engine, node.lhs, sigma, free_var, final_memo);
                let q = mle_rec(engine, node.rhs, sigma, free_var, final_memo);
                arith_op_poly(node.op, &p, &q)
            }
        }
        EbddRef::Std(i) => {
            let node = &store.stds[i as usize];
            debug_assert!(!node.dead, "challenge on a released chain");
            let (var, lo_ref, hi_ref) = (node.var, node.lo, node.hi);
            let lo = stage_rec(
                engine, store, lo_ref, sigma, free_var, threshold, node_memo, final_memo,
            );
            let hi = stage_rec(
                engine, store, hi_ref, sigma, free_var, threshold, node_memo, final_memo,
            );
            combine_var(var, sigma, free_var, lo, hi)
        }
    };
    node_memo.insert(r, p);
    p
}

/// Reference oracle for chain stages, built the slow way.
///
/// Expands the reduction prefix literally: summing over the boolean cube of
/// the reduced variables (the operands' joint support intersected with
/// `<= threshold`), weighting each corner, and evaluating the raw
/// arithmetized product there. Exponential in the reduced support; meant
/// for tests only.
pub fn stage_oracle(
    engine: &Engine,
    f: NodeRef,
    g: NodeRef,
    op: BoolOp,
    sigma: &[Fp],
    free_var: Option<u32>,
    threshold: Option<u32>,
) -> Poly2 {
    let mut support: Vec<u32> = engine.support(f);
    for v in engine.support(g) {
        if let Err(pos) = support.binary_search(&v) {
            support.insert(pos, v);
        }
    }
    let reduced: Vec<u32> = match threshold {
        None => Vec::new(),
        Some(t) => support.into_iter().filter(|&v| v <= t).collect(),
    };
    assert!(reduced.len() <= 20, "stage oracle cube too large");
    let mut acc = Poly2::ZERO;
    let mut point = sigma.to_vec();
    for corner in 0..(1u32 << reduced.len()) {
        let mut weight = Poly2::constant(Fp::ONE);
        for (i, &v) in reduced.iter().enumerate() {
            let bit = (corner >> i) & 1 == 1;
            point[v as usize] = Fp::from_bool(bit);
            let factor = if free_var == Some(v) {
                let x = Poly2::x();
                if bit {
                    x
                } else {
                    Poly2::constant(Fp::ONE).sub(&x)
                }
            } else {
                let s = sigma[v as usize];
                Poly2::constant(if bit { s } else { Fp::ONE - s })
            };
            weight = weight.mul(&factor);
        }
        // Inside the cube the reduced coordinates are boolean, so the
        // symbolic variable survives only if it was not reduced.
        let inner_free = match free_var {
            Some(x) if reduced.contains(&x) => None,
            other => other,
        };
        let p = bdd_mle_poly(engine, f, &point, inner_free);
        let q = bdd_mle_poly(engine, g, &point, inner_free);
        let raw = arith_op_poly(op, &p, &q);
        acc = acc.add(&weight.mul(&raw));
        for &v in &reduced {
            point[v as usize] = sigma[v as usize];
        }
    }
    acc
}
