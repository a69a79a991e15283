//! Reduced ordered binary decision diagrams.
//!
//! Nodes live in an arena indexed by [`NodeRef`]; the two terminals occupy
//! slots 0 (false) and 1 (true). Interior nodes follow the ordering
//! convention that the root carries the *smallest* variable index on any
//! path and children carry strictly larger ones. Together with the "no
//! redundant node" and "no duplicate node" rules this makes every boolean
//! function canonical: two functions are equal iff their refs are equal.
//!
//! Memory is reclaimed by reference counting plus an explicit [`Engine::gc`]
//! sweep. A node's count covers both external handles ([`Engine::incref`])
//! and parent edges inside the arena; operations return refs with no
//! external count of their own, so callers that keep a result across a
//! `gc()` must incref it.
//!
//! Binary operations share one direct-mapped computation cache (overwrite on
//! collision), and `apply` is instrumented: [`Engine::apply_call_count`]
//! reports how many cache-missing recursive calls have run, which is bounded
//! by the product of the operand sizes.

use std::collections::HashMap;

use thiserror::Error;

/// Index of a node in the engine arena. `0` and `1` are the terminals.
pub type NodeRef = u32;

/// The false terminal.
pub const ZERO: NodeRef = 0;
/// The true terminal.
pub const ONE: NodeRef = 1;

/// Variable sentinel for terminals.
const VAR_TERMINAL: u32 = u32::MAX;
/// Variable sentinel for freed arena slots.
const VAR_FREE: u32 = u32::MAX - 1;
/// Largest usable variable index.
pub const MAX_VAR: u32 = u32::MAX - 4;

/// One of the sixteen binary boolean operators, encoded as a truth table.
///
/// Bit `2a + b` of the table holds `op(a, b)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct BoolOp(u8);

impl BoolOp {
    pub const FALSE: BoolOp = BoolOp(0b0000);
    pub const NOR: BoolOp = BoolOp(0b0001);
    pub const NRIMP: BoolOp = BoolOp(0b0010); // !f & g
    pub const NLEFT: BoolOp = BoolOp(0b0011); // !f
    pub const NIMP: BoolOp = BoolOp(0b0100); // f & !g
    pub const NRIGHT: BoolOp = BoolOp(0b0101); // !g
    pub const XOR: BoolOp = BoolOp(0b0110);
    pub const NAND: BoolOp = BoolOp(0b0111);
    pub const AND: BoolOp = BoolOp(0b1000);
    pub const XNOR: BoolOp = BoolOp(0b1001);
    pub const RIGHT: BoolOp = BoolOp(0b1010); // g
    pub const IMP: BoolOp = BoolOp(0b1011); // f -> g
    pub const LEFT: BoolOp = BoolOp(0b1100); // f
    pub const RIMP: BoolOp = BoolOp(0b1101); // g -> f
    pub const OR: BoolOp = BoolOp(0b1110);
    pub const TRUE: BoolOp = BoolOp(0b1111);

    /// All sixteen operators in truth-table order.
    pub fn all() -> impl Iterator<Item = BoolOp> {
        (0u8..16).map(BoolOp)
    }

    pub fn from_table(table: u8) -> BoolOp {
        BoolOp(table & 0xF)
    }

    pub fn table(self) -> u8 {
        self.0
    }

    /// Applies the operator to two booleans.
    #[inline]
    pub fn bit(self, a: bool, b: bool) -> bool {
        (self.0 >> (((a as u8) << 1) | b as u8)) & 1 == 1
    }

    /// Canonical textual name, as used in trace files.
    pub fn name(self) -> &'static str {
        match self.0 {
            0b0000 => "false2",
            0b0001 => "nor2",
            0b0010 => "nrimp2",
            0b0011 => "nleft2",
            0b0100 => "nimp2",
            0b0101 => "nright2",
            0b0110 => "xor2",
            0b0111 => "nand2",
            0b1000 => "and2",
            0b1001 => "xnor2",
            0b1010 => "right2",
            0b1011 => "imp2",
            0b1100 => "left2",
            0b1101 => "rimp2",
            0b1110 => "or2",
            0b1111 => "true2",
            _ => unreachable!(),
        }
    }

    pub fn from_name(name: &str) -> Option<BoolOp> {
        BoolOp::all().find(|op| op.name() == name)
    }
}

impl std::fmt::Display for BoolOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Error, Debug, PartialEq, Eq)]
pub enum BddError {
    #[error("rename target x{target} already occurs in the support")]
    RenameTargetInSupport { target: u32 },
    #[error("rename x{from} -> x{to} crosses support variable x{between}")]
    RenameCrossesSupport { from: u32, to: u32, between: u32 },
    #[error("assignment covers {given} variables but the function depends on x{needed}")]
    AssignmentTooShort { given: usize, needed: u32 },
    #[error("count over {given} variables but the function depends on x{needed}")]
    DomainTooSmall { given: u32, needed: u32 },
}

#[derive(Clone, Copy)]
struct Node {
    var: u32,
    lo: NodeRef,
    hi: NodeRef,
    rc: u32,
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct CacheEntry {
    tag: u64,
    a: NodeRef,
    b: NodeRef,
    result: NodeRef,
}

const CACHE_EMPTY: CacheEntry = CacheEntry {
    tag: u64::MAX,
    a: 0,
    b: 0,
    result: 0,
};

/// Cache tag kinds (upper byte of the tag word).
const TAG_APPLY: u64 = 0;
const TAG_RESTRICT: u64 = 1;
const TAG_RENAME: u64 = 2;

/// A reduced ordered BDD engine: arena, unique table, operation cache.
pub struct Engine {
    nodes: Vec<Node>,
    unique: HashMap<(u32, NodeRef, NodeRef), NodeRef>,
    cache: Vec<CacheEntry>,
    cache_mask: usize,
    free_list: Vec<NodeRef>,
    live: usize,
    peak_live: usize,
    apply_calls: u64,
    ops_since_validate: u64,
}

impl Default for Engine {
    fn default() -> Engine {
        Engine::new()
    }
}

impl Engine {
    /// Engine with the default 2^20-entry operation cache.
    pub fn new() -> Engine {
        Engine::with_cache_capacity(1 << 20)
    }

    /// Engine with a caller-chosen cache size (rounded up to a power of two).
    pub fn with_cache_capacity(entries: usize) -> Engine {
        let cap = entries.next_power_of_two().max(2);
        let terminal = |_| Node {
            var: VAR_TERMINAL,
            lo: 0,
            hi: 0,
            rc: 0,
        };
        Engine {
            nodes: vec![terminal(0), terminal(1)],
            unique: HashMap::new(),
            cache: vec![CACHE_EMPTY; cap],
            cache_mask: cap - 1,
            free_list: Vec::new(),
            live: 0,
            peak_live: 0,
            apply_calls: 0,
            ops_since_validate: 0,
        }
    }

    /// The terminal for a boolean constant.
    pub fn constant(&self, b: bool) -> NodeRef {
        b as NodeRef
    }

    pub fn is_terminal(&self, f: NodeRef) -> bool {
        f <= ONE
    }

    /// The variable at a node, or `None` for terminals.
    pub fn var(&self, f: NodeRef) -> Option<u32> {
        let v = self.nodes[f as usize].var;
        if v == VAR_TERMINAL {
            None
        } else {
            debug_assert_ne!(v, VAR_FREE, "dangling node reference");
            Some(v)
        }
    }

    /// Low (variable = 0) child. Panics on terminals.
    pub fn lo(&self, f: NodeRef) -> NodeRef {
        debug_assert!(!self.is_terminal(f));
        self.nodes[f as usize].lo
    }

    /// High (variable = 1) child. Panics on terminals.
    pub fn hi(&self, f: NodeRef) -> NodeRef {
        debug_assert!(!self.is_terminal(f));
        self.nodes[f as usize].hi
    }

    /// The single-variable function x_var.
    pub fn mk_var(&mut self, var: u32) -> NodeRef {
        self.mk(var, ZERO, ONE)
    }

    /// Hash-consing constructor; enforces the reduction and ordering rules.
    pub fn mk(&mut self, var: u32, lo: NodeRef, hi: NodeRef) -> NodeRef {
        assert!(var <= MAX_VAR, "variable index out of range");
        debug_assert!(self.node_is_live(lo) && self.node_is_live(hi));
        debug_assert!(
            self.var(lo).map_or(true, |v| v > var) && self.var(hi).map_or(true, |v| v > var),
            "ordering violation: children must carry larger variables"
        );
        if lo == hi {
            return lo;
        }
        if let Some(&r) = self.unique.get(&(var, lo, hi)) {
            return r;
        }
        let slot = match self.free_list.pop() {
            Some(s) => {
                self.nodes[s as usize] = Node { var, lo, hi, rc: 0 };
                s
            }
            None => {
                let s = self.nodes.len() as NodeRef;
                self.nodes.push(Node { var, lo, hi, rc: 0 });
                s
            }
        };
        // Parent edges hold counts on their children (terminals are pinned).
        self.bump(lo);
        self.bump(hi);
        self.unique.insert((var, lo, hi), slot);
        self.live += 1;
        self.peak_live = self.peak_live.max(self.live);
        slot
    }

    #[inline]
    fn bump(&mut self, f: NodeRef) {
        if !self.is_terminal(f) {
            self.nodes[f as usize].rc += 1;
        }
    }

    /// Takes an external reference on a node, protecting it from `gc`.
    pub fn incref(&mut self, f: NodeRef) {
        self.bump(f);
    }

    /// Releases an external reference. The node is only reclaimed by a
    /// later [`Engine::gc`] sweep.
    pub fn decref(&mut self, f: NodeRef) {
        if !self.is_terminal(f) {
            let rc = &mut self.nodes[f as usize].rc;
            debug_assert!(*rc > 0, "decref without matching reference");
            *rc -= 1;
        }
    }

    fn node_is_live(&self, f: NodeRef) -> bool {
        (f as usize) < self.nodes.len() && self.nodes[f as usize].var != VAR_FREE
    }

    /// Frees every node whose reference count is zero, transitively, and
    /// drops unique-table and cache entries that mention freed slots.
    /// Returns the number of nodes reclaimed.
    pub fn gc(&mut self) -> usize {
        let mut work: Vec<NodeRef> = Vec::new();
        for (i, n) in self.nodes.iter().enumerate().skip(2) {
            if n.var != VAR_FREE && n.rc == 0 {
                work.push(i as NodeRef);
            }
        }
        let mut freed = 0usize;
        while let Some(f) = work.pop() {
            let n = self.nodes[f as usize];
            if n.var == VAR_FREE || n.rc != 0 {
                continue;
            }
            self.unique.remove(&(n.var, n.lo, n.hi));
            self.nodes[f as usize].var = VAR_FREE;
            self.free_list.push(f);
            self.live -= 1;
            freed += 1;
            for child in [n.lo, n.hi] {
                if !self.is_terminal(child) {
                    let rc = &mut self.nodes[child as usize].rc;
                    *rc -= 1;
                    if *rc == 0 {
                        work.push(child);
                    }
                }
            }
        }
        if freed > 0 {
            // Freed slots may be recycled; stale cache lines would then
            // alias new nodes, so purge every line touching a freed slot.
            for e in self.cache.iter_mut() {
                if e.tag == u64::MAX {
                    continue;
                }
                let gone = |r: NodeRef, nodes: &Vec<Node>| {
                    r > ONE && nodes[r as usize].var == VAR_FREE
                };
                if gone(e.a, &self.nodes) || gone(e.b, &self.nodes) || gone(e.result, &self.nodes)
                {
                    *e = CACHE_EMPTY;
                }
            }
        }
        freed
    }

    /// Number of live interior nodes plus the two terminals.
    pub fn live_nodes(&self) -> usize {
        self.live + 2
    }

    /// High-water mark of live interior nodes.
    pub fn peak_live_nodes(&self) -> usize {
        self.peak_live
    }

    /// Cache-missing recursive `apply` invocations so far.
    pub fn apply_call_count(&self) -> u64 {
        self.apply_calls
    }

    pub fn reset_apply_call_count(&mut self) {
        self.apply_calls = 0;
    }

    #[inline]
    fn cache_slot(&self, tag: u64, a: NodeRef, b: NodeRef) -> usize {
        let mut h = tag
            .wrapping_mul(0x9e3779b97f4a7c15)
            .wrapping_add((a as u64) << 32 | b as u64);
        h ^= h >> 29;
        h = h.wrapping_mul(0xbf58476d1ce4e5b9);
        (h ^ (h >> 32)) as usize & self.cache_mask
    }

    #[inline]
    fn cache_get(&self, tag: u64, a: NodeRef, b: NodeRef) -> Option<NodeRef> {
        let e = &self.cache[self.cache_slot(tag, a, b)];
        if e.tag == tag && e.a == a && e.b == b {
            Some(e.result)
        } else {
            None
        }
    }

    #[inline]
    fn cache_put(&mut self, tag: u64, a: NodeRef, b: NodeRef, result: NodeRef) {
        let slot = self.cache_slot(tag, a, b);
        self.cache[slot] = CacheEntry { tag, a, b, result };
    }

    /// Cofactors of `f` by variable `v` (which must be no larger than the
    /// root variable of `f`).
    #[inline]
    fn cofactors(&self, f: NodeRef, v: u32) -> (NodeRef, NodeRef) {
        let n = &self.nodes[f as usize];
        if n.var == v {
            (n.lo, n.hi)
        } else {
            (f, f)
        }
    }

    /// Combines two BDDs under any of the sixteen binary operators.
    pub fn apply(&mut self, f: NodeRef, g: NodeRef, op: BoolOp) -> NodeRef {
        self.maybe_validate();
        self.apply_rec(f, g, op)
    }

    fn apply_rec(&mut self, f: NodeRef, g: NodeRef, op: BoolOp) -> NodeRef {
        if self.is_terminal(f) && self.is_terminal(g) {
            return self.constant(op.bit(f == ONE, g == ONE));
        }
        let tag = TAG_APPLY << 56 | op.table() as u64;
        if let Some(r) = self.cache_get(tag, f, g) {
            return r;
        }
        self.apply_calls += 1;
        let vf = self.nodes[f as usize].var;
        let vg = self.nodes[g as usize].var;
        let v = vf.min(vg);
        let (f0, f1) = self.cofactors(f, v);
        let (g0, g1) = self.cofactors(g, v);
        let lo = self.apply_rec(f0, g0, op);
        let hi = self.apply_rec(f1, g1, op);
        let r = self.mk(v, lo, hi);
        self.cache_put(tag, f, g, r);
        r
    }

    /// Boolean negation.
    pub fn negate(&mut self, f: NodeRef) -> NodeRef {
        self.apply(f, ONE, BoolOp::NAND)
    }

    /// Replaces variable `var` by the constant `value`.
    pub fn restrict(&mut self, f: NodeRef, var: u32, value: bool) -> NodeRef {
        self.maybe_validate();
        self.restrict_rec(f, var, value)
    }

    fn restrict_rec(&mut self, f: NodeRef, var: u32, value: bool) -> NodeRef {
        if self.is_terminal(f) || self.nodes[f as usize].var > var {
            return f;
        }
        let tag = TAG_RESTRICT << 56 | (var as u64) << 1 | value as u64;
        if let Some(r) = self.cache_get(tag, f, 0) {
            return r;
        }
        let n = self.nodes[f as usize];
        let r = if n.var == var {
            if value {
                n.hi
            } else {
                n.lo
            }
        } else {
            let lo = self.restrict_rec(n.lo, var, value);
            let hi = self.restrict_rec(n.hi, var, value);
            self.mk(n.var, lo, hi)
        };
        self.cache_put(tag, f, 0, r);
        r
    }

    /// Sorted list of the variables `f` depends on.
    pub fn support(&self, f: NodeRef) -> Vec<u32> {
        let mut seen = std::collections::HashSet::new();
        let mut vars = std::collections::BTreeSet::new();
        let mut stack = vec![f];
        while let Some(w) = stack.pop() {
            if self.is_terminal(w) || !seen.insert(w) {
                continue;
            }
            let n = &self.nodes[w as usize];
            vars.insert(n.var);
            stack.push(n.lo);
            stack.push(n.hi);
        }
        vars.into_iter().collect()
    }

    /// Renames variable `from` to `to`.
    ///
    /// Sound only when the move cannot disturb the global order, so it is a
    /// domain error if `to` already occurs in the support or if any support
    /// variable lies strictly between `from` and `to`.
    pub fn rename(&mut self, f: NodeRef, from: u32, to: u32) -> Result<NodeRef, BddError> {
        if from == to {
            return Ok(f);
        }
        let support = self.support(f);
        if !support.contains(&from) {
            return Ok(f);
        }
        if support.contains(&to) {
            return Err(BddError::RenameTargetInSupport { target: to });
        }
        let (a, b) = (from.min(to), from.max(to));
        if let Some(&between) = support.iter().find(|&&v| a < v && v < b) {
            return Err(BddError::RenameCrossesSupport {
                from,
                to,
                between,
            });
        }
        self.maybe_validate();
        Ok(self.rename_rec(f, from, to))
    }

    fn rename_rec(&mut self, f: NodeRef, from: u32, to: u32) -> NodeRef {
        if self.is_terminal(f) || self.nodes[f as usize].var > from {
            return f;
        }
        let tag = TAG_RENAME << 56 | (from as u64) << 28 | to as u64;
        if let Some(r) = self.cache_get(tag, f, 0) {
            return r;
        }
        let n = self.nodes[f as usize];
        let r = if n.var == from {
            self.mk(to, n.lo, n.hi)
        } else {
            let lo = self.rename_rec(n.lo, from, to);
            let hi = self.rename_rec(n.hi, from, to);
            self.mk(n.var, lo, hi)
        };
        self.cache_put(tag, f, 0, r);
        r
    }

    /// Existential quantification over one variable.
    pub fn exists(&mut self, f: NodeRef, var: u32) -> NodeRef {
        let f0 = self.restrict(f, var, false);
        let f1 = self.restrict(f, var, true);
        self.apply(f0, f1, BoolOp::OR)
    }

    /// Universal quantification over one variable.
    pub fn forall(&mut self, f: NodeRef, var: u32) -> NodeRef {
        let f0 = self.restrict(f, var, false);
        let f1 = self.restrict(f, var, true);
        self.apply(f0, f1, BoolOp::AND)
    }

    /// Substitutes the function `g` for variable `var` in `f`.
    pub fn compose(&mut self, f: NodeRef, var: u32, g: NodeRef) -> NodeRef {
        let f1 = self.restrict(f, var, true);
        let f0 = self.restrict(f, var, false);
        let ng = self.negate(g);
        let then_part = self.apply(g, f1, BoolOp::AND);
        let else_part = self.apply(ng, f0, BoolOp::AND);
        self.apply(then_part, else_part, BoolOp::OR)
    }

    /// Evaluates under a total assignment (index i gives variable x_i).
    pub fn evaluate(&self, f: NodeRef, assignment: &[bool]) -> Result<bool, BddError> {
        let mut w = f;
        while !self.is_terminal(w) {
            let n = &self.nodes[w as usize];
            let bit = *assignment.get(n.var as usize).ok_or(
                BddError::AssignmentTooShort {
                    given: assignment.len(),
                    needed: n.var,
                },
            )?;
            w = if bit { n.hi } else { n.lo };
        }
        Ok(w == ONE)
    }

    /// Counts satisfying assignments over the variable domain `x_0..x_n`.
    pub fn count_solutions(&self, f: NodeRef, n: u32) -> Result<num_bigint::BigUint, BddError> {
        if let Some(&max) = self.support(f).last() {
            if max >= n {
                return Err(BddError::DomainTooSmall { given: n, needed: max });
            }
        }
        // paths(w) counts assignments of the variables from var(w) up.
        fn paths(
            eng: &Engine,
            w: NodeRef,
            n: u32,
            memo: &mut HashMap<NodeRef, num_bigint::BigUint>,
        ) -> num_bigint::BigUint {
            use num_bigint::BigUint;
            if w == ZERO {
                return BigUint::from(0u32);
            }
            if w == ONE {
                return BigUint::from(1u32);
            }
            if let Some(c) = memo.get(&w) {
                return c.clone();
            }
            let node = &eng.nodes[w as usize];
            let level = |r: NodeRef| -> u32 {
                if eng.is_terminal(r) {
                    n
                } else {
                    eng.nodes[r as usize].var
                }
            };
            let lo = paths(eng, node.lo, n, memo) << (level(node.lo) - node.var - 1);
            let hi = paths(eng, node.hi, n, memo) << (level(node.hi) - node.var - 1);
            let total = lo + hi;
            memo.insert(w, total.clone());
            total
        }
        let mut memo = HashMap::new();
        let below = paths(self, f, n, &mut memo);
        let top = if self.is_terminal(f) {
            n
        } else {
            self.nodes[f as usize].var
        };
        Ok(below << top)
    }

    /// Equivalence is reference equality, by canonicity.
    pub fn equivalent(&self, f: NodeRef, g: NodeRef) -> bool {
        f == g
    }

    /// Finds a total assignment over `x_0..x_n` on which `f` and `g`
    /// disagree, or `None` when they are equivalent. Deterministic: walks
    /// the lowest satisfying path of the XOR, filling skipped variables
    /// with `false`.
    pub fn find_difference(
        &mut self,
        f: NodeRef,
        g: NodeRef,
        n: u32,
    ) -> Option<Vec<bool>> {
        let diff = self.apply(f, g, BoolOp::XOR);
        if diff == ZERO {
            return None;
        }
        let mut assignment = vec![false; n as usize];
        let mut w = diff;
        while w != ONE {
            let node = &self.nodes[w as usize];
            debug_assert!(node.var < n, "difference depends on an out-of-range variable");
            if node.lo != ZERO {
                w = node.lo;
            } else {
                assignment[node.var as usize] = true;
                w = node.hi;
            }
        }
        Some(assignment)
    }

    /// Number of nodes reachable from `f`, terminals included.
    pub fn node_count(&self, f: NodeRef) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![f];
        while let Some(w) = stack.pop() {
            if !seen.insert(w) {
                continue;
            }
            if !self.is_terminal(w) {
                let n = &self.nodes[w as usize];
                stack.push(n.lo);
                stack.push(n.hi);
            }
        }
        seen.len()
    }

    fn maybe_validate(&mut self) {
        if cfg!(debug_assertions) {
            self.ops_since_validate += 1;
            if self.ops_since_validate % 1000 == 0 {
                self.validate();
            }
        }
    }

    /// Structural invariant walk: ordering, reduction, unique-table
    /// consistency, reference-count sanity. Cheap enough for tests; runs
    /// periodically in debug builds.
    pub fn validate(&self) {
        let mut edge_counts: HashMap<NodeRef, u32> = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate().skip(2) {
            if n.var == VAR_FREE {
                continue;
            }
            assert_ne!(n.lo, n.hi, "redundant node {i} survived reduction");
            for child in [n.lo, n.hi] {
                assert!(
                    self.node_is_live(child),
                    "node {i} references freed slot {child}"
                );
                if let Some(cv) = self.var(child) {
                    assert!(cv > n.var, "ordering violation at node {i}");
                }
                if child > ONE {
                    *edge_counts.entry(child).or_insert(0) += 1;
                }
            }
            assert_eq!(
                self.unique.get(&(n.var, n.lo, n.hi)),
                Some(&(i as NodeRef)),
                "unique table out of sync at node {i}"
            );
        }
        assert_eq!(self.unique.len(), self.live, "unique table size drift");
        for (node, edges) in edge_counts {
            assert!(
                self.nodes[node as usize].rc >= edges,
                "node {node} undercounted: rc below its parent-edge count"
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::RandomSource;

    /// Truth-table oracle for up to 6 variables: bit i of `bits` is the
    /// function value on the assignment whose variable k takes bit k of i.
    #[derive(Clone, Copy, PartialEq, Debug)]
    struct TT {
        n: u32,
        bits: u64,
    }

    impl TT {
        fn var(n: u32, i: u32) -> TT {
            let mut bits = 0u64;
            for a in 0..(1u64 << n) {
                if (a >> i) & 1 == 1 {
                    bits |= 1 << a;
                }
            }
            TT { n, bits }
        }

        fn constant(n: u32, b: bool) -> TT {
            TT {
                n,
                bits: if b { ((1u128 << (1u32 << n)) - 1) as u64 } else { 0 },
            }
        }

        fn apply(self, other: TT, op: BoolOp) -> TT {
            assert_eq!(self.n, other.n);
            let mut bits = 0u64;
            for a in 0..(1u64 << self.n) {
                let x = (self.bits >> a) & 1 == 1;
                let y = (other.bits >> a) & 1 == 1;
                if op.bit(x, y) {
                    bits |= 1 << a;
                }
            }
            TT { n: self.n, bits }
        }

        fn eval(self, assignment: u64) -> bool {
            (self.bits >> assignment) & 1 == 1
        }

        fn restrict(self, var: u32, value: bool) -> TT {
            let mut bits = 0u64;
            for a in 0..(1u64 << self.n) {
                let src = if value { a | (1 << var) } else { a & !(1 << var) };
                if (self.bits >> src) & 1 == 1 {
                    bits |= 1 << a;
                }
            }
            TT { n: self.n, bits }
        }

        fn count(self) -> u64 {
            self.bits.count_ones() as u64
        }
    }

    fn assignment_bits(n: u32, a: u64) -> Vec<bool> {
        (0..n).map(|i| (a >> i) & 1 == 1).collect()
    }

    /// Builds a random pair (engine BDD, truth table) over n variables using
    /// `steps` random applies so the two constructions stay in lockstep.
    fn random_function(
        eng: &mut Engine,
        rng: &mut RandomSource,
        n: u32,
        steps: usize,
    ) -> (NodeRef, TT) {
        let mut pool: Vec<(NodeRef, TT)> = (0..n)
            .map(|i| (0, TT::var(n, i)))
            .collect();
        for (i, entry) in pool.iter_mut().enumerate() {
            entry.0 = eng.mk_var(i as u32);
        }
        pool.push((ZERO, TT::constant(n, false)));
        pool.push((ONE, TT::constant(n, true)));
        for _ in 0..steps {
            let a = pool[rng.next_u64() as usize % pool.len()];
            let b = pool[rng.next_u64() as usize % pool.len()];
            let op = BoolOp::from_table((rng.next_u64() % 16) as u8);
            let r = eng.apply(a.0, b.0, op);
            pool.push((r, a.1.apply(b.1, op)));
        }
        *pool.last().unwrap()
    }

    fn check_matches(eng: &Engine, f: NodeRef, tt: TT) {
        for a in 0..(1u64 << tt.n) {
            assert_eq!(
                eng.evaluate(f, &assignment_bits(tt.n, a)).unwrap(),
                tt.eval(a),
                "mismatch at assignment {a:b}"
            );
        }
    }

    #[test]
    fn terminals_and_variables() {
        let mut eng = Engine::new();
        assert_eq!(eng.constant(false), ZERO);
        assert_eq!(eng.constant(true), ONE);
        let x2 = eng.mk_var(2);
        assert_eq!(eng.var(x2), Some(2));
        assert_eq!(eng.lo(x2), ZERO);
        assert_eq!(eng.hi(x2), ONE);
        assert_eq!(eng.node_count(x2), 3);
        assert_eq!(eng.node_count(ONE), 1);
        // Hash-consing: the same node is never built twice.
        assert_eq!(eng.mk_var(2), x2);
    }

    #[test]
    fn all_sixteen_operators_match_truth_tables() {
        let mut eng = Engine::new();
        let n = 3;
        let x: Vec<NodeRef> = (0..n).map(|i| eng.mk_var(i)).collect();
        let xt: Vec<TT> = (0..n).map(|i| TT::var(n, i)).collect();
        // f = x0 xor x2, g = x1 or x2 exercise shared and disjoint support.
        let f = eng.apply(x[0], x[2], BoolOp::XOR);
        let g = eng.apply(x[1], x[2], BoolOp::OR);
        let ft = xt[0].apply(xt[2], BoolOp::XOR);
        let gt = xt[1].apply(xt[2], BoolOp::OR);
        for op in BoolOp::all() {
            let r = eng.apply(f, g, op);
            check_matches(&eng, r, ft.apply(gt, op));
        }
    }

    #[test]
    fn random_constructions_match_oracle() {
        let mut eng = Engine::new();
        let mut rng = RandomSource::from_seed(101);
        for n in 1..=5u32 {
            for _ in 0..30 {
                let (f, tt) = random_function(&mut eng, &mut rng, n, 12);
                check_matches(&eng, f, tt);
            }
        }
        eng.validate();
    }

    #[test]
    fn canonicity_same_function_same_ref() {
        let mut eng = Engine::new();
        let x0 = eng.mk_var(0);
        let x1 = eng.mk_var(1);
        // x0 & x1 built two different ways.
        let a = eng.apply(x0, x1, BoolOp::AND);
        let not_x0 = eng.negate(x0);
        let not_x1 = eng.negate(x1);
        let or = eng.apply(not_x0, not_x1, BoolOp::OR);
        let b = eng.negate(or);
        assert_eq!(a, b);
        assert!(eng.equivalent(a, b));
        // Negation is an involution on refs.
        let nn = eng.negate(b);
        let nnn = eng.negate(nn);
        assert_eq!(nnn, b);
    }

    #[test]
    fn restrict_matches_oracle_and_drops_variable() {
        let mut eng = Engine::new();
        let mut rng = RandomSource::from_seed(202);
        for _ in 0..40 {
            let n = 4;
            let (f, tt) = random_function(&mut eng, &mut rng, n, 10);
            let var = (rng.next_u64() % n as u64) as u32;
            let value = rng.next_u64() & 1 == 1;
            let r = eng.restrict(f, var, value);
            check_matches(&eng, r, tt.restrict(var, value));
            assert!(
                !eng.support(r).contains(&var),
                "restricted variable still in support"
            );
        }
    }

    #[test]
    fn exists_forall_compose_match_oracle() {
        let mut eng = Engine::new();
        let mut rng = RandomSource::from_seed(303);
        for _ in 0..30 {
            let n = 4;
            let (f, ft) = random_function(&mut eng, &mut rng, n, 10);
            let (g, gt) = random_function(&mut eng, &mut rng, n, 10);
            let var = (rng.next_u64() % n as u64) as u32;
            let ex = eng.exists(f, var);
            check_matches(&eng, ex, ft.restrict(var, false).apply(ft.restrict(var, true), BoolOp::OR));
            let fa = eng.forall(f, var);
            check_matches(&eng, fa, ft.restrict(var, false).apply(ft.restrict(var, true), BoolOp::AND));
            // compose: f with var replaced by g, oracle built pointwise.
            let comp = eng.compose(f, var, g);
            for a in 0..(1u64 << n) {
                let ga = gt.eval(a);
                let shifted = if ga { a | (1 << var) } else { a & !(1 << var) };
                assert_eq!(
                    eng.evaluate(comp, &assignment_bits(n, a)).unwrap(),
                    ft.eval(shifted)
                );
            }
        }
    }

    #[test]
    fn rename_shifts_variable_and_checks_preconditions() {
        let mut eng = Engine::new();
        let x0 = eng.mk_var(0);
        let x2 = eng.mk_var(2);
        let f = eng.apply(x0, x2, BoolOp::AND);
        // x2 -> x3: nothing in support strictly between. Result is x0 & x3.
        let r = eng.rename(f, 2, 3).unwrap();
        assert_eq!(eng.support(r), vec![0, 3]);
        let x3 = eng.mk_var(3);
        let expect = eng.apply(x0, x3, BoolOp::AND);
        assert_eq!(r, expect);
        // Renaming a variable not in the support is the identity.
        assert_eq!(eng.rename(f, 7, 8).unwrap(), f);
        // Target already present.
        assert_eq!(
            eng.rename(f, 2, 0),
            Err(BddError::RenameTargetInSupport { target: 0 })
        );
        // A support variable strictly between source and target.
        let err = eng.rename(f, 0, 3);
        assert_eq!(
            err,
            Err(BddError::RenameCrossesSupport {
                from: 0,
                to: 3,
                between: 2
            })
        );
        // Downward rename is fine when the gap is clear.
        let g = eng.mk_var(5);
        let gr = eng.rename(g, 5, 4).unwrap();
        assert_eq!(gr, eng.mk_var(4));
    }

    #[test]
    fn count_solutions_matches_truth_table() {
        let mut eng = Engine::new();
        let mut rng = RandomSource::from_seed(404);
        for _ in 0..30 {
            let n = 5;
            let (f, tt) = random_function(&mut eng, &mut rng, n, 12);
            let count = eng.count_solutions(f, n).unwrap();
            assert_eq!(count, num_bigint::BigUint::from(tt.count()));
        }
        // count(true, n) = 2^n, also for large n.
        let big = eng.count_solutions(ONE, 200).unwrap();
        assert_eq!(big, num_bigint::BigUint::from(1u32) << 200);
        assert_eq!(
            eng.count_solutions(ZERO, 64).unwrap(),
            num_bigint::BigUint::from(0u32)
        );
        // Domain must cover the support.
        let x9 = eng.mk_var(9);
        assert_eq!(
            eng.count_solutions(x9, 9),
            Err(BddError::DomainTooSmall { given: 9, needed: 9 })
        );
    }

    #[test]
    fn evaluate_rejects_short_assignments() {
        let mut eng = Engine::new();
        let x3 = eng.mk_var(3);
        assert!(matches!(
            eng.evaluate(x3, &[true, false]),
            Err(BddError::AssignmentTooShort { .. })
        ));
    }

    #[test]
    fn apply_call_count_bounded_by_size_product() {
        let mut eng = Engine::new();
        let mut rng = RandomSource::from_seed(505);
        for _ in 0..25 {
            let (f, _) = random_function(&mut eng, &mut rng, 6, 14);
            let (g, _) = random_function(&mut eng, &mut rng, 6, 14);
            // A cold cache isolates this one operation's recursion count.
            let mut fresh = Engine::new();
            let (f2, g2) = copy_pair(&eng, &mut fresh, f, g);
            let bound = (fresh.node_count(f2) * fresh.node_count(g2)) as u64;
            fresh.reset_apply_call_count();
            fresh.apply(f2, g2, BoolOp::XOR);
            assert!(
                fresh.apply_call_count() <= bound,
                "apply made {} calls on operands of sizes {}x{}",
                fresh.apply_call_count(),
                fresh.node_count(f2),
                fresh.node_count(g2),
            );
        }
    }

    /// Rebuilds two nodes of `src` inside `dst`, preserving structure.
    fn copy_pair(src: &Engine, dst: &mut Engine, f: NodeRef, g: NodeRef) -> (NodeRef, NodeRef) {
        fn go(
            src: &Engine,
            dst: &mut Engine,
            w: NodeRef,
            memo: &mut HashMap<NodeRef, NodeRef>,
        ) -> NodeRef {
            if src.is_terminal(w) {
                return w;
            }
            if let Some(&r) = memo.get(&w) {
                return r;
            }
            let lo = go(src, dst, src.lo(w), memo);
            let hi = go(src, dst, src.hi(w), memo);
            let r = dst.mk(src.var(w).unwrap(), lo, hi);
            memo.insert(w, r);
            r
        }
        let mut memo = HashMap::new();
        (go(src, dst, f, &mut memo), go(src, dst, g, &mut memo))
    }

    #[test]
    fn gc_frees_garbage_and_keeps_referenced_nodes() {
        let mut eng = Engine::new();
        let x0 = eng.mk_var(0);
        let x1 = eng.mk_var(1);
        let keep = eng.apply(x0, x1, BoolOp::AND);
        eng.incref(keep);
        let before = eng.live_nodes();
        // Garbage: a chain of nodes nothing external references.
        let x2 = eng.mk_var(2);
        let tmp = eng.apply(keep, x2, BoolOp::XOR);
        let _tmp2 = eng.apply(tmp, x1, BoolOp::OR);
        assert!(eng.live_nodes() > before);
        let freed = eng.gc();
        assert!(freed > 0);
        eng.validate();
        // The kept function still evaluates correctly.
        assert!(eng.evaluate(keep, &[true, true]).unwrap());
        assert!(!eng.evaluate(keep, &[true, false]).unwrap());
        // mk_var(0) and mk_var(1) survive as children of `keep`.
        assert_eq!(eng.mk_var(0), x0);
        // Apply results stay correct after a sweep (cache was purged).
        let again = eng.apply(x0, x1, BoolOp::AND);
        assert_eq!(again, keep);
        // Terminals are never reclaimed.
        assert!(eng.node_is_live(ZERO) && eng.node_is_live(ONE));
    }

    #[test]
    fn gc_then_rebuild_reuses_slots_without_aliasing() {
        let mut eng = Engine::new();
        let mut rng = RandomSource::from_seed(606);
        let (f, tt) = random_function(&mut eng, &mut rng, 4, 15);
        eng.incref(f);
        eng.gc();
        check_matches(&eng, f, tt);
        // Build fresh functions into recycled slots and re-check both.
        let (g, gt) = random_function(&mut eng, &mut rng, 4, 15);
        check_matches(&eng, g, gt);
        check_matches(&eng, f, tt);
        eng.validate();
    }

    #[test]
    fn tiny_cache_still_computes_correctly() {
        // A 4-entry cache forces constant collision/overwrite traffic; the
        // results must not change, only the speed.
        let mut eng = Engine::with_cache_capacity(4);
        let mut rng = RandomSource::from_seed(707);
        for _ in 0..20 {
            let (f, tt) = random_function(&mut eng, &mut rng, 4, 12);
            check_matches(&eng, f, tt);
        }
        eng.validate();
    }

    #[test]
    fn live_node_accounting() {
        let mut eng = Engine::new();
        assert_eq!(eng.live_nodes(), 2);
        let x0 = eng.mk_var(0);
        assert_eq!(eng.live_nodes(), 3);
        let _ = eng.mk_var(0);
        assert_eq!(eng.live_nodes(), 3, "hash consing allocates nothing");
        let x1 = eng.mk_var(1);
        let f = eng.apply(x0, x1, BoolOp::OR);
        eng.incref(f);
        eng.gc();
        // The OR node's low child is x1, so the x0 node itself is garbage;
        // what survives is f and the x1 node it points at.
        assert_eq!(eng.live_nodes(), 4);
        assert!(eng.evaluate(f, &[true, false]).unwrap());
        eng.decref(f);
        eng.gc();
        assert_eq!(eng.live_nodes(), 2);
        assert!(eng.peak_live_nodes() >= 3);
    }

    #[test]
    fn find_difference_returns_a_separating_assignment() {
        let mut eng = Engine::new();
        let mut rng = RandomSource::from_seed(404);
        for n in 2..=5u32 {
            for _ in 0..30 {
                let (f, tf) = random_function(&mut eng, &mut rng, n, 6);
                let (g, tg) = random_function(&mut eng, &mut rng, n, 6);
                match eng.find_difference(f, g, n) {
                    Some(a) => {
                        assert_ne!(
                            eng.evaluate(f, &a).unwrap(),
                            eng.evaluate(g, &a).unwrap(),
                            "assignment must separate the two functions"
                        );
                    }
                    None => assert_eq!(tf, tg, "only equal functions lack a witness"),
                }
            }
        }
        // Equal references never produce a witness.
        let x0 = eng.mk_var(0);
        assert_eq!(eng.find_difference(x0, x0, 3), None);
    }

    #[test]
    fn operator_names_roundtrip() {
        for op in BoolOp::all() {
            assert_eq!(BoolOp::from_name(op.name()), Some(op));
        }
        assert_eq!(BoolOp::from_name("and2"), Some(BoolOp::AND));
        assert_eq!(BoolOp::from_name("bogus"), None);
        // Spot-check the truth-table encodings.
        assert!(BoolOp::AND.bit(true, true) && !BoolOp::AND.bit(true, false));
        assert!(BoolOp::IMP.bit(false, true) && !BoolOp::IMP.bit(true, false));
        assert!(BoolOp::NIMP.bit(true, false) && !BoolOp::NIMP.bit(true, true));
    }
}
