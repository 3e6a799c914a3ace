// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Registration-time verifier.
//!
//! Path-sensitive abstract interpretation: every path is executed on
//! abstract values with conditional branches narrowing scalar intervals, so
//! loops are unrolled until their exit condition becomes decidable. A path
//! that reaches a state subsumed by an already fully explored state at the
//! same instruction is cut short.
//!
//! Guarantees for an accepted program:
//! - every load and store stays inside the header fields a function may
//!   touch, the stack or the app region;
//! - no register or stack byte is read before it is written;
//! - at most `step_budget` instructions run between two yields;
//! - at each yield site no pointer sits in stack slots 60..63, and the
//!   emitted vector marks exactly the live callee-saved registers and the
//!   stack slots that hold pointers.

mod domain;
mod liveness;

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

pub use domain::{AbstractValue, Interval, Val};

use crate::vm::buffer::{
    APP_CAPACITY, CAPACITY, HEADER_LEN, OFF_APP, OFF_APP_LEN, OFF_DST_PORT, OFF_STACK, OFF_STACK_TOP, RELOC_SLOTS,
    STACK_SLOTS,
};
use crate::vm::image::yield_sites;
use crate::vm::interp::DEFAULT_STEP_BUDGET;
use crate::vm::isa::{self, helper, Instruction, MemSize, Op, Operand, Width, FRAME_REG, NUM_REGS};
use domain::{ptr_add, refine, scalar_alu, AbsState, Slot};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifierConfig {
    /// Must match the runtime's per-slice instruction budget.
    pub step_budget: u64,
    /// Abstract instructions explored before giving up.
    pub max_explored: u64,
    /// Fully explored states remembered per instruction for pruning.
    pub max_states_per_pc: usize,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            step_budget: DEFAULT_STEP_BUDGET,
            max_explored: 20_000_000,
            max_states_per_pc: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum RejectKind {
    OutOfBoundsAccess,
    UninitializedRead,
    PointerInHighStackAtYield,
    WriteToVmStateFields,
    UnverifiableLoop,
    BadInstruction,
    BadJump,
    FallThrough,
    BadHelperCall,
    WriteToFrameRegister,
    InvalidPointerArithmetic,
    PointerLeak,
    MisalignedStackAccess,
    InconsistentYieldState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Error)]
#[error("{kind:?} at pc {pc:?}: {detail}")]
pub struct Rejection {
    pub kind: RejectKind,
    pub pc: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Accepted,
    Rejected(Rejection),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifierReport {
    pub verdict: Verdict,
    /// Yield site slot index to relocation vector. Empty when rejected.
    pub yield_vectors: BTreeMap<usize, u64>,
    /// Abstract instructions executed.
    pub explored: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VectorError {
    #[error("program was rejected")]
    NotAccepted,
    #[error("slot {0} is not a yield site")]
    UnknownSite(usize),
}

impl VerifierReport {
    pub fn is_accepted(&self) -> bool {
        self.verdict == Verdict::Accepted
    }

    pub fn rejection(&self) -> Option<&Rejection> {
        match &self.verdict {
            Verdict::Rejected(r) => Some(r),
            Verdict::Accepted => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let sites: Vec<_> = self
            .yield_vectors
            .iter()
            .map(|(site, v)| serde_json::json!({ "site": site, "vector": format!("{v:#018x}") }))
            .collect();
        match &self.verdict {
            Verdict::Accepted => serde_json::json!({
                "verdict": "accepted",
                "yield_sites": sites,
                "explored": self.explored,
            }),
            Verdict::Rejected(r) => serde_json::json!({
                "verdict": "rejected",
                "reason": r.kind,
                "pc": r.pc,
                "detail": r.detail,
                "explored": self.explored,
            }),
        }
    }
}

/// The relocation vector for `site` in an accepted report.
pub fn vector_for_site(report: &VerifierReport, site: usize) -> Result<u64, VectorError> {
    if !report.is_accepted() {
        return Err(VectorError::NotAccepted);
    }
    report.yield_vectors.get(&site).copied().ok_or(VectorError::UnknownSite(site))
}

pub fn verify(insns: &[Instruction]) -> VerifierReport {
    verify_with(insns, &VerifierConfig::default())
}

pub fn verify_with(insns: &[Instruction], cfg: &VerifierConfig) -> VerifierReport {
    let reject = |r: Rejection, explored| VerifierReport {
        verdict: Verdict::Rejected(r),
        yield_vectors: BTreeMap::new(),
        explored,
    };
    let ops = match isa::decode(insns) {
        Ok(ops) => ops,
        Err(e) => return reject(rej(RejectKind::BadInstruction, None, e.to_string()), 0),
    };
    if let Err(r) = structural_checks(&ops) {
        return reject(r, 0);
    }
    let mut engine = Engine::new(&ops, cfg);
    match engine.run() {
        Ok(()) => {
            // A site no path reaches never suspends; it holds no pointers.
            let mut yield_vectors: BTreeMap<usize, u64> = yield_sites(&ops).into_iter().map(|s| (s, 0)).collect();
            yield_vectors.extend(engine.sites.iter().map(|(&s, info)| (s, info.ptr_bits)));
            VerifierReport {
                verdict: Verdict::Accepted,
                yield_vectors,
                explored: engine.explored,
            }
        }
        Err(r) => reject(r, engine.explored),
    }
}

fn rej(kind: RejectKind, pc: Option<usize>, detail: impl Into<String>) -> Rejection {
    Rejection {
        kind,
        pc,
        detail: detail.into(),
    }
}

fn structural_checks(ops: &[Option<Op>]) -> Result<(), Rejection> {
    if ops.is_empty() {
        return Err(rej(RejectKind::FallThrough, None, "empty program"));
    }
    let n = ops.len();
    for (pc, op) in ops.iter().enumerate() {
        let Some(op) = op else { continue };
        let target = match op {
            Op::Jump { off } | Op::CondJump { off, .. } => Some(pc as i64 + 1 + *off as i64),
            _ => None,
        };
        if let Some(t) = target {
            if t < 0 || t as usize >= n || ops[t as usize].is_none() {
                return Err(rej(RejectKind::BadJump, Some(pc), format!("jump to slot {t}")));
            }
        }
        match op {
            Op::Call { helper: h } if helper::name(*h).is_none() => {
                return Err(rej(RejectKind::BadHelperCall, Some(pc), format!("unknown helper {h}")));
            }
            Op::Alu { dst, .. } | Op::Neg { dst, .. } | Op::LoadImm64 { dst, .. } | Op::Load { dst, .. }
                if *dst == FRAME_REG =>
            {
                return Err(rej(RejectKind::WriteToFrameRegister, Some(pc), "r10 is read-only"));
            }
            _ => {}
        }
    }
    Ok(())
}

#[derive(Debug, Default, Clone, Copy)]
struct SiteInfo {
    ptr_bits: u64,
    scalar_bits: u64,
}

struct Entry {
    parent: Option<usize>,
    pending: u32,
    snapshot: Option<Box<AbsState>>,
}

struct Work {
    st: AbsState,
    parent: Option<usize>,
}

enum Step {
    Next,
    Fork(AbsState),
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Area {
    Header,
    Stack,
    App,
}

struct Engine<'a> {
    ops: &'a [Option<Op>],
    live: Vec<u16>,
    prune: Vec<bool>,
    entries: Vec<Entry>,
    complete: HashMap<usize, VecDeque<Box<AbsState>>>,
    sites: BTreeMap<usize, SiteInfo>,
    explored: u64,
    cfg: &'a VerifierConfig,
}

type Res<T> = Result<T, Rejection>;

impl<'a> Engine<'a> {
    fn new(ops: &'a [Option<Op>], cfg: &'a VerifierConfig) -> Self {
        let n = ops.len();
        let mut prune = vec![false; n];
        for (pc, op) in ops.iter().enumerate() {
            match op {
                Some(Op::Jump { off }) | Some(Op::CondJump { off, .. }) => {
                    prune[(pc as i64 + 1 + *off as i64) as usize] = true;
                }
                Some(Op::Call { helper: h }) if helper::is_yielding(*h) && pc + 1 < n => prune[pc + 1] = true,
                _ => {}
            }
        }
        Self {
            ops,
            live: liveness::live_in(ops),
            prune,
            entries: Vec::new(),
            complete: HashMap::new(),
            sites: BTreeMap::new(),
            explored: 0,
            cfg,
        }
    }

    fn initial() -> AbsState {
        let mut regs = [Val::Uninit; NUM_REGS];
        regs[1] = Val::ptr(0);
        regs[FRAME_REG as usize] = Val::ptr(OFF_STACK_TOP as i64);
        AbsState {
            pc: 0,
            regs,
            stack: [Slot::EMPTY; STACK_SLOTS],
            steps: 0,
        }
    }

    fn run(&mut self) -> Res<()> {
        let mut work = vec![Work {
            st: Self::initial(),
            parent: None,
        }];
        while let Some(mut w) = work.pop() {
            loop {
                let pc = w.st.pc;
                if pc >= self.ops.len() {
                    return Err(rej(RejectKind::FallThrough, Some(pc), "execution runs past the last instruction"));
                }
                if self.prune[pc] {
                    if self.is_subsumed(&w.st) || self.repeats_ancestor(&w.st, w.parent) {
                        self.finish(w.parent);
                        break;
                    }
                    self.entries.push(Entry {
                        parent: w.parent,
                        pending: 1,
                        snapshot: Some(Box::new(w.st.clone())),
                    });
                    w.parent = Some(self.entries.len() - 1);
                }
                self.explored += 1;
                if self.explored > self.cfg.max_explored {
                    return Err(rej(
                        RejectKind::UnverifiableLoop,
                        Some(pc),
                        "exploration limit reached; loop bound not provable",
                    ));
                }
                match self.step(&mut w.st)? {
                    Step::Next => {}
                    Step::Fork(other) => {
                        if let Some(p) = w.parent {
                            self.entries[p].pending += 1;
                        }
                        work.push(Work {
                            st: other,
                            parent: w.parent,
                        });
                    }
                    Step::Done => {
                        self.finish(w.parent);
                        break;
                    }
                }
            }
        }
        Ok(())
    }

    fn finish(&mut self, mut cur: Option<usize>) {
        while let Some(id) = cur {
            let e = &mut self.entries[id];
            e.pending -= 1;
            if e.pending > 0 {
                return;
            }
            if let Some(snap) = e.snapshot.take() {
                let list = self.complete.entry(snap.pc).or_default();
                if list.len() >= self.cfg.max_states_per_pc {
                    list.pop_front();
                }
                list.push_back(snap);
            }
            cur = e.parent;
        }
    }

    fn covers(&self, old: &AbsState, st: &AbsState) -> bool {
        let live = self.live[st.pc];
        old.pc == st.pc
            && old.steps >= st.steps
            && (0..NUM_REGS).all(|r| live & (1 << r) == 0 || old.regs[r].subsumes(st.regs[r]))
            && old.stack.iter().zip(st.stack.iter()).all(|(a, b)| a.subsumes(*b))
    }

    fn is_subsumed(&self, st: &AbsState) -> bool {
        self.complete
            .get(&st.pc)
            .is_some_and(|list| list.iter().any(|old| self.covers(old, st)))
    }

    /// A loop that comes back to a state already being explored on this
    /// path adds nothing new. Without a yield in the loop `steps` only
    /// grows, so this never hides a budget overrun.
    fn repeats_ancestor(&self, st: &AbsState, mut cur: Option<usize>) -> bool {
        while let Some(id) = cur {
            let e = &self.entries[id];
            if e.snapshot.as_ref().is_some_and(|old| self.covers(old, st)) {
                return true;
            }
            cur = e.parent;
        }
        false
    }

    fn read_reg(&self, st: &AbsState, r: u8, pc: usize) -> Res<Val> {
        match st.regs[r as usize] {
            Val::Uninit => Err(rej(RejectKind::UninitializedRead, Some(pc), format!("r{r} read before write"))),
            v => Ok(v),
        }
    }

    fn operand(&self, st: &AbsState, o: Operand, pc: usize) -> Res<Val> {
        match o {
            Operand::Reg(r) => self.read_reg(st, r, pc),
            Operand::Imm(i) => Ok(Val::Scalar(Interval::exact(i as i64 as u64))),
        }
    }

    fn scalar_arg(&self, st: &AbsState, r: u8, pc: usize) -> Res<()> {
        match self.read_reg(st, r, pc)? {
            Val::Scalar(_) => Ok(()),
            _ => Err(rej(
                RejectKind::PointerLeak,
                Some(pc),
                format!("pointer passed as helper argument r{r}"),
            )),
        }
    }

    fn step(&mut self, st: &mut AbsState) -> Res<Step> {
        let pc = st.pc;
        let op = self.ops[pc].expect("structural checks reject jumps into lddw");
        st.steps += 1;
        if st.steps > self.cfg.step_budget {
            return Err(rej(
                RejectKind::UnverifiableLoop,
                Some(pc),
                format!("more than {} instructions between yields", self.cfg.step_budget),
            ));
        }
        let rel = |off: i16| (pc as i64 + 1 + off as i64) as usize;
        st.pc = pc + 1;
        match op {
            Op::Alu { width, op, dst, src } => {
                let b = self.operand(st, src, pc)?;
                let b = match (width, src, b) {
                    (Width::W32, Operand::Imm(i), _) => Val::Scalar(Interval::exact(i as u32 as u64)),
                    _ => b,
                };
                let a = if op == isa::AluOp::Mov {
                    Val::Scalar(Interval::exact(0))
                } else {
                    self.read_reg(st, dst, pc)?
                };
                let bad = || rej(RejectKind::InvalidPointerArithmetic, Some(pc), format!("{op:?} on a pointer"));
                st.regs[dst as usize] = match (width, op, a, b) {
                    (Width::W64, isa::AluOp::Mov, _, v) => v,
                    (_, _, Val::Scalar(x), Val::Scalar(y)) => Val::Scalar(scalar_alu(width, op, x, y)),
                    (Width::W64, isa::AluOp::Add, Val::Ptr { lo, hi }, Val::Scalar(s))
                    | (Width::W64, isa::AluOp::Add, Val::Scalar(s), Val::Ptr { lo, hi }) => ptr_add(lo, hi, s, false),
                    (Width::W64, isa::AluOp::Sub, Val::Ptr { lo, hi }, Val::Scalar(s)) => ptr_add(lo, hi, s, true),
                    (Width::W64, isa::AluOp::Sub, Val::Ptr { lo: a0, hi: a1 }, Val::Ptr { lo: b0, hi: b1 }) => {
                        let (lo, hi) = (a0 - b1, a1 - b0);
                        Val::Scalar(if lo >= 0 {
                            Interval::new(lo as u64, hi as u64)
                        } else {
                            Interval::FULL
                        })
                    }
                    _ => return Err(bad()),
                };
            }
            Op::Neg { width, dst } => {
                let Val::Scalar(x) = self.read_reg(st, dst, pc)? else {
                    return Err(rej(RejectKind::InvalidPointerArithmetic, Some(pc), "negating a pointer"));
                };
                st.regs[dst as usize] = Val::Scalar(match (x.as_exact(), width) {
                    (Some(v), Width::W64) => Interval::exact(v.wrapping_neg()),
                    (Some(v), Width::W32) => Interval::exact((v as u32).wrapping_neg() as u64),
                    (None, Width::W64) => Interval::FULL,
                    (None, Width::W32) => Interval::new(0, u32::MAX as u64),
                });
            }
            Op::LoadImm64 { dst, imm } => {
                st.regs[dst as usize] = Val::Scalar(Interval::exact(imm));
                st.pc = pc + 2;
            }
            Op::Load { size, dst, base, off } => {
                let (lo, hi) = self.deref(st, base, off, pc)?;
                let v = self.mem_read(st, lo, hi, size, pc)?;
                st.regs[dst as usize] = v;
            }
            Op::Store { size, base, off, src } => {
                let (lo, hi) = self.deref(st, base, off, pc)?;
                let v = match src {
                    Operand::Reg(r) => self.read_reg(st, r, pc)?,
                    Operand::Imm(i) => Val::Scalar(Interval::exact(trunc(i as i64 as u64, size))),
                };
                self.mem_write(st, lo, hi, size, v, pc)?;
            }
            Op::Jump { off } => st.pc = rel(off),
            Op::CondJump {
                width,
                cond,
                dst,
                src,
                off,
            } => {
                let a = self.read_reg(st, dst, pc)?;
                let b = self.operand(st, src, pc)?;
                match (a, b) {
                    (Val::Scalar(x), Val::Scalar(y)) => {
                        let taken = refine(width, cond, x, y, true);
                        let fall = refine(width, cond, x, y, false);
                        let apply = |s: &mut AbsState, (rx, ry): (Interval, Interval)| {
                            s.regs[dst as usize] = Val::Scalar(rx);
                            if let Operand::Reg(r) = src {
                                s.regs[r as usize] = Val::Scalar(ry);
                            }
                        };
                        match (taken, fall) {
                            (Some(t), Some(f)) => {
                                let mut other = st.clone();
                                other.pc = rel(off);
                                apply(&mut other, t);
                                apply(st, f);
                                return Ok(Step::Fork(other));
                            }
                            (Some(t), None) => {
                                st.pc = rel(off);
                                apply(st, t);
                            }
                            (None, Some(f)) => apply(st, f),
                            (None, None) => return Ok(Step::Done),
                        }
                    }
                    (Val::Ptr { .. }, Val::Ptr { .. }) => {
                        let mut other = st.clone();
                        other.pc = rel(off);
                        return Ok(Step::Fork(other));
                    }
                    _ => {
                        return Err(rej(RejectKind::PointerLeak, Some(pc), "pointer compared with a scalar"));
                    }
                }
            }
            Op::Call { helper: h } => self.call(st, h, pc)?,
            Op::Exit => {
                return match self.read_reg(st, 0, pc)? {
                    Val::Scalar(_) => Ok(Step::Done),
                    _ => Err(rej(RejectKind::PointerLeak, Some(pc), "pointer returned in r0")),
                };
            }
        }
        Ok(Step::Next)
    }

    fn call(&mut self, st: &mut AbsState, h: u32, pc: usize) -> Res<()> {
        match h {
            helper::APP_REGION => {
                st.regs[0] = Val::ptr(OFF_APP as i64);
                st.regs[2] = Val::Scalar(Interval::exact(OFF_APP as u64));
                st.regs[3] = Val::Scalar(Interval::exact(APP_CAPACITY as u64));
                st.regs[4] = Val::Scalar(Interval::exact(0));
                st.regs[5] = Val::Scalar(Interval::exact(0));
                Ok(())
            }
            helper::UDMA | helper::UCAS | helper::UFAA => {
                if st.regs[1] != Val::ptr(0) {
                    return Err(rej(
                        RejectKind::BadHelperCall,
                        Some(pc),
                        "r1 must hold the context pointer at a yielding call",
                    ));
                }
                let nargs = if h == helper::UFAA { 3 } else { 4 };
                for r in 2..=nargs {
                    self.scalar_arg(st, r, pc)?;
                }
                self.record_site(st, pc)?;
                st.regs[0] = Val::Scalar(if h == helper::UDMA {
                    Interval::new(0, 1)
                } else {
                    Interval::FULL
                });
                st.regs[1] = Val::ptr(0);
                for r in 2..=5 {
                    st.regs[r] = Val::Scalar(Interval::exact(0));
                }
                st.steps = 0;
                Ok(())
            }
            _ => Err(rej(RejectKind::BadHelperCall, Some(pc), format!("unknown helper {h}"))),
        }
    }

    fn record_site(&mut self, st: &AbsState, pc: usize) -> Res<()> {
        let live_out = self.live.get(pc + 1).copied().unwrap_or(0);
        let mut info = SiteInfo::default();
        for i in 0..4 {
            let r = 6 + i;
            if live_out & (1 << r) == 0 {
                continue;
            }
            match st.regs[r] {
                Val::Ptr { .. } => info.ptr_bits |= 1 << i,
                Val::Scalar(_) => info.scalar_bits |= 1 << i,
                Val::Uninit => {}
            }
        }
        for (j, slot) in st.stack.iter().enumerate() {
            match slot.val {
                Val::Ptr { .. } if j >= RELOC_SLOTS => {
                    return Err(rej(
                        RejectKind::PointerInHighStackAtYield,
                        Some(pc),
                        format!("pointer in stack slot {j} at a yield"),
                    ));
                }
                Val::Ptr { .. } => info.ptr_bits |= 1 << (4 + j),
                _ if slot.mask != 0 && j < RELOC_SLOTS => info.scalar_bits |= 1 << (4 + j),
                _ => {}
            }
        }
        let site = self.sites.entry(pc).or_default();
        site.ptr_bits |= info.ptr_bits;
        site.scalar_bits |= info.scalar_bits;
        if site.ptr_bits & site.scalar_bits != 0 {
            return Err(rej(
                RejectKind::InconsistentYieldState,
                Some(pc),
                format!(
                    "location holds a pointer on one path and a scalar on another (bits {:#x})",
                    site.ptr_bits & site.scalar_bits
                ),
            ));
        }
        Ok(())
    }

    fn deref(&self, st: &AbsState, base: u8, off: i16, pc: usize) -> Res<(i64, i64)> {
        match self.read_reg(st, base, pc)? {
            Val::Ptr { lo, hi } => Ok((lo + off as i64, hi + off as i64)),
            _ => Err(rej(
                RejectKind::OutOfBoundsAccess,
                Some(pc),
                format!("r{base} is not a pointer"),
            )),
        }
    }

    fn area(&self, lo: i64, hi: i64, size: usize, write: bool, pc: usize) -> Res<Area> {
        let end = hi + size as i64;
        let inside = |a: usize, b: usize| lo >= a as i64 && end <= b as i64;
        if inside(OFF_STACK, OFF_STACK_TOP) {
            return Ok(Area::Stack);
        }
        if inside(OFF_APP, CAPACITY) {
            return Ok(Area::App);
        }
        if write {
            if inside(0, OFF_DST_PORT + 2) || inside(OFF_APP_LEN, OFF_APP_LEN + 2) {
                return Ok(Area::Header);
            }
        } else if inside(0, HEADER_LEN) {
            return Ok(Area::Header);
        }
        let detail = format!("{}-byte access at buffer offsets [{lo}, {end})", size);
        if write && lo >= 0 && end <= CAPACITY as i64 {
            Err(rej(RejectKind::WriteToVmStateFields, Some(pc), detail))
        } else {
            Err(rej(RejectKind::OutOfBoundsAccess, Some(pc), detail))
        }
    }

    fn mem_read(&self, st: &AbsState, lo: i64, hi: i64, size: MemSize, pc: usize) -> Res<Val> {
        let n = size.bytes();
        match self.area(lo, hi, n, false, pc)? {
            Area::Header | Area::App => Ok(Val::Scalar(Interval::of_size(n))),
            Area::Stack => {
                if lo != hi {
                    for b in lo..hi + n as i64 {
                        let (j, k) = slot_of(b as usize);
                        let s = st.stack[j];
                        if s.mask & (1 << k) == 0 {
                            return Err(rej(RejectKind::UninitializedRead, Some(pc), "stack byte read before write"));
                        }
                        if s.val.is_ptr() {
                            return Err(rej(RejectKind::PointerLeak, Some(pc), "variable-offset read of a spilled pointer"));
                        }
                    }
                    return Ok(Val::Scalar(Interval::of_size(n)));
                }
                let off = lo as usize;
                if off % n != 0 {
                    return Err(rej(RejectKind::MisalignedStackAccess, Some(pc), format!("offset {off}")));
                }
                let (j, k) = slot_of(off);
                let s = st.stack[j];
                let need = byte_mask(k, n);
                if s.mask & need != need {
                    return Err(rej(RejectKind::UninitializedRead, Some(pc), format!("stack slot {j} read before write")));
                }
                if n == 8 {
                    return Ok(s.val);
                }
                match s.val {
                    Val::Ptr { .. } => Err(rej(RejectKind::PointerLeak, Some(pc), "partial read of a spilled pointer")),
                    Val::Scalar(i) => Ok(Val::Scalar(match i.as_exact() {
                        Some(v) if s.mask == 0xff => Interval::exact(trunc(v >> (8 * k), size)),
                        _ => Interval::of_size(n),
                    })),
                    Val::Uninit => Ok(Val::Scalar(Interval::of_size(n))),
                }
            }
        }
    }

    fn mem_write(&self, st: &mut AbsState, lo: i64, hi: i64, size: MemSize, v: Val, pc: usize) -> Res<()> {
        let n = size.bytes();
        let area = self.area(lo, hi, n, true, pc)?;
        if v.is_ptr() && (area != Area::Stack || n != 8 || lo != hi) {
            return Err(rej(
                RejectKind::PointerLeak,
                Some(pc),
                "pointers may only be spilled whole to fixed stack slots",
            ));
        }
        if area != Area::Stack {
            return Ok(());
        }
        if lo != hi {
            for b in lo..hi + n as i64 {
                let (j, _) = slot_of(b as usize);
                let s = &mut st.stack[j];
                if s.val.is_ptr() {
                    return Err(rej(
                        RejectKind::PointerLeak,
                        Some(pc),
                        "variable-offset write may clobber a spilled pointer",
                    ));
                }
                if s.mask != 0 {
                    s.val = Val::Scalar(Interval::FULL);
                }
            }
            return Ok(());
        }
        let off = lo as usize;
        if off % n != 0 {
            return Err(rej(RejectKind::MisalignedStackAccess, Some(pc), format!("offset {off}")));
        }
        let (j, k) = slot_of(off);
        let s = &mut st.stack[j];
        if n == 8 {
            *s = Slot { mask: 0xff, val: v };
            return Ok(());
        }
        let bits = byte_mask(k, n);
        let Val::Scalar(iv) = v else { unreachable!("pointers were rejected above") };
        let field = iv.as_exact().map(|x| trunc(x, size) << (8 * k));
        let (mask, val) = match (s.val, field) {
            (Val::Scalar(old), Some(f)) if old.as_exact().is_some() => {
                let keep = !expand(bits);
                (s.mask | bits, Interval::exact((old.lo & keep) | f))
            }
            (Val::Scalar(_), None) => (s.mask | bits, Interval::FULL),
            (Val::Scalar(_), Some(_)) => (s.mask | bits, Interval::FULL),
            // Partial overwrite of a pointer or an empty slot: only the new bytes are readable.
            (_, Some(f)) => (bits, Interval::exact(f)),
            (_, None) => (bits, Interval::FULL),
        };
        *s = Slot {
            mask,
            val: Val::Scalar(val),
        };
        Ok(())
    }
}

fn trunc(v: u64, size: MemSize) -> u64 {
    match size {
        MemSize::DW => v,
        s => v & ((1u64 << s.bits()) - 1),
    }
}

/// Slot index and byte index within the slot of buffer offset `off`.
fn slot_of(off: usize) -> (usize, usize) {
    let j = (OFF_STACK_TOP - 1 - off) / 8;
    let slot_lo = OFF_STACK_TOP - 8 * (j + 1);
    (j, off - slot_lo)
}

fn byte_mask(k: usize, n: usize) -> u8 {
    (((1u16 << n) - 1) << k) as u8
}

fn expand(bits: u8) -> u64 {
    (0..8).filter(|i| bits & (1 << i) != 0).fold(0u64, |acc, i| acc | (0xff << (8 * i)))
}
