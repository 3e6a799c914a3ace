// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Abstract values: unsigned scalar intervals and buffer pointers with an
//! offset range.

use crate::vm::buffer::{OFF_STACK, OFF_STACK_TOP, STACK_SLOTS};
use crate::vm::isa::{AluOp, Cond, Width, NUM_REGS};

/// Closed unsigned interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Interval {
    pub lo: u64,
    pub hi: u64,
}

impl Interval {
    pub const FULL: Interval = Interval { lo: 0, hi: u64::MAX };

    pub const fn exact(v: u64) -> Self {
        Self { lo: v, hi: v }
    }

    pub const fn new(lo: u64, hi: u64) -> Self {
        Self { lo, hi }
    }

    /// All values representable in `bytes` bytes.
    pub fn of_size(bytes: usize) -> Self {
        if bytes >= 8 {
            Self::FULL
        } else {
            Self::new(0, (1u64 << (8 * bytes)) - 1)
        }
    }

    pub fn as_exact(self) -> Option<u64> {
        (self.lo == self.hi).then_some(self.lo)
    }

    pub fn contains(self, other: Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    fn fits32(self) -> bool {
        self.hi <= u32::MAX as u64
    }
}

/// Abstract register or spilled value.
///
/// Pointers are tracked as a byte-offset range from the buffer base; the
/// stack is part of the buffer, so stack pointers are the ones whose range
/// lies in the stack area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Val {
    Uninit,
    Scalar(Interval),
    Ptr { lo: i64, hi: i64 },
}

/// Offsets saturate here so pointer arithmetic never overflows.
const PTR_LIMIT: i64 = 1 << 48;

impl Val {
    pub fn ptr(off: i64) -> Self {
        Val::Ptr { lo: off, hi: off }
    }

    pub fn is_ptr(self) -> bool {
        matches!(self, Val::Ptr { .. })
    }

    /// Public classification used in reports.
    pub fn kind(self) -> AbstractValue {
        match self {
            Val::Uninit => AbstractValue::Uninitialized,
            Val::Scalar(_) => AbstractValue::Scalar,
            Val::Ptr { lo, hi } if lo >= OFF_STACK as i64 && hi < OFF_STACK_TOP as i64 => AbstractValue::StackPointer {
                lo: lo - OFF_STACK_TOP as i64,
                hi: hi - OFF_STACK_TOP as i64,
            },
            Val::Ptr { lo, hi } => AbstractValue::BufferPointer { lo, hi },
        }
    }

    /// `self` describes every concrete value `other` does.
    pub fn subsumes(self, other: Val) -> bool {
        match (self, other) {
            (Val::Uninit, Val::Uninit | Val::Scalar(_)) => true,
            (Val::Scalar(a), Val::Scalar(b)) => a.contains(b),
            (Val::Ptr { lo: a, hi: b }, Val::Ptr { lo: c, hi: d }) => a <= c && d <= b,
            _ => false,
        }
    }
}

/// Kind lattice exposed in reports: stack pointer offsets are relative to r10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum AbstractValue {
    Scalar,
    BufferPointer { lo: i64, hi: i64 },
    StackPointer { lo: i64, hi: i64 },
    Uninitialized,
}

pub(crate) fn ptr_add(lo: i64, hi: i64, s: Interval, negate: bool) -> Val {
    let clamp = |v: u64| v.min(PTR_LIMIT as u64) as i64;
    let (slo, shi) = (clamp(s.lo), clamp(s.hi));
    let (lo, hi) = if negate { (lo - shi, hi - slo) } else { (lo + slo, hi + shi) };
    Val::Ptr {
        lo: lo.clamp(-PTR_LIMIT, PTR_LIMIT),
        hi: hi.clamp(-PTR_LIMIT, PTR_LIMIT),
    }
}

fn bit_span(v: u64) -> u64 {
    // Smallest all-ones mask covering v.
    if v == 0 {
        0
    } else {
        u64::MAX >> v.leading_zeros()
    }
}

/// Interval transfer for scalar ALU ops.
pub(crate) fn scalar_alu(width: Width, op: AluOp, a: Interval, b: Interval) -> Interval {
    if let (Some(x), Some(y)) = (a.as_exact(), b.as_exact()) {
        return Interval::exact(crate::vm::interp::alu(width, op, x, y));
    }
    match width {
        Width::W64 => alu64(op, a, b),
        Width::W32 => {
            let full32 = Interval::new(0, u32::MAX as u64);
            if op == AluOp::Mov {
                return if b.fits32() { b } else { full32 };
            }
            if !a.fits32() || !b.fits32() {
                return full32;
            }
            let b = match op {
                AluOp::Lsh | AluOp::Rsh | AluOp::Arsh => match b.as_exact() {
                    Some(k) => Interval::exact(k & 31),
                    None => return full32,
                },
                _ => b,
            };
            if op == AluOp::Arsh {
                // Sign bit of a 32-bit operand may be set.
                return if a.hi <= i32::MAX as u64 { alu64(AluOp::Rsh, a, b) } else { full32 };
            }
            let r = alu64(op, a, b);
            if r.fits32() && !(op == AluOp::Sub && a.lo < b.hi) {
                r
            } else {
                full32
            }
        }
    }
}

fn alu64(op: AluOp, a: Interval, b: Interval) -> Interval {
    let full = Interval::FULL;
    match op {
        AluOp::Mov => b,
        AluOp::Add => match (a.lo.checked_add(b.lo), a.hi.checked_add(b.hi)) {
            (Some(lo), Some(hi)) => Interval::new(lo, hi),
            _ => full,
        },
        AluOp::Sub => {
            if a.lo >= b.hi {
                Interval::new(a.lo - b.hi, a.hi - b.lo)
            } else {
                full
            }
        }
        AluOp::Mul => match (a.lo.checked_mul(b.lo), a.hi.checked_mul(b.hi)) {
            (Some(lo), Some(hi)) => Interval::new(lo, hi),
            _ => full,
        },
        AluOp::Div => {
            if b.lo == 0 {
                // Division by zero yields zero.
                Interval::new(0, a.hi)
            } else {
                Interval::new(a.lo / b.hi, a.hi / b.lo)
            }
        }
        AluOp::Mod => {
            if b.lo == 0 {
                // Modulo by zero leaves the dividend.
                Interval::new(0, a.hi)
            } else if a.hi < b.lo {
                a
            } else {
                Interval::new(0, a.hi.min(b.hi - 1))
            }
        }
        AluOp::And => Interval::new(0, a.hi.min(b.hi)),
        AluOp::Or | AluOp::Xor => Interval::new(0, bit_span(a.hi | b.hi)),
        AluOp::Lsh => match b.as_exact() {
            Some(k) => {
                let k = (k & 63) as u32;
                if k == 0 {
                    a
                } else if a.hi.leading_zeros() >= k {
                    Interval::new(a.lo << k, a.hi << k)
                } else {
                    full
                }
            }
            None => full,
        },
        AluOp::Rsh => match b.as_exact() {
            Some(k) => Interval::new(a.lo >> (k & 63), a.hi >> (k & 63)),
            None => Interval::new(0, a.hi),
        },
        AluOp::Arsh => {
            if a.hi <= i64::MAX as u64 {
                alu64(AluOp::Rsh, a, b)
            } else {
                full
            }
        }
    }
}

fn negate(c: Cond) -> Option<Cond> {
    Some(match c {
        Cond::Eq => Cond::Ne,
        Cond::Ne => Cond::Eq,
        Cond::Gt => Cond::Le,
        Cond::Le => Cond::Gt,
        Cond::Ge => Cond::Lt,
        Cond::Lt => Cond::Ge,
        Cond::Sgt => Cond::Sle,
        Cond::Sle => Cond::Sgt,
        Cond::Sge => Cond::Slt,
        Cond::Slt => Cond::Sge,
        Cond::Set => return None,
    })
}

/// Narrows `(a, b)` assuming `a cond b` evaluates to `taken`.
/// `None` when that outcome is impossible.
pub(crate) fn refine(
    width: Width,
    cond: Cond,
    a: Interval,
    b: Interval,
    taken: bool,
) -> Option<(Interval, Interval)> {
    if let (Some(x), Some(y)) = (a.as_exact(), b.as_exact()) {
        return (cond.eval(width, x, y) == taken).then_some((a, b));
    }
    let cond = if taken {
        cond
    } else {
        match negate(cond) {
            Some(c) => c,
            None => return Some((a, b)),
        }
    };
    // Map to an unsigned comparison on the 64-bit values when the operands'
    // ranges make that exact; otherwise do not refine.
    let signed_ok = |lim: u64| a.hi <= lim && b.hi <= lim;
    let ucond = match (width, cond) {
        (Width::W64, Cond::Eq | Cond::Ne | Cond::Gt | Cond::Ge | Cond::Lt | Cond::Le) => cond,
        (Width::W32, Cond::Eq | Cond::Ne | Cond::Gt | Cond::Ge | Cond::Lt | Cond::Le) if signed_ok(u32::MAX as u64) => {
            cond
        }
        (Width::W64, _) if signed_ok(i64::MAX as u64) => unsign(cond),
        (Width::W32, _) if signed_ok(i32::MAX as u64) => unsign(cond),
        _ => return Some((a, b)),
    };
    refine_unsigned(ucond, a, b)
}

fn unsign(c: Cond) -> Cond {
    match c {
        Cond::Sgt => Cond::Gt,
        Cond::Sge => Cond::Ge,
        Cond::Slt => Cond::Lt,
        Cond::Sle => Cond::Le,
        other => other,
    }
}

fn refine_unsigned(cond: Cond, a: Interval, b: Interval) -> Option<(Interval, Interval)> {
    let ok = |x: Interval| (x.lo <= x.hi).then_some(x);
    match cond {
        Cond::Eq => {
            let i = ok(Interval::new(a.lo.max(b.lo), a.hi.min(b.hi)))?;
            Some((i, i))
        }
        Cond::Ne => {
            let trim = |x: Interval, y: Interval| -> Option<Interval> {
                match y.as_exact() {
                    Some(v) if x.lo == v && x.hi == v => None,
                    Some(v) if x.lo == v => Some(Interval::new(v + 1, x.hi)),
                    Some(v) if x.hi == v => Some(Interval::new(x.lo, v - 1)),
                    _ => Some(x),
                }
            };
            Some((trim(a, b)?, trim(b, a)?))
        }
        Cond::Lt => {
            if b.hi == 0 || a.lo == u64::MAX {
                return None;
            }
            Some((
                ok(Interval::new(a.lo, a.hi.min(b.hi - 1)))?,
                ok(Interval::new(b.lo.max(a.lo + 1), b.hi))?,
            ))
        }
        Cond::Le => Some((
            ok(Interval::new(a.lo, a.hi.min(b.hi)))?,
            ok(Interval::new(b.lo.max(a.lo), b.hi))?,
        )),
        Cond::Gt => refine_unsigned(Cond::Lt, b, a).map(|(y, x)| (x, y)),
        Cond::Ge => refine_unsigned(Cond::Le, b, a).map(|(y, x)| (x, y)),
        _ => Some((a, b)),
    }
}

/// One 8-byte stack slot: which bytes are initialized and what they hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Slot {
    pub mask: u8,
    /// `Ptr` only when the full slot was written by one 8-byte pointer spill.
    pub val: Val,
}

impl Slot {
    pub const EMPTY: Slot = Slot {
        mask: 0,
        val: Val::Uninit,
    };

    pub fn subsumes(self, other: Slot) -> bool {
        // Bytes uninitialized in self were never read by its continuation.
        if self.mask & other.mask != self.mask {
            return false;
        }
        match (self.val, other.val) {
            (Val::Ptr { .. }, _) | (_, Val::Ptr { .. }) => self.val.subsumes(other.val) && self.mask == other.mask,
            (Val::Uninit, _) => true,
            (Val::Scalar(_), Val::Uninit) => false,
            (a, b) => a.subsumes(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AbsState {
    pub pc: usize,
    pub regs: [Val; NUM_REGS],
    pub stack: [Slot; STACK_SLOTS],
    /// Instructions executed since the slice started.
    pub steps: u64,
}
