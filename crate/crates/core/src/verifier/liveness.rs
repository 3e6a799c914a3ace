// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Backward register liveness over the slot-indexed control-flow graph.

use crate::vm::isa::{helper, Op, Operand};

/// Registers read by `op` and registers it writes, as bitmasks over r0..r10.
pub(crate) fn use_def(op: &Op) -> (u16, u16) {
    let bit = |r: u8| 1u16 << r;
    let opnd = |o: &Operand| match o {
        Operand::Reg(r) => bit(*r),
        Operand::Imm(_) => 0,
    };
    match op {
        Op::Alu { op, dst, src, .. } => {
            let reads_dst = if *op == crate::vm::isa::AluOp::Mov { 0 } else { bit(*dst) };
            (reads_dst | opnd(src), bit(*dst))
        }
        Op::Neg { dst, .. } => (bit(*dst), bit(*dst)),
        Op::LoadImm64 { dst, .. } => (0, bit(*dst)),
        Op::Load { dst, base, .. } => (bit(*base), bit(*dst)),
        Op::Store { base, src, .. } => (bit(*base) | opnd(src), 0),
        Op::Jump { .. } => (0, 0),
        Op::CondJump { dst, src, .. } => (bit(*dst) | opnd(src), 0),
        Op::Call { helper: h } => {
            let args = match *h {
                helper::UDMA | helper::UCAS => 0b1_1110,
                helper::UFAA => 0b0_1110,
                _ => 0b0_0010,
            };
            (args, 0b11_1111)
        }
        Op::Exit => (1, 0),
    }
}

/// Successor slots of the instruction at `pc`.
pub(crate) fn successors(pc: usize, op: &Op) -> Vec<usize> {
    let rel = |off: i16| (pc as i64 + 1 + off as i64) as usize;
    match op {
        Op::Exit => vec![],
        Op::Jump { off } => vec![rel(*off)],
        Op::CondJump { off, .. } => vec![pc + 1, rel(*off)],
        Op::LoadImm64 { .. } => vec![pc + 2],
        _ => vec![pc + 1],
    }
}

/// Live-in register mask for every slot. Assumes jump targets were checked.
pub(crate) fn live_in(ops: &[Option<Op>]) -> Vec<u16> {
    let n = ops.len();
    let mut live = vec![0u16; n];
    let mut changed = true;
    while changed {
        changed = false;
        for pc in (0..n).rev() {
            let Some(op) = &ops[pc] else { continue };
            let out = successors(pc, op)
                .into_iter()
                .filter(|&s| s < n)
                .fold(0u16, |acc, s| acc | live[s]);
            let (u, d) = use_def(op);
            let inn = u | (out & !d);
            if inn != live[pc] {
                live[pc] = inn;
                changed = true;
            }
        }
    }
    live
}
