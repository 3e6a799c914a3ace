// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Bytecode interpreter with cooperative yield.
//!
//! A yielding helper call writes its descriptor and the register file into
//! the message and returns [`ExecOutcome::Yielded`]. The stack already lives
//! in the message, so nothing else moves. Resuming restores the registers,
//! rebases every pointer the image's vector marks for that call site and
//! continues at the instruction after the call with the UDMA result in r0.

use thiserror::Error;

use super::buffer::{
    slot_range, MessageBuffer, StateFlag, APP_CAPACITY, CAPACITY, HEADER_LEN, OFF_APP, OFF_APP_LEN, OFF_DST_PORT,
    OFF_PC, OFF_REGS, OFF_STACK, OFF_STACK_TOP, OFF_VECTOR, RELOC_SLOTS, STATUS_PENDING,
};
use super::image::FunctionImage;
use super::isa::{helper, AluOp, MemSize, Op, Operand, Width, FRAME_REG, NUM_REGS};
use crate::memory::{Addr, UdmaDescriptor};

pub const DEFAULT_STEP_BUDGET: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VmConfig {
    /// Instructions allowed between two yields (or from start to first yield).
    pub step_budget: u64,
}

impl Default for VmConfig {
    fn default() -> Self {
        Self {
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }
}

/// Live interpreter state. The stack is not here: it is part of the buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VmState {
    pub pc: usize,
    pub regs: [u64; NUM_REGS],
    pub yield_pending: Option<UdmaDescriptor>,
}

impl VmState {
    /// Entry state for a fresh message at `base`.
    pub fn fresh(base: u64) -> Self {
        let mut regs = [0u64; NUM_REGS];
        regs[1] = base;
        regs[FRAME_REG as usize] = base + OFF_STACK_TOP as u64;
        Self {
            pc: 0,
            regs,
            yield_pending: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RestoreError {
    #[error("message is not suspended")]
    NotSuspended,
    #[error("message belongs to function {found}, image is {expected}")]
    FunctionMismatch { expected: u32, found: u32 },
    #[error("saved pc {0} is not a yield site")]
    NotAYieldSite(u64),
    #[error("stored relocation vector does not match the image")]
    VectorMismatch,
    #[error("UDMA result still pending")]
    Pending,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Trap {
    #[error("out-of-bounds access of {len} bytes at {addr:#x} (pc {pc})")]
    OutOfBounds { pc: usize, addr: u64, len: usize },
    #[error("bad opcode at pc {pc}")]
    BadOpcode { pc: usize },
    #[error("step limit exceeded")]
    StepLimitExceeded,
    #[error("helper call at pc {pc} without the context in r1")]
    BadHelperArgs { pc: usize },
    #[error("malformed saved state: {0}")]
    MalformedState(#[from] RestoreError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecOutcome {
    Completed(u64),
    Yielded(UdmaDescriptor),
    Trapped(Trap),
}

/// Result of one execution slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub outcome: ExecOutcome,
    /// Instructions retired in this slice.
    pub insns: u64,
}

/// Writes pc, registers and the site's vector into the message.
pub fn save_state(msg: &mut MessageBuffer, state: &VmState, yield_vector: u64) {
    msg.put_u64(OFF_PC, state.pc as u64);
    for (i, r) in state.regs.iter().enumerate() {
        msg.put_u64(OFF_REGS + 8 * i, *r);
    }
    msg.put_u64(OFF_VECTOR, yield_vector);
    msg.set_state(StateFlag::Suspended);
}

/// Rebuilds the interpreter state of a suspended message now held at
/// `new_base`, relocating the pointers marked by the stored vector.
pub fn restore_state(
    msg: &mut MessageBuffer,
    image: &FunctionImage,
    new_base: u64,
) -> Result<VmState, RestoreError> {
    if msg.state() != Some(StateFlag::Suspended) {
        return Err(RestoreError::NotSuspended);
    }
    if msg.function_id() != image.function_id() {
        return Err(RestoreError::FunctionMismatch {
            expected: image.function_id(),
            found: msg.function_id(),
        });
    }
    let pc = msg.saved_pc();
    let vector = usize::try_from(pc)
        .ok()
        .and_then(|p| image.vector_at(p))
        .ok_or(RestoreError::NotAYieldSite(pc))?;
    if msg.relocation_vector() != vector {
        return Err(RestoreError::VectorMismatch);
    }
    let status = msg.udma_status();
    if status == STATUS_PENDING {
        return Err(RestoreError::Pending);
    }

    let old_base = msg.saved_reg(1);
    let rebase = |v: u64| new_base.wrapping_add(v.wrapping_sub(old_base));
    let mut regs = [0u64; NUM_REGS];
    for (i, r) in regs.iter_mut().enumerate().skip(6).take(4) {
        let v = msg.saved_reg(i);
        *r = if vector & (1 << (i - 6)) != 0 { rebase(v) } else { v };
    }
    for j in 0..RELOC_SLOTS {
        if vector & (1 << (4 + j)) != 0 {
            let off = slot_range(j).0;
            let v = msg.u64_at(off);
            msg.put_u64(off, rebase(v));
        }
    }
    let op = msg.descriptor().map(|d| d.op);
    regs[0] = match (op, status) {
        (Some(o), 0) if o.is_atomic() => msg.udma_result() as u64,
        (Some(o), _) if o.is_atomic() => u64::MAX,
        (_, s) => s as u64,
    };
    regs[1] = new_base;
    regs[FRAME_REG as usize] = new_base + OFF_STACK_TOP as u64;
    Ok(VmState {
        pc: pc as usize + 1,
        regs,
        yield_pending: None,
    })
}

/// Runs `image` on `msg` until it exits, yields or traps.
pub fn execute(image: &FunctionImage, msg: &mut MessageBuffer, cfg: &VmConfig) -> Execution {
    let state = match msg.state() {
        Some(StateFlag::Fresh) => VmState::fresh(msg.base),
        Some(StateFlag::Suspended) => match restore_state(msg, image, msg.base) {
            Ok(s) => s,
            Err(e) => {
                return Execution {
                    outcome: ExecOutcome::Trapped(e.into()),
                    insns: 0,
                }
            }
        },
        _ => {
            return Execution {
                outcome: ExecOutcome::Trapped(RestoreError::NotSuspended.into()),
                insns: 0,
            }
        }
    };
    run(image, msg, state, cfg)
}

/// Where an access landed, after permission checks.
#[inline]
fn check(base: u64, addr: u64, len: usize, write: bool) -> Option<usize> {
    let off = addr.wrapping_sub(base);
    if off > (CAPACITY - len) as u64 {
        return None;
    }
    let o = off as usize;
    let end = o + len;
    let stack = o >= OFF_STACK && end <= OFF_STACK_TOP;
    let ok = if write {
        // Ports and the payload length are the only writable header fields.
        end <= OFF_DST_PORT + 2 || (o >= OFF_APP_LEN && end <= OFF_APP_LEN + 2) || stack || o >= OFF_APP
    } else {
        end <= HEADER_LEN || stack || o >= OFF_APP
    };
    ok.then_some(o)
}

#[inline]
pub(crate) fn alu(width: Width, op: AluOp, a: u64, b: u64) -> u64 {
    match width {
        Width::W64 => match op {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Mul => a.wrapping_mul(b),
            AluOp::Div => a.checked_div(b).unwrap_or(0),
            AluOp::Mod => a.checked_rem(b).unwrap_or(a),
            AluOp::Or => a | b,
            AluOp::And => a & b,
            AluOp::Xor => a ^ b,
            AluOp::Lsh => a << (b & 63),
            AluOp::Rsh => a >> (b & 63),
            AluOp::Arsh => ((a as i64) >> (b & 63)) as u64,
            AluOp::Mov => b,
        },
        Width::W32 => {
            let (a, b) = (a as u32, b as u32);
            (match op {
                AluOp::Add => a.wrapping_add(b),
                AluOp::Sub => a.wrapping_sub(b),
                AluOp::Mul => a.wrapping_mul(b),
                AluOp::Div => a.checked_div(b).unwrap_or(0),
                AluOp::Mod => a.checked_rem(b).unwrap_or(a),
                AluOp::Or => a | b,
                AluOp::And => a & b,
                AluOp::Xor => a ^ b,
                AluOp::Lsh => a << (b & 31),
                AluOp::Rsh => a >> (b & 31),
                AluOp::Arsh => ((a as i32) >> (b & 31)) as u32,
                AluOp::Mov => b,
            }) as u64
        }
    }
}

#[inline]
fn read(bytes: &[u8], o: usize, size: MemSize) -> u64 {
    match size {
        MemSize::B => bytes[o] as u64,
        MemSize::H => u16::from_le_bytes([bytes[o], bytes[o + 1]]) as u64,
        MemSize::W => u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as u64,
        MemSize::DW => u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()),
    }
}

#[inline]
fn write(bytes: &mut [u8], o: usize, size: MemSize, v: u64) {
    let n = size.bytes();
    bytes[o..o + n].copy_from_slice(&v.to_le_bytes()[..n]);
}

fn run(image: &FunctionImage, msg: &mut MessageBuffer, mut st: VmState, cfg: &VmConfig) -> Execution {
    let ops = image.ops();
    let base = msg.base;
    let mut insns = 0u64;
    let regs = &mut st.regs;
    let mut pc = st.pc;
    macro_rules! trap {
        ($t:expr) => {
            return Execution {
                outcome: ExecOutcome::Trapped($t),
                insns,
            }
        };
    }
    loop {
        if insns >= cfg.step_budget {
            trap!(Trap::StepLimitExceeded);
        }
        insns += 1;
        let Some(Some(op)) = ops.get(pc) else {
            trap!(Trap::BadOpcode { pc });
        };
        let mut next = pc + 1;
        match *op {
            Op::Alu { width, op, dst, src } => {
                if dst == FRAME_REG {
                    trap!(Trap::BadOpcode { pc });
                }
                let b = match src {
                    Operand::Reg(r) => regs[r as usize],
                    Operand::Imm(i) => i as i64 as u64,
                };
                regs[dst as usize] = alu(width, op, regs[dst as usize], b);
            }
            Op::Neg { width, dst } => {
                if dst == FRAME_REG {
                    trap!(Trap::BadOpcode { pc });
                }
                let v = regs[dst as usize];
                regs[dst as usize] = match width {
                    Width::W64 => v.wrapping_neg(),
                    Width::W32 => (v as u32).wrapping_neg() as u64,
                };
            }
            Op::LoadImm64 { dst, imm } => {
                if dst == FRAME_REG {
                    trap!(Trap::BadOpcode { pc });
                }
                regs[dst as usize] = imm;
                next = pc + 2;
            }
            Op::Load { size, dst, base: b, off } => {
                if dst == FRAME_REG {
                    trap!(Trap::BadOpcode { pc });
                }
                let addr = regs[b as usize].wrapping_add(off as i64 as u64);
                let Some(o) = check(base, addr, size.bytes(), false) else {
                    trap!(Trap::OutOfBounds {
                        pc,
                        addr,
                        len: size.bytes()
                    });
                };
                regs[dst as usize] = read(msg.as_bytes(), o, size);
            }
            Op::Store { size, base: b, off, src } => {
                let addr = regs[b as usize].wrapping_add(off as i64 as u64);
                let Some(o) = check(base, addr, size.bytes(), true) else {
                    trap!(Trap::OutOfBounds {
                        pc,
                        addr,
                        len: size.bytes()
                    });
                };
                let v = match src {
                    Operand::Reg(r) => regs[r as usize],
                    Operand::Imm(i) => i as i64 as u64,
                };
                write(msg.as_bytes_mut(), o, size, v);
            }
            Op::Jump { off } => {
                next = (pc as i64 + 1 + off as i64) as usize;
            }
            Op::CondJump {
                width,
                cond,
                dst,
                src,
                off,
            } => {
                let b = match src {
                    Operand::Reg(r) => regs[r as usize],
                    Operand::Imm(i) => i as i64 as u64,
                };
                if cond.eval(width, regs[dst as usize], b) {
                    next = (pc as i64 + 1 + off as i64) as usize;
                }
            }
            Op::Call { helper: h } => match h {
                helper::APP_REGION => {
                    regs[0] = base + OFF_APP as u64;
                    regs[2] = OFF_APP as u64;
                    regs[3] = APP_CAPACITY as u64;
                    regs[4] = 0;
                    regs[5] = 0;
                }
                helper::UDMA | helper::UCAS | helper::UFAA => {
                    if regs[1] != base {
                        trap!(Trap::BadHelperArgs { pc });
                    }
                    let dst = Addr::unpack(regs[2]);
                    let desc = match h {
                        helper::UDMA => UdmaDescriptor::copy(dst, Addr::unpack(regs[3]), regs[4]),
                        helper::UCAS => UdmaDescriptor::cas(dst, regs[3] as u32, regs[4] as u32),
                        _ => UdmaDescriptor::faa(dst, regs[3] as u32),
                    };
                    let Some(vector) = image.vector_at(pc) else {
                        trap!(Trap::BadOpcode { pc });
                    };
                    msg.set_descriptor(&desc);
                    st.pc = pc;
                    st.yield_pending = Some(desc);
                    save_state(msg, &st, vector);
                    return Execution {
                        outcome: ExecOutcome::Yielded(desc),
                        insns,
                    };
                }
                _ => trap!(Trap::BadOpcode { pc }),
            },
            Op::Exit => {
                msg.set_state(StateFlag::Complete);
                return Execution {
                    outcome: ExecOutcome::Completed(regs[0]),
                    insns,
                };
            }
        }
        pc = next;
    }
}
