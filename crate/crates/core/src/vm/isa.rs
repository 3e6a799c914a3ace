// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Instruction encoding.
//!
//! Instructions use the eBPF layout: one 8-byte slot holding an opcode byte,
//! a byte of packed register indices (dst in the low nibble, src in the high
//! nibble), a signed 16-bit offset and a signed 32-bit immediate. `lddw`
//! occupies two consecutive slots, the second carrying the upper 32 bits of
//! the immediate.
//!
//! Only the subset needed by the runtime is accepted: 32/64-bit ALU, loads and
//! stores of 1/2/4/8 bytes, every conditional jump (64- and 32-bit compare),
//! helper calls and `exit`.

use std::fmt;

use thiserror::Error;

pub const INSN_SIZE: usize = 8;
/// Number of registers, r0..=r10.
pub const NUM_REGS: usize = 11;
/// Read-only frame pointer.
pub const FRAME_REG: u8 = 10;

// Instruction classes.
pub const CLS_LD: u8 = 0x00;
pub const CLS_LDX: u8 = 0x01;
pub const CLS_ST: u8 = 0x02;
pub const CLS_STX: u8 = 0x03;
pub const CLS_ALU: u8 = 0x04;
pub const CLS_JMP: u8 = 0x05;
pub const CLS_JMP32: u8 = 0x06;
pub const CLS_ALU64: u8 = 0x07;

// Size and mode bits for memory classes.
pub const SZ_W: u8 = 0x00;
pub const SZ_H: u8 = 0x08;
pub const SZ_B: u8 = 0x10;
pub const SZ_DW: u8 = 0x18;
pub const MODE_IMM: u8 = 0x00;
pub const MODE_MEM: u8 = 0x60;

/// Source flag: immediate (K) or register (X).
pub const SRC_K: u8 = 0x00;
pub const SRC_X: u8 = 0x08;

pub const LDDW: u8 = CLS_LD | MODE_IMM | SZ_DW;
pub const CALL: u8 = CLS_JMP | 0x80;
pub const EXIT: u8 = CLS_JMP | 0x90;
pub const JA: u8 = CLS_JMP;

/// Helper ids callable through `call`.
pub mod helper {
    /// Returns a pointer to the application region in r0 and its length in r2.
    pub const APP_REGION: u32 = 1;
    /// `UDMA(ctx, dst, src, len)`: yields; r0 = 0/1 on resume.
    pub const UDMA: u32 = 2;
    /// `UCAS(ctx, dst, old, new)`: yields; r0 = prior 32-bit value on resume.
    pub const UCAS: u32 = 3;
    /// `UFAA(ctx, dst, val)`: yields; r0 = prior 32-bit value on resume.
    pub const UFAA: u32 = 4;

    pub fn name(id: u32) -> Option<&'static str> {
        match id {
            APP_REGION => Some("app_region"),
            UDMA => Some("udma"),
            UCAS => Some("ucas"),
            UFAA => Some("ufaa"),
            _ => None,
        }
    }

    pub fn by_name(name: &str) -> Option<u32> {
        match name {
            "app_region" => Some(APP_REGION),
            "udma" => Some(UDMA),
            "ucas" => Some(UCAS),
            "ufaa" => Some(UFAA),
            _ => None,
        }
    }

    /// Helpers that suspend the function and hand the message to a UDMA module.
    pub fn is_yielding(id: u32) -> bool {
        matches!(id, UDMA | UCAS | UFAA)
    }
}

/// One raw 8-byte instruction slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Instruction {
    pub opcode: u8,
    pub dst: u8,
    pub src: u8,
    pub off: i16,
    pub imm: i32,
}

impl Instruction {
    pub const fn new(opcode: u8, dst: u8, src: u8, off: i16, imm: i32) -> Self {
        Self {
            opcode,
            dst,
            src,
            off,
            imm,
        }
    }

    pub fn to_bytes(self) -> [u8; INSN_SIZE] {
        let mut out = [0u8; INSN_SIZE];
        out[0] = self.opcode;
        out[1] = (self.dst & 0x0f) | ((self.src & 0x0f) << 4);
        out[2..4].copy_from_slice(&self.off.to_le_bytes());
        out[4..8].copy_from_slice(&self.imm.to_le_bytes());
        out
    }

    pub fn from_bytes(b: &[u8; INSN_SIZE]) -> Self {
        Self {
            opcode: b[0],
            dst: b[1] & 0x0f,
            src: b[1] >> 4,
            off: i16::from_le_bytes([b[2], b[3]]),
            imm: i32::from_le_bytes([b[4], b[5], b[6], b[7]]),
        }
    }
}

pub fn encode_program(insns: &[Instruction]) -> Vec<u8> {
    insns.iter().flat_map(|i| i.to_bytes()).collect()
}

pub fn decode_program(bytes: &[u8]) -> Result<Vec<Instruction>, DecodeError> {
    if bytes.len() % INSN_SIZE != 0 {
        return Err(DecodeError::TruncatedProgram(bytes.len()));
    }
    Ok(bytes
        .chunks_exact(INSN_SIZE)
        .map(|c| Instruction::from_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Width {
    W32,
    W64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemSize {
    B,
    H,
    W,
    DW,
}

impl MemSize {
    pub fn bytes(self) -> usize {
        match self {
            MemSize::B => 1,
            MemSize::H => 2,
            MemSize::W => 4,
            MemSize::DW => 8,
        }
    }

    fn from_bits(bits: u8) -> Self {
        match bits & 0x18 {
            SZ_B => MemSize::B,
            SZ_H => MemSize::H,
            SZ_W => MemSize::W,
            _ => MemSize::DW,
        }
    }

    pub fn bits(self) -> u8 {
        match self {
            MemSize::B => SZ_B,
            MemSize::H => SZ_H,
            MemSize::W => SZ_W,
            MemSize::DW => SZ_DW,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            MemSize::B => "b",
            MemSize::H => "h",
            MemSize::W => "w",
            MemSize::DW => "dw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    Div,
    Or,
    And,
    Lsh,
    Rsh,
    Mod,
    Xor,
    Mov,
    Arsh,
}

impl AluOp {
    pub const ALL: [AluOp; 12] = [
        AluOp::Add,
        AluOp::Sub,
        AluOp::Mul,
        AluOp::Div,
        AluOp::Or,
        AluOp::And,
        AluOp::Lsh,
        AluOp::Rsh,
        AluOp::Mod,
        AluOp::Xor,
        AluOp::Mov,
        AluOp::Arsh,
    ];

    pub fn code(self) -> u8 {
        match self {
            AluOp::Add => 0x00,
            AluOp::Sub => 0x10,
            AluOp::Mul => 0x20,
            AluOp::Div => 0x30,
            AluOp::Or => 0x40,
            AluOp::And => 0x50,
            AluOp::Lsh => 0x60,
            AluOp::Rsh => 0x70,
            AluOp::Mod => 0x90,
            AluOp::Xor => 0xa0,
            AluOp::Mov => 0xb0,
            AluOp::Arsh => 0xc0,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        AluOp::ALL.iter().copied().find(|op| op.code() == code)
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::Mul => "mul",
            AluOp::Div => "div",
            AluOp::Or => "or",
            AluOp::And => "and",
            AluOp::Lsh => "lsh",
            AluOp::Rsh => "rsh",
            AluOp::Mod => "mod",
            AluOp::Xor => "xor",
            AluOp::Mov => "mov",
            AluOp::Arsh => "arsh",
        }
    }
}

/// Conditional jump predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cond {
    Eq,
    Gt,
    Ge,
    Set,
    Ne,
    Sgt,
    Sge,
    Lt,
    Le,
    Slt,
    Sle,
}

impl Cond {
    pub const ALL: [Cond; 11] = [
        Cond::Eq,
        Cond::Gt,
        Cond::Ge,
        Cond::Set,
        Cond::Ne,
        Cond::Sgt,
        Cond::Sge,
        Cond::Lt,
        Cond::Le,
        Cond::Slt,
        Cond::Sle,
    ];

    pub fn code(self) -> u8 {
        match self {
            Cond::Eq => 0x10,
            Cond::Gt => 0x20,
            Cond::Ge => 0x30,
            Cond::Set => 0x40,
            Cond::Ne => 0x50,
            Cond::Sgt => 0x60,
            Cond::Sge => 0x70,
            Cond::Lt => 0xa0,
            Cond::Le => 0xb0,
            Cond::Slt => 0xc0,
            Cond::Sle => 0xd0,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Cond::ALL.iter().copied().find(|c| c.code() == code)
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Cond::Eq => "jeq",
            Cond::Gt => "jgt",
            Cond::Ge => "jge",
            Cond::Set => "jset",
            Cond::Ne => "jne",
            Cond::Sgt => "jsgt",
            Cond::Sge => "jsge",
            Cond::Lt => "jlt",
            Cond::Le => "jle",
            Cond::Slt => "jslt",
            Cond::Sle => "jsle",
        }
    }

    /// Evaluates the predicate on concrete operands.
    pub fn eval(self, width: Width, a: u64, b: u64) -> bool {
        let (a, b) = match width {
            Width::W64 => (a, b),
            Width::W32 => (a as u32 as u64, b as u32 as u64),
        };
        let (sa, sb) = match width {
            Width::W64 => (a as i64, b as i64),
            Width::W32 => (a as u32 as i32 as i64, b as u32 as i32 as i64),
        };
        match self {
            Cond::Eq => a == b,
            Cond::Gt => a > b,
            Cond::Ge => a >= b,
            Cond::Set => a & b != 0,
            Cond::Ne => a != b,
            Cond::Sgt => sa > sb,
            Cond::Sge => sa >= sb,
            Cond::Lt => a < b,
            Cond::Le => a <= b,
            Cond::Slt => sa < sb,
            Cond::Sle => sa <= sb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(u8),
    Imm(i32),
}

/// A decoded instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Alu {
        width: Width,
        op: AluOp,
        dst: u8,
        src: Operand,
    },
    Neg {
        width: Width,
        dst: u8,
    },
    /// Two-slot 64-bit immediate load.
    LoadImm64 {
        dst: u8,
        imm: u64,
    },
    Load {
        size: MemSize,
        dst: u8,
        base: u8,
        off: i16,
    },
    Store {
        size: MemSize,
        base: u8,
        off: i16,
        src: Operand,
    },
    Jump {
        off: i16,
    },
    CondJump {
        width: Width,
        cond: Cond,
        dst: u8,
        src: Operand,
        off: i16,
    },
    Call {
        helper: u32,
    },
    Exit,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("program length {0} is not a multiple of 8")]
    TruncatedProgram(usize),
    #[error("unsupported opcode {opcode:#04x} at slot {pc}")]
    BadOpcode { pc: usize, opcode: u8 },
    #[error("register index out of range at slot {pc}")]
    BadRegister { pc: usize },
    #[error("lddw at slot {pc} is missing its second slot")]
    IncompleteLddw { pc: usize },
}

/// Decoded program aligned to slots: the second slot of an `lddw` is `None`.
pub fn decode(insns: &[Instruction]) -> Result<Vec<Option<Op>>, DecodeError> {
    let mut out = Vec::with_capacity(insns.len());
    let mut pc = 0;
    while pc < insns.len() {
        let insn = insns[pc];
        if insn.dst as usize >= NUM_REGS || insn.src as usize >= NUM_REGS {
            return Err(DecodeError::BadRegister { pc });
        }
        if insn.opcode == LDDW {
            let hi = insns
                .get(pc + 1)
                .ok_or(DecodeError::IncompleteLddw { pc })?;
            if hi.opcode != 0 || hi.dst != 0 || hi.src != 0 || hi.off != 0 {
                return Err(DecodeError::IncompleteLddw { pc });
            }
            let imm = (insn.imm as u32 as u64) | ((hi.imm as u32 as u64) << 32);
            out.push(Some(Op::LoadImm64 { dst: insn.dst, imm }));
            out.push(None);
            pc += 2;
            continue;
        }
        out.push(Some(decode_one(pc, insn)?));
        pc += 1;
    }
    Ok(out)
}

fn decode_one(pc: usize, insn: Instruction) -> Result<Op, DecodeError> {
    let bad = || DecodeError::BadOpcode {
        pc,
        opcode: insn.opcode,
    };
    let cls = insn.opcode & 0x07;
    let src_operand = |opcode: u8| {
        if opcode & SRC_X != 0 {
            Operand::Reg(insn.src)
        } else {
            Operand::Imm(insn.imm)
        }
    };
    match cls {
        CLS_ALU | CLS_ALU64 => {
            let width = if cls == CLS_ALU64 {
                Width::W64
            } else {
                Width::W32
            };
            let code = insn.opcode & 0xf0;
            if code == 0x80 {
                if insn.opcode & SRC_X != 0 {
                    return Err(bad());
                }
                return Ok(Op::Neg {
                    width,
                    dst: insn.dst,
                });
            }
            let op = AluOp::from_code(code).ok_or_else(bad)?;
            Ok(Op::Alu {
                width,
                op,
                dst: insn.dst,
                src: src_operand(insn.opcode),
            })
        }
        CLS_LDX => {
            if insn.opcode & 0xe0 != MODE_MEM {
                return Err(bad());
            }
            Ok(Op::Load {
                size: MemSize::from_bits(insn.opcode),
                dst: insn.dst,
                base: insn.src,
                off: insn.off,
            })
        }
        CLS_ST | CLS_STX => {
            if insn.opcode & 0xe0 != MODE_MEM {
                return Err(bad());
            }
            let src = if cls == CLS_STX {
                Operand::Reg(insn.src)
            } else {
                Operand::Imm(insn.imm)
            };
            Ok(Op::Store {
                size: MemSize::from_bits(insn.opcode),
                base: insn.dst,
                off: insn.off,
                src,
            })
        }
        CLS_JMP | CLS_JMP32 => {
            let code = insn.opcode & 0xf0;
            let width = if cls == CLS_JMP {
                Width::W64
            } else {
                Width::W32
            };
            match (cls, insn.opcode) {
                (CLS_JMP, JA) => return Ok(Op::Jump { off: insn.off }),
                (CLS_JMP, CALL) => {
                    return Ok(Op::Call {
                        helper: insn.imm as u32,
                    })
                }
                (CLS_JMP, EXIT) => return Ok(Op::Exit),
                _ => {}
            }
            let cond = Cond::from_code(code).ok_or_else(bad)?;
            Ok(Op::CondJump {
                width,
                cond,
                dst: insn.dst,
                src: src_operand(insn.opcode),
                off: insn.off,
            })
        }
        _ => Err(bad()),
    }
}

/// Encodes a decoded op back into one or two slots.
pub fn encode(op: &Op) -> Vec<Instruction> {
    let src_bits = |src: &Operand| match src {
        Operand::Reg(r) => (SRC_X, *r, 0),
        Operand::Imm(i) => (SRC_K, 0, *i),
    };
    match *op {
        Op::Alu {
            width,
            op,
            dst,
            src,
        } => {
            let cls = if width == Width::W64 {
                CLS_ALU64
            } else {
                CLS_ALU
            };
            let (flag, s, imm) = src_bits(&src);
            vec![Instruction::new(cls | op.code() | flag, dst, s, 0, imm)]
        }
        Op::Neg { width, dst } => {
            let cls = if width == Width::W64 {
                CLS_ALU64
            } else {
                CLS_ALU
            };
            vec![Instruction::new(cls | 0x80, dst, 0, 0, 0)]
        }
        Op::LoadImm64 { dst, imm } => vec![
            Instruction::new(LDDW, dst, 0, 0, imm as u32 as i32),
            Instruction::new(0, 0, 0, 0, (imm >> 32) as u32 as i32),
        ],
        Op::Load {
            size,
            dst,
            base,
            off,
        } => vec![Instruction::new(
            CLS_LDX | MODE_MEM | size.bits(),
            dst,
            base,
            off,
            0,
        )],
        Op::Store {
            size,
            base,
            off,
            src,
        } => match src {
            Operand::Reg(r) => vec![Instruction::new(
                CLS_STX | MODE_MEM | size.bits(),
                base,
                r,
                off,
                0,
            )],
            Operand::Imm(i) => vec![Instruction::new(
                CLS_ST | MODE_MEM | size.bits(),
                base,
                0,
                off,
                i,
            )],
        },
        Op::Jump { off } => vec![Instruction::new(JA, 0, 0, off, 0)],
        Op::CondJump {
            width,
            cond,
            dst,
            src,
            off,
        } => {
            let cls = if width == Width::W64 {
                CLS_JMP
            } else {
                CLS_JMP32
            };
            let (flag, s, imm) = src_bits(&src);
            vec![Instruction::new(cls | cond.code() | flag, dst, s, off, imm)]
        }
        Op::Call { helper } => vec![Instruction::new(CALL, 0, 0, 0, helper as i32)],
        Op::Exit => vec![Instruction::new(EXIT, 0, 0, 0, 0)],
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "r{r}"),
            Operand::Imm(i) => write!(f, "{i}"),
        }
    }
}

fn fmt_off(off: i16) -> String {
    if off < 0 {
        format!("{off}")
    } else {
        format!("+{off}")
    }
}

/// Prints the op in assembler syntax. Jump targets are printed as relative
/// slot offsets (`+3`, `-2`) which the assembler accepts back.
impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = |width: Width| if width == Width::W32 { "32" } else { "" };
        match *self {
            Op::Alu {
                width,
                op,
                dst,
                src,
            } => write!(f, "{}{} r{}, {}", op.mnemonic(), w(width), dst, src),
            Op::Neg { width, dst } => write!(f, "neg{} r{}", w(width), dst),
            Op::LoadImm64 { dst, imm } => write!(f, "lddw r{dst}, {imm:#x}"),
            Op::Load {
                size,
                dst,
                base,
                off,
            } => write!(f, "ldx{} r{}, [r{}{}]", size.suffix(), dst, base, fmt_off(off)),
            Op::Store {
                size,
                base,
                off,
                src,
            } => match src {
                Operand::Reg(r) => {
                    write!(f, "stx{} [r{}{}], r{}", size.suffix(), base, fmt_off(off), r)
                }
                Operand::Imm(i) => {
                    write!(f, "st{} [r{}{}], {}", size.suffix(), base, fmt_off(off), i)
                }
            },
            Op::Jump { off } => write!(f, "ja {}", fmt_off(off)),
            Op::CondJump {
                width,
                cond,
                dst,
                src,
                off,
            } => write!(
                f,
                "{}{} r{}, {}, {}",
                cond.mnemonic(),
                w(width),
                dst,
                src,
                fmt_off(off)
            ),
            Op::Call { helper: h } => match helper::name(h) {
                Some(name) => write!(f, "call {name}"),
                None => write!(f, "call {h}"),
            },
            Op::Exit => write!(f, "exit"),
        }
    }
}
