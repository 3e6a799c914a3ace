// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Text assembler for function bytecode.
//!
//! One instruction per line. Syntax summary:
//!
//! ```text
//! ; comment (also `#` or `//`)
//! .equ MAX_LEN, 4096          ; named constant, usable in any immediate
//! .default REGION, 1           ; like .equ unless REGION is already defined
//! loop:                        ; label
//!     mov r6, r1               ; 64-bit ALU: add sub mul div mod and or xor lsh rsh arsh mov
//!     add32 r2, 7              ; 32-bit ALU variant
//!     neg r3
//!     lddw r2, (1 << 56) | 16  ; 64-bit immediate (two slots)
//!     ldxw r3, [r7+4]          ; loads: ldxb ldxh ldxw ldxdw
//!     stxdw [r10-8], r6        ; register stores: stxb stxh stxw stxdw
//!     stw [r7+0], 0            ; immediate stores: stb sth stw stdw
//!     jge r8, MAX_LEN, done    ; jeq jne jgt jge jlt jle jset jsgt jsge jslt jsle (+32)
//!     ja loop                  ; targets are labels or relative slot offsets (+3, -2)
//!     call udma                ; app_region udma ucas ufaa, or a numeric helper id
//!     exit
//! ```
//!
//! Immediates accept decimal, hex (`0x`), `.equ` names and the operators
//! `| & ^ << >> + - *` with C precedence and parentheses.

use std::collections::HashMap;

use thiserror::Error;

use super::isa::{self, AluOp, Cond, Instruction, MemSize, Op, Operand, Width};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct AsmError {
    pub line: usize,
    pub msg: String,
}

fn err<T>(line: usize, msg: impl Into<String>) -> Result<T, AsmError> {
    Err(AsmError {
        line,
        msg: msg.into(),
    })
}

/// Jump target as written in the source.
#[derive(Debug, Clone)]
enum Target {
    Label(String),
    Rel(i64),
}

#[derive(Debug, Clone)]
enum Pending {
    Ready(Op),
    Jump {
        target: Target,
    },
    CondJump {
        width: Width,
        cond: Cond,
        dst: u8,
        src: Operand,
        target: Target,
    },
}

impl Pending {
    fn slots(&self) -> usize {
        match self {
            Pending::Ready(Op::LoadImm64 { .. }) => 2,
            _ => 1,
        }
    }
}

/// Assembles source text into instruction slots.
pub fn assemble(src: &str) -> Result<Vec<Instruction>, AsmError> {
    let mut consts: HashMap<String, i64> = HashMap::new();
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut items: Vec<(usize, usize, Pending)> = Vec::new();
    let mut slot = 0usize;

    for (idx, raw) in src.lines().enumerate() {
        let line_no = idx + 1;
        let mut line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let directive = if let Some(rest) = line.strip_prefix(".equ") {
            Some((rest, true))
        } else {
            line.strip_prefix(".default").map(|rest| (rest, false))
        };
        if let Some((rest, overwrite)) = directive {
            let rest = rest.trim();
            let (name, value) = match rest.split_once(|c: char| c == ',' || c.is_whitespace()) {
                Some((n, v)) => (n.trim(), v.trim().trim_start_matches(',').trim()),
                None => return err(line_no, ".equ needs a name and a value"),
            };
            if !is_ident(name) {
                return err(line_no, format!("bad constant name `{name}`"));
            }
            let v = eval_expr(value, &consts).map_err(|m| AsmError { line: line_no, msg: m })?;
            if overwrite || !consts.contains_key(name) {
                consts.insert(name.to_string(), v);
            }
            continue;
        }
        while let Some((head, tail)) = split_label(line) {
            if labels.insert(head.to_string(), slot).is_some() {
                return err(line_no, format!("duplicate label `{head}`"));
            }
            line = tail.trim();
        }
        if line.is_empty() {
            continue;
        }
        let pending = parse_insn(line, &consts).map_err(|m| AsmError { line: line_no, msg: m })?;
        let n = pending.slots();
        items.push((line_no, slot, pending));
        slot += n;
    }

    let mut out = Vec::with_capacity(slot);
    for (line_no, at, pending) in items {
        let resolve = |t: &Target| -> Result<i16, AsmError> {
            let rel = match t {
                Target::Rel(r) => *r,
                Target::Label(l) => match labels.get(l) {
                    Some(&dest) => dest as i64 - at as i64 - 1,
                    None => return err(line_no, format!("unknown label `{l}`")),
                },
            };
            i16::try_from(rel).or_else(|_| err(line_no, "jump offset out of range"))
        };
        let op = match pending {
            Pending::Ready(op) => op,
            Pending::Jump { target } => Op::Jump {
                off: resolve(&target)?,
            },
            Pending::CondJump {
                width,
                cond,
                dst,
                src,
                target,
            } => Op::CondJump {
                width,
                cond,
                dst,
                src,
                off: resolve(&target)?,
            },
        };
        out.extend(isa::encode(&op));
    }
    Ok(out)
}

/// Renders slots back to assembler text with relative jump offsets.
pub fn disassemble(insns: &[Instruction]) -> Result<String, isa::DecodeError> {
    let ops = isa::decode(insns)?;
    let mut out = String::new();
    for op in ops.into_iter().flatten() {
        out.push_str(&op.to_string());
        out.push('\n');
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    let mut end = line.len();
    for pat in [";", "#", "//"] {
        if let Some(i) = line.find(pat) {
            end = end.min(i);
        }
    }
    &line[..end]
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn split_label(line: &str) -> Option<(&str, &str)> {
    let (head, tail) = line.split_once(':')?;
    let head = head.trim();
    if is_ident(head) {
        Some((head, tail))
    } else {
        None
    }
}

fn parse_reg(s: &str) -> Result<u8, String> {
    let s = s.trim();
    let n = s
        .strip_prefix('r')
        .and_then(|d| d.parse::<u8>().ok())
        .ok_or_else(|| format!("expected register, found `{s}`"))?;
    if n as usize >= isa::NUM_REGS {
        return Err(format!("register r{n} out of range"));
    }
    Ok(n)
}

fn parse_operand(s: &str, consts: &HashMap<String, i64>) -> Result<Operand, String> {
    let s = s.trim();
    if let Ok(r) = parse_reg(s) {
        return Ok(Operand::Reg(r));
    }
    let v = eval_expr(s, consts)?;
    i32::try_from(v)
        .or_else(|_| u32::try_from(v).map(|u| u as i32))
        .map(Operand::Imm)
        .map_err(|_| format!("immediate `{s}` does not fit in 32 bits"))
}

fn parse_target(s: &str, consts: &HashMap<String, i64>) -> Result<Target, String> {
    let s = s.trim();
    if s.starts_with('+') || s.starts_with('-') {
        return eval_expr(s, consts).map(Target::Rel);
    }
    if is_ident(s) {
        return Ok(Target::Label(s.to_string()));
    }
    Err(format!("bad jump target `{s}`"))
}

/// Parses `[rN]`, `[rN+expr]` or `[rN-expr]`.
fn parse_mem(s: &str, consts: &HashMap<String, i64>) -> Result<(u8, i16), String> {
    let s = s.trim();
    let inner = s
        .strip_prefix('[')
        .and_then(|x| x.strip_suffix(']'))
        .ok_or_else(|| format!("expected memory operand, found `{s}`"))?
        .trim();
    let split = inner.find(['+', '-']);
    let (reg, off) = match split {
        Some(i) => (&inner[..i], eval_expr(&inner[i..], consts)?),
        None => (inner, 0),
    };
    let off = i16::try_from(off).map_err(|_| format!("memory offset {off} out of range"))?;
    Ok((parse_reg(reg)?, off))
}

fn split_args(s: &str) -> Vec<&str> {
    // Commas inside brackets or parentheses do not split.
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '[' | '(' => depth += 1,
            ']' | ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    let last = s[start..].trim();
    if !last.is_empty() {
        out.push(last);
    }
    out
}

fn mem_size(suffix: &str) -> Option<MemSize> {
    match suffix {
        "b" => Some(MemSize::B),
        "h" => Some(MemSize::H),
        "w" => Some(MemSize::W),
        "dw" => Some(MemSize::DW),
        _ => None,
    }
}

fn parse_insn(line: &str, consts: &HashMap<String, i64>) -> Result<Pending, String> {
    let (mnem, rest) = match line.find(char::is_whitespace) {
        Some(i) => (&line[..i], line[i..].trim()),
        None => (line, ""),
    };
    let mnem = mnem.to_ascii_lowercase();
    let args = split_args(rest);
    let want = |n: usize| -> Result<(), String> {
        if args.len() == n {
            Ok(())
        } else {
            Err(format!("`{mnem}` takes {n} operand(s), found {}", args.len()))
        }
    };

    if mnem == "exit" {
        want(0)?;
        return Ok(Pending::Ready(Op::Exit));
    }
    if mnem == "call" {
        want(1)?;
        let helper = match isa::helper::by_name(args[0]) {
            Some(h) => h,
            None => eval_expr(args[0], consts)
                .ok()
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| format!("unknown helper `{}`", args[0]))?,
        };
        return Ok(Pending::Ready(Op::Call { helper }));
    }
    if mnem == "ja" {
        want(1)?;
        return Ok(Pending::Jump {
            target: parse_target(args[0], consts)?,
        });
    }
    if mnem == "lddw" {
        want(2)?;
        let dst = parse_reg(args[0])?;
        let imm = eval_expr(args[1], consts)? as u64;
        return Ok(Pending::Ready(Op::LoadImm64 { dst, imm }));
    }
    if let Some(sfx) = mnem.strip_prefix("ldx") {
        want(2)?;
        let size = mem_size(sfx).ok_or_else(|| format!("unknown mnemonic `{mnem}`"))?;
        let dst = parse_reg(args[0])?;
        let (base, off) = parse_mem(args[1], consts)?;
        return Ok(Pending::Ready(Op::Load {
            size,
            dst,
            base,
            off,
        }));
    }
    if let Some(sfx) = mnem.strip_prefix("stx") {
        want(2)?;
        let size = mem_size(sfx).ok_or_else(|| format!("unknown mnemonic `{mnem}`"))?;
        let (base, off) = parse_mem(args[0], consts)?;
        let src = Operand::Reg(parse_reg(args[1])?);
        return Ok(Pending::Ready(Op::Store {
            size,
            base,
            off,
            src,
        }));
    }
    if let Some(sfx) = mnem.strip_prefix("st") {
        if let Some(size) = mem_size(sfx) {
            want(2)?;
            let (base, off) = parse_mem(args[0], consts)?;
            let src = match parse_operand(args[1], consts)? {
                Operand::Reg(_) => return Err(format!("`{mnem}` stores an immediate; use stx")),
                imm => imm,
            };
            return Ok(Pending::Ready(Op::Store {
                size,
                base,
                off,
                src,
            }));
        }
    }

    let (base, width) = match mnem.strip_suffix("32") {
        Some(b) => (b, Width::W32),
        None => (mnem.as_str(), Width::W64),
    };
    if base == "neg" {
        want(1)?;
        return Ok(Pending::Ready(Op::Neg {
            width,
            dst: parse_reg(args[0])?,
        }));
    }
    if let Some(op) = AluOp::ALL.iter().find(|o| o.mnemonic() == base) {
        want(2)?;
        return Ok(Pending::Ready(Op::Alu {
            width,
            op: *op,
            dst: parse_reg(args[0])?,
            src: parse_operand(args[1], consts)?,
        }));
    }
    if let Some(cond) = Cond::ALL.iter().find(|c| c.mnemonic() == base) {
        want(3)?;
        return Ok(Pending::CondJump {
            width,
            cond: *cond,
            dst: parse_reg(args[0])?,
            src: parse_operand(args[1], consts)?,
            target: parse_target(args[2], consts)?,
        });
    }
    Err(format!("unknown mnemonic `{mnem}`"))
}

// --- constant expressions -------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(i64),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
}

fn tokenize(s: &str) -> Result<Vec<Tok>, String> {
    let b = s.as_bytes();
    let mut i = 0;
    let mut out = Vec::new();
    while i < b.len() {
        let c = b[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < b.len() && (b[i] as char).is_ascii_alphanumeric() {
                i += 1;
            }
            let text = &s[start..i];
            let v = if let Some(h) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
                u64::from_str_radix(h, 16).map(|v| v as i64)
            } else {
                text.parse::<u64>().map(|v| v as i64)
            }
            .map_err(|_| format!("bad number `{text}`"))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_' || b[i] == b'.')
            {
                i += 1;
            }
            out.push(Tok::Ident(s[start..i].to_string()));
        } else if c == '(' {
            out.push(Tok::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Tok::RParen);
            i += 1;
        } else {
            let two = s.get(i..i + 2);
            let op = match (two, c) {
                (Some("<<"), _) => "<<",
                (Some(">>"), _) => ">>",
                (_, '|') => "|",
                (_, '&') => "&",
                (_, '^') => "^",
                (_, '+') => "+",
                (_, '-') => "-",
                (_, '*') => "*",
                _ => return Err(format!("unexpected `{c}` in expression")),
            };
            i += op.len();
            out.push(Tok::Op(op));
        }
    }
    Ok(out)
}

fn precedence(op: &str) -> u8 {
    match op {
        "|" => 1,
        "^" => 2,
        "&" => 3,
        "<<" | ">>" => 4,
        "+" | "-" => 5,
        _ => 6,
    }
}

struct ExprParser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    consts: &'a HashMap<String, i64>,
}

impl ExprParser<'_> {
    fn primary(&mut self) -> Result<i64, String> {
        let tok = self.toks.get(self.pos).cloned();
        self.pos += 1;
        match tok {
            Some(Tok::Num(v)) => Ok(v),
            Some(Tok::Ident(name)) => self
                .consts
                .get(&name)
                .copied()
                .ok_or_else(|| format!("unknown constant `{name}`")),
            Some(Tok::Op("-")) => Ok(self.primary()?.wrapping_neg()),
            Some(Tok::Op("+")) => self.primary(),
            Some(Tok::LParen) => {
                let v = self.binary(0)?;
                if self.toks.get(self.pos) != Some(&Tok::RParen) {
                    return Err("missing `)`".into());
                }
                self.pos += 1;
                Ok(v)
            }
            _ => Err("malformed expression".into()),
        }
    }

    fn binary(&mut self, min_prec: u8) -> Result<i64, String> {
        let mut lhs = self.primary()?;
        while let Some(Tok::Op(op)) = self.toks.get(self.pos).cloned() {
            let prec = precedence(op);
            if prec <= min_prec {
                break;
            }
            self.pos += 1;
            let rhs = self.binary(prec)?;
            lhs = match op {
                "|" => lhs | rhs,
                "^" => lhs ^ rhs,
                "&" => lhs & rhs,
                "<<" => (lhs as u64).wrapping_shl(rhs as u32) as i64,
                ">>" => (lhs as u64).wrapping_shr(rhs as u32) as i64,
                "+" => lhs.wrapping_add(rhs),
                "-" => lhs.wrapping_sub(rhs),
                _ => lhs.wrapping_mul(rhs),
            };
        }
        Ok(lhs)
    }
}

fn eval_expr(s: &str, consts: &HashMap<String, i64>) -> Result<i64, String> {
    let toks = tokenize(s)?;
    if toks.is_empty() {
        return Err("empty expression".into());
    }
    let mut p = ExprParser {
        toks,
        pos: 0,
        consts,
    };
    let v = p.binary(0)?;
    if p.pos != p.toks.len() {
        return Err(format!("trailing tokens in `{s}`"));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn assembles_labels_and_constants() {
        let src = "
            .equ LIMIT, 4
            mov r0, 0          ; counter
        loop:
            jge r0, LIMIT, done
            add r0, 1
            ja loop
        done: exit
        ";
        let prog = assemble(src).unwrap();
        let ops: Vec<_> = isa::decode(&prog).unwrap().into_iter().flatten().collect();
        assert_eq!(ops.len(), 5);
        assert_eq!(
            ops[1],
            Op::CondJump {
                width: Width::W64,
                cond: Cond::Ge,
                dst: 0,
                src: Operand::Imm(4),
                off: 2
            }
        );
        assert_eq!(ops[3], Op::Jump { off: -3 });
    }

    #[test]
    fn expressions_follow_c_precedence() {
        let c = HashMap::from([("R".to_string(), 1i64)]);
        assert_eq!(eval_expr("(R << 56) | 16", &c).unwrap(), (1i64 << 56) | 16);
        assert_eq!(eval_expr("1 + 2 * 3", &c).unwrap(), 7);
        assert_eq!(eval_expr("-8", &c).unwrap(), -8);
        assert_eq!(eval_expr("0xff & 0x0f", &c).unwrap(), 0x0f);
    }

    #[test]
    fn default_yields_to_earlier_equ() {
        let a = assemble(".equ N, 5\n.default N, 9\nmov r0, N\nexit").unwrap();
        let b = assemble(".default N, 9\nmov r0, N\nexit").unwrap();
        assert_eq!(a[0].imm, 5);
        assert_eq!(b[0].imm, 9);
    }

    #[test]
    fn memory_operands() {
        let prog = assemble("ldxdw r1, [r10-8]\nstw [r7+12], -1\nstxb [r1], r2").unwrap();
        let ops: Vec<_> = isa::decode(&prog).unwrap().into_iter().flatten().collect();
        assert_eq!(
            ops[0],
            Op::Load {
                size: MemSize::DW,
                dst: 1,
                base: 10,
                off: -8
            }
        );
        assert_eq!(
            ops[1],
            Op::Store {
                size: MemSize::W,
                base: 7,
                off: 12,
                src: Operand::Imm(-1)
            }
        );
        assert_eq!(
            ops[2],
            Op::Store {
                size: MemSize::B,
                base: 1,
                off: 0,
                src: Operand::Reg(2)
            }
        );
    }

    #[test]
    fn reports_line_numbers() {
        let e = assemble("mov r0, 0\nfrob r1\nexit").unwrap_err();
        assert_eq!(e.line, 2);
        let e = assemble("ja nowhere").unwrap_err();
        assert!(e.msg.contains("nowhere"));
        let e = assemble("mov r11, 0").unwrap_err();
        assert!(e.msg.contains("out of range"));
    }

    fn arb_op() -> impl Strategy<Value = Op> {
        let reg = 0u8..10;
        let width = prop_oneof![Just(Width::W32), Just(Width::W64)];
        let size = prop_oneof![
            Just(MemSize::B),
            Just(MemSize::H),
            Just(MemSize::W),
            Just(MemSize::DW)
        ];
        let operand = prop_oneof![(0u8..11).prop_map(Operand::Reg), any::<i32>().prop_map(Operand::Imm)];
        prop_oneof![
            (width.clone(), 0usize..12, reg.clone(), operand.clone()).prop_map(|(width, i, dst, src)| Op::Alu {
                width,
                op: AluOp::ALL[i],
                dst,
                src
            }),
            (width.clone(), reg.clone()).prop_map(|(width, dst)| Op::Neg { width, dst }),
            (reg.clone(), any::<u64>()).prop_map(|(dst, imm)| Op::LoadImm64 { dst, imm }),
            (size.clone(), reg.clone(), 0u8..11, any::<i16>()).prop_map(|(size, dst, base, off)| Op::Load {
                size,
                dst,
                base,
                off
            }),
            (size, 0u8..11, any::<i16>(), operand.clone()).prop_map(|(size, base, off, src)| Op::Store {
                size,
                base,
                off,
                src
            }),
            any::<i16>().prop_map(|off| Op::Jump { off }),
            (width, 0usize..11, 0u8..11, operand, any::<i16>()).prop_map(|(width, c, dst, src, off)| {
                Op::CondJump {
                    width,
                    cond: Cond::ALL[c],
                    dst,
                    src,
                    off,
                }
            }),
            (1u32..8).prop_map(|helper| Op::Call { helper }),
            Just(Op::Exit),
        ]
    }

    proptest! {
        #[test]
        fn disassembly_reassembles_to_same_slots(ops in proptest::collection::vec(arb_op(), 1..40)) {
            let slots: Vec<Instruction> = ops.iter().flat_map(isa::encode).collect();
            let text = disassemble(&slots).unwrap();
            let again = assemble(&text).unwrap();
            prop_assert_eq!(again, slots);
        }
    }
}
