// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Bytecode VM: instruction set, assembler, message buffer layout, function
//! images and the interpreter.

pub mod asm;
pub mod buffer;
pub mod image;
pub mod interp;
pub mod isa;

pub use asm::{assemble, disassemble, AsmError};
pub use buffer::{MessageBuffer, StateFlag};
pub use image::{FunctionImage, ImageError};
pub use interp::{
    execute, restore_state, save_state, ExecOutcome, Execution, RestoreError, Trap, VmConfig, VmState,
    DEFAULT_STEP_BUDGET,
};
pub use isa::{Instruction, Op};
