use crate::isa::{Instruction, RegisterId};
use crate::memcache::Addr;

/// Data-path outcome of one instruction, independent of execution mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Step {
    Alu { rd: RegisterId, value: i64 },
    Load { rd: RegisterId, addr: i64 },
    Store { addr: i64, value: i64 },
    /// Branch or jump with its outcome.
    Control(bool),
    /// `halt` and the speculation opcodes.
    Other,
}

pub(crate) fn evaluate(instr: &Instruction, mut read: impl FnMut(RegisterId) -> i64) -> Step {
    match *instr {
        Instruction::Li { rd, imm } => Step::Alu { rd, value: imm },
        Instruction::Mov { rd, rs } => Step::Alu { rd, value: read(rs) },
        Instruction::Add { rd, rs, rt } => Step::Alu { rd, value: read(rs).wrapping_add(read(rt)) },
        Instruction::Sub { rd, rs, rt } => Step::Alu { rd, value: read(rs).wrapping_sub(read(rt)) },
        Instruction::Mul { rd, rs, rt } => Step::Alu { rd, value: read(rs).wrapping_mul(read(rt)) },
        Instruction::Addi { rd, rs, imm } => Step::Alu { rd, value: read(rs).wrapping_add(imm) },
        Instruction::Ld { rd, base, offset } => Step::Load { rd, addr: read(base).wrapping_add(offset) },
        Instruction::St { src, base, offset } => {
            let value = read(src);
            Step::Store { addr: read(base).wrapping_add(offset), value }
        }
        Instruction::Beq { rs, rt, .. } | Instruction::Bne { rs, rt, .. } | Instruction::Blt { rs, rt, .. } => {
            let (a, b) = (read(rs), read(rt));
            Step::Control(instr.branch_taken(a, b))
        }
        Instruction::Jmp { .. } => Step::Control(true),
        _ => Step::Other,
    }
}

pub(crate) fn word_addr(addr: i64, memory_words: usize) -> Option<Addr> {
    (0..memory_words as i64).contains(&addr).then_some(addr as Addr)
}
