//! The toy load/store instruction set, the five speculation opcodes, and the
//! line-oriented assembly format.
//!
//! Programs are parsed from text, validated once, and are immutable afterwards.
//! Instruction indices are the addresses used by every other module.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Number of architectural registers.
pub const NUM_REGISTERS: usize = 16;

/// Full architectural register file contents.
pub type RegisterValues = [i64; NUM_REGISTERS];

/// An architectural register `r0`..`r15`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegisterId(u8);

impl RegisterId {
    pub fn new(index: usize) -> Option<RegisterId> {
        (index < NUM_REGISTERS).then_some(RegisterId(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = RegisterId> {
        (0..NUM_REGISTERS as u8).map(RegisterId)
    }
}

impl fmt::Display for RegisterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// A symbolic code label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(String);

impl Label {
    pub fn new(name: impl Into<String>) -> Label {
        Label(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Opcode {
    Li,
    Mov,
    Add,
    Sub,
    Mul,
    Addi,
    Ld,
    St,
    Beq,
    Bne,
    Blt,
    Jmp,
    Halt,
    Spawn,
    Cqip,
    Squash,
    PsliceEntry,
    PsliceExit,
}

impl Opcode {
    pub const ALL: [Opcode; 18] = [
        Opcode::Li,
        Opcode::Mov,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Addi,
        Opcode::Ld,
        Opcode::St,
        Opcode::Beq,
        Opcode::Bne,
        Opcode::Blt,
        Opcode::Jmp,
        Opcode::Halt,
        Opcode::Spawn,
        Opcode::Cqip,
        Opcode::Squash,
        Opcode::PsliceEntry,
        Opcode::PsliceExit,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Li => "li",
            Opcode::Mov => "mov",
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Mul => "mul",
            Opcode::Addi => "addi",
            Opcode::Ld => "ld",
            Opcode::St => "st",
            Opcode::Beq => "beq",
            Opcode::Bne => "bne",
            Opcode::Blt => "blt",
            Opcode::Jmp => "jmp",
            Opcode::Halt => "halt",
            Opcode::Spawn => "spawn",
            Opcode::Cqip => "cqip",
            Opcode::Squash => "squash",
            Opcode::PsliceEntry => "pslice_entry",
            Opcode::PsliceExit => "pslice_exit",
        }
    }

    /// True for the five thread-speculation opcodes.
    pub fn is_speculation(self) -> bool {
        matches!(
            self,
            Opcode::Spawn | Opcode::Cqip | Opcode::Squash | Opcode::PsliceEntry | Opcode::PsliceExit
        )
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl FromStr for Opcode {
    type Err = ();

    fn from_str(s: &str) -> Result<Opcode, ()> {
        Opcode::ALL.into_iter().find(|op| op.mnemonic() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instruction {
    Li { rd: RegisterId, imm: i64 },
    Mov { rd: RegisterId, rs: RegisterId },
    Add { rd: RegisterId, rs: RegisterId, rt: RegisterId },
    Sub { rd: RegisterId, rs: RegisterId, rt: RegisterId },
    Mul { rd: RegisterId, rs: RegisterId, rt: RegisterId },
    Addi { rd: RegisterId, rs: RegisterId, imm: i64 },
    /// `ld rd, [base+offset]`
    Ld { rd: RegisterId, base: RegisterId, offset: i64 },
    /// `st src, [base+offset]`
    St { src: RegisterId, base: RegisterId, offset: i64 },
    Beq { rs: RegisterId, rt: RegisterId, target: Label },
    Bne { rs: RegisterId, rt: RegisterId, target: Label },
    Blt { rs: RegisterId, rt: RegisterId, target: Label },
    Jmp { target: Label },
    Halt,
    Spawn(Label),
    Cqip(Label),
    Squash(Label),
    PsliceEntry(Label),
    PsliceExit(Label),
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instruction::Li { .. } => Opcode::Li,
            Instruction::Mov { .. } => Opcode::Mov,
            Instruction::Add { .. } => Opcode::Add,
            Instruction::Sub { .. } => Opcode::Sub,
            Instruction::Mul { .. } => Opcode::Mul,
            Instruction::Addi { .. } => Opcode::Addi,
            Instruction::Ld { .. } => Opcode::Ld,
            Instruction::St { .. } => Opcode::St,
            Instruction::Beq { .. } => Opcode::Beq,
            Instruction::Bne { .. } => Opcode::Bne,
            Instruction::Blt { .. } => Opcode::Blt,
            Instruction::Jmp { .. } => Opcode::Jmp,
            Instruction::Halt => Opcode::Halt,
            Instruction::Spawn(_) => Opcode::Spawn,
            Instruction::Cqip(_) => Opcode::Cqip,
            Instruction::Squash(_) => Opcode::Squash,
            Instruction::PsliceEntry(_) => Opcode::PsliceEntry,
            Instruction::PsliceExit(_) => Opcode::PsliceExit,
        }
    }

    /// The label operand, if the opcode carries one.
    pub fn label(&self) -> Option<&Label> {
        match self {
            Instruction::Beq { target, .. }
            | Instruction::Bne { target, .. }
            | Instruction::Blt { target, .. }
            | Instruction::Jmp { target } => Some(target),
            Instruction::Spawn(l)
            | Instruction::Cqip(l)
            | Instruction::Squash(l)
            | Instruction::PsliceEntry(l)
            | Instruction::PsliceExit(l) => Some(l),
            _ => None,
        }
    }

    /// The label of a control transfer (branch or jump), if any.
    pub fn branch_target(&self) -> Option<&Label> {
        match self {
            Instruction::Beq { target, .. }
            | Instruction::Bne { target, .. }
            | Instruction::Blt { target, .. }
            | Instruction::Jmp { target } => Some(target),
            _ => None,
        }
    }

    /// Evaluates a conditional branch given its two operand values.
    pub fn branch_taken(&self, lhs: i64, rhs: i64) -> bool {
        match self {
            Instruction::Beq { .. } => lhs == rhs,
            Instruction::Bne { .. } => lhs != rhs,
            Instruction::Blt { .. } => lhs < rhs,
            Instruction::Jmp { .. } => true,
            _ => false,
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.opcode().mnemonic();
        match self {
            Instruction::Li { rd, imm } => write!(f, "{m} {rd}, {imm}"),
            Instruction::Mov { rd, rs } => write!(f, "{m} {rd}, {rs}"),
            Instruction::Add { rd, rs, rt }
            | Instruction::Sub { rd, rs, rt }
            | Instruction::Mul { rd, rs, rt } => write!(f, "{m} {rd}, {rs}, {rt}"),
            Instruction::Addi { rd, rs, imm } => write!(f, "{m} {rd}, {rs}, {imm}"),
            Instruction::Ld { rd, base, offset } => {
                write!(f, "{m} {rd}, [{base}{offset:+}]")
            }
            Instruction::St { src, base, offset } => {
                write!(f, "{m} {src}, [{base}{offset:+}]")
            }
            Instruction::Beq { rs, rt, target }
            | Instruction::Bne { rs, rt, target }
            | Instruction::Blt { rs, rt, target } => write!(f, "{m} {rs}, {rt}, {target}"),
            Instruction::Jmp { target } => write!(f, "{m} {target}"),
            Instruction::Halt => f.write_str(m),
            Instruction::Spawn(l)
            | Instruction::Cqip(l)
            | Instruction::Squash(l)
            | Instruction::PsliceEntry(l)
            | Instruction::PsliceExit(l) => write!(f, "{m} {l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown opcode `{0}`")]
    UnknownOpcode(String),
    #[error("register index out of range: `{0}`")]
    RegisterOutOfRange(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(Label),
    #[error("undefined label `{0}`")]
    UndefinedLabel(Label),
    #[error("unmatched pslice_entry {0}")]
    UnmatchedPsliceEntry(Label),
    #[error("unmatched pslice_exit {0}")]
    UnmatchedPsliceExit(Label),
    #[error("p-slice ranges overlap: {0} and {1}")]
    OverlappingPslice(Label, Label),
    #[error("`{0}` is not allowed inside a p-slice")]
    IllegalInPslice(Opcode),
    #[error("control transfer crosses the boundary of p-slice {0}")]
    PsliceBoundaryCrossed(Label),
    #[error("spawn target {0} must be `{0}: cqip {0}` followed by `pslice_entry {0}`")]
    MalformedThreadStart(Label),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    /// 1-based source line.
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("pc {0} out of range")]
    PcOutOfRange(usize),
    #[error("label {0} has no p-slice")]
    NoPslice(Label),
    #[error("unknown label {0}")]
    UnknownLabel(Label),
}

/// A parsed, validated program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    instructions: Vec<Instruction>,
    labels: BTreeMap<Label, usize>,
    pslice_ranges: BTreeMap<Label, (usize, usize)>,
}

impl Program {
    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn get(&self, pc: usize) -> Option<&Instruction> {
        self.instructions.get(pc)
    }

    pub fn labels(&self) -> &BTreeMap<Label, usize> {
        &self.labels
    }

    pub fn label_index(&self, label: &Label) -> Result<usize, IsaError> {
        self.labels
            .get(label)
            .copied()
            .ok_or_else(|| IsaError::UnknownLabel(label.clone()))
    }

    pub fn pslice_ranges(&self) -> &BTreeMap<Label, (usize, usize)> {
        &self.pslice_ranges
    }

    /// Index of `pslice_entry label` and of `pslice_exit label`.
    pub fn pslice_bounds(&self, label: &Label) -> Result<(usize, usize), IsaError> {
        self.pslice_ranges
            .get(label)
            .copied()
            .ok_or_else(|| IsaError::NoPslice(label.clone()))
    }

    /// First instruction a freshly spawned thread for `label` executes: the
    /// first p-slice instruction (the `cqip` marker and `pslice_entry` are
    /// skipped).
    pub fn thread_entry_pc(&self, label: &Label) -> Result<usize, IsaError> {
        Ok(self.pslice_bounds(label)?.0 + 1)
    }

    /// Successor of `pc` given the outcome of its branch condition.
    ///
    /// Speculation opcodes are inert: `spawn`, `cqip`, `squash` and
    /// `pslice_exit` fall through, `pslice_entry L` jumps past `pslice_exit L`.
    /// `halt` returns `pc` itself.
    pub fn successor(&self, pc: usize, taken: bool) -> Result<usize, IsaError> {
        let instr = self.get(pc).ok_or(IsaError::PcOutOfRange(pc))?;
        Ok(match instr {
            Instruction::Halt => pc,
            Instruction::PsliceEntry(l) => self.pslice_bounds(l)?.1 + 1,
            Instruction::Jmp { target } => self.label_index(target)?,
            Instruction::Beq { target, .. }
            | Instruction::Bne { target, .. }
            | Instruction::Blt { target, .. } => {
                if taken {
                    self.label_index(target)?
                } else {
                    pc + 1
                }
            }
            _ => pc + 1,
        })
    }

    /// Non-speculative control-flow successor of `pc` under `regs`.
    pub fn sequential_next(&self, pc: usize, regs: &RegisterValues) -> Result<usize, IsaError> {
        let instr = self.get(pc).ok_or(IsaError::PcOutOfRange(pc))?;
        let taken = match instr {
            Instruction::Beq { rs, rt, .. }
            | Instruction::Bne { rs, rt, .. }
            | Instruction::Blt { rs, rt, .. } => {
                instr.branch_taken(regs[rs.index()], regs[rt.index()])
            }
            Instruction::Jmp { .. } => true,
            _ => false,
        };
        self.successor(pc, taken)
    }

    /// The p-slice range strictly containing `pc` (entry < pc <= exit), if any.
    pub fn pslice_containing(&self, pc: usize) -> Option<&Label> {
        self.pslice_ranges
            .iter()
            .find(|(_, &(entry, exit))| entry < pc && pc <= exit)
            .map(|(l, _)| l)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut at: BTreeMap<usize, Vec<&Label>> = BTreeMap::new();
        for (label, &idx) in &self.labels {
            at.entry(idx).or_default().push(label);
        }
        for idx in 0..=self.instructions.len() {
            for label in at.get(&idx).into_iter().flatten() {
                writeln!(f, "{label}:")?;
            }
            if let Some(instr) = self.instructions.get(idx) {
                writeln!(f, "    {instr}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for Program {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Program, ParseError> {
        parse_program(s)
    }
}

/// Parses and validates assembly source.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut instructions = Vec::new();
    // Source line of every instruction, for validator diagnostics.
    let mut lines = Vec::new();
    let mut labels = BTreeMap::new();
    let mut label_lines = BTreeMap::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let err = |kind| ParseError { line: line_no, kind };
        let mut line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(colon) = line.find(':') {
            let name = line[..colon].trim();
            if !is_identifier(name) {
                return Err(err(ParseErrorKind::Syntax(format!("bad label `{name}`"))));
            }
            let label = Label::new(name);
            if labels.insert(label.clone(), instructions.len()).is_some() {
                return Err(err(ParseErrorKind::DuplicateLabel(label)));
            }
            label_lines.insert(label, line_no);
            line = line[colon + 1..].trim();
            if line.is_empty() {
                continue;
            }
        }
        instructions.push(parse_instruction(line).map_err(err)?);
        lines.push(line_no);
    }

    let program = Program {
        instructions,
        labels,
        pslice_ranges: BTreeMap::new(),
    };
    validate(program, &lines, text.lines().count().max(1))
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_instruction(line: &str) -> Result<Instruction, ParseErrorKind> {
    let (mnemonic, rest) = match line.find(char::is_whitespace) {
        Some(i) => (&line[..i], line[i..].trim()),
        None => (line, ""),
    };
    let opcode: Opcode = mnemonic
        .parse()
        .map_err(|_| ParseErrorKind::UnknownOpcode(mnemonic.to_string()))?;
    let ops: Vec<&str> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(str::trim).collect()
    };
    let arity = |n: usize| {
        if ops.len() == n {
            Ok(())
        } else {
            Err(ParseErrorKind::Syntax(format!(
                "`{mnemonic}` takes {n} operand(s), found {}",
                ops.len()
            )))
        }
    };

    Ok(match opcode {
        Opcode::Li => {
            arity(2)?;
            Instruction::Li { rd: reg(ops[0])?, imm: imm(ops[1])? }
        }
        Opcode::Mov => {
            arity(2)?;
            Instruction::Mov { rd: reg(ops[0])?, rs: reg(ops[1])? }
        }
        Opcode::Add | Opcode::Sub | Opcode::Mul => {
            arity(3)?;
            let (rd, rs, rt) = (reg(ops[0])?, reg(ops[1])?, reg(ops[2])?);
            match opcode {
                Opcode::Add => Instruction::Add { rd, rs, rt },
                Opcode::Sub => Instruction::Sub { rd, rs, rt },
                _ => Instruction::Mul { rd, rs, rt },
            }
        }
        Opcode::Addi => {
            arity(3)?;
            Instruction::Addi { rd: reg(ops[0])?, rs: reg(ops[1])?, imm: imm(ops[2])? }
        }
        Opcode::Ld => {
            arity(2)?;
            let (base, offset) = mem_operand(ops[1])?;
            Instruction::Ld { rd: reg(ops[0])?, base, offset }
        }
        Opcode::St => {
            arity(2)?;
            let (base, offset) = mem_operand(ops[1])?;
            Instruction::St { src: reg(ops[0])?, base, offset }
        }
        Opcode::Beq | Opcode::Bne | Opcode::Blt => {
            arity(3)?;
            let (rs, rt, target) = (reg(ops[0])?, reg(ops[1])?, label(ops[2])?);
            match opcode {
                Opcode::Beq => Instruction::Beq { rs, rt, target },
                Opcode::Bne => Instruction::Bne { rs, rt, target },
                _ => Instruction::Blt { rs, rt, target },
            }
        }
        Opcode::Jmp => {
            arity(1)?;
            Instruction::Jmp { target: label(ops[0])? }
        }
        Opcode::Halt => {
            arity(0)?;
            Instruction::Halt
        }
        Opcode::Spawn | Opcode::Cqip | Opcode::Squash | Opcode::PsliceEntry | Opcode::PsliceExit => {
            arity(1)?;
            let l = label(ops[0])?;
            match opcode {
                Opcode::Spawn => Instruction::Spawn(l),
                Opcode::Cqip => Instruction::Cqip(l),
                Opcode::Squash => Instruction::Squash(l),
                Opcode::PsliceEntry => Instruction::PsliceEntry(l),
                _ => Instruction::PsliceExit(l),
            }
        }
    })
}

fn reg(s: &str) -> Result<RegisterId, ParseErrorKind> {
    let digits = s
        .strip_prefix('r')
        .filter(|d| !d.is_empty() && d.chars().all(|c| c.is_ascii_digit()))
        .ok_or_else(|| ParseErrorKind::Syntax(format!("expected register, found `{s}`")))?;
    digits
        .parse::<usize>()
        .ok()
        .and_then(RegisterId::new)
        .ok_or_else(|| ParseErrorKind::RegisterOutOfRange(s.to_string()))
}

fn imm(s: &str) -> Result<i64, ParseErrorKind> {
    let digits = s.strip_prefix('-').unwrap_or(s);
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(ParseErrorKind::Syntax(format!("expected immediate, found `{s}`")));
    }
    s.parse()
        .map_err(|_| ParseErrorKind::Syntax(format!("immediate out of range: `{s}`")))
}

fn label(s: &str) -> Result<Label, ParseErrorKind> {
    if is_identifier(s) {
        Ok(Label::new(s))
    } else {
        Err(ParseErrorKind::Syntax(format!("expected label, found `{s}`")))
    }
}

/// `[rS+IMM]`, `[rS-IMM]` or `[rS]`.
fn mem_operand(s: &str) -> Result<(RegisterId, i64), ParseErrorKind> {
    let inner = s
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| ParseErrorKind::Syntax(format!("expected memory operand, found `{s}`")))?
        .trim();
    match inner.find(['+', '-']) {
        Some(i) => {
            let base = reg(inner[..i].trim())?;
            let sign = &inner[i..i + 1];
            let magnitude = inner[i + 1..].trim();
            let offset = if sign == "-" {
                imm(&format!("-{magnitude}"))?
            } else {
                imm(magnitude)?
            };
            Ok((base, offset))
        }
        None => Ok((reg(inner)?, 0)),
    }
}

fn validate(mut program: Program, lines: &[usize], last_line: usize) -> Result<Program, ParseError> {
    let line_of = |idx: usize| lines.get(idx).copied().unwrap_or(last_line);

    // Every referenced label is defined.
    for (idx, instr) in program.instructions.iter().enumerate() {
        if let Some(l) = instr.label() {
            if !program.labels.contains_key(l) {
                return Err(ParseError {
                    line: line_of(idx),
                    kind: ParseErrorKind::UndefinedLabel(l.clone()),
                });
            }
        }
    }

    // Pair up p-slice markers.
    let mut open: Option<(Label, usize)> = None;
    let mut ranges = BTreeMap::new();
    for (idx, instr) in program.instructions.iter().enumerate() {
        match instr {
            Instruction::PsliceEntry(l) => {
                if let Some((outer, _)) = &open {
                    return Err(ParseError {
                        line: line_of(idx),
                        kind: ParseErrorKind::OverlappingPslice(outer.clone(), l.clone()),
                    });
                }
                if ranges.contains_key(l) {
                    return Err(ParseError {
                        line: line_of(idx),
                        kind: ParseErrorKind::UnmatchedPsliceEntry(l.clone()),
                    });
                }
                open = Some((l.clone(), idx));
            }
            Instruction::PsliceExit(l) => match open.take() {
                Some((ol, entry)) if &ol == l => {
                    ranges.insert(l.clone(), (entry, idx));
                }
                Some((ol, _)) => {
                    return Err(ParseError {
                        line: line_of(idx),
                        kind: ParseErrorKind::OverlappingPslice(ol, l.clone()),
                    });
                }
                None => {
                    return Err(ParseError {
                        line: line_of(idx),
                        kind: ParseErrorKind::UnmatchedPsliceExit(l.clone()),
                    });
                }
            },
            _ => {}
        }
    }
    if let Some((l, entry)) = open {
        return Err(ParseError {
            line: line_of(entry),
            kind: ParseErrorKind::UnmatchedPsliceEntry(l),
        });
    }
    program.pslice_ranges = ranges;

    for (idx, instr) in program.instructions.iter().enumerate() {
        let inside = program.pslice_containing(idx).cloned();
        let fail = |kind| Err(ParseError { line: line_of(idx), kind });
        if inside.is_some() {
            let op = instr.opcode();
            if (op.is_speculation() && op != Opcode::PsliceExit) || op == Opcode::Halt {
                return fail(ParseErrorKind::IllegalInPslice(op));
            }
        }
        if let Some(target) = instr.branch_target() {
            let dest = program.labels[target];
            let dest_inside = program.pslice_containing(dest);
            if dest_inside != inside.as_ref() {
                let ps = dest_inside.or(inside.as_ref()).cloned().expect("one side is inside");
                return fail(ParseErrorKind::PsliceBoundaryCrossed(ps));
            }
        }
        if let Instruction::Spawn(l) = instr {
            let start = program.labels[l];
            let well_formed = matches!(program.instructions.get(start), Some(Instruction::Cqip(c)) if c == l)
                && matches!(program.instructions.get(start + 1), Some(Instruction::PsliceEntry(p)) if p == l);
            if !well_formed {
                return fail(ParseErrorKind::MalformedThreadStart(l.clone()));
            }
        }
    }
    // Branching into the last p-slice instruction (the exit) from outside is
    // covered above since `pslice_containing` includes the exit index.
    Ok(program)
}
