//! The cycle engine, the sequential reference run and run statistics.

mod engine;
mod exec;

use std::fmt;

pub use engine::Engine;

use crate::error::SimError;
use crate::isa::{IsaError, Program, RegisterValues, NUM_REGISTERS};
use crate::memcache::Addr;
use crate::thread::ThreadId;
use crate::trace::TraceRecord;
use crate::verify::VerificationReport;
use exec::{evaluate, word_addr, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MachineConfig {
    pub num_pes: usize,
    pub memory_words: usize,
    pub spawn_cost_cycles: u64,
    pub squash_cost_cycles: u64,
    pub mem_latency_cycles: u64,
    pub verify_cost_per_word: u64,
    pub bus_latency_cycles: u64,
    pub max_cycles: u64,
}

impl Default for MachineConfig {
    fn default() -> MachineConfig {
        MachineConfig {
            num_pes: 4,
            memory_words: 65_536,
            spawn_cost_cycles: 1,
            squash_cost_cycles: 1,
            mem_latency_cycles: 1,
            verify_cost_per_word: 1,
            bus_latency_cycles: 0,
            max_cycles: 10_000_000,
        }
    }
}

impl MachineConfig {
    pub fn with_pes(num_pes: usize) -> MachineConfig {
        MachineConfig { num_pes, ..MachineConfig::default() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.num_pes == 0 {
            return Err(SimError::Config("num_pes must be at least 1".into()));
        }
        if self.memory_words == 0 {
            return Err(SimError::Config("memory_words must be at least 1".into()));
        }
        if self.max_cycles == 0 {
            return Err(SimError::Config("max_cycles must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn mem_cost(&self) -> u64 {
        self.mem_latency_cycles.max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunStats {
    pub spawned: u64,
    /// Distinct threads squashed or restarted at least once.
    pub failed: u64,
    pub refused_spawns: u64,
    pub restarts: u64,
    pub squashed: u64,
    pub verification_failures: u64,
    pub commits: u64,
    pub stall_cycles: u64,
    pub seq_cycles: u64,
    pub spmt_cycles: u64,
}

impl RunStats {
    /// `None` when nothing was spawned.
    pub fn successful_pct(&self) -> Option<f64> {
        (self.spawned > 0).then(|| 100.0 * (self.spawned - self.failed) as f64 / self.spawned as f64)
    }

    pub fn speedup(&self) -> f64 {
        if self.spmt_cycles == 0 {
            return 0.0;
        }
        self.seq_cycles as f64 / self.spmt_cycles as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationRecord {
    pub cycle: u64,
    pub stable: ThreadId,
    pub child: ThreadId,
    pub report: VerificationReport,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViolationRecord {
    pub cycle: u64,
    pub sender: ThreadId,
    pub addr: Addr,
    pub victim: ThreadId,
    pub squashed: Vec<ThreadId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub memory: Vec<i64>,
    pub registers: RegisterValues,
    pub stats: RunStats,
    pub trace: Option<Vec<TraceRecord>>,
    /// Committing threads in commit order.
    pub commits: Vec<ThreadId>,
    pub verifications: Vec<VerificationRecord>,
    pub violations: Vec<ViolationRecord>,
}

impl RunResult {
    pub fn trace_lines(&self) -> impl Iterator<Item = String> + '_ {
        self.trace.iter().flatten().map(|r| r.to_string())
    }
}

impl fmt::Display for RunStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = match self.successful_pct() {
            Some(p) => format!("{p:.1}"),
            None => "N/A".to_string(),
        };
        write!(
            f,
            "spawned={} failed={} pct_successful={} seq_cycles={} spmt_cycles={} speedup={:.3}",
            self.spawned,
            self.failed,
            pct,
            self.seq_cycles,
            self.spmt_cycles,
            self.speedup()
        )
    }
}

/// Executes `program` on one PE with speculation opcodes inert.
pub fn run_sequential(program: &Program, config: &MachineConfig) -> Result<RunResult, SimError> {
    config.validate()?;
    let mut regs: RegisterValues = [0; NUM_REGISTERS];
    let mut memory = vec![0i64; config.memory_words];
    let mut pc = 0usize;
    let mut cycles = 0u64;
    loop {
        if cycles >= config.max_cycles {
            return Err(SimError::Watchdog(config.max_cycles));
        }
        let instr = program.get(pc).ok_or(IsaError::PcOutOfRange(pc))?;
        match evaluate(instr, |r| regs[r.index()]) {
            Step::Alu { rd, value } => {
                regs[rd.index()] = value;
                cycles += 1;
                pc += 1;
            }
            Step::Load { rd, addr } => {
                let a = word_addr(addr, config.memory_words).ok_or(SimError::AddressOutOfRange { pc, addr })?;
                regs[rd.index()] = memory[a as usize];
                cycles += config.mem_cost();
                pc += 1;
            }
            Step::Store { addr, value } => {
                let a = word_addr(addr, config.memory_words).ok_or(SimError::AddressOutOfRange { pc, addr })?;
                memory[a as usize] = value;
                cycles += config.mem_cost();
                pc += 1;
            }
            Step::Control(taken) => {
                cycles += 1;
                pc = program.successor(pc, taken)?;
            }
            Step::Other => {
                cycles += 1;
                if matches!(instr, crate::isa::Instruction::Halt) {
                    break;
                }
                pc = program.successor(pc, false)?;
            }
        }
    }
    Ok(RunResult {
        memory,
        registers: regs,
        stats: RunStats { seq_cycles: cycles, spmt_cycles: cycles, ..RunStats::default() },
        trace: None,
        commits: Vec::new(),
        verifications: Vec::new(),
        violations: Vec::new(),
    })
}

/// Runs the speculative machine and checks its final state against the
/// sequential run.
pub fn run_speculative(program: &Program, config: &MachineConfig) -> Result<RunResult, SimError> {
    run_checked(program, config, false)
}

/// As [`run_speculative`], recording the full event trace.
pub fn run_speculative_traced(program: &Program, config: &MachineConfig) -> Result<RunResult, SimError> {
    run_checked(program, config, true)
}

fn run_checked(program: &Program, config: &MachineConfig, trace: bool) -> Result<RunResult, SimError> {
    let seq = run_sequential(program, config)?;
    let mut result = Engine::new(program, *config, trace)?.run()?;
    result.stats.seq_cycles = seq.stats.seq_cycles;
    check_equivalence(&seq, &result)?;
    Ok(result)
}

fn check_equivalence(seq: &RunResult, spmt: &RunResult) -> Result<(), SimError> {
    if let Some(i) = (0..NUM_REGISTERS).find(|&i| seq.registers[i] != spmt.registers[i]) {
        return Err(SimError::EquivalenceMismatch(format!(
            "r{i}: sequential {} speculative {}",
            seq.registers[i], spmt.registers[i]
        )));
    }
    if let Some(a) = (0..seq.memory.len()).find(|&a| seq.memory[a] != spmt.memory[a]) {
        return Err(SimError::EquivalenceMismatch(format!(
            "memory[{a}]: sequential {} speculative {}",
            seq.memory[a], spmt.memory[a]
        )));
    }
    Ok(())
}
