//! Verification of a sub thread's pre-computed state by the stable thread.

use crate::isa::{RegisterId, RegisterValues};
use crate::memcache::{Addr, L1MemCache};
use crate::regcache::RegFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryMismatch {
    pub addr: Addr,
    pub precomputed: i64,
    pub actual: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegisterMismatch {
    pub reg: RegisterId,
    pub precomputed: i64,
    pub actual: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VerificationReport {
    pub passed: bool,
    pub memory_mismatches: Vec<MemoryMismatch>,
    pub register_mismatches: Vec<RegisterMismatch>,
    pub memory_compared: usize,
    pub registers_compared: usize,
}

impl VerificationReport {
    /// Report for a stable thread without a sub thread.
    pub fn vacuous() -> VerificationReport {
        VerificationReport { passed: true, ..VerificationReport::default() }
    }

    pub fn words_compared(&self) -> usize {
        self.memory_compared + self.registers_compared
    }
}

/// The stable thread's current value of `addr`: its own newest line, else
/// main memory.
pub fn stable_view(stable_cache: &L1MemCache, memory: &[i64], addr: Addr) -> i64 {
    stable_cache
        .newest_version(addr)
        .map(|l| l.data)
        .unwrap_or_else(|| memory[addr as usize])
}

/// Compares every word the child's p-slice wrote against `view` and every
/// register the child consumed before writing against `stable_final`.
pub fn verify_sub_thread(
    child_cache: &L1MemCache,
    child_regs: &RegFile,
    view: impl Fn(Addr) -> i64,
    stable_final: &RegisterValues,
) -> VerificationReport {
    let predicted = child_cache.lines_needing_verification();
    let consumed = child_regs.registers_needing_validation();
    let memory_mismatches: Vec<MemoryMismatch> = predicted
        .iter()
        .filter_map(|&(addr, precomputed)| {
            let actual = view(addr);
            (actual != precomputed).then_some(MemoryMismatch { addr, precomputed, actual })
        })
        .collect();
    let register_mismatches: Vec<RegisterMismatch> = consumed
        .iter()
        .filter_map(|&(reg, precomputed)| {
            let actual = stable_final[reg.index()];
            (actual != precomputed).then_some(RegisterMismatch { reg, precomputed, actual })
        })
        .collect();
    VerificationReport {
        passed: memory_mismatches.is_empty() && register_mismatches.is_empty(),
        memory_mismatches,
        register_mismatches,
        memory_compared: predicted.len(),
        registers_compared: consumed.len(),
    }
}
