//! Thread lifecycle, thread versions and the Immediate Successor List.

use std::fmt;

use crate::isa::{Label, RegisterValues};
use crate::memcache::{L1MemCache, Version};
use crate::regcache::RegFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ThreadId(pub u64);

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ThreadState {
    Idle,
    Initialization,
    PreCompute,
    SpExecution,
    StableExecution,
    Wait,
    SubThreadVerify,
    Verification,
    Commit,
    Squash,
    Restart,
}

impl ThreadState {
    pub const ALL: [ThreadState; 11] = [
        ThreadState::Idle,
        ThreadState::Initialization,
        ThreadState::PreCompute,
        ThreadState::SpExecution,
        ThreadState::StableExecution,
        ThreadState::Wait,
        ThreadState::SubThreadVerify,
        ThreadState::Verification,
        ThreadState::Commit,
        ThreadState::Squash,
        ThreadState::Restart,
    ];

    /// States only the stable (ISL head) thread occupies.
    pub fn is_stable(self) -> bool {
        matches!(
            self,
            ThreadState::StableExecution | ThreadState::SubThreadVerify | ThreadState::Commit
        )
    }

    /// States of a live thread that has not yet received the stable token.
    pub fn is_speculative(self) -> bool {
        matches!(
            self,
            ThreadState::Initialization
                | ThreadState::PreCompute
                | ThreadState::SpExecution
                | ThreadState::Wait
                | ThreadState::Verification
        )
    }
}

impl fmt::Display for ThreadState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LifecycleEvent {
    /// A PE was allocated to a new thread.
    Allocated,
    InitDone,
    PsliceExit,
    /// A speculative thread reached its end point (successor's cqip or halt).
    ThreadEnd,
    StableToken,
    /// The stable thread reached its end point.
    ReachedEnd,
    VerificationMessage,
    VerificationPassed,
    /// Verification failed; the stable thread keeps running.
    VerificationFailed,
    CommitDone,
    SquashMessage,
    ViolationMessage,
    Reinitialized,
    Freed,
    /// A waiting thread's successor disappeared; it resumes execution.
    SuccessorLost,
}

impl fmt::Display for LifecycleEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("undefined transition: {event} in state {state}")]
pub struct InvalidTransition {
    pub state: ThreadState,
    pub event: LifecycleEvent,
}

/// The thread state machine.
pub fn transition(state: ThreadState, event: LifecycleEvent) -> Result<ThreadState, InvalidTransition> {
    use LifecycleEvent as E;
    use ThreadState as S;
    let next = match (state, event) {
        (S::Idle, E::Allocated) => S::Initialization,
        (S::Initialization, E::InitDone) => S::PreCompute,
        (S::PreCompute, E::PsliceExit) => S::SpExecution,
        (S::SpExecution, E::ThreadEnd) => S::Wait,
        (S::SpExecution | S::Wait | S::Verification, E::StableToken) => S::StableExecution,
        (S::SpExecution | S::Wait, E::VerificationMessage) => S::Verification,
        (S::StableExecution, E::ReachedEnd) => S::SubThreadVerify,
        (S::SubThreadVerify, E::VerificationPassed) => S::Commit,
        (S::SubThreadVerify, E::VerificationFailed | E::SuccessorLost) => S::StableExecution,
        (S::Commit, E::CommitDone) => S::Idle,
        (s, E::SquashMessage) if s.is_speculative() => S::Squash,
        (S::SpExecution | S::Wait, E::ViolationMessage) => S::Restart,
        (S::Restart, E::Reinitialized) => S::PreCompute,
        (S::Squash, E::Freed) => S::Idle,
        (S::Wait, E::SuccessorLost) => S::SpExecution,
        _ => return Err(InvalidTransition { state, event }),
    };
    Ok(next)
}

/// Immediate Successor List: live threads from the stable head to the most
/// speculative one.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Isl {
    order: Vec<ThreadId>,
}

impl Isl {
    pub fn with_head(head: ThreadId) -> Isl {
        Isl { order: vec![head] }
    }

    pub fn order(&self) -> &[ThreadId] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn head(&self) -> Option<ThreadId> {
        self.order.first().copied()
    }

    pub fn contains(&self, tid: ThreadId) -> bool {
        self.order.contains(&tid)
    }

    /// Distance from the stable head (head = 0).
    pub fn level(&self, tid: ThreadId) -> Option<usize> {
        self.order.iter().position(|&t| t == tid)
    }

    pub fn successor(&self, tid: ThreadId) -> Option<ThreadId> {
        let i = self.level(tid)?;
        self.order.get(i + 1).copied()
    }

    /// Logically earlier threads, nearest first.
    pub fn predecessors(&self, tid: ThreadId) -> impl Iterator<Item = ThreadId> + '_ {
        let i = self.level(tid).unwrap_or(0);
        self.order[..i].iter().rev().copied()
    }

    /// Logically later threads, nearest first.
    pub fn successors(&self, tid: ThreadId) -> impl Iterator<Item = ThreadId> + '_ {
        let start = self.level(tid).map_or(self.order.len(), |i| i + 1);
        self.order[start..].iter().copied()
    }

    /// Makes `child` the immediate successor of `parent`; the child inherits
    /// the parent's former successors.
    pub fn insert_after(&mut self, parent: ThreadId, child: ThreadId) {
        let i = self.level(parent).expect("parent is live");
        self.order.insert(i + 1, child);
    }

    /// Removes `victim` (if `inclusive`) and everything after it, returning
    /// the removed threads in ISL order.
    pub fn truncate_from(&mut self, victim: ThreadId, inclusive: bool) -> Vec<ThreadId> {
        let Some(i) = self.level(victim) else {
            return Vec::new();
        };
        let cut = if inclusive { i } else { i + 1 };
        self.order.split_off(cut)
    }

    pub fn pop_head(&mut self) -> Option<ThreadId> {
        if self.order.is_empty() {
            None
        } else {
            Some(self.order.remove(0))
        }
    }
}

/// One thread of the speculative machine and the PE-local state it owns.
#[derive(Debug, Clone)]
pub struct ThreadContext {
    pub id: ThreadId,
    pub pe: usize,
    /// Current thread version; bumped by every successful spawn.
    pub version: Version,
    /// Version received at spawn, restored on restart.
    pub spawn_version: Version,
    /// `None` for the main thread.
    pub start_label: Option<Label>,
    pub start_pc: usize,
    pub pc: usize,
    pub state: ThreadState,
    pub parent: Option<ThreadId>,
    pub spawn_snapshot: RegisterValues,
    pub regs: RegFile,
    pub cache: L1MemCache,
    /// First cycle at which the PE may act for this thread again.
    pub ready_at: u64,
    /// Set once the thread has been squashed or restarted.
    pub failed: bool,
    /// Cycle at which a pending verify/commit completes.
    pub verify_deadline: Option<u64>,
}

impl ThreadContext {
    pub fn main(id: ThreadId, pe: usize, regs: RegisterValues) -> ThreadContext {
        ThreadContext {
            id,
            pe,
            version: 1,
            spawn_version: 1,
            start_label: None,
            start_pc: 0,
            pc: 0,
            state: ThreadState::StableExecution,
            parent: None,
            spawn_snapshot: regs,
            regs: RegFile::sealed(&regs),
            cache: L1MemCache::new(),
            ready_at: 0,
            failed: false,
            verify_deadline: None,
        }
    }

    pub fn is_stable(&self) -> bool {
        self.state.is_stable()
    }

    pub fn apply(&mut self, event: LifecycleEvent) -> Result<ThreadState, InvalidTransition> {
        self.state = transition(self.state, event)?;
        Ok(self.state)
    }

    /// Discards all speculative state and rewinds to the start of the p-slice
    /// with the spawn-time registers and version.
    pub fn reset_to_spawn(&mut self) {
        self.cache.invalidate_all();
        self.regs = RegFile::from_snapshot(&self.spawn_snapshot);
        self.version = self.spawn_version;
        self.pc = self.start_pc;
        self.verify_deadline = None;
    }
}
