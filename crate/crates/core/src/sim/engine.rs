use std::collections::{BTreeMap, BTreeSet};

use super::exec::{evaluate, word_addr, Step};
use super::{MachineConfig, RunResult, RunStats, VerificationRecord, ViolationRecord};
use crate::bus::{Bus, BusMessage, SnoopResponse, Snooper};
use crate::error::SimError;
use crate::isa::{Instruction, IsaError, Label, Program, RegisterId, RegisterValues, NUM_REGISTERS};
use crate::memcache::{Addr, Version};
use crate::bus::MessageKind;
use crate::regcache::RegEvent;
use crate::thread::{Isl, LifecycleEvent, ThreadContext, ThreadId, ThreadState};
use crate::trace::{TraceEvent, TraceRecord};
use crate::verify::{stable_view, verify_sub_thread, VerificationReport};

/// Execution mode of the acting thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Pre,
    Spec,
    Stable,
}

/// The speculative machine: PEs, live threads, the ISL, the bus and memory.
#[derive(Debug)]
pub struct Engine<'p> {
    program: &'p Program,
    config: MachineConfig,
    memory: Vec<i64>,
    threads: BTreeMap<ThreadId, ThreadContext>,
    pes: Vec<Option<ThreadId>>,
    isl: Isl,
    bus: Bus,
    cycle: u64,
    next_tid: u64,
    stats: RunStats,
    failed: BTreeSet<ThreadId>,
    trace: Option<Vec<TraceRecord>>,
    commits: Vec<ThreadId>,
    verifications: Vec<VerificationRecord>,
    violations: Vec<ViolationRecord>,
    finished: Option<RegisterValues>,
}

impl<'p> Engine<'p> {
    /// Main thread stable on PE 0 at pc 0 with version 1.
    pub fn new(program: &'p Program, config: MachineConfig, trace: bool) -> Result<Engine<'p>, SimError> {
        config.validate()?;
        let main = ThreadContext::main(ThreadId(0), 0, [0; NUM_REGISTERS]);
        let mut pes = vec![None; config.num_pes];
        pes[0] = Some(main.id);
        let mut engine = Engine {
            program,
            config,
            memory: vec![0; config.memory_words],
            threads: BTreeMap::from([(main.id, main)]),
            pes,
            isl: Isl::with_head(ThreadId(0)),
            bus: Bus::new(),
            cycle: 0,
            next_tid: 1,
            stats: RunStats::default(),
            failed: BTreeSet::new(),
            trace: trace.then(Vec::new),
            commits: Vec::new(),
            verifications: Vec::new(),
            violations: Vec::new(),
            finished: None,
        };
        engine.emit(0, ThreadId(0), TraceEvent::Start { pc: 0 });
        Ok(engine)
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn isl(&self) -> &Isl {
        &self.isl
    }

    pub fn memory(&self) -> &[i64] {
        &self.memory
    }

    pub fn thread(&self, tid: ThreadId) -> Option<&ThreadContext> {
        self.threads.get(&tid)
    }

    pub fn is_finished(&self) -> bool {
        self.finished.is_some()
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    /// Runs to completion.
    pub fn run(mut self) -> Result<RunResult, SimError> {
        while !self.is_finished() {
            if self.cycle >= self.config.max_cycles {
                return Err(SimError::Watchdog(self.config.max_cycles));
            }
            self.step()?;
        }
        Ok(self.into_result())
    }

    fn into_result(self) -> RunResult {
        let mut stats = self.collect_stats();
        stats.spmt_cycles = self.cycle;
        RunResult {
            memory: self.memory,
            registers: self.finished.unwrap_or([0; NUM_REGISTERS]),
            stats,
            trace: self.trace,
            commits: self.commits,
            verifications: self.verifications,
            violations: self.violations,
        }
    }

    pub fn collect_stats(&self) -> RunStats {
        RunStats { failed: self.failed.len() as u64, spmt_cycles: self.cycle, ..self.stats }
    }

    /// One machine cycle: every PE in index order acts once if its thread is
    /// ready.
    pub fn step(&mut self) -> Result<(), SimError> {
        for pe in 0..self.pes.len() {
            if self.is_finished() {
                break;
            }
            let Some(tid) = self.pes[pe] else { continue };
            if self.threads[&tid].ready_at > self.cycle {
                continue;
            }
            self.act(tid)?;
        }
        self.cycle += 1;
        if !self.is_finished() {
            self.check_invariants()?;
        }
        Ok(())
    }

    fn check_invariants(&self) -> Result<(), SimError> {
        let fail = |detail: String| Err(SimError::Invariant { cycle: self.cycle, detail });
        let stable: Vec<ThreadId> = self.threads.values().filter(|t| t.is_stable()).map(|t| t.id).collect();
        if stable.len() != 1 || self.isl.head() != Some(stable[0]) {
            return fail(format!("stable threads {stable:?} with ISL head {:?}", self.isl.head()));
        }
        if self.isl.len() != self.threads.len() {
            return fail(format!("ISL holds {} threads, {} live", self.isl.len(), self.threads.len()));
        }
        for (pe, slot) in self.pes.iter().enumerate() {
            if let Some(tid) = slot {
                match self.threads.get(tid) {
                    Some(t) if t.pe == pe => {}
                    _ => return fail(format!("PE {pe} holds dead or foreign thread {tid}")),
                }
            }
        }
        Ok(())
    }

    fn emit(&mut self, pe: usize, tid: ThreadId, event: TraceEvent) {
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRecord { cycle: self.cycle, pe, tid, event });
        }
    }

    fn ctx(&self, tid: ThreadId) -> Result<&ThreadContext, SimError> {
        self.threads
            .get(&tid)
            .ok_or_else(|| SimError::Invariant { cycle: self.cycle, detail: format!("thread {tid} is not live") })
    }

    fn ctx_mut(&mut self, tid: ThreadId) -> Result<&mut ThreadContext, SimError> {
        let cycle = self.cycle;
        self.threads
            .get_mut(&tid)
            .ok_or_else(|| SimError::Invariant { cycle, detail: format!("thread {tid} is not live") })
    }

    fn apply(&mut self, tid: ThreadId, event: LifecycleEvent) -> Result<ThreadState, SimError> {
        let t = self.ctx_mut(tid)?;
        let from = t.state;
        let to = t.apply(event)?;
        let pe = t.pe;
        self.emit(pe, tid, TraceEvent::State { from, to, cause: event });
        Ok(to)
    }

    fn reg_events(&mut self, tid: ThreadId, events: Vec<RegEvent>) {
        if self.trace.is_none() || events.is_empty() {
            return;
        }
        let pe = self.threads[&tid].pe;
        for e in events {
            self.emit(pe, tid, TraceEvent::Reg { reg: e.reg, from: e.from, to: e.to, value: e.value });
        }
    }

    fn act(&mut self, tid: ThreadId) -> Result<(), SimError> {
        match self.ctx(tid)?.state {
            ThreadState::Initialization => {
                self.apply(tid, LifecycleEvent::InitDone)?;
                self.execute(tid, Mode::Pre)
            }
            ThreadState::PreCompute => self.execute(tid, Mode::Pre),
            ThreadState::SpExecution => self.execute(tid, Mode::Spec),
            ThreadState::StableExecution => self.execute(tid, Mode::Stable),
            ThreadState::Wait => self.check_wait(tid),
            ThreadState::SubThreadVerify => self.verify_step(tid),
            other => Err(SimError::Invariant {
                cycle: self.cycle,
                detail: format!("thread {tid} scheduled in transient state {other}"),
            }),
        }
    }

    /// A thread waiting at a thread end whose successor no longer matches
    /// resumes execution.
    fn check_wait(&mut self, tid: ThreadId) -> Result<(), SimError> {
        let program = self.program;
        let Some(Instruction::Cqip(label)) = program.get(self.ctx(tid)?.pc) else {
            return Ok(());
        };
        if self.successor_starts_at(tid, label) {
            return Ok(());
        }
        self.apply(tid, LifecycleEvent::SuccessorLost)?;
        self.execute(tid, Mode::Spec)
    }

    fn successor_starts_at(&self, tid: ThreadId, label: &Label) -> bool {
        self.isl
            .successor(tid)
            .and_then(|s| self.threads.get(&s))
            .is_some_and(|s| s.start_label.as_ref() == Some(label))
    }

    fn read_reg(&mut self, tid: ThreadId, mode: Mode, reg: RegisterId, events: &mut Vec<RegEvent>) -> i64 {
        let t = self.threads.get_mut(&tid).expect("acting thread is live");
        match mode {
            Mode::Pre => t.regs.read_pre(reg),
            Mode::Spec | Mode::Stable => {
                let (v, ev) = t.regs.read_sp(reg);
                events.extend(ev);
                v
            }
        }
    }

    fn write_reg(&mut self, tid: ThreadId, mode: Mode, reg: RegisterId, value: i64) {
        let t = self.threads.get_mut(&tid).expect("acting thread is live");
        match mode {
            Mode::Pre => t.regs.write_pre(reg, value),
            Mode::Spec | Mode::Stable => {
                if let Some(ev) = t.regs.write_sp(reg, value) {
                    self.reg_events(tid, vec![ev]);
                }
            }
        }
    }

    /// Executes the instruction at the thread's pc.
    fn execute(&mut self, tid: ThreadId, mode: Mode) -> Result<(), SimError> {
        let program = self.program;
        let pc = self.ctx(tid)?.pc;
        let Some(instr) = program.get(pc) else {
            return self.fault(tid, mode, SimError::Isa(IsaError::PcOutOfRange(pc)));
        };
        let mut operands = Vec::new();
        evaluate(instr, |r| {
            operands.push(r);
            0
        });
        let mut reg_events = Vec::new();
        let values: Vec<i64> = operands.iter().map(|&r| self.read_reg(tid, mode, r, &mut reg_events)).collect();
        let mut values = values.into_iter();
        let step = evaluate(instr, |_| values.next().expect("operands are read in a fixed order"));
        self.reg_events(tid, reg_events);

        let mut cost = 1;
        let mut next = Some(pc + 1);
        match step {
            Step::Alu { rd, value } => self.write_reg(tid, mode, rd, value),
            Step::Load { rd, addr } => {
                let Some(a) = word_addr(addr, self.config.memory_words) else {
                    return self.fault(tid, mode, SimError::AddressOutOfRange { pc, addr });
                };
                let (value, remote) = self.mem_read_mode(tid, mode, a)?;
                self.write_reg(tid, mode, rd, value);
                cost = self.config.mem_cost() + if remote { self.config.bus_latency_cycles } else { 0 };
            }
            Step::Store { addr, value } => {
                let Some(a) = word_addr(addr, self.config.memory_words) else {
                    return self.fault(tid, mode, SimError::AddressOutOfRange { pc, addr });
                };
                match mode {
                    Mode::Pre => {
                        self.mem_write_pre(tid, a, value)?;
                    }
                    Mode::Spec | Mode::Stable => self.mem_write_sp(tid, a, value)?,
                }
                cost = self.config.mem_cost();
            }
            Step::Control(taken) => next = Some(self.program.successor(pc, taken)?),
            Step::Other => match instr {
                Instruction::Halt => {
                    next = None;
                    if mode == Mode::Stable {
                        self.stable_halt(tid)?;
                    } else {
                        self.apply(tid, LifecycleEvent::ThreadEnd)?;
                    }
                }
                Instruction::Spawn(label) => {
                    cost = self.config.spawn_cost_cycles.max(1);
                    if self.spawn_thread(tid, label)?.is_none() {
                        cost = 1;
                    }
                }
                Instruction::Cqip(label) => {
                    if self.successor_starts_at(tid, label) {
                        next = None;
                        let ev = if mode == Mode::Stable { LifecycleEvent::ReachedEnd } else { LifecycleEvent::ThreadEnd };
                        self.apply(tid, ev)?;
                    }
                }
                Instruction::Squash(label) => {
                    cost = self.config.squash_cost_cycles.max(1);
                    let target = self
                        .isl
                        .successors(tid)
                        .find(|s| self.threads[s].start_label.as_ref() == Some(label));
                    if let Some(victim) = target {
                        let squashed = self.squash_from(victim, true)?;
                        let pe = self.threads[&tid].pe;
                        self.emit(pe, tid, TraceEvent::Squash { squashed });
                    }
                }
                Instruction::PsliceEntry(_) => next = Some(self.program.successor(pc, false)?),
                Instruction::PsliceExit(_) => {
                    if mode == Mode::Pre {
                        self.exit_pslice(tid)?;
                    }
                }
                _ => unreachable!("data-path instructions handled above"),
            },
        }
        if let Some(t) = self.threads.get_mut(&tid) {
            if let Some(n) = next {
                t.pc = n;
            }
            t.ready_at = self.cycle + cost;
        }
        Ok(())
    }

    /// Instructions a non-stable thread cannot execute stop it: p-slice
    /// instructions are skipped, a speculative thread waits and retries once
    /// stable.
    fn fault(&mut self, tid: ThreadId, mode: Mode, err: SimError) -> Result<(), SimError> {
        match mode {
            Mode::Stable => Err(err),
            Mode::Pre => {
                let cycle = self.cycle;
                let t = self.ctx_mut(tid)?;
                t.pc += 1;
                t.ready_at = cycle + 1;
                Ok(())
            }
            Mode::Spec => {
                let t = self.ctx(tid)?;
                let (pe, pc) = (t.pe, t.pc);
                self.emit(pe, tid, TraceEvent::Fault { pc });
                self.apply(tid, LifecycleEvent::ThreadEnd)?;
                Ok(())
            }
        }
    }

    fn mem_read_mode(&mut self, tid: ThreadId, mode: Mode, addr: Addr) -> Result<(i64, bool), SimError> {
        match mode {
            Mode::Pre => self.mem_read_pre(tid, addr),
            Mode::Spec | Mode::Stable => self.mem_read_sp(tid, addr),
        }
    }

    fn snoop(&mut self, msg: &BusMessage, parent: Option<ThreadId>) -> Result<Vec<SnoopResponse>, SimError> {
        let snoopers: Vec<Snooper<'_>> = self
            .isl
            .order()
            .iter()
            .enumerate()
            .filter(|&(_, &t)| t != msg.sender)
            .map(|(level, t)| {
                let ctx = &self.threads[t];
                Snooper {
                    tid: *t,
                    level,
                    state: ctx.state,
                    is_sender_parent: Some(*t) == parent,
                    cache: &ctx.cache,
                }
            })
            .collect();
        Ok(self.bus.broadcast(msg, &snoopers)?)
    }

    fn level(&self, tid: ThreadId) -> Result<usize, SimError> {
        self.isl
            .level(tid)
            .ok_or_else(|| SimError::Invariant { cycle: self.cycle, detail: format!("thread {tid} not in ISL") })
    }

    fn first_data(responses: &[SnoopResponse]) -> Option<(ThreadId, i64)> {
        responses.iter().find_map(|r| match *r {
            SnoopResponse::Data { responder, value, .. } => Some((responder, value)),
            SnoopResponse::Violation { .. } => None,
        })
    }

    /// LPrR, falling back to RPrR on a miss. Returns the value and whether
    /// the bus was used.
    fn mem_read_pre(&mut self, tid: ThreadId, addr: Addr) -> Result<(i64, bool), SimError> {
        let t = self.ctx(tid)?;
        let pe = t.pe;
        if let Some(value) = t.cache.lookup_pre(addr) {
            let state = t.cache.line(addr, 0).and_then(|l| l.state().ok()).expect("hit line is encodable");
            self.emit(pe, tid, TraceEvent::Local { kind: MessageKind::LPrR, addr, ver: 0, state, value });
            return Ok((value, false));
        }
        let (version, parent) = (t.version, t.parent);
        let level = self.level(tid)?;
        let msg = BusMessage::rprr(tid, level, addr, version);
        let responses = self.snoop(&msg, parent)?;
        let (responder, value) = match Self::first_data(&responses) {
            Some((r, v)) => (Some(r), v),
            None => (None, self.memory[addr as usize]),
        };
        self.emit(
            pe,
            tid,
            TraceEvent::Remote { kind: MessageKind::RPrR, level, addr, ver: Some(version), responder, value },
        );
        let ev = self.ctx_mut(tid)?.cache.install_pre(addr, value);
        self.emit(pe, tid, TraceEvent::Local { kind: MessageKind::LPrR, addr, ver: ev.ver, state: ev.state, value });
        Ok((value, true))
    }

    /// LSpR, falling back to RSpR on a miss.
    fn mem_read_sp(&mut self, tid: ThreadId, addr: Addr) -> Result<(i64, bool), SimError> {
        let t = self.ctx(tid)?;
        let pe = t.pe;
        if let Some(line) = t.cache.newest_version(addr) {
            let (ver, value) = (line.ver, line.data);
            let state = line.state().expect("cache lines are encodable");
            self.emit(pe, tid, TraceEvent::Local { kind: MessageKind::LSpR, addr, ver, state, value });
            return Ok((value, false));
        }
        let version = t.version;
        let level = self.level(tid)?;
        let msg = BusMessage::rspr(tid, level, addr);
        let responses = self.snoop(&msg, None)?;
        let (responder, value) = match Self::first_data(&responses) {
            Some((r, v)) => (Some(r), v),
            None => (None, self.memory[addr as usize]),
        };
        self.emit(pe, tid, TraceEvent::Remote { kind: MessageKind::RSpR, level, addr, ver: None, responder, value });
        let ev = self.ctx_mut(tid)?.cache.install_sp(addr, version, value);
        self.emit(pe, tid, TraceEvent::Local { kind: MessageKind::LSpR, addr, ver: ev.ver, state: ev.state, value });
        Ok((value, true))
    }

    fn mem_write_pre(&mut self, tid: ThreadId, addr: Addr, value: i64) -> Result<(), SimError> {
        let t = self.ctx_mut(tid)?;
        let pe = t.pe;
        let ev = t.cache.local_write_pre(addr, value);
        self.emit(pe, tid, TraceEvent::Local { kind: MessageKind::LPrW, addr, ver: ev.ver, state: ev.state, value });
        Ok(())
    }

    /// LSpW followed by exactly one VioTest; the least speculative violator
    /// is restarted after squashing its successors.
    fn mem_write_sp(&mut self, tid: ThreadId, addr: Addr, value: i64) -> Result<(), SimError> {
        let t = self.ctx_mut(tid)?;
        let (pe, version) = (t.pe, t.version);
        let ev = t.cache.local_write_sp(addr, version, value);
        self.emit(pe, tid, TraceEvent::Local { kind: MessageKind::LSpW, addr, ver: ev.ver, state: ev.state, value });
        let level = self.level(tid)?;
        let msg = BusMessage::viotest(tid, level, addr);
        self.emit(pe, tid, TraceEvent::VioTest { level, addr });
        let responses = self.snoop(&msg, None)?;
        let victim = responses.iter().find_map(|r| match *r {
            SnoopResponse::Violation { receiver } => Some(receiver),
            SnoopResponse::Data { .. } => None,
        });
        if let Some(victim) = victim {
            let squashed = self.squash_from(victim, false)?;
            let vpe = self.threads[&victim].pe;
            self.emit(vpe, victim, TraceEvent::Violation { addr, victim, squashed: squashed.clone() });
            self.violations.push(ViolationRecord { cycle: self.cycle, sender: tid, addr, victim, squashed });
            self.restart(victim)?;
        }
        Ok(())
    }

    /// Speculative or stable memory write by a live thread.
    pub fn mem_write(&mut self, tid: ThreadId, addr: Addr, value: i64) -> Result<(), SimError> {
        match self.ctx(tid)?.state {
            ThreadState::Initialization | ThreadState::PreCompute => self.mem_write_pre(tid, addr, value),
            _ => self.mem_write_sp(tid, addr, value),
        }
    }

    /// Memory read in the thread's current phase.
    pub fn mem_read(&mut self, tid: ThreadId, addr: Addr) -> Result<i64, SimError> {
        let state = self.ctx(tid)?.state;
        if state == ThreadState::Initialization {
            self.apply(tid, LifecycleEvent::InitDone)?;
        }
        let mode = match state {
            ThreadState::Initialization | ThreadState::PreCompute => Mode::Pre,
            _ => Mode::Spec,
        };
        Ok(self.mem_read_mode(tid, mode, addr)?.0)
    }

    /// Ends the p-slice: registers sealed, thread enters SpExecution.
    pub fn exit_pslice(&mut self, tid: ThreadId) -> Result<(), SimError> {
        if self.ctx(tid)?.state == ThreadState::Initialization {
            self.apply(tid, LifecycleEvent::InitDone)?;
        }
        self.ctx_mut(tid)?.regs.seal_precomputation();
        self.apply(tid, LifecycleEvent::PsliceExit)?;
        Ok(())
    }

    /// Creates a child for `label` on the lowest idle PE, or refuses when
    /// every PE is busy.
    pub fn spawn_thread(&mut self, parent: ThreadId, label: &Label) -> Result<Option<ThreadId>, SimError> {
        let start_pc = self.program.thread_entry_pc(label)?;
        let p = self.ctx(parent)?;
        let ppe = p.pe;
        let Some(pe) = self.pes.iter().position(Option::is_none) else {
            self.stats.refused_spawns += 1;
            self.emit(ppe, parent, TraceEvent::SpawnRefused { label: label.clone() });
            return Ok(None);
        };
        let child_id = ThreadId(self.next_tid);
        self.next_tid += 1;
        let p = self.ctx_mut(parent)?;
        let version: Version = p.version;
        p.version += 1;
        let parent_version = p.version;
        let snapshot = p.regs.values();
        let mut child = ThreadContext {
            id: child_id,
            pe,
            version,
            spawn_version: version,
            start_label: Some(label.clone()),
            start_pc,
            pc: start_pc,
            state: ThreadState::Idle,
            parent: Some(parent),
            spawn_snapshot: snapshot,
            regs: crate::regcache::RegFile::from_snapshot(&snapshot),
            cache: Default::default(),
            ready_at: self.cycle + self.config.spawn_cost_cycles.max(1),
            failed: false,
            verify_deadline: None,
        };
        child.apply(LifecycleEvent::Allocated)?;
        self.threads.insert(child_id, child);
        self.pes[pe] = Some(child_id);
        self.isl.insert_after(parent, child_id);
        self.stats.spawned += 1;
        self.emit(
            ppe,
            parent,
            TraceEvent::Spawn { label: label.clone(), child: child_id, child_pe: pe, child_version: version, parent_version },
        );
        self.emit(
            pe,
            child_id,
            TraceEvent::State { from: ThreadState::Idle, to: ThreadState::Initialization, cause: LifecycleEvent::Allocated },
        );
        Ok(Some(child_id))
    }

    /// Terminates `victim` (if `inclusive`) and every more speculative thread.
    pub fn squash_from(&mut self, victim: ThreadId, inclusive: bool) -> Result<Vec<ThreadId>, SimError> {
        let removed = self.isl.truncate_from(victim, inclusive);
        for &tid in &removed {
            self.apply(tid, LifecycleEvent::SquashMessage)?;
            self.apply(tid, LifecycleEvent::Freed)?;
            let mut t = self.threads.remove(&tid).expect("ISL members are live");
            t.cache.invalidate_all();
            t.failed = true;
            self.pes[t.pe] = None;
            self.failed.insert(tid);
            self.stats.squashed += 1;
        }
        Ok(removed)
    }

    /// Re-initializes a violated thread from its spawn state; it re-runs its
    /// p-slice.
    fn restart(&mut self, tid: ThreadId) -> Result<(), SimError> {
        self.apply(tid, LifecycleEvent::ViolationMessage)?;
        let cost = self.config.squash_cost_cycles.max(1);
        let cycle = self.cycle;
        let t = self.ctx_mut(tid)?;
        t.reset_to_spawn();
        t.failed = true;
        t.ready_at = cycle + cost;
        let (pe, pc, version) = (t.pe, t.pc, t.version);
        self.failed.insert(tid);
        self.stats.restarts += 1;
        self.emit(pe, tid, TraceEvent::Restart { pc, version });
        self.apply(tid, LifecycleEvent::Reinitialized)?;
        Ok(())
    }

    /// A stable `halt`: every successor is control-mispredicted.
    fn stable_halt(&mut self, tid: ThreadId) -> Result<(), SimError> {
        if let Some(first) = self.isl.successor(tid) {
            let squashed = self.squash_from(first, true)?;
            let pe = self.threads[&tid].pe;
            self.emit(pe, tid, TraceEvent::Squash { squashed });
        }
        self.apply(tid, LifecycleEvent::ReachedEnd)?;
        Ok(())
    }

    /// Stable thread at its end point: wait for the child's p-slice, spend
    /// the verify/commit cost, then verify and commit atomically.
    fn verify_step(&mut self, tid: ThreadId) -> Result<(), SimError> {
        let program = self.program;
        let pc = self.ctx(tid)?.pc;
        let halting = matches!(program.get(pc), Some(Instruction::Halt));
        let child = self.isl.successor(tid);

        if !halting {
            let label = match program.get(pc) {
                Some(Instruction::Cqip(l)) => l,
                other => {
                    return Err(SimError::Invariant {
                        cycle: self.cycle,
                        detail: format!("thread {tid} verifying at {other:?}"),
                    })
                }
            };
            if !self.successor_starts_at(tid, label) {
                self.apply(tid, LifecycleEvent::SuccessorLost)?;
                let cycle = self.cycle;
                let t = self.ctx_mut(tid)?;
                t.pc += 1;
                t.ready_at = cycle + 1;
                t.verify_deadline = None;
                return Ok(());
            }
        }

        if let Some(c) = child.filter(|_| !halting) {
            let cs = self.ctx(c)?.state;
            if matches!(cs, ThreadState::Initialization | ThreadState::PreCompute) {
                self.stats.stall_cycles += 1;
                let cycle = self.cycle;
                let t = self.ctx_mut(tid)?;
                t.verify_deadline = None;
                t.ready_at = cycle + 1;
                let pe = t.pe;
                self.emit(pe, tid, TraceEvent::Stall { child: c });
                return Ok(());
            }
        }

        let deadline = match self.ctx(tid)?.verify_deadline {
            Some(d) => d,
            None => {
                let t = self.ctx(tid)?;
                let mut words = t.cache.dirty_words().len() as u64;
                if let Some(c) = child.filter(|_| !halting) {
                    let cc = self.ctx(c)?;
                    words += cc.cache.lines_needing_verification().len() as u64;
                    words += cc.regs.registers_needing_validation().len() as u64;
                }
                let cost = 1 + self.config.verify_cost_per_word * words;
                let d = self.cycle + cost - 1;
                let t = self.ctx_mut(tid)?;
                t.verify_deadline = Some(d);
                t.ready_at = d;
                d
            }
        };
        if self.cycle < deadline {
            return Ok(());
        }
        self.ctx_mut(tid)?.verify_deadline = None;

        if halting {
            if let Some(first) = child {
                let squashed = self.squash_from(first, true)?;
                let pe = self.threads[&tid].pe;
                self.emit(pe, tid, TraceEvent::Squash { squashed });
            }
            self.apply(tid, LifecycleEvent::VerificationPassed)?;
            let regs = self.commit(tid)?;
            let pe = self.threads[&tid].pe;
            self.emit(pe, tid, TraceEvent::Halt);
            self.retire(tid)?;
            self.finished = Some(regs);
            return Ok(());
        }

        let c = child.expect("cqip end point has a matching successor");
        let report = self.verify(tid, c);
        let spe = self.threads[&tid].pe;
        self.emit(
            spe,
            tid,
            TraceEvent::Verify {
                child: c,
                passed: report.passed,
                mem_compared: report.memory_compared,
                regs_compared: report.registers_compared,
                mismatches: report.memory_mismatches.len() + report.register_mismatches.len(),
            },
        );
        self.verifications.push(VerificationRecord { cycle: self.cycle, stable: tid, child: c, report: report.clone() });
        self.apply(c, LifecycleEvent::VerificationMessage)?;
        if report.passed {
            self.apply(tid, LifecycleEvent::VerificationPassed)?;
            let regs = self.commit(tid)?;
            self.ctx_mut(c)?.regs.synchronize_from_parent(&regs);
            self.apply(c, LifecycleEvent::StableToken)?;
            self.emit(spe, tid, TraceEvent::Token { to: c });
            self.retire(tid)?;
        } else {
            self.stats.verification_failures += 1;
            let squashed = self.squash_from(c, true)?;
            self.emit(spe, tid, TraceEvent::Squash { squashed });
            self.apply(tid, LifecycleEvent::VerificationFailed)?;
            let cycle = self.cycle;
            let t = self.ctx_mut(tid)?;
            t.pc += 1;
            t.ready_at = cycle + 1;
        }
        Ok(())
    }

    fn verify(&self, stable: ThreadId, child: ThreadId) -> VerificationReport {
        let s = &self.threads[&stable];
        let c = &self.threads[&child];
        verify_sub_thread(&c.cache, &c.regs, |a| stable_view(&s.cache, &self.memory, a), &s.regs.values())
    }

    /// Publishes the stable thread's newest dirty lines. Returns its final
    /// registers.
    fn commit(&mut self, tid: ThreadId) -> Result<RegisterValues, SimError> {
        let seq = self.commits.len() as u64;
        let level = self.level(tid)?;
        let t = self.threads.get_mut(&tid).expect("checked live");
        let words = t.cache.commit_lines(&mut self.memory);
        let regs = t.regs.values();
        let pe = t.pe;
        self.commits.push(tid);
        self.stats.commits += 1;
        self.emit(pe, tid, TraceEvent::Commit { seq, level, words });
        Ok(regs)
    }

    /// Commit done: frees the PE and pops the ISL head.
    fn retire(&mut self, tid: ThreadId) -> Result<(), SimError> {
        self.apply(tid, LifecycleEvent::CommitDone)?;
        let t = self.threads.remove(&tid).expect("checked live");
        self.pes[t.pe] = None;
        if self.isl.pop_head() != Some(tid) {
            return Err(SimError::Invariant { cycle: self.cycle, detail: format!("committing thread {tid} is not the head") });
        }
        Ok(())
    }
}
