//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, HashMap};
use std::panic::{self, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use prophet_core::corpus::{self, BUILTIN};
use prophet_core::isa::{parse_program, Label};
use prophet_core::memcache::{encode_state, LineBits, MemLineState};
use prophet_core::regcache::RegState;
use prophet_core::sim::Engine;
use prophet_core::thread::{ThreadId, ThreadState};
use prophet_core::trace::{TraceEvent, TraceRecord};
use prophet_core::bus::MessageKind;
use prophet_core::{run_sequential, run_speculative, run_speculative_traced, MachineConfig, RunResult};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const PES: [usize; 4] = [1, 2, 4, 8];

fn builtin(name: &str) -> prophet_core::Program {
    corpus::load(name).expect("built-in exists")
}

fn traced(name: &str, pes: usize) -> Result<RunResult, String> {
    run_speculative_traced(&builtin(name), &MachineConfig::with_pes(pes)).map_err(|e| format!("{name}@{pes}: {e}"))
}

fn trace_of(r: &RunResult) -> &[TraceRecord] {
    r.trace.as_deref().unwrap_or(&[])
}

fn equivalence() -> Outcome {
    let start = Instant::now();
    let mut runs = 0;
    for (name, _) in BUILTIN {
        let p = builtin(name);
        for pes in PES {
            run_speculative(&p, &MachineConfig::with_pes(pes)).map_err(|e| format!("{name}@{pes}: {e}"))?;
            runs += 1;
        }
    }
    for seed in 0..500 {
        let p = corpus::generate(seed);
        ensure!(p.len() <= corpus::MAX_GENERATED_LEN, "seed {seed} has {} instructions", p.len());
        for pes in PES {
            run_speculative(&p, &MachineConfig::with_pes(pes)).map_err(|e| format!("seed {seed}@{pes}: {e}"))?;
            runs += 1;
        }
    }
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(60), "took {took:?}");
    Ok(format!("{runs} runs bit-exact in {:.1}s", took.as_secs_f64()))
}

fn encoding() -> Outcome {
    use MemLineState::*;
    // (state, V, RL, M, pre-computation version, O)
    let mem_table = [
        (PreSh, 1, 1, 0, true, 1),
        (PreEx, 1, 0, 1, true, 0),
        (PreExO, 1, 0, 1, true, 1),
        (SpSh, 1, 1, 0, false, 0),
        (SpShM, 1, 1, 1, false, 0),
        (SpShO, 1, 1, 1, false, 1),
        (SpEx, 1, 0, 1, false, 0),
        (SpExO, 1, 0, 1, false, 1),
    ];
    let b = |x: i32| x == 1;
    for (state, v, rl, m, pre, o) in mem_table {
        let bits = state.bits();
        ensure!(bits == LineBits { v: b(v), rl: b(rl), m: b(m), o: b(o) }, "{state} bits {bits:?}");
        let ver = if pre { 0 } else { 3 };
        ensure!(encode_state(bits, ver) == Ok(state), "{state} does not round-trip");
    }
    ensure!(!Invalid.bits().v, "Invalid has V=1");
    for ver in [0, 1, 2, 7, u64::MAX] {
        for mask in 0..16u8 {
            let bits = LineBits { v: mask & 8 != 0, rl: mask & 4 != 0, m: mask & 2 != 0, o: mask & 1 != 0 };
            let listed = mem_table.iter().find(|row| {
                (b(row.1), b(row.2), b(row.3), b(row.5)) == (bits.v, bits.rl, bits.m, bits.o) && row.4 == (ver == 0)
            });
            let got = encode_state(bits, ver);
            match (bits.v, listed) {
                (false, _) => ensure!(got == Ok(Invalid), "V=0 ver={ver} decoded {got:?}"),
                (true, Some(row)) => ensure!(got == Ok(row.0), "{bits:?} ver={ver} decoded {got:?}"),
                // PreSh accepts O as don't-care; everything else unlisted is rejected.
                (true, None) if bits.rl && !bits.m && ver == 0 => {
                    ensure!(got == Ok(PreSh), "{bits:?} ver=0 decoded {got:?}")
                }
                (true, None) => ensure!(got.is_err(), "{bits:?} ver={ver} decoded {got:?}"),
            }
        }
    }
    ensure!(MemLineState::ALL.len() == 9, "state count");

    let reg_table = [
        (RegState::Init, (true, false, false)),
        (RegState::Validate, (true, true, false)),
        (RegState::MCommit, (true, false, true)),
        (RegState::VaandMC, (true, true, true)),
    ];
    for (state, bits) in reg_table {
        ensure!(state.bits() == bits, "{state} bits {:?}", state.bits());
        ensure!(RegState::from_bits(bits.0, bits.1, bits.2) == state, "{state} does not round-trip");
    }
    for mask in 0..8u8 {
        let (v, l, m) = (mask & 4 != 0, mask & 2 != 0, mask & 1 != 0);
        let expected = if v { reg_table.iter().find(|r| r.1 == (v, l, m)).unwrap().0 } else { RegState::Invalid };
        ensure!(RegState::from_bits(v, l, m) == expected, "({v},{l},{m})");
    }
    ensure!(!RegState::Invalid.bits().0 && RegState::ALL.len() == 5, "register state set");
    Ok("9 memory and 5 register states exact".into())
}

fn fig5() -> Outcome {
    let r = traced("fig5", 2)?;
    let child = trace_of(&r)
        .iter()
        .find_map(|rec| match rec.event {
            TraceEvent::Spawn { child, .. } => Some(child),
            _ => None,
        })
        .ok_or("no spawn")?;
    let mut precomputing = false;
    let (mut pre, mut spec) = (None, None);
    for rec in trace_of(&r).iter().filter(|rec| rec.tid == child) {
        match &rec.event {
            TraceEvent::State { to, .. } => precomputing = matches!(to, ThreadState::Initialization | ThreadState::PreCompute),
            TraceEvent::Remote { kind: MessageKind::RPrR, addr: 100, value, .. } if precomputing => {
                pre.get_or_insert(*value);
            }
            TraceEvent::Remote { kind: MessageKind::RSpR, addr: 100, value, .. } if !precomputing => {
                spec.get_or_insert(*value);
            }
            _ => {}
        }
    }
    ensure!(pre == Some(1), "p-slice read {pre:?}");
    ensure!(spec == Some(2), "body read {spec:?}");
    ensure!(r.memory[101] == 9, "mem[101] = {}", r.memory[101]);
    Ok("p-slice read 1, speculative read 2".into())
}

#[derive(Debug, Clone)]
enum Op {
    Spawn(usize),
    Exit(usize),
    Write(usize, u64),
    Read(usize, u64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        2 => (0..4usize).prop_map(Op::Spawn),
        1 => (0..4usize).prop_map(Op::Exit),
        4 => (0..4usize, 0..3u64).prop_map(|(t, a)| Op::Write(t, a)),
        4 => (0..4usize, 0..3u64).prop_map(|(t, a)| Op::Read(t, a)),
    ]
}

struct Shadow {
    tid: ThreadId,
    version: u64,
    parent: Option<usize>,
    pre: bool,
    local_pre: HashMap<u64, i64>,
}

struct Write {
    writer: usize,
    ver: u64,
    addr: u64,
    value: i64,
}

/// Value a pre-computation read must return: the reader's own p-slice copy,
/// else the nearest visible writer, else memory (zero).
fn visible_value(shadows: &[Shadow], isl: &[usize], log: &[Write], reader: usize, addr: u64) -> i64 {
    if let Some(&v) = shadows[reader].local_pre.get(&addr) {
        return v;
    }
    let parent = shadows[reader].parent.expect("children have parents");
    let limit = shadows[reader].version;
    let plevel = isl.iter().position(|&i| i == parent).expect("parent live");
    for &t in isl[..=plevel].iter().rev() {
        let hit = log
            .iter()
            .rev()
            .find(|w| w.writer == t && w.addr == addr && (t != parent || w.ver <= limit));
        if let Some(w) = hit {
            return w.value;
        }
    }
    0
}

fn run_tree(ops: &[Op]) -> Result<(), TestCaseError> {
    let program = parse_program("    halt\nA:\n    cqip A\n    pslice_entry A\n    pslice_exit A\n    halt\n").unwrap();
    let label = Label::new("A");
    let mut engine = Engine::new(&program, MachineConfig::with_pes(4), false).unwrap();
    let main = engine.isl().order()[0];
    let mut shadows =
        vec![Shadow { tid: main, version: 1, parent: None, pre: false, local_pre: HashMap::new() }];
    let mut isl = vec![0usize];
    let mut log: Vec<Write> = Vec::new();
    let mut next_value = 1000i64;

    for op in ops {
        match *op {
            Op::Spawn(i) => {
                let p = i % shadows.len();
                if shadows.len() == 4 || shadows[p].pre {
                    continue;
                }
                let before = shadows[p].version;
                let child = engine.spawn_thread(shadows[p].tid, &label).unwrap().expect("a PE is idle");
                let c = engine.thread(child).unwrap().version;
                let after = engine.thread(shadows[p].tid).unwrap().version;
                prop_assert_eq!(c, before, "child version");
                prop_assert_eq!(after, before + 1, "parent version");
                shadows[p].version += 1;
                shadows.push(Shadow { tid: child, version: before, parent: Some(p), pre: true, local_pre: HashMap::new() });
                let at = isl.iter().position(|&x| x == p).unwrap();
                isl.insert(at + 1, shadows.len() - 1);
            }
            Op::Exit(i) => {
                let t = i % shadows.len();
                if shadows[t].pre {
                    engine.exit_pslice(shadows[t].tid).unwrap();
                    shadows[t].pre = false;
                }
            }
            Op::Write(i, a) => {
                let t = i % shadows.len();
                let addr = 100 + a;
                next_value += 1;
                engine.mem_write(shadows[t].tid, addr, next_value).unwrap();
                let ver = if shadows[t].pre { 0 } else { shadows[t].version };
                if shadows[t].pre {
                    shadows[t].local_pre.insert(addr, next_value);
                }
                log.push(Write { writer: t, ver, addr, value: next_value });
            }
            Op::Read(i, a) => {
                let t = i % shadows.len();
                if !shadows[t].pre {
                    continue;
                }
                let addr = 100 + a;
                let expected = visible_value(&shadows, &isl, &log, t, addr);
                let got = engine.mem_read(shadows[t].tid, addr).unwrap();
                prop_assert_eq!(got, expected, "read by {} of {}", shadows[t].tid, addr);
                let parent = shadows[t].parent.unwrap();
                let limit = shadows[t].version;
                let too_new = log.iter().any(|w| w.writer == parent && w.value == got && w.ver > limit);
                prop_assert!(!too_new, "observed parent data newer than version {}", limit);
                shadows[t].local_pre.insert(addr, got);
            }
        }
        let order: Vec<ThreadId> = isl.iter().map(|&i| shadows[i].tid).collect();
        prop_assert_eq!(engine.isl().order(), &order[..]);
    }
    prop_assert_eq!(engine.collect_stats().restarts, 0);
    Ok(())
}

fn version_discipline() -> Outcome {
    let mut runner = TestRunner::new(Config { cases: 512, failure_persistence: None, ..Config::default() });
    runner
        .run(&proptest::collection::vec(op(), 1..40), |ops| run_tree(&ops))
        .map_err(|e| e.to_string())?;
    Ok("512 random spawn trees match the visible-set oracle".into())
}

/// First thread spawned for each label.
fn spawned_labels(r: &RunResult) -> BTreeMap<String, ThreadId> {
    let mut first = BTreeMap::new();
    for rec in trace_of(r) {
        if let TraceEvent::Spawn { label, child, .. } = &rec.event {
            first.entry(label.as_str().to_string()).or_insert(*child);
        }
    }
    first
}

fn violation() -> Outcome {
    let r = traced("raw_violation", 4)?;
    let labels = spawned_labels(&r);
    let (b, c) = (labels["B"], labels["C"]);
    ensure!(r.stats.restarts == 1, "restarts = {}", r.stats.restarts);
    ensure!(r.violations.len() == 1, "violations = {}", r.violations.len());
    let v = &r.violations[0];
    ensure!(v.victim == b, "victim {}", v.victim);
    ensure!(v.squashed == vec![c], "squashed {:?}", v.squashed);
    let restarted: Vec<ThreadId> = trace_of(&r)
        .iter()
        .filter(|rec| matches!(rec.event, TraceEvent::Restart { .. }))
        .map(|rec| rec.tid)
        .collect();
    ensure!(restarted == vec![b], "restarted {restarted:?}");
    let seq = run_sequential(&builtin("raw_violation"), &MachineConfig::with_pes(4)).map_err(|e| e.to_string())?;
    ensure!(seq.memory == r.memory && seq.registers == r.registers, "final state differs");
    Ok(format!("1 restart of {b}, {c} squashed, stats {}", r.stats))
}

fn verification() -> Outcome {
    let r = traced("mispredict", 4)?;
    let child = spawned_labels(&r)["L"];
    let failed: Vec<_> = r.verifications.iter().filter(|v| !v.report.passed).collect();
    ensure!(failed.len() == 1, "{} failing verifications", failed.len());
    let rep = &failed[0].report;
    ensure!(failed[0].child == child, "verified {}", failed[0].child);
    ensure!(
        rep.memory_mismatches.iter().any(|m| m.addr == 40 && m.precomputed == 32 && m.actual == 33),
        "memory mismatches {:?}",
        rep.memory_mismatches
    );
    ensure!(
        rep.register_mismatches.iter().any(|m| m.reg.index() == 1 && m.precomputed == 4 && m.actual == 9),
        "register mismatches {:?}",
        rep.register_mismatches
    );
    let stable = failed[0].stable;
    let squash_at = trace_of(&r)
        .iter()
        .position(|rec| rec.tid == stable && matches!(&rec.event, TraceEvent::Squash { squashed } if squashed.contains(&child)))
        .ok_or("child not squashed")?;
    let continued = trace_of(&r)[squash_at..]
        .iter()
        .any(|rec| rec.tid == stable && matches!(rec.event, TraceEvent::Local { kind: MessageKind::LSpW, addr: 41, .. }));
    ensure!(continued, "stable thread did not run the body itself");
    ensure!(r.commits == vec![stable], "commits {:?}", r.commits);
    let seq = run_sequential(&builtin("mispredict"), &MachineConfig::with_pes(4)).map_err(|e| e.to_string())?;
    ensure!(seq.memory == r.memory && seq.registers == r.registers, "final state differs");
    Ok("addr 40 and r1 reported, child squashed, stable thread continued".into())
}

fn speedup_trend() -> Outcome {
    let start = Instant::now();
    let p = builtin("loop_independent");
    let mut cycles = Vec::new();
    let mut at4 = 0.0;
    for pes in [1, 2, 4] {
        let r = run_speculative(&p, &MachineConfig::with_pes(pes)).map_err(|e| e.to_string())?;
        cycles.push(r.stats.spmt_cycles);
        if pes == 4 {
            at4 = r.stats.speedup();
        }
    }
    ensure!(at4 >= 1.5, "speedup at 4 PEs {at4:.3}");
    ensure!(cycles.windows(2).all(|w| w[1] <= w[0]), "spmt cycles {cycles:?}");
    ensure!(start.elapsed() < Duration::from_secs(1), "took {:?}", start.elapsed());
    Ok(format!("speedup {at4:.3} at 4 PEs, spmt cycles {cycles:?}"))
}

/// Replays the logical order from spawn and squash events and checks every
/// commit against it.
fn check_commit_order(trace: &[TraceRecord]) -> Result<usize, String> {
    let mut order: Vec<ThreadId> = Vec::new();
    let mut states: BTreeMap<ThreadId, ThreadState> = BTreeMap::new();
    let mut commits = 0;
    let mut expected_seq = 0;
    let mut i = 0;
    while i < trace.len() {
        let cycle = trace[i].cycle;
        while i < trace.len() && trace[i].cycle == cycle {
            let rec = &trace[i];
            match &rec.event {
                TraceEvent::Start { .. } => {
                    order.push(rec.tid);
                    states.insert(rec.tid, ThreadState::StableExecution);
                }
                TraceEvent::Spawn { child, .. } => {
                    let at = order.iter().position(|&t| t == rec.tid).ok_or("spawn by unknown thread")?;
                    order.insert(at + 1, *child);
                }
                TraceEvent::Squash { squashed } | TraceEvent::Violation { squashed, .. } => {
                    order.retain(|t| !squashed.contains(t));
                }
                TraceEvent::Commit { seq, .. } => {
                    ensure!(order.first() == Some(&rec.tid), "cycle {cycle}: {} commits, head {:?}", rec.tid, order.first());
                    ensure!(*seq == expected_seq, "commit seq {seq}, expected {expected_seq}");
                    expected_seq += 1;
                    order.remove(0);
                    commits += 1;
                }
                TraceEvent::Token { to } => {
                    ensure!(order.first() == Some(to), "token to {to}, head {:?}", order.first());
                }
                TraceEvent::State { to, .. } => {
                    states.insert(rec.tid, *to);
                }
                _ => {}
            }
            i += 1;
        }
        let stable = states.values().filter(|s| s.is_stable()).count();
        ensure!(stable <= 1, "cycle {cycle}: {stable} stable threads");
    }
    ensure!(order.is_empty(), "uncommitted threads {order:?}");
    Ok(commits)
}

fn commit_order() -> Outcome {
    let mut total = 0;
    for (name, _) in BUILTIN {
        for pes in PES {
            let r = traced(name, pes)?;
            let n = check_commit_order(trace_of(&r)).map_err(|e| format!("{name}@{pes}: {e}"))?;
            ensure!(n == r.commits.len(), "{name}@{pes}: {n} traced commits, {} recorded", r.commits.len());
            total += n;
        }
    }
    Ok(format!("{total} commits in logical order"))
}

fn prophet(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_prophet")).args(args).output().map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "prophet {args:?} exited {:?}", out.status.code());
    Ok(out.stdout)
}

fn determinism() -> Outcome {
    let programs: Vec<String> = BUILTIN.iter().map(|(n, _)| format!("builtin:{n}")).collect();
    let mut sweep: Vec<&str> = vec!["sweep"];
    sweep.extend(programs.iter().map(String::as_str));
    ensure!(prophet(&sweep)? == prophet(&sweep)?, "sweep CSV differs between runs");
    for p in &programs {
        for pes in PES {
            let pes = pes.to_string();
            let args = ["trace", p.as_str(), "--pes", pes.as_str()];
            ensure!(prophet(&args)? == prophet(&args)?, "{p}@{pes}: trace differs");
        }
    }
    Ok(format!("{} programs, traces and CSV identical", programs.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 sequential equivalence", equivalence),
        ("2 encoding conformance", encoding),
        ("3 fig5 scenario", fig5),
        ("4 version discipline", version_discipline),
        ("5 violation protocol", violation),
        ("6 verification protocol", verification),
        ("7 speedup trend", speedup_trend),
        ("8 commit ordering", commit_order),
        ("9 determinism", determinism),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Err(e.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
