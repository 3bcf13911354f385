//! Per-thread register cache.
//!
//! During the p-slice registers are plain storage. Leaving the p-slice seals
//! every register into `Init`; from then on the first access decides whether
//! the register is a live-in that must be validated (read first) or a value
//! the thread owns (written first).

use std::fmt;

use crate::isa::{RegisterId, RegisterValues, NUM_REGISTERS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegState {
    Invalid,
    Init,
    Validate,
    MCommit,
    VaandMC,
}

impl RegState {
    pub const ALL: [RegState; 5] = [
        RegState::Invalid,
        RegState::Init,
        RegState::Validate,
        RegState::MCommit,
        RegState::VaandMC,
    ];

    /// `(V, L, M)`; `Invalid` only fixes V.
    pub fn bits(self) -> (bool, bool, bool) {
        match self {
            RegState::Invalid => (false, false, false),
            RegState::Init => (true, false, false),
            RegState::Validate => (true, true, false),
            RegState::MCommit => (true, false, true),
            RegState::VaandMC => (true, true, true),
        }
    }

    pub fn from_bits(v: bool, l: bool, m: bool) -> RegState {
        match (v, l, m) {
            (false, _, _) => RegState::Invalid,
            (true, false, false) => RegState::Init,
            (true, true, false) => RegState::Validate,
            (true, false, true) => RegState::MCommit,
            (true, true, true) => RegState::VaandMC,
        }
    }
}

impl fmt::Display for RegState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegCacheLine {
    pub v: bool,
    pub l: bool,
    pub m: bool,
    pub tag: RegisterId,
    pub data: i64,
    /// Value returned by the first speculative read, present iff `l`.
    pub first_read_value: Option<i64>,
}

impl RegCacheLine {
    pub fn state(&self) -> RegState {
        RegState::from_bits(self.v, self.l, self.m)
    }
}

/// A state change worth tracing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegEvent {
    pub reg: RegisterId,
    pub from: RegState,
    pub to: RegState,
    pub value: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegFile {
    lines: [RegCacheLine; NUM_REGISTERS],
}

impl RegFile {
    /// Working file of a newly spawned (or restarted) thread: snapshot values,
    /// all lines invalid until the p-slice is sealed.
    pub fn from_snapshot(values: &RegisterValues) -> RegFile {
        let mut lines = [RegCacheLine {
            v: false,
            l: false,
            m: false,
            tag: RegisterId::new(0).expect("r0"),
            data: 0,
            first_read_value: None,
        }; NUM_REGISTERS];
        for (reg, line) in RegisterId::all().zip(lines.iter_mut()) {
            line.tag = reg;
            line.data = values[reg.index()];
        }
        RegFile { lines }
    }

    /// Register file of a thread that never runs a p-slice (the main thread).
    pub fn sealed(values: &RegisterValues) -> RegFile {
        let mut rf = RegFile::from_snapshot(values);
        rf.seal_precomputation();
        rf
    }

    pub fn line(&self, reg: RegisterId) -> &RegCacheLine {
        &self.lines[reg.index()]
    }

    pub fn state(&self, reg: RegisterId) -> RegState {
        self.line(reg).state()
    }

    pub fn values(&self) -> RegisterValues {
        let mut out = [0; NUM_REGISTERS];
        for (o, l) in out.iter_mut().zip(&self.lines) {
            *o = l.data;
        }
        out
    }

    /// RP: p-slice read, no state change.
    pub fn read_pre(&self, reg: RegisterId) -> i64 {
        self.lines[reg.index()].data
    }

    /// WP: p-slice write, no state change.
    pub fn write_pre(&mut self, reg: RegisterId, value: i64) {
        self.lines[reg.index()].data = value;
    }

    /// Leaving the p-slice: every register becomes `Init` with its current value.
    pub fn seal_precomputation(&mut self) {
        for line in &mut self.lines {
            line.v = true;
            line.l = false;
            line.m = false;
            line.first_read_value = None;
        }
    }

    /// RS: speculative read. The first read of an `Init` register records the
    /// consumed value for validation.
    pub fn read_sp(&mut self, reg: RegisterId) -> (i64, Option<RegEvent>) {
        let line = &mut self.lines[reg.index()];
        let from = line.state();
        if from == RegState::Init {
            line.l = true;
            line.first_read_value = Some(line.data);
            let ev = RegEvent { reg, from, to: line.state(), value: line.data };
            return (line.data, Some(ev));
        }
        (line.data, None)
    }

    /// WS: speculative write. Moves the line into one of the may-commit states.
    pub fn write_sp(&mut self, reg: RegisterId, value: i64) -> Option<RegEvent> {
        let line = &mut self.lines[reg.index()];
        let from = line.state();
        line.data = value;
        if line.m {
            return None;
        }
        line.m = true;
        line.v = true;
        Some(RegEvent { reg, from, to: line.state(), value })
    }

    /// Registers that were read before being written, with the value consumed.
    pub fn registers_needing_validation(&self) -> Vec<(RegisterId, i64)> {
        self.lines
            .iter()
            .filter(|l| l.v && l.l)
            .map(|l| (l.tag, l.first_read_value.expect("first read recorded when L is set")))
            .collect()
    }

    /// Commit-time transfer from the verified predecessor: every register the
    /// thread has not written takes the predecessor's final value.
    pub fn synchronize_from_parent(&mut self, parent_final: &RegisterValues) {
        for line in &mut self.lines {
            match line.state() {
                RegState::Init | RegState::Validate => line.data = parent_final[line.tag.index()],
                RegState::MCommit | RegState::VaandMC | RegState::Invalid => {}
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(i: usize) -> RegisterId {
        RegisterId::new(i).unwrap()
    }

    fn snapshot() -> RegisterValues {
        let mut v = [0; NUM_REGISTERS];
        for (i, x) in v.iter_mut().enumerate() {
            *x = 100 + i as i64;
        }
        v
    }

    #[test]
    fn pslice_access_is_direct() {
        let mut rf = RegFile::from_snapshot(&snapshot());
        rf.write_pre(r(3), 9);
        assert_eq!(rf.read_pre(r(3)), 9);
        assert_eq!(rf.read_pre(r(5)), 105);
        let before: Vec<_> = RegisterId::all().map(|x| rf.state(x)).collect();
        for i in 0..10 {
            if i % 2 == 0 {
                rf.write_pre(r(1), i);
            } else {
                rf.read_pre(r(1));
            }
        }
        let after: Vec<_> = RegisterId::all().map(|x| rf.state(x)).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn seal_sets_init_everywhere() {
        let mut rf = RegFile::from_snapshot(&snapshot());
        rf.write_pre(r(3), 9);
        rf.seal_precomputation();
        assert_eq!(rf.line(r(3)).data, 9);
        assert_eq!(rf.line(r(4)).data, 104);
        for reg in RegisterId::all() {
            let l = rf.line(reg);
            assert_eq!((l.v, l.l, l.m), (true, false, false));
            assert_eq!(rf.state(reg), RegState::Init);
        }
    }

    #[test]
    fn first_read_moves_init_to_validate() {
        let mut rf = RegFile::sealed(&snapshot());
        rf.write_pre(r(3), 9);
        let (v, ev) = rf.read_sp(r(3));
        assert_eq!(v, 9);
        assert_eq!(ev.unwrap().to, RegState::Validate);
        assert_eq!(rf.line(r(3)).first_read_value, Some(9));
        rf.write_pre(r(3), 10);
        let (_, ev) = rf.read_sp(r(3));
        assert!(ev.is_none());
        assert_eq!(rf.line(r(3)).first_read_value, Some(9));
    }

    #[test]
    fn read_of_written_register_needs_no_validation() {
        let mut rf = RegFile::sealed(&snapshot());
        rf.write_sp(r(4), 12);
        rf.read_sp(r(4));
        assert_eq!(rf.state(r(4)), RegState::MCommit);
        assert!(rf.registers_needing_validation().is_empty());
    }

    #[test]
    fn writes_reach_may_commit_states() {
        let mut rf = RegFile::sealed(&snapshot());
        assert_eq!(rf.write_sp(r(3), 1).unwrap().to, RegState::MCommit);
        assert_eq!(rf.line(r(3)).data, 1);
        assert!(rf.write_sp(r(3), 2).is_none());
        assert_eq!(rf.state(r(3)), RegState::MCommit);

        rf.read_sp(r(5));
        assert_eq!(rf.write_sp(r(5), 7).unwrap().to, RegState::VaandMC);
        assert_eq!(rf.line(r(5)).first_read_value, Some(105));
        rf.write_sp(r(5), 8);
        assert_eq!(rf.state(r(5)), RegState::VaandMC);
    }

    #[test]
    fn validation_list_matches_l_bits() {
        let mut rf = RegFile::sealed(&snapshot());
        assert!(rf.registers_needing_validation().is_empty());
        rf.write_pre(r(3), 9);
        rf.read_sp(r(3));
        rf.read_sp(r(6));
        rf.write_sp(r(6), 0);
        rf.write_sp(r(7), 0);
        assert_eq!(rf.registers_needing_validation(), vec![(r(3), 9), (r(6), 106)]);
        let l_count = RegisterId::all().filter(|&x| rf.line(x).l).count();
        assert_eq!(l_count, 2);
    }

    #[test]
    fn synchronize_fills_unwritten_registers() {
        let mut rf = RegFile::sealed(&snapshot());
        rf.write_sp(r(4), 12);
        rf.read_sp(r(6));
        let mut parent = [0; NUM_REGISTERS];
        parent[4] = 99;
        parent[5] = 77;
        parent[6] = 106;
        rf.synchronize_from_parent(&parent);
        assert_eq!(rf.line(r(5)).data, 77);
        assert_eq!(rf.line(r(4)).data, 12);
        assert_eq!(rf.line(r(6)).data, 106);
    }

    #[test]
    fn synchronize_is_noop_when_everything_written() {
        let mut rf = RegFile::sealed(&snapshot());
        for reg in RegisterId::all() {
            rf.write_sp(reg, -1);
        }
        let before = rf.clone();
        rf.synchronize_from_parent(&[5; NUM_REGISTERS]);
        assert_eq!(rf, before);
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn first_access_decides_validation(ops in proptest::collection::vec((0..NUM_REGISTERS, any::<bool>(), any::<i64>()), 0..80)) {
            let snap = snapshot();
            let mut rf = RegFile::sealed(&snap);
            let mut first: [Option<bool>; NUM_REGISTERS] = [None; NUM_REGISTERS];
            for (i, is_read, v) in ops {
                let before = *rf.line(r(i));
                if is_read {
                    rf.read_sp(r(i));
                } else {
                    rf.write_sp(r(i), v);
                }
                first[i].get_or_insert(is_read);
                let after = rf.line(r(i));
                prop_assert!(after.l >= before.l && after.m >= before.m && after.v);
            }
            let expected: Vec<(RegisterId, i64)> =
                (0..NUM_REGISTERS).filter(|&i| first[i] == Some(true)).map(|i| (r(i), snap[i])).collect();
            prop_assert_eq!(rf.registers_needing_validation(), expected);
            for i in 0..NUM_REGISTERS {
                let want = match first[i] {
                    None => RegState::Init,
                    Some(true) if rf.line(r(i)).m => RegState::VaandMC,
                    Some(true) => RegState::Validate,
                    Some(false) => RegState::MCommit,
                };
                prop_assert_eq!(rf.state(r(i)), want);
            }
        }
    }
}
