//! Per-thread multi-version L1 data cache.
//!
//! Lines are one word wide and keyed by `(address, version)`. Version 0 holds
//! data produced or loaded while the owner runs its p-slice; every other
//! version is the owner's thread version at the time of the access. Within
//! one address, at most one line has the old bit clear: that line is the
//! newest version.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// A word address in main memory.
pub type Addr = u64;

/// A thread version. `PRECOMPUTE_VERSION` tags p-slice data.
pub type Version = u64;

pub const PRECOMPUTE_VERSION: Version = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MemLineState {
    Invalid,
    PreSh,
    PreEx,
    PreExO,
    SpSh,
    SpShM,
    SpShO,
    SpEx,
    SpExO,
}

impl MemLineState {
    pub const ALL: [MemLineState; 9] = [
        MemLineState::Invalid,
        MemLineState::PreSh,
        MemLineState::PreEx,
        MemLineState::PreExO,
        MemLineState::SpSh,
        MemLineState::SpShM,
        MemLineState::SpShO,
        MemLineState::SpEx,
        MemLineState::SpExO,
    ];

    /// True for the states a line takes while its owner is pre-computing.
    pub fn is_precompute(self) -> bool {
        matches!(self, MemLineState::PreSh | MemLineState::PreEx | MemLineState::PreExO)
    }

    /// The `(V, RL, M, O)` bits of the encoding table. `Invalid` only fixes V.
    pub fn bits(self) -> LineBits {
        let (v, rl, m, o) = match self {
            MemLineState::Invalid => (false, false, false, false),
            MemLineState::PreSh => (true, true, false, true),
            MemLineState::PreEx => (true, false, true, false),
            MemLineState::PreExO => (true, false, true, true),
            MemLineState::SpSh => (true, true, false, false),
            MemLineState::SpShM => (true, true, true, false),
            MemLineState::SpShO => (true, true, true, true),
            MemLineState::SpEx => (true, false, true, false),
            MemLineState::SpExO => (true, false, true, true),
        };
        LineBits { v, rl, m, o }
    }

    /// The aged form written when a newer version supersedes this line.
    fn aged(self) -> MemLineState {
        match self {
            MemLineState::PreEx => MemLineState::PreExO,
            MemLineState::SpEx => MemLineState::SpExO,
            MemLineState::SpSh | MemLineState::SpShM => MemLineState::SpShO,
            other => other,
        }
    }
}

impl fmt::Display for MemLineState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Status bits of a line, excluding the version field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LineBits {
    pub v: bool,
    pub rl: bool,
    pub m: bool,
    pub o: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("unencodable line bits V={} RL={} M={} Ver={ver} O={}", u8::from(bits.v), u8::from(bits.rl), u8::from(bits.m), u8::from(bits.o))]
pub struct UnencodableState {
    pub bits: LineBits,
    pub ver: Version,
}

/// Maps a bit pattern plus version to its line state.
///
/// PreSh is printed with O=1; the O bit is accepted as don't-care for it.
pub fn encode_state(bits: LineBits, ver: Version) -> Result<MemLineState, UnencodableState> {
    use MemLineState::*;
    if !bits.v {
        return Ok(Invalid);
    }
    let pre = ver == PRECOMPUTE_VERSION;
    let state = match (bits.rl, bits.m, bits.o, pre) {
        (true, false, _, true) => PreSh,
        (false, true, false, true) => PreEx,
        (false, true, true, true) => PreExO,
        (true, false, false, false) => SpSh,
        (true, true, false, false) => SpShM,
        (true, true, true, false) => SpShO,
        (false, true, false, false) => SpEx,
        (false, true, true, false) => SpExO,
        _ => return Err(UnencodableState { bits, ver }),
    };
    Ok(state)
}

/// One versioned word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemCacheLine {
    pub v: bool,
    pub rl: bool,
    pub m: bool,
    pub ver: Version,
    pub o: bool,
    pub tag: Addr,
    pub data: i64,
}

impl MemCacheLine {
    pub fn with_state(state: MemLineState, tag: Addr, ver: Version, data: i64) -> MemCacheLine {
        let LineBits { v, rl, m, o } = state.bits();
        MemCacheLine { v, rl, m, ver, o, tag, data }
    }

    pub fn bits(&self) -> LineBits {
        LineBits { v: self.v, rl: self.rl, m: self.m, o: self.o }
    }

    pub fn state(&self) -> Result<MemLineState, UnencodableState> {
        encode_state(self.bits(), self.ver)
    }

    fn set_state(&mut self, state: MemLineState) {
        let LineBits { v, rl, m, o } = state.bits();
        self.v = v;
        self.rl = rl;
        self.m = m;
        self.o = o;
    }

    fn state_unchecked(&self) -> MemLineState {
        self.state().expect("cache lines are only built from encodable states")
    }
}

/// Result of a local access, for tracing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineEvent {
    pub addr: Addr,
    pub ver: Version,
    pub state: MemLineState,
    pub value: i64,
}

/// The multi-version L1 data cache of one thread.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct L1MemCache {
    lines: BTreeMap<(Addr, Version), MemCacheLine>,
}

impl L1MemCache {
    pub fn new() -> L1MemCache {
        L1MemCache::default()
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn lines(&self) -> impl Iterator<Item = &MemCacheLine> {
        self.lines.values()
    }

    pub fn line(&self, addr: Addr, ver: Version) -> Option<&MemCacheLine> {
        self.lines.get(&(addr, ver))
    }

    pub fn lines_for(&self, addr: Addr) -> impl DoubleEndedIterator<Item = &MemCacheLine> {
        self.lines.range((addr, Version::MIN)..=(addr, Version::MAX)).map(|(_, l)| l)
    }

    /// The current (non-old) version of `addr`.
    pub fn newest_version(&self, addr: Addr) -> Option<&MemCacheLine> {
        self.lines_for(addr).rev().find(|l| !l.o)
    }

    /// Newest modified line with `ver <= limit`, used to answer p-slice reads.
    pub fn newest_modified_at_or_below(&self, addr: Addr, limit: Version) -> Option<&MemCacheLine> {
        self.lines_for(addr).rev().find(|l| l.m && l.ver <= limit)
    }

    /// Newest version if it holds data this thread produced.
    pub fn newest_modified(&self, addr: Addr) -> Option<&MemCacheLine> {
        self.newest_version(addr).filter(|l| l.m)
    }

    /// LPrW: p-slice write. Never produces bus traffic.
    pub fn local_write_pre(&mut self, addr: Addr, value: i64) -> LineEvent {
        let line = MemCacheLine::with_state(MemLineState::PreEx, addr, PRECOMPUTE_VERSION, value);
        self.lines.insert((addr, PRECOMPUTE_VERSION), line);
        LineEvent { addr, ver: PRECOMPUTE_VERSION, state: MemLineState::PreEx, value }
    }

    /// LPrR local part: the version-0 line, if present.
    pub fn lookup_pre(&self, addr: Addr) -> Option<i64> {
        self.line(addr, PRECOMPUTE_VERSION).map(|l| l.data)
    }

    /// Installs a value fetched by an RPrR as PreSh.
    pub fn install_pre(&mut self, addr: Addr, value: i64) -> LineEvent {
        let line = MemCacheLine::with_state(MemLineState::PreSh, addr, PRECOMPUTE_VERSION, value);
        self.lines.insert((addr, PRECOMPUTE_VERSION), line);
        LineEvent { addr, ver: PRECOMPUTE_VERSION, state: MemLineState::PreSh, value }
    }

    /// LSpR local part: the newest version's value on a hit.
    pub fn lookup_sp(&self, addr: Addr) -> Option<i64> {
        self.newest_version(addr).map(|l| l.data)
    }

    /// Installs a value fetched by an RSpR as SpSh at the owner's version.
    pub fn install_sp(&mut self, addr: Addr, version: Version, value: i64) -> LineEvent {
        debug_assert!(version > PRECOMPUTE_VERSION);
        debug_assert!(self.newest_version(addr).is_none());
        let line = MemCacheLine::with_state(MemLineState::SpSh, addr, version, value);
        self.lines.insert((addr, version), line);
        LineEvent { addr, ver: version, state: MemLineState::SpSh, value }
    }

    /// LSpW: speculative (or stable) write at the owner's version.
    ///
    /// Writes at the newest line's own version update it in place; otherwise
    /// the newest line is aged and a fresh line is created, keeping the
    /// remote-loaded bit so a prior read stays visible to violation checks.
    pub fn local_write_sp(&mut self, addr: Addr, version: Version, value: i64) -> LineEvent {
        debug_assert!(version > PRECOMPUTE_VERSION);
        let newest = self.newest_version(addr).map(|l| (l.ver, l.rl));
        let state = match newest {
            Some((ver, rl)) if ver == version => {
                let line = self.lines.get_mut(&(addr, ver)).expect("newest line exists");
                let state = if rl { MemLineState::SpShM } else { MemLineState::SpEx };
                line.set_state(state);
                line.data = value;
                state
            }
            Some((ver, rl)) => {
                let old = self.lines.get_mut(&(addr, ver)).expect("newest line exists");
                let aged = old.state_unchecked().aged();
                old.set_state(aged);
                // Lines read in pre-computation do not make this write a
                // remote-loaded one.
                let rl = rl && ver != PRECOMPUTE_VERSION;
                let state = if rl { MemLineState::SpShM } else { MemLineState::SpEx };
                self.lines.insert((addr, version), MemCacheLine::with_state(state, addr, version, value));
                state
            }
            None => {
                self.lines
                    .insert((addr, version), MemCacheLine::with_state(MemLineState::SpEx, addr, version, value));
                MemLineState::SpEx
            }
        };
        LineEvent { addr, ver: version, state, value }
    }

    /// True if a speculative read of `addr` consumed a predecessor's value.
    pub fn has_speculative_remote_read(&self, addr: Addr) -> bool {
        self.lines_for(addr).any(|l| l.rl && l.ver > PRECOMPUTE_VERSION)
    }

    /// `(addr, value)` for every word the p-slice wrote: PreEx and PreExO lines.
    pub fn lines_needing_verification(&self) -> Vec<(Addr, i64)> {
        self.lines
            .values()
            .filter(|l| l.ver == PRECOMPUTE_VERSION && l.m)
            .map(|l| (l.tag, l.data))
            .collect()
    }

    /// Newest modified `(addr, value)` per address: what commit publishes.
    pub fn dirty_words(&self) -> Vec<(Addr, i64)> {
        let mut out: Vec<(Addr, i64)> = Vec::new();
        for line in self.lines.values() {
            if !line.o && line.m {
                out.push((line.tag, line.data));
            }
        }
        out
    }

    /// Writes the newest modified version of every address to `memory` and
    /// empties the cache. Returns the number of words written.
    pub fn commit_lines(&mut self, memory: &mut [i64]) -> usize {
        let dirty = self.dirty_words();
        for &(addr, value) in &dirty {
            memory[addr as usize] = value;
        }
        self.lines.clear();
        dirty.len()
    }

    pub fn invalidate_all(&mut self) {
        self.lines.clear();
    }

    /// Checks the per-address invariants; returns a description of the first
    /// violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut current: BTreeMap<Addr, usize> = BTreeMap::new();
        for (&(addr, ver), line) in &self.lines {
            if line.tag != addr || line.ver != ver {
                return Err(format!("line key ({addr},{ver}) disagrees with its tag/version"));
            }
            line.state().map_err(|e| e.to_string())?;
            if !line.o {
                *current.entry(addr).or_default() += 1;
            }
        }
        match current.iter().find(|(_, &n)| n > 1) {
            Some((addr, n)) => Err(format!("address {addr} has {n} current versions")),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use MemLineState::*;

    fn bits(v: u8, rl: u8, m: u8, o: u8) -> LineBits {
        LineBits { v: v == 1, rl: rl == 1, m: m == 1, o: o == 1 }
    }

    #[test]
    fn encodes_printed_rows() {
        assert_eq!(encode_state(bits(1, 0, 1, 0), 3), Ok(SpEx));
        assert_eq!(encode_state(bits(1, 1, 0, 0), 3), Ok(SpSh));
        for rl in 0..2 {
            for m in 0..2 {
                for o in 0..2 {
                    assert_eq!(encode_state(bits(0, rl, m, o), 7), Ok(Invalid));
                }
            }
        }
    }

    #[test]
    fn rejects_unencodable_bits() {
        assert!(encode_state(bits(1, 0, 0, 0), 2).is_err());
        assert!(encode_state(bits(1, 1, 1, 0), 0).is_err());
        assert!(encode_state(bits(1, 1, 0, 1), 4).is_err());
    }

    #[test]
    fn first_pslice_write_is_preex_and_overwrites_in_place() {
        let mut c = L1MemCache::new();
        assert_eq!(c.local_write_pre(100, 1).state, PreEx);
        c.local_write_pre(100, 2);
        assert_eq!(c.len(), 1);
        let line = c.line(100, 0).unwrap();
        assert_eq!((line.state().unwrap(), line.data), (PreEx, 2));
    }

    #[test]
    fn speculative_write_over_pslice_line_ages_it() {
        let mut c = L1MemCache::new();
        c.local_write_pre(7, 1);
        let ev = c.local_write_sp(7, 2, 9);
        assert_eq!((ev.state, ev.ver), (SpEx, 2));
        assert_eq!(c.line(7, 0).unwrap().state().unwrap(), PreExO);
        assert_eq!(c.newest_version(7).unwrap().ver, 2);
        c.check_invariants().unwrap();
    }

    #[test]
    fn overwrite_of_shared_line_sets_modified() {
        let mut c = L1MemCache::new();
        c.install_sp(5, 1, 10);
        let ev = c.local_write_sp(5, 1, 11);
        assert_eq!(ev.state, SpShM);
        let line = c.newest_version(5).unwrap();
        assert!(line.m && line.rl);
    }

    #[test]
    fn newer_version_over_shared_keeps_remote_loaded() {
        let mut c = L1MemCache::new();
        c.install_sp(5, 1, 10);
        let ev = c.local_write_sp(5, 2, 11);
        assert_eq!(ev.state, SpShM);
        assert_eq!(c.line(5, 1).unwrap().state().unwrap(), SpShO);
        c.local_write_sp(5, 3, 12);
        assert_eq!(c.line(5, 2).unwrap().state().unwrap(), SpShO);
        c.check_invariants().unwrap();
        assert!(c.has_speculative_remote_read(5));
    }

    #[test]
    fn newest_version_picks_current_line() {
        let mut c = L1MemCache::new();
        assert!(c.newest_version(1).is_none());
        c.local_write_pre(1, 4);
        c.local_write_sp(1, 3, 5);
        assert_eq!(c.newest_version(1).unwrap().ver, 3);
    }

    #[test]
    fn pslice_reads_never_satisfy_speculative_reads() {
        let mut c = L1MemCache::new();
        c.install_pre(9, 1);
        assert_eq!(c.lookup_pre(9), Some(1));
        assert_eq!(c.lookup_sp(9), None);
        assert!(!c.has_speculative_remote_read(9));
    }

    #[test]
    fn commit_publishes_newest_modified() {
        let mut c = L1MemCache::new();
        c.local_write_pre(7, 1);
        c.local_write_sp(7, 2, 99);
        c.install_sp(8, 2, 5);
        let mut mem = vec![0; 16];
        assert_eq!(c.commit_lines(&mut mem), 1);
        assert_eq!(mem[7], 99);
        assert_eq!(mem[8], 0);
        assert!(c.is_empty());
    }

    #[test]
    fn clean_cache_commits_nothing() {
        let mut c = L1MemCache::new();
        c.install_sp(1, 1, 3);
        c.install_pre(2, 3);
        let mut mem = vec![0; 4];
        assert_eq!(c.commit_lines(&mut mem), 0);
    }

    #[test]
    fn invalidate_is_idempotent() {
        let mut c = L1MemCache::new();
        for a in 0..5 {
            c.local_write_sp(a, 1, a as i64);
        }
        assert_eq!(c.len(), 5);
        c.invalidate_all();
        assert_eq!(c.len(), 0);
        c.invalidate_all();
        assert_eq!(c.len(), 0);
        assert_eq!(c.lookup_sp(3), None);
    }

    #[test]
    fn verification_lists_pslice_values() {
        let mut c = L1MemCache::new();
        assert!(c.lines_needing_verification().is_empty());
        c.local_write_pre(100, 42);
        assert_eq!(c.lines_needing_verification(), vec![(100, 42)]);
        c.local_write_sp(100, 1, 50);
        assert_eq!(c.line(100, 0).unwrap().state().unwrap(), PreExO);
        assert_eq!(c.lines_needing_verification(), vec![(100, 42)]);
        c.install_pre(101, 3);
        assert_eq!(c.lines_needing_verification(), vec![(100, 42)]);
    }

    use proptest::prelude::*;

    #[derive(Debug, Clone)]
    enum CacheOp {
        PreWrite(Addr, i64),
        PreRead(Addr, i64),
        Spawned,
        SpWrite(Addr, i64),
        SpRead(Addr, i64),
    }

    fn cache_op() -> impl Strategy<Value = CacheOp> {
        let addr = 0..4u64;
        prop_oneof![
            (addr.clone(), any::<i64>()).prop_map(|(a, v)| CacheOp::PreWrite(a, v)),
            (addr.clone(), any::<i64>()).prop_map(|(a, v)| CacheOp::PreRead(a, v)),
            Just(CacheOp::Spawned),
            (addr.clone(), any::<i64>()).prop_map(|(a, v)| CacheOp::SpWrite(a, v)),
            (addr, any::<i64>()).prop_map(|(a, v)| CacheOp::SpRead(a, v)),
        ]
    }

    proptest! {
        #[test]
        fn random_traffic_keeps_one_current_version(ops in proptest::collection::vec(cache_op(), 0..60)) {
            let mut cache = L1MemCache::new();
            let mut version = 1;
            let mut pre_phase = true;
            // addr -> (value, modified) of the newest version
            let mut model: BTreeMap<Addr, (i64, bool)> = BTreeMap::new();
            let mut pre_writes: BTreeMap<Addr, i64> = BTreeMap::new();
            for op in ops {
                match op {
                    CacheOp::PreWrite(a, v) if pre_phase => {
                        cache.local_write_pre(a, v);
                        model.insert(a, (v, true));
                        pre_writes.insert(a, v);
                    }
                    CacheOp::PreRead(a, v) if pre_phase => {
                        // PreSh lines carry O=1 and stay invisible to speculation.
                        if cache.lookup_pre(a).is_none() {
                            cache.install_pre(a, v);
                        }
                    }
                    CacheOp::Spawned => {
                        pre_phase = false;
                        version += 1;
                    }
                    CacheOp::SpWrite(a, v) if !pre_phase => {
                        cache.local_write_sp(a, version, v);
                        model.insert(a, (v, true));
                    }
                    CacheOp::SpRead(a, v) if !pre_phase => {
                        if cache.lookup_sp(a).is_none() {
                            cache.install_sp(a, version, v);
                            model.insert(a, (v, false));
                        }
                    }
                    _ => {}
                }
                prop_assert_eq!(cache.check_invariants(), Ok(()));
                for a in 0..4 {
                    prop_assert_eq!(cache.lookup_sp(a), model.get(&a).map(|&(v, _)| v));
                }
            }
            let mut verify: Vec<(Addr, i64)> = pre_writes.into_iter().collect();
            let mut listed = cache.lines_needing_verification();
            listed.sort();
            verify.sort();
            prop_assert_eq!(listed, verify);
            let mut memory = vec![0; 4];
            let expected_words = model.values().filter(|(_, m)| *m).count();
            prop_assert_eq!(cache.commit_lines(&mut memory), expected_words);
            for (&a, &(v, m)) in &model {
                prop_assert_eq!(memory[a as usize], if m { v } else { 0 });
            }
            prop_assert!(cache.is_empty());
        }
    }
}
