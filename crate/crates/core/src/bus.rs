//! The single snooping bus connecting the per-thread L1 caches.
//!
//! The bus is an instantaneous broadcast. Remote reads are answered by the
//! nearest visible predecessor holding data it produced; VioTest messages
//! are checked by every more speculative thread.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::memcache::{Addr, L1MemCache, Version};
use crate::thread::{ThreadId, ThreadState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    LPrR,
    RPrR,
    LPrW,
    LSpR,
    LSpW,
    RSpR,
    VioTest,
}

impl MessageKind {
    pub const ALL: [MessageKind; 7] = [
        MessageKind::LPrR,
        MessageKind::RPrR,
        MessageKind::LPrW,
        MessageKind::LSpR,
        MessageKind::LSpW,
        MessageKind::RSpR,
        MessageKind::VioTest,
    ];

    /// Local kinds are serviced by the sender's own cache.
    pub fn is_local(self) -> bool {
        matches!(self, MessageKind::LPrR | MessageKind::LPrW | MessageKind::LSpR | MessageKind::LSpW)
    }

    /// `(speculative level, value, thread version)` presence.
    fn parameters(self) -> (bool, bool, bool) {
        match self {
            MessageKind::LPrR | MessageKind::LSpR => (false, false, false),
            MessageKind::LPrW | MessageKind::LSpW => (false, true, false),
            MessageKind::RPrR => (true, false, true),
            MessageKind::RSpR | MessageKind::VioTest => (true, false, false),
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusMessage {
    pub kind: MessageKind,
    pub sender: ThreadId,
    pub speculative_level: Option<usize>,
    pub addr: Addr,
    pub value: Option<i64>,
    pub thread_version: Option<Version>,
}

impl BusMessage {
    fn new(kind: MessageKind, sender: ThreadId, addr: Addr) -> BusMessage {
        BusMessage { kind, sender, speculative_level: None, addr, value: None, thread_version: None }
    }

    pub fn lprr(sender: ThreadId, addr: Addr) -> BusMessage {
        BusMessage::new(MessageKind::LPrR, sender, addr)
    }

    pub fn lspr(sender: ThreadId, addr: Addr) -> BusMessage {
        BusMessage::new(MessageKind::LSpR, sender, addr)
    }

    pub fn lprw(sender: ThreadId, addr: Addr, value: i64) -> BusMessage {
        BusMessage { value: Some(value), ..BusMessage::new(MessageKind::LPrW, sender, addr) }
    }

    pub fn lspw(sender: ThreadId, addr: Addr, value: i64) -> BusMessage {
        BusMessage { value: Some(value), ..BusMessage::new(MessageKind::LSpW, sender, addr) }
    }

    pub fn rprr(sender: ThreadId, level: usize, addr: Addr, version: Version) -> BusMessage {
        BusMessage {
            speculative_level: Some(level),
            thread_version: Some(version),
            ..BusMessage::new(MessageKind::RPrR, sender, addr)
        }
    }

    pub fn rspr(sender: ThreadId, level: usize, addr: Addr) -> BusMessage {
        BusMessage { speculative_level: Some(level), ..BusMessage::new(MessageKind::RSpR, sender, addr) }
    }

    pub fn viotest(sender: ThreadId, level: usize, addr: Addr) -> BusMessage {
        BusMessage { speculative_level: Some(level), ..BusMessage::new(MessageKind::VioTest, sender, addr) }
    }

    /// Parameter presence matches the message table for this kind.
    pub fn is_well_formed(&self) -> bool {
        let (level, value, version) = self.kind.parameters();
        self.speculative_level.is_some() == level
            && self.value.is_some() == value
            && self.thread_version.is_some() == version
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("malformed {0:?} message")]
pub struct MalformedMessage(pub BusMessage);

/// What a live thread exposes to the bus.
#[derive(Debug, Clone, Copy)]
pub struct Snooper<'a> {
    pub tid: ThreadId,
    pub level: usize,
    pub state: ThreadState,
    /// The sender's parent (for RPrR visibility and version filtering).
    pub is_sender_parent: bool,
    pub cache: &'a L1MemCache,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnoopResponse {
    Data { responder: ThreadId, ver: Version, value: i64 },
    Violation { receiver: ThreadId },
}

/// RAW check for one receiver: did it consume `addr` from a predecessor
/// during speculation? Pre-computation loads are left to verification.
pub fn check_violation(receiver: &L1MemCache, addr: Addr) -> bool {
    receiver.has_speculative_remote_read(addr)
}

#[derive(Debug, Clone, Default)]
pub struct Bus {
    counts: BTreeMap<MessageKind, u64>,
}

impl Bus {
    pub fn new() -> Bus {
        Bus::default()
    }

    pub fn count(&self, kind: MessageKind) -> u64 {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    /// Delivers `msg` to `snoopers` (every live thread except the sender) and
    /// collects responses, nearest responder first for reads and in ISL order
    /// for VioTest.
    pub fn broadcast(
        &mut self,
        msg: &BusMessage,
        snoopers: &[Snooper<'_>],
    ) -> Result<Vec<SnoopResponse>, MalformedMessage> {
        if !msg.is_well_formed() {
            return Err(MalformedMessage(*msg));
        }
        *self.counts.entry(msg.kind).or_default() += 1;
        let level = msg.speculative_level.unwrap_or(0);

        let mut by_level: Vec<&Snooper<'_>> = snoopers.iter().filter(|s| s.tid != msg.sender).collect();
        by_level.sort_by_key(|s| s.level);

        let responses = match msg.kind {
            k if k.is_local() => Vec::new(),
            MessageKind::RSpR => by_level
                .iter()
                .rev()
                .filter(|s| s.level < level)
                .filter(|s| !matches!(s.state, ThreadState::Initialization | ThreadState::PreCompute))
                .filter_map(|s| {
                    s.cache.newest_modified(msg.addr).map(|l| SnoopResponse::Data {
                        responder: s.tid,
                        ver: l.ver,
                        value: l.data,
                    })
                })
                .collect(),
            MessageKind::RPrR => {
                let version = msg.thread_version.expect("checked by is_well_formed");
                match by_level.iter().find(|s| s.is_sender_parent) {
                    None => Vec::new(),
                    Some(parent) => by_level
                        .iter()
                        .rev()
                        .filter(|s| s.level <= parent.level)
                        .filter_map(|s| {
                            let line = if s.is_sender_parent {
                                s.cache.newest_modified_at_or_below(msg.addr, version)
                            } else {
                                s.cache.newest_modified(msg.addr)
                            };
                            line.map(|l| SnoopResponse::Data { responder: s.tid, ver: l.ver, value: l.data })
                        })
                        .collect(),
                }
            }
            MessageKind::VioTest => by_level
                .iter()
                .filter(|s| s.level > level)
                .filter(|s| check_violation(s.cache, msg.addr))
                .map(|s| SnoopResponse::Violation { receiver: s.tid })
                .collect(),
            _ => unreachable!("all kinds handled"),
        };
        Ok(responses)
    }
}
