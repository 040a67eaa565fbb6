//! Party identities, wire framing and the channels between parties.
//!
//! Frame layout (all integers little-endian):
//!
//! ```text
//! "SCOL" | version u8 | msg_type u8 | session_id u64 | sender u8 | receiver u8
//!        | phase_tag u8 | sequence u64 | payload_len u32 | payload
//! ```
//!
//! Traffic is accounted in payload bytes, per phase tag.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, Sender, SyncSender};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use crate::error::{MpcError, Result};

pub const MAGIC: [u8; 4] = *b"SCOL";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 29;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartyId(pub u8);

impl PartyId {
    pub const DEALER: PartyId = PartyId(0xFF);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Debug for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == PartyId::DEALER {
            write!(f, "Dealer")
        } else {
            write!(f, "P{}", self.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Phase {
    LocalTrain = 0,
    SecureTrain = 1,
    Open = 2,
    Randomness = 3,
    Control = 4,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::LocalTrain,
        Phase::SecureTrain,
        Phase::Open,
        Phase::Randomness,
        Phase::Control,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::LocalTrain => "LOCAL_TRAIN",
            Phase::SecureTrain => "SECURE_TRAIN",
            Phase::Open => "OPEN",
            Phase::Randomness => "RANDOMNESS",
            Phase::Control => "CONTROL",
        }
    }

    fn from_u8(v: u8) -> Result<Phase> {
        Phase::ALL
            .into_iter()
            .find(|p| *p as u8 == v)
            .ok_or_else(|| MpcError::format(format!("unknown phase tag {v}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    /// Arithmetic share block for a joint opening.
    Open = 1,
    /// XOR share block for a joint opening.
    OpenXor = 2,
    /// Input shares sent by a data owner.
    Input = 3,
    /// Shares sent to the single party learning an output.
    Reveal = 4,
    Randomness = 5,
    Control = 6,
}

impl MsgType {
    fn from_u8(v: u8) -> Result<MsgType> {
        use MsgType::*;
        [Open, OpenXor, Input, Reveal, Randomness, Control]
            .into_iter()
            .find(|m| *m as u8 == v)
            .ok_or_else(|| MpcError::format(format!("unknown message type {v}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub session_id: u64,
    pub msg_type: MsgType,
    pub sender: PartyId,
    pub receiver: PartyId,
    pub phase: Phase,
    pub sequence: u64,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.session_id.to_le_bytes());
        out.push(self.sender.0);
        out.push(self.receiver.0);
        out.push(self.phase as u8);
        out.extend_from_slice(&self.sequence.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(frame: &[u8]) -> Result<Message> {
        if frame.len() < HEADER_LEN {
            return Err(MpcError::format(format!("frame of {} bytes has no header", frame.len())));
        }
        if frame[..4] != MAGIC {
            return Err(MpcError::format("bad frame magic"));
        }
        if frame[4] != VERSION {
            return Err(MpcError::format(format!("unsupported frame version {}", frame[4])));
        }
        let u64_at = |i: usize| u64::from_le_bytes(frame[i..i + 8].try_into().unwrap());
        let payload_len = u32::from_le_bytes(frame[25..29].try_into().unwrap()) as usize;
        if frame.len() != HEADER_LEN + payload_len {
            return Err(MpcError::format(format!(
                "payload length {payload_len} disagrees with frame of {} bytes",
                frame.len()
            )));
        }
        Ok(Message {
            msg_type: MsgType::from_u8(frame[5])?,
            session_id: u64_at(6),
            sender: PartyId(frame[14]),
            receiver: PartyId(frame[15]),
            phase: Phase::from_u8(frame[16])?,
            sequence: u64_at(17),
            payload: frame[HEADER_LEN..].to_vec(),
        })
    }
}

/// A bidirectional, in-order, loss-free frame pipe to one peer.
pub trait Link: Send {
    fn send(&mut self, frame: Vec<u8>) -> Result<()>;
    fn recv(&mut self) -> Result<Vec<u8>>;
}

enum FrameSender {
    Unbounded(Sender<Vec<u8>>),
    Bounded(SyncSender<Vec<u8>>),
}

pub struct InProcLink {
    tx: FrameSender,
    rx: Receiver<Vec<u8>>,
}

impl Link for InProcLink {
    fn send(&mut self, frame: Vec<u8>) -> Result<()> {
        let sent = match &self.tx {
            FrameSender::Unbounded(tx) => tx.send(frame).is_ok(),
            FrameSender::Bounded(tx) => tx.send(frame).is_ok(),
        };
        if sent {
            Ok(())
        } else {
            Err(MpcError::Transport("peer hung up".into()))
        }
    }

    fn recv(&mut self) -> Result<Vec<u8>> {
        self.rx
            .recv()
            .map_err(|_| MpcError::Transport("channel closed".into()))
    }
}

/// Two connected in-process links. `bound` limits frames in flight from `a` to `b`.
pub fn link_pair(bound: Option<usize>) -> (InProcLink, InProcLink) {
    let (tx_ab, rx_ab) = match bound {
        Some(n) => {
            let (tx, rx) = mpsc::sync_channel(n);
            (FrameSender::Bounded(tx), rx)
        }
        None => {
            let (tx, rx) = mpsc::channel();
            (FrameSender::Unbounded(tx), rx)
        }
    };
    let (tx_ba, rx_ba) = mpsc::channel();
    (
        InProcLink { tx: tx_ab, rx: rx_ba },
        InProcLink {
            tx: FrameSender::Unbounded(tx_ba),
            rx: rx_ab,
        },
    )
}

/// The same framing over a TCP stream.
pub struct TcpLink {
    stream: TcpStream,
}

impl TcpLink {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(TcpLink { stream })
    }
}

impl Link for TcpLink {
    fn send(&mut self, frame: Vec<u8>) -> Result<()> {
        self.stream.write_all(&frame)?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Vec<u8>> {
        let mut frame = vec![0u8; HEADER_LEN];
        self.stream.read_exact(&mut frame)?;
        let payload_len = u32::from_le_bytes(frame[25..29].try_into().unwrap()) as usize;
        frame.resize(HEADER_LEN + payload_len, 0);
        self.stream.read_exact(&mut frame[HEADER_LEN..])?;
        Ok(frame)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PhaseStats {
    pub bytes_out: u64,
    pub bytes_in: u64,
    pub messages_out: u64,
    pub messages_in: u64,
    pub rounds: u64,
    pub elapsed: Duration,
}

/// Per-phase traffic counters. Rounds count open barriers, not messages.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrafficStats {
    phases: BTreeMap<Phase, PhaseStats>,
}

impl TrafficStats {
    pub fn phase(&self, phase: Phase) -> PhaseStats {
        self.phases.get(&phase).copied().unwrap_or_default()
    }

    pub fn phase_mut(&mut self, phase: Phase) -> &mut PhaseStats {
        self.phases.entry(phase).or_default()
    }

    pub fn total_bytes_out(&self) -> u64 {
        self.phases.values().map(|p| p.bytes_out).sum()
    }

    pub fn total_bytes_in(&self) -> u64 {
        self.phases.values().map(|p| p.bytes_in).sum()
    }

    pub fn total_rounds(&self) -> u64 {
        self.phases.values().map(|p| p.rounds).sum()
    }

    pub fn merge(&mut self, other: &TrafficStats) {
        for (phase, s) in &other.phases {
            let e = self.phase_mut(*phase);
            e.bytes_out += s.bytes_out;
            e.bytes_in += s.bytes_in;
            e.messages_out += s.messages_out;
            e.messages_in += s.messages_in;
            e.rounds += s.rounds;
            e.elapsed += s.elapsed;
        }
    }

    /// Ignores wall-clock time; used for determinism comparisons.
    pub fn same_counts(&self, other: &TrafficStats) -> bool {
        let strip = |s: &TrafficStats| {
            s.phases
                .iter()
                .map(|(p, v)| (*p, PhaseStats { elapsed: Duration::ZERO, ..*v }))
                .collect::<Vec<_>>()
        };
        strip(self) == strip(other)
    }

    /// One record per phase: `phase,bytes_out,bytes_in,rounds,millis`.
    pub fn to_report(&self) -> String {
        let mut out = String::from("phase,bytes_out,bytes_in,rounds,millis\n");
        for (phase, s) in &self.phases {
            out.push_str(&format!(
                "{},{},{},{},{:.3}\n",
                phase.name(),
                s.bytes_out,
                s.bytes_in,
                s.rounds,
                s.elapsed.as_secs_f64() * 1e3
            ));
        }
        out
    }
}

/// One party's view of the network: links to each peer plus accounting.
pub struct Endpoint {
    me: PartyId,
    session_id: u64,
    links: BTreeMap<PartyId, Box<dyn Link>>,
    next_out: BTreeMap<PartyId, u64>,
    next_in: BTreeMap<PartyId, u64>,
    stats: TrafficStats,
    phase: Phase,
    phase_started: Instant,
    transcript: Sha256,
    capture: Option<Vec<Message>>,
}

impl Endpoint {
    pub fn new(me: PartyId, session_id: u64) -> Self {
        Endpoint {
            me,
            session_id,
            links: BTreeMap::new(),
            next_out: BTreeMap::new(),
            next_in: BTreeMap::new(),
            stats: TrafficStats::default(),
            phase: Phase::Control,
            phase_started: Instant::now(),
            transcript: Sha256::new(),
            capture: None,
        }
    }

    pub fn connect(&mut self, peer: PartyId, link: Box<dyn Link>) {
        self.links.insert(peer, link);
    }

    pub fn me(&self) -> PartyId {
        self.me
    }

    pub fn peers(&self) -> impl Iterator<Item = PartyId> + '_ {
        self.links.keys().copied().filter(|p| *p != PartyId::DEALER)
    }

    /// Keeps a copy of every received message, for transcript inspection.
    pub fn capture_received(&mut self) {
        self.capture.get_or_insert_with(Vec::new);
    }

    pub fn captured(&self) -> &[Message] {
        self.capture.as_deref().unwrap_or(&[])
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn set_phase(&mut self, phase: Phase) {
        let now = Instant::now();
        self.stats.phase_mut(self.phase).elapsed += now - self.phase_started;
        self.phase = phase;
        self.phase_started = now;
    }

    pub fn count_round(&mut self) {
        self.stats.phase_mut(self.phase).rounds += 1;
    }

    pub fn stats(&mut self) -> TrafficStats {
        let phase = self.phase;
        self.set_phase(phase);
        self.stats.clone()
    }

    /// Digest over every frame sent and received, in local order.
    pub fn transcript_digest(&self) -> [u8; 32] {
        self.transcript.clone().finalize().into()
    }

    pub fn send(&mut self, to: PartyId, msg_type: MsgType, payload: Vec<u8>) -> Result<()> {
        let phase = self.phase;
        self.send_tagged(to, msg_type, phase, payload)
    }

    pub fn send_tagged(
        &mut self,
        to: PartyId,
        msg_type: MsgType,
        phase: Phase,
        payload: Vec<u8>,
    ) -> Result<()> {
        let seq = self.next_out.entry(to).or_insert(0);
        let msg = Message {
            session_id: self.session_id,
            msg_type,
            sender: self.me,
            receiver: to,
            phase,
            sequence: *seq,
            payload,
        };
        *seq += 1;
        let stats = self.stats.phase_mut(phase);
        stats.bytes_out += msg.payload.len() as u64;
        stats.messages_out += 1;
        let frame = msg.encode();
        self.transcript.update(&frame);
        let link = self
            .links
            .get_mut(&to)
            .ok_or_else(|| MpcError::Transport(format!("no link to {to:?}")))?;
        link.send(frame)
    }

    pub fn recv(&mut self, from: PartyId, msg_type: MsgType) -> Result<Vec<u8>> {
        let (got, payload) = self.recv_any(from)?;
        if got != msg_type {
            return Err(MpcError::protocol(format!(
                "expected {msg_type:?} from {from:?}, got {got:?}"
            )));
        }
        Ok(payload)
    }

    /// Receives the next frame from `from` whatever its type.
    pub fn recv_any(&mut self, from: PartyId) -> Result<(MsgType, Vec<u8>)> {
        let link = self
            .links
            .get_mut(&from)
            .ok_or_else(|| MpcError::Transport(format!("no link from {from:?}")))?;
        let frame = link.recv()?;
        self.transcript.update(&frame);
        let msg = Message::decode(&frame)?;
        let expected_seq = self.next_in.entry(from).or_insert(0);
        if msg.session_id != self.session_id
            || msg.sender != from
            || msg.receiver != self.me
            || msg.sequence != *expected_seq
        {
            return Err(MpcError::Transport(format!(
                "unexpected frame from {:?} to {:?} seq {} (session {:#x}), wanted seq {} from {from:?}",
                msg.sender, msg.receiver, msg.sequence, msg.session_id, expected_seq
            )));
        }
        *expected_seq += 1;
        let stats = self.stats.phase_mut(msg.phase);
        stats.bytes_in += msg.payload.len() as u64;
        stats.messages_in += 1;
        let msg_type = msg.msg_type;
        let payload = if let Some(cap) = self.capture.as_mut() {
            let payload = msg.payload.clone();
            cap.push(msg);
            payload
        } else {
            msg.payload
        };
        Ok((msg_type, payload))
    }
}

/// Fully connected in-process network of `party_count` endpoints, plus a
/// dealer endpoint linked to every party when `dealer_bound` is given (the
/// bound caps frames buffered from the dealer to each party).
pub fn in_process_mesh(
    party_count: usize,
    session_id: u64,
    dealer_bound: Option<usize>,
) -> (Vec<Endpoint>, Option<Endpoint>) {
    let mut eps: Vec<Endpoint> = (0..party_count)
        .map(|i| Endpoint::new(PartyId(i as u8), session_id))
        .collect();
    for a in 0..party_count {
        for b in a + 1..party_count {
            let (la, lb) = link_pair(None);
            eps[a].connect(PartyId(b as u8), Box::new(la));
            eps[b].connect(PartyId(a as u8), Box::new(lb));
        }
    }
    let dealer = dealer_bound.map(|bound| {
        let mut d = Endpoint::new(PartyId::DEALER, session_id);
        for (i, ep) in eps.iter_mut().enumerate() {
            let (ld, lp) = link_pair(Some(bound));
            d.connect(PartyId(i as u8), Box::new(ld));
            ep.connect(PartyId::DEALER, Box::new(lp));
        }
        d
    });
    (eps, dealer)
}
